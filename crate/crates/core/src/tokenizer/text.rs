//! Word splitting and the heuristic sentence splitter.

/// Byte spans of the words in `text`.
///
/// Runs of alphanumeric characters (and `_`) form one word; every other
/// non-whitespace character is a word of its own.
pub(crate) fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() || c == '_' {
            if start.is_none() {
                start = Some(i);
            }
            continue;
        }
        if let Some(s) = start.take() {
            spans.push((s, i));
        }
        if !c.is_whitespace() {
            spans.push((i, i + c.len_utf8()));
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Lowercased words of `text`, in order.
pub fn split_words(text: &str) -> Vec<String> {
    word_spans(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_lowercase())
        .collect()
}

/// Word positions (exclusive end indices) at which sentences end.
///
/// A sentence ends after `.`, `!` or `?` when the delimiter is followed by
/// whitespace or the end of the text. Runs of delimiters collapse into one
/// boundary, and the end of the text is always a boundary.
pub fn sentence_boundaries(text: &str) -> Vec<usize> {
    let spans = word_spans(text);
    let mut out: Vec<usize> = Vec::new();
    for (i, &(s, e)) in spans.iter().enumerate() {
        let tok = &text[s..e];
        if !matches!(tok, "." | "!" | "?") {
            continue;
        }
        let followed_ok = text[e..].chars().next().is_none_or(char::is_whitespace);
        if !followed_ok {
            continue;
        }
        match out.last_mut() {
            Some(last) if *last == i => *last = i + 1,
            _ => out.push(i + 1),
        }
    }
    if out.last() != Some(&spans.len()) {
        out.push(spans.len());
    }
    out
}
