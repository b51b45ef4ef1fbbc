//! Corpora, relevance judgments and ranked runs, with their file formats.
//!
//! * records: JSON lines `{"id": "...", "text": "..."}` (queries use the same shape)
//! * qrels: whitespace separated `qid docid rel`, or TREC style `qid 0 docid rel`
//! * runs: TREC style `qid Q0 docid rank score tag`

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
}

/// Documents (or queries) with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<Record>,
    pub embeddings: Option<EmbeddingMatrix>,
}

impl Corpus {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Format(format!("duplicate id {:?}", r.id)));
            }
        }
        Ok(Self { records, embeddings: None })
    }

    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        Self::new(pairs.into_iter().map(|(id, text)| Record { id: id.into(), text: text.into() }).collect())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
            records.push(rec);
        }
        Self::new(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.text.as_str()).collect()
    }
}

/// Graded relevance judgments: query id -> doc id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels(pub BTreeMap<String, BTreeMap<String, u32>>);

impl Qrels {
    pub fn insert(&mut self, qid: impl Into<String>, docid: impl Into<String>, rel: u32) {
        self.0.entry(qid.into()).or_default().insert(docid.into(), rel);
    }

    pub fn get(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.0.get(qid)
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut q = Self::default();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            let (qid, docid, rel) = match cols.as_slice() {
                [] => continue,
                [q, d, r] | [q, _, d, r] => (*q, *d, *r),
                _ => return Err(Error::Format(format!("qrels line {}: expected 3 or 4 columns", n + 1))),
            };
            let rel: u32 = rel
                .parse()
                .map_err(|_| Error::Format(format!("qrels line {}: bad relevance {rel:?}", n + 1)))?;
            q.insert(qid, docid, rel);
        }
        Ok(q)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Ranked results per query, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run(pub BTreeMap<String, Vec<Hit>>);

impl Run {
    pub fn write_trec<W: Write>(&self, mut w: W, tag: &str) -> Result<()> {
        for (qid, hits) in &self.0 {
            for (rank, h) in hits.iter().enumerate() {
                writeln!(w, "{qid} Q0 {} {} {:.9} {tag}", h.doc_id, rank + 1, h.score)?;
            }
        }
        Ok(())
    }

    /// Reads a TREC run; hits are ordered by the rank column.
    pub fn read_trec<R: BufRead>(r: R) -> Result<Self> {
        let mut ranked: BTreeMap<String, Vec<(usize, Hit)>> = BTreeMap::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            let [qid, _, doc, rank, score, ..] = cols.as_slice() else {
                return Err(Error::Format(format!("run line {}: expected at least 5 columns", n + 1)));
            };
            let bad = |what: &str| Error::Format(format!("run line {}: bad {what}", n + 1));
            let rank: usize = rank.parse().map_err(|_| bad("rank"))?;
            let score: f64 = score.parse().map_err(|_| bad("score"))?;
            ranked.entry(qid.to_string()).or_default().push((rank, Hit { doc_id: doc.to_string(), score }));
        }
        Ok(Run(ranked
            .into_iter()
            .map(|(q, mut v)| {
                v.sort_by_key(|(r, _)| *r);
                (q, v.into_iter().map(|(_, h)| h).collect())
            })
            .collect()))
    }

    pub fn load_trec(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_trec(BufReader::new(File::open(path)?))
    }
}
