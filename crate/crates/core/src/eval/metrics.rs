//! Ranking metrics: NDCG@k (exponential gain), P@1, MRR@k and Hit@k.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::corpus::{Qrels, Run};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub precision_at_1: f64,
    /// Keyed by cutoff.
    pub ndcg: BTreeMap<usize, f64>,
    pub mrr: BTreeMap<usize, f64>,
    pub hit: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    pub evaluated: usize,
    /// Run queries without any positive judgment.
    pub excluded: usize,
    /// Judged queries missing from the run; they score 0.
    pub missing: usize,
    pub precision_at_1: f64,
    pub ndcg: BTreeMap<usize, f64>,
    pub mrr: BTreeMap<usize, f64>,
    pub hit: BTreeMap<usize, f64>,
    pub per_query: Vec<QueryMetrics>,
}

fn gain(rel: u32) -> f64 {
    2f64.powi(rel as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// NDCG@k of one ranking; `grades` maps doc id to relevance.
pub fn ndcg_at_k(ranking: &[&str], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(grades.get(*d).copied().unwrap_or(0)) * discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &r)| gain(r) * discount(i + 1)).sum();
    if idcg > 0.0 { dcg / idcg } else { 0.0 }
}

fn first_relevant(ranking: &[&str], grades: &BTreeMap<String, u32>) -> Option<usize> {
    ranking.iter().position(|d| grades.get(*d).is_some_and(|&r| r > 0)).map(|i| i + 1)
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 { 0.0 } else { values.sum::<f64>() / n as f64 }
}

/// Scores `run` against `qrels` at every cutoff in `ks`. Queries judged in
/// `qrels` but absent from the run count as complete misses.
pub fn evaluate(run: &Run, qrels: &Qrels, ks: &[usize]) -> Result<MetricReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(invalid("cutoffs must be non-empty and at least 1"));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let empty = Vec::new();
    let mut per_query = Vec::new();
    let mut excluded = run.0.keys().filter(|q| !qrels.get(q).is_some_and(|g| g.values().any(|&r| r > 0))).count();
    let mut missing = 0;
    for (qid, grades) in &qrels.0 {
        if !grades.values().any(|&r| r > 0) {
            if !run.0.contains_key(qid) {
                excluded += 1;
            }
            continue;
        }
        let hits = run.0.get(qid).unwrap_or_else(|| {
            missing += 1;
            &empty
        });
        let ranking: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        let first = first_relevant(&ranking, grades);
        let mut m = QueryMetrics {
            query_id: qid.clone(),
            precision_at_1: if first == Some(1) { 1.0 } else { 0.0 },
            ndcg: BTreeMap::new(),
            mrr: BTreeMap::new(),
            hit: BTreeMap::new(),
        };
        for &k in &ks {
            m.ndcg.insert(k, ndcg_at_k(&ranking, grades, k));
            let within = first.filter(|&r| r <= k);
            m.mrr.insert(k, within.map_or(0.0, |r| 1.0 / r as f64));
            m.hit.insert(k, if within.is_some() { 1.0 } else { 0.0 });
        }
        per_query.push(m);
    }
    let n = per_query.len();
    let avg = |f: &dyn Fn(&QueryMetrics) -> f64| mean(per_query.iter().map(f), n);
    let by_k = |f: &dyn Fn(&QueryMetrics, usize) -> f64| -> BTreeMap<usize, f64> {
        ks.iter().map(|&k| (k, avg(&|m| f(m, k)))).collect()
    };
    Ok(MetricReport {
        evaluated: n,
        excluded,
        missing,
        precision_at_1: avg(&|m| m.precision_at_1),
        ndcg: by_k(&|m, k| m.ndcg[&k]),
        mrr: by_k(&|m, k| m.mrr[&k]),
        hit: by_k(&|m, k| m.hit[&k]),
        ks,
        per_query,
    })
}

impl MetricReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Flat `metric,value` CSV of the aggregate scores.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "evaluated,{}", self.evaluated)?;
        writeln!(w, "excluded,{}", self.excluded)?;
        writeln!(w, "missing,{}", self.missing)?;
        writeln!(w, "p@1,{}", self.precision_at_1)?;
        for (name, values) in [("ndcg", &self.ndcg), ("mrr", &self.mrr), ("hit", &self.hit)] {
            for (k, v) in values {
                writeln!(w, "{name}@{k},{v}")?;
            }
        }
        Ok(())
    }
}
