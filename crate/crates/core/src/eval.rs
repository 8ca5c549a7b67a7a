//! Ranking evaluation: precision@k, mean average precision and
//! precision-vs-iteration traces.
//!
//! Every example of an evaluation corpus acts once as a query; the other
//! examples are ranked by `qᵀWp` and the ones sharing the query's label are
//! relevant. Ties in score are broken by ascending candidate position.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::data::{LabeledCorpus, TripletSampler};
use crate::error::{Error, Result};
use crate::learner::Learner;
use crate::linalg::{bilinear_score, DenseMatrix, SparseVector};

pub trait Scorer {
    fn score(&self, q: &SparseVector, p: &SparseVector) -> Result<f64>;
}

impl Scorer for DenseMatrix {
    fn score(&self, q: &SparseVector, p: &SparseVector) -> Result<f64> {
        bilinear_score(q, self, p)
    }
}

/// Candidate ids sorted by descending score, ties by ascending id.
pub fn rank_objects<S: Scorer + ?Sized>(
    scorer: &S,
    q: &SparseVector,
    candidates: &[(usize, &SparseVector)],
) -> Result<Vec<usize>> {
    let mut scored = candidates.iter().map(|&(id, p)| Ok((scorer.score(q, p)?, id))).collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

pub fn precision_at_k(ranking: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<f64> {
    if k == 0 || k > ranking.len() {
        return Err(Error::InvalidArgument(format!("precision cutoff {k} outside 1..={}", ranking.len())));
    }
    let hits = ranking[..k].iter().filter(|id| relevant.contains(id)).count();
    Ok(hits as f64 / k as f64)
}

/// Mean of the precision at each relevant item's rank; `None` without relevant items.
pub fn average_precision(ranking: &[usize], relevant: &HashSet<usize>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, id) in ranking.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

/// mAP over queries, plus the number of queries skipped for having no relevant items.
pub fn mean_average_precision(queries: &[(Vec<usize>, HashSet<usize>)]) -> (f64, usize) {
    let aps: Vec<f64> = queries.iter().filter_map(|(ranking, relevant)| average_precision(ranking, relevant)).collect();
    let skipped = queries.len() - aps.len();
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    (map, skipped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k_values: Vec<usize>,
    pub precision_at_k: Vec<f64>,
    pub map: f64,
    /// Queries that contributed to the averages.
    pub queries: usize,
    /// Queries without any relevant candidate.
    pub skipped_queries: usize,
}

impl EvalReport {
    /// `k,precision` rows followed by a `mAP,<value>` footer.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,precision\n");
        for (k, p) in self.k_values.iter().zip(&self.precision_at_k) {
            writeln!(s, "{k},{p:.6}").unwrap();
        }
        writeln!(s, "mAP,{:.6}", self.map).unwrap();
        s
    }

    pub fn precision(&self, k: usize) -> Option<f64> {
        self.k_values.iter().position(|&kk| kk == k).map(|i| self.precision_at_k[i])
    }
}

/// Leave-one-out ranking evaluation over `corpus`.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, corpus: &LabeledCorpus, k_values: &[usize]) -> Result<EvalReport> {
    let examples = corpus.examples();
    let n_candidates = examples.len().saturating_sub(1);
    if let Some(&bad) = k_values.iter().find(|&&k| k == 0 || k > n_candidates) {
        return Err(Error::InvalidArgument(format!("precision cutoff {bad} outside 1..={n_candidates}")));
    }
    let mut sums = vec![0.0; k_values.len()];
    let mut per_query = Vec::with_capacity(examples.len());
    for (qi, query) in examples.iter().enumerate() {
        let candidates: Vec<(usize, &SparseVector)> =
            examples.iter().enumerate().filter(|(i, _)| *i != qi).map(|(i, e)| (i, &e.features)).collect();
        let relevant: HashSet<usize> =
            candidates.iter().filter(|(i, _)| examples[*i].label == query.label).map(|(i, _)| *i).collect();
        if relevant.is_empty() {
            per_query.push((Vec::new(), relevant));
            continue;
        }
        let ranking = rank_objects(scorer, &query.features, &candidates)?;
        for (sum, &k) in sums.iter_mut().zip(k_values) {
            *sum += precision_at_k(&ranking, &relevant, k)?;
        }
        per_query.push((ranking, relevant));
    }
    let (map, skipped) = mean_average_precision(&per_query);
    let queries = per_query.len() - skipped;
    let precision_at_k = sums.into_iter().map(|s| if queries > 0 { s / queries as f64 } else { 0.0 }).collect();
    Ok(EvalReport { k_values: k_values.to_vec(), precision_at_k, map, queries, skipped_queries: skipped })
}

/// Trains `learner` on `sampler` and records precision@k on `eval` at each
/// checkpoint (in completed training rounds).
pub fn precision_trace(
    learner: &mut Learner,
    sampler: &mut TripletSampler<'_>,
    eval: &LabeledCorpus,
    schedule: &[usize],
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("checkpoint schedule must be strictly increasing".into()));
    }
    let mut done = 0;
    let mut out = Vec::with_capacity(schedule.len());
    for &checkpoint in schedule {
        while done < checkpoint {
            let t = sampler.sample()?;
            learner.step(&t).map_err(|e| e.at_round(done + 1))?;
            done += 1;
        }
        let report = evaluate(learner.weights().as_ref(), eval, &[k])?;
        out.push((checkpoint, report.precision_at_k[0]));
    }
    Ok(out)
}

/// `iteration,k,precision` rows.
pub fn trace_to_csv(trace: &[(usize, f64)], k: usize) -> String {
    let mut s = String::from("iteration,k,precision\n");
    for (it, p) in trace {
        writeln!(s, "{it},{k},{p:.6}").unwrap();
    }
    s
}
