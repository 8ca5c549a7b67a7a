//! Labeled sparse corpora: parsing, tf-idf weighting, information-gain
//! feature selection and seeded triplet sampling.
//!
//! Corpus text format:
//!
//! ```text
//! # comment
//! dim 10
//! doc1 sports 3:1.5 7:2
//! doc2 politics 0:1 9:4e-1
//! ```
//!
//! Feature indices are 0-based and strictly increasing within a line.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagonal::Triplet;
use crate::error::{Error, Result};
use crate::linalg::SparseVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: String,
    pub features: SparseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    dim: usize,
    examples: Vec<Example>,
}

impl LabeledCorpus {
    pub fn new(dim: usize, examples: Vec<Example>) -> Result<Self> {
        let mut seen = HashSet::new();
        for ex in &examples {
            if ex.features.dim() != dim {
                return Err(Error::dims("corpus example", dim, ex.features.dim()));
            }
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate example id '{}'", ex.id)));
            }
        }
        Ok(LabeledCorpus { dim, examples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Labels in order of first appearance.
    pub fn labels(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.examples.iter().filter(|e| seen.insert(e.label.as_str())).map(|e| e.label.as_str()).collect()
    }

    pub fn parse<R: BufRead>(input: R) -> Result<Self> {
        let mut dim: Option<usize> = None;
        let mut examples = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { line: lineno, message };
            let mut fields = trimmed.split_whitespace();
            let Some(d) = dim else {
                let (Some("dim"), Some(value), None) = (fields.next(), fields.next(), fields.next()) else {
                    return Err(err("expected header 'dim <d>'".into()));
                };
                let d: usize = value.parse().map_err(|_| err(format!("invalid dimension '{value}'")))?;
                if d == 0 {
                    return Err(err("dimension must be positive".into()));
                }
                dim = Some(d);
                continue;
            };
            let id = fields.next().expect("non-empty line has a first field");
            let label = fields.next().ok_or_else(|| err(format!("example '{id}' has no label")))?;
            let mut entries = Vec::new();
            for tok in fields {
                let (idx, val) =
                    tok.split_once(':').ok_or_else(|| err(format!("expected <index>:<value>, found '{tok}'")))?;
                let idx: usize = idx.parse().map_err(|_| err(format!("invalid feature index '{idx}'")))?;
                let val: f64 = val.parse().map_err(|_| err(format!("invalid feature value '{val}'")))?;
                entries.push((idx, val));
            }
            let features = SparseVector::new(d, entries).map_err(|e| err(e.to_string()))?;
            if !seen.insert(id.to_string()) {
                return Err(err(format!("duplicate example id '{id}'")));
            }
            examples.push(Example { id: id.to_string(), label: label.to_string(), features });
        }
        Ok(LabeledCorpus { dim: dim.unwrap_or(0), examples })
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        LabeledCorpus::parse(text.as_bytes())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("dim {}\n", self.dim);
        for ex in &self.examples {
            s.push_str(&ex.id);
            s.push(' ');
            s.push_str(&ex.label);
            for (i, v) in ex.features.iter() {
                // `{}` on f64 prints the shortest representation that parses back exactly
                write!(s, " {i}:{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// `count · ln(N/df)` followed by per-document ℓ2 normalization. Terms that
/// occur in every document get weight zero and leave the support.
pub fn tfidf_transform(corpus: &LabeledCorpus) -> LabeledCorpus {
    let n_docs = corpus.len() as f64;
    let mut df = vec![0usize; corpus.dim];
    for ex in &corpus.examples {
        for &i in ex.features.indices() {
            df[i] += 1;
        }
    }
    let examples = corpus
        .examples
        .iter()
        .map(|ex| {
            let weighted: Vec<(usize, f64)> =
                ex.features.iter().map(|(i, count)| (i, count * (n_docs / df[i] as f64).ln())).collect();
            let norm = weighted.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            let scaled = weighted.into_iter().map(|(i, v)| (i, if norm > 0.0 { v / norm } else { 0.0 })).collect();
            Example {
                id: ex.id.clone(),
                label: ex.label.clone(),
                features: SparseVector::new(corpus.dim, scaled).expect("support unchanged"),
            }
        })
        .collect();
    LabeledCorpus { dim: corpus.dim, examples }
}

fn entropy<I: IntoIterator<Item = usize>>(counts: I, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Class-entropy reduction from observing each feature's presence, in nats.
pub fn information_gain(corpus: &LabeledCorpus) -> Vec<f64> {
    let labels: BTreeMap<&str, usize> = corpus.labels().into_iter().enumerate().map(|(i, l)| (l, i)).collect();
    let n_classes = labels.len();
    let n_docs = corpus.len();
    let mut class_totals = vec![0usize; n_classes];
    // present[t][c]: documents of class c containing t
    let mut present = vec![vec![0usize; n_classes]; corpus.dim];
    for ex in &corpus.examples {
        let c = labels[ex.label.as_str()];
        class_totals[c] += 1;
        for &t in ex.features.indices() {
            present[t][c] += 1;
        }
    }
    let h_c = entropy(class_totals.iter().copied(), n_docs);
    present
        .iter()
        .map(|with| {
            let n_with: usize = with.iter().sum();
            let n_without = n_docs - n_with;
            let without = with.iter().zip(&class_totals).map(|(w, t)| t - w);
            let h_with = entropy(with.iter().copied(), n_with);
            let h_without = entropy(without, n_without);
            let conditional = (n_with as f64 * h_with + n_without as f64 * h_without) / n_docs as f64;
            (h_c - conditional).max(0.0)
        })
        .collect()
}

/// Which original feature each selected feature came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    pub original_dim: usize,
    /// `kept[new] = old`, increasing.
    pub kept: Vec<usize>,
}

impl IndexMap {
    pub fn identity(dim: usize) -> Self {
        IndexMap { original_dim: dim, kept: (0..dim).collect() }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# new old\noriginal_dim {}\n", self.original_dim);
        for (new, old) in self.kept.iter().enumerate() {
            writeln!(s, "{new} {old}").unwrap();
        }
        s
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut original_dim = None;
        let mut kept = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |message: &str| Error::Parse { line: i + 1, message: message.to_string() };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut f = line.split_whitespace();
            match (f.next(), f.next(), f.next()) {
                (Some("original_dim"), Some(d), None) if original_dim.is_none() => {
                    original_dim = Some(d.parse().map_err(|_| err("invalid original_dim"))?);
                }
                (Some(new), Some(old), None) if original_dim.is_some() => {
                    let new: usize = new.parse().map_err(|_| err("invalid new index"))?;
                    let old: usize = old.parse().map_err(|_| err("invalid old index"))?;
                    if new != kept.len() || kept.last().is_some_and(|&l| old <= l) {
                        return Err(err("index map entries out of order"));
                    }
                    kept.push(old);
                }
                _ => return Err(err("expected 'original_dim <d>' then '<new> <old>' lines")),
            }
        }
        let original_dim =
            original_dim.ok_or_else(|| Error::Parse { line: 1, message: "missing original_dim".into() })?;
        if kept.last().is_some_and(|&l| l >= original_dim) {
            return Err(Error::InvalidArgument("index map exceeds original dimension".into()));
        }
        Ok(IndexMap { original_dim, kept })
    }

    /// Projects a corpus onto the kept features, renumbering them densely.
    pub fn apply(&self, corpus: &LabeledCorpus) -> Result<LabeledCorpus> {
        if corpus.dim != self.original_dim {
            return Err(Error::dims("index map source", self.original_dim, corpus.dim));
        }
        if self.kept.is_empty() {
            return Err(Error::InvalidArgument("index map keeps no features".into()));
        }
        let mut new_of = vec![usize::MAX; corpus.dim];
        for (new, &old) in self.kept.iter().enumerate() {
            new_of[old] = new;
        }
        let dim = self.kept.len();
        let examples = corpus
            .examples
            .iter()
            .map(|ex| {
                let entries =
                    ex.features.iter().filter(|(i, _)| new_of[*i] != usize::MAX).map(|(i, v)| (new_of[i], v)).collect();
                Ok(Example { id: ex.id.clone(), label: ex.label.clone(), features: SparseVector::new(dim, entries)? })
            })
            .collect::<Result<_>>()?;
        Ok(LabeledCorpus { dim, examples })
    }
}

/// Keeps the `k` features with the highest information gain (ties go to the
/// lower index), preserving their original order.
pub fn infogain_select(corpus: &LabeledCorpus, k: usize) -> Result<(LabeledCorpus, IndexMap)> {
    if k == 0 {
        return Err(Error::InvalidArgument("number of selected features must be positive".into()));
    }
    if k > corpus.dim {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} features from a {}-dimensional corpus",
            corpus.dim
        )));
    }
    let ig = information_gain(corpus);
    let mut order: Vec<usize> = (0..corpus.dim).collect();
    order.sort_by(|&a, &b| ig[b].total_cmp(&ig[a]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    let map = IndexMap { original_dim: corpus.dim, kept };
    let selected = map.apply(corpus)?;
    Ok((selected, map))
}

/// Maximum query redraws before giving up on a round.
pub const MAX_QUERY_RETRIES: usize = 1000;

/// Seeded stream of triplets drawn from class labels: a uniform query, a
/// uniform same-label object (never the query itself when both sides share a
/// corpus) and a uniform different-label object. Each round draws the query,
/// then the positive, then the negative, from one ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct TripletSampler<'a> {
    queries: &'a LabeledCorpus,
    objects: &'a LabeledCorpus,
    shared: bool,
    /// object indices grouped by label
    order: Vec<usize>,
    /// label → (start, end) range in `order`
    ranges: BTreeMap<&'a str, (usize, usize)>,
    rng: ChaCha8Rng,
}

impl<'a> TripletSampler<'a> {
    /// Queries and objects from the same corpus.
    pub fn new(corpus: &'a LabeledCorpus, seed: u64) -> Result<Self> {
        TripletSampler::build(corpus, corpus, true, seed)
    }

    /// Queries and objects from different corpora sharing a label set.
    pub fn cross(queries: &'a LabeledCorpus, objects: &'a LabeledCorpus, seed: u64) -> Result<Self> {
        TripletSampler::build(queries, objects, false, seed)
    }

    fn build(queries: &'a LabeledCorpus, objects: &'a LabeledCorpus, shared: bool, seed: u64) -> Result<Self> {
        let mut order: Vec<usize> = (0..objects.len()).collect();
        order.sort_by(|&a, &b| objects.examples[a].label.cmp(&objects.examples[b].label).then(a.cmp(&b)));
        let mut ranges = BTreeMap::new();
        let mut start = 0;
        while start < order.len() {
            let label = objects.examples[order[start]].label.as_str();
            let mut end = start;
            while end < order.len() && objects.examples[order[end]].label == label {
                end += 1;
            }
            ranges.insert(label, (start, end));
            start = end;
        }
        let sampler = TripletSampler { queries, objects, shared, order, ranges, rng: ChaCha8Rng::seed_from_u64(seed) };
        if !(0..queries.len()).any(|i| sampler.usable_query(i)) {
            return Err(Error::InvalidArgument("no query has both a same-label and a different-label object".into()));
        }
        Ok(sampler)
    }

    fn usable_query(&self, i: usize) -> bool {
        let label = self.queries.examples[i].label.as_str();
        let same = self.ranges.get(label).map_or(0, |(s, e)| e - s);
        let positives = if self.shared { same.saturating_sub(1) } else { same };
        positives > 0 && self.objects.len() > same
    }

    pub fn sample(&mut self) -> Result<Triplet> {
        for _ in 0..MAX_QUERY_RETRIES {
            let qi = self.rng.random_range(0..self.queries.len());
            if !self.usable_query(qi) {
                continue;
            }
            let q = &self.queries.examples[qi];
            let (start, end) = self.ranges[q.label.as_str()];
            let pos = if self.shared {
                // skip the query's own slot in its label group
                let own = start + self.order[start..end].iter().position(|&o| o == qi).expect("query is in its group");
                let j = start + self.rng.random_range(0..end - start - 1);
                self.order[if j >= own { j + 1 } else { j }]
            } else {
                self.order[self.rng.random_range(start..end)]
            };
            let j = self.rng.random_range(0..self.objects.len() - (end - start));
            let neg = self.order[if j >= start { j + (end - start) } else { j }];
            return Ok(Triplet::new(
                q.features.clone(),
                self.objects.examples[pos].features.clone(),
                self.objects.examples[neg].features.clone(),
            ));
        }
        Err(Error::InvalidArgument(format!("no usable query found after {MAX_QUERY_RETRIES} draws")))
    }

    /// The next `count` triplets.
    pub fn take_triplets(&mut self, count: usize) -> Result<Vec<Triplet>> {
        (0..count).map(|_| self.sample()).collect()
    }
}

impl Iterator for TripletSampler<'_> {
    type Item = Result<Triplet>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.sample())
    }
}
