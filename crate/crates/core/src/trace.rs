//! Per-round training records and their line-delimited file form.
//!
//! A trace file is a sequence of JSON objects, one per line: a `header`,
//! one `step` per training round in stream order, and a closing `final`
//! record with the covariance state the bound checkers need. Lines are
//! written as rounds complete, so a trace never has to be buffered.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseVector};

/// Quadratic forms of a factored round, before and after the covariance update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadForms {
    /// `qᵀΛ_{i−1}q`
    pub q_lambda_pre: f64,
    /// `pᵀΩ_{i−1}p`
    pub p_omega_pre: f64,
    /// `qᵀΛ_i q`
    pub q_lambda_post: f64,
    /// `pᵀΩ_i p`
    pub p_omega_post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub q: SparseVector,
    /// Object difference `p⁺ − p⁻`.
    pub p: SparseVector,
    /// `qᵀW_{i−1}p`
    pub margin: f64,
    pub hinge: f64,
    /// Prediction mistake: `margin ≤ 0`.
    pub mistake: bool,
    pub updated: bool,
    /// Shared denominator of the diagonal update, when one was applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denominator: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forms: Option<QuadForms>,
}

impl StepRecord {
    pub(crate) fn new(q: SparseVector, p: SparseVector, margin: f64, updated: bool) -> Self {
        StepRecord {
            q,
            p,
            margin,
            hinge: (1.0 - margin).max(0.0),
            mistake: margin <= 0.0,
            updated,
            denominator: None,
            forms: None,
        }
    }

    /// Round belongs to the mistake set `M`.
    pub fn in_m(&self) -> bool {
        self.mistake
    }

    /// Round belongs to `U`: updated without a mistake.
    pub fn in_u(&self) -> bool {
        self.updated && !self.mistake
    }
}

/// Covariance state at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalState {
    Diagonal {
        #[serde(rename = "Sigma")]
        sigma: DenseMatrix,
    },
    Factored {
        #[serde(rename = "Omega")]
        omega: DenseMatrix,
        #[serde(rename = "Lambda")]
        lambda: DenseMatrix,
    },
    None,
}

/// Identifies the run a trace came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    /// Learner tag, e.g. `d-aroma` or `f-aroma-analysis`.
    pub algo: String,
    pub m: usize,
    pub n: usize,
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub records: Vec<StepRecord>,
    pub final_state: FinalState,
}

impl RunTrace {
    pub fn new(header: TraceHeader) -> Self {
        RunTrace { header, records: Vec::new(), final_state: FinalState::None }
    }

    pub fn mistakes(&self) -> usize {
        self.records.iter().filter(|r| r.in_m()).count()
    }

    pub fn margin_updates(&self) -> usize {
        self.records.iter().filter(|r| r.in_u()).count()
    }

    pub fn updates(&self) -> usize {
        self.records.iter().filter(|r| r.updated).count()
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = TraceWriter::new(out, &self.header)?;
        for record in &self.records {
            writer.push(record)?;
        }
        writer.finish(&self.final_state)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<RunTrace> {
        let mut trace: Option<RunTrace> = None;
        let mut finished = false;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TraceLine =
                serde_json::from_str(&line).map_err(|e| Error::Trace(format!("line {}: {e}", lineno + 1)))?;
            match (entry, trace.as_mut()) {
                (TraceLine::Header(h), None) => trace = Some(RunTrace::new(h)),
                (TraceLine::Header(_), Some(_)) => {
                    return Err(Error::Trace(format!("line {}: duplicate header", lineno + 1)))
                }
                (_, None) => return Err(Error::Trace("trace does not start with a header".into())),
                (_, Some(_)) if finished => {
                    return Err(Error::Trace(format!("line {}: record after final state", lineno + 1)))
                }
                (TraceLine::Step { round, record }, Some(t)) => {
                    if round != t.records.len() + 1 {
                        return Err(Error::Trace(format!(
                            "line {}: expected round {}, found {round}",
                            lineno + 1,
                            t.records.len() + 1
                        )));
                    }
                    t.records.push(record);
                }
                (TraceLine::Final(state), Some(t)) => {
                    t.final_state = state;
                    finished = true;
                }
            }
        }
        let trace = trace.ok_or_else(|| Error::Trace("empty trace".into()))?;
        if !finished {
            return Err(Error::Trace("trace has no final state record".into()));
        }
        Ok(trace)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Step {
        round: usize,
        #[serde(flatten)]
        record: StepRecord,
    },
    Final(FinalState),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLineRef<'a> {
    Header(&'a TraceHeader),
    Step {
        round: usize,
        #[serde(flatten)]
        record: &'a StepRecord,
    },
    Final(&'a FinalState),
}

/// Streams trace lines to `out` as rounds complete.
pub struct TraceWriter<W: Write> {
    out: W,
    round: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, header: &TraceHeader) -> Result<Self> {
        write_line(&mut out, &TraceLineRef::Header(header))?;
        Ok(TraceWriter { out, round: 0 })
    }

    pub fn push(&mut self, record: &StepRecord) -> Result<()> {
        self.round += 1;
        write_line(&mut self.out, &TraceLineRef::Step { round: self.round, record })
    }

    pub fn finish(mut self, state: &FinalState) -> Result<W> {
        write_line(&mut self.out, &TraceLineRef::Final(state))?;
        self.out.flush()?;
        Ok(self.out)
    }
}

fn write_line<W: Write>(out: &mut W, line: &TraceLineRef<'_>) -> Result<()> {
    serde_json::to_writer(&mut *out, line)?;
    out.write_all(b"\n")?;
    Ok(())
}
