//! Batch experiments: grids of tracker cells, seeded trials, audits and reports.

use crate::election::{audit_candidate, AuditMethod, OracleMode, RuleId, Tally, Verdict};
use crate::harness::{derive_seed, AuditRecord, HarnessError, Transcript};
use crate::ratio::Ratio;
use crate::trackers::{run_tracker, Technique, TrackerConfig, TrackerError};
use crate::workload::{generate, to_events, AssignmentPolicy, GeneratorKind, GeneratorSpec, WorkloadError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("transcript lacks {0} in its header")]
    Header(&'static str),
}

/// When the center is asked for its winner.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum QuerySchedule {
    /// Every power of two, every phase end, and the final time.
    #[default]
    Default,
    None,
    Every { step: u64 },
    At { times: Vec<u64> },
}

impl QuerySchedule {
    pub fn times(&self, n: u64, phase_ends: &[u64]) -> Vec<u64> {
        let mut t: Vec<u64> = match self {
            QuerySchedule::Default => {
                let mut t: Vec<u64> = (0..64).map(|i| 1u64 << i).take_while(|&p| p <= n).collect();
                t.extend_from_slice(phase_ends);
                if n > 0 {
                    t.push(n);
                }
                t
            }
            QuerySchedule::None => Vec::new(),
            QuerySchedule::Every { step } => (1..=n / (*step).max(1)).map(|i| i * (*step).max(1)).collect(),
            QuerySchedule::At { times } => times.iter().copied().filter(|&x| x <= n).collect(),
        };
        t.sort_unstable();
        t.dedup();
        t
    }
}

/// Which transcripts a run writes to disk.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptPolicy {
    None,
    /// Trial 0 of every cell.
    #[default]
    First,
    All,
}

fn round_robin() -> AssignmentPolicy {
    AssignmentPolicy::RoundRobin
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub tracker: TrackerConfig,
    pub workload: GeneratorSpec,
    #[serde(default = "round_robin")]
    pub assignment: AssignmentPolicy,
    #[serde(default)]
    pub queries: QuerySchedule,
}

/// Cartesian product of parameter lists, expanded in field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rules: Vec<RuleId>,
    pub techniques: Vec<Technique>,
    pub eps: Vec<Ratio>,
    #[serde(default)]
    pub delta: Option<Ratio>,
    pub k: Vec<usize>,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    #[serde(default = "uniform")]
    pub workload: GeneratorKind,
    #[serde(default = "round_robin")]
    pub assignment: AssignmentPolicy,
    #[serde(default)]
    pub queries: QuerySchedule,
}

fn uniform() -> GeneratorKind {
    GeneratorKind::UniformImpartial
}

impl Grid {
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for rule in &self.rules {
            for &technique in &self.techniques {
                for &eps in &self.eps {
                    for &k in &self.k {
                        for &m in &self.m {
                            for &n in &self.n {
                                let mut tracker = TrackerConfig::new(rule.clone(), technique, eps, k, m);
                                tracker.delta = self.delta;
                                let workload = GeneratorSpec {
                                    kind: self.workload.clone(),
                                    n,
                                    m,
                                    ballot: rule.ballot_kind(),
                                    approval_size: rule.approval_size(),
                                    seed: 0,
                                };
                                out.push(Cell {
                                    tracker,
                                    workload,
                                    assignment: self.assignment.clone(),
                                    queries: self.queries.clone(),
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub oracle: OracleMode,
    #[serde(default)]
    pub cells: Vec<Cell>,
    #[serde(default)]
    pub grid: Option<Grid>,
    #[serde(default)]
    pub transcripts: TranscriptPolicy,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Read { path: path.to_path_buf(), source })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        if cfg.trials == 0 {
            return Err(ExperimentError::Config("trials must be at least 1".into()));
        }
        Ok(cfg)
    }

    /// Explicit cells first, then the grid's.
    pub fn all_cells(&self) -> Vec<Cell> {
        let mut cells = self.cells.clone();
        if let Some(g) = &self.grid {
            cells.extend(g.cells());
        }
        cells
    }
}

/// One CSV row per (cell, trial). Column order is the field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cell: usize,
    pub trial: usize,
    pub rule: String,
    pub technique: String,
    pub eps: String,
    pub delta: String,
    pub k: usize,
    pub m: usize,
    pub n: u64,
    pub workload: String,
    pub seed: u64,
    pub comm_bits: u64,
    pub comm_words: u64,
    pub n_ref: u64,
    pub message_count: u64,
    pub tag_bits: u64,
    pub checkpoint_count: u64,
    pub queries: u64,
    pub failures: u64,
    pub failure_rate: f64,
    pub witness_unknown: u64,
    pub witness_unknown_rate: f64,
    pub inconsistent: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditSummary {
    pub queries: u64,
    pub failures: u64,
    pub unknown: u64,
    pub inconsistent: u64,
    pub records: Vec<AuditRecord>,
}

impl AuditSummary {
    pub fn failure_rate(&self) -> f64 {
        rate(self.failures, self.queries)
    }

    pub fn unknown_rate(&self) -> f64 {
        rate(self.unknown, self.queries)
    }
}

fn rate(x: u64, of: u64) -> f64 {
    if of == 0 {
        0.0
    } else {
        x as f64 / of as f64
    }
}

/// Checks every declaration against the election prefix at its time.
/// Queries on an empty prefix are skipped.
pub fn audit_transcript(tr: &Transcript, mode: OracleMode) -> Result<AuditSummary, ExperimentError> {
    let rule = tr.header.rule.as_ref().ok_or(ExperimentError::Header("rule"))?;
    let eps = tr.header.eps.ok_or(ExperimentError::Header("eps"))?;
    let mut tally = Tally::new(tr.header.m, tr.header.kind);
    let mut decls = tr.declarations.clone();
    decls.sort_by_key(|d| d.time);
    let mut next = 0;
    let mut s = AuditSummary::default();
    for d in decls {
        while next < tr.events.len() && tr.events[next].time <= d.time {
            tally.add(&tr.events[next].ballot);
            next += 1;
        }
        if tally.n() == 0 {
            continue;
        }
        let (verdict, method, inconsistent) = match d.declared {
            Some(c) if c.0 < tr.header.m => {
                let o = audit_candidate(&tally, c.0, eps, rule, mode)
                    .map_err(|e| ExperimentError::Config(format!("audit at time {}: {e}", d.time)))?;
                (o.verdict, o.method, o.inconsistent)
            }
            _ => (Verdict::Fail, AuditMethod::None, false),
        };
        s.queries += 1;
        match verdict {
            Verdict::Fail => s.failures += 1,
            Verdict::Unknown => s.unknown += 1,
            Verdict::Pass => {}
        }
        s.inconsistent += inconsistent as u64;
        s.records.push(AuditRecord { time: d.time, declared: d.declared, verdict, method, inconsistent });
    }
    Ok(s)
}

/// Overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub oracle: Option<OracleMode>,
}

/// Result of one (cell, trial).
#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub row: ReportRow,
    pub runtime_ms: f64,
    pub transcript: Option<Transcript>,
}

fn workload_name(kind: &GeneratorKind) -> String {
    match kind {
        GeneratorKind::UniformImpartial => "uniform_impartial".into(),
        GeneratorKind::Skewed { .. } => "skewed".into(),
        GeneratorKind::PlantedWinner { margin, .. } => format!("planted_winner({margin})"),
        GeneratorKind::AdversarialFlip { phases, .. } => format!("adversarial_flip({phases})"),
    }
}

fn blank_row(cell_idx: usize, trial: usize, cell: &Cell, seed: u64) -> ReportRow {
    let t = &cell.tracker;
    ReportRow {
        cell: cell_idx,
        trial,
        rule: t.rule.name(),
        technique: t.technique.name().into(),
        eps: t.eps.to_string(),
        delta: t.delta.map(|d| d.to_string()).unwrap_or_default(),
        k: t.k,
        m: t.m,
        n: 0,
        workload: workload_name(&cell.workload.kind),
        seed,
        comm_bits: 0,
        comm_words: 0,
        n_ref: 0,
        message_count: 0,
        tag_bits: 0,
        checkpoint_count: 0,
        queries: 0,
        failures: 0,
        failure_rate: 0.0,
        witness_unknown: 0,
        witness_unknown_rate: 0.0,
        inconsistent: 0,
        error: String::new(),
    }
}

#[derive(Debug, Error)]
enum TrialError {
    #[error("{0}")]
    Cell(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

fn check_cell(cell: &Cell) -> Result<(), TrialError> {
    let (t, w) = (&cell.tracker, &cell.workload);
    if t.m != w.m {
        return Err(TrialError::Cell(format!("tracker m={} but workload m={}", t.m, w.m)));
    }
    if t.rule.ballot_kind() != w.ballot {
        return Err(TrialError::Cell(format!("{} needs {} ballots", t.rule, t.rule.ballot_kind())));
    }
    Ok(())
}

/// Runs one trial of one cell. Errors become a row with the `error` column set.
pub fn run_trial(cell_idx: usize, trial: usize, cell: &Cell, root: u64, mode: OracleMode, keep: bool) -> TrialOutput {
    let seed = derive_seed(root, &[cell_idx as u64, trial as u64]);
    let start = Instant::now();
    let mut row = blank_row(cell_idx, trial, cell, seed);
    let result = (|| -> Result<Option<Transcript>, TrialError> {
        check_cell(cell)?;
        cell.tracker.validate()?;
        let mut spec = cell.workload.clone();
        spec.seed = derive_seed(seed, &[0, spec.seed]);
        if spec.approval_size.is_none() {
            spec.approval_size = cell.tracker.rule.approval_size();
        }
        let g = generate(&spec)?;
        let assignment = match &cell.assignment {
            AssignmentPolicy::UniformRandom { seed: s } => AssignmentPolicy::UniformRandom { seed: derive_seed(seed, &[1, *s]) },
            other => other.clone(),
        };
        let events = to_events(&g, &assignment, cell.tracker.k)?;
        let n = events.len() as u64;
        let queries = cell.queries.times(n, &g.phase_ends);
        let mut tr = run_tracker(&cell.tracker, &events, &queries, derive_seed(seed, &[2]), keep)?;
        let audit = audit_transcript(&tr, mode)?;
        row.n = n;
        row.comm_bits = tr.ledger.total_bits;
        row.comm_words = tr.ledger.words(n);
        row.n_ref = n;
        row.message_count = tr.ledger.messages();
        row.tag_bits = tr.ledger.tag_bits;
        row.checkpoint_count = tr.checkpoints;
        row.queries = audit.queries;
        row.failures = audit.failures;
        row.failure_rate = audit.failure_rate();
        row.witness_unknown = audit.unknown;
        row.witness_unknown_rate = audit.unknown_rate();
        row.inconsistent = audit.inconsistent;
        tr.audits = audit.records;
        Ok(keep.then_some(tr))
    })();
    let transcript = match result {
        Ok(t) => t,
        Err(e) => {
            row.error = e.to_string();
            None
        }
    };
    TrialOutput { row, runtime_ms: start.elapsed().as_secs_f64() * 1e3, transcript }
}

/// Runs every (cell, trial) in parallel; output is ordered by (cell, trial).
pub fn run_experiment(cfg: &ExperimentConfig, over: &RunOverrides) -> Vec<TrialOutput> {
    let trials = over.trials.unwrap_or(cfg.trials).max(1);
    let root = over.seed.unwrap_or(cfg.seed);
    let mode = over.oracle.unwrap_or(cfg.oracle);
    let cells = cfg.all_cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..trials).map(move |t| (c, t))).collect();
    jobs.par_iter()
        .map(|&(c, t)| {
            let keep = match cfg.transcripts {
                TranscriptPolicy::None => false,
                TranscriptPolicy::First => t == 0,
                TranscriptPolicy::All => true,
            };
            run_trial(c, t, &cells[c], root, mode, keep)
        })
        .collect()
}

pub fn write_report<W: std::io::Write>(rows: &[ReportRow], w: W) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `report.csv`, `timing.csv` and `transcripts/*.jsonl` under `dir`.
pub fn write_outputs(dir: &Path, outputs: &[TrialOutput]) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir.join("transcripts"))?;
    let rows: Vec<ReportRow> = outputs.iter().map(|o| o.row.clone()).collect();
    write_report(&rows, BufWriter::new(fs::File::create(dir.join("report.csv"))?))?;
    let mut timing = csv::Writer::from_writer(BufWriter::new(fs::File::create(dir.join("timing.csv"))?));
    timing.write_record(["cell", "trial", "runtime_ms"])?;
    for o in outputs {
        timing.write_record([o.row.cell.to_string(), o.row.trial.to_string(), format!("{:.3}", o.runtime_ms)])?;
    }
    timing.flush()?;
    for o in outputs {
        if let Some(tr) = &o.transcript {
            let name = format!("cell{:03}_trial{:03}.jsonl", o.row.cell, o.row.trial);
            tr.write_jsonl(BufWriter::new(fs::File::create(dir.join("transcripts").join(name))?))?;
        }
    }
    Ok(())
}
