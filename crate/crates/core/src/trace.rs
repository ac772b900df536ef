//! Per-rank phase spans, Chrome trace-event export and phase summaries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ClassicalMd,
    GatherPositions,
    DdBuild,
    NeighborBuild,
    Inference,
    GhostForceRoute,
    ReduceForces,
    Integrate,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::ClassicalMd,
        Phase::GatherPositions,
        Phase::DdBuild,
        Phase::NeighborBuild,
        Phase::Inference,
        Phase::GhostForceRoute,
        Phase::ReduceForces,
        Phase::Integrate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::ClassicalMd => "classical_md",
            Phase::GatherPositions => "gather_positions",
            Phase::DdBuild => "dd_build",
            Phase::NeighborBuild => "neighbor_build",
            Phase::Inference => "inference",
            Phase::GhostForceRoute => "ghost_force_route",
            Phase::ReduceForces => "reduce_forces",
            Phase::Integrate => "integrate",
        }
    }

    pub fn from_name(name: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Phases that belong to the neural-potential path of a step.
    pub fn is_nnpot(self) -> bool {
        !matches!(self, Phase::ClassicalMd | Phase::Integrate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub rank: usize,
    pub phase: Phase,
    pub start: f64,
    pub end: f64,
    pub step: usize,
}

impl Span {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Append-only span sink shared by concurrent rank workers.
#[derive(Debug)]
pub struct StepTrace {
    epoch: Instant,
    spans: Mutex<Vec<Span>>,
}

impl Default for StepTrace {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for StepTrace {
    fn clone(&self) -> Self {
        StepTrace {
            epoch: self.epoch,
            spans: Mutex::new(self.spans()),
        }
    }
}

impl StepTrace {
    pub fn new() -> Self {
        StepTrace {
            epoch: Instant::now(),
            spans: Mutex::new(Vec::new()),
        }
    }

    pub fn from_spans(spans: Vec<Span>) -> Self {
        StepTrace {
            epoch: Instant::now(),
            spans: Mutex::new(spans),
        }
    }

    /// Seconds since this trace was created.
    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    pub fn record_span(&self, rank: usize, phase: Phase, start: f64, end: f64, step: usize) -> Result<()> {
        if !(end >= start) {
            return Err(Error::InvalidInput(format!(
                "span for rank {rank} phase {} ends before it starts ({start} > {end})",
                phase.name()
            )));
        }
        self.spans.lock().unwrap().push(Span {
            rank,
            phase,
            start,
            end,
            step,
        });
        Ok(())
    }

    /// Runs `f` and records its wall time as one span.
    pub fn time<T>(&self, rank: usize, phase: Phase, step: usize, f: impl FnOnce() -> T) -> T {
        let start = self.now();
        let out = f();
        let end = self.now().max(start);
        self.spans.lock().unwrap().push(Span {
            rank,
            phase,
            start,
            end,
            step,
        });
        out
    }

    pub fn extend(&self, spans: impl IntoIterator<Item = Span>) {
        self.spans.lock().unwrap().extend(spans);
    }

    pub fn spans(&self) -> Vec<Span> {
        self.spans.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.spans.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total length of the union of all span intervals.
    pub fn covered_seconds(&self) -> f64 {
        let mut iv: Vec<(f64, f64)> = self.spans().iter().map(|s| (s.start, s.end)).collect();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut total = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (s, e) in iv {
            match cur {
                Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    total += ce - cs;
                    cur = Some((s, e));
                }
                None => cur = Some((s, e)),
            }
        }
        if let Some((cs, ce)) = cur {
            total += ce - cs;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChromeEvent {
    pub name: String,
    pub cat: String,
    pub ph: String,
    pub ts: f64,
    pub dur: f64,
    pub pid: u32,
    pub tid: usize,
    pub args: BTreeMap<String, usize>,
}

pub fn to_chrome_events(spans: &[Span]) -> Vec<ChromeEvent> {
    spans
        .iter()
        .map(|s| ChromeEvent {
            name: s.phase.name().to_string(),
            cat: if s.phase.is_nnpot() { "nnpot" } else { "md" }.to_string(),
            ph: "X".to_string(),
            ts: s.start * 1e6,
            dur: s.duration() * 1e6,
            pid: 1,
            tid: s.rank,
            args: BTreeMap::from([("step".to_string(), s.step)]),
        })
        .collect()
}

/// Writes spans as a JSON array of complete ("X") events, one thread lane per rank.
pub fn export_chrome_trace(trace: &StepTrace, path: &Path) -> Result<()> {
    let events = to_chrome_events(&trace.spans());
    let text = serde_json::to_string_pretty(&events)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_chrome_trace(path: &Path) -> Result<Vec<ChromeEvent>> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Converts parsed events back to spans.
pub fn spans_from_chrome(events: &[ChromeEvent]) -> Result<Vec<Span>> {
    events
        .iter()
        .map(|e| {
            let phase = Phase::from_name(&e.name)
                .ok_or_else(|| Error::InvalidInput(format!("unknown phase `{}`", e.name)))?;
            Ok(Span {
                rank: e.tid,
                phase,
                start: e.ts * 1e-6,
                end: (e.ts + e.dur) * 1e-6,
                step: e.args.get("step").copied().unwrap_or(0),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankStepSummary {
    pub step: usize,
    pub rank: usize,
    pub seconds: BTreeMap<Phase, f64>,
    pub barrier_wait: f64,
    /// Rank time spent in spans plus barrier wait.
    pub wall: f64,
}

impl RankStepSummary {
    pub fn fraction(&self, phase: Phase) -> f64 {
        let mut t = self.seconds.get(&phase).copied().unwrap_or(0.0);
        if phase == Phase::ReduceForces {
            t += self.barrier_wait;
        }
        if self.wall > 0.0 {
            t / self.wall
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub per_rank_step: Vec<RankStepSummary>,
    /// Aggregated fraction of wall time per phase (barrier wait counted under reduce_forces).
    pub fractions: BTreeMap<Phase, f64>,
    pub total_seconds: BTreeMap<Phase, f64>,
    pub total_barrier_wait: f64,
}

impl PhaseSummary {
    pub fn fraction(&self, phase: Phase) -> f64 {
        self.fractions.get(&phase).copied().unwrap_or(0.0)
    }

    /// Fraction of the neural-potential path spent in `phase`.
    pub fn nnpot_fraction(&self, phase: Phase) -> f64 {
        let total: f64 = self
            .total_seconds
            .iter()
            .filter(|(p, _)| p.is_nnpot())
            .map(|(_, t)| *t)
            .sum::<f64>()
            + self.total_barrier_wait;
        let mut t = self.total_seconds.get(&phase).copied().unwrap_or(0.0);
        if phase == Phase::ReduceForces {
            t += self.total_barrier_wait;
        }
        if total > 0.0 {
            t / total
        } else {
            0.0
        }
    }
}

/// Per-rank, per-step phase accounting. Ranks wait at the force reduction for the
/// slowest inference of the step; that wait is reported as `barrier_wait`.
pub fn phase_summary(spans: &[Span]) -> Result<PhaseSummary> {
    if spans.is_empty() {
        return Err(Error::InvalidInput("phase summary needs at least one span".into()));
    }
    let mut cells: BTreeMap<(usize, usize), BTreeMap<Phase, f64>> = BTreeMap::new();
    for s in spans {
        *cells.entry((s.step, s.rank)).or_default().entry(s.phase).or_insert(0.0) += s.duration();
    }
    let mut max_inference: BTreeMap<usize, f64> = BTreeMap::new();
    for ((step, _), phases) in &cells {
        let t = phases.get(&Phase::Inference).copied().unwrap_or(0.0);
        let m = max_inference.entry(*step).or_insert(0.0);
        *m = m.max(t);
    }
    let mut per_rank_step = Vec::with_capacity(cells.len());
    let mut total_seconds: BTreeMap<Phase, f64> = BTreeMap::new();
    let mut total_barrier_wait = 0.0;
    let mut total_wall = 0.0;
    for ((step, rank), phases) in cells {
        let has_inference = phases.contains_key(&Phase::Inference);
        let barrier_wait = if has_inference {
            max_inference[&step] - phases[&Phase::Inference]
        } else {
            0.0
        };
        let wall = phases.values().sum::<f64>() + barrier_wait;
        for (p, t) in &phases {
            *total_seconds.entry(*p).or_insert(0.0) += t;
        }
        total_barrier_wait += barrier_wait;
        total_wall += wall;
        per_rank_step.push(RankStepSummary {
            step,
            rank,
            seconds: phases,
            barrier_wait,
            wall,
        });
    }
    let mut fractions = BTreeMap::new();
    for (p, t) in &total_seconds {
        let mut t = *t;
        if *p == Phase::ReduceForces {
            t += total_barrier_wait;
        }
        fractions.insert(*p, if total_wall > 0.0 { t / total_wall } else { 0.0 });
    }
    if total_barrier_wait > 0.0 && !fractions.contains_key(&Phase::ReduceForces) {
        fractions.insert(Phase::ReduceForces, total_barrier_wait / total_wall);
    }
    Ok(PhaseSummary {
        per_rank_step,
        fractions,
        total_seconds,
        total_barrier_wait,
    })
}

/// Per-rank inference seconds for one step, indexed by rank.
pub fn inference_times(spans: &[Span], step: usize) -> Vec<f64> {
    let n_ranks = spans.iter().filter(|s| s.step == step).map(|s| s.rank + 1).max().unwrap_or(0);
    let mut out = vec![0.0; n_ranks];
    for s in spans.iter().filter(|s| s.step == step && s.phase == Phase::Inference) {
        out[s.rank] += s.duration();
    }
    out
}

pub fn write_summary_csv(summary: &PhaseSummary, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "rank", "phase", "seconds", "fraction"])?;
    for rs in &summary.per_rank_step {
        for (p, t) in &rs.seconds {
            w.write_record([
                rs.step.to_string(),
                rs.rank.to_string(),
                p.name().to_string(),
                format!("{t:e}"),
                format!("{:.6}", rs.fraction(*p)),
            ])?;
        }
        if rs.barrier_wait > 0.0 {
            w.write_record([
                rs.step.to_string(),
                rs.rank.to_string(),
                "barrier_wait".to_string(),
                format!("{:e}", rs.barrier_wait),
                format!("{:.6}", rs.barrier_wait / rs.wall),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
