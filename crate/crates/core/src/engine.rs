//! Leap-frog NVE main loop with pluggable force providers.
//!
//! Velocities stored on [`AtomSet`] are half-step velocities `v(t - dt/2)`.
//! Each step evaluates every provider at `r(t)`, sums their forces, records
//! energies and advances to `r(t + dt)`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classical::{evaluate_classical, LJParams};
use crate::decomp::{dd_evaluate, CollectiveLedger, DdOptions, DdOutput, LedgerSummary, Scheme};
use crate::deeppot::{evaluate_dp, DPModel};
use crate::neighbor::{build_neighbor_list, ListMode};
use crate::system::{AtomSet, SimBox};
use crate::trace::{Phase, StepTrace};
use crate::vec3::{self, Vec3};
use crate::xyz::Frame;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    Classical,
    DpSingle,
    DpDd { scheme: Scheme, n_ranks: usize },
}

/// Atoms handled by the neural potential.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnGroup {
    All,
    Species(Vec<usize>),
}

impl NnGroup {
    pub fn contains(&self, species: usize) -> bool {
        match self {
            NnGroup::All => true,
            NnGroup::Species(s) => s.contains(&species),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MDConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub potential: Potential,
    pub nn_group: NnGroup,
    /// Keep a frame every this many steps; 0 keeps only the first and last.
    pub output_every: usize,
    pub seed: u64,
    /// Rank workers for decomposed inference.
    pub workers: usize,
}

impl Default for MDConfig {
    fn default() -> Self {
        MDConfig {
            dt: 0.002,
            n_steps: 100,
            potential: Potential::Classical,
            nn_group: NnGroup::All,
            output_every: 10,
            seed: 1,
            workers: 1,
        }
    }
}

impl MDConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be > 0, got {}", self.dt)));
        }
        if let Potential::DpDd { n_ranks, .. } = self.potential {
            if n_ranks == 0 {
                return Err(Error::InvalidInput("n_ranks must be >= 1".into()));
            }
        }
        Ok(())
    }
}

pub struct StepContext<'a> {
    pub step: usize,
    pub trace: &'a StepTrace,
    pub ledger: &'a mut CollectiveLedger,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderOutput {
    pub energy: f64,
    /// One entry per atom of the whole system; zero outside the provider's group.
    pub forces: Vec<Vec3>,
    pub dd: Option<DdOutput>,
}

pub trait ForceProvider: Send {
    fn name(&self) -> &str;
    fn compute(&mut self, atoms: &AtomSet, bx: &SimBox, ctx: &mut StepContext<'_>) -> Result<ProviderOutput>;
}

/// Subset view: `None` means all atoms.
fn select(atoms: &AtomSet, group: &Option<Vec<usize>>) -> Option<AtomSet> {
    group.as_ref().map(|idx| atoms.subset(idx))
}

fn scatter(n: usize, group: &Option<Vec<usize>>, forces: Vec<Vec3>) -> Vec<Vec3> {
    match group {
        None => forces,
        Some(idx) => {
            let mut out = vec![[0.0; 3]; n];
            for (&i, f) in idx.iter().zip(forces) {
                out[i] = f;
            }
            out
        }
    }
}

pub struct ClassicalProvider {
    pub params: LJParams,
    pub group: Option<Vec<usize>>,
}

impl ForceProvider for ClassicalProvider {
    fn name(&self) -> &str {
        "classical"
    }

    fn compute(&mut self, atoms: &AtomSet, bx: &SimBox, ctx: &mut StepContext<'_>) -> Result<ProviderOutput> {
        let t0 = ctx.trace.now();
        let sub = select(atoms, &self.group);
        let set = sub.as_ref().unwrap_or(atoms);
        let nl = build_neighbor_list(&set.positions, bx, self.params.rc, ListMode::Half)?;
        let (energy, forces) = evaluate_classical(&set.positions, bx, &nl, &self.params)?;
        ctx.trace.record_span(0, Phase::ClassicalMd, t0, ctx.trace.now(), ctx.step)?;
        Ok(ProviderOutput {
            energy,
            forces: scatter(atoms.len(), &self.group, forces),
            dd: None,
        })
    }
}

pub struct DpSingleProvider {
    pub model: Arc<DPModel>,
    pub group: Option<Vec<usize>>,
}

impl ForceProvider for DpSingleProvider {
    fn name(&self) -> &str {
        "dp_single"
    }

    fn compute(&mut self, atoms: &AtomSet, bx: &SimBox, ctx: &mut StepContext<'_>) -> Result<ProviderOutput> {
        let sub = select(atoms, &self.group);
        let set = sub.as_ref().unwrap_or(atoms);
        let t0 = ctx.trace.now();
        let nl = build_neighbor_list(&set.positions, bx, self.model.config.rc, ListMode::Full)?;
        let t1 = ctx.trace.now();
        let out = evaluate_dp(set, bx, &nl, &self.model, None)?;
        let t2 = ctx.trace.now();
        ctx.trace.record_span(0, Phase::NeighborBuild, t0, t1, ctx.step)?;
        ctx.trace.record_span(0, Phase::Inference, t1, t2, ctx.step)?;
        Ok(ProviderOutput {
            energy: out.energy,
            forces: scatter(atoms.len(), &self.group, out.forces),
            dd: None,
        })
    }
}

pub struct DpDdProvider {
    pub model: Arc<DPModel>,
    pub group: Option<Vec<usize>>,
    pub options: DdOptions,
}

impl ForceProvider for DpDdProvider {
    fn name(&self) -> &str {
        "dp_dd"
    }

    fn compute(&mut self, atoms: &AtomSet, bx: &SimBox, ctx: &mut StepContext<'_>) -> Result<ProviderOutput> {
        let sub = select(atoms, &self.group);
        let set = sub.as_ref().unwrap_or(atoms);
        let mut out = dd_evaluate(set, bx, &self.model, &self.options, ctx.step, ctx.trace, ctx.ledger)?;
        let forces = std::mem::take(&mut out.forces);
        Ok(ProviderOutput {
            energy: out.energy,
            forces: scatter(atoms.len(), &self.group, forces),
            dd: Some(out),
        })
    }
}

/// Providers for a configuration. With a DP potential and a species group,
/// atoms outside the group get classical LJ among themselves only; there are no
/// cross-group terms.
pub fn build_providers(
    config: &MDConfig,
    atoms: &AtomSet,
    lj: &LJParams,
    model: Option<Arc<DPModel>>,
) -> Result<Vec<Box<dyn ForceProvider>>> {
    config.validate()?;
    if config.potential == Potential::Classical {
        return Ok(vec![Box::new(ClassicalProvider {
            params: *lj,
            group: None,
        })]);
    }
    let model = model.ok_or_else(|| Error::InvalidInput("a DP potential needs a model".into()))?;
    let (nn, rest): (Vec<usize>, Vec<usize>) = (0..atoms.len()).partition(|&i| config.nn_group.contains(atoms.species[i]));
    if nn.is_empty() {
        return Err(Error::InvalidInput("the NN group selects no atoms".into()));
    }
    let group = if rest.is_empty() { None } else { Some(nn) };
    let mut providers: Vec<Box<dyn ForceProvider>> = Vec::new();
    match config.potential {
        Potential::DpSingle => providers.push(Box::new(DpSingleProvider { model, group })),
        Potential::DpDd { scheme, n_ranks } => providers.push(Box::new(DpDdProvider {
            model,
            group,
            options: DdOptions {
                n_ranks,
                scheme,
                workers: config.workers.max(1),
            },
        })),
        Potential::Classical => unreachable!(),
    }
    if !rest.is_empty() {
        providers.push(Box::new(ClassicalProvider {
            params: *lj,
            group: Some(rest),
        }));
    }
    Ok(providers)
}

/// `v += F/m·dt`, `r += v·dt`, then wrap.
pub fn leapfrog_step(atoms: &mut AtomSet, forces: &[Vec3], dt: f64, bx: &SimBox) {
    for i in 0..atoms.len() {
        let inv_m = 1.0 / atoms.masses[i];
        let v = vec3::add(atoms.velocities[i], vec3::scale(forces[i], inv_m * dt));
        atoms.velocities[i] = v;
        atoms.positions[i] = bx.wrap(vec3::add(atoms.positions[i], vec3::scale(v, dt)));
    }
}

/// Turns `v(t - dt/2)` into `-v(t + dt/2)` so the next steps retrace the path.
pub fn reverse_velocities(atoms: &mut AtomSet, forces: &[Vec3], dt: f64) {
    for i in 0..atoms.len() {
        let v = vec3::add(atoms.velocities[i], vec3::scale(forces[i], dt / atoms.masses[i]));
        atoms.velocities[i] = vec3::scale(v, -1.0);
    }
}

/// Kinetic energy at `t` from half-step velocities: `v(t) ≈ v(t - dt/2) + F·dt/(2m)`.
pub fn kinetic_energy(atoms: &AtomSet, forces: Option<&[Vec3]>, dt: f64) -> f64 {
    let mut ke = 0.0;
    for i in 0..atoms.len() {
        let m = atoms.masses[i];
        let v = match forces {
            Some(f) => vec3::add(atoms.velocities[i], vec3::scale(f[i], 0.5 * dt / m)),
            None => atoms.velocities[i],
        };
        ke += 0.5 * m * vec3::dot(v, v);
    }
    ke
}

/// `2·KE / dof` with `dof = 3N - 3`.
pub fn temperature(kinetic: f64, n_atoms: usize) -> f64 {
    let dof = (3 * n_atoms).saturating_sub(3).max(1);
    2.0 * kinetic / dof as f64
}

/// Maxwell–Boltzmann velocities with zero total momentum, scaled to exactly
/// `target` (reduced units, `k_B = 1`).
pub fn init_velocities<R: Rng>(atoms: &mut AtomSet, target: f64, rng: &mut R) {
    let n = atoms.len();
    if n == 0 {
        return;
    }
    for i in 0..n {
        let s = (target.max(0.0) / atoms.masses[i]).sqrt();
        atoms.velocities[i] = [
            s * rng.sample::<f64, _>(StandardNormal),
            s * rng.sample::<f64, _>(StandardNormal),
            s * rng.sample::<f64, _>(StandardNormal),
        ];
    }
    remove_drift(atoms);
    let t = temperature(kinetic_energy(atoms, None, 0.0), n);
    if t > 0.0 {
        let f = (target / t).sqrt();
        for v in &mut atoms.velocities {
            *v = vec3::scale(*v, f);
        }
    }
}

/// Subtracts the center-of-mass velocity.
pub fn remove_drift(atoms: &mut AtomSet) {
    let m = atoms.total_mass();
    if m <= 0.0 {
        return;
    }
    let vcm = vec3::scale(atoms.momentum(), 1.0 / m);
    for v in &mut atoms.velocities {
        vec3::sub_assign(v, vcm);
    }
}

/// Classical pre-run with velocity rescaling to `target` every `rescale_every`
/// steps. Rescaling stops when the function returns.
pub fn equilibrate(
    bx: &SimBox,
    atoms: &mut AtomSet,
    lj: &LJParams,
    target: f64,
    dt: f64,
    steps: usize,
    rescale_every: usize,
) -> Result<()> {
    for step in 0..steps {
        let nl = build_neighbor_list(&atoms.positions, bx, lj.rc, ListMode::Half)?;
        let (_, forces) = evaluate_classical(&atoms.positions, bx, &nl, lj)?;
        leapfrog_step(atoms, &forces, dt, bx);
        if rescale_every > 0 && (step + 1) % rescale_every == 0 {
            let t = temperature(kinetic_energy(atoms, None, dt), atoms.len());
            if t > 0.0 {
                let f = (target / t).sqrt();
                for v in &mut atoms.velocities {
                    *v = vec3::scale(*v, f);
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub step: usize,
    pub potential: f64,
    pub kinetic: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_atoms: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub elapsed_seconds: f64,
    /// Reduced time units per wall-clock day.
    pub throughput: f64,
    pub phase_totals: BTreeMap<String, f64>,
    /// Wall time covered by at least one traced phase.
    pub traced_seconds: f64,
    pub ledger: LedgerSummary,
    pub initial_total_energy: Option<f64>,
    pub final_total_energy: Option<f64>,
    pub max_relative_energy_drift: Option<f64>,
}

pub struct RunResult {
    pub atoms: AtomSet,
    pub frames: Vec<Frame>,
    pub energies: Vec<EnergyRecord>,
    pub trace: StepTrace,
    pub ledger: CollectiveLedger,
    /// Per-step decomposition statistics, forces dropped.
    pub dd_steps: Vec<(usize, DdOutput)>,
    pub summary: RunSummary,
}

/// Simulated time per wall-clock day: `n_steps·dt / elapsed × 86400`.
pub fn throughput(n_steps: usize, dt: f64, elapsed_seconds: f64) -> Result<f64> {
    if !(elapsed_seconds > 0.0) {
        return Err(Error::InvalidInput(format!("elapsed time must be > 0, got {elapsed_seconds}")));
    }
    Ok(n_steps as f64 * dt / elapsed_seconds * 86400.0)
}

/// Sum of provider energies and forces at the current positions.
pub fn evaluate_providers(
    providers: &mut [Box<dyn ForceProvider>],
    atoms: &AtomSet,
    bx: &SimBox,
    ctx: &mut StepContext<'_>,
) -> Result<(f64, Vec<Vec3>, Vec<DdOutput>)> {
    let mut energy = 0.0;
    let mut forces = vec![[0.0; 3]; atoms.len()];
    let mut dd = Vec::new();
    for p in providers.iter_mut() {
        let out = p.compute(atoms, bx, ctx)?;
        if out.forces.len() != atoms.len() || !out.forces.iter().all(|f| vec3::is_finite(*f)) || !out.energy.is_finite() {
            return Err(Error::NonFiniteForces {
                step: ctx.step,
                provider: p.name().to_string(),
            });
        }
        energy += out.energy;
        for (a, b) in forces.iter_mut().zip(&out.forces) {
            vec3::add_assign(a, *b);
        }
        dd.extend(out.dd);
    }
    Ok((energy, forces, dd))
}

pub fn run_md(
    bx: &SimBox,
    initial: &AtomSet,
    config: &MDConfig,
    providers: &mut [Box<dyn ForceProvider>],
) -> Result<RunResult> {
    config.validate()?;
    initial.validate()?;
    let mut atoms = initial.clone();
    atoms.wrap_positions(bx);
    let trace = StepTrace::new();
    let mut ledger = CollectiveLedger::default();
    let mut frames = vec![Frame {
        index: 0,
        sim_box: *bx,
        atoms: atoms.clone(),
    }];
    let mut energies = Vec::with_capacity(config.n_steps);
    let mut dd_steps = Vec::new();

    let start = Instant::now();
    for step in 0..config.n_steps {
        let mut ctx = StepContext {
            step,
            trace: &trace,
            ledger: &mut ledger,
        };
        let (pot, forces, dd) = evaluate_providers(providers, &atoms, bx, &mut ctx)?;
        let t0 = trace.now();
        let kin = kinetic_energy(&atoms, Some(&forces), config.dt);
        energies.push(EnergyRecord {
            step,
            potential: pot,
            kinetic: kin,
            total: pot + kin,
        });
        dd_steps.extend(dd.into_iter().map(|o| (step, o)));
        leapfrog_step(&mut atoms, &forces, config.dt, bx);
        let done = step + 1;
        let emit = if config.output_every == 0 {
            done == config.n_steps
        } else {
            done % config.output_every == 0 || done == config.n_steps
        };
        if emit {
            frames.push(Frame {
                index: done,
                sim_box: *bx,
                atoms: atoms.clone(),
            });
        }
        trace.record_span(0, Phase::Integrate, t0, trace.now(), step)?;
    }
    let elapsed = start.elapsed().as_secs_f64();

    let mut phase_totals = BTreeMap::new();
    for s in trace.spans() {
        *phase_totals.entry(s.phase.name().to_string()).or_insert(0.0) += s.duration();
    }
    let e0 = energies.first().map(|e| e.total);
    let drift = e0.map(|e0| {
        energies
            .iter()
            .map(|e| (e.total - e0).abs() / e0.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    });
    let summary = RunSummary {
        n_atoms: atoms.len(),
        n_steps: config.n_steps,
        dt: config.dt,
        elapsed_seconds: elapsed,
        throughput: if config.n_steps > 0 {
            throughput(config.n_steps, config.dt, elapsed)?
        } else {
            0.0
        },
        phase_totals,
        traced_seconds: trace.covered_seconds(),
        ledger: ledger.summary(),
        initial_total_energy: e0,
        final_total_energy: energies.last().map(|e| e.total),
        max_relative_energy_drift: drift,
    };
    Ok(RunResult {
        atoms,
        frames,
        energies,
        trace,
        ledger,
        dd_steps,
        summary,
    })
}
