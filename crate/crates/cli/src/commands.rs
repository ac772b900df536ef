use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use nnpot_core::analysis::{
    fit_throughput, gyration_radii, pearson, read_sweep_csv, scaling_efficiency, stability_check, ScalingFit,
    ScalingMode, StabilityReport,
};
use nnpot_core::decomp::{self, load_rows, measure_sweep, LoadRow};
use nnpot_core::deeppot::data::lj_oracle_frames;
use nnpot_core::deeppot::train::{plateau_ratio, write_curve_csv};
use nnpot_core::deeppot::{load_model, prepare_model, save_model, train, DPConfig, DPModel, TrainingSet};
use nnpot_core::engine::{build_providers, equilibrate, init_velocities, run_md, MDConfig, Potential};
use nnpot_core::system::{lattice_init, replicate_x, AtomSet, SimBox};
use nnpot_core::trace::{export_chrome_trace, phase_summary, write_summary_csv};
use nnpot_core::xyz::{read_xyz, read_xyz_frames, write_frame};
use nnpot_core::{vec3, Error};

use crate::config::{Config, GroupSpec, SystemSpec};
use crate::output::{OutDir, RunManifest};

/// Settings after flag overrides, shared by all commands.
pub struct Invocation {
    pub command: &'static str,
    pub config_path: Option<PathBuf>,
    pub cfg: Config,
}

impl Invocation {
    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed)
    }

    fn out(&self) -> Result<OutDir> {
        OutDir::create(&self.cfg.out)
    }

    fn finish(&self, out: OutDir, resolved: impl Serialize) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_path: self.config_path.clone(),
            seed: self.cfg.seed,
            workers: self.cfg.workers,
            out_dir: PathBuf::new(),
            resolved: serde_json::to_value(resolved)?,
            artifacts: BTreeMap::new(),
        };
        out.finish(manifest)?;
        Ok(())
    }
}

fn model_or_fresh(path: &Option<PathBuf>, config: &DPConfig, rng: &mut ChaCha8Rng) -> Result<DPModel> {
    match path {
        Some(p) => load_model(p).with_context(|| format!("loading model {}", p.display())),
        None => {
            let mut c = config.clone();
            c.seed = rng.gen();
            Ok(DPModel::new(c)?)
        }
    }
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    initial_validation_rmse: f64,
    final_train_rmse: f64,
    final_validation_rmse: f64,
    reduction_factor: f64,
    plateau_ratio: f64,
    parameters: usize,
}

pub fn cmd_train(inv: &Invocation) -> Result<()> {
    let s = &inv.cfg.train;
    let mut rng = inv.rng();
    let mut datasets = s.datasets.clone();
    for d in &mut datasets {
        d.seed = rng.gen();
    }
    let mut model_config = s.model.clone();
    model_config.seed = rng.gen();
    let mut hp = s.params.clone();
    hp.seed = rng.gen();

    let groups = datasets.iter().map(lj_oracle_frames).collect::<nnpot_core::Result<Vec<_>>>()?;
    let data = TrainingSet::split_groups(groups, s.n_validation)?;
    let mut model = DPModel::new(model_config.clone())?;
    prepare_model(&mut model, &data)?;
    let mut out = inv.out()?;
    let resolved = serde_json::json!({
        "model": model_config,
        "datasets": datasets,
        "params": hp,
        "n_validation": s.n_validation,
    });
    match train(model, &data, &hp) {
        Ok((model, report)) => {
            out.write_with("model.dp", true, |p| save_model(&model, p))?;
            out.write_with("rmse_curve.csv", true, |p| write_curve_csv(&report, p))?;
            let series: Vec<f64> = report.curve.iter().map(|c| c.validation_rmse).collect();
            let initial = series.first().copied().unwrap_or(f64::NAN);
            let summary = TrainSummary {
                epochs: hp.epochs,
                initial_validation_rmse: initial,
                final_train_rmse: report.final_train_rmse,
                final_validation_rmse: report.final_validation_rmse,
                reduction_factor: initial / report.final_validation_rmse,
                plateau_ratio: plateau_ratio(&series),
                parameters: model.parameter_count(),
            };
            out.write_json("train_summary.json", true, &summary)?;
            println!(
                "validation force RMSE {:.4} -> {:.4} ({:.1}x), plateau ratio {:.4}",
                summary.initial_validation_rmse,
                summary.final_validation_rmse,
                summary.reduction_factor,
                summary.plateau_ratio
            );
            inv.finish(out, resolved)
        }
        Err(Error::Diverged { epoch, checkpoint }) => {
            out.write_with("checkpoint.dp", true, |p| save_model(&checkpoint, p))?;
            inv.finish(out, resolved)?;
            bail!("training diverged at epoch {epoch}; last finite parameters saved to checkpoint.dp")
        }
        Err(e) => Err(e.into()),
    }
}

pub fn build_system(spec: &SystemSpec) -> Result<(SimBox, AtomSet)> {
    Ok(match spec {
        SystemSpec::Lattice {
            n_per_axis,
            density,
            species_pattern,
        } => lattice_init(*n_per_axis, *density, species_pattern)?,
        SystemSpec::Droplet {
            n_per_axis,
            density,
            radius,
            inner_species,
            outer_species,
        } => {
            let (bx, mut atoms) = lattice_init(*n_per_axis, *density, &[*outer_species])?;
            let center = vec3::scale(bx.lengths, 0.5);
            for i in 0..atoms.len() {
                let d = bx.minimum_image(vec3::sub(atoms.positions[i], center));
                if vec3::norm(d) < *radius {
                    atoms.species[i] = *inner_species;
                }
            }
            (bx, atoms)
        }
        SystemSpec::Xyz { path } => {
            let frame = read_xyz(path)?;
            (frame.sim_box, frame.atoms)
        }
    })
}

#[derive(Serialize)]
struct EnergyRow {
    step: usize,
    potential: f64,
    kinetic: f64,
    total: f64,
}

pub fn cmd_run(inv: &Invocation) -> Result<()> {
    let s = &inv.cfg.run;
    let mut rng = inv.rng();
    let (bx, mut atoms) = build_system(&s.system)?;
    if s.temperature >= 0.0 {
        init_velocities(&mut atoms, s.temperature, &mut rng);
    }
    if s.equilibration_steps > 0 {
        equilibrate(&bx, &mut atoms, &s.lj, s.temperature.max(0.0), s.dt, s.equilibration_steps, 10)?;
    }
    let model = match (&s.potential, &s.model) {
        (Potential::Classical, _) => None,
        (_, Some(p)) => Some(Arc::new(load_model(p).with_context(|| format!("loading model {}", p.display()))?)),
        (_, None) => bail!("run.model is required for a DP potential"),
    };
    let config = MDConfig {
        dt: s.dt,
        n_steps: s.n_steps,
        potential: s.potential,
        nn_group: s.nn_group.clone(),
        output_every: s.output_every,
        seed: inv.cfg.seed,
        workers: inv.cfg.workers,
    };
    let mut providers = build_providers(&config, &atoms, &s.lj, model)?;
    let result = run_md(&bx, &atoms, &config, &mut providers)?;

    let mut out = inv.out()?;
    out.write_with("trajectory.xyz", true, |p| {
        let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
        for f in &result.frames {
            write_frame(&mut w, &f.sim_box, &f.atoms, f.index)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let energies: Vec<EnergyRow> = result
        .energies
        .iter()
        .map(|e| EnergyRow {
            step: e.step,
            potential: e.potential,
            kinetic: e.kinetic,
            total: e.total,
        })
        .collect();
    out.write_csv("energies.csv", true, &energies)?;
    out.write_with("trace.json", false, |p| export_chrome_trace(&result.trace, p))?;
    let spans = result.trace.spans();
    if !spans.is_empty() {
        let summary = phase_summary(&spans)?;
        out.write_with("phases.csv", false, |p| write_summary_csv(&summary, p))?;
    }
    if !result.dd_steps.is_empty() {
        let rows: Vec<LoadRow> = result
            .dd_steps
            .iter()
            .flat_map(|(step, dd)| load_rows(*step, dd, &result.ledger))
            .collect();
        out.write_csv("load.csv", false, &rows)?;
    }
    out.write_json("summary.json", false, &result.summary)?;
    println!(
        "{} steps, {} atoms, {:.3} s, throughput {:.4} time units/day",
        result.summary.n_steps, result.summary.n_atoms, result.summary.elapsed_seconds, result.summary.throughput
    );
    inv.finish(out, s)
}

#[derive(Serialize)]
struct ValidationSummary {
    checks: usize,
    failed: usize,
    max_energy_rel_err: f64,
    max_force_rel_err: f64,
}

pub fn cmd_validate_dd(inv: &Invocation) -> Result<()> {
    let s = &inv.cfg.validate_dd;
    if s.min_density > s.max_density || s.min_density <= 0.0 {
        bail!("validate_dd needs 0 < min_density <= max_density");
    }
    let mut rng = inv.rng();
    let model = model_or_fresh(&s.model, &s.model_config, &mut rng)?;
    let rc = model.config.rc;
    let mut rows = Vec::new();
    for c in 0..s.n_configs {
        let density = rng.gen_range(s.min_density..=s.max_density);
        let (bx, atoms) = decomp::random_validation_system(rc, density, s.max_atoms, model.config.n_types, &mut rng)?;
        rows.extend(decomp::validate_against_single_domain(
            c,
            &atoms,
            &bx,
            &model,
            &s.ranks,
            &s.schemes,
            inv.cfg.workers,
            s.energy_tolerance,
            s.force_tolerance,
        )?);
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    let max_of = |f: fn(&decomp::ValidationRow) -> f64| rows.iter().map(f).fold(0.0f64, f64::max);
    let summary = ValidationSummary {
        checks: rows.len(),
        failed,
        max_energy_rel_err: max_of(|r| r.energy_rel_err),
        max_force_rel_err: max_of(|r| r.force_rel_err),
    };
    let mut out = inv.out()?;
    out.write_csv("validate_dd.csv", true, &rows)?;
    out.write_json("validate_dd_summary.json", true, &summary)?;
    inv.finish(out, s)?;
    println!(
        "{} checks, {} failed, max energy rel err {:.3e}, max force rel err {:.3e}",
        summary.checks, summary.failed, summary.max_energy_rel_err, summary.max_force_rel_err
    );
    if failed > 0 {
        bail!("{failed} decomposition checks failed");
    }
    Ok(())
}

/// Lattice with each site displaced uniformly by up to `jitter/2` spacings.
pub fn jittered_lattice(n_per_axis: usize, density: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Result<(SimBox, AtomSet)> {
    let (bx, mut atoms) = lattice_init(n_per_axis, density, &[0])?;
    let spacing = bx.lengths[0] / n_per_axis as f64;
    for r in &mut atoms.positions {
        for x in r.iter_mut() {
            *x += jitter * spacing * (rng.gen::<f64>() - 0.5);
        }
        *r = bx.wrap(*r);
    }
    Ok((bx, atoms))
}

#[derive(Serialize)]
struct SweepSummary {
    fit: Option<ScalingFit>,
    load_time_pearson: f64,
    efficiency: BTreeMap<u32, f64>,
}

pub fn cmd_sweep(inv: &Invocation) -> Result<()> {
    let s = &inv.cfg.sweep;
    let mut rng = inv.rng();
    let model = model_or_fresh(&s.model, &s.model_config, &mut rng)?;
    let (base_box, base) = jittered_lattice(s.n_per_axis, s.density, s.jitter, &mut rng)?;
    let mode = s.mode;
    let (rows, timings) = measure_sweep(&s.ranks, s.scheme, inv.cfg.workers, s.repeats, &model, |n| match mode {
        ScalingMode::Strong => Ok((base_box, base.clone())),
        ScalingMode::Weak => replicate_x(&base_box, &base, n),
    })?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.n_ranks as f64, r.throughput)).collect();
    let distinct = points.iter().map(|p| p.0.to_bits()).collect::<std::collections::BTreeSet<_>>().len();
    let fit = if distinct >= 2 { Some(fit_throughput(&points)?) } else { None };
    let load: Vec<f64> = timings.iter().map(|t| (t.locals + t.ghosts) as f64).collect();
    let busy: Vec<f64> = timings.iter().map(|t| t.busy_seconds).collect();
    let tr: BTreeMap<u32, f64> = rows.iter().map(|r| (r.n_ranks as u32, r.throughput)).collect();
    let reference = s.ranks.first().copied().unwrap_or(1) as u32;
    let summary = SweepSummary {
        fit,
        load_time_pearson: pearson(&load, &busy),
        efficiency: scaling_efficiency(&tr, reference, mode)?,
    };
    let mut out = inv.out()?;
    out.write_csv("sweep.csv", false, &rows)?;
    out.write_csv("rank_times.csv", false, &timings)?;
    out.write_json("sweep_summary.json", false, &summary)?;
    for r in &rows {
        println!(
            "n_ranks {:>3}: {:.4} s/step, locals {:.0}, ghosts {:.0}",
            r.n_ranks, r.step_seconds, r.mean_locals, r.mean_ghosts
        );
    }
    inv.finish(out, s)
}

#[derive(Serialize)]
struct EfficiencyRow {
    n_ranks: u32,
    measured_throughput: Option<f64>,
    model_throughput: f64,
    measured_efficiency: Option<f64>,
    model_efficiency: f64,
}

pub fn cmd_fit_scaling(inv: &Invocation, input: Option<&Path>) -> Result<()> {
    let s = &inv.cfg.fit_scaling;
    let path = input
        .map(Path::to_path_buf)
        .or_else(|| s.input.clone())
        .context("fit-scaling needs an input CSV (positional argument or fit_scaling.input)")?;
    let points = read_sweep_csv(&path).with_context(|| format!("reading {}", path.display()))?;
    let fit = fit_throughput(&points)?;
    let measured: BTreeMap<u32, f64> = points.iter().map(|&(n, t)| (n as u32, t)).collect();
    let mut all: Vec<u32> = measured.keys().copied().chain(s.predict.iter().copied()).collect();
    all.sort_unstable();
    all.dedup();
    let mut modeled = BTreeMap::new();
    for &n in &all {
        modeled.insert(n, fit.predict(n as f64)?);
    }
    modeled.entry(s.reference).or_insert(fit.predict(s.reference as f64)?);
    let eff_model = scaling_efficiency(&modeled, s.reference, s.mode)?;
    let eff_measured = if measured.contains_key(&s.reference) {
        Some(scaling_efficiency(&measured, s.reference, s.mode)?)
    } else {
        None
    };
    let rows: Vec<EfficiencyRow> = all
        .iter()
        .map(|&n| EfficiencyRow {
            n_ranks: n,
            measured_throughput: measured.get(&n).copied(),
            model_throughput: modeled[&n],
            measured_efficiency: eff_measured.as_ref().and_then(|e| e.get(&n).copied()),
            model_efficiency: eff_model[&n],
        })
        .collect();
    let mut out = inv.out()?;
    out.write_json("fit.json", true, &fit)?;
    out.write_csv("efficiency.csv", true, &rows)?;
    println!("alpha {:.12e}  beta {:.12e}  r2 {:.6}", fit.alpha, fit.beta, fit.r_squared);
    let resolved = serde_json::json!({ "input": path, "reference": s.reference, "mode": s.mode, "predict": s.predict });
    inv.finish(out, resolved)
}

#[derive(Serialize)]
struct RadiiRow {
    frame: usize,
    rg_x: f64,
    rg_y: f64,
    rg_z: f64,
}

#[derive(Serialize)]
struct StabilitySummary {
    pass: bool,
    x: StabilityReport,
    y: StabilityReport,
    z: StabilityReport,
}

pub fn cmd_gyrate(inv: &Invocation, trajectory: Option<&Path>) -> Result<()> {
    let s = &inv.cfg.gyrate;
    let path = trajectory
        .map(Path::to_path_buf)
        .or_else(|| s.trajectory.clone())
        .context("gyrate needs a trajectory (positional argument or gyrate.trajectory)")?;
    let frames = read_xyz_frames(&path)?;
    let first = frames.first().context("trajectory has no frames")?;
    let group: Vec<u64> = match &s.group {
        GroupSpec::Ids(ids) => ids.clone(),
        GroupSpec::All => first.atoms.global_ids.clone(),
        GroupSpec::Species(sp) => first
            .atoms
            .global_ids
            .iter()
            .zip(&first.atoms.species)
            .filter(|(_, s)| sp.contains(s))
            .map(|(id, _)| *id)
            .collect(),
    };
    let mut rows = Vec::with_capacity(frames.len());
    for f in &frames {
        let rg = gyration_radii(&f.atoms, &group, &f.sim_box)?;
        rows.push(RadiiRow {
            frame: f.index,
            rg_x: rg[0],
            rg_y: rg[1],
            rg_z: rg[2],
        });
    }
    let mut out = inv.out()?;
    out.write_csv("gyration.csv", true, &rows)?;
    let mut failed = false;
    if s.window > 0 {
        let axis = |k: usize| -> Vec<f64> {
            rows.iter()
                .map(|r| match k {
                    0 => r.rg_x,
                    1 => r.rg_y,
                    _ => r.rg_z,
                })
                .collect()
        };
        let x = stability_check(&axis(0), s.window, s.band)?;
        let y = stability_check(&axis(1), s.window, s.band)?;
        let z = stability_check(&axis(2), s.window, s.band)?;
        let pass = x.pass && y.pass && z.pass;
        failed = !pass;
        out.write_json("stability.json", true, &StabilitySummary { pass, x, y, z })?;
        println!("stability {}", if pass { "PASS" } else { "FAIL" });
    }
    let resolved = serde_json::json!({ "trajectory": path, "group": s.group, "window": s.window, "band": s.band });
    inv.finish(out, resolved)?;
    if failed {
        bail!("gyration radii left the stability band");
    }
    Ok(())
}

