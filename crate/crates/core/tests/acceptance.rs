//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fail.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nnpot_core::analysis::{
    beta_ratio_for_efficiency, fit_throughput, gyration_radii, load_imbalance, pearson, predict_throughput,
    scaling_efficiency, stability_check, ScalingMode,
};
use nnpot_core::classical::{evaluate_classical, LJParams};
use nnpot_core::decomp::{
    self, dd_evaluate, measure_sweep, CollectiveKind, CollectiveLedger, DdOptions, PayloadLayout, Scheme,
    REFERENCE_BYTES_PER_ATOM,
};
use nnpot_core::deeppot::data::{bulk_and_cluster, lj_oracle_frames};
use nnpot_core::deeppot::train::plateau_ratio;
use nnpot_core::deeppot::{evaluate_system, prepare_model, train, DPConfig, DPModel, TrainParams, TrainingSet};
use nnpot_core::engine::{build_providers, init_velocities, run_md, MDConfig, NnGroup, Potential};
use nnpot_core::neighbor::{brute_force_neighbors, build_neighbor_list, ListMode};
use nnpot_core::system::{lattice_init, random_configuration, AtomSet, SimBox};
use nnpot_core::trace::{
    export_chrome_trace, inference_times, phase_summary, read_chrome_trace, to_chrome_events, StepTrace,
};
use nnpot_core::vec3::{self, Vec3};

type Check = Result<String, String>;

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn report(id: usize, name: &str, started: Instant, result: Check) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match result {
        Ok(msg) => {
            println!("PASS {id:>2} {name}: {msg} [{secs:.1}s]");
            true
        }
        Err(msg) => {
            println!("FAIL {id:>2} {name}: {msg} [{secs:.1}s]");
            false
        }
    }
}

fn ensure(cond: bool, msg: String) -> Check {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn max_abs(v: &[Vec3]) -> f64 {
    v.iter().flat_map(|x| x.iter()).fold(0.0f64, |m, x| m.max(x.abs()))
}

fn max_diff(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| (0..3).map(move |k| (x[k] - y[k]).abs()))
        .fold(0.0, f64::max)
}

fn dd_sweep() -> Result<Vec<decomp::ValidationRow>, String> {
    let model = DPModel::new(DPConfig {
        rc: 1.5,
        rcs: 1.1,
        n_max: 64,
        ..DPConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rows = Vec::new();
    for c in 0..50 {
        let density = rng.gen_range(0.1..=0.6);
        let (bx, atoms) =
            decomp::random_validation_system(1.5, density, 256, 2, &mut rng).map_err(|e| e.to_string())?;
        rows.extend(
            decomp::validate_against_single_domain(
                c,
                &atoms,
                &bx,
                &model,
                &[1, 2, 3, 4, 8],
                &[Scheme::MaskedReduction, Scheme::WideHalo],
                workers(),
                1e-10,
                1e-9,
            )
            .map_err(|e| e.to_string())?,
        );
    }
    Ok(rows)
}

fn criterion_1(rows: &[decomp::ValidationRow], seconds: f64) -> Check {
    let own: Vec<_> = rows.iter().filter(|r| r.scheme != "cross").collect();
    let failed = own.iter().filter(|r| !r.pass).count();
    let e = own.iter().map(|r| r.energy_rel_err).fold(0.0, f64::max);
    let f = own.iter().map(|r| r.force_rel_err).fold(0.0, f64::max);
    let configs = own.iter().map(|r| r.config).max().map_or(0, |c| c + 1);
    ensure(
        failed == 0 && configs >= 50 && seconds < 300.0,
        format!(
            "{configs} configs, {} checks, {failed} failed, max energy rel {e:.2e}, max force rel {f:.2e}, {seconds:.0}s",
            own.len()
        ),
    )
}

fn criterion_2(rows: &[decomp::ValidationRow]) -> Check {
    let cross: Vec<_> = rows.iter().filter(|r| r.scheme == "cross").collect();
    let e = cross.iter().map(|r| r.energy_rel_err).fold(0.0, f64::max);
    let f = cross.iter().map(|r| r.force_rel_err).fold(0.0, f64::max);
    ensure(
        !cross.is_empty() && e <= 1e-9 && f <= 1e-9,
        format!("{} scheme pairs, max energy rel {e:.2e}, max force rel {f:.2e}", cross.len()),
    )
}

fn criterion_3() -> Check {
    let model = DPModel::new(DPConfig::default()).map_err(|e| e.to_string())?;
    let bx = SimBox::cubic(4.5).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let atoms = random_configuration(32, &bx, 2, 0.8, &mut rng).map_err(|e| e.to_string())?;
        let out = evaluate_system(&atoms, &bx, &model).map_err(|e| e.to_string())?;
        let mut fd = vec![[0.0; 3]; atoms.len()];
        for i in 0..atoms.len() {
            for k in 0..3 {
                let mut plus = atoms.clone();
                plus.positions[i][k] += h;
                let mut minus = atoms.clone();
                minus.positions[i][k] -= h;
                let ep = evaluate_system(&plus, &bx, &model).map_err(|e| e.to_string())?.energy;
                let em = evaluate_system(&minus, &bx, &model).map_err(|e| e.to_string())?.energy;
                fd[i][k] = -(ep - em) / (2.0 * h);
            }
        }
        worst = worst.max(decomp::max_force_rel_err(&out.forces, &fd, 1e-3));
    }
    ensure(worst < 1e-6, format!("20 configs of 32 atoms, max relative error {worst:.2e}"))
}

fn rotation_matrix(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let mut q: [f64; 4] = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
    for x in &mut q {
        *x -= 0.5;
    }
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn criterion_4() -> Check {
    let err = |e: nnpot_core::Error| e.to_string();
    let model = DPModel::new(DPConfig::default()).map_err(err)?;
    let rc = model.config.rc;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut notes = Vec::new();
    let mut ok = true;

    // permutation
    let bx = SimBox::cubic(4.5).map_err(err)?;
    let atoms = random_configuration(32, &bx, 2, 0.8, &mut rng).map_err(err)?;
    let base = evaluate_system(&atoms, &bx, &model).map_err(err)?;
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.shuffle(&mut rng);
    let permuted = atoms.subset(&order);
    let p = evaluate_system(&permuted, &bx, &model).map_err(err)?;
    let expected: Vec<Vec3> = order.iter().map(|&i| base.forces[i]).collect();
    let pe = (p.energy - base.energy).abs() / base.energy.abs();
    let pf = max_diff(&p.forces, &expected) / max_abs(&base.forces);
    ok &= pe < 1e-12 && pf < 1e-12;
    notes.push(format!("perm E {pe:.1e} F {pf:.1e}"));

    // rotation and translation in an open box
    let open = SimBox::new([30.0; 3], [false; 3]).map_err(err)?;
    let cluster_box = SimBox::new([4.5; 3], [false; 3]).map_err(err)?;
    let mut cluster = random_configuration(32, &cluster_box, 2, 0.8, &mut rng).map_err(err)?;
    for r in &mut cluster.positions {
        *r = vec3::add(*r, [12.75; 3]);
    }
    let c0 = evaluate_system(&cluster, &open, &model).map_err(err)?;
    let rot = rotation_matrix(&mut rng);
    let mut rotated = cluster.clone();
    for r in &mut rotated.positions {
        *r = vec3::add(vec3::mat_vec(&rot, vec3::sub(*r, [15.0; 3])), [15.0; 3]);
    }
    let c1 = evaluate_system(&rotated, &open, &model).map_err(err)?;
    let re = (c1.energy - c0.energy).abs() / c0.energy.abs();
    let turned: Vec<Vec3> = c0.forces.iter().map(|f| vec3::mat_vec(&rot, *f)).collect();
    let rf = max_diff(&c1.forces, &turned) / max_abs(&c0.forces);
    ok &= re < 1e-10 && rf < 1e-9;
    notes.push(format!("rot E {re:.1e} F {rf:.1e}"));

    let net = c0.forces.iter().fold([0.0; 3], |s, f| vec3::add(s, *f));
    let sum = net.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    ok &= sum < 1e-9;
    notes.push(format!("sum F {sum:.1e}"));

    // smoothness across the cutoff
    let mut dimer = AtomSet::default();
    dimer.push(0, 0, [10.0; 3], [0.0; 3], 1.0);
    dimer.push(1, 1, [10.0 + rc - 5e-9, 10.0, 10.0], [0.0; 3], 1.0);
    let inside = evaluate_system(&dimer, &open, &model).map_err(err)?.energy;
    dimer.positions[1][0] += 1e-8;
    let outside = evaluate_system(&dimer, &open, &model).map_err(err)?.energy;
    let de = (inside - outside).abs();
    ok &= de < 1e-10;
    notes.push(format!("cutoff dE {de:.1e}"));

    // locality: move an atom that stays beyond rc of atom 0
    let far = (1..atoms.len())
        .find(|&k| vec3::norm(bx.minimum_image(vec3::sub(atoms.positions[k], atoms.positions[0]))) > rc + 0.2)
        .ok_or("no atom beyond the cutoff")?;
    let mut moved = atoms.clone();
    moved.positions[far] = bx.wrap(vec3::add(moved.positions[far], [0.05, -0.04, 0.03]));
    let m = evaluate_system(&moved, &bx, &model).map_err(err)?;
    let local_same = m.atom_energies[0].to_bits() == base.atom_energies[0].to_bits();
    ok &= local_same;
    notes.push(format!("locality bit-exact {local_same}"));

    ensure(ok, notes.join(", "))
}

fn criterion_5() -> Check {
    let err = |e: nnpot_core::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_e = 0.0f64;
    let mut worst_f = 0.0f64;
    for c in 0..200 {
        let lengths = [rng.gen_range(3.0..8.0), rng.gen_range(3.0..8.0), rng.gen_range(3.0..8.0)];
        let periodic = [rng.gen_bool(0.8), rng.gen_bool(0.8), rng.gen_bool(0.8)];
        let bx = SimBox::new(lengths, periodic).map_err(err)?;
        let rc = rng.gen_range(0.8..lengths.iter().copied().fold(f64::MAX, f64::min) / 2.0);
        let n = rng.gen_range(2..120);
        let atoms = random_configuration(n, &bx, 1, 0.3, &mut rng).map_err(err)?;
        let full = build_neighbor_list(&atoms.positions, &bx, rc, ListMode::Full).map_err(err)?;
        let half = build_neighbor_list(&atoms.positions, &bx, rc, ListMode::Half).map_err(err)?;
        if full != brute_force_neighbors(&atoms.positions, &bx, rc, ListMode::Full).map_err(err)? {
            return Err(format!("config {c}: full cell list differs from brute force"));
        }
        if half != brute_force_neighbors(&atoms.positions, &bx, rc, ListMode::Half).map_err(err)? {
            return Err(format!("config {c}: half cell list differs from brute force"));
        }
        if full.unordered_pairs() != half.unordered_pairs() || full.pair_count() != 2 * half.pair_count() {
            return Err(format!("config {c}: half and full pair sets differ"));
        }
        let lj = LJParams::new(1.0, 0.6, rc).map_err(err)?;
        let (eh, fh) = evaluate_classical(&atoms.positions, &bx, &half, &lj).map_err(err)?;
        let (ef, ff) = evaluate_classical(&atoms.positions, &bx, &full, &lj).map_err(err)?;
        worst_e = worst_e.max((eh - ef).abs() / eh.abs().max(1.0));
        worst_f = worst_f.max(max_diff(&fh, &ff) / max_abs(&fh).max(1.0));
    }
    ensure(
        worst_e <= 1e-12 && worst_f <= 1e-12,
        format!("200 configs identical to brute force; classical half vs full E {worst_e:.1e} F {worst_f:.1e}"),
    )
}

fn criterion_6() -> Result<(String, DPModel), String> {
    let err = |e: nnpot_core::Error| e.to_string();
    let groups = bulk_and_cluster()
        .iter()
        .map(lj_oracle_frames)
        .collect::<nnpot_core::Result<Vec<_>>>()
        .map_err(err)?;
    let data = TrainingSet::split_groups(groups, 1).map_err(err)?;
    let mut model = DPModel::new(DPConfig {
        n_max: 48,
        n_attn: 0,
        ..DPConfig::default()
    })
    .map_err(err)?;
    prepare_model(&mut model, &data).map_err(err)?;
    let hp = TrainParams::default();
    let t0 = Instant::now();
    let (model, rep) = train(model, &data, &hp).map_err(err)?;
    let secs = t0.elapsed().as_secs_f64();
    let series: Vec<f64> = rep.curve.iter().map(|p| p.validation_rmse).collect();
    let factor = series[0] / rep.final_validation_rmse;
    let plateau = plateau_ratio(&series);
    let msg = format!(
        "validation force RMSE {:.3} -> {:.3} ({factor:.1}x), plateau ratio {plateau:.4}, {secs:.0}s",
        series[0], rep.final_validation_rmse
    );
    if factor >= 5.0 && plateau < 0.05 && secs < 600.0 {
        Ok((msg, model))
    } else {
        Err(msg)
    }
}

fn criterion_7() -> Check {
    let err = |e: nnpot_core::Error| e.to_string();
    let (alpha, beta) = (0.37, 0.021);
    let synthetic: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
        .iter()
        .map(|&n| (n, predict_throughput(alpha, beta, n).unwrap()))
        .collect();
    let fit = fit_throughput(&synthetic).map_err(err)?;
    let ra = (fit.alpha - alpha).abs() / alpha;
    let rb = (fit.beta - beta).abs() / beta;
    let synth_ok = ra < 1e-9 && rb < 1e-9 && (fit.r_squared - 1.0).abs() < 1e-12;

    let model = DPModel::new(DPConfig::default()).map_err(err)?;
    let (bx, base) = lattice_init(16, 0.8, &[0, 1]).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut atoms = base;
    let spacing = bx.lengths[0] / 16.0;
    for r in &mut atoms.positions {
        for x in r.iter_mut() {
            *x += 0.1 * spacing * (rng.gen::<f64>() - 0.5);
        }
        *r = bx.wrap(*r);
    }
    let (rows, timings) = measure_sweep(&[1, 2, 4, 8, 16], Scheme::MaskedReduction, workers(), 3, &model, |_| {
        Ok((bx, atoms.clone()))
    })
    .map_err(err)?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.n_ranks as f64, r.throughput)).collect();
    let measured = fit_throughput(&points).map_err(err)?;
    let load: Vec<f64> = timings.iter().map(|t| (t.locals + t.ghosts) as f64).collect();
    let busy: Vec<f64> = timings.iter().map(|t| t.busy_seconds).collect();
    let r = pearson(&load, &busy);
    ensure(
        synth_ok && measured.r_squared >= 0.95 && r >= 0.9,
        format!(
            "synthetic alpha/beta rel err {ra:.1e}/{rb:.1e}; N={} sweep r2 {:.4}, load-time pearson {r:.3}, workers {}",
            atoms.len(),
            measured.r_squared,
            workers()
        ),
    )
}

fn criterion_8() -> Check {
    let err = |e: nnpot_core::Error| e.to_string();
    let ratio = beta_ratio_for_efficiency(0.66, 16.0, 8.0).map_err(err)?;
    let (alpha, beta) = (1.0, ratio);
    let mut tr = BTreeMap::new();
    for n in [8u32, 16, 24, 32, 48, 64] {
        tr.insert(n, predict_throughput(alpha, beta, n as f64).map_err(err)?);
    }
    let eff = scaling_efficiency(&tr, 8, ScalingMode::Strong).map_err(err)?;
    let values: Vec<f64> = eff.values().copied().collect();
    let monotone = values.windows(2).all(|w| w[1] < w[0]);
    let (e16, e32) = (eff[&16], eff[&32]);
    ensure(
        (e16 - 0.66).abs() < 1e-12 && e32 < e16 && monotone,
        format!("beta/alpha {ratio:.5}, eff(16) {e16:.4}, implied eff(32) {e32:.4}, monotone {monotone}"),
    )
}

fn criterion_9(model: DPModel) -> Check {
    let err = |e: nnpot_core::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // classical solvent around a DP droplet
    let (bx, mut atoms) = lattice_init(8, 0.8, &[1]).map_err(err)?;
    let center = vec3::scale(bx.lengths, 0.5);
    for i in 0..atoms.len() {
        if vec3::norm(bx.minimum_image(vec3::sub(atoms.positions[i], center))) < 2.5 {
            atoms.species[i] = 0;
        }
    }
    init_velocities(&mut atoms, 0.5, &mut rng);
    let config = MDConfig {
        dt: 0.002,
        n_steps: 500,
        potential: Potential::DpSingle,
        nn_group: NnGroup::Species(vec![0]),
        output_every: 10,
        seed: 9,
        workers: 1,
    };
    let lj = LJParams::new(1.0, 1.0, 2.0).map_err(err)?;
    let mut providers = build_providers(&config, &atoms, &lj, Some(Arc::new(model))).map_err(err)?;
    let run = run_md(&bx, &atoms, &config, &mut providers).map_err(err)?;
    let group: Vec<u64> = atoms
        .global_ids
        .iter()
        .zip(&atoms.species)
        .filter(|(_, &s)| s == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut axes = [Vec::new(), Vec::new(), Vec::new()];
    for f in &run.frames {
        let rg = gyration_radii(&f.atoms, &group, &f.sim_box).map_err(err)?;
        for k in 0..3 {
            axes[k].push(rg[k]);
        }
    }
    let mut stable = true;
    let mut worst = 0.0f64;
    for series in &axes {
        let rep = stability_check(series, 10, 0.25).map_err(err)?;
        let blow_up = rep.window_means.windows(2).all(|w| w[1] > w[0]);
        stable &= rep.pass && !blow_up;
        worst = worst.max(rep.max_deviation);
    }

    // NVE classical baseline
    let (bx, mut atoms) = lattice_init(4, 0.8, &[0]).map_err(err)?;
    init_velocities(&mut atoms, 1.0, &mut rng);
    let nve = MDConfig {
        dt: 0.002,
        n_steps: 2000,
        potential: Potential::Classical,
        nn_group: NnGroup::All,
        output_every: 0,
        seed: 9,
        workers: 1,
    };
    let mut providers = build_providers(&nve, &atoms, &lj, None).map_err(err)?;
    let run_nve = run_md(&bx, &atoms, &nve, &mut providers).map_err(err)?;
    let drift = run_nve.summary.max_relative_energy_drift.ok_or("NVE run recorded no energies")?;
    ensure(
        stable && drift < 1e-3,
        format!(
            "{} NN atoms over 500 steps, max window deviation {worst:.3}, no monotone growth {stable}; NVE N=64 drift {drift:.2e}",
            group.len()
        ),
    )
}

fn criterion_10_11() -> (Check, Check) {
    let run = || -> Result<(Check, Check), String> {
        let err = |e: nnpot_core::Error| e.to_string();
        let model = DPModel::new(DPConfig {
            rc: 1.5,
            rcs: 1.1,
            ..DPConfig::default()
        })
        .map_err(err)?;
        // most atoms packed into one octant
        let bx = SimBox::cubic(8.0).map_err(err)?;
        let dense = SimBox::cubic(3.8).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let packed = random_configuration(60, &dense, 2, 0.8, &mut rng).map_err(err)?;
        let sparse = random_configuration(30, &bx, 2, 1.0, &mut rng).map_err(err)?;
        let mut atoms = AtomSet::default();
        for (k, r) in packed.positions.iter().enumerate() {
            atoms.push(k as u64, packed.species[k], vec3::add(*r, [0.1; 3]), [0.0; 3], 1.0);
        }
        for (k, r) in sparse.positions.iter().enumerate() {
            let clear = atoms.positions.iter().all(|p| vec3::norm(bx.minimum_image(vec3::sub(*p, *r))) > 0.8);
            if clear {
                atoms.push(1000 + k as u64, sparse.species[k], *r, [0.0; 3], 1.0);
            }
        }
        let trace = StepTrace::new();
        let mut ledger = CollectiveLedger::new(PayloadLayout::default());
        let opts = DdOptions {
            n_ranks: 8,
            scheme: Scheme::MaskedReduction,
            workers: workers(),
        };
        dd_evaluate(&atoms, &bx, &model, &opts, 0, &trace, &mut ledger).map_err(err)?;

        let spans = trace.spans();
        let times = inference_times(&spans, 0);
        let imb = load_imbalance(&times).map_err(err)?;
        let summary = phase_summary(&spans).map_err(err)?;
        let exact = summary.total_barrier_wait == imb.sync_overhead;
        let path = std::env::temp_dir().join(format!("acceptance_trace_{}.json", std::process::id()));
        export_chrome_trace(&trace, &path).map_err(err)?;
        let back = read_chrome_trace(&path).map_err(err)?;
        let _ = std::fs::remove_file(&path);
        let lossless = back == to_chrome_events(&spans);
        let c10 = format!(
            "lambda {:.3}, barrier wait {:.3e}s vs sync overhead {:.3e}s (exact {exact}), {} events re-parsed (lossless {lossless})",
            imb.lambda,
            summary.total_barrier_wait,
            imb.sync_overhead,
            back.len()
        );
        let c10_ok = imb.lambda > 0.2 && exact && lossless;

        let layout = ledger.layout;
        let mut bytes_ok = !ledger.records.is_empty();
        for rec in &ledger.records {
            let per = match rec.kind {
                CollectiveKind::GatherPositions => layout.gather_bytes_per_atom(),
                CollectiveKind::ReduceForces => layout.reduce_bytes_per_atom(),
            };
            bytes_ok &= rec.bytes == rec.atoms * per;
        }
        let s = ledger.summary();
        let c11 = format!(
            "{} gathers {} B, {} reduces {} B, {} / {} B per atom, reference {} B per atom",
            s.gathers,
            s.gather_bytes,
            s.reduces,
            s.reduce_bytes,
            s.gather_bytes_per_atom,
            s.reduce_bytes_per_atom,
            s.reference_bytes_per_atom
        );
        let c11_ok = bytes_ok && s.reference_bytes_per_atom == REFERENCE_BYTES_PER_ATOM;
        Ok((ensure(c10_ok, c10), ensure(c11_ok, c11)))
    };
    run().unwrap_or_else(|e| (Err(e.clone()), Err(e)))
}

fn main() {
    let mut all = true;

    let t = Instant::now();
    let sweep = dd_sweep();
    let secs = t.elapsed().as_secs_f64();
    match &sweep {
        Ok(rows) => {
            all &= report(1, "dd oracle", t, criterion_1(rows, secs));
            all &= report(2, "cross-scheme", t, criterion_2(rows));
        }
        Err(e) => {
            all &= report(1, "dd oracle", t, Err(e.clone()));
            all &= report(2, "cross-scheme", t, Err(e.clone()));
        }
    }

    let t = Instant::now();
    all &= report(3, "gradient", t, criterion_3());
    let t = Instant::now();
    all &= report(4, "symmetry", t, criterion_4());
    let t = Instant::now();
    all &= report(5, "neighbor oracle", t, criterion_5());

    let t = Instant::now();
    let trained = criterion_6();
    all &= report(6, "training", t, trained.as_ref().map(|(m, _)| m.clone()).map_err(Clone::clone));

    let t = Instant::now();
    all &= report(7, "throughput fit", t, criterion_7());
    let t = Instant::now();
    all &= report(8, "efficiency", t, criterion_8());

    let t = Instant::now();
    let c9 = match trained {
        Ok((_, model)) => criterion_9(model),
        Err(_) => Err("needs the trained model from criterion 6".into()),
    };
    all &= report(9, "stability", t, c9);

    let t = Instant::now();
    let (c10, c11) = criterion_10_11();
    all &= report(10, "imbalance trace", t, c10);
    all &= report(11, "ledger", t, c11);

    if !all {
        std::process::exit(1);
    }
}
