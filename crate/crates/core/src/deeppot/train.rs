//! Gradient-descent training on energy and force labels.
//!
//! The force term of the loss needs the mixed derivative `∂²E/∂θ∂x`. It is
//! obtained as a central difference of the exact parameter gradient `∂E/∂θ`
//! along the displacement field `δ = 2w_f/(3N)·(F - F_ref)`, which costs two
//! extra backward passes per frame.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_inner, force_rmse, ParamGrad};
use super::model::DPModel;
use super::descriptor::forward_center;
use crate::neighbor::{build_neighbor_list, ListMode};
use crate::system::{AtomSet, SimBox};
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainFrame {
    pub sim_box: SimBox,
    pub atoms: AtomSet,
    pub energy: f64,
    pub forces: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub frames: Vec<TrainFrame>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl TrainingSet {
    /// Uses the last `n_validation` frames for validation.
    pub fn split_tail(frames: Vec<TrainFrame>, n_validation: usize) -> Result<Self> {
        let n = frames.len();
        if n_validation >= n {
            return Err(Error::InvalidInput(format!(
                "{n} frames leave no training data after holding out {n_validation}"
            )));
        }
        let set = TrainingSet {
            train: (0..n - n_validation).collect(),
            validation: (n - n_validation..n).collect(),
            frames,
        };
        set.validate()?;
        Ok(set)
    }

    /// Concatenates several frame groups, holding out the last `n_validation`
    /// frames of each group.
    pub fn split_groups(groups: Vec<Vec<TrainFrame>>, n_validation: usize) -> Result<Self> {
        let mut set = TrainingSet {
            frames: Vec::new(),
            train: Vec::new(),
            validation: Vec::new(),
        };
        for g in groups {
            let n = g.len();
            if n_validation >= n {
                return Err(Error::InvalidInput(format!(
                    "a group of {n} frames leaves no training data after holding out {n_validation}"
                )));
            }
            let base = set.frames.len();
            set.train.extend(base..base + n - n_validation);
            set.validation.extend(base + n - n_validation..base + n);
            set.frames.extend(g);
        }
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::InvalidInput("training split is empty".into()));
        }
        let mut all: Vec<usize> = self.train.iter().chain(&self.validation).copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("train and validation splits overlap".into()));
        }
        if all.last().is_some_and(|&i| i >= self.frames.len()) {
            return Err(Error::InvalidInput("split index out of range".into()));
        }
        for f in &self.frames {
            if f.forces.len() != f.atoms.len() || !f.energy.is_finite() || !f.forces.iter().all(|v| vec3::is_finite(*v)) {
                return Err(Error::InvalidInput("frame labels are inconsistent or non-finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_stop: f64,
    /// Frames per parameter update; 0 means the whole training split.
    pub batch: usize,
    pub w_energy: f64,
    pub w_force: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 2000,
            lr_start: 3e-3,
            lr_stop: 3e-5,
            batch: 1,
            w_energy: 0.1,
            w_force: 1.0,
            optimizer: Optimizer::Adam,
            seed: 1,
        }
    }
}

impl TrainParams {
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs == 0 {
            return self.lr_start;
        }
        self.lr_start * (self.lr_stop / self.lr_start).powf(epoch as f64 / self.epochs as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean loss over the epoch's batches.
    pub loss: f64,
    /// Force RMSE on the training split, accumulated over the epoch's batches
    /// before each update.
    pub train_rmse: f64,
    /// Force RMSE on the validation split with the parameters at the start of
    /// the epoch.
    pub validation_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub final_train_rmse: f64,
    pub final_validation_rmse: f64,
}

/// Sets the descriptor standardisation from the training frames and the
/// energy bias so that the mean predicted atomic energy matches the labels.
pub fn prepare_model(model: &mut DPModel, data: &TrainingSet) -> Result<()> {
    data.validate()?;
    let dlen = model.config.descriptor_len();
    model.fit_shift = vec![0.0; dlen];
    model.fit_scale = vec![1.0; dlen];
    let mut descriptors = Vec::new();
    for &f in &data.train {
        let frame = &data.frames[f];
        let nl = build_neighbor_list(&frame.atoms.positions, &frame.sim_box, model.config.rc, ListMode::Full)?;
        for i in 0..frame.atoms.len() {
            let env = super::eval::build_environment(i, &nl, &frame.atoms, &frame.sim_box, model)?;
            descriptors.push(forward_center(&env, model).descriptor);
        }
    }
    let count = descriptors.len() as f64;
    let mut mean = vec![0.0; dlen];
    for d in &descriptors {
        for (m, x) in mean.iter_mut().zip(d) {
            *m += x / count;
        }
    }
    let mut var = vec![0.0; dlen];
    for d in &descriptors {
        for ((v, x), m) in var.iter_mut().zip(d).zip(&mean) {
            *v += (x - m).powi(2) / count;
        }
    }
    model.fit_shift = mean;
    model.fit_scale = var
        .iter()
        .map(|v| if v.sqrt() > 1e-12 { 1.0 / v.sqrt() } else { 1.0 })
        .collect();

    let mut predicted = 0.0;
    let mut reference = 0.0;
    let mut atoms = 0.0;
    for &f in &data.train {
        let frame = &data.frames[f];
        let out = super::eval::evaluate_system(&frame.atoms, &frame.sim_box, model)?;
        predicted += out.energy;
        reference += frame.energy;
        atoms += frame.atoms.len() as f64;
    }
    *model.energy_bias_mut() += (reference - predicted) / atoms;
    Ok(())
}

struct FrameResult {
    loss: f64,
    sq_force_err: f64,
    components: usize,
}

/// Accumulates `scale·∂loss/∂θ` of one frame into `grad`.
fn frame_gradient(model: &DPModel, frame: &TrainFrame, hp: &TrainParams, scale: f64, grad: &mut DPModel) -> Result<FrameResult> {
    let n = frame.atoms.len();
    let nf = n as f64;
    let rc = model.config.rc;
    let nl = build_neighbor_list(&frame.atoms.positions, &frame.sim_box, rc, ListMode::Full)?;
    let mut g_e = model.zeros_like();
    let out = evaluate_inner(
        &frame.atoms,
        &frame.sim_box,
        &nl,
        model,
        None,
        Some(ParamGrad { de: 1.0, grad: &mut g_e }),
    )?;
    let de = (out.energy - frame.energy) / nf;
    let mut sq = 0.0;
    let mut delta = Vec::with_capacity(n);
    let kf = 2.0 * hp.w_force / (3.0 * nf) * scale;
    for (f, fr) in out.forces.iter().zip(&frame.forces) {
        let d = vec3::sub(*f, *fr);
        sq += vec3::dot(d, d);
        delta.push(vec3::scale(d, kf));
    }
    let loss = hp.w_energy * de * de + hp.w_force * sq / (3.0 * nf);

    let ke = 2.0 * hp.w_energy * de / nf * scale;
    for (g, e) in grad.tensors_mut().into_iter().zip(g_e.tensors()) {
        for (a, b) in g.iter_mut().zip(e.iter()) {
            *a += ke * b;
        }
    }

    let dmax = delta.iter().flat_map(|v| v.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
    if hp.w_force > 0.0 && dmax > 0.0 {
        let eps = 1e-6 / dmax;
        for sign in [1.0, -1.0] {
            let mut shifted = frame.atoms.clone();
            for (r, d) in shifted.positions.iter_mut().zip(&delta) {
                *r = frame.sim_box.wrap(vec3::add(*r, vec3::scale(*d, sign * eps)));
            }
            let nl = build_neighbor_list(&shifted.positions, &frame.sim_box, rc, ListMode::Full)?;
            // loss_f gradient is -D_δ(∂E/∂θ)
            evaluate_inner(
                &shifted,
                &frame.sim_box,
                &nl,
                model,
                None,
                Some(ParamGrad {
                    de: -sign / (2.0 * eps),
                    grad,
                }),
            )?;
        }
    }
    Ok(FrameResult {
        loss,
        sq_force_err: sq,
        components: 3 * n,
    })
}

/// Force RMSE of `model` over a list of frames.
pub fn dataset_rmse(model: &DPModel, data: &TrainingSet, frames: &[usize]) -> Result<f64> {
    let mut sq = 0.0;
    let mut count = 0usize;
    for &f in frames {
        let frame = &data.frames[f];
        let out = super::eval::evaluate_system(&frame.atoms, &frame.sim_box, model)?;
        let r = force_rmse(&out.forces, &frame.forces);
        sq += r * r * (3 * frame.atoms.len()) as f64;
        count += 3 * frame.atoms.len();
    }
    Ok(if count > 0 { (sq / count as f64).sqrt() } else { 0.0 })
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Trains `model` and returns it with the per-epoch RMSE curve. Call
/// [`prepare_model`] first for a fresh model.
pub fn train(mut model: DPModel, data: &TrainingSet, hp: &TrainParams) -> Result<(DPModel, TrainReport)> {
    data.validate()?;
    let batch = if hp.batch == 0 { data.train.len() } else { hp.batch.min(data.train.len()) };
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order = data.train.clone();
    let mut curve = Vec::with_capacity(hp.epochs);
    let n_params = model.parameter_count();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut checkpoint = model.clone();
    for epoch in 0..hp.epochs {
        let lr = hp.learning_rate(epoch);
        let validation_rmse = if data.validation.is_empty() {
            f64::NAN
        } else {
            dataset_rmse(&model, data, &data.validation)?
        };
        if batch < data.train.len() {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut sq = 0.0;
        let mut comps = 0usize;
        for chunk in order.chunks(batch) {
            let mut grad = model.zeros_like();
            let scale = 1.0 / chunk.len() as f64;
            for &f in chunk {
                let r = frame_gradient(&model, &data.frames[f], hp, scale, &mut grad)?;
                loss_sum += r.loss / data.train.len() as f64;
                sq += r.sq_force_err;
                comps += r.components;
            }
            let g = grad.flat_params();
            let mut p = model.flat_params();
            match hp.optimizer {
                Optimizer::Sgd => {
                    for (x, gx) in p.iter_mut().zip(&g) {
                        *x -= lr * gx;
                    }
                }
                Optimizer::Adam => {
                    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                    adam.t += 1;
                    let c1 = 1.0 - b1.powi(adam.t);
                    let c2 = 1.0 - b2.powi(adam.t);
                    for k in 0..p.len() {
                        adam.m[k] = b1 * adam.m[k] + (1.0 - b1) * g[k];
                        adam.v[k] = b2 * adam.v[k] + (1.0 - b2) * g[k] * g[k];
                        p[k] -= lr * (adam.m[k] / c1) / ((adam.v[k] / c2).sqrt() + eps);
                    }
                }
            }
            model.set_flat_params(&p);
        }
        if !loss_sum.is_finite() || !model.all_finite() {
            return Err(Error::Diverged {
                epoch,
                checkpoint: Box::new(checkpoint),
            });
        }
        checkpoint = model.clone();
        curve.push(CurvePoint {
            epoch,
            learning_rate: lr,
            loss: loss_sum,
            train_rmse: (sq / comps as f64).sqrt(),
            validation_rmse,
        });
    }
    let final_train_rmse = dataset_rmse(&model, data, &data.train)?;
    let final_validation_rmse = if data.validation.is_empty() {
        f64::NAN
    } else {
        dataset_rmse(&model, data, &data.validation)?
    };
    Ok((
        model,
        TrainReport {
            curve,
            final_train_rmse,
            final_validation_rmse,
        },
    ))
}

/// Least-squares slope of `y` against index over `y`.
fn slope(y: &[f64]) -> f64 {
    let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
    crate::analysis::linear_regression(&x, y).0
}

/// Plateau test: the magnitude of the last-quartile slope is below `fraction`
/// of the first-quartile slope.
pub fn plateau_ratio(series: &[f64]) -> f64 {
    let q = (series.len() / 4).max(2);
    if series.len() < 2 * q {
        return f64::NAN;
    }
    let first = slope(&series[..q]);
    let last = slope(&series[series.len() - q..]);
    (last / first).abs()
}

pub fn write_curve_csv(report: &TrainReport, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in &report.curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deeppot::model::DPConfig;
    use crate::system::random_configuration;

    fn tiny_set() -> (DPModel, TrainingSet) {
        let model = DPModel::new(DPConfig {
            rc: 1.6,
            rcs: 1.2,
            n_attn: 1,
            embed_hidden: vec![8],
            fit_hidden: vec![8],
            ..DPConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bx = SimBox::cubic(3.4).unwrap();
        let frames = (0..3)
            .map(|k| {
                let atoms = random_configuration(12, &bx, 2, 0.9, &mut rng).unwrap();
                let forces = atoms
                    .positions
                    .iter()
                    .map(|r| [0.1 * (r[0] - 1.7), -0.2 * k as f64, 0.05])
                    .collect();
                TrainFrame {
                    sim_box: bx,
                    atoms,
                    energy: -3.0 + k as f64,
                    forces,
                }
            })
            .collect();
        (model, TrainingSet::split_tail(frames, 1).unwrap())
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (mut model, data) = tiny_set();
        prepare_model(&mut model, &data).unwrap();
        let hp = TrainParams::default();
        let frame = &data.frames[0];
        let mut grad = model.zeros_like();
        frame_gradient(&model, frame, &hp, 1.0, &mut grad).unwrap();
        let loss = |m: &DPModel| {
            let mut scratch = m.zeros_like();
            frame_gradient(m, frame, &hp, 1.0, &mut scratch).unwrap().loss
        };
        let h = 1e-5;
        let n_tensors = model.trainable_tensor_count();
        for ti in 0..n_tensors {
            let len = model.tensors()[ti].len();
            for idx in [0, len - 1] {
                let mut p = model.clone();
                p.tensors_mut()[ti][idx] += h;
                let mut m = model.clone();
                m.tensors_mut()[ti][idx] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let an = grad.tensors()[ti][idx];
                assert!((fd - an).abs() < 1e-5 * an.abs().max(1e-2), "tensor {ti}[{idx}]: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (model, data) = tiny_set();
        let hp = TrainParams {
            epochs: 0,
            ..TrainParams::default()
        };
        let (out, report) = train(model.clone(), &data, &hp).unwrap();
        assert_eq!(out, model);
        assert!(report.curve.is_empty());
    }

    #[test]
    fn prepare_matches_mean_energy() {
        let (mut model, data) = tiny_set();
        prepare_model(&mut model, &data).unwrap();
        let mut pred = 0.0;
        let mut reference = 0.0;
        for &f in &data.train {
            let fr = &data.frames[f];
            pred += super::super::eval::evaluate_system(&fr.atoms, &fr.sim_box, &model).unwrap().energy;
            reference += fr.energy;
        }
        assert!((pred - reference).abs() < 1e-9);
    }

    #[test]
    fn divergence_returns_checkpoint() {
        let (mut model, data) = tiny_set();
        prepare_model(&mut model, &data).unwrap();
        let hp = TrainParams {
            epochs: 50,
            lr_start: 1e12,
            lr_stop: 1e12,
            optimizer: Optimizer::Sgd,
            ..TrainParams::default()
        };
        match train(model, &data, &hp) {
            Err(Error::Diverged { checkpoint, .. }) => assert!(checkpoint.all_finite()),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.1.curve.len())),
        }
    }

    #[test]
    fn single_frame_overfit_descends() {
        let p = crate::deeppot::data::OracleParams {
            n_per_axis: 3,
            density: 0.3,
            equilibration_steps: 20,
            n_frames: 1,
            ..Default::default()
        };
        let frames = crate::deeppot::data::lj_oracle_frames(&p).unwrap();
        let data = TrainingSet {
            frames,
            train: vec![0],
            validation: vec![],
        };
        let mut model = DPModel::new(DPConfig {
            n_attn: 0,
            ..DPConfig::default()
        })
        .unwrap();
        prepare_model(&mut model, &data).unwrap();
        let hp = TrainParams {
            epochs: 100,
            lr_start: 1e-3,
            lr_stop: 1e-3,
            optimizer: Optimizer::Sgd,
            ..TrainParams::default()
        };
        let (_, report) = train(model, &data, &hp).unwrap();
        let rmse: Vec<f64> = report.curve.iter().map(|c| c.train_rmse).collect();
        for (k, w) in rmse.windows(2).enumerate() {
            assert!(w[1] < w[0], "epoch {}: {} -> {}", k + 1, w[0], w[1]);
        }
    }

    #[test]
    fn split_rules() {
        let (_, data) = tiny_set();
        assert!(TrainingSet::split_tail(data.frames.clone(), 3).is_err());
        let mut bad = data.clone();
        bad.validation = vec![0];
        assert!(bad.validate().is_err());

        let n = data.frames.len();
        let set = TrainingSet::split_groups(vec![data.frames.clone(), data.frames.clone()], 1).unwrap();
        assert_eq!(set.validation, vec![n - 1, 2 * n - 1]);
        assert_eq!(set.train.len(), 2 * (n - 1));
        assert!(TrainingSet::split_groups(vec![data.frames.clone(), data.frames[..1].to_vec()], 1).is_err());
    }

    #[test]
    fn learning_rate_schedule() {
        let hp = TrainParams {
            epochs: 10,
            lr_start: 1e-2,
            lr_stop: 1e-4,
            ..TrainParams::default()
        };
        assert_eq!(hp.learning_rate(0), 1e-2);
        assert!((hp.learning_rate(5) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn plateau_of_decaying_series() {
        let s: Vec<f64> = (0..400).map(|i| (-(i as f64) / 40.0).exp()).collect();
        assert!(plateau_ratio(&s) < 0.05);
        let line: Vec<f64> = (0..400).map(|i| -(i as f64)).collect();
        assert!((plateau_ratio(&line) - 1.0).abs() < 1e-12);
    }
}
