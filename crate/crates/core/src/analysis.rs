//! Validation observables and scaling metrics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::system::{AtomSet, SimBox};
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

fn mass_weighted_center(points: &[Vec3], masses: &[f64]) -> Vec3 {
    let mut c = [0.0; 3];
    let mut m_tot = 0.0;
    for (r, &m) in points.iter().zip(masses) {
        vec3::add_assign(&mut c, vec3::scale(*r, m));
        m_tot += m;
    }
    vec3::scale(c, 1.0 / m_tot)
}

/// Unwraps a group into a compact cluster: each atom is moved to the image
/// nearest a reference point, first the first atom, then the resulting COM.
pub fn unwrap_group(positions: &[Vec3], masses: &[f64], bx: &SimBox) -> Vec<Vec3> {
    if positions.is_empty() {
        return Vec::new();
    }
    let mut reference = positions[0];
    let mut out = positions.to_vec();
    for _ in 0..2 {
        out = positions
            .iter()
            .map(|r| vec3::add(reference, bx.minimum_image(vec3::sub(*r, reference))))
            .collect();
        reference = mass_weighted_center(&out, masses);
    }
    out
}

/// Radii of gyration about the x, y and z axes through the group COM.
pub fn gyration_radii(atoms: &AtomSet, group: &[u64], bx: &SimBox) -> Result<Vec3> {
    if group.is_empty() {
        return Err(Error::InvalidInput("gyration group is empty".into()));
    }
    let index: BTreeMap<u64, usize> = atoms.global_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut pos = Vec::with_capacity(group.len());
    let mut masses = Vec::with_capacity(group.len());
    for id in group {
        let &i = index
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("group id {id} not present")))?;
        pos.push(atoms.positions[i]);
        masses.push(atoms.masses[i]);
    }
    let unwrapped = unwrap_group(&pos, &masses, bx);
    let com = mass_weighted_center(&unwrapped, &masses);
    let m_tot: f64 = masses.iter().sum();
    let mut acc = [0.0; 3];
    for (r, &m) in unwrapped.iter().zip(&masses) {
        let d = vec3::sub(*r, com);
        acc[0] += m * (d[1] * d[1] + d[2] * d[2]);
        acc[1] += m * (d[0] * d[0] + d[2] * d[2]);
        acc[2] += m * (d[0] * d[0] + d[1] * d[1]);
    }
    Ok([(acc[0] / m_tot).sqrt(), (acc[1] / m_tot).sqrt(), (acc[2] / m_tot).sqrt()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub pass: bool,
    pub initial_mean: f64,
    pub window_means: Vec<f64>,
    /// Largest |window mean / initial mean - 1|.
    pub max_deviation: f64,
    /// Least-squares slope of the series per sample.
    pub drift_slope: f64,
}

/// Windowed-mean stability test on a scalar series.
pub fn stability_check(series: &[f64], window: usize, band: f64) -> Result<StabilityReport> {
    if window == 0 || series.len() < window {
        return Err(Error::InvalidInput(format!(
            "series of length {} is shorter than window {window}",
            series.len()
        )));
    }
    let window_means: Vec<f64> = series
        .chunks_exact(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    let initial_mean = window_means[0];
    let max_deviation = window_means
        .iter()
        .map(|m| {
            if initial_mean != 0.0 {
                (m / initial_mean - 1.0).abs()
            } else {
                (m - initial_mean).abs()
            }
        })
        .fold(0.0, f64::max);
    let xs: Vec<f64> = (0..series.len()).map(|i| i as f64).collect();
    let drift_slope = if series.len() >= 2 {
        linear_regression(&xs, series).0
    } else {
        0.0
    };
    let pass = max_deviation <= band && window_means.iter().all(|m| m.is_finite());
    Ok(StabilityReport {
        pass,
        initial_mean,
        window_means,
        max_deviation,
        drift_slope,
    })
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Throughput model `tr = 1 / (alpha/n_p + beta)`.
pub fn predict_throughput(alpha: f64, beta: f64, n_p: f64) -> Result<f64> {
    if !(n_p >= 1.0) {
        return Err(Error::InvalidInput(format!("rank count must be >= 1, got {n_p}")));
    }
    if alpha == 0.0 && beta == 0.0 {
        return Err(Error::InvalidInput("alpha = beta = 0 gives unbounded throughput".into()));
    }
    Ok(1.0 / (alpha / n_p + beta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
    /// Residuals of `1/tr` at each input point.
    pub residuals: Vec<f64>,
}

impl ScalingFit {
    pub fn predict(&self, n_p: f64) -> Result<f64> {
        predict_throughput(self.alpha, self.beta, n_p)
    }
}

/// Least squares on `1/tr = alpha·(1/n_p) + beta`, coefficients clamped at 0.
pub fn fit_throughput(points: &[(f64, f64)]) -> Result<ScalingFit> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidInput("fit needs at least two distinct rank counts".into()));
    }
    if points.iter().any(|&(n, tr)| !(n > 0.0) || !(tr > 0.0)) {
        return Err(Error::InvalidInput("rank counts and throughputs must be positive".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| 1.0 / p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| 1.0 / p.1).collect();
    let (mut alpha, mut beta) = linear_regression(&x, &y);
    if alpha < 0.0 {
        alpha = 0.0;
        beta = y.iter().sum::<f64>() / y.len() as f64;
    }
    if beta < 0.0 {
        beta = 0.0;
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        alpha = (sxy / sxx).max(0.0);
    }
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - (alpha * a + beta)).collect();
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(ScalingFit {
        alpha,
        beta,
        r_squared,
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Strong,
    /// System grows with the rank count; throughputs are per replica.
    Weak,
}

/// Efficiency relative to `reference`. Strong: `(tr(n)/tr(ref))·(ref/n)`.
/// Weak: `tr(n)/tr(ref)` with `tr` the per-replica throughput.
pub fn scaling_efficiency(
    throughputs: &BTreeMap<u32, f64>,
    reference: u32,
    mode: ScalingMode,
) -> Result<BTreeMap<u32, f64>> {
    let &tr_ref = throughputs
        .get(&reference)
        .ok_or_else(|| Error::InvalidInput(format!("reference rank count {reference} missing")))?;
    let r = reference as f64;
    Ok(throughputs
        .iter()
        .map(|(&n, &tr)| {
            let n_f = n as f64;
            let eff = match mode {
                ScalingMode::Strong => (tr / tr_ref) * (r / n_f),
                ScalingMode::Weak => tr / tr_ref,
            };
            (n, eff)
        })
        .collect())
}

/// `beta/alpha` ratio for which the model gives strong-scaling efficiency
/// `eff` at `n` ranks relative to `reference`.
pub fn beta_ratio_for_efficiency(eff: f64, n: f64, reference: f64) -> Result<f64> {
    let denom = eff * n - reference;
    if !(eff > 0.0 && eff <= 1.0) || denom <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "efficiency {eff} at {n} ranks (reference {reference}) is not reachable"
        )));
    }
    Ok((1.0 - eff) / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub seconds: Vec<f64>,
    pub lambda: f64,
    pub sync_overhead: f64,
}

pub fn load_imbalance(seconds: &[f64]) -> Result<ImbalanceReport> {
    if seconds.is_empty() {
        return Err(Error::InvalidInput("load imbalance needs at least one rank".into()));
    }
    let max = seconds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = seconds.iter().sum::<f64>() / seconds.len() as f64;
    let lambda = if mean > 0.0 { (max / mean - 1.0).max(0.0) } else { 0.0 };
    let sync_overhead = seconds.iter().map(|t| max - t).sum();
    Ok(ImbalanceReport {
        seconds: seconds.to_vec(),
        lambda,
        sync_overhead,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_ranks: u32,
    pub throughput: f64,
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize::<SweepPoint>() {
        let row = row?;
        out.push((row.n_ranks as f64, row.throughput));
    }
    Ok(out)
}
