//! Training frames labelled by the classical LJ potential.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::TrainFrame;
use crate::classical::{evaluate_classical, LJParams};
use crate::engine::{equilibrate, init_velocities, leapfrog_step};
use crate::neighbor::{build_neighbor_list, ListMode};
use crate::system::lattice_init;
use crate::vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleParams {
    pub n_per_axis: usize,
    pub density: f64,
    pub temperature: f64,
    pub lj: LJParams,
    pub dt: f64,
    /// Pre-run steps with velocity rescaling.
    pub equilibration_steps: usize,
    /// NVE steps between sampled frames.
    pub stride: usize,
    pub n_frames: usize,
    pub species_pattern: Vec<usize>,
    /// When positive, only lattice sites within this distance of the box center
    /// are kept, giving a cluster with a free surface.
    pub cluster_radius: f64,
    pub seed: u64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            n_per_axis: 4,
            density: 0.8,
            temperature: 1.0,
            lj: LJParams {
                rc: 2.0,
                ..LJParams::default()
            },
            dt: 0.004,
            equilibration_steps: 300,
            stride: 50,
            n_frames: 10,
            species_pattern: vec![0, 1],
            cluster_radius: 0.0,
            seed: 7,
        }
    }
}

/// Bulk liquid frames plus single-species cluster frames. A model fit only to
/// bulk frames underbinds free surfaces.
pub fn bulk_and_cluster() -> Vec<OracleParams> {
    vec![
        OracleParams::default(),
        OracleParams {
            n_per_axis: 8,
            temperature: 0.6,
            species_pattern: vec![0],
            cluster_radius: 2.6,
            n_frames: 6,
            ..OracleParams::default()
        },
    ]
}

/// Samples frames from a classical trajectory started on a lattice and labels
/// them with LJ energies and forces.
pub fn lj_oracle_frames(p: &OracleParams) -> Result<Vec<TrainFrame>> {
    if p.n_frames == 0 || p.stride == 0 {
        return Err(Error::InvalidInput("need n_frames >= 1 and stride >= 1".into()));
    }
    p.lj.validate()?;
    let (bx, mut atoms) = lattice_init(p.n_per_axis, p.density, &p.species_pattern)?;
    bx.check_cutoff(p.lj.rc)?;
    if p.cluster_radius > 0.0 {
        let center = vec3::scale(bx.lengths, 0.5);
        let keep: Vec<usize> = (0..atoms.len())
            .filter(|&i| vec3::norm(bx.minimum_image(vec3::sub(atoms.positions[i], center))) < p.cluster_radius)
            .collect();
        if keep.len() < 2 {
            return Err(Error::InvalidInput(format!("cluster radius {} keeps fewer than 2 atoms", p.cluster_radius)));
        }
        atoms = atoms.subset(&keep);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    init_velocities(&mut atoms, p.temperature, &mut rng);
    equilibrate(&bx, &mut atoms, &p.lj, p.temperature, p.dt, p.equilibration_steps, 10)?;
    let mut frames = Vec::with_capacity(p.n_frames);
    let mut step = 0usize;
    while frames.len() < p.n_frames {
        let nl = build_neighbor_list(&atoms.positions, &bx, p.lj.rc, ListMode::Half)?;
        let (energy, forces) = evaluate_classical(&atoms.positions, &bx, &nl, &p.lj)?;
        if step % p.stride == 0 {
            frames.push(TrainFrame {
                sim_box: bx,
                atoms: atoms.clone(),
                energy,
                forces: forces.clone(),
            });
        }
        leapfrog_step(&mut atoms, &forces, p.dt, &bx);
        step += 1;
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_carry_classical_labels() {
        let p = OracleParams {
            n_per_axis: 3,
            density: 0.3,
            equilibration_steps: 20,
            stride: 5,
            n_frames: 3,
            lj: LJParams {
                rc: 2.0,
                ..LJParams::default()
            },
            ..OracleParams::default()
        };
        let frames = lj_oracle_frames(&p).unwrap();
        assert_eq!(frames.len(), 3);
        for f in &frames {
            let nl = build_neighbor_list(&f.atoms.positions, &f.sim_box, 2.0, ListMode::Full).unwrap();
            let (e, forces) = evaluate_classical(&f.atoms.positions, &f.sim_box, &nl, &p.lj).unwrap();
            assert!((e - f.energy).abs() < 1e-10);
            assert_eq!(forces.len(), 27);
        }
        assert_ne!(frames[0].atoms.positions, frames[1].atoms.positions);
        assert_eq!(lj_oracle_frames(&p).unwrap(), frames);
    }

    #[test]
    fn cluster_frames_keep_atoms_near_center() {
        let p = OracleParams {
            n_per_axis: 6,
            cluster_radius: 1.5,
            equilibration_steps: 0,
            n_frames: 1,
            ..OracleParams::default()
        };
        let frames = lj_oracle_frames(&p).unwrap();
        let n = frames[0].atoms.len();
        assert!(n > 2 && n < 216, "{n}");
        let bad = OracleParams {
            cluster_radius: 1e-3,
            ..p
        };
        assert!(lj_oracle_frames(&bad).is_err());
    }
}
