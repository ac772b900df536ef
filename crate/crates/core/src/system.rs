//! Simulation cell and particle state in reduced Lennard-Jones units
//! (σ = ε = m = 1).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::vec3::{self, Vec3};
use crate::{Error, Result};

/// Orthorhombic simulation cell anchored at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimBox {
    pub lengths: Vec3,
    pub periodic: [bool; 3],
}

impl SimBox {
    pub fn new(lengths: Vec3, periodic: [bool; 3]) -> Result<Self> {
        if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "box lengths must be finite and positive, got {lengths:?}"
            )));
        }
        Ok(SimBox { lengths, periodic })
    }

    pub fn cubic(length: f64) -> Result<Self> {
        Self::new([length; 3], [true; 3])
    }

    /// Same lengths, all axes open. Used for subsystems that carry explicit
    /// periodic images as ghost atoms.
    pub fn as_open(&self) -> Self {
        SimBox {
            lengths: self.lengths,
            periodic: [false; 3],
        }
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Checks that a cutoff is compatible with the minimum-image convention.
    pub fn check_cutoff(&self, rc: f64) -> Result<()> {
        for axis in 0..3 {
            if self.periodic[axis] && 2.0 * rc > self.lengths[axis] {
                return Err(Error::MinimumImage {
                    axis,
                    rc,
                    length: self.lengths[axis],
                });
            }
        }
        Ok(())
    }

    /// Nearest-image displacement. Periodic components end up in `[-L/2, L/2]`.
    pub fn minimum_image(&self, d: Vec3) -> Vec3 {
        let mut out = d;
        for k in 0..3 {
            if self.periodic[k] {
                let l = self.lengths[k];
                debug_assert!(d[k].abs() <= 1.5 * l, "displacement {d:?} too large for box");
                out[k] = d[k] - l * (d[k] / l).round();
            }
        }
        out
    }

    /// Integer image shift that maps `d` onto its nearest image: `d + shift·L`.
    pub fn image_shift(&self, d: Vec3) -> [i32; 3] {
        let mut s = [0i32; 3];
        for k in 0..3 {
            if self.periodic[k] {
                s[k] = -(d[k] / self.lengths[k]).round() as i32;
            }
        }
        s
    }

    /// Wraps periodic components into the half-open interval `[0, L)`.
    pub fn wrap(&self, r: Vec3) -> Vec3 {
        let mut out = r;
        for k in 0..3 {
            if !self.periodic[k] {
                continue;
            }
            let l = self.lengths[k];
            let x = r[k];
            if (0.0..l).contains(&x) {
                continue;
            }
            let mut w = x - l * (x / l).floor();
            if w >= l || w < 0.0 {
                w = 0.0;
            }
            out[k] = w;
        }
        out
    }
}

/// Position of a periodic image. Every code path that materialises an image
/// goes through this function so that ghost copies and shifted neighbors share
/// bit-identical coordinates.
#[inline]
pub fn image_position(r: Vec3, shift: [i32; 3], bx: &SimBox) -> Vec3 {
    [
        r[0] + shift[0] as f64 * bx.lengths[0],
        r[1] + shift[1] as f64 * bx.lengths[1],
        r[2] + shift[2] as f64 * bx.lengths[2],
    ]
}

/// Particle state in structure-of-arrays layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AtomSet {
    pub global_ids: Vec<u64>,
    pub species: Vec<usize>,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
}

impl AtomSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.global_ids.len() != n
            || self.species.len() != n
            || self.velocities.len() != n
            || self.masses.len() != n
        {
            return Err(Error::InvalidInput("atom arrays differ in length".into()));
        }
        if self.masses.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidInput("masses must be positive".into()));
        }
        let mut ids = self.global_ids.clone();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("global ids are not unique".into()));
        }
        Ok(())
    }

    pub fn push(&mut self, id: u64, species: usize, position: Vec3, velocity: Vec3, mass: f64) {
        self.global_ids.push(id);
        self.species.push(species);
        self.positions.push(position);
        self.velocities.push(velocity);
        self.masses.push(mass);
    }

    /// Copies the atoms at `indices`, preserving their ids.
    pub fn subset(&self, indices: &[usize]) -> AtomSet {
        let mut out = AtomSet::default();
        for &i in indices {
            out.push(
                self.global_ids[i],
                self.species[i],
                self.positions[i],
                self.velocities[i],
                self.masses[i],
            );
        }
        out
    }

    pub fn wrap_positions(&mut self, bx: &SimBox) {
        for r in &mut self.positions {
            *r = bx.wrap(*r);
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn momentum(&self) -> Vec3 {
        let mut p = [0.0; 3];
        for (v, &m) in self.velocities.iter().zip(&self.masses) {
            vec3::add_assign(&mut p, vec3::scale(*v, m));
        }
        p
    }
}

/// Simple-cubic lattice of `n³` atoms at the given number density.
pub fn lattice_init(n_per_axis: usize, density: f64, species_pattern: &[usize]) -> Result<(SimBox, AtomSet)> {
    if n_per_axis == 0 || !(density > 0.0) {
        return Err(Error::InvalidInput(format!(
            "lattice needs n >= 1 and density > 0, got n={n_per_axis}, density={density}"
        )));
    }
    let pattern: &[usize] = if species_pattern.is_empty() { &[0] } else { species_pattern };
    let spacing = (1.0 / density).powf(1.0 / 3.0);
    let length = n_per_axis as f64 * spacing;
    let bx = SimBox::cubic(length)?;
    let mut atoms = AtomSet::default();
    let mut id = 0u64;
    for i in 0..n_per_axis {
        for j in 0..n_per_axis {
            for k in 0..n_per_axis {
                let r = [i as f64 * spacing, j as f64 * spacing, k as f64 * spacing];
                let sp = pattern[id as usize % pattern.len()];
                atoms.push(id, sp, r, [0.0; 3], 1.0);
                id += 1;
            }
        }
    }
    Ok((bx, atoms))
}

/// Uniform random configuration with a hard minimum pair separation, placed by
/// rejection sampling. Species are drawn uniformly from `0..n_species`.
pub fn random_configuration<R: Rng>(
    n: usize,
    bx: &SimBox,
    n_species: usize,
    min_distance: f64,
    rng: &mut R,
) -> Result<AtomSet> {
    let mut atoms = AtomSet::default();
    let min2 = min_distance * min_distance;
    let mut attempts = 0usize;
    while atoms.len() < n {
        attempts += 1;
        if attempts > 2000 * n.max(1) {
            return Err(Error::InvalidInput(format!(
                "could not place {n} atoms with separation {min_distance} in box {:?}",
                bx.lengths
            )));
        }
        let r = [
            rng.gen::<f64>() * bx.lengths[0],
            rng.gen::<f64>() * bx.lengths[1],
            rng.gen::<f64>() * bx.lengths[2],
        ];
        let r = bx.wrap(r);
        let clash = atoms.positions.iter().any(|&q| {
            let d = bx.minimum_image(vec3::sub(r, q));
            vec3::dot(d, d) < min2
        });
        if clash {
            continue;
        }
        let id = atoms.len() as u64;
        atoms.push(id, rng.gen_range(0..n_species.max(1)), r, [0.0; 3], 1.0);
    }
    Ok(atoms)
}

/// Replicates a system `copies` times along x, growing the box proportionally.
pub fn replicate_x(bx: &SimBox, atoms: &AtomSet, copies: usize) -> Result<(SimBox, AtomSet)> {
    if copies == 0 {
        return Err(Error::InvalidInput("copies must be >= 1".into()));
    }
    let mut lengths = bx.lengths;
    lengths[0] *= copies as f64;
    let out_box = SimBox::new(lengths, bx.periodic)?;
    let n = atoms.len() as u64;
    let mut out = AtomSet::default();
    for c in 0..copies {
        for i in 0..atoms.len() {
            let mut r = atoms.positions[i];
            r[0] += c as f64 * bx.lengths[0];
            out.push(
                atoms.global_ids[i] + c as u64 * n,
                atoms.species[i],
                out_box.wrap(r),
                atoms.velocities[i],
                atoms.masses[i],
            );
        }
    }
    Ok((out_box, out))
}
