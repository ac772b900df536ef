//! Cut (and by default shifted) Lennard-Jones pair potential.

use serde::{Deserialize, Serialize};

use crate::neighbor::{ListMode, NeighborList};
use crate::system::SimBox;
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

/// Distances below this are treated as overlapping atoms.
pub const MIN_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LJParams {
    pub epsilon: f64,
    pub sigma: f64,
    pub rc: f64,
    pub energy_shift: bool,
}

impl Default for LJParams {
    fn default() -> Self {
        LJParams {
            epsilon: 1.0,
            sigma: 1.0,
            rc: 2.5,
            energy_shift: true,
        }
    }
}

impl LJParams {
    pub fn new(epsilon: f64, sigma: f64, rc: f64) -> Result<Self> {
        let p = LJParams {
            epsilon,
            sigma,
            rc,
            energy_shift: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.sigma > 0.0 && self.rc > self.sigma) {
            return Err(Error::InvalidInput(format!(
                "LJ parameters need epsilon > 0, sigma > 0, rc > sigma; got {self:?}"
            )));
        }
        Ok(())
    }

    fn raw(&self, r: f64) -> (f64, f64) {
        let sr6 = (self.sigma / r).powi(6);
        let sr12 = sr6 * sr6;
        let v = 4.0 * self.epsilon * (sr12 - sr6);
        let dv = 4.0 * self.epsilon * (-12.0 * sr12 + 6.0 * sr6) / r;
        (v, dv)
    }
}

/// Pair energy and radial derivative `dV/dr`.
pub fn lj_pair(r: f64, p: &LJParams) -> Result<(f64, f64)> {
    if !(r > 0.0) {
        return Err(Error::Singularity { i: 0, j: 0, distance: r });
    }
    if r >= p.rc {
        return Ok((0.0, 0.0));
    }
    let (mut v, dv) = p.raw(r);
    if p.energy_shift {
        v -= p.raw(p.rc).0;
    }
    Ok((v, dv))
}

/// Total energy and forces from a neighbor list built over `positions`.
pub fn evaluate_classical(
    positions: &[Vec3],
    bx: &SimBox,
    nlist: &NeighborList,
    p: &LJParams,
) -> Result<(f64, Vec<Vec3>)> {
    if nlist.built_from != positions.len() {
        return Err(Error::InvalidInput(format!(
            "neighbor list built for {} atoms, evaluating {}",
            nlist.built_from,
            positions.len()
        )));
    }
    let mut energy = 0.0;
    let mut forces = vec![[0.0; 3]; positions.len()];
    let weight = match nlist.mode {
        ListMode::Half => 1.0,
        ListMode::Full => 0.5,
    };
    for (i, list) in nlist.neighbors.iter().enumerate() {
        for nb in list {
            let d = NeighborList::displacement(positions, bx, i, nb);
            let r = vec3::norm(d);
            if r < MIN_DISTANCE {
                return Err(Error::Singularity {
                    i,
                    j: nb.index,
                    distance: r,
                });
            }
            let (v, dv) = lj_pair(r, p)?;
            energy += weight * v;
            // force on i from j: -dV/dr along (r_i - r_j)/r = dV/dr · d/r
            let f = vec3::scale(d, dv / r);
            vec3::add_assign(&mut forces[i], f);
            if nlist.mode == ListMode::Half {
                vec3::sub_assign(&mut forces[nb.index], f);
            }
        }
    }
    Ok((energy, forces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbor::build_neighbor_list;
    use crate::system::random_configuration;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unshifted() -> LJParams {
        LJParams {
            energy_shift: false,
            ..LJParams::default()
        }
    }

    #[test]
    fn pair_examples() {
        let p = unshifted();
        assert!(lj_pair(1.0, &p).unwrap().0.abs() < 1e-15);
        let rmin = 2f64.powf(1.0 / 6.0);
        let (v, dv) = lj_pair(rmin, &p).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
        assert!(dv.abs() < 1e-12);
        // 4(2^-12 - 2^-6)
        let expected = 4.0 * (1.0 / 4096.0 - 1.0 / 64.0);
        assert!((lj_pair(2.0, &p).unwrap().0 - expected).abs() < 1e-15);
        assert!((expected + 0.061523).abs() < 1e-6);
        assert_eq!(lj_pair(2.5, &p).unwrap(), (0.0, 0.0));
        assert!(lj_pair(0.0, &p).is_err());
    }

    #[test]
    fn shift_vanishes_at_cutoff() {
        let p = LJParams::default();
        let (v, _) = lj_pair(p.rc - 1e-12, &p).unwrap();
        assert!(v.abs() < 1e-10);
    }

    #[test]
    fn invalid_params() {
        assert!(LJParams::new(1.0, 1.0, 0.9).is_err());
        assert!(LJParams::new(0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn dimer_at_minimum() {
        let bx = SimBox::cubic(10.0).unwrap();
        let rmin = 2f64.powf(1.0 / 6.0);
        let pos = vec![[1.0, 1.0, 1.0], [1.0 + rmin, 1.0, 1.0]];
        let p = unshifted();
        for mode in [ListMode::Full, ListMode::Half] {
            let nl = build_neighbor_list(&pos, &bx, p.rc, mode).unwrap();
            let (e, f) = evaluate_classical(&pos, &bx, &nl, &p).unwrap();
            assert!((e + 1.0).abs() < 1e-12);
            assert!(f.iter().all(|v| vec3::norm(*v) < 1e-10));
        }
    }

    #[test]
    fn single_atom() {
        let bx = SimBox::cubic(10.0).unwrap();
        let pos = vec![[1.0, 1.0, 1.0]];
        let nl = build_neighbor_list(&pos, &bx, 2.5, ListMode::Full).unwrap();
        let (e, f) = evaluate_classical(&pos, &bx, &nl, &LJParams::default()).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(f, vec![[0.0; 3]]);
    }

    #[test]
    fn overlap_is_singular() {
        let bx = SimBox::cubic(10.0).unwrap();
        let pos = vec![[1.0, 1.0, 1.0], [1.0 + 1e-8, 1.0, 1.0]];
        let nl = build_neighbor_list(&pos, &bx, 2.5, ListMode::Half).unwrap();
        assert!(matches!(
            evaluate_classical(&pos, &bx, &nl, &LJParams::default()),
            Err(Error::Singularity { .. })
        ));
    }

    fn energy(pos: &[Vec3], bx: &SimBox, p: &LJParams) -> f64 {
        let nl = build_neighbor_list(pos, bx, p.rc, ListMode::Half).unwrap();
        evaluate_classical(pos, bx, &nl, p).unwrap().0
    }

    #[test]
    fn forces_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bx = SimBox::cubic(5.0).unwrap();
        let atoms = random_configuration(40, &bx, 1, 0.9, &mut rng).unwrap();
        let p = LJParams {
            rc: 2.4,
            ..LJParams::default()
        };
        let nl = build_neighbor_list(&atoms.positions, &bx, p.rc, ListMode::Half).unwrap();
        let (_, f) = evaluate_classical(&atoms.positions, &bx, &nl, &p).unwrap();
        let fmax = f.iter().flat_map(|v| v.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
        let h = 1e-6;
        for i in 0..atoms.len() {
            for k in 0..3 {
                let mut plus = atoms.positions.clone();
                plus[i][k] += h;
                let mut minus = atoms.positions.clone();
                minus[i][k] -= h;
                let fd = -(energy(&plus, &bx, &p) - energy(&minus, &bx, &p)) / (2.0 * h);
                let denom = f[i][k].abs().max(1e-2 * fmax);
                assert!((fd - f[i][k]).abs() / denom < 1e-6, "atom {i} axis {k}: {fd} vs {}", f[i][k]);
            }
        }
    }

    #[test]
    fn rotation_invariance_open_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bx = SimBox::cubic(6.0).unwrap().as_open();
        let atoms = random_configuration(30, &bx, 1, 0.9, &mut rng).unwrap();
        let p = LJParams::default();
        let e0 = energy(&atoms.positions, &bx, &p);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let q = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let rotated: Vec<Vec3> = atoms.positions.iter().map(|r| vec3::mat_vec(&q, *r)).collect();
        assert!((energy(&rotated, &bx, &p) - e0).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn half_and_full_agree(seed in 0u64..10_000, n in 2usize..64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bx = SimBox::cubic(5.0).unwrap();
            let atoms = random_configuration(n, &bx, 1, 0.8, &mut rng).unwrap();
            let p = LJParams::default();
            let half = build_neighbor_list(&atoms.positions, &bx, p.rc, ListMode::Half).unwrap();
            let full = build_neighbor_list(&atoms.positions, &bx, p.rc, ListMode::Full).unwrap();
            let (eh, fh) = evaluate_classical(&atoms.positions, &bx, &half, &p).unwrap();
            let (ef, ff) = evaluate_classical(&atoms.positions, &bx, &full, &p).unwrap();
            prop_assert!((eh - ef).abs() <= 1e-12 * eh.abs().max(1.0));
            let mut total = [0.0; 3];
            for (a, b) in fh.iter().zip(&ff) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() <= 1e-12 * a[k].abs().max(1.0));
                }
                vec3::add_assign(&mut total, *a);
            }
            for t in total {
                prop_assert!(t.abs() < 1e-10);
            }
        }

        #[test]
        fn translation_invariance(seed in 0u64..10_000, shift in prop::array::uniform3(-3.0f64..3.0)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bx = SimBox::cubic(5.0).unwrap();
            let atoms = random_configuration(24, &bx, 1, 0.8, &mut rng).unwrap();
            let p = LJParams::default();
            let moved: Vec<Vec3> = atoms.positions.iter().map(|r| bx.wrap(vec3::add(*r, shift))).collect();
            let e0 = energy(&atoms.positions, &bx, &p);
            let e1 = energy(&moved, &bx, &p);
            prop_assert!((e0 - e1).abs() < 1e-10 * e0.abs().max(1.0));
        }
    }
}
