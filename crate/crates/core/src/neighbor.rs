//! Cell lists and cutoff neighbor lists.
//!
//! Periodic neighbors are stored as `(index, image_shift)` pairs: the neighbor's
//! position is `r_j + shift·L`. Lists are rebuilt from scratch on every call and
//! sorted by `(index, shift)` so that downstream summations are reproducible.

use serde::{Deserialize, Serialize};

use crate::system::{image_position, SimBox};
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListMode {
    /// Both directions of every pair.
    Full,
    /// Each unordered pair once, stored on the higher index (`j < i`).
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Neighbor {
    pub index: usize,
    pub shift: [i32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub mode: ListMode,
    pub rc: f64,
    pub neighbors: Vec<Vec<Neighbor>>,
    pub built_from: usize,
}

impl NeighborList {
    pub fn of(&self, i: usize) -> &[Neighbor] {
        &self.neighbors[i]
    }

    pub fn pair_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Unordered pair set `(min, max, shift seen from max)`, used to compare
    /// full and half lists.
    pub fn unordered_pairs(&self) -> Vec<(usize, usize, [i32; 3])> {
        let mut out = Vec::with_capacity(self.pair_count());
        for (i, list) in self.neighbors.iter().enumerate() {
            for nb in list {
                let j = nb.index;
                let (hi, lo, shift) = if i > j {
                    (i, j, nb.shift)
                } else {
                    (j, i, [-nb.shift[0], -nb.shift[1], -nb.shift[2]])
                };
                out.push((lo, hi, shift));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Displacement `r_j(image) - r_i` of a listed neighbor.
    #[inline]
    pub fn displacement(positions: &[Vec3], bx: &SimBox, i: usize, nb: &Neighbor) -> Vec3 {
        vec3::sub(image_position(positions[nb.index], nb.shift, bx), positions[i])
    }
}

/// Uniform binning of atoms into cells of edge at least `cell_size`.
#[derive(Debug, Clone)]
pub struct CellList {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub extent: Vec3,
    pub cells: Vec<Vec<usize>>,
    pub cell_of: Vec<usize>,
}

impl CellList {
    pub fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    fn coords(&self, flat: usize) -> [usize; 3] {
        let z = flat % self.dims[2];
        let y = (flat / self.dims[2]) % self.dims[1];
        let x = flat / (self.dims[1] * self.dims[2]);
        [x, y, z]
    }

    /// Distinct cells adjacent to `flat` (including itself).
    fn adjacent(&self, flat: usize, periodic: [bool; 3]) -> Vec<usize> {
        let c = self.coords(flat);
        let mut per_axis: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for k in 0..3 {
            let n = self.dims[k] as i64;
            for off in -1i64..=1 {
                let mut idx = c[k] as i64 + off;
                if periodic[k] {
                    idx = idx.rem_euclid(n);
                } else if idx < 0 || idx >= n {
                    continue;
                }
                if !per_axis[k].contains(&(idx as usize)) {
                    per_axis[k].push(idx as usize);
                }
            }
        }
        let mut out = Vec::with_capacity(27);
        for &x in &per_axis[0] {
            for &y in &per_axis[1] {
                for &z in &per_axis[2] {
                    out.push(self.flat([x, y, z]));
                }
            }
        }
        out
    }
}

/// Bins positions into a cell grid. Periodic axes span `[0, L)`; open axes span
/// the bounding interval of the positions. Cell boundaries are half-open, so an
/// atom exactly on a boundary goes to the higher cell.
pub fn build_cell_list(positions: &[Vec3], bx: &SimBox, cell_size: f64) -> CellList {
    let mut origin = [0.0; 3];
    let mut extent = bx.lengths;
    for k in 0..3 {
        if !bx.periodic[k] {
            let (lo, hi) = positions
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[k]), hi.max(r[k])));
            if positions.is_empty() {
                origin[k] = 0.0;
                extent[k] = 0.0;
            } else {
                origin[k] = lo;
                extent[k] = hi - lo;
            }
        }
    }
    let mut dims = [1usize; 3];
    for k in 0..3 {
        if cell_size > 0.0 && extent[k] >= cell_size {
            dims[k] = ((extent[k] / cell_size).floor() as usize).max(1);
        }
    }
    let mut list = CellList {
        dims,
        origin,
        extent,
        cells: vec![Vec::new(); dims[0] * dims[1] * dims[2]],
        cell_of: Vec::with_capacity(positions.len()),
    };
    for (i, r) in positions.iter().enumerate() {
        let mut c = [0usize; 3];
        for k in 0..3 {
            if dims[k] > 1 {
                let x = (r[k] - origin[k]) * dims[k] as f64 / extent[k];
                c[k] = (x.floor().max(0.0) as usize).min(dims[k] - 1);
            }
        }
        let flat = list.flat(c);
        list.cells[flat].push(i);
        list.cell_of.push(flat);
    }
    list
}

#[inline]
fn pair_within(positions: &[Vec3], bx: &SimBox, i: usize, j: usize, rc2: f64) -> Option<[i32; 3]> {
    let shift = bx.image_shift(vec3::sub(positions[j], positions[i]));
    if i == j && shift == [0, 0, 0] {
        return None;
    }
    let d = vec3::sub(image_position(positions[j], shift, bx), positions[i]);
    (vec3::dot(d, d) < rc2).then_some(shift)
}

fn finish(mode: ListMode, rc: f64, mut neighbors: Vec<Vec<Neighbor>>) -> NeighborList {
    for list in &mut neighbors {
        list.sort_unstable();
    }
    let built_from = neighbors.len();
    NeighborList {
        mode,
        rc,
        neighbors,
        built_from,
    }
}

/// Cell-list neighbor search within `rc`.
pub fn build_neighbor_list(positions: &[Vec3], bx: &SimBox, rc: f64, mode: ListMode) -> Result<NeighborList> {
    if !(rc > 0.0) {
        return Err(Error::InvalidInput(format!("cutoff must be positive, got {rc}")));
    }
    bx.check_cutoff(rc)?;
    let cells = build_cell_list(positions, bx, rc);
    let rc2 = rc * rc;
    let mut neighbors = vec![Vec::new(); positions.len()];
    for (c, members) in cells.cells.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let adjacent = cells.adjacent(c, bx.periodic);
        for &i in members {
            for &c2 in &adjacent {
                for &j in &cells.cells[c2] {
                    if mode == ListMode::Half && j >= i {
                        continue;
                    }
                    if let Some(shift) = pair_within(positions, bx, i, j, rc2) {
                        neighbors[i].push(Neighbor { index: j, shift });
                    }
                }
            }
        }
    }
    Ok(finish(mode, rc, neighbors))
}

/// All-pairs O(N²) reference search.
pub fn brute_force_neighbors(positions: &[Vec3], bx: &SimBox, rc: f64, mode: ListMode) -> Result<NeighborList> {
    if !(rc > 0.0) {
        return Err(Error::InvalidInput(format!("cutoff must be positive, got {rc}")));
    }
    bx.check_cutoff(rc)?;
    let rc2 = rc * rc;
    let n = positions.len();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        let upper = match mode {
            ListMode::Full => n,
            ListMode::Half => i,
        };
        for j in 0..upper {
            if let Some(shift) = pair_within(positions, bx, i, j, rc2) {
                neighbors[i].push(Neighbor { index: j, shift });
            }
        }
    }
    Ok(finish(mode, rc, neighbors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::random_configuration;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dimer(distance: f64) -> (SimBox, Vec<Vec3>) {
        let bx = SimBox::cubic(10.0).unwrap();
        (bx, vec![[1.0, 1.0, 1.0], [1.0 + distance, 1.0, 1.0]])
    }

    #[test]
    fn cell_list_binning() {
        let bx = SimBox::cubic(2.0).unwrap();
        let positions: Vec<Vec3> = (0..8)
            .map(|i| [(i / 4) as f64, ((i / 2) % 2) as f64, (i % 2) as f64])
            .collect();
        let cells = build_cell_list(&positions, &bx, 1.0);
        assert_eq!(cells.dims, [2, 2, 2]);
        assert!(cells.cells.iter().all(|c| c.len() == 1));
        // boundary x = 1.0 goes to the upper cell
        assert_eq!(cells.cell_of[4], cells.flat([1, 0, 0]));

        let one = build_cell_list(&[[0.3, 0.3, 0.3]], &bx, 1.0);
        assert_eq!(one.cells.iter().filter(|c| !c.is_empty()).count(), 1);

        let coarse = build_cell_list(&positions, &bx, 5.0);
        assert_eq!(coarse.dims, [1, 1, 1]);
        assert_eq!(coarse.cells[0].len(), 8);
    }

    #[test]
    fn dimer_lists() {
        let (bx, pos) = dimer(0.5);
        let full = build_neighbor_list(&pos, &bx, 1.0, ListMode::Full).unwrap();
        assert_eq!(full.of(0), &[Neighbor { index: 1, shift: [0; 3] }]);
        assert_eq!(full.of(1), &[Neighbor { index: 0, shift: [0; 3] }]);
        let half = build_neighbor_list(&pos, &bx, 1.0, ListMode::Half).unwrap();
        assert!(half.of(0).is_empty());
        assert_eq!(half.of(1), &[Neighbor { index: 0, shift: [0; 3] }]);

        let (bx, pos) = dimer(1.5);
        let far = build_neighbor_list(&pos, &bx, 1.0, ListMode::Full).unwrap();
        assert_eq!(far.pair_count(), 0);
    }

    #[test]
    fn periodic_neighbor_carries_shift() {
        let bx = SimBox::cubic(4.0).unwrap();
        let pos = vec![[0.2, 2.0, 2.0], [3.9, 2.0, 2.0]];
        let full = build_neighbor_list(&pos, &bx, 1.0, ListMode::Full).unwrap();
        assert_eq!(full.of(0), &[Neighbor { index: 1, shift: [-1, 0, 0] }]);
        assert_eq!(full.of(1), &[Neighbor { index: 0, shift: [1, 0, 0] }]);
        let d = NeighborList::displacement(&pos, &bx, 0, &full.of(0)[0]);
        assert!((d[0] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_and_invalid() {
        let bx = SimBox::cubic(4.0).unwrap();
        assert_eq!(brute_force_neighbors(&[], &bx, 1.0, ListMode::Full).unwrap().pair_count(), 0);
        assert!(matches!(
            brute_force_neighbors(&[[0.0; 3]], &bx, 2.5, ListMode::Full),
            Err(Error::MinimumImage { .. })
        ));
        assert!(build_neighbor_list(&[[0.0; 3]], &bx, 0.0, ListMode::Full).is_err());
    }

    #[test]
    fn open_box_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bx = SimBox::cubic(6.0).unwrap().as_open();
        let pos: Vec<Vec3> = (0..120)
            .map(|_| [rng.gen::<f64>() * 6.0, rng.gen::<f64>() * 6.0, rng.gen::<f64>() * 6.0 - 3.0])
            .collect();
        for mode in [ListMode::Full, ListMode::Half] {
            let a = build_neighbor_list(&pos, &bx, 1.3, mode).unwrap();
            let b = brute_force_neighbors(&pos, &bx, 1.3, mode).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn cell_list_matches_brute_force_small_boxes() {
        // fewer than three cells per axis exercises the duplicate-cell path
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let l = 2.0 + trial as f64 * 0.25;
            let bx = SimBox::new([l, l * 1.3, l * 0.9 + 1.0], [true, true, trial % 2 == 0]).unwrap();
            let atoms = random_configuration(40, &bx, 2, 0.3, &mut rng).unwrap();
            let rc = 0.45 * l * 0.9;
            for mode in [ListMode::Full, ListMode::Half] {
                let a = build_neighbor_list(&atoms.positions, &bx, rc, mode).unwrap();
                let b = brute_force_neighbors(&atoms.positions, &bx, rc, mode).unwrap();
                assert_eq!(a, b, "trial {trial}");
            }
        }
    }

    #[test]
    fn full_list_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bx = SimBox::cubic(5.0).unwrap();
        let atoms = random_configuration(100, &bx, 1, 0.5, &mut rng).unwrap();
        let full = build_neighbor_list(&atoms.positions, &bx, 1.6, ListMode::Full).unwrap();
        for (i, list) in full.neighbors.iter().enumerate() {
            for nb in list {
                let back = Neighbor {
                    index: i,
                    shift: [-nb.shift[0], -nb.shift[1], -nb.shift[2]],
                };
                assert!(full.of(nb.index).contains(&back));
                let d = NeighborList::displacement(&atoms.positions, &bx, i, nb);
                assert!(vec3::norm(d) < 1.6);
            }
        }
    }

    #[test]
    fn ideal_gas_pair_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 1000usize;
        let l = 10.0;
        let bx = SimBox::cubic(l).unwrap();
        let positions: Vec<Vec3> = (0..n)
            .map(|_| [rng.gen::<f64>() * l, rng.gen::<f64>() * l, rng.gen::<f64>() * l])
            .collect();
        let rc = 1.5;
        let half = build_neighbor_list(&positions, &bx, rc, ListMode::Half).unwrap();
        let p = 4.0 / 3.0 * std::f64::consts::PI * rc.powi(3) / bx.volume();
        let pairs = (n * (n - 1) / 2) as f64;
        let expected = pairs * p;
        let sigma = (pairs * p * (1.0 - p)).sqrt();
        let got = half.pair_count() as f64;
        assert!((got - expected).abs() < 5.0 * sigma, "got {got}, expected {expected} ± {sigma}");
    }
}
