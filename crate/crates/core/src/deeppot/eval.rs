//! Total energy and exact forces of the local model, with ghost masking.

use super::descriptor::{backward_center, forward_center, EnvironmentMatrix};
use super::model::DPModel;
use crate::neighbor::{ListMode, NeighborList};
use crate::system::{AtomSet, SimBox};
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

/// Per-atom flag: `true` for local atoms whose energies count, `false` for ghosts.
pub type LocalMask = [bool];

#[derive(Debug, Clone, PartialEq)]
pub struct DPOutput {
    /// Sum of atomic energies over local atoms.
    pub energy: f64,
    /// Atomic energy per atom; zero for masked atoms.
    pub atom_energies: Vec<f64>,
    /// `-∂E/∂r_a` for every evaluated atom, local or ghost. Entries for ghosts are
    /// the forces that must be routed back to their owners.
    pub forces: Vec<Vec3>,
}

impl DPOutput {
    /// Forces on the atoms flagged as ghosts, in input order.
    pub fn forces_on_ghosts(&self, mask: &LocalMask) -> Vec<(usize, Vec3)> {
        mask.iter()
            .enumerate()
            .filter(|(_, &local)| !local)
            .map(|(i, _)| (i, self.forces[i]))
            .collect()
    }
}

/// Environment of atom `i` from a full neighbor list.
pub fn build_environment(
    center: usize,
    nlist: &NeighborList,
    atoms: &AtomSet,
    bx: &SimBox,
    model: &DPModel,
) -> Result<EnvironmentMatrix> {
    if nlist.mode != ListMode::Full {
        return Err(Error::InvalidInput("the deep potential needs a full neighbor list".into()));
    }
    let cands = nlist.of(center).iter().map(|nb| {
        (
            nb.index,
            atoms.species[nb.index],
            atoms.global_ids[nb.index],
            NeighborList::displacement(&atoms.positions, bx, center, nb),
        )
    });
    EnvironmentMatrix::new(center, atoms.species[center], cands, model)
}

/// Upstream gradient applied to every center's energy during a backward pass,
/// and the buffer receiving parameter gradients.
pub struct ParamGrad<'a> {
    pub de: f64,
    pub grad: &'a mut DPModel,
}

pub(crate) fn evaluate_inner(
    atoms: &AtomSet,
    bx: &SimBox,
    nlist: &NeighborList,
    model: &DPModel,
    mask: Option<&LocalMask>,
    mut param_grad: Option<ParamGrad<'_>>,
) -> Result<DPOutput> {
    let n = atoms.len();
    if nlist.built_from != n {
        return Err(Error::InvalidInput(format!(
            "neighbor list built for {} atoms, evaluating {n}",
            nlist.built_from
        )));
    }
    if let Some(mask) = mask {
        if mask.len() != n {
            return Err(Error::InvalidInput("mask length differs from atom count".into()));
        }
        if n > 0 && !mask.iter().any(|&m| m) {
            return Err(Error::InvalidInput("mask has no local atoms".into()));
        }
    }
    let mut energy = 0.0;
    let mut atom_energies = vec![0.0; n];
    let mut forces = vec![[0.0; 3]; n];
    for i in 0..n {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let env = build_environment(i, nlist, atoms, bx, model)?;
        let cache = forward_center(&env, model);
        energy += cache.energy;
        atom_energies[i] = cache.energy;
        let de = param_grad.as_ref().map_or(1.0, |p| p.de);
        let grads = if de == 0.0 {
            backward_center(&env, model, &cache, 1.0, None)
        } else {
            backward_center(&env, model, &cache, de, param_grad.as_mut().map(|p| &mut *p.grad))
        };
        let de = if de == 0.0 { 1.0 } else { de };
        // grads are de·∂e_i/∂d_j with d_j = r_j - r_i; force is minus the gradient
        let inv = 1.0 / de;
        for (nb, g) in env.neighbors.iter().zip(grads) {
            let g = if de == 1.0 { g } else { vec3::scale(g, inv) };
            vec3::sub_assign(&mut forces[nb.index], g);
            vec3::add_assign(&mut forces[i], g);
        }
    }
    Ok(DPOutput {
        energy,
        atom_energies,
        forces,
    })
}

/// Energy and forces of the local model. With a mask, only local atoms act as
/// centers: `E = Σ_{local} e_i` and every atom (ghosts included) receives
/// `-Σ_{local i} ∂e_i/∂r_a`.
pub fn evaluate_dp(
    atoms: &AtomSet,
    bx: &SimBox,
    nlist: &NeighborList,
    model: &DPModel,
    mask: Option<&LocalMask>,
) -> Result<DPOutput> {
    evaluate_inner(atoms, bx, nlist, model, mask, None)
}

/// Convenience wrapper that builds the full neighbor list itself.
pub fn evaluate_system(atoms: &AtomSet, bx: &SimBox, model: &DPModel) -> Result<DPOutput> {
    let nlist = crate::neighbor::build_neighbor_list(&atoms.positions, bx, model.config.rc, ListMode::Full)?;
    evaluate_dp(atoms, bx, &nlist, model, None)
}

/// `sqrt(mean((pred - ref)²))` over all components.
pub fn force_rmse(pred: &[Vec3], reference: &[Vec3]) -> f64 {
    assert_eq!(pred.len(), reference.len(), "force arrays differ in length");
    if pred.is_empty() {
        return 0.0;
    }
    let sum: f64 = pred
        .iter()
        .zip(reference)
        .map(|(a, b)| {
            let d = vec3::sub(*a, *b);
            vec3::dot(d, d)
        })
        .sum();
    (sum / (3 * pred.len()) as f64).sqrt()
}
