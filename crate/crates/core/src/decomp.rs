//! Virtual Cartesian domain decomposition for neural-potential inference.
//!
//! Every step the NN atoms are gathered into `atomAll` on all simulated ranks.
//! Each rank then extracts its local atoms and a halo of ghost copies, runs the
//! model on that open subsystem and contributes forces to a global reduction.
//!
//! Two coupling schemes are supported:
//!
//! - [`Scheme::MaskedReduction`]: halo of thickness `rc`, only local atoms act
//!   as centers, and forces landing on ghosts are routed back to their owners.
//! - [`Scheme::WideHalo`]: halo of thickness `2·rc`, local atoms and ghosts
//!   within `rc` of the subdomain act as centers, energies count for locals
//!   only and forces are kept on locals only. No ghost forces are exchanged.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deeppot::{evaluate_dp, DPModel};
use crate::neighbor::{build_neighbor_list, ListMode};
use crate::system::{image_position, AtomSet, SimBox};
use crate::trace::{Phase, StepTrace};
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

/// Per-atom payload quoted for the reference implementation. Its breakdown is
/// not itemised, so it is reported next to the computed layout.
pub const REFERENCE_BYTES_PER_ATOM: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    MaskedReduction,
    WideHalo,
}

impl Scheme {
    pub fn halo_thickness(self, rc: f64) -> f64 {
        match self {
            Scheme::MaskedReduction => rc,
            Scheme::WideHalo => 2.0 * rc,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::MaskedReduction => "masked_reduction",
            Scheme::WideHalo => "wide_halo",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "masked_reduction" => Ok(Scheme::MaskedReduction),
            "wide_halo" => Ok(Scheme::WideHalo),
            _ => Err(Error::InvalidInput(format!("unknown scheme `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankGrid {
    pub dims: [usize; 3],
}

impl RankGrid {
    pub fn n_ranks(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn rank(&self, cell: [usize; 3]) -> usize {
        (cell[0] * self.dims[1] + cell[1]) * self.dims[2] + cell[2]
    }

    pub fn cell(&self, rank: usize) -> [usize; 3] {
        let z = rank % self.dims[2];
        let y = (rank / self.dims[2]) % self.dims[1];
        [rank / (self.dims[1] * self.dims[2]), y, z]
    }

    /// Half-open bounds `[lo, hi)` of a rank's subdomain.
    pub fn bounds(&self, rank: usize, bx: &SimBox) -> (Vec3, Vec3) {
        let c = self.cell(rank);
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..3 {
            let w = bx.lengths[k] / self.dims[k] as f64;
            lo[k] = c[k] as f64 * w;
            hi[k] = if c[k] + 1 == self.dims[k] {
                bx.lengths[k]
            } else {
                (c[k] + 1) as f64 * w
            };
        }
        (lo, hi)
    }

    /// Owner of a wrapped position.
    pub fn rank_of(&self, r: Vec3, bx: &SimBox) -> usize {
        let mut c = [0usize; 3];
        for k in 0..3 {
            let p = self.dims[k];
            let x = (r[k] * p as f64 / bx.lengths[k]).floor();
            c[k] = (x.max(0.0) as usize).min(p - 1);
        }
        self.rank(c)
    }

    pub fn edges(&self, bx: &SimBox) -> Vec3 {
        [
            bx.lengths[0] / self.dims[0] as f64,
            bx.lengths[1] / self.dims[1] as f64,
            bx.lengths[2] / self.dims[2] as f64,
        ]
    }
}

/// Total surface of all subdomains, `n·2(ab + bc + ca)`.
pub fn grid_surface(dims: [usize; 3], bx: &SimBox) -> f64 {
    let n = (dims[0] * dims[1] * dims[2]) as f64;
    let a = bx.lengths[0] / dims[0] as f64;
    let b = bx.lengths[1] / dims[1] as f64;
    let c = bx.lengths[2] / dims[2] as f64;
    n * 2.0 * (a * b + b * c + c * a)
}

/// All ordered factorisations `px·py·pz = n`.
pub fn factorizations(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for px in 1..=n {
        if n % px != 0 {
            continue;
        }
        for py in 1..=n / px {
            if (n / px) % py == 0 {
                out.push([px, py, n / px / py]);
            }
        }
    }
    out
}

/// Picks the factorisation with the smallest total subdomain surface among those
/// whose subdomain edges are all at least `thickness`. Ties go to the
/// lexicographically largest dims.
pub fn partition_ranks(bx: &SimBox, n_ranks: usize, thickness: f64) -> Result<RankGrid> {
    if n_ranks == 0 {
        return Err(Error::InvalidInput("rank count must be >= 1".into()));
    }
    let mut best: Option<([usize; 3], f64)> = None;
    for dims in factorizations(n_ranks) {
        let grid = RankGrid { dims };
        if grid.edges(bx).iter().any(|&e| e < thickness) {
            continue;
        }
        let s = grid_surface(dims, bx);
        best = match best {
            None => Some((dims, s)),
            Some((bd, bs)) => {
                let tol = 1e-12 * bs.abs().max(s.abs());
                if s < bs - tol || ((s - bs).abs() <= tol && dims > bd) {
                    Some((dims, s))
                } else {
                    Some((bd, bs))
                }
            }
        };
    }
    match best {
        Some((dims, _)) => Ok(RankGrid { dims }),
        None => Err(Error::Geometry(format!(
            "no factorisation of {n_ranks} ranks gives subdomain edges >= halo thickness {thickness} \
             in box {:?}; use fewer ranks",
            bx.lengths
        ))),
    }
}

/// Owner rank of every atom; O(N).
pub fn owners(positions: &[Vec3], grid: &RankGrid, bx: &SimBox) -> Vec<usize> {
    positions.iter().map(|r| grid.rank_of(*r, bx)).collect()
}

/// Local index sets per rank, ascending.
pub fn assign_local(positions: &[Vec3], grid: &RankGrid, bx: &SimBox) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); grid.n_ranks()];
    for (i, r) in positions.iter().enumerate() {
        out[grid.rank_of(*r, bx)].push(i);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ghost {
    /// Index into `atomAll`.
    pub index: usize,
    pub global_id: u64,
    pub owner: usize,
    pub shift: [i32; 3],
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subdomain {
    pub rank: usize,
    pub lo: Vec3,
    pub hi: Vec3,
    /// Indices into `atomAll`.
    pub local: Vec<usize>,
    pub ghosts: Vec<Ghost>,
}

impl Subdomain {
    pub fn local_ids(&self, atom_all: &AtomSet) -> Vec<u64> {
        self.local.iter().map(|&i| atom_all.global_ids[i]).collect()
    }
}

fn shifts_for_axis(x: f64, lo: f64, hi: f64, t: f64, l: f64, periodic: bool) -> Vec<i32> {
    let candidates: &[i32] = if periodic { &[-1, 0, 1] } else { &[0] };
    candidates
        .iter()
        .copied()
        .filter(|&s| {
            let p = x + s as f64 * l;
            p >= lo - t && p < hi + t
        })
        .collect()
}

fn check_thickness(grid: &RankGrid, bx: &SimBox, thickness: f64) -> Result<()> {
    let edges = grid.edges(bx);
    for k in 0..3 {
        if edges[k] < thickness {
            return Err(Error::Geometry(format!(
                "halo thickness {thickness} exceeds subdomain edge {} on axis {k}",
                edges[k]
            )));
        }
    }
    Ok(())
}

/// Ghost copies of every atom image inside `[lo - t, hi + t)` on each axis,
/// excluding the rank's own atoms at zero shift. Image shifts are limited to one
/// box length, which the thickness check guarantees is enough.
pub fn build_halo(
    atom_all: &AtomSet,
    owner: &[usize],
    grid: &RankGrid,
    rank: usize,
    thickness: f64,
    bx: &SimBox,
) -> Result<Vec<Ghost>> {
    check_thickness(grid, bx, thickness)?;
    let (lo, hi) = grid.bounds(rank, bx);
    let mut out = Vec::new();
    for (i, r) in atom_all.positions.iter().enumerate() {
        let sx = shifts_for_axis(r[0], lo[0], hi[0], thickness, bx.lengths[0], bx.periodic[0]);
        if sx.is_empty() {
            continue;
        }
        let sy = shifts_for_axis(r[1], lo[1], hi[1], thickness, bx.lengths[1], bx.periodic[1]);
        if sy.is_empty() {
            continue;
        }
        let sz = shifts_for_axis(r[2], lo[2], hi[2], thickness, bx.lengths[2], bx.periodic[2]);
        for &a in &sx {
            for &b in &sy {
                for &c in &sz {
                    let shift = [a, b, c];
                    if shift == [0, 0, 0] && owner[i] == rank {
                        continue;
                    }
                    out.push(Ghost {
                        index: i,
                        global_id: atom_all.global_ids[i],
                        owner: owner[i],
                        shift,
                        position: image_position(*r, shift, bx),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Reference halo: tests all 27 images of every atom against the slab predicate.
pub fn brute_force_halo(
    atom_all: &AtomSet,
    owner: &[usize],
    grid: &RankGrid,
    rank: usize,
    thickness: f64,
    bx: &SimBox,
) -> Vec<Ghost> {
    let (lo, hi) = grid.bounds(rank, bx);
    let mut out = Vec::new();
    for (i, r) in atom_all.positions.iter().enumerate() {
        for a in -1..=1 {
            for b in -1..=1 {
                for c in -1..=1 {
                    let shift = [a, b, c];
                    if (0..3).any(|k| !bx.periodic[k] && shift[k] != 0) {
                        continue;
                    }
                    if shift == [0, 0, 0] && owner[i] == rank {
                        continue;
                    }
                    let p = image_position(*r, shift, bx);
                    if (0..3).all(|k| p[k] >= lo[k] - thickness && p[k] < hi[k] + thickness) {
                        out.push(Ghost {
                            index: i,
                            global_id: atom_all.global_ids[i],
                            owner: owner[i],
                            shift,
                            position: p,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Field sizes of the collective payloads in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PayloadLayout {
    pub position: usize,
    pub species: usize,
    pub index: usize,
    pub force: usize,
}

impl Default for PayloadLayout {
    /// Single-precision positions and forces, 32-bit type and global index.
    fn default() -> Self {
        PayloadLayout {
            position: 12,
            species: 4,
            index: 4,
            force: 12,
        }
    }
}

impl PayloadLayout {
    pub fn gather_bytes_per_atom(&self) -> usize {
        self.position + self.species + self.index
    }

    pub fn reduce_bytes_per_atom(&self) -> usize {
        self.force + self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    GatherPositions,
    ReduceForces,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectiveRecord {
    pub step: usize,
    pub kind: CollectiveKind,
    pub atoms: usize,
    pub bytes: usize,
    pub participants: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectiveLedger {
    pub layout: PayloadLayout,
    pub records: Vec<CollectiveRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub gathers: usize,
    pub reduces: usize,
    pub gather_bytes: usize,
    pub reduce_bytes: usize,
    pub gather_bytes_per_atom: usize,
    pub reduce_bytes_per_atom: usize,
    pub reference_bytes_per_atom: usize,
}

impl CollectiveLedger {
    pub fn new(layout: PayloadLayout) -> Self {
        CollectiveLedger {
            layout,
            records: Vec::new(),
        }
    }

    pub fn summary(&self) -> LedgerSummary {
        let sum = |k: CollectiveKind| -> (usize, usize) {
            self.records
                .iter()
                .filter(|r| r.kind == k)
                .fold((0, 0), |(n, b), r| (n + 1, b + r.bytes))
        };
        let (gathers, gather_bytes) = sum(CollectiveKind::GatherPositions);
        let (reduces, reduce_bytes) = sum(CollectiveKind::ReduceForces);
        LedgerSummary {
            gathers,
            reduces,
            gather_bytes,
            reduce_bytes,
            gather_bytes_per_atom: self.layout.gather_bytes_per_atom(),
            reduce_bytes_per_atom: self.layout.reduce_bytes_per_atom(),
            reference_bytes_per_atom: REFERENCE_BYTES_PER_ATOM,
        }
    }
}

/// Merges per-rank local sets into `atomAll`, ordered by global id, and
/// replicates it to every rank.
pub fn gather_positions(per_rank: &[AtomSet], ledger: &mut CollectiveLedger, step: usize) -> Result<Vec<AtomSet>> {
    let total: usize = per_rank.iter().map(AtomSet::len).sum();
    let mut keyed: Vec<(u64, usize, usize)> = Vec::with_capacity(total);
    for (r, set) in per_rank.iter().enumerate() {
        for (i, &id) in set.global_ids.iter().enumerate() {
            keyed.push((id, r, i));
        }
    }
    keyed.sort_unstable();
    if let Some(w) = keyed.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Partition(format!(
            "global id {} is local on ranks {} and {}",
            w[0].0, w[0].1, w[1].1
        )));
    }
    let mut all = AtomSet::default();
    for (_, r, i) in keyed {
        let s = &per_rank[r];
        all.push(s.global_ids[i], s.species[i], s.positions[i], s.velocities[i], s.masses[i]);
    }
    ledger.records.push(CollectiveRecord {
        step,
        kind: CollectiveKind::GatherPositions,
        atoms: total,
        bytes: total * ledger.layout.gather_bytes_per_atom(),
        participants: per_rank.len(),
    });
    Ok(vec![all; per_rank.len()])
}

/// Sums per-rank `(global id, force)` contributions in ascending rank order.
/// The result follows `ids` and is identical on every rank.
pub fn reduce_forces(
    contributions: &[Vec<(u64, Vec3)>],
    ids: &[u64],
    ledger: &mut CollectiveLedger,
    step: usize,
) -> Result<Vec<Vec3>> {
    let slot: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut out = vec![[0.0; 3]; ids.len()];
    let mut entries = 0usize;
    for part in contributions {
        for (id, f) in part {
            let &k = slot
                .get(id)
                .ok_or_else(|| Error::Partition(format!("force contribution for unknown global id {id}")))?;
            vec3::add_assign(&mut out[k], *f);
        }
        entries += part.len();
    }
    ledger.records.push(CollectiveRecord {
        step,
        kind: CollectiveKind::ReduceForces,
        atoms: entries,
        bytes: entries * ledger.layout.reduce_bytes_per_atom(),
        participants: contributions.len(),
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStats {
    pub rank: usize,
    pub locals: usize,
    pub ghosts: usize,
    /// Atoms evaluated as model centers.
    pub centers: usize,
    pub energy: f64,
    pub dd_build: f64,
    pub neighbor_build: f64,
    pub inference: f64,
    pub ghost_force_route: f64,
}

impl RankStats {
    pub fn busy_seconds(&self) -> f64 {
        self.dd_build + self.neighbor_build + self.inference + self.ghost_force_route
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdOutput {
    pub energy: f64,
    /// Forces in the order of the input atoms.
    pub forces: Vec<Vec3>,
    pub grid: RankGrid,
    pub ranks: Vec<RankStats>,
    pub gather_seconds: f64,
    pub reduce_seconds: f64,
}

impl DdOutput {
    /// Step time if all ranks ran concurrently: gather, slowest rank, reduce.
    pub fn critical_path_seconds(&self) -> f64 {
        let slowest = self.ranks.iter().map(RankStats::busy_seconds).fold(0.0, f64::max);
        self.gather_seconds + slowest + self.reduce_seconds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdOptions {
    pub n_ranks: usize,
    pub scheme: Scheme,
    /// Concurrent rank workers; ranks are strided over workers.
    pub workers: usize,
}

struct RankResult {
    stats: RankStats,
    contributions: Vec<(u64, Vec3)>,
    spans: Vec<(Phase, f64, f64)>,
}

fn run_rank(
    rank: usize,
    atom_all: &AtomSet,
    owner: &[usize],
    grid: &RankGrid,
    bx: &SimBox,
    model: &DPModel,
    scheme: Scheme,
    trace: &StepTrace,
) -> Result<RankResult> {
    let rc = model.config.rc;
    let mut spans = Vec::with_capacity(4);

    let t0 = trace.now();
    let local: Vec<usize> = (0..atom_all.len()).filter(|&i| owner[i] == rank).collect();
    let ghosts = build_halo(atom_all, owner, grid, rank, scheme.halo_thickness(rc), bx)?;
    let (lo, hi) = grid.bounds(rank, bx);
    let mut sub = atom_all.subset(&local);
    let mut centers: Vec<bool> = vec![true; local.len()];
    for g in &ghosts {
        sub.push(
            g.global_id,
            atom_all.species[g.index],
            g.position,
            [0.0; 3],
            atom_all.masses[g.index],
        );
        let first_layer = scheme == Scheme::WideHalo
            && (0..3).all(|k| g.position[k] >= lo[k] - rc && g.position[k] < hi[k] + rc);
        centers.push(first_layer);
    }
    let open = bx.as_open();
    let t1 = trace.now();
    spans.push((Phase::DdBuild, t0, t1));

    let nlist = build_neighbor_list(&sub.positions, &open, rc, ListMode::Full)?;
    let t2 = trace.now();
    spans.push((Phase::NeighborBuild, t1, t2));

    let n_local = local.len();
    let (energy, forces) = if sub.is_empty() || n_local + ghosts.len() == 0 || !centers.iter().any(|&c| c) {
        (0.0, vec![[0.0; 3]; sub.len()])
    } else {
        let out = evaluate_dp(&sub, &open, &nlist, model, Some(&centers))?;
        let e: f64 = out.atom_energies[..n_local].iter().sum();
        (e, out.forces)
    };
    let t3 = trace.now();
    spans.push((Phase::Inference, t2, t3));

    let mut contributions: Vec<(u64, Vec3)> = (0..n_local).map(|i| (sub.global_ids[i], forces[i])).collect();
    let mut route = 0.0;
    if scheme == Scheme::MaskedReduction {
        for (g, f) in ghosts.iter().zip(&forces[n_local..]) {
            contributions.push((g.global_id, *f));
        }
        let t4 = trace.now();
        spans.push((Phase::GhostForceRoute, t3, t4));
        route = t4 - t3;
    }
    Ok(RankResult {
        stats: RankStats {
            rank,
            locals: n_local,
            ghosts: ghosts.len(),
            centers: centers.iter().filter(|&&c| c).count(),
            energy,
            dd_build: t1 - t0,
            neighbor_build: t2 - t1,
            inference: t3 - t2,
            ghost_force_route: route,
        },
        contributions,
        spans,
    })
}

/// One decomposed model evaluation: gather, per-rank halo build, neighbor list
/// and masked inference, optional ghost-force routing, and the force reduction.
pub fn dd_evaluate(
    atoms: &AtomSet,
    bx: &SimBox,
    model: &DPModel,
    opts: &DdOptions,
    step: usize,
    trace: &StepTrace,
    ledger: &mut CollectiveLedger,
) -> Result<DdOutput> {
    let rc = model.config.rc;
    bx.check_cutoff(rc)?;
    let grid = partition_ranks(bx, opts.n_ranks, opts.scheme.halo_thickness(rc))?;
    let n_ranks = grid.n_ranks();

    let g0 = trace.now();
    let mut wrapped = atoms.clone();
    wrapped.wrap_positions(bx);
    let host_parts: Vec<AtomSet> = assign_local(&wrapped.positions, &grid, bx)
        .iter()
        .map(|idx| wrapped.subset(idx))
        .collect();
    let replicas = gather_positions(&host_parts, ledger, step)?;
    let atom_all = &replicas[0];
    let owner = owners(&atom_all.positions, &grid, bx);
    let g1 = trace.now();
    for r in 0..n_ranks {
        trace.record_span(r, Phase::GatherPositions, g0, g1, step)?;
    }

    let workers = opts.workers.clamp(1, n_ranks);
    let mut results: Vec<Option<Result<RankResult>>> = (0..n_ranks).map(|_| None).collect();
    if workers == 1 {
        for (r, slot) in results.iter_mut().enumerate() {
            *slot = Some(run_rank(r, &replicas[r], &owner, &grid, bx, model, opts.scheme, trace));
        }
    } else {
        let owner = &owner;
        let grid = &grid;
        let replicas = &replicas;
        let per_worker: Vec<Vec<(usize, Result<RankResult>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    s.spawn(move || {
                        (w..n_ranks)
                            .step_by(workers)
                            .map(|r| (r, run_rank(r, &replicas[r], owner, grid, bx, model, opts.scheme, trace)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("rank worker panicked")).collect()
        });
        for (r, res) in per_worker.into_iter().flatten() {
            results[r] = Some(res);
        }
    }
    let mut ranks = Vec::with_capacity(n_ranks);
    let mut contributions = Vec::with_capacity(n_ranks);
    for (r, res) in results.into_iter().enumerate() {
        let res = res.expect("every rank produces a result")?;
        for (phase, a, b) in &res.spans {
            trace.record_span(r, *phase, *a, *b, step)?;
        }
        ranks.push(res.stats);
        contributions.push(res.contributions);
    }

    let r0 = trace.now();
    let reduced = reduce_forces(&contributions, &atom_all.global_ids, ledger, step)?;
    let energy: f64 = ranks.iter().map(|r| r.energy).sum();
    let slot: HashMap<u64, usize> = atom_all.global_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let forces: Vec<Vec3> = atoms.global_ids.iter().map(|id| reduced[slot[id]]).collect();
    let r1 = trace.now();
    for r in 0..n_ranks {
        trace.record_span(r, Phase::ReduceForces, r0, r1, step)?;
    }
    Ok(DdOutput {
        energy,
        forces,
        grid,
        ranks,
        gather_seconds: g1 - g0,
        reduce_seconds: r1 - r0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRow {
    pub step: usize,
    pub rank: usize,
    pub locals: usize,
    pub ghosts: usize,
    pub phase: String,
    pub seconds: f64,
    pub bytes: usize,
}

/// Per-rank phase rows of one decomposed step, with collective payload bytes
/// split evenly over participants.
pub fn load_rows(step: usize, out: &DdOutput, ledger: &CollectiveLedger) -> Vec<LoadRow> {
    let bytes_for = |kind: CollectiveKind| -> usize {
        ledger
            .records
            .iter()
            .filter(|r| r.step == step && r.kind == kind)
            .map(|r| r.bytes / r.participants.max(1))
            .sum()
    };
    let mut rows = Vec::new();
    for rs in &out.ranks {
        let mut push = |phase: Phase, seconds: f64, bytes: usize| {
            rows.push(LoadRow {
                step,
                rank: rs.rank,
                locals: rs.locals,
                ghosts: rs.ghosts,
                phase: phase.name().to_string(),
                seconds,
                bytes,
            })
        };
        push(Phase::GatherPositions, out.gather_seconds, bytes_for(CollectiveKind::GatherPositions));
        push(Phase::DdBuild, rs.dd_build, 0);
        push(Phase::NeighborBuild, rs.neighbor_build, 0);
        push(Phase::Inference, rs.inference, 0);
        push(Phase::GhostForceRoute, rs.ghost_force_route, 0);
        push(Phase::ReduceForces, out.reduce_seconds, bytes_for(CollectiveKind::ReduceForces));
    }
    rows
}

pub fn write_load_csv(rows: &[LoadRow], path: &Path) -> Result<()> {
    write_csv_rows(rows, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_ranks: usize,
    pub n_atoms: usize,
    /// Steps per second on the modeled critical path.
    pub throughput: f64,
    pub step_seconds: f64,
    pub mean_locals: f64,
    pub mean_ghosts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTiming {
    pub n_ranks: usize,
    pub rank: usize,
    pub locals: usize,
    pub ghosts: usize,
    pub busy_seconds: f64,
    pub inference_seconds: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `repeats` decomposed evaluations per rank count (after one warm-up)
/// and reports medians. `system(n)` supplies the system for `n` ranks, which
/// lets weak scaling grow it.
pub fn measure_sweep(
    rank_counts: &[usize],
    scheme: Scheme,
    workers: usize,
    repeats: usize,
    model: &DPModel,
    mut system: impl FnMut(usize) -> Result<(SimBox, AtomSet)>,
) -> Result<(Vec<SweepRow>, Vec<RankTiming>)> {
    if repeats == 0 {
        return Err(Error::InvalidInput("repeats must be >= 1".into()));
    }
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for &n_ranks in rank_counts {
        let (bx, atoms) = system(n_ranks)?;
        let opts = DdOptions {
            n_ranks,
            scheme,
            workers,
        };
        let mut ledger = CollectiveLedger::default();
        dd_evaluate(&atoms, &bx, model, &opts, 0, &StepTrace::new(), &mut ledger)?;
        let mut outs = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            outs.push(dd_evaluate(&atoms, &bx, model, &opts, rep, &StepTrace::new(), &mut ledger)?);
        }
        let step = median(outs.iter().map(DdOutput::critical_path_seconds).collect());
        let first = &outs[0];
        let nr = first.ranks.len();
        for r in 0..nr {
            timings.push(RankTiming {
                n_ranks,
                rank: r,
                locals: first.ranks[r].locals,
                ghosts: first.ranks[r].ghosts,
                busy_seconds: median(outs.iter().map(|o| o.ranks[r].busy_seconds()).collect()),
                inference_seconds: median(outs.iter().map(|o| o.ranks[r].inference).collect()),
            });
        }
        rows.push(SweepRow {
            n_ranks,
            n_atoms: atoms.len(),
            throughput: 1.0 / step,
            step_seconds: step,
            mean_locals: first.ranks.iter().map(|r| r.locals as f64).sum::<f64>() / nr as f64,
            mean_ghosts: first.ranks.iter().map(|r| r.ghosts as f64).sum::<f64>() / nr as f64,
        });
    }
    Ok((rows, timings))
}

pub fn write_csv_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub config: usize,
    pub n_atoms: usize,
    /// Scheme name, or `cross` for masked_reduction against wide_halo.
    pub scheme: String,
    pub n_ranks: usize,
    pub energy_rel_err: f64,
    pub force_rel_err: f64,
    pub pass: bool,
    pub error: Option<String>,
}

/// Largest per-component force deviation, relative to `max(|ref|, floor·max|ref|)`.
/// The floor keeps near-zero components from dominating.
pub fn max_force_rel_err(forces: &[Vec3], reference: &[Vec3], floor: f64) -> f64 {
    let fmax = reference.iter().flat_map(|v| v.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
    let mut worst = 0.0f64;
    for (a, b) in forces.iter().zip(reference) {
        for k in 0..3 {
            let denom = b[k].abs().max(floor * fmax).max(f64::MIN_POSITIVE);
            worst = worst.max((a[k] - b[k]).abs() / denom);
        }
    }
    worst
}

/// Random periodic system sized so that every rank count up to 8 (and 3) can be
/// partitioned with a `2·rc` halo: `Lx ∈ [6rc, 7rc)`, `Ly, Lz ∈ [4rc, 5rc)`.
pub fn random_validation_system<R: rand::Rng>(
    rc: f64,
    density: f64,
    max_atoms: usize,
    n_types: usize,
    rng: &mut R,
) -> Result<(SimBox, AtomSet)> {
    let lengths = [
        rc * rng.gen_range(6.0..7.0),
        rc * rng.gen_range(4.0..5.0),
        rc * rng.gen_range(4.0..5.0),
    ];
    let bx = SimBox::new(lengths, [true; 3])?;
    let n = ((density * bx.volume()).round() as usize).clamp(2, max_atoms.max(2));
    let atoms = crate::system::random_configuration(n, &bx, n_types, 0.7, rng)?;
    Ok((bx, atoms))
}

/// Compares decomposed evaluation against the single-domain result for each
/// scheme and rank count, plus the two schemes against each other.
pub fn validate_against_single_domain(
    config: usize,
    atoms: &AtomSet,
    bx: &SimBox,
    model: &DPModel,
    ranks: &[usize],
    schemes: &[Scheme],
    workers: usize,
    energy_tol: f64,
    force_tol: f64,
) -> Result<Vec<ValidationRow>> {
    let reference = crate::deeppot::evaluate_system(atoms, bx, model)?;
    let mut rows = Vec::new();
    for &n_ranks in ranks {
        let mut by_scheme: Vec<(f64, Vec<Vec3>)> = Vec::new();
        for &scheme in schemes {
            let opts = DdOptions {
                n_ranks,
                scheme,
                workers,
            };
            let mut ledger = CollectiveLedger::default();
            let row = match dd_evaluate(atoms, bx, model, &opts, 0, &StepTrace::new(), &mut ledger) {
                Ok(out) => {
                    let e = (out.energy - reference.energy).abs() / reference.energy.abs().max(f64::MIN_POSITIVE);
                    let f = max_force_rel_err(&out.forces, &reference.forces, 1e-3);
                    by_scheme.push((out.energy, out.forces));
                    ValidationRow {
                        config,
                        n_atoms: atoms.len(),
                        scheme: scheme.name().to_string(),
                        n_ranks,
                        energy_rel_err: e,
                        force_rel_err: f,
                        pass: e <= energy_tol && f <= force_tol,
                        error: None,
                    }
                }
                Err(err) => ValidationRow {
                    config,
                    n_atoms: atoms.len(),
                    scheme: scheme.name().to_string(),
                    n_ranks,
                    energy_rel_err: f64::NAN,
                    force_rel_err: f64::NAN,
                    pass: false,
                    error: Some(err.to_string()),
                },
            };
            rows.push(row);
        }
        if by_scheme.len() == 2 {
            let (ea, fa) = &by_scheme[0];
            let (eb, fb) = &by_scheme[1];
            let e = (ea - eb).abs() / eb.abs().max(f64::MIN_POSITIVE);
            let f = max_force_rel_err(fa, fb, 1e-3);
            rows.push(ValidationRow {
                config,
                n_atoms: atoms.len(),
                scheme: "cross".into(),
                n_ranks,
                energy_rel_err: e,
                force_rel_err: f,
                pass: e <= energy_tol && f <= force_tol,
                error: None,
            });
        }
    }
    Ok(rows)
}
