//! Smooth environment matrix, embedding, gated self-attention and the
//! descriptor contraction, with a hand-written backward pass.

use super::linalg;
use super::model::DPModel;
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

/// `s(r)` and `ds/dr`: `1/r` inside `rcs`, zero beyond `rc`, with the quintic
/// switch `u³(-6u² + 15u - 10) + 1` in between.
pub fn switch_fn(r: f64, rcs: f64, rc: f64) -> Result<(f64, f64)> {
    if !(r > 0.0) {
        return Err(Error::Singularity { i: 0, j: 0, distance: r });
    }
    if r >= rc {
        return Ok((0.0, 0.0));
    }
    let inv = 1.0 / r;
    if r <= rcs {
        return Ok((inv, -inv * inv));
    }
    let w = rc - rcs;
    let u = (r - rcs) / w;
    let u2 = u * u;
    let u3 = u2 * u;
    let sw = u3 * (-6.0 * u2 + 15.0 * u - 10.0) + 1.0;
    let dsw = (-30.0 * u2 * u2 + 60.0 * u3 - 30.0 * u2) / w;
    Ok((inv * sw, -inv * inv * sw + inv * dsw))
}

/// One real row of an environment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvNeighbor {
    /// Index into the evaluated atom arrays.
    pub index: usize,
    pub species: usize,
    pub global_id: u64,
    /// `r_j - r_i`
    pub displacement: Vec3,
    pub r: f64,
    pub s: f64,
    pub ds_dr: f64,
}

impl EnvNeighbor {
    pub fn row(&self) -> [f64; 4] {
        let k = self.s / self.r;
        let d = self.displacement;
        [self.s, k * d[0], k * d[1], k * d[2]]
    }
}

/// Environment of one center: sorted real neighbors, padded to `n_max` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMatrix {
    pub center: usize,
    pub center_species: usize,
    pub n_max: usize,
    pub neighbors: Vec<EnvNeighbor>,
}

impl EnvironmentMatrix {
    /// Builds the matrix from candidate neighbors `(index, species, global_id,
    /// displacement)`. Candidates at or beyond `rc` are dropped; the rest are
    /// ordered by (species, distance, global id).
    pub fn new(
        center: usize,
        center_species: usize,
        candidates: impl IntoIterator<Item = (usize, usize, u64, Vec3)>,
        model: &DPModel,
    ) -> Result<Self> {
        let c = &model.config;
        let mut neighbors = Vec::new();
        for (index, species, global_id, displacement) in candidates {
            let r = vec3::norm(displacement);
            if r < crate::classical::MIN_DISTANCE {
                return Err(Error::Singularity {
                    i: center,
                    j: index,
                    distance: r,
                });
            }
            if r >= c.rc {
                continue;
            }
            if species >= c.n_types {
                return Err(Error::InvalidInput(format!(
                    "species {species} outside model range 0..{}",
                    c.n_types
                )));
            }
            let (s, ds_dr) = switch_fn(r, c.rcs, c.rc)?;
            neighbors.push(EnvNeighbor {
                index,
                species,
                global_id,
                displacement,
                r,
                s,
                ds_dr,
            });
        }
        if neighbors.len() > c.n_max {
            return Err(Error::NeighborOverflow {
                atom: center,
                count: neighbors.len(),
                capacity: c.n_max,
            });
        }
        neighbors.sort_by(|a, b| {
            a.species
                .cmp(&b.species)
                .then(a.r.total_cmp(&b.r))
                .then(a.global_id.cmp(&b.global_id))
                .then(a.index.cmp(&b.index))
        });
        Ok(EnvironmentMatrix {
            center,
            center_species,
            n_max: c.n_max,
            neighbors,
        })
    }

    /// Full `n_max × 4` matrix with zero padding.
    pub fn rows(&self) -> Vec<[f64; 4]> {
        let mut out: Vec<[f64; 4]> = self.neighbors.iter().map(EnvNeighbor::row).collect();
        out.resize(self.n_max, [0.0; 4]);
        out
    }
}

struct AttnCache {
    g_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights `A` (n×n).
    a: Vec<f64>,
    /// `E_jk / Z_j`, the softmax numerator over its normaliser without the weight.
    ez: Vec<f64>,
    gate: Vec<f64>,
    o: Vec<f64>,
}

/// Intermediate values of one center's forward pass.
pub struct CenterCache {
    n: usize,
    rmat: Vec<[f64; 4]>,
    embed: super::model::MlpCache,
    attn: Vec<AttnCache>,
    gate_norm: f64,
    g: Vec<f64>,
    t: Vec<f64>,
    fit: super::model::MlpCache,
    pub descriptor: Vec<f64>,
    pub energy: f64,
}

/// Forward pass for one center. Returns the atomic energy and the cache needed
/// by [`backward_center`].
pub fn forward_center(env: &EnvironmentMatrix, model: &DPModel) -> CenterCache {
    let c = &model.config;
    let n = env.neighbors.len();
    let m = c.m;
    let rmat: Vec<[f64; 4]> = env.neighbors.iter().map(EnvNeighbor::row).collect();

    let din = c.embed_input();
    let zi = model.type_embedding(env.center_species);
    let mut x = Vec::with_capacity(n * din);
    for nb in &env.neighbors {
        x.push(nb.s);
        x.extend_from_slice(model.type_embedding(nb.species));
        x.extend_from_slice(zi);
    }
    let embed = model.embed.forward(x, n);
    let mut g = embed.output().to_vec();

    let gate_norm: f64 = rmat.iter().map(|r| r[0] * r[0]).sum();
    let mut attn = Vec::with_capacity(model.attn.len());
    if n > 0 && !model.attn.is_empty() {
        let d_a = c.d_a;
        let inv_sqrt = 1.0 / (d_a as f64).sqrt();
        let mut gate = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                let (rj, rk) = (rmat[j], rmat[k]);
                gate[j * n + k] = (rj[0] * rk[0] + rj[1] * rk[1] + rj[2] * rk[2] + rj[3] * rk[3]) / gate_norm;
            }
        }
        for layer in &model.attn {
            let q = linalg::matmul(&g, &layer.wq, n, m, d_a);
            let k = linalg::matmul(&g, &layer.wk, n, m, d_a);
            let v = linalg::matmul(&g, &layer.wv, n, m, d_a);
            let mut scores = linalg::matmul_nt(&q, &k, n, d_a, n);
            let mut a = vec![0.0; n * n];
            let mut ez = vec![0.0; n * n];
            for j in 0..n {
                let row = &mut scores[j * n..(j + 1) * n];
                row.iter_mut().for_each(|s| *s *= inv_sqrt);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for kk in 0..n {
                    let e = (row[kk] - max).exp();
                    ez[j * n + kk] = e;
                    z += env.neighbors[kk].s * e;
                }
                for kk in 0..n {
                    ez[j * n + kk] /= z;
                    a[j * n + kk] = env.neighbors[kk].s * ez[j * n + kk];
                }
            }
            let p: Vec<f64> = a.iter().zip(&gate).map(|(x, y)| x * y).collect();
            let o = linalg::matmul(&p, &v, n, n, d_a);
            let delta = linalg::matmul(&o, &layer.wo, n, d_a, m);
            let g_in = g.clone();
            for (gv, dv) in g.iter_mut().zip(&delta) {
                *gv += dv;
            }
            attn.push(AttnCache {
                g_in,
                q,
                k,
                v,
                a,
                ez,
                gate: gate.clone(),
                o,
            });
        }
    }

    // T = Rᵀ G / n_max (4×M)
    let inv_nmax = 1.0 / c.n_max as f64;
    let mut t = vec![0.0; 4 * m];
    for j in 0..n {
        for aa in 0..4 {
            let r = rmat[j][aa] * inv_nmax;
            for mm in 0..m {
                t[aa * m + mm] += r * g[j * m + mm];
            }
        }
    }
    let m_r = c.m_r;
    let mut d = vec![0.0; m * m_r];
    for mm in 0..m {
        for rr in 0..m_r {
            d[mm * m_r + rr] = (0..4).map(|aa| t[aa * m + mm] * t[aa * m + rr]).sum();
        }
    }
    let input: Vec<f64> = d
        .iter()
        .zip(model.fit_shift.iter().zip(&model.fit_scale))
        .map(|(v, (sh, sc))| (v - sh) * sc)
        .collect();
    let fit = model.fit.forward(input, 1);
    let energy = fit.output()[0];
    CenterCache {
        n,
        rmat,
        embed,
        attn,
        gate_norm,
        g,
        t,
        fit,
        descriptor: d,
        energy,
    }
}

/// Backward pass for one center scaled by `de` (the upstream gradient of the
/// atomic energy). Returns `de·∂e/∂d_j` for each sorted neighbor `j`, where
/// `d_j = r_j - r_i`; the center's own gradient is minus their sum.
pub fn backward_center(
    env: &EnvironmentMatrix,
    model: &DPModel,
    cache: &CenterCache,
    de: f64,
    mut grad: Option<&mut DPModel>,
) -> Vec<Vec3> {
    let c = &model.config;
    let n = cache.n;
    let m = c.m;
    let m_r = c.m_r;

    let d_in = model
        .fit
        .backward(&cache.fit, vec![de], grad.as_deref_mut().map(|g| &mut g.fit));
    if n == 0 {
        return Vec::new();
    }
    let dd: Vec<f64> = d_in.iter().zip(&model.fit_scale).map(|(x, s)| x * s).collect();

    let t = &cache.t;
    let mut dt = vec![0.0; 4 * m];
    for aa in 0..4 {
        for mm in 0..m {
            let mut acc = 0.0;
            for rr in 0..m_r {
                acc += dd[mm * m_r + rr] * t[aa * m + rr];
            }
            if mm < m_r {
                for m2 in 0..m {
                    acc += dd[m2 * m_r + mm] * t[aa * m + m2];
                }
            }
            dt[aa * m + mm] = acc;
        }
    }

    let inv_nmax = 1.0 / c.n_max as f64;
    let mut dr = vec![[0.0f64; 4]; n];
    let mut dg = vec![0.0; n * m];
    for j in 0..n {
        for aa in 0..4 {
            let mut acc = 0.0;
            for mm in 0..m {
                acc += dt[aa * m + mm] * cache.g[j * m + mm];
                dg[j * m + mm] += dt[aa * m + mm] * cache.rmat[j][aa] * inv_nmax;
            }
            dr[j][aa] += acc * inv_nmax;
        }
    }

    if !cache.attn.is_empty() {
        let d_a = c.d_a;
        let inv_sqrt = 1.0 / (d_a as f64).sqrt();
        let mut dgate = vec![0.0; n * n];
        let mut dw = vec![0.0; n];
        for (l, ac) in cache.attn.iter().enumerate().rev() {
            let layer = &model.attn[l];
            // G_out = G_in + O·Wo
            if let Some(gm) = grad.as_deref_mut() {
                linalg::matmul_tn_acc(&mut gm.attn[l].wo, &ac.o, &dg, n, d_a, m);
            }
            let d_o = linalg::matmul_nt(&dg, &layer.wo, n, m, d_a);
            // O = P·V
            let dp = linalg::matmul_nt(&d_o, &ac.v, n, d_a, n);
            let p: Vec<f64> = ac.a.iter().zip(&ac.gate).map(|(x, y)| x * y).collect();
            let mut dv = vec![0.0; n * d_a];
            linalg::matmul_tn_acc(&mut dv, &p, &d_o, n, n, d_a);
            // P = A∘gate
            let mut ds = vec![0.0; n * n];
            for j in 0..n {
                let row = j * n..(j + 1) * n;
                let mut cj = 0.0;
                for idx in row.clone() {
                    dgate[idx] += dp[idx] * ac.a[idx];
                    cj += ac.a[idx] * dp[idx] * ac.gate[idx];
                }
                for (kk, idx) in row.enumerate() {
                    let da = dp[idx] * ac.gate[idx] - cj;
                    ds[idx] = ac.a[idx] * da;
                    dw[kk] += ac.ez[idx] * da;
                }
            }
            ds.iter_mut().for_each(|x| *x *= inv_sqrt);
            let dq = linalg::matmul(&ds, &ac.k, n, n, d_a);
            let mut dk = vec![0.0; n * d_a];
            linalg::matmul_tn_acc(&mut dk, &ds, &ac.q, n, n, d_a);
            if let Some(gm) = grad.as_deref_mut() {
                let ga = &mut gm.attn[l];
                linalg::matmul_tn_acc(&mut ga.wq, &ac.g_in, &dq, n, m, d_a);
                linalg::matmul_tn_acc(&mut ga.wk, &ac.g_in, &dk, n, m, d_a);
                linalg::matmul_tn_acc(&mut ga.wv, &ac.g_in, &dv, n, m, d_a);
            }
            let back_q = linalg::matmul_nt(&dq, &layer.wq, n, d_a, m);
            let back_k = linalg::matmul_nt(&dk, &layer.wk, n, d_a, m);
            let back_v = linalg::matmul_nt(&dv, &layer.wv, n, d_a, m);
            for idx in 0..n * m {
                dg[idx] += back_q[idx] + back_k[idx] + back_v[idx];
            }
        }
        // gate_jk = R_j·R_k / Σ s²
        let norm = cache.gate_norm;
        let gate = &cache.attn[0].gate;
        let mut dnorm = 0.0;
        for j in 0..n {
            for kk in 0..n {
                let sym = dgate[j * n + kk] + dgate[kk * n + j];
                for aa in 0..4 {
                    dr[j][aa] += sym * cache.rmat[kk][aa] / norm;
                }
                dnorm -= dgate[j * n + kk] * gate[j * n + kk] / norm;
            }
        }
        for j in 0..n {
            dr[j][0] += 2.0 * cache.rmat[j][0] * dnorm + dw[j];
        }
    }

    let dx = model.embed.backward(&cache.embed, dg, grad.as_deref_mut().map(|g| &mut g.embed));
    let din = c.embed_input();
    let d_z = c.d_z;
    if let Some(gm) = grad {
        let ci = env.center_species;
        for (j, nb) in env.neighbors.iter().enumerate() {
            let row = &dx[j * din..(j + 1) * din];
            for z in 0..d_z {
                gm.type_embed[nb.species * d_z + z] += row[1 + z];
                gm.type_embed[ci * d_z + z] += row[1 + d_z + z];
            }
        }
    }

    let mut out = Vec::with_capacity(n);
    for (j, nb) in env.neighbors.iter().enumerate() {
        let gr = dr[j];
        let unit = vec3::scale(nb.displacement, 1.0 / nb.r);
        let g_dir = [gr[1], gr[2], gr[3]];
        let de_ds = gr[0] + dx[j * din] + vec3::dot(g_dir, unit);
        // ∂e/∂d̂ = s·g_dir, projected onto the plane normal to d̂, over r
        let dhat = vec3::scale(g_dir, nb.s);
        let perp = vec3::sub(dhat, vec3::scale(unit, vec3::dot(dhat, unit)));
        let grad_d = vec3::add(vec3::scale(unit, de_ds * nb.ds_dr), vec3::scale(perp, 1.0 / nb.r));
        out.push(grad_d);
    }
    out
}

/// Descriptor of a center (flattened `M × m_r`, row-major in `M`).
pub fn descriptor(env: &EnvironmentMatrix, model: &DPModel) -> Vec<f64> {
    forward_center(env, model).descriptor
}
