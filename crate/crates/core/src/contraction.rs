//! Evaluation of the quadratic collision term `Q(c, c)` from the factorized
//! operator `C = G ⊙ R`, and its linearization.
//!
//! Four interchangeable strategies are provided. They differ only in the
//! order of the sums:
//!
//! * dense: the fully assembled `C[α1, α2, α3]`,
//! * naive: one `n_k³` radial contraction per Gaunt row,
//! * radial-first: `Ψ[k1] = Σ R c c` per unique `(q2, q3, τ)`, then routed,
//! * angular-first: `Φ = Σ g c cᵀ` per `(τ, q1)` slice, then one `n_k³` pass.

use nalgebra::{Complex, DMatrix};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::angular::{build_gaunt_coo, GauntCoo};
use crate::basis::{CoefficientField, SpectralConfig};
use crate::error::{Error, Result};
use crate::kinematic::{assemble_corrected, RTensor};
use crate::quadrature::GridSpec;

/// Default ceiling on `n_dof` for the dense baseline.
pub const DENSE_DOF_LIMIT: usize = 1024;

/// Contraction strategy selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Dense,
    Naive,
    RadialFirst,
    AngularFirst,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::Dense, Strategy::Naive, Strategy::RadialFirst, Strategy::AngularFirst];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Dense => "dense",
            Strategy::Naive => "naive",
            Strategy::RadialFirst => "radial-first",
            Strategy::AngularFirst => "angular-first",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "dense" => Ok(Strategy::Dense),
            "naive" => Ok(Strategy::Naive),
            "radial-first" | "radial" => Ok(Strategy::RadialFirst),
            "angular-first" | "angular" => Ok(Strategy::AngularFirst),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Work counters. `flops` counts multiply-adds in the dominant loops;
/// `bytes` estimates operator storage touched.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub flops: u64,
    pub bytes: u64,
}

/// `R` together with the Gaunt routing table.
#[derive(Clone, Debug)]
pub struct FactorizedOperator {
    cfg: SpectralConfig,
    r: RTensor,
    g: GauntCoo,
    /// Unique `(q2, q3, τ)` combinations.
    psi_keys: Vec<(u32, u32, u32)>,
    /// Ψ slot of each COO row.
    row_psi: Vec<u32>,
}

impl FactorizedOperator {
    pub fn new(cfg: SpectralConfig, r: RTensor, g: GauntCoo) -> Result<Self> {
        if r.n_k != cfg.n_k() || g.l_max != cfg.l_max {
            return Err(Error::Contract("operator parts disagree with the configuration".into()));
        }
        if r.channels != g.channels {
            return Err(Error::Contract("R and G use different channel tables".into()));
        }
        g.validate()?;
        let mut lookup: HashMap<(u32, u32, u32), u32> = HashMap::new();
        let mut psi_keys = vec![];
        let mut row_psi = Vec::with_capacity(g.n_rows());
        for s in &g.slices {
            for z in s.start as usize..s.end as usize {
                let key = (g.q2[z], g.q3[z], s.tau);
                let id = *lookup.entry(key).or_insert_with(|| {
                    psi_keys.push(key);
                    (psi_keys.len() - 1) as u32
                });
                row_psi.push(id);
            }
        }
        Ok(FactorizedOperator { cfg, r, g, psi_keys, row_psi })
    }

    /// Assemble the corrected `R` and the Gaunt table for a configuration.
    pub fn build(cfg: &SpectralConfig, grid: &GridSpec) -> Result<Self> {
        let r = assemble_corrected(cfg, grid)?;
        Self::new(*cfg, r, build_gaunt_coo(cfg.l_max))
    }

    pub fn cfg(&self) -> &SpectralConfig {
        &self.cfg
    }

    pub fn r(&self) -> &RTensor {
        &self.r
    }

    pub fn g(&self) -> &GauntCoo {
        &self.g
    }

    pub fn into_parts(self) -> (SpectralConfig, RTensor, GauntCoo) {
        (self.cfg, self.r, self.g)
    }

    pub fn n_psi(&self) -> usize {
        self.psi_keys.len()
    }

    /// Logical element count `n_k³·N_T + 5·N_G` (four COO fields plus the
    /// slice-derived channel per row).
    pub fn logical_elements(&self) -> usize {
        self.cfg.n_k().pow(3) * self.r.n_channels() + 5 * self.g.n_rows()
    }

    /// Bytes of the stored factorization: `8·n_k³·N_T + 20·N_G`.
    pub fn stored_bytes(&self) -> usize {
        8 * self.cfg.n_k().pow(3) * self.r.n_channels() + self.g.row_bytes()
    }

    /// Bytes of the dense equivalent, `8·n_dof³`.
    pub fn dense_bytes(&self) -> usize {
        8 * self.cfg.n_dof().pow(3)
    }

    fn check_field(&self, c: &CoefficientField) -> Result<()> {
        if c.n_k != self.cfg.n_k() || c.n_q != self.cfg.n_q() {
            return Err(Error::Contract(format!(
                "field shape ({}, {}) does not match operator ({}, {})",
                c.n_k,
                c.n_q,
                self.cfg.n_k(),
                self.cfg.n_q()
            )));
        }
        Ok(())
    }

    /// `n_k × n_k` slab `R[k1, ·, ·, τ]`.
    #[inline]
    fn r_slab(&self, tau: usize, k1: usize) -> &[f64] {
        let n = self.cfg.n_k();
        &self.r.block(tau)[k1 * n * n..(k1 + 1) * n * n]
    }
}

/// Dense `C[α1, α2, α3]`, row-major.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub n_dof: usize,
    pub c: Vec<f64>,
}

/// Assemble the dense tensor, refusing when `n_dof` exceeds `max_dof`.
pub fn assemble_dense_with_limit(op: &FactorizedOperator, max_dof: usize) -> Result<DenseOperator> {
    let n_dof = op.cfg.n_dof();
    if n_dof > max_dof {
        return Err(Error::Capacity(format!(
            "dense tensor with n_dof = {n_dof} exceeds the limit {max_dof} ({:.2} GB)",
            8.0 * (n_dof as f64).powi(3) / 1e9
        )));
    }
    let len = n_dof
        .checked_pow(3)
        .ok_or_else(|| Error::Capacity("dense element count overflows".into()))?;
    let mut c = Vec::new();
    c.try_reserve_exact(len)
        .map_err(|_| Error::Capacity(format!("cannot allocate {len} dense elements")))?;
    c.resize(len, 0.0);
    let (n_k, n_q) = (op.cfg.n_k(), op.cfg.n_q());
    for row in op.g.rows() {
        for k1 in 0..n_k {
            let a1 = k1 * n_q + row.q1;
            let slab = op.r_slab(row.tau, k1);
            for k2 in 0..n_k {
                let a2 = k2 * n_q + row.q2;
                let base = (a1 * n_dof + a2) * n_dof;
                for k3 in 0..n_k {
                    c[base + k3 * n_q + row.q3] += row.g * slab[k2 * n_k + k3];
                }
            }
        }
    }
    Ok(DenseOperator { n_dof, c })
}

/// Assemble the dense tensor under the default size guard.
pub fn assemble_dense(op: &FactorizedOperator) -> Result<DenseOperator> {
    assemble_dense_with_limit(op, DENSE_DOF_LIMIT)
}

/// `Q_{α1} = Σ C[α1, α2, α3] c_{α2} c_{α3}`.
pub fn q_dense_counted(dense: &DenseOperator, c: &CoefficientField, ctr: &mut Counters) -> Result<CoefficientField> {
    let n = dense.n_dof;
    if c.values.len() != n {
        return Err(Error::Contract(format!("field has {} entries, operator {n}", c.values.len())));
    }
    let x = &c.values;
    let values: Vec<f64> = dense
        .c
        .par_chunks(n * n)
        .map(|plane| {
            let mut acc = 0.0;
            for (a2, row) in plane.chunks_exact(n).enumerate() {
                if x[a2] == 0.0 {
                    continue;
                }
                let mut s = 0.0;
                for (cv, xv) in row.iter().zip(x) {
                    s += cv * xv;
                }
                acc += x[a2] * s;
            }
            acc
        })
        .collect();
    ctr.flops += (n * n * n + n * n) as u64;
    ctr.bytes += 8 * (n * n * n) as u64;
    Ok(CoefficientField { n_k: c.n_k, n_q: c.n_q, values })
}

pub fn q_dense(dense: &DenseOperator, c: &CoefficientField) -> Result<CoefficientField> {
    q_dense_counted(dense, c, &mut Counters::default())
}

/// `Σ_{k2,k3} R[k1,k2,k3] a[k2] b[k3]` for one `n_k × n_k` slab.
#[inline]
fn bilinear(slab: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for k2 in 0..n {
        let row = &slab[k2 * n..(k2 + 1) * n];
        let mut s = 0.0;
        for k3 in 0..n {
            s += row[k3] * b[k3];
        }
        acc += a[k2] * s;
    }
    acc
}

/// Columns `c[·, q]` gathered contiguously, `cols[q*n_k + k]`.
fn columns(c: &CoefficientField) -> Vec<f64> {
    let mut cols = vec![0.0; c.values.len()];
    for k in 0..c.n_k {
        for q in 0..c.n_q {
            cols[q * c.n_k + k] = c.get(k, q);
        }
    }
    cols
}

fn from_columns(n_k: usize, n_q: usize, cols: &[f64]) -> CoefficientField {
    let mut values = vec![0.0; n_k * n_q];
    for q in 0..n_q {
        for k in 0..n_k {
            values[k * n_q + q] = cols[q * n_k + k];
        }
    }
    CoefficientField { n_k, n_q, values }
}

/// Generic bilinear form `Q(a, b)` with the naive row-streaming order.
pub fn q_naive_bilinear(
    op: &FactorizedOperator,
    a: &CoefficientField,
    b: &CoefficientField,
    ctr: &mut Counters,
) -> Result<CoefficientField> {
    op.check_field(a)?;
    op.check_field(b)?;
    let n = op.cfg.n_k();
    let (ca, cb) = (columns(a), columns(b));
    let mut out = vec![0.0; ca.len()];
    for row in op.g.rows() {
        let x = &ca[row.q2 * n..(row.q2 + 1) * n];
        let y = &cb[row.q3 * n..(row.q3 + 1) * n];
        for k1 in 0..n {
            out[row.q1 * n + k1] += row.g * bilinear(op.r_slab(row.tau, k1), x, y);
        }
    }
    let rows = op.g.n_rows() as u64;
    ctr.flops += rows * (n * n * n + n * n) as u64;
    ctr.bytes += rows * (20 + 8 * (n * n * n) as u64);
    Ok(from_columns(n, op.cfg.n_q(), &out))
}

pub fn q_naive_counted(op: &FactorizedOperator, c: &CoefficientField, ctr: &mut Counters) -> Result<CoefficientField> {
    q_naive_bilinear(op, c, c, ctr)
}

pub fn q_naive(op: &FactorizedOperator, c: &CoefficientField) -> Result<CoefficientField> {
    q_naive_counted(op, c, &mut Counters::default())
}

/// Radial-first bilinear form.
pub fn q_radial_first_bilinear(
    op: &FactorizedOperator,
    a: &CoefficientField,
    b: &CoefficientField,
    ctr: &mut Counters,
) -> Result<CoefficientField> {
    op.check_field(a)?;
    op.check_field(b)?;
    let n = op.cfg.n_k();
    let (ca, cb) = (columns(a), columns(b));
    let mut psi = vec![0.0; op.psi_keys.len() * n];
    for (p, &(q2, q3, tau)) in op.psi_keys.iter().enumerate() {
        let x = &ca[q2 as usize * n..(q2 as usize + 1) * n];
        let y = &cb[q3 as usize * n..(q3 as usize + 1) * n];
        for k1 in 0..n {
            psi[p * n + k1] = bilinear(op.r_slab(tau as usize, k1), x, y);
        }
    }
    let mut out = vec![0.0; ca.len()];
    for (z, &p) in op.row_psi.iter().enumerate() {
        let (q1, g) = (op.g.q1[z] as usize, op.g.weight[z]);
        let src = &psi[p as usize * n..(p as usize + 1) * n];
        for k1 in 0..n {
            out[q1 * n + k1] += g * src[k1];
        }
    }
    let np = op.psi_keys.len() as u64;
    ctr.flops += np * (n * n * n + n * n) as u64 + (op.g.n_rows() * n) as u64;
    ctr.bytes += np * 8 * (n * n * n) as u64 + op.g.row_bytes() as u64;
    Ok(from_columns(n, op.cfg.n_q(), &out))
}

pub fn q_radial_first_counted(op: &FactorizedOperator, c: &CoefficientField, ctr: &mut Counters) -> Result<CoefficientField> {
    q_radial_first_bilinear(op, c, c, ctr)
}

pub fn q_radial_first(op: &FactorizedOperator, c: &CoefficientField) -> Result<CoefficientField> {
    q_radial_first_counted(op, c, &mut Counters::default())
}

/// Slices must tile the rows in strictly increasing `(τ, q1)` order.
fn check_slices(g: &GauntCoo) -> Result<()> {
    let mut next = 0u32;
    let mut prev: Option<(u32, u32)> = None;
    for s in &g.slices {
        if s.start != next || s.end <= s.start || prev.is_some_and(|p| p >= (s.tau, s.q1)) {
            return Err(Error::Contract("COO rows are not grouped by sorted (τ, q1)".into()));
        }
        prev = Some((s.tau, s.q1));
        next = s.end;
    }
    if next as usize != g.n_rows() {
        return Err(Error::Contract("slice index does not cover the COO rows".into()));
    }
    Ok(())
}

/// One `(τ, q1)` slice: build `Φ`, contract against `R_τ`, return `Q[·, q1]`.
#[inline]
fn angular_slice(
    op: &FactorizedOperator,
    si: usize,
    ca: &[f64],
    cb: &[f64],
    phi: &mut [f64],
    out: &mut [f64],
) {
    let n = op.cfg.n_k();
    let s = &op.g.slices[si];
    phi.iter_mut().for_each(|x| *x = 0.0);
    for z in s.start as usize..s.end as usize {
        let g = op.g.weight[z];
        let x = &ca[op.g.q2[z] as usize * n..(op.g.q2[z] as usize + 1) * n];
        let y = &cb[op.g.q3[z] as usize * n..(op.g.q3[z] as usize + 1) * n];
        for k2 in 0..n {
            let gx = g * x[k2];
            let row = &mut phi[k2 * n..(k2 + 1) * n];
            for k3 in 0..n {
                row[k3] += gx * y[k3];
            }
        }
    }
    let blk = op.r.block(s.tau as usize);
    for k1 in 0..n {
        let slab = &blk[k1 * n * n..(k1 + 1) * n * n];
        let mut acc = 0.0;
        for (r, p) in slab.iter().zip(phi.iter()) {
            acc += r * p;
        }
        out[k1] = acc;
    }
}

fn angular_counters(op: &FactorizedOperator, ctr: &mut Counters) {
    let n = op.cfg.n_k() as u64;
    let (ng, ns) = (op.g.n_rows() as u64, op.g.n_slices() as u64);
    ctr.flops += ng * n * n + ns * n * n * n;
    ctr.bytes += op.g.row_bytes() as u64 + ns * 8 * n * n * n;
}

/// Angular-first bilinear form (sequential).
pub fn q_angular_first_bilinear(
    op: &FactorizedOperator,
    a: &CoefficientField,
    b: &CoefficientField,
    ctr: &mut Counters,
) -> Result<CoefficientField> {
    op.check_field(a)?;
    op.check_field(b)?;
    check_slices(&op.g)?;
    let n = op.cfg.n_k();
    let (ca, cb) = (columns(a), columns(b));
    let mut out = vec![0.0; ca.len()];
    let mut phi = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for si in 0..op.g.n_slices() {
        angular_slice(op, si, &ca, &cb, &mut phi, &mut col);
        let q1 = op.g.slices[si].q1 as usize;
        for k1 in 0..n {
            out[q1 * n + k1] += col[k1];
        }
    }
    angular_counters(op, ctr);
    Ok(from_columns(n, op.cfg.n_q(), &out))
}

pub fn q_angular_first_counted(op: &FactorizedOperator, c: &CoefficientField, ctr: &mut Counters) -> Result<CoefficientField> {
    q_angular_first_bilinear(op, c, c, ctr)
}

pub fn q_angular_first(op: &FactorizedOperator, c: &CoefficientField) -> Result<CoefficientField> {
    q_angular_first_counted(op, c, &mut Counters::default())
}

/// Angular-first with slices processed in parallel; per-slice results are
/// reduced in slice order, so the output matches the sequential version.
pub fn q_angular_first_par(op: &FactorizedOperator, c: &CoefficientField) -> Result<CoefficientField> {
    op.check_field(c)?;
    check_slices(&op.g)?;
    let n = op.cfg.n_k();
    let cc = columns(c);
    let parts: Vec<Vec<f64>> = (0..op.g.n_slices())
        .into_par_iter()
        .map_init(
            || vec![0.0; n * n],
            |phi, si| {
                let mut col = vec![0.0; n];
                angular_slice(op, si, &cc, &cc, phi, &mut col);
                col
            },
        )
        .collect();
    let mut out = vec![0.0; cc.len()];
    for (si, col) in parts.iter().enumerate() {
        let q1 = op.g.slices[si].q1 as usize;
        for k1 in 0..n {
            out[q1 * n + k1] += col[k1];
        }
    }
    Ok(from_columns(n, op.cfg.n_q(), &out))
}

/// Evaluate `Q(c, c)` with a factorized strategy (dense needs a
/// [`DenseOperator`] and goes through [`q_dense`]).
pub fn q_factorized(
    op: &FactorizedOperator,
    strategy: Strategy,
    c: &CoefficientField,
    ctr: &mut Counters,
) -> Result<CoefficientField> {
    match strategy {
        Strategy::Naive => q_naive_counted(op, c, ctr),
        Strategy::RadialFirst => q_radial_first_counted(op, c, ctr),
        Strategy::AngularFirst => q_angular_first_counted(op, c, ctr),
        Strategy::Dense => Err(Error::Config("the dense strategy needs an assembled tensor".into())),
    }
}

/// Jacobian `∂Q(c, c)/∂c` at an arbitrary point, from the factorized operator.
pub fn linearize(op: &FactorizedOperator, c: &CoefficientField) -> Result<DMatrix<f64>> {
    op.check_field(c)?;
    let (n, n_q) = (op.cfg.n_k(), op.cfg.n_q());
    let nd = op.cfg.n_dof();
    let mut j = DMatrix::<f64>::zeros(nd, nd);
    for row in op.g.rows() {
        let x2: Vec<f64> = (0..n).map(|k| c.get(k, row.q2)).collect();
        let x3: Vec<f64> = (0..n).map(|k| c.get(k, row.q3)).collect();
        let skip2 = x2.iter().all(|v| *v == 0.0);
        let skip3 = x3.iter().all(|v| *v == 0.0);
        if skip2 && skip3 {
            continue;
        }
        for k1 in 0..n {
            let a1 = k1 * n_q + row.q1;
            let slab = op.r_slab(row.tau, k1);
            for k2 in 0..n {
                for k3 in 0..n {
                    let v = row.g * slab[k2 * n + k3];
                    if v == 0.0 {
                        continue;
                    }
                    if !skip3 {
                        j[(a1, k2 * n_q + row.q2)] += v * x3[k3];
                    }
                    if !skip2 {
                        j[(a1, k3 * n_q + row.q3)] += v * x2[k2];
                    }
                }
            }
        }
    }
    Ok(j)
}

/// Iteration cap of the Schur decomposition per block.
const SCHUR_MAX_ITER: usize = 100_000;

/// Index sets of the decoupled diagonal blocks of `m` (connected components of
/// its nonzero pattern).
pub fn decoupled_blocks(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

/// Eigenvalues of a real matrix, sorted by descending real part.
///
/// The matrix is first split into decoupled blocks, each handed to a real
/// Schur decomposition.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(m.nrows());
    for idx in decoupled_blocks(m) {
        let b = DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])]);
        let schur = nalgebra::linalg::Schur::try_new(b, f64::EPSILON, SCHUR_MAX_ITER)
            .ok_or_else(|| Error::Singular(format!("Schur iteration did not converge on a block of size {}", idx.len())))?;
        out.extend(schur.complex_eigenvalues().iter().map(|z: &Complex<f64>| Complex64::new(z.re, z.im)));
    }
    out.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(out)
}

/// Frobenius norm.
pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Submatrix over the modes `(k < k_trunc+1, l, m)` of a linearized operator.
pub fn radial_block(cfg: &SpectralConfig, j: &DMatrix<f64>, l: usize, m: i64, n_k: usize) -> Result<DMatrix<f64>> {
    let q = cfg.q_index(l, m)?;
    if n_k == 0 || n_k > cfg.n_k() {
        return Err(Error::Domain(format!("block size {n_k} outside 1..={}", cfg.n_k())));
    }
    Ok(DMatrix::from_fn(n_k, n_k, |a, b| j[(a * cfg.n_q() + q, b * cfg.n_q() + q)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::moments;
    use crate::quadrature::grid_sizes;

    fn small_op(k: usize, l: usize, gamma: f64) -> FactorizedOperator {
        let cfg = SpectralConfig::new(k, l, gamma).unwrap();
        FactorizedOperator::build(&cfg, &grid_sizes(k, l, 4, 4)).unwrap()
    }

    fn rel_diff(a: &CoefficientField, b: &CoefficientField) -> f64 {
        let m = a.max_abs().max(b.max_abs());
        a.values.iter().zip(&b.values).fold(0.0f64, |d, (x, y)| d.max((x - y).abs())) / m
    }

    #[test]
    fn strategies_agree() {
        let op = small_op(2, 3, 1.0);
        let dense = assemble_dense(&op).unwrap();
        for seed in 0..5 {
            let c = CoefficientField::random(op.cfg(), seed);
            let qd = q_dense(&dense, &c).unwrap();
            let qn = q_naive(&op, &c).unwrap();
            let qr = q_radial_first(&op, &c).unwrap();
            let qa = q_angular_first(&op, &c).unwrap();
            let qp = q_angular_first_par(&op, &c).unwrap();
            assert!(rel_diff(&qd, &qn) < 1e-12);
            assert!(rel_diff(&qd, &qr) < 1e-12);
            assert!(rel_diff(&qd, &qa) < 1e-12);
            assert_eq!(qa.values, qp.values);
        }
    }

    #[test]
    fn equilibrium_and_zero_fields() {
        let op = small_op(2, 2, 0.0);
        let dense = assemble_dense(&op).unwrap();
        for c in [CoefficientField::equilibrium(op.cfg()), CoefficientField::zeros(op.cfg())] {
            assert!(q_dense(&dense, &c).unwrap().values.iter().all(|v| *v == 0.0));
            assert!(q_naive(&op, &c).unwrap().values.iter().all(|v| *v == 0.0));
            assert!(q_radial_first(&op, &c).unwrap().values.iter().all(|v| *v == 0.0));
            assert!(q_angular_first(&op, &c).unwrap().values.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn zero_r_gives_zero_dense() {
        let op = small_op(1, 2, 1.0);
        let (cfg, mut r, g) = op.into_parts();
        r.values.iter_mut().for_each(|v| *v = 0.0);
        let op = FactorizedOperator::new(cfg, r, g).unwrap();
        let d = assemble_dense(&op).unwrap();
        assert!(d.c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conservation_is_exact() {
        for gamma in [0.0, 1.0] {
            let op = small_op(2, 2, gamma);
            for seed in 0..5 {
                let c = CoefficientField::random(op.cfg(), seed);
                for q in [q_naive(&op, &c), q_radial_first(&op, &c), q_angular_first(&op, &c)] {
                    let m = moments(&q.unwrap());
                    assert_eq!(m.mass, 0.0);
                    assert_eq!(m.energy, 0.0);
                    assert_eq!(m.momentum, [0.0; 3]);
                }
            }
        }
    }

    #[test]
    fn bilinearity() {
        let op = small_op(1, 2, 1.0);
        let a = CoefficientField::random(op.cfg(), 3);
        let b = CoefficientField::random(op.cfg(), 4);
        let a2 = a.axpy(1.5, &a);
        let mut ctr = Counters::default();
        for f in [q_naive_bilinear, q_radial_first_bilinear, q_angular_first_bilinear] {
            let x = f(&op, &a, &b, &mut ctr).unwrap();
            let y = f(&op, &a2, &b, &mut ctr).unwrap();
            let z = f(&op, &b, &a2, &mut ctr).unwrap();
            let w = f(&op, &b, &a, &mut ctr).unwrap();
            for i in 0..x.values.len() {
                assert!((2.5 * x.values[i] - y.values[i]).abs() < 1e-13 * (1.0 + y.values[i].abs()));
                assert!((2.5 * w.values[i] - z.values[i]).abs() < 1e-13 * (1.0 + z.values[i].abs()));
            }
        }
    }

    #[test]
    fn angular_first_flop_count() {
        let op = small_op(2, 2, 0.0);
        let c = CoefficientField::random(op.cfg(), 1);
        let mut ctr = Counters::default();
        q_angular_first_counted(&op, &c, &mut ctr).unwrap();
        let (ng, ns) = (op.g().n_rows() as u64, op.g().n_slices() as u64);
        assert_eq!(ctr.flops, ng * 9 + ns * 27);
        assert!(op.n_psi() <= op.g().n_rows());
        assert!(op.g().n_slices() <= op.g().n_rows());
    }

    #[test]
    fn unsorted_slices_are_rejected() {
        let op = small_op(1, 2, 0.0);
        let mut bad = op.clone();
        bad.g.slices.swap(1, 2);
        let c = CoefficientField::random(op.cfg(), 0);
        assert!(matches!(q_angular_first(&bad, &c), Err(Error::Contract(_))));
        let (cfg, r, mut g) = op.into_parts();
        g.slices.swap(1, 2);
        assert!(matches!(FactorizedOperator::new(cfg, r, g), Err(Error::Contract(_))));
    }

    #[test]
    fn dense_guard() {
        let op = small_op(1, 1, 0.0);
        assert!(matches!(assemble_dense_with_limit(&op, 4), Err(Error::Capacity(_))));
        assert_eq!(assemble_dense(&op).unwrap().c.len(), 8 * 8 * 8);
    }

    #[test]
    fn linearization_matches_finite_difference() {
        let op = small_op(1, 2, 1.0);
        let c = CoefficientField::random(op.cfg(), 7);
        let j = linearize(&op, &c).unwrap();
        let d = CoefficientField::random(op.cfg(), 8);
        let h = 1e-6;
        let qp = q_naive(&op, &c.axpy(h, &d)).unwrap();
        let qm = q_naive(&op, &c.axpy(-h, &d)).unwrap();
        for a in 0..c.n_dof() {
            let fd = (qp.values[a] - qm.values[a]) / (2.0 * h);
            let an: f64 = (0..c.n_dof()).map(|b| j[(a, b)] * d.values[b]).sum();
            assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "{a}: {fd} {an}");
        }
    }

    #[test]
    fn equilibrium_jacobian_is_block_diagonal() {
        let op = small_op(2, 3, 0.0);
        let cfg = *op.cfg();
        let j = linearize(&op, &CoefficientField::equilibrium(&cfg)).unwrap();
        for a in 0..cfg.n_dof() {
            for b in 0..cfg.n_dof() {
                if a % cfg.n_q() != b % cfg.n_q() {
                    assert_eq!(j[(a, b)], 0.0);
                }
            }
        }
        let ev = eigenvalues(&j).unwrap();
        let norm = frobenius(&j);
        assert!(ev.iter().all(|z| z.re <= 1e-12 * norm && z.im.abs() < 1e-12 * norm));
        assert_eq!(ev.iter().filter(|z| z.norm() < 1e-12 * norm).count(), 5);
    }

    #[test]
    fn eigenvalues_of_known_matrices() {
        // rotation block (complex pair) plus a decoupled diagonal entry
        let m = DMatrix::from_row_slice(3, 3, &[0.0, -2.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, -3.0]);
        assert_eq!(decoupled_blocks(&m), vec![vec![0, 1], vec![2]]);
        let ev = eigenvalues(&m).unwrap();
        assert!((ev[0].re.abs() + (ev[0].im.abs() - 2.0).abs()) < 1e-14);
        assert!((ev[2].re + 3.0).abs() < 1e-14);
        let z = eigenvalues(&DMatrix::zeros(4, 4)).unwrap();
        assert!(z.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(Strategy::parse(s.name()).unwrap(), s);
        }
        assert!(Strategy::parse("fast").is_err());
    }
}
