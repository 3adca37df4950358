//! Spectral basis `ψ_{klm}(v) = φ_{kl}(|v|) Y^R_{lm}(v̂)`.
//!
//! `φ_{kl}(v) = N_{kl} v^l L_k^{(l+1/2)}(v²/2)` is orthonormal against
//! `M_ref(v) v² dv` with `M_ref = (2π)^{-3/2} e^{-v²/2}`. Indices are 0-based
//! internally: `q(l,m) = l² + l + m` and `α = k·n_q + q`; the 1-based labels
//! used in printed tables are available through [`SpectralConfig::state_label`].

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{domain, Result};
use crate::harmonics::{check_unit, lm_index, SolidHarmonics};
use crate::quadrature::{gauss_laguerre_gen, gauss_legendre, trapezoid_periodic};

/// Truncation limits and collision-kernel exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub k_max: usize,
    pub l_max: usize,
    pub gamma: f64,
}

impl SpectralConfig {
    pub fn new(k_max: usize, l_max: usize, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return domain(format!("VHS exponent must lie in [0, 1], got {gamma}"));
        }
        Ok(SpectralConfig { k_max, l_max, gamma })
    }

    pub fn n_k(&self) -> usize {
        self.k_max + 1
    }

    pub fn n_l(&self) -> usize {
        self.l_max + 1
    }

    pub fn n_q(&self) -> usize {
        (self.l_max + 1) * (self.l_max + 1)
    }

    pub fn n_dof(&self) -> usize {
        self.n_k() * self.n_q()
    }

    /// 0-based angular index of `(l, m)`.
    pub fn q_index(&self, l: usize, m: i64) -> Result<usize> {
        if l > self.l_max || m.unsigned_abs() as usize > l {
            return domain(format!("(l, m) = ({l}, {m}) outside L = {}", self.l_max));
        }
        Ok(lm_index(l, m))
    }

    /// Inverse of [`Self::q_index`].
    pub fn decode_q(&self, q: usize) -> Result<(usize, i64)> {
        if q >= self.n_q() {
            return domain(format!("angular index {q} out of range"));
        }
        Ok(decode_q(q))
    }

    /// 0-based flattened index `α = k·n_q + q(l, m)`.
    pub fn state_index(&self, k: usize, l: usize, m: i64) -> Result<usize> {
        if k > self.k_max {
            return domain(format!("radial index {k} exceeds K = {}", self.k_max));
        }
        Ok(k * self.n_q() + self.q_index(l, m)?)
    }

    /// 1-based label of `(k, l, m)` as used in printed tables.
    pub fn state_label(&self, k: usize, l: usize, m: i64) -> Result<usize> {
        Ok(self.state_index(k, l, m)? + 1)
    }

    /// Inverse of [`Self::state_index`].
    pub fn decode_state(&self, alpha: usize) -> Result<(usize, usize, i64)> {
        if alpha >= self.n_dof() {
            return domain(format!("state index {alpha} out of range"));
        }
        let (l, m) = decode_q(alpha % self.n_q());
        Ok((alpha / self.n_q(), l, m))
    }
}

/// `q ↦ (l, m)` without range checking.
#[inline]
pub fn decode_q(q: usize) -> (usize, i64) {
    let l = (q as f64).sqrt() as usize;
    let l = if (l + 1) * (l + 1) <= q { l + 1 } else if l * l > q { l - 1 } else { l };
    (l, q as i64 - (l * l + l) as i64)
}

/// Degree `l` of angular index `q`.
#[inline]
pub fn degree_of_q(q: usize) -> usize {
    decode_q(q).0
}

/// Normalization `N_{kl}`.
pub fn radial_norm(k: usize, l: usize) -> f64 {
    let ln = 1.5 * (2.0 * PI).ln() + libm::lgamma(k as f64 + 1.0)
        - (l as f64 + 0.5) * 2f64.ln()
        - libm::lgamma(k as f64 + l as f64 + 1.5);
    (0.5 * ln).exp()
}

/// Generalized Laguerre values `L_0..=L_{n-1}` of parameter `a` at `x`.
#[inline]
pub fn laguerre_all(a: f64, x: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    out[0] = 1.0;
    if n == 1 {
        return;
    }
    out[1] = 1.0 + a - x;
    for k in 1..n - 1 {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0 + a - x) * out[k] - (kf + a) * out[k - 1]) / (kf + 1.0);
    }
}

/// Radial basis function `φ_{kl}(v)`.
pub fn radial_eval(k: usize, l: usize, v: f64) -> Result<f64> {
    if v < 0.0 || !v.is_finite() {
        return domain(format!("speed must be finite and non-negative, got {v}"));
    }
    let mut lag = vec![0.0; k + 1];
    laguerre_all(l as f64 + 0.5, 0.5 * v * v, &mut lag);
    Ok(radial_norm(k, l) * v.powi(l as i32) * lag[k])
}

/// Precomputed evaluator of all `φ_{kl}` (and of the Laguerre factors alone).
#[derive(Clone, Debug)]
pub struct RadialBasis {
    n_k: usize,
    n_l: usize,
    norms: Vec<f64>,
}

impl RadialBasis {
    pub fn new(k_max: usize, l_max: usize) -> Self {
        let (n_k, n_l) = (k_max + 1, l_max + 1);
        let mut norms = vec![0.0; n_k * n_l];
        for l in 0..n_l {
            for k in 0..n_k {
                norms[l * n_k + k] = radial_norm(k, l);
            }
        }
        RadialBasis { n_k, n_l, norms }
    }

    pub fn n_k(&self) -> usize {
        self.n_k
    }

    /// `out[l*n_k + k] = N_{kl} L_k^{(l+1/2)}(v²/2)`, i.e. `φ_{kl}(v) / v^l`.
    #[inline]
    pub fn eval_reduced(&self, v2: f64, out: &mut [f64]) {
        let x = 0.5 * v2;
        for l in 0..self.n_l {
            let row = &mut out[l * self.n_k..(l + 1) * self.n_k];
            laguerre_all(l as f64 + 0.5, x, row);
            for (k, r) in row.iter_mut().enumerate() {
                *r *= self.norms[l * self.n_k + k];
            }
        }
    }

    /// `out[l*n_k + k] = φ_{kl}(v)`.
    #[inline]
    pub fn eval(&self, v: f64, out: &mut [f64]) {
        self.eval_reduced(v * v, out);
        let mut p = 1.0;
        for l in 0..self.n_l {
            for r in &mut out[l * self.n_k..(l + 1) * self.n_k] {
                *r *= p;
            }
            p *= v;
        }
    }
}

/// Real spherical harmonic `Y^R_{lm}(n̂)`.
pub fn real_sph_harm(l: usize, m: i64, dir: [f64; 3]) -> Result<f64> {
    if m.unsigned_abs() as usize > l {
        return domain(format!("|m| = {} exceeds l = {l}", m.abs()));
    }
    check_unit(dir)?;
    let mut out = vec![0.0; (l + 1) * (l + 1)];
    SolidHarmonics::new(l).eval_full(dir, &mut out);
    Ok(out[lm_index(l, m)])
}

/// Maxwellian reference density `M_ref(|v|)`.
pub fn maxwellian(v2: f64) -> f64 {
    (2.0 * PI).powf(-1.5) * (-0.5 * v2).exp()
}

/// Spectral coefficients `c_{k,q}` stored row-major as `values[k*n_q + q]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    pub n_k: usize,
    pub n_q: usize,
    pub values: Vec<f64>,
}

impl CoefficientField {
    pub fn zeros(cfg: &SpectralConfig) -> Self {
        CoefficientField { n_k: cfg.n_k(), n_q: cfg.n_q(), values: vec![0.0; cfg.n_dof()] }
    }

    /// The reference Maxwellian: `c_{0,q(0,0)} = 1`.
    pub fn equilibrium(cfg: &SpectralConfig) -> Self {
        let mut c = Self::zeros(cfg);
        c.values[0] = 1.0;
        c
    }

    /// Seeded uniform(−1, 1) entries with the equilibrium mode set to 1.
    pub fn random(cfg: &SpectralConfig, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut c = Self::zeros(cfg);
        for v in c.values.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        c.values[0] = 1.0;
        c
    }

    pub fn n_dof(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn get(&self, k: usize, q: usize) -> f64 {
        self.values[k * self.n_q + q]
    }

    #[inline]
    pub fn set(&mut self, k: usize, q: usize, v: f64) {
        self.values[k * self.n_q + q] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self + a·other`.
    pub fn axpy(&self, a: f64, other: &CoefficientField) -> CoefficientField {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect();
        CoefficientField { n_k: self.n_k, n_q: self.n_q, values }
    }

    /// Evaluate `f/M_ref = Σ c ψ` at a velocity.
    pub fn eval_ratio(&self, v: [f64; 3]) -> f64 {
        let l_max = degree_of_q(self.n_q - 1);
        let rb = RadialBasis::new(self.n_k - 1, l_max);
        let mut phi = vec![0.0; self.n_k * (l_max + 1)];
        let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        rb.eval(speed, &mut phi);
        let mut y = vec![0.0; self.n_q];
        if speed > 0.0 {
            let d = [v[0] / speed, v[1] / speed, v[2] / speed];
            SolidHarmonics::new(l_max).eval_full(d, &mut y);
        } else {
            y[0] = 1.0 / (4.0 * PI).sqrt();
        }
        let mut s = 0.0;
        for k in 0..self.n_k {
            for q in 0..self.n_q {
                s += self.get(k, q) * phi[degree_of_q(q) * self.n_k + k] * y[q];
            }
        }
        s
    }
}

/// Product rule for `∫ g(v) M_ref(v) d³v`: generalized Gauss–Laguerre in
/// `x = v²/2` (weight `x^{1/2} e^{-x}`) × Gauss–Legendre in `cos θ` ×
/// trapezoid in `φ`, exact for polynomial `g` of total degree `≤ order`.
#[derive(Clone, Debug)]
pub struct VelocityRule {
    /// Points `v` and weights `w` with `Σ w g(v) ≈ ∫ g M_ref d³v`.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub speeds: Vec<f64>,
    /// Radial node index of each point.
    pub radial_of: Vec<usize>,
    /// Angular node index of each point.
    pub angular_of: Vec<usize>,
    pub directions: Vec<[f64; 3]>,
}

impl VelocityRule {
    pub fn new(order: usize) -> Result<Self> {
        let n_r = order / 4 + 1;
        let n_th = order / 2 + 1;
        let n_ph = order + 1;
        let lag = gauss_laguerre_gen(n_r, 0.5)?;
        let gl = gauss_legendre(n_th)?;
        let tr = trapezoid_periodic(n_ph)?;
        // M_ref v² dv dΩ = (2π)^{-3/2} √2 x^{1/2} e^{-x} dx dΩ
        let pref = (2.0 * PI).powf(-1.5) * std::f64::consts::SQRT_2;
        let mut directions = Vec::with_capacity(n_th * n_ph);
        let mut dir_w = Vec::with_capacity(n_th * n_ph);
        for (&z, &wz) in gl.nodes.iter().zip(&gl.weights) {
            let s = (1.0 - z * z).max(0.0).sqrt();
            for (&p, &wp) in tr.nodes.iter().zip(&tr.weights) {
                directions.push([s * p.cos(), s * p.sin(), z]);
                dir_w.push(wz * wp);
            }
        }
        let mut rule = VelocityRule {
            points: vec![],
            weights: vec![],
            speeds: vec![],
            radial_of: vec![],
            angular_of: vec![],
            directions,
        };
        for (ir, (&x, &wx)) in lag.nodes.iter().zip(&lag.weights).enumerate() {
            let v = (2.0 * x).sqrt();
            rule.speeds.push(v);
            for (ia, (d, &wd)) in rule.directions.iter().zip(&dir_w).enumerate() {
                rule.points.push([v * d[0], v * d[1], v * d[2]]);
                rule.weights.push(pref * wx * wd);
                rule.radial_of.push(ir);
                rule.angular_of.push(ia);
            }
        }
        Ok(rule)
    }

    /// Default order for a configuration: products of two basis functions
    /// plus a degree-4 margin.
    pub fn default_order(cfg: &SpectralConfig) -> usize {
        2 * (2 * cfg.k_max + cfg.l_max) + 4
    }
}

/// Project `f` onto the basis: `c_α = ∫ f ψ_α d³v`.
///
/// `f` is passed as the ratio `f / M_ref` so that Maxwellian-like inputs are
/// smooth against the quadrature weight.
pub fn project_ratio(
    ratio: impl Fn([f64; 3]) -> f64,
    cfg: &SpectralConfig,
    order: usize,
) -> Result<CoefficientField> {
    let rule = VelocityRule::new(order.max(VelocityRule::default_order(cfg)))?;
    let (n_k, n_q) = (cfg.n_k(), cfg.n_q());
    let rb = RadialBasis::new(cfg.k_max, cfg.l_max);
    let sh = SolidHarmonics::new(cfg.l_max);
    let mut phi = vec![0.0; n_k * cfg.n_l() * rule.speeds.len()];
    for (i, &v) in rule.speeds.iter().enumerate() {
        rb.eval(v, &mut phi[i * n_k * cfg.n_l()..(i + 1) * n_k * cfg.n_l()]);
    }
    let mut ys = vec![0.0; n_q * rule.directions.len()];
    for (i, d) in rule.directions.iter().enumerate() {
        sh.eval_full(*d, &mut ys[i * n_q..(i + 1) * n_q]);
    }
    let degrees: Vec<usize> = (0..n_q).map(degree_of_q).collect();
    let mut c = CoefficientField::zeros(cfg);
    for p in 0..rule.points.len() {
        let val = rule.weights[p] * ratio(rule.points[p]);
        if val == 0.0 {
            continue;
        }
        let ph = &phi[rule.radial_of[p] * n_k * cfg.n_l()..];
        let y = &ys[rule.angular_of[p] * n_q..(rule.angular_of[p] + 1) * n_q];
        for k in 0..n_k {
            let row = &mut c.values[k * n_q..(k + 1) * n_q];
            for q in 0..n_q {
                row[q] += val * ph[degrees[q] * n_k + k] * y[q];
            }
        }
    }
    Ok(c)
}

/// Project a velocity density `f` (not divided by `M_ref`).
pub fn project(
    f: impl Fn([f64; 3]) -> f64,
    cfg: &SpectralConfig,
    order: usize,
) -> Result<CoefficientField> {
    project_ratio(
        |v| {
            let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            f(v) / maxwellian(v2)
        },
        cfg,
        order,
    )
}

/// Project an isotropic density given as `f(|v|) / M_ref(|v|)`; only the
/// `l = 0` coefficients are computed, all others are exactly zero.
pub fn project_isotropic_ratio(
    ratio: impl Fn(f64) -> f64,
    cfg: &SpectralConfig,
    order: usize,
) -> Result<CoefficientField> {
    let n_r = order.max(VelocityRule::default_order(cfg)) / 4 + 1;
    let lag = gauss_laguerre_gen(n_r, 0.5)?;
    // ∫ g M d³v = 4π Y_00 ∫ ... with ψ_{k00} = φ_{k0} Y_00
    let pref = (2.0 * PI).powf(-1.5) * std::f64::consts::SQRT_2 * (4.0 * PI).sqrt();
    let rb = RadialBasis::new(cfg.k_max, 0);
    let mut phi = vec![0.0; cfg.n_k()];
    let mut c = CoefficientField::zeros(cfg);
    for (&x, &wx) in lag.nodes.iter().zip(&lag.weights) {
        let v = (2.0 * x).sqrt();
        rb.eval(v, &mut phi);
        let val = pref * wx * ratio(v);
        for k in 0..cfg.n_k() {
            c.values[k * cfg.n_q()] += val * phi[k];
        }
    }
    Ok(c)
}

/// Mass, momentum and kinetic energy of `f = M_ref Σ c ψ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
}

impl Moments {
    /// Largest absolute component difference.
    pub fn max_diff(&self, other: &Moments) -> f64 {
        let mut d = (self.mass - other.mass).abs().max((self.energy - other.energy).abs());
        for i in 0..3 {
            d = d.max((self.momentum[i] - other.momentum[i]).abs());
        }
        d
    }
}

/// Weights of the collision invariants on the low-order modes (`k ≤ 1`, `l ≤ 1`).
#[derive(Clone, Debug)]
struct MomentWeights {
    /// `(k, q, [mass, px, py, pz, energy])`
    entries: Vec<(usize, usize, [f64; 5])>,
}

fn moment_weights() -> &'static MomentWeights {
    static W: std::sync::OnceLock<MomentWeights> = std::sync::OnceLock::new();
    W.get_or_init(|| {
        let cfg = SpectralConfig { k_max: 1, l_max: 1, gamma: 0.0 };
        let rule = VelocityRule::new(12).expect("static rule");
        let rb = RadialBasis::new(1, 1);
        let sh = SolidHarmonics::new(1);
        let mut acc = vec![[0.0f64; 5]; cfg.n_dof()];
        let mut phi = vec![0.0; 4];
        let mut y = vec![0.0; 4];
        for (p, v) in rule.points.iter().enumerate() {
            let s = rule.speeds[rule.radial_of[p]];
            rb.eval(s, &mut phi);
            sh.eval_full(rule.directions[rule.angular_of[p]], &mut y);
            let inv = [1.0, v[0], v[1], v[2], 0.5 * s * s];
            for k in 0..2 {
                for q in 0..4 {
                    let psi = phi[degree_of_q(q) * 2 + k] * y[q];
                    for i in 0..5 {
                        acc[k * 4 + q][i] += rule.weights[p] * inv[i] * psi;
                    }
                }
            }
        }
        let mut entries = vec![];
        for (a, w) in acc.iter_mut().enumerate() {
            // snap quadrature roundoff so that only invariant modes carry weight
            for x in w.iter_mut() {
                if x.abs() < 1e-12 {
                    *x = 0.0;
                }
            }
            if w.iter().any(|x| *x != 0.0) {
                entries.push((a / 4, a % 4, *w));
            }
        }
        MomentWeights { entries }
    })
}

/// Macroscopic moments of a coefficient field.
pub fn moments(c: &CoefficientField) -> Moments {
    let mut m = [0.0f64; 5];
    for &(k, q, w) in &moment_weights().entries {
        if k < c.n_k && q < c.n_q {
            let x = c.get(k, q);
            for i in 0..5 {
                m[i] += w[i] * x;
            }
        }
    }
    Moments { mass: m[0], momentum: [m[1], m[2], m[3]], energy: m[4] }
}
