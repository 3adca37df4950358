//! Assembly of the rotation-invariant kinematic tensor `R[k1, k2, k3, τ]`.
//!
//! Coordinates: for a target speed `v` and an incident speed `w` at relative
//! angle `β`, `v = √E (1 + ρ)`, `w = √E (1 − ρ)`, `h = sin(β/2)`, so that
//! `dv dw = dE dρ`, `M(v) M(w) = (2π)^{-3} e^{-E} e^{-Eρ²}` and
//! `u = |v − w| = 2 √E √(ρ² + (1 − ρ²) h²)`. The `(ρ, h)` square is split along
//! its diagonal into two Duffy patches (`h = ρ t` and `ρ = h t`).
//!
//! Only `ρ ≥ 0` (`v ≥ w`) is parameterized; the `v < w` half is covered by
//! evaluating every node a second time with the two speeds exchanged (the
//! "mirror" configuration), which keeps the target on `ẑ`.
//!
//! For a channel `τ = (l1, l2, l3)` the assembled value is
//!
//! ```text
//! R_τ = (8π² / A_τ) ∫ dΦ₅ B M(v) M(w) φ_{k2 l2}(v) φ_{k3 l3}(w)
//!         [φ_{k1 l1}(v') P_gain(v̂', β) − φ_{k1 l1}(v) P_loss(β)]
//! ```
//!
//! with `A_τ = √((2l1+1)(2l2+1)(2l3+1)/4π) (l1 l2 l3; 0 0 0)`, so that
//! `C[α1, α2, α3] = G(q1, q2, q3) R_τ[k1, k2, k3]` where `G` is the plain real
//! Gaunt integral stored in the routing table.

use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::angular::{enumerate_channels, w3j, ChannelTable};
use crate::basis::{radial_eval, RadialBasis, SpectralConfig};
use crate::error::{domain, Error, Result};
use crate::harmonics::{check_unit, lm_half_index, SolidHarmonics};
use crate::quadrature::{
    gauss_laguerre_gen, gauss_legendre, gauss_legendre_unit, trapezoid_periodic, GridSpec, Rule1D,
};

/// Relative speeds below this are treated as coincident velocities.
pub const U_GUARD: f64 = 1e-300;

/// Variable-hard-sphere kernel `B(u, cos χ) = u^γ / (4π)`.
#[inline]
pub fn vhs_kernel(u: f64, _cos_chi: f64, gamma: f64) -> f64 {
    u.powf(gamma) / (4.0 * PI)
}

/// A point of the kinematic core.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicState {
    pub e: f64,
    pub rho: f64,
    pub h: f64,
    /// Target speed (along `ẑ`).
    pub v: f64,
    /// Incident speed (along `(sin β, 0, cos β)`).
    pub w: f64,
    pub u: f64,
    pub cos_beta: f64,
    pub sin_beta: f64,
    /// `+1` for `v ≥ w`, `−1` for the mirrored configuration.
    pub side: f64,
}

impl KinematicState {
    pub fn new(e: f64, rho: f64, h: f64) -> Self {
        Self::with_side(e, rho, h, 1.0)
    }

    fn with_side(e: f64, rho: f64, h: f64, side: f64) -> Self {
        let se = e.sqrt();
        KinematicState {
            e,
            rho,
            h,
            v: se * (1.0 + side * rho),
            w: se * (1.0 - side * rho),
            u: 2.0 * se * (rho * rho + (1.0 - rho * rho) * h * h).sqrt(),
            cos_beta: 1.0 - 2.0 * h * h,
            sin_beta: 2.0 * h * (1.0 - h * h).max(0.0).sqrt(),
            side,
        }
    }

    /// The same point with the two speeds exchanged.
    pub fn mirrored(&self) -> Self {
        Self::with_side(self.e, self.rho, self.h, -self.side)
    }

    pub fn beta(&self) -> f64 {
        self.sin_beta.atan2(self.cos_beta)
    }

    pub fn v_vec(&self) -> [f64; 3] {
        [0.0, 0.0, self.v]
    }

    pub fn w_vec(&self) -> [f64; 3] {
        [self.w * self.sin_beta, 0.0, self.w * self.cos_beta]
    }

    /// Center of mass and the scaled triad `(u/2)û, (u/2)ê1, (u/2)ê2`.
    fn frame(&self) -> Option<Frame> {
        if self.u < U_GUARD {
            return None;
        }
        let se = self.e.sqrt();
        let s = self.side;
        // v − w cos β, written without cancellation near the cone
        let uz = se * (2.0 * s * self.rho + 2.0 * self.h * self.h * (1.0 - s * self.rho));
        let ux = -self.w * self.sin_beta;
        let (hx, hz) = (ux / self.u, uz / self.u);
        let half = 0.5 * self.u;
        // ê1 ∝ ẑ − (ẑ·û)û, which lies in the x–z plane
        let e1 = if hx == 0.0 { [1.0, 0.0, 0.0] } else { [-hz * hx.signum(), 0.0, hx.abs()] };
        // ê2 = û × ê1
        let e2 = [0.0, hz * e1[0] - hx * e1[2], 0.0];
        let c = [0.5 * (self.w * self.sin_beta), 0.0, 0.5 * (self.v + self.w * self.cos_beta)];
        Some(Frame {
            c,
            a: [half * hx, 0.0, half * hz],
            b1: [half * e1[0], 0.0, half * e1[2]],
            b2: [0.0, half * e2[1], 0.0],
        })
    }

    /// Post-collision velocity `v'` for deflection `χ` and azimuth `ε`.
    pub fn post_collision(&self, cos_chi: f64, sin_chi: f64, eps: f64) -> [f64; 3] {
        match self.frame() {
            None => self.v_vec(),
            Some(f) => f.apply(cos_chi, sin_chi, eps.cos(), eps.sin()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Frame {
    c: [f64; 3],
    a: [f64; 3],
    b1: [f64; 3],
    b2: [f64; 3],
}

impl Frame {
    #[inline]
    fn apply(&self, cc: f64, sc: f64, ce: f64, se: f64) -> [f64; 3] {
        let (p, q) = (sc * ce, sc * se);
        [
            self.c[0] + cc * self.a[0] + p * self.b1[0],
            q * self.b2[1],
            self.c[2] + cc * self.a[2] + p * self.b1[2],
        ]
    }
}

/// Post-collision speed and direction of the target particle.
///
/// Inputs are the privileged-frame speeds `v` (along `ẑ`) and `w` (along
/// `(sin β, 0, cos β)`); returns `|v'|` and `v̂'` (or `ẑ` if `v' = 0`).
pub fn post_collision_direction(
    v: f64,
    w: f64,
    beta: f64,
    chi: f64,
    eps: f64,
) -> Result<(f64, [f64; 3])> {
    if v < 0.0 || w < 0.0 {
        return domain("speeds must be non-negative");
    }
    let vp = post_collision_vector(v, w, beta, chi, eps);
    let n = (vp[0] * vp[0] + vp[1] * vp[1] + vp[2] * vp[2]).sqrt();
    if n == 0.0 {
        return Ok((0.0, [0.0, 0.0, 1.0]));
    }
    Ok((n, [vp[0] / n, vp[1] / n, vp[2] / n]))
}

/// Post-collision target velocity for arbitrary privileged-frame speeds.
pub fn post_collision_vector(v: f64, w: f64, beta: f64, chi: f64, eps: f64) -> [f64; 3] {
    let (sb, cb) = beta.sin_cos();
    let vv = [0.0, 0.0, v];
    let ww = [w * sb, 0.0, w * cb];
    let d = [vv[0] - ww[0], 0.0, vv[2] - ww[2]];
    let u = (d[0] * d[0] + d[2] * d[2]).sqrt();
    if u < U_GUARD {
        return vv;
    }
    let (hx, hz) = (d[0] / u, d[2] / u);
    let e1 = if hx == 0.0 { [1.0, 0.0, 0.0] } else { [-hz * hx.signum(), 0.0, hx.abs()] };
    let e2 = [0.0, hz * e1[0] - hx * e1[2], 0.0];
    let (sc, cc) = chi.sin_cos();
    let (se, ce) = eps.sin_cos();
    let sigma = [
        cc * hx + sc * ce * e1[0],
        sc * se * e2[1],
        cc * hz + sc * ce * e1[2],
    ];
    [
        0.5 * (vv[0] + ww[0]) + 0.5 * u * sigma[0],
        0.5 * u * sigma[1],
        0.5 * (vv[2] + ww[2]) + 0.5 * u * sigma[2],
    ]
}

fn check_channel(channel: [usize; 3]) -> Result<()> {
    let [l1, l2, l3] = channel;
    if !crate::angular::channel_allowed(l1, l2, l3) {
        return domain(format!("({l1}, {l2}, {l3}) is not an admissible channel"));
    }
    Ok(())
}

/// Gain filter evaluated with complex harmonics; the imaginary part is the
/// rounding residue of the conjugate-pair cancellation.
pub fn gain_filter_complex(channel: [usize; 3], v_hat_prime: [f64; 3], beta: f64) -> Result<Complex64> {
    check_channel(channel)?;
    check_unit(v_hat_prime)?;
    let [l1, l2, l3] = channel;
    let sh = SolidHarmonics::new(l1.max(l2).max(l3));
    let w_hat = [beta.sin(), 0.0, beta.cos()];
    let y2 = sh.eval_complex(l2, 0, [0.0, 0.0, 1.0]);
    let mmax = l1.min(l3) as i64;
    let mut acc = Complex64::new(0.0, 0.0);
    for m in -mmax..=mmax {
        let c = w3j(l1 as i64, l2 as i64, l3 as i64, m, 0, -m);
        if c == 0.0 {
            continue;
        }
        acc += sh.eval_complex(l1, m, v_hat_prime) * sh.eval_complex(l3, -m, w_hat) * c;
    }
    Ok(acc * y2)
}

/// Gain filter `P_gain(v̂', β)`.
pub fn gain_filter(channel: [usize; 3], v_hat_prime: [f64; 3], beta: f64) -> Result<f64> {
    Ok(gain_filter_complex(channel, v_hat_prime, beta)?.re)
}

/// Loss filter `P_loss(β) = Y_{l1,0}(ẑ) Y_{l2,0}(ẑ) (l1 l2 l3; 0 0 0) Y_{l3,0}(β)`.
pub fn loss_filter(channel: [usize; 3], beta: f64) -> Result<f64> {
    let [l1, l2, l3] = channel;
    let c = w3j(l1 as i64, l2 as i64, l3 as i64, 0, 0, 0);
    if c == 0.0 {
        return Ok(0.0);
    }
    let z = |l: usize| ((2 * l + 1) as f64 / (4.0 * PI)).sqrt();
    let sh = SolidHarmonics::new(l3);
    let y3 = sh.eval_complex(l3, 0, [beta.sin(), 0.0, beta.cos()]).re;
    Ok(z(l1) * z(l2) * c * y3)
}

/// Reference evaluation of the scattering manifold at one kinematic point
/// (target speed `≥` incident speed), straight from the filter definitions.
#[allow(clippy::too_many_arguments)]
pub fn scattering_manifold(
    e: f64,
    rho: f64,
    h: f64,
    channel: [usize; 3],
    k1: usize,
    chi_rule: &Rule1D,
    eps_rule: &Rule1D,
    gamma: f64,
) -> Result<f64> {
    check_channel(channel)?;
    let st = KinematicState::new(e, rho, h);
    if st.u < U_GUARD {
        return Ok(0.0);
    }
    let beta = st.beta();
    let l1 = channel[0];
    let loss = 2.0 * PI * radial_eval(k1, l1, st.v)? * loss_filter(channel, beta)?;
    let mut total = 0.0;
    for (&cc, &wc) in chi_rule.nodes.iter().zip(&chi_rule.weights) {
        let sc = (1.0 - cc * cc).max(0.0).sqrt();
        let mut gain = 0.0;
        for (&eps, &we) in eps_rule.nodes.iter().zip(&eps_rule.weights) {
            let vp = st.post_collision(cc, sc, eps);
            let n = (vp[0] * vp[0] + vp[1] * vp[1] + vp[2] * vp[2]).sqrt();
            let dir = if n > 0.0 { [vp[0] / n, vp[1] / n, vp[2] / n] } else { [0.0, 0.0, 1.0] };
            gain += we * radial_eval(k1, l1, n)? * gain_filter(channel, dir, beta)?;
        }
        total += wc * vhs_kernel(st.u, cc, gamma) * (gain - loss);
    }
    Ok(total)
}

/// Dense kinematic tensor, stored `[τ][k1][k2][k3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RTensor {
    pub n_k: usize,
    pub channels: ChannelTable,
    pub gamma: f64,
    pub grid: GridSpec,
    pub values: Vec<f64>,
    /// Largest magnitude overwritten by the conservation / balance corrections.
    pub max_zeroed: f64,
    pub conservation_applied: bool,
    pub detailed_balance_applied: bool,
}

impl RTensor {
    pub fn zeros(n_k: usize, channels: ChannelTable, gamma: f64, grid: GridSpec) -> Self {
        let len = channels.len() * n_k * n_k * n_k;
        RTensor {
            n_k,
            channels,
            gamma,
            grid,
            values: vec![0.0; len],
            max_zeroed: 0.0,
            conservation_applied: false,
            detailed_balance_applied: false,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    #[inline]
    pub fn offset(&self, k1: usize, k2: usize, k3: usize, tau: usize) -> usize {
        ((tau * self.n_k + k1) * self.n_k + k2) * self.n_k + k3
    }

    #[inline]
    pub fn get(&self, k1: usize, k2: usize, k3: usize, tau: usize) -> f64 {
        self.values[self.offset(k1, k2, k3, tau)]
    }

    /// Contiguous `n_k³` block of channel `τ`.
    #[inline]
    pub fn block(&self, tau: usize) -> &[f64] {
        let n3 = self.n_k * self.n_k * self.n_k;
        &self.values[tau * n3..(tau + 1) * n3]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Average with the slot-exchanged tensor `R[k1, k3, k2, (l1, l3, l2)]`.
    pub fn symmetrize(&mut self) {
        let n = self.n_k;
        let old = self.values.clone();
        for (tau, &[l1, l2, l3]) in self.channels.triplets.iter().enumerate() {
            let swapped = self.channels.index(l1, l3, l2).expect("channel set is 2-3 symmetric");
            for k1 in 0..n {
                for k2 in 0..n {
                    for k3 in 0..n {
                        let a = old[self.offset(k1, k2, k3, tau)];
                        let b = old[self.offset(k1, k3, k2, swapped)];
                        let o = self.offset(k1, k2, k3, tau);
                        self.values[o] = 0.5 * (a + b);
                    }
                }
            }
        }
    }

    fn zero_row(&mut self, k1: usize, tau: usize) {
        let n = self.n_k;
        if k1 >= n {
            return;
        }
        let start = self.offset(k1, 0, 0, tau);
        for v in &mut self.values[start..start + n * n] {
            self.max_zeroed = self.max_zeroed.max(v.abs());
            *v = 0.0;
        }
    }

    /// Zero the test-function rows of the collision invariants.
    pub fn apply_conservation(mut self) -> Self {
        for tau in 0..self.n_channels() {
            let l1 = self.channels.triplets[tau][0];
            if l1 <= 1 {
                self.zero_row(0, tau);
            }
            if l1 == 0 {
                self.zero_row(1, tau);
            }
        }
        self.conservation_applied = true;
        self
    }

    /// Zero `R[k1, 0, 0, τ]` for the channel with `l2 = l3 = 0`.
    pub fn apply_detailed_balance(mut self) -> Self {
        if let Some(tau) = self.channels.index(0, 0, 0) {
            for k1 in 0..self.n_k {
                let o = self.offset(k1, 0, 0, tau);
                self.max_zeroed = self.max_zeroed.max(self.values[o].abs());
                self.values[o] = 0.0;
            }
        }
        self.detailed_balance_applied = true;
        self
    }
}

/// The one-dimensional rules of a kinematic grid.
#[derive(Clone, Debug)]
pub struct GridRules {
    pub e: Rule1D,
    pub rho1: Rule1D,
    pub t1: Rule1D,
    pub h2: Rule1D,
    pub t2: Rule1D,
    /// Gauss–Legendre in `cos χ`.
    pub chi: Rule1D,
    pub eps: Rule1D,
}

impl GridRules {
    pub fn new(grid: &GridSpec, gamma: f64) -> Result<Self> {
        Ok(GridRules {
            e: gauss_laguerre_gen(grid.n_e, 0.5 * gamma)?,
            rho1: gauss_legendre_unit(grid.n_rho1)?,
            t1: gauss_legendre_unit(grid.n_t1)?,
            h2: gauss_legendre_unit(grid.n_h2)?,
            t2: gauss_legendre_unit(grid.n_t2)?,
            chi: gauss_legendre(grid.n_chi)?,
            eps: trapezoid_periodic(grid.n_eps)?,
        })
    }
}

/// Knobs of the assembly beyond the configuration and grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssemblyOptions {
    /// Multiplies the collision kernel (linearity checks).
    pub kernel_scale: f64,
    /// Average slots 2 and 3 after assembly.
    pub symmetrize: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { kernel_scale: 1.0, symmetrize: true }
    }
}

/// Per-channel constants of the angular reduction.
#[derive(Clone, Debug)]
struct ChannelPlan {
    l: [usize; 3],
    /// `(8π²/A_τ) (2π)^{-3}`
    scale: f64,
    /// `Y_{l2,0}(ẑ)`
    y2z: f64,
    /// `(m', (−1)^{m'} (l1 l2 l3; m' 0 −m'))` for `m' ≥ 0`
    gain: Vec<(usize, f64)>,
    /// `Y_{l1,0}(ẑ) Y_{l2,0}(ẑ) (l1 l2 l3; 0 0 0)`
    loss: f64,
}

fn channel_plans(channels: &ChannelTable) -> Vec<ChannelPlan> {
    let zonal = |l: usize| ((2 * l + 1) as f64 / (4.0 * PI)).sqrt();
    channels
        .triplets
        .iter()
        .map(|&[l1, l2, l3]| {
            let (a, b, c) = (l1 as i64, l2 as i64, l3 as i64);
            let c000 = w3j(a, b, c, 0, 0, 0);
            let amp = (((2 * l1 + 1) * (2 * l2 + 1) * (2 * l3 + 1)) as f64 / (4.0 * PI)).sqrt()
                * c000;
            let mut gain = vec![];
            for m in 0..=l1.min(l3) {
                let s = if m % 2 == 0 { 1.0 } else { -1.0 };
                let v = s * w3j(a, b, c, m as i64, 0, -(m as i64));
                if v != 0.0 {
                    gain.push((m, v));
                }
            }
            ChannelPlan {
                l: [l1, l2, l3],
                scale: 8.0 * PI * PI / amp * (2.0 * PI).powi(-3),
                y2z: zonal(l2),
                gain,
                loss: zonal(l1) * zonal(l2) * c000,
            }
        })
        .collect()
}

/// Shared read-only data of one assembly.
struct Assembler<'a> {
    n_k: usize,
    n_l: usize,
    n_lh: usize,
    gamma: f64,
    scale: f64,
    plans: Vec<ChannelPlan>,
    rules: &'a GridRules,
    radial: RadialBasis,
    sh: SolidHarmonics,
    chi_sin: Vec<f64>,
    eps_cs: Vec<(f64, f64)>,
}

/// Scratch buffers of one worker.
struct Scratch {
    lag: Vec<f64>,
    leg: Vec<f64>,
    sol: Vec<f64>,
    s: Vec<f64>,
    yw: Vec<f64>,
    phi_v: Vec<f64>,
    phi_w: Vec<f64>,
    kern: Vec<f64>,
    omega: Vec<f64>,
}

impl<'a> Assembler<'a> {
    fn scratch(&self) -> Scratch {
        let nkl = self.n_k * self.n_l;
        Scratch {
            lag: vec![0.0; nkl],
            leg: vec![0.0; self.n_l * self.n_l],
            sol: vec![0.0; self.n_lh],
            s: vec![0.0; self.n_lh * self.n_k],
            yw: vec![0.0; self.n_lh],
            phi_v: vec![0.0; nkl],
            phi_w: vec![0.0; nkl],
            kern: vec![0.0; self.rules.chi.len()],
            omega: vec![0.0; self.plans.len() * self.n_k],
        }
    }

    /// Reduced scattering manifold `Ω[τ][k1] / E^{γ/2}` at one point, written
    /// into `sc.omega`. Also leaves `φ(v)` in `sc.phi_v`.
    fn omega(&self, st: &KinematicState, sc: &mut Scratch) {
        let n_k = self.n_k;
        self.radial.eval(st.v, &mut sc.phi_v);
        let frame = match st.frame() {
            Some(f) => f,
            None => {
                sc.omega.iter_mut().for_each(|x| *x = 0.0);
                return;
            }
        };
        let u_red = st.u / st.e.sqrt();
        let mut bsum = 0.0;
        for (i, (&cc, &wc)) in self.rules.chi.nodes.iter().zip(&self.rules.chi.weights).enumerate() {
            sc.kern[i] = wc * self.scale * vhs_kernel(u_red, cc, self.gamma);
            bsum += sc.kern[i];
        }
        sc.s.iter_mut().for_each(|x| *x = 0.0);
        for (i, &cc) in self.rules.chi.nodes.iter().enumerate() {
            let sch = self.chi_sin[i];
            for (j, &(ce, se)) in self.eps_cs.iter().enumerate() {
                let wt = sc.kern[i] * self.rules.eps.weights[j];
                let vp = frame.apply(cc, sch, ce, se);
                let vp2 = vp[0] * vp[0] + vp[1] * vp[1] + vp[2] * vp[2];
                self.radial.eval_reduced(vp2, &mut sc.lag);
                self.sh.eval_cos(vp, &mut sc.leg, &mut sc.sol);
                for l1 in 0..self.n_l {
                    let lag = &sc.lag[l1 * n_k..(l1 + 1) * n_k];
                    for m in 0..=l1 {
                        let lh = lm_half_index(l1, m);
                        let f = wt * sc.sol[lh];
                        let row = &mut sc.s[lh * n_k..(lh + 1) * n_k];
                        for k in 0..n_k {
                            row[k] += f * lag[k];
                        }
                    }
                }
            }
        }
        let mut leg = std::mem::take(&mut sc.leg);
        self.sh.eval_cos([st.sin_beta, 0.0, st.cos_beta], &mut leg, &mut sc.yw);
        sc.leg = leg;
        let two_pi_b = 2.0 * PI * bsum;
        for (tau, p) in self.plans.iter().enumerate() {
            let [l1, _, l3] = p.l;
            let loss = two_pi_b * p.loss * sc.yw[lm_half_index(l3, 0)];
            let out = &mut sc.omega[tau * n_k..(tau + 1) * n_k];
            for k1 in 0..n_k {
                let mut g = 0.0;
                for &(m, c) in &p.gain {
                    g += c * sc.yw[lm_half_index(l3, m)] * sc.s[lm_half_index(l1, m) * n_k + k1];
                }
                out[k1] = p.y2z * g - loss * sc.phi_v[l1 * n_k + k1];
            }
        }
    }

    /// `r[τ][k1][k2][k3] += w · scale_τ · t[τ][k1] · φ_{k2 l2}(v) φ_{k3 l3}(w)`.
    fn outer(&self, w: f64, t: &[f64], phi_v: &[f64], phi_w: &[f64], r: &mut [f64]) {
        let n = self.n_k;
        let n3 = n * n * n;
        for (tau, p) in self.plans.iter().enumerate() {
            let [_, l2, l3] = p.l;
            let pv = &phi_v[l2 * n..(l2 + 1) * n];
            let pw = &phi_w[l3 * n..(l3 + 1) * n];
            let blk = &mut r[tau * n3..(tau + 1) * n3];
            for k1 in 0..n {
                let a = w * p.scale * t[tau * n + k1];
                if a == 0.0 {
                    continue;
                }
                for k2 in 0..n {
                    let b = a * pv[k2];
                    let row = &mut blk[(k1 * n + k2) * n..(k1 * n + k2 + 1) * n];
                    for k3 in 0..n {
                        row[k3] += b * pw[k3];
                    }
                }
            }
        }
    }

    /// All contributions of one energy node.
    fn energy_block(&self, e: f64, we: f64) -> Vec<f64> {
        let n_t = self.plans.len();
        let mut r = vec![0.0; n_t * self.n_k.pow(3)];
        let mut sc = self.scratch();
        let mut acc = vec![0.0; n_t * self.n_k];
        let rules = self.rules;
        let envelope = |rho: f64| {
            let q = 1.0 - rho * rho;
            e * e * q * q * (-e * rho * rho).exp()
        };
        // patch 1: h = ρ t, the radial states are fixed along t
        for (&rho, &wr) in rules.rho1.nodes.iter().zip(&rules.rho1.weights) {
            for side in [1.0, -1.0] {
                acc.iter_mut().for_each(|x| *x = 0.0);
                let mut base = KinematicState::new(e, rho, 0.0);
                for (&t, &wt) in rules.t1.nodes.iter().zip(&rules.t1.weights) {
                    let st = KinematicState::with_side(e, rho, rho * t, side);
                    self.omega(&st, &mut sc);
                    let jac = wt * 4.0 * rho * rho * t;
                    for (a, o) in acc.iter_mut().zip(&sc.omega) {
                        *a += jac * o;
                    }
                    base = st;
                }
                self.radial.eval(base.v, &mut sc.phi_v);
                self.radial.eval(base.w, &mut sc.phi_w);
                self.outer(we * wr * envelope(rho), &acc, &sc.phi_v, &sc.phi_w, &mut r);
            }
        }
        // patch 2: ρ = h t, the radial states change with t
        for (&h, &wh) in rules.h2.nodes.iter().zip(&rules.h2.weights) {
            for (&t, &wt) in rules.t2.nodes.iter().zip(&rules.t2.weights) {
                let rho = h * t;
                let w = we * wh * wt * 4.0 * h * h * envelope(rho);
                for side in [1.0, -1.0] {
                    let st = KinematicState::with_side(e, rho, h, side);
                    self.omega(&st, &mut sc);
                    self.radial.eval(st.w, &mut sc.phi_w);
                    let omega = std::mem::take(&mut sc.omega);
                    self.outer(w, &omega, &sc.phi_v, &sc.phi_w, &mut r);
                    sc.omega = omega;
                }
            }
        }
        r
    }
}

/// Assemble `R` with explicit options (no conservation or balance corrections).
pub fn assemble_with(
    cfg: &SpectralConfig,
    grid: &GridSpec,
    opts: AssemblyOptions,
) -> Result<RTensor> {
    grid.check_against(cfg.k_max, cfg.l_max)?;
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(Error::Config(format!("unsupported VHS exponent {}", cfg.gamma)));
    }
    let channels = enumerate_channels(cfg.l_max);
    let rules = GridRules::new(grid, cfg.gamma)?;
    let asm = Assembler {
        n_k: cfg.n_k(),
        n_l: cfg.n_l(),
        n_lh: cfg.n_l() * (cfg.n_l() + 1) / 2,
        gamma: cfg.gamma,
        scale: opts.kernel_scale,
        plans: channel_plans(&channels),
        rules: &rules,
        radial: RadialBasis::new(cfg.k_max, cfg.l_max),
        sh: SolidHarmonics::new(cfg.l_max),
        chi_sin: rules.chi.nodes.iter().map(|c| (1.0 - c * c).max(0.0).sqrt()).collect(),
        eps_cs: rules.eps.nodes.iter().map(|e| (e.cos(), e.sin())).collect(),
    };
    let blocks: Vec<Vec<f64>> = rules
        .e
        .nodes
        .par_iter()
        .zip(rules.e.weights.par_iter())
        .map(|(&e, &we)| asm.energy_block(e, we))
        .collect();
    let mut r = RTensor::zeros(cfg.n_k(), channels, cfg.gamma, *grid);
    for b in blocks {
        for (x, y) in r.values.iter_mut().zip(&b) {
            *x += y;
        }
    }
    if opts.symmetrize {
        r.symmetrize();
    }
    Ok(r)
}

/// Assemble and symmetrize `R` (corrections are applied separately).
pub fn assemble_r_tensor(cfg: &SpectralConfig, grid: &GridSpec) -> Result<RTensor> {
    assemble_with(cfg, grid, AssemblyOptions::default())
}

/// Assemble, symmetrize, then apply conservation and detailed balance.
pub fn assemble_corrected(cfg: &SpectralConfig, grid: &GridSpec) -> Result<RTensor> {
    Ok(assemble_r_tensor(cfg, grid)?.apply_conservation().apply_detailed_balance())
}
