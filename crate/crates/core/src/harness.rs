//! Time integration and the validation experiments: BKW relaxation, the
//! Maxwell-molecule spectrum, Galilean shift, viscosity inversion and shear
//! stress relaxation, plus the quadrature self-convergence study.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::basis::{
    moments, project_isotropic_ratio, project_ratio, CoefficientField, Moments, SpectralConfig,
};
use crate::contraction::{eigenvalues, frobenius, linearize, q_angular_first, radial_block, FactorizedOperator};
use crate::error::{domain, Error, Result};
use crate::kinematic::assemble_r_tensor;
use crate::quadrature::grid_sizes;

/// Initial BKW temperature parameter `K(0)`.
pub const BKW_K0: f64 = 0.65;

/// Step as a fraction of [`default_dt`]; the trajectory target needs the finer step.
pub const BKW_DT_FRACTION: f64 = 0.2;

/// Default BKW integration horizon in units of `1/|λ_{2,0}|`. The isotropic
/// amplitudes reach the rounding floor (~1e-32) near 70.
pub const BKW_HORIZON: f64 = 20.0;

/// Projection order used by the experiments.
pub const PROJECTION_ORDER: usize = 80;

/// Recorded trajectory of an integration.
#[derive(Clone, Debug, Serialize)]
pub struct EvolutionTrace {
    pub times: Vec<f64>,
    pub snapshots: Vec<CoefficientField>,
    pub moments: Vec<Moments>,
}

impl EvolutionTrace {
    pub fn last(&self) -> &CoefficientField {
        self.snapshots.last().expect("trace has the initial state")
    }

    /// Largest deviation of any invariant from its initial value.
    pub fn max_moment_drift(&self) -> f64 {
        let m0 = self.moments[0];
        self.moments.iter().fold(0.0, |a, m| a.max(m.max_diff(&m0)))
    }

    /// Time series of one coefficient.
    pub fn amplitude(&self, k: usize, q: usize) -> Vec<f64> {
        self.snapshots.iter().map(|c| c.get(k, q)).collect()
    }
}

fn rk4_step(op: &FactorizedOperator, c: &CoefficientField, dt: f64) -> Result<CoefficientField> {
    let k1 = q_angular_first(op, c)?;
    let k2 = q_angular_first(op, &c.axpy(0.5 * dt, &k1))?;
    let k3 = q_angular_first(op, &c.axpy(0.5 * dt, &k2))?;
    let k4 = q_angular_first(op, &c.axpy(dt, &k3))?;
    let mut out = c.clone();
    for i in 0..out.values.len() {
        out.values[i] += dt / 6.0 * (k1.values[i] + 2.0 * k2.values[i] + 2.0 * k3.values[i] + k4.values[i]);
    }
    Ok(out)
}

/// Classical RK4 on `dc/dt = Q(c, c)`, recording every `record_every` steps
/// (and always the final state).
pub fn rk4_integrate_every(
    op: &FactorizedOperator,
    c0: &CoefficientField,
    dt: f64,
    n_steps: usize,
    record_every: usize,
) -> Result<EvolutionTrace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return domain(format!("time step must be positive, got {dt}"));
    }
    let every = record_every.max(1);
    let scale = c0.max_abs().max(1.0);
    let mut trace = EvolutionTrace { times: vec![0.0], snapshots: vec![c0.clone()], moments: vec![moments(c0)] };
    let mut c = c0.clone();
    for step in 1..=n_steps {
        c = rk4_step(op, &c, dt)?;
        let t = step as f64 * dt;
        let m = c.max_abs();
        if !m.is_finite() || m > 1e6 * scale {
            return Err(Error::Divergence {
                step,
                time: t,
                reason: format!("coefficient magnitude {m:e}"),
            });
        }
        if step % every == 0 || step == n_steps {
            trace.times.push(t);
            trace.moments.push(moments(&c));
            trace.snapshots.push(c.clone());
        }
    }
    Ok(trace)
}

pub fn rk4_integrate(op: &FactorizedOperator, c0: &CoefficientField, dt: f64, n_steps: usize) -> Result<EvolutionTrace> {
    rk4_integrate_every(op, c0, dt, n_steps, 1)
}

/// Linearized operator at the reference Maxwellian.
pub fn equilibrium_jacobian(op: &FactorizedOperator) -> Result<DMatrix<f64>> {
    linearize(op, &CoefficientField::equilibrium(op.cfg()))
}

/// Default step `0.5 / |λ_min|` from the linearized spectrum.
pub fn default_dt(op: &FactorizedOperator) -> Result<f64> {
    let ev = eigenvalues(&equilibrium_jacobian(op)?)?;
    let lmin = ev.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if lmin == 0.0 {
        return Err(Error::Singular("linearized operator is zero".into()));
    }
    Ok(0.5 / lmin)
}

/// Least-squares slope of `ln|y|` against `t`.
pub fn log_slope(t: &[f64], y: &[f64]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, v)| **v != 0.0).map(|(a, b)| (*a, b.abs().ln())).collect();
    if pts.len() < 3 {
        return Err(Error::Fit("fewer than three nonzero samples".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("degenerate time samples".into()));
    }
    Ok(sxy / sxx)
}

/// Decay rate over the trailing `fraction` of a series, requiring monotone decay.
pub fn tail_decay_rate(t: &[f64], y: &[f64], fraction: f64) -> Result<f64> {
    let start = ((1.0 - fraction) * t.len() as f64) as usize;
    let (tt, yy) = (&t[start..], &y[start..]);
    if yy.windows(2).any(|w| w[1].abs() > w[0].abs()) {
        return Err(Error::Fit("amplitude is not monotonically decaying".into()));
    }
    Ok(-log_slope(tt, yy)?)
}

/// BKW temperature parameter `K(t) = 1 − (1 − K0) e^{−rate·t}`.
pub fn bkw_temperature(t: f64, rate: f64, k0: f64) -> f64 {
    1.0 - (1.0 - k0) * (-rate * t).exp()
}

/// Projection of the BKW solution with `K(0) = k0`.
pub fn bkw_coefficients_with(cfg: &SpectralConfig, t: f64, rate: f64, k0: f64) -> Result<CoefficientField> {
    if t < 0.0 || rate <= 0.0 {
        return domain(format!("need t ≥ 0 and rate > 0, got t = {t}, rate = {rate}"));
    }
    let k = bkw_temperature(t, rate, k0);
    if k <= 0.6 || k > 1.0 {
        return domain(format!("BKW parameter K = {k} outside (3/5, 1]"));
    }
    let a = 1.0 / k - 1.0;
    project_isotropic_ratio(
        |v| {
            let v2 = v * v;
            k.powf(-1.5) * (-0.5 * a * v2).exp() * ((5.0 * k - 3.0) / (2.0 * k) + (1.0 - k) * v2 / (2.0 * k * k))
        },
        cfg,
        PROJECTION_ORDER,
    )
}

/// Projection of the BKW solution with the default `K(0)`.
pub fn bkw_coefficients(cfg: &SpectralConfig, t: f64, rate: f64) -> Result<CoefficientField> {
    bkw_coefficients_with(cfg, t, rate, BKW_K0)
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeRate {
    pub k: usize,
    pub fitted: f64,
    /// Nearest eigenvalue magnitude of the isotropic block.
    pub eigen: f64,
    pub rel_err: f64,
    /// `k · rate_fit`, the analytic BKW rate of mode `k`.
    pub bkw_rate: f64,
    pub bkw_rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BkwReport {
    pub rate_fit: f64,
    /// `|λ_{2,0}| / 2`, the cross-check of the fitted rate.
    pub rate_from_spectrum: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub modes: Vec<ModeRate>,
    pub max_deviation: f64,
    pub moment_drift: f64,
    pub times: Vec<f64>,
    /// `amplitudes[k][i]`: isotropic coefficient `k` at `times[i]`.
    pub amplitudes: Vec<Vec<f64>>,
}

/// Isotropic eigenvalue magnitudes (nonzero, ascending).
fn isotropic_rates(op: &FactorizedOperator, j: &DMatrix<f64>) -> Result<Vec<f64>> {
    let b = radial_block(op.cfg(), j, 0, 0, op.cfg().n_k())?;
    let norm = frobenius(&b);
    let mut r: Vec<f64> = eigenvalues(&b)?.iter().map(|z| -z.re).filter(|x| *x > 1e-10 * norm).collect();
    r.sort_by(f64::total_cmp);
    Ok(r)
}

/// Relax the BKW initial state and compare with the analytic solution.
///
/// Integration runs to `|λ_{2,0}|·t = horizon` with step `dt` (default
/// `0.5/|λ_min|`); decay rates are fitted over the trailing quarter.
pub fn run_bkw_benchmark(op: &FactorizedOperator, k0: f64, horizon: f64, dt: Option<f64>) -> Result<BkwReport> {
    let cfg = *op.cfg();
    if cfg.gamma != 0.0 {
        return Err(Error::Config("the BKW solution needs Maxwell molecules (γ = 0)".into()));
    }
    if cfg.k_max < 2 {
        return Err(Error::Config("the BKW benchmark needs k_max ≥ 2".into()));
    }
    let j = equilibrium_jacobian(op)?;
    let rates = isotropic_rates(op, &j)?;
    let lam2 = rates[0];
    let dt = match dt {
        Some(d) => d,
        None => BKW_DT_FRACTION * default_dt(op)?,
    };
    let n_steps = (horizon / lam2 / dt).ceil() as usize;
    let every = (n_steps / 2000).max(1);
    // the rate only sets the time axis of the analytic state; K(0) does not depend on it
    let c0 = bkw_coefficients_with(&cfg, 0.0, 1.0, k0)?;
    let trace = rk4_integrate_every(op, &c0, dt, n_steps, every)?;
    let q0 = 0;
    let amplitudes: Vec<Vec<f64>> = (0..cfg.n_k()).map(|k| trace.amplitude(k, q0)).collect();
    let fitted2 = tail_decay_rate(&trace.times, &amplitudes[2], 0.25)?;
    let rate_fit = 0.5 * fitted2;
    let mut modes = vec![];
    for (k, amp) in amplitudes.iter().enumerate().skip(2) {
        let fitted = tail_decay_rate(&trace.times, amp, 0.25)?;
        let eigen = rates.iter().copied().min_by(|a, b| (a - fitted).abs().total_cmp(&(b - fitted).abs())).unwrap();
        let bkw_rate = k as f64 * rate_fit;
        modes.push(ModeRate {
            k,
            fitted,
            eigen,
            rel_err: (fitted - eigen).abs() / eigen,
            bkw_rate,
            bkw_rel_err: (fitted - bkw_rate).abs() / bkw_rate,
        });
    }
    let mut max_deviation = 0.0f64;
    for (t, c) in trace.times.iter().zip(&trace.snapshots) {
        let exact = bkw_coefficients_with(&cfg, *t, rate_fit, k0)?;
        for (a, b) in c.values.iter().zip(&exact.values) {
            max_deviation = max_deviation.max((a - b).abs());
        }
    }
    Ok(BkwReport {
        rate_fit,
        rate_from_spectrum: 0.5 * lam2,
        dt,
        n_steps,
        modes,
        max_deviation,
        moment_drift: trace.max_moment_drift(),
        times: trace.times,
        amplitudes,
    })
}

/// Expected spectrum groups `(ratio, multiplicity)` at `K = 4, L = 6`.
/// Truncation residuals `‖Q(c_u, c_u)‖₂` of the shifted Maxwellian at `(K, L) = (4, 6)`,
/// keyed by the bulk speed along `x`.
pub const GALILEAN_TABLE: [(f64, f64); 4] = [(0.0, 4.77e-15), (0.1, 5.14e-11), (0.3, 3.39e-7), (0.6, 8.88e-5)];

/// Hard-sphere viscosity factors `f_μ(K)` for `K = 0..=4`, and the infinite-order limit.
pub const VISCOSITY_TABLE: [f64; 5] = [1.0, 1.014851, 1.015879, 1.016006, 1.016028];
pub const VISCOSITY_LIMIT: f64 = 1.016034;

pub const WCU_TABLE: [(f64, usize); 5] = [(0.0, 5), (-1.0, 4), (-1.5, 9), (-1.75, 5), (-1.8, 4)];

#[derive(Clone, Debug, Serialize)]
pub struct EigenGroup {
    pub ratio: f64,
    pub count: usize,
    /// 1-based mode range.
    pub first: usize,
    pub last: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct WcuReport {
    pub lambda6: f64,
    pub ratios: Vec<f64>,
    pub groups: Vec<EigenGroup>,
    pub n_invariants: usize,
    pub max_imag: f64,
    pub max_real: f64,
    pub norm: f64,
}

/// Group sorted values whose relative distance is below `tol`.
pub fn group_eigenvalues(ratios: &[f64], tol: f64) -> Vec<EigenGroup> {
    let mut groups: Vec<EigenGroup> = vec![];
    for (i, &r) in ratios.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if (r - g.ratio).abs() <= tol * g.ratio.abs().max(1e-300) || (r.abs() < tol && g.ratio.abs() < tol) => {
                g.count += 1;
                g.last = i + 1;
            }
            _ => groups.push(EigenGroup { ratio: r, count: 1, first: i + 1, last: i + 1 }),
        }
    }
    groups
}

/// Linearized spectrum normalized by the first relaxation eigenvalue.
pub fn wcu_spectrum_report(op: &FactorizedOperator) -> Result<WcuReport> {
    let j = equilibrium_jacobian(op)?;
    let norm = frobenius(&j);
    let ev: Vec<Complex64> = eigenvalues(&j)?;
    let n_invariants = ev.iter().filter(|z| z.norm() < 1e-12 * norm).count();
    let lambda6 = ev
        .get(n_invariants)
        .map(|z| z.re.abs())
        .ok_or_else(|| Error::Singular("no relaxation eigenvalue".into()))?;
    let ratios: Vec<f64> = ev.iter().map(|z| z.re / lambda6).collect();
    let max_imag = ev.iter().fold(0.0f64, |a, z| a.max(z.im.abs()));
    let max_real = ev.iter().fold(f64::NEG_INFINITY, |a, z| a.max(z.re));
    Ok(WcuReport {
        lambda6,
        groups: group_eigenvalues(&ratios, 1e-8),
        ratios,
        n_invariants,
        max_imag,
        max_real,
        norm,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GalileanReport {
    pub u_bulk: [f64; 3],
    /// `‖Q(c_u, c_u)‖₂` of the projected shifted Maxwellian.
    pub truncation_l2: f64,
    /// Weighted `L²` distance between the shifted Maxwellian and its projection.
    pub projection_residual: f64,
    /// Largest invariant drift over one application and a short evolution.
    pub conservation_err: f64,
}

/// Shifted Maxwellian test.
pub fn galilean_report(op: &FactorizedOperator, u_bulk: [f64; 3]) -> Result<GalileanReport> {
    let cfg = *op.cfg();
    let u2 = u_bulk.iter().map(|x| x * x).sum::<f64>();
    let ratio = |v: [f64; 3]| (u_bulk[0] * v[0] + u_bulk[1] * v[1] + u_bulk[2] * v[2] - 0.5 * u2).exp();
    let c = project_ratio(ratio, &cfg, PROJECTION_ORDER)?;
    let q = q_angular_first(op, &c)?;
    let truncation_l2 = q.norm2();
    // ‖f/M‖²_M = e^{u²} for the shifted Maxwellian; the Parseval remainder cancels
    // badly, so the residual is summed from the first omitted degrees instead
    let wider = SpectralConfig::new(cfg.k_max + 3, cfg.l_max + 3, cfg.gamma)?;
    let cw = project_ratio(ratio, &wider, PROJECTION_ORDER)?;
    let mut resid = 0.0;
    for k in 0..wider.n_k() {
        for qi in 0..wider.n_q() {
            let (l, _) = crate::basis::decode_q(qi);
            if k > cfg.k_max || l > cfg.l_max {
                resid += cw.get(k, qi).powi(2);
            }
        }
    }
    let m0 = moments(&c);
    let mut drift = moments(&c.axpy(1.0, &q)).max_diff(&m0);
    let dt = default_dt(op)?;
    let trace = rk4_integrate_every(op, &c, dt, 20, 1)?;
    drift = drift.max(trace.max_moment_drift());
    Ok(GalileanReport { u_bulk, truncation_l2, projection_residual: resid.sqrt(), conservation_err: drift })
}

/// Source of the shear problem: projection of `M (v_z² − v²/3)` onto the
/// `(l = 2, m)` radial modes.
fn shear_source(cfg: &SpectralConfig, m: i64) -> Result<Vec<f64>> {
    // v_z² − v²/3 for m = 0, and the matching real quadrupole for other m
    let f = move |v: [f64; 3]| match m {
        0 => v[2] * v[2] - (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / 3.0,
        1 => v[0] * v[2],
        -1 => v[1] * v[2],
        2 => 0.5 * (v[0] * v[0] - v[1] * v[1]),
        _ => v[0] * v[1],
    };
    let s = project_ratio(f, cfg, PROJECTION_ORDER)?;
    let q = cfg.q_index(2, m)?;
    Ok((0..cfg.n_k()).map(|k| s.get(k, q)).collect())
}

/// Viscosity `μ ∝ −sᵀ L⁻¹ s` on the `(l = 2, m)` block truncated to `k ≤ k_trunc`.
fn shear_viscosity(cfg: &SpectralConfig, j: &DMatrix<f64>, m: i64, k_trunc: usize) -> Result<f64> {
    let s = shear_source(cfg, m)?;
    let b = radial_block(cfg, j, 2, m, k_trunc + 1)?;
    let sv = DVector::from_fn(k_trunc + 1, |k, _| s[k]);
    let x = b
        .lu()
        .solve(&sv)
        .ok_or_else(|| Error::Singular(format!("l = 2 block truncated at k = {k_trunc}")))?;
    Ok(-sv.dot(&x))
}

#[derive(Clone, Debug, Serialize)]
pub struct ViscosityReport {
    pub f_mu: Vec<f64>,
    /// Largest spread of `f_μ` across the five `m` components.
    pub m_spread: f64,
}

/// `f_μ(k_trunc) = μ(k_trunc) / μ(0)`.
pub fn chapman_enskog_fmu(op: &FactorizedOperator, k_trunc: usize) -> Result<f64> {
    let cfg = *op.cfg();
    if cfg.l_max < 2 || k_trunc > cfg.k_max {
        return domain(format!("need l_max ≥ 2 and k_trunc ≤ {}", cfg.k_max));
    }
    let j = equilibrium_jacobian(op)?;
    Ok(shear_viscosity(&cfg, &j, 0, k_trunc)? / shear_viscosity(&cfg, &j, 0, 0)?)
}

/// `f_μ` for every truncation, checked across all five `m`.
pub fn viscosity_report(op: &FactorizedOperator) -> Result<ViscosityReport> {
    let cfg = *op.cfg();
    if cfg.l_max < 2 {
        return Err(Error::Config("viscosity needs l_max ≥ 2".into()));
    }
    let j = equilibrium_jacobian(op)?;
    let mut per_m = vec![];
    for m in -2..=2i64 {
        let mu0 = shear_viscosity(&cfg, &j, m, 0)?;
        let row: Vec<f64> = (0..=cfg.k_max).map(|k| Ok(shear_viscosity(&cfg, &j, m, k)? / mu0)).collect::<Result<_>>()?;
        per_m.push(row);
    }
    let f_mu = per_m[2].clone();
    let mut m_spread = 0.0f64;
    for row in &per_m {
        for (a, b) in row.iter().zip(&f_mu) {
            m_spread = m_spread.max((a - b).abs());
        }
    }
    Ok(ViscosityReport { f_mu, m_spread })
}

#[derive(Clone, Debug, Serialize)]
pub struct StressReport {
    pub amplitude: f64,
    pub fitted_rate: f64,
    /// Slowest decay rate of the `l = 2` block.
    pub slowest_l2_rate: f64,
    /// `1 / |(L₂⁻¹)₀₀|`, the effective rate entering the viscosity.
    pub chapman_enskog_rate: f64,
    pub rel_err: f64,
    /// Peak |c_{k,2,0}| for `k ≥ 1` and its value at the end.
    pub cascade_peak: Vec<f64>,
    pub cascade_final: Vec<f64>,
    pub moment_drift: f64,
    pub times: Vec<f64>,
    /// `amplitudes[k][i]` of the `(k, 2, 0)` modes.
    pub amplitudes: Vec<Vec<f64>>,
}

/// Shear stress relaxation from an `(k = 0, l = 2, m = 0)` perturbation.
pub fn stress_relaxation_report(op: &FactorizedOperator, amplitude: f64, t_end: f64, dt: f64) -> Result<StressReport> {
    let cfg = *op.cfg();
    if cfg.l_max < 2 {
        return Err(Error::Config("stress relaxation needs l_max ≥ 2".into()));
    }
    let q = cfg.q_index(2, 0)?;
    let mut c0 = CoefficientField::equilibrium(&cfg);
    c0.set(0, q, amplitude);
    let n_steps = (t_end / dt).ceil() as usize;
    let trace = rk4_integrate_every(op, &c0, dt, n_steps, (n_steps / 2000).max(1))?;
    let amplitudes: Vec<Vec<f64>> = (0..cfg.n_k()).map(|k| trace.amplitude(k, q)).collect();
    let fitted_rate = tail_decay_rate(&trace.times, &amplitudes[0], 0.25)?;
    let j = equilibrium_jacobian(op)?;
    let b = radial_block(&cfg, &j, 2, 0, cfg.n_k())?;
    let slowest = eigenvalues(&b)?.iter().map(|z| -z.re).fold(f64::INFINITY, f64::min);
    let inv = b.clone().try_inverse().ok_or_else(|| Error::Singular("l = 2 block".into()))?;
    let cascade_peak: Vec<f64> = amplitudes[1..].iter().map(|a| a.iter().fold(0.0f64, |m, x| m.max(x.abs()))).collect();
    let cascade_final: Vec<f64> = amplitudes[1..].iter().map(|a| a.last().unwrap().abs()).collect();
    Ok(StressReport {
        amplitude,
        fitted_rate,
        slowest_l2_rate: slowest,
        chapman_enskog_rate: 1.0 / inv[(0, 0)].abs(),
        rel_err: (fitted_rate - slowest).abs() / slowest,
        cascade_peak,
        cascade_final,
        moment_drift: trace.max_moment_drift(),
        times: trace.times,
        amplitudes,
    })
}

/// Paddings of the quadrature convergence study and its reference.
pub const QUADCONV_PADS: [usize; 6] = [0, 2, 4, 8, 16, 32];
pub const QUADCONV_REFERENCE_PAD: usize = 64;

#[derive(Clone, Debug, Serialize)]
pub struct QuadConvReport {
    pub gamma: f64,
    pub reference_pad: usize,
    pub pads: Vec<usize>,
    /// Relative ℓ∞ error of the symmetrized, uncorrected `R` against the reference.
    pub errors: Vec<f64>,
}

impl QuadConvReport {
    pub fn is_monotone(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0] || w[1] == 0.0)
    }
}

/// Self-convergence of `R` under equal radial and angular padding.
pub fn quadrature_convergence(cfg: &SpectralConfig, pads: &[usize], reference_pad: usize) -> Result<QuadConvReport> {
    if pads.iter().any(|&p| p >= reference_pad) {
        return Err(Error::Config("every pad must be below the reference pad".into()));
    }
    let (k, l) = (cfg.k_max, cfg.l_max);
    let reference = assemble_r_tensor(cfg, &grid_sizes(k, l, reference_pad, reference_pad))?;
    let scale = reference.max_abs();
    if scale == 0.0 {
        return Err(Error::Singular("reference tensor is zero".into()));
    }
    let mut errors = vec![];
    for &p in pads {
        let r = assemble_r_tensor(cfg, &grid_sizes(k, l, p, p))?;
        let err = r.values.iter().zip(&reference.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        errors.push(err / scale);
    }
    Ok(QuadConvReport { gamma: cfg.gamma, reference_pad, pads: pads.to_vec(), errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::grid_sizes;

    fn op(k: usize, l: usize, gamma: f64) -> FactorizedOperator {
        let cfg = SpectralConfig::new(k, l, gamma).unwrap();
        FactorizedOperator::build(&cfg, &grid_sizes(k, l, 8, 8)).unwrap()
    }

    #[test]
    fn equilibrium_trace_is_constant() {
        let o = op(2, 2, 1.0);
        let c = CoefficientField::equilibrium(o.cfg());
        let tr = rk4_integrate(&o, &c, 0.1, 10).unwrap();
        assert!(tr.snapshots.iter().all(|s| s.values == c.values));
        assert_eq!(tr.max_moment_drift(), 0.0);
    }

    #[test]
    fn invariants_do_not_drift() {
        let o = op(2, 2, 1.0);
        let mut c = CoefficientField::random(o.cfg(), 5);
        c.values.iter_mut().skip(1).for_each(|v| *v *= 0.05);
        let tr = rk4_integrate(&o, &c, 0.05, 50).unwrap();
        assert_eq!(tr.max_moment_drift(), 0.0);
    }

    #[test]
    fn linear_mode_decays_at_eigenvalue() {
        let o = op(3, 2, 0.0);
        let j = equilibrium_jacobian(&o).unwrap();
        // Maxwell molecules: (k=2, l=0) is an eigenvector
        let lam = j[(2 * o.cfg().n_q(), 2 * o.cfg().n_q())];
        let mut c = CoefficientField::equilibrium(o.cfg());
        c.set(2, 0, 1e-7);
        let dt = 0.02;
        let tr = rk4_integrate(&o, &c, dt, 200).unwrap();
        let rate = -log_slope(&tr.times, &tr.amplitude(2, 0)).unwrap();
        assert!((rate + lam).abs() < 1e-6 * lam.abs(), "{rate} {lam}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let o = op(2, 2, 1.0);
        let mut c = CoefficientField::random(o.cfg(), 9);
        c.values.iter_mut().skip(1).for_each(|v| *v *= 0.3);
        let t_end = 2.0;
        let run = |n: usize| rk4_integrate_every(&o, &c, t_end / n as f64, n, n).unwrap().last().clone();
        let (a, b, d) = (run(20), run(40), run(80));
        let e1 = a.axpy(-1.0, &b).norm2();
        let e2 = b.axpy(-1.0, &d).norm2();
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() < 0.2, "observed order {order}");
    }

    #[test]
    fn divergence_is_detected() {
        let o = op(1, 2, 1.0);
        let c = CoefficientField::random(o.cfg(), 1).axpy(50.0, &CoefficientField::random(o.cfg(), 2));
        assert!(matches!(rk4_integrate(&o, &c, 5.0, 200), Err(Error::Divergence { .. })));
    }

    #[test]
    fn bkw_projection_properties() {
        let cfg = SpectralConfig::new(4, 4, 0.0).unwrap();
        for t in [0.0, 1.0, 10.0] {
            let c = bkw_coefficients(&cfg, t, 0.3).unwrap();
            let m = moments(&c);
            assert!((m.mass - 1.0).abs() < 1e-12 && (m.energy - 1.5).abs() < 1e-12);
            for k in 0..cfg.n_k() {
                for q in 1..cfg.n_q() {
                    assert_eq!(c.get(k, q), 0.0);
                }
            }
        }
        let late = bkw_coefficients(&cfg, 500.0, 0.3).unwrap();
        let eq = CoefficientField::equilibrium(&cfg);
        assert!(late.axpy(-1.0, &eq).max_abs() < 1e-12);
        assert!(bkw_coefficients_with(&cfg, 0.0, 0.3, 0.55).is_err());
        assert!(bkw_coefficients(&cfg, -1.0, 0.3).is_err());
    }

    #[test]
    fn grouping() {
        let g = group_eigenvalues(&[0.0, 1e-13, -1.0, -1.0 - 1e-10, -1.5], 1e-8);
        assert_eq!(g.iter().map(|x| x.count).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!((g[1].first, g[1].last), (3, 4));
    }

    #[test]
    fn log_slope_of_exponential() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|x| 3.0 * (-1.7 * x).exp()).collect();
        assert!((log_slope(&t, &y).unwrap() + 1.7).abs() < 1e-12);
        assert!(tail_decay_rate(&t, &[1.0; 20], 0.5).is_ok());
        let mut bumpy = y.clone();
        bumpy[19] = 10.0;
        assert!(matches!(tail_decay_rate(&t, &bumpy, 0.25), Err(Error::Fit(_))));
    }

    #[test]
    fn maxwell_viscosity_ratio_is_one() {
        let o = op(3, 2, 0.0);
        let r = viscosity_report(&o).unwrap();
        for f in &r.f_mu {
            assert!((f - 1.0).abs() < 1e-10);
        }
        assert!(r.m_spread < 1e-10);
    }

    #[test]
    fn quadrature_convergence_small() {
        let cfg = SpectralConfig::new(1, 1, 1.0).unwrap();
        let rep = quadrature_convergence(&cfg, &[0, 2, 4], 12).unwrap();
        assert_eq!(rep.errors.len(), 3);
        assert!(rep.errors.iter().all(|e| e.is_finite()));
        assert!(rep.errors[2] < rep.errors[0]);
        assert!(quadrature_convergence(&cfg, &[4], 4).is_err());
    }
}
