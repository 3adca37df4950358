//! One-dimensional quadrature rules and sizing of the kinematic grid.
//!
//! Gauss rules are generated by Golub–Welsch from the three-term recurrence of
//! the orthonormal polynomial family. The eigenvalues are then refined by a
//! few Newton steps on the orthonormal recurrence and the weights are taken
//! from the Christoffel sum `1 / Σ p_k(x_i)²`, which keeps the tiny tail
//! weights of high-order Laguerre rules accurate to full relative precision.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Integration domain of a rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    Finite { a: f64, b: f64 },
    HalfLine,
    Periodic,
}

/// Nodes and weights of a one-dimensional rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub domain: Domain,
}

impl Rule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrate `f` with the rule.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Affinely map a finite rule onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> Rule1D {
        let (a0, b0) = match self.domain {
            Domain::Finite { a, b } => (a, b),
            _ => panic!("only finite rules can be mapped"),
        };
        let scale = (b - a) / (b0 - a0);
        Rule1D {
            nodes: self.nodes.iter().map(|&x| a + (x - a0) * scale).collect(),
            weights: self.weights.iter().map(|&w| w * scale).collect(),
            domain: Domain::Finite { a, b },
        }
    }
}

/// Evaluate the orthonormal polynomials `p_0..=p_n` at `x` together with the
/// derivative of `p_n`. `alpha[k]` and `beta[k]` are the recurrence
/// coefficients with `beta[0] = mu0`.
fn orthonormal_eval(alpha: &[f64], beta: &[f64], n: usize, x: f64, p: &mut [f64]) -> f64 {
    p[0] = 1.0 / beta[0].sqrt();
    if n == 0 {
        return 0.0;
    }
    let sb1 = beta[1].sqrt();
    p[1] = (x - alpha[0]) * p[0] / sb1;
    let (mut dp_prev, mut dp) = (0.0, p[0] / sb1);
    for k in 1..n {
        let sbk = beta[k].sqrt();
        let sbk1 = beta[k + 1].sqrt();
        p[k + 1] = ((x - alpha[k]) * p[k] - sbk * p[k - 1]) / sbk1;
        let d = (p[k] + (x - alpha[k]) * dp - sbk * dp_prev) / sbk1;
        dp_prev = dp;
        dp = d;
    }
    dp
}

/// Gauss rule for the measure with recurrence `alpha[0..n]`, `beta[0..=n]`
/// (`beta[0]` is the total mass of the measure).
pub fn golub_welsch(alpha: &[f64], beta: &[f64], domain: Domain) -> Rule1D {
    let n = alpha.len();
    assert!(n >= 1 && beta.len() > n, "recurrence too short");
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jac[(k, k)] = alpha[k];
        if k + 1 < n {
            let off = beta[k + 1].sqrt();
            jac[(k, k + 1)] = off;
            jac[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut p = vec![0.0; n + 1];
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let dp = orthonormal_eval(alpha, beta, n, *x, &mut p);
            if dp == 0.0 || !dp.is_finite() {
                break;
            }
            let step = p[n] / dp;
            if !step.is_finite() {
                break;
            }
            *x -= step;
            if step.abs() <= 1e-17 * x.abs().max(1e-300) {
                break;
            }
        }
        orthonormal_eval(alpha, beta, n - 1, *x, &mut p);
        let s: f64 = p[..n].iter().map(|v| v * v).sum();
        weights.push(1.0 / s);
    }
    Rule1D { nodes, weights, domain }
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Result<Rule1D> {
    if n == 0 {
        return domain("Gauss-Legendre rule needs n >= 1");
    }
    let alpha = vec![0.0; n];
    let mut beta = vec![2.0; n + 1];
    for (k, b) in beta.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        *b = kf * kf / (4.0 * kf * kf - 1.0);
    }
    let mut rule = golub_welsch(&alpha, &beta, Domain::Finite { a: -1.0, b: 1.0 });
    // enforce the exact reflection symmetry
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        let w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if n % 2 == 1 {
        rule.nodes[n / 2] = 0.0;
    }
    Ok(rule)
}

/// Gauss–Legendre rule mapped onto `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> Result<Rule1D> {
    Ok(gauss_legendre(n)?.mapped(0.0, 1.0))
}

/// Generalized Gauss–Laguerre rule for the weight `x^a e^{-x}` on `[0, ∞)`.
pub fn gauss_laguerre_gen(n: usize, a: f64) -> Result<Rule1D> {
    if n == 0 {
        return domain("Gauss-Laguerre rule needs n >= 1");
    }
    if a <= -1.0 || !a.is_finite() {
        return domain(format!("Laguerre parameter must exceed -1, got {a}"));
    }
    let alpha: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + a + 1.0).collect();
    let mut beta = vec![libm::tgamma(a + 1.0); n + 1];
    for (k, b) in beta.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        *b = kf * (kf + a);
    }
    Ok(golub_welsch(&alpha, &beta, Domain::HalfLine))
}

/// Periodic trapezoid rule on `[0, 2π)`.
pub fn trapezoid_periodic(n: usize) -> Result<Rule1D> {
    if n == 0 {
        return domain("trapezoid rule needs n >= 1");
    }
    let h = 2.0 * std::f64::consts::PI / n as f64;
    Ok(Rule1D {
        nodes: (0..n).map(|j| h * j as f64).collect(),
        weights: vec![h; n],
        domain: Domain::Periodic,
    })
}

/// Point counts of the tensor-product kinematic grid.
///
/// Patch 1 covers `h < ρ` (`h = ρ t`), patch 2 covers `ρ < h` (`ρ = h t`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_e: usize,
    pub n_rho1: usize,
    pub n_t1: usize,
    pub n_h2: usize,
    pub n_t2: usize,
    pub n_chi: usize,
    pub n_eps: usize,
    pub pad_rad: usize,
    pub pad_ang: usize,
}

impl GridSpec {
    /// The unpadded exactness bounds.
    pub fn baseline(k_max: usize, l_max: usize) -> GridSpec {
        grid_sizes(k_max, l_max, 0, 0)
    }

    /// Check every axis against the unpadded bounds.
    pub fn check_against(&self, k_max: usize, l_max: usize) -> Result<()> {
        let b = GridSpec::baseline(k_max, l_max);
        let axes = [
            ("n_e", self.n_e, b.n_e),
            ("n_rho1", self.n_rho1, b.n_rho1),
            ("n_t1", self.n_t1, b.n_t1),
            ("n_h2", self.n_h2, b.n_h2),
            ("n_t2", self.n_t2, b.n_t2),
            ("n_chi", self.n_chi, b.n_chi),
            ("n_eps", self.n_eps, b.n_eps),
        ];
        for (name, have, need) in axes {
            if have < need {
                return Err(crate::Error::Config(format!(
                    "grid axis {name} has {have} points, the exactness bound needs {need}"
                )));
            }
        }
        Ok(())
    }

    /// Number of kinematic (E, ρ/h, t) nodes summed over both patches.
    pub fn kinematic_points(&self) -> usize {
        self.n_e * (self.n_rho1 * self.n_t1 + self.n_h2 * self.n_t2)
    }
}

/// Padding used by default builds; `R` is converged to rounding well before it.
pub const DEFAULT_PAD: usize = 16;

/// Size the kinematic grid from the exactness bounds plus padding.
///
/// Padding goes only on the coupled kinematic axes; the scattering angles are
/// integrated exactly at their baseline sizes.
pub fn grid_sizes(k_max: usize, l_max: usize, pad_rad: usize, pad_ang: usize) -> GridSpec {
    let (k, l) = (k_max, l_max);
    let n_e = (6 * k + 3 * l + 6).div_ceil(4);
    let n_rho = 4 * k + 3 * l + 4;
    let n_t1 = k + (3 * l).div_ceil(2) + 1;
    let n_t2 = 3 * k + (3 * l) / 2 + 3;
    GridSpec {
        n_e: n_e + pad_rad,
        n_rho1: n_rho + pad_rad,
        n_t1: n_t1 + pad_ang,
        n_h2: n_rho + pad_ang,
        n_t2: n_t2 + pad_rad,
        n_chi: k + l.div_ceil(2) + 1,
        n_eps: 2 * k + l + 1,
        pad_rad,
        pad_ang,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn legendre_small_rules() {
        let r = gauss_legendre(1).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert_relative_eq!(r.weights[0], 2.0, epsilon = 1e-15);
        let r = gauss_legendre(2).unwrap();
        assert_relative_eq!(r.nodes[1], 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(r.nodes[0], -1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(r.weights[0], 1.0, epsilon = 1e-15);
        for d in 0..4 {
            let exact = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
            assert!((r.integrate(|x| x.powi(d)) - exact).abs() < 1e-15);
        }
        let r = gauss_legendre(4).unwrap();
        assert!((r.integrate(|x| x.powi(6)) - 2.0 / 7.0).abs() < 1e-15);
        assert!(gauss_legendre(0).is_err());
    }

    #[test]
    fn laguerre_small_rules() {
        let r = gauss_laguerre_gen(1, 0.5).unwrap();
        assert_relative_eq!(r.nodes[0], 1.5, epsilon = 1e-15);
        assert_relative_eq!(r.weights[0], PI.sqrt() / 2.0, epsilon = 1e-15);
        let r = gauss_laguerre_gen(1, 0.0).unwrap();
        assert_relative_eq!(r.nodes[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.weights[0], 1.0, epsilon = 1e-15);
        let r = gauss_laguerre_gen(2, 0.5).unwrap();
        let exact = 15.0 * PI.sqrt() / 8.0;
        assert!((r.integrate(|x| x * x) / exact - 1.0).abs() < 1e-14);
        assert!(gauss_laguerre_gen(3, -1.0).is_err());
        assert!(gauss_laguerre_gen(0, 0.0).is_err());
    }

    #[test]
    fn trapezoid_fourier_exactness() {
        let r = trapezoid_periodic(13).unwrap();
        assert!(r.integrate(|e| (3.0 * e).cos()).abs() < 1e-15);
        assert!((r.integrate(|e| (6.0 * e).cos().powi(2)) - PI).abs() < 1e-14);
        for n in 1..6 {
            let r = trapezoid_periodic(n).unwrap();
            assert!((r.integrate(|_| 1.0) - 2.0 * PI).abs() < 1e-15);
            assert_eq!(r.nodes[0], 0.0);
        }
    }

    #[test]
    fn legendre_symmetry() {
        for n in 1..40 {
            let r = gauss_legendre(n).unwrap();
            for i in 0..n {
                assert_eq!(r.nodes[i], -r.nodes[n - 1 - i]);
                assert_eq!(r.weights[i], r.weights[n - 1 - i]);
                assert!(r.weights[i] > 0.0);
                if i > 0 {
                    assert!(r.nodes[i] > r.nodes[i - 1]);
                }
            }
        }
    }

    fn ln_factorial_like(a: f64) -> f64 {
        libm::lgamma(a)
    }

    #[test]
    fn legendre_monomial_exactness_to_128() {
        for n in [1usize, 2, 3, 7, 16, 33, 64, 100, 128] {
            let r = gauss_legendre(n).unwrap();
            for d in 0..2 * n {
                let q = r.integrate(|x| x.powi(d as i32));
                if d % 2 == 1 {
                    assert!(q.abs() < 1e-14, "n={n} d={d} q={q}");
                } else {
                    let exact = 2.0 / (d as f64 + 1.0);
                    assert!((q / exact - 1.0).abs() < 1e-12, "n={n} d={d}");
                }
            }
        }
    }

    #[test]
    fn laguerre_monomial_exactness_to_128() {
        // Moments overflow for large degree; compare in log space.
        for a in [0.0, 0.5, 0.25, 1.5] {
            for n in [1usize, 2, 5, 11, 32, 75, 128] {
                let r = gauss_laguerre_gen(n, a).unwrap();
                for d in 0..2 * n {
                    let ln_exact = ln_factorial_like(d as f64 + a + 1.0);
                    let s: f64 = r
                        .nodes
                        .iter()
                        .zip(&r.weights)
                        .map(|(&x, &w)| (w.ln() + d as f64 * x.ln() - ln_exact).exp())
                        .sum();
                    assert!((s - 1.0).abs() < 1e-12, "a={a} n={n} d={d} ratio={s}");
                }
            }
        }
    }

    #[test]
    fn grid_sizes_examples() {
        let g = grid_sizes(4, 4, 0, 0);
        assert_eq!(
            (g.n_e, g.n_rho1, g.n_t1, g.n_h2, g.n_t2, g.n_chi, g.n_eps),
            (11, 32, 11, 32, 21, 7, 13)
        );
        let g = grid_sizes(0, 0, 0, 0);
        assert_eq!((g.n_e, g.n_rho1, g.n_t2, g.n_eps), (2, 4, 3, 1));
        assert_eq!((g.n_t1, g.n_chi), (1, 1));
        let g0 = grid_sizes(3, 5, 0, 0);
        let g = grid_sizes(3, 5, 10, 10);
        assert_eq!(g.n_chi, g0.n_chi);
        assert_eq!(g.n_eps, g0.n_eps);
        assert_eq!(g.n_e, g0.n_e + 10);
        assert_eq!(g.n_rho1, g0.n_rho1 + 10);
        assert_eq!(g.n_h2, g0.n_h2 + 10);
        assert_eq!(g.n_t1, g0.n_t1 + 10);
        assert_eq!(g.n_t2, g0.n_t2 + 10);
    }

    #[test]
    fn undersized_grid_rejected() {
        let mut g = grid_sizes(2, 2, 0, 0);
        assert!(g.check_against(2, 2).is_ok());
        g.n_chi -= 1;
        assert!(g.check_against(2, 2).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn fields(g: &GridSpec) -> [usize; 7] {
            [g.n_e, g.n_rho1, g.n_t1, g.n_h2, g.n_t2, g.n_chi, g.n_eps]
        }

        proptest! {
            #[test]
            fn sizing_monotone(k in 0usize..10, l in 0usize..14, pr in 0usize..20, pa in 0usize..20) {
                let base = fields(&grid_sizes(k, l, pr, pa));
                for next in [
                    grid_sizes(k + 1, l, pr, pa),
                    grid_sizes(k, l + 1, pr, pa),
                    grid_sizes(k, l, pr + 1, pa),
                    grid_sizes(k, l, pr, pa + 1),
                ] {
                    for (a, b) in base.iter().zip(fields(&next).iter()) {
                        prop_assert!(b >= a);
                    }
                }
            }

            #[test]
            fn legendre_exact_shifted_power(n in 1usize..30) {
                let r = gauss_legendre(n).unwrap();
                let d = 2 * n - 1;
                // ∫ (1+x)^d dx over [-1,1] = 2^{d+1}/(d+1)
                let q = r.integrate(|x| (1.0 + x).powi(d as i32));
                let exact = 2f64.powi(d as i32 + 1) / (d as f64 + 1.0);
                prop_assert!((q / exact - 1.0).abs() < 1e-12);
            }
        }
    }
}
