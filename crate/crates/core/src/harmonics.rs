//! Real and complex spherical harmonics.
//!
//! Everything is evaluated as solid harmonics `r^l Y_lm(r̂)`, which are
//! polynomials in the Cartesian components, so no division by `|r|` or
//! `sin θ` is ever needed. The associated Legendre part carries no
//! Condon–Shortley phase; the complex harmonics put it back explicitly.

use num_complex::Complex64;
use std::f64::consts::PI;

/// Index of `(l, m)` in the full real table, 0-based.
#[inline]
pub fn lm_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Index of `(l, m ≥ 0)` in the half table.
#[inline]
pub fn lm_half_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Precomputed recurrence coefficients for normalized solid harmonics up to `l_max`.
#[derive(Clone, Debug)]
pub struct SolidHarmonics {
    l_max: usize,
    diag: Vec<f64>,
    sub: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl SolidHarmonics {
    pub fn new(l_max: usize) -> Self {
        let n = l_max + 1;
        let mut diag = vec![0.0; n];
        let mut sub = vec![0.0; n];
        diag[0] = 1.0 / (4.0 * PI).sqrt();
        for m in 1..n {
            diag[m] = diag[m - 1] * ((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
        }
        for (m, s) in sub.iter_mut().enumerate() {
            *s = ((2 * m + 3) as f64).sqrt();
        }
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n * n];
        for l in 2..n {
            for m in 0..l - 1 {
                let (lf, mf) = (l as f64, m as f64);
                a[l * n + m] = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let l1 = lf - 1.0;
                b[l * n + m] = ((l1 * l1 - mf * mf) / (4.0 * l1 * l1 - 1.0)).sqrt();
            }
        }
        SolidHarmonics { l_max, diag, sub, a, b }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Fill `leg[l*(l_max+1)+m]` with the normalized Legendre factor of the
    /// solid harmonic (homogeneous of degree `l-m` in `(z, r)`).
    #[inline]
    fn legendre(&self, z: f64, r2: f64, leg: &mut [f64]) {
        let n = self.l_max + 1;
        for m in 0..n {
            let mut prev2 = self.diag[m];
            leg[m * n + m] = prev2;
            if m + 1 >= n {
                continue;
            }
            let mut prev1 = self.sub[m] * z * prev2;
            leg[(m + 1) * n + m] = prev1;
            for l in m + 2..n {
                let cur = self.a[l * n + m] * (z * prev1 - self.b[l * n + m] * r2 * prev2);
                leg[l * n + m] = cur;
                prev2 = prev1;
                prev1 = cur;
            }
        }
    }

    /// Real solid harmonics `r^l Y^R_lm` for all `(l, m)`, indexed by [`lm_index`].
    pub fn eval_full(&self, v: [f64; 3], out: &mut [f64]) {
        let n = self.l_max + 1;
        let mut leg = vec![0.0; n * n];
        let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        self.legendre(v[2], r2, &mut leg);
        let (mut re, mut im) = (1.0, 0.0);
        for m in 0..n {
            if m > 0 {
                let nre = re * v[0] - im * v[1];
                im = re * v[1] + im * v[0];
                re = nre;
            }
            for l in m..n {
                let p = leg[l * n + m];
                if m == 0 {
                    out[lm_index(l, 0)] = p;
                } else {
                    out[lm_index(l, m as i64)] = std::f64::consts::SQRT_2 * p * re;
                    out[lm_index(l, -(m as i64))] = std::f64::consts::SQRT_2 * p * im;
                }
            }
        }
    }

    /// Real solid harmonics with `m ≥ 0` only, indexed by [`lm_half_index`].
    /// `leg` is scratch of length `(l_max+1)²`.
    #[inline]
    pub fn eval_cos(&self, v: [f64; 3], leg: &mut [f64], out: &mut [f64]) {
        let n = self.l_max + 1;
        let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        self.legendre(v[2], r2, leg);
        let (mut re, mut im) = (1.0, 0.0);
        for m in 0..n {
            let f = if m == 0 {
                1.0
            } else {
                let nre = re * v[0] - im * v[1];
                im = re * v[1] + im * v[0];
                re = nre;
                std::f64::consts::SQRT_2 * re
            };
            for l in m..n {
                out[lm_half_index(l, m)] = leg[l * n + m] * f;
            }
        }
    }

    /// Complex harmonic `Y_l^m(r̂)` with the Condon–Shortley phase, times `r^l`.
    pub fn eval_complex(&self, l: usize, m: i64, v: [f64; 3]) -> Complex64 {
        let n = self.l_max + 1;
        let mut leg = vec![0.0; n * n];
        let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        self.legendre(v[2], r2, &mut leg);
        let ma = m.unsigned_abs() as usize;
        let w = Complex64::new(v[0], v[1]).powu(ma as u32);
        let base = w * leg[l * n + ma];
        if m >= 0 {
            if ma % 2 == 1 {
                -base
            } else {
                base
            }
        } else {
            base.conj()
        }
    }
}

pub(crate) fn check_unit(dir: [f64; 3]) -> crate::Result<()> {
    let n2 = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
    if !n2.is_finite() || (n2.sqrt() - 1.0).abs() > 1e-12 {
        return Err(crate::Error::Domain(format!(
            "direction must be a unit vector, |n| = {}",
            n2.sqrt()
        )));
    }
    Ok(())
}

/// Complex spherical harmonic `Y_l^m(n̂)` (Condon–Shortley phase).
pub fn complex_sph_harm(l: usize, m: i64, dir: [f64; 3]) -> crate::Result<Complex64> {
    if m.unsigned_abs() as usize > l {
        return Err(crate::Error::Domain(format!("|m| = {} exceeds l = {l}", m.abs())));
    }
    check_unit(dir)?;
    Ok(SolidHarmonics::new(l).eval_complex(l, m, dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{gauss_legendre, trapezoid_periodic};

    fn dir(theta: f64, phi: f64) -> [f64; 3] {
        [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
    }

    #[test]
    fn low_order_closed_forms() {
        let sh = SolidHarmonics::new(2);
        let mut out = vec![0.0; 9];
        let d = dir(0.7, 1.9);
        sh.eval_full(d, &mut out);
        let c1 = (3.0 / (4.0 * PI)).sqrt();
        assert!((out[lm_index(1, 0)] - c1 * d[2]).abs() < 1e-15);
        assert!((out[lm_index(1, 1)] - c1 * d[0]).abs() < 1e-15);
        assert!((out[lm_index(1, -1)] - c1 * d[1]).abs() < 1e-15);
        let c2 = (15.0 / (4.0 * PI)).sqrt();
        assert!((out[lm_index(2, -2)] - c2 * d[0] * d[1]).abs() < 1e-15);
        assert!((out[lm_index(2, 1)] - c2 * d[0] * d[2]).abs() < 1e-15);
        let c20 = (5.0 / (16.0 * PI)).sqrt();
        assert!((out[lm_index(2, 0)] - c20 * (3.0 * d[2] * d[2] - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn solid_harmonics_scale_as_r_to_l() {
        let sh = SolidHarmonics::new(6);
        let d = dir(1.1, -0.4);
        let mut a = vec![0.0; 49];
        let mut b = vec![0.0; 49];
        sh.eval_full(d, &mut a);
        let r = 2.7;
        sh.eval_full([r * d[0], r * d[1], r * d[2]], &mut b);
        for l in 0..=6usize {
            for m in -(l as i64)..=l as i64 {
                let i = lm_index(l, m);
                assert!((b[i] - r.powi(l as i32) * a[i]).abs() < 1e-12 * b[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn real_harmonics_are_orthonormal() {
        let lmax = 8;
        let sh = SolidHarmonics::new(lmax);
        let gl = gauss_legendre(lmax + 2).unwrap();
        let tr = trapezoid_periodic(2 * lmax + 2).unwrap();
        let nq = (lmax + 1) * (lmax + 1);
        let mut gram = vec![0.0; nq * nq];
        let mut y = vec![0.0; nq];
        for (&z, &wz) in gl.nodes.iter().zip(&gl.weights) {
            for (&p, &wp) in tr.nodes.iter().zip(&tr.weights) {
                let s = (1.0 - z * z).sqrt();
                sh.eval_full([s * p.cos(), s * p.sin(), z], &mut y);
                for i in 0..nq {
                    for j in 0..nq {
                        gram[i * nq + j] += wz * wp * y[i] * y[j];
                    }
                }
            }
        }
        for i in 0..nq {
            for j in 0..nq {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i * nq + j] - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn complex_matches_real_combination() {
        let sh = SolidHarmonics::new(5);
        let d = dir(0.3, 2.2);
        let mut y = vec![0.0; 36];
        sh.eval_full(d, &mut y);
        for l in 0..=5usize {
            for m in 1..=l as i64 {
                let yp = sh.eval_complex(l, m, d);
                let ym = sh.eval_complex(l, -m, d);
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let re = (ym + yp * sign) / std::f64::consts::SQRT_2;
                let im = (ym - yp * sign) * Complex64::new(0.0, 1.0) / std::f64::consts::SQRT_2;
                assert!((re.re - y[lm_index(l, m)]).abs() < 1e-14 && re.im.abs() < 1e-14);
                assert!((im.re - y[lm_index(l, -m)]).abs() < 1e-14 && im.im.abs() < 1e-14);
            }
        }
        // Condon–Shortley: Y_1^1 = -sqrt(3/8π) (x + i y)
        let y11 = sh.eval_complex(1, 1, d);
        let c = -(3.0 / (8.0 * PI)).sqrt();
        assert!((y11.re - c * d[0]).abs() < 1e-15 && (y11.im - c * d[1]).abs() < 1e-15);
    }

    #[test]
    fn half_table_matches_full() {
        let sh = SolidHarmonics::new(7);
        let v = [0.3, -1.2, 0.8];
        let mut full = vec![0.0; 64];
        let mut half = vec![0.0; 36];
        let mut leg = vec![0.0; 64];
        sh.eval_full(v, &mut full);
        sh.eval_cos(v, &mut leg, &mut half);
        for l in 0..=7usize {
            for m in 0..=l {
                let (a, b) = (half[lm_half_index(l, m)], full[lm_index(l, m as i64)]);
                assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_non_unit() {
        assert!(complex_sph_harm(1, 0, [0.0, 0.0, 1.1]).is_err());
        assert!(complex_sph_harm(1, 2, [0.0, 0.0, 1.0]).is_err());
    }
}
