//! Direct laboratory-frame quadrature of the collision tensor at `K = L = 1`.
//!
//! Works in centre-of-mass variables `g = (v + w)/2`, `u = v − w`, where
//! `M(v)M(w) = (2π)^{-3} e^{-g²} e^{-u²/4}`. The `g` integral uses a tensor
//! Gauss–Hermite rule, `|u|` a generalized Gauss–Laguerre rule in `y = u²/4`
//! (weight `y^{(1+γ)/2} e^{-y}`, prefactor `2^{2+γ}`), and both directions
//! `û`, `σ` antipodally symmetric product rules. The basis functions are
//! written out as Cartesian polynomials. Every integrand is polynomial of
//! degree at most 9, so the rules below are exact up to rounding.

#![allow(dead_code)]

use std::f64::consts::PI;

use boltzfact::quadrature::{gauss_laguerre_gen, gauss_legendre, golub_welsch, Domain, Rule1D};

pub const N_ALPHA: usize = 8;

/// `ψ_α(v)` for `K = L = 1`, ordered `α = k·4 + q` with `q = (00, 1−1, 10, 11)`.
pub fn psi(v: [f64; 3]) -> [f64; N_ALPHA] {
    let [x, y, z] = v;
    let v2 = x * x + y * y + z * z;
    let r0 = (3.0 - v2) / 6f64.sqrt();
    let r1 = (5.0 - v2) / 10f64.sqrt();
    [1.0, y, z, x, r0, y * r1, z * r1, x * r1]
}

fn gauss_hermite(n: usize) -> Rule1D {
    let alpha = vec![0.0; n];
    let mut beta = vec![PI.sqrt(); n + 1];
    for (k, b) in beta.iter_mut().enumerate().skip(1) {
        *b = k as f64 / 2.0;
    }
    golub_welsch(&alpha, &beta, Domain::Finite { a: f64::NEG_INFINITY, b: f64::INFINITY })
}

/// Product rule on the unit sphere; symmetric under `d → −d`.
fn sphere_rule(n_theta: usize, n_phi: usize) -> Vec<([f64; 3], f64)> {
    assert!(n_phi % 2 == 0, "antipodal symmetry needs an even azimuthal count");
    let gl = gauss_legendre(n_theta).unwrap();
    let mut out = vec![];
    for (&ct, &wt) in gl.nodes.iter().zip(&gl.weights) {
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        for j in 0..n_phi {
            let ph = 2.0 * PI * j as f64 / n_phi as f64;
            out.push(([st * ph.cos(), st * ph.sin(), ct], wt * 2.0 * PI / n_phi as f64));
        }
    }
    out
}

/// `C[α1][α2][α3]` with kernel `B = u^γ / 4π`, flattened as `(α1·8 + α2)·8 + α3`.
pub fn brute_force_tensor(gamma: f64) -> Vec<f64> {
    let gh = gauss_hermite(7);
    let lag = gauss_laguerre_gen(7, 0.5 * (1.0 + gamma)).unwrap();
    let dirs = sphere_rule(6, 12);
    let sigmas = sphere_rule(4, 8);
    let sigma_mass: f64 = sigmas.iter().map(|s| s.1).sum();

    let mut c = vec![0.0; N_ALPHA.pow(3)];
    for (&gx, &wx) in gh.nodes.iter().zip(&gh.weights) {
        for (&gy, &wy) in gh.nodes.iter().zip(&gh.weights) {
            for (&gz, &wz) in gh.nodes.iter().zip(&gh.weights) {
                let g = [gx, gy, gz];
                let wg = wx * wy * wz;
                for (&yy, &w_y) in lag.nodes.iter().zip(&lag.weights) {
                    let speed = 2.0 * yy.sqrt();
                    for (d, wd) in &dirs {
                        let u = [speed * d[0], speed * d[1], speed * d[2]];
                        let v = [g[0] + 0.5 * u[0], g[1] + 0.5 * u[1], g[2] + 0.5 * u[2]];
                        let w = [g[0] - 0.5 * u[0], g[1] - 0.5 * u[1], g[2] - 0.5 * u[2]];
                        let pv = psi(v);
                        let pw = psi(w);
                        let mut test = [0.0; N_ALPHA];
                        for (s, ws) in &sigmas {
                            let vp = [g[0] + 0.5 * speed * s[0], g[1] + 0.5 * speed * s[1], g[2] + 0.5 * speed * s[2]];
                            for (t, p) in test.iter_mut().zip(psi(vp)) {
                                *t += ws * p;
                            }
                        }
                        for (t, p) in test.iter_mut().zip(pv) {
                            *t -= sigma_mass * p;
                        }
                        let weight = wg * w_y * wd;
                        for a1 in 0..N_ALPHA {
                            let t1 = weight * test[a1];
                            for a2 in 0..N_ALPHA {
                                let t12 = t1 * pv[a2];
                                let row = &mut c[(a1 * N_ALPHA + a2) * N_ALPHA..(a1 * N_ALPHA + a2 + 1) * N_ALPHA];
                                for (slot, p3) in row.iter_mut().zip(pw) {
                                    *slot += t12 * p3;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let scale = (2.0 * PI).powi(-3) * 2f64.powf(2.0 + gamma) / (4.0 * PI);
    c.iter_mut().for_each(|x| *x *= scale);
    c
}

/// Average of `C` over the exchange of the last two slots.
pub fn symmetrized(c: &[f64]) -> Vec<f64> {
    let n = N_ALPHA;
    let mut s = vec![0.0; c.len()];
    for a1 in 0..n {
        for a2 in 0..n {
            for a3 in 0..n {
                s[(a1 * n + a2) * n + a3] = 0.5 * (c[(a1 * n + a2) * n + a3] + c[(a1 * n + a3) * n + a2]);
            }
        }
    }
    s
}

/// Largest entrywise difference relative to the largest entry of `reference`.
pub fn rel_linf(a: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(reference).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
