//! Angular coupling: exact Wigner 3-j symbols, the complex-to-real harmonic
//! transform, channel enumeration, and the sparse real Gaunt routing table.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::basis::decode_q;
use crate::error::{domain, Error, Result};
use crate::harmonics::lm_index;

/// Drop threshold for real Gaunt weights after the unitary contraction.
pub const GAUNT_ZERO: f64 = 1e-15;

fn factorial(n: i64) -> BigInt {
    let mut f = BigInt::one();
    for i in 2..=n {
        f *= i;
    }
    f
}

/// `n/d` to the nearest double, for arbitrarily large integers.
fn ratio_to_f64(n: &BigInt, d: &BigInt) -> f64 {
    if n.is_zero() {
        return 0.0;
    }
    let shift = 96 - (n.bits() as i64 - d.bits() as i64);
    let q = if shift >= 0 { (n << shift as usize) / d } else { n / (d << (-shift) as usize) };
    q.to_f64().unwrap() * 2f64.powi(-shift as i32)
}

/// Wigner 3-j symbol with unchecked arguments (`l ≥ 0`); zero outside the
/// selection rules.
pub(crate) fn w3j(l1: i64, l2: i64, l3: i64, m1: i64, m2: i64, m3: i64) -> f64 {
    if m1 + m2 + m3 != 0 || m1.abs() > l1 || m2.abs() > l2 || m3.abs() > l3 {
        return 0.0;
    }
    if l3 < (l1 - l2).abs() || l3 > l1 + l2 {
        return 0.0;
    }
    if m1 == 0 && m2 == 0 && (l1 + l2 + l3) % 2 == 1 {
        return 0.0;
    }
    let kmin = 0.max(l2 - l3 - m1).max(l1 - l3 + m2);
    let kmax = (l1 + l2 - l3).min(l1 - m1).min(l2 + m2);
    let mut sum = BigRational::zero();
    for k in kmin..=kmax {
        let den = factorial(k)
            * factorial(l3 - l2 + k + m1)
            * factorial(l3 - l1 + k - m2)
            * factorial(l1 + l2 - l3 - k)
            * factorial(l1 - k - m1)
            * factorial(l2 - k + m2);
        let term = BigRational::new(if k % 2 == 0 { BigInt::one() } else { -BigInt::one() }, den);
        sum += term;
    }
    if sum.is_zero() {
        return 0.0;
    }
    let delta = BigRational::new(
        factorial(l1 + l2 - l3) * factorial(l1 - l2 + l3) * factorial(-l1 + l2 + l3),
        factorial(l1 + l2 + l3 + 1),
    );
    let prod = BigRational::from_integer(
        factorial(l1 + m1)
            * factorial(l1 - m1)
            * factorial(l2 + m2)
            * factorial(l2 - m2)
            * factorial(l3 + m3)
            * factorial(l3 - m3),
    );
    let negative = sum.is_negative() ^ ((l1 - l2 - m3).rem_euclid(2) == 1);
    let sq = delta * prod * &sum * &sum;
    let mag = ratio_to_f64(sq.numer(), sq.denom()).sqrt();
    if negative {
        -mag
    } else {
        mag
    }
}

/// Wigner 3-j symbol `(l1 l2 l3; m1 m2 m3)` from the Racah sum in exact
/// rational arithmetic. Returns 0 when the selection rules fail.
pub fn wigner3j(l1: i64, l2: i64, l3: i64, m1: i64, m2: i64, m3: i64) -> Result<f64> {
    if l1 < 0 || l2 < 0 || l3 < 0 {
        return domain(format!("negative angular momentum in ({l1}, {l2}, {l3})"));
    }
    Ok(w3j(l1, l2, l3, m1, m2, m3))
}

/// Complex Gaunt coefficient `∫ Y_{l1}^{m1} Y_{l2}^{m2} Y_{l3}^{m3} dΩ`.
pub fn complex_gaunt(l1: i64, m1: i64, l2: i64, m2: i64, l3: i64, m3: i64) -> f64 {
    if m1 + m2 + m3 != 0 {
        return 0.0;
    }
    let c000 = w3j(l1, l2, l3, 0, 0, 0);
    if c000 == 0.0 {
        return 0.0;
    }
    let pref = (((2 * l1 + 1) * (2 * l2 + 1) * (2 * l3 + 1)) as f64 / (4.0 * PI)).sqrt();
    pref * c000 * w3j(l1, l2, l3, m1, m2, m3)
}

/// The two nonzero entries `(m, U_{μ m})` of row `μ` of the transform.
fn u_row(mu: i64) -> [(i64, Complex64); 2] {
    let s = if mu.abs() % 2 == 0 { 1.0 } else { -1.0 };
    let h = FRAC_1_SQRT_2;
    match mu.signum() {
        0 => [(0, Complex64::new(1.0, 0.0)), (0, Complex64::new(0.0, 0.0))],
        1 => [(-mu, Complex64::new(h, 0.0)), (mu, Complex64::new(s * h, 0.0))],
        _ => [(mu, Complex64::new(0.0, h)), (-mu, Complex64::new(0.0, -s * h))],
    }
}

/// Unitary `U` with `Y^R_{lμ} = Σ_m U_{μm} Y_l^m`; rows and columns are
/// ordered `μ, m = −l..=l`.
pub fn complex_to_real_u(l: usize) -> DMatrix<Complex64> {
    let n = 2 * l + 1;
    let li = l as i64;
    let mut u = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for mu in -li..=li {
        for (m, val) in u_row(mu) {
            if val != Complex64::new(0.0, 0.0) {
                u[((mu + li) as usize, (m + li) as usize)] += val;
            }
        }
    }
    u
}

/// Complex `G_C(m1, m2, m3)` table for one channel, indexed by `(m1+l1, m2+l2)`.
struct ChannelGaunt {
    l: [i64; 3],
    table: Vec<f64>,
}

impl ChannelGaunt {
    fn new(l1: i64, l2: i64, l3: i64) -> Self {
        let (n1, n2) = ((2 * l1 + 1) as usize, (2 * l2 + 1) as usize);
        let mut table = vec![0.0; n1 * n2];
        let c000 = w3j(l1, l2, l3, 0, 0, 0);
        if c000 != 0.0 {
            let pref = (((2 * l1 + 1) * (2 * l2 + 1) * (2 * l3 + 1)) as f64 / (4.0 * PI)).sqrt();
            for m1 in -l1..=l1 {
                for m2 in -l2..=l2 {
                    let m3 = -m1 - m2;
                    if m3.abs() <= l3 {
                        table[(m1 + l1) as usize * n2 + (m2 + l2) as usize] =
                            pref * c000 * w3j(l1, l2, l3, m1, m2, m3);
                    }
                }
            }
        }
        ChannelGaunt { l: [l1, l2, l3], table }
    }

    fn complex(&self, m1: i64, m2: i64, m3: i64) -> f64 {
        if m1 + m2 + m3 != 0 {
            return 0.0;
        }
        let [l1, l2, _] = self.l;
        self.table[(m1 + l1) as usize * (2 * l2 + 1) as usize + (m2 + l2) as usize]
    }

    /// Real Gaunt through the unitary transform; returns `(re, im)`.
    fn real(&self, mu1: i64, mu2: i64, mu3: i64) -> (f64, f64) {
        let mut acc = Complex64::new(0.0, 0.0);
        for (m1, u1) in u_row(mu1) {
            if u1.norm_sqr() == 0.0 {
                continue;
            }
            for (m2, u2) in u_row(mu2) {
                if u2.norm_sqr() == 0.0 {
                    continue;
                }
                for (m3, u3) in u_row(mu3) {
                    if u3.norm_sqr() == 0.0 || m1 + m2 + m3 != 0 {
                        continue;
                    }
                    acc += u1 * u2 * u3 * self.complex(m1, m2, m3);
                }
            }
        }
        (acc.re, acc.im)
    }
}

/// Real Gaunt coefficient `∫ Y^R_{l1m1} Y^R_{l2m2} Y^R_{l3m3} dΩ`.
pub fn real_gaunt(l1: i64, m1: i64, l2: i64, m2: i64, l3: i64, m3: i64) -> f64 {
    if l1 < 0 || l2 < 0 || l3 < 0 || m1.abs() > l1 || m2.abs() > l2 || m3.abs() > l3 {
        return 0.0;
    }
    if !azimuthal_rule(m1, m2, m3) {
        return 0.0;
    }
    ChannelGaunt::new(l1, l2, l3).real(m1, m2, m3).0
}

/// Real-basis azimuthal coupling: `|m1| ∈ {|m2+m3|, |m2−m3|}`.
#[inline]
pub fn azimuthal_rule(m1: i64, m2: i64, m3: i64) -> bool {
    m1.abs() == (m2 + m3).abs() || m1.abs() == (m2 - m3).abs()
}

/// Whether `(l1, l2, l3)` is an admissible coupling channel.
#[inline]
pub fn channel_allowed(l1: usize, l2: usize, l3: usize) -> bool {
    let (a, b, c) = (l1 as i64, l2 as i64, l3 as i64);
    (b - c).abs() <= a && a <= b + c && (a + b + c) % 2 == 0
}

/// Lexicographically ordered admissible triplets `(l1, l2, l3)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelTable {
    pub l_max: usize,
    pub triplets: Vec<[usize; 3]>,
    lookup: Vec<i32>,
}

impl ChannelTable {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// 0-based channel index of `(l1, l2, l3)`.
    pub fn index(&self, l1: usize, l2: usize, l3: usize) -> Option<usize> {
        let n = self.l_max + 1;
        if l1 >= n || l2 >= n || l3 >= n {
            return None;
        }
        let t = self.lookup[(l1 * n + l2) * n + l3];
        (t >= 0).then_some(t as usize)
    }

    /// Rebuild from an explicit triplet list (e.g. when loading a cache).
    pub fn from_triplets(l_max: usize, triplets: Vec<[usize; 3]>) -> Result<Self> {
        let expected = enumerate_channels(l_max);
        if expected.triplets != triplets {
            return Err(Error::Format("channel table does not match its l_max".into()));
        }
        Ok(expected)
    }
}

/// Enumerate all channels with every `l_i ≤ l_max`.
pub fn enumerate_channels(l_max: usize) -> ChannelTable {
    let n = l_max + 1;
    let mut triplets = vec![];
    let mut lookup = vec![-1; n * n * n];
    for l1 in 0..n {
        for l2 in 0..n {
            for l3 in 0..n {
                if channel_allowed(l1, l2, l3) {
                    lookup[(l1 * n + l2) * n + l3] = triplets.len() as i32;
                    triplets.push([l1, l2, l3]);
                }
            }
        }
    }
    ChannelTable { l_max, triplets, lookup }
}

/// Rows sharing one `(τ, q1)` pair, as a half-open range into the row arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slice {
    pub tau: u32,
    pub q1: u32,
    pub start: u32,
    pub end: u32,
}

/// One routing instruction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GauntRow {
    pub q1: usize,
    pub q2: usize,
    pub q3: usize,
    pub tau: usize,
    pub g: f64,
}

/// Sparse real Gaunt table, sorted by `(τ, q1, q2, q3)`.
///
/// Rows are stored column-wise (three `u32` indices and one `f64` weight);
/// the channel of a row is recovered from the slice index.
#[derive(Clone, Debug, PartialEq)]
pub struct GauntCoo {
    pub l_max: usize,
    pub channels: ChannelTable,
    pub q1: Vec<u32>,
    pub q2: Vec<u32>,
    pub q3: Vec<u32>,
    pub weight: Vec<f64>,
    pub slices: Vec<Slice>,
}

impl GauntCoo {
    pub fn n_rows(&self) -> usize {
        self.weight.len()
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    /// Bytes of the row storage (`3·u32 + f64` per row).
    pub fn row_bytes(&self) -> usize {
        self.n_rows() * (3 * 4 + 8)
    }

    /// All rows in storage order.
    pub fn rows(&self) -> impl Iterator<Item = GauntRow> + '_ {
        self.slices.iter().flat_map(move |s| {
            (s.start as usize..s.end as usize).map(move |z| GauntRow {
                q1: self.q1[z] as usize,
                q2: self.q2[z] as usize,
                q3: self.q3[z] as usize,
                tau: s.tau as usize,
                g: self.weight[z],
            })
        })
    }

    /// Check sortedness, slice coverage and channel consistency.
    pub fn validate(&self) -> Result<()> {
        let n_q = (self.l_max + 1) * (self.l_max + 1);
        let mut expect_start = 0u32;
        let mut prev: Option<(u32, u32, u32, u32)> = None;
        for s in &self.slices {
            if s.start != expect_start || s.end <= s.start {
                return Err(Error::Contract("slice index does not tile the rows".into()));
            }
            expect_start = s.end;
            let tri = *self
                .channels
                .triplets
                .get(s.tau as usize)
                .ok_or_else(|| Error::Contract(format!("channel {} out of range", s.tau)))?;
            for z in s.start as usize..s.end as usize {
                let key = (s.tau, self.q1[z], self.q2[z], self.q3[z]);
                if self.q1[z] != s.q1 {
                    return Err(Error::Contract(format!("row {z} outside its slice")));
                }
                if prev.is_some_and(|p| p >= key) {
                    return Err(Error::Contract(format!("rows not sorted at {z}")));
                }
                prev = Some(key);
                let qs = [self.q1[z], self.q2[z], self.q3[z]];
                for (i, &q) in qs.iter().enumerate() {
                    if q as usize >= n_q || decode_q(q as usize).0 != tri[i] {
                        return Err(Error::Contract(format!("row {z} degree mismatch")));
                    }
                }
                if self.weight[z] == 0.0 {
                    return Err(Error::Contract(format!("row {z} has zero weight")));
                }
            }
        }
        if expect_start as usize != self.n_rows() {
            return Err(Error::Contract("slice index does not cover every row".into()));
        }
        Ok(())
    }
}

/// Build the sorted real Gaunt routing table for all channels up to `l_max`.
pub fn build_gaunt_coo(l_max: usize) -> GauntCoo {
    let channels = enumerate_channels(l_max);
    let per_channel: Vec<Vec<(u32, u32, u32, f64)>> = channels
        .triplets
        .par_iter()
        .map(|&[l1, l2, l3]| {
            let (a, b, c) = (l1 as i64, l2 as i64, l3 as i64);
            let cg = ChannelGaunt::new(a, b, c);
            let mut rows = vec![];
            for m1 in -a..=a {
                for m2 in -b..=b {
                    for m3 in -c..=c {
                        if !azimuthal_rule(m1, m2, m3) {
                            continue;
                        }
                        let (g, im) = cg.real(m1, m2, m3);
                        debug_assert!(im.abs() < 1e-14, "imaginary real-Gaunt residue {im}");
                        if g.abs() >= GAUNT_ZERO {
                            rows.push((
                                lm_index(l1, m1) as u32,
                                lm_index(l2, m2) as u32,
                                lm_index(l3, m3) as u32,
                                g,
                            ));
                        }
                    }
                }
            }
            rows
        })
        .collect();

    let total: usize = per_channel.iter().map(|r| r.len()).sum();
    let mut coo = GauntCoo {
        l_max,
        channels,
        q1: Vec::with_capacity(total),
        q2: Vec::with_capacity(total),
        q3: Vec::with_capacity(total),
        weight: Vec::with_capacity(total),
        slices: vec![],
    };
    for (tau, rows) in per_channel.into_iter().enumerate() {
        for (q1, q2, q3, g) in rows {
            let z = coo.weight.len() as u32;
            match coo.slices.last_mut() {
                Some(s) if s.tau == tau as u32 && s.q1 == q1 => s.end = z + 1,
                _ => coo.slices.push(Slice { tau: tau as u32, q1, start: z, end: z + 1 }),
            }
            coo.q1.push(q1);
            coo.q2.push(q2);
            coo.q3.push(q3);
            coo.weight.push(g);
        }
    }
    coo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::SolidHarmonics;
    use crate::quadrature::{gauss_legendre, trapezoid_periodic};

    #[test]
    fn three_j_examples() {
        assert_eq!(wigner3j(0, 0, 0, 0, 0, 0).unwrap(), 1.0);
        assert!((wigner3j(1, 1, 0, 0, 0, 0).unwrap() + 1.0 / 3f64.sqrt()).abs() < 4e-16);
        assert_eq!(wigner3j(2, 1, 2, 0, 0, 0).unwrap(), 0.0);
        assert!(wigner3j(-1, 1, 0, 0, 0, 0).is_err());
        assert_eq!(wigner3j(1, 1, 1, 2, 0, -2).unwrap(), 0.0);
    }

    #[test]
    fn three_j_known_values() {
        // (2 2 2; 0 0 0) = -sqrt(2/35), (1 1 2; 1 -1 0) = sqrt(1/30)
        assert!((w3j(2, 2, 2, 0, 0, 0) + (2.0f64 / 35.0).sqrt()).abs() < 1e-16);
        assert!((w3j(1, 1, 2, 1, -1, 0) - (1.0f64 / 30.0).sqrt()).abs() < 1e-16);
        // (j j 0; m -m 0) = (-1)^{j-m}/sqrt(2j+1)
        for j in 0..20i64 {
            for m in -j..=j {
                let e = if (j - m) % 2 == 0 { 1.0 } else { -1.0 } / ((2 * j + 1) as f64).sqrt();
                assert!((w3j(j, j, 0, m, -m, 0) - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn three_j_orthogonality_large_l() {
        // Σ_{m1,m2} (l1 l2 l3; m1 m2 m3)² = 1/(2 l3 + 1)
        for &(l1, l2, l3) in &[(20i64, 25, 30), (40, 45, 50), (10, 10, 20)] {
            let m3 = 3;
            let mut s = 0.0;
            for m1 in -l1..=l1 {
                s += w3j(l1, l2, l3, m1, -m1 - m3, m3).powi(2);
            }
            assert!((s * (2 * l3 + 1) as f64 - 1.0).abs() < 1e-13);
        }
    }

    fn sphere_integral(l_max: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
        let sh = SolidHarmonics::new(l_max);
        let gl = gauss_legendre(2 * l_max + 2).unwrap();
        let tr = trapezoid_periodic(4 * l_max + 4).unwrap();
        let mut y = vec![0.0; (l_max + 1) * (l_max + 1)];
        let mut s = 0.0;
        for (&z, &wz) in gl.nodes.iter().zip(&gl.weights) {
            let st = (1.0 - z * z).sqrt();
            for (&p, &wp) in tr.nodes.iter().zip(&tr.weights) {
                sh.eval_full([st * p.cos(), st * p.sin(), z], &mut y);
                s += wz * wp * f(&y);
            }
        }
        s
    }

    #[test]
    fn three_j_against_numeric_integral() {
        // ∫ Y_10 Y_10 Y_00 = sqrt(9/4π) (1 1 0;000)²
        let v = sphere_integral(1, |y| y[2] * y[2] * y[0]);
        let c = w3j(1, 1, 0, 0, 0, 0);
        assert!((v - (9.0 / (4.0 * PI)).sqrt() * c * c).abs() < 1e-15);
    }

    #[test]
    fn channel_examples() {
        assert_eq!(enumerate_channels(0).triplets, vec![[0, 0, 0]]);
        assert_eq!(
            enumerate_channels(1).triplets,
            vec![[0, 0, 0], [0, 1, 1], [1, 0, 1], [1, 1, 0]]
        );
        let t = enumerate_channels(4);
        assert_eq!(t.len(), 42);
        for (i, tri) in t.triplets.iter().enumerate() {
            assert_eq!(t.index(tri[0], tri[1], tri[2]), Some(i));
        }
        assert_eq!(t.index(1, 1, 1), None);
        assert_eq!(enumerate_channels(6).len(), 106);
        assert_eq!(enumerate_channels(8).len(), 215);
    }

    #[test]
    fn channel_brute_force() {
        for l_max in 0..7 {
            let t = enumerate_channels(l_max);
            let mut expect = vec![];
            for l1 in 0..=l_max {
                for l2 in 0..=l_max {
                    for l3 in 0..=l_max {
                        // nonzero (l1 l2 l3; 0 0 0) iff admissible
                        if w3j(l1 as i64, l2 as i64, l3 as i64, 0, 0, 0) != 0.0 {
                            expect.push([l1, l2, l3]);
                        }
                    }
                }
            }
            assert_eq!(t.triplets, expect);
        }
    }

    #[test]
    fn unitarity() {
        for l in 0..=16 {
            let u = complex_to_real_u(l);
            let r = &u * u.adjoint();
            let n = 2 * l + 1;
            for i in 0..n {
                for j in 0..n {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((r[(i, j)] - Complex64::new(e, 0.0)).norm() < 1e-15);
                }
            }
        }
        assert_eq!(complex_to_real_u(0)[(0, 0)], Complex64::new(1.0, 0.0));
        let u1 = complex_to_real_u(1);
        assert_eq!(u1[(1, 1)], Complex64::new(1.0, 0.0));
        assert_eq!(u1[(1, 0)], Complex64::new(0.0, 0.0));
        assert_eq!(u1[(1, 2)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn u_maps_complex_to_real_pointwise() {
        let l = 4usize;
        let sh = SolidHarmonics::new(l);
        let u = complex_to_real_u(l);
        let mut y = vec![0.0; 25];
        for d in [[0.48, 0.6, 0.64], [-0.8, 0.0, 0.6], [0.0, -0.28, 0.96]] {
            sh.eval_full(d, &mut y);
            for mu in -4i64..=4 {
                let mut acc = Complex64::new(0.0, 0.0);
                for m in -4i64..=4 {
                    acc += u[((mu + 4) as usize, (m + 4) as usize)] * sh.eval_complex(l, m, d);
                }
                assert!((acc.re - y[lm_index(l, mu)]).abs() < 1e-14);
                assert!(acc.im.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn real_gaunt_examples() {
        assert!((real_gaunt(0, 0, 0, 0, 0, 0) - 0.5 / PI.sqrt()).abs() < 1e-15);
        // q1 = 7 (1-based) is (2,0); q2 = q3 = 2 is (1,-1)
        let g = real_gaunt(2, 0, 1, -1, 1, -1);
        assert!((g - (-0.1262)).abs() < 5e-5, "{g}");
        assert_eq!(real_gaunt(1, 0, 1, 0, 1, 0), 0.0);
        // last printed row: q1 = 21, q2 = q3 = 25 (1-based)
        assert!((real_gaunt(4, 0, 4, 4, 4, 4) - 0.1065).abs() < 5e-5);
    }

    #[test]
    fn coo_counts() {
        let expect = [(0usize, 1usize, 1usize), (1, 4, 10), (2, 11, 83), (4, 42, 1158)];
        for (l, nt, ng) in expect {
            let coo = build_gaunt_coo(l);
            assert_eq!(coo.channels.len(), nt);
            assert_eq!(coo.n_rows(), ng);
            coo.validate().unwrap();
        }
        let coo = build_gaunt_coo(4);
        assert_eq!(coo.n_slices(), 230);
        let first = coo.rows().next().unwrap();
        assert_eq!((first.q1, first.q2, first.q3, first.tau), (0, 0, 0, 0));
        assert!((first.g - 0.28209).abs() < 1e-4);
        assert_eq!(build_gaunt_coo(6).n_rows(), 6460);
    }

    #[test]
    fn table_rows_27_to_29() {
        // The printed table lists rows with q2 = q3 = 2 (1-based) and q1 ∈ {1, 7, 9}.
        let coo = build_gaunt_coo(4);
        let mut found = vec![];
        for r in coo.rows() {
            if r.q2 == 1 && r.q3 == 1 {
                found.push((r.q1 + 1, r.g));
            }
        }
        let q: Vec<usize> = found.iter().map(|f| f.0).collect();
        assert_eq!(q, vec![1, 7, 9]);
        assert!((found[0].1 - 0.2821).abs() < 1e-4);
        assert!((found[1].1 - (-0.1262)).abs() < 1e-4);
        assert!((found[2].1 - (-0.2185)).abs() < 1e-4);
    }

    #[test]
    fn coo_matches_numeric_integration() {
        let l_max = 3;
        let coo = build_gaunt_coo(l_max);
        let nq = 16;
        // dense numeric table of all real Gaunt integrals
        let mut dense = vec![0.0; nq * nq * nq];
        let sh = SolidHarmonics::new(l_max);
        let gl = gauss_legendre(8).unwrap();
        let tr = trapezoid_periodic(16).unwrap();
        let mut y = vec![0.0; nq];
        for (&z, &wz) in gl.nodes.iter().zip(&gl.weights) {
            let st = (1.0 - z * z).sqrt();
            for (&p, &wp) in tr.nodes.iter().zip(&tr.weights) {
                sh.eval_full([st * p.cos(), st * p.sin(), z], &mut y);
                for a in 0..nq {
                    for b in 0..nq {
                        for c in 0..nq {
                            dense[(a * nq + b) * nq + c] += wz * wp * y[a] * y[b] * y[c];
                        }
                    }
                }
            }
        }
        let mut stored = vec![0.0; nq * nq * nq];
        for r in coo.rows() {
            let (l1, m1) = decode_q(r.q1);
            let (_, m2) = decode_q(r.q2);
            let (_, m3) = decode_q(r.q3);
            assert!(azimuthal_rule(m1, m2, m3));
            assert_eq!(coo.channels.triplets[r.tau][0], l1);
            stored[(r.q1 * nq + r.q2) * nq + r.q3] = r.g;
        }
        for i in 0..stored.len() {
            assert!((stored[i] - dense[i]).abs() < 1e-12, "{i}: {} {}", stored[i], dense[i]);
        }
    }

    #[test]
    fn unsorted_coo_is_rejected() {
        let mut coo = build_gaunt_coo(2);
        coo.q3.swap(1, 2);
        coo.q2.swap(1, 2);
        coo.weight.swap(1, 2);
        assert!(matches!(coo.validate(), Err(Error::Contract(_))));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn real_gaunt_symmetric(l1 in 0i64..6, l2 in 0i64..6, l3 in 0i64..6, a in 0i64..13, b in 0i64..13, c in 0i64..13) {
                let m1 = a % (2 * l1 + 1) - l1;
                let m2 = b % (2 * l2 + 1) - l2;
                let m3 = c % (2 * l3 + 1) - l3;
                let g = real_gaunt(l1, m1, l2, m2, l3, m3);
                let h = real_gaunt(l2, m2, l3, m3, l1, m1);
                let k = real_gaunt(l1, m1, l3, m3, l2, m2);
                prop_assert!((g - h).abs() < 1e-14 && (g - k).abs() < 1e-14);
                if g.abs() > GAUNT_ZERO {
                    prop_assert!(channel_allowed(l1 as usize, l2 as usize, l3 as usize));
                }
            }

            #[test]
            fn three_j_column_swap(l1 in 0i64..8, l2 in 0i64..8, l3 in 0i64..8, a in 0i64..17, b in 0i64..17) {
                let m1 = a % (2 * l1 + 1) - l1;
                let m2 = b % (2 * l2 + 1) - l2;
                let m3 = -m1 - m2;
                let s = if (l1 + l2 + l3) % 2 == 0 { 1.0 } else { -1.0 };
                let x = w3j(l1, l2, l3, m1, m2, m3);
                prop_assert!((w3j(l2, l1, l3, m2, m1, m3) - s * x).abs() < 1e-15);
                prop_assert!((w3j(l1, l2, l3, -m1, -m2, -m3) - s * x).abs() < 1e-15);
            }
        }
    }
}
