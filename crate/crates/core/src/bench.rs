//! Timing and storage benchmarks for the contraction strategies.
//!
//! Timings use random operators (seeded `R` values and the exact Gaunt table),
//! since the cost of a contraction does not depend on the values of `R`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::angular::{build_gaunt_coo, enumerate_channels};
use crate::basis::{CoefficientField, SpectralConfig};
use crate::contraction::{
    assemble_dense_with_limit, q_dense_counted, q_factorized, Counters, DenseOperator, FactorizedOperator, Strategy,
    DENSE_DOF_LIMIT,
};
use crate::kinematic::RTensor;
use crate::quadrature::GridSpec;
use crate::{Error, Result};

pub const BENCH_SEED: u64 = 0x5EED;
const GIB: f64 = (1u64 << 30) as f64;

/// Rows of the storage table at `k_max = 4`: `(l_max, DOFs, Gaunt nonzeros,
/// dense GiB, factorized GiB, ratio)`.
pub const MEMORY_TABLE: [(usize, usize, usize, f64, f64, f64); 5] = [
    (6, 245, 6460, 0.11, 0.22e-3, 2.00e-3),
    (8, 405, 23621, 0.50, 0.66e-3, 1.29e-3),
    (10, 605, 65913, 1.65, 1.62e-3, 9.59e-4),
    (12, 845, 154330, 4.50, 3.53e-3, 7.67e-4),
    (16, 1445, 601569, 22.50, 12.75e-3, 5.54e-4),
];

/// Exact storage counts of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageRow {
    pub k_max: usize,
    pub l_max: usize,
    pub n_dof: usize,
    pub n_channels: usize,
    pub n_rows: usize,
    pub n_slices: usize,
    pub r_elements: usize,
    pub logical_elements: usize,
    pub factorized_bytes: usize,
    pub dense_elements: u128,
    pub dense_bytes: u128,
    pub ratio: f64,
}

impl StorageRow {
    pub fn factorized_gib(&self) -> f64 {
        self.factorized_bytes as f64 / GIB
    }

    pub fn dense_gib(&self) -> f64 {
        self.dense_bytes as f64 / GIB
    }
}

/// Storage counts from the channel and Gaunt tables (no `R` assembly).
pub fn storage_row(k_max: usize, l_max: usize) -> StorageRow {
    let g = build_gaunt_coo(l_max);
    let n_k = k_max + 1;
    let n_dof = n_k * (l_max + 1) * (l_max + 1);
    let r_elements = n_k.pow(3) * g.channels.len();
    let factorized_bytes = 8 * r_elements + g.row_bytes();
    let dense_elements = (n_dof as u128).pow(3);
    StorageRow {
        k_max,
        l_max,
        n_dof,
        n_channels: g.channels.len(),
        n_rows: g.n_rows(),
        n_slices: g.n_slices(),
        r_elements,
        logical_elements: r_elements + 5 * g.n_rows(),
        factorized_bytes,
        dense_elements,
        dense_bytes: 8 * dense_elements,
        ratio: factorized_bytes as f64 / (8 * dense_elements) as f64,
    }
}

/// Operator with seeded uniform(−1, 1) `R` values and the exact Gaunt table.
pub fn random_operator(cfg: &SpectralConfig, seed: u64) -> Result<FactorizedOperator> {
    let channels = enumerate_channels(cfg.l_max);
    let mut r = RTensor::zeros(cfg.n_k(), channels, cfg.gamma, GridSpec::baseline(cfg.k_max, cfg.l_max));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for v in r.values.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    FactorizedOperator::new(*cfg, r, build_gaunt_coo(cfg.l_max))
}

/// Bytes the dense tensor may occupy: half the available memory, or 2 GiB
/// when that cannot be read.
pub fn dense_memory_budget() -> u128 {
    let avail = std::fs::read_to_string("/proc/meminfo").ok().and_then(|s| {
        s.lines()
            .find(|l| l.starts_with("MemAvailable:"))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|kb| kb.parse::<u128>().ok())
            .map(|kb| kb * 1024)
    });
    avail.map_or(2 << 30, |b| b / 2)
}

/// Why the dense baseline cannot run, if it cannot.
pub fn dense_guard(cfg: &SpectralConfig, budget: u128) -> Option<String> {
    let n = cfg.n_dof();
    let bytes = 8 * (n as u128).pow(3);
    if n > DENSE_DOF_LIMIT {
        Some(format!("{n} DOFs exceed the dense limit of {DENSE_DOF_LIMIT}"))
    } else if bytes > budget {
        Some(format!(
            "dense tensor needs {:.2} GiB, budget is {:.2} GiB",
            bytes as f64 / GIB,
            budget as f64 / GIB
        ))
    } else {
        None
    }
}

/// Sorted per-call times of `repeats` samples; each sample averages enough
/// calls to last at least `min_sample`.
pub fn sample_times<F: FnMut()>(mut f: F, repeats: usize, min_sample: Duration) -> Vec<f64> {
    let repeats = repeats.max(1);
    let t0 = Instant::now();
    f();
    let once = t0.elapsed().max(Duration::from_nanos(1));
    let calls = (min_sample.as_secs_f64() / once.as_secs_f64()).ceil().max(1.0) as usize;
    let mut samples: Vec<f64> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..calls {
                f();
            }
            t.elapsed().as_secs_f64() / calls as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples
}

/// Median of sorted samples.
pub fn median(sorted: &[f64]) -> f64 {
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

/// Median per-call time, see [`sample_times`].
pub fn median_time<F: FnMut()>(f: F, repeats: usize, min_sample: Duration) -> f64 {
    median(&sample_times(f, repeats, min_sample))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrategyTiming {
    pub strategy: Strategy,
    pub median_s: f64,
    /// Fastest sample; least affected by other load on the machine.
    pub min_s: f64,
    pub counters: Counters,
    pub speedup_vs_dense: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub k_max: usize,
    pub l_max: usize,
    pub n_dof: usize,
    pub timings: Vec<StrategyTiming>,
    pub dense_skipped: Option<String>,
    /// Largest pairwise relative difference of `Q` across the strategies run.
    pub max_rel_diff: f64,
}

impl BenchReport {
    pub fn time_of(&self, s: Strategy) -> Option<f64> {
        self.timings.iter().find(|t| t.strategy == s).map(|t| t.median_s)
    }

    pub fn min_time_of(&self, s: Strategy) -> Option<f64> {
        self.timings.iter().find(|t| t.strategy == s).map(|t| t.min_s)
    }
}

pub struct BenchOptions {
    pub repeats: usize,
    pub min_sample: Duration,
    pub seed: u64,
    pub dense_budget: u128,
    /// Largest relative disagreement tolerated by the correctness gate.
    pub gate_tol: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repeats: 5,
            min_sample: Duration::from_millis(50),
            seed: BENCH_SEED,
            dense_budget: dense_memory_budget(),
            gate_tol: 1e-12,
        }
    }
}

fn eval(op: &FactorizedOperator, dense: Option<&DenseOperator>, s: Strategy, c: &CoefficientField, ctr: &mut Counters) -> Result<CoefficientField> {
    match s {
        Strategy::Dense => q_dense_counted(dense.expect("dense operator is assembled when requested"), c, ctr),
        _ => q_factorized(op, s, c, ctr),
    }
}

fn rel_diff(a: &CoefficientField, b: &CoefficientField) -> f64 {
    let scale = a.max_abs().max(b.max_abs()).max(f64::MIN_POSITIVE);
    a.values.iter().zip(&b.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Time the requested strategies on one seeded random field.
///
/// All strategies are checked against each other before any timing; the dense
/// baseline is dropped (with the reason recorded) when it does not fit.
pub fn bench_operator(op: &FactorizedOperator, strategies: &[Strategy], opts: &BenchOptions) -> Result<BenchReport> {
    let cfg = *op.cfg();
    let mut strategies: Vec<Strategy> = strategies.to_vec();
    strategies.dedup();
    let mut dense_skipped = None;
    let dense = if strategies.contains(&Strategy::Dense) {
        match dense_guard(&cfg, opts.dense_budget) {
            Some(why) => {
                strategies.retain(|s| *s != Strategy::Dense);
                dense_skipped = Some(why);
                None
            }
            None => Some(assemble_dense_with_limit(op, DENSE_DOF_LIMIT)?),
        }
    } else {
        None
    };
    let c = CoefficientField::random(&cfg, opts.seed);

    let mut outputs = vec![];
    let mut counters = vec![];
    for &s in &strategies {
        let mut ctr = Counters::default();
        outputs.push(eval(op, dense.as_ref(), s, &c, &mut ctr)?);
        counters.push(ctr);
    }
    let mut max_rel_diff = 0.0f64;
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            max_rel_diff = max_rel_diff.max(rel_diff(&outputs[i], &outputs[j]));
        }
    }
    if max_rel_diff > opts.gate_tol {
        return Err(Error::Contract(format!(
            "strategies disagree by {max_rel_diff:.3e} (tolerance {:.1e})",
            opts.gate_tol
        )));
    }

    let mut timings = vec![];
    for (&s, ctr) in strategies.iter().zip(counters) {
        let samples = sample_times(
            || {
                let mut scratch = Counters::default();
                std::hint::black_box(eval(op, dense.as_ref(), s, &c, &mut scratch).unwrap());
            },
            opts.repeats,
            opts.min_sample,
        );
        timings.push(StrategyTiming {
            strategy: s,
            median_s: median(&samples),
            min_s: samples[0],
            counters: ctr,
            speedup_vs_dense: None,
        });
    }
    if let Some(td) = timings.iter().find(|t| t.strategy == Strategy::Dense).map(|t| t.median_s) {
        for t in &mut timings {
            t.speedup_vs_dense = Some(td / t.median_s);
        }
    }
    Ok(BenchReport { k_max: cfg.k_max, l_max: cfg.l_max, n_dof: cfg.n_dof(), timings, dense_skipped, max_rel_diff })
}

/// Benchmark random operators over a range of angular degrees.
pub fn l_sweep(k_max: usize, ls: &[usize], strategies: &[Strategy], opts: &BenchOptions) -> Result<Vec<BenchReport>> {
    ls.iter()
        .map(|&l| {
            let cfg = SpectralConfig::new(k_max, l, 0.0)?;
            let op = random_operator(&cfg, opts.seed ^ l as u64)?;
            bench_operator(&op, strategies, opts)
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Fit("slope needs at least two paired samples".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Fit("log-log fit needs positive finite samples".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// Slope of a strategy's median time against the angular size `l_max + 1`
/// (so that `n_dof³` scales with slope exactly 6), over the reports that ran it.
pub fn sweep_slope(reports: &[BenchReport], s: Strategy) -> Result<f64> {
    sweep_slope_with(reports, s, |l| (l + 1) as f64)
}

/// As [`sweep_slope`] with a caller-chosen abscissa.
pub fn sweep_slope_with(reports: &[BenchReport], s: Strategy, x_of: impl Fn(usize) -> f64) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = reports
        .iter()
        .filter_map(|r| r.time_of(s).map(|t| (x_of(r.l_max), t)))
        .unzip();
    loglog_slope(&x, &y)
}
