//! Validation suites run against a cached operator.

use boltzfact::contraction::FactorizedOperator;
use boltzfact::harness::{
    default_dt, galilean_report, quadrature_convergence, run_bkw_benchmark, stress_relaxation_report,
    viscosity_report, wcu_spectrum_report, BKW_HORIZON, BKW_K0, GALILEAN_TABLE, VISCOSITY_LIMIT, VISCOSITY_TABLE,
    WCU_TABLE,
};
use boltzfact::{Error, Result};

use crate::output::{Check, Csv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Bkw,
    Wcu,
    Galilean,
    Viscosity,
    Stress,
    Quadconv,
}

pub struct SuiteOptions {
    pub dt: Option<f64>,
    pub pads: Vec<usize>,
    pub reference_pad: usize,
    pub amplitude: f64,
    pub t_end: f64,
}

pub struct SuiteOutput {
    pub checks: Vec<Check>,
    pub csv: Csv,
}

fn need_gamma(op: &FactorizedOperator, gamma: f64, suite: &str) -> Result<()> {
    let g = op.cfg().gamma;
    if g != gamma {
        return Err(Error::Config(format!(
            "suite {suite} needs a cache built with gamma = {gamma}, this cache has gamma = {g}"
        )));
    }
    Ok(())
}

fn sci(x: f64) -> String {
    format!("{x:.3e}")
}

pub fn run(suite: Suite, op: &FactorizedOperator, o: &SuiteOptions) -> Result<SuiteOutput> {
    let cfg = *op.cfg();
    let meta = |name: &str| {
        vec![
            ("suite", name.to_string()),
            ("k_max", cfg.k_max.to_string()),
            ("l_max", cfg.l_max.to_string()),
            ("gamma", cfg.gamma.to_string()),
        ]
    };
    match suite {
        Suite::Bkw => {
            need_gamma(op, 0.0, "bkw")?;
            let r = run_bkw_benchmark(op, BKW_K0, BKW_HORIZON, o.dt)?;
            let mut checks = vec![];
            for m in &r.modes {
                checks.push(Check::new(
                    format!("mode {} decay rate vs eigenvalue", m.k),
                    format!("{:.6} vs {:.6} (rel {})", m.fitted, m.eigen, sci(m.rel_err)),
                    "rel < 1e-4",
                    m.rel_err < 1e-4,
                ));
            }
            checks.push(Check::new("trajectory deviation", sci(r.max_deviation), "< 1e-6", r.max_deviation < 1e-6));
            checks.push(Check::new("invariant drift", sci(r.moment_drift), "== 0", r.moment_drift == 0.0));
            let mut m = meta("bkw");
            m.push(("rate_fit", r.rate_fit.to_string()));
            m.push(("dt", r.dt.to_string()));
            let mut cols = vec!["t".to_string()];
            cols.extend((0..r.amplitudes.len()).map(|k| format!("c{k}")));
            let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
            let mut csv = Csv::new(&m, &cols);
            for (i, t) in r.times.iter().enumerate() {
                csv.row(std::iter::once(*t).chain(r.amplitudes.iter().map(|a| a[i])));
            }
            Ok(SuiteOutput { checks, csv })
        }
        Suite::Wcu => {
            need_gamma(op, 0.0, "wcu")?;
            let r = wcu_spectrum_report(op)?;
            let mut checks = vec![];
            let invariants = r.ratios.iter().filter(|x| x.abs() < 1e-10).count();
            checks.push(Check::new("collision invariants", invariants.to_string(), "5", invariants == 5));
            for &(ratio, count) in WCU_TABLE.iter().skip(1) {
                let hit = r.groups.iter().find(|g| (g.ratio - ratio).abs() < 1e-8);
                let (value, pass) = match hit {
                    Some(g) => (format!("{:.10} x{} (modes {}-{})", g.ratio, g.count, g.first, g.last), g.count == count),
                    None => ("missing".to_string(), false),
                };
                checks.push(Check::new(format!("ratio {ratio}"), value, format!("x{count} within 1e-8"), pass));
            }
            let lim = 1e-10 * r.norm;
            checks.push(Check::new("max |Im λ|", sci(r.max_imag), format!("< {}", sci(lim)), r.max_imag < lim));
            let mut m = meta("wcu");
            m.push(("lambda6", r.lambda6.to_string()));
            let mut csv = Csv::new(&m, &["mode", "ratio"]);
            for (i, x) in r.ratios.iter().enumerate() {
                csv.row([(i + 1).to_string(), x.to_string()]);
            }
            Ok(SuiteOutput { checks, csv })
        }
        Suite::Galilean => {
            let mut checks = vec![];
            let mut csv = Csv::new(
                &meta("galilean"),
                &["u", "truncation_l2", "projection_residual", "conservation_err", "table"],
            );
            for &(u, table) in &GALILEAN_TABLE {
                let r = galilean_report(op, [u, 0.0, 0.0])?;
                checks.push(Check::new(
                    format!("u={u} conservation"),
                    sci(r.conservation_err),
                    "== 0",
                    r.conservation_err == 0.0,
                ));
                let ratio = r.truncation_l2 / table;
                checks.push(Check::new(
                    format!("u={u} truncation"),
                    format!("{} (table {})", sci(r.truncation_l2), sci(table)),
                    "within 3x",
                    (1.0 / 3.0..=3.0).contains(&ratio),
                ));
                csv.row([u, r.truncation_l2, r.projection_residual, r.conservation_err, table]);
            }
            Ok(SuiteOutput { checks, csv })
        }
        Suite::Viscosity => {
            need_gamma(op, 1.0, "viscosity")?;
            let r = viscosity_report(op)?;
            let mut checks = vec![];
            checks.push(Check::new("f_mu(0)", r.f_mu[0].to_string(), "== 1", r.f_mu[0] == 1.0));
            for (k, (&f, &t)) in r.f_mu.iter().zip(&VISCOSITY_TABLE).enumerate().skip(1) {
                checks.push(Check::new(format!("f_mu({k})"), format!("{f:.6}"), format!("{t} ± 1e-5"), (f - t).abs() <= 1e-5));
            }
            let monotone = r.f_mu.windows(2).all(|w| w[1] >= w[0]);
            checks.push(Check::new("monotone in K", monotone.to_string(), "true", monotone));
            let top = r.f_mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            checks.push(Check::new(
                "below infinite-order limit",
                format!("{top:.6}"),
                format!("<= {VISCOSITY_LIMIT} + 1e-5"),
                top <= VISCOSITY_LIMIT + 1e-5,
            ));
            checks.push(Check::new("spread across m", sci(r.m_spread), "< 1e-12", r.m_spread < 1e-12));
            let mut csv = Csv::new(&meta("viscosity"), &["k_trunc", "f_mu"]);
            for (k, f) in r.f_mu.iter().enumerate() {
                csv.row([k.to_string(), f.to_string()]);
            }
            Ok(SuiteOutput { checks, csv })
        }
        Suite::Stress => {
            need_gamma(op, 1.0, "stress")?;
            let dt = match o.dt {
                Some(d) => d,
                None => default_dt(op)?,
            };
            let r = stress_relaxation_report(op, o.amplitude, o.t_end, dt)?;
            let mut checks = vec![Check::new(
                "primary decay rate vs l=2 eigenvalue",
                format!("{:.6} vs {:.6} (rel {})", r.fitted_rate, r.slowest_l2_rate, sci(r.rel_err)),
                "rel < 1e-3",
                r.rel_err < 1e-3,
            )];
            let cascade = r
                .cascade_peak
                .iter()
                .zip(&r.cascade_final)
                .all(|(p, f)| *p > 0.0 && f.abs() < *p);
            checks.push(Check::new("cascade rises then decays", cascade.to_string(), "true", cascade));
            checks.push(Check::new("invariant drift", sci(r.moment_drift), "== 0", r.moment_drift == 0.0));
            let mut m = meta("stress");
            m.push(("amplitude", r.amplitude.to_string()));
            m.push(("chapman_enskog_rate", r.chapman_enskog_rate.to_string()));
            m.push(("dt", dt.to_string()));
            let mut cols = vec!["t".to_string()];
            cols.extend((0..r.amplitudes.len()).map(|k| format!("c{k}_2_0")));
            let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
            let mut csv = Csv::new(&m, &cols);
            for (i, t) in r.times.iter().enumerate() {
                csv.row(std::iter::once(*t).chain(r.amplitudes.iter().map(|a| a[i])));
            }
            Ok(SuiteOutput { checks, csv })
        }
        Suite::Quadconv => {
            let r = quadrature_convergence(&cfg, &o.pads, o.reference_pad)?;
            for (p, e) in r.pads.iter().zip(&r.errors) {
                println!("  pad {p:>3}: {}", sci(*e));
            }
            let mut checks = vec![Check::new("monotone decay", r.is_monotone().to_string(), "true", r.is_monotone())];
            let last = *r.errors.last().unwrap_or(&f64::NAN);
            checks.push(Check::new(
                format!("error at pad {}", r.pads.last().copied().unwrap_or(0)),
                sci(last),
                "< 1e-12",
                last < 1e-12,
            ));
            let mut m = meta("quadconv");
            m.push(("reference_pad", r.reference_pad.to_string()));
            let mut csv = Csv::new(&m, &["pad", "rel_linf_error"]);
            for (p, e) in r.pads.iter().zip(&r.errors) {
                csv.row([p.to_string(), e.to_string()]);
            }
            Ok(SuiteOutput { checks, csv })
        }
    }
}
