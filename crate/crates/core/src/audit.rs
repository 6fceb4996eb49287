//! Monte Carlo audits of the sufficient conditions on the coefficients
//! ((A1)-(A3), (A5), (C1), (C2), (C4)-(C7)) and on solved pools ((A4), (C3)).

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equation::{spectral_summary_of, EquationSystem, Interval, RawDraw, SpectralSummary};
use crate::equation::singular_pair;
use crate::error::{Error, Result};
use crate::rng::{minor, Purpose, SeedTree, CHUNK};
use crate::solver::{random_direction, SamplePool};
use crate::stats;

/// One-sided 99% normal quantile.
const Z99: f64 = 2.326_347_874_040_841;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub verdict: Verdict,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    /// Sample size behind the verdict.
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ConditionEntry {
    fn new(verdict: Verdict, estimate: Option<f64>, std_error: Option<f64>, n: usize) -> Self {
        ConditionEntry { verdict, estimate, std_error, n, note: None }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailShape {
    /// Positive mass at zero.
    Atom,
    /// The lower tail shows no spread: the law is bounded away from zero on the sample.
    BoundedAway,
    PowerLaw,
}

/// Fit of `P(Y <= x) ~ lambda x^nu` on the lower decile of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub shape: TailShape,
    pub lambda_hat: f64,
    pub nu_hat: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares fit of `ln F_n(x)` against `ln x` over the lower decile of
/// `sorted` (ascending). The lowest ranks are skipped because their ECDF
/// values are too noisy to carry the slope.
pub fn fit_lower_tail(sorted: &[f64]) -> TailFit {
    let n = sorted.len();
    let zeros = sorted.iter().take_while(|&&x| x <= 0.0).count();
    if zeros > 0 {
        return TailFit { shape: TailShape::Atom, lambda_hat: zeros as f64 / n as f64, nu_hat: 0.0, r_squared: 1.0, points: zeros };
    }
    let top = (n / 10).max(2.min(n));
    let lo = sorted[0];
    let hi = sorted[top - 1];
    if hi <= lo * (1.0 + 1e-9) {
        return TailFit { shape: TailShape::BoundedAway, lambda_hat: 1.0 / lo, nu_hat: 1.0, r_squared: 1.0, points: top };
    }
    let skip = (top / 100).clamp(0, 10);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in skip..top {
        // keep the largest rank of each tied value
        if i + 1 < n && sorted[i + 1] == sorted[i] {
            continue;
        }
        xs.push(sorted[i].ln());
        ys.push(((i + 1) as f64 / n as f64).ln());
    }
    match stats::linear_fit(&xs, &ys) {
        Some(fit) => TailFit {
            shape: TailShape::PowerLaw,
            lambda_hat: fit.intercept.exp(),
            nu_hat: fit.slope,
            r_squared: fit.r_squared,
            points: fit.n,
        },
        None => TailFit { shape: TailShape::BoundedAway, lambda_hat: 1.0 / lo, nu_hat: 1.0, r_squared: 1.0, points: xs.len() },
    }
}

/// Estimates behind (C4)-(C6) at one exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimates {
    pub eta: f64,
    /// Mean of `(alpha_sec)^(-eta)` over draws with `alpha_sec > 0`, top 0.1% winsorized.
    pub c4_hat: Option<f64>,
    /// The same mean without winsorizing.
    pub c4_raw: Option<f64>,
    pub c4_std_error: Option<f64>,
    /// The top 1% of the summands carry more than half of the sum.
    pub c4_divergent: bool,
    /// `None` when `alpha_max` is bounded away from zero on the sample.
    pub c5_fit: Option<TailFit>,
    pub c5_pass: bool,
    pub c6_hat: f64,
    pub c6_std_error: f64,
}

impl EtaEstimates {
    pub fn c4_pass(&self) -> Option<bool> {
        self.c4_hat.map(|v| v.is_finite() && !self.c4_divergent)
    }

    /// (C4) (vacuous without positive `alpha_sec`), (C5) and (C6) all hold.
    pub fn feasible(&self) -> bool {
        self.c4_pass().unwrap_or(true) && self.c5_pass && self.c6_hat < 1.0
    }
}

/// Sums in ascending order so the result does not depend on draw order.
fn ordered_mean_se(values: &mut [f64]) -> (f64, f64) {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// (C4)-(C6) estimates from spectral summaries; (C5) treats `alpha_max`
/// as bounded away from zero when its sample minimum is at least `1e-3`.
pub fn c4_c6_estimates(draws: &[SpectralSummary], eta: f64) -> Result<EtaEstimates> {
    c4_c6_with_floor(draws, eta, 1e-3)
}

fn c4_c6_with_floor(draws: &[SpectralSummary], eta: f64, a_floor: f64) -> Result<EtaEstimates> {
    if !(eta > 0.0) {
        return Err(Error::domain(format!("eta must be positive, got {eta}")));
    }
    if draws.is_empty() {
        return Err(Error::domain("no draws"));
    }
    let mut c4_terms: Vec<f64> = draws.iter().filter(|s| s.alpha_sec > 0.0).map(|s| s.alpha_sec.powf(-eta)).collect();
    let (mut c4_hat, mut c4_raw, mut c4_se, mut divergent) = (None, None, None, false);
    if !c4_terms.is_empty() {
        let (raw, se) = ordered_mean_se(&mut c4_terms);
        let k = c4_terms.len();
        let total: f64 = c4_terms.iter().sum();
        let top1 = (k / 100).max(1);
        let top_share: f64 = c4_terms[k - top1..].iter().sum::<f64>() / total;
        divergent = !(total.is_finite()) || (k >= 100 && top_share > 0.5);
        let cap_index = k - 1 - (k / 1000);
        let cap = c4_terms[cap_index];
        let winsorized = c4_terms.iter().map(|&x| x.min(cap)).sum::<f64>() / k as f64;
        c4_hat = Some(winsorized);
        c4_raw = Some(raw);
        c4_se = Some(se);
    }
    let mut maxes: Vec<f64> = draws.iter().map(|s| s.alpha_max).collect();
    maxes.sort_unstable_by(f64::total_cmp);
    let (c5_fit, c5_pass) = if maxes[0] >= a_floor {
        // P(alpha_max <= x) = 0 below the floor, so O(x^eta) for every eta
        (None, true)
    } else {
        let fit = fit_lower_tail(&maxes);
        let ok = match fit.shape {
            TailShape::Atom => false,
            TailShape::BoundedAway => true,
            TailShape::PowerLaw => fit.nu_hat >= eta && fit.r_squared >= 0.9,
        };
        (Some(fit), ok)
    };
    let mut c6_terms: Vec<f64> =
        draws.iter().map(|s| if s.alpha_sec == 0.0 { s.alpha_max.powf(-eta) } else { 0.0 }).collect();
    let (c6_hat, c6_se) = ordered_mean_se(&mut c6_terms);
    Ok(EtaEstimates { eta, c4_hat, c4_raw, c4_std_error: c4_se, c4_divergent: divergent, c5_fit, c5_pass, c6_hat, c6_std_error: c6_se })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub n_draws: usize,
    /// (A1) passes when the empirical minimum of `alpha_max` is at least this.
    pub a_floor: f64,
    /// Exponent for the reported (C4)-(C6) entries; by default the largest
    /// feasible grid value (or the smallest grid value if none is feasible).
    pub eta: Option<f64>,
    /// Exponents scanned for `eta_feasible`.
    pub eta_grid: Vec<f64>,
    /// `(beta, x)` at which the (C7) product moment is estimated.
    pub c7_point: (f64, f64),
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            n_draws: 100_000,
            a_floor: 1e-3,
            eta: None,
            eta_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            c7_point: (1.0, 10.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub system: String,
    pub equation: usize,
    pub entries: BTreeMap<String, ConditionEntry>,
    pub a_hat: f64,
    /// One-sided 99% tolerance: with that confidence the essential infimum
    /// lies in `[a_hat - ..., a_hat]` up to the distance to the quantile
    /// `ln(100)/n_draws` of `alpha_max`.
    pub a_quantile_level: f64,
    pub lambda_hat: Option<f64>,
    pub nu_hat: Option<f64>,
    pub a2_fit: TailFit,
    pub eta_scan: Vec<EtaEstimates>,
    pub eta_feasible: Option<f64>,
    pub n_draws: usize,
}

impl ConditionReport {
    pub fn verdict(&self, key: &str) -> Option<Verdict> {
        self.entries.get(key).map(|e| e.verdict)
    }

    /// No entry failed.
    pub fn all_pass_or_inconclusive(&self) -> bool {
        self.entries.values().all(|e| e.verdict != Verdict::Fail)
    }
}

/// Per-draw statistics collected by the audit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrawStats {
    pub summary: SpectralSummary,
    /// `N_r((0, 1))`
    pub n_open: usize,
    pub max_opnorm: f64,
    /// `prod_j min((alpha_j x)^(-beta), 1)` at the configured (C7) point.
    pub c7_product: f64,
}

/// `n_draws` coefficient draws of equation `r`.
pub fn collect_draw_stats(
    system: &EquationSystem,
    r: usize,
    n_draws: usize,
    c7_point: (f64, f64),
    seeds: &SeedTree,
) -> Result<Vec<DrawStats>> {
    if r >= system.m() {
        return Err(Error::domain(format!("equation index {r} out of range (m = {})", system.m())));
    }
    let d = system.d();
    let (beta, x) = c7_point;
    let chunks = n_draws.div_ceil(CHUNK);
    let out: Vec<DrawStats> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = seeds.stream(Purpose::Audit, r as u64, minor(r, c));
            let mut raw = RawDraw::new(d);
            let count = CHUNK.min(n_draws - c * CHUNK);
            let mut alphas = Vec::new();
            let mut opnorms = Vec::new();
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                system.sample_raw(r, &mut rng, &mut raw);
                alphas.clear();
                opnorms.clear();
                for j in 0..raw.terms() {
                    let (lo, hi) = singular_pair(d, raw.matrix(j));
                    alphas.push(lo);
                    opnorms.push(hi);
                }
                let summary = spectral_summary_of(&alphas, &opnorms, Interval::open_closed(0.0, 1.0));
                let n_open = alphas.iter().zip(&opnorms).filter(|(a, o)| **a > 0.0 && **o < 1.0).count();
                let max_opnorm = opnorms.iter().cloned().fold(0.0, f64::max);
                let c7_product = alphas.iter().map(|a| (a * x).powf(-beta).min(1.0)).product();
                v.push(DrawStats { summary, n_open, max_opnorm, c7_product });
            }
            v
        })
        .collect();
    Ok(out)
}

/// Audits the coefficient conditions of equation `r` from fresh draws.
pub fn audit_coefficients(
    system: &EquationSystem,
    r: usize,
    config: &AuditConfig,
    seeds: &SeedTree,
) -> Result<ConditionReport> {
    if config.n_draws < 1000 {
        return Err(Error::domain(format!("n_draws must be at least 1000, got {}", config.n_draws)));
    }
    let draws = collect_draw_stats(system, r, config.n_draws, config.c7_point, seeds)?;
    let mut report = audit_draws(&draws, config)?;
    report.system = system.name().to_string();
    report.equation = r;
    Ok(report)
}

/// The coefficient audit on given draws. The result does not depend on the
/// order of `draws`.
pub fn audit_draws(draws: &[DrawStats], config: &AuditConfig) -> Result<ConditionReport> {
    let n = draws.len();
    if n == 0 {
        return Err(Error::domain("no draws"));
    }
    let mut entries = BTreeMap::new();

    // (A1) and (C1)
    let mut maxes: Vec<f64> = draws.iter().map(|s| s.summary.alpha_max).collect();
    maxes.sort_unstable_by(f64::total_cmp);
    let a_hat = maxes[0];
    let a_level = (100f64).ln() / n as f64;
    let a1 = if a_hat >= config.a_floor { Verdict::Pass } else { Verdict::Fail };
    entries.insert(
        "A1".into(),
        ConditionEntry::new(a1, Some(a_hat), Some(stats::quantile_sorted(&maxes, a_level) - a_hat), n).note(format!(
            "empirical minimum; with 99% confidence P(alpha_max < a_hat) <= {a_level:.3e}; floor {}",
            config.a_floor
        )),
    );
    let c1 = if a_hat > 0.0 { Verdict::Pass } else { Verdict::Fail };
    let zero_max = maxes.iter().filter(|&&x| x <= 0.0).count();
    entries.insert("C1".into(), ConditionEntry::new(c1, Some(1.0 - zero_max as f64 / n as f64), None, n));

    // (A2)
    let mut secs: Vec<f64> = draws.iter().map(|s| s.summary.alpha_sec).collect();
    secs.sort_unstable_by(f64::total_cmp);
    let a2_fit = fit_lower_tail(&secs);
    let (a2, lambda_hat, nu_hat) = match a2_fit.shape {
        TailShape::Atom => (Verdict::Fail, None, None),
        TailShape::BoundedAway => (Verdict::Pass, Some(a2_fit.lambda_hat), Some(a2_fit.nu_hat)),
        TailShape::PowerLaw => {
            let ok = a2_fit.r_squared >= 0.95 && a2_fit.nu_hat > 0.0;
            (if ok { Verdict::Pass } else { Verdict::Fail }, Some(a2_fit.lambda_hat), Some(a2_fit.nu_hat))
        }
    };
    let a2_note = match a2_fit.shape {
        TailShape::Atom => format!("alpha_sec = 0 on {} of {n} draws", a2_fit.points),
        TailShape::BoundedAway => "alpha_sec bounded away from 0 on the sample".to_string(),
        TailShape::PowerLaw => format!("lower-decile log-log fit, R^2 = {:.4}, {} points", a2_fit.r_squared, a2_fit.points),
    };
    entries.insert("A2".into(), ConditionEntry::new(a2, nu_hat, None, n).note(a2_note));

    // (A3)
    let worst = draws.iter().map(|s| s.max_opnorm).fold(0.0, f64::max);
    let a3 = if worst <= 1.0 + 1e-12 { Verdict::Pass } else { Verdict::Fail };
    entries.insert("A3".into(), ConditionEntry::new(a3, Some(worst), None, n).note("largest observed operator norm"));

    // (A5)
    let hits = draws.iter().filter(|s| s.n_open >= 1).count();
    let (wilson_lo, _) = stats::wilson_interval(hits, n, 2.575_829_303_548_901);
    let freq = hits as f64 / n as f64;
    let a5 = if wilson_lo > 0.0 { Verdict::Pass } else { Verdict::Fail };
    entries.insert(
        "A5".into(),
        ConditionEntry::new(a5, Some(freq), Some((freq * (1.0 - freq) / n as f64).sqrt()), n)
            .note(format!("P(N((0,1)) >= 1); Wilson 99% lower bound {wilson_lo:.4e}")),
    );

    // (C2)
    let mut counts: Vec<f64> = draws.iter().map(|s| s.summary.n_interval as f64).collect();
    let (c2_mean, c2_se) = ordered_mean_se(&mut counts);
    let c2 = if c2_mean - Z99 * c2_se > 1.0 { Verdict::Pass } else { Verdict::Fail };
    entries.insert("C2".into(), ConditionEntry::new(c2, Some(c2_mean), Some(c2_se), n).note("E[N((0,1])], one-sided 99% lower bound"));

    // (C4)-(C6)
    let summaries: Vec<SpectralSummary> = draws.iter().map(|s| s.summary).collect();
    let mut eta_scan = Vec::new();
    for &eta in &config.eta_grid {
        eta_scan.push(c4_c6_with_floor(&summaries, eta, config.a_floor)?);
    }
    let eta_feasible = eta_scan.iter().filter(|e| e.feasible()).map(|e| e.eta).fold(None, |acc: Option<f64>, x| {
        Some(acc.map_or(x, |a| a.max(x)))
    });
    let eta = match (config.eta, eta_feasible) {
        (Some(e), _) => e,
        (None, Some(e)) => e,
        (None, None) => config.eta_grid.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0),
    };
    let at = c4_c6_with_floor(&summaries, eta, config.a_floor)?;
    let c4 = match at.c4_pass() {
        None => ConditionEntry::new(Verdict::Inconclusive, None, None, 0).note("no draw with alpha_sec > 0"),
        Some(ok) => {
            let k = summaries.iter().filter(|s| s.alpha_sec > 0.0).count();
            let e = ConditionEntry::new(if ok { Verdict::Pass } else { Verdict::Fail }, at.c4_hat, at.c4_std_error, k);
            e.note(format!("eta = {eta}; winsorized mean, raw {:.6}{}", at.c4_raw.unwrap(), if at.c4_divergent { "; divergence flagged" } else { "" }))
        }
    };
    entries.insert("C4".into(), c4);
    let c5_est = at.c5_fit.map(|f| f.nu_hat);
    let c5_note = match at.c5_fit {
        None => format!("eta = {eta}; alpha_max bounded away from 0"),
        Some(f) => format!("eta = {eta}; tail exponent fit nu = {:.4}, R^2 = {:.4}", f.nu_hat, f.r_squared),
    };
    entries.insert(
        "C5".into(),
        ConditionEntry::new(if at.c5_pass { Verdict::Pass } else { Verdict::Fail }, c5_est, None, n).note(c5_note),
    );
    entries.insert(
        "C6".into(),
        ConditionEntry::new(if at.c6_hat < 1.0 { Verdict::Pass } else { Verdict::Fail }, Some(at.c6_hat), Some(at.c6_std_error), n)
            .note(format!("eta = {eta}")),
    );

    // (C7): estimate only
    let mut prods: Vec<f64> = draws.iter().map(|s| s.c7_product).collect();
    let (c7_mean, c7_se) = ordered_mean_se(&mut prods);
    let (beta, x) = config.c7_point;
    let mut c7_note = format!("E[prod_j min((alpha_j x)^-beta, 1)] at beta = {beta}, x = {x}");
    if let Some(nu) = nu_hat {
        let chi = beta + beta.min(nu) / 2.0;
        c7_note.push_str(&format!("; implied constant x^chi(beta) * estimate = {:.4e}", x.powf(chi) * c7_mean));
    }
    entries.insert("C7".into(), ConditionEntry::new(Verdict::Inconclusive, Some(c7_mean), Some(c7_se), n).note(c7_note));

    Ok(ConditionReport {
        system: String::new(),
        equation: 0,
        entries,
        a_hat,
        a_quantile_level: a_level,
        lambda_hat,
        nu_hat,
        a2_fit,
        eta_scan,
        eta_feasible,
        n_draws: n,
    })
}

/// Iterates of `chi(beta) = beta + min(beta, nu) / 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiTrace {
    pub nu: f64,
    pub eta0: f64,
    /// `eta0, chi(eta0), chi(chi(eta0)), ...` up to the first value reaching the target.
    pub values: Vec<f64>,
}

impl ChiTrace {
    /// Steps until the trace reaches `beta`, if it does within the trace.
    pub fn steps_to(&self, beta: f64) -> Option<usize> {
        self.values.iter().position(|&v| v >= beta)
    }
}

pub fn chi(beta: f64, nu: f64) -> f64 {
    beta + beta.min(nu) / 2.0
}

pub fn chi_bootstrap(eta0: f64, nu: f64, beta_target: f64) -> Result<ChiTrace> {
    if !(eta0 > 0.0 && nu > 0.0 && beta_target > 0.0) || !(eta0.is_finite() && nu.is_finite() && beta_target.is_finite()) {
        return Err(Error::domain("chi_bootstrap needs finite positive eta0, nu and target"));
    }
    let mut values = vec![eta0];
    let mut b = eta0;
    while b < beta_target {
        b = chi(b, nu);
        values.push(b);
    }
    Ok(ChiTrace { nu, eta0, values })
}

/// General-position diagnostic of a pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportAudit {
    pub verdict: Verdict,
    /// `d >= 2`: `sqrt(lambda_min / lambda_max)` of the sample covariance,
    /// i.e. the inverse condition number of the centered data.
    /// `d = 1`: sample variance over `mean^2 + variance`.
    pub normalized_min_eigenvalue: f64,
    /// Covariance eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub n: usize,
}

pub const SUPPORT_THRESHOLD: f64 = 1e-6;

pub fn audit_support(pool: &SamplePool) -> SupportAudit {
    let d = pool.d();
    let n = pool.len();
    let (mean, cov) = stats::mean_and_covariance(pool.values(), d);
    let eig = if n >= 2 { stats::symmetric_eigenvalues(&cov, d) } else { vec![0.0; d] };
    if n < d + 1 {
        return SupportAudit { verdict: Verdict::Inconclusive, normalized_min_eigenvalue: f64::NAN, eigenvalues: eig, n };
    }
    let value = if d == 1 {
        let scale2 = mean[0] * mean[0] + cov[0];
        if scale2 > 0.0 {
            cov[0] / scale2
        } else {
            0.0
        }
    } else {
        let top = eig[d - 1];
        if top > 0.0 {
            (eig[0].max(0.0) / top).sqrt()
        } else {
            0.0
        }
    };
    let verdict = if value >= SUPPORT_THRESHOLD { Verdict::Pass } else { Verdict::Fail };
    SupportAudit { verdict, normalized_min_eigenvalue: value, eigenvalues: eig, n }
}

/// Non-lattice evidence. A `Pass` only means no lattice was seen on the
/// scanned directions and frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeAudit {
    pub verdict: Verdict,
    pub max_abs_cf: f64,
    pub direction: Vec<f64>,
    /// Angular frequency `2 pi / scale` of the maximum.
    pub frequency: f64,
    pub n_used: usize,
    pub note: String,
}

pub const LATTICE_THRESHOLD: f64 = 1.0 - 1e-3;

/// Scans `|E exp(2 pi i <s, X> / scale)|` over random directions `s` and
/// scales from `2 pi sigma / 0.5` down to `2 pi sigma / 200`, `sigma` the
/// projected standard deviation.
pub fn audit_lattice(pool: &SamplePool, directions: usize, seeds: &SeedTree) -> LatticeAudit {
    let n = pool.len();
    let d = pool.d();
    let note = "evidence only: a lattice outside the scanned directions and scales is not excluded".to_string();
    if n < 1000 {
        return LatticeAudit { verdict: Verdict::Inconclusive, max_abs_cf: f64::NAN, direction: vec![], frequency: f64::NAN, n_used: n, note };
    }
    let mut rng = seeds.stream(Purpose::Lattice, 0, 0);
    let used = n.min(4096);
    let picks: Vec<usize> = if used == n { (0..n).collect() } else { (0..used).map(|_| rng.random_range(0..n)).collect() };
    let dirs: Vec<Vec<f64>> = if d == 1 { vec![vec![1.0]] } else { (0..directions.max(1)).map(|_| random_direction(d, &mut rng)).collect() };
    let results: Vec<(f64, f64)> = dirs
        .par_iter()
        .map(|s| {
            let proj: Vec<f64> = picks.iter().map(|&i| pool.point(i).iter().zip(s).map(|(a, b)| a * b).sum()).collect();
            let sd = stats::variance(&proj).sqrt();
            if !(sd > 0.0) {
                return (1.0, 0.0);
            }
            let centre = stats::mean(&proj);
            let (w0, dw, steps) = (0.5 / sd, 0.05 / sd, 3991);
            // e^{i w x} advanced by e^{i dw x} per frequency, refreshed every 64 steps
            let step: Vec<(f64, f64)> = proj.iter().map(|&x| { let (s, c) = (dw * (x - centre)).sin_cos(); (c, s) }).collect();
            let mut z: Vec<(f64, f64)> = vec![(0.0, 0.0); proj.len()];
            let mut best = (0.0, 0.0);
            for k in 0..steps {
                let w = w0 + dw * k as f64;
                if k % 64 == 0 {
                    for (zi, &x) in z.iter_mut().zip(&proj) {
                        let (s, c) = (w * (x - centre)).sin_cos();
                        *zi = (c, s);
                    }
                } else {
                    for (zi, st) in z.iter_mut().zip(&step) {
                        *zi = (zi.0 * st.0 - zi.1 * st.1, zi.0 * st.1 + zi.1 * st.0);
                    }
                }
                let (c, si) = z.iter().fold((0.0, 0.0), |acc, zi| (acc.0 + zi.0, acc.1 + zi.1));
                let a = (c * c + si * si).sqrt() / proj.len() as f64;
                if a > best.0 {
                    best = (a, w);
                }
            }
            best
        })
        .collect();
    let (idx, &(max_abs_cf, frequency)) =
        results.iter().enumerate().max_by(|a, b| a.1 .0.total_cmp(&b.1 .0)).expect("at least one direction");
    let verdict = if max_abs_cf > LATTICE_THRESHOLD { Verdict::Fail } else { Verdict::Pass };
    LatticeAudit { verdict, max_abs_cf, direction: dirs[idx].clone(), frequency, n_used: used, note }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_examples() {
        let t = chi_bootstrap(0.5, 1.0, 3.0).unwrap();
        assert_eq!(t.values, vec![0.5, 0.75, 1.125, 1.625, 2.125, 2.625, 3.125]);
        assert_eq!(t.steps_to(3.0), Some(6));
        assert_eq!(chi_bootstrap(1.0, 1.0, 1.0).unwrap().steps_to(1.0), Some(0));
        assert_eq!(chi(1.0, 2.0), 1.5);
        assert!(chi_bootstrap(0.0, 1.0, 1.0).is_err());
        assert!(chi_bootstrap(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn tail_fit_power_law() {
        // exact quantiles of P(Y <= x) = 2x on (0, 1/2)
        let n = 100_000;
        let ys: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64 / 2.0).collect();
        let f = fit_lower_tail(&ys);
        assert_eq!(f.shape, TailShape::PowerLaw);
        assert!((f.nu_hat - 1.0).abs() < 1e-3 && (f.lambda_hat - 2.0).abs() < 1e-2, "{f:?}");
    }

    #[test]
    fn support_examples() {
        let line: Vec<f64> = (0..1000).flat_map(|i| [i as f64, i as f64]).collect();
        let p = SamplePool::new(2, line, 0, crate::solver::SeedLineage::root(0)).unwrap();
        assert_eq!(audit_support(&p).verdict, Verdict::Fail);
        let tiny = SamplePool::new(2, vec![0.0, 1.0, 2.0, 3.0], 0, crate::solver::SeedLineage::root(0)).unwrap();
        assert_eq!(audit_support(&tiny).verdict, Verdict::Inconclusive);
        let zero = SamplePool::constant(&[0.0], 100).unwrap();
        assert_eq!(audit_support(&zero).verdict, Verdict::Fail);
    }

    #[test]
    fn lattice_examples() {
        let seeds = SeedTree::new(3);
        let bits = SamplePool::from_values((0..4000).map(|i| (i % 2) as f64).collect()).unwrap();
        assert_eq!(audit_lattice(&bits, 8, &seeds).verdict, Verdict::Fail);
        let c = SamplePool::from_values(vec![1.5; 2000]).unwrap();
        assert_eq!(audit_lattice(&c, 8, &seeds).verdict, Verdict::Fail);
        let mut rng = seeds.stream(Purpose::Misc, 0, 0);
        let u = SamplePool::from_values((0..4000).map(|_| rng.random::<f64>()).collect()).unwrap();
        assert_eq!(audit_lattice(&u, 8, &seeds).verdict, Verdict::Pass);
        let small = SamplePool::from_values(vec![0.0, 1.0]).unwrap();
        assert_eq!(audit_lattice(&small, 8, &seeds).verdict, Verdict::Inconclusive);
    }
}
