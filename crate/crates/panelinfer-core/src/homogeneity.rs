//! Sup-type mean homogeneity test with Gaussian multiplier critical values,
//! per-unit confidence intervals, and the generalization to per-unit OLS
//! coefficients on common regressors.
//!
//! Pipeline for the test: cross-sectionally demean the panel, estimate the
//! long-run covariance of the demeaned cross section, take its PSD square
//! root S, and simulate ||S g||_inf with g ~ N(0, I_N). The demeaning
//! mirrors the statistic's centering at the grand mean, so the reference
//! draws carry the projected (contrast) covariance.

use crate::bootstrap::{
    bootstrap_heterogeneous, gaussian_multiplier_max, gaussian_multiplier_max_unbalanced,
    gaussian_multiplier_signed_max, BootstrapDraws, MultiplierSpec,
};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::longrun::{hac_matrix, hac_matrix_unbalanced};
use crate::panel::Panel;
use nalgebra::DMatrix;
use serde::Serialize;

/// Full test output: statistic, bootstrap law summary, and decisions.
#[derive(Clone, Debug, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    /// Finite-sample p-value (1 + #{draws >= statistic}) / (R + 1).
    pub p_value: f64,
    /// (level, upper critical value) pairs, in requested order.
    pub critical_values: Vec<(f64, f64)>,
    /// (level, reject) pairs; reject iff statistic > critical value.
    pub decisions: Vec<(f64, bool)>,
    pub r: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub n_units: usize,
    pub n_times: usize,
    /// Raw replicate draws, kept for diagnostics; not serialized.
    #[serde(skip_serializing)]
    pub draws: Option<BootstrapDraws>,
}

impl TestReport {
    pub fn decision(&self, level: f64) -> Option<bool> {
        self.decisions
            .iter()
            .find(|(lv, _)| *lv == level)
            .map(|(_, d)| *d)
    }
}

/// Assembles a report, enforcing the p-value and decision conventions.
pub fn build_report(
    statistic: f64,
    draws: BootstrapDraws,
    levels: &[f64],
    kernel: &KernelSpec,
    seed: u64,
    n_units: usize,
    n_times: usize,
) -> Result<TestReport> {
    if levels.is_empty() {
        return Err(Error::input("at least one test level required"));
    }
    if !statistic.is_finite() {
        return Err(Error::numerical("test statistic is not finite"));
    }
    let p_value = draws.p_value(statistic);
    let critical_values = draws.critical_values(levels)?;
    let decisions = critical_values
        .iter()
        .map(|&(lv, cv)| (lv, statistic > cv))
        .collect();
    Ok(TestReport {
        statistic,
        p_value,
        critical_values,
        decisions,
        r: draws.len(),
        seed,
        kernel: kernel.clone(),
        n_units,
        n_times,
        draws: Some(draws),
    })
}

/// Sup statistic max_i |sqrt(T_i) (xbar_i - xbar)| with xbar the mean of the
/// unit means. Balanced panels use the common sqrt(T).
pub fn q_statistic(p: &Panel) -> Result<f64> {
    let n = p.n_units();
    if n < 2 {
        return Err(Error::input("homogeneity statistic requires N >= 2"));
    }
    let means = p.unit_means();
    let grand = means.iter().sum::<f64>() / n as f64;
    let mut q = 0.0f64;
    for (i, &m) in means.iter().enumerate() {
        let t_i = p.t_i(i) as f64;
        q = q.max((t_i.sqrt() * (m - grand)).abs());
    }
    Ok(q)
}

/// Signed variant max_i sqrt(T_i)(xbar_i - xbar), for the one-sided test.
pub fn q_statistic_signed(p: &Panel) -> Result<f64> {
    let n = p.n_units();
    if n < 2 {
        return Err(Error::input("homogeneity statistic requires N >= 2"));
    }
    let means = p.unit_means();
    let grand = means.iter().sum::<f64>() / n as f64;
    let mut q = f64::NEG_INFINITY;
    for (i, &m) in means.iter().enumerate() {
        let t_i = p.t_i(i) as f64;
        q = q.max(t_i.sqrt() * (m - grand));
    }
    Ok(q)
}

fn reference_sqrt(p: &Panel, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let demeaned = p.demean_cross_section();
    let lr = if p.is_balanced() {
        hac_matrix(&demeaned, kernel)
    } else {
        hac_matrix_unbalanced(&demeaned, kernel)
    }
    .map_err(|e| e.in_stage("hac"))?;
    lr.psd_sqrt().map_err(|e| e.in_stage("psd_sqrt"))
}

/// Tests equality of all unit means (two-sided, absolute-value form).
pub fn test_homogeneity(
    p: &Panel,
    kernel: &KernelSpec,
    r: usize,
    levels: &[f64],
    seed: u64,
) -> Result<TestReport> {
    let statistic = q_statistic(p).map_err(|e| e.in_stage("statistic"))?;
    let s = reference_sqrt(p, kernel)?;
    let draws = if p.is_balanced() {
        gaussian_multiplier_max(&s, p.n_times(), r, seed)
    } else {
        let counts: Vec<usize> = (0..p.n_units()).map(|i| p.t_i(i)).collect();
        gaussian_multiplier_max_unbalanced(&s, &counts, r, seed)
    }
    .map_err(|e| e.in_stage("multiplier_bootstrap"))?;
    build_report(statistic, draws, levels, kernel, seed, p.n_units(), p.n_times())
}

/// One-sided variant using the signed max; offered for completeness, the
/// two-sided form is the default everywhere else.
pub fn test_homogeneity_one_sided(
    p: &Panel,
    kernel: &KernelSpec,
    r: usize,
    levels: &[f64],
    seed: u64,
) -> Result<TestReport> {
    let statistic = q_statistic_signed(p).map_err(|e| e.in_stage("statistic"))?;
    let s = reference_sqrt(p, kernel)?;
    let draws =
        gaussian_multiplier_signed_max(&s, r, seed).map_err(|e| e.in_stage("multiplier_bootstrap"))?;
    build_report(statistic, draws, levels, kernel, seed, p.n_units(), p.n_times())
}

/// Equal-tailed bootstrap confidence interval for one unit mean.
#[derive(Clone, Debug, Serialize)]
pub struct UnitCi {
    pub unit: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    /// True when the unit's bootstrap variance vanished (constant series);
    /// the interval collapses to the point estimate.
    pub degenerate: bool,
}

/// Per-unit confidence intervals from the heterogeneous wild bootstrap.
///
/// For unit i with T_i observed periods and studentized draws s_r of the
/// bootstrap sum (scale = its conditional sd), the equal-tailed interval is
/// [xbar_i - q_{1-a/2} scale / T_i, xbar_i - q_{a/2} scale / T_i].
pub fn infer_unit_means(
    p: &Panel,
    spec: &MultiplierSpec,
    r: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<UnitCi>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::input(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let alpha = 1.0 - level;
    let mut out = Vec::with_capacity(p.n_units());
    for i in 0..p.n_units() {
        // Same seed across units: replicate r shares one multiplier path.
        let draws = bootstrap_heterogeneous(p, i, None, spec, r, seed, true)?;
        let estimate = p.unit_mean(i);
        let t_i = p.t_i(i) as f64;
        let (lo, hi) = if draws.is_degenerate() {
            (estimate, estimate)
        } else {
            let s_hat = draws.scale() / t_i;
            let upper = draws.quantile(1.0 - alpha / 2.0)?;
            let lower = draws.lower_quantile(alpha / 2.0)?;
            (estimate - upper * s_hat, estimate - lower * s_hat)
        };
        out.push(UnitCi {
            unit: p.unit_ids()[i].clone(),
            estimate,
            lo,
            hi,
            degenerate: draws.is_degenerate(),
        });
    }
    Ok(out)
}

/// Tests equality across units of one OLS coefficient on common regressors.
///
/// Per-unit OLS b_i on the common T x K design X, pooled coefficient bbar
/// (the mean of the b_i, which equals pooled OLS here). The statistic is
/// max_i |sum_t xi_it| / sqrt(T) with scores
/// xi_it = X[t, j] (y_it - x_t' bbar), which equals
/// max_i |sqrt(T) e_j' (X'X/T)(b_i - bbar)| by orthogonality of OLS
/// residuals. Critical values come from the multiplier reference on the
/// cross-sectionally demeaned score panel. With an intercept-only design
/// this reduces exactly to [`test_homogeneity`].
pub fn test_regression_heterogeneity(
    y: &Panel,
    x_common: &DMatrix<f64>,
    coef_index: usize,
    kernel: &KernelSpec,
    r: usize,
    levels: &[f64],
    seed: u64,
) -> Result<TestReport> {
    if !y.is_balanced() {
        return Err(Error::input(
            "regression heterogeneity test requires a balanced panel",
        ));
    }
    let t = y.n_times();
    let n = y.n_units();
    let k = x_common.ncols();
    if x_common.nrows() != t {
        return Err(Error::input(format!(
            "regressor matrix has {} rows, expected T = {t}",
            x_common.nrows()
        )));
    }
    if coef_index == 0 || coef_index > k {
        return Err(Error::input(format!(
            "coefficient index {coef_index} outside 1..={k}"
        )));
    }
    if t <= k + kernel.bandwidth() {
        return Err(Error::input(format!(
            "need T > K + bandwidth = {}, got T = {t}",
            k + kernel.bandwidth()
        )));
    }
    if n < 2 {
        return Err(Error::input("heterogeneity test requires N >= 2"));
    }
    let xtx = x_common.transpose() * x_common;
    let chol = nalgebra::Cholesky::new(xtx)
        .ok_or_else(|| Error::input("common regressor matrix is rank deficient"))?;
    // b_i stacked as columns: solve (X'X) B = X' Y'.
    let rhs = x_common.transpose() * y.values().transpose();
    let b = chol.solve(&rhs);
    let mut b_bar = nalgebra::DVector::zeros(k);
    for i in 0..n {
        b_bar += b.column(i);
    }
    b_bar /= n as f64;

    let j = coef_index - 1;
    let fitted = x_common * &b_bar;
    let scores = DMatrix::from_fn(n, t, |i, s| {
        x_common[(s, j)] * (y.values()[(i, s)] - fitted[s])
    });
    let statistic = (0..n)
        .map(|i| scores.row(i).sum().abs())
        .fold(0.0f64, f64::max)
        / (t as f64).sqrt();

    let score_panel = Panel::from_matrix(scores).map_err(|e| e.in_stage("scores"))?;
    let s = reference_sqrt(&score_panel, kernel)?;
    let draws =
        gaussian_multiplier_max(&s, t, r, seed).map_err(|e| e.in_stage("multiplier_bootstrap"))?;
    build_report(statistic, draws, levels, kernel, seed, n, t)
}
