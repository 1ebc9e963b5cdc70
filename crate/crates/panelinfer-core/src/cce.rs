//! Common correlated effects estimation with cross-sectional averages as
//! factor proxies, and the sup-type slope-heterogeneity test.
//!
//! The fit projects each unit's data onto the orthogonal complement of the
//! span of the cross-sectional averages Z_bar = [y_bar, w_bar_1, ...] and
//! runs per-unit and pooled least squares on the projected data. The test
//! compares the design-weighted coefficient gaps
//! u_i = W~_i' (Y~_i - W~_i theta_pooled) = A_i (theta_i - theta_pooled)
//! against a Gaussian multiplier reference built from the score panel
//! xi_it = (y~_it - w~_it' theta_pooled) w~_it[j]. The u_i sum to zero
//! exactly, so each multiplier draw is recentered by the matching
//! design-share weights before taking the max.

use crate::bootstrap::BootstrapDraws;
use crate::error::{Error, Result};
use crate::homogeneity::{build_report, TestReport};
use crate::kernel::KernelSpec;
use crate::longrun::psd_sqrt;
use crate::panel::Panel;
use crate::rng::{stream, Component};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Outcome panel plus K regressor panels with identical shape, labels, and
/// observation pattern.
#[derive(Clone, Debug)]
pub struct CcePanelData {
    y: Panel,
    w: Vec<Panel>,
}

impl CcePanelData {
    pub fn new(y: Panel, w: Vec<Panel>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::input("at least one regressor panel required"));
        }
        for (k, wk) in w.iter().enumerate() {
            if wk.n_units() != y.n_units() || wk.n_times() != y.n_times() {
                return Err(Error::input(format!(
                    "regressor panel {} has shape {}x{}, expected {}x{}",
                    k + 1,
                    wk.n_units(),
                    wk.n_times(),
                    y.n_units(),
                    y.n_times()
                )));
            }
            if wk.unit_ids() != y.unit_ids() || wk.time_ids() != y.time_ids() {
                return Err(Error::input(format!(
                    "regressor panel {} labels do not match the outcome panel",
                    k + 1
                )));
            }
            if wk.mask() != y.mask() {
                return Err(Error::input(format!(
                    "regressor panel {} observation pattern differs from the outcome",
                    k + 1
                )));
            }
        }
        Ok(CcePanelData { y, w })
    }

    pub fn y(&self) -> &Panel {
        &self.y
    }

    pub fn w(&self) -> &[Panel] {
        &self.w
    }

    pub fn k_dim(&self) -> usize {
        self.w.len()
    }

    pub fn n_units(&self) -> usize {
        self.y.n_units()
    }

    pub fn n_times(&self) -> usize {
        self.y.n_times()
    }
}

/// Fit output: per-unit and pooled coefficients plus the defactored data.
#[derive(Clone, Debug)]
pub struct CceFit {
    /// Per-unit coefficient estimates, row i = theta_i'.
    pub theta: DMatrix<f64>,
    /// Pooled estimate (sum_i A_i)^{-1} sum_i W~_i' Y~_i.
    pub theta_pooled: DVector<f64>,
    /// Defactored per-unit data U_i = M Z_i with Z_i = [Y_i, W_i],
    /// T_i x (K+1); column 0 is the defactored outcome.
    pub residual_u: Vec<DMatrix<f64>>,
    /// Rank of the cross-sectional average matrix used by the projector.
    pub projector_rank: usize,
}

impl CceFit {
    /// Per-unit defactored gram matrix A_i = W~_i' W~_i.
    pub fn gram(&self, unit: usize) -> DMatrix<f64> {
        let k = self.theta.ncols();
        let w = self.residual_u[unit].columns(1, k);
        w.transpose() * w
    }
}

/// Annihilator of the column span of `z`: M = I - U_r U_r' from the thin
/// SVD, with singular values below 1e-10 * sigma_max treated as zero.
/// Returns the projector and the retained rank.
pub fn annihilator_matrix(z: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let t = z.nrows();
    let svd = nalgebra::SVD::new(z.clone(), true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sigma_max = svd.singular_values.amax();
    let cutoff = 1e-10 * sigma_max;
    let mut m = DMatrix::identity(t, t);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            let col = u.column(k);
            for a in 0..t {
                for b in 0..t {
                    m[(a, b)] -= col[a] * col[b];
                }
            }
        }
    }
    (m, rank)
}

/// Cross-sectional averages [y_bar_t, w_bar_1t, ..., w_bar_Kt] over the
/// units observed at each time.
fn cross_average_matrix(d: &CcePanelData) -> DMatrix<f64> {
    let t = d.n_times();
    let n = d.n_units();
    let k = d.k_dim();
    let mut z = DMatrix::zeros(t, k + 1);
    for s in 0..t {
        let mut count = 0usize;
        for i in 0..n {
            if d.y.mask()[(i, s)] {
                count += 1;
                z[(s, 0)] += d.y.values()[(i, s)];
                for (kk, wk) in d.w.iter().enumerate() {
                    z[(s, kk + 1)] += wk.values()[(i, s)];
                }
            }
        }
        if count > 0 {
            for c in 0..=k {
                z[(s, c)] /= count as f64;
            }
        }
    }
    z
}

fn unit_design(d: &CcePanelData, unit: usize, rows: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let k = d.k_dim();
    let y = DVector::from_fn(rows.len(), |r, _| d.y.values()[(unit, rows[r])]);
    let w = DMatrix::from_fn(rows.len(), k, |r, c| d.w[c].values()[(unit, rows[r])]);
    (y, w)
}

/// Fits the model: projector from the cross-sectional averages, per-unit
/// least squares on projected data, pooled estimate from summed grams.
///
/// Balanced panels share one T x T projector; unbalanced panels rebuild it
/// per unit from the average matrix restricted to the unit's observed rows.
pub fn cce_fit(d: &CcePanelData) -> Result<CceFit> {
    let n = d.n_units();
    let k = d.k_dim();
    let zbar = cross_average_matrix(d);
    let (m_full, rank) = annihilator_matrix(&zbar);
    let t_min = (0..n).map(|i| d.y.t_i(i)).min().unwrap();
    if t_min <= k + rank + 1 {
        return Err(Error::input(format!(
            "need every unit length > K + rank + 1 = {}, got min T_i = {t_min}",
            k + rank + 1
        )));
    }
    let balanced = d.y.is_balanced();
    let mut theta = DMatrix::zeros(n, k);
    let mut residual_u = Vec::with_capacity(n);
    let mut a_sum = DMatrix::zeros(k, k);
    let mut c_sum = DVector::zeros(k);
    for i in 0..n {
        let rows = d.y.observed_times(i);
        let (y_i, w_i) = unit_design(d, i, &rows);
        let (y_t, w_t) = if balanced {
            (&m_full * y_i, &m_full * w_i)
        } else {
            let zi = DMatrix::from_fn(rows.len(), k + 1, |r, c| zbar[(rows[r], c)]);
            let (m_i, _) = annihilator_matrix(&zi);
            (&m_i * y_i, &m_i * w_i)
        };
        let a_i = w_t.transpose() * &w_t;
        let c_i = w_t.transpose() * &y_t;
        let chol = nalgebra::Cholesky::new(a_i.clone()).ok_or_else(|| {
            Error::numerical(format!(
                "defactored design for unit '{}' is singular",
                d.y.unit_ids()[i]
            ))
        })?;
        let th_i = chol.solve(&c_i);
        theta.row_mut(i).copy_from(&th_i.transpose());
        a_sum += &a_i;
        c_sum += &c_i;
        let mut u = DMatrix::zeros(rows.len(), k + 1);
        u.column_mut(0).copy_from(&y_t);
        u.columns_mut(1, k).copy_from(&w_t);
        residual_u.push(u);
    }
    let chol = nalgebra::Cholesky::new(a_sum)
        .ok_or_else(|| Error::numerical("pooled defactored design is singular"))?;
    let theta_pooled = chol.solve(&c_sum);
    Ok(CceFit {
        theta,
        theta_pooled,
        residual_u,
        projector_rank: rank,
    })
}

/// Banded score-panel HAC without demeaning, entry (i, n) normalized by
/// 1/sqrt(T_i T_n). Rows hold zeros at missing cells, which keeps the sums
/// restricted to observed index pairs.
fn score_hac(scores: &DMatrix<f64>, counts: &[usize], kernel: &KernelSpec) -> DMatrix<f64> {
    let (n, t) = scores.shape();
    let m = kernel.bandwidth();
    let mut omega = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = (0..t).map(|s| scores[(i, s)] * scores[(j, s)]).sum::<f64>();
            for k in 1..=m.min(t - 1) {
                let w = kernel.weight(k);
                if w == 0.0 {
                    continue;
                }
                let mut cross = 0.0;
                for s in k..t {
                    cross +=
                        scores[(i, s)] * scores[(j, s - k)] + scores[(i, s - k)] * scores[(j, s)];
                }
                acc += w * cross;
            }
            let scaled = acc / ((counts[i] * counts[j]) as f64).sqrt();
            omega[(i, j)] = scaled;
            omega[(j, i)] = scaled;
        }
    }
    omega
}

/// Tests equality across units of coefficient `coef_index` (1-based).
///
/// Statistic: max_i |u_i[j]| / sqrt(T_i) with u_i the design-weighted gap
/// above. Reference: PSD square root of the no-demean score-panel HAC drives
/// ||recenter(S g)||_inf draws, where recenter subtracts
/// d_i * sum(v) with d_i = e_j' A_i (sum_k A_k)^{-1} e_j, the exact mirror
/// of the constraint sum_i u_i = 0.
pub fn cce_heterogeneity_test(
    d: &CcePanelData,
    coef_index: usize,
    kernel: &KernelSpec,
    r: usize,
    levels: &[f64],
    seed: u64,
) -> Result<TestReport> {
    let k = d.k_dim();
    if coef_index == 0 || coef_index > k {
        return Err(Error::input(format!(
            "coefficient index {coef_index} outside 1..={k}"
        )));
    }
    let n = d.n_units();
    if n < 2 {
        return Err(Error::input("heterogeneity test requires N >= 2"));
    }
    let t = d.n_times();
    let min_t = (0..n).map(|i| d.y.t_i(i)).min().unwrap();
    if min_t <= kernel.bandwidth() {
        return Err(Error::input(format!(
            "bandwidth {} requires every unit length to exceed it, got min T_i = {min_t}",
            kernel.bandwidth()
        )));
    }
    let fit = cce_fit(d).map_err(|e| e.in_stage("cce_fit"))?;
    let j = coef_index - 1;

    let mut scores = DMatrix::zeros(n, t);
    let mut counts = vec![0usize; n];
    let mut statistic = 0.0f64;
    let mut grams = Vec::with_capacity(n);
    for i in 0..n {
        let u = &fit.residual_u[i];
        let w_t = u.columns(1, k);
        let resid = u.column(0) - w_t * &fit.theta_pooled;
        let rows = d.y.observed_times(i);
        counts[i] = rows.len();
        let mut u_ij = 0.0;
        for (row, &cal) in rows.iter().enumerate() {
            let xi = resid[row] * w_t[(row, j)];
            scores[(i, cal)] = xi;
            u_ij += xi;
        }
        statistic = statistic.max(u_ij.abs() / (rows.len() as f64).sqrt());
        grams.push(fit.gram(i));
    }

    let omega = score_hac(&scores, &counts, kernel);
    let s = psd_sqrt(&omega).map_err(|e| e.in_stage("psd_sqrt"))?;

    // Recentering weights d_i = e_j' A_i (sum A)^{-1} e_j; they sum to one.
    let mut a_sum = DMatrix::zeros(k, k);
    for a in &grams {
        a_sum += a;
    }
    let chol = nalgebra::Cholesky::new(a_sum)
        .ok_or_else(|| Error::numerical("pooled defactored design is singular"))?;
    let mut e_j = DVector::zeros(k);
    e_j[j] = 1.0;
    let v = chol.solve(&e_j);
    let d_weights: Vec<f64> = grams.iter().map(|a| (a * &v)[j]).collect();

    if r == 0 {
        return Err(Error::input("at least one bootstrap replicate required"));
    }
    let raw: Vec<f64> = (0..r)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(seed, rep as u64, Component::GaussianRef);
            let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut draw = &s * g;
            let tot = draw.sum();
            for i in 0..n {
                draw[i] -= d_weights[i] * tot;
            }
            draw.amax()
        })
        .collect();
    let draws = BootstrapDraws::new(raw, 1.0, omega.amax() == 0.0)
        .map_err(|e| e.in_stage("multiplier_bootstrap"))?;
    build_report(statistic, draws, levels, kernel, seed, n, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Component};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gauss(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, 0, Component::Probe);
        DMatrix::from_fn(n, t, |_, _| rng.sample(StandardNormal))
    }

    fn simple_data(n: usize, t: usize, theta: &[f64], seed: u64) -> CcePanelData {
        // No factors: y = theta_i w + eps.
        let w = gauss(n, t, seed);
        let eps = gauss(n, t, seed + 1);
        let y = DMatrix::from_fn(n, t, |i, s| theta[i] * w[(i, s)] + 0.1 * eps[(i, s)]);
        CcePanelData::new(
            Panel::from_matrix(y).unwrap(),
            vec![Panel::from_matrix(w).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn annihilator_is_projector() {
        let z = gauss(30, 2, 5);
        let (m, rank) = annihilator_matrix(&z);
        assert_eq!(rank, 2);
        assert!(((&m * &m) - &m).amax() < 1e-10);
        assert!((&m - m.transpose()).amax() < 1e-12);
        assert!((&m * &z).amax() < 1e-10);
    }

    #[test]
    fn annihilator_of_zero_is_identity() {
        let z = DMatrix::zeros(10, 2);
        let (m, rank) = annihilator_matrix(&z);
        assert_eq!(rank, 0);
        assert!((m - DMatrix::identity(10, 10)).amax() == 0.0);
    }

    #[test]
    fn exact_fit_without_noise() {
        let theta = [1.0, 2.0, -0.5, 0.25];
        let w = gauss(4, 40, 9);
        let y = DMatrix::from_fn(4, 40, |i, s| theta[i] * w[(i, s)]);
        let d = CcePanelData::new(
            Panel::from_matrix(y).unwrap(),
            vec![Panel::from_matrix(w).unwrap()],
        )
        .unwrap();
        let fit = cce_fit(&d).unwrap();
        for i in 0..4 {
            assert_relative_eq!(fit.theta[(i, 0)], theta[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn matches_direct_projected_ols() {
        let d = simple_data(5, 50, &[0.5, 0.5, 0.5, 0.5, 0.5], 31);
        let fit = cce_fit(&d).unwrap();
        // Independent construction: M = I - Z (Z'Z)^{-1} Z' (full-rank Z).
        let z = cross_average_matrix(&d);
        let ztz = z.transpose() * &z;
        let m = DMatrix::identity(50, 50)
            - &z * ztz.try_inverse().unwrap() * z.transpose();
        for i in 0..5 {
            let y_i = DVector::from_fn(50, |s, _| d.y().values()[(i, s)]);
            let w_i = DVector::from_fn(50, |s, _| d.w()[0].values()[(i, s)]);
            let wy = (&m * &w_i).dot(&(&m * &y_i));
            let ww = (&m * &w_i).dot(&(&m * &w_i));
            assert_relative_eq!(fit.theta[(i, 0)], wy / ww, epsilon = 1e-10);
        }
    }

    #[test]
    fn scaling_outcome_scales_estimates() {
        let d = simple_data(4, 45, &[1.0, 1.2, 0.8, 1.1], 13);
        let fit = cce_fit(&d).unwrap();
        let y2 = Panel::from_matrix(d.y().values().map(|v| 3.0 * v)).unwrap();
        let d2 = CcePanelData::new(y2, d.w().to_vec()).unwrap();
        let fit2 = cce_fit(&d2).unwrap();
        for i in 0..4 {
            assert_relative_eq!(
                fit2.theta[(i, 0)],
                3.0 * fit.theta[(i, 0)],
                max_relative = 1e-10
            );
        }
        assert_relative_eq!(
            fit2.theta_pooled[0],
            3.0 * fit.theta_pooled[0],
            max_relative = 1e-10
        );
    }

    #[test]
    fn gap_vector_sums_to_zero() {
        let d = simple_data(6, 48, &[1.0, 1.5, 0.7, 1.0, 1.3, 0.9], 23);
        let fit = cce_fit(&d).unwrap();
        let mut total = 0.0;
        for i in 0..6 {
            let u = &fit.residual_u[i];
            let w = u.columns(1, 1);
            let resid = u.column(0) - w * &fit.theta_pooled;
            total += (w.transpose() * resid)[0];
        }
        assert!(total.abs() < 1e-8, "sum of gaps {total}");
    }

    #[test]
    fn statistic_invariant_to_unit_relabeling() {
        let d = simple_data(5, 44, &[1.0, 1.4, 0.6, 1.1, 0.9], 41);
        let k = KernelSpec::bartlett(4).unwrap();
        let a = cce_heterogeneity_test(&d, 1, &k, 30, &[0.95], 3).unwrap();
        let perm = [4usize, 2, 0, 1, 3];
        let y2 = d.y().select_units(&perm).unwrap();
        let w2 = d.w()[0].select_units(&perm).unwrap();
        let d2 = CcePanelData::new(y2, vec![w2]).unwrap();
        let b = cce_heterogeneity_test(&d2, 1, &k, 30, &[0.95], 3).unwrap();
        assert_relative_eq!(a.statistic, b.statistic, epsilon = 1e-12);
    }

    #[test]
    fn singular_unit_design_named() {
        let w = gauss(3, 30, 7);
        let mut wz = w.clone();
        for s in 0..30 {
            wz[(1, s)] = 0.0;
        }
        let y = gauss(3, 30, 8);
        let d = CcePanelData::new(
            Panel::from_matrix(y).unwrap(),
            vec![Panel::from_matrix(wz).unwrap()],
        )
        .unwrap();
        let err = cce_fit(&d).unwrap_err();
        assert!(err.to_string().contains("'u2'"), "{err}");
    }

    #[test]
    fn recentering_weights_sum_to_one() {
        let d = simple_data(7, 50, &[1.0; 7], 55);
        let fit = cce_fit(&d).unwrap();
        let mut a_sum = DMatrix::zeros(1, 1);
        let grams: Vec<DMatrix<f64>> = (0..7).map(|i| fit.gram(i)).collect();
        for a in &grams {
            a_sum += a;
        }
        let total: f64 = grams.iter().map(|a| a[(0, 0)] / a_sum[(0, 0)]).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_masks_rejected() {
        let y = Panel::from_matrix(gauss(2, 10, 1)).unwrap();
        let txt = "unit,1,2,3,4,5,6,7,8,9,10\nu1,1,2,3,4,,6,7,8,9,10\nu2,1,2,3,4,5,6,7,8,9,10\n";
        let w = Panel::read_wide_csv(txt.as_bytes()).unwrap();
        assert!(CcePanelData::new(y, vec![w]).is_err());
    }

    #[test]
    fn balanced_score_hac_matches_row_form() {
        let scores = gauss(4, 36, 77);
        let k = KernelSpec::bartlett(5).unwrap();
        let a = score_hac(&scores, &[36; 4], &k);
        let b = crate::longrun::hac_of_rows(&scores, &k, false);
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn coef_index_validated() {
        let d = simple_data(3, 30, &[1.0; 3], 2);
        let k = KernelSpec::bartlett(3).unwrap();
        assert!(cce_heterogeneity_test(&d, 0, &k, 10, &[0.95], 1).is_err());
        assert!(cce_heterogeneity_test(&d, 2, &k, 10, &[0.95], 1).is_err());
    }

    #[test]
    fn report_is_deterministic() {
        let d = simple_data(4, 40, &[1.0, 1.0, 1.0, 1.0], 71);
        let k = KernelSpec::bartlett(4).unwrap();
        let a = cce_heterogeneity_test(&d, 1, &k, 60, &[0.9, 0.95], 11).unwrap();
        let b = cce_heterogeneity_test(&d, 1, &k, 60, &[0.9, 0.95], 11).unwrap();
        assert_eq!(a.statistic, b.statistic);
        assert_eq!(a.critical_values, b.critical_values);
        assert_eq!(a.p_value, b.p_value);
    }
}
