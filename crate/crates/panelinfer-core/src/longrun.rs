//! Long-run covariance estimation: scalar and matrix HAC with compactly
//! supported kernels, the PSD matrix square root, and the MSE-optimal
//! bandwidth formula.
//!
//! All estimators run as banded O(m T) sums per entry since every kernel
//! vanishes beyond lag m.

use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::panel::Panel;
use nalgebra::DMatrix;

/// HAC long-run covariance estimate with its construction metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct LongRunMatrix {
    /// Symmetric N x N estimate.
    pub omega: DMatrix<f64>,
    /// Kernel and bandwidth used.
    pub kernel: KernelSpec,
    /// Whether rows were demeaned before accumulation.
    pub demeaned: bool,
}

impl LongRunMatrix {
    pub fn n(&self) -> usize {
        self.omega.nrows()
    }

    /// Symmetric PSD square root of the estimate.
    pub fn psd_sqrt(&self) -> Result<DMatrix<f64>> {
        psd_sqrt(&self.omega)
    }
}

/// Scalar HAC estimator (1/T) sum_{t,s} a((t-s)/m)(x_t - xbar)(x_s - xbar).
///
/// The Bartlett kernel makes the double sum provably nonnegative; other
/// families can dip below zero in small samples, so the result is floored
/// at 0 to honor the variance interpretation.
pub fn hac_scalar(series: &[f64], kernel: &KernelSpec, demean: bool) -> Result<f64> {
    let t = series.len();
    let m = kernel.bandwidth();
    if t <= m {
        return Err(Error::input(format!(
            "bandwidth {m} requires a series longer than {m}, got T = {t}"
        )));
    }
    let mean = if demean {
        series.iter().sum::<f64>() / t as f64
    } else {
        0.0
    };
    let z: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let mut acc = z.iter().map(|v| v * v).sum::<f64>();
    for k in 1..=m.min(t - 1) {
        let w = kernel.weight(k);
        if w == 0.0 {
            continue;
        }
        let gamma: f64 = (k..t).map(|s| z[s] * z[s - k]).sum();
        acc += 2.0 * w * gamma;
    }
    Ok((acc / t as f64).max(0.0))
}

/// Banded HAC accumulation over the rows of a dense N x T matrix.
/// Rows are demeaned in place when requested; the result is symmetrized.
pub(crate) fn hac_of_rows(rows: &DMatrix<f64>, kernel: &KernelSpec, demean: bool) -> DMatrix<f64> {
    let (n, t) = rows.shape();
    let mut z = rows.clone();
    if demean {
        for i in 0..n {
            let mean = z.row(i).sum() / t as f64;
            for s in 0..t {
                z[(i, s)] -= mean;
            }
        }
    }
    let m = kernel.bandwidth();
    let mut omega = &z * z.transpose();
    for k in 1..=m.min(t - 1) {
        let w = kernel.weight(k);
        if w == 0.0 {
            continue;
        }
        let lead = z.columns(k, t - k);
        let lag = z.columns(0, t - k);
        let gamma = &lead * lag.transpose();
        omega += w * (&gamma + gamma.transpose());
    }
    omega /= t as f64;
    let sym = (&omega + omega.transpose()) * 0.5;
    sym
}

/// Matrix HAC estimator for a balanced panel with per-unit demeaning.
pub fn hac_matrix(p: &Panel, kernel: &KernelSpec) -> Result<LongRunMatrix> {
    if !p.is_balanced() {
        return Err(Error::input(
            "panel is unbalanced; use hac_matrix_unbalanced",
        ));
    }
    let t = p.n_times();
    if t <= kernel.bandwidth() {
        return Err(Error::input(format!(
            "bandwidth {} requires T > bandwidth, got T = {t}",
            kernel.bandwidth()
        )));
    }
    let omega = hac_of_rows(p.values(), kernel, true);
    Ok(LongRunMatrix {
        omega,
        kernel: kernel.clone(),
        demeaned: true,
    })
}

/// Matrix HAC estimator for unbalanced panels.
///
/// Entry (i, n) is (1/sqrt(T_i T_n)) sum over observed pairs (t, s) of
/// a((t-s)/m)(x_it - xbar_i)(x_ns - xbar_n), where each mean runs over the
/// unit's observed cells. Missing cells contribute nothing.
pub fn hac_matrix_unbalanced(p: &Panel, kernel: &KernelSpec) -> Result<LongRunMatrix> {
    let n = p.n_units();
    let t = p.n_times();
    let m = kernel.bandwidth();
    let mut t_i = vec![0usize; n];
    for i in 0..n {
        t_i[i] = p.t_i(i);
        if t_i[i] <= m {
            return Err(Error::input(format!(
                "unit '{}' has T_i = {} observations, need more than bandwidth {m}",
                p.unit_ids()[i],
                t_i[i]
            )));
        }
    }
    // Demeaned values with zeros at missing cells: the banded sums then
    // range over exactly the observed index pairs.
    let mut z = DMatrix::zeros(n, t);
    for i in 0..n {
        let mean = p.unit_mean(i);
        for s in 0..t {
            if p.mask()[(i, s)] {
                z[(i, s)] = p.values()[(i, s)] - mean;
            }
        }
    }
    let mut omega = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = (0..t).map(|s| z[(i, s)] * z[(j, s)]).sum::<f64>();
            for k in 1..=m.min(t - 1) {
                let w = kernel.weight(k);
                if w == 0.0 {
                    continue;
                }
                let mut cross = 0.0;
                for s in k..t {
                    cross += z[(i, s)] * z[(j, s - k)] + z[(i, s - k)] * z[(j, s)];
                }
                acc += w * cross;
            }
            let scaled = acc / ((t_i[i] * t_i[j]) as f64).sqrt();
            omega[(i, j)] = scaled;
            omega[(j, i)] = scaled;
        }
    }
    Ok(LongRunMatrix {
        omega,
        kernel: kernel.clone(),
        demeaned: true,
    })
}

/// Symmetric PSD square root via eigendecomposition with eigenvalues
/// clipped at zero, so S S = clip(omega). For PSD input the reconstruction
/// error is at rounding level; indefinite input is projected, not rejected.
pub fn psd_sqrt(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, c) = omega.shape();
    if n != c {
        return Err(Error::input("matrix square root requires a square matrix"));
    }
    let scale = 1.0 + omega.amax();
    let asym = (omega - omega.transpose()).amax();
    if asym > 1e-8 * scale {
        return Err(Error::numerical(format!(
            "matrix is asymmetric beyond tolerance (max deviation {asym:.3e})"
        )));
    }
    let sym = (omega + omega.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut root = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        // Rank-one accumulation S += sqrt(lam_k) v_k v_k'.
        for i in 0..n {
            for j in 0..n {
                root[(i, j)] += lam * v[i] * v[j];
            }
        }
    }
    let s = (&root + root.transpose()) * 0.5;
    Ok(s)
}

/// MSE-optimal bandwidth
/// m = (C_q |Delta_q| / (2 sigma^4 int a^2))^{2/(2q+1)} T^{1/(2q+1)},
/// rounded to the nearest integer and clamped to [1, T-1].
pub fn optimal_bandwidth(
    family: KernelFamily,
    sigma4: f64,
    delta_qa: f64,
    t: usize,
) -> Result<usize> {
    if t < 2 {
        return Err(Error::input("bandwidth formula requires T >= 2"));
    }
    if !(sigma4 > 0.0) || !sigma4.is_finite() {
        return Err(Error::input(format!(
            "sigma4 must be a positive real, got {sigma4}"
        )));
    }
    if !delta_qa.is_finite() {
        return Err(Error::input("delta_qa must be finite"));
    }
    let q = family.smoothness_order() as f64;
    let c = family.curvature_constant();
    let ia2 = family.squared_integral();
    let expo = 2.0 / (2.0 * q + 1.0);
    let base = (c * delta_qa.abs() / (2.0 * sigma4 * ia2)).powf(expo)
        * (t as f64).powf(1.0 / (2.0 * q + 1.0));
    let m = base.round() as i64;
    Ok((m.max(1) as usize).min(t - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use crate::rng::{stream, Component};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn bartlett(m: usize) -> KernelSpec {
        KernelSpec::bartlett(m).unwrap()
    }

    fn gauss_matrix(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, 0, Component::Probe);
        DMatrix::from_fn(n, t, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn scalar_bandwidth_one_is_sample_variance() {
        let series = [1.0, 2.0, 4.0, 8.0, 9.0];
        let got = hac_scalar(&series, &bartlett(1), true).unwrap();
        let mean = series.iter().sum::<f64>() / 5.0;
        let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        assert_relative_eq!(got, var, epsilon = 1e-14);
    }

    #[test]
    fn scalar_constant_series_is_zero() {
        let series = [3.0; 40];
        assert_eq!(hac_scalar(&series, &bartlett(5), true).unwrap(), 0.0);
    }

    #[test]
    fn scalar_rejects_short_series() {
        let series = [1.0, 2.0, 3.0];
        assert!(hac_scalar(&series, &bartlett(3), true).is_err());
    }

    #[test]
    fn matrix_diagonal_matches_scalar() {
        let vals = gauss_matrix(3, 60, 21);
        let p = Panel::from_matrix(vals.clone()).unwrap();
        let k = bartlett(6);
        let lr = hac_matrix(&p, &k).unwrap();
        for i in 0..3 {
            let row: Vec<f64> = (0..60).map(|t| vals[(i, t)]).collect();
            let d = hac_scalar(&row, &k, true).unwrap();
            assert_relative_eq!(lr.omega[(i, i)], d, epsilon = 1e-12);
        }
    }

    #[test]
    fn matrix_zero_panel_gives_zero() {
        // Constant rows demean to zero.
        let p = Panel::from_rows(2, 10, &[5.0; 20]).unwrap();
        let lr = hac_matrix(&p, &bartlett(2)).unwrap();
        assert!(lr.omega.amax() == 0.0);
    }

    #[test]
    fn matrix_matches_quadruple_loop() {
        let vals = gauss_matrix(3, 25, 4);
        let p = Panel::from_matrix(vals.clone()).unwrap();
        let k = KernelSpec::new(KernelFamily::Parzen, 5).unwrap();
        let lr = hac_matrix(&p, &k).unwrap();
        let t = 25usize;
        let means: Vec<f64> = (0..3).map(|i| vals.row(i).sum() / t as f64).collect();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for a in 0..t {
                    for b in 0..t {
                        let x = (a as f64 - b as f64) / k.bandwidth() as f64;
                        acc += crate::kernel::kernel_eval(k.family(), x)
                            * (vals[(i, a)] - means[i])
                            * (vals[(j, b)] - means[j]);
                    }
                }
                assert_relative_eq!(lr.omega[(i, j)], acc / t as f64, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unbalanced_reduces_to_balanced() {
        let vals = gauss_matrix(4, 30, 8);
        let p = Panel::from_matrix(vals).unwrap();
        let k = bartlett(4);
        let a = hac_matrix(&p, &k).unwrap();
        let b = hac_matrix_unbalanced(&p, &k).unwrap();
        assert!((a.omega - b.omega).amax() <= 1e-12);
    }

    #[test]
    fn unbalanced_missing_cell_is_local() {
        let vals = gauss_matrix(3, 30, 13);
        let full = Panel::from_matrix(vals.clone()).unwrap();
        let mut mask = DMatrix::from_element(3, 30, true);
        mask[(1, 7)] = false;
        let unit_ids = full.unit_ids().to_vec();
        let time_ids = full.time_ids().to_vec();
        let holed = Panel::from_parts(vals, mask, unit_ids, time_ids).unwrap();
        let k = bartlett(4);
        let a = hac_matrix_unbalanced(&full, &k).unwrap();
        let b = hac_matrix_unbalanced(&holed, &k).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i == 1 || j == 1 {
                    continue;
                }
                assert_relative_eq!(a.omega[(i, j)], b.omega[(i, j)], epsilon = 1e-14);
            }
        }
        assert!((a.omega[(1, 1)] - b.omega[(1, 1)]).abs() > 0.0);
    }

    #[test]
    fn unbalanced_short_unit_named() {
        let mut mask = DMatrix::from_element(2, 10, true);
        for t in 0..7 {
            mask[(1, t)] = false;
        }
        let vals = gauss_matrix(2, 10, 2);
        let p = Panel::from_parts(
            vals,
            mask,
            vec!["a".into(), "b".into()],
            (1..=10).map(|t| t.to_string()).collect(),
        )
        .unwrap();
        let err = hac_matrix_unbalanced(&p, &bartlett(4)).unwrap_err();
        assert!(err.to_string().contains("'b'"), "{err}");
    }

    #[test]
    fn psd_sqrt_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let s = psd_sqrt(&m).unwrap();
        assert_relative_eq!(s[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(s[(1, 1)], 3.0, epsilon = 1e-12);
        assert!(s[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn psd_sqrt_identity() {
        let s = psd_sqrt(&DMatrix::identity(4, 4)).unwrap();
        assert!((s - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn psd_sqrt_reconstructs_random_gram() {
        let r = gauss_matrix(6, 6, 99);
        let a = &r * r.transpose();
        let s = psd_sqrt(&a).unwrap();
        let err = (&s * &s - &a).amax();
        assert!(err <= 1e-8 * (1.0 + a.amax()), "reconstruction error {err}");
    }

    #[test]
    fn psd_sqrt_clips_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -4.0]);
        let s = psd_sqrt(&m).unwrap();
        assert_relative_eq!(s[(0, 0)], 1.0, epsilon = 1e-12);
        assert!(s[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn psd_sqrt_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(psd_sqrt(&m).is_err());
    }

    #[test]
    fn optimal_bandwidth_worked_example() {
        // Bartlett, C = 1, Delta = 1, sigma4 = 1, T = 1000:
        // (3/4)^{2/3} * 10 = 8.25 -> 8.
        let m = optimal_bandwidth(KernelFamily::Bartlett, 1.0, 1.0, 1000).unwrap();
        assert_eq!(m, 8);
    }

    #[test]
    fn optimal_bandwidth_floor_guard() {
        assert_eq!(
            optimal_bandwidth(KernelFamily::Trapezoid, 1.0, 1.0, 2).unwrap(),
            1
        );
        assert_eq!(
            optimal_bandwidth(KernelFamily::Bartlett, 100.0, 1e-9, 1000).unwrap(),
            1
        );
    }

    #[test]
    fn optimal_bandwidth_rejects_bad_sigma() {
        assert!(optimal_bandwidth(KernelFamily::Bartlett, 0.0, 1.0, 100).is_err());
        assert!(optimal_bandwidth(KernelFamily::Bartlett, -2.0, 1.0, 100).is_err());
    }

    #[test]
    fn bartlett_matrix_is_psd_up_to_rounding() {
        for seed in 0..5 {
            let p = Panel::from_matrix(gauss_matrix(4, 40, 100 + seed)).unwrap();
            let lr = hac_matrix(&p, &bartlett(5)).unwrap();
            let eig = nalgebra::SymmetricEigen::new(lr.omega.clone());
            let min = eig.eigenvalues.min();
            let norm = eig.eigenvalues.amax();
            assert!(min >= -1e-10 * norm, "min eigenvalue {min}");
        }
    }
}
