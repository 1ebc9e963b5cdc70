//! Data generating processes: finite-order moving-average panels, the AR(1)
//! simulation designs, unit-root panels, and the Beveridge-Nelson split used
//! as a partial-sum oracle.
//!
//! All simulators are deterministic functions of (spec, T, seed): innovations
//! are drawn time-major from a single seeded stream, so the same inputs yield
//! bit-identical panels regardless of thread count.

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::rng::{stream, Component};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal, StudentT};
use serde::de::Error as _;
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Innovation law, standardized to mean 0 and variance 1.
///
/// The three named laws are standardized analytically: `T8` is Student-t with
/// 8 degrees of freedom scaled by sqrt(6/8); `Gamma22Centered` is
/// Gamma(shape 2, scale 0.5) shifted by its mean 1 and scaled by 1/sqrt(0.5),
/// since the raw centered law has variance 0.5. `Custom` samplers are trusted
/// by default; call [`validate_custom_moments`] to spot-check them.
#[derive(Clone)]
pub enum InnovationLaw {
    Gauss,
    T8,
    Gamma22Centered,
    Custom(Arc<dyn Fn(&mut ChaCha8Rng) -> f64 + Send + Sync>),
}

impl InnovationLaw {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            InnovationLaw::Gauss => rng.sample(StandardNormal),
            InnovationLaw::T8 => {
                let t: f64 = rng.sample(StudentT::new(8.0).expect("valid dof"));
                t * (6.0f64 / 8.0).sqrt()
            }
            InnovationLaw::Gamma22Centered => {
                let g: f64 = rng.sample(Gamma::new(2.0, 0.5).expect("valid gamma"));
                (g - 1.0) / 0.5f64.sqrt()
            }
            InnovationLaw::Custom(f) => f(rng),
        }
    }

    /// Third cumulant (equals skewness for a unit-variance law), when known.
    pub fn third_cumulant(&self) -> Option<f64> {
        match self {
            InnovationLaw::Gauss | InnovationLaw::T8 => Some(0.0),
            // Gamma skewness 2/sqrt(shape) with shape 2.
            InnovationLaw::Gamma22Centered => Some(2.0 / 2.0f64.sqrt()),
            InnovationLaw::Custom(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InnovationLaw::Gauss => "gauss",
            InnovationLaw::T8 => "t8",
            InnovationLaw::Gamma22Centered => "gamma22_centered",
            InnovationLaw::Custom(_) => "custom",
        }
    }
}

impl fmt::Debug for InnovationLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InnovationLaw::Custom(_) => f.write_str("Custom(<sampler>)"),
            other => f.write_str(match other {
                InnovationLaw::Gauss => "Gauss",
                InnovationLaw::T8 => "T8",
                InnovationLaw::Gamma22Centered => "Gamma22Centered",
                InnovationLaw::Custom(_) => unreachable!(),
            }),
        }
    }
}

impl PartialEq for InnovationLaw {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (InnovationLaw::Gauss, InnovationLaw::Gauss)
            | (InnovationLaw::T8, InnovationLaw::T8)
            | (InnovationLaw::Gamma22Centered, InnovationLaw::Gamma22Centered) => true,
            (InnovationLaw::Custom(a), InnovationLaw::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl fmt::Display for InnovationLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InnovationLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss" => Ok(InnovationLaw::Gauss),
            "t8" => Ok(InnovationLaw::T8),
            "gamma22_centered" => Ok(InnovationLaw::Gamma22Centered),
            other => Err(Error::input(format!(
                "unknown innovation law '{other}'; expected gauss, t8, or gamma22_centered"
            ))),
        }
    }
}

impl Serialize for InnovationLaw {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            InnovationLaw::Custom(_) => Err(S::Error::custom(
                "custom innovation samplers are not serializable",
            )),
            named => s.serialize_str(named.name()),
        }
    }
}

impl<'de> Deserialize<'de> for InnovationLaw {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tag = String::deserialize(d)?;
        tag.parse().map_err(D::Error::custom)
    }
}

/// Monte Carlo spot-check that a custom sampler has mean 0 and variance 1.
///
/// Uses 6-sigma bands around the sample moments, so named laws and correct
/// custom samplers pass with overwhelming probability at `n_draws >= 10_000`.
pub fn validate_custom_moments(law: &InnovationLaw, n_draws: usize, seed: u64) -> Result<()> {
    if n_draws < 1000 {
        return Err(Error::input("moment validation needs at least 1000 draws"));
    }
    let mut rng = stream(seed, 0, Component::Probe);
    let draws: Vec<f64> = (0..n_draws).map(|_| law.sample(&mut rng)).collect();
    let n = n_draws as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let m4 = draws.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let se_mean = (var / n).sqrt();
    let se_var = ((m4 - var * var).max(0.0) / n).sqrt();
    if mean.abs() > 6.0 * se_mean {
        return Err(Error::spec(format!(
            "innovation law fails mean-zero check: sample mean {mean:.4}"
        )));
    }
    if (var - 1.0).abs() > 6.0 * se_var {
        return Err(Error::spec(format!(
            "innovation law fails unit-variance check: sample variance {var:.4}"
        )));
    }
    Ok(())
}

/// Finite-order moving-average panel specification:
/// x_t = mu + sum_{l=0..L} B_l e_{t-l}, with iid innovations e_t.
#[derive(Clone, Debug, PartialEq)]
pub struct HdmaSpec {
    mu: DVector<f64>,
    coeffs: Vec<DMatrix<f64>>,
    innovation: InnovationLaw,
    burn_in: usize,
}

impl HdmaSpec {
    pub fn new(
        mu: Vec<f64>,
        coeffs: Vec<DMatrix<f64>>,
        innovation: InnovationLaw,
        burn_in: usize,
    ) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::spec("mean vector must be non-empty"));
        }
        if coeffs.is_empty() {
            return Err(Error::spec("at least one coefficient matrix required"));
        }
        for (l, b) in coeffs.iter().enumerate() {
            if b.shape() != (n, n) {
                return Err(Error::spec(format!(
                    "coefficient matrix at lag {l} is {}x{}, expected {n}x{n}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::spec(format!("non-finite entry in lag-{l} matrix")));
            }
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::spec("non-finite entry in mean vector"));
        }
        Ok(HdmaSpec {
            mu: DVector::from_vec(mu),
            coeffs,
            innovation,
            burn_in,
        })
    }

    /// Zero-mean white noise: B_0 = I, no further lags.
    pub fn white(n: usize, innovation: InnovationLaw) -> Result<Self> {
        HdmaSpec::new(vec![0.0; n], vec![DMatrix::identity(n, n)], innovation, 0)
    }

    pub fn n_units(&self) -> usize {
        self.mu.len()
    }

    /// Moving-average order L (number of lags beyond the contemporaneous one).
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn innovation(&self) -> &InnovationLaw {
        &self.innovation
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    /// B = sum of all coefficient matrices.
    pub fn coefficient_sum(&self) -> DMatrix<f64> {
        let n = self.n_units();
        self.coeffs
            .iter()
            .fold(DMatrix::zeros(n, n), |acc, b| acc + b)
    }
}

impl Serialize for HdmaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let wire = HdmaSpecWire {
            mu: self.mu.iter().copied().collect(),
            coeffs: self.coeffs.iter().map(matrix_rows).collect(),
            innovation: self.innovation.clone(),
            burn_in: self.burn_in,
        };
        wire.serialize(s)
    }
}

impl<'de> Deserialize<'de> for HdmaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = HdmaSpecWire::deserialize(d)?;
        let coeffs = wire
            .coeffs
            .iter()
            .map(|rows| matrix_from_rows(rows))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        HdmaSpec::new(wire.mu, coeffs, wire.innovation, wire.burn_in).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct HdmaSpecWire {
    mu: Vec<f64>,
    coeffs: Vec<Vec<Vec<f64>>>,
    innovation: InnovationLaw,
    burn_in: usize,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::parse("matrix", "ragged or empty row list"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n, rows[0].len(), &flat))
}

/// Beveridge-Nelson split of a finite-order filter:
/// B(L) = B - (1 - L) Btilde(L), with Btilde_l = sum_{k > l} B_k.
#[derive(Clone, Debug, PartialEq)]
pub struct BnParts {
    /// B = sum of all lags.
    pub b_sum: DMatrix<f64>,
    /// [Btilde_0, ..., Btilde_{L-1}]; empty when the filter has one lag.
    pub b_tilde: Vec<DMatrix<f64>>,
}

impl BnParts {
    /// Applies the tail filter at a column: sum_l Btilde_l * eps[col - l].
    pub fn apply_tilde(&self, eps: &DMatrix<f64>, col: usize) -> DVector<f64> {
        let n = self.b_sum.nrows();
        let mut acc = DVector::zeros(n);
        for (l, bt) in self.b_tilde.iter().enumerate() {
            acc += bt * eps.column(col - l);
        }
        acc
    }
}

/// Exact Beveridge-Nelson decomposition of the spec's coefficient list.
pub fn bn_decompose(spec: &HdmaSpec) -> BnParts {
    let n = spec.n_units();
    let l_max = spec.order();
    let b_sum = spec.coefficient_sum();
    let mut b_tilde = Vec::with_capacity(l_max);
    // Suffix sums: Btilde_l = B_{l+1} + ... + B_L.
    let mut tail = DMatrix::zeros(n, n);
    let mut rev = Vec::with_capacity(l_max);
    for b in spec.coeffs().iter().skip(1).rev() {
        tail += b;
        rev.push(tail.clone());
    }
    rev.reverse();
    b_tilde.extend(rev);
    BnParts { b_sum, b_tilde }
}

/// Simulates the moving-average panel and its innovation matrix.
///
/// The innovation matrix has `T + order + burn_in` columns; column
/// `order + burn_in + t - 1` holds e_t for t = 1..=T. Exposing it lets tests
/// verify partial-sum identities against the exact draws.
pub fn simulate_hdma_with_innovations(
    spec: &HdmaSpec,
    t_len: usize,
    seed: u64,
) -> Result<(Panel, DMatrix<f64>)> {
    if t_len == 0 {
        return Err(Error::input("T must be at least 1"));
    }
    let n = spec.n_units();
    let l_max = spec.order();
    let pre = l_max + spec.burn_in();
    let total = pre + t_len;
    let mut rng = stream(seed, 0, Component::Innovations);
    let mut eps = DMatrix::zeros(n, total);
    for t in 0..total {
        for i in 0..n {
            eps[(i, t)] = spec.innovation().sample(&mut rng);
        }
    }
    let mut x = DMatrix::zeros(n, t_len);
    for t in 0..t_len {
        let mut col = spec.mu().clone();
        for (l, b) in spec.coeffs().iter().enumerate() {
            col += b * eps.column(pre + t - l);
        }
        x.set_column(t, &col);
    }
    let panel = Panel::from_matrix(x)?;
    Ok((panel, eps))
}

/// Simulates x_t = mu + sum_l B_l e_{t-l} for t = 1..=T.
pub fn simulate_hdma(spec: &HdmaSpec, t_len: usize, seed: u64) -> Result<Panel> {
    simulate_hdma_with_innovations(spec, t_len, seed).map(|(p, _)| p)
}

/// Cumulative-sum panel y_t = y_{t-1} + x_t with y_0 = 0 and the mean
/// forced to zero; differencing recovers the level panel up to the rounding
/// of each cumulative addition.
pub fn simulate_unit_root(spec: &HdmaSpec, t_len: usize, seed: u64) -> Result<Panel> {
    let driftless = HdmaSpec {
        mu: DVector::zeros(spec.n_units()),
        coeffs: spec.coeffs().to_vec(),
        innovation: spec.innovation().clone(),
        burn_in: spec.burn_in(),
    };
    let x = simulate_hdma(&driftless, t_len, seed)?;
    let n = x.n_units();
    let mut y = x.values().clone();
    for t in 1..t_len {
        for i in 0..n {
            y[(i, t)] += y[(i, t - 1)];
        }
    }
    Panel::from_matrix(y)
}

/// Exact cross-autocovariance Cov(x_it, x_j,t-lag) implied by the filter,
/// for unit-variance iid innovations: sum_l row_i(B_{l+lag}) . row_j(B_l).
pub fn hdma_autocovariance(spec: &HdmaSpec, i: usize, j: usize, lag: usize) -> f64 {
    let coeffs = spec.coeffs();
    let mut acc = 0.0;
    for l in 0..coeffs.len() {
        if l + lag >= coeffs.len() {
            break;
        }
        acc += coeffs[l + lag].row(i).dot(&coeffs[l].row(j));
    }
    acc
}

/// AR(1) panel specification: x_t = mu + rho_x x_{t-1} + S^{1/2} nu_t with
/// iid standardized innovations nu_t and S = sigma_nu.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ar1PanelSpec {
    pub mu: Vec<f64>,
    pub rho_x: f64,
    #[serde(serialize_with = "serialize_matrix")]
    pub sigma_nu: DMatrix<f64>,
    pub innovation: InnovationLaw,
    pub burn_in: usize,
}

fn serialize_matrix<S: Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    matrix_rows(m).serialize(s)
}

impl<'de> Deserialize<'de> for Ar1PanelSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            mu: Vec<f64>,
            rho_x: f64,
            sigma_nu: Vec<Vec<f64>>,
            innovation: InnovationLaw,
            burn_in: usize,
        }
        let w = Wire::deserialize(d)?;
        let sigma = matrix_from_rows(&w.sigma_nu).map_err(D::Error::custom)?;
        let spec = Ar1PanelSpec {
            mu: w.mu,
            rho_x: w.rho_x,
            sigma_nu: sigma,
            innovation: w.innovation,
            burn_in: w.burn_in,
        };
        spec.validate().map_err(D::Error::custom)?;
        Ok(spec)
    }
}

impl Ar1PanelSpec {
    /// Standard simulation design: Toeplitz innovation covariance
    /// rho_nu^|i-j|, burn-in 200.
    pub fn toeplitz(
        mu: Vec<f64>,
        rho_x: f64,
        rho_nu: f64,
        innovation: InnovationLaw,
    ) -> Result<Self> {
        let n = mu.len();
        let sigma_nu = toeplitz_cov(n, rho_nu);
        let spec = Ar1PanelSpec {
            mu,
            rho_x,
            sigma_nu,
            innovation,
            burn_in: 200,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mu.len();
        if n == 0 {
            return Err(Error::spec("mean vector must be non-empty"));
        }
        if !(self.rho_x.abs() < 1.0) {
            return Err(Error::spec(format!(
                "autoregressive coefficient {} outside (-1, 1)",
                self.rho_x
            )));
        }
        if self.sigma_nu.shape() != (n, n) {
            return Err(Error::spec("innovation covariance dimension mismatch"));
        }
        let asym = (&self.sigma_nu - self.sigma_nu.transpose()).amax();
        if asym > 1e-8 * (1.0 + self.sigma_nu.amax()) {
            return Err(Error::spec("innovation covariance is not symmetric"));
        }
        Ok(())
    }
}

/// Toeplitz correlation matrix with entries rho^|i-j|.
pub fn toeplitz_cov(n: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| rho.powi((i as i64 - j as i64).unsigned_abs() as i32))
}

/// Simulates the AR(1) panel, discarding `burn_in` initial periods.
/// The state starts at zero; the innovation covariance square root is the
/// symmetric PSD root.
pub fn simulate_ar1_panel(spec: &Ar1PanelSpec, t_len: usize, seed: u64) -> Result<Panel> {
    spec.validate()?;
    if t_len == 0 {
        return Err(Error::input("T must be at least 1"));
    }
    let n = spec.mu.len();
    let eig = nalgebra::SymmetricEigen::new(spec.sigma_nu.clone());
    let max_ev = eig.eigenvalues.amax();
    let min_ev = eig.eigenvalues.min();
    if min_ev < -1e-8 * max_ev.max(1.0) {
        return Err(Error::spec(format!(
            "innovation covariance is not PSD (min eigenvalue {min_ev:.3e})"
        )));
    }
    let s_half = crate::longrun::psd_sqrt(&spec.sigma_nu)?;
    let mu = DVector::from_vec(spec.mu.clone());
    let mut rng = stream(seed, 0, Component::Innovations);
    let mut x = DVector::zeros(n);
    let mut nu = DVector::zeros(n);
    let mut out = DMatrix::zeros(n, t_len);
    for t in 0..spec.burn_in + t_len {
        for i in 0..n {
            nu[i] = spec.innovation.sample(&mut rng);
        }
        x = &mu + spec.rho_x * &x + &s_half * &nu;
        if t >= spec.burn_in {
            out.set_column(t - spec.burn_in, &x);
        }
    }
    Panel::from_matrix(out)
}

/// Skewness correction coefficient for the standardized panel-sum statistic:
/// kappa3 / (sigma_x^{3/2} L_N^{3/2} T^{1/2}) * sum_j (column sum of B)_j^3,
/// with sigma_x^2 = (1/L_N) 1' B B' 1.
pub fn edgeworth_beta3_star(spec: &HdmaSpec, t_len: usize, l_n: f64) -> Result<f64> {
    if t_len == 0 {
        return Err(Error::input("T must be at least 1"));
    }
    if !(l_n > 0.0) {
        return Err(Error::input("L_N must be positive"));
    }
    let kappa3 = spec.innovation().third_cumulant().ok_or_else(|| {
        Error::spec("third cumulant unknown for custom innovation laws")
    })?;
    let b = spec.coefficient_sum();
    let col_sums: Vec<f64> = (0..b.ncols()).map(|j| b.column(j).sum()).collect();
    let sigma_x2 = col_sums.iter().map(|c| c * c).sum::<f64>() / l_n;
    if sigma_x2 <= 0.0 {
        return Err(Error::numerical(
            "degenerate variance: column sums of the filter sum vanish",
        ));
    }
    let sigma_x = sigma_x2.sqrt();
    let cubic: f64 = col_sums.iter().map(|c| c.powi(3)).sum();
    Ok(kappa3 / (sigma_x.powf(1.5) * l_n.powf(1.5) * (t_len as f64).sqrt()) * cubic)
}
