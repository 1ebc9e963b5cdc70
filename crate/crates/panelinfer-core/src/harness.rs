//! Monte Carlo experiment runner: the three simulation designs, the
//! unit-root moment check, and the bandwidth MSE experiment, with
//! deterministic per-replicate seeding, checkpoint/resume, and table output.
//!
//! Seeding: master seed -> per-replicate stream -> per-component substreams
//! (innovations, factors, loadings, multipliers, reference draws), so adding
//! a component never perturbs existing streams and any single replicate can
//! be reproduced in isolation.

use crate::bootstrap::{bootstrap_heterogeneous, bootstrap_homogeneous, MultiplierSpec};
use crate::cce::{cce_heterogeneity_test, CcePanelData};
use crate::dgp::{
    simulate_ar1_panel, simulate_hdma, simulate_unit_root, toeplitz_cov, Ar1PanelSpec, HdmaSpec,
    InnovationLaw,
};
use crate::error::{Error, Result};
use crate::homogeneity::test_homogeneity;
use crate::kernel::{default_bandwidth, KernelFamily, KernelSpec};
use crate::panel::Panel;
use crate::rng::{replicate_seed, stream, Component};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Experiment family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// Size and power of the mean-homogeneity test on the AR(1) panel.
    Sim1,
    /// Coverage of homogeneous and per-unit bootstrap confidence intervals.
    Sim2,
    /// Size and power of the slope-heterogeneity test in the factor model.
    Sim3,
    /// Unit-root second-moment convergence check.
    Prop3,
    /// User-supplied statistic through [`MeanTest`].
    Custom,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Sim1 => "sim1",
            Experiment::Sim2 => "sim2",
            Experiment::Sim3 => "sim3",
            Experiment::Prop3 => "prop3",
            Experiment::Custom => "custom",
        })
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim1" => Ok(Experiment::Sim1),
            "sim2" => Ok(Experiment::Sim2),
            "sim3" => Ok(Experiment::Sim3),
            "prop3" => Ok(Experiment::Prop3),
            "custom" => Ok(Experiment::Custom),
            other => Err(Error::input(format!(
                "unknown experiment '{other}'; expected sim1, sim2, sim3, prop3, or custom"
            ))),
        }
    }
}

/// Mean-shift scenario: (a) none, (b) local 4/sqrt(T) on the first unit,
/// (c) fixed shift 1 on the first unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    A,
    B,
    C,
}

impl Scenario {
    /// First-unit shift for the given sample length.
    pub fn first_unit_shift(&self, t: usize) -> f64 {
        match self {
            Scenario::A => 0.0,
            Scenario::B => 4.0 / (t as f64).sqrt(),
            Scenario::C => 1.0,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::A => "a",
            Scenario::B => "b",
            Scenario::C => "c",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Scenario::A),
            "b" => Ok(Scenario::B),
            "c" => Ok(Scenario::C),
            other => Err(Error::input(format!(
                "unknown scenario '{other}'; expected a, b, or c"
            ))),
        }
    }
}

/// Compute-scale preset. Desk keeps runs inside a small CI budget
/// (N <= 50, T <= 150, R_mc <= 500, R_boot <= 199); full mirrors the
/// large-scale study settings (R_mc = 1000, R_boot = 399).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        })
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(Error::input(format!(
                "unknown scale '{other}'; expected desk or full"
            ))),
        }
    }
}

/// Full experiment configuration; serializable for config files and
/// checkpoint fingerprinting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Innovation case: 1 = gauss, 2 = t8, 3 = gamma22_centered.
    pub case: u8,
    pub scenario: Scenario,
    /// Innovation cross-correlation decay (Toeplitz rho^|i-j|).
    pub rho_nu: f64,
    /// AR(1) coefficient of the simulated processes.
    pub rho_x: f64,
    pub n: usize,
    pub t: usize,
    pub r_mc: usize,
    pub r_boot: usize,
    pub kernel: KernelFamily,
    pub seed: u64,
    pub scale: Scale,
}

impl ExperimentConfig {
    /// Small-budget preset per experiment.
    pub fn desk(experiment: Experiment) -> Self {
        let base = ExperimentConfig {
            experiment,
            case: 1,
            scenario: Scenario::A,
            rho_nu: 0.5,
            rho_x: 0.3,
            n: 30,
            t: 100,
            r_mc: 500,
            r_boot: 199,
            kernel: KernelFamily::Bartlett,
            seed: 1,
            scale: Scale::Desk,
        };
        match experiment {
            Experiment::Sim1 | Experiment::Sim2 | Experiment::Custom => base,
            Experiment::Sim3 => ExperimentConfig {
                n: 40,
                r_mc: 300,
                ..base
            },
            Experiment::Prop3 => ExperimentConfig {
                n: 50,
                t: 150,
                r_mc: 200,
                ..base
            },
        }
    }

    /// Large-scale preset mirroring the published study settings.
    pub fn full(experiment: Experiment) -> Self {
        let base = ExperimentConfig {
            experiment,
            case: 1,
            scenario: Scenario::A,
            rho_nu: 0.5,
            rho_x: 0.3,
            n: 100,
            t: 200,
            r_mc: 1000,
            r_boot: 399,
            kernel: KernelFamily::Bartlett,
            seed: 1,
            scale: Scale::Full,
        };
        match experiment {
            Experiment::Sim1 | Experiment::Sim2 | Experiment::Custom => base,
            Experiment::Sim3 => ExperimentConfig { t: 150, ..base },
            Experiment::Prop3 => ExperimentConfig {
                n: 200,
                t: 200,
                r_mc: 1000,
                ..base
            },
        }
    }

    pub fn innovation(&self) -> Result<InnovationLaw> {
        match self.case {
            1 => Ok(InnovationLaw::Gauss),
            2 => Ok(InnovationLaw::T8),
            3 => Ok(InnovationLaw::Gamma22Centered),
            other => Err(Error::input(format!(
                "innovation case must be 1, 2, or 3; got {other}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.innovation()?;
        if self.n < 2 {
            return Err(Error::input("need at least 2 units"));
        }
        if self.t < 8 {
            return Err(Error::input("need at least T = 8"));
        }
        if self.r_mc == 0 || self.r_boot == 0 {
            return Err(Error::input("replication counts must be positive"));
        }
        if !(self.rho_x.abs() < 1.0) || !(self.rho_nu.abs() < 1.0) {
            return Err(Error::input("autocorrelation parameters must lie in (-1, 1)"));
        }
        if self.scale == Scale::Desk
            && (self.n > 50 || self.t > 150 || self.r_mc > 500 || self.r_boot > 199)
        {
            return Err(Error::input(
                "desk scale caps N <= 50, T <= 150, R_mc <= 500, R_boot <= 199; \
                 use scale full for larger runs",
            ));
        }
        Ok(())
    }

    fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel, default_bandwidth(self.t))
    }
}

/// One long-format result cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub case: u8,
    pub scenario: String,
    pub n: usize,
    pub t: usize,
    pub rho_nu: f64,
    pub measure: String,
    pub value: f64,
    pub mc_se: f64,
}

/// Result rows plus any non-fatal warnings (e.g. discarded checkpoints).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub warnings: Vec<String>,
}

impl ResultTable {
    fn push(&mut self, cfg: &ExperimentConfig, measure: &str, value: f64, mc_se: f64) {
        self.rows.push(ResultRow {
            experiment: cfg.experiment.to_string(),
            case: cfg.case,
            scenario: cfg.scenario.to_string(),
            n: cfg.n,
            t: cfg.t,
            rho_nu: cfg.rho_nu,
            measure: measure.to_string(),
            value,
            mc_se,
        });
    }

    fn push_rate(&mut self, cfg: &ExperimentConfig, measure: &str, rate: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::numerical(format!(
                "rate {rate} for '{measure}' outside [0, 1]"
            )));
        }
        self.push(cfg, measure, rate, mc_standard_error(rate, cfg.r_mc));
        Ok(())
    }

    /// Value of the first row with this measure, if present.
    pub fn value(&self, measure: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.measure == measure).map(|r| r.value)
    }
}

/// Binomial Monte Carlo standard error sqrt(r (1 - r) / R).
pub fn mc_standard_error(rate: f64, r_mc: usize) -> f64 {
    (rate * (1.0 - rate) / r_mc as f64).sqrt()
}

const CHECKPOINT_CHUNK: usize = 64;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    fingerprint: u64,
    outcomes: Vec<(usize, Vec<f64>)>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn config_fingerprint(cfg: &ExperimentConfig) -> u64 {
    let json = serde_json::to_string(cfg).expect("config serializes");
    fnv1a(json.as_bytes())
}

fn load_checkpoint(
    path: &Path,
    fingerprint: u64,
    warnings: &mut Vec<String>,
) -> BTreeMap<usize, Vec<f64>> {
    if !path.exists() {
        return BTreeMap::new();
    }
    match std::fs::read_to_string(path)
        .map_err(|e| e.to_string())
        .and_then(|s| serde_json::from_str::<Checkpoint>(&s).map_err(|e| e.to_string()))
    {
        Ok(ck) if ck.fingerprint == fingerprint => ck.outcomes.into_iter().collect(),
        Ok(_) => {
            warnings.push(format!(
                "checkpoint {} belongs to a different configuration; starting fresh",
                path.display()
            ));
            BTreeMap::new()
        }
        Err(e) => {
            warnings.push(format!(
                "checkpoint {} is unreadable ({e}); starting fresh",
                path.display()
            ));
            BTreeMap::new()
        }
    }
}

fn store_checkpoint(path: &Path, fingerprint: u64, outcomes: &BTreeMap<usize, Vec<f64>>) -> Result<()> {
    let ck = Checkpoint {
        fingerprint,
        outcomes: outcomes.iter().map(|(k, v)| (*k, v.clone())).collect(),
    };
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_string(&ck).expect("checkpoint serializes"))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Simulation-1 panel: AR(1) with Toeplitz innovation covariance and the
/// scenario's first-unit shift entering as the AR intercept, so the unit's
/// stationary mean is shift/(1 - rho_x).
fn sim1_panel(cfg: &ExperimentConfig, t_len: usize, seed: u64) -> Result<Panel> {
    let mut mu = vec![0.0; cfg.n];
    mu[0] = cfg.scenario.first_unit_shift(cfg.t);
    let spec = Ar1PanelSpec::toeplitz(mu, cfg.rho_x, cfg.rho_nu, cfg.innovation()?)?;
    simulate_ar1_panel(&spec, t_len, seed)
}

fn run_sim1_rep(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<f64>> {
    let seed = replicate_seed(cfg.seed, rep as u64);
    let p = sim1_panel(cfg, cfg.t, seed)?;
    let report = test_homogeneity(&p, &cfg.kernel_spec()?, cfg.r_boot, &[0.90, 0.95, 0.99], seed)?;
    Ok(report
        .decisions
        .iter()
        .map(|&(_, d)| if d { 1.0 } else { 0.0 })
        .collect())
}

fn reduce_sim1(cfg: &ExperimentConfig, outcomes: &BTreeMap<usize, Vec<f64>>) -> Result<ResultTable> {
    let mut table = ResultTable::default();
    for (idx, label) in ["delta_test_90", "delta_test_95", "delta_test_99"]
        .iter()
        .enumerate()
    {
        let rate = outcomes.values().map(|v| v[idx]).sum::<f64>() / outcomes.len() as f64;
        table.push_rate(cfg, label, rate)?;
    }
    Ok(table)
}

/// True long-run scaling constants of the Simulation-1 design, used to form
/// infeasible pivots: the cross-sectional sum has long-run variance
/// 1' Sigma_nu 1 / (1 - rho_x)^2 and each unit has 1 / (1 - rho_x)^2.
fn sim2_truth(cfg: &ExperimentConfig) -> (f64, f64) {
    let sigma = toeplitz_cov(cfg.n, cfg.rho_nu);
    let total: f64 = sigma.iter().sum();
    let denom = (1.0 - cfg.rho_x) * (1.0 - cfg.rho_x);
    (total / denom, 1.0 / denom)
}

fn run_sim2_rep(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<f64>> {
    let seed = replicate_seed(cfg.seed, rep as u64);
    let p = sim1_panel(cfg, cfg.t, seed)?;
    let t = cfg.t as f64;
    let (lrv_sum, lrv_unit) = sim2_truth(cfg);
    let mut mu_true = vec![0.0; cfg.n];
    // The scenario shift is the AR intercept; the stationary mean divides
    // out the autoregressive factor.
    mu_true[0] = cfg.scenario.first_unit_shift(cfg.t) / (1.0 - cfg.rho_x);

    let spec = MultiplierSpec::new(cfg.kernel_spec()?, cfg.t)?;
    let alpha = 0.05;

    // Homogeneous pivot: standardized total sum around the true means.
    let mut total = 0.0;
    for i in 0..cfg.n {
        for s in 0..cfg.t {
            total += p.values()[(i, s)] - mu_true[i];
        }
    }
    let s_obs = total / (lrv_sum * t).sqrt();
    let hom = bootstrap_homogeneous(&p, None, &spec, cfg.r_boot, seed, true)?;
    let hom_miss = if hom.is_degenerate() {
        1.0
    } else {
        let hi = hom.quantile(1.0 - alpha / 2.0)?;
        let lo = hom.lower_quantile(alpha / 2.0)?;
        if s_obs < lo || s_obs > hi {
            1.0
        } else {
            0.0
        }
    };

    // Per-unit pivots share the same multiplier paths via the same seed.
    let mut out = Vec::with_capacity(cfg.n + 1);
    out.push(hom_miss);
    for i in 0..cfg.n {
        let mut unit_sum = 0.0;
        for s in 0..cfg.t {
            unit_sum += p.values()[(i, s)] - mu_true[i];
        }
        let t_i_obs = unit_sum / (lrv_unit * t).sqrt();
        let het = bootstrap_heterogeneous(&p, i, None, &spec, cfg.r_boot, seed, true)?;
        let miss = if het.is_degenerate() {
            1.0
        } else {
            let hi = het.quantile(1.0 - alpha / 2.0)?;
            let lo = het.lower_quantile(alpha / 2.0)?;
            if t_i_obs < lo || t_i_obs > hi {
                1.0
            } else {
                0.0
            }
        };
        out.push(miss);
    }
    Ok(out)
}

fn reduce_sim2(cfg: &ExperimentConfig, outcomes: &BTreeMap<usize, Vec<f64>>) -> Result<ResultTable> {
    let r_mc = outcomes.len() as f64;
    let hom_rate = outcomes.values().map(|v| v[0]).sum::<f64>() / r_mc;
    let mut unit_rates = vec![0.0; cfg.n];
    for v in outcomes.values() {
        for i in 0..cfg.n {
            unit_rates[i] += v[i + 1];
        }
    }
    for r in unit_rates.iter_mut() {
        *r /= r_mc;
    }
    let delta_he = unit_rates.iter().sum::<f64>() / cfg.n as f64;
    let sd_he = (unit_rates
        .iter()
        .map(|r| (r - delta_he) * (r - delta_he))
        .sum::<f64>()
        / cfg.n as f64)
        .sqrt();
    let mut table = ResultTable::default();
    table.push_rate(cfg, "delta_hm", hom_rate)?;
    table.push_rate(cfg, "delta_he", delta_he)?;
    table.push(cfg, "sd_he", sd_he, 0.0);
    Ok(table)
}

/// Simulation-3 data: y_it = theta_i w_it + gamma_i f_t + e_it with
/// w_it = Gamma_i f_t + v_it and v_it the lagged e. The idiosyncratic e
/// follows the Simulation-1 process with the configured case.
fn sim3_data(cfg: &ExperimentConfig, seed: u64) -> Result<CcePanelData> {
    let n = cfg.n;
    let t = cfg.t;
    let eps_spec = Ar1PanelSpec::toeplitz(vec![0.0; n], cfg.rho_x, cfg.rho_nu, cfg.innovation()?)?;
    // One extra period so v_it = e_{i,t-1} is observed from the start.
    let eps_full = simulate_ar1_panel(&eps_spec, t + 1, seed)?;
    let mut f_rng = stream(seed, 0, Component::Factors);
    let f: Vec<f64> = (0..t)
        .map(|_| f_rng.sample::<f64, _>(StandardNormal) * 1.5f64.sqrt())
        .collect();
    let mut l_rng = stream(seed, 0, Component::Loadings);
    let gamma: Vec<f64> = (0..n)
        .map(|_| 0.8 + l_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let big_gamma: Vec<f64> = (0..n)
        .map(|_| -0.2 + 2.0f64.sqrt() * l_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut theta = vec![1.0; n];
    theta[0] = match cfg.scenario {
        Scenario::A => 1.0,
        Scenario::B => 1.0 + 4.0 / (t as f64).sqrt(),
        Scenario::C => 2.0,
    };
    let mut w = DMatrix::zeros(n, t);
    let mut y = DMatrix::zeros(n, t);
    for i in 0..n {
        for s in 0..t {
            let v = eps_full.values()[(i, s)];
            let e = eps_full.values()[(i, s + 1)];
            let w_is = big_gamma[i] * f[s] + v;
            w[(i, s)] = w_is;
            y[(i, s)] = theta[i] * w_is + gamma[i] * f[s] + e;
        }
    }
    CcePanelData::new(Panel::from_matrix(y)?, vec![Panel::from_matrix(w)?])
}

fn run_sim3_rep(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<f64>> {
    let seed = replicate_seed(cfg.seed, rep as u64);
    let d = sim3_data(cfg, seed)?;
    let report =
        cce_heterogeneity_test(&d, 1, &cfg.kernel_spec()?, cfg.r_boot, &[0.90, 0.95, 0.99], seed)?;
    Ok(report
        .decisions
        .iter()
        .map(|&(_, d)| if d { 1.0 } else { 0.0 })
        .collect())
}

fn reduce_sim3(cfg: &ExperimentConfig, outcomes: &BTreeMap<usize, Vec<f64>>) -> Result<ResultTable> {
    let mut table = ResultTable::default();
    for (idx, label) in ["delta_q_90", "delta_q_95", "delta_q_99"].iter().enumerate() {
        let rate = outcomes.values().map(|v| v[idx]).sum::<f64>() / outcomes.len() as f64;
        table.push_rate(cfg, label, rate)?;
    }
    Ok(table)
}

/// Moving-average filter used by the unit-root check: B_0 = I, B_1 = I/2,
/// so the squared Frobenius norm of B over N is 2.25.
fn prop3_spec(cfg: &ExperimentConfig) -> Result<HdmaSpec> {
    let n = cfg.n;
    let b0 = DMatrix::identity(n, n);
    let b1 = DMatrix::identity(n, n) * 0.5;
    HdmaSpec::new(vec![0.0; n], vec![b0, b1], cfg.innovation()?, 0)
}

fn run_prop3_rep(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<f64>> {
    let seed = replicate_seed(cfg.seed, rep as u64);
    let spec = prop3_spec(cfg)?;
    let y = simulate_unit_root(&spec, cfg.t, seed)?;
    let nt2 = cfg.n as f64 * (cfg.t as f64) * (cfg.t as f64);
    let moment = y.values().iter().map(|v| v * v).sum::<f64>() / nt2;
    Ok(vec![moment])
}

fn reduce_prop3(cfg: &ExperimentConfig, outcomes: &BTreeMap<usize, Vec<f64>>) -> Result<ResultTable> {
    let r_mc = outcomes.len() as f64;
    let mean = outcomes.values().map(|v| v[0]).sum::<f64>() / r_mc;
    let var = outcomes
        .values()
        .map(|v| (v[0] - mean) * (v[0] - mean))
        .sum::<f64>()
        / r_mc;
    let spec = prop3_spec(cfg)?;
    let b = spec.coefficient_sum();
    let target = b.iter().map(|v| v * v).sum::<f64>() / cfg.n as f64 / 2.0;
    let mut table = ResultTable::default();
    table.push(cfg, "unit_root_moment", mean, (var / r_mc).sqrt());
    table.push(cfg, "unit_root_target", target, 0.0);
    Ok(table)
}

/// External test statistic hook for comparison studies: decide on one panel.
pub trait MeanTest: Sync {
    fn name(&self) -> &str;
    fn decide(
        &self,
        p: &Panel,
        kernel: &KernelSpec,
        r_boot: usize,
        level: f64,
        seed: u64,
    ) -> Result<bool>;
}

/// Runs the Simulation-1 design against a user-supplied statistic.
pub fn run_custom_experiment(cfg: &ExperimentConfig, test: &dyn MeanTest) -> Result<ResultTable> {
    cfg.validate()?;
    let kernel = cfg.kernel_spec()?;
    let rejections: Vec<f64> = (0..cfg.r_mc)
        .into_par_iter()
        .map(|rep| {
            let seed = replicate_seed(cfg.seed, rep as u64);
            let p = sim1_panel(cfg, cfg.t, seed)?;
            Ok(if test.decide(&p, &kernel, cfg.r_boot, 0.95, seed)? {
                1.0
            } else {
                0.0
            })
        })
        .collect::<Result<_>>()?;
    let rate = rejections.iter().sum::<f64>() / cfg.r_mc as f64;
    let mut table = ResultTable::default();
    table.push_rate(cfg, &format!("delta_{}_95", test.name()), rate)?;
    Ok(table)
}

/// Runs the configured experiment, optionally checkpointing every chunk of
/// replicates so an interrupted run resumes where it stopped. A checkpoint
/// from a different configuration or a corrupt file is discarded with a
/// warning in the returned table.
pub fn run_experiment_with_checkpoint(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
) -> Result<ResultTable> {
    cfg.validate()?;
    let run_rep: fn(&ExperimentConfig, usize) -> Result<Vec<f64>> = match cfg.experiment {
        Experiment::Sim1 => run_sim1_rep,
        Experiment::Sim2 => run_sim2_rep,
        Experiment::Sim3 => run_sim3_rep,
        Experiment::Prop3 => run_prop3_rep,
        Experiment::Custom => {
            return Err(Error::spec(
                "custom experiments need a statistic; use run_custom_experiment",
            ))
        }
    };
    let fingerprint = config_fingerprint(cfg);
    let mut warnings = Vec::new();
    let mut outcomes = match checkpoint {
        Some(path) => load_checkpoint(path, fingerprint, &mut warnings),
        None => BTreeMap::new(),
    };
    outcomes.retain(|&rep, _| rep < cfg.r_mc);
    let pending: Vec<usize> = (0..cfg.r_mc).filter(|r| !outcomes.contains_key(r)).collect();
    for chunk in pending.chunks(CHECKPOINT_CHUNK) {
        let done: Vec<(usize, Vec<f64>)> = chunk
            .par_iter()
            .map(|&rep| run_rep(cfg, rep).map(|v| (rep, v)))
            .collect::<Result<_>>()?;
        outcomes.extend(done);
        if let Some(path) = checkpoint {
            store_checkpoint(path, fingerprint, &outcomes)?;
        }
    }
    let mut table = match cfg.experiment {
        Experiment::Sim1 => reduce_sim1(cfg, &outcomes)?,
        Experiment::Sim2 => reduce_sim2(cfg, &outcomes)?,
        Experiment::Sim3 => reduce_sim3(cfg, &outcomes)?,
        Experiment::Prop3 => reduce_prop3(cfg, &outcomes)?,
        Experiment::Custom => unreachable!(),
    };
    table.warnings.append(&mut warnings);
    Ok(table)
}

/// Runs the configured experiment without checkpointing.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    run_experiment_with_checkpoint(cfg, None)
}

/// Closed-form truth for the bandwidth experiment's scalar MA design with
/// weights b_l = (1 - rho) rho^l: returns (long-run variance, first-order
/// curvature Delta_1 = 2 sum_s s gamma(s)).
pub fn ma_design_truth(rho: f64, order: usize) -> (f64, f64) {
    let b: Vec<f64> = (0..=order).map(|l| (1.0 - rho) * rho.powi(l as i32)).collect();
    let total: f64 = b.iter().sum();
    let sigma2 = total * total;
    let mut delta = 0.0;
    for s in 1..=order {
        let gamma: f64 = (0..=order - s).map(|l| b[l] * b[l + s]).sum();
        delta += 2.0 * s as f64 * gamma;
    }
    (sigma2, delta)
}

/// Empirical MSE of the kernel variance estimator across a bandwidth grid,
/// on the scalar MA design above (rho = 0.5, order 80, known zero mean).
///
/// Each replicate computes raw autocovariances once up to max(m_grid) and
/// reuses them for every bandwidth; the estimator equals `hac_scalar`
/// without demeaning. Emits one MSE row per bandwidth, the empirical
/// minimizer, and the continuous MSE-formula bandwidth.
pub fn mse_bandwidth_experiment(cfg: &ExperimentConfig, m_grid: &[usize]) -> Result<ResultTable> {
    cfg.validate()?;
    if m_grid.is_empty() {
        return Err(Error::input("bandwidth grid must be non-empty"));
    }
    let m_max = *m_grid.iter().max().unwrap();
    if m_max >= cfg.t {
        return Err(Error::input(format!(
            "largest grid bandwidth {m_max} must be below T = {}",
            cfg.t
        )));
    }
    let rho = 0.5;
    let order = 80;
    let (sigma2, delta) = ma_design_truth(rho, order);
    let coeffs: Vec<DMatrix<f64>> = (0..=order)
        .map(|l| DMatrix::from_element(1, 1, (1.0 - rho) * rho.powi(l as i32)))
        .collect();
    let spec = HdmaSpec::new(vec![0.0], coeffs, cfg.innovation()?, 0)?;
    let t = cfg.t;

    let sq_errors: Vec<Vec<f64>> = (0..cfg.r_mc)
        .into_par_iter()
        .map(|rep| {
            let seed = replicate_seed(cfg.seed, rep as u64);
            let p = simulate_hdma(&spec, t, seed)?;
            let x: Vec<f64> = (0..t).map(|s| p.values()[(0, s)]).collect();
            // Raw autocovariances (zero mean known by design).
            let mut gamma = vec![0.0; m_max + 1];
            for k in 0..=m_max {
                gamma[k] = (k..t).map(|s| x[s] * x[s - k]).sum::<f64>() / t as f64;
            }
            let errs = m_grid
                .iter()
                .map(|&m| {
                    let mut v = gamma[0];
                    for k in 1..=m {
                        v += 2.0 * crate::kernel::kernel_eval(cfg.kernel, k as f64 / m as f64)
                            * gamma[k];
                    }
                    let e = v.max(0.0) - sigma2;
                    e * e
                })
                .collect();
            Ok(errs)
        })
        .collect::<Result<_>>()?;

    let r_mc = cfg.r_mc as f64;
    let mut table = ResultTable::default();
    let mut best = (m_grid[0], f64::INFINITY);
    for (j, &m) in m_grid.iter().enumerate() {
        let mean = sq_errors.iter().map(|v| v[j]).sum::<f64>() / r_mc;
        let var = sq_errors
            .iter()
            .map(|v| (v[j] - mean) * (v[j] - mean))
            .sum::<f64>()
            / r_mc;
        table.push(cfg, &format!("mse_m{m}"), mean, (var / r_mc).sqrt());
        if mean < best.1 {
            best = (m, mean);
        }
    }
    table.push(cfg, "empirical_minimizer", best.0 as f64, 0.0);
    let q = cfg.kernel.smoothness_order() as f64;
    let c = cfg.kernel.curvature_constant();
    let ia2 = cfg.kernel.squared_integral();
    let m_formula = (c * delta.abs() / (2.0 * sigma2 * sigma2 * ia2)).powf(2.0 / (2.0 * q + 1.0))
        * (t as f64).powf(1.0 / (2.0 * q + 1.0));
    table.push(cfg, "formula_bandwidth", m_formula, 0.0);
    for row in table.rows.iter_mut() {
        row.experiment = "bandwidth-mse".to_string();
    }
    Ok(table)
}

/// Output format for [`emit_table`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            "markdown" => Ok(TableFormat::Markdown),
            other => Err(Error::input(format!(
                "unknown table format '{other}'; expected csv, json, or markdown"
            ))),
        }
    }
}

const CSV_HEADER: [&str; 9] = [
    "experiment",
    "case",
    "scenario",
    "n",
    "t",
    "rho_nu",
    "measure",
    "value",
    "mc_se",
];

/// Serializes a table. CSV and JSON are lossless for the rows (JSON also
/// carries warnings); markdown is for eyeballing.
pub fn emit_table(t: &ResultTable, format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Csv => {
            let mut wr = csv::Writer::from_writer(Vec::new());
            wr.write_record(CSV_HEADER)
                .map_err(|e| Error::parse("output", e.to_string()))?;
            for row in &t.rows {
                wr.write_record([
                    row.experiment.as_str(),
                    &row.case.to_string(),
                    &row.scenario,
                    &row.n.to_string(),
                    &row.t.to_string(),
                    &format!("{}", row.rho_nu),
                    &row.measure,
                    &format!("{}", row.value),
                    &format!("{}", row.mc_se),
                ])
                .map_err(|e| Error::parse("output", e.to_string()))?;
            }
            let bytes = wr.into_inner().map_err(|e| Error::parse("output", e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::parse("output", e.to_string()))
        }
        TableFormat::Json => serde_json::to_string_pretty(t)
            .map_err(|e| Error::parse("output", e.to_string())),
        TableFormat::Markdown => {
            let mut out = String::new();
            out.push_str("| experiment | case | scenario | N | T | rho_nu | measure | value | mc_se |\n");
            out.push_str("|---|---|---|---|---|---|---|---|---|\n");
            for row in &t.rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {:.4} | {:.4} |\n",
                    row.experiment,
                    row.case,
                    row.scenario,
                    row.n,
                    row.t,
                    row.rho_nu,
                    row.measure,
                    row.value,
                    row.mc_se
                ));
            }
            for w in &t.warnings {
                out.push_str(&format!("\nWarning: {w}\n"));
            }
            Ok(out)
        }
    }
}

/// Parses the CSV emitted by [`emit_table`] back into a table
/// (warnings are not carried by CSV).
pub fn parse_table_csv(text: &str) -> Result<ResultTable> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let headers = rd
        .headers()
        .map_err(|e| Error::parse("header", e.to_string()))?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != CSV_HEADER {
        return Err(Error::parse("header", "unexpected result-table columns"));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::parse("row", e.to_string()))?;
        let field = |k: usize| rec[k].to_string();
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| Error::parse("row", format!("non-numeric field '{}'", &rec[k])))
        };
        rows.push(ResultRow {
            experiment: field(0),
            case: rec[1]
                .parse()
                .map_err(|_| Error::parse("row", "bad case"))?,
            scenario: field(2),
            n: rec[3].parse().map_err(|_| Error::parse("row", "bad n"))?,
            t: rec[4].parse().map_err(|_| Error::parse("row", "bad t"))?,
            rho_nu: num(5)?,
            measure: field(6),
            value: num(7)?,
            mc_se: num(8)?,
        });
    }
    Ok(ResultTable {
        rows,
        warnings: Vec::new(),
    })
}
