//! Inference for short panels with serially and cross-sectionally dependent
//! errors: an L-infinity test for equality of unit means backed by a
//! Gaussian multiplier bootstrap, dependent wild bootstrap confidence
//! intervals, mean-based grouping, a slope-heterogeneity test for common
//! correlated effects regressions, and the Monte Carlo harness exercising
//! all of it.
//!
//! Entry points:
//! - [`panel::Panel`] holds a (possibly unbalanced) N x T panel.
//! - [`homogeneity::test_homogeneity`] tests equality of unit means.
//! - [`homogeneity::infer_unit_means`] builds per-unit confidence intervals.
//! - [`grouping::group_panel`] clusters units by mean with an IC-selected
//!   group count.
//! - [`cce::cce_heterogeneity_test`] tests slope homogeneity in a panel
//!   regression with common factors.
//! - [`harness::run_experiment`] reproduces the simulation studies.

pub mod bootstrap;
pub mod cce;
pub mod dgp;
pub mod error;
pub mod grouping;
pub mod harness;
pub mod homogeneity;
pub mod kernel;
pub mod longrun;
pub mod panel;
pub mod rng;

pub use bootstrap::{
    bootstrap_heterogeneous, bootstrap_homogeneous, draw_multipliers, gaussian_multiplier_max,
    wild_bootstrap_engine, BootstrapDraws, MultiplierSpec,
};
pub use cce::{cce_fit, cce_heterogeneity_test, CceFit, CcePanelData};
pub use dgp::{
    edgeworth_beta3_star, hdma_autocovariance, simulate_ar1_panel, simulate_hdma,
    simulate_unit_root, Ar1PanelSpec, HdmaSpec, InnovationLaw,
};
pub use error::{Error, Result};
pub use grouping::{group_fixed_j, group_panel, select_j, GroupingResult};
pub use harness::{
    emit_table, mse_bandwidth_experiment, parse_table_csv, run_experiment,
    run_experiment_with_checkpoint, Experiment, ExperimentConfig, ResultRow, ResultTable, Scale,
    Scenario, TableFormat,
};
pub use homogeneity::{
    infer_unit_means, q_statistic, test_homogeneity, test_regression_heterogeneity, TestReport,
    UnitCi,
};
pub use kernel::{default_bandwidth, KernelFamily, KernelSpec};
pub use longrun::{hac_matrix, hac_matrix_unbalanced, hac_scalar, optimal_bandwidth, psd_sqrt, LongRunMatrix};
pub use panel::{load_panel, save_panel, DependenceSummary, Layout, Panel};
