//! Command-line front end. Every subcommand is a thin adapter: parse
//! arguments, call one library entry point, serialize the result.

use clap::{Args, Parser, Subcommand, ValueEnum};
use panelinfer_core::harness::{
    emit_table, mse_bandwidth_experiment, run_experiment_with_checkpoint, Experiment,
    ExperimentConfig, Scale, Scenario, TableFormat,
};
use panelinfer_core::bootstrap::MultiplierSpec;
use panelinfer_core::homogeneity::{infer_unit_means, test_homogeneity, test_homogeneity_one_sided};
use panelinfer_core::kernel::{default_bandwidth, KernelFamily, KernelSpec};
use panelinfer_core::panel::{load_panel, Layout, Panel};
use panelinfer_core::rng::entropy_seed;
use panelinfer_core::{cce, grouping, Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "panelinfer",
    version,
    about = "Bootstrap inference for panel means and slopes under serial and cross-sectional dependence",
    after_help = "Exit codes: 0 success, 1 invalid statistical input, 2 usage error.\n\
                  Parallelism: set RAYON_NUM_THREADS to cap worker threads.\n\
                  Omitting --seed draws one from system entropy and echoes it on stderr."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test equality of unit means against a max-type bootstrap reference
    Test(TestArgs),
    /// Per-unit confidence intervals for unit means
    Infer(InferArgs),
    /// Group units by estimated mean with an IC-selected group count
    Group(GroupArgs),
    /// Slope-heterogeneity test for a regression with common factors
    CceTest(CceArgs),
    /// Run a Monte Carlo experiment and emit its result table
    Replicate(ReplicateArgs),
    /// Dependence diagnostics: pairwise correlation summary
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct PanelInput {
    /// Panel CSV path
    #[arg(long)]
    input: PathBuf,
    /// Input layout: long (unit,time,value) or wide (unit,<time...>)
    #[arg(long, default_value = "long")]
    layout: String,
}

impl PanelInput {
    fn load(&self) -> Result<Panel> {
        let layout = match self.layout.as_str() {
            "long" => Layout::Long,
            "wide" => Layout::Wide,
            other => {
                return Err(Error::input(format!(
                    "unknown layout '{other}'; expected long or wide"
                )))
            }
        };
        load_panel(&self.input, layout)
    }
}

#[derive(Args)]
struct KernelArgs {
    /// Smoothing kernel family
    #[arg(long, default_value = "bartlett")]
    kernel: KernelFamily,
    /// Kernel bandwidth; defaults to floor(1.75 T^(1/3))
    #[arg(long)]
    bandwidth: Option<usize>,
}

impl KernelArgs {
    fn spec(&self, t_len: usize) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel, self.bandwidth.unwrap_or_else(|| default_bandwidth(t_len)))
    }
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    panel: PanelInput,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Bootstrap replications
    #[arg(long, default_value_t = 399)]
    reps: usize,
    /// Confidence levels for critical values
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.90, 0.95, 0.99])]
    levels: Vec<f64>,
    /// RNG seed; omitted means drawn from entropy and echoed
    #[arg(long)]
    seed: Option<u64>,
    /// Use the signed (one-sided) max statistic
    #[arg(long)]
    one_sided: bool,
    /// Write the bootstrap draws to this CSV for histogramming
    #[arg(long)]
    draws_out: Option<PathBuf>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    panel: PanelInput,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value_t = 399)]
    reps: usize,
    /// Confidence level for the intervals
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GroupArgs {
    #[command(flatten)]
    panel: PanelInput,
    /// Largest group count scanned by the information criterion
    #[arg(long, default_value_t = 8)]
    max_groups: usize,
    /// IC penalty per group; defaults to 1/ln(N+T)
    #[arg(long)]
    penalty: Option<f64>,
    /// Fix the group count instead of selecting it
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CceArgs {
    /// Outcome panel CSV
    #[arg(long)]
    y: PathBuf,
    /// Regressor panel CSV (repeat for several regressors)
    #[arg(long = "w", required = true)]
    w: Vec<PathBuf>,
    /// Input layout for all panels: long or wide
    #[arg(long, default_value = "long")]
    layout: String,
    /// 1-based index of the coefficient under test
    #[arg(long, default_value_t = 1)]
    coef: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value_t = 399)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.90, 0.95, 0.99])]
    levels: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CliExperiment {
    Sim1,
    Sim2,
    Sim3,
    Prop3,
    BandwidthMse,
}

#[derive(Args)]
struct ReplicateArgs {
    /// Which study to run
    #[arg(long, value_enum)]
    experiment: CliExperiment,
    /// Compute scale preset
    #[arg(long, default_value = "desk")]
    scale: String,
    /// Innovation case: 1 gauss, 2 t8, 3 centered gamma
    #[arg(long)]
    case: Option<u8>,
    /// Mean/slope scenario: a, b, or c
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    rho_nu: Option<f64>,
    #[arg(long)]
    rho_x: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    r_mc: Option<usize>,
    #[arg(long)]
    r_boot: Option<usize>,
    #[arg(long)]
    kernel: Option<KernelFamily>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bandwidth grid for the bandwidth-mse experiment
    #[arg(long, value_delimiter = ',')]
    m_grid: Option<Vec<usize>>,
    /// Checkpoint file for resumable runs
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output format
    #[arg(long, default_value = "csv")]
    format: String,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    panel: PanelInput,
    /// Correlation thresholds for the exceedance curve
    #[arg(long, value_delimiter = ',')]
    tau_grid: Option<Vec<f64>>,
    /// Emit a tau,share CSV instead of JSON (rho_bar goes to stderr)
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let s = entropy_seed();
            eprintln!("seed: {s} (drawn from entropy)");
            s
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            Ok(())
        }
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            // A closed pipe downstream (e.g. `... | head`) is not an error.
            match writeln!(stdout, "{text}").and_then(|()| stdout.flush()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
                r => r.map_err(Into::into),
            }
        }
    }
}

fn run_test(args: &TestArgs) -> Result<()> {
    let p = args.panel.load()?;
    let spec = args.kernel.spec(p.n_times())?;
    let seed = resolve_seed(args.seed);
    let report = if args.one_sided {
        test_homogeneity_one_sided(&p, &spec, args.reps, &args.levels, seed)?
    } else {
        test_homogeneity(&p, &spec, args.reps, &args.levels, seed)?
    };
    if let Some(path) = &args.draws_out {
        let mut text = String::from("draw\n");
        if let Some(draws) = &report.draws {
            for v in draws.draws() {
                text.push_str(&format!("{v}\n"));
            }
        }
        std::fs::write(path, text)?;
    }
    let body = serde_json::json!({
        "schema_version": "1",
        "command": "test",
        "one_sided": args.one_sided,
        "report": report,
    });
    write_output(args.out.as_deref(), &serde_json::to_string_pretty(&body).expect("serializable"))
}

fn run_infer(args: &InferArgs) -> Result<()> {
    let p = args.panel.load()?;
    let kernel = args.kernel.spec(p.n_times())?;
    let spec = MultiplierSpec::new(kernel, p.n_times())?;
    let seed = resolve_seed(args.seed);
    let units = infer_unit_means(&p, &spec, args.reps, args.level, seed)?;
    let body = serde_json::json!({
        "schema_version": "1",
        "command": "infer",
        "seed": seed,
        "level": args.level,
        "kernel": kernel,
        "units": units,
    });
    write_output(args.out.as_deref(), &serde_json::to_string_pretty(&body).expect("serializable"))
}

fn run_group(args: &GroupArgs) -> Result<()> {
    let p = args.panel.load()?;
    let result = match args.groups {
        Some(j) => {
            let means = p.unit_means();
            grouping::group_fixed_j(means.as_slice(), j, 1, 0)?
        }
        None => {
            let rho = args
                .penalty
                .unwrap_or_else(|| grouping::default_penalty(p.n_units(), p.n_times()));
            grouping::group_panel(&p, args.max_groups, rho, 1, 0)?
        }
    };
    let body = serde_json::json!({
        "schema_version": "1",
        "command": "group",
        "unit_ids": p.unit_ids(),
        "result": result,
    });
    write_output(args.out.as_deref(), &serde_json::to_string_pretty(&body).expect("serializable"))
}

fn run_cce(args: &CceArgs) -> Result<()> {
    let layout = match args.layout.as_str() {
        "long" => Layout::Long,
        "wide" => Layout::Wide,
        other => {
            return Err(Error::input(format!(
                "unknown layout '{other}'; expected long or wide"
            )))
        }
    };
    let y = load_panel(&args.y, layout)?;
    let w = args
        .w
        .iter()
        .map(|path| load_panel(path, layout))
        .collect::<Result<Vec<_>>>()?;
    let data = cce::CcePanelData::new(y, w)?;
    let spec = args.kernel.spec(data.n_times())?;
    let seed = resolve_seed(args.seed);
    let report = cce::cce_heterogeneity_test(&data, args.coef, &spec, args.reps, &args.levels, seed)?;
    let body = serde_json::json!({
        "schema_version": "1",
        "command": "cce-test",
        "coef": args.coef,
        "report": report,
    });
    write_output(args.out.as_deref(), &serde_json::to_string_pretty(&body).expect("serializable"))
}

fn run_replicate(args: &ReplicateArgs) -> Result<()> {
    let scale = Scale::from_str(&args.scale)?;
    let experiment = match args.experiment {
        CliExperiment::Sim1 => Experiment::Sim1,
        CliExperiment::Sim2 => Experiment::Sim2,
        CliExperiment::Sim3 => Experiment::Sim3,
        CliExperiment::Prop3 => Experiment::Prop3,
        CliExperiment::BandwidthMse => Experiment::Custom,
    };
    let mut cfg = match scale {
        Scale::Desk => ExperimentConfig::desk(experiment),
        Scale::Full => ExperimentConfig::full(experiment),
    };
    if let Some(case) = args.case {
        cfg.case = case;
    }
    if let Some(sc) = &args.scenario {
        cfg.scenario = Scenario::from_str(sc)?;
    }
    if let Some(v) = args.rho_nu {
        cfg.rho_nu = v;
    }
    if let Some(v) = args.rho_x {
        cfg.rho_x = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.t {
        cfg.t = v;
    }
    if let Some(v) = args.r_mc {
        cfg.r_mc = v;
    }
    if let Some(v) = args.r_boot {
        cfg.r_boot = v;
    }
    if let Some(v) = args.kernel {
        cfg.kernel = v;
    }
    cfg.seed = resolve_seed(args.seed);

    let table = match args.experiment {
        CliExperiment::BandwidthMse => {
            let grid = match &args.m_grid {
                Some(g) => g.clone(),
                None => (1..=(3 * default_bandwidth(cfg.t)).min(cfg.t - 1)).collect(),
            };
            mse_bandwidth_experiment(&cfg, &grid)?
        }
        _ => run_experiment_with_checkpoint(&cfg, args.checkpoint.as_deref())?,
    };
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    let format = TableFormat::from_str(&args.format)?;
    let text = match format {
        TableFormat::Json => {
            let body = serde_json::json!({
                "schema_version": "1",
                "command": "replicate",
                "config": cfg,
                "rows": table.rows,
                "warnings": table.warnings,
            });
            serde_json::to_string_pretty(&body).expect("serializable")
        }
        other => emit_table(&table, other)?,
    };
    write_output(args.out.as_deref(), &text)
}

fn run_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let p = args.panel.load()?;
    let taus: Vec<f64> = match &args.tau_grid {
        Some(g) => g.clone(),
        None => (0..20).map(|k| k as f64 * 0.05).collect(),
    };
    let summary = p.dependence_summary(&taus)?;
    if args.csv {
        let mut text = String::from("tau,share\n");
        for (tau, share) in &summary.p_curve {
            text.push_str(&format!("{tau},{share}\n"));
        }
        eprintln!("rho_bar: {}", summary.rho_bar);
        write_output(args.out.as_deref(), &text)
    } else {
        let body = serde_json::json!({
            "schema_version": "1",
            "command": "diagnose",
            "rho_bar": summary.rho_bar,
            "p_curve": summary.p_curve,
        });
        write_output(args.out.as_deref(), &serde_json::to_string_pretty(&body).expect("serializable"))
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Test(a) => run_test(a),
        Command::Infer(a) => run_infer(a),
        Command::Group(a) => run_group(a),
        Command::CceTest(a) => run_cce(a),
        Command::Replicate(a) => run_replicate(a),
        Command::Diagnose(a) => run_diagnose(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
