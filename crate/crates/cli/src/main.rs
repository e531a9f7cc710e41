use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dwsec_core::analysis::{
    complexity_ratio, dwell_time_certificate, limitation1_expectations, limitation3_delta_j,
    monte_carlo_test_means, normal_residual_trace, steady_lqg_cost, theorem2_expectations,
    ClosedLoopModel, DwellTimeCertificate, REFERENCE_G0, REFERENCE_G1, REFERENCE_LAMBDA_MINUS,
    REFERENCE_LAMBDA_PLUS, REFERENCE_RATIO_BOUND,
};
use dwsec_core::doc::{matrix_to_rows, parse_json, to_json};
use dwsec_core::presets::{preset, run_preset, PRESET_NAMES};
use dwsec_core::sim::write_csv;
use dwsec_core::{
    pendulum_preset, Error, FdiaSpec, LmiExportDoc, LoopGains, Matrix, ModelDoc, PlantModel,
    Report, ScenarioDoc, Scheme, Vector,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_SAFETY: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(
    name = "dwsec",
    version,
    about = "Dynamic watermarking toolkit for networked control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace as CSV.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the scenario's noise seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Closed-form quantities for a model (the pendulum preset by default).
    Analyze {
        #[command(subcommand)]
        kind: AnalyzeKind,
        #[arg(long, global = true)]
        model: Option<PathBuf>,
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
    /// Replica-parallel estimates of the test-statistic means.
    Montecarlo {
        scenario: PathBuf,
        #[arg(long, default_value_t = 20)]
        replicas: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the delayed closed loop for the external LMI certifier.
    ExportLmi {
        #[arg(long, allow_negative_numbers = true)]
        hbar: i64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Named experiments.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum AnalyzeKind {
    /// Conventional watermark: cross term and steady residual covariance.
    Limitation1 {
        #[arg(long, default_value_t = 1e-4)]
        sigma2: f64,
    },
    /// Conventional watermark: LQG cost increase.
    Limitation3 {
        #[arg(long, default_value_t = 1e-4)]
        sigma2: f64,
    },
    /// Output-encrypting watermark under attack: per-output cross terms.
    Theorem2 {
        #[arg(long, default_value_t = 1e-4)]
        sigma2: f64,
    },
    /// Dwell-time condition for intermittent attacks.
    Theorem3 {
        #[arg(long, default_value_t = 4)]
        t0: u64,
        #[arg(long, default_value_t = 137)]
        t1: u64,
        #[arg(long, default_value_t = 0.0)]
        lambda_star: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda_dagger: f64,
    },
    /// tr(L Σo Lᵀ).
    ResidualTrace,
    /// Cost of the new test relative to the conventional one.
    Complexity { m_x: usize, m_y: usize },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print the scenario document of a preset.
    Show {
        name: String,
    },
    /// Run a preset and evaluate its checks.
    Run {
        name: String,
        /// Trace CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult = Result<u8, CliError>;

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n"))?,
        None => writeln!(io::stdout(), "{text}")?,
    }
    Ok(())
}

fn load_model_doc(path: Option<&Path>) -> Result<ModelDoc, CliError> {
    match path {
        Some(p) => Ok(parse_json(&read_text(p)?)?),
        None => {
            let (m, g) = pendulum_preset()?;
            Ok(ModelDoc::from_parts(&m, &g))
        }
    }
}

fn load_model(path: Option<&Path>) -> Result<(PlantModel, LoopGains), CliError> {
    Ok(load_model_doc(path)?.to_parts()?)
}

fn simulate(scenario: &Path, out: Option<&Path>, seed: Option<u64>) -> CliResult {
    let doc: ScenarioDoc = parse_json(&read_text(scenario)?)?;
    let mut cfg = doc.to_config()?;
    if let Some(s) = seed {
        cfg.noise_seed = s;
    }
    let trace = dwsec_core::run_closed_loop(&cfg)?;
    match out {
        Some(p) => write_csv(&trace, &mut io::BufWriter::new(fs::File::create(p)?))?,
        None => write_csv(&trace, &mut io::stdout().lock())?,
    }
    if let Some(t) = trace.termination {
        eprintln!(
            "terminated at step {}{}",
            t.step,
            if t.diverged {
                " (state overflow)"
            } else {
                " (safety limit)"
            }
        );
        return Ok(EXIT_SAFETY);
    }
    Ok(0)
}

fn norms(cols: &[Vector]) -> Vec<f64> {
    cols.iter().map(|c| c.norm()).collect()
}

fn analyze(kind: &AnalyzeKind, model: Option<&Path>, out: Option<&Path>) -> CliResult {
    let mut report = Report::new();
    match *kind {
        AnalyzeKind::Limitation1 { sigma2 } => {
            let (m, g) = load_model(model)?;
            let (cross, steady) = limitation1_expectations(&m, &g, sigma2)?;
            report.insert("cross", cross.as_slice(), "-sigma2 L C B");
            report.insert("cross_norm", cross.norm(), "||sigma2 L C B||");
            report.insert("steady_cov", matrix_to_rows(&steady), "L C M_d C^T L^T");
            report.insert("steady_trace", steady.trace(), "tr(L C M_d C^T L^T)");
        }
        AnalyzeKind::Limitation3 { sigma2 } => {
            let (m, g) = load_model(model)?;
            let dj = limitation3_delta_j(sigma2, &g.s, &m.b, &g.r_weight);
            let j0 = steady_lqg_cost(&m, &g, 0.0)?;
            report.insert("delta_j", dj, "sigma2 tr(B^T S B + R)");
            report.insert("j0", j0, "steady E[x^T Q x + u^T R u] without watermark");
            report.insert("relative_loss_percent", 100.0 * dj / j0, "100 delta_j / j0");
        }
        AnalyzeKind::Theorem2 { sigma2 } => {
            let (m, g) = load_model(model)?;
            let sigma = Matrix::from_diagonal(&Vector::from_element(m.output_dim(), sigma2));
            let (cross, steady) = theorem2_expectations(&m, &g, &sigma)?;
            let cols: Vec<Vec<f64>> = cross.iter().map(|c| c.as_slice().to_vec()).collect();
            report.insert("cross", cols, "-sigma2_i L e_i");
            report.insert("cross_norm", norms(&cross), "sigma2_i ||L e_i||");
            report.insert(
                "steady_trace",
                steady.trace(),
                "tr(L (C M C^T + Sigma_wy) L^T)",
            );
        }
        AnalyzeKind::Theorem3 {
            t0,
            t1,
            lambda_star,
            lambda_dagger,
        } => {
            let reference = DwellTimeCertificate::from_constants(
                REFERENCE_LAMBDA_PLUS,
                REFERENCE_LAMBDA_MINUS,
                REFERENCE_G0,
                REFERENCE_G1,
                lambda_star,
                lambda_dagger,
                t0,
                t1,
            )?;
            let gap = (reference.ratio_bound - REFERENCE_RATIO_BOUND) / REFERENCE_RATIO_BOUND;
            report.insert(
                "reference_constants",
                &reference,
                "ratio bound from the reference lambda_+, lambda_-",
            );
            report.insert(
                "verdict",
                reference.verdict,
                "observed t1/t0 against the bound",
            );
            report.insert(
                "reference_bound_gap",
                gap,
                format!("(computed - {REFERENCE_RATIO_BOUND}) / {REFERENCE_RATIO_BOUND}"),
            );
            let (m, g) = load_model(model)?;
            let spec = FdiaSpec::persistent_preset();
            if spec.state_dim() == m.state_dim() {
                let cl = ClosedLoopModel::build(&m, &g, &spec.a_attack)?;
                let from_model =
                    dwell_time_certificate(&cl.a0, &cl.a1, lambda_star, lambda_dagger, t0, t1);
                match from_model {
                    Ok(c) => report.insert(
                        "model_constants",
                        c,
                        "spectral radii of the attacked and attack-free loops",
                    ),
                    Err(e) => report.insert("model_constants", e.to_string(), "not available"),
                }
            }
        }
        AnalyzeKind::ResidualTrace => {
            let (_, g) = load_model(model)?;
            report.insert(
                "residual_trace",
                normal_residual_trace(&g),
                "tr(L Sigma_o L^T)",
            );
        }
        AnalyzeKind::Complexity { m_x, m_y } => {
            report.insert(
                "complexity_ratio",
                complexity_ratio(m_x, m_y)?,
                "m_y^2 / (m_x^2 + m_x m_y)",
            );
        }
    }
    emit(out, &to_json(&report))?;
    Ok(0)
}

fn montecarlo(scenario: &Path, replicas: usize, out: Option<&Path>) -> CliResult {
    let doc: ScenarioDoc = parse_json(&read_text(scenario)?)?;
    let cfg = doc.to_config()?;
    let mut report = Report::new();
    let est = match monte_carlo_test_means(&cfg, replicas) {
        Ok(e) => e,
        Err(Error::InsufficientSamples { reason }) => {
            report.insert("requested_replicas", replicas, "command line");
            report.insert("error", &reason, "replica outcome");
            emit(out, &to_json(&report))?;
            eprintln!("{reason}");
            return Ok(EXIT_SAFETY);
        }
        Err(e) => return Err(e.into()),
    };
    let col_norms = |m: &Matrix| -> Vec<f64> { m.column_iter().map(|c| c.norm()).collect() };
    report.insert("replicas", est.replicas, "completed replicas");
    report.insert("failures", est.failures, "replicas stopped early");
    report.insert(
        "steps_per_replica",
        est.steps_per_replica,
        "averaged steps per replica",
    );
    report.insert_with_error(
        "cross",
        matrix_to_rows(&est.cross),
        matrix_to_rows(&est.cross_se),
        "replica mean of w_i L r; column i per watermark component",
    );
    report.insert(
        "cross_norm",
        col_norms(&est.cross),
        "column norms of the replica mean",
    );
    report.insert_with_error(
        "cov_trace",
        est.cov.trace(),
        est.cov_se.trace(),
        "replica mean of ||L r||^2",
    );
    let oracle: Option<Matrix> = match (&cfg.attack, cfg.scheme) {
        (None, _) => Some(Matrix::zeros(est.cross.nrows(), est.cross.ncols())),
        (Some(_), Scheme::NewDw) => {
            let sigma = Matrix::from_diagonal(&Vector::from_column_slice(&cfg.watermark.sigma_w));
            let (cross, _) = theorem2_expectations(&cfg.model, &cfg.gains, &sigma)?;
            Some(Matrix::from_columns(&cross))
        }
        (Some(_), Scheme::ConventionalDw) if cfg.watermark.sigma_w.len() == 1 => {
            let (cross, _) =
                limitation1_expectations(&cfg.model, &cfg.gains, cfg.watermark.sigma_w[0])?;
            Some(Matrix::from_columns(&[cross]))
        }
        _ => None,
    };
    if let Some(o) = oracle {
        let z = (&est.cross - &o).zip_map(
            &est.cross_se,
            |d, se| if se > 0.0 { d.abs() / se } else { 0.0 },
        );
        report.insert(
            "oracle_cross",
            matrix_to_rows(&o),
            "closed form for the scenario's attack",
        );
        report.insert("max_abs_z", z.max(), "max |estimate - oracle| / se");
    }
    emit(out, &to_json(&report))?;
    Ok(0)
}

fn export_lmi(hbar: i64, out: Option<&Path>, model: Option<&Path>) -> CliResult {
    let doc = load_model_doc(model)?;
    let lmi = LmiExportDoc::build(&doc, hbar)?;
    emit(out, &to_json(&lmi))?;
    Ok(0)
}

fn preset_cmd(action: &PresetAction) -> CliResult {
    match action {
        PresetAction::List => {
            for name in PRESET_NAMES {
                let p = preset(name)?;
                println!("{name}\t{}", p.description);
            }
            Ok(0)
        }
        PresetAction::Show { name } => {
            let p = preset(name)?;
            println!("{}", to_json(&ScenarioDoc::from_config(&p.scenario)));
            Ok(0)
        }
        PresetAction::Run { name, out, report } => {
            let p = preset(name)?;
            let outcome = run_preset(&p)?;
            if let Some(path) = out {
                write_csv(
                    &outcome.trace,
                    &mut io::BufWriter::new(fs::File::create(path)?),
                )?;
            }
            if let Some(path) = report {
                let mut r = outcome.report.clone();
                r.insert("checks", &outcome.checks, "preset self-checks");
                fs::write(path, to_json(&r))?;
            }
            for c in &outcome.checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            Ok(if outcome.all_passed() { 0 } else { EXIT_CHECK })
        }
    }
}

fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Simulate {
            scenario,
            out,
            seed,
        } => simulate(scenario, out.as_deref(), *seed),
        Command::Analyze { kind, model, out } => analyze(kind, model.as_deref(), out.as_deref()),
        Command::Montecarlo {
            scenario,
            replicas,
            out,
        } => montecarlo(scenario, *replicas, out.as_deref()),
        Command::ExportLmi { hbar, out, model } => {
            export_lmi(*hbar, out.as_deref(), model.as_deref())
        }
        Command::Preset { action } => preset_cmd(action),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
