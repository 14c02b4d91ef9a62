//! Command-line front end for the attention-curvature diagnosis pipeline.
//!
//! Every diagnostic subcommand takes a TOML run config and reads/writes the
//! artifacts in that config's output directory. Exit codes are part of the
//! contract: 0 success, 2 configuration errors, 3 numerical divergence,
//! 4 missing artifacts, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hessdiag::diagnosis::render_curvature_text;
use hessdiag::pipeline::{
    default_run_config, run_curvature, run_interact, run_intervene, run_perturb, run_report,
    run_train, RunConfig, CHECKPOINT_FILE, INTERACTION_FILE, INTERVENTION_FILE, SUMMARY_FILE,
    TRIALS_FILE,
};
use hessdiag::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hessdiag",
    version,
    about = "Hessian-based curvature diagnosis for attention networks",
    long_about = "Trains small attention models, measures per-group loss curvature \
                  (trace and extreme eigenvalues), ranks cross-group Hessian couplings, \
                  runs perturbation-robustness sweeps, and evaluates learning-rate \
                  interventions. All runs are seed-deterministic."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured model and write its checkpoint.
    Train(ConfigArgs),
    /// Measure and classify each attention group's curvature.
    Curvature(ConfigArgs),
    /// Run the configured perturbation sweeps.
    Perturb(ConfigArgs),
    /// Compute the cross-group interaction matrix and rank its couplings.
    Interact(ConfigArgs),
    /// Run the configured learning-rate intervention.
    Intervene(ConfigArgs),
    /// Assemble the consolidated summary from artifacts on disk.
    Report(ReportArgs),
    /// Print a fully specified reference configuration.
    Defaults,
    /// Run a quick internal consistency battery.
    Selftest,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the run config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Run config whose output directory holds the artifacts.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory holding the artifacts (overrides the config's).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The exit-code contract, keyed on the innermost error.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::InvalidConfig { .. }
        | Error::TomlParse(_)
        | Error::UnknownGroup { .. }
        | Error::EmptyGroup { .. }
        | Error::OverlappingSelection { .. }
        | Error::DimGuard { .. } => 2,
        Error::NonFinite { .. } | Error::TrainingDiverged { .. } => 3,
        Error::MissingArtifact { .. } => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.load()?;
            let trace = run_train(&cfg)?;
            let accuracy = match trace.final_accuracy() {
                Some(a) => format!("{a:.3}"),
                None => "n/a".to_string(),
            };
            println!(
                "trained {} epochs | final loss {:.6} | train accuracy {} | wrote {}",
                trace.epochs.len(),
                trace.final_loss().unwrap_or(f64::NAN),
                accuracy,
                cfg.output_dir.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Curvature(args) => {
            let cfg = args.load()?;
            let rows = run_curvature(&cfg)?;
            print!("{}", render_curvature_text(&rows));
        }
        Command::Perturb(args) => {
            let cfg = args.load()?;
            let trials = run_perturb(&cfg)?;
            let diverged = trials.iter().filter(|t| t.diverged).count();
            println!(
                "recorded {} trials ({diverged} diverged) | wrote {}",
                trials.len(),
                cfg.output_dir.join(TRIALS_FILE).display()
            );
        }
        Command::Interact(args) => {
            let cfg = args.load()?;
            let report = run_interact(&cfg)?;
            println!("selection: {}", report.matrix.labels.join(", "));
            for c in &report.couplings {
                println!("{} x {}: normalized {:.6} (raw {:.6})", c.a, c.b, c.normalized, c.raw);
            }
            println!("wrote {}", cfg.output_dir.join(INTERACTION_FILE).display());
        }
        Command::Intervene(args) => {
            let cfg = args.load()?;
            let r = run_intervene(&cfg)?;
            let after = |v: Option<f64>| match v {
                Some(v) => format!("{v:.6}"),
                None => "not measured".to_string(),
            };
            println!(
                "target {} (learning-rate scale {}) | pair {} x {}",
                r.target_group, r.lr_scale, r.tracked_pair.0, r.tracked_pair.1
            );
            println!(
                "coupling {:.6} -> {} | variability {:.6} -> {} | {}",
                r.coupling_before,
                after(r.coupling_after),
                r.variability_before,
                after(r.variability_after),
                if r.complete { "complete" } else { "incomplete (retraining diverged)" }
            );
            println!("wrote {}", cfg.output_dir.join(INTERVENTION_FILE).display());
        }
        Command::Report(args) => {
            let out = match (&args.out, &args.config) {
                (Some(out), _) => out.clone(),
                (None, Some(config)) => RunConfig::load(config)?.output_dir,
                (None, None) => {
                    return Err(Error::InvalidConfig {
                        field: "out".into(),
                        message: "report needs --config or --out to locate the artifacts".into(),
                    })
                }
            };
            let summary = run_report(&out)?;
            print!("{summary}");
            eprintln!("wrote {}", out.join(SUMMARY_FILE).display());
        }
        Command::Defaults => {
            print!("{}", default_run_config().to_toml_string()?);
        }
        Command::Selftest => selftest()?,
    }
    Ok(())
}

/// A fast battery of internal consistency checks: analytic gradients against
/// finite differences, curvature-operator symmetry, exact traces and extreme
/// eigenvalues on an engineered quadratic, and perturbation identities.
fn selftest() -> Result<()> {
    use hessdiag::diagnosis::{curvature_table, CurvatureLabel, EstimatorConfig};
    use hessdiag::linalg::FlatVector;
    use hessdiag::models::{
        generate, make_batch, DataSpec, Model, ModelConfig, ModelKind, QuadraticBlock,
        QuadraticSpec,
    };
    use hessdiag::perturb::perturb;
    use hessdiag::spectral::{lanczos_extreme, CurvatureOperator};

    fn check(name: &str, ok: bool) -> Result<()> {
        if ok {
            println!("ok - {name}");
            Ok(())
        } else {
            Err(Error::Format { message: format!("selftest check failed: {name}") })
        }
    }

    let mut cfg = ModelConfig::with_kind(ModelKind::Hierarchical);
    cfg.embed_dim = 4;
    cfg.sents_per_doc = 2;
    cfg.words_per_sent = 3;
    let splits = generate(&cfg, &DataSpec { train_examples: 4, test_examples: 0, seed: 1 })?;
    let batch = make_batch(&cfg, &splits.train.examples)?;
    let mut model = Model::build(cfg.clone())?;

    let (_, grad) = model.loss_and_gradient(&batch)?;
    let n = model.param_count();
    let h = 1e-5;
    let mut max_rel = 0.0_f64;
    for i in [0, n / 3, n / 2, 2 * n / 3, n - 1] {
        let mut plus = model.params.clone();
        plus.0[i] += h;
        let mut minus = model.params.clone();
        minus.0[i] -= h;
        let lp = Model::from_parts(cfg.clone(), plus)?.loss(&batch)?;
        let lm = Model::from_parts(cfg.clone(), minus)?.loss(&batch)?;
        let fd = (lp - lm) / (2.0 * h);
        max_rel = max_rel.max((fd - grad.0[i]).abs() / grad.0[i].abs().max(1e-8));
    }
    check("gradients match central finite differences", max_rel < 1e-4)?;

    let mut op = model.hvp_operator(&batch)?;
    let wave = |k: usize| {
        FlatVector((0..n).map(|i| (((i * 37 + k) % 97) as f64) / 97.0 - 0.5).collect())
    };
    let (u, v) = (wave(11), wave(29));
    let hu = op.apply(&u)?;
    let hv = op.apply(&v)?;
    let (a, b) = (u.dot(&hv), v.dot(&hu));
    check(
        "curvature operator is symmetric",
        (a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1.0),
    )?;

    let mut qcfg = ModelConfig::with_kind(ModelKind::Quadratic);
    qcfg.quadratic = Some(QuadraticSpec {
        blocks: vec![
            QuadraticBlock { name: "hot".into(), size: 3, curvature: -1.0, center: 0.0 },
            QuadraticBlock { name: "cold".into(), size: 4, curvature: 2.0, center: 0.0 },
        ],
        couplings: vec![],
        offset: 0.0,
    });
    let quad = Model::build(qcfg)?;
    let qbatch = make_batch(quad.config(), &[])?;
    let rows = curvature_table(
        &quad,
        &qbatch,
        &["hot".to_string(), "cold".to_string()],
        &EstimatorConfig::default(),
    )?;
    check(
        "engineered traces are exact",
        (rows[0].verdict.trace + 3.0).abs() < 1e-8 && (rows[1].verdict.trace - 8.0).abs() < 1e-8,
    )?;
    check(
        "engineered verdicts split fragile from stable",
        rows[0].verdict.label == CurvatureLabel::ConcaveFragile
            && rows[1].verdict.label == CurvatureLabel::ConvexStable,
    )?;

    let mut qop = quad.hvp_operator(&qbatch)?;
    let extremes = lanczos_extreme(&mut qop, 200, 1e-8, 3)?;
    check(
        "extreme eigenvalues match the engineered spectrum",
        (extremes.eigs_min + 1.0).abs() < 1e-6 && (extremes.eigs_max - 2.0).abs() < 1e-6,
    )?;

    let group = model.registry().group("word_attention")?.clone();
    let copy = perturb(&model.params, &group, 0.0, 9)?;
    check(
        "zero-magnitude perturbation is the identity",
        copy.0.iter().zip(&model.params.0).all(|(a, b)| a.to_bits() == b.to_bits()),
    )?;

    println!("selftest: all checks passed");
    Ok(())
}
