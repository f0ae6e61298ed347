use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ekd::data::{gen_clean, export_corpus, make_split};
use ekd::error::{Error, Result};
use ekd::experiment::{
    atomic_write, compare, load_config, load_report, run_experiment, ExperimentConfig,
    OUTPUT_DIR_ENV,
};
use ekd::gradcheck::{grad_check, perturb_params};
use ekd::model::{build_teacher_ensemble, DistillMode, EncoderConfig, StudentModel};
use ekd::objectives::LossNorm;
use ekd::trainer::student_sample_loss;

#[derive(Parser)]
#[command(
    name = "ekd",
    about = "Distill frozen transformer ensembles into compact students and probe the results"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every mode in an experiment config and write metrics reports.
    Run {
        /// Experiment config (.toml or .json).
        config: PathBuf,
    },
    /// Render a comparison table over previously written reports.
    Compare {
        /// Report files produced by `run`.
        #[arg(required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        /// Mode whose row others are compared against; strictly better
        /// accuracy cells are flagged with `*`.
        #[arg(long)]
        baseline: Option<String>,
        /// Also write the table as CSV to this path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Verify analytic gradients of the full training loss against
    /// central finite differences for every mode.
    GradCheck,
    /// Generate the dataset split of a config and export it as corpora.
    GenData {
        /// Experiment config (.toml or .json).
        config: PathBuf,
    },
}

fn apply_output_override(cfg: &mut ExperimentConfig) {
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.output_dir = PathBuf::from(dir);
        }
    }
}

fn run_cmd(config: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    apply_output_override(&mut cfg);
    let outcome = run_experiment(&cfg)?;
    for (mode, path) in &outcome.reports {
        println!("report {mode}: {}", path.display());
    }
    if outcome.failures.is_empty() {
        return Ok(());
    }
    for (mode, err) in &outcome.failures {
        eprintln!("mode {mode} failed: {err}");
    }
    Err(outcome
        .failures
        .into_iter()
        .next()
        .expect("checked non-empty")
        .1)
}

fn compare_cmd(paths: &[PathBuf], baseline: Option<&str>, csv: Option<&Path>) -> Result<()> {
    let reports = paths.iter().map(|p| load_report(p)).collect::<Result<Vec<_>>>()?;
    let table = compare(&reports, baseline)?;
    print!("{}", table.text);
    if let Some(path) = csv {
        atomic_write(path, table.csv.as_bytes())?;
        println!("csv written to {}", path.display());
    }
    Ok(())
}

fn grad_check_cmd() -> Result<()> {
    let cfg = EncoderConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        window: 16,
        hop: 8,
    };
    let ens = build_teacher_ensemble(&cfg, &[11, 22], &[1, 2], false)?;
    let wave = gen_clean(5, 1, 48, 2)?.remove(0);
    let per_teacher = ens.forward_taps(&wave.samples)?;
    let mut worst: f64 = 0.0;
    for mode in [
        DistillMode::Single,
        DistillMode::Avg,
        DistillMode::Concat,
        DistillMode::MultiPred,
    ] {
        let student = StudentModel::init(&cfg, mode, 2, cfg.d_model, ens.m(), 3, false)?;
        let mut params = Vec::new();
        student.for_each_param(|_, t| params.push(t.detached()));
        perturb_params(&mut params, 0xFD, 0.25);
        let report = grad_check(
            &params,
            |g, ids| {
                let bound = student.bind_ids(ids)?;
                student_sample_loss(
                    g,
                    &cfg,
                    &bound,
                    &wave,
                    &per_teacher,
                    mode,
                    LossNorm::default(),
                    0,
                )
            },
            1e-5,
        )?;
        println!(
            "mode {mode}: max relative error {:.3e} over {} coordinates \
             (worst analytic {:.6e} vs numeric {:.6e})",
            report.max_rel_err, report.checked, report.worst_pair.0, report.worst_pair.1
        );
        worst = worst.max(report.max_rel_err);
        if !report.passes(1e-4) {
            return Err(Error::Numeric(format!(
                "gradient check failed for mode {mode}: max relative error {:.3e} \
                 at parameter {} index {}",
                report.max_rel_err, report.worst.0, report.worst.1
            )));
        }
    }
    println!("gradient check passed; worst relative error {worst:.3e}");
    Ok(())
}

fn gen_data_cmd(config: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    apply_output_override(&mut cfg);
    let split = make_split(&cfg.data)?;
    let base = cfg.output_dir.join("corpus");
    let sets: [(&str, &[_]); 4] = [
        ("train", &split.train),
        ("eval_clean", &split.eval_clean),
        ("eval_seen_noise", &split.eval_seen_noise),
        ("eval_unseen_noise", &split.eval_unseen_noise),
    ];
    for (name, set) in sets {
        let dir = base.join(name);
        std::fs::create_dir_all(&dir)?;
        export_corpus(&dir, set)?;
        println!("wrote {} samples to {}", set.len(), dir.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { config } => run_cmd(&config),
        Cmd::Compare { reports, baseline, csv } => {
            compare_cmd(&reports, baseline.as_deref(), csv.as_deref())
        }
        Cmd::GradCheck => grad_check_cmd(),
        Cmd::GenData { config } => gen_data_cmd(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
