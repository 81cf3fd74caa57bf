//! `rankpose` command-line front end.
//!
//! Exit codes: 0 ok, 2 config, 3 I/O, 4 training, 5 artifact mismatch,
//! 6 gradcheck failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{self, Dataset};
use crate::error::Error;
use crate::evaluation::{self, AblationRow, LossMode, MaeReport};
use crate::gradcheck;
use crate::head::HeadKind;
use crate::parallel::{self, Execution};
use crate::trainer::{self, TrainState};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_TRAINING: u8 = 4;
pub const EXIT_MISMATCH: u8 = 5;
pub const EXIT_GRADCHECK: u8 = 6;

#[derive(Debug, Parser)]
#[command(name = "rankpose", version, about = "Bounded-output pose regression with pairwise ranking loss")]
pub struct Cli {
    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override any configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Loss mixing weight β.
    #[arg(long)]
    pub beta: Option<f64>,

    /// Output head: dot, cosine or arccos.
    #[arg(long)]
    pub head: Option<String>,

    #[arg(long)]
    pub epochs: Option<usize>,

    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes a checkpoint and a per-epoch history file.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to `<checkpoint>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Optional validation dataset.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: MAE report plus cumulative error table.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train and evaluate the six-cell head × loss grid.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        report: PathBuf,
    },
    /// Finite-difference check of the full pipeline gradient.
    Gradcheck {
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn config_error(e: Error) -> CliError {
    let code = match e {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    };
    CliError::new(code, e.to_string())
}

fn io_error(e: Error) -> CliError {
    CliError::new(EXIT_IO, e.to_string())
}

fn training_error(e: Error) -> CliError {
    match e {
        Error::InvalidConfig(_) => CliError::new(EXIT_CONFIG, e.to_string()),
        Error::Io { .. } => CliError::new(EXIT_IO, e.to_string()),
        _ => CliError::new(EXIT_TRAINING, e.to_string()),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| io_error(Error::io(path, e)))
}

/// `report.txt` → `report.<suffix>.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(format!("{suffix}.csv"))
}

/// `model.ckpt` → `model.ckpt.history.csv`.
pub fn default_history_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".history.csv");
    PathBuf::from(name)
}

impl ConfigArgs {
    fn overrides(&self) -> CliResult<Vec<(String, String)>> {
        let mut out = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::new(EXIT_CONFIG, format!("--set expects KEY=VALUE, got '{kv}'")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("loss.beta", self.beta.map(|v| v.to_string()));
        push("model.head", self.head.clone());
        push("train.epochs", self.epochs.map(|v| v.to_string()));
        push("adam.lr0", self.lr.map(|v| v.to_string()));
        Ok(out)
    }

    pub fn load(&self) -> CliResult<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides()?).map_err(config_error)
    }
}

fn execution(cli: &Cli) -> Execution {
    if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::new(EXIT_CONFIG, "--threads must be >= 1"));
        }
        parallel::set_threads(n);
    }
    let exec = execution(cli);
    match &cli.command {
        Command::Gen { config, out } => cmd_gen(&config.load()?, out),
        Command::Train {
            config,
            data,
            checkpoint,
            history,
            val,
        } => {
            let history = history
                .clone()
                .unwrap_or_else(|| default_history_path(checkpoint));
            cmd_train(&config.load()?, data, checkpoint, &history, val.as_deref(), exec)
        }
        Command::Eval {
            config,
            checkpoint,
            data,
            report,
        } => cmd_eval(&config.load()?, checkpoint, data, report, exec),
        Command::Ablate { config, report } => cmd_ablate(&config.load()?, report, exec),
        Command::Gradcheck {
            seed,
            seeds,
            tolerance,
        } => cmd_gradcheck(*seed, *seeds, *tolerance, exec),
    }
}

fn apply_threads(cfg: &RunConfig) {
    if let Some(n) = cfg.threads {
        parallel::set_threads(n);
    }
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> CliResult {
    let ds = data::generate_synthetic(&cfg.data).map_err(config_error)?;
    data::write_dataset(&ds, out).map_err(io_error)?;
    println!(
        "wrote {}: {} identities, {} samples, {} features",
        out.display(),
        ds.num_identities(),
        ds.len(),
        ds.dim()
    );
    Ok(())
}

fn read(path: &Path) -> CliResult<Dataset> {
    data::read_dataset(path).map_err(io_error)
}

pub fn cmd_train(
    cfg: &RunConfig,
    data_path: &Path,
    checkpoint_out: &Path,
    history_out: &Path,
    val_path: Option<&Path>,
    exec: Execution,
) -> CliResult {
    apply_threads(cfg);
    let train_set = read(data_path)?;
    let val_set = val_path.map(read).transpose()?;
    if let Some(v) = &val_set {
        if v.dim() != train_set.dim() {
            return Err(CliError::new(
                EXIT_MISMATCH,
                format!("validation set has {} features, training set {}", v.dim(), train_set.dim()),
            ));
        }
    }
    let mut tcfg = cfg.train_config(train_set.dim());
    tcfg.execution = exec;
    let start = Instant::now();
    let (state, history) = trainer::train(&train_set, val_set.as_ref(), &tcfg).map_err(training_error)?;
    checkpoint::save_checkpoint(&state, checkpoint_out).map_err(io_error)?;
    write_file(history_out, &history.to_text())?;
    if let Some(last) = history.records.last() {
        println!(
            "trained {} epochs ({} steps) in {:.1}s; final combined {:.6} (mse {:.6}, ranking {:.6})",
            last.epoch,
            state.adam.t,
            start.elapsed().as_secs_f64(),
            last.loss.combined,
            last.loss.mse,
            last.loss.ranking
        );
    }
    println!("checkpoint: {}\nhistory: {}", checkpoint_out.display(), history_out.display());
    Ok(())
}

fn mae_csv(rows: &[(String, MaeReport)]) -> String {
    let mut s = String::from("# rankpose-mae v1\nname,yaw_deg,pitch_deg,roll_deg,avg_deg,yaw_rad,pitch_rad,roll_rad,avg_rad\n");
    for (name, r) in rows {
        let d = r.to_degrees();
        writeln!(
            s,
            "{name},{},{},{},{},{},{},{},{}",
            d.yaw, d.pitch, d.roll, d.avg, r.yaw, r.pitch, r.roll, r.avg
        )
        .unwrap();
    }
    s
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: &Path, data_path: &Path, report: &Path, exec: Execution) -> CliResult {
    apply_threads(cfg);
    let state = checkpoint::load_checkpoint(checkpoint_path).map_err(io_error)?;
    let ds = read(data_path)?;
    if ds.dim() != state.model.input_dim() {
        return Err(CliError::new(
            EXIT_MISMATCH,
            format!(
                "checkpoint expects {} input features but {} has {}",
                state.model.input_dim(),
                data_path.display(),
                ds.dim()
            ),
        ));
    }
    let preds = evaluation::predict_dataset(&state, &ds, exec).map_err(|e| CliError::new(EXIT_MISMATCH, e.to_string()))?;
    let truths = ds.poses();
    let to_cli = |e: Error| CliError::new(EXIT_CONFIG, e.to_string());
    let mae = evaluation::mae(&preds, &truths).map_err(to_cli)?;
    let ced = evaluation::ced(&preds, &truths, &cfg.thresholds_deg).map_err(to_cli)?;
    let name = state.model.head.kind().to_string();
    let rows = vec![(name, mae)];

    let mut text = format!(
        "# rankpose-eval v1\ncheckpoint: {}\ndataset: {} ({} samples)\n\nMAE (degrees)\n",
        checkpoint_path.display(),
        data_path.display(),
        ds.len()
    );
    text += &evaluation::format_mae_table(&rows);
    text += &format!(
        "\nMAE (radians): yaw {} pitch {} roll {} avg {}\n\nCumulative error distribution\n",
        mae.yaw, mae.pitch, mae.roll, mae.avg
    );
    text += &evaluation::format_ced_table(&ced);
    write_file(report, &text)?;
    write_file(&sibling(report, "mae"), &mae_csv(&rows))?;
    write_file(&sibling(report, "ced"), &evaluation::format_ced_csv(&ced))?;
    print!("{}", evaluation::format_mae_table(&rows));
    Ok(())
}

/// Per-seed ablation result plus the activation-variance probe.
pub struct AblationRun {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
    /// Mean first-layer activation variance on the shifted test set:
    /// untrained, MSE+Arccos, Ranking loss+MSE + Arccos.
    pub variance: Option<[f64; 3]>,
}

pub const IN_DISTRIBUTION: &str = "in-distribution";
pub const NUISANCE_SHIFTED: &str = "nuisance-shifted";

/// One seed of the full grid on the synthetic benchmark described by `cfg`.
pub fn ablation_run(cfg: &RunConfig, exec: Execution) -> crate::Result<AblationRun> {
    let train_set = data::generate_synthetic(&cfg.data)?;
    let same = data::generate_synthetic(&cfg.in_distribution_test())?;
    let shifted = data::generate_synthetic(&cfg.nuisance_shifted_test())?;
    let mut base = cfg.train_config(train_set.dim());
    base.execution = exec;
    let grid = evaluation::standard_grid();
    let results = evaluation::run_ablation_with_states(
        &train_set,
        &[(IN_DISTRIBUTION, &same), (NUISANCE_SHIFTED, &shifted)],
        &grid,
        &base,
    )?;

    let first_layer_variance = |state: &TrainState| -> crate::Result<f64> {
        let traces = evaluation::collect_traces(state, &shifted)?;
        Ok(evaluation::activation_variance(&traces, 0, 20, None)?.mean())
    };
    let find = |head, loss| {
        results
            .iter()
            .find(|(r, _)| r.cell.head == head && r.cell.loss == loss)
            .map(|(_, s)| s)
    };
    let variance = match (
        find(HeadKind::Arccos, LossMode::Mse),
        find(HeadKind::Arccos, LossMode::RankingMse),
    ) {
        (Some(mse), Some(rank)) => {
            let untrained = TrainState::init(&evaluation::cell_config(&base, grid[5]), train_set.len())?;
            Some([
                first_layer_variance(&untrained)?,
                first_layer_variance(mse)?,
                first_layer_variance(rank)?,
            ])
        }
        _ => None,
    };
    Ok(AblationRun {
        seed: cfg.seed,
        rows: results.into_iter().map(|(r, _)| r).collect(),
        variance,
    })
}

pub fn cmd_ablate(cfg: &RunConfig, report: &Path, exec: Execution) -> CliResult {
    apply_threads(cfg);
    let start = Instant::now();
    let mut runs = Vec::with_capacity(cfg.ablate_seeds);
    for k in 0..cfg.ablate_seeds as u64 {
        let run = ablation_run(&cfg.with_seed(cfg.seed + k), exec).map_err(training_error)?;
        runs.push(run);
    }
    let medians = evaluation::median_rows(&runs.iter().map(|r| r.rows.clone()).collect::<Vec<_>>())
        .map_err(training_error)?;

    let mut text = format!(
        "# rankpose-ablation v1\nseeds: {}..{} ({} runs), epochs {}, beta {}, {:.1}s\n",
        cfg.seed,
        cfg.seed + cfg.ablate_seeds as u64 - 1,
        cfg.ablate_seeds,
        cfg.train.epochs,
        cfg.train.loss.beta(),
        start.elapsed().as_secs_f64()
    );
    for test in [IN_DISTRIBUTION, NUISANCE_SHIFTED] {
        let rows: Vec<(String, MaeReport)> = medians
            .iter()
            .map(|r| (r.cell.label().to_string(), *r.report(test).expect("test set present")))
            .collect();
        text += &format!("\nMedian MAE (degrees), {test} test set\n");
        text += &evaluation::format_mae_table(&rows);
    }
    text += "\nOrdering checks on the nuisance-shifted set (median avg MAE)\n";
    let avg = |label: &str| {
        medians
            .iter()
            .find(|r| r.cell.label() == label)
            .and_then(|r| r.report(NUISANCE_SHIFTED))
            .map(|r| r.avg)
            .unwrap_or(f64::NAN)
    };
    for (with, without) in [
        ("Ranking loss+MSE", "MSE"),
        ("Ranking loss+MSE + Cosine", "MSE+Cosine"),
        ("Ranking loss+MSE + Arccos", "MSE+Arccos"),
        ("MSE+Cosine", "MSE"),
        ("MSE+Arccos", "MSE"),
    ] {
        let (a, b) = (avg(with), avg(without));
        text += &format!(
            "  {with:<26} < {without:<12} {:>8.3} vs {:>8.3}  {}\n",
            a.to_degrees(),
            b.to_degrees(),
            if a < b { "holds" } else { "does not hold" }
        );
    }
    text += "\nMean first-hidden-layer activation variance (nuisance-shifted set)\n";
    text += "  seed  untrained  MSE+Arccos  Ranking loss+MSE + Arccos\n";
    for r in &runs {
        if let Some([u, m, k]) = r.variance {
            text += &format!("  {:>4}  {u:>9.5}  {m:>10.5}  {k:>10.5}\n", r.seed);
        }
    }

    let mut csv = String::from("# rankpose-ablation v1\nseed,label,test_set,yaw_deg,pitch_deg,roll_deg,avg_deg\n");
    let mut emit = |seed: &str, rows: &[AblationRow]| {
        for row in rows {
            for (test, r) in &row.reports {
                let d = r.to_degrees();
                writeln!(csv, "{seed},{},{test},{},{},{},{}", row.cell.label(), d.yaw, d.pitch, d.roll, d.avg).unwrap();
            }
        }
    };
    for r in &runs {
        emit(&r.seed.to_string(), &r.rows);
    }
    emit("median", &medians);

    let mut var_csv = String::from("# rankpose-activation-variance v1\nseed,untrained,mse_arccos,ranking_mse_arccos\n");
    for r in &runs {
        if let Some([u, m, k]) = r.variance {
            writeln!(var_csv, "{},{u},{m},{k}", r.seed).unwrap();
        }
    }
    write_file(report, &text)?;
    write_file(&sibling(report, "grid"), &csv)?;
    write_file(&sibling(report, "variance"), &var_csv)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_gradcheck(first_seed: u64, seeds: u64, tolerance: f64, exec: Execution) -> CliResult {
    let seed_list: Vec<u64> = (first_seed..first_seed + seeds).collect();
    let start = Instant::now();
    let reports = gradcheck::run_suite(&seed_list, exec).map_err(|e| CliError::new(EXIT_GRADCHECK, e.to_string()))?;
    let checked: usize = reports.iter().map(|r| r.checked).sum();
    let skipped: usize = reports.iter().map(|r| r.skipped).sum();
    let worst = reports
        .iter()
        .max_by(|a, b| a.worst_rel_error.total_cmp(&b.worst_rel_error))
        .expect("suite is non-empty");
    println!(
        "gradcheck: {} cases, {checked} coordinates checked, {skipped} skipped at kinks, {:.2}s",
        reports.len(),
        start.elapsed().as_secs_f64()
    );
    println!(
        "worst relative error {:.3e} ({}; parameter {} analytic {} numeric {})",
        worst.worst_rel_error, worst.case, worst.worst_index, worst.worst_analytic, worst.worst_numeric
    );
    let failures: Vec<_> = reports.iter().filter(|r| !r.passed(tolerance)).collect();
    if failures.is_empty() {
        println!("all cases within tolerance {tolerance:e}");
        Ok(())
    } else {
        Err(CliError::new(
            EXIT_GRADCHECK,
            format!(
                "{} of {} cases exceed tolerance {tolerance:e}; worst: {} at parameter {} (rel error {:.3e})",
                failures.len(),
                reports.len(),
                worst.case,
                worst.worst_index,
                worst.worst_rel_error
            ),
        ))
    }
}
