//! Command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::{TrainConfig, TOOLKIT_VERSION};
use crate::error::{Error, Result};
use crate::gnnops::OperatorKind;
use crate::pipeline::{load_csv, save_csv, spatial_variance_grid, split, synth_dataset, Metrics, PointSet};
use crate::sweep::{run_sweep, SweepSpec, DEFAULT_LAMBDAS};
use crate::train::{fit, predict, raw_metrics, TrainedRun};

#[derive(Debug, Parser)]
#[command(name = "pegnn", version, about = "Positional-encoder graph neural networks for spatial regression")]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Train one model and write a checkpoint.
    Train(TrainArgs),
    /// Train every operator and auxiliary weight over several seeds.
    Sweep(SweepArgs),
    /// Predict with a checkpoint and score the predictions.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(50..))]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub noise_sd: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Hyperparameters shared by `train` and `sweep`. Flags override the
/// config file, which overrides the defaults.
#[derive(Debug, Args)]
pub struct HyperArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_scales: Option<usize>,
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    /// Replace the positional embedding with zeros.
    #[arg(long)]
    pub no_posenc: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long)]
    pub eval_frac: Option<f64>,
}

impl HyperArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        if let Some(path) = &self.config {
            c.merge_file(path)?;
        }
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        over!(seed, k, embed_dim, hidden_dim, n_layers, n_scales, sigma_min, sigma_max, batch_size, epochs, lr, patience, train_frac, test_frac, eval_frac);
        if self.no_posenc {
            c.use_posenc = false;
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub operator: Option<OperatorKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = self.hyper.resolve()?;
        if let Some(op) = self.operator {
            c.operator = op;
        }
        if let Some(l) = self.lambda {
            c.lambda = l;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = OperatorKind::ALL)]
    pub operators: Vec<OperatorKind>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDAS)]
    pub lambdas: Vec<f64>,
    /// Seeds per cell, counting up from `--seed`.
    #[arg(long, default_value_t = 3)]
    pub n_seeds: usize,
    #[arg(long, default_value_t = 10)]
    pub grid_n: usize,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
    Eval,
    All,
}

impl SplitChoice {
    fn as_str(self) -> &'static str {
        match self {
            SplitChoice::Train => "train",
            SplitChoice::Test => "test",
            SplitChoice::Eval => "eval",
            SplitChoice::All => "all",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Rows to score; splits are redrawn from the checkpoint's seed and
    /// fractions.
    #[arg(long, value_enum, default_value_t = SplitChoice::Eval)]
    pub split: SplitChoice,
    #[arg(long, default_value_t = 10)]
    pub grid_n: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn commented(header: &str, body: &str) -> String {
    format!("# {header}\n{body}")
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let ps = synth_dataset(a.n as usize, a.seed, a.noise_sd)?;
    let header = format!("pegnn {TOOLKIT_VERSION} synth n={} seed={} noise_sd={}", a.n, a.seed, a.noise_sd);
    save_csv(&ps, &a.out, &[header])?;
    let (lo, hi) = ps
        .target
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    let mean = ps.target.iter().sum::<f64>() / ps.len() as f64;
    println!(
        "wrote {}: n={} F={} target min={lo:.4} mean={mean:.4} max={hi:.4}",
        a.out.display(),
        ps.len(),
        ps.n_features()
    );
    Ok(())
}

fn metrics_txt(header: &str, split: &str, log: &Metrics, raw: &Metrics, extra: &[(&str, String)]) -> String {
    let mut out = format!("# {header}\nsplit={split}\nn={}\n", log.n);
    for (prefix, m) in [("", log), ("raw_", raw)] {
        writeln!(out, "{prefix}mse={}\n{prefix}mae={}\n{prefix}mape={}", m.mse, m.mae, m.mape).expect("write to string");
    }
    writeln!(out, "mape_excluded={}", log.mape_excluded).expect("write to string");
    for (k, v) in extra {
        writeln!(out, "{k}={v}").expect("write to string");
    }
    out
}

fn metrics_json(config: &TrainConfig, split: &str, log: &Metrics, raw: &Metrics, extra: serde_json::Value) -> String {
    let v = json!({
        "toolkit": format!("pegnn {TOOLKIT_VERSION}"),
        "config_hash": config.hash(),
        "seed": config.seed,
        "split": split,
        "log": log,
        "raw": raw,
        "extra": extra,
    });
    serde_json::to_string_pretty(&v).expect("metrics serialize") + "\n"
}

fn history_csv(run: &TrainedRun) -> String {
    let mut out = format!("# {}\nepoch,train_loss,test_mse,test_mae,test_mape\n", run.config.header());
    for h in &run.history {
        writeln!(out, "{},{},{},{},{}", h.epoch, h.train_loss, h.test.mse, h.test.mae, h.test.mape).expect("write to string");
    }
    out
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = a.resolve()?;
    let data = load_csv(&a.data)?;
    let run = fit(&config, &data)?;
    create_dir(&a.out_dir)?;
    let header = config.header();
    Checkpoint::new(&config, run.best_epoch, run.record.clone(), run.model.clone()).save(&a.out_dir.join("checkpoint.json"))?;
    write(&a.out_dir.join("config.txt"), &commented(&header, &config.to_kv()))?;
    write(&a.out_dir.join("history.csv"), &history_csv(&run))?;
    let extra = [
        ("best_epoch", run.best_epoch.to_string()),
        ("epochs_run", run.history.len().to_string()),
        ("stopped_early", run.stopped_early.to_string()),
        ("constant_batches", run.constant_batches.to_string()),
    ];
    write(
        &a.out_dir.join("metrics.txt"),
        &metrics_txt(&header, "eval", &run.eval, &run.eval_raw, &extra),
    )?;
    write(
        &a.out_dir.join("metrics.json"),
        &metrics_json(
            &config,
            "eval",
            &run.eval,
            &run.eval_raw,
            json!({
                "best_epoch": run.best_epoch,
                "epochs_run": run.history.len(),
                "stopped_early": run.stopped_early,
                "constant_batches": run.constant_batches,
            }),
        ),
    )?;
    println!(
        "{} lambda={} seed={}: eval mse={:.4} mae={:.4} mape={:.4} (best epoch {} of {})",
        config.operator.model_name(),
        config.lambda,
        config.seed,
        run.eval.mse,
        run.eval.mae,
        run.eval.mape,
        run.best_epoch,
        run.history.len()
    );
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let base = a.hyper.resolve()?;
    let spec = SweepSpec {
        base,
        operators: a.operators.clone(),
        lambdas: a.lambdas.clone(),
        n_seeds: a.n_seeds,
        grid_n: a.grid_n,
    };
    spec.validate()?;
    let data = load_csv(&a.data)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let result = pool.install(|| run_sweep(&spec, &data))?;
    create_dir(&a.out_dir)?;
    let header = spec.base.header();
    write(&a.out_dir.join("table.md"), &result.table_markdown())?;
    write(&a.out_dir.join("table.csv"), &commented(&header, &result.table_csv()))?;
    write(&a.out_dir.join("runs.csv"), &commented(&header, &result.runs_csv()))?;
    write(&a.out_dir.join("smoothing.csv"), &commented(&header, &result.smoothing_csv()))?;
    let grids = a.out_dir.join("grids");
    create_dir(&grids)?;
    for r in &result.runs {
        if r.seed != spec.base.seed {
            continue;
        }
        if let Ok(s) = &r.outcome {
            let name = format!("{}_lambda{}", r.operator, r.lambda);
            write(&grids.join(format!("{name}_pred.csv")), &commented(&header, &s.pred_grid.to_csv()))?;
            write(&grids.join(format!("{name}_true.csv")), &commented(&header, &s.true_grid.to_csv()))?;
        }
    }
    print!("{}", result.table_markdown());
    let failed = result.runs.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed; see runs.csv", result.runs.len());
    }
    Ok(())
}

fn rows_for(choice: SplitChoice, config: &TrainConfig, data: &PointSet) -> Result<Vec<usize>> {
    Ok(match choice {
        SplitChoice::All => (0..data.len()).collect(),
        c => {
            let s = split(data.len(), &config.split_spec())?;
            match c {
                SplitChoice::Train => s.train,
                SplitChoice::Test => s.test,
                _ => s.eval,
            }
        }
    })
}

fn predictions_csv(header: &str, ps: &PointSet, truth: &[f64], pred: &[f64], moran: &[f64]) -> String {
    let mut out = format!("# {header}\nlon,lat,y_true,y_pred,moran_pred\n");
    for i in 0..ps.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            ps.coords[[i, 0]],
            ps.coords[[i, 1]],
            truth[i],
            pred[i],
            moran[i]
        )
        .expect("write to string");
    }
    out
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if a.grid_n < 2 {
        return Err(Error::config("grid_n", "must be at least 2"));
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data = load_csv(&a.data)?;
    let rows = rows_for(a.split, &ck.config, &data)?;
    let prepared = ck.transform.apply(&data)?.subset(&rows);
    let pred = predict(&ck.model, &ck.transform, ck.config.k, &prepared)?;
    let log_true = &prepared.points.target;
    let log = crate::pipeline::compute_metrics(&pred.log_pred, log_true)?;
    let raw = raw_metrics(&ck.transform, &pred.log_pred, log_true)?;

    create_dir(&a.out_dir)?;
    let header = ck.config.header();
    let split = a.split.as_str();
    let ps = &prepared.points;
    write(
        &a.out_dir.join("predictions_log.csv"),
        &predictions_csv(&header, ps, log_true, &pred.log_pred, &pred.moran_pred),
    )?;
    let raw_true: Vec<f64> = log_true.iter().map(|&v| ck.transform.invert(v)).collect();
    let raw_pred: Vec<f64> = pred.log_pred.iter().map(|&v| ck.transform.invert(v)).collect();
    write(
        &a.out_dir.join("predictions_raw.csv"),
        &predictions_csv(&header, ps, &raw_true, &raw_pred, &pred.moran_pred),
    )?;
    let mut scatter = format!("# {header}\ny_true,y_pred\n");
    for (t, p) in log_true.iter().zip(&pred.log_pred) {
        writeln!(scatter, "{t},{p}").expect("write to string");
    }
    write(&a.out_dir.join("scatter.csv"), &scatter)?;
    let pred_grid = spatial_variance_grid(ps.coords.view(), &pred.log_pred, a.grid_n)?;
    let true_grid = spatial_variance_grid(ps.coords.view(), log_true, a.grid_n)?;
    write(&a.out_dir.join("grid_pred.csv"), &commented(&header, &pred_grid.to_csv()))?;
    write(&a.out_dir.join("grid_true.csv"), &commented(&header, &true_grid.to_csv()))?;
    let extra = [
        ("pred_cell_variance", pred_grid.cell_variance().to_string()),
        ("true_cell_variance", true_grid.cell_variance().to_string()),
    ];
    write(&a.out_dir.join("metrics.txt"), &metrics_txt(&header, split, &log, &raw, &extra))?;
    write(
        &a.out_dir.join("metrics.json"),
        &metrics_json(
            &ck.config,
            split,
            &log,
            &raw,
            json!({
                "pred_cell_variance": pred_grid.cell_variance(),
                "true_cell_variance": true_grid.cell_variance(),
            }),
        ),
    )?;
    println!(
        "{} on {split} ({} points): mse={:.4} mae={:.4} mape={:.4}",
        ck.config.operator.model_name(),
        log.n,
        log.mse,
        log.mae,
        log.mape
    );
    Ok(())
}
