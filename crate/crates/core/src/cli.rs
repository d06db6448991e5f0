//! `scd` command line: `train`, `eval`, `synth`, `report`.
//!
//! Failures print one line to stderr, `error kind=<kind> message=<text>`, and
//! exit nonzero (2 for usage errors, 1 otherwise).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{self, synth, GenConfig, Palette, SampleSource, TransitionTable};
use crate::error::{Result, ScdError};
use crate::metrics::report::{heatmap_ppm, parse_matrix_csv, MetricsJson};
use crate::train::{self, checkpoint, Control, ModelPredictor, Trainer};

#[derive(Parser, Debug)]
#[command(name = "scd", version, about = "Semantic change detection on bi-temporal imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints, loss curve and config echo.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write a metrics report.
    Eval(EvalArgs),
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Print the headline metrics of a report directory and re-render heatmaps.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Run config (flat TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_cga: bool,
    #[arg(long)]
    no_sek_loss: bool,
    #[arg(long)]
    no_diff_branch: bool,
    #[arg(long)]
    no_fft_branch: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Dataset root.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let ab = &mut cfg.model.ablation;
        ab.use_cga &= !self.no_cga;
        ab.use_sek_loss &= !self.no_sek_loss;
        ab.use_diff_branch &= !self.no_diff_branch;
        ab.use_fft_branch &= !self.no_fft_branch;
        if let Some(s) = self.seed {
            cfg.model.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(c) = self.grad_clip {
            cfg.optim.grad_clip = Some(c);
        }
        if let Some(n) = self.iterations {
            cfg.optim.iterations = n;
        }
        if let Some(d) = &self.data {
            cfg.data.data_dir = d.clone();
        }
        if let Some(s) = &self.split {
            cfg.data.split = s.clone();
        }
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Continue from a checkpoint; its config is used and flags are ignored.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, required = true)]
    checkpoint: PathBuf,
    /// Dataset root; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Ids including no-change.
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 0.05)]
    illumination: f64,
    /// Probability that a region keeps its class.
    #[arg(long, default_value_t = 0.5)]
    stay: f64,
    #[arg(long, default_value_t = 1)]
    grid: usize,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory written by `eval`.
    dir: PathBuf,
}

fn warn_all(ds: &data::DiskDataset) {
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
}

fn class_check(cfg: &RunConfig, palette: &Palette) -> Result<()> {
    if palette.len() != cfg.model.num_classes {
        return Err(ScdError::Config(format!(
            "class-count mismatch: model has {} classes, dataset palette has {}",
            cfg.model.num_classes,
            palette.len()
        )));
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut trainer = match &args.resume {
        Some(p) => Trainer::from_checkpoint(checkpoint::load(p)?),
        None => Trainer::new(args.overrides.resolve()?)?,
    };
    let ds = data::open_dataset(&trainer.config.data)?;
    warn_all(&ds);
    class_check(&trainer.config, ds.palette())?;
    let out = trainer.config.out_dir.clone();
    println!(
        "train samples={} iterations={} trainable_parameters={} out={}",
        ds.len(),
        trainer.config.optim.iterations,
        trainer.store.num_trainable(),
        out.display()
    );
    let losses = trainer.run(&ds, Some(&out), |t| {
        println!("iteration {} params_checksum={:016x}", t.iteration, t.store.checksum());
        Ok(Control::Continue)
    })?;
    if let Some(last) = losses.last() {
        println!("final {}", last.csv_row(trainer.iteration));
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ck = checkpoint::load(&args.checkpoint)?;
    let mut data_cfg = ck.config.data.clone();
    if let Some(d) = &args.data {
        data_cfg.data_dir = d.clone();
    }
    if let Some(s) = &args.split {
        data_cfg.split = s.clone();
    }
    let ds = data::open_dataset(&data_cfg)?;
    warn_all(&ds);
    class_check(&ck.config, ds.palette())?;
    let predictor = ModelPredictor {
        model: &ck.model,
        store: &ck.store,
    };
    let out = train::evaluate(&predictor, &ds, ck.config.model.num_classes, args.batch_size)?;
    let json = train::write_report(&args.out, &out)?;
    print_metrics(&json);
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = GenConfig {
        size: args.size,
        n_classes: args.classes,
        noise_sigma: args.noise,
        illumination: args.illumination,
        grid: args.grid,
        side: (args.size / 5).max(args.grid)..=(args.size / 2).max(args.grid),
        ..GenConfig::default()
    };
    let table = TransitionTable::uniform_change(args.classes.saturating_sub(1).max(1), args.stay)?;
    let generated = synth::generate(args.count, &cfg, &table, args.seed)?;
    synth::write_dataset(&args.out, &generated, &Palette::synthetic(args.classes))?;
    println!(
        "synth samples={} changed_pixels={} out={}",
        generated.samples.len(),
        generated.transitions.total(),
        args.out.display()
    );
    Ok(())
}

fn print_metrics(m: &MetricsJson) {
    println!(
        "OA={:.2} F_scd={:.2} mIoU={:.2} SeK={:.2} changed_acc={:.2}",
        m.oa, m.fscd, m.miou, m.sek, m.changed_semantic_accuracy
    );
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| ScdError::io(path, e))
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let path = args.dir.join("metrics.json");
    let m: MetricsJson = serde_json::from_str(&read(&path)?).map_err(|e| ScdError::data(&path, e.to_string()))?;
    print_metrics(&m);
    for stem in ["confusion_t1", "confusion_t2", "confusion_bcd", "transitions", "transitions_gt"] {
        let csv = args.dir.join(format!("{stem}.csv"));
        if !csv.exists() {
            continue;
        }
        let (n, counts) = parse_matrix_csv(&read(&csv)?)?;
        let ppm = args.dir.join(format!("{stem}.ppm"));
        std::fs::write(&ppm, heatmap_ppm(n, &counts)).map_err(|e| ScdError::io(&ppm, e))?;
        if stem.starts_with("transitions") {
            let t = crate::metrics::TransitionMatrix::from_counts(n, counts)?;
            match t.dominant() {
                Some((a, b, p)) => println!("{stem} dominant {a}->{b} {p:.2}%"),
                None => println!("{stem} empty (no changed pixels)"),
            }
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let body = msg.split("Usage:").next().unwrap_or("invalid arguments");
            eprintln!("error kind=usage message={}", one_line(body.trim_start_matches("error: ")));
            return 2;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error kind={} message={}", e.kind(), one_line(&e.to_string()));
            1
        }
    }
}
