use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dasfft::harness::{
    load_eval_items, pretrain_hq_encoder, read_parsing_file, restore, run_dafe_training, run_gan_training, run_gradsuite, synthesize_corpus, write_degraded_set,
    write_face_set, Pair, RunConfig, Split, SEED_ENV,
};
use dasfft::image_io::{read_ppm_file, write_ppm_file};
use dasfft::metrics::MetricReport;
use dasfft::networks::{ModelConfig, ModelState};
use dasfft::{Error, Result};

#[derive(Parser)]
#[command(name = "dasfft", version, about = "Blind face restoration with statistical facial feature transforms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize faces with parsing maps and depth.
    Facegen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Degrade every face of a face manifest.
    Degrade {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        m_min: usize,
        #[arg(long, default_value_t = 3)]
        m_max: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the HQ encoder as an autoencoder; creates the model file.
    PretrainEncoder(RunArgs),
    /// Align the LQ encoder to the frozen HQ encoder.
    AlignDafe(RunArgs),
    /// Alternating GAN training of the generator.
    Train(RunArgs),
    /// Restore one LQ image.
    Restore {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        parsing: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a degraded manifest and write per-sample metrics.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    model: Option<PathBuf>,
}

impl RunArgs {
    /// Defaults, then the file, then the seed variable, then flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_env_seed(std::env::var(SEED_ENV).ok().as_deref())?;
        for s in &self.set {
            cfg.set_assignment(s)?;
        }
        if let Some(m) = &self.model {
            cfg.model_path = m.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_model(cfg: &RunConfig) -> Result<ModelState> {
    let state = ModelState::load(&cfg.model_path)?;
    let c = &state.config;
    if c.generator.resolution != cfg.resolution || c.ablation != cfg.ablation {
        return Err(Error::State(format!(
            "{} was built for resolution {} / {}, the run asks for {} / {}",
            cfg.model_path.display(),
            c.generator.resolution,
            c.ablation,
            cfg.resolution,
            cfg.ablation
        )));
    }
    Ok(state)
}

fn corpus(cfg: &RunConfig, split: Split) -> Result<Vec<Pair>> {
    let n = match split {
        Split::Train => cfg.train_size,
        Split::Test => cfg.test_size,
    };
    synthesize_corpus(cfg.seed, split, n, cfg.resolution, cfg.m_range)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn pretrain(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let mut state = ModelState::new(ModelConfig::new(cfg.resolution, cfg.ablation, cfg.seed)?)?;
    let report = pretrain_hq_encoder(&cfg, &mut state, &corpus(&cfg, Split::Train)?)?;
    if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
        println!("pretrain: {} steps, pixel mse {first:.6} -> {last:.6}", report.steps);
    }
    state.save(&cfg.model_path)?;
    println!("saved {}", cfg.model_path.display());
    Ok(())
}

fn align(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let mut state = load_model(&cfg)?;
    let report = run_dafe_training(&cfg, &mut state, &corpus(&cfg, Split::Train)?, &corpus(&cfg, Split::Test)?)?;
    println!(
        "align-dafe: {} steps, held-out embedding mse {:.6} -> {:.6} (ratio {:.4})",
        report.steps,
        report.initial_mse,
        report.final_mse,
        report.ratio()
    );
    state.save(&cfg.model_path)?;
    println!("saved {}", cfg.model_path.display());
    Ok(())
}

fn train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let mut state = load_model(&cfg)?;
    let mut log = create(&cfg.log_path)?;
    let report = run_gan_training(&cfg, &mut state, &corpus(&cfg, Split::Train)?, Some(&mut log))?;
    log.flush()?;
    if let Some(last) = report.rows.last() {
        println!("train: {} steps, final {}", report.rows.len(), last.csv_row(report.rows.len() - 1));
    }
    state.save(&cfg.model_path)?;
    println!("saved {} and {}", cfg.model_path.display(), cfg.log_path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Facegen { seed, count, res, out } => {
            let m = write_face_set(seed, count, res, &out)?;
            println!("wrote {count} faces, manifest {}", m.display());
        }
        Command::Degrade { manifest, seed, m_min, m_max, out } => {
            let m = write_degraded_set(&manifest, seed, (m_min, m_max), &out)?;
            println!("wrote degraded manifest {}", m.display());
        }
        Command::PretrainEncoder(a) => pretrain(&a)?,
        Command::AlignDafe(a) => align(&a)?,
        Command::Train(a) => train(&a)?,
        Command::Restore { model, input, parsing, out } => {
            let state: ModelState = ModelState::load(&model)?;
            let r = restore(&state, &read_ppm_file(&input)?, &read_parsing_file(&parsing)?)?;
            write_ppm_file(&out, &r.image)?;
            println!("restored {} (encoder calls: {})", out.display(), r.trace.join(" "));
        }
        Command::Eval { model, manifest, csv } => {
            let state: ModelState = ModelState::load(&model)?;
            let items = load_eval_items(&manifest)?;
            let report = dasfft::harness::evaluate(&state, &items)?;
            std::fs::write(&csv, report.restored.to_csv()).map_err(|e| Error::Io { path: csv.clone(), source: e })?;
            let summary = |label: &str, r: &MetricReport| {
                let (p, s) = r.mean();
                println!("{label:9} psnr {p:.4} dB  ssim {s:.4}");
            };
            summary("restored", &report.restored);
            summary("lq input", &report.baseline);
            if let Some(e) = &report.embedding {
                println!(
                    "embedding distance: aligned {:.6}, unaligned {:.6}, aligned closer on {:.1}% of samples",
                    e.mean_aligned(),
                    e.mean_unaligned(),
                    100.0 * e.win_fraction()
                );
            }
            println!("wrote {} ({} rows)", csv.display(), report.restored.rows.len());
        }
        Command::Gradcheck => {
            let started = std::time::Instant::now();
            let checks = run_gradsuite()?;
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed()).count();
            println!("{} checks, {failed} failed, {:.1}s", checks.len(), started.elapsed().as_secs_f64());
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
