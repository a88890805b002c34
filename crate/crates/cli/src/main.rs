use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mcsr_core::io::{read_image, write_image};
use mcsr_core::kspace::{central_mask, degrade};
use mcsr_core::loss::{full_loss, psnr, rmse, ssim};
use mcsr_core::selftest::run_selftest;
use mcsr_core::{Error, Model, ModelConfig, Result, WeightStore};

#[derive(Parser)]
#[command(name = "mcsr", version, about = "Reference-guided MR super-resolution")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON model configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Weight file; seeded random weights are used when omitted.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Upsampling factor, overriding the configuration.
    #[arg(long, global = true)]
    uf: Option<usize>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random weights, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Keep the central k-space block of an HR image and write the LR magnitude.
    Degrade { input: PathBuf },
    /// Super-resolve a target LR image guided by an HR reference.
    Forward { target: PathBuf, reference: PathBuf },
    /// Print "id psnr ssim rmse l_rec l_dc l_full" for SR/HR pairs.
    Metrics {
        sr: PathBuf,
        hr: PathBuf,
        /// Further SR/HR pairs.
        more: Vec<PathBuf>,
    },
    /// Write the LR-grid matching result as text.
    MatchDebug { target: PathBuf, reference: PathBuf },
    /// Run the built-in checks of every module.
    Selftest,
    /// Write the seeded random weights for the configuration.
    InitWeights,
}

fn load_config(common: &Common) -> Result<ModelConfig> {
    let mut cfg = match &common.config {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    };
    if let Some(uf) = common.uf {
        cfg.uf = uf;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(common: &Common) -> Result<Model> {
    let cfg = load_config(common)?;
    match &common.weights {
        Some(p) => Model::from_store(cfg, &WeightStore::load(p)?),
        None => Model::random(cfg, cfg.seed),
    }
}

fn require_out(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::input("--out is required for this command"))
}

fn cmd_degrade(common: &Common, input: &Path) -> Result<()> {
    let uf = match common.uf {
        Some(uf) => uf,
        None => load_config(common)?.uf,
    };
    let hr = read_image(input)?;
    let lr = degrade(&hr, uf)?;
    write_image(require_out(common)?, &lr)?;
    println!("degraded {}x{} -> {}x{} (uf {uf})", hr.height, hr.width, lr.height, lr.width);
    Ok(())
}

fn cmd_forward(common: &Common, target: &Path, reference: &Path) -> Result<()> {
    let out = require_out(common)?;
    let model = load_model(common)?;
    let tar = read_image(target)?;
    let reference = read_image(reference)?;
    let start = Instant::now();
    let sr = model.forward(&tar, &reference)?;
    write_image(out, &sr.clamped())?;
    println!(
        "wrote {}x{} SR image to {} in {:.2}s",
        sr.height,
        sr.width,
        out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_metrics(common: &Common, files: &[&PathBuf]) -> Result<()> {
    if files.len() % 2 != 0 {
        return Err(Error::input("metrics expects SR/HR file pairs"));
    }
    let cfg = load_config(common)?;
    let mut lines = vec!["id psnr ssim rmse l_rec l_dc l_full".to_string()];
    for pair in files.chunks(2) {
        let sr = read_image(pair[0])?;
        let hr = read_image(pair[1])?;
        let mask = central_mask(hr.height, hr.width, cfg.uf)?;
        let loss = full_loss(&sr, &hr, &mask, &cfg.loss)?;
        let id = pair[0].file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        lines.push(format!(
            "{id} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            psnr(&sr, &hr, 1.0)?,
            ssim(&sr, &hr)?,
            rmse(&sr, &hr)?,
            loss.l_rec,
            loss.l_dc,
            loss.l_full
        ));
    }
    let text = lines.join("\n") + "\n";
    match &common.out {
        Some(p) => std::fs::write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_match_debug(common: &Common, target: &Path, reference: &Path) -> Result<()> {
    let model = load_model(common)?;
    let result = model.match_debug(&read_image(target)?, &read_image(reference)?)?;
    let text = result.to_text();
    match &common.out {
        Some(p) => {
            std::fs::write(p, &text)?;
            println!("wrote {} match lines to {}", text.lines().count(), p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_selftest() -> Result<bool> {
    let start = Instant::now();
    let report = run_selftest();
    print!("{}", report.to_text());
    println!(
        "selftest {} in {:.2}s",
        if report.all_passed() { "passed" } else { "FAILED" },
        start.elapsed().as_secs_f64()
    );
    Ok(report.all_passed())
}

fn cmd_init_weights(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let store = Model::random_store(&cfg, cfg.seed)?;
    let out = require_out(common)?;
    store.save(out)?;
    println!("wrote {} tensors to {}", store.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let c = &cli.common;
    match &cli.command {
        Command::Degrade { input } => cmd_degrade(c, input)?,
        Command::Forward { target, reference } => cmd_forward(c, target, reference)?,
        Command::Metrics { sr, hr, more } => {
            let files: Vec<&PathBuf> = [sr, hr].into_iter().chain(more).collect();
            cmd_metrics(c, &files)?
        }
        Command::MatchDebug { target, reference } => cmd_match_debug(c, target, reference)?,
        Command::Selftest => return cmd_selftest(),
        Command::InitWeights => cmd_init_weights(c)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
