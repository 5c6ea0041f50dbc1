//! Command-line interface.
//!
//! Subcommands: `transfer` (one stylization), `ablate` (five-variant
//! suite), `sweep` (one axis, metrics CSV), `selftest` (oracle suite).
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Every output file
//! is assembled in memory before writing, so failures leave no partial
//! artifacts.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{apply_config_text, parse_blocks, parse_engine};
use crate::error::{Error, Result};
use crate::metrics::{rows_to_csv, MetricsRow};
use crate::pipeline::{ablation_suite, transfer, StyleTransferConfig};
use crate::ppm::{load_image, save_image};
use crate::sweep::{run_sweep, SweepAxis, SweepSpec};
use crate::tensor::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser)]
#[command(
    name = "stylediff",
    version,
    about = "Training-free attention-driven style transfer on a miniature diffusion engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stylize a content image with a style image
    Transfer(TransferArgs),
    /// Run the five-variant ablation suite and write images plus metrics
    Ablate(AblateArgs),
    /// Sweep one configuration axis and write a metrics CSV
    Sweep(SweepArgs),
    /// Run the built-in oracle suite and print one line per check
    Selftest,
}

/// Knobs shared by every pipeline-running subcommand. Flags override
/// whatever `--config` set.
#[derive(Args, Clone)]
struct TuningArgs {
    /// Key=value config file ('#' comments); flags override file entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Diffusion steps T
    #[arg(long)]
    steps: Option<usize>,
    /// Inversion resampling passes n
    #[arg(long = "spi-n")]
    spi_n: Option<usize>,
    /// Content statistic weight; the style weight is its complement
    #[arg(long = "alpha-c")]
    alpha_c: Option<f64>,
    /// Injection blocks among the upsampling stack, e.g. 5-6 or [5,6]
    #[arg(long)]
    blocks: Option<String>,
    /// Classifier-free guidance scale
    #[arg(long)]
    guidance: Option<f64>,
    /// Master seed fanned out to weights, codec and embedder
    #[arg(long)]
    seed: Option<u64>,
    /// Noise predictor: toy (transformer) or linear (analytic)
    #[arg(long)]
    engine: Option<String>,
    #[arg(long = "prompt-content")]
    prompt_content: Option<String>,
    #[arg(long = "prompt-style")]
    prompt_style: Option<String>,
    /// Disable style key/value injection
    #[arg(long = "no-sgsa")]
    no_sgsa: bool,
    /// Disable inversion refinement (naive single-pass inversion)
    #[arg(long = "no-spi")]
    no_spi: bool,
    /// Use plain statistic alignment instead of the content-aware blend
    #[arg(long = "no-ca-adain")]
    no_ca_adain: bool,
    /// Disable the image-token cross-attention streams
    #[arg(long = "no-dfca")]
    no_dfca: bool,
    /// Externally computed FID, folded into the ArtFID column
    #[arg(long)]
    fid: Option<f64>,
    /// Externally computed LPIPS, folded into the ArtFID column
    #[arg(long)]
    lpips: Option<f64>,
}

impl TuningArgs {
    fn build_config(&self) -> Result<StyleTransferConfig> {
        let mut cfg = StyleTransferConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            apply_config_text(&mut cfg, &text)?;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = crate::pipeline::SeedSet::from_master(seed);
        }
        if let Some(steps) = self.steps {
            cfg.steps = steps;
        }
        if let Some(n) = self.spi_n {
            cfg.spi_resample = n;
        }
        if let Some(a) = self.alpha_c {
            cfg.alpha_c = a;
            cfg.alpha_s = 1.0 - a;
        }
        if let Some(blocks) = &self.blocks {
            cfg.injection_up_blocks = parse_blocks(blocks)?;
        }
        if let Some(g) = self.guidance {
            cfg.guidance_scale = g;
        }
        if let Some(engine) = &self.engine {
            cfg.engine = parse_engine(engine)?;
        }
        if let Some(p) = &self.prompt_content {
            cfg.prompt_content = p.clone();
        }
        if let Some(p) = &self.prompt_style {
            cfg.prompt_style = p.clone();
        }
        if self.no_sgsa {
            cfg.ablation.sgsa = false;
        }
        if self.no_spi {
            cfg.ablation.spi = false;
        }
        if self.no_ca_adain {
            cfg.ablation.ca_adain = false;
        }
        if self.no_dfca {
            cfg.ablation.dfca = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TransferArgs {
    /// Content image (binary PPM, P6)
    #[arg(long)]
    content: PathBuf,
    /// Style image (binary PPM, P6)
    #[arg(long)]
    style: PathBuf,
    /// Output image path
    #[arg(long)]
    out: PathBuf,
    /// Optional metrics CSV path (one data row)
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    /// Directory receiving the five variant images and metrics.csv
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    /// Axis to sweep: alpha | spi_n | blocks | guidance
    #[arg(long)]
    axis: String,
    /// Comma-separated values; block sets use dashes, e.g. 5-6
    #[arg(long)]
    values: String,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tuning: TuningArgs,
}

/// Parses and runs; returns the process exit code.
pub fn cli_main(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            // clap prints help to stdout and errors (with usage) to stderr
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Transfer(args) => run_transfer(args),
        Command::Ablate(args) => run_ablate(args),
        Command::Sweep(args) => run_sweep_cmd(args),
        Command::Selftest => match crate::selftest::run_and_print(&mut std::io::stdout()) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("stylediff: {e}");
                EXIT_RUNTIME
            }
        },
    }
}

fn usage_err(e: Error) -> i32 {
    eprintln!("stylediff: {e}");
    EXIT_USAGE
}

fn runtime_err(e: Error) -> i32 {
    eprintln!("stylediff: {e}");
    EXIT_RUNTIME
}

fn load_pair(content: &Path, style: &Path) -> Result<(Tensor, Tensor)> {
    Ok((load_image(content)?, load_image(style)?))
}

fn run_transfer(args: TransferArgs) -> i32 {
    let cfg = match args.tuning.build_config() {
        Ok(cfg) => cfg,
        Err(e) => return usage_err(e),
    };
    let run = || -> Result<MetricsRow> {
        let (content, style) = load_pair(&args.content, &args.style)?;
        let report = transfer(&content, &style, &cfg)?;
        let row = MetricsRow::from_report(
            "transfer",
            &report,
            &content,
            &style,
            args.tuning.fid,
            args.tuning.lpips,
        )?;
        save_image(&args.out, &report.stylized)?;
        if let Some(metrics_path) = &args.metrics {
            std::fs::write(metrics_path, rows_to_csv(std::slice::from_ref(&row))).map_err(
                |source| Error::Io {
                    path: metrics_path.display().to_string(),
                    source,
                },
            )?;
        }
        Ok(row)
    };
    match run() {
        Ok(row) => {
            let artfid = row
                .artfid
                .map(|v| format!(" artfid={v}"))
                .unwrap_or_default();
            println!(
                "wrote {} (recon_error={} style_moment_distance={}{artfid})",
                args.out.display(),
                row.recon_error,
                row.style_moment_distance
            );
            EXIT_OK
        }
        Err(e) => runtime_err(e),
    }
}

fn run_ablate(args: AblateArgs) -> i32 {
    let cfg = match args.tuning.build_config() {
        Ok(cfg) => cfg,
        Err(e) => return usage_err(e),
    };
    let run = || -> Result<usize> {
        let (content, style) = load_pair(&args.content, &args.style)?;
        let results = ablation_suite(&content, &style, &cfg)?;
        let mut rows = Vec::with_capacity(results.len());
        for (label, report) in &results {
            rows.push(MetricsRow::from_report(
                label.clone(),
                report,
                &content,
                &style,
                args.tuning.fid,
                args.tuning.lpips,
            )?);
        }
        std::fs::create_dir_all(&args.out_dir).map_err(|source| Error::Io {
            path: args.out_dir.display().to_string(),
            source,
        })?;
        for (label, report) in &results {
            save_image(&args.out_dir.join(format!("{label}.ppm")), &report.stylized)?;
        }
        let csv_path = args.out_dir.join("metrics.csv");
        std::fs::write(&csv_path, rows_to_csv(&rows)).map_err(|source| Error::Io {
            path: csv_path.display().to_string(),
            source,
        })?;
        Ok(results.len())
    };
    match run() {
        Ok(n) => {
            println!(
                "wrote {n} variants and metrics.csv under {}",
                args.out_dir.display()
            );
            EXIT_OK
        }
        Err(e) => runtime_err(e),
    }
}

fn run_sweep_cmd(args: SweepArgs) -> i32 {
    let setup = || -> Result<(StyleTransferConfig, SweepSpec)> {
        let cfg = args.tuning.build_config()?;
        let axis: SweepAxis = args.axis.parse()?;
        let spec = SweepSpec::from_value_list(axis, &args.values)?;
        // dry-run each value so malformed entries fail before any compute
        for value in &spec.values {
            spec.configure(&cfg, value)?;
        }
        Ok((cfg, spec))
    };
    let (cfg, spec) = match setup() {
        Ok(pair) => pair,
        Err(e) => return usage_err(e),
    };
    let run = || -> Result<usize> {
        let (content, style) = load_pair(&args.content, &args.style)?;
        run_sweep(
            &content,
            &style,
            &cfg,
            &spec,
            &args.out,
            args.tuning.fid,
            args.tuning.lpips,
        )?;
        Ok(spec.values.len())
    };
    match run() {
        Ok(n) => {
            println!("wrote {n} rows to {}", args.out.display());
            EXIT_OK
        }
        Err(e) => runtime_err(e),
    }
}
