use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cemgms::experiment::{run_single, run_sweep, ExperimentConfig};
use cemgms::{Error, ErrorCategory};

/// Multiscale mixed solver for parabolic Darcy flow in high-contrast media.
///
/// Runs the fine reference and the multiscale pipeline, then writes relative
/// errors to `<out>/errors.csv` (or sweep reports with `--sweep`).
#[derive(Parser, Debug)]
#[command(name = "cemgms", version)]
struct Cli {
    /// Flat `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,

    /// `channelized`, `uniform`, or the path of a raster file.
    #[arg(long)]
    field: Option<String>,

    /// Fine cells per axis.
    #[arg(long)]
    nx: Option<usize>,

    /// Coarse elements per axis (H = 1/Nx).
    #[arg(long = "Nx")]
    coarse: Option<usize>,

    /// Eigenfunctions per coarse element.
    #[arg(long = "Lz")]
    lz: Option<usize>,

    /// Oversampling layers: an integer or `auto`.
    #[arg(long)]
    layers: Option<String>,

    #[arg(long)]
    tau: Option<f64>,

    /// Final time.
    #[arg(long = "T")]
    t_final: Option<f64>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// `Lz:1,2,3`, `layers:1,2,3` or `H:1/5,1/10,1/20`.
    #[arg(long)]
    sweep: Option<String>,

    /// Step indices whose fine fields are dumped, e.g. `0,50,100`.
    #[arg(long)]
    snapshots: Option<String>,

    /// Any other config key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    let flags: [(&str, Option<String>); 9] = [
        ("field", cli.field.clone()),
        ("nx", cli.nx.map(|v| v.to_string())),
        ("Nx", cli.coarse.map(|v| v.to_string())),
        ("Lz", cli.lz.map(|v| v.to_string())),
        ("layers", cli.layers.clone()),
        ("tau", cli.tau.map(|v| v.to_string())),
        ("T", cli.t_final.map(|v| v.to_string())),
        ("sweep", cli.sweep.clone()),
        ("snapshots", cli.snapshots.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if cfg.out.is_none() {
        cfg.out = Some(PathBuf::from("out"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::InvalidInput => 2,
        ErrorCategory::Io => 3,
        ErrorCategory::Numerical => 4,
        ErrorCategory::Internal => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(&cli).and_then(|cfg| {
        let out = cfg.out.clone().unwrap_or_default();
        if cfg.sweep.is_some() {
            let report = run_sweep(&cfg)?;
            print!("{}", report.summary_csv());
        } else {
            let report = run_single(&cfg)?;
            let (ev, ep) = report.errors.terminal();
            println!(
                "layers = {}, e_v(T) = {}, e_p(T) = {}",
                report.layers,
                ev.map_or("n/a".into(), |v| format!("{v:.4e}")),
                ep.map_or("n/a".into(), |v| format!("{v:.4e}"))
            );
        }
        eprintln!("results written to {}", out.display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
