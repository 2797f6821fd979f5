use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use elevmap_cli::bench::{bench, BenchMode, BenchOptions};
use elevmap_cli::evaluate::{evaluate, EvalOptions};
use elevmap_cli::run::{run, RunOptions};
use elevmap_cli::simulate::simulate;
use elevmap_cli::{load_config, CliError};

macro_rules! config_flags {
    ($($field:ident => $key:literal),* $(,)?) => {
        /// Config file plus per-key overrides; flags win over the file.
        #[derive(Args, Debug)]
        struct ConfigArgs {
            /// Flat `key = value` config file.
            #[arg(long, value_name = "FILE")]
            config: Option<PathBuf>,
            $(
                #[arg(long = $key, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl ConfigArgs {
            fn overrides(&self) -> Vec<(String, String)> {
                let mut v = Vec::new();
                $(
                    if let Some(x) = &self.$field {
                        v.push(($key.to_string(), x.clone()));
                    }
                )*
                v
            }
        }
    };
}

config_flags! {
    layers => "layers",
    base_res => "base-res",
    map_size => "map-size",
    first_meas_inflation => "first-meas-inflation",
    roughness_thresh => "roughness-thresh",
    landing_radius => "landing-radius",
    search_radius => "search-radius",
    slope_thresh => "slope-thresh",
    max_peaks => "max-peaks",
    shift_iters => "shift-iters",
    w_rough => "w-rough",
    w_dist => "w-dist",
    w_sigma => "w-sigma",
    peak_factor => "peak-factor",
    min_distance => "min-distance",
    inflation => "inflation",
    inflation_k => "inflation-k",
    roughness_method => "roughness-method",
    update_mode => "update-mode",
    focal => "focal",
    baseline => "baseline",
    sigma_d => "sigma-d",
    seed => "seed",
    rocks => "rocks",
    undulation => "undulation",
    frame_count => "frame-count",
    image_cols => "image-cols",
    image_rows => "image-rows",
    pixel_stride => "pixel-stride",
    noise => "noise",
    frame_format => "frame-format",
}

#[derive(Parser, Debug)]
#[command(name = "elevmap", version, about = "Multi-resolution elevation mapping and landing site detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Updates,
    Seg,
    Fusion,
    Landing,
    Shift,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic flight with ground truth.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Map, segment and detect on a directory of frames.
    Run {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Abort on the first malformed frame.
        #[arg(long)]
        strict: bool,
        /// Skip the per-frame raster export.
        #[arg(long)]
        no_frame_rasters: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Benchmarks and harnesses.
    Bench {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frames for `fusion`; rendered from the config when omitted.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        measurements: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2])]
        resolutions: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        starts: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a run directory against simulation truth.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Defaults to `<run>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 3.0)]
        rmse_factor: f64,
        #[arg(long)]
        max_failures: Option<usize>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { out, cfg } => {
            let config = load_config(cfg.config.as_deref(), &cfg.overrides())?;
            let s = simulate(&config, &out)?;
            println!("wrote {} frames, {} points, {} rocks to {}", s.frames, s.points, s.rocks, out.display());
        }
        Command::Run {
            frames,
            out,
            threads,
            strict,
            no_frame_rasters,
            cfg,
        } => {
            let config = load_config(cfg.config.as_deref(), &cfg.overrides())?;
            let opts = RunOptions {
                frames,
                out,
                threads,
                strict,
                frame_rasters: !no_frame_rasters,
            };
            let s = run(&config, &opts)?;
            println!(
                "frames {}  skipped {}  rejects {}  points {}  dropped {}  update time {:.3} s",
                s.frames, s.skipped, s.rejects, s.points, s.dropped, s.update_seconds
            );
        }
        Command::Bench {
            mode,
            out,
            frames,
            measurements,
            resolutions,
            starts,
            cfg,
        } => {
            let config = load_config(cfg.config.as_deref(), &cfg.overrides())?;
            let mode = match mode {
                Mode::Updates => BenchMode::Updates,
                Mode::Seg => BenchMode::Seg,
                Mode::Fusion => BenchMode::Fusion,
                Mode::Landing => BenchMode::Landing,
                Mode::Shift => BenchMode::Shift,
            };
            let opts = BenchOptions {
                mode,
                out,
                frames,
                measurements,
                resolutions,
                starts,
            };
            print!("{}", bench(&config, &opts)?);
        }
        Command::Eval {
            run,
            truth,
            out,
            rmse_factor,
            max_failures,
        } => {
            let out = out.unwrap_or_else(|| run.join("eval"));
            let s = evaluate(&EvalOptions {
                run,
                truth,
                out,
                rmse_factor,
                max_failures,
            })?;
            println!(
                "frames {}  final rmse {}  final mean sigma_z {:.4}  selected on rock {}  dt-max on rock {}  rejects {}",
                s.frames,
                s.final_rmse.map_or_else(|| "none".into(), |v| format!("{v:.4}")),
                s.final_sigma_z,
                s.selected_failures,
                s.dt_max_failures,
                s.rejects
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("elevmap: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
