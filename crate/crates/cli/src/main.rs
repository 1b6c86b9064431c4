use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use tmis::config::SceneConfig;
use tmis::forward::{NoiseSpec, SolveMethod};
use tmis::harness::{
    cmd_eval, cmd_invert, cmd_rerun, cmd_simulate, cmd_sweep, EvalArgs, InvertArgs, MethodSpec, RefinerSpec, SceneSource,
    SimulateArgs, SweepArgs, EVAL_HEADER,
};
use tmis::inversion::{Init, InversionOptions, LambdaScaling};
use tmis::unrolled::DEFAULT_LAYERS;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

#[derive(Parser)]
#[command(name = "tmis", version, about = "2-D TM microwave inverse scattering")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate measurements of a scene.
    Simulate(SimulateCli),
    /// Reconstruct the contrast from a simulation directory.
    Invert(InvertCli),
    /// Score a reconstruction against the simulated truth.
    Eval(EvalCli),
    /// Cross product of noise levels, contrasts, seeds and methods.
    Sweep(SweepCli),
    /// Re-execute a run from its manifest.
    Rerun(RerunCli),
}

#[derive(Args)]
struct SceneArgs {
    /// Scene JSON file, `austria`, or `cylinders:SEED[:lossy]`.
    #[arg(long)]
    scene: String,
    /// Contrast of the built-in Austria profile (real part).
    #[arg(long, default_value_t = 1.0)]
    contrast: f64,
    /// Imaginary part of the Austria profile's contrast.
    #[arg(long, default_value_t = 0.0)]
    contrast_im: f64,
    /// Forward grid cells per side.
    #[arg(long, default_value_t = 100)]
    grid: usize,
    /// Inversion grid cells per side.
    #[arg(long, default_value_t = 64)]
    inv_grid: usize,
    #[arg(long, default_value_t = 3.0)]
    freq_ghz: f64,
    /// Number of transmitters.
    #[arg(long, default_value_t = 16)]
    ni: usize,
    /// Number of receivers.
    #[arg(long, default_value_t = 32)]
    nr: usize,
    /// Antenna ring radius.
    #[arg(long, default_value_t = 1.67)]
    ring_m: f64,
    /// Side of the square domain of interest.
    #[arg(long, default_value_t = 0.2)]
    doi_m: f64,
    /// Treat scenes as lossy (complex contrast).
    #[arg(long)]
    lossy: bool,
    /// Solve the forward problem with dense LU instead of BiCGSTAB.
    #[arg(long)]
    dense: bool,
}

impl SceneArgs {
    fn config(&self) -> SceneConfig {
        SceneConfig {
            doi_side_m: self.doi_m,
            antenna_radius_m: self.ring_m,
            freq_hz: self.freq_ghz * 1e9,
            n_tx: self.ni,
            n_rx: self.nr,
            forward_grid: self.grid,
            inversion_grid: self.inv_grid,
            lossy: self.lossy,
        }
    }

    fn source(&self) -> tmis::Result<SceneSource> {
        SceneSource::parse(&self.scene, Complex64::new(self.contrast, self.contrast_im))
    }

    fn solver(&self) -> SolveMethod {
        if self.dense { SolveMethod::DenseLu } else { SolveMethod::Iterative }
    }
}

#[derive(Args)]
struct SimulateCli {
    #[command(flatten)]
    scene: SceneArgs,
    /// Noise level as ||N||/||E^s||.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (default: a new directory under $TMIS_OUT_ROOT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodName {
    Bps,
    Bim,
    Vbim,
    Unrolled,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitName {
    Bps,
    Zero,
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Tikhonov weight, relative to ||A||^2 unless --absolute-lambda.
    #[arg(long, default_value_t = 5e-4)]
    lambda: f64,
    #[arg(long)]
    absolute_lambda: bool,
    #[arg(long, value_enum, default_value_t = InitName::Bps)]
    init: InitName,
    /// Relative residual change that stops BIM/VBIM; 0 disables.
    #[arg(long, default_value_t = 1e-4)]
    early_stop: f64,
    /// Keep negative contrast parts instead of zeroing them.
    #[arg(long)]
    no_clamp: bool,
    #[arg(long, default_value_t = DEFAULT_LAYERS)]
    layers: usize,
    /// `identity` or `tabulated:DIR`.
    #[arg(long, default_value = "identity")]
    refiner: String,
}

impl MethodArgs {
    fn spec(&self, method: MethodName) -> tmis::Result<MethodSpec> {
        let options = InversionOptions {
            lambda: self.lambda,
            lambda_scaling: if self.absolute_lambda { LambdaScaling::Absolute } else { LambdaScaling::Relative },
            iters: self.iters,
            early_stop: (self.early_stop > 0.0).then_some(self.early_stop),
            clamp: !self.no_clamp,
            ..InversionOptions::default()
        };
        let init = match self.init {
            InitName::Bps => Init::Bps,
            InitName::Zero => Init::Zero,
        };
        Ok(match method {
            MethodName::Bps => MethodSpec::Bps,
            MethodName::Bim => MethodSpec::Bim { options, init },
            MethodName::Vbim => MethodSpec::Vbim { options, init },
            MethodName::Unrolled => MethodSpec::Unrolled {
                layers: self.layers,
                refiner: parse_refiner(&self.refiner)?,
                clamp: !self.no_clamp,
            },
        })
    }
}

fn parse_refiner(text: &str) -> tmis::Result<RefinerSpec> {
    if text == "identity" {
        return Ok(RefinerSpec::Identity);
    }
    match text.strip_prefix("tabulated:") {
        Some(dir) if !dir.is_empty() => Ok(RefinerSpec::Tabulated {
            path: PathBuf::from(dir),
            tolerance: 1e-12,
        }),
        _ => Err(tmis::Error::Config(format!("unknown refiner {text:?}"))),
    }
}

#[derive(Args)]
struct InvertCli {
    /// Simulation directory.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum)]
    method: MethodName,
    #[command(flatten)]
    params: MethodArgs,
    /// Output directory (default: <run>/<method>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCli {
    /// Simulation directory holding the truth.
    #[arg(long)]
    run: PathBuf,
    /// Inversion directory or contrast dump.
    #[arg(long)]
    pred: PathBuf,
    /// CSV file to append to.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCli {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3")]
    noise_levels: Vec<f64>,
    /// Override every shape's contrast with each of these values.
    #[arg(long, value_delimiter = ',')]
    contrasts: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "bps,bim,vbim")]
    methods: Vec<MethodName>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[command(flatten)]
    params: MethodArgs,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RerunCli {
    /// manifest.json of the run to repeat.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> tmis::Result<()> {
    match cli.command {
        Cmd::Simulate(a) => {
            let args = SimulateArgs {
                scene: a.scene.source()?,
                config: a.scene.config(),
                noise: NoiseSpec {
                    level: a.noise,
                    seed: a.seed,
                },
                forward_solver: a.scene.solver(),
                out: a.out,
            };
            let (dir, m) = cmd_simulate(&args)?;
            println!("{} {}", m.run_id, dir.display());
        }
        Cmd::Invert(a) => {
            let args = InvertArgs {
                run: a.run,
                method: a.params.spec(a.method)?,
                out: a.out,
            };
            let (dir, m) = cmd_invert(&args)?;
            println!("{} {} iterations={}", m.run_id, dir.display(), m.iterations.unwrap_or(0));
        }
        Cmd::Eval(a) => {
            let csv_given = a.csv.is_some();
            let row = cmd_eval(&EvalArgs {
                run: a.run,
                pred: a.pred,
                csv: a.csv,
            })?;
            if !csv_given {
                println!("{EVAL_HEADER}");
            }
            println!("{}", row.to_csv());
        }
        Cmd::Sweep(a) => {
            let methods = a.methods.iter().map(|m| a.params.spec(*m)).collect::<tmis::Result<Vec<_>>>()?;
            let args = SweepArgs {
                scene: a.scene.source()?,
                config: a.scene.config(),
                noise_levels: a.noise_levels,
                contrasts: (!a.contrasts.is_empty()).then_some(a.contrasts),
                methods,
                seeds: a.seeds,
                jobs: a.jobs,
                out: a.out,
            };
            let records = cmd_sweep(&args)?;
            let failed = records.iter().filter(|r| r.result.is_err()).count();
            println!("{} runs, {failed} failed, written to {}", records.len(), args.out.display());
        }
        Cmd::Rerun(a) => {
            let (dir, m) = cmd_rerun(&a.manifest, &a.out)?;
            println!("{} {}", m.run_id, dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
    }
}
