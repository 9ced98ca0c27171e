//! `trunet`: command-line client of the enhancement service. Without
//! `--server` it starts the service in-process on a loopback port.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trunet_api::{BenchRequest, EnhanceRequest, ErrorKind, Output, SignOptions, DEFAULT_REMIX_DB};
use trunet_client::{Client, ClientError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "trunet", version, about = "Streaming speech denoising and dereverberation")]
struct Cli {
    /// Service URL; an in-process service is started when absent.
    #[arg(long, global = true, env = "TRUNET_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Separate a recording into direct, reverberant and noise signals.
    Enhance(EnhanceArgs),
    /// Time per-frame processing and report the real-time factor.
    Bench {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        int8: bool,
        #[arg(long, default_value_t = 1000)]
        frames: usize,
    },
    /// Write a randomly initialised weight file.
    InitWeights {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Ablation topology without the frequency-axis GRU.
        #[arg(long)]
        no_fgru: bool,
    },
    /// Calibrate and convert an f32 weight file to INT8.
    Quantize {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        calib: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// List tensors and the total parameter count of a weight file.
    Inspect { weights: PathBuf },
    /// Check the analytic loss gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    D,
    R,
    N,
    Mix,
}

impl From<Emit> for Output {
    fn from(e: Emit) -> Self {
        match e {
            Emit::D => Output::Direct,
            Emit::R => Output::Reverb,
            Emit::N => Output::Noise,
            Emit::Mix => Output::Mix,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum SignModeArg {
    Hard,
    Gumbel,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Run INT8 inference; f32 weights are calibrated on the input first.
    #[arg(long)]
    int8: bool,
    /// Direct-to-reverb ratio of the remixed output.
    #[arg(long, default_value_t = DEFAULT_REMIX_DB, allow_negative_numbers = true)]
    remix_db: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["d", "r", "n", "mix"])]
    emit: Vec<Emit>,
    #[arg(long, value_enum, default_value = "hard")]
    sign_mode: SignModeArg,
    /// Gumbel temperature.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Gumbel noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let code = match &e {
            ClientError::Api { body, .. } => match body.kind {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Check => EXIT_CHECK,
                ErrorKind::Data | ErrorKind::Internal => EXIT_DATA,
            },
            ClientError::Transport { .. } => EXIT_USAGE,
            ClientError::Protocol { .. } => EXIT_DATA,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| Failure::new(EXIT_DATA, format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| Failure::new(EXIT_DATA, format!("cannot write {}: {e}", path.display())))
}

async fn connect(server: Option<String>) -> CliResult<Client> {
    match server {
        Some(url) => Ok(Client::new(url)),
        None => {
            let addr = trunet_server::spawn(([127, 0, 0, 1], 0).into())
                .await
                .map_err(|e| Failure::new(EXIT_DATA, format!("cannot start local service: {e}")))?;
            Ok(Client::new(format!("http://{addr}")))
        }
    }
}

async fn run(cli: Cli) -> CliResult {
    let client = connect(cli.server).await?;
    match cli.command {
        Command::Enhance(args) => enhance(&client, args).await,
        Command::Bench { weights, int8, frames } => {
            let model = client.load_model(read(&weights)?).await?;
            let r = client.bench(&model.id, &BenchRequest { int8, frames, seed: 0 }).await;
            client.drop_model(&model.id).await?;
            let r = r?;
            let mode = if r.int8 { "int8" } else { "f32" };
            println!("mode: {mode}");
            println!("frames measured: {}", r.frames_measured);
            println!("mean frame time: {:.4} ms", r.mean_frame_ms);
            println!("p95 frame time: {:.4} ms", r.p95_frame_ms);
            println!("real-time factor: {:.4}", r.rtf);
            println!(
                "mode={mode} frames_measured={} mean_frame_ms={:.6} p95_frame_ms={:.6} rtf={:.6}",
                r.frames_measured, r.mean_frame_ms, r.p95_frame_ms, r.rtf
            );
            Ok(())
        }
        Command::InitWeights { seed, out, no_fgru } => {
            let bytes = client.init_weights(seed, no_fgru).await?;
            write(&out, &bytes)?;
            println!("wrote {} ({} bytes)", out.display(), bytes.len());
            Ok(())
        }
        Command::Quantize { weights, calib, out } => {
            let clips = calib.iter().map(|p| read(p)).collect::<CliResult<Vec<_>>>()?;
            let bytes = client.quantize(read(&weights)?, clips).await?;
            write(&out, &bytes)?;
            println!("wrote {} ({} bytes)", out.display(), bytes.len());
            Ok(())
        }
        Command::Inspect { weights } => {
            let r = client.inspect(read(&weights)?).await?;
            let width = r.tensors.iter().map(|t| t.name.len()).max().unwrap_or(4);
            println!("{:width$}  dtype  shape", "name");
            for t in &r.tensors {
                let shape: Vec<String> = t.shape.iter().map(ToString::to_string).collect();
                println!("{:width$}  {:5}  [{}]", t.name, t.dtype, shape.join(", "));
            }
            println!("tensors: {}", r.tensors.len());
            println!("quantized: {}", r.quantized);
            println!("file size: {} bytes ({:.4} MiB)", r.size_bytes, r.size_bytes as f64 / (1 << 20) as f64);
            println!("total parameters: {}", r.total_parameters);
            Ok(())
        }
        Command::Gradcheck { trials, seed } => {
            let r = client.gradcheck(trials, seed).await?;
            println!(
                "trials={} max_relative_error={:.3e} tolerance={:.0e} passed={}",
                r.trials, r.max_relative_error, r.tolerance, r.passed
            );
            if r.passed {
                Ok(())
            } else {
                Err(Failure::new(EXIT_CHECK, "gradient check failed"))
            }
        }
    }
}

async fn enhance(client: &Client, a: EnhanceArgs) -> CliResult {
    let sign = match a.sign_mode {
        SignModeArg::Hard => SignOptions::Hard,
        SignModeArg::Gumbel => SignOptions::Gumbel { tau: a.tau, seed: a.seed },
    };
    let mut emit: Vec<Output> = Vec::new();
    for e in a.emit {
        let o = Output::from(e);
        if !emit.contains(&o) {
            emit.push(o);
        }
    }
    let audio = read(&a.input)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| Failure::new(EXIT_DATA, format!("cannot create {}: {e}", a.out_dir.display())))?;
    let model = client.load_model(read(&a.weights)?).await?;
    let req = EnhanceRequest {
        audio: trunet_api::Blob(audio),
        int8: a.int8,
        remix_db: a.remix_db,
        emit,
        sign,
    };
    let r = client.enhance(&model.id, &req).await;
    client.drop_model(&model.id).await?;
    let r = r?;
    for out in &r.outputs {
        let path = a.out_dir.join(format!("{}.wav", out.output.name()));
        write(&path, &out.wav.0)?;
        println!("wrote {}", path.display());
    }
    println!(
        "samples={} frames={} latency_samples={} int8={}",
        r.samples, r.frames, r.latency_samples, r.int8
    );
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
