use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asrpu::reference::{reference_assets, reference_model, ReferenceSizes};
use asrpu::runner::{save_wav, Mode, RunManifest};
use asrpu::{Error, ErrorCategory, Settings};

/// Simulates speech recognition on the programmable ASR accelerator.
#[derive(Parser)]
#[command(name = "asrpu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode a WAV file and report transcript and timing.
    Run(RunArgs),
    /// Write the reference workload (config, model, tokens, lexicon, LM, audio) to a directory.
    GenerateReference(GenerateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Settings TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Binary model file or TOML model descriptor.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    /// ARPA language model.
    #[arg(long)]
    lm: PathBuf,
    #[arg(long)]
    tokens: PathBuf,
    /// 16-bit PCM mono WAV.
    #[arg(long)]
    audio: PathBuf,
    #[arg(long, default_value_t = 80.0)]
    chunk_ms: f64,
    #[arg(long, value_enum, default_value_t = Mode::Streaming)]
    mode: Mode,
    /// JSON report path; the per-kernel table goes next to it as `.tsv`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Seed for weights generated from a TOML descriptor.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    beam: Option<f64>,
    #[arg(long)]
    lm_weight: Option<f64>,
    #[arg(long)]
    word_penalty: Option<f64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the model as a binary weight file instead of a descriptor.
    #[arg(long)]
    binary: bool,
    /// Length of the generated audio.
    #[arg(long, default_value_t = 4.0)]
    seconds: f64,
}

fn run(args: RunArgs) -> asrpu::Result<()> {
    let manifest = RunManifest {
        config: args.config,
        model: args.model,
        lexicon: args.lexicon,
        lm: args.lm,
        tokens: args.tokens,
        audio: args.audio,
        chunk_ms: args.chunk_ms,
        mode: args.mode,
        report: args.report,
        seed: args.seed,
        beam: args.beam,
        lm_weight: args.lm_weight,
        word_penalty: args.word_penalty,
    };
    let report = manifest.run()?;
    println!("transcript: {}", report.transcript.join(" "));
    println!(
        "steps: {}  audio: {:.3} s  simulated: {:.6} s  real-time factor: {:.3}  max step: {:.3} ms",
        report.steps.len(),
        report.total_audio_seconds,
        report.total_simulated_seconds,
        report.real_time_factor,
        report.max_step_seconds * 1e3
    );
    for s in report.steps.iter().filter(|s| s.early_stop_kernel.is_some()) {
        println!("step {} stopped early at kernel {}", s.step_index, s.early_stop_kernel.unwrap_or_default());
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> asrpu::Result<()> {
    if !(args.seconds > 0.0) {
        return Err(Error::Argument(format!("seconds must be positive, got {}", args.seconds)));
    }
    std::fs::create_dir_all(&args.out)?;
    let settings = Settings::default();
    let assets = reference_assets(ReferenceSizes::default(), args.seed)?;
    std::fs::write(args.out.join("config.toml"), settings.to_toml())?;
    std::fs::write(args.out.join("tokens.txt"), assets.tokens.to_text())?;
    std::fs::write(args.out.join("lexicon.txt"), assets.lexicon.to_text(&assets.tokens))?;
    std::fs::write(args.out.join("lm.arpa"), assets.lm.to_arpa())?;
    let model = reference_model(args.seed)?;
    if args.binary {
        model.save(&args.out.join("model.bin"))?;
    } else {
        std::fs::write(args.out.join("model.toml"), model.descriptor.to_toml())?;
    }
    let rate = settings.frontend.sample_rate;
    let n = (f64::from(rate) * args.seconds).round() as usize;
    let samples: Vec<f32> = (0..n)
        .map(|i| {
            let t = i as f32 / rate as f32;
            0.3 * (2.0 * std::f32::consts::PI * 220.0 * t).sin() * (1.0 + (3.0 * t).sin()) / 2.0
        })
        .collect();
    save_wav(&args.out.join("audio.wav"), &samples, rate)?;
    println!("wrote reference workload to {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::GenerateReference(a) => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Input => 3,
                ErrorCategory::Config => 4,
                ErrorCategory::Simulation => 5,
            })
        }
    }
}
