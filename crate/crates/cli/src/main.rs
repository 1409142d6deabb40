use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dryflow::config::RunConfig;
use dryflow::flow::Variant;
use dryflow::pipeline::{self, ToyCorpusSpec, VariantModel};
use dryflow::{Error, ErrorKind, Result};

#[derive(Parser, Debug)]
#[command(name = "dryflow", version, about = "Speech enhancement by semantic-conditioned flow matching")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML). Created from --profile when missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; the effective config is written there.
    #[arg(long, global = true, default_value = ".")]
    output: PathBuf,
    /// Named defaults: desk, toy or paper.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus of harmonic "speakers", noises and RIRs.
    MakeToyCorpus {
        #[arg(long, default_value_t = 4)]
        speakers: usize,
        #[arg(long, default_value_t = 12)]
        utterances: usize,
    },
    /// Materialise simulated training pairs.
    Simulate {
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Masked-frame pretraining of the toy speech encoder.
    Pretrain,
    /// Distil a noise-robust student from a pretrained encoder.
    TrainDrd {
        #[arg(long)]
        teacher: PathBuf,
        /// Stop (after saving resumable state) once this step is reached.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Train a flow-matching model conditioned on an encoder.
    TrainFm {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Mix held-out speech and noise at a fixed SNR into a test manifest.
    MakeTestSet {
        #[arg(long)]
        speech: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        snr_db: f64,
    },
    /// Enhance a WAV file or every row of a test manifest.
    Enhance {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Euler steps (defaults to the configured value).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score enhanced files against references.
    Evaluate {
        /// Frozen encoder used for the semantic similarity metric.
        #[arg(long)]
        metric_encoder: PathBuf,
        /// enhanced.csv written by `enhance`.
        #[arg(long)]
        enhanced: PathBuf,
        /// Test manifest (id,noisy,reference).
        #[arg(long)]
        reference: PathBuf,
        /// Flow checkpoint or norm.ckpt whose statistics enter the report fingerprint.
        #[arg(long)]
        norm: PathBuf,
    },
    /// Compare variants on one test set.
    Ablate {
        #[arg(long)]
        metric_encoder: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// VARIANT=FLOW_CKPT,ENCODER_CKPT; repeat per variant.
        #[arg(long = "model", required = true)]
        models: Vec<String>,
    },
}

fn load_config(c: &Common) -> Result<(RunConfig, PathBuf)> {
    let (mut cfg, base) = match &c.config {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::load_or_init(p, &c.profile)?, base)
        }
        None => (RunConfig::profile(&c.profile)?, PathBuf::from(".")),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok((cfg, base))
}

fn parse_model(spec: &str) -> Result<(Variant, VariantModel)> {
    let bad = || Error::Config(format!("--model {spec:?}: expected VARIANT=FLOW,ENCODER"));
    let (name, paths) = spec.split_once('=').ok_or_else(bad)?;
    let (flow, encoder) = paths.split_once(',').ok_or_else(bad)?;
    Ok((
        Variant::parse(name)?,
        VariantModel {
            flow: flow.into(),
            encoder: encoder.into(),
        },
    ))
}

fn run(cli: Cli) -> Result<()> {
    let (cfg, base) = load_config(&cli.common)?;
    let out = cli.common.output.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::Data(format!("{}: {e}", out.display())))?;
    cfg.save(out.join("config.toml"))?;

    match cli.command {
        Command::MakeToyCorpus { speakers, utterances } => {
            let spec = ToyCorpusSpec {
                speakers,
                utterances_per_speaker: utterances,
                ..ToyCorpusSpec::default()
            };
            pipeline::cmd_make_toy_corpus(out, &spec, cfg.seed)?;
            println!("corpus written to {}", out.display());
        }
        Command::Simulate { count } => {
            let meta = pipeline::cmd_simulate(&cfg, &base, count, out)?;
            println!("{}", meta.display());
        }
        Command::Pretrain => {
            println!("{}", pipeline::cmd_pretrain(&cfg, &base, out)?.display());
        }
        Command::TrainDrd { teacher, stop_after } => {
            let p = pipeline::cmd_train_drd(&cfg, &base, &teacher, out, stop_after)?;
            println!("{}", p.display());
        }
        Command::TrainFm { encoder, variant } => {
            let p = pipeline::cmd_train_fm(&cfg, &base, &encoder, Variant::parse(&variant)?, out)?;
            println!("{}", p.display());
        }
        Command::MakeTestSet {
            speech,
            noise,
            count,
            snr_db,
        } => {
            let p = pipeline::cmd_make_test_set(&cfg, &speech, &noise, count, snr_db, out)?;
            println!("{}", p.display());
        }
        Command::Enhance {
            encoder,
            flow,
            input,
            steps,
        } => {
            let n = steps.unwrap_or(cfg.fm.sampling_steps);
            let p = pipeline::cmd_enhance(&cfg, &encoder, &flow, &input, out, n, cfg.seed)?;
            println!("{}", p.display());
        }
        Command::Evaluate {
            metric_encoder,
            enhanced,
            reference,
            norm,
        } => {
            let norm = pipeline::read_norm(&norm)?;
            let r = pipeline::cmd_evaluate(&cfg, &metric_encoder, &enhanced, &reference, &norm, out)?;
            for (name, a) in &r.aggregates {
                println!("{name}: mean {:.4} std {:.4} n {}", a.mean, a.std, a.count);
            }
        }
        Command::Ablate {
            metric_encoder,
            test,
            models,
        } => {
            let models = models
                .iter()
                .map(|m| parse_model(m))
                .collect::<Result<BTreeMap<_, _>>>()?;
            let reports = pipeline::run_ablation_suite(&cfg, &models, &metric_encoder, &test, out)?;
            for (v, r) in &reports {
                let m = |k| r.mean(k).unwrap_or(f64::NAN);
                println!(
                    "{}: lsd {:.3} dB, semantic_cos {:.4}",
                    v.name(),
                    m("lsd_db"),
                    m("semantic_cos")
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
