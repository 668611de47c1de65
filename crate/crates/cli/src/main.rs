use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use cmrt::analysis::SimilarityReport;
use cmrt::pipeline::{self, ExperimentConfig, Variant};

/// Cross-modal robustness transfer experiments on a synthetic speech-translation corpus.
#[derive(Debug, Parser)]
#[command(name = "cmrt", version)]
struct Cli {
    /// TOML experiment config; defaults apply to every key left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus, lexicon, vocabulary and phoneme bank.
    GenData,
    /// Pretrain the text translation model with early stopping on dev loss.
    PretrainMt,
    /// Alignment training from the pretrained model.
    TrainTr {
        /// Variants to train; defaults to the config's list.
        #[arg(long = "variant", value_parser = parse_variant)]
        variants: Vec<Variant>,
    },
    /// Attack every split against the pretrained text model.
    Attack,
    /// Robustness fine-tuning on attacked transcripts.
    FinetuneFn,
    /// Fine-tune the base model on adversarial speech.
    BaselineAdvspeechFn,
    /// Fine-tune once per KL weight and report attacked-test BLEU.
    SweepKl {
        /// Comma-separated KL weights; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
    },
    /// BLEU, speech–text cosine and CKA for every trained model.
    Analyze,
    /// Every stage in order.
    All,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_reports(rows: &[SimilarityReport]) {
    for r in rows {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<13} {:<9} bleu {:>6.2}  cos {:>7}  cka {:>7}  lambda {}",
            r.model,
            r.dataset,
            r.bleu,
            opt(r.mean_cosine),
            opt(r.cka_vs_ref),
            r.lambda_kl.map_or("-".to_string(), |l| l.to_string())
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData => {
            let meta = pipeline::gen_data(&cfg).context("gen-data")?;
            println!("wrote {} utterances to {}", meta.size, cfg.out.join("data").display());
        }
        Command::PretrainMt => {
            let s = pipeline::pretrain_mt(&cfg).context("pretrain-mt")?;
            println!(
                "pretrained {} steps; best dev CE {:.4} at step {} (uniform {:.4}){}",
                s.steps,
                s.best_dev_ce,
                s.best_step,
                s.uniform_ce,
                if s.early_stop { "; stopped early" } else { "" }
            );
        }
        Command::TrainTr { variants } => {
            let variants = if variants.is_empty() { cfg.variants.clone() } else { variants };
            pipeline::train_tr(&cfg, &variants).context("train-tr")?;
            let names: Vec<_> = variants.iter().map(|v| v.name()).collect();
            println!("trained {}", names.join(", "));
        }
        Command::Attack => {
            let s = pipeline::attack(&cfg).context("attack")?;
            for split in &s.splits {
                println!(
                    "{:<5} {} sentences, {} perturbed, {} replacements; victim BLEU {:.2} -> {:.2}",
                    split.split, split.sentences, split.perturbed, split.replacements, split.victim_bleu_before, split.victim_bleu_after
                );
            }
        }
        Command::FinetuneFn => {
            let m = pipeline::finetune_fn(&cfg).context("finetune-fn")?;
            println!("fine-tuned {} steps from {}", m.steps, m.init);
        }
        Command::BaselineAdvspeechFn => {
            let m = pipeline::baseline_advspeech_fn(&cfg).context("baseline-advspeech-fn")?;
            println!("fine-tuned {} steps from {}", m.steps, m.init);
        }
        Command::SweepKl { lambdas } => {
            let lambdas = if lambdas.is_empty() { cfg.sweep_lambdas.clone() } else { lambdas };
            print_reports(&pipeline::sweep_kl(&cfg, &lambdas).context("sweep-kl")?);
        }
        Command::Analyze => print_reports(&pipeline::analyze(&cfg).context("analyze")?),
        Command::All => print_reports(&pipeline::run_all(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
