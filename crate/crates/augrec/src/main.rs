use std::path::PathBuf;
use std::process::ExitCode;

use augrec::config::{runs_root, Overrides, RunConfig, RUNS_ENV};
use augrec::corpus_io::write_melf;
use augrec::output::report_table;
use augrec::pipeline::{stage_checkpoint, Run, PRETRAINED};
use augrec::verify::loss_battery;
use augrec::{AppError, Result};
use augrec_core::train::Stage;
use clap::{Args, Parser, Subcommand};

/// Exit code for command-line usage errors (unknown flag, bad value).
const USAGE_EXIT: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "augrec", version, about = "Toy-scale articulation-repair TTS experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file; keys not given keep their defaults [config: the file itself]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment seed; names the run directory [config: none, run directory suffix -s<seed>]
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Weight of the severity-weighted regularizer [config: finetune.hp.beta]
    #[arg(long)]
    beta: Option<f64>,
    /// Weight of the phone-consistency loss [config: finetune.hp.gamma]
    #[arg(long)]
    gamma: Option<f64>,
    /// Severity decay rate [config: finetune.hp.lambda]
    #[arg(long)]
    lambda: Option<f64>,
    /// Fraction of each fine-tuning batch drawn from the multi-speaker pool [config: finetune.mix_ratio]
    #[arg(long)]
    mix_ratio: Option<f64>,
    /// Directory holding run directories [config: none, env AUGREC_RUNS, default ./runs]
    #[arg(long, env = RUNS_ENV)]
    runs_root: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the toy-language corpus
    GenCorpus(Common),
    /// Train the training-time phone classifier and the evaluation oracle
    TrainClassifier(Common),
    /// Multi-speaker pretraining of the acoustic and duration models
    Pretrain(Common),
    /// Fine-tune on the target speaker
    Finetune {
        #[command(flatten)]
        common: Common,
        /// finetune | baseline-finetune | ablation-no-reg [config: finetune.stage selects the augmented default]
        #[arg(long, value_parser = parse_stage)]
        stage: Option<Stage>,
    },
    /// Synthesize a phoneme string with predicted durations
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// pretrained | baseline-finetune | ablation-no-reg | finetune [config: none]
        #[arg(long, default_value = "finetune")]
        model: String,
        /// Speaker id [config: none; the target is target_speaker]
        #[arg(long)]
        speaker: Option<usize>,
        /// Whitespace-separated phoneme symbols, e.g. "sil k a t sil" [config: none]
        #[arg(long)]
        text: String,
        /// Output MELF file [config: none; default <run>/synth.melf]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write held-out outputs of every system
    Evaluate(Common),
    /// Build report.json, report.csv and mels/*.pgm from evaluated outputs
    Report(Common),
    /// Run the loss and sampler property batteries
    VerifyLosses {
        /// Seed of the random test points [config: none]
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run every stage and check the experiment-level acceptance criteria
    Reproduce(Common),
    /// Print the default configuration as TOML
    DefaultConfig,
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| format!("unknown stage {s:?}"))
}

fn open(c: &Common) -> Result<Run> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        beta: c.beta,
        gamma: c.gamma,
        lambda: c.lambda,
        mix_ratio: c.mix_ratio,
    })?;
    let root = c.runs_root.clone().unwrap_or_else(runs_root);
    Run::open(&root, cfg, c.seed)
}

fn done(run: &Run, what: &str) {
    println!("{what} done: {}", run.dir.display());
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenCorpus(c) => {
            let run = open(&c)?;
            run.gen_corpus()?;
            done(&run, "gen-corpus");
        }
        Command::TrainClassifier(c) => {
            let run = open(&c)?;
            run.train_classifiers()?;
            done(&run, "train-classifier");
        }
        Command::Pretrain(c) => {
            let run = open(&c)?;
            for w in run.pretrain()? {
                eprintln!("warning: {w}");
            }
            done(&run, "pretrain");
        }
        Command::Finetune { common, stage } => {
            let run = open(&common)?;
            let stage = stage.unwrap_or(run.cfg.experiment.finetune.stage);
            if stage == Stage::Pretrain {
                return Err(AppError::Config("use the pretrain subcommand".into()));
            }
            run.finetune(stage)?;
            done(&run, stage.name());
        }
        Command::Synthesize {
            common,
            model,
            speaker,
            text,
            out,
        } => {
            let run = open(&common)?;
            let file = match model.as_str() {
                "pretrained" => PRETRAINED.to_string(),
                m => stage_checkpoint(Stage::parse(m).ok_or_else(|| AppError::Config(format!("unknown model {m:?}")))?),
            };
            let symbols: Vec<&str> = text.split_whitespace().collect();
            let speaker = speaker.unwrap_or(run.cfg.experiment.target_speaker);
            let (mel, durations) = run.synthesize(&file, &symbols, speaker)?;
            let out = out.unwrap_or_else(|| run.path("synth.melf"));
            write_melf(&out, &mel)?;
            println!("synthesize done: {} ({} frames, durations {:?})", out.display(), mel.frames(), durations.frames());
        }
        Command::Evaluate(c) => {
            let run = open(&c)?;
            run.evaluate()?;
            done(&run, "evaluate");
        }
        Command::Report(c) => {
            let run = open(&c)?;
            let report = run.report()?;
            print!("{}", report_table(&report));
            done(&run, "report");
        }
        Command::VerifyLosses { seed } => {
            let checks = loss_battery(seed);
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(AppError::Acceptance(format!("{failed} loss properties failed")));
            }
        }
        Command::Reproduce(c) => {
            let run = open(&c)?;
            let (report, checks) = run.reproduce(&mut |stage| eprintln!("{stage} done"))?;
            print!("{}", report_table(&report));
            for c in &checks {
                println!("{}", c.line());
            }
            done(&run, "reproduce");
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(AppError::Acceptance(failed.join(",")));
            }
        }
        Command::DefaultConfig => print!("{}", RunConfig::default().to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error class=usage code={USAGE_EXIT} message={}", serde_json::Value::from(first));
            return ExitCode::from(USAGE_EXIT);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!(
                "error class={} code={code} message={}",
                e.class(),
                serde_json::Value::from(e.to_string())
            );
            ExitCode::from(code)
        }
    }
}
