//! `tailcalib`: long-tail feature rebalancing from the command line.
//!
//! Every subcommand reads its settings from flags, then an optional
//! `--config` file of `key=value` lines, then built-in defaults. Outputs go
//! to `--output DIR` together with `config.resolved` and `manifest.json`.

mod commands;
mod error;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};

use error::CliError;
use output::OutputDir;
use settings::Settings;

type Runner = fn(&mut Settings, &mut OutputDir) -> Result<(), CliError>;

const GENERATION_KEYS: &[(&str, &str)] = &[
    ("tukey", "Tukey exponent lambda, or `none` to skip the transform [default: 1.0]"),
    ("power-mode", "negative inputs under fractional powers: strict | signed [default: strict]"),
    ("neighbors", "neighbor classes M per instance [default: 3]"),
    ("alpha", "spread added to the calibrated covariance [default: 0]"),
    ("alpha-mode", "where alpha is added: all | diagonal [default: all]"),
    ("normalize", "l2-normalize features before and after generation"),
    ("stats-space", "class statistics from transformed or raw features [default: transformed]"),
    ("target", "rows per class after balancing [default: largest class]"),
    ("max-jitter", "largest diagonal jitter tried when factoring a covariance [default: 1e-4]"),
];

struct CommandDef {
    name: &'static str,
    about: &'static str,
    keys: &'static [(&'static str, &'static str)],
    with_generation: bool,
    run: Runner,
}

const COMMANDS: &[CommandDef] = &[
    CommandDef {
        name: "subsample",
        about: "Cut a long-tail subset out of a balanced feature file",
        keys: &[
            ("input", "balanced TCFB feature file"),
            ("imbalance", "ratio between the largest and smallest class [default: 100]"),
            ("n-head", "rows kept for class 0 [default: largest class]"),
            ("rounding", "half-up | down | up [default: half-up]"),
            ("seed", "sampling seed [default: 0]"),
        ],
        with_generation: false,
        run: commands::subsample,
    },
    CommandDef {
        name: "generate",
        about: "Generate calibrated features until every class is balanced",
        keys: &[("input", "long-tail TCFB feature file"), ("seed", "sampling seed [default: 0]")],
        with_generation: true,
        run: commands::generate,
    },
    CommandDef {
        name: "train",
        about: "Train a linear or cosine classifier on features",
        keys: &[
            ("input", "training TCFB feature file"),
            ("val", "validation TCFB file for the per-epoch log [default: training file]"),
            ("mode", "plain | tailcalib | tailcalibx | oversample | noise | mixup [default: plain]"),
            ("classifier", "linear | cosine [default: cosine]"),
            ("epochs", "training epochs [default: 30]"),
            ("batch-size", "mini-batch size [default: 128]"),
            ("lr", "learning rate [default: 0.001]"),
            ("lr-schedule", "constant | cosine [default: constant]"),
            ("momentum", "SGD momentum [default: 0.9]"),
            ("weight-decay", "L2 weight decay [default: 5e-5]"),
            ("gamma", "initial cosine scale [default: 16]"),
            ("noise-scale", "noise standard deviation for --mode noise [default: 0.01]"),
            ("mixup-alpha", "Beta concentration for --mode mixup [default: 0.01]"),
            ("warm-start", "checkpoint to start from instead of a fresh head"),
            ("seed", "seed for initialization, shuffling and generation [default: 0]"),
        ],
        with_generation: true,
        run: commands::train,
    },
    CommandDef {
        name: "eval",
        about: "Score a trained model on a labeled feature file",
        keys: &[
            ("model", "output directory of a `train` run"),
            ("input", "evaluation TCFB feature file"),
            ("checkpoint", "final | best [default: final]"),
            ("many-min", "classes with more training rows than this are Many [default: 100]"),
            ("few-max", "classes with fewer training rows than this are Few [default: 20]"),
        ],
        with_generation: false,
        run: commands::eval,
    },
    CommandDef {
        name: "nn-report",
        about: "Tabulate which classes the tail classes borrow statistics from",
        keys: &[
            ("input", "training TCFB feature file"),
            ("bottom", "number of smallest classes to report [default: 15]"),
        ],
        with_generation: true,
        run: commands::nn_report_cmd,
    },
    CommandDef {
        name: "project",
        about: "PCA projection of features to CSV",
        keys: &[
            ("input", "TCFB feature file"),
            ("generated", "second TCFB file appended before projecting"),
            ("dims", "output dimensions [default: 2]"),
        ],
        with_generation: false,
        run: commands::project,
    },
    CommandDef {
        name: "import-csv",
        about: "Convert a CSV with columns f0..f{D-1},label to a TCFB file",
        keys: &[("input", "CSV file")],
        with_generation: false,
        run: commands::import_csv,
    },
];

fn key_arg(key: &'static str, help: &'static str) -> Arg {
    let arg = Arg::new(key).long(key).help(help);
    if key == "normalize" {
        arg.num_args(0..=1).default_missing_value("true").value_name("BOOL")
    } else {
        arg
    }
}

fn cli() -> Command {
    let subcommands = COMMANDS.iter().map(|def| {
        let mut cmd = Command::new(def.name).about(def.about);
        for &(key, help) in def.keys {
            cmd = cmd.arg(key_arg(key, help));
        }
        if def.with_generation {
            for &(key, help) in GENERATION_KEYS {
                cmd = cmd.arg(key_arg(key, help));
            }
        }
        cmd.arg(Arg::new("output").long("output").value_name("DIR").help("directory for all outputs"))
            .arg(Arg::new("config").long("config").value_name("FILE").help("key=value settings file"))
            .arg(Arg::new("threads").long("threads").value_name("N").help("worker threads [default: all cores]"))
    });
    Command::new("tailcalib")
        .about("Calibrated feature generation for long-tail classification")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands(subcommands)
}

fn flags(matches: &ArgMatches) -> Vec<(String, String)> {
    matches
        .ids()
        .filter(|id| id.as_str() != "config")
        .filter(|id| matches.value_source(id.as_str()) == Some(ValueSource::CommandLine))
        .filter_map(|id| matches.get_one::<String>(id.as_str()).map(|v| (id.to_string(), v.clone())))
        .collect()
}

fn run(def: &CommandDef, matches: &ArgMatches) -> Result<(), CliError> {
    let config = matches.get_one::<String>("config").map(PathBuf::from);
    let mut settings = Settings::new(config.as_deref(), flags(matches))?;
    if let Some(raw) = settings.unrecorded("threads") {
        let n: usize = raw.parse().map_err(|e| CliError::Usage(format!("invalid value {raw:?} for threads: {e}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    let root = settings
        .unrecorded("output")
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage("missing required setting --output".into()))?;
    let mut out = OutputDir::create(root)?;
    (def.run)(&mut settings, &mut out)?;
    log::debug!("wrote outputs to {}", out.root().display());
    out.finish(def.name, &settings)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let def = COMMANDS.iter().find(|s| s.name == name).expect("registered subcommand");
    match run(def, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
