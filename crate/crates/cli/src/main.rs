mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{flag_name, RunConfig, KEYS};

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("generate-data", "Render the synthetic dataset into --out"),
    (
        "train",
        "Train on --data and write checkpoints and a log into --out",
    ),
    (
        "infer",
        "Localize --image (or every record of --manifest) with --checkpoint",
    ),
    (
        "eval",
        "Localization accuracy and error breakdown of --pred against --gt",
    ),
    (
        "sweep-iou",
        "GT-Known and Top-1 accuracy across --thresholds",
    ),
    (
        "error-analysis",
        "Cls / M-Ins / Part / More / OT breakdown of --pred against --gt",
    ),
    (
        "export-cam",
        "Write localization maps of --image as PGM plus a JSON sidecar",
    ),
    (
        "export-attn",
        "Write per-layer attention of --image to a tensor container",
    ),
    (
        "similarity",
        "Cosine similarity of position embeddings or patch tokens",
    ),
    (
        "summary",
        "Parameter table of --checkpoint or of the configured model",
    ),
];

fn cli() -> Command {
    let config_args: Vec<Arg> = KEYS
        .iter()
        .map(|(key, group, help)| {
            Arg::new(*key)
                .long(flag_name(key))
                .value_name("VALUE")
                .help(*help)
                .help_heading(*group)
        })
        .collect();
    let mut cmd = Command::new("tscam")
        .about("Weakly supervised object localization with token semantic coupled attention maps")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .env("TSCAM_CONFIG")
                .help("config file of `key = value` lines; flags override it"),
        )
        .arg(
            Arg::new("threads")
                .long("threads")
                .global(true)
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .help("worker threads (0 = all cores)"),
        );
    for (name, about) in SUBCOMMANDS {
        cmd = cmd.subcommand(
            Command::new(*name)
                .about(*about)
                .args(config_args.clone())
                .arg(
                    Arg::new("quiet")
                        .long("quiet")
                        .action(ArgAction::SetTrue)
                        .hide(true),
                ),
        );
    }
    cmd
}

fn effective_config(root: &ArgMatches, sub: &ArgMatches) -> Result<RunConfig, String> {
    let mut cfg = match sub
        .get_one::<String>("config")
        .or_else(|| root.get_one::<String>("config"))
    {
        Some(path) => RunConfig::from_file(&PathBuf::from(path))?,
        None => RunConfig::default(),
    };
    for (key, _, _) in KEYS {
        if let Some(v) = sub.get_one::<String>(key) {
            cfg.set(key, v)
                .map_err(|e| format!("--{}: {e}", flag_name(key)))?;
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let cfg = match effective_config(&matches, sub) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let threads = sub
        .get_one::<usize>("threads")
        .or_else(|| matches.get_one::<usize>("threads"))
        .copied()
        .unwrap_or(0);
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let result = match name {
        "generate-data" => commands::generate_data(&cfg),
        "train" => commands::train_cmd(&cfg),
        "infer" => commands::infer(&cfg),
        "eval" => commands::eval(&cfg),
        "sweep-iou" => commands::sweep_iou(&cfg),
        "error-analysis" => commands::error_analysis_cmd(&cfg),
        "export-cam" => commands::export_cam(&cfg),
        "export-attn" => commands::export_attn(&cfg),
        "similarity" => commands::similarity(&cfg),
        "summary" => commands::summary(&cfg),
        _ => unreachable!("clap rejects unknown subcommands"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
