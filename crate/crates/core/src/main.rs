use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use casrnn_core::cli::{cmd_eval, cmd_map, cmd_synth, cmd_sweep, cmd_train, exit_code, RunConfig};
use casrnn_core::{Error, Result};

fn command() -> Command {
    let mut shared = vec![
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("key = value file applied before any flag"),
        Arg::new("preset")
            .long("preset")
            .value_name("NAME")
            .help("indian-pines or pavia-university"),
    ];
    shared.extend(
        RunConfig::KEYS
            .iter()
            .map(|&key| Arg::new(key).long(key).value_name("VALUE").allow_hyphen_values(true)),
    );
    let sub = |name: &'static str, about: &'static str| Command::new(name).about(about).args(shared.clone());
    Command::new("casrnn")
        .about("Cascaded GRU networks for hyperspectral pixel classification")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(sub("synth", "Write a synthetic cube, labels and split"))
        .subcommand(sub("train", "Train a model and save its checkpoint"))
        .subcommand(sub("eval", "Evaluate a checkpoint on the split's test pixels"))
        .subcommand(sub("map", "Render a classification map"))
        .subcommand(sub("sweep", "Grid search over l, hidden1 and hidden2"))
}

/// Config file, then preset, then individual flags.
fn resolve(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    if let Some(variant) = m.get_one::<String>("variant") {
        cfg.set("variant", variant)?;
    }
    if let Some(preset) = m.get_one::<String>("preset") {
        cfg.apply_preset(preset)?;
    }
    for &key in RunConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(name: &str, m: &ArgMatches) -> Result<()> {
    let cfg = resolve(m)?;
    match name {
        "synth" => {
            let out = cmd_synth(&cfg)?;
            println!("wrote {}, {}, {}", out.cube.display(), out.labels.display(), out.split.display());
        }
        "train" => {
            let out = cmd_train(&cfg)?;
            if let Some(last) = out.log.last() {
                println!(
                    "{} epoch {}: loss {:.6}, train OA {:.4}",
                    last.stage, last.epoch, last.mean_loss, last.train_oa
                );
            }
            println!("wrote {}", out.checkpoint.display());
        }
        "eval" => print!("{}", cmd_eval(&cfg)?.to_text()),
        "map" => println!("wrote {}", cmd_map(&cfg)?.display()),
        "sweep" => {
            for r in cmd_sweep(&cfg)? {
                println!(
                    "l={} hidden1={} hidden2={} oa={:.4} ({:.1}s)",
                    r.l, r.hidden1, r.hidden2, r.summary.oa, r.seconds
                );
            }
        }
        _ => unreachable!("clap rejects unknown subcommands"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
