//! Command-line front end.
//!
//! Every subcommand accepts `--config <file>`, a flat `key = value` file whose
//! keys are flag names without the leading dashes. Values given on the command
//! line win over the file, the file wins over `CNN_SCENE_CHAR_SEED` (seed
//! only), and that wins over the built-in default. Each run that writes to an
//! output directory also writes `effective.conf` there, which holds every
//! resolved flag except `--out` and `--config`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::data::synth::{self, SynthOptions};
use crate::data::{self, load_split, Dataset, PrepareOptions, Split, SplitMode};
use crate::error::{Error, Result};
use crate::experiment::{
    self, gradient_check, load_outcomes, parse_grid, reduced_spec, summarize, summary_csv, summary_json, Architecture,
    ExperimentConfig, RunOutcome, SweepOptions,
};
use crate::par::Execution;

pub const SEED_ENV: &str = "CNN_SCENE_CHAR_SEED";
pub const EFFECTIVE_CONFIG: &str = "effective.conf";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Flags never written to `effective.conf`.
const NOT_RECORDED: [&str; 3] = ["config", "out", "help"];

#[derive(Debug, Parser)]
#[command(name = "cnn-scene-char", version, about = "Train and evaluate small CNNs on isolated character glyphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Preprocess an image tree into rotated 50×50 PNGs and a split manifest
    Prepare(PrepareArgs),
    /// Render a synthetic glyph tree
    Synth(SynthArgs),
    /// Train one configuration
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest
    Evaluate(EvaluateArgs),
    /// Train every grid cell for every seed
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients on a reduced network
    Gradcheck(GradcheckArgs),
    /// Rebuild the sweep summary from persisted run reports
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExecArg {
    Parallel,
    Sequential,
}

impl From<ExecArg> for Execution {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Parallel => Execution::Parallel,
            ExecArg::Sequential => Execution::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    GroupBySource,
    PerSample,
}

impl From<ModeArg> for SplitMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::GroupBySource => SplitMode::GroupBySource,
            ModeArg::PerSample => SplitMode::PerSample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::A => Architecture::A,
            ArchArg::B => Architecture::B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key = value file supplying defaults for any flag
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "parallel")]
    exec: ExecArg,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Directory with one subdirectory of images per class
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training samples after augmentation
    #[arg(long, default_value_t = 2450)]
    train: usize,
    /// Test samples after augmentation
    #[arg(long, default_value_t = 250)]
    test: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "group-by-source")]
    split_mode: ModeArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 27)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

/// Hyperparameters shared by `train` and `sweep`.
#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "B")]
    arch: ArchArg,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Filters in the first convolution
    #[arg(long, default_value_t = 16)]
    k1: usize,
    /// Filters in the second convolution
    #[arg(long, default_value_t = 32)]
    k2: usize,
    /// Hidden units of architecture B's first dense layer
    #[arg(long, default_value_t = 128)]
    fc_hidden: usize,
    #[arg(long, default_value_t = 2)]
    pool_window: usize,
    #[arg(long, default_value_t = 2)]
    pool_stride: usize,
    #[arg(long, default_value_t = 0)]
    padding: usize,
}

impl ModelArgs {
    fn config(&self, filter_size: usize, stride: usize, learning_rate: f64, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            filter_size,
            stride,
            learning_rate,
            architecture: self.arch.into(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            k1: self.k1,
            k2: self.k2,
            fc_hidden: self.fc_hidden,
            pool_window: self.pool_window,
            pool_stride: self.pool_stride,
            padding: self.padding,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// manifest.jsonl written by `prepare`
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    filter: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Directory for evaluation.json; nothing is written when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `default` or `filter:stride:lr;...`
    #[arg(long, default_value = "default")]
    grid: String,
    /// Comma-separated seeds
    #[arg(long, env = SEED_ENV, default_value = "0")]
    seeds: String,
    /// Concurrent runs; 0 uses every available core
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "B")]
    arch: ArchArg,
    #[arg(long, default_value_t = 27)]
    classes: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Directory for gradcheck.json; nothing is written when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    runs_dir: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// File to write; standard output when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

/// Parse `argv` (including the program name), run the subcommand and return
/// the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let (cli, matches) = match parse(&argv) {
        Ok(parsed) => parsed,
        Err(Failure::Usage(e)) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    match execute(cli, &matches) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

enum Failure {
    Usage(clap::Error),
    Runtime(Error),
}

fn parse(argv: &[OsString]) -> std::result::Result<(Cli, ArgMatches), Failure> {
    let merged = match config_path(argv) {
        Some((name, file)) => merge_config(argv, &name, &file)?,
        None => argv.to_vec(),
    };
    let matches = Cli::command().try_get_matches_from(&merged).map_err(Failure::Usage)?;
    finish(matches)
}

/// The subcommand name and `--config` value, if both appear in `argv`.
fn config_path(argv: &[OsString]) -> Option<(String, PathBuf)> {
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let name = args.first().filter(|a| !a.starts_with('-'))?.clone();
    let mut rest = args.iter().skip(1);
    while let Some(arg) = rest.next() {
        if arg == "--config" {
            return rest.next().map(|v| (name.clone(), PathBuf::from(v)));
        }
        if let Some(v) = arg.strip_prefix("--config=") {
            return Some((name, PathBuf::from(v)));
        }
    }
    None
}

/// Append `--key value` for every file entry whose flag is absent from `argv`.
fn merge_config(argv: &[OsString], name: &str, file: &Path) -> std::result::Result<Vec<OsString>, Failure> {
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(name) else {
        return Ok(argv.to_vec());
    };
    let entries = read_config(file).map_err(Failure::Runtime)?;
    let mut merged = argv.to_vec();
    for (key, value) in entries {
        let Some(arg) = sub.get_arguments().find(|a| a.get_id() == key.as_str() && key != "config") else {
            return Err(Failure::Usage(Cli::command().error(
                clap::error::ErrorKind::UnknownArgument,
                format!("unknown key `{key}` in {}", file.display()),
            )));
        };
        let flag = format!("--{}", arg.get_long().expect("every flag is long"));
        let given = argv.iter().skip(2).any(|a| {
            let a = a.to_string_lossy();
            a == flag || a.starts_with(&format!("{flag}="))
        });
        if !given {
            merged.push(format!("{flag}={value}").into());
        }
    }
    Ok(merged)
}

fn finish(matches: ArgMatches) -> std::result::Result<(Cli, ArgMatches), Failure> {
    let cli = Cli::from_arg_matches(&matches).map_err(Failure::Usage)?;
    Ok((cli, matches))
}

/// Read a flat `key = value` file. Blank lines and `#` comments are skipped;
/// keys may use `-` or `_`.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn parse_config(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        let key = key.trim().replace('-', "_");
        if key.is_empty() {
            return Err(format!("line {}: empty key", n + 1));
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(format!("line {}: duplicate key `{key}`", n + 1));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Every resolved flag of the invoked subcommand, one `key = value` per line
/// in declaration order.
fn effective_config(matches: &ArgMatches) -> String {
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let cmd = Cli::command();
    let cmd = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let mut out = String::new();
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if NOT_RECORDED.contains(&id) {
            continue;
        }
        if let Some(values) = sub.get_raw(id) {
            let values: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
            let _ = writeln!(out, "{id} = {}", values.join(","));
        }
    }
    out
}

fn write_effective(dir: &Path, matches: &ArgMatches) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(EFFECTIVE_CONFIG);
    std::fs::write(&path, effective_config(matches)).map_err(|e| Error::io(&path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

fn execute(cli: Cli, matches: &ArgMatches) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => {
            let opts = PrepareOptions {
                train: a.train,
                test: a.test,
                seed: a.seed,
                mode: a.split_mode.into(),
                exec: a.common.exec.into(),
                ..PrepareOptions::default()
            };
            if !a.root.is_dir() {
                return Err(Error::io(&a.root, std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory")));
            }
            let manifest = data::prepare(&a.root, &a.out, &opts)?;
            write_effective(&a.out, matches)?;
            println!(
                "prepared {} samples over {} classes: {} train, {} test -> {}",
                manifest.len(),
                manifest.num_classes(),
                manifest.count(Split::Train),
                manifest.count(Split::Test),
                a.out.join("manifest.jsonl").display()
            );
        }
        Command::Synth(a) => {
            let opts = SynthOptions {
                classes: a.classes,
                per_class: a.per_class,
                seed: a.seed,
            };
            let summary = synth::write_tree(&a.out, &opts, a.common.exec.into())?;
            write_effective(&a.out, matches)?;
            let centroid = summary
                .centroid_accuracy
                .map(|acc| format!("{:.1}%", 100.0 * acc))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "wrote {} base images for {} classes to {} (nearest-centroid accuracy {centroid})",
                summary.manifest.len(),
                summary.manifest.num_classes(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            require_file(&a.manifest)?;
            let config = a.model.config(a.filter, a.stride, a.lr, a.seed);
            config.validate()?;
            let exec = a.common.exec.into();
            let data = Dataset::open(&a.manifest, exec)?;
            let run = experiment::train(&config, &data, exec)?;
            std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            let hash = &run.report.config_hash;
            run.checkpoint.save(&a.out.join(format!("{hash}.ckpt")))?;
            write_json(&a.out.join(format!("{hash}.json")), &RunOutcome::Completed(run.report.clone()))?;
            write_effective(&a.out, matches)?;
            let r = &run.report;
            println!(
                "{}x{}/s{}/lr {} arch {}: test error {:.2}% at epoch {} (untrained {:.2}%){} in {:.1}s -> {}",
                config.filter_size,
                config.filter_size,
                config.stride,
                config.learning_rate,
                config.architecture,
                r.error_pct,
                r.best_epoch,
                r.baseline_test_error_pct,
                r.diverged_at_epoch.map(|e| format!(", diverged at epoch {e}")).unwrap_or_default(),
                r.wall_clock_secs,
                a.out.join(format!("{hash}.ckpt")).display()
            );
        }
        Command::Evaluate(a) => {
            require_file(&a.ckpt)?;
            require_file(&a.manifest)?;
            let exec = a.common.exec.into();
            let ck = Checkpoint::load(&a.ckpt)?;
            let split: Split = a.split.into();
            let (names, samples) = load_split(&a.manifest, split, exec)?;
            let eval = experiment::evaluate(&ck, &samples, names.len(), split, exec)?;
            if let Some(out) = &a.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                write_json(&out.join("evaluation.json"), &eval)?;
                write_effective(out, matches)?;
            }
            println!("{} error {:.2}% over {} samples", eval.split, eval.error_pct, eval.samples);
        }
        Command::Sweep(a) => {
            require_file(&a.manifest)?;
            let grid = parse_grid(&a.grid)?;
            let seeds = a
                .seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>().map_err(|_| Error::Parse(format!("bad seed `{s}` in --seeds"))))
                .collect::<Result<Vec<_>>>()?;
            let exec: Execution = a.common.exec.into();
            let base = a.model.config(3, 1, 0.005, 0);
            let opts = SweepOptions {
                grid,
                seeds,
                base,
                jobs: a.jobs,
                exec,
            };
            for cfg in opts.configs() {
                cfg.validate()?;
            }
            let data = Dataset::open(&a.manifest, exec)?;
            let outcomes = experiment::sweep(&data, &opts, &a.out)?;
            write_effective(&a.out, matches)?;
            print!("{}", summary_csv(&summarize(&outcomes)));
        }
        Command::Gradcheck(a) => {
            let arch: Architecture = a.arch.into();
            let report = gradient_check(&reduced_spec(arch, a.classes), a.seed)?;
            if let Some(out) = &a.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                write_json(&out.join("gradcheck.json"), &report)?;
                write_effective(out, matches)?;
            }
            for e in &report.entries {
                println!(
                    "layer {} {:<8} {:<7} checked {:>5} kinks {:>3} max rel err {:.3e}",
                    e.layer, e.name, e.tensor, e.checked, e.skipped_kinks, e.max_relative_error
                );
            }
            println!(
                "arch {arch}: max relative error {:.3e} (tolerance {:.0e}) {}",
                report.max_relative_error(),
                report.tolerance,
                if report.passed() { "PASS" } else { "FAIL" }
            );
            if !report.passed() {
                return Err(Error::Data("gradient check failed".into()));
            }
        }
        Command::Report(a) => {
            if !a.runs_dir.is_dir() {
                return Err(Error::io(
                    &a.runs_dir,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory"),
                ));
            }
            let rows = summarize(&load_outcomes(&a.runs_dir)?);
            let text = match a.format {
                FormatArg::Csv => summary_csv(&rows),
                FormatArg::Json => summary_json(&rows)?,
            };
            match &a.out {
                Some(path) => {
                    std::fs::write(path, &text).map_err(|e| Error::io(path, e))?;
                    println!("{} runs -> {}", rows.len(), path.display());
                }
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parsed(args: &[&str]) -> std::result::Result<(Cli, ArgMatches), Failure> {
        let argv: Vec<OsString> = std::iter::once("cnn-scene-char").chain(args.iter().copied()).map(Into::into).collect();
        parse(&argv)
    }

    #[test]
    fn config_file_parsing() {
        let entries = parse_config("# comment\n\nfilter = 5\nbatch-size=8\n").unwrap();
        assert_eq!(entries, vec![("filter".into(), "5".into()), ("batch_size".into(), "8".into())]);
        assert!(parse_config("filter 5").is_err());
        assert!(parse_config("a = 1\na = 2").is_err());
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("run.conf");
        std::fs::write(&conf, "filter = 5\nlr = 0.5\nseed = 9\n").unwrap();
        let conf = conf.to_str().unwrap();
        let Ok((cli, _)) = parsed(&["train", "--manifest", "m", "--out", "o", "--config", conf, "--lr", "0.01"]) else {
            panic!("parse failed");
        };
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!((t.filter, t.lr, t.seed, t.stride), (5, 0.01, 9, 1));
    }

    #[test]
    fn unknown_flags_and_keys_are_usage_errors() {
        assert!(matches!(parsed(&["train", "--manifest", "m", "--out", "o", "--bogus", "1"]), Err(Failure::Usage(_))));
        assert!(matches!(parsed(&["train", "--out", "o"]), Err(Failure::Usage(_))));
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("bad.conf");
        std::fs::write(&conf, "bogus = 1\n").unwrap();
        let r = parsed(&["train", "--manifest", "m", "--out", "o", "--config", conf.to_str().unwrap()]);
        assert!(matches!(r, Err(Failure::Usage(_))));
    }

    #[test]
    fn effective_config_lists_resolved_flags() {
        let Ok((_, m)) = parsed(&["train", "--manifest", "m.jsonl", "--out", "o", "--stride", "2"]) else {
            panic!("parse failed");
        };
        let text = effective_config(&m);
        assert!(text.contains("manifest = m.jsonl\n"));
        assert!(text.contains("stride = 2\n"));
        assert!(text.contains("lr = 0.005\n"));
        assert!(text.contains("batch_size = 32\n"));
        assert!(!text.contains("out ="));
        let keys: Vec<String> = parse_config(&text).unwrap().into_iter().map(|(k, _)| k).collect();
        assert!(keys.contains(&"exec".to_string()));
    }

    #[test]
    fn every_flag_shows_its_default_in_help() {
        let mut cmd = Cli::command();
        for sub in cmd.get_subcommands_mut() {
            let help = sub.render_long_help().to_string();
            for arg in sub.get_arguments() {
                let id = arg.get_id().as_str();
                if id == "help" {
                    continue;
                }
                let long = format!("--{}", arg.get_long().unwrap());
                assert!(help.contains(&long), "{} help lacks {long}", sub.get_name());
                if !arg.get_default_values().is_empty() {
                    let shown = format!("[default: {}]", arg.get_default_values()[0].to_string_lossy());
                    assert!(help.contains(&shown), "{} help lacks {shown}", sub.get_name());
                }
            }
        }
    }
}
