use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use typebandit::metrics::{mean_std, stability_report, MeanStd, StabilityReport};
use typebandit::{generate_synthetic, load_dataset, save_dataset, train, RunRecord, SynthSpec, TrainConfig, Variant};

#[derive(Parser)]
#[command(name = "typebandit", version, about = "Type-level bandit training for heterogeneous graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant (default: full) for every requested seed.
    Train(RunArgs),
    /// Train a named ablation variant.
    Ablate(RunArgs),
    /// Cross-run agreement of final policy weights.
    Stability(StabilityArgs),
    /// Write a synthetic dataset directory.
    Synth(SynthArgs),
    /// Load a dataset directory and report invariant violations.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// JSON config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds: `7`, `0..9` (inclusive) or `1,4,9`.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// full, wo_pretrain, uniform_sampling, proportional_sampling, wo_completion,
    /// topology_only, epsilon_greedy, wo_policy_scaling, wo_sampling_context or backbone_only.
    #[arg(long)]
    variant: Option<String>,
    /// Omit wall-clock fields from run records so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct StabilityArgs {
    /// Run-record files, or directories whose `run_*.json` files are read.
    #[arg(long = "data", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Report file.
    #[arg(long, default_value = "stability.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON generator spec; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generator seed (overrides the spec).
    #[arg(long)]
    seeds: Option<u64>,
    /// Dataset directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Serialize)]
struct Aggregate {
    variant: Variant,
    config_hash: String,
    seeds: Vec<u64>,
    test_macro_f1: MeanStd,
    test_micro_f1: MeanStd,
    best_val_macro_f1: MeanStd,
    runs: Vec<String>,
}

#[derive(Serialize)]
struct StabilityDocument {
    type_names: Vec<String>,
    variants: Vec<Variant>,
    sources: Vec<String>,
    report: StabilityReport,
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    let seeds = if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo.trim().parse().with_context(|| format!("bad seed range `{spec}`"))?;
        let hi: u64 = hi.trim().trim_start_matches('=').parse().with_context(|| format!("bad seed range `{spec}`"))?;
        if hi < lo {
            bail!("empty seed range `{spec}`");
        }
        (lo..=hi).collect()
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().with_context(|| format!("bad seed `{s}`")))
            .collect::<Result<Vec<u64>>>()?
    };
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_json(&text).with_context(|| format!("in {}", p.display()))
        }
    }
}

fn run(args: RunArgs, default_variant: Option<Variant>) -> Result<()> {
    let variant = match (&args.variant, default_variant) {
        (Some(name), _) => name.parse::<Variant>()?,
        (None, Some(v)) => v,
        (None, None) => bail!("--variant is required"),
    };
    let seeds = parse_seeds(&args.seeds)?;
    let mut config = read_config(args.config.as_deref())?;
    config.deterministic |= args.deterministic;
    if !args.data.is_dir() {
        bail!("data directory {} does not exist", args.data.display());
    }
    let dataset = load_dataset(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut records = Vec::new();
    let mut names = Vec::new();
    for &seed in &seeds {
        let cfg = TrainConfig { seed, ..config.clone() };
        let outcome = train(&dataset, &cfg, variant).with_context(|| format!("{variant}, seed {seed}"))?;
        let name = format!("run_{variant}_seed{seed}.json");
        write_json(&args.out.join(&name), &outcome.record)?;
        if cfg.deterministic {
            write_json(&args.out.join(format!("timing_{variant}_seed{seed}.json")), &outcome.timing)?;
        }
        eprintln!(
            "{variant} seed {seed}: test macro-F1 {:.4}, micro-F1 {:.4} (best epoch {})",
            outcome.record.test_macro_f1, outcome.record.test_micro_f1, outcome.record.best_epoch
        );
        names.push(name);
        records.push(outcome.record);
    }
    let pick = |f: fn(&RunRecord) -> f64| mean_std(&records.iter().map(f).collect::<Vec<_>>());
    let aggregate = Aggregate {
        variant,
        config_hash: records[0].config_hash.clone(),
        seeds,
        test_macro_f1: pick(|r| r.test_macro_f1),
        test_micro_f1: pick(|r| r.test_micro_f1),
        best_val_macro_f1: pick(|r| r.best_val_macro_f1),
        runs: names,
    };
    write_json(&args.out.join(format!("aggregate_{variant}.json")), &aggregate)?;
    eprintln!(
        "{variant}: test macro-F1 {:.4} ± {:.4} over {} seeds",
        aggregate.test_macro_f1.mean, aggregate.test_macro_f1.std, aggregate.test_macro_f1.n
    );
    Ok(())
}

fn record_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("listing {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("run_") && n.ends_with(".json"))
                })
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn stability(args: StabilityArgs) -> Result<()> {
    let files = record_files(&args.inputs)?;
    let mut records = Vec::with_capacity(files.len());
    for f in &files {
        let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        let record: RunRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
        records.push(record);
    }
    let Some(first) = records.first() else {
        bail!("no run records found");
    };
    if records.iter().any(|r| r.type_names != first.type_names) {
        bail!("run records come from different datasets");
    }
    let weights: Vec<Vec<f64>> = records.iter().map(|r| r.final_weights.clone()).collect();
    let report = stability_report(&weights)?;
    let mut variants: Vec<Variant> = records.iter().map(|r| r.variant).collect();
    variants.dedup();
    eprintln!(
        "{} runs: top type {}, mean pairwise tau {:.4}, min mean final weight {:.4}",
        report.runs, first.type_names[report.top_type], report.mean_pairwise_tau, report.min_mean_final_weight
    );
    let doc = StabilityDocument {
        type_names: first.type_names.clone(),
        variants,
        sources: files
            .iter()
            .map(|f| f.file_name().map_or_else(|| f.display().to_string(), |n| n.to_string_lossy().into_owned()))
            .collect(),
        report,
    };
    write_json(&args.out, &doc)
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.config {
        None => SynthSpec::default(),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
    };
    if let Some(seed) = args.seeds {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec)?;
    save_dataset(&data.dataset, &args.out)?;
    write_json(&args.out.join("synth_spec.json"), &spec)?;
    eprintln!("wrote synthetic dataset to {}", args.out.display());
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let report = dataset.validate();
    println!("{report}");
    if !report.is_clean() {
        bail!("{} violations", report.violations.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => run(a, Some(Variant::Full)),
        Command::Ablate(a) => run(a, None),
        Command::Stability(a) => stability(a),
        Command::Synth(a) => synth(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
