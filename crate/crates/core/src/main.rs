use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bayesmm::baselines::CacheSimilarity;
use bayesmm::fusion::FusionMode;
use bayesmm::gaussian::CovarianceMode;
use bayesmm::geometric::{InitCovMode, PredictiveMode, UpdateMode};
use bayesmm::harness::format::{
    manifest_path, read_prompts, write_manifest, write_prompts, write_stream, StreamReader, PROMPT_MAGIC, STREAM_MAGIC,
};
use bayesmm::harness::suite::evaluate_suite;
use bayesmm::harness::synth::{read_references, reference_path, write_references, ReferenceSampling};
use bayesmm::harness::{compare_methods, run_episode, synth_generate, Corruption, EpisodeConfig, Method, SynthSpec};
use bayesmm::textual::{MapForm, TextualCovariance};
use bayesmm::{Error, Result};

/// Training-free test-time adaptation with textual and geometric Gaussian fusion.
#[derive(Parser)]
#[command(name = "bayesmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic prompt file, feature stream and reference generators.
    Synth(SynthArgs),
    /// Run one method over a stream and write the episode report.
    Run(RunArgs),
    /// Print the header of stream or prompt files.
    Inspect {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Run zero-shot, cache and Bayesian fusion on the same data and print accuracy deltas.
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 64)]
    prompts_per_class: usize,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// none, mean_shift:<scale> or covariance_inflate:<factor>
    #[arg(long, default_value = "mean_shift:0.4")]
    corruption: Corruption,
    #[arg(long)]
    sigma_text: Option<f64>,
    #[arg(long)]
    sigma_gen: Option<f64>,
    /// Squared cosine of each class mean with a shared axis; 0 samples the whole sphere.
    #[arg(long)]
    concentration: Option<f64>,
    #[arg(long)]
    min_angle_deg: Option<f64>,
    /// Directory for the generated files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// File stem; defaults to synth-<seed>.
    #[arg(long)]
    name: Option<String>,
}

/// Flags that override the TOML configuration.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML episode configuration; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_enum::<FusionMode>)]
    fusion: Option<FusionMode>,
    #[arg(long)]
    alpha2: Option<f64>,
    /// Prototype prior variance; `inf` disables the prior.
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    rel_eps: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Cache capacity per class.
    #[arg(long)]
    cache_capacity: Option<usize>,
    #[arg(long)]
    insert_threshold: Option<f64>,
    #[arg(long, value_parser = parse_enum::<CacheSimilarity>)]
    cache_similarity: Option<CacheSimilarity>,
    #[arg(long, value_parser = parse_enum::<MapForm>)]
    map_form: Option<MapForm>,
    #[arg(long, value_parser = parse_enum::<InitCovMode>)]
    init_cov_mode: Option<InitCovMode>,
    #[arg(long, value_parser = parse_enum::<PredictiveMode>)]
    predictive_mode: Option<PredictiveMode>,
    #[arg(long, value_parser = parse_enum::<UpdateMode>)]
    update_mode: Option<UpdateMode>,
    #[arg(long, value_parser = parse_enum::<CovarianceMode>)]
    covariance_mode: Option<CovarianceMode>,
    #[arg(long, value_parser = parse_enum::<TextualCovariance>)]
    textual_covariance: Option<TextualCovariance>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    mmd_window: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    method: Option<Method>,
    /// Report path; standard output when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Reference generators for KL/MMD checkpoints; defaults to `<stream>.reference.json` when present.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    no_reference: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, requires = "prompts", conflicts_with = "synthetic_seeds")]
    stream: Option<PathBuf>,
    #[arg(long, requires = "stream")]
    prompts: Option<PathBuf>,
    /// Average over this many seeds of the default corrupted suite instead of reading files.
    #[arg(long)]
    synthetic_seeds: Option<u64>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

/// Parses configuration enums by their snake_case names.
fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| format!("invalid value {s:?}"))
}

impl ConfigArgs {
    fn resolve(&self, method: Option<Method>) -> Result<EpisodeConfig> {
        let mut c = match &self.config {
            Some(p) => EpisodeConfig::from_toml_file(p)?,
            None => EpisodeConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f.clone() { c.$f = v; } )*};
        }
        set!(
            fusion, alpha2, beta2, rel_eps, tau, lambda, gamma, cache_capacity, insert_threshold, cache_similarity,
            map_form, init_cov_mode, predictive_mode, update_mode, covariance_mode, textual_covariance,
            checkpoint_every, mmd_window
        );
        if let Some(m) = method {
            c.method = m;
        }
        c.validate()?;
        Ok(c)
    }
}

fn load_inputs(stream: &Path, prompts: &Path) -> Result<(bayesmm::harness::FeatureStream, bayesmm::harness::PromptFile)> {
    Ok((bayesmm::harness::read_stream(stream)?, read_prompts(prompts)?))
}

fn synth(args: SynthArgs) -> Result<()> {
    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        classes: args.classes,
        dim: args.dim,
        prompts_per_class: args.prompts_per_class,
        samples: args.samples,
        corruption: args.corruption,
        seed: args.seed,
        sigma_text: args.sigma_text.unwrap_or(defaults.sigma_text),
        sigma_gen: args.sigma_gen.unwrap_or(defaults.sigma_gen),
        concentration: args.concentration.unwrap_or(defaults.concentration),
        min_angle_deg: args.min_angle_deg.unwrap_or(defaults.min_angle_deg),
        normalize: true,
    };
    let out = synth_generate(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let stem = args.name.unwrap_or_else(|| format!("synth-{}", args.seed));
    let prompts = args.out_dir.join(format!("{stem}.bmmt"));
    let stream = args.out_dir.join(format!("{stem}.bmmf"));
    write_prompts(&prompts, &out.prompts)?;
    write_manifest(manifest_path(&prompts), &out.manifest)?;
    write_stream(&stream, &out.stream)?;
    write_references(reference_path(&stream), &out.references)?;
    println!("{}", prompts.display());
    println!("{}", stream.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let config = args.config.resolve(args.method)?;
    let (stream, prompts) = load_inputs(&args.stream, &args.prompts)?;
    let reference_file = match (&args.reference, args.no_reference) {
        (_, true) => None,
        (Some(p), false) => Some(p.clone()),
        (None, false) => Some(reference_path(&args.stream)).filter(|p| p.exists()),
    };
    let reference = match reference_file {
        Some(p) => Some(read_references(p)?.reference_set(ReferenceSampling { rel_eps: config.rel_eps, ..ReferenceSampling::default() })?),
        None => None,
    };
    let report = run_episode(&prompts, &stream, &config, reference.as_ref())?;
    match args.report {
        Some(p) => report.write(p)?,
        None => std::io::stdout().write_all(report.to_json()?.as_bytes())?,
    }
    Ok(())
}

fn inspect(files: Vec<PathBuf>) -> Result<()> {
    for path in files {
        let mut magic = [0u8; 4];
        std::io::Read::read_exact(&mut std::fs::File::open(&path)?, &mut magic)
            .map_err(|_| Error::invalid(format!("{}: too short to carry a header", path.display())))?;
        let info = if magic == STREAM_MAGIC {
            let h = StreamReader::open(&path)?.header();
            serde_json::json!({
                "path": path.display().to_string(), "kind": "stream", "dim": h.dim, "classes": h.classes,
                "count": h.count, "normalized": h.normalized(),
            })
        } else if magic == PROMPT_MAGIC {
            let p = read_prompts(&path)?;
            serde_json::json!({
                "path": path.display().to_string(), "kind": "prompts", "dim": p.dim, "classes": p.classes,
                "prompts_per_class": p.prompts_per_class,
            })
        } else {
            return Err(Error::invalid(format!("{}: unrecognized magic {:?}", path.display(), magic)));
        };
        println!("{info}");
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let base = args.config.resolve(None)?;
    let rows: Vec<(Method, f64)> = match (&args.stream, &args.prompts, args.synthetic_seeds) {
        (Some(s), Some(p), _) => {
            let (stream, prompts) = load_inputs(s, p)?;
            let (cmp, _) = compare_methods(&prompts, &stream, &base, None)?;
            cmp.rows.iter().map(|r| (r.method, r.accuracy.unwrap_or(f64::NAN))).collect()
        }
        (None, None, Some(n)) if n > 0 => {
            let seeds: Vec<u64> = (0..n).collect();
            let s = evaluate_suite(&seeds, SynthSpec::default_suite, &base)?;
            vec![(Method::Zeroshot, s.mean_zeroshot), (Method::Cache, s.mean_cache), (Method::Bayesmm, s.mean_bayesmm)]
        }
        _ => return Err(Error::Config("compare needs --stream and --prompts, or --synthetic-seeds N > 0".into())),
    };
    let zs = rows[0].1;
    if args.json {
        let v: Vec<_> = rows
            .iter()
            .map(|(m, a)| serde_json::json!({ "method": m.name(), "accuracy": a, "delta_points": 100.0 * (a - zs) }))
            .collect();
        println!("{}", serde_json::Value::Array(v));
    } else {
        println!("{:<10} {:>9} {:>8}", "method", "accuracy", "delta");
        for (m, a) in &rows {
            println!("{:<10} {:>8.2}% {:>+8.2}", m.name(), 100.0 * a, 100.0 * (a - zs));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Inspect { files } => inspect(files),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
