//! `pano-probe`: run panoramic image-text alignment probes from the shell.
//!
//! Exit status reports pipeline health only. A model that fails a probe
//! still exits 0; malformed inputs, missing embeddings and I/O failures exit
//! non-zero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use pano_probe_core::corpus::{
    default_directional_cues, filter_directional, parse_cue_list, parse_manifest, Dataset,
};
use pano_probe_core::finetune::{derive_lambda, LossCurve};
use pano_probe_core::probes::{
    compare_reports, probe_textual, probe_visual, ProbeConfig, ProbeReport, DEFAULT_ALPHA,
    DEFAULT_DIVISIONS, DEFAULT_GENERIC_CUES,
};
use pano_probe_core::report::{boxplot_summary, render_table, TableFormat};
use pano_probe_core::scoring::{EmbeddingProvider, FileProvider, ServiceProvider};
use pano_probe_core::transforms::{materialize_variants, shift_schedule, VariantIndex};

#[derive(Parser)]
#[command(name = "pano-probe", version, about = "Probe 360-degree image-text alignment of vision-language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write flipped and circularly shifted copies of every panorama plus a variant index
    Variants(VariantsArgs),
    /// Test whether format-cue prompts outscore generic-cue prompts
    ProbeTextual(ProbeArgs),
    /// Test score stability under every scheduled circular shift
    ProbeVisual(ProbeArgs),
    /// Derive the loss weight from knee points of the lambda=1 and lambda=0 loss curves
    Lambda(LambdaArgs),
    /// Emit boxplot summaries from a probe report or a list of values
    Boxplot(BoxplotArgs),
    /// Compare two probe reports condition by condition
    Compare(CompareArgs),
}

#[derive(Args)]
struct VariantsArgs {
    /// Dataset manifest (JSON)
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for variant images and variants.json
    #[arg(long)]
    out: PathBuf,
    /// Number of equal divisions of the panorama width
    #[arg(long, default_value_t = DEFAULT_DIVISIONS)]
    divisions: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Markdown => TableFormat::Markdown,
        }
    }
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["store", "service_url"])))]
struct ProbeArgs {
    /// Dataset manifest (JSON)
    #[arg(long)]
    manifest: PathBuf,
    /// Embedding store file
    #[arg(long)]
    store: Option<PathBuf>,
    /// Base URL of an embedding service exposing POST /embed
    #[arg(long)]
    service_url: Option<String>,
    /// Variant index used to locate image files for the service
    #[arg(long)]
    variants: Option<PathBuf>,
    /// Output directory for the report files
    #[arg(long)]
    out: PathBuf,
    /// Significance level
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Number of equal divisions of the panorama width (visual probe)
    #[arg(long, default_value_t = DEFAULT_DIVISIONS)]
    divisions: u32,
    /// Generic cue replacing the format cue (repeatable; textual probe)
    #[arg(long = "cue")]
    cues: Vec<String>,
    /// Fixed stability bound instead of deriving it from flips (visual probe)
    #[arg(long)]
    bound: Option<f64>,
    /// Re-split prompts against this format cue instead of the manifest's
    #[arg(long)]
    format_cue: Option<String>,
    /// Drop pairs whose prompt contains a built-in directional cue
    #[arg(long)]
    filter_directional: bool,
    /// Drop pairs whose prompt contains a cue listed in this file
    #[arg(long)]
    directional_cues: Option<PathBuf>,
    /// Table format printed to stdout
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
}

#[derive(Args)]
struct LambdaArgs {
    /// Loss curve CSV recorded with lambda = 1
    #[arg(long)]
    curve1: PathBuf,
    /// Loss curve CSV recorded with lambda = 0
    #[arg(long)]
    curve0: PathBuf,
    /// Directory to write lambda.json into
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["report", "values"])))]
struct BoxplotArgs {
    /// Probe report JSON whose score distributions are summarized
    #[arg(long)]
    report: Option<PathBuf>,
    /// Text file with one value per line
    #[arg(long)]
    values: Option<PathBuf>,
    /// Label for --values input
    #[arg(long, default_value = "values")]
    label: String,
    /// Directory to write boxplot.json into
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Report before the change (e.g. frozen model)
    #[arg(long)]
    before: PathBuf,
    /// Report after the change (e.g. fine-tuned model)
    #[arg(long)]
    after: PathBuf,
    /// Directory to write compare.json into
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn run_variants(args: VariantsArgs) -> Result<()> {
    let dataset = parse_manifest(&args.manifest)?;
    let schedule = shift_schedule(dataset.width, args.divisions)?;
    let index = materialize_variants(&dataset, &schedule, &args.out)?;
    println!(
        "wrote {} variant images for {} pairs; index at {}",
        index.generated_count(),
        dataset.len(),
        args.out.join("variants.json").display()
    );
    Ok(())
}

fn load_dataset(args: &ProbeArgs) -> Result<Dataset> {
    let mut dataset = parse_manifest(&args.manifest)?;
    let mut cues = Vec::new();
    if args.filter_directional {
        cues.extend(default_directional_cues());
    }
    if let Some(path) = &args.directional_cues {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cues.extend(parse_cue_list(&text));
    }
    if !cues.is_empty() {
        let before = dataset.len();
        dataset = filter_directional(&dataset, &cues);
        log::info!("directional filter kept {} of {before} pairs", dataset.len());
        if dataset.is_empty() {
            bail!("directional filter removed every pair");
        }
    }
    Ok(dataset)
}

fn provider(args: &ProbeArgs) -> Result<Box<dyn EmbeddingProvider>> {
    if let Some(store) = &args.store {
        return Ok(Box::new(FileProvider::open(store)?));
    }
    let url = args.service_url.as_deref().expect("clap enforces a source");
    let variants = args.variants.as_deref().map(VariantIndex::read).transpose()?;
    Ok(Box::new(ServiceProvider::new(url, variants)?))
}

fn run_probe(args: ProbeArgs, visual: bool) -> Result<()> {
    let dataset = load_dataset(&args)?;
    let provider = provider(&args)?;
    let config = ProbeConfig {
        alpha: args.alpha,
        divisions: args.divisions,
        format_cue: args.format_cue.clone(),
        generic_cues: if args.cues.is_empty() {
            DEFAULT_GENERIC_CUES.iter().map(|s| s.to_string()).collect()
        } else {
            args.cues.clone()
        },
        bound_override: args.bound,
    };
    let report = if visual {
        probe_visual(&dataset, provider.as_ref(), &config)?
    } else {
        probe_textual(&dataset, provider.as_ref(), &config)?
    };
    let stem = if visual { "visual" } else { "textual" };
    write_file(&args.out, &format!("{stem}.json"), &report.to_json())?;
    write_file(&args.out, &format!("{stem}.csv"), &render_table(&report, TableFormat::Csv))?;
    write_file(&args.out, &format!("{stem}.md"), &render_table(&report, TableFormat::Markdown))?;
    print!("{}", render_table(&report, args.format.into()));
    println!("verdict: {}", report.verdict);
    Ok(())
}

fn run_lambda(args: LambdaArgs) -> Result<()> {
    let one = LossCurve::read_csv(&args.curve1, 1.0)?;
    let zero = LossCurve::read_csv(&args.curve0, 0.0)?;
    let record = derive_lambda(&one, &zero)?;
    let json = to_json(&record);
    if let Some(out) = &args.out {
        write_file(out, "lambda.json", &json)?;
    }
    print!("{json}");
    Ok(())
}

fn read_report(path: &Path) -> Result<ProbeReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ProbeReport::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run_boxplot(args: BoxplotArgs) -> Result<()> {
    let summaries = if let Some(path) = &args.report {
        read_report(path)?.distributions
    } else {
        let path = args.values.as_ref().expect("clap enforces an input");
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let values = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                l.trim()
                    .parse::<f64>()
                    .with_context(|| format!("{}:{}: bad value `{l}`", path.display(), n + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        vec![boxplot_summary(&values, args.label.clone())?]
    };
    let json = to_json(&summaries);
    if let Some(out) = &args.out {
        write_file(out, "boxplot.json", &json)?;
    }
    print!("{json}");
    Ok(())
}

fn run_compare(args: CompareArgs) -> Result<()> {
    let delta = compare_reports(&read_report(&args.before)?, &read_report(&args.after)?)?;
    let json = to_json(&delta);
    if let Some(out) = &args.out {
        write_file(out, "compare.json", &json)?;
    }
    print!("{json}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PANO_PROBE_LOG", "warn")).init();
    let result = match Cli::parse().command {
        Command::Variants(args) => run_variants(args),
        Command::ProbeTextual(args) => run_probe(args, false),
        Command::ProbeVisual(args) => run_probe(args, true),
        Command::Lambda(args) => run_lambda(args),
        Command::Boxplot(args) => run_boxplot(args),
        Command::Compare(args) => run_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
