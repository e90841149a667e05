//! Command-line subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use shape_macros::dataset::Dataset;
use shape_macros::discovery::{run_baseline, run_shapemod, DiscoveryConfig};
use shape_macros::library::{Library, ObjectiveWeights};
use shape_macros::order::DEFAULT_MAX_ORDERS;
use shape_macros::search::{best_programs, SearchConfig};

use crate::corpus::{generate_corpus, Corpus, CorpusSpec, Manifest};
use crate::metrics::{compression_report, markdown_table, MetricsRow};
use crate::perturb::{perturbation_harness, Condition, DEFAULT_SIGMAS};
use crate::service::EditorService;

#[derive(Debug, Parser)]
#[command(name = "shape-macros-cli", version, about = "Discover macro libraries for cuboid shape programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a synthetic corpus manifest.
    GenCorpus(GenCorpus),
    /// Run macro discovery on a corpus.
    Discover(Discover),
    /// Build the frequent-sequence baseline library.
    Baseline(Common),
    /// Refactor a corpus with an existing library.
    Refactor(WithLibrary),
    /// Compression table for one or more libraries.
    Report(Report),
    /// Perturbation study for a library against the base library.
    Perturb(Perturb),
    /// Serve the editing API.
    Serve(Serve),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Objective weights as inline JSON or a path to a JSON file. Missing
    /// keys keep their defaults.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_ORDERS)]
    pub max_orders: usize,
}

#[derive(Debug, Args)]
pub struct GenCorpus {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub programs: usize,
    /// Fraction of programs that receive the planted ladder macro.
    #[arg(long, default_value_t = 0.0)]
    pub planted_fraction: f64,
    /// Full corpus spec as JSON; overrides the other generation flags.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Discover {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 5)]
    pub rounds: usize,
    #[arg(long)]
    pub proposal_steps: Option<usize>,
    /// Full discovery config as JSON; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WithLibrary {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub library: PathBuf,
}

#[derive(Debug, Args)]
pub struct Report {
    #[command(flatten)]
    pub common: Common,
    /// `name=path` pairs; the base library is always included.
    #[arg(long = "library")]
    pub libraries: Vec<String>,
}

#[derive(Debug, Args)]
pub struct Perturb {
    #[command(flatten)]
    pub lib: WithLibrary,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct Serve {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub library: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, default_value_t = 20)]
    pub tasks: usize,
    #[arg(long, default_value = "edits.jsonl")]
    pub log: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_ORDERS)]
    pub max_orders: usize,
}

pub fn parse_weights(arg: Option<&str>) -> Result<ObjectiveWeights> {
    let Some(arg) = arg else {
        return Ok(ObjectiveWeights::default());
    };
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading weights {arg}"))?
    };
    let mut merged = serde_json::to_value(ObjectiveWeights::default())?;
    let Value::Object(over) = serde_json::from_str::<Value>(&text)? else {
        bail!("weights must be a JSON object");
    };
    for (k, v) in over {
        let Some(slot) = merged.get_mut(&k) else {
            bail!("unknown weight {k:?}");
        };
        *slot = v;
    }
    Ok(serde_json::from_value(merged)?)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Corpus::from_manifest(&m)?)
}

pub fn load_library(path: &Path) -> Result<Library> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Library::from_json(&text)?)
}

fn write_json(dir: &Path, name: &str, v: &impl Serialize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    Ok(())
}

struct Loaded {
    dataset: Dataset,
    search: SearchConfig,
}

fn load(c: &Common) -> Result<Loaded> {
    let corpus = load_corpus(&c.corpus)?;
    let dataset = corpus.dataset(c.max_orders)?;
    let search = SearchConfig {
        weights: parse_weights(c.weights.as_deref())?,
        ..SearchConfig::default()
    };
    Ok(Loaded { dataset, search })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::GenCorpus(a) => {
            let spec = match &a.spec {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None if a.planted_fraction > 0.0 => CorpusSpec::planted(a.programs, a.planted_fraction, a.seed),
                None => CorpusSpec::families(a.programs, a.seed),
            };
            let corpus = generate_corpus(&spec)?;
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut text = serde_json::to_string_pretty(&corpus.to_manifest())?;
            text.push('\n');
            fs::write(&a.out, text)?;
            log::info!("wrote {} programs to {}", corpus.programs.len(), a.out.display());
        }
        Cmd::Discover(a) => {
            let l = load(&a.common)?;
            let mut cfg: DiscoveryConfig = match &a.config {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => DiscoveryConfig::default(),
            };
            cfg.num_rounds = a.rounds;
            cfg.seed = a.common.seed;
            cfg.search.weights = l.search.weights;
            if let Some(n) = a.proposal_steps {
                cfg.num_proposal_steps = n;
            }
            cfg.validate().map_err(anyhow::Error::msg)?;
            let r = run_shapemod(&l.dataset, &cfg);
            let out = &a.common.out;
            write_text(out, "library.json", &r.library.to_json())?;
            write_text(out, "discovery.json", &r.report.to_json())?;
            write_json(out, "timing.json", &r.timings)?;
            write_json(out, "refactored.json", &r.programs)?;
            log::info!("f {:.4} -> {:.4}", r.report.initial_f, r.report.final_f);
        }
        Cmd::Baseline(a) => {
            let l = load(&a)?;
            let r = run_baseline(&l.dataset, &l.search);
            let row = MetricsRow::from_programs("baseline", &r.library, &r.programs, &l.search.weights);
            write_text(&a.out, "baseline_library.json", &r.library.to_json())?;
            write_json(&a.out, "baseline.json", &row)?;
        }
        Cmd::Refactor(a) => {
            let l = load(&a.common)?;
            let lib = load_library(&a.library)?;
            let programs = best_programs(&l.dataset, &lib, &l.search)?;
            write_json(&a.common.out, "refactored.json", &programs)?;
        }
        Cmd::Report(a) => {
            let l = load(&a.common)?;
            let mut libs = vec![("base".to_string(), Library::base())];
            for spec in &a.libraries {
                let Some((name, path)) = spec.split_once('=') else {
                    bail!("expected name=path, got {spec:?}");
                };
                libs.push((name.to_string(), load_library(Path::new(path))?));
            }
            let rows = compression_report(&l.dataset, &libs, &l.search)?;
            write_json(&a.common.out, "report.json", &rows)?;
            write_text(&a.common.out, "report.md", &markdown_table(&rows))?;
        }
        Cmd::Perturb(a) => {
            let l = load(&a.lib.common)?;
            let lib = load_library(&a.lib.library)?;
            let base = Library::base();
            let macro_programs = best_programs(&l.dataset, &lib, &l.search)?;
            let base_programs = best_programs(&l.dataset, &base, &l.search)?;
            let sigmas = a.sigmas.clone().unwrap_or_else(|| DEFAULT_SIGMAS.to_vec());
            let report = perturbation_harness(
                &[
                    Condition { name: "macro", library: &lib, programs: &macro_programs },
                    Condition { name: "base", library: &base, programs: &base_programs },
                ],
                &sigmas,
                a.trials,
                a.lib.common.seed,
            );
            write_json(&a.lib.common.out, "perturb.json", &report)?;
        }
        Cmd::Serve(a) => {
            let corpus = load_corpus(&a.corpus)?;
            let dataset = corpus.dataset(a.max_orders)?;
            let search = SearchConfig {
                weights: parse_weights(a.weights.as_deref())?,
                ..SearchConfig::default()
            };
            let lib = load_library(&a.library)?;
            let svc = EditorService::new(&dataset, corpus.families(), lib, &search, a.tasks, a.seed, &a.log)?;
            tokio::runtime::Runtime::new()?.block_on(crate::service::serve(svc, &a.addr))?;
        }
    }
    Ok(())
}
