use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::json;

use echodistill_core::centrality::modular_centrality;
use echodistill_core::config::PipelineConfig;
use echodistill_core::dot::export_dot;
use echodistill_core::evaluation::{evaluate, load_predictions};
use echodistill_core::feature_store::{save_csv_manifest, save_manifest, DatasetManifest};
use echodistill_core::graph_builder::{build_class_graph, read_graph_cache, write_graph_cache, ClassGraph};
use echodistill_core::infomap::{detect_communities_traced, Partition};
use echodistill_core::pipeline::{
    distilled_manifest, load_input, read_communities, run_pipeline, write_centrality, write_communities, ClassOutcome,
};
use echodistill_core::selector::{emit_distilled_manifest, select_representatives, ClassSelection};
use echodistill_core::synth::{generate_synthetic, SyntheticSpec};

#[derive(Parser)]
#[command(name = "echodistill", version, about = "Distill a feature manifest to a few representative videos per class")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Input {
    /// key=value config file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest with a `dim=,classes=` header and feature-file references.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// All-in-one CSV manifest `video_id,ef,split,f_0,...`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Expected feature dimension of a CSV manifest.
    #[arg(long)]
    dim: Option<usize>,
    /// Class intervals, e.g. "[0,30) [30,40) [40,50) [50,70] (70,100]".
    #[arg(long)]
    bounds: Option<String>,
}

#[derive(Args, Debug, Default)]
struct GraphFlags {
    /// Neighbours per node, `complete`, or `auto`.
    #[arg(long)]
    knn: Option<String>,
    /// Kernel bandwidth: `median` or a positive number.
    #[arg(long)]
    sigma: Option<String>,
    /// Use raw Euclidean distances as edge weights.
    #[arg(long)]
    raw_distance_weights: bool,
}

#[derive(Args, Debug, Default)]
struct DetectFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// Optimizer restarts per class.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    max_sweeps: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct SelectFlags {
    /// Videos per class.
    #[arg(long)]
    vpc: Option<usize>,
    /// `equal` (round-robin) or `proportional`.
    #[arg(long)]
    alloc: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest, print per-class counts, optionally rewrite it.
    Ingest {
        #[command(flatten)]
        input: Input,
        /// Write the validated manifest here (binary feature file alongside).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate planted Gaussian blobs per class.
    Synth {
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 3)]
        clusters: usize,
        #[arg(long, default_value_t = 30)]
        points: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// RMS distance of points from their blob centre.
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        /// Distance between blob centres.
        #[arg(long, default_value_t = 8.0)]
        separation: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        bounds: Option<String>,
        /// Write the all-in-one CSV form instead.
        #[arg(long)]
        as_csv: bool,
        /// Manifest path; planted labels go to `<stem>.planted.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build class graphs and cache them as `class_<c>.graph.jsonl`.
    BuildGraph {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        graph: GraphFlags,
        /// Only this class.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect communities on a cached graph.
    Detect {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        detect: DetectFlags,
        /// Defaults to `<graph stem>.communities.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Modular centrality of a cached graph under a community table.
    Centrality {
        #[arg(long)]
        graph: PathBuf,
        /// Defaults to `<graph stem>.communities.csv`.
        #[arg(long)]
        communities: Option<PathBuf>,
        /// Defaults to `<graph stem>.centrality.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select representatives from a directory of cached graphs and communities.
    Select {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        select: SelectFlags,
        /// Recorded in provenance.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory written by build-graph and detect.
        #[arg(long)]
        work: PathBuf,
        /// Distilled manifest path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a `video_id,true_ef,predicted_ef` CSV.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        tolerance: Option<f64>,
        /// Check every prediction against this manifest's video ids.
        #[command(flatten)]
        input: Input,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write `class_<c>.dot` for every cached graph in a work directory.
    ExportDot {
        #[arg(long)]
        work: PathBuf,
        /// Supplies `ef` node attributes.
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        detect: DetectFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// The whole pipeline.
    Run {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        graph: GraphFlags,
        #[command(flatten)]
        detect: DetectFlags,
        #[command(flatten)]
        select: SelectFlags,
        /// Worker threads for classes.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Default)]
struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn put(&mut self, key: &'static str, value: Option<impl ToString>) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key, v.to_string()));
        }
        self
    }

    fn input(&mut self, i: &Input) -> &mut Self {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        self.put("manifest", path(&i.manifest))
            .put("csv", path(&i.csv))
            .put("dim", i.dim)
            .put("bounds", i.bounds.clone())
    }

    fn graph(&mut self, g: &GraphFlags) -> &mut Self {
        self.put("knn", g.knn.clone()).put("sigma", g.sigma.clone()).put("raw-distance-weights", g.raw_distance_weights.then_some(true))
    }

    fn detect(&mut self, d: &DetectFlags) -> &mut Self {
        self.put("seed", d.seed).put("trials", d.trials).put("max-sweeps", d.max_sweeps)
    }

    fn select(&mut self, s: &SelectFlags) -> &mut Self {
        self.put("vpc", s.vpc).put("alloc", s.alloc.clone())
    }

    fn build(&self, file: Option<&Path>) -> Result<PipelineConfig> {
        let mut c = PipelineConfig::default();
        if let Some(f) = file {
            c.apply_file(f)?;
        }
        for (k, v) in &self.0 {
            c.set(k, v, None)?;
        }
        Ok(c)
    }
}

fn graph_file(dir: &Path, class: usize) -> PathBuf {
    dir.join(format!("class_{class}.graph.jsonl"))
}

/// `x/class_3.graph.jsonl` -> `x/class_3.<suffix>`
fn sibling(graph: &Path, suffix: &str) -> PathBuf {
    let name = graph.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".graph.jsonl").or_else(|| name.rsplit_once('.').map(|(s, _)| s)).unwrap_or(&name);
    graph.with_file_name(format!("{stem}.{suffix}"))
}

fn load(config: &PipelineConfig) -> Result<DatasetManifest> {
    Ok(load_input(config)?)
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(io::stdout().lock(), "{text}") {
        // reader went away, e.g. `| head`
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn manifest_stats(m: &DatasetManifest) -> serde_json::Value {
    json!({
        "records": m.len(),
        "dim": m.dim(),
        "classes": m.class_count(),
        "bounds": m.bounds().to_string(),
        "class_counts": m.class_counts(),
    })
}

/// Cached graphs in `dir`, keyed by class label.
fn cached_graphs(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(c) = name.strip_prefix("class_").and_then(|r| r.strip_suffix(".graph.jsonl")) {
            if let Ok(c) = c.parse::<usize>() {
                found.push((c, path));
            }
        }
    }
    found.sort();
    Ok(found)
}

fn partition_for(graph_path: &Path, graph: &ClassGraph, config: &PipelineConfig) -> Result<Partition> {
    let table = sibling(graph_path, "communities.csv");
    if table.is_file() {
        Ok(read_communities(&table, graph)?)
    } else {
        log::info!("{} missing; detecting", table.display());
        Ok(detect_communities_traced(graph, &config.detect_options())?.partition)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, out } => {
            let config = Overrides::default().input(&input).build(input.config.as_deref())?;
            let manifest = load(&config)?;
            if let Some(out) = out {
                save_manifest(&manifest, &out)?;
                log::info!("wrote {}", out.display());
            }
            print_json(&manifest_stats(&manifest))
        }
        Command::Synth { classes, clusters, points, dim, spread, separation, seed, bounds, as_csv, out } => {
            let bounds = match bounds {
                Some(b) => b.parse()?,
                None => Default::default(),
            };
            let spec = SyntheticSpec { classes, clusters, points_per_cluster: points, dim, spread, separation, seed };
            let data = generate_synthetic(&spec, &bounds)?;
            if as_csv {
                save_csv_manifest(&data.manifest, &out)?;
            } else {
                save_manifest(&data.manifest, &out)?;
            }
            let planted = out.with_extension("planted.csv");
            let mut text = String::from("video_id,class_label,cluster\n");
            for (r, k) in data.manifest.records().iter().zip(&data.planted) {
                text.push_str(&format!("{},{},{k}\n", r.video_id, r.class_label));
            }
            fs::write(&planted, text).with_context(|| format!("writing {}", planted.display()))?;
            print_json(&manifest_stats(&data.manifest))
        }
        Command::BuildGraph { input, graph, class, out } => {
            let config = Overrides::default().input(&input).graph(&graph).build(input.config.as_deref())?;
            let manifest = load(&config)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let classes: Vec<usize> = match class {
                Some(c) if c >= manifest.class_count() => bail!("class {c} out of range (0..{})", manifest.class_count()),
                Some(c) => vec![c],
                None => (0..manifest.class_count()).collect(),
            };
            let mut written = Vec::new();
            for c in classes {
                let n = manifest.class_members(c).len();
                if n < 2 {
                    log::warn!("class {c} has {n} member(s); no graph");
                    continue;
                }
                let g = build_class_graph(&manifest, c, &config.graph_options()).with_context(|| format!("class {c}"))?;
                let path = graph_file(&out, c);
                write_graph_cache(&g, &path)?;
                written.push(json!({"class_label": c, "nodes": g.node_count(), "edges": g.edges().len(), "path": path}));
            }
            print_json(&written)
        }
        Command::Detect { graph, config, detect, out } => {
            let config = Overrides::default().detect(&detect).build(config.as_deref())?;
            let g = read_graph_cache(&graph)?;
            let d = detect_communities_traced(&g, &config.detect_options())?;
            let out = out.unwrap_or_else(|| sibling(&graph, "communities.csv"));
            write_communities(&out, g.node_ids(), &d.partition.assignment)?;
            print_json(&json!({
                "class_label": g.class_label(),
                "nodes": g.node_count(),
                "module_count": d.module_count(),
                "codelength": d.partition.codelength,
                "one_level_codelength": d.one_level_codelength,
                "sweeps": d.sweeps,
                "out": out,
            }))
        }
        Command::Centrality { graph, communities, out } => {
            let g = read_graph_cache(&graph)?;
            let table = communities.unwrap_or_else(|| sibling(&graph, "communities.csv"));
            let p = read_communities(&table, &g)?;
            let c = modular_centrality(&g, &p)?;
            let out = out.unwrap_or_else(|| sibling(&graph, "centrality.csv"));
            write_centrality(&out, g.node_ids(), &p.assignment, &c)?;
            log::info!("wrote {}", out.display());
            Ok(())
        }
        Command::Select { input, select, seed, work, out } => {
            let config =
                Overrides::default().input(&input).select(&select).put("seed", seed).build(input.config.as_deref())?;
            config.validate()?;
            let manifest = load(&config)?;
            let cached: HashMap<usize, PathBuf> = cached_graphs(&work)?.into_iter().collect();
            let mut outcomes = Vec::new();
            for c in 0..manifest.class_count() {
                let ids: Vec<String> =
                    manifest.class_members(c).iter().map(|&i| manifest.records()[i].video_id.clone()).collect();
                let selection = match cached.get(&c) {
                    Some(path) => {
                        let g = read_graph_cache(path)?;
                        if g.node_ids() != ids.as_slice() {
                            bail!("{} does not match class {c} of the manifest", path.display());
                        }
                        let table = sibling(path, "communities.csv");
                        let p = read_communities(&table, &g)?;
                        let cent = modular_centrality(&g, &p)?;
                        select_representatives(&g, &p, &cent, config.vpc, config.alloc)?
                    }
                    None if ids.len() < 2 => ClassSelection::all_members(c, &ids, config.vpc),
                    None => bail!("no cached graph for class {c} in {}", work.display()),
                };
                for w in &selection.warnings {
                    log::warn!("class {c}: {w}");
                }
                outcomes.push(ClassOutcome { class_label: c, graph: None, detection: None, centrality: None, selection });
            }
            let distilled = distilled_manifest(&outcomes, &config);
            emit_distilled_manifest(&distilled, &manifest, &out)?;
            print_json(&json!({"total_picks": distilled.total_picks(), "video_ids": distilled.video_ids()}))
        }
        Command::Evaluate { predictions, tolerance, input, out } => {
            let config =
                Overrides::default().input(&input).put("tolerance", tolerance).build(input.config.as_deref())?;
            if config.tolerance.is_nan() || config.tolerance < 0.0 {
                bail!("tolerance must be >= 0");
            }
            let known: Option<HashSet<String>> = if config.manifest.is_some() || config.csv.is_some() {
                Some(load(&config)?.records().iter().map(|r| r.video_id.clone()).collect())
            } else {
                None
            };
            let preds = load_predictions(&predictions)?;
            let report = evaluate(&preds, &config.bounds, config.tolerance, known.as_ref())?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            if let Some(out) = out {
                fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")
                    .with_context(|| format!("writing {}", out.display()))?;
            }
            print_json(&report)
        }
        Command::ExportDot { work, input, detect, out } => {
            let config = Overrides::default().input(&input).detect(&detect).build(input.config.as_deref())?;
            let ef: Option<HashMap<String, f64>> = if config.manifest.is_some() || config.csv.is_some() {
                Some(load(&config)?.records().iter().map(|r| (r.video_id.clone(), r.ef)).collect())
            } else {
                None
            };
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut written = Vec::new();
            for (c, path) in cached_graphs(&work)? {
                let g = read_graph_cache(&path)?;
                let p = partition_for(&path, &g, &config)?;
                let values: Option<Vec<f64>> = match &ef {
                    Some(map) => Some(
                        g.node_ids()
                            .iter()
                            .map(|id| map.get(id).copied().with_context(|| format!("{id:?} not in manifest")))
                            .collect::<Result<_>>()?,
                    ),
                    None => None,
                };
                let dot = out.join(format!("class_{c}.dot"));
                export_dot(&g, &p, values.as_deref(), &dot)?;
                written.push(dot);
            }
            print_json(&written)
        }
        Command::Run { input, graph, detect, select, jobs, out } => {
            let config = Overrides::default()
                .input(&input)
                .graph(&graph)
                .detect(&detect)
                .select(&select)
                .put("jobs", jobs)
                .put("out", out.map(|p| p.display().to_string()))
                .build(input.config.as_deref())?;
            let report = run_pipeline(&config)?;
            print_json(&report.summary)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
