//! The full per-class run: graph, communities, centrality, selection, outputs.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::centrality::{modular_centrality, CentralityTable, NodeCentrality, CENTRALITY_SCHEME};
use crate::config::{ConfigError, PipelineConfig};
use crate::feature_store::{load_csv_manifest, load_manifest, DatasetManifest, StoreError};
use crate::graph_builder::{build_class_graph, ClassGraph, GraphError};
use crate::infomap::{detect_communities_traced, module_count, Detection, InfomapError, Partition};
use crate::selector::{emit_distilled_manifest, select_representatives, ClassSelection, DistilledManifest, SelectError};

pub const DISTILLED_MANIFEST: &str = "distilled_manifest.txt";
pub const SUMMARY: &str = "summary.json";
pub const COMMUNITIES_DIR: &str = "communities";
pub const CENTRALITY_DIR: &str = "centrality";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("class {class}: {source}")]
    Graph {
        class: usize,
        #[source]
        source: GraphError,
    },
    #[error("class {class}: {source}")]
    Infomap {
        class: usize,
        #[source]
        source: InfomapError,
    },
    #[error("class {class}: {source}")]
    Select {
        class: usize,
        #[source]
        source: SelectError,
    },
    #[error(transparent)]
    Emit(SelectError),
    #[error("{}: {msg}", path.display())]
    Table { path: PathBuf, msg: String },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Everything computed for one class. `graph`, `detection` and `centrality`
/// are absent for classes too small to form a graph.
#[derive(Debug, Clone)]
pub struct ClassOutcome {
    pub class_label: usize,
    pub graph: Option<ClassGraph>,
    pub detection: Option<Detection>,
    pub centrality: Option<CentralityTable>,
    pub selection: ClassSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub class_label: usize,
    pub nodes: usize,
    pub edges: usize,
    pub codelength: Option<f64>,
    pub one_level_codelength: Option<f64>,
    pub module_count: usize,
    pub sweeps: usize,
    pub picks: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub tool_version: String,
    pub vpc: usize,
    pub seed: u64,
    pub trials: usize,
    pub graph: String,
    pub centrality: String,
    pub allocation: String,
    pub total_picks: usize,
    pub classes: Vec<ClassSummary>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub distilled: DistilledManifest,
    pub summary: RunSummary,
    pub out: PathBuf,
}

pub fn load_input(config: &PipelineConfig) -> Result<DatasetManifest, PipelineError> {
    match (&config.manifest, &config.csv) {
        (Some(p), _) => Ok(load_manifest(p, &config.bounds)?),
        (None, Some(p)) => Ok(load_csv_manifest(p, &config.bounds, config.dim)?),
        (None, None) => Err(ConfigError::Invalid("one of manifest or csv is required".into()).into()),
    }
}

pub fn graph_description(config: &PipelineConfig) -> String {
    let o = config.graph_options();
    format!("knn={} weights={}", o.topology, o.weighting)
}

pub fn distill_class(
    manifest: &DatasetManifest,
    class: usize,
    config: &PipelineConfig,
) -> Result<ClassOutcome, PipelineError> {
    let members = manifest.class_members(class);
    if members.len() < 2 {
        let ids: Vec<String> = members.iter().map(|&i| manifest.records()[i].video_id.clone()).collect();
        let selection = ClassSelection::all_members(class, &ids, config.vpc);
        for w in &selection.warnings {
            log::warn!("{w}");
        }
        return Ok(ClassOutcome { class_label: class, graph: None, detection: None, centrality: None, selection });
    }
    let graph = build_class_graph(manifest, class, &config.graph_options())
        .map_err(|source| PipelineError::Graph { class, source })?;
    let detection = detect_communities_traced(&graph, &config.detect_options())
        .map_err(|source| PipelineError::Infomap { class, source })?;
    let centrality = modular_centrality(&graph, &detection.partition)
        .map_err(|source| PipelineError::Infomap { class, source })?;
    let selection = select_representatives(&graph, &detection.partition, &centrality, config.vpc, config.alloc)
        .map_err(|source| PipelineError::Select { class, source })?;
    log::info!(
        "class {class}: {} nodes, {} edges, {} modules, L={:.6} bits, {} picks",
        graph.node_count(),
        graph.edges().len(),
        detection.module_count(),
        detection.partition.codelength,
        selection.picks.len()
    );
    for w in &selection.warnings {
        log::warn!("class {class}: {w}");
    }
    Ok(ClassOutcome {
        class_label: class,
        graph: Some(graph),
        detection: Some(detection),
        centrality: Some(centrality),
        selection,
    })
}

/// Runs every class on a pool of `config.jobs` threads; results come back in class order.
pub fn distill(manifest: &DatasetManifest, config: &PipelineConfig) -> Result<Vec<ClassOutcome>, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let results: Vec<Result<ClassOutcome, PipelineError>> = pool.install(|| {
        (0..manifest.class_count()).into_par_iter().map(|c| distill_class(manifest, c, config)).collect()
    });
    results.into_iter().collect()
}

pub fn summarize(outcomes: &[ClassOutcome], config: &PipelineConfig) -> RunSummary {
    let classes: Vec<ClassSummary> = outcomes
        .iter()
        .map(|o| ClassSummary {
            class_label: o.class_label,
            nodes: o.selection.node_count,
            edges: o.graph.as_ref().map_or(0, |g| g.edges().len()),
            codelength: o.detection.as_ref().map(|d| d.partition.codelength),
            one_level_codelength: o.detection.as_ref().map(|d| d.one_level_codelength),
            module_count: o.selection.module_count,
            sweeps: o.detection.as_ref().map_or(0, |d| d.sweeps),
            picks: o.selection.picks.iter().map(|p| p.video_id.clone()).collect(),
            warnings: o.selection.warnings.clone(),
        })
        .collect();
    RunSummary {
        tool_version: crate::VERSION.to_string(),
        vpc: config.vpc,
        seed: config.seed,
        trials: config.trials,
        graph: graph_description(config),
        centrality: CENTRALITY_SCHEME.to_string(),
        allocation: config.alloc.to_string(),
        total_picks: classes.iter().map(|c| c.picks.len()).sum(),
        classes,
    }
}

pub fn distilled_manifest(outcomes: &[ClassOutcome], config: &PipelineConfig) -> DistilledManifest {
    DistilledManifest {
        vpc: config.vpc,
        seed: config.seed,
        tool_version: crate::VERSION.to_string(),
        centrality_scheme: CENTRALITY_SCHEME.to_string(),
        allocation: config.alloc,
        graph: graph_description(config),
        classes: outcomes.iter().map(|o| o.selection.clone()).collect(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    }
}

fn write_file(path: &Path, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(file);
    write(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn write_communities(path: &Path, ids: &[String], assignment: &[usize]) -> Result<(), PipelineError> {
    write_file(path, |w| {
        writeln!(w, "video_id,module_id")?;
        ids.iter().zip(assignment).try_for_each(|(id, m)| writeln!(w, "{id},{m}"))
    })
}

pub fn write_centrality(
    path: &Path,
    ids: &[String],
    assignment: &[usize],
    table: &CentralityTable,
) -> Result<(), PipelineError> {
    write_file(path, |w| {
        writeln!(w, "video_id,module_id,local,global,combined")?;
        ids.iter()
            .zip(assignment)
            .zip(&table.nodes)
            .try_for_each(|((id, m), c)| writeln!(w, "{id},{m},{},{},{}", c.local, c.global, c.combined))
    })
}

/// Reads a `video_id,module_id` table back into graph node order.
pub fn read_communities(path: &Path, graph: &ClassGraph) -> Result<Partition, PipelineError> {
    let bad = |msg: String| PipelineError::Table { path: path.to_path_buf(), msg };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let (id, m) = match (row.get(0), row.get(1)) {
            (Some(id), Some(m)) => (id, m),
            _ => return Err(bad(format!("short row {row:?}"))),
        };
        let m: usize = m.trim().parse().map_err(|_| bad(format!("bad module id {m:?} for {id:?}")))?;
        if by_id.insert(id.to_string(), m).is_some() {
            return Err(bad(format!("duplicate video_id {id:?}")));
        }
    }
    if by_id.len() != graph.node_count() {
        return Err(bad(format!("{} rows for {} graph nodes", by_id.len(), graph.node_count())));
    }
    let assignment = graph
        .node_ids()
        .iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| bad(format!("no module for {id:?}"))))
        .collect::<Result<Vec<usize>, _>>()?;
    module_count(&assignment, graph.node_count()).map_err(|e| bad(e.to_string()))?;
    Ok(Partition::from_assignment(graph, assignment))
}

/// Per-class community and centrality tables under `dir`.
pub fn write_class_tables(outcome: &ClassOutcome, dir: &Path) -> Result<(), PipelineError> {
    let name = format!("class_{}.csv", outcome.class_label);
    let communities = dir.join(COMMUNITIES_DIR).join(&name);
    let centrality = dir.join(CENTRALITY_DIR).join(&name);
    match (&outcome.graph, &outcome.detection, &outcome.centrality) {
        (Some(g), Some(d), Some(c)) => {
            write_communities(&communities, g.node_ids(), &d.partition.assignment)?;
            write_centrality(&centrality, g.node_ids(), &d.partition.assignment, c)
        }
        _ => {
            // no graph: one module, zero centrality
            let ids: Vec<String> = outcome.selection.video_ids().into_iter().map(String::from).collect();
            let zeros = CentralityTable {
                nodes: vec![NodeCentrality { local: 0.0, global: 0.0, combined: 0.0 }; ids.len()],
            };
            write_communities(&communities, &ids, &vec![0; ids.len()])?;
            write_centrality(&centrality, &ids, &vec![0; ids.len()], &zeros)
        }
    }
}

fn write_outputs(
    dir: &Path,
    manifest: &DatasetManifest,
    outcomes: &[ClassOutcome],
    distilled: &DistilledManifest,
    summary: &RunSummary,
) -> Result<(), PipelineError> {
    for sub in [COMMUNITIES_DIR, CENTRALITY_DIR] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    emit_distilled_manifest(distilled, manifest, dir.join(DISTILLED_MANIFEST)).map_err(PipelineError::Emit)?;
    for o in outcomes {
        write_class_tables(o, dir)?;
    }
    let path = dir.join(SUMMARY);
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))
}

fn move_tree(from: &Path, to: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(to).map_err(io_err(to))?;
    for entry in fs::read_dir(from).map_err(io_err(from))? {
        let entry = entry.map_err(io_err(from))?;
        let src = entry.path();
        let dst = to.join(entry.file_name());
        if src.is_dir() {
            move_tree(&src, &dst)?;
        } else {
            fs::rename(&src, &dst).map_err(io_err(&dst))?;
        }
    }
    Ok(())
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out.file_name().map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parent.join(format!(".{name}.staging-{}", std::process::id()))
}

/// Outputs are written to a sibling staging directory and moved into
/// `config.out` only once everything succeeded.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let manifest = load_input(config)?;
    log::info!("loaded {} records, {} classes, dim {}", manifest.len(), manifest.class_count(), manifest.dim());
    let outcomes = distill(&manifest, config)?;
    let distilled = distilled_manifest(&outcomes, config);
    let summary = summarize(&outcomes, config);

    let staging = staging_dir(&config.out);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    let written = write_outputs(&staging, &manifest, &outcomes, &distilled, &summary)
        .and_then(|_| move_tree(&staging, &config.out));
    let _ = fs::remove_dir_all(&staging);
    written?;
    log::info!("wrote {} picks to {}", distilled.total_picks(), config.out.display());
    Ok(RunReport { distilled, summary, out: config.out.clone() })
}
