use std::path::PathBuf;

use echodistill_core::config::PipelineConfig;
use echodistill_core::evaluation::{self, PredictionRecord};
use echodistill_core::feature_store::{
    derive_frame_indices_with, load_csv_manifest, load_manifest, save_csv_manifest, save_manifest, Rounding,
};
use echodistill_core::graph_builder::{build_graph_from_features, read_graph_cache, write_graph_cache};
use echodistill_core::infomap::{for_each_set_partition, DetectOptions, DEFAULT_MAX_SWEEPS, DEFAULT_TRIALS};
use echodistill_core::synth::{generate_synthetic, SyntheticSpec};
use echodistill_core::{
    brute_force_optimum, centrality, infomap, pipeline, ClassBounds, ClassGraph, DatasetManifest, EdgeWeighting,
    GraphOptions, Partition, SigmaMode, Topology,
};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(echodistill, EchodistillError, PyValueError);

fn err(e: impl std::fmt::Display) -> PyErr {
    EchodistillError::new_err(e.to_string())
}

fn bounds_arg(bounds: Option<&str>) -> PyResult<ClassBounds> {
    bounds.map_or_else(|| Ok(ClassBounds::default()), |b| b.parse().map_err(err))
}

fn graph_options(knn: &str, sigma: &str, raw_distance: bool) -> PyResult<GraphOptions> {
    let topology: Topology = knn.parse().map_err(err)?;
    let weighting =
        if raw_distance { EdgeWeighting::RawDistance } else { EdgeWeighting::Gaussian(sigma.parse::<SigmaMode>().map_err(err)?) };
    Ok(GraphOptions { topology, weighting })
}

fn partition(graph: &ClassGraph, assignment: Vec<usize>) -> PyResult<Partition> {
    if assignment.len() != graph.node_count() {
        return Err(err(format!("assignment has {} entries for {} nodes", assignment.len(), graph.node_count())));
    }
    Ok(Partition::from_assignment(graph, assignment))
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Undirected weighted similarity graph over the members of one class.
#[pyclass(name = "Graph", frozen)]
struct PyGraph(ClassGraph);

#[pymethods]
impl PyGraph {
    /// Graph on nodes `0..n` from `(u, v, weight)` triples.
    #[staticmethod]
    fn from_edges(n: usize, edges: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        ClassGraph::from_edges(n, &edges).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (features, ids=None, knn="10", sigma="median", raw_distance=false, class_label=0))]
    fn from_features(
        features: Vec<Vec<f32>>,
        ids: Option<Vec<String>>,
        knn: &str,
        sigma: &str,
        raw_distance: bool,
        class_label: usize,
    ) -> PyResult<Self> {
        let ids = ids.unwrap_or_else(|| (0..features.len()).map(|i| i.to_string()).collect());
        if ids.len() != features.len() {
            return Err(err(format!("{} ids for {} feature vectors", ids.len(), features.len())));
        }
        let rows: Vec<&[f32]> = features.iter().map(Vec::as_slice).collect();
        let options = graph_options(knn, sigma, raw_distance)?;
        build_graph_from_features(class_label, ids, &rows, &options).map(Self).map_err(err)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        read_graph_cache(path).map(Self).map_err(err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_graph_cache(&self.0, path).map_err(err)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    #[getter]
    fn class_label(&self) -> usize {
        self.0.class_label()
    }

    #[getter]
    fn node_ids(&self) -> Vec<String> {
        self.0.node_ids().to_vec()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.0.edges().iter().map(|e| (e.u, e.v, e.weight)).collect()
    }

    #[getter]
    fn total_weight(&self) -> f64 {
        self.0.total_weight()
    }

    fn strengths(&self) -> Vec<f64> {
        self.0.strengths()
    }

    fn components(&self) -> Vec<usize> {
        self.0.components()
    }

    fn __len__(&self) -> usize {
        self.0.node_count()
    }

    fn __repr__(&self) -> String {
        format!("Graph(class={}, nodes={}, edges={})", self.0.class_label(), self.0.node_count(), self.0.edges().len())
    }
}

/// Feature records with their EF labels and class bins.
#[pyclass(name = "Manifest", frozen)]
struct PyManifest(DatasetManifest);

#[pymethods]
impl PyManifest {
    #[staticmethod]
    #[pyo3(signature = (path, bounds=None))]
    fn load(path: PathBuf, bounds: Option<&str>) -> PyResult<Self> {
        load_manifest(path, &bounds_arg(bounds)?).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, bounds=None, dim=None))]
    fn load_csv(path: PathBuf, bounds: Option<&str>, dim: Option<usize>) -> PyResult<Self> {
        load_csv_manifest(path, &bounds_arg(bounds)?, dim).map(Self).map_err(err)
    }

    /// Gaussian blobs per class; returns `(manifest, planted)` where `planted`
    /// is each record's blob index within its class.
    #[staticmethod]
    #[pyo3(signature = (classes=5, clusters=3, points=30, dim=64, spread=1.0, separation=8.0, seed=7, bounds=None))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        classes: usize,
        clusters: usize,
        points: usize,
        dim: usize,
        spread: f64,
        separation: f64,
        seed: u64,
        bounds: Option<&str>,
    ) -> PyResult<(Self, Vec<usize>)> {
        let spec = SyntheticSpec { classes, clusters, points_per_cluster: points, dim, spread, separation, seed };
        let data = generate_synthetic(&spec, &bounds_arg(bounds)?).map_err(err)?;
        Ok((Self(data.manifest), data.planted))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_manifest(&self.0, path).map_err(err)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        save_csv_manifest(&self.0, path).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn video_ids(&self) -> Vec<String> {
        self.0.records().iter().map(|r| r.video_id.clone()).collect()
    }

    #[getter]
    fn efs(&self) -> Vec<f64> {
        self.0.records().iter().map(|r| r.ef).collect()
    }

    #[getter]
    fn class_labels(&self) -> Vec<usize> {
        self.0.records().iter().map(|r| r.class_label).collect()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.0.class_counts()
    }

    fn class_members(&self, class_label: usize) -> Vec<usize> {
        self.0.class_members(class_label)
    }

    fn feature(&self, index: usize) -> PyResult<Vec<f32>> {
        self.0.records().get(index).map(|r| r.feature.clone()).ok_or_else(|| err(format!("no record {index}")))
    }

    #[pyo3(signature = (class_label, knn="10", sigma="median", raw_distance=false))]
    fn graph(&self, class_label: usize, knn: &str, sigma: &str, raw_distance: bool) -> PyResult<PyGraph> {
        let options = graph_options(knn, sigma, raw_distance)?;
        echodistill_core::graph_builder::build_class_graph(&self.0, class_label, &options).map(PyGraph).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Manifest(records={}, dim={}, classes={})", self.0.len(), self.0.dim(), self.0.class_count())
    }
}

#[pyfunction]
fn map_equation(graph: &PyGraph, assignment: Vec<usize>) -> PyResult<f64> {
    infomap::map_equation(&graph.0, &assignment).map_err(err)
}

/// Returns a dict with `assignment`, `codelength`, `one_level_codelength`,
/// `module_count`, `sweeps`, `best_trial` and the accepted-move `trace`.
#[pyfunction]
#[pyo3(signature = (graph, seed=0, trials=DEFAULT_TRIALS, max_sweeps=DEFAULT_MAX_SWEEPS))]
fn detect<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    seed: u64,
    trials: usize,
    max_sweeps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let options = DetectOptions { seed, max_sweeps, trials };
    let d = infomap::detect_communities_traced(&graph.0, &options).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("module_count", d.module_count())?;
    out.set_item("assignment", d.partition.assignment)?;
    out.set_item("codelength", d.partition.codelength)?;
    out.set_item("one_level_codelength", d.one_level_codelength)?;
    out.set_item("sweeps", d.sweeps)?;
    out.set_item("best_trial", d.best_trial)?;
    out.set_item("trace", d.trace)?;
    Ok(out)
}

/// Exhaustive minimum over all set partitions (small graphs only).
#[pyfunction]
fn brute_force(graph: &PyGraph) -> PyResult<(Vec<usize>, f64)> {
    let p = brute_force_optimum(&graph.0).map_err(err)?;
    Ok((p.assignment, p.codelength))
}

#[pyfunction]
fn set_partitions(n: usize) -> PyResult<Vec<Vec<usize>>> {
    if n > 10 {
        return Err(err("set_partitions is limited to n <= 10"));
    }
    let mut all = Vec::new();
    for_each_set_partition(n, |a, _| all.push(a.to_vec()));
    Ok(all)
}

/// `(local, global, combined)` per node.
#[pyfunction]
fn modular_centrality(graph: &PyGraph, assignment: Vec<usize>) -> PyResult<Vec<(f64, f64, f64)>> {
    let p = partition(&graph.0, assignment)?;
    let table = centrality::modular_centrality(&graph.0, &p).map_err(err)?;
    Ok(table.nodes.iter().map(|c| (c.local, c.global, c.combined)).collect())
}

/// Returns the class selection as a dict (`picks`, `warnings`, ...).
#[pyfunction]
#[pyo3(signature = (graph, assignment, vpc, allocation="equal"))]
fn select<'py>(
    py: Python<'py>,
    graph: &PyGraph,
    assignment: Vec<usize>,
    vpc: usize,
    allocation: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let p = partition(&graph.0, assignment)?;
    let table = centrality::modular_centrality(&graph.0, &p).map_err(err)?;
    let s = echodistill_core::select_representatives(&graph.0, &p, &table, vpc, allocation.parse().map_err(err)?)
        .map_err(err)?;
    to_py(py, &s)
}

fn predictions(rows: Vec<(f64, f64)>) -> Vec<PredictionRecord> {
    rows.into_iter().enumerate().map(|(i, (t, p))| PredictionRecord::new(i.to_string(), t, p)).collect()
}

/// Percentage of `(true_ef, predicted_ef)` pairs whose predicted class matches.
#[pyfunction]
#[pyo3(signature = (pairs, bounds=None))]
fn hard_accuracy(pairs: Vec<(f64, f64)>, bounds: Option<&str>) -> PyResult<f64> {
    evaluation::hard_accuracy(&predictions(pairs), &bounds_arg(bounds)?).map_err(err)
}

/// Percentage of predictions inside the true class widened by `tolerance` EF points.
#[pyfunction]
#[pyo3(signature = (pairs, tolerance=2.0, bounds=None))]
fn soft_accuracy(pairs: Vec<(f64, f64)>, tolerance: f64, bounds: Option<&str>) -> PyResult<f64> {
    evaluation::soft_accuracy(&predictions(pairs), &bounds_arg(bounds)?, tolerance).map_err(err)
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(err("labelings differ in length"));
    }
    Ok(evaluation::adjusted_rand_index(&a, &b))
}

#[pyfunction]
#[pyo3(signature = (ef, bounds=None))]
fn ef_to_class(ef: f64, bounds: Option<&str>) -> PyResult<usize> {
    bounds_arg(bounds)?.ef_to_class(ef).map_err(err)
}

/// `(i0, i1, i2, i3, i4)` from annotated ES and ED frames.
#[pyfunction]
#[pyo3(signature = (i0, i2, rounding="half-up"))]
fn frame_indices(i0: i64, i2: i64, rounding: &str) -> PyResult<(i64, i64, i64, i64, i64)> {
    let rounding = match rounding {
        "half-up" => Rounding::HalfUp,
        "half-even" => Rounding::HalfEven,
        other => return Err(err(format!("rounding must be `half-up` or `half-even`, got {other:?}"))),
    };
    let f = derive_frame_indices_with(i0, i2, rounding).map_err(err)?;
    Ok((f.i0, f.i1, f.i2, f.i3, f.i4))
}

/// Runs the whole distillation and writes outputs under `out`. Settings use
/// the config-file keys (`vpc`, `knn`, `manifest`, ...); values may be any
/// type whose `str()` parses. Returns the run summary.
#[pyfunction]
#[pyo3(signature = (config=None, **settings))]
fn run_pipeline<'py>(
    py: Python<'py>,
    config: Option<PathBuf>,
    settings: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = match config {
        Some(path) => PipelineConfig::from_file(path).map_err(err)?,
        None => PipelineConfig::default(),
    };
    if let Some(settings) = settings {
        for (k, v) in settings.iter() {
            let key: String = k.extract()?;
            let value = match v.extract::<bool>() {
                Ok(b) => b.to_string(),
                Err(_) => v.str()?.to_string(),
            };
            cfg.set(&key, &value, None).map_err(err)?;
        }
    }
    let report = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(err)?;
    to_py(py, &report.summary)
}

#[pymodule]
fn echodistill(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", echodistill_core::VERSION)?;
    m.add("EchodistillError", m.py().get_type::<EchodistillError>())?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyManifest>()?;
    m.add_function(wrap_pyfunction!(map_equation, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force, m)?)?;
    m.add_function(wrap_pyfunction!(set_partitions, m)?)?;
    m.add_function(wrap_pyfunction!(modular_centrality, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(hard_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(soft_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(ef_to_class, m)?)?;
    m.add_function(wrap_pyfunction!(frame_indices, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
