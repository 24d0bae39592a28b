//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use echodistill_core::centrality::modular_centrality;
use echodistill_core::config::PipelineConfig;
use echodistill_core::evaluation::{adjusted_rand_index, soft_accuracy, soft_correct, PredictionRecord};
use echodistill_core::feature_store::{
    derive_frame_indices, load_csv_manifest, load_manifest, save_manifest, ClassBounds, DatasetManifest,
    FeatureRecord, FrameIndices, Split, StoreError, DEFAULT_DIM,
};
use echodistill_core::graph_builder::{build_class_graph, ClassGraph, GraphOptions};
use echodistill_core::infomap::{
    brute_force_optimum, detect_communities, detect_communities_traced, map_equation, DetectOptions,
    DEFAULT_MAX_SWEEPS,
};
use echodistill_core::pipeline::{distill, run_pipeline, DISTILLED_MANIFEST};
use echodistill_core::synth::{generate_synthetic, SyntheticData, SyntheticSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type CheckFn = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn barbell() -> ClassGraph {
    ClassGraph::from_edges(
        6,
        &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0), (2, 3, 1.0)],
    )
    .unwrap()
}

/// Random weighted graph with at least one edge.
fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> ClassGraph {
    let density = rng.random_range(0.2..0.8);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(density) {
                edges.push((u, v, rng.random_range(0.1..5.0)));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1, 1.0));
    }
    ClassGraph::from_edges(n, &edges).unwrap()
}

fn small_random_graphs() -> Vec<ClassGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..60).map(|i| random_graph(&mut rng, 4 + i % 7)).collect()
}

fn planted() -> SyntheticData {
    let spec = SyntheticSpec { classes: 5, clusters: 3, points_per_cluster: 30, dim: 64, spread: 1.0, separation: 8.0, seed: 7 };
    generate_synthetic(&spec, &ClassBounds::default()).unwrap()
}

fn map_equation_matches_brute_force() -> Check {
    let start = Instant::now();
    let graphs = small_random_graphs();
    let mut worst = 0.0f64;
    for (i, g) in graphs.iter().enumerate() {
        let found = detect_communities(g, i as u64, DEFAULT_MAX_SWEEPS).map_err(|e| e.to_string())?;
        let best = brute_force_optimum(g).map_err(|e| e.to_string())?;
        let gap = (found.codelength - best.codelength).abs();
        worst = worst.max(gap);
        ensure(gap <= 1e-9, || {
            format!("graph {i} ({} nodes): detected {} vs optimum {}", g.node_count(), found.codelength, best.codelength)
        })?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!("{} graphs of 4-10 nodes, max gap {worst:.1e} bits, {took:.2?}", graphs.len()))
}

fn analytic_codelengths() -> Check {
    let cycle = ClassGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0)]).unwrap();
    let l_cycle = map_equation(&cycle, &[0; 4]).unwrap();
    ensure(l_cycle == 2.0, || format!("4-cycle one module: {l_cycle}"))?;
    let pair = ClassGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
    let l_pair = map_equation(&pair, &[0, 0]).unwrap();
    ensure(l_pair == 1.0, || format!("2-node one module: {l_pair}"))?;
    let g = barbell();
    let two = map_equation(&g, &[0, 0, 0, 1, 1, 1]).unwrap();
    let one = map_equation(&g, &[0; 6]).unwrap();
    ensure((two - 2.3207).abs() < 1e-4, || format!("barbell two modules: {two}"))?;
    ensure((one - 2.5567).abs() < 1e-4, || format!("barbell one module: {one}"))?;
    // independently recomputed reference values
    ensure((two - 2.32073035683379).abs() < 1e-12 && (one - 2.556656707462823).abs() < 1e-12, || {
        format!("barbell drifted from reference: {two} / {one}")
    })?;
    Ok(format!("4-cycle {l_cycle}, pair {l_pair}, barbell {two:.6} / {one:.6}"))
}

fn trace_graphs() -> Vec<ClassGraph> {
    let mut graphs = small_random_graphs();
    graphs.push(barbell());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for n in [20, 35, 50] {
        graphs.push(random_graph(&mut rng, n));
    }
    let data = planted();
    for c in 0..5 {
        graphs.push(build_class_graph(&data.manifest, c, &GraphOptions::default()).unwrap());
    }
    graphs
}

fn monotone_trace() -> Check {
    let graphs = trace_graphs();
    let mut moves = 0;
    for (i, g) in graphs.iter().enumerate() {
        let d = detect_communities_traced(g, &DetectOptions::new(i as u64, DEFAULT_MAX_SWEEPS)).map_err(|e| e.to_string())?;
        for (k, w) in d.trace.windows(2).enumerate() {
            ensure(w[1] < w[0], || format!("graph {i}: move {k} went {} -> {}", w[0], w[1]))?;
        }
        moves += d.trace.len().saturating_sub(1);
        ensure(d.partition.codelength <= d.one_level_codelength, || {
            format!("graph {i}: final {} above one-module {}", d.partition.codelength, d.one_level_codelength)
        })?;
    }
    Ok(format!("{} graphs, {moves} recorded moves all strictly decreasing", graphs.len()))
}

fn weight_scale_invariance() -> Check {
    let mut graphs = vec![barbell()];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [6, 8, 10, 15, 25, 40] {
        graphs.push(random_graph(&mut rng, n));
    }
    let data = planted();
    graphs.push(build_class_graph(&data.manifest, 0, &GraphOptions::default()).unwrap());
    for (i, g) in graphs.iter().enumerate() {
        let base = detect_communities(g, 11, DEFAULT_MAX_SWEEPS).unwrap();
        for c in [0.1, 1.0, 7.0, 1000.0] {
            let scaled = detect_communities(&g.scaled(c).unwrap(), 11, DEFAULT_MAX_SWEEPS).unwrap();
            ensure(scaled.assignment == base.assignment, || format!("graph {i}: partition changed at c={c}"))?;
            ensure((scaled.codelength - base.codelength).abs() <= 1e-9, || {
                format!("graph {i}: codelength {} vs {} at c={c}", scaled.codelength, base.codelength)
            })?;
        }
    }
    Ok(format!("{} graphs x c in {{0.1, 1, 7, 1000}}", graphs.len()))
}

fn planted_recovery() -> Check {
    let start = Instant::now();
    let data = planted();
    let config = PipelineConfig { vpc: 3, ..Default::default() };
    let outcomes = distill(&data.manifest, &config).map_err(|e| e.to_string())?;
    let mut aris = Vec::new();
    for o in &outcomes {
        let truth = data.class_planted(o.class_label);
        let found = &o.detection.as_ref().ok_or("no detection")?.partition.assignment;
        let ari = adjusted_rand_index(found, &truth);
        ensure(ari >= 0.9, || format!("class {}: ARI {ari}", o.class_label))?;
        aris.push(ari);
        let covered: BTreeSet<usize> = o.selection.picks.iter().map(|p| truth[p.node]).collect();
        ensure(covered.len() == 3, || format!("class {}: picks cover clusters {covered:?}", o.class_label))?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    let min = aris.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!("min ARI {min:.3} over 5 classes, vpc=3 covers every cluster, {took:.2?}"))
}

fn tree_files(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().display().to_string());
            }
        }
    }
    out.sort();
    out
}

fn without_timestamp(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    v.as_object_mut().unwrap().remove("created_unix");
    v
}

fn selection_determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("synthetic.txt");
    save_manifest(&planted().manifest, &input).unwrap();
    let run = |name: &str| {
        let config = PipelineConfig { manifest: Some(input.clone()), vpc: 5, seed: 3, out: dir.path().join(name), ..Default::default() };
        run_pipeline(&config).map_err(|e| e.to_string())
    };
    let first = run("a")?;
    run("b")?;
    ensure(first.distilled.total_picks() == 25, || format!("{} picks", first.distilled.total_picks()))?;
    let rows = fs::read_to_string(dir.path().join("a").join(DISTILLED_MANIFEST)).unwrap().lines().count() - 1;
    ensure(rows == 25, || format!("{rows} manifest rows"))?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let files = tree_files(&a);
    ensure(files == tree_files(&b), || "different file sets".into())?;
    for f in &files {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        if f.ends_with("provenance.json") {
            ensure(without_timestamp(&x) == without_timestamp(&y), || format!("{f} differs beyond its timestamp"))?;
        } else {
            ensure(x == y, || format!("{f} differs"))?;
        }
    }
    // the distilled manifest reloads as a sub-manifest over the same bytes
    let reloaded = load_manifest(a.join(DISTILLED_MANIFEST), &ClassBounds::default()).map_err(|e| e.to_string())?;
    let source = load_manifest(&input, &ClassBounds::default()).unwrap();
    for r in reloaded.records() {
        ensure(source.get(&r.video_id) == Some(r), || format!("{} does not match the source", r.video_id))?;
    }
    Ok(format!("25 rows; {} output files identical across reruns (timestamp aside)", files.len()))
}

fn soft_metric() -> Check {
    let b = ClassBounds::default();
    ensure(soft_correct(48.5, 60.0, &b, 2.0)?, || "48.5 vs Normal should be correct".into())?;
    ensure(!soft_correct(52.1, 45.0, &b, 2.0)?, || "52.1 vs Mild should be incorrect".into())?;
    ensure(soft_correct(51.9, 45.0, &b, 2.0)?, || "51.9 vs Mild should be correct".into())?;
    let fixture: Vec<PredictionRecord> = [
        (60.0, 48.5),
        (45.0, 51.9),
        (45.0, 52.1),
        (75.0, 68.0),
        (75.0, 67.9),
        (10.0, 32.0),
        (35.0, 27.5),
        (100.0, 100.0),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(t, p))| PredictionRecord::new(format!("f{i}"), t, p))
    .collect();
    let acc = soft_accuracy(&fixture, &b, 2.0).map_err(|e| e.to_string())?;
    ensure(acc == 62.5, || format!("boundary fixture scored {acc}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let preds: Vec<PredictionRecord> = (0..200)
        .map(|i| PredictionRecord::new(format!("r{i}"), rng.random_range(0.0..=100.0), rng.random_range(-5.0..=105.0)))
        .collect();
    let mut last = f64::NEG_INFINITY;
    for step in 0..=400 {
        let tol = step as f64 * 0.25;
        let a = soft_accuracy(&preds, &b, tol).map_err(|e| e.to_string())?;
        ensure(a >= last, || format!("accuracy fell from {last} to {a} at tolerance {tol}"))?;
        last = a;
    }
    let full = soft_accuracy(&preds, &b, 100.0).map_err(|e| e.to_string())?;
    ensure(full == 100.0, || format!("tolerance 100 gave {full}"))?;
    Ok("48.5 vs Normal in, 52.1 vs Mild out, fixture 62.5%, 200 records monotone in tolerance, 100% at 100".into())
}

fn frame_indices() -> Check {
    let f = derive_frame_indices(10, 40).map_err(|e| e.to_string())?;
    ensure((f.i1, f.i3, f.i4) == (25, 48, 55), || format!("(10, 40) -> {f:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let i0 = rng.random_range(0..100_000i64);
        let i2 = i0 + rng.random_range(1..10_000i64);
        let k = rng.random_range(0..100_000i64);
        let a = derive_frame_indices(i0, i2).unwrap();
        let b = derive_frame_indices(i0 + k, i2 + k).unwrap();
        let shifted = FrameIndices { i0: a.i0 + k, i1: a.i1 + k, i2: a.i2 + k, i3: a.i3 + k, i4: a.i4 + k };
        ensure(b == shifted, || format!("({i0}, {i2}) shifted by {k}: {b:?} vs {shifted:?}"))?;
    }
    Ok("(10, 40) -> (25, 48, 55); 1000 random shifts equivariant".into())
}

fn modular_centrality_checks() -> Check {
    let g = barbell();
    let best = brute_force_optimum(&g).unwrap();
    let t = modular_centrality(&g, &best).map_err(|e| e.to_string())?;
    for bridge in [2, 3] {
        let m = best.assignment[bridge];
        for other in best.members(m) {
            if other != bridge {
                ensure(t.get(bridge).combined > t.get(other).combined, || {
                    format!("bridge {bridge} not above node {other}")
                })?;
            }
        }
    }
    let mut graphs = trace_graphs();
    let mut nodes = 0;
    graphs.push(g);
    for (i, g) in graphs.iter().enumerate() {
        let p = detect_communities(g, 0, DEFAULT_MAX_SWEEPS).unwrap();
        let t = modular_centrality(g, &p).unwrap();
        for u in 0..g.node_count() {
            let c = t.get(u);
            ensure(c.local + c.global == g.strength(u), || {
                format!("graph {i} node {u}: {} + {} != {}", c.local, c.global, g.strength(u))
            })?;
        }
        nodes += g.node_count();
    }
    Ok(format!("bridge endpoints lead both barbell modules; local+global == strength on {nodes} nodes"))
}

fn manifest_round_trip() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let bounds = ClassBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let splits = [Split::Train, Split::Val, Split::Test];
    let records: Vec<FeatureRecord> = (0..100)
        .map(|i| {
            let feature = (0..DEFAULT_DIM)
                .map(|_| loop {
                    let x = f32::from_bits(rng.random());
                    if x.is_finite() {
                        break x;
                    }
                })
                .collect();
            let ef = rng.random_range(0.0..=100.0);
            FeatureRecord::new(format!("vid_{i:03}"), ef, splits[i % 3], feature, &bounds).unwrap()
        })
        .collect();
    let manifest = DatasetManifest::new(records, DEFAULT_DIM, bounds.clone()).unwrap();
    let path = dir.path().join("m.txt");
    save_manifest(&manifest, &path).map_err(|e| e.to_string())?;
    let back = load_manifest(&path, &bounds).map_err(|e| e.to_string())?;
    ensure(back.dim() == DEFAULT_DIM && back.len() == 100, || "shape changed".into())?;
    for (a, b) in manifest.records().iter().zip(back.records()) {
        let same_bits = a.feature.iter().zip(&b.feature).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same_bits && a.feature.len() == b.feature.len(), || format!("{}: feature bytes differ", a.video_id))?;
        ensure(a.video_id == b.video_id && a.ef == b.ef && a.class_label == b.class_label && a.split == b.split, || {
            format!("{}: fields differ", a.video_id)
        })?;
    }

    // 3071 values where 3072 are expected
    let short = dir.path().join("short.csv");
    let row = |id: &str, n: usize| format!("{id},55,train,{}\n", vec!["0.5"; n].join(","));
    fs::write(&short, row("ok", DEFAULT_DIM) + &row("short", DEFAULT_DIM - 1)).unwrap();
    match load_csv_manifest(&short, &bounds, Some(DEFAULT_DIM)) {
        Err(StoreError::Dimension { video_id, got: 3071, expected: 3072 }) if video_id == "short" => {}
        other => return Err(format!("short feature vector gave {other:?}")),
    }
    // duplicate ids
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let dup = lines[2].replacen("vid_001", "vid_000", 1);
    lines[2] = &dup;
    let dup_path = dir.path().join("dup.txt");
    fs::write(&dup_path, lines.join("\n") + "\n").unwrap();
    match load_manifest(&dup_path, &bounds) {
        Err(StoreError::DuplicateId(id)) if id == "vid_000" => {}
        other => return Err(format!("duplicate id gave {other:?}")),
    }
    Ok("100 records x 3072 floats bit-exact; 3071-length row and duplicate id rejected".into())
}

fn main() {
    let checks: [CheckFn; 10] = [
        ("map equation matches exhaustive search", map_equation_matches_brute_force),
        ("analytic codelengths", analytic_codelengths),
        ("monotone optimizer trace", monotone_trace),
        ("weight-scale invariance", weight_scale_invariance),
        ("planted-cluster recovery", planted_recovery),
        ("selection budget and determinism", selection_determinism),
        ("soft-accuracy fixture", soft_metric),
        ("frame-index arithmetic", frame_indices),
        ("modular centrality", modular_centrality_checks),
        ("manifest round-trip", manifest_round_trip),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} acceptance checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
