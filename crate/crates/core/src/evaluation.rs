//! Hard and boundary-tolerant EF class accuracy, plus run aggregation.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::{ClassBounds, EF_MAX, EF_MIN};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("tolerance must be finite and non-negative, got {0}")]
    Tolerance(f64),
    #[error("record {video_id:?}: {msg}")]
    Record { video_id: String, msg: String },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub true_ef: f64,
    pub predicted_ef: f64,
}

impl PredictionRecord {
    pub fn new(video_id: impl Into<String>, true_ef: f64, predicted_ef: f64) -> Self {
        Self { video_id: video_id.into(), true_ef, predicted_ef }
    }
}

fn clamp_ef(ef: f64) -> f64 {
    ef.clamp(EF_MIN, EF_MAX)
}

fn true_class(bounds: &ClassBounds, true_ef: f64) -> Result<usize, String> {
    bounds.ef_to_class(true_ef).map_err(|e| format!("true EF: {e}"))
}

/// Whether `predicted_ef` lands in the true class's interval widened by
/// `tolerance` on both sides, clipped to [0, 100]. The widened interval is closed.
pub fn soft_correct(predicted_ef: f64, true_ef: f64, bounds: &ClassBounds, tolerance: f64) -> Result<bool, String> {
    let class = true_class(bounds, true_ef)?;
    let iv = bounds.interval(class).expect("class index from the same bounds");
    let lo = (iv.lo - tolerance).max(EF_MIN);
    let hi = (iv.hi + tolerance).min(EF_MAX);
    Ok(lo <= predicted_ef && predicted_ef <= hi)
}

pub fn hard_correct(predicted_ef: f64, true_ef: f64, bounds: &ClassBounds) -> Result<bool, String> {
    let truth = true_class(bounds, true_ef)?;
    let predicted = bounds.ef_to_class(clamp_ef(predicted_ef)).map_err(|e| format!("predicted EF: {e}"))?;
    Ok(predicted == truth)
}

fn accuracy(
    preds: &[PredictionRecord],
    mut correct: impl FnMut(&PredictionRecord, f64) -> Result<bool, String>,
) -> Result<f64, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut hits = 0usize;
    for p in preds {
        if p.predicted_ef.is_nan() {
            return Err(EvalError::Record { video_id: p.video_id.clone(), msg: "predicted EF is NaN".into() });
        }
        let ok = correct(p, clamp_ef(p.predicted_ef))
            .map_err(|msg| EvalError::Record { video_id: p.video_id.clone(), msg })?;
        hits += usize::from(ok);
    }
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// Percentage of predictions whose class matches the true class.
/// Out-of-range predictions are clamped to [0, 100] first.
pub fn hard_accuracy(preds: &[PredictionRecord], bounds: &ClassBounds) -> Result<f64, EvalError> {
    accuracy(preds, |p, pred| hard_correct(pred, p.true_ef, bounds))
}

pub fn soft_accuracy(preds: &[PredictionRecord], bounds: &ClassBounds, tolerance: f64) -> Result<f64, EvalError> {
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(EvalError::Tolerance(tolerance));
    }
    accuracy(preds, |p, pred| soft_correct(pred, p.true_ef, bounds, tolerance))
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for a single run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub n: usize,
}

pub fn aggregate_runs(accuracies: &[f64]) -> Result<RunStats, EvalError> {
    let n = accuracies.len();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let mean = accuracies.iter().sum::<f64>() / n as f64;
    let std_dev = if n > 1 {
        (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(RunStats { accuracies: accuracies.to_vec(), mean, std_dev, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub hard_acc: f64,
    pub soft_acc: f64,
    pub tolerance: f64,
    pub n: usize,
    pub warnings: Vec<String>,
}

/// Scores a prediction set. When `known_ids` is given, every prediction must
/// refer to one of them.
pub fn evaluate(
    preds: &[PredictionRecord],
    bounds: &ClassBounds,
    tolerance: f64,
    known_ids: Option<&HashSet<String>>,
) -> Result<EvaluationReport, EvalError> {
    let mut warnings = Vec::new();
    for p in preds {
        if !(EF_MIN..=EF_MAX).contains(&p.true_ef) {
            return Err(EvalError::Record {
                video_id: p.video_id.clone(),
                msg: format!("true EF {} outside [0, 100]", p.true_ef),
            });
        }
        if let Some(ids) = known_ids {
            if !ids.contains(&p.video_id) {
                return Err(EvalError::Record { video_id: p.video_id.clone(), msg: "not in the manifest".into() });
            }
        }
    }
    let clamped = preds.iter().filter(|p| !(EF_MIN..=EF_MAX).contains(&p.predicted_ef)).count();
    if clamped > 0 {
        warnings.push(format!("{clamped} prediction(s) outside [0, 100] clamped before scoring"));
    }
    Ok(EvaluationReport {
        hard_acc: hard_accuracy(preds, bounds)?,
        soft_acc: soft_accuracy(preds, bounds, tolerance)?,
        tolerance,
        n: preds.len(),
        warnings,
    })
}

/// Reads `video_id,true_ef,predicted_ef` rows; a leading column-name row is skipped.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>, EvalError> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| EvalError::Io { path: path.to_path_buf(), source: e.into() })?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| EvalError::Parse { path: path.to_path_buf(), line: 0, msg: e.to_string() })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.get(0) == Some("video_id") || (row.len() == 1 && row[0].trim().is_empty()) {
            continue;
        }
        let bad = |msg: String| EvalError::Parse { path: path.to_path_buf(), line, msg };
        if row.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", row.len())));
        }
        let num = |i: usize| row[i].trim().parse::<f64>().map_err(|_| bad(format!("record {:?}: bad number {:?}", &row[0], &row[i])));
        out.push(PredictionRecord::new(&row[0], num(1)?, num(2)?));
    }
    Ok(out)
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
/// Two identical single-cluster labelings score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len() as u64;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b() -> ClassBounds {
        ClassBounds::default()
    }

    fn preds(pairs: &[(f64, f64)]) -> Vec<PredictionRecord> {
        pairs.iter().enumerate().map(|(i, &(t, p))| PredictionRecord::new(format!("v{i}"), t, p)).collect()
    }

    #[test]
    fn hard_accuracy_cases() {
        let same = preds(&[(10.0, 10.0), (60.0, 60.0), (80.0, 80.0)]);
        assert_eq!(hard_accuracy(&same, &b()).unwrap(), 100.0);
        assert!(!hard_correct(45.0, 60.0, &b()).unwrap());
        let four_of_five = preds(&[(10.0, 12.0), (35.0, 31.0), (45.0, 41.0), (60.0, 69.0), (60.0, 45.0)]);
        assert_eq!(hard_accuracy(&four_of_five, &b()).unwrap(), 80.0);
        assert!(matches!(hard_accuracy(&[], &b()), Err(EvalError::Empty)));
    }

    #[test]
    fn soft_boundaries_from_worked_example() {
        assert!(soft_correct(48.5, 60.0, &b(), 2.0).unwrap());
        assert!(soft_correct(51.9, 45.0, &b(), 2.0).unwrap());
        assert!(!soft_correct(52.1, 45.0, &b(), 2.0).unwrap());
        assert!(soft_correct(72.0, 60.0, &b(), 2.0).unwrap());
        assert!(!soft_correct(72.01, 60.0, &b(), 2.0).unwrap());
    }

    #[test]
    fn zero_tolerance_matches_hard_off_the_seam() {
        for t in [5.0, 15.0, 29.0, 33.0, 45.0, 60.0, 69.0, 85.0, 100.0] {
            for p in [0.0, 12.5, 29.9, 30.5, 39.9, 40.5, 49.9, 50.5, 69.5, 70.5, 99.0] {
                assert_eq!(soft_correct(p, t, &b(), 0.0).unwrap(), hard_correct(p, t, &b()).unwrap(), "{t} {p}");
            }
        }
        // on the seam the closed widened interval counts 30 as severe
        assert!(soft_correct(30.0, 10.0, &b(), 0.0).unwrap());
        assert!(!hard_correct(30.0, 10.0, &b()).unwrap());
    }

    #[test]
    fn boundary_fixture_is_62_5() {
        // widened intervals at tolerance 2:
        // [0,32] [28,42] [38,52] [48,72] [68,100]
        let fixture = preds(&[
            (60.0, 48.5),  // normal, in
            (45.0, 51.9),  // mild, in
            (45.0, 52.1),  // mild, out
            (75.0, 68.0),  // hyperdynamic, on the closed edge
            (75.0, 67.9),  // hyperdynamic, out
            (10.0, 32.0),  // severe, on the closed edge
            (35.0, 27.5),  // moderate, out
            (100.0, 100.0), // hyperdynamic, top
        ]);
        assert_eq!(soft_accuracy(&fixture, &b(), 2.0).unwrap(), 62.5);
    }

    #[test]
    fn full_tolerance_accepts_everything() {
        let p = preds(&[(5.0, 99.0), (95.0, 0.0), (50.0, 150.0)]);
        assert_eq!(soft_accuracy(&p, &b(), 100.0).unwrap(), 100.0);
        assert!(soft_accuracy(&p, &b(), -1.0).is_err());
    }

    #[test]
    fn out_of_range_predictions_clamped() {
        let p = preds(&[(90.0, 120.0), (10.0, -5.0)]);
        let r = evaluate(&p, &b(), 2.0, None).unwrap();
        assert_eq!(r.hard_acc, 100.0);
        assert_eq!(r.warnings.len(), 1);
        let bad = preds(&[(101.0, 50.0)]);
        assert!(evaluate(&bad, &b(), 2.0, None).is_err());
    }

    #[test]
    fn unknown_ids_rejected() {
        let p = preds(&[(50.0, 50.0)]);
        let ids: HashSet<String> = ["other".to_string()].into();
        assert!(matches!(evaluate(&p, &b(), 2.0, Some(&ids)), Err(EvalError::Record { .. })));
    }

    #[test]
    fn run_stats() {
        let s = aggregate_runs(&[70.0, 70.0, 70.0]).unwrap();
        assert_eq!((s.mean, s.std_dev), (70.0, 0.0));
        let s = aggregate_runs(&[60.0, 80.0]).unwrap();
        assert_eq!(s.mean, 70.0);
        assert!((s.std_dev - 200f64.sqrt()).abs() < 1e-12);
        assert!((s.std_dev - 14.142).abs() < 1e-3);
        let s = aggregate_runs(&[61.47]).unwrap();
        assert_eq!((s.n, s.std_dev), (1, 0.0));
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn ari_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 7, 7]), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]), 1.0);
        // reference value from a contingency-table computation by hand:
        // pairs agreeing = 2, rows = 6, cols = 3, n = 6 -> (2 - 1.2) / (4.5 - 1.2)
        let ari = adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]);
        assert!((ari - 0.8 / 3.3).abs() < 1e-12, "{ari}");
    }

    #[test]
    fn predictions_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "video_id,true_ef,predicted_ef\na,50,48.5\nb,45,52.1\n").unwrap();
        let p = load_predictions(&path).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(soft_accuracy(&p, &b(), 2.0).unwrap(), 50.0);
        std::fs::write(&path, "a,50,x\n").unwrap();
        assert!(load_predictions(&path).unwrap_err().to_string().contains("\"a\""));
    }

    proptest::proptest! {
        #[test]
        fn soft_monotone_and_dominates_hard(
            pairs in proptest::collection::vec((0.0f64..=100.0, -10.0f64..=110.0), 1..60),
            t1 in 0.0f64..20.0,
            dt in 0.0f64..20.0,
        ) {
            let p = preds(&pairs);
            let lo = soft_accuracy(&p, &b(), t1).unwrap();
            let hi = soft_accuracy(&p, &b(), t1 + dt).unwrap();
            proptest::prop_assert!(lo <= hi);
            proptest::prop_assert!(hard_accuracy(&p, &b()).unwrap() <= lo);
            let mut rev = p.clone();
            rev.reverse();
            proptest::prop_assert_eq!(soft_accuracy(&rev, &b(), t1).unwrap(), lo);
        }
    }
}
