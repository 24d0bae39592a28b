use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ClassBounds, StoreError};

/// Length of the concatenated multi-scale motion descriptor (512 + 1024 channels, two directions).
pub const DEFAULT_DIM: usize = 3072;

const FLOAT_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Where a record's feature block lives on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSource {
    pub file: PathBuf,
    pub offset: u64,
}

#[derive(Debug, Clone)]
pub struct FeatureRecord {
    pub video_id: String,
    pub ef: f64,
    pub class_label: usize,
    pub split: Split,
    pub feature: Vec<f32>,
    /// Set when the record was loaded from a binary feature file.
    pub source: Option<FeatureSource>,
}

impl FeatureRecord {
    /// Builds a record, binning `ef` with `bounds`.
    pub fn new(
        video_id: impl Into<String>,
        ef: f64,
        split: Split,
        feature: Vec<f32>,
        bounds: &ClassBounds,
    ) -> Result<Self, StoreError> {
        let video_id = video_id.into();
        let class_label = bounds.ef_to_class(ef).map_err(|e| StoreError::Record {
            video_id: video_id.clone(),
            msg: e.to_string(),
        })?;
        Ok(Self { video_id, ef, class_label, split, feature, source: None })
    }
}

/// Equality ignores `source` and compares feature values bit for bit.
impl PartialEq for FeatureRecord {
    fn eq(&self, other: &Self) -> bool {
        self.video_id == other.video_id
            && self.ef.to_bits() == other.ef.to_bits()
            && self.class_label == other.class_label
            && self.split == other.split
            && self.feature.len() == other.feature.len()
            && self.feature.iter().zip(&other.feature).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    records: Vec<FeatureRecord>,
    dim: usize,
    bounds: ClassBounds,
}

impl DatasetManifest {
    pub fn new(records: Vec<FeatureRecord>, dim: usize, bounds: ClassBounds) -> Result<Self, StoreError> {
        if records.is_empty() {
            return Err(StoreError::Empty);
        }
        if dim == 0 {
            return Err(StoreError::Config("feature dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.video_id.as_str()) {
                return Err(StoreError::DuplicateId(r.video_id.clone()));
            }
            if r.feature.len() != dim {
                return Err(StoreError::Dimension {
                    video_id: r.video_id.clone(),
                    got: r.feature.len(),
                    expected: dim,
                });
            }
            let expected = bounds.ef_to_class(r.ef).map_err(|e| StoreError::Record {
                video_id: r.video_id.clone(),
                msg: e.to_string(),
            })?;
            if expected != r.class_label {
                return Err(StoreError::Record {
                    video_id: r.video_id.clone(),
                    msg: format!("class label {} but EF {} bins to class {expected}", r.class_label, r.ef),
                });
            }
        }
        Ok(Self { records, dim, bounds })
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &ClassBounds {
        &self.bounds
    }

    pub fn class_count(&self) -> usize {
        self.bounds.class_count()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Manifest positions of the records in `class`, in manifest order.
    pub fn class_members(&self, class: usize) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].class_label == class).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for r in &self.records {
            counts[r.class_label] += 1;
        }
        counts
    }

    pub fn get(&self, video_id: &str) -> Option<&FeatureRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    /// Sub-manifest with the given ids, in the order given.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self, StoreError> {
        let index: HashMap<&str, &FeatureRecord> =
            self.records.iter().map(|r| (r.video_id.as_str(), r)).collect();
        let records = ids
            .iter()
            .map(|id| {
                index.get(id.as_ref()).map(|r| (*r).clone()).ok_or_else(|| StoreError::Record {
                    video_id: id.as_ref().to_string(),
                    msg: "not in source manifest".into(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(records, self.dim, self.bounds.clone())
    }
}

fn parse_header(line: &str, path: &Path) -> Result<(usize, usize), StoreError> {
    let err = |msg: String| StoreError::Parse { path: path.to_path_buf(), line: 1, msg };
    let mut dim = None;
    let mut classes = None;
    for part in line.trim().split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| err(format!("expected `dim=<D>,classes=<C>`, got {line:?}")))?;
        let value: usize = value.trim().parse().map_err(|_| err(format!("bad value in {part:?}")))?;
        match key.trim() {
            "dim" => dim = Some(value),
            "classes" => classes = Some(value),
            other => return Err(err(format!("unknown header key {other:?}"))),
        }
    }
    match (dim, classes) {
        (Some(d), Some(c)) => Ok((d, c)),
        _ => Err(err("header must set both dim and classes".into())),
    }
}

fn check_classes(classes: usize, bounds: &ClassBounds, path: &Path) -> Result<(), StoreError> {
    if classes != bounds.class_count() {
        return Err(StoreError::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("header declares {classes} classes but bounds define {}", bounds.class_count()),
        });
    }
    Ok(())
}

fn csv_reader<R: Read>(rdr: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(rdr)
}

fn row_error(path: &Path, line: u64, id: Option<&str>, msg: impl fmt::Display) -> StoreError {
    let msg = match id {
        Some(id) => format!("record {id:?}: {msg}"),
        None => msg.to_string(),
    };
    StoreError::Parse { path: path.to_path_buf(), line, msg }
}

fn parse_ef(text: &str, path: &Path, line: u64, id: &str) -> Result<f64, StoreError> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| row_error(path, line, Some(id), format!("unparseable EF {text:?}")))
}

fn parse_split(text: &str, path: &Path, line: u64, id: &str) -> Result<Split, StoreError> {
    text.parse().map_err(|e| row_error(path, line, Some(id), e))
}

/// Loads a manifest: a `dim=<D>,classes=<C>` line then rows of
/// `video_id,ef,split,feature_file,offset`. Relative feature paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>, bounds: &ClassBounds) -> Result<DatasetManifest, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| StoreError::io(path, e))?;
    let (dim, classes) = parse_header(&header, path)?;
    check_classes(classes, bounds, path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut handles: HashMap<PathBuf, BufReader<File>> = HashMap::new();
    let mut records = Vec::new();
    for row in csv_reader(reader).records() {
        let row = row.map_err(|e| row_error(path, 0, None, e))?;
        let line = row.position().map_or(0, |p| p.line()) + 1;
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.get(0) == Some("video_id") {
            continue;
        }
        let id = row[0].to_string();
        if row.len() != 5 {
            return Err(row_error(path, line, Some(&id), format!("expected 5 fields, got {}", row.len())));
        }
        let ef = parse_ef(&row[1], path, line, &id)?;
        let split = parse_split(&row[2], path, line, &id)?;
        let file = base.join(row[3].trim());
        let offset: u64 = row[4]
            .trim()
            .parse()
            .map_err(|_| row_error(path, line, Some(&id), format!("bad offset {:?}", &row[4])))?;

        if !handles.contains_key(&file) {
            let f = File::open(&file).map_err(|e| StoreError::io(&file, e))?;
            handles.insert(file.clone(), BufReader::new(f));
        }
        let handle = handles.get_mut(&file).expect("handle inserted above");
        let feature = read_block(handle, offset, dim).map_err(|e| {
            row_error(path, line, Some(&id), format!("reading {} at offset {offset}: {e}", file.display()))
        })?;
        let mut record = FeatureRecord::new(id, ef, split, feature, bounds)?;
        record.source = Some(FeatureSource { file: fs::canonicalize(&file).unwrap_or(file), offset });
        records.push(record);
    }
    DatasetManifest::new(records, dim, bounds.clone())
}

fn read_block(handle: &mut BufReader<File>, offset: u64, dim: usize) -> std::io::Result<Vec<f32>> {
    handle.seek(SeekFrom::Start(offset))?;
    let mut bytes = vec![0u8; dim * FLOAT_BYTES as usize];
    handle.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(FLOAT_BYTES as usize)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_block<W: Write>(w: &mut W, feature: &[f32]) -> std::io::Result<()> {
    for x in feature {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn feature_file_for(path: &Path) -> PathBuf {
    path.with_extension("f32")
}

/// Writes `manifest` plus a fresh `<stem>.f32` feature file next to it.
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let records: Vec<&FeatureRecord> = manifest.records.iter().collect();
    write_manifest(&records, manifest.dim, manifest.class_count(), path.as_ref(), false)
}

/// Like [`save_manifest`], but rows whose record has a [`FeatureSource`]
/// point at the original feature bytes instead of copying them. Records
/// without a source are written to a fresh `<stem>.f32`.
pub fn save_manifest_referencing(
    records: &[&FeatureRecord],
    dim: usize,
    classes: usize,
    path: impl AsRef<Path>,
) -> Result<(), StoreError> {
    write_manifest(records, dim, classes, path.as_ref(), true)
}

fn write_manifest(
    records: &[&FeatureRecord],
    dim: usize,
    classes: usize,
    path: &Path,
    reference_sources: bool,
) -> Result<(), StoreError> {
    if records.is_empty() {
        return Err(StoreError::Empty);
    }
    if let Some(r) = records.iter().find(|r| r.feature.len() != dim) {
        return Err(StoreError::Dimension { video_id: r.video_id.clone(), got: r.feature.len(), expected: dim });
    }
    let io = |e| StoreError::io(path, e);
    let feature_path = feature_file_for(path);
    let feature_name = feature_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "features.f32".into());

    let needs_local = records.iter().any(|r| !(reference_sources && r.source.is_some()));
    let mut local = if needs_local {
        let f = File::create(&feature_path).map_err(|e| StoreError::io(&feature_path, e))?;
        Some(BufWriter::new(f))
    } else {
        None
    };
    let mut local_offset = 0u64;

    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "dim={dim},classes={classes}").map_err(io)?;
    let mut rows = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in records {
        let (file, offset) = match (&r.source, reference_sources) {
            (Some(src), true) => (src.file.to_string_lossy().into_owned(), src.offset),
            _ => {
                let w = local.as_mut().expect("local feature file opened");
                write_block(w, &r.feature).map_err(|e| StoreError::io(&feature_path, e))?;
                let at = local_offset;
                local_offset += dim as u64 * FLOAT_BYTES;
                (feature_name.clone(), at)
            }
        };
        rows.write_record([
            r.video_id.as_str(),
            &r.ef.to_string(),
            &r.split.to_string(),
            &file,
            &offset.to_string(),
        ])
        .map_err(|e| StoreError::io(path, e.into()))?;
    }
    rows.flush().map_err(io)?;
    if let Some(mut w) = local {
        w.flush().map_err(|e| StoreError::io(&feature_path, e))?;
    }
    Ok(())
}

/// Loads the all-in-one CSV form `video_id,ef,split,f_0,...,f_{D-1}`.
///
/// An optional `dim=<D>,classes=<C>` line and an optional column-name row may
/// precede the data. Without a header line, `D` is taken from the first row.
pub fn load_csv_manifest(
    path: impl AsRef<Path>,
    bounds: &ClassBounds,
    expected_dim: Option<usize>,
) -> Result<DatasetManifest, StoreError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    let (mut dim, body, line_offset) = match text.split_once('\n') {
        Some((first, rest)) if first.trim_start().starts_with("dim=") => {
            let (d, c) = parse_header(first, path)?;
            check_classes(c, bounds, path)?;
            (Some(d), rest, 1)
        }
        _ => (None, text.as_str(), 0),
    };
    if let (Some(d), Some(e)) = (dim, expected_dim) {
        if d != e {
            return Err(StoreError::Config(format!("CSV declares dim={d}, expected {e}")));
        }
    }
    dim = dim.or(expected_dim);

    let mut records = Vec::new();
    for row in csv_reader(body.as_bytes()).records() {
        let row = row.map_err(|e| row_error(path, 0, None, e))?;
        let line = row.position().map_or(0, |p| p.line()) + line_offset;
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.get(0) == Some("video_id") {
            continue;
        }
        let id = row[0].to_string();
        if row.len() < 3 {
            return Err(row_error(path, line, Some(&id), "expected video_id,ef,split,features..."));
        }
        let got = row.len() - 3;
        let d = *dim.get_or_insert(got);
        if got != d {
            return Err(StoreError::Dimension { video_id: id, got, expected: d });
        }
        let ef = parse_ef(&row[1], path, line, &id)?;
        let split = parse_split(&row[2], path, line, &id)?;
        let feature = row
            .iter()
            .skip(3)
            .map(|t| t.trim().parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| row_error(path, line, Some(&id), format!("bad feature value: {e}")))?;
        records.push(FeatureRecord::new(id, ef, split, feature, bounds)?);
    }
    let dim = dim.ok_or(StoreError::Empty)?;
    DatasetManifest::new(records, dim, bounds.clone())
}

/// Writes the all-in-one CSV form with a column-name row.
pub fn save_csv_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| StoreError::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    let mut header = vec!["video_id".to_string(), "ef".into(), "split".into()];
    header.extend((0..manifest.dim).map(|k| format!("f_{k}")));
    w.write_record(&header).map_err(|e| io(e.into()))?;
    for r in &manifest.records {
        let mut row = vec![r.video_id.clone(), r.ef.to_string(), r.split.to_string()];
        row.extend(r.feature.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
