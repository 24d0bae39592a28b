//! Per-class representative selection and the distilled manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::centrality::CentralityTable;
use crate::feature_store::{save_manifest_referencing, DatasetManifest, FeatureRecord, StoreError};
use crate::graph_builder::ClassGraph;
use crate::infomap::{FlowModel, InfomapError, Partition};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("videos per class must be at least 1")]
    InvalidVpc,
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error("refusing to write an empty selection")]
    Empty,
    #[error(transparent)]
    Infomap(#[from] InfomapError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    /// Round-robin over communities, one pick per community per round.
    #[default]
    Equal,
    /// Community quotas proportional to size (largest remainder).
    Proportional,
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Allocation::Equal => "equal",
            Allocation::Proportional => "proportional",
        })
    }
}

impl FromStr for Allocation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "equal" => Ok(Allocation::Equal),
            "proportional" => Ok(Allocation::Proportional),
            other => Err(format!("allocation must be `equal` or `proportional`, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    /// Node index in the class graph.
    pub node: usize,
    pub video_id: String,
    pub module_id: usize,
    pub combined: f64,
    pub pick_round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSelection {
    pub class_label: usize,
    pub node_count: usize,
    pub module_count: usize,
    pub codelength: Option<f64>,
    pub picks: Vec<Pick>,
    pub warnings: Vec<String>,
}

impl ClassSelection {
    /// Selection for a class too small to build a graph: every member, in order.
    pub fn all_members(class_label: usize, video_ids: &[String], vpc: usize) -> Self {
        let take = vpc.min(video_ids.len());
        let picks = video_ids
            .iter()
            .take(take)
            .enumerate()
            .map(|(i, id)| Pick { node: i, video_id: id.clone(), module_id: 0, combined: 0.0, pick_round: i })
            .collect();
        let mut warnings = vec![format!(
            "class {class_label} has {} member(s); graph skipped, selected {take}",
            video_ids.len()
        )];
        if vpc > video_ids.len() {
            warnings.push(format!("vpc {vpc} exceeds class size {}; selected all members", video_ids.len()));
        }
        Self {
            class_label,
            node_count: video_ids.len(),
            module_count: usize::from(!video_ids.is_empty()),
            codelength: None,
            picks,
            warnings,
        }
    }

    pub fn video_ids(&self) -> Vec<&str> {
        self.picks.iter().map(|p| p.video_id.as_str()).collect()
    }
}

/// Quantized so that flows equal up to rounding noise compare equal.
fn flow_key(flow: f64) -> i64 {
    (flow * 1e12).round() as i64
}

fn proportional_quotas(sizes: &[usize], target: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * target / total).collect();
    let mut remaining = target - quotas.iter().sum::<usize>();
    // largest remainder first; ties keep community order
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((sizes[i] * target) % total));
    for i in order {
        if remaining == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            remaining -= 1;
        }
    }
    quotas
}

/// Picks `min(vpc, N_c)` nodes.
///
/// Communities are visited in order of decreasing flow (ties: lower module
/// id). Each visit takes the community's best remaining node by combined
/// centrality (ties: smaller video id). Exhausted communities are skipped.
pub fn select_representatives(
    graph: &ClassGraph,
    partition: &Partition,
    centrality: &CentralityTable,
    vpc: usize,
    allocation: Allocation,
) -> Result<ClassSelection, SelectError> {
    if vpc == 0 {
        return Err(SelectError::InvalidVpc);
    }
    let n = graph.node_count();
    if centrality.len() != n {
        return Err(SelectError::Inconsistent(format!(
            "centrality table has {} rows for {n} nodes",
            centrality.len()
        )));
    }
    let flow = FlowModel::new(graph, &partition.assignment)?;
    let modules = flow.module_count();
    let ids = graph.node_ids();

    let mut ranked: Vec<Vec<usize>> = (0..modules).map(|m| partition.members(m)).collect();
    for nodes in &mut ranked {
        nodes.sort_by(|&a, &b| {
            centrality.get(b).combined.total_cmp(&centrality.get(a).combined).then_with(|| ids[a].cmp(&ids[b]))
        });
    }
    let mut order: Vec<usize> = (0..modules).collect();
    order.sort_by_key(|&m| (std::cmp::Reverse(flow_key(flow.module_flow[m])), m));

    let target = vpc.min(n);
    let quotas = match allocation {
        Allocation::Equal => order.iter().map(|&m| ranked[m].len()).collect(),
        Allocation::Proportional => {
            let sizes: Vec<usize> = order.iter().map(|&m| ranked[m].len()).collect();
            proportional_quotas(&sizes, target)
        }
    };

    let mut taken = vec![0usize; modules];
    let mut picks = Vec::with_capacity(target);
    let mut round = 0;
    while picks.len() < target {
        for (slot, &m) in order.iter().enumerate() {
            if picks.len() == target {
                break;
            }
            if taken[m] < quotas[slot] {
                let node = ranked[m][taken[m]];
                taken[m] += 1;
                picks.push(Pick {
                    node,
                    video_id: ids[node].clone(),
                    module_id: m,
                    combined: centrality.get(node).combined,
                    pick_round: round,
                });
            }
        }
        round += 1;
    }

    let mut warnings = Vec::new();
    if vpc > n {
        warnings.push(format!("vpc {vpc} exceeds class size {n}; selected all members"));
    }
    Ok(ClassSelection {
        class_label: graph.class_label(),
        node_count: n,
        module_count: modules,
        codelength: Some(partition.codelength),
        picks,
        warnings,
    })
}

/// The selected subset plus the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledManifest {
    pub vpc: usize,
    pub seed: u64,
    pub tool_version: String,
    pub centrality_scheme: String,
    pub allocation: Allocation,
    pub graph: String,
    pub classes: Vec<ClassSelection>,
    /// Seconds since the Unix epoch; the only field that varies between identical runs.
    pub created_unix: u64,
}

impl DistilledManifest {
    pub fn total_picks(&self) -> usize {
        self.classes.iter().map(|c| c.picks.len()).sum()
    }

    pub fn video_ids(&self) -> Vec<&str> {
        self.classes.iter().flat_map(|c| c.video_ids()).collect()
    }
}

pub fn provenance_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("provenance.json")
}

/// Writes the selected rows (class order, then pick order) in manifest format,
/// pointing at the source feature bytes, plus a `.provenance.json` sidecar.
pub fn emit_distilled_manifest(
    distilled: &DistilledManifest,
    source: &DatasetManifest,
    path: impl AsRef<Path>,
) -> Result<(), SelectError> {
    let path = path.as_ref();
    let ids = distilled.video_ids();
    if ids.is_empty() {
        return Err(SelectError::Empty);
    }
    let subset = source.subset(&ids)?;
    let records: Vec<&FeatureRecord> = subset.records().iter().collect();
    save_manifest_referencing(&records, source.dim(), source.class_count(), path)?;
    let sidecar = provenance_path(path);
    let json = serde_json::to_string_pretty(distilled).expect("manifest serializes");
    fs::write(&sidecar, json + "\n").map_err(|e| SelectError::Io { path: sidecar, source: e })?;
    Ok(())
}
