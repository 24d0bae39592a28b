//! Distills a labelled collection of video feature vectors into a small
//! representative subset per EF class.
//!
//! Per class, a similarity graph is built over feature vectors
//! ([`graph_builder`]), partitioned by minimizing the two-level map equation
//! ([`infomap`]), scored with modular centrality ([`centrality`]) and sampled
//! round-robin across communities ([`selector`]). [`evaluation`] scores EF
//! predictions with hard and boundary-tolerant class accuracy.

pub mod centrality;
pub mod config;
pub mod dot;
pub mod evaluation;
pub mod feature_store;
pub mod graph_builder;
pub mod infomap;
pub mod pipeline;
pub mod selector;
pub mod synth;

pub use centrality::{modular_centrality, CentralityTable, NodeCentrality, CENTRALITY_SCHEME};
pub use feature_store::{ClassBounds, DatasetManifest, FeatureRecord, FrameIndices, Split, StoreError};
pub use graph_builder::{ClassGraph, Edge, EdgeWeighting, GraphError, GraphOptions, SigmaMode, Topology};
pub use infomap::{brute_force_optimum, detect_communities, map_equation, Detection, InfomapError, Partition};
pub use selector::{select_representatives, Allocation, ClassSelection, DistilledManifest, Pick};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
