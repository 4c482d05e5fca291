//! Corpus-level orchestration: manifests, synthetic corpora, the pairwise
//! scoring run with its result cache, registration benchmarks and the HTTP
//! service behind the review UI.

pub mod bench;
pub mod cache;
pub mod manifest;
pub mod pairwise;
pub mod service;
pub mod synth;

use crate::diegraph::DiegraphError;
use crate::evalmetrics::MetricsError;
use crate::geom3d::Geom3dError;
use crate::register::RegisterError;
use crate::simscore::SimScoreError;

pub use bench::{run_registration_benchmark, BenchMethod, BenchPair, BenchmarkResult, MethodBenchmark};
pub use cache::{config_fingerprint, PairCache};
pub use manifest::{infer_face, ingest_directory, CorpusManifest, ManifestEntry, Split};
pub use pairwise::{
    default_workers, pair_histograms, pair_seed, parallel_map, prepare_scans, run_pairwise, run_pairwise_scans, schedule_pairs,
    score_scans, train_from_manifest, train_from_scans, MethodKind, PairFailure, PairwiseConfig, PairwiseReport,
    ScanData, TrainingReport,
};
pub use service::{journal_path, load_graph, persist_graph, router, serve, ServiceOptions, ServiceState};
pub use synth::{
    generate_corpus, generate_synthetic_die, relative_pose, strike_coin, Degradation, DegradationRanges, DiePattern,
    StruckCoin, SynthCorpus, SynthCorpusSpec, SyntheticDieSpec,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("synthetic corpus: {0}")]
    Synthetic(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scan {id}: {source}")]
    Scan {
        id: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Geometry(#[from] Geom3dError),
    #[error(transparent)]
    Register(#[from] RegisterError),
    #[error(transparent)]
    SimScore(#[from] SimScoreError),
    #[error(transparent)]
    Graph(#[from] DiegraphError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub(crate) fn for_scan(id: &str) -> impl FnOnce(PipelineError) -> PipelineError + '_ {
        move |e| PipelineError::Scan {
            id: id.to_string(),
            source: Box::new(e),
        }
    }
}

/// Similarity graph over `roster` from scored pairs. Scans missing from the
/// roster are added; pairs that failed simply have no edge.
pub fn graph_from_scores(
    roster: &[String],
    records: &[crate::simscore::ScoreRecord],
) -> Result<crate::diegraph::SimilarityGraph, PipelineError> {
    let mut nodes: std::collections::BTreeSet<String> = roster.iter().cloned().collect();
    for r in records {
        nodes.insert(r.id_a.clone());
        nodes.insert(r.id_b.clone());
    }
    let nodes: Vec<String> = nodes.into_iter().collect();
    let edges = records.iter().map(|r| (r.id_a.clone(), r.id_b.clone(), r.probability));
    Ok(crate::diegraph::SimilarityGraph::build(&nodes, edges)?)
}

/// Cluster export at `tau`; the service's export endpoint produces the same
/// bytes.
pub fn export_at(
    graph: &crate::diegraph::SimilarityGraph,
    tau: f64,
    format: crate::diegraph::ExportFormat,
) -> Result<String, PipelineError> {
    Ok(crate::diegraph::export_clusters(&crate::diegraph::cluster(graph, tau), format)?)
}
