//! Similarity graph over scans, τ-threshold clustering and the manual edit
//! overlay.
//!
//! Edges carry same-die probabilities. Clustering keeps edges with
//! `p >= tau` and takes connected components. Expert edits live in an overlay
//! next to the probabilities: a forced link always connects its endpoints, a
//! forced cut always separates them (as far as that edge is concerned), and
//! clearing an edit restores the probability-driven behaviour.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DiegraphError {
    #[error("pair ({0}, {1}) appears more than once")]
    DuplicatePair(String, String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("node {0:?} listed more than once")]
    DuplicateNode(String),
    #[error("a pair needs two distinct nodes, got {0:?} twice")]
    SelfPair(String),
    #[error("probability {p} for ({a}, {b}) is outside [0, 1]")]
    InvalidProbability { a: String, b: String, p: f64 },
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Canonical undirected key: the lexicographically smaller id first.
pub type PairKey = (String, String);

pub fn pair_key(a: &str, b: &str) -> PairKey {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edit {
    ForcedLink,
    ForcedCut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditAction {
    ForcedLink,
    ForcedCut,
    Clear,
}

impl From<Edit> for EditAction {
    fn from(e: Edit) -> Self {
        match e {
            Edit::ForcedLink => EditAction::ForcedLink,
            Edit::ForcedCut => EditAction::ForcedCut,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayEntry {
    pub edit: Edit,
    pub author: String,
    /// Seconds since the Unix epoch.
    pub ts: u64,
}

/// One accepted mutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    /// Graph version after the mutation.
    pub version: u64,
    pub a: String,
    pub b: String,
    pub action: EditAction,
    pub author: String,
    pub ts: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityGraph {
    nodes: BTreeSet<String>,
    edges: BTreeMap<PairKey, f64>,
    overlay: BTreeMap<PairKey, OverlayEntry>,
    version: u64,
    journal: Vec<JournalEntry>,
}

impl SimilarityGraph {
    /// Graph over `roster` with one edge per `(a, b, p)`. Missing pairs are
    /// simply unlinked.
    pub fn build<I, S>(roster: &[S], edges: I) -> Result<Self, DiegraphError>
    where
        I: IntoIterator<Item = (String, String, f64)>,
        S: AsRef<str>,
    {
        let mut nodes = BTreeSet::new();
        for id in roster {
            if !nodes.insert(id.as_ref().to_string()) {
                return Err(DiegraphError::DuplicateNode(id.as_ref().to_string()));
            }
        }
        let mut g = Self {
            nodes,
            ..Self::default()
        };
        for (a, b, p) in edges {
            g.check_pair(&a, &b)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(DiegraphError::InvalidProbability { a, b, p });
            }
            let key = pair_key(&a, &b);
            if g.edges.insert(key.clone(), p).is_some() {
                return Err(DiegraphError::DuplicatePair(key.0, key.1));
            }
        }
        Ok(g)
    }

    fn check_pair(&self, a: &str, b: &str) -> Result<(), DiegraphError> {
        for id in [a, b] {
            if !self.nodes.contains(id) {
                return Err(DiegraphError::UnknownNode(id.to_string()));
            }
        }
        if a == b {
            return Err(DiegraphError::SelfPair(a.to_string()));
        }
        Ok(())
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains(id)
    }

    pub fn edges(&self) -> impl ExactSizeIterator<Item = (&str, &str, f64)> {
        self.edges.iter().map(|((a, b), &p)| (a.as_str(), b.as_str(), p))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn probability(&self, a: &str, b: &str) -> Option<f64> {
        self.edges.get(&pair_key(a, b)).copied()
    }

    pub fn overlay(&self) -> impl ExactSizeIterator<Item = (&str, &str, &OverlayEntry)> {
        self.overlay.iter().map(|((a, b), e)| (a.as_str(), b.as_str(), e))
    }

    pub fn overlay_entry(&self, a: &str, b: &str) -> Option<&OverlayEntry> {
        self.overlay.get(&pair_key(a, b))
    }

    /// Incremented by every effective mutation.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    /// Neighbours of `id` with their probability, highest first (ties by id).
    pub fn neighbors(&self, id: &str) -> Result<Vec<(String, f64)>, DiegraphError> {
        if !self.nodes.contains(id) {
            return Err(DiegraphError::UnknownNode(id.to_string()));
        }
        let mut out: Vec<(String, f64)> = self
            .edges
            .iter()
            .filter_map(|((a, b), &p)| {
                if a == id {
                    Some((b.clone(), p))
                } else if b == id {
                    Some((a.clone(), p))
                } else {
                    None
                }
            })
            .collect();
        out.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
        Ok(out)
    }

    /// Sets or clears the overlay for a pair and returns the graph version.
    /// Re-applying the edit already in place (or clearing an absent one)
    /// changes nothing and is not journaled.
    pub fn apply_edit(
        &mut self,
        a: &str,
        b: &str,
        action: EditAction,
        author: &str,
        ts: u64,
    ) -> Result<u64, DiegraphError> {
        self.check_pair(a, b)?;
        let key = pair_key(a, b);
        let current = self.overlay.get(&key).map(|e| e.edit);
        let changed = match action {
            EditAction::Clear => self.overlay.remove(&key).is_some(),
            EditAction::ForcedLink | EditAction::ForcedCut => {
                let edit = if action == EditAction::ForcedLink {
                    Edit::ForcedLink
                } else {
                    Edit::ForcedCut
                };
                if current == Some(edit) {
                    false
                } else {
                    self.overlay.insert(
                        key.clone(),
                        OverlayEntry {
                            edit,
                            author: author.to_string(),
                            ts,
                        },
                    );
                    true
                }
            }
        };
        if changed {
            self.version += 1;
            self.journal.push(JournalEntry {
                version: self.version,
                a: key.0,
                b: key.1,
                action,
                author: author.to_string(),
                ts,
            });
        }
        Ok(self.version)
    }

    /// Replaces or inserts an edge probability (e.g. after rescoring a pair).
    /// Overlay entries are untouched.
    pub fn set_probability(&mut self, a: &str, b: &str, p: f64) -> Result<u64, DiegraphError> {
        self.check_pair(a, b)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(DiegraphError::InvalidProbability {
                a: a.to_string(),
                b: b.to_string(),
                p,
            });
        }
        self.edges.insert(pair_key(a, b), p);
        self.version += 1;
        Ok(self.version)
    }

    fn node_positions(&self) -> BTreeMap<&str, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
    }

    /// Edge list as node positions: forced links, and unforced edges with
    /// their probability (cut edges dropped).
    fn retained_inputs(&self) -> (Vec<(usize, usize)>, Vec<(usize, usize, f64)>) {
        let pos = self.node_positions();
        let forced = self
            .overlay
            .iter()
            .filter(|(_, e)| e.edit == Edit::ForcedLink)
            .map(|((a, b), _)| (pos[a.as_str()], pos[b.as_str()]))
            .collect();
        let free = self
            .edges
            .iter()
            .filter(|(k, _)| !self.overlay.contains_key(*k))
            .map(|((a, b), &p)| (pos[a.as_str()], pos[b.as_str()], p))
            .collect();
        (forced, free)
    }

    /// Whether the a–b link survives at `tau`, with overlay edits dominating.
    pub fn is_retained(&self, a: &str, b: &str, tau: f64) -> bool {
        let key = pair_key(a, b);
        match self.overlay.get(&key).map(|e| e.edit) {
            Some(Edit::ForcedLink) => true,
            Some(Edit::ForcedCut) => false,
            None => self.edges.get(&key).is_some_and(|&p| p >= tau),
        }
    }
}

/// Functional form of [`SimilarityGraph::apply_edit`]: returns the edited
/// copy and leaves `graph` untouched.
pub fn apply_edit(
    graph: &SimilarityGraph,
    a: &str,
    b: &str,
    action: EditAction,
    author: &str,
    ts: u64,
) -> Result<SimilarityGraph, DiegraphError> {
    let mut g = graph.clone();
    g.apply_edit(a, b, action, author, ts)?;
    Ok(g)
}

/// Disjoint sets with union by size.
#[derive(Debug, Clone)]
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    components: usize,
    largest: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            components: n,
            largest: usize::from(n > 0),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.largest = self.largest.max(self.size[ra]);
        self.components -= 1;
    }
}

/// Assignment of every node to a cluster. Ids are dense from 0 and ordered
/// by each cluster's smallest member id.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    assignment: BTreeMap<String, usize>,
    /// Threshold that produced the clustering, when known.
    pub tau: Option<f64>,
}

impl Clustering {
    /// Builds a clustering from arbitrary labels, renumbering them by
    /// smallest member id.
    pub fn from_labels<I>(labels: I, tau: Option<f64>) -> Result<Self, DiegraphError>
    where
        I: IntoIterator<Item = (String, usize)>,
    {
        let mut raw = BTreeMap::new();
        for (id, label) in labels {
            if raw.insert(id.clone(), label).is_some() {
                return Err(DiegraphError::DuplicateNode(id));
            }
        }
        let mut renumber: BTreeMap<usize, usize> = BTreeMap::new();
        let assignment = raw
            .into_iter()
            .map(|(id, label)| {
                let next = renumber.len();
                let dense = *renumber.entry(label).or_insert(next);
                (id, dense)
            })
            .collect();
        Ok(Self { assignment, tau })
    }

    pub fn assignment(&self) -> &BTreeMap<String, usize> {
        &self.assignment
    }

    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.assignment.values().max().map_or(0, |m| m + 1)
    }

    /// Members of each cluster, by cluster id, members sorted.
    pub fn clusters(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.n_clusters()];
        for (id, &c) in &self.assignment {
            out[c].push(id.clone());
        }
        out
    }

    /// Labels in sorted-id order, for the evaluation metrics.
    pub fn labels(&self) -> Vec<usize> {
        self.assignment.values().copied().collect()
    }
}

/// Connected components of the links retained at `tau`.
pub fn cluster(graph: &SimilarityGraph, tau: f64) -> Clustering {
    let n = graph.nodes.len();
    let (forced, free) = graph.retained_inputs();
    let mut uf = UnionFind::new(n);
    for (a, b) in forced {
        uf.union(a, b);
    }
    for (a, b, p) in free {
        if p >= tau {
            uf.union(a, b);
        }
    }
    let mut ids: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut assignment = BTreeMap::new();
    // Nodes iterate in sorted order, so the first member seen of each
    // component is its smallest id.
    for (i, node) in graph.nodes.iter().enumerate() {
        let root = uf.find(i);
        let id = *ids[root].get_or_insert_with(|| {
            next += 1;
            next - 1
        });
        assignment.insert(node.clone(), id);
    }
    Clustering {
        assignment,
        tau: Some(tau),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub clusters: usize,
    pub largest: usize,
}

/// Cluster count and largest cluster size for each threshold, in the order
/// given. Edges are merged once, from the highest threshold down, so the
/// whole sweep costs a single sort plus near-linear union-find work.
pub fn sweep_tau(graph: &SimilarityGraph, taus: &[f64]) -> Vec<SweepPoint> {
    let n = graph.nodes.len();
    let (forced, mut free) = graph.retained_inputs();
    free.sort_by(|x, y| y.2.total_cmp(&x.2));
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&i, &j| taus[j].total_cmp(&taus[i]));

    let mut uf = UnionFind::new(n);
    for (a, b) in forced {
        uf.union(a, b);
    }
    let mut out = vec![
        SweepPoint {
            tau: 0.0,
            clusters: 0,
            largest: 0
        };
        taus.len()
    ];
    let mut next_edge = 0;
    for i in order {
        let tau = taus[i];
        while next_edge < free.len() && free[next_edge].2 >= tau {
            uf.union(free[next_edge].0, free[next_edge].1);
            next_edge += 1;
        }
        out[i] = SweepPoint {
            tau,
            clusters: uf.components,
            largest: uf.largest,
        };
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = DiegraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(DiegraphError::Malformed(format!("unknown export format {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ClusterDoc {
    tau: Option<f64>,
    clusters: Vec<ClusterEntry>,
}

#[derive(Serialize, Deserialize)]
struct ClusterEntry {
    id: usize,
    members: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ClusterRow {
    scan_id: String,
    cluster_id: usize,
}

/// Clusters by id, members sorted. CSV is `scan_id,cluster_id`; JSON is
/// `{"tau": .., "clusters": [{"id": .., "members": [..]}]}`.
pub fn export_clusters(clustering: &Clustering, format: ExportFormat) -> Result<String, DiegraphError> {
    match format {
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["scan_id", "cluster_id"])?;
            for (c, members) in clustering.clusters().iter().enumerate() {
                for m in members {
                    w.write_record([m.as_str(), &c.to_string()])?;
                }
            }
            let bytes = w.into_inner().map_err(|e| DiegraphError::Io(e.into_error()))?;
            String::from_utf8(bytes).map_err(|e| DiegraphError::Malformed(e.to_string()))
        }
        ExportFormat::Json => {
            let doc = ClusterDoc {
                tau: clustering.tau,
                clusters: clustering
                    .clusters()
                    .into_iter()
                    .enumerate()
                    .map(|(id, members)| ClusterEntry { id, members })
                    .collect(),
            };
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            Ok(s)
        }
    }
}

/// Reads either export format back. Labels are renumbered by smallest member.
pub fn import_clusters<R: Read>(input: R, format: ExportFormat) -> Result<Clustering, DiegraphError> {
    match format {
        ExportFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(input);
            let headers = rdr.headers()?.clone();
            if headers.iter().collect::<Vec<_>>() != ["scan_id", "cluster_id"] {
                return Err(DiegraphError::Malformed(format!("unexpected header {headers:?}")));
            }
            let rows = rdr
                .deserialize::<ClusterRow>()
                .map(|r| r.map(|r| (r.scan_id, r.cluster_id)))
                .collect::<Result<Vec<_>, _>>()?;
            Clustering::from_labels(rows, None)
        }
        ExportFormat::Json => {
            let doc: ClusterDoc = serde_json::from_reader(input)?;
            let rows = doc
                .clusters
                .into_iter()
                .flat_map(|c| c.members.into_iter().map(move |m| (m, c.id)));
            Clustering::from_labels(rows, doc.tau)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    version: u64,
    nodes: Vec<String>,
    edges: Vec<EdgeDoc>,
    overlay: Vec<OverlayDoc>,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    a: String,
    b: String,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct OverlayDoc {
    a: String,
    b: String,
    edit: Edit,
    author: String,
    ts: u64,
}

impl SimilarityGraph {
    /// The persisted document. Journal entries are kept separately.
    pub fn to_json(&self) -> Result<String, DiegraphError> {
        let doc = GraphDoc {
            version: self.version,
            nodes: self.nodes.iter().cloned().collect(),
            edges: self
                .edges
                .iter()
                .map(|((a, b), &p)| EdgeDoc {
                    a: a.clone(),
                    b: b.clone(),
                    p,
                })
                .collect(),
            overlay: self
                .overlay
                .iter()
                .map(|((a, b), e)| OverlayDoc {
                    a: a.clone(),
                    b: b.clone(),
                    edit: e.edit,
                    author: e.author.clone(),
                    ts: e.ts,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_json_value(&self) -> Result<serde_json::Value, DiegraphError> {
        Ok(serde_json::from_str(&self.to_json()?)?)
    }

    pub fn from_json(text: &str) -> Result<Self, DiegraphError> {
        let doc: GraphDoc = serde_json::from_str(text)?;
        let mut g = SimilarityGraph::build(&doc.nodes, doc.edges.into_iter().map(|e| (e.a, e.b, e.p)))?;
        for o in doc.overlay {
            g.check_pair(&o.a, &o.b)?;
            let key = pair_key(&o.a, &o.b);
            let entry = OverlayEntry {
                edit: o.edit,
                author: o.author,
                ts: o.ts,
            };
            if g.overlay.insert(key.clone(), entry).is_some() {
                return Err(DiegraphError::DuplicatePair(key.0, key.1));
            }
        }
        g.version = doc.version;
        Ok(g)
    }

    /// Journal as JSON lines, one entry per line.
    pub fn write_journal<W: Write>(&self, mut out: W) -> Result<(), DiegraphError> {
        for e in &self.journal {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_journal<R: BufRead>(input: R) -> Result<Vec<JournalEntry>, DiegraphError> {
        let mut out = Vec::new();
        for line in input.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    /// Restores a journal previously written next to this graph's document.
    pub fn attach_journal(&mut self, journal: Vec<JournalEntry>) {
        self.journal = journal;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(nodes: &[&str], edges: &[(&str, &str, f64)]) -> SimilarityGraph {
        SimilarityGraph::build(nodes, edges.iter().map(|&(a, b, p)| (a.to_string(), b.to_string(), p))).unwrap()
    }

    fn groups(c: &Clustering) -> Vec<Vec<String>> {
        c.clusters()
    }

    #[test]
    fn triangle_and_duplicates() {
        let t = g(&["a", "b", "c"], &[("a", "b", 0.1), ("b", "c", 0.2), ("a", "c", 0.3)]);
        assert_eq!(t.edge_count(), 3);
        let dup = SimilarityGraph::build(
            &["a", "b"],
            vec![("a".into(), "b".into(), 0.5), ("b".into(), "a".into(), 0.6)],
        );
        assert!(matches!(dup, Err(DiegraphError::DuplicatePair(_, _))));
        let unknown = SimilarityGraph::build(&["a"], vec![("a".into(), "z".into(), 0.5)]);
        assert!(matches!(unknown, Err(DiegraphError::UnknownNode(_))));
    }

    #[test]
    fn threshold_examples() {
        let graph = g(&["a", "b", "c", "d"], &[("a", "b", 0.99), ("b", "c", 0.40), ("c", "d", 0.97)]);
        assert_eq!(groups(&cluster(&graph, 0.95)), vec![vec!["a", "b"], vec!["c", "d"]]);
        assert_eq!(cluster(&graph, 0.0).n_clusters(), 1);
        assert_eq!(cluster(&graph, 0.995).n_clusters(), 4);
    }

    #[test]
    fn overlay_dominates_and_clear_restores() {
        let mut graph = g(&["a", "b", "c"], &[("a", "b", 0.99)]);
        let before = cluster(&graph, 0.5);
        graph.apply_edit("a", "b", EditAction::ForcedCut, "expert", 1).unwrap();
        assert_eq!(cluster(&graph, 0.5).n_clusters(), 3);
        graph.apply_edit("c", "a", EditAction::ForcedLink, "expert", 2).unwrap();
        let linked = cluster(&graph, 1.0);
        assert_eq!(linked.cluster_of("a"), linked.cluster_of("c"));
        graph.apply_edit("a", "b", EditAction::Clear, "expert", 3).unwrap();
        graph.apply_edit("a", "c", EditAction::Clear, "expert", 4).unwrap();
        assert_eq!(cluster(&graph, 0.5), before);
        assert_eq!(graph.version(), 4);
        assert_eq!(graph.probability("b", "a"), Some(0.99));
    }

    #[test]
    fn repeated_edit_is_idempotent() {
        let mut graph = g(&["a", "b"], &[("a", "b", 0.2)]);
        graph.apply_edit("a", "b", EditAction::ForcedLink, "x", 1).unwrap();
        let once = graph.clone();
        graph.apply_edit("a", "b", EditAction::ForcedLink, "y", 2).unwrap();
        assert_eq!(graph, once);
        assert!(graph.apply_edit("a", "a", EditAction::ForcedLink, "x", 1).is_err());
        assert!(matches!(
            graph.apply_edit("a", "q", EditAction::ForcedCut, "x", 1),
            Err(DiegraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn sweep_matches_direct_clustering() {
        let graph = g(
            &["a", "b", "c", "d", "e"],
            &[("a", "b", 0.9), ("b", "c", 0.5), ("d", "e", 0.7), ("a", "e", 0.1)],
        );
        let taus = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0, 1.1];
        let sweep = sweep_tau(&graph, &taus);
        for (pt, &tau) in sweep.iter().zip(&taus) {
            let c = cluster(&graph, tau);
            assert_eq!(pt.clusters, c.n_clusters());
            assert_eq!(pt.largest, c.clusters().iter().map(Vec::len).max().unwrap());
        }
        assert!(sweep.windows(2).all(|w| w[0].clusters <= w[1].clusters));
        let single = g(&["x"], &[]);
        assert!(sweep_tau(&single, &taus).iter().all(|p| p.clusters == 1));
    }

    #[test]
    fn export_formats() {
        let c = Clustering::from_labels(
            vec![("L0003D".into(), 7), ("L0001D".into(), 3), ("L0002D".into(), 3)],
            Some(0.95),
        )
        .unwrap();
        let csv = export_clusters(&c, ExportFormat::Csv).unwrap();
        assert_eq!(csv, "scan_id,cluster_id\nL0001D,0\nL0002D,0\nL0003D,1\n");
        let back = import_clusters(csv.as_bytes(), ExportFormat::Csv).unwrap();
        assert_eq!(export_clusters(&back, ExportFormat::Csv).unwrap(), csv);
        let json = export_clusters(&c, ExportFormat::Json).unwrap();
        let back = import_clusters(json.as_bytes(), ExportFormat::Json).unwrap();
        assert_eq!(export_clusters(&back, ExportFormat::Json).unwrap(), json);

        let empty = Clustering::from_labels(Vec::new(), None).unwrap();
        assert_eq!(export_clusters(&empty, ExportFormat::Csv).unwrap(), "scan_id,cluster_id\n");
    }

    #[test]
    fn graph_json_round_trip() {
        let mut graph = g(&["a", "b", "c"], &[("a", "b", 0.123456789), ("b", "c", 0.5)]);
        graph.apply_edit("a", "c", EditAction::ForcedLink, "e", 10).unwrap();
        let text = graph.to_json().unwrap();
        let back = SimilarityGraph::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.version(), 1);
        let mut journal = Vec::new();
        graph.write_journal(&mut journal).unwrap();
        let entries = SimilarityGraph::read_journal(journal.as_slice()).unwrap();
        assert_eq!(entries, graph.journal());
    }

    #[test]
    fn neighbours_sorted_by_probability() {
        let graph = g(&["a", "b", "c", "d"], &[("a", "b", 0.3), ("c", "a", 0.9), ("a", "d", 0.3)]);
        let n = graph.neighbors("a").unwrap();
        assert_eq!(n, vec![("c".into(), 0.9), ("b".into(), 0.3), ("d".into(), 0.3)]);
    }
}
