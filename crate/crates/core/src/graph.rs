//! Multiplex graph data model, manifest ingestion and adjacency normalization.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ini::Ini;
use log::warn;

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// Node attributes, one row per node. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatrix(DenseMatrix);

impl AttributeMatrix {
    pub fn new(values: DenseMatrix) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::InconsistentNodeCount(format!(
                "attribute matrix must be non-empty, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        values.ensure_finite("attributes")?;
        Ok(Self(values))
    }

    pub fn node_count(&self) -> usize {
        self.0.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    /// Per-feature z-scoring; constant columns are centred only.
    pub fn standardized(&self) -> Self {
        let (n, f) = self.0.shape();
        let mut out = self.0.clone();
        for c in 0..f {
            let mean = (0..n).map(|r| self.0.get(r, c)).sum::<f64>() / n as f64;
            let var = (0..n)
                .map(|r| (self.0.get(r, c) - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for r in 0..n {
                out.set(r, c, (self.0.get(r, c) - mean) / sd);
            }
        }
        Self(out)
    }
}

/// One relation of a multiplex graph: an undirected, unweighted adjacency in
/// CSR form with sorted rows and no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationalSubgraph {
    pub relation_id: usize,
    pub name: String,
    node_count: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl RelationalSubgraph {
    /// Builds a symmetric adjacency from an edge list. Duplicates collapse,
    /// reversed pairs are added, and self-loops are dropped.
    pub fn from_edges(
        relation_id: usize,
        name: impl Into<String>,
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); node_count];
        let name = name.into();
        let mut self_loops = 0usize;
        for (u, v) in edges {
            for x in [u, v] {
                if x >= node_count {
                    return Err(Error::IndexOutOfRange {
                        index: x,
                        node_count,
                    });
                }
            }
            if u == v {
                self_loops += 1;
                continue;
            }
            adj[u].insert(v);
            adj[v].insert(u);
        }
        if self_loops > 0 {
            warn!("relation {name}: dropped {self_loops} self-loop(s)");
        }
        let mut indptr = Vec::with_capacity(node_count + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for row in adj {
            indices.extend(row);
            indptr.push(indices.len());
        }
        Ok(Self {
            relation_id,
            name,
            node_count,
            indptr,
            indices,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.indices[self.indptr[v]..self.indptr[v + 1]]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn degree(&self, v: NodeId) -> Result<usize> {
        if v.0 >= self.node_count {
            return Err(Error::IndexOutOfRange {
                index: v.0,
                node_count: self.node_count,
            });
        }
        Ok(self.neighbors(v.0).len())
    }

    /// Undirected edges as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| u < v)
                .map(move |&v| (u, v))
        })
    }

    /// Copy with the given undirected edges removed (either orientation).
    pub fn without_edges(&self, removed: &[(usize, usize)]) -> Self {
        let drop: BTreeSet<(usize, usize)> =
            removed.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        let mut indptr = Vec::with_capacity(self.node_count + 1);
        let mut indices = Vec::with_capacity(self.indices.len());
        indptr.push(0);
        for u in 0..self.node_count {
            for &v in self.neighbors(u) {
                if !drop.contains(&(u.min(v), u.max(v))) {
                    indices.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            relation_id: self.relation_id,
            name: self.name.clone(),
            node_count: self.node_count,
            indptr,
            indices,
        }
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degree matrix of `A + I`.
    pub fn normalize_adjacency(&self) -> SparseMatrix {
        let n = self.node_count;
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|v| 1.0 / ((self.neighbors(v).len() + 1) as f64).sqrt())
            .collect();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(self.indices.len() + n);
        let mut values = Vec::with_capacity(self.indices.len() + n);
        indptr.push(0);
        for u in 0..n {
            let nb = self.neighbors(u);
            let split = nb.partition_point(|&v| v < u);
            let row = nb[..split]
                .iter()
                .copied()
                .chain(std::iter::once(u))
                .chain(nb[split..].iter().copied());
            for v in row {
                indices.push(v);
                values.push(inv_sqrt[u] * inv_sqrt[v]);
            }
            indptr.push(indices.len());
        }
        SparseMatrix::from_csr(n, n, indptr, indices, values)
            .expect("normalized adjacency is well-formed")
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.node_count).all(|u| self.neighbors(u).iter().all(|&v| self.has_edge(v, u)))
    }
}

/// `R` relations over one shared node set and attribute matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplexGraph {
    relations: Vec<RelationalSubgraph>,
    attributes: AttributeMatrix,
    labels: Option<Vec<u8>>,
}

impl MultiplexGraph {
    pub fn new(
        relations: Vec<RelationalSubgraph>,
        attributes: AttributeMatrix,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = attributes.node_count();
        if relations.is_empty() {
            return Err(Error::Config(
                "a multiplex graph needs at least one relation".into(),
            ));
        }
        for (i, r) in relations.iter().enumerate() {
            if r.node_count() != n {
                return Err(Error::InconsistentNodeCount(format!(
                    "relation {} has {} nodes, attributes have {n}",
                    r.name,
                    r.node_count()
                )));
            }
            if r.relation_id != i {
                return Err(Error::Config(format!(
                    "relation {} has id {} at position {i}",
                    r.name, r.relation_id
                )));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::InconsistentNodeCount(format!(
                    "{} labels for {n} nodes",
                    l.len()
                )));
            }
        }
        Ok(Self {
            relations,
            attributes,
            labels,
        })
    }

    pub fn node_count(&self) -> usize {
        self.attributes.node_count()
    }

    pub fn feature_dim(&self) -> usize {
        self.attributes.feature_dim()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn relations(&self) -> &[RelationalSubgraph] {
        &self.relations
    }

    pub fn relation(&self, r: usize) -> &RelationalSubgraph {
        &self.relations[r]
    }

    pub fn attributes(&self) -> &AttributeMatrix {
        &self.attributes
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.node_count() {
                return Err(Error::InconsistentNodeCount(format!(
                    "{} labels for {} nodes",
                    l.len(),
                    self.node_count()
                )));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn with_attributes(mut self, attributes: AttributeMatrix) -> Result<Self> {
        if attributes.node_count() != self.node_count() {
            return Err(Error::InconsistentNodeCount(format!(
                "{} attribute rows for {} nodes",
                attributes.node_count(),
                self.node_count()
            )));
        }
        self.attributes = attributes;
        Ok(self)
    }

    pub fn with_relations(mut self, relations: Vec<RelationalSubgraph>) -> Result<Self> {
        let labels = self.labels.take();
        Self::new(relations, self.attributes, labels)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_pair(path: &Path, line_no: usize, line: &str) -> Result<(usize, usize)> {
    let mut parts = line.split_whitespace();
    let mut next = || -> Result<usize> {
        parts
            .next()
            .ok_or_else(|| Error::parse(path, line_no, "expected two integers"))?
            .parse::<usize>()
            .map_err(|e| Error::parse(path, line_no, e.to_string()))
    };
    let pair = (next()?, next()?);
    if parts.next().is_some() {
        return Err(Error::parse(path, line_no, "trailing tokens"));
    }
    Ok(pair)
}

pub fn read_features(path: &Path) -> Result<AttributeMatrix> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let (header_no, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty feature file"))?;
    let (n, f) = parse_pair(path, header_no, header)?;
    let mut data = Vec::with_capacity(n * f);
    let mut rows = 0;
    for (line_no, line) in lines {
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("bad real {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, line_no, "non-finite attribute"));
            }
            data.push(v);
        }
        if data.len() - before != f {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected {f} values, got {}", data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::InconsistentNodeCount(format!(
            "feature header says {n} rows, file has {rows}"
        )));
    }
    AttributeMatrix::new(DenseMatrix::from_vec(n, f, data)?)
}

pub fn read_edges(path: &Path, node_count: usize) -> Result<Vec<(usize, usize)>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let (u, v) = parse_pair(path, line_no, line)?;
        if u >= node_count || v >= node_count {
            return Err(Error::IndexOutOfRange {
                index: u.max(v),
                node_count,
            });
        }
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn read_labels(path: &Path, node_count: usize) -> Result<Vec<u8>> {
    let text = read_text(path)?;
    let mut labels = vec![0u8; node_count];
    for (line_no, line) in content_lines(&text) {
        let (id, label) = parse_pair(path, line_no, line)?;
        if id >= node_count {
            return Err(Error::IndexOutOfRange {
                index: id,
                node_count,
            });
        }
        if label > 1 {
            return Err(Error::parse(path, line_no, "label must be 0 or 1"));
        }
        labels[id] = label as u8;
    }
    Ok(labels)
}

/// Parsed manifest: paths are resolved relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub nodes: usize,
    pub features: PathBuf,
    pub relations: Vec<(String, PathBuf)>,
    pub labels: Option<PathBuf>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &str| base.join(p);
        let (mut nodes, mut features, mut labels) = (None, None, None);
        let mut relations = Vec::new();
        let ini =
            Ini::load_from_str_noescape(&text).map_err(|e| Error::parse(path, e.line, e.msg))?;
        for (key, value) in ini.iter().flat_map(|(_, props)| props.iter()) {
            match key {
                "nodes" => {
                    nodes = Some(
                        value
                            .parse::<usize>()
                            .map_err(|e| Error::parse(path, 0, format!("nodes: {e}")))?,
                    )
                }
                "features" => features = Some(resolve(value)),
                "labels" => labels = Some(resolve(value)),
                k if k.starts_with("relation.") => {
                    let name = &k["relation.".len()..];
                    if name.is_empty() || relations.iter().any(|(n, _)| n == name) {
                        return Err(Error::parse(
                            path,
                            0,
                            format!("bad or duplicate relation name {name:?}"),
                        ));
                    }
                    relations.push((name.to_string(), resolve(value)));
                }
                other => return Err(Error::parse(path, 0, format!("unknown key {other:?}"))),
            }
        }
        let nodes = nodes.ok_or_else(|| Error::parse(path, 0, "missing nodes="))?;
        let features = features.ok_or_else(|| Error::parse(path, 0, "missing features="))?;
        if relations.is_empty() {
            return Err(Error::parse(
                path,
                0,
                "at least one relation.<name>= entry is required",
            ));
        }
        Ok(Self {
            nodes,
            features,
            relations,
            labels,
        })
    }
}

/// Loads and validates a multiplex graph from a manifest file.
pub fn load_multiplex(manifest_path: &Path) -> Result<MultiplexGraph> {
    let manifest = Manifest::read(manifest_path)?;
    let attributes = read_features(&manifest.features)?;
    if attributes.node_count() != manifest.nodes {
        return Err(Error::InconsistentNodeCount(format!(
            "manifest says {} nodes, feature file has {}",
            manifest.nodes,
            attributes.node_count()
        )));
    }
    let n = manifest.nodes;
    let relations = manifest
        .relations
        .iter()
        .enumerate()
        .map(|(id, (name, p))| {
            RelationalSubgraph::from_edges(id, name.clone(), n, read_edges(p, n)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = manifest
        .labels
        .as_deref()
        .map(|p| read_labels(p, n))
        .transpose()?;
    MultiplexGraph::new(relations, attributes, labels)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Writes `g` as `<dir>/<stem>.ini` plus feature, edge and label files and
/// returns the manifest path. Reals are written in shortest round-trip form.
pub fn write_multiplex(g: &MultiplexGraph, dir: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let x = g.attributes().matrix();
    let mut feat = format!("{} {}\n", x.rows(), x.cols());
    for r in 0..x.rows() {
        let row: Vec<String> = x.row(r).iter().map(|v| v.to_string()).collect();
        feat.push_str(&row.join(" "));
        feat.push('\n');
    }
    let feat_name = format!("{stem}.features.txt");
    write_file(&dir.join(&feat_name), &feat)?;

    let mut manifest = format!("nodes={}\nfeatures={feat_name}\n", g.node_count());
    for rel in g.relations() {
        let mut edges = String::new();
        for (u, v) in rel.edges() {
            let _ = writeln!(edges, "{u} {v}");
        }
        let name = format!("{stem}.{}.edges.txt", rel.name);
        write_file(&dir.join(&name), &edges)?;
        let _ = writeln!(manifest, "relation.{}={name}", rel.name);
    }
    if let Some(labels) = g.labels() {
        let mut text = String::new();
        for (i, l) in labels.iter().enumerate() {
            let _ = writeln!(text, "{i} {l}");
        }
        let name = format!("{stem}.labels.txt");
        write_file(&dir.join(&name), &text)?;
        let _ = writeln!(manifest, "labels={name}");
    }
    let path = dir.join(format!("{stem}.ini"));
    write_file(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(n: usize, edges: &[(usize, usize)]) -> RelationalSubgraph {
        RelationalSubgraph::from_edges(0, "r", n, edges.iter().copied()).unwrap()
    }

    #[test]
    fn symmetric_and_deduplicated() {
        let g = rel(3, &[(0, 1), (1, 2), (1, 0), (0, 1)]);
        assert_eq!(g.edge_count(), 2);
        assert!(g.is_symmetric());
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn self_loops_are_dropped() {
        let g = rel(2, &[(0, 0), (0, 1)]);
        assert_eq!(g.edge_count(), 1);
        assert!(!g.has_edge(0, 0));
    }

    #[test]
    fn out_of_range_edge() {
        let err = RelationalSubgraph::from_edges(0, "r", 3, [(0, 5)]).unwrap_err();
        assert!(matches!(
            err,
            Error::IndexOutOfRange {
                index: 5,
                node_count: 3
            }
        ));
    }

    #[test]
    fn degree_cases() {
        assert_eq!(rel(3, &[(0, 1)]).degree(NodeId(2)).unwrap(), 0);
        let star = rel(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        assert_eq!(star.degree(NodeId(0)).unwrap(), 4);
        let clique: Vec<_> = (0..5)
            .flat_map(|u| (u + 1..5).map(move |v| (u, v)))
            .collect();
        assert_eq!(rel(5, &clique).degree(NodeId(3)).unwrap(), 4);
        assert!(star.degree(NodeId(9)).is_err());
    }

    #[test]
    fn normalization_reference_values() {
        assert_eq!(rel(1, &[]).normalize_adjacency().to_dense().data(), &[1.0]);

        let pair = rel(2, &[(0, 1)]).normalize_adjacency().to_dense();
        for &v in pair.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }

        // Path 0-1-2: degrees with self-loops are 2, 3, 2.
        let path = rel(3, &[(0, 1), (1, 2)]).normalize_adjacency();
        assert!((path.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((path.get(0, 1) - 0.408_248_290_463_863).abs() < 1e-12);
        assert!((path.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(path.get(0, 2), 0.0);
        assert!(path.is_symmetric(0.0));
    }

    #[test]
    fn isolated_node_keeps_unit_diagonal() {
        let a = rel(3, &[(0, 1)]).normalize_adjacency();
        assert_eq!(a.row(2).collect::<Vec<_>>(), vec![(2, 1.0)]);
    }

    #[test]
    fn without_edges_removes_both_directions() {
        let g = rel(3, &[(0, 1), (1, 2)]).without_edges(&[(1, 0)]);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(1, 2)]);
        assert!(g.is_symmetric());
    }
}
