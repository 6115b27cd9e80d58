use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{AttributeMatrix, MultiplexGraph, RelationalSubgraph};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InjectConfig {
    /// Number of planted cliques.
    pub n_struct: usize,
    pub clique_size: usize,
    /// Number of nodes whose attributes are replaced.
    pub n_attr: usize,
    /// Candidates examined per attribute victim.
    pub candidates: usize,
}

impl InjectConfig {
    /// Splits `total` anomalies about evenly, rounding the structural half up
    /// to whole cliques.
    pub fn with_total(total: usize, clique_size: usize) -> Self {
        let q = clique_size.max(1);
        let n_struct = total.div_ceil(2 * q).min(total / q);
        Self {
            n_struct,
            clique_size,
            n_attr: total.saturating_sub(n_struct * clique_size),
            candidates: 50,
        }
    }

    pub fn total(&self) -> usize {
        self.n_struct * self.clique_size + self.n_attr
    }
}

/// Plants cliques and attribute outliers on previously unlabelled nodes.
///
/// Each clique joins `clique_size` fresh nodes inside one uniformly chosen
/// relation. Each attribute victim takes the attribute row of whichever of
/// `candidates` random other nodes lies farthest from it. The returned labels
/// (also attached to the graph) mark existing and injected anomalies.
pub fn inject_anomalies(
    g: &MultiplexGraph,
    cfg: &InjectConfig,
    rng: &RngStream,
) -> Result<(MultiplexGraph, Vec<u8>)> {
    let n = g.node_count();
    let mut labels = g.labels().map(<[u8]>::to_vec).unwrap_or_else(|| vec![0; n]);
    if cfg.n_struct > 0 && cfg.clique_size < 2 {
        return Err(Error::Config("clique size must be at least 2".into()));
    }
    if cfg.n_attr > 0 && cfg.candidates == 0 {
        return Err(Error::Config("candidate pool must be non-empty".into()));
    }
    let free: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
    let needed = cfg.total();
    if needed > free.len() {
        return Err(Error::InsufficientNodes {
            needed,
            available: free.len(),
        });
    }
    let mut pick_rng = rng.derive("victims").rng();
    let victims: Vec<usize> = sample(&mut pick_rng, free.len(), needed)
        .into_iter()
        .map(|i| free[i])
        .collect();
    let (clique_nodes, attr_nodes) = victims.split_at(cfg.n_struct * cfg.clique_size);

    let mut extra: Vec<Vec<(usize, usize)>> = vec![Vec::new(); g.relation_count()];
    let mut rel_rng = rng.derive("cliques").rng();
    for clique in clique_nodes.chunks(cfg.clique_size) {
        let r = rel_rng.random_range(0..g.relation_count());
        for (a, &u) in clique.iter().enumerate() {
            for &v in &clique[a + 1..] {
                extra[r].push((u, v));
            }
        }
    }
    let relations = g
        .relations()
        .iter()
        .zip(&extra)
        .map(|(rel, add)| {
            if add.is_empty() {
                return Ok(rel.clone());
            }
            let edges: Vec<_> = rel.edges().chain(add.iter().copied()).collect();
            RelationalSubgraph::from_edges(rel.relation_id, rel.name.clone(), n, edges)
        })
        .collect::<Result<Vec<_>>>()?;

    let x = g.attributes().matrix();
    let mut out = x.clone();
    let mut cand_rng = rng.derive("attributes").rng();
    for &v in attr_nodes {
        let pool = cfg.candidates.min(n - 1);
        let farthest = sample(&mut cand_rng, n - 1, pool)
            .into_iter()
            .map(|j| if j >= v { j + 1 } else { j })
            .map(|j| {
                let d: f64 = x
                    .row(v)
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                (j, d)
            })
            .fold(None, |best: Option<(usize, f64)>, (j, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((j, d)),
            })
            .map(|(j, _)| j);
        if let Some(j) = farthest {
            let row = x.row(j).to_vec();
            out.row_mut(v).copy_from_slice(&row);
        }
    }

    for &v in &victims {
        labels[v] = 1;
    }
    let injected = g
        .clone()
        .with_relations(relations)?
        .with_attributes(AttributeMatrix::new(out)?)?
        .with_labels(Some(labels.clone()))?;
    Ok((injected, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SbmConfig;

    fn base() -> MultiplexGraph {
        SbmConfig {
            nodes: 120,
            ..SbmConfig::default()
        }
        .generate(4)
        .unwrap()
    }

    #[test]
    fn split_defaults() {
        let c = InjectConfig::with_total(25, 5);
        assert_eq!((c.n_struct, c.n_attr), (3, 10));
        let c = InjectConfig::with_total(300, 5);
        assert_eq!((c.n_struct, c.n_attr), (30, 150));
        assert_eq!(c.total(), 300);
    }

    #[test]
    fn nothing_injected() {
        let g = base();
        let cfg = InjectConfig {
            n_struct: 0,
            clique_size: 5,
            n_attr: 0,
            candidates: 50,
        };
        let (h, labels) = inject_anomalies(&g, &cfg, &RngStream::new(1, "inject")).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        assert_eq!(h.relations(), g.relations());
        assert_eq!(h.attributes(), g.attributes());
    }

    #[test]
    fn one_clique_adds_its_missing_edges() {
        let g = base();
        let cfg = InjectConfig {
            n_struct: 1,
            clique_size: 5,
            n_attr: 0,
            candidates: 50,
        };
        let (h, labels) = inject_anomalies(&g, &cfg, &RngStream::new(2, "inject")).unwrap();
        let members: Vec<usize> = (0..g.node_count()).filter(|&i| labels[i] == 1).collect();
        assert_eq!(members.len(), 5);
        let r = (0..2)
            .find(|&r| h.relation(r).edge_count() != g.relation(r).edge_count())
            .unwrap();
        let existing = members
            .iter()
            .enumerate()
            .flat_map(|(a, &u)| members[a + 1..].iter().map(move |&v| (u, v)))
            .filter(|&(u, v)| g.relation(r).has_edge(u, v))
            .count();
        assert_eq!(
            h.relation(r).edge_count() - g.relation(r).edge_count(),
            10 - existing
        );
        assert!(members.iter().all(|&u| members
            .iter()
            .all(|&v| u == v || h.relation(r).has_edge(u, v))));
    }

    #[test]
    fn bookkeeping_and_positions() {
        let g = base();
        let cfg = InjectConfig {
            n_struct: 4,
            clique_size: 5,
            n_attr: 15,
            candidates: 50,
        };
        let (h, labels) = inject_anomalies(&g, &cfg, &RngStream::new(3, "inject")).unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 35);
        let (x0, x1) = (g.attributes().matrix(), h.attributes().matrix());
        for (i, &label) in labels.iter().enumerate() {
            if x0.row(i) != x1.row(i) {
                assert_eq!(label, 1);
            }
            for r in 0..2 {
                if h.relation(r).neighbors(i) != g.relation(r).neighbors(i) {
                    assert_eq!(label, 1);
                }
            }
        }
    }

    #[test]
    fn too_many_victims() {
        let g = base();
        let cfg = InjectConfig {
            n_struct: 30,
            clique_size: 5,
            n_attr: 0,
            candidates: 50,
        };
        assert!(matches!(
            inject_anomalies(&g, &cfg, &RngStream::new(1, "inject")),
            Err(Error::InsufficientNodes {
                needed: 150,
                available: 120
            })
        ));
    }
}
