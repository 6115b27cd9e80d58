//! Community multiplex graphs with Gaussian attributes, for tests and demos.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{AttributeMatrix, MultiplexGraph, RelationalSubgraph};
use crate::numerics::{DenseMatrix, RngStream};

/// Expected within- and across-community degree of one relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationDegrees {
    pub within: f64,
    pub across: f64,
}

/// Stochastic block model shared by every relation; each relation has its
/// own densities. Attributes are community centres plus isotropic noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmConfig {
    pub nodes: usize,
    pub communities: usize,
    pub feature_dim: usize,
    pub relations: Vec<RelationDegrees>,
    /// Standard deviation of community centres.
    pub center_scale: f64,
    /// Standard deviation of per-node noise around the centre.
    pub noise: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            communities: 5,
            feature_dim: 16,
            relations: vec![
                RelationDegrees {
                    within: 6.0,
                    across: 1.0,
                },
                RelationDegrees {
                    within: 3.0,
                    across: 1.5,
                },
            ],
            center_scale: 1.0,
            noise: 0.5,
        }
    }
}

impl SbmConfig {
    pub fn generate(&self, seed: u64) -> Result<MultiplexGraph> {
        let n = self.nodes;
        if n < 2 || self.communities == 0 || self.communities > n || self.feature_dim == 0 {
            return Err(Error::Config(
                "synthetic graph needs n >= 2 and 1 <= communities <= n".into(),
            ));
        }
        if self.relations.is_empty() {
            return Err(Error::Config(
                "synthetic graph needs at least one relation".into(),
            ));
        }
        let root = RngStream::new(seed, "sbm");
        let community: Vec<usize> = (0..n).map(|i| i % self.communities).collect();
        let size = n as f64 / self.communities as f64;

        let mut relations = Vec::with_capacity(self.relations.len());
        for (r, deg) in self.relations.iter().enumerate() {
            let p_in = (deg.within / (size - 1.0).max(1.0)).min(1.0);
            let p_out = (deg.across / (n as f64 - size).max(1.0)).min(1.0);
            let mut rng = root.derive(format!("relation={r}")).rng();
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    let p = if community[u] == community[v] {
                        p_in
                    } else {
                        p_out
                    };
                    if rng.random_bool(p) {
                        edges.push((u, v));
                    }
                }
            }
            relations.push(RelationalSubgraph::from_edges(
                r,
                format!("relation{r}"),
                n,
                edges,
            )?);
        }

        let f = self.feature_dim;
        let centers =
            Normal::new(0.0, self.center_scale).map_err(|e| Error::Config(e.to_string()))?;
        let noise = Normal::new(0.0, self.noise).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = root.derive("features").rng();
        let mu: Vec<f64> = (0..self.communities * f)
            .map(|_| centers.sample(&mut rng))
            .collect();
        let mut x = DenseMatrix::zeros(n, f);
        for (i, &c) in community.iter().enumerate() {
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v = mu[c * f + j] + noise.sample(&mut rng);
            }
        }
        MultiplexGraph::new(relations, AttributeMatrix::new(x)?, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SbmConfig::default();
        let a = cfg.generate(1).unwrap();
        let b = cfg.generate(1).unwrap();
        assert_eq!(a.node_count(), 200);
        assert_eq!(a.relation_count(), 2);
        assert_eq!(a.feature_dim(), 16);
        for r in 0..2 {
            assert_eq!(
                a.relation(r).edges().collect::<Vec<_>>(),
                b.relation(r).edges().collect::<Vec<_>>()
            );
        }
        assert_eq!(a.attributes().matrix(), b.attributes().matrix());
    }

    #[test]
    fn degrees_near_expectation() {
        let g = SbmConfig {
            nodes: 500,
            ..SbmConfig::default()
        }
        .generate(3)
        .unwrap();
        let mean = 2.0 * g.relation(0).edge_count() as f64 / 500.0;
        assert!((mean - 7.0).abs() < 1.0, "mean degree {mean}");
    }
}
