//! Mask and augmentation planning.
//!
//! Plans are plain value objects. Each `(relation, repeat)` cell draws from
//! its own labelled [`RngStream`], so a plan depends only on the seed and the
//! labels, never on evaluation order.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{MultiplexGraph, RelationalSubgraph};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    /// Fraction of nodes (or edges) hidden per repeat.
    pub mask_ratio: f64,
    /// Number of independent repeats `K`.
    pub repeats: usize,
    /// Negative endpoints sampled per masked edge.
    pub n_neg: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.2,
            repeats: 10,
            n_neg: 5,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!(
                "mask_ratio {} outside [0, 1]",
                self.mask_ratio
            )));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.n_neg == 0 {
            return Err(Error::Config("n_neg must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwrConfig {
    pub restart_prob: f64,
    pub subgraph_size: usize,
    pub max_steps: usize,
}

impl RwrConfig {
    /// `max_steps` defaults to `100 · subgraph_size`.
    pub fn new(restart_prob: f64, subgraph_size: usize) -> Self {
        Self {
            restart_prob,
            subgraph_size,
            max_steps: 100 * subgraph_size,
        }
    }

    pub fn validate(&self, node_count: usize) -> Result<()> {
        if !(self.restart_prob > 0.0 && self.restart_prob <= 1.0) {
            return Err(Error::Config(format!(
                "restart_prob {} outside (0, 1]",
                self.restart_prob
            )));
        }
        if self.subgraph_size == 0 || self.subgraph_size > node_count {
            return Err(Error::Config(format!(
                "subgraph_size {} must be in [1, {node_count}]",
                self.subgraph_size
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

impl Default for RwrConfig {
    fn default() -> Self {
        Self::new(0.15, 8)
    }
}

/// `round(ratio · total)` with halves rounded up.
pub fn target_count(ratio: f64, total: usize) -> usize {
    ((ratio * total as f64) + 0.5).floor().min(total as f64) as usize
}

/// Oriented target edges `(v, u)` with `n_neg` corrupted endpoints `u'` per edge.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeTargets {
    pub edges: Vec<(usize, usize)>,
    /// Row-major `edges.len() × n_neg`.
    pub negatives: Vec<usize>,
    pub n_neg: usize,
    /// Set when some endpoint was adjacent to every other node and its
    /// negatives fell back to uniform draws.
    pub fallback: bool,
}

impl EdgeTargets {
    pub fn negatives_of(&self, e: usize) -> &[usize] {
        &self.negatives[e * self.n_neg..(e + 1) * self.n_neg]
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }
}

/// Node masks per repeat and edge masks per `(relation, repeat)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskPlan {
    /// `node_masks[k]`: masked node set of repeat `k`.
    pub node_masks: Vec<Vec<usize>>,
    /// `edge_masks[r][k]`: masked edges of relation `r`, repeat `k`.
    pub edge_masks: Vec<Vec<EdgeTargets>>,
}

/// One RWR sample: the visited nodes and the relation edges they induce.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Subgraph {
    pub seed: usize,
    /// Sorted ascending.
    pub nodes: Vec<usize>,
    pub targets: EdgeTargets,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentPlan {
    /// `swaps[k]`: `(target, donor)` pairs of repeat `k`.
    pub swaps: Vec<Vec<(usize, usize)>>,
    /// `subgraphs[r][k]`.
    pub subgraphs: Vec<Vec<Subgraph>>,
}

/// `K` uniform node subsets of size `round(r_m · |V|)`, sampled without replacement.
pub fn plan_attribute_masks(
    g: &MultiplexGraph,
    cfg: &MaskConfig,
    rng: &RngStream,
) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let n = g.node_count();
    let count = target_count(cfg.mask_ratio, n);
    Ok((0..cfg.repeats)
        .map(|k| {
            let mut r = rng.derive(format!("attr/k={k}")).rng();
            let mut nodes = index::sample(&mut r, n, count).into_vec();
            nodes.sort_unstable();
            nodes
        })
        .collect())
}

/// Draws `n_neg` endpoints `u'` with `(v, u')` not an edge of `rel`. If `v` is
/// adjacent to every other node, draws uniformly over nodes other than `u` and
/// reports the fallback.
pub fn sample_negatives<R: Rng>(
    rel: &RelationalSubgraph,
    v: usize,
    u: usize,
    n_neg: usize,
    rng: &mut R,
) -> (Vec<usize>, bool) {
    let n = rel.node_count();
    let nb = rel.neighbors(v);
    if nb.len() + 1 >= n {
        let draws = (0..n_neg)
            .map(|_| {
                if n < 2 {
                    return u;
                }
                let d = rng.random_range(0..n - 1);
                if d >= u {
                    d + 1
                } else {
                    d
                }
            })
            .collect();
        return (draws, true);
    }
    if nb.len() * 2 < n {
        let draws = (0..n_neg)
            .map(|_| loop {
                let c = rng.random_range(0..n);
                if c != v && nb.binary_search(&c).is_err() {
                    break c;
                }
            })
            .collect();
        (draws, false)
    } else {
        let pool: Vec<usize> = (0..n)
            .filter(|&c| c != v && nb.binary_search(&c).is_err())
            .collect();
        let draws = (0..n_neg)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect();
        (draws, false)
    }
}

fn edge_targets<R: Rng>(
    rel: &RelationalSubgraph,
    chosen: &[(usize, usize)],
    n_neg: usize,
    rng: &mut R,
) -> EdgeTargets {
    let mut out = EdgeTargets {
        edges: Vec::with_capacity(chosen.len()),
        negatives: Vec::with_capacity(chosen.len() * n_neg),
        n_neg,
        fallback: false,
    };
    for &(a, b) in chosen {
        let (v, u) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        let (negs, fell_back) = sample_negatives(rel, v, u, n_neg, rng);
        out.edges.push((v, u));
        out.negatives.extend(negs);
        out.fallback |= fell_back;
    }
    out
}

/// Per `(r, k)`, `round(r_m · |E^r|)` undirected edges sampled without
/// replacement, each with `n_neg` negatives.
pub fn plan_edge_masks(
    g: &MultiplexGraph,
    cfg: &MaskConfig,
    rng: &RngStream,
) -> Result<Vec<Vec<EdgeTargets>>> {
    cfg.validate()?;
    Ok(g.relations()
        .iter()
        .enumerate()
        .map(|(r, rel)| {
            let all: Vec<(usize, usize)> = rel.edges().collect();
            let count = target_count(cfg.mask_ratio, all.len());
            (0..cfg.repeats)
                .map(|k| {
                    let mut rr = rng.derive(format!("mask/r={r}/k={k}")).rng();
                    let mut picks = index::sample(&mut rr, all.len(), count).into_vec();
                    picks.sort_unstable();
                    let chosen: Vec<_> = picks.into_iter().map(|i| all[i]).collect();
                    edge_targets(rel, &chosen, cfg.n_neg, &mut rr)
                })
                .collect()
        })
        .collect())
}

pub fn plan_masks(g: &MultiplexGraph, cfg: &MaskConfig, rng: &RngStream) -> Result<MaskPlan> {
    Ok(MaskPlan {
        node_masks: plan_attribute_masks(g, cfg, rng)?,
        edge_masks: plan_edge_masks(g, cfg, rng)?,
    })
}

/// `K` swap maps: each selected node gets a uniformly random donor other than itself.
pub fn plan_attribute_augmentation(
    g: &MultiplexGraph,
    cfg: &MaskConfig,
    rng: &RngStream,
) -> Result<Vec<Vec<(usize, usize)>>> {
    cfg.validate()?;
    let n = g.node_count();
    if n < 2 {
        return Err(Error::Config(
            "attribute augmentation needs at least two nodes".into(),
        ));
    }
    let count = target_count(cfg.mask_ratio, n);
    Ok((0..cfg.repeats)
        .map(|k| {
            let mut r = rng.derive(format!("swap/k={k}")).rng();
            let mut targets = index::sample(&mut r, n, count).into_vec();
            targets.sort_unstable();
            targets
                .into_iter()
                .map(|t| {
                    let d = r.random_range(0..n - 1);
                    (t, if d >= t { d + 1 } else { d })
                })
                .collect()
        })
        .collect())
}

fn rwr_walk<R: Rng>(
    rel: &RelationalSubgraph,
    seed: usize,
    cfg: &RwrConfig,
    rng: &mut R,
) -> Vec<usize> {
    let mut visited = BTreeSet::from([seed]);
    let mut current = seed;
    for _ in 0..cfg.max_steps {
        if visited.len() >= cfg.subgraph_size {
            break;
        }
        if rng.random_bool(cfg.restart_prob) {
            current = seed;
            continue;
        }
        let nb = rel.neighbors(current);
        current = nb[rng.random_range(0..nb.len())];
        visited.insert(current);
    }
    visited.into_iter().collect()
}

/// Samples one RWR subgraph per `(r, k)` and the relation edges induced on it.
pub fn sample_rwr_subgraphs(
    g: &MultiplexGraph,
    cfg: &RwrConfig,
    repeats: usize,
    n_neg: usize,
    rng: &RngStream,
) -> Result<Vec<Vec<Subgraph>>> {
    cfg.validate(g.node_count())?;
    g.relations()
        .iter()
        .enumerate()
        .map(|(r, rel)| {
            let candidates: Vec<usize> = (0..rel.node_count())
                .filter(|&v| !rel.neighbors(v).is_empty())
                .collect();
            if candidates.is_empty() {
                return Err(Error::EmptyRelation(r));
            }
            Ok((0..repeats)
                .map(|k| {
                    let mut rr = rng.derive(format!("rwr/r={r}/k={k}")).rng();
                    let seed = candidates[rr.random_range(0..candidates.len())];
                    let nodes = rwr_walk(rel, seed, cfg, &mut rr);
                    let induced: Vec<(usize, usize)> = nodes
                        .iter()
                        .flat_map(|&u| {
                            rel.neighbors(u)
                                .iter()
                                .filter(move |&&v| u < v)
                                .filter(|v| nodes.binary_search(v).is_ok())
                                .map(move |&v| (u, v))
                        })
                        .collect();
                    let targets = edge_targets(rel, &induced, n_neg, &mut rr);
                    Subgraph {
                        seed,
                        nodes,
                        targets,
                    }
                })
                .collect())
        })
        .collect()
}

pub fn plan_augmentations(
    g: &MultiplexGraph,
    mask: &MaskConfig,
    rwr: &RwrConfig,
    rng: &RngStream,
) -> Result<AugmentPlan> {
    Ok(AugmentPlan {
        swaps: plan_attribute_augmentation(g, mask, rng)?,
        subgraphs: sample_rwr_subgraphs(g, rwr, mask.repeats, mask.n_neg, rng)?,
    })
}

fn dump_targets(out: &mut String, prefix: &str, t: &EdgeTargets) {
    for (e, &(v, u)) in t.edges.iter().enumerate() {
        let negs: Vec<String> = t.negatives_of(e).iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{prefix} edge={v},{u} neg={}", negs.join(","));
    }
    if t.fallback {
        let _ = writeln!(out, "{prefix} negative_fallback=1");
    }
}

/// Diagnostic text dump, one line per masked item.
pub fn dump_plans(out: &mut String, tag: &str, mask: &MaskPlan, aug: &AugmentPlan) {
    for (k, nodes) in mask.node_masks.iter().enumerate() {
        for v in nodes {
            let _ = writeln!(out, "{tag} attr_mask k={k} node={v}");
        }
    }
    for (r, per_k) in mask.edge_masks.iter().enumerate() {
        for (k, t) in per_k.iter().enumerate() {
            dump_targets(out, &format!("{tag} edge_mask r={r} k={k}"), t);
        }
    }
    for (k, swaps) in aug.swaps.iter().enumerate() {
        for (t, d) in swaps {
            let _ = writeln!(out, "{tag} swap k={k} node={t} donor={d}");
        }
    }
    for (r, per_k) in aug.subgraphs.iter().enumerate() {
        for (k, s) in per_k.iter().enumerate() {
            for v in &s.nodes {
                let _ = writeln!(out, "{tag} subgraph r={r} k={k} seed={} node={v}", s.seed);
            }
            dump_targets(out, &format!("{tag} subgraph r={r} k={k}"), &s.targets);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AttributeMatrix, RelationalSubgraph};
    use crate::numerics::DenseMatrix;

    fn graph(n: usize, edges: &[(usize, usize)]) -> MultiplexGraph {
        let rel = RelationalSubgraph::from_edges(0, "r", n, edges.iter().copied()).unwrap();
        let x = AttributeMatrix::new(DenseMatrix::filled(n, 2, 1.0)).unwrap();
        MultiplexGraph::new(vec![rel], x, None).unwrap()
    }

    fn clique(n: usize) -> Vec<(usize, usize)> {
        (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect()
    }

    fn cfg(ratio: f64, repeats: usize) -> MaskConfig {
        MaskConfig {
            mask_ratio: ratio,
            repeats,
            n_neg: 3,
        }
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(target_count(0.25, 10), 3);
        assert_eq!(target_count(0.24, 10), 2);
        assert_eq!(target_count(0.01, 10), 0);
        assert_eq!(target_count(1.0, 7), 7);
    }

    #[test]
    fn attribute_mask_sizes() {
        let g = graph(10, &[(0, 1)]);
        let rng = RngStream::new(3, "t");
        assert!(plan_attribute_masks(&g, &cfg(0.0, 4), &rng)
            .unwrap()
            .iter()
            .all(Vec::is_empty));
        for set in plan_attribute_masks(&g, &cfg(0.5, 4), &rng).unwrap() {
            assert_eq!(set.len(), 5);
            assert_eq!(set.iter().collect::<BTreeSet<_>>().len(), 5);
        }
        for set in plan_attribute_masks(&g, &cfg(1.0, 2), &rng).unwrap() {
            assert_eq!(set, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn edge_mask_extremes() {
        let g = graph(4, &[(0, 1), (2, 3)]);
        let rng = RngStream::new(1, "t");
        assert!(plan_edge_masks(&g, &cfg(0.0, 3), &rng).unwrap()[0]
            .iter()
            .all(EdgeTargets::is_empty));
        for t in &plan_edge_masks(&g, &cfg(1.0, 3), &rng).unwrap()[0] {
            let mut e: Vec<_> = t.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
            e.sort_unstable();
            assert_eq!(e, vec![(0, 1), (2, 3)]);
            assert!(!t.fallback);
        }
    }

    #[test]
    fn star_center_exhausts_negatives() {
        let g = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let plans = plan_edge_masks(&g, &cfg(1.0, 10), &RngStream::new(2, "t")).unwrap();
        assert!(plans[0].iter().any(|t| t.fallback));
        for t in &plans[0] {
            for (e, &(v, u)) in t.edges.iter().enumerate() {
                for &neg in t.negatives_of(e) {
                    assert_ne!(neg, u);
                    if v != 0 {
                        assert!(!g.relation(0).has_edge(v, neg));
                    }
                }
            }
        }
    }

    #[test]
    fn swap_pairs_for_two_nodes() {
        let g = graph(2, &[(0, 1)]);
        let swaps = plan_attribute_augmentation(&g, &cfg(1.0, 3), &RngStream::new(0, "t")).unwrap();
        for s in swaps {
            assert_eq!(s, vec![(0, 1), (1, 0)]);
        }
        assert!(
            plan_attribute_augmentation(&g, &cfg(0.0, 2), &RngStream::new(0, "t"))
                .unwrap()
                .iter()
                .all(Vec::is_empty)
        );
    }

    #[test]
    fn swap_never_self_donates() {
        let g = graph(7, &[(0, 1)]);
        for seed in 0..1000 {
            for swaps in
                plan_attribute_augmentation(&g, &cfg(0.6, 1), &RngStream::new(seed, "t")).unwrap()
            {
                assert!(swaps.iter().all(|(t, d)| t != d));
            }
        }
    }

    #[test]
    fn rwr_reference_cases() {
        let g = graph(5, &clique(5));
        let rng = RngStream::new(4, "t");

        let stay = sample_rwr_subgraphs(&g, &RwrConfig::new(1.0, 4), 3, 2, &rng).unwrap();
        for s in &stay[0] {
            assert_eq!(s.nodes, vec![s.seed]);
            assert!(s.targets.is_empty());
        }

        let single = sample_rwr_subgraphs(&g, &RwrConfig::new(0.15, 1), 3, 2, &rng).unwrap();
        assert!(single[0].iter().all(|s| s.nodes == vec![s.seed]));

        let four = sample_rwr_subgraphs(&g, &RwrConfig::new(0.15, 4), 5, 2, &rng).unwrap();
        for s in &four[0] {
            assert_eq!(s.nodes.len(), 4);
            assert_eq!(s.targets.len(), 6);
        }
    }

    #[test]
    fn rwr_on_empty_relation_fails() {
        let g = graph(4, &[]);
        let err = sample_rwr_subgraphs(&g, &RwrConfig::new(0.2, 2), 1, 1, &RngStream::new(0, "t"))
            .unwrap_err();
        assert!(matches!(err, Error::EmptyRelation(0)));
    }

    #[test]
    fn plans_are_reproducible() {
        let g = graph(12, &clique(6));
        let rng = RngStream::new(9, "epoch=0");
        assert_eq!(
            plan_masks(&g, &cfg(0.3, 3), &rng).unwrap(),
            plan_masks(&g, &cfg(0.3, 3), &rng).unwrap()
        );
    }

    #[test]
    fn dump_has_one_line_per_item() {
        let g = graph(4, &[(0, 1), (1, 2)]);
        let rng = RngStream::new(0, "t");
        let mask = plan_masks(&g, &cfg(0.5, 1), &rng).unwrap();
        let aug = AugmentPlan::default();
        let mut out = String::new();
        dump_plans(&mut out, "epoch=0", &mask, &aug);
        assert_eq!(out.lines().count(), 2 + 1);
    }
}
