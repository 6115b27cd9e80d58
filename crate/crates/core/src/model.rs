//! Masked graph autoencoders over the original, attribute-augmented and
//! subgraph-augmented views, relation aggregation, and every loss term.
//!
//! Each view runs one simplified-GCN encoder/decoder per `(relation, repeat)`.
//! The encoder is `Â^enc_layers · X · W_enc` and the decoder
//! `Â^dec_layers · H · W_dec`; there is no nonlinearity between them.
//! Per-relation outputs are combined with softmax-normalized logits, and
//! reconstructions are averaged over repeats where a single per-view matrix
//! is needed (contrastive pairs and scoring).

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::MultiplexGraph;
use crate::masking::{
    plan_attribute_augmentation, plan_masks, sample_rwr_subgraphs, AugmentPlan, EdgeTargets,
    MaskConfig, MaskPlan, RwrConfig,
};
use crate::numerics::dense::dot;
use crate::numerics::{DenseMatrix, ParamId, ParamStore, RngStream, SparseMatrix, Tape, Var};

/// Which denominator the contrastive term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClDenominator {
    /// Two negatives only; the positive pair is absent from the denominator.
    NegativesOnly,
    /// Positive plus the two negatives.
    InfoNce,
}

impl ClDenominator {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClDenominator::NegativesOnly => "negatives_only",
            ClDenominator::InfoNce => "infonce",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "negatives_only" => Ok(Self::NegativesOnly),
            "infonce" => Ok(Self::InfoNce),
            other => Err(Error::Config(format!(
                "cl_denominator must be negatives_only|infonce, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub eta: f64,
    pub mask: MaskConfig,
    pub rwr: RwrConfig,
    pub cl_denominator: ClDenominator,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            enc_layers: 1,
            dec_layers: 1,
            eta: 2.0,
            mask: MaskConfig::default(),
            rwr: RwrConfig::default(),
            cl_denominator: ClDenominator::NegativesOnly,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::Config(
                "hidden_dim and layer counts must be at least 1".into(),
            ));
        }
        if self.eta.is_nan() || self.eta < 1.0 {
            return Err(Error::Config(format!("eta must be >= 1, got {}", self.eta)));
        }
        self.mask.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub theta: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            lambda: 0.3,
            mu: 0.3,
            theta: 0.1,
            epsilon: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("beta", self.beta)?;
        unit("epsilon", self.epsilon)?;
        for (name, v) in [
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("theta", self.theta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Component switches for ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    /// Plain autoencoders: inputs are never masked, every node and edge is a target.
    pub no_mask: bool,
    pub no_original: bool,
    pub no_attr_aug: bool,
    pub no_sub_aug: bool,
    pub no_dcl: bool,
}

impl Ablation {
    pub fn original(&self) -> bool {
        !self.no_original
    }

    pub fn attr_aug(&self) -> bool {
        !self.no_attr_aug
    }

    pub fn sub_aug(&self) -> bool {
        !self.no_sub_aug
    }

    /// Contrast needs the original view and at least one augmented view.
    pub fn contrastive(&self) -> bool {
        !self.no_dcl && self.original() && (self.attr_aug() || self.sub_aug())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.original() && !self.attr_aug() && !self.sub_aug() {
            return Err(Error::Config(
                "ablation flags disable every loss term".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Original,
    AttrAug,
    SubAug,
}

impl View {
    pub const ALL: [View; 3] = [View::Original, View::AttrAug, View::SubAug];

    pub fn name(&self) -> &'static str {
        match self {
            View::Original => "original",
            View::AttrAug => "attr_aug",
            View::SubAug => "sub_aug",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

/// Encoder/decoder families; the original view owns two of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    OrigAttr,
    OrigStruct,
    AttrAug,
    SubAug,
}

impl Branch {
    pub const ALL: [Branch; 4] = [
        Branch::OrigAttr,
        Branch::OrigStruct,
        Branch::AttrAug,
        Branch::SubAug,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Branch::OrigAttr => "orig_attr",
            Branch::OrigStruct => "orig_struct",
            Branch::AttrAug => "attr_aug",
            Branch::SubAug => "sub_aug",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncDec {
    pub enc: ParamId,
    pub dec: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregationWeights {
    /// 1×R logits whose softmax gives the attribute aggregation weights.
    pub attr_logits: ParamId,
    /// 1×R logits whose softmax gives the structure-loss weights.
    pub struct_logits: ParamId,
}

/// All trainable tensors plus the index needed to find them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub store: ParamStore,
    relations: usize,
    repeats: usize,
    feature_dim: usize,
    hidden_dim: usize,
    mask_token: ParamId,
    branches: [Vec<EncDec>; 4],
    aggregation: [AggregationWeights; 3],
}

fn branch_param_name(branch: Branch, r: usize, k: usize, part: &str) -> String {
    format!("{}/r={r}/k={k}/{part}", branch.name())
}

fn agg_param_name(view: View, part: &str) -> String {
    format!("agg/{}/{part}", view.name())
}

fn xavier(rows: usize, cols: usize, stream: &RngStream) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = stream.rng();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized")
}

impl ModelParams {
    /// Xavier-uniform weights, zero aggregation logits, and a MASK token set
    /// to the mean attribute row. Every tensor has its own init stream.
    pub fn init(g: &MultiplexGraph, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (r_count, k_count) = (g.relation_count(), cfg.mask.repeats);
        let (f, h) = (g.feature_dim(), cfg.hidden_dim);
        let init = RngStream::new(seed, "init");
        let mut store = ParamStore::new();

        let x = g.attributes().matrix();
        let mut mean = DenseMatrix::zeros(1, f);
        for r in 0..x.rows() {
            for (m, v) in mean.row_mut(0).iter_mut().zip(x.row(r)) {
                *m += v / x.rows() as f64;
            }
        }
        let mask_token = store.add("mask_token", mean)?;

        let mut branches: [Vec<EncDec>; 4] = Default::default();
        for b in Branch::ALL {
            for r in 0..r_count {
                for k in 0..k_count {
                    let enc_name = branch_param_name(b, r, k, "enc");
                    let dec_name = branch_param_name(b, r, k, "dec");
                    let enc = store.add(enc_name.clone(), xavier(f, h, &init.derive(&enc_name)))?;
                    let dec = store.add(dec_name.clone(), xavier(h, f, &init.derive(&dec_name)))?;
                    branches[b.index()].push(EncDec { enc, dec });
                }
            }
        }
        let mut agg = Vec::with_capacity(3);
        for v in View::ALL {
            agg.push(AggregationWeights {
                attr_logits: store
                    .add(agg_param_name(v, "attr"), DenseMatrix::zeros(1, r_count))?,
                struct_logits: store
                    .add(agg_param_name(v, "struct"), DenseMatrix::zeros(1, r_count))?,
            });
        }
        Ok(Self {
            store,
            relations: r_count,
            repeats: k_count,
            feature_dim: f,
            hidden_dim: h,
            mask_token,
            branches,
            aggregation: [agg[0], agg[1], agg[2]],
        })
    }

    /// Rebuilds the index over a store loaded from a checkpoint; names and
    /// shapes must match what [`ModelParams::init`] would produce.
    pub fn from_store(
        store: ParamStore,
        relations: usize,
        repeats: usize,
        feature_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        let find = |name: &str, shape: (usize, usize)| -> Result<ParamId> {
            let id = store.id(name).ok_or_else(|| {
                Error::VersionMismatch(format!("checkpoint lacks parameter {name}"))
            })?;
            let got = store.get(id).value.shape();
            if got != shape {
                return Err(Error::VersionMismatch(format!(
                    "parameter {name} has shape {got:?}, expected {shape:?}"
                )));
            }
            Ok(id)
        };
        let mask_token = find("mask_token", (1, feature_dim))?;
        let mut branches: [Vec<EncDec>; 4] = Default::default();
        for b in Branch::ALL {
            for r in 0..relations {
                for k in 0..repeats {
                    branches[b.index()].push(EncDec {
                        enc: find(
                            &branch_param_name(b, r, k, "enc"),
                            (feature_dim, hidden_dim),
                        )?,
                        dec: find(
                            &branch_param_name(b, r, k, "dec"),
                            (hidden_dim, feature_dim),
                        )?,
                    });
                }
            }
        }
        let mut agg = Vec::with_capacity(3);
        for v in View::ALL {
            agg.push(AggregationWeights {
                attr_logits: find(&agg_param_name(v, "attr"), (1, relations))?,
                struct_logits: find(&agg_param_name(v, "struct"), (1, relations))?,
            });
        }
        if store.len() != 1 + 8 * relations * repeats + 6 {
            return Err(Error::VersionMismatch(
                "checkpoint has unexpected extra parameters".into(),
            ));
        }
        Ok(Self {
            store,
            relations,
            repeats,
            feature_dim,
            hidden_dim,
            mask_token,
            branches,
            aggregation: [agg[0], agg[1], agg[2]],
        })
    }

    pub fn relations(&self) -> usize {
        self.relations
    }

    pub fn repeats(&self) -> usize {
        self.repeats
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn mask_token(&self) -> ParamId {
        self.mask_token
    }

    pub fn branch(&self, b: Branch, r: usize, k: usize) -> EncDec {
        self.branches[b.index()][r * self.repeats + k]
    }

    pub fn aggregation(&self, v: View) -> AggregationWeights {
        self.aggregation[v.index()]
    }

    /// Softmax of a view's attribute (or structure) logits.
    pub fn relation_weights(&self, v: View, structure: bool) -> Vec<f64> {
        let a = self.aggregation(v);
        let logits = self
            .store
            .get(if structure {
                a.struct_logits
            } else {
                a.attr_logits
            })
            .value
            .data();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn is_untrained(&self) -> bool {
        Branch::ALL.iter().all(|&b| {
            self.branches[b.index()].iter().all(|ed| {
                self.store
                    .get(ed.enc)
                    .value
                    .data()
                    .iter()
                    .all(|&v| v == 0.0)
            })
        })
    }
}

/// Graph-derived constants shared by every step.
#[derive(Debug, Clone)]
pub struct GraphContext<'g> {
    pub graph: &'g MultiplexGraph,
    pub x: Arc<DenseMatrix>,
    pub adj: Vec<Arc<SparseMatrix>>,
}

impl<'g> GraphContext<'g> {
    pub fn new(graph: &'g MultiplexGraph) -> Self {
        Self {
            graph,
            x: Arc::new(graph.attributes().matrix().clone()),
            adj: graph
                .relations()
                .iter()
                .map(|r| Arc::new(r.normalize_adjacency()))
                .collect(),
        }
    }
}

/// Edge targets in the pair layout consumed by [`struct_recon_loss`].
#[derive(Debug, Clone)]
pub struct EdgePairs {
    pub pos: Arc<[(usize, usize)]>,
    pub neg: Arc<[(usize, usize)]>,
    pub n_neg: usize,
}

impl EdgePairs {
    pub fn from_targets(t: &EdgeTargets) -> Self {
        let pos: Vec<(usize, usize)> = t.edges.clone();
        let mut neg = Vec::with_capacity(t.negatives.len());
        for (e, &(v, _)) in t.edges.iter().enumerate() {
            neg.extend(t.negatives_of(e).iter().map(|&u| (v, u)));
        }
        Self {
            pos: pos.into(),
            neg: neg.into(),
            n_neg: t.n_neg,
        }
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }
}

/// Training or inference forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    /// Inverted dropout at `rate` on every encoder input, masks drawn from `stream`.
    Train { dropout: f64, stream: RngStream },
    /// No dropout; losses and the structure-only branch are skipped.
    Infer,
}

/// A step's masks and augmentations, resolved into tape-ready inputs.
#[derive(Debug, Clone)]
pub struct PreparedPlan {
    masked: bool,
    /// Rows replaced by the MASK token per repeat (empty when unmasked).
    attr_masked: Vec<Arc<[usize]>>,
    attr_targets: Vec<Arc<[usize]>>,
    /// `[r][k]`
    struct_adj: Vec<Vec<Arc<SparseMatrix>>>,
    struct_targets: Vec<Vec<EdgePairs>>,
    swap_inputs: Vec<Arc<DenseMatrix>>,
    swap_targets: Vec<Arc<[usize]>>,
    sub_masked: Vec<Vec<Arc<[usize]>>>,
    sub_adj: Vec<Vec<Arc<SparseMatrix>>>,
    sub_targets: Vec<Vec<EdgePairs>>,
    sub_union: Vec<Arc<[usize]>>,
    contrast_negatives: Arc<[usize]>,
    repeats: usize,
    relations: usize,
}

/// Raw plans for one step, kept for diagnostics.
#[derive(Debug, Clone, Default)]
pub struct StepPlans {
    pub mask: MaskPlan,
    pub augment: AugmentPlan,
    pub contrast_negatives: Vec<usize>,
}

/// One uniformly drawn `j ≠ i` per anchor `i`.
pub fn sample_contrast_negatives(n: usize, stream: &RngStream) -> Vec<usize> {
    let mut rng = stream.rng();
    (0..n)
        .map(|i| {
            if n < 2 {
                return i;
            }
            let d = rng.random_range(0..n - 1);
            if d >= i {
                d + 1
            } else {
                d
            }
        })
        .collect()
}

/// Plans every view enabled by `ablation` from labelled children of `stream`.
/// Disabled views are left empty; enabled ones do not depend on which others
/// are enabled.
pub fn plan_step(
    ctx: &GraphContext,
    cfg: &ModelConfig,
    ablation: &Ablation,
    stream: &RngStream,
) -> Result<StepPlans> {
    let g = ctx.graph;
    let mask_cfg = if ablation.no_mask {
        MaskConfig {
            mask_ratio: 1.0,
            ..cfg.mask
        }
    } else {
        cfg.mask
    };
    let mut plans = StepPlans::default();
    if ablation.original() {
        plans.mask = plan_masks(g, &mask_cfg, stream)?;
    }
    if ablation.attr_aug() {
        plans.augment.swaps = plan_attribute_augmentation(g, &cfg.mask, stream)?;
    }
    if ablation.sub_aug() {
        plans.augment.subgraphs =
            sample_rwr_subgraphs(g, &cfg.rwr, cfg.mask.repeats, cfg.mask.n_neg, stream)?;
    }
    if ablation.contrastive() {
        plans.contrast_negatives =
            sample_contrast_negatives(g.node_count(), &stream.derive("contrast"));
    }
    Ok(plans)
}

impl PreparedPlan {
    pub fn new(
        ctx: &GraphContext,
        plans: &StepPlans,
        repeats: usize,
        no_mask: bool,
    ) -> Result<Self> {
        let g = ctx.graph;
        let n = g.node_count();
        let r_count = g.relation_count();
        let masked = !no_mask;
        let all_nodes: Arc<[usize]> = (0..n).collect::<Vec<_>>().into();
        let empty: Arc<[usize]> = Vec::new().into();

        let attr_targets: Vec<Arc<[usize]>> = plans
            .mask
            .node_masks
            .iter()
            .map(|m| Arc::from(m.as_slice()))
            .collect();
        let attr_masked = if masked {
            attr_targets.clone()
        } else {
            vec![empty.clone(); attr_targets.len()]
        };
        let mut struct_adj = Vec::new();
        let mut struct_targets = Vec::new();
        for (r, per_k) in plans.mask.edge_masks.iter().enumerate() {
            let rel = g.relation(r);
            struct_adj.push(
                per_k
                    .iter()
                    .map(|t| {
                        if masked && !t.is_empty() {
                            Arc::new(rel.without_edges(&t.edges).normalize_adjacency())
                        } else {
                            ctx.adj[r].clone()
                        }
                    })
                    .collect(),
            );
            struct_targets.push(per_k.iter().map(EdgePairs::from_targets).collect());
        }

        let mut swap_inputs = Vec::new();
        let mut swap_targets = Vec::new();
        for swaps in &plans.augment.swaps {
            let mut input = (*ctx.x).clone();
            for &(t, d) in swaps {
                let donor = ctx.x.row(d).to_vec();
                input.row_mut(t).copy_from_slice(&donor);
            }
            swap_inputs.push(Arc::new(input));
            swap_targets.push(swaps.iter().map(|&(t, _)| t).collect::<Vec<_>>().into());
        }

        let mut sub_masked = Vec::new();
        let mut sub_adj = Vec::new();
        let mut sub_targets = Vec::new();
        let mut sub_union: Vec<Arc<[usize]>> = Vec::new();
        if !plans.augment.subgraphs.is_empty() {
            let mut unions = vec![std::collections::BTreeSet::new(); repeats];
            for (r, per_k) in plans.augment.subgraphs.iter().enumerate() {
                let rel = g.relation(r);
                let mut masked_r = Vec::new();
                let mut adj_r = Vec::new();
                let mut targets_r = Vec::new();
                for (k, s) in per_k.iter().enumerate() {
                    unions[k].extend(s.nodes.iter().copied());
                    if masked {
                        masked_r.push(Arc::from(s.nodes.as_slice()));
                        adj_r.push(if s.targets.is_empty() {
                            ctx.adj[r].clone()
                        } else {
                            Arc::new(rel.without_edges(&s.targets.edges).normalize_adjacency())
                        });
                    } else {
                        masked_r.push(empty.clone());
                        adj_r.push(ctx.adj[r].clone());
                    }
                    targets_r.push(EdgePairs::from_targets(&s.targets));
                }
                sub_masked.push(masked_r);
                sub_adj.push(adj_r);
                sub_targets.push(targets_r);
            }
            sub_union = unions
                .into_iter()
                .map(|u| u.into_iter().collect::<Vec<_>>().into())
                .collect();
        }
        let _ = all_nodes;
        Ok(Self {
            masked,
            attr_masked,
            attr_targets,
            struct_adj,
            struct_targets,
            swap_inputs,
            swap_targets,
            sub_masked,
            sub_adj,
            sub_targets,
            sub_union,
            contrast_negatives: plans.contrast_negatives.clone().into(),
            repeats,
            relations: r_count,
        })
    }

    pub fn is_masked(&self) -> bool {
        self.masked
    }
}

/// `propagate(Â, X·W_enc, enc_layers)` followed by `propagate(Â, H, dec_layers)·W_dec`.
///
/// Propagation and the two weight products are linear, so they are grouped
/// to keep every intermediate at the narrower of the feature and hidden
/// widths; the result is the same product.
pub fn encode_decode(
    tape: &mut Tape,
    input: Var,
    adj: Arc<SparseMatrix>,
    enc: Var,
    dec: Var,
    enc_layers: usize,
    dec_layers: usize,
) -> Result<Var> {
    let (_, f) = tape.shape(input);
    let (_, h) = tape.shape(enc);
    let hops = enc_layers + dec_layers;
    if f <= h {
        let p = tape.propagate(adj, input, hops)?;
        let w = tape.matmul(enc, dec)?;
        tape.matmul(p, w)
    } else {
        let hidden = tape.matmul(input, enc)?;
        let p = tape.propagate(adj, hidden, hops)?;
        tape.matmul(p, dec)
    }
}

/// `Σ_r softmax(logits)_r · per_relation[r]`.
pub fn aggregate_relations(tape: &mut Tape, per_relation: &[Var], logits: Var) -> Result<Var> {
    if per_relation.is_empty() {
        return Err(Error::EmptyList("aggregate_relations"));
    }
    let w = tape.softmax(logits)?;
    tape.weighted_sum(per_relation, w)
}

/// `Σ_k mean_{i ∈ targets[k]} (1 − cos(x̃^k(i), x(i)))^η`; repeats with no
/// target rows contribute nothing.
pub fn attr_recon_loss(
    tape: &mut Tape,
    per_repeat: &[Var],
    x: &Arc<DenseMatrix>,
    targets: &[Arc<[usize]>],
    eta: f64,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(per_repeat.len());
    for (&recon, rows) in per_repeat.iter().zip(targets) {
        if rows.is_empty() {
            continue;
        }
        terms.push(tape.scaled_cosine(recon, x.clone(), rows.clone(), eta)?);
    }
    tape.add_all(&terms)
}

/// Negative log-likelihood of one `(r, k)` edge set under dot-product scores.
pub fn edge_nll(tape: &mut Tape, emb: Var, pairs: &EdgePairs) -> Result<Var> {
    let pos = tape.pair_dots(emb, emb, pairs.pos.clone(), pairs.len(), 1)?;
    let neg = tape.pair_dots(emb, emb, pairs.neg.clone(), pairs.len(), pairs.n_neg)?;
    tape.softmax_nll(pos, neg, true)
}

/// `Σ_r b^r · Σ_k NLL(emb[r][k], pairs[r][k])` with `b = softmax(logits)`.
pub fn struct_recon_loss(
    tape: &mut Tape,
    emb: &[Vec<Var>],
    pairs: &[Vec<EdgePairs>],
    logits: Var,
) -> Result<Var> {
    let mut per_relation = Vec::with_capacity(emb.len());
    for (emb_r, pairs_r) in emb.iter().zip(pairs) {
        let mut terms = Vec::new();
        for (&e, p) in emb_r.iter().zip(pairs_r) {
            if !p.is_empty() {
                terms.push(edge_nll(tape, e, p)?);
            }
        }
        per_relation.push(tape.add_all(&terms)?);
    }
    aggregate_relations(tape, &per_relation, logits)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Reconstructed structure `sigmoid(X̃ · X̃ᵀ)`.
pub fn subgraph_struct_matrix(x_tilde: &DenseMatrix) -> DenseMatrix {
    let mut gram = x_tilde.matmul_t(x_tilde).expect("square");
    gram.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
    gram
}

/// One row of `sigmoid(X̃ · X̃ᵀ)` without forming the full matrix.
pub fn subgraph_struct_row(x_tilde: &DenseMatrix, i: usize, out: &mut [f64]) {
    let xi = x_tilde.row(i);
    for (j, o) in out.iter_mut().enumerate() {
        *o = sigmoid(dot(xi, x_tilde.row(j)));
    }
}

/// Dual-view contrast of l2-normalized original-view embeddings against each
/// provided augmented view, with one shared negative `j` per anchor.
pub fn contrastive_loss(
    tape: &mut Tape,
    z_orig: Var,
    augmented: &[Var],
    negatives: &Arc<[usize]>,
    denominator: ClDenominator,
) -> Result<Var> {
    let (n, _) = tape.shape(z_orig);
    if n < 2 {
        return Err(Error::Config(
            "contrastive loss needs at least two nodes".into(),
        ));
    }
    if negatives.len() != n {
        return Err(Error::LengthMismatch(negatives.len(), n));
    }
    let zo = tape.row_normalize(z_orig)?;
    let diag: Arc<[(usize, usize)]> = (0..n).map(|i| (i, i)).collect::<Vec<_>>().into();
    let cross: Arc<[(usize, usize)]> = negatives
        .iter()
        .enumerate()
        .map(|(i, &j)| (i, j))
        .collect::<Vec<_>>()
        .into();
    let neg_self = tape.pair_dots(zo, zo, cross.clone(), n, 1)?;
    let mut terms = Vec::with_capacity(augmented.len());
    for &aug in augmented {
        let za = tape.row_normalize(aug)?;
        let pos = tape.pair_dots(zo, za, diag.clone(), n, 1)?;
        let neg_aug = tape.pair_dots(zo, za, cross.clone(), n, 1)?;
        let neg = tape.concat_cols(&[neg_self, neg_aug])?;
        terms.push(tape.softmax_nll(pos, neg, denominator == ClDenominator::InfoNce)?);
    }
    tape.add_all(&terms)
}

/// Loss components of one step. `None` marks a component removed by ablation.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<T> {
    pub attr: Option<T>,
    pub structure: Option<T>,
    pub sub_attr: Option<T>,
    pub sub_struct: Option<T>,
    pub attr_aug: Option<T>,
    pub contrastive: Option<T>,
}

impl<T> Default for LossParts<T> {
    fn default() -> Self {
        Self {
            attr: None,
            structure: None,
            sub_attr: None,
            sub_struct: None,
            attr_aug: None,
            contrastive: None,
        }
    }
}

/// Scalar values of every component and the combined objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValues {
    pub attr: f64,
    pub structure: f64,
    pub original: f64,
    pub attr_aug: f64,
    pub sub_attr: f64,
    pub sub_struct: f64,
    pub sub_aug: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// `L_O + λ·L_A_Aug + μ·L_S_Aug + Θ·L_CL` with `L_O = α·L_A + (1−α)·L_S` and
/// `L_S_Aug = β·L_sa + (1−β)·L_ss`. Absent components are dropped.
pub fn total_loss(
    tape: &mut Tape,
    parts: &LossParts<Var>,
    w: &LossWeights,
) -> Result<(Var, LossValues)> {
    let mut vals = LossValues::default();
    let value = |tape: &Tape, v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
    vals.attr = value(tape, parts.attr);
    vals.structure = value(tape, parts.structure);
    vals.attr_aug = value(tape, parts.attr_aug);
    vals.sub_attr = value(tape, parts.sub_attr);
    vals.sub_struct = value(tape, parts.sub_struct);
    vals.contrastive = value(tape, parts.contrastive);

    let mut terms = Vec::new();
    if let (Some(a), Some(s)) = (parts.attr, parts.structure) {
        let a = tape.scale(a, w.alpha)?;
        let s = tape.scale(s, 1.0 - w.alpha)?;
        let o = tape.add(a, s)?;
        vals.original = tape.scalar(o);
        terms.push(o);
    }
    if let Some(aa) = parts.attr_aug {
        terms.push(tape.scale(aa, w.lambda)?);
    }
    if let (Some(sa), Some(ss)) = (parts.sub_attr, parts.sub_struct) {
        let a = tape.scale(sa, w.beta)?;
        let s = tape.scale(ss, 1.0 - w.beta)?;
        let sub = tape.add(a, s)?;
        vals.sub_aug = tape.scalar(sub);
        terms.push(tape.scale(sub, w.mu)?);
    }
    if let Some(cl) = parts.contrastive {
        terms.push(tape.scale(cl, w.theta)?);
    }
    let total = tape.add_all(&terms)?;
    vals.total = tape.scalar(total);
    Ok((total, vals))
}

/// Mean-over-repeats reconstruction per view (`None` for ablated views).
#[derive(Debug, Clone, Copy)]
pub struct ViewRecon<T> {
    pub original: Option<T>,
    pub attr_aug: Option<T>,
    pub sub_aug: Option<T>,
}

impl<T> Default for ViewRecon<T> {
    fn default() -> Self {
        Self {
            original: None,
            attr_aug: None,
            sub_aug: None,
        }
    }
}

impl<T> ViewRecon<T> {
    pub fn get(&self, v: View) -> Option<&T> {
        match v {
            View::Original => self.original.as_ref(),
            View::AttrAug => self.attr_aug.as_ref(),
            View::SubAug => self.sub_aug.as_ref(),
        }
    }
}

#[derive(Debug)]
pub struct Forward {
    pub parts: LossParts<Var>,
    pub recon: ViewRecon<Var>,
}

struct Runner<'a> {
    params: &'a ModelParams,
    cfg: &'a ModelConfig,
    mode: &'a Mode,
}

impl Runner<'_> {
    fn dropout(
        &self,
        tape: &mut Tape,
        input: Var,
        branch: Branch,
        r: usize,
        k: usize,
    ) -> Result<Var> {
        let Mode::Train { dropout, stream } = self.mode else {
            return Ok(input);
        };
        if *dropout <= 0.0 {
            return Ok(input);
        }
        let (rows, cols) = tape.shape(input);
        let mut rng = stream
            .derive(format!("{}/r={r}/k={k}", branch.name()))
            .rng();
        let keep = 1.0 - dropout;
        let data = (0..rows * cols)
            .map(|_| {
                if rng.random_bool(keep) {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        tape.mul_const(input, Arc::new(DenseMatrix::from_vec(rows, cols, data)?))
    }

    fn branch(
        &self,
        tape: &mut Tape,
        input: Var,
        adj: Arc<SparseMatrix>,
        b: Branch,
        r: usize,
        k: usize,
    ) -> Result<Var> {
        let ed = self.params.branch(b, r, k);
        let input = self.dropout(tape, input, b, r, k)?;
        let enc = tape.param(&self.params.store, ed.enc)?;
        let dec = tape.param(&self.params.store, ed.dec)?;
        encode_decode(
            tape,
            input,
            adj,
            enc,
            dec,
            self.cfg.enc_layers,
            self.cfg.dec_layers,
        )
    }

    fn mean(tape: &mut Tape, per_repeat: &[Var]) -> Result<Var> {
        let s = tape.add_all(per_repeat)?;
        tape.scale(s, 1.0 / per_repeat.len() as f64)
    }
}

/// Records one forward pass over every enabled view. In [`Mode::Infer`] the
/// loss parts are left empty.
pub fn forward(
    tape: &mut Tape,
    ctx: &GraphContext,
    params: &ModelParams,
    cfg: &ModelConfig,
    plan: &PreparedPlan,
    ablation: &Ablation,
    mode: &Mode,
) -> Result<Forward> {
    let run = Runner { params, cfg, mode };
    let train = matches!(mode, Mode::Train { .. });
    let (r_count, k_count) = (plan.relations, plan.repeats);
    if params.relations() != r_count
        || params.repeats() != k_count
        || params.feature_dim() != ctx.x.cols()
    {
        return Err(Error::Config(
            "model parameters do not match graph or repeat count".into(),
        ));
    }
    let x = tape.constant((*ctx.x).clone())?;
    let token = tape.param(&params.store, params.mask_token())?;
    let mut parts = LossParts::default();
    let mut recon = ViewRecon::default();

    if ablation.original() {
        let agg = params.aggregation(View::Original);
        let attr_logits = tape.param(&params.store, agg.attr_logits)?;
        let mut per_k = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let input = if plan.attr_masked[k].is_empty() {
                x
            } else {
                tape.replace_rows(x, plan.attr_masked[k].clone(), token)?
            };
            let mut per_r = Vec::with_capacity(r_count);
            for r in 0..r_count {
                per_r.push(run.branch(tape, input, ctx.adj[r].clone(), Branch::OrigAttr, r, k)?);
            }
            per_k.push(aggregate_relations(tape, &per_r, attr_logits)?);
        }
        if train {
            parts.attr = Some(attr_recon_loss(
                tape,
                &per_k,
                &ctx.x,
                &plan.attr_targets,
                cfg.eta,
            )?);
            let mut emb = Vec::with_capacity(r_count);
            for r in 0..r_count {
                let mut emb_r = Vec::with_capacity(k_count);
                for k in 0..k_count {
                    emb_r.push(run.branch(
                        tape,
                        x,
                        plan.struct_adj[r][k].clone(),
                        Branch::OrigStruct,
                        r,
                        k,
                    )?);
                }
                emb.push(emb_r);
            }
            let struct_logits = tape.param(&params.store, agg.struct_logits)?;
            parts.structure = Some(struct_recon_loss(
                tape,
                &emb,
                &plan.struct_targets,
                struct_logits,
            )?);
        }
        recon.original = Some(Runner::mean(tape, &per_k)?);
    }

    if ablation.attr_aug() {
        let agg = params.aggregation(View::AttrAug);
        let attr_logits = tape.param(&params.store, agg.attr_logits)?;
        let mut per_k = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let input = tape.constant((*plan.swap_inputs[k]).clone())?;
            let mut per_r = Vec::with_capacity(r_count);
            for r in 0..r_count {
                per_r.push(run.branch(tape, input, ctx.adj[r].clone(), Branch::AttrAug, r, k)?);
            }
            per_k.push(aggregate_relations(tape, &per_r, attr_logits)?);
        }
        if train {
            parts.attr_aug = Some(attr_recon_loss(
                tape,
                &per_k,
                &ctx.x,
                &plan.swap_targets,
                cfg.eta,
            )?);
        }
        recon.attr_aug = Some(Runner::mean(tape, &per_k)?);
    }

    if ablation.sub_aug() {
        let agg = params.aggregation(View::SubAug);
        let attr_logits = tape.param(&params.store, agg.attr_logits)?;
        let mut emb: Vec<Vec<Var>> = Vec::with_capacity(r_count);
        for r in 0..r_count {
            let mut emb_r = Vec::with_capacity(k_count);
            for k in 0..k_count {
                let rows = &plan.sub_masked[r][k];
                let input = if rows.is_empty() {
                    x
                } else {
                    tape.replace_rows(x, rows.clone(), token)?
                };
                emb_r.push(run.branch(
                    tape,
                    input,
                    plan.sub_adj[r][k].clone(),
                    Branch::SubAug,
                    r,
                    k,
                )?);
            }
            emb.push(emb_r);
        }
        let mut per_k = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let per_r: Vec<Var> = emb.iter().map(|e| e[k]).collect();
            per_k.push(aggregate_relations(tape, &per_r, attr_logits)?);
        }
        if train {
            parts.sub_attr = Some(attr_recon_loss(
                tape,
                &per_k,
                &ctx.x,
                &plan.sub_union,
                cfg.eta,
            )?);
            let struct_logits = tape.param(&params.store, agg.struct_logits)?;
            parts.sub_struct = Some(struct_recon_loss(
                tape,
                &emb,
                &plan.sub_targets,
                struct_logits,
            )?);
        }
        recon.sub_aug = Some(Runner::mean(tape, &per_k)?);
    }

    if train && ablation.contrastive() {
        let z_orig = recon.original.expect("original view enabled");
        let augmented: Vec<Var> = [recon.attr_aug, recon.sub_aug]
            .into_iter()
            .flatten()
            .collect();
        parts.contrastive = Some(contrastive_loss(
            tape,
            z_orig,
            &augmented,
            &plan.contrast_negatives,
            cfg.cl_denominator,
        )?);
    }

    Ok(Forward { parts, recon })
}

/// Plans, records and sums the full objective for one training step.
#[allow(clippy::too_many_arguments)]
pub fn training_loss(
    tape: &mut Tape,
    ctx: &GraphContext,
    params: &ModelParams,
    cfg: &ModelConfig,
    plan: &PreparedPlan,
    ablation: &Ablation,
    weights: &LossWeights,
    mode: &Mode,
) -> Result<(Var, LossValues)> {
    let fwd = forward(tape, ctx, params, cfg, plan, ablation, mode)?;
    total_loss(tape, &fwd.parts, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AttributeMatrix, RelationalSubgraph};
    use crate::numerics::finite_diff_check;

    fn toy_graph(seed: u64) -> MultiplexGraph {
        let n = 10;
        let mut rng = RngStream::new(seed, "toy").rng();
        let rels = (0..2)
            .map(|r| {
                let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
                for _ in 0..6 {
                    edges.push((rng.random_range(0..n), rng.random_range(0..n)));
                }
                RelationalSubgraph::from_edges(r, format!("r{r}"), n, edges).unwrap()
            })
            .collect();
        let x = DenseMatrix::from_vec(
            n,
            4,
            (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        MultiplexGraph::new(rels, AttributeMatrix::new(x).unwrap(), None).unwrap()
    }

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
            hidden_dim: 3,
            mask: MaskConfig {
                mask_ratio: 0.3,
                repeats: 2,
                n_neg: 2,
            },
            rwr: RwrConfig::new(0.2, 3),
            ..ModelConfig::default()
        }
    }

    #[test]
    fn aggregation_reference_cases() {
        let mut tape = Tape::new();
        let a = tape.constant(DenseMatrix::filled(2, 2, 3.0)).unwrap();
        let b = tape.constant(DenseMatrix::filled(2, 2, 1.0)).unwrap();

        let one = tape.constant(DenseMatrix::zeros(1, 1)).unwrap();
        let single = aggregate_relations(&mut tape, &[a], one).unwrap();
        assert_eq!(tape.value(single), tape.value(a));

        let equal = tape.constant(DenseMatrix::zeros(1, 2)).unwrap();
        let avg = aggregate_relations(&mut tape, &[a, b], equal).unwrap();
        assert!(tape
            .value(avg)
            .data()
            .iter()
            .all(|v| (v - 2.0).abs() < 1e-15));

        let skew = tape
            .constant(DenseMatrix::from_vec(1, 2, vec![0.0, 3f64.ln()]).unwrap())
            .unwrap();
        let w = tape.softmax(skew).unwrap();
        let wv = tape.value(w).data();
        assert!((wv[0] - 0.25).abs() < 1e-15 && (wv[1] - 0.75).abs() < 1e-15);

        assert!(matches!(
            aggregate_relations(&mut tape, &[], equal),
            Err(Error::EmptyList(_))
        ));
    }

    #[test]
    fn struct_matrix_cases() {
        let zero = subgraph_struct_matrix(&DenseMatrix::zeros(3, 2));
        assert!(zero.data().iter().all(|&v| v == 0.5));
        let one = subgraph_struct_matrix(&DenseMatrix::from_vec(1, 1, vec![2.0]).unwrap());
        assert!((one.get(0, 0) - 0.982_013_790_037_908_4).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_identity_and_zero() {
        let mut tape = Tape::new();
        let x = DenseMatrix::from_vec(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0]).unwrap();
        let vx = tape.constant(x.clone()).unwrap();
        let eye = tape.constant(DenseMatrix::identity(2)).unwrap();
        let out = encode_decode(
            &mut tape,
            vx,
            Arc::new(SparseMatrix::identity(3)),
            eye,
            eye,
            1,
            1,
        )
        .unwrap();
        assert_eq!(tape.value(out), &x);
        let z1 = tape.constant(DenseMatrix::zeros(2, 4)).unwrap();
        let z2 = tape.constant(DenseMatrix::zeros(4, 2)).unwrap();
        let out = encode_decode(
            &mut tape,
            vx,
            Arc::new(SparseMatrix::identity(3)),
            z1,
            z2,
            2,
            1,
        )
        .unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn total_loss_weighting() {
        let mut tape = Tape::new();
        let mut c = |v: f64| tape.constant(DenseMatrix::filled(1, 1, v)).unwrap();
        let parts = LossParts {
            attr: Some(c(1.0)),
            structure: Some(c(2.0)),
            sub_attr: Some(c(3.0)),
            sub_struct: Some(c(4.0)),
            attr_aug: Some(c(5.0)),
            contrastive: Some(c(6.0)),
        };
        let zero_aug = LossWeights {
            lambda: 0.0,
            mu: 0.0,
            theta: 0.0,
            ..LossWeights::default()
        };
        let (_, v) = total_loss(&mut tape, &parts, &zero_aug).unwrap();
        assert_eq!(v.total, v.original);
        let attr_only = LossWeights {
            alpha: 1.0,
            ..zero_aug
        };
        let (_, v) = total_loss(&mut tape, &parts, &attr_only).unwrap();
        assert_eq!(v.original, 1.0);
        let w = LossWeights {
            alpha: 0.5,
            beta: 0.25,
            lambda: 0.3,
            mu: 0.3,
            theta: 2.0,
            epsilon: 0.5,
        };
        let (_, v) = total_loss(&mut tape, &parts, &w).unwrap();
        let expect = 1.5 + 0.3 * 5.0 + 0.3 * (0.75 + 3.0) + 12.0;
        assert!((v.total - expect).abs() < 1e-12);
    }

    #[test]
    fn full_objective_gradients_match_finite_differences() {
        let g = toy_graph(3);
        let ctx = GraphContext::new(&g);
        let cfg = toy_cfg();
        let mut params = ModelParams::init(&g, &cfg, 3).unwrap();
        let ablation = Ablation::default();
        let stream = RngStream::new(3, "step");
        let plans = plan_step(&ctx, &cfg, &ablation, &stream).unwrap();
        let plan = PreparedPlan::new(&ctx, &plans, cfg.mask.repeats, false).unwrap();
        let mode = Mode::Train {
            dropout: 0.1,
            stream: stream.derive("dropout"),
        };
        let weights = LossWeights {
            theta: 0.5,
            ..LossWeights::default()
        };
        let ids: Vec<_> = params.store.ids().collect();
        let layout = params.clone();
        let err = finite_diff_check(&mut params.store, &ids, 1e-5, |tape, store| {
            let p = ModelParams {
                store: store.clone(),
                ..layout.clone()
            };
            Ok(training_loss(tape, &ctx, &p, &cfg, &plan, &ablation, &weights, &mode)?.0)
        })
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
