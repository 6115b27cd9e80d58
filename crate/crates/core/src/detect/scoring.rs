use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::MultiplexGraph;
use crate::model::{
    forward, plan_step, subgraph_struct_row, Ablation, GraphContext, LossWeights, Mode,
    ModelConfig, ModelParams, PreparedPlan, View, ViewRecon,
};
use crate::numerics::dense::norm2;
use crate::numerics::{DenseMatrix, RngStream, Tape};

pub const SCORES_HEADER: &str =
    "node_id,score_original,score_attr_aug,score_sub_aug,score_fused,flag";

/// Per-node scores of each view and their mean. Ablated views are `None`
/// and do not enter the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScores {
    pub original: Option<Vec<f64>>,
    pub attr_aug: Option<Vec<f64>>,
    pub sub_aug: Option<Vec<f64>>,
    pub fused: Vec<f64>,
}

impl AnomalyScores {
    /// Averages the available view scores.
    pub fn from_views(
        original: Option<Vec<f64>>,
        attr_aug: Option<Vec<f64>>,
        sub_aug: Option<Vec<f64>>,
    ) -> Result<Self> {
        let views: Vec<&Vec<f64>> = [&original, &attr_aug, &sub_aug]
            .into_iter()
            .flatten()
            .collect();
        let Some(first) = views.first() else {
            return Err(Error::EmptyList("anomaly score views"));
        };
        let n = first.len();
        if let Some(v) = views.iter().find(|v| v.len() != n) {
            return Err(Error::LengthMismatch(v.len(), n));
        }
        let fused = (0..n)
            .map(|i| views.iter().map(|v| v[i]).sum::<f64>() / views.len() as f64)
            .collect();
        Ok(Self {
            original,
            attr_aug,
            sub_aug,
            fused,
        })
    }

    pub fn len(&self) -> usize {
        self.fused.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fused.is_empty()
    }

    pub fn view(&self, v: View) -> Option<&[f64]> {
        match v {
            View::Original => self.original.as_deref(),
            View::AttrAug => self.attr_aug.as_deref(),
            View::SubAug => self.sub_aug.as_deref(),
        }
        .map(|s| s as &[f64])
    }

    /// Score table; ablated views leave their column empty.
    pub fn to_csv(&self, flags: &[u8]) -> Result<String> {
        if flags.len() != self.len() {
            return Err(Error::LengthMismatch(flags.len(), self.len()));
        }
        let cell = |v: Option<&[f64]>, i: usize| v.map(|s| s[i].to_string()).unwrap_or_default();
        let mut out = String::from(SCORES_HEADER);
        out.push('\n');
        for (i, flag) in flags.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{flag}",
                cell(self.view(View::Original), i),
                cell(self.view(View::AttrAug), i),
                cell(self.view(View::SubAug), i),
                self.fused[i]
            );
        }
        Ok(out)
    }

    pub fn write_csv(&self, flags: &[u8], path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv(flags)?).map_err(|e| Error::io(path, e))
    }

    /// Reads the `score_fused` and `flag` columns of a score table.
    pub fn read_fused(path: &Path) -> Result<(Vec<f64>, Vec<u8>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == SCORES_HEADER => {}
            _ => {
                return Err(Error::parse(
                    path,
                    1,
                    format!("expected header {SCORES_HEADER}"),
                ))
            }
        }
        let mut fused = Vec::new();
        let mut flags = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(Error::parse(path, ln + 1, "expected 6 columns"));
            }
            if cols[0].trim().parse::<usize>().ok() != Some(fused.len()) {
                return Err(Error::parse(
                    path,
                    ln + 1,
                    "node ids must be 0, 1, 2, ... in order",
                ));
            }
            fused.push(
                cols[4]
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, ln + 1, "bad score"))?,
            );
            flags.push(match cols[5].trim() {
                "0" => 0,
                "1" => 1,
                _ => return Err(Error::parse(path, ln + 1, "flag must be 0 or 1")),
            });
        }
        Ok((fused, flags))
    }
}

/// `ε · (1/R) Σ_r ‖sigmoid(X̃X̃ᵀ)(i,·) − A^r(i,·)‖₁ + (1 − ε) · ‖x̃(i) − x(i)‖₂` for every node.
pub fn view_scores(g: &MultiplexGraph, x_tilde: &DenseMatrix, epsilon: f64) -> Result<Vec<f64>> {
    let x = g.attributes().matrix();
    if x_tilde.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "view_scores",
            lhs: x_tilde.shape(),
            rhs: x.shape(),
        });
    }
    let n = g.node_count();
    let r_count = g.relation_count() as f64;
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x_tilde.row(i);
            let mut sig = vec![0.0; n];
            subgraph_struct_row(x_tilde, i, &mut sig);
            let row_total: f64 = sig.iter().sum();
            // |σ − 1| = 1 − σ on neighbours, |σ − 0| = σ elsewhere.
            let structure = g
                .relations()
                .iter()
                .map(|rel| {
                    row_total
                        + rel
                            .neighbors(i)
                            .iter()
                            .map(|&j| 1.0 - 2.0 * sig[j])
                            .sum::<f64>()
                })
                .sum::<f64>()
                / r_count;
            let diff: Vec<f64> = xi.iter().zip(x.row(i)).map(|(a, b)| a - b).collect();
            epsilon * structure + (1.0 - epsilon) * norm2(&diff)
        })
        .collect();
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite anomaly score at node {i}"
        )));
    }
    Ok(scores)
}

/// Same score with an explicit reconstructed structure matrix `Ã`.
pub fn residual_scores(
    g: &MultiplexGraph,
    a_tilde: &DenseMatrix,
    x_tilde: &DenseMatrix,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let n = g.node_count();
    if a_tilde.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            op: "residual_scores",
            lhs: a_tilde.shape(),
            rhs: (n, n),
        });
    }
    let x = g.attributes().matrix();
    Ok((0..n)
        .map(|i| {
            let structure = g
                .relations()
                .iter()
                .map(|rel| {
                    (0..n)
                        .map(|j| {
                            (a_tilde.get(i, j) - if rel.has_edge(i, j) { 1.0 } else { 0.0 }).abs()
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
                / g.relation_count() as f64;
            let diff: Vec<f64> = x_tilde
                .row(i)
                .iter()
                .zip(x.row(i))
                .map(|(a, b)| a - b)
                .collect();
            epsilon * structure + (1.0 - epsilon) * norm2(&diff)
        })
        .collect())
}

/// Scores precomputed per-view reconstructions.
pub fn score_reconstructions(
    g: &MultiplexGraph,
    recon: &ViewRecon<DenseMatrix>,
    epsilon: f64,
) -> Result<AnomalyScores> {
    let score = |m: Option<&DenseMatrix>| m.map(|m| view_scores(g, m, epsilon)).transpose();
    AnomalyScores::from_views(
        score(recon.get(View::Original))?,
        score(recon.get(View::AttrAug))?,
        score(recon.get(View::SubAug))?,
    )
}

/// Reconstructs every enabled view from fresh plans drawn from `rng`
/// (mean over repeats, no dropout).
pub fn reconstruct(
    g: &MultiplexGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
    ablation: &Ablation,
    rng: &RngStream,
) -> Result<ViewRecon<DenseMatrix>> {
    if params.is_untrained() {
        return Err(Error::UntrainedParams);
    }
    let ctx = GraphContext::new(g);
    let plans = plan_step(&ctx, cfg, ablation, rng)?;
    let plan = PreparedPlan::new(&ctx, &plans, cfg.mask.repeats, ablation.no_mask)?;
    let mut tape = Tape::new();
    let fwd = forward(&mut tape, &ctx, params, cfg, &plan, ablation, &Mode::Infer)?;
    let value = |v: Option<crate::numerics::Var>| v.map(|v| tape.value(v).clone());
    Ok(ViewRecon {
        original: value(fwd.recon.original),
        attr_aug: value(fwd.recon.attr_aug),
        sub_aug: value(fwd.recon.sub_aug),
    })
}

pub fn score_nodes(
    g: &MultiplexGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
    w: &LossWeights,
    ablation: &Ablation,
    rng: &RngStream,
) -> Result<AnomalyScores> {
    let recon = reconstruct(g, params, cfg, ablation, rng)?;
    score_reconstructions(g, &recon, w.epsilon)
}
