//! Epoch loop: re-plan, record the objective, back-propagate, update.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::graph::MultiplexGraph;
use crate::model::{
    plan_step, training_loss, Ablation, GraphContext, LossValues, LossWeights, Mode, ModelConfig,
    ModelParams, PreparedPlan,
};
use crate::numerics::{Adam, AdamConfig, RngStream, Tape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Inverted dropout rate on encoder inputs.
    pub dropout: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Plans are redrawn at epochs that are multiples of this.
    pub replan_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            weight_decay: 0.01,
            dropout: 0.1,
            seed: 0,
            ablation: Ablation::default(),
            replan_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.replan_every == 0 {
            return Err(Error::Config("replan_every must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite())
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(Error::Config(
                "lr must be positive and weight_decay non-negative".into(),
            ));
        }
        self.ablation.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossValues,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

pub const LOG_HEADER: &str =
    "epoch,attr,struct,original,attr_aug,sub_attr,sub_struct,sub_aug,contrastive,total";

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.losses.total).collect()
    }

    /// Comma-separated loss table. Wall time is left out so that equal seeds
    /// give byte-identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let l = &r.losses;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                l.attr,
                l.structure,
                l.original,
                l.attr_aug,
                l.sub_attr,
                l.sub_struct,
                l.sub_aug,
                l.contrastive,
                l.total
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Parameters and optimizer state after training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: Adam,
    pub log: TrainLog,
}

fn epoch_error(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}: {msg}")),
        Error::DegenerateRow { row } => Error::Numerical(format!(
            "epoch {epoch}: zero-norm reconstruction at row {row}"
        )),
        other => other,
    }
}

/// Runs one step and returns the recorded losses.
fn step(
    ctx: &GraphContext,
    state: &mut TrainState,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    w: &LossWeights,
    plan: &PreparedPlan,
    epoch: usize,
) -> Result<LossValues> {
    let stream = RngStream::new(tcfg.seed, format!("epoch={epoch}"));
    let mode = Mode::Train {
        dropout: tcfg.dropout,
        stream: stream.derive("dropout"),
    };
    state.params.store.zero_grad();
    let mut tape = Tape::new();
    let (loss, values) = training_loss(
        &mut tape,
        ctx,
        &state.params,
        mcfg,
        plan,
        &tcfg.ablation,
        w,
        &mode,
    )?;
    if !values.total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss {}",
            values.total
        )));
    }
    tape.backward(loss, &mut state.params.store)?;
    state.optimizer.step(&mut state.params.store)?;
    Ok(values)
}

/// Trains from a fresh initialization.
pub fn train(
    g: &MultiplexGraph,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    w: &LossWeights,
) -> Result<TrainState> {
    tcfg.validate()?;
    w.validate()?;
    let params = ModelParams::init(g, mcfg, tcfg.seed)?;
    let optimizer = Adam::new(tcfg.adam(), &params.store);
    let mut state = TrainState {
        params,
        optimizer,
        log: TrainLog::default(),
    };
    continue_training(g, &mut state, mcfg, tcfg, w, tcfg.epochs)?;
    Ok(state)
}

/// Runs `epochs` further epochs on `state`, numbering them after those already logged.
pub fn continue_training(
    g: &MultiplexGraph,
    state: &mut TrainState,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    w: &LossWeights,
    epochs: usize,
) -> Result<()> {
    tcfg.validate()?;
    let ctx = GraphContext::new(g);
    let start = state.log.len();
    let mut plan: Option<PreparedPlan> = None;
    for epoch in start..start + epochs {
        let t0 = Instant::now();
        let plan_epoch = epoch - epoch % tcfg.replan_every;
        if plan.is_none() || plan_epoch == epoch {
            let stream = RngStream::new(tcfg.seed, format!("epoch={plan_epoch}"));
            let plans = plan_step(&ctx, mcfg, &tcfg.ablation, &stream)?;
            plan = Some(PreparedPlan::new(
                &ctx,
                &plans,
                mcfg.mask.repeats,
                tcfg.ablation.no_mask,
            )?);
        }
        let plan = plan.as_ref().expect("planned");
        let losses =
            step(&ctx, state, mcfg, tcfg, w, plan, epoch).map_err(|e| epoch_error(epoch, e))?;
        let wall_secs = t0.elapsed().as_secs_f64();
        log::info!("epoch {epoch}: total {:.6} ({wall_secs:.3}s)", losses.total);
        state.log.records.push(EpochRecord {
            epoch,
            losses,
            wall_secs,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SbmConfig;

    fn small() -> (MultiplexGraph, ModelConfig) {
        let g = SbmConfig {
            nodes: 40,
            ..SbmConfig::default()
        }
        .generate(5)
        .unwrap();
        let mcfg = ModelConfig {
            hidden_dim: 8,
            mask: crate::masking::MaskConfig {
                repeats: 2,
                ..Default::default()
            },
            ..ModelConfig::default()
        };
        (g, mcfg)
    }

    #[test]
    fn zero_epochs_rejected() {
        let (g, mcfg) = small();
        let tcfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&g, &mcfg, &tcfg, &LossWeights::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn everything_ablated_rejected() {
        let (g, mcfg) = small();
        let tcfg = TrainConfig {
            epochs: 1,
            ablation: Ablation {
                no_original: true,
                no_attr_aug: true,
                no_sub_aug: true,
                ..Ablation::default()
            },
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&g, &mcfg, &tcfg, &LossWeights::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn same_seed_same_log() {
        let (g, mcfg) = small();
        let tcfg = TrainConfig {
            epochs: 3,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&g, &mcfg, &tcfg, &LossWeights::default()).unwrap();
        let b = train(&g, &mcfg, &tcfg, &LossWeights::default()).unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.len(), 3);
    }

    #[test]
    fn split_training_matches_single_run() {
        let (g, mcfg) = small();
        let tcfg = TrainConfig {
            epochs: 4,
            replan_every: 3,
            ..TrainConfig::default()
        };
        let w = LossWeights::default();
        let whole = train(&g, &mcfg, &tcfg, &w).unwrap();
        let mut part = train(&g, &mcfg, &TrainConfig { epochs: 2, ..tcfg }, &w).unwrap();
        continue_training(&g, &mut part, &mcfg, &tcfg, &w, 2).unwrap();
        assert_eq!(whole.log.to_csv(), part.log.to_csv());
    }

    #[test]
    fn ablation_nesting_matches_zero_weights() {
        let (g, mcfg) = small();
        let base = TrainConfig {
            epochs: 3,
            seed: 2,
            ..TrainConfig::default()
        };
        let flags = TrainConfig {
            ablation: Ablation {
                no_attr_aug: true,
                no_sub_aug: true,
                no_dcl: true,
                ..Ablation::default()
            },
            ..base
        };
        let zero = LossWeights {
            lambda: 0.0,
            mu: 0.0,
            theta: 0.0,
            ..LossWeights::default()
        };
        let a = train(&g, &mcfg, &flags, &LossWeights::default()).unwrap();
        let b = train(&g, &mcfg, &base, &zero).unwrap();
        assert_eq!(a.log.totals(), b.log.totals());
    }
}
