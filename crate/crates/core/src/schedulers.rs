//! Per-modality learning-rate policies.
//!
//! Every policy is a pure transition `(state, observation) -> (state, decision)`.
//! The harness applies the decision to the *next* epoch. `alpha_ab` is set once
//! from the global learning rate and never changes.

use std::fmt;

use crate::error::{Error, Result};
use crate::metrics::{Split, UtilizationRecord};

/// Improvement a tracked metric must exceed to reset early-stopping patience.
pub const MSES_MIN_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Action {
    #[default]
    None,
    ScaledA,
    ScaledB,
    Reset,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::None => "none",
            Action::ScaledA => "scaled_a",
            Action::ScaledB => "scaled_b",
            Action::Reset => "reset",
        })
    }
}

impl std::str::FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "" => Ok(Action::None),
            "scaled_a" => Ok(Action::ScaledA),
            "scaled_b" => Ok(Action::ScaledB),
            "reset" => Ok(Action::Reset),
            other => Err(Error::Input(format!("unknown scheduler action `{other}`"))),
        }
    }
}

/// Fused, A and B metric values on one split.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TripleMetric {
    pub ab: f64,
    pub a: f64,
    pub b: f64,
}

/// What a scheduler sees at the end of an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochObservation {
    pub epoch: usize,
    /// Metrics on the split that drives utilization.
    pub metrics: TripleMetric,
    /// Validation metrics, used by the early-stopping and window baselines.
    pub validation: TripleMetric,
    pub utilization: UtilizationRecord,
}

impl EpochObservation {
    pub fn new(epoch: usize, metrics: TripleMetric, validation: TripleMetric, split: Split) -> Self {
        Self {
            epoch,
            metrics,
            validation,
            utilization: UtilizationRecord::from_metrics(metrics.ab, metrics.a, metrics.b, split),
        }
    }

    /// Observation carrying utilization values directly, for driving MILES by hand.
    pub fn from_utilization(epoch: usize, u_a: f64, u_b: f64) -> Self {
        Self {
            epoch,
            metrics: TripleMetric::default(),
            validation: TripleMetric::default(),
            utilization: UtilizationRecord {
                u_a,
                u_b,
                delta: (u_a - u_b).abs(),
                split: Split::Validation,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilesConfig {
    pub tau: f64,
    pub mu: f64,
    pub utilization_split: Split,
}

impl Default for MilesConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            mu: 0.5,
            utilization_split: Split::Validation,
        }
    }
}

impl MilesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::Config(format!("mu must lie in (0, 1], got {}", self.mu)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MslrVariant {
    /// Constant, separately tuned per-modality rates.
    Keep { lr_a: f64, lr_b: f64 },
    /// Rates pulled toward their mean by `gamma` each epoch, starting from `(lr_a, lr_b)`.
    Smooth { gamma: f64, lr_a: f64, lr_b: f64 },
    /// Rates grown or shrunk by `factor` from consecutive `window`-epoch means
    /// of the unimodal validation metric.
    Dynamic { window: usize, factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulerKind {
    Vanilla,
    Miles(MilesConfig),
    Mslr(MslrVariant),
    Mses { patience: usize },
}

impl SchedulerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::Vanilla => "vanilla",
            SchedulerKind::Miles(_) => "miles",
            SchedulerKind::Mslr(MslrVariant::Keep { .. }) => "mslr-k",
            SchedulerKind::Mslr(MslrVariant::Smooth { .. }) => "mslr-s",
            SchedulerKind::Mslr(MslrVariant::Dynamic { .. }) => "mslr-d",
            SchedulerKind::Mses { .. } => "mses",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SchedulerKind::Vanilla => Ok(()),
            SchedulerKind::Miles(cfg) => cfg.validate(),
            SchedulerKind::Mslr(MslrVariant::Keep { lr_a, lr_b }) => positive_rates(lr_a, lr_b),
            SchedulerKind::Mslr(MslrVariant::Smooth { gamma, lr_a, lr_b }) => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(Error::Config(format!("mslr-s gamma must lie in (0, 1], got {gamma}")));
                }
                positive_rates(lr_a, lr_b)
            }
            SchedulerKind::Mslr(MslrVariant::Dynamic { window, factor }) => {
                if window == 0 {
                    return Err(Error::Config("mslr-d window must be at least 1".into()));
                }
                if !(factor > 0.0 && factor < 1.0) {
                    return Err(Error::Config(format!("mslr-d factor must lie in (0, 1), got {factor}")));
                }
                Ok(())
            }
            SchedulerKind::Mses { patience } => {
                if patience == 0 {
                    return Err(Error::Config("mses patience must be at least 1".into()));
                }
                Ok(())
            }
        }
    }

    /// State before the first epoch.
    pub fn initial_state(&self, alpha: f64) -> Result<SchedulerState> {
        self.validate()?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!(
                "global learning rate must be positive, got {alpha}"
            )));
        }
        let (alpha_a, alpha_b) = match *self {
            SchedulerKind::Mslr(MslrVariant::Keep { lr_a, lr_b }) => (lr_a, lr_b),
            SchedulerKind::Mslr(MslrVariant::Smooth { lr_a, lr_b, .. }) => (lr_a, lr_b),
            _ => (alpha, alpha),
        };
        let history = match self {
            SchedulerKind::Mses { .. } => History::Mses(Default::default()),
            SchedulerKind::Mslr(MslrVariant::Dynamic { .. }) => History::Windows {
                a: Vec::new(),
                b: Vec::new(),
            },
            _ => History::None,
        };
        Ok(SchedulerState {
            alpha_ab: alpha,
            alpha_a,
            alpha_b,
            last_action: Action::None,
            history,
        })
    }

    /// Advances the scheduler by one observed epoch.
    pub fn step(&self, state: &SchedulerState, obs: &EpochObservation) -> Result<(SchedulerState, Decision)> {
        let mut next = state.clone();
        let mut decision = Decision {
            action: Action::None,
            frozen: [false; 3],
            stop: false,
        };
        match *self {
            SchedulerKind::Vanilla => {
                let (a, b) = vanilla_step(state);
                next.alpha_a = a;
                next.alpha_b = b;
            }
            SchedulerKind::Miles(cfg) => {
                let (a, b, action) = miles_step(state, obs, &cfg)?;
                next.alpha_a = a;
                next.alpha_b = b;
                decision.action = action;
            }
            SchedulerKind::Mslr(variant) => {
                let (a, b) = mslr_step(&mut next, obs, variant)?;
                next.alpha_a = a;
                next.alpha_b = b;
            }
            SchedulerKind::Mses { patience } => {
                let out = mses_step(&mut next, obs, patience)?;
                decision.frozen = [out.freeze_a, out.freeze_b, false];
                decision.stop = out.stop;
            }
        }
        next.last_action = decision.action;
        Ok((next, decision))
    }
}

fn positive_rates(a: f64, b: f64) -> Result<()> {
    if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "per-modality rates must be positive, got ({a}, {b})"
        )))
    }
}

/// Outcome of one scheduler step, applied to the next epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: Action,
    /// Groups excluded from optimizer updates, indexed like [`crate::GroupId`].
    pub frozen: [bool; 3],
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    pub alpha_ab: f64,
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub last_action: Action,
    pub history: History,
}

impl SchedulerState {
    /// Rates in group order (A, B, fusion).
    pub fn rates(&self) -> [f64; 3] {
        [self.alpha_a, self.alpha_b, self.alpha_ab]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum History {
    None,
    /// Unimodal validation metrics seen so far.
    Windows {
        a: Vec<f64>,
        b: Vec<f64>,
    },
    Mses(MsesHistory),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatienceTracker {
    pub best: f64,
    pub stale: usize,
    pub frozen_at: Option<usize>,
}

impl Default for PatienceTracker {
    fn default() -> Self {
        Self {
            best: f64::NEG_INFINITY,
            stale: 0,
            frozen_at: None,
        }
    }
}

impl PatienceTracker {
    fn observe(&mut self, epoch: usize, metric: f64, patience: usize) {
        if self.frozen_at.is_some() {
            return;
        }
        if metric > self.best + MSES_MIN_DELTA {
            self.best = metric;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= patience {
                self.frozen_at = Some(epoch);
            }
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen_at.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MsesHistory {
    pub a: PatienceTracker,
    pub b: PatienceTracker,
    pub fusion: PatienceTracker,
}

/// The MILES rate rule: returns `(alpha_a, alpha_b, action)`.
///
/// In the scaling branches only one rate is assigned; the other keeps its
/// value from `state`. Scaling is always relative to `alpha_ab`.
pub fn miles_step(state: &SchedulerState, obs: &EpochObservation, cfg: &MilesConfig) -> Result<(f64, f64, Action)> {
    let UtilizationRecord { u_a, u_b, delta, .. } = obs.utilization;
    if !(u_a.is_finite() && u_b.is_finite() && delta.is_finite()) {
        return Err(Error::Observation(format!(
            "epoch {}: utilization is not finite (u_a = {u_a}, u_b = {u_b}, delta = {delta})",
            obs.epoch
        )));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(state.alpha_ab > 0.0) {
        return Err(Error::Observation(format!(
            "alpha_ab must be positive, got {}",
            state.alpha_ab
        )));
    }
    let base = state.alpha_ab;
    let scaled = cfg.mu * base;
    let (mut a, mut b) = (state.alpha_a, state.alpha_b);

    // branches kept one-to-one with the algorithm, including the two that coincide
    #[allow(clippy::if_same_then_else)]
    let action = if delta <= cfg.tau || (u_a < 0.0 && u_b < 0.0) {
        a = base;
        b = base;
        Action::Reset
    } else if u_a > 0.0 && u_b < 0.0 {
        a = scaled;
        Action::ScaledA
    } else if u_a < 0.0 && u_b > 0.0 {
        b = scaled;
        Action::ScaledB
    } else if u_a < u_b {
        b = scaled;
        Action::ScaledB
    } else {
        a = scaled;
        Action::ScaledA
    };
    Ok((a, b, action))
}

pub fn vanilla_step(state: &SchedulerState) -> (f64, f64) {
    (state.alpha_ab, state.alpha_ab)
}

/// Modality-specific learning-rate baselines. Mutates `state.history` for the
/// window variant and returns the next `(alpha_a, alpha_b)`.
pub fn mslr_step(state: &mut SchedulerState, obs: &EpochObservation, variant: MslrVariant) -> Result<(f64, f64)> {
    match variant {
        MslrVariant::Keep { lr_a, lr_b } => {
            positive_rates(lr_a, lr_b)?;
            Ok((lr_a, lr_b))
        }
        MslrVariant::Smooth { gamma, .. } => {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::Config(format!("mslr-s gamma must lie in (0, 1], got {gamma}")));
            }
            let mean = 0.5 * (state.alpha_a + state.alpha_b);
            let pull = |lr: f64| lr + gamma * (mean - lr);
            Ok((pull(state.alpha_a), pull(state.alpha_b)))
        }
        MslrVariant::Dynamic { window, factor } => {
            if window == 0 || !(factor > 0.0 && factor < 1.0) {
                return Err(Error::Config(format!(
                    "invalid mslr-d parameters: window {window}, factor {factor}"
                )));
            }
            let History::Windows { a, b } = &mut state.history else {
                return Err(Error::Config("mslr-d state lacks metric history".into()));
            };
            a.push(obs.validation.a);
            b.push(obs.validation.b);
            let adjust = |lr: f64, hist: &[f64]| -> f64 {
                if hist.len() < 2 * window {
                    return lr;
                }
                let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
                let n = hist.len();
                let recent = mean(&hist[n - window..]);
                let previous = mean(&hist[n - 2 * window..n - window]);
                if recent > previous {
                    lr * (1.0 + factor)
                } else if recent < previous {
                    lr * (1.0 - factor)
                } else {
                    lr
                }
            };
            Ok((adjust(state.alpha_a, a), adjust(state.alpha_b, b)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsesOutcome {
    pub freeze_a: bool,
    pub freeze_b: bool,
    pub stop: bool,
}

/// Modality-specific early stopping on validation metrics. An encoder group
/// freezes for good once its metric fails to beat its best by more than
/// [`MSES_MIN_DELTA`] for `patience` consecutive epochs; the same rule on the
/// fused metric, together with both encoders frozen, raises the stop signal.
pub fn mses_step(state: &mut SchedulerState, obs: &EpochObservation, patience: usize) -> Result<MsesOutcome> {
    if patience == 0 {
        return Err(Error::Config("mses patience must be at least 1".into()));
    }
    let History::Mses(h) = &mut state.history else {
        return Err(Error::Config("mses state lacks patience trackers".into()));
    };
    h.a.observe(obs.epoch, obs.validation.a, patience);
    h.b.observe(obs.epoch, obs.validation.b, patience);
    h.fusion.observe(obs.epoch, obs.validation.ab, patience);
    Ok(MsesOutcome {
        freeze_a: h.a.is_frozen(),
        freeze_b: h.b.is_frozen(),
        stop: h.a.is_frozen() && h.b.is_frozen() && h.fusion.is_frozen(),
    })
}
