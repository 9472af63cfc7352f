//! The epoch loop: train, evaluate every split, compute utilization, step the scheduler.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use miles_core::datagen::{self, BimodalDataset, SplitData};
use miles_core::metrics::{accuracy, encoder_gap, macro_f1};
use miles_core::model::joint_loss;
use miles_core::{
    Action, EpochObservation, GroupId, JointLoss, MetricKind, MultimodalModel, Split, TripleMetric, UtilizationRecord,
};

use crate::config::{DatasetSource, RunConfig};
use crate::error::HarnessError;

/// Stream id of the minibatch shuffler, kept apart from the init stream.
const SHUFFLE_STREAM: u64 = 1;

/// Metrics of the three heads on one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitEval {
    pub accuracy: TripleMetric,
    pub macro_f1: TripleMetric,
    pub loss: JointLoss<f64>,
}

impl SplitEval {
    pub fn metric(&self, kind: MetricKind) -> TripleMetric {
        match kind {
            MetricKind::Accuracy => self.accuracy,
            MetricKind::MacroF1 => self.macro_f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Indexed by [`Split::index`].
    pub eval: [SplitEval; 3],
    /// Utilization on the configured split.
    pub utilization: UtilizationRecord,
    /// Rates used while training this epoch.
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub alpha_ab: f64,
    /// Scheduler decision taken after this epoch.
    pub action: Action,
    pub frozen: [bool; 3],
    /// Sample-weighted mean training loss over the epoch's minibatches.
    pub train_loss: JointLoss<f64>,
}

impl EpochRecord {
    pub fn split(&self, split: Split) -> &SplitEval {
        &self.eval[split.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: RunConfig,
    pub records: Vec<EpochRecord>,
    /// Index into `records` of the best validation fused metric, earliest on ties.
    pub best: Option<usize>,
}

/// Test-set numbers at the selected epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub best_epoch: usize,
    pub val_fused: f64,
    pub test: TripleMetric,
    /// Designated stronger encoder minus the other, on test.
    pub gap: f64,
}

impl RunLog {
    pub fn select_best(&mut self) {
        let metric = self.config.metric;
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in self.records.iter().enumerate() {
            let v = r.split(Split::Validation).metric(metric).ab;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        self.best = best.map(|(i, _)| i);
    }

    pub fn summary(&self) -> Option<RunSummary> {
        let r = &self.records[self.best?];
        let metric = self.config.metric;
        let test = r.split(Split::Test).metric(metric);
        let gap = match self.config.stronger {
            GroupId::ModalityB => encoder_gap(test.b, test.a),
            _ => encoder_gap(test.a, test.b),
        };
        Some(RunSummary {
            best_epoch: r.epoch,
            val_fused: r.split(Split::Validation).metric(metric).ab,
            test,
            gap,
        })
    }
}

pub fn load_dataset(source: &DatasetSource) -> Result<BimodalDataset, HarnessError> {
    Ok(match source {
        DatasetSource::Synthetic(spec) => datagen::generate(spec)?,
        DatasetSource::File(path) => datagen::load(path)?,
    })
}

pub fn evaluate(model: &MultimodalModel, data: &SplitData, classes: usize) -> Result<SplitEval, HarnessError> {
    let bundle = model.predict(&data.features_a, &data.features_b)?;
    let [p_ab, p_a, p_b] = bundle.predicted_classes();
    let y = &data.labels;
    Ok(SplitEval {
        accuracy: TripleMetric {
            ab: accuracy(&p_ab, y)?,
            a: accuracy(&p_a, y)?,
            b: accuracy(&p_b, y)?,
        },
        macro_f1: TripleMetric {
            ab: macro_f1(&p_ab, y, classes)?,
            a: macro_f1(&p_a, y, classes)?,
            b: macro_f1(&p_b, y, classes)?,
        },
        loss: joint_loss(&bundle, y)?,
    })
}

pub fn run_experiment(config: &RunConfig) -> Result<RunLog, HarnessError> {
    config.validate()?;
    let data = load_dataset(&config.dataset)?;
    run_on(config, &data)
}

/// Runs one training job on an already loaded dataset.
pub fn run_on(config: &RunConfig, data: &BimodalDataset) -> Result<RunLog, HarnessError> {
    run_inner(config, data, None)
}

/// Test hook: runs a validated MILES configuration but steps the scheduler
/// with `tau` in place of the configured threshold, which may exceed the
/// admissible range (e.g. `tau = 10` to sit above every possible delta).
#[doc(hidden)]
pub fn run_with_forced_tau(config: &RunConfig, data: &BimodalDataset, tau: f64) -> Result<RunLog, HarnessError> {
    run_inner(config, data, Some(tau))
}

fn run_inner(config: &RunConfig, data: &BimodalDataset, forced_tau: Option<f64>) -> Result<RunLog, HarnessError> {
    config.validate()?;
    let model_cfg = config
        .architecture
        .model_config(data.dim_a(), data.dim_b(), data.classes, config.seed);
    let mut model = MultimodalModel::init(model_cfg)?;

    let mut scheduler = config.scheduler;
    if let miles_core::SchedulerKind::Miles(ref mut m) = scheduler {
        m.utilization_split = config.utilization_split;
    }
    let mut state = scheduler.initial_state(config.alpha)?;
    if let (Some(tau), miles_core::SchedulerKind::Miles(ref mut m)) = (forced_tau, &mut scheduler) {
        m.tau = tau;
    }
    let mut frozen = [false; 3];

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);

    let train = data.split(Split::Train);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = RunLog {
        config: config.clone(),
        records: Vec::with_capacity(config.epochs),
        best: None,
    };

    for epoch in 1..=config.epochs {
        let rates = state.rates();
        order.shuffle(&mut rng);

        let mut sums = [0.0f64; 4];
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = train.select(chunk);
            let step = model.train_step(&batch.features_a, &batch.features_b, &batch.labels, rates, frozen);
            let loss = match step {
                Ok(l) if l.total.is_finite() => l,
                Ok(l) => return Err(diverged(log, epoch, format!("batch {bi}: loss {}", l.total))),
                Err(miles_core::Error::Numeric(msg)) => return Err(diverged(log, epoch, format!("batch {bi}: {msg}"))),
                Err(e) => return Err(e.into()),
            };
            let w = chunk.len() as f64;
            sums[0] += w * loss.total;
            sums[1] += w * loss.ab;
            sums[2] += w * loss.a;
            sums[3] += w * loss.b;
        }
        let n = train.len() as f64;
        let train_loss = JointLoss {
            total: sums[0] / n,
            ab: sums[1] / n,
            a: sums[2] / n,
            b: sums[3] / n,
        };

        let eval = [
            evaluate(&model, data.split(Split::Train), data.classes)?,
            evaluate(&model, data.split(Split::Validation), data.classes)?,
            evaluate(&model, data.split(Split::Test), data.classes)?,
        ];
        let driving = eval[config.utilization_split.index()].metric(config.metric);
        let validation = eval[Split::Validation.index()].metric(config.metric);
        let obs = EpochObservation::new(epoch, driving, validation, config.utilization_split);
        let (next, decision) = scheduler.step(&state, &obs)?;

        log.records.push(EpochRecord {
            epoch,
            eval,
            utilization: obs.utilization,
            alpha_a: rates[0],
            alpha_b: rates[1],
            alpha_ab: rates[2],
            action: decision.action,
            frozen,
            train_loss,
        });

        state = next;
        frozen = decision.frozen;
        if decision.stop {
            break;
        }
    }

    log.select_best();
    Ok(log)
}

fn diverged(mut log: RunLog, epoch: usize, detail: String) -> HarnessError {
    log.select_best();
    HarnessError::Diverged {
        epoch,
        detail,
        partial: Box::new(log),
    }
}
