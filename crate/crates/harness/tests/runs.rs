//! Epoch-loop semantics: record counts, rate bookkeeping, neutral settings, determinism.

use miles_core::datagen::SyntheticSpec;
use miles_core::{Action, EpochObservation, MslrVariant, SchedulerKind, Split};
use miles_harness::config::{Architecture, DatasetSource};
use miles_harness::runner::run_with_forced_tau;
use miles_harness::{run_experiment, runlog, HarnessError, RunConfig, RunLog};

fn small() -> RunConfig {
    RunConfig {
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            classes: 4,
            n_train: 160,
            n_val: 80,
            n_test: 80,
            dim_a: 8,
            dim_b: 8,
            ..SyntheticSpec::default()
        }),
        architecture: Architecture {
            hidden_a: vec![12],
            hidden_b: vec![12],
            latent_a: 6,
            latent_b: 6,
            ..Architecture::default()
        },
        epochs: 8,
        batch_size: 32,
        alpha: 5e-3,
        ..RunConfig::default()
    }
}

fn trajectory(log: &RunLog) -> Vec<u64> {
    log.records
        .iter()
        .flat_map(|r| {
            let mut v = vec![r.alpha_a, r.alpha_b, r.alpha_ab, r.train_loss.total];
            for s in Split::ALL {
                let e = r.split(s);
                v.extend([e.accuracy.ab, e.accuracy.a, e.accuracy.b, e.loss.total]);
            }
            v
        })
        .map(f64::to_bits)
        .collect()
}

#[test]
fn one_record_per_epoch() {
    let log = run_experiment(&small()).unwrap();
    assert_eq!(log.records.len(), 8);
    assert_eq!(
        log.records.iter().map(|r| r.epoch).collect::<Vec<_>>(),
        (1..=8).collect::<Vec<_>>()
    );
    assert!(log
        .records
        .iter()
        .all(|r| r.alpha_a > 0.0 && r.alpha_b > 0.0 && r.alpha_ab > 0.0));
}

#[test]
fn mu_one_replays_vanilla_bit_for_bit() {
    let base = small();
    let vanilla = run_experiment(&RunConfig {
        scheduler: SchedulerKind::Vanilla,
        ..base.clone()
    })
    .unwrap();
    let neutral = run_experiment(&base.with_miles(0.0, 1.0)).unwrap();
    assert_eq!(trajectory(&vanilla), trajectory(&neutral));
    assert!(
        neutral.records.iter().any(|r| r.action != Action::Reset),
        "the scaling branches should fire"
    );
}

#[test]
fn threshold_above_every_delta_resets_every_epoch() {
    let base = small();
    let vanilla = run_experiment(&RunConfig {
        scheduler: SchedulerKind::Vanilla,
        ..base.clone()
    })
    .unwrap();
    // 10 sits above any delta the data can produce; validation caps tau at 1, hence the hook
    let DatasetSource::Synthetic(spec) = &base.dataset else {
        unreachable!()
    };
    let data = miles_core::datagen::generate(spec).unwrap();
    let log = run_with_forced_tau(&base.with_miles(0.2, 0.5), &data, 10.0).unwrap();
    assert!(log.records.iter().all(|r| r.action == Action::Reset));
    assert!(log
        .records
        .iter()
        .all(|r| r.alpha_a == base.alpha && r.alpha_b == base.alpha && r.alpha_ab == base.alpha));
    assert_eq!(trajectory(&vanilla), trajectory(&log));
}

#[test]
fn rates_follow_the_previous_observation() {
    for scheduler in [
        SchedulerKind::Miles(miles_core::MilesConfig {
            tau: 0.05,
            mu: 0.25,
            utilization_split: Split::Validation,
        }),
        SchedulerKind::Mslr(MslrVariant::Smooth {
            gamma: 0.3,
            lr_a: 1e-3,
            lr_b: 4e-3,
        }),
        SchedulerKind::Mslr(MslrVariant::Dynamic { window: 2, factor: 0.1 }),
    ] {
        let cfg = RunConfig { scheduler, ..small() };
        let log = run_experiment(&cfg).unwrap();
        let mut state = scheduler.initial_state(cfg.alpha).unwrap();
        if let SchedulerKind::Miles(_) = scheduler {
            assert_eq!(state.rates(), [cfg.alpha; 3], "epoch 1 trains at the global rate");
        }
        for r in &log.records {
            assert_eq!(
                [r.alpha_a, r.alpha_b, r.alpha_ab],
                state.rates(),
                "{} epoch {}",
                scheduler.name(),
                r.epoch
            );
            let obs = EpochObservation::new(
                r.epoch,
                r.split(cfg.utilization_split).accuracy,
                r.split(Split::Validation).accuracy,
                cfg.utilization_split,
            );
            let (next, decision) = scheduler.step(&state, &obs).unwrap();
            assert_eq!(decision.action, r.action);
            state = next;
        }
    }
}

#[test]
fn keep_variant_holds_its_rates() {
    let cfg = RunConfig {
        scheduler: SchedulerKind::Mslr(MslrVariant::Keep { lr_a: 2e-3, lr_b: 7e-3 }),
        ..small()
    };
    let log = run_experiment(&cfg).unwrap();
    assert!(log
        .records
        .iter()
        .all(|r| (r.alpha_a, r.alpha_b, r.alpha_ab) == (2e-3, 7e-3, cfg.alpha)));
}

#[test]
fn early_stopping_can_end_a_run() {
    let cfg = RunConfig {
        scheduler: SchedulerKind::Mses { patience: 1 },
        epochs: 40,
        ..small()
    };
    let log = run_experiment(&cfg).unwrap();
    assert!(log.records.len() < 40, "no early stop within 40 epochs");
    // frozen flags only ever switch on
    for w in log.records.windows(2) {
        for g in 0..3 {
            assert!(!w[0].frozen[g] || w[1].frozen[g]);
        }
    }
}

#[test]
fn identical_configs_give_identical_logs() {
    let cfg = small();
    let a = runlog::render(&run_experiment(&cfg).unwrap());
    let b = runlog::render(&run_experiment(&cfg).unwrap());
    assert_eq!(a, b);
    let c = runlog::render(&run_experiment(&cfg.with_seed(1)).unwrap());
    assert_ne!(a, c);
}

#[test]
fn best_epoch_is_the_earliest_maximum() {
    let log = run_experiment(&small()).unwrap();
    let best = log.best.unwrap();
    let vals: Vec<f64> = log
        .records
        .iter()
        .map(|r| r.split(Split::Validation).accuracy.ab)
        .collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, vals.iter().position(|&v| v == max).unwrap());
    let summary = log.summary().unwrap();
    assert_eq!(summary.best_epoch, best + 1);
    let test = log.records[best].split(Split::Test).accuracy;
    assert_eq!(summary.gap, test.a - test.b);
}

#[test]
fn non_finite_loss_aborts_with_partial_log() {
    let cfg = RunConfig {
        alpha: 1e300,
        ..small()
    };
    match run_experiment(&cfg) {
        Err(HarnessError::Diverged { epoch, detail, partial }) => {
            assert!(epoch >= 1 && epoch <= cfg.epochs);
            assert!(detail.contains("batch"), "{detail}");
            assert_eq!(partial.records.len(), epoch - 1);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        RunConfig { epochs: 0, ..small() },
        RunConfig {
            batch_size: 0,
            ..small()
        },
        RunConfig { alpha: 0.0, ..small() },
        small().with_miles(0.2, 0.0),
    ] {
        assert!(matches!(
            run_experiment(&cfg),
            Err(HarnessError::Config(_)) | Err(HarnessError::Core(_))
        ));
    }
    let missing = RunConfig {
        dataset: DatasetSource::File("/definitely/not/here.bin".into()),
        ..small()
    };
    let err = run_experiment(&missing).unwrap_err();
    assert!(err.to_string().contains("/definitely/not/here.bin"));
}
