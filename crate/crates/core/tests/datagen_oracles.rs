//! Synthetic data checked with nearest-prototype and Bayes oracles.

use std::collections::HashMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use miles_core::datagen::{self, BimodalDataset, SignalMode, SplitData, SyntheticSpec};
use miles_core::optim::ParamGroup;
use miles_core::{GradientTape, GroupId, Split, Tensor};

fn shared(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    }
}

/// Class prototypes as seen through a noiseless copy of the spec. Noise
/// levels do not change the prototype draws, so these are the exact centers
/// of the noisy dataset with the same seed.
fn prototypes(spec: &SyntheticSpec) -> (HashMap<usize, Vec<f64>>, HashMap<usize, Vec<f64>>) {
    let clean = datagen::generate(&SyntheticSpec {
        sigma_a: 0.0,
        sigma_b: 0.0,
        ..spec.clone()
    })
    .unwrap();
    let mut pa = HashMap::new();
    let mut pb = HashMap::new();
    for s in &clean.splits {
        for (i, &y) in s.labels.iter().enumerate() {
            pa.entry(y).or_insert_with(|| s.features_a.row(i).to_vec());
            pb.entry(y).or_insert_with(|| s.features_b.row(i).to_vec());
        }
    }
    (pa, pb)
}

fn nearest(protos: &HashMap<usize, Vec<f64>>, x: &[f64]) -> usize {
    let mut keys: Vec<&usize> = protos.keys().collect();
    keys.sort();
    let d2 = |p: &[f64]| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    *keys
        .into_iter()
        .min_by(|&&i, &&j| d2(&protos[&i]).total_cmp(&d2(&protos[&j])))
        .unwrap()
}

fn nearest_accuracy(protos: &HashMap<usize, Vec<f64>>, features: &Tensor, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| nearest(protos, features.row(i)) == y)
        .count();
    hits as f64 / labels.len() as f64
}

#[test]
fn noiseless_modality_a_is_perfectly_separable() {
    let spec = SyntheticSpec {
        sigma_a: 0.0,
        ..shared(3)
    };
    let ds = datagen::generate(&spec).unwrap();
    let (pa, _) = prototypes(&spec);
    assert_eq!(pa.len(), spec.classes);
    for s in &ds.splits {
        assert_eq!(nearest_accuracy(&pa, &s.features_a, &s.labels), 1.0);
    }
}

#[test]
fn overwhelming_noise_leaves_chance_accuracy() {
    let spec = SyntheticSpec {
        sigma_a: 50.0 * 1.0,
        sigma_b: 50.0 * 1.0,
        prototype_scale: 1.0,
        n_train: 2000,
        n_val: 2000,
        n_test: 2000,
        ..shared(4)
    };
    let ds = datagen::generate(&spec).unwrap();
    let (pa, pb) = prototypes(&spec);
    let chance = 1.0 / spec.classes as f64;
    for s in &ds.splits {
        let acc_a = nearest_accuracy(&pa, &s.features_a, &s.labels);
        let acc_b = nearest_accuracy(&pb, &s.features_b, &s.labels);
        assert!((acc_a - chance).abs() <= 0.05, "A accuracy {acc_a}");
        assert!((acc_b - chance).abs() <= 0.05, "B accuracy {acc_b}");
    }
}

fn key(row: &[f64]) -> Vec<u64> {
    row.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn complementary_signal_needs_both_modalities() {
    let spec = SyntheticSpec {
        mode: SignalMode::Complementary { k_a: 2, k_b: 2 },
        classes: 4,
        sigma_a: 0.0,
        sigma_b: 0.0,
        n_train: 400,
        n_val: 200,
        n_test: 200,
        ..shared(5)
    };
    let ds = datagen::generate(&spec).unwrap();
    let test = ds.split(Split::Test);

    // Best possible A-only rule on the test split: predict the majority label
    // among samples sharing the same A vector.
    let mut groups: HashMap<Vec<u64>, HashMap<usize, usize>> = HashMap::new();
    for (i, &y) in test.labels.iter().enumerate() {
        *groups
            .entry(key(test.features_a.row(i)))
            .or_default()
            .entry(y)
            .or_default() += 1;
    }
    assert_eq!(groups.len(), 2, "A carries exactly one binary factor");
    let best: usize = groups.values().map(|m| *m.values().max().unwrap()).sum();
    let acc = best as f64 / test.len() as f64;
    assert!(acc <= 0.5 + 0.05, "A-only Bayes accuracy {acc}");

    // Nearest prototype on concatenated features, prototypes from train.
    let train = ds.split(Split::Train);
    let concat = |s: &SplitData, i: usize| -> Vec<f64> {
        s.features_a.row(i).iter().chain(s.features_b.row(i)).copied().collect()
    };
    let mut protos = HashMap::new();
    for (i, &y) in train.labels.iter().enumerate() {
        protos.entry(y).or_insert_with(|| concat(train, i));
    }
    assert_eq!(protos.len(), 4);
    let hits = (0..test.len())
        .filter(|&i| nearest(&protos, &concat(test, i)) == test.labels[i])
        .count();
    assert_eq!(hits, test.len());
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let a = datagen::generate(&shared(9)).unwrap();
    let b = datagen::generate(&shared(9)).unwrap();
    let c = datagen::generate(&shared(10)).unwrap();
    assert_eq!(datagen::encode(&a).unwrap(), datagen::encode(&b).unwrap());
    assert_ne!(a, c);
}

#[test]
fn splits_are_stratified() {
    let ds = datagen::generate(&SyntheticSpec {
        n_train: 1003,
        n_val: 497,
        ..shared(1)
    })
    .unwrap();
    for s in &ds.splits {
        let mut counts = vec![0usize; ds.classes];
        for &y in &s.labels {
            counts[y] += 1;
        }
        assert!(
            counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1,
            "{counts:?}"
        );
    }
}

#[test]
fn file_roundtrip_through_disk() {
    let ds = datagen::generate(&shared(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.bin");
    datagen::save(&ds, &path).unwrap();
    let back = datagen::load(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(std::fs::read(&path).unwrap(), datagen::encode(&back).unwrap());
}

#[test]
fn missing_file_reports_its_path() {
    let err = datagen::load("/nonexistent/dir/data.bin").unwrap_err();
    assert!(err.to_string().contains("/nonexistent/dir/data.bin"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encode_decode_is_bit_exact(
        classes in 2usize..6,
        dims in (1usize..5, 1usize..5),
        sizes in (1usize..20, 1usize..10, 1usize..10),
        nonlinear in any::<bool>(),
        imbalance in 1.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let spec = SyntheticSpec {
            classes,
            dim_a: dims.0,
            dim_b: dims.1,
            n_train: sizes.0,
            n_val: sizes.1,
            n_test: sizes.2,
            nonlinear_b: nonlinear,
            imbalance,
            seed,
            ..SyntheticSpec::default()
        };
        let ds = datagen::generate(&spec).unwrap();
        let bytes = datagen::encode(&ds).unwrap();
        let back = datagen::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(datagen::encode(&back).unwrap(), bytes);
    }
}

/// Trains a softmax-regression probe on one modality; returns validation accuracy per epoch.
fn linear_probe(ds: &BimodalDataset, use_a: bool, seed: u64, epochs: usize) -> Vec<f64> {
    let pick = |s: &SplitData| {
        if use_a {
            s.features_a.clone()
        } else {
            s.features_b.clone()
        }
    };
    let train = ds.split(Split::Train);
    let val = ds.split(Split::Validation);
    let (xt, xv) = (pick(train), pick(val));
    let (d, c) = (xt.cols(), ds.classes);
    let mut group = ParamGroup::new(GroupId::ModalityA, vec![Tensor::zeros(&[d, c]), Tensor::zeros(&[c])]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(64) {
            let mut tape = GradientTape::new();
            let x = tape.constant(xt.select_rows(chunk));
            let w = tape.param(group.params()[0].clone());
            let b = tape.param(group.params()[1].clone());
            let z = tape.dense(x, w, b).unwrap();
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let loss = tape.softmax_cross_entropy(z, &y).unwrap();
            let g = tape.backward(loss).unwrap();
            group.adam_step(&[g.wrt(&tape, w), g.wrt(&tape, b)], 1e-3).unwrap();
        }
        let logits = xv.matmul(&group.params()[0]).unwrap();
        let bias = group.params()[1].data();
        let pred: Vec<usize> = (0..logits.rows())
            .map(|i| {
                let row: Vec<f64> = logits.row(i).iter().zip(bias).map(|(v, b)| v + b).collect();
                (0..c)
                    .max_by(|&p, &q| row[p].total_cmp(&row[q]).then(q.cmp(&p)))
                    .unwrap()
            })
            .collect();
        curve.push(miles_core::metrics::accuracy(&pred, &val.labels).unwrap());
    }
    curve
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn modality_a_is_learned_faster_and_better_than_b() {
    let epochs = 15;
    let mut final_a = Vec::new();
    let mut final_b = Vec::new();
    let mut reach_a = Vec::new();
    let mut reach_b = Vec::new();
    for seed in 0..5 {
        let ds = datagen::generate(&shared(seed)).unwrap();
        let ca = linear_probe(&ds, true, seed, epochs);
        let cb = linear_probe(&ds, false, seed, epochs);
        // epochs until the probe stays within one point of its final accuracy
        let reach = |c: &[f64]| {
            let last = c[c.len() - 1];
            let settled = c.iter().rposition(|&v| (v - last).abs() > 0.01).map_or(0, |i| i + 1);
            (settled + 1) as f64
        };
        reach_a.push(reach(&ca));
        reach_b.push(reach(&cb));
        final_a.push(ca[epochs - 1]);
        final_b.push(cb[epochs - 1]);
    }
    let (fa, fb) = (median(final_a), median(final_b));
    let (ra, rb) = (median(reach_a), median(reach_b));
    assert!(fa > fb, "final accuracy A {fa} vs B {fb}");
    assert!(ra < rb, "epochs to settle: A {ra} vs B {rb}");
}
