//! Seeded synthetic bimodal classification data and the `MILESDS1` file format.
//!
//! Generation is a pure function of [`SyntheticSpec`]: one ChaCha8 stream
//! seeded from `spec.seed` draws, in order, the A prototypes, the B prototypes,
//! the B mixing matrix (when `nonlinear_b`), and then the train, validation
//! and test splits (label shuffle, then per sample the A noise and B noise).

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::metrics::Split;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MILESDS1";
const HEADER_LEN: usize = 8 + 6 * 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalMode {
    /// Both modalities carry the full label, at different noise levels.
    Shared,
    /// The label factorizes as `y = c_a * k_b + c_b`; each modality carries one factor.
    Complementary { k_a: usize, k_b: usize },
}

impl SignalMode {
    fn code(self) -> u8 {
        match self {
            SignalMode::Shared => 0,
            SignalMode::Complementary { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub mode: SignalMode,
    pub classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub sigma_a: f64,
    pub sigma_b: f64,
    /// Standard deviation of every prototype coordinate.
    pub prototype_scale: f64,
    /// Pass the B prototypes through a seeded random linear map and `tanh`.
    pub nonlinear_b: bool,
    /// Gain of the B mixing map; entries are `N(0, gain² / dim_b)`.
    pub mix_gain: f64,
    /// Ratio between the most and least frequent class; 1 means balanced.
    pub imbalance: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// The dominant-A benchmark: A is clean and linear, B noisy and squashed.
    fn default() -> Self {
        Self {
            mode: SignalMode::Shared,
            classes: 10,
            n_train: 1000,
            n_val: 500,
            n_test: 500,
            dim_a: 32,
            dim_b: 32,
            sigma_a: 0.3,
            sigma_b: 1.2,
            prototype_scale: 0.5,
            nonlinear_b: true,
            mix_gain: 1.0,
            imbalance: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.classes > u16::MAX as usize + 1 {
            return Err(Error::Config("labels must fit in u16".into()));
        }
        if self.dim_a == 0 || self.dim_b == 0 {
            return Err(Error::Config("feature dimensions must be at least 1".into()));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::Config("every split needs at least one sample".into()));
        }
        if !(self.sigma_a >= 0.0 && self.sigma_b >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if !(self.prototype_scale > 0.0 && self.prototype_scale.is_finite()) {
            return Err(Error::Config(format!(
                "prototype scale must be positive, got {}",
                self.prototype_scale
            )));
        }
        if !(self.mix_gain > 0.0 && self.mix_gain.is_finite()) {
            return Err(Error::Config(format!(
                "mixing gain must be positive, got {}",
                self.mix_gain
            )));
        }
        if !(self.imbalance >= 1.0 && self.imbalance.is_finite()) {
            return Err(Error::Config(format!(
                "imbalance ratio must be >= 1, got {}",
                self.imbalance
            )));
        }
        if let SignalMode::Complementary { k_a, k_b } = self.mode {
            if k_a < 2 || k_b < 2 || k_a * k_b != self.classes {
                return Err(Error::Config(format!(
                    "complementary mode needs classes = k_a * k_b with both factors >= 2, got {} != {k_a} * {k_b}",
                    self.classes
                )));
            }
        }
        Ok(())
    }

    fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Validation => self.n_val,
            Split::Test => self.n_test,
        }
    }

    /// Per-class sample counts for a split of `n` samples.
    pub fn class_counts(&self, n: usize) -> Vec<usize> {
        let c = self.classes;
        if self.imbalance == 1.0 {
            return (0..c).map(|k| n / c + usize::from(k < n % c)).collect();
        }
        // geometric decay from 1 to 1/imbalance, largest-remainder rounding
        let weights: Vec<f64> = (0..c)
            .map(|k| self.imbalance.powf(-(k as f64) / (c - 1) as f64))
            .collect();
        let total: f64 = weights.iter().sum();
        let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&i, &j| {
            let (fi, fj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
            fj.total_cmp(&fi).then(i.cmp(&j))
        });
        let missing = n - counts.iter().sum::<usize>();
        for &k in order.iter().take(missing) {
            counts[k] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub features_a: Tensor<f64>,
    pub features_b: Tensor<f64>,
    pub labels: Vec<usize>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> SplitData {
        SplitData {
            features_a: self.features_a.select_rows(idx),
            features_b: self.features_b.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Train, validation and test splits of a bimodal task.
///
/// Equality compares the data only; `provenance` is not stored on disk.
#[derive(Debug, Clone)]
pub struct BimodalDataset {
    pub mode: SignalMode,
    pub classes: usize,
    pub splits: [SplitData; 3],
    pub provenance: Option<SyntheticSpec>,
}

impl PartialEq for BimodalDataset {
    fn eq(&self, other: &Self) -> bool {
        self.mode.code() == other.mode.code() && self.classes == other.classes && self.splits == other.splits
    }
}

impl BimodalDataset {
    pub fn split(&self, split: Split) -> &SplitData {
        &self.splits[split.index()]
    }

    pub fn dim_a(&self) -> usize {
        self.splits[0].features_a.cols()
    }

    pub fn dim_b(&self) -> usize {
        self.splits[0].features_b.cols()
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect()
        })
        .collect()
}

pub fn generate(spec: &SyntheticSpec) -> Result<BimodalDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (protos_a_n, protos_b_n) = match spec.mode {
        SignalMode::Shared => (spec.classes, spec.classes),
        SignalMode::Complementary { k_a, k_b } => (k_a, k_b),
    };
    let protos_a = gaussian_matrix(&mut rng, protos_a_n, spec.dim_a, spec.prototype_scale);
    let mut protos_b = gaussian_matrix(&mut rng, protos_b_n, spec.dim_b, spec.prototype_scale);
    if spec.nonlinear_b {
        let mix = gaussian_matrix(
            &mut rng,
            spec.dim_b,
            spec.dim_b,
            spec.mix_gain / (spec.dim_b as f64).sqrt(),
        );
        for p in &mut protos_b {
            *p = mix
                .iter()
                .map(|row| row.iter().zip(p.iter()).map(|(m, x)| m * x).sum::<f64>().tanh())
                .collect();
        }
    }

    let factor = |y: usize| -> (usize, usize) {
        match spec.mode {
            SignalMode::Shared => (y, y),
            SignalMode::Complementary { k_b, .. } => (y / k_b, y % k_b),
        }
    };

    let mut make_split = |split: Split| -> Result<SplitData> {
        let n = spec.split_size(split);
        let mut labels: Vec<usize> = spec
            .class_counts(n)
            .into_iter()
            .enumerate()
            .flat_map(|(c, k)| std::iter::repeat_n(c, k))
            .collect();
        labels.shuffle(&mut rng);
        let mut a = Vec::with_capacity(n * spec.dim_a);
        let mut b = Vec::with_capacity(n * spec.dim_b);
        for &y in &labels {
            let (ia, ib) = factor(y);
            for &x in &protos_a[ia] {
                let eps: f64 = StandardNormal.sample(&mut rng);
                a.push(x + spec.sigma_a * eps);
            }
            for &x in &protos_b[ib] {
                let eps: f64 = StandardNormal.sample(&mut rng);
                b.push(x + spec.sigma_b * eps);
            }
        }
        Ok(SplitData {
            features_a: Tensor::new(vec![n, spec.dim_a], a)?,
            features_b: Tensor::new(vec![n, spec.dim_b], b)?,
            labels,
        })
    };

    let train = make_split(Split::Train)?;
    let val = make_split(Split::Validation)?;
    let test = make_split(Split::Test)?;
    Ok(BimodalDataset {
        mode: spec.mode,
        classes: spec.classes,
        splits: [train, val, test],
        provenance: Some(spec.clone()),
    })
}

fn u32_field(name: &str, v: usize) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Input(format!("{name} = {v} does not fit in u32")))
}

/// Serializes to the `MILESDS1` layout.
///
/// Complementary factor sizes are not part of the header; a loaded
/// complementary dataset reports `k_a = classes, k_b = 1`.
pub fn encode(ds: &BimodalDataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32_field("classes", ds.classes)?);
    out.extend_from_slice(&u32_field("dim_a", ds.dim_a())?);
    out.extend_from_slice(&u32_field("dim_b", ds.dim_b())?);
    for s in &ds.splits {
        out.extend_from_slice(&u32_field("split size", s.len())?);
    }
    out.push(ds.mode.code());
    for s in &ds.splits {
        for x in s.features_a.data().iter().chain(s.features_b.data()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    for s in &ds.splits {
        for &y in &s.labels {
            let y = u16::try_from(y).map_err(|_| Error::Input(format!("label {y} does not fit in u16")))?;
            out.extend_from_slice(&y.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "need {n} bytes for {what} at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64_block(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8).ok_or_else(|| Error::Corrupt("size overflow".into()))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(buf: &[u8]) -> Result<BimodalDataset> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing MILESDS1 magic".into()));
    }
    if buf.len() < HEADER_LEN {
        return Err(Error::Corrupt(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            buf.len()
        )));
    }
    let mut r = Reader { buf, pos: MAGIC.len() };
    let classes = r.u32("classes")?;
    let dim_a = r.u32("dim_a")?;
    let dim_b = r.u32("dim_b")?;
    let sizes = [r.u32("n_train")?, r.u32("n_val")?, r.u32("n_test")?];
    let mode = match r.take(1, "mode")?[0] {
        0 => SignalMode::Shared,
        1 => SignalMode::Complementary { k_a: classes, k_b: 1 },
        other => return Err(Error::Format(format!("unknown signal mode {other}"))),
    };
    if classes < 2 || dim_a == 0 || dim_b == 0 || sizes.contains(&0) {
        return Err(Error::Format(format!(
            "degenerate header: classes {classes}, dims ({dim_a}, {dim_b}), splits {sizes:?}"
        )));
    }

    let mut features = Vec::with_capacity(3);
    for &n in &sizes {
        let a = r.f64_block(n * dim_a, "modality A features")?;
        let b = r.f64_block(n * dim_b, "modality B features")?;
        features.push((Tensor::new(vec![n, dim_a], a)?, Tensor::new(vec![n, dim_b], b)?));
    }
    let mut splits = Vec::with_capacity(3);
    for ((a, b), &n) in features.into_iter().zip(&sizes) {
        let raw = r.take(2 * n, "labels")?;
        let labels: Vec<usize> = raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
            .collect();
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Corrupt(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        splits.push(SplitData {
            features_a: a,
            features_b: b,
            labels,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let splits: [SplitData; 3] = splits.try_into().expect("three splits");
    Ok(BimodalDataset {
        mode,
        classes,
        splits,
        provenance: None,
    })
}

pub fn save(ds: &BimodalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ds)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<BimodalDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            classes: 3,
            n_train: 10,
            n_val: 4,
            n_test: 5,
            dim_a: 2,
            dim_b: 3,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn split_sizes_and_labels() {
        let ds = generate(&small()).unwrap();
        assert_eq!(ds.split(Split::Train).len(), 10);
        assert_eq!(ds.split(Split::Validation).features_a.shape(), &[4, 2]);
        assert_eq!(ds.split(Split::Test).features_b.shape(), &[5, 3]);
        assert!(ds.splits.iter().all(|s| s.labels.iter().all(|&y| y < 3)));
    }

    #[test]
    fn balanced_counts_differ_by_at_most_one() {
        let spec = small();
        for n in [1, 7, 10, 99] {
            let counts = spec.class_counts(n);
            assert_eq!(counts.iter().sum::<usize>(), n);
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn imbalanced_counts_decay() {
        let spec = SyntheticSpec {
            imbalance: 4.0,
            ..small()
        };
        let counts = spec.class_counts(70);
        assert_eq!(counts.iter().sum::<usize>(), 70);
        assert!(counts[0] > counts[1] && counts[1] > counts[2]);
        assert_eq!(counts, vec![40, 20, 10]);
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            SyntheticSpec { classes: 1, ..small() },
            SyntheticSpec {
                sigma_a: -1.0,
                ..small()
            },
            SyntheticSpec { n_val: 0, ..small() },
            SyntheticSpec {
                classes: 6,
                mode: SignalMode::Complementary { k_a: 2, k_b: 2 },
                ..small()
            },
            SyntheticSpec {
                classes: 3,
                mode: SignalMode::Complementary { k_a: 3, k_b: 1 },
                ..small()
            },
        ];
        for s in bad {
            assert!(matches!(generate(&s), Err(Error::Config(_))), "{s:?}");
        }
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut bytes = encode(&generate(&small()).unwrap()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        assert!(matches!(decode(b"MIL"), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_is_corruption() {
        let bytes = encode(&generate(&small()).unwrap()).unwrap();
        for cut in [HEADER_LEN - 1, HEADER_LEN + 3, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Corrupt(_))), "cut at {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Corrupt(_))));
    }

    #[test]
    fn header_layout_is_little_endian() {
        let bytes = encode(&generate(&small()).unwrap()).unwrap();
        assert_eq!(&bytes[..8], b"MILESDS1");
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        assert_eq!(&bytes[20..32], &[10, 0, 0, 0, 4, 0, 0, 0, 5, 0, 0, 0]);
        assert_eq!(bytes[32], 0);
        let features = (10 + 4 + 5) * (2 + 3) * 8;
        assert_eq!(bytes.len(), HEADER_LEN + features + (10 + 4 + 5) * 2);
    }
}
