//! Two-encoder joint-fusion network with auxiliary unimodal heads.
//!
//! Parameter layout per group, in order:
//! - `ModalityA`: encoder A layers as `(W, b)` pairs, then head A `(W, b)`
//! - `ModalityB`: the same for modality B
//! - `Fusion`: the fusion head `(W, b)`
//!
//! The fusion head only sees the fused latents, so `loss_ab` never reaches
//! the unimodal heads and `loss_a` never reaches anything outside group A.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::{GroupId, ParamGroup};
use crate::scalar::Scalar;
use crate::tape::{GradientTape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionKind {
    Concat,
    Sum,
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::Concat => "concat",
            FusionKind::Sum => "sum",
        })
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "concat" | "concatenation" => Ok(FusionKind::Concat),
            "sum" | "summation" => Ok(FusionKind::Sum),
            other => Err(Error::Config(format!("unknown fusion kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_a: usize,
    pub input_b: usize,
    /// Hidden layer widths of encoder A, before the latent layer.
    pub hidden_a: Vec<usize>,
    pub hidden_b: Vec<usize>,
    pub latent_a: usize,
    pub latent_b: usize,
    pub classes: usize,
    pub fusion: FusionKind,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_a: 32,
            input_b: 32,
            hidden_a: vec![64],
            hidden_b: vec![64],
            latent_a: 32,
            latent_b: 32,
            classes: 10,
            fusion: FusionKind::Concat,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_a, self.input_b, self.latent_a, self.latent_b];
        if dims.iter().chain(&self.hidden_a).chain(&self.hidden_b).any(|&d| d == 0) {
            return Err(Error::Config("all layer dimensions must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.fusion == FusionKind::Sum && self.latent_a != self.latent_b {
            return Err(Error::Config(format!(
                "sum fusion needs equal latent widths, got {} and {}",
                self.latent_a, self.latent_b
            )));
        }
        Ok(())
    }

    fn fused_width(&self) -> usize {
        match self.fusion {
            FusionKind::Concat => self.latent_a + self.latent_b,
            FusionKind::Sum => self.latent_a,
        }
    }

    /// `(fan_in, fan_out)` of every encoder layer for one modality.
    fn encoder_dims(input: usize, hidden: &[usize], latent: usize) -> Vec<(usize, usize)> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(latent);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Fuses two latent matrices: columns of `z_a` then `z_b`, or their elementwise sum.
pub fn fuse<T: Scalar>(tape: &mut GradientTape<T>, z_a: Var, z_b: Var, kind: FusionKind) -> Result<Var> {
    match kind {
        FusionKind::Concat => tape.concat(z_a, z_b),
        FusionKind::Sum => {
            let (sa, sb) = (tape.value(z_a).shape().to_vec(), tape.value(z_b).shape().to_vec());
            if sa != sb {
                return Err(Error::Config(format!(
                    "sum fusion needs equal latent shapes, got {sa:?} and {sb:?}"
                )));
            }
            tape.add(z_a, z_b)
        }
    }
}

/// Logits of the three heads for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle<T> {
    pub logits_ab: Tensor<T>,
    pub logits_a: Tensor<T>,
    pub logits_b: Tensor<T>,
}

impl<T: Scalar> PredictionBundle<T> {
    pub fn predicted_classes(&self) -> [Vec<usize>; 3] {
        [
            self.logits_ab.argmax_rows(),
            self.logits_a.argmax_rows(),
            self.logits_b.argmax_rows(),
        ]
    }
}

/// Joint objective `loss_ab + loss_a + loss_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss<T> {
    pub total: T,
    pub ab: T,
    pub a: T,
    pub b: T,
}

/// Tape handles produced by one recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits_ab: Var,
    pub logits_a: Var,
    pub logits_b: Var,
    params: [Vec<Var>; 3],
}

impl ForwardPass {
    pub fn param_vars(&self, group: GroupId) -> &[Var] {
        &self.params[group.index()]
    }
}

/// Handles of the recorded loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub ab: Var,
    pub a: Var,
    pub b: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalModel<T> {
    config: ModelConfig,
    groups: [ParamGroup<T>; 3],
}

fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("consistent shape")
}

fn init_branch<T: Scalar>(rng: &mut ChaCha8Rng, layers: &[(usize, usize)]) -> Vec<Tensor<T>> {
    let mut out = Vec::with_capacity(2 * layers.len());
    for &(fan_in, fan_out) in layers {
        out.push(glorot(rng, fan_in, fan_out));
        out.push(Tensor::zeros(&[fan_out]));
    }
    out
}

impl<T: Scalar> MultimodalModel<T> {
    /// Glorot-uniform weights and zero biases, drawn from ChaCha8 seeded with
    /// `config.seed` in the order encoder A, head A, encoder B, head B, fusion head.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.classes;

        let mut layers_a = ModelConfig::encoder_dims(config.input_a, &config.hidden_a, config.latent_a);
        layers_a.push((config.latent_a, c));
        let mut layers_b = ModelConfig::encoder_dims(config.input_b, &config.hidden_b, config.latent_b);
        layers_b.push((config.latent_b, c));
        let layers_ab = [(config.fused_width(), c)];

        let groups = [
            ParamGroup::new(GroupId::ModalityA, init_branch(&mut rng, &layers_a)),
            ParamGroup::new(GroupId::ModalityB, init_branch(&mut rng, &layers_b)),
            ParamGroup::new(GroupId::Fusion, init_branch(&mut rng, &layers_ab)),
        ];
        Ok(Self { config, groups })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn group(&self, id: GroupId) -> &ParamGroup<T> {
        &self.groups[id.index()]
    }

    pub fn group_mut(&mut self, id: GroupId) -> &mut ParamGroup<T> {
        &mut self.groups[id.index()]
    }

    pub fn num_scalars(&self) -> usize {
        self.groups.iter().map(ParamGroup::num_scalars).sum()
    }

    /// Records a forward pass on `tape`. Parameters become tape leaves.
    pub fn forward(&self, tape: &mut GradientTape<T>, batch_a: &Tensor<T>, batch_b: &Tensor<T>) -> Result<ForwardPass> {
        self.forward_with(tape, batch_a, batch_b, true)
    }

    fn forward_with(
        &self,
        tape: &mut GradientTape<T>,
        batch_a: &Tensor<T>,
        batch_b: &Tensor<T>,
        trainable: bool,
    ) -> Result<ForwardPass> {
        let cfg = &self.config;
        if !batch_a.is_matrix() || batch_a.cols() != cfg.input_a {
            return Err(Error::shape(
                "forward (modality A)",
                batch_a.shape(),
                &[batch_a.rows(), cfg.input_a],
            ));
        }
        if !batch_b.is_matrix() || batch_b.cols() != cfg.input_b {
            return Err(Error::shape(
                "forward (modality B)",
                batch_b.shape(),
                &[batch_b.rows(), cfg.input_b],
            ));
        }
        if batch_a.rows() != batch_b.rows() {
            return Err(Error::shape("forward (batch sizes)", batch_a.shape(), batch_b.shape()));
        }

        let mut params: [Vec<Var>; 3] = Default::default();
        for id in GroupId::ALL {
            params[id.index()] = self.groups[id.index()]
                .params()
                .iter()
                .map(|p| {
                    if trainable {
                        tape.param(p.clone())
                    } else {
                        tape.constant(p.clone())
                    }
                })
                .collect();
        }

        let xa = tape.constant(batch_a.clone());
        let xb = tape.constant(batch_b.clone());
        let (z_a, logits_a) = branch(tape, xa, &params[GroupId::ModalityA.index()])?;
        let (z_b, logits_b) = branch(tape, xb, &params[GroupId::ModalityB.index()])?;
        let fused = fuse(tape, z_a, z_b, cfg.fusion)?;
        let fp = &params[GroupId::Fusion.index()];
        let logits_ab = tape.dense(fused, fp[0], fp[1])?;

        Ok(ForwardPass {
            logits_ab,
            logits_a,
            logits_b,
            params,
        })
    }

    /// Forward pass without gradient bookkeeping.
    pub fn predict(&self, batch_a: &Tensor<T>, batch_b: &Tensor<T>) -> Result<PredictionBundle<T>> {
        let mut tape = GradientTape::new();
        let pass = self.forward_with(&mut tape, batch_a, batch_b, false)?;
        Ok(PredictionBundle {
            logits_ab: tape.value(pass.logits_ab).clone(),
            logits_a: tape.value(pass.logits_a).clone(),
            logits_b: tape.value(pass.logits_b).clone(),
        })
    }

    /// Runs forward, the joint loss and backward on one minibatch, then applies
    /// Adam to every group not marked frozen, each at its own rate.
    pub fn train_step(
        &mut self,
        batch_a: &Tensor<T>,
        batch_b: &Tensor<T>,
        labels: &[usize],
        rates: [T; 3],
        frozen: [bool; 3],
    ) -> Result<JointLoss<T>> {
        let mut tape = GradientTape::new();
        let pass = self.forward(&mut tape, batch_a, batch_b)?;
        let loss = record_joint_loss(&mut tape, &pass, labels)?;
        let grads = tape.backward(loss.total)?;
        let out = JointLoss {
            total: tape.value(loss.total).data()[0],
            ab: tape.value(loss.ab).data()[0],
            a: tape.value(loss.a).data()[0],
            b: tape.value(loss.b).data()[0],
        };
        for id in GroupId::ALL {
            if frozen[id.index()] {
                continue;
            }
            let g: Vec<Tensor<T>> = pass.param_vars(id).iter().map(|&v| grads.wrt(&tape, v)).collect();
            self.groups[id.index()].adam_step(&g, rates[id.index()])?;
        }
        Ok(out)
    }
}

/// Dense+ReLU encoder followed by a linear head; returns `(latent, logits)`.
fn branch<T: Scalar>(tape: &mut GradientTape<T>, x: Var, params: &[Var]) -> Result<(Var, Var)> {
    let (encoder, head) = params.split_at(params.len() - 2);
    let mut h = x;
    for layer in encoder.chunks(2) {
        let pre = tape.dense(h, layer[0], layer[1])?;
        h = tape.relu(pre);
    }
    let logits = tape.dense(h, head[0], head[1])?;
    Ok((h, logits))
}

/// Records `loss_ab + loss_a + loss_b` on the tape of `pass`.
pub fn record_joint_loss<T: Scalar>(
    tape: &mut GradientTape<T>,
    pass: &ForwardPass,
    labels: &[usize],
) -> Result<LossVars> {
    let ab = tape.softmax_cross_entropy(pass.logits_ab, labels)?;
    let a = tape.softmax_cross_entropy(pass.logits_a, labels)?;
    let b = tape.softmax_cross_entropy(pass.logits_b, labels)?;
    let partial = tape.add(ab, a)?;
    let total = tape.add(partial, b)?;
    Ok(LossVars { total, ab, a, b })
}

/// Joint loss of already computed logits.
pub fn joint_loss<T: Scalar>(bundle: &PredictionBundle<T>, labels: &[usize]) -> Result<JointLoss<T>> {
    let mut tape = GradientTape::new();
    let mut term = |logits: &Tensor<T>| -> Result<T> {
        let z = tape.constant(logits.clone());
        let l = tape.softmax_cross_entropy(z, labels)?;
        Ok(tape.value(l).data()[0])
    };
    let ab = term(&bundle.logits_ab)?;
    let a = term(&bundle.logits_a)?;
    let b = term(&bundle.logits_b)?;
    Ok(JointLoss {
        total: ab + a + b,
        ab,
        a,
        b,
    })
}
