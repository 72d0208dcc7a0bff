//! The pre-trained anomaly detector: a two-layer graph-convolutional
//! encoder feeding a linear scorer.
//!
//! Both encoder layers multiply by an [`AggregationOperator`], so the
//! same weights drive two distinct forward passes: the deployed one
//! over the normalized adjacency, and an aggregation-free twin
//! ([`encode_dual`]) that swaps the operator for the identity and
//! therefore sees only each node's own features. Adaptation treats the
//! weights as read-only; the only trainable pieces live in
//! [`crate::tune`].

mod pretrain;

pub use pretrain::{pretrain, pretrain_with_history, PositiveWeight, PretrainConfig, PretrainHistory};
pub(crate) use pretrain::glorot;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{identity_operator, AggregationOperator};
use crate::tensorcore::{Tape, Tensor};

/// Frozen detector weights. Instances are immutable; pretraining
/// assembles one from raw tensors once its loop finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct GadModel {
    w1: Tensor,
    w2: Tensor,
    w_det: Tensor,
    b_det: Tensor,
    frozen: bool,
}

impl GadModel {
    /// Validates shapes (`w1` d×h, `w2` h×r, `w_det` r×1, `b_det` 1×1)
    /// and finiteness; the result is frozen.
    pub fn new(w1: Tensor, w2: Tensor, w_det: Tensor, b_det: Tensor) -> Result<GadModel> {
        if w1.cols() != w2.rows() {
            return Err(Error::shape(
                "GadModel::new",
                format!("w1 is {:?}, w2 is {:?}", w1.shape(), w2.shape()),
            ));
        }
        if w_det.shape() != (w2.cols(), 1) {
            return Err(Error::shape(
                "GadModel::new",
                format!("w_det is {:?}, expected ({}, 1)", w_det.shape(), w2.cols()),
            ));
        }
        if b_det.shape() != (1, 1) {
            return Err(Error::shape(
                "GadModel::new",
                format!("b_det is {:?}, expected (1, 1)", b_det.shape()),
            ));
        }
        for (name, t) in [("w1", &w1), ("w2", &w2), ("w_det", &w_det), ("b_det", &b_det)] {
            if !t.is_finite() {
                return Err(Error::arg("GadModel::new", format!("{} contains a non-finite value", name)));
            }
        }
        Ok(GadModel { w1, w2, w_det, b_det, frozen: true })
    }

    pub fn feat_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn repr_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn weights(&self) -> [&Tensor; 4] {
        [&self.w1, &self.w2, &self.w_det, &self.b_det]
    }

    /// Bit-level equality of all weights; the freeze checks use this.
    pub fn bits_eq(&self, other: &GadModel) -> bool {
        self.w1.bits_eq(&other.w1)
            && self.w2.bits_eq(&other.w2)
            && self.w_det.bits_eq(&other.w_det)
            && self.b_det.bits_eq(&other.b_det)
    }
}

/// Node representations `H = Op · relu(Op · X · W1) · W2`.
pub fn encode(op: &AggregationOperator, x: &Tensor, m: &GadModel) -> Result<Tensor> {
    let tape = Tape::new();
    encode_on_tape(&tape, op, x, m)
}

/// The aggregation-free twin: [`encode`] with the identity operator,
/// so node i's representation is a function of feature row i alone.
pub fn encode_dual(x: &Tensor, m: &GadModel) -> Result<Tensor> {
    encode(&identity_operator(x.rows()), x, m)
}

/// Anomaly logits `s = H · w_det + b`; higher means more anomalous.
pub fn detect(h: &Tensor, m: &GadModel) -> Result<Tensor> {
    let tape = Tape::new();
    detect_on_tape(&tape, h, m)
}

/// [`encode`] recorded on a caller-supplied tape; the traced operand,
/// if any, is the feature matrix while the weights stay constant.
pub(crate) fn encode_on_tape(
    tape: &Tape,
    op: &AggregationOperator,
    x: &Tensor,
    m: &GadModel,
) -> Result<Tensor> {
    encode_raw(tape, op, x, &m.w1, &m.w2)
}

pub(crate) fn detect_on_tape(tape: &Tape, h: &Tensor, m: &GadModel) -> Result<Tensor> {
    detect_raw(tape, h, &m.w_det, &m.b_det)
}

/// Encoder forward over explicit weight tensors; pretraining passes
/// traced weights here, adaptation passes traced features instead.
pub(crate) fn encode_raw(
    tape: &Tape,
    op: &AggregationOperator,
    x: &Tensor,
    w1: &Tensor,
    w2: &Tensor,
) -> Result<Tensor> {
    if x.cols() != w1.rows() {
        return Err(Error::shape(
            "encode",
            format!("{} feature columns, model expects {}", x.cols(), w1.rows()),
        ));
    }
    if op.matrix().n() != x.rows() {
        return Err(Error::shape(
            "encode",
            format!("operator is {0}x{0}, features have {1} rows", op.matrix().n(), x.rows()),
        ));
    }
    let pre = tape.spmm(op.matrix(), &tape.matmul(x, w1)?)?;
    let hidden = tape.relu(&pre)?;
    tape.spmm(op.matrix(), &tape.matmul(&hidden, w2)?)
}

pub(crate) fn detect_raw(tape: &Tape, h: &Tensor, w_det: &Tensor, b_det: &Tensor) -> Result<Tensor> {
    if h.cols() != w_det.rows() {
        return Err(Error::shape(
            "detect",
            format!("{} representation columns, model expects {}", h.cols(), w_det.rows()),
        ));
    }
    tape.add_row(&tape.matmul(h, w_det)?, b_det)
}

/// Class-weighted cross-entropy of logits against labels, with the
/// positive weight set from the label counts. Reported for labeled
/// diagnostics only; adaptation never sees labels.
pub fn supervised_loss_diagnostic(scores: &Tensor, labels: &[u8]) -> Result<f64> {
    let anomalies = labels.iter().filter(|&&y| y == 1).count();
    let normals = labels.len() - anomalies;
    if anomalies == 0 || normals == 0 {
        return Err(Error::arg("supervised_loss_diagnostic", "both classes must be present"));
    }
    let tape = Tape::new();
    Ok(tape
        .bce_with_logits(scores, labels, normals as f64 / anomalies as f64)?
        .scalar())
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelCheckpoint {
    hidden_dim: usize,
    repr_dim: usize,
    #[serde(rename = "W1")]
    w1: Vec<Vec<f64>>,
    #[serde(rename = "W2")]
    w2: Vec<Vec<f64>>,
    w_det: Vec<Vec<f64>>,
    b_det: f64,
}

/// Writes the model as JSON. Floats are printed in shortest
/// round-trip form, so loading recovers the exact bits.
pub fn save_model(m: &GadModel, path: &Path) -> Result<()> {
    let checkpoint = ModelCheckpoint {
        hidden_dim: m.hidden_dim(),
        repr_dim: m.repr_dim(),
        w1: m.w1.to_nested(),
        w2: m.w2.to_nested(),
        w_det: m.w_det.to_nested(),
        b_det: m.b_det.scalar(),
    };
    let mut text = serde_json::to_string_pretty(&checkpoint).expect("checkpoint serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<GadModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: ModelCheckpoint =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let w1 = Tensor::from_nested(&checkpoint.w1).map_err(|e| Error::parse(path, e.to_string()))?;
    let w2 = Tensor::from_nested(&checkpoint.w2).map_err(|e| Error::parse(path, e.to_string()))?;
    let w_det = Tensor::from_nested(&checkpoint.w_det).map_err(|e| Error::parse(path, e.to_string()))?;
    let b_det = Tensor::from_vec(1, 1, vec![checkpoint.b_det]).expect("scalar");
    if w1.cols() != checkpoint.hidden_dim || w2.cols() != checkpoint.repr_dim {
        return Err(Error::parse(
            path,
            format!(
                "declared dims ({}, {}) disagree with matrices {:?}, {:?}",
                checkpoint.hidden_dim,
                checkpoint.repr_dim,
                w1.shape(),
                w2.shape()
            ),
        ));
    }
    GadModel::new(w1, w2, w_det, b_det)
}
