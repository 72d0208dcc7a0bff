//! Test-time adaptation of a frozen detector to a shifted graph.
//!
//! Nothing here reads labels and nothing here writes model weights.
//! The trainable state is two small parameter sets: a residual MLP
//! that nudges node features back toward the training distribution,
//! and a linear estimator that reconstructs aggregated
//! representations from aggregation-free ones. They are trained in
//! alternation against each other's frozen snapshot:
//!
//! * aligner phase: minimize the divergence between the main branch
//!   (full message passing over aligned features) and the dual branch
//!   (no message passing, estimator applied), estimator constant;
//! * estimator phase: re-score, pick nodes that look confidently
//!   normal to both branches, and fit the estimator so its dual-branch
//!   output matches the main branch on exactly those nodes, aligner
//!   constant.
//!
//! The estimator phase exists because message passing lets unfamiliar
//! neighbors distort a normal node's representation; fitting g on
//! trusted nodes gives the dual branch an aggregation-aware target
//! without ever trusting the contaminated scores wholesale.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gadmodel::{detect_raw, encode_raw, GadModel};
use crate::graph::{identity_operator, sym_normalize, AggregationOperator, Graph};
use crate::tensorcore::{adam_step, AdamState, Tape, Tensor};

/// Residual feature aligner: `X' = X + relu(X W_in + b_in) W_out + b_out`.
///
/// The output layer starts at exactly zero, so a fresh aligner is the
/// identity map and adaptation begins from the unadapted model.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignerParams {
    w_in: Tensor,
    b_in: Tensor,
    w_out: Tensor,
    b_out: Tensor,
}

impl AlignerParams {
    /// Fresh aligner for `d`-dimensional features: hidden width `d`,
    /// input layer Glorot-initialized from `rng`, output layer zero.
    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> AlignerParams {
        AlignerParams {
            w_in: crate::gadmodel::glorot(rng, d, d),
            b_in: Tensor::zeros(1, d),
            w_out: Tensor::zeros(d, d),
            b_out: Tensor::zeros(1, d),
        }
    }

    /// Rebuilds an aligner from explicit tensors, checking shapes.
    pub fn from_parts(w_in: Tensor, b_in: Tensor, w_out: Tensor, b_out: Tensor) -> Result<AlignerParams> {
        let (d, h) = w_in.shape();
        if b_in.shape() != (1, h) || w_out.shape() != (h, d) || b_out.shape() != (1, d) {
            return Err(Error::shape(
                "AlignerParams::from_parts",
                format!(
                    "w_in {:?}, b_in {:?}, w_out {:?}, b_out {:?}",
                    w_in.shape(),
                    b_in.shape(),
                    w_out.shape(),
                    b_out.shape()
                ),
            ));
        }
        Ok(AlignerParams { w_in, b_in, w_out, b_out })
    }

    pub fn feat_dim(&self) -> usize {
        self.w_in.rows()
    }

    pub fn parts(&self) -> [&Tensor; 4] {
        [&self.w_in, &self.b_in, &self.w_out, &self.b_out]
    }

    /// True while the output layer is exactly zero, i.e. the aligner
    /// still acts as the identity.
    pub fn is_identity(&self) -> bool {
        self.w_out.bits_eq(&Tensor::zeros(self.w_out.rows(), self.w_out.cols()))
            && self.b_out.bits_eq(&Tensor::zeros(1, self.b_out.cols()))
    }
}

/// Linear reconstruction of aggregated representations,
/// `H_dual = H_ego W + b`, initialized to the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorParams {
    weight: Tensor,
    bias: Tensor,
}

impl EstimatorParams {
    pub fn identity(repr_dim: usize) -> EstimatorParams {
        EstimatorParams { weight: Tensor::identity(repr_dim), bias: Tensor::zeros(1, repr_dim) }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<EstimatorParams> {
        let r = weight.rows();
        if weight.cols() != r || bias.shape() != (1, r) {
            return Err(Error::shape(
                "EstimatorParams::from_parts",
                format!("weight {:?}, bias {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(EstimatorParams { weight, bias })
    }

    pub fn repr_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn parts(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn is_identity(&self) -> bool {
        self.weight.bits_eq(&Tensor::identity(self.repr_dim()))
            && self.bias.bits_eq(&Tensor::zeros(1, self.repr_dim()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AdaptConfig {
    /// Fraction of nodes each branch nominates as confidently normal.
    pub k_percent: f64,
    /// Alternation rounds; 0 skips training entirely and returns the
    /// initial (identity) parameters.
    pub outer_rounds: usize,
    pub aligner_steps_per_round: usize,
    pub estimator_steps_per_round: usize,
    pub lr_align: f64,
    pub lr_est: f64,
    /// Softmax temperature turning representation rows into channel
    /// distributions for the divergence losses.
    pub temperature: f64,
    /// When false, the estimator keeps its identity initialization and
    /// the dual branch stays raw ego features.
    pub estimator_enabled: bool,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            k_percent: 0.2,
            outer_rounds: 20,
            aligner_steps_per_round: 2,
            estimator_steps_per_round: 2,
            lr_align: 1e-3,
            lr_est: 1e-3,
            temperature: 1.0,
            estimator_enabled: true,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    fn validate(&self) -> Result<()> {
        if !(self.k_percent > 0.0 && self.k_percent <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "k_percent must be in (0, 1], got {}",
                self.k_percent
            )));
        }
        if self.outer_rounds >= 1 {
            if self.aligner_steps_per_round < 1 {
                return Err(Error::InvalidConfig("aligner_steps_per_round must be at least 1".into()));
            }
            if self.estimator_enabled && self.estimator_steps_per_round < 1 {
                return Err(Error::InvalidConfig(
                    "estimator_steps_per_round must be at least 1 when the estimator is enabled".into(),
                ));
            }
        }
        if !(self.lr_align > 0.0) || !(self.lr_est > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Align,
    Estimator,
}

/// One optimizer step (or skipped phase) in the adaptation trace.
/// `loss` is the objective value at that step's forward pass; a null
/// loss with `selected_count` 0 records a round whose estimator phase
/// found no confidently normal nodes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceEvent {
    pub round: usize,
    pub phase: Phase,
    pub step: usize,
    pub loss: Option<f64>,
    pub selected_count: Option<usize>,
}

/// `X' = X + MLP(X)`; the input is never mutated.
pub fn align(x: &Tensor, a: &AlignerParams) -> Result<Tensor> {
    let tape = Tape::new();
    align_on_tape(&tape, x, a.parts())
}

fn align_on_tape(tape: &Tape, x: &Tensor, [w_in, b_in, w_out, b_out]: [&Tensor; 4]) -> Result<Tensor> {
    if x.cols() != w_in.rows() {
        return Err(Error::shape(
            "align",
            format!("{} feature columns, aligner expects {}", x.cols(), w_in.rows()),
        ));
    }
    let hidden = tape.relu(&tape.add_row(&tape.matmul(x, w_in)?, b_in)?)?;
    let delta = tape.add_row(&tape.matmul(&hidden, w_out)?, b_out)?;
    tape.add(x, &delta)
}

/// Main branch: representations and logits over the graph's own
/// aggregation operator.
pub fn forward_main(op: &AggregationOperator, x_aligned: &Tensor, m: &GadModel) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    forward_main_on_tape(&tape, op, x_aligned, m)
}

fn forward_main_on_tape(
    tape: &Tape,
    op: &AggregationOperator,
    x_aligned: &Tensor,
    m: &GadModel,
) -> Result<(Tensor, Tensor)> {
    let h = encode_raw(tape, op, x_aligned, m.weights()[0], m.weights()[1])?;
    let s = detect_raw(tape, &h, m.weights()[2], m.weights()[3])?;
    Ok((h, s))
}

/// Dual branch: aggregation-free representations pushed through the
/// estimator, plus their logits. Depends on no edge anywhere.
pub fn forward_dual(x_aligned: &Tensor, m: &GadModel, e: &EstimatorParams) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    let [weight, bias] = e.parts();
    forward_dual_on_tape(&tape, x_aligned, m, weight, bias)
}

fn forward_dual_on_tape(
    tape: &Tape,
    x_aligned: &Tensor,
    m: &GadModel,
    weight: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let identity = identity_operator(x_aligned.rows());
    let ego = encode_raw(tape, &identity, x_aligned, m.weights()[0], m.weights()[1])?;
    let h_dual = tape.add_row(&tape.matmul(&ego, weight)?, bias)?;
    let s_dual = detect_raw(tape, &h_dual, m.weights()[2], m.weights()[3])?;
    Ok((h_dual, s_dual))
}

/// Divergence between the branches: rows softmaxed at `temperature`,
/// then mean row-wise KL with the main branch as first argument.
pub fn alignment_loss(h: &Tensor, h_dual: &Tensor, temperature: f64) -> Result<f64> {
    let tape = Tape::new();
    alignment_loss_on_tape(&tape, h, h_dual, temperature).map(|t| t.scalar())
}

fn alignment_loss_on_tape(tape: &Tape, h: &Tensor, h_dual: &Tensor, temperature: f64) -> Result<Tensor> {
    if h.shape() != h_dual.shape() {
        return Err(Error::shape(
            "alignment_loss",
            format!("{:?} vs {:?}", h.shape(), h_dual.shape()),
        ));
    }
    let p = tape.row_softmax(h, temperature)?;
    let q = tape.row_softmax(h_dual, temperature)?;
    tape.kl_rows(&p, &q)
}

/// Nodes in the lowest `ceil(k_percent * n)` of BOTH logit vectors,
/// ascending index; ties within a score broken by ascending index.
/// The intersection may be empty.
pub fn select_confident_normals(s: &[f64], s_dual: &[f64], k_percent: f64) -> Result<Vec<usize>> {
    if s.len() != s_dual.len() {
        return Err(Error::shape(
            "select_confident_normals",
            format!("{} vs {} scores", s.len(), s_dual.len()),
        ));
    }
    if !(k_percent > 0.0 && k_percent <= 1.0) {
        return Err(Error::arg(
            "select_confident_normals",
            format!("k_percent must be in (0, 1], got {}", k_percent),
        ));
    }
    let n = s.len();
    let count = ((k_percent * n as f64).ceil() as usize).min(n);
    let lowest = |scores: &[f64]| -> Vec<bool> {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let mut member = vec![false; n];
        for &i in order.iter().take(count) {
            member[i] = true;
        }
        member
    };
    let in_main = lowest(s);
    let in_dual = lowest(s_dual);
    Ok((0..n).filter(|&i| in_main[i] && in_dual[i]).collect())
}

/// [`alignment_loss`] restricted to `selected` rows (strictly
/// increasing indices). Empty selections are an error so the caller
/// decides how to proceed.
pub fn estimator_loss(h: &Tensor, h_dual: &Tensor, selected: &[usize], temperature: f64) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::NoConfidentNormals);
    }
    let tape = Tape::new();
    let h_sel = tape.gather_rows(h, selected)?;
    let d_sel = tape.gather_rows(h_dual, selected)?;
    alignment_loss_on_tape(&tape, &h_sel, &d_sel, temperature).map(|t| t.scalar())
}

/// Runs the alternating adaptation loop and returns the trained
/// aligner, the estimator, and the per-step loss trace. The graph's
/// labels, if any, are never read; the model is never written.
pub fn adapt(g: &Graph, m: &GadModel, cfg: &AdaptConfig) -> Result<(AlignerParams, EstimatorParams, Vec<TraceEvent>)> {
    cfg.validate()?;
    if !m.frozen() {
        return Err(Error::arg("adapt", "model must be frozen"));
    }
    let x = g.features();
    if x.cols() != m.feat_dim() {
        return Err(Error::shape(
            "adapt",
            format!("{} feature columns, model expects {}", x.cols(), m.feat_dim()),
        ));
    }

    let op = sym_normalize(g);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut aligner = AlignerParams::init(x.cols(), &mut rng);
    let mut estimator = EstimatorParams::identity(m.repr_dim());

    let mut align_opt = AdamState::new(&aligner.parts());
    let mut est_opt = AdamState::new(&estimator.parts());
    let mut trace = Vec::new();

    for round in 1..=cfg.outer_rounds {
        // Aligner phase: estimator held constant.
        for step in 1..=cfg.aligner_steps_per_round {
            let tape = Tape::new();
            let w_in = tape.watch(&aligner.w_in);
            let b_in = tape.watch(&aligner.b_in);
            let w_out = tape.watch(&aligner.w_out);
            let b_out = tape.watch(&aligner.b_out);
            let x_aligned = align_on_tape(&tape, x, [&w_in, &b_in, &w_out, &b_out])?;
            let (h, _) = forward_main_on_tape(&tape, &op, &x_aligned, m)?;
            let (h_dual, _) = forward_dual_on_tape(&tape, &x_aligned, m, &estimator.weight, &estimator.bias)?;
            let loss = alignment_loss_on_tape(&tape, &h, &h_dual, cfg.temperature)?;
            let grads = tape.backward(&loss)?;
            let grad_list = [grads.wrt(&w_in), grads.wrt(&b_in), grads.wrt(&w_out), grads.wrt(&b_out)];
            adam_step(
                &mut [&mut aligner.w_in, &mut aligner.b_in, &mut aligner.w_out, &mut aligner.b_out],
                &grad_list,
                &mut align_opt,
                cfg.lr_align,
            )?;
            trace.push(TraceEvent {
                round,
                phase: Phase::Align,
                step,
                loss: Some(loss.scalar()),
                selected_count: None,
            });
        }

        if !cfg.estimator_enabled {
            continue;
        }

        // Estimator phase: aligner held constant. Scores are recomputed
        // with the just-updated aligner before reselecting.
        let x_aligned = align(x, &aligner)?;
        let (h, s) = forward_main(&op, &x_aligned, m)?;
        let (_, s_dual) = forward_dual(&x_aligned, m, &estimator)?;
        let selected = select_confident_normals(s.data(), s_dual.data(), cfg.k_percent)?;
        if selected.is_empty() {
            trace.push(TraceEvent {
                round,
                phase: Phase::Estimator,
                step: 0,
                loss: None,
                selected_count: Some(0),
            });
            continue;
        }

        // Only the selected rows matter, and the estimator acts
        // row-wise, so gather once and train on the small matrices.
        let gather = Tape::new();
        let identity = identity_operator(x_aligned.rows());
        let ego = encode_raw(&gather, &identity, &x_aligned, m.weights()[0], m.weights()[1])?;
        let ego_sel = gather.gather_rows(&ego, &selected)?;
        let h_sel = gather.gather_rows(&h, &selected)?;

        for step in 1..=cfg.estimator_steps_per_round {
            let tape = Tape::new();
            let weight = tape.watch(&estimator.weight);
            let bias = tape.watch(&estimator.bias);
            let dual_sel = tape.add_row(&tape.matmul(&ego_sel, &weight)?, &bias)?;
            let loss = alignment_loss_on_tape(&tape, &h_sel, &dual_sel, cfg.temperature)?;
            let grads = tape.backward(&loss)?;
            let grad_list = [grads.wrt(&weight), grads.wrt(&bias)];
            adam_step(
                &mut [&mut estimator.weight, &mut estimator.bias],
                &grad_list,
                &mut est_opt,
                cfg.lr_est,
            )?;
            trace.push(TraceEvent {
                round,
                phase: Phase::Estimator,
                step,
                loss: Some(loss.scalar()),
                selected_count: Some(selected.len()),
            });
        }
    }

    Ok((aligner, estimator, trace))
}

#[derive(Debug, Serialize, Deserialize)]
struct AlignerCheckpoint {
    w_in: Vec<Vec<f64>>,
    b_in: Vec<Vec<f64>>,
    w_out: Vec<Vec<f64>>,
    b_out: Vec<Vec<f64>>,
}

pub fn save_aligner(a: &AlignerParams, path: &Path) -> Result<()> {
    let checkpoint = AlignerCheckpoint {
        w_in: a.w_in.to_nested(),
        b_in: a.b_in.to_nested(),
        w_out: a.w_out.to_nested(),
        b_out: a.b_out.to_nested(),
    };
    write_json(path, &checkpoint)
}

pub fn load_aligner(path: &Path) -> Result<AlignerParams> {
    let checkpoint: AlignerCheckpoint = read_json(path)?;
    AlignerParams::from_parts(
        nested(path, &checkpoint.w_in)?,
        nested(path, &checkpoint.b_in)?,
        nested(path, &checkpoint.w_out)?,
        nested(path, &checkpoint.b_out)?,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct EstimatorCheckpoint {
    weight: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

pub fn save_estimator(e: &EstimatorParams, path: &Path) -> Result<()> {
    let checkpoint = EstimatorCheckpoint { weight: e.weight.to_nested(), bias: e.bias.to_nested() };
    write_json(path, &checkpoint)
}

pub fn load_estimator(path: &Path) -> Result<EstimatorParams> {
    let checkpoint: EstimatorCheckpoint = read_json(path)?;
    EstimatorParams::from_parts(nested(path, &checkpoint.weight)?, nested(path, &checkpoint.bias)?)
}

pub fn save_trace(trace: &[TraceEvent], path: &Path) -> Result<()> {
    write_json(path, &trace)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    read_json(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("checkpoint serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn nested(path: &Path, rows: &[Vec<f64>]) -> Result<Tensor> {
    Tensor::from_nested(rows).map_err(|e| Error::parse(path, e.to_string()))
}
