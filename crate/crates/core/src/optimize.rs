//! Adam optimization of per-pixel embeddings.
//!
//! Instead of training a network to emit embedding vectors, the vectors
//! themselves are the optimization variables: full-batch gradients of the
//! discriminative loss flow directly into every pixel. This exercises the
//! loss exactly and stays verifiable at small scale.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::labels::{relabel_connected, Connectivity, LabelMap};
use crate::loss::{build_ext_mask, compute_loss_with_gradient, LossParams, LossReport};
use crate::rng::SplitMix64;

/// State of a bias-corrected Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    /// Completed steps.
    t: u64,
    /// First-moment (mean) accumulator, one slot per parameter.
    m: Vec<f64>,
    /// Second-moment (uncentered variance) accumulator.
    v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state for `num_params` parameters with the standard
    /// hyperparameters (lr 0.001, β₁ 0.9, β₂ 0.999, ε 1e−8).
    pub fn new(num_params: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_lr(num_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            ..AdamState::new(num_params)
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update:
///
/// ```text
/// m ← β₁·m + (1−β₁)·g        m̂ = m / (1 − β₁^t)
/// v ← β₂·v + (1−β₂)·g²       v̂ = v / (1 − β₂^t)
/// θ ← θ − lr·m̂ / (√v̂ + ε)
/// ```
pub fn adam_step(params: &mut VectorField, grad: &VectorField, state: &mut AdamState) -> Result<()> {
    if params.height() != grad.height()
        || params.width() != grad.width()
        || params.dim() != grad.dim()
    {
        return Err(Error::shape(format!(
            "params are {}x{}x{} but gradient is {}x{}x{}",
            params.height(),
            params.width(),
            params.dim(),
            grad.height(),
            grad.width(),
            grad.dim()
        )));
    }
    if state.m.len() != params.data().len() {
        return Err(Error::shape(format!(
            "optimizer state holds {} parameters but field has {}",
            state.m.len(),
            params.data().len()
        )));
    }
    grad.check_finite()
        .map_err(|_| Error::NonFinite("gradient passed to adam_step".into()))?;

    state.t += 1;
    let bias1 = 1.0 - state.beta1.powi(state.t as i32);
    let bias2 = 1.0 - state.beta2.powi(state.t as i32);
    let data = params.data_mut();
    for (i, &g) in grad.data().iter().enumerate() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        data[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Settings for [`fit_embeddings`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub max_iters: usize,
    pub loss: LossParams,
    /// Seed for the Gaussian initialization of the field.
    pub seed: u64,
    /// Standard deviation of the initialization; small enough that initial
    /// mean distances sit inside the hinge's active region.
    pub init_scale: f64,
    pub lr: f64,
    /// Converged when the total loss changes by less than `tolerance` over
    /// `tolerance_window` iterations.
    pub tolerance: f64,
    pub tolerance_window: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 2000,
            loss: LossParams::default(),
            seed: 0,
            init_scale: 0.1,
            lr: 0.001,
            tolerance: 1e-7,
            tolerance_window: 50,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::invalid(format!(
                "init_scale must be positive, got {}",
                self.init_scale
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.tolerance_window == 0 {
            return Err(Error::invalid("tolerance_window must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitLogEntry {
    pub iteration: usize,
    pub l_int: f64,
    pub l_ext: f64,
    pub l_norm: f64,
    pub total: f64,
}

impl FitLogEntry {
    fn from_report(iteration: usize, report: &LossReport) -> Self {
        FitLogEntry {
            iteration,
            l_int: report.l_int,
            l_ext: report.l_ext,
            l_norm: report.l_norm,
            total: report.total,
        }
    }
}

/// Result of [`fit_embeddings`]: the best field seen, its loss report, the
/// per-iteration log, and whether the tolerance criterion was met.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub field: VectorField,
    pub report: LossReport,
    pub log: Vec<FitLogEntry>,
    /// False when the run used up `max_iters` without the loss settling;
    /// the field is still the best one observed, not an error.
    pub converged: bool,
}

/// Fit per-pixel embeddings to a label map by full-batch Adam on the
/// discriminative loss.
///
/// Objects are first split into connected components so that L_ext never
/// pushes apart pieces of the same (disconnected) object; the loss runs on
/// the split map with the corresponding pair mask. Identical seeds and
/// configs produce bit-identical fields.
pub fn fit_embeddings(labels: &LabelMap, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if labels.positive_labels().is_empty() {
        return Err(Error::invalid("label map contains no positive labels"));
    }
    let split = relabel_connected(labels, Connectivity::Four);
    let mask = build_ext_mask(labels, &split.labels, &split.mapping)?;

    let mut rng = SplitMix64::new(config.seed);
    let mut field = VectorField::gaussian(
        labels.height(),
        labels.width(),
        config.loss.dim,
        config.init_scale,
        &mut rng,
    )?;
    let mut state = AdamState::with_lr(field.data().len(), config.lr);

    let mut log: Vec<FitLogEntry> = Vec::with_capacity(config.max_iters + 1);
    let mut best_field = field.clone();
    let mut best_report: Option<LossReport> = None;
    let mut best_total = f64::INFINITY;
    let mut converged = false;

    for iteration in 0..config.max_iters {
        let mut report =
            compute_loss_with_gradient(&field, &split.labels, &config.loss, Some(&mask))?;
        let gradient = report.gradient.take().expect("gradient requested");
        log.push(FitLogEntry::from_report(iteration, &report));
        if report.total < best_total {
            best_total = report.total;
            best_field = field.clone();
            best_report = Some(report);
        }
        if iteration >= config.tolerance_window {
            let then = log[iteration - config.tolerance_window].total;
            if (then - log[iteration].total).abs() < config.tolerance {
                converged = true;
                break;
            }
        }
        adam_step(&mut field, &gradient, &mut state)?;
    }

    if !converged {
        // The loop ended by exhausting max_iters: the last update has not
        // been evaluated yet.
        let report = compute_loss_with_gradient(&field, &split.labels, &config.loss, Some(&mask))
            .map(|mut r| {
                r.gradient = None;
                r
            })?;
        log.push(FitLogEntry::from_report(config.max_iters, &report));
        if report.total < best_total {
            best_field = field;
            best_report = Some(report);
        }
    }

    Ok(FitResult {
        field: best_field,
        report: best_report.expect("at least one loss evaluation"),
        log,
        converged,
    })
}
