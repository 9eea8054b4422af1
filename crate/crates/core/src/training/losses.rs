use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

/// Soft-label weighting for student training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub tau: f64,
    pub alpha: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { tau: 8.0, alpha: 0.7 }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Mean cross-entropy of `logits: [B, K]` against integer labels.
pub fn cross_entropy_loss<R: Real>(tape: &mut Tape<R>, logits: Var, labels: &[usize]) -> Result<Var> {
    let ls = tape.log_softmax(logits, 1.0)?;
    let picked = tape.select(ls, labels)?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -1.0))
}

/// Mean over the batch of `τ²·KL(softmax(z_t/τ) ‖ softmax(z_s/τ))`.
/// The teacher enters as a constant, so gradients reach the student only.
pub fn kd_loss_var<R: Real>(tape: &mut Tape<R>, teacher: &Tensor<R>, student: Var, tau: f64) -> Result<Var> {
    if teacher.shape() != tape.shape(student) {
        return Err(Error::Shape(format!("teacher {:?} vs student {:?}", teacher.shape(), tape.shape(student))));
    }
    let k = *teacher.shape().last().ok_or(Error::EmptyInput("kd logits"))?;
    let rows = if k == 0 { 0 } else { teacher.len() / k };
    if rows == 0 {
        return Err(Error::EmptyInput("kd logits"));
    }
    let t = tape.constant(teacher.clone());
    let pt = tape.softmax(t, tau)?;
    let p = tape.value(pt).clone();
    // Σ p log p, the constant part of the KL divergence
    let neg_entropy: f64 = p.data().iter().map(|&v| v.f64()).filter(|&v| v > 0.0).map(|v| v * v.ln()).sum();
    let lq = tape.log_softmax(student, tau)?;
    let cross = tape.mul_const(lq, &p)?;
    let cross = tape.sum(cross);
    let scale = tau * tau / rows as f64;
    let l = tape.scale(cross, -scale);
    tape.add_const(l, &Tensor::scalar(R::of(scale * neg_entropy)))
}

/// `α·kd + (1−α)·ce`. Terms with zero weight are left out of the graph.
pub fn distill_loss_var<R: Real>(
    tape: &mut Tape<R>,
    teacher: &Tensor<R>,
    student: Var,
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<Var> {
    cfg.validate()?;
    if cfg.alpha == 0.0 {
        return cross_entropy_loss(tape, student, labels);
    }
    let kd = kd_loss_var(tape, teacher, student, cfg.tau)?;
    if cfg.alpha == 1.0 {
        return Ok(kd);
    }
    let ce = cross_entropy_loss(tape, student, labels)?;
    let a = tape.scale(kd, cfg.alpha);
    let b = tape.scale(ce, 1.0 - cfg.alpha);
    tape.add(a, b)
}

fn row(v: &[f64]) -> Result<Tensor<f64>> {
    Tensor::new(vec![1, v.len()], v.to_vec())
}

/// `−log softmax(logits)[label]` for one sample.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, classes: logits.len() });
    }
    let mut tape = Tape::new();
    let z = tape.constant(row(logits)?);
    let l = cross_entropy_loss(&mut tape, z, &[label])?;
    Ok(tape.value(l).item())
}

/// `τ²·KL(softmax(z_t/τ) ‖ softmax(z_s/τ))` for one sample.
pub fn kd_loss(z_t: &[f64], z_s: &[f64], tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(row(z_s)?);
    let l = kd_loss_var(&mut tape, &row(z_t)?, s, tau)?;
    Ok(tape.value(l).item())
}

pub fn total_distill_loss(z_t: &[f64], z_s: &[f64], label: usize, cfg: &DistillConfig) -> Result<f64> {
    cfg.validate()?;
    let kd = kd_loss(z_t, z_s, cfg.tau)?;
    let ce = cross_entropy(z_s, label)?;
    Ok(cfg.alpha * kd + (1.0 - cfg.alpha) * ce)
}
