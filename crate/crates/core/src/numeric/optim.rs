//! AdamW with decoupled weight decay and the warmup learning-rate schedule.

use super::tensor::Tensor;
use crate::error::{DtsError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    /// Base learning rate of each parameter group.
    pub base_lrs: Vec<f32>,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamWConfig {
    pub fn new(base_lrs: Vec<f32>, weight_decay: f32) -> Self {
        Self {
            base_lrs,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers and step counter for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: AdamWConfig,
    /// Parameter group of each parameter, indexing `config.base_lrs`.
    pub groups: Vec<usize>,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: u64,
}

impl OptimState {
    pub fn new(config: AdamWConfig, params: &[&Tensor], groups: Vec<usize>) -> Result<Self> {
        if groups.len() != params.len() {
            return Err(DtsError::dim(format!(
                "{} group ids for {} parameters",
                groups.len(),
                params.len()
            )));
        }
        if let Some(&g) = groups.iter().find(|&&g| g >= config.base_lrs.len()) {
            return Err(DtsError::InvalidArgument(format!(
                "parameter group {g} has no learning rate"
            )));
        }
        Ok(Self {
            config,
            groups,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        })
    }
}

/// One AdamW update. Each parameter moves with `base_lr[group] * lr_scale`;
/// pass `lr_scale` from [`lr_at`] with a base of 1.
///
/// Gradients are validated before anything is modified, so a rejected step
/// leaves parameters and moments untouched.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[&[f32]],
    state: &mut OptimState,
    lr_scale: f32,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(DtsError::dim(format!(
            "{} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if lr_scale < 0.0 || !lr_scale.is_finite() {
        return Err(DtsError::InvalidArgument(format!(
            "learning rate {lr_scale} must be >= 0"
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() || state.m[i].len() != g.len() {
            return Err(DtsError::dim(format!(
                "parameter {i}: gradient length {} vs {}",
                g.len(),
                p.numel()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(DtsError::NanGradient { index: i });
        }
    }
    state.step += 1;
    let c = &state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let lr = c.base_lrs[state.groups[i]] * lr_scale;
        let decay = 1.0 - lr * c.weight_decay;
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.iter())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
            *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *w = *w * decay - lr * mhat / (vhat.sqrt() + c.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrDecay {
    Constant,
    /// `(1 - progress)^power` over the post-warmup span.
    Poly {
        power: f32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub warmup_iters: usize,
    pub total_iters: usize,
    pub decay: LrDecay,
}

impl LrSchedule {
    pub fn new(warmup_iters: usize, total_iters: usize, decay: LrDecay) -> Result<Self> {
        if warmup_iters > total_iters {
            return Err(DtsError::Config(format!(
                "warmup_iters ({warmup_iters}) exceeds total iterations ({total_iters})"
            )));
        }
        Ok(Self {
            warmup_iters,
            total_iters,
            decay,
        })
    }

    pub fn lr_at(&self, iter: usize, base_lr: f32) -> f32 {
        if iter < self.warmup_iters {
            return base_lr * iter as f32 / self.warmup_iters as f32;
        }
        match self.decay {
            LrDecay::Constant => base_lr,
            LrDecay::Poly { power } => {
                let span = self.total_iters - self.warmup_iters;
                if span == 0 {
                    return base_lr;
                }
                let progress = ((iter - self.warmup_iters) as f32 / span as f32).min(1.0);
                base_lr * (1.0 - progress).powf(power)
            }
        }
    }
}

/// Linear warmup to `base_lr`, constant afterwards.
pub fn lr_at(iter: usize, base_lr: f32, warmup_iters: usize, total_iters: usize) -> Result<f32> {
    if iter > total_iters {
        return Err(DtsError::InvalidArgument(format!(
            "iteration {iter} beyond total {total_iters}"
        )));
    }
    Ok(LrSchedule::new(warmup_iters, total_iters, LrDecay::Constant)?.lr_at(iter, base_lr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(lr: f32, wd: f32) -> (Tensor, OptimState) {
        let p = Tensor::scalar(0.5);
        let s = OptimState::new(AdamWConfig::new(vec![lr], wd), &[&p], vec![0]).unwrap();
        (p, s)
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let (mut p, mut s) = scalar_state(0.1, 0.0);
        for _ in 0..5 {
            adamw_step(&mut [&mut p], &[&[0.0]], &mut s, 1.0).unwrap();
        }
        assert_eq!(p.item(), 0.5);
    }

    #[test]
    fn zero_lr_keeps_params_but_moves_moments() {
        let (mut p, mut s) = scalar_state(0.1, 0.01);
        adamw_step(&mut [&mut p], &[&[2.0]], &mut s, 0.0).unwrap();
        assert_eq!(p.item(), 0.5);
        assert!((s.m[0][0] - 0.2).abs() < 1e-7);
        assert!((s.v[0][0] - 0.004).abs() < 1e-7);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        // hand-rolled recurrences in f64
        let (lr, wd, b1, b2, eps) = (1e-3f64, 0.01f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 1.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            w = w * (1.0 - lr * wd) - lr * mhat / (vhat.sqrt() + eps);
        }
        let (mut p, mut s) = scalar_state(1e-3, 0.01);
        for _ in 0..2 {
            adamw_step(&mut [&mut p], &[&[1.0]], &mut s, 1.0).unwrap();
        }
        assert!((p.item() as f64 - w).abs() < 1e-6, "{} vs {w}", p.item());
    }

    #[test]
    fn nan_gradient_names_parameter_and_leaves_state() {
        let a = Tensor::scalar(1.0);
        let b = Tensor::scalar(2.0);
        let mut s =
            OptimState::new(AdamWConfig::new(vec![0.1], 0.0), &[&a, &b], vec![0, 0]).unwrap();
        let (mut a, mut b) = (a, b);
        let err =
            adamw_step(&mut [&mut a, &mut b], &[&[1.0], &[f32::NAN]], &mut s, 1.0).unwrap_err();
        assert!(matches!(err, DtsError::NanGradient { index: 1 }));
        assert_eq!(s.step, 0);
        assert_eq!(a.item(), 1.0);
    }

    #[test]
    fn warmup_boundaries() {
        assert_eq!(lr_at(0, 6e-4, 100, 1000).unwrap(), 0.0);
        assert_eq!(lr_at(100, 6e-4, 100, 1000).unwrap(), 6e-4);
        assert!((lr_at(50, 6e-4, 100, 1000).unwrap() - 3e-4).abs() < 1e-10);
        assert_eq!(lr_at(900, 6e-4, 100, 1000).unwrap(), 6e-4);
        assert!(lr_at(0, 1.0, 10, 5).is_err());
    }

    #[test]
    fn poly_decay_reaches_zero() {
        let s = LrSchedule::new(10, 110, LrDecay::Poly { power: 1.0 }).unwrap();
        assert_eq!(s.lr_at(10, 1.0), 1.0);
        assert!((s.lr_at(60, 1.0) - 0.5).abs() < 1e-6);
        assert_eq!(s.lr_at(110, 1.0), 0.0);
    }
}
