//! SGD with momentum and weight decay, the adaptive sharpness-aware (ASAM)
//! two-step update, and cosine annealing.
//!
//! ASAM step, with the element-wise scaling operator `T_w = |w|` (`T_w = 1`
//! for rank-1 gain/bias tensors, whose zero coordinates would freeze the
//! perturbation):
//!
//! 1. `g  = grad L(w)`
//! 2. `e  = rho * T_w^2 g / ||T_w g||_2`  (skipped when the norm is zero)
//! 3. `g' = grad L(w + e)`
//! 4. descend from the original `w` with `g'` via the SGD rule
//!
//! Weight decay is folded into the descent gradient (`g <- g + wd * w`),
//! applied only on the final step, never on the ascent.

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub asam_rho: f64,
    pub asam_enabled: bool,
    /// Schedule horizon in optimizer steps.
    pub total_steps: usize,
    pub min_lr: f64,
}

impl OptimConfig {
    /// Published per-variant learning rates: 0.02 for single-modality
    /// models, 0.0025 for fusion models; weight decay 5e-4, ASAM rho 0.5.
    pub fn defaults(fusion: bool) -> Self {
        OptimConfig {
            base_lr: if fusion { 0.0025 } else { 0.02 },
            weight_decay: 5e-4,
            momentum: 0.9,
            asam_rho: 0.5,
            asam_enabled: true,
            total_steps: 1,
            min_lr: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 {
            return Err(Error::Config("optim.base_lr must be positive".into()));
        }
        if self.asam_rho < 0.0 {
            return Err(Error::Config("optim.asam_rho must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("optim.momentum must be in [0, 1)".into()));
        }
        if self.min_lr < 0.0 || self.min_lr > self.base_lr {
            return Err(Error::Config("optim.min_lr must be in [0, base_lr]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub step: usize,
    pub velocity: Vec<Tensor>,
}

impl OptimState {
    pub fn new(params: &ParamSet) -> Self {
        OptimState {
            step: 0,
            velocity: (0..params.len())
                .map(|i| Tensor::zeros(params.tensor(i).shape()))
                .collect(),
        }
    }
}

/// `lr(t) = min_lr + (base_lr - min_lr) (1 + cos(pi t / T)) / 2`, clamped
/// to `min_lr` past the horizon.
pub fn cosine_lr(step: usize, cfg: &OptimConfig) -> f64 {
    if step >= cfg.total_steps {
        return cfg.min_lr;
    }
    let progress = step as f64 / cfg.total_steps as f64;
    cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// One SGD step: `g += wd * w; v = momentum * v + g; w -= lr * v`.
pub fn sgd_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    state: &mut OptimState,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    debug_assert_eq!(grads.len(), params.len());
    for i in 0..params.len() {
        if !grads[i].data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGrad {
                param: params.name(i).to_string(),
                step: state.step,
            });
        }
        if grads[i].shape() != params.tensor(i).shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                lhs: params.tensor(i).shape().to_vec(),
                rhs: grads[i].shape().to_vec(),
            });
        }
    }
    for i in 0..params.len() {
        let g = grads[i].data();
        let v = state.velocity[i].data_mut();
        let w = params.tensor_mut(i).data_mut();
        for j in 0..w.len() {
            let decayed = g[j] + cfg.weight_decay * w[j];
            v[j] = cfg.momentum * v[j] + decayed;
            w[j] -= lr * v[j];
        }
    }
    state.step += 1;
    Ok(())
}

/// One ASAM step. `loss_and_grads` recomputes loss and gradients at the
/// current parameter values; it runs twice per step (once at `w`, once at
/// the perturbed point). Returns the loss at the original `w`.
pub fn asam_step<F>(
    params: &mut ParamSet,
    state: &mut OptimState,
    lr: f64,
    cfg: &OptimConfig,
    mut loss_and_grads: F,
) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<(f64, Vec<Tensor>)>,
{
    let (loss, grads) = loss_and_grads(params)?;
    if cfg.asam_rho == 0.0 {
        sgd_step(params, &grads, state, lr, cfg)?;
        return Ok(loss);
    }
    for i in 0..params.len() {
        if !grads[i].data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGrad {
                param: params.name(i).to_string(),
                step: state.step,
            });
        }
    }

    // ascent direction e = rho * T^2 g / ||T g||
    let mut norm_sq = 0.0;
    for i in 0..params.len() {
        let adaptive = params.tensor(i).shape().len() > 1;
        let w = params.tensor(i).data();
        for (j, &g) in grads[i].data().iter().enumerate() {
            let t = if adaptive { w[j].abs() } else { 1.0 };
            norm_sq += (t * g) * (t * g);
        }
    }
    let norm = norm_sq.sqrt();
    if norm == 0.0 {
        // no ascent direction; proceed as plain SGD
        sgd_step(params, &grads, state, lr, cfg)?;
        return Ok(loss);
    }

    let original: Vec<Tensor> = (0..params.len()).map(|i| params.tensor(i).clone()).collect();
    let scale = cfg.asam_rho / norm;
    for i in 0..params.len() {
        let adaptive = params.tensor(i).shape().len() > 1;
        let g = grads[i].data().to_vec();
        let w = params.tensor_mut(i).data_mut();
        for j in 0..w.len() {
            let t = if adaptive { w[j].abs() } else { 1.0 };
            w[j] += scale * t * t * g[j];
        }
    }

    let perturbed = loss_and_grads(params);
    // restore exactly before acting on the result
    for (i, t) in original.into_iter().enumerate() {
        *params.tensor_mut(i) = t;
    }
    let (_, grads_sharp) = perturbed?;
    sgd_step(params, &grads_sharp, state, lr, cfg)?;
    Ok(loss)
}

/// Gradient diagnostics: largest magnitude and any non-finite entries by
/// parameter name. No clipping is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct GradDiagnostics {
    pub max_abs: f64,
    pub non_finite: Vec<String>,
}

pub fn clip_check(params: &ParamSet, grads: &[Tensor]) -> GradDiagnostics {
    let mut max_abs: f64 = 0.0;
    let mut non_finite = Vec::new();
    for (i, g) in grads.iter().enumerate() {
        for &v in g.data() {
            if v.is_finite() {
                max_abs = max_abs.max(v.abs());
            } else if non_finite.last().map(String::as_str) != Some(params.name(i)) {
                non_finite.push(params.name(i).to_string());
            }
        }
    }
    GradDiagnostics { max_abs, non_finite }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(momentum: f64, wd: f64) -> OptimConfig {
        OptimConfig {
            base_lr: 0.1,
            weight_decay: wd,
            momentum,
            asam_rho: 0.5,
            asam_enabled: true,
            total_steps: 100,
            min_lr: 0.0,
        }
    }

    fn single(value: f64) -> (ParamSet, OptimState) {
        let mut params = ParamSet::new();
        // 2-d shape so the adaptive operator applies
        params.push("w", Tensor::new(vec![1, 1], vec![value]).unwrap());
        let state = OptimState::new(&params);
        (params, state)
    }

    // quadratic loss L(w) = w^2 / 2, grad = w
    fn quadratic(ps: &ParamSet) -> Result<(f64, Vec<Tensor>)> {
        let w = ps.tensor(0).data()[0];
        Ok((
            0.5 * w * w,
            vec![Tensor::new(vec![1, 1], vec![w]).unwrap()],
        ))
    }

    // ------------------------------------------------------------- cosine

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let c = OptimConfig {
            base_lr: 0.02,
            min_lr: 0.004,
            total_steps: 100,
            ..cfg(0.9, 5e-4)
        };
        assert_eq!(cosine_lr(0, &c), 0.02);
        assert_eq!(cosine_lr(100, &c), 0.004);
        assert!((cosine_lr(50, &c) - 0.012).abs() < 1e-15);
        // clamps past the horizon
        assert_eq!(cosine_lr(250, &c), 0.004);
    }

    #[test]
    fn cosine_monotone_non_increasing() {
        let c = cfg(0.9, 0.0);
        let mut prev = f64::INFINITY;
        for t in 0..=c.total_steps {
            let lr = cosine_lr(t, &c);
            assert!(lr <= prev + 1e-15);
            prev = lr;
        }
    }

    // ---------------------------------------------------------------- sgd

    #[test]
    fn zero_grads_no_decay_leave_params_unchanged() {
        let (mut params, mut state) = single(3.0);
        let grads = vec![Tensor::zeros(&[1, 1])];
        sgd_step(&mut params, &grads, &mut state, 0.1, &cfg(0.9, 0.0)).unwrap();
        assert_eq!(params.tensor(0).data()[0], 3.0);
        assert_eq!(state.velocity[0].data()[0], 0.0);
    }

    #[test]
    fn vanilla_step_is_w_minus_lr_g() {
        let (mut params, mut state) = single(1.0);
        let grads = vec![Tensor::new(vec![1, 1], vec![0.4]).unwrap()];
        sgd_step(&mut params, &grads, &mut state, 0.5, &cfg(0.0, 0.0)).unwrap();
        assert!((params.tensor(0).data()[0] - (1.0 - 0.5 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_step_hand_recurrence() {
        // constant g: after step 1, w1 = w0 - lr g; after step 2,
        // v2 = 0.9 g + g = 1.9 g, w2 = w1 - lr * 1.9 g
        let (mut params, mut state) = single(2.0);
        let g = 0.25;
        let lr = 0.1;
        let grads = vec![Tensor::new(vec![1, 1], vec![g]).unwrap()];
        let c = cfg(0.9, 0.0);
        sgd_step(&mut params, &grads, &mut state, lr, &c).unwrap();
        let w1 = 2.0 - lr * g;
        assert!((params.tensor(0).data()[0] - w1).abs() < 1e-15);
        sgd_step(&mut params, &grads, &mut state, lr, &c).unwrap();
        let w2 = w1 - lr * 1.9 * g;
        assert!((params.tensor(0).data()[0] - w2).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks_weights_without_gradient() {
        let (mut params, mut state) = single(5.0);
        let grads = vec![Tensor::zeros(&[1, 1])];
        sgd_step(&mut params, &grads, &mut state, 0.1, &cfg(0.0, 0.01)).unwrap();
        let w = params.tensor(0).data()[0];
        assert!(w.abs() < 5.0);
        assert!((w - 5.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_grad_names_parameter() {
        let (mut params, mut state) = single(1.0);
        let grads = vec![Tensor::new(vec![1, 1], vec![f64::NAN]).unwrap()];
        let err = sgd_step(&mut params, &grads, &mut state, 0.1, &cfg(0.9, 0.0)).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
    }

    // --------------------------------------------------------------- asam

    #[test]
    fn rho_zero_reduces_to_sgd_exactly() {
        let mut c = cfg(0.9, 5e-4);
        c.asam_rho = 0.0;
        let (mut a, mut sa) = single(2.0);
        let (mut b, mut sb) = single(2.0);
        for _ in 0..5 {
            asam_step(&mut a, &mut sa, 0.1, &c, quadratic).unwrap();
            let (_, g) = quadratic(&b).unwrap();
            sgd_step(&mut b, &g, &mut sb, 0.1, &c).unwrap();
        }
        let (wa, wb) = (a.tensor(0).data()[0], b.tensor(0).data()[0]);
        assert!((wa - wb).abs() < 1e-12, "{wa} vs {wb}");
    }

    #[test]
    fn scalar_quadratic_hand_computation() {
        // w=2, rho=0.5, lr=0.1, no momentum/decay:
        // g = 2, T = |w| = 2, ||Tg|| = 4, e = 0.5 * (4*2)/4 = 1
        // g' = grad L(3) = 3, w' = 2 - 0.1*3 = 1.7
        let c = OptimConfig {
            base_lr: 0.1,
            weight_decay: 0.0,
            momentum: 0.0,
            asam_rho: 0.5,
            asam_enabled: true,
            total_steps: 1,
            min_lr: 0.0,
        };
        let (mut params, mut state) = single(2.0);
        let loss = asam_step(&mut params, &mut state, 0.1, &c, quadratic).unwrap();
        assert!((loss - 2.0).abs() < 1e-15); // L(2) = 2
        assert!((params.tensor(0).data()[0] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn ascent_norm_identity() {
        // || T^{-1} e || = rho whenever T g != 0; verified by capturing the
        // perturbed point on the second closure call.
        let mut params = ParamSet::new();
        params.push("w", Tensor::new(vec![2, 2], vec![0.5, -1.5, 2.0, 0.25]).unwrap());
        params.push("bias", Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap());
        let mut state = OptimState::new(&params);
        let c = cfg(0.0, 0.0);
        let originals: Vec<Tensor> = (0..params.len()).map(|i| params.tensor(i).clone()).collect();

        let calls = std::cell::Cell::new(0);
        let captured: std::cell::RefCell<Vec<Vec<f64>>> = std::cell::RefCell::new(Vec::new());
        asam_step(&mut params, &mut state, 0.01, &c, |ps| {
            calls.set(calls.get() + 1);
            if calls.get() == 2 {
                *captured.borrow_mut() =
                    (0..ps.len()).map(|i| ps.tensor(i).data().to_vec()).collect();
            }
            // loss = sum of squares / 2 -> grad = w
            let mut loss = 0.0;
            let grads = (0..ps.len())
                .map(|i| {
                    let t = ps.tensor(i);
                    loss += t.data().iter().map(|v| v * v).sum::<f64>() / 2.0;
                    Tensor::new(t.shape().to_vec(), t.data().to_vec()).unwrap()
                })
                .collect();
            Ok((loss, grads))
        })
        .unwrap();
        assert_eq!(calls.get(), 2);

        let perturbed = captured.borrow();
        let mut norm_sq = 0.0;
        for (i, orig) in originals.iter().enumerate() {
            let adaptive = orig.shape().len() > 1;
            for (j, (&w0, &wp)) in orig.data().iter().zip(&perturbed[i]).enumerate() {
                let _ = j;
                let e = wp - w0;
                let t = if adaptive { w0.abs() } else { 1.0 };
                // T^{-1} e; for T=|w|=0 coordinates e is 0 as well
                let scaled = if t > 0.0 { e / t } else { e };
                norm_sq += scaled * scaled;
            }
        }
        assert!((norm_sq.sqrt() - c.asam_rho).abs() < 1e-9, "{}", norm_sq.sqrt());
    }

    #[test]
    fn perturbation_scales_with_weight() {
        // scale-adaptivity on the scalar closed form: e(c*w) = c * e(w)
        let e = |w: f64, rho: f64| {
            let g = w; // quadratic loss
            rho * (w.abs() * w.abs() * g) / (w.abs() * g).abs()
        };
        let (w, rho, c) = (2.0, 0.5, 3.0);
        assert!((e(c * w, rho) - c * e(w, rho)).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_skips_perturbation() {
        let (mut params, mut state) = single(2.0);
        let c = cfg(0.0, 0.0);
        let calls = std::cell::Cell::new(0);
        asam_step(&mut params, &mut state, 0.1, &c, |_| {
            calls.set(calls.get() + 1);
            Ok((0.0, vec![Tensor::zeros(&[1, 1])]))
        })
        .unwrap();
        // zero ascent norm: single evaluation, plain SGD (no-op here)
        assert_eq!(calls.get(), 1);
        assert_eq!(params.tensor(0).data()[0], 2.0);
    }

    // ---------------------------------------------------------- clip_check

    #[test]
    fn clip_check_reports_max_and_nan() {
        let mut params = ParamSet::new();
        params.push("a", Tensor::zeros(&[2]));
        params.push("b", Tensor::zeros(&[2]));
        let zeros = vec![Tensor::zeros(&[2]), Tensor::zeros(&[2])];
        let d = clip_check(&params, &zeros);
        assert_eq!(d.max_abs, 0.0);
        assert!(d.non_finite.is_empty());

        let ones = vec![Tensor::ones(&[2]), Tensor::ones(&[2])];
        assert_eq!(clip_check(&params, &ones).max_abs, 1.0);

        let bad = vec![
            Tensor::ones(&[2]),
            Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap(),
        ];
        let d = clip_check(&params, &bad);
        assert_eq!(d.non_finite, vec!["b".to_string()]);
    }
}
