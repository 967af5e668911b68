//! Central finite-difference gradient verification.
//!
//! This is the independent oracle for reverse-mode gradients: it only ever
//! calls a user-supplied loss closure at perturbed parameter values and never
//! touches the tape's backward pass. Each sampled coordinate is checked as
//!
//! `fd = (L(w + h e_j) - L(w - h e_j)) / 2h`
//!
//! against the analytic gradient. A coordinate passes when either the
//! relative error `|a - fd| / max(|a|, |fd|)` is below `rel_tol`, or the
//! absolute difference is below `abs_tol` (central differences carry a noise
//! floor of roughly `eps * |L| / h`, so exact agreement on near-zero
//! gradients is not observable).

use crate::error::Result;
use crate::numerics::params::ParamSet;
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;

pub struct GradCheckReport {
    /// Coordinates actually compared.
    pub checked: usize,
    /// Largest relative error among coordinates outside the absolute floor.
    pub max_rel_err: f64,
    /// `(param name, flat coordinate)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

pub struct GradCheckSettings {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Coordinates sampled per tensor (all coordinates if the tensor is
    /// smaller).
    pub coords_per_tensor: usize,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-8,
            coords_per_tensor: 50,
        }
    }
}

impl GradCheckReport {
    pub fn passed(&self, settings: &GradCheckSettings) -> bool {
        self.max_rel_err < settings.rel_tol
    }
}

/// Compare `analytic` gradients against central differences of `loss`.
///
/// `loss` must be a pure function of the parameter values (use eval-mode
/// forwards, or a fixed rng, so repeated calls agree).
pub fn check_gradients<F>(
    params: &mut ParamSet,
    analytic: &[Tensor],
    mut loss: F,
    settings: &GradCheckSettings,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    assert_eq!(analytic.len(), params.len(), "one gradient per parameter");
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for t in 0..params.len() {
        let len = params.tensor(t).len();
        let coords: Vec<usize> = if len <= settings.coords_per_tensor {
            (0..len).collect()
        } else {
            let mut all: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut all);
            all.truncate(settings.coords_per_tensor);
            all
        };
        for j in coords {
            let orig = params.tensor(t).data()[j];
            params.tensor_mut(t).data_mut()[j] = orig + settings.step;
            let up = loss(params)?;
            params.tensor_mut(t).data_mut()[j] = orig - settings.step;
            let down = loss(params)?;
            params.tensor_mut(t).data_mut()[j] = orig;

            let fd = (up - down) / (2.0 * settings.step);
            let a = analytic[t].data()[j];
            let diff = (a - fd).abs();
            let rel = if diff < settings.abs_tol {
                0.0
            } else {
                diff / a.abs().max(fd.abs())
            };
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((params.name(t).to_string(), j));
            }
        }
    }
    Ok(report)
}
