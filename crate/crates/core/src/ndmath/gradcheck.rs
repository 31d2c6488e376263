//! Finite-difference oracle for analytic gradients.
//!
//! The checker rebuilds the loss from scratch through a caller-supplied
//! closure, so it stays independent of whatever graph the analytic pass
//! recorded. Only meaningful at 64-bit precision.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndmath::store::ParameterStore;
use crate::ndmath::tape::{Tape, Var};
use crate::scalar::Scalar;

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Number of randomly sampled entries checked per large tensor.
pub const DEFAULT_SAMPLE_CAP: usize = 200;

/// Per-parameter outcome of a finite-difference check.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub entries_checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn all_within(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare analytic gradients against central differences for every
/// parameter in `store`.
///
/// `build_loss` must construct the scalar loss from the store's current
/// values; it is invoked once for the analytic pass and twice per checked
/// entry for the numeric pass. Tensors larger than `sample_cap` entries are
/// subsampled deterministically from the store seed.
pub fn finite_difference_check<S: Scalar>(
    store: &mut ParameterStore<S>,
    eps: f64,
    sample_cap: usize,
    mut build_loss: impl FnMut(&mut Tape<S>, &ParameterStore<S>) -> Result<Var>,
) -> Result<GradCheckReport> {
    if S::PRECISION_BITS < 64 {
        return Err(Error::Config {
            detail: "finite_difference_check requires 64-bit precision".into(),
        });
    }
    if eps <= 0.0 {
        return Err(Error::Config { detail: format!("eps must be positive, got {eps}") });
    }

    // Analytic pass.
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build_loss(&mut tape, store)?;
    let loss_value = tape.value(loss).scalar_value()?.as_f64();
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { context: "loss at the unperturbed point".into() });
    }
    tape.backward(loss, store)?;

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let analytic: Vec<Vec<f64>> =
        names.iter().map(|n| store.grad(n).unwrap().to_f64_vec()).collect();

    let mut eval = |store: &ParameterStore<S>, param: &str| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build_loss(&mut tape, store)?;
        let v = tape.value(loss).scalar_value()?.as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("loss at a perturbed point of parameter `{param}`"),
            });
        }
        Ok(v)
    };

    let step = S::from_float(eps);
    let mut params = Vec::with_capacity(names.len());
    for (pi, name) in names.iter().enumerate() {
        let numel = store.value(name)?.numel();
        let indices: Vec<usize> = if numel <= sample_cap {
            (0..numel).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(
                store.seed().wrapping_add(0xfd1e_ce11).wrapping_add(pi as u64),
            );
            (0..sample_cap).map(|_| rng.random_range(0..numel)).collect()
        };
        let mut max_rel = 0.0f64;
        for &i in &indices {
            store.nudge(name, i, step)?;
            let plus = eval(store, name)?;
            store.nudge(name, i, -(step + step))?;
            let minus = eval(store, name)?;
            store.nudge(name, i, step)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = relative_error(analytic[pi][i], numeric);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        params.push(ParamCheck {
            name: name.clone(),
            max_rel_err: max_rel,
            entries_checked: indices.len(),
        });
    }
    Ok(GradCheckReport { params })
}
