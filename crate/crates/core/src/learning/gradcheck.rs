//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A loss evaluated at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub grad: Vec<f64>,
    /// False at points where the loss has a kink (for instance a tie in a minimum).
    pub differentiable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GradCheck {
    Checked { max_rel_err: f64, coords: Vec<usize> },
    /// The probe point is non-differentiable; nothing was compared.
    Skipped,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> Option<f64> {
        match self {
            GradCheck::Checked { max_rel_err, .. } => Some(*max_rel_err),
            GradCheck::Skipped => None,
        }
    }
}

/// Compares the analytic gradient of `f` at `x` with central differences of
/// step `h` on up to `coords` randomly chosen coordinates.
///
/// The relative error of one coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &[f64], h: f64, coords: usize, seed: u64) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> Result<Probe>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::InvalidInput(format!("finite-difference step {h} outside [1e-6, 1e-4]")));
    }
    let probe = f(x)?;
    if !probe.value.is_finite() {
        return Err(Error::NonFinite("loss at the probe point".into()));
    }
    if probe.grad.len() != x.len() {
        return Err(Error::Shape(format!("gradient has {} entries for {} inputs", probe.grad.len(), x.len())));
    }
    if !probe.differentiable {
        return Ok(GradCheck::Skipped);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, x.len(), coords.min(x.len())).into_vec();
    picked.sort_unstable();
    let mut worst: f64 = 0.0;
    let mut shifted = x.to_vec();
    for &i in &picked {
        shifted[i] = x[i] + h;
        let up = f(&shifted)?.value;
        shifted[i] = x[i] - h;
        let down = f(&shifted)?.value;
        shifted[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss near coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * h);
        let analytic = probe.grad[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(GradCheck::Checked { max_rel_err: worst, coords: picked })
}
