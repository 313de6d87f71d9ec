//! Flow matching over action chunks: the linear-interpolation probability
//! path, the velocity-regression objective, and the explicit Euler
//! sampler that integrates the learned field from noise to actions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// One training draw along the probability path: clean chunk, Gaussian
/// noise, flow time, the interpolant `s*A + (1-s)*eps`, and the target
/// velocity `A - eps`.
#[derive(Debug, Clone)]
pub struct FlowSample {
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
    pub s: f64,
    pub interpolant: Vec<f64>,
    pub target: Vec<f64>,
}

/// Draw `eps ~ N(0, I)` and `s ~ U[0,1]` and build the interpolant.
pub fn make_flow_sample<R: Rng>(clean: &[f64], rng: &mut R) -> Result<FlowSample> {
    if clean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite clean actions in flow sample".into()));
    }
    let noise: Vec<f64> =
        (0..clean.len()).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect();
    let s: f64 = rng.random::<f64>();
    Ok(make_flow_sample_at(clean, noise, s))
}

/// Deterministic variant with the noise and flow time forced.
pub fn make_flow_sample_at(clean: &[f64], noise: Vec<f64>, s: f64) -> FlowSample {
    let interpolant: Vec<f64> =
        clean.iter().zip(&noise).map(|(a, e)| s * a + (1.0 - s) * e).collect();
    let target: Vec<f64> = clean.iter().zip(&noise).map(|(a, e)| a - e).collect();
    FlowSample { clean: clean.to_vec(), noise, s, interpolant, target }
}

/// Mean squared error between the predicted velocity and the ideal
/// vector field `A - eps`.
pub fn fm_loss(g: &mut Graph, velocity_pred: Var, sample: &FlowSample) -> Result<Var> {
    let shape = g.shape(velocity_pred).to_vec();
    let target = g.constant(shape, sample.target.clone())?;
    g.mse_loss(velocity_pred, target)
}

/// Integrate a velocity field from noise to an action chunk with K
/// explicit Euler steps, evaluating the field at the left endpoint of
/// each step.
///
/// `model_fn(current, s)` returns the predicted velocity for the chunk
/// `current` at flow time `s`.
pub fn sample_actions<R, F>(
    mut model_fn: F,
    chunk_len: usize,
    action_dim: usize,
    euler_steps: usize,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    R: Rng,
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    if euler_steps < 1 {
        return Err(Error::Contract("euler_steps must be >= 1".into()));
    }
    let n = chunk_len * action_dim;
    let mut current: Vec<f64> =
        (0..n).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect();
    let k = euler_steps as f64;
    for i in 0..euler_steps {
        let s = i as f64 / k;
        let velocity = model_fn(&current, s)?;
        if velocity.len() != n {
            return Err(Error::Shape(format!(
                "velocity has {} values, chunk wants {}",
                velocity.len(),
                n
            )));
        }
        if velocity.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite velocity at flow step {i} (s = {s})"
            )));
        }
        for (c, v) in current.iter_mut().zip(&velocity) {
            *c += v / k;
        }
    }
    Ok(current)
}
