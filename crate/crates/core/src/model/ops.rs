use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::NoiseSchedule;

/// Straight-line interpolation `(1 − σ(t))·x_data + σ(t)·x_noise`.
///
/// Evaluated as `x_data + σ·(x_noise − x_data)` so that equal endpoints
/// reproduce themselves exactly; the two endpoints of the schedule return
/// the corresponding input bit-for-bit.
pub fn forward_interpolate(
    x_data: &Tensor,
    x_noise: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    x_data.ensure_same_shape(x_noise, "forward_interpolate")?;
    if t > sched.total_steps {
        return Err(Error::invalid(format!(
            "timestep {t} outside [0, {}]",
            sched.total_steps
        )));
    }
    let sigma = sched.sigma(t);
    if sigma == 0.0 {
        return Ok(x_data.clone());
    }
    if sigma == 1.0 {
        return Ok(x_noise.clone());
    }
    x_data.zip_map(x_noise, "forward_interpolate", |d, n| d + sigma * (n - d))
}

/// One Euler update `x + v·dt`.
pub fn euler_step(x: &Tensor, v: &Tensor, dt: f64) -> Result<Tensor> {
    if !dt.is_finite() {
        return Err(Error::Numeric(format!("step size {dt} is not finite")));
    }
    x.check_finite("euler_step input")?;
    v.check_finite("euler_step velocity")?;
    let out = x.zip_map(v, "euler_step", |a, b| a + b * dt)?;
    out.check_finite("euler_step output")?;
    Ok(out)
}
