use crate::error::{Error, Result};

/// Classical fourth-order Runge-Kutta step with the input held constant.
///
/// `f(x, u)` returns the state derivative; any non-finite derivative aborts
/// the step and reports the state it was evaluated at.
pub fn rk4_step<const N: usize, F>(f: F, x: &[f64; N], u: f64, dt: f64) -> Result<[f64; N]>
where
    F: Fn(&[f64; N], f64) -> Result<[f64; N]>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::NumericalDomain(format!("step size must be positive, got {dt}")));
    }
    let eval = |state: &[f64; N]| -> Result<[f64; N]> {
        let d = f(state, u)?;
        if d.iter().all(|v| v.is_finite()) {
            Ok(d)
        } else {
            Err(Error::PlantBlowUp { state: state.to_vec() })
        }
    };
    let offset = |k: &[f64; N], h: f64| -> [f64; N] { std::array::from_fn(|i| x[i] + h * k[i]) };

    let k1 = eval(x)?;
    let k2 = eval(&offset(&k1, dt / 2.0))?;
    let k3 = eval(&offset(&k2, dt / 2.0))?;
    let k4 = eval(&offset(&k3, dt))?;
    Ok(std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
}
