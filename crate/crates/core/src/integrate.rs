//! Fixed-step explicit Runge–Kutta integration.

use nalgebra::DVector;

use crate::error::Result;

/// One classical fourth-order Runge–Kutta step of `ẋ = f(x)`.
pub fn rk4_step<F>(x: &DVector<f64>, h: f64, mut f: F) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(x)?;
    let k2 = f(&(x + &k1 * (h / 2.0)))?;
    let k3 = f(&(x + &k2 * (h / 2.0)))?;
    let k4 = f(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_accuracy() {
        let mut x = DVector::from_element(1, 1.0);
        let h = 1e-2;
        for _ in 0..100 {
            x = rk4_step(&x, h, |y| Ok(-y)).unwrap();
        }
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let mut x = DVector::from_vec(vec![1.0, 0.0]);
        for _ in 0..1000 {
            x = rk4_step(&x, 1e-2, |y| Ok(DVector::from_vec(vec![y[1], -y[0]]))).unwrap();
        }
        assert!((x.norm() - 1.0).abs() < 1e-8);
    }
}
