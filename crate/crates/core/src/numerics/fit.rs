use crate::error::{Error, Result};

/// Normalized-RMSE fit in percent: `100 * (1 - |y - yhat| / |y - mean(y)|)`.
///
/// 100 is a perfect match, 0 is no better than predicting the mean, and the
/// value is unbounded below.
pub fn nrmse_fit(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() || y.len() < 2 {
        return Err(Error::Dimension(format!(
            "fit needs two equal-length sequences of at least 2 samples, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let err: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let spread: f64 = y.iter().map(|a| (a - mean).powi(2)).sum::<f64>().sqrt();
    if spread == 0.0 || !spread.is_finite() {
        return Err(Error::UndefinedFit);
    }
    Ok(100.0 * (1.0 - err / spread))
}
