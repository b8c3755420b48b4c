use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::synthworld::denormalize_agbd;

fn check(y: &[f64], mu: &[f64], sigma: &[f64]) -> Result<()> {
    if y.len() != mu.len() || y.len() != sigma.len() {
        return Err(contract("y, mu and sigma must have equal length"));
    }
    if y.len() < 2 {
        return Err(contract("at least two values are required"));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(contract(format!("sigma must be positive, got {s}")));
    }
    Ok(())
}

/// Mean and population standard deviation of `(y - mu) / sigma`.
pub fn z_stats(y: &[f64], mu: &[f64], sigma: &[f64]) -> Result<(f64, f64)> {
    check(y, mu, sigma)?;
    let n = y.len() as f64;
    let z: Vec<f64> = y.iter().zip(mu).zip(sigma).map(|((y, m), s)| (y - m) / s).collect();
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Fraction of points with `|y - mu| <= k·sigma`.
pub fn coverage(y: &[f64], mu: &[f64], sigma: &[f64], k: f64) -> Result<f64> {
    check(y, mu, sigma)?;
    if !(k > 0.0) {
        return Err(contract("interval multiplier must be positive"));
    }
    let inside = y
        .iter()
        .zip(mu)
        .zip(sigma)
        .filter(|((y, m), s)| (*y - *m).abs() <= k * **s)
        .count();
    Ok(inside as f64 / y.len() as f64)
}

/// `1 - SSE/SST` around the mean of `y`.
pub fn r2(y: &[f64], pred: &[f64]) -> Result<f64> {
    if y.len() != pred.len() || y.len() < 2 {
        return Err(contract("r2 needs two or more paired values"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::Undefined("R² of a constant target".into()));
    }
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// NaN when the targets have no variance.
    pub log_r2: f64,
    pub log_rmse: f64,
    pub linear_rmse: f64,
    pub linear_mae: f64,
}

/// Log-space R²/RMSE on normalized values and Mg/ha RMSE/MAE after the
/// plain exponential back-transform of both sides.
pub fn accuracy_metrics(y_norm: &[f64], mu_norm: &[f64]) -> Result<Accuracy> {
    if y_norm.len() != mu_norm.len() || y_norm.len() < 2 {
        return Err(contract("accuracy metrics need two or more paired values"));
    }
    let log_r2 = match r2(y_norm, mu_norm) {
        Ok(v) => v,
        Err(Error::Undefined(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    let ya: Vec<f64> = y_norm.iter().map(|&v| denormalize_agbd(v)).collect();
    let ma: Vec<f64> = mu_norm.iter().map(|&v| denormalize_agbd(v)).collect();
    Ok(Accuracy {
        log_r2,
        log_rmse: rmse(y_norm, mu_norm),
        linear_rmse: rmse(&ya, &ma),
        linear_mae: ya.iter().zip(&ma).map(|(a, b)| (a - b).abs()).sum::<f64>() / ya.len() as f64,
    })
}

/// Global accuracy and calibration metrics of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub log_r2: f64,
    pub log_rmse: f64,
    pub linear_rmse_mgha: f64,
    pub linear_mae_mgha: f64,
    pub cov1: f64,
    pub cov2: f64,
    pub z_mean: f64,
    pub z_std: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn compute(y: &[f64], mu: &[f64], sigma: &[f64]) -> Result<Self> {
        let acc = accuracy_metrics(y, mu)?;
        let (z_mean, z_std) = z_stats(y, mu, sigma)?;
        Ok(Self {
            log_r2: acc.log_r2,
            log_rmse: acc.log_rmse,
            linear_rmse_mgha: acc.linear_rmse,
            linear_mae_mgha: acc.linear_mae,
            cov1: coverage(y, mu, sigma, 1.0)?,
            cov2: coverage(y, mu, sigma, 2.0)?,
            z_mean,
            z_std,
            n: y.len(),
        })
    }
}
