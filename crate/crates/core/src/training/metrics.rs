use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};

/// Targets with smaller magnitude are left out of MAPE.
pub const MAPE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `None` when no observed target clears the floor.
    pub mape: Option<f64>,
}

/// MAE, RMSE and MAPE over the observed elements.
pub fn evaluate(preds: &[f64], targets: &[f64], mask: &[bool]) -> Result<Metrics> {
    if preds.len() != targets.len() || preds.len() != mask.len() {
        return shape_err(format!(
            "{} predictions, {} targets, {} mask entries",
            preds.len(),
            targets.len(),
            mask.len()
        ));
    }
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    let (mut pct, mut n_pct) = (0.0, 0usize);
    for ((&p, &y), &m) in preds.iter().zip(targets).zip(mask) {
        if !m {
            continue;
        }
        let e = p - y;
        abs += e.abs();
        sq += e * e;
        n += 1;
        if y.abs() >= MAPE_FLOOR {
            pct += (e / y).abs();
            n_pct += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("every target element is masked".into()));
    }
    Ok(Metrics {
        mae: abs / n as f64,
        rmse: (sq / n as f64).sqrt(),
        mape: (n_pct > 0).then(|| 100.0 * pct / n_pct as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    /// 1-based forecast step.
    pub horizon: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Overall metrics plus one entry per forecast step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub overall: Metrics,
    pub horizon: Vec<HorizonMetrics>,
}

/// Metrics for `[B, H, ...]` predictions and targets in original units.
pub fn evaluate_horizons(preds: &Tensor, targets: &Tensor, mask: &[bool]) -> Result<MetricsReport> {
    if preds.shape() != targets.shape() || preds.shape().len() < 2 {
        return shape_err(format!("predictions {:?} vs targets {:?}", preds.shape(), targets.shape()));
    }
    let overall = evaluate(preds.data(), targets.data(), mask)?;
    let (b, h) = (preds.shape()[0], preds.shape()[1]);
    let per = preds.numel() / (b * h).max(1);
    let mut horizon = Vec::with_capacity(h);
    for k in 0..h {
        let (mut p, mut y, mut m) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..b {
            let r = (i * h + k) * per..(i * h + k + 1) * per;
            p.extend_from_slice(&preds.data()[r.clone()]);
            y.extend_from_slice(&targets.data()[r.clone()]);
            m.extend_from_slice(&mask[r]);
        }
        horizon.push(HorizonMetrics {
            horizon: k + 1,
            metrics: evaluate(&p, &y, &m)?,
        });
    }
    Ok(MetricsReport { overall, horizon })
}
