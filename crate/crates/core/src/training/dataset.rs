use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::SeriesFile;
use crate::error::{shape_err, Error, Result};

/// Standard deviations below this are replaced by 1.
pub const STD_GUARD: f64 = 1e-8;

/// Per-node, per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub num_nodes: usize,
    pub num_features: usize,
    /// `[N, F]` row-major.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NodeStats {
    /// Statistics over the observed values of time steps `[0, steps)`.
    pub fn from_series(series: &SeriesFile, steps: usize) -> Result<Self> {
        let (n, f) = (series.num_nodes(), series.num_features());
        let steps = steps.min(series.num_steps());
        let mut sum = vec![0.0; n * f];
        let mut count = vec![0usize; n * f];
        for t in 0..steps {
            for (j, (s, c)) in sum.iter_mut().zip(&mut count).enumerate() {
                if let Some(v) = series.get(t, j / f, j % f) {
                    *s += v;
                    *c += 1;
                }
            }
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let mut sq = vec![0.0; n * f];
        for t in 0..steps {
            for (j, q) in sq.iter_mut().enumerate() {
                if let Some(v) = series.get(t, j / f, j % f) {
                    *q += (v - mean[j]) * (v - mean[j]);
                }
            }
        }
        let std = sq
            .iter()
            .zip(&count)
            .map(|(&q, &c)| {
                let s = if c > 0 { (q / c as f64).sqrt() } else { 0.0 };
                if s < STD_GUARD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self {
            num_nodes: n,
            num_features: f,
            mean,
            std,
        })
    }

    fn check(&self, len: usize) -> Result<()> {
        if len % (self.num_nodes * self.num_features) != 0 {
            return shape_err(format!(
                "{len} values do not tile ({}, {}) node statistics",
                self.num_nodes, self.num_features
            ));
        }
        Ok(())
    }

    /// Normalizes values laid out as `[..., N, F]` in place.
    pub fn zscore(&self, x: &mut [f64]) -> Result<()> {
        self.check(x.len())?;
        let nf = self.num_nodes * self.num_features;
        for (i, v) in x.iter_mut().enumerate() {
            let j = i % nf;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        Ok(())
    }

    pub fn inverse_zscore(&self, x: &mut [f64]) -> Result<()> {
        self.check(x.len())?;
        let nf = self.num_nodes * self.num_features;
        for (i, v) in x.iter_mut().enumerate() {
            let j = i % nf;
            *v = *v * self.std[j] + self.mean[j];
        }
        Ok(())
    }
}

/// Normalized windows: inputs `[W, T, N, F]`, targets `[W, H, N, F]` and the
/// target observation mask. Missing inputs are set to the node mean (zero
/// after normalization).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub mask: Vec<bool>,
    pub node_stats: NodeStats,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.targets.shape()[1]
    }

    pub fn num_nodes(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn num_features(&self) -> usize {
        self.inputs.shape()[3]
    }

    /// Inputs, targets and a 0/1 mask tensor for the listed windows.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor, Tensor)> {
        let xs = self.inputs.numel() / self.len().max(1);
        let ys = self.targets.numel() / self.len().max(1);
        let mut x = Vec::with_capacity(idx.len() * xs);
        let mut y = Vec::with_capacity(idx.len() * ys);
        let mut m = Vec::with_capacity(idx.len() * ys);
        for &i in idx {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("window {i} out of range")));
            }
            x.extend_from_slice(&self.inputs.data()[i * xs..(i + 1) * xs]);
            y.extend_from_slice(&self.targets.data()[i * ys..(i + 1) * ys]);
            m.extend(self.mask[i * ys..(i + 1) * ys].iter().map(|&b| f64::from(u8::from(b))));
        }
        let mut xshape = self.inputs.shape().to_vec();
        xshape[0] = idx.len();
        let mut yshape = self.targets.shape().to_vec();
        yshape[0] = idx.len();
        Ok((
            Tensor::new(xshape, x)?,
            Tensor::new(yshape.clone(), y)?,
            Tensor::new(yshape, m)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    /// Window counts: `floor(train·W)`, `floor(val·W)`, remainder to test.
    pub fn sizes(&self, windows: usize) -> Result<(usize, usize, usize)> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|x| !(0.0..=1.0).contains(x)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions {parts:?} must be in [0, 1] and sum to 1"
            )));
        }
        // The epsilon keeps e.g. 0.7·10 from flooring to 6.
        let n_train = ((self.train * windows as f64) + 1e-9).floor() as usize;
        let n_val = ((self.val * windows as f64) + 1e-9).floor() as usize;
        let n_train = n_train.min(windows);
        let n_val = n_val.min(windows - n_train);
        Ok((n_train, n_val, windows - n_train - n_val))
    }
}

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Number of stride-1 windows of `window + horizon` steps.
pub fn num_windows(steps: usize, window: usize, horizon: usize) -> usize {
    (steps + 1).saturating_sub(window + horizon)
}

/// Chronological stride-1 windows split into train/val/test. Normalization
/// statistics come from the input span of the training windows only.
pub fn make_windows(series: &SeriesFile, window: usize, horizon: usize, split: SplitFractions) -> Result<Splits> {
    if window == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("window and horizon must be at least 1".into()));
    }
    let total = series.num_steps();
    if total < window + horizon {
        return Err(Error::InvalidArgument(format!(
            "series of {total} steps is too short for window {window} + horizon {horizon}"
        )));
    }
    let w = num_windows(total, window, horizon);
    let (n_train, n_val, _) = split.sizes(w)?;
    if n_train == 0 {
        return Err(Error::InvalidArgument(format!("no training windows out of {w}")));
    }
    let stats = NodeStats::from_series(series, n_train + window - 1)?;
    let ranges = [0..n_train, n_train..n_train + n_val, n_train + n_val..w];
    let [train, val, test] = ranges.map(|r| build(series, &stats, window, horizon, r));
    Ok(Splits {
        train: train?,
        val: val?,
        test: test?,
    })
}

fn build(
    series: &SeriesFile,
    stats: &NodeStats,
    window: usize,
    horizon: usize,
    starts: std::ops::Range<usize>,
) -> Result<Dataset> {
    let (n, f) = (series.num_nodes(), series.num_features());
    let nf = n * f;
    let count = starts.len();
    let mut x = Vec::with_capacity(count * window * nf);
    let mut y = Vec::with_capacity(count * horizon * nf);
    let mut mask = Vec::with_capacity(count * horizon * nf);
    let norm = |t: usize, j: usize| (series.value(t, j / f, j % f) - stats.mean[j]) / stats.std[j];
    for s in starts {
        for t in s..s + window {
            for j in 0..nf {
                x.push(if series.is_observed(t, j / f, j % f) { norm(t, j) } else { 0.0 });
            }
        }
        for t in s + window..s + window + horizon {
            for j in 0..nf {
                let obs = series.is_observed(t, j / f, j % f);
                y.push(if obs { norm(t, j) } else { 0.0 });
                mask.push(obs);
            }
        }
    }
    Ok(Dataset {
        inputs: Tensor::new(vec![count, window, n, f], x)?,
        targets: Tensor::new(vec![count, horizon, n, f], y)?,
        mask,
        node_stats: stats.clone(),
    })
}
