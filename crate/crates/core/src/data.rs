//! Series files and synthetic spatio-temporal generators.
//!
//! A series is a `T × N × F` array plus an observation mask. On disk a
//! single-feature series is a CSV with one row per time step and one column
//! per node; an empty cell or `nan` marks a missing value.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::Graph;
use crate::sheaf::Sheaf;
use crate::spectral::{spectrum, SpectrumMethod, SpectrumOptions};

/// Row-major `[T, N, F]` values with a matching mask (`true` = observed).
/// Missing entries hold `0.0` in `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFile {
    num_steps: usize,
    num_nodes: usize,
    num_features: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl SeriesFile {
    pub fn new(
        num_steps: usize,
        num_nodes: usize,
        num_features: usize,
        values: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let n = num_steps * num_nodes * num_features;
        if num_steps == 0 || num_nodes == 0 || num_features == 0 {
            return shape_err("series needs at least one step, node and feature");
        }
        if values.len() != n || mask.len() != n {
            return shape_err(format!(
                "series ({num_steps}, {num_nodes}, {num_features}) needs {n} values and mask entries"
            ));
        }
        if values.iter().zip(&mask).any(|(v, &m)| m && !v.is_finite()) {
            return Err(Error::InvalidArgument("observed series values must be finite".into()));
        }
        Ok(Self {
            num_steps,
            num_nodes,
            num_features,
            values,
            mask,
        })
    }

    /// Fully observed series.
    pub fn dense(num_steps: usize, num_nodes: usize, num_features: usize, values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(num_steps, num_nodes, num_features, values, mask)
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn offset(&self, t: usize, u: usize, f: usize) -> usize {
        (t * self.num_nodes + u) * self.num_features + f
    }

    pub fn get(&self, t: usize, u: usize, f: usize) -> Option<f64> {
        let i = self.offset(t, u, f);
        self.mask[i].then_some(self.values[i])
    }

    pub fn value(&self, t: usize, u: usize, f: usize) -> f64 {
        self.values[self.offset(t, u, f)]
    }

    pub fn is_observed(&self, t: usize, u: usize, f: usize) -> bool {
        self.mask[self.offset(t, u, f)]
    }

    /// Combines single-feature series of equal size into one multi-feature
    /// series, feature `i` taken from `parts[i]`.
    pub fn stack_features(parts: &[SeriesFile]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no series to stack".into()))?;
        let (t, n) = (first.num_steps, first.num_nodes);
        if parts.iter().any(|p| p.num_steps != t || p.num_nodes != n || p.num_features != 1) {
            return shape_err("stacked series must be single-feature with equal T and N");
        }
        let f = parts.len();
        let mut values = Vec::with_capacity(t * n * f);
        let mut mask = Vec::with_capacity(t * n * f);
        for i in 0..t * n {
            for p in parts {
                values.push(p.values[i]);
                mask.push(p.mask[i]);
            }
        }
        Self::new(t, n, f, values, mask)
    }

    /// One feature as a `T × N` CSV.
    pub fn to_csv(&self, feature: usize) -> String {
        let mut out = String::new();
        for t in 0..self.num_steps {
            for u in 0..self.num_nodes {
                if u > 0 {
                    out.push(',');
                }
                if let Some(v) = self.get(t, u, feature) {
                    write!(out, "{v}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    /// Writes a single-feature series; multi-feature series are written one
    /// file per feature by the caller.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.num_features != 1 {
            return Err(Error::InvalidArgument(format!(
                "CSV export holds one feature, series has {}",
                self.num_features
            )));
        }
        let path = path.as_ref();
        std::fs::write(path, self.to_csv(0)).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_series_csv(text: &str) -> Result<SeriesFile> {
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut width = None;
    let mut steps = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {w} columns, found {}", cells.len()),
                })
            }
            _ => {}
        }
        for cell in cells {
            let cell = cell.trim();
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                values.push(0.0);
                mask.push(false);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("non-finite cell {cell:?}"),
                });
            }
            values.push(v);
            mask.push(true);
        }
        steps += 1;
    }
    let width = width.ok_or(Error::Parse {
        line: 1,
        message: "empty series file".into(),
    })?;
    SeriesFile::new(steps, width, 1, values, mask)
}

pub fn load_series_csv(path: impl AsRef<Path>) -> Result<SeriesFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series_csv(&text)
}

/// Writes generator parameters next to generated data.
pub fn write_sidecar<T: Serialize>(params: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(params)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const HEAT_BETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatParams {
    pub num_steps: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for HeatParams {
    fn default() -> Self {
        Self {
            num_steps: 500,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

/// `x_{t+1} = (I − β L / λ_max) x_t + noise` with the combinatorial graph
/// Laplacian `L = D − A` and standard normal `x_0`.
pub fn gen_heat_series(g: &Graph, p: &HeatParams) -> Result<SeriesFile> {
    if !g.is_connected() {
        return Err(Error::InvalidArgument("heat series needs a connected graph".into()));
    }
    if p.num_steps == 0 || !(p.noise_std >= 0.0 && p.noise_std.is_finite()) {
        return Err(Error::InvalidArgument("heat series needs num_steps ≥ 1 and finite noise_std ≥ 0".into()));
    }
    let n = g.num_nodes();
    let unit = vec![1.0; g.num_edges()];
    let lap = Sheaf::identity(g, 1);
    let lmax = if g.num_edges() == 0 {
        1.0
    } else {
        let opts = SpectrumOptions::default();
        spectrum(&lap, &unit, SpectrumMethod::auto(n), &opts)?.lambda_max
    };
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let noise = Normal::new(0.0, p.noise_std.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let mut values = Vec::with_capacity(p.num_steps * n);
    for _ in 0..p.num_steps {
        values.extend_from_slice(&x);
        let mut lx = vec![0.0; n];
        for &(u, v) in g.edges() {
            let diff = x[u] - x[v];
            lx[u] += diff;
            lx[v] -= diff;
        }
        for u in 0..n {
            x[u] -= HEAT_BETA / lmax * lx[u];
            if p.noise_std > 0.0 {
                x[u] += noise.sample(&mut rng);
            }
        }
    }
    SeriesFile::dense(p.num_steps, n, 1, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeParams {
    pub num_steps: usize,
    /// Expected number of new events per time step over the whole graph.
    pub event_rate: f64,
    /// Share of a source's neighbors that an event reaches.
    pub affected_fraction: f64,
    /// Delay between the source drop and the neighbor drops.
    pub lag: usize,
    /// Steps a drop lasts.
    pub duration: usize,
    /// Size of a drop.
    pub depth: f64,
    pub noise_std: f64,
    pub period: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for CascadeParams {
    fn default() -> Self {
        Self {
            num_steps: 2000,
            event_rate: 0.1,
            affected_fraction: 0.5,
            lag: 2,
            duration: 6,
            depth: 1.0,
            noise_std: 0.1,
            period: 48.0,
            amplitude: 1.0,
            seed: 0,
        }
    }
}

impl CascadeParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.num_steps == 0 {
            return bad("num_steps must be at least 1");
        }
        if !(self.event_rate >= 0.0 && self.event_rate.is_finite()) {
            return bad("event_rate must be finite and nonnegative");
        }
        if !(self.affected_fraction > 0.0 && self.affected_fraction <= 1.0) {
            return bad("affected_fraction must lie in (0, 1]");
        }
        if self.lag == 0 || self.duration == 0 {
            return bad("lag and duration must be at least 1");
        }
        if ![self.depth, self.noise_std, self.period, self.amplitude]
            .iter()
            .all(|x| x.is_finite() && *x >= 0.0)
            || self.period == 0.0
        {
            return bad("depth, noise_std, amplitude must be finite and nonnegative, period positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeEvent {
    pub source: usize,
    pub start: usize,
    /// Neighbors that drop `lag` steps after the source.
    pub affected: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CascadeSeries {
    pub series: SeriesFile,
    /// The same signal without observation noise.
    pub clean: SeriesFile,
    pub events: Vec<CascadeEvent>,
    /// Fixed affected-neighbor subset of every node when it is a source.
    pub affected_sets: Vec<Vec<usize>>,
}

/// Per-node sinusoidal baseline with a shared phase, plus drop events.
///
/// Event counts per step are Poisson with mean `event_rate`, each at a
/// uniformly random source. The source drops by `depth` for `duration`
/// steps; `lag` steps later the same drop hits a fixed per-source subset of
/// `max(1, round(affected_fraction · deg))` neighbors, drawn once from the
/// seed. Other neighbors are untouched.
pub fn gen_cascade_series(g: &Graph, p: &CascadeParams) -> Result<CascadeSeries> {
    p.validate()?;
    let n = g.num_nodes();
    let t_total = p.num_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let adjacency = g.adjacency();
    let affected_sets: Vec<Vec<usize>> = adjacency
        .iter()
        .map(|nbrs| {
            if nbrs.is_empty() {
                return Vec::new();
            }
            let k = ((p.affected_fraction * nbrs.len() as f64).round() as usize).clamp(1, nbrs.len());
            let mut chosen: Vec<usize> = nbrs.choose_multiple(&mut rng, k).copied().collect();
            chosen.sort_unstable();
            chosen
        })
        .collect();

    let levels: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut clean = vec![0.0; t_total * n];
    for t in 0..t_total {
        let phase = (2.0 * std::f64::consts::PI * t as f64 / p.period).sin();
        for u in 0..n {
            clean[t * n + u] = levels[u] + p.amplitude * phase;
        }
    }

    let mut events = Vec::new();
    if p.event_rate > 0.0 {
        let poisson = Poisson::new(p.event_rate).expect("positive rate");
        for t in 0..t_total {
            let count = poisson.sample(&mut rng) as usize;
            for _ in 0..count {
                let source = rng.random_range(0..n);
                events.push(CascadeEvent {
                    source,
                    start: t,
                    affected: affected_sets[source].clone(),
                });
            }
        }
    }
    // Overlapping drops at one node do not stack.
    let mut dropped = vec![false; t_total * n];
    for ev in &events {
        let mut hit = |u: usize, from: usize| {
            for t in from..(from + p.duration).min(t_total) {
                dropped[t * n + u] = true;
            }
        };
        hit(ev.source, ev.start);
        for &v in &ev.affected {
            hit(v, ev.start + p.lag);
        }
    }
    for (x, &d) in clean.iter_mut().zip(&dropped) {
        if d {
            *x -= p.depth;
        }
    }

    let noise = Normal::new(0.0, p.noise_std.max(f64::MIN_POSITIVE)).expect("valid normal");
    let noisy: Vec<f64> = clean
        .iter()
        .map(|&x| if p.noise_std > 0.0 { x + noise.sample(&mut rng) } else { x })
        .collect();
    Ok(CascadeSeries {
        series: SeriesFile::dense(t_total, n, 1, noisy)?,
        clean: SeriesFile::dense(t_total, n, 1, clean)?,
        events,
        affected_sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_simple_csv() {
        let s = parse_series_csv("1,2\n3,4").unwrap();
        assert_eq!((s.num_steps(), s.num_nodes(), s.num_features()), (2, 2, 1));
        assert_eq!(s.values(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(s.mask().iter().all(|&m| m));
    }

    #[test]
    fn parse_missing_cells() {
        let s = parse_series_csv("1,\n3,nan\n").unwrap();
        assert!(!s.is_observed(0, 1, 0));
        assert!(!s.is_observed(1, 1, 0));
        assert_eq!(s.get(1, 0, 0), Some(3.0));
    }

    #[test]
    fn parse_errors() {
        assert!(parse_series_csv("").is_err());
        assert!(matches!(
            parse_series_csv("1,2\n3\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_series_csv("1,x\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn csv_roundtrip_keeps_missing() {
        let s = parse_series_csv("1.5,\n-3,4e-3\n").unwrap();
        assert_eq!(parse_series_csv(&s.to_csv(0)).unwrap(), s);
    }

    #[test]
    fn stack_two_features() {
        let a = parse_series_csv("1,2\n3,4").unwrap();
        let b = parse_series_csv("5,\n7,8").unwrap();
        let s = SeriesFile::stack_features(&[a, b]).unwrap();
        assert_eq!(s.num_features(), 2);
        assert_eq!(s.get(0, 0, 1), Some(5.0));
        assert_eq!(s.get(0, 1, 1), None);
        assert_eq!(s.get(1, 1, 0), Some(4.0));
    }

    #[test]
    fn heat_is_seeded_and_smooths() {
        let g = Graph::watts_strogatz(12, 4, 0.2, 1).unwrap();
        let p = HeatParams {
            num_steps: 400,
            noise_std: 0.0,
            seed: 3,
        };
        let a = gen_heat_series(&g, &p).unwrap();
        assert_eq!(a, gen_heat_series(&g, &p).unwrap());
        let n = g.num_nodes();
        let spread = |t: usize| {
            let row = &a.values()[t * n..(t + 1) * n];
            let m = row.iter().sum::<f64>() / n as f64;
            row.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        };
        let mut prev = spread(0);
        for t in 1..400 {
            let s = spread(t);
            assert!(s <= prev + 1e-12);
            prev = s;
        }
        assert!(prev < 1e-8 * spread(0));
    }

    #[test]
    fn cascade_without_events_is_baseline() {
        let g = Graph::cycle(6);
        let p = CascadeParams {
            num_steps: 100,
            event_rate: 0.0,
            noise_std: 0.0,
            ..Default::default()
        };
        let c = gen_cascade_series(&g, &p).unwrap();
        assert!(c.events.is_empty());
        // Every node is its own level plus the shared sinusoid.
        for t in 1..100 {
            let d0 = c.clean.value(t, 0, 0) - c.clean.value(0, 0, 0);
            for u in 1..6 {
                let du = c.clean.value(t, u, 0) - c.clean.value(0, u, 0);
                assert!((d0 - du).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cascade_full_fraction_hits_every_neighbor() {
        let g = Graph::path(3);
        let p = CascadeParams {
            num_steps: 60,
            event_rate: 0.05,
            affected_fraction: 1.0,
            lag: 1,
            duration: 1,
            noise_std: 0.0,
            amplitude: 0.0,
            seed: 5,
            ..Default::default()
        };
        let c = gen_cascade_series(&g, &p).unwrap();
        // Levels are drawn before events, so a zero rate replays the baseline.
        let quiet = gen_cascade_series(&g, &CascadeParams { event_rate: 0.0, ..p.clone() }).unwrap();
        assert!(!c.events.is_empty());
        let adj = g.adjacency();
        for ev in &c.events {
            let mut want = adj[ev.source].clone();
            want.sort_unstable();
            assert_eq!(ev.affected, want);
            if ev.start + 1 < 60 {
                for &v in &ev.affected {
                    let drop = quiet.clean.value(ev.start + 1, v, 0) - c.clean.value(ev.start + 1, v, 0);
                    assert!((drop - p.depth).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cascade_rejects_bad_params() {
        let g = Graph::path(3);
        for p in [
            CascadeParams { affected_fraction: 0.0, ..Default::default() },
            CascadeParams { lag: 0, ..Default::default() },
            CascadeParams { event_rate: -1.0, ..Default::default() },
        ] {
            assert!(gen_cascade_series(&g, &p).is_err());
        }
    }
}
