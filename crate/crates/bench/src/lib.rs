//! Fixtures shared by the benchmarks.

use stsheaf::data::{gen_cascade_series, CascadeParams};
use stsheaf::model::{ModelConfig, ModelParams};
use stsheaf::training::{make_windows, Dataset, SplitFractions};
use stsheaf::{Graph, NodeSignal, Sheaf};

/// Watts-Strogatz graph with `k = 4`, `p = 0.2`.
pub fn graph(n: usize) -> Graph {
    Graph::watts_strogatz(n, 4, 0.2, 0).expect("valid graph parameters")
}

/// Sheaf with deterministic, non-identity restriction entries and a
/// deterministic signal.
pub fn sheaf_and_signal(g: &Graph, d: usize) -> (Sheaf<'_>, NodeSignal) {
    let e = g.num_edges() * d;
    let wave = |i: usize, f: f64| (i as f64 * f).sin() + 1.5;
    let r_src = (0..e).map(|i| wave(i, 0.7)).collect();
    let r_dst = (0..e).map(|i| wave(i, 1.3)).collect();
    let n = g.num_nodes() * d;
    let h = NodeSignal::new(g.num_nodes(), d, (0..n).map(|i| wave(i, 0.37) - 1.5).collect()).expect("signal shape");
    (Sheaf::new(g, d, r_src, r_dst).expect("restriction shapes"), h)
}

/// Default-sized model and training windows on cascade data.
pub fn model_fixture(config: &ModelConfig) -> (Graph, ModelParams, Dataset) {
    let g = graph(30);
    let series = gen_cascade_series(
        &g,
        &CascadeParams {
            num_steps: 200,
            ..Default::default()
        },
    )
    .expect("cascade data")
    .series;
    let splits = make_windows(&series, config.window, config.horizon, SplitFractions::default()).expect("windows");
    let params = ModelParams::init(config, g.num_nodes(), 0).expect("model init");
    (g, params, splits.train)
}
