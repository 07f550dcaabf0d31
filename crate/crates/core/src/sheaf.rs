//! Cellular sheaves with diagonal restriction maps.
//!
//! Node and edge stalks are all `R^d`. The restriction map from an endpoint
//! into an edge stalk is elementwise multiplication by a learned vector, so a
//! sheaf over a graph with `E` edges is fully described by two `E×d` arrays:
//! `r_src` for the stored source endpoint and `r_dst` for the destination.
//!
//! With `δ_e = r_dst ⊙ h_v − r_src ⊙ h_u` for `e = (u, v)`, the weighted
//! Laplacian is `L = δᵀ diag(w) δ`. Passing unit weights gives the plain
//! operator.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::Graph;

/// Default limit on `N·d` for dense assembly.
pub const DEFAULT_DENSE_CAP: usize = 4096;
/// Default relative singular-value threshold for numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// An `N×d` array of stalk vectors, node `u` in row `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSignal {
    num_nodes: usize,
    dim: usize,
    values: Vec<f64>,
}

impl NodeSignal {
    pub fn new(num_nodes: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_nodes * dim {
            return shape_err(format!(
                "node signal of shape ({num_nodes}, {dim}) needs {} values, got {}",
                num_nodes * dim,
                values.len()
            ));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("node signal has non-finite entries".into()));
        }
        Ok(Self {
            num_nodes,
            dim,
            values,
        })
    }

    pub fn zeros(num_nodes: usize, dim: usize) -> Self {
        Self {
            num_nodes,
            dim,
            values: vec![0.0; num_nodes * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return shape_err("ragged rows in node signal");
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.values[u * self.dim..(u + 1) * self.dim]
    }

    pub fn row_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.values[u * self.dim..(u + 1) * self.dim]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &NodeSignal) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    fn check_graph(&self, g: &Graph) -> Result<()> {
        if self.num_nodes != g.num_nodes() {
            return shape_err(format!(
                "signal has {} rows, graph has {} nodes",
                self.num_nodes,
                g.num_nodes()
            ));
        }
        Ok(())
    }
}

/// Serialized restriction vectors, aligned with the graph's stored edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SheafMaps {
    pub stalk_dim: usize,
    pub r_src: Vec<Vec<f64>>,
    pub r_dst: Vec<Vec<f64>>,
}

/// A cellular sheaf over `graph` with diagonal restriction maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Sheaf<'g> {
    graph: &'g Graph,
    stalk_dim: usize,
    r_src: Vec<f64>,
    r_dst: Vec<f64>,
}

impl<'g> Sheaf<'g> {
    /// `r_src` and `r_dst` are flat `E×d` arrays in stored-edge order.
    pub fn new(graph: &'g Graph, stalk_dim: usize, r_src: Vec<f64>, r_dst: Vec<f64>) -> Result<Self> {
        if stalk_dim == 0 {
            return Err(Error::InvalidArgument("stalk dimension must be positive".into()));
        }
        let want = graph.num_edges() * stalk_dim;
        if r_src.len() != want || r_dst.len() != want {
            return shape_err(format!(
                "restriction vectors need {want} entries ({} edges × d={stalk_dim}), got {} and {}",
                graph.num_edges(),
                r_src.len(),
                r_dst.len()
            ));
        }
        if r_src.iter().chain(&r_dst).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("restriction vectors must be finite".into()));
        }
        Ok(Self {
            graph,
            stalk_dim,
            r_src,
            r_dst,
        })
    }

    /// All restriction maps equal to the identity.
    pub fn identity(graph: &'g Graph, stalk_dim: usize) -> Self {
        let n = graph.num_edges() * stalk_dim;
        Self::new(graph, stalk_dim, vec![1.0; n], vec![1.0; n]).expect("identity sheaf is valid")
    }

    pub fn from_maps(graph: &'g Graph, maps: &SheafMaps) -> Result<Self> {
        if maps.r_src.len() != graph.num_edges() || maps.r_dst.len() != graph.num_edges() {
            return shape_err(format!(
                "sheaf file has {}/{} edge rows, graph has {} edges",
                maps.r_src.len(),
                maps.r_dst.len(),
                graph.num_edges()
            ));
        }
        if maps
            .r_src
            .iter()
            .chain(&maps.r_dst)
            .any(|r| r.len() != maps.stalk_dim)
        {
            return shape_err(format!("every restriction vector must have length {}", maps.stalk_dim));
        }
        Self::new(graph, maps.stalk_dim, maps.r_src.concat(), maps.r_dst.concat())
    }

    pub fn to_maps(&self) -> SheafMaps {
        let d = self.stalk_dim;
        SheafMaps {
            stalk_dim: d,
            r_src: self.r_src.chunks(d).map(<[f64]>::to_vec).collect(),
            r_dst: self.r_dst.chunks(d).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn load_json(graph: &'g Graph, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let maps: SheafMaps = serde_json::from_str(&text)?;
        Self::from_maps(graph, &maps)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_maps())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn stalk_dim(&self) -> usize {
        self.stalk_dim
    }

    pub fn r_src(&self, e: usize) -> &[f64] {
        &self.r_src[e * self.stalk_dim..(e + 1) * self.stalk_dim]
    }

    pub fn r_dst(&self, e: usize) -> &[f64] {
        &self.r_dst[e * self.stalk_dim..(e + 1) * self.stalk_dim]
    }

    /// Size `N·d` of the node cochain space.
    pub fn cochain_dim(&self) -> usize {
        self.graph.num_nodes() * self.stalk_dim
    }

    /// Reverses the stored orientation of edge `e` on `flipped` and swaps the
    /// edge's restriction vectors to match.
    pub fn reoriented<'h>(&self, flipped: &'h Graph, e: usize) -> Result<Sheaf<'h>> {
        let mut s = Sheaf::new(flipped, self.stalk_dim, self.r_src.clone(), self.r_dst.clone())?;
        let d = self.stalk_dim;
        let span = e * d..(e + 1) * d;
        let src: Vec<f64> = s.r_src[span.clone()].to_vec();
        s.r_src[span.clone()].copy_from_slice(&s.r_dst[span.clone()].to_vec());
        s.r_dst[span].copy_from_slice(&src);
        Ok(s)
    }

    fn check_signal(&self, h: &NodeSignal) -> Result<()> {
        h.check_graph(self.graph)?;
        if h.dim() != self.stalk_dim {
            return shape_err(format!(
                "signal has stalk dimension {}, sheaf has {}",
                h.dim(),
                self.stalk_dim
            ));
        }
        Ok(())
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.graph.num_edges() {
            return shape_err(format!(
                "{} edge weights for {} edges",
                w.len(),
                self.graph.num_edges()
            ));
        }
        Ok(())
    }

    fn check_dense(&self, cap: usize) -> Result<usize> {
        let size = self.cochain_dim();
        if size > cap {
            return Err(Error::DenseCapExceeded { size, cap });
        }
        Ok(size)
    }

    /// Edge discrepancies `(δh)_e = r_dst ⊙ h_v − r_src ⊙ h_u`, flat `E×d`.
    pub fn coboundary(&self, h: &NodeSignal) -> Result<Vec<f64>> {
        self.check_signal(h)?;
        let d = self.stalk_dim;
        let mut out = vec![0.0; self.graph.num_edges() * d];
        for (e, &(u, v)) in self.graph.edges().iter().enumerate() {
            let (rs, rd) = (self.r_src(e), self.r_dst(e));
            let (hu, hv) = (h.row(u), h.row(v));
            for (k, o) in out[e * d..(e + 1) * d].iter_mut().enumerate() {
                *o = rd[k] * hv[k] - rs[k] * hu[k];
            }
        }
        Ok(out)
    }

    /// `δᵀ diag(w) δ h`, evaluated edge by edge with a fixed accumulation
    /// order per node.
    pub fn laplacian_apply(&self, h: &NodeSignal, w: &[f64]) -> Result<NodeSignal> {
        self.check_signal(h)?;
        self.check_weights(w)?;
        let d = self.stalk_dim;
        let mut out = NodeSignal::zeros(h.num_nodes(), d);
        let mut disc = vec![0.0; d];
        for (e, &(u, v)) in self.graph.edges().iter().enumerate() {
            let (rs, rd) = (self.r_src(e), self.r_dst(e));
            let (hu, hv) = (h.row(u), h.row(v));
            for k in 0..d {
                disc[k] = w[e] * (rd[k] * hv[k] - rs[k] * hu[k]);
            }
            for (k, o) in out.row_mut(u).iter_mut().enumerate() {
                *o -= rs[k] * disc[k];
            }
            for (k, o) in out.row_mut(v).iter_mut().enumerate() {
                *o += rd[k] * disc[k];
            }
        }
        Ok(out)
    }

    /// Dense `Nd×Nd` Laplacian from its block decomposition.
    ///
    /// Node `u` occupies rows `u·d .. (u+1)·d`. Every block is diagonal:
    /// `(u,u)` accumulates `w_e·r_u²` over incident edges and `(u,v)` holds
    /// `−w_e·r_u·r_v`.
    pub fn dense_laplacian(&self, w: &[f64], cap: usize) -> Result<DMatrix<f64>> {
        self.check_weights(w)?;
        let size = self.check_dense(cap)?;
        let d = self.stalk_dim;
        let mut l = DMatrix::zeros(size, size);
        for (e, &(u, v)) in self.graph.edges().iter().enumerate() {
            let (rs, rd) = (self.r_src(e), self.r_dst(e));
            for k in 0..d {
                let (iu, iv) = (u * d + k, v * d + k);
                l[(iu, iu)] += w[e] * rs[k] * rs[k];
                l[(iv, iv)] += w[e] * rd[k] * rd[k];
                l[(iu, iv)] -= w[e] * rs[k] * rd[k];
                l[(iv, iu)] -= w[e] * rs[k] * rd[k];
            }
        }
        Ok(l)
    }

    /// `½ Σ_e w_e ‖r_src ⊙ h_u − r_dst ⊙ h_v‖²`.
    pub fn energy(&self, h: &NodeSignal, w: &[f64]) -> Result<f64> {
        self.check_weights(w)?;
        let delta = self.coboundary(h)?;
        let d = self.stalk_dim;
        Ok(0.5
            * delta
                .chunks(d)
                .zip(w)
                .map(|(de, we)| we * de.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>())
    }

    /// `Nd − rank(L)` with rank counted as singular values above
    /// `rank_tol · σ_max`.
    pub fn kernel_dimension(&self, w: &[f64], rank_tol: f64, cap: usize) -> Result<usize> {
        let l = self.dense_laplacian(w, cap)?;
        let size = l.nrows();
        let sv = l.singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        if smax == 0.0 {
            return Ok(size);
        }
        let rank = sv.iter().filter(|&&s| s > rank_tol * smax).count();
        Ok(size - rank)
    }
}

/// Classical Dirichlet energy `½ Σ_{(u,v)∈E} ‖h_u − h_v‖²`.
pub fn dirichlet_energy(g: &Graph, h: &NodeSignal) -> Result<f64> {
    h.check_graph(g)?;
    Ok(0.5
        * g.edges()
            .iter()
            .map(|&(u, v)| {
                h.row(u)
                    .iter()
                    .zip(h.row(v))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>())
}

/// Flattened `(N·d)` view of a signal as an nalgebra vector.
pub fn to_dvector(h: &NodeSignal) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(h.values())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(rows: &[&[f64]]) -> NodeSignal {
        NodeSignal::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn coboundary_p2_identity() {
        let g = Graph::path(2);
        let s = Sheaf::identity(&g, 1);
        assert_eq!(s.coboundary(&sig(&[&[1.0], &[0.0]])).unwrap(), vec![-1.0]);
    }

    #[test]
    fn coboundary_constant_is_zero() {
        let g = Graph::complete(4);
        let s = Sheaf::identity(&g, 3);
        let h = NodeSignal::new(4, 3, [0.5, -2.0, 7.0].repeat(4)).unwrap();
        assert!(s.coboundary(&h).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_p2_and_p3() {
        let g = Graph::path(2);
        let s = Sheaf::identity(&g, 1);
        let out = s.laplacian_apply(&sig(&[&[1.0], &[0.0]]), &[1.0]).unwrap();
        assert_eq!(out.values(), &[1.0, -1.0]);

        let g = Graph::path(3);
        let s = Sheaf::identity(&g, 1);
        let out = s
            .laplacian_apply(&sig(&[&[1.0], &[2.0], &[3.0]]), &[1.0, 1.0])
            .unwrap();
        assert_eq!(out.values(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn dense_p2_weighted_maps() {
        let g = Graph::path(2);
        let s = Sheaf::new(&g, 1, vec![2.0], vec![1.0]).unwrap();
        let l = s.dense_laplacian(&[1.0], DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[4.0, -2.0, -2.0, 1.0]));
    }

    #[test]
    fn dense_p3_identity_is_graph_laplacian() {
        let g = Graph::path(3);
        let s = Sheaf::identity(&g, 1);
        let l = s.dense_laplacian(&[1.0, 1.0], DEFAULT_DENSE_CAP).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(l, want);
    }

    #[test]
    fn dense_cap() {
        let g = Graph::path(10);
        let s = Sheaf::identity(&g, 4);
        let w = vec![1.0; 9];
        assert!(matches!(
            s.dense_laplacian(&w, 39),
            Err(Error::DenseCapExceeded { size: 40, cap: 39 })
        ));
        assert!(matches!(
            s.kernel_dimension(&w, DEFAULT_RANK_TOL, 39),
            Err(Error::DenseCapExceeded { .. })
        ));
    }

    #[test]
    fn dirichlet_examples() {
        let g = Graph::path(2);
        assert_eq!(dirichlet_energy(&g, &sig(&[&[1.0], &[0.0]])).unwrap(), 0.5);
        let g = Graph::path(3);
        let h = sig(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]]);
        assert_eq!(dirichlet_energy(&g, &h).unwrap(), 2.0);
        let h = sig(&[&[3.0, 1.0], &[3.0, 1.0], &[3.0, 1.0]]);
        assert_eq!(dirichlet_energy(&g, &h).unwrap(), 0.0);
    }

    #[test]
    fn sheaf_energy_examples() {
        let g = Graph::path(2);
        let s = Sheaf::new(&g, 1, vec![2.0], vec![1.0]).unwrap();
        assert_eq!(s.energy(&sig(&[&[1.0], &[2.0]]), &[1.0]).unwrap(), 0.0);

        let g = Graph::path(3);
        let s = Sheaf::identity(&g, 2);
        let h = sig(&[&[0.0, 1.0], &[1.0, -1.0], &[2.0, 5.0]]);
        assert_eq!(
            s.energy(&h, &[1.0, 1.0]).unwrap(),
            dirichlet_energy(&g, &h).unwrap()
        );
    }

    #[test]
    fn kernel_dimension_examples() {
        let g = Graph::cycle(5);
        let w = vec![1.0; 5];
        assert_eq!(Sheaf::identity(&g, 2).kernel_dimension(&w, DEFAULT_RANK_TOL, 4096).unwrap(), 2);

        let g = Graph::path(3);
        let s = Sheaf::new(&g, 1, vec![0.7, 1.3], vec![2.1, 0.4]).unwrap();
        assert_eq!(s.kernel_dimension(&[1.0, 1.0], DEFAULT_RANK_TOL, 4096).unwrap(), 1);

        let g = Graph::cycle(3);
        let s = Sheaf::new(&g, 1, vec![1.0; 3], vec![2.0; 3]).unwrap();
        assert_eq!(s.kernel_dimension(&[1.0; 3], DEFAULT_RANK_TOL, 4096).unwrap(), 0);
    }

    #[test]
    fn shape_errors() {
        let g = Graph::path(3);
        let s = Sheaf::identity(&g, 2);
        let bad = NodeSignal::zeros(3, 1);
        assert!(matches!(s.coboundary(&bad), Err(Error::Shape(_))));
        let h = NodeSignal::zeros(3, 2);
        assert!(matches!(s.laplacian_apply(&h, &[1.0]), Err(Error::Shape(_))));
        assert!(Sheaf::new(&g, 2, vec![1.0; 3], vec![1.0; 4]).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let g = Graph::path(3);
        let s = Sheaf::new(&g, 2, vec![0.1, 0.2, 0.3, 0.4], vec![-1.0, 2.0, 3.5, 1e-7]).unwrap();
        let text = serde_json::to_string(&s.to_maps()).unwrap();
        let back: SheafMaps = serde_json::from_str(&text).unwrap();
        assert_eq!(Sheaf::from_maps(&g, &back).unwrap(), s);
        assert!(serde_json::from_str::<SheafMaps>(r#"{"stalk_dim":1,"r_src":[],"r_dst":[],"x":1}"#).is_err());
    }
}
