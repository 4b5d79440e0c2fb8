//! K-nearest-neighbor graphs in feature space and edge-feature assembly.

use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("k-NN graph needs more points than neighbors (n = {n}, k = {k})")]
    TooFewPoints { n: usize, k: usize },
    #[error("feature matrix has {len} values, not a multiple of width {width}")]
    Shape { len: usize, width: usize },
    #[error("graph has {graph} rows but features have {features}")]
    RowMismatch { graph: usize, features: usize },
}

/// Row `i` lists the `k` nearest rows to row `i`, closest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    neighbors: Vec<usize>,
    k: usize,
}

impl KnnGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.neighbors.len() / self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    /// All neighbor indices, row-major (`rows × k`).
    pub fn as_slice(&self) -> &[usize] {
        &self.neighbors
    }
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        s = s + d * d;
    }
    s
}

/// Exact brute-force k-NN over the rows of `features` (`n × width`), self
/// excluded, ties broken by the lower index.
pub fn knn_graph<T: Real>(features: &[T], width: usize, k: usize) -> Result<KnnGraph, GraphError> {
    if width == 0 || !features.len().is_multiple_of(width) {
        return Err(GraphError::Shape {
            len: features.len(),
            width,
        });
    }
    let n = features.len() / width;
    if k == 0 || n <= k {
        return Err(GraphError::TooFewPoints { n, k });
    }
    let mut neighbors = Vec::with_capacity(n * k);
    // sorted ascending by (distance, index); the last entry is the current worst
    let mut best: Vec<(T, usize)> = Vec::with_capacity(k + 1);
    for i in 0..n {
        best.clear();
        let xi = &features[i * width..(i + 1) * width];
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = sq_dist(xi, &features[j * width..(j + 1) * width]);
            // j increases monotonically, so an equal distance never displaces an earlier index
            if best.len() == k && !(d < best[k - 1].0) {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| !(d < bd));
            best.insert(pos, (d, j));
            best.truncate(k);
        }
        neighbors.extend(best.iter().map(|&(_, j)| j));
    }
    Ok(KnnGraph { neighbors, k })
}

/// Per-edge features `concat(x_i, x_j - x_i)`, laid out as `n × k × 2·width`.
pub fn edge_features<T: Real>(features: &[T], width: usize, graph: &KnnGraph) -> Result<Vec<T>, GraphError> {
    if width == 0 || !features.len().is_multiple_of(width) {
        return Err(GraphError::Shape {
            len: features.len(),
            width,
        });
    }
    let n = features.len() / width;
    if graph.rows() != n {
        return Err(GraphError::RowMismatch {
            graph: graph.rows(),
            features: n,
        });
    }
    let mut out = Vec::with_capacity(n * graph.k() * 2 * width);
    for i in 0..n {
        let xi = &features[i * width..(i + 1) * width];
        for &j in graph.row(i) {
            let xj = &features[j * width..(j + 1) * width];
            out.extend_from_slice(xi);
            out.extend(xj.iter().zip(xi).map(|(&b, &a)| b - a));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_hand_table() {
        let g = knn_graph(&[0.0f64, 1.0, 3.0], 1, 1).unwrap();
        assert_eq!(g.as_slice(), &[1, 0, 1]);
    }

    #[test]
    fn k_is_n_minus_one() {
        let f: Vec<f64> = (0..12).map(|i| (i * 7 % 5) as f64).collect();
        let g = knn_graph(&f, 2, 5).unwrap();
        for i in 0..6 {
            let mut r = g.row(i).to_vec();
            r.sort_unstable();
            let want: Vec<usize> = (0..6).filter(|&j| j != i).collect();
            assert_eq!(r, want);
        }
    }

    #[test]
    fn duplicates_resolve_to_lowest_index() {
        let f = [0.0f64, 0.0, 0.0, 0.0, 0.0];
        let g = knn_graph(&f, 1, 2).unwrap();
        assert_eq!(g.row(0), &[1, 2]);
        assert_eq!(g.row(2), &[0, 1]);
        assert_eq!(g.row(4), &[0, 1]);
        assert_eq!(g, knn_graph(&f, 1, 2).unwrap());
    }

    #[test]
    fn too_few_points() {
        assert_eq!(
            knn_graph(&[0.0f64, 1.0], 1, 2).unwrap_err(),
            GraphError::TooFewPoints { n: 2, k: 2 }
        );
    }

    #[test]
    fn edge_feature_layout() {
        let f = [0.0f64, 2.0];
        let g = knn_graph(&f, 1, 1).unwrap();
        assert_eq!(edge_features(&f, 1, &g).unwrap(), vec![0.0, 2.0, 2.0, -2.0]);

        let same = [1.5f64, -1.0, 1.5, -1.0, 1.5, -1.0];
        let g = knn_graph(&same, 2, 2).unwrap();
        let e = edge_features(&same, 2, &g).unwrap();
        for edge in e.chunks(4) {
            assert_eq!(&edge[..2], &[1.5, -1.0]);
            assert_eq!(&edge[2..], &[0.0, 0.0]);
        }
    }
}
