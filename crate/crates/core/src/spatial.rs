//! Sparse spatial-aware image graph over detected objects.

use log::warn;
use serde::Serialize;

use crate::data::{tokenize, Detection, EmbeddingTable};
use crate::error::Result;

pub const NEIGHBORS: usize = 5;
pub const SPATIAL_DIM: usize = 5;

/// `[Δx/√(w_i h_i), Δy/√(w_i h_i), w_j/w_i, h_j/h_i, w_j h_j/(w_i h_i)]`
/// with `Δ` the centre of `i` minus the centre of `j`.
pub fn relative_spatial_vector(bi: &[f64; 4], bj: &[f64; 4]) -> [f64; SPATIAL_DIM] {
    let (wi, hi) = (bi[2] - bi[0], bi[3] - bi[1]);
    let (wj, hj) = (bj[2] - bj[0], bj[3] - bj[1]);
    let xi = (bi[0] + bi[2]) / 2.0;
    let yi = (bi[1] + bi[3]) / 2.0;
    let xj = (bj[0] + bj[2]) / 2.0;
    let yj = (bj[1] + bj[3]) / 2.0;
    let norm = (wi * hi).sqrt();
    [
        (xi - xj) / norm,
        (yi - yj) / norm,
        wj / wi,
        hj / hi,
        (wj * hj) / (wi * hi),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub r: [f64; SPATIAL_DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialGraph {
    pub labels: Vec<String>,
    pub nodes: Vec<Vec<f64>>,
    pub bboxes: Vec<[f64; 4]>,
    /// Grouped by source node, each group in neighbour order.
    pub edges: Vec<Edge>,
    pub neighbors: Vec<Vec<usize>>,
    pub sentinel: bool,
}

impl SpatialGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Neighbours per node; equal for every node by construction.
    pub fn degree(&self) -> usize {
        self.neighbors.first().map_or(0, |n| n.len())
    }
}

/// Indices of the `k` nearest boxes to `i` by squared centre distance,
/// ties by ascending index.
pub fn nearest_neighbors(centers: &[(f64, f64)], i: usize, k: usize) -> Vec<usize> {
    let (xi, yi) = centers[i];
    let mut others: Vec<(f64, usize)> = centers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, &(x, y))| ((xi - x) * (xi - x) + (yi - y) * (yi - y), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Builds the graph from detections already truncated to the top by score.
pub fn build_graph(detections: &[Detection], table: &EmbeddingTable) -> Result<SpatialGraph> {
    build_graph_with(detections, table, NEIGHBORS)
}

pub fn build_graph_with(detections: &[Detection], table: &EmbeddingTable, k: usize) -> Result<SpatialGraph> {
    if detections.is_empty() {
        warn!("no detections; using a single zero node");
        return Ok(SpatialGraph {
            labels: vec![String::new()],
            nodes: vec![vec![0.0; table.dim()]],
            bboxes: vec![[0.0, 0.0, 1.0, 1.0]],
            edges: Vec::new(),
            neighbors: vec![Vec::new()],
            sentinel: true,
        });
    }
    for d in detections {
        d.validate()?;
    }
    let m = detections.len();
    let k = k.min(m - 1);
    let centers: Vec<(f64, f64)> = detections.iter().map(|d| d.center()).collect();
    let mut edges = Vec::with_capacity(m * k);
    let mut neighbors = Vec::with_capacity(m);
    for i in 0..m {
        let n = nearest_neighbors(&centers, i, k);
        for &j in &n {
            edges.push(Edge {
                source: i,
                target: j,
                r: relative_spatial_vector(&detections[i].bbox, &detections[j].bbox),
            });
        }
        neighbors.push(n);
    }
    let nodes = detections
        .iter()
        .map(|d| table.embed_phrase(&tokenize(&d.label)))
        .collect::<Result<_>>()?;
    Ok(SpatialGraph {
        labels: detections.iter().map(|d| d.label.clone()).collect(),
        nodes,
        bboxes: detections.iter().map(|d| d.bbox).collect(),
        edges,
        neighbors,
        sentinel: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxes_at(centers: &[(f64, f64)]) -> Vec<Detection> {
        centers
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Detection::new(&format!("o{i}"), [x - 0.5, y - 0.5, x + 0.5, y + 0.5], 1.0).unwrap())
            .collect()
    }

    #[test]
    fn identities() {
        let b = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(relative_spatial_vector(&b, &b), [0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(relative_spatial_vector(&b, &[1.0, 0.0, 2.0, 1.0]), [-1.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(relative_spatial_vector(&[1.0, 1.0, 2.0, 2.0], &[0.5, 0.5, 2.5, 2.5]), [0.0, 0.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn knn_with_ties() {
        let t = EmbeddingTable::new(2);
        let g = build_graph_with(&boxes_at(&[(0.0, 0.0), (1.0, 0.0), (5.0, 0.0)]), &t, 1).unwrap();
        let pairs: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.source, e.target)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 0), (2, 1)]);
    }

    #[test]
    fn two_objects_and_sentinel() {
        let t = EmbeddingTable::new(3);
        let g = build_graph(&boxes_at(&[(0.0, 0.0), (3.0, 4.0)]), &t).unwrap();
        assert_eq!(g.neighbors, vec![vec![1], vec![0]]);
        let g = build_graph(&[], &t).unwrap();
        assert!(g.sentinel && g.edges.is_empty() && g.len() == 1);
    }
}
