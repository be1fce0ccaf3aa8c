//! Sparse instance graph consumed by the dividing policy.
//!
//! Routing kinds connect each node to its K nearest neighbors by Euclidean
//! distance; KP uses a combined value-density affinity in place of distance;
//! MIS passes its native adjacency through verbatim. Edges are directed
//! exactly as built (no symmetric completion) and their order is
//! deterministic: sources ascending, neighbors by (score, index).

use crate::error::{Result, UdcError};
use crate::problems::{Instance, Kind};

/// Bumped whenever a per-kind feature layout changes; stored in checkpoints
/// so models reject graphs built under a different layout.
pub const FEATURE_LAYOUT_VERSION: u32 = 1;

/// Per-node input feature width for each kind.
pub fn node_feature_width(kind: Kind) -> usize {
    match kind {
        Kind::Tsp => 2,                 // x, y
        Kind::Cvrp => 4,                // x, y, demand/C, depot flag
        Kind::Op => 4,                  // x, y, prize, depot flag
        Kind::Pctsp => 5,               // x, y, prize, penalty, depot flag
        Kind::Kp => 2,                  // value, weight
        Kind::Mis => 2,                 // bias, degree share
    }
}

pub fn edge_feature_width(_kind: Kind) -> usize {
    1
}

#[derive(Debug, Clone)]
pub struct SparseGraph {
    pub kind: Kind,
    pub n: usize,
    /// Flat `[n * node_width]` row-major feature matrix.
    pub node_features: Vec<f64>,
    pub node_width: usize,
    /// Directed `(src, dst)` pairs.
    pub edges: Vec<(usize, usize)>,
    /// Flat `[edges.len() * 1]` edge features.
    pub edge_features: Vec<f64>,
    /// Per-source `(dst, edge index)` lists for decoding.
    pub out_edges: Vec<Vec<(usize, usize)>>,
    pub warnings: Vec<String>,
}

impl SparseGraph {
    pub fn node_feature(&self, i: usize) -> &[f64] {
        &self.node_features[i * self.node_width..(i + 1) * self.node_width]
    }
}

fn node_features_for(inst: &Instance) -> (Vec<f64>, usize) {
    let w = node_feature_width(inst.kind);
    let mut feats = Vec::with_capacity(inst.n * w);
    for i in 0..inst.n {
        match inst.kind {
            Kind::Tsp => feats.extend_from_slice(&inst.coords[i]),
            Kind::Cvrp => {
                feats.extend_from_slice(&inst.coords[i]);
                feats.push(inst.demands[i] / inst.capacity);
                feats.push(if i == 0 { 1.0 } else { 0.0 });
            }
            Kind::Op => {
                feats.extend_from_slice(&inst.coords[i]);
                feats.push(inst.prizes[i]);
                feats.push(if i == 0 { 1.0 } else { 0.0 });
            }
            Kind::Pctsp => {
                feats.extend_from_slice(&inst.coords[i]);
                feats.push(inst.prizes[i]);
                feats.push(inst.penalties[i]);
                feats.push(if i == 0 { 1.0 } else { 0.0 });
            }
            Kind::Kp => {
                feats.push(inst.values[i]);
                feats.push(inst.weights[i]);
            }
            Kind::Mis => {
                feats.push(1.0);
                feats.push(inst.adjacency[i].len() as f64 / (inst.n - 1) as f64);
            }
        }
    }
    (feats, w)
}

/// Build the sparse graph. `k` is ignored for MIS; `k >= n` is clamped to
/// `n - 1` with a warning record.
pub fn build_sparse_graph(inst: &Instance, k: usize) -> Result<SparseGraph> {
    if k == 0 && inst.kind != Kind::Mis {
        return Err(UdcError::InvalidParams("neighborhood size k must be >= 1".into()));
    }
    let mut warnings = Vec::new();
    let k = if inst.kind != Kind::Mis && k >= inst.n {
        warnings.push(format!("k={k} clamped to {}", inst.n - 1));
        inst.n - 1
    } else {
        k
    };

    let (node_features, node_width) = node_features_for(inst);
    let mut edges = Vec::new();
    let mut edge_features = Vec::new();

    match inst.kind {
        Kind::Mis => {
            for u in 0..inst.n {
                for &v in &inst.adjacency[u] {
                    edges.push((u, v));
                    edge_features.push(1.0);
                }
            }
        }
        Kind::Kp => {
            for i in 0..inst.n {
                let density = |j: usize| {
                    (inst.values[i] + inst.values[j]) / (inst.weights[i] + inst.weights[j])
                };
                let max_density = (0..inst.n)
                    .filter(|&j| j != i)
                    .map(density)
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut scored: Vec<(f64, usize)> = (0..inst.n)
                    .filter(|&j| j != i)
                    .map(|j| (1.0 - density(j) / max_density, j))
                    .collect();
                scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                for &(wgt, j) in scored.iter().take(k) {
                    edges.push((i, j));
                    edge_features.push(wgt);
                }
            }
        }
        _ => {
            for i in 0..inst.n {
                let mut scored: Vec<(f64, usize)> = (0..inst.n)
                    .filter(|&j| j != i)
                    .map(|j| (inst.dist(i, j), j))
                    .collect();
                scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                for &(d, j) in scored.iter().take(k) {
                    edges.push((i, j));
                    edge_features.push(d);
                }
            }
        }
    }

    let mut out_edges = vec![Vec::new(); inst.n];
    for (idx, &(u, v)) in edges.iter().enumerate() {
        out_edges[u].push((v, idx));
    }

    Ok(SparseGraph {
        kind: inst.kind,
        n: inst.n,
        node_features,
        node_width,
        edges,
        edge_features,
        out_edges,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_nodes_link_to_immediate_neighbors() {
        let coords: Vec<[f64; 2]> = (0..5).map(|i| [i as f64 * 0.2, 0.0]).collect();
        let inst = Instance::tsp(coords).unwrap();
        let g = build_sparse_graph(&inst, 2).unwrap();
        // Interior node 2 links to 1 and 3.
        let nbrs: Vec<usize> = g.out_edges[2].iter().map(|&(v, _)| v).collect();
        assert_eq!(nbrs, vec![1, 3]);
        assert_eq!(g.edges.len(), 10); // K*N
    }

    #[test]
    fn kp_affinity_matches_hand_evaluation() {
        let inst = Instance::kp(vec![0.5, 0.5, 1.0], vec![0.5, 1.0, 0.5], 1.0).unwrap();
        // Densities from node 0 (scaled values keep ratios of v=(1,1,2),
        // w=(1,2,1)): d'(0,1) = 1/1.5 * ... checked directly below.
        let g = build_sparse_graph(&inst, 2).unwrap();
        let d01 = (0.5 + 0.5) / (0.5 + 1.0); // 2/3
        let d02 = (0.5 + 1.0) / (0.5 + 0.5); // 3/2
        let max = d02;
        let w01 = 1.0 - d01 / max; // 5/9
        let w02 = 0.0;
        // Node 0's neighbors sorted by weight: node 2 first (weight 0).
        assert_eq!(g.out_edges[0][0].0, 2);
        assert!((g.edge_features[g.out_edges[0][0].1] - w02).abs() < 1e-12);
        assert_eq!(g.out_edges[0][1].0, 1);
        assert!((g.edge_features[g.out_edges[0][1].1] - w01).abs() < 1e-12);
    }

    #[test]
    fn mis_edges_pass_through_verbatim() {
        let inst = Instance::mis(4, vec![(0, 1), (1, 2), (0, 3)]).unwrap();
        let g = build_sparse_graph(&inst, 5).unwrap();
        let mut got: Vec<(usize, usize)> = g.edges.clone();
        got.sort_unstable();
        let mut expected = Vec::new();
        for u in 0..4 {
            for &v in &inst.adjacency[u] {
                expected.push((u, v));
            }
        }
        expected.sort_unstable();
        assert_eq!(got, expected);
    }

    #[test]
    fn oversized_k_clamps_with_warning() {
        let inst = Instance::tsp(vec![[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]]).unwrap();
        let g = build_sparse_graph(&inst, 10).unwrap();
        assert_eq!(g.edges.len(), 6);
        assert_eq!(g.warnings.len(), 1);
    }

    #[test]
    fn construction_is_deterministic() {
        let inst = crate::problems::generate_instance(
            Kind::Cvrp,
            25,
            9,
            &crate::problems::GenParams::default(),
        )
        .unwrap();
        let a = build_sparse_graph(&inst, 6).unwrap();
        let b = build_sparse_graph(&inst, 6).unwrap();
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.edge_features, b.edge_features);
    }
}
