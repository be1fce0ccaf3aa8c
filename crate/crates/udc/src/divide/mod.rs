//! The dividing policy: an anisotropic graph network over the sparse
//! instance graph, a score head that turns edge (or node, for MIS)
//! embeddings into a heatmap, and heatmap-guided solution decoding.

mod decode;
mod heuristics;

pub use decode::{
    decode_initial, decode_t_revisit, replay_log_prob, DecodeMode, DecodeStats, DecodedSolution,
    MISSING_EDGE_SCORE,
};
pub use heuristics::{heuristic_initial, InitMethod};

use crate::error::{Result, UdcError};
use crate::graph::{edge_feature_width, node_feature_width, SparseGraph};
use crate::nnet::{BnBatchStats, BnMode, ParamStore, Tape, Tensor, ValueId};
use crate::problems::Kind;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Network shape. Paper-scale values are 12 layers at width 64; the desk
/// default is smaller because the instances under test are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgnnConfig {
    pub layers: usize,
    pub width: usize,
}

impl Default for AgnnConfig {
    fn default() -> Self {
        AgnnConfig {
            layers: 4,
            width: 32,
        }
    }
}

impl AgnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.width < 2 {
            return Err(UdcError::InvalidParams(format!(
                "agnn config needs layers >= 1 and width >= 2, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-edge scores over the sparse edge set; per-node scores for MIS.
pub struct Heatmap {
    pub scores: ValueId,
    pub per_node: bool,
    /// The embeddings the head consumed, kept so T-revisit can re-run the
    /// head on them with a fresh partial-solution summary.
    pub source_emb: ValueId,
}

pub struct AgnnOut {
    pub node_emb: ValueId,
    pub edge_emb: ValueId,
    pub bn_updates: Vec<BnBatchStats>,
}

/// Register dividing-policy parameters for one problem kind.
pub fn init_divide_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    kind: Kind,
    config: &AgnnConfig,
    rng: &mut R,
) {
    let d = config.width;
    store.init_linear("div.node_embed", node_feature_width(kind), d, rng);
    store.init_linear("div.edge_embed", edge_feature_width(kind), d, rng);
    for l in 0..config.layers {
        for m in ["u", "v", "p", "q", "r"] {
            store.init_matrix(&format!("div.l{l}.{m}"), d, d, rng);
        }
        store.init_batch_norm(&format!("div.l{l}.bn_h"), d);
        store.init_batch_norm(&format!("div.l{l}.bn_e"), d);
    }
    store.init_linear("div.head.in", d, d, rng);
    store.init_matrix("div.head.sum", 2 * d, d, rng);
    store.init_linear("div.head.out", d, 1, rng);
}

fn feature_tensor(data: &[f64], rows: usize, width: usize) -> Tensor {
    Tensor::from_vec(rows, width, data.to_vec())
}

/// Anisotropic message passing over the sparse graph.
///
/// Per layer, with `i -> j` the directed edges:
/// node update `h_i += silu(bn(U h_i + mean_j sigmoid(e_ij) * V h_j))`,
/// edge update `e_ij += silu(bn(P e_ij + Q h_i + R h_j))`.
pub fn agnn_forward(
    tape: &mut Tape,
    graph: &SparseGraph,
    store: &ParamStore,
    config: &AgnnConfig,
    mode: BnMode,
) -> Result<AgnnOut> {
    config.validate()?;
    let expected_w = store.get("div.node_embed.w").rows;
    if graph.node_width != expected_w {
        return Err(UdcError::ShapeMismatch {
            context: "agnn_forward node features".into(),
            expected: format!("width {expected_w}"),
            got: format!("width {}", graph.node_width),
        });
    }

    let n_edges = graph.edges.len();
    let src: Vec<usize> = graph.edges.iter().map(|&(s, _)| s).collect();
    let dst: Vec<usize> = graph.edges.iter().map(|&(_, t)| t).collect();

    let x = tape.constant(feature_tensor(&graph.node_features, graph.n, graph.node_width));
    let wn = tape.param("div.node_embed.w", store.get("div.node_embed.w").clone());
    let bn_ = tape.param("div.node_embed.b", store.get("div.node_embed.b").clone());
    let mut h = tape.matmul(x, wn)?;
    h = tape.add_row_broadcast(h, bn_)?;

    let mut e = if n_edges > 0 {
        let xe = tape.constant(feature_tensor(&graph.edge_features, n_edges, 1));
        let we = tape.param("div.edge_embed.w", store.get("div.edge_embed.w").clone());
        let be = tape.param("div.edge_embed.b", store.get("div.edge_embed.b").clone());
        let e = tape.matmul(xe, we)?;
        tape.add_row_broadcast(e, be)?
    } else {
        tape.constant(Tensor::zeros(0, config.width))
    };

    let mut bn_updates = Vec::new();
    for l in 0..config.layers {
        let mat = |tape: &mut Tape, name: &str| -> ValueId {
            let full = format!("div.l{l}.{name}");
            tape.param(&full, store.get(&full).clone())
        };
        let u = mat(tape, "u");
        let v = mat(tape, "v");

        // Node update.
        let vh = tape.matmul(h, v)?;
        let agg = if n_edges > 0 {
            let vh_j = tape.gather_rows(vh, &dst);
            let gate = tape.sigmoid(e);
            let msg = tape.hadamard(gate, vh_j)?;
            tape.scatter_mean(msg, &src, graph.n)
        } else {
            tape.constant(Tensor::zeros(graph.n, config.width))
        };
        let uh = tape.matmul(h, u)?;
        let pre_h = tape.add(uh, agg)?;
        let prefix_h = format!("div.l{l}.bn_h");
        let gamma_h = tape.param(&format!("{prefix_h}.gamma"), store.get(&format!("{prefix_h}.gamma")).clone());
        let beta_h = tape.param(&format!("{prefix_h}.beta"), store.get(&format!("{prefix_h}.beta")).clone());
        let (rm, rv) = store.running_stats(&prefix_h);
        let (bnh, stats) = tape.batch_norm(pre_h, gamma_h, beta_h, rm, rv, mode, &prefix_h)?;
        if let Some(s) = stats {
            bn_updates.push(s);
        }
        let act_h = tape.silu(bnh);
        let h_next = tape.add(h, act_h)?;

        // Edge update (skipped entirely on edgeless graphs).
        if n_edges > 0 {
            let p = mat(tape, "p");
            let q = mat(tape, "q");
            let r = mat(tape, "r");
            let pe = tape.matmul(e, p)?;
            let qh = tape.matmul(h, q)?;
            let qh_i = tape.gather_rows(qh, &src);
            let rh = tape.matmul(h, r)?;
            let rh_j = tape.gather_rows(rh, &dst);
            let s1 = tape.add(pe, qh_i)?;
            let pre_e = tape.add(s1, rh_j)?;
            let prefix_e = format!("div.l{l}.bn_e");
            let gamma_e = tape.param(&format!("{prefix_e}.gamma"), store.get(&format!("{prefix_e}.gamma")).clone());
            let beta_e = tape.param(&format!("{prefix_e}.beta"), store.get(&format!("{prefix_e}.beta")).clone());
            let (rm, rv) = store.running_stats(&prefix_e);
            let (bne, stats) = tape.batch_norm(pre_e, gamma_e, beta_e, rm, rv, mode, &prefix_e)?;
            if let Some(s) = stats {
                bn_updates.push(s);
            }
            let act_e = tape.silu(bne);
            e = tape.add(e, act_e)?;
        }
        h = h_next;
    }

    Ok(AgnnOut {
        node_emb: h,
        edge_emb: e,
        bn_updates,
    })
}

/// Zero partial-solution summary for the first heatmap.
pub fn empty_summary(tape: &mut Tape, config: &AgnnConfig) -> ValueId {
    tape.constant(Tensor::zeros(1, 2 * config.width))
}

/// Summary of the committed partial solution: mean embedding of the last
/// (up to) 10 committed nodes, concatenated with the last node's embedding.
pub fn partial_summary(
    tape: &mut Tape,
    node_emb: ValueId,
    committed: &[usize],
    config: &AgnnConfig,
) -> Result<ValueId> {
    if committed.is_empty() {
        return Ok(empty_summary(tape, config));
    }
    let tail_start = committed.len().saturating_sub(10);
    let tail = &committed[tail_start..];
    let gathered = tape.gather_rows(node_emb, tail);
    let mean = tape.mean_rows(gathered);
    let last = tape.gather_rows(node_emb, &committed[committed.len() - 1..]);
    tape.concat_cols(mean, last)
}

/// Map edge embeddings (node embeddings for MIS) plus a partial-solution
/// summary to scalar scores.
pub fn heatmap_head(
    tape: &mut Tape,
    embeddings: ValueId,
    summary: ValueId,
    store: &ParamStore,
    per_node: bool,
) -> Result<Heatmap> {
    let w1 = tape.param("div.head.in.w", store.get("div.head.in.w").clone());
    let b1 = tape.param("div.head.in.b", store.get("div.head.in.b").clone());
    let ws = tape.param("div.head.sum", store.get("div.head.sum").clone());
    let w2 = tape.param("div.head.out.w", store.get("div.head.out.w").clone());
    let b2 = tape.param("div.head.out.b", store.get("div.head.out.b").clone());

    let mut a = tape.matmul(embeddings, w1)?;
    let s = tape.matmul(summary, ws)?;
    a = tape.add_row_broadcast(a, s)?;
    a = tape.add_row_broadcast(a, b1)?;
    let a = tape.silu(a);
    let mut scores = tape.matmul(a, w2)?;
    scores = tape.add_row_broadcast(scores, b2)?;
    Ok(Heatmap {
        scores,
        per_node,
        source_emb: embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_sparse_graph;
    use crate::problems::{generate_instance, GenParams, Instance};

    fn fresh_store(kind: Kind, config: &AgnnConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new(1e-4);
        let mut rng = crate::rng::stream(seed, &[99]);
        init_divide_params(&mut store, kind, config, &mut rng);
        store
    }

    #[test]
    fn zero_weights_leave_residual_stream_untouched() {
        let config = AgnnConfig { layers: 2, width: 8 };
        let mut store = fresh_store(Kind::Tsp, &config, 1);
        for l in 0..2 {
            for m in ["u", "v", "p", "q", "r"] {
                let name = format!("div.l{l}.{m}");
                let t = store.get_mut(&name);
                t.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let inst = generate_instance(Kind::Tsp, 6, 3, &GenParams::default()).unwrap();
        let graph = build_sparse_graph(&inst, 3).unwrap();
        let mut tape = Tape::new();
        let out = agnn_forward(&mut tape, &graph, &store, &config, BnMode::Batch).unwrap();
        // With U..R all zero the pre-activations are zero, BN(0)=0, silu(0)=0,
        // so the residual stream equals the input projection.
        let x = Tensor::from_vec(graph.n, graph.node_width, graph.node_features.clone());
        let w = store.get("div.node_embed.w");
        let expect = x.matmul(w);
        let got = tape.value(out.node_emb);
        for r in 0..graph.n {
            for c in 0..8 {
                let e = expect.get(r, c) + store.get("div.node_embed.b").data[c];
                assert!((got.get(r, c) - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edgeless_graph_reduces_to_residual_node_path() {
        let config = AgnnConfig { layers: 2, width: 8 };
        let store = fresh_store(Kind::Mis, &config, 2);
        let inst = Instance::mis(3, vec![]).unwrap();
        let graph = build_sparse_graph(&inst, 4).unwrap();
        assert!(graph.edges.is_empty());
        let mut tape = Tape::new();
        let out = agnn_forward(&mut tape, &graph, &store, &config, BnMode::Batch).unwrap();
        assert_eq!(tape.value(out.node_emb).rows, 3);
        assert_eq!(tape.value(out.edge_emb).rows, 0);
    }

    #[test]
    fn agnn_gradients_match_finite_differences() {
        let config = AgnnConfig { layers: 1, width: 4 };
        let store = fresh_store(Kind::Tsp, &config, 3);
        let inst = generate_instance(Kind::Tsp, 5, 7, &GenParams::default()).unwrap();
        let graph = build_sparse_graph(&inst, 2).unwrap();

        let run = |store: &ParamStore| -> (f64, Option<std::collections::BTreeMap<String, Tensor>>) {
            let mut tape = Tape::new();
            let out = agnn_forward(&mut tape, &graph, store, &config, BnMode::Batch).unwrap();
            let summary = empty_summary(&mut tape, &config);
            let hm = heatmap_head(&mut tape, out.edge_emb, summary, store, false).unwrap();
            let loss = tape.sum_all(hm.scores);
            let grads = tape.backward(loss).unwrap();
            (tape.value(loss).item(), Some(grads))
        };
        let (_, grads) = run(&store);
        let grads = grads.unwrap();
        let h = 1e-6;
        let names: Vec<String> = store.trainable_names().map(String::from).collect();
        for name in names {
            let numel = store.get(&name).numel();
            for i in (0..numel).step_by(3) {
                let mut plus = store.clone();
                plus.get_mut(&name).data[i] += h;
                let mut minus = store.clone();
                minus.get_mut(&name).data[i] -= h;
                let fd = (run(&plus).0 - run(&minus).0) / (2.0 * h);
                let an = grads.get(&name).map_or(0.0, |g| g.data[i]);
                assert!(
                    (fd - an).abs() < 1e-5 + 1e-4 * fd.abs(),
                    "{name}[{i}]: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn head_is_deterministic_and_zero_summary_matches_empty() {
        let config = AgnnConfig { layers: 1, width: 8 };
        let store = fresh_store(Kind::Tsp, &config, 4);
        let inst = generate_instance(Kind::Tsp, 6, 9, &GenParams::default()).unwrap();
        let graph = build_sparse_graph(&inst, 3).unwrap();
        let mut tape = Tape::new();
        let out = agnn_forward(&mut tape, &graph, &store, &config, BnMode::Running).unwrap();
        let s0 = empty_summary(&mut tape, &config);
        let a = heatmap_head(&mut tape, out.edge_emb, s0, &store, false).unwrap();
        let s1 = partial_summary(&mut tape, out.node_emb, &[], &config).unwrap();
        let b = heatmap_head(&mut tape, out.edge_emb, s1, &store, false).unwrap();
        assert_eq!(tape.value(a.scores).data, tape.value(b.scores).data);
    }

    #[test]
    fn node_relabeling_permutes_embeddings_and_score_order() {
        let config = AgnnConfig { layers: 2, width: 8 };
        let store = fresh_store(Kind::Tsp, &config, 5);
        let inst = generate_instance(Kind::Tsp, 7, 13, &GenParams::default()).unwrap();
        let graph = build_sparse_graph(&inst, 3).unwrap();

        // Relabel nodes by a fixed permutation.
        let perm: Vec<usize> = vec![3, 0, 6, 2, 5, 1, 4];
        let mut coords_p = vec![[0.0; 2]; 7];
        for (i, &pi) in perm.iter().enumerate() {
            coords_p[pi] = inst.coords[i];
        }
        let inst_p = Instance::tsp(coords_p).unwrap();
        let graph_p = build_sparse_graph(&inst_p, 3).unwrap();

        let mut tape = Tape::new();
        let out = agnn_forward(&mut tape, &graph, &store, &config, BnMode::Batch).unwrap();
        let mut tape_p = Tape::new();
        let out_p = agnn_forward(&mut tape_p, &graph_p, &store, &config, BnMode::Batch).unwrap();

        let h = tape.value(out.node_emb);
        let hp = tape_p.value(out_p.node_emb);
        for i in 0..7 {
            for c in 0..8 {
                assert!(
                    (h.get(i, c) - hp.get(perm[i], c)).abs() < 1e-9,
                    "node {i} col {c}"
                );
            }
        }

        // Edge scores agree when matched by relabeled endpoints.
        let s0 = empty_summary(&mut tape, &config);
        let hm = heatmap_head(&mut tape, out.edge_emb, s0, &store, false).unwrap();
        let s0p = empty_summary(&mut tape_p, &config);
        let hm_p = heatmap_head(&mut tape_p, out_p.edge_emb, s0p, &store, false).unwrap();
        let scores = tape.value(hm.scores);
        let scores_p = tape_p.value(hm_p.scores);
        use std::collections::HashMap;
        let mut by_pair: HashMap<(usize, usize), f64> = HashMap::new();
        for (idx, &(u, v)) in graph_p.edges.iter().enumerate() {
            by_pair.insert((u, v), scores_p.data[idx]);
        }
        for (idx, &(u, v)) in graph.edges.iter().enumerate() {
            let mapped = (perm[u], perm[v]);
            let sp = by_pair[&mapped];
            assert!((scores.data[idx] - sp).abs() < 1e-9, "edge {u}->{v}");
        }
    }
}
