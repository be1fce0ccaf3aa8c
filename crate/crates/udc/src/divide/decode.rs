//! Heatmap-guided solution decoding.
//!
//! Each step applies the feasibility mask to a dense logits row. For edge
//! heatmaps the row is the current node's sparse out-edge scores; positions
//! without a sparse edge fall back to a fixed penalty score so the decoder
//! can always complete a feasible solution even when the KNN graph
//! disconnects it. MIS decodes from per-node scores instead.

use super::{heatmap_head, partial_summary, AgnnConfig, Heatmap};
use crate::error::Result;
use crate::graph::SparseGraph;
use crate::nnet::{ParamStore, Tape, Tensor, ValueId};
use crate::problems::{feasible_actions, Instance, Kind, PartialState, Solution};
use crate::rng;
use rand::Rng;

/// Score assigned to node pairs absent from the sparse graph.
pub const MISSING_EDGE_SCORE: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

impl DecodeMode {
    pub fn parse(s: &str) -> Result<DecodeMode> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "sample" => Ok(DecodeMode::Sample),
            other => Err(crate::error::UdcError::InvalidParams(format!(
                "unknown decode mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug)]
pub struct DecodedSolution {
    pub solution: Solution,
    /// Recorded log-probability of the whole rollout.
    pub log_prob: f64,
    /// Same quantity as a differentiable scalar on the tape.
    pub log_prob_id: ValueId,
    /// Every action taken, including the depot start and, for OP/PCTSP, the
    /// terminating return to the depot.
    pub choices: Vec<usize>,
    /// Whether the start node was drawn uniformly (contributing ln(1/pool)).
    pub start_sampled: bool,
    pub start_pool: usize,
}

#[derive(Debug, Default, Clone)]
pub struct DecodeStats {
    /// Head re-invocations beyond the initial heatmap.
    pub regens: usize,
    /// 1-based decode steps right before which the head re-ran.
    pub regen_steps: Vec<usize>,
}

enum HeadSource<'a> {
    Fixed,
    Revisit {
        node_emb: ValueId,
        store: &'a ParamStore,
        config: &'a AgnnConfig,
        interval: usize,
        max_regens: usize,
    },
}

fn argmax_masked(row: &Tensor, mask: &[bool]) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for j in 0..mask.len() {
        if mask[j] && row.data[j] > best_v {
            best_v = row.data[j];
            best = j;
        }
    }
    best
}

fn sample_masked<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

fn greedy_start_for(inst: &Instance, rollout: usize) -> Result<Option<usize>> {
    if matches!(inst.kind, Kind::Tsp | Kind::Kp) {
        let state = PartialState::new(inst);
        let mask = feasible_actions(inst, &state)?;
        let pool: Vec<usize> = (0..inst.n).filter(|&i| mask[i]).collect();
        Ok(Some(pool[rollout % pool.len()]))
    } else {
        Ok(None)
    }
}

#[allow(clippy::too_many_arguments)]
fn decode_rollout<R: Rng + ?Sized>(
    tape: &mut Tape,
    inst: &Instance,
    graph: &SparseGraph,
    heatmap: &Heatmap,
    source: HeadSource<'_>,
    mode: DecodeMode,
    rng: &mut R,
    forced_start: Option<usize>,
    stats: &mut DecodeStats,
) -> Result<DecodedSolution> {
    let mut state = PartialState::new(inst);
    let mut choices = state.seq.clone();
    let mut terms: Vec<(ValueId, f64)> = Vec::new();
    let mut const_lp = 0.0;
    let mut start_sampled = false;
    let mut start_pool = 0;

    // Depot-free kinds decoded over edges pick a start node first.
    if matches!(inst.kind, Kind::Tsp | Kind::Kp) {
        let mask = feasible_actions(inst, &state)?;
        let pool: Vec<usize> = (0..inst.n).filter(|&i| mask[i]).collect();
        start_pool = pool.len();
        let start = match forced_start {
            Some(s) => s,
            None => {
                start_sampled = true;
                const_lp += (1.0 / pool.len() as f64).ln();
                pool[rng.random_range(0..pool.len())]
            }
        };
        state.apply(inst, start);
        choices.push(start);
    }

    let mut scores = heatmap.scores;
    // Dense per-node row for MIS-style decoding, refreshed on regeneration.
    let mut node_row = heatmap.per_node.then(|| tape.transpose(scores));
    let mut regens = 0usize;
    let mut last_regen_at = usize::MAX;

    loop {
        if state.is_complete(inst) {
            break;
        }
        let mask = feasible_actions(inst, &state)?;
        if !mask.iter().any(|&m| m) {
            break;
        }

        if let HeadSource::Revisit {
            node_emb,
            store,
            config,
            interval,
            max_regens,
        } = &source
        {
            let committed = state.seq.len();
            if committed > 0
                && committed % interval == 0
                && regens < *max_regens
                && last_regen_at != committed
            {
                let summary = partial_summary(tape, *node_emb, &state.seq, config)?;
                let hm =
                    heatmap_head(tape, heatmap.source_emb, summary, store, heatmap.per_node)?;
                scores = hm.scores;
                if heatmap.per_node {
                    node_row = Some(tape.transpose(scores));
                }
                regens += 1;
                last_regen_at = committed;
                stats.regens += 1;
                stats.regen_steps.push(committed + 1);
            }
        }

        let row = if let Some(r) = node_row {
            r
        } else {
            let cur = state.current().expect("route decode has a current node");
            let mut row_map = vec![None; inst.n];
            for &(dst, eidx) in &graph.out_edges[cur] {
                row_map[dst] = Some(eidx);
            }
            tape.row_from_sparse(scores, &row_map, MISSING_EDGE_SCORE)?
        };

        let pick = match mode {
            DecodeMode::Greedy => argmax_masked(tape.value(row), &mask),
            DecodeMode::Sample => {
                let probs = tape.masked_softmax_probs(row, &mask)?;
                sample_masked(&probs, rng)
            }
        };
        let logp = tape.masked_log_softmax_pick(row, &mask, pick)?;
        terms.push((logp, 1.0));
        state.apply(inst, pick);
        choices.push(pick);
    }

    let mut total = tape.weighted_sum(&terms)?;
    if const_lp != 0.0 {
        total = tape.add_const(total, const_lp);
    }
    let solution = state.into_solution(inst)?;
    Ok(DecodedSolution {
        solution,
        log_prob: tape.value(total).item(),
        log_prob_id: total,
        choices,
        start_sampled,
        start_pool,
    })
}

/// Decode `alpha` solutions from a fixed heatmap.
///
/// In greedy mode, depot-free kinds roll out from distinct start nodes
/// (multi-start); in sample mode the start is drawn uniformly and its
/// `ln(1/pool)` enters the recorded log-probability. `forced_starts`
/// overrides both.
#[allow(clippy::too_many_arguments)]
pub fn decode_initial(
    tape: &mut Tape,
    heatmap: &Heatmap,
    graph: &SparseGraph,
    inst: &Instance,
    mode: DecodeMode,
    alpha: usize,
    seed: u64,
    forced_starts: Option<&[usize]>,
) -> Result<Vec<DecodedSolution>> {
    let mut out = Vec::with_capacity(alpha);
    let mut stats = DecodeStats::default();
    for a in 0..alpha {
        let mut rng = rng::stream(seed, &[0xd1, a as u64]);
        let forced = match forced_starts {
            Some(f) => Some(f[a % f.len()]),
            None if mode == DecodeMode::Greedy => greedy_start_for(inst, a)?,
            None => None,
        };
        out.push(decode_rollout(
            tape,
            inst,
            graph,
            heatmap,
            HeadSource::Fixed,
            mode,
            &mut rng,
            forced,
            &mut stats,
        )?);
    }
    Ok(out)
}

/// Decode with T-revisit: regenerate the heatmap from the committed partial
/// solution every `floor(n/T)` decode steps, up to `T - 1` times. `t = 1`
/// reduces exactly to [`decode_initial`] on the base heatmap.
#[allow(clippy::too_many_arguments)]
pub fn decode_t_revisit(
    tape: &mut Tape,
    graph: &SparseGraph,
    inst: &Instance,
    node_emb: ValueId,
    base_heatmap: &Heatmap,
    store: &ParamStore,
    config: &AgnnConfig,
    t: usize,
    alpha: usize,
    mode: DecodeMode,
    seed: u64,
) -> Result<(Vec<DecodedSolution>, DecodeStats)> {
    let t = t.clamp(1, inst.n);
    let interval = (inst.n / t).max(1);
    let mut out = Vec::with_capacity(alpha);
    let mut stats = DecodeStats::default();
    for a in 0..alpha {
        let mut rng = rng::stream(seed, &[0xd1, a as u64]);
        let forced = if mode == DecodeMode::Greedy {
            greedy_start_for(inst, a)?
        } else {
            None
        };
        out.push(decode_rollout(
            tape,
            inst,
            graph,
            base_heatmap,
            HeadSource::Revisit {
                node_emb,
                store,
                config,
                interval,
                max_regens: t - 1,
            },
            mode,
            &mut rng,
            forced,
            &mut stats,
        )?);
    }
    Ok((out, stats))
}

/// Independent recomputation of a fixed-heatmap rollout's log-probability
/// from its recorded choices, in plain arithmetic off the tape.
pub fn replay_log_prob(
    inst: &Instance,
    graph: &SparseGraph,
    scores: &Tensor,
    per_node: bool,
    decoded: &DecodedSolution,
) -> Result<f64> {
    let mut state = PartialState::new(inst);
    let mut logp = 0.0;
    let mut iter = decoded.choices.iter().copied();
    if inst.kind.has_depot() {
        let first = iter.next();
        debug_assert_eq!(first, Some(0));
    }
    if matches!(inst.kind, Kind::Tsp | Kind::Kp) {
        if let Some(start) = iter.next() {
            if decoded.start_sampled {
                logp += (1.0 / decoded.start_pool as f64).ln();
            }
            state.apply(inst, start);
        }
    }
    for pick in iter {
        let mask = feasible_actions(inst, &state)?;
        let row: Vec<f64> = if per_node {
            scores.data.clone()
        } else {
            let cur = state.current().unwrap();
            let mut row = vec![MISSING_EDGE_SCORE; inst.n];
            for &(dst, eidx) in &graph.out_edges[cur] {
                row[dst] = scores.data[eidx];
            }
            row
        };
        let maxv = row
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| (x - maxv).exp())
            .sum();
        logp += (row[pick] - maxv) - z.ln();
        state.apply(inst, pick);
    }
    Ok(logp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_sparse_graph;
    use crate::nnet::BnMode;
    use crate::problems::{generate_instance, GenParams};

    fn constant_heatmap(tape: &mut Tape, graph: &SparseGraph, fill: f64) -> Heatmap {
        let e = graph.edges.len();
        let scores = tape.constant(Tensor::filled(e, 1, fill));
        let emb = tape.constant(Tensor::zeros(e, 1));
        Heatmap {
            scores,
            per_node: false,
            source_emb: emb,
        }
    }

    #[test]
    fn dominant_logit_wins_greedy_decode() {
        let inst = Instance::tsp(vec![[0.0, 0.0], [0.4, 0.1], [0.8, 0.9], [0.1, 0.7]]).unwrap();
        let graph = build_sparse_graph(&inst, 3).unwrap();
        let mut tape = Tape::new();
        let mut hm = constant_heatmap(&mut tape, &graph, 0.0);
        // Boost edge 0 -> 2 to +20.
        let eidx = graph.out_edges[0].iter().find(|&&(d, _)| d == 2).unwrap().1;
        let mut data = vec![0.0; graph.edges.len()];
        data[eidx] = 20.0;
        hm.scores = tape.constant(Tensor::from_vec(graph.edges.len(), 1, data));
        let sols = decode_initial(
            &mut tape,
            &hm,
            &graph,
            &inst,
            DecodeMode::Greedy,
            1,
            0,
            Some(&[0]),
        )
        .unwrap();
        assert_eq!(sols[0].choices[0], 0);
        assert_eq!(sols[0].choices[1], 2);
    }

    #[test]
    fn uniform_heatmap_tsp3_logprob_is_ln_half() {
        let inst = Instance::tsp(vec![[0.0, 0.0], [0.5, 0.1], [0.9, 0.8]]).unwrap();
        let graph = build_sparse_graph(&inst, 2).unwrap();
        let mut tape = Tape::new();
        let hm = constant_heatmap(&mut tape, &graph, 0.0);
        let sols = decode_initial(
            &mut tape,
            &hm,
            &graph,
            &inst,
            DecodeMode::Sample,
            4,
            9,
            Some(&[0]),
        )
        .unwrap();
        for s in &sols {
            assert!((s.log_prob - 0.5f64.ln()).abs() < 1e-12, "{}", s.log_prob);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let inst = generate_instance(Kind::Cvrp, 15, 3, &GenParams::default()).unwrap();
        let graph = build_sparse_graph(&inst, 5).unwrap();
        let decode = |seed: u64| {
            let mut tape = Tape::new();
            let hm = constant_heatmap(&mut tape, &graph, 0.3);
            let sols = decode_initial(
                &mut tape,
                &hm,
                &graph,
                &inst,
                DecodeMode::Sample,
                3,
                seed,
                None,
            )
            .unwrap();
            sols.iter().map(|s| s.choices.clone()).collect::<Vec<_>>()
        };
        assert_eq!(decode(5), decode(5));
        assert_ne!(decode(5), decode(6));
    }

    #[test]
    fn replay_matches_recorded_log_prob() {
        let mut rng = crate::rng::stream(77, &[0]);
        use rand::Rng as _;
        for kind in Kind::ALL {
            let inst = generate_instance(kind, 12, 5, &GenParams::default()).unwrap();
            let graph = build_sparse_graph(&inst, 4).unwrap();
            let mut tape = Tape::new();
            let rows = if kind == Kind::Mis { inst.n } else { graph.edges.len() };
            let data: Vec<f64> = (0..rows).map(|_| rng.random::<f64>() - 0.5).collect();
            let scores = tape.constant(Tensor::from_vec(rows, 1, data));
            let emb = tape.constant(Tensor::zeros(rows, 1));
            let hm = Heatmap {
                scores,
                per_node: kind == Kind::Mis,
                source_emb: emb,
            };
            let sols =
                decode_initial(&mut tape, &hm, &graph, &inst, DecodeMode::Sample, 3, 11, None)
                    .unwrap();
            for s in &sols {
                let replayed =
                    replay_log_prob(&inst, &graph, tape.value(hm.scores), hm.per_node, s).unwrap();
                assert!(
                    (replayed - s.log_prob).abs() < 1e-6,
                    "{kind}: {replayed} vs {}",
                    s.log_prob
                );
            }
        }
    }

    #[test]
    fn t_revisit_schedule_and_reduction() {
        let config = AgnnConfig { layers: 1, width: 8 };
        let mut store = ParamStore::new(1e-4);
        let mut prng = crate::rng::stream(13, &[7]);
        super::super::init_divide_params(&mut store, Kind::Tsp, &config, &mut prng);
        let inst = generate_instance(Kind::Tsp, 10, 21, &GenParams::default()).unwrap();
        let graph = build_sparse_graph(&inst, 4).unwrap();

        let run = |t: usize| {
            let mut tape = Tape::new();
            let out =
                super::super::agnn_forward(&mut tape, &graph, &store, &config, BnMode::Running)
                    .unwrap();
            let s0 = super::super::empty_summary(&mut tape, &config);
            let hm = heatmap_head(&mut tape, out.edge_emb, s0, &store, false).unwrap();
            let (sols, stats) = decode_t_revisit(
                &mut tape,
                &graph,
                &inst,
                out.node_emb,
                &hm,
                &store,
                &config,
                t,
                2,
                DecodeMode::Sample,
                99,
            )
            .unwrap();
            (
                sols.iter().map(|s| s.choices.clone()).collect::<Vec<_>>(),
                stats,
            )
        };

        // T=1 never regenerates and matches decode_initial with the same seed.
        let (sols_t1, stats_t1) = run(1);
        assert_eq!(stats_t1.regens, 0);
        let mut tape = Tape::new();
        let out =
            super::super::agnn_forward(&mut tape, &graph, &store, &config, BnMode::Running)
                .unwrap();
        let s0 = super::super::empty_summary(&mut tape, &config);
        let hm = heatmap_head(&mut tape, out.edge_emb, s0, &store, false).unwrap();
        let sols_init =
            decode_initial(&mut tape, &hm, &graph, &inst, DecodeMode::Sample, 2, 99, None).unwrap();
        assert_eq!(
            sols_t1,
            sols_init.iter().map(|s| s.choices.clone()).collect::<Vec<_>>()
        );

        // T=2 over 10 nodes regenerates exactly once per rollout, before step 6.
        let (_, stats_t2) = run(2);
        assert_eq!(stats_t2.regens, 2); // two rollouts, one regen each
        assert!(stats_t2.regen_steps.iter().all(|&s| s == 6));
    }

    #[test]
    fn step_probabilities_sum_to_one_under_mask() {
        let inst = generate_instance(Kind::Op, 14, 8, &GenParams::default()).unwrap();
        let graph = build_sparse_graph(&inst, 5).unwrap();
        let mut tape = Tape::new();
        let mut rng = crate::rng::stream(15, &[2]);
        use rand::Rng as _;
        let data: Vec<f64> = (0..graph.edges.len()).map(|_| rng.random::<f64>()).collect();
        let scores = tape.constant(Tensor::from_vec(graph.edges.len(), 1, data));
        let mut state = PartialState::new(&inst);
        for _ in 0..6 {
            if state.is_complete(&inst) {
                break;
            }
            let mask = feasible_actions(&inst, &state).unwrap();
            let cur = state.current().unwrap();
            let mut row_map = vec![None; inst.n];
            for &(dst, eidx) in &graph.out_edges[cur] {
                row_map[dst] = Some(eidx);
            }
            let row = tape
                .row_from_sparse(scores, &row_map, MISSING_EDGE_SCORE)
                .unwrap();
            let probs = tape.masked_softmax_probs(row, &mask).unwrap();
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let pick = (0..inst.n).find(|&i| mask[i]).unwrap();
            state.apply(&inst, pick);
        }
    }
}
