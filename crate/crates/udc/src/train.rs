//! Joint REINFORCE training of the dividing and conquering policies.
//!
//! One training step samples `alpha` initial solutions, runs a Conquer pass
//! at offset `n/2` and a Reunion pass at offset `n` (windows rolled by half
//! a window, so boundary errors of the first pass become interior), and
//! scores the dividing policy by the final merged objective. Both losses use
//! shared-baseline advantages: the mean over the `alpha` initial rollouts
//! for the dividing policy, the mean over each sub-problem's `beta` rollouts
//! for the conquering policy. Advantages enter the surrogate as constants,
//! so its gradient is the score-function estimator; no gradient flows from
//! conquering rollouts into the dividing policy.

use crate::conquer::{
    accept_and_merge, conquer_neural, extract_subproblems, init_conquer_params,
    prepare_constraints, ConquerConfig, Leftover, RawWindow,
};
use crate::divide::{
    agnn_forward, decode_t_revisit, empty_summary, heatmap_head, init_divide_params, AgnnConfig,
    DecodeMode,
};
use crate::error::{Result, UdcError};
use crate::graph::{build_sparse_graph, FEATURE_LAYOUT_VERSION};
use crate::nnet::{checkpoint, grad_norm, BnBatchStats, BnMode, ParamStore, Tape, Tensor, ValueId};
use crate::problems::{generate_instance, GenParams, Instance, Kind, Sense, Solution};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: Kind,
    /// Varying-size sampling range for instance sizes.
    pub n_min: usize,
    pub n_max: usize,
    /// Sub-problem window length n (even: the Reunion roll is n/2).
    pub sub_len: usize,
    pub alpha: usize,
    pub beta: usize,
    pub epochs: usize,
    pub epoch_size: usize,
    pub lr_dividing: f64,
    pub lr_conquering: f64,
    pub seed: u64,
    pub two_sided: bool,
    pub dcr_enabled: bool,
    pub t_revisit: usize,
    pub k_neighbors: usize,
    pub agnn: AgnnConfig,
    pub conquer: ConquerConfig,
    #[serde(default)]
    pub gen: GenParamsConfig,
    /// Checkpoint/log destination; in-memory only when absent.
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

/// Serializable mirror of [`GenParams`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenParamsConfig {
    pub capacity: Option<f64>,
    pub budget: Option<f64>,
    pub penalty_scale: Option<f64>,
    pub edge_prob: Option<f64>,
}

impl GenParamsConfig {
    pub fn to_params(&self) -> GenParams {
        GenParams {
            capacity: self.capacity,
            budget: self.budget,
            penalty_scale: self.penalty_scale,
            edge_prob: self.edge_prob,
        }
    }
}

impl TrainConfig {
    /// Desk-scale defaults; the two-sided baseline and the DCR switch follow
    /// the per-kind training table (DCR off for KP, two-sided only for the
    /// symmetric sub-problems).
    pub fn desk_default(kind: Kind, seed: u64) -> TrainConfig {
        TrainConfig {
            kind,
            n_min: 20,
            n_max: 60,
            sub_len: 10,
            alpha: 8,
            beta: 8,
            epochs: 10,
            epoch_size: 100,
            lr_dividing: 1e-4,
            lr_conquering: 1e-4,
            seed,
            two_sided: matches!(kind, Kind::Tsp | Kind::Op | Kind::Pctsp),
            dcr_enabled: kind != Kind::Kp,
            t_revisit: 1,
            k_neighbors: 8,
            agnn: AgnnConfig::default(),
            conquer: ConquerConfig::default(),
            gen: GenParamsConfig::default(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 2 || self.beta < 2 {
            return Err(UdcError::InvalidParams(
                "alpha and beta must be >= 2 (shared baselines)".into(),
            ));
        }
        if self.sub_len % 2 != 0 || self.sub_len < 2 {
            return Err(UdcError::InvalidParams(
                "sub_len must be even and >= 2".into(),
            ));
        }
        if self.two_sided && self.beta % 2 != 0 {
            return Err(UdcError::InvalidParams(
                "two-sided baseline needs an even beta".into(),
            ));
        }
        if self.n_min < 2 || self.n_min > self.n_max {
            return Err(UdcError::InvalidParams("bad size range".into()));
        }
        Ok(())
    }

    /// The checkpoint header document; solving rejects mismatched kinds or
    /// feature layouts by comparing it.
    pub fn meta_json(&self) -> String {
        serde_json::to_string(&CheckpointMeta {
            kind: self.kind,
            layout_version: FEATURE_LAYOUT_VERSION,
            agnn: self.agnn,
            conquer: self.conquer,
            k_neighbors: self.k_neighbors,
            t_revisit: self.t_revisit,
        })
        .expect("meta serialization cannot fail")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: Kind,
    pub layout_version: u32,
    pub agnn: AgnnConfig,
    pub conquer: ConquerConfig,
    pub k_neighbors: usize,
    pub t_revisit: usize,
}

impl CheckpointMeta {
    pub fn parse(json: &str) -> Result<CheckpointMeta> {
        serde_json::from_str(json)
            .map_err(|e| UdcError::CheckpointFormat(format!("bad meta: {e}")))
    }
}

/// Initialize a fresh parameter store for one problem kind.
pub fn init_params(config: &TrainConfig) -> ParamStore {
    let mut store = ParamStore::new(config.lr_dividing);
    let mut r = rng::stream(config.seed, &[0x1a17]);
    init_divide_params(&mut store, config.kind, &config.agnn, &mut r);
    init_conquer_params(&mut store, config.kind, &config.conquer, &mut r);
    store
}

/// Uniform "smaller is better" reward: maximization kinds negate on entry.
pub fn cost_of(kind: Kind, native: f64) -> f64 {
    match kind.sense() {
        Sense::Minimize => native,
        Sense::Maximize => -native,
    }
}

/// Mean-subtracted advantages for the dividing loss.
pub fn dividing_advantages(rewards_cost: &[f64]) -> Result<Vec<f64>> {
    if rewards_cost.len() < 2 {
        return Err(UdcError::InvalidParams(
            "dividing baseline needs alpha >= 2".into(),
        ));
    }
    let mean = rewards_cost.iter().sum::<f64>() / rewards_cost.len() as f64;
    Ok(rewards_cost.iter().map(|r| r - mean).collect())
}

/// Surrogate for the dividing policy: `(1/alpha) * sum_i adv_i * log pi_d_i`.
pub fn loss_dividing(
    tape: &mut Tape,
    log_probs: &[ValueId],
    rewards_cost: &[f64],
) -> Result<ValueId> {
    let adv = dividing_advantages(rewards_cost)?;
    let alpha = log_probs.len() as f64;
    let terms: Vec<(ValueId, f64)> = log_probs
        .iter()
        .zip(&adv)
        .map(|(&lp, &a)| (lp, a / alpha))
        .collect();
    tape.weighted_sum(&terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConquerStage {
    Conquer,
    Reunion,
}

/// Per-sub-problem rollout group fed to the conquering loss.
pub struct SubGroup {
    pub log_probs: Vec<ValueId>,
    pub rewards_cost: Vec<f64>,
}

/// Surrogate for the conquering policy at one stage:
/// `1/(alpha*beta*floor(N/n)) * sum_c sum_i adv_ci * log pi_c_ci`,
/// with the baseline over each sub-problem's own `beta` rollouts. Leftover
/// fragments produce no group and hence no loss term.
pub fn loss_conquering(
    tape: &mut Tape,
    _stage: ConquerStage,
    groups: &[SubGroup],
    alpha: usize,
    beta: usize,
    windows_per_instance: usize,
) -> Result<ValueId> {
    if beta < 2 {
        return Err(UdcError::InvalidParams(
            "conquering baseline needs beta >= 2".into(),
        ));
    }
    let prefactor = 1.0 / (alpha as f64 * beta as f64 * windows_per_instance.max(1) as f64);
    let mut terms = Vec::new();
    for g in groups {
        let b = g.rewards_cost.len();
        if b < 2 {
            continue;
        }
        let mean = g.rewards_cost.iter().sum::<f64>() / b as f64;
        for (lp, r) in g.log_probs.iter().zip(&g.rewards_cost) {
            terms.push((*lp, (r - mean) * prefactor));
        }
    }
    tape.weighted_sum(&terms)
}

/// Frozen record of one sub-problem rollout, sufficient to replay its
/// log-probability under perturbed parameters.
#[derive(Debug, Clone)]
pub struct SubRolloutTrace {
    pub choices: Vec<usize>,
    pub reversed: bool,
    pub reward_cost: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct RolloutStageTrace {
    /// Solution this stage started from.
    pub entry: Solution,
    pub windows: Vec<RawWindow>,
    pub leftover: Leftover,
    /// `[window][beta]` rollouts.
    pub sub_rollouts: Vec<Vec<SubRolloutTrace>>,
    pub merged: Solution,
}

#[derive(Debug, Clone)]
pub struct StageTrace {
    pub offset: usize,
    pub rollouts: Vec<RolloutStageTrace>,
}

/// Everything needed to re-assemble the step's losses from records.
#[derive(Debug, Clone)]
pub struct DcrTrace {
    pub x0_choices: Vec<Vec<usize>>,
    pub x0_start_sampled: Vec<bool>,
    pub x0_start_pool: Vec<usize>,
    pub div_rewards_cost: Vec<f64>,
    pub stages: Vec<StageTrace>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DcrMetrics {
    pub mean_f_x0: f64,
    pub mean_f_x1: f64,
    pub mean_f_x2: f64,
}

pub struct DcrStepOutput {
    pub grads: BTreeMap<String, Tensor>,
    pub metrics: DcrMetrics,
    pub surrogate: f64,
    pub bn_updates: Vec<BnBatchStats>,
    pub trace: DcrTrace,
}

/// One DCR training step on a single instance.
pub fn dcr_step(
    inst: &Instance,
    store: &ParamStore,
    config: &TrainConfig,
    step_seed: u64,
) -> Result<DcrStepOutput> {
    config.validate()?;
    let n = config.sub_len;
    let mut tape = Tape::new();
    let graph = build_sparse_graph(inst, config.k_neighbors)?;
    let agnn = agnn_forward(&mut tape, &graph, store, &config.agnn, BnMode::Batch)?;
    let bn_updates = agnn.bn_updates;
    let summary = empty_summary(&mut tape, &config.agnn);
    let per_node = inst.kind == Kind::Mis;
    let emb = if per_node { agnn.node_emb } else { agnn.edge_emb };
    let heatmap = heatmap_head(&mut tape, emb, summary, store, per_node)?;
    let (decoded, _stats) = decode_t_revisit(
        &mut tape,
        &graph,
        inst,
        agnn.node_emb,
        &heatmap,
        store,
        &config.agnn,
        config.t_revisit,
        config.alpha,
        DecodeMode::Sample,
        rng::derive_seed(step_seed, &[0xdec0]),
    )?;

    let mut solutions: Vec<Solution> = decoded.iter().map(|d| d.solution.clone()).collect();
    let metrics_x0 = solutions.iter().map(|s| s.objective).sum::<f64>() / solutions.len() as f64;

    let stage_offsets: Vec<usize> = if config.dcr_enabled {
        vec![n / 2, n]
    } else {
        vec![n / 2]
    };
    let windows_per = (inst.n / n).max(1);

    let mut stage_traces = Vec::new();
    let mut conquer_losses = Vec::new();
    let mut mean_stage_obj = Vec::new();
    for (si, &offset) in stage_offsets.iter().enumerate() {
        let mut groups: Vec<SubGroup> = Vec::new();
        let mut rollout_traces = Vec::new();
        for (ri, sol) in solutions.iter_mut().enumerate() {
            let tau = sol.len();
            if n > tau {
                // Too few nodes to cut a window; the stage skips this rollout.
                rollout_traces.push(RolloutStageTrace {
                    entry: sol.clone(),
                    windows: vec![],
                    leftover: Leftover::default(),
                    sub_rollouts: vec![],
                    merged: sol.clone(),
                });
                continue;
            }
            let p = offset % tau;
            let mut ex_rng = rng::stream(step_seed, &[0xe1, si as u64, ri as u64]);
            let (windows, leftover) = extract_subproblems(inst, sol, n, p, &mut ex_rng)?;
            let entry = sol.clone();
            let mut chosen = Vec::with_capacity(windows.len());
            let mut subs = Vec::with_capacity(windows.len());
            let mut sub_rollouts = Vec::with_capacity(windows.len());
            for k in 0..windows.len() {
                let sub = prepare_constraints(inst, sol, &windows, k, 0.0)?;
                let rollouts = conquer_neural(
                    &mut tape,
                    &sub,
                    store,
                    &config.conquer,
                    config.beta,
                    config.two_sided,
                    DecodeMode::Sample,
                    rng::derive_seed(step_seed, &[0xc1, si as u64, ri as u64, k as u64]),
                )?;
                let any_fallback = rollouts.iter().any(|r| r.fallback);
                if !any_fallback {
                    groups.push(SubGroup {
                        log_probs: rollouts
                            .iter()
                            .map(|r| r.log_prob_id.expect("policy rollout has log-prob"))
                            .collect(),
                        rewards_cost: rollouts
                            .iter()
                            .map(|r| cost_of(inst.kind, r.objective))
                            .collect(),
                    });
                }
                sub_rollouts.push(
                    rollouts
                        .iter()
                        .enumerate()
                        .map(|(j, r)| SubRolloutTrace {
                            choices: r.choices.clone(),
                            reversed: config.two_sided && j % 2 == 1 && !r.fallback,
                            reward_cost: cost_of(inst.kind, r.objective),
                            fallback: r.fallback,
                        })
                        .collect(),
                );
                let best = rollouts
                    .into_iter()
                    .min_by(|a, b| {
                        cost_of(inst.kind, a.objective)
                            .partial_cmp(&cost_of(inst.kind, b.objective))
                            .unwrap()
                    })
                    .expect("at least one rollout");
                chosen.push(best);
                subs.push(sub);
            }
            let outcome = accept_and_merge(inst, sol, &windows, &subs, &chosen, &leftover)?;
            rollout_traces.push(RolloutStageTrace {
                entry,
                windows,
                leftover,
                sub_rollouts,
                merged: outcome.solution.clone(),
            });
            *sol = outcome.solution;
        }
        let loss = loss_conquering(
            &mut tape,
            if si == 0 { ConquerStage::Conquer } else { ConquerStage::Reunion },
            &groups,
            config.alpha,
            config.beta,
            windows_per,
        )?;
        conquer_losses.push(loss);
        mean_stage_obj
            .push(solutions.iter().map(|s| s.objective).sum::<f64>() / solutions.len() as f64);
        stage_traces.push(StageTrace {
            offset,
            rollouts: rollout_traces,
        });
    }

    let final_rewards: Vec<f64> = solutions
        .iter()
        .map(|s| cost_of(inst.kind, s.objective))
        .collect();
    let div_lp: Vec<ValueId> = decoded.iter().map(|d| d.log_prob_id).collect();
    let div_loss = loss_dividing(&mut tape, &div_lp, &final_rewards)?;

    let mut total_terms = vec![(div_loss, 1.0)];
    for &l in &conquer_losses {
        total_terms.push((l, 1.0));
    }
    let total = tape.weighted_sum(&total_terms)?;
    let surrogate = tape.value(total).item();
    if !surrogate.is_finite() {
        return Err(UdcError::NonFiniteLoss(format!(
            "surrogate {surrogate} on {} n={}",
            inst.kind, inst.n
        )));
    }
    let grads = tape.backward(total)?;

    let metrics = DcrMetrics {
        mean_f_x0: metrics_x0,
        mean_f_x1: mean_stage_obj[0],
        mean_f_x2: *mean_stage_obj.last().unwrap(),
    };
    Ok(DcrStepOutput {
        grads,
        metrics,
        surrogate,
        bn_updates,
        trace: DcrTrace {
            x0_choices: decoded.iter().map(|d| d.choices.clone()).collect(),
            x0_start_sampled: decoded.iter().map(|d| d.start_sampled).collect(),
            x0_start_pool: decoded.iter().map(|d| d.start_pool).collect(),
            div_rewards_cost: final_rewards,
            stages: stage_traces,
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_f_x0: f64,
    pub mean_f_x1: f64,
    pub mean_f_x2: f64,
    pub grad_norm_d: f64,
    pub grad_norm_c: f64,
    pub wall_ms: u64,
}

pub struct TrainOutput {
    pub store: ParamStore,
    pub log: Vec<EpochLog>,
    pub checkpoint_path: Option<PathBuf>,
}

/// Full training loop: per instance, one DCR step and one Adam update; per
/// epoch, a log row and an atomically rewritten checkpoint.
pub fn train(config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let mut store = init_params(config);
    let mut log = Vec::new();
    let meta = config.meta_json();
    let ckpt_path = config.out_dir.as_ref().map(|d| d.join("checkpoint.ckpt"));
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    if let Some(path) = &ckpt_path {
        checkpoint::save(path, &store, &meta)?;
    }
    for epoch in 0..config.epochs {
        let t0 = std::time::Instant::now();
        let mut sums = DcrMetrics::default();
        let mut gd = 0.0;
        let mut gc = 0.0;
        for idx in 0..config.epoch_size {
            let inst_seed = rng::derive_seed(config.seed, &[0x9e, epoch as u64, idx as u64]);
            let mut size_rng = rng::stream(config.seed, &[0x51, epoch as u64, idx as u64]);
            let n = size_rng.random_range(config.n_min..=config.n_max);
            let inst = generate_instance(config.kind, n, inst_seed, &config.gen.to_params())?;
            let step_seed = rng::derive_seed(config.seed, &[0x5e, epoch as u64, idx as u64]);
            let out = dcr_step(&inst, &store, config, step_seed)?;
            gd += family_norm(&out.grads, "div.");
            gc += family_norm(&out.grads, "conq.");
            store.adam_step_with(&out.grads, |name| {
                if name.starts_with("div.") {
                    config.lr_dividing
                } else {
                    config.lr_conquering
                }
            })?;
            store.apply_bn_updates(&out.bn_updates);
            sums.mean_f_x0 += out.metrics.mean_f_x0;
            sums.mean_f_x1 += out.metrics.mean_f_x1;
            sums.mean_f_x2 += out.metrics.mean_f_x2;
        }
        let m = config.epoch_size as f64;
        log.push(EpochLog {
            epoch,
            mean_f_x0: sums.mean_f_x0 / m,
            mean_f_x1: sums.mean_f_x1 / m,
            mean_f_x2: sums.mean_f_x2 / m,
            grad_norm_d: gd / m,
            grad_norm_c: gc / m,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
        if let Some(path) = &ckpt_path {
            checkpoint::save(path, &store, &meta)?;
        }
        if let Some(dir) = &config.out_dir {
            write_log_csv(&dir.join("train_log.csv"), &log)?;
        }
    }
    Ok(TrainOutput {
        store,
        log,
        checkpoint_path: ckpt_path,
    })
}

fn family_norm(grads: &BTreeMap<String, Tensor>, prefix: &str) -> f64 {
    let filtered: BTreeMap<String, Tensor> = grads
        .iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    grad_norm(&filtered)
}

/// Training log as CSV: epoch, mean objectives, gradient norms, wall time.
pub fn write_log_csv(path: &std::path::Path, log: &[EpochLog]) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "epoch,mean_f_x0,mean_f_x1,mean_f_x2,grad_norm_d,grad_norm_c,wall_ms"
    )?;
    for r in log {
        writeln!(
            f,
            "{},{:.9},{:.9},{:.9},{:.6e},{:.6e},{}",
            r.epoch, r.mean_f_x0, r.mean_f_x1, r.mean_f_x2, r.grad_norm_d, r.grad_norm_c, r.wall_ms
        )?;
    }
    Ok(())
}
