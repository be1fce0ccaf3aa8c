//! Acceptance and merging: replace a window's fragment only when the chosen
//! sub-solution strictly improves its sub-objective; re-attach the leftover
//! verbatim; verify the merged solution end to end.
//!
//! The cached objective is updated by the exact per-window deltas, so a
//! conquering stage can never worsen it, not even by a rounding ulp. The
//! full recomputation is still run as a cross-check against the 1e-9 cache
//! contract.

use super::extract::{Leftover, RawWindow};
use super::substate::sub_feasible;
use super::{SubProblem, SubSolution};
use crate::error::{Result, UdcError};
use crate::problems::{evaluate_objective, Instance, Kind, Sense, Solution};

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub solution: Solution,
    /// Per-window acceptance decisions.
    pub improved: Vec<bool>,
    /// Per-window objective improvements in cost sense (>= 0; 0 if kept).
    pub deltas: Vec<f64>,
}

fn cost_of(kind: Kind, native: f64) -> f64 {
    match kind.sense() {
        Sense::Minimize => native,
        Sense::Maximize => -native,
    }
}

/// Merge chosen sub-solutions (one per window) back into the parent.
pub fn accept_and_merge(
    inst: &Instance,
    parent: &Solution,
    windows: &[RawWindow],
    subs: &[SubProblem],
    chosen: &[SubSolution],
    leftover: &Leftover,
) -> Result<MergeOutcome> {
    assert_eq!(windows.len(), subs.len());
    assert_eq!(windows.len(), chosen.len());

    let mut improved = vec![false; subs.len()];
    let mut deltas = vec![0.0; subs.len()];
    for k in 0..subs.len() {
        if chosen[k].fallback {
            continue;
        }
        let old_cost = cost_of(inst.kind, subs[k].original.objective);
        let new_cost = cost_of(inst.kind, chosen[k].objective);
        if new_cost < old_cost {
            if let Some(violated) = sub_feasible(&subs[k], &chosen[k]) {
                return Err(UdcError::InvariantViolation(format!(
                    "accepted sub-solution violates {violated}"
                )));
            }
            improved[k] = true;
            deltas[k] = old_cost - new_cost;
        }
    }

    if !improved.iter().any(|&b| b) {
        return Ok(MergeOutcome {
            solution: parent.clone(),
            improved,
            deltas,
        });
    }

    let total_delta: f64 = deltas.iter().sum();
    let new_native = match inst.kind.sense() {
        Sense::Minimize => parent.objective - total_delta,
        Sense::Maximize => parent.objective + total_delta,
    };

    let mut solution = match inst.kind {
        Kind::Tsp | Kind::Op | Kind::Pctsp => {
            let mut rotated: Vec<usize> = Vec::with_capacity(parent.order.len());
            for k in 0..subs.len() {
                if improved[k] {
                    rotated.extend(chosen[k].order.iter().map(|&l| subs[k].cand_nodes[l]));
                } else {
                    rotated.extend(windows[k].nodes.iter().copied());
                }
            }
            rotated.extend(leftover.tail_positions.iter().map(|&q| parent.order[q]));
            if inst.kind == Kind::Tsp {
                // Undo the extraction rotation so untouched positions keep
                // their original indices.
                let tau = rotated.len();
                let p = windows[0].positions[0];
                let cut = tau - p;
                let mut order = Vec::with_capacity(tau);
                order.extend_from_slice(&rotated[cut..]);
                order.extend_from_slice(&rotated[..cut]);
                Solution::route(order, vec![])
            } else {
                // Rotate the depot back to the front.
                let at = rotated
                    .iter()
                    .position(|&v| v == 0)
                    .expect("depot survives merging");
                let mut order = Vec::with_capacity(rotated.len());
                order.extend_from_slice(&rotated[at..]);
                order.extend_from_slice(&rotated[..at]);
                Solution::route(order, vec![])
            }
        }
        Kind::Cvrp => {
            let mut order = Vec::with_capacity(parent.order.len());
            let mut flags = Vec::with_capacity(parent.order.len());
            for &q in &leftover.head_positions {
                order.push(parent.order[q]);
                flags.push(parent.flags[q]);
            }
            for k in 0..subs.len() {
                if improved[k] {
                    order.extend(chosen[k].order.iter().map(|&l| subs[k].cand_nodes[l]));
                    flags.extend(chosen[k].flags.iter().copied());
                } else {
                    for &q in &windows[k].positions {
                        order.push(parent.order[q]);
                        flags.push(parent.flags[q]);
                    }
                }
            }
            for &q in &leftover.tail_positions {
                order.push(parent.order[q]);
                flags.push(parent.flags[q]);
            }
            Solution::route(order, flags)
        }
        Kind::Kp => {
            let mut items = Vec::new();
            for k in 0..subs.len() {
                if improved[k] {
                    items.extend(chosen[k].items.iter().map(|&l| subs[k].cand_nodes[l]));
                } else {
                    items.extend(windows[k].nodes.iter().copied());
                }
            }
            items.extend(leftover.free_items.iter().copied());
            Solution::subset(items)
        }
        Kind::Mis => {
            let mut in_window = vec![false; inst.n];
            for w in windows {
                for &g in &w.nodes {
                    in_window[g] = true;
                }
            }
            let mut items: Vec<usize> = parent
                .items
                .iter()
                .copied()
                .filter(|&v| !in_window[v])
                .collect();
            for k in 0..subs.len() {
                let picked = if improved[k] {
                    &chosen[k].items
                } else {
                    &subs[k].original.items
                };
                items.extend(picked.iter().map(|&l| subs[k].cand_nodes[l]));
            }
            Solution::subset(items)
        }
    };

    // End-to-end verification: the merged solution must be feasible and its
    // recomputed objective must agree with the exact delta update.
    let recomputed = evaluate_objective(inst, &solution).map_err(|e| {
        UdcError::InvariantViolation(format!("merged solution rejected: {e}"))
    })?;
    if (recomputed - new_native).abs() > 1e-9 {
        return Err(UdcError::InvariantViolation(format!(
            "merged objective drifted: recomputed {recomputed} vs delta-updated {new_native}"
        )));
    }
    solution.objective = new_native;
    solution.feasible = true;

    Ok(MergeOutcome {
        solution,
        improved,
        deltas,
    })
}
