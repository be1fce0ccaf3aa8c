//! The conquering stage: cut the current solution into fixed-length
//! sub-problems, dispatch constraints that make any feasible sub-solution
//! merge back into a feasible parent, solve the pieces, and keep strict
//! improvements.
//!
//! Sub-problems carry two geometries: `coords` is the model payload
//! (coordinate-transformed where the kind calls for it) while objectives and
//! feasibility are always evaluated in parent space, so acceptance deltas
//! equal the parent objective change exactly.

mod exact;
mod extract;
mod merge;
mod neural;
mod normalize;
mod substate;

pub use exact::conquer_exact;
pub use extract::{extract_subproblems, prepare_constraints, Leftover, RawWindow};
pub use merge::{accept_and_merge, MergeOutcome};
pub use neural::{
    conquer_neural, init_conquer_params, replay_sub_log_prob, replay_sub_log_prob_on_tape,
    ConquerConfig,
};
pub use normalize::{normalize_coords, Transform};
pub use substate::{random_feasible, sub_feasible, sub_objective, SubState};

use crate::nnet::ValueId;
use crate::problems::Kind;

/// Dispatched constraints of one sub-problem, in parent units unless noted.
#[derive(Debug, Clone)]
pub enum SubConstraints {
    Tsp,
    Cvrp {
        capacity: f64,
        /// Budget for the sub-solution's first route when it joins the
        /// upstream partial route (C when detached). Budgets of the window
        /// pieces of one crossing route sum to exactly C, so simultaneous
        /// merges stay feasible.
        first_budget: f64,
        /// Budget for the last route when it joins downstream (C when
        /// detached).
        last_budget: f64,
        /// Budget when the sub-solution forms a single unbroken route that
        /// joins both sides.
        single_budget: f64,
        /// The parent flag on the window's last position; frozen during
        /// conquering so the connection cost stays constant.
        frozen_last_flag: bool,
        /// (first, last) budgets normalized to sum to 1; model features.
        pair_features: (f64, f64),
        demands: Vec<f64>,
    },
    Op {
        /// Length budget for the sub-path (original segment length plus any
        /// assigned margin).
        budget: f64,
        prizes: Vec<f64>,
        /// Local index of a node that must be visited (the depot), when it
        /// lies strictly inside the window.
        required: Option<usize>,
    },
    Pctsp {
        /// Lower bound on collected normalized prize; the original window
        /// collects exactly this much.
        prize_bound: f64,
        prizes_norm: Vec<f64>,
        prizes_raw: Vec<f64>,
        penalties: Vec<f64>,
        required: Option<usize>,
    },
    Kp {
        capacity: f64,
        values: Vec<f64>,
        weights: Vec<f64>,
    },
    Mis {
        /// Induced adjacency over the window members (local indices).
        adjacency: Vec<Vec<usize>>,
        /// Members adjacent to nodes selected outside the window.
        forbidden: Vec<bool>,
    },
}

/// An extracted, constraint-dispatched, normalized sub-problem.
#[derive(Debug, Clone)]
pub struct SubProblem {
    pub kind: Kind,
    /// Parent node id per local candidate index. Route kinds list the window
    /// segment first (in window order), then injected candidates. For CVRP
    /// the parent depot is appended as the final candidate.
    pub cand_nodes: Vec<usize>,
    /// How many leading candidates form the original window segment.
    pub window_len: usize,
    /// Model-space coordinates (after the coordinate transform, when the
    /// kind normalizes). Empty for KP/MIS.
    pub coords: Vec<[f64; 2]>,
    /// Parent-space coordinates, same indexing. Empty for KP/MIS.
    pub parent_coords: Vec<[f64; 2]>,
    pub transform: Transform,
    /// Local index of the pinned first node (route kinds).
    pub start_pin: usize,
    /// Local index of the pinned last node (route kinds).
    pub end_pin: usize,
    pub constraints: SubConstraints,
    /// The original fragment as a sub-solution (acceptance baseline and
    /// dead-end fallback).
    pub original: SubSolution,
}

impl SubProblem {
    pub fn cand_count(&self) -> usize {
        self.cand_nodes.len()
    }

    /// Dispatched budget/capacity for margin accounting.
    pub fn dispatched_budget(&self) -> Option<f64> {
        match &self.constraints {
            SubConstraints::Op { budget, .. } => Some(*budget),
            SubConstraints::Kp { capacity, .. } => Some(*capacity),
            _ => None,
        }
    }
}

/// One candidate sub-solution over a sub-problem's local indices.
#[derive(Debug, Clone)]
pub struct SubSolution {
    /// Visit order (route kinds). CVRP lists customers only.
    pub order: Vec<usize>,
    /// CVRP flags aligned with `order`; the final flag is the frozen
    /// boundary flag.
    pub flags: Vec<bool>,
    /// Chosen items/nodes (KP, MIS).
    pub items: Vec<usize>,
    /// Sub-objective in the problem's native sense, parent units.
    pub objective: f64,
    /// Raw action sequence that produced this solution (for replay).
    pub choices: Vec<usize>,
    /// Set when the solver could not complete and returned the original.
    pub fallback: bool,
    pub log_prob: f64,
    pub log_prob_id: Option<ValueId>,
}

impl SubSolution {
    pub fn bare(order: Vec<usize>, flags: Vec<bool>, items: Vec<usize>) -> SubSolution {
        SubSolution {
            order,
            flags,
            items,
            objective: f64::NAN,
            choices: Vec::new(),
            fallback: false,
            log_prob: 0.0,
            log_prob_id: None,
        }
    }
}
