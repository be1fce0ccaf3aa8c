//! Step-by-step solution construction: partial states and feasibility masks.
//!
//! The decoders build solutions one action at a time. An action is a node
//! index; for depot kinds, selecting the depot ends the current route (CVRP)
//! or terminates the tour (OP, PCTSP). The mask marks the actions whose
//! extension can still complete to a feasible solution under the per-step
//! rules: visited exclusion, CVRP capacity gating, OP return-length gating,
//! MIS neighbor exclusion, KP weight gating.

use super::{Instance, Kind, Solution};
use crate::error::{Result, UdcError};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct PartialState {
    /// Raw action sequence, including depot revisits for CVRP.
    pub seq: Vec<usize>,
    pub visited: Vec<bool>,
    /// Current-route load (CVRP) or total weight (KP).
    pub load: f64,
    /// Path length from the depot so far (OP, PCTSP).
    pub length: f64,
    /// Collected prize (PCTSP).
    pub prize: f64,
    /// Nodes excluded by selections or their neighbors (MIS).
    pub blocked: Vec<bool>,
    /// Set when the tour returned to the depot (OP, PCTSP).
    pub terminated: bool,
}

impl PartialState {
    /// Fresh state. Depot kinds start with the depot already committed.
    pub fn new(inst: &Instance) -> PartialState {
        let mut st = PartialState {
            seq: Vec::new(),
            visited: vec![false; inst.n],
            load: 0.0,
            length: 0.0,
            prize: 0.0,
            blocked: vec![false; if inst.kind == Kind::Mis { inst.n } else { 0 }],
            terminated: false,
        };
        if inst.kind.has_depot() {
            st.seq.push(0);
            st.visited[0] = true;
        }
        st
    }

    pub fn current(&self) -> Option<usize> {
        self.seq.last().copied()
    }

    /// Commit one action. The action must be unmasked per [`feasible_actions`].
    pub fn apply(&mut self, inst: &Instance, action: usize) {
        match inst.kind {
            Kind::Tsp => {
                self.visited[action] = true;
                self.seq.push(action);
            }
            Kind::Cvrp => {
                if action == 0 {
                    self.load = 0.0;
                } else {
                    self.load += inst.demands[action];
                    self.visited[action] = true;
                }
                self.seq.push(action);
            }
            Kind::Op | Kind::Pctsp => {
                let cur = self.current().expect("depot start");
                if action == 0 {
                    self.length += inst.dist(cur, 0);
                    self.terminated = true;
                } else {
                    self.length += inst.dist(cur, action);
                    self.prize += inst.prizes[action];
                    self.visited[action] = true;
                    self.seq.push(action);
                }
            }
            Kind::Kp => {
                self.load += inst.weights[action];
                self.visited[action] = true;
                self.seq.push(action);
            }
            Kind::Mis => {
                self.visited[action] = true;
                self.blocked[action] = true;
                for &nb in &inst.adjacency[action] {
                    self.blocked[nb] = true;
                }
                self.seq.push(action);
            }
        }
    }

    /// True once no further action may or must be taken.
    pub fn is_complete(&self, inst: &Instance) -> bool {
        match inst.kind {
            Kind::Tsp => self.seq.len() == inst.n,
            Kind::Cvrp => (1..inst.n).all(|c| self.visited[c]),
            Kind::Op | Kind::Pctsp => self.terminated,
            Kind::Kp => {
                let cap = inst.capacity - self.load;
                !(0..inst.n).any(|i| !self.visited[i] && inst.weights[i] <= cap)
            }
            Kind::Mis => self.blocked.iter().all(|&b| b),
        }
    }

    /// Convert a completed state into a solution with a cached objective.
    pub fn into_solution(self, inst: &Instance) -> Result<Solution> {
        let sol = match inst.kind {
            Kind::Tsp | Kind::Op | Kind::Pctsp => Solution::route(self.seq, vec![]),
            Kind::Cvrp => {
                let mut order = Vec::new();
                let mut flags = Vec::new();
                for (i, &a) in self.seq.iter().enumerate() {
                    if a == 0 {
                        continue;
                    }
                    order.push(a);
                    let next_is_depot = self.seq.get(i + 1).map_or(true, |&x| x == 0);
                    flags.push(next_is_depot);
                }
                if let Some(last) = flags.last_mut() {
                    *last = true;
                }
                Solution::route(order, flags)
            }
            Kind::Kp | Kind::Mis => Solution::subset(self.seq),
        };
        sol.finalize(inst)
    }
}

/// Mask over the `n` actions that can extend `state` toward a feasible
/// solution. An empty mask is an error only where the problem still requires
/// continuation; for subset kinds and terminable tours it signals completion.
pub fn feasible_actions(inst: &Instance, state: &PartialState) -> Result<Vec<bool>> {
    let mut mask = vec![false; inst.n];
    match inst.kind {
        Kind::Tsp => {
            for i in 0..inst.n {
                mask[i] = !state.visited[i];
            }
            if state.seq.len() < inst.n && mask.iter().all(|&m| !m) {
                return Err(UdcError::NoFeasibleAction);
            }
        }
        Kind::Cvrp => {
            if state.is_complete(inst) {
                return Ok(mask);
            }
            let remaining = inst.capacity - state.load;
            for c in 1..inst.n {
                mask[c] = !state.visited[c] && inst.demands[c] <= remaining;
            }
            // The depot is open unless we are already there.
            mask[0] = state.current() != Some(0);
            if mask.iter().all(|&m| !m) {
                return Err(UdcError::NoFeasibleAction);
            }
        }
        Kind::Op => {
            if state.terminated {
                return Ok(mask);
            }
            let cur = state.current().expect("depot start");
            for c in 1..inst.n {
                if state.visited[c] {
                    continue;
                }
                // Reserve the return edge to the depot.
                let len = state.length + inst.dist(cur, c) + inst.dist(c, 0);
                mask[c] = len <= inst.budget;
            }
            // Returning to the depot always stays within budget thanks to the
            // reservation above.
            mask[0] = state.length + inst.dist(cur, 0) <= inst.budget;
            if mask.iter().all(|&m| !m) {
                return Err(UdcError::NoFeasibleAction);
            }
        }
        Kind::Pctsp => {
            if state.terminated {
                return Ok(mask);
            }
            for c in 1..inst.n {
                mask[c] = !state.visited[c];
            }
            // Stopping requires the prize lower bound.
            mask[0] = state.prize >= 1.0;
            if mask.iter().all(|&m| !m) {
                return Err(UdcError::NoFeasibleAction);
            }
        }
        Kind::Kp => {
            let cap = inst.capacity - state.load;
            for i in 0..inst.n {
                mask[i] = !state.visited[i] && inst.weights[i] <= cap;
            }
        }
        Kind::Mis => {
            for i in 0..inst.n {
                mask[i] = !state.blocked[i];
            }
        }
    }
    Ok(mask)
}

/// Uniform-random feasible construction; the reference generator for
/// feasibility properties and an initializer baseline.
pub fn random_rollout<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> Result<Solution> {
    let mut state = PartialState::new(inst);
    if !inst.kind.has_depot() && inst.kind.is_route() {
        state.apply(inst, rng.random_range(0..inst.n));
    }
    loop {
        if state.is_complete(inst) {
            break;
        }
        let mask = feasible_actions(inst, &state)?;
        let open: Vec<usize> = (0..inst.n).filter(|&i| mask[i]).collect();
        if open.is_empty() {
            break;
        }
        let pick = open[rng.random_range(0..open.len())];
        state.apply(inst, pick);
    }
    state.into_solution(inst)
}
