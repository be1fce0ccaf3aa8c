//! Step-by-step construction of sub-solutions. The same state/mask machinery
//! drives the neural policy, the uniform-random baseline, and replay, so all
//! of them agree on what is feasible.
//!
//! Action indices are local candidate indices; for CVRP the appended depot
//! candidate doubles as the "end this route" action. The pinned end node is
//! masked until it is the only remaining customer, which makes every
//! completed sequence a valid open path between the window's connection
//! points.

use super::{SubConstraints, SubProblem, SubSolution};
use crate::error::{Result, UdcError};
use crate::problems::dist;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct SubState {
    pub start: usize,
    pub end: usize,
    pub seq: Vec<usize>,
    visited: Vec<bool>,
    /// CVRP: current-route load including any upstream continuation;
    /// KP: total chosen weight.
    load: f64,
    /// OP: internal path length so far, parent units.
    len: f64,
    /// PCTSP: collected normalized prize.
    prize: f64,
    had_break: bool,
    blocked: Vec<bool>,
    done: bool,
}

impl SubState {
    /// Start a construction with the given pins (swapped for the reversed
    /// rollouts of the two-sided baseline).
    pub fn new(sub: &SubProblem, start: usize, end: usize) -> SubState {
        let m = sub.cand_count();
        let mut st = SubState {
            start,
            end,
            seq: Vec::new(),
            visited: vec![false; m],
            load: 0.0,
            len: 0.0,
            prize: 0.0,
            had_break: false,
            blocked: vec![false; if matches!(sub.constraints, SubConstraints::Mis { .. }) { m } else { 0 }],
            done: false,
        };
        match &sub.constraints {
            SubConstraints::Tsp | SubConstraints::Op { .. } | SubConstraints::Pctsp { .. } => {
                st.visited[start] = true;
                st.seq.push(start);
                if let SubConstraints::Pctsp { prizes_norm, .. } = &sub.constraints {
                    st.prize += prizes_norm[start];
                }
            }
            SubConstraints::Cvrp { demands, .. } => {
                st.load = demands[start];
                st.visited[start] = true;
                st.seq.push(start);
            }
            SubConstraints::Kp { .. } | SubConstraints::Mis { .. } => {}
        }
        st
    }

    pub fn current(&self) -> Option<usize> {
        self.seq.last().copied()
    }

    fn pd(&self, sub: &SubProblem, a: usize, b: usize) -> f64 {
        dist(sub.parent_coords[a], sub.parent_coords[b])
    }

    pub fn is_complete(&self, sub: &SubProblem) -> bool {
        match &sub.constraints {
            SubConstraints::Tsp => self.seq.len() == sub.window_len,
            SubConstraints::Cvrp { .. } => {
                (0..sub.window_len).all(|c| self.visited[c])
            }
            SubConstraints::Op { .. } | SubConstraints::Pctsp { .. } => self.done,
            SubConstraints::Kp { capacity, weights, .. } => {
                let cap = capacity - self.load;
                !(0..sub.cand_count()).any(|i| !self.visited[i] && weights[i] <= cap)
            }
            SubConstraints::Mis { forbidden, .. } => (0..sub.cand_count())
                .all(|i| self.blocked[i] || forbidden[i]),
        }
    }

    /// Feasible-action mask over the candidate indices.
    pub fn mask(&self, sub: &SubProblem) -> Result<Vec<bool>> {
        let m = sub.cand_count();
        let mut mask = vec![false; m];
        match &sub.constraints {
            SubConstraints::Tsp => {
                let remaining = (0..sub.window_len).filter(|&i| !self.visited[i]).count();
                for j in 0..sub.window_len {
                    mask[j] = !self.visited[j] && (j != self.end || remaining == 1);
                }
            }
            SubConstraints::Cvrp {
                capacity,
                first_budget,
                last_budget,
                single_budget,
                demands,
                ..
            } => {
                let depot = sub.window_len; // appended depot candidate
                if self.is_complete(sub) {
                    return Ok(mask);
                }
                let remaining = (0..sub.window_len).filter(|&c| !self.visited[c]).count();
                // The running route obeys the first-route budget until the
                // first break, plain capacity afterwards; the route that
                // places the pinned end node additionally obeys the
                // last-route (or single-route) budget.
                let run_bound = if self.had_break {
                    *capacity
                } else {
                    *first_budget
                };
                for c in 0..sub.window_len {
                    if self.visited[c] {
                        continue;
                    }
                    if c == self.end {
                        if remaining > 1 {
                            continue;
                        }
                        let close_bound = if self.had_break {
                            *last_budget
                        } else {
                            *single_budget
                        };
                        mask[c] = self.load + demands[c] <= close_bound;
                    } else {
                        mask[c] = self.load + demands[c] <= run_bound;
                    }
                }
                // Route break: never twice in a row.
                mask[depot] = self.current() != Some(depot);
                if !mask.iter().any(|&b| b) {
                    return Err(UdcError::NoFeasibleAction);
                }
            }
            SubConstraints::Op {
                budget, required, ..
            } => {
                if self.done {
                    return Ok(mask);
                }
                let cur = self.current().unwrap();
                let req = required.filter(|&r| !self.visited[r] && r != self.end);
                for j in 0..m {
                    if self.visited[j] || j == self.end {
                        continue;
                    }
                    // Reserve the cheapest legal completion: through the
                    // required node if it is still pending.
                    let completion = match req {
                        Some(r) if j != r => {
                            self.pd(sub, j, r) + self.pd(sub, r, self.end)
                        }
                        _ => self.pd(sub, j, self.end),
                    };
                    mask[j] = self.len + self.pd(sub, cur, j) + completion <= *budget;
                }
                mask[self.end] =
                    req.is_none() && self.len + self.pd(sub, cur, self.end) <= *budget;
                if !mask.iter().any(|&b| b) {
                    return Err(UdcError::NoFeasibleAction);
                }
            }
            SubConstraints::Pctsp {
                prize_bound,
                prizes_norm,
                required,
                ..
            } => {
                if self.done {
                    return Ok(mask);
                }
                let mut any_open = false;
                for j in 0..m {
                    if j != self.end && !self.visited[j] {
                        mask[j] = true;
                        any_open = true;
                    }
                }
                let req_ok = required.map_or(true, |r| self.visited[r] || r == self.end);
                // Visiting every candidate always reaches the bound (the
                // window alone defines it), so the no-open case stays legal.
                mask[self.end] =
                    req_ok && (self.prize + prizes_norm[self.end] >= *prize_bound || !any_open);
                if !mask.iter().any(|&b| b) {
                    return Err(UdcError::NoFeasibleAction);
                }
            }
            SubConstraints::Kp {
                capacity, weights, ..
            } => {
                let cap = capacity - self.load;
                for j in 0..m {
                    mask[j] = !self.visited[j] && weights[j] <= cap;
                }
            }
            SubConstraints::Mis { forbidden, .. } => {
                for j in 0..m {
                    mask[j] = !self.blocked[j] && !forbidden[j];
                }
            }
        }
        Ok(mask)
    }

    pub fn apply(&mut self, sub: &SubProblem, action: usize) {
        match &sub.constraints {
            SubConstraints::Tsp => {
                self.visited[action] = true;
                self.seq.push(action);
            }
            SubConstraints::Cvrp { demands, .. } => {
                if action == sub.window_len {
                    self.load = 0.0;
                    self.had_break = true;
                } else {
                    self.load += demands[action];
                    self.visited[action] = true;
                }
                self.seq.push(action);
            }
            SubConstraints::Op { .. } => {
                let cur = self.current().unwrap();
                self.len += self.pd(sub, cur, action);
                self.visited[action] = true;
                self.seq.push(action);
                if action == self.end {
                    self.done = true;
                }
            }
            SubConstraints::Pctsp { prizes_norm, .. } => {
                let cur = self.current().unwrap();
                self.len += self.pd(sub, cur, action);
                self.prize += prizes_norm[action];
                self.visited[action] = true;
                self.seq.push(action);
                if action == self.end {
                    self.done = true;
                }
            }
            SubConstraints::Kp { weights, .. } => {
                self.load += weights[action];
                self.visited[action] = true;
                self.seq.push(action);
            }
            SubConstraints::Mis { adjacency, .. } => {
                self.visited[action] = true;
                self.blocked[action] = true;
                for &nb in &adjacency[action] {
                    self.blocked[nb] = true;
                }
                self.seq.push(action);
            }
        }
    }

    /// Convert a completed construction into a sub-solution with its
    /// parent-space objective.
    pub fn into_sub_solution(self, sub: &SubProblem) -> SubSolution {
        let choices = self.seq.clone();
        let mut out = match &sub.constraints {
            SubConstraints::Tsp | SubConstraints::Op { .. } | SubConstraints::Pctsp { .. } => {
                SubSolution::bare(self.seq, vec![], vec![])
            }
            SubConstraints::Cvrp { frozen_last_flag, .. } => {
                let depot = sub.window_len;
                let mut order = Vec::new();
                let mut flags = Vec::new();
                for (i, &a) in self.seq.iter().enumerate() {
                    if a == depot {
                        continue;
                    }
                    order.push(a);
                    let next_is_break = self.seq.get(i + 1) == Some(&depot);
                    flags.push(next_is_break);
                }
                if let Some(last) = flags.last_mut() {
                    *last = *frozen_last_flag;
                }
                SubSolution::bare(order, flags, vec![])
            }
            SubConstraints::Kp { .. } | SubConstraints::Mis { .. } => {
                SubSolution::bare(vec![], vec![], self.seq)
            }
        };
        out.choices = choices;
        out.objective = sub_objective(sub, &out);
        out
    }
}

/// Sub-objective in the problem's native sense, evaluated in parent space.
pub fn sub_objective(sub: &SubProblem, s: &SubSolution) -> f64 {
    let pd = |a: usize, b: usize| dist(sub.parent_coords[a], sub.parent_coords[b]);
    match &sub.constraints {
        SubConstraints::Tsp => {
            let mut len = 0.0;
            for w in s.order.windows(2) {
                len += pd(w[0], w[1]);
            }
            len
        }
        SubConstraints::Cvrp { .. } => {
            let depot = sub.window_len;
            let mut cost = 0.0;
            for i in 0..s.order.len().saturating_sub(1) {
                cost += if s.flags[i] {
                    pd(s.order[i], depot) + pd(depot, s.order[i + 1])
                } else {
                    pd(s.order[i], s.order[i + 1])
                };
            }
            cost
        }
        SubConstraints::Op { prizes, .. } => s.order.iter().map(|&i| prizes[i]).sum(),
        SubConstraints::Pctsp { penalties, .. } => {
            let mut len = 0.0;
            for w in s.order.windows(2) {
                len += pd(w[0], w[1]);
            }
            let mut chosen = vec![false; sub.cand_count()];
            for &i in &s.order {
                chosen[i] = true;
            }
            let pen: f64 = (0..sub.cand_count())
                .filter(|&i| !chosen[i])
                .map(|i| penalties[i])
                .sum();
            len + pen
        }
        SubConstraints::Kp { values, .. } => s.items.iter().map(|&i| values[i]).sum(),
        SubConstraints::Mis { .. } => s.items.len() as f64,
    }
}

/// Check a sub-solution against the dispatched constraints. Returns the
/// violated constraint's name, if any.
pub fn sub_feasible(sub: &SubProblem, s: &SubSolution) -> Option<String> {
    let pd = |a: usize, b: usize| dist(sub.parent_coords[a], sub.parent_coords[b]);
    match &sub.constraints {
        SubConstraints::Tsp => {
            if s.order.len() != sub.window_len {
                return Some("sub_permutation".into());
            }
            let mut seen = vec![false; sub.window_len];
            for &v in &s.order {
                if v >= sub.window_len || seen[v] {
                    return Some("sub_permutation".into());
                }
                seen[v] = true;
            }
            if s.order[0] != sub.start_pin || *s.order.last().unwrap() != sub.end_pin {
                return Some("endpoint_pins".into());
            }
        }
        SubConstraints::Cvrp {
            capacity,
            first_budget,
            last_budget,
            single_budget,
            frozen_last_flag,
            demands,
            ..
        } => {
            if s.order.len() != sub.window_len || s.flags.len() != s.order.len() {
                return Some("sub_permutation".into());
            }
            let mut seen = vec![false; sub.window_len];
            for &v in &s.order {
                if v >= sub.window_len || seen[v] {
                    return Some("sub_permutation".into());
                }
                seen[v] = true;
            }
            if s.order[0] != sub.start_pin || *s.order.last().unwrap() != sub.end_pin {
                return Some("endpoint_pins".into());
            }
            if s.flags[s.order.len() - 1] != *frozen_last_flag {
                return Some("frozen_boundary_flag".into());
            }
            // Per-route budgets: first route joins upstream, last joins
            // downstream, a break-free solution does both at once.
            let n_routes = 1 + s.flags[..s.order.len() - 1]
                .iter()
                .filter(|&&f| f)
                .count();
            let mut load = 0.0;
            let mut route_idx = 0;
            for (i, &c) in s.order.iter().enumerate() {
                load += demands[c];
                let is_route_end = s.flags[i] || i == s.order.len() - 1;
                if is_route_end {
                    let bound = match (route_idx == 0, route_idx == n_routes - 1) {
                        (true, true) => *single_budget,
                        (true, false) => *first_budget,
                        (false, true) => *last_budget,
                        (false, false) => *capacity,
                    };
                    if load > bound {
                        return Some("sub_capacity".into());
                    }
                    load = 0.0;
                    route_idx += 1;
                }
            }
        }
        SubConstraints::Op {
            budget, required, ..
        } => {
            if s.order.first() != Some(&sub.start_pin) || s.order.last() != Some(&sub.end_pin) {
                return Some("endpoint_pins".into());
            }
            let mut seen = vec![false; sub.cand_count()];
            for &v in &s.order {
                if v >= sub.cand_count() || seen[v] {
                    return Some("sub_duplicate".into());
                }
                seen[v] = true;
            }
            if let Some(r) = required {
                if !seen[*r] {
                    return Some("required_depot".into());
                }
            }
            let mut len = 0.0;
            for w in s.order.windows(2) {
                len += pd(w[0], w[1]);
            }
            if len > *budget {
                return Some("sub_length_budget".into());
            }
        }
        SubConstraints::Pctsp {
            prize_bound,
            prizes_norm,
            required,
            ..
        } => {
            if s.order.first() != Some(&sub.start_pin) || s.order.last() != Some(&sub.end_pin) {
                return Some("endpoint_pins".into());
            }
            let mut seen = vec![false; sub.cand_count()];
            for &v in &s.order {
                if v >= sub.cand_count() || seen[v] {
                    return Some("sub_duplicate".into());
                }
                seen[v] = true;
            }
            if let Some(r) = required {
                if !seen[*r] {
                    return Some("required_depot".into());
                }
            }
            let all = (0..sub.cand_count()).all(|i| seen[i]);
            let prize: f64 = s.order.iter().map(|&i| prizes_norm[i]).sum();
            if prize < *prize_bound && !all {
                return Some("sub_prize_bound".into());
            }
        }
        SubConstraints::Kp {
            capacity, weights, ..
        } => {
            let mut seen = vec![false; sub.cand_count()];
            for &v in &s.items {
                if v >= sub.cand_count() || seen[v] {
                    return Some("sub_duplicate".into());
                }
                seen[v] = true;
            }
            let w: f64 = s.items.iter().map(|&i| weights[i]).sum();
            if w > *capacity {
                return Some("sub_weight_capacity".into());
            }
        }
        SubConstraints::Mis {
            adjacency,
            forbidden,
        } => {
            let mut seen = vec![false; sub.cand_count()];
            for &v in &s.items {
                if v >= sub.cand_count() || seen[v] {
                    return Some("sub_duplicate".into());
                }
                if forbidden[v] {
                    return Some("forbidden_node".into());
                }
                seen[v] = true;
            }
            for v in 0..sub.cand_count() {
                if seen[v] {
                    for &nb in &adjacency[v] {
                        if seen[nb] {
                            return Some("sub_independence".into());
                        }
                    }
                }
            }
        }
    }
    None
}

/// Uniform-random feasible sub-solution; reference baseline for dominance
/// checks and legality sweeps.
pub fn random_feasible<R: Rng + ?Sized>(sub: &SubProblem, rng: &mut R) -> Result<SubSolution> {
    let mut st = SubState::new(sub, sub.start_pin, sub.end_pin);
    loop {
        if st.is_complete(sub) {
            break;
        }
        let mask = st.mask(sub)?;
        let open: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if open.is_empty() {
            break;
        }
        let pick = open[rng.random_range(0..open.len())];
        st.apply(sub, pick);
    }
    Ok(st.into_sub_solution(sub))
}
