//! Heuristic initial solutions, used as ablation baselines against the
//! learned dividing policy.

use crate::error::{Result, UdcError};
use crate::problems::{
    feasible_actions, random_rollout, Instance, Kind, PartialState, Solution,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    Random,
    NearestGreedy,
    RandomInsertion,
}

impl InitMethod {
    pub fn parse(s: &str) -> Result<InitMethod> {
        match s {
            "random" => Ok(InitMethod::Random),
            "nearest-greedy" | "nearest_greedy" => Ok(InitMethod::NearestGreedy),
            "random-insertion" | "random_insertion" => Ok(InitMethod::RandomInsertion),
            other => Err(UdcError::InvalidParams(format!(
                "unknown initializer `{other}`"
            ))),
        }
    }
}

fn unsupported(op: &'static str, kind: Kind) -> UdcError {
    UdcError::UnsupportedKind {
        op,
        kind: kind.to_string(),
    }
}

/// Build a feasible initial solution without the neural dividing policy.
pub fn heuristic_initial(inst: &Instance, method: InitMethod, seed: u64) -> Result<Solution> {
    if !inst.kind.is_route() {
        return Err(unsupported("heuristic_initial", inst.kind));
    }
    match method {
        InitMethod::Random => {
            let mut r = rng::stream(seed, &[0x4e]);
            random_rollout(inst, &mut r)
        }
        InitMethod::NearestGreedy => nearest_greedy(inst),
        InitMethod::RandomInsertion => {
            if inst.kind != Kind::Tsp {
                return Err(unsupported("random_insertion", inst.kind));
            }
            random_insertion_tsp(inst, seed)
        }
    }
}

/// From the first node, always move to the nearest feasible action.
fn nearest_greedy(inst: &Instance) -> Result<Solution> {
    let mut state = PartialState::new(inst);
    if inst.kind == Kind::Tsp {
        state.apply(inst, 0);
    }
    loop {
        if state.is_complete(inst) {
            break;
        }
        let mask = feasible_actions(inst, &state)?;
        let cur = state.current().unwrap();
        // PCTSP stops as soon as the prize bound is met.
        if inst.kind == Kind::Pctsp && mask[0] {
            state.apply(inst, 0);
            continue;
        }
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for c in 1..inst.n {
            if mask[c] && inst.dist(cur, c) < best_d {
                best_d = inst.dist(cur, c);
                best = Some(c);
            }
        }
        match best {
            Some(c) => state.apply(inst, c),
            None => {
                // Only the depot remains open: route reset (CVRP) or stop.
                state.apply(inst, 0);
            }
        }
    }
    state.into_solution(inst)
}

/// Insert nodes in seeded random order, each at the cheapest position of the
/// growing tour.
fn random_insertion_tsp(inst: &Instance, seed: u64) -> Result<Solution> {
    use rand::Rng;
    let mut r = rng::stream(seed, &[0x52]);
    let mut order: Vec<usize> = (0..inst.n).collect();
    for i in (1..inst.n).rev() {
        let j = r.random_range(0..=i);
        order.swap(i, j);
    }
    let mut tour = vec![order[0]];
    for &v in &order[1..] {
        let mut best_pos = 0;
        let mut best_delta = f64::INFINITY;
        for pos in 0..tour.len() {
            let a = tour[pos];
            let b = tour[(pos + 1) % tour.len()];
            let delta = inst.dist(a, v) + inst.dist(v, b) - inst.dist(a, b);
            if delta < best_delta {
                best_delta = delta;
                best_pos = pos;
            }
        }
        tour.insert(best_pos + 1, v);
    }
    Solution::route(tour, vec![]).finalize(inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{check_feasibility, generate_instance, loop_length, GenParams};

    #[test]
    fn nearest_greedy_walks_collinear_points_in_order() {
        let inst = Instance::tsp(vec![[0.0, 0.0], [0.3, 0.0], [0.6, 0.0]]).unwrap();
        let sol = heuristic_initial(&inst, InitMethod::NearestGreedy, 0).unwrap();
        assert_eq!(sol.order, vec![0, 1, 2]);
    }

    #[test]
    fn random_initializer_is_feasible_for_all_route_kinds() {
        for kind in [Kind::Tsp, Kind::Cvrp, Kind::Op, Kind::Pctsp] {
            for seed in 0..20 {
                let inst = generate_instance(kind, 15, seed, &GenParams::default()).unwrap();
                let sol = heuristic_initial(&inst, InitMethod::Random, seed).unwrap();
                assert!(check_feasibility(&inst, &sol).unwrap().is_ok(), "{kind}");
                let ng = heuristic_initial(&inst, InitMethod::NearestGreedy, seed).unwrap();
                assert!(check_feasibility(&inst, &ng).unwrap().is_ok(), "{kind}");
            }
        }
        assert!(matches!(
            heuristic_initial(
                &generate_instance(Kind::Kp, 10, 0, &GenParams::default()).unwrap(),
                InitMethod::Random,
                0
            ),
            Err(UdcError::UnsupportedKind { .. })
        ));
    }

    #[test]
    fn random_insertion_finds_convex_hull_order() {
        // Six points in convex position: the optimal tour is the hull walk.
        let coords = vec![
            [0.5, 0.0],
            [0.9, 0.25],
            [0.9, 0.75],
            [0.5, 1.0],
            [0.1, 0.75],
            [0.1, 0.25],
        ];
        let inst = Instance::tsp(coords).unwrap();
        // Brute-force optimum over all tours.
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (1..6).collect();
        permute(&mut perm, 0, &mut |p| {
            let mut order = vec![0];
            order.extend_from_slice(p);
            best = best.min(loop_length(&inst, &order));
        });
        for seed in 0..10 {
            let sol = heuristic_initial(&inst, InitMethod::RandomInsertion, seed).unwrap();
            assert!(
                (sol.objective - best).abs() < 1e-9,
                "seed {seed}: {} vs {best}",
                sol.objective
            );
        }
    }

    fn permute<F: FnMut(&[usize])>(v: &mut Vec<usize>, k: usize, f: &mut F) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }
}
