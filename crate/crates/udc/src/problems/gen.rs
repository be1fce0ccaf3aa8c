//! Seeded instance generation.

use super::{Instance, Kind};
use crate::error::{Result, UdcError};
use crate::rng;
use rand::Rng;

/// Optional per-kind constraint scalars. `None` picks the desk-scale default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenParams {
    /// CVRP vehicle capacity or KP knapsack capacity.
    pub capacity: Option<f64>,
    /// OP route length budget.
    pub budget: Option<f64>,
    /// PCTSP penalty scale K (penalties drawn from U(0, 3K/N)).
    pub penalty_scale: Option<f64>,
    /// MIS Erdos-Renyi edge probability.
    pub edge_prob: Option<f64>,
}

impl GenParams {
    fn hash_label(&self) -> u64 {
        let enc = |v: Option<f64>| v.map_or(u64::MAX, f64::to_bits);
        rng::fnv1a64(
            &[
                enc(self.capacity),
                enc(self.budget),
                enc(self.penalty_scale),
                enc(self.edge_prob),
            ]
            .iter()
            .flat_map(|x| x.to_le_bytes())
            .collect::<Vec<u8>>(),
        )
    }
}

/// Generate an instance; the full random stream is fixed by
/// `(kind, n, seed, params)`.
pub fn generate_instance(kind: Kind, n: usize, seed: u64, params: &GenParams) -> Result<Instance> {
    if n < 2 {
        return Err(UdcError::InvalidParams(format!("n={n} < 2")));
    }
    let mut r = rng::stream(seed, &[kind as u64, n as u64, params.hash_label()]);
    match kind {
        Kind::Tsp => {
            let coords = (0..n).map(|_| [r.random(), r.random()]).collect();
            Instance::tsp(coords)
        }
        Kind::Cvrp => {
            let capacity = params.capacity.unwrap_or(50.0);
            if capacity < 9.0 {
                return Err(UdcError::InvalidParams(format!(
                    "cvrp capacity {capacity} below the maximum demand 9"
                )));
            }
            let coords: Vec<[f64; 2]> = (0..n).map(|_| [r.random(), r.random()]).collect();
            let mut demands = vec![0.0];
            demands.extend((1..n).map(|_| r.random_range(1..=9) as f64));
            Instance::cvrp(coords, demands, capacity)
        }
        Kind::Op => {
            let budget = params.budget.unwrap_or(4.0);
            let coords: Vec<[f64; 2]> = (0..n).map(|_| [r.random(), r.random()]).collect();
            let dmax = (1..n)
                .map(|i| super::dist(coords[0], coords[i]))
                .fold(0.0f64, f64::max);
            let mut prizes = vec![0.0];
            for i in 1..n {
                let hat = 1.0 + (99.0 * super::dist(coords[0], coords[i]) / dmax).floor();
                prizes.push(hat / 100.0);
            }
            Instance::op(coords, prizes, budget)
        }
        Kind::Pctsp => {
            let pen_scale = params.penalty_scale.unwrap_or(9.0);
            let coords: Vec<[f64; 2]> = (0..n).map(|_| [r.random(), r.random()]).collect();
            // Resample until the instance admits a feasible solution
            // (total prize must reach the lower bound of 1).
            let mut prizes;
            let mut tries = 0;
            loop {
                prizes = vec![0.0];
                prizes.extend((1..n).map(|_| r.random::<f64>() * 4.0 / n as f64));
                if prizes.iter().sum::<f64>() >= 1.0 {
                    break;
                }
                tries += 1;
                if tries > 1000 {
                    return Err(UdcError::InvalidParams(format!(
                        "cannot draw a feasible pctsp instance at n={n}"
                    )));
                }
            }
            let mut penalties = vec![0.0];
            penalties.extend((1..n).map(|_| r.random::<f64>() * 3.0 * pen_scale / n as f64));
            Instance::pctsp(coords, prizes, penalties)
        }
        Kind::Kp => {
            let capacity = params.capacity.unwrap_or((n as f64 / 10.0).max(1.0));
            let values = (0..n).map(|_| 1.0 - r.random::<f64>()).collect();
            let weights = (0..n).map(|_| 1.0 - r.random::<f64>()).collect();
            Instance::kp(values, weights, capacity)
        }
        Kind::Mis => {
            let p = params.edge_prob.unwrap_or(0.15);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    if r.random::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
            Instance::mis(n, edges)
        }
    }
}
