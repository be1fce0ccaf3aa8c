//! Instance JSON schema.
//!
//! `{kind, n, coords?, demands?, capacity?, prizes?, penalties?, budget?,
//! values?, weights?, edges?}` with numeric fields written at 9 significant
//! digits.

use super::{Instance, Kind};
use crate::error::{Result, UdcError};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct InstanceJson {
    kind: Kind,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    demands: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    capacity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prizes: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    penalties: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<(usize, usize)>>,
}

/// Round to 9 significant decimal digits.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(8 - mag);
    (x * scale).round() / scale
}

fn sig9_vec(v: &[f64]) -> Vec<f64> {
    v.iter().copied().map(round_sig9).collect()
}

pub fn instance_to_json(inst: &Instance) -> String {
    let nonempty_coords = (!inst.coords.is_empty()).then(|| {
        inst.coords
            .iter()
            .map(|c| [round_sig9(c[0]), round_sig9(c[1])])
            .collect()
    });
    let j = InstanceJson {
        kind: inst.kind,
        n: inst.n,
        coords: nonempty_coords,
        demands: (!inst.demands.is_empty()).then(|| sig9_vec(&inst.demands)),
        capacity: (inst.kind == Kind::Cvrp || inst.kind == Kind::Kp)
            .then(|| round_sig9(inst.capacity)),
        prizes: (!inst.prizes.is_empty()).then(|| sig9_vec(&inst.prizes)),
        penalties: (!inst.penalties.is_empty()).then(|| sig9_vec(&inst.penalties)),
        budget: (inst.kind == Kind::Op).then(|| round_sig9(inst.budget)),
        values: (!inst.values.is_empty()).then(|| sig9_vec(&inst.values)),
        weights: (!inst.weights.is_empty()).then(|| sig9_vec(&inst.weights)),
        edges: (inst.kind == Kind::Mis).then(|| inst.edges.clone()),
    };
    serde_json::to_string(&j).expect("instance serialization cannot fail")
}

pub fn instance_from_json(text: &str) -> Result<Instance> {
    let j: InstanceJson = serde_json::from_str(text)
        .map_err(|e| UdcError::InvalidParams(format!("instance json: {e}")))?;
    let missing = |field: &str| {
        UdcError::InvalidParams(format!("{} instance missing `{field}`", j.kind))
    };
    let inst = match j.kind {
        Kind::Tsp => Instance::tsp(j.coords.ok_or_else(|| missing("coords"))?)?,
        Kind::Cvrp => Instance::cvrp(
            j.coords.ok_or_else(|| missing("coords"))?,
            j.demands.ok_or_else(|| missing("demands"))?,
            j.capacity.ok_or_else(|| missing("capacity"))?,
        )?,
        Kind::Op => Instance::op(
            j.coords.ok_or_else(|| missing("coords"))?,
            j.prizes.ok_or_else(|| missing("prizes"))?,
            j.budget.ok_or_else(|| missing("budget"))?,
        )?,
        Kind::Pctsp => Instance::pctsp(
            j.coords.ok_or_else(|| missing("coords"))?,
            j.prizes.ok_or_else(|| missing("prizes"))?,
            j.penalties.ok_or_else(|| missing("penalties"))?,
        )?,
        Kind::Kp => Instance::kp(
            j.values.ok_or_else(|| missing("values"))?,
            j.weights.ok_or_else(|| missing("weights"))?,
            j.capacity.ok_or_else(|| missing("capacity"))?,
        )?,
        Kind::Mis => Instance::mis(j.n, j.edges.ok_or_else(|| missing("edges"))?)?,
    };
    if inst.n != j.n {
        return Err(UdcError::InvalidParams(format!(
            "declared n={} but payload has {}",
            j.n, inst.n
        )));
    }
    Ok(inst)
}
