//! Problem definitions: instances, solutions, objectives, feasibility.
//!
//! Six problem families share one instance/solution representation:
//!
//! * routing kinds (TSP, CVRP, OP, PCTSP) carry unit-square coordinates and a
//!   visit order; CVRP additionally carries an aligned flag sequence where a
//!   raised flag means "return to the depot after this node",
//! * subset kinds (KP, MIS) carry a selected index set.
//!
//! Objectives follow each problem's native sense: minimization kinds return a
//! cost, maximization kinds (OP, KP, MIS) return a value. Layers that need a
//! uniform "smaller is better" reward negate on entry via [`Kind::sense`].

mod gen;
mod json;
mod state;

pub use gen::{generate_instance, GenParams};
pub use json::{instance_from_json, instance_to_json};
pub use state::{feasible_actions, random_rollout, PartialState};

use crate::error::{Result, UdcError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Tsp,
    Cvrp,
    Op,
    Pctsp,
    Kp,
    Mis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Kind {
    pub const ALL: [Kind; 6] = [Kind::Tsp, Kind::Cvrp, Kind::Op, Kind::Pctsp, Kind::Kp, Kind::Mis];

    /// True for kinds whose solution is a visit order over coordinates.
    pub fn is_route(self) -> bool {
        matches!(self, Kind::Tsp | Kind::Cvrp | Kind::Op | Kind::Pctsp)
    }

    /// True for kinds with a distinguished depot at index 0.
    pub fn has_depot(self) -> bool {
        matches!(self, Kind::Cvrp | Kind::Op | Kind::Pctsp)
    }

    pub fn sense(self) -> Sense {
        match self {
            Kind::Tsp | Kind::Cvrp | Kind::Pctsp => Sense::Minimize,
            Kind::Op | Kind::Kp | Kind::Mis => Sense::Maximize,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Tsp => "tsp",
            Kind::Cvrp => "cvrp",
            Kind::Op => "op",
            Kind::Pctsp => "pctsp",
            Kind::Kp => "kp",
            Kind::Mis => "mis",
        }
    }

    pub fn parse(s: &str) -> Result<Kind> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" => Ok(Kind::Tsp),
            "cvrp" => Ok(Kind::Cvrp),
            "op" => Ok(Kind::Op),
            "pctsp" => Ok(Kind::Pctsp),
            "kp" => Ok(Kind::Kp),
            "mis" => Ok(Kind::Mis),
            other => Err(UdcError::InvalidParams(format!("unknown kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// One problem instance. Fields irrelevant to `kind` stay empty; use the
/// constructors, which validate the per-kind invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub kind: Kind,
    pub n: usize,
    /// Unit-square coordinates (routing kinds); index 0 is the depot for
    /// depot kinds.
    pub coords: Vec<[f64; 2]>,
    /// Per-node demand (CVRP); `demands[0] == 0`.
    pub demands: Vec<f64>,
    /// Vehicle capacity (CVRP) or knapsack capacity (KP).
    pub capacity: f64,
    /// Per-node prize (OP, PCTSP); depot prize is 0.
    pub prizes: Vec<f64>,
    /// Per-node penalty for skipping (PCTSP).
    pub penalties: Vec<f64>,
    /// Route length budget (OP).
    pub budget: f64,
    /// Item values / weights (KP).
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    /// Undirected edges, canonical `u < v` (MIS).
    pub edges: Vec<(usize, usize)>,
    /// Neighbor lists derived from `edges` (MIS).
    pub adjacency: Vec<Vec<usize>>,
}

impl Instance {
    fn empty(kind: Kind, n: usize) -> Instance {
        Instance {
            kind,
            n,
            coords: Vec::new(),
            demands: Vec::new(),
            capacity: 0.0,
            prizes: Vec::new(),
            penalties: Vec::new(),
            budget: 0.0,
            values: Vec::new(),
            weights: Vec::new(),
            edges: Vec::new(),
            adjacency: Vec::new(),
        }
    }

    pub fn tsp(coords: Vec<[f64; 2]>) -> Result<Instance> {
        let mut inst = Instance::empty(Kind::Tsp, coords.len());
        inst.coords = coords;
        inst.validate()?;
        Ok(inst)
    }

    pub fn cvrp(coords: Vec<[f64; 2]>, demands: Vec<f64>, capacity: f64) -> Result<Instance> {
        let mut inst = Instance::empty(Kind::Cvrp, coords.len());
        inst.coords = coords;
        inst.demands = demands;
        inst.capacity = capacity;
        inst.validate()?;
        Ok(inst)
    }

    pub fn op(coords: Vec<[f64; 2]>, prizes: Vec<f64>, budget: f64) -> Result<Instance> {
        let mut inst = Instance::empty(Kind::Op, coords.len());
        inst.coords = coords;
        inst.prizes = prizes;
        inst.budget = budget;
        inst.validate()?;
        Ok(inst)
    }

    pub fn pctsp(coords: Vec<[f64; 2]>, prizes: Vec<f64>, penalties: Vec<f64>) -> Result<Instance> {
        let mut inst = Instance::empty(Kind::Pctsp, coords.len());
        inst.coords = coords;
        inst.prizes = prizes;
        inst.penalties = penalties;
        inst.validate()?;
        Ok(inst)
    }

    pub fn kp(values: Vec<f64>, weights: Vec<f64>, capacity: f64) -> Result<Instance> {
        let mut inst = Instance::empty(Kind::Kp, values.len());
        inst.values = values;
        inst.weights = weights;
        inst.capacity = capacity;
        inst.validate()?;
        Ok(inst)
    }

    pub fn mis(n: usize, mut edges: Vec<(usize, usize)>) -> Result<Instance> {
        for e in edges.iter_mut() {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut inst = Instance::empty(Kind::Mis, n);
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &edges {
            if u == v {
                return Err(UdcError::InvalidParams(format!("self-loop on node {u}")));
            }
            if v >= n {
                return Err(UdcError::InvalidParams(format!(
                    "edge ({u},{v}) out of range for n={n}"
                )));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        inst.edges = edges;
        inst.adjacency = adjacency;
        inst.validate()?;
        Ok(inst)
    }

    pub fn dist(&self, a: usize, b: usize) -> f64 {
        dist(self.coords[a], self.coords[b])
    }

    /// Customer indices for depot kinds (everything but node 0).
    pub fn customers(&self) -> std::ops::Range<usize> {
        1..self.n
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(UdcError::InvalidParams(format!(
                "degenerate instance: n={} < 2",
                self.n
            )));
        }
        let invalid = |msg: String| Err(UdcError::InvalidParams(msg));
        if self.kind.is_route() {
            if self.coords.len() != self.n {
                return invalid(format!(
                    "coords length {} != n {}",
                    self.coords.len(),
                    self.n
                ));
            }
            for (i, c) in self.coords.iter().enumerate() {
                if !(0.0..=1.0).contains(&c[0]) || !(0.0..=1.0).contains(&c[1]) {
                    return invalid(format!("coordinate {i} outside the unit square: {c:?}"));
                }
            }
        }
        match self.kind {
            Kind::Cvrp => {
                if self.demands.len() != self.n {
                    return invalid("demands length mismatch".into());
                }
                if self.demands[0] != 0.0 {
                    return invalid("depot demand must be 0".into());
                }
                for (i, &d) in self.demands.iter().enumerate().skip(1) {
                    if d <= 0.0 || d > self.capacity {
                        return invalid(format!("demand {i} = {d} outside (0, C]"));
                    }
                }
            }
            Kind::Op => {
                if self.prizes.len() != self.n {
                    return invalid("prizes length mismatch".into());
                }
                if self.budget <= 0.0 {
                    return invalid("budget must be positive".into());
                }
            }
            Kind::Pctsp => {
                if self.prizes.len() != self.n || self.penalties.len() != self.n {
                    return invalid("prizes/penalties length mismatch".into());
                }
            }
            Kind::Kp => {
                if self.values.len() != self.n || self.weights.len() != self.n {
                    return invalid("values/weights length mismatch".into());
                }
                for i in 0..self.n {
                    if self.values[i] <= 0.0 || self.values[i] > 1.0 {
                        return invalid(format!("value {i} outside (0, 1]"));
                    }
                    if self.weights[i] <= 0.0 || self.weights[i] > 1.0 {
                        return invalid(format!("weight {i} outside (0, 1]"));
                    }
                }
                if self.capacity <= 0.0 {
                    return invalid("capacity must be positive".into());
                }
            }
            Kind::Mis => {
                if self.adjacency.len() != self.n {
                    return invalid("adjacency length mismatch".into());
                }
            }
            Kind::Tsp => {}
        }
        Ok(())
    }
}

/// A candidate solution with its cached objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Visit order (routing kinds). OP/PCTSP start at the depot; CVRP lists
    /// customers only, with depot returns encoded in `flags`.
    pub order: Vec<usize>,
    /// CVRP only: `flags[i]` means the vehicle returns to the depot after
    /// `order[i]`. The final flag is always raised.
    pub flags: Vec<bool>,
    /// Selected indices (KP, MIS), in selection order.
    pub items: Vec<usize>,
    pub objective: f64,
    pub feasible: bool,
}

impl Solution {
    pub fn route(order: Vec<usize>, flags: Vec<bool>) -> Solution {
        Solution {
            order,
            flags,
            items: Vec::new(),
            objective: f64::NAN,
            feasible: false,
        }
    }

    pub fn subset(items: Vec<usize>) -> Solution {
        Solution {
            order: Vec::new(),
            flags: Vec::new(),
            items,
            objective: f64::NAN,
            feasible: false,
        }
    }

    /// Evaluate against `inst`, filling the cached objective and flag.
    pub fn finalize(mut self, inst: &Instance) -> Result<Solution> {
        self.objective = evaluate_objective(inst, &self)?;
        self.feasible = true;
        Ok(self)
    }

    /// Solution length tau (route kinds) or selection count.
    pub fn len(&self) -> usize {
        if self.items.is_empty() {
            self.order.len()
        } else {
            self.items.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty() && self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Violation(String),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }
}

fn shape_check(inst: &Instance, sol: &Solution) -> Result<()> {
    let mismatch = |expected: &str, got: String| {
        Err(UdcError::ShapeMismatch {
            context: format!("{} solution", inst.kind),
            expected: expected.to_string(),
            got,
        })
    };
    if inst.kind.is_route() {
        if !sol.items.is_empty() || sol.order.is_empty() {
            return mismatch(
                "non-empty visit order",
                format!("order len {}, items len {}", sol.order.len(), sol.items.len()),
            );
        }
        if inst.kind == Kind::Cvrp && sol.flags.len() != sol.order.len() {
            return mismatch(
                "flags aligned with order",
                format!("order len {}, flags len {}", sol.order.len(), sol.flags.len()),
            );
        }
        if inst.kind != Kind::Cvrp && !sol.flags.is_empty() {
            return mismatch("no flags", format!("flags len {}", sol.flags.len()));
        }
        if let Some(&bad) = sol.order.iter().find(|&&v| v >= inst.n) {
            return mismatch("node ids < n", format!("node {bad}"));
        }
    } else {
        if !sol.order.is_empty() {
            return mismatch("item subset", format!("order len {}", sol.order.len()));
        }
        if let Some(&bad) = sol.items.iter().find(|&&v| v >= inst.n) {
            return mismatch("item ids < n", format!("item {bad}"));
        }
    }
    Ok(())
}

/// CVRP cost of moving from `order[i]` to `order[i+1]`, honoring the flag.
fn cvrp_step(inst: &Instance, u: usize, v: usize, via_depot: bool) -> f64 {
    if via_depot {
        inst.dist(u, 0) + inst.dist(0, v)
    } else {
        inst.dist(u, v)
    }
}

/// Total CVRP cost of a flag-encoded customer sequence.
pub fn cvrp_cost(inst: &Instance, order: &[usize], flags: &[bool]) -> f64 {
    if order.is_empty() {
        return 0.0;
    }
    let mut cost = inst.dist(0, order[0]);
    for i in 0..order.len() - 1 {
        cost += cvrp_step(inst, order[i], order[i + 1], flags[i]);
    }
    cost + inst.dist(*order.last().unwrap(), 0)
}

/// Closed-loop length of a visit order (TSP/OP/PCTSP).
pub fn loop_length(inst: &Instance, order: &[usize]) -> f64 {
    if order.len() < 2 {
        return 0.0;
    }
    let mut len = 0.0;
    for w in order.windows(2) {
        len += inst.dist(w[0], w[1]);
    }
    len + inst.dist(*order.last().unwrap(), order[0])
}

/// Exact objective of a solution. Minimization kinds return cost,
/// maximization kinds (OP, KP, MIS) return value. Infeasible solutions are
/// rejected with the violated constraint's name.
pub fn evaluate_objective(inst: &Instance, sol: &Solution) -> Result<f64> {
    shape_check(inst, sol)?;
    if let Verdict::Violation(name) = check_feasibility(inst, sol)? {
        return Err(UdcError::Infeasible(name));
    }
    Ok(match inst.kind {
        Kind::Tsp => loop_length(inst, &sol.order),
        Kind::Cvrp => cvrp_cost(inst, &sol.order, &sol.flags),
        Kind::Op => sol.order.iter().map(|&i| inst.prizes[i]).sum(),
        Kind::Pctsp => {
            let mut visited = vec![false; inst.n];
            for &i in &sol.order {
                visited[i] = true;
            }
            let penalties: f64 = (1..inst.n).filter(|&i| !visited[i]).map(|i| inst.penalties[i]).sum();
            loop_length(inst, &sol.order) + penalties
        }
        Kind::Kp => sol.items.iter().map(|&i| inst.values[i]).sum(),
        Kind::Mis => sol.items.len() as f64,
    })
}

/// Check every problem constraint; returns the first violated one by name.
pub fn check_feasibility(inst: &Instance, sol: &Solution) -> Result<Verdict> {
    shape_check(inst, sol)?;
    let violation = |name: &str| Ok(Verdict::Violation(name.to_string()));
    match inst.kind {
        Kind::Tsp => {
            if sol.order.len() != inst.n {
                return violation("permutation");
            }
            let mut seen = vec![false; inst.n];
            for &v in &sol.order {
                if seen[v] {
                    return violation("permutation");
                }
                seen[v] = true;
            }
        }
        Kind::Cvrp => {
            if sol.order.len() != inst.n - 1 {
                return violation("permutation");
            }
            let mut seen = vec![false; inst.n];
            for &v in &sol.order {
                if v == 0 || seen[v] {
                    return violation("permutation");
                }
                seen[v] = true;
            }
            if sol.flags.last() != Some(&true) {
                return violation("final_flag");
            }
            let mut load = 0.0;
            for (i, &v) in sol.order.iter().enumerate() {
                load += inst.demands[v];
                if load > inst.capacity {
                    return violation("capacity");
                }
                if sol.flags[i] {
                    load = 0.0;
                }
            }
        }
        Kind::Op | Kind::Pctsp => {
            if sol.order.first() != Some(&0) {
                return violation("depot_start");
            }
            let mut seen = vec![false; inst.n];
            for &v in &sol.order {
                if seen[v] {
                    return violation("duplicate_node");
                }
                seen[v] = true;
            }
            if inst.kind == Kind::Op {
                if loop_length(inst, &sol.order) > inst.budget {
                    return violation("length_budget");
                }
            } else {
                let prize: f64 = sol.order.iter().map(|&i| inst.prizes[i]).sum();
                if prize < 1.0 {
                    return violation("prize_lower_bound");
                }
            }
        }
        Kind::Kp => {
            let mut seen = vec![false; inst.n];
            for &v in &sol.items {
                if seen[v] {
                    return violation("duplicate_item");
                }
                seen[v] = true;
            }
            let weight: f64 = sol.items.iter().map(|&i| inst.weights[i]).sum();
            if weight > inst.capacity {
                return violation("weight_capacity");
            }
        }
        Kind::Mis => {
            let mut seen = vec![false; inst.n];
            for &v in &sol.items {
                if seen[v] {
                    return violation("duplicate_item");
                }
                seen[v] = true;
            }
            for &(u, v) in &inst.edges {
                if seen[u] && seen[v] {
                    return violation("independence");
                }
            }
        }
    }
    Ok(Verdict::Ok)
}

/// Relative gap to a reference objective, in percent.
pub fn gap(obj: f64, reference: f64, sense: Sense) -> Result<f64> {
    if reference <= 0.0 {
        return Err(UdcError::NonPositiveReference(reference));
    }
    Ok(match sense {
        Sense::Minimize => (obj - reference) / reference * 100.0,
        Sense::Maximize => (reference - obj) / reference * 100.0,
    })
}
