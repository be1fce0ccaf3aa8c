//! Window extraction and constraint dispatch.
//!
//! Route kinds cut the current solution order into `floor(tau/n)` windows of
//! exactly `n` consecutive positions starting at offset `p` — cyclically for
//! closed tours (TSP, OP, PCTSP), linearly with a frozen head/tail for the
//! CVRP flag encoding. Positions that do not fill a whole window form the
//! leftover and pass through merging verbatim. KP windows chunk the current
//! selection and fill with unselected items; MIS windows are random member
//! sets. OP/PCTSP windows additionally adopt unvisited nodes that fall in
//! the window segment's bounding box, at most `n` extras per window.

use super::normalize::{normalize_coords, Transform};
use super::{SubConstraints, SubProblem, SubSolution};
use crate::error::{Result, UdcError};
use crate::problems::{dist, Instance, Kind, Solution};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct RawWindow {
    pub index: usize,
    /// Parent positions covered by this window (route kinds), in window
    /// order. KP: positions into the rotated selection list. MIS: unused.
    pub positions: Vec<usize>,
    /// Parent node/item ids in window order.
    pub nodes: Vec<usize>,
    /// Injected candidates: unvisited nodes (OP/PCTSP) or unselected items
    /// (KP fill).
    pub extra: Vec<usize>,
}

/// Positions (route kinds) or items (KP) untouched by any window.
#[derive(Debug, Clone, Default)]
pub struct Leftover {
    /// Positions before the first window (CVRP linear cut only).
    pub head_positions: Vec<usize>,
    /// Positions after the last window.
    pub tail_positions: Vec<usize>,
    /// KP: selected items outside all chunks; MIS: nodes in no window.
    pub free_items: Vec<usize>,
}

impl Leftover {
    pub fn len(&self) -> usize {
        self.head_positions.len() + self.tail_positions.len() + self.free_items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cut the current solution into sub-problem windows.
///
/// `rng` drives the randomized memberships (OP/PCTSP injection, KP fill,
/// MIS windows) and must come from the caller's stage stream.
pub fn extract_subproblems<R: Rng + ?Sized>(
    inst: &Instance,
    sol: &Solution,
    n: usize,
    p: usize,
    rng: &mut R,
) -> Result<(Vec<RawWindow>, Leftover)> {
    if n < 2 {
        return Err(UdcError::InvalidParams(format!("window size {n} < 2")));
    }
    match inst.kind {
        Kind::Tsp | Kind::Op | Kind::Pctsp => {
            let tau = sol.order.len();
            if n > tau {
                return Err(UdcError::SizeLimit {
                    op: "extract_subproblems",
                    limit: tau,
                    got: n,
                });
            }
            if p >= tau {
                return Err(UdcError::InvalidParams(format!("offset {p} >= tau {tau}")));
            }
            let count = tau / n;
            let mut windows = Vec::with_capacity(count);
            for k in 0..count {
                let positions: Vec<usize> = (0..n).map(|j| (p + k * n + j) % tau).collect();
                let nodes = positions.iter().map(|&q| sol.order[q]).collect();
                windows.push(RawWindow {
                    index: k,
                    positions,
                    nodes,
                    extra: Vec::new(),
                });
            }
            let tail_positions: Vec<usize> =
                (count * n..tau).map(|j| (p + j) % tau).collect();
            if inst.kind != Kind::Tsp {
                inject_unvisited(inst, sol, n, &mut windows, rng);
            }
            Ok((
                windows,
                Leftover {
                    head_positions: Vec::new(),
                    tail_positions,
                    free_items: Vec::new(),
                },
            ))
        }
        Kind::Cvrp => {
            let tau = sol.order.len();
            if n > tau {
                return Err(UdcError::SizeLimit {
                    op: "extract_subproblems",
                    limit: tau,
                    got: n,
                });
            }
            if p >= tau {
                return Err(UdcError::InvalidParams(format!("offset {p} >= tau {tau}")));
            }
            let count = (tau - p) / n;
            let mut windows = Vec::with_capacity(count);
            for k in 0..count {
                let positions: Vec<usize> = (p + k * n..p + (k + 1) * n).collect();
                let nodes = positions.iter().map(|&q| sol.order[q]).collect();
                windows.push(RawWindow {
                    index: k,
                    positions,
                    nodes,
                    extra: Vec::new(),
                });
            }
            Ok((
                windows,
                Leftover {
                    head_positions: (0..p).collect(),
                    tail_positions: (p + count * n..tau).collect(),
                    free_items: Vec::new(),
                },
            ))
        }
        Kind::Kp => {
            if n > inst.n {
                return Err(UdcError::SizeLimit {
                    op: "extract_subproblems",
                    limit: inst.n,
                    got: n,
                });
            }
            let selection = &sol.items;
            let count = (inst.n / n).max(1);
            let chunk_len = if count > 0 { selection.len() / count } else { 0 };
            let p_mod = if selection.is_empty() { 0 } else { p % selection.len() };
            // Rotate the selection so chunks are contiguous slices.
            let rotated: Vec<usize> = (0..selection.len())
                .map(|i| selection[(p_mod + i) % selection.len()])
                .collect();
            let mut selected = vec![false; inst.n];
            for &i in selection {
                selected[i] = true;
            }
            let mut pool: Vec<usize> = (0..inst.n).filter(|&i| !selected[i]).collect();
            shuffle(&mut pool, rng);
            let mut pool_iter = pool.into_iter();
            let mut windows = Vec::with_capacity(count);
            for k in 0..count {
                let chunk: Vec<usize> = rotated[k * chunk_len..(k + 1) * chunk_len].to_vec();
                let mut extra = Vec::new();
                while chunk.len() + extra.len() < n {
                    match pool_iter.next() {
                        Some(i) => extra.push(i),
                        None => break,
                    }
                }
                windows.push(RawWindow {
                    index: k,
                    positions: (k * chunk_len..(k + 1) * chunk_len).collect(),
                    nodes: chunk,
                    extra,
                });
            }
            Ok((
                windows,
                Leftover {
                    head_positions: Vec::new(),
                    tail_positions: Vec::new(),
                    free_items: rotated[count * chunk_len..].to_vec(),
                },
            ))
        }
        Kind::Mis => {
            if n > inst.n {
                return Err(UdcError::SizeLimit {
                    op: "extract_subproblems",
                    limit: inst.n,
                    got: n,
                });
            }
            let mut perm: Vec<usize> = (0..inst.n).collect();
            shuffle(&mut perm, rng);
            let count = inst.n / n;
            let mut windows = Vec::with_capacity(count);
            for k in 0..count {
                windows.push(RawWindow {
                    index: k,
                    positions: Vec::new(),
                    nodes: perm[k * n..(k + 1) * n].to_vec(),
                    extra: Vec::new(),
                });
            }
            Ok((
                windows,
                Leftover {
                    head_positions: Vec::new(),
                    tail_positions: Vec::new(),
                    free_items: perm[count * n..].to_vec(),
                },
            ))
        }
    }
}

fn shuffle<R: Rng + ?Sized>(v: &mut [usize], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Assign each unvisited node to the first window whose segment bounding box
/// contains it, capped at `n` extras per window.
fn inject_unvisited<R: Rng + ?Sized>(
    inst: &Instance,
    sol: &Solution,
    n: usize,
    windows: &mut [RawWindow],
    rng: &mut R,
) {
    let mut visited = vec![false; inst.n];
    for &v in &sol.order {
        visited[v] = true;
    }
    let mut pool: Vec<usize> = (1..inst.n).filter(|&i| !visited[i]).collect();
    shuffle(&mut pool, rng);
    let boxes: Vec<[f64; 4]> = windows
        .iter()
        .map(|w| {
            let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
            for &node in &w.nodes {
                let c = inst.coords[node];
                b[0] = b[0].min(c[0]);
                b[1] = b[1].max(c[0]);
                b[2] = b[2].min(c[1]);
                b[3] = b[3].max(c[1]);
            }
            b
        })
        .collect();
    for c in pool {
        let xy = inst.coords[c];
        for (w, b) in windows.iter_mut().zip(&boxes) {
            if w.extra.len() >= n {
                continue;
            }
            if xy[0] >= b[0] && xy[0] <= b[1] && xy[1] >= b[2] && xy[1] <= b[3] {
                w.extra.push(c);
                break;
            }
        }
    }
}

/// Budgets for the window pieces of one CVRP route. The route's slack
/// (capacity minus its load) is shared among its window pieces in proportion
/// to their residuals, so piece budgets plus fixed-piece loads sum to
/// exactly the capacity; simultaneous merges on both sides of a boundary
/// can then never overfill the route. With a single window piece this
/// reduces to the plain residual bound, with two pieces to the normalized
/// residual pair.
fn cvrp_piece_budget(
    inst: &Instance,
    sol: &Solution,
    region_of: &[Option<usize>],
    pos: usize,
) -> f64 {
    // Bounds of the parent route containing `pos`.
    let mut rs = pos;
    while rs > 0 && !sol.flags[rs - 1] {
        rs -= 1;
    }
    let mut re = pos;
    while !sol.flags[re] {
        re += 1;
    }
    // Decompose into maximal same-region pieces.
    let mut pieces: Vec<(Option<usize>, f64)> = Vec::new();
    let mut q = rs;
    while q <= re {
        let region = region_of[q];
        let mut load = 0.0;
        while q <= re && region_of[q] == region {
            load += inst.demands[sol.order[q]];
            q += 1;
        }
        pieces.push((region, load));
    }
    let total: f64 = pieces.iter().map(|&(_, l)| l).sum();
    let slack = inst.capacity - total;
    let denom: f64 = pieces
        .iter()
        .filter(|(r, _)| r.is_some())
        .map(|&(_, l)| inst.capacity - l)
        .sum();
    let own = pieces
        .iter()
        .find(|(r, _)| *r == region_of[pos])
        .map(|&(_, l)| l)
        .unwrap();
    if denom <= 0.0 {
        own
    } else {
        own + slack * (inst.capacity - own) / denom
    }
}

/// Forbidden members per MIS window: a member is closed off when a neighbor
/// outside the window is selected, or when a neighbor belongs to a
/// lower-indexed window and is itself still free there (that window keeps
/// the right to select it). Computed as a cascade so parent-selected
/// members are never forbidden.
fn mis_forbidden_cascade(
    inst: &Instance,
    sol: &Solution,
    windows: &[RawWindow],
) -> Vec<Vec<bool>> {
    let mut selected = vec![false; inst.n];
    for &v in &sol.items {
        selected[v] = true;
    }
    let mut window_of = vec![usize::MAX; inst.n];
    for (k, w) in windows.iter().enumerate() {
        for &g in &w.nodes {
            window_of[g] = k;
        }
    }
    // free_lower[g]: node g sits in an earlier window and is selectable there.
    let mut free_lower = vec![false; inst.n];
    let mut out = Vec::with_capacity(windows.len());
    for (k, w) in windows.iter().enumerate() {
        let mut forbidden = vec![false; w.nodes.len()];
        for (l, &g) in w.nodes.iter().enumerate() {
            for &nb in &inst.adjacency[g] {
                let outside = window_of[nb] != k;
                if outside && (selected[nb] || free_lower[nb]) {
                    forbidden[l] = true;
                    break;
                }
            }
        }
        for (l, &g) in w.nodes.iter().enumerate() {
            if !forbidden[l] {
                free_lower[g] = true;
            }
        }
        out.push(forbidden);
    }
    out
}

/// Dispatch the constraints that make any feasible sub-solution merge back
/// into a feasible parent, and build the model payload. The full window
/// list provides the stage context (capacity splitting across boundaries,
/// MIS cross-window freezes). `margin` grants recycled global slack
/// (OP length, KP capacity) to window `k`.
pub fn prepare_constraints(
    inst: &Instance,
    sol: &Solution,
    windows: &[RawWindow],
    k: usize,
    margin: f64,
) -> Result<SubProblem> {
    let window = &windows[k];
    match inst.kind {
        Kind::Tsp => {
            let parent_coords: Vec<[f64; 2]> =
                window.nodes.iter().map(|&v| inst.coords[v]).collect();
            let (coords, transform) = normalize_coords(&parent_coords)?;
            let wl = window.nodes.len();
            let mut sub = SubProblem {
                kind: inst.kind,
                cand_nodes: window.nodes.clone(),
                window_len: wl,
                coords,
                parent_coords,
                transform,
                start_pin: 0,
                end_pin: wl - 1,
                constraints: SubConstraints::Tsp,
                original: SubSolution::bare((0..wl).collect(), vec![], vec![]),
            };
            finish_original(&mut sub);
            Ok(sub)
        }
        Kind::Cvrp => {
            let a = window.positions[0];
            let b = *window.positions.last().unwrap();
            let mut region_of = vec![None; sol.order.len()];
            for (wi, w) in windows.iter().enumerate() {
                for &q in &w.positions {
                    region_of[q] = Some(wi);
                }
            }
            let joins_up = a > 0 && !sol.flags[a - 1];
            let frozen_last_flag = sol.flags[b];
            let joins_down = !frozen_last_flag;
            let first_budget = if joins_up {
                cvrp_piece_budget(inst, sol, &region_of, a)
            } else {
                inst.capacity
            };
            let last_budget = if joins_down {
                cvrp_piece_budget(inst, sol, &region_of, b)
            } else {
                inst.capacity
            };
            // A break-free sub-route joins both sides at once. When the head
            // and tail pieces are the same parent-route piece its budget
            // applies directly; otherwise the two boundary budgets must
            // jointly leave room within one vehicle.
            let has_internal_flag = window.positions[..window.positions.len() - 1]
                .iter()
                .any(|&q| sol.flags[q]);
            let single_budget = if !has_internal_flag && joins_up && joins_down {
                first_budget
            } else {
                first_budget + last_budget - inst.capacity
            };
            let pair_features = (
                first_budget / (first_budget + last_budget),
                last_budget / (first_budget + last_budget),
            );
            let wl = window.nodes.len();
            let mut parent_coords: Vec<[f64; 2]> =
                window.nodes.iter().map(|&v| inst.coords[v]).collect();
            parent_coords.push(inst.coords[0]); // the depot candidate
            let (coords, transform) = normalize_coords(&parent_coords)?;
            let demands: Vec<f64> = window
                .nodes
                .iter()
                .map(|&v| inst.demands[v])
                .chain(std::iter::once(0.0))
                .collect();
            let mut cand_nodes = window.nodes.clone();
            cand_nodes.push(0);
            let original_flags: Vec<bool> =
                window.positions.iter().map(|&q| sol.flags[q]).collect();
            let mut sub = SubProblem {
                kind: inst.kind,
                cand_nodes,
                window_len: wl,
                coords,
                parent_coords,
                transform,
                start_pin: 0,
                end_pin: wl - 1,
                constraints: SubConstraints::Cvrp {
                    capacity: inst.capacity,
                    first_budget,
                    last_budget,
                    single_budget,
                    frozen_last_flag,
                    pair_features,
                    demands,
                },
                original: SubSolution::bare((0..wl).collect(), original_flags, vec![]),
            };
            finish_original(&mut sub);
            Ok(sub)
        }
        Kind::Op | Kind::Pctsp => {
            let wl = window.nodes.len();
            let cand_nodes: Vec<usize> = window
                .nodes
                .iter()
                .chain(window.extra.iter())
                .copied()
                .collect();
            let parent_coords: Vec<[f64; 2]> =
                cand_nodes.iter().map(|&v| inst.coords[v]).collect();
            // OP and PCTSP skip the coordinate transform.
            let coords = parent_coords.clone();
            let depot_local = cand_nodes.iter().position(|&v| v == 0);
            let required = depot_local.filter(|&d| d != 0 && d != wl - 1);
            let seg_len: f64 = window
                .nodes
                .windows(2)
                .map(|w| dist(inst.coords[w[0]], inst.coords[w[1]]))
                .sum();
            let constraints = if inst.kind == Kind::Op {
                SubConstraints::Op {
                    budget: seg_len + margin,
                    prizes: cand_nodes.iter().map(|&v| inst.prizes[v]).collect(),
                    required,
                }
            } else {
                let prizes_raw: Vec<f64> =
                    cand_nodes.iter().map(|&v| inst.prizes[v]).collect();
                let base: f64 = prizes_raw[..wl].iter().sum();
                let norm = if base > 0.0 { 1.0 / base } else { 1.0 };
                let prizes_norm: Vec<f64> = prizes_raw.iter().map(|&x| x * norm).collect();
                let prize_bound: f64 = prizes_norm[..wl].iter().sum();
                SubConstraints::Pctsp {
                    prize_bound,
                    prizes_norm,
                    prizes_raw,
                    penalties: cand_nodes.iter().map(|&v| inst.penalties[v]).collect(),
                    required,
                }
            };
            let mut sub = SubProblem {
                kind: inst.kind,
                cand_nodes,
                window_len: wl,
                coords,
                parent_coords,
                transform: Transform::identity(),
                start_pin: 0,
                end_pin: wl - 1,
                constraints,
                original: SubSolution::bare((0..wl).collect(), vec![], vec![]),
            };
            finish_original(&mut sub);
            Ok(sub)
        }
        Kind::Kp => {
            let cand_nodes: Vec<usize> = window
                .nodes
                .iter()
                .chain(window.extra.iter())
                .copied()
                .collect();
            let weights: Vec<f64> = cand_nodes.iter().map(|&v| inst.weights[v]).collect();
            let chunk_weight: f64 = weights[..window.nodes.len()].iter().sum();
            let mut sub = SubProblem {
                kind: inst.kind,
                cand_nodes: cand_nodes.clone(),
                window_len: window.nodes.len(),
                coords: vec![],
                parent_coords: vec![],
                transform: Transform::identity(),
                start_pin: 0,
                end_pin: 0,
                constraints: SubConstraints::Kp {
                    capacity: chunk_weight + margin,
                    values: cand_nodes.iter().map(|&v| inst.values[v]).collect(),
                    weights,
                },
                original: SubSolution::bare(vec![], vec![], (0..window.nodes.len()).collect()),
            };
            finish_original(&mut sub);
            Ok(sub)
        }
        Kind::Mis => {
            let members = &window.nodes;
            let local_of: std::collections::HashMap<usize, usize> = members
                .iter()
                .enumerate()
                .map(|(l, &g)| (g, l))
                .collect();
            let mut adjacency = vec![Vec::new(); members.len()];
            for (l, &g) in members.iter().enumerate() {
                for &nb in &inst.adjacency[g] {
                    if let Some(&ln) = local_of.get(&nb) {
                        adjacency[l].push(ln);
                    }
                }
            }
            let forbidden = mis_forbidden_cascade(inst, sol, windows)
                .swap_remove(k);
            let originally_selected: Vec<usize> = members
                .iter()
                .enumerate()
                .filter(|(_, &g)| sol.items.contains(&g))
                .map(|(l, _)| l)
                .collect();
            let mut sub = SubProblem {
                kind: inst.kind,
                cand_nodes: members.clone(),
                window_len: members.len(),
                coords: vec![],
                parent_coords: vec![],
                transform: Transform::identity(),
                start_pin: 0,
                end_pin: 0,
                constraints: SubConstraints::Mis {
                    adjacency,
                    forbidden,
                },
                original: SubSolution::bare(vec![], vec![], originally_selected),
            };
            finish_original(&mut sub);
            Ok(sub)
        }
    }
}

fn finish_original(sub: &mut SubProblem) {
    sub.original.objective = super::sub_objective(sub, &sub.original);
    sub.original.choices = if sub.original.items.is_empty() {
        sub.original.order.clone()
    } else {
        sub.original.items.clone()
    };
}
