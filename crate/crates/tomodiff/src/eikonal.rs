//! Fast marching solver for the eikonal equation c * |grad T| = 1 with a
//! recorded causal acceptance order, and the measurement forward map.
//!
//! First-order Godunov upwind stencil: at each node, the accepted horizontal
//! and vertical neighbors with the smaller value feed the quadratic update
//! (T-a)+^2 + (T-b)+^2 = (h/c)^2. The pop order and the per-node stencil are
//! recorded so the adjoint solve can run the exact transpose sweep.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::Array2;

use crate::error::{Result, TomoError};
use crate::grid::{GridCoord, MeasurementMatrix, SourceReceiverConfig, TravelTimeField, VelocityField, C_MIN};

/// Radius (in units of h) of the disk initialized exactly around the source.
/// Mitigates the point-source singularity of the upwind scheme.
const INIT_RADIUS_CELLS: f64 = 3.0;

/// Upwind neighbors a node used when it was accepted, with the Godunov
/// weights p = (T - T_h)+ and q = (T - T_v)+.
#[derive(Debug, Clone, Copy)]
pub struct NodeStencil {
    pub h_from: Option<u32>,
    pub v_from: Option<u32>,
    pub p: f64,
    pub q: f64,
}

impl NodeStencil {
    fn none() -> Self {
        NodeStencil {
            h_from: None,
            v_from: None,
            p: 0.0,
            q: 0.0,
        }
    }
}

/// Heap acceptance order of one fast-marching solve plus everything the
/// reverse (adjoint) sweep needs: per-node stencils, the exactly-initialized
/// source disk with distances, and the source node.
#[derive(Debug, Clone)]
pub struct CausalOrder {
    /// Node indices in the order they were finalized (source disk first).
    pub order: Vec<u32>,
    /// Stencil per node index; disk nodes carry `NodeStencil::none()`.
    pub stencils: Vec<NodeStencil>,
    /// (node index, Euclidean distance to source) for the initialized disk.
    pub init_disk: Vec<(u32, f64)>,
    pub source: u32,
}

#[derive(PartialEq)]
struct HeapEntry {
    time: f64,
    node: u32,
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on time; ties broken by node index for determinism
        other
            .time
            .partial_cmp(&self.time)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Godunov update at one node from candidate upwind values `a` (horizontal)
/// and `b` (vertical); `f = h / c`. Returns (T, p, q, use_a, use_b).
fn godunov_update(a: Option<f64>, b: Option<f64>, f: f64) -> Option<(f64, f64, f64, bool, bool)> {
    match (a, b) {
        (None, None) => None,
        (Some(a), None) => Some((a + f, f, 0.0, true, false)),
        (None, Some(b)) => Some((b + f, 0.0, f, false, true)),
        (Some(a), Some(b)) => {
            if (a - b).abs() >= f {
                // one-sided from the smaller neighbor
                if a <= b {
                    Some((a + f, f, 0.0, true, false))
                } else {
                    Some((b + f, 0.0, f, false, true))
                }
            } else {
                let s = a + b;
                let t = 0.5 * (s + (2.0 * f * f - (a - b) * (a - b)).sqrt());
                Some((t, t - a, t - b, true, true))
            }
        }
    }
}

struct Solver<'a> {
    n: usize,
    h: f64,
    c: &'a Array2<f64>,
    time: Vec<f64>,
    accepted: Vec<bool>,
}

impl<'a> Solver<'a> {
    /// Best accepted neighbor in the horizontal and vertical directions.
    fn upwind_candidates(&self, idx: usize) -> (Option<(f64, u32)>, Option<(f64, u32)>) {
        let n = self.n;
        let (row, col) = (idx / n, idx % n);
        let mut best_h: Option<(f64, u32)> = None;
        let mut best_v: Option<(f64, u32)> = None;
        let consider = |nb: usize, slot: &mut Option<(f64, u32)>| {
            if self.accepted[nb] {
                let t = self.time[nb];
                if slot.map_or(true, |(bt, _)| t < bt) {
                    *slot = Some((t, nb as u32));
                }
            }
        };
        if col > 0 {
            consider(idx - 1, &mut best_h);
        }
        if col + 1 < n {
            consider(idx + 1, &mut best_h);
        }
        if row > 0 {
            consider(idx - n, &mut best_v);
        }
        if row + 1 < n {
            consider(idx + n, &mut best_v);
        }
        (best_h, best_v)
    }

    fn update_value(&self, idx: usize) -> Option<(f64, NodeStencil)> {
        let (bh, bv) = self.upwind_candidates(idx);
        let f = self.h / self.c[[idx / self.n, idx % self.n]];
        godunov_update(bh.map(|x| x.0), bv.map(|x| x.0), f).map(|(t, p, q, ua, ub)| {
            (
                t,
                NodeStencil {
                    h_from: if ua { bh.map(|x| x.1) } else { None },
                    v_from: if ub { bv.map(|x| x.1) } else { None },
                    p: if ua { p } else { 0.0 },
                    q: if ub { q } else { 0.0 },
                },
            )
        })
    }
}

/// Solve the eikonal equation from a point source by fast marching.
///
/// Nodes within 3h of the source are initialized to distance / c(source);
/// the rest march outward in causal order. Velocities are clamped to C_MIN
/// from below before solving.
pub fn solve_eikonal(c: &VelocityField, source: GridCoord) -> Result<(TravelTimeField, CausalOrder)> {
    let grid = c.grid();
    let n = grid.n();
    if !grid.contains(source) {
        return Err(TomoError::invalid(format!(
            "source ({}, {}) off an n={} grid",
            source.row, source.col, n
        )));
    }
    if c.values().iter().any(|&v| v <= 0.0) {
        return Err(TomoError::invalid("velocity must be strictly positive"));
    }
    let clamped = c.values().mapv(|v| v.max(C_MIN));
    let h = grid.h();
    let d = grid.node_count();

    let mut solver = Solver {
        n,
        h,
        c: &clamped,
        time: vec![f64::INFINITY; d],
        accepted: vec![false; d],
    };
    let mut stencils = vec![NodeStencil::none(); d];
    let mut order = Vec::with_capacity(d);
    let mut init_disk = Vec::new();

    // exact initialization inside the source disk, at the source speed
    let c_src = clamped[[source.row, source.col]];
    let radius = INIT_RADIUS_CELLS * h;
    let reach = INIT_RADIUS_CELLS as isize;
    let mut disk = Vec::new();
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let row = source.row as isize + dr;
            let col = source.col as isize + dc;
            if row < 0 || col < 0 || row >= n as isize || col >= n as isize {
                continue;
            }
            let dist = h * ((dr * dr + dc * dc) as f64).sqrt();
            if dist <= radius + 1e-12 {
                disk.push((row as usize * n + col as usize, dist));
            }
        }
    }
    disk.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    for &(idx, dist) in &disk {
        solver.time[idx] = dist / c_src;
        solver.accepted[idx] = true;
        order.push(idx as u32);
        init_disk.push((idx as u32, dist));
    }

    let mut heap = BinaryHeap::with_capacity(4 * n);
    let push_neighbors = |solver: &Solver, heap: &mut BinaryHeap<HeapEntry>, idx: usize| {
        let (row, col) = (idx / n, idx % n);
        let mut try_push = |nb: usize| {
            if !solver.accepted[nb] {
                if let Some((t, _)) = solver.update_value(nb) {
                    if t < solver.time[nb] {
                        heap.push(HeapEntry {
                            time: t,
                            node: nb as u32,
                        });
                    }
                }
            }
        };
        if col > 0 {
            try_push(idx - 1);
        }
        if col + 1 < n {
            try_push(idx + 1);
        }
        if row > 0 {
            try_push(idx - n);
        }
        if row + 1 < n {
            try_push(idx + n);
        }
    };

    for &(idx, _) in &disk {
        push_neighbors(&solver, &mut heap, idx);
    }

    while let Some(HeapEntry { time, node }) = heap.pop() {
        let idx = node as usize;
        if solver.accepted[idx] {
            continue; // stale entry
        }
        // Recompute from the final accepted set: by causality this reproduces
        // the minimal pending value and yields the definitive stencil.
        let (t, stencil) = solver
            .update_value(idx)
            .expect("popped node must have an accepted neighbor");
        debug_assert!((t - time).abs() <= 1e-9 * (1.0 + time.abs()) || t <= time);
        solver.time[idx] = t;
        solver.accepted[idx] = true;
        stencils[idx] = stencil;
        order.push(node);
        push_neighbors(&solver, &mut heap, idx);
    }

    if solver.time.iter().any(|t| !t.is_finite()) {
        return Err(TomoError::numerical("fast marching left unreached nodes"));
    }

    // The exactly-initialized disk is accepted out of heap order, so sort the
    // full sequence by value. Every stencil child is strictly later than its
    // parents (updates add at least h/c), so the reverse sweep stays causal.
    order.sort_by(|&a, &b| {
        solver.time[a as usize]
            .partial_cmp(&solver.time[b as usize])
            .unwrap()
            .then(a.cmp(&b))
    });

    let values = Array2::from_shape_vec((n, n), solver.time).expect("shape");
    Ok((
        TravelTimeField {
            grid,
            values,
            source,
        },
        CausalOrder {
            order,
            stencils,
            init_disk,
            source: grid.idx(source) as u32,
        },
    ))
}

/// Discrete forward operator: column s holds the travel times from
/// transmitter s restricted to the receiver nodes. Noise-free.
pub fn forward_map(c: &VelocityField, config: &SourceReceiverConfig) -> Result<MeasurementMatrix> {
    if config.grid_n != c.grid().n() {
        return Err(TomoError::invalid(format!(
            "config for n={} applied to n={} field",
            config.grid_n,
            c.grid().n()
        )));
    }
    let (m, n_tx) = (config.n_rx(), config.n_tx());
    let mut values = Array2::zeros((m, n_tx));
    for (s, &tx) in config.transmitters.iter().enumerate() {
        let (tt, _) = solve_eikonal(c, tx)?;
        for (r, &rx) in config.receivers.iter().enumerate() {
            values[[r, s]] = tt.values[[rx.row, rx.col]];
        }
    }
    MeasurementMatrix::new(
        values,
        (0..m as u32).collect(),
        (0..n_tx as u32).collect(),
    )
}
