//! Accelerated dual projection solver for the isotropic TV proximal map.
//!
//! The discrete TV is the average of the four one-sided isotropic stencils
//! (forward/backward differences in x and y). Each stencil carries its own
//! dual field, bounded pointwise by the unit disk. The eight symmetries of the
//! square map iterates onto iterates bit for bit: stencil contributions are
//! combined as
//! `(FF + BB) + (FB + BF)`, and every global sum that influences control flow
//! is an order-free fixed-point sum.

use super::Boundary;

/// Stencil order: (x direction, y direction) with F = forward, B = backward.
const FF: usize = 0;
const FB: usize = 1;
const BF: usize = 2;
const BB: usize = 3;

/// Dual record of a missing neighbour at a Neumann border.
const ZERO: [f64; 8] = [0.0; 8];

/// One-sided differences at a pixel: forward and backward in x and y.
#[derive(Clone, Copy)]
pub(crate) struct Diffs {
    fx: f64,
    fy: f64,
    bx: f64,
    by: f64,
}

impl Diffs {
    #[inline(always)]
    fn stencils(self) -> [(f64, f64); 4] {
        [(self.fx, self.fy), (self.fx, self.by), (self.bx, self.fy), (self.bx, self.by)]
    }
}

/// Pixel grid with its boundary rule. Periodic grids wrap; Neumann grids have
/// zero differences across the border (replication).
pub(crate) struct Grid {
    pub(crate) n: usize,
    width: usize,
    height: usize,
    periodic: bool,
}

impl Grid {
    pub(crate) fn new(width: usize, height: usize, boundary: Boundary) -> Self {
        Grid {
            n: width * height,
            width,
            height,
            periodic: boundary == Boundary::Periodic,
        }
    }

    #[inline(always)]
    fn prev(&self, i: usize, len: usize) -> Option<usize> {
        if i > 0 {
            Some(i - 1)
        } else if self.periodic {
            Some(len - 1)
        } else {
            None
        }
    }

    #[inline(always)]
    fn next(&self, i: usize, len: usize) -> Option<usize> {
        if i + 1 < len {
            Some(i + 1)
        } else if self.periodic {
            Some(0)
        } else {
            None
        }
    }

    /// Calls `visit(i, diffs)` for every pixel in row-major order.
    #[inline(always)]
    pub(crate) fn for_each_diff(&self, u: &[f64], mut visit: impl FnMut(usize, Diffs)) {
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            let row = &u[y * w..(y + 1) * w];
            let up = self.prev(y, h).map(|r| &u[r * w..(r + 1) * w]);
            let down = self.next(y, h).map(|r| &u[r * w..(r + 1) * w]);
            for (x, &c) in row.iter().enumerate() {
                let d = Diffs {
                    fx: self.next(x, w).map_or(0.0, |xr| row[xr] - c),
                    fy: down.map_or(0.0, |r| r[x] - c),
                    bx: self.prev(x, w).map_or(0.0, |xl| c - row[xl]),
                    by: up.map_or(0.0, |r| c - r[x]),
                };
                visit(y * w + x, d);
            }
        }
    }

    /// Per-pixel TV density `|grad u|` averaged over the four stencils.
    pub(crate) fn tv_densities(&self, u: &[f64], out: &mut [f64]) {
        self.for_each_diff(u, |i, d| {
            let m = d.stencils().map(|(ax, ay)| (ax * ax + ay * ay).sqrt());
            out[i] = 0.25 * ((m[FF] + m[BB]) + (m[FB] + m[BF]));
        });
    }
}

/// Dual fields of the four stencils, one record per pixel laid out as
/// `[x_FF, y_FF, x_FB, y_FB, x_BF, y_BF, x_BB, y_BB]`.
#[derive(Clone)]
pub(crate) struct DualField {
    v: Vec<[f64; 8]>,
}

impl DualField {
    pub(crate) fn zeros(n: usize) -> Self {
        DualField { v: vec![[0.0; 8]; n] }
    }
}

/// Adjoint of the stacked stencil gradients (a negative divergence).
fn adjoint(grid: &Grid, p: &DualField, out: &mut [f64]) {
    let (w, h) = (grid.width, grid.height);
    for y in 0..h {
        let row = &p.v[y * w..(y + 1) * w];
        let up = grid.prev(y, h).map(|r| &p.v[r * w..(r + 1) * w]);
        let down = grid.next(y, h).map(|r| &p.v[r * w..(r + 1) * w]);
        let out_row = &mut out[y * w..(y + 1) * w];
        for (x, (c, o)) in row.iter().zip(out_row.iter_mut()).enumerate() {
            let l = grid.prev(x, w).map_or(&ZERO, |xl| &row[xl]);
            let r = grid.next(x, w).map_or(&ZERO, |xr| &row[xr]);
            let u = up.map_or(&ZERO, |rw| &rw[x]);
            let d = down.map_or(&ZERO, |rw| &rw[x]);
            // forward stencil in a direction: p[prev] - p[i]; backward: p[i] - p[next]
            let a_ff = (l[0] - c[0]) + (u[1] - c[1]);
            let a_fb = (l[2] - c[2]) + (c[3] - d[3]);
            let a_bf = (c[4] - r[4]) + (u[5] - c[5]);
            let a_bb = (c[6] - r[6]) + (c[7] - d[7]);
            *o = (a_ff + a_bb) + (a_fb + a_bf);
        }
    }
}

/// Sum whose value depends only on the multiset of inputs.
///
/// Every term is truncated onto a common fixed-point grid (2^-60 of the largest
/// magnitude) and accumulated exactly in 128-bit integers, so any permutation
/// of the inputs yields the same bits. Used for the sums that steer control
/// flow, which keeps the solver exactly equivariant under grid symmetries.
pub(crate) fn order_free_sum(values: &[f64]) -> f64 {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        return values.iter().sum();
    }
    let exp = max.log2().ceil() as i32;
    let scale = 2f64.powi(60 - exp);
    let acc: i128 = values.iter().map(|v| (v * scale) as i64 as i128).sum();
    acc as f64 / scale
}

pub(crate) struct Workspace {
    adj: Vec<f64>,
    u: Vec<f64>,
    scratch: Vec<f64>,
    lin: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(n: usize) -> Self {
        Workspace {
            adj: vec![0.0; n],
            u: vec![0.0; n],
            scratch: vec![0.0; n],
            lin: vec![0.0; n],
        }
    }
}

pub(crate) struct SolveStats {
    pub iterations: usize,
    pub gap: f64,
    pub converged: bool,
}

/// Primal point `u = f - (tau/4) * A p`.
fn primal(grid: &Grid, f: &[f64], tau: f64, p: &DualField, adj: &mut [f64], u: &mut [f64]) {
    adjoint(grid, p, adj);
    let c = 0.25 * tau;
    for i in 0..grid.n {
        u[i] = f[i] - c * adj[i];
    }
}

/// Duality gap `TV(u) - <grad u, p>` and dual objective at the primal point of `p`
/// (which must already be in `ws.u`).
fn gap_at(grid: &Grid, f: &[f64], tau: f64, p: &DualField, ws: &mut Workspace) -> (f64, f64) {
    let inv2tau = 0.5 / tau;
    let Workspace { u, scratch, lin, .. } = ws;
    grid.for_each_diff(u, |i, d| {
        let mut m = [0.0; 4];
        let mut l = [0.0; 4];
        for (s, (ax, ay)) in d.stencils().into_iter().enumerate() {
            let (qx, qy) = (p.v[i][2 * s], p.v[i][2 * s + 1]);
            let inner = ax * qx + ay * qy;
            m[s] = (ax * ax + ay * ay).sqrt() - inner;
            l[s] = inner;
        }
        scratch[i] = 0.25 * ((m[FF] + m[BB]) + (m[FB] + m[BF]));
        let e = u[i] - f[i];
        lin[i] = e * e * inv2tau + 0.25 * ((l[FF] + l[BB]) + (l[FB] + l[BF]));
    });
    (order_free_sum(scratch), order_free_sum(lin))
}

/// How a solve ended.
pub(crate) enum Solution {
    /// `out` holds the primal point of the best checked iterate.
    Iterate,
    /// The constant image with value `mean` is certified optimal to tolerance.
    Constant,
}

/// Minimises `|u - f|^2 / (2 tau) + TV(u)` starting from the dual point `p`.
///
/// Accelerated projected gradient ascent on the dual with step `1 / (8 tau)`
/// and adaptive momentum restart. Every ten iterations the duality gap of
/// the current iterate is checked, together with the gap of the constant
/// image `mean` against the same dual bound. On return `p` holds the final
/// dual iterate.
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve(
    grid: &Grid,
    f: &[f64],
    mean: f64,
    tau: f64,
    threshold: f64,
    max_iter: usize,
    p: &mut DualField,
    ws: &mut Workspace,
    out: &mut [f64],
) -> (SolveStats, Solution) {
    const CHECK_EVERY: usize = 10;
    let step = 1.0 / (8.0 * tau);
    let inv2tau = 0.5 / tau;
    let const_fid: Vec<f64> = f.iter().map(|v| (v - mean) * (v - mean) * inv2tau).collect();
    let const_primal = order_free_sum(&const_fid);
    let mut best_gap = f64::INFINITY;

    // Returns Some(solution) once converged.
    let mut check = |p: &DualField, ws: &mut Workspace, out: &mut [f64]| -> Option<Solution> {
        primal(grid, f, tau, p, &mut ws.adj, &mut ws.u);
        let (gap, dual_obj) = gap_at(grid, f, tau, p, ws);
        let const_gap = const_primal - dual_obj;
        if const_gap <= threshold && const_gap <= gap {
            best_gap = const_gap.max(0.0);
            return Some(Solution::Constant);
        }
        if gap < best_gap {
            best_gap = gap;
            out.copy_from_slice(&ws.u);
        }
        (gap <= threshold).then_some(Solution::Iterate)
    };

    if let Some(sol) = check(p, ws, out) {
        let stats = SolveStats { iterations: 0, gap: best_gap, converged: true };
        return (stats, sol);
    }

    let mut y = p.clone();
    let mut t = 1.0f64;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        primal(grid, f, tau, &y, &mut ws.adj, &mut ws.u);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let scratch = &mut ws.scratch;
        grid.for_each_diff(&ws.u, |i, d| {
            let (yi, pi) = (&mut y.v[i], &mut p.v[i]);
            let mut r = [0.0; 4];
            for (s, (ax, ay)) in d.stencils().into_iter().enumerate() {
                let (yx, yy) = (yi[2 * s], yi[2 * s + 1]);
                let (qx, qy) = (yx + ax * step, yy + ay * step);
                // projection onto the unit disk; exact identity inside it
                let inv = 1.0 / (qx * qx + qy * qy).sqrt().max(1.0);
                let (qx, qy) = (qx * inv, qy * inv);
                let (ox, oy) = (pi[2 * s], pi[2 * s + 1]);
                r[s] = (yx - qx) * (qx - ox) + (yy - qy) * (qy - oy);
                yi[2 * s] = qx + beta * (qx - ox);
                yi[2 * s + 1] = qy + beta * (qy - oy);
                pi[2 * s] = qx;
                pi[2 * s + 1] = qy;
            }
            scratch[i] = (r[FF] + r[BB]) + (r[FB] + r[BF]);
        });
        if order_free_sum(&ws.scratch) > 0.0 {
            // momentum points against the ascent direction: restart
            t = 1.0;
            y.v.copy_from_slice(&p.v);
        } else {
            t = t_next;
        }
        if it % CHECK_EVERY == 0 || it == max_iter {
            if let Some(sol) = check(p, ws, out) {
                let stats = SolveStats { iterations: it, gap: best_gap, converged: true };
                return (stats, sol);
            }
        }
    }
    let stats = SolveStats { iterations: it, gap: best_gap, converged: false };
    (stats, Solution::Iterate)
}
