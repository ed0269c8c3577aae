//! Brute-force reference solvers for tiny instances.
//!
//! These deliberately share nothing with the mirror-descent path: channels
//! are enumerated on a barycentric grid over each row simplex, objectives
//! are evaluated with plain loops, and the optional polish is a projected
//! coordinate/segment descent. Because the design problems are convex, the
//! polish converges to the global optimum from any feasible grid point, so
//! the grid only needs to be fine enough to land in a feasible region.
//!
//! The search space is `p(u|y)`, capped at 6 free parameters.

use ndarray::Array2;
use rand_core::{RngCore, SeedableRng};

use crate::instance::{Coupling, ProblemInstance};
use crate::prob::Channel;
use crate::{Error, Result, LN_2, SUPPORT_ETA};

const FREE_PARAM_CAP: usize = 6;
const REFINE_SEED: u64 = 0x6f72_6163_6c65; // "oracle"

/// Grid density and polish switch for the brute-force search.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Barycentric steps per simplex row.
    pub grid_resolution: usize,
    /// Multi-start local polish from the best grid points.
    pub refine: bool,
}

impl OracleConfig {
    pub fn new(grid_resolution: usize, refine: bool) -> Result<Self> {
        if grid_resolution < 10 {
            return Err(Error::Invalid(format!(
                "grid resolution must be at least 10, got {grid_resolution}"
            )));
        }
        Ok(Self {
            grid_resolution,
            refine,
        })
    }

    /// Spec defaults: 200 steps for 2x2 problems, 40 for anything larger.
    pub fn default_for(n_y: usize, n_u: usize) -> Self {
        let free = n_y * (n_u - 1);
        Self {
            grid_resolution: if free <= 2 { 200 } else { 40 },
            refine: true,
        }
    }
}

/// Plain-array view of an instance for the brute-force evaluators.
struct RawInstance {
    n_y: usize,
    n_u: usize,
    /// Effective joint over (S,Y): the explicit joint, or diag(p_Y) for
    /// deterministic couplings.
    w: Array2<f64>,
    p_first: Vec<f64>,
    /// Chained conditional entropies for deterministic couplings.
    h_y: Option<Vec<f64>>,
    h_s: f64,
    /// Distortion matrices with budgets; `d[0].1` is overridden per call.
    d: Vec<(Array2<f64>, f64)>,
    p_y: Vec<f64>,
}

impl RawInstance {
    fn build(instance: &ProblemInstance) -> Result<Self> {
        let n_u = instance.u_size();
        let p_y: Vec<f64> = instance.y_pmf().probs().to_vec();
        let n_y = p_y.len();
        let (w, p_first, h_y) = match instance.coupling() {
            Coupling::Joint(j) => {
                let w = j.probs().clone();
                let p_s: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
                (w, p_s, None)
            }
            Coupling::DeterministicY {
                y_pmf,
                cond_entropy_bits,
            } => {
                let mut w = Array2::zeros((n_y, n_y));
                for (y, &p) in y_pmf.probs().iter().enumerate() {
                    w[[y, y]] = p;
                }
                (w, y_pmf.probs().to_vec(), Some(cond_entropy_bits.clone()))
            }
        };
        let d = instance
            .distortions()
            .iter()
            .map(|c| (c.matrix.clone(), c.budget))
            .collect();
        Ok(Self {
            n_y,
            n_u,
            w,
            p_first,
            h_y,
            h_s: instance.s_entropy_bits(),
            d,
            p_y,
        })
    }

    fn distortion(&self, k: usize, x: &[f64]) -> f64 {
        let (matrix, _) = &self.d[k];
        let mut total = 0.0;
        for y in 0..self.n_y {
            for u in 0..self.n_u {
                total += self.p_y[y] * matrix[[y, u]] * x[y * self.n_u + u];
            }
        }
        total
    }

    fn budgets_ok(&self, x: &[f64]) -> bool {
        self.d
            .iter()
            .enumerate()
            .all(|(k, (_, budget))| self.distortion(k, x) <= budget + 1e-12)
    }

    /// Induced joint over (S,U) as a dense column-major scratch.
    fn induced(&self, x: &[f64], a: &mut [f64], c: &mut [f64]) {
        let n_s = self.w.nrows();
        a.iter_mut().for_each(|v| *v = 0.0);
        c.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..n_s {
            for y in 0..self.n_y {
                let w = self.w[[s, y]];
                if w == 0.0 {
                    continue;
                }
                for u in 0..self.n_u {
                    a[s * self.n_u + u] += w * x[y * self.n_u + u];
                }
            }
        }
        for s in 0..n_s {
            for u in 0..self.n_u {
                c[u] += a[s * self.n_u + u];
            }
        }
    }

    fn mi_bits(&self, x: &[f64]) -> f64 {
        let n_s = self.w.nrows();
        let mut a = vec![0.0; n_s * self.n_u];
        let mut c = vec![0.0; self.n_u];
        self.induced(x, &mut a, &mut c);
        let mut total = 0.0;
        for s in 0..n_s {
            let ps = self.p_first[s];
            if ps <= 0.0 {
                continue;
            }
            for u in 0..self.n_u {
                let v = a[s * self.n_u + u];
                if v > 0.0 {
                    total += v * (v / (ps * c[u])).ln();
                }
            }
        }
        (total / LN_2).max(0.0)
    }

    /// Per-output leakages `H(S) - H(S|U=u)`; `None` for unsupported
    /// outputs.
    fn per_output_leaks(&self, x: &[f64]) -> Vec<Option<f64>> {
        let n_s = self.w.nrows();
        let mut a = vec![0.0; n_s * self.n_u];
        let mut c = vec![0.0; self.n_u];
        self.induced(x, &mut a, &mut c);
        (0..self.n_u)
            .map(|u| {
                if c[u] < SUPPORT_ETA {
                    return None;
                }
                let mut h = 0.0;
                let mut chained = 0.0;
                for s in 0..n_s {
                    let p = a[s * self.n_u + u] / c[u];
                    if p > 0.0 {
                        h -= p * p.ln();
                        if let Some(h_y) = &self.h_y {
                            chained += p * h_y[s];
                        }
                    }
                }
                Some(self.h_s - (h / LN_2 + chained))
            })
            .collect()
    }

    /// Worst per-output leakage `max_u H(S) - H(S|U=u)` over supported
    /// outputs.
    fn max_leak_bits(&self, x: &[f64]) -> f64 {
        self.per_output_leaks(x)
            .into_iter()
            .flatten()
            .fold(0.0, f64::max)
    }

    /// Soft maximum of the per-output leakages at temperature `tau`:
    /// smooth, convex, and within `tau * log2(|U|)` above the true max.
    fn softmax_leak_bits(&self, x: &[f64], tau: f64) -> f64 {
        let leaks: Vec<f64> = self.per_output_leaks(x).into_iter().flatten().collect();
        if leaks.is_empty() {
            return 0.0;
        }
        let m = leaks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + tau * leaks.iter().map(|&l| ((l - m) / tau).exp()).sum::<f64>().ln()
    }

    fn channel(&self, instance: &ProblemInstance, x: &[f64]) -> Result<Channel> {
        let mut rows = Array2::zeros((self.n_y, self.n_u));
        for y in 0..self.n_y {
            for u in 0..self.n_u {
                rows[[y, u]] = x[y * self.n_u + u].max(0.0);
            }
        }
        for mut row in rows.rows_mut() {
            let s: f64 = row.sum();
            row /= s;
        }
        Channel::from_array(instance.y_alphabet(), instance.u_alphabet().clone(), rows)
    }
}

/// All compositions of `total` into `parts` non-negative integers, scaled to
/// the simplex.
fn compositions(total: usize, parts: usize) -> Vec<Vec<f64>> {
    fn rec(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 0..=total {
            prefix.push(first);
            rec(total - first, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut raw = Vec::new();
    rec(total, parts, &mut Vec::new(), &mut raw);
    raw.into_iter()
        .map(|v| v.into_iter().map(|k| k as f64 / total as f64).collect())
        .collect()
}

/// Keep the K best (value, point) pairs seen so far.
struct TopK {
    k: usize,
    items: Vec<(f64, Vec<f64>)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, items: Vec::new() }
    }

    fn push(&mut self, value: f64, point: &[f64]) {
        if self.items.len() == self.k && value >= self.items.last().unwrap().0 {
            return;
        }
        let pos = self
            .items
            .iter()
            .position(|(v, _)| value < *v)
            .unwrap_or(self.items.len());
        self.items.insert(pos, (value, point.to_vec()));
        if self.items.len() > self.k {
            self.items.pop();
        }
    }
}

/// Grid-enumerate feasible channels, then optionally polish the best few by
/// projected segment descent. `steepest`, when given, contributes one extra
/// search direction per polish sweep (used to follow the creases of
/// max-of-convex objectives, where random directions rarely improve).
/// Returns the best (value, point) found.
fn search(
    n_rows: usize,
    n_u: usize,
    resolution: usize,
    refine: bool,
    objective: &dyn Fn(&[f64]) -> f64,
    feasible: &dyn Fn(&[f64]) -> bool,
    extra_starts: &[Vec<f64>],
    steepest: Option<&dyn Fn(&[f64]) -> Vec<Vec<f64>>>,
) -> Option<(f64, Vec<f64>)> {
    let cands = compositions(resolution, n_u);
    let mut top = TopK::new(10);

    let mut idx = vec![0usize; n_rows];
    let mut x = vec![0.0; n_rows * n_u];
    'enumerate: loop {
        for (r, &i) in idx.iter().enumerate() {
            x[r * n_u..(r + 1) * n_u].copy_from_slice(&cands[i]);
        }
        if feasible(&x) {
            top.push(objective(&x), &x);
        }
        let mut r = 0;
        loop {
            idx[r] += 1;
            if idx[r] < cands.len() {
                break;
            }
            idx[r] = 0;
            r += 1;
            if r == n_rows {
                break 'enumerate;
            }
        }
    }

    for start in extra_starts {
        if feasible(start) {
            top.push(objective(start), start);
        }
    }
    if top.items.is_empty() {
        return None;
    }
    if !refine {
        return Some(top.items[0].clone());
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for (_, start) in &top.items {
        let mut x = start.clone();
        let value = polish(n_rows, n_u, objective, feasible, steepest, &mut x);
        if best.as_ref().is_none_or(|(bv, _)| value < *bv) {
            best = Some((value, x));
        }
    }
    best
}

/// Projected segment descent: coordinate-pair moves within each row plus
/// random zero-sum directions, each searched by bisecting the feasible
/// sub-interval and ternary-searching the (convex) objective along it.
fn polish(
    n_rows: usize,
    n_u: usize,
    objective: &dyn Fn(&[f64]) -> f64,
    feasible: &dyn Fn(&[f64]) -> bool,
    steepest: Option<&dyn Fn(&[f64]) -> Vec<Vec<f64>>>,
    x: &mut Vec<f64>,
) -> f64 {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(REFINE_SEED);
    let mut current = objective(x);
    let mut scratch = vec![0.0; x.len()];

    let line_search = |x: &mut Vec<f64>,
                           current: &mut f64,
                           dir: &[f64],
                           t_max: f64,
                           scratch: &mut Vec<f64>|
     -> f64 {
        if t_max <= 1e-15 {
            return 0.0;
        }
        let eval_point = |t: f64, scratch: &mut Vec<f64>| {
            for (o, (xv, dv)) in scratch.iter_mut().zip(x.iter().zip(dir)) {
                *o = (xv + t * dv).max(0.0);
            }
        };
        // feasible sub-interval [0, t_feas]: constraints are convex along the
        // segment and hold at t = 0
        let mut t_feas = t_max;
        eval_point(t_max, scratch);
        if !feasible(scratch) {
            let (mut lo, mut hi) = (0.0f64, t_max);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                eval_point(mid, scratch);
                if feasible(scratch) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            t_feas = lo;
        }
        if t_feas <= 1e-15 {
            return 0.0;
        }
        // ternary search the convex objective on [0, t_feas]
        let (mut lo, mut hi) = (0.0f64, t_feas);
        for _ in 0..70 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            eval_point(m1, scratch);
            let f1 = objective(scratch);
            eval_point(m2, scratch);
            let f2 = objective(scratch);
            if f1 <= f2 {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let t_best = 0.5 * (lo + hi);
        eval_point(t_best, scratch);
        let f_best = objective(scratch);
        if f_best < *current - 1e-15 && feasible(scratch) {
            let gain = *current - f_best;
            x.copy_from_slice(scratch);
            *current = f_best;
            gain
        } else {
            0.0
        }
    };

    let mut dir = vec![0.0; x.len()];
    for _ in 0..300 {
        let mut sweep_gain = 0.0;

        // mass transfers within a row
        for r in 0..n_rows {
            for u_from in 0..n_u {
                for u_to in 0..n_u {
                    if u_to == u_from {
                        continue;
                    }
                    let avail = x[r * n_u + u_from];
                    if avail <= 1e-15 {
                        continue;
                    }
                    dir.iter_mut().for_each(|v| *v = 0.0);
                    dir[r * n_u + u_to] = 1.0;
                    dir[r * n_u + u_from] = -1.0;
                    sweep_gain += line_search(x, &mut current, &dir, avail, &mut scratch);
                }
            }
        }

        // random zero-sum directions across all rows
        for _ in 0..(8 * n_rows) {
            let mut norm2 = 0.0;
            for r in 0..n_rows {
                let mut mean = 0.0;
                for u in 0..n_u {
                    let v = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
                    dir[r * n_u + u] = v;
                    mean += v;
                }
                mean /= n_u as f64;
                for u in 0..n_u {
                    dir[r * n_u + u] -= mean;
                    norm2 += dir[r * n_u + u] * dir[r * n_u + u];
                }
            }
            if norm2 < 1e-12 {
                continue;
            }
            let inv = norm2.sqrt().recip();
            dir.iter_mut().for_each(|v| *v *= inv);
            // largest step keeping all coordinates non-negative
            let mut t_max = f64::INFINITY;
            for (xv, dv) in x.iter().zip(&dir) {
                if *dv < -1e-12 {
                    t_max = t_max.min(-xv / dv);
                }
            }
            if !t_max.is_finite() {
                continue;
            }
            sweep_gain += line_search(x, &mut current, &dir, t_max, &mut scratch);
        }

        // provided descent directions (crease-following for max objectives)
        if let Some(provider) = steepest {
            for d in provider(x) {
                let norm2: f64 = d.iter().map(|v| v * v).sum();
                if norm2 <= 1e-16 {
                    continue;
                }
                let inv = norm2.sqrt().recip();
                for (slot, v) in dir.iter_mut().zip(&d) {
                    *slot = v * inv;
                }
                let mut t_max = f64::INFINITY;
                for (xv, dv) in x.iter().zip(&dir) {
                    if *dv < -1e-12 {
                        t_max = t_max.min(-xv / dv);
                    }
                }
                if t_max.is_finite() {
                    sweep_gain += line_search(x, &mut current, &dir, t_max, &mut scratch);
                }
            }
        }

        if sweep_gain < 1e-10 {
            break;
        }
    }
    current
}

/// Steepest-descent direction for the max-leakage objective: the
/// finite-difference gradient of a tight soft-max, projected to per-row
/// zero sums and onto the tangent planes of any active distortion budgets.
/// At a crease the soft-max gradient blends the active branches, and the
/// tangent projection keeps the direction from immediately leaving the
/// budget boundary — both are moves a single-branch or random probe misses.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean projection of a vector onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let n = v.len();
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut theta = 0.0;
    let mut k = 0;
    for (i, &s) in sorted.iter().enumerate() {
        acc += s;
        let t = (acc - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
            k = i + 1;
        }
    }
    if k == 0 {
        let uniform = 1.0 / n as f64;
        v.iter_mut().for_each(|x| *x = uniform);
        return;
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Steepest-descent directions for the max-leakage objective, in the style
/// of eps-active minimax descent: take finite-difference gradients of every
/// branch within a window of the max, project them (per-row zero sums,
/// restricted to a coordinate face), and find the minimum-norm element of
/// their convex hull combined with the cone of active budget gradients. Its
/// negation is a guaranteed descent direction for the max function whenever
/// the norm is not already ~0. Random or single-branch probes almost never
/// find these directions once several branches tie.
///
/// Returns one direction per activity window, each in a face-confined and a
/// face-escaping variant.
fn fd_minimax_descent(raw: &RawInstance, x: &[f64]) -> Vec<Vec<f64>> {
    const H: f64 = 1e-6;
    let coords = x.len();
    let face: Vec<bool> = x.iter().map(|&v| v > 1e-12).collect();
    let leaks = raw.per_output_leaks(x);
    let m = leaks.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Vec::new();
    }

    // numeric gradient of one output's leakage
    let branch_grad = |u: usize| -> Vec<f64> {
        let mut g = vec![0.0; coords];
        let mut probe = x.to_vec();
        for c in 0..coords {
            let orig = probe[c];
            probe[c] = orig + H;
            let fp = raw.per_output_leaks(&probe)[u].unwrap_or(0.0);
            probe[c] = (orig - H).max(0.0);
            let fm = raw.per_output_leaks(&probe)[u].unwrap_or(0.0);
            let width = orig + H - probe[c];
            probe[c] = orig;
            g[c] = (fp - fm) / width;
        }
        g
    };

    let budget_grads: Vec<Vec<f64>> = raw
        .d
        .iter()
        .enumerate()
        .filter(|(k, (_, budget))| raw.distortion(*k, x) >= budget - 1e-9)
        .map(|(_, (matrix, _))| {
            let mut grad = vec![0.0; coords];
            for y in 0..raw.n_y {
                for u in 0..raw.n_u {
                    grad[y * raw.n_u + u] = raw.p_y[y] * matrix[[y, u]];
                }
            }
            grad
        })
        .collect();

    let row_project = |v: &mut [f64], support: &[bool]| {
        for r in 0..raw.n_y {
            let row = &mut v[r * raw.n_u..(r + 1) * raw.n_u];
            let idx: Vec<usize> = (0..raw.n_u).filter(|&u| support[r * raw.n_u + u]).collect();
            if idx.is_empty() {
                continue;
            }
            let mean: f64 = idx.iter().map(|&u| row[u]).sum::<f64>() / idx.len() as f64;
            for u in 0..raw.n_u {
                row[u] = if support[r * raw.n_u + u] {
                    row[u] - mean
                } else {
                    0.0
                };
            }
        }
    };

    let everything = vec![true; coords];
    let mut directions = Vec::new();
    for window in [3e-2, 3e-3, 3e-4] {
        let active: Vec<usize> = leaks
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_some_and(|v| v >= m - window))
            .map(|(u, _)| u)
            .collect();
        if active.is_empty() {
            continue;
        }
        let raw_branch: Vec<Vec<f64>> = active.iter().map(|&u| branch_grad(u)).collect();

        for support in [&face, &everything] {
            let mut branch: Vec<Vec<f64>> = raw_branch.clone();
            // cone members: active budget gradients, plus the bound normals
            // of zero coordinates when the direction may leave the face
            // (they encode the one-sided constraint d_c >= 0 exactly, where
            // clipping after the fact would break the descent guarantee)
            let mut cone: Vec<Vec<f64>> = budget_grads.clone();
            if support.iter().all(|&s| s) {
                for c in 0..coords {
                    if !face[c] {
                        let mut normal = vec![0.0; coords];
                        normal[c] = -1.0;
                        cone.push(normal);
                    }
                }
            }
            for g in branch.iter_mut().chain(cone.iter_mut()) {
                row_project(g, support);
            }

            // minimum-norm element of conv(branch) + cone(rest) by
            // projected gradient on the weights
            let nb = branch.len();
            let nk = cone.len();
            let mut lam = vec![1.0 / nb as f64; nb];
            let mut mu = vec![0.0; nk];
            let combo = |lam: &[f64], mu: &[f64]| -> Vec<f64> {
                let mut v = vec![0.0; coords];
                for (l, g) in lam.iter().zip(&branch) {
                    for (vv, gv) in v.iter_mut().zip(g) {
                        *vv += l * gv;
                    }
                }
                for (m_w, g) in mu.iter().zip(&cone) {
                    for (vv, gv) in v.iter_mut().zip(g) {
                        *vv += m_w * gv;
                    }
                }
                v
            };
            let scale: f64 = branch
                .iter()
                .chain(cone.iter())
                .map(|g| g.iter().map(|v| v * v).sum::<f64>())
                .fold(0.0, f64::max)
                .max(1e-12);
            let step = 0.5 / scale;
            for _ in 0..600 {
                let v = combo(&lam, &mu);
                for (l, g) in lam.iter_mut().zip(&branch) {
                    *l -= step * 2.0 * dot(g, &v);
                }
                project_simplex(&mut lam);
                for (m_w, g) in mu.iter_mut().zip(&cone) {
                    *m_w = (*m_w - step * 2.0 * dot(g, &v)).max(0.0);
                }
            }
            let mut d = combo(&lam, &mu);
            d.iter_mut().for_each(|v| *v = -*v);
            repair_direction(raw, x, &face, &mut d);
            directions.push(d);
        }
    }
    directions
}

/// Make a candidate direction usable from a boundary point by alternating
/// exact projections: non-negative on zero coordinates, row sums zero
/// (repaired over free coordinates only), and non-increasing along every
/// active budget. The QP output carries numeric dust in all three, and at an
/// exactly-tight budget any positive drift collapses the feasible segment to
/// nothing.
fn repair_direction(raw: &RawInstance, x: &[f64], face: &[bool], d: &mut [f64]) {
    let active: Vec<Vec<f64>> = raw
        .d
        .iter()
        .enumerate()
        .filter(|(k, (_, budget))| raw.distortion(*k, x) >= budget - 1e-9)
        .map(|(_, (matrix, _))| {
            let mut g = vec![0.0; x.len()];
            for y in 0..raw.n_y {
                for u in 0..raw.n_u {
                    g[y * raw.n_u + u] = raw.p_y[y] * matrix[[y, u]];
                }
            }
            // project to row-zero-sums so subtracting it preserves them
            for r in 0..raw.n_y {
                let row = &mut g[r * raw.n_u..(r + 1) * raw.n_u];
                let mean: f64 = row.iter().sum::<f64>() / raw.n_u as f64;
                row.iter_mut().for_each(|v| *v -= mean);
            }
            g
        })
        .collect();

    for _ in 0..6 {
        for g in &active {
            let norm2 = dot(g, g);
            if norm2 < 1e-18 {
                continue;
            }
            let drift = dot(g, d);
            if drift > 0.0 {
                for (dv, gv) in d.iter_mut().zip(g) {
                    *dv -= drift / norm2 * gv;
                }
            }
        }
        for c in 0..d.len() {
            if !face[c] && d[c] < 0.0 {
                d[c] = 0.0;
            }
        }
        for r in 0..raw.n_y {
            let row = &mut d[r * raw.n_u..(r + 1) * raw.n_u];
            let excess: f64 = row.iter().sum();
            let free_idx: Vec<usize> = (0..raw.n_u)
                .filter(|&u| face[r * raw.n_u + u])
                .collect();
            if free_idx.is_empty() {
                continue;
            }
            let share = excess / free_idx.len() as f64;
            for &u in &free_idx {
                row[u] -= share;
            }
        }
    }
}

fn check_cap(raw: &RawInstance) -> Result<()> {
    let free = raw.n_y * (raw.n_u - 1);
    if free > FREE_PARAM_CAP {
        return Err(Error::DimensionCap {
            free,
            cap: FREE_PARAM_CAP,
        });
    }
    Ok(())
}

fn standard_starts(raw: &RawInstance) -> Vec<Vec<f64>> {
    let mut starts = Vec::new();
    let uniform = vec![1.0 / raw.n_u as f64; raw.n_y * raw.n_u];
    starts.push(uniform);
    for u in 0..raw.n_u {
        let mut v = vec![0.0; raw.n_y * raw.n_u];
        for y in 0..raw.n_y {
            v[y * raw.n_u + u] = 1.0;
        }
        starts.push(v);
    }
    // per-row least-distortion vertex
    let mut v = vec![0.0; raw.n_y * raw.n_u];
    for y in 0..raw.n_y {
        let mut best = 0;
        for u in 1..raw.n_u {
            if raw.d[0].0[[y, u]] < raw.d[0].0[[y, best]] {
                best = u;
            }
        }
        v[y * raw.n_u + best] = 1.0;
    }
    starts.push(v);
    starts
}

/// Grid-enumerate channels meeting the budgets and minimize `I(S;U)`.
pub fn brute_force_min_leakage(
    instance: &ProblemInstance,
    delta: f64,
    cfg: &OracleConfig,
) -> Result<(f64, Channel)> {
    let mut raw = RawInstance::build(instance)?;
    check_cap(&raw)?;
    raw.d[0].1 = delta;
    let objective = |x: &[f64]| raw.mi_bits(x);
    let feasible = |x: &[f64]| raw.budgets_ok(x);
    match search(
        raw.n_y,
        raw.n_u,
        cfg.grid_resolution,
        cfg.refine,
        &objective,
        &feasible,
        &standard_starts(&raw),
        None,
    ) {
        Some((value, x)) => Ok((value, raw.channel(instance, &x)?)),
        None => Err(Error::Infeasible {
            index: 0,
            budget: delta,
            min_achievable: instance.min_achievable_distortion(0),
        }),
    }
}

/// Grid-enumerate channels meeting the budgets and minimize the maximum
/// per-output leakage.
///
/// The exact max-of-convex objective has creases where segment descent can
/// stall, so the polish anneals through soft-max smoothings (each smooth and
/// convex) before a final pass on the exact objective.
pub fn brute_force_minmax(
    instance: &ProblemInstance,
    delta: f64,
    cfg: &OracleConfig,
) -> Result<(f64, Channel)> {
    let mut raw = RawInstance::build(instance)?;
    check_cap(&raw)?;
    raw.d[0].1 = delta;
    let objective = |x: &[f64]| raw.max_leak_bits(x);
    let feasible = |x: &[f64]| raw.budgets_ok(x);
    let steepest = |x: &[f64]| fd_minimax_descent(&raw, x);
    let found = search(
        raw.n_y,
        raw.n_u,
        cfg.grid_resolution,
        cfg.refine,
        &objective,
        &feasible,
        &standard_starts(&raw),
        Some(&steepest),
    );
    let Some((mut value, mut x)) = found else {
        return Err(Error::Infeasible {
            index: 0,
            budget: delta,
            min_achievable: instance.min_achievable_distortion(0),
        });
    };

    if cfg.refine {
        // Inversion tightening: segment descent stalls at the creases of a
        // max objective, but the inverse question — what distortion does a
        // given leakage cap cost — has a linear objective and is robust.
        // The minimum distortion is non-increasing in the cap, so bisect
        // the cap down to where the budget stops being attainable.
        let (mut lo, mut hi) = (0.0f64, value);
        while hi - lo > 2e-4 {
            let mid = 0.5 * (lo + hi);
            match min_distortion_at_cap(&raw, mid, Some(&x)) {
                Some((dist, point)) if dist <= delta + 1e-9 => {
                    hi = mid;
                    x = point;
                }
                _ => lo = mid,
            }
        }
        value = raw.max_leak_bits(&x).min(value);
    }
    Ok((value, raw.channel(instance, &x)?))
}

/// Polish-only minimum-distortion search at a leakage cap, from the always
/// cap-feasible uniform channel plus optional extra starts. The feasible set
/// is convex and the objective linear, so segment descent from a feasible
/// point reaches the global minimum without a grid.
fn min_distortion_at_cap(
    raw: &RawInstance,
    epsilon_bits: f64,
    extra: Option<&Vec<f64>>,
) -> Option<(f64, Vec<f64>)> {
    let objective = |x: &[f64]| raw.distortion(0, x);
    let feasible = |x: &[f64]| {
        raw.max_leak_bits(x) <= epsilon_bits + 1e-9
            && raw
                .d
                .iter()
                .enumerate()
                .skip(1)
                .all(|(k, (_, budget))| raw.distortion(k, x) <= budget + 1e-12)
    };
    let mut starts: Vec<Vec<f64>> = vec![vec![1.0 / raw.n_u as f64; raw.n_y * raw.n_u]];
    if let Some(e) = extra {
        starts.push(e.clone());
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in &starts {
        if !feasible(start) {
            continue;
        }
        let mut x = start.clone();
        let value = polish(raw.n_y, raw.n_u, &objective, &feasible, None, &mut x);
        if best.as_ref().is_none_or(|(bv, _)| value < *bv) {
            best = Some((value, x));
        }
    }
    best
}

/// Minimize expected distortion over channels whose maximum per-output
/// leakage stays at or below `epsilon_bits`. Companion oracle for the
/// leakage-capped direction of the minmax program.
pub fn brute_force_min_distortion(
    instance: &ProblemInstance,
    epsilon_bits: f64,
    cfg: &OracleConfig,
) -> Result<(f64, Channel)> {
    let raw = RawInstance::build(instance)?;
    check_cap(&raw)?;
    let objective = |x: &[f64]| raw.distortion(0, x);
    let feasible = |x: &[f64]| {
        raw.max_leak_bits(x) <= epsilon_bits + 1e-9
            && raw
                .d
                .iter()
                .enumerate()
                .skip(1)
                .all(|(k, (_, budget))| raw.distortion(k, x) <= budget + 1e-12)
    };
    match search(
        raw.n_y,
        raw.n_u,
        cfg.grid_resolution,
        cfg.refine,
        &objective,
        &feasible,
        &standard_starts(&raw),
        None,
    ) {
        Some((value, x)) => Ok((value, raw.channel(instance, &x)?)),
        None => Err(Error::Invalid(format!(
            "no channel on the grid meets the leakage cap {epsilon_bits}"
        ))),
    }
}
