//! Shared test oracles, independent of the interior-point code path.
//!
//! `vertex_enum_lp` solves small LPs by enumerating basic solutions:
//! every choice of active rows that yields a square nonsingular system
//! is a candidate vertex, and the best feasible vertex is optimal for a
//! bounded LP over a pointed polyhedron. Callers fold variable bounds
//! into inequality rows so the feasible set is a polytope.

#![allow(dead_code)]

use dp_bilevel::solver::ConvexProgram;
use nalgebra::{DMatrix, DVector};

/// Outcome of the enumeration oracle.
#[derive(Debug, Clone)]
pub enum VertexLp {
    Optimal { objective: f64, x: Vec<f64> },
    Infeasible,
}

/// min c.x s.t. a_eq x = b_eq, a_in x <= b_in, by vertex enumeration.
pub fn vertex_enum_lp(
    c: &[f64],
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
    a_in: &[Vec<f64>],
    b_in: &[f64],
) -> VertexLp {
    let n = c.len();
    let me = a_eq.len();
    assert!(me <= n, "more equalities than variables");
    let k = n - me;
    let mi = a_in.len();
    assert!(k <= mi, "polytope cannot have a vertex: too few rows");

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        // Square system: all equalities plus the chosen active rows.
        let mut mat = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for (r, row) in a_eq.iter().enumerate() {
            for j in 0..n {
                mat[(r, j)] = row[j];
            }
            rhs[r] = b_eq[r];
        }
        for (slot, &ridx) in combo.iter().enumerate() {
            for j in 0..n {
                mat[(me + slot, j)] = a_in[ridx][j];
            }
            rhs[me + slot] = b_in[ridx];
        }
        if let Some(x) = mat.lu().solve(&rhs) {
            if x.iter().all(|v| v.is_finite()) && feasible(&x, a_eq, b_eq, a_in, b_in) {
                let obj = c.iter().zip(x.iter()).map(|(ci, xi)| ci * xi).sum::<f64>();
                let better = match &best {
                    Some((b, _)) => obj < *b,
                    None => true,
                };
                if better {
                    best = Some((obj, x.iter().copied().collect()));
                }
            }
        }
        if !advance(&mut combo, mi) {
            break;
        }
    }
    match best {
        Some((objective, x)) => VertexLp::Optimal { objective, x },
        None => VertexLp::Infeasible,
    }
}

fn feasible(
    x: &DVector<f64>,
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
    a_in: &[Vec<f64>],
    b_in: &[f64],
) -> bool {
    let tol = 1e-9;
    for (row, b) in a_eq.iter().zip(b_eq) {
        let v: f64 = row.iter().zip(x.iter()).map(|(a, xi)| a * xi).sum();
        if (v - b).abs() > tol * (1.0 + b.abs()) {
            return false;
        }
    }
    for (row, b) in a_in.iter().zip(b_in) {
        let v: f64 = row.iter().zip(x.iter()).map(|(a, xi)| a * xi).sum();
        if v - b > tol * (1.0 + b.abs()) {
            return false;
        }
    }
    true
}

/// Next k-combination of indices below `limit`; false when exhausted.
fn advance(combo: &mut [usize], limit: usize) -> bool {
    let k = combo.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] + 1 <= limit - (k - i) {
            combo[i] += 1;
            for j in (i + 1)..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Fold box bounds into inequality rows (finite bounds only).
pub fn fold_bounds(
    n: usize,
    lb: &[f64],
    ub: &[f64],
    a_in: &mut Vec<Vec<f64>>,
    b_in: &mut Vec<f64>,
) {
    for i in 0..n {
        if lb[i].is_finite() {
            let mut row = vec![0.0; n];
            row[i] = -1.0;
            a_in.push(row);
            b_in.push(-lb[i]);
        }
        if ub[i].is_finite() {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            a_in.push(row);
            b_in.push(ub[i]);
        }
    }
}

/// Merit-order cost of the one-bus two-generator fixture:
/// G1 (cost 1, cap 1), G2 (cost 2, cap 1). None when d exceeds capacity
/// or is negative.
pub fn onebus_cost(d: f64) -> Option<f64> {
    if !(0.0..=2.0).contains(&d) {
        return None;
    }
    if d <= 1.0 {
        Some(d)
    } else {
        Some(1.0 + 2.0 * (d - 1.0))
    }
}

/// Follower cost of the tri-3bus fixture by vertex enumeration over the
/// reduced dispatch variables.
///
/// The triangle has equal susceptances, so the flow on line (i,j) is
/// (p_i - p_j)/3 for net injections p. With generators g = (g1,g2,g3)
/// at cost (1,2,3), caps 1, and line limit 0.4 the reduced LP is
/// min 1 g1 + 2 g2 + 3 g3 s.t. sum g = d2 + d3, 0 <= g <= 1,
/// |p_i - p_j| <= 1.2 with p = (g1, g2 - d2, g3 - d3).
pub fn tri3bus_cost(d2: f64, d3: f64) -> Option<f64> {
    let c = [1.0, 2.0, 3.0];
    let a_eq = vec![vec![1.0, 1.0, 1.0]];
    let b_eq = vec![d2 + d3];
    let mut a_in: Vec<Vec<f64>> = Vec::new();
    let mut b_in: Vec<f64> = Vec::new();
    fold_bounds(3, &[0.0; 3], &[1.0; 3], &mut a_in, &mut b_in);
    // |p_i - p_j| <= 3 * limit, p = (g1, g2 - d2, g3 - d3).
    // g_i - g_j <= lim + (off_j - off_i) with off = (0, -d2, -d3).
    let lim = 3.0 * 0.4;
    let pairs = [(0usize, 1usize, -d2), (0, 2, -d3), (1, 2, d2 - d3)];
    for &(i, j, offset) in &pairs {
        let mut row = vec![0.0; 3];
        row[i] = 1.0;
        row[j] = -1.0;
        a_in.push(row.clone());
        b_in.push(lim + offset);
        let mut neg = vec![0.0; 3];
        neg[i] = -1.0;
        neg[j] = 1.0;
        a_in.push(neg);
        b_in.push(lim - offset);
    }
    match vertex_enum_lp(&c, &a_eq, &b_eq, &a_in, &b_in) {
        VertexLp::Optimal { objective, .. } => Some(objective),
        VertexLp::Infeasible => None,
    }
}

/// Random LP with a strictly feasible interior point and a bounding
/// box, suitable for the enumeration oracle.
pub fn random_lp(rng: &mut TestRng) -> ConvexProgram {
    let n = 2 + rng.below(5); // 2..=6
    let mut p = ConvexProgram::new(n);
    for i in 0..n {
        p.lb[i] = -1.0 - rng.uniform(0.0, 1.0);
        p.ub[i] = 1.0 + rng.uniform(0.0, 1.0);
        p.c[i] = rng.uniform(-1.0, 1.0);
    }
    let x0: Vec<f64> = (0..n).map(|i| 0.5 * (p.lb[i] + p.ub[i])).collect();
    let mi = rng.below(9); // 0..=8
    let mut a_in = DMatrix::zeros(mi, n);
    let mut b_in = DVector::zeros(mi);
    for k in 0..mi {
        let mut dot = 0.0;
        for j in 0..n {
            let a = rng.uniform(-1.0, 1.0);
            a_in[(k, j)] = a;
            dot += a * x0[j];
        }
        b_in[k] = dot + rng.uniform(0.1, 1.0);
    }
    p.a_in = a_in;
    p.b_in = b_in;
    let me = if n > 2 { rng.below(2) } else { 0 };
    let mut a_eq = DMatrix::zeros(me, n);
    let mut b_eq = DVector::zeros(me);
    for k in 0..me {
        let mut dot = 0.0;
        for j in 0..n {
            let a = rng.uniform(-1.0, 1.0);
            a_eq[(k, j)] = a;
            dot += a * x0[j];
        }
        b_eq[k] = dot;
    }
    p.a_eq = a_eq;
    p.b_eq = b_eq;
    p
}

/// Run the enumeration oracle on a boxed `ConvexProgram` LP.
pub fn oracle_for(p: &ConvexProgram) -> VertexLp {
    let n = p.n;
    let c: Vec<f64> = p.c.iter().copied().collect();
    let a_eq: Vec<Vec<f64>> = (0..p.a_eq.nrows())
        .map(|k| (0..n).map(|j| p.a_eq[(k, j)]).collect())
        .collect();
    let b_eq: Vec<f64> = p.b_eq.iter().copied().collect();
    let mut a_in: Vec<Vec<f64>> = (0..p.a_in.nrows())
        .map(|k| (0..n).map(|j| p.a_in[(k, j)]).collect())
        .collect();
    let mut b_in: Vec<f64> = p.b_in.iter().copied().collect();
    let lb: Vec<f64> = p.lb.iter().copied().collect();
    let ub: Vec<f64> = p.ub.iter().copied().collect();
    fold_bounds(n, &lb, &ub, &mut a_in, &mut b_in);
    vertex_enum_lp(&c, &a_eq, &b_eq, &a_in, &b_in)
}

/// Smallest squared distance from `d_tilde` to a lattice demand (step
/// `h`) whose one-bus follower cost lies inside the band, searching out
/// to `r_max_sq`. The point `d_tilde` itself is also considered, so a
/// band-feasible noisy input reports zero.
pub fn grid_oracle_onebus(
    d_tilde: f64,
    f_tilde: f64,
    beta: f64,
    r_max_sq: f64,
    h: f64,
) -> Option<f64> {
    let in_band =
        |d: f64| onebus_cost(d).is_some_and(|c| (c - f_tilde).abs() <= beta + 1e-12);
    if in_band(d_tilde) {
        return Some(0.0);
    }
    let r = r_max_sq.sqrt();
    let k_lo = ((d_tilde - r) / h).floor() as i64;
    let k_hi = ((d_tilde + r) / h).ceil() as i64;
    let mut best: Option<f64> = None;
    for k in k_lo..=k_hi {
        let d = k as f64 * h;
        if in_band(d) {
            let dist = (d - d_tilde) * (d - d_tilde);
            if best.is_none_or(|b| dist < b) {
                best = Some(dist);
            }
        }
    }
    best
}

/// Two-dimensional lattice oracle for the triangle fixture: offsets of
/// step `h` around `d_tilde`, scanned in ascending distance with early
/// exit at the first band-feasible point.
pub fn grid_oracle_tri3bus(
    d_tilde: [f64; 2],
    f_tilde: f64,
    beta: f64,
    r_max_sq: f64,
    h: f64,
) -> Option<f64> {
    let in_band = |a: f64, b: f64| -> bool {
        // Cheap necessary condition first: every generator costs at
        // least 1 and at most 3 per unit, so O is within [T, 3T] for
        // total demand T >= 0.
        let total = a + b;
        if total > f_tilde + beta + 1e-12 || 3.0 * total < f_tilde - beta - 1e-12 {
            return false;
        }
        tri3bus_cost(a, b).is_some_and(|c| (c - f_tilde).abs() <= beta + 1e-12)
    };
    if in_band(d_tilde[0], d_tilde[1]) {
        return Some(0.0);
    }
    let k = (r_max_sq.sqrt() / h).ceil() as i64;
    let mut offsets: Vec<(i64, i64, i64)> = Vec::with_capacity(((2 * k + 1) * (2 * k + 1)) as usize);
    for i in -k..=k {
        for j in -k..=k {
            offsets.push((i * i + j * j, i, j));
        }
    }
    offsets.sort_unstable_by_key(|o| o.0);
    for (q, i, j) in offsets {
        let dist_sq = q as f64 * h * h;
        if dist_sq > r_max_sq {
            break;
        }
        if in_band(d_tilde[0] + i as f64 * h, d_tilde[1] + j as f64 * h) {
            return Some(dist_sq);
        }
    }
    None
}

/// Simple deterministic uniform stream for test data generation.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.wrapping_mul(2685821657736338717).wrapping_add(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        // xorshift64*
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(2685821657736338717)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * 2f64.powi(-53);
        lo + u * (hi - lo)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}
