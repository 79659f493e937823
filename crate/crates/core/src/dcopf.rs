//! DC optimal power flow follower with linear generation cost, and the
//! builders for the three subproblems the bilevel engine alternates:
//! the follower O(d), the high point relaxation, and the push-up
//! program over a demand ball.
//!
//! All quantities are per-unit. The demand vector enters the follower
//! only through the right-hand side of the bus balance equalities, so
//! perturbing d never changes the constraint geometry.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::domain::{CostTarget, DemandRole, DemandVector};
use crate::solver::{BallConstraint, ConvexProgram, Sense};

#[derive(Debug, Error)]
pub enum DcopfError {
    #[error("demand vector has {got} entries, network has {expected} demand buses")]
    DemandDimension { expected: usize, got: usize },
    #[error("network: {0}")]
    Network(String),
    #[error("network is not a single connected island")]
    Disconnected,
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

/// A bus; `pd` is the nominal demand in per-unit (0 for no demand).
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub pd: f64,
}

impl Bus {
    pub fn has_demand(&self) -> bool {
        self.pd != 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    /// Linear cost coefficient, $ per per-unit (nonnegative).
    pub cost_c1: f64,
    /// Constant cost term, $.
    pub cost_c0: f64,
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// DC susceptance, per-unit.
    pub susceptance: f64,
    /// Per-unit flow limit; infinite when unlimited.
    pub flow_limit: f64,
}

/// A validated, connected single-island network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub slack_bus: usize,
    pub generators: Vec<Generator>,
    pub lines: Vec<Line>,
}

impl Network {
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        slack_bus: usize,
        generators: Vec<Generator>,
        lines: Vec<Line>,
    ) -> Result<Self, DcopfError> {
        let err = |msg: String| Err(DcopfError::Network(msg));
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return err(format!("base MVA must be positive, got {base_mva}"));
        }
        if buses.is_empty() {
            return err("network has no buses".into());
        }
        let mut seen = std::collections::HashSet::new();
        for b in &buses {
            if !b.pd.is_finite() {
                return err(format!("bus {} has non-finite demand", b.id));
            }
            if !seen.insert(b.id) {
                return err(format!("duplicate bus id {}", b.id));
            }
        }
        if !seen.contains(&slack_bus) {
            return err(format!("slack bus {slack_bus} not present"));
        }
        for (k, g) in generators.iter().enumerate() {
            if !seen.contains(&g.bus) {
                return err(format!("generator {k} references unknown bus {}", g.bus));
            }
            if !(g.p_min.is_finite() && g.p_max.is_finite() && g.p_min <= g.p_max) {
                return err(format!("generator {k} has invalid bounds"));
            }
            if !(g.cost_c1.is_finite() && g.cost_c1 >= 0.0) || !g.cost_c0.is_finite() {
                return err(format!("generator {k} has invalid cost (c1 must be >= 0)"));
            }
        }
        for (k, l) in lines.iter().enumerate() {
            if !seen.contains(&l.from) || !seen.contains(&l.to) {
                return err(format!("line {k} references unknown bus"));
            }
            if l.from == l.to {
                return err(format!("line {k} is a self loop"));
            }
            if !(l.susceptance.is_finite() && l.susceptance != 0.0) {
                return err(format!("line {k} has invalid susceptance"));
            }
            if !(l.flow_limit > 0.0) {
                return err(format!("line {k} has non-positive flow limit"));
            }
        }
        let net = Network {
            base_mva,
            buses,
            slack_bus,
            generators,
            lines,
        };
        if !net.is_connected() {
            return Err(DcopfError::Disconnected);
        }
        Ok(net)
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            let f = self.bus_position(l.from).unwrap();
            let t = self.bus_position(l.to).unwrap();
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut visited = vec![false; n];
        let mut stack = vec![0usize];
        visited[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !visited[j] {
                    visited[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == n
    }

    /// Position of a bus id in the bus list.
    pub fn bus_position(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Positions of demand-bearing buses, in bus order.
    pub fn demand_positions(&self) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.has_demand())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn demand_count(&self) -> usize {
        self.buses.iter().filter(|b| b.has_demand()).count()
    }

    /// The network's own demands as a vector with role `Original`.
    pub fn demand_vector(&self) -> DemandVector {
        let values = self
            .buses
            .iter()
            .filter(|b| b.has_demand())
            .map(|b| b.pd)
            .collect();
        DemandVector::new(values, DemandRole::Original).expect("finite by validation")
    }

    /// Total constant cost term over all generators.
    pub fn cost_offset(&self) -> f64 {
        self.generators.iter().map(|g| g.cost_c0).sum()
    }
}

/// One follower instance: network, cost target and fidelity half-width.
#[derive(Debug, Clone)]
pub struct DcOpfInstance {
    pub network: Network,
    pub cost_target: CostTarget,
    pub beta: f64,
    /// Optional box on the demand variables of the relaxation and
    /// push-up programs; unbounded by default.
    pub demand_bounds: Option<(f64, f64)>,
}

impl DcOpfInstance {
    pub fn new(network: Network, cost_target: CostTarget, beta: f64) -> Result<Self, DcopfError> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(DcopfError::InvalidInstance(format!(
                "beta must be positive, got {beta}"
            )));
        }
        Ok(Self {
            network,
            cost_target,
            beta,
            demand_bounds: None,
        })
    }

    pub fn with_demand_bounds(mut self, lo: f64, hi: f64) -> Result<Self, DcopfError> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(DcopfError::InvalidInstance(format!(
                "demand bounds [{lo}, {hi}] are invalid"
            )));
        }
        self.demand_bounds = Some((lo, hi));
        Ok(self)
    }
}

/// Variable layout of the generated programs.
///
/// Follower: `[p_g (n_gen), theta (n_bus)]`.
/// Relaxation/push-up: `[d (n_demand), p_g (n_gen), theta (n_bus)]`.
#[derive(Debug, Clone, Copy)]
pub struct VarLayout {
    pub n_demand: usize,
    pub n_gen: usize,
    pub n_bus: usize,
}

impl VarLayout {
    pub fn follower(net: &Network) -> Self {
        Self {
            n_demand: 0,
            n_gen: net.generators.len(),
            n_bus: net.buses.len(),
        }
    }

    pub fn extended(net: &Network) -> Self {
        Self {
            n_demand: net.demand_count(),
            n_gen: net.generators.len(),
            n_bus: net.buses.len(),
        }
    }

    pub fn total(&self) -> usize {
        self.n_demand + self.n_gen + self.n_bus
    }

    pub fn gen_offset(&self) -> usize {
        self.n_demand
    }

    pub fn theta_offset(&self) -> usize {
        self.n_demand + self.n_gen
    }

    pub fn demands(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.n_demand).map(|i| x[i]).collect()
    }

    pub fn dispatch(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.n_gen).map(|i| x[self.gen_offset() + i]).collect()
    }
}

/// The monotone proxy: total demand.
pub fn proxy_m(d: &DemandVector) -> f64 {
    d.values().iter().sum()
}

fn check_demand_len(net: &Network, d: &DemandVector) -> Result<(), DcopfError> {
    let expected = net.demand_count();
    if d.len() != expected {
        return Err(DcopfError::DemandDimension {
            expected,
            got: d.len(),
        });
    }
    Ok(())
}

/// Balance equalities and the slack-angle row, shared by all builders.
///
/// When `layout.n_demand > 0` the demand variables get coefficient -1
/// in their bus rows and the right-hand side is zero; otherwise the
/// fixed demand values land on the right-hand side.
fn balance_rows(
    net: &Network,
    layout: &VarLayout,
    fixed_d: Option<&[f64]>,
) -> (DMatrix<f64>, DVector<f64>) {
    let nb = net.buses.len();
    let n = layout.total();
    let mut a = DMatrix::zeros(nb + 1, n);
    let mut b = DVector::zeros(nb + 1);
    let demand_pos = net.demand_positions();

    for (g_idx, g) in net.generators.iter().enumerate() {
        let row = net.bus_position(g.bus).unwrap();
        a[(row, layout.gen_offset() + g_idx)] = 1.0;
    }
    for l in &net.lines {
        let f = net.bus_position(l.from).unwrap();
        let t = net.bus_position(l.to).unwrap();
        let th = layout.theta_offset();
        // Net outflow: the incident side loses b, the opposite side
        // gains b (negative Laplacian times theta).
        a[(f, th + f)] -= l.susceptance;
        a[(f, th + t)] += l.susceptance;
        a[(t, th + t)] -= l.susceptance;
        a[(t, th + f)] += l.susceptance;
    }
    for (d_idx, &bus_row) in demand_pos.iter().enumerate() {
        if layout.n_demand > 0 {
            a[(bus_row, d_idx)] = -1.0;
        } else {
            b[bus_row] = fixed_d.expect("fixed demands for follower")[d_idx];
        }
    }
    // Reference angle.
    let slack_row = net.bus_position(net.slack_bus).unwrap();
    a[(nb, layout.theta_offset() + slack_row)] = 1.0;
    b[nb] = 0.0;
    (a, b)
}

/// Line-limit inequalities and generator bounds, shared by all builders.
fn flow_and_bound_constraints(net: &Network, layout: &VarLayout, program: &mut ConvexProgram) {
    let th = layout.theta_offset();
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for l in &net.lines {
        if !l.flow_limit.is_finite() {
            continue;
        }
        let f = net.bus_position(l.from).unwrap();
        let t = net.bus_position(l.to).unwrap();
        rows.push((
            vec![(th + f, l.susceptance), (th + t, -l.susceptance)],
            l.flow_limit,
        ));
        rows.push((
            vec![(th + f, -l.susceptance), (th + t, l.susceptance)],
            l.flow_limit,
        ));
    }
    let base = program.a_in.nrows();
    let n = layout.total();
    let mut a = DMatrix::zeros(base + rows.len(), n);
    a.view_mut((0, 0), (base, n)).copy_from(&program.a_in);
    let mut b = DVector::zeros(base + rows.len());
    b.rows_mut(0, base).copy_from(&program.b_in);
    for (k, (coefs, rhs)) in rows.iter().enumerate() {
        for &(j, v) in coefs {
            a[(base + k, j)] = v;
        }
        b[base + k] = *rhs;
    }
    program.a_in = a;
    program.b_in = b;

    for (g_idx, g) in net.generators.iter().enumerate() {
        program.lb[layout.gen_offset() + g_idx] = g.p_min;
        program.ub[layout.gen_offset() + g_idx] = g.p_max;
    }
}

/// Cost-band inequalities |f(x) - f_tilde| <= beta (linear cost).
fn cost_band_rows(
    net: &Network,
    layout: &VarLayout,
    inst: &DcOpfInstance,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = layout.total();
    let offset = net.cost_offset();
    let f_tilde = inst.cost_target.f_tilde;
    let mut a = DMatrix::zeros(2, n);
    let mut b = DVector::zeros(2);
    for (g_idx, g) in net.generators.iter().enumerate() {
        a[(0, layout.gen_offset() + g_idx)] = g.cost_c1;
        a[(1, layout.gen_offset() + g_idx)] = -g.cost_c1;
    }
    b[0] = f_tilde + inst.beta - offset;
    b[1] = -(f_tilde - inst.beta - offset);
    (a, b)
}

/// The follower O(d): minimize dispatch cost subject to balance, line
/// limits and generator bounds, at fixed demands.
pub fn build_follower(inst: &DcOpfInstance, d: &DemandVector) -> Result<ConvexProgram, DcopfError> {
    let net = &inst.network;
    check_demand_len(net, d)?;
    let layout = VarLayout::follower(net);
    let mut p = ConvexProgram::new(layout.total());
    for (g_idx, g) in net.generators.iter().enumerate() {
        p.c[layout.gen_offset() + g_idx] = g.cost_c1;
    }
    p.c0 = net.cost_offset();
    let (a, b) = balance_rows(net, &layout, Some(d.values()));
    p.a_eq = a;
    p.b_eq = b;
    flow_and_bound_constraints(net, &layout, &mut p);
    Ok(p)
}

/// The high point relaxation: minimize ||d - d_tilde||^2 over demands
/// that admit any band-feasible dispatch (follower optimality dropped).
pub fn build_hpr(inst: &DcOpfInstance, d_tilde: &DemandVector) -> Result<ConvexProgram, DcopfError> {
    let net = &inst.network;
    check_demand_len(net, d_tilde)?;
    let layout = VarLayout::extended(net);
    let mut p = ConvexProgram::new(layout.total());
    for (i, dt) in d_tilde.values().iter().enumerate() {
        p.q[(i, i)] = 1.0;
        p.c[i] = -2.0 * dt;
        p.c0 += dt * dt;
    }
    let (a, b) = balance_rows(net, &layout, None);
    p.a_eq = a;
    p.b_eq = b;
    let (band_a, band_b) = cost_band_rows(net, &layout, inst);
    p.a_in = band_a;
    p.b_in = band_b;
    flow_and_bound_constraints(net, &layout, &mut p);
    if let Some((lo, hi)) = inst.demand_bounds {
        for i in 0..layout.n_demand {
            p.lb[i] = lo;
            p.ub[i] = hi;
        }
    }
    Ok(p)
}

/// The push-up program: maximize total demand over the band-feasible
/// set within squared distance `delta` of d_tilde. A zero radius
/// degenerates to fixing d = d_tilde.
pub fn build_pushup(
    inst: &DcOpfInstance,
    d_tilde: &DemandVector,
    delta: f64,
) -> Result<ConvexProgram, DcopfError> {
    let net = &inst.network;
    check_demand_len(net, d_tilde)?;
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(DcopfError::InvalidInstance(format!(
            "delta must be nonnegative, got {delta}"
        )));
    }
    let layout = VarLayout::extended(net);
    let mut p = ConvexProgram::new(layout.total());
    p.sense = Sense::Maximize;
    for i in 0..layout.n_demand {
        p.c[i] = 1.0;
    }
    let (a, b) = balance_rows(net, &layout, None);
    p.a_eq = a;
    p.b_eq = b;
    let (band_a, band_b) = cost_band_rows(net, &layout, inst);
    p.a_in = band_a;
    p.b_in = band_b;
    flow_and_bound_constraints(net, &layout, &mut p);
    if let Some((lo, hi)) = inst.demand_bounds {
        for i in 0..layout.n_demand {
            p.lb[i] = lo;
            p.ub[i] = hi;
        }
    }
    if delta > 0.0 {
        p.ball = Some(BallConstraint {
            indices: (0..layout.n_demand).collect(),
            center: DVector::from_column_slice(d_tilde.values()),
            radius_sq: delta,
        });
    } else {
        // Zero-radius ball: pin the demand variables instead.
        let me = p.a_eq.nrows();
        let n = layout.total();
        let nd = layout.n_demand;
        let mut a = DMatrix::zeros(me + nd, n);
        a.view_mut((0, 0), (me, n)).copy_from(&p.a_eq);
        let mut bb = DVector::zeros(me + nd);
        bb.rows_mut(0, me).copy_from(&p.b_eq);
        for i in 0..nd {
            a[(me + i, i)] = 1.0;
            bb[me + i] = d_tilde.values()[i];
        }
        p.a_eq = a;
        p.b_eq = bb;
    }
    Ok(p)
}

/// Small bundled systems used by the test and benchmark suites.
pub mod fixtures {
    use super::*;

    /// One bus, two generators: G1 (cost 1, cap 1), G2 (cost 2, cap 1),
    /// nominal demand 0.5 p.u. Merit order gives O(d) = d for d <= 1
    /// and 1 + 2(d - 1) up to the 2.0 p.u. capacity.
    pub fn onebus_2gen() -> Network {
        Network::new(
            100.0,
            vec![Bus { id: 1, pd: 0.5 }],
            1,
            vec![
                Generator {
                    bus: 1,
                    cost_c1: 1.0,
                    cost_c0: 0.0,
                    p_min: 0.0,
                    p_max: 1.0,
                },
                Generator {
                    bus: 1,
                    cost_c1: 2.0,
                    cost_c0: 0.0,
                    p_min: 0.0,
                    p_max: 1.0,
                },
            ],
            vec![],
        )
        .expect("fixture is valid")
    }

    /// Triangle network with one generator per bus (costs 1, 2, 3, caps
    /// 1 p.u.), equal susceptances 10, line limits 0.4 p.u., and
    /// demands 0.3 p.u. at buses 2 and 3.
    pub fn tri_3bus() -> Network {
        let line = |from: usize, to: usize| Line {
            from,
            to,
            susceptance: 10.0,
            flow_limit: 0.4,
        };
        Network::new(
            100.0,
            vec![
                Bus { id: 1, pd: 0.0 },
                Bus { id: 2, pd: 0.3 },
                Bus { id: 3, pd: 0.3 },
            ],
            1,
            vec![
                Generator {
                    bus: 1,
                    cost_c1: 1.0,
                    cost_c0: 0.0,
                    p_min: 0.0,
                    p_max: 1.0,
                },
                Generator {
                    bus: 2,
                    cost_c1: 2.0,
                    cost_c0: 0.0,
                    p_min: 0.0,
                    p_max: 1.0,
                },
                Generator {
                    bus: 3,
                    cost_c1: 3.0,
                    cost_c0: 0.0,
                    p_min: 0.0,
                    p_max: 1.0,
                },
            ],
            vec![line(1, 2), line(2, 3), line(1, 3)],
        )
        .expect("fixture is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CostTargetSource;
    use crate::solver::{solve, SolveStatus};

    fn dv(values: &[f64]) -> DemandVector {
        DemandVector::new(values.to_vec(), DemandRole::Noisy).unwrap()
    }

    fn onebus_instance(f_tilde: f64, beta: f64) -> DcOpfInstance {
        DcOpfInstance::new(
            fixtures::onebus_2gen(),
            CostTarget::new(f_tilde, CostTargetSource::Public).unwrap(),
            beta,
        )
        .unwrap()
    }

    #[test]
    fn follower_merit_order() {
        let inst = onebus_instance(0.5, 0.01);
        let p = build_follower(&inst, &dv(&[0.5])).unwrap();
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 0.5).abs() < 1e-6);
        let layout = VarLayout::follower(&inst.network);
        let dispatch = layout.dispatch(&sol.x);
        assert!((dispatch[0] - 0.5).abs() < 1e-6);
        assert!(dispatch[1].abs() < 1e-6);
    }

    #[test]
    fn follower_second_unit_dispatches() {
        let inst = onebus_instance(0.5, 0.01);
        let sol = solve(&build_follower(&inst, &dv(&[1.5])).unwrap()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-6);
        let dispatch = VarLayout::follower(&inst.network).dispatch(&sol.x);
        assert!((dispatch[0] - 1.0).abs() < 1e-6);
        assert!((dispatch[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn follower_over_capacity_is_infeasible() {
        let inst = onebus_instance(0.5, 0.01);
        let sol = solve(&build_follower(&inst, &dv(&[2.5])).unwrap()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn hpr_keeps_reachable_noisy_point() {
        // Cost range at d = 0.3 is [0.3, 0.6], which contains the band.
        let inst = onebus_instance(0.5, 0.01);
        let sol = solve(&build_hpr(&inst, &dv(&[0.3])).unwrap()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective.abs() < 1e-6, "distance^2 {}", sol.objective);
        let d = VarLayout::extended(&inst.network).demands(&sol.x);
        assert!((d[0] - 0.3).abs() < 1e-5);
    }

    #[test]
    fn hpr_moves_to_cost_frontier() {
        // Max cost at demand d is 2d; the band floor 0.49 forces
        // d >= 0.245, the closest point to 0.1.
        let inst = onebus_instance(0.5, 0.01);
        let sol = solve(&build_hpr(&inst, &dv(&[0.1])).unwrap()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 0.021025).abs() < 1e-6);
        let d = VarLayout::extended(&inst.network).demands(&sol.x);
        assert!((d[0] - 0.245).abs() < 1e-5);
    }

    #[test]
    fn hpr_zero_distance_when_band_holds() {
        let inst = onebus_instance(0.5, 0.01);
        let sol = solve(&build_hpr(&inst, &dv(&[0.5])).unwrap()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective.abs() < 1e-6);
    }

    #[test]
    fn hpr_infeasible_when_band_unreachable() {
        // Total capacity cost ceiling is 1*1 + 2*1 = 3 < 9.99.
        let inst = onebus_instance(10.0, 0.01);
        let sol = solve(&build_hpr(&inst, &dv(&[0.5])).unwrap()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn pushup_hits_ball_boundary() {
        let inst = onebus_instance(0.5, 0.01);
        let layout = VarLayout::extended(&inst.network);
        let sol = solve(&build_pushup(&inst, &dv(&[0.3]), 0.01).unwrap()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((layout.demands(&sol.x)[0] - 0.4).abs() < 1e-5);

        let sol = solve(&build_pushup(&inst, &dv(&[0.3]), 0.04).unwrap()).unwrap();
        assert!((layout.demands(&sol.x)[0] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn pushup_zero_radius_fixes_demands() {
        let inst = onebus_instance(0.5, 0.01);
        let layout = VarLayout::extended(&inst.network);
        let sol = solve(&build_pushup(&inst, &dv(&[0.3]), 0.0).unwrap()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((layout.demands(&sol.x)[0] - 0.3).abs() < 1e-6);
        assert!((sol.objective - 0.3).abs() < 1e-6);
    }

    #[test]
    fn proxy_m_is_total_demand() {
        assert_eq!(proxy_m(&dv(&[1.0, 2.0, 3.0])), 6.0);
        assert_eq!(proxy_m(&dv(&[])), 0.0);
        assert_eq!(proxy_m(&dv(&[0.3])), 0.3);
    }

    #[test]
    fn demand_enters_balance_rhs_only() {
        let inst = onebus_instance(0.5, 0.01);
        let p1 = build_follower(&inst, &dv(&[0.4])).unwrap();
        let p2 = build_follower(&inst, &dv(&[0.9])).unwrap();
        assert_eq!(p1.c, p2.c);
        assert_eq!(p1.q, p2.q);
        assert_eq!(p1.a_eq, p2.a_eq);
        assert_eq!(p1.a_in, p2.a_in);
        assert_eq!(p1.b_in, p2.b_in);
        assert_eq!(p1.lb, p2.lb);
        assert_eq!(p1.ub, p2.ub);
        assert_ne!(p1.b_eq, p2.b_eq);
        // The difference sits in the demand bus's balance row.
        let diff = &p2.b_eq - &p1.b_eq;
        assert!((diff[0] - 0.5).abs() < 1e-15);
        for k in 1..diff.len() {
            assert_eq!(diff[k], 0.0);
        }
    }

    #[test]
    fn follower_monotone_without_congestion() {
        // Componentwise-larger demands cost at least as much while no
        // line limit binds.
        let inst = DcOpfInstance::new(
            fixtures::tri_3bus(),
            CostTarget::new(0.6, CostTargetSource::Public).unwrap(),
            0.01,
        )
        .unwrap();
        let grid = [0.05f64, 0.15, 0.25, 0.35];
        let mut costs = Vec::new();
        for &a in &grid {
            for &b in &grid {
                let sol = solve(&build_follower(&inst, &dv(&[a, b])).unwrap()).unwrap();
                assert_eq!(sol.status, SolveStatus::Optimal);
                costs.push(((a, b), sol.objective));
            }
        }
        for &((a1, b1), c1) in &costs {
            for &((a2, b2), c2) in &costs {
                if a1 >= a2 && b1 >= b2 {
                    assert!(c1 >= c2 - 1e-6, "({a1},{b1}) -> {c1} < ({a2},{b2}) -> {c2}");
                }
            }
        }
    }

    #[test]
    fn demand_dimension_checked() {
        let inst = onebus_instance(0.5, 0.01);
        assert!(matches!(
            build_follower(&inst, &dv(&[0.1, 0.2])),
            Err(DcopfError::DemandDimension { .. })
        ));
    }

    #[test]
    fn network_validation() {
        // duplicate ids
        assert!(Network::new(
            100.0,
            vec![Bus { id: 1, pd: 0.0 }, Bus { id: 1, pd: 0.1 }],
            1,
            vec![],
            vec![]
        )
        .is_err());
        // unknown slack
        assert!(Network::new(100.0, vec![Bus { id: 1, pd: 0.0 }], 2, vec![], vec![]).is_err());
        // disconnected
        assert!(Network::new(
            100.0,
            vec![Bus { id: 1, pd: 0.0 }, Bus { id: 2, pd: 0.1 }],
            1,
            vec![],
            vec![]
        )
        .is_err());
        // negative linear cost
        assert!(Network::new(
            100.0,
            vec![Bus { id: 1, pd: 0.1 }],
            1,
            vec![Generator {
                bus: 1,
                cost_c1: -1.0,
                cost_c0: 0.0,
                p_min: 0.0,
                p_max: 1.0
            }],
            vec![]
        )
        .is_err());
    }
}
