//! The bilevel repair engine: fast path, high point relaxation warm
//! start, upper-bound doubling, and bisection on the squared distance
//! budget, alternating push-up and follower solves.
//!
//! The search maintains `delta_low <= delta_opt <= delta_high` for the
//! true optimal squared distance. A push-up solve at a probed budget
//! either certifies a feasible release (its follower cost reaches the
//! band floor, so the actual distance of the returned point becomes the
//! new upper bound) or proves that no feasible release exists within
//! the probe (lower bound moves up).

use std::path::PathBuf;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::dcopf::{
    build_follower, build_hpr, build_pushup, proxy_m, DcOpfInstance, DcopfError, VarLayout,
};
use crate::domain::{
    l2sq_distance, theorem2_ratio, DemandRole, DemandVector, DistanceBudget, DomainError,
    FollowerResult, FollowerStatus, PrivacyParams,
};
use crate::dp::{obfuscate_demands, DpError, LaplaceNoise};
use crate::solver::{dump_program, solve, ConvexProgram, SolveStatus, SolverError};

/// Tolerance absorbing solver noise in the band-floor comparison.
const BAND_TOL: f64 = 1e-9;
/// Slack allowed on the reported cost band membership.
const BAND_REPORT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BilevelError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Dcopf(#[from] DcopfError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error("{context} solve failed with status {status:?}")]
    SolverFailure {
        context: &'static str,
        status: SolveStatus,
    },
    #[error("the original demand vector is infeasible for the follower")]
    OriginalInfeasible,
    #[error("writing solver dump: {0}")]
    Dump(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BilevelStatus {
    /// Bisection converged to within eta.
    Converged,
    /// The noisy vector already satisfied the cost band.
    FastPath,
    /// The push-up call cap was exhausted; best-so-far returned.
    OracleCapHit,
    /// No demand vector admits a band-feasible dispatch.
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    UpperUpdated,
    LowerUpdated,
    PushUpInfeasible,
}

/// One engine step (doubling probe or bisection step).
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    pub delta_low: f64,
    /// Infinite during the doubling phase, before a bound is certified.
    pub delta_high: f64,
    /// The probed budget.
    pub delta_mid: f64,
    /// Actual squared distance of the push-up point (NaN if infeasible).
    pub delta_up: f64,
    /// Proxy value m(d_up) (NaN if infeasible).
    pub pushup_objective: f64,
    /// Follower cost O(d_up) (NaN if infeasible).
    pub follower_cost: f64,
    pub branch: Branch,
}

/// Outcome of a full engine run.
///
/// `d_star`, `delta_star` and `cost` are meaningful for `Converged` and
/// `FastPath`; on `OracleCapHit` they hold the best point seen, and on
/// `Infeasible` `d_star` echoes the noisy input. `hpr_distance_sq` is
/// NaN when the relaxation was never solved (fast path).
#[derive(Debug, Clone)]
pub struct BilevelResult {
    pub d_star: DemandVector,
    pub delta_star: f64,
    pub cost: f64,
    pub status: BilevelStatus,
    pub trace: Vec<IterationRecord>,
    /// Number of push-up solves, each paired with one follower solve.
    pub oracle_calls: usize,
    pub hpr_distance_sq: f64,
}

/// Fidelity and accuracy measurements around one run.
#[derive(Debug, Clone)]
pub struct ObfuscationMetrics {
    /// ||d* - d°|| / ||d~ - d°||; None when noiseless or d° unknown.
    pub thm2_ratio: Option<f64>,
    /// Plain L2 distances to the original vector.
    pub dist_laplace: Option<f64>,
    pub dist_hpr: Option<f64>,
    pub dist_bl: Option<f64>,
    /// ||d°||, for scale-normalized reporting.
    pub d_orig_norm: Option<f64>,
    /// Follower cost at the relaxation point.
    pub hpr_cost: Option<f64>,
    /// Time spent inside solver calls.
    pub solver_wall: Duration,
}

struct UpperWitness {
    d_up: DemandVector,
    cost: f64,
    dist_sq: f64,
}

enum PushUpOutcome {
    Point {
        d_up: DemandVector,
        proxy: f64,
        dist_sq: f64,
    },
    Infeasible,
}

enum InitOutcome {
    Bounds(DistanceBudget),
    Infeasible,
    CapHit,
}

/// Sequential engine for one instance; owns the oracle-call budget, the
/// iteration trace and the solver wall clock.
pub struct BilevelEngine<'a> {
    inst: &'a DcOpfInstance,
    params: &'a PrivacyParams,
    oracle_calls: usize,
    trace: Vec<IterationRecord>,
    solver_wall: Duration,
    hpr_point: Option<DemandVector>,
    hpr_distance_sq: f64,
    upper_witness: Option<UpperWitness>,
    dump_dir: Option<PathBuf>,
    dump_seq: usize,
}

impl<'a> BilevelEngine<'a> {
    pub fn new(inst: &'a DcOpfInstance, params: &'a PrivacyParams) -> Self {
        Self {
            inst,
            params,
            oracle_calls: 0,
            trace: Vec::new(),
            solver_wall: Duration::ZERO,
            hpr_point: None,
            hpr_distance_sq: f64::NAN,
            upper_witness: None,
            dump_dir: None,
            dump_seq: 0,
        }
    }

    /// Dump every generated program into this directory.
    pub fn set_dump_dir(&mut self, dir: PathBuf) {
        self.dump_dir = Some(dir);
    }

    pub fn oracle_calls(&self) -> usize {
        self.oracle_calls
    }

    pub fn solver_wall(&self) -> Duration {
        self.solver_wall
    }

    fn f_tilde(&self) -> f64 {
        self.inst.cost_target.f_tilde
    }

    fn band_floor_met(&self, cost: f64) -> bool {
        cost >= self.f_tilde() - self.inst.beta - BAND_TOL
            && cost <= self.f_tilde() + self.inst.beta + BAND_REPORT_TOL
    }

    fn timed_solve(
        &mut self,
        label: &str,
        program: &ConvexProgram,
    ) -> Result<crate::solver::ProgramSolution, BilevelError> {
        if let Some(dir) = &self.dump_dir {
            self.dump_seq += 1;
            let path = dir.join(format!("{:04}_{label}.txt", self.dump_seq));
            let mut file = std::fs::File::create(path)?;
            dump_program(program, &mut file)?;
        }
        let start = Instant::now();
        let sol = solve(program)?;
        self.solver_wall += start.elapsed();
        Ok(sol)
    }

    /// One follower solve O(d). Does not count against the call cap.
    pub fn solve_follower(&mut self, d: &DemandVector) -> Result<FollowerResult, BilevelError> {
        let program = build_follower(self.inst, d)?;
        let sol = self.timed_solve("follower", &program)?;
        let layout = VarLayout::follower(&self.inst.network);
        let status = match sol.status {
            SolveStatus::Optimal => FollowerStatus::Optimal,
            SolveStatus::Infeasible => FollowerStatus::Infeasible,
            _ => FollowerStatus::NumericFailure,
        };
        Ok(FollowerResult {
            objective: sol.objective,
            dispatch: layout.dispatch(&sol.x),
            status,
        })
    }

    fn solve_pushup(
        &mut self,
        d_tilde: &DemandVector,
        delta: f64,
    ) -> Result<PushUpOutcome, BilevelError> {
        let program = build_pushup(self.inst, d_tilde, delta)?;
        self.oracle_calls += 1;
        let sol = self.timed_solve("pushup", &program)?;
        match sol.status {
            SolveStatus::Optimal => {
                let layout = VarLayout::extended(&self.inst.network);
                let d_up =
                    DemandVector::new(layout.demands(&sol.x), DemandRole::PushUpPoint)?;
                let dist_sq = l2sq_distance(&d_up, d_tilde)?;
                Ok(PushUpOutcome::Point {
                    proxy: proxy_m(&d_up),
                    d_up,
                    dist_sq,
                })
            }
            SolveStatus::Infeasible => Ok(PushUpOutcome::Infeasible),
            status => Err(BilevelError::SolverFailure {
                context: "push-up",
                status,
            }),
        }
    }

    /// Returns the released vector immediately when the noisy input
    /// already satisfies the cost band.
    pub fn fast_path(
        &mut self,
        d_tilde: &DemandVector,
    ) -> Result<Option<BilevelResult>, BilevelError> {
        let follower = self.solve_follower(d_tilde)?;
        match follower.status {
            FollowerStatus::Optimal => {
                if (follower.objective - self.f_tilde()).abs() <= self.inst.beta + BAND_TOL {
                    Ok(Some(BilevelResult {
                        d_star: d_tilde.with_role(DemandRole::Released),
                        delta_star: 0.0,
                        cost: follower.objective,
                        status: BilevelStatus::FastPath,
                        trace: std::mem::take(&mut self.trace),
                        oracle_calls: self.oracle_calls,
                        hpr_distance_sq: f64::NAN,
                    }))
                } else {
                    Ok(None)
                }
            }
            FollowerStatus::Infeasible => Ok(None),
            FollowerStatus::NumericFailure => Err(BilevelError::SolverFailure {
                context: "fast-path follower",
                status: SolveStatus::NumericFailure,
            }),
        }
    }

    /// Solve the relaxation for the lower bound, then double a probe
    /// budget until a push-up point reaches the band floor.
    pub fn init_bounds(
        &mut self,
        d_tilde: &DemandVector,
    ) -> Result<Option<DistanceBudget>, BilevelError> {
        match self.init_bounds_inner(d_tilde)? {
            InitOutcome::Bounds(b) => Ok(Some(b)),
            InitOutcome::Infeasible | InitOutcome::CapHit => Ok(None),
        }
    }

    fn init_bounds_inner(&mut self, d_tilde: &DemandVector) -> Result<InitOutcome, BilevelError> {
        let program = build_hpr(self.inst, d_tilde)?;
        let sol = self.timed_solve("hpr", &program)?;
        match sol.status {
            SolveStatus::Optimal => {
                let layout = VarLayout::extended(&self.inst.network);
                let d_h = DemandVector::new(layout.demands(&sol.x), DemandRole::HprPoint)?;
                // The reported objective is the squared distance; clip
                // the tiny negative values regularization can leave.
                self.hpr_distance_sq = sol.objective.max(0.0);
                self.hpr_point = Some(d_h);
            }
            SolveStatus::Infeasible => return Ok(InitOutcome::Infeasible),
            status => {
                return Err(BilevelError::SolverFailure {
                    context: "relaxation",
                    status,
                })
            }
        }

        let delta_low = self.hpr_distance_sq;
        let mut probe = delta_low.max(self.params.eta);
        loop {
            if self.oracle_calls >= self.params.max_oracle_calls {
                return Ok(InitOutcome::CapHit);
            }
            let iter = self.trace.len() + 1;
            match self.solve_pushup(d_tilde, probe)? {
                PushUpOutcome::Point {
                    d_up,
                    proxy,
                    dist_sq,
                } => {
                    let follower = self.require_follower(&d_up)?;
                    let certified = self.band_floor_met(follower.objective);
                    self.trace.push(IterationRecord {
                        iter,
                        delta_low,
                        delta_high: f64::INFINITY,
                        delta_mid: probe,
                        delta_up: dist_sq,
                        pushup_objective: proxy,
                        follower_cost: follower.objective,
                        branch: if certified {
                            Branch::UpperUpdated
                        } else {
                            Branch::LowerUpdated
                        },
                    });
                    if certified {
                        self.upper_witness = Some(UpperWitness {
                            d_up,
                            cost: follower.objective,
                            dist_sq,
                        });
                        return Ok(InitOutcome::Bounds(DistanceBudget::new(delta_low, probe)?));
                    }
                }
                PushUpOutcome::Infeasible => {
                    self.trace.push(IterationRecord {
                        iter,
                        delta_low,
                        delta_high: f64::INFINITY,
                        delta_mid: probe,
                        delta_up: f64::NAN,
                        pushup_objective: f64::NAN,
                        follower_cost: f64::NAN,
                        branch: Branch::PushUpInfeasible,
                    });
                }
            }
            probe *= 2.0;
        }
    }

    fn require_follower(&mut self, d: &DemandVector) -> Result<FollowerResult, BilevelError> {
        let follower = self.solve_follower(d)?;
        if follower.status != FollowerStatus::Optimal {
            // The push-up point carries a feasible dispatch, so the
            // follower can only fail numerically.
            return Err(BilevelError::SolverFailure {
                context: "follower at push-up point",
                status: SolveStatus::NumericFailure,
            });
        }
        Ok(follower)
    }

    /// Bisection on the squared distance budget.
    pub fn blm_search(
        &mut self,
        d_tilde: &DemandVector,
        bounds: DistanceBudget,
    ) -> Result<BilevelResult, BilevelError> {
        let mut low = bounds.delta_low;
        let mut high = bounds.delta_high;
        let eta = self.params.eta;

        while high - low > eta {
            if self.oracle_calls >= self.params.max_oracle_calls {
                return self.cap_hit_result(d_tilde, low, high);
            }
            let probe = 0.5 * (low + high);
            let iter = self.trace.len() + 1;
            match self.solve_pushup(d_tilde, probe)? {
                PushUpOutcome::Point {
                    d_up,
                    proxy,
                    dist_sq,
                } => {
                    let follower = self.require_follower(&d_up)?;
                    let certified = self.band_floor_met(follower.objective);
                    if certified {
                        // Use the point's actual distance as the bound.
                        high = dist_sq.max(low);
                        self.upper_witness = Some(UpperWitness {
                            d_up: d_up.clone(),
                            cost: follower.objective,
                            dist_sq: high,
                        });
                    } else {
                        low = probe;
                    }
                    self.trace.push(IterationRecord {
                        iter,
                        delta_low: low,
                        delta_high: high,
                        delta_mid: probe,
                        delta_up: dist_sq,
                        pushup_objective: proxy,
                        follower_cost: follower.objective,
                        branch: if certified {
                            Branch::UpperUpdated
                        } else {
                            Branch::LowerUpdated
                        },
                    });
                }
                PushUpOutcome::Infeasible => {
                    // An empty ball certifies emptiness within the
                    // probe, exactly like a failed band-floor test.
                    low = probe;
                    self.trace.push(IterationRecord {
                        iter,
                        delta_low: low,
                        delta_high: high,
                        delta_mid: probe,
                        delta_up: f64::NAN,
                        pushup_objective: f64::NAN,
                        follower_cost: f64::NAN,
                        branch: Branch::PushUpInfeasible,
                    });
                }
            }
        }

        // The witness backing the final upper bound is the answer; when
        // the search was entered with foreign bounds it is recomputed.
        if self.upper_witness.is_none() {
            if self.oracle_calls >= self.params.max_oracle_calls {
                return self.cap_hit_result(d_tilde, low, high);
            }
            match self.solve_pushup(d_tilde, high)? {
                PushUpOutcome::Point { d_up, dist_sq, .. } => {
                    let follower = self.require_follower(&d_up)?;
                    self.upper_witness = Some(UpperWitness {
                        d_up,
                        cost: follower.objective,
                        dist_sq,
                    });
                }
                PushUpOutcome::Infeasible => {
                    return Err(BilevelError::SolverFailure {
                        context: "push-up at certified upper bound",
                        status: SolveStatus::Infeasible,
                    })
                }
            }
        }
        let witness = self.upper_witness.as_ref().expect("witness just ensured");
        log::info!(
            "bisection converged: delta* = {:.6e}, cost = {:.6}, {} oracle calls",
            witness.dist_sq,
            witness.cost,
            self.oracle_calls
        );
        Ok(BilevelResult {
            d_star: witness.d_up.with_role(DemandRole::Released),
            delta_star: witness.dist_sq,
            cost: witness.cost,
            status: BilevelStatus::Converged,
            trace: std::mem::take(&mut self.trace),
            oracle_calls: self.oracle_calls,
            hpr_distance_sq: self.hpr_distance_sq,
        })
    }

    fn cap_hit_result(
        &mut self,
        d_tilde: &DemandVector,
        low: f64,
        high: f64,
    ) -> Result<BilevelResult, BilevelError> {
        log::warn!(
            "oracle call cap {} hit with bounds [{low:.3e}, {high:.3e}]",
            self.params.max_oracle_calls
        );
        let (d_star, delta_star, cost) = match &self.upper_witness {
            Some(w) => (
                w.d_up.with_role(DemandRole::Released),
                w.dist_sq,
                w.cost,
            ),
            None => match self.hpr_point.clone() {
                // No certified point yet: fall back to the relaxation
                // optimum, which is feasible but possibly out of band.
                Some(h) => {
                    let cost = self.solve_follower(&h)?.objective;
                    (h, self.hpr_distance_sq, cost)
                }
                None => (d_tilde.clone(), 0.0, f64::NAN),
            },
        };
        Ok(BilevelResult {
            d_star,
            delta_star,
            cost,
            status: BilevelStatus::OracleCapHit,
            trace: std::mem::take(&mut self.trace),
            oracle_calls: self.oracle_calls,
            hpr_distance_sq: self.hpr_distance_sq,
        })
    }

    /// Full post-noise pipeline: fast path, bound initialization, then
    /// bisection.
    pub fn run(&mut self, d_tilde: &DemandVector) -> Result<BilevelResult, BilevelError> {
        if let Some(result) = self.fast_path(d_tilde)? {
            return Ok(result);
        }
        match self.init_bounds_inner(d_tilde)? {
            InitOutcome::Bounds(bounds) => self.blm_search(d_tilde, bounds),
            InitOutcome::CapHit => {
                let low = self.hpr_distance_sq;
                self.cap_hit_result(d_tilde, low, f64::INFINITY)
            }
            InitOutcome::Infeasible => Ok(BilevelResult {
                d_star: d_tilde.clone(),
                delta_star: f64::NAN,
                cost: f64::NAN,
                status: BilevelStatus::Infeasible,
                trace: std::mem::take(&mut self.trace),
                oracle_calls: self.oracle_calls,
                hpr_distance_sq: f64::NAN,
            }),
        }
    }

    fn hpr_point(&self) -> Option<&DemandVector> {
        self.hpr_point.as_ref()
    }
}

/// End-to-end run: obfuscate with the Laplace mechanism, repair through
/// the bilevel model, and measure fidelity against the original.
pub fn run_obfuscation(
    inst: &DcOpfInstance,
    d_orig: &DemandVector,
    params: &PrivacyParams,
) -> Result<(BilevelResult, ObfuscationMetrics), BilevelError> {
    let mut noise = LaplaceNoise::for_params(params);
    let d_tilde = obfuscate_demands(d_orig, params, &mut noise)?;
    run_with_noisy(inst, Some(d_orig), &d_tilde, params)
}

/// The pipeline after noise injection. `d_orig` is optional: the
/// repair never reads it, it only feeds the fidelity metrics.
pub fn run_with_noisy(
    inst: &DcOpfInstance,
    d_orig: Option<&DemandVector>,
    d_tilde: &DemandVector,
    params: &PrivacyParams,
) -> Result<(BilevelResult, ObfuscationMetrics), BilevelError> {
    let mut engine = BilevelEngine::new(inst, params);
    if let Some(orig) = d_orig {
        let check = engine.solve_follower(orig)?;
        if check.status != FollowerStatus::Optimal {
            return Err(BilevelError::OriginalInfeasible);
        }
    }
    let result = engine.run(d_tilde)?;

    // Fidelity measurements; the released data never depends on them.
    let succeeded = matches!(
        result.status,
        BilevelStatus::Converged | BilevelStatus::FastPath | BilevelStatus::OracleCapHit
    );
    let hpr_for_metrics: Option<DemandVector> = if result.status == BilevelStatus::FastPath {
        // The noisy point is band-feasible, so it is the relaxation
        // optimum at distance zero.
        Some(d_tilde.with_role(DemandRole::HprPoint))
    } else {
        engine.hpr_point().cloned()
    };
    let hpr_cost = match &hpr_for_metrics {
        Some(h) if succeeded => {
            let f = engine.solve_follower(h)?;
            (f.status == FollowerStatus::Optimal).then_some(f.objective)
        }
        _ => None,
    };
    let metrics = match d_orig {
        Some(orig) => {
            let dist = |v: &DemandVector| l2sq_distance(v, orig).map(f64::sqrt);
            ObfuscationMetrics {
                thm2_ratio: if succeeded {
                    theorem2_ratio(&result.d_star, d_tilde, orig)?
                } else {
                    None
                },
                dist_laplace: Some(dist(d_tilde)?),
                dist_hpr: hpr_for_metrics.as_ref().map(&dist).transpose()?,
                dist_bl: succeeded.then(|| dist(&result.d_star)).transpose()?,
                d_orig_norm: Some(orig.values().iter().map(|v| v * v).sum::<f64>().sqrt()),
                hpr_cost,
                solver_wall: engine.solver_wall(),
            }
        }
        None => ObfuscationMetrics {
            thm2_ratio: None,
            dist_laplace: None,
            dist_hpr: None,
            dist_bl: None,
            d_orig_norm: None,
            hpr_cost,
            solver_wall: engine.solver_wall(),
        },
    };
    Ok((result, metrics))
}
