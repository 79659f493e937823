//! Case-file parsing, result emission and the command surface behind
//! the `dp-bilevel` binary.
//!
//! The parser accepts the MATPOWER matrix subset: `mpc.baseMVA`,
//! `mpc.bus`, `mpc.gen`, `mpc.branch` and `mpc.gencost` blocks with `%`
//! comments. Only the columns the DC model needs are read; generation
//! cost must be a model-2 polynomial with no quadratic term. All MW
//! quantities are converted to per-unit on the way in. Cost
//! coefficients are taken as given.
//!
//! Every CSV written here starts with the version comment line
//! `# dp-bilevel v1` followed by a header row; fields are
//! comma-separated with `.` decimal points and LF line endings.
//! Optional values print as empty fields.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::bilevel::{
    run_obfuscation, BilevelError, BilevelResult, BilevelStatus, IterationRecord,
    ObfuscationMetrics,
};
use crate::dcopf::{
    build_follower, build_pushup, Bus, DcOpfInstance, DcopfError, Generator, Line, Network,
    VarLayout,
};
use crate::domain::{
    l2sq_distance, CostTarget, CostTargetSource, DemandRole, DemandVector, PrivacyParams,
};
use crate::solver::{solve, SolveStatus};

pub const CSV_VERSION_LINE: &str = "# dp-bilevel v1";

/// Exit codes of the command surface.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const ORACLE_CAP: i32 = 4;
    pub const USAGE: i32 = 64;
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("missing block mpc.{0}")]
    MissingBlock(&'static str),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("multiple slack (type 3) buses")]
    MultipleSlack,
    #[error("no slack (type 3) bus")]
    NoSlack,
    #[error("quadratic generation cost unsupported (line {line})")]
    QuadraticCostUnsupported { line: usize },
    #[error("network is not a single connected island")]
    DisconnectedNetwork,
    #[error("invalid network: {0}")]
    Network(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("instance infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Engine(#[from] BilevelError),
    #[error("malformed csv at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Parse(_) => exit::PARSE,
            CliError::Usage(_) => exit::USAGE,
            CliError::Infeasible(_) => exit::INFEASIBLE,
            CliError::Engine(_) => exit::INTERNAL,
            CliError::Csv { .. } => exit::PARSE,
        }
    }
}

// ---------------------------------------------------------------------
// MATPOWER subset parsing
// ---------------------------------------------------------------------

struct NumRow {
    line: usize,
    values: Vec<f64>,
}

/// Strip % comments, then slice out `mpc.<name> = [ rows ];` blocks and
/// scalar assignments.
struct CaseText {
    lines: Vec<String>,
}

impl CaseText {
    fn new(text: &str) -> Self {
        let lines = text
            .lines()
            .map(|l| match l.find('%') {
                Some(pos) => l[..pos].to_string(),
                None => l.to_string(),
            })
            .collect();
        Self { lines }
    }

    fn scalar(&self, name: &str) -> Option<(usize, f64)> {
        let needle = format!("mpc.{name}");
        for (idx, line) in self.lines.iter().enumerate() {
            if let Some(pos) = line.find(&needle) {
                let rest = &line[pos + needle.len()..];
                if rest
                    .chars()
                    .next()
                    .is_some_and(|c| c.is_alphanumeric() || c == '_')
                {
                    continue;
                }
                let rest = rest.trim_start();
                if let Some(rest) = rest.strip_prefix('=') {
                    let value = rest.trim().trim_end_matches(';').trim();
                    if let Ok(v) = value.parse::<f64>() {
                        return Some((idx + 1, v));
                    }
                }
            }
        }
        None
    }

    fn block(&self, name: &str) -> Option<Vec<NumRow>> {
        let needle = format!("mpc.{name}");
        let mut rows = Vec::new();
        let mut in_block = false;
        for (idx, line) in self.lines.iter().enumerate() {
            let mut content: &str = line;
            if !in_block {
                let Some(pos) = line.find(&needle) else {
                    continue;
                };
                let rest = &line[pos + needle.len()..];
                if rest
                    .chars()
                    .next()
                    .is_some_and(|c| c.is_alphanumeric() || c == '_')
                {
                    continue;
                }
                // Require an assignment with an opening bracket.
                let Some(eq) = rest.find('=') else { continue };
                let Some(br) = rest[eq..].find('[') else { continue };
                in_block = true;
                content = &rest[eq + br + 1..];
            }
            let (body, done) = match content.find(']') {
                Some(pos) => (&content[..pos], true),
                None => (content, false),
            };
            for row_text in body.split(';') {
                let cleaned = row_text.replace(',', " ");
                let mut values = Vec::new();
                for token in cleaned.split_whitespace() {
                    match token.parse::<f64>() {
                        Ok(v) => values.push(v),
                        Err(_) => values.push(f64::NAN), // flagged by callers
                    }
                }
                if !values.is_empty() {
                    rows.push(NumRow {
                        line: idx + 1,
                        values,
                    });
                }
            }
            if done {
                return Some(rows);
            }
        }
        None
    }
}

fn need(row: &NumRow, cols: usize, what: &str) -> Result<(), ParseError> {
    if row.values.len() < cols {
        return Err(ParseError::MalformedRow {
            line: row.line,
            reason: format!("{what} row needs at least {cols} columns"),
        });
    }
    if row.values.iter().take(cols).any(|v| v.is_nan()) {
        return Err(ParseError::MalformedRow {
            line: row.line,
            reason: format!("{what} row contains a non-numeric token"),
        });
    }
    Ok(())
}

/// Parse the MATPOWER subset into a per-unit network.
pub fn parse_matpower(text: &str) -> Result<Network, ParseError> {
    let case = CaseText::new(text);
    let (_, base_mva) = case
        .scalar("baseMVA")
        .ok_or(ParseError::MissingBlock("baseMVA"))?;
    let bus_rows = case.block("bus").ok_or(ParseError::MissingBlock("bus"))?;
    let gen_rows = case.block("gen").ok_or(ParseError::MissingBlock("gen"))?;
    let branch_rows = case
        .block("branch")
        .ok_or(ParseError::MissingBlock("branch"))?;
    let cost_rows = case
        .block("gencost")
        .ok_or(ParseError::MissingBlock("gencost"))?;

    let mut buses = Vec::new();
    let mut slack: Option<usize> = None;
    for row in &bus_rows {
        need(row, 3, "bus")?;
        let id = row.values[0] as usize;
        let bus_type = row.values[1] as i64;
        if bus_type == 3 {
            if slack.is_some() {
                return Err(ParseError::MultipleSlack);
            }
            slack = Some(id);
        }
        buses.push(Bus {
            id,
            pd: row.values[2] / base_mva,
        });
    }
    let slack = slack.ok_or(ParseError::NoSlack)?;

    if gen_rows.len() != cost_rows.len() {
        return Err(ParseError::MalformedRow {
            line: cost_rows.first().map_or(0, |r| r.line),
            reason: format!(
                "gencost has {} rows for {} generators",
                cost_rows.len(),
                gen_rows.len()
            ),
        });
    }
    let mut generators = Vec::new();
    for (gen, cost) in gen_rows.iter().zip(&cost_rows) {
        need(gen, 10, "gen")?;
        need(cost, 4, "gencost")?;
        let model = cost.values[0] as i64;
        if model != 2 {
            return Err(ParseError::MalformedRow {
                line: cost.line,
                reason: format!("only polynomial (model 2) cost supported, got model {model}"),
            });
        }
        let ncost = cost.values[3] as usize;
        need(cost, 4 + ncost, "gencost")?;
        let coeffs = &cost.values[4..4 + ncost];
        // Highest degree first; anything above linear must vanish.
        let (c1, c0) = match ncost {
            0 => (0.0, 0.0),
            1 => (0.0, coeffs[0]),
            _ => {
                for (k, c) in coeffs[..ncost - 2].iter().enumerate() {
                    if *c != 0.0 {
                        let _ = k;
                        return Err(ParseError::QuadraticCostUnsupported { line: cost.line });
                    }
                }
                (coeffs[ncost - 2], coeffs[ncost - 1])
            }
        };
        generators.push(Generator {
            bus: gen.values[0] as usize,
            cost_c1: c1,
            cost_c0: c0,
            p_min: gen.values[9] / base_mva,
            p_max: gen.values[8] / base_mva,
        });
    }

    let mut lines = Vec::new();
    for row in &branch_rows {
        need(row, 6, "branch")?;
        let x = row.values[3];
        if x == 0.0 {
            return Err(ParseError::MalformedRow {
                line: row.line,
                reason: "branch reactance must be nonzero".into(),
            });
        }
        let rate_a = row.values[5];
        lines.push(Line {
            from: row.values[0] as usize,
            to: row.values[1] as usize,
            susceptance: 1.0 / x,
            flow_limit: if rate_a == 0.0 {
                f64::INFINITY
            } else {
                rate_a / base_mva
            },
        });
    }

    Network::new(base_mva, buses, slack, generators, lines).map_err(|e| match e {
        DcopfError::Disconnected => ParseError::DisconnectedNetwork,
        other => ParseError::Network(other.to_string()),
    })
}

/// Emit the network back into the supported case subset. When
/// `demand_override` is given, its entries replace Pd at the
/// demand-bearing buses (the released-case writer).
pub fn emit_matpower(net: &Network, demand_override: Option<&DemandVector>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = case");
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", net.base_mva);
    let _ = writeln!(out, "mpc.bus = [");
    let mut demand_idx = 0usize;
    for bus in &net.buses {
        let bus_type = if bus.id == net.slack_bus { 3 } else { 1 };
        let pd = if bus.has_demand() {
            let v = match demand_override {
                Some(d) => d.values()[demand_idx],
                None => bus.pd,
            };
            demand_idx += 1;
            v * net.base_mva
        } else {
            0.0
        };
        let _ = writeln!(
            out,
            "\t{} {} {} 0 0 0 1 1 0 0 1 1.1 0.9;",
            bus.id, bus_type, pd
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "mpc.gen = [");
    for g in &net.generators {
        let _ = writeln!(
            out,
            "\t{} 0 0 0 0 1 {} 1 {} {};",
            g.bus,
            net.base_mva,
            g.p_max * net.base_mva,
            g.p_min * net.base_mva
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "mpc.branch = [");
    for l in &net.lines {
        let rate_a = if l.flow_limit.is_finite() {
            l.flow_limit * net.base_mva
        } else {
            0.0
        };
        let _ = writeln!(
            out,
            "\t{} {} 0 {} 0 {} 0 0 0 0 1 -360 360;",
            l.from,
            l.to,
            1.0 / l.susceptance,
            rate_a
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "mpc.gencost = [");
    for g in &net.generators {
        let _ = writeln!(out, "\t2 0 0 2 {} {};", g.cost_c1, g.cost_c0);
    }
    let _ = writeln!(out, "];");
    out
}

// ---------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => String::new(),
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        String::new()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Read one of the tool's own CSV files: version line, header, rows.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut lines = text.lines().enumerate();
    let (_, version) = lines.next().ok_or(CliError::Csv {
        line: 1,
        reason: "empty file".into(),
    })?;
    if version.trim() != CSV_VERSION_LINE {
        return Err(CliError::Csv {
            line: 1,
            reason: format!("expected version line '{CSV_VERSION_LINE}'"),
        });
    }
    let (_, header) = lines.next().ok_or(CliError::Csv {
        line: 2,
        reason: "missing header".into(),
    })?;
    let header: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != header.len() {
            return Err(CliError::Csv {
                line: idx + 1,
                reason: format!("{} fields, header has {}", fields.len(), header.len()),
            });
        }
        rows.push(fields);
    }
    Ok((header, rows))
}

pub fn status_label(status: BilevelStatus) -> &'static str {
    match status {
        BilevelStatus::Converged => "converged",
        BilevelStatus::FastPath => "fast_path",
        BilevelStatus::OracleCapHit => "oracle_cap_hit",
        BilevelStatus::Infeasible => "infeasible",
    }
}

/// One benchmark row; distances are reported both normalized by ||d°||
/// and absolute.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub seed: u64,
    pub status: BilevelStatus,
    pub oracle_calls: usize,
    pub wall: Duration,
    pub cost_err_bl_pct: Option<f64>,
    pub cost_err_hpr_pct: Option<f64>,
    pub dist_bl: Option<f64>,
    pub dist_hpr: Option<f64>,
    pub dist_laplace: Option<f64>,
    pub dist_bl_abs: Option<f64>,
    pub dist_hpr_abs: Option<f64>,
    pub dist_laplace_abs: Option<f64>,
    pub thm2_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkReport {
    pub rows: Vec<RunRow>,
}

impl BenchmarkReport {
    const COLUMNS: &'static str = "seed,status,oracle_calls,cost_err_bl_pct,cost_err_hpr_pct,\
        dist_bl,dist_hpr,dist_laplace,dist_bl_abs,dist_hpr_abs,dist_laplace_abs,thm2_ratio";

    fn aggregate(&self, pick: impl Fn(&RunRow) -> Option<f64> + Copy) -> (Option<f64>, Option<f64>) {
        let values: Vec<f64> = self.rows.iter().filter_map(pick).collect();
        if values.is_empty() {
            return (None, None);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (Some(mean), Some(max))
    }

    /// Deterministic report: no timing columns (those go to the
    /// timing file), two trailing aggregate rows.
    pub fn to_report_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CSV_VERSION_LINE}");
        let _ = writeln!(out, "{}", Self::COLUMNS);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                status_label(r.status),
                r.oracle_calls,
                fmt_opt(r.cost_err_bl_pct),
                fmt_opt(r.cost_err_hpr_pct),
                fmt_opt(r.dist_bl),
                fmt_opt(r.dist_hpr),
                fmt_opt(r.dist_laplace),
                fmt_opt(r.dist_bl_abs),
                fmt_opt(r.dist_hpr_abs),
                fmt_opt(r.dist_laplace_abs),
                fmt_opt(r.thm2_ratio),
            );
        }
        for (label, idx) in [("mean", 0usize), ("max", 1usize)] {
            let stats: Vec<(Option<f64>, Option<f64>)> = vec![
                self.aggregate(|r| r.cost_err_bl_pct),
                self.aggregate(|r| r.cost_err_hpr_pct),
                self.aggregate(|r| r.dist_bl),
                self.aggregate(|r| r.dist_hpr),
                self.aggregate(|r| r.dist_laplace),
                self.aggregate(|r| r.dist_bl_abs),
                self.aggregate(|r| r.dist_hpr_abs),
                self.aggregate(|r| r.dist_laplace_abs),
                self.aggregate(|r| r.thm2_ratio),
            ];
            let calls: Vec<f64> = self.rows.iter().map(|r| r.oracle_calls as f64).collect();
            let calls_stat = if calls.is_empty() {
                String::new()
            } else if idx == 0 {
                format!("{}", calls.iter().sum::<f64>() / calls.len() as f64)
            } else {
                format!("{}", calls.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            };
            let picked: Vec<String> = stats
                .iter()
                .map(|s| fmt_opt(if idx == 0 { s.0 } else { s.1 }))
                .collect();
            let _ = writeln!(out, "{label},,{},{}", calls_stat, picked.join(","));
        }
        out
    }

    /// Wall-clock per run; separate file because timings are not
    /// reproducible across invocations.
    pub fn to_timing_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CSV_VERSION_LINE}");
        let _ = writeln!(out, "seed,wall_ms,oracle_calls");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{}",
                r.seed,
                r.wall.as_secs_f64() * 1e3,
                r.oracle_calls
            );
        }
        out
    }
}

/// Parse a report emitted by [`BenchmarkReport::to_report_csv`],
/// returning data rows only (aggregates recomputed on demand).
pub fn read_report(text: &str) -> Result<BenchmarkReport, CliError> {
    let (header, rows) = read_csv(text)?;
    let expected: Vec<&str> = BenchmarkReport::COLUMNS.split(',').collect();
    if header != expected {
        return Err(CliError::Csv {
            line: 2,
            reason: "unexpected report columns".into(),
        });
    }
    let mut report = BenchmarkReport::default();
    for (k, fields) in rows.iter().enumerate() {
        if fields[0] == "mean" || fields[0] == "max" {
            continue;
        }
        let opt = |s: &String| -> Option<f64> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        let status = match fields[1].as_str() {
            "converged" => BilevelStatus::Converged,
            "fast_path" => BilevelStatus::FastPath,
            "oracle_cap_hit" => BilevelStatus::OracleCapHit,
            "infeasible" => BilevelStatus::Infeasible,
            other => {
                return Err(CliError::Csv {
                    line: k + 3,
                    reason: format!("unknown status {other}"),
                })
            }
        };
        report.rows.push(RunRow {
            seed: fields[0].parse().map_err(|_| CliError::Csv {
                line: k + 3,
                reason: "bad seed".into(),
            })?,
            status,
            oracle_calls: fields[2].parse().unwrap_or(0),
            wall: Duration::ZERO,
            cost_err_bl_pct: opt(&fields[3]),
            cost_err_hpr_pct: opt(&fields[4]),
            dist_bl: opt(&fields[5]),
            dist_hpr: opt(&fields[6]),
            dist_laplace: opt(&fields[7]),
            dist_bl_abs: opt(&fields[8]),
            dist_hpr_abs: opt(&fields[9]),
            dist_laplace_abs: opt(&fields[10]),
            thm2_ratio: opt(&fields[11]),
        });
    }
    Ok(report)
}

pub fn trace_to_csv(trace: &[IterationRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CSV_VERSION_LINE}");
    let _ = writeln!(
        out,
        "iter,delta_low,delta_high,delta_mid,delta_up,pushup_m,follower_cost,branch"
    );
    for r in trace {
        let branch = match r.branch {
            crate::bilevel::Branch::UpperUpdated => "upper",
            crate::bilevel::Branch::LowerUpdated => "lower",
            crate::bilevel::Branch::PushUpInfeasible => "pushup_infeasible",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iter,
            fmt_num(r.delta_low),
            fmt_num(r.delta_high),
            fmt_num(r.delta_mid),
            fmt_num(r.delta_up),
            fmt_num(r.pushup_objective),
            fmt_num(r.follower_cost),
            branch
        );
    }
    out
}

// ---------------------------------------------------------------------
// Configuration and commands
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FTildeMode {
    /// Solve the follower at the case's own demands (public target).
    FromOriginalSolve,
    /// Use a caller-provided value (private estimate scenario).
    Provided(f64),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub case_path: PathBuf,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta_abs: Option<f64>,
    pub beta_percent: Option<f64>,
    pub eta: f64,
    pub max_oracle_calls: usize,
    pub seed: u64,
    pub runs: usize,
    pub f_tilde_mode: FTildeMode,
    pub delta_grid: Option<Vec<f64>>,
    pub output_dir: PathBuf,
    pub dump_lp: Option<PathBuf>,
    pub json: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        match (self.beta_abs, self.beta_percent) {
            (Some(_), Some(_)) => Err(CliError::Usage(
                "--beta and --beta-pct are mutually exclusive".into(),
            )),
            (None, None) => Err(CliError::Usage("one of --beta or --beta-pct required".into())),
            _ => Ok(()),
        }?;
        if self.runs == 0 {
            return Err(CliError::Usage("--runs must be at least 1".into()));
        }
        Ok(())
    }
}

struct Prepared {
    network: Network,
    inst: DcOpfInstance,
    d_orig: DemandVector,
    f_tilde: f64,
    beta: f64,
}

fn load_network(path: &Path) -> Result<Network, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_matpower(&text)?)
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    cfg.validate()?;
    let network = load_network(&cfg.case_path)?;
    if network.demand_count() == 0 {
        return Err(CliError::Usage(
            "case has no demand-bearing buses (nothing to obfuscate)".into(),
        ));
    }
    let d_orig = network.demand_vector();

    let (f_tilde, source) = match cfg.f_tilde_mode {
        FTildeMode::Provided(v) => (v, CostTargetSource::PrivateEstimate),
        FTildeMode::FromOriginalSolve => {
            let probe_inst = DcOpfInstance::new(
                network.clone(),
                CostTarget::new(0.0, CostTargetSource::Public).expect("finite"),
                1.0,
            )
            .map_err(|e| CliError::Usage(e.to_string()))?;
            let program =
                build_follower(&probe_inst, &d_orig).map_err(|e| CliError::Usage(e.to_string()))?;
            let sol = solve(&program).map_err(BilevelError::from)?;
            match sol.status {
                SolveStatus::Optimal => (sol.objective, CostTargetSource::Public),
                SolveStatus::Infeasible => {
                    return Err(CliError::Infeasible(
                        "follower is infeasible at the case's own demands".into(),
                    ))
                }
                status => {
                    return Err(CliError::Engine(BilevelError::SolverFailure {
                        context: "target-cost follower",
                        status,
                    }))
                }
            }
        }
    };
    let beta = match (cfg.beta_abs, cfg.beta_percent) {
        (Some(b), None) => b,
        (None, Some(pct)) => pct * f_tilde / 100.0,
        _ => unreachable!("validated"),
    };
    if !(beta.is_finite() && beta > 0.0) {
        return Err(CliError::Usage(format!(
            "fidelity half-width resolves to {beta}; it must be positive"
        )));
    }
    let inst = DcOpfInstance::new(
        network.clone(),
        CostTarget::new(f_tilde, source).map_err(|e| CliError::Usage(e.to_string()))?,
        beta,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Prepared {
        network,
        inst,
        d_orig,
        f_tilde,
        beta,
    })
}

fn privacy_params(cfg: &RunConfig, beta: f64, seed: u64) -> Result<PrivacyParams, CliError> {
    PrivacyParams::new(
        cfg.epsilon,
        cfg.alpha,
        beta,
        None,
        cfg.eta,
        cfg.max_oracle_calls,
        seed,
    )
    .map_err(|e| CliError::Usage(e.to_string()))
}

fn row_from_run(
    seed: u64,
    prepared: &Prepared,
    result: &BilevelResult,
    metrics: &ObfuscationMetrics,
) -> RunRow {
    let f_tilde = prepared.f_tilde;
    let norm = metrics.d_orig_norm.filter(|n| *n > 0.0);
    let normalized = |abs: Option<f64>| match (abs, norm) {
        (Some(a), Some(n)) => Some(a / n),
        _ => None,
    };
    let succeeded = matches!(
        result.status,
        BilevelStatus::Converged | BilevelStatus::FastPath | BilevelStatus::OracleCapHit
    );
    let cost_err = |cost: f64| {
        if f_tilde != 0.0 && cost.is_finite() {
            Some((cost - f_tilde) / f_tilde * 100.0)
        } else {
            None
        }
    };
    RunRow {
        seed,
        status: result.status,
        oracle_calls: result.oracle_calls,
        wall: metrics.solver_wall,
        cost_err_bl_pct: if succeeded { cost_err(result.cost) } else { None },
        cost_err_hpr_pct: metrics.hpr_cost.and_then(cost_err),
        dist_bl: normalized(metrics.dist_bl),
        dist_hpr: normalized(metrics.dist_hpr),
        dist_laplace: normalized(metrics.dist_laplace),
        dist_bl_abs: metrics.dist_bl,
        dist_hpr_abs: metrics.dist_hpr,
        dist_laplace_abs: metrics.dist_laplace,
        thm2_ratio: metrics.thm2_ratio,
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| CliError::Io { path, source })
}

/// Shared body of `obfuscate` and `benchmark`: seeded runs, a report,
/// timing, and optionally per-run artifacts.
fn run_batch(cfg: &RunConfig, write_artifacts: bool) -> Result<i32, CliError> {
    let prepared = prepare(cfg)?;
    let mut report = BenchmarkReport::default();
    let mut any_cap = false;
    let mut any_infeasible = false;
    let mut any_failed = false;

    for run_idx in 0..cfg.runs {
        let seed = cfg.seed.wrapping_add(run_idx as u64);
        let params = privacy_params(cfg, prepared.beta, seed)?;
        match run_obfuscation(&prepared.inst, &prepared.d_orig, &params) {
            Ok((result, metrics)) => {
                match result.status {
                    BilevelStatus::OracleCapHit => any_cap = true,
                    BilevelStatus::Infeasible => any_infeasible = true,
                    _ => {}
                }
                if write_artifacts {
                    write_file(
                        &cfg.output_dir,
                        &format!("trace_{seed}.csv"),
                        &trace_to_csv(&result.trace),
                    )?;
                    if matches!(
                        result.status,
                        BilevelStatus::Converged
                            | BilevelStatus::FastPath
                            | BilevelStatus::OracleCapHit
                    ) {
                        write_file(
                            &cfg.output_dir,
                            &format!("released_case_{seed}.m"),
                            &emit_matpower(&prepared.network, Some(&result.d_star)),
                        )?;
                    }
                }
                report
                    .rows
                    .push(row_from_run(seed, &prepared, &result, &metrics));
            }
            Err(err) => {
                // Benchmark semantics: record and continue.
                log::error!("run with seed {seed} failed: {err}");
                any_failed = true;
                report.rows.push(RunRow {
                    seed,
                    status: BilevelStatus::Infeasible,
                    oracle_calls: 0,
                    wall: Duration::ZERO,
                    cost_err_bl_pct: None,
                    cost_err_hpr_pct: None,
                    dist_bl: None,
                    dist_hpr: None,
                    dist_laplace: None,
                    dist_bl_abs: None,
                    dist_hpr_abs: None,
                    dist_laplace_abs: None,
                    thm2_ratio: None,
                });
            }
        }
    }

    write_file(&cfg.output_dir, "report.csv", &report.to_report_csv())?;
    write_file(&cfg.output_dir, "timing.csv", &report.to_timing_csv())?;

    if any_infeasible || any_failed {
        return Ok(exit::INFEASIBLE);
    }
    if any_cap {
        return Ok(exit::ORACLE_CAP);
    }
    Ok(exit::OK)
}

/// Obfuscate-and-release: one run per seed, released case plus trace
/// plus report.
pub fn cmd_obfuscate(cfg: &RunConfig) -> i32 {
    match run_batch(cfg, true) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("dp-bilevel: {err}");
            err.exit_code()
        }
    }
}

/// Seeded benchmark protocol: per-run statistics and aggregates.
pub fn cmd_benchmark(cfg: &RunConfig) -> i32 {
    match run_batch(cfg, false) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("dp-bilevel: {err}");
            err.exit_code()
        }
    }
}

/// One follower solve on the case's own demands.
pub fn cmd_solve(cfg: &RunConfig) -> i32 {
    match cmd_solve_inner(cfg) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("dp-bilevel: {err}");
            err.exit_code()
        }
    }
}

fn cmd_solve_inner(cfg: &RunConfig) -> Result<i32, CliError> {
    let network = load_network(&cfg.case_path)?;
    let d_orig = network.demand_vector();
    let inst = DcOpfInstance::new(
        network.clone(),
        CostTarget::new(0.0, CostTargetSource::Public).expect("finite"),
        1.0,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let program = build_follower(&inst, &d_orig).map_err(|e| CliError::Usage(e.to_string()))?;
    let sol = solve(&program).map_err(BilevelError::from)?;
    let layout = VarLayout::follower(&network);
    match sol.status {
        SolveStatus::Optimal => {
            let dispatch = layout.dispatch(&sol.x);
            if cfg.json {
                let value = serde_json::json!({
                    "objective": sol.objective,
                    "dispatch": dispatch,
                    "status": "optimal",
                });
                println!("{value}");
            } else {
                println!("objective: {}", sol.objective);
                for (k, p) in dispatch.iter().enumerate() {
                    println!("gen {}: {} p.u.", k + 1, p);
                }
            }
            Ok(exit::OK)
        }
        SolveStatus::Infeasible => {
            if cfg.json {
                println!("{}", serde_json::json!({"status": "infeasible"}));
            } else {
                eprintln!("dp-bilevel: case is infeasible at its own demands");
            }
            Ok(exit::INFEASIBLE)
        }
        status => Err(CliError::Engine(BilevelError::SolverFailure {
            context: "solve command",
            status,
        })),
    }
}

/// Probe the push-up curve over an ascending budget grid; the emitted
/// follower costs validate the monotonicity assumption empirically.
pub fn cmd_probe_monotonicity(cfg: &RunConfig) -> i32 {
    match probe_inner(cfg) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("dp-bilevel: {err}");
            err.exit_code()
        }
    }
}

/// One probe row: the push-up outcome at a single budget.
#[derive(Debug, Clone)]
pub struct ProbeRow {
    pub delta: f64,
    pub delta_up: Option<f64>,
    pub pushup_m: Option<f64>,
    pub follower_cost: Option<f64>,
    pub in_band: Option<bool>,
}

/// Evaluate the probe grid against an instance and noisy vector.
pub fn probe_curve(
    inst: &DcOpfInstance,
    d_tilde: &DemandVector,
    grid: &[f64],
) -> Result<Vec<ProbeRow>, CliError> {
    let layout = VarLayout::extended(&inst.network);
    let mut rows = Vec::new();
    for &delta in grid {
        let program = build_pushup(inst, d_tilde, delta).map_err(BilevelError::from)?;
        let sol = solve(&program).map_err(BilevelError::from)?;
        match sol.status {
            SolveStatus::Optimal => {
                let d_up = DemandVector::new(layout.demands(&sol.x), DemandRole::PushUpPoint)
                    .map_err(BilevelError::from)?;
                let dist = l2sq_distance(&d_up, d_tilde).map_err(BilevelError::from)?;
                let follower =
                    build_follower(inst, &d_up).map_err(BilevelError::from)?;
                let fsol = solve(&follower).map_err(BilevelError::from)?;
                if fsol.status != SolveStatus::Optimal {
                    return Err(CliError::Engine(BilevelError::SolverFailure {
                        context: "probe follower",
                        status: fsol.status,
                    }));
                }
                let in_band =
                    (fsol.objective - inst.cost_target.f_tilde).abs() <= inst.beta + 1e-9;
                rows.push(ProbeRow {
                    delta,
                    delta_up: Some(dist),
                    pushup_m: Some(sol.objective),
                    follower_cost: Some(fsol.objective),
                    in_band: Some(in_band),
                });
            }
            SolveStatus::Infeasible => rows.push(ProbeRow {
                delta,
                delta_up: None,
                pushup_m: None,
                follower_cost: None,
                in_band: None,
            }),
            status => {
                return Err(CliError::Engine(BilevelError::SolverFailure {
                    context: "probe push-up",
                    status,
                }))
            }
        }
    }
    Ok(rows)
}

pub fn probe_rows_to_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CSV_VERSION_LINE}");
    let _ = writeln!(out, "delta,delta_up,pushup_m,follower_cost,in_band,status");
    for r in rows {
        let status = if r.follower_cost.is_some() { "ok" } else { "infeasible" };
        let in_band = match r.in_band {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_num(r.delta),
            fmt_opt(r.delta_up),
            fmt_opt(r.pushup_m),
            fmt_opt(r.follower_cost),
            in_band,
            status
        );
    }
    out
}

fn probe_inner(cfg: &RunConfig) -> Result<i32, CliError> {
    let grid = cfg
        .delta_grid
        .clone()
        .ok_or_else(|| CliError::Usage("--delta-grid required".into()))?;
    if grid.is_empty() {
        return Err(CliError::Usage("--delta-grid must be non-empty".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] < 0.0 {
        return Err(CliError::Usage(
            "--delta-grid must be ascending and nonnegative".into(),
        ));
    }
    let prepared = prepare(cfg)?;
    let params = privacy_params(cfg, prepared.beta, cfg.seed)?;
    let mut noise = crate::dp::LaplaceNoise::for_params(&params);
    let d_tilde = crate::dp::obfuscate_demands(&prepared.d_orig, &params, &mut noise)
        .map_err(BilevelError::from)?;
    let rows = probe_curve(&prepared.inst, &d_tilde, &grid)?;
    write_file(&cfg.output_dir, "probe.csv", &probe_rows_to_csv(&rows))?;
    Ok(exit::OK)
}
