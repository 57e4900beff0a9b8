//! Linear objective, linear and second-order-cone constraints, and a solve
//! contract backed by the Clarabel interior-point solver.
//!
//! Every constraint is a list of affine rows tagged with a cone:
//!
//! * `NonNeg`: each row is `>= 0`
//! * `Zero`: each row is `== 0`
//! * `Soc`: `r0 >= ||(r1, .., rn)||`
//! * `RotatedSoc`: `2 r0 r1 >= ||(r2, .., rn)||^2` with `r0, r1 >= 0`

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConicError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Affine expression `constant + sum coef * x[var]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        Self { terms: vec![(i, 1.0)], constant: 0.0 }
    }

    pub fn term(i: usize, c: f64) -> Self {
        Self { terms: vec![(i, c)], constant: 0.0 }
    }

    pub fn add_term(&mut self, i: usize, c: f64) -> &mut Self {
        if c != 0.0 {
            self.terms.push((i, c));
        }
        self
    }

    pub fn add_const(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) -> &mut Self {
        for &(i, c) in &other.terms {
            self.add_term(i, s * c);
        }
        self.constant += s * other.constant;
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut e = LinExpr::default();
        e.add_scaled(self, s);
        e
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    fn magnitude(&self, x: &[f64]) -> f64 {
        self.constant.abs() + self.terms.iter().map(|&(i, c)| (c * x[i]).abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    NonNeg,
    Zero,
    Soc,
    RotatedSoc,
}

impl ConeKind {
    fn tag(self) -> &'static str {
        match self {
            ConeKind::NonNeg => "nonneg",
            ConeKind::Zero => "zero",
            ConeKind::Soc => "soc",
            ConeKind::RotatedSoc => "rsoc",
        }
    }

    fn from_tag(s: &str) -> Option<Self> {
        Some(match s {
            "nonneg" => ConeKind::NonNeg,
            "zero" => ConeKind::Zero,
            "soc" => ConeKind::Soc,
            "rsoc" => ConeKind::RotatedSoc,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub kind: ConeKind,
    pub rows: Vec<LinExpr>,
}

/// A maximization problem over `n_vars` variables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with bounds (use infinities for none); returns its index.
    pub fn add_var(&mut self, lower: f64, upper: f64) -> usize {
        self.n_vars += 1;
        self.objective.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        self.n_vars - 1
    }

    pub fn add_vars(&mut self, count: usize, lower: f64, upper: f64) -> Vec<usize> {
        (0..count).map(|_| self.add_var(lower, upper)).collect()
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.objective[var] = coef;
    }

    /// `expr >= 0`.
    pub fn nonneg(&mut self, expr: LinExpr) {
        self.push(ConeKind::NonNeg, vec![expr]);
    }

    /// `lhs >= rhs`.
    pub fn ge(&mut self, lhs: &LinExpr, rhs: &LinExpr) {
        let mut e = lhs.clone();
        e.add_scaled(rhs, -1.0);
        self.nonneg(e);
    }

    pub fn zero(&mut self, expr: LinExpr) {
        self.push(ConeKind::Zero, vec![expr]);
    }

    /// `t >= ||xs||`.
    pub fn soc(&mut self, t: LinExpr, xs: Vec<LinExpr>) {
        let mut rows = vec![t];
        rows.extend(xs);
        self.push(ConeKind::Soc, rows);
    }

    /// `2 u v >= ||ws||^2`, `u, v >= 0`.
    pub fn rsoc(&mut self, u: LinExpr, v: LinExpr, ws: Vec<LinExpr>) {
        let mut rows = vec![u, v];
        rows.extend(ws);
        self.push(ConeKind::RotatedSoc, rows);
    }

    pub fn push(&mut self, kind: ConeKind, rows: Vec<LinExpr>) {
        self.constraints.push(Constraint { kind, rows });
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest constraint or bound violation at `x`, each measured relative
    /// to `1 +` the magnitude of the terms involved.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, &v) in x.iter().enumerate() {
            worst = worst
                .max((self.lower[i] - v) / (1.0 + v.abs()))
                .max((v - self.upper[i]) / (1.0 + v.abs()));
        }
        for c in &self.constraints {
            let vals: Vec<f64> = c.rows.iter().map(|r| r.eval(x)).collect();
            let scale = 1.0 + c.rows.iter().map(|r| r.magnitude(x)).fold(0.0, f64::max);
            let v = match c.kind {
                ConeKind::NonNeg => vals.iter().map(|&r| -r).fold(0.0, f64::max),
                ConeKind::Zero => vals.iter().map(|r| r.abs()).fold(0.0, f64::max),
                ConeKind::Soc => {
                    let tail = vals[1..].iter().map(|r| r * r).sum::<f64>().sqrt();
                    tail - vals[0]
                }
                ConeKind::RotatedSoc => {
                    let (u, w) = (vals[0], vals[1]);
                    let tail = vals[2..].iter().map(|r| r * r).sum::<f64>();
                    let s = ((u - w) * (u - w) / 2.0 + tail).sqrt();
                    (s - (u + w) / std::f64::consts::SQRT_2).max(-u).max(-w)
                }
            };
            worst = worst.max(v / scale);
        }
        worst
    }

    /// Plain-text dump, one constraint per line with its cone tag.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vars {}", self.n_vars);
        let obj: Vec<String> = self.objective.iter().map(|c| format!("{c:?}")).collect();
        let _ = writeln!(s, "objective {}", obj.join(" "));
        for i in 0..self.n_vars {
            let _ = writeln!(s, "bound {} {:?} {:?}", i, self.lower[i], self.upper[i]);
        }
        for c in &self.constraints {
            let rows: Vec<String> = c
                .rows
                .iter()
                .map(|r| {
                    let mut t = format!("{:?}", r.constant);
                    for &(i, v) in &r.terms {
                        let _ = write!(t, " {i}:{v:?}");
                    }
                    t
                })
                .collect();
            let _ = writeln!(s, "{} | {}", c.kind.tag(), rows.join(" | "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ConicError> {
        let perr = |line: usize, msg: &str| ConicError::Parse { line, msg: msg.to_string() };
        let num = |line: usize, s: &str| s.parse::<f64>().map_err(|_| perr(line, &format!("bad number {s:?}")));
        let mut prog = ConicProgram::new();
        for (ln, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("vars ") {
                let n: usize = rest.trim().parse().map_err(|_| perr(ln, "bad variable count"))?;
                prog.n_vars = n;
                prog.objective = vec![0.0; n];
                prog.lower = vec![f64::NEG_INFINITY; n];
                prog.upper = vec![f64::INFINITY; n];
            } else if let Some(rest) = line.strip_prefix("objective") {
                prog.objective = rest.split_whitespace().map(|t| num(ln, t)).collect::<Result<_, _>>()?;
            } else if let Some(rest) = line.strip_prefix("bound ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(perr(ln, "bound needs index, lower, upper"));
                }
                let i: usize = f[0].parse().map_err(|_| perr(ln, "bad bound index"))?;
                if i >= prog.n_vars {
                    return Err(perr(ln, "bound index out of range"));
                }
                prog.lower[i] = num(ln, f[1])?;
                prog.upper[i] = num(ln, f[2])?;
            } else {
                let mut parts = line.split('|').map(str::trim);
                let kind = ConeKind::from_tag(parts.next().unwrap_or(""))
                    .ok_or_else(|| perr(ln, "unknown cone tag"))?;
                let mut rows = Vec::new();
                for p in parts {
                    let mut toks = p.split_whitespace();
                    let constant = num(ln, toks.next().ok_or_else(|| perr(ln, "empty row"))?)?;
                    let mut terms = Vec::new();
                    for t in toks {
                        let (i, v) = t.split_once(':').ok_or_else(|| perr(ln, "term must be idx:coef"))?;
                        terms.push((i.parse().map_err(|_| perr(ln, "bad term index"))?, num(ln, v)?));
                    }
                    rows.push(LinExpr { terms, constant });
                }
                prog.constraints.push(Constraint { kind, rows });
            }
        }
        Ok(prog)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Primal point returned by the solver (meaningful for `Optimal`, best
    /// effort otherwise).
    pub x: Vec<f64>,
    /// Objective value `c^T x` of the maximization.
    pub objective: f64,
    pub iterations: u32,
    pub max_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { feas_tol: 1e-7, gap_tol: 1e-8, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

/// Structural checks; an empty result means the program is well formed.
pub fn validate_program(prog: &ConicProgram) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |m: String| out.push(Diagnostic { severity: Severity::Error, message: m });
    let n = prog.n_vars;
    if prog.objective.len() != n {
        err(format!("objective has length {} but there are {n} variables", prog.objective.len()));
    }
    if prog.lower.len() != n || prog.upper.len() != n {
        err(format!("bounds have lengths {}/{} for {n} variables", prog.lower.len(), prog.upper.len()));
    }
    if prog.objective.iter().any(|c| !c.is_finite()) {
        err("objective has a non-finite coefficient".into());
    }
    for (i, (lo, hi)) in prog.lower.iter().zip(&prog.upper).enumerate() {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            err(format!("variable {i} has empty bounds [{lo}, {hi}]"));
        }
    }
    let mut used = vec![false; n];
    for (ci, c) in prog.constraints.iter().enumerate() {
        let min_dim = match c.kind {
            ConeKind::NonNeg | ConeKind::Zero => 1,
            ConeKind::Soc => 2,
            ConeKind::RotatedSoc => 3,
        };
        if c.rows.len() < min_dim {
            err(format!(
                "constraint {ci}: {} cone of dimension {} (needs at least {min_dim})",
                c.kind.tag(),
                c.rows.len()
            ));
        }
        for r in &c.rows {
            if !r.constant.is_finite() {
                err(format!("constraint {ci}: non-finite constant"));
            }
            for &(i, v) in &r.terms {
                if i >= n {
                    err(format!("constraint {ci}: variable index {i} out of range"));
                } else {
                    used[i] = true;
                }
                if !v.is_finite() {
                    err(format!("constraint {ci}: non-finite coefficient"));
                }
            }
        }
    }
    for i in 0..n.min(prog.objective.len()).min(prog.upper.len()) {
        let c = prog.objective[i];
        let free_dir = (c > 0.0 && prog.upper[i].is_infinite()) || (c < 0.0 && prog.lower[i].is_infinite());
        if !used[i] && free_dir {
            out.push(Diagnostic {
                severity: Severity::Warning,
                message: format!("variable {i} improves the objective without limit (possibly unbounded)"),
            });
        }
    }
    out
}

/// Solves `prog`; solver trouble is reported through the status.
pub fn solve_conic(prog: &ConicProgram, opts: &SolveOptions) -> Result<ConicSolution, ConicError> {
    if let Some(d) = validate_program(prog).into_iter().find(|d| d.severity == Severity::Error) {
        return Err(ConicError::Malformed(d.message));
    }
    let n = prog.n_vars;
    // Rows in Clarabel form: s = b - A x with s in the cone, so a row
    // `d + c.x` becomes A = -c, b = d.
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let push_row = |e: &LinExpr, scale: f64, trip: &mut Vec<(usize, usize, f64)>, b: &mut Vec<f64>| {
        let r = b.len();
        for &(i, c) in &e.terms {
            trip.push((r, i, -c * scale));
        }
        b.push(e.constant * scale);
    };
    let push_cone = |cones: &mut Vec<SupportedConeT<f64>>, kind: ConeKind, dim: usize| {
        match (cones.last_mut(), kind) {
            (Some(SupportedConeT::NonnegativeConeT(d)), ConeKind::NonNeg) => *d += dim,
            (Some(SupportedConeT::ZeroConeT(d)), ConeKind::Zero) => *d += dim,
            (_, ConeKind::NonNeg) => cones.push(SupportedConeT::NonnegativeConeT(dim)),
            (_, ConeKind::Zero) => cones.push(SupportedConeT::ZeroConeT(dim)),
            (_, _) => cones.push(SupportedConeT::SecondOrderConeT(dim)),
        }
    };
    for i in 0..n {
        let (lo, hi) = (prog.lower[i], prog.upper[i]);
        if lo == hi {
            push_row(&LinExpr { terms: vec![(i, 1.0)], constant: -lo }, 1.0, &mut triplets, &mut b);
            push_cone(&mut cones, ConeKind::Zero, 1);
            continue;
        }
        if lo.is_finite() {
            push_row(&LinExpr { terms: vec![(i, 1.0)], constant: -lo }, 1.0, &mut triplets, &mut b);
            push_cone(&mut cones, ConeKind::NonNeg, 1);
        }
        if hi.is_finite() {
            push_row(&LinExpr { terms: vec![(i, -1.0)], constant: hi }, 1.0, &mut triplets, &mut b);
            push_cone(&mut cones, ConeKind::NonNeg, 1);
        }
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for c in &prog.constraints {
        match c.kind {
            ConeKind::NonNeg | ConeKind::Zero | ConeKind::Soc => {
                for r in &c.rows {
                    push_row(r, 1.0, &mut triplets, &mut b);
                }
            }
            ConeKind::RotatedSoc => {
                let mut plus = c.rows[0].scaled(h);
                plus.add_scaled(&c.rows[1], h);
                let mut minus = c.rows[0].scaled(h);
                minus.add_scaled(&c.rows[1], -h);
                push_row(&plus, 1.0, &mut triplets, &mut b);
                push_row(&minus, 1.0, &mut triplets, &mut b);
                for r in &c.rows[2..] {
                    push_row(r, 1.0, &mut triplets, &mut b);
                }
            }
        }
        push_cone(&mut cones, c.kind, c.rows.len());
    }
    let n_rows = b.len();
    let a = csc_from_triplets(n_rows, n, triplets);
    let p = CscMatrix::zeros((n, n));
    let q: Vec<f64> = prog.objective.iter().map(|c| -c).collect();
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_feas(opts.feas_tol)
        .tol_gap_abs(opts.gap_tol)
        .tol_gap_rel(opts.gap_tol)
        .max_iter(opts.max_iter)
        .build()
        .map_err(|e| ConicError::Malformed(format!("solver settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| ConicError::Malformed(format!("solver rejected the program: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    let x = sol.x.clone();
    let finite = x.iter().all(|v| v.is_finite());
    let violation = if finite { prog.max_violation(&x) } else { f64::INFINITY };
    let accept = finite && violation <= 10.0 * opts.feas_tol.max(1e-7);
    let status = match sol.status {
        SolverStatus::Solved => {
            if accept {
                SolveStatus::Optimal
            } else {
                SolveStatus::NumericalFailure
            }
        }
        SolverStatus::AlmostSolved => {
            if accept {
                SolveStatus::Optimal
            } else {
                SolveStatus::NumericalFailure
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    };
    Ok(ConicSolution {
        status,
        objective: if finite { prog.objective_value(&x) } else { f64::NAN },
        x,
        iterations: sol.iterations,
        max_violation: violation,
    })
}

fn csc_from_triplets(m: usize, n: usize, mut t: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    t.sort_by_key(|a| (a.1, a.0));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(t.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(t.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in t {
        if last == Some((r, c)) {
            *nzval.last_mut().expect("previous entry exists") += v;
            continue;
        }
        rowval.push(r);
        nzval.push(v);
        colptr[c + 1] += 1;
        last = Some((r, c));
    }
    for j in 0..n {
        colptr[j + 1] += colptr[j];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lp_example() {
        let mut p = ConicProgram::new();
        let x = p.add_var(0.0, 1.0);
        p.set_objective(x, 1.0);
        let s = solve_conic(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn disk_example() {
        let mut p = ConicProgram::new();
        let x = p.add_var(f64::NEG_INFINITY, f64::INFINITY);
        let y = p.add_var(f64::NEG_INFINITY, f64::INFINITY);
        p.set_objective(x, 1.0);
        p.set_objective(y, 1.0);
        p.soc(LinExpr::constant(1.0), vec![LinExpr::var(x), LinExpr::var(y)]);
        let s = solve_conic(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective - 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn infeasible_example() {
        let mut p = ConicProgram::new();
        let x = p.add_var(f64::NEG_INFINITY, f64::INFINITY);
        p.set_objective(x, 1.0);
        p.nonneg(LinExpr { terms: vec![(x, 1.0)], constant: -1.0 });
        p.nonneg(LinExpr { terms: vec![(x, -1.0)], constant: 0.0 });
        let s = solve_conic(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_example() {
        let mut p = ConicProgram::new();
        let x = p.add_var(0.0, f64::INFINITY);
        p.set_objective(x, 1.0);
        p.nonneg(LinExpr::var(x));
        let s = solve_conic(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Unbounded);
    }

    #[test]
    fn rotated_cone_geometric_mean() {
        // max w s.t. 2 * 1 * 2 >= w^2  ->  w = 2
        let mut p = ConicProgram::new();
        let w = p.add_var(f64::NEG_INFINITY, f64::INFINITY);
        p.set_objective(w, 1.0);
        p.rsoc(LinExpr::constant(1.0), LinExpr::constant(2.0), vec![LinExpr::var(w)]);
        let s = solve_conic(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn validation_examples() {
        let mut p = ConicProgram::new();
        let x = p.add_var(0.0, 1.0);
        p.set_objective(x, 1.0);
        assert!(validate_program(&p).is_empty());
        p.push(ConeKind::Soc, vec![LinExpr::var(x)]);
        assert_eq!(validate_program(&p).len(), 1);
        let mut q = ConicProgram::new();
        q.add_var(0.0, 1.0);
        q.objective.push(1.0);
        assert!(validate_program(&q).iter().any(|d| d.severity == Severity::Error));
    }

    #[test]
    fn text_round_trip() {
        let mut p = ConicProgram::new();
        let x = p.add_var(0.0, f64::INFINITY);
        let y = p.add_var(-1.5, 2.0);
        p.set_objective(x, 0.1 + 0.2);
        p.rsoc(LinExpr::var(x), LinExpr::constant(1.0 / 3.0), vec![LinExpr::term(y, -7e-17)]);
        p.zero(LinExpr { terms: vec![(x, 1.0), (y, 2.0)], constant: -1.0 });
        let q = ConicProgram::from_text(&p.to_text()).unwrap();
        assert_eq!(p, q);
    }
}
