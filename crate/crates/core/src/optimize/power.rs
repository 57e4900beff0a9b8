//! Max-min SE power allocation for a fixed binary mode vector.
//!
//! Bisection on the SINR target `t`. A target is declared feasible when an
//! SCA on the amplitudes `x_mk = sqrt(p_mk)` of the communication APs and
//! the sensing fractions `sigma_ml` of the sensing APs finds a point with
//! non-negative SINR margin under the MASR and power constraints.

use std::time::Instant;

use nalgebra::DMatrix;

use super::{OptimizeError, ScaledModel, SchemeResult};
use crate::conic::{solve_conic, ConicProgram, LinExpr, SolveOptions, SolveStatus};
use crate::model::NetworkRealization;
use crate::precoding::Grouping;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerOptions {
    /// Bisection stops once `t_hi - t_lo <= tol * max(t_hi, 1)`.
    pub tol: f64,
    pub max_bisections: usize,
    pub inner_max_iter: usize,
    pub inner_tol: f64,
    pub solver: SolveOptions,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_bisections: 60,
            inner_max_iter: 30,
            inner_tol: 1e-6,
            solver: SolveOptions { feas_tol: 1e-7, gap_tol: 1e-7, max_iter: 200 },
        }
    }
}

/// Bisection outcome: `t_lo` is attained by the returned powers, targets at
/// or above `t_hi` were found infeasible.
#[derive(Debug, Clone)]
pub struct PowerSolution {
    pub feasible: bool,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Amplitudes on communication APs (rows of sensing APs are zero).
    pub x: DMatrix<f64>,
    /// Sensing fractions on sensing APs (rows of communication APs are zero).
    pub sigma: DMatrix<f64>,
    pub bisections: usize,
    pub conic_solves: usize,
}

const KAPPA_MARGIN: f64 = 1e-5;

/// Optimizes power on fixed modes (`true` = communication) and evaluates
/// the result with the closed forms.
pub fn pa_fixed_modes(
    real: &NetworkRealization,
    grouping: &Grouping,
    modes: &[bool],
    kappa: f64,
    opts: &PowerOptions,
) -> Result<SchemeResult, OptimizeError> {
    let start = Instant::now();
    let sm = ScaledModel::new(real, grouping)?;
    if modes.len() != sm.m {
        return Err(OptimizeError::InvalidArgument(format!("{} modes for {} APs", modes.len(), sm.m)));
    }
    let sol = solve_power(&sm, modes, kappa, opts)?;
    if !sol.feasible {
        return Ok(SchemeResult::infeasible(sm.m, sm.k, sm.l, sol.bisections, start.elapsed()));
    }
    let a: Vec<f64> = modes.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
    let p = sol.x.map(|v| v * v);
    let mut alloc = sm.to_alloc(&a, &p, &sol.sigma);
    alloc.t = sol.t_lo;
    SchemeResult::from_allocation(real, grouping, alloc, kappa, sol.bisections, start.elapsed())
}

/// Runs the bisection and returns the bracket and the scaled powers
/// (`x^2` are the `p_mk` fractions of communication APs).
pub fn solve_fixed_modes(
    real: &NetworkRealization,
    grouping: &Grouping,
    modes: &[bool],
    kappa: f64,
    opts: &PowerOptions,
) -> Result<PowerSolution, OptimizeError> {
    let sm = ScaledModel::new(real, grouping)?;
    if modes.len() != sm.m {
        return Err(OptimizeError::InvalidArgument(format!("{} modes for {} APs", modes.len(), sm.m)));
    }
    solve_power(&sm, modes, kappa, opts)
}

fn solve_power(
    sm: &ScaledModel,
    modes: &[bool],
    kappa: f64,
    opts: &PowerOptions,
) -> Result<PowerSolution, OptimizeError> {
    let kappa_eff = kappa * (1.0 + KAPPA_MARGIN);
    let com: Vec<usize> = (0..sm.m).filter(|&m| modes[m]).collect();
    let sen: Vec<usize> = (0..sm.m).filter(|&m| !modes[m]).collect();
    let mut out = PowerSolution {
        feasible: false,
        t_lo: 0.0,
        t_hi: 0.0,
        x: DMatrix::zeros(sm.m, sm.k),
        sigma: DMatrix::zeros(sm.m, sm.l),
        bisections: 0,
        conic_solves: 0,
    };
    if sen.is_empty() {
        return Ok(out);
    }
    let Some(sigma0) = sensing_start(sm, &sen, kappa_eff, opts, &mut out.conic_solves)? else {
        return Ok(out);
    };
    out.feasible = true;
    out.sigma = sigma0;
    if com.is_empty() {
        return Ok(out);
    }

    // Equal-power direction, shrunk until MASR holds.
    let mut x = DMatrix::zeros(sm.m, sm.k);
    for &m in &com {
        let total: f64 = sm.gamma.row(m).sum();
        for k in 0..sm.k {
            x[(m, k)] = (sm.gamma_nu[(m, k)] / (sm.n * total)).sqrt();
        }
    }
    let a: Vec<f64> = modes.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
    for _ in 0..200 {
        if sm.masr_margins(&a, &x.map(|v| v * v), &out.sigma, kappa_eff).iter().all(|&v| v >= 0.0) {
            break;
        }
        x /= 2.0;
    }
    out.x = x;
    out.t_lo = min_sinr(sm, &a, &out.x, &out.sigma);
    // Largest interference-free SINR over UEs.
    out.t_hi = (0..sm.k)
        .map(|k| com.iter().map(|&m| sm.w[(m, k)]).sum::<f64>().powi(2))
        .fold(0.0, f64::max);
    let cap = (0..sm.k)
        .map(|k| com.iter().map(|&m| sm.w[(m, k)]).sum::<f64>().powi(2))
        .fold(f64::INFINITY, f64::min);

    while out.t_hi - out.t_lo > opts.tol * out.t_hi.max(1.0) && out.bisections < opts.max_bisections {
        out.bisections += 1;
        let mid = 0.5 * (out.t_lo + out.t_hi);
        // No UE can exceed its interference-free SINR.
        if mid > cap {
            out.t_hi = mid;
            continue;
        }
        match feasible_at(sm, &com, &sen, mid, kappa_eff, &out.x, &out.sigma, opts, &mut out.conic_solves)? {
            Some((x, sigma)) => {
                let t = min_sinr(sm, &a, &x, &sigma);
                if t > out.t_lo {
                    out.t_lo = t.min(out.t_hi);
                    out.x = x;
                    out.sigma = sigma;
                } else {
                    out.t_hi = mid;
                }
            }
            None => out.t_hi = mid,
        }
    }
    out.t_lo = min_sinr(sm, &a, &out.x, &out.sigma);
    Ok(out)
}

fn min_sinr(sm: &ScaledModel, a: &[f64], x: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    sm.sinr(a, &x.map(|v| v * v), sigma).into_iter().fold(f64::INFINITY, f64::min)
}

/// Sensing fractions meeting MASR with no communication power, or `None`
/// when none exist.
fn sensing_start(
    sm: &ScaledModel,
    sen: &[usize],
    kappa: f64,
    opts: &PowerOptions,
    solves: &mut usize,
) -> Result<Option<DMatrix<f64>>, OptimizeError> {
    let a: Vec<f64> = (0..sm.m).map(|m| if sen.contains(&m) { 0.0 } else { 1.0 }).collect();
    let budget: Vec<f64> = a.iter().map(|a| 1.0 - a).collect();
    *solves += 1;
    sensing_split(sm, &a, &budget, kappa, &opts.solver)
}

/// Sensing fractions within `budget` per AP that satisfy every MASR
/// constraint at zero communication power. Tries the even split across
/// zones first, then maximizes the worst margin with an LP.
pub(crate) fn sensing_split(
    sm: &ScaledModel,
    a: &[f64],
    budget: &[f64],
    kappa: f64,
    solver: &SolveOptions,
) -> Result<Option<DMatrix<f64>>, OptimizeError> {
    let zero_p = DMatrix::zeros(sm.m, sm.k);
    let even = DMatrix::from_fn(sm.m, sm.l, |m, _| budget[m] / sm.l as f64);
    if sm.masr_margins(a, &zero_p, &even, kappa).iter().all(|&v| v >= 0.0) {
        return Ok(Some(even));
    }
    let active: Vec<usize> = (0..sm.m).filter(|&m| budget[m] > 0.0 && a[m] < 1.0).collect();
    let mut prog = ConicProgram::new();
    let vars: Vec<Vec<usize>> = active.iter().map(|_| prog.add_vars(sm.l, 0.0, f64::INFINITY)).collect();
    let r = prog.add_var(f64::NEG_INFINITY, 1.0);
    prog.set_objective(r, 1.0);
    for (i, v) in vars.iter().enumerate() {
        let mut e = LinExpr::constant(budget[active[i]]);
        for &j in v {
            e.add_term(j, -1.0);
        }
        prog.nonneg(e);
    }
    for l in 0..sm.l {
        let mut e = LinExpr::default();
        for (i, &m) in active.iter().enumerate() {
            let w = 1.0 - a[m];
            e.add_term(vars[i][l], w);
            for lp in (0..sm.l).filter(|&lp| lp != l) {
                e.add_term(vars[i][lp], -w * kappa / (sm.n * sm.n) * sm.x[m][(l, lp)]);
            }
        }
        e.add_term(r, -1.0);
        prog.nonneg(e);
    }
    let sol = solve_conic(&prog, solver)?;
    if sol.status != SolveStatus::Optimal || sol.x[r] <= 0.0 {
        return Ok(None);
    }
    let mut sigma = DMatrix::zeros(sm.m, sm.l);
    for (i, &m) in active.iter().enumerate() {
        for l in 0..sm.l {
            sigma[(m, l)] = sol.x[vars[i][l]].max(0.0);
        }
        let s = sigma.row(m).sum();
        if s > budget[m] {
            sigma.row_mut(m).scale_mut(budget[m] / s);
        }
    }
    let ok = sm.masr_margins(a, &zero_p, &sigma, kappa).iter().all(|&v| v >= 0.0);
    Ok(ok.then_some(sigma))
}

/// `sum_{m in S} sigma_ml - kappa/N^2 sum_{m in S} sum_{l' != l} X_mll' sigma_ml'`.
fn masr_lhs(sm: &ScaledModel, sen: &[usize], vars: &[Vec<usize>], l: usize, kappa: f64) -> LinExpr {
    let mut e = LinExpr::default();
    for (i, &m) in sen.iter().enumerate() {
        e.add_term(vars[i][l], 1.0);
        for lp in (0..sm.l).filter(|&lp| lp != l) {
            e.add_term(vars[i][lp], -kappa / (sm.n * sm.n) * sm.x[m][(l, lp)]);
        }
    }
    e
}

/// SCA maximizing the SINR margin at target `t`; returns the first point
/// with non-negative margin.
#[allow(clippy::too_many_arguments)]
fn feasible_at(
    sm: &ScaledModel,
    com: &[usize],
    sen: &[usize],
    t: f64,
    kappa: f64,
    x_start: &DMatrix<f64>,
    sigma_start: &DMatrix<f64>,
    opts: &PowerOptions,
    solves: &mut usize,
) -> Result<Option<(DMatrix<f64>, DMatrix<f64>)>, OptimizeError> {
    let mut x_cur = x_start.clone();
    let mut sigma_cur = sigma_start.clone();
    let mut r_prev = f64::NEG_INFINITY;
    for _ in 0..opts.inner_max_iter {
        let mut prog = ConicProgram::new();
        let xv: Vec<Vec<usize>> = com.iter().map(|_| prog.add_vars(sm.k, 0.0, f64::INFINITY)).collect();
        let sv: Vec<Vec<usize>> = sen.iter().map(|_| prog.add_vars(sm.l, 0.0, f64::INFINITY)).collect();
        let r = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
        prog.set_objective(r, 1.0);

        for v in &xv {
            prog.soc(LinExpr::constant(1.0), v.iter().map(|&i| LinExpr::var(i)).collect());
        }
        for v in &sv {
            let mut e = LinExpr::constant(1.0);
            for &i in v {
                e.add_term(i, -1.0);
            }
            prog.nonneg(e);
        }
        for k in 0..sm.k {
            // z0 (2z - z0) / t - sum_S B sigma - 1 - r >= sum_C sum_k' R x^2
            let z0: f64 = com.iter().map(|&m| sm.w[(m, k)] * x_cur[(m, k)]).sum();
            let mut lhs = LinExpr::constant(-1.0 - z0 * z0 / t);
            for (i, &m) in com.iter().enumerate() {
                lhs.add_term(xv[i][k], 2.0 * z0 * sm.w[(m, k)] / t);
            }
            for (i, &m) in sen.iter().enumerate() {
                for &v in &sv[i] {
                    lhs.add_term(v, -sm.b[(m, k)]);
                }
            }
            lhs.add_term(r, -1.0);
            let mut ws = Vec::new();
            for (i, &m) in com.iter().enumerate() {
                for kp in 0..sm.k {
                    let c = sm.r[m][(k, kp)];
                    if c > 0.0 {
                        ws.push(LinExpr::term(xv[i][kp], c.sqrt()));
                    }
                }
            }
            prog.rsoc(lhs, LinExpr::constant(0.5), ws);
        }
        for l in 0..sm.l {
            let lhs = masr_lhs(sm, sen, &sv, l, kappa);
            let c = (kappa / sm.n).sqrt();
            let ws = xv.iter().flatten().map(|&i| LinExpr::term(i, c)).collect();
            prog.rsoc(lhs, LinExpr::constant(0.5), ws);
        }

        *solves += 1;
        let sol = solve_conic(&prog, &opts.solver)?;
        if sol.status != SolveStatus::Optimal {
            return Ok(None);
        }
        for (i, &m) in com.iter().enumerate() {
            for k in 0..sm.k {
                x_cur[(m, k)] = sol.x[xv[i][k]].max(0.0);
            }
            let nrm = x_cur.row(m).norm();
            if nrm > 1.0 {
                x_cur.row_mut(m).scale_mut(1.0 / nrm);
            }
        }
        for (i, &m) in sen.iter().enumerate() {
            for l in 0..sm.l {
                sigma_cur[(m, l)] = sol.x[sv[i][l]].max(0.0);
            }
            let s = sigma_cur.row(m).sum();
            if s > 1.0 {
                sigma_cur.row_mut(m).scale_mut(1.0 / s);
            }
        }
        let rv = sol.x[r];
        if rv >= 0.0 {
            return Ok(Some((x_cur, sigma_cur)));
        }
        if rv - r_prev <= opts.inner_tol * (1.0 + rv.abs()) {
            return Ok(None);
        }
        r_prev = rv;
    }
    Ok(None)
}
