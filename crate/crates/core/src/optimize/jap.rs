//! Joint AP mode selection and power allocation by successive convex
//! approximation over the relaxed mode vector.
//!
//! Each iteration solves a second-order-cone restriction of the penalized
//! problem around the current point:
//!
//! * `x^2/t` is replaced by its tangent at the current point.
//! * Every bilinear product `a * y` is split as a difference of squares
//!   `((s a + y/s)^2 - (s a - y/s)^2)/4` and the subtracted square is
//!   linearized. The scale `s` balances both factors at the current point.
//! * The `-a^2` part of the binarity penalty `a - a^2` is replaced by its tangent.
//!
//! The current point is always feasible for the next restriction, so the
//! penalized objective does not decrease between accepted iterates.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::power::{pa_fixed_modes, sensing_split, PowerOptions};
use super::{OptimizeError, ScaledModel, SchemeResult, StopReason};
use crate::conic::{solve_conic, ConicProgram, LinExpr, SolveOptions, SolveStatus};
use crate::model::NetworkRealization;
use crate::precoding::Grouping;

#[derive(Debug, Clone, PartialEq)]
pub struct JapOptions {
    /// Binarity penalty weight.
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop once the objective changes by less than this between iterations.
    pub tol: f64,
    /// Re-initializations tried when the default starting point violates MASR.
    pub restarts: usize,
    /// Multiplier on the balancing scale of the difference-of-squares split.
    /// Larger values let the mode variables move more freely per iteration.
    pub split_scale: f64,
    pub solver: SolveOptions,
    /// Options for the power re-optimization after rounding.
    pub power: PowerOptions,
}

impl Default for JapOptions {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            max_iter: 100,
            tol: 1e-4,
            restarts: 5,
            split_scale: 3.0,
            solver: SolveOptions { feas_tol: 1e-7, gap_tol: 1e-7, max_iter: 200 },
            power: PowerOptions::default(),
        }
    }
}

/// Relaxed iterate in scaled units.
#[derive(Debug, Clone)]
struct Point {
    a: Vec<f64>,
    p: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

const KAPPA_MARGIN: f64 = 1e-6;
const A_FLOOR: f64 = 1e-2;
const Y_FLOOR: f64 = 1e-9;
const SLACK_VIOLATION: f64 = 1e-5;

/// Runs the SCA, rounds the modes at 1/2 and re-optimizes power on the
/// rounded modes. The relaxed modes and the objective trace are kept in the
/// result.
pub fn jap_opa<R: Rng + ?Sized>(
    real: &NetworkRealization,
    grouping: &Grouping,
    kappa: f64,
    opts: &JapOptions,
    rng: &mut R,
) -> Result<SchemeResult, OptimizeError> {
    let start = Instant::now();
    let sm = ScaledModel::new(real, grouping)?;
    let (m, k, l) = (sm.m, sm.k, sm.l);
    let kappa_eff = kappa * (1.0 + KAPPA_MARGIN);

    let Some(mut cur) = initial_point(&sm, kappa_eff, opts, rng)? else {
        return Ok(SchemeResult::infeasible(m, k, l, 0, start.elapsed()));
    };
    let mut f_cur = penalized_objective(&sm, &cur, opts.lambda);
    let mut trace = Vec::new();
    let mut stop = StopReason::IterationLimit;
    for _ in 0..opts.max_iter {
        let Some(next) = sca_step(&sm, &cur, kappa_eff, opts)? else {
            stop = StopReason::SolverFailure;
            break;
        };
        let f_next = penalized_objective(&sm, &next, opts.lambda);
        // Keep the current point when the candidate does not improve the
        // exact objective or misses MASR after round-off.
        if f_next < f_cur || sm.masr_margins(&next.a, &next.p, &next.sigma, kappa).iter().any(|&v| v < 0.0) {
            stop = StopReason::NoAscent;
            break;
        }
        trace.push(f_next);
        let delta = f_next - f_cur;
        cur = next;
        f_cur = f_next;
        if delta < opts.tol {
            stop = StopReason::Tolerance;
            break;
        }
    }

    let modes: Vec<bool> = cur.a.iter().map(|&a| a >= 0.5).collect();
    let mut res = pa_fixed_modes(real, grouping, &modes, kappa, &opts.power)?;
    res.iterations = trace.len();
    res.objective_trace = trace;
    res.relaxed_a = Some(DVector::from_vec(cur.a));
    res.stop = Some(stop);
    res.wall_time = start.elapsed();
    Ok(res)
}

/// Minimum SINR minus the binarity penalty.
fn penalized_objective(sm: &ScaledModel, x: &Point, lambda: f64) -> f64 {
    let t = sm.sinr(&x.a, &x.p, &x.sigma).into_iter().fold(f64::INFINITY, f64::min);
    t - lambda * x.a.iter().map(|a| a - a * a).sum::<f64>()
}

fn initial_point<R: Rng + ?Sized>(
    sm: &ScaledModel,
    kappa: f64,
    opts: &JapOptions,
    rng: &mut R,
) -> Result<Option<Point>, OptimizeError> {
    let mut a = vec![0.5; sm.m];
    for attempt in 0..=opts.restarts {
        if attempt > 0 {
            a = (0..sm.m).map(|_| rng.gen::<f64>()).collect();
        }
        let budget: Vec<f64> = a.iter().map(|a| (1.0 - a) / 2.0).collect();
        let Some(sigma) = sensing_split(sm, &a, &budget, kappa, &opts.solver)? else { continue };
        let mut p = DMatrix::from_fn(sm.m, sm.k, |i, j| {
            sm.gamma_nu[(i, j)] / (sm.n * sm.gamma.row(i).sum()) * a[i] * a[i]
        });
        for _ in 0..200 {
            if sm.masr_margins(&a, &p, &sigma, kappa).iter().all(|&v| v >= 0.0) {
                return Ok(Some(Point { a, p, sigma }));
            }
            p /= 2.0;
        }
    }
    Ok(None)
}

struct Layout {
    m: usize,
    k: usize,
    l: usize,
}

impl Layout {
    fn a(&self, m: usize) -> usize {
        m
    }
    fn p(&self, m: usize, k: usize) -> usize {
        self.m + m * self.k + k
    }
    fn u(&self, m: usize, k: usize) -> usize {
        self.m + self.m * self.k + m * self.k + k
    }
    fn sigma(&self, m: usize, l: usize) -> usize {
        self.m + 2 * self.m * self.k + m * self.l + l
    }
    fn t(&self) -> usize {
        self.m + 2 * self.m * self.k + self.m * self.l
    }
}

/// Adds `sum_i a_i y_i <= lhs` through the difference-of-squares bound around
/// `(a0, y0)`.
#[allow(clippy::too_many_arguments)]
fn bilinear_upper(
    prog: &mut ConicProgram,
    lay: &Layout,
    a0: &[f64],
    y: &[LinExpr],
    y0: &[f64],
    lhs: LinExpr,
    scale: f64,
) {
    let mut budget = lhs;
    let mut ws = Vec::with_capacity(y.len());
    for (m, (ym, &yv)) in y.iter().zip(y0).enumerate() {
        let s = (yv.abs().max(Y_FLOOR) / a0[m].max(A_FLOOR)).sqrt() * scale;
        // Linearized (s a - y/s)^2 / 4 moves to the budget side.
        let d0 = s * a0[m] - yv / s;
        let mut diff = LinExpr::term(lay.a(m), s);
        diff.add_scaled(ym, -1.0 / s);
        budget.add_scaled(&diff, 0.5 * d0);
        budget.add_const(-0.25 * d0 * d0);
        let mut sum = LinExpr::term(lay.a(m), s);
        sum.add_scaled(ym, 1.0 / s);
        ws.push(sum);
    }
    // sum ws^2 / 4 <= budget  <=>  2 * budget * 2 >= ||ws||^2
    prog.rsoc(budget, LinExpr::constant(2.0), ws);
}

fn sca_step(sm: &ScaledModel, cur: &Point, kappa: f64, opts: &JapOptions) -> Result<Option<Point>, OptimizeError> {
    let (m_aps, k_ues, l_zones) = (sm.m, sm.k, sm.l);
    let lay = Layout { m: m_aps, k: k_ues, l: l_zones };
    let mut prog = ConicProgram::new();
    prog.add_vars(m_aps, 0.0, 1.0);
    prog.add_vars(2 * m_aps * k_ues + m_aps * l_zones, 0.0, f64::INFINITY);
    let t = prog.add_var(0.0, f64::INFINITY);
    debug_assert_eq!(t, lay.t());
    let a0 = &cur.a;

    prog.set_objective(t, 1.0);
    for m in 0..m_aps {
        prog.set_objective(lay.a(m), -opts.lambda * (1.0 - 2.0 * a0[m]));
    }

    let sen_sum = |m: usize| {
        let mut e = LinExpr::default();
        for l in 0..l_zones {
            e.add_term(lay.sigma(m, l), 1.0);
        }
        e
    };
    for m in 0..m_aps {
        // sum_k p <= a0 (2a - a0)
        let mut e = LinExpr::term(lay.a(m), 2.0 * a0[m]);
        e.add_const(-a0[m] * a0[m]);
        for k in 0..k_ues {
            e.add_term(lay.p(m, k), -1.0);
        }
        prog.nonneg(e);
        // a^2 + sum_l sigma <= 1
        let mut rest = sen_sum(m).scaled(-1.0);
        rest.add_const(1.0);
        prog.rsoc(rest, LinExpr::constant(0.5), vec![LinExpr::var(lay.a(m))]);
        // u^2 <= a p
        for k in 0..k_ues {
            prog.rsoc(LinExpr::var(lay.a(m)), LinExpr::term(lay.p(m, k), 0.5), vec![LinExpr::var(lay.u(m, k))]);
        }
    }

    let t_cur = sm.sinr(a0, &cur.p, &cur.sigma).into_iter().fold(f64::INFINITY, f64::min).max(1e-12);
    for k in 0..k_ues {
        let x0: f64 = (0..m_aps).map(|m| sm.w[(m, k)] * (a0[m] * cur.p[(m, k)]).sqrt()).sum();
        let q = x0 / t_cur;
        // q (2x - q t) - sum_m B S_m - 1
        let mut lhs = LinExpr::constant(-1.0);
        for m in 0..m_aps {
            lhs.add_term(lay.u(m, k), 2.0 * q * sm.w[(m, k)]);
            lhs.add_scaled(&sen_sum(m), -sm.b[(m, k)]);
        }
        lhs.add_term(t, -q * q);
        let mut ys = Vec::with_capacity(m_aps);
        let mut y0 = Vec::with_capacity(m_aps);
        for m in 0..m_aps {
            let mut y = sen_sum(m).scaled(-sm.b[(m, k)]);
            let mut v = -sm.b[(m, k)] * cur.sigma.row(m).sum();
            for kp in 0..k_ues {
                y.add_term(lay.p(m, kp), sm.r[m][(k, kp)]);
                v += sm.r[m][(k, kp)] * cur.p[(m, kp)];
            }
            ys.push(y);
            y0.push(v);
        }
        bilinear_upper(&mut prog, &lay, a0, &ys, &y0, lhs, opts.split_scale);
    }

    let n = sm.n;
    for l in 0..l_zones {
        let mut lhs = LinExpr::default();
        let mut ys = Vec::with_capacity(m_aps);
        let mut y0 = Vec::with_capacity(m_aps);
        for m in 0..m_aps {
            lhs.add_term(lay.sigma(m, l), 1.0);
            let mut y = LinExpr::var(lay.sigma(m, l));
            let mut v = cur.sigma[(m, l)];
            for k in 0..k_ues {
                y.add_term(lay.p(m, k), kappa / n);
                v += kappa / n * cur.p[(m, k)];
            }
            for lp in (0..l_zones).filter(|&lp| lp != l) {
                let c = kappa / (n * n) * sm.x[m][(l, lp)];
                lhs.add_term(lay.sigma(m, lp), -c);
                y.add_term(lay.sigma(m, lp), -c);
                v -= c * cur.sigma[(m, lp)];
            }
            ys.push(y);
            y0.push(v);
        }
        bilinear_upper(&mut prog, &lay, a0, &ys, &y0, lhs, opts.split_scale);
    }

    let sol = solve_conic(&prog, &opts.solver)?;
    // Candidates are re-checked exactly by the caller, so a slightly
    // inaccurate solve is still usable.
    let usable = sol.status == SolveStatus::Optimal
        || (sol.status == SolveStatus::NumericalFailure && sol.max_violation <= SLACK_VIOLATION);
    if !usable {
        return Ok(None);
    }
    let x = &sol.x;
    let a: Vec<f64> = (0..m_aps).map(|m| x[lay.a(m)].clamp(0.0, 1.0)).collect();
    let mut p = DMatrix::from_fn(m_aps, k_ues, |m, k| x[lay.p(m, k)].max(0.0));
    let mut sigma = DMatrix::from_fn(m_aps, l_zones, |m, l| x[lay.sigma(m, l)].max(0.0));
    for m in 0..m_aps {
        let cap = a[m] * a[m];
        let sp = p.row(m).sum();
        if sp > cap {
            let f = if sp > 0.0 { cap / sp } else { 0.0 };
            p.row_mut(m).scale_mut(f);
        }
        let room = 1.0 - a[m] * a[m];
        let ss = sigma.row(m).sum();
        if ss > room {
            let f = if ss > 0.0 { room / ss } else { 0.0 };
            sigma.row_mut(m).scale_mut(f);
        }
    }
    Ok(Some(Point { a, p, sigma }))
}
