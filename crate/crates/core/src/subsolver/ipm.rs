//! Phase-I / phase-II barrier iterations.

use nalgebra::{DMatrix, DVector};

use super::cones::{compile, Cone, Lin, Reduction};
use super::{ConvexProgram, ProgramError, Solution, SolveReport, SolveStatus, SolverOptions};

/// Maximum Newton steps in one centering.
const MAX_CENTERING_STEPS: usize = 200;
/// Below this Newton decrement a full step is taken without an Armijo test.
const FULL_STEP_DECREMENT: f64 = 0.2;
/// Squared decrement below which Newton must contract quadratically.
const NOISE_DECREMENT: f64 = 1e-4;

struct Barrier<'a> {
    cones: &'a [Cone],
    c: DVector<f64>,
}

enum Centering {
    Converged,
    Stopped,
    Stalled,
    Limit,
}

impl Barrier<'_> {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, w: &DVector<f64>, t: f64) -> Option<f64> {
        let z = w.as_slice();
        let mut f = -t * self.c.dot(w);
        for cone in self.cones {
            f += cone.value(z)?;
        }
        f.is_finite().then_some(f)
    }

    fn interior(&self, w: &DVector<f64>) -> bool {
        let z = w.as_slice();
        self.cones.iter().all(|c| c.value(z).is_some())
    }

    fn derivatives(&self, w: &DVector<f64>, t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let m = self.dim();
        let mut g = &self.c * (-t);
        let mut h = DMatrix::zeros(m, m);
        let z = w.as_slice();
        for cone in self.cones {
            if !cone.accumulate(z, &mut g, &mut h) {
                return None;
            }
        }
        Some((g, h))
    }

    /// Damped Newton on `−t·cᵀw + Φ(w)`. `stop` is checked after every step.
    fn center(
        &self,
        w: &mut DVector<f64>,
        t: f64,
        opts: &SolverOptions,
        steps: &mut usize,
        stop: &dyn Fn(&DVector<f64>) -> bool,
    ) -> Centering {
        let mut prev_lambda2 = f64::INFINITY;
        for _ in 0..MAX_CENTERING_STEPS {
            if *steps >= opts.max_newton {
                return Centering::Limit;
            }
            let Some((g, h)) = self.derivatives(w, t) else {
                return Centering::Stalled;
            };
            let Some(dw) = newton_direction(&h, &g) else {
                return Centering::Stalled;
            };
            let lambda2 = -g.dot(&dw);
            if !lambda2.is_finite() {
                return Centering::Stalled;
            }
            // Inside the quadratic region a decrement that stops contracting
            // has hit the rounding floor of the gradient.
            if lambda2 / 2.0 <= opts.newton_tol || (lambda2 < NOISE_DECREMENT && lambda2 > 0.5 * prev_lambda2) {
                return Centering::Converged;
            }
            prev_lambda2 = lambda2;
            if lambda2 < 0.0 {
                return Centering::Stalled;
            }
            *steps += 1;
            let mut step = 1.0;
            let mut trial = &*w + &dw;
            while !self.interior(&trial) {
                step *= 0.5;
                if step < 1e-14 {
                    return Centering::Stalled;
                }
                trial = &*w + &dw * step;
            }
            if lambda2.sqrt() >= FULL_STEP_DECREMENT {
                let Some(f0) = self.value(w, t) else {
                    return Centering::Stalled;
                };
                let slope = g.dot(&dw);
                loop {
                    match self.value(&trial, t) {
                        Some(f) if f <= f0 + 0.25 * step * slope => break,
                        _ => {}
                    }
                    step *= 0.5;
                    if step < 1e-14 {
                        return Centering::Stalled;
                    }
                    trial = &*w + &dw * step;
                }
            }
            *w = trial;
            if stop(w) {
                return Centering::Stopped;
            }
        }
        Centering::Limit
    }
}

/// Solves `H d = −g` with Jacobi scaling; Cholesky first, LU as a fallback.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let m = g.len();
    if m == 0 {
        return Some(DVector::zeros(0));
    }
    let dmax = (0..m).map(|i| h[(i, i)]).fold(0.0_f64, f64::max);
    let d: DVector<f64> = DVector::from_fn(m, |i, _| {
        let v = h[(i, i)];
        if v > 1e-300 * dmax.max(1e-300) {
            1.0 / v.sqrt()
        } else {
            1.0
        }
    });
    let mut hs = DMatrix::from_fn(m, m, |i, j| h[(i, j)] * d[i] * d[j]);
    let rhs = DVector::from_fn(m, |i, _| -g[i] * d[i]);
    let solve = |hs: &DMatrix<f64>| -> Option<DVector<f64>> {
        if let Some(ch) = hs.clone().cholesky() {
            return Some(ch.solve(&rhs));
        }
        hs.clone().lu().solve(&rhs)
    };
    let y = match solve(&hs) {
        Some(y) if y.iter().all(|v| v.is_finite()) => y,
        _ => {
            for i in 0..m {
                hs[(i, i)] += 1e-12;
            }
            solve(&hs)?
        }
    };
    let dw = y.component_mul(&d);
    dw.iter().all(|v| v.is_finite()).then_some(dw)
}

pub fn solve_convex(p: &ConvexProgram) -> Result<SolveReport, ProgramError> {
    solve_convex_with(p, &SolverOptions::default())
}

pub fn solve_convex_with(p: &ConvexProgram, opts: &SolverOptions) -> Result<SolveReport, ProgramError> {
    solve_convex_from(p, opts, None)
}

enum PhaseOne {
    Feasible(DVector<f64>),
    /// Feasible only after relaxing every cone by `delta`.
    Boundary(DVector<f64>, f64),
    Infeasible,
    Failed(SolveStatus),
}

/// Solves `p`, starting from `start` when it is strictly feasible.
pub fn solve_convex_from(
    p: &ConvexProgram,
    opts: &SolverOptions,
    start: Option<&Solution>,
) -> Result<SolveReport, ProgramError> {
    p.validate()?;
    let compiled = compile(p);
    let layout = compiled.layout.clone();
    let scale = 1.0 + p.constraint_scale();
    let mut steps = 0usize;

    let failure = |status: SolveStatus, z: DVector<f64>, steps: usize| {
        let values = layout.unpack(z.as_slice());
        SolveReport {
            status,
            objective: compiled.objective.eval(z.as_slice()),
            iterations: steps,
            max_violation: p.max_violation(&values),
            values,
        }
    };

    let Some(red) = Reduction::from_equalities(&compiled.equalities, layout.n) else {
        return Ok(failure(SolveStatus::Infeasible, DVector::zeros(layout.n), 0));
    };
    let cones: Vec<Cone> = if red.m == layout.n && compiled.equalities.is_empty() {
        compiled.cones.clone()
    } else {
        compiled.cones.iter().map(|c| c.reduced(&red)).collect()
    };
    let objective: Lin = if compiled.equalities.is_empty() {
        compiled.objective.clone()
    } else {
        compiled.objective.reduced(&red)
    };

    let hinted = start.and_then(|s| {
        let z = layout.pack(s);
        let w = red.project(&z);
        let b = Barrier { cones: &cones, c: DVector::zeros(red.m) };
        b.interior(&w).then_some(w)
    });

    let (w0, delta) = match hinted {
        Some(w) => (w, 0.0),
        None => match phase_one(&cones, red.m, opts, scale, &mut steps) {
            PhaseOne::Feasible(w) => (w, 0.0),
            PhaseOne::Boundary(w, d) => (w, d),
            PhaseOne::Infeasible => {
                return Ok(failure(SolveStatus::Infeasible, red.lift(&DVector::zeros(red.m)), steps));
            }
            PhaseOne::Failed(status) => {
                return Ok(failure(status, red.lift(&DVector::zeros(red.m)), steps));
            }
        },
    };

    let relaxed: Vec<Cone>;
    let active: &[Cone] = if delta > 0.0 {
        relaxed = cones.iter().map(|c| c.shifted(delta)).collect();
        &relaxed
    } else {
        &cones
    };
    let nu: f64 = active.iter().map(Cone::nu).sum();
    let c = objective.dense(red.m);
    let barrier = Barrier { cones: active, c: c.clone() };
    let mut w = w0;
    let zero_objective = c.iter().all(|&v| v == 0.0) || p.objective.is_zero();

    let mut t = opts.t0;
    let status = loop {
        let outcome = barrier.center(&mut w, t, opts, &mut steps, &|_| false);
        if zero_objective {
            break match outcome {
                Centering::Converged | Centering::Stopped => SolveStatus::Optimal,
                Centering::Limit => SolveStatus::IterationLimit,
                Centering::Stalled => SolveStatus::NumericalFailure,
            };
        }
        let obj = objective.eval(w.as_slice());
        match outcome {
            Centering::Converged | Centering::Stopped => {
                if nu / t <= opts.gap_tol {
                    break SolveStatus::Optimal;
                }
            }
            Centering::Stalled => {
                // Numerical floor reached: accept if the certified gap already meets the contract.
                let gap = nu / t * opts.mu;
                break if gap <= 1e-6 * (1.0 + obj.abs()) {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::NumericalFailure
                };
            }
            Centering::Limit => break SolveStatus::IterationLimit,
        }
        t *= opts.mu;
    };

    let z = red.lift(&w);
    let values = layout.unpack(z.as_slice());
    Ok(SolveReport {
        status,
        objective: compiled.objective.eval(z.as_slice()),
        iterations: steps,
        max_violation: p.max_violation(&values),
        values,
    })
}

/// Minimizes a uniform shift `s` that makes every cone strictly feasible.
fn phase_one(cones: &[Cone], m: usize, opts: &SolverOptions, scale: f64, steps: &mut usize) -> PhaseOne {
    let s_idx = m;
    let big = 1e6 * scale;
    let mut aug: Vec<Cone> = cones.iter().map(|c| c.with_shift_var(s_idx)).collect();
    // s ≥ −1 keeps the problem bounded below; the box keeps free directions bounded.
    aug.push(Cone::Nonneg(Lin { c0: 1.0, terms: vec![(s_idx, 1.0)] }));
    aug.push(Cone::Nonneg(Lin { c0: big, terms: vec![(s_idx, -1.0)] }));
    for j in 0..m {
        aug.push(Cone::Nonneg(Lin { c0: big, terms: vec![(j, -1.0)] }));
        aug.push(Cone::Nonneg(Lin { c0: big, terms: vec![(j, 1.0)] }));
    }
    let mut c = DVector::zeros(m + 1);
    c[s_idx] = -1.0;
    let barrier = Barrier { cones: &aug, c };
    let nu: f64 = aug.iter().map(Cone::nu).sum();

    let mut w = DVector::zeros(m + 1);
    let mut s = 1.0;
    loop {
        w[s_idx] = s;
        if barrier.interior(&w) {
            break;
        }
        s *= 2.0;
        if s > big {
            return PhaseOne::Failed(SolveStatus::NumericalFailure);
        }
    }
    w[s_idx] = 2.0 * s;
    if !barrier.interior(&w) {
        w[s_idx] = s;
    }

    let negative = |w: &DVector<f64>| w[s_idx] < 0.0;
    let mut t = opts.t0;
    loop {
        let outcome = barrier.center(&mut w, t, opts, steps, &negative);
        if negative(&w) {
            return PhaseOne::Feasible(w.rows(0, m).into_owned());
        }
        match outcome {
            Centering::Limit => return PhaseOne::Failed(SolveStatus::IterationLimit),
            Centering::Stalled => break,
            _ => {}
        }
        if nu / t <= opts.gap_tol {
            break;
        }
        t *= opts.mu;
    }
    let s_star = w[s_idx];
    let tol = opts.feas_tol * scale;
    if s_star <= 0.9 * tol {
        PhaseOne::Boundary(w.rows(0, m).into_owned(), s_star.max(0.0) + 0.05 * tol)
    } else {
        PhaseOne::Infeasible
    }
}
