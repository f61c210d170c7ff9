use nalgebra::DMatrix;
use proptest::prelude::*;

use super::*;
use crate::linalg::{CVec, C64};

fn assert_feasible(p: &ConvexProgram, r: &SolveReport) {
    let tol = 1e-7 * (1.0 + p.constraint_scale());
    assert!(r.max_violation <= tol, "violation {} > {}", r.max_violation, tol);
}

fn herm2(a: f64, b: f64, re: f64, im: f64) -> HermMat {
    let m = DMatrix::from_row_slice(
        2,
        2,
        &[C64::new(a, 0.0), C64::new(re, im), C64::new(re, -im), C64::new(b, 0.0)],
    );
    HermMat::new(m).unwrap()
}

fn exp_toy() -> (ConvexProgram, ScalarVar) {
    let mut p = ConvexProgram::new();
    let x = p.add_scalar("x", Some(0.0));
    p.maximize(Affine::var(x));
    p.le_with_exp(Affine::zero(), x, 1.0, 2.0);
    (p, x)
}

fn trace_cap() -> (ConvexProgram, MatVar) {
    let mut p = ConvexProgram::new();
    let s = p.add_matrix("S", 2);
    p.maximize(Affine::zero().trace(s, 2));
    p.le(Affine::zero().trace(s, 2), 3.0);
    (p, s)
}

#[test]
fn exp_constraint_reaches_log_two() {
    let (p, x) = exp_toy();
    let r = solve_convex(&p).unwrap();
    assert!(r.is_optimal(), "{:?}", r.status);
    assert!((r.values.scalar(x) - 2f64.ln()).abs() < 1e-6);
    assert_feasible(&p, &r);
}

#[test]
fn trace_cap_reaches_three() {
    let (p, _) = trace_cap();
    let r = solve_convex(&p).unwrap();
    assert!(r.is_optimal());
    assert!((r.objective - 3.0).abs() < 1e-6 * 4.0);
    assert_feasible(&p, &r);
}

#[test]
fn kkt_residuals_small_at_trace_cap_optimum() {
    let (p, _) = trace_cap();
    let r = solve_convex(&p).unwrap();
    let k = check_kkt(&p, &r.values);
    assert!(k.max_residual() <= 1e-6, "{k:?}");
}

#[test]
fn kkt_flags_interior_suboptimal_point() {
    let (p, _) = trace_cap();
    let pt = Solution { matrices: vec![HermMat::identity(2).scale(0.5)], scalars: vec![] };
    let k = check_kkt(&p, &pt);
    assert!(k.stationarity > 1e-3, "{k:?}");
    assert_eq!(k.active_constraints, 0);
}

#[test]
fn kkt_handles_rank_deficient_optimum() {
    let mut p = ConvexProgram::new();
    let s = p.add_matrix("S", 2);
    let c = herm2(2.0, 1.0, 0.3, -0.4);
    p.maximize(Affine::zero().matrix(s, c.clone()));
    p.le(Affine::zero().trace(s, 2), 1.0);
    let r = solve_convex(&p).unwrap();
    assert!(r.is_optimal());
    assert!((r.objective - c.max_eigenvalue()).abs() < 1e-7);
    let k = check_kkt(&p, &r.values);
    assert!(k.max_residual() <= 1e-5, "{k:?}");
}

#[test]
fn equality_constraints_are_respected() {
    let mut p = ConvexProgram::new();
    let s = p.add_matrix("S", 3);
    let x = p.add_scalar("x", None);
    let v = CVec::from_pairs(&[(1.0, 0.0), (0.0, 1.0), (0.5, -0.5)]);
    p.maximize(Affine::zero().matrix(s, HermMat::outer(&v)).scalar(x, -1.0));
    p.eq(Affine::zero().trace(s, 3), 2.0);
    p.eq(Affine::var(x).trace(s, 3), 2.5);
    let r = solve_convex(&p).unwrap();
    assert!(r.is_optimal(), "{:?}", r.status);
    assert!((r.values.scalar(x) - 0.5).abs() < 1e-8);
    assert!((r.objective - (2.0 * v.norm_sqr() - 0.5)).abs() < 1e-6);
    assert_feasible(&p, &r);
}

#[test]
fn inconsistent_equalities_are_infeasible() {
    let mut p = ConvexProgram::new();
    let x = p.add_scalar("x", None);
    p.eq(Affine::var(x), 1.0);
    p.eq(Affine::var(x).scaled(2.0), 3.0);
    assert_eq!(solve_convex(&p).unwrap().status, SolveStatus::Infeasible);
}

#[test]
fn contradictory_bounds_are_infeasible() {
    let mut p = ConvexProgram::new();
    let x = p.add_scalar("x", None);
    p.maximize(Affine::var(x));
    p.ge(Affine::var(x), 2.0);
    p.le(Affine::var(x), 1.0);
    assert_eq!(solve_convex(&p).unwrap().status, SolveStatus::Infeasible);
}

#[test]
fn psd_energy_floor_infeasible() {
    // tr(S) ≤ 1 cannot deliver ⟨hhᴴ, S⟩ ≥ 3 when ‖h‖² = 2.
    let mut p = ConvexProgram::new();
    let s = p.add_matrix("S", 2);
    let h = CVec::from_pairs(&[(1.0, 0.0), (0.0, 1.0)]);
    p.le(Affine::zero().trace(s, 2), 1.0);
    p.ge(Affine::zero().matrix(s, HermMat::outer(&h)), 3.0);
    assert_eq!(solve_convex(&p).unwrap().status, SolveStatus::Infeasible);
}

#[test]
fn boundary_feasible_program_is_solved() {
    // The only feasible point is x = 1.
    let mut p = ConvexProgram::new();
    let x = p.add_scalar("x", None);
    p.maximize(Affine::var(x));
    p.ge(Affine::var(x), 1.0);
    p.le(Affine::var(x), 1.0);
    let r = solve_convex(&p).unwrap();
    assert!(r.is_optimal(), "{:?}", r.status);
    assert!((r.values.scalar(x) - 1.0).abs() < 1e-6);
    assert_feasible(&p, &r);
}

#[test]
fn hyperbolic_cone_bounds_geometric_mean() {
    let mut p = ConvexProgram::new();
    let a = p.add_scalar("a", None);
    let b = p.add_scalar("b", None);
    let w = p.add_scalar("w", None);
    p.maximize(Affine::var(w));
    p.le(Affine::var(a), 2.0);
    p.le(Affine::var(b), 8.0);
    p.hyperbolic(Affine::var(a), Affine::var(b), Affine::var(w));
    let r = solve_convex(&p).unwrap();
    assert!(r.is_optimal());
    assert!((r.objective - 4.0).abs() < 1e-6 * 5.0);
    assert_feasible(&p, &r);
}

#[test]
fn exp_cone_matches_log() {
    // y·ln(z/y) ≥ x with y = 2, z = 2e gives x ≤ 2.
    let mut p = ConvexProgram::new();
    let x = p.add_scalar("x", None);
    let y = p.add_scalar("y", None);
    p.maximize(Affine::var(x));
    p.eq(Affine::var(y), 2.0);
    p.exp_cone(Affine::var(x), Affine::var(y), Affine::constant(2.0 * std::f64::consts::E));
    let r = solve_convex(&p).unwrap();
    assert!(r.is_optimal());
    assert!((r.values.scalar(x) - 2.0).abs() < 1e-6 * 3.0);
    let k = check_kkt(&p, &r.values);
    assert!(k.max_residual() <= 1e-6, "{k:?}");
}

#[test]
fn zero_objective_returns_feasible_point() {
    let mut p = ConvexProgram::new();
    let s = p.add_matrix("S", 2);
    let h = CVec::from_pairs(&[(1.0, 0.0), (0.5, 0.5)]);
    p.le(Affine::zero().trace(s, 2), 1.0);
    p.ge(Affine::zero().matrix(s, HermMat::outer(&h)), 0.5);
    let r = solve_convex(&p).unwrap();
    assert!(r.is_optimal());
    assert_feasible(&p, &r);
}

#[test]
fn warm_start_from_interior_hint() {
    let (p, x) = exp_toy();
    let hint = Solution { matrices: vec![], scalars: vec![0.3] };
    let r = solve_convex_from(&p, &SolverOptions::default(), Some(&hint)).unwrap();
    assert!(r.is_optimal());
    assert!((r.values.scalar(x) - 2f64.ln()).abs() < 1e-6);
}

#[test]
fn invalid_programs_are_rejected() {
    let mut p = ConvexProgram::new();
    let x = p.add_scalar("x", None);
    p.le_with_exp(Affine::zero(), x, -1.0, 1.0);
    assert_eq!(p.validate(), Err(ProgramError::BadExpCoefficient(0)));

    let mut p = ConvexProgram::new();
    p.le(Affine::var(ScalarVar(3)), 1.0);
    assert_eq!(p.validate(), Err(ProgramError::UndeclaredVariable(0)));

    let mut p = ConvexProgram::new();
    let s = p.add_matrix("S", 3);
    p.le(Affine::zero().trace(s, 2), 1.0);
    assert_eq!(p.validate(), Err(ProgramError::DimensionMismatch(0)));
}

#[test]
fn canonical_dump_lists_variables_then_constraints() {
    let (mut p, x) = exp_toy();
    let s = p.add_matrix("S", 2);
    p.ge(Affine::var(x).trace(s, 2), 0.5);
    let text = p.to_string();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "matrix S 2");
    assert_eq!(lines[1], "scalar x >= 0e0");
    assert!(lines[2].starts_with("maximize "));
    assert!(lines[3].contains("exp(x)") && lines[3].ends_with("<= 2e0"));
    assert!(lines[4].contains("tr(S*[") && lines[4].ends_with(">= 5e-1"));
    assert_eq!(lines.len(), 5);
}

/// Real symmetric embedding `[[A, −B], [B, A]]` of a complex Hermitian `A + jB`.
fn real_embedding(c: &HermMat) -> HermMat {
    let n = c.dim();
    let m = DMatrix::from_fn(2 * n, 2 * n, |r, col| {
        let z = c.get(r % n, col % n);
        let v = match (r < n, col < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        };
        C64::new(v, 0.0)
    });
    HermMat::new(m).unwrap()
}

#[test]
fn complex_and_real_embedded_programs_agree() {
    let c = herm2(1.0, -0.5, 0.7, 0.9);
    let h = CVec::from_pairs(&[(0.3, -0.2), (1.1, 0.4)]);
    let floor = 0.6;

    let mut pc = ConvexProgram::new();
    let s = pc.add_matrix("S", 2);
    pc.maximize(Affine::zero().matrix(s, c.clone()));
    pc.le(Affine::zero().trace(s, 2), 1.0);
    pc.ge(Affine::zero().matrix(s, HermMat::outer(&h)), floor);
    let rc = solve_convex(&pc).unwrap();
    assert!(rc.is_optimal());

    // X = [[X1, −X2], [X2, X1]]: the structure is enforced by equalities, and
    // all coefficient matrices are real, so the imaginary parts are inert.
    let mut pr = ConvexProgram::new();
    let x = pr.add_matrix("X", 4);
    pr.maximize(Affine::zero().matrix(x, real_embedding(&c).scale(0.5)));
    pr.le(Affine::zero().matrix(x, HermMat::identity(4).scale(0.5)), 1.0);
    pr.ge(Affine::zero().matrix(x, real_embedding(&HermMat::outer(&h)).scale(0.5)), floor);
    let unit = |r: usize, col: usize, v: f64| {
        let mut m = DMatrix::from_element(4, 4, C64::new(0.0, 0.0));
        m[(r, col)] += C64::new(v / 2.0, 0.0);
        m[(col, r)] += C64::new(v / 2.0, 0.0);
        m
    };
    for (r, col) in [(0, 0), (1, 1), (0, 1)] {
        let m = unit(r, col, 1.0) - unit(r + 2, col + 2, 1.0);
        pr.eq(Affine::zero().matrix(x, HermMat::new(m).unwrap()), 0.0);
    }
    for (r, col) in [(0, 1), (0, 0), (1, 1)] {
        let m = unit(r + 2, col, 1.0) + unit(col + 2, r, 1.0);
        pr.eq(Affine::zero().matrix(x, HermMat::new(m).unwrap()), 0.0);
    }
    let rr = solve_convex(&pr).unwrap();
    assert!(rr.is_optimal(), "{:?}", rr.status);
    assert!((rc.objective - rr.objective).abs() <= 1e-7, "{} vs {}", rc.objective, rr.objective);
}

fn random_herm(v: &[f64]) -> HermMat {
    herm2(v[0], v[1], v[2], v[3])
}

fn spectral_gap(c: &HermMat) -> f64 {
    c.max_eigenvalue() - c.min_eigenvalue()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scaling_objective_keeps_argmax(
        v in prop::collection::vec(-1.0f64..1.0, 4),
        a in 0.2f64..1.0,
        t in 0.1f64..10.0,
    ) {
        let c = random_herm(&v);
        prop_assume!(spectral_gap(&c) > 0.2);
        let build = |scale: f64| {
            let mut p = ConvexProgram::new();
            let s = p.add_matrix("S", 2);
            let x = p.add_scalar("x", None);
            p.maximize(Affine::zero().matrix(s, c.clone()).scalar(x, a).scaled(scale));
            p.le_with_exp(Affine::zero().trace(s, 2), x, 1.0, 2.0);
            p
        };
        let r1 = solve_convex(&build(1.0)).unwrap();
        let r2 = solve_convex(&build(t)).unwrap();
        prop_assert!(r1.is_optimal() && r2.is_optimal());
        let dist = (r1.values.matrices[0].sub(&r2.values.matrices[0]).frobenius().powi(2)
            + (r1.values.scalars[0] - r2.values.scalars[0]).powi(2))
        .sqrt();
        // The gap is absolute, so values scale to within it while the argmax is
        // only pinned to roughly its square root.
        prop_assert!((r2.objective - t * r1.objective).abs() <= 1e-7 * (1.0 + t), "{} vs {}", r2.objective, t * r1.objective);
        prop_assert!(dist <= 1e-3, "dist {}", dist);
    }

    #[test]
    fn relaxing_a_cap_never_breaks_feasibility(
        v in prop::collection::vec(-1.0f64..1.0, 4),
        cap in 0.1f64..3.0,
        floor in 0.0f64..4.0,
        relax in 0.0f64..2.0,
    ) {
        let c = random_herm(&v);
        let h = CVec::from_pairs(&[(1.0, 0.2), (-0.3, 0.8)]);
        let build = |cap: f64| {
            let mut p = ConvexProgram::new();
            let s = p.add_matrix("S", 2);
            p.maximize(Affine::zero().matrix(s, c.clone()));
            p.le(Affine::zero().trace(s, 2), cap);
            p.ge(Affine::zero().matrix(s, HermMat::outer(&h)), floor);
            p
        };
        let before = solve_convex(&build(cap)).unwrap();
        let after = solve_convex(&build(cap + relax)).unwrap();
        if before.is_optimal() {
            prop_assert_ne!(after.status, SolveStatus::Infeasible);
        }
        // Ground truth: feasible iff floor ≤ cap·‖h‖².
        let feasible = floor < (cap + relax) * h.norm_sqr() * (1.0 - 1e-6);
        if feasible {
            prop_assert!(after.is_optimal(), "{:?}", after.status);
            let p = build(cap + relax);
            prop_assert!(after.max_violation <= 1e-7 * (1.0 + p.constraint_scale()));
        }
    }
}
