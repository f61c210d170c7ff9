use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use super::*;
use crate::channel::{generate_instance, GenConfig};
use crate::subsolver::{check_kkt, Solution};

fn cvec(pairs: &[(f64, f64)]) -> CVec {
    CVec::from_pairs(pairs)
}

/// Coarse-to-fine grid over directions `cosθ·e1 + sinθ·e^{jφ}·e2` in `C²`,
/// taking for each direction the largest feasible radius.
fn grid_oracle_2d(radius2: impl Fn(&CVec) -> Option<f64>, ha: &CVec) -> f64 {
    let eval = |theta: f64, phi: f64| -> f64 {
        let u = cvec(&[(theta.cos(), 0.0), (theta.sin() * phi.cos(), theta.sin() * phi.sin())]);
        match radius2(&u) {
            Some(r2) => r2 * ha.dot(&u).norm_sqr(),
            None => f64::NEG_INFINITY,
        }
    };
    let (mut best, mut bt, mut bp) = (f64::NEG_INFINITY, 0.0, 0.0);
    let n = 400;
    for a in 0..=n {
        for b in 0..n {
            let (t, p) = (std::f64::consts::FRAC_PI_2 * a as f64 / n as f64, std::f64::consts::TAU * b as f64 / n as f64);
            let v = eval(t, p);
            if v > best {
                (best, bt, bp) = (v, t, p);
            }
        }
    }
    let (mut wt, mut wp) = (std::f64::consts::FRAC_PI_2 / n as f64, std::f64::consts::TAU / n as f64);
    for _ in 0..6 {
        let (ct, cp) = (bt, bp);
        for a in -20..=20 {
            for b in -20..=20 {
                let t = (ct + wt * a as f64 / 20.0).clamp(0.0, std::f64::consts::FRAC_PI_2);
                let p = cp + wp * b as f64 / 20.0;
                let v = eval(t, p);
                if v > best {
                    (best, bt, bp) = (v, t, p);
                }
            }
        }
        wt /= 10.0;
        wp /= 10.0;
    }
    best
}

#[test]
fn leakage_cap_orthogonal_channels_align() {
    let ha = cvec(&[(1.0, 0.5), (0.0, 0.0)]);
    let hb = cvec(&[(0.0, 0.0), (0.3, -0.2)]);
    let q = max_quad_leakage_cap(&ha, &hb, 2.0, 0.0).unwrap();
    assert_eq!(q.case, QuadCase::Aligned);
    assert!((q.value - 2.0 * ha.norm_sqr()).abs() < 1e-12);
}

#[test]
fn leakage_cap_zero_forces_null_space() {
    let ha = cvec(&[(1.0, 0.2), (0.4, -0.7), (0.1, 0.1)]);
    let hb = cvec(&[(0.5, 0.0), (0.2, 0.3), (-0.6, 0.1)]);
    let q = max_quad_leakage_cap(&ha, &hb, 1.5, 0.0).unwrap();
    let perp = proj_orth_unit(&ha, &hb).unwrap();
    assert!((q.value - 1.5 * ha.dot(&perp).norm_sqr()).abs() < 1e-12);
    assert!(hb.dot(&q.v).norm_sqr() < 1e-24);
}

#[test]
fn leakage_cap_matches_grid_oracle() {
    let ha = cvec(&[(1.0, 0.0), (0.0, 0.0)]);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let hb = cvec(&[(s, 0.0), (s, 0.0)]);
    let (p, c) = (1.0, 0.1);
    let q = max_quad_leakage_cap(&ha, &hb, p, c).unwrap();
    let oracle = grid_oracle_2d(|u| Some(p.min(c / hb.dot(u).norm_sqr().max(1e-300))), &ha);
    assert!((q.value - oracle).abs() < 1e-4, "{} vs {}", q.value, oracle);
}

#[test]
fn energy_floor_cases() {
    let ha = cvec(&[(1.0, 0.0), (0.0, 0.0)]);
    let hb = cvec(&[(0.6, 0.0), (0.8, 0.0)]);
    assert_eq!(max_quad_energy_floor(&ha, &hb, 1.0, 1.01).unwrap(), FloorOutcome::Infeasible);
    match max_quad_energy_floor(&ha, &hb, 1.0, 0.0).unwrap() {
        FloorOutcome::Solved(q) => {
            assert_eq!(q.case, QuadCase::Aligned);
            assert!((q.v.sub(&ha).norm()) < 1e-15);
        }
        FloorOutcome::Infeasible => panic!("floor 0 is always feasible"),
    }
}

#[test]
fn energy_floor_matches_grid_oracle() {
    let ha = cvec(&[(1.0, 0.0), (0.0, 0.0)]);
    let hb = cvec(&[(0.6, 0.0), (0.8, 0.0)]);
    let (p, c) = (1.0, 0.9);
    let FloorOutcome::Solved(q) = max_quad_energy_floor(&ha, &hb, p, c).unwrap() else {
        panic!("feasible floor");
    };
    let oracle = grid_oracle_2d(|u| (p * hb.dot(u).norm_sqr() >= c).then_some(p), &ha);
    assert!((q.value - oracle).abs() < 1e-4, "{} vs {}", q.value, oracle);
}

fn rand_cvec(v: &[f64]) -> CVec {
    CVec::from_pairs(&v.chunks(2).map(|c| (c[0], c[1])).collect::<Vec<_>>())
}

/// Generic program: maximize `⟨hahaᴴ, S⟩` under a cap or floor on `⟨hbhbᴴ, S⟩`.
fn quad_sdp(ha: &CVec, hb: &CVec, p: f64, c: f64, cap: bool) -> Option<f64> {
    let n = ha.len();
    let mut prog = ConvexProgram::new();
    let s = prog.add_matrix("S", n);
    prog.maximize(Affine::zero().matrix(s, HermMat::outer(ha)));
    prog.le(Affine::zero().trace(s, n), p);
    let leak = Affine::zero().matrix(s, HermMat::outer(hb));
    if cap {
        prog.le(leak, c);
    } else {
        prog.ge(leak, c);
    }
    let r = solve_convex(&prog).unwrap();
    r.is_optimal().then_some(r.objective)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quad_maximizers_respect_their_case(
        a in prop::collection::vec(-1.0f64..1.0, 6),
        b in prop::collection::vec(-1.0f64..1.0, 6),
        p in 0.1f64..3.0,
        frac in 0.0f64..1.2,
    ) {
        let (ha, hb) = (rand_cvec(&a), rand_cvec(&b));
        prop_assume!(ha.norm() > 0.1 && hb.norm() > 0.1 && !is_parallel(&ha, &hb));
        let c = frac * p * hb.norm_sqr();
        let tol = 1e-9 * (1.0 + p * hb.norm_sqr());

        let q = max_quad_leakage_cap(&ha, &hb, p, c).unwrap();
        let leak = hb.dot(&q.v).norm_sqr();
        prop_assert!((q.v.norm_sqr() - p).abs() <= 1e-9 * p);
        prop_assert!(leak <= c + tol);
        if q.case == QuadCase::Boundary {
            prop_assert!((leak - c).abs() <= tol);
        }
        prop_assert!((q.value - ha.dot(&q.v).norm_sqr()).abs() <= 1e-12 * (1.0 + q.value));

        match max_quad_energy_floor(&ha, &hb, p, c).unwrap() {
            FloorOutcome::Infeasible => prop_assert!(c > p * hb.norm_sqr()),
            FloorOutcome::Solved(q) => {
                let got = hb.dot(&q.v).norm_sqr();
                prop_assert!((q.v.norm_sqr() - p).abs() <= 1e-9 * p);
                prop_assert!(got >= c - tol);
                if q.case == QuadCase::Boundary {
                    prop_assert!((got - c).abs() <= tol);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn quad_maximizers_match_generic_solver(
        a in prop::collection::vec(-1.0f64..1.0, 6),
        b in prop::collection::vec(-1.0f64..1.0, 6),
        p in 0.5f64..2.0,
        frac in 0.05f64..0.95,
    ) {
        let (ha, hb) = (rand_cvec(&a), rand_cvec(&b));
        prop_assume!(ha.norm() > 0.3 && hb.norm() > 0.3 && !is_parallel(&ha, &hb));
        let c = frac * p * hb.norm_sqr();
        let q = max_quad_leakage_cap(&ha, &hb, p, c).unwrap();
        let sdp = quad_sdp(&ha, &hb, p, c, true).unwrap();
        prop_assert!((q.value - sdp).abs() <= 1e-6 * (1.0 + sdp), "{} vs {}", q.value, sdp);
        let FloorOutcome::Solved(q) = max_quad_energy_floor(&ha, &hb, p, c).unwrap() else {
            return Err(TestCaseError::fail("feasible floor"));
        };
        let sdp = quad_sdp(&ha, &hb, p, c, false).unwrap();
        prop_assert!((q.value - sdp).abs() <= 1e-6 * (1.0 + sdp), "{} vs {}", q.value, sdp);
    }
}

fn instance(nt: usize, seed: u64, e: [f64; 2]) -> ChannelSet {
    generate_instance(&GenConfig::new(2, nt, 1.0, 10.0, seed)).unwrap().with_energy(e.to_vec()).unwrap()
}

/// `min_μ Σ_k P_k λmax(Ψ_k(μ))` over a uniform grid, with eigenvalues from nalgebra.
fn dual_grid(cs: &ChannelSet, points: usize) -> f64 {
    let (e1, e2) = (cs.energy[0], cs.energy[1]);
    let outer = |h: &CVec| -> DMatrix<C64> {
        let v = h.as_vector();
        v * v.adjoint()
    };
    (0..=points)
        .map(|j| {
            let mu = j as f64 / points as f64 / e1;
            let eta = (1.0 - mu * e1) / e2;
            (0..2)
                .map(|k| {
                    let psi = outer(&cs.h[k][0]) * C64::new(mu, 0.0) + outer(&cs.h[k][1]) * C64::new(eta, 0.0);
                    let lmax = SymmetricEigen::new(psi).eigenvalues.iter().fold(f64::MIN, |m, &x| m.max(x));
                    cs.power[k] * lmax
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn tdms_beta_halves_when_targets_double() {
    for seed in 0..5 {
        let cs = instance(4, seed, [0.3, 0.7]);
        let b1 = tdms_eh_minimize(&cs).unwrap().beta;
        let cs2 = cs.clone().with_energy(vec![0.6, 1.4]).unwrap();
        let b2 = tdms_eh_minimize(&cs2).unwrap().beta;
        assert!((b1 - 2.0 * b2).abs() <= 1e-14 * b1, "{b1} vs {b2}");
    }
}

#[test]
fn tdms_beta_matches_dual_grid() {
    for (seed, nt) in [(1u64, 2usize), (2, 4), (3, 3), (4, 4)] {
        let cs = instance(nt, seed, [0.5, 0.8]);
        let d = tdms_eh_minimize(&cs).unwrap();
        let grid = dual_grid(&cs, 10_000);
        assert!((d.beta - grid).abs() <= 1e-4 * grid, "seed {seed}: {} vs {grid}", d.beta);
        assert!(d.beta <= grid * (1.0 + 1e-12));
    }
}

#[test]
fn tdms_beta_matches_generic_solver_and_kkt() {
    for (seed, nt) in [(10u64, 2usize), (11, 4), (12, 2), (13, 4)] {
        let cs = instance(nt, seed, [0.4, 0.9]);
        let d = tdms_eh_minimize(&cs).unwrap();
        let (p, s, beta) = max_min_energy_program(&cs);
        let r = solve_convex(&p).unwrap();
        assert!(r.is_optimal());
        assert!((d.beta - r.objective).abs() <= 1e-5 * r.objective, "{} vs {}", d.beta, r.objective);

        let mut point = Solution { matrices: vec![HermMat::zeros(nt); 2], scalars: vec![0.0] };
        point.matrices[s[0].0] = d.covariances[0].clone();
        point.matrices[s[1].0] = d.covariances[1].clone();
        point.scalars[beta.0] = d.beta;
        let k = check_kkt(&p, &point);
        assert!(k.max_residual() <= 1e-5, "seed {seed}: {k:?}");
    }
}

#[test]
fn tdms_accepted_point_has_simple_principal_eigenvalues() {
    let cs = instance(4, 21, [0.2, 0.2]);
    let d = tdms_eh_minimize(&cs).unwrap();
    for psi in &d.state.psi {
        let e = herm_eig(psi).unwrap();
        assert!(e.top_gap() > 1e-9 * e.values[0]);
    }
    assert!(d.state.mu >= 0.0 && d.state.eta_dual >= 0.0);
    for v in &d.state.v {
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn tdms_rejects_degenerate_channels_and_falls_back() {
    let mut cs = instance(2, 5, [0.3, 0.3]);
    cs.h[0][1] = cs.h[0][0].scale(C64::new(0.5, 0.5));
    assert!(matches!(tdms_eh_minimize(&cs), Err(ClosedFormError::AssumptionViolated(_))));
    let sol = tdms_eh_solve(&cs).unwrap();
    assert!(sol.fallback);
    assert!(sol.mu_star.is_none());
    let (p, _, _) = max_min_energy_program(&cs);
    assert!((sol.beta - solve_convex(&p).unwrap().objective).abs() < 1e-9);
}

#[test]
fn tdms_requires_positive_energy() {
    let cs = instance(2, 6, [0.0, 0.3]);
    assert_eq!(tdms_eh_minimize(&cs).unwrap_err(), ClosedFormError::NonPositiveEnergy(0));
}

fn tdma_instance(nt: usize, seed: u64, load: f64) -> ChannelSet {
    let cs = instance(nt, seed, [0.0, 0.0]);
    let cap = |i: usize| (0..2).map(|k| cs.power[k] * cs.h[k][i].norm_sqr()).sum::<f64>();
    let e = vec![0.5 * load * cap(0), 0.5 * load * cap(1)];
    cs.clone().with_energy(e).unwrap()
}

#[test]
fn tdma_slot_decoupled_construction() {
    let h11 = cvec(&[(1.2, 0.0), (0.0, 0.0)]);
    let h12 = cvec(&[(0.0, 0.0), (0.7, 0.1)]);
    let h21 = cvec(&[(0.0, 0.0), (0.5, -0.4)]);
    let h22 = cvec(&[(0.9, 0.3), (0.0, 0.0)]);
    let cs = ChannelSet::new(vec![vec![h11.clone(), h12], vec![h21, h22.clone()]], vec![0.1, 0.1], vec![1.0, 2.0])
        .unwrap()
        .with_energy(vec![0.05, 0.4])
        .unwrap();
    let alpha = 0.5;
    assert!(alpha * 2.0 * h22.norm_sqr() >= 0.4);
    let sol = tdma_slot_solve(&cs, alpha, Slot::First).unwrap();
    let want = alpha * (1.0 + h11.norm_sqr() / 0.1).log2();
    assert!((sol.rate - want).abs() < 1e-12, "{} vs {want}", sol.rate);
    let s1 = HermMat::outer(&h11.unit().unwrap());
    let s2 = HermMat::outer(&h22.unit().unwrap()).scale(2.0);
    assert!(sol.covariances[0].sub(&s1).frobenius() < 1e-12);
    assert!(sol.covariances[1].sub(&s2).frobenius() < 1e-12);
}

#[test]
fn tdma_slot_without_energy_nulls_interference() {
    let mut cs = tdma_instance(3, 30, 0.5);
    cs.energy[1] = 0.0;
    let sol = tdma_slot_solve(&cs, 0.4, Slot::First).unwrap();
    let st = sol.state.unwrap();
    assert!((st.y - 1.0 / cs.sigma2[0]).abs() <= 1e-12 * st.y);
    let leak = crate::linalg::quad_form(&sol.covariances[1], &cs.h[1][0]).unwrap();
    assert!(leak < 1e-12, "{leak}");
}

#[test]
fn tdma_slot_matches_generic_solver() {
    for (seed, nt) in [(40u64, 2usize), (41, 4), (42, 2), (43, 4), (44, 3)] {
        let cs = tdma_instance(nt, seed, 0.7);
        let (lo, hi) = feasible_alpha_interval(&cs).unwrap();
        for (alpha, slot) in [(lo + 0.3 * (hi - lo), Slot::First), (lo + 0.6 * (hi - lo), Slot::Second), (lo + 0.02 * (hi - lo), Slot::First)] {
            let cf = tdma_slot_solve(&cs, alpha, slot).unwrap();
            assert!(!cf.fallback);
            let gen = tdma_slot_generic(&cs, alpha, slot).unwrap();
            assert!(
                (cf.rate - gen.rate).abs() <= 1e-5 * gen.rate.max(1e-12),
                "seed {seed} {slot:?}: {} vs {}",
                cf.rate,
                gen.rate
            );
        }
    }
}

#[test]
fn tdma_slot_normalization_constraint_is_tight() {
    for seed in 50..60 {
        let cs = tdma_instance(4, seed, 0.8);
        let (lo, hi) = feasible_alpha_interval(&cs).unwrap();
        let sol = tdma_slot_solve(&cs, 0.5 * (lo + hi), Slot::First).unwrap();
        let st = sol.state.unwrap();
        let lhs = crate::linalg::quad_form(&st.x[1], &cs.h[1][0]).unwrap() + st.y * cs.sigma2[0];
        assert!((lhs - 1.0).abs() <= 1e-8, "{lhs}");
        // Energy floor met by the recovered covariances.
        let e2 = crate::linalg::quad_form(&sol.covariances[0], &cs.h[0][1]).unwrap()
            + crate::linalg::quad_form(&sol.covariances[1], &cs.h[1][1]).unwrap();
        assert!(e2 >= cs.energy[1] / (0.5 * (lo + hi)) * (1.0 - 1e-9));
    }
}

#[test]
fn charnes_cooper_round_trip() {
    let cs = tdma_instance(3, 70, 0.5);
    let s = vec![
        HermMat::outer(&cvec(&[(0.3, 0.1), (0.2, -0.5), (0.1, 0.0)])),
        HermMat::outer(&cvec(&[(0.6, 0.0), (-0.1, 0.2), (0.4, 0.4)])),
    ];
    for slot in [Slot::First, Slot::Second] {
        let (x, y) = charnes_cooper_forward(&cs, slot, &s).unwrap();
        let back = charnes_cooper_inverse(&x, y);
        for (a, b) in s.iter().zip(&back) {
            assert!(a.sub(b).frobenius() <= 1e-10 * a.frobenius());
        }
    }
}

#[test]
fn tdma_slot_rejects_alpha_outside_interval() {
    let cs = tdma_instance(2, 80, 0.9);
    let (lo, _) = feasible_alpha_interval(&cs).unwrap();
    assert!(matches!(tdma_slot_solve(&cs, lo * 0.5, Slot::First), Err(ClosedFormError::AlphaOutOfRange(_))));
}

#[test]
fn concavity_probe_on_random_instances() {
    for seed in 0..100 {
        let cs = tdma_instance(if seed % 2 == 0 { 2 } else { 4 }, 1000 + seed, 0.8);
        let (lo, hi) = feasible_alpha_interval(&cs).unwrap();
        assert!(concavity_probe(&cs, 0.5 * (lo + hi), 64).unwrap(), "seed {seed}");
    }
}

#[test]
fn concavity_check_controls() {
    let linear: Vec<f64> = (0..64).map(|j| 3.0 - 0.5 * j as f64).collect();
    assert!(samples_concave(&linear));
    let bump: Vec<f64> = (0..64).map(|j| 1.0 + (-((j as f64 - 32.0) / 4.0).powi(2)).exp() * -1.0).collect();
    assert!(!samples_concave(&bump));
}

