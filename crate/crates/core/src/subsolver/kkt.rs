//! First-order optimality residuals for a candidate point.
//!
//! Constraints within a small slack of their boundary are treated as active
//! and receive multipliers from the boundary normal of their cone (a PSD
//! matrix on the near-null eigenspace for matrix blocks). The multipliers are
//! fitted by nonnegative least squares on the stationarity equation.

use nalgebra::{DMatrix, DVector};

use super::cones::{compile, Cone, Lin};
use super::{ConvexProgram, Solution};
use crate::linalg::{herm_eig, CVec, HermMat, C64};

const ACTIVE_RTOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `‖c + Σ Aᵀλ‖ / (1 + ‖c‖)` at the best dual-feasible multipliers.
    pub stationarity: f64,
    pub primal_infeasibility: f64,
    /// Distance of the unconstrained least-squares multipliers from the dual cone.
    pub dual_infeasibility: f64,
    /// Largest `|⟨λ_j, u_j⟩|` over active constraints.
    pub complementarity: f64,
    pub active_constraints: usize,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity.max(self.primal_infeasibility).max(self.dual_infeasibility).max(self.complementarity)
    }
}

/// How a block of multiplier parameters is constrained.
enum Block {
    Free,
    Nonneg { col: usize, slack: f64 },
    /// Hermitian `k×k` matrix `M ⪰ 0` stored in `k²` consecutive columns.
    Psd { first: usize, k: usize, v0: Vec<CVec>, slack: HermMat },
}

fn hermitian_basis(k: usize) -> Vec<DMatrix<C64>> {
    let mut out = Vec::with_capacity(k * k);
    let zero = C64::new(0.0, 0.0);
    for r in 0..k {
        let mut m = DMatrix::from_element(k, k, zero);
        m[(r, r)] = C64::new(1.0, 0.0);
        out.push(m);
    }
    for r in 0..k {
        for c in (r + 1)..k {
            let mut m = DMatrix::from_element(k, k, zero);
            m[(r, c)] = C64::new(1.0, 0.0);
            m[(c, r)] = C64::new(1.0, 0.0);
            out.push(m);
            let mut m = DMatrix::from_element(k, k, zero);
            m[(r, c)] = C64::new(0.0, 1.0);
            m[(c, r)] = C64::new(0.0, -1.0);
            out.push(m);
        }
    }
    out
}

fn params_to_herm(theta: &[f64], k: usize) -> DMatrix<C64> {
    let basis = hermitian_basis(k);
    let mut m = DMatrix::from_element(k, k, C64::new(0.0, 0.0));
    for (b, &x) in basis.iter().zip(theta) {
        m += b * C64::new(x, 0.0);
    }
    m
}

fn herm_to_params(m: &DMatrix<C64>, k: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..k).map(|r| m[(r, r)].re).collect();
    for r in 0..k {
        for c in (r + 1)..k {
            out.push(m[(r, c)].re);
            out.push(m[(r, c)].im);
        }
    }
    out
}

fn lin_column(l: &Lin, n: usize, scale: f64, col: &mut DVector<f64>) {
    for &(j, a) in &l.terms {
        if j < n {
            col[j] += a * scale;
        }
    }
}

/// Checks stationarity, feasibility and complementarity of `point` for `p`.
pub fn check_kkt(p: &ConvexProgram, point: &Solution) -> KktReport {
    let compiled = compile(p);
    let layout = &compiled.layout;
    let n = layout.n;
    let z = layout.pack(point);
    let zs = z.as_slice();
    let c = compiled.objective.dense(n);

    let mut columns: Vec<DVector<f64>> = Vec::new();
    let mut blocks: Vec<Block> = Vec::new();

    for eq in &compiled.equalities {
        let mut col = DVector::zeros(n);
        lin_column(eq, n, 1.0, &mut col);
        blocks.push(Block::Free);
        columns.push(col);
    }

    for cone in &compiled.cones {
        match cone {
            Cone::Nonneg(l) => {
                let u = l.eval(zs);
                let mag = 1.0 + l.c0.abs() + l.terms.iter().map(|&(j, a)| (a * zs[j]).abs()).sum::<f64>();
                if u <= ACTIVE_RTOL * mag {
                    let mut col = DVector::zeros(n);
                    lin_column(l, n, 1.0, &mut col);
                    blocks.push(Block::Nonneg { col: columns.len(), slack: u });
                    columns.push(col);
                }
            }
            Cone::Rotated([a, b, w]) => {
                let (av, bv, wv) = (a.eval(zs), b.eval(zs), w.eval(zs));
                let phi = av * bv - wv * wv;
                let mag = (1.0 + av.abs() + bv.abs() + wv.abs()).powi(2);
                if phi <= ACTIVE_RTOL * mag {
                    let mut col = DVector::zeros(n);
                    lin_column(a, n, bv, &mut col);
                    lin_column(b, n, av, &mut col);
                    lin_column(w, n, -2.0 * wv, &mut col);
                    blocks.push(Block::Nonneg { col: columns.len(), slack: phi });
                    columns.push(col);
                }
            }
            Cone::Exp([x, y, zz]) => {
                let (xv, yv, zv) = (x.eval(zs), y.eval(zs), zz.eval(zs));
                if yv > 0.0 && zv > 0.0 {
                    let psi = yv * (zv / yv).ln() - xv;
                    let mag = 1.0 + xv.abs() + yv.abs() + zv.abs();
                    if psi <= ACTIVE_RTOL * mag {
                        let mut col = DVector::zeros(n);
                        lin_column(x, n, -1.0, &mut col);
                        lin_column(y, n, (zv / yv).ln() - 1.0, &mut col);
                        lin_column(zz, n, yv / zv, &mut col);
                        blocks.push(Block::Nonneg { col: columns.len(), slack: psi });
                        columns.push(col);
                    }
                }
            }
            Cone::Psd(pc) => {
                let dim = pc.n;
                let u = pc.assemble(zs);
                let umat = HermMat::from_matrix_unchecked(DMatrix::from_fn(dim, dim, |r, c| u[r * dim + c]));
                let eig = herm_eig(&umat).expect("assembled blocks are Hermitian");
                let lmax = eig.values[0].abs().max(1.0);
                let v0: Vec<CVec> = eig
                    .values
                    .iter()
                    .zip(&eig.vectors)
                    .filter(|(l, _)| **l <= ACTIVE_RTOL * lmax)
                    .map(|(_, v)| v.clone())
                    .collect();
                let k = v0.len();
                if k == 0 {
                    continue;
                }
                let vmat = DMatrix::from_fn(dim, k, |r, c| v0[c].entries()[r]);
                let first = columns.len();
                for e in hermitian_basis(k) {
                    let lam = &vmat * e * vmat.adjoint();
                    let mut col = DVector::zeros(n);
                    for t in &pc.terms {
                        // Re tr(Λ B) for the sparse basis matrix B.
                        let v: f64 = t.entries.iter().map(|&(r, cc, val)| (lam[(cc, r)] * val).re).sum();
                        if t.var < n {
                            col[t.var] += v;
                        }
                    }
                    columns.push(col);
                }
                blocks.push(Block::Psd { first, k, v0, slack: umat });
            }
        }
    }

    let primal_infeasibility = p.max_violation(point);
    let cnorm = c.norm();
    let q = columns.len();
    let active_constraints = blocks.iter().filter(|b| !matches!(b, Block::Free)).count();
    if q == 0 {
        return KktReport {
            stationarity: cnorm / (1.0 + cnorm),
            primal_infeasibility,
            dual_infeasibility: 0.0,
            complementarity: 0.0,
            active_constraints,
        };
    }
    let l = DMatrix::from_fn(n, q, |r, j| columns[j][r]);
    let neg_c = -&c;
    let svd = l.clone().svd(true, true);
    let theta_ls = svd.solve(&neg_c, 1e-12).unwrap_or_else(|_| DVector::zeros(q));

    let dual_infeasibility = blocks
        .iter()
        .map(|b| match b {
            Block::Free => 0.0,
            Block::Nonneg { col, .. } => (-theta_ls[*col]).max(0.0),
            Block::Psd { first, k, .. } => {
                let m = params_to_herm(&theta_ls.as_slice()[*first..*first + k * k], *k);
                (-HermMat::from_matrix_unchecked(m).min_eigenvalue()).max(0.0)
            }
        })
        .fold(0.0, f64::max)
        / (1.0 + theta_ls.amax());

    let project = |theta: &mut DVector<f64>| {
        for b in &blocks {
            match b {
                Block::Free => {}
                Block::Nonneg { col, .. } => theta[*col] = theta[*col].max(0.0),
                Block::Psd { first, k, .. } => {
                    let m = params_to_herm(&theta.as_slice()[*first..*first + k * k], *k);
                    let proj = HermMat::from_matrix_unchecked(m).project_psd();
                    for (i, v) in herm_to_params(proj.as_matrix(), *k).into_iter().enumerate() {
                        theta[*first + i] = v;
                    }
                }
            }
        }
    };

    let residual = |theta: &DVector<f64>| (&c + &l * theta).norm();
    let mut theta = theta_ls.clone();
    project(&mut theta);
    let ls_resid = residual(&theta_ls);
    if residual(&theta) > ls_resid + 1e-12 * (1.0 + cnorm) {
        // Projected gradient with Nesterov momentum on ½‖c + Lθ‖².
        let lip = svd.singular_values.iter().fold(0.0_f64, |m, &s| m.max(s)).powi(2).max(1e-300);
        let mut y = theta.clone();
        let mut tk = 1.0_f64;
        for _ in 0..20_000 {
            let grad = l.transpose() * (&c + &l * &y);
            let mut next = &y - grad / lip;
            project(&mut next);
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
            y = &next + (&next - &theta) * ((tk - 1.0) / tn);
            let moved = (&next - &theta).norm();
            theta = next;
            tk = tn;
            if moved <= 1e-15 * (1.0 + theta.norm()) {
                break;
            }
        }
    }
    let stationarity = residual(&theta) / (1.0 + cnorm);

    let complementarity = blocks
        .iter()
        .map(|b| match b {
            Block::Free => 0.0,
            Block::Nonneg { col, slack } => (theta[*col] * slack).abs(),
            Block::Psd { first, k, v0, slack } => {
                let m = params_to_herm(&theta.as_slice()[*first..*first + k * k], *k);
                let dim = slack.dim();
                let vmat = DMatrix::from_fn(dim, *k, |r, c| v0[c].entries()[r]);
                let lam = HermMat::from_matrix_unchecked(&vmat * m * vmat.adjoint());
                lam.inner(slack).abs()
            }
        })
        .fold(0.0, f64::max);

    KktReport { stationarity, primal_infeasibility, dual_infeasibility, complementarity, active_constraints }
}
