//! Real-vectorized form of a [`ConvexProgram`] and the barrier functions of
//! its cones.
//!
//! Each `d×d` Hermitian block owns `d²` reals: the `d` diagonal entries, then
//! real and imaginary parts of the strict upper triangle in row-major order.

use nalgebra::{DMatrix, DVector};

use super::{Affine, ConeConstraint, ConvexProgram, Relation, Solution};
use crate::linalg::{HermMat, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Sparse affine scalar map `c0 + Σ a_j z_j`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Lin {
    pub c0: f64,
    pub terms: Vec<(usize, f64)>,
}

impl Lin {
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.c0 + self.terms.iter().map(|&(j, a)| a * z[j]).sum::<f64>()
    }

    fn normalized(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (j, a) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => out.push((j, a)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Lin { c0: self.c0, terms: out }
    }

    fn neg(&self) -> Lin {
        Lin { c0: -self.c0, terms: self.terms.iter().map(|&(j, a)| (j, -a)).collect() }
    }

    fn plus_var(&self, j: usize, a: f64) -> Lin {
        let mut terms = self.terms.clone();
        terms.push((j, a));
        Lin { c0: self.c0, terms }.normalized()
    }

    pub fn reduced(&self, red: &Reduction) -> Lin {
        let mut c0 = self.c0;
        let mut dense = vec![0.0; red.m];
        for &(i, a) in &self.terms {
            c0 += a * red.z0[i];
            for (j, d) in dense.iter_mut().enumerate() {
                *d += a * red.basis[(i, j)];
            }
        }
        Lin { c0, terms: dense.into_iter().enumerate().filter(|t| t.1 != 0.0).collect() }
    }

    pub fn dense(&self, n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        for &(j, a) in &self.terms {
            v[j] += a;
        }
        v
    }
}

/// `U(z) = base + Σ_k z[var_k]·B_k` with sparse `B_k`.
#[derive(Debug, Clone)]
pub(crate) struct PsdCone {
    pub n: usize,
    pub base: Vec<C64>,
    pub terms: Vec<PsdTerm>,
}

#[derive(Debug, Clone)]
pub(crate) struct PsdTerm {
    pub var: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl PsdCone {
    pub fn assemble(&self, z: &[f64]) -> Vec<C64> {
        let mut u = self.base.clone();
        for t in &self.terms {
            let x = z[t.var];
            if x != 0.0 {
                for &(r, c, v) in &t.entries {
                    u[r * self.n + c] += v * x;
                }
            }
        }
        u
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Cone {
    Nonneg(Lin),
    Psd(PsdCone),
    /// `(a, b, w)` with `a·b ≥ w²`.
    Rotated([Lin; 3]),
    /// `(x, y, z)` with `y·e^{x/y} ≤ z`.
    Exp([Lin; 3]),
}

/// Lower-triangular Cholesky factor of a Hermitian row-major matrix.
pub(crate) fn cholesky(a: &[C64], n: usize) -> Option<Vec<C64>> {
    let mut l = vec![ZERO; n * n];
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[j * n + j] = C64::new(dj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / dj;
        }
    }
    Some(l)
}

/// `(L Lᴴ)⁻¹` from the Cholesky factor.
pub(crate) fn chol_inverse(l: &[C64], n: usize) -> Vec<C64> {
    let mut linv = vec![ZERO; n * n];
    for j in 0..n {
        for i in j..n {
            let mut s = if i == j { C64::new(1.0, 0.0) } else { ZERO };
            for k in j..i {
                s -= l[i * n + k] * linv[k * n + j];
            }
            linv[i * n + j] = s / l[i * n + i].re;
        }
    }
    let mut y = vec![ZERO; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = ZERO;
            for k in i.max(j)..n {
                s += linv[k * n + i].conj() * linv[k * n + j];
            }
            y[i * n + j] = s;
        }
    }
    y
}

fn add_outer(h: &mut DMatrix<f64>, a: &Lin, b: &Lin, w: f64) {
    if w == 0.0 {
        return;
    }
    for &(i, ai) in &a.terms {
        for &(j, bj) in &b.terms {
            h[(i, j)] += w * ai * bj;
        }
    }
}

fn add_grad(g: &mut DVector<f64>, a: &Lin, w: f64) {
    for &(i, ai) in &a.terms {
        g[i] += w * ai;
    }
}

/// Local barrier of the exponential cone at `(x, y, z)`: value, gradient, Hessian.
pub(crate) fn exp_local(x: f64, y: f64, z: f64) -> Option<(f64, [f64; 3], [[f64; 3]; 3])> {
    if !(y > 0.0 && z > 0.0) {
        return None;
    }
    let lzy = (z / y).ln();
    let psi = y * lzy - x;
    if !(psi > 0.0) || !psi.is_finite() {
        return None;
    }
    let dpsi = [-1.0, lzy - 1.0, y / z];
    let d2psi = [[0.0, 0.0, 0.0], [0.0, -1.0 / y, 1.0 / z], [0.0, 1.0 / z, -y / (z * z)]];
    let val = -psi.ln() - y.ln() - z.ln();
    let mut g = [0.0; 3];
    let mut h = [[0.0; 3]; 3];
    for a in 0..3 {
        g[a] = -dpsi[a] / psi;
        for b in 0..3 {
            h[a][b] = dpsi[a] * dpsi[b] / (psi * psi) - d2psi[a][b] / psi;
        }
    }
    g[1] -= 1.0 / y;
    g[2] -= 1.0 / z;
    h[1][1] += 1.0 / (y * y);
    h[2][2] += 1.0 / (z * z);
    Some((val, g, h))
}

pub(crate) fn rotated_local(a: f64, b: f64, w: f64) -> Option<(f64, [f64; 3], [[f64; 3]; 3])> {
    let phi = a * b - w * w;
    if !(a > 0.0 && b > 0.0 && phi > 0.0) || !phi.is_finite() {
        return None;
    }
    let dphi = [b, a, -2.0 * w];
    let d2phi = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -2.0]];
    let mut g = [0.0; 3];
    let mut h = [[0.0; 3]; 3];
    for i in 0..3 {
        g[i] = -dphi[i] / phi;
        for j in 0..3 {
            h[i][j] = dphi[i] * dphi[j] / (phi * phi) - d2phi[i][j] / phi;
        }
    }
    Some((-phi.ln(), g, h))
}

impl Cone {
    /// Barrier parameter.
    pub fn nu(&self) -> f64 {
        match self {
            Cone::Nonneg(_) => 1.0,
            Cone::Psd(p) => p.n as f64,
            Cone::Rotated(_) => 2.0,
            Cone::Exp(_) => 3.0,
        }
    }

    /// Barrier value, or `None` outside the interior.
    pub fn value(&self, z: &[f64]) -> Option<f64> {
        match self {
            Cone::Nonneg(l) => {
                let u = l.eval(z);
                (u > 0.0).then(|| -u.ln())
            }
            Cone::Psd(p) => {
                let l = cholesky(&p.assemble(z), p.n)?;
                Some(-2.0 * (0..p.n).map(|j| l[j * p.n + j].re.ln()).sum::<f64>())
            }
            Cone::Rotated([a, b, w]) => rotated_local(a.eval(z), b.eval(z), w.eval(z)).map(|r| r.0),
            Cone::Exp([x, y, zz]) => exp_local(x.eval(z), y.eval(z), zz.eval(z)).map(|r| r.0),
        }
    }

    /// Adds gradient and Hessian of the barrier; false outside the interior.
    pub fn accumulate(&self, z: &[f64], g: &mut DVector<f64>, h: &mut DMatrix<f64>) -> bool {
        match self {
            Cone::Nonneg(l) => {
                let u = l.eval(z);
                if !(u > 0.0) {
                    return false;
                }
                add_grad(g, l, -1.0 / u);
                add_outer(h, l, l, 1.0 / (u * u));
                true
            }
            Cone::Psd(p) => psd_accumulate(p, z, g, h),
            Cone::Rotated(parts) | Cone::Exp(parts) => {
                let vals = [parts[0].eval(z), parts[1].eval(z), parts[2].eval(z)];
                let local = match self {
                    Cone::Rotated(_) => rotated_local(vals[0], vals[1], vals[2]),
                    _ => exp_local(vals[0], vals[1], vals[2]),
                };
                let Some((_, lg, lh)) = local else {
                    return false;
                };
                for a in 0..3 {
                    add_grad(g, &parts[a], lg[a]);
                    for b in 0..3 {
                        add_outer(h, &parts[a], &parts[b], lh[a][b]);
                    }
                }
                true
            }
        }
    }

    /// The cone with `s·e` added, `e` a fixed interior direction.
    pub fn with_shift_var(&self, s: usize) -> Cone {
        match self {
            Cone::Nonneg(l) => Cone::Nonneg(l.plus_var(s, 1.0)),
            Cone::Psd(p) => {
                let mut q = p.clone();
                q.terms.push(PsdTerm { var: s, entries: (0..p.n).map(|k| (k, k, C64::new(1.0, 0.0))).collect() });
                Cone::Psd(q)
            }
            Cone::Rotated([a, b, w]) => Cone::Rotated([a.plus_var(s, 1.0), b.plus_var(s, 1.0), w.clone()]),
            Cone::Exp([x, y, z]) => Cone::Exp([x.plus_var(s, -1.0), y.plus_var(s, 1.0), z.plus_var(s, 1.0)]),
        }
    }

    /// The cone relaxed by the constant `delta·e`.
    pub fn shifted(&self, delta: f64) -> Cone {
        let bump = |l: &Lin, d: f64| Lin { c0: l.c0 + d, terms: l.terms.clone() };
        match self {
            Cone::Nonneg(l) => Cone::Nonneg(bump(l, delta)),
            Cone::Psd(p) => {
                let mut q = p.clone();
                for k in 0..p.n {
                    q.base[k * p.n + k] += delta;
                }
                Cone::Psd(q)
            }
            Cone::Rotated([a, b, w]) => Cone::Rotated([bump(a, delta), bump(b, delta), w.clone()]),
            Cone::Exp([x, y, z]) => Cone::Exp([bump(x, -delta), bump(y, delta), bump(z, delta)]),
        }
    }

    pub fn reduced(&self, red: &Reduction) -> Cone {
        match self {
            Cone::Nonneg(l) => Cone::Nonneg(l.reduced(red)),
            Cone::Rotated(p) => Cone::Rotated([p[0].reduced(red), p[1].reduced(red), p[2].reduced(red)]),
            Cone::Exp(p) => Cone::Exp([p[0].reduced(red), p[1].reduced(red), p[2].reduced(red)]),
            Cone::Psd(p) => {
                let n = p.n;
                let mut base = p.base.clone();
                let mut dense = vec![vec![ZERO; n * n]; red.m];
                for t in &p.terms {
                    let x0 = red.z0[t.var];
                    for &(r, c, v) in &t.entries {
                        base[r * n + c] += v * x0;
                        for (j, d) in dense.iter_mut().enumerate() {
                            let nj = red.basis[(t.var, j)];
                            if nj != 0.0 {
                                d[r * n + c] += v * nj;
                            }
                        }
                    }
                }
                let terms = dense
                    .into_iter()
                    .enumerate()
                    .filter_map(|(j, d)| {
                        let entries: Vec<_> = d
                            .into_iter()
                            .enumerate()
                            .filter(|(_, v)| v.norm() > 1e-300)
                            .map(|(k, v)| (k / n, k % n, v))
                            .collect();
                        (!entries.is_empty()).then_some(PsdTerm { var: j, entries })
                    })
                    .collect();
                Cone::Psd(PsdCone { n, base, terms })
            }
        }
    }
}

fn psd_accumulate(p: &PsdCone, z: &[f64], g: &mut DVector<f64>, h: &mut DMatrix<f64>) -> bool {
    let n = p.n;
    let Some(l) = cholesky(&p.assemble(z), n) else {
        return false;
    };
    let y = chol_inverse(&l, n);
    // T_k = Y·B_k, kept only on the columns where B_k has entries.
    let cols: Vec<Vec<(usize, Vec<C64>)>> = p
        .terms
        .iter()
        .map(|t| {
            let mut out: Vec<(usize, Vec<C64>)> = Vec::new();
            for &(r, c, v) in &t.entries {
                let pos = match out.iter().position(|(col, _)| *col == c) {
                    Some(pos) => pos,
                    None => {
                        out.push((c, vec![ZERO; n]));
                        out.len() - 1
                    }
                };
                let colv = &mut out[pos].1;
                for a in 0..n {
                    colv[a] += y[a * n + r] * v;
                }
            }
            out
        })
        .collect();
    for (k, tk) in p.terms.iter().enumerate() {
        let trace: f64 = cols[k].iter().map(|(b, col)| col[*b].re).sum();
        g[tk.var] -= trace;
        for (l_idx, tl) in p.terms.iter().enumerate().skip(k) {
            // Re tr(T_k T_l) = Re Σ_{b ∈ cols_k} Σ_{a ∈ cols_l} T_k[a][b]·T_l[b][a].
            let mut acc = 0.0;
            for (b, colk) in &cols[k] {
                for (a, coll) in &cols[l_idx] {
                    acc += (colk[*a] * coll[*b]).re;
                }
            }
            h[(tk.var, tl.var)] += acc;
            if l_idx != k {
                h[(tl.var, tk.var)] += acc;
            }
        }
    }
    true
}

/// Null-space parameterization `z = z0 + N·w` of the equality constraints.
#[derive(Debug, Clone)]
pub(crate) struct Reduction {
    pub z0: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub m: usize,
}

impl Reduction {
    pub fn identity(n: usize) -> Self {
        Reduction { z0: DVector::zeros(n), basis: DMatrix::identity(n, n), m: n }
    }

    /// `None` when the equalities are inconsistent.
    pub fn from_equalities(rows: &[Lin], n: usize) -> Option<Self> {
        if rows.is_empty() {
            return Some(Self::identity(n));
        }
        let mut a = DMatrix::zeros(n.max(rows.len()), n);
        let mut b = DVector::zeros(n.max(rows.len()));
        for (r, row) in rows.iter().enumerate() {
            for &(j, v) in &row.terms {
                a[(r, j)] += v;
            }
            b[r] = -row.c0;
        }
        let svd = a.clone().svd(true, true);
        let (u, vt) = (svd.u.as_ref()?, svd.v_t.as_ref()?);
        let smax = svd.singular_values.iter().fold(0.0_f64, |m, &s| m.max(s));
        let tol = 1e-12 * smax.max(1.0) * (n as f64);
        let mut z0 = DVector::zeros(n);
        let mut null_rows = Vec::new();
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > tol {
                let coef = u.column(k).dot(&b) / s;
                z0 += vt.row(k).transpose() * coef;
            } else {
                null_rows.push(k);
            }
        }
        let resid = (&a * &z0 - &b).norm();
        if resid > 1e-9 * (1.0 + b.norm()) {
            return None;
        }
        let m = null_rows.len();
        let basis = DMatrix::from_fn(n, m, |i, j| vt[(null_rows[j], i)]);
        Some(Reduction { z0, basis, m })
    }

    pub fn lift(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.z0 + &self.basis * w
    }

    /// Least-squares preimage of `z` (exact when `z` satisfies the equalities).
    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * (z - &self.z0)
    }
}

/// Variable layout shared by compilation and unpacking.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub mat_offsets: Vec<usize>,
    pub mat_dims: Vec<usize>,
    pub scalar_offset: usize,
    pub n: usize,
}

impl Layout {
    pub fn new(p: &ConvexProgram) -> Self {
        let mut off = 0;
        let mut mat_offsets = Vec::new();
        let mut mat_dims = Vec::new();
        for (_, d) in &p.matrix_vars {
            mat_offsets.push(off);
            mat_dims.push(*d);
            off += d * d;
        }
        Layout { mat_offsets, mat_dims, scalar_offset: off, n: off + p.scalar_vars.len() }
    }

    /// Position of the real parameter for entry `(r, c)`, `r < c`, real or imaginary part.
    fn offdiag_index(d: usize, r: usize, c: usize) -> usize {
        // Pairs before row r: Σ_{q<r} (d-1-q), then offset within the row.
        let before = r * (2 * d - r - 1) / 2;
        d + 2 * (before + (c - r - 1))
    }

    /// Gradient of `Re tr(C X)` with respect to the block's parameters.
    pub fn matrix_coeffs(&self, m: usize, c: &HermMat) -> Vec<(usize, f64)> {
        let (o, d) = (self.mat_offsets[m], self.mat_dims[m]);
        let mut out = Vec::new();
        for r in 0..d {
            let v = c.get(r, r).re;
            if v != 0.0 {
                out.push((o + r, v));
            }
            for col in (r + 1)..d {
                let z = c.get(r, col);
                let k = o + Self::offdiag_index(d, r, col);
                if z.re != 0.0 {
                    out.push((k, 2.0 * z.re));
                }
                if z.im != 0.0 {
                    out.push((k + 1, 2.0 * z.im));
                }
            }
        }
        out
    }

    /// Basis matrices `B_k` of one block as sparse entry lists.
    fn block_terms(&self, m: usize) -> Vec<PsdTerm> {
        let (o, d) = (self.mat_offsets[m], self.mat_dims[m]);
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        let mut terms = Vec::with_capacity(d * d);
        for r in 0..d {
            terms.push(PsdTerm { var: o + r, entries: vec![(r, r, one)] });
        }
        for r in 0..d {
            for c in (r + 1)..d {
                let k = o + Self::offdiag_index(d, r, c);
                terms.push(PsdTerm { var: k, entries: vec![(r, c, one), (c, r, one)] });
                terms.push(PsdTerm { var: k + 1, entries: vec![(r, c, i), (c, r, -i)] });
            }
        }
        terms
    }

    pub fn unpack(&self, z: &[f64]) -> Solution {
        let matrices = self
            .mat_offsets
            .iter()
            .zip(&self.mat_dims)
            .map(|(&o, &d)| {
                let mut m = DMatrix::from_element(d, d, ZERO);
                for r in 0..d {
                    m[(r, r)] = C64::new(z[o + r], 0.0);
                    for c in (r + 1)..d {
                        let k = o + Self::offdiag_index(d, r, c);
                        m[(r, c)] = C64::new(z[k], z[k + 1]);
                        m[(c, r)] = C64::new(z[k], -z[k + 1]);
                    }
                }
                HermMat::from_matrix_unchecked(m)
            })
            .collect();
        let scalars = z[self.scalar_offset..self.n].to_vec();
        Solution { matrices, scalars }
    }

    pub fn pack(&self, s: &Solution) -> DVector<f64> {
        let mut z = DVector::zeros(self.n);
        for (m, x) in s.matrices.iter().enumerate() {
            let (o, d) = (self.mat_offsets[m], self.mat_dims[m]);
            for r in 0..d {
                z[o + r] = x.get(r, r).re;
                for c in (r + 1)..d {
                    let k = o + Self::offdiag_index(d, r, c);
                    z[k] = x.get(r, c).re;
                    z[k + 1] = x.get(r, c).im;
                }
            }
        }
        for (j, v) in s.scalars.iter().enumerate() {
            z[self.scalar_offset + j] = *v;
        }
        z
    }

    pub fn affine(&self, a: &Affine) -> Lin {
        let mut terms: Vec<(usize, f64)> =
            a.scalar_terms.iter().map(|(v, c)| (self.scalar_offset + v.0, *c)).collect();
        for (m, c) in &a.matrix_terms {
            terms.extend(self.matrix_coeffs(m.0, c));
        }
        Lin { c0: a.constant, terms }.normalized()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub layout: Layout,
    pub objective: Lin,
    pub cones: Vec<Cone>,
    /// Rows `lin(z) = 0`.
    pub equalities: Vec<Lin>,
}

pub(crate) fn compile(p: &ConvexProgram) -> Compiled {
    let layout = Layout::new(p);
    let mut cones = Vec::new();
    for (m, (_, d)) in p.matrix_vars.iter().enumerate() {
        let d = *d;
        cones.push(Cone::Psd(PsdCone { n: d, base: vec![ZERO; d * d], terms: layout.block_terms(m) }));
    }
    for (j, (_, lb)) in p.scalar_vars.iter().enumerate() {
        if let Some(l) = lb {
            cones.push(Cone::Nonneg(Lin { c0: -l, terms: vec![(layout.scalar_offset + j, 1.0)] }));
        }
    }
    let mut equalities = Vec::new();
    for c in &p.constraints {
        let lhs = layout.affine(&c.lhs);
        // lhs − rhs as a Lin.
        let diff = Lin { c0: lhs.c0 - c.rhs, terms: lhs.terms };
        match (c.relation, c.exp_term) {
            (Relation::Eq, _) => {
                equalities.push(diff);
                continue;
            }
            (Relation::Ge, _) => cones.push(Cone::Nonneg(diff)),
            (Relation::Le, None) => cones.push(Cone::Nonneg(diff.neg())),
            (Relation::Le, Some((x, coef))) => {
                // coef·e^x ≤ rhs − lhs  ⇔  (x + ln coef, 1, rhs − lhs) ∈ K_exp.
                let xl = Lin { c0: coef.ln(), terms: vec![(layout.scalar_offset + x.0, 1.0)] };
                cones.push(Cone::Exp([xl, Lin { c0: 1.0, terms: vec![] }, diff.neg()]));
            }
        }
    }
    for cone in &p.cones {
        cones.push(match cone {
            ConeConstraint::Hyperbolic { a, b, w } => {
                Cone::Rotated([layout.affine(a), layout.affine(b), layout.affine(w)])
            }
            ConeConstraint::ExpCone { x, y, z } => Cone::Exp([layout.affine(x), layout.affine(y), layout.affine(z)]),
        });
    }
    Compiled { objective: layout.affine(&p.objective), layout, cones, equalities }
}
