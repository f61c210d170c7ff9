//! Dense complex linear algebra for the small matrices that appear in
//! transmit-covariance design (dimension up to about 8).
//!
//! [`CVec`] and [`HermMat`] are thin validated wrappers over `nalgebra`
//! storage. Eigendecomposition uses cyclic complex Jacobi rotations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Complex scalar used throughout the crate.
pub type C64 = Complex64;

const HERMITIAN_RTOL: f64 = 1e-12;
const PARALLEL_SINE_TOL: f64 = 1e-8;
const PSD_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (relative asymmetry {0:.3e})")]
    NonHermitian(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vectors are parallel")]
    DegenerateParallel,
    #[error("non-finite entry")]
    NonFinite,
    #[error("empty vector or matrix")]
    Empty,
    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
}

/// A finite, nonempty complex column vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CVec(DVector<C64>);

impl CVec {
    pub fn new(entries: Vec<C64>) -> Result<Self, LinalgError> {
        if entries.is_empty() {
            return Err(LinalgError::Empty);
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(CVec(DVector::from_vec(entries)))
    }

    /// Builds from `(re, im)` pairs. Panics on non-finite input; intended for literals.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self::new(pairs.iter().map(|&(r, i)| C64::new(r, i)).collect()).expect("valid literal vector")
    }

    pub fn from_real(xs: &[f64]) -> Self {
        Self::new(xs.iter().map(|&r| C64::new(r, 0.0)).collect()).expect("valid literal vector")
    }

    pub fn zeros(n: usize) -> Self {
        CVec(DVector::from_element(n, C64::new(0.0, 0.0)))
    }

    pub fn basis(n: usize, k: usize) -> Self {
        let mut v = Self::zeros(n);
        v.0[k] = C64::new(1.0, 0.0);
        v
    }

    pub(crate) fn from_vector(v: DVector<C64>) -> Self {
        CVec(v)
    }

    pub fn as_vector(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[C64] {
        self.0.as_slice()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Inner product `selfᴴ other`.
    pub fn dot(&self, other: &CVec) -> C64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn scale(&self, s: C64) -> CVec {
        CVec(&self.0 * s)
    }

    pub fn scale_real(&self, s: f64) -> CVec {
        CVec(self.0.map(|z| z * s))
    }

    pub fn add(&self, other: &CVec) -> CVec {
        CVec(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &CVec) -> CVec {
        CVec(&self.0 - &other.0)
    }

    /// Unit vector in the direction of `self`, or `None` for the zero vector.
    pub fn unit(&self) -> Option<CVec> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(self.scale_real(1.0 / n))
        } else {
            None
        }
    }

    /// Rotates the global phase so the first nonzero coordinate is real and positive.
    pub fn phase_normalized(&self) -> CVec {
        let scale = self.0.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        let first = self.0.iter().find(|z| z.norm() > 1e-12 * scale.max(f64::MIN_POSITIVE));
        match first {
            Some(z) => {
                let ph = z.conj() / z.norm();
                self.scale(ph)
            }
            None => self.clone(),
        }
    }

    /// Rank-one matrix `self selfᴴ`.
    pub fn outer(&self) -> HermMat {
        HermMat::outer(self)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// A Hermitian matrix, optionally known to be positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct HermMat {
    m: DMatrix<C64>,
    psd: bool,
}

impl HermMat {
    /// Validates Hermitian symmetry (relative 1e-12) and symmetrizes exactly.
    pub fn new(m: DMatrix<C64>) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.is_empty() {
            return Err(LinalgError::Empty);
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let adj = m.adjoint();
        let scale = m.norm().max(1.0);
        let asym = (&m - &adj).norm() / scale;
        if asym > HERMITIAN_RTOL {
            return Err(LinalgError::NonHermitian(asym));
        }
        Ok(Self::from_matrix_unchecked((m + adj) * C64::new(0.5, 0.0)))
    }

    /// Validates and additionally requires positive semidefiniteness.
    pub fn new_psd(m: DMatrix<C64>) -> Result<Self, LinalgError> {
        let mut h = Self::new(m)?;
        h.check_psd()?;
        Ok(h)
    }

    pub(crate) fn from_matrix_unchecked(m: DMatrix<C64>) -> Self {
        HermMat { m, psd: false }
    }

    pub(crate) fn with_psd_flag(mut self, psd: bool) -> Self {
        self.psd = psd;
        self
    }

    pub fn zeros(n: usize) -> Self {
        HermMat { m: DMatrix::from_element(n, n, C64::new(0.0, 0.0)), psd: true }
    }

    pub fn identity(n: usize) -> Self {
        HermMat { m: DMatrix::identity(n, n), psd: true }
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for (k, &x) in d.iter().enumerate() {
            m[(k, k)] = C64::new(x, 0.0);
        }
        HermMat { m, psd: d.iter().all(|&x| x >= 0.0) }
    }

    pub fn outer(v: &CVec) -> Self {
        let m = v.as_vector() * v.as_vector().adjoint();
        HermMat::from_matrix_unchecked(m).with_psd_flag(true)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn is_psd_flagged(&self) -> bool {
        self.psd
    }

    /// Verifies `λmin ≥ −1e-9·λmax` and sets the PSD flag.
    pub fn check_psd(&mut self) -> Result<(), LinalgError> {
        let e = herm_eig(self)?;
        let lmax = e.values[0].max(0.0);
        let lmin = *e.values.last().unwrap();
        if lmin < -PSD_RTOL * lmax.max(f64::MIN_POSITIVE) && lmin < -1e-300 {
            return Err(LinalgError::NotPsd(lmin));
        }
        self.psd = true;
        Ok(())
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.m[(r, c)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|k| self.m[(k, k)].re).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.m.norm()
    }

    pub fn scale(&self, s: f64) -> HermMat {
        HermMat { m: self.m.map(|z| z * s), psd: self.psd && s >= 0.0 }
    }

    pub fn add(&self, other: &HermMat) -> HermMat {
        HermMat { m: &self.m + &other.m, psd: self.psd && other.psd }
    }

    pub fn sub(&self, other: &HermMat) -> HermMat {
        HermMat::from_matrix_unchecked(&self.m - &other.m)
    }

    /// `Re tr(self · other)`; the real inner product on Hermitian matrices.
    pub fn inner(&self, other: &HermMat) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for r in 0..n {
            for c in 0..n {
                acc += (self.m[(r, c)] * other.m[(c, r)]).re;
            }
        }
        acc
    }

    pub fn mul_vec(&self, v: &CVec) -> CVec {
        CVec::from_vector(&self.m * v.as_vector())
    }

    /// Eigenvalue-clipped projection onto the PSD cone.
    pub fn project_psd(&self) -> HermMat {
        let e = herm_eig(self).expect("stored matrices are Hermitian");
        let mut out = DMatrix::from_element(self.dim(), self.dim(), C64::new(0.0, 0.0));
        for (lam, u) in e.values.iter().zip(e.vectors.iter()) {
            if *lam > 0.0 {
                out += u.as_vector() * u.as_vector().adjoint() * C64::new(*lam, 0.0);
            }
        }
        HermMat::from_matrix_unchecked(out).with_psd_flag(true)
    }

    /// Principal square root of a PSD matrix (negative eigenvalues clipped).
    pub fn sqrt_psd(&self) -> DMatrix<C64> {
        let e = herm_eig(self).expect("stored matrices are Hermitian");
        let n = self.dim();
        let mut out = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for (lam, u) in e.values.iter().zip(e.vectors.iter()) {
            if *lam > 0.0 {
                out += u.as_vector() * u.as_vector().adjoint() * C64::new(lam.sqrt(), 0.0);
            }
        }
        out
    }

    pub fn max_eigenvalue(&self) -> f64 {
        herm_eig(self).expect("stored matrices are Hermitian").values[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *herm_eig(self).expect("stored matrices are Hermitian").values.last().unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Eigen-pairs sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Vec<CVec>,
}

impl Eigen {
    pub fn principal(&self) -> &CVec {
        &self.vectors[0]
    }

    /// Gap between the two largest eigenvalues (infinite for 1×1).
    pub fn top_gap(&self) -> f64 {
        if self.values.len() < 2 {
            f64::INFINITY
        } else {
            self.values[0] - self.values[1]
        }
    }
}

/// Hermitian eigendecomposition by cyclic complex Jacobi rotations.
pub fn herm_eig(mat: &HermMat) -> Result<Eigen, LinalgError> {
    let n = mat.dim();
    if n == 0 {
        return Err(LinalgError::Empty);
    }
    let mut a: Vec<C64> = (0..n * n).map(|k| mat.m[(k / n, k % n)]).collect();
    let mut v: Vec<C64> = (0..n * n)
        .map(|k| if k / n == k % n { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
        .collect();
    for k in 0..n {
        a[k * n + k] = C64::new(a[k * n + k].re, 0.0);
    }
    let total: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let tiny = f64::EPSILON * f64::EPSILON * total.max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| a[r * n + c].norm_sqr())
            .sum();
        if off <= tiny {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                let b = apq.norm();
                if b * b <= tiny / ((n * n) as f64) {
                    continue;
                }
                let e = apq / b;
                let app = a[p * n + p].re;
                let aqq = a[q * n + q].re;
                let tau = (aqq - app) / (2.0 * b);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Unitary V with columns p,q: [c, -s·ē]ᵀ and [s, c·ē]ᵀ, acting as A ← Vᴴ A V.
                let ebar = e.conj();
                let vpp = C64::new(c, 0.0);
                let vpq = C64::new(s, 0.0);
                let vqp = -ebar * s;
                let vqq = ebar * c;
                for r in 0..n {
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    a[r * n + p] = arp * vpp + arq * vqp;
                    a[r * n + q] = arp * vpq + arq * vqq;
                    let wrp = v[r * n + p];
                    let wrq = v[r * n + q];
                    v[r * n + p] = wrp * vpp + wrq * vqp;
                    v[r * n + q] = wrp * vpq + wrq * vqq;
                }
                for col in 0..n {
                    let xp = a[p * n + col];
                    let xq = a[q * n + col];
                    a[p * n + col] = vpp.conj() * xp + vqp.conj() * xq;
                    a[q * n + col] = vpq.conj() * xp + vqq.conj() * xq;
                }
                a[p * n + q] = C64::new(0.0, 0.0);
                a[q * n + p] = C64::new(0.0, 0.0);
                a[p * n + p] = C64::new(a[p * n + p].re, 0.0);
                a[q * n + q] = C64::new(a[q * n + q].re, 0.0);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].re.total_cmp(&a[i * n + i].re));
    let values = order.iter().map(|&k| a[k * n + k].re).collect();
    let vectors = order
        .iter()
        .map(|&k| CVec::from_vector(DVector::from_fn(n, |r, _| v[r * n + k])))
        .collect();
    Ok(Eigen { values, vectors })
}

/// Unit vector along the component of `a` orthogonal to `b`.
pub fn proj_orth_unit(a: &CVec, b: &CVec) -> Result<CVec, LinalgError> {
    if a.len() != b.len() {
        return Err(LinalgError::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 {
        return Err(LinalgError::DegenerateParallel);
    }
    if nb == 0.0 {
        return Ok(a.scale_real(1.0 / na));
    }
    let bu = b.scale_real(1.0 / nb);
    let perp = a.sub(&bu.scale(bu.dot(a)));
    let np = perp.norm();
    if np <= PARALLEL_SINE_TOL * na {
        return Err(LinalgError::DegenerateParallel);
    }
    let mut u = perp.scale_real(1.0 / np);
    // One re-orthogonalization pass keeps |uᴴb| at rounding level.
    let fix = bu.scale(bu.dot(&u));
    u = u.sub(&fix);
    let nu = u.norm();
    Ok(u.scale_real(1.0 / nu))
}

/// Sine of the angle between two nonzero vectors.
pub fn angle_sine(a: &CVec, b: &CVec) -> f64 {
    let na2 = a.norm_sqr();
    let nb2 = b.norm_sqr();
    if na2 == 0.0 || nb2 == 0.0 {
        return 0.0;
    }
    let cos2 = (a.dot(b).norm_sqr() / (na2 * nb2)).min(1.0);
    (1.0 - cos2).max(0.0).sqrt()
}

pub fn is_parallel(a: &CVec, b: &CVec) -> bool {
    angle_sine(a, b) <= PARALLEL_SINE_TOL
}

/// `hᴴ S h`.
pub fn quad_form(s: &HermMat, h: &CVec) -> Result<f64, LinalgError> {
    if s.dim() != h.len() {
        return Err(LinalgError::DimensionMismatch { expected: s.dim(), found: h.len() });
    }
    Ok(quad_form_unchecked(s, h))
}

pub(crate) fn quad_form_unchecked(s: &HermMat, h: &CVec) -> f64 {
    let n = h.len();
    let hv = h.entries();
    let mut acc = 0.0;
    for r in 0..n {
        let mut row = C64::new(0.0, 0.0);
        for c in 0..n {
            row += s.m[(r, c)] * hv[c];
        }
        acc += (hv[r].conj() * row).re;
    }
    acc
}

impl Serialize for CVec {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.0.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for CVec {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(de)?;
        CVec::new(pairs.iter().map(|p| C64::new(p[0], p[1])).collect()).map_err(serde::de::Error::custom)
    }
}

impl Serialize for HermMat {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let n = self.dim();
        let rows: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|r| (0..n).map(|c| [self.m[(r, c)].re, self.m[(r, c)].im]).collect())
            .collect();
        rows.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for HermMat {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(de)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("matrix must be square"));
        }
        let m = DMatrix::from_fn(n, n, |r, c| C64::new(rows[r][c][0], rows[r][c][1]));
        HermMat::new(m).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn reconstruct(e: &Eigen) -> DMatrix<C64> {
        let n = e.vectors[0].len();
        let mut out = DMatrix::from_element(n, n, c(0.0, 0.0));
        for (l, u) in e.values.iter().zip(&e.vectors) {
            out += u.as_vector() * u.as_vector().adjoint() * c(*l, 0.0);
        }
        out
    }

    fn orthonormality_error(e: &Eigen) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in e.vectors.iter().enumerate() {
            for (j, b) in e.vectors.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((a.dot(b) - c(target, 0.0)).norm());
            }
        }
        worst
    }

    #[test]
    fn eig_identity() {
        let e = herm_eig(&HermMat::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
        assert!(orthonormality_error(&e) < 1e-14);
    }

    #[test]
    fn eig_diagonal_sorted() {
        let e = herm_eig(&HermMat::diag(&[1.0, 2.0])).unwrap();
        assert!((e.values[0] - 2.0).abs() < 1e-15 && (e.values[1] - 1.0).abs() < 1e-15);
        assert!((e.vectors[0].entries()[1].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eig_rank_one() {
        let s = 1.0 / 2f64.sqrt();
        let h = CVec::new(vec![c(s, 0.0), c(0.0, s)]).unwrap();
        let e = herm_eig(&h.outer()).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!(e.values[1].abs() < 1e-14);
        assert!((e.principal().dot(&h).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(HermMat::new(m), Err(LinalgError::NonHermitian(_))));
    }

    #[test]
    fn projection_examples() {
        let u = proj_orth_unit(&CVec::from_real(&[1.0, 0.0]), &CVec::from_real(&[0.0, 1.0])).unwrap();
        assert!((u.entries()[0] - c(1.0, 0.0)).norm() < 1e-15);
        let s = 1.0 / 2f64.sqrt();
        let u = proj_orth_unit(&CVec::from_real(&[s, s]), &CVec::from_real(&[1.0, 0.0])).unwrap();
        assert!(u.entries()[0].norm() < 1e-15);
        assert!((u.entries()[1] - c(1.0, 0.0)).norm() < 1e-15);
        let err = proj_orth_unit(&CVec::from_real(&[2.0, 0.0]), &CVec::from_real(&[1.0, 0.0]));
        assert_eq!(err, Err(LinalgError::DegenerateParallel));
    }

    #[test]
    fn quad_form_examples() {
        assert_eq!(quad_form(&HermMat::diag(&[2.0, 0.0]), &CVec::from_real(&[1.0, 0.0])).unwrap(), 2.0);
        let h = CVec::new(vec![c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert!((quad_form(&HermMat::identity(2), &h).unwrap() - 2.0).abs() < 1e-15);
        let v = CVec::new(vec![c(1.0, 1.0), c(0.0, 0.0)]).unwrap();
        let hp = CVec::from_real(&[0.0, 3.0]);
        assert_eq!(quad_form(&v.outer(), &hp).unwrap(), 0.0);
        assert!(quad_form(&HermMat::identity(3), &h).is_err());
    }

    #[test]
    fn phase_convention() {
        let v = CVec::new(vec![c(0.0, 0.0), c(0.0, -2.0), c(1.0, 1.0)]).unwrap();
        let p = v.phase_normalized();
        assert!(p.entries()[1].im.abs() < 1e-15 && p.entries()[1].re > 0.0);
        assert!((p.outer().sub(&v.outer())).frobenius() < 1e-14);
    }

    #[test]
    fn serde_roundtrip() {
        let v = CVec::new(vec![c(1.5, -0.25), c(0.0, 2.0)]).unwrap();
        let js = serde_json::to_string(&v).unwrap();
        assert_eq!(js, "[[1.5,-0.25],[0.0,2.0]]");
        assert_eq!(serde_json::from_str::<CVec>(&js).unwrap(), v);
        let m = v.outer();
        let back: HermMat = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert!(back.sub(&m).frobenius() < 1e-15);
    }

    fn herm_strategy(max_n: usize) -> impl Strategy<Value = HermMat> {
        (1..=max_n).prop_flat_map(|n| {
            proptest::collection::vec(-3.0f64..3.0, 2 * n * n).prop_map(move |xs| {
                let a = DMatrix::from_fn(n, n, |r, c| C64::new(xs[2 * (r * n + c)], xs[2 * (r * n + c) + 1]));
                HermMat::new((&a + a.adjoint()) * C64::new(0.5, 0.0)).unwrap()
            })
        })
    }

    fn cvec_strategy(n: usize) -> impl Strategy<Value = CVec> {
        proptest::collection::vec(-2.0f64..2.0, 2 * n)
            .prop_map(move |xs| CVec::new((0..n).map(|k| C64::new(xs[2 * k], xs[2 * k + 1])).collect()).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn eig_reconstructs(m in herm_strategy(8)) {
            let e = herm_eig(&m).unwrap();
            let err = (reconstruct(&e) - m.as_matrix()).norm() / m.frobenius().max(1e-300);
            prop_assert!(err <= 1e-10, "reconstruction error {err}");
            prop_assert!(orthonormality_error(&e) <= 1e-10);
            prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    proptest! {
        #[test]
        fn projection_orthogonal((a, b) in (2usize..=6).prop_flat_map(|n| (cvec_strategy(n), cvec_strategy(n)))) {
            prop_assume!(angle_sine(&a, &b) > 1e-6);
            let u = proj_orth_unit(&a, &b).unwrap();
            prop_assert!((u.norm() - 1.0).abs() <= 1e-12);
            prop_assert!(u.dot(&b).norm() <= 1e-10 * b.norm());
            // u lies in span{a, b}: removing the span components leaves nothing.
            let bu = b.unit().unwrap();
            let a_perp = proj_orth_unit(&a, &b).unwrap();
            let resid = u.sub(&bu.scale(bu.dot(&u))).sub(&a_perp.scale(a_perp.dot(&u)));
            prop_assert!(resid.norm() <= 1e-10);
        }

        #[test]
        fn quad_form_matches_trace((s, h) in (1usize..=6).prop_flat_map(|n| (herm_strategy_fixed(n), cvec_strategy(n)))) {
            let q = quad_form(&s, &h).unwrap();
            let t = s.inner(&h.outer());
            prop_assert!((q - t).abs() <= 1e-12 * s.frobenius() * h.norm_sqr());
        }

        #[test]
        fn quad_form_nonneg_for_psd((s, h) in (1usize..=6).prop_flat_map(|n| (herm_strategy_fixed(n), cvec_strategy(n)))) {
            let p = s.project_psd();
            prop_assert!(quad_form(&p, &h).unwrap() >= -1e-10);
        }
    }

    fn herm_strategy_fixed(n: usize) -> impl Strategy<Value = HermMat> {
        proptest::collection::vec(-3.0f64..3.0, 2 * n * n).prop_map(move |xs| {
            let a = DMatrix::from_fn(n, n, |r, c| C64::new(xs[2 * (r * n + c)], xs[2 * (r * n + c) + 1]));
            HermMat::new((&a + a.adjoint()) * C64::new(0.5, 0.0)).unwrap()
        })
    }
}
