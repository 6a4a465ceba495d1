//! Triangular pseudo-Euclidean representations of conditionally positive
//! functionals on the unitalized monoid of an Itô algebra.
//!
//! A monoid element `b` is represented by the block upper-triangular matrix
//! `T(b) = [[1, k⋆(b), l(b)], [0, j(b), k(b)], [0, 0, 1]]` on the Minkowski
//! space `ℂ ⊕ K ⊕ ℂ` with the anti-diagonal metric; `T` is multiplicative
//! for the monoid composition and pseudo-Hermitian: `T(b⋆) = T(b)†`.

use crate::ito_algebra::{l_value, monoid_mul, mul, star, AlgebraElement};
use crate::{C64, CMat, CVec};
use std::collections::BTreeMap;
use std::sync::Mutex;

#[derive(Debug, thiserror::Error)]
pub enum GnsError {
    #[error("functional is not conditionally positive: min Gram eigenvalue {0}")]
    NotConditionallyPositive(f64),
    #[error("cyclic vector normalization violated: {0}")]
    BadNormalization(String),
    #[error("dimension mismatch")]
    DimMismatch,
}

/// Block upper-triangular operator on `ℂ ⊕ K ⊕ ℂ` with unit corners.
#[derive(Debug, Clone)]
pub struct TriangularOp {
    /// Corner scalar, index `(−,+)`.
    pub l: C64,
    /// Row block `k⋆`, index `(−,∘)`, shape `1 × dim_K`.
    pub k_row: CMat,
    /// Column block `k`, index `(∘,+)`, shape `dim_K × 1`.
    pub k_col: CMat,
    /// Middle block `j`, index `(∘,∘)`, shape `dim_K × dim_K`.
    pub j_block: CMat,
    pub dim_k: usize,
}

impl TriangularOp {
    pub fn new(l: C64, k_row: CMat, k_col: CMat, j_block: CMat) -> Self {
        let dim_k = j_block.nrows();
        assert_eq!(j_block.ncols(), dim_k);
        assert_eq!(k_row.shape(), (1, dim_k));
        assert_eq!(k_col.shape(), (dim_k, 1));
        TriangularOp { l, k_row, k_col, j_block, dim_k }
    }

    pub fn identity(dim_k: usize) -> Self {
        TriangularOp::new(
            C64::new(0.0, 0.0),
            CMat::zeros(1, dim_k),
            CMat::zeros(dim_k, 1),
            CMat::identity(dim_k, dim_k),
        )
    }

    /// Dense `(dim_K + 2)`-square matrix with the `(−, ∘, +)` block layout.
    pub fn to_matrix(&self) -> CMat {
        let n = self.dim_k + 2;
        let mut m = CMat::zeros(n, n);
        m[(0, 0)] = C64::new(1.0, 0.0);
        m[(n - 1, n - 1)] = C64::new(1.0, 0.0);
        m[(0, n - 1)] = self.l;
        for i in 0..self.dim_k {
            m[(0, 1 + i)] = self.k_row[(0, i)];
            m[(1 + i, n - 1)] = self.k_col[(i, 0)];
            for k in 0..self.dim_k {
                m[(1 + i, 1 + k)] = self.j_block[(i, k)];
            }
        }
        m
    }

    pub fn max_abs_diff(&self, other: &TriangularOp) -> f64 {
        crate::max_abs_diff(&self.to_matrix(), &other.to_matrix())
    }
}

/// Anti-diagonal Minkowski metric on `ℂ ⊕ ℂ^{dim_mid} ⊕ ℂ`.
pub fn minkowski_metric(dim_mid: usize) -> CMat {
    let n = dim_mid + 2;
    let mut g = CMat::zeros(n, n);
    g[(0, n - 1)] = C64::new(1.0, 0.0);
    g[(n - 1, 0)] = C64::new(1.0, 0.0);
    for i in 0..dim_mid {
        g[(1 + i, 1 + i)] = C64::new(1.0, 0.0);
    }
    g
}

/// Pseudo-Hermitian conjugation `B† = g B* g` of a dense matrix on
/// `ℂ ⊕ ℂ^{dim_mid} ⊕ ℂ`.
pub fn minkowski_adjoint(m: &CMat, dim_mid: usize) -> CMat {
    let g = minkowski_metric(dim_mid);
    &g * m.adjoint() * &g
}

/// Pseudo-adjoint of a triangular operator: swaps `k_row ↔ k_col†`,
/// conjugates `l`, Hermitian-transposes `j`.
pub fn pseudo_adjoint(t: &TriangularOp) -> TriangularOp {
    TriangularOp::new(
        t.l.conj(),
        t.k_col.adjoint(),
        t.k_row.adjoint(),
        t.j_block.adjoint(),
    )
}

/// Block product of two triangular operators; corners remain 1.
pub fn tri_mul(a: &TriangularOp, b: &TriangularOp) -> TriangularOp {
    assert_eq!(a.dim_k, b.dim_k, "dim_K mismatch");
    TriangularOp::new(
        b.l + (&a.k_row * &b.k_col)[(0, 0)] + a.l,
        &a.k_row * &b.j_block + &b.k_row,
        &a.j_block * &b.k_col + &a.k_col,
        &a.j_block * &b.j_block,
    )
}

fn element_key(b: &AlgebraElement) -> String {
    // Stable table key: coefficients rounded to 12 decimal digits.
    let mut s = String::new();
    for z in &b.coeffs {
        let re = (z.re * 1e12).round() / 1e12;
        let im = (z.im * 1e12).round() / 1e12;
        let re = if re == 0.0 { 0.0 } else { re };
        let im = if im == 0.0 { 0.0 } else { im };
        s.push_str(&format!("{re:.12e},{im:.12e};"));
    }
    s
}

/// Canonical triangular representation built from a Gram eigendecomposition.
///
/// The quotient space `K` carries an orthonormal basis, so the pseudo-adjoint
/// is the literal conjugate transpose in the `∘∘` block. The table of
/// triangular operators is extended lazily for any element reachable through
/// `monoid_mul` (single-writer mutex guard).
pub struct TriangularRep {
    pub dim_k: usize,
    /// The canonical zero-pseudo-norm cyclic column `(0, 0_K, 1)`.
    pub e_vector: CVec,
    table: Mutex<BTreeMap<String, TriangularOp>>,
    elems: Vec<AlgebraElement>,
    /// Kept Gram eigenvectors, `n_sample × dim_K`.
    u_kept: CMat,
    /// Kept Gram eigenvalues (positive).
    lambda_kept: Vec<f64>,
}

/// Build the canonical triangular representation from a finite sample.
///
/// The Gram kernel is `G[a][c] = l(a★c) − l(a) − l(c⋆) = l(a·c⋆)` over the
/// sample closed under star and augmented with the algebra basis (so that
/// the lazy coefficient-linear extension of `k` is exact). Null directions
/// below `tol·σ_max` are quotiented away.
pub fn gns_construct(
    sample: &[AlgebraElement],
    tol: f64,
) -> Result<TriangularRep, GnsError> {
    assert!(!sample.is_empty());
    let parent = sample[0].parent.clone();
    let mut elems: Vec<AlgebraElement> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut push = |e: AlgebraElement, elems: &mut Vec<AlgebraElement>| {
        let key = element_key(&e);
        if seen.insert(key) {
            elems.push(e);
        }
    };
    push(
        AlgebraElement { coeffs: vec![C64::new(0.0, 0.0); parent.dim], parent: parent.clone() },
        &mut elems,
    );
    for b in sample {
        push(b.clone(), &mut elems);
        push(star(b), &mut elems);
    }
    for j in 0..parent.dim {
        let mut coeffs = vec![C64::new(0.0, 0.0); parent.dim];
        coeffs[j] = C64::new(1.0, 0.0);
        push(AlgebraElement { coeffs, parent: parent.clone() }, &mut elems);
    }
    let n = elems.len();
    let gram = CMat::from_fn(n, n, |a, c| l_value(&mul(&elems[a], &star(&elems[c]))));
    // Hermitian by the ⋆-property of l; symmetrize float noise.
    let herm = (&gram + gram.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(herm);
    let sigma_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max).max(1.0);
    let cutoff = tol * sigma_max;
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -cutoff {
        return Err(GnsError::NotConditionallyPositive(min_eig));
    }
    let kept: Vec<usize> = (0..n).filter(|i| eig.eigenvalues[*i] > cutoff).collect();
    let dim_k = kept.len();
    let u_kept = CMat::from_fn(n, dim_k, |r, c| eig.eigenvectors[(r, kept[c])]);
    let lambda_kept: Vec<f64> = kept.iter().map(|i| eig.eigenvalues[*i]).collect();
    let mut e_vector = CVec::from_element(dim_k + 2, C64::new(0.0, 0.0));
    e_vector[dim_k + 1] = C64::new(1.0, 0.0);
    let rep = TriangularRep {
        dim_k,
        e_vector,
        table: Mutex::new(BTreeMap::new()),
        elems,
        u_kept,
        lambda_kept,
    };
    Ok(rep)
}

impl TriangularRep {
    /// The vector `φ(c)` with `⟨φ(a)|φ(c)⟩ = l(a·c⋆)`, computed in the
    /// orthonormalized quotient basis and exact for any `c` whose class lies
    /// in the sampled span (guaranteed by basis augmentation).
    fn phi(&self, c: &AlgebraElement) -> CVec {
        let n = self.elems.len();
        let col = CVec::from_fn(n, |a, _| l_value(&mul(&self.elems[a], &star(c))));
        let proj = self.u_kept.adjoint() * col;
        CVec::from_fn(self.dim_k, |alpha, _| proj[alpha] / C64::new(self.lambda_kept[alpha].sqrt(), 0.0))
    }

    /// Class vector `k(b)` of `δ_b − δ_u`.
    pub fn k_of(&self, b: &AlgebraElement) -> CVec {
        self.phi(&star(b))
    }

    /// Middle-block action `j(b)`: linear extension of
    /// `k(c) ↦ k(b∘c) − k(b)` over the sampled classes.
    pub fn j_of(&self, b: &AlgebraElement) -> CMat {
        let cols = self.elems.len();
        let mut m1 = CMat::zeros(self.dim_k, cols);
        let mut m2 = CMat::zeros(self.dim_k, cols);
        let kb = self.k_of(b);
        for (i, c) in self.elems.iter().enumerate() {
            let kc = self.k_of(c);
            let kbc = self.k_of(&monoid_mul(b, c));
            for r in 0..self.dim_k {
                m1[(r, i)] = kc[r];
                m2[(r, i)] = kbc[r] - kb[r];
            }
        }
        let pinv = m1.svd(true, true).pseudo_inverse(1e-10).expect("svd converged");
        m2 * pinv
    }

    /// The triangular operator of `b`, computed on demand and cached.
    pub fn op(&self, b: &AlgebraElement) -> TriangularOp {
        let key = element_key(b);
        if let Some(t) = self.table.lock().unwrap().get(&key) {
            return t.clone();
        }
        let k_col = CMat::from_fn(self.dim_k, 1, |r, _| self.k_of(b)[r]);
        let k_row = CMat::from_fn(self.dim_k, 1, |r, _| self.k_of(&star(b))[r]).adjoint();
        let t = TriangularOp::new(l_value(b), k_row, k_col, self.j_of(b));
        self.table.lock().unwrap().insert(key, t.clone());
        t
    }
}

/// Residuals of the cocycle identities for a pair `(a, b)`.
#[derive(Debug, Clone, Copy)]
pub struct CocycleReport {
    /// `‖j(a)k(b) − (k(a∘b) − k(a))‖∞`
    pub column_cocycle: f64,
    /// `‖k⋆(a)j(b) − (k⋆(a∘b) − k⋆(b))‖∞`
    pub row_cocycle: f64,
    /// `|k⋆(a)k(b) − (λ(a∘b) − λ(a) − λ(b))|`
    pub pairing: f64,
    pub pass: bool,
}

/// Check the cocycle identities on a pair of elements.
pub fn verify_cocycles(
    rep: &TriangularRep,
    a: &AlgebraElement,
    b: &AlgebraElement,
    tol: f64,
) -> CocycleReport {
    let ta = rep.op(a);
    let tb = rep.op(b);
    let ab = monoid_mul(a, b);
    let tab = rep.op(&ab);
    let col = &ta.j_block * &tb.k_col - (&tab.k_col - &ta.k_col);
    let row = &ta.k_row * &tb.j_block - (&tab.k_row - &tb.k_row);
    let pairing = ((&ta.k_row * &tb.k_col)[(0, 0)]
        - (l_value(&ab) - l_value(a) - l_value(b)))
    .norm();
    let column_cocycle = crate::max_abs(&col);
    let row_cocycle = crate::max_abs(&row);
    CocycleReport {
        column_cocycle,
        row_cocycle,
        pairing,
        pass: column_cocycle <= tol && row_cocycle <= tol && pairing <= tol,
    }
}

/// A non-canonical triangular representation on `ℂ ⊕ E^∘ ⊕ ℂ` together with
/// its zero-pseudo-norm cyclic vector `e = (1, e_∘, e_+)`.
pub struct GeneralRep {
    pub dim_e: usize,
    /// Dense `(dim_e + 2)`-square representing matrices.
    pub ops: Vec<CMat>,
    /// Cyclic column `(e_+^*, e_∘, 1)`, length `dim_e + 2`, last component 1.
    pub e_general: CVec,
}

/// Result of the canonical reduction by the triangular pseudo-isometry `S`.
pub struct CanonicalReduction {
    /// `S : ℂ ⊕ K ⊕ ℂ → ℂ ⊕ E^∘ ⊕ ℂ`.
    pub s: CMat,
    pub s_dagger: CMat,
    /// `‖S†S − I‖∞`
    pub isometry_residual: f64,
    /// `S† j(b) S` for each supplied op.
    pub canonical_ops: Vec<CMat>,
    /// `‖S†e_general − (0,…,0,1)‖∞`
    pub e_residual: f64,
}

/// Reduce a general representation to canonical form via the triangular
/// pseudo-isometry built from an isometry `U : K → E^∘` and the cyclic
/// vector, `S = [[1, e_∘†U, e_+*], [0, −U, e_∘], [0, 0, 1]]`.
pub fn reduce_to_canonical(rep: &GeneralRep, u_iso: &CMat) -> Result<CanonicalReduction, GnsError> {
    let dim_e = rep.dim_e;
    let dim_k = u_iso.ncols();
    if u_iso.nrows() != dim_e || rep.e_general.len() != dim_e + 2 {
        return Err(GnsError::DimMismatch);
    }
    let e_plus_star = rep.e_general[0];
    let e_circ = CVec::from_fn(dim_e, |i, _| rep.e_general[1 + i]);
    let e_last = rep.e_general[dim_e + 1];
    if (e_last - C64::new(1.0, 0.0)).norm() > 1e-12 {
        return Err(GnsError::BadNormalization("last component must be 1".into()));
    }
    let pseudo_norm = 2.0 * e_plus_star.re + e_circ.norm_squared();
    if pseudo_norm.abs() > 1e-10 {
        return Err(GnsError::BadNormalization(format!(
            "‖e_∘‖² = −2·Re(e_+) violated by {pseudo_norm:.3e}"
        )));
    }
    let n = dim_e + 2;
    let mut s = CMat::zeros(n, dim_k + 2);
    s[(0, 0)] = C64::new(1.0, 0.0);
    s[(n - 1, dim_k + 1)] = C64::new(1.0, 0.0);
    s[(0, dim_k + 1)] = e_plus_star;
    let row = e_circ.adjoint() * u_iso;
    for c in 0..dim_k {
        s[(0, 1 + c)] = row[(0, c)];
        for r in 0..dim_e {
            s[(1 + r, 1 + c)] = -u_iso[(r, c)];
        }
    }
    for r in 0..dim_e {
        s[(1 + r, dim_k + 1)] = e_circ[r];
    }
    // Pseudo-adjoint across the two metrics: S† = g_K S* g_E.
    let s_dagger = minkowski_metric(dim_k) * s.adjoint() * minkowski_metric(dim_e);
    let isometry_residual =
        crate::max_abs_diff(&(&s_dagger * &s), &CMat::identity(dim_k + 2, dim_k + 2));
    let canonical_ops = rep.ops.iter().map(|j| &s_dagger * j * &s).collect();
    let mut e_canon = CVec::from_element(dim_k + 2, C64::new(0.0, 0.0));
    e_canon[dim_k + 1] = C64::new(1.0, 0.0);
    let e_residual = (&s_dagger * &rep.e_general - e_canon)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    Ok(CanonicalReduction { s, s_dagger, isometry_residual, canonical_ops, e_residual })
}

/// Four-component representation data `(l, k⋆, k, i)` of a monoid element.
#[derive(Debug, Clone)]
pub struct Quadruple {
    pub l: C64,
    /// Row `k⋆`, shape `1 × dim`.
    pub k_row: CMat,
    /// Column `k`, shape `dim × 1`.
    pub k_col: CMat,
    /// Middle block `i`, shape `dim × dim`.
    pub i_block: CMat,
}

impl Quadruple {
    pub fn dim(&self) -> usize {
        self.i_block.nrows()
    }

    pub fn zero(dim: usize) -> Self {
        Quadruple {
            l: C64::new(0.0, 0.0),
            k_row: CMat::zeros(1, dim),
            k_col: CMat::zeros(dim, 1),
            i_block: CMat::zeros(dim, dim),
        }
    }

    /// Entrywise Hermitian transpose: the star of the represented element.
    pub fn star(&self) -> Quadruple {
        Quadruple {
            l: self.l.conj(),
            k_row: self.k_col.adjoint(),
            k_col: self.k_row.adjoint(),
            i_block: self.i_block.adjoint(),
        }
    }

    pub fn add(&self, other: &Quadruple) -> Quadruple {
        Quadruple {
            l: self.l + other.l,
            k_row: &self.k_row + &other.k_row,
            k_col: &self.k_col + &other.k_col,
            i_block: &self.i_block + &other.i_block,
        }
    }

    /// Embed as `𝐢(b)` inside a triangular operator `𝐣(b) = 𝐈 + 𝐢(b)`.
    pub fn to_triangular(&self) -> TriangularOp {
        TriangularOp::new(
            self.l,
            self.k_row.clone(),
            self.k_col.clone(),
            CMat::identity(self.dim(), self.dim()) + &self.i_block,
        )
    }

    pub fn max_abs_diff(&self, other: &Quadruple) -> f64 {
        let a = [
            (self.l - other.l).norm(),
            crate::max_abs(&(&self.k_row - &other.k_row)),
            crate::max_abs(&(&self.k_col - &other.k_col)),
            crate::max_abs(&(&self.i_block - &other.i_block)),
        ];
        a.iter().cloned().fold(0.0, f64::max)
    }
}

/// Product of quadruples per the Hudson-Parthasarathy table:
/// `𝒊(a·c) = ((k⋆_a k_c, k⋆_a i_c), (i_a k_c, i_a i_c))`.
pub fn quadruple_mul(p: &Quadruple, q: &Quadruple) -> Quadruple {
    assert_eq!(p.dim(), q.dim(), "quadruple dim mismatch");
    Quadruple {
        l: (&p.k_row * &q.k_col)[(0, 0)],
        k_row: &p.k_row * &q.i_block,
        k_col: &p.i_block * &q.k_col,
        i_block: &p.i_block * &q.i_block,
    }
}

/// A Gaussian-monoid element `b = (β, η)` over `H = ℂ^dim`.
#[derive(Debug, Clone)]
pub struct GaussianElement {
    pub beta: C64,
    pub eta: CVec,
}

/// Per-point representation data of a Gaussian chaotic state with mean
/// vector `θ` (required `#`-real): `i = 0`, `k(b) = η`, `k⋆(b) = (η^#)†`,
/// `l(b) = β + (η, θ)` with the bilinear pairing.
pub struct GaussianStateRep {
    pub dim_h: usize,
    pub theta: CVec,
}

impl GaussianStateRep {
    /// `θ` must satisfy `θ^# = θ` (entrywise-real for the plain involution).
    pub fn new(theta: CVec) -> Result<Self, GnsError> {
        if theta.iter().any(|z| z.im.abs() > 1e-12) {
            return Err(GnsError::BadNormalization("θ must be #-real".into()));
        }
        Ok(GaussianStateRep { dim_h: theta.len(), theta })
    }

    pub fn quadruple(&self, b: &GaussianElement) -> Quadruple {
        assert_eq!(b.eta.len(), self.dim_h);
        let pairing: C64 = b.eta.iter().zip(self.theta.iter()).map(|(a, t)| a * t).sum();
        let eta_sharp = b.eta.map(|z| z.conj());
        Quadruple {
            l: b.beta + pairing,
            k_row: CMat::from_fn(1, self.dim_h, |_, c| eta_sharp[c].conj()),
            k_col: CMat::from_fn(self.dim_h, 1, |r, _| b.eta[r]),
            i_block: CMat::zeros(self.dim_h, self.dim_h),
        }
    }
}

impl GaussianElement {
    pub fn star(&self) -> GaussianElement {
        GaussianElement { beta: self.beta.conj(), eta: self.eta.map(|z| z.conj()) }
    }

    /// Algebra product: `(β,η)·(β',η') = (⟨η^#|η'⟩-pairing, 0)` so that
    /// `l(a·c) = k⋆(a)·k(c)` and the `H`-part of products vanishes (`i = 0`).
    pub fn mul(&self, other: &GaussianElement) -> GaussianElement {
        let l: C64 = self.eta.iter().zip(other.eta.iter()).map(|(a, b)| a * b).sum();
        GaussianElement { beta: l, eta: CVec::from_element(self.eta.len(), C64::new(0.0, 0.0)) }
    }

    /// Monoid composition `a ∘ c = a + c + a·c`.
    pub fn monoid_mul(&self, other: &GaussianElement) -> GaussianElement {
        let p = self.mul(other);
        GaussianElement {
            beta: self.beta + other.beta + p.beta,
            eta: &self.eta + &other.eta,
        }
    }
}

/// Per-point representation data of a Poisson chaotic state over operators
/// on `K`: `i(b) = B`, `k(b) = B e`, `k⋆(b) = e† B`, `l(b) = e† B e`.
pub struct PoissonStateRep {
    pub e: CVec,
}

impl PoissonStateRep {
    pub fn quadruple(&self, b_op: &CMat) -> Quadruple {
        let dim = self.e.len();
        assert_eq!(b_op.shape(), (dim, dim));
        let be = b_op * &self.e;
        let eb = self.e.adjoint() * b_op;
        Quadruple {
            l: (self.e.adjoint() * &be)[(0, 0)],
            k_row: CMat::from_fn(1, dim, |_, c| eb[c]),
            k_col: CMat::from_fn(dim, 1, |r, _| be[r]),
            i_block: b_op.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ito_algebra::{hp_vacuum, poisson, wiener};
    use rand::Rng;
    use rand::SeedableRng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn wiener_rep_matches_hand_computation() {
        let alg = wiener();
        let e = alg.basis(1);
        let rep = gns_construct(&[alg.zero(), e.clone()], 1e-9).unwrap();
        assert_eq!(rep.dim_k, 1);
        let t = rep.op(&e);
        assert!((t.l).norm() == 0.0);
        assert!((t.k_col[(0, 0)].norm() - 1.0).abs() <= 1e-12);
        assert!((t.k_row[(0, 0)].norm() - 1.0).abs() <= 1e-12);
        assert!((t.j_block[(0, 0)] - c(1.0, 0.0)).norm() <= 1e-12);
        // Identity element maps to the identity operator.
        let tu = rep.op(&alg.zero());
        assert!(tu.max_abs_diff(&TriangularOp::identity(1)) <= 1e-12);
        // Corner of the product: tri_mul(T(e), T(e)).l = 1.
        let te2 = tri_mul(&t, &t);
        assert!((te2.l - c(1.0, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn pseudo_adjoint_blocks_and_involution() {
        let t = TriangularOp::new(
            c(0.0, 1.0),
            CMat::from_row_slice(1, 1, &[c(1.0, 0.0)]),
            CMat::from_row_slice(1, 1, &[c(0.0, 0.0)]),
            CMat::from_row_slice(1, 1, &[c(1.0, 0.0)]),
        );
        let td = pseudo_adjoint(&t);
        assert_eq!(td.l, c(0.0, -1.0));
        assert_eq!(td.k_row[(0, 0)], c(0.0, 0.0));
        assert_eq!(td.k_col[(0, 0)], c(1.0, 0.0));
        assert_eq!(td.j_block[(0, 0)], c(1.0, 0.0));
        // Involution, and agreement with the dense metric formula.
        let mut rng = rng(11);
        let k = 3;
        let t = TriangularOp::new(
            c(rng.gen(), rng.gen()),
            CMat::from_fn(1, k, |_, _| c(rng.gen(), rng.gen())),
            CMat::from_fn(k, 1, |_, _| c(rng.gen(), rng.gen())),
            CMat::from_fn(k, k, |_, _| c(rng.gen(), rng.gen())),
        );
        assert!(pseudo_adjoint(&pseudo_adjoint(&t)).max_abs_diff(&t) == 0.0);
        let dense = minkowski_adjoint(&t.to_matrix(), k);
        assert!(crate::max_abs_diff(&pseudo_adjoint(&t).to_matrix(), &dense) <= 1e-15);
    }

    #[test]
    fn homomorphism_star_and_corner_identities() {
        let mut rng = rng(12);
        for alg in [wiener(), poisson(1.0).unwrap(), hp_vacuum()] {
            let sample: Vec<_> = (0..alg.dim).map(|j| alg.basis(j)).collect();
            let rep = gns_construct(&sample, 1e-9).unwrap();
            let mut randoms: Vec<_> = sample.clone();
            for _ in 0..3 {
                let coeffs = (0..alg.dim)
                    .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect();
                randoms.push(alg.element(coeffs));
            }
            for a in &randoms {
                // Corner identity: T(b).l = l(b) = e† j(b) e.
                let t = rep.op(a);
                assert!((t.l - crate::ito_algebra::l_value(a)).norm() <= 1e-12);
                let dense = t.to_matrix();
                let corner = (rep.e_vector.adjoint()
                    * minkowski_metric(rep.dim_k)
                    * &dense
                    * &rep.e_vector)[(0, 0)];
                assert!((corner - t.l).norm() <= 1e-12);
                // ⋆-property.
                let ts = rep.op(&crate::ito_algebra::star(a));
                assert!(pseudo_adjoint(&t).max_abs_diff(&ts) <= 1e-10);
                for b in &randoms {
                    let hom = tri_mul(&rep.op(a), &rep.op(b))
                        .max_abs_diff(&rep.op(&crate::ito_algebra::monoid_mul(a, b)));
                    assert!(hom <= 1e-10, "homomorphism residual {hom}");
                    let rpt = verify_cocycles(&rep, a, b, 1e-10);
                    assert!(rpt.pass, "cocycle residuals {rpt:?}");
                }
            }
        }
    }

    #[test]
    fn cocycles_against_unit_and_wiener_pairing() {
        let alg = wiener();
        let e = alg.basis(1);
        let rep = gns_construct(&[alg.zero(), e.clone()], 1e-9).unwrap();
        let rpt = verify_cocycles(&rep, &e, &alg.zero(), 1e-12);
        assert!(rpt.pass);
        // k⋆(e)k(e) = 1 = l(e∘e) − 0 − 0.
        let t = rep.op(&e);
        let pairing = (&t.k_row * &t.k_col)[(0, 0)];
        assert!((pairing - c(1.0, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn gram_not_positive_rejected() {
        let mut bad = (*wiener()).clone();
        bad.c[0][1][1] = c(-1.0, 0.0);
        let bad = std::sync::Arc::new(bad);
        let res = gns_construct(&[bad.zero(), bad.basis(1)], 1e-9);
        assert!(matches!(res, Err(GnsError::NotConditionallyPositive(_))));
    }

    #[test]
    fn canonical_reduction() {
        let mut rng = rng(13);
        let dim_k = 2;
        // Random canonical rep ops (triangular with unit corners).
        let alg = hp_vacuum();
        let rep = gns_construct(&(0..4).map(|j| alg.basis(j)).collect::<Vec<_>>(), 1e-9).unwrap();
        let canonical: Vec<CMat> = (0..4).map(|j| rep.op(&alg.basis(j)).to_matrix()).collect();
        let dk = rep.dim_k;
        // Random unitary U (dim_e = dim_k here) via QR of a random matrix.
        let a = CMat::from_fn(dim_k.max(dk), dk, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let qr = a.qr();
        let u = qr.q();
        // Random zero-pseudo-norm cyclic vector with e_− = 1.
        let e_circ = CVec::from_fn(u.nrows(), |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let e_plus = c(-e_circ.norm_squared() / 2.0, rng.gen_range(-1.0..1.0));
        let mut e_general = CVec::from_element(u.nrows() + 2, c(0.0, 0.0));
        e_general[0] = e_plus.conj();
        for i in 0..u.nrows() {
            e_general[1 + i] = e_circ[i];
        }
        e_general[u.nrows() + 1] = c(1.0, 0.0);
        // Conjugate the canonical rep outward: j_gen = S T S†, then reduce back.
        let probe = GeneralRep { dim_e: u.nrows(), ops: vec![], e_general: e_general.clone() };
        let red0 = reduce_to_canonical(&probe, &u).unwrap();
        assert!(red0.isometry_residual <= 1e-12, "S†S residual {}", red0.isometry_residual);
        let ops: Vec<CMat> = canonical.iter().map(|t| &red0.s * t * &red0.s_dagger).collect();
        let gen = GeneralRep { dim_e: u.nrows(), ops, e_general };
        let red = reduce_to_canonical(&gen, &u).unwrap();
        assert!(red.e_residual <= 1e-12, "e residual {}", red.e_residual);
        for (got, want) in red.canonical_ops.iter().zip(&canonical) {
            // S†S = I makes S†(S T S†)S = T.
            assert!(crate::max_abs_diff(got, want) <= 1e-10);
        }
        // Normalization violations are rejected.
        let mut bad = gen.e_general.clone();
        bad[u.nrows() + 1] = c(2.0, 0.0);
        let bad_rep = GeneralRep { dim_e: u.nrows(), ops: vec![], e_general: bad };
        assert!(reduce_to_canonical(&bad_rep, &u).is_err());
    }

    #[test]
    fn quadruple_products_poisson() {
        let mut rng = rng(14);
        let dim = 2;
        let e = CVec::from_fn(dim, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let state = PoissonStateRep { e: e.clone() };
        let a_op = CMat::from_fn(dim, dim, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let c_op = CMat::from_fn(dim, dim, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let qa = state.quadruple(&a_op);
        let qc = state.quadruple(&c_op);
        // Product slot i(a·c) = AC, and the whole quadruple matches the
        // state data of the operator product.
        let prod = quadruple_mul(&qa, &qc);
        let direct = state.quadruple(&(&a_op * &c_op));
        assert!(prod.max_abs_diff(&direct) <= 1e-12);
        // Triangular embedding multiplies like the monoid: 𝐣(a)𝐣(c) = 𝐣(a∘c).
        let lhs = tri_mul(&qa.to_triangular(), &qc.to_triangular());
        let rhs = qa.add(&qc).add(&prod).to_triangular();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        // B = I: l = ‖e‖², k = e, i = I.
        let qi = state.quadruple(&CMat::identity(dim, dim));
        assert!((qi.l - c(e.norm_squared(), 0.0)).norm() <= 1e-12);
        assert!(crate::max_abs(&(&qi.k_col - CMat::from_fn(dim, 1, |r, _| e[r]))) <= 1e-12);
        // Zero quadruple annihilates.
        let z = Quadruple::zero(dim);
        assert!(quadruple_mul(&qa, &z).max_abs_diff(&z) <= 1e-12);
    }

    #[test]
    fn gaussian_state_rep_properties() {
        let mut rng = rng(15);
        let theta = CVec::from_fn(2, |_, _| c(rng.gen_range(-1.0..1.0), 0.0));
        let state = GaussianStateRep::new(theta.clone()).unwrap();
        // η = 0: l = β, k = 0, j = I + i = I.
        let b0 = GaussianElement { beta: c(0.7, 0.3), eta: CVec::from_element(2, c(0.0, 0.0)) };
        let q0 = state.quadruple(&b0);
        assert_eq!(q0.l, b0.beta);
        assert!(crate::max_abs(&q0.k_col) == 0.0);
        assert!(crate::max_abs(&q0.i_block) == 0.0);
        // Covariance: λ(b⋆∘b) − λ(b⋆) − λ(b) = k⋆(b⋆)k(b) = ⟨η|η⟩ for b = (0, η).
        let eta = CVec::from_fn(2, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let b = GaussianElement { beta: c(0.0, 0.0), eta: eta.clone() };
        let qs = state.quadruple(&b.star());
        let qb = state.quadruple(&b);
        let cov = (&qs.k_row * &qb.k_col)[(0, 0)];
        assert!((cov - c(eta.norm_squared(), 0.0)).norm() <= 1e-12);
        // Homomorphism over the Gaussian monoid.
        let b2 = GaussianElement {
            beta: c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            eta: CVec::from_fn(2, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))),
        };
        let lhs = tri_mul(
            &state.quadruple(&b).to_triangular(),
            &state.quadruple(&b2).to_triangular(),
        );
        let rhs = state.quadruple(&b.monoid_mul(&b2)).to_triangular();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        // Star compatibility: quadruple(b⋆) = quadruple(b)⋆.
        assert!(state.quadruple(&b2.star()).max_abs_diff(&state.quadruple(&b2).star()) <= 1e-12);
        // Non-#-real θ rejected.
        assert!(GaussianStateRep::new(CVec::from_element(1, c(0.0, 1.0))).is_err());
    }
}
