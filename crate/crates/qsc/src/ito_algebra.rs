//! Finite-dimensional noncommutative Itô ⋆-algebras.
//!
//! An Itô algebra is given by a structure-constant tensor `c[j][i][k]` over a
//! self-adjoint basis `e_0, …, e_{dim−1}` with `e_0 = d_t` the killing
//! element: products satisfy `e_i · e_k = Σ_j c[j][i][k] e_j`, `d_t` kills
//! everything, and the functional `l(a)` extracts the `d_t` coefficient.
//! The unitalized monoid composition is `a ∘ b = a + b + a·b`.

use crate::C64;
use nalgebra::DMatrix;
use std::fmt;
use std::sync::Arc;

/// Errors raised by algebra constructors and operations.
#[derive(Debug, thiserror::Error)]
pub enum AlgebraError {
    #[error("poisson intensity must be nonnegative, got {0}")]
    NegativeIntensity(f64),
    #[error("elements belong to different algebras")]
    ParentMismatch,
    #[error("coefficient vector length {got} does not match algebra dimension {want}")]
    BadLength { got: usize, want: usize },
}

/// A finite-dimensional Itô ⋆-algebra with self-adjoint basis.
///
/// Index 0 is reserved for the killing element `d_t`; `l(a)` is the
/// coefficient of `d_t`. All data is immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoAlgebra {
    /// Basis size including `d_t`.
    pub dim: usize,
    /// Structure constants: `c[j][i][k]` is the `e_j` coefficient of `e_i·e_k`.
    pub c: Vec<Vec<Vec<C64>>>,
    /// Human-readable basis labels, `basis_names[0] = "d_t"`.
    pub basis_names: Vec<String>,
    /// Intensity parameter for algebras that carry one (Poisson λ).
    pub intensity: Option<f64>,
}

/// An element `a = Σ α_j e_j` of a specific [`ItoAlgebra`].
#[derive(Debug, Clone)]
pub struct AlgebraElement {
    pub coeffs: Vec<C64>,
    pub parent: Arc<ItoAlgebra>,
}

/// Outcome of a single axiom check inside a [`ValidationReport`].
#[derive(Debug, Clone, Copy)]
pub struct AxiomCheck {
    pub pass: bool,
    pub max_violation: f64,
}

/// Report produced by [`validate`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub hermitianity: AxiomCheck,
    pub associativity: AxiomCheck,
    pub degeneracy: AxiomCheck,
    /// Whether the two-sided ideal `𝔦` is trivial on the finite basis,
    /// decided by numerical rank of the Gram-of-products matrix.
    pub ideal_trivial: bool,
    pub ideal_rank: usize,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.hermitianity.pass && self.associativity.pass && self.degeneracy.pass
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "hermitianity: {} (max violation {:.3e})",
            if self.hermitianity.pass { "pass" } else { "FAIL" },
            self.hermitianity.max_violation
        )?;
        writeln!(
            f,
            "associativity: {} (max violation {:.3e})",
            if self.associativity.pass { "pass" } else { "FAIL" },
            self.associativity.max_violation
        )?;
        writeln!(
            f,
            "degeneracy: {} (max violation {:.3e})",
            if self.degeneracy.pass { "pass" } else { "FAIL" },
            self.degeneracy.max_violation
        )?;
        write!(
            f,
            "two-sided ideal trivial: {} (rank {})",
            self.ideal_trivial, self.ideal_rank
        )
    }
}

fn zeros(dim: usize) -> Vec<Vec<Vec<C64>>> {
    vec![vec![vec![C64::new(0.0, 0.0); dim]; dim]; dim]
}

/// The 4-dimensional Hudson-Parthasarathy vacuum algebra with basis
/// `(d_t, M1, M2, M3)`.
///
/// The multiplication table is `dN·dN = dN`, `dN·dA+ = dA+`,
/// `dA−·dN = dA−`, `dA−·dA+ = d_t` (all other products zero), expressed in
/// the self-adjoint quadrature basis with `dA− = (e1 − i·e2)/2` and
/// `dA+ = (e1 + i·e2)/2`.
pub fn hp_vacuum() -> Arc<ItoAlgebra> {
    let i = C64::new(0.0, 1.0);
    let one = C64::new(1.0, 0.0);
    let half = C64::new(0.5, 0.0);
    let mut c = zeros(4);
    // c_0 block on indices 1,2: [[1, -i], [+i, 1]].
    c[0][1][1] = one;
    c[0][1][2] = -i;
    c[0][2][1] = i;
    c[0][2][2] = one;
    // c_1 = (1/2)[[0,0,1],[0,0,+i],[1,-i,0]] on indices 1..3 (i = row).
    c[1][1][3] = half;
    c[1][2][3] = i * half;
    c[1][3][1] = half;
    c[1][3][2] = -i * half;
    // c_2 = (1/2)[[0,0,-i],[0,0,1],[+i,1,0]].
    c[2][1][3] = -i * half;
    c[2][2][3] = half;
    c[2][3][1] = i * half;
    c[2][3][2] = half;
    // c_3: only the number-number product survives.
    c[3][3][3] = one;
    Arc::new(ItoAlgebra {
        dim: 4,
        c,
        basis_names: ["d_t", "M1", "M2", "M3"].iter().map(|s| s.to_string()).collect(),
        intensity: None,
    })
}

/// The 2-dimensional Wiener algebra: basis `(d_t, e)` with `e·e = d_t`.
pub fn wiener() -> Arc<ItoAlgebra> {
    let mut c = zeros(2);
    c[0][1][1] = C64::new(1.0, 0.0);
    Arc::new(ItoAlgebra {
        dim: 2,
        c,
        basis_names: ["d_t", "e"].iter().map(|s| s.to_string()).collect(),
        intensity: None,
    })
}

/// The 2-dimensional Poisson algebra: basis `(d_t, e)` with
/// `e·e = λ·d_t + e`.
pub fn poisson(lambda: f64) -> Result<Arc<ItoAlgebra>, AlgebraError> {
    if lambda < 0.0 {
        return Err(AlgebraError::NegativeIntensity(lambda));
    }
    let mut c = zeros(2);
    c[0][1][1] = C64::new(lambda, 0.0);
    c[1][1][1] = C64::new(1.0, 0.0);
    Ok(Arc::new(ItoAlgebra {
        dim: 2,
        c,
        basis_names: ["d_t", "e"].iter().map(|s| s.to_string()).collect(),
        intensity: Some(lambda),
    }))
}

impl ItoAlgebra {
    /// Element from a coefficient vector.
    pub fn element(self: &Arc<Self>, coeffs: Vec<C64>) -> AlgebraElement {
        assert_eq!(coeffs.len(), self.dim, "coefficient length mismatch");
        AlgebraElement { coeffs, parent: Arc::clone(self) }
    }

    /// The basis element `e_j`.
    pub fn basis(self: &Arc<Self>, j: usize) -> AlgebraElement {
        let mut coeffs = vec![C64::new(0.0, 0.0); self.dim];
        coeffs[j] = C64::new(1.0, 0.0);
        self.element(coeffs)
    }

    /// The zero element, which doubles as the monoid unit `u`.
    pub fn zero(self: &Arc<Self>) -> AlgebraElement {
        self.element(vec![C64::new(0.0, 0.0); self.dim])
    }
}

/// Validate the algebra axioms and ideal triviality.
pub fn validate(alg: &ItoAlgebra) -> ValidationReport {
    let dim = alg.dim;
    let mut herm: f64 = 0.0;
    for j in 0..dim {
        for i in 0..dim {
            for k in 0..dim {
                herm = herm.max((alg.c[j][i][k] - alg.c[j][k][i].conj()).norm());
            }
        }
    }
    let mut assoc: f64 = 0.0;
    // (e_n e_k) e_m = e_n (e_k e_m), coefficient of e_i on both sides.
    for n in 0..dim {
        for k in 0..dim {
            for m in 0..dim {
                for i in 0..dim {
                    let mut lhs = C64::new(0.0, 0.0);
                    let mut rhs = C64::new(0.0, 0.0);
                    for j in 0..dim {
                        lhs += alg.c[j][n][k] * alg.c[i][j][m];
                        rhs += alg.c[j][k][m] * alg.c[i][n][j];
                    }
                    assoc = assoc.max((lhs - rhs).norm());
                }
            }
        }
    }
    let mut degen: f64 = 0.0;
    for j in 0..dim {
        for i in 0..dim {
            degen = degen.max(alg.c[j][0][i].norm());
            degen = degen.max(alg.c[j][i][0].norm());
        }
    }
    // Ideal triviality: b ∈ 𝔦 iff l vanishes on b, a·b, b·c, a·b·c for all
    // basis a, c. Collect these linear functionals on the non-killing part of
    // the basis as rows; 𝔦 is trivial iff the row space has full rank dim−1
    // (d_t itself never lies in 𝔦 since l(d_t) = 1).
    let mut rows: Vec<Vec<C64>> = Vec::new();
    // l(e_b) row.
    let mut l_row = vec![C64::new(0.0, 0.0); dim];
    l_row[0] = C64::new(1.0, 0.0);
    rows.push(l_row);
    for a in 0..dim {
        // l(e_a · e_b) as a function of b.
        rows.push((0..dim).map(|b| alg.c[0][a][b]).collect());
        // l(e_b · e_c) as a function of b.
        rows.push((0..dim).map(|b| alg.c[0][b][a]).collect());
        for cc in 0..dim {
            // l(e_a · e_b · e_c) as a function of b.
            rows.push(
                (0..dim)
                    .map(|b| (0..dim).map(|j| alg.c[j][a][b] * alg.c[0][j][cc]).sum())
                    .collect(),
            );
        }
    }
    let mat = DMatrix::from_fn(rows.len(), dim, |r, col| rows[r][col]);
    let svd = mat.svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = 1e-10 * smax.max(1.0);
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
    ValidationReport {
        hermitianity: AxiomCheck { pass: herm <= 1e-14, max_violation: herm },
        associativity: AxiomCheck { pass: assoc <= 1e-14, max_violation: assoc },
        degeneracy: AxiomCheck { pass: degen <= 1e-14, max_violation: degen },
        ideal_trivial: rank == dim,
        ideal_rank: rank,
    }
}

impl AlgebraElement {
    fn check_parent(&self, other: &AlgebraElement) -> Result<(), AlgebraError> {
        if Arc::ptr_eq(&self.parent, &other.parent) || *self.parent == *other.parent {
            Ok(())
        } else {
            Err(AlgebraError::ParentMismatch)
        }
    }

    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn add(&self, other: &AlgebraElement) -> AlgebraElement {
        self.check_parent(other).unwrap();
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b)
            .collect();
        AlgebraElement { coeffs, parent: Arc::clone(&self.parent) }
    }

    pub fn sub(&self, other: &AlgebraElement) -> AlgebraElement {
        self.check_parent(other).unwrap();
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        AlgebraElement { coeffs, parent: Arc::clone(&self.parent) }
    }

    pub fn scale(&self, z: C64) -> AlgebraElement {
        AlgebraElement {
            coeffs: self.coeffs.iter().map(|a| a * z).collect(),
            parent: Arc::clone(&self.parent),
        }
    }
}

/// Algebra product: `result_j = Σ_{i,k} α_i c[j][i][k] β_k`.
pub fn mul(a: &AlgebraElement, b: &AlgebraElement) -> AlgebraElement {
    a.check_parent(b).unwrap();
    let alg = &a.parent;
    let mut coeffs = vec![C64::new(0.0, 0.0); alg.dim];
    for (j, cj) in alg.c.iter().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (i, row) in cj.iter().enumerate() {
            if a.coeffs[i].norm_sqr() == 0.0 {
                continue;
            }
            for (k, ck) in row.iter().enumerate() {
                acc += a.coeffs[i] * ck * b.coeffs[k];
            }
        }
        coeffs[j] = acc;
    }
    AlgebraElement { coeffs, parent: Arc::clone(&a.parent) }
}

/// Involution: coefficient conjugation on the self-adjoint basis.
pub fn star(a: &AlgebraElement) -> AlgebraElement {
    AlgebraElement {
        coeffs: a.coeffs.iter().map(|z| z.conj()).collect(),
        parent: Arc::clone(&a.parent),
    }
}

/// The functional `l(a) = α_0`.
pub fn l_value(a: &AlgebraElement) -> C64 {
    a.coeffs[0]
}

/// Unitalized monoid composition `a ∘ b = a + b + a·b`.
pub fn monoid_mul(a: &AlgebraElement, b: &AlgebraElement) -> AlgebraElement {
    a.add(b).add(&mul(a, b))
}

/// Star composition `a ★ b = a + b⋆ + a·b⋆`.
pub fn star_comp(a: &AlgebraElement, b: &AlgebraElement) -> AlgebraElement {
    let bs = star(b);
    a.add(&bs).add(&mul(a, &bs))
}

/// Conditional-positivity check of `l` on a finite sample.
///
/// Builds `L[a][c] = l(a ★ c)` over the sample with the monoid unit `u = 0`
/// adjoined, projects onto the subspace `{κ : Σ κ = 0}`, and reports whether
/// the projected Hermitian form is PSD up to `−tol`.
pub fn conditional_positivity_check(
    sample: &[AlgebraElement],
    tol: f64,
) -> (bool, f64) {
    assert!(!sample.is_empty(), "sample must be nonempty");
    let parent = Arc::clone(&sample[0].parent);
    let mut elems: Vec<AlgebraElement> = vec![parent.zero()];
    elems.extend(sample.iter().cloned());
    let n = elems.len();
    // Hermitian form: Q(κ) = Σ_{a,c} κ_a conj(κ_c) l(a★c); in matrix terms
    // κ^T L κ̄, so the Hermitian matrix for κ†Mκ is M = transpose(L).
    let l_mat = DMatrix::from_fn(n, n, |a, c| l_value(&star_comp(&elems[a], &elems[c])));
    let m = l_mat.transpose();
    // Orthonormal basis of {Σκ = 0}: differences of consecutive unit vectors,
    // orthonormalized.
    let mut basis: Vec<nalgebra::DVector<C64>> = Vec::new();
    for k in 1..n {
        let mut v = nalgebra::DVector::from_element(n, C64::new(0.0, 0.0));
        v[0] = C64::new(1.0, 0.0);
        v[k] = C64::new(-1.0, 0.0);
        for b in &basis {
            let coef: C64 = b.dotc(&v);
            v -= b * coef;
        }
        let norm = v.norm();
        if norm > 1e-12 {
            basis.push(v / C64::new(norm, 0.0));
        }
    }
    let p = DMatrix::from_columns(&basis);
    let projected = p.adjoint() * &m * &p;
    // Symmetrize away float noise before the Hermitian eigensolver.
    let herm = (&projected + projected.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(herm);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    (min_eig >= -tol, min_eig)
}
