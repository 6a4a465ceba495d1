//! Noncommutative Itô algebras and quantum stochastic calculus on finite,
//! discretized chain spaces.
//!
//! The crate implements, at desk scale and with exact finite linear algebra:
//!
//! - finite-dimensional Itô ⋆-algebras with structure-constant validation
//!   ([`ito_algebra`]),
//! - canonical triangular pseudo-Euclidean (Minkowski) representations of
//!   conditionally positive functionals ([`gns_rep`]),
//! - weighted Fock vectors over discretized chain (Guichardet) spaces and the
//!   exact discrete sum-integral identity ([`chain_fock`]),
//! - kernel calculus: sparse operator kernels, the Fock representation ε,
//!   kernel star/product, Möbius transform, pseudo-Fock dilation
//!   ([`kernel_calc`]),
//! - single and multiple quantum stochastic integrals, quantum-stochastic
//!   derivatives, counting integrals and norm estimates ([`qs_integral`]),
//! - germ matrices and the generalized (non-adapted) Itô product formula in
//!   strong, weak, and adapted forms ([`ito_formula`]),
//! - QSDE solution by chronological kernel products, pseudo-unitary
//!   exponential generators, and evolution decompositions ([`qsde_solver`]),
//! - a JSON-driven command-line front end ([`cli`]).
//!
//! ## Runnable examples
//!
//! The primary interface for exploring the library is the `examples/`
//! directory, one runnable example per major capability:
//!
//! ```text
//! examples/
//! ├── algebra_validation.rs    # build/validate Itô algebras, monoid products
//! ├── gns_triangular.rs        # triangular GNS representation and cocycles
//! ├── chain_space.rs           # chains, Fock vectors, sum-integral identity
//! ├── kernel_products.rs       # kernel star/product vs the dense ε oracle
//! ├── stochastic_integrals.rs  # multiple QS integrals, adjoints, derivatives
//! ├── ito_product_formula.rs   # strong/weak/adapted Itô formula residuals
//! └── qsde_unitary.rs          # exp-generators, chronological products, unitarity
//! ```
//!
//! Run any of them with:
//!
//! ```bash
//! cargo run -p qsc --example algebra_validation
//! cargo run -p qsc --example gns_triangular
//! cargo run -p qsc --example chain_space
//! cargo run -p qsc --example kernel_products
//! cargo run -p qsc --example stochastic_integrals
//! cargo run -p qsc --example ito_product_formula
//! cargo run -p qsc --example qsde_unitary
//! ```
//!
//! ## Command line
//!
//! A thin binary `qsc` exposes the validation pipelines over JSON specs:
//!
//! ```bash
//! cargo run -p qsc -- validate-algebra --input demos/algebra_hp.json
//! cargo run -p qsc -- solve --input demos/solve_exp.json --t 1.0
//! ```
//!
//! See [`cli`] for the full set of subcommands and the report format.

pub mod chain_fock;
pub mod cli;
pub mod gns_rep;
pub mod ito_algebra;
pub mod ito_formula;
pub mod kernel_calc;
pub mod qs_integral;
pub mod qsde_solver;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVec = nalgebra::DVector<C64>;

/// Largest absolute entry of a matrix (∞-norm over entries).
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest absolute entry of the difference of two equally sized matrices.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    max_abs(&(a - b))
}
