//! Generalized integrals on the chain space: single integrals of a
//! four-slot integrand, table integrands with their point derivatives,
//! the ⋆-adjoint rule, and the a-priori norm estimate.
//!
//! Run with `cargo run -p qsc --example stochastic_integrals`.

use qsc::chain_fock::{Chain, Grid, HFockBasis, WeightFunction};
use qsc::kernel_calc::ChainQuad;
use qsc::qs_integral::{
    integrand_star, multiple_integral_matrix, norm_estimate_quadruple, qs_derivatives,
    single_integral_matrix, IntegrandQuadruple, TableIntegrand,
};
use qsc::{max_abs, max_abs_diff, C64, CMat};
use rand::{Rng, SeedableRng};
use std::sync::Arc;

fn rmat(rows: usize, cols: usize, r: &mut impl Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| C64::new(r.gen_range(-0.6..0.6), r.gen_range(-0.6..0.6)))
}

fn random_table(
    grid: &Arc<Grid>,
    basis: &HFockBasis,
    n_entries: usize,
    r: &mut impl Rng,
) -> TableIntegrand {
    let mut b = TableIntegrand::new(grid);
    while b.entries.len() < n_entries {
        let mut slots = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for x in 0..grid.n {
            let k = r.gen_range(0..8);
            if k < 4 {
                slots[k].push(x);
            }
        }
        let quad = ChainQuad::new(
            Chain::new(slots[0].clone()),
            Chain::new(slots[1].clone()),
            Chain::new(slots[2].clone()),
            Chain::new(slots[3].clone()),
        );
        let (rows, cols) = b.block_shape(&quad, basis);
        let block = rmat(rows, cols, r);
        b.insert(quad, block, basis).expect("shapes match by construction");
    }
    b
}

fn main() {
    let grid = Grid::uniform(3, 0.3, 1, 3);
    let basis = HFockBasis::new(&grid, 1);
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let d = grid.d;
    let dim = basis.dim;

    // A random four-slot integrand: per grid point one matrix for each of
    // the preservation, creation, annihilation and exchange measures.
    let mut dq = IntegrandQuadruple::zero(&basis);
    for x in 0..grid.n {
        dq.d_pm[x] = rmat(dim, dim, &mut r);
        dq.d_pc[x] = rmat(dim * d, dim, &mut r);
        dq.d_cm[x] = rmat(dim, dim * d, &mut r);
        dq.d_cc[x] = rmat(dim * d, dim * d, &mut r);
    }

    println!("single integral up to each cut (dense max entry):");
    let mut cuts: Vec<f64> = grid.times.clone();
    cuts.push(grid.times[grid.n - 1] + 0.3);
    for &t in &cuts[1..] {
        let m = single_integral_matrix(&dq, t, &basis).unwrap();
        println!("  t = {:.2}: {:.4}", t, max_abs(&m));
    }

    // A-priori estimate: the weighted operator norm of the integral is
    // dominated by the four-term integrand bound.
    let p = WeightFunction::new(vec![1.0; grid.n]);
    let rw = vec![0.8; grid.n];
    let sw = vec![1.1; grid.n];
    let t = cuts[grid.n];
    let rep = norm_estimate_quadruple(&dq, &p, &rw, &sw, t, &basis).unwrap();
    println!(
        "\nnorm estimate at t = {:.2}: measured {:.4} ≤ bound {:.4}",
        t, rep.measured, rep.bound
    );
    assert!(rep.measured <= rep.bound * (1.0 + 1e-12));

    // Table integrands: the multiple integral decomposes into its value
    // at the empty table plus the single integral of the point
    // derivatives.
    let b = random_table(&grid, &basis, 5, &mut r);
    let t = 1.0;
    let full = multiple_integral_matrix(&b, t, &basis).unwrap();
    let mut base = CMat::zeros(dim, dim);
    if let Some(t0) = b.entries.get(&ChainQuad::vacuum()) {
        base += t0;
    }
    let mut der = IntegrandQuadruple::zero(&basis);
    for x in 0..grid.n {
        let dx = qs_derivatives(&b, x, &basis).unwrap();
        der.d_pm[x] = dx.d_pm[x].clone();
        der.d_cm[x] = dx.d_cm[x].clone();
        der.d_pc[x] = dx.d_pc[x].clone();
        der.d_cc[x] = dx.d_cc[x].clone();
    }
    let rec = base + single_integral_matrix(&der, t, &basis).unwrap();
    let res = max_abs_diff(&full, &rec);
    println!("derivative reconstruction residual: {:.2e}", res);
    assert!(res < 1e-12);

    // Adjoint rule: the weighted adjoint of the multiple integral is the
    // multiple integral of the ⋆-adjoint integrand.
    let lhs = basis.weighted_adjoint(&full);
    let rhs = multiple_integral_matrix(&integrand_star(&b, &basis), t, &basis).unwrap();
    let adj = max_abs_diff(&lhs, &rhs);
    println!("adjoint rule residual: {:.2e}", adj);
    assert!(adj < 1e-12);

    println!("\nall integral checks passed");
}
