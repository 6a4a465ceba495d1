//! Solve a lattice quantum stochastic differential equation: build a
//! pseudo-unitary generator from Hamiltonian data, verify the fixed-point
//! equation, check that unitarity transfers to the solution, and split
//! the evolution into commuting counting, diffusion and drift parts.
//!
//! Run with `cargo run -p qsc --example qsde_unitary`.

use qsc::chain_fock::{Grid, HFockBasis};
use qsc::kernel_calc::KernelTable;
use qsc::qsde_solver::{
    decompose_evolution, exp_generator, growth_estimate, pseudo_unitarity_check, reassemble,
    solve_qsde,
};
use qsc::{max_abs, C64, CMat};
use rand::{Rng, SeedableRng};
use std::sync::Arc;

fn rmat(rows: usize, cols: usize, scale: f64, r: &mut impl Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        C64::new(scale * r.gen_range(-1.0..1.0), scale * r.gen_range(-1.0..1.0))
    })
}

fn rherm(n: usize, scale: f64, r: &mut impl Rng) -> CMat {
    let m = rmat(n, n, scale, r);
    (&m + m.adjoint()) * C64::new(0.5, 0.0)
}

fn random_exp_generator(
    grid: &Arc<Grid>,
    dim_h: usize,
    scale: f64,
    r: &mut impl Rng,
) -> qsc::qsde_solver::GeneratorS {
    let d = grid.d;
    let h_cc: Vec<CMat> = (0..grid.n).map(|_| rherm(dim_h * d, scale, r)).collect();
    let h_pc: Vec<CMat> = (0..grid.n).map(|_| rmat(dim_h * d, dim_h, scale, r)).collect();
    let h_pm: Vec<CMat> = (0..grid.n).map(|_| rherm(dim_h, scale, r)).collect();
    exp_generator(grid, dim_h, &h_cc, &h_pc, &h_pm).expect("Hamiltonian data is Hermitian")
}

fn main() {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(21);

    // Coarse lattice: exact fixed-point equation and growth bound.
    let grid = Grid::uniform(3, 0.4, 1, 3);
    let basis = HFockBasis::new(&grid, 2);
    let s = random_exp_generator(&grid, 2, 0.7, &mut r);

    let pu = pseudo_unitarity_check(&s, 1e-10);
    println!(
        "generator identities: exchange {:.2e}, corner {:.2e}, row {:.2e}, column {:.2e} ({})",
        pu.exchange,
        pu.corner,
        pu.row,
        pu.column,
        if pu.pass { "pseudo-unitary" } else { "NOT pseudo-unitary" }
    );
    assert!(pu.pass);

    let t0 = KernelTable::identity(&grid, 2);
    let t = 1.2;
    let sol = solve_qsde(&t0, &s, t, &basis).unwrap();
    println!("\nfixed-point residual at t = {t}: {:.2e}", sol.residual);
    assert!(sol.residual < 1e-11);

    let rw = vec![1.0; grid.n];
    let rep = growth_estimate(&s, &rw, t, &basis).unwrap();
    println!("growth bound: measured norm {:.4} ≤ bound {:.4}", rep.measured, rep.bound);
    assert!(rep.measured <= rep.bound * (1.0 + 1e-12));

    // Fine lattice: the one-step defects of the generator scale with the
    // step, so the solution is unitary to high precision while staying
    // far from the identity.
    let dt = 1e-12;
    let fine = Grid::uniform(3, dt, 1, 3);
    let fbasis = HFockBasis::new(&fine, 2);
    let fs = random_exp_generator(&fine, 2, 0.8, &mut r);
    let f0 = KernelTable::identity(&fine, 2);
    let fsol = solve_qsde(&f0, &fs, 4.0 * dt, &fbasis).unwrap();
    let eye = CMat::identity(fbasis.dim, fbasis.dim);
    let dist = max_abs(&(&fsol.op - &eye));
    let defect = max_abs(&(fbasis.weighted_adjoint(&fsol.op) * &fsol.op - &eye));
    println!(
        "\nfine lattice: ‖T − 1‖ = {:.3} (nontrivial), unitarity defect ‖T‡T − 1‖ = {:.2e}",
        dist, defect
    );
    assert!(dist > 1e-2 && defect < 1e-10);

    // Decomposition into commuting counting, diffusion and drift parts.
    let dec = decompose_evolution(&s).unwrap();
    println!("\nthree-part split residual: {:.2e}", dec.split_residual);
    let back = reassemble(&dec);
    let mut res: f64 = 0.0;
    for x in 0..grid.n {
        res = res
            .max(max_abs(&(&back.s_pm[x] - &s.s_pm[x])))
            .max(max_abs(&(&back.s_cm[x] - &s.s_cm[x])))
            .max(max_abs(&(&back.s_pc[x] - &s.s_pc[x])))
            .max(max_abs(&(&back.s_cc[x] - &s.s_cc[x])));
    }
    println!("reassembly residual: {:.2e}", res);
    assert!(res < 1e-12);
    for (name, part) in [
        ("counting", &dec.poisson),
        ("diffusion", &dec.brownian),
        ("drift", &dec.lebesgue),
    ] {
        let p = pseudo_unitarity_check(part, 1e-10);
        println!("  {name} part pseudo-unitary: {} (max violation {:.2e})", p.pass, p.max());
    }

    println!("\nall evolution checks passed");
}
