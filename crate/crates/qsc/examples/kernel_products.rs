//! Kernel tables over the chain space: the ⋆-monoid product, its dense
//! realization, adjoints, and the Möbius transform round trip.
//!
//! Run with `cargo run -p qsc --example kernel_products`.

use qsc::chain_fock::{Chain, Grid, HFockBasis};
use qsc::kernel_calc::{
    epsilon_matrix, kernel_mul, kernel_star, mobius_to_kernel, mobius_to_mm, ChainQuad,
    KernelTable,
};
use qsc::{max_abs, C64, CMat};
use rand::{Rng, SeedableRng};
use std::sync::Arc;

/// A dense random kernel: every point of the grid is assigned to one of
/// the four slots or left out, and each resulting quadruple gets a random
/// block of the correct shape.
fn random_kernel(grid: &Arc<Grid>, dim_h: usize, r: &mut impl Rng) -> KernelTable {
    let mut k = KernelTable::new(grid, dim_h);
    let n = grid.n;
    for mask in 0..5usize.pow(n as u32) {
        let mut slots = vec![Vec::new(); 4];
        let mut m = mask;
        for x in 0..n {
            let s = m % 5;
            m /= 5;
            if s > 0 {
                slots[s - 1].push(x);
            }
        }
        let quad = ChainQuad::new(
            Chain::new(slots[0].clone()),
            Chain::new(slots[1].clone()),
            Chain::new(slots[2].clone()),
            Chain::new(slots[3].clone()),
        );
        let (rows, cols) = k.block_shape(&quad);
        let block = CMat::from_fn(rows, cols, |_, _| {
            C64::new(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5))
        });
        k.insert(quad, block).expect("slots are disjoint by construction");
    }
    k
}

fn main() {
    let grid = Grid::uniform(3, 0.3, 1, 3);
    let basis = HFockBasis::new(&grid, 2);
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);

    let k = random_kernel(&grid, 2, &mut r);
    let l = random_kernel(&grid, 2, &mut r);
    println!(
        "two random kernels with {} quadruple entries each, dense dimension {}",
        k.entries.len(),
        basis.dim
    );

    // The dense realization turns the kernel product into the matrix
    // product, with the later factor acting first.
    let kl = kernel_mul(&k, &l).expect("same grid");
    let ek = epsilon_matrix(&k, &basis).unwrap();
    let el = epsilon_matrix(&l, &basis).unwrap();
    let ekl = epsilon_matrix(&kl, &basis).unwrap();
    let hom = max_abs(&(&ek * &el - &ekl));
    println!("product homomorphism residual ε(K⋆L) − ε(K)ε(L): {:.2e}", hom);
    assert!(hom < 1e-12);

    // The ⋆-involution matches the weighted dense adjoint.
    let eks = epsilon_matrix(&kernel_star(&k), &basis).unwrap();
    let adj = max_abs(&(&eks - basis.weighted_adjoint(&ek)));
    println!("involution residual ε(K⋆) − ε(K)‡: {:.2e}", adj);
    assert!(adj < 1e-12);

    // Identity kernel is a two-sided unit.
    let id = KernelTable::identity(&grid, 2);
    let unit = kernel_mul(&id, &k)
        .unwrap()
        .max_abs_diff(&k)
        .max(kernel_mul(&k, &id).unwrap().max_abs_diff(&k));
    println!("unit residual 1⋆K − K and K⋆1 − K: {:.2e}", unit);
    assert!(unit < 1e-14);

    // Möbius transform to the four-argument form and back is exact.
    let round = mobius_to_kernel(&mobius_to_mm(&k)).max_abs_diff(&k);
    println!("Möbius round-trip residual: {:.2e}", round);
    assert!(round == 0.0 || round < 1e-14);

    println!("\nall kernel checks passed");
}
