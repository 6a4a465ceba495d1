//! Tour of the discrete chain space: grids, chains and their weights,
//! exponential vectors, and the sum-integral identity.
//!
//! Run with `cargo run -p qsc --example chain_space`.

use qsc::chain_fock::{
    annihilate, exp_vector, inner, sum_integral_check, Chain, Grid, HFockBasis, TwoChainScalar,
};
use qsc::C64;
use std::collections::BTreeMap;

fn main() {
    let grid = Grid::uniform(3, 0.4, 2, 3);
    println!(
        "grid: {} points at {:?}, multiplicity {}, chains up to length {}",
        grid.n, grid.times, grid.d, grid.n_max
    );

    let chains = grid.all_chains();
    println!("\n{} chains with weights:", chains.len());
    for c in &chains {
        println!("  {:?}  weight {:.4}", c.0, c.weight(&grid));
    }

    let basis = HFockBasis::new(&grid, 2);
    println!("\ndense dimension with a 2-dimensional initial space: {}", basis.dim);

    // Exponential vectors: the weighted inner product factorizes over
    // points as long as the length cutoff does not truncate anything.
    let k: Vec<Vec<C64>> = vec![
        vec![C64::new(0.3, 0.1), C64::new(0.0, -0.2)],
        vec![C64::new(-0.4, 0.0), C64::new(0.1, 0.1)],
        vec![C64::new(0.2, 0.5), C64::new(0.3, 0.0)],
    ];
    let l: Vec<Vec<C64>> = vec![
        vec![C64::new(0.1, 0.0), C64::new(0.2, 0.2)],
        vec![C64::new(0.0, 0.3), C64::new(-0.1, 0.0)],
        vec![C64::new(0.4, -0.2), C64::new(0.0, 0.1)],
    ];
    let ek = exp_vector(&grid, &k);
    let el = exp_vector(&grid, &l);
    let got = inner(&ek, &el);
    let want: C64 = (0..grid.n)
        .map(|x| {
            let pair: C64 = (0..grid.d).map(|m| k[x][m].conj() * l[x][m]).sum();
            C64::new(1.0, 0.0) + C64::new(grid.weights[x], 0.0) * pair
        })
        .product();
    println!(
        "\nexponential-vector pairing: ⟨e(k), e(l)⟩ = {:.6}{:+.6}i, product form {:.6}{:+.6}i, diff {:.2e}",
        got.re,
        got.im,
        want.re,
        want.im,
        (got - want).norm()
    );
    assert!((got - want).norm() < 1e-12);

    // Annihilation at a single point strips that point from every chain
    // and, on an exponential vector, just multiplies by k at the point.
    let theta = Chain::new(vec![1]);
    let stripped: BTreeMap<Chain, Vec<C64>> = annihilate(&theta, &ek);
    println!(
        "\nannihilation at point 1 keeps {} of {} chains populated",
        stripped.len(),
        ek.entries.len()
    );

    // Sum-integral identity: summing a two-chain function over splittings
    // of one weighted chain equals the double weighted sum over disjoint
    // pairs. Exercised here on a generic non-factorizing function.
    let mut f: TwoChainScalar = BTreeMap::new();
    for a in &chains {
        for b in &chains {
            if a.is_disjoint(b) {
                let v = C64::new(
                    0.7 + (a.len() as f64) * 0.3 - (b.len() as f64) * 0.1,
                    0.2 * (a.len() as f64 + 2.0 * b.len() as f64),
                );
                f.insert((a.clone(), b.clone()), v);
            }
        }
    }
    let res = sum_integral_check(&grid, &f);
    println!("sum-integral identity residual over {} pairs: {:.2e}", f.len(), res);
    assert!(res < 1e-12);

    println!("\nall chain-space checks passed");
}
