//! Validate the axioms of the bundled increment algebras and print their
//! multiplication tables.
//!
//! Run with `cargo run -p qsc --example algebra_validation`.

use qsc::ito_algebra::{
    conditional_positivity_check, hp_vacuum, l_value, monoid_mul, mul, poisson, validate, wiener,
};
use qsc::C64;

fn report(name: &str, alg: &std::sync::Arc<qsc::ito_algebra::ItoAlgebra>) {
    let r = validate(alg);
    println!("{name} (dim {}):", alg.dim);
    println!(
        "  hermitianity   {:>9.2e}  {}",
        r.hermitianity.max_violation,
        if r.hermitianity.pass { "ok" } else { "FAIL" }
    );
    println!(
        "  associativity  {:>9.2e}  {}",
        r.associativity.max_violation,
        if r.associativity.pass { "ok" } else { "FAIL" }
    );
    println!(
        "  degeneracy     {:>9.2e}  {}",
        r.degeneracy.max_violation,
        if r.degeneracy.pass { "ok" } else { "FAIL" }
    );
    println!(
        "  kernel ideal: rank {} ({})",
        r.ideal_rank,
        if r.ideal_trivial { "trivial products" } else { "nontrivial" }
    );
    assert!(r.all_pass(), "{name} failed validation");
}

fn print_table(alg: &std::sync::Arc<qsc::ito_algebra::ItoAlgebra>) {
    for a in 0..alg.dim {
        for b in 0..alg.dim {
            let p = mul(&alg.basis(a), &alg.basis(b));
            if p.max_abs() < 1e-15 {
                continue;
            }
            let terms: Vec<String> = p
                .coeffs
                .iter()
                .enumerate()
                .filter(|(_, z)| z.norm() > 1e-15)
                .map(|(k, z)| {
                    if (z - C64::new(1.0, 0.0)).norm() < 1e-15 {
                        alg.basis_names[k].clone()
                    } else {
                        format!("({:.2}{:+.2}i)·{}", z.re, z.im, alg.basis_names[k])
                    }
                })
                .collect();
            println!(
                "  {} · {} = {}",
                alg.basis_names[a],
                alg.basis_names[b],
                terms.join(" + ")
            );
        }
    }
}

fn main() {
    let hp = hp_vacuum();
    let wi = wiener();
    let po = poisson(1.5).expect("intensity must be positive");

    report("vacuum four-dimensional algebra", &hp);
    report("diffusion algebra", &wi);
    report("counting algebra, intensity 1.5", &po);

    println!("\nnonzero products of the vacuum algebra:");
    print_table(&hp);
    println!("\nnonzero products of the counting algebra:");
    print_table(&po);

    // The death functional l is a character for the unit-shifted product.
    let a = hp.element(vec![
        C64::new(0.3, 0.1),
        C64::new(0.0, -0.4),
        C64::new(0.2, 0.0),
        C64::new(0.1, 0.2),
    ]);
    let b = hp.element(vec![
        C64::new(-0.2, 0.0),
        C64::new(0.5, 0.1),
        C64::new(0.0, 0.3),
        C64::new(0.4, -0.1),
    ]);
    let lhs = l_value(&monoid_mul(&a, &b));
    println!(
        "\nmonoid product check: l(a∘b) = {:.4}{:+.4}i, l(a)+l(b)+l(ab) = {:.4}{:+.4}i",
        lhs.re,
        lhs.im,
        (l_value(&a) + l_value(&b) + l_value(&mul(&a, &b))).re,
        (l_value(&a) + l_value(&b) + l_value(&mul(&a, &b))).im
    );

    // Conditional positivity of the Gram kernel over a small sample.
    let sample = vec![a, b, hp.basis(1), hp.basis(3)];
    let (pos, min_eig) = conditional_positivity_check(&sample, 1e-10);
    println!(
        "conditional positivity over 4 sample elements: min eigenvalue {:.2e} ({})",
        min_eig,
        if pos { "positive" } else { "NEGATIVE" }
    );
    assert!(pos);
    println!("\nall algebra checks passed");
}
