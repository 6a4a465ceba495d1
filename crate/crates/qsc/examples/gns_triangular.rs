//! Build the canonical triangular representation of the vacuum increment
//! algebra from a finite sample and verify its structural identities.
//!
//! Run with `cargo run -p qsc --example gns_triangular`.

use qsc::gns_rep::{gns_construct, pseudo_adjoint, tri_mul, verify_cocycles};
use qsc::ito_algebra::{hp_vacuum, l_value, monoid_mul, star};
use qsc::C64;

fn main() {
    let alg = hp_vacuum();
    let a = alg.element(vec![
        C64::new(0.4, 0.1),
        C64::new(1.0, 0.0),
        C64::new(0.0, -0.3),
        C64::new(0.2, 0.0),
    ]);
    let b = alg.element(vec![
        C64::new(-0.2, 0.0),
        C64::new(0.3, 0.5),
        C64::new(0.7, 0.0),
        C64::new(0.0, 0.6),
    ]);
    let sample = vec![a.clone(), b.clone(), alg.basis(3)];

    let rep = gns_construct(&sample, 1e-10).expect("construction must succeed");
    println!("middle-space dimension: {}", rep.dim_k);

    let ta = rep.op(&a);
    println!("\ntriangular image of a ({}×{} dense form):", rep.dim_k + 2, rep.dim_k + 2);
    let m = ta.to_matrix();
    for i in 0..m.nrows() {
        let row: Vec<String> =
            (0..m.ncols()).map(|j| format!("{:+.3}{:+.3}i", m[(i, j)].re, m[(i, j)].im)).collect();
        println!("  [{}]", row.join(", "));
    }

    // Corner identity: the scalar part recovers the death functional,
    // read off through the indefinite pairing that flips the corners.
    let e = &rep.e_vector;
    let corner = (e.adjoint() * qsc::gns_rep::minkowski_metric(rep.dim_k) * &m * e)[(0, 0)];
    let l = l_value(&a);
    println!(
        "\ncorner identity: e†T(a)e = {:.6}{:+.6}i, l(a) = {:.6}{:+.6}i, diff {:.2e}",
        corner.re,
        corner.im,
        l.re,
        l.im,
        (corner - l).norm()
    );
    assert!((corner - l).norm() < 1e-10);

    // Representation property: the triangular ops with unit corners are
    // multiplicative for the unit-shifted monoid product a∘b = a+b+ab.
    let ab = monoid_mul(&a, &b);
    let prod_res = rep.op(&ab).max_abs_diff(&tri_mul(&ta, &rep.op(&b)));
    println!("homomorphism residual T(a∘b) − T(a)T(b): {:.2e}", prod_res);
    assert!(prod_res < 1e-10);

    let star_res = rep.op(&star(&a)).max_abs_diff(&pseudo_adjoint(&ta));
    println!("star compatibility residual T(a*) − T(a)‡: {:.2e}", star_res);
    assert!(star_res < 1e-10);

    // Cocycle identities of the off-diagonal column, row and pairing.
    let rc = verify_cocycles(&rep, &a, &b, 1e-10);
    println!(
        "cocycles: column {:.2e}, row {:.2e}, pairing {:.2e} ({})",
        rc.column_cocycle,
        rc.row_cocycle,
        rc.pairing,
        if rc.pass { "ok" } else { "FAIL" }
    );
    assert!(rc.pass);

    println!("\nall representation checks passed");
}
