//! Germ matrices and the generalized Itô product formulas.
//!
//! A kernel process `t ↦ K_t` has, at each grid point, a triangular matrix
//! of germs: the dense operators obtained from its point-derivatives at the
//! cut and just after it. Differences of germs are the stochastic
//! derivatives, and products of germ matrices give the non-adapted Itô
//! product formula in strong and weak form. On the lattice the triangular
//! product carries point-weight corrections (second-order increment
//! products at the same point) which vanish in the continuum limit.

use crate::chain_fock::{Chain, FockVector, HFockBasis};
use crate::ito_algebra::ItoAlgebra;
use crate::kernel_calc::{epsilon_matrix, mobius_to_mm, ChainQuad, KernelError, KernelTable};
use crate::qs_integral::{
    epsilon_with_legs, single_integral_matrix, IntegralError, IntegrandQuadruple, MeasureKind,
};
use crate::{C64, CMat, CVec};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum ItoError {
    #[error("kernel error: {0}")]
    Kernel(#[from] KernelError),
    #[error("integral error: {0}")]
    Integral(#[from] IntegralError),
    #[error("point {0} outside the grid")]
    PointOutsideGrid(usize),
    #[error("process is not adapted at t = {0}")]
    NotAdapted(f64),
    #[error("germ shapes do not match")]
    ShapeMismatch,
}

/// Triangular matrix of germs at one grid point: equal corners `t`
/// (the `(−,−)` and `(+,+)` entries), annihilation row, scalar corner,
/// exchange middle and creation column, all dense on the truncated space
/// with the `K_x` leg flattened (fastest index).
#[derive(Debug, Clone)]
pub struct GermMatrix {
    /// `(−,−) = (+,+)` corner: the process value.
    pub t: CMat,
    /// `(−,∘)` row block, `dim × dim·d`.
    pub row: CMat,
    /// `(−,+)` scalar-type corner block, `dim × dim`.
    pub corner: CMat,
    /// `(∘,∘)` middle block, `dim·d × dim·d`.
    pub mid: CMat,
    /// `(∘,+)` column block, `dim·d × dim`.
    pub col: CMat,
}

impl GermMatrix {
    pub fn zero(basis: &HFockBasis) -> Self {
        let dim = basis.dim;
        let dd = dim * basis.grid.d;
        GermMatrix {
            t: CMat::zeros(dim, dim),
            row: CMat::zeros(dim, dd),
            corner: CMat::zeros(dim, dim),
            mid: CMat::zeros(dd, dd),
            col: CMat::zeros(dd, dim),
        }
    }

    pub fn identity(basis: &HFockBasis) -> Self {
        let mut g = GermMatrix::zero(basis);
        g.t = CMat::identity(basis.dim, basis.dim);
        let dd = basis.dim * basis.grid.d;
        g.mid = CMat::identity(dd, dd);
        g
    }

    pub fn sub(&self, other: &GermMatrix) -> GermMatrix {
        GermMatrix {
            t: &self.t - &other.t,
            row: &self.row - &other.row,
            corner: &self.corner - &other.corner,
            mid: &self.mid - &other.mid,
            col: &self.col - &other.col,
        }
    }

    pub fn max_abs(&self) -> f64 {
        [&self.t, &self.row, &self.corner, &self.mid, &self.col]
            .iter()
            .map(|m| crate::max_abs(m))
            .fold(0.0, f64::max)
    }

    /// The off-corner blocks as a per-point integrand quadruple entry.
    pub fn write_quadruple(&self, q: &mut IntegrandQuadruple, x: usize) {
        q.d_pm[x] = self.corner.clone();
        q.d_cm[x] = self.row.clone();
        q.d_pc[x] = self.col.clone();
        q.d_cc[x] = self.mid.clone();
    }
}

/// Adjoint of a block with flat `K_x` legs in the weighted inner product:
/// `M⋆ = (W⊗I)⁻¹ M† (W⊗I)` with the chain weights on the Fock factor only.
fn leg_adjoint(m: &CMat, dl_out: usize, dl_in: usize, basis: &HFockBasis) -> CMat {
    let w = basis.weight_diag();
    let mut out = CMat::zeros(m.ncols(), m.nrows());
    for i in 0..m.ncols() {
        for j in 0..m.nrows() {
            out[(i, j)] = m[(j, i)].conj() * C64::new(w[j / dl_out] / w[i / dl_in], 0.0);
        }
    }
    out
}

/// Pseudo-Euclidean conjugation `[A_ν^μ]† = [A_{−μ}^{−ν}]*`: reflect about
/// the anti-diagonal with blockwise weighted adjoints.
pub fn germ_dagger(a: &GermMatrix, basis: &HFockBasis) -> GermMatrix {
    let d = basis.grid.d;
    GermMatrix {
        t: basis.weighted_adjoint(&a.t),
        row: leg_adjoint(&a.col, d, 1, basis),
        corner: basis.weighted_adjoint(&a.corner),
        mid: leg_adjoint(&a.mid, d, d, basis),
        col: leg_adjoint(&a.row, 1, d, basis),
    }
}

/// Product of germ matrices: the standard triangular block product plus
/// the lattice corrections `dx·(column of a)·(row of b)` in the four
/// off-corner blocks, which represent same-point second-order increment
/// products and vanish as `dx → 0`.
pub fn germ_mul(a: &GermMatrix, b: &GermMatrix, dx: f64) -> Result<GermMatrix, ItoError> {
    if a.t.ncols() != b.t.nrows() || a.mid.ncols() != b.mid.nrows() {
        return Err(ItoError::ShapeMismatch);
    }
    let w = C64::new(dx, 0.0);
    Ok(GermMatrix {
        t: &a.t * &b.t,
        row: &a.t * &b.row + &a.row * &b.mid + &a.corner * &b.row * w,
        corner: &a.t * &b.corner + &a.row * &b.col + &a.corner * &b.t + &a.corner * &b.corner * w,
        mid: &a.mid * &b.mid + &a.col * &b.row * w,
        col: &a.mid * &b.col + &a.col * &b.t + &a.col * &b.corner * w,
    })
}

fn atomic_quad(x: usize, kind: MeasureKind) -> ChainQuad {
    let e = Chain::empty();
    let s = Chain::single(x);
    match kind {
        MeasureKind::Preservation => ChainQuad::new(s, e.clone(), e.clone(), e),
        MeasureKind::Annihilation => ChainQuad::new(e.clone(), s, e.clone(), e),
        MeasureKind::Creation => ChainQuad::new(e.clone(), e.clone(), s, e),
        MeasureKind::Exchange => ChainQuad::new(e.clone(), e.clone(), e, s),
    }
}

fn slot_chain(quad: &ChainQuad, kind: MeasureKind) -> &Chain {
    match kind {
        MeasureKind::Preservation => &quad.pm,
        MeasureKind::Annihilation => &quad.cm,
        MeasureKind::Creation => &quad.pc,
        MeasureKind::Exchange => &quad.cc,
    }
}

/// Point-derivative of a kernel at `x` in one slot, represented through
/// the Fock representation with the `K_x` leg exposed.
fn germ_block(k: &KernelTable, x: usize, kind: MeasureKind, basis: &HFockBasis) -> CMat {
    let mut map: BTreeMap<ChainQuad, CMat> = BTreeMap::new();
    for (quad, block) in &k.entries {
        if !slot_chain(quad, kind).contains(x) {
            continue;
        }
        let strip = |c: &Chain| c.minus(&Chain::single(x));
        let rest = match kind {
            MeasureKind::Preservation => {
                ChainQuad::new(strip(&quad.pm), quad.cm.clone(), quad.pc.clone(), quad.cc.clone())
            }
            MeasureKind::Annihilation => {
                ChainQuad::new(quad.pm.clone(), strip(&quad.cm), quad.pc.clone(), quad.cc.clone())
            }
            MeasureKind::Creation => {
                ChainQuad::new(quad.pm.clone(), quad.cm.clone(), strip(&quad.pc), quad.cc.clone())
            }
            MeasureKind::Exchange => {
                ChainQuad::new(quad.pm.clone(), quad.cm.clone(), quad.pc.clone(), strip(&quad.cc))
            }
        };
        match map.entry(rest) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(block.clone());
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += block;
            }
        }
    }
    epsilon_with_legs(&map, &atomic_quad(x, kind), basis)
}

/// Germ matrix of one kernel value at a point: corner is the represented
/// operator, off blocks are the point-derivatives with exposed leg.
pub fn germ_of_kernel(k: &KernelTable, x: usize, basis: &HFockBasis) -> Result<GermMatrix, ItoError> {
    Ok(GermMatrix {
        t: epsilon_matrix(k, basis)?,
        row: germ_block(k, x, MeasureKind::Annihilation, basis),
        corner: germ_block(k, x, MeasureKind::Preservation, basis),
        mid: germ_block(k, x, MeasureKind::Exchange, basis),
        col: germ_block(k, x, MeasureKind::Creation, basis),
    })
}

/// Left and right germ matrices of a kernel process at point `x`: the left
/// germ uses the kernel at `t(x)`, the right limit uses the kernel at the
/// next cut (the process is constant between cuts). Both corners equal the
/// value at `t(x)`.
pub fn germs(
    process: &dyn Fn(f64) -> KernelTable,
    x: usize,
    basis: &HFockBasis,
) -> Result<(GermMatrix, GermMatrix), ItoError> {
    let grid = &basis.grid;
    if x >= grid.n {
        return Err(ItoError::PointOutsideGrid(x));
    }
    let t_x = grid.times[x];
    let t_next = grid
        .times
        .iter()
        .cloned()
        .filter(|&s| s > t_x)
        .fold(f64::INFINITY, f64::min);
    let k_at = process(t_x);
    let k_after = process(t_next);
    let t = germ_of_kernel(&k_at, x, basis)?;
    let mut g = germ_of_kernel(&k_after, x, basis)?;
    g.t = t.t.clone();
    Ok((t, g))
}

/// Stochastic derivatives `D(x) = G(x) − T(x)` of a kernel process, as a
/// per-point integrand quadruple.
pub fn process_derivatives(
    process: &dyn Fn(f64) -> KernelTable,
    basis: &HFockBasis,
) -> Result<IntegrandQuadruple, ItoError> {
    let mut q = IntegrandQuadruple::zero(basis);
    for x in 0..basis.grid.n {
        let (t, g) = germs(process, x, basis)?;
        g.sub(&t).write_quadruple(&mut q, x);
    }
    Ok(q)
}

/// Strong non-adapted Itô product formula: residual of
/// `T_t T_t⋆ − T_0 T_0⋆ = i_0^t(GG† − TT†)` with the germ products taken
/// pointwise.
pub fn ito_check_strong(
    process: &dyn Fn(f64) -> KernelTable,
    t: f64,
    basis: &HFockBasis,
) -> Result<f64, ItoError> {
    let t_t = epsilon_matrix(&process(t), basis)?;
    let t_0 = epsilon_matrix(&process(0.0), basis)?;
    let lhs = &t_t * basis.weighted_adjoint(&t_t) - &t_0 * basis.weighted_adjoint(&t_0);
    let mut q = IntegrandQuadruple::zero(basis);
    for x in basis.grid.points_before(t) {
        let dx = basis.grid.weights[x];
        let (tg, gg) = germs(process, x, basis)?;
        let gg_prod = germ_mul(&gg, &germ_dagger(&gg, basis), dx)?;
        let tt_prod = germ_mul(&tg, &germ_dagger(&tg, basis), dx)?;
        gg_prod.sub(&tt_prod).write_quadruple(&mut q, x);
    }
    let rhs = single_integral_matrix(&q, t, basis)?;
    Ok(crate::max_abs_diff(&lhs, &rhs))
}

/// Point derivative of a dense vector: `[ḣ(x)](ϰ)_k = h(ϰ⊔x)` with the
/// leg component fastest; zero on chains already containing `x`.
pub fn point_derivative(v: &CVec, x: usize, basis: &HFockBasis) -> CVec {
    let d = basis.grid.d;
    let mut out = CVec::from_element(basis.dim * d, C64::new(0.0, 0.0));
    for f in 0..basis.dim {
        let (h, chain, m) = basis.decode(f);
        if chain.contains(x) || chain.len() + 1 > basis.grid.n_max {
            continue;
        }
        let bigger = chain.union(&Chain::single(x)).unwrap();
        let pos = bigger.position(x).unwrap();
        // Insert the leg value at the position of x in the flat index.
        let lower = d.pow((bigger.len() - 1 - pos) as u32);
        for k in 0..d {
            let m_big = (m / lower) * lower * d + k * lower + m % lower;
            out[f * d + k] = v[basis.index_of(h, &bigger, m_big)];
        }
    }
    out
}

/// Zero the components of a legged vector that cannot be inserted at `x`:
/// chains already containing `x` or at the truncation limit.
fn project_insertable(g: &mut CVec, x: usize, basis: &HFockBasis) {
    let d = basis.grid.d;
    for f in 0..basis.dim {
        let (_, chain, _) = basis.decode(f);
        if chain.contains(x) || chain.len() + 1 > basis.grid.n_max {
            for k in 0..d {
                g[f * d + k] = C64::new(0.0, 0.0);
            }
        }
    }
}

fn winner(u: &CVec, v: &CVec, w: &[f64], dl: usize) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..u.len() {
        s += u[i].conj() * v[i] * C64::new(w[i / dl], 0.0);
    }
    s
}

/// Weak non-adapted Itô formula for `T_t = T_0 + i_0^t(D)`: residual of
/// the exact lattice identity for `‖T_t h‖² − ‖T_0 h‖²`, whose summand per
/// point is the continuum integrand plus an explicit second-order
/// correction in the point weight.
pub fn ito_check_weak(
    d_quad: &IntegrandQuadruple,
    t_process: &dyn Fn(f64) -> CMat,
    h: &FockVector,
    t: f64,
    basis: &HFockBasis,
) -> Result<f64, ItoError> {
    if basis.dim_h != 1 {
        return Err(ItoError::Integral(IntegralError::NeedsScalarH));
    }
    let grid = &basis.grid;
    let d = grid.d;
    let w = basis.weight_diag();
    let hv = basis.densify(h, 0);
    let norm2 = |v: &CVec, dl: usize| winner(v, v, &w, dl).re;
    let lhs = norm2(&(t_process(t) * &hv), 1) - norm2(&(t_process(0.0) * &hv), 1);
    let mut rhs = 0.0;
    for x in grid.points_before(t) {
        let dx = grid.weights[x];
        let th = t_process(grid.times[x]) * &hv;
        let hdot = point_derivative(&hv, x, basis);
        let u = &d_quad.d_pm[x] * &hv + &d_quad.d_cm[x] * &hdot;
        let mut g = &d_quad.d_pc[x] * &hv + &d_quad.d_cc[x] * &hdot;
        project_insertable(&mut g, x, basis);
        let a_th = point_derivative(&th, x, basis);
        let a_u = point_derivative(&u, x, basis);
        rhs += dx
            * (2.0 * winner(&th, &u, &w, 1).re
                + 2.0 * winner(&a_th, &g, &w, d).re
                + norm2(&g, d));
        // Lattice correction: second order in the point weight.
        rhs += dx * dx * (norm2(&u, 1) + 2.0 * winner(&a_u, &g, &w, d).re);
    }
    Ok((lhs - rhs).abs())
}

/// Whether a kernel is adapted at cut `t`: its Möbius integrant must be
/// supported strictly before `t` in every slot.
pub fn is_adapted(k: &KernelTable, t: f64) -> bool {
    let m = mobius_to_mm(k);
    m.entries.keys().all(|quad| {
        [&quad.pm, &quad.cm, &quad.pc, &quad.cc]
            .iter()
            .all(|c| c.0.iter().all(|&x| k.grid.times[x] < t))
    })
}

/// Strong Itô formula in the adapted (starred) form: residual of
/// `T_t⋆ T_t − T_0⋆ T_0 = i_0^t(G†G − T†T)`; rejects a process whose
/// kernel is not adapted at the cut.
pub fn ito_check_adapted(
    process: &dyn Fn(f64) -> KernelTable,
    t: f64,
    basis: &HFockBasis,
) -> Result<f64, ItoError> {
    if !is_adapted(&process(t), t) {
        return Err(ItoError::NotAdapted(t));
    }
    let t_t = epsilon_matrix(&process(t), basis)?;
    let t_0 = epsilon_matrix(&process(0.0), basis)?;
    let lhs =
        basis.weighted_adjoint(&t_t) * &t_t - basis.weighted_adjoint(&t_0) * &t_0;
    let mut q = IntegrandQuadruple::zero(basis);
    for x in basis.grid.points_before(t) {
        let dx = basis.grid.weights[x];
        let (tg, gg) = germs(process, x, basis)?;
        let gg_prod = germ_mul(&germ_dagger(&gg, basis), &gg, dx)?;
        let tt_prod = germ_mul(&germ_dagger(&tg, basis), &tg, dx)?;
        gg_prod.sub(&tt_prod).write_quadruple(&mut q, x);
    }
    let rhs = single_integral_matrix(&q, t, basis)?;
    Ok(crate::max_abs_diff(&lhs, &rhs))
}

/// Result of the functional (pseudo-Poisson) Itô computation for
/// `f(X) = X^m`: increment coefficients per algebra basis index, computed
/// by the recursion and by direct expansion in the unitalized product.
#[derive(Debug, Clone)]
pub struct FunctionalItoResult {
    pub recursion: Vec<CMat>,
    pub direct: Vec<CMat>,
    pub residual: f64,
}

/// Increment coefficients `D_j^{(m)}` of `d(X^m) = Σ_j D_j^{(m)} dΛ^j`
/// for an operator `X` with increments `D_j` in the tensor product of the
/// matrix algebra with the Itô algebra.
///
/// The recursion `D_j^{(n+1)} = X D_j^{(n)} + D_j X^n + Σ c_j^{ik} D_i
/// D_k^{(n)}` (the middle term is the unit-index contribution with
/// `D_u^{(n)} = X^n`) is compared against the direct expansion
/// `((𝐗+𝐃)^m − 𝐗^m)_j` in the unitalized algebra.
pub fn functional_ito_poly(
    x: &CMat,
    d_incr: &[CMat],
    alg: &ItoAlgebra,
    m: usize,
) -> Result<FunctionalItoResult, ItoError> {
    let n_alg = alg.dim;
    if d_incr.len() != n_alg {
        return Err(ItoError::ShapeMismatch);
    }
    let k = x.nrows();
    let zero = CMat::zeros(k, k);
    // Recursion.
    let mut x_pow = CMat::identity(k, k);
    let mut rec: Vec<CMat> = vec![zero.clone(); n_alg];
    for _ in 0..m {
        let mut next: Vec<CMat> = Vec::with_capacity(n_alg);
        for j in 0..n_alg {
            let mut v = x * &rec[j] + &d_incr[j] * &x_pow;
            for i in 0..n_alg {
                for kk in 0..n_alg {
                    let c = alg.c[j][i][kk];
                    if c.norm() != 0.0 {
                        v += &d_incr[i] * &rec[kk] * c;
                    }
                }
            }
            next.push(v);
        }
        rec = next;
        x_pow = x * x_pow;
    }
    // Direct expansion: elements of 𝒜⊗𝔟 as (unit component, algebra
    // components); the unit acts neutrally and algebra components multiply
    // through the structure constants.
    let mul_b = |a: &(CMat, Vec<CMat>), b: &(CMat, Vec<CMat>)| -> (CMat, Vec<CMat>) {
        let unit = &a.0 * &b.0;
        let mut comps: Vec<CMat> = (0..n_alg)
            .map(|j| &a.0 * &b.1[j] + &a.1[j] * &b.0)
            .collect();
        for j in 0..n_alg {
            for i in 0..n_alg {
                for kk in 0..n_alg {
                    let c = alg.c[j][i][kk];
                    if c.norm() != 0.0 {
                        comps[j] += &a.1[i] * &b.1[kk] * c;
                    }
                }
            }
        }
        (unit, comps)
    };
    let base = (x.clone(), d_incr.to_vec());
    let mut pow = (CMat::identity(k, k), vec![zero.clone(); n_alg]);
    for _ in 0..m {
        pow = mul_b(&pow, &base);
    }
    // (𝐗+𝐃)^m has unit component X^m, so the algebra components are the
    // increments directly.
    let direct = pow.1;
    let residual = rec
        .iter()
        .zip(&direct)
        .map(|(a, b)| crate::max_abs_diff(a, b))
        .fold(0.0, f64::max);
    Ok(FunctionalItoResult { recursion: rec, direct, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_fock::Grid;
    use crate::ito_algebra::hp_vacuum;
    use crate::kernel_calc::kernel_star;
    use crate::qs_integral::{counting_as_table, counting_integral, qs_derivatives, CountingIntegrand};
    use rand::Rng;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_germ(basis: &HFockBasis, r: &mut impl Rng) -> GermMatrix {
        let mut g = GermMatrix::zero(basis);
        let mut fill = |m: &mut CMat| {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] = c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
                }
            }
        };
        fill(&mut g.t);
        fill(&mut g.row);
        fill(&mut g.corner);
        fill(&mut g.mid);
        fill(&mut g.col);
        g
    }

    /// Random kernel-valued table integrand; `adapted` restricts kernel
    /// residuals of each table to points before every table point.
    fn random_counting(
        grid: &Arc<Grid>,
        n_entries: usize,
        adapted: bool,
        r: &mut impl Rng,
    ) -> CountingIntegrand {
        let mut m = CountingIntegrand::new(grid);
        let mut made = 0;
        while made < n_entries {
            let mut slots = [const { Vec::new() }; 8];
            for x in 0..grid.n {
                let k = r.gen_range(0..12);
                if k < 8 {
                    slots[k].push(x);
                }
            }
            let theta = ChainQuad::new(
                Chain::new(slots[0].clone()),
                Chain::new(slots[1].clone()),
                Chain::new(slots[2].clone()),
                Chain::new(slots[3].clone()),
            );
            let upsilon = ChainQuad::new(
                Chain::new(slots[4].clone()),
                Chain::new(slots[5].clone()),
                Chain::new(slots[6].clone()),
                Chain::new(slots[7].clone()),
            );
            if adapted {
                let t_max = [&theta.pm, &theta.cm, &theta.pc, &theta.cc]
                    .iter()
                    .filter_map(|ch| ch.max_time(grid))
                    .fold(f64::NEG_INFINITY, f64::max);
                if t_max == f64::NEG_INFINITY {
                    continue;
                }
                let ok = [&upsilon.pm, &upsilon.cm, &upsilon.pc, &upsilon.cc]
                    .iter()
                    .all(|ch| ch.0.iter().all(|&x| grid.times[x] < t_max));
                if !ok {
                    continue;
                }
            }
            let quad = match merged_ok(&theta, &upsilon) {
                Some(q) => q,
                None => continue,
            };
            let d = grid.d;
            let rows = d.pow((quad.cc.len() + quad.pc.len()) as u32);
            let cols = d.pow((quad.cm.len() + quad.cc.len()) as u32);
            let block =
                CMat::from_fn(rows, cols, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)));
            m.insert(theta, upsilon, block).unwrap();
            made += 1;
        }
        m
    }

    fn merged_ok(theta: &ChainQuad, upsilon: &ChainQuad) -> Option<ChainQuad> {
        let quad = ChainQuad::new(
            theta.pm.union(&upsilon.pm)?,
            theta.cm.union(&upsilon.cm)?,
            theta.pc.union(&upsilon.pc)?,
            theta.cc.union(&upsilon.cc)?,
        );
        quad.is_disjoint().then_some(quad)
    }

    fn counting_process(m: CountingIntegrand) -> impl Fn(f64) -> KernelTable + Clone {
        move |t: f64| counting_integral(&m, t).unwrap()
    }

    #[test]
    fn germ_algebra_identities() {
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let basis = HFockBasis::new(&grid, 1);
        let mut r = rng(60);
        let e = GermMatrix::identity(&basis);
        for _ in 0..5 {
            let a = random_germ(&basis, &mut r);
            let b = random_germ(&basis, &mut r);
            let dx = 0.3;
            // Identity germ is neutral.
            assert!(germ_mul(&e, &a, dx).unwrap().sub(&a).max_abs() <= 1e-14);
            assert!(germ_mul(&a, &e, dx).unwrap().sub(&a).max_abs() <= 1e-14);
            // Dagger is involutive.
            let add = germ_dagger(&germ_dagger(&a, &basis), &basis);
            assert!(add.sub(&a).max_abs() <= 1e-12);
            // (AB)† = B†A†.
            let lhs = germ_dagger(&germ_mul(&a, &b, dx).unwrap(), &basis);
            let rhs = germ_mul(&germ_dagger(&b, &basis), &germ_dagger(&a, &basis), dx).unwrap();
            assert!(lhs.sub(&rhs).max_abs() <= 1e-13);
            // Associativity of the corrected product.
            let p1 = germ_mul(&germ_mul(&a, &b, dx).unwrap(), &a, dx).unwrap();
            let p2 = germ_mul(&a, &germ_mul(&b, &a, dx).unwrap(), dx).unwrap();
            assert!(p1.sub(&p2).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_process_has_zero_derivatives() {
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let basis = HFockBasis::new(&grid, 1);
        let mut r = rng(61);
        let mut k = KernelTable::identity(&grid, 1);
        // Add a nontrivial constant part.
        let quad = ChainQuad::new(Chain::empty(), Chain::single(0), Chain::single(1), Chain::empty());
        let (rows, cols) = k.block_shape(&quad);
        k.insert(quad, CMat::from_fn(rows, cols, |_, _| c(r.gen_range(-1.0..1.0), 0.0))).unwrap();
        let process = move |_t: f64| k.clone();
        for x in 0..grid.n {
            let (t, g) = germs(&process, x, &basis).unwrap();
            assert!(g.sub(&t).max_abs() == 0.0);
        }
        assert!(ito_check_strong(&process, 1.0, &basis).unwrap() <= 1e-12);
    }

    #[test]
    fn germ_derivatives_match_integral_derivatives() {
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let basis = HFockBasis::new(&grid, 1);
        let mut r = rng(62);
        let m = random_counting(&grid, 6, false, &mut r);
        let table = counting_as_table(&m, &basis);
        let process = counting_process(m);
        let q_germ = process_derivatives(&process, &basis).unwrap();
        for x in 0..grid.n {
            let q_int = qs_derivatives(&table, x, &basis).unwrap();
            assert!(crate::max_abs_diff(&q_germ.d_pm[x], &q_int.d_pm[x]) <= 1e-12);
            assert!(crate::max_abs_diff(&q_germ.d_cm[x], &q_int.d_cm[x]) <= 1e-12);
            assert!(crate::max_abs_diff(&q_germ.d_pc[x], &q_int.d_pc[x]) <= 1e-12);
            assert!(crate::max_abs_diff(&q_germ.d_cc[x], &q_int.d_cc[x]) <= 1e-12);
        }
    }

    #[test]
    fn strong_ito_formula() {
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let basis = HFockBasis::new(&grid, 1);
        // Adapted Wiener-type process: creation and annihilation with unit
        // intensity at every point.
        let mut m = CountingIntegrand::new(&grid);
        for x in 0..grid.n {
            let theta_pc = atomic_quad(x, MeasureKind::Creation);
            let theta_cm = atomic_quad(x, MeasureKind::Annihilation);
            // Identity kernel residuals on the remaining points.
            for chain in grid.all_chains() {
                if chain.contains(x) {
                    continue;
                }
                let cc = chain.clone();
                let upsilon = ChainQuad::new(Chain::empty(), Chain::empty(), Chain::empty(), cc);
                let dl = grid.d.pow(chain.len() as u32);
                let eye_pc = CMat::identity(grid.d * dl, dl);
                let eye_cm = CMat::identity(dl, grid.d * dl);
                m.insert(theta_pc.clone(), upsilon.clone(), eye_pc).unwrap();
                m.insert(theta_cm.clone(), upsilon, eye_cm).unwrap();
            }
        }
        let process = counting_process(m);
        let res = ito_check_strong(&process, 1.0, &basis).unwrap();
        assert!(res <= 1e-11, "adapted residual {res}");
        // Non-adapted process: early table points with future-time kernel
        // residuals.
        for seed in 0..4 {
            let m = random_counting(&grid, 6, false, &mut rng(100 + seed));
            let process = counting_process(m);
            for t in [0.65, 1.0] {
                let res = ito_check_strong(&process, t, &basis).unwrap();
                assert!(res <= 1e-11, "non-adapted residual {res} at t = {t}");
            }
        }
    }

    #[test]
    fn weak_ito_formula() {
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let basis = HFockBasis::new(&grid, 1);
        let mut r = rng(64);
        let dim = basis.dim;
        let h = {
            let mut h = FockVector::zero(&grid);
            for ch in grid.all_chains() {
                let len = FockVector::tensor_len(&grid, &ch);
                h.set(ch, (0..len).map(|_| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect());
            }
            h
        };
        // Zero integrand: both sides vanish.
        let z = IntegrandQuadruple::zero(&basis);
        let t0 = CMat::from_fn(dim, dim, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)));
        let t0c = t0.clone();
        let const_process = move |_t: f64| t0c.clone();
        assert!(ito_check_weak(&z, &const_process, &h, 1.0, &basis).unwrap() <= 1e-12);
        // Scalar Wiener-type integrand: annihilation equals creation.
        let mut dw = IntegrandQuadruple::zero(&basis);
        for x in 0..grid.n {
            let b = CMat::from_fn(dim, dim, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)));
            dw.d_cm[x] = b.clone();
            dw.d_pc[x] = b;
        }
        let t0w = t0.clone();
        let dwc = dw.clone();
        let bw = basis.clone();
        let process_w = move |t: f64| &t0w + single_integral_matrix(&dwc, t, &bw).unwrap();
        assert!(ito_check_weak(&dw, &process_w, &h, 1.0, &basis).unwrap() <= 1e-11);
        // Random non-adapted integrands.
        for _ in 0..5 {
            let mut dq = IntegrandQuadruple::zero(&basis);
            for x in 0..grid.n {
                for m in [&mut dq.d_pm[x], &mut dq.d_cm[x], &mut dq.d_pc[x], &mut dq.d_cc[x]] {
                    for i in 0..m.nrows() {
                        for j in 0..m.ncols() {
                            m[(i, j)] = c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
                        }
                    }
                }
            }
            let t0x = CMat::from_fn(dim, dim, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)));
            let dqc = dq.clone();
            let bq = basis.clone();
            let process = move |t: f64| &t0x + single_integral_matrix(&dqc, t, &bq).unwrap();
            let res = ito_check_weak(&dq, &process, &h, 1.0, &basis).unwrap();
            assert!(res <= 1e-11, "weak residual {res}");
        }
    }

    #[test]
    fn strong_weak_consistency() {
        // ⟨h|(T_tT_t⋆ − T_0T_0⋆)h⟩ equals the weak evaluation for the
        // adjoint process with the daggered derivative quadruple.
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let basis = HFockBasis::new(&grid, 1);
        let mut r = rng(65);
        let m = random_counting(&grid, 5, false, &mut r);
        let process = counting_process(m);
        let h = {
            let mut h = FockVector::zero(&grid);
            for ch in grid.all_chains() {
                let len = FockVector::tensor_len(&grid, &ch);
                h.set(ch, (0..len).map(|_| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect());
            }
            h
        };
        // Daggered derivative quadruple of the adjoint process.
        let mut q = IntegrandQuadruple::zero(&basis);
        for x in 0..grid.n {
            let (tg, gg) = germs(&process, x, &basis).unwrap();
            germ_dagger(&gg.sub(&tg), &basis).write_quadruple(&mut q, x);
        }
        let b2 = basis.clone();
        let star_process = {
            let p2 = counting_process_clone(&process);
            move |t: f64| b2.weighted_adjoint(&epsilon_matrix(&p2(t), &b2).unwrap())
        };
        let t = 1.0;
        let res = ito_check_weak(&q, &star_process, &h, t, &basis).unwrap();
        assert!(res <= 1e-11, "consistency residual {res}");
        // Cross-check against the dense strong left side.
        let t_t = epsilon_matrix(&process(t), &basis).unwrap();
        let t_0 = epsilon_matrix(&process(0.0), &basis).unwrap();
        let lhs = &t_t * basis.weighted_adjoint(&t_t) - &t_0 * basis.weighted_adjoint(&t_0);
        let hv = basis.densify(&h, 0);
        let w = basis.weight_diag();
        let quad_form = winner(&hv, &(&lhs * &hv), &w, 1).re;
        let s_t = star_process(t) * &hv;
        let s_0 = star_process(0.0) * &hv;
        let weak_lhs = winner(&s_t, &s_t, &w, 1).re - winner(&s_0, &s_0, &w, 1).re;
        assert!((quad_form - weak_lhs).abs() <= 1e-11);
    }

    #[test]
    fn germ_product_bilinearity_identity() {
        // GG† − TT† = TD† + DT† + DD† for D = G − T, any bilinear product.
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let basis = HFockBasis::new(&grid, 1);
        let mut r = rng(66);
        let tg = random_germ(&basis, &mut r);
        let gg = random_germ(&basis, &mut r);
        let dg = gg.sub(&tg);
        let dx = 0.3;
        let lhs = germ_mul(&gg, &germ_dagger(&gg, &basis), dx)
            .unwrap()
            .sub(&germ_mul(&tg, &germ_dagger(&tg, &basis), dx).unwrap());
        let td = germ_mul(&tg, &germ_dagger(&dg, &basis), dx).unwrap();
        let dt = germ_mul(&dg, &germ_dagger(&tg, &basis), dx).unwrap();
        let dd = germ_mul(&dg, &germ_dagger(&dg, &basis), dx).unwrap();
        let mut rhs = td;
        rhs = GermMatrix {
            t: rhs.t + dt.t + dd.t,
            row: rhs.row + dt.row + dd.row,
            corner: rhs.corner + dt.corner + dd.corner,
            mid: rhs.mid + dt.mid + dd.mid,
            col: rhs.col + dt.col + dd.col,
        };
        assert!(lhs.sub(&rhs).max_abs() <= 1e-13);
    }

    #[test]
    fn adapted_check_and_detector() {
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let basis = HFockBasis::new(&grid, 1);
        let mut r = rng(67);
        // Vacuum process: residual zero.
        let id_process = |_t: f64| KernelTable::identity(&Grid::uniform(3, 0.3, 1, 3), 1);
        assert!(ito_check_adapted(&id_process, 1.0, &basis).unwrap() <= 1e-13);
        // Adapted random counting process.
        let m = random_counting(&grid, 6, true, &mut r);
        let process = counting_process(m);
        assert!(is_adapted(&process(1.0), 1.0));
        let res = ito_check_adapted(&process, 1.0, &basis).unwrap();
        assert!(res <= 1e-11, "adapted residual {res}");
        // Future-supported kernel: rejected.
        let mut k = KernelTable::identity(&grid, 1);
        let quad = ChainQuad::new(Chain::empty(), Chain::empty(), Chain::single(2), Chain::empty());
        let (rows, cols) = k.block_shape(&quad);
        k.insert(quad, CMat::from_fn(rows, cols, |_, _| c(1.0, 0.0))).unwrap();
        assert!(!is_adapted(&k, 0.5));
        let bad = move |_t: f64| k.clone();
        assert!(matches!(ito_check_adapted(&bad, 0.5, &basis), Err(ItoError::NotAdapted(_))));
        let _ = kernel_star(&KernelTable::identity(&grid, 1));
    }

    #[test]
    fn functional_ito_polynomial() {
        let mut r = rng(68);
        let rand2 = |r: &mut rand_chacha::ChaCha8Rng| {
            CMat::from_fn(2, 2, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
        };
        // m = 1 reproduces the increments.
        let hp = hp_vacuum();
        let x = rand2(&mut r);
        let d: Vec<CMat> = (0..hp.dim).map(|_| rand2(&mut r)).collect();
        let res = functional_ito_poly(&x, &d, &hp, 1).unwrap();
        for j in 0..hp.dim {
            assert!(crate::max_abs_diff(&res.recursion[j], &d[j]) <= 1e-14);
        }
        assert!(res.residual <= 1e-14);
        // Nilpotent time algebra: d(X^m) = Σ X^{m−n} D X^{n−1} dt.
        let time_alg = Arc::new(ItoAlgebra {
            dim: 1,
            c: vec![vec![vec![c(0.0, 0.0)]]],
            basis_names: vec!["d_t".into()],
            intensity: None,
        });
        let xt = rand2(&mut r);
        let dt = rand2(&mut r);
        let m = 3;
        let res = functional_ito_poly(&xt, &[dt.clone()], &time_alg, m).unwrap();
        let mut want = CMat::zeros(2, 2);
        for n in 1..=m {
            let mut left = CMat::identity(2, 2);
            for _ in 0..(m - n) {
                left = &left * &xt;
            }
            let mut right = CMat::identity(2, 2);
            for _ in 0..(n - 1) {
                right = &right * &xt;
            }
            want += left * &dt * right;
        }
        assert!(crate::max_abs_diff(&res.recursion[0], &want) <= 1e-12);
        assert!(res.residual <= 1e-12);
        // Vacuum algebra, m = 3: recursion against direct expansion.
        let x3 = rand2(&mut r);
        let d3: Vec<CMat> = (0..hp.dim).map(|_| rand2(&mut r)).collect();
        let res = functional_ito_poly(&x3, &d3, &hp, 3).unwrap();
        assert!(res.residual <= 1e-12, "residual {}", res.residual);
    }

    /// Helper: clone a counting process closure by re-evaluating it.
    fn counting_process_clone(
        p: &(impl Fn(f64) -> KernelTable + Clone),
    ) -> impl Fn(f64) -> KernelTable {
        p.clone()
    }
}
