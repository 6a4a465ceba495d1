//! Single and multiple quantum stochastic integrals on the discretized
//! chain space, including the non-adapted case.
//!
//! The four canonical integrator measures act on a Fock vector by scalar
//! integration (preservation), point insertion (creation), point derivative
//! (annihilation), and derivative-plus-insertion (exchange). The multiple
//! integral sums table integrands `B(ϑ)` over quadruples of chains before
//! the cut time; kernels intertwine with it through the representation ε.

use crate::chain_fock::{
    chain_weight, flat_index, multi_indices, Chain, FockVector, Grid, HFockBasis, WeightFunction,
};
use crate::kernel_calc::{ChainQuad, KernelTable};
use crate::{C64, CMat, CVec};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum IntegralError {
    #[error("grid mismatch")]
    GridMismatch,
    #[error("matrix shape {0:?} does not match (want {1:?})")]
    BadShape((usize, usize), (usize, usize)),
    #[error("scalar initial space required for vector-valued integrals")]
    NeedsScalarH,
}

/// The four canonical integrator kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    Preservation,
    Creation,
    Annihilation,
    Exchange,
}

/// Per-point integrand quadruple as dense matrices on the truncated
/// `H ⊗ F` space; creation/annihilation/exchange carry one `K_x` leg
/// (fastest index).
#[derive(Debug, Clone)]
pub struct IntegrandQuadruple {
    pub d_pm: Vec<CMat>,
    pub d_cm: Vec<CMat>,
    pub d_pc: Vec<CMat>,
    pub d_cc: Vec<CMat>,
}

impl IntegrandQuadruple {
    pub fn zero(basis: &HFockBasis) -> Self {
        let n = basis.grid.n;
        let d = basis.grid.d;
        let dim = basis.dim;
        IntegrandQuadruple {
            d_pm: vec![CMat::zeros(dim, dim); n],
            d_cm: vec![CMat::zeros(dim, dim * d); n],
            d_pc: vec![CMat::zeros(dim * d, dim); n],
            d_cc: vec![CMat::zeros(dim * d, dim * d); n],
        }
    }

    pub fn component(&self, kind: MeasureKind) -> &[CMat] {
        match kind {
            MeasureKind::Preservation => &self.d_pm,
            MeasureKind::Creation => &self.d_pc,
            MeasureKind::Annihilation => &self.d_cm,
            MeasureKind::Exchange => &self.d_cc,
        }
    }
}

fn check_component_shape(
    kind: MeasureKind,
    m: &CMat,
    basis: &HFockBasis,
) -> Result<(), IntegralError> {
    let dim = basis.dim;
    let d = basis.grid.d;
    let want = match kind {
        MeasureKind::Preservation => (dim, dim),
        MeasureKind::Creation => (dim * d, dim),
        MeasureKind::Annihilation => (dim, dim * d),
        MeasureKind::Exchange => (dim * d, dim * d),
    };
    if m.shape() != want {
        return Err(IntegralError::BadShape(m.shape(), want));
    }
    Ok(())
}

/// Dense matrix of the canonical integrator measure `Λ_ν^μ(D, Δ)`.
///
/// Preservation integrates `D_+^−(x)` over Δ; creation inserts the `K_x`
/// leg of `D_+^∘(x)` at `x ∈ Δ ∩ ϰ`; annihilation integrates `D_∘^−(x)`
/// against the point derivative; exchange does both without a weight.
pub fn lambda_measure_matrix(
    kind: MeasureKind,
    d_fn: &[CMat],
    delta: &[usize],
    basis: &HFockBasis,
) -> Result<CMat, IntegralError> {
    let grid = &basis.grid;
    if d_fn.len() != grid.n {
        return Err(IntegralError::GridMismatch);
    }
    for m in d_fn {
        check_component_shape(kind, m, basis)?;
    }
    let d = grid.d;
    let dim = basis.dim;
    let mut out = CMat::zeros(dim, dim);
    for &x in delta {
        let dx = &d_fn[x];
        let wx = C64::new(grid.weights[x], 0.0);
        match kind {
            MeasureKind::Preservation => {
                out += dx * wx;
            }
            MeasureKind::Creation => {
                // Row (f_out, k) lands at the chain of f_out with x created.
                for (row_pair, col, v) in nonzero_entries(dx) {
                    let f_out = row_pair / d;
                    let k = row_pair % d;
                    if let Some(r) = insert_point(basis, f_out, x, k) {
                        out[(r, col)] += v;
                    }
                }
            }
            MeasureKind::Annihilation => {
                for (row, col_pair, v) in nonzero_entries(dx) {
                    let f_in = col_pair / d;
                    let k = col_pair % d;
                    if let Some(c) = insert_point(basis, f_in, x, k) {
                        out[(row, c)] += wx * v;
                    }
                }
            }
            MeasureKind::Exchange => {
                for (row_pair, col_pair, v) in nonzero_entries(dx) {
                    let f_out = row_pair / d;
                    let k_out = row_pair % d;
                    let f_in = col_pair / d;
                    let k_in = col_pair % d;
                    if let (Some(r), Some(c)) = (
                        insert_point(basis, f_out, x, k_out),
                        insert_point(basis, f_in, x, k_in),
                    ) {
                        out[(r, c)] += v;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn nonzero_entries(m: &CMat) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
    (0..m.nrows()).flat_map(move |r| {
        (0..m.ncols()).filter_map(move |c| {
            let v = m[(r, c)];
            (v.norm() != 0.0).then_some((r, c, v))
        })
    })
}

/// Map a basis index (h, ϰ, m) to the index of (h, ϰ⊔{x}, m with `k` at x);
/// `None` when `x ∈ ϰ` (diagonal, dropped) or the chain outgrows `n_max`.
fn insert_point(basis: &HFockBasis, idx: usize, x: usize, k: usize) -> Option<usize> {
    let (h, chain, m) = basis.decode(idx);
    if chain.contains(x) || chain.len() + 1 > basis.grid.n_max {
        return None;
    }
    let d = basis.grid.d;
    let mut vals = decode_assignment(d, chain.len(), m);
    let bigger = chain.union(&Chain::single(x)).unwrap();
    let pos = bigger.position(x).unwrap();
    vals.insert(pos, k);
    Some(basis.index_of(h, &bigger, flat_index(d, &vals)))
}

fn decode_assignment(d: usize, len: usize, mut m: usize) -> Vec<usize> {
    let mut vals = vec![0usize; len];
    for i in (0..len).rev() {
        vals[i] = m % d;
        m /= d;
    }
    vals
}

/// Apply a dense operator matrix to a Fock vector (scalar initial space).
pub fn apply_matrix(m: &CMat, h: &FockVector, basis: &HFockBasis) -> Result<FockVector, IntegralError> {
    if basis.dim_h != 1 {
        return Err(IntegralError::NeedsScalarH);
    }
    let v = basis.densify(h, 0);
    let out = m * v;
    Ok(undensify(basis, &out))
}

fn undensify(basis: &HFockBasis, v: &CVec) -> FockVector {
    let grid = &basis.grid;
    let d = grid.d;
    let mut out = FockVector::zero(grid);
    for chain in &basis.chains {
        let len = d.pow(chain.len() as u32);
        let mut tensor = vec![C64::new(0.0, 0.0); len];
        let mut nonzero = false;
        for m in 0..len {
            let z = v[basis.index_of(0, chain, m)];
            if z.norm() != 0.0 {
                nonzero = true;
            }
            tensor[m] = z;
        }
        if nonzero {
            out.set(chain.clone(), tensor);
        }
    }
    out
}

/// Canonical measure applied to a Fock vector.
pub fn lambda_measure(
    kind: MeasureKind,
    d_fn: &[CMat],
    delta: &[usize],
    h: &FockVector,
    basis: &HFockBasis,
) -> Result<FockVector, IntegralError> {
    let m = lambda_measure_matrix(kind, d_fn, delta, basis)?;
    apply_matrix(&m, h, basis)
}

/// Dense matrix of the single generalized integral
/// `i_0^t(D) = Σ_{μν} Λ_ν^μ(D_ν^μ, X^t)`.
pub fn single_integral_matrix(
    d: &IntegrandQuadruple,
    t: f64,
    basis: &HFockBasis,
) -> Result<CMat, IntegralError> {
    let delta = basis.grid.points_before(t);
    let mut out = lambda_measure_matrix(MeasureKind::Preservation, &d.d_pm, &delta, basis)?;
    out += lambda_measure_matrix(MeasureKind::Creation, &d.d_pc, &delta, basis)?;
    out += lambda_measure_matrix(MeasureKind::Annihilation, &d.d_cm, &delta, basis)?;
    out += lambda_measure_matrix(MeasureKind::Exchange, &d.d_cc, &delta, basis)?;
    Ok(out)
}

/// Single generalized integral applied to a Fock vector.
pub fn single_integral(
    d: &IntegrandQuadruple,
    t: f64,
    h: &FockVector,
    basis: &HFockBasis,
) -> Result<FockVector, IntegralError> {
    let m = single_integral_matrix(d, t, basis)?;
    apply_matrix(&m, h, basis)
}

/// Table integrand: quadruple of chains → dense block
/// `(H⊗F)⊗K^⊗(cc⊔pc) ← (H⊗F)⊗K^⊗(cm⊔cc)` with the F index slowest and
/// grid-sorted legs fastest.
#[derive(Debug, Clone)]
pub struct TableIntegrand {
    pub grid: Arc<Grid>,
    pub entries: BTreeMap<ChainQuad, CMat>,
}

impl TableIntegrand {
    pub fn new(grid: &Arc<Grid>) -> Self {
        TableIntegrand { grid: grid.clone(), entries: BTreeMap::new() }
    }

    pub fn block_shape(&self, quad: &ChainQuad, basis: &HFockBasis) -> (usize, usize) {
        let d = self.grid.d;
        (
            basis.dim * d.pow((quad.cc.len() + quad.pc.len()) as u32),
            basis.dim * d.pow((quad.cm.len() + quad.cc.len()) as u32),
        )
    }

    pub fn insert(
        &mut self,
        quad: ChainQuad,
        block: CMat,
        basis: &HFockBasis,
    ) -> Result<(), IntegralError> {
        let want = self.block_shape(&quad, basis);
        if block.shape() != want {
            return Err(IntegralError::BadShape(block.shape(), want));
        }
        match self.entries.entry(quad) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(block);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = o.get() + block;
                o.insert(s);
            }
        }
        Ok(())
    }
}

/// One ι contribution of an entry: scatter the block into the dense
/// operator, inserting the `cc⊔pc` legs into the output chain and the
/// `cm⊔cc` legs into the input chain, with weight `w(pm)w(cm)`. An
/// optional point `x` of the table is exposed as an external `K_x` leg
/// instead of being inserted (used for quantum-stochastic derivatives).
fn scatter_entry(
    out: &mut CMat,
    quad: &ChainQuad,
    block: &CMat,
    basis: &HFockBasis,
    exposed: Option<(usize, MeasureKind)>,
) {
    let grid = &basis.grid;
    let d = grid.d;
    let out_legs = quad.out_chain();
    let in_legs = quad.in_chain();
    let dl_out = d.pow(out_legs.len() as u32);
    let dl_in = d.pow(in_legs.len() as u32);
    let (x_row, x_col, w_skip_x) = match exposed {
        None => (None, None, None),
        Some((x, MeasureKind::Preservation)) => (None, None, Some(x)),
        Some((x, MeasureKind::Creation)) => (Some(x), None, None),
        Some((x, MeasureKind::Annihilation)) => (None, Some(x), Some(x)),
        Some((x, MeasureKind::Exchange)) => (Some(x), Some(x), None),
    };
    let mut w = chain_weight(&quad.pm, grid) * chain_weight(&quad.cm, grid);
    if let Some(x) = w_skip_x {
        if quad.pm.contains(x) || quad.cm.contains(x) {
            w /= grid.weights[x];
        }
    }
    let w = C64::new(w, 0.0);
    // Enumerate (residual chain, leg values) on each side.
    let row_targets = side_targets(basis, &out_legs, x_row);
    let col_targets = side_targets(basis, &in_legs, x_col);
    for (b_row_legs, f_row_extra, rows) in &row_targets {
        for (b_col_legs, f_col_extra, cols) in &col_targets {
            for (f_out, final_row) in rows {
                for (f_in, final_col) in cols {
                    let v = block[(f_out * dl_out + b_row_legs, f_in * dl_in + b_col_legs)];
                    if v.norm() == 0.0 {
                        continue;
                    }
                    let r = final_row * f_row_extra.0 + f_row_extra.1;
                    let c = final_col * f_col_extra.0 + f_col_extra.1;
                    out[(r, c)] += w * v;
                }
            }
        }
    }
}

type SideTarget = (usize, (usize, usize), Vec<(usize, usize)>);

/// For one side of a table entry: every assignment of the legs, paired with
/// the list of (block F index, final dense F index) for every residual
/// chain, plus the stride/offset of an exposed leg.
fn side_targets(basis: &HFockBasis, legs: &Chain, exposed: Option<usize>) -> Vec<SideTarget> {
    let grid = &basis.grid;
    let d = grid.d;
    let mut out = Vec::new();
    let inserted: Chain = match exposed {
        Some(x) => legs.minus(&Chain::single(x)),
        None => legs.clone(),
    };
    for leg_vals in multi_indices(d, legs.len()) {
        let b_legs = flat_index(d, &leg_vals);
        let exposed_val = exposed.map(|x| leg_vals[legs.position(x).unwrap()]);
        let mut pairs = Vec::new();
        for rho in grid.all_chains() {
            if !rho.is_disjoint(&inserted) {
                continue;
            }
            let merged = rho.union(&inserted).unwrap();
            if merged.len() > grid.n_max {
                continue;
            }
            for h in 0..basis.dim_h {
                for m in 0..d.pow(rho.len() as u32) {
                    let f_idx = basis.index_of(h, &rho, m);
                    let rho_vals = decode_assignment(d, rho.len(), m);
                    let mvals: Vec<usize> = merged
                        .0
                        .iter()
                        .map(|&p| {
                            if rho.contains(p) {
                                rho_vals[rho.position(p).unwrap()]
                            } else {
                                leg_vals[legs.position(p).unwrap()]
                            }
                        })
                        .collect();
                    let final_idx = basis.index_of(h, &merged, flat_index(d, &mvals));
                    pairs.push((f_idx, final_idx));
                }
            }
        }
        let extra = match exposed_val {
            Some(k) => (d, k),
            None => (1, 0),
        };
        out.push((b_legs, extra, pairs));
    }
    out
}

/// Dense matrix of the multiple generalized integral `ι_0^t(B)`: tables
/// with all points strictly before `t` contribute; the ∅ table acts as a
/// plain operator.
pub fn multiple_integral_matrix(
    b: &TableIntegrand,
    t: f64,
    basis: &HFockBasis,
) -> Result<CMat, IntegralError> {
    if *b.grid != *basis.grid {
        return Err(IntegralError::GridMismatch);
    }
    let grid = &basis.grid;
    let mut out = CMat::zeros(basis.dim, basis.dim);
    for (quad, block) in &b.entries {
        let before = |c: &Chain| c.0.iter().all(|&x| grid.times[x] < t);
        if !(before(&quad.pm) && before(&quad.cm) && before(&quad.pc) && before(&quad.cc)) {
            continue;
        }
        scatter_entry(&mut out, quad, block, basis, None);
    }
    Ok(out)
}

/// Multiple generalized integral applied to a Fock vector.
pub fn multiple_integral(
    b: &TableIntegrand,
    t: f64,
    h: &FockVector,
    basis: &HFockBasis,
) -> Result<FockVector, IntegralError> {
    let m = multiple_integral_matrix(b, t, basis)?;
    apply_matrix(&m, h, basis)
}

/// The ⋆-adjoint integrand: reflected table, weighted adjoint of the block
/// in the chain-space inner product (F weights only; legs are flat).
pub fn integrand_star(b: &TableIntegrand, basis: &HFockBasis) -> TableIntegrand {
    let grid = &b.grid;
    let d = grid.d;
    let mut out = TableIntegrand::new(grid);
    let w = basis.weight_diag();
    for (quad, block) in &b.entries {
        let dl_out = d.pow((quad.cc.len() + quad.pc.len()) as u32);
        let dl_in = d.pow((quad.cm.len() + quad.cc.len()) as u32);
        let adj = block.adjoint();
        // Scale F-part: rows by 1/w, cols by w (the legs carry no weight).
        let mut scaled = CMat::zeros(adj.nrows(), adj.ncols());
        for r in 0..adj.nrows() {
            let wf_out = w[r / dl_in];
            for c in 0..adj.ncols() {
                let wf_in = w[c / dl_out];
                scaled[(r, c)] = adj[(r, c)] * C64::new(wf_in / wf_out, 0.0);
            }
        }
        out.insert(quad.reflected(), scaled, basis).unwrap();
    }
    out
}

/// Quantum-stochastic derivatives `D_ν^μ(x) = ι_0^{t(x)}(Ḃ(𝐱_ν^μ))`: the
/// multiple integral of the table with an extra atomic point at `x`, the
/// `K_x` leg left exposed and the weight of `x` omitted (it is supplied by
/// the outer canonical measure).
pub fn qs_derivatives(
    b: &TableIntegrand,
    x: usize,
    basis: &HFockBasis,
) -> Result<IntegrandQuadruple, IntegralError> {
    if *b.grid != *basis.grid {
        return Err(IntegralError::GridMismatch);
    }
    let grid = &basis.grid;
    let t_x = grid.times[x];
    let mut out = IntegrandQuadruple::zero(basis);
    for (quad, block) in &b.entries {
        let slot = if quad.pm.contains(x) {
            MeasureKind::Preservation
        } else if quad.pc.contains(x) {
            MeasureKind::Creation
        } else if quad.cm.contains(x) {
            MeasureKind::Annihilation
        } else if quad.cc.contains(x) {
            MeasureKind::Exchange
        } else {
            continue;
        };
        // All other points of the table must lie strictly before t(x).
        let rest_before = [&quad.pm, &quad.cm, &quad.pc, &quad.cc]
            .iter()
            .all(|c| c.0.iter().all(|&p| p == x || grid.times[p] < t_x));
        if !rest_before {
            continue;
        }
        let target = match slot {
            MeasureKind::Preservation => &mut out.d_pm[x],
            MeasureKind::Creation => &mut out.d_pc[x],
            MeasureKind::Annihilation => &mut out.d_cm[x],
            MeasureKind::Exchange => &mut out.d_cc[x],
        };
        scatter_entry(target, quad, block, basis, Some((x, slot)));
    }
    Ok(out)
}

/// Kernel-valued table integrand for the multiple counting integral: table
/// ϑ → (residual quadruple υ → block with the merged legs of ϑ⊔υ).
#[derive(Debug, Clone)]
pub struct CountingIntegrand {
    pub grid: Arc<Grid>,
    pub entries: BTreeMap<ChainQuad, BTreeMap<ChainQuad, CMat>>,
}

impl CountingIntegrand {
    pub fn new(grid: &Arc<Grid>) -> Self {
        CountingIntegrand { grid: grid.clone(), entries: BTreeMap::new() }
    }

    fn merged(theta: &ChainQuad, upsilon: &ChainQuad) -> Option<ChainQuad> {
        let quad = ChainQuad::new(
            theta.pm.union(&upsilon.pm)?,
            theta.cm.union(&upsilon.cm)?,
            theta.pc.union(&upsilon.pc)?,
            theta.cc.union(&upsilon.cc)?,
        );
        quad.is_disjoint().then_some(quad)
    }

    pub fn insert(
        &mut self,
        theta: ChainQuad,
        upsilon: ChainQuad,
        block: CMat,
    ) -> Result<(), IntegralError> {
        let quad = Self::merged(&theta, &upsilon)
            .ok_or(IntegralError::BadShape((0, 0), (0, 0)))?;
        let d = self.grid.d;
        let want = (
            d.pow((quad.cc.len() + quad.pc.len()) as u32),
            d.pow((quad.cm.len() + quad.cc.len()) as u32),
        );
        if block.shape() != want {
            return Err(IntegralError::BadShape(block.shape(), want));
        }
        *self
            .entries
            .entry(theta)
            .or_default()
            .entry(upsilon)
            .or_insert_with(|| CMat::zeros(want.0, want.1)) += block;
        Ok(())
    }
}

/// Multiple counting integral `ν_0^t(M)(ω) = Σ_{ϑ⊆ω^t} M(ϑ, ω∖ϑ)`: merge
/// each table with each residual quadruple of its kernel.
pub fn counting_integral(m: &CountingIntegrand, t: f64) -> Result<KernelTable, IntegralError> {
    let grid = &m.grid;
    let mut out = KernelTable::new(grid, 1);
    for (theta, kernel) in &m.entries {
        let before = [&theta.pm, &theta.cm, &theta.pc, &theta.cc]
            .iter()
            .all(|c| c.0.iter().all(|&x| grid.times[x] < t));
        if !before {
            continue;
        }
        for (upsilon, block) in kernel {
            let quad = match CountingIntegrand::merged(theta, upsilon) {
                Some(q) => q,
                None => continue,
            };
            out.insert(quad, block.clone()).map_err(|_| IntegralError::GridMismatch)?;
        }
    }
    Ok(out)
}

/// The vacuum-adapted operator `B(ϑ) = ε(M(ϑ))` with the ϑ legs exposed:
/// the υ slots are summed as in ε (exact output chain `υ_cc⊔υ_pc`, weight
/// `w(υ_pm)w(υ_cm)`), the ϑ legs stay external.
pub fn epsilon_with_legs(
    m_theta: &BTreeMap<ChainQuad, CMat>,
    theta: &ChainQuad,
    basis: &HFockBasis,
) -> CMat {
    let grid = &basis.grid;
    let d = grid.d;
    let t_out = theta.out_chain();
    let t_in = theta.in_chain();
    let dl_t_out = d.pow(t_out.len() as u32);
    let dl_t_in = d.pow(t_in.len() as u32);
    let mut out = CMat::zeros(basis.dim * dl_t_out, basis.dim * dl_t_in);
    for (upsilon, block) in m_theta {
        let quad = match CountingIntegrand::merged(theta, upsilon) {
            Some(q) => q,
            None => continue,
        };
        let u_out = upsilon.out_chain();
        let u_in = upsilon.in_chain();
        if u_out.len() > grid.n_max || u_in.len() > grid.n_max {
            continue;
        }
        let w = C64::new(
            chain_weight(&upsilon.pm, grid) * chain_weight(&upsilon.cm, grid),
            0.0,
        );
        let m_out = quad.out_chain();
        let m_in = quad.in_chain();
        for mv_out in multi_indices(d, m_out.len()) {
            // Split the merged out-legs into the Fock chain part (υ) and the
            // exposed ϑ part.
            let u_vals: Vec<usize> =
                u_out.0.iter().map(|&p| mv_out[m_out.position(p).unwrap()]).collect();
            let t_vals: Vec<usize> =
                t_out.0.iter().map(|&p| mv_out[m_out.position(p).unwrap()]).collect();
            for mv_in in multi_indices(d, m_in.len()) {
                let u_vals_in: Vec<usize> =
                    u_in.0.iter().map(|&p| mv_in[m_in.position(p).unwrap()]).collect();
                let t_vals_in: Vec<usize> =
                    t_in.0.iter().map(|&p| mv_in[m_in.position(p).unwrap()]).collect();
                let v = block[(flat_index(d, &mv_out), flat_index(d, &mv_in))];
                if v.norm() == 0.0 {
                    continue;
                }
                for h in 0..basis.dim_h {
                    let r_f = basis.index_of(h, &u_out, flat_index(d, &u_vals));
                    let c_f = basis.index_of(h, &u_in, flat_index(d, &u_vals_in));
                    out[(r_f * dl_t_out + flat_index(d, &t_vals),
                        c_f * dl_t_in + flat_index(d, &t_vals_in))] += w * v;
                }
            }
        }
    }
    out
}

/// `ε∘ν_0^t` realized on the ι side: the table integrand whose blocks are
/// `ε(M(ϑ))` with exposed ϑ legs.
pub fn counting_as_table(m: &CountingIntegrand, basis: &HFockBasis) -> TableIntegrand {
    let mut out = TableIntegrand::new(&m.grid);
    for (theta, kernel) in &m.entries {
        let block = epsilon_with_legs(kernel, theta, basis);
        out.insert(theta.clone(), block, basis).unwrap();
    }
    out
}

/// Operator norm of a block with legs, weighted `F(p_in)⊗K^⊗ → F(p_out)⊗K^⊗`.
fn op_norm_with_legs(
    m: &CMat,
    p_out: &WeightFunction,
    p_in: &WeightFunction,
    legs_out: usize,
    legs_in: usize,
    basis: &HFockBasis,
) -> f64 {
    let w = basis.weight_diag();
    let sqrt_w = |i: usize, p: &WeightFunction, legs: usize| -> f64 {
        let f = i / legs;
        let chain = basis.decode(f).1;
        (w[f] * p.of_chain(&chain)).sqrt()
    };
    let mut scaled = m.clone();
    for r in 0..m.nrows() {
        let sr = sqrt_w(r, p_out, legs_out.max(1));
        for c in 0..m.ncols() {
            let sc = sqrt_w(c, p_in, legs_in.max(1));
            scaled[(r, c)] = m[(r, c)] * C64::new(sr / sc, 0.0);
        }
    }
    scaled
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// The scalar data of the integrability norm estimates.
#[derive(Debug, Clone)]
pub struct NormReport {
    /// `‖B‖_{p,t}^s(r)` (or the four-term sum for a quadruple).
    pub bound: f64,
    /// Measured `‖ι_0^t(B)‖_q` as a weighted dense operator norm with
    /// `q = 1/r + p + 1/s`.
    pub measured: f64,
}

/// Evaluate `‖B‖_{p,t}^s(r)` and compare with the measured weighted
/// operator norm of the dense integral.
pub fn norm_estimate_table(
    b: &TableIntegrand,
    p: &WeightFunction,
    r: &[f64],
    s: &[f64],
    t: f64,
    basis: &HFockBasis,
) -> Result<NormReport, IntegralError> {
    let grid = &basis.grid;
    let d = grid.d;
    let p_inv = p.recip();
    // Group by (pm, cm, pc); sup over cc of s(cc)·‖B(ϑ)‖_p.
    let mut groups: BTreeMap<(Chain, Chain, Chain), f64> = BTreeMap::new();
    for (quad, block) in &b.entries {
        let before = [&quad.pm, &quad.cm, &quad.pc, &quad.cc]
            .iter()
            .all(|c| c.0.iter().all(|&x| grid.times[x] < t));
        if !before {
            continue;
        }
        let s_cc: f64 = quad.cc.0.iter().map(|&x| s[x]).product();
        let legs_out = d.pow((quad.cc.len() + quad.pc.len()) as u32);
        let legs_in = d.pow((quad.cm.len() + quad.cc.len()) as u32);
        let norm_p = op_norm_with_legs(block, &p_inv, p, legs_out, legs_in, basis);
        let key = (quad.pm.clone(), quad.cm.clone(), quad.pc.clone());
        let e = groups.entry(key).or_insert(0.0);
        *e = e.max(s_cc * norm_p);
    }
    // Σ_pm w(pm) ( Σ_{cm,pc} w(cm)w(pc) r(cm⊔pc) sup² )^{1/2}.
    let mut by_pm: BTreeMap<Chain, f64> = BTreeMap::new();
    for ((pm, cm, pc), sup) in &groups {
        let r_prod: f64 = cm.0.iter().chain(&pc.0).map(|&x| r[x]).product();
        let w = chain_weight(cm, grid) * chain_weight(pc, grid);
        *by_pm.entry(pm.clone()).or_insert(0.0) += w * r_prod * sup * sup;
    }
    let mut bound = 0.0;
    for (pm, inner) in &by_pm {
        bound += chain_weight(pm, grid) * inner.sqrt();
    }
    // Measured norm with q = 1/r + p + 1/s.
    let q = WeightFunction::new(
        (0..grid.n).map(|x| 1.0 / r[x] + p.values[x] + 1.0 / s[x]).collect(),
    );
    let m = multiple_integral_matrix(b, t, basis)?;
    let measured = basis.weighted_op_norm(&m, &q.recip(), &q);
    Ok(NormReport { bound, measured })
}

/// Evaluate the quadruple norms `‖D_+^−‖^{(1)} + ‖D_+^∘‖^{(2)}(r) +
/// ‖D_∘^−‖^{(2)}(r) + ‖D_∘^∘‖^{(∞)}(s)` and the measured single-integral
/// norm.
pub fn norm_estimate_quadruple(
    dq: &IntegrandQuadruple,
    p: &WeightFunction,
    r: &[f64],
    s: &[f64],
    t: f64,
    basis: &HFockBasis,
) -> Result<NormReport, IntegralError> {
    let grid = &basis.grid;
    let d = grid.d;
    let p_inv = p.recip();
    let delta = grid.points_before(t);
    let mut n1 = 0.0;
    let mut n2p = 0.0;
    let mut n2m = 0.0;
    let mut ninf: f64 = 0.0;
    for &x in &delta {
        let dx = grid.weights[x];
        n1 += dx * op_norm_with_legs(&dq.d_pm[x], &p_inv, p, 1, 1, basis);
        let npc = op_norm_with_legs(&dq.d_pc[x], &p_inv, p, d, 1, basis);
        let ncm = op_norm_with_legs(&dq.d_cm[x], &p_inv, p, 1, d, basis);
        n2p += dx * npc * npc * r[x];
        n2m += dx * ncm * ncm * r[x];
        ninf = ninf.max(s[x] * op_norm_with_legs(&dq.d_cc[x], &p_inv, p, d, d, basis));
    }
    let bound = n1 + n2p.sqrt() + n2m.sqrt() + ninf;
    let q = WeightFunction::new(
        (0..grid.n).map(|x| 1.0 / r[x] + p.values[x] + 1.0 / s[x]).collect(),
    );
    let m = single_integral_matrix(dq, t, basis)?;
    let measured = basis.weighted_op_norm(&m, &q.recip(), &q);
    Ok(NormReport { bound, measured })
}
