//! Operator-kernel calculus on the discretized chain space.
//!
//! An operator on `H ⊗ F` is represented by a sparse table of blocks
//! indexed by quadruples of pairwise-disjoint chains
//! `ω = (ω_+^−, ω_∘^−, ω_+^∘, ω_∘^∘)` (scalar, annihilation, creation,
//! exchange slots). The representation ε maps tables to dense matrices, is a
//! ⋆-homomorphism for the kernel involution and product, and factors through
//! a pseudo-Fock dilation by second-quantized triangular operators.

use crate::chain_fock::{
    chain_weight, exp_vector, flat_index, multi_indices, Chain, FockVector, Grid, HFockBasis,
};
use crate::gns_rep::TriangularOp;
use crate::{C64, CMat};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("grid mismatch")]
    GridMismatch,
    #[error("initial-space dimension mismatch")]
    DimMismatch,
    #[error("chains in a kernel quadruple must be pairwise disjoint")]
    NotDisjoint,
    #[error("block shape {0:?} does not match the quadruple (want {1:?})")]
    BadBlockShape((usize, usize), (usize, usize)),
    #[error("size guard exceeded: {0}")]
    SizeGuard(String),
}

/// Quadruple of pairwise-disjoint chains indexing one kernel block.
///
/// `pm` is the scalar slot, `cm` annihilation, `pc` creation, `cc` exchange.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChainQuad {
    pub pm: Chain,
    pub cm: Chain,
    pub pc: Chain,
    pub cc: Chain,
}

impl ChainQuad {
    pub fn new(pm: Chain, cm: Chain, pc: Chain, cc: Chain) -> Self {
        ChainQuad { pm, cm, pc, cc }
    }

    pub fn vacuum() -> Self {
        ChainQuad::new(Chain::empty(), Chain::empty(), Chain::empty(), Chain::empty())
    }

    pub fn is_disjoint(&self) -> bool {
        self.pm.is_disjoint(&self.cm)
            && self.pm.is_disjoint(&self.pc)
            && self.pm.is_disjoint(&self.cc)
            && self.cm.is_disjoint(&self.pc)
            && self.cm.is_disjoint(&self.cc)
            && self.pc.is_disjoint(&self.cc)
    }

    /// Output legs `cc ⊔ pc` in grid order.
    pub fn out_chain(&self) -> Chain {
        self.cc.union(&self.pc).expect("disjoint")
    }

    /// Input legs `cm ⊔ cc` in grid order.
    pub fn in_chain(&self) -> Chain {
        self.cm.union(&self.cc).expect("disjoint")
    }

    /// Index reflection of the ⋆-adjoint: swaps annihilation and creation.
    pub fn reflected(&self) -> ChainQuad {
        ChainQuad::new(self.pm.clone(), self.pc.clone(), self.cm.clone(), self.cc.clone())
    }
}

/// Sparse kernel table: quadruple of chains → dense operator block
/// `H ⊗ K^⊗(in legs) → H ⊗ K^⊗(out legs)`.
///
/// Immutable after construction; products and ε are pure functions.
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub grid: Arc<Grid>,
    pub dim_h: usize,
    pub entries: BTreeMap<ChainQuad, CMat>,
}

impl KernelTable {
    pub fn new(grid: &Arc<Grid>, dim_h: usize) -> Self {
        KernelTable { grid: grid.clone(), dim_h, entries: BTreeMap::new() }
    }

    pub fn block_shape(&self, quad: &ChainQuad) -> (usize, usize) {
        let d = self.grid.d;
        (
            self.dim_h * d.pow((quad.cc.len() + quad.pc.len()) as u32),
            self.dim_h * d.pow((quad.cm.len() + quad.cc.len()) as u32),
        )
    }

    /// Add a block to the table (accumulating if the slot already exists).
    pub fn insert(&mut self, quad: ChainQuad, block: CMat) -> Result<(), KernelError> {
        if !quad.is_disjoint() {
            return Err(KernelError::NotDisjoint);
        }
        let want = self.block_shape(&quad);
        if block.shape() != want {
            return Err(KernelError::BadBlockShape(block.shape(), want));
        }
        match self.entries.entry(quad) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(block);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = o.get() + block;
                o.insert(sum);
            }
        }
        Ok(())
    }

    /// The unit kernel: identity blocks on every pure-exchange quadruple.
    pub fn identity(grid: &Arc<Grid>, dim_h: usize) -> Self {
        let mut k = KernelTable::new(grid, dim_h);
        for cc in grid.all_chains() {
            let n = dim_h * grid.d.pow(cc.len() as u32);
            k.insert(
                ChainQuad::new(Chain::empty(), Chain::empty(), Chain::empty(), cc),
                CMat::identity(n, n),
            )
            .unwrap();
        }
        k
    }

    pub fn scale(&self, z: C64) -> KernelTable {
        KernelTable {
            grid: self.grid.clone(),
            dim_h: self.dim_h,
            entries: self.entries.iter().map(|(q, b)| (q.clone(), b * z)).collect(),
        }
    }

    pub fn add(&self, other: &KernelTable) -> Result<KernelTable, KernelError> {
        if !Arc::ptr_eq(&self.grid, &other.grid) && *self.grid != *other.grid {
            return Err(KernelError::GridMismatch);
        }
        if self.dim_h != other.dim_h {
            return Err(KernelError::DimMismatch);
        }
        let mut out = self.clone();
        for (q, b) in &other.entries {
            out.insert(q.clone(), b.clone())?;
        }
        Ok(out)
    }

    /// Largest absolute entry over all blocks of the difference.
    pub fn max_abs_diff(&self, other: &KernelTable) -> f64 {
        let mut keys: Vec<&ChainQuad> = self.entries.keys().collect();
        keys.extend(other.entries.keys());
        keys.sort();
        keys.dedup();
        let mut m: f64 = 0.0;
        for q in keys {
            let shape = self.block_shape(q);
            let zero = CMat::zeros(shape.0, shape.1);
            let a = self.entries.get(q).unwrap_or(&zero);
            let b = other.entries.get(q).unwrap_or(&zero);
            m = m.max(crate::max_abs_diff(a, b));
        }
        m
    }
}

/// Sparse action of ε on a Fock vector (scalar initial space only).
///
/// `[εh](ϰ) = Σ_{cc⊔pc=ϰ} Σ_{cm,pm} w(cm)w(pm)·K(ω)·h(cc⊔cm)`,
/// diagonal-free: the output chain is exactly `cc ⊔ pc`, the input exactly
/// `cc ⊔ cm`.
pub fn epsilon(k: &KernelTable, h: &FockVector) -> Result<FockVector, KernelError> {
    if *k.grid != *h.grid {
        return Err(KernelError::GridMismatch);
    }
    if k.dim_h != 1 {
        return Err(KernelError::DimMismatch);
    }
    let grid = &k.grid;
    let d = grid.d;
    let mut out = FockVector::zero(grid);
    let mut acc: BTreeMap<Chain, Vec<C64>> = BTreeMap::new();
    for (quad, block) in &k.entries {
        let out_chain = quad.out_chain();
        let in_chain = quad.in_chain();
        if out_chain.len() > grid.n_max || in_chain.len() > grid.n_max {
            continue;
        }
        let hin = match h.get(&in_chain) {
            Some(t) => t,
            None => continue,
        };
        let w = C64::new(
            chain_weight(&quad.cm, grid) * chain_weight(&quad.pm, grid),
            0.0,
        );
        let rows = d.pow(out_chain.len() as u32);
        let cols = d.pow(in_chain.len() as u32);
        let t = acc
            .entry(out_chain.clone())
            .or_insert_with(|| vec![C64::new(0.0, 0.0); rows]);
        for r in 0..rows {
            let mut s = C64::new(0.0, 0.0);
            for c in 0..cols {
                s += block[(r, c)] * hin[c];
            }
            t[r] += w * s;
        }
    }
    for (chain, tensor) in acc {
        if tensor.iter().any(|z| z.norm() != 0.0) {
            out.set(chain, tensor);
        }
    }
    Ok(out)
}

/// Dense matrix of ε(K) on an explicit `H ⊗ F` basis (the oracle form).
pub fn epsilon_matrix(k: &KernelTable, basis: &HFockBasis) -> Result<CMat, KernelError> {
    if *k.grid != *basis.grid {
        return Err(KernelError::GridMismatch);
    }
    if k.dim_h != basis.dim_h {
        return Err(KernelError::DimMismatch);
    }
    let grid = &k.grid;
    let d = grid.d;
    let mut m = CMat::zeros(basis.dim, basis.dim);
    for (quad, block) in &k.entries {
        let out_chain = quad.out_chain();
        let in_chain = quad.in_chain();
        if out_chain.len() > grid.n_max || in_chain.len() > grid.n_max {
            continue;
        }
        let w = C64::new(
            chain_weight(&quad.cm, grid) * chain_weight(&quad.pm, grid),
            0.0,
        );
        let dl_out = d.pow(out_chain.len() as u32);
        let dl_in = d.pow(in_chain.len() as u32);
        for h_out in 0..k.dim_h {
            for m_out in 0..dl_out {
                let row = basis.index_of(h_out, &out_chain, m_out);
                for h_in in 0..k.dim_h {
                    for m_in in 0..dl_in {
                        let col = basis.index_of(h_in, &in_chain, m_in);
                        m[(row, col)] +=
                            w * block[(h_out * dl_out + m_out, h_in * dl_in + m_in)];
                    }
                }
            }
        }
    }
    Ok(m)
}

/// The ⋆-adjoint kernel: `K⋆(ω) = K(ω′)*` under the index reflection that
/// swaps annihilation and creation slots. With sorted-union leg ordering the
/// block adjoint lands exactly on the reflected leg layout.
pub fn kernel_star(k: &KernelTable) -> KernelTable {
    KernelTable {
        grid: k.grid.clone(),
        dim_h: k.dim_h,
        entries: k
            .entries
            .iter()
            .map(|(q, b)| (q.reflected(), b.adjoint()))
            .collect(),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Pm,
    Cm,
    Pc,
    Cc,
}

fn slot_of(q: &ChainQuad, x: usize) -> Option<Slot> {
    if q.pm.contains(x) {
        Some(Slot::Pm)
    } else if q.cm.contains(x) {
        Some(Slot::Cm)
    } else if q.pc.contains(x) {
        Some(Slot::Pc)
    } else if q.cc.contains(x) {
        Some(Slot::Cc)
    } else {
        None
    }
}

/// Kernel product with `ε(kernel_mul(K, L)) = ε(K)·ε(L)` exactly.
///
/// Derived by composing the ε actions entry by entry. An entry A of K
/// (applied second) reads only the chain `A_cm⊔A_cc` and an entry B of L
/// (applied first) writes only `B_pc⊔B_cc`, so the pair contributes iff
/// those chains coincide; the block contraction is then a plain matrix
/// product (leg orderings agree on the shared chain). Each shared point
/// lands in one slot of the output quadruple by its role pair, and every
/// doubly-weighted or weight-free coincidence contributes one explicit
/// point-weight factor to the block so that ε applies the correct total
/// weight to the product entry.
pub fn kernel_mul(k: &KernelTable, l: &KernelTable) -> Result<KernelTable, KernelError> {
    if *k.grid != *l.grid {
        return Err(KernelError::GridMismatch);
    }
    if k.dim_h != l.dim_h {
        return Err(KernelError::DimMismatch);
    }
    let grid = &k.grid;
    let mut out = KernelTable::new(grid, k.dim_h);
    for (qa, a_block) in &k.entries {
        let mid = qa.in_chain();
        for (qb, b_block) in &l.entries {
            if qb.out_chain() != mid {
                continue;
            }
            let mut all_pts: Vec<usize> = Vec::new();
            for ch in [&qa.pm, &qa.cm, &qa.pc, &qa.cc, &qb.pm, &qb.cm, &qb.pc, &qb.cc] {
                all_pts.extend(ch.0.iter().cloned());
            }
            all_pts.sort_unstable();
            all_pts.dedup();
            let mut n_pm = Vec::new();
            let mut n_cm = Vec::new();
            let mut n_pc = Vec::new();
            let mut n_cc = Vec::new();
            // Coincidences whose weight ε will not supply on the product
            // entry: the contracted internal points and every scalar or
            // creation slot of A meeting a scalar or annihilation slot of B.
            let mut extra_w = 1.0;
            for &x in &all_pts {
                match (slot_of(qa, x), slot_of(qb, x)) {
                    // Internal line: B creates, A annihilates.
                    (Some(Slot::Cm), Some(Slot::Pc)) => extra_w *= grid.weights[x],
                    (Some(Slot::Cm), Some(Slot::Cc)) => n_cm.push(x),
                    (Some(Slot::Cc), Some(Slot::Pc)) => n_pc.push(x),
                    (Some(Slot::Cc), Some(Slot::Cc)) => n_cc.push(x),
                    (Some(Slot::Pm), Some(Slot::Pm)) => {
                        n_pm.push(x);
                        extra_w *= grid.weights[x];
                    }
                    (Some(Slot::Pm), Some(Slot::Cm)) => {
                        n_cm.push(x);
                        extra_w *= grid.weights[x];
                    }
                    (Some(Slot::Pc), Some(Slot::Pm)) => {
                        n_pc.push(x);
                        extra_w *= grid.weights[x];
                    }
                    // A creates what B read from the input: an exchange
                    // entry whose block is rank one in this leg.
                    (Some(Slot::Pc), Some(Slot::Cm)) => {
                        n_cc.push(x);
                        extra_w *= grid.weights[x];
                    }
                    (Some(Slot::Pm), None) | (None, Some(Slot::Pm)) => n_pm.push(x),
                    (Some(Slot::Cm), None) | (None, Some(Slot::Cm)) => n_cm.push(x),
                    (Some(Slot::Pc), None) | (None, Some(Slot::Pc)) => n_pc.push(x),
                    (Some(Slot::Cc), None) | (None, Some(Slot::Cc)) => n_cc.push(x),
                    // Remaining combinations contradict μ-matching or
                    // disjointness within one quadruple.
                    (Some(_), Some(_)) | (None, None) => unreachable!(),
                }
            }
            let quad = ChainQuad::new(
                Chain::new(n_pm),
                Chain::new(n_cm),
                Chain::new(n_pc),
                Chain::new(n_cc),
            );
            // Output legs are exactly A's output legs; input legs exactly
            // B's input legs; the shared chain is contracted by the matrix
            // product (orderings agree: all are grid-sorted).
            debug_assert_eq!(quad.out_chain(), qa.out_chain());
            debug_assert_eq!(quad.in_chain(), qb.in_chain());
            let block = a_block * b_block * C64::new(extra_w, 0.0);
            out.insert(quad, block)?;
        }
    }
    out.entries.retain(|_, b| crate::max_abs(b) != 0.0);
    Ok(out)
}

/// Maassen-Meyer form of a kernel (same storage, exchange slots are the
/// "essential" ones, identity padding removed).
pub type MKernel = KernelTable;

/// Pad a block with `sign·I` on extra exchange legs `ρ = cc_big ∖ cc_small`.
fn pad_block(
    block: &CMat,
    dim_h: usize,
    d: usize,
    small: &ChainQuad,
    big: &ChainQuad,
    sign: f64,
) -> CMat {
    let rho = big.cc.minus(&small.cc);
    let rows_s = small.out_chain();
    let cols_s = small.in_chain();
    let rows_b = big.out_chain();
    let cols_b = big.in_chain();
    let dl = |c: &Chain| d.pow(c.len() as u32);
    let scale = C64::new(sign.powi(rho.len() as i32), 0.0);
    let mut out = CMat::zeros(dim_h * dl(&rows_b), dim_h * dl(&cols_b));
    for m_out in multi_indices(d, rows_b.len()) {
        for m_in in multi_indices(d, cols_b.len()) {
            // Identity padding forces agreement on the padded legs.
            if rho
                .0
                .iter()
                .any(|&x| m_out[rows_b.position(x).unwrap()] != m_in[cols_b.position(x).unwrap()])
            {
                continue;
            }
            let ms_out: Vec<usize> =
                rows_s.0.iter().map(|&x| m_out[rows_b.position(x).unwrap()]).collect();
            let ms_in: Vec<usize> =
                cols_s.0.iter().map(|&x| m_in[cols_b.position(x).unwrap()]).collect();
            for h_out in 0..dim_h {
                for h_in in 0..dim_h {
                    out[(h_out * dl(&rows_b) + flat_index(d, &m_out),
                        h_in * dl(&cols_b) + flat_index(d, &m_in))] = scale
                        * block[(h_out * dl(&rows_s) + flat_index(d, &ms_out),
                            h_in * dl(&cols_s) + flat_index(d, &ms_in))];
                }
            }
        }
    }
    out
}

fn mobius_transform(k: &KernelTable, sign: f64) -> KernelTable {
    let grid = &k.grid;
    let mut out = KernelTable::new(grid, k.dim_h);
    for (quad, block) in &k.entries {
        for cc_big in grid.all_chains() {
            if !quad.cc.is_subset(&cc_big)
                || !cc_big.is_disjoint(&quad.pm)
                || !cc_big.is_disjoint(&quad.cm)
                || !cc_big.is_disjoint(&quad.pc)
            {
                continue;
            }
            let big = ChainQuad::new(
                quad.pm.clone(),
                quad.cm.clone(),
                quad.pc.clone(),
                cc_big,
            );
            let padded = pad_block(block, k.dim_h, grid.d, quad, &big, sign);
            out.insert(big, padded).unwrap();
        }
    }
    out.entries.retain(|_, b| crate::max_abs(b) != 0.0);
    out
}

/// Kernel → Maassen-Meyer integrant: `M(…,ϑ) = Σ_{υ⊆ϑ} K(…,υ)⊗(−I)^⊗(ϑ∖υ)`.
pub fn mobius_to_mm(k: &KernelTable) -> MKernel {
    mobius_transform(k, -1.0)
}

/// Maassen-Meyer integrant → kernel: `K(…,ϑ) = Σ_{υ⊆ϑ} M(…,υ)⊗I^⊗(ϑ∖υ)`.
pub fn mobius_to_kernel(m: &MKernel) -> KernelTable {
    mobius_transform(m, 1.0)
}

/// Vector in the pseudo-Fock space `Γ(ℂ ⊕ K ⊕ ℂ)`: one tensor per chain,
/// fiber dimension `d + 2` per leg ordered `(−, ∘…, +)`.
#[derive(Debug, Clone)]
pub struct PseudoFockVector {
    pub grid: Arc<Grid>,
    pub entries: BTreeMap<Chain, Vec<C64>>,
}

const PSEUDO_FOCK_MAX_POINTS: usize = 3;

fn guard_small(grid: &Grid) -> Result<(), KernelError> {
    if grid.n > PSEUDO_FOCK_MAX_POINTS {
        return Err(KernelError::SizeGuard(format!(
            "pseudo-Fock space limited to {PSEUDO_FOCK_MAX_POINTS} grid points, got {}",
            grid.n
        )));
    }
    Ok(())
}

/// Every subset of the grid, without the `n_max` truncation (the dilation
/// space is not truncated).
fn all_subsets(grid: &Grid) -> Vec<Chain> {
    let mut out = Vec::new();
    for mask in 0..(1usize << grid.n) {
        let pts: Vec<usize> = (0..grid.n).filter(|i| mask & (1 << i) != 0).collect();
        out.push(Chain::new(pts));
    }
    out.sort_by_key(|c| (c.len(), c.0.clone()));
    out
}

impl PseudoFockVector {
    pub fn zero(grid: &Arc<Grid>) -> Self {
        PseudoFockVector { grid: grid.clone(), entries: BTreeMap::new() }
    }

    pub fn fiber_dim(grid: &Grid) -> usize {
        grid.d + 2
    }

    pub fn max_abs_diff(&self, other: &PseudoFockVector) -> f64 {
        let mut m: f64 = 0.0;
        let keys: std::collections::BTreeSet<&Chain> =
            self.entries.keys().chain(other.entries.keys()).collect();
        for ch in keys {
            let f = self.fiber_len(ch);
            let zero = vec![C64::new(0.0, 0.0); f];
            let a = self.entries.get(ch).unwrap_or(&zero);
            let b = other.entries.get(ch).unwrap_or(&zero);
            for (x, y) in a.iter().zip(b) {
                m = m.max((x - y).norm());
            }
        }
        m
    }

    fn fiber_len(&self, chain: &Chain) -> usize {
        Self::fiber_dim(&self.grid).pow(chain.len() as u32)
    }
}

/// `(Jh)(ω^−, ω^∘, ω^+) = δ_∅(ω^−)·h(ω^∘)`: embed a Fock vector with vacuum
/// annihilation slot and arbitrary creation filler.
pub fn j_embed(h: &FockVector) -> Result<PseudoFockVector, KernelError> {
    guard_small(&h.grid)?;
    let grid = &h.grid;
    let d = grid.d;
    let fd = d + 2;
    let mut out = PseudoFockVector::zero(grid);
    for omega in all_subsets(grid) {
        let n = omega.len();
        let mut tensor = vec![C64::new(0.0, 0.0); fd.pow(n as u32)];
        let mut nonzero = false;
        for idx in multi_indices(fd, n) {
            if idx.iter().any(|&i| i == 0) {
                continue;
            }
            // ∘-legs carry fiber values 1..=d; everything else is a + filler.
            let circ: Vec<usize> = (0..n).filter(|&i| idx[i] <= d).map(|i| omega.0[i]).collect();
            let circ_chain = Chain::new(circ);
            if circ_chain.len() > grid.n_max {
                continue;
            }
            let m: Vec<usize> =
                (0..n).filter(|&i| idx[i] <= d).map(|i| idx[i] - 1).collect();
            let v = h.value(&circ_chain, flat_index(d, &m));
            if v.norm() != 0.0 {
                tensor[flat_index(fd, &idx)] = v;
                nonzero = true;
            }
        }
        if nonzero {
            out.entries.insert(omega, tensor);
        }
    }
    Ok(out)
}

/// `(J†𝐡)(ω) = Σ_ϑ w(ϑ)·𝐡(ϑ, ω, ∅)`: integrate the annihilation slot,
/// evaluate the creation slot at ∅.
pub fn j_project(v: &PseudoFockVector) -> Result<FockVector, KernelError> {
    guard_small(&v.grid)?;
    let grid = &v.grid;
    let d = grid.d;
    let fd = d + 2;
    let mut out = FockVector::zero(grid);
    let mut acc: BTreeMap<Chain, Vec<C64>> = BTreeMap::new();
    for (omega, tensor) in &v.entries {
        let n = omega.len();
        for idx in multi_indices(fd, n) {
            if idx.iter().any(|&i| i == fd - 1) {
                continue;
            }
            let circ: Vec<usize> = (0..n).filter(|&i| idx[i] >= 1).map(|i| omega.0[i]).collect();
            let theta: Vec<usize> = (0..n).filter(|&i| idx[i] == 0).map(|i| omega.0[i]).collect();
            let circ_chain = Chain::new(circ);
            if circ_chain.len() > grid.n_max {
                continue;
            }
            let w = C64::new(chain_weight(&Chain::new(theta), grid), 0.0);
            let m: Vec<usize> = (0..n).filter(|&i| idx[i] >= 1).map(|i| idx[i] - 1).collect();
            let val = tensor[flat_index(fd, &idx)];
            if val.norm() == 0.0 {
                continue;
            }
            let t = acc
                .entry(circ_chain.clone())
                .or_insert_with(|| vec![C64::new(0.0, 0.0); d.pow(circ_chain.len() as u32)]);
            t[flat_index(d, &m)] += w * val;
        }
    }
    for (chain, tensor) in acc {
        if tensor.iter().any(|z| z.norm() != 0.0) {
            out.set(chain, tensor);
        }
    }
    Ok(out)
}

/// Second quantization `G^⊗` of per-point triangular operators acting on the
/// pseudo-Fock space (one `(d+2)`-square matrix per occupied leg).
pub fn pseudo_fock_dilate(
    g_ops: &[TriangularOp],
    v: &PseudoFockVector,
) -> Result<PseudoFockVector, KernelError> {
    guard_small(&v.grid)?;
    let grid = &v.grid;
    if g_ops.len() != grid.n || g_ops.iter().any(|g| g.dim_k != grid.d) {
        return Err(KernelError::DimMismatch);
    }
    let fd = grid.d + 2;
    let mut out = PseudoFockVector::zero(grid);
    for (omega, tensor) in &v.entries {
        let mut t = tensor.clone();
        // Apply the point matrix on one leg at a time.
        for (leg, &x) in omega.0.iter().enumerate() {
            let g = g_ops[x].to_matrix();
            let stride: usize = fd.pow((omega.len() - 1 - leg) as u32);
            let outer = t.len() / (fd * stride);
            let mut next = vec![C64::new(0.0, 0.0); t.len()];
            for o in 0..outer {
                for s in 0..stride {
                    for i in 0..fd {
                        let mut acc = C64::new(0.0, 0.0);
                        for j in 0..fd {
                            acc += g[(i, j)] * t[(o * fd + j) * stride + s];
                        }
                        next[(o * fd + i) * stride + s] = acc;
                    }
                }
            }
            t = next;
        }
        out.entries.insert(omega.clone(), t);
    }
    Ok(out)
}

/// Pseudo-inner product `(f|h) = Σ_ω w(ω)·⟨f(ω), g^⊗ h(ω)⟩` with the
/// per-leg Minkowski metric.
pub fn pseudo_inner(f: &PseudoFockVector, h: &PseudoFockVector) -> C64 {
    let grid = &f.grid;
    let fd = grid.d + 2;
    let metric = crate::gns_rep::minkowski_metric(grid.d);
    let mut total = C64::new(0.0, 0.0);
    for (omega, tf) in &f.entries {
        let th = match h.entries.get(omega) {
            Some(t) => t,
            None => continue,
        };
        let w = C64::new(chain_weight(omega, grid), 0.0);
        let n = omega.len();
        for li in multi_indices(fd, n) {
            let fi = tf[flat_index(fd, &li)].conj();
            if fi.norm() == 0.0 {
                continue;
            }
            for lj in multi_indices(fd, n) {
                let mut g = C64::new(1.0, 0.0);
                for (a, b) in li.iter().zip(&lj) {
                    g *= metric[(*a, *b)];
                    if g.norm() == 0.0 {
                        break;
                    }
                }
                if g.norm() == 0.0 {
                    continue;
                }
                total += w * fi * g * th[flat_index(fd, &lj)];
            }
        }
    }
    total
}

/// The exponential kernel of per-point triangular operators:
/// `K(ω) = ∏_pm l(x) · ⊗_pc k(x) · ⊗_cc j(x) · ⊗_cm k⋆(x)`.
pub fn exponential_kernel(
    g_ops: &[TriangularOp],
    grid: &Arc<Grid>,
) -> Result<KernelTable, KernelError> {
    if g_ops.len() != grid.n || g_ops.iter().any(|g| g.dim_k != grid.d) {
        return Err(KernelError::DimMismatch);
    }
    let d = grid.d;
    let mut out = KernelTable::new(grid, 1);
    // Assign each grid point to one of five roles.
    let roles = [0usize, 1, 2, 3, 4];
    let mut assignment = vec![0usize; grid.n];
    loop {
        let mut pm = Vec::new();
        let mut cm = Vec::new();
        let mut pc = Vec::new();
        let mut cc = Vec::new();
        for (x, &r) in assignment.iter().enumerate() {
            match r {
                1 => pm.push(x),
                2 => cm.push(x),
                3 => pc.push(x),
                4 => cc.push(x),
                _ => {}
            }
        }
        let quad = ChainQuad::new(Chain::new(pm), Chain::new(cm), Chain::new(pc), Chain::new(cc));
        let rows = quad.out_chain();
        let cols = quad.in_chain();
        let dl = |c: &Chain| d.pow(c.len() as u32);
        let mut block = CMat::zeros(dl(&rows), dl(&cols));
        let scalar: C64 = quad.pm.0.iter().map(|&x| g_ops[x].l).product();
        for m_out in multi_indices(d, rows.len()) {
            for m_in in multi_indices(d, cols.len()) {
                let mut v = scalar;
                for &x in &quad.pc.0 {
                    v *= g_ops[x].k_col[(m_out[rows.position(x).unwrap()], 0)];
                }
                for &x in &quad.cc.0 {
                    v *= g_ops[x].j_block
                        [(m_out[rows.position(x).unwrap()], m_in[cols.position(x).unwrap()])];
                }
                for &x in &quad.cm.0 {
                    v *= g_ops[x].k_row[(0, m_in[cols.position(x).unwrap()])];
                }
                block[(flat_index(d, &m_out), flat_index(d, &m_in))] = v;
            }
        }
        if crate::max_abs(&block) != 0.0 {
            out.insert(quad, block)?;
        }
        // Next assignment.
        let mut i = 0;
        loop {
            if i == assignment.len() {
                return Ok(out);
            }
            if assignment[i] + 1 < roles.len() {
                assignment[i] += 1;
                break;
            }
            assignment[i] = 0;
            i += 1;
        }
    }
}

/// Factor a triangular operator into elementary normally-ordered factors
/// `corner·column·diagonal·row`; the product reproduces `G` exactly.
pub fn normal_order_factor(g: &TriangularOp) -> [TriangularOp; 4] {
    let dk = g.dim_k;
    let mut corner = TriangularOp::identity(dk);
    corner.l = g.l;
    let mut column = TriangularOp::identity(dk);
    column.k_col = g.k_col.clone();
    let diagonal = TriangularOp::new(
        C64::new(0.0, 0.0),
        CMat::zeros(1, dk),
        CMat::zeros(dk, 1),
        g.j_block.clone(),
    );
    let mut row = TriangularOp::identity(dk);
    row.k_row = g.k_row.clone();
    [corner, column, diagonal, row]
}

/// π-representation acting on an exponential vector: scale by
/// `exp{Σ_x (l(x) + k⋆(x)·k(x))Δ_x}` and replace the parameter by
/// `k(x) + j(x)·k(x)` pointwise. Returns the scalar and the new parameter.
pub fn pi_rep_params(
    g_ops: &[TriangularOp],
    k_param: &[Vec<C64>],
    grid: &Grid,
) -> Result<(C64, Vec<Vec<C64>>), KernelError> {
    if g_ops.len() != grid.n
        || k_param.len() != grid.n
        || g_ops.iter().any(|g| g.dim_k != grid.d)
        || k_param.iter().any(|k| k.len() != grid.d)
    {
        return Err(KernelError::DimMismatch);
    }
    let mut exponent = C64::new(0.0, 0.0);
    let mut new_k = Vec::with_capacity(grid.n);
    for x in 0..grid.n {
        let g = &g_ops[x];
        let pairing: C64 = (0..grid.d).map(|m| g.k_row[(0, m)] * k_param[x][m]).sum();
        exponent += (g.l + pairing) * C64::new(grid.weights[x], 0.0);
        let kx: Vec<C64> = (0..grid.d)
            .map(|m| {
                g.k_col[(m, 0)]
                    + (0..grid.d).map(|j| g.j_block[(m, j)] * k_param[x][j]).sum::<C64>()
            })
            .collect();
        new_k.push(kx);
    }
    Ok((exponent.exp(), new_k))
}

/// π-representation as a Fock vector (truncated exponential vector).
pub fn pi_rep(
    g_ops: &[TriangularOp],
    k_param: &[Vec<C64>],
    grid: &Arc<Grid>,
) -> Result<FockVector, KernelError> {
    let (scalar, new_k) = pi_rep_params(g_ops, k_param, grid)?;
    Ok(exp_vector(grid, &new_k).scale(scalar))
}

/// Per-point positive weights for the conditional kernel norm.
#[derive(Debug, Clone)]
pub struct NormQuadruple {
    pub a_pm: Vec<f64>,
    pub a_cm: Vec<f64>,
    pub a_pc: Vec<f64>,
    pub a_cc: Vec<f64>,
}

impl NormQuadruple {
    pub fn constant(grid: &Grid, v: f64) -> Self {
        assert!(v > 0.0);
        NormQuadruple {
            a_pm: vec![v; grid.n],
            a_cm: vec![v; grid.n],
            a_pc: vec![v; grid.n],
            a_cc: vec![v; grid.n],
        }
    }

    /// The reflected quadruple matching the ⋆-adjoint kernel.
    pub fn reflected(&self) -> NormQuadruple {
        NormQuadruple {
            a_pm: self.a_pm.clone(),
            a_cm: self.a_pc.clone(),
            a_pc: self.a_cm.clone(),
            a_cc: self.a_cc.clone(),
        }
    }
}

/// Conditional norm `‖K‖_α = max over entries of ‖K(ω)‖ / ∏ α_ν^μ(ω_ν^μ)`.
pub fn norm_alpha(k: &KernelTable, alpha: &NormQuadruple) -> f64 {
    let mut best: f64 = 0.0;
    for (quad, block) in &k.entries {
        let mut denom = 1.0;
        for &x in &quad.pm.0 {
            denom *= alpha.a_pm[x];
        }
        for &x in &quad.cm.0 {
            denom *= alpha.a_cm[x];
        }
        for &x in &quad.pc.0 {
            denom *= alpha.a_pc[x];
        }
        for &x in &quad.cc.0 {
            denom *= alpha.a_cc[x];
        }
        let opnorm = block
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        best = best.max(opnorm / denom);
    }
    best
}

/// Exponential projective bound: `‖K‖_α · exp{Σ_x (α_+^− + r(α_+^∘² +
/// α_∘^−²)/2)Δ_x}`, valid when `α_∘^∘ ≤ p` pointwise.
pub fn bound_pr(
    k_norm_alpha: f64,
    alpha: &NormQuadruple,
    r: &[f64],
    p: &[f64],
    grid: &Grid,
) -> f64 {
    assert!(
        alpha.a_cc.iter().zip(p).all(|(a, q)| a <= q),
        "bound requires α_∘^∘ ≤ p pointwise"
    );
    let mut exponent = 0.0;
    for x in 0..grid.n {
        exponent +=
            (alpha.a_pm[x] + r[x] * (alpha.a_pc[x].powi(2) + alpha.a_cm[x].powi(2)) / 2.0)
                * grid.weights[x];
    }
    k_norm_alpha * exponent.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_fock::{inner, WeightFunction};
    use rand::Rng;
    use rand::SeedableRng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_fock(grid: &Arc<Grid>, rng: &mut impl Rng) -> FockVector {
        let mut h = FockVector::zero(grid);
        for ch in grid.all_chains() {
            let len = FockVector::tensor_len(grid, &ch);
            h.set(ch, (0..len).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect());
        }
        h
    }

    /// A random sparse kernel: each grid point is assigned a random role,
    /// repeated for a few entries.
    fn random_kernel(grid: &Arc<Grid>, dim_h: usize, n_entries: usize, rng: &mut impl Rng) -> KernelTable {
        let mut k = KernelTable::new(grid, dim_h);
        while k.entries.len() < n_entries {
            let mut slots = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
            for x in 0..grid.n {
                let r = rng.gen_range(0..8);
                if r < 4 {
                    slots[r].push(x);
                }
            }
            let quad = ChainQuad::new(
                Chain::new(slots[0].clone()),
                Chain::new(slots[1].clone()),
                Chain::new(slots[2].clone()),
                Chain::new(slots[3].clone()),
            );
            let (rows, cols) = k.block_shape(&quad);
            let block = CMat::from_fn(rows, cols, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            k.insert(quad, block).unwrap();
        }
        k
    }

    #[test]
    fn identity_kernel_acts_as_identity() {
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let mut r = rng(21);
        let h = random_fock(&grid, &mut r);
        let k = KernelTable::identity(&grid, 1);
        let out = epsilon(&k, &h).unwrap();
        assert!(out.sub(&h).max_abs() <= 1e-14);
        let basis = HFockBasis::new(&grid, 2);
        let k2 = KernelTable::identity(&grid, 2);
        let m = epsilon_matrix(&k2, &basis).unwrap();
        assert!(crate::max_abs_diff(&m, &CMat::identity(basis.dim, basis.dim)) <= 1e-14);
    }

    #[test]
    fn pure_creation_kernel_hand_enumeration() {
        // Single creation entry at point 0 on an n=2 grid: the output chain
        // is exactly {0} (no pass-through; the full creation operator is the
        // identity-padded Möbius extension of this entry).
        let grid = Grid::uniform(2, 0.5, 1, 2);
        let mut k = KernelTable::new(&grid, 1);
        let kv = c(0.8, -0.2);
        k.insert(
            ChainQuad::new(Chain::empty(), Chain::empty(), Chain::single(0), Chain::empty()),
            CMat::from_row_slice(1, 1, &[kv]),
        )
        .unwrap();
        let mut r = rng(22);
        let h = random_fock(&grid, &mut r);
        let out = epsilon(&k, &h).unwrap();
        // The four chains of the n=2 grid.
        assert!(out.value(&Chain::empty(), 0).norm() == 0.0);
        assert!((out.value(&Chain::single(0), 0) - kv * h.value(&Chain::empty(), 0)).norm() <= 1e-15);
        assert!(out.value(&Chain::single(1), 0).norm() == 0.0);
        assert!(out.value(&Chain::new(vec![0, 1]), 0).norm() == 0.0);
        // Its Möbius extension is the actual creation operator:
        // [a*h](ϰ) = k·h(ϰ∖{0}) for 0 ∈ ϰ.
        let full = mobius_to_kernel(&k);
        let out = epsilon(&full, &h).unwrap();
        assert!((out.value(&Chain::single(0), 0) - kv * h.value(&Chain::empty(), 0)).norm() <= 1e-15);
        assert!(
            (out.value(&Chain::new(vec![0, 1]), 0) - kv * h.value(&Chain::single(1), 0)).norm()
                <= 1e-15
        );
        assert!(out.value(&Chain::single(1), 0).norm() == 0.0);
    }

    #[test]
    fn vacuum_expectation_collapses_to_scalar_slots() {
        let grid = Grid::uniform(3, 0.4, 1, 3);
        let mut r = rng(23);
        let k = random_kernel(&grid, 1, 6, &mut r);
        let vac = FockVector::vacuum(&grid);
        let out = epsilon(&k, &vac).unwrap();
        let got = inner(&vac, &out);
        let mut want = c(0.0, 0.0);
        for (quad, block) in &k.entries {
            if quad.cm.is_empty() && quad.pc.is_empty() && quad.cc.is_empty() {
                want += c(chain_weight(&quad.pm, &grid), 0.0) * block[(0, 0)];
            }
        }
        assert!((got - want).norm() <= 1e-13);
    }

    #[test]
    fn star_is_involutive_and_adjoint() {
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let mut r = rng(24);
        let k = random_kernel(&grid, 2, 6, &mut r);
        assert!(kernel_star(&kernel_star(&k)).max_abs_diff(&k) == 0.0);
        assert!(kernel_star(&KernelTable::identity(&grid, 2))
            .max_abs_diff(&KernelTable::identity(&grid, 2)) == 0.0);
        // Single creation entry maps to a single annihilation entry.
        let mut kc = KernelTable::new(&grid, 1);
        kc.insert(
            ChainQuad::new(Chain::empty(), Chain::empty(), Chain::single(1), Chain::empty()),
            CMat::from_row_slice(1, 1, &[c(0.3, 0.7)]),
        )
        .unwrap();
        let ks = kernel_star(&kc);
        let key = ChainQuad::new(Chain::empty(), Chain::single(1), Chain::empty(), Chain::empty());
        assert_eq!(ks.entries.len(), 1);
        assert!((ks.entries[&key][(0, 0)] - c(0.3, -0.7)).norm() == 0.0);
        // ε(K⋆) is the weighted adjoint of ε(K).
        let basis = HFockBasis::new(&grid, 2);
        let m = epsilon_matrix(&k, &basis).unwrap();
        let ms = epsilon_matrix(&kernel_star(&k), &basis).unwrap();
        assert!(crate::max_abs_diff(&ms, &basis.weighted_adjoint(&m)) <= 1e-12);
    }

    #[test]
    fn kernel_mul_unit_and_creation_pair() {
        let grid = Grid::uniform(2, 0.5, 1, 2);
        let mut r = rng(25);
        let k = random_kernel(&grid, 1, 4, &mut r);
        let id = KernelTable::identity(&grid, 1);
        assert!(kernel_mul(&k, &id).unwrap().max_abs_diff(&k) <= 1e-14);
        assert!(kernel_mul(&id, &k).unwrap().max_abs_diff(&k) <= 1e-14);
        // Creation at x times its star: the vacuum entry of K·K⋆ carries the
        // point weight |k|²·Δ_x; checked against the dense product.
        let kv = c(0.6, 0.4);
        let mut kc = KernelTable::new(&grid, 1);
        kc.insert(
            ChainQuad::new(Chain::empty(), Chain::empty(), Chain::single(0), Chain::empty()),
            CMat::from_row_slice(1, 1, &[kv]),
        )
        .unwrap();
        let prod = kernel_mul(&kernel_star(&kc), &kc).unwrap();
        let vac = prod.entries.get(&ChainQuad::vacuum()).expect("vacuum entry");
        assert!((vac[(0, 0)] - c(0.5 * kv.norm_sqr(), 0.0)).norm() <= 1e-15);
        let basis = HFockBasis::new(&grid, 1);
        let lhs = epsilon_matrix(&prod, &basis).unwrap();
        let rhs = epsilon_matrix(&kernel_star(&kc), &basis).unwrap()
            * epsilon_matrix(&kc, &basis).unwrap();
        assert!(crate::max_abs_diff(&lhs, &rhs) <= 1e-13);
    }

    #[test]
    fn epsilon_is_multiplicative_on_random_pairs() {
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let basis = HFockBasis::new(&grid, 2);
        let mut r = rng(26);
        for _ in 0..50 {
            let k = random_kernel(&grid, 2, 3, &mut r);
            let l = random_kernel(&grid, 2, 3, &mut r);
            let prod = kernel_mul(&k, &l).unwrap();
            let lhs = epsilon_matrix(&prod, &basis).unwrap();
            let rhs = epsilon_matrix(&k, &basis).unwrap() * epsilon_matrix(&l, &basis).unwrap();
            assert!(crate::max_abs_diff(&lhs, &rhs) <= 1e-12);
            // Anti-homomorphism of the involution.
            let anti = kernel_star(&prod)
                .max_abs_diff(&kernel_mul(&kernel_star(&l), &kernel_star(&k)).unwrap());
            assert!(anti <= 1e-12);
        }
    }

    #[test]
    fn mobius_round_trip() {
        let grid = Grid::uniform(4, 0.25, 1, 4);
        let mut r = rng(27);
        let m = random_kernel(&grid, 1, 5, &mut r);
        let k = mobius_to_kernel(&m);
        let back = mobius_to_mm(&k);
        assert!(back.max_abs_diff(&m) <= 1e-13);
        let k2 = mobius_to_kernel(&back);
        assert!(k2.max_abs_diff(&k) <= 1e-13);
        // M concentrated at ϑ=∅ extends by identities: single-entry check.
        let mut m0 = KernelTable::new(&grid, 1);
        m0.insert(ChainQuad::vacuum(), CMat::from_row_slice(1, 1, &[c(2.0, 0.0)]))
            .unwrap();
        let k0 = mobius_to_kernel(&m0);
        for (quad, block) in &k0.entries {
            assert!(quad.pm.is_empty() && quad.cm.is_empty() && quad.pc.is_empty());
            let n = grid.d.pow(quad.cc.len() as u32);
            assert!(crate::max_abs_diff(block, &(CMat::identity(n, n) * c(2.0, 0.0))) == 0.0);
        }
        // Single-point M at ϑ={x}: K populated exactly on cc ⊇ {x}.
        let mut m1 = KernelTable::new(&grid, 1);
        m1.insert(
            ChainQuad::new(Chain::empty(), Chain::empty(), Chain::empty(), Chain::single(2)),
            CMat::from_row_slice(1, 1, &[c(0.0, 1.0)]),
        )
        .unwrap();
        let k1 = mobius_to_kernel(&m1);
        for quad in k1.entries.keys() {
            assert!(quad.cc.contains(2));
        }
        assert_eq!(k1.entries.len(), 8);
    }

    #[test]
    fn pseudo_fock_isometry_and_compression() {
        let grid = Grid::uniform(2, 0.5, 1, 2);
        let mut r = rng(28);
        let h = random_fock(&grid, &mut r);
        let jh = j_embed(&h).unwrap();
        // Pseudo-inner of embedded vectors is the Fock inner product.
        let ip = pseudo_inner(&jh, &jh);
        let want = inner(&h, &h);
        assert!((ip - want).norm() <= 1e-12);
        // J† J = id.
        let back = j_project(&jh).unwrap();
        assert!(back.sub(&h).max_abs() <= 1e-13);
        // Identity dilation compresses to the identity.
        let id_ops: Vec<TriangularOp> = (0..grid.n).map(|_| TriangularOp::identity(1)).collect();
        let dil = pseudo_fock_dilate(&id_ops, &jh).unwrap();
        assert!(j_project(&dil).unwrap().sub(&h).max_abs() <= 1e-13);
        // Compression equality against the exponential kernel, random G.
        let g_ops: Vec<TriangularOp> = (0..grid.n)
            .map(|_| {
                TriangularOp::new(
                    c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)),
                    CMat::from_fn(1, 1, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))),
                    CMat::from_fn(1, 1, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))),
                    CMat::from_fn(1, 1, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))),
                )
            })
            .collect();
        let lhs = j_project(&pseudo_fock_dilate(&g_ops, &jh).unwrap()).unwrap();
        let kg = exponential_kernel(&g_ops, &grid).unwrap();
        let rhs = epsilon(&kg, &h).unwrap();
        assert!(lhs.sub(&rhs).max_abs() <= 1e-12);
        // Size guard.
        let big = Grid::uniform(4, 0.25, 1, 4);
        assert!(matches!(
            j_embed(&FockVector::vacuum(&big)),
            Err(KernelError::SizeGuard(_))
        ));
    }

    #[test]
    fn normal_order_factorization() {
        // Identity factors into identities.
        let id = TriangularOp::identity(2);
        for f in normal_order_factor(&id) {
            assert!(f.max_abs_diff(&id) == 0.0);
        }
        // Wiener representation blocks read off directly.
        let alg = crate::ito_algebra::wiener();
        let e = alg.basis(1);
        let rep = crate::gns_rep::gns_construct(&[alg.zero(), e.clone()], 1e-9).unwrap();
        let t = rep.op(&e);
        let [corner, column, diagonal, row] = normal_order_factor(&t);
        assert!(corner.l.norm() == 0.0);
        assert!((column.k_col[(0, 0)].norm() - 1.0).abs() <= 1e-12);
        assert!((diagonal.j_block[(0, 0)].norm() - 1.0).abs() <= 1e-12);
        assert!((row.k_row[(0, 0)].norm() - 1.0).abs() <= 1e-12);
        // Random refactorization is exact.
        let mut r = rng(29);
        let g = TriangularOp::new(
            c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)),
            CMat::from_fn(1, 3, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))),
            CMat::from_fn(3, 1, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))),
            CMat::from_fn(3, 3, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))),
        );
        let [f1, f2, f3, f4] = normal_order_factor(&g);
        let prod = crate::gns_rep::tri_mul(&f1, &crate::gns_rep::tri_mul(&f2, &crate::gns_rep::tri_mul(&f3, &f4)));
        assert!(prod.max_abs_diff(&g) <= 1e-15);
    }

    #[test]
    fn pi_rep_identity_vacuum_and_multiplicativity() {
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let alg = crate::ito_algebra::wiener();
        let e = alg.basis(1);
        let rep = crate::gns_rep::gns_construct(&[alg.zero(), e.clone()], 1e-9).unwrap();
        // g ≡ u acts as the identity.
        let unit_ops: Vec<TriangularOp> = (0..grid.n).map(|_| rep.op(&alg.zero())).collect();
        let mut r = rng(30);
        let k0: Vec<Vec<C64>> = (0..grid.n)
            .map(|_| vec![c(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5))])
            .collect();
        let out = pi_rep(&unit_ops, &k0, &grid).unwrap();
        assert!(out.sub(&exp_vector(&grid, &k0)).max_abs() <= 1e-12);
        // Vacuum expectation exp(Σ l Δ): for the Wiener element l(e) = 0, so
        // use the monoid element e∘e with l = 1.
        let g_el = crate::ito_algebra::monoid_mul(&e, &e);
        let g_ops: Vec<TriangularOp> = (0..grid.n).map(|_| rep.op(&g_el)).collect();
        let zero_k: Vec<Vec<C64>> = (0..grid.n).map(|_| vec![c(0.0, 0.0)]).collect();
        let vac = FockVector::vacuum(&grid);
        let out = pi_rep(&g_ops, &zero_k, &grid).unwrap();
        let total_t: f64 = grid.weights.iter().sum();
        let l_val = crate::ito_algebra::l_value(&g_el);
        assert!((inner(&vac, &out) - (l_val * c(total_t, 0.0)).exp()).norm() <= 1e-12);
        // Multiplicativity: π(f∘h) = π(f)π(h) on exponential parameters.
        let f_el = alg.element(vec![c(0.1, 0.0), c(0.4, -0.2)]);
        let h_el = alg.element(vec![c(0.0, 0.1), c(-0.3, 0.2)]);
        let f_ops: Vec<TriangularOp> = (0..grid.n).map(|_| rep.op(&f_el)).collect();
        let h_ops: Vec<TriangularOp> = (0..grid.n).map(|_| rep.op(&h_el)).collect();
        let fh = crate::ito_algebra::monoid_mul(&f_el, &h_el);
        let fh_ops: Vec<TriangularOp> = (0..grid.n).map(|_| rep.op(&fh)).collect();
        let (s1, k1) = pi_rep_params(&h_ops, &k0, &grid).unwrap();
        let (s2, k2) = pi_rep_params(&f_ops, &k1, &grid).unwrap();
        let (s12, k12) = pi_rep_params(&fh_ops, &k0, &grid).unwrap();
        assert!((s1 * s2 - s12).norm() <= 1e-10);
        for (a, b) in k2.iter().zip(&k12) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn norms_and_exponential_bound() {
        let grid = Grid::uniform(3, 0.3, 1, 3);
        let alpha = NormQuadruple::constant(&grid, 1.0);
        let id = KernelTable::identity(&grid, 1);
        assert!((norm_alpha(&id, &alpha) - 1.0).abs() <= 1e-14);
        let mut r = rng(31);
        let k = random_kernel(&grid, 1, 5, &mut r);
        let n1 = norm_alpha(&k, &alpha);
        assert!((norm_alpha(&k.scale(c(2.0, 0.0)), &alpha) - 2.0 * n1).abs() <= 1e-12 * n1);
        // Star reflection of the conditional norm.
        let mut alpha2 = NormQuadruple::constant(&grid, 1.0);
        alpha2.a_cm = vec![0.3; grid.n];
        alpha2.a_pc = vec![1.7; grid.n];
        let ns = norm_alpha(&kernel_star(&k), &alpha2.reflected());
        let n2 = norm_alpha(&k, &alpha2);
        assert!((ns - n2).abs() <= 1e-12 * n2.max(1.0));
        // Dense operator norm against the exponential bound, 20 random
        // kernels: ‖ε(K)‖ measured F(p + 1/r) → F(p).
        let basis = HFockBasis::new(&grid, 1);
        let rv = vec![2.0; grid.n];
        let pv = vec![1.0; grid.n];
        let p_w = WeightFunction::new(pv.clone());
        let q_w = WeightFunction::new(rv.iter().zip(&pv).map(|(r, p)| p + 1.0 / r).collect());
        for _ in 0..20 {
            let k = random_kernel(&grid, 1, 4, &mut r);
            let m = epsilon_matrix(&k, &basis).unwrap();
            let measured = basis.weighted_op_norm(&m, &p_w, &q_w);
            let na = norm_alpha(&k, &alpha);
            let bound = bound_pr(na, &alpha, &rv, &pv, &grid);
            assert!(
                measured <= bound + 1e-10,
                "measured {measured} exceeds bound {bound}"
            );
        }
    }
}
