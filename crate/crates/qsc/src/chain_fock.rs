//! Discretized chain (Guichardet) space and weighted Fock vectors.
//!
//! A [`Grid`] is a finite, strictly time-ordered point set with quadrature
//! weights. A [`Chain`] is a sorted subset of grid indices; Fock vectors are
//! sparse maps from chains to complex tensors with one `d`-dimensional leg
//! per chain point. The diagonal-free convention is used throughout: any
//! expression that would place the same grid point in two disjoint roles
//! contributes zero, which makes the continuum sum-integral identity exact
//! on the grid.

use crate::C64;
use itertools::Itertools;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("times must be strictly increasing")]
    TimesNotIncreasing,
    #[error("weights must be strictly positive")]
    NonPositiveWeight,
    #[error("times and weights must have equal length")]
    LengthMismatch,
    #[error("multiplicity d must be positive")]
    ZeroMultiplicity,
}

/// Finite ordered point set with times and quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
    /// Multiplicity: dimension of the one-point space `K_x`, equal for all x.
    pub d: usize,
    /// Chain-length truncation.
    pub n_max: usize,
}

impl Grid {
    pub fn new(times: Vec<f64>, weights: Vec<f64>, d: usize, n_max: usize) -> Result<Arc<Self>, GridError> {
        if times.len() != weights.len() {
            return Err(GridError::LengthMismatch);
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::TimesNotIncreasing);
        }
        if weights.iter().any(|w| *w <= 0.0) {
            return Err(GridError::NonPositiveWeight);
        }
        if d == 0 {
            return Err(GridError::ZeroMultiplicity);
        }
        Ok(Arc::new(Grid { n: times.len(), times, weights, d, n_max }))
    }

    /// Uniform grid on `[0, n·dt)` with equal weights `dt`.
    pub fn uniform(n: usize, dt: f64, d: usize, n_max: usize) -> Arc<Self> {
        let times = (0..n).map(|i| i as f64 * dt).collect();
        let weights = vec![dt; n];
        Grid::new(times, weights, d, n_max).expect("uniform grid is valid")
    }

    /// Indices of grid points strictly before the cut time `t`.
    pub fn points_before(&self, t: f64) -> Vec<usize> {
        (0..self.n).filter(|i| self.times[*i] < t).collect()
    }

    /// All chains of length at most `n_max`, ordered by length then
    /// lexicographically (deterministic enumeration order).
    pub fn all_chains(&self) -> Vec<Chain> {
        (0..self.n)
            .powerset()
            .filter(|s| s.len() <= self.n_max)
            .map(Chain::new)
            .sorted_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)))
            .collect()
    }
}

/// A sorted set of grid indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Chain(pub Vec<usize>);

impl Chain {
    /// Build from indices; they are sorted and must be unique.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        assert!(indices.windows(2).all(|w| w[0] < w[1]), "chain indices must be unique");
        Chain(indices)
    }

    pub fn empty() -> Self {
        Chain(Vec::new())
    }

    pub fn single(x: usize) -> Self {
        Chain(vec![x])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.0.binary_search(&x).is_ok()
    }

    /// Position of `x` within the chain, if present.
    pub fn position(&self, x: usize) -> Option<usize> {
        self.0.binary_search(&x).ok()
    }

    pub fn is_disjoint(&self, other: &Chain) -> bool {
        self.0.iter().all(|x| !other.contains(*x))
    }

    pub fn is_subset(&self, other: &Chain) -> bool {
        self.0.iter().all(|x| other.contains(*x))
    }

    /// Disjoint union; `None` if the chains intersect.
    pub fn union(&self, other: &Chain) -> Option<Chain> {
        if !self.is_disjoint(other) {
            return None;
        }
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        v.sort_unstable();
        Some(Chain(v))
    }

    /// Set difference `self ∖ other`.
    pub fn minus(&self, other: &Chain) -> Chain {
        Chain(self.0.iter().cloned().filter(|x| !other.contains(*x)).collect())
    }

    pub fn intersect(&self, other: &Chain) -> Chain {
        Chain(self.0.iter().cloned().filter(|x| other.contains(*x)).collect())
    }

    /// All `(subset, complement)` splittings of this chain.
    pub fn splittings(&self) -> Vec<(Chain, Chain)> {
        self.0
            .iter()
            .cloned()
            .powerset()
            .map(|s| {
                let sub = Chain(s);
                let rest = self.minus(&sub);
                (sub, rest)
            })
            .collect()
    }

    /// All subsets (including empty and full).
    pub fn subsets(&self) -> Vec<Chain> {
        self.0.iter().cloned().powerset().map(Chain).collect()
    }

    /// Quadrature weight `w(ϰ) = ∏ Δ_x`; empty chain gives 1.
    pub fn weight(&self, grid: &Grid) -> f64 {
        self.0.iter().map(|x| grid.weights[*x]).product()
    }

    /// Largest time of the chain, `None` when empty.
    pub fn max_time(&self, grid: &Grid) -> Option<f64> {
        self.0.last().map(|x| grid.times[*x])
    }
}

/// Convenience alias for chain weights.
pub fn chain_weight(chain: &Chain, grid: &Grid) -> f64 {
    chain.weight(grid)
}

/// Strictly positive per-point weight with product extension to chains.
#[derive(Debug, Clone)]
pub struct WeightFunction {
    pub values: Vec<f64>,
}

impl WeightFunction {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(values.iter().all(|v| *v > 0.0), "weights must be positive");
        WeightFunction { values }
    }

    pub fn constant(grid: &Grid, v: f64) -> Self {
        WeightFunction::new(vec![v; grid.n])
    }

    /// Product extension `p(ϰ) = ∏_{x∈ϰ} p(x)`.
    pub fn of_chain(&self, chain: &Chain) -> f64 {
        chain.0.iter().map(|x| self.values[*x]).product()
    }

    /// Pointwise reciprocal.
    pub fn recip(&self) -> Self {
        WeightFunction::new(self.values.iter().map(|v| 1.0 / v).collect())
    }

    /// Pointwise sum.
    pub fn add(&self, other: &WeightFunction) -> Self {
        WeightFunction::new(
            self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        )
    }
}

/// Sparse Fock vector: chain → tensor of shape `d^|chain|`, row-major with
/// the lowest grid index as the most significant leg.
#[derive(Debug, Clone)]
pub struct FockVector {
    pub entries: BTreeMap<Chain, Vec<C64>>,
    pub grid: Arc<Grid>,
}

impl FockVector {
    pub fn zero(grid: &Arc<Grid>) -> Self {
        FockVector { entries: BTreeMap::new(), grid: Arc::clone(grid) }
    }

    /// The vacuum `1_∅`.
    pub fn vacuum(grid: &Arc<Grid>) -> Self {
        let mut v = FockVector::zero(grid);
        v.set(Chain::empty(), vec![C64::new(1.0, 0.0)]);
        v
    }

    pub fn tensor_len(grid: &Grid, chain: &Chain) -> usize {
        grid.d.pow(chain.len() as u32)
    }

    pub fn set(&mut self, chain: Chain, tensor: Vec<C64>) {
        assert!(chain.len() <= self.grid.n_max, "chain exceeds N_max");
        assert_eq!(tensor.len(), Self::tensor_len(&self.grid, &chain), "tensor shape mismatch");
        self.entries.insert(chain, tensor);
    }

    pub fn get(&self, chain: &Chain) -> Option<&Vec<C64>> {
        self.entries.get(chain)
    }

    /// Entry value at `(chain, flat tensor index)`, zero when absent.
    pub fn value(&self, chain: &Chain, idx: usize) -> C64 {
        self.entries.get(chain).map_or(C64::new(0.0, 0.0), |t| t[idx])
    }

    pub fn add_assign_scaled(&mut self, other: &FockVector, z: C64) {
        for (chain, tensor) in &other.entries {
            let slot = self
                .entries
                .entry(chain.clone())
                .or_insert_with(|| vec![C64::new(0.0, 0.0); tensor.len()]);
            for (a, b) in slot.iter_mut().zip(tensor) {
                *a += z * b;
            }
        }
    }

    pub fn scale(&self, z: C64) -> FockVector {
        let entries = self
            .entries
            .iter()
            .map(|(c, t)| (c.clone(), t.iter().map(|v| z * v).collect()))
            .collect();
        FockVector { entries, grid: Arc::clone(&self.grid) }
    }

    pub fn sub(&self, other: &FockVector) -> FockVector {
        let mut out = self.clone();
        out.add_assign_scaled(other, C64::new(-1.0, 0.0));
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Truncated exponential vector: entry at `ϰ` is `⊗_{x∈ϰ} k(x)`.
pub fn exp_vector(grid: &Arc<Grid>, k: &[Vec<C64>]) -> FockVector {
    assert_eq!(k.len(), grid.n);
    assert!(k.iter().all(|v| v.len() == grid.d));
    let mut out = FockVector::zero(grid);
    for chain in grid.all_chains() {
        let len = FockVector::tensor_len(grid, &chain);
        let mut tensor = vec![C64::new(0.0, 0.0); len];
        for (flat, assignment) in multi_indices(grid.d, chain.len()).iter().enumerate() {
            let mut v = C64::new(1.0, 0.0);
            for (leg, x) in chain.0.iter().enumerate() {
                v *= k[*x][assignment[leg]];
            }
            tensor[flat] = v;
        }
        out.set(chain, tensor);
    }
    out
}

/// All multi-indices of `len` legs with `d` values each, in row-major order
/// (first leg most significant).
pub fn multi_indices(d: usize, len: usize) -> Vec<Vec<usize>> {
    let total = d.pow(len as u32);
    (0..total)
        .map(|mut flat| {
            let mut m = vec![0usize; len];
            for leg in (0..len).rev() {
                m[leg] = flat % d;
                flat /= d;
            }
            m
        })
        .collect()
}

/// Flat tensor index of a leg assignment (row-major, first leg most
/// significant).
pub fn flat_index(d: usize, assignment: &[usize]) -> usize {
    assignment.iter().fold(0, |acc, m| acc * d + m)
}

/// Weighted inner product `Σ_ϰ w(ϰ) ⟨f(ϰ)|h(ϰ)⟩`, conjugate-linear in `f`.
pub fn inner(f: &FockVector, h: &FockVector) -> C64 {
    assert!(Arc::ptr_eq(&f.grid, &h.grid) || *f.grid == *h.grid, "grid mismatch");
    let mut acc = C64::new(0.0, 0.0);
    for (chain, tf) in &f.entries {
        if let Some(th) = h.entries.get(chain) {
            let w = chain.weight(&f.grid);
            let dot: C64 = tf.iter().zip(th).map(|(a, b)| a.conj() * b).sum();
            acc += C64::new(w, 0.0) * dot;
        }
    }
    acc
}

/// Weighted norm `(Σ_ϰ p(ϰ) w(ϰ) ‖f(ϰ)‖²)^{1/2}`.
pub fn norm_weighted(f: &FockVector, p: &WeightFunction) -> f64 {
    let mut acc = 0.0;
    for (chain, tf) in &f.entries {
        let w = chain.weight(&f.grid) * p.of_chain(chain);
        let n2: f64 = tf.iter().map(|z| z.norm_sqr()).sum();
        acc += w * n2;
    }
    acc.sqrt()
}

/// Plain norm (weight ≡ 1).
pub fn norm(f: &FockVector) -> f64 {
    inner(f, f).re.sqrt()
}

/// Annihilation `ḣ(ϑ)(ϰ) = h(ϰ ⊔ ϑ)` for `ϰ` disjoint from `ϑ`.
///
/// The returned tensors keep all legs of `ϰ ⊔ ϑ` in sorted grid order, so
/// for `d = 1` they are scalars and in general the `ϑ`-legs stay free.
pub fn annihilate(theta: &Chain, h: &FockVector) -> BTreeMap<Chain, Vec<C64>> {
    let mut out = BTreeMap::new();
    for (chain, tensor) in &h.entries {
        if theta.is_subset(chain) {
            out.insert(chain.minus(theta), tensor.clone());
        }
    }
    out
}

/// Two-chain map with tensors over the sorted union of both chains.
pub type TwoChainMap = BTreeMap<(Chain, Chain), Vec<C64>>;

/// Creation `[a*f](ω) = Σ_{ϑ⊆ω} f(ϑ, ω∖ϑ)`.
pub fn create(grid: &Arc<Grid>, f: &TwoChainMap) -> FockVector {
    let mut out = FockVector::zero(grid);
    for ((theta, upsilon), tensor) in f {
        let omega = theta
            .union(upsilon)
            .expect("two-chain map keys must be disjoint (diagonal-free)");
        if omega.len() > grid.n_max {
            continue;
        }
        let slot = out
            .entries
            .entry(omega.clone())
            .or_insert_with(|| vec![C64::new(0.0, 0.0); FockVector::tensor_len(grid, &omega)]);
        for (a, b) in slot.iter_mut().zip(tensor) {
            *a += b;
        }
    }
    out
}

/// Scalar two-chain function for the sum-integral identity.
pub type TwoChainScalar = BTreeMap<(Chain, Chain), C64>;

/// Discrete sum-integral identity:
/// `Σ_ω w(ω) Σ_{ϑ⊆ω} f(ϑ, ω∖ϑ) = Σ_{ϑ∩υ=∅} w(ϑ) w(υ) f(ϑ, υ)`.
/// Returns the absolute difference of the two evaluations.
pub fn sum_integral_check(grid: &Grid, f: &TwoChainScalar) -> f64 {
    let mut lhs = C64::new(0.0, 0.0);
    // Group by ω = ϑ⊔υ and apply the single weight w(ω).
    let mut grouped: BTreeMap<Chain, C64> = BTreeMap::new();
    for ((theta, upsilon), v) in f {
        let omega = theta.union(upsilon).expect("keys must be disjoint");
        if omega.len() > grid.n_max {
            continue;
        }
        *grouped.entry(omega).or_insert(C64::new(0.0, 0.0)) += v;
    }
    for (omega, v) in grouped {
        lhs += C64::new(omega.weight(grid), 0.0) * v;
    }
    let mut rhs = C64::new(0.0, 0.0);
    for ((theta, upsilon), v) in f {
        if theta.len() + upsilon.len() > grid.n_max {
            continue;
        }
        rhs += C64::new(theta.weight(grid) * upsilon.weight(grid), 0.0) * v;
    }
    (lhs - rhs).norm()
}

/// Residual of the annihilation isometry
/// `‖ah‖(1/r, p) = ‖h‖(1/r + p)` restated on the grid:
/// `Σ_ϑ (1/r)(ϑ) w(ϑ) ‖ḣ(ϑ)‖²_p = ‖h‖²_{1/r+p}`.
pub fn annihilation_isometry_check(h: &FockVector, r: &WeightFunction, p: &WeightFunction) -> f64 {
    let grid = &h.grid;
    let rinv = r.recip();
    let mut lhs = 0.0;
    for chain in grid.all_chains() {
        let dotted = annihilate(&chain, h);
        let mut n2 = 0.0;
        for (kappa, tensor) in &dotted {
            let w = kappa.weight(grid) * p.of_chain(kappa);
            n2 += w * tensor.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        lhs += rinv.of_chain(&chain) * chain.weight(grid) * n2;
    }
    let combined = rinv.add(p);
    let rhs = norm_weighted(h, &combined).powi(2);
    (lhs - rhs).abs()
}

/// Dense basis for `H ⊗ F` on a truncated chain space: one basis state per
/// `(chain, tensor index, initial-space index)` triple.
///
/// Basis order: chains in [`Grid::all_chains`] order; within a chain, the
/// initial-space index is the slowest, then the flat tensor index. This
/// matches the kernel-block layout `(h, legs)` so blocks scatter directly.
#[derive(Debug, Clone)]
pub struct HFockBasis {
    pub grid: Arc<Grid>,
    pub dim_h: usize,
    pub chains: Vec<Chain>,
    offsets: HashMap<Chain, usize>,
    pub dim: usize,
}

impl HFockBasis {
    pub fn new(grid: &Arc<Grid>, dim_h: usize) -> Self {
        let chains = grid.all_chains();
        let mut offsets = HashMap::new();
        let mut dim = 0;
        for chain in &chains {
            offsets.insert(chain.clone(), dim);
            dim += dim_h * FockVector::tensor_len(grid, chain);
        }
        HFockBasis { grid: Arc::clone(grid), dim_h, chains, offsets, dim }
    }

    pub fn chain_offset(&self, chain: &Chain) -> usize {
        *self.offsets.get(chain).expect("chain not in basis (exceeds N_max?)")
    }

    /// Index of the state `(h, chain, flat tensor index)`.
    pub fn index_of(&self, h: usize, chain: &Chain, m: usize) -> usize {
        let block = FockVector::tensor_len(&self.grid, chain);
        self.chain_offset(chain) + h * block + m
    }

    /// Inverse of `index_of`: the `(h, chain, flat tensor index)` of a
    /// dense basis index.
    pub fn decode(&self, idx: usize) -> (usize, Chain, usize) {
        for chain in &self.chains {
            let off = self.chain_offset(chain);
            let block = FockVector::tensor_len(&self.grid, chain);
            if idx < off + self.dim_h * block {
                let rel = idx - off;
                return (rel / block, chain.clone(), rel % block);
            }
        }
        panic!("basis index {idx} out of range");
    }

    /// Chain weights per basis state, as a diagonal.
    pub fn weight_diag(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        for chain in &self.chains {
            let cw = chain.weight(&self.grid);
            let block = self.dim_h * FockVector::tensor_len(&self.grid, chain);
            let off = self.chain_offset(chain);
            for i in 0..block {
                w[off + i] = cw;
            }
        }
        w
    }

    /// Dense vector of a Fock vector placed in initial-space component `h`.
    pub fn densify(&self, f: &FockVector, h: usize) -> crate::CVec {
        let mut v = crate::CVec::from_element(self.dim, C64::new(0.0, 0.0));
        for (chain, tensor) in &f.entries {
            for (m, z) in tensor.iter().enumerate() {
                v[self.index_of(h, chain, m)] = *z;
            }
        }
        v
    }

    /// Adjoint with respect to the weighted inner product
    /// `Σ_ϰ w(ϰ)⟨·|·⟩`: `M⋆ = W⁻¹ M† W`.
    pub fn weighted_adjoint(&self, m: &crate::CMat) -> crate::CMat {
        let w = self.weight_diag();
        let mut out = m.adjoint();
        for r in 0..out.nrows() {
            for c in 0..out.ncols() {
                out[(r, c)] *= C64::new(w[c] / w[r], 0.0);
            }
        }
        out
    }

    /// Largest singular value of `M` as a map between weighted spaces:
    /// `‖M h‖_{p_out} / ‖h‖_{p_in}` with norms `Σ p(ϰ) w(ϰ) ‖·‖²`.
    pub fn weighted_op_norm(&self, m: &crate::CMat, p_out: &WeightFunction, p_in: &WeightFunction) -> f64 {
        let w = self.weight_diag();
        let mut scaled = m.clone();
        // D_out^{1/2} M D_in^{-1/2} with D = diag(p(ϰ) w(ϰ)).
        let mut state = 0;
        let mut pout = vec![0.0; self.dim];
        let mut pin = vec![0.0; self.dim];
        for chain in &self.chains {
            let block = self.dim_h * FockVector::tensor_len(&self.grid, chain);
            for _ in 0..block {
                pout[state] = p_out.of_chain(chain) * w[state];
                pin[state] = p_in.of_chain(chain) * w[state];
                state += 1;
            }
        }
        for r in 0..scaled.nrows() {
            for c in 0..scaled.ncols() {
                scaled[(r, c)] *= C64::new((pout[r] / pin[c]).sqrt(), 0.0);
            }
        }
        scaled.svd(false, false).singular_values.iter().cloned().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_fock(grid: &Arc<Grid>, rng: &mut rand_chacha::ChaCha8Rng) -> FockVector {
        let mut f = FockVector::zero(grid);
        for chain in grid.all_chains() {
            let len = FockVector::tensor_len(grid, &chain);
            let tensor = (0..len)
                .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            f.set(chain, tensor);
        }
        f
    }

    #[test]
    fn chain_weights() {
        let grid = Grid::new(vec![0.0, 1.0, 2.0], vec![0.5, 1.0, 0.25], 1, 3).unwrap();
        assert_eq!(Chain::empty().weight(&grid), 1.0);
        assert_eq!(Chain::single(0).weight(&grid), 0.5);
        assert_eq!(Chain::new(vec![0, 2]).weight(&grid), 0.125);
        // Multiplicativity over disjoint unions.
        let a = Chain::single(1);
        let b = Chain::new(vec![0, 2]);
        let u = a.union(&b).unwrap();
        assert_eq!(u.weight(&grid), a.weight(&grid) * b.weight(&grid));
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid::new(vec![0.0, 0.0], vec![1.0, 1.0], 1, 2).is_err());
        assert!(Grid::new(vec![0.0, 1.0], vec![1.0, 0.0], 1, 2).is_err());
    }

    #[test]
    fn exponential_vector_inner() {
        // 2-point grid, d = 1, Δ = (1,1), k ≡ 1: inner = 4 with N_max = 2.
        let grid = Grid::new(vec![0.0, 1.0], vec![1.0, 1.0], 1, 2).unwrap();
        let k = vec![vec![c(1.0, 0.0)], vec![c(1.0, 0.0)]];
        let f = exp_vector(&grid, &k);
        let ip = inner(&f, &f);
        assert!((ip - c(4.0, 0.0)).norm() <= 1e-14);
        // Vacuum from k = 0.
        let z = exp_vector(&grid, &vec![vec![c(0.0, 0.0)]; 2]);
        assert!((inner(&z, &z) - c(1.0, 0.0)).norm() == 0.0);
    }

    #[test]
    fn exponential_inner_matches_exp_up_to_tail() {
        let grid = Grid::uniform(4, 0.3, 1, 4);
        let k: Vec<Vec<C64>> = (0..4).map(|i| vec![c(0.2 + 0.05 * i as f64, 0.1)]).collect();
        let kp: Vec<Vec<C64>> = (0..4).map(|i| vec![c(0.15, -0.02 * i as f64)]).collect();
        let f = exp_vector(&grid, &k);
        let h = exp_vector(&grid, &kp);
        let expect: C64 = (0..4)
            .map(|x| {
                let dot: C64 = k[x].iter().zip(&kp[x]).map(|(a, b)| a.conj() * b).sum();
                dot * c(grid.weights[x], 0.0)
            })
            .fold(c(0.0, 0.0), |acc, v| acc + v)
            .exp();
        // N_max = n means no truncation on this grid: the discrete identity
        // ⟨k⊗|k'⊗⟩ = ∏(1 + ⟨k|k'⟩Δ) ≈ exp(Σ⟨k|k'⟩Δ) holds with the product form.
        let product: C64 = (0..4)
            .map(|x| {
                let dot: C64 = k[x].iter().zip(&kp[x]).map(|(a, b)| a.conj() * b).sum();
                c(1.0, 0.0) + dot * c(grid.weights[x], 0.0)
            })
            .product();
        assert!((inner(&f, &h) - product).norm() <= 1e-12);
        // And the continuum exponential only up to quadrature error.
        assert!((inner(&f, &h) - expect).norm() < 0.05);
    }

    #[test]
    fn annihilate_basics() {
        let grid = Grid::uniform(3, 1.0, 1, 3);
        let mut rng = rng(1);
        let h = random_fock(&grid, &mut rng);
        // ϑ = ∅ leaves h unchanged.
        let same = annihilate(&Chain::empty(), &h);
        assert_eq!(same, h.entries);
        // Definition at a point.
        let th = Chain::new(vec![0, 1]);
        let dotted = annihilate(&th, &h);
        assert_eq!(dotted[&Chain::empty()], h.entries[&th]);
        // Exponential vector eigen-relation: annihilate({x}, exp) = k(x)·exp entries.
        let k: Vec<Vec<C64>> = (0..3).map(|i| vec![c(0.5 + i as f64, 0.25)]).collect();
        let e = exp_vector(&grid, &k);
        let dotted = annihilate(&Chain::single(2), &e);
        for (chain, tensor) in &dotted {
            if chain.len() >= grid.n_max {
                continue;
            }
            let expect: Vec<C64> = e.entries[chain].iter().map(|z| z * k[2][0]).collect();
            for (a, b) in tensor.iter().zip(&expect) {
                assert!((a - b).norm() <= 1e-14);
            }
        }
    }

    #[test]
    fn create_annihilate_adjoint() {
        let grid = Grid::uniform(4, 0.7, 1, 4);
        let mut rng = rng(2);
        let h = random_fock(&grid, &mut rng);
        let mut f: TwoChainMap = BTreeMap::new();
        for chain in grid.all_chains() {
            for (sub, rest) in chain.splittings() {
                let len = FockVector::tensor_len(&grid, &chain);
                let tensor = (0..len)
                    .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect();
                f.insert((sub, rest), tensor);
            }
        }
        let created = create(&grid, &f);
        let lhs = inner(&created, &h);
        let mut rhs = c(0.0, 0.0);
        for theta in grid.all_chains() {
            let dotted = annihilate(&theta, &h);
            let wt = theta.weight(&grid);
            for (upsilon, tensor) in &dotted {
                if let Some(ft) = f.get(&(theta.clone(), upsilon.clone())) {
                    let wu = upsilon.weight(&grid);
                    let dot: C64 = ft.iter().zip(tensor).map(|(a, b)| a.conj() * b).sum();
                    rhs += c(wt * wu, 0.0) * dot;
                }
            }
        }
        assert!((lhs - rhs).norm() <= 1e-12, "adjointness residual {}", (lhs - rhs).norm());
    }

    #[test]
    fn create_from_empty_slot_only() {
        let grid = Grid::uniform(2, 1.0, 1, 2);
        let mut f: TwoChainMap = BTreeMap::new();
        f.insert((Chain::empty(), Chain::single(0)), vec![c(3.0, 1.0)]);
        let made = create(&grid, &f);
        assert_eq!(made.entries[&Chain::single(0)], vec![c(3.0, 1.0)]);
    }

    #[test]
    fn sum_integral_identity() {
        let grid = Grid::new(
            vec![0.0, 0.5, 1.2, 2.0, 3.5],
            vec![0.5, 0.7, 0.8, 1.5, 0.6],
            1,
            5,
        )
        .unwrap();
        let mut rng = rng(3);
        for _ in 0..100 {
            let mut f: TwoChainScalar = BTreeMap::new();
            for chain in grid.all_chains() {
                for (sub, rest) in chain.splittings() {
                    if rng.gen_bool(0.4) {
                        f.insert((sub, rest), c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                    }
                }
            }
            let residual = sum_integral_check(&grid, &f);
            assert!(residual <= 1e-12, "residual {residual}");
        }
        assert_eq!(sum_integral_check(&grid, &BTreeMap::new()), 0.0);
    }

    #[test]
    fn annihilation_isometry() {
        let grid = Grid::uniform(3, 0.8, 1, 3);
        let mut rng = rng(4);
        let h = random_fock(&grid, &mut rng);
        let r = WeightFunction::new(vec![2.0, 0.5, 1.25]);
        let p = WeightFunction::new(vec![1.0, 3.0, 0.75]);
        let residual = annihilation_isometry_check(&h, &r, &p);
        assert!(residual <= 1e-12, "residual {residual}");
    }

    #[test]
    fn dense_basis_roundtrip() {
        let grid = Grid::uniform(3, 1.0, 2, 2);
        let basis = HFockBasis::new(&grid, 1);
        let mut rng = rng(5);
        let mut f = FockVector::zero(&grid);
        for chain in grid.all_chains() {
            let len = FockVector::tensor_len(&grid, &chain);
            f.set(
                chain,
                (0..len).map(|_| c(rng.gen_range(-1.0..1.0), 0.0)).collect(),
            );
        }
        let dense = basis.densify(&f, 0);
        // Weighted inner product agrees with the sparse one.
        let w = basis.weight_diag();
        let dense_ip: C64 = dense
            .iter()
            .enumerate()
            .map(|(i, z)| z.conj() * z * c(w[i], 0.0))
            .sum();
        assert!((dense_ip - inner(&f, &f)).norm() <= 1e-12);
    }
}
