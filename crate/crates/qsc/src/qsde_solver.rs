//! Quantum stochastic differential equations solved by chronological kernel
//! products.
//!
//! A generator assigns to every grid point a triangular block matrix
//! `S(x) = [[1, S_cm, S_pm], [0, S_cc, S_pc], [0, 0, 1]]` on the
//! pseudo-Euclidean column `ℂ ⊕ K_x ⊕ ℂ` over the initial space. The lattice
//! solution of `T_t = T_0^t + i_0^t(T·A^t)` with
//! `A^t(x) = (S(x) − 1̂)(U_{t(x)}^t ⊗ 1)` is the time-ordered kernel product
//! of per-point factors: the scalar corner `S_pm` drives a deterministic
//! evolution family, the remaining blocks act as exchange, creation and
//! annihilation deviations at their point. On the lattice this fixed point
//! holds exactly, and pseudo-unitary generators produce (up to explicit
//! step-size defects in the annihilation sector) unitary evolutions.
//!
//! The module also provides the exponential generator built from a
//! pseudo-selfadjoint triangular Hamiltonian, its canonical splitting into
//! commuting Poissonian, Brownian and Lebesgue evolutions, semi-tensor
//! chronological products for adapted generators, and the exponential norm
//! estimate for the solved evolution.

use std::sync::Arc;

use thiserror::Error;

use crate::chain_fock::{Chain, Grid, HFockBasis, WeightFunction};
use crate::kernel_calc::{
    epsilon_matrix, kernel_mul, ChainQuad, KernelError, KernelTable,
};
use crate::qs_integral::{
    single_integral_matrix, IntegralError, IntegrandQuadruple, NormReport,
};
use crate::{max_abs, C64, CMat};

#[derive(Debug, Error)]
pub enum QsdeError {
    #[error("kernel algebra failure: {0}")]
    Kernel(#[from] KernelError),
    #[error("integral failure: {0}")]
    Integral(#[from] IntegralError),
    #[error("generator block has wrong shape")]
    ShapeMismatch,
    #[error("Hamiltonian blocks are not pseudo-selfadjoint (residual {0:.3e})")]
    NotPseudoSelfadjoint(f64),
    #[error("could not diagonalize the exchange block of the generator")]
    DegenerateExchange,
}

fn cr(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn ci(x: f64) -> C64 {
    C64::new(0.0, x)
}

/// Spectral norm (largest singular value).
fn op2(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Per-point triangular generator blocks of a quantum stochastic equation.
///
/// For each grid point `x` the four nontrivial blocks of the triangular
/// matrix `S(x)` are stored densely: `s_cc[x]` is square on `H ⊗ K_x`,
/// `s_pc[x]` a column `H → H ⊗ K_x`, `s_cm[x]` a row `H ⊗ K_x → H` and
/// `s_pm[x]` a corner on `H`. The leg index is fastest: a row of `s_cc` is
/// `h·d + k`.
#[derive(Debug, Clone)]
pub struct GeneratorS {
    pub grid: Arc<Grid>,
    pub dim_h: usize,
    pub s_pm: Vec<CMat>,
    pub s_cm: Vec<CMat>,
    pub s_pc: Vec<CMat>,
    pub s_cc: Vec<CMat>,
}

impl GeneratorS {
    /// The unit generator `S(x) = 1̂`: exchange identity, all other blocks
    /// zero.
    pub fn identity(grid: &Arc<Grid>, dim_h: usize) -> Self {
        let d = grid.d;
        GeneratorS {
            grid: grid.clone(),
            dim_h,
            s_pm: vec![CMat::zeros(dim_h, dim_h); grid.n],
            s_cm: vec![CMat::zeros(dim_h, dim_h * d); grid.n],
            s_pc: vec![CMat::zeros(dim_h * d, dim_h); grid.n],
            s_cc: vec![CMat::identity(dim_h * d, dim_h * d); grid.n],
        }
    }

    pub fn check_shapes(&self) -> Result<(), QsdeError> {
        let d = self.grid.d;
        let h = self.dim_h;
        let n = self.grid.n;
        let ok = self.s_pm.len() == n
            && self.s_cm.len() == n
            && self.s_pc.len() == n
            && self.s_cc.len() == n
            && self.s_pm.iter().all(|m| m.shape() == (h, h))
            && self.s_cm.iter().all(|m| m.shape() == (h, h * d))
            && self.s_pc.iter().all(|m| m.shape() == (h * d, h))
            && self.s_cc.iter().all(|m| m.shape() == (h * d, h * d));
        if ok {
            Ok(())
        } else {
            Err(QsdeError::ShapeMismatch)
        }
    }

    /// The assembled triangular matrix `[[1, S_cm, S_pm], [0, S_cc, S_pc],
    /// [0, 0, 1]]` at point `x`, of side `dim_h·(2 + d)`.
    pub fn assembled(&self, x: usize) -> CMat {
        self.assemble_blocks(
            &self.s_pm[x],
            &self.s_cm[x],
            &self.s_pc[x],
            &self.s_cc[x],
        )
    }

    /// The pseudo-adjoint `S†` of the assembled matrix: conjugation composed
    /// with reflection across the anti-diagonal of the block grid.
    pub fn assembled_dagger(&self, x: usize) -> CMat {
        self.assemble_blocks(
            &self.s_pm[x].adjoint(),
            &self.s_pc[x].adjoint(),
            &self.s_cm[x].adjoint(),
            &self.s_cc[x].adjoint(),
        )
    }

    fn assemble_blocks(&self, pm: &CMat, cm: &CMat, pc: &CMat, cc: &CMat) -> CMat {
        let h = self.dim_h;
        let mid = h * self.grid.d;
        let n = 2 * h + mid;
        let mut m = CMat::zeros(n, n);
        m.view_mut((0, 0), (h, h)).copy_from(&CMat::identity(h, h));
        m.view_mut((n - h, n - h), (h, h))
            .copy_from(&CMat::identity(h, h));
        m.view_mut((0, h), (h, mid)).copy_from(cm);
        m.view_mut((0, h + mid), (h, h)).copy_from(pm);
        m.view_mut((h, h), (mid, mid)).copy_from(cc);
        m.view_mut((h, h + mid), (mid, h)).copy_from(pc);
        m
    }
}

/// Residuals of the block identities equivalent to `S†S = 1̂`, maximized
/// over grid points.
#[derive(Debug, Clone)]
pub struct PseudoUnitarityReport {
    /// `‖S_cc*S_cc − I‖∞`: the exchange block must be unitary.
    pub exchange: f64,
    /// `‖S_pm* + S_pc*S_pc + S_pm‖∞`: the corner compensates the creation
    /// intensity.
    pub corner: f64,
    /// `‖S_cm* + S_cc*S_pc‖∞`.
    pub row: f64,
    /// `‖S_pc*S_cc + S_cm‖∞`.
    pub column: f64,
    /// `‖S†S − 1̂‖∞` for the assembled triangular matrices.
    pub assembled: f64,
    pub pass: bool,
}

impl PseudoUnitarityReport {
    pub fn max(&self) -> f64 {
        self.exchange
            .max(self.corner)
            .max(self.row)
            .max(self.column)
            .max(self.assembled)
    }
}

/// Verify the four block identities of a pseudo-isometric generator together
/// with the assembled matrix identity `S†S = 1̂`.
pub fn pseudo_unitarity_check(s: &GeneratorS, tol: f64) -> PseudoUnitarityReport {
    let d = s.grid.d;
    let h = s.dim_h;
    let eye_cc = CMat::identity(h * d, h * d);
    let eye_full = CMat::identity(2 * h + h * d, 2 * h + h * d);
    let mut r = PseudoUnitarityReport {
        exchange: 0.0,
        corner: 0.0,
        row: 0.0,
        column: 0.0,
        assembled: 0.0,
        pass: false,
    };
    for x in 0..s.grid.n {
        let cc = &s.s_cc[x];
        let pc = &s.s_pc[x];
        let cm = &s.s_cm[x];
        let pm = &s.s_pm[x];
        r.exchange = r.exchange.max(max_abs(&(cc.adjoint() * cc - &eye_cc)));
        r.corner = r
            .corner
            .max(max_abs(&(pm.adjoint() + pc.adjoint() * pc + pm)));
        r.row = r.row.max(max_abs(&(cm.adjoint() + cc.adjoint() * pc)));
        r.column = r.column.max(max_abs(&(pc.adjoint() * cc + cm)));
        let asm = s.assembled_dagger(x) * s.assembled(x) - &eye_full;
        r.assembled = r.assembled.max(max_abs(&asm));
    }
    r.pass = r.max() <= tol;
    r
}

/// Deterministic evolution family generated by the scalar corners `S_pm`.
///
/// On the lattice `U_s^t` is the time-ordered product of the one-step
/// factors `1 + Δ_x S_pm(x)` over grid points in `[s, t)`, equivalently the
/// weighted sum over subchains of ordered corner products. The product form
/// makes the consistency `U_r^s U_s^t = U_r^t` exact on grid cuts.
#[derive(Debug, Clone)]
pub struct EvolutionFamily {
    pub grid: Arc<Grid>,
    pub dim_h: usize,
    pub s_pm: Vec<CMat>,
}

impl EvolutionFamily {
    /// `U_s^t` as the ordered product of one-step factors, earliest factor
    /// leftmost.
    pub fn op(&self, s: f64, t: f64) -> CMat {
        let mut u = CMat::identity(self.dim_h, self.dim_h);
        for x in 0..self.grid.n {
            let tx = self.grid.times[x];
            if tx >= s && tx < t {
                let step = CMat::identity(self.dim_h, self.dim_h)
                    + &self.s_pm[x] * cr(self.grid.weights[x]);
                u *= step;
            }
        }
        u
    }

    /// `U_s^t` as the chronological series `Σ_ϑ w(ϑ) ∏→ S_pm(x)` over
    /// subchains of `[s, t)`; equal to [`EvolutionFamily::op`] by expanding
    /// the product.
    pub fn series_op(&self, s: f64, t: f64) -> CMat {
        let pts: Vec<usize> = (0..self.grid.n)
            .filter(|&x| self.grid.times[x] >= s && self.grid.times[x] < t)
            .collect();
        let mut u = CMat::zeros(self.dim_h, self.dim_h);
        for theta in Chain::new(pts).subsets() {
            let mut term = CMat::identity(self.dim_h, self.dim_h);
            let mut w = 1.0;
            for &x in &theta.0 {
                term *= &self.s_pm[x];
                w *= self.grid.weights[x];
            }
            u += term * cr(w);
        }
        u
    }

    /// Largest violation of `U_r^s U_s^t = U_r^t` over all ordered triples
    /// of grid cuts.
    pub fn consistency_residual(&self) -> f64 {
        let mut cuts = vec![0.0];
        cuts.extend(self.grid.times.iter().cloned());
        cuts.push(self.grid.times.last().copied().unwrap_or(0.0) + 1.0);
        let mut worst: f64 = 0.0;
        for i in 0..cuts.len() {
            for j in i..cuts.len() {
                for k in j..cuts.len() {
                    let lhs = self.op(cuts[i], cuts[j]) * self.op(cuts[j], cuts[k]);
                    worst = worst.max(max_abs(&(lhs - self.op(cuts[i], cuts[k]))));
                }
            }
        }
        worst
    }
}

/// The evolution family attached to the scalar corners of a generator.
pub fn evolution_family(s: &GeneratorS) -> EvolutionFamily {
    EvolutionFamily {
        grid: s.grid.clone(),
        dim_h: s.dim_h,
        s_pm: s.s_pm.clone(),
    }
}

// ---------------------------------------------------------------------------
// Per-point kernel factories.
// ---------------------------------------------------------------------------

/// Embed a square exchange block at the leg of `x` inside the chain `cc`,
/// identity on the remaining legs.
fn embed_exchange(s_cc: &CMat, x: usize, cc: &Chain, dim_h: usize, d: usize) -> CMat {
    let l = cc.len();
    let dl = d.pow(l as u32);
    let pos = cc.position(x).unwrap();
    let idx = crate::chain_fock::multi_indices(d, l);
    let mut out = CMat::zeros(dim_h * dl, dim_h * dl);
    for (mo, ao) in idx.iter().enumerate() {
        for (mi, ai) in idx.iter().enumerate() {
            if (0..l).any(|p| p != pos && ao[p] != ai[p]) {
                continue;
            }
            for ho in 0..dim_h {
                for hi in 0..dim_h {
                    out[(ho * dl + mo, hi * dl + mi)] =
                        s_cc[(ho * d + ao[pos], hi * d + ai[pos])];
                }
            }
        }
    }
    out
}

/// Embed a creation column at `x` over the exchange chain `cc` (which must
/// not contain `x`): output legs `cc ⊔ {x}`, input legs `cc`.
fn embed_creation(s_pc: &CMat, x: usize, cc: &Chain, dim_h: usize, d: usize) -> CMat {
    let l = cc.len();
    let dl_in = d.pow(l as u32);
    let big = cc.union(&Chain::single(x)).unwrap();
    let pos = big.position(x).unwrap();
    let dl_out = d.pow((l + 1) as u32);
    let idx_out = crate::chain_fock::multi_indices(d, l + 1);
    let mut out = CMat::zeros(dim_h * dl_out, dim_h * dl_in);
    for (mo, ao) in idx_out.iter().enumerate() {
        let mut rest = ao.clone();
        let k = rest.remove(pos);
        let mi = crate::chain_fock::flat_index(d, &rest);
        for ho in 0..dim_h {
            for hi in 0..dim_h {
                out[(ho * dl_out + mo, hi * dl_in + mi)] = s_pc[(ho * d + k, hi)];
            }
        }
    }
    out
}

/// Embed an annihilation row at `x` over the exchange chain `cc`: output
/// legs `cc`, input legs `cc ⊔ {x}`.
fn embed_annihilation(s_cm: &CMat, x: usize, cc: &Chain, dim_h: usize, d: usize) -> CMat {
    let l = cc.len();
    let dl_out = d.pow(l as u32);
    let big = cc.union(&Chain::single(x)).unwrap();
    let pos = big.position(x).unwrap();
    let dl_in = d.pow((l + 1) as u32);
    let idx_in = crate::chain_fock::multi_indices(d, l + 1);
    let mut out = CMat::zeros(dim_h * dl_out, dim_h * dl_in);
    for (mi, ai) in idx_in.iter().enumerate() {
        let mut rest = ai.clone();
        let k = rest.remove(pos);
        let mo = crate::chain_fock::flat_index(d, &rest);
        for ho in 0..dim_h {
            for hi in 0..dim_h {
                out[(ho * dl_out + mo, hi * dl_in + mi)] = s_cm[(ho, hi * d + k)];
            }
        }
    }
    out
}

/// Embed a scalar corner over the exchange chain `cc`: `m ⊗ I` on the legs.
fn embed_scalar(m: &CMat, cc: &Chain, dim_h: usize, d: usize) -> CMat {
    let dl = d.pow(cc.len() as u32);
    let mut out = CMat::zeros(dim_h * dl, dim_h * dl);
    for ho in 0..dim_h {
        for hi in 0..dim_h {
            for leg in 0..dl {
                out[(ho * dl + leg, hi * dl + leg)] = m[(ho, hi)];
            }
        }
    }
    out
}

/// The kernel of an initial-space operator: `m ⊗ I` padded over every
/// exchange chain.
pub fn constant_kernel(grid: &Arc<Grid>, dim_h: usize, m: &CMat) -> KernelTable {
    let mut k = KernelTable::new(grid, dim_h);
    for cc in grid.all_chains() {
        let block = embed_scalar(m, &cc, dim_h, grid.d);
        k.insert(
            ChainQuad::new(Chain::empty(), Chain::empty(), Chain::empty(), cc),
            block,
        )
        .unwrap();
    }
    k
}

/// The scalar one-step kernel at `x`: identity plus the corner `S_pm(x)` in
/// the scalar slot, padded over every exchange chain avoiding `x`.
pub fn pm_step_kernel(s: &GeneratorS, x: usize) -> KernelTable {
    let grid = &s.grid;
    let mut k = KernelTable::identity(grid, s.dim_h);
    for cc in grid.all_chains() {
        if cc.contains(x) || cc.len() >= grid.n_max + 1 {
            continue;
        }
        let block = embed_scalar(&s.s_pm[x], &cc, s.dim_h, grid.d);
        k.insert(
            ChainQuad::new(Chain::single(x), Chain::empty(), Chain::empty(), cc),
            block,
        )
        .unwrap();
    }
    k
}

/// The stochastic deviation kernel at `x`: `S_cc − I` on exchange chains
/// through `x`, `S_pc` and `S_cm` in atomic creation and annihilation slots,
/// all identity-padded on the remaining legs. No scalar part.
pub fn deviation_kernel(s: &GeneratorS, x: usize) -> KernelTable {
    let grid = &s.grid;
    let d = grid.d;
    let dim_h = s.dim_h;
    let mut k = KernelTable::new(grid, dim_h);
    let eye = CMat::identity(dim_h * d, dim_h * d);
    let dev_cc = &s.s_cc[x] - eye;
    for cc in grid.all_chains() {
        if cc.contains(x) {
            let block = embed_exchange(&dev_cc, x, &cc, dim_h, d);
            k.insert(
                ChainQuad::new(Chain::empty(), Chain::empty(), Chain::empty(), cc),
                block,
            )
            .unwrap();
        } else if cc.len() + 1 <= grid.n_max {
            k.insert(
                ChainQuad::new(Chain::empty(), Chain::empty(), Chain::single(x), cc.clone()),
                embed_creation(&s.s_pc[x], x, &cc, dim_h, d),
            )
            .unwrap();
            k.insert(
                ChainQuad::new(Chain::empty(), Chain::single(x), Chain::empty(), cc.clone()),
                embed_annihilation(&s.s_cm[x], x, &cc, dim_h, d),
            )
            .unwrap();
        }
    }
    k.entries.retain(|_, b| max_abs(b) != 0.0);
    k
}

/// The full per-point chronological factor: `(1̂ + deviations)` followed by
/// the scalar one-step evolution at the same point.
pub fn point_factor(s: &GeneratorS, x: usize) -> Result<KernelTable, QsdeError> {
    let g = KernelTable::identity(&s.grid, s.dim_h).add(&deviation_kernel(s, x))?;
    Ok(kernel_mul(&g, &pm_step_kernel(s, x))?)
}

/// Kernel of the deterministic evolution over `[from, to)`: the ordered
/// product of scalar one-step kernels.
pub fn evolution_kernel(s: &GeneratorS, from: f64, to: f64) -> Result<KernelTable, QsdeError> {
    let mut k = KernelTable::identity(&s.grid, s.dim_h);
    for x in 0..s.grid.n {
        let tx = s.grid.times[x];
        if tx >= from && tx < to {
            k = kernel_mul(&k, &pm_step_kernel(s, x))?;
        }
    }
    Ok(k)
}

/// Chronological product of kernel families.
///
/// With grid points `x_1 < … < x_n` before `t`, returns
/// `K_0^{t(x_1)} · F_{x_1}^{t(x_2)} · … · F_{x_n}^t`: the initial family
/// cut at the first point, then one factor per point cut at the next point
/// (the last at `t`). The factors are multiplied with the kernel product,
/// later factors on the right.
pub fn chrono_product<K0, FX>(
    grid: &Arc<Grid>,
    k0: K0,
    f: FX,
    t: f64,
) -> Result<KernelTable, QsdeError>
where
    K0: Fn(f64) -> Result<KernelTable, QsdeError>,
    FX: Fn(usize, f64) -> Result<KernelTable, QsdeError>,
{
    let pts = grid.points_before(t);
    if pts.is_empty() {
        return k0(t);
    }
    let mut k = k0(grid.times[pts[0]])?;
    for (i, &x) in pts.iter().enumerate() {
        let cut = if i + 1 < pts.len() {
            grid.times[pts[i + 1]]
        } else {
            t
        };
        k = kernel_mul(&k, &f(x, cut)?)?;
    }
    Ok(k)
}

/// The solution kernel `K_t` of the stochastic equation driven by `s` with
/// initial kernel `t0`: the chronological product of the per-point factors.
pub fn solve_kernel(
    t0: &KernelTable,
    s: &GeneratorS,
    t: f64,
) -> Result<KernelTable, QsdeError> {
    chrono_product(
        &s.grid,
        |cut| Ok(kernel_mul(t0, &evolution_kernel(s, 0.0, cut)?)?),
        |x, cut| {
            let fx = point_factor(s, x)?;
            let tail = evolution_kernel(s, next_time(&s.grid, x), cut)?;
            Ok(kernel_mul(&fx, &tail)?)
        },
        t,
    )
}

/// The first grid time strictly after the point `x` (or just past the end).
fn next_time(grid: &Grid, x: usize) -> f64 {
    let tx = grid.times[x];
    grid.times
        .iter()
        .cloned()
        .filter(|&s| s > tx)
        .fold(tx + 1.0 + grid.weights[x], f64::min)
}

// ---------------------------------------------------------------------------
// Dense generator ampliations and the fixed-point residual.
// ---------------------------------------------------------------------------

/// `m ⊗ I_d` with the leg index fastest.
fn tensor_leg(m: &CMat, d: usize) -> CMat {
    let mut out = CMat::zeros(m.nrows() * d, m.ncols() * d);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            for k in 0..d {
                out[(r * d + k, c * d + k)] = m[(r, c)];
            }
        }
    }
    out
}

/// Ampliate an initial-space-with-leg block to the dense Fock basis with one
/// exposed leg on each side: acts on `(h, leg)`, identity on the chain part.
fn amp_exchange(s_cc: &CMat, basis: &HFockBasis) -> CMat {
    let d = basis.grid.d;
    let dim = basis.dim;
    let mut out = CMat::zeros(dim * d, dim * d);
    for f in 0..dim {
        let (h, chain, m) = basis.decode(f);
        for hp in 0..basis.dim_h {
            let fp = basis.index_of(hp, &chain, m);
            for k in 0..d {
                for kp in 0..d {
                    out[(f * d + k, fp * d + kp)] = s_cc[(h * d + k, hp * d + kp)];
                }
            }
        }
    }
    out
}

/// Ampliated creation column: one exposed output leg.
fn amp_creation(s_pc: &CMat, basis: &HFockBasis) -> CMat {
    let d = basis.grid.d;
    let dim = basis.dim;
    let mut out = CMat::zeros(dim * d, dim);
    for f in 0..dim {
        let (h, chain, m) = basis.decode(f);
        for hp in 0..basis.dim_h {
            let fp = basis.index_of(hp, &chain, m);
            for k in 0..d {
                out[(f * d + k, fp)] = s_pc[(h * d + k, hp)];
            }
        }
    }
    out
}

/// Ampliated annihilation row: one exposed input leg.
fn amp_annihilation(s_cm: &CMat, basis: &HFockBasis) -> CMat {
    let d = basis.grid.d;
    let dim = basis.dim;
    let mut out = CMat::zeros(dim, dim * d);
    for f in 0..dim {
        let (h, chain, m) = basis.decode(f);
        for hp in 0..basis.dim_h {
            let fp = basis.index_of(hp, &chain, m);
            for k in 0..d {
                out[(f, fp * d + k)] = s_cm[(h, hp * d + k)];
            }
        }
    }
    out
}

/// The quadruple `D(x) = T_{t(x)} · (S(x) − 1̂) · (U_{t(x)}^t ⊗ 1)` of the
/// fixed-point equation, with the solution process substituted.
pub fn generator_quadruple(
    t0: &KernelTable,
    s: &GeneratorS,
    t: f64,
    basis: &HFockBasis,
) -> Result<IntegrandQuadruple, QsdeError> {
    let grid = &s.grid;
    let d = grid.d;
    let mut dq = IntegrandQuadruple::zero(basis);
    let eye = CMat::identity(basis.dim_h * d, basis.dim_h * d);
    for &x in &grid.points_before(t) {
        let tx = epsilon_matrix(&solve_kernel(t0, s, grid.times[x])?, basis)?;
        let ux = epsilon_matrix(&evolution_kernel(s, grid.times[x], t)?, basis)?;
        // On sectors that already contain the point x, the one-step scalar
        // factor at x acts as the identity, so the leg-exposed tail starts
        // just after x.
        let ux_tail = epsilon_matrix(&evolution_kernel(s, next_time(grid, x), t)?, basis)?;
        let tx_leg = tensor_leg(&tx, d);
        let ux_leg = tensor_leg(&ux_tail, d);
        dq.d_cc[x] = &tx_leg * amp_exchange(&(&s.s_cc[x] - &eye), basis) * &ux_leg;
        dq.d_pc[x] = &tx_leg * amp_creation(&s.s_pc[x], basis) * &ux;
        dq.d_cm[x] = &tx * amp_annihilation(&s.s_cm[x], basis) * &ux_leg;
    }
    Ok(dq)
}

/// A solved stochastic equation with its lattice fixed-point residual.
#[derive(Debug, Clone)]
pub struct QsdeSolution {
    /// The chronological-product solution kernel `K_t`.
    pub kernel: KernelTable,
    /// The dense solution operator `T_t = ε(K_t)`.
    pub op: CMat,
    /// The free part `T_0^t = ε(T_0 · V_0^t)`.
    pub free_part: CMat,
    /// `‖T_t − T_0^t − i_0^t(T·A^t)‖∞`.
    pub residual: f64,
}

/// Solve `T_t = T_0^t + i_0^t(T·A^t)` by the chronological kernel product
/// and report the fixed-point residual of the dense solution.
pub fn solve_qsde(
    t0: &KernelTable,
    s: &GeneratorS,
    t: f64,
    basis: &HFockBasis,
) -> Result<QsdeSolution, QsdeError> {
    s.check_shapes()?;
    let kernel = solve_kernel(t0, s, t)?;
    let op = epsilon_matrix(&kernel, basis)?;
    let free_part = epsilon_matrix(&kernel_mul(t0, &evolution_kernel(s, 0.0, t)?)?, basis)?;
    let dq = generator_quadruple(t0, s, t, basis)?;
    let rhs = single_integral_matrix(&dq, t, basis)?;
    let residual = max_abs(&(&op - &free_part - rhs));
    Ok(QsdeSolution {
        kernel,
        op,
        free_part,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Exponential generators.
// ---------------------------------------------------------------------------

/// `φ(z) = (e^{iz} − 1)/(iz)`, by the convergent power series
/// `Σ (iz)^n/(n+1)!`.
pub fn phi_series(z: f64) -> C64 {
    let iz = ci(z);
    let mut term = cr(1.0);
    let mut sum = term;
    for n in 1..200 {
        term = term * iz / cr((n + 1) as f64);
        sum += term;
        if term.norm() < 1e-20 {
            break;
        }
    }
    sum
}

/// `φ(z)` by the closed form away from the removable singularity, by the
/// series for `|z| < 1e−4`.
pub fn phi_scalar(z: f64) -> C64 {
    if z.abs() < 1e-4 {
        phi_series(z)
    } else {
        let iz = ci(z);
        (iz.exp() - cr(1.0)) / iz
    }
}

/// `ψ(z) = (e^{iz} − 1 − iz)/z²`, by the series `−Σ (iz)^n/(n+2)!`.
pub fn psi_series(z: f64) -> C64 {
    let iz = ci(z);
    let mut term = cr(-0.5);
    let mut sum = term;
    for n in 1..200 {
        term = term * iz / cr((n + 2) as f64);
        sum += term;
        if term.norm() < 1e-20 {
            break;
        }
    }
    sum
}

/// `ψ(z)` with the same singularity policy as [`phi_scalar`].
pub fn psi_scalar(z: f64) -> C64 {
    if z.abs() < 1e-4 {
        psi_series(z)
    } else {
        let iz = ci(z);
        (iz.exp() - cr(1.0) - iz) / cr(z * z)
    }
}

/// Apply a scalar function to a Hermitian matrix through its eigensystem.
fn hermitian_func(m: &CMat, f: impl Fn(f64) -> C64) -> CMat {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut diag = CMat::zeros(n, n);
    for j in 0..n {
        diag[(j, j)] = f(eig.eigenvalues[j]);
    }
    &eig.eigenvectors * diag * eig.eigenvectors.adjoint()
}

/// Exponential generator `S(x) = exp(iH(x))` of a pseudo-selfadjoint
/// triangular Hamiltonian with blocks `H_cc` (Hermitian), `H_pc` and `H_pm`
/// (Hermitian); the row block is `H_cm = H_pc*`. The blocks of the
/// exponential are
///
/// `S_cc = e^{iH_cc}`, `S_pc = φ(H_cc)·iH_pc`, `S_cm = iH_cm·φ(H_cc)`,
/// `S_pm = H_cm·ψ(H_cc)·H_pc + iH_pm`,
///
/// with `φ(z) = (e^{iz} − 1)/(iz)` and `ψ(z) = (e^{iz} − 1 − iz)/z²`. The
/// result is exactly pseudo-unitary.
pub fn exp_generator(
    grid: &Arc<Grid>,
    dim_h: usize,
    h_cc: &[CMat],
    h_pc: &[CMat],
    h_pm: &[CMat],
) -> Result<GeneratorS, QsdeError> {
    let d = grid.d;
    if h_cc.len() != grid.n || h_pc.len() != grid.n || h_pm.len() != grid.n {
        return Err(QsdeError::ShapeMismatch);
    }
    let mut out = GeneratorS::identity(grid, dim_h);
    for x in 0..grid.n {
        if h_cc[x].shape() != (dim_h * d, dim_h * d)
            || h_pc[x].shape() != (dim_h * d, dim_h)
            || h_pm[x].shape() != (dim_h, dim_h)
        {
            return Err(QsdeError::ShapeMismatch);
        }
        let herm = max_abs(&(&h_cc[x] - h_cc[x].adjoint()))
            .max(max_abs(&(&h_pm[x] - h_pm[x].adjoint())));
        if herm > 1e-10 {
            return Err(QsdeError::NotPseudoSelfadjoint(herm));
        }
        let h_cm = h_pc[x].adjoint();
        let phi = hermitian_func(&h_cc[x], phi_scalar);
        let psi = hermitian_func(&h_cc[x], psi_scalar);
        out.s_cc[x] = hermitian_func(&h_cc[x], |z| ci(z).exp());
        out.s_pc[x] = &phi * &h_pc[x] * ci(1.0);
        out.s_cm[x] = &h_cm * &phi * ci(1.0);
        out.s_pm[x] = &h_cm * psi * &h_pc[x] + &h_pm[x] * ci(1.0);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Canonical decomposition of an exponential evolution.
// ---------------------------------------------------------------------------

/// Hermitian logarithm of a unitary matrix, with eigenvalue arguments in
/// `(−π, π]`. The unitary is diagonalized through a Hermitian combination of
/// its real and imaginary parts (both commute with it); a few deterministic
/// coefficient pairs break accidental degeneracies.
fn unitary_log(u: &CMat) -> Result<CMat, QsdeError> {
    let n = u.nrows();
    let k1 = (u + u.adjoint()) * cr(0.5);
    let k2 = (u - u.adjoint()) * C64::new(0.0, -0.5);
    for (a, b) in [(1.0, 0.37), (0.61, 1.0), (1.0, -0.83), (0.29, 0.67)] {
        let m = &k1 * cr(a) + &k2 * cr(b);
        let eig = nalgebra::SymmetricEigen::new(m);
        let q = &eig.eigenvectors;
        let du = q.adjoint() * u * q;
        let mut off: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                if r != c {
                    off = off.max(du[(r, c)].norm());
                }
            }
        }
        if off <= 1e-10 {
            let mut diag = CMat::zeros(n, n);
            for j in 0..n {
                diag[(j, j)] = cr(du[(j, j)].arg());
            }
            return Ok(q * diag * q.adjoint());
        }
    }
    Err(QsdeError::DegenerateExchange)
}

/// The three commuting deviation tables of an exponential evolution and the
/// triangular matrix diagonalizing the Poissonian part. Each part is stored
/// as a full generator `1̂ + L_i`, so the pseudo-unitarity check applies to
/// it directly.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// `1̂ + L_1` with `L_1 = [[F*LF, F*L], [LF, L]]`, `L = e^{iH_cc} − I`.
    pub poisson: GeneratorS,
    /// `1̂ + L_2` with `L_2 = [[−½E*E, E*], [−E, 0]]`, where `E` spans the
    /// kernel directions of `H_cc` inside `H_pc`.
    pub brownian: GeneratorS,
    /// `1̂ + L_3` with `L_3 = [[iH, 0], [0, 0]]`, `H = H_pm − F*H_ccF`.
    pub lebesgue: GeneratorS,
    /// `F_0 = [[1, F*, −F*F/2], [0, I, −F], [0, 0, 1]]`; conjugation by it
    /// compresses the Poissonian deviation to its exchange block.
    pub diagonalizer: GeneratorS,
    /// `‖H_pc − (H_cc·F + iE)‖∞` of the splitting, maximized over points.
    pub split_residual: f64,
}

/// Split an exponential pseudo-unitary generator into commuting Poissonian,
/// Brownian and Lebesgue parts with `S = 1̂ + L_1 + L_2 + L_3`.
pub fn decompose_evolution(f: &GeneratorS) -> Result<Decomposition, QsdeError> {
    f.check_shapes()?;
    let grid = &f.grid;
    let d = grid.d;
    let dim_h = f.dim_h;
    let eye_cc = CMat::identity(dim_h * d, dim_h * d);
    let mut poisson = GeneratorS::identity(grid, dim_h);
    let mut brownian = GeneratorS::identity(grid, dim_h);
    let mut lebesgue = GeneratorS::identity(grid, dim_h);
    let mut diagonalizer = GeneratorS::identity(grid, dim_h);
    let mut split_residual: f64 = 0.0;
    for x in 0..grid.n {
        let h_cc = unitary_log(&f.s_cc[x])?;
        let supp = 1e-8;
        let phi_inv = hermitian_func(&h_cc, |z| cr(1.0) / phi_scalar(z));
        let h_pc = &phi_inv * &f.s_pc[x] * ci(-1.0);
        let h_cm = h_pc.adjoint();
        let e = hermitian_func(&h_cc, |z| if z.abs() > supp { cr(0.0) } else { cr(1.0) })
            * &h_pc
            * ci(-1.0);
        let f_m = hermitian_func(&h_cc, |z| if z.abs() > supp { cr(1.0 / z) } else { cr(0.0) })
            * &h_pc;
        split_residual =
            split_residual.max(max_abs(&(&h_pc - (&h_cc * &f_m + &e * ci(1.0)))));
        let psi = hermitian_func(&h_cc, psi_scalar);
        let h_pm = (&f.s_pm[x] - &h_cm * psi * &h_pc) * ci(-1.0);
        let l_cc = &f.s_cc[x] - &eye_cc;
        poisson.s_cc[x] = f.s_cc[x].clone();
        poisson.s_pc[x] = &l_cc * &f_m;
        poisson.s_cm[x] = f_m.adjoint() * &l_cc;
        poisson.s_pm[x] = f_m.adjoint() * &l_cc * &f_m;
        brownian.s_pc[x] = -&e;
        brownian.s_cm[x] = e.adjoint();
        brownian.s_pm[x] = e.adjoint() * &e * cr(-0.5);
        lebesgue.s_pm[x] = (h_pm - f_m.adjoint() * &h_cc * &f_m) * ci(1.0);
        diagonalizer.s_pc[x] = -&f_m;
        diagonalizer.s_cm[x] = f_m.adjoint();
        diagonalizer.s_pm[x] = f_m.adjoint() * &f_m * cr(-0.5);
    }
    Ok(Decomposition {
        poisson,
        brownian,
        lebesgue,
        diagonalizer,
        split_residual,
    })
}

/// Reassemble a generator from the decomposition: identity plus the sum of
/// the three deviations.
pub fn reassemble(dec: &Decomposition) -> GeneratorS {
    let grid = &dec.poisson.grid;
    let dim_h = dec.poisson.dim_h;
    let d = grid.d;
    let eye_cc = CMat::identity(dim_h * d, dim_h * d);
    let mut out = GeneratorS::identity(grid, dim_h);
    for x in 0..grid.n {
        for part in [&dec.poisson, &dec.brownian, &dec.lebesgue] {
            out.s_pm[x] += &part.s_pm[x];
            out.s_cm[x] += &part.s_cm[x];
            out.s_pc[x] += &part.s_pc[x];
            out.s_cc[x] += &part.s_cc[x] - &eye_cc;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Adapted semi-tensor chronological products.
// ---------------------------------------------------------------------------

/// Drop the scalar slot of a kernel by summing its weighted scalar chains:
/// entries with the same `(cm, pc, cc)` are accumulated with weight `w(pm)`.
pub fn pm_integrated(k: &KernelTable) -> KernelTable {
    let mut out = KernelTable::new(&k.grid, k.dim_h);
    for (quad, block) in &k.entries {
        let w = crate::chain_fock::chain_weight(&quad.pm, &k.grid);
        let collapsed = ChainQuad::new(
            Chain::empty(),
            quad.cm.clone(),
            quad.pc.clone(),
            quad.cc.clone(),
        );
        out.insert(collapsed, block * cr(w)).unwrap();
    }
    out.entries.retain(|_, b| max_abs(b) != 0.0);
    out
}

/// Prepend one point to a semi-tensor block: the new leg becomes the most
/// significant one on the indicated sides.
enum SemiKind<'a> {
    Exchange(&'a CMat),
    Creation(&'a CMat),
    Annihilation(&'a CMat),
    IdentityLeg,
}

fn semi_prepend(a: &CMat, kind: SemiKind<'_>, dim_h: usize, d: usize) -> CMat {
    let lo = a.nrows() / dim_h;
    let li = a.ncols() / dim_h;
    match kind {
        SemiKind::Exchange(s) => {
            let mut out = CMat::zeros(dim_h * d * lo, dim_h * d * li);
            for h1 in 0..dim_h {
                for k1 in 0..d {
                    for h0 in 0..dim_h {
                        for k0 in 0..d {
                            for h in 0..dim_h {
                                let v = s[(h1 * d + k1, h * d + k0)];
                                if v.norm() == 0.0 {
                                    continue;
                                }
                                for r in 0..lo {
                                    for c in 0..li {
                                        out[((h1 * d + k1) * lo + r, (h0 * d + k0) * li + c)] +=
                                            v * a[(h * lo + r, h0 * li + c)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            out
        }
        SemiKind::Creation(s) => {
            let mut out = CMat::zeros(dim_h * d * lo, dim_h * li);
            for h1 in 0..dim_h {
                for k1 in 0..d {
                    for h in 0..dim_h {
                        let v = s[(h1 * d + k1, h)];
                        if v.norm() == 0.0 {
                            continue;
                        }
                        for r in 0..lo {
                            for c in 0..dim_h * li {
                                out[((h1 * d + k1) * lo + r, c)] += v * a[(h * lo + r, c)];
                            }
                        }
                    }
                }
            }
            out
        }
        SemiKind::Annihilation(s) => {
            let mut out = CMat::zeros(dim_h * lo, dim_h * d * li);
            for h1 in 0..dim_h {
                for h0 in 0..dim_h {
                    for k0 in 0..d {
                        for h in 0..dim_h {
                            let v = s[(h1, h * d + k0)];
                            if v.norm() == 0.0 {
                                continue;
                            }
                            for r in 0..lo {
                                for c in 0..li {
                                    out[(h1 * lo + r, (h0 * d + k0) * li + c)] +=
                                        v * a[(h * lo + r, h0 * li + c)];
                                }
                            }
                        }
                    }
                }
            }
            out
        }
        SemiKind::IdentityLeg => {
            let mut out = CMat::zeros(dim_h * d * lo, dim_h * d * li);
            for h1 in 0..dim_h {
                for h0 in 0..dim_h {
                    for k in 0..d {
                        for r in 0..lo {
                            for c in 0..li {
                                out[((h1 * d + k) * lo + r, (h0 * d + k) * li + c)] =
                                    a[(h1 * lo + r, h0 * li + c)];
                            }
                        }
                    }
                }
            }
            out
        }
    }
}

/// Left-multiply the initial-space line of a semi-tensor block by an
/// evolution segment.
fn semi_useg(a: &CMat, u: &CMat, dim_h: usize) -> CMat {
    let lo = a.nrows() / dim_h;
    let mut out = CMat::zeros(a.nrows(), a.ncols());
    for h1 in 0..dim_h {
        for h in 0..dim_h {
            let v = u[(h1, h)];
            if v.norm() == 0.0 {
                continue;
            }
            for r in 0..lo {
                for c in 0..a.ncols() {
                    out[(h1 * lo + r, c)] += v * a[(h * lo + r, c)];
                }
            }
        }
    }
    out
}

/// The adapted solution kernel built directly as semi-tensor chronological
/// products: per table, evolution segments on the initial space interleaved
/// with one creation, annihilation or exchange block per point, in time
/// order. The scalar slot is already integrated out; compare with
/// [`pm_integrated`] of the chronological-product solution.
pub fn adapted_semi_tensor(s: &GeneratorS, t: f64) -> Result<KernelTable, QsdeError> {
    s.check_shapes()?;
    let grid = &s.grid;
    let fam = evolution_family(s);
    let mut out = KernelTable::new(grid, s.dim_h);
    let chains = grid.all_chains();
    for cm in &chains {
        if cm.0.iter().any(|&x| grid.times[x] >= t) {
            continue;
        }
        for pc in &chains {
            if !cm.is_disjoint(pc) || pc.0.iter().any(|&x| grid.times[x] >= t) {
                continue;
            }
            for cc in &chains {
                if !cc.is_disjoint(cm) || !cc.is_disjoint(pc) {
                    continue;
                }
                let quad =
                    ChainQuad::new(Chain::empty(), cm.clone(), pc.clone(), cc.clone());
                if quad.out_chain().len() > grid.n_max || quad.in_chain().len() > grid.n_max
                {
                    continue;
                }
                let mut pts: Vec<usize> = Vec::new();
                pts.extend(&cm.0);
                pts.extend(&pc.0);
                pts.extend(&cc.0);
                pts.sort_unstable();
                let mut a = CMat::identity(s.dim_h, s.dim_h);
                let mut cut = t;
                for &x in pts.iter().rev() {
                    if grid.times[x] >= t {
                        a = semi_prepend(&a, SemiKind::IdentityLeg, s.dim_h, grid.d);
                        continue;
                    }
                    // The scalar one-step factor at x itself precedes a
                    // creation there but cannot act once x is already an
                    // exchange or annihilation leg, so those segments start
                    // just after x.
                    let seg_start = if pc.contains(x) {
                        grid.times[x]
                    } else {
                        next_time(grid, x)
                    };
                    a = semi_useg(&a, &fam.op(seg_start, cut), s.dim_h);
                    let kind = if cc.contains(x) {
                        SemiKind::Exchange(&s.s_cc[x])
                    } else if pc.contains(x) {
                        SemiKind::Creation(&s.s_pc[x])
                    } else {
                        SemiKind::Annihilation(&s.s_cm[x])
                    };
                    a = semi_prepend(&a, kind, s.dim_h, grid.d);
                    cut = grid.times[x];
                }
                a = semi_useg(&a, &fam.op(0.0, cut), s.dim_h);
                if max_abs(&a) != 0.0 {
                    out.insert(quad, a)?;
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Exponential norm estimate.
// ---------------------------------------------------------------------------

/// Exponential bound for the solved adapted evolution:
/// `exp{½ Σ_x (‖S_cm(x)‖² + ‖S_pc(x)‖²)·r(x)·Δ_x}` over points before `t`,
/// against the measured weighted operator norm of `T_t` with weight
/// `q = p + 1/r`, `p(x) = max(1, ‖S_cc(x)‖)`.
pub fn growth_estimate(
    s: &GeneratorS,
    r: &[f64],
    t: f64,
    basis: &HFockBasis,
) -> Result<NormReport, QsdeError> {
    s.check_shapes()?;
    let grid = &s.grid;
    if r.len() != grid.n {
        return Err(QsdeError::ShapeMismatch);
    }
    let mut exponent = 0.0;
    for &x in &grid.points_before(t) {
        let ncm = op2(&s.s_cm[x]);
        let npc = op2(&s.s_pc[x]);
        exponent += 0.5 * (ncm * ncm + npc * npc) * r[x] * grid.weights[x];
    }
    let bound = exponent.exp();
    let t0 = KernelTable::identity(grid, s.dim_h);
    let m = epsilon_matrix(&solve_kernel(&t0, s, t)?, basis)?;
    let q = WeightFunction::new(
        (0..grid.n)
            .map(|x| op2(&s.s_cc[x]).max(1.0) + 1.0 / r[x])
            .collect(),
    );
    let measured = basis.weighted_op_norm(&m, &q.recip(), &q);
    Ok(NormReport { bound, measured })
}
