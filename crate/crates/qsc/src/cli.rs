//! JSON-driven command-line front end.
//!
//! Each subcommand reads one JSON spec (`--input`), runs the corresponding
//! validation or solver pipeline, and emits a machine-readable report: a JSON
//! object with sorted keys holding the command name, the inputs, a residual
//! table (check, value, tolerance, pass) and the wall time. With
//! `--deterministic` the wall time is omitted so identical runs produce
//! byte-identical reports. `--output` writes the report to a file,
//! `--csv` additionally writes the residual table as CSV.
//!
//! Exit status: 0 when every check passes, 1 when a check fails, 2 on parse
//! or configuration errors.
//!
//! Complex numbers are `[re, im]` pairs throughout; matrices are nested row
//! arrays of pairs; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain_fock::{Chain, Grid, HFockBasis};
use crate::gns_rep::{gns_construct, verify_cocycles, TriangularRep};
use crate::ito_algebra::{
    conditional_positivity_check, monoid_mul, validate, AlgebraElement, ItoAlgebra,
};
use crate::ito_formula::{is_adapted, ito_check_adapted, ito_check_strong};
use crate::kernel_calc::{
    epsilon_matrix, kernel_mul, kernel_star, pi_rep_params, ChainQuad, KernelTable,
};
use crate::qsde_solver::{
    decompose_evolution, exp_generator, pseudo_unitarity_check, reassemble, solve_qsde,
    GeneratorS,
};
use crate::{max_abs, C64, CMat};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {0}: {1}")]
    Io(String, std::io::Error),
    #[error("invalid JSON in {0}: {1}")]
    Json(String, serde_json::Error),
    #[error("spec error: {0}")]
    Schema(String),
}

/// Parsed command line: one subcommand plus shared flags.
#[derive(Debug, Parser)]
#[command(name = "qsc", about = "quantum stochastic calculus pipelines", version)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: CommandKind,
    /// JSON spec file.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Write the JSON report here (also printed to stdout).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Also write the residual table as CSV.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// Override every default tolerance of the command.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Cut time override for time-indexed commands.
    #[arg(long, global = true)]
    pub t: Option<f64>,
    /// Omit the wall time so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Seed recorded in the report (for randomized suites).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum CommandKind {
    /// Check the ⋆-algebra axioms of a structure-constant table.
    ValidateAlgebra,
    /// Build the canonical triangular representation and verify it.
    Gns,
    /// Verify the multiplicative Fock representation of a monoid path.
    PiRep,
    /// Multiply two kernels and verify against the dense representation.
    KernelMul,
    /// Verify the product formula residuals of a kernel process.
    ItoCheck,
    /// Solve a stochastic evolution equation and verify unitarity.
    Solve,
    /// Split an exponential evolution into commuting parts.
    Decompose,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::ValidateAlgebra => "validate-algebra",
            CommandKind::Gns => "gns",
            CommandKind::PiRep => "pi-rep",
            CommandKind::KernelMul => "kernel-mul",
            CommandKind::ItoCheck => "ito-check",
            CommandKind::Solve => "solve",
            CommandKind::Decompose => "decompose",
        }
    }
}

/// One row of the residual table.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// The full report emitted by [`run`].
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub inputs: BTreeMap<String, serde_json::Value>,
    pub residuals: Vec<CheckRow>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    /// Command-specific payload (matrices, kernels, decompositions).
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub outputs: BTreeMap<String, serde_json::Value>,
}

fn check(name: &str, value: f64, tolerance: f64) -> CheckRow {
    CheckRow {
        check: name.to_string(),
        value,
        tolerance,
        pass: value <= tolerance,
    }
}

// ---------------------------------------------------------------------------
// JSON schemas.
// ---------------------------------------------------------------------------

/// Complex scalar as `[re, im]`.
pub type CxPair = [f64; 2];

fn cx(p: CxPair) -> C64 {
    C64::new(p[0], p[1])
}

fn pair(z: C64) -> CxPair {
    [z.re, z.im]
}

type MatJson = Vec<Vec<CxPair>>;

fn parse_mat(m: &MatJson, what: &str) -> Result<CMat, CliError> {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    if m.iter().any(|r| r.len() != cols) {
        return Err(CliError::Schema(format!("{what}: ragged matrix rows")));
    }
    Ok(CMat::from_fn(rows, cols, |r, c| cx(m[r][c])))
}

fn mat_json(m: &CMat) -> MatJson {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| pair(m[(r, c)])).collect())
        .collect()
}

/// Structure-constant table of a finite Itô ⋆-algebra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraSpec {
    pub dim: usize,
    pub names: Vec<String>,
    /// `c[j][i][k]` is the `e_j` coefficient of `e_i·e_k`.
    pub c: Vec<Vec<Vec<CxPair>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
}

impl AlgebraSpec {
    pub fn to_algebra(&self) -> Result<Arc<ItoAlgebra>, CliError> {
        let n = self.dim;
        if self.names.len() != n {
            return Err(CliError::Schema(format!(
                "names has {} entries for dim {n}",
                self.names.len()
            )));
        }
        if self.c.len() != n
            || self.c.iter().any(|b| b.len() != n)
            || self.c.iter().flatten().any(|r| r.len() != n)
        {
            return Err(CliError::Schema(
                "c must be a dim×dim×dim tensor of [re, im] pairs".into(),
            ));
        }
        let c = self
            .c
            .iter()
            .map(|b| b.iter().map(|r| r.iter().map(|&p| cx(p)).collect()).collect())
            .collect();
        Ok(Arc::new(ItoAlgebra {
            dim: n,
            c,
            basis_names: self.names.clone(),
            intensity: self.intensity,
        }))
    }

    pub fn from_algebra(alg: &ItoAlgebra) -> AlgebraSpec {
        AlgebraSpec {
            dim: alg.dim,
            names: alg.basis_names.clone(),
            c: alg
                .c
                .iter()
                .map(|b| b.iter().map(|r| r.iter().map(|&z| pair(z)).collect()).collect())
                .collect(),
            intensity: alg.intensity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
    pub d: usize,
    pub n_max: usize,
}

impl GridSpec {
    pub fn to_grid(&self) -> Result<Arc<Grid>, CliError> {
        Grid::new(self.times.clone(), self.weights.clone(), self.d, self.n_max)
            .map_err(|e| CliError::Schema(format!("grid: {e}")))
    }
}

/// Sparse kernel entry: point-index lists per slot plus a dense block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelEntryJson {
    pub w_pm: Vec<usize>,
    pub w_cm: Vec<usize>,
    pub w_pc: Vec<usize>,
    pub w_cc: Vec<usize>,
    pub block: MatJson,
}

pub fn parse_kernel(
    entries: &[KernelEntryJson],
    grid: &Arc<Grid>,
    dim_h: usize,
    what: &str,
) -> Result<KernelTable, CliError> {
    let mut k = KernelTable::new(grid, dim_h);
    for (i, e) in entries.iter().enumerate() {
        let quad = ChainQuad::new(
            Chain::new(e.w_pm.clone()),
            Chain::new(e.w_cm.clone()),
            Chain::new(e.w_pc.clone()),
            Chain::new(e.w_cc.clone()),
        );
        let block = parse_mat(&e.block, what)?;
        k.insert(quad, block)
            .map_err(|err| CliError::Schema(format!("{what} entry {i}: {err}")))?;
    }
    Ok(k)
}

pub fn kernel_json(k: &KernelTable) -> Vec<KernelEntryJson> {
    k.entries
        .iter()
        .map(|(q, b)| KernelEntryJson {
            w_pm: q.pm.0.clone(),
            w_cm: q.cm.0.clone(),
            w_pc: q.pc.0.clone(),
            w_cc: q.cc.0.clone(),
            block: mat_json(b),
        })
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnsSpec {
    pub algebra: AlgebraSpec,
    /// Sample elements as coefficient vectors over the algebra basis.
    pub samples: Vec<Vec<CxPair>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiRepSpec {
    pub algebra: AlgebraSpec,
    pub samples: Vec<Vec<CxPair>>,
    pub grid: GridSpec,
    /// Per-point sample index of the left monoid path.
    pub left: Vec<usize>,
    /// Per-point sample index of the right monoid path.
    pub right: Vec<usize>,
    /// Exponential-vector parameter per point (length d each).
    pub k_param: Vec<Vec<CxPair>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelMulSpec {
    pub grid: GridSpec,
    pub dim_h: usize,
    pub k: Vec<KernelEntryJson>,
    pub l: Vec<KernelEntryJson>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessCutJson {
    pub t: f64,
    pub kernel: Vec<KernelEntryJson>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItoCheckSpec {
    pub grid: GridSpec,
    pub dim_h: usize,
    /// Piecewise-constant kernel process: value at time s is the entry with
    /// the largest t ≤ s. The first entry must start at t = 0.
    pub process: Vec<ProcessCutJson>,
    pub t: f64,
}

/// Generator blocks, either as triangular Hamiltonian blocks (`h_*`, mapped
/// through the exponential) or directly (`s_*`). Exactly one group.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorJson {
    #[serde(default)]
    pub h_cc: Option<Vec<MatJson>>,
    #[serde(default)]
    pub h_pc: Option<Vec<MatJson>>,
    #[serde(default)]
    pub h_pm: Option<Vec<MatJson>>,
    #[serde(default)]
    pub s_cc: Option<Vec<MatJson>>,
    #[serde(default)]
    pub s_pc: Option<Vec<MatJson>>,
    #[serde(default)]
    pub s_cm: Option<Vec<MatJson>>,
    #[serde(default)]
    pub s_pm: Option<Vec<MatJson>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSpec {
    pub grid: GridSpec,
    pub dim_h: usize,
    pub generator: GeneratorJson,
    pub t: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSpec {
    pub grid: GridSpec,
    pub dim_h: usize,
    pub generator: GeneratorJson,
}

fn parse_mats(v: &[MatJson], n: usize, what: &str) -> Result<Vec<CMat>, CliError> {
    if v.len() != n {
        return Err(CliError::Schema(format!(
            "{what}: expected {n} per-point matrices, got {}",
            v.len()
        )));
    }
    v.iter().map(|m| parse_mat(m, what)).collect()
}

fn parse_generator(
    g: &GeneratorJson,
    grid: &Arc<Grid>,
    dim_h: usize,
) -> Result<GeneratorS, CliError> {
    let n = grid.n;
    match (
        (&g.h_cc, &g.h_pc, &g.h_pm),
        (&g.s_cc, &g.s_pc, &g.s_cm, &g.s_pm),
    ) {
        ((Some(cc), Some(pc), Some(pm)), (None, None, None, None)) => {
            let h_cc = parse_mats(cc, n, "h_cc")?;
            let h_pc = parse_mats(pc, n, "h_pc")?;
            let h_pm = parse_mats(pm, n, "h_pm")?;
            exp_generator(grid, dim_h, &h_cc, &h_pc, &h_pm)
                .map_err(|e| CliError::Schema(format!("generator: {e}")))
        }
        ((None, None, None), (Some(cc), Some(pc), Some(cm), Some(pm))) => {
            let s = GeneratorS {
                grid: grid.clone(),
                dim_h,
                s_cc: parse_mats(cc, n, "s_cc")?,
                s_pc: parse_mats(pc, n, "s_pc")?,
                s_cm: parse_mats(cm, n, "s_cm")?,
                s_pm: parse_mats(pm, n, "s_pm")?,
            };
            s.check_shapes()
                .map_err(|e| CliError::Schema(format!("generator: {e}")))?;
            Ok(s)
        }
        _ => Err(CliError::Schema(
            "generator needs either all of h_cc/h_pc/h_pm or all of s_cc/s_pc/s_cm/s_pm"
                .into(),
        )),
    }
}

/// Read and strictly deserialize a JSON spec file.
pub fn parse_spec<T: for<'de> Deserialize<'de>>(path: &PathBuf) -> Result<T, CliError> {
    let name = path.display().to_string();
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Io(name.clone(), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json(name, e))
}

// ---------------------------------------------------------------------------
// Pipelines.
// ---------------------------------------------------------------------------

struct Outcome {
    residuals: Vec<CheckRow>,
    outputs: BTreeMap<String, serde_json::Value>,
}

fn tol_or(config: &RunConfig, default: f64) -> f64 {
    config.tol.unwrap_or(default)
}

fn run_validate_algebra(config: &RunConfig, path: &PathBuf) -> Result<Outcome, CliError> {
    let spec: AlgebraSpec = parse_spec(path)?;
    let alg = spec.to_algebra()?;
    let tol = tol_or(config, 1e-14);
    let report = validate(&alg);
    let round_trip = AlgebraSpec::from_algebra(&alg) == spec;
    let residuals = vec![
        check("hermitianity", report.hermitianity.max_violation, tol),
        check("associativity", report.associativity.max_violation, tol),
        check("degeneracy", report.degeneracy.max_violation, tol),
        check(
            "ideal_trivial",
            if report.ideal_trivial { 0.0 } else { 1.0 },
            0.5,
        ),
        check("round_trip", if round_trip { 0.0 } else { 1.0 }, 0.5),
    ];
    let mut outputs = BTreeMap::new();
    outputs.insert(
        "ideal_rank".into(),
        serde_json::json!(report.ideal_rank),
    );
    Ok(Outcome { residuals, outputs })
}

fn elements(
    alg: &Arc<ItoAlgebra>,
    coeffs: &[Vec<CxPair>],
) -> Result<Vec<AlgebraElement>, CliError> {
    coeffs
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != alg.dim {
                return Err(CliError::Schema(format!(
                    "sample {i} has {} coefficients for dim {}",
                    v.len(),
                    alg.dim
                )));
            }
            Ok(alg.element(v.iter().map(|&p| cx(p)).collect()))
        })
        .collect()
}

fn rep_json(rep: &TriangularRep, sample: &[AlgebraElement]) -> serde_json::Value {
    let ops: Vec<serde_json::Value> = sample
        .iter()
        .map(|b| {
            let op = rep.op(b);
            serde_json::json!({
                "l": pair(op.l),
                "k_star": mat_json(&op.k_row),
                "k": mat_json(&op.k_col),
                "j": mat_json(&op.j_block),
            })
        })
        .collect();
    serde_json::json!({ "dim_k": rep.dim_k, "ops": ops })
}

fn run_gns(config: &RunConfig, path: &PathBuf) -> Result<Outcome, CliError> {
    let spec: GnsSpec = parse_spec(path)?;
    let alg = spec.algebra.to_algebra()?;
    let sample = elements(&alg, &spec.samples)?;
    if sample.is_empty() {
        return Err(CliError::Schema("gns needs a nonempty sample".into()));
    }
    let tol = tol_or(config, 1e-10);
    let (_, min_eig) = conditional_positivity_check(&sample, tol);
    let rep = gns_construct(&sample, 1e-10)
        .map_err(|e| CliError::Schema(format!("gns: {e}")))?;
    let mut corner: f64 = 0.0;
    for b in &sample {
        let op = rep.op(b);
        corner = corner.max((op.l - crate::ito_algebra::l_value(b)).norm());
    }
    let mut column: f64 = 0.0;
    let mut row: f64 = 0.0;
    let mut pairing: f64 = 0.0;
    for a in &sample {
        for b in &sample {
            let r = verify_cocycles(&rep, a, b, tol);
            column = column.max(r.column_cocycle);
            row = row.max(r.row_cocycle);
            pairing = pairing.max(r.pairing);
        }
    }
    let residuals = vec![
        check("corner_identity", corner, tol),
        check("column_cocycle", column, tol),
        check("row_cocycle", row, tol),
        check("pairing", pairing, tol),
        check("gram_psd", (-min_eig).max(0.0), tol),
    ];
    let mut outputs = BTreeMap::new();
    outputs.insert("representation".into(), rep_json(&rep, &sample));
    Ok(Outcome { residuals, outputs })
}

fn run_pi_rep(config: &RunConfig, path: &PathBuf) -> Result<Outcome, CliError> {
    let spec: PiRepSpec = parse_spec(path)?;
    let alg = spec.algebra.to_algebra()?;
    let sample = elements(&alg, &spec.samples)?;
    let grid = spec.grid.to_grid()?;
    let tol = tol_or(config, 1e-8);
    if spec.left.len() != grid.n || spec.right.len() != grid.n {
        return Err(CliError::Schema(
            "left/right must map every grid point to a sample index".into(),
        ));
    }
    for &i in spec.left.iter().chain(&spec.right) {
        if i >= sample.len() {
            return Err(CliError::Schema(format!("sample index {i} out of range")));
        }
    }
    if spec.k_param.len() != grid.n || spec.k_param.iter().any(|k| k.len() != grid.d) {
        return Err(CliError::Schema(
            "k_param needs one length-d vector per grid point".into(),
        ));
    }
    let rep = gns_construct(&sample, 1e-10)
        .map_err(|e| CliError::Schema(format!("pi-rep: {e}")))?;
    if rep.dim_k != grid.d {
        return Err(CliError::Schema(format!(
            "representation dimension {} does not match grid multiplicity {}",
            rep.dim_k, grid.d
        )));
    }
    let k0: Vec<Vec<C64>> = spec
        .k_param
        .iter()
        .map(|k| k.iter().map(|&p| cx(p)).collect())
        .collect();
    let left_ops: Vec<_> = spec.left.iter().map(|&i| rep.op(&sample[i])).collect();
    let right_ops: Vec<_> = spec.right.iter().map(|&i| rep.op(&sample[i])).collect();
    let comp_ops: Vec<_> = (0..grid.n)
        .map(|x| rep.op(&monoid_mul(&sample[spec.left[x]], &sample[spec.right[x]])))
        .collect();
    let err = |e| CliError::Schema(format!("pi-rep: {e}"));
    let (s_r, k_r) = pi_rep_params(&right_ops, &k0, &grid).map_err(err)?;
    let (s_l, k_l) = pi_rep_params(&left_ops, &k_r, &grid).map_err(err)?;
    let (s_c, k_c) = pi_rep_params(&comp_ops, &k0, &grid).map_err(err)?;
    let mut mult = (s_l * s_r - s_c).norm();
    for x in 0..grid.n {
        for m in 0..grid.d {
            mult = mult.max((k_l[x][m] - k_c[x][m]).norm());
        }
    }
    // Vacuum expectation of the left path: the exponential of the summed
    // corner values.
    let (s_vac, _) = pi_rep_params(
        &left_ops,
        &vec![vec![C64::new(0.0, 0.0); grid.d]; grid.n],
        &grid,
    )
    .map_err(err)?;
    let mut expected = C64::new(0.0, 0.0);
    for x in 0..grid.n {
        expected += left_ops[x].l * C64::new(grid.weights[x], 0.0);
    }
    let vacuum = (s_vac - expected.exp()).norm();
    let residuals = vec![
        check("multiplicativity", mult, tol),
        check("vacuum_expectation", vacuum, tol),
    ];
    Ok(Outcome {
        residuals,
        outputs: BTreeMap::new(),
    })
}

fn run_kernel_mul(config: &RunConfig, path: &PathBuf) -> Result<Outcome, CliError> {
    let spec: KernelMulSpec = parse_spec(path)?;
    let grid = spec.grid.to_grid()?;
    let tol = tol_or(config, 1e-12);
    let k = parse_kernel(&spec.k, &grid, spec.dim_h, "k")?;
    let l = parse_kernel(&spec.l, &grid, spec.dim_h, "l")?;
    let err = |e| CliError::Schema(format!("kernel-mul: {e}"));
    let prod = kernel_mul(&k, &l).map_err(err)?;
    let basis = HFockBasis::new(&grid, spec.dim_h);
    let ek = epsilon_matrix(&k, &basis).map_err(err)?;
    let el = epsilon_matrix(&l, &basis).map_err(err)?;
    let ep = epsilon_matrix(&prod, &basis).map_err(err)?;
    let hom = max_abs(&(&ep - &ek * &el));
    let estar = epsilon_matrix(&kernel_star(&k), &basis).map_err(err)?;
    let star = max_abs(&(estar - basis.weighted_adjoint(&ek)));
    let residuals = vec![
        check("epsilon_homomorphism", hom, tol),
        check("epsilon_star", star, tol),
    ];
    let mut outputs = BTreeMap::new();
    outputs.insert(
        "product".into(),
        serde_json::to_value(kernel_json(&prod)).unwrap(),
    );
    Ok(Outcome { residuals, outputs })
}

fn run_ito_check(config: &RunConfig, path: &PathBuf) -> Result<Outcome, CliError> {
    let spec: ItoCheckSpec = parse_spec(path)?;
    let grid = spec.grid.to_grid()?;
    let tol = tol_or(config, 1e-11);
    let t = config.t.unwrap_or(spec.t);
    if spec.process.is_empty() || spec.process[0].t != 0.0 {
        return Err(CliError::Schema(
            "process must start with an entry at t = 0".into(),
        ));
    }
    if spec.process.windows(2).any(|w| w[0].t >= w[1].t) {
        return Err(CliError::Schema("process cuts must be increasing".into()));
    }
    let cuts: Vec<(f64, KernelTable)> = spec
        .process
        .iter()
        .map(|c| Ok((c.t, parse_kernel(&c.kernel, &grid, spec.dim_h, "process")?)))
        .collect::<Result<_, CliError>>()?;
    let process = move |s: f64| -> KernelTable {
        let mut k = &cuts[0].1;
        for (tc, kc) in &cuts {
            if *tc <= s {
                k = kc;
            }
        }
        k.clone()
    };
    let basis = HFockBasis::new(&grid, spec.dim_h);
    let err = |e| CliError::Schema(format!("ito-check: {e}"));
    let strong = ito_check_strong(&process, t, &basis).map_err(err)?;
    let mut residuals = vec![check("strong_product_formula", strong, tol)];
    if is_adapted(&process(t), t) {
        let adapted = ito_check_adapted(&process, t, &basis).map_err(err)?;
        residuals.push(check("adapted_product_formula", adapted, tol));
    }
    Ok(Outcome {
        residuals,
        outputs: BTreeMap::new(),
    })
}

fn run_solve(config: &RunConfig, path: &PathBuf) -> Result<Outcome, CliError> {
    let spec: SolveSpec = parse_spec(path)?;
    let grid = spec.grid.to_grid()?;
    let s = parse_generator(&spec.generator, &grid, spec.dim_h)?;
    let t = config.t.unwrap_or(spec.t);
    let tol_pu = tol_or(config, 1e-10);
    let tol_fp = tol_or(config, 1e-11);
    let tol_un = tol_or(config, 1e-10);
    let pu = pseudo_unitarity_check(&s, tol_pu);
    let basis = HFockBasis::new(&grid, spec.dim_h);
    let t0 = KernelTable::identity(&grid, spec.dim_h);
    let sol = solve_qsde(&t0, &s, t, &basis)
        .map_err(|e| CliError::Schema(format!("solve: {e}")))?;
    let eye = CMat::identity(basis.dim, basis.dim);
    let unitarity = max_abs(&(basis.weighted_adjoint(&sol.op) * &sol.op - eye));
    let mut residuals = vec![
        check("pseudo_unitarity", pu.max(), tol_pu),
        check("fixed_point", sol.residual, tol_fp),
        check("unitarity", unitarity, tol_un),
    ];
    let mut outputs = BTreeMap::new();
    outputs.insert(
        "t_matrix".into(),
        serde_json::to_value(mat_json(&sol.op)).unwrap(),
    );
    if pu.pass {
        if let Ok(dec) = decompose_evolution(&s) {
            let back = reassemble(&dec);
            let mut reassembly: f64 = dec.split_residual;
            for x in 0..grid.n {
                reassembly = reassembly
                    .max(max_abs(&(&back.s_cc[x] - &s.s_cc[x])))
                    .max(max_abs(&(&back.s_pc[x] - &s.s_pc[x])))
                    .max(max_abs(&(&back.s_cm[x] - &s.s_cm[x])))
                    .max(max_abs(&(&back.s_pm[x] - &s.s_pm[x])));
            }
            residuals.push(check("reassembly", reassembly, tol_or(config, 1e-12)));
            outputs.insert("decomposition".into(), decomposition_json(&dec));
        }
    }
    Ok(Outcome { residuals, outputs })
}

fn generator_blocks_json(s: &GeneratorS) -> serde_json::Value {
    serde_json::json!({
        "s_cc": s.s_cc.iter().map(mat_json).collect::<Vec<_>>(),
        "s_pc": s.s_pc.iter().map(mat_json).collect::<Vec<_>>(),
        "s_cm": s.s_cm.iter().map(mat_json).collect::<Vec<_>>(),
        "s_pm": s.s_pm.iter().map(mat_json).collect::<Vec<_>>(),
    })
}

fn decomposition_json(dec: &crate::qsde_solver::Decomposition) -> serde_json::Value {
    serde_json::json!({
        "poisson": generator_blocks_json(&dec.poisson),
        "brownian": generator_blocks_json(&dec.brownian),
        "lebesgue": generator_blocks_json(&dec.lebesgue),
        "diagonalizer": generator_blocks_json(&dec.diagonalizer),
        "split_residual": dec.split_residual,
    })
}

fn run_decompose(config: &RunConfig, path: &PathBuf) -> Result<Outcome, CliError> {
    let spec: DecomposeSpec = parse_spec(path)?;
    let grid = spec.grid.to_grid()?;
    let s = parse_generator(&spec.generator, &grid, spec.dim_h)?;
    let tol = tol_or(config, 1e-12);
    let dec = decompose_evolution(&s)
        .map_err(|e| CliError::Schema(format!("decompose: {e}")))?;
    let back = reassemble(&dec);
    let mut reassembly: f64 = 0.0;
    for x in 0..grid.n {
        reassembly = reassembly
            .max(max_abs(&(&back.s_cc[x] - &s.s_cc[x])))
            .max(max_abs(&(&back.s_pc[x] - &s.s_pc[x])))
            .max(max_abs(&(&back.s_cm[x] - &s.s_cm[x])))
            .max(max_abs(&(&back.s_pm[x] - &s.s_pm[x])));
    }
    let mut commutation: f64 = 0.0;
    let mut parts_pu: f64 = 0.0;
    for part in [&dec.poisson, &dec.brownian, &dec.lebesgue] {
        parts_pu = parts_pu.max(pseudo_unitarity_check(part, tol).max());
    }
    for x in 0..grid.n {
        let mats = [
            dec.poisson.assembled(x),
            dec.brownian.assembled(x),
            dec.lebesgue.assembled(x),
        ];
        for i in 0..3 {
            for j in (i + 1)..3 {
                commutation =
                    commutation.max(max_abs(&(&mats[i] * &mats[j] - &mats[j] * &mats[i])));
            }
        }
    }
    let residuals = vec![
        check("split", dec.split_residual, tol),
        check("reassembly", reassembly, tol),
        check("commutation", commutation, tol),
        check("part_pseudo_unitarity", parts_pu, tol),
    ];
    let mut outputs = BTreeMap::new();
    outputs.insert("decomposition".into(), decomposition_json(&dec));
    Ok(Outcome { residuals, outputs })
}

// ---------------------------------------------------------------------------
// Report emission and entry points.
// ---------------------------------------------------------------------------

/// Render the report as JSON with sorted keys and a trailing newline.
pub fn report_json(report: &RunReport) -> String {
    // Round-tripping through Value sorts object keys (BTreeMap storage).
    let v = serde_json::to_value(report).expect("report serializes");
    let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
    s.push('\n');
    s
}

/// Render the residual table as CSV.
pub fn report_csv(report: &RunReport) -> String {
    let mut out = String::from("check,value,tolerance,pass\n");
    for r in &report.residuals {
        out.push_str(&format!(
            "{},{:e},{:e},{}\n",
            r.check, r.value, r.tolerance, r.pass
        ));
    }
    out
}

/// Write the report to stdout and to the configured files.
pub fn emit_report(config: &RunConfig, report: &RunReport) -> Result<(), CliError> {
    let text = report_json(report);
    print!("{text}");
    if let Some(path) = &config.output {
        std::fs::write(path, &text)
            .map_err(|e| CliError::Io(path.display().to_string(), e))?;
    }
    if let Some(path) = &config.csv {
        std::fs::write(path, report_csv(report))
            .map_err(|e| CliError::Io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Execute a parsed configuration; returns the process exit status.
pub fn run(config: &RunConfig) -> i32 {
    if let Some(threads) = std::env::var_os("QSC_THREADS") {
        match threads.to_str().and_then(|s| s.parse::<usize>().ok()) {
            Some(n) if n > 0 => {}
            _ => {
                eprintln!("error: QSC_THREADS must be a positive integer");
                return 2;
            }
        }
    }
    let start = Instant::now();
    let path = match &config.input {
        Some(p) => p.clone(),
        None => {
            eprintln!("error: --input is required");
            return 2;
        }
    };
    let outcome = match config.command {
        CommandKind::ValidateAlgebra => run_validate_algebra(config, &path),
        CommandKind::Gns => run_gns(config, &path),
        CommandKind::PiRep => run_pi_rep(config, &path),
        CommandKind::KernelMul => run_kernel_mul(config, &path),
        CommandKind::ItoCheck => run_ito_check(config, &path),
        CommandKind::Solve => run_solve(config, &path),
        CommandKind::Decompose => run_decompose(config, &path),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let pass = outcome.residuals.iter().all(|r| r.pass);
    let mut inputs = BTreeMap::new();
    inputs.insert("input".to_string(), serde_json::json!(path.display().to_string()));
    if let Some(t) = config.t {
        inputs.insert("t".to_string(), serde_json::json!(t));
    }
    if let Some(tol) = config.tol {
        inputs.insert("tol".to_string(), serde_json::json!(tol));
    }
    if let Some(seed) = config.seed {
        inputs.insert("seed".to_string(), serde_json::json!(seed));
    }
    let report = RunReport {
        command: config.command.name().to_string(),
        inputs,
        residuals: outcome.residuals,
        pass,
        wall_time_ms: if config.deterministic {
            None
        } else {
            Some(start.elapsed().as_secs_f64() * 1e3)
        },
        outputs: outcome.outputs,
    };
    if let Err(e) = emit_report(config, &report) {
        eprintln!("error: {e}");
        return 2;
    }
    if pass {
        0
    } else {
        1
    }
}

/// Binary entry point: parse arguments, run, return the exit status.
pub fn main_entry() -> i32 {
    match RunConfig::try_parse() {
        Ok(config) => run(&config),
        Err(e) => {
            // Help and version requests are not errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
