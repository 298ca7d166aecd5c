//! Exact reference values for the built-in model families.
//!
//! * Gaussian pairs: closed-form log-determinants and traces.
//! * Ising blocks: direct summation over all `2^n` spin states.
//! * Continuous models with `d <= 3`: trapezoid rule on a tensor grid.
//!
//! Summations are split into fixed-size chunks that may be evaluated in
//! parallel; chunk partials are merged in chunk order, so results do not
//! depend on the worker count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, SquareMatrix};
use crate::model::{ModelKind, SystemModel, MAX_ENUMERATION_SPINS};
use crate::numeric::WeightedLogSum;
use crate::parallel::map_indexed;
use crate::sampler::check_alpha_grid;

/// Tolerance for identities that hold exactly for analytic and enumerated
/// results.
pub const EXACT_TOLERANCE: f64 = 1e-10;

/// Relative integrand size allowed on the faces of a quadrature box.
pub const BOUNDARY_DECAY: f64 = 1e-14;

/// Largest dimension accepted by [`quadrature_oracle`].
pub const MAX_QUADRATURE_DIM: usize = 3;

/// Largest spin count for which [`enumerate_densities`] materializes the
/// state-wise densities.
pub const MAX_DENSITY_SPINS: usize = 20;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    GaussianAnalytic,
    Enumeration,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaCurvePoint {
    pub alpha: f64,
    pub gamma: f64,
    pub e_u_rho_alpha: f64,
}

/// Exact (or grid-converged) thermodynamic reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub delta_f: f64,
    pub e_u_pi: f64,
    pub e_u_pi0: f64,
    pub kl_pi_pi0: f64,
    pub kl_pi0_pi: f64,
    /// `E_pi0[H0]`, the decoupled reference energy.
    pub e_h0_pi0: f64,
    pub gamma_curve: Vec<GammaCurvePoint>,
    pub method: OracleMethod,
    pub error_bound: f64,
    /// Quadrature only: the error bound exceeded the requested tolerance.
    #[serde(default)]
    pub tolerance_exceeded: bool,
}

impl OracleResult {
    /// Oracle `E_rho_alpha[U]` at `alpha`, if that grid point was computed.
    pub fn e_u_at(&self, alpha: f64) -> Option<f64> {
        self.gamma_curve.iter().find(|p| p.alpha == alpha).map(|p| p.e_u_rho_alpha)
    }

    pub fn gamma_at(&self, alpha: f64) -> Option<f64> {
        self.gamma_curve.iter().find(|p| p.alpha == alpha).map(|p| p.gamma)
    }

    /// Tolerance used when checking identities on this result.
    pub fn check_tolerance(&self) -> f64 {
        match self.method {
            OracleMethod::Quadrature => self.error_bound.max(EXACT_TOLERANCE),
            _ => EXACT_TOLERANCE,
        }
    }
}

fn oracle_grid(alphas: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let report: Vec<f64> = if alphas.is_empty() { vec![0.0, 1.0] } else { alphas.to_vec() };
    check_alpha_grid(&report)?;
    let mut full = report.clone();
    full.push(0.0);
    full.push(1.0);
    full.sort_by(f64::total_cmp);
    full.dedup();
    Ok((report, full))
}

// ---------------------------------------------------------------------------
// Gaussian
// ---------------------------------------------------------------------------

/// Closed-form values for a `gaussian-pair` model:
/// `dF = (logdet(D + C) - logdet D) / 2`, `E_pi0[U] = tr(C D^-1) / 2`,
/// `E_rho_alpha[U] = tr(C (D + alpha C)^-1) / 2`.
///
/// The KL divergences use the zero-mean Gaussian formula
/// `KL(N(0, S1) | N(0, S0)) = (tr(S0^-1 S1) - d + logdet S0 - logdet S1) / 2`
/// rather than the identities they are checked against.
pub fn gaussian_oracle(model: &SystemModel, alphas: &[f64]) -> Result<OracleResult> {
    if model.kind() != ModelKind::GaussianPair {
        return Err(Error::OracleRefused(format!(
            "the Gaussian oracle needs a gaussian-pair model, got {}",
            model.kind().as_str()
        )));
    }
    let (report, full) = oracle_grid(alphas)?;
    let crate::model::ModelParams::GaussianPair(p) = model.params() else {
        unreachable!("kind checked")
    };
    let beta = model.beta();
    let d = p.d.scaled(beta);
    let c = p.c.scaled(beta);
    let offset = beta * model.coupling_offset();
    let dim = d.dim() as f64;

    let factor = |m: &SquareMatrix, what: &str| {
        Cholesky::factor(m).map_err(|e| Error::Numerical(format!("{what}: {e}")))
    };
    let ch_d = factor(&d, "D")?;
    let logdet_d = ch_d.log_det();
    let d_inv = ch_d.inverse();

    let mut curve = Vec::with_capacity(full.len());
    for &a in &full {
        let m = d.add_scaled(&c, a);
        let ch = factor(&m, &format!("D + {a} C"))?;
        let inv = ch.inverse();
        curve.push(GammaCurvePoint {
            alpha: a,
            gamma: 0.5 * (ch.log_det() - logdet_d) + a * offset,
            e_u_rho_alpha: 0.5 * c.matmul(&inv).trace() + offset,
        });
    }
    let at = |a: f64| *curve.iter().find(|p| p.alpha == a).expect("grid has 0 and 1");
    let p0 = at(0.0);
    let p1 = at(1.0);

    let h = d.add_scaled(&c, 1.0);
    let ch_h = factor(&h, "D + C")?;
    let cov_pi = ch_h.inverse();
    let kl_pi_pi0 = 0.5 * (d.matmul(&cov_pi).trace() - dim + ch_h.log_det() - logdet_d);
    let kl_pi0_pi = 0.5 * (h.matmul(&d_inv).trace() - dim + logdet_d - ch_h.log_det());

    Ok(OracleResult {
        delta_f: p1.gamma,
        e_u_pi: p1.e_u_rho_alpha,
        e_u_pi0: p0.e_u_rho_alpha,
        kl_pi_pi0,
        kl_pi0_pi,
        e_h0_pi0: 0.5 * d.matmul(&d_inv).trace(),
        gamma_curve: report.iter().map(|&a| at(a)).collect(),
        method: OracleMethod::GaussianAnalytic,
        error_bound: 0.0,
        tolerance_exceeded: false,
    })
}

// ---------------------------------------------------------------------------
// Shared exact summation
// ---------------------------------------------------------------------------

/// A finite weighted point set: point `i` has log measure weight `ln_w`,
/// decoupled energy `h0` and coupling `u`. The model's constant coupling
/// offset is left out of `u` and added back exactly by [`summarize`].
trait PointSet: Sync {
    fn len(&self) -> usize;
    fn point(&self, i: usize) -> (f64, f64, f64);
}

struct FirstPass {
    // per alpha: weights exp(ln_w - h0 - alpha u), observables [u, h0]
    accs: Vec<WeightedLogSum<2>>,
}

fn summarize<P: PointSet>(points: &P, shift: f64, full: &[f64], report: &[f64], workers: usize) -> Result<Summary> {
    let n = points.len();
    let n_chunks = n.div_ceil(CHUNK);
    let chunk_range = |c: usize| (c * CHUNK)..((c + 1) * CHUNK).min(n);

    let partials = map_indexed(n_chunks, workers, |c| {
        let mut accs = vec![WeightedLogSum::<2>::default(); full.len()];
        for i in chunk_range(c) {
            let (ln_w, h0, u) = points.point(i);
            for (acc, &a) in accs.iter_mut().zip(full) {
                acc.add(ln_w - h0 - a * u, [u, h0]);
            }
        }
        FirstPass { accs }
    });
    let mut accs = vec![WeightedLogSum::<2>::default(); full.len()];
    for part in &partials {
        for (acc, p) in accs.iter_mut().zip(&part.accs) {
            acc.merge(p);
        }
    }
    let idx = |a: f64| full.iter().position(|&x| x == a).expect("grid has 0 and 1");
    let log_z0 = accs[idx(0.0)].log_total();
    let log_z = accs[idx(1.0)].log_total();
    if !log_z.is_finite() || !log_z0.is_finite() {
        return Err(Error::Numerical("partition function is zero or not finite".into()));
    }

    // second pass: KL by direct summation of p log(p / q)
    let kl_partials = map_indexed(n_chunks, workers, |c| {
        let mut kl_fwd = 0.0;
        let mut kl_rev = 0.0;
        for i in chunk_range(c) {
            let (ln_w, h0, u) = points.point(i);
            let ln_p = -(h0 + u) - log_z;
            let ln_p0 = -h0 - log_z0;
            kl_fwd += (ln_w + ln_p).exp() * (ln_p - ln_p0);
            kl_rev += (ln_w + ln_p0).exp() * (ln_p0 - ln_p);
        }
        (kl_fwd, kl_rev)
    });
    let (kl_fwd, kl_rev) = kl_partials
        .iter()
        .fold((0.0, 0.0), |(f, r), (a, b)| (f + a, r + b));

    let curve = report
        .iter()
        .map(|&a| {
            let acc = &accs[idx(a)];
            GammaCurvePoint {
                alpha: a,
                gamma: -(acc.log_total() - log_z0) + a * shift,
                e_u_rho_alpha: acc.mean(0) + shift,
            }
        })
        .collect();
    Ok(Summary {
        delta_f: -(log_z - log_z0) + shift,
        e_u_pi: accs[idx(1.0)].mean(0) + shift,
        e_u_pi0: accs[idx(0.0)].mean(0) + shift,
        e_h0_pi0: accs[idx(0.0)].mean(1),
        kl_pi_pi0: kl_fwd,
        kl_pi0_pi: kl_rev,
        curve,
    })
}

struct Summary {
    delta_f: f64,
    e_u_pi: f64,
    e_u_pi0: f64,
    e_h0_pi0: f64,
    kl_pi_pi0: f64,
    kl_pi0_pi: f64,
    curve: Vec<GammaCurvePoint>,
}

impl Summary {
    fn into_result(self, method: OracleMethod, error_bound: f64) -> OracleResult {
        OracleResult {
            delta_f: self.delta_f,
            e_u_pi: self.e_u_pi,
            e_u_pi0: self.e_u_pi0,
            kl_pi_pi0: self.kl_pi_pi0,
            kl_pi0_pi: self.kl_pi0_pi,
            e_h0_pi0: self.e_h0_pi0,
            gamma_curve: self.curve,
            method,
            error_bound,
            tolerance_exceeded: false,
        }
    }

    /// Largest absolute difference over all reported quantities.
    fn max_diff(&self, other: &Summary) -> f64 {
        let scalars = [
            (self.delta_f, other.delta_f),
            (self.e_u_pi, other.e_u_pi),
            (self.e_u_pi0, other.e_u_pi0),
            (self.e_h0_pi0, other.e_h0_pi0),
            (self.kl_pi_pi0, other.kl_pi_pi0),
            (self.kl_pi0_pi, other.kl_pi0_pi),
        ];
        let curve = self.curve.iter().zip(&other.curve).flat_map(|(a, b)| {
            [(a.gamma, b.gamma), (a.e_u_rho_alpha, b.e_u_rho_alpha)]
        });
        scalars
            .into_iter()
            .chain(curve)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Enumeration
// ---------------------------------------------------------------------------

struct SpinStates<'a> {
    model: &'a SystemModel,
}

impl SpinStates<'_> {
    fn spins(&self, i: usize, buf: &mut [i8; MAX_ENUMERATION_SPINS]) -> usize {
        let n = self.model.dimension();
        for (k, s) in buf.iter_mut().take(n).enumerate() {
            *s = if (i >> k) & 1 == 1 { -1 } else { 1 };
        }
        n
    }
}

impl PointSet for SpinStates<'_> {
    fn len(&self) -> usize {
        1usize << self.model.dimension()
    }

    fn point(&self, i: usize) -> (f64, f64, f64) {
        let mut buf = [0i8; MAX_ENUMERATION_SPINS];
        let n = self.spins(i, &mut buf);
        let s = &buf[..n];
        (0.0, self.model.h0_spins(s), self.model.u_spins_unshifted(s))
    }
}

fn check_enumerable(model: &SystemModel) -> Result<()> {
    if model.kind() != ModelKind::IsingBlock {
        return Err(Error::OracleRefused(format!(
            "enumeration needs an ising-block model, got {}",
            model.kind().as_str()
        )));
    }
    if model.dimension() > MAX_ENUMERATION_SPINS {
        return Err(Error::OracleRefused(format!(
            "enumeration is capped at {MAX_ENUMERATION_SPINS} spins, model has {}",
            model.dimension()
        )));
    }
    Ok(())
}

/// Exact values for an `ising-block` model by summing over every spin state.
/// State `i` sets spin `k` to `-1` when bit `k` of `i` is set.
pub fn enumerate_oracle(model: &SystemModel, alphas: &[f64], workers: usize) -> Result<OracleResult> {
    check_enumerable(model)?;
    let (report, full) = oracle_grid(alphas)?;
    let shift = model.coupling_shift();
    Ok(summarize(&SpinStates { model }, shift, &full, &report, workers)?.into_result(OracleMethod::Enumeration, 0.0))
}

/// State-wise quantities of an enumerated model, indexed like
/// [`enumerate_oracle`] orders states.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedDensities {
    pub h0: Vec<f64>,
    pub u: Vec<f64>,
    pub pi: Vec<f64>,
    pub pi0: Vec<f64>,
}

impl EnumeratedDensities {
    /// Normalized `exp(-H0 - alpha U)`.
    pub fn tempered(&self, alpha: f64) -> Vec<f64> {
        let e: Vec<f64> = self.h0.iter().zip(&self.u).map(|(h0, u)| -(h0 + alpha * u)).collect();
        let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = e.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }
}

pub fn enumerate_densities(model: &SystemModel) -> Result<EnumeratedDensities> {
    check_enumerable(model)?;
    if model.dimension() > MAX_DENSITY_SPINS {
        return Err(Error::OracleRefused(format!(
            "state-wise densities are capped at {MAX_DENSITY_SPINS} spins"
        )));
    }
    let states = SpinStates { model };
    let (h0, u): (Vec<f64>, Vec<f64>) = (0..states.len())
        .map(|i| {
            let (_, h0, u) = states.point(i);
            (h0, u)
        })
        .unzip();
    let mut d = EnumeratedDensities { h0, u, pi: vec![], pi0: vec![] };
    d.pi = d.tempered(1.0);
    d.pi0 = d.tempered(0.0);
    Ok(d)
}

/// `sum p log(p / q)` with `0 log 0 = 0`; infinite when `q` vanishes where
/// `p` does not.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi == 0.0 {
                0.0
            } else if qi == 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum()
}

/// `E_rho[U] + KL(rho, pi0)` for a discrete density `rho`.
pub fn gibbs_functional(u: &[f64], rho: &[f64], pi0: &[f64]) -> f64 {
    let e: f64 = u.iter().zip(rho).map(|(u, r)| u * r).sum();
    e + kl_divergence(rho, pi0)
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Hypercube `[lower, upper]^d` sampled with `points` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    /// Error bounds above this raise the `tolerance_exceeded` flag.
    #[serde(default = "default_grid_tolerance")]
    pub tolerance: f64,
}

fn default_grid_tolerance() -> f64 {
    1e-6
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lower: -8.0,
            upper: 8.0,
            points: 401,
            tolerance: default_grid_tolerance(),
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::input(format!(
                "quadrature box [{}, {}] is empty or not finite",
                self.lower, self.upper
            )));
        }
        if self.points < 3 {
            return Err(Error::input("quadrature needs at least 3 points per axis"));
        }
        Ok(())
    }

    fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    /// Same box, half the spacing.
    pub fn refined(&self) -> Self {
        Self {
            points: 2 * (self.points - 1) + 1,
            ..*self
        }
    }
}

struct TensorGrid<'a> {
    model: &'a SystemModel,
    dim: usize,
    spec: GridSpec,
    h: f64,
}

impl<'a> TensorGrid<'a> {
    fn new(model: &'a SystemModel, spec: GridSpec) -> Self {
        Self {
            model,
            dim: model.dimension(),
            spec,
            h: spec.spacing(),
        }
    }

    fn decode(&self, mut i: usize, idx: &mut [usize]) {
        let m = self.spec.points;
        for k in (0..self.dim).rev() {
            idx[k] = i % m;
            i /= m;
        }
    }

    fn coords(&self, idx: &[usize], x: &mut [f64]) {
        for (xk, &ik) in x.iter_mut().zip(idx) {
            *xk = self.spec.lower + ik as f64 * self.h;
        }
    }
}

impl PointSet for TensorGrid<'_> {
    fn len(&self) -> usize {
        self.spec.points.pow(self.dim as u32)
    }

    fn point(&self, i: usize) -> (f64, f64, f64) {
        let mut idx = [0usize; MAX_QUADRATURE_DIM + 1];
        let mut x = [0.0f64; MAX_QUADRATURE_DIM + 1];
        let d = self.dim;
        self.decode(i, &mut idx[..d]);
        self.coords(&idx[..d], &mut x[..d]);
        let last = self.spec.points - 1;
        let ln_w: f64 = idx[..d]
            .iter()
            .map(|&k| {
                let w = if k == 0 || k == last { 0.5 * self.h } else { self.h };
                w.ln()
            })
            .sum();
        (ln_w, self.model.h0_coords(&x[..d]), self.model.u_coords_unshifted(&x[..d]))
    }
}

/// Checks that `exp(-H0)` and `exp(-H)` have decayed below
/// [`BOUNDARY_DECAY`] of their grid maximum on every face of the box. Every
/// `exp(-H0 - alpha U)` lies below the larger of the two, so the endpoints
/// suffice.
fn check_boundary_decay(grid: &TensorGrid<'_>, workers: usize) -> Result<()> {
    let n = grid.len();
    let d = grid.dim;
    let n_chunks = n.div_ceil(CHUNK);
    // min energies over the whole grid and the worst (lowest) energies on
    // each face, for alpha = 0 and alpha = 1
    let faces = 2 * d;
    let partials = map_indexed(n_chunks, workers, |c| {
        let mut min_all = [f64::INFINITY; 2];
        let mut min_face = vec![[f64::INFINITY; 2]; faces];
        let mut idx = [0usize; MAX_QUADRATURE_DIM + 1];
        let mut x = [0.0f64; MAX_QUADRATURE_DIM + 1];
        let last = grid.spec.points - 1;
        for i in (c * CHUNK)..((c + 1) * CHUNK).min(n) {
            grid.decode(i, &mut idx[..d]);
            grid.coords(&idx[..d], &mut x[..d]);
            let h0 = grid.model.h0_coords(&x[..d]);
            let h = h0 + grid.model.u_coords(&x[..d]);
            let e = [h0, h];
            for j in 0..2 {
                min_all[j] = min_all[j].min(e[j]);
            }
            for k in 0..d {
                let face = if idx[k] == 0 {
                    Some(2 * k)
                } else if idx[k] == last {
                    Some(2 * k + 1)
                } else {
                    None
                };
                if let Some(f) = face {
                    for j in 0..2 {
                        min_face[f][j] = min_face[f][j].min(e[j]);
                    }
                }
            }
        }
        (min_all, min_face)
    });
    let mut min_all = [f64::INFINITY; 2];
    let mut min_face = vec![[f64::INFINITY; 2]; faces];
    for (ma, mf) in &partials {
        for j in 0..2 {
            min_all[j] = min_all[j].min(ma[j]);
        }
        for f in 0..faces {
            for j in 0..2 {
                min_face[f][j] = min_face[f][j].min(mf[f][j]);
            }
        }
    }
    let mut worst: Option<(f64, usize, usize)> = None;
    for f in 0..faces {
        for j in 0..2 {
            let ratio = (min_all[j] - min_face[f][j]).exp();
            if ratio >= BOUNDARY_DECAY && worst.is_none_or(|(r, _, _)| ratio > r) {
                worst = Some((ratio, f, j));
            }
        }
    }
    if let Some((ratio, f, j)) = worst {
        let axis = f / 2;
        let at = if f % 2 == 0 { grid.spec.lower } else { grid.spec.upper };
        let which = if j == 0 { "exp(-H0)" } else { "exp(-H)" };
        return Err(Error::OracleRefused(format!(
            "insufficient decay on face x{axis} = {at}: {which} reaches {ratio:.3e} of its maximum (limit {BOUNDARY_DECAY:e})"
        )));
    }
    Ok(())
}

/// Trapezoid tensor-grid values for a continuous model with `d <= 3`.
///
/// `error_bound` is the largest change of any reported quantity when the
/// grid spacing is halved; the reported values come from `grid` itself.
pub fn quadrature_oracle(
    model: &SystemModel,
    grid: &GridSpec,
    alphas: &[f64],
    workers: usize,
) -> Result<OracleResult> {
    if model.is_discrete() {
        return Err(Error::OracleRefused("quadrature needs a continuous model".into()));
    }
    if model.dimension() > MAX_QUADRATURE_DIM {
        return Err(Error::OracleRefused(format!(
            "quadrature is limited to d <= {MAX_QUADRATURE_DIM}, model has d = {}",
            model.dimension()
        )));
    }
    grid.validate()?;
    let (report, full) = oracle_grid(alphas)?;
    let coarse_grid = TensorGrid::new(model, *grid);
    check_boundary_decay(&coarse_grid, workers)?;
    let shift = model.coupling_shift();
    let coarse = summarize(&coarse_grid, shift, &full, &report, workers)?;
    let fine = summarize(&TensorGrid::new(model, grid.refined()), shift, &full, &report, workers)?;
    let error_bound = coarse.max_diff(&fine);
    let mut result = coarse.into_result(OracleMethod::Quadrature, error_bound);
    result.tolerance_exceeded = error_bound > grid.tolerance;
    Ok(result)
}

// ---------------------------------------------------------------------------
// Consistency checks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketReport {
    pub checks: Vec<CheckOutcome>,
}

impl BracketReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Re-verifies the invariants every oracle result must satisfy.
pub fn check_bracket(result: &OracleResult) -> BracketReport {
    let tol = result.check_tolerance();
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        })
    };
    push(
        "bracket",
        result.e_u_pi <= result.delta_f + tol && result.delta_f <= result.e_u_pi0 + tol,
        format!(
            "E_pi[U] = {} <= dF = {} <= E_pi0[U] = {} (tol {tol:e})",
            result.e_u_pi, result.delta_f, result.e_u_pi0
        ),
    );
    push(
        "kl_nonnegative",
        result.kl_pi_pi0 >= -tol && result.kl_pi0_pi >= -tol,
        format!("KL(pi, pi0) = {}, KL(pi0, pi) = {}", result.kl_pi_pi0, result.kl_pi0_pi),
    );
    let gap = (result.delta_f - (result.e_u_pi + result.kl_pi_pi0)).abs();
    push(
        "kl_identity",
        gap <= tol,
        format!("|dF - E_pi[U] - KL(pi, pi0)| = {gap:e}"),
    );
    let gap_rev = (result.e_u_pi0 - result.delta_f - result.kl_pi0_pi).abs();
    push(
        "kl_reverse_identity",
        gap_rev <= tol,
        format!("|E_pi0[U] - dF - KL(pi0, pi)| = {gap_rev:e}"),
    );
    let drops = result
        .gamma_curve
        .windows(2)
        .filter(|w| w[1].e_u_rho_alpha > w[0].e_u_rho_alpha + tol)
        .count();
    push(
        "gamma_curve_monotone",
        drops == 0,
        format!("{drops} increases of E_rho_alpha[U] along alpha"),
    );
    let g0 = result.gamma_at(0.0);
    push(
        "gamma_zero_at_origin",
        g0.is_none_or(|g| g.abs() <= tol),
        format!("gamma(0) = {g0:?}"),
    );
    BracketReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussianPairParams, IsingBlockParams, ModelParams, QuarticPairParams};
    use proptest::prelude::*;

    fn ising(j: f64, k: f64, split: Vec<usize>, intra: Vec<(usize, usize)>, cross: Vec<(usize, usize)>) -> SystemModel {
        SystemModel::new(
            ModelParams::IsingBlock(IsingBlockParams { j, k, intra_edges: intra, cross_edges: cross }),
            split,
            1.0,
        )
        .unwrap()
    }

    fn gaussian(d: SquareMatrix, c: SquareMatrix, split: Vec<usize>) -> SystemModel {
        SystemModel::new(ModelParams::GaussianPair(GaussianPairParams { d, c }), split, 1.0).unwrap()
    }

    fn gaussian2(c: f64) -> SystemModel {
        gaussian(
            SquareMatrix::identity(2),
            SquareMatrix::from_row_major(2, vec![0.0, c, c, 0.0]).unwrap(),
            vec![1, 1],
        )
    }

    fn cross_block(n: usize, split: usize, c: f64) -> SquareMatrix {
        let mut m = SquareMatrix::zeros(n);
        for i in 0..split {
            for j in split..n {
                m.set(i, j, c);
                m.set(j, i, c);
            }
        }
        m
    }

    #[test]
    fn two_spin_closed_forms() {
        let m = ising(0.0, 1.0, vec![1, 1], vec![], vec![(0, 1)]);
        let r = enumerate_oracle(&m, &[0.0, 0.5, 1.0], 1).unwrap();
        let t1 = 1.0f64.tanh();
        let lc1 = 1.0f64.cosh().ln();
        assert!((r.delta_f + lc1).abs() < 1e-15);
        assert!((r.e_u_pi + t1).abs() < 1e-15);
        assert!(r.e_u_pi0.abs() < 1e-15);
        assert!((r.kl_pi_pi0 - (t1 - lc1)).abs() < 1e-15);
        assert!((r.gamma_at(0.5).unwrap() + 0.5f64.cosh().ln()).abs() < 1e-15);
        assert!((r.e_u_at(0.5).unwrap() + 0.5f64.tanh()).abs() < 1e-15);
        assert_eq!(r.method, OracleMethod::Enumeration);
        assert_eq!(r.error_bound, 0.0);
        assert!(check_bracket(&r).all_passed());
    }

    #[test]
    fn decoupled_spins_give_zero() {
        let m = ising(1.0, 0.0, vec![2, 2], vec![(0, 1), (2, 3)], vec![(0, 2)]);
        let r = enumerate_oracle(&m, &[], 1).unwrap();
        assert_eq!(r.delta_f, 0.0);
        assert_eq!(r.kl_pi_pi0, 0.0);
        assert_eq!(r.kl_pi0_pi, 0.0);
    }

    #[test]
    fn enumeration_cap_and_kind() {
        let big = ising(1.0, 1.0, vec![15, 15], vec![], vec![(0, 15)]);
        let err = enumerate_oracle(&big, &[], 1).unwrap_err();
        assert!(matches!(err, Error::OracleRefused(_)));
        assert!(err.to_string().contains("24"));
        assert!(enumerate_oracle(&gaussian2(0.5), &[], 1).is_err());
        assert!(gaussian_oracle(&big, &[]).is_err());
    }

    #[test]
    fn gaussian_two_by_two() {
        let r = gaussian_oracle(&gaussian2(0.5), &[0.0, 0.5, 1.0]).unwrap();
        assert!((r.delta_f - 0.5 * 0.75f64.ln()).abs() < 1e-15);
        assert!((r.e_u_pi + 1.0 / 3.0).abs() < 1e-15);
        assert!(r.e_u_pi0.abs() < 1e-15);
        assert!((r.kl_pi_pi0 - (0.5 * 0.75f64.ln() + 1.0 / 3.0)).abs() < 1e-14);
        assert_eq!(r.e_h0_pi0, 1.0);
        assert!(check_bracket(&r).all_passed());
        let z = gaussian_oracle(&gaussian2(0.0), &[]).unwrap();
        assert_eq!((z.delta_f, z.e_u_pi, z.e_u_pi0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn gaussian_matches_quadrature_in_2d() {
        let m = gaussian2(0.5);
        let alphas = [0.0, 0.25, 0.5, 0.75, 1.0];
        let g = gaussian_oracle(&m, &alphas).unwrap();
        let spec = GridSpec { lower: -10.0, upper: 10.0, points: 400, tolerance: 1e-8 };
        let q = quadrature_oracle(&m, &spec, &alphas, 2).unwrap();
        assert!(q.error_bound < 1e-8, "{}", q.error_bound);
        assert!(!q.tolerance_exceeded);
        assert!((g.delta_f - q.delta_f).abs() <= 1e-6);
        for (a, b) in g.gamma_curve.iter().zip(&q.gamma_curve) {
            assert!((a.gamma - b.gamma).abs() <= 1e-6);
            assert!((a.e_u_rho_alpha - b.e_u_rho_alpha).abs() <= 1e-6);
        }
        assert!((g.kl_pi0_pi - q.kl_pi0_pi).abs() <= 1e-6);
        assert!((g.e_h0_pi0 - q.e_h0_pi0).abs() <= 1e-6);
    }

    #[test]
    fn narrow_box_is_refused_with_face() {
        let spec = GridSpec { lower: -8.0, upper: 8.0, points: 400, tolerance: 1e-6 };
        let err = quadrature_oracle(&gaussian2(0.5), &spec, &[], 1).unwrap_err();
        assert!(matches!(err, Error::OracleRefused(_)));
        assert!(err.to_string().contains("face x"), "{err}");
    }

    #[test]
    fn gaussian_matches_quadrature_in_3d() {
        let mut d = SquareMatrix::identity(3);
        d.set(0, 1, 0.3);
        d.set(1, 0, 0.3);
        d.set(2, 2, 1.5);
        let c = cross_block(3, 2, 0.4);
        let m = gaussian(d, c, vec![2, 1]);
        let g = gaussian_oracle(&m, &[0.0, 0.5, 1.0]).unwrap();
        let spec = GridSpec { lower: -11.0, upper: 11.0, points: 111, tolerance: 1e-6 };
        let q = quadrature_oracle(&m, &spec, &[0.0, 0.5, 1.0], 4).unwrap();
        assert!((g.delta_f - q.delta_f).abs() <= q.error_bound.max(1e-9));
        assert!((g.e_u_pi - q.e_u_pi).abs() <= q.error_bound.max(1e-9));
        assert!((g.kl_pi_pi0 - q.kl_pi_pi0).abs() <= q.error_bound.max(1e-9));
    }

    /// Plain 4-d trapezoid sum, independent of the chunked oracle path.
    fn brute_force_4d(m: &SystemModel, lo: f64, hi: f64, n: usize) -> (f64, f64, f64) {
        let h = (hi - lo) / (n - 1) as f64;
        let w = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let (mut z, mut z0, mut zu, mut z0u) = (0.0, 0.0, 0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let x = [lo + a as f64 * h, lo + b as f64 * h, lo + c as f64 * h, lo + d as f64 * h];
                        let ww = w(a) * w(b) * w(c) * w(d);
                        let h0 = m.h0_coords(&x);
                        let u = m.u_coords(&x);
                        let e = ww * (-(h0 + u)).exp();
                        let e0 = ww * (-h0).exp();
                        z += e;
                        z0 += e0;
                        zu += e * u;
                        z0u += e0 * u;
                    }
                }
            }
        }
        (-(z / z0).ln(), zu / z, z0u / z0)
    }

    #[test]
    fn gaussian_four_dim_cross_check() {
        let m = gaussian(SquareMatrix::identity(4), cross_block(4, 2, 0.3), vec![2, 2]);
        let g = gaussian_oracle(&m, &[]).unwrap();
        let (df, eu, eu0) = brute_force_4d(&m, -9.0, 9.0, 61);
        assert!((g.delta_f - df).abs() < 1e-8, "{} vs {df}", g.delta_f);
        assert!((g.e_u_pi - eu).abs() < 1e-8);
        assert!((g.e_u_pi0 - eu0).abs() < 1e-8);
        assert!(check_bracket(&g).all_passed());
    }

    #[test]
    fn quartic_values() {
        let spec = GridSpec { lower: -6.0, upper: 6.0, points: 241, tolerance: 1e-5 };
        let q0 = SystemModel::new(ModelParams::QuarticPair(QuarticPairParams { a: 1.0, c: 0.0 }), vec![1, 1], 1.0).unwrap();
        let r0 = quadrature_oracle(&q0, &spec, &[], 1).unwrap();
        assert_eq!(r0.delta_f, 0.0);
        let q = SystemModel::new(ModelParams::QuarticPair(QuarticPairParams { a: 1.0, c: 0.5 }), vec![1, 1], 1.0).unwrap();
        let r = quadrature_oracle(&q, &spec, &[0.0, 0.5, 1.0], 1).unwrap();
        assert!(r.error_bound <= 1e-5, "{}", r.error_bound);
        assert!(check_bracket(&r).all_passed(), "{:?}", check_bracket(&r));
        assert!(r.delta_f < 0.0 && r.e_u_pi < r.delta_f);
        assert!(quadrature_oracle(&gaussian(SquareMatrix::identity(4), SquareMatrix::zeros(4), vec![2, 2]), &spec, &[], 1).is_err());
    }

    #[test]
    fn coarse_grid_raises_tolerance_flag() {
        let q = SystemModel::new(ModelParams::QuarticPair(QuarticPairParams { a: 1.0, c: 0.5 }), vec![1, 1], 1.0).unwrap();
        let spec = GridSpec { lower: -6.0, upper: 6.0, points: 7, tolerance: 1e-12 };
        let r = quadrature_oracle(&q, &spec, &[], 1).unwrap();
        assert!(r.tolerance_exceeded);
        assert!(r.error_bound > 1e-12);
    }

    #[test]
    fn corrupted_results_fail_checks() {
        let m = ising(0.0, 1.0, vec![1, 1], vec![], vec![(0, 1)]);
        let r = enumerate_oracle(&m, &[], 1).unwrap();
        let mut bad = r.clone();
        bad.delta_f += 1.0;
        let rep = check_bracket(&bad);
        assert!(!rep.get("bracket").unwrap().passed);
        let mut neg = r.clone();
        neg.kl_pi_pi0 = -1e-3;
        assert!(!check_bracket(&neg).get("kl_nonnegative").unwrap().passed);
    }

    #[test]
    fn densities_and_minimizer() {
        let m = ising(0.5, 1.0, vec![3, 3], vec![(0, 1), (1, 2), (3, 4), (4, 5)], vec![(0, 3), (2, 5)]);
        let r = enumerate_oracle(&m, &[], 1).unwrap();
        let d = enumerate_densities(&m).unwrap();
        assert!((kl_divergence(&d.pi, &d.pi0) - r.kl_pi_pi0).abs() < 1e-12);
        for i in 0..d.pi.len() {
            let rho = (r.delta_f - d.u[i]).exp() * d.pi0[i];
            assert!((rho - d.pi[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_divergence_edge_cases() {
        assert_eq!(kl_divergence(&[0.0, 1.0], &[0.5, 0.5]), 2f64.ln());
        assert_eq!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), f64::INFINITY);
    }

    #[test]
    fn result_is_independent_of_workers() {
        let intra: Vec<(usize, usize)> = (0..7).map(|i| (i, (i + 1) % 7)).chain((7..14).map(|i| (i, 7 + (i + 1 - 7) % 7))).collect();
        let m = ising(1.0, 0.7, vec![7, 7], intra, vec![(0, 7), (3, 10)]);
        let a = enumerate_oracle(&m, &[0.0, 0.5, 1.0], 1).unwrap();
        let b = enumerate_oracle(&m, &[0.0, 0.5, 1.0], 4).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn random_ising_models_satisfy_invariants(
            j in -1.5f64..1.5,
            k in -2.0f64..2.0,
            cross in prop::collection::vec((0usize..4, 4usize..8), 1..5),
        ) {
            let intra = vec![(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7)];
            let m = ising(j, k, vec![4, 4], intra, cross);
            let r = enumerate_oracle(&m, &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0], 1).unwrap();
            let rep = check_bracket(&r);
            prop_assert!(rep.all_passed(), "{:?}", rep);
        }

        #[test]
        fn random_gaussians_satisfy_invariants(c01 in -0.45f64..0.45, c02 in -0.45f64..0.45, s in 0.5f64..2.0) {
            let mut d = SquareMatrix::identity(3);
            d.set(2, 2, s);
            let mut c = SquareMatrix::zeros(3);
            c.set(0, 2, c01);
            c.set(2, 0, c01);
            c.set(1, 2, c02);
            c.set(2, 1, c02);
            if let Ok(m) = SystemModel::new(ModelParams::GaussianPair(GaussianPairParams { d, c }), vec![2, 1], 1.0) {
                let r = gaussian_oracle(&m, &[0.0, 0.5, 1.0]).unwrap();
                prop_assert!(check_bracket(&r).all_passed());
            }
        }
    }
}
