//! Coupled-system models `H = H0 + U`.
//!
//! Every energy leaving this module is already multiplied by the inverse
//! temperature, so downstream code works with dimensionless `beta * H0` and
//! `beta * U` and never sees `beta` again.
//!
//! Three families are built in:
//!
//! | kind            | H0                         | U                          |
//! |-----------------|----------------------------|----------------------------|
//! | `gaussian-pair` | `x^T D x / 2`              | `x^T C x / 2`              |
//! | `ising-block`   | `-J sum_intra s_i s_j`     | `-K sum_cross s_i s_j`     |
//! | `quartic-pair`  | `a (x1^4 + x2^4) / 4`      | `c x1 x2`                  |
//!
//! Each family optionally carries a constant `coupling_offset` added to `U`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, SquareMatrix};

/// Largest spin count accepted by the enumeration oracle.
pub const MAX_ENUMERATION_SPINS: usize = 24;

/// Tolerance on `|a_ij - a_ji|` when checking matrix symmetry.
const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// A point of the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum State {
    Continuous(Vec<f64>),
    Spins(Vec<i8>),
}

impl State {
    pub fn len(&self) -> usize {
        match self {
            State::Continuous(x) => x.len(),
            State::Spins(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates as reals (spins become +-1.0).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self {
            State::Continuous(x) => x.clone(),
            State::Spins(s) => s.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    GaussianPair,
    IsingBlock,
    QuarticPair,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::GaussianPair => "gaussian-pair",
            ModelKind::IsingBlock => "ising-block",
            ModelKind::QuarticPair => "quartic-pair",
        }
    }
}

/// Quadratic forms `D` (block diagonal, decoupled part) and `C` (cross-block
/// coupling).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPairParams {
    pub d: SquareMatrix,
    pub c: SquareMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsingBlockParams {
    /// Intra-block bond strength.
    pub j: f64,
    /// Cross-block bond strength.
    pub k: f64,
    pub intra_edges: Vec<(usize, usize)>,
    pub cross_edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticPairParams {
    /// Quartic stiffness, must be positive.
    pub a: f64,
    /// Bilinear coupling `c x1 x2`.
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    GaussianPair(GaussianPairParams),
    IsingBlock(IsingBlockParams),
    QuarticPair(QuarticPairParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::GaussianPair(_) => ModelKind::GaussianPair,
            ModelParams::IsingBlock(_) => ModelKind::IsingBlock,
            ModelParams::QuarticPair(_) => ModelKind::QuarticPair,
        }
    }
}

/// Per-site neighbour lists for single-flip energy differences.
#[derive(Debug, Clone, Default)]
struct SpinNeighbours {
    intra: Vec<Vec<usize>>,
    cross: Vec<Vec<usize>>,
}

/// A validated coupled system. Immutable once built.
#[derive(Debug, Clone)]
pub struct SystemModel {
    params: ModelParams,
    dimension: usize,
    subsystem_split: Vec<usize>,
    beta: f64,
    coupling_offset: f64,
    block_of: Vec<usize>,
    // beta-scaled copies of the Gaussian forms
    scaled_d: Option<SquareMatrix>,
    scaled_c: Option<SquareMatrix>,
    neighbours: SpinNeighbours,
}

impl SystemModel {
    /// Validates `params` against the split and temperature and builds the
    /// model.
    pub fn new(params: ModelParams, subsystem_split: Vec<usize>, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::validation(format!(
                "beta must be positive and finite, got {beta}"
            )));
        }
        if subsystem_split.is_empty() || subsystem_split.len() > 2 {
            return Err(Error::validation(format!(
                "built-in models take one or two subsystems, got split {subsystem_split:?}"
            )));
        }
        if subsystem_split.contains(&0) {
            return Err(Error::validation(format!(
                "subsystem sizes must be positive, got {subsystem_split:?}"
            )));
        }
        let dimension: usize = subsystem_split.iter().sum();
        let block_of: Vec<usize> = subsystem_split
            .iter()
            .enumerate()
            .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
            .collect();

        let mut model = Self {
            params,
            dimension,
            subsystem_split,
            beta,
            coupling_offset: 0.0,
            block_of,
            scaled_d: None,
            scaled_c: None,
            neighbours: SpinNeighbours::default(),
        };
        match model.params.clone() {
            ModelParams::GaussianPair(p) => model.validate_gaussian(&p)?,
            ModelParams::IsingBlock(p) => model.validate_ising(&p)?,
            ModelParams::QuarticPair(p) => model.validate_quartic(&p)?,
        }
        Ok(model)
    }

    /// Adds a constant to the coupling energy (before scaling by beta).
    pub fn with_coupling_offset(mut self, offset: f64) -> Result<Self> {
        if !offset.is_finite() {
            return Err(Error::validation("coupling_offset must be finite"));
        }
        self.coupling_offset = offset;
        Ok(self)
    }

    fn validate_gaussian(&mut self, p: &GaussianPairParams) -> Result<()> {
        let n = self.dimension;
        for (name, m) in [("D", &p.d), ("C", &p.c)] {
            if m.dim() != n {
                return Err(Error::validation(format!(
                    "{name} is {0}x{0} but the subsystem split has dimension {n}",
                    m.dim()
                )));
            }
            if m.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("{name} has non-finite entries")));
            }
            if m.asymmetry() > SYMMETRY_TOLERANCE {
                return Err(Error::validation(format!(
                    "{name} is not symmetric (max asymmetry {:.3e})",
                    m.asymmetry()
                )));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let same = self.block_of[i] == self.block_of[j];
                if !same && p.d.get(i, j) != 0.0 {
                    return Err(Error::validation(format!(
                        "D is not block diagonal: D[{i}][{j}] = {} couples two subsystems",
                        p.d.get(i, j)
                    )));
                }
                if same && p.c.get(i, j) != 0.0 {
                    return Err(Error::validation(format!(
                        "C has an intra-block entry C[{i}][{j}] = {}",
                        p.c.get(i, j)
                    )));
                }
            }
        }
        Cholesky::factor(&p.d)
            .map_err(|e| Error::validation(format!("D is not positive definite: {e}")))?;
        Cholesky::factor(&p.d.add_scaled(&p.c, 1.0))
            .map_err(|e| Error::validation(format!("D + C is not positive definite: {e}")))?;
        self.scaled_d = Some(p.d.scaled(self.beta));
        self.scaled_c = Some(p.c.scaled(self.beta));
        Ok(())
    }

    fn validate_ising(&mut self, p: &IsingBlockParams) -> Result<()> {
        let n = self.dimension;
        if !p.j.is_finite() || !p.k.is_finite() {
            return Err(Error::validation("J and K must be finite"));
        }
        let mut nb = SpinNeighbours {
            intra: vec![Vec::new(); n],
            cross: vec![Vec::new(); n],
        };
        for &(a, b) in &p.intra_edges {
            self.check_edge(a, b, "intra")?;
            if self.block_of[a] != self.block_of[b] {
                return Err(Error::validation(format!(
                    "intra edge ({a}, {b}) spans blocks {} and {}",
                    self.block_of[a], self.block_of[b]
                )));
            }
            nb.intra[a].push(b);
            nb.intra[b].push(a);
        }
        for &(a, b) in &p.cross_edges {
            self.check_edge(a, b, "cross")?;
            if self.block_of[a] == self.block_of[b] {
                return Err(Error::validation(format!(
                    "cross edge ({a}, {b}) lies inside block {}",
                    self.block_of[a]
                )));
            }
            nb.cross[a].push(b);
            nb.cross[b].push(a);
        }
        self.neighbours = nb;
        Ok(())
    }

    fn check_edge(&self, a: usize, b: usize, what: &str) -> Result<()> {
        if a >= self.dimension || b >= self.dimension {
            return Err(Error::validation(format!(
                "{what} edge ({a}, {b}) has an index outside 0..{}",
                self.dimension
            )));
        }
        if a == b {
            return Err(Error::validation(format!("{what} edge ({a}, {b}) is a self loop")));
        }
        Ok(())
    }

    fn validate_quartic(&mut self, p: &QuarticPairParams) -> Result<()> {
        if self.subsystem_split != [1, 1] {
            return Err(Error::validation(format!(
                "quartic-pair requires subsystem split [1, 1], got {:?}",
                self.subsystem_split
            )));
        }
        if !(p.a > 0.0) || !p.a.is_finite() {
            return Err(Error::validation(format!("quartic stiffness a must be positive, got {}", p.a)));
        }
        if !p.c.is_finite() {
            return Err(Error::validation("quartic coupling c must be finite"));
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn subsystem_split(&self) -> &[usize] {
        &self.subsystem_split
    }

    pub fn n_subsystems(&self) -> usize {
        self.subsystem_split.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn coupling_offset(&self) -> f64 {
        self.coupling_offset
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.params, ModelParams::IsingBlock(_))
    }

    /// Subsystem index of each coordinate.
    pub fn block_of(&self) -> &[usize] {
        &self.block_of
    }

    fn check_state(&self, state: &State) -> Result<()> {
        if state.len() != self.dimension {
            return Err(Error::input(format!(
                "state has length {} but the model has dimension {}",
                state.len(),
                self.dimension
            )));
        }
        match (state, self.is_discrete()) {
            (State::Spins(s), true) => {
                if let Some(i) = s.iter().position(|&v| v != 1 && v != -1) {
                    return Err(Error::input(format!("spin {i} is {} (must be +-1)", s[i])));
                }
                Ok(())
            }
            (State::Continuous(_), false) => Ok(()),
            (State::Spins(_), false) => Err(Error::input(format!(
                "{} expects continuous coordinates, got spins",
                self.kind().as_str()
            ))),
            (State::Continuous(_), true) => Err(Error::input(format!(
                "{} expects spins, got continuous coordinates",
                self.kind().as_str()
            ))),
        }
    }

    /// `beta * H0(state)`.
    pub fn eval_h0(&self, state: &State) -> Result<f64> {
        self.check_state(state)?;
        Ok(match state {
            State::Continuous(x) => self.h0_coords(x),
            State::Spins(s) => self.h0_spins(s),
        })
    }

    /// `beta * U(state)`.
    pub fn eval_u(&self, state: &State) -> Result<f64> {
        self.check_state(state)?;
        Ok(match state {
            State::Continuous(x) => self.u_coords(x),
            State::Spins(s) => self.u_spins(s),
        })
    }

    /// `beta * H(state) = eval_h0 + eval_u`.
    pub fn eval_h(&self, state: &State) -> Result<f64> {
        Ok(self.eval_h0(state)? + self.eval_u(state)?)
    }

    /// Energy of the tempered density `rho_alpha ~ exp(-H0 - alpha U)`.
    pub fn tempered_energy(&self, alpha: f64, state: &State) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(self.eval_h0(state)? + alpha * self.eval_u(state)?)
    }

    /// `beta * H_i` for each subsystem `i`; these sum to `eval_h0`.
    pub fn subsystem_energies(&self, state: &State) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let nb = self.n_subsystems();
        let mut out = vec![0.0; nb];
        match (&self.params, state) {
            (ModelParams::GaussianPair(_), State::Continuous(x)) => {
                let d = self.scaled_d.as_ref().expect("validated gaussian model");
                for i in 0..self.dimension {
                    for j in 0..self.dimension {
                        if self.block_of[i] == self.block_of[j] {
                            out[self.block_of[i]] += 0.5 * x[i] * d.get(i, j) * x[j];
                        }
                    }
                }
            }
            (ModelParams::IsingBlock(p), State::Spins(s)) => {
                for &(a, b) in &p.intra_edges {
                    out[self.block_of[a]] -= self.beta * p.j * f64::from(s[a] * s[b]);
                }
            }
            (ModelParams::QuarticPair(p), State::Continuous(x)) => {
                for (i, xi) in x.iter().enumerate() {
                    out[i] = self.beta * p.a * xi.powi(4) / 4.0;
                }
            }
            _ => unreachable!("state kind checked above"),
        }
        Ok(out)
    }

    // Unchecked fast paths used by the sampler and the oracles.

    pub(crate) fn h0_coords(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::GaussianPair(_) => {
                0.5 * self.scaled_d.as_ref().expect("gaussian").quadratic_form(x)
            }
            ModelParams::QuarticPair(p) => {
                self.beta * p.a * (x[0].powi(4) + x[1].powi(4)) / 4.0
            }
            ModelParams::IsingBlock(_) => unreachable!("ising model has no continuous states"),
        }
    }

    pub(crate) fn u_coords(&self, x: &[f64]) -> f64 {
        self.u_coords_unshifted(x) + self.coupling_shift()
    }

    /// `beta * coupling_offset`, the constant part of the scaled coupling.
    pub(crate) fn coupling_shift(&self) -> f64 {
        self.beta * self.coupling_offset
    }

    /// Scaled coupling without the constant offset.
    pub(crate) fn u_coords_unshifted(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::GaussianPair(_) => {
                0.5 * self.scaled_c.as_ref().expect("gaussian").quadratic_form(x)
            }
            ModelParams::QuarticPair(p) => self.beta * p.c * x[0] * x[1],
            ModelParams::IsingBlock(_) => unreachable!("ising model has no continuous states"),
        }
    }

    pub(crate) fn h0_spins(&self, s: &[i8]) -> f64 {
        match &self.params {
            ModelParams::IsingBlock(p) => -self.beta * p.j * bond_sum(s, &p.intra_edges),
            _ => unreachable!("only ising models have spin states"),
        }
    }

    pub(crate) fn u_spins(&self, s: &[i8]) -> f64 {
        self.u_spins_unshifted(s) + self.coupling_shift()
    }

    pub(crate) fn u_spins_unshifted(&self, s: &[i8]) -> f64 {
        match &self.params {
            ModelParams::IsingBlock(p) => -self.beta * p.k * bond_sum(s, &p.cross_edges),
            _ => unreachable!("only ising models have spin states"),
        }
    }

    /// Change of `(beta*H0, beta*U)` when spin `i` is flipped.
    pub(crate) fn spin_flip_delta(&self, s: &[i8], i: usize) -> (f64, f64) {
        let ModelParams::IsingBlock(p) = &self.params else {
            unreachable!("only ising models have spin states")
        };
        let si = i32::from(s[i]);
        let local = |nbrs: &[usize]| -> f64 {
            f64::from(si * nbrs.iter().map(|&j| i32::from(s[j])).sum::<i32>())
        };
        (
            2.0 * self.beta * p.j * local(&self.neighbours.intra[i]),
            2.0 * self.beta * p.k * local(&self.neighbours.cross[i]),
        )
    }
}

fn bond_sum(s: &[i8], edges: &[(usize, usize)]) -> f64 {
    f64::from(
        edges
            .iter()
            .map(|&(a, b)| i32::from(s[a]) * i32::from(s[b]))
            .sum::<i32>(),
    )
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::input(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

// ---------------------------------------------------------------------------
// Config records
// ---------------------------------------------------------------------------

/// Model section of an experiment config. `params` is interpreted according
/// to `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub subsystem_split: Vec<usize>,
    #[serde(default)]
    pub coupling_offset: f64,
    pub params: serde_json::Value,
}

fn default_beta() -> f64 {
    1.0
}

/// `params` for `gaussian-pair`: row-major `d x d` matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPairConfig {
    pub d: Vec<f64>,
    pub c: Vec<f64>,
}

/// `params` for `ising-block`: 0-based index pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsingBlockConfig {
    pub j: f64,
    pub k: f64,
    #[serde(default)]
    pub intra_edges: Vec<[usize; 2]>,
    #[serde(default)]
    pub cross_edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuarticPairConfig {
    pub a: f64,
    pub c: f64,
}

fn parse_params<T: serde::de::DeserializeOwned>(value: &serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(value.clone()).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." {
            "model.params".to_string()
        } else {
            format!("model.params.{inner}")
        };
        Error::config(path, e.inner().to_string())
    })
}

/// Builds and validates a model from its config record.
pub fn build_model(cfg: &ModelConfig) -> Result<SystemModel> {
    let dim: usize = cfg.subsystem_split.iter().sum();
    let params = match cfg.kind {
        ModelKind::GaussianPair => {
            let p: GaussianPairConfig = parse_params(&cfg.params)?;
            ModelParams::GaussianPair(GaussianPairParams {
                d: SquareMatrix::from_row_major(dim, p.d)
                    .map_err(|e| Error::config("model.params.d", e.to_string()))?,
                c: SquareMatrix::from_row_major(dim, p.c)
                    .map_err(|e| Error::config("model.params.c", e.to_string()))?,
            })
        }
        ModelKind::IsingBlock => {
            let p: IsingBlockConfig = parse_params(&cfg.params)?;
            ModelParams::IsingBlock(IsingBlockParams {
                j: p.j,
                k: p.k,
                intra_edges: p.intra_edges.iter().map(|e| (e[0], e[1])).collect(),
                cross_edges: p.cross_edges.iter().map(|e| (e[0], e[1])).collect(),
            })
        }
        ModelKind::QuarticPair => {
            let p: QuarticPairConfig = parse_params(&cfg.params)?;
            ModelParams::QuarticPair(QuarticPairParams { a: p.a, c: p.c })
        }
    };
    SystemModel::new(params, cfg.subsystem_split.clone(), cfg.beta)?
        .with_coupling_offset(cfg.coupling_offset)
}
