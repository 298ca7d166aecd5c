//! Metropolis chains targeting the tempered family
//! `rho_alpha ~ exp(-H0 - alpha U)`; `alpha = 0` is the decoupled ensemble,
//! `alpha = 1` the coupled one.
//!
//! Continuous models use a symmetric uniform random walk on the full state,
//! spin models use single-site flips with the site drawn uniformly. Chains are
//! seeded ChaCha streams, so a `(model, config)` pair always yields the same
//! batch bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_alpha, State, SystemModel};
use crate::parallel::map_indexed;

/// Minimum series length accepted by [`diagnostics`].
pub const MIN_DIAGNOSTIC_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub target_alpha: f64,
    pub n_steps: u64,
    pub burn_in: u64,
    /// Half-width of the uniform proposal; ignored for spin models.
    pub step_size: f64,
    pub thinning: u64,
    pub seed: u64,
}

impl ChainConfig {
    /// Config with the default burn-in (10% of `n_steps`) and no thinning.
    pub fn new(target_alpha: f64, n_steps: u64, step_size: f64, seed: u64) -> Self {
        Self {
            target_alpha,
            n_steps,
            burn_in: n_steps / 10,
            step_size,
            thinning: 1,
            seed,
        }
    }

    pub fn with_alpha(self, target_alpha: f64) -> Self {
        Self { target_alpha, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Number of states a chain with this config keeps.
    pub fn retained(&self) -> u64 {
        if self.burn_in >= self.n_steps || self.thinning == 0 {
            return 0;
        }
        (self.n_steps - self.burn_in).div_ceil(self.thinning)
    }

    pub fn validate(&self, discrete: bool) -> Result<()> {
        check_alpha(self.target_alpha).map_err(|e| Error::config("chain.target_alpha", e.to_string()))?;
        if self.n_steps == 0 {
            return Err(Error::config("chain.n_steps", "must be positive"));
        }
        if self.thinning == 0 {
            return Err(Error::config("chain.thinning", "must be at least 1"));
        }
        if self.burn_in >= self.n_steps {
            return Err(Error::config(
                "chain.burn_in",
                format!(
                    "burn_in {} leaves zero retained samples out of {} steps",
                    self.burn_in, self.n_steps
                ),
            ));
        }
        if !discrete && !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config(
                "chain.step_size",
                format!("must be positive and finite, got {}", self.step_size),
            ));
        }
        Ok(())
    }
}

/// Retained states stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub enum StateBuffer {
    Continuous { dim: usize, data: Vec<f64> },
    Spins { dim: usize, data: Vec<i8> },
}

impl StateBuffer {
    pub fn len(&self) -> usize {
        match self {
            StateBuffer::Continuous { dim, data } => data.len() / dim,
            StateBuffer::Spins { dim, data } => data.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> State {
        match self {
            StateBuffer::Continuous { dim, data } => State::Continuous(data[i * dim..(i + 1) * dim].to_vec()),
            StateBuffer::Spins { dim, data } => State::Spins(data[i * dim..(i + 1) * dim].to_vec()),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

/// Retained output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub states: StateBuffer,
    /// `eval_u` of each retained state.
    pub u_values: Vec<f64>,
    /// `eval_h0` of each retained state.
    pub h0_values: Vec<f64>,
    pub acceptance_rate: f64,
    pub target_alpha: f64,
    pub seed: u64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.u_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    /// Integrated autocorrelation time of the U series, in retained samples.
    pub iact_u: f64,
    pub ess_u: f64,
    /// Set when the U series has zero variance.
    pub degenerate: bool,
}

/// Batch-means autocorrelation summary of an arbitrary series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesStats {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub iact: f64,
    pub ess: f64,
    pub degenerate: bool,
}

impl SeriesStats {
    /// Standard error of the mean, `sd / sqrt(ess)`.
    pub fn std_error(&self) -> f64 {
        (self.variance / self.ess).sqrt()
    }
}

/// Mean, variance and batch-means IACT of `series`.
///
/// The series is cut into `floor(sqrt(n))` batches;
/// `iact = var(batch means) * batch_len / (2 var(series))`, floored at 0.5,
/// and `ess = n / (2 iact)` clipped to `n`.
pub fn series_stats(series: &[f64]) -> Result<SeriesStats> {
    let n = series.len();
    if n < MIN_DIAGNOSTIC_LEN {
        return Err(Error::input(format!(
            "series of length {n} is too short for diagnostics (need {MIN_DIAGNOSTIC_LEN})"
        )));
    }
    let nf = n as f64;
    // shifted by the first value so a constant series has its exact mean
    let x0 = series[0];
    let mean = x0 + series.iter().map(|v| v - x0).sum::<f64>() / nf;
    let variance = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if !mean.is_finite() || !variance.is_finite() {
        return Err(Error::Numerical("series contains non-finite values".into()));
    }
    if variance == 0.0 {
        return Ok(SeriesStats {
            mean,
            variance,
            iact: 0.5,
            ess: nf,
            degenerate: true,
        });
    }
    let n_batches = (n as f64).sqrt().floor() as usize;
    let batch_len = n / n_batches;
    let batch_means: Vec<f64> = series[..n_batches * batch_len]
        .chunks_exact(batch_len)
        .map(|c| c.iter().sum::<f64>() / batch_len as f64)
        .collect();
    let bm_mean = batch_means.iter().sum::<f64>() / n_batches as f64;
    let bm_var = batch_means.iter().map(|m| (m - bm_mean).powi(2)).sum::<f64>() / (n_batches as f64 - 1.0);
    let iact = (bm_var * batch_len as f64 / (2.0 * variance)).max(0.5);
    let ess = (nf / (2.0 * iact)).min(nf);
    Ok(SeriesStats {
        mean,
        variance,
        iact,
        ess,
        degenerate: false,
    })
}

pub fn diagnostics(batch: &SampleBatch) -> Result<ChainDiagnostics> {
    let s = series_stats(&batch.u_values)?;
    Ok(ChainDiagnostics {
        acceptance_rate: batch.acceptance_rate,
        iact_u: s.iact,
        ess_u: s.ess,
        degenerate: s.degenerate,
    })
}

/// Runs one Metropolis chain targeting `exp(-H0 - target_alpha * U)`.
pub fn run_chain(model: &SystemModel, cfg: &ChainConfig) -> Result<SampleBatch> {
    cfg.validate(model.is_discrete())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let alpha = cfg.target_alpha;
    let dim = model.dimension();
    let retained = cfg.retained() as usize;
    let mut u_values = Vec::with_capacity(retained);
    let mut h0_values = Vec::with_capacity(retained);
    let mut accepted: u64 = 0;
    let keep = |t: u64| t >= cfg.burn_in && (t - cfg.burn_in).is_multiple_of(cfg.thinning);

    let states = if model.is_discrete() {
        let mut s: Vec<i8> = (0..dim).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        let mut data = Vec::with_capacity(retained * dim);
        for t in 0..cfg.n_steps {
            let i = rng.gen_range(0..dim);
            let (dh0, du) = model.spin_flip_delta(&s, i);
            let de = dh0 + alpha * du;
            if !de.is_finite() {
                return Err(Error::NonFiniteEnergy {
                    step: t,
                    energy: de,
                    state: s.iter().map(|&v| f64::from(v)).collect(),
                });
            }
            if de <= 0.0 || rng.gen::<f64>() < (-de).exp() {
                s[i] = -s[i];
                accepted += 1;
            }
            if keep(t) {
                data.extend_from_slice(&s);
                u_values.push(model.u_spins(&s));
                h0_values.push(model.h0_spins(&s));
            }
        }
        StateBuffer::Spins { dim, data }
    } else {
        let mut x = vec![0.0; dim];
        let mut y = vec![0.0; dim];
        let mut e = model.h0_coords(&x) + alpha * model.u_coords(&x);
        let mut data = Vec::with_capacity(retained * dim);
        for t in 0..cfg.n_steps {
            for (yi, xi) in y.iter_mut().zip(&x) {
                *yi = xi + cfg.step_size * (2.0 * rng.gen::<f64>() - 1.0);
            }
            let ey = model.h0_coords(&y) + alpha * model.u_coords(&y);
            if !ey.is_finite() {
                return Err(Error::NonFiniteEnergy {
                    step: t,
                    energy: ey,
                    state: y.clone(),
                });
            }
            if ey <= e || rng.gen::<f64>() < (e - ey).exp() {
                std::mem::swap(&mut x, &mut y);
                e = ey;
                accepted += 1;
            }
            if keep(t) {
                data.extend_from_slice(&x);
                u_values.push(model.u_coords(&x));
                h0_values.push(model.h0_coords(&x));
            }
        }
        StateBuffer::Continuous { dim, data }
    };

    if u_values.is_empty() {
        return Err(Error::config("chain", "zero retained samples"));
    }
    Ok(SampleBatch {
        states,
        u_values,
        h0_values,
        acceptance_rate: accepted as f64 / cfg.n_steps as f64,
        target_alpha: alpha,
        seed: cfg.seed,
    })
}

/// Checks that `alphas` is strictly increasing inside `[0, 1]`.
pub fn check_alpha_grid(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::input("alpha grid is empty"));
    }
    for &a in alphas {
        check_alpha(a)?;
    }
    if let Some(w) = alphas.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(Error::input(format!(
            "alpha grid must be strictly increasing, found {} followed by {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// One independent chain per `alpha`; chain `i` uses seed
/// `base_cfg.seed + i`. Results come back in `alphas` order.
pub fn run_chain_ladder(
    model: &SystemModel,
    alphas: &[f64],
    base_cfg: &ChainConfig,
    workers: usize,
) -> Result<Vec<SampleBatch>> {
    check_alpha_grid(alphas)?;
    map_indexed(alphas.len(), workers, |i| {
        let cfg = base_cfg
            .with_alpha(alphas[i])
            .with_seed(base_cfg.seed.wrapping_add(i as u64));
        run_chain(model, &cfg).map_err(|e| Error::Ladder {
            alpha: alphas[i],
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect()
}
