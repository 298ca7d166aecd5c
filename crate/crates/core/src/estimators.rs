//! Free-energy bounds from sampled (or exactly known) coupling-energy means.
//!
//! With `pi ~ exp(-H0 - U)` and `pi0 ~ exp(-H0)` the interface free energy
//! `dF = -log(Z / Z0)` satisfies
//!
//! ```text
//! E_pi[U] <= dF <= E_pi0[U]
//! ```
//!
//! Tightening along `psi = -alpha U` (lower) and
//! `rho_alpha ~ exp(-H0 - alpha U)` (upper) gives, for every `alpha` in
//! `[0, 1]`,
//!
//! ```text
//! (1 - alpha) E_pi[U] + gamma(alpha)  <=  dF  <=  (1 - alpha) E_rho_alpha[U] + gamma(alpha)
//! ```
//!
//! where `gamma(alpha) = -log E_pi0[exp(-alpha U)]` is evaluated by
//! thermodynamic integration, `gamma(alpha) = int_0^alpha E_rho_s[U] ds`,
//! using the trapezoid rule on the caller's grid. Both bounds meet at
//! `gamma(1) = dF`.
//!
//! Every operation has a batch form (means and standard errors from MCMC
//! output) and a `*_from` form taking [`MeanU`] values directly, which is how
//! exact oracle means are fed in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_alpha, SystemModel};
use crate::numeric::log_mean_exp;
use crate::sampler::{check_alpha_grid, run_chain_ladder, series_stats, ChainConfig, SampleBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    BogoliubovLower,
    BogoliubovUpper,
    VariationalLower,
    VariationalUpper,
    Gamma,
    NaiveExponential,
    KlPiPi0,
    DualObjective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateFlag {
    /// Raw KL estimate was negative and has been clipped to zero.
    ClippedNegative,
    /// Exponential-average estimator; biased for finite samples.
    BiasProne,
    /// The underlying series had zero variance.
    DegenerateSeries,
    /// Built from exact (oracle) inputs; `std_error` is zero.
    Exact,
}

/// A dimensionless free-energy quantity with its uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_effective: f64,
    pub kind: BoundKind,
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<EstimateFlag>,
}

impl BoundEstimate {
    pub fn has_flag(&self, flag: EstimateFlag) -> bool {
        self.flags.contains(&flag)
    }
}

/// `E_rho_alpha[U]` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanU {
    pub alpha: f64,
    pub mean: f64,
    pub std_error: f64,
    pub n_effective: f64,
    pub degenerate: bool,
    pub exact: bool,
}

impl MeanU {
    /// Sample mean of the batch's U series; the standard error uses the
    /// batch-means effective sample size.
    pub fn from_batch(batch: &SampleBatch) -> Result<Self> {
        let s = series_stats(&batch.u_values)?;
        Ok(Self {
            alpha: batch.target_alpha,
            mean: s.mean,
            std_error: s.std_error(),
            n_effective: s.ess.max(1.0),
            degenerate: s.degenerate,
            exact: false,
        })
    }

    /// An exactly known mean (zero error).
    pub fn exact(alpha: f64, mean: f64) -> Self {
        Self {
            alpha,
            mean,
            std_error: 0.0,
            n_effective: 1.0,
            degenerate: false,
            exact: true,
        }
    }

    fn flags(&self) -> Vec<EstimateFlag> {
        let mut f = Vec::new();
        if self.exact {
            f.push(EstimateFlag::Exact);
        }
        if self.degenerate {
            f.push(EstimateFlag::DegenerateSeries);
        }
        f
    }
}

/// `gamma(alpha)` on one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub alpha: f64,
    pub gamma: f64,
    pub std_error: f64,
    pub n_effective: f64,
    pub exact: bool,
}

impl GammaPoint {
    pub fn to_estimate(&self) -> BoundEstimate {
        BoundEstimate {
            value: self.gamma,
            std_error: self.std_error,
            n_effective: self.n_effective,
            kind: BoundKind::Gamma,
            alpha: Some(self.alpha),
            flags: if self.exact { vec![EstimateFlag::Exact] } else { vec![] },
        }
    }
}

fn require_alpha(have: f64, want: f64, what: &str) -> Result<()> {
    if have == want {
        Ok(())
    } else {
        Err(Error::input(format!("{what} needs samples at alpha = {want}, got alpha = {have}")))
    }
}

/// `E_pi[U]`, the lower Bogoliubov bound. Needs a batch from `pi`.
pub fn bogoliubov_lower(batch_pi: &SampleBatch) -> Result<BoundEstimate> {
    require_alpha(batch_pi.target_alpha, 1.0, "bogoliubov_lower")?;
    bogoliubov_lower_from(&MeanU::from_batch(batch_pi)?)
}

pub fn bogoliubov_lower_from(mean_pi: &MeanU) -> Result<BoundEstimate> {
    require_alpha(mean_pi.alpha, 1.0, "bogoliubov_lower")?;
    Ok(BoundEstimate {
        value: mean_pi.mean,
        std_error: mean_pi.std_error,
        n_effective: mean_pi.n_effective,
        kind: BoundKind::BogoliubovLower,
        alpha: None,
        flags: mean_pi.flags(),
    })
}

/// `E_pi0[U]`, the upper Bogoliubov bound. Needs a batch from `pi0`.
pub fn bogoliubov_upper(batch_pi0: &SampleBatch) -> Result<BoundEstimate> {
    require_alpha(batch_pi0.target_alpha, 0.0, "bogoliubov_upper")?;
    bogoliubov_upper_from(&MeanU::from_batch(batch_pi0)?)
}

pub fn bogoliubov_upper_from(mean_pi0: &MeanU) -> Result<BoundEstimate> {
    require_alpha(mean_pi0.alpha, 0.0, "bogoliubov_upper")?;
    Ok(BoundEstimate {
        value: mean_pi0.mean,
        std_error: mean_pi0.std_error,
        n_effective: mean_pi0.n_effective,
        kind: BoundKind::BogoliubovUpper,
        alpha: None,
        flags: mean_pi0.flags(),
    })
}

/// Thermodynamic integration of `E_rho_alpha[U]` over a ladder of batches.
pub fn gamma_ti(ladder: &[SampleBatch]) -> Result<Vec<GammaPoint>> {
    let means = ladder.iter().map(MeanU::from_batch).collect::<Result<Vec<_>>>()?;
    gamma_ti_from_means(&means)
}

/// Cumulative trapezoid rule from `alpha = 0` to every grid point.
///
/// The standard error at grid point `k` is the root-sum-square of the
/// trapezoid-weighted per-point errors; the ladder chains are independent so
/// there are no cross terms.
pub fn gamma_ti_from_means(means: &[MeanU]) -> Result<Vec<GammaPoint>> {
    let alphas: Vec<f64> = means.iter().map(|m| m.alpha).collect();
    check_alpha_grid(&alphas)?;
    if alphas[0] != 0.0 {
        return Err(Error::input(format!(
            "thermodynamic integration starts at alpha = 0, grid starts at {}",
            alphas[0]
        )));
    }
    let mut out = Vec::with_capacity(means.len());
    let mut rel = 0.0;
    // sum of squared weighted errors for points strictly before k, plus the
    // half-weight term that point k-1 still owes to the open interval
    let mut closed_var = 0.0;
    let mut n_eff = means[0].n_effective;
    out.push(GammaPoint {
        alpha: 0.0,
        gamma: 0.0,
        std_error: 0.0,
        n_effective: n_eff,
        exact: means[0].exact,
    });
    // weight of point j in gamma(alpha_k): (alpha_{j+1} - alpha_{j-1}) / 2 for
    // interior j, half the adjacent interval at both ends
    let mut prev_half = 0.0;
    // integrate relative to the first mean so a constant integrand is exact
    let m0 = means[0].mean;
    for k in 1..means.len() {
        let h = alphas[k] - alphas[k - 1];
        rel += 0.5 * h * ((means[k - 1].mean - m0) + (means[k].mean - m0));
        let gamma = m0 * alphas[k] + rel;
        let w_prev = prev_half + 0.5 * h;
        closed_var += (w_prev * means[k - 1].std_error).powi(2);
        let var = closed_var + (0.5 * h * means[k].std_error).powi(2);
        prev_half = 0.5 * h;
        n_eff = n_eff.min(means[k].n_effective);
        out.push(GammaPoint {
            alpha: alphas[k],
            gamma,
            std_error: var.sqrt(),
            n_effective: n_eff,
            exact: means[..=k].iter().all(|m| m.exact),
        });
    }
    Ok(out)
}

/// Lower bound `(1 - alpha) E_pi[U] + gamma(alpha)` from `psi = -alpha U`.
pub fn variational_lower(batch_pi: &SampleBatch, gamma_at: &GammaPoint) -> Result<BoundEstimate> {
    require_alpha(batch_pi.target_alpha, 1.0, "variational_lower")?;
    variational_lower_from(&MeanU::from_batch(batch_pi)?, gamma_at)
}

pub fn variational_lower_from(mean_pi: &MeanU, gamma_at: &GammaPoint) -> Result<BoundEstimate> {
    require_alpha(mean_pi.alpha, 1.0, "variational_lower")?;
    check_alpha(gamma_at.alpha)?;
    Ok(combine(
        mean_pi,
        gamma_at,
        BoundKind::VariationalLower,
    ))
}

/// Upper bound `E_rho[U] + KL(rho, pi0)` at `rho = rho_alpha`, where
/// `KL(rho_alpha, pi0) = gamma(alpha) - alpha E_rho_alpha[U]`.
pub fn variational_upper(batch_rho_alpha: &SampleBatch, gamma_at: &GammaPoint) -> Result<BoundEstimate> {
    variational_upper_from(&MeanU::from_batch(batch_rho_alpha)?, gamma_at)
}

pub fn variational_upper_from(mean_rho: &MeanU, gamma_at: &GammaPoint) -> Result<BoundEstimate> {
    check_alpha(gamma_at.alpha)?;
    require_alpha(mean_rho.alpha, gamma_at.alpha, "variational_upper")?;
    Ok(combine(mean_rho, gamma_at, BoundKind::VariationalUpper))
}

fn combine(mean: &MeanU, gamma_at: &GammaPoint, kind: BoundKind) -> BoundEstimate {
    let w = 1.0 - gamma_at.alpha;
    let mut flags = mean.flags();
    if !gamma_at.exact {
        flags.retain(|f| *f != EstimateFlag::Exact);
    }
    BoundEstimate {
        value: w * mean.mean + gamma_at.gamma,
        // hypot(x, 0) == |x| exactly, so the alpha = 0 error equals the
        // Bogoliubov error bit for bit
        std_error: (w * mean.std_error).hypot(gamma_at.std_error),
        n_effective: mean.n_effective.min(gamma_at.n_effective).max(1.0),
        kind,
        alpha: Some(gamma_at.alpha),
        flags,
    }
}

/// Per-alpha bounds along the homotopy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopyCurve {
    pub alphas: Vec<f64>,
    pub gamma_values: Vec<f64>,
    pub gamma_se: Vec<f64>,
    pub mean_u_values: Vec<f64>,
    pub mean_u_se: Vec<f64>,
    pub lower_values: Vec<f64>,
    pub lower_se: Vec<f64>,
    pub upper_values: Vec<f64>,
    pub upper_se: Vec<f64>,
}

impl HomotopyCurve {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Count of grid steps where the lower bound drops, resp. the upper bound
    /// rises, by more than `n_se` combined standard errors.
    pub fn monotonicity_violations(&self, n_se: f64) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for k in 1..self.len() {
            let tol_l = n_se * self.lower_se[k - 1].hypot(self.lower_se[k]);
            if self.lower_values[k] < self.lower_values[k - 1] - tol_l {
                lower += 1;
            }
            let tol_u = n_se * self.upper_se[k - 1].hypot(self.upper_se[k]);
            if self.upper_values[k] > self.upper_values[k - 1] + tol_u {
                upper += 1;
            }
        }
        (lower, upper)
    }

    /// `gamma(0) = 0` and both bounds equal `gamma(1)` at the last point.
    pub fn endpoints_closed(&self) -> bool {
        let last = self.len() - 1;
        self.gamma_values[0] == 0.0
            && self.lower_values[last] == self.gamma_values[last]
            && self.upper_values[last] == self.gamma_values[last]
    }
}

/// Samples a ladder over `alphas` and assembles the curve.
pub fn homotopy_curve(
    model: &SystemModel,
    alphas: &[f64],
    base_cfg: &ChainConfig,
    workers: usize,
) -> Result<HomotopyCurve> {
    check_curve_grid(alphas)?;
    let ladder = run_chain_ladder(model, alphas, base_cfg, workers)?;
    homotopy_curve_from_ladder(&ladder)
}

pub fn homotopy_curve_from_ladder(ladder: &[SampleBatch]) -> Result<HomotopyCurve> {
    let means = ladder.iter().map(MeanU::from_batch).collect::<Result<Vec<_>>>()?;
    homotopy_curve_from_means(&means)
}

pub(crate) fn check_curve_grid(alphas: &[f64]) -> Result<()> {
    check_alpha_grid(alphas)?;
    if alphas[0] != 0.0 || *alphas.last().expect("non-empty") != 1.0 {
        return Err(Error::input("a homotopy curve needs an alpha grid from 0 to 1"));
    }
    Ok(())
}

pub fn homotopy_curve_from_means(means: &[MeanU]) -> Result<HomotopyCurve> {
    let alphas: Vec<f64> = means.iter().map(|m| m.alpha).collect();
    check_curve_grid(&alphas)?;
    let gammas = gamma_ti_from_means(means)?;
    let mean_pi = means.last().expect("non-empty grid");
    let n = means.len();
    let mut curve = HomotopyCurve {
        alphas,
        gamma_values: Vec::with_capacity(n),
        gamma_se: Vec::with_capacity(n),
        mean_u_values: Vec::with_capacity(n),
        mean_u_se: Vec::with_capacity(n),
        lower_values: Vec::with_capacity(n),
        lower_se: Vec::with_capacity(n),
        upper_values: Vec::with_capacity(n),
        upper_se: Vec::with_capacity(n),
    };
    for (m, g) in means.iter().zip(&gammas) {
        let lo = variational_lower_from(mean_pi, g)?;
        let up = variational_upper_from(m, g)?;
        curve.gamma_values.push(g.gamma);
        curve.gamma_se.push(g.std_error);
        curve.mean_u_values.push(m.mean);
        curve.mean_u_se.push(m.std_error);
        curve.lower_values.push(lo.value);
        curve.lower_se.push(lo.std_error);
        curve.upper_values.push(up.value);
        curve.upper_se.push(up.std_error);
    }
    Ok(curve)
}

/// `KL(pi, pi0) = dF - E_pi[U]`, clipped at zero.
pub fn kl_pi_pi0(delta_f: &BoundEstimate, batch_pi: &SampleBatch) -> Result<BoundEstimate> {
    require_alpha(batch_pi.target_alpha, 1.0, "kl_pi_pi0")?;
    kl_pi_pi0_from(delta_f, &MeanU::from_batch(batch_pi)?)
}

pub fn kl_pi_pi0_from(delta_f: &BoundEstimate, mean_pi: &MeanU) -> Result<BoundEstimate> {
    if delta_f.kind != BoundKind::Gamma || delta_f.alpha != Some(1.0) {
        return Err(Error::input(format!(
            "kl_pi_pi0 needs the gamma estimate at alpha = 1, got {:?} at {:?}",
            delta_f.kind, delta_f.alpha
        )));
    }
    require_alpha(mean_pi.alpha, 1.0, "kl_pi_pi0")?;
    let raw = delta_f.value - mean_pi.mean;
    let mut flags = Vec::new();
    if mean_pi.exact && delta_f.has_flag(EstimateFlag::Exact) {
        flags.push(EstimateFlag::Exact);
    }
    let value = if raw < 0.0 {
        flags.push(EstimateFlag::ClippedNegative);
        0.0
    } else {
        raw
    };
    Ok(BoundEstimate {
        value,
        std_error: delta_f.std_error.hypot(mean_pi.std_error),
        n_effective: delta_f.n_effective.min(mean_pi.n_effective).max(1.0),
        kind: BoundKind::KlPiPi0,
        alpha: None,
        flags,
    })
}

/// `E_pi[psi] - log E_pi0[exp(psi)]` on sampled values of a test function.
///
/// For every bounded `psi` the exact objective is at most `KL(pi, pi0)`,
/// with equality at `psi = -U + const`. Errors assume independent samples.
pub fn dual_kl_objective(psi_values_pi: &[f64], psi_values_pi0: &[f64]) -> Result<BoundEstimate> {
    check_psi(psi_values_pi, "pi")?;
    check_psi(psi_values_pi0, "pi0")?;
    let n1 = psi_values_pi.len() as f64;
    let n0 = psi_values_pi0.len() as f64;
    let mean1 = psi_values_pi.iter().sum::<f64>() / n1;
    let lme = log_mean_exp(psi_values_pi0).expect("non-empty");
    let var1 = sample_variance(psi_values_pi, mean1);
    // delta method on log(mean(exp(psi))): relative error of the mean weight
    let m = psi_values_pi0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = psi_values_pi0.iter().map(|p| (p - m).exp()).collect();
    let wm = w.iter().sum::<f64>() / n0;
    let wvar = sample_variance(&w, wm);
    let se = (var1 / n1 + wvar / (wm * wm * n0)).sqrt();
    Ok(BoundEstimate {
        value: mean1 - lme,
        std_error: se,
        n_effective: n1.min(n0),
        kind: BoundKind::DualObjective,
        alpha: None,
        flags: vec![],
    })
}

/// Exact dual objective under explicit (possibly unnormalized) weights.
pub fn dual_kl_objective_weighted(
    psi_pi: &[f64],
    weights_pi: &[f64],
    psi_pi0: &[f64],
    weights_pi0: &[f64],
) -> Result<f64> {
    check_psi(psi_pi, "pi")?;
    check_psi(psi_pi0, "pi0")?;
    if psi_pi.len() != weights_pi.len() || psi_pi0.len() != weights_pi0.len() {
        return Err(Error::input("psi values and weights differ in length"));
    }
    let total1: f64 = weights_pi.iter().sum();
    let total0: f64 = weights_pi0.iter().sum();
    if !(total1 > 0.0 && total0 > 0.0) || weights_pi.iter().chain(weights_pi0).any(|w| *w < 0.0) {
        return Err(Error::input("weights must be nonnegative with a positive sum"));
    }
    let e1: f64 = psi_pi.iter().zip(weights_pi).map(|(p, w)| p * w).sum::<f64>() / total1;
    let m = psi_pi0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = psi_pi0
        .iter()
        .zip(weights_pi0)
        .map(|(p, w)| w * (p - m).exp())
        .sum::<f64>()
        / total0;
    Ok(e1 - (m + s.ln()))
}

fn check_psi(values: &[f64], which: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::input(format!("no psi values under {which}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::input(format!("psi values under {which} must be finite")));
    }
    Ok(())
}

fn sample_variance(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// `-log E_pi0[exp(-U)]` by direct exponential averaging over a `pi0` batch.
///
/// Kept for comparison against thermodynamic integration: the estimate is
/// dominated by rare low-U samples, so it is high-variance and biased upward
/// at finite sample size.
pub fn naive_exponential(batch_pi0: &SampleBatch) -> Result<BoundEstimate> {
    require_alpha(batch_pi0.target_alpha, 0.0, "naive_exponential")?;
    let stats = series_stats(&batch_pi0.u_values)?;
    let neg_u: Vec<f64> = batch_pi0.u_values.iter().map(|u| -u).collect();
    let lme = log_mean_exp(&neg_u).expect("non-empty batch");
    let m = neg_u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = neg_u.iter().map(|x| (x - m).exp()).collect();
    let wm = w.iter().sum::<f64>() / w.len() as f64;
    let wsd = sample_variance(&w, wm).sqrt();
    let mut flags = vec![EstimateFlag::BiasProne];
    if stats.degenerate {
        flags.push(EstimateFlag::DegenerateSeries);
    }
    Ok(BoundEstimate {
        // + 0.0 turns a negative zero into a positive one
        value: -lme + 0.0,
        std_error: wsd / (wm * stats.ess.sqrt()),
        n_effective: stats.ess.max(1.0),
        kind: BoundKind::NaiveExponential,
        alpha: Some(0.0),
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::StateBuffer;

    fn batch(alpha: f64, u: Vec<f64>) -> SampleBatch {
        let n = u.len();
        SampleBatch {
            states: StateBuffer::Continuous { dim: 1, data: vec![0.0; n] },
            h0_values: vec![0.0; n],
            u_values: u,
            acceptance_rate: 1.0,
            target_alpha: alpha,
            seed: 0,
        }
    }

    fn noisy(alpha: f64, n: usize, center: f64) -> SampleBatch {
        batch(alpha, (0..n).map(|i| center + ((i * 7919) % 13) as f64 * 0.1 - 0.6).collect())
    }

    fn ising2_means(alphas: &[f64]) -> Vec<MeanU> {
        // two spins, one cross bond with K = 1: E_rho_alpha[U] = -tanh(alpha)
        alphas.iter().map(|&a| MeanU::exact(a, -a.tanh())).collect()
    }

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn bogoliubov_alpha_checks() {
        assert!(bogoliubov_lower(&noisy(0.0, 100, 1.0)).is_err());
        assert!(bogoliubov_upper(&noisy(1.0, 100, 1.0)).is_err());
        let lo = bogoliubov_lower(&noisy(1.0, 100, 1.0)).unwrap();
        assert_eq!(lo.kind, BoundKind::BogoliubovLower);
        assert!(lo.std_error > 0.0);
    }

    #[test]
    fn constant_coupling_is_exact() {
        let c = -0.37;
        let b = batch(0.0, vec![c; 200]);
        let up = bogoliubov_upper(&b).unwrap();
        assert_eq!(up.value, c);
        assert_eq!(up.std_error, 0.0);
        assert!(up.has_flag(EstimateFlag::DegenerateSeries));
        let naive = naive_exponential(&b).unwrap();
        assert_eq!(naive.value, c);
        assert!(naive.has_flag(EstimateFlag::BiasProne));
        let zero = naive_exponential(&batch(0.0, vec![0.0; 50])).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(zero.value.is_sign_positive());
    }

    #[test]
    fn trapezoid_gamma_on_exact_means() {
        let g21 = gamma_ti_from_means(&ising2_means(&grid(21))).unwrap();
        let g41 = gamma_ti_from_means(&ising2_means(&grid(41))).unwrap();
        let exact = -(1.0f64.cosh().ln());
        let e21 = (g21.last().unwrap().gamma - exact).abs();
        let e41 = (g41.last().unwrap().gamma - exact).abs();
        assert!(e21 <= 1e-3, "{e21}");
        assert!(e21 / e41 >= 3.0, "{e21} / {e41}");
        assert_eq!(g21[0].gamma, 0.0);
        assert!(g21.iter().all(|g| g.std_error == 0.0 && g.exact));
    }

    #[test]
    fn gamma_needs_sorted_grid_from_zero() {
        let bad = ising2_means(&[0.0, 0.6, 0.4]);
        assert!(gamma_ti_from_means(&bad).is_err());
        assert!(gamma_ti_from_means(&ising2_means(&[0.2, 0.6])).is_err());
        let zero = gamma_ti_from_means(&[MeanU::exact(0.0, 0.0), MeanU::exact(0.5, 0.0), MeanU::exact(1.0, 0.0)])
            .unwrap();
        assert!(zero.iter().all(|g| g.gamma == 0.0));
    }

    #[test]
    fn gamma_error_propagation_matches_weights() {
        let means: Vec<MeanU> = [0.0, 0.25, 1.0]
            .iter()
            .map(|&a| MeanU { std_error: 0.1, exact: false, ..MeanU::exact(a, 0.0) })
            .collect();
        let g = gamma_ti_from_means(&means).unwrap();
        // weights at alpha = 0.25: 0.125, 0.125
        assert!((g[1].std_error - (2.0 * 0.0125f64.powi(2)).sqrt()).abs() < 1e-15);
        // weights at alpha = 1: 0.125, 0.5, 0.375
        let want = 0.1 * (0.125f64.powi(2) + 0.5f64.powi(2) + 0.375f64.powi(2)).sqrt();
        assert!((g[2].std_error - want).abs() < 1e-15);
    }

    #[test]
    fn variational_bounds_with_exact_inputs() {
        let half = GammaPoint { alpha: 0.5, gamma: -(0.5f64.cosh().ln()), std_error: 0.0, n_effective: 1.0, exact: true };
        let lo = variational_lower_from(&MeanU::exact(1.0, -(1.0f64.tanh())), &half).unwrap();
        let want_lo = 0.5 * -(1.0f64.tanh()) - 0.5f64.cosh().ln();
        assert!((lo.value - want_lo).abs() < 1e-15);
        assert!((lo.value - -0.50091).abs() < 1e-5);
        let up = variational_upper_from(&MeanU::exact(0.5, -(0.5f64.tanh())), &half).unwrap();
        let want_up = 0.5 * -(0.5f64.tanh()) - 0.5f64.cosh().ln();
        assert!((up.value - want_up).abs() < 1e-15);
        let df = -(1.0f64.cosh().ln());
        assert!(-(1.0f64.tanh()) < lo.value && lo.value < df && df < up.value && up.value < 0.0);
        // alpha mismatch
        assert!(variational_upper_from(&MeanU::exact(0.4, 0.0), &half).is_err());
        assert!(variational_lower_from(&MeanU::exact(0.5, 0.0), &half).is_err());
    }

    #[test]
    fn endpoint_identities_are_bit_exact() {
        let pi = noisy(1.0, 400, -0.8);
        let pi0 = noisy(0.0, 400, 0.1);
        let g0 = GammaPoint { alpha: 0.0, gamma: 0.0, std_error: 0.0, n_effective: 400.0, exact: false };
        assert_eq!(
            variational_lower(&pi, &g0).unwrap().value,
            bogoliubov_lower(&pi).unwrap().value
        );
        assert_eq!(
            variational_lower(&pi, &g0).unwrap().std_error,
            bogoliubov_lower(&pi).unwrap().std_error
        );
        assert_eq!(
            variational_upper(&pi0, &g0).unwrap().value,
            bogoliubov_upper(&pi0).unwrap().value
        );
        let g1 = GammaPoint { alpha: 1.0, gamma: -0.4, std_error: 0.01, n_effective: 400.0, exact: false };
        assert_eq!(variational_lower(&pi, &g1).unwrap().value, -0.4);
        assert_eq!(variational_upper(&pi, &g1).unwrap().value, -0.4);
    }

    #[test]
    fn oracle_fed_curve_is_monotone_and_closed() {
        let curve = homotopy_curve_from_means(&ising2_means(&grid(21))).unwrap();
        assert!(curve.endpoints_closed());
        assert_eq!(curve.monotonicity_violations(0.0), (0, 0));
        assert_eq!(curve.lower_values[0], -(1.0f64.tanh()));
        assert_eq!(curve.upper_values[0], 0.0);
        let end = *curve.gamma_values.last().unwrap();
        assert!((end - -(1.0f64.cosh().ln())).abs() < 1e-3);
        for k in 1..curve.len() {
            assert!(curve.lower_values[k] >= curve.lower_values[k - 1]);
            assert!(curve.upper_values[k] <= curve.upper_values[k - 1]);
        }
        let flat = homotopy_curve_from_means(&grid(5).iter().map(|&a| MeanU::exact(a, 0.0)).collect::<Vec<_>>()).unwrap();
        assert!(flat.lower_values.iter().chain(&flat.upper_values).all(|v| *v == 0.0));
        assert!(homotopy_curve_from_means(&ising2_means(&[0.0, 0.5])).is_err());
    }

    #[test]
    fn kl_identity_and_clipping() {
        let df = GammaPoint { alpha: 1.0, gamma: -(1.0f64.cosh().ln()), std_error: 0.0, n_effective: 1.0, exact: true };
        let kl = kl_pi_pi0_from(&df.to_estimate(), &MeanU::exact(1.0, -(1.0f64.tanh()))).unwrap();
        assert!((kl.value - 0.327_813_3).abs() < 1e-6);
        assert!(kl.has_flag(EstimateFlag::Exact));
        let neg = kl_pi_pi0_from(&df.to_estimate(), &MeanU::exact(1.0, 0.0)).unwrap();
        assert_eq!(neg.value, 0.0);
        assert!(neg.has_flag(EstimateFlag::ClippedNegative));
        let wrong = GammaPoint { alpha: 0.5, ..df };
        assert!(kl_pi_pi0_from(&wrong.to_estimate(), &MeanU::exact(1.0, 0.0)).is_err());
        let zero = GammaPoint { gamma: 0.0, ..df };
        assert_eq!(kl_pi_pi0_from(&zero.to_estimate(), &MeanU::exact(1.0, 0.0)).unwrap().value, 0.0);
    }

    #[test]
    fn dual_objective_basics() {
        let zero = dual_kl_objective(&[0.0; 10], &[0.0; 20]).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(dual_kl_objective(&[], &[0.0]).is_err());
        assert!(dual_kl_objective(&[0.0], &[f64::NAN]).is_err());
        let big = dual_kl_objective(&[800.0], &[800.0, 800.0]).unwrap();
        assert_eq!(big.value, 0.0);
        // psi = -U on two spins with K = 1: u = -s0 s1 takes +-1
        let p = 1.0f64.exp() / (1.0f64.exp() + (-1.0f64).exp());
        let w = dual_kl_objective_weighted(&[1.0, -1.0], &[p, 1.0 - p], &[1.0, -1.0], &[0.5, 0.5]).unwrap();
        let kl = -(1.0f64.cosh().ln()) + 1.0f64.tanh();
        assert!((w - kl).abs() < 1e-14);
    }
}
