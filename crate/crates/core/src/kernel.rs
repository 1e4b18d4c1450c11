//! Burn-down / burn-up transition kernels.
//!
//! Forward: every unit of interest survives independently, so a count `n`
//! thins to `Binomial(n, s)` where `s = exp(-t / (1 + c))` is the per-item
//! survival probability. Reverse: given the endpoints, the increments of the
//! thinning process are `Binomial(deficit, r_t)` with
//! `r_t = (s(t - dt) - s(t)) / (1 - s(t))`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer interest counts in `[0, K]`, one per item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageVector {
    pub counts: Vec<u32>,
}

impl StageVector {
    pub fn zeros(n_items: usize) -> Self {
        StageVector {
            counts: vec![0; n_items],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// `X = K · r_u` for a user history given as item ids.
pub fn stage_init(history: &[u32], n_items: usize, k: u32) -> Result<StageVector> {
    if k == 0 {
        return Err(Error::Domain("stage count K must be >= 1".into()));
    }
    let mut x = StageVector::zeros(n_items);
    for &i in history {
        let slot = x.counts.get_mut(i as usize).ok_or(Error::OutOfBounds {
            kind: "item",
            id: i as usize,
            dim: n_items,
        })?;
        *slot = k;
    }
    Ok(x)
}

/// Whether reverse ratios use the per-item rate `1/(1+c_i)` or rate 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    #[default]
    Personalized,
    Global,
}

/// Reverse sampler family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    Bridge,
    Poisson,
}

/// Time grid of the diffusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionSchedule {
    /// Forward horizon `T`.
    pub horizon: f64,
    /// Number of grid steps `N` over `[0, T]`.
    pub n_steps: usize,
    /// Reverse start time `T'`; must lie on the grid and not exceed `T`.
    pub reverse_horizon: f64,
    pub mode: SamplerMode,
    pub rate_mode: RateMode,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        DiffusionSchedule {
            horizon: 4.0,
            n_steps: 100,
            reverse_horizon: 4.0,
            mode: SamplerMode::Bridge,
            rate_mode: RateMode::Personalized,
        }
    }
}

impl DiffusionSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be > 0, got {}",
                self.horizon
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be >= 1".into()));
        }
        if !(self.reverse_horizon > 0.0 && self.reverse_horizon <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "reverse horizon must be in (0, {}], got {}",
                self.horizon, self.reverse_horizon
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Continuous time of grid index `step`.
    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt()
    }

    /// Number of reverse steps `N' = T' / dt`, rounded to the grid.
    pub fn reverse_steps(&self) -> usize {
        ((self.reverse_horizon / self.dt()).round() as usize).clamp(1, self.n_steps)
    }
}

/// Forward survival probability `exp(-t / (1 + c))`.
pub fn survival_prob(c: f64, t: f64) -> f64 {
    (-t / (1.0 + c)).exp()
}

/// Per-item decay exponent `F_i = t / (1 + c_i)`.
pub fn decay_exponent(coeffs: &[f64], t: f64) -> Vec<f64> {
    coeffs.iter().map(|c| t / (1.0 + c)).collect()
}

/// Lanczos approximation of `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `ln C(n, k)`.
pub fn ln_choose(n: u32, k: u32) -> f64 {
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Binomial pmf `C(n,k) p^k (1-p)^(n-k)`, evaluated in log space.
pub fn forward_pmf(n: u32, p: f64, k: u32) -> Result<f64> {
    if k > n {
        return Err(Error::Domain(format!("k = {k} exceeds n = {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    if p == 0.0 {
        return Ok(if k == 0 { 1.0 } else { 0.0 });
    }
    if p == 1.0 {
        return Ok(if k == n { 1.0 } else { 0.0 });
    }
    let lp = ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p();
    Ok(lp.exp())
}

/// Exact binomial draw by CDF inversion.
///
/// For `p > 1/2` the complement is sampled so the starting mass
/// `(1-p)^n` never underflows for `n <= 400`.
pub fn sample_binomial<R: Rng + ?Sized>(n: u32, p: f64, rng: &mut R) -> u32 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if p > 0.5 {
        return n - sample_binomial(n, 1.0 - p, rng);
    }
    let q = 1.0 - p;
    let odds = p / q;
    let mut pmf = (n as f64 * (-p).ln_1p()).exp();
    let mut cdf = pmf;
    let u: f64 = rng.random();
    let mut k = 0u32;
    while u > cdf && k < n {
        pmf *= odds * (n - k) as f64 / (k + 1) as f64;
        k += 1;
        cdf += pmf;
    }
    k
}

/// Thin every count independently: `out_i ~ Binomial(x_i, p_i)`.
pub fn thin<R: Rng + ?Sized>(x: &StageVector, probs: &[f64], rng: &mut R) -> Result<StageVector> {
    if probs.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: probs.len(),
        });
    }
    Ok(StageVector {
        counts: x
            .counts
            .iter()
            .zip(probs)
            .map(|(&n, &p)| sample_binomial(n, p, rng))
            .collect(),
    })
}

/// Personalized forward burn-down to time `t`.
pub fn forward_sample<R: Rng + ?Sized>(
    x0: &StageVector,
    coeffs: &[f64],
    t: f64,
    rng: &mut R,
) -> Result<StageVector> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    let probs: Vec<f64> = coeffs.iter().map(|&c| survival_prob(c, t)).collect();
    thin(x0, &probs, rng)
}

/// Restoration probability between survival levels `s_prev >= s_now`.
pub fn ratio_from_survival(s_prev: f64, s_now: f64) -> Result<f64> {
    let gap = 1.0 - s_now;
    if !(gap > 0.0) {
        return Err(Error::Domain(
            "survival at current time is 1; ratio undefined".into(),
        ));
    }
    Ok(((s_prev - s_now) / gap).clamp(0.0, 1.0))
}

/// Reverse bridge ratio `r_t` for one item.
///
/// Global mode uses rate 1; personalized mode replaces every exponent `s`
/// with `s / (1 + c)`.
pub fn bridge_ratio(c: f64, t: f64, dt: f64, rate_mode: RateMode) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("bridge ratio needs t > 0, got {t}")));
    }
    if !(dt > 0.0 && dt <= t * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!(
            "bridge ratio needs 0 < dt <= t, got dt = {dt}, t = {t}"
        )));
    }
    if dt >= t {
        return Ok(1.0);
    }
    let rate = match rate_mode {
        RateMode::Global => 1.0,
        RateMode::Personalized => 1.0 / (1.0 + c),
    };
    // e^{-a t} (e^{a dt} - 1) / (1 - e^{-a t}), with expm1 for small a·dt.
    let num = (-rate * t).exp() * (rate * dt).exp_m1();
    let den = -(-rate * t).exp_m1();
    Ok((num / den).clamp(0.0, 1.0))
}

/// Binomial-bridge increment: `ΔX_i ~ Binomial(deficit_i, ratio_i)`.
pub fn bridge_sample<R: Rng + ?Sized>(
    deficit: &[u32],
    ratio: &[f64],
    rng: &mut R,
) -> Result<Vec<u32>> {
    if deficit.len() != ratio.len() {
        return Err(Error::DimensionMismatch {
            expected: deficit.len(),
            actual: ratio.len(),
        });
    }
    Ok(deficit
        .iter()
        .zip(ratio)
        .map(|(&n, &r)| sample_binomial(n, r, rng))
        .collect())
}

/// Draw `Poisson(λ)`; zero rate gives zero.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u32 {
    if !(lambda > 0.0) {
        return 0;
    }
    let draw: f64 = Poisson::new(lambda)
        .expect("positive finite rate")
        .sample(rng);
    draw.min(u32::MAX as f64) as u32
}

/// Poisson reverse increment with mean `r_t · q_i` (global-rate `r_t`),
/// clipped so `x + increment <= k`.
pub fn poisson_step<R: Rng + ?Sized>(
    q: &[f64],
    x: &StageVector,
    k: u32,
    t: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<u32>> {
    if q.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: q.len(),
        });
    }
    let ratio = bridge_ratio(0.0, t, dt, RateMode::Global)?;
    Ok(q.iter()
        .zip(&x.counts)
        .map(|(&qi, &xi)| sample_poisson(ratio * qi.max(0.0), rng).min(k.saturating_sub(xi)))
        .collect())
}

/// Forward decay family used in training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayScheme {
    /// Personalized binomial burn-down.
    #[default]
    Burndown,
    /// `X_t = round(X_0 · e^{-λ t})`, no randomness.
    ExponentialDeterministic,
    /// `Binomial(X_0, (1 + t)^{-α})`.
    Power,
    /// `Binomial(X_0, max(0, 1 - β t))`.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecaySchemeConfig {
    pub scheme: DecayScheme,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for DecaySchemeConfig {
    fn default() -> Self {
        DecaySchemeConfig {
            scheme: DecayScheme::Burndown,
            alpha: 1.0,
            beta: 0.25,
            lambda: 1.0,
        }
    }
}

impl DecaySchemeConfig {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match self.scheme {
            DecayScheme::Burndown => return Ok(()),
            DecayScheme::Power => ("alpha", self.alpha),
            DecayScheme::Linear => ("beta", self.beta),
            DecayScheme::ExponentialDeterministic => ("lambda", self.lambda),
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{name} must be > 0, got {v}")));
        }
        Ok(())
    }

    /// Survival level of one item at time `t` under this scheme. Only the
    /// burn-down scheme depends on the decay coefficient.
    pub fn survival(&self, c: f64, t: f64) -> f64 {
        match self.scheme {
            DecayScheme::Burndown => survival_prob(c, t),
            _ => decay_variant_prob(self, t).expect("non-burndown scheme"),
        }
    }

    /// Forward draw under this scheme.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x0: &StageVector,
        coeffs: &[f64],
        t: f64,
        rng: &mut R,
    ) -> Result<StageVector> {
        match self.scheme {
            DecayScheme::Burndown => forward_sample(x0, coeffs, t, rng),
            DecayScheme::ExponentialDeterministic => {
                let scale = decay_variant_prob(self, t)?;
                Ok(StageVector {
                    counts: x0
                        .counts
                        .iter()
                        .map(|&n| (n as f64 * scale).round() as u32)
                        .collect(),
                })
            }
            DecayScheme::Power | DecayScheme::Linear => {
                let p = decay_variant_prob(self, t)?;
                thin(x0, &vec![p; x0.len()], rng)
            }
        }
    }

    /// Reverse ratio for one item under this scheme.
    pub fn reverse_ratio(&self, c: f64, t: f64, dt: f64, rate_mode: RateMode) -> Result<f64> {
        match self.scheme {
            DecayScheme::Burndown => bridge_ratio(c, t, dt, rate_mode),
            _ => {
                if dt >= t {
                    return Ok(1.0);
                }
                ratio_from_survival(self.survival(c, t - dt), self.survival(c, t))
            }
        }
    }
}

/// Survival level of the ablation schemes. For the deterministic
/// exponential scheme this is the scale `e^{-λ t}` rather than a probability.
pub fn decay_variant_prob(cfg: &DecaySchemeConfig, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    cfg.validate()?;
    Ok(match cfg.scheme {
        DecayScheme::Burndown => {
            return Err(Error::Domain(
                "burn-down survival depends on the decay coefficient; use survival_prob".into(),
            ))
        }
        DecayScheme::Power => (1.0 + t).powf(-cfg.alpha),
        DecayScheme::Linear => (1.0 - cfg.beta * t).max(0.0),
        DecayScheme::ExponentialDeterministic => (-cfg.lambda * t).exp(),
    })
}
