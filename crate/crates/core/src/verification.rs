//! Brute-force oracles: reverse-posterior enumeration, finite-difference
//! gradients and a dense spectral view of the decay operator.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interactions::{decay_coefficients, normalize, InteractionMatrix};
use crate::kernel::{
    bridge_ratio, forward_pmf, ln_choose, stage_init, DecaySchemeConfig, DiffusionSchedule,
    RateMode, StageVector,
};
use crate::network::{DropoutMasks, NetShape, ScoreNet};
use crate::recommender::{burn_up, SamplerSettings, TrueDeficit};
use crate::rng::{self, Purpose};
use crate::trainer::{batch_loss_and_grad, elbo_loss, BatchInputs};

/// Exact law of the state one step earlier, over `m ∈ [k, n]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PosteriorTable {
    pub n: u32,
    pub k: u32,
    /// Bayes enumeration, index `m - k`.
    pub enumerated: Vec<f64>,
    /// Binomial-bridge closed form, index `m - k`.
    pub closed_form: Vec<f64>,
    pub max_abs_diff: f64,
}

/// Reverse ratio as a function of the survival levels at `t - dt` and `t`.
pub type RatioFn = dyn Fn(f64, f64) -> Result<f64>;

/// The sampler's own ratio, reached through its time parameterization:
/// global rate with `t = -ln p_now` and `t - dt = -ln p_prev`.
pub fn sampler_ratio(p_prev: f64, p_now: f64) -> Result<f64> {
    let t = -p_now.ln();
    let dt = t + p_prev.ln();
    if dt <= 0.0 {
        return Err(Error::Domain(format!(
            "need p_now < p_prev, got {p_now} >= {p_prev}"
        )));
    }
    bridge_ratio(0.0, t, dt, RateMode::Global)
}

/// Enumerate `p(m | k, n) ∝ Binom(k; m, p_now/p_prev) · Binom(m; n, p_prev)`
/// and compare with `C(n-k, m-k) r^{m-k} (1-r)^{n-m}` for `r = ratio(p_prev, p_now)`.
pub fn reverse_posterior_with(
    n: u32,
    k: u32,
    p_prev: f64,
    p_now: f64,
    ratio: &RatioFn,
) -> Result<PosteriorTable> {
    if k > n {
        return Err(Error::Domain(format!("k = {k} exceeds n = {n}")));
    }
    if !(p_now > 0.0 && p_now <= p_prev && p_prev <= 1.0) {
        return Err(Error::Domain(format!(
            "need 0 < p_now <= p_prev <= 1, got {p_now}, {p_prev}"
        )));
    }
    let step = p_now / p_prev;
    let joint: Vec<f64> = (k..=n)
        .map(|m| Ok(forward_pmf(m, step, k)? * forward_pmf(n, p_prev, m)?))
        .collect::<Result<_>>()?;
    let z: f64 = joint.iter().sum();
    let enumerated: Vec<f64> = joint.iter().map(|j| j / z).collect();

    let closed_form: Vec<f64> = if k == n {
        vec![1.0]
    } else {
        let r = ratio(p_prev, p_now)?;
        (k..=n)
            .map(|m| {
                let (a, b) = ((m - k) as i32, (n - m) as i32);
                ln_choose(n - k, m - k).exp() * r.powi(a) * (1.0 - r).powi(b)
            })
            .collect()
    };
    let max_abs_diff = enumerated
        .iter()
        .zip(&closed_form)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(PosteriorTable {
        n,
        k,
        enumerated,
        closed_form,
        max_abs_diff,
    })
}

pub fn reverse_posterior_oracle(n: u32, k: u32, p_prev: f64, p_now: f64) -> Result<PosteriorTable> {
    reverse_posterior_with(n, k, p_prev, p_now, &sampler_ratio)
}

/// Survival levels at `t - dt`.
pub const PREV_GRID: [f64; 5] = [1.0, 0.8, 0.6, 0.36, 0.1];
/// One-step survival `p_now / p_prev`.
pub const STEP_GRID: [f64; 5] = [0.99, 0.9, 0.6, 0.3, 0.05];

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub cells: usize,
    pub max_abs_diff: f64,
    pub worst: Option<(u32, u32, f64, f64)>,
}

/// Exhaustive comparison for all `k ≤ n ≤ max_n` over the 5×5 grid.
pub fn posterior_sweep(max_n: u32, ratio: &RatioFn) -> Result<SweepReport> {
    let mut report = SweepReport {
        cells: 0,
        max_abs_diff: 0.0,
        worst: None,
    };
    for &p_prev in &PREV_GRID {
        for &s in &STEP_GRID {
            let p_now = p_prev * s;
            for n in 0..=max_n {
                for k in 0..=n {
                    let table = reverse_posterior_with(n, k, p_prev, p_now, ratio)?;
                    report.cells += 1;
                    if table.max_abs_diff > report.max_abs_diff || table.max_abs_diff.is_nan() {
                        report.max_abs_diff = table.max_abs_diff;
                        report.worst = Some((n, k, p_prev, p_now));
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            work[i] = x[i] + h;
            let up = f(&work);
            work[i] = x[i] - h;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenComponent {
    pub eigenvalue: f64,
    /// `vᵀ diag(G̃ r_u) v`.
    pub rayleigh: f64,
    /// `∫ ⟨E[X_t], v⟩ dt` from `X_0 = v`.
    pub lifetime: f64,
    /// `1 / lifetime`.
    pub decay_rate: f64,
    /// `⟨E[X_t], v⟩` at the probe time.
    pub projection: f64,
    /// `-d/dt ⟨E[X_t], v⟩` at `t = 0`.
    pub initial_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub components: Vec<EigenComponent>,
    pub pairs_checked: usize,
    /// Pairs where a larger Rayleigh quotient did not give a slower decay rate.
    pub violations: usize,
    /// Item pairs with larger `c` but no higher expected survival at the probe time.
    pub item_violations: usize,
    /// Ordering misses of the instantaneous rate at `t = 0`, for information.
    pub initial_rate_violations: usize,
    /// Largest gap between mode-wise and quadrature lifetimes.
    pub lifetime_quadrature_error: f64,
    /// Largest gap between `coeffs` and the dense `γ · R̃ᵀR̃ r_u`.
    pub coeff_max_err: f64,
}

/// Gap below which two quotients or coefficients count as tied.
pub const ORDER_TOL: f64 = 1e-9;

fn lifetime_quadrature(v: &[f64], rates: &[f64]) -> f64 {
    // ∫_0^∞ Σ v_i² e^{-a_i t} dt with t = s / (1 - s), Gauss-Legendre on [0, 1).
    let (nodes, weights) = gauss_legendre(64);
    let mut total = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let s = 0.5 * (x + 1.0);
        let t = s / (1.0 - s);
        let jac = 0.5 / ((1.0 - s) * (1.0 - s));
        let f: f64 = v
            .iter()
            .zip(rates)
            .map(|(vi, a)| vi * vi * (-a * t).exp())
            .sum();
        total += w * f * jac;
    }
    total
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Dense spectral view of one user's decay. `adj` is the normalized
/// `|U| × |I|` matrix, `r_u` the user's binary row and `coeffs` the decay
/// coefficients under test (expected to equal `γ · R̃ᵀR̃ r_u`).
pub fn spectral_decay_check(
    adj: &[Vec<f64>],
    r_u: &[f64],
    coeffs: &[f64],
    gamma: f64,
    t: f64,
) -> Result<SpectralReport> {
    let n = r_u.len();
    if n > 50 {
        return Err(Error::Domain(format!(
            "dense check limited to 50 items, got {n}"
        )));
    }
    if coeffs.len() != n || adj.iter().any(|row| row.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: coeffs.len(),
        });
    }
    let rt = DMatrix::from_fn(adj.len(), n, |u, i| adj[u][i]);
    let gram = rt.transpose() * &rt;
    let g_r = &gram * nalgebra::DVector::from_column_slice(r_u);
    let eig = SymmetricEigen::new(gram);
    let rates: Vec<f64> = coeffs.iter().map(|c| 1.0 / (1.0 + c)).collect();
    let coeff_max_err = coeffs
        .iter()
        .zip(g_r.iter())
        .map(|(c, g)| (c - gamma * g).abs())
        .fold(0.0, f64::max);

    let mut components = Vec::with_capacity(n);
    let mut quad_err: f64 = 0.0;
    for j in 0..n {
        let v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let rayleigh: f64 = v.iter().zip(g_r.iter()).map(|(vi, g)| vi * vi * g).sum();
        let lifetime: f64 = v.iter().zip(&rates).map(|(vi, a)| vi * vi / a).sum();
        quad_err = quad_err.max((lifetime - lifetime_quadrature(&v, &rates)).abs() / lifetime);
        let projection: f64 = v
            .iter()
            .zip(&rates)
            .map(|(vi, a)| vi * vi * (-a * t).exp())
            .sum();
        let initial_rate: f64 = v.iter().zip(&rates).map(|(vi, a)| vi * vi * a).sum();
        components.push(EigenComponent {
            eigenvalue: eig.eigenvalues[j],
            rayleigh,
            lifetime,
            decay_rate: 1.0 / lifetime,
            projection,
            initial_rate,
        });
    }
    components.sort_by(|a, b| b.rayleigh.total_cmp(&a.rayleigh));

    let mut pairs = 0;
    let mut violations = 0;
    let mut initial_violations = 0;
    for a in 0..n {
        for b in a + 1..n {
            let (v, w) = (&components[a], &components[b]);
            if gamma * (v.rayleigh - w.rayleigh) <= ORDER_TOL {
                continue;
            }
            pairs += 1;
            if v.decay_rate >= w.decay_rate {
                violations += 1;
            }
            if v.initial_rate >= w.initial_rate {
                initial_violations += 1;
            }
        }
    }
    let mut item_violations = 0;
    for i in 0..n {
        for j in 0..n {
            if coeffs[i] - coeffs[j] > ORDER_TOL && (-t * rates[i]).exp() <= (-t * rates[j]).exp() {
                item_violations += 1;
            }
        }
    }
    Ok(SpectralReport {
        components,
        pairs_checked: pairs,
        violations,
        item_violations,
        initial_rate_violations: initial_violations,
        lifetime_quadrature_error: quad_err,
        coeff_max_err,
    })
}

/// Exact-recovery runs of the bridge sampler driven by the true deficit.
/// Returns the number of instances whose output differs from the target.
pub fn bridge_recovery_suite(instances: usize, seed: u64) -> Result<usize> {
    let mut mismatches = 0;
    for inst in 0..instances {
        let mut rng = rng::stream(seed, Purpose::Verify, inst as u64, 1);
        let n_items = rng.random_range(3..=12);
        let k = rng.random_range(1..=20u32);
        let history: Vec<u32> = (0..n_items as u32)
            .filter(|_| rng.random_bool(0.3))
            .collect();
        let coeffs: Vec<f64> = (0..n_items).map(|_| rng.random_range(0.0..3.0)).collect();
        let mut target = stage_init(&history, n_items, k)?;
        for v in target.counts.iter_mut().filter(|v| **v == 0) {
            *v = rng.random_range(0..=k);
        }
        let settings = SamplerSettings {
            k,
            schedule: DiffusionSchedule {
                n_steps: rng.random_range(1..=50),
                rate_mode: if rng.random_bool(0.5) {
                    RateMode::Personalized
                } else {
                    RateMode::Global
                },
                ..Default::default()
            },
            decay: DecaySchemeConfig::default(),
            seed: rng.random(),
            parallel: false,
        };
        let est = TrueDeficit {
            targets: BTreeMap::from([(inst, target.clone())]),
        };
        if burn_up(&est, inst, &history, &coeffs, &settings)? != target {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientReport {
    pub instances: usize,
    /// Worst norm-wise relative error of `dL/dq`.
    pub loss_max_rel: f64,
    /// Worst norm-wise relative error of the parameter gradient.
    pub composite_max_rel: f64,
}

fn norm_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

fn random_pair(rng: &mut impl Rng, n: usize, k: u32) -> (StageVector, StageVector) {
    let x0: Vec<u32> = (0..n).map(|_| rng.random_range(0..=k)).collect();
    let xt: Vec<u32> = x0.iter().map(|&v| rng.random_range(0..=v)).collect();
    (StageVector { counts: x0 }, StageVector { counts: xt })
}

/// Analytic against central-difference gradients of the loss in `q` and of
/// the full objective in the network parameters (5 items, with dropout).
pub fn gradient_suite(instances: usize, seed: u64) -> Result<GradientReport> {
    let mut loss_max: f64 = 0.0;
    let mut comp_max: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = rng::stream(seed, Purpose::Verify, inst as u64, 2);
        let n = 5;
        let k = rng.random_range(2..=8u32);
        let (x0, xt) = random_pair(&mut rng, n, k);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..6.0)).collect();
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let (_, analytic) = elbo_loss(&q, &x0, &xt, &f)?;
        let numeric = finite_diff_grad(
            |q| elbo_loss(q, &x0, &xt, &f).map_or(f64::NAN, |r| r.0),
            &q,
            1e-6,
        );
        loss_max = loss_max.max(norm_rel(&analytic, &numeric));

        let shape = NetShape {
            n_items: n,
            hidden: vec![6, 4],
            time_dim: 4,
        };
        let net = ScoreNet::new(shape.clone(), &mut rng)?;
        let batch = 3;
        let pairs: Vec<_> = (0..batch).map(|_| random_pair(&mut rng, n, k)).collect();
        let x0s: Vec<StageVector> = pairs.iter().map(|p| p.0.clone()).collect();
        let xts: Vec<StageVector> = pairs.iter().map(|p| p.1.clone()).collect();
        let weights: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..n).map(|_| rng.random_range(0.1..1.0)).collect())
            .collect();
        let steps: Vec<usize> = (0..batch).map(|_| rng.random_range(1..=100)).collect();
        let mut mask_rngs: Vec<_> = (0..batch)
            .map(|r| rng::stream(seed, Purpose::Dropout, inst as u64, r as u64))
            .collect();
        let masks = DropoutMasks::sample(&shape, 0.3, &mut mask_rngs);
        let inputs = BatchInputs {
            x0: &x0s,
            xt: &xts,
            weights: &weights,
            steps: &steps,
        };
        let (_, grads) = batch_loss_and_grad(&net, k, inputs, Some(masks.clone()), batch as f64)?;
        let theta = net.params.to_flat();
        let mut probe = net.clone();
        let numeric = finite_diff_grad(
            |th| {
                probe.params.set_flat(th).expect("same length");
                batch_loss_and_grad(&probe, k, inputs, Some(masks.clone()), batch as f64)
                    .map_or(f64::NAN, |r| r.0)
            },
            &theta,
            1e-6,
        );
        comp_max = comp_max.max(norm_rel(&grads.to_flat(), &numeric));
    }
    Ok(GradientReport {
        instances,
        loss_max_rel: loss_max,
        composite_max_rel: comp_max,
    })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SpectralSummary {
    pub instances: usize,
    pub pairs_checked: usize,
    pub violations: usize,
    pub item_violations: usize,
    pub initial_rate_violations: usize,
    pub coeff_max_err: f64,
    pub lifetime_quadrature_error: f64,
}

/// Spectral and item-level ordering over random small interaction graphs,
/// with decay coefficients taken from the sparse production path.
pub fn spectral_suite(
    instances: usize,
    n_items: usize,
    seed: u64,
    t: f64,
) -> Result<SpectralSummary> {
    let mut out = SpectralSummary {
        instances,
        ..Default::default()
    };
    for inst in 0..instances {
        let mut rng = rng::stream(seed, Purpose::Verify, inst as u64, 3);
        let n_users = 8;
        let mut rows: Vec<Vec<u32>> = (0..n_users)
            .map(|_| {
                (0..n_items as u32)
                    .filter(|_| rng.random_bool(0.35))
                    .collect()
            })
            .collect();
        if rows[0].is_empty() {
            rows[0].push(rng.random_range(0..n_items as u32));
        }
        let r = InteractionMatrix::with_dims(n_users, n_items, rows)?;
        let adj = normalize(&r);
        let gamma = 1.0;
        let coeffs = decay_coefficients(&adj, &r, 0, gamma)?.coeffs;
        let rep = spectral_decay_check(&adj.to_dense(), &r.dense_row(0), &coeffs, gamma, t)?;
        out.pairs_checked += rep.pairs_checked;
        out.violations += rep.violations;
        out.item_violations += rep.item_violations;
        out.initial_rate_violations += rep.initial_rate_violations;
        out.coeff_max_err = out.coeff_max_err.max(rep.coeff_max_err);
        out.lifetime_quadrature_error = out
            .lifetime_quadrature_error
            .max(rep.lifetime_quadrature_error);
    }
    Ok(out)
}
