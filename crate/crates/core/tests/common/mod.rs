#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson goodness-of-fit statistic against expected probabilities.
/// Bins with expected count below 5 are pooled into their neighbour.
/// Returns (statistic, degrees of freedom).
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> (f64, usize) {
    let total: u64 = counts.iter().sum();
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        o_acc += c as f64;
        e_acc += p * total as f64;
        if e_acc >= 5.0 {
            obs.push(o_acc);
            exp.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if let (Some(lo), Some(le)) = (obs.last_mut(), exp.last_mut()) {
        *lo += o_acc;
        *le += e_acc;
    } else {
        obs.push(o_acc);
        exp.push(e_acc);
    }
    let stat = obs
        .iter()
        .zip(&exp)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    (stat, obs.len().saturating_sub(1))
}

/// Two-sample homogeneity statistic over shared bins, pooling sparse bins.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, usize) {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut xa, mut xb) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        xa += x as f64;
        xb += y as f64;
        if xa + xb >= 10.0 {
            bins.push((xa, xb));
            xa = 0.0;
            xb = 0.0;
        }
    }
    if let Some(last) = bins.last_mut() {
        last.0 += xa;
        last.1 += xb;
    } else {
        bins.push((xa, xb));
    }
    let n = na + nb;
    let mut stat = 0.0;
    for &(x, y) in &bins {
        let col = x + y;
        let (ea, eb) = (na * col / n, nb * col / n);
        stat += (x - ea) * (x - ea) / ea + (y - eb) * (y - eb) / eb;
    }
    (stat, bins.len().saturating_sub(1))
}

/// Upper critical value at `level` (e.g. 0.99).
pub fn critical(df: usize, level: f64) -> f64 {
    if df == 0 {
        return f64::INFINITY;
    }
    ChiSquared::new(df as f64).unwrap().inverse_cdf(level)
}

pub fn histogram(values: impl IntoIterator<Item = u32>, bins: usize) -> Vec<u64> {
    let mut h = vec![0u64; bins];
    for v in values {
        h[v as usize] += 1;
    }
    h
}
