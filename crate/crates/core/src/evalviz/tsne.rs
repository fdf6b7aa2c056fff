use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_POINTS: usize = 5000;
const ENTROPY_TOLERANCE: f64 = 1e-10;
const SEARCH_STEPS: usize = 1000;
const P_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub out_dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations with exaggeration and the low momentum.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            out_dims: 2,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init_std: 1e-4,
            seed: 42,
        }
    }
}

/// Symmetrized input affinities and the per-point calibration outcome.
#[derive(Clone, Debug)]
pub struct Affinities {
    pub n: usize,
    /// Joint probabilities, n×n, zero diagonal, summing to 1.
    pub p: Vec<f64>,
    /// Achieved entropy (nats) of each conditional distribution.
    pub entropies: Vec<f64>,
    /// Points whose entropy missed ln(perplexity) by more than 1e-5.
    pub unconverged: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TsneOutput {
    pub n: usize,
    pub dims: usize,
    pub coords: Vec<f64>,
    /// KL(P‖Q) with the unexaggerated P, one value per iteration.
    pub kl_trace: Vec<f64>,
    pub entropies: Vec<f64>,
    pub target_entropy: f64,
    pub unconverged: Vec<usize>,
}

fn squared_distances(data: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let a = &data[i * d..(i + 1) * d];
        for (j, slot) in row.iter_mut().enumerate() {
            let b = &data[j * d..(j + 1) * d];
            *slot = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    });
    out
}

/// Conditional distribution of row `i` at precision `beta`, with distances
/// shifted by their minimum for stability. Returns (entropy, probabilities).
fn conditional(row: &[f64], i: usize, beta: f64, shift: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&dist, o)) in row.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let e = (-(dist - shift) * beta).exp();
        *o = e;
        sum += e;
        weighted += (dist - shift) * e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln() + beta * weighted / sum
}

fn calibrate_row(row: &[f64], i: usize, target: f64, out: &mut [f64]) -> f64 {
    let others = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, d)| *d);
    let shift = others.clone().fold(f64::INFINITY, f64::min);
    let spread = others.map(|d| d - shift).sum::<f64>() / (row.len() - 1) as f64;
    let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut h = conditional(row, i, beta, shift, out);
    for _ in 0..SEARCH_STEPS {
        let diff = h - target;
        if diff.abs() < ENTROPY_TOLERANCE {
            break;
        }
        // Entropy falls as beta grows.
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        h = conditional(row, i, beta, shift, out);
    }
    h
}

fn check_perplexity(n: usize, perplexity: f64) -> Result<()> {
    if n < 4 {
        return Err(Error::Input(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if n > MAX_POINTS {
        return Err(Error::Input(format!("exact t-SNE is capped at {MAX_POINTS} points, got {n}")));
    }
    let max = (n - 1) as f64 / 3.0;
    if !(perplexity >= 1.0 && perplexity <= max) {
        return Err(Error::Input(format!(
            "perplexity {perplexity} infeasible for {n} points; maximum is {max}"
        )));
    }
    Ok(())
}

/// Per-point bandwidth search and symmetrization.
pub fn joint_probabilities(data: &[f64], n: usize, d: usize, perplexity: f64) -> Result<Affinities> {
    check_perplexity(n, perplexity)?;
    if data.len() != n * d || data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("expected {n}×{d} finite values")));
    }
    let dist = squared_distances(data, n, d);
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let entropies: Vec<f64> = cond
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, out)| calibrate_row(&dist[i * n..(i + 1) * n], i, target, out))
        .collect();
    let unconverged = entropies.iter().enumerate().filter(|(_, h)| (*h - target).abs() > 1e-5).map(|(i, _)| i).collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }
    Ok(Affinities { n, p, entropies, unconverged })
}

/// Student-t kernel values `1/(1+|yi-yj|²)` (zero diagonal) and their sum.
fn student_t(y: &[f64], n: usize, dims: usize) -> (Vec<f64>, f64) {
    let mut num = vec![0.0; n * n];
    num.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let a = &y[i * dims..(i + 1) * dims];
        for (j, slot) in row.iter_mut().enumerate() {
            if j != i {
                let b = &y[j * dims..(j + 1) * dims];
                let d2: f64 = a.iter().zip(b).map(|(x, z)| (x - z) * (x - z)).sum();
                *slot = 1.0 / (1.0 + d2);
            }
        }
    });
    let z = num.chunks(n).map(|r| r.iter().sum::<f64>()).sum();
    (num, z)
}

pub fn kl_divergence(p: &[f64], y: &[f64], n: usize, dims: usize) -> f64 {
    let (num, z) = student_t(y, n, dims);
    kl_from(p, &num, z, n)
}

fn kl_from(p: &[f64], num: &[f64], z: f64, n: usize) -> f64 {
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let q = (num[i * n + j] / z).max(P_FLOOR);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

fn gradient_from(p: &[f64], exaggeration: f64, y: &[f64], num: &[f64], z: f64, n: usize, dims: usize) -> Vec<f64> {
    let mut grad = vec![0.0; n * dims];
    grad.par_chunks_mut(dims).enumerate().for_each(|(i, g)| {
        let yi = &y[i * dims..(i + 1) * dims];
        for j in 0..n {
            if j == i {
                continue;
            }
            let nij = num[i * n + j];
            let mult = 4.0 * (exaggeration * p[i * n + j] - (nij / z).max(P_FLOOR)) * nij;
            let yj = &y[j * dims..(j + 1) * dims];
            for k in 0..dims {
                g[k] += mult * (yi[k] - yj[k]);
            }
        }
    });
    grad
}

/// Gradient of KL(P‖Q) with respect to the output coordinates.
pub fn kl_gradient(p: &[f64], y: &[f64], n: usize, dims: usize) -> Vec<f64> {
    let (num, z) = student_t(y, n, dims);
    gradient_from(p, 1.0, y, &num, z, n, dims)
}

/// Exact t-SNE of an `n×d` row-major matrix.
pub fn tsne_embed(data: &[f64], n: usize, d: usize, config: &TsneConfig) -> Result<TsneOutput> {
    if !(config.out_dims == 2 || config.out_dims == 3) {
        return Err(Error::Input(format!("t-SNE output must be 2 or 3 dimensional, got {}", config.out_dims)));
    }
    let aff = joint_probabilities(data, n, d, config.perplexity)?;
    let dims = config.out_dims;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::Input(e.to_string()))?;
    let mut y: Vec<f64> = (0..n * dims).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; n * dims];
    let mut gains = vec![1.0f64; n * dims];
    let mut kl_trace = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let early = it < config.exaggeration_iters;
        let exaggeration = if early { config.early_exaggeration } else { 1.0 };
        let momentum = if early { config.initial_momentum } else { config.final_momentum };
        let (num, z) = student_t(&y, n, dims);
        kl_trace.push(kl_from(&aff.p, &num, z, n));
        let grad = gradient_from(&aff.p, exaggeration, &y, &num, z, n, dims);
        for k in 0..n * dims {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) { gains[k] + 0.2 } else { gains[k] * 0.8 };
            gains[k] = gains[k].max(0.01);
            update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for k in 0..dims {
            let mean = (0..n).map(|i| y[i * dims + k]).sum::<f64>() / n as f64;
            for i in 0..n {
                y[i * dims + k] -= mean;
            }
        }
    }
    Ok(TsneOutput {
        n,
        dims,
        coords: y,
        kl_trace,
        entropies: aff.entropies,
        target_entropy: config.perplexity.ln(),
        unconverged: aff.unconverged,
    })
}

/// Mean silhouette coefficient with Euclidean distance; singletons score 0.
pub fn silhouette_score(points: &[f64], n: usize, d: usize, labels: &[usize]) -> Result<f64> {
    if points.len() != n * d || labels.len() != n || n < 2 {
        return Err(Error::Input("silhouette needs n ≥ 2 points with one label each".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let dist = squared_distances(points, n, d);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist[i * n + j].sqrt();
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k).filter(|&c| c != own && counts[c] > 0).map(|c| sums[c] / counts[c] as f64).fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    Ok(total / n as f64)
}

/// One line per point: coordinates then the label, comma separated.
pub fn to_csv(coords: &[f64], dims: usize, labels: &[usize]) -> String {
    let mut out = String::new();
    for (row, l) in coords.chunks_exact(dims).zip(labels) {
        for v in row {
            out.push_str(&v.to_string());
            out.push(',');
        }
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}
