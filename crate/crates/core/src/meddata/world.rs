use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

pub const DEFAULT_NOISE: f64 = 0.02;
const MAX_ATTEMPTS: u64 = 100;
const SIGNATURE_MIN: usize = 3;
const SIGNATURE_MAX: usize = 5;
const SIGNATURE_DRAWS: usize = 64;

/// Ground-truth generative model: prior over diseases and independent
/// per-symptom Bernoulli probabilities, observed through bit-flip noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub prior: Vec<f64>,
    /// `symptom_prob[d][s]`, each in [0.01, 0.99].
    pub symptom_prob: Vec<Vec<f64>>,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    Symptoms(Vec<u8>),
    Image(Image),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub features: Features,
    pub label: u32,
}

impl SyntheticWorld {
    pub fn n_symptoms(&self) -> usize {
        self.symptom_prob.first().map_or(0, Vec::len)
    }

    pub fn n_diseases(&self) -> usize {
        self.prior.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ns = self.n_symptoms();
        if self.prior.is_empty() || self.symptom_prob.len() != self.prior.len() {
            return Err(Error::Consistency("prior and probability rows disagree".into()));
        }
        let total: f64 = self.prior.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.prior.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Consistency(format!("prior must be positive and sum to 1, got {total}")));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::Consistency(format!("noise {} outside [0, 0.5)", self.noise)));
        }
        for (d, row) in self.symptom_prob.iter().enumerate() {
            if row.len() != ns || row.iter().any(|p| !(0.01..=0.99).contains(p)) {
                return Err(Error::Consistency(format!("disease {d}: bad probability row")));
            }
            if row.iter().filter(|p| **p > 0.5).count() < SIGNATURE_MIN {
                return Err(Error::Consistency(format!("disease {d} has fewer than 3 strong symptoms")));
            }
        }
        Ok(())
    }

    /// Observation probability after independent bit flips.
    pub fn observed_prob(&self, d: usize, s: usize) -> f64 {
        let p = self.symptom_prob[d][s];
        p * (1.0 - self.noise) + (1.0 - p) * self.noise
    }

    /// Indices of symptoms with P > 0.5 for `d`.
    pub fn signature(&self, d: usize) -> Vec<usize> {
        self.symptom_prob[d].iter().enumerate().filter(|(_, p)| **p > 0.5).map(|(s, _)| s).collect()
    }
}

/// Draws a world with noise [`DEFAULT_NOISE`].
pub fn generate_world(n_symptoms: usize, n_diseases: usize, seed: u64) -> Result<SyntheticWorld> {
    generate_world_with_noise(n_symptoms, n_diseases, DEFAULT_NOISE, seed)
}

/// Each disease gets 3 to 5 signature symptoms with P in [0.6, 0.95] over a
/// background in [0.01, 0.15]; signature sets must be pairwise distinct, so a
/// colliding draw is redrawn and an exhausted attempt restarts the world.
pub fn generate_world_with_noise(
    n_symptoms: usize,
    n_diseases: usize,
    noise: f64,
    seed: u64,
) -> Result<SyntheticWorld> {
    if n_symptoms < 10 || n_diseases < 2 {
        return Err(Error::Input(format!(
            "world needs at least 10 symptoms and 2 diseases, got {n_symptoms} and {n_diseases}"
        )));
    }
    if !(0.0..0.5).contains(&noise) {
        return Err(Error::Input(format!("noise {noise} outside [0, 0.5)")));
    }
    let mut last_collision = String::new();
    'attempt: for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let weights: Vec<f64> = (0..n_diseases).map(|_| rng.random_range(0.5..2.0)).collect();
        let total: f64 = weights.iter().sum();
        let prior: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut seen = HashSet::new();
        let mut symptom_prob = Vec::with_capacity(n_diseases);
        for d in 0..n_diseases {
            let mut row: Vec<f64> = (0..n_symptoms).map(|_| rng.random_range(0.01..0.15)).collect();
            let mut fresh = None;
            for _ in 0..SIGNATURE_DRAWS {
                let k = rng.random_range(SIGNATURE_MIN..=SIGNATURE_MAX);
                let mut sig = sample(&mut rng, n_symptoms, k).into_vec();
                sig.sort_unstable();
                if seen.insert(sig.clone()) {
                    fresh = Some(sig);
                    break;
                }
                last_collision = format!("attempt {attempt}: disease {d} repeats signature {sig:?}");
            }
            let Some(sig) = fresh else { continue 'attempt };
            for &s in &sig {
                row[s] = rng.random_range(0.6..0.95);
            }
            symptom_prob.push(row);
        }
        let world = SyntheticWorld { prior, symptom_prob, noise, seed };
        world.validate()?;
        return Ok(world);
    }
    Err(Error::Consistency(format!(
        "identifiability not reached after {MAX_ATTEMPTS} attempts; last: {last_collision}"
    )))
}

/// `n` samples: d ~ prior, x_s ~ Bernoulli(P[d][s]), then each bit flipped with
/// probability `noise`.
pub fn sample_dataset(world: &SyntheticWorld, n: usize, seed: u64) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(world.n_diseases());
    let mut acc = 0.0;
    for p in &world.prior {
        acc += p;
        cumulative.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let d = cumulative.partition_point(|c| *c <= u).min(world.n_diseases() - 1);
            let x = world.symptom_prob[d]
                .iter()
                .map(|&p| {
                    let bit = rng.random::<f64>() < p;
                    let flip = rng.random::<f64>() < world.noise;
                    u8::from(bit ^ flip)
                })
                .collect();
            LabeledSample { features: Features::Symptoms(x), label: d as u32 }
        })
        .collect()
}

/// Exact posterior over diseases for an observed (noisy) symptom vector,
/// computed in log space.
pub fn bayes_posterior(world: &SyntheticWorld, x: &[f32]) -> Result<Vec<f64>> {
    if x.len() != world.n_symptoms() {
        return Err(Error::Input(format!("expected {} symptoms, got {}", world.n_symptoms(), x.len())));
    }
    let logp: Vec<f64> = (0..world.n_diseases())
        .map(|d| {
            let mut lp = world.prior[d].ln();
            for (s, &xs) in x.iter().enumerate() {
                let p = world.observed_prob(d, s);
                lp += if xs > 0.5 { p.ln() } else { (1.0 - p).ln() };
            }
            lp
        })
        .collect();
    let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    fn hand(prior: Vec<f64>, p: Vec<Vec<f64>>, noise: f64) -> SyntheticWorld {
        SyntheticWorld { prior, symptom_prob: p, noise, seed: 0 }
    }

    #[test]
    fn two_disease_hand_world() {
        let w = hand(vec![0.5, 0.5], vec![vec![0.9], vec![0.1]], 0.0);
        let post = bayes_posterior(&w, &[1.0]).unwrap();
        assert!((post[0] - 0.9).abs() < 1e-12 && (post[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_give_uniform() {
        let w = hand(vec![0.25; 4], vec![vec![0.3, 0.7, 0.2]; 4], 0.02);
        for p in bayes_posterior(&w, &[1.0, 0.0, 1.0]).unwrap() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate_world(9, 5, 1).is_err());
        assert!(generate_world(10, 1, 1).is_err());
        let w = generate_world(10, 3, 1).unwrap();
        assert!(bayes_posterior(&w, &[0.0; 9]).is_err());
    }

    #[test]
    fn infeasible_identifiability_errors() {
        // 10 symptoms allow 582 distinct signatures; 5000 diseases cannot all differ.
        match generate_world(10, 5000, 3) {
            Err(Error::Consistency(msg)) => assert!(msg.contains("100 attempts")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generated_worlds_are_valid_and_deterministic() {
        let a = generate_world(50, 100, 42).unwrap();
        a.validate().unwrap();
        assert_eq!(a, generate_world(50, 100, 42).unwrap());
        assert_ne!(a, generate_world(50, 100, 43).unwrap());
        let sa = sample_dataset(&a, 200, 7);
        assert_eq!(sa, sample_dataset(&a, 200, 7));
        assert!(sample_dataset(&a, 0, 7).is_empty());
    }

    #[test]
    fn signature_presence_matches_binomial_bound() {
        let mut p = vec![vec![0.01; 10]; 2];
        for s in 0..3 {
            p[0][s] = 0.99;
            p[1][s + 3] = 0.99;
        }
        let w = hand(vec![0.5, 0.5], p, 0.0);
        let samples = sample_dataset(&w, 20_000, 5);
        let miss = samples
            .iter()
            .filter(|s| s.label == 0)
            .filter(|s| match &s.features {
                Features::Symptoms(x) => x[..3].iter().all(|b| *b == 0),
                _ => unreachable!(),
            })
            .count();
        // P(no signature) = 0.01^3 = 1e-6; 10k draws expect 0.01 misses.
        assert_eq!(miss, 0);
    }

    #[test]
    fn class_frequencies_match_prior() {
        let w = generate_world(10, 100, 11).unwrap();
        let samples = sample_dataset(&w, 100_000, 12);
        let mut counts = vec![0f64; 100];
        for s in &samples {
            counts[s.label as usize] += 1.0;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&w.prior)
            .map(|(o, p)| {
                let e = p * 100_000.0;
                (o - e).powi(2) / e
            })
            .sum();
        // Upper 0.001 critical value of chi-square with 99 degrees of freedom.
        assert!(chi2 < 148.230_359_161_501_73, "chi2 = {chi2}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn posterior_sums_to_one(seed in 0u64..10_000, bits in proptest::collection::vec(any::<bool>(), 12)) {
            let w = generate_world(12, 7, seed).unwrap();
            let x: Vec<f32> = bits.iter().map(|b| f32::from(u8::from(*b))).collect();
            let post = bayes_posterior(&w, &x).unwrap();
            prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn posterior_permutation_invariant(seed in 0u64..10_000, bits in proptest::collection::vec(any::<bool>(), 12), rot in 1usize..12) {
            let w = generate_world(12, 5, seed).unwrap();
            let x: Vec<f32> = bits.iter().map(|b| f32::from(u8::from(*b))).collect();
            let mut wp = w.clone();
            for row in &mut wp.symptom_prob {
                row.rotate_left(rot);
            }
            let mut xp = x.clone();
            xp.rotate_left(rot);
            let a = bayes_posterior(&w, &x).unwrap();
            let b = bayes_posterior(&wp, &xp).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_sums_to_one_over_1000_worlds() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..1000 {
            let w = generate_world(10, 2 + i % 20, i as u64).unwrap();
            let x: Vec<f32> = (0..10).map(|_| f32::from(u8::from(rng.random::<bool>()))).collect();
            let s: f64 = bayes_posterior(&w, &x).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
