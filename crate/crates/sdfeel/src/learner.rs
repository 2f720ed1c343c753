//! The local model: multinomial logistic regression — loss, mini-batch
//! gradient, the SGD update, and empirical estimators for the smoothness,
//! gradient-noise, and non-IIDness constants that feed the convergence
//! bound.
//!
//! Parameters live in a flat vector of dimension (F+1) * num_classes,
//! class-major, bias last within each class block: for class k the weights
//! occupy `w[k*(F+1) .. k*(F+1)+F]` and the bias sits at `w[k*(F+1)+F]`.
//! A convex, known-smooth model keeps the bound diagnostics meaningful at
//! desk scale; every protocol mechanism is model-agnostic.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{LabeledDataset, PartitionPlan};
use crate::error::{Result, SimError};

/// Flat parameter count for a given feature dimension and class count.
pub fn model_dim(feature_dim: usize, num_classes: usize) -> usize {
    (feature_dim + 1) * num_classes
}

/// Empirical estimates of the constants the convergence bound consumes:
/// smoothness `l`, mini-batch gradient-noise level `sigma`, and the
/// non-IIDness level `kappa` (worst client-vs-global gradient gap).
///
/// All three are maxima over finitely many probe points, so they are
/// lower bounds on the true suprema — plausible constants, not certified
/// ones.
#[derive(Debug, Clone, Copy)]
pub struct AssumptionConstants {
    pub l: f64,
    pub sigma: f64,
    pub kappa: f64,
}

/// Per-class logits z_k = w_k . x + b_k.
fn logits(w: &[f64], features: &[f64], num_classes: usize) -> Vec<f64> {
    let fp1 = features.len() + 1;
    let mut z = vec![0.0f64; num_classes];
    for (k, zk) in z.iter_mut().enumerate() {
        let block = &w[k * fp1..(k + 1) * fp1];
        let mut acc = block[features.len()];
        for (wj, xj) in block[..features.len()].iter().zip(features) {
            acc += wj * xj;
        }
        *zk = acc;
    }
    z
}

/// log(sum exp(z)) computed against the running maximum, safe for logits
/// of any magnitude.
fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln()
}

fn check_params(w: &[f64], data: &LabeledDataset) -> Result<()> {
    let expected = model_dim(data.feature_dim(), data.num_classes);
    if w.len() != expected {
        return Err(SimError::InvalidArgument(format!(
            "parameter vector has {} entries, model needs {expected}",
            w.len()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of the samples at `indices`.
pub fn loss(w: &[f64], data: &LabeledDataset, indices: &[usize]) -> Result<f64> {
    check_params(w, data)?;
    if indices.is_empty() {
        return Err(SimError::InvalidArgument(
            "loss over an empty sample subset".into(),
        ));
    }
    let mut total = 0.0f64;
    for &idx in indices {
        if idx >= data.len() {
            return Err(SimError::InvalidArgument(format!(
                "sample index {idx} out of range for {} samples",
                data.len()
            )));
        }
        let x = data.features.row(idx);
        let z = logits(w, x.as_slice().unwrap(), data.num_classes);
        total += log_sum_exp(&z) - z[data.labels[idx]];
    }
    Ok(total / indices.len() as f64)
}

/// Gradient of the mean cross-entropy over the mini-batch `indices`.
pub fn gradient(w: &[f64], data: &LabeledDataset, indices: &[usize]) -> Result<Array1<f64>> {
    check_params(w, data)?;
    if indices.is_empty() {
        return Err(SimError::InvalidArgument(
            "gradient over an empty mini-batch".into(),
        ));
    }
    let f = data.feature_dim();
    let fp1 = f + 1;
    let mut g = Array1::<f64>::zeros(w.len());
    for &idx in indices {
        if idx >= data.len() {
            return Err(SimError::InvalidArgument(format!(
                "sample index {idx} out of range for {} samples",
                data.len()
            )));
        }
        let x = data.features.row(idx);
        let xs = x.as_slice().unwrap();
        let z = logits(w, xs, data.num_classes);
        let lse = log_sum_exp(&z);
        for k in 0..data.num_classes {
            let p = (z[k] - lse).exp();
            let residual = p - if k == data.labels[idx] { 1.0 } else { 0.0 };
            let block = &mut g.as_slice_mut().unwrap()[k * fp1..(k + 1) * fp1];
            for (gj, xj) in block[..f].iter_mut().zip(xs) {
                *gj += residual * xj;
            }
            block[f] += residual;
        }
    }
    let scale = 1.0 / indices.len() as f64;
    g.mapv_inplace(|v| v * scale);
    Ok(g)
}

/// One SGD update, w - eta * g, exactly.
pub fn sgd_step(w: &[f64], g: &[f64], eta: f64) -> Result<Vec<f64>> {
    if w.len() != g.len() {
        return Err(SimError::InvalidArgument(format!(
            "parameter/gradient dimension mismatch: {} vs {}",
            w.len(),
            g.len()
        )));
    }
    if eta <= 0.0 {
        return Err(SimError::InvalidArgument(format!(
            "learning rate must be positive, got {eta}"
        )));
    }
    Ok(w.iter().zip(g).map(|(wi, gi)| wi - eta * gi).collect())
}

/// Fraction of the samples at `indices` whose argmax logit matches the
/// label.
pub fn accuracy(w: &[f64], data: &LabeledDataset, indices: &[usize]) -> Result<f64> {
    check_params(w, data)?;
    if indices.is_empty() {
        return Err(SimError::InvalidArgument(
            "accuracy over an empty sample subset".into(),
        ));
    }
    let mut hits = 0usize;
    for &idx in indices {
        let x = data.features.row(idx);
        let z = logits(w, x.as_slice().unwrap(), data.num_classes);
        let argmax = z
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k)
            .unwrap();
        if argmax == data.labels[idx] {
            hits += 1;
        }
    }
    Ok(hits as f64 / indices.len() as f64)
}

fn norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Draws a probe point uniformly on the sphere of radius 1 (a normalized
/// Gaussian vector).
fn draw_probe(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Number of mini-batches drawn per (probe, client) when estimating the
/// gradient-noise level.
const NOISE_BATCHES: usize = 16;

/// Estimates the smoothness, gradient-noise, and non-IIDness constants by
/// probing the loss landscape at `probe_points` random parameter vectors
/// on the unit sphere (probe radius 1).
///
/// - smoothness: max over clients and consecutive probe pairs of
///   ||grad_i(w1) - grad_i(w2)|| / ||w1 - w2||;
/// - noise: root-mean-square norm of (mini-batch gradient - full-shard
///   gradient) over sampled batches of `batch_size`, maximized over probes
///   and clients — exactly 0 when the batch is the full shard;
/// - non-IIDness: max over probes and clients of
///   ||grad_i(w) - grad(w)|| against the sample-weighted global gradient.
pub fn estimate_constants(
    data: &LabeledDataset,
    plan: &PartitionPlan,
    probe_points: usize,
    batch_size: usize,
    seed: u64,
) -> Result<AssumptionConstants> {
    if probe_points < 2 {
        return Err(SimError::InvalidArgument(format!(
            "need at least 2 probe points, got {probe_points}"
        )));
    }
    if batch_size == 0 || batch_size > plan.min_shard_len() {
        return Err(SimError::InvalidArgument(format!(
            "batch size {batch_size} must be in 1..={}",
            plan.min_shard_len()
        )));
    }
    if plan.total_samples() != data.len() {
        return Err(SimError::InvalidArgument(format!(
            "partition covers {} samples but the dataset holds {}",
            plan.total_samples(),
            data.len()
        )));
    }
    let dim = model_dim(data.feature_dim(), data.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes: Vec<Vec<f64>> = Vec::with_capacity(probe_points);
    while probes.len() < probe_points {
        let candidate = draw_probe(dim, &mut rng);
        // A repeated probe would make the smoothness ratio 0/0; redraw.
        let degenerate = probes.last().is_some_and(|prev: &Vec<f64>| {
            prev.iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                < 1e-12
        });
        if !degenerate {
            probes.push(candidate);
        }
    }

    let clients = plan.client_count();
    let weights = plan.client_weights();
    let mut l_hat = 0.0f64;
    let mut sigma_sq_hat = 0.0f64;
    let mut kappa_hat = 0.0f64;

    // Per-client full-shard gradients at every probe, reused by all three
    // estimators.
    let mut grads_at: Vec<Vec<Array1<f64>>> = Vec::with_capacity(probe_points);
    for w in &probes {
        let per_client: Vec<Array1<f64>> = (0..clients)
            .map(|i| gradient(w, data, plan.shard(i)))
            .collect::<Result<_>>()?;
        grads_at.push(per_client);
    }

    for (t, w) in probes.iter().enumerate() {
        let mut global = Array1::<f64>::zeros(dim);
        for (i, g) in grads_at[t].iter().enumerate() {
            global = global + g * weights[i];
        }
        for (i, g) in grads_at[t].iter().enumerate() {
            let gap = norm(&(g - &global));
            kappa_hat = kappa_hat.max(gap);

            if t + 1 < probe_points {
                let next = &grads_at[t + 1][i];
                let dw: f64 = w
                    .iter()
                    .zip(&probes[t + 1])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                l_hat = l_hat.max(norm(&(next - g)) / dw);
            }

            if batch_size < plan.shard(i).len() {
                let mut pool: Vec<usize> = plan.shard(i).to_vec();
                let mut dev_sq = 0.0f64;
                for _ in 0..NOISE_BATCHES {
                    pool.shuffle(&mut rng);
                    let batch_grad = gradient(w, data, &pool[..batch_size])?;
                    dev_sq += norm(&(&batch_grad - g)).powi(2);
                }
                sigma_sq_hat = sigma_sq_hat.max(dev_sq / NOISE_BATCHES as f64);
            }
        }
    }

    Ok(AssumptionConstants {
        l: l_hat,
        sigma: sigma_sq_hat.sqrt(),
        kappa: kappa_hat,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{dirichlet_partition, generate_synthetic};
    use rand::{RngExt, SeedableRng};

    fn small_dataset(num_classes: usize, dim: usize, per_class: usize) -> LabeledDataset {
        generate_synthetic(num_classes, dim, per_class, 2.0, 77).unwrap()
    }

    fn random_params(dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn zero_weights_loss_is_log_num_classes() {
        for classes in [2usize, 10] {
            let data = small_dataset(classes, 3, 8);
            let w = vec![0.0; model_dim(3, classes)];
            let all: Vec<usize> = (0..data.len()).collect();
            let value = loss(&w, &data, &all).unwrap();
            assert!(
                (value - (classes as f64).ln()).abs() < 1e-12,
                "zero-parameter loss {value} != ln {classes}"
            );
        }
    }

    #[test]
    fn loss_matches_scalar_reimplementation() {
        // Independent oracle: textbook cross-entropy with raw exponentials,
        // no shared code with the implementation under test.
        let data = small_dataset(3, 4, 5);
        let w = random_params(model_dim(4, 3), 5);
        let indices = [0usize, 3, 7, 9, 14];
        let mut expected = 0.0f64;
        for &idx in &indices {
            let mut exps = [0.0f64; 3];
            for (k, e) in exps.iter_mut().enumerate() {
                let mut z = w[k * 5 + 4];
                for j in 0..4 {
                    z += w[k * 5 + j] * data.features[[idx, j]];
                }
                *e = z.exp();
            }
            let total: f64 = exps.iter().sum();
            expected -= (exps[data.labels[idx]] / total).ln();
        }
        expected /= indices.len() as f64;
        let got = loss(&w, &data, &indices).unwrap();
        assert!(
            (got - expected).abs() < 1e-12,
            "loss {got} vs scalar oracle {expected}"
        );
    }

    #[test]
    fn loss_rejects_empty_subset_and_bad_index() {
        let data = small_dataset(2, 2, 4);
        let w = vec![0.0; model_dim(2, 2)];
        assert!(matches!(
            loss(&w, &data, &[]),
            Err(SimError::InvalidArgument(_))
        ));
        assert!(matches!(
            loss(&w, &data, &[999]),
            Err(SimError::InvalidArgument(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = small_dataset(4, 3, 6);
        let dim = model_dim(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..3 {
            let w = random_params(dim, 100 + trial);
            let batch: Vec<usize> = (0..data.len()).filter(|i| i % 3 == trial as usize).collect();
            let g = gradient(&w, &data, &batch).unwrap();
            let step = 1e-5;
            for _ in 0..20 {
                let coord = rng.random_range(0..dim);
                let mut plus = w.clone();
                let mut minus = w.clone();
                plus[coord] += step;
                minus[coord] -= step;
                let fd = (loss(&plus, &data, &batch).unwrap()
                    - loss(&minus, &data, &batch).unwrap())
                    / (2.0 * step);
                let denom = fd.abs().max(g[coord].abs()).max(1e-8);
                assert!(
                    (fd - g[coord]).abs() / denom < 1e-4,
                    "coordinate {coord}: analytic {} vs central difference {fd}",
                    g[coord]
                );
            }
        }
    }

    #[test]
    fn saturated_softmax_gradient_vanishes() {
        // One point classified with an enormous margin: the softmax
        // saturates and the residual underflows.
        let data = LabeledDataset {
            features: ndarray::arr2(&[[1.0, 0.0]]),
            labels: vec![0],
            num_classes: 2,
        };
        let w = vec![50.0, 0.0, 0.0, -50.0, 0.0, 0.0];
        let g = gradient(&w, &data, &[0]).unwrap();
        assert!(norm(&g) < 1e-6, "saturated gradient norm {}", norm(&g));
    }

    #[test]
    fn full_batch_gradient_is_mean_of_per_sample() {
        let data = small_dataset(3, 2, 4);
        let w = random_params(model_dim(2, 3), 21);
        let all: Vec<usize> = (0..data.len()).collect();
        let full = gradient(&w, &data, &all).unwrap();
        let mut mean = Array1::<f64>::zeros(w.len());
        for &idx in &all {
            mean = mean + gradient(&w, &data, &[idx]).unwrap();
        }
        mean.mapv_inplace(|v| v / all.len() as f64);
        for (a, b) in full.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_step_basics() {
        let w = vec![1.0];
        assert_eq!(sgd_step(&w, &[0.0], 0.1).unwrap(), vec![1.0]);
        let stepped = sgd_step(&w, &[1.0], 0.1).unwrap();
        assert!((stepped[0] - 0.9).abs() < 1e-15);
        assert!(matches!(
            sgd_step(&[1.0, 2.0], &[1.0], 0.1),
            Err(SimError::InvalidArgument(_))
        ));
        assert!(matches!(
            sgd_step(&[1.0], &[1.0], 0.0),
            Err(SimError::InvalidArgument(_))
        ));
    }

    #[test]
    fn two_steps_compose_linearly() {
        let w = random_params(6, 3);
        let g1 = random_params(6, 4);
        let g2 = random_params(6, 5);
        let two = sgd_step(&sgd_step(&w, &g1, 0.2).unwrap(), &g2, 0.05).unwrap();
        let summed: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| 0.2 * a + 0.05 * b).collect();
        let one = sgd_step(&w, &summed, 1.0).unwrap();
        for (a, b) in two.iter().zip(&one) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn minibatch_gradients_are_unbiased() {
        // The mean of many random mini-batch gradients at fixed w matches
        // the full-shard gradient to within the CLT margin 3*sigma/sqrt(n)
        // per coordinate.
        let data = small_dataset(2, 2, 30);
        let dim = model_dim(2, 2);
        let w = random_params(dim, 8);
        let all: Vec<usize> = (0..data.len()).collect();
        let full = gradient(&w, &data, &all).unwrap();

        let batch_size = 5;
        let draws = 10_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut pool = all.clone();
        let mut mean = Array1::<f64>::zeros(dim);
        let mut dev_sq = 0.0f64;
        for _ in 0..draws {
            pool.shuffle(&mut rng);
            let g = gradient(&w, &data, &pool[..batch_size]).unwrap();
            dev_sq += norm(&(&g - &full)).powi(2);
            mean = mean + g;
        }
        mean.mapv_inplace(|v| v / draws as f64);
        let sigma = (dev_sq / draws as f64).sqrt();
        let margin = 3.0 * sigma / (draws as f64).sqrt();
        for (m, f) in mean.iter().zip(full.iter()) {
            assert!(
                (m - f).abs() <= margin,
                "coordinate bias {} exceeds {margin}",
                (m - f).abs()
            );
        }
    }

    #[test]
    fn gradient_descent_at_estimated_smoothness_is_monotone() {
        let data = small_dataset(3, 3, 12);
        let plan = dirichlet_partition(&data.labels, 4, 10.0, 13).unwrap();
        let constants = estimate_constants(&data, &plan, 4, plan.min_shard_len(), 19).unwrap();
        assert!(constants.l > 0.0);
        let eta = 1.0 / constants.l;
        let all: Vec<usize> = (0..data.len()).collect();
        let mut w = random_params(model_dim(3, 3), 31);
        let mut prev = loss(&w, &data, &all).unwrap();
        for step in 0..200 {
            let g = gradient(&w, &data, &all).unwrap();
            w = sgd_step(&w, g.as_slice().unwrap(), eta).unwrap();
            let next = loss(&w, &data, &all).unwrap();
            assert!(
                next <= prev + 1e-12,
                "loss rose from {prev} to {next} at step {step}"
            );
            prev = next;
        }
    }

    #[test]
    fn single_client_kappa_is_zero() {
        let data = small_dataset(2, 2, 10);
        let plan = PartitionPlan::new(vec![(0..data.len()).collect()], data.len()).unwrap();
        let constants = estimate_constants(&data, &plan, 3, 4, 7).unwrap();
        assert_eq!(constants.kappa, 0.0);
    }

    #[test]
    fn full_shard_batches_have_zero_noise() {
        let data = small_dataset(2, 2, 10);
        let shards: Vec<Vec<usize>> = vec![(0..10).collect(), (10..20).collect()];
        let plan = PartitionPlan::new(shards, data.len()).unwrap();
        let constants = estimate_constants(&data, &plan, 3, 10, 7).unwrap();
        assert_eq!(constants.sigma, 0.0);
    }

    #[test]
    fn iid_split_has_small_non_iidness() {
        // Widely separated 2-class blobs split evenly across clients: every
        // client sees the same distribution, so the client-vs-global
        // gradient gap stays far below the smoothness scale at probe
        // radius 1. Shards must be large enough that the finite-sample
        // gap (which shrinks like 1/sqrt(shard size)) is visibly small.
        let data = generate_synthetic(2, 3, 400, 3.0, 77).unwrap();
        let clients = 4usize;
        let mut shards = vec![Vec::new(); clients];
        for idx in 0..data.len() {
            shards[idx % clients].push(idx);
        }
        let plan = PartitionPlan::new(shards, data.len()).unwrap();
        let constants = estimate_constants(&data, &plan, 5, plan.min_shard_len(), 3).unwrap();
        assert!(
            constants.kappa < 0.1 * constants.l,
            "kappa {} vs 0.1 * L = {}",
            constants.kappa,
            0.1 * constants.l
        );
    }

    #[test]
    fn estimate_constants_is_deterministic_and_validates() {
        let data = small_dataset(3, 2, 9);
        let plan = dirichlet_partition(&data.labels, 3, 1.0, 5).unwrap();
        let a = estimate_constants(&data, &plan, 4, 2, 99).unwrap();
        let b = estimate_constants(&data, &plan, 4, 2, 99).unwrap();
        assert_eq!(a.l, b.l);
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.kappa, b.kappa);
        assert!(a.sigma > 0.0, "sub-shard batches must show sampling noise");
        assert!(matches!(
            estimate_constants(&data, &plan, 1, 2, 0),
            Err(SimError::InvalidArgument(_))
        ));
        assert!(matches!(
            estimate_constants(&data, &plan, 3, 0, 0),
            Err(SimError::InvalidArgument(_))
        ));
        assert!(matches!(
            estimate_constants(&data, &plan, 3, 10_000, 0),
            Err(SimError::InvalidArgument(_))
        ));
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let data = small_dataset(2, 3, 50);
        let all: Vec<usize> = (0..data.len()).collect();
        let zero = vec![0.0; model_dim(3, 2)];
        // Ties at w = 0 resolve to class 0, so accuracy is the class-0
        // fraction.
        assert!((accuracy(&zero, &data, &all).unwrap() - 0.5).abs() < 1e-12);
        // A few GD steps on separated blobs should classify nearly
        // everything.
        let mut w = zero;
        for _ in 0..50 {
            let g = gradient(&w, &data, &all).unwrap();
            w = sgd_step(&w, g.as_slice().unwrap(), 0.5).unwrap();
        }
        assert!(accuracy(&w, &data, &all).unwrap() > 0.95);
    }
}
