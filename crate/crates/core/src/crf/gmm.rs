use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Vec3;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const MAX_EM_ITERATIONS: usize = 200;
pub const EM_TOLERANCE: f64 = 1e-6;

const KMEANS_ITERATIONS: usize = 50;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Mixture of axis-aligned Gaussians over 3-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGmm {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 3]>,
    pub variances: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: DiagGmm,
    /// Total data log-likelihood after each EM iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl DiagGmm {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(Error::invalid("mixture arrays must be non-empty and of equal length"));
        }
        crate::scene::check_simplex(&self.weights, "mixture weights")?;
        if self.variances.iter().flatten().any(|v| !(*v >= VARIANCE_FLOOR * (1.0 - 1e-9)) || !v.is_finite()) {
            return Err(Error::invalid("mixture variances must be finite and above the floor"));
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        Ok(())
    }

    /// Precomputes per-component constants for repeated evaluation.
    pub fn compile(&self) -> CompiledGmm {
        CompiledGmm::new(self)
    }

    pub fn log_density(&self, x: &Vec3) -> f64 {
        self.compile().log_density(x)
    }

    /// `ln p(x)` and its gradient with respect to `x`.
    pub fn log_density_grad(&self, x: &Vec3) -> (f64, Vec3) {
        self.compile().log_density_grad(x)
    }
}

/// Per-component constants for repeated density evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledGmm {
    offsets: Vec<f64>,
    means: Vec<Vec3>,
    inv_var: Vec<Vec3>,
}

impl CompiledGmm {
    pub fn new(model: &DiagGmm) -> Self {
        let k = model.components();
        let mut offsets = Vec::with_capacity(k);
        let mut inv_var = Vec::with_capacity(k);
        for c in 0..k {
            let v = model.variances[c];
            offsets.push(model.weights[c].ln() - 0.5 * (3.0 * LN_2PI + v[0].ln() + v[1].ln() + v[2].ln()));
            inv_var.push(Vec3::new(1.0 / v[0], 1.0 / v[1], 1.0 / v[2]));
        }
        Self { offsets, means: model.means.iter().map(|m| Vec3::from(*m)).collect(), inv_var }
    }

    /// `ln w_k + ln N(x; mu_k, diag var_k)` per component.
    fn log_densities(&self, x: &Vec3, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let r = x - self.means[c];
            *o = self.offsets[c] - 0.5 * r.component_mul(&r).dot(&self.inv_var[c]);
        }
    }

    pub fn log_density(&self, x: &Vec3) -> f64 {
        let mut buf = [0.0; 16];
        let mut heap;
        let logs: &mut [f64] = if self.offsets.len() <= 16 {
            &mut buf[..self.offsets.len()]
        } else {
            heap = vec![0.0; self.offsets.len()];
            &mut heap
        };
        self.log_densities(x, logs);
        log_sum_exp(logs)
    }

    pub fn log_density_grad(&self, x: &Vec3) -> (f64, Vec3) {
        let mut logs = vec![0.0; self.offsets.len()];
        self.log_densities(x, &mut logs);
        let total = log_sum_exp(&logs);
        let mut grad = Vec3::zeros();
        if total.is_finite() {
            for (c, l) in logs.iter().enumerate() {
                let r = (l - total).exp();
                grad -= (x - self.means[c]).component_mul(&self.inv_var[c]) * r;
            }
        }
        (total, grad)
    }
}

fn sq_dist(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm_squared()
}

/// Euclidean k-means with farthest-point seeding after a random first center.
fn kmeans(data: &[Vec3], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut centers = vec![data[rng.random_range(0..data.len())]];
    while centers.len() < k {
        let far = data
            .iter()
            .enumerate()
            .map(|(i, x)| (i, centers.iter().map(|c| sq_dist(x, c)).fold(f64::INFINITY, f64::min)))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        centers.push(data[far.0]);
    }
    let mut assign = vec![0usize; data.len()];
    for _ in 0..KMEANS_ITERATIONS {
        let mut changed = false;
        for (i, x) in data.iter().enumerate() {
            let mut best = 0;
            for c in 1..k {
                if sq_dist(x, &centers[c]) < sq_dist(x, &centers[best]) {
                    best = c;
                }
            }
            changed |= assign[i] != best;
            assign[i] = best;
        }
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&assign) {
            sums[a] += x;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    assign
}

/// Closed-form M-step from row-major responsibilities `resp[i * k + c]`.
fn m_step(data: &[Vec3], resp: &[f64], previous: Option<&DiagGmm>, k: usize) -> DiagGmm {
    let mut nk = vec![0.0; k];
    let mut sums = vec![Vec3::zeros(); k];
    for (x, r) in data.iter().zip(resp.chunks_exact(k)) {
        for c in 0..k {
            nk[c] += r[c];
            sums[c] += x * r[c];
        }
    }
    let means: Vec<Vec3> = (0..k).map(|c| if nk[c] > 1e-300 { sums[c] / nk[c] } else { Vec3::zeros() }).collect();
    let mut sq = vec![Vec3::zeros(); k];
    for (x, r) in data.iter().zip(resp.chunks_exact(k)) {
        for c in 0..k {
            let d = x - means[c];
            sq[c] += d.component_mul(&d) * r[c];
        }
    }
    let n = data.len() as f64;
    let mut model =
        DiagGmm { weights: Vec::with_capacity(k), means: Vec::with_capacity(k), variances: Vec::with_capacity(k) };
    for c in 0..k {
        if nk[c] <= 1e-300 {
            // dead component keeps its parameters with zero weight
            model.weights.push(0.0);
            model.means.push(previous.map_or([0.0; 3], |p| p.means[c]));
            model.variances.push(previous.map_or([1.0; 3], |p| p.variances[c]));
            continue;
        }
        let var = sq[c] / nk[c];
        model.weights.push(nk[c] / n);
        model.means.push([means[c].x, means[c].y, means[c].z]);
        model.variances.push([var.x.max(VARIANCE_FLOOR), var.y.max(VARIANCE_FLOOR), var.z.max(VARIANCE_FLOOR)]);
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
    model
}

/// EM fit of a `components`-mixture, initialized from k-means; deterministic given `seed`.
pub fn fit_gmm(data: &[Vec3], components: usize, seed: u64) -> Result<GmmFit> {
    if components == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if data.len() < components {
        return Err(Error::InsufficientSamples { needed: components, got: data.len() });
    }
    if data.iter().any(|x| !x.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid("mixture data must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assign = kmeans(data, components, &mut rng);
    let k = components;
    let mut resp = vec![0.0; data.len() * k];
    for (i, &a) in assign.iter().enumerate() {
        resp[i * k + a] = 1.0;
    }
    let mut model = m_step(data, &resp, None, k);
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_EM_ITERATIONS {
        let mut ll = 0.0;
        let compiled = model.compile();
        for (x, r) in data.iter().zip(resp.chunks_exact_mut(k)) {
            compiled.log_densities(x, r);
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            r.iter_mut().for_each(|l| *l = (*l - max).exp());
            let sum: f64 = r.iter().sum();
            ll += max + sum.ln();
            r.iter_mut().for_each(|p| *p /= sum);
        }
        if let Some(&prev) = history.last() {
            if ll - prev < EM_TOLERANCE {
                history.push(ll);
                break;
            }
        }
        history.push(ll);
        model = m_step(data, &resp, Some(&model), k);
        iterations += 1;
    }
    Ok(GmmFit { model, log_likelihood: history, iterations })
}
