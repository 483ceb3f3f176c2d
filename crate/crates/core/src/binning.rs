//! Rotation and direction codebooks.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{check_symmetry_order, geodesic_angle, rotation_from_wxyz, rotation_to_wxyz, yaw, Rotation, Vec3};

/// Matching tolerance (radians) when searching a codebook for a composed rotation.
pub const BIN_MATCH_TOL: f64 = 1e-6;

const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    FixedGrid,
    Clustered,
    Loaded,
}

/// Codebook of rotation bins.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationBinTable {
    bins: Vec<Rotation>,
    matrices: Vec<Matrix3<f64>>,
    provenance: Provenance,
}

impl RotationBinTable {
    pub fn new(bins: Vec<Rotation>, provenance: Provenance) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::invalid("empty rotation codebook"));
        }
        for i in 0..bins.len() {
            for j in 0..i {
                if geodesic_angle(&bins[i], &bins[j]) <= 1e-9 {
                    return Err(Error::invalid(format!("rotation bins {j} and {i} coincide")));
                }
            }
        }
        let matrices = bins.iter().map(|q| q.to_rotation_matrix().into_inner()).collect();
        Ok(Self { bins, matrices, provenance })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bins(&self) -> &[Rotation] {
        &self.bins
    }

    pub fn bin(&self, i: usize) -> &Rotation {
        &self.bins[i]
    }

    pub fn matrix(&self, i: usize) -> &Matrix3<f64> {
        &self.matrices[i]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Bin with the smallest geodesic distance to `q` (lowest index on ties).
    pub fn nearest_bin(&self, q: &Rotation) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, b) in self.bins.iter().enumerate() {
            let d = geodesic_angle(b, q);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Bin matching `q` within [`BIN_MATCH_TOL`], if any.
    pub fn find(&self, q: &Rotation) -> Option<usize> {
        self.bins.iter().position(|b| geodesic_angle(b, q) <= BIN_MATCH_TOL)
    }

    pub fn to_json(&self) -> Vec<[f64; 4]> {
        self.bins.iter().map(rotation_to_wxyz).collect()
    }

    pub fn from_json(raw: &[[f64; 4]]) -> Result<Self> {
        let bins = raw.iter().map(|q| rotation_from_wxyz(*q)).collect::<Result<Vec<_>>>()?;
        Self::new(bins, Provenance::Loaded)
    }
}

/// Codebook of unit direction vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionBinTable {
    bins: Vec<Vec3>,
    provenance: Provenance,
}

impl DirectionBinTable {
    /// Normalizes every vector; rejects zero vectors and duplicates.
    pub fn new(bins: Vec<Vec3>, provenance: Provenance) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::invalid("empty direction codebook"));
        }
        let mut unit = Vec::with_capacity(bins.len());
        for b in bins {
            let n = b.norm();
            if !n.is_finite() || n < 1e-12 {
                return Err(Error::invalid(format!("direction bin {b:?} has zero length")));
            }
            unit.push(b / n);
        }
        for i in 0..unit.len() {
            for j in 0..i {
                if unit[i].dot(&unit[j]) >= 1.0 - 1e-12 {
                    return Err(Error::invalid(format!("direction bins {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { bins: unit, provenance })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bins(&self) -> &[Vec3] {
        &self.bins
    }

    pub fn bin(&self, i: usize) -> &Vec3 {
        &self.bins[i]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn to_json(&self) -> Vec<[f64; 3]> {
        self.bins.iter().map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn from_json(raw: &[[f64; 3]]) -> Result<Self> {
        Self::new(raw.iter().map(|v| Vec3::from(*v)).collect(), Provenance::Loaded)
    }
}

/// The pair of codebooks every fusion run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebooks {
    pub rotation: RotationBinTable,
    pub direction: DirectionBinTable,
}

impl Default for Codebooks {
    fn default() -> Self {
        Self { rotation: default_rotation_codebook(), direction: default_direction_codebook() }
    }
}

/// 24 yaw rotations at 15 degree steps, bin 0 = identity.
pub fn default_rotation_codebook() -> RotationBinTable {
    let bins = (0..24).map(|i| yaw((15.0 * i as f64).to_radians())).collect();
    RotationBinTable::new(bins, Provenance::FixedGrid).expect("yaw grid is valid")
}

/// 8 azimuths (45 degree steps) times elevations -30, 0 and +30 degrees, in the object frame.
///
/// Azimuth 0 is the object front (+z); positive elevation points up (-y).
pub fn default_direction_codebook() -> DirectionBinTable {
    let mut bins = Vec::with_capacity(24);
    for elevation in [-30.0_f64, 0.0, 30.0] {
        let el = elevation.to_radians();
        for a in 0..8 {
            let az = (45.0 * a as f64).to_radians();
            bins.push(Vec3::new(el.cos() * az.sin(), -el.sin(), el.cos() * az.cos()));
        }
    }
    DirectionBinTable::new(bins, Provenance::FixedGrid).expect("direction grid is valid")
}

/// Bin index with maximal cosine to `v` (lowest index on ties).
pub fn quantize_direction(v: &Vec3, table: &DirectionBinTable) -> Result<usize> {
    let n = v.norm();
    if !n.is_finite() || n < 1e-12 {
        return Err(Error::DegenerateDirection);
    }
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (i, b) in table.bins().iter().enumerate() {
        let d = b.dot(v);
        if d > best_dot {
            best = i;
            best_dot = d;
        }
    }
    Ok(best)
}

/// All bins reachable from `bin` by composing with the yaw symmetry group of the given
/// order, sorted ascending.
pub fn symmetry_equivalent_bins(bin: usize, symmetry_order: u8, table: &RotationBinTable) -> Result<Vec<usize>> {
    check_symmetry_order(symmetry_order)?;
    if bin >= table.len() {
        return Err(Error::invalid(format!("bin {bin} out of range for {} bins", table.len())));
    }
    let mut out = Vec::with_capacity(symmetry_order as usize);
    for k in 0..symmetry_order {
        let g = yaw(std::f64::consts::TAU * f64::from(k) / f64::from(symmetry_order));
        let target = table.bin(bin) * g;
        let found = table.find(&target).ok_or_else(|| {
            Error::IncompatibleCodebook(format!(
                "bin {bin} composed with symmetry element {k}/{symmetry_order} is not in the table"
            ))
        })?;
        out.push(found);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Result of spherical k-means, with the objective after every centroid update.
#[derive(Debug, Clone)]
pub struct SphericalKMeans {
    pub centroids: Vec<Vec3>,
    pub assignments: Vec<usize>,
    /// Sum over samples of the cosine to the assigned centroid.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

fn assign(samples: &[Vec3], centroids: &[Vec3], out: &mut [usize]) -> bool {
    let mut changed = false;
    for (s, a) in samples.iter().zip(out.iter_mut()) {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = c.dot(s);
            if d > best_dot {
                best = j;
                best_dot = d;
            }
        }
        if *a != best {
            *a = best;
            changed = true;
        }
    }
    changed
}

fn objective(samples: &[Vec3], centroids: &[Vec3], assignments: &[usize]) -> f64 {
    samples.iter().zip(assignments).map(|(s, &a)| s.dot(&centroids[a])).sum()
}

/// Spherical k-means with cosine similarity.
///
/// The first centroid is a seeded random sample, the rest are chosen by farthest-point
/// traversal. Empty clusters are reseeded with the sample least similar to its centroid.
pub fn spherical_kmeans(samples: &[Vec3], k: usize, seed: u64) -> Result<SphericalKMeans> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let distinct = count_distinct(samples);
    if distinct < k {
        return Err(Error::InsufficientSamples { needed: k, got: distinct });
    }
    let samples: Vec<Vec3> = samples.iter().map(|s| s.normalize()).collect();
    if samples.iter().any(|s| !s.iter().all(|v| v.is_finite())) {
        return Err(Error::DegenerateDirection);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![samples[rng.random_range(0..samples.len())]];
    let mut best_sim: Vec<f64> = samples.iter().map(|s| s.dot(&centroids[0])).collect();
    while centroids.len() < k {
        let far = crate::scene::argmin(&best_sim);
        let c = samples[far];
        for (b, s) in best_sim.iter_mut().zip(&samples) {
            *b = b.max(s.dot(&c));
        }
        centroids.push(c);
    }

    let mut assignments = vec![usize::MAX; samples.len()];
    assign(&samples, &centroids, &mut assignments);
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..KMEANS_MAX_ITERS {
        iterations += 1;
        let mut sums = vec![Vec3::zeros(); k];
        for (s, &a) in samples.iter().zip(&assignments) {
            sums[a] += s;
        }
        for (j, sum) in sums.iter().enumerate() {
            let n = sum.norm();
            if n > 1e-12 {
                centroids[j] = sum / n;
            } else {
                // reseed with the worst-fit sample
                let sims: Vec<f64> = samples.iter().zip(&assignments).map(|(s, &a)| s.dot(&centroids[a])).collect();
                let worst = crate::scene::argmin(&sims);
                centroids[j] = samples[worst];
                assignments[worst] = j;
            }
        }
        history.push(objective(&samples, &centroids, &assignments));
        if !assign(&samples, &centroids, &mut assignments) {
            break;
        }
    }
    Ok(SphericalKMeans { centroids, assignments, objective_history: history, iterations })
}

fn count_distinct(samples: &[Vec3]) -> usize {
    let mut keys: Vec<[u64; 3]> = samples.iter().map(|s| [s.x.to_bits(), s.y.to_bits(), s.z.to_bits()]).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Clusters sampled unit directions into a `k`-bin codebook.
pub fn build_direction_codebook(samples: &[Vec3], k: usize, seed: u64) -> Result<DirectionBinTable> {
    let km = spherical_kmeans(samples, k, seed)?;
    DirectionBinTable::new(km.centroids, Provenance::Clustered)
}
