//! Probabilistic flow tubes (PFTs): time-indexed Gaussian position models
//! of maneuvers, learned from sampled trajectories.
//!
//! The module covers the data pipeline (DTW alignment, fitting, clustering),
//! intent recognition over candidate tubes, Monte Carlo collision
//! probabilities between two vehicles and the offline risk tables used by
//! the intersection planner.
//!
//! All random draws are made from ChaCha8 streams whose seeds are derived
//! from a base seed and the absolute tube indices involved, so a table entry
//! and a direct call with the same arguments consume identical samples.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seed;

pub type Point = [f64; 2];
/// Row-major symmetric 2x2 matrix.
pub type Cov = [[f64; 2]; 2];

/// Default tube sampling period (6 Hz).
pub const DEFAULT_TIMESTEP: f64 = 1.0 / 6.0;
/// Diagonal regularization added to fitted covariances, in m².
pub const COV_EPSILON: f64 = 1e-6;
/// Default Monte Carlo sample count per time step.
pub const DEFAULT_SAMPLES: usize = 10_000;
/// Collision probabilities are treated as zero when the mean gap exceeds the
/// combined reach by this many standard deviations.
const CUTOFF_SIGMAS: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PftError {
    #[error("no trajectories given")]
    Empty,
    #[error("trajectory {0} has fewer than 2 points")]
    TooShort(usize),
    #[error("at least 2 trajectories are needed without an explicit covariance floor")]
    TooFewSamples,
    #[error("trajectories have different lengths")]
    LengthMismatch,
    #[error("means and covariances differ in length or are empty")]
    Shape,
    #[error("covariance at index {0} is not symmetric positive semi-definite")]
    NotPsd(usize),
    #[error("no candidate tubes")]
    NoCandidates,
    #[error("prior has {prior} entries for {candidates} candidates")]
    PriorArity { prior: usize, candidates: usize },
    #[error("index {index} outside tube of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("tube of length {len} does not cover {steps} steps")]
    TooShortForWindow { len: usize, steps: usize },
}

/// A probabilistic flow tube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pft {
    /// Seconds between consecutive indices.
    pub timestep: f64,
    pub means: Vec<Point>,
    pub covariances: Vec<Cov>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<Vec<f64>>,
    #[serde(default)]
    pub label: String,
}

impl Pft {
    pub fn new(
        timestep: f64,
        means: Vec<Point>,
        covariances: Vec<Cov>,
        label: impl Into<String>,
    ) -> Result<Self, PftError> {
        let pft = Pft {
            timestep,
            means,
            covariances,
            heading: None,
            label: label.into(),
        };
        pft.validate()?;
        Ok(pft)
    }

    pub fn validate(&self) -> Result<(), PftError> {
        if self.means.is_empty() || self.means.len() != self.covariances.len() {
            return Err(PftError::Shape);
        }
        if let Some(h) = &self.heading {
            if h.len() != self.means.len() {
                return Err(PftError::Shape);
            }
        }
        for (t, c) in self.covariances.iter().enumerate() {
            let tol = 1e-9;
            let sym = (c[0][1] - c[1][0]).abs() <= tol;
            let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            if !sym || c[0][0] < -tol || c[1][1] < -tol || det < -tol {
                return Err(PftError::NotPsd(t));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.timestep
    }

    /// Heading at index `t`: stored, or from finite differences of the mean
    /// path (looking further along when consecutive means coincide).
    pub fn heading_at(&self, t: usize) -> f64 {
        if let Some(h) = &self.heading {
            return h[t.min(h.len() - 1)];
        }
        let n = self.means.len();
        let t = t.min(n - 1);
        for span in 1..n {
            let a = self.means[t.saturating_sub(span)];
            let b = self.means[(t + span).min(n - 1)];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            if dx * dx + dy * dy > 1e-18 {
                return libm::atan2(dy, dx);
            }
        }
        0.0
    }

    /// Largest per-step variance along either axis.
    pub fn max_variance(&self) -> f64 {
        self.covariances
            .iter()
            .map(max_eigenvalue)
            .fold(0.0, f64::max)
    }

    /// A tube that stays at index `t` of this one for `len` steps.
    pub fn frozen(&self, t: usize, len: usize) -> Pft {
        let heading = self.heading_at(t);
        Pft {
            timestep: self.timestep,
            means: vec![self.means[t]; len],
            covariances: vec![self.covariances[t]; len],
            heading: Some(vec![heading; len]),
            label: self.label.clone(),
        }
    }

    /// Distance travelled along the mean path.
    pub fn path_length(&self) -> f64 {
        self.means.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

fn max_eigenvalue(c: &Cov) -> f64 {
    let tr = c[0][0] + c[1][1];
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0);
    tr / 2.0 + libm::sqrt(disc)
}

/// Lower Cholesky factor `[[a, 0], [b, c]]`, with the diagonal floored so
/// singular covariances still factor.
fn cholesky(c: &Cov) -> [f64; 3] {
    let a = libm::sqrt(c[0][0].max(COV_EPSILON));
    let b = c[0][1] / a;
    let cc = libm::sqrt((c[1][1] - b * b).max(COV_EPSILON));
    [a, b, cc]
}

/// Squared Mahalanobis distance of `p` from `(mean, cov)`.
pub fn mahalanobis2(p: Point, mean: Point, cov: &Cov) -> f64 {
    let [a, b, c] = cholesky(cov);
    let dx = p[0] - mean[0];
    let dy = p[1] - mean[1];
    // Solve L y = d.
    let y0 = dx / a;
    let y1 = (dy - b * y0) / c;
    y0 * y0 + y1 * y1
}

fn gaussian_log_pdf(p: Point, mean: Point, cov: &Cov) -> f64 {
    let [a, _, c] = cholesky(cov);
    -0.5 * mahalanobis2(p, mean, cov) - libm::log(a * c) - libm::log(2.0 * PI)
}

/// Classic dynamic time warping with Euclidean ground cost. Returns the total
/// cost and the warping path as `(index in a, index in b)` pairs.
pub fn dtw(a: &[Point], b: &[Point]) -> (f64, Vec<(usize, usize)>) {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return (f64::INFINITY, Vec::new());
    }
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = dist(a[i], b[j]);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(acc[(i - 1) * m + j - 1]);
                }
                if i > 0 {
                    best = best.min(acc[(i - 1) * m + j]);
                }
                if j > 0 {
                    best = best.min(acc[i * m + j - 1]);
                }
                best
            };
            acc[i * m + j] = d + prev;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let step = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        i = step.0;
        j = step.1;
        path.push(step);
    }
    path.reverse();
    (acc[n * m - 1], path)
}

/// DTW cost divided by the warping path length.
pub fn dtw_distance(a: &[Point], b: &[Point]) -> f64 {
    let (cost, path) = dtw(a, b);
    if path.is_empty() {
        f64::INFINITY
    } else {
        cost / path.len() as f64
    }
}

/// Linear resampling of a polyline (by index) to `len` points.
pub fn resample(traj: &[Point], len: usize) -> Vec<Point> {
    if len == 0 || traj.is_empty() {
        return Vec::new();
    }
    if len == 1 || traj.len() == 1 {
        return vec![traj[0]; len];
    }
    let scale = (traj.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|q| {
            let x = q as f64 * scale;
            let i = (libm::floor(x) as usize).min(traj.len() - 2);
            let f = x - i as f64;
            let (a, b) = (traj[i], traj[i + 1]);
            [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
        })
        .collect()
}

fn median(mut v: Vec<usize>) -> usize {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Aligns trajectories onto the medoid (the trajectory with least total DTW
/// cost to the others) and resamples them to `target_len`, by default the
/// median input length. Points of a trajectory matched to the same medoid
/// index are averaged.
pub fn dtw_align(
    trajectories: &[Vec<Point>],
    target_len: Option<usize>,
) -> Result<Vec<Vec<Point>>, PftError> {
    if trajectories.is_empty() {
        return Err(PftError::Empty);
    }
    for (i, t) in trajectories.iter().enumerate() {
        if t.len() < 2 {
            return Err(PftError::TooShort(i));
        }
    }
    let target = target_len.unwrap_or_else(|| median(trajectories.iter().map(Vec::len).collect()));
    let n = trajectories.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let c = dtw(&trajectories[i], &trajectories[j]).0;
            cost[i * n + j] = c;
            cost[j * n + i] = c;
        }
    }
    let medoid = (0..n)
        .map(|i| (i, cost[i * n..(i + 1) * n].iter().sum::<f64>()))
        .fold(
            (0, f64::INFINITY),
            |best, (i, c)| if c < best.1 { (i, c) } else { best },
        )
        .0;
    let reference = &trajectories[medoid];
    Ok(trajectories
        .iter()
        .map(|t| {
            let (_, path) = dtw(reference, t);
            let mut sum = vec![[0.0, 0.0]; reference.len()];
            let mut count = vec![0usize; reference.len()];
            for (r, q) in path {
                sum[r][0] += t[q][0];
                sum[r][1] += t[q][1];
                count[r] += 1;
            }
            let warped: Vec<Point> = sum
                .iter()
                .zip(&count)
                .map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64])
                .collect();
            resample(&warped, target)
        })
        .collect())
}

/// Fits a tube to aligned, equal-length trajectories: per-index sample mean
/// and sample covariance (divisor `N - 1`) plus [`COV_EPSILON`] on the
/// diagonal. A single trajectory needs `cov_floor`, used as its variance.
pub fn pft_fit(
    aligned: &[Vec<Point>],
    timestep: f64,
    cov_floor: Option<f64>,
    label: impl Into<String>,
) -> Result<Pft, PftError> {
    if aligned.is_empty() {
        return Err(PftError::Empty);
    }
    let len = aligned[0].len();
    if len == 0 {
        return Err(PftError::TooShort(0));
    }
    if aligned.iter().any(|t| t.len() != len) {
        return Err(PftError::LengthMismatch);
    }
    let n = aligned.len();
    if n < 2 && cov_floor.is_none() {
        return Err(PftError::TooFewSamples);
    }
    let mut means = Vec::with_capacity(len);
    let mut covariances = Vec::with_capacity(len);
    for t in 0..len {
        let mx = aligned.iter().map(|tr| tr[t][0]).sum::<f64>() / n as f64;
        let my = aligned.iter().map(|tr| tr[t][1]).sum::<f64>() / n as f64;
        let mut c = [[0.0; 2]; 2];
        if n >= 2 {
            for tr in aligned {
                let dx = tr[t][0] - mx;
                let dy = tr[t][1] - my;
                c[0][0] += dx * dx;
                c[0][1] += dx * dy;
                c[1][1] += dy * dy;
            }
            let d = (n - 1) as f64;
            c[0][0] /= d;
            c[0][1] /= d;
            c[1][1] /= d;
        }
        if let Some(floor) = cov_floor {
            c[0][0] = c[0][0].max(floor);
            c[1][1] = c[1][1].max(floor);
        }
        c[0][0] += COV_EPSILON;
        c[1][1] += COV_EPSILON;
        c[1][0] = c[0][1];
        means.push([mx, my]);
        covariances.push(c);
    }
    Pft::new(timestep, means, covariances, label)
}

/// Agglomerative average-linkage clustering on normalized DTW distance.
/// Clusters closer than `threshold` merge. When `variance_threshold` is
/// given, a cluster whose fitted tube exceeds it in some step is clustered
/// again with half the threshold.
pub fn cluster_trajectories(
    trajectories: &[Vec<Point>],
    threshold: f64,
    variance_threshold: Option<f64>,
) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..trajectories.len()).collect();
    let mut out = cluster_subset(trajectories, &all, threshold, variance_threshold);
    for c in &mut out {
        c.sort_unstable();
    }
    out.sort();
    out
}

fn cluster_subset(
    trajectories: &[Vec<Point>],
    subset: &[usize],
    threshold: f64,
    variance_threshold: Option<f64>,
) -> Vec<Vec<usize>> {
    let n = subset.len();
    if n == 0 {
        return Vec::new();
    }
    let mut d = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let v = dtw_distance(&trajectories[subset[a]], &trajectories[subset[b]]);
            d[a * n + b] = v;
            d[b * n + a] = v;
        }
    }
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|a| vec![a]).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let mut total = 0.0;
                for &a in &clusters[x] {
                    for &b in &clusters[y] {
                        total += d[a * n + b];
                    }
                }
                let avg = total / (clusters[x].len() * clusters[y].len()) as f64;
                if best.map_or(true, |(_, _, v)| avg < v) {
                    best = Some((x, y, avg));
                }
            }
        }
        match best {
            Some((x, y, v)) if v <= threshold => {
                let merged = clusters.remove(y);
                clusters[x].extend(merged);
            }
            _ => break,
        }
    }
    let mut out = Vec::new();
    for c in clusters {
        let members: Vec<usize> = c.iter().map(|&a| subset[a]).collect();
        let too_wide = match variance_threshold {
            Some(vt) if members.len() >= 2 && threshold > 1e-9 => {
                let group: Vec<Vec<Point>> =
                    members.iter().map(|&m| trajectories[m].clone()).collect();
                dtw_align(&group, None)
                    .ok()
                    .and_then(|al| pft_fit(&al, DEFAULT_TIMESTEP, None, "").ok())
                    .is_some_and(|p| p.max_variance() > vt)
            }
            _ => false,
        };
        if too_wide {
            out.extend(cluster_subset(
                trajectories,
                &members,
                threshold / 2.0,
                variance_threshold,
            ));
        } else {
            out.push(members);
        }
    }
    out
}

/// Least-squares polynomial extension of a prefix by `extra` points, one
/// polynomial in the index per coordinate.
pub fn extend_prefix(prefix: &[Point], extra: usize, degree: usize) -> Vec<Point> {
    let mut out = prefix.to_vec();
    if prefix.is_empty() || extra == 0 {
        return out;
    }
    let deg = degree.min(prefix.len() - 1);
    let coefs: Vec<Vec<f64>> = (0..2)
        .map(|axis| {
            let ys: Vec<f64> = prefix.iter().map(|p| p[axis]).collect();
            polyfit(&ys, deg)
        })
        .collect();
    for q in prefix.len()..prefix.len() + extra {
        let x = q as f64;
        let eval = |c: &[f64]| c.iter().rev().fold(0.0, |acc, &a| acc * x + a);
        out.push([eval(&coefs[0]), eval(&coefs[1])]);
    }
    out
}

/// Coefficients (lowest order first) of the least-squares polynomial through
/// `(i, ys[i])`, via the normal equations and Gaussian elimination.
fn polyfit(ys: &[f64], degree: usize) -> Vec<f64> {
    let m = degree + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    for (i, &y) in ys.iter().enumerate() {
        let x = i as f64;
        let mut pows = vec![1.0; 2 * m];
        for p in 1..2 * m {
            pows[p] = pows[p - 1] * x;
        }
        for r in 0..m {
            for c in 0..m {
                a[r][c] += pows[r + c];
            }
            a[r][m] += y * pows[r];
        }
    }
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&p, &q| {
                a[p][col]
                    .abs()
                    .partial_cmp(&a[q][col].abs())
                    .unwrap_or(core::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        a.swap(col, pivot);
        let d = a[col][col];
        if d.abs() < 1e-300 {
            continue;
        }
        for v in &mut a[col][col..=m] {
            *v /= d;
        }
        let pivot_row = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col {
                let f = row[col];
                for (v, p) in row[col..=m].iter_mut().zip(&pivot_row[col..=m]) {
                    *v -= f * p;
                }
            }
        }
    }
    a.iter().map(|row| row[m]).collect()
}

/// Posterior over candidate tubes given an observed prefix. Observation `t`
/// is associated with index `t` of each candidate (clamped to its last
/// index). Computed in log space.
pub fn intent_posterior(
    prior: &[f64],
    candidates: &[&Pft],
    prefix: &[Point],
) -> Result<Vec<f64>, PftError> {
    if candidates.is_empty() {
        return Err(PftError::NoCandidates);
    }
    if prior.len() != candidates.len() {
        return Err(PftError::PriorArity {
            prior: prior.len(),
            candidates: candidates.len(),
        });
    }
    let logs: Vec<f64> = prior
        .iter()
        .zip(candidates)
        .map(|(&p, c)| {
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let ll: f64 = prefix
                .iter()
                .enumerate()
                .map(|(t, &obs)| {
                    let idx = t.min(c.len() - 1);
                    gaussian_log_pdf(obs, c.means[idx], &c.covariances[idx])
                })
                .sum();
            libm::log(p) + ll
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Ok(prior.to_vec());
    }
    let w: Vec<f64> = logs.iter().map(|&l| libm::exp(l - top)).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Vehicle footprint approximated by three equal circles on the
/// longitudinal axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    pub length: f64,
    pub width: f64,
    /// Multiplier applied to the circle radius.
    pub safety: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        VehicleGeometry {
            length: 4.5,
            width: 1.8,
            safety: 1.0,
        }
    }
}

impl VehicleGeometry {
    pub fn radius(&self) -> f64 {
        self.width / 2.0 * core::f64::consts::SQRT_2 * self.safety
    }

    /// Longitudinal offsets of the circle centres from the vehicle centre.
    pub fn offsets(&self) -> [f64; 3] {
        let d = ((self.length - self.width) / 2.0).max(0.0);
        [-d, 0.0, d]
    }

    /// Distance from the centre to the farthest covered point.
    pub fn reach(&self) -> f64 {
        self.offsets()[2] + self.radius()
    }
}

/// Seed of the collision estimate for tube indices `(t1, t2)`.
pub fn cell_seed(base: u64, t1: usize, t2: usize) -> u64 {
    seed::derive(base, &[t1 as u64, t2 as u64])
}

/// Monte Carlo probability that the vehicles at index `t1` of `p1` and `t2`
/// of `p2` overlap, using `n` joint samples from a stream seeded by `seed`.
#[allow(clippy::too_many_arguments)]
pub fn collision_prob_at(
    p1: &Pft,
    t1: usize,
    p2: &Pft,
    t2: usize,
    g1: &VehicleGeometry,
    g2: &VehicleGeometry,
    n: usize,
    seed: u64,
) -> Result<f64, PftError> {
    if t1 >= p1.len() {
        return Err(PftError::IndexOutOfRange {
            index: t1,
            len: p1.len(),
        });
    }
    if t2 >= p2.len() {
        return Err(PftError::IndexOutOfRange {
            index: t2,
            len: p2.len(),
        });
    }
    let (m1, m2) = (p1.means[t1], p2.means[t2]);
    let (c1, c2) = (&p1.covariances[t1], &p2.covariances[t2]);
    let sigma = libm::sqrt(max_eigenvalue(c1).max(COV_EPSILON))
        + libm::sqrt(max_eigenvalue(c2).max(COV_EPSILON));
    let gap = dist(m1, m2) - g1.reach() - g2.reach();
    if gap > CUTOFF_SIGMAS * sigma || n == 0 {
        return Ok(0.0);
    }
    let (l1, l2) = (cholesky(c1), cholesky(c2));
    let (h1, h2) = (p1.heading_at(t1), p2.heading_at(t2));
    let (u1, u2) = (
        [libm::cos(h1), libm::sin(h1)],
        [libm::cos(h2), libm::sin(h2)],
    );
    let (o1, o2) = (g1.offsets(), g2.offsets());
    let limit = g1.radius() + g2.radius();
    let limit2 = limit * limit;
    let mut rng = seed::rng(seed);
    let mut hits = 0usize;
    for _ in 0..n {
        let z: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let x1 = [m1[0] + l1[0] * z[0], m1[1] + l1[1] * z[0] + l1[2] * z[1]];
        let x2 = [m2[0] + l2[0] * z[2], m2[1] + l2[1] * z[2] + l2[2] * z[3]];
        let mut hit = false;
        'pairs: for a in o1 {
            let ca = [x1[0] + a * u1[0], x1[1] + a * u1[1]];
            for b in o2 {
                let cb = [x2[0] + b * u2[0], x2[1] + b * u2[1]];
                let dx = ca[0] - cb[0];
                let dy = ca[1] - cb[1];
                if dx * dx + dy * dy <= limit2 {
                    hit = true;
                    break 'pairs;
                }
            }
        }
        hits += hit as usize;
    }
    Ok(hits as f64 / n as f64)
}

/// `1 - prod(1 - p_t)`: failure probability of independent steps.
pub fn risk_from_step_probs(probs: &[f64]) -> f64 {
    1.0 - probs.iter().fold(1.0, |acc, &p| acc * (1.0 - p))
}

/// Collision risk of two vehicles that start their tubes together, over
/// steps `t = 0..tau`.
#[allow(clippy::too_many_arguments)]
pub fn pairwise_risk(
    p1: &Pft,
    p2: &Pft,
    tau: usize,
    g1: &VehicleGeometry,
    g2: &VehicleGeometry,
    n: usize,
    seed: u64,
) -> Result<f64, PftError> {
    for p in [p1, p2] {
        if p.len() < tau {
            return Err(PftError::TooShortForWindow {
                len: p.len(),
                steps: tau,
            });
        }
    }
    let probs = (0..tau)
        .map(|t| collision_prob_at(p1, t, p2, t, g1, g2, n, cell_seed(seed, t, t)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(risk_from_step_probs(&probs))
}

/// Per-index-pair collision probabilities between two tubes, the building
/// block of every risk table involving them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionMatrix {
    pub rows: usize,
    pub cols: usize,
    pub probs: Vec<f64>,
}

impl CollisionMatrix {
    /// One row of the matrix: index `t1` of `p1` against every index of `p2`.
    #[allow(clippy::too_many_arguments)]
    pub fn row(
        p1: &Pft,
        t1: usize,
        p2: &Pft,
        g1: &VehicleGeometry,
        g2: &VehicleGeometry,
        n: usize,
        seed: u64,
    ) -> Vec<f64> {
        (0..p2.len())
            .map(|t2| {
                collision_prob_at(p1, t1, p2, t2, g1, g2, n, cell_seed(seed, t1, t2)).unwrap_or(0.0)
            })
            .collect()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        CollisionMatrix {
            rows: rows.len(),
            cols,
            probs: rows.into_iter().flatten().collect(),
        }
    }

    pub fn compute(
        p1: &Pft,
        p2: &Pft,
        g1: &VehicleGeometry,
        g2: &VehicleGeometry,
        n: usize,
        seed: u64,
    ) -> Self {
        Self::from_rows(
            (0..p1.len())
                .map(|t1| Self::row(p1, t1, p2, g1, g2, n, seed))
                .collect(),
        )
    }

    pub fn get(&self, t1: usize, t2: usize) -> f64 {
        self.probs[t1 * self.cols + t2]
    }

    pub fn transpose(&self) -> Self {
        let mut probs = vec![0.0; self.probs.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                probs[c * self.rows + r] = self.probs[r * self.cols + c];
            }
        }
        CollisionMatrix {
            rows: self.cols,
            cols: self.rows,
            probs,
        }
    }
}

/// Where a vehicle is on its tube during a risk window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motion {
    /// Holding at a fixed index.
    Frozen(usize),
    /// Advancing one index per step from the given start; past the end the
    /// vehicle has left and cannot collide.
    Moving(usize),
}

impl Motion {
    pub fn index(self, t: usize, len: usize) -> Option<usize> {
        match self {
            Motion::Frozen(i) => Some(i.min(len - 1)),
            Motion::Moving(s) => (s + t < len).then_some(s + t),
        }
    }
}

/// Risk over steps `0..steps` for two vehicles moving as described.
pub fn window_risk(m: &CollisionMatrix, a: Motion, b: Motion, steps: usize) -> f64 {
    let mut survive = 1.0;
    for t in 0..steps {
        match (a.index(t, m.rows), b.index(t, m.cols)) {
            (Some(i), Some(j)) => survive *= 1.0 - m.get(i, j),
            // A vehicle past the end of its tube has left the intersection.
            _ => break,
        }
    }
    1.0 - survive
}

/// Layout of one axis of a risk table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axis {
    /// Length of the maneuver's tube.
    pub tube_len: usize,
    /// Tube steps between consecutive progression indices.
    pub stride: usize,
}

impl Axis {
    /// Number of progression indices, `tau' + 1`: index 0 is waiting at the
    /// start of the tube; index `p >= 1` is executing from tube index
    /// `(p - 1) * stride`.
    pub fn size(&self) -> usize {
        (self.tube_len - 1) / self.stride + 2
    }

    pub fn motion(&self, p: usize) -> Motion {
        if p == 0 {
            Motion::Frozen(0)
        } else {
            Motion::Moving((p - 1) * self.stride)
        }
    }
}

/// Dense lookup from progression indices of the maneuvers at an interaction
/// point to the collision probability over the next `window` tube steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    pub maneuvers: Vec<String>,
    pub axes: Vec<Axis>,
    pub window: usize,
    pub seed: u64,
    pub samples: usize,
    pub values: Vec<f64>,
}

impl RiskTable {
    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::size).collect()
    }

    pub fn offset(&self, idx: &[usize]) -> Option<usize> {
        if idx.len() != self.axes.len() {
            return None;
        }
        let mut off = 0;
        for (&p, ax) in idx.iter().zip(&self.axes) {
            if p >= ax.size() {
                return None;
            }
            off = off * ax.size() + p;
        }
        Some(off)
    }

    pub fn get(&self, idx: &[usize]) -> Option<f64> {
        self.offset(idx).map(|o| self.values[o])
    }

    /// Builds the table from pairwise collision matrices. `matrix(a, b)`
    /// returns the matrix between maneuvers `a < b`, or `None` if their paths
    /// never come close. With more than two maneuvers, pairwise window risks
    /// are aggregated as `1 - prod(1 - r)`.
    pub fn from_matrices<'m>(
        maneuvers: Vec<String>,
        axes: Vec<Axis>,
        window: usize,
        seed: u64,
        samples: usize,
        matrix: impl Fn(usize, usize) -> Option<&'m CollisionMatrix>,
    ) -> Self {
        let dims: Vec<usize> = axes.iter().map(Axis::size).collect();
        let total: usize = dims.iter().product();
        let mut values = vec![0.0; total];
        let mut idx = vec![0usize; dims.len()];
        for v in values.iter_mut() {
            let mut survive = 1.0;
            for a in 0..axes.len() {
                for b in a + 1..axes.len() {
                    if let Some(m) = matrix(a, b) {
                        survive *= 1.0
                            - window_risk(
                                m,
                                axes[a].motion(idx[a]),
                                axes[b].motion(idx[b]),
                                window,
                            );
                    }
                }
            }
            *v = 1.0 - survive;
            for d in (0..dims.len()).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        RiskTable {
            maneuvers,
            axes,
            window,
            seed,
            samples,
            values,
        }
    }
}

/// Builds the risk table of an interaction point directly from its
/// maneuvers' tubes.
#[allow(clippy::too_many_arguments)]
pub fn precompute_risk_table(
    tubes: &[&Pft],
    geometry: &[VehicleGeometry],
    stride: usize,
    window: usize,
    samples: usize,
    seed: u64,
) -> RiskTable {
    let k = tubes.len();
    let mut matrices = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            matrices.push((
                (a, b),
                CollisionMatrix::compute(
                    tubes[a],
                    tubes[b],
                    &geometry[a],
                    &geometry[b],
                    samples,
                    seed,
                ),
            ));
        }
    }
    RiskTable::from_matrices(
        tubes.iter().map(|t| t.label.clone()).collect(),
        tubes
            .iter()
            .map(|t| Axis {
                tube_len: t.len(),
                stride,
            })
            .collect(),
        window,
        seed,
        samples,
        |a, b| {
            matrices
                .iter()
                .find(|(key, _)| *key == (a, b))
                .map(|(_, m)| m)
        },
    )
}

/// Parameters of the synthetic trajectory generator: a vehicle tracks a
/// nominal path with a PD controller on its lateral error, with randomly
/// perturbed gains, process noise and a small speed mismatch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingNoise {
    pub p_gain: (f64, f64),
    pub d_gain: (f64, f64),
    pub initial_offset_sd: f64,
    pub accel_noise_sd: f64,
    pub speed_scale_sd: f64,
    /// Samples whose lateral error ever exceeds this are discarded.
    pub max_error: f64,
}

impl Default for TrackingNoise {
    fn default() -> Self {
        TrackingNoise {
            p_gain: (0.4, 1.2),
            d_gain: (0.2, 0.8),
            initial_offset_sd: 0.15,
            accel_noise_sd: 0.3,
            speed_scale_sd: 0.02,
            max_error: 1.0,
        }
    }
}

/// Draws `count` noisy executions of a nominal path sampled every `dt`.
pub fn synthetic_trajectories(
    nominal: &[Point],
    dt: f64,
    count: usize,
    noise: &TrackingNoise,
    seed: u64,
) -> Vec<Vec<Point>> {
    let n = nominal.len();
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(count);
    let normal_at = |x: f64| -> (Point, Point) {
        let i = (libm::floor(x) as usize).min(n.saturating_sub(2));
        let f = (x - i as f64).clamp(0.0, 1.0);
        let (a, b) = (nominal[i], nominal[(i + 1).min(n - 1)]);
        let p = [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let norm = libm::hypot(dx, dy);
        let nrm = if norm > 1e-12 {
            [-dy / norm, dx / norm]
        } else {
            [0.0, 0.0]
        };
        (p, nrm)
    };
    let mut attempts = 0;
    while out.len() < count && attempts < count * 20 {
        attempts += 1;
        let kp = rng.random_range(noise.p_gain.0..=noise.p_gain.1);
        let kd = rng.random_range(noise.d_gain.0..=noise.d_gain.1);
        let scale = 1.0 + noise.speed_scale_sd * rng.sample::<f64, _>(StandardNormal);
        let mut e = noise.initial_offset_sd * rng.sample::<f64, _>(StandardNormal);
        let mut v = 0.0;
        let mut traj = Vec::with_capacity(n);
        let mut ok = true;
        for t in 0..n {
            let x = (t as f64 * scale).min((n - 1) as f64);
            let (p, nrm) = normal_at(x);
            traj.push([p[0] + e * nrm[0], p[1] + e * nrm[1]]);
            let acc =
                -kp * e - kd * v + noise.accel_noise_sd * rng.sample::<f64, _>(StandardNormal);
            v += acc * dt;
            e += v * dt;
            if e.abs() > noise.max_error {
                ok = false;
                break;
            }
        }
        if ok {
            out.push(traj);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, step: f64, y: f64) -> Vec<Point> {
        (0..n).map(|i| [i as f64 * step, y]).collect()
    }

    #[test]
    fn fit_constant_point() {
        let p = pft_fit(&[vec![[1.0, 2.0]; 3], vec![[1.0, 2.0]; 3]], 0.5, None, "c").unwrap();
        assert_eq!(p.means[1], [1.0, 2.0]);
        assert_eq!(p.covariances[1], [[COV_EPSILON, 0.0], [0.0, COV_EPSILON]]);
    }

    #[test]
    fn fit_two_points() {
        let p = pft_fit(&[vec![[1.0, 0.0]], vec![[-1.0, 0.0]]], 0.5, None, "").unwrap();
        assert_eq!(p.means[0], [0.0, 0.0]);
        assert!((p.covariances[0][0][0] - (2.0 + COV_EPSILON)).abs() < 1e-15);
        assert!(matches!(
            pft_fit(&[vec![[0.0, 0.0]]], 0.5, None, ""),
            Err(PftError::TooFewSamples)
        ));
        assert!(pft_fit(&[vec![[0.0, 0.0]]], 0.5, Some(0.01), "").is_ok());
    }

    #[test]
    fn dtw_identical_and_double_rate() {
        let a = line(11, 1.0, 0.0);
        let aligned = dtw_align(&[a.clone(), a.clone()], None).unwrap();
        assert_eq!(aligned[0], a);
        assert_eq!(aligned[1], a);

        let b = line(21, 0.5, 0.0);
        let aligned = dtw_align(&[a.clone(), b], Some(11)).unwrap();
        for (p, q) in aligned[0].iter().zip(&aligned[1]) {
            assert!(dist(*p, *q) <= 0.5 + 1e-12, "{p:?} {q:?}");
        }
        assert_eq!(dtw_align(&[], None), Err(PftError::Empty));
        assert_eq!(
            dtw_align(&[vec![[0.0, 0.0]]], None),
            Err(PftError::TooShort(0))
        );
    }

    #[test]
    fn clustering_separates_bundles() {
        let mut trajs = Vec::new();
        for k in 0..4 {
            trajs.push(line(10, 1.0, k as f64 * 0.05));
            trajs.push(line(10, 1.0, 50.0 + k as f64 * 0.05));
        }
        let c = cluster_trajectories(&trajs, 1.0, None);
        assert_eq!(c, vec![vec![0, 2, 4, 6], vec![1, 3, 5, 7]]);
        assert_eq!(cluster_trajectories(&trajs, f64::INFINITY, None).len(), 1);
        // A huge variance forces re-clustering of the merged bundle.
        assert_eq!(cluster_trajectories(&trajs, 1000.0, Some(1.0)).len(), 2);
    }

    #[test]
    fn posterior_basics() {
        let a = pft_fit(&[line(10, 1.0, 0.1), line(10, 1.0, -0.1)], 0.5, None, "a").unwrap();
        let b = pft_fit(&[line(10, 1.0, 5.1), line(10, 1.0, 4.9)], 0.5, None, "b").unwrap();
        assert_eq!(
            intent_posterior(&[0.3, 0.7], &[&a, &b], &[]).unwrap(),
            vec![0.3, 0.7]
        );
        let post = intent_posterior(&[0.5, 0.5], &[&a, &b], &a.means).unwrap();
        assert!(post[0] >= 0.99);
        let same = intent_posterior(&[0.25, 0.75], &[&a, &a], &b.means).unwrap();
        assert!((same[0] - 0.25).abs() < 1e-12);
        assert!(intent_posterior(&[], &[], &[]).is_err());
    }

    #[test]
    fn step_formula() {
        assert!((risk_from_step_probs(&[0.1, 0.1]) - 0.19).abs() < 1e-15);
        assert_eq!(risk_from_step_probs(&[0.3, 1.0]), 1.0);
        assert_eq!(risk_from_step_probs(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn collision_extremes() {
        let tiny = [[1e-6, 0.0], [0.0, 1e-6]];
        let p = Pft::new(0.5, vec![[0.0, 0.0]], vec![tiny], "p").unwrap();
        let q = Pft::new(0.5, vec![[1000.0, 0.0]], vec![tiny], "q").unwrap();
        let g = VehicleGeometry::default();
        assert_eq!(
            collision_prob_at(&p, 0, &q, 0, &g, &g, 1000, 1).unwrap(),
            0.0
        );
        assert_eq!(
            collision_prob_at(&p, 0, &p, 0, &g, &g, 1000, 1).unwrap(),
            1.0
        );
        assert!(collision_prob_at(&p, 1, &p, 0, &g, &g, 10, 1).is_err());
    }

    #[test]
    fn extension_follows_a_parabola() {
        let prefix: Vec<Point> = (0..5).map(|i| [i as f64, (i * i) as f64]).collect();
        let ext = extend_prefix(&prefix, 2, 2);
        assert!((ext[6][0] - 6.0).abs() < 1e-9);
        assert!((ext[6][1] - 36.0).abs() < 1e-9);
    }

    #[test]
    fn table_dimensions() {
        let ax = Axis {
            tube_len: 10,
            stride: 1,
        };
        assert_eq!(ax.size(), 11);
        let table = RiskTable::from_matrices(
            vec!["a".into(), "b".into()],
            vec![ax, ax],
            3,
            0,
            1,
            |_, _| None,
        );
        assert_eq!(table.values.len(), 121);
        assert!(table.values.iter().all(|&v| v == 0.0));
        assert_eq!(table.offset(&[10, 10]), Some(120));
        assert_eq!(table.offset(&[11, 0]), None);
    }
}
