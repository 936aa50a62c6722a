//! Latent-space separation analysis: cosine-similarity matrices, robust
//! multidimensional scaling, outlier-trimmed PCA, the Gaussian-mixture
//! overlap measure and 2D/3D projection export.
//!
//! The MDS is SMACOF-style majorization of weighted normalized stress with
//! optional monotone (isotonic) disparities and Huber reweighting. The
//! robust PCA follows a trim-and-recompute scheme: rank points by a
//! median-centered outlyingness, drop the worst fraction, recompute the
//! basis classically on the rest. Overlap fits one Gaussian per class and
//! estimates misclassification probabilities by seeded Monte Carlo.

#![allow(clippy::needless_range_loop)] // index loops mirror the math

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("rank deficiency: {0}")]
    Rank(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Cosine similarity
// ---------------------------------------------------------------------------

/// Split rows into (kept, dropped-indices) where dropped rows have
/// (near-)zero norm and would make cosine similarity undefined.
pub fn filter_zero_norm(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut kept = Vec::with_capacity(rows.len());
    let mut dropped = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let norm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            dropped.push(i);
        } else {
            kept.push(r.clone());
        }
    }
    (kept, dropped)
}

/// Pairwise cosine similarities; symmetric with unit diagonal.
pub fn cosine_similarity_matrix(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DiagError> {
    let n = rows.len();
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&v| v <= 1e-12) {
        return Err(DiagError::Contract(format!(
            "row {i} has zero norm; filter rows first"
        )));
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        out[i][i] = 1.0;
        for j in (i + 1)..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let s = dot / (norms[i] * norms[j]);
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Multidimensional scaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdsOptions {
    pub dims: usize,
    /// Replace disparities by the isotonic regression of the input order
    /// onto current distances (nonmetric scaling).
    pub monotone: bool,
    /// Downweight large residuals with Huber weights.
    pub huber: bool,
    pub huber_c: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Huber weights are refreshed every this many iterations...
    pub reweight_every: usize,
    /// ...until this iteration, after which they freeze so the recorded
    /// stress trace settles into a single monotone descent.
    pub reweight_until: usize,
}

impl Default for MdsOptions {
    fn default() -> Self {
        MdsOptions {
            dims: 2,
            monotone: false,
            huber: false,
            huber_c: 1.345,
            max_iterations: 500,
            tolerance: 1e-8,
            seed: 42,
            reweight_every: 5,
            reweight_until: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionResult {
    /// n x dims embedding, centered per column.
    pub coordinates: Vec<Vec<f64>>,
    /// Final normalized stress: sum w (d - disparity)^2 / sum w disparity^2.
    pub stress: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Stress after every majorization step.
    pub stress_trace: Vec<f64>,
}

/// Run MDS on a similarity matrix, embedding dissimilarity `1 - s`.
pub fn robust_mds_from_similarities(
    similarities: &[Vec<f64>],
    options: &MdsOptions,
) -> Result<ProjectionResult, DiagError> {
    let delta: Vec<Vec<f64>> = similarities
        .iter()
        .map(|row| row.iter().map(|s| 1.0 - s).collect())
        .collect();
    robust_mds(&delta, options)
}

/// SMACOF majorization over a dissimilarity matrix.
pub fn robust_mds(
    dissimilarities: &[Vec<f64>],
    options: &MdsOptions,
) -> Result<ProjectionResult, DiagError> {
    let n = dissimilarities.len();
    if n < 3 {
        return Err(DiagError::Contract("need at least 3 points".into()));
    }
    for (i, row) in dissimilarities.iter().enumerate() {
        if row.len() != n {
            return Err(DiagError::Contract("dissimilarity matrix must be square".into()));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(DiagError::Numeric(format!("non-finite dissimilarity at ({i}, {j})")));
            }
        }
    }
    let dims = options.dims;
    let delta = dissimilarities;

    let mut coords = classical_scaling_init(delta, dims, options.seed);
    center_columns(&mut coords);

    let mut weights = vec![vec![1.0; n]; n];
    let mut disparities: Vec<Vec<f64>> = delta.to_vec();
    let mut vplus = VPlus::unit();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut prev_stress = f64::INFINITY;

    for it in 1..=options.max_iterations {
        iterations = it;
        let distances = pairwise_distances(&coords);
        if options.monotone {
            disparities = isotonic_disparities(delta, &distances, &weights);
        }
        if options.huber
            && it > 1
            && it <= options.reweight_until
            && (it - 1) % options.reweight_every == 0
        {
            weights = huber_weights(&distances, &disparities, options.huber_c);
            vplus = VPlus::from_weights(&weights)?;
            prev_stress = f64::INFINITY; // new weighting, new descent baseline
        }
        coords = guttman_step(&coords, &distances, &disparities, &weights, &vplus);
        center_columns(&mut coords);
        let distances = pairwise_distances(&coords);
        let stress = normalized_stress(&distances, &disparities, &weights);
        trace.push(stress);
        if prev_stress.is_finite() && prev_stress - stress < options.tolerance {
            converged = true;
            break;
        }
        prev_stress = stress;
    }
    let stress = *trace.last().expect("at least one iteration");
    Ok(ProjectionResult {
        coordinates: coords,
        stress,
        iterations,
        converged,
        stress_trace: trace,
    })
}

/// Torgerson classical scaling plus a small seeded jitter.
fn classical_scaling_init(delta: &[Vec<f64>], dims: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = delta.len();
    let mut b = DMatrix::<f64>::zeros(n, n);
    // double-center the squared dissimilarities
    let sq = |i: usize, j: usize| delta[i][j] * delta[i][j];
    let mut row_means = vec![0.0; n];
    let mut grand = 0.0;
    for i in 0..n {
        for j in 0..n {
            row_means[i] += sq(i, j);
            grand += sq(i, j);
        }
        row_means[i] /= n as f64;
    }
    grand /= (n * n) as f64;
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = -0.5 * (sq(i, j) - row_means[i] - row_means[j] + grand);
        }
    }
    let eig = nalgebra::SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| {
        eig.eigenvalues[c]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut coords = vec![vec![0.0; dims]; n];
    let mut scale = 0.0;
    for (d, &k) in order.iter().take(dims).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        let s = lambda.sqrt();
        for i in 0..n {
            coords[i][d] = eig.eigenvectors[(i, k)] * s;
            scale = f64::max(scale, coords[i][d].abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = 1e-6 * scale.max(1e-6);
    for row in coords.iter_mut() {
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += jitter * z;
        }
    }
    coords
}

fn center_columns(coords: &mut [Vec<f64>]) {
    if coords.is_empty() {
        return;
    }
    let n = coords.len() as f64;
    let dims = coords[0].len();
    for d in 0..dims {
        let mean: f64 = coords.iter().map(|r| r[d]).sum::<f64>() / n;
        for row in coords.iter_mut() {
            row[d] -= mean;
        }
    }
}

fn pairwise_distances(coords: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = coords.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = coords[i]
                .iter()
                .zip(&coords[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    out
}

fn normalized_stress(distances: &[Vec<f64>], disparities: &[Vec<f64>], weights: &[Vec<f64>]) -> f64 {
    let n = distances.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let r = distances[i][j] - disparities[i][j];
            num += weights[i][j] * r * r;
            den += weights[i][j] * disparities[i][j] * disparities[i][j];
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Weighted Guttman transform X+ = V+ B(X) X.
fn guttman_step(
    coords: &[Vec<f64>],
    distances: &[Vec<f64>],
    disparities: &[Vec<f64>],
    weights: &[Vec<f64>],
    vplus: &VPlus,
) -> Vec<Vec<f64>> {
    let n = coords.len();
    let dims = coords[0].len();
    let mut b = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let bij = if distances[i][j] > 1e-12 {
                -weights[i][j] * disparities[i][j] / distances[i][j]
            } else {
                0.0
            };
            b[i][j] = bij;
            diag -= bij;
        }
        b[i][i] = diag;
    }
    // Y = B X
    let mut y = vec![vec![0.0; dims]; n];
    for i in 0..n {
        for j in 0..n {
            let bij = b[i][j];
            if bij == 0.0 {
                continue;
            }
            for d in 0..dims {
                y[i][d] += bij * coords[j][d];
            }
        }
    }
    vplus.apply(&y)
}

/// Pseudo-inverse of the SMACOF V matrix. Unit weights admit the closed
/// form (I - 11^T/n)/n; general weights use an eigen-based pseudo-inverse.
enum VPlus {
    Unit,
    Dense(DMatrix<f64>),
}

impl VPlus {
    fn unit() -> Self {
        VPlus::Unit
    }

    fn from_weights(weights: &[Vec<f64>]) -> Result<Self, DiagError> {
        let n = weights.len();
        if weights
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &w)| i == j || w == 1.0))
        {
            return Ok(VPlus::Unit);
        }
        let mut v = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    v[(i, j)] = -weights[i][j];
                    v[(i, i)] += weights[i][j];
                }
            }
        }
        let eig = nalgebra::SymmetricEigen::new(v);
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        if max_ev <= 0.0 {
            return Err(DiagError::Numeric("degenerate MDS weight matrix".into()));
        }
        let tol = 1e-12 * max_ev;
        let mut pinv = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let ev = eig.eigenvalues[k];
            if ev > tol {
                let col = eig.eigenvectors.column(k);
                let scaled = col / ev;
                pinv += scaled * col.transpose();
            }
        }
        Ok(VPlus::Dense(pinv))
    }

    fn apply(&self, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = y.len();
        let dims = y[0].len();
        match self {
            VPlus::Unit => {
                // V+ = (I - 11^T/n)/n; Y = BX already has zero column sums,
                // so this reduces to Y/n
                let mut col_means = vec![0.0; dims];
                for row in y {
                    for (d, v) in row.iter().enumerate() {
                        col_means[d] += v;
                    }
                }
                for m in col_means.iter_mut() {
                    *m /= n as f64;
                }
                y.iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .map(|(d, v)| (v - col_means[d]) / n as f64)
                            .collect()
                    })
                    .collect()
            }
            VPlus::Dense(p) => {
                let mut out = vec![vec![0.0; dims]; n];
                for i in 0..n {
                    for j in 0..n {
                        let pij = p[(i, j)];
                        if pij == 0.0 {
                            continue;
                        }
                        for d in 0..dims {
                            out[i][d] += pij * y[j][d];
                        }
                    }
                }
                out
            }
        }
    }
}

/// Huber weights on residuals r = d - disparity: 1 inside c*MAD, else
/// c*MAD/|r|. A zero MAD (perfect fit) keeps all weights at 1.
fn huber_weights(distances: &[Vec<f64>], disparities: &[Vec<f64>], c: f64) -> Vec<Vec<f64>> {
    let n = distances.len();
    let mut residuals = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            residuals.push(distances[i][j] - disparities[i][j]);
        }
    }
    let med = median(&mut residuals.clone());
    let mut abs_dev: Vec<f64> = residuals.iter().map(|r| (r - med).abs()).collect();
    let mad = median(&mut abs_dev);
    let mut weights = vec![vec![1.0; n]; n];
    if mad <= 1e-15 {
        return weights;
    }
    let bound = c * mad;
    for i in 0..n {
        for j in (i + 1)..n {
            let r = (distances[i][j] - disparities[i][j]).abs();
            let w = if r <= bound { 1.0 } else { bound / r };
            weights[i][j] = w;
            weights[j][i] = w;
        }
    }
    weights
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Weighted isotonic regression (PAVA) of the upper-triangle distances
/// onto the dissimilarity order, rescaled to the input's weighted norm.
fn isotonic_disparities(
    delta: &[Vec<f64>],
    distances: &[Vec<f64>],
    weights: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = delta.len();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((i, j));
        }
    }
    pairs.sort_by(|&(a, b), &(c, d)| {
        delta[a][b]
            .partial_cmp(&delta[c][d])
            .expect("finite")
            .then((a, b).cmp(&(c, d)))
    });
    let targets: Vec<f64> = pairs.iter().map(|&(i, j)| distances[i][j]).collect();
    let ws: Vec<f64> = pairs.iter().map(|&(i, j)| weights[i][j]).collect();
    let fitted = pava(&targets, &ws);
    let mut disparities = vec![vec![0.0; n]; n];
    for (&(i, j), &f) in pairs.iter().zip(&fitted) {
        disparities[i][j] = f;
        disparities[j][i] = f;
    }
    // pin the scale: sum w disparity^2 = sum w delta^2
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            num += weights[i][j] * delta[i][j] * delta[i][j];
            den += weights[i][j] * disparities[i][j] * disparities[i][j];
        }
    }
    if den > 0.0 {
        let s = (num / den).sqrt();
        for row in disparities.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
    }
    disparities
}

/// Pool-adjacent-violators for weighted nondecreasing means.
fn pava(targets: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = targets.len();
    let mut value = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);
    let mut count = Vec::with_capacity(n);
    for i in 0..n {
        value.push(targets[i] * weights[i]);
        weight.push(weights[i]);
        count.push(1usize);
        while value.len() > 1 {
            let m = value.len();
            let mean_last = value[m - 1] / weight[m - 1].max(1e-300);
            let mean_prev = value[m - 2] / weight[m - 2].max(1e-300);
            if mean_prev <= mean_last {
                break;
            }
            let v = value.pop().expect("non-empty");
            let w = weight.pop().expect("non-empty");
            let c = count.pop().expect("non-empty");
            *value.last_mut().expect("non-empty") += v;
            *weight.last_mut().expect("non-empty") += w;
            *count.last_mut().expect("non-empty") += c;
        }
    }
    let mut out = Vec::with_capacity(n);
    for ((v, w), c) in value.into_iter().zip(weight).zip(count) {
        let mean = v / w.max(1e-300);
        out.extend(std::iter::repeat_n(mean, c));
    }
    out
}

/// Similarity-transform alignment (rotation, reflection, scale,
/// translation) of `source` onto `target`; returns the aligned source and
/// the RMS error after alignment.
pub fn procrustes_align(
    target: &[Vec<f64>],
    source: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, f64), DiagError> {
    let n = target.len();
    if n == 0 || source.len() != n || target[0].len() != source[0].len() {
        return Err(DiagError::Contract("configurations must match in shape".into()));
    }
    let dims = target[0].len();
    let mut x = to_matrix(target);
    let mut y = to_matrix(source);
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    for i in 0..n {
        for d in 0..dims {
            x[(i, d)] -= x_mean[d];
            y[(i, d)] -= y_mean[d];
        }
    }
    let cross = x.transpose() * &y;
    let svd = nalgebra::SVD::new(cross, true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let rotation = u * vt;
    let y_norm2: f64 = y.iter().map(|v| v * v).sum();
    if y_norm2 <= 0.0 {
        return Err(DiagError::Numeric("source configuration is degenerate".into()));
    }
    let scale = svd.singular_values.iter().sum::<f64>() / y_norm2;
    let aligned = (&y * rotation.transpose()) * scale;
    let mut sq = 0.0;
    let mut out = vec![vec![0.0; dims]; n];
    for i in 0..n {
        for d in 0..dims {
            let v = aligned[(i, d)] + x_mean[d];
            out[i][d] = v;
            let diff = v - (x[(i, d)] + x_mean[d]);
            sq += diff * diff;
        }
    }
    Ok((out, (sq / n as f64).sqrt()))
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows[0].len();
    DMatrix::from_fn(n, d, |i, j| rows[i][j])
}

// ---------------------------------------------------------------------------
// Robust PCA (trim and recompute)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaResult {
    /// All points projected into the final basis (n x k).
    pub scores: Vec<Vec<f64>>,
    /// Column-orthonormal loadings (dim x k).
    pub loadings: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Points that survived trimming.
    pub kept: Vec<bool>,
}

fn covariance_eigen(
    rows: &[Vec<f64>],
    center: &[f64],
) -> (Vec<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = center.len();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in rows {
        for a in 0..d {
            let da = row[a] - center[a];
            for b in a..d {
                let v = da * (row[b] - center[b]);
                cov[(a, b)] += v;
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= denom;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite"));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::<f64>::zeros(d, d);
    for (col, &k) in order.iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(k).into();
        // deterministic sign: largest-magnitude coordinate is positive
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).expect("finite"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[pivot] < 0.0 {
            v = -v;
        }
        vectors.set_column(col, &v);
    }
    (eigenvalues, vectors)
}

fn coordinate_median(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d)
        .map(|j| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            median(&mut col)
        })
        .collect()
}

fn coordinate_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect()
}

/// Outlier-trimmed PCA. Median-center, rank points by combined
/// score+orthogonal distance in a preliminary basis, drop the worst
/// `ceil(alpha * n)`, recompute classical PCA on the rest, and project all
/// points into the final basis.
pub fn robust_pca(
    rows: &[Vec<f64>],
    k: usize,
    alpha: f64,
) -> Result<PcaResult, DiagError> {
    let n = rows.len();
    if n == 0 || k == 0 {
        return Err(DiagError::Contract("need data and k >= 1".into()));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(DiagError::Contract("ragged input".into()));
    }
    if n <= k {
        return Err(DiagError::Contract(format!("need more than k = {k} points, got {n}")));
    }
    if !(0.0..0.5).contains(&alpha) {
        return Err(DiagError::Contract(format!("alpha must lie in [0, 0.5), got {alpha}")));
    }

    let trim = (alpha * n as f64).ceil() as usize;
    let kept: Vec<bool> = if trim == 0 {
        vec![true; n]
    } else {
        let med = coordinate_median(rows);
        let (prelim_vals, prelim_vecs) = covariance_eigen(rows, &med);
        let k_eff = k.min(dim);
        let mut outlyingness = vec![0.0; n];
        let mut score_d = vec![0.0; n];
        let mut orth_d = vec![0.0; n];
        for (i, row) in rows.iter().enumerate() {
            let centered: Vec<f64> = row.iter().zip(&med).map(|(v, m)| v - m).collect();
            let mut sd2 = 0.0;
            let mut proj = vec![0.0; dim];
            for comp in 0..k_eff {
                let mut score = 0.0;
                for a in 0..dim {
                    score += centered[a] * prelim_vecs[(a, comp)];
                }
                let lambda = prelim_vals[comp].max(1e-12);
                sd2 += score * score / lambda;
                for a in 0..dim {
                    proj[a] += score * prelim_vecs[(a, comp)];
                }
            }
            score_d[i] = sd2.sqrt();
            orth_d[i] = centered
                .iter()
                .zip(&proj)
                .map(|(c, p)| (c - p) * (c - p))
                .sum::<f64>()
                .sqrt();
        }
        let norm = |xs: &[f64]| {
            let mut c = xs.to_vec();
            let m = median(&mut c);
            if m > 1e-12 {
                m
            } else {
                1.0
            }
        };
        let (sm, om) = (norm(&score_d), norm(&orth_d));
        for i in 0..n {
            outlyingness[i] = score_d[i] / sm + orth_d[i] / om;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            outlyingness[b]
                .partial_cmp(&outlyingness[a])
                .expect("finite")
                .then(a.cmp(&b))
        });
        let mut kept = vec![true; n];
        for &i in order.iter().take(trim) {
            kept[i] = false;
        }
        kept
    };

    let retained: Vec<Vec<f64>> = rows
        .iter()
        .zip(&kept)
        .filter(|(_, &keep)| keep)
        .map(|(r, _)| r.clone())
        .collect();
    if retained.len() <= k {
        return Err(DiagError::Rank(format!(
            "only {} points retained for k = {k}",
            retained.len()
        )));
    }
    let mean = coordinate_mean(&retained);
    let (eigenvalues, vectors) = covariance_eigen(&retained, &mean);
    let max_ev = eigenvalues.first().copied().unwrap_or(0.0);
    let rank = eigenvalues.iter().filter(|&&v| v > 1e-12 * max_ev.max(1e-300)).count();
    if k > rank {
        return Err(DiagError::Rank(format!(
            "retained data has rank {rank}, cannot extract {k} components"
        )));
    }
    let loadings: Vec<Vec<f64>> = (0..dim)
        .map(|a| (0..k).map(|c| vectors[(a, c)]).collect())
        .collect();
    let scores: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| {
            (0..k)
                .map(|c| {
                    row.iter()
                        .zip(&mean)
                        .enumerate()
                        .map(|(a, (v, m))| (v - m) * vectors[(a, c)])
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(PcaResult {
        scores,
        loadings,
        eigenvalues: eigenvalues.into_iter().take(k).collect(),
        kept,
    })
}

/// Angle in degrees between a vector and a subspace-free reference vector.
pub fn vector_angle_degrees(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let c = (dot.abs() / (na * nb)).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Largest principal angle (degrees) between two subspaces given as
/// column sets.
pub fn principal_angle_degrees(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    let m = qa.transpose() * qb;
    let svd = nalgebra::SVD::new(m, false, false);
    let smallest = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .clamp(-1.0, 1.0);
    smallest.acos().to_degrees()
}

fn orthonormalize(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let dim = cols[0].len();
    let k = cols.len();
    let m = DMatrix::from_fn(dim, k, |i, j| cols[j][i]);
    let qr = m.qr();
    let q = qr.q();
    q.columns(0, k).into_owned()
}

// ---------------------------------------------------------------------------
// Gaussian-mixture overlap
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaConvention {
    /// Pairwise overlap is the average of the two directional rates; the
    /// mean lies in [0, 1].
    Average,
    /// Pairwise overlap is the sum of the two directional rates (the cited
    /// measure's convention); the mean lies in [0, 2].
    Sum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapOptions {
    pub mc_samples: usize,
    pub seed: u64,
    pub convention: OmegaConvention,
}

impl Default for OverlapOptions {
    fn default() -> Self {
        OverlapOptions {
            mc_samples: 200_000,
            seed: 42,
            convention: OmegaConvention::Average,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub label: u8,
    pub prior: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionalOverlap {
    /// Probability that a draw from `from` is (mis)classified as `to`.
    pub from: u8,
    pub to: u8,
    pub omega: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapReport {
    pub components: Vec<GaussianComponent>,
    pub directional: Vec<DirectionalOverlap>,
    /// Pairwise overlap under the configured convention.
    pub pairwise: f64,
    pub omega_bar: f64,
    pub mc_samples: usize,
    pub seed: u64,
    pub convention: OmegaConvention,
}

struct FittedGaussian {
    prior: f64,
    mean: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    inv: DMatrix<f64>,
    log_norm: f64, // log prior - 0.5 log det(2 pi Sigma)
}

fn fit_gaussian(points: &[Vec<f64>], prior: f64) -> Result<FittedGaussian, DiagError> {
    let d = points[0].len();
    let mean_vec = coordinate_mean(points);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in points {
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += (p[a] - mean_vec[a]) * (p[b] - mean_vec[b]);
            }
        }
    }
    let denom = (points.len() - 1) as f64;
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= denom;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let ridge = 1e-9 * cov.trace() / d as f64;
    for a in 0..d {
        cov[(a, a)] += ridge;
    }
    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| DiagError::Numeric("class covariance singular after ridge".into()))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let inv = chol.inverse();
    Ok(FittedGaussian {
        prior,
        mean: DVector::from_vec(mean_vec),
        chol,
        inv,
        log_norm: prior.ln() - 0.5 * (log_det + d as f64 * (2.0 * std::f64::consts::PI).ln()),
    })
}

impl FittedGaussian {
    fn log_weighted_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let q = (&self.inv * &diff).dot(&diff);
        self.log_norm - 0.5 * q
    }
}

/// Misclassification-probability overlap of a two-class Gaussian fit.
///
/// Fits one Gaussian per class (sample mean/covariance with a small ridge,
/// priors from class fractions) and estimates each directional rate
/// `P[pi_j phi_j(X) >= pi_k phi_k(X)]` for `X ~ class k` by Monte Carlo.
/// Ties count as misclassification. Draws are chunked with derived seeds,
/// so results do not depend on worker count.
pub fn overlap(
    points: &[Vec<f64>],
    labels: &[u8],
    options: &OverlapOptions,
) -> Result<OverlapReport, DiagError> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(DiagError::Contract("points and labels must align".into()));
    }
    let d = points[0].len();
    if labels.iter().any(|&l| l > 1) {
        return Err(DiagError::Contract("labels must be binary".into()));
    }
    let split: Vec<Vec<Vec<f64>>> = (0..2u8)
        .map(|c| {
            points
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p.clone())
                .collect()
        })
        .collect();
    for (c, class_points) in split.iter().enumerate() {
        if class_points.len() < d + 2 {
            return Err(DiagError::Contract(format!(
                "class {c} has {} points, need at least dim + 2 = {}",
                class_points.len(),
                d + 2
            )));
        }
    }
    let n_total = points.len() as f64;
    let fits: Vec<FittedGaussian> = split
        .iter()
        .map(|class_points| fit_gaussian(class_points, class_points.len() as f64 / n_total))
        .collect::<Result<_, _>>()?;

    let mut components = Vec::new();
    for (c, (class_points, fit)) in split.iter().zip(&fits).enumerate() {
        let mean = fit.mean.iter().cloned().collect::<Vec<f64>>();
        let cov_dense = fit.chol.l() * fit.chol.l().transpose();
        let covariance: Vec<Vec<f64>> = (0..d)
            .map(|a| (0..d).map(|b| cov_dense[(a, b)]).collect())
            .collect();
        components.push(GaussianComponent {
            label: c as u8,
            prior: fit.prior,
            mean,
            covariance,
            count: class_points.len(),
        });
    }

    let rate = |from: usize, to: usize, stream: u64| -> f64 {
        let chunk = 10_000usize;
        let chunks: Vec<(usize, usize)> = (0..options.mc_samples)
            .step_by(chunk)
            .enumerate()
            .map(|(c, start)| (c, (options.mc_samples - start).min(chunk)))
            .collect();
        let hits: usize = chunks
            .par_iter()
            .map(|&(c, len)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(options.seed, stream, c as u64));
                let mut local = 0usize;
                for _ in 0..len {
                    let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                    let x = &fits[from].mean + fits[from].chol.l() * z;
                    if fits[to].log_weighted_density(&x) >= fits[from].log_weighted_density(&x) {
                        local += 1;
                    }
                }
                local
            })
            .sum();
        hits as f64 / options.mc_samples as f64
    };
    let omega_1_given_0 = rate(0, 1, 1);
    let omega_0_given_1 = rate(1, 0, 2);
    let directional = vec![
        DirectionalOverlap {
            from: 0,
            to: 1,
            omega: omega_1_given_0,
        },
        DirectionalOverlap {
            from: 1,
            to: 0,
            omega: omega_0_given_1,
        },
    ];
    let pairwise = match options.convention {
        OmegaConvention::Average => 0.5 * (omega_1_given_0 + omega_0_given_1),
        OmegaConvention::Sum => omega_1_given_0 + omega_0_given_1,
    };
    Ok(OverlapReport {
        components,
        directional,
        pairwise,
        omega_bar: pairwise, // binary labels: a single pair
        mc_samples: options.mc_samples,
        seed: options.seed,
        convention: options.convention,
    })
}

fn mix_seed(seed: u64, stream: u64, chunk: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xA076_1D64_78BD_642F) ^ chunk.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    z = (z ^ (z >> 32)).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z ^ (z >> 32)
}

// ---------------------------------------------------------------------------
// Projection export
// ---------------------------------------------------------------------------

const CLASS_COLORS: [&str; 2] = ["#d62728", "#1f77b4"]; // fake red, true blue

/// Write `<base>.csv` and `<base>.svg` for a 2D or 3D projection with
/// binary labels. Deterministic output bytes for identical input.
pub fn export_projection(
    coords: &[Vec<f64>],
    labels: &[u8],
    base: &Path,
    omega_bar: Option<f64>,
) -> Result<(), DiagError> {
    if coords.len() != labels.len() {
        return Err(DiagError::Contract("coords and labels must align".into()));
    }
    let dims = coords.first().map(|c| c.len()).unwrap_or(2);
    if !(2..=3).contains(&dims) {
        return Err(DiagError::Contract("projection export supports 2 or 3 dims".into()));
    }
    let mut csv = String::from(if dims == 2 { "x,y,label\n" } else { "x,y,z,label\n" });
    for (c, l) in coords.iter().zip(labels) {
        let coords_text: Vec<String> = c.iter().map(|v| format!("{v:.9}")).collect();
        csv.push_str(&format!("{},{l}\n", coords_text.join(",")));
    }
    crate::corpus::atomic_write(&base.with_extension("csv"), csv.as_bytes())?;
    crate::corpus::atomic_write(&base.with_extension("svg"), svg_scatter(coords, labels, omega_bar).as_bytes())?;
    Ok(())
}

fn svg_scatter(coords: &[Vec<f64>], labels: &[u8], omega_bar: Option<f64>) -> String {
    let (width, height, margin) = (640.0, 480.0, 40.0);
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in coords {
        min_x = min_x.min(c[0]);
        max_x = max_x.max(c[0]);
        min_y = min_y.min(c[1]);
        max_y = max_y.max(c[1]);
    }
    if coords.is_empty() {
        min_x = 0.0;
        max_x = 1.0;
        min_y = 0.0;
        max_y = 1.0;
    }
    let span = |lo: f64, hi: f64| if hi - lo > 1e-12 { hi - lo } else { 1.0 };
    let (sx, sy) = (span(min_x, max_x), span(min_y, max_y));
    let title = match omega_bar {
        Some(o) => format!("latent projection (omega_bar = {o:.4})"),
        None => "latent projection".to_string(),
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n<title>{title}</title>\n<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        width / 2.0
    );
    for (c, &l) in coords.iter().zip(labels) {
        let px = margin + (c[0] - min_x) / sx * (width - 2.0 * margin);
        let py = height - margin - (c[1] - min_y) / sy * (height - 2.0 * margin);
        svg.push_str(&format!(
            "<circle cx=\"{px:.3}\" cy=\"{py:.3}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.75\"/>\n",
            CLASS_COLORS[(l as usize).min(1)]
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn similarity_matrix_reference_cases() {
        let rows = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        let m = cosine_similarity_matrix(&rows).unwrap();
        for row in &m {
            for &v in row {
                assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
            }
        }
        let basis = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let m = cosine_similarity_matrix(&basis).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(m[i][j], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn similarity_matrix_is_symmetric_on_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let m = cosine_similarity_matrix(&rows).unwrap();
        for i in 0..8 {
            assert_abs_diff_eq!(m[i][i], 1.0, epsilon = 1e-12);
            for j in 0..8 {
                assert!((m[i][j] - m[j][i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_norm_rows_are_filtered_and_rejected() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 2.0]];
        let (kept, dropped) = filter_zero_norm(&rows);
        assert_eq!(kept.len(), 2);
        assert_eq!(dropped, vec![1]);
        assert!(cosine_similarity_matrix(&rows).is_err());
    }

    #[test]
    fn mds_embeds_equilateral_dissimilarities_exactly() {
        let delta = vec![
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ];
        let result = robust_mds(&delta, &MdsOptions::default()).unwrap();
        assert!(result.stress < 1e-6, "stress {}", result.stress);
        let d = pairwise_distances(&result.coordinates);
        let mut pairs = vec![d[0][1], d[0][2], d[1][2]];
        let mean: f64 = pairs.iter().sum::<f64>() / 3.0;
        for p in pairs.drain(..) {
            assert!((p - mean).abs() < 1e-4, "unequal recovered distances");
        }
    }

    #[test]
    fn mds_round_trips_a_seeded_plane_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let original: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let delta = pairwise_distances(&original);
        let result = robust_mds(&delta, &MdsOptions::default()).unwrap();
        let (_, rms) = procrustes_align(&original, &result.coordinates).unwrap();
        assert!(rms < 1e-3, "post-alignment rms {rms}");
    }

    #[test]
    fn mds_stress_trace_never_increases_in_metric_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let pts: Vec<Vec<f64>> = (0..15)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let delta = pairwise_distances(&pts);
        let result = robust_mds(&delta, &MdsOptions::default()).unwrap();
        for pair in result.stress_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "stress increased: {pair:?}");
        }
    }

    #[test]
    fn mds_collapses_duplicated_points() {
        let delta = vec![
            vec![0.0, 0.0, 1.0, 1.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 0.5],
            vec![1.0, 1.0, 0.5, 0.0],
        ];
        let result = robust_mds(&delta, &MdsOptions::default()).unwrap();
        let c = &result.coordinates;
        let gap: f64 = c[0]
            .iter()
            .zip(&c[1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(gap < 1e-6, "duplicated points ended up {gap} apart");
    }

    #[test]
    fn mds_coordinates_are_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|_| vec![rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)])
            .collect();
        let delta = pairwise_distances(&pts);
        for options in [
            MdsOptions::default(),
            MdsOptions {
                huber: true,
                ..Default::default()
            },
            MdsOptions {
                monotone: true,
                ..Default::default()
            },
        ] {
            let result = robust_mds(&delta, &options).unwrap();
            for d in 0..2 {
                let mean: f64 =
                    result.coordinates.iter().map(|r| r[d]).sum::<f64>() / result.coordinates.len() as f64;
                assert!(mean.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mds_is_reproducible_under_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let delta = pairwise_distances(&pts);
        let opts = MdsOptions {
            huber: true,
            ..Default::default()
        };
        let a = robust_mds(&delta, &opts).unwrap();
        let b = robust_mds(&delta, &opts).unwrap();
        assert_eq!(a.coordinates, b.coordinates);
        assert_eq!(a.stress.to_bits(), b.stress.to_bits());
    }

    #[test]
    fn mds_rejects_non_finite_and_tiny_inputs() {
        let bad = vec![
            vec![0.0, f64::NAN, 1.0],
            vec![f64::NAN, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ];
        assert!(matches!(robust_mds(&bad, &MdsOptions::default()), Err(DiagError::Numeric(_))));
        let tiny = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(matches!(robust_mds(&tiny, &MdsOptions::default()), Err(DiagError::Contract(_))));
    }

    #[test]
    fn similarity_entry_matches_dissimilarity_path() {
        let sims = vec![
            vec![1.0, 0.5, 0.2],
            vec![0.5, 1.0, 0.4],
            vec![0.2, 0.4, 1.0],
        ];
        let a = robust_mds_from_similarities(&sims, &MdsOptions::default()).unwrap();
        let delta: Vec<Vec<f64>> = sims
            .iter()
            .map(|r| r.iter().map(|s| 1.0 - s).collect())
            .collect();
        let b = robust_mds(&delta, &MdsOptions::default()).unwrap();
        assert_eq!(a.coordinates, b.coordinates);
    }

    // ----- robust PCA -----

    /// Straightforward mean-centered PCA used as the comparison oracle.
    fn classical_pca(rows: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
        let mean = coordinate_mean(rows);
        let (_, vectors) = covariance_eigen(rows, &mean);
        (0..rows[0].len())
            .map(|a| (0..k).map(|c| vectors[(a, c)]).collect())
            .collect()
    }

    fn gaussian_cloud(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                let y: f64 = StandardNormal.sample(&mut rng);
                vec![3.0 * x, 0.5 * y]
            })
            .collect()
    }

    #[test]
    fn alpha_zero_equals_classical_pca() {
        let data = gaussian_cloud(60, 21);
        let robust = robust_pca(&data, 2, 0.0).unwrap();
        let classical = classical_pca(&data, 2);
        let angle = principal_angle_degrees(
            &transpose_loadings(&robust.loadings),
            &transpose_loadings(&classical),
        );
        assert!(angle < 1e-8, "principal angle {angle} degrees");
        assert!(robust.kept.iter().all(|&k| k));
    }

    fn transpose_loadings(loadings: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let dim = loadings.len();
        let k = loadings[0].len();
        (0..k).map(|c| (0..dim).map(|a| loadings[a][c]).collect()).collect()
    }

    #[test]
    fn trimming_resists_orthogonal_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        // 90 points along the x-axis, 10 far off in y
        let mut data: Vec<Vec<f64>> = (0..90)
            .map(|_| {
                let t: f64 = rng.random_range(-2.0..2.0);
                let noise: f64 = rng.random_range(-0.01..0.01);
                vec![t, noise]
            })
            .collect();
        for _ in 0..10 {
            let t: f64 = rng.random_range(-0.3..0.3);
            data.push(vec![t, rng.random_range(6.0..9.0)]);
        }
        let robust = robust_pca(&data, 1, 0.25).unwrap();
        let classical = classical_pca(&data, 1);
        let line = vec![1.0, 0.0];
        let robust_first: Vec<f64> = (0..2).map(|a| robust.loadings[a][0]).collect();
        let classical_first: Vec<f64> = (0..2).map(|a| classical[a][0]).collect();
        let robust_angle = vector_angle_degrees(&robust_first, &line);
        let classical_angle = vector_angle_degrees(&classical_first, &line);
        assert!(robust_angle < 2.0, "robust angle {robust_angle}");
        assert!(
            classical_angle > robust_angle,
            "classical ({classical_angle}) should deviate more than robust ({robust_angle})"
        );
        // the far outliers were dropped
        let dropped: usize = robust.kept.iter().filter(|&&k| !k).count();
        assert_eq!(dropped, 25); // ceil(0.25 * 100)
        assert!(robust.kept[..90].iter().filter(|&&k| !k).count() <= 15);
        assert!(robust.kept[90..].iter().all(|&k| !k));
    }

    #[test]
    fn loadings_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let result = robust_pca(&data, 3, 0.1).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..5).map(|d| result.loadings[d][a] * result.loadings[d][b]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10, "loading dot ({a},{b}) = {dot}");
            }
        }
    }

    #[test]
    fn rank_deficient_requests_are_rejected() {
        // rank-1 data in 3 dims
        let data: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(robust_pca(&data, 3, 0.0), Err(DiagError::Rank(_))));
        assert!(robust_pca(&data, 1, 0.0).is_ok());
    }

    #[test]
    fn pca_rejects_bad_arguments() {
        let data = gaussian_cloud(10, 24);
        assert!(robust_pca(&data, 0, 0.0).is_err());
        assert!(robust_pca(&data, 2, 0.5).is_err());
        assert!(robust_pca(&data[..2], 2, 0.0).is_err());
    }

    // ----- overlap -----

    fn two_gaussians(n_per_class: usize, separation: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(2 * n_per_class);
        let mut labels = Vec::with_capacity(2 * n_per_class);
        for class in 0..2u8 {
            let shift = if class == 0 { 0.0 } else { separation };
            for _ in 0..n_per_class {
                let x: f64 = StandardNormal.sample(&mut rng);
                let y: f64 = StandardNormal.sample(&mut rng);
                points.push(vec![x + shift, y]);
                labels.push(class);
            }
        }
        (points, labels)
    }

    #[test]
    fn overlap_matches_analytic_two_gaussian_value() {
        let (points, labels) = two_gaussians(5_000, 2.0, 31);
        let report = overlap(&points, &labels, &OverlapOptions::default()).unwrap();
        // equal spherical unit Gaussians at separation 2: rate = Phi(-1)
        let expected = 0.158655;
        assert!(
            (report.omega_bar - expected).abs() < 0.01,
            "omega_bar {} vs analytic {expected}",
            report.omega_bar
        );
    }

    #[test]
    fn overlap_vanishes_for_distant_classes() {
        let (points, labels) = two_gaussians(2_000, 20.0, 32);
        let report = overlap(&points, &labels, &OverlapOptions::default()).unwrap();
        assert!(report.omega_bar < 1e-4, "omega_bar {}", report.omega_bar);
    }

    #[test]
    fn overlap_of_shuffled_single_cloud_is_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let points: Vec<Vec<f64>> = (0..4_000)
            .map(|_| {
                vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)]
            })
            .collect();
        let labels: Vec<u8> = (0..4_000).map(|i| (i % 2) as u8).collect();
        let report = overlap(&points, &labels, &OverlapOptions::default()).unwrap();
        assert!(
            (report.omega_bar - 0.5).abs() < 0.05,
            "omega_bar {}",
            report.omega_bar
        );
    }

    #[test]
    fn overlap_is_symmetric_under_label_swap() {
        let (points, labels) = two_gaussians(3_000, 1.5, 34);
        let swapped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let opts = OverlapOptions::default();
        let a = overlap(&points, &labels, &opts).unwrap();
        let b = overlap(&points, &swapped, &opts).unwrap();
        // two Monte Carlo standard errors at 200k samples
        let se = (a.omega_bar * (1.0 - a.omega_bar) / opts.mc_samples as f64).sqrt();
        assert!(
            (a.omega_bar - b.omega_bar).abs() <= 2.0 * (2.0f64).sqrt() * se + 1e-9,
            "swap asymmetry {} vs {}",
            a.omega_bar,
            b.omega_bar
        );
    }

    #[test]
    fn overlap_sum_convention_doubles_average() {
        let (points, labels) = two_gaussians(1_000, 1.0, 35);
        let avg = overlap(&points, &labels, &OverlapOptions::default()).unwrap();
        let sum = overlap(
            &points,
            &labels,
            &OverlapOptions {
                convention: OmegaConvention::Sum,
                ..Default::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(sum.omega_bar, 2.0 * avg.omega_bar, epsilon = 1e-12);
        for d in &avg.directional {
            assert!((0.0..=1.0).contains(&d.omega));
        }
    }

    #[test]
    fn overlap_is_deterministic_for_fixed_seed() {
        let (points, labels) = two_gaussians(500, 1.0, 36);
        let a = overlap(&points, &labels, &OverlapOptions::default()).unwrap();
        let b = overlap(&points, &labels, &OverlapOptions::default()).unwrap();
        assert_eq!(a.omega_bar.to_bits(), b.omega_bar.to_bits());
    }

    #[test]
    fn overlap_requires_enough_points_per_class() {
        let points = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let labels = vec![0, 0, 0, 1];
        assert!(matches!(
            overlap(&points, &labels, &OverlapOptions::default()),
            Err(DiagError::Contract(_))
        ));
    }

    // ----- export -----

    #[test]
    fn export_writes_deterministic_csv_and_svg() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("proj");
        let coords = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.5],
            vec![-0.5, 1.0],
            vec![0.25, -0.75],
        ];
        let labels = vec![0, 1, 0, 1];
        export_projection(&coords, &labels, &base, Some(0.42)).unwrap();
        let csv = std::fs::read_to_string(base.with_extension("csv")).unwrap();
        assert_eq!(csv.lines().count(), 5); // header + 4 rows
        assert!(csv.starts_with("x,y,label\n"));
        let svg = std::fs::read_to_string(base.with_extension("svg")).unwrap();
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.contains("0.4200"));
        export_projection(&coords, &labels, &base, Some(0.42)).unwrap();
        let again = std::fs::read_to_string(base.with_extension("svg")).unwrap();
        assert_eq!(svg, again);
    }

    #[test]
    fn export_rejects_mismatched_labels() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("proj");
        assert!(export_projection(&[vec![0.0, 0.0]], &[0, 1], &base, None).is_err());
    }
}
