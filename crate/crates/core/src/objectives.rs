//! Training objectives: cross-entropy on the veracity prediction, the
//! article-user cosine-distance loss, the user-user cosine-distance loss,
//! and their weighted combination.
//!
//! Cosine distance is `1 - cos(x, y)`, with range [0, 2]. A zero-norm
//! operand makes the distance undefined; those pairs return the neutral
//! value 1 with the event counted, so training never sees a NaN but the
//! anomaly stays observable.
//!
//! Every loss exists in two forms: a plain `f64` form used by evaluation
//! and tests, and a graph form used during optimization. Empty subsets
//! contribute exactly 0 to both distance losses.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use veracity_autodiff::{Graph, NodeId, TensorError};

use crate::encoders::LatentMatrix;

/// Norms at or below this threshold count as zero for cosine distance.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Probability floor inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: vectors of length {0} and {1}")]
    Shape(usize, usize),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Counts of degenerate events observed while computing distance losses.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceDiagnostics {
    /// Cosine-distance evaluations that hit a zero-norm operand.
    pub zero_norm_events: u64,
}

// ---------------------------------------------------------------------------
// Loss weights
// ---------------------------------------------------------------------------

/// The (lambda1, lambda2, lambda3) weights of the combined loss; they must
/// be nonnegative and sum to 1 within 1e-9.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub prediction: f64,
    pub article_user: f64,
    pub user_user: f64,
}

impl LossWeights {
    pub fn new(prediction: f64, article_user: f64, user_user: f64) -> Result<Self, LossError> {
        let w = LossWeights {
            prediction,
            article_user,
            user_user,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.prediction < 0.0 || self.article_user < 0.0 || self.user_user < 0.0 {
            return Err(LossError::Config("loss weights must be nonnegative".into()));
        }
        let sum = self.prediction + self.article_user + self.user_user;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LossError::Config(format!(
                "loss weights must sum to 1 within 1e-9, got {sum}"
            )));
        }
        Ok(())
    }

    /// Prediction-only weights used by the base setup.
    pub fn prediction_only() -> Self {
        LossWeights {
            prediction: 1.0,
            article_user: 0.0,
            user_user: 0.0,
        }
    }

    /// Tuned weights for the CNN family.
    pub fn cnn_preset() -> Self {
        LossWeights {
            prediction: 0.8,
            article_user: 0.1,
            user_user: 0.1,
        }
    }

    /// Tuned weights for the HAN family.
    pub fn han_preset() -> Self {
        LossWeights {
            prediction: 0.5,
            article_user: 0.25,
            user_user: 0.25,
        }
    }

    /// Exact thirds. The nominal (0.33, 0.33, 0.33) preset sums to 0.99 and
    /// would violate the unit-sum invariant, so it ships normalized.
    pub fn thirds_preset() -> Self {
        LossWeights {
            prediction: 1.0 / 3.0,
            article_user: 1.0 / 3.0,
            user_user: 1.0 / 3.0,
        }
    }
}

/// The four scalars reported for every loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub prediction: f64,
    pub article_user: f64,
    pub user_user: f64,
    pub combined: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.prediction.is_finite()
            && self.article_user.is_finite()
            && self.user_user.is_finite()
            && self.combined.is_finite()
    }
}

// ---------------------------------------------------------------------------
// Plain (value-level) operations
// ---------------------------------------------------------------------------

/// `1 - cos(x, y)` in [0, 2]; zero-norm operands yield the neutral value 1
/// and bump the diagnostics counter.
pub fn cosine_distance(
    x: &[f64],
    y: &[f64],
    diag: &mut DistanceDiagnostics,
) -> Result<f64, LossError> {
    if x.len() != y.len() {
        return Err(LossError::Shape(x.len(), y.len()));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx <= ZERO_NORM_EPS || ny <= ZERO_NORM_EPS {
        diag.zero_norm_events += 1;
        return Ok(1.0);
    }
    Ok(1.0 - dot / (nx * ny))
}

/// Cross-entropy `-log p[y]` with the probability clamped at 1e-12.
pub fn prediction_loss(probabilities: &[f64; 2], label: u8) -> Result<f64, LossError> {
    if label > 1 {
        return Err(LossError::Contract(format!("label must be 0 or 1, got {label}")));
    }
    Ok(-(probabilities[label as usize].max(PROB_FLOOR)).ln())
}

/// Mean cosine distance from the article latent to each valid user latent;
/// 0 when no valid users exist.
pub fn article_user_loss(
    article: &[f64],
    users: &[Vec<f64>],
    valid: &[bool],
    diag: &mut DistanceDiagnostics,
) -> Result<f64, LossError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (row, &ok) in users.iter().zip(valid) {
        if ok {
            sum += cosine_distance(article, row, diag)?;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Pairwise cosine-distance matrix over the valid rows; entries touching an
/// invalid row are `None`.
pub fn user_distance_matrix(
    users: &[Vec<f64>],
    valid: &[bool],
    diag: &mut DistanceDiagnostics,
) -> Result<Vec<Vec<Option<f64>>>, LossError> {
    let s = users.len();
    let mut out = vec![vec![None; s]; s];
    for i in 0..s {
        if !valid[i] {
            continue;
        }
        out[i][i] = Some(0.0);
        for j in (i + 1)..s {
            if !valid[j] {
                continue;
            }
            let d = cosine_distance(&users[i], &users[j], diag)?;
            out[i][j] = Some(d);
            out[j][i] = Some(d);
        }
    }
    Ok(out)
}

/// Mean over valid users of their average cosine distance to the other
/// valid users of the same subset; 0 with fewer than two valid users.
pub fn user_user_loss(
    users: &[Vec<f64>],
    valid: &[bool],
    diag: &mut DistanceDiagnostics,
) -> Result<f64, LossError> {
    let idx: Vec<usize> = (0..users.len()).filter(|&i| valid[i]).collect();
    if idx.len() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &j in &idx {
        let mut sum = 0.0;
        for &k in &idx {
            if k != j {
                sum += cosine_distance(&users[j], &users[k], diag)?;
            }
        }
        total += sum / (idx.len() - 1) as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Weighted combination of the three loss components.
pub fn combined_loss(
    prediction: f64,
    article_user: f64,
    user_user: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    weights.validate()?;
    Ok(LossBreakdown {
        prediction,
        article_user,
        user_user,
        combined: weights.prediction * prediction
            + weights.article_user * article_user
            + weights.user_user * user_user,
    })
}

// ---------------------------------------------------------------------------
// Graph (differentiable) operations
// ---------------------------------------------------------------------------

/// Graph version of [`cosine_distance`]. Zero-norm operands (decided from
/// the forward values) produce a constant neutral node so no gradient flows
/// through the degenerate pair.
pub fn cosine_distance_node(
    g: &mut Graph,
    x: NodeId,
    y: NodeId,
    diag: &mut DistanceDiagnostics,
) -> Result<NodeId, LossError> {
    if g.shape(x) != g.shape(y) || g.shape(x).len() != 1 {
        return Err(LossError::Shape(g.values(x).len(), g.values(y).len()));
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm(g.values(x)) <= ZERO_NORM_EPS || norm(g.values(y)) <= ZERO_NORM_EPS {
        diag.zero_norm_events += 1;
        return Ok(g.scalar(1.0));
    }
    let dot = g.dot(x, y)?;
    let xx = g.dot(x, x)?;
    let yy = g.dot(y, y)?;
    let nx = g.sqrt(xx);
    let ny = g.sqrt(yy);
    let denom = g.mul(nx, ny)?;
    let cos = g.div(dot, denom)?;
    let neg = g.scale(cos, -1.0);
    Ok(g.add_const(neg, 1.0))
}

/// Graph version of [`prediction_loss`] over a probability-pair node.
pub fn prediction_loss_node(
    g: &mut Graph,
    probabilities: NodeId,
    label: u8,
) -> Result<NodeId, LossError> {
    if label > 1 {
        return Err(LossError::Contract(format!("label must be 0 or 1, got {label}")));
    }
    if g.shape(probabilities) != [2] {
        return Err(LossError::Shape(g.values(probabilities).len(), 2));
    }
    let selector = if label == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
    let sel = g.constant(&veracity_autodiff::Tensor::vector(selector));
    let picked = g.mul(probabilities, sel)?;
    let p = g.sum_all(picked);
    let p = g.clamp_min(p, PROB_FLOOR);
    let logp = g.log(p);
    Ok(g.scale(logp, -1.0))
}

/// Graph version of [`article_user_loss`].
pub fn article_user_loss_node(
    g: &mut Graph,
    article: NodeId,
    users: &LatentMatrix,
    diag: &mut DistanceDiagnostics,
) -> Result<NodeId, LossError> {
    let mut terms = Vec::new();
    for (row, &ok) in users.rows.iter().zip(&users.valid) {
        if ok {
            terms.push(cosine_distance_node(g, article, *row, diag)?);
        }
    }
    if terms.is_empty() {
        return Ok(g.scalar(0.0));
    }
    let stacked = g.concat(&terms)?;
    Ok(g.mean_all(stacked))
}

/// Graph version of [`user_user_loss`].
pub fn user_user_loss_node(
    g: &mut Graph,
    users: &LatentMatrix,
    diag: &mut DistanceDiagnostics,
) -> Result<NodeId, LossError> {
    let idx: Vec<usize> = (0..users.rows.len()).filter(|&i| users.valid[i]).collect();
    if idx.len() < 2 {
        return Ok(g.scalar(0.0));
    }
    // distances are symmetric: build each pair once, reuse per row
    let mut pair: std::collections::HashMap<(usize, usize), NodeId> = std::collections::HashMap::new();
    for (a, &j) in idx.iter().enumerate() {
        for &k in &idx[a + 1..] {
            let d = cosine_distance_node(g, users.rows[j], users.rows[k], diag)?;
            pair.insert((j, k), d);
        }
    }
    let mut row_means = Vec::with_capacity(idx.len());
    for &j in &idx {
        let mut terms = Vec::new();
        for &k in &idx {
            if k == j {
                continue;
            }
            let key = if j < k { (j, k) } else { (k, j) };
            terms.push(pair[&key]);
        }
        let stacked = g.concat(&terms)?;
        row_means.push(g.mean_all(stacked));
    }
    let stacked = g.concat(&row_means)?;
    Ok(g.mean_all(stacked))
}

/// Graph version of [`combined_loss`]; returns the combined node plus the
/// forward-value breakdown.
pub fn combined_loss_node(
    g: &mut Graph,
    prediction: NodeId,
    article_user: NodeId,
    user_user: NodeId,
    weights: &LossWeights,
) -> Result<(NodeId, LossBreakdown), LossError> {
    weights.validate()?;
    let p = g.scale(prediction, weights.prediction);
    let a = g.scale(article_user, weights.article_user);
    let u = g.scale(user_user, weights.user_user);
    let pa = g.add(p, a)?;
    let combined = g.add(pa, u)?;
    Ok((
        combined,
        LossBreakdown {
            prediction: g.value(prediction),
            article_user: g.value(article_user),
            user_user: g.value(user_user),
            combined: g.value(combined),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use veracity_autodiff::Tensor;

    fn diag() -> DistanceDiagnostics {
        DistanceDiagnostics::default()
    }

    #[test]
    fn cosine_distance_reference_points() {
        let mut d = diag();
        assert_abs_diff_eq!(cosine_distance(&[1.0, 0.0], &[1.0, 0.0], &mut d).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0], &mut d).unwrap(), 1.0);
        assert_abs_diff_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0], &mut d).unwrap(), 2.0);
        assert_eq!(d.zero_norm_events, 0);
    }

    #[test]
    fn cosine_distance_zero_norm_is_neutral_and_counted() {
        let mut d = diag();
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0], &mut d).unwrap(), 1.0);
        assert_eq!(d.zero_norm_events, 1);
    }

    #[test]
    fn cosine_distance_scale_invariance() {
        let mut d = diag();
        let x = [0.3, -1.2, 0.7];
        let y = [-0.4, 0.9, 2.0];
        let base = cosine_distance(&x, &y, &mut d).unwrap();
        for (a, b) in [(2.0, 3.0), (0.5, 10.0), (1e-3, 1e3)] {
            let xs: Vec<f64> = x.iter().map(|v| v * a).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * b).collect();
            let scaled = cosine_distance(&xs, &ys, &mut d).unwrap();
            assert!((scaled - base).abs() <= 1e-12);
        }
    }

    #[test]
    fn cosine_distance_shape_mismatch() {
        let mut d = diag();
        assert!(matches!(
            cosine_distance(&[1.0], &[1.0, 2.0], &mut d),
            Err(LossError::Shape(1, 2))
        ));
    }

    #[test]
    fn prediction_loss_reference_points() {
        assert!(prediction_loss(&[0.0, 1.0], 1).unwrap().abs() < 1e-9);
        assert_abs_diff_eq!(
            prediction_loss(&[0.5, 0.5], 1).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            prediction_loss(&[0.9, 0.1], 1).unwrap(),
            -(0.1f64.ln()),
            epsilon = 1e-12
        );
        assert!(matches!(prediction_loss(&[0.5, 0.5], 2), Err(LossError::Contract(_))));
    }

    #[test]
    fn article_user_loss_hand_example() {
        let mut d = diag();
        let article = [1.0, 0.0];
        let users = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let valid = vec![true, true];
        assert_abs_diff_eq!(
            article_user_loss(&article, &users, &valid, &mut d).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_eq!(article_user_loss(&article, &[], &[], &mut d).unwrap(), 0.0);
        let same = vec![vec![1.0, 0.0]; 3];
        let valid = vec![true; 3];
        assert_abs_diff_eq!(
            article_user_loss(&article, &same, &valid, &mut d).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn user_distance_matrix_is_symmetric_with_zero_diagonal() {
        let mut d = diag();
        let users = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let valid = vec![true, true];
        let m = user_distance_matrix(&users, &valid, &mut d).unwrap();
        assert_eq!(m[0][0], Some(0.0));
        assert_eq!(m[1][1], Some(0.0));
        assert_abs_diff_eq!(m[0][1].unwrap(), 1.0);
        assert_eq!(m[0][1], m[1][0]);
    }

    #[test]
    fn user_user_loss_worked_example() {
        let mut d = diag();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let users = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s]];
        let valid = vec![true; 3];
        let loss = user_user_loss(&users, &valid, &mut d).unwrap();
        assert_abs_diff_eq!(loss, 0.528595, epsilon = 1e-6);
        // per-row means from the brute-force arithmetic
        let m = user_distance_matrix(&users, &valid, &mut d).unwrap();
        let row_mean = |j: usize| {
            let sum: f64 = (0..3).filter(|&k| k != j).map(|k| m[j][k].unwrap()).sum();
            sum / 2.0
        };
        assert_abs_diff_eq!(row_mean(0), 0.646447, epsilon = 1e-6);
        assert_abs_diff_eq!(row_mean(2), 0.292893, epsilon = 1e-6);
    }

    #[test]
    fn user_user_loss_degenerate_cases() {
        let mut d = diag();
        let one = vec![vec![1.0, 0.0]];
        assert_eq!(user_user_loss(&one, &[true], &mut d).unwrap(), 0.0);
        let same = vec![vec![1.0, 2.0]; 4];
        assert_abs_diff_eq!(
            user_user_loss(&same, &[true; 4], &mut d).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn user_user_loss_is_permutation_invariant() {
        let mut d = diag();
        let users = vec![
            vec![0.3, 1.0, -0.2],
            vec![-1.0, 0.4, 0.9],
            vec![0.5, 0.5, 0.5],
            vec![2.0, -0.3, 0.1],
        ];
        let base = user_user_loss(&users, &[true; 4], &mut d).unwrap();
        let permuted = vec![
            users[2].clone(),
            users[0].clone(),
            users[3].clone(),
            users[1].clone(),
        ];
        let other = user_user_loss(&permuted, &[true; 4], &mut d).unwrap();
        assert_abs_diff_eq!(base, other, epsilon = 1e-12);
    }

    #[test]
    fn combined_loss_arithmetic_and_identity() {
        let w = LossWeights::cnn_preset();
        let b = combined_loss(0.5, 0.2, 0.3, &w).unwrap();
        assert_abs_diff_eq!(b.combined, 0.45, epsilon = 1e-12);
        let base = combined_loss(0.7, 0.9, 0.9, &LossWeights::prediction_only()).unwrap();
        assert_eq!(base.combined, 0.7);
    }

    #[test]
    fn loss_weights_must_sum_to_one() {
        assert!(LossWeights::new(0.33, 0.33, 0.33).is_err());
        assert!(LossWeights::new(-0.2, 0.6, 0.6).is_err());
        LossWeights::thirds_preset().validate().unwrap();
        LossWeights::cnn_preset().validate().unwrap();
        LossWeights::han_preset().validate().unwrap();
    }

    // ----- graph forms agree with the plain forms -----

    fn latent_matrix(g: &mut veracity_autodiff::Graph, rows: &[Vec<f64>], valid: &[bool]) -> crate::encoders::LatentMatrix {
        crate::encoders::LatentMatrix {
            rows: rows
                .iter()
                .map(|r| g.constant(&Tensor::vector(r.clone())))
                .collect(),
            valid: valid.to_vec(),
        }
    }

    #[test]
    fn graph_losses_match_plain_losses() {
        let mut rng_state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for case in 0..20 {
            let s = 2 + case % 4;
            let l = 3 + case % 3;
            let article: Vec<f64> = (0..l).map(|_| next()).collect();
            let rows: Vec<Vec<f64>> = (0..s).map(|_| (0..l).map(|_| next()).collect()).collect();
            let valid: Vec<bool> = (0..s).map(|i| i != 1 || case % 2 == 0).collect();

            let mut pd = DistanceDiagnostics::default();
            let plain_au = article_user_loss(&article, &rows, &valid, &mut pd).unwrap();
            let plain_uu = user_user_loss(&rows, &valid, &mut pd).unwrap();

            let mut g = veracity_autodiff::Graph::new();
            let a = g.constant(&Tensor::vector(article.clone()));
            let matrix = latent_matrix(&mut g, &rows, &valid);
            let mut gd = DistanceDiagnostics::default();
            let au = article_user_loss_node(&mut g, a, &matrix, &mut gd).unwrap();
            let uu = user_user_loss_node(&mut g, &matrix, &mut gd).unwrap();
            assert_abs_diff_eq!(g.value(au), plain_au, epsilon = 1e-12);
            assert_abs_diff_eq!(g.value(uu), plain_uu, epsilon = 1e-12);
        }
    }

    #[test]
    fn graph_user_user_matches_worked_example() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s]];
        let mut g = veracity_autodiff::Graph::new();
        let matrix = latent_matrix(&mut g, &rows, &[true; 3]);
        let mut d = diag();
        let uu = user_user_loss_node(&mut g, &matrix, &mut d).unwrap();
        assert_abs_diff_eq!(g.value(uu), 0.528595, epsilon = 1e-6);
    }

    #[test]
    fn graph_empty_subset_losses_are_exactly_zero() {
        let mut g = veracity_autodiff::Graph::new();
        let a = g.constant(&Tensor::vector(vec![1.0, 0.0]));
        let matrix = latent_matrix(&mut g, &vec![vec![0.0, 0.0]; 3], &[false; 3]);
        let mut d = diag();
        let au = article_user_loss_node(&mut g, a, &matrix, &mut d).unwrap();
        let uu = user_user_loss_node(&mut g, &matrix, &mut d).unwrap();
        assert_eq!(g.value(au), 0.0);
        assert_eq!(g.value(uu), 0.0);
    }

    #[test]
    fn losses_stay_in_unit_cosine_range() {
        let mut d = diag();
        for seed in 0..50u64 {
            let mut state = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(1);
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
            };
            let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| next()).collect()).collect();
            let article: Vec<f64> = (0..5).map(|_| next()).collect();
            let au = article_user_loss(&article, &rows, &[true; 4], &mut d).unwrap();
            let uu = user_user_loss(&rows, &[true; 4], &mut d).unwrap();
            assert!((0.0..=2.0).contains(&au));
            assert!((0.0..=2.0).contains(&uu));
        }
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let opts = veracity_autodiff::GradCheckOptions::default();
        let inputs = [
            Tensor::vector(vec![0.4, -0.8, 1.3]),
            Tensor::vector(vec![-1.1, 0.2, 0.5]),
        ];
        let err = veracity_autodiff::grad_check(
            |g, ids| {
                let mut d = DistanceDiagnostics::default();
                cosine_distance_node(g, ids[0], ids[1], &mut d)
                    .map_err(|_| veracity_autodiff::TensorError::Contract {
                        op: "cosine",
                        msg: "loss error".into(),
                    })
            },
            &inputs,
            &opts,
        )
        .unwrap();
        assert!(err < 1e-6, "cosine grad check error {err:e}");
    }
}
