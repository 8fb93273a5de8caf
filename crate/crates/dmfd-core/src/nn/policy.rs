//! Squashed-Gaussian policy head.
//!
//! The head's affine output row is `[mean | raw log-std]`. Raw log-std is
//! hard-clamped to `[LOG_STD_MIN, LOG_STD_MAX]`; actions are `tanh` of the
//! Gaussian sample, and log densities carry the change-of-variables
//! correction `-ln(1 - a^2 + SQUASH_EPS)` per dimension.
//!
//! Everything here is a pure per-row function: sampling takes explicit
//! standard-normal noise so callers control the randomness, and the gradient
//! helpers return rows shaped like the head output, ready to feed
//! [`super::mlp::mlp_backward`] as upstream.

/// Hard clamp bounds for the raw log standard deviation.
pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Epsilon inside the squash correction log.
pub const SQUASH_EPS: f64 = 1e-6;
/// Stored actions are clamped to `±(1 - ATANH_MARGIN)` before `atanh`.
pub const ATANH_MARGIN: f64 = 1e-6;

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Output of one policy-head evaluation.
#[derive(Debug, Clone)]
pub struct GaussianPolicyOutput {
    pub mean: Vec<f64>,
    /// Clamped log standard deviations.
    pub log_std: Vec<f64>,
    /// Squashed action, each component in `(-1, 1)`.
    pub action: Vec<f64>,
    /// Pre-squash Gaussian sample.
    pub pre_tanh: Vec<f64>,
    /// Log density of `action` under the squashed Gaussian (summed over
    /// dimensions).
    pub log_prob: f64,
}

#[inline]
pub fn clamp_log_std(raw: f64) -> f64 {
    raw.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

#[inline]
fn clamp_grad_mask(raw: f64) -> f64 {
    if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
        1.0
    } else {
        0.0
    }
}

/// Splits a head output row into `(mean, raw_log_std)`.
pub fn split_head(row: &[f64]) -> (&[f64], &[f64]) {
    assert!(row.len() % 2 == 0, "policy head row must have even length");
    row.split_at(row.len() / 2)
}

/// Per-dimension log density of the pre-squash value `u` plus squash
/// correction for `a = tanh(u)`.
#[inline]
fn log_prob_dim(u: f64, mean: f64, log_std: f64, a: f64) -> f64 {
    let std = log_std.exp();
    let z = (u - mean) / std;
    -0.5 * z * z - log_std - 0.5 * LN_2PI - (1.0 - a * a + SQUASH_EPS).ln()
}

/// Samples an action given a head output row and standard-normal noise.
pub fn sample(row: &[f64], noise: &[f64]) -> GaussianPolicyOutput {
    let (mean, raw) = split_head(row);
    assert_eq!(noise.len(), mean.len(), "noise length != action dim");
    let mut log_std = Vec::with_capacity(mean.len());
    let mut pre = Vec::with_capacity(mean.len());
    let mut action = Vec::with_capacity(mean.len());
    let mut log_prob = 0.0;
    for j in 0..mean.len() {
        let ls = clamp_log_std(raw[j]);
        let u = mean[j] + ls.exp() * noise[j];
        let a = u.tanh();
        log_prob += log_prob_dim(u, mean[j], ls, a);
        log_std.push(ls);
        pre.push(u);
        action.push(a);
    }
    GaussianPolicyOutput {
        mean: mean.to_vec(),
        log_std,
        action,
        pre_tanh: pre,
        log_prob,
    }
}

/// Deterministic (evaluation) action: `tanh(mean)`.
pub fn mean_action(row: &[f64]) -> Vec<f64> {
    let (mean, _) = split_head(row);
    mean.iter().map(|m| m.tanh()).collect()
}

/// Log density of a stored action under the head output.
///
/// The action is clamped to `±(1 - ATANH_MARGIN)` before inverting the
/// squash so saturated (clipped) expert actions stay finite.
pub fn log_prob_of_action(row: &[f64], action: &[f64]) -> f64 {
    let (mean, raw) = split_head(row);
    assert_eq!(action.len(), mean.len());
    let mut log_prob = 0.0;
    for j in 0..mean.len() {
        let ls = clamp_log_std(raw[j]);
        let a = action[j].clamp(-(1.0 - ATANH_MARGIN), 1.0 - ATANH_MARGIN);
        let u = a.atanh();
        log_prob += log_prob_dim(u, mean[j], ls, a);
    }
    log_prob
}

/// Log density of a stored action plus its gradient with respect to the head
/// output row. Returns `(log_prob, d log_prob / d row)`.
///
/// Only the Gaussian factor depends on the parameters (the squash correction
/// is a function of the fixed action), so the gradient is the classic
/// `dlogN/dmean = z/std`, `dlogN/dlogstd = z^2 - 1`, with the log-std half
/// masked wherever the raw value sits outside the clamp range.
pub fn grad_log_prob_of_action(row: &[f64], action: &[f64]) -> (f64, Vec<f64>) {
    let (mean, raw) = split_head(row);
    let dim = mean.len();
    let mut grad = vec![0.0; 2 * dim];
    let mut log_prob = 0.0;
    for j in 0..dim {
        let ls = clamp_log_std(raw[j]);
        let std = ls.exp();
        let a = action[j].clamp(-(1.0 - ATANH_MARGIN), 1.0 - ATANH_MARGIN);
        let u = a.atanh();
        let z = (u - mean[j]) / std;
        log_prob += log_prob_dim(u, mean[j], ls, a);
        grad[j] = z / std;
        grad[dim + j] = (z * z - 1.0) * clamp_grad_mask(raw[j]);
    }
    (log_prob, grad)
}

/// Log density of the *reparameterized* sample `a = tanh(mean + std * n)`
/// together with its gradient through the sample. Returns
/// `(log_prob, d log_prob / d row, action)`.
///
/// With `z = n` fixed, the Gaussian factor reduces to `-logstd + const`, and
/// the squash correction is differentiated through `u = mean + std * n`:
/// `d/du [-ln(1 - tanh(u)^2 + eps)] = 2 tanh(u)(1 - tanh(u)^2)/(1 - tanh(u)^2 + eps)`.
pub fn grad_log_prob_reparam(row: &[f64], noise: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (mean, raw) = split_head(row);
    let dim = mean.len();
    assert_eq!(noise.len(), dim);
    let mut grad = vec![0.0; 2 * dim];
    let mut action = Vec::with_capacity(dim);
    let mut log_prob = 0.0;
    for j in 0..dim {
        let ls = clamp_log_std(raw[j]);
        let std = ls.exp();
        let u = mean[j] + std * noise[j];
        let t = u.tanh();
        let one_m_t2 = 1.0 - t * t;
        log_prob += -ls - 0.5 * noise[j] * noise[j] - 0.5 * LN_2PI - (one_m_t2 + SQUASH_EPS).ln();
        let dcorr_du = 2.0 * t * one_m_t2 / (one_m_t2 + SQUASH_EPS);
        grad[j] = dcorr_du;
        grad[dim + j] = (-1.0 + dcorr_du * std * noise[j]) * clamp_grad_mask(raw[j]);
        action.push(t);
    }
    (log_prob, grad, action)
}

/// Reparameterized action and its diagonal Jacobian with respect to the head
/// output row: returns `(action, da/dmean, da/dlogstd_raw)`. Used to push a
/// critic's action gradient back into the policy.
pub fn action_jacobian(row: &[f64], noise: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mean, raw) = split_head(row);
    let dim = mean.len();
    let mut action = Vec::with_capacity(dim);
    let mut d_mean = Vec::with_capacity(dim);
    let mut d_raw = Vec::with_capacity(dim);
    for j in 0..dim {
        let ls = clamp_log_std(raw[j]);
        let std = ls.exp();
        let u = mean[j] + std * noise[j];
        let t = u.tanh();
        let one_m_t2 = 1.0 - t * t;
        action.push(t);
        d_mean.push(one_m_t2);
        d_raw.push(one_m_t2 * std * noise[j] * clamp_grad_mask(raw[j]));
    }
    (action, d_mean, d_raw)
}
