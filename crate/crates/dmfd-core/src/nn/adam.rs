//! Adam optimizer over a [`ParamSet`].
//!
//! Standard bias-corrected form: with step count `t`, moments
//! `m = b1*m + (1-b1)*g` and `v = b2*v + (1-b2)*g^2`, the update is
//! `p -= lr * mhat / (sqrt(vhat) + eps)` where `mhat = m / (1 - b1^t)` and
//! `vhat = v / (1 - b2^t)`.

use super::{GradMap, NnError, ParamSet, Result};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            ..AdamParams::default()
        }
    }
}

/// One Adam step over every parameter in the set.
///
/// `grads` must provide a tensor for each parameter (zero tensors are fine
/// for parameters untouched by the loss). Moments and the step count advance
/// even at `lr = 0`, which leaves parameter *values* unchanged. Non-finite
/// gradients are rejected before any state is mutated.
pub fn adam_step(params: &mut ParamSet, grads: &GradMap, hp: AdamParams) -> Result<()> {
    // Validate first so a failed call leaves the set untouched.
    for name in params.names() {
        let g = grads
            .get(name)
            .ok_or_else(|| NnError::ShapeMismatch(format!("missing gradient for {name}")))?;
        if g.shape() != params.get(name).shape() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient shape {:?} does not match parameter {name} {:?}",
                g.shape(),
                params.get(name).shape()
            )));
        }
        if !g.is_finite() {
            return Err(NnError::NonFiniteGradient {
                param: name.clone(),
            });
        }
    }
    for name in grads.keys() {
        if !params.contains(name) {
            return Err(NnError::UnknownParameter {
                param: name.clone(),
            });
        }
    }

    let (entries, adam_m, adam_v, step_count) = params.moments_mut();
    *step_count += 1;
    let t = *step_count as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (name, p) in entries.iter_mut() {
        let g = &grads[name];
        let m = adam_m.get_mut(name).unwrap();
        let v = adam_v.get_mut(name).unwrap();
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        let gd = g.data();
        for i in 0..pd.len() {
            md[i] = hp.beta1 * md[i] + (1.0 - hp.beta1) * gd[i];
            vd[i] = hp.beta2 * vd[i] + (1.0 - hp.beta2) * gd[i] * gd[i];
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            pd[i] -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_mlp_params, Activation, MlpSpec, OutputHead};
    use crate::rng::rng_from_seed;
    use crate::tensor::Tensor;

    fn one_param_set(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(&[1], vec![value]));
        p
    }

    /// Independent two-step Adam trace computed longhand, used as the
    /// oracle for the update arithmetic.
    fn adam_trace(p0: f64, g: [f64; 2], hp: AdamParams) -> f64 {
        let (mut p, mut m, mut v) = (p0, 0.0f64, 0.0f64);
        for (i, gi) in g.iter().enumerate() {
            let t = (i + 1) as i32;
            m = hp.beta1 * m + (1.0 - hp.beta1) * gi;
            v = hp.beta2 * v + (1.0 - hp.beta2) * gi * gi;
            let mhat = m / (1.0 - hp.beta1.powi(t));
            let vhat = v / (1.0 - hp.beta2.powi(t));
            p -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
        }
        p
    }

    #[test]
    fn zero_gradients_leave_values_but_advance_count() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh, OutputHead::Linear);
        let mut params = init_mlp_params(&spec, &mut rng_from_seed(0));
        let before = params.entries().clone();
        let grads = params.zero_grads();
        adam_step(&mut params, &grads, AdamParams::default()).unwrap();
        assert_eq!(params.entries(), &before);
        assert_eq!(params.step_count(), 1);
    }

    #[test]
    fn lr_zero_is_identity_on_values() {
        let mut params = one_param_set(0.5);
        let mut grads = GradMap::new();
        grads.insert("w".into(), Tensor::from_vec(&[1], vec![2.0]));
        adam_step(&mut params, &grads, AdamParams::with_lr(0.0)).unwrap();
        assert_eq!(params.get("w").data()[0], 0.5);
        assert_eq!(params.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // With fresh moments, mhat = g, vhat = g^2, so the first update is
        // lr * g / (|g| + eps) — magnitude ~ lr regardless of g's scale.
        let hp = AdamParams::with_lr(1e-3);
        for &g in &[0.013f64, -4.0, 250.0] {
            let mut params = one_param_set(1.0);
            let mut grads = GradMap::new();
            grads.insert("w".into(), Tensor::from_vec(&[1], vec![g]));
            adam_step(&mut params, &grads, hp).unwrap();
            let delta = params.get("w").data()[0] - 1.0;
            let expected = -hp.lr * g / (g.abs() + hp.eps);
            assert!((delta - expected).abs() < 1e-15);
            assert!((delta.abs() - hp.lr).abs() < 1e-6);
        }
    }

    #[test]
    fn two_steps_match_hand_trace() {
        let hp = AdamParams::with_lr(0.01);
        let g = [0.3f64, -1.2];
        let mut params = one_param_set(0.25);
        for gi in g {
            let mut grads = GradMap::new();
            grads.insert("w".into(), Tensor::from_vec(&[1], vec![gi]));
            adam_step(&mut params, &grads, hp).unwrap();
        }
        let expected = adam_trace(0.25, g, hp);
        assert!(
            (params.get("w").data()[0] - expected).abs() < 1e-12,
            "{} vs {}",
            params.get("w").data()[0],
            expected
        );
        assert_eq!(params.step_count(), 2);
    }

    #[test]
    fn non_finite_gradient_is_rejected_with_name() {
        let mut params = one_param_set(1.0);
        let mut grads = GradMap::new();
        grads.insert("w".into(), Tensor::from_vec(&[1], vec![f64::NAN]));
        let err = adam_step(&mut params, &grads, AdamParams::default()).unwrap_err();
        match err {
            NnError::NonFiniteGradient { param } => assert_eq!(param, "w"),
            other => panic!("unexpected error {other:?}"),
        }
        // Failed step must not mutate anything.
        assert_eq!(params.get("w").data()[0], 1.0);
        assert_eq!(params.step_count(), 0);
    }

    #[test]
    fn unknown_gradient_key_is_rejected() {
        let mut params = one_param_set(1.0);
        let mut grads = GradMap::new();
        grads.insert("w".into(), Tensor::from_vec(&[1], vec![0.1]));
        grads.insert("nope".into(), Tensor::from_vec(&[1], vec![0.1]));
        let err = adam_step(&mut params, &grads, AdamParams::default()).unwrap_err();
        assert!(matches!(err, NnError::UnknownParameter { .. }));
    }
}
