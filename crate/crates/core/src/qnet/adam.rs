use super::{NetworkParams, QNetError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates with the same shape as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: NetworkParams,
    pub second_moment: NetworkParams,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update:
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// θ ← θ − lr · (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε)
/// ```
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    adam: &mut AdamState,
    lr: f64,
) -> Result<(), QNetError> {
    if !params.same_shape(grads) || !params.same_shape(&adam.first_moment) {
        return Err(QNetError::Shape(
            "adam step between different shapes".into(),
        ));
    }
    adam.step_count += 1;
    let t = adam.step_count as i32;
    let (b1, b2, eps) = (adam.beta1, adam.beta2, adam.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);

    let moments = adam
        .first_moment
        .tensors_mut()
        .into_iter()
        .zip(adam.second_moment.tensors_mut());
    for ((p, g), (m, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(moments)
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::{init_params, HeadActivation, NetDims};

    fn dims() -> NetDims {
        NetDims {
            features: 2,
            lstm1: 2,
            lstm2: 2,
            position: 2,
            merge1: 2,
            merge2: 2,
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_moments() {
        let mut p = init_params(dims(), HeadActivation::Linear, 1);
        let before = p.clone();
        let g = p.zeros_like();
        let mut adam = AdamState::new(&p);
        adam_step(&mut p, &g, &mut adam, 0.001).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.first_moment, g);
        assert_eq!(adam.second_moment, g);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = init_params(dims(), HeadActivation::Linear, 1);
        let start = p.head.b[1];
        let mut g = p.zeros_like();
        let grad = 0.37;
        g.head.b[1] = grad;
        let mut adam = AdamState::new(&p);
        let lr = 0.001;
        adam_step(&mut p, &g, &mut adam, lr).unwrap();
        // after bias correction m̂ = g and v̂ = g², so the step is lr·g/(|g|+ε)
        let expected = start - lr * grad / (grad.abs() + ADAM_EPS);
        assert!((p.head.b[1] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = init_params(dims(), HeadActivation::Linear, 1);
        let mut g = p.zeros_like();
        g.head.w[0] = -2.5;
        let mut adam = AdamState::new(&p);
        let mut last = p.head.w[0];
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut adam, 0.01).unwrap();
            assert!(p.head.w[0] > last);
            last = p.head.w[0];
        }
        assert_eq!(adam.step_count, 10);
    }
}
