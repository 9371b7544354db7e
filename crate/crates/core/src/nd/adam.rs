use super::{ParamStore, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        AdamState {
            first: zeros(),
            second: zeros(),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update from the accumulated gradients.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let p = store.get_mut(id);
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(w: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w)).unwrap();
        s.get_mut(id).grad = Tensor::scalar(g);
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = one(0.3, 0.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 0.01);
        adam_step(&mut s, &mut st, 0.01);
        assert_eq!(s.value(s.find("w").unwrap()).data()[0], 0.3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = one(1.0, 1.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 1e-3);
        let w = s.value(s.find("w").unwrap()).data()[0];
        assert!((w - (1.0 - 1e-3)).abs() < 1e-10, "{w}");
    }

    #[test]
    fn two_steps_follow_the_recursion() {
        let (lr, g) = (0.01, 0.5);
        let mut s = one(2.0, g);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, lr);
        adam_step(&mut s, &mut st, lr);

        let mut w = 2.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= lr * mh / (vh.sqrt() + 1e-8);
        }
        let got = s.value(s.find("w").unwrap()).data()[0];
        assert!((got - w).abs() < 1e-15, "{got} vs {w}");
    }
}
