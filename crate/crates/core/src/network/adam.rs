use std::collections::BTreeMap;

use super::tensor::{Param, Real};

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

/// Adam with bias correction. Moment estimates and step counts are tracked per
/// parameter name, so parameters that join training late start from step 0.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, state: BTreeMap::new() }
    }

    /// Applies one update to each given parameter from its accumulated gradient.
    pub fn step(&mut self, params: Vec<(String, &mut Param<T>)>) {
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one_m_b1, one_m_b2) = (T::one() - b1, T::one() - b2);
        for (name, p) in params {
            let st = self.state.entry(name).or_insert_with(|| Moments {
                m: vec![T::zero(); p.value.len()],
                v: vec![T::zero(); p.value.len()],
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - self.beta1.powi(st.t as i32);
            let c2 = 1.0 - self.beta2.powi(st.t as i32);
            let step = T::from_f64(self.lr / c1);
            let c2 = T::from_f64(c2);
            let eps = T::from_f64(self.eps);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                st.m[i] = b1 * st.m[i] + one_m_b1 * g;
                st.v[i] = b2 * st.v[i] + one_m_b2 * g * g;
                p.value[i] = p.value[i] - step * st.m[i] / ((st.v[i] / c2).sqrt() + eps);
            }
        }
    }

    pub fn steps_taken(&self, name: &str) -> u64 {
        self.state.get(name).map_or(0, |s| s.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::new(&[2], vec![1.0f64, -1.0]);
        p.grad = vec![0.5, -3.0];
        let mut opt = Adam::new(0.001);
        opt.step(vec![("w".into(), &mut p)]);
        assert!((p.value[0] - (1.0 - 0.001)).abs() < 1e-9);
        assert!((p.value[1] - (-1.0 + 0.001)).abs() < 1e-9);
        assert_eq!(opt.steps_taken("w"), 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new(&[1], vec![3.0f64]);
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            p.grad[0] = 2.0 * (p.value[0] - 1.0);
            opt.step(vec![("x".into(), &mut p)]);
        }
        assert!((p.value[0] - 1.0).abs() < 1e-3);
    }
}
