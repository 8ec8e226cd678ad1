use std::f64::consts::PI;

use crate::model::Params;
use crate::scalar::Scalar;

/// `η₀ · ½(1 + cos(π·step/horizon))`, clamped to zero past the horizon.
pub fn cosine_lr(lr0: f64, step: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return lr0;
    }
    let t = (step as f64 / horizon as f64).min(1.0);
    lr0 * 0.5 * (1.0 + (PI * t).cos())
}

/// Rescale `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut Params<T>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.data().iter())
        .map(|v| v.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let k = T::of(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// SGD with heavy-ball momentum and a cosine-decayed step size.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr0: f64,
    pub momentum: f64,
    pub horizon: usize,
    step: usize,
    velocity: Option<Params<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr0: f64, momentum: f64, horizon: usize) -> Self {
        Self { lr0, momentum, horizon, step: 0, velocity: None }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.lr0, self.step, self.horizon)
    }

    /// Drop momentum for parameters that no longer exist or changed shape.
    pub fn forget(&mut self, prefix: &str) {
        if let Some(v) = &mut self.velocity {
            v.remove_prefix(prefix);
        }
    }

    /// `v ← μv + g; θ ← θ − η v` for every parameter in `grads`.
    pub fn apply(&mut self, params: &mut Params<T>, grads: &Params<T>) {
        let lr = T::of(self.lr());
        let mu = T::of(self.momentum);
        let velocity = self.velocity.get_or_insert_with(Params::default);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            let fresh = match velocity.get_mut(name) {
                Some(v) if v.shape() == g.shape() => {
                    v.data_mut().iter_mut().zip(g.data()).for_each(|(v, &g)| *v = mu * *v + g);
                    false
                }
                _ => true,
            };
            if fresh {
                velocity.insert(name.clone(), g.clone());
            }
            let v = velocity.get_mut(name).expect("inserted above");
            p.axpy(-lr, v);
        }
        self.step += 1;
    }
}
