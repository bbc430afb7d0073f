//! Numeric building blocks with explicit backward passes.

use ndarray::{Array1, Array2, ArrayD, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const LN_EPS: f64 = 1e-5;

/// A named, ordered collection of parameter tensors. Gradients use the same
/// type, so two instances line up tensor by tensor.
pub trait Params {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    fn fill_zero(&mut self) {
        for (_, mut t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += other`, tensor by tensor.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a += &b;
        }
    }

    fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.tensors_mut() {
            t *= factor;
        }
    }
}

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("std is positive");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sum(exp(row)))` computed stably.
pub fn log_sum_exp(row: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = row.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    max + row.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Row-wise layer normalization.
pub fn layer_norm(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * inv_std.view().insert_axis(Axis(1));
    let y = &xhat * gamma + beta;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns dx and accumulates into dgamma/dbeta.
pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    gamma: &Array1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    *dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0));
    let dxhat = dy * gamma;
    let d = dy.ncols() as f64;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat;
    Zip::from(dx.rows_mut())
        .and(cache.xhat.rows())
        .and(&mean_dxhat)
        .and(&mean_dxhat_xhat)
        .and(&cache.inv_std)
        .for_each(|mut row, xh, &m1, &m2, &s| {
            Zip::from(&mut row).and(&xh).for_each(|g, &xv| {
                *g = s * (*g - m1 - xv * m2);
            });
        });
    dx
}

/// Adam with bias correction and optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update<P: Params>(&mut self, params: &mut P, grads: &P) {
        let grads = grads.tensors();
        if self.m.is_empty() {
            self.m = grads.iter().map(|(_, g)| ArrayD::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = grads
                    .iter()
                    .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((_, mut p), (_, g)), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(&mut p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g * scale;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}

/// Below this gradient norm a tensor is compared in absolute terms; its exact
/// gradient may be zero (e.g. attention key biases), leaving only roundoff.
pub const GRAD_CHECK_NORM_FLOOR: f64 = 1e-5;

/// Central-difference gradient check. Returns the worst tensor's
/// `||analytic - numeric|| / max(||analytic|| + ||numeric||, GRAD_CHECK_NORM_FLOOR)`
/// and its name.
pub fn max_relative_error<P: Params + Clone>(params: &P, analytic: &P, loss: impl Fn(&P) -> f64) -> (f64, String) {
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].1.len();
        let mut num = Vec::with_capacity(len);
        let mut p = params.clone();
        for i in 0..len {
            let orig = p.tensors()[t].1.iter().nth(i).copied().unwrap();
            let set = |p: &mut P, v: f64| {
                *p.tensors_mut()[t].1.iter_mut().nth(i).unwrap() = v;
            };
            set(&mut p, orig + h);
            let up = loss(&p);
            set(&mut p, orig - h);
            let down = loss(&p);
            set(&mut p, orig);
            num.push((up - down) / (2.0 * h));
        }
        let (name, a) = &analytic.tensors()[t];
        let diff: f64 = a.iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = num.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff / (na + nn).max(GRAD_CHECK_NORM_FLOOR);
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, name.clone());
        }
    }
    worst
}
