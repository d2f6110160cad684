#![allow(dead_code)]

use btunet::autodiff::{Graph, ParamKind, ParamStore, Var};
use btunet::{Result, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Reduces a node to a scalar with a fixed pseudo-random weighting so every
/// output element contributes a distinct gradient.
pub fn weighted_sum(g: &mut Graph<f64>, v: Var) -> Var {
    let out = g.value(v).clone();
    let mut r = rng(0xfeed);
    let w = random_tensor(out.shape(), &mut r, 1.0);
    let value: f64 = out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    g.tape.scalar_with_grads(value, &[v], vec![w])
}

/// `||a - b|| / max(||a||, ||b||, tiny)`.
pub fn normwise_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-30)
}

pub struct GradCheck {
    pub rel_err: f64,
    pub checked: usize,
}

/// Compares back-propagated parameter gradients of `f` with central finite
/// differences on at most `max_coords` randomly chosen weight coordinates.
pub fn check_param_grads<F>(store: &ParamStore<f64>, training: bool, max_coords: usize, f: F) -> GradCheck
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> f64 {
        let mut g = Graph::new(s, training);
        let out = f(&mut g).unwrap();
        let l = weighted_sum(&mut g, out);
        g.value(l).data()[0]
    };
    let grads = {
        let mut g = Graph::new(store, training);
        let out = f(&mut g).unwrap();
        let l = weighted_sum(&mut g, out);
        g.param_grads(l).unwrap()
    };
    let mut coords = Vec::new();
    for (name, e) in store.iter() {
        if e.kind == ParamKind::Weight && grads.contains_key(name) {
            for i in 0..e.tensor.len() {
                coords.push((name.to_string(), i));
            }
        }
    }
    let mut r = rng(7);
    while coords.len() > max_coords {
        let k = r.random_range(0..coords.len());
        coords.swap_remove(k);
    }
    let h = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (name, i) in &coords {
        analytic.push(grads[name.as_str()].data()[*i]);
        let mut s = store.clone();
        let base = s.get(name).unwrap().data()[*i];
        s.get_mut(name).unwrap().data_mut()[*i] = base + h;
        let up = eval(&s);
        s.get_mut(name).unwrap().data_mut()[*i] = base - h;
        let down = eval(&s);
        numeric.push((up - down) / (2.0 * h));
    }
    GradCheck {
        rel_err: normwise_rel_err(&analytic, &numeric),
        checked: coords.len(),
    }
}

/// Registers `x` as a trainable input so input gradients are checked too.
pub fn with_input(store: &mut ParamStore<f64>, name: &str, x: Tensor<f64>) {
    store.insert(name, x, ParamKind::Weight).unwrap();
}

/// Central-difference gradient of a scalar function of a vector.
pub fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let b = v[i];
            v[i] = b + h;
            let up = f(&v);
            v[i] = b - h;
            let down = f(&v);
            v[i] = b;
            (up - down) / (2.0 * h)
        })
        .collect()
}
