//! A small reverse-mode tape over [`Tensor`]s plus the named parameter store
//! that models bind into it.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Computes parent gradients from `(grad_out, parent values, output value,
/// which parents need a gradient)`.
pub type BackwardFn<T> =
    Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<Var>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad: true,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as a constant (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad: false,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an operation. The backward closure is skipped entirely when no
    /// parent requires a gradient.
    pub fn push(&mut self, value: Tensor<T>, parents: &[Var], backward: BackwardFn<T>) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.to_vec(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Back-propagates from a scalar node. Returns one optional gradient per
    /// node, indexed by [`Var::index`].
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_shape = self.shape(root);
        if root_shape.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got {root_shape}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_shape, T::ONE));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(bw) = &node.backward {
                let inputs: Vec<&Tensor<T>> =
                    node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let needs: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|p| self.nodes[p.0].requires_grad)
                    .collect();
                let pg = bw(&g, &inputs, &node.value, &needs);
                for ((p, gp), need) in node.parents.iter().zip(pg).zip(&needs) {
                    let (Some(gp), true) = (gp, *need) else { continue };
                    match &mut grads[p.0] {
                        Some(acc) => acc.add_assign(&gp),
                        slot => *slot = Some(gp),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    // ---- element-wise ------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("add: {sa} vs {sb}")));
        }
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(
            v,
            &[a, b],
            Box::new(|g, _, _, need| {
                vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(
            v,
            &[a],
            Box::new(move |g, _, _, _| vec![Some(g.map(|x| x * s))]),
        )
    }

    /// `0.5 * (a + b)`
    pub fn average(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.add(a, b)?;
        Ok(self.scale(s, T::from_f64(0.5)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(T::ZERO));
        self.push(
            v,
            &[a],
            Box::new(|g, _, out, _| {
                let mut d = g.clone();
                for (d, &o) in d.data_mut().iter_mut().zip(out.data()) {
                    if o <= T::ZERO {
                        *d = T::ZERO;
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(kernels::sigmoid);
        self.push(
            v,
            &[a],
            Box::new(|g, _, out, _| {
                let mut d = g.clone();
                for (d, &o) in d.data_mut().iter_mut().zip(out.data()) {
                    *d *= o * (T::ONE - o);
                }
                vec![Some(d)]
            }),
        )
    }

    /// `x * a` where `a` is a single-channel map broadcast over `x`'s channels.
    pub fn mul_channel_map(&mut self, x: Var, a: Var) -> Result<Var> {
        let (sx, sa) = (self.shape(x), self.shape(a));
        if sa != sx.with_c(1) {
            return Err(Error::Shape(format!(
                "mul_channel_map: map {sa} incompatible with {sx}"
            )));
        }
        let c = sx.c();
        let mut v = self.value(x).clone();
        for (row, &m) in v.data_mut().chunks_exact_mut(c).zip(self.value(a).data()) {
            for e in row {
                *e *= m;
            }
        }
        Ok(self.push(
            v,
            &[x, a],
            Box::new(move |g, ins, _, need| {
                let dx = need[0].then(|| {
                    let mut d = g.clone();
                    for (row, &m) in d.data_mut().chunks_exact_mut(c).zip(ins[1].data()) {
                        for e in row {
                            *e *= m;
                        }
                    }
                    d
                });
                let da = need[1].then(|| {
                    let mut d = Tensor::zeros(ins[1].shape());
                    for ((o, gr), xr) in d
                        .data_mut()
                        .iter_mut()
                        .zip(g.data().chunks_exact(c))
                        .zip(ins[0].data().chunks_exact(c))
                    {
                        *o = gr.iter().zip(xr).map(|(&a, &b)| a * b).sum();
                    }
                    d
                });
                vec![dx, da]
            }),
        ))
    }

    // ---- convolution -------------------------------------------------------

    pub fn depthwise_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        if sk.n() != 1 || sk.h() != sk.w() || sk.h() % 2 == 0 || sk.c() != sx.c() {
            return Err(Error::Shape(format!(
                "depthwise kernel {sk} incompatible with input {sx}"
            )));
        }
        let v = kernels::depthwise_conv(self.value(x), self.value(kernel));
        Ok(self.push(
            v,
            &[x, kernel],
            Box::new(|g, ins, _, need| {
                let (dx, dk) = kernels::depthwise_conv_backward(ins[0], ins[1], g, need[0]);
                vec![dx, Some(dk)]
            }),
        ))
    }

    /// 1x1 convolution (or dense layer on `(n,1,1,d)` inputs).
    pub fn pointwise(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sw.n() != sx.c() || sw.h() != 1 || sw.w() != 1 {
            return Err(Error::Shape(format!(
                "pointwise weight {sw} incompatible with input {sx}"
            )));
        }
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb != Shape::new(1, 1, 1, sw.c()) {
                return Err(Error::Shape(format!("pointwise bias {sb} for weight {sw}")));
            }
        }
        let v = kernels::pointwise(self.value(x), self.value(w), b.map(|b| self.value(b)));
        let parents: Vec<Var> = match b {
            Some(b) => vec![x, w, b],
            None => vec![x, w],
        };
        Ok(self.push(
            v,
            &parents,
            Box::new(|g, ins, _, need| {
                let (dx, dw, db) = kernels::pointwise_backward(ins[0], ins[1], g, need[0]);
                let mut out = vec![dx, Some(dw)];
                if ins.len() == 3 {
                    out.push(Some(db));
                }
                out
            }),
        ))
    }

    // ---- normalisation -----------------------------------------------------

    /// Training-mode batch normalisation. Returns the output and the batch
    /// `(mean, variance)` used, for running-statistics updates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let sx = self.shape(x);
        if sx.n() < 2 {
            return Err(Error::Shape(format!(
                "batch_norm in training mode needs batch >= 2, got {sx}"
            )));
        }
        let (mean, var) = kernels::channel_stats(self.value(x));
        let eps_t = T::from_f64(eps);
        let invstd: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();
        let out = kernels::affine_normalize(
            self.value(x),
            &mean,
            &invstd,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let (m2, i2) = (mean.clone(), invstd);
        let v = self.push(
            out,
            &[x, gamma, beta],
            Box::new(move |g, ins, _, _| {
                let (dx, dg, db) =
                    kernels::batch_norm_train_backward(ins[0], &m2, &i2, ins[1].data(), g);
                let c = dg.len();
                vec![
                    Some(dx),
                    Tensor::from_vec(Shape::new(1, 1, 1, c), dg).ok(),
                    Tensor::from_vec(Shape::new(1, 1, 1, c), db).ok(),
                ]
            }),
        );
        Ok((v, mean, var))
    }

    /// Inference-mode batch normalisation with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Var {
        let eps_t = T::from_f64(eps);
        let invstd: Vec<T> = running_var
            .iter()
            .map(|&v| T::ONE / (v + eps_t).sqrt())
            .collect();
        let mean = running_mean.to_vec();
        let out = kernels::affine_normalize(
            self.value(x),
            &mean,
            &invstd,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        self.push(
            out,
            &[x, gamma, beta],
            Box::new(move |g, ins, _, _| {
                let c = mean.len();
                let gamma = ins[1].data();
                let mut dx = g.clone();
                let mut dg = vec![T::ZERO; c];
                let mut db = vec![T::ZERO; c];
                for ((drow, grow), xrow) in dx
                    .data_mut()
                    .chunks_exact_mut(c)
                    .zip(g.data().chunks_exact(c))
                    .zip(ins[0].data().chunks_exact(c))
                {
                    for ch in 0..c {
                        drow[ch] = grow[ch] * gamma[ch] * invstd[ch];
                        dg[ch] += grow[ch] * (xrow[ch] - mean[ch]) * invstd[ch];
                        db[ch] += grow[ch];
                    }
                }
                vec![
                    Some(dx),
                    Tensor::from_vec(Shape::new(1, 1, 1, c), dg).ok(),
                    Tensor::from_vec(Shape::new(1, 1, 1, c), db).ok(),
                ]
            }),
        )
    }

    // ---- spatial -----------------------------------------------------------

    fn check_even(&self, x: Var, what: &str) -> Result<Shape> {
        let s = self.shape(x);
        if s.h() % 2 != 0 || s.w() % 2 != 0 {
            return Err(Error::Shape(format!("{what} needs even spatial dims, got {s}")));
        }
        Ok(s)
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.check_even(x, "max_pool2")?;
        let (v, arg) = kernels::max_pool2(self.value(x));
        Ok(self.push(
            v,
            &[x],
            Box::new(move |g, _, _, _| vec![Some(kernels::scatter_argmax(s, &arg, g))]),
        ))
    }

    pub fn max_pool3_same(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (v, arg) = kernels::max_pool3_same(self.value(x));
        self.push(
            v,
            &[x],
            Box::new(move |g, _, _, _| vec![Some(kernels::scatter_argmax(s, &arg, g))]),
        )
    }

    pub fn spectral_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.check_even(x, "spectral_pool")?;
        let v = kernels::spectral_pool(self.value(x));
        Ok(self.push(
            v,
            &[x],
            Box::new(move |g, _, _, _| vec![Some(kernels::spectral_pool_backward(s, g))]),
        ))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let v = kernels::upsample2(self.value(x));
        self.push(
            v,
            &[x],
            Box::new(move |g, _, _, _| vec![Some(kernels::upsample2_backward(s, g))]),
        )
    }

    pub fn subsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.check_even(x, "subsample2")?;
        let v = kernels::subsample2(self.value(x));
        Ok(self.push(
            v,
            &[x],
            Box::new(move |g, _, _, _| vec![Some(kernels::subsample2_backward(s, g))]),
        ))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let s0 = self.shape(xs[0]);
        for &x in xs {
            let s = self.shape(x);
            if s.with_c(1) != s0.with_c(1) {
                return Err(Error::Shape(format!("concat: {s0} vs {s}")));
            }
        }
        let widths: Vec<usize> = xs.iter().map(|&x| self.shape(x).c()).collect();
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&x| self.value(x)).collect();
        let v = kernels::concat_channels(&vals);
        Ok(self.push(
            v,
            xs,
            Box::new(move |g, _, _, _| {
                kernels::split_channels(g, &widths).into_iter().map(Some).collect()
            }),
        ))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let v = kernels::global_avg_pool(self.value(x));
        self.push(
            v,
            &[x],
            Box::new(move |g, _, _, _| vec![Some(kernels::global_avg_pool_backward(s, g))]),
        )
    }

    /// Scalar node with a precomputed gradient w.r.t. each input:
    /// `d out / d inputs[i] = grads[i]`.
    pub fn scalar_with_grads(&mut self, value: T, inputs: &[Var], grads: Vec<Tensor<T>>) -> Var {
        self.push(
            Tensor::scalar(value),
            inputs,
            Box::new(move |g, _, _, _| {
                let s = g.data()[0];
                grads.iter().map(|gr| Some(gr.map(|v| v * s))).collect()
            }),
        )
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Whether a stored tensor is optimised or is bookkeeping state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    /// Running statistics; updated by forward passes, not by the optimiser.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
}

/// Ordered map of uniquely named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, ParamEntry<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, kind: ParamKind) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, ParamEntry { tensor, kind });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// Number of trainable scalars.
    pub fn num_weights(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Entries whose name starts with `prefix`, in insertion order.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Appends all entries of `other`; names must not collide.
    pub fn extend(&mut self, other: ParamStore<T>) -> Result<()> {
        for (k, v) in other.entries {
            self.insert(k, v.tensor, v.kind)?;
        }
        Ok(())
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        ParamEntry {
                            tensor: e.tensor.cast(),
                            kind: e.kind,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// A pending running-statistics update produced by a training-mode forward.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub prefix: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// A tape bound to a parameter store for one forward/backward pair.
/// Parameters are bound once per name, so every use of a name shares a
/// single leaf and its gradient accumulates.
pub struct Graph<'p, T: Real> {
    pub tape: Tape<T>,
    params: &'p ParamStore<T>,
    bound: IndexMap<String, Var>,
    training: bool,
    stat_updates: Vec<StatUpdate<T>>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>, training: bool) -> Self {
        Graph {
            tape: Tape::new(),
            params,
            bound: IndexMap::new(),
            training,
            stat_updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    /// Leaf for a stored weight.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.params.require(name)?.clone();
        let v = self.tape.leaf(t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, x: Tensor<T>) -> Var {
        self.tape.constant(x)
    }

    pub fn record_stats(&mut self, update: StatUpdate<T>) {
        self.stat_updates.push(update);
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.tape.shape(v)
    }

    /// Back-propagates from `loss` and returns gradients for every bound
    /// parameter, keyed by name.
    pub fn param_grads(&self, loss: Var) -> Result<IndexMap<String, Tensor<T>>> {
        let mut grads = self.tape.backward(loss)?;
        let mut out = IndexMap::new();
        for (name, &v) in &self.bound {
            let g = grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(self.tape.shape(v)));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

/// Folds pending updates into running statistics:
/// `running = momentum * running + (1 - momentum) * batch`.
pub fn apply_stat_updates<T: Real>(
    store: &mut ParamStore<T>,
    updates: &[StatUpdate<T>],
    momentum: f64,
) -> Result<()> {
    let mo = T::from_f64(momentum);
    let one_m = T::from_f64(1.0 - momentum);
    for u in updates {
        for (suffix, vals) in [("running_mean", &u.mean), ("running_var", &u.var)] {
            let name = format!("{}/{suffix}", u.prefix);
            let t = store
                .get_mut(&name)
                .ok_or_else(|| Error::Config(format!("missing buffer `{name}`")))?;
            for (r, &b) in t.data_mut().iter_mut().zip(vals.iter()) {
                *r = mo * *r + one_m * b;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_leaf_accumulates() {
        let mut store = ParamStore::<f64>::new();
        store
            .insert("w", Tensor::scalar(3.0), ParamKind::Weight)
            .unwrap();
        let mut g = Graph::new(&store, true);
        let a = g.param("w").unwrap();
        let b = g.param("w").unwrap();
        assert_eq!(a, b);
        let s = g.tape.add(a, b).unwrap();
        let grads = g.param_grads(s).unwrap();
        assert_eq!(grads["w"].data(), &[2.0]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.insert("a", Tensor::scalar(1.0), ParamKind::Weight).unwrap();
        assert!(store.insert("a", Tensor::scalar(1.0), ParamKind::Weight).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(2.0));
        let w = tape.leaf(Tensor::scalar(5.0));
        let y = tape.add(x, w).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[1.0]);
    }
}
