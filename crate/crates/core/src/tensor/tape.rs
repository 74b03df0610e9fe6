//! Wengert-style tape: every op pushes its value and a closure mapping the
//! upstream gradient onto gradients for its parents. `backward` walks the
//! tape in reverse recording order.

use super::ops::{self, LayerNormCache};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps the upstream gradient to one gradient per parent, in parent order.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Result<Vec<Tensor<T>>> + Send>;

struct Node<T> {
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    is_param: bool,
}

pub struct Tape<T: Real> {
    values: Vec<Tensor<T>>,
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

/// Gradients for every parameter leaf that was recorded on the tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf. Parameters the output does not depend on get
    /// zeros.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that only evaluates; no closures or saved inputs are kept.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        parents: Vec<Var>,
        backward: Option<BackwardFn<T>>,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite value produced at tape node {}",
                self.values.len()
            )));
        }
        self.values.push(value);
        self.nodes.push(Node {
            parents,
            backward,
            is_param: false,
        });
        Ok(Var(self.values.len() - 1))
    }

    /// A trainable leaf; receives a gradient in [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.values.push(value);
        self.nodes.push(Node {
            parents: Vec::new(),
            backward: None,
            is_param: true,
        });
        Var(self.values.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.values.push(value);
        self.nodes.push(Node {
            parents: Vec::new(),
            backward: None,
            is_param: false,
        });
        Var(self.values.len() - 1)
    }

    /// Records an op whose forward value and adjoint are supplied by the caller.
    pub fn custom(
        &mut self,
        parents: &[Var],
        value: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        let bw = self.grad_enabled.then_some(backward);
        self.push(value, parents.to_vec(), bw)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let bw = self.grad_enabled.then(|| {
            let (av, bv) = (self.value(a).clone(), self.value(b).clone());
            Box::new(move |g: &Tensor<T>| {
                Ok(vec![ops::matmul_nt(g, &bv)?, ops::matmul_tn(&av, g)?])
            }) as BackwardFn<T>
        });
        self.push(out, vec![a, b], bw)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul_nt(self.value(a), self.value(b))?;
        let bw = self.grad_enabled.then(|| {
            let (av, bv) = (self.value(a).clone(), self.value(b).clone());
            Box::new(move |g: &Tensor<T>| Ok(vec![ops::matmul(g, &bv)?, ops::matmul_tn(g, &av)?]))
                as BackwardFn<T>
        });
        self.push(out, vec![a, b], bw)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = ops::transpose(self.value(x))?;
        let bw = self
            .grad_enabled
            .then(|| Box::new(|g: &Tensor<T>| Ok(vec![ops::transpose(g)?])) as BackwardFn<T>);
        self.push(out, vec![x], bw)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let bw = self
            .grad_enabled
            .then(|| Box::new(|g: &Tensor<T>| Ok(vec![g.clone(), g.clone()])) as BackwardFn<T>);
        self.push(out, vec![a, b], bw)
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims2()?;
        let bv = self.value(bias);
        if bv.len() != n {
            return Err(Error::dim("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..m {
            for (o, &b) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        let bshape = bv.shape().to_vec();
        let bw = self.grad_enabled.then(|| {
            Box::new(move |g: &Tensor<T>| {
                let mut db = vec![T::zero(); n];
                for r in 0..m {
                    for (d, &gv) in db.iter_mut().zip(g.row(r)) {
                        *d = *d + gv;
                    }
                }
                Ok(vec![g.clone(), Tensor::new(bshape.clone(), db)?])
            }) as BackwardFn<T>
        });
        self.push(out, vec![x, bias], bw)
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[C, ...]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.shape()[0];
        let bv = self.value(bias);
        if bv.len() != c {
            return Err(Error::dim("add_channel_bias", xv.shape(), bv.shape()));
        }
        let plane = xv.len() / c;
        let mut out = xv.clone();
        for (ch, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let b = bv.data()[ch];
            chunk.iter_mut().for_each(|v| *v = *v + b);
        }
        let bshape = bv.shape().to_vec();
        let bw = self.grad_enabled.then(|| {
            Box::new(move |g: &Tensor<T>| {
                let db: Vec<T> = g
                    .data()
                    .chunks(plane)
                    .map(|ch| ch.iter().copied().sum())
                    .collect();
                Ok(vec![g.clone(), Tensor::new(bshape.clone(), db)?])
            }) as BackwardFn<T>
        });
        self.push(out, vec![x, bias], bw)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).scale(s);
        let bw = self
            .grad_enabled
            .then(|| Box::new(move |g: &Tensor<T>| Ok(vec![g.scale(s)])) as BackwardFn<T>);
        self.push(out, vec![x], bw)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(ops::gelu);
        let bw = self.grad_enabled.then(|| {
            let xv = self.value(x).clone();
            Box::new(move |g: &Tensor<T>| {
                Ok(vec![g.zip_map(&xv, "gelu", |gv, v| gv * ops::gelu_grad(v))?])
            }) as BackwardFn<T>
        });
        self.push(out, vec![x], bw)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax_rows(self.value(x))?;
        let bw = self.grad_enabled.then(|| {
            let y = out.clone();
            Box::new(move |g: &Tensor<T>| Ok(vec![ops::softmax_rows_backward(&y, g)?]))
                as BackwardFn<T>
        });
        self.push(out, vec![x], bw)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, cache): (Tensor<T>, LayerNormCache<T>) =
            ops::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let bw = self.grad_enabled.then(|| {
            let gv = self.value(gamma).clone();
            Box::new(move |g: &Tensor<T>| {
                let (dx, dg, db) = ops::layer_norm_backward(&cache, &gv, g);
                Ok(vec![dx, dg, db])
            }) as BackwardFn<T>
        });
        self.push(out, vec![x, gamma, beta], bw)
    }

    /// Rows `[start, end)` of a rank-2 tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if start >= end || end > r {
            return Err(Error::InvalidInput(format!(
                "row slice {start}..{end} of {r} rows"
            )));
        }
        let out = Tensor::new(vec![end - start, c], xv.data()[start * c..end * c].to_vec())?;
        let bw = self.grad_enabled.then(|| {
            Box::new(move |g: &Tensor<T>| {
                let mut dx = vec![T::zero(); r * c];
                dx[start * c..end * c].copy_from_slice(g.data());
                Ok(vec![Tensor::new(vec![r, c], dx)?])
            }) as BackwardFn<T>
        });
        self.push(out, vec![x], bw)
    }

    /// Columns `[start, end)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if start >= end || end > c {
            return Err(Error::InvalidInput(format!(
                "column slice {start}..{end} of {c} columns"
            )));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&xv.row(i)[start..end]);
        }
        let out = Tensor::new(vec![r, w], out)?;
        let bw = self.grad_enabled.then(|| {
            Box::new(move |g: &Tensor<T>| {
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + end].copy_from_slice(g.row(i));
                }
                Ok(vec![Tensor::new(vec![r, c], dx)?])
            }) as BackwardFn<T>
        });
        self.push(out, vec![x], bw)
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::dim(
                    "concat_cols",
                    self.shape(parts[0]),
                    self.shape(p),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![rows, total], out)?;
        let bw = self.grad_enabled.then(|| {
            Box::new(move |g: &Tensor<T>| {
                let mut start = 0;
                let mut grads = Vec::with_capacity(widths.len());
                for &w in &widths {
                    let mut d = Vec::with_capacity(rows * w);
                    for i in 0..rows {
                        d.extend_from_slice(&g.row(i)[start..start + w]);
                    }
                    grads.push(Tensor::new(vec![rows, w], d)?);
                    start += w;
                }
                Ok(grads)
            }) as BackwardFn<T>
        });
        self.push(out, parts.to_vec(), bw)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let bw = self.grad_enabled.then(|| {
            let orig = self.shape(x).to_vec();
            Box::new(move |g: &Tensor<T>| Ok(vec![g.reshape(&orig)?])) as BackwardFn<T>
        });
        self.push(out, vec![x], bw)
    }

    pub fn conv2d_3x3(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let out = ops::conv2d_3x3(self.value(input), self.value(kernel))?;
        let bw = self.grad_enabled.then(|| {
            let (xv, kv) = (self.value(input).clone(), self.value(kernel).clone());
            Box::new(move |g: &Tensor<T>| {
                let (dx, dk) = ops::conv2d_3x3_backward(&xv, &kv, g)?;
                Ok(vec![dx, dk])
            }) as BackwardFn<T>
        });
        self.push(out, vec![input, kernel], bw)
    }

    pub fn conv1d_k3(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let out = ops::conv1d_k3(self.value(input), self.value(kernel))?;
        let bw = self.grad_enabled.then(|| {
            let (xv, kv) = (self.value(input).clone(), self.value(kernel).clone());
            Box::new(move |g: &Tensor<T>| {
                let (dx, dk) = ops::conv1d_k3_backward(&xv, &kv, g)?;
                Ok(vec![dx, dk])
            }) as BackwardFn<T>
        });
        self.push(out, vec![input, kernel], bw)
    }

    /// Mean over everything but the leading axis: `[C, ...]` → `[C]`.
    pub fn mean_per_channel(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.shape()[0];
        let plane = xv.len() / c;
        let inv = T::one() / T::lit(plane as f64);
        let means: Vec<T> = xv
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![c], means)?;
        let bw = self.grad_enabled.then(|| {
            let shape = xv.shape().to_vec();
            Box::new(move |g: &Tensor<T>| {
                let mut dx = Tensor::zeros(&shape);
                for (ch, chunk) in dx.data_mut().chunks_mut(plane).enumerate() {
                    let v = g.data()[ch] * inv;
                    chunk.iter_mut().for_each(|d| *d = v);
                }
                Ok(vec![dx])
            }) as BackwardFn<T>
        });
        self.push(out, vec![x], bw)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::scalar(xv.sum());
        let bw = self.grad_enabled.then(|| {
            let shape = xv.shape().to_vec();
            Box::new(move |g: &Tensor<T>| Ok(vec![Tensor::full(&shape, g.data()[0])]))
                as BackwardFn<T>
        });
        self.push(out, vec![x], bw)
    }

    /// `−log softmax(logits)[label]` for a flat logit vector.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        let c = lv.len();
        if label >= c {
            return Err(Error::Label {
                label,
                num_classes: c,
            });
        }
        let lse = ops::log_sum_exp(lv.data());
        let out = Tensor::scalar(lse - lv.data()[label]);
        let bw = self.grad_enabled.then(|| {
            let shape = lv.shape().to_vec();
            let probs = ops::softmax(lv.data());
            Box::new(move |g: &Tensor<T>| {
                let mut d = probs.clone();
                d[label] = d[label] - T::one();
                let gv = g.data()[0];
                d.iter_mut().for_each(|v| *v = *v * gv);
                Ok(vec![Tensor::new(shape.clone(), d)?])
            }) as BackwardFn<T>
        });
        self.push(out, vec![logits], bw)
    }

    /// Reverse sweep from a scalar output. Every parameter leaf recorded on
    /// the tape receives exactly one (accumulated) gradient.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if !self.grad_enabled {
            return Err(Error::InvalidInput("backward on an inference tape".into()));
        }
        if self.value(output).len() != 1 {
            return Err(Error::InvalidInput(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.values.len()];
        grads[output.0] = Some(Tensor::ones(self.shape(output)));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let parent_grads = backward(&g)?;
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                if pg.shape() != self.shape(*p) {
                    return Err(Error::dim("backward", self.shape(*p), pg.shape()));
                }
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .zip(&self.values)
            .map(|((g, node), v)| {
                node.is_param
                    .then(|| g.unwrap_or_else(|| Tensor::zeros(v.shape())))
            })
            .collect();
        Ok(Gradients { grads })
    }
}
