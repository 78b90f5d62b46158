//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] owns every intermediate value. Nodes are appended in evaluation
//! order, so the node list is already topologically sorted and the backward pass is
//! a single reverse sweep. A graph is meant for one forward/backward pass: build a
//! fresh one per training step.

use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Relu(Var),
    Softmax(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Option<Vec<Vec<T>>>,
    },
    ConvT2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
    L1 {
        a: Var,
        b: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const PROB_FLOOR: f64 = 1e-12;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant copy of `v`: same value, no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`; zeros if nothing reached it.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        n.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(n.value.shape()))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!(
                "{what}: shapes {sa:?} and {sb:?} differ"
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * T::of(s));
        self.push(v, Op::Scale(a, s), &[a])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|x| x.f64()).sum();
        self.push(Tensor::scalar(T::of(s)), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s: f64 = x.data().iter().map(|x| x.f64()).sum::<f64>() / x.len().max(1) as f64;
        self.push(Tensor::scalar(T::of(s)), Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    /// `max(0, x)`; the gradient at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a), &[a])
    }

    /// Softmax along the last axis with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let k = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("softmax needs at least one axis"))?;
        let mut out = Vec::with_capacity(x.len());
        if k > 0 {
            for row in x.data().chunks(k) {
                let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
                let e: Vec<f64> = row.iter().map(|v| (v.f64() - m).exp()).collect();
                let z: f64 = e.iter().sum();
                out.extend(e.iter().map(|v| T::of(v / z)));
            }
        }
        let v = Tensor::new(x.shape(), out)?;
        Ok(self.push(v, Op::Softmax(a), &[a]))
    }

    fn check4(&self, v: Var, what: &str) -> Result<[usize; 4]> {
        match *self.value(v).shape() {
            [a, b, c, d] => Ok([a, b, c, d]),
            ref s => Err(Error::shape(format!(
                "{what} expects a 4-D tensor, got {s:?}"
            ))),
        }
    }

    /// Cross-correlation of `x: [N, C, H, W]` with `w: [F, C, k, k]` plus `b: [F]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, wd] = self.check4(x, "conv2d input")?;
        let [f, wc, k, k2] = self.check4(w, "conv2d weight")?;
        if wc != c || k != k2 || self.value(b).shape() != [f] {
            return Err(Error::shape(format!(
                "conv2d: input channels {c}, weight {:?}, bias {:?}",
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let geom = ConvGeom::new(c, h, wd, k, stride, pad)?;
        let mut out = vec![T::zero(); n * f * geom.positions()];
        // The lowered input is kept only if the weight gradient will need it.
        let cols = kernels::conv2d_forward(
            &geom,
            n,
            f,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
            self.needs(w),
        );
        let v = Tensor::new(&[n, f, geom.out_h(), geom.out_w()], out)?;
        Ok(self.push(
            v,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            &[x, w, b],
        ))
    }

    /// Transposed convolution of `x: [N, Cin, H, W]` with `w: [Cin, Cout, k, k]`
    /// plus `b: [Cout]`; output `[N, Cout, (H−1)·s − 2p + k, …]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, cin, h, wd] = self.check4(x, "conv_transpose2d input")?;
        let [wcin, cout, k, k2] = self.check4(w, "conv_transpose2d weight")?;
        if wcin != cin || k != k2 || self.value(b).shape() != [cout] || stride == 0 {
            return Err(Error::shape(format!(
                "conv_transpose2d: input channels {cin}, weight {:?}, bias {:?}",
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let grow = |d: usize| {
            (d > 0)
                .then(|| (d - 1) * stride + k)
                .and_then(|o| o.checked_sub(2 * pad))
                .filter(|&o| o > 0)
        };
        let (Some(oh), Some(ow)) = (grow(h), grow(wd)) else {
            return Err(Error::shape("conv_transpose2d: empty output"));
        };
        let geom = ConvGeom::new(cout, oh, ow, k, stride, pad)?;
        if geom.out_h() != h || geom.out_w() != wd {
            return Err(Error::shape("conv_transpose2d: geometry does not invert"));
        }
        let mut out = vec![T::zero(); n * geom.image_len()];
        kernels::conv_transpose2d_forward(
            &geom,
            n,
            cin,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let v = Tensor::new(&[n, cout, oh, ow], out)?;
        Ok(self.push(v, Op::ConvT2d { x, w, b, geom }, &[x, w, b]))
    }

    /// 2×2 max pooling, floor semantics, first index wins ties.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.check4(x, "maxpool2")?;
        if h < 2 || w < 2 {
            return Err(Error::domain(format!(
                "maxpool2 needs at least 2×2, got {h}×{w}"
            )));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(x).data(), n * c, h, w);
        let v = Tensor::new(&[n, c, h / 2, w / 2], out)?;
        Ok(self.push(v, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// `x·w + b` with `x: [N, I]`, `w: [I, O]`, `b: [O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        let (n, i, o) = match (sx, sw, sb) {
            ([n, i], [wi, o], [bo]) if i == wi && o == bo => (*n, *i, *o),
            _ => return Err(Error::shape(format!("dense: x {sx:?}, w {sw:?}, b {sb:?}"))),
        };
        let mut out: Vec<T> = (0..n)
            .flat_map(|_| self.value(b).data().iter().copied())
            .collect();
        kernels::gemm(
            n,
            i,
            o,
            self.value(x).data(),
            (i, 1),
            self.value(w).data(),
            (o, 1),
            T::one(),
            &mut out,
            (o, 1),
        );
        let v = Tensor::new(&[n, o], out)?;
        Ok(self.push(v, Op::Dense { x, w, b }, &[x, w, b]))
    }

    /// Mean over rows of `−ln p[row, label]`, with probabilities floored at 1e-12.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let p = self.value(probs);
        let (n, k) = match *p.shape() {
            [n, k] => (n, k),
            ref s => {
                return Err(Error::shape(format!(
                    "cross_entropy expects [N, K], got {s:?}"
                )))
            }
        };
        if labels.len() != n {
            return Err(Error::shape(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::domain(format!(
                "label {l} out of range for {k} classes"
            )));
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -p.data()[r * k + l].f64().max(PROB_FLOOR).ln())
            .sum();
        let v = Tensor::scalar(T::of(total / n.max(1) as f64));
        Ok(self.push(
            v,
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            &[probs],
        ))
    }

    /// `Σ |a − b|`; the gradient is ±1 elementwise and 0 where `a == b`.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1")?;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(p, q)| (p.f64() - q.f64()).abs())
            .sum();
        Ok(self.push(Tensor::scalar(T::of(s)), Op::L1 { a, b }, &[a, b]))
    }

    /// Backpropagate from a scalar root with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::domain(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let seed = Tensor::full(self.value(root).shape(), T::one());
        self.backward_with(root, seed)
    }

    /// Backpropagate an explicit output gradient from any node.
    pub fn backward_with(&mut self, root: Var, seed: Tensor<T>) -> Result<()> {
        if self.backward_done {
            return Err(Error::domain("backward already ran on this graph"));
        }
        if seed.shape() != self.value(root).shape() {
            return Err(Error::shape("seed gradient shape differs from the root"));
        }
        self.backward_done = true;
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(seed);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g);
            // Interior gradients are kept so callers can inspect them.
            self.nodes[i].grad = Some(g);
            for (v, d) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[v.0].grad {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(d.data())
                        .for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(d),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn layer_contributions(
        &self,
        x: Var,
        w: Var,
        b: Var,
        r: kernels::LayerGrads<T>,
    ) -> Vec<(Var, Tensor<T>)> {
        let like = |v: Var, data: Vec<T>| {
            Tensor::new(self.value(v).shape(), data).expect("gradient shape")
        };
        let mut out = Vec::with_capacity(3);
        if let Some(dx) = r.dx {
            out.push((x, like(x, dx)));
        }
        if let Some(dw) = r.dw {
            out.push((w, like(w, dw)));
        }
        out.push((b, like(b, r.db)));
        out
    }

    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let like = |v: Var, data: Vec<T>| {
            Tensor::new(self.value(v).shape(), data).expect("gradient shape")
        };
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                vec![
                    (
                        *a,
                        like(*a, gd.iter().zip(y).map(|(&g, &y)| g * y).collect()),
                    ),
                    (
                        *b,
                        like(*b, gd.iter().zip(x).map(|(&g, &x)| g * x).collect()),
                    ),
                ]
            }
            Op::Scale(a, s) => vec![(*a, g.map(|x| x * T::of(*s)))],
            Op::Sum(a) => vec![(*a, Tensor::full(self.value(*a).shape(), g.item()))],
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                vec![(
                    *a,
                    Tensor::full(self.value(*a).shape(), T::of(g.item().f64() / n)),
                )]
            }
            Op::Reshape(a) => vec![(*a, like(*a, gd.to_vec()))],
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                vec![(*a, like(*a, d))]
            }
            Op::Softmax(a) => {
                let y = &self.nodes[i].value;
                let k = *y.shape().last().expect("softmax axis");
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(k).zip(gd.chunks(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y.f64() * g.f64()).sum();
                    d.extend(
                        yr.iter()
                            .zip(gr)
                            .map(|(&y, &g)| T::of(y.f64() * (g.f64() - dot))),
                    );
                }
                vec![(*a, like(*a, d))]
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let n = self.value(*x).shape()[0];
                let f = self.value(*w).shape()[0];
                let r = kernels::conv2d_backward(
                    geom,
                    n,
                    f,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    cols.as_deref(),
                    self.needs(*x),
                    self.needs(*w),
                );
                self.layer_contributions(*x, *w, *b, r)
            }
            Op::ConvT2d { x, w, b, geom } => {
                let [n, cin, _, _] = self.check4(*x, "").expect("checked at forward");
                let r = kernels::conv_transpose2d_backward(
                    geom,
                    n,
                    cin,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    self.needs(*x),
                    self.needs(*w),
                );
                self.layer_contributions(*x, *w, *b, r)
            }
            Op::MaxPool2 { x, argmax } => {
                let mut d = vec![T::zero(); self.value(*x).len()];
                for (&src, &g) in argmax.iter().zip(gd) {
                    d[src as usize] += g;
                }
                vec![(*x, like(*x, d))]
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, inp) = (xv.shape()[0], xv.shape()[1]);
                let o = wv.shape()[1];
                let dx = self.needs(*x).then(|| {
                    let mut dx = vec![T::zero(); n * inp];
                    kernels::gemm(
                        n,
                        o,
                        inp,
                        gd,
                        (o, 1),
                        wv.data(),
                        (1, o),
                        T::zero(),
                        &mut dx,
                        (inp, 1),
                    );
                    dx
                });
                let dw = self.needs(*w).then(|| {
                    let mut dw = vec![T::zero(); inp * o];
                    kernels::gemm(
                        inp,
                        n,
                        o,
                        xv.data(),
                        (1, inp),
                        gd,
                        (o, 1),
                        T::zero(),
                        &mut dw,
                        (o, 1),
                    );
                    dw
                });
                let db = (0..o)
                    .map(|j| T::of((0..n).map(|r| gd[r * o + j].f64()).sum()))
                    .collect();
                self.layer_contributions(*x, *w, *b, kernels::LayerGrads { dx, dw, db })
            }
            Op::CrossEntropy { probs, labels } => {
                let p = self.value(*probs);
                let k = p.shape()[1];
                let n = labels.len().max(1) as f64;
                let scale = g.item().f64() / n;
                let mut d = vec![T::zero(); p.len()];
                for (r, &l) in labels.iter().enumerate() {
                    let q = p.data()[r * k + l].f64();
                    if q > PROB_FLOOR {
                        d[r * k + l] = T::of(-scale / q);
                    }
                }
                vec![(*probs, like(*probs, d))]
            }
            Op::L1 { a, b } => {
                let s = g.item();
                let sign: Vec<T> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(&p, &q)| {
                        if p > q {
                            s
                        } else if p < q {
                            -s
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let neg = sign.iter().map(|&x| -x).collect();
                vec![(*a, like(*a, sign)), (*b, like(*b, neg))]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[1], &[3.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!((g.grad(x).item() - 6.0).abs() < 1e-6);
    }

    #[test]
    fn backward_rules() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Domain(_))));
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let off = g.param(t(&[2], &[5.0, 5.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(off).data(), &[0.0, 0.0]);
        assert!(g.backward(s).is_err());
    }

    #[test]
    fn relu_and_softmax_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[-2.0, 3.0, 0.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 3.0, 0.0]);
        let rr = g.relu(r);
        assert_eq!(g.value(rr).data(), g.value(r).data());
        let z = g.constant(t(&[1, 2], &[0.0, 0.0]));
        let s = g.softmax(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
        let z = g.constant(t(&[1, 2], &[2f64.ln(), 0.0]));
        let s = g.softmax(z).unwrap();
        assert!((g.value(s).data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.value(s).data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        let s = g.sum(r);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let l = g.cross_entropy(p, &[0, 1]).unwrap();
        assert!(g.value(l).item() <= 1e-11);
        let u = g.constant(t(&[1, 2], &[0.5, 0.5]));
        let l = g.cross_entropy(u, &[1]).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-15);
        let q = g.constant(t(&[2, 2], &[0.25, 0.75, 0.9, 0.1]));
        let l = g.cross_entropy(q, &[1, 0]).unwrap();
        let expected = (-(0.75f64.ln()) - 0.9f64.ln()) / 2.0;
        assert!((g.value(l).item() - expected).abs() < 1e-15);
        assert!(matches!(g.cross_entropy(q, &[2, 0]), Err(Error::Domain(_))));
    }

    #[test]
    fn l1_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.param(t(&[2], &[1.0, 2.0]));
        let b = g.param(t(&[2], &[0.0, 4.0]));
        let l = g.l1(a, b).unwrap();
        assert_eq!(g.value(l).item(), 3.0);
        let r = g.l1(b, a).unwrap();
        assert_eq!(g.value(r).item(), 3.0);
        let z = g.l1(a, a).unwrap();
        assert_eq!(g.value(z).item(), 0.0);
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).data(), &[1.0, -1.0]);
        assert_eq!(g.grad(b).data(), &[-1.0, 1.0]);
    }

    #[test]
    fn dense_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = g.constant(t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, -1.0]));
        let b = g.constant(t(&[2], &[0.5, 0.0]));
        let y = g.dense(x, w, b).unwrap();
        // Row 0: [1 + 3, 2 − 3] + b; row 1: [4 + 6, 5 − 6] + b.
        assert_eq!(g.value(y).data(), &[4.5, -1.0, 10.5, -1.0]);
        let bad = g.constant(t(&[2, 2], &[0.0; 4]));
        assert!(g.dense(x, bad, b).is_err());
    }

    #[test]
    fn conv_examples() {
        let mut g = Graph::<f64>::new();
        let img: Vec<f64> = (0..36).map(|i| i as f64 * 0.1).collect();
        let x = g.constant(t(&[1, 1, 6, 6], &img));
        let mut delta = vec![0.0; 25];
        delta[12] = 1.0;
        let w = g.constant(t(&[1, 1, 5, 5], &delta));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, 1, 2).unwrap();
        assert_eq!(g.value(y).data(), &img[..]);
        let wz = g.constant(t(&[1, 1, 5, 5], &[0.0; 25]));
        let beta = g.constant(t(&[1], &[1.5]));
        let y = g.conv2d(x, wz, beta, 1, 2).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 1.5));
        let wrong = g.constant(t(&[1, 2, 5, 5], &[0.0; 50]));
        assert!(g.conv2d(x, wrong, b, 1, 2).is_err());
    }

    #[test]
    fn upconv_doubles_and_zero_input_gives_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 3, 4, 5]));
        let w = g.constant(Tensor::full(&[3, 2, 4, 4], 0.3));
        let b = g.constant(t(&[2], &[0.25, -1.0]));
        let y = g.conv_transpose2d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 2, 8, 10]);
        let v = g.value(y).data();
        assert!(v[..80].iter().all(|&z| z == 0.25));
        assert!(v[80..160].iter().all(|&z| z == -1.0));
    }

    #[test]
    fn maxpool_shapes() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 63, 84]));
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 31, 42]);
        let tiny = g.constant(Tensor::zeros(&[1, 1, 1, 4]));
        assert!(g.maxpool2(tiny).is_err());
        let q = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2(q).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }
}
