//! Reverse-mode automatic differentiation over real tensors.
//!
//! Operations are recorded on a [`Tape`] during the forward pass; parents
//! always precede children, so a single reverse sweep propagates adjoints.
//! Complex arithmetic is layered on top through [`CVar`], which pairs the
//! real and imaginary parts of a value as two tape variables.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, RealTensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Negative-side slope of the leaky rectifier.
pub const LRELU_SLOPE: f64 = 0.1;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Sqrt(usize),
    Ln(usize),
    Log2(usize),
    Lrelu(usize),
    /// Element-wise max over same-shaped inputs; gradient goes to the
    /// argmax, ties resolved to the lowest operand index.
    MaxSet(Vec<usize>),
    /// Element-wise mean over same-shaped inputs.
    MeanSet(Vec<usize>),
    /// Flattened concatenation into a column vector.
    Concat(Vec<usize>),
    /// Contiguous segment of the flattened parent as a column vector.
    Slice(usize, usize, usize),
    /// Sum of all entries, producing a 1-element tensor.
    SumElems(usize),
    /// Tensor divided by a 1-element tensor.
    DivScalar(usize, usize),
}

struct Node {
    op: Op,
    value: RealTensor,
}

/// Recorded computation graph with values and, after [`Tape::backward`],
/// adjoints for every node.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    adjoints: Vec<RealTensor>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: RealTensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Record a constant or parameter input.
    pub fn leaf(&mut self, value: RealTensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn leaf_scalar(&mut self, x: f64) -> Var {
        self.leaf(RealTensor::scalar(x))
    }

    pub fn value(&self, v: Var) -> &RealTensor {
        &self.nodes[v.0].value
    }

    /// Adjoint of `v` from the most recent backward pass.
    pub fn adjoint(&self, v: Var) -> &RealTensor {
        &self.adjoints[v.0]
    }

    fn same_shape(&self, a: Var, b: Var) -> &[usize] {
        let sa = self.nodes[a.0].value.shape();
        let sb = self.nodes[b.0].value.shape();
        assert_eq!(sa, sb, "elementwise op shape mismatch");
        sa
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a.0, b.0), data)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a.0, b.0), data)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a.0, b.0), data)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let data = zip_map(self.value(a), self.value(b), |x, y| x / y);
        self.push(Op::Div(a.0, b.0), data)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = (self.value(a).rows(), self.value(a).cols());
        let (k2, n) = (self.value(b).rows(), self.value(b).cols());
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = RealTensor::zeros(vec![m, n]);
        for r in 0..m {
            for c in 0..n {
                let mut acc = 0.0;
                for j in 0..k {
                    acc += self.value(a).get(r, j) * self.value(b).get(j, c);
                }
                out.set(r, c, acc);
            }
        }
        self.push(Op::MatMul(a.0, b.0), out)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = map(self.value(a), |x| x * c);
        self.push(Op::Scale(a.0, c), data)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let data = map(self.value(a), |x| x + c);
        self.push(Op::AddConst(a.0), data)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let data = map(self.value(a), f64::sqrt);
        self.push(Op::Sqrt(a.0), data)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let data = map(self.value(a), f64::ln);
        self.push(Op::Ln(a.0), data)
    }

    pub fn log2(&mut self, a: Var) -> Var {
        let data = map(self.value(a), f64::log2);
        self.push(Op::Log2(a.0), data)
    }

    pub fn lrelu(&mut self, a: Var) -> Var {
        let data = map(self.value(a), |x| if x >= 0.0 { x } else { LRELU_SLOPE * x });
        self.push(Op::Lrelu(a.0), data)
    }

    pub fn max_set(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "max_set over an empty set");
        let shape = self.value(inputs[0]).shape().to_vec();
        for v in inputs {
            assert_eq!(self.value(*v).shape(), shape.as_slice());
        }
        let n = self.value(inputs[0]).len();
        let mut out = vec![f64::NEG_INFINITY; n];
        for v in inputs {
            for (o, &x) in out.iter_mut().zip(self.value(*v).data()) {
                if x > *o {
                    *o = x;
                }
            }
        }
        self.push(
            Op::MaxSet(inputs.iter().map(|v| v.0).collect()),
            RealTensor::new(shape, out),
        )
    }

    pub fn mean_set(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "mean_set over an empty set");
        let shape = self.value(inputs[0]).shape().to_vec();
        let n = self.value(inputs[0]).len();
        let mut out = vec![0.0; n];
        for v in inputs {
            assert_eq!(self.value(*v).shape(), shape.as_slice());
            for (o, &x) in out.iter_mut().zip(self.value(*v).data()) {
                *o += x;
            }
        }
        let inv = 1.0 / inputs.len() as f64;
        for o in &mut out {
            *o *= inv;
        }
        self.push(
            Op::MeanSet(inputs.iter().map(|v| v.0).collect()),
            RealTensor::new(shape, out),
        )
    }

    /// Concatenate flattened inputs into a single column vector.
    pub fn concat(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "concat of an empty set");
        let mut data = Vec::new();
        for v in inputs {
            data.extend_from_slice(self.value(*v).data());
        }
        let n = data.len();
        self.push(
            Op::Concat(inputs.iter().map(|v| v.0).collect()),
            RealTensor::new(vec![n, 1], data),
        )
    }

    /// Entries `start..start + len` of the flattened input, as a column.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.value(a).len(), "slice out of bounds");
        let data = self.value(a).data()[start..start + len].to_vec();
        self.push(Op::Slice(a.0, start, len), RealTensor::new(vec![len, 1], data))
    }

    pub fn sum_elems(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Op::SumElems(a.0), RealTensor::scalar(s))
    }

    /// Divide every entry of `a` by the single entry of `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "div_scalar divisor must be scalar");
        let d = self.value(s).data()[0];
        let data = map(self.value(a), |x| x / d);
        self.push(Op::DivScalar(a.0, s.0), data)
    }

    /// Sum a list of same-shaped variables.
    pub fn sum_vars(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty());
        let mut acc = inputs[0];
        for v in &inputs[1..] {
            acc = self.add(acc, *v);
        }
        acc
    }

    /// Propagate adjoints from a scalar `loss` node back to every input.
    ///
    /// Any NaN/Inf produced along the way is reported together with the
    /// offending node index.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        assert_eq!(self.value(loss).len(), 1, "backward seed must be scalar");
        let n = self.nodes.len();
        let mut adj: Vec<RealTensor> = self
            .nodes
            .iter()
            .map(|node| RealTensor::zeros(node.value.shape().to_vec()))
            .collect();
        adj[loss.0].data_mut()[0] = 1.0;

        for i in (0..n).rev() {
            if adj[i].data().iter().all(|&x| x == 0.0) {
                continue;
            }
            if !adj[i].all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite adjoint at tape node {i}"
                )));
            }
            // Move the adjoint out so `adj` can be mutated for parents.
            let g = std::mem::replace(&mut adj[i], RealTensor::zeros(vec![0]));
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut adj[*a], g.data());
                    accumulate(&mut adj[*b], g.data());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[*a], g.data());
                    accumulate_scaled(&mut adj[*b], g.data(), -1.0);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.nodes[b].value.data())
                        .map(|(g, y)| g * y)
                        .collect();
                    let gb: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.nodes[a].value.data())
                        .map(|(g, x)| g * x)
                        .collect();
                    accumulate(&mut adj[a], &ga);
                    accumulate(&mut adj[b], &gb);
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.nodes[b].value.data())
                        .map(|(g, y)| g / y)
                        .collect();
                    let gb: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.nodes[i].value.data().iter().zip(self.nodes[b].value.data()))
                        .map(|(g, (out, y))| -g * out / y)
                        .collect();
                    accumulate(&mut adj[a], &ga);
                    accumulate(&mut adj[b], &gb);
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = &self.nodes[a].value;
                    let bv = &self.nodes[b].value;
                    let (m, k) = (av.rows(), av.cols());
                    let nn = bv.cols();
                    // dA = G * B^T
                    let mut ga = vec![0.0; m * k];
                    for r in 0..m {
                        for j in 0..k {
                            let mut acc = 0.0;
                            for c in 0..nn {
                                acc += g.get(r, c) * bv.get(j, c);
                            }
                            ga[r * k + j] = acc;
                        }
                    }
                    // dB = A^T * G
                    let mut gb = vec![0.0; k * nn];
                    for j in 0..k {
                        for c in 0..nn {
                            let mut acc = 0.0;
                            for r in 0..m {
                                acc += av.get(r, j) * g.get(r, c);
                            }
                            gb[j * nn + c] = acc;
                        }
                    }
                    accumulate(&mut adj[a], &ga);
                    accumulate(&mut adj[b], &gb);
                }
                Op::Scale(a, c) => {
                    accumulate_scaled(&mut adj[*a], g.data(), *c);
                }
                Op::AddConst(a) => {
                    accumulate(&mut adj[*a], g.data());
                }
                Op::Sqrt(a) => {
                    let a = *a;
                    let ga: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(g, out)| 0.5 * g / out)
                        .collect();
                    accumulate(&mut adj[a], &ga);
                }
                Op::Ln(a) => {
                    let a = *a;
                    let ga: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.nodes[a].value.data())
                        .map(|(g, x)| g / x)
                        .collect();
                    accumulate(&mut adj[a], &ga);
                }
                Op::Log2(a) => {
                    let a = *a;
                    let inv_ln2 = std::f64::consts::LN_2.recip();
                    let ga: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.nodes[a].value.data())
                        .map(|(g, x)| g * inv_ln2 / x)
                        .collect();
                    accumulate(&mut adj[a], &ga);
                }
                Op::Lrelu(a) => {
                    let a = *a;
                    let ga: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.nodes[a].value.data())
                        .map(|(g, x)| if *x >= 0.0 { *g } else { LRELU_SLOPE * g })
                        .collect();
                    accumulate(&mut adj[a], &ga);
                }
                Op::MaxSet(parents) => {
                    let parents = parents.clone();
                    let len = g.len();
                    for e in 0..len {
                        // Argmax with ties broken to the lowest operand index.
                        let mut best_p = 0;
                        let mut best_x = self.nodes[parents[0]].value.data()[e];
                        for (pi, p) in parents.iter().enumerate().skip(1) {
                            let x = self.nodes[*p].value.data()[e];
                            if x > best_x {
                                best_x = x;
                                best_p = pi;
                            }
                        }
                        adj[parents[best_p]].data_mut()[e] += g.data()[e];
                    }
                }
                Op::MeanSet(parents) => {
                    let parents = parents.clone();
                    let inv = 1.0 / parents.len() as f64;
                    for p in parents {
                        accumulate_scaled(&mut adj[p], g.data(), inv);
                    }
                }
                Op::Concat(parents) => {
                    let parents = parents.clone();
                    let mut at = 0;
                    for p in parents {
                        let len = self.nodes[p].value.len();
                        let seg = &g.data()[at..at + len];
                        accumulate(&mut adj[p], seg);
                        at += len;
                    }
                }
                Op::Slice(a, start, len) => {
                    let (a, start, len) = (*a, *start, *len);
                    let target = &mut adj[a].data_mut()[start..start + len];
                    for (t, g) in target.iter_mut().zip(g.data()) {
                        *t += g;
                    }
                }
                Op::SumElems(a) => {
                    let a = *a;
                    let gs = g.data()[0];
                    for x in adj[a].data_mut() {
                        *x += gs;
                    }
                }
                Op::DivScalar(a, s) => {
                    let (a, s) = (*a, *s);
                    let sv = self.nodes[s].value.data()[0];
                    let ga: Vec<f64> = g.data().iter().map(|g| g / sv).collect();
                    // d/ds (a/s) = -a/s^2 = -out/s
                    let gs: f64 = g
                        .data()
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(g, out)| -g * out / sv)
                        .sum();
                    accumulate(&mut adj[a], &ga);
                    adj[s].data_mut()[0] += gs;
                }
            }
            adj[i] = g;
        }

        for (i, a) in adj.iter().enumerate() {
            if !a.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite adjoint at tape node {i}"
                )));
            }
        }
        self.adjoints = adj;
        Ok(())
    }
}

fn map(t: &RealTensor, f: impl Fn(f64) -> f64) -> RealTensor {
    RealTensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip_map(a: &RealTensor, b: &RealTensor, f: impl Fn(f64, f64) -> f64) -> RealTensor {
    RealTensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn accumulate(target: &mut RealTensor, grad: &[f64]) {
    for (t, g) in target.data_mut().iter_mut().zip(grad) {
        *t += g;
    }
}

fn accumulate_scaled(target: &mut RealTensor, grad: &[f64], c: f64) {
    for (t, g) in target.data_mut().iter_mut().zip(grad) {
        *t += c * g;
    }
}

/// Complex value on the tape: paired real/imaginary variables of equal shape.
#[derive(Debug, Clone, Copy)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

impl Tape {
    /// Record a complex matrix as a pair of constant leaves.
    pub fn cleaf(&mut self, m: &ComplexMatrix) -> CVar {
        CVar {
            re: self.leaf(m.re().clone()),
            im: self.leaf(m.im().clone()),
        }
    }

    pub fn cadd(&mut self, a: CVar, b: CVar) -> CVar {
        CVar {
            re: self.add(a.re, b.re),
            im: self.add(a.im, b.im),
        }
    }

    /// Complex matrix product expanded into four real products.
    pub fn cmatmul(&mut self, a: CVar, b: CVar) -> CVar {
        let rr = self.matmul(a.re, b.re);
        let ii = self.matmul(a.im, b.im);
        let ri = self.matmul(a.re, b.im);
        let ir = self.matmul(a.im, b.re);
        CVar {
            re: self.sub(rr, ii),
            im: self.add(ri, ir),
        }
    }

    /// Element-wise complex product.
    pub fn cmul_elem(&mut self, a: CVar, b: CVar) -> CVar {
        let rr = self.mul(a.re, b.re);
        let ii = self.mul(a.im, b.im);
        let ri = self.mul(a.re, b.im);
        let ir = self.mul(a.im, b.re);
        CVar {
            re: self.sub(rr, ii),
            im: self.add(ri, ir),
        }
    }

    /// Hermitian inner product `a^H b` of complex column vectors, as a
    /// complex scalar.
    pub fn cdot(&mut self, a: CVar, b: CVar) -> CVar {
        // re = sum(a.re*b.re + a.im*b.im); im = sum(a.re*b.im - a.im*b.re)
        let rr = self.mul(a.re, b.re);
        let ii = self.mul(a.im, b.im);
        let re_sum = self.add(rr, ii);
        let re = self.sum_elems(re_sum);
        let ri = self.mul(a.re, b.im);
        let ir = self.mul(a.im, b.re);
        let im_diff = self.sub(ri, ir);
        let im = self.sum_elems(im_diff);
        CVar { re, im }
    }

    /// Squared magnitudes `|z|^2` of complex entries.
    pub fn csq_mag(&mut self, a: CVar) -> Var {
        let rr = self.mul(a.re, a.re);
        let ii = self.mul(a.im, a.im);
        self.add(rr, ii)
    }

    /// Materialize the current value of a complex tape variable.
    pub fn cvalue(&self, a: CVar) -> ComplexMatrix {
        let re = self.value(a.re).clone();
        let im = self.value(a.im).clone();
        let (re, im) = if re.shape().len() == 2 {
            (re, im)
        } else {
            let n = re.len();
            (
                RealTensor::new(vec![n, 1], re.data().to_vec()),
                RealTensor::new(vec![n, 1], im.data().to_vec()),
            )
        };
        ComplexMatrix::from_parts(re, im)
    }

    pub fn cscalar_value(&self, a: CVar) -> Complex64 {
        Complex64::new(self.value(a.re).data()[0], self.value(a.im).data()[0])
    }
}
