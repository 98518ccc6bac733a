//! Dense `f64` tensors and a tape-based reverse-mode differentiation graph.
//!
//! A [`Graph`] records every operation applied to its nodes. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! accumulates gradients into every leaf that was created with
//! `requires_grad`. Only the operations needed by small MLPs and a
//! single-convolution CNN are provided.

use crate::error::{Error, Result};

/// Row-major dense array of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    /// One-dimensional tensor.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += d),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    /// Same data under a new shape with equal element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }
}

/// A trainable tensor with a name unique within its model.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value: value.with_requires_grad(true),
        }
    }
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `[m, n] + [n]`, bias broadcast over rows.
    AddRow(Var, Var),
    Relu(Var),
    Conv2d {
        input: Var,
        kernels: Var,
    },
    MeanPool {
        input: Var,
        window: usize,
    },
    Reshape(Var),
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of recorded tensor operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients reach it only if `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let needs_grad = value.requires_grad;
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Clears accumulated gradients on every leaf.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op: "add",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    /// Adds a length-`n` row vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sa.len() != 2 || sr.len() != 1 || sa[1] != sr[0] {
            return Err(Error::Dimension {
                op: "add_row",
                left: sa.to_vec(),
                right: sr.to_vec(),
            });
        }
        let n = sa[1];
        let bias = self.value(row).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bias[i % n])
            .collect();
        let value = Tensor::new(sa.to_vec(), data)?;
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRow(a, row), needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("shape preserved");
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs)
    }

    /// 3x3 cross-correlation, stride 1, zero padding 1.
    ///
    /// `input` is `[c_in, h, w]` or batched `[b, c_in, h, w]`; `kernels` is
    /// `[c_out, c_in, 3, 3]`. Spatial extents are preserved.
    pub fn conv2d(&mut self, input: Var, kernels: Var) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernels).to_vec());
        let dim_err = || Error::Dimension {
            op: "conv2d",
            left: si.clone(),
            right: sk.clone(),
        };
        let (batch, c_in, h, w) = match si.as_slice() {
            [c, h, w] => (1, *c, *h, *w),
            [b, c, h, w] => (*b, *c, *h, *w),
            _ => return Err(dim_err()),
        };
        if sk.len() != 4 || sk[1] != c_in || sk[2] != 3 || sk[3] != 3 {
            return Err(dim_err());
        }
        let c_out = sk[0];
        let geo = ConvGeometry {
            batch,
            c_in,
            c_out,
            h,
            w,
        };
        let out = geo.forward(self.value(input).data(), self.value(kernels).data());
        let shape = if si.len() == 3 {
            vec![c_out, h, w]
        } else {
            vec![batch, c_out, h, w]
        };
        let needs = self.needs(input) || self.needs(kernels);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv2d { input, kernels },
            needs,
        ))
    }

    /// Non-overlapping `window`x`window` average pooling over the last two
    /// axes. Trailing rows/columns that do not fill a window are dropped.
    pub fn mean_pool(&mut self, input: Var, window: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() < 2 || window == 0 || s[s.len() - 2] < window || s[s.len() - 1] < window {
            return Err(Error::Dimension {
                op: "mean_pool",
                left: s,
                right: vec![window, window],
            });
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let (oh, ow) = (h / window, w / window);
        let planes: usize = s[..s.len() - 2].iter().product();
        let src = self.value(input).data();
        let scale = 1.0 / (window * window) as f64;
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..window {
                        let row = p * h * w + (oy * window + dy) * w + ox * window;
                        acc += src[row..row + window].iter().sum::<f64>();
                    }
                    out[p * oh * ow + oy * ow + ox] = acc * scale;
                }
            }
        }
        let mut shape = s[..s.len() - 2].to_vec();
        shape.extend([oh, ow]);
        let needs = self.needs(input);
        Ok(self.push(Tensor::new(shape, out)?, Op::MeanPool { input, window }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(
            Tensor::vector(vec![total]).expect("scalar"),
            Op::Sum(x),
            needs,
        )
    }

    /// Softmax cross-entropy of one logit vector `[C]` against `label`.
    ///
    /// Returns the scalar loss node and the softmax probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<(Var, Tensor)> {
        let s = self.shape(logits).to_vec();
        if s.len() != 1 {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: s,
                right: vec![],
            });
        }
        let row = self.reshape(logits, vec![1, s[0]])?;
        let (loss, probs) = self.softmax_cross_entropy_batch(row, &[label])?;
        Ok((loss, probs.reshaped(s)?))
    }

    /// Mean softmax cross-entropy over the rows of `[B, C]` logits.
    ///
    /// Returns the scalar loss node and the `[B, C]` probabilities.
    pub fn softmax_cross_entropy_batch(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<(Var, Tensor)> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: s,
                right: vec![labels.len()],
            });
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                what: "class labels",
                index: bad,
                len: classes,
            });
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; z.len()];
        let mut total = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            let row = &z[b * classes..(b + 1) * classes];
            let out = &mut probs[b * classes..(b + 1) * classes];
            total += stable_softmax(row, out) - row[label];
        }
        let loss = total / labels.len() as f64;
        let probs_tensor = Tensor::new(s, probs.clone())?;
        let needs = self.needs(logits);
        let node = self.push(
            Tensor::vector(vec![loss])?,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        );
        Ok((node, probs_tensor))
    }

    /// Sign pattern of every ReLU input recorded so far (`true` where the
    /// unit is active). Two evaluations with equal patterns lie on the same
    /// smooth piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).data().iter().map(|&v| v > 0.0))
            .collect()
    }

    /// Back-propagates from a scalar node, accumulating into the `grad` of
    /// every reachable leaf that requires it. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {
                    if self.nodes[i].value.requires_grad {
                        self.nodes[i].value.accumulate_grad(&g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[1];
                    if self.needs(a) {
                        // dA = dC · Bᵀ
                        let bt = transpose(self.value(b).data(), k, n);
                        let da = matmul_raw(&g, &bt, m, n, k);
                        add_into(&mut adj, a, &da);
                    }
                    if self.needs(b) {
                        // dB = Aᵀ · dC
                        let at = transpose(self.value(a).data(), m, k);
                        let db = matmul_raw(&at, &g, k, m, n);
                        add_into(&mut adj, b, &db);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        add_into(&mut adj, a, &g);
                    }
                    if self.needs(b) {
                        add_into(&mut adj, b, &g);
                    }
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    if self.needs(a) {
                        add_into(&mut adj, a, &g);
                    }
                    if self.needs(row) {
                        let n = self.shape(row)[0];
                        let mut dr = vec![0.0; n];
                        for (i, v) in g.iter().enumerate() {
                            dr[i % n] += v;
                        }
                        add_into(&mut adj, row, &dr);
                    }
                }
                Op::Relu(x) => {
                    let x = *x;
                    let dx: Vec<f64> = self
                        .value(x)
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                        .collect();
                    add_into(&mut adj, x, &dx);
                }
                Op::Conv2d { input, kernels } => {
                    let (input, kernels) = (*input, *kernels);
                    let si = self.shape(input);
                    let (batch, c_in, h, w) = match *si {
                        [c, h, w] => (1, c, h, w),
                        [b, c, h, w] => (b, c, h, w),
                        _ => unreachable!("validated in forward"),
                    };
                    let geo = ConvGeometry {
                        batch,
                        c_in,
                        c_out: self.shape(kernels)[0],
                        h,
                        w,
                    };
                    if self.needs(input) {
                        let dx = geo.input_grad(&g, self.value(kernels).data());
                        add_into(&mut adj, input, &dx);
                    }
                    if self.needs(kernels) {
                        let dk = geo.kernel_grad(&g, self.value(input).data());
                        add_into(&mut adj, kernels, &dk);
                    }
                }
                Op::MeanPool { input, window } => {
                    let (input, window) = (*input, *window);
                    let s = self.shape(input);
                    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                    let (oh, ow) = (h / window, w / window);
                    let planes: usize = s[..s.len() - 2].iter().product();
                    let scale = 1.0 / (window * window) as f64;
                    let mut dx = vec![0.0; planes * h * w];
                    for p in 0..planes {
                        for y in 0..oh * window {
                            for x in 0..ow * window {
                                dx[p * h * w + y * w + x] =
                                    g[p * oh * ow + (y / window) * ow + x / window] * scale;
                            }
                        }
                    }
                    add_into(&mut adj, input, &dx);
                }
                Op::Reshape(x) => {
                    let x = *x;
                    add_into(&mut adj, x, &g);
                }
                Op::Sum(x) => {
                    let x = *x;
                    let dx = vec![g[0]; self.value(x).numel()];
                    add_into(&mut adj, x, &dx);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let logits = *logits;
                    let classes = probs.len() / labels.len();
                    let scale = g[0] / labels.len() as f64;
                    let mut dz: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (b, &l) in labels.iter().enumerate() {
                        dz[b * classes + l] -= scale;
                    }
                    add_into(&mut adj, logits, &dz);
                }
            }
        }
        Ok(())
    }
}

fn add_into(adj: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, &bv)| *o += aip * bv);
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Writes softmax(`z`) into `out` and returns log-sum-exp(`z`).
fn stable_softmax(z: &[f64], out: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
    max + total.ln()
}

/// Softmax of a single logit row, max-subtracted.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    stable_softmax(logits, &mut out);
    out
}

struct ConvGeometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
}

impl ConvGeometry {
    /// Visits every (output position, kernel tap, input position) triple
    /// that lies inside the padded image.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (h, w) = (self.h, self.w);
        for b in 0..self.batch {
            for co in 0..self.c_out {
                for ci in 0..self.c_in {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let k_idx = ((co * self.c_in + ci) * 3 + ky) * 3 + kx;
                            for y in 0..h {
                                let iy = y as isize + ky as isize - 1;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for x in 0..w {
                                    let ix = x as isize + kx as isize - 1;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let o_idx = ((b * self.c_out + co) * h + y) * w + x;
                                    let i_idx =
                                        ((b * self.c_in + ci) * h + iy as usize) * w + ix as usize;
                                    f(o_idx, k_idx, i_idx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, input: &[f64], kernels: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.batch * self.c_out * self.h * self.w];
        self.for_each_tap(|o, k, i| out[o] += kernels[k] * input[i]);
        out
    }

    fn input_grad(&self, g: &[f64], kernels: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.batch * self.c_in * self.h * self.w];
        self.for_each_tap(|o, k, i| dx[i] += kernels[k] * g[o]);
        dx
    }

    fn kernel_grad(&self, g: &[f64], input: &[f64]) -> Vec<f64> {
        let mut dk = vec![0.0; self.c_out * self.c_in * 9];
        self.for_each_tap(|o, k, i| dk[k] += input[i] * g[o]);
        dk
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_tensor(rng: &mut impl Rng, shape: &[usize], grad: bool) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data)
            .unwrap()
            .with_requires_grad(grad)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Central difference of `f` at each coordinate of `x`.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..x.numel())
            .map(|i| {
                let mut plus = x.clone();
                plus.data_mut()[i] += h;
                let mut minus = x.clone();
                minus.data_mut()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![0.0; 3]),
            Err(Error::Dimension { .. })
        ));
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut g = Graph::new();
        let i2 = g.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = g.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p).data(), &[3.0, 4.0, 5.0, 6.0]);

        let a = g.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let z = g.leaf(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        let p = g.matmul(a, z).unwrap();
        assert_eq!(g.value(p).shape(), &[1, 1]);
        assert_eq!(g.value(p).data(), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]).unwrap());
        let b = g.leaf(Tensor::zeros(&[2, 3]).unwrap());
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { op: "matmul", .. }));
    }

    #[test]
    fn matmul_gradient_is_row_broadcast_of_b_column_sums() {
        let mut rng = crate::rng::stream(3, "test", &[]);
        let a0 = rand_tensor(&mut rng, &[3, 4], true);
        let b0 = rand_tensor(&mut rng, &[4, 2], true);

        let mut g = Graph::new();
        let a = g.leaf(a0.clone());
        let b = g.leaf(b0.clone());
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        let analytic = g.grad(a).unwrap().to_vec();

        // d sum(AB) / dA[i][p] = sum_j B[p][j]
        let bd = b0.data();
        for i in 0..3 {
            for p in 0..4 {
                let expect = bd[p * 2] + bd[p * 2 + 1];
                assert!((analytic[i * 4 + p] - expect).abs() < 1e-12);
            }
        }
        let numeric = numeric_grad(&a0, |a| {
            let mut g = Graph::new();
            let a = g.leaf(a.clone());
            let b = g.leaf(b0.clone());
            let c = g.matmul(a, b).unwrap();
            g.value(c).data().iter().sum()
        });
        for (x, y) in analytic.iter().zip(&numeric) {
            assert!(rel_err(*x, *y) < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn relu_forward_and_mask() {
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::vector(vec![-1.0, 0.0, 2.0])
                .unwrap()
                .with_requires_grad(true),
        );
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        // subgradient at exactly zero is zero
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::vector(vec![-3.0, -0.5])
                .unwrap()
                .with_requires_grad(true),
        );
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_gradient_matches_finite_differences_away_from_zero() {
        let mut rng = crate::rng::stream(5, "test", &[]);
        let mut x0 = rand_tensor(&mut rng, &[20], true);
        for v in x0.data_mut() {
            if v.abs() < 1e-3 {
                *v = 0.5;
            }
        }
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let y = g.relu(x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        let numeric = numeric_grad(&x0, |x| x.data().iter().map(|v| v.max(0.0)).sum());
        for ((a, n), v) in g.grad(x).unwrap().iter().zip(&numeric).zip(x0.data()) {
            assert_eq!(*a, if *v > 0.0 { 1.0 } else { 0.0 });
            assert!((a - n).abs() < 1e-8);
        }
    }

    fn conv_oracle(x: &[f64], k: &[f64], c_in: usize, c_out: usize, h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; c_out * h * w];
        for co in 0..c_out {
            for y in 0..h as i64 {
                for xx in 0..w as i64 {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for dy in -1..=1i64 {
                            for dx in -1..=1i64 {
                                let (iy, ix) = (y + dy, xx + dx);
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let kv = k[((co * c_in + ci) * 3 + (dy + 1) as usize) * 3
                                    + (dx + 1) as usize];
                                acc += kv * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(co * h + y as usize) * w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_and_zero_kernels() {
        let mut rng = crate::rng::stream(9, "test", &[]);
        let x0 = rand_tensor(&mut rng, &[1, 5, 4], false);
        let mut ident = vec![0.0; 9];
        ident[4] = 1.0;
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let k = g.leaf(Tensor::new(vec![1, 1, 3, 3], ident).unwrap());
        let y = g.conv2d(x, k).unwrap();
        assert_eq!(g.value(y), &x0);

        let k0 = g.leaf(Tensor::zeros(&[2, 1, 3, 3]).unwrap());
        let y = g.conv2d(x, k0).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 5, 4]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 4, 4]).unwrap());
        let k = g.leaf(Tensor::zeros(&[1, 3, 3, 3]).unwrap());
        assert!(matches!(g.conv2d(x, k), Err(Error::Dimension { .. })));
    }

    #[test]
    fn conv_matches_nested_loop_oracle_and_finite_differences() {
        let mut rng = crate::rng::stream(11, "test", &[]);
        let x0 = rand_tensor(&mut rng, &[1, 4, 4], true);
        let k0 = rand_tensor(&mut rng, &[2, 1, 3, 3], true);
        let weights = rand_tensor(&mut rng, &[2, 4, 4], false);

        let objective = |x: &Tensor, k: &Tensor| -> f64 {
            conv_oracle(x.data(), k.data(), 1, 2, 4, 4)
                .iter()
                .zip(weights.data())
                .map(|(a, b)| a * b)
                .sum()
        };

        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let k = g.leaf(k0.clone());
        let y = g.conv2d(x, k).unwrap();
        let oracle = conv_oracle(x0.data(), k0.data(), 1, 2, 4, 4);
        for (a, b) in g.value(y).data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let wv = g.leaf(weights.clone());
        let prod = weighted(&mut g, y, wv);
        g.backward(prod).unwrap();

        let nx = numeric_grad(&x0, |x| objective(x, &k0));
        let nk = numeric_grad(&k0, |k| objective(&x0, k));
        for (a, n) in g.grad(x).unwrap().iter().zip(&nx) {
            assert!(rel_err(*a, *n) < 1e-4, "{a} vs {n}");
        }
        for (a, n) in g.grad(k).unwrap().iter().zip(&nk) {
            assert!(rel_err(*a, *n) < 1e-4, "{a} vs {n}");
        }
    }

    /// sum(y ⊙ w) using only graph ops: flatten both, then [1,n]·[n,1].
    fn weighted(g: &mut Graph, y: Var, w: Var) -> Var {
        let n = g.value(y).numel();
        let yr = g.reshape(y, vec![1, n]).unwrap();
        let wr = g.reshape(w, vec![n, 1]).unwrap();
        let p = g.matmul(yr, wr).unwrap();
        g.sum(p)
    }

    #[test]
    fn mean_pool_forward_and_backward() {
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::new(vec![1, 2, 4], (0..8).map(f64::from).collect())
                .unwrap()
                .with_requires_grad(true),
        );
        let y = g.mean_pool(x, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2]);
        assert_eq!(g.value(y).data(), &[2.5, 4.5]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25; 8]);
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::vector(vec![0.0; 4]).unwrap());
        let (loss, probs) = g.softmax_cross_entropy(z, 2).unwrap();
        assert_eq!(probs.data(), &[0.25; 4]);
        assert!((g.value(loss).data()[0] - 4f64.ln()).abs() < 1e-12);
        assert!((g.value(loss).data()[0] - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn softmax_ce_extreme_logits_do_not_overflow() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::vector(vec![1000.0, 0.0]).unwrap());
        let (loss, probs) = g.softmax_cross_entropy(z, 0).unwrap();
        assert!((probs.data()[0] - 1.0).abs() < 1e-12);
        assert!(probs.data()[1] >= 0.0 && probs.data()[1] < 1e-300);
        let l = g.value(loss).data()[0];
        assert!(l.is_finite() && l.abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_label_out_of_range() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::vector(vec![0.0; 3]).unwrap());
        assert!(matches!(
            g.softmax_cross_entropy(z, 3),
            Err(Error::Index { index: 3, len: 3, .. })
        ));
    }

    #[test]
    fn softmax_ce_gradient_is_probs_minus_onehot() {
        let mut rng = crate::rng::stream(13, "test", &[]);
        let mut z0 = rand_tensor(&mut rng, &[10], true);
        z0.data_mut().iter_mut().for_each(|v| *v *= 4.0);
        let label = 7;
        let mut g = Graph::new();
        let z = g.leaf(z0.clone());
        let (loss, probs) = g.softmax_cross_entropy(z, label).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(z).unwrap();
        let numeric = numeric_grad(&z0, |z| {
            let p = softmax(z.data());
            -p[label].ln()
        });
        for c in 0..10 {
            let onehot = if c == label { 1.0 } else { 0.0 };
            assert!((grad[c] - (probs.data()[c] - onehot)).abs() < 1e-15);
            assert!(rel_err(grad[c], numeric[c]) < 1e-6);
        }
    }

    #[test]
    fn backward_sum_and_independent_leaf() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::vector(vec![0.3, -2.0, 5.0]).unwrap().with_requires_grad(true));
        let other = g.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap().with_requires_grad(true));
        let s = g.sum(w);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0, 1.0, 1.0]);
        // `other` is unreachable from the loss
        assert!(g.grad(other).map_or(true, |d| d.iter().all(|&v| v == 0.0)));
        // repeated backward accumulates
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0, 2.0, 2.0]);
        g.zero_grad();
        assert!(g.grad(w).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap().with_requires_grad(true));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = crate::rng::stream(17, "test", &[]);
        let a = rand_tensor(&mut rng, &[5, 7], false);
        let b = rand_tensor(&mut rng, &[7, 3], false);
        let run = || {
            let mut g = Graph::new();
            let (x, y) = (g.leaf(a.clone()), g.leaf(b.clone()));
            let p = g.matmul(x, y).unwrap();
            let r = g.relu(p);
            g.value(r).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    proptest::proptest! {
        #[test]
        fn softmax_is_a_probability_vector(z in proptest::collection::vec(-1e6f64..1e6, 1..20)) {
            let p = softmax(&z);
            proptest::prop_assert!(p.iter().all(|&v| v >= 0.0));
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
