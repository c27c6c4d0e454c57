//! Reverse-mode gradient tape over a fixed set of batched operations.
//!
//! Every value is a matrix whose rows are batch samples. A loss is any
//! `1 x 1` node; [`Tape::backward`] returns the gradient of that loss with
//! respect to every node, and [`Grads::flat`] gathers the parameter
//! gradients of one network back into its flat `theta` layout.

use super::matrix::{gemm_nn_acc, gemm_nt, gemm_tn_acc, DenseMatrix};
use super::net::{Activation, NetSpec, NetworkParams};
use crate::error::ensure;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `x * wᵀ`
    MatMulNT(Var, Var),
    /// `x + 1 bᵀ` with `b` a `1 x cols` row.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    SliceCols { x: Var, start: usize },
    /// Per-row outer product: `out[b, c*m + j] = x[b, c] * y[b, j]`.
    OuterRows(Var, Var),
    /// Per-row matrix-vector product: `out[b, i] = sum_j g[b, i*m + j] * a[b, j]`.
    RowAffine { g: Var, a: Var, m: usize },
    Conv1d { x: Var, w: Var, b: Var, geom: ConvGeom },
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    filters: usize,
    out_width: usize,
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Tape handles for the blocks of one network.
#[derive(Clone, Debug)]
pub struct NetVars {
    spec: NetSpec,
    blocks: Vec<(Var, Var)>,
}

impl NetVars {
    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }
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

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Leaf value. Leaves receive gradients like any other node.
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Result<Var> {
        let (b, k) = self.shape(x);
        let (n, k2) = self.shape(w);
        ensure!(k == k2, Contract, "matmul_nt: {b}x{k} * ({n}x{k2})ᵀ");
        let mut out = DenseMatrix::zeros(b, n);
        gemm_nt(self.value(x).data(), self.value(w).data(), out.data_mut(), b, k, n);
        Ok(self.push(out, Op::MatMulNT(x, w)))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (b, n) = self.shape(x);
        ensure!(self.shape(bias) == (1, n), Contract, "add_bias: bias shape {:?} vs cols {n}", self.shape(bias));
        let mut out = self.value(x).clone();
        let bv = self.value(bias).data().to_vec();
        for r in 0..b {
            out.row_mut(r).iter_mut().zip(&bv).for_each(|(o, bb)| *o += bb);
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        ensure!(self.shape(a) == self.shape(b), Contract, "shape mismatch {:?} vs {:?}", self.shape(a), self.shape(b));
        let (r, c) = self.shape(a);
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.push(DenseMatrix::from_vec(r, c, data)?, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|t| t.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        match act {
            Activation::Tanh => self.tanh(x),
            Activation::Relu => self.relu(x),
        }
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|t| t * t);
        self.push(v, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        self.push(DenseMatrix::row_vector(&[s]), Op::Sum(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|t| t * c);
        self.push(v, Op::Scale(x, c))
    }

    /// `sum(x²) / rows(x)`: mean over samples of the squared row norm.
    pub fn mean_sq_rows(&mut self, x: Var) -> Var {
        let rows = self.shape(x).0.max(1);
        let sq = self.square(x);
        let s = self.sum(sq);
        self.scale(s, 1.0 / rows as f64)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        ensure!(ra == rb, Contract, "concat_cols: rows {ra} vs {rb}");
        let mut out = DenseMatrix::zeros(ra, ca + cb);
        for r in 0..ra {
            out.row_mut(r)[..ca].copy_from_slice(self.value(a).row(r));
            out.row_mut(r)[ca..].copy_from_slice(self.value(b).row(r));
        }
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Row-wise outer product, flattened row-major.
    pub fn outer_rows(&mut self, x: Var, y: Var) -> Result<Var> {
        let (rx, cx) = self.shape(x);
        let (ry, cy) = self.shape(y);
        ensure!(rx == ry, Contract, "outer_rows: rows {rx} vs {ry}");
        let mut out = DenseMatrix::zeros(rx, cx * cy);
        for r in 0..rx {
            let (xr, yr) = (self.value(x).row(r), self.value(y).row(r));
            let o = out.row_mut(r);
            for c in 0..cx {
                for j in 0..cy {
                    o[c * cy + j] = xr[c] * yr[j];
                }
            }
        }
        Ok(self.push(out, Op::OuterRows(x, y)))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        ensure!(start < end && end <= cols, Contract, "slice_cols: {start}..{end} of {cols}");
        let mut out = DenseMatrix::zeros(rows, end - start);
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(&self.value(x).row(r)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// Row-wise `G a` with `G` stored row-major as `n*m` columns.
    pub fn row_affine(&mut self, g: Var, a: Var) -> Result<Var> {
        let (rb, m) = self.shape(a);
        let (rg, nm) = self.shape(g);
        ensure!(rb == rg && m > 0 && nm % m == 0, Contract, "row_affine: g {rg}x{nm}, a {rb}x{m}");
        let n = nm / m;
        let mut out = DenseMatrix::zeros(rb, n);
        for r in 0..rb {
            let gr = self.value(g).row(r);
            let ar = self.value(a).row(r);
            for i in 0..n {
                out.set(r, i, gr[i * m..(i + 1) * m].iter().zip(ar).map(|(x, y)| x * y).sum());
            }
        }
        Ok(self.push(out, Op::RowAffine { g, a, m }))
    }

    /// Batched valid 1-D convolution. `x` rows are channel-major
    /// `(c_in x width)` windows, `w` is `filters x (c_in*kernel)`, `b` is
    /// `1 x filters`. Output rows are channel-major `(filters x out_width)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, c_in: usize, width: usize, stride: usize) -> Result<Var> {
        let (batch, xc) = self.shape(x);
        let (filters, wk) = self.shape(w);
        ensure!(xc == c_in * width, Contract, "conv1d: input cols {xc} != {c_in}x{width}");
        ensure!(c_in > 0 && wk % c_in == 0, Contract, "conv1d: weight cols {wk} not a multiple of {c_in}");
        ensure!(self.shape(b) == (1, filters), Contract, "conv1d: bias shape");
        let kernel = wk / c_in;
        ensure!(kernel >= 1 && kernel <= width && stride >= 1, Contract, "conv1d: kernel {kernel} vs width {width}");
        let out_width = (width - kernel) / stride + 1;
        let geom = ConvGeom { c_in, width, kernel, stride, filters, out_width };
        let mut out = DenseMatrix::zeros(batch, filters * out_width);
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        for r in 0..batch {
            let xr = xv.row(r);
            let or = out.row_mut(r);
            for f in 0..filters {
                let wf = wv.row(f);
                for j in 0..out_width {
                    let mut acc = bv.data()[f];
                    for c in 0..c_in {
                        let xs = &xr[c * width + j * stride..c * width + j * stride + kernel];
                        let ws = &wf[c * kernel..(c + 1) * kernel];
                        acc += xs.iter().zip(ws).map(|(p, q)| p * q).sum::<f64>();
                    }
                    or[f * out_width + j] = acc;
                }
            }
        }
        Ok(self.push(out, Op::Conv1d { x, w, b, geom }))
    }

    /// Registers every block of `params` as a leaf.
    pub fn param_net(&mut self, params: &NetworkParams) -> NetVars {
        let blocks = params
            .blocks()
            .into_iter()
            .map(|b| {
                let w = self.leaf(DenseMatrix::from_vec(b.out, b.inp, b.weight.to_vec()).expect("block shape"));
                let bias = self.leaf(DenseMatrix::row_vector(b.bias));
                (w, bias)
            })
            .collect();
        NetVars { spec: params.spec.clone(), blocks }
    }

    fn mlp_layers(&mut self, blocks: &[(Var, Var)], act: Activation, mut h: Var) -> Result<Var> {
        let last = blocks.len().saturating_sub(1);
        for (i, &(w, b)) in blocks.iter().enumerate() {
            let z = self.matmul_nt(h, w)?;
            h = self.add_bias(z, b)?;
            if i < last {
                h = self.activation(h, act);
            }
        }
        Ok(h)
    }

    /// Batched network forward pass recorded on the tape.
    pub fn forward(&mut self, net: &NetVars, x: Var) -> Result<Var> {
        match &net.spec {
            NetSpec::Mlp(s) => {
                ensure!(self.shape(x).1 == s.input_dim, Contract, "MLP input cols {} != {}", self.shape(x).1, s.input_dim);
                self.mlp_layers(&net.blocks, s.activation, x)
            }
            NetSpec::Conv1d(s) => {
                let shapes = s.feature_shapes();
                let mut h = x;
                for (li, layer) in s.conv_layers.iter().enumerate() {
                    let (c, w) = shapes[li];
                    let (wv, bv) = net.blocks[li];
                    let z = self.conv1d(h, wv, bv, c, w, layer.stride)?;
                    h = self.activation(z, s.activation);
                }
                self.mlp_layers(&net.blocks[s.conv_layers.len()..], s.activation, h)
            }
            NetSpec::Fusion(s) => {
                let cols = self.shape(x).1;
                ensure!(cols == s.input_dim + s.latent_dim, Contract, "fusion input cols {cols} != {}+{}", s.input_dim, s.latent_dim);
                let (trunk, out) = net.blocks.split_at(net.blocks.len() - 1);
                let mut h = if s.latent_dim > 0 { self.slice_cols(x, 0, s.input_dim)? } else { x };
                for &(w, b) in trunk {
                    let z = self.matmul_nt(h, w)?;
                    let z = self.add_bias(z, b)?;
                    h = self.activation(z, s.activation);
                }
                if s.latent_dim > 0 {
                    let lat = self.slice_cols(x, s.input_dim, cols)?;
                    let cross = s.bilinear.then(|| self.outer_rows(h, lat)).transpose()?;
                    h = self.concat_cols(h, lat)?;
                    if let Some(c) = cross {
                        h = self.concat_cols(h, c)?;
                    }
                }
                self.mlp_layers(out, s.activation, h)
            }
        }
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        ensure!(lv.shape() == (1, 1), Contract, "loss must be 1x1, got {:?}", lv.shape());
        if !lv.data()[0].is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {}", lv.data()[0])));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseMatrix::row_vector(&[1.0]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, i: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
        let node = &self.nodes[i];
        match node.op {
            Op::Leaf => {}
            Op::MatMulNT(x, w) => {
                let (b, k) = self.shape(x);
                let n = self.shape(w).0;
                let gx = acc(grads, x, (b, k));
                gemm_nn_acc(g.data(), self.value(w).data(), gx.data_mut(), b, n, k);
                let gw = acc(grads, w, (n, k));
                gemm_tn_acc(g.data(), self.value(x).data(), gw.data_mut(), b, n, k);
            }
            Op::AddBias(x, bias) => {
                add_into(acc(grads, x, g.shape()), g.data(), 1.0);
                let gb = acc(grads, bias, self.shape(bias));
                for r in 0..g.rows() {
                    gb.data_mut().iter_mut().zip(g.row(r)).for_each(|(o, v)| *o += v);
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, a, g.shape()), g.data(), 1.0);
                add_into(acc(grads, b, g.shape()), g.data(), 1.0);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, a, g.shape()), g.data(), 1.0);
                add_into(acc(grads, b, g.shape()), g.data(), -1.0);
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let gx = acc(grads, x, g.shape());
                for ((o, gv), yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * (1.0 - yv * yv);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(x).data();
                let gx = acc(grads, x, g.shape());
                for ((o, gv), t) in gx.data_mut().iter_mut().zip(g.data()).zip(xv) {
                    if *t > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::Square(x) => {
                let xv = self.value(x).data();
                let gx = acc(grads, x, g.shape());
                for ((o, gv), t) in gx.data_mut().iter_mut().zip(g.data()).zip(xv) {
                    *o += 2.0 * t * gv;
                }
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                let gx = acc(grads, x, self.shape(x));
                gx.data_mut().iter_mut().for_each(|o| *o += s);
            }
            Op::Scale(x, c) => add_into(acc(grads, x, g.shape()), g.data(), c),
            Op::ConcatCols(a, b) => {
                let ca = self.shape(a).1;
                let cb = self.shape(b).1;
                {
                    let ga = acc(grads, a, (g.rows(), ca));
                    for r in 0..g.rows() {
                        ga.row_mut(r).iter_mut().zip(&g.row(r)[..ca]).for_each(|(o, v)| *o += v);
                    }
                }
                let gb = acc(grads, b, (g.rows(), cb));
                for r in 0..g.rows() {
                    gb.row_mut(r).iter_mut().zip(&g.row(r)[ca..]).for_each(|(o, v)| *o += v);
                }
            }
            Op::SliceCols { x, start } => {
                let gx = acc(grads, x, self.shape(x));
                for r in 0..g.rows() {
                    gx.row_mut(r)[start..start + g.cols()].iter_mut().zip(g.row(r)).for_each(|(o, v)| *o += v);
                }
            }
            Op::OuterRows(x, y) => {
                let (cx, cy) = (self.shape(x).1, self.shape(y).1);
                {
                    let yv = self.value(y);
                    let gx = acc(grads, x, (g.rows(), cx));
                    for r in 0..g.rows() {
                        for c in 0..cx {
                            gx.row_mut(r)[c] += (0..cy).map(|j| g.get(r, c * cy + j) * yv.get(r, j)).sum::<f64>();
                        }
                    }
                }
                let xv = self.value(x);
                let gy = acc(grads, y, (g.rows(), cy));
                for r in 0..g.rows() {
                    for j in 0..cy {
                        gy.row_mut(r)[j] += (0..cx).map(|c| g.get(r, c * cy + j) * xv.get(r, c)).sum::<f64>();
                    }
                }
            }
            Op::RowAffine { g: gv, a, m } => {
                let n = g.cols();
                let (rows, nm) = self.shape(gv);
                {
                    let av = self.value(a);
                    let gg = acc(grads, gv, (rows, nm));
                    for r in 0..rows {
                        for i in 0..n {
                            let up = g.get(r, i);
                            for j in 0..m {
                                gg.data_mut()[r * nm + i * m + j] += up * av.get(r, j);
                            }
                        }
                    }
                }
                let gval = self.value(gv);
                let ga = acc(grads, a, (rows, m));
                for r in 0..rows {
                    for i in 0..n {
                        let up = g.get(r, i);
                        for j in 0..m {
                            ga.data_mut()[r * m + j] += up * gval.get(r, i * m + j);
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b, geom } => {
                let ConvGeom { c_in, width, kernel, stride, filters, out_width } = geom;
                let batch = g.rows();
                {
                    let gb = acc(grads, b, (1, filters));
                    for r in 0..batch {
                        for f in 0..filters {
                            gb.data_mut()[f] += g.row(r)[f * out_width..(f + 1) * out_width].iter().sum::<f64>();
                        }
                    }
                }
                {
                    let xv = self.value(x);
                    let gw = acc(grads, w, (filters, c_in * kernel));
                    for r in 0..batch {
                        let xr = xv.row(r);
                        let gr = g.row(r);
                        for f in 0..filters {
                            let gwf = gw.row_mut(f);
                            for j in 0..out_width {
                                let up = gr[f * out_width + j];
                                if up == 0.0 {
                                    continue;
                                }
                                for c in 0..c_in {
                                    let xs = &xr[c * width + j * stride..c * width + j * stride + kernel];
                                    for (o, xv) in gwf[c * kernel..(c + 1) * kernel].iter_mut().zip(xs) {
                                        *o += up * xv;
                                    }
                                }
                            }
                        }
                    }
                }
                let wv = self.value(w);
                let gx = acc(grads, x, (batch, c_in * width));
                for r in 0..batch {
                    let gr = g.row(r);
                    let gxr = gx.row_mut(r);
                    for f in 0..filters {
                        let wf = wv.row(f);
                        for j in 0..out_width {
                            let up = gr[f * out_width + j];
                            if up == 0.0 {
                                continue;
                            }
                            for c in 0..c_in {
                                let base = c * width + j * stride;
                                for (o, wq) in gxr[base..base + kernel].iter_mut().zip(&wf[c * kernel..(c + 1) * kernel]) {
                                    *o += up * wq;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<DenseMatrix>], v: Var, shape: (usize, usize)) -> &mut DenseMatrix {
    grads[v.0].get_or_insert_with(|| DenseMatrix::zeros(shape.0, shape.1))
}

fn add_into(dst: &mut DenseMatrix, src: &[f64], c: f64) {
    dst.data_mut().iter_mut().zip(src).for_each(|(o, v)| *o += c * v);
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<DenseMatrix>>,
}

impl Grads {
    /// Gradient of a node, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Parameter gradient of a registered network in `theta` layout.
    pub fn flat(&self, net: &NetVars) -> Vec<f64> {
        let mut out = Vec::with_capacity(net.spec.param_count());
        for ((o, i), &(w, b)) in net.spec.block_shapes().into_iter().zip(&net.blocks) {
            match self.get(w) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, o * i)),
            }
            match self.get(b) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, o)),
            }
        }
        out
    }
}

/// Value and gradient of a scalar loss built on the tape from `params`.
pub fn grad<F>(params: &NetworkParams, loss_fn: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &NetVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.param_net(params);
    let loss = loss_fn(&mut tape, &vars)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    Ok((value, grads.flat(&vars)))
}

/// Value and per-network gradients of a scalar loss over several networks.
pub fn grad_many<F>(params: &[&NetworkParams], loss_fn: F) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: FnOnce(&mut Tape, &[NetVars]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<NetVars> = params.iter().map(|p| tape.param_net(p)).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    Ok((value, vars.iter().map(|v| grads.flat(v)).collect()))
}

/// Gradient of a loss that is a sum over `items`, evaluated in fixed-size
/// chunks (in parallel when enabled) and reduced in chunk order, so the
/// result does not depend on the thread count. `loss_fn` must return the
/// chunk's contribution to the total loss.
pub fn chunked_grad<T, F>(params: &[&NetworkParams], items: &[T], chunk: usize, loss_fn: F) -> Result<(f64, Vec<Vec<f64>>)>
where
    T: Sync,
    F: Fn(&mut Tape, &[NetVars], &[T]) -> Result<Var> + Sync + Send,
{
    ensure!(chunk > 0, Contract, "chunk size must be positive");
    let chunks: Vec<&[T]> = items.chunks(chunk).collect();
    let parts = crate::par::par_map(&chunks, |c| grad_many(params, |tape, vars| loss_fn(tape, vars, c)));
    let mut total = 0.0;
    let mut acc: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.theta.len()]).collect();
    for part in parts {
        let (v, gs) = part?;
        total += v;
        for (a, g) in acc.iter_mut().zip(gs) {
            a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
        }
    }
    Ok((total, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::{MlpSpec, NetSpec};

    #[test]
    fn half_squared_norm_gradient_is_theta() {
        let spec = NetSpec::Mlp(MlpSpec::new(2, vec![3], 1));
        let p = NetworkParams::init(spec, &mut seeded(3)).unwrap();
        let (_, g) = grad(&p, |tape, vars| {
            let mut total: Option<Var> = None;
            for &(w, b) in &vars.blocks {
                for v in [w, b] {
                    let sq = tape.square(v);
                    let s = tape.sum(sq);
                    total = Some(match total {
                        Some(t) => tape.add(t, s)?,
                        None => s,
                    });
                }
            }
            Ok(tape.scale(total.unwrap(), 0.5))
        })
        .unwrap();
        for (a, b) in g.iter().zip(&p.theta) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let spec = NetSpec::Mlp(MlpSpec::new(2, vec![3], 1));
        let p = NetworkParams::init(spec, &mut seeded(3)).unwrap();
        let (v, g) = grad(&p, |tape, _| Ok(tape.leaf(DenseMatrix::row_vector(&[4.0])))).unwrap();
        assert_eq!(v, 4.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let spec = NetSpec::Mlp(MlpSpec::new(1, vec![], 1));
        let p = NetworkParams::zeros(spec).unwrap();
        let r = grad(&p, |tape, _| Ok(tape.leaf(DenseMatrix::row_vector(&[f64::NAN]))));
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn tape_forward_matches_direct_forward() {
        let spec = NetSpec::Mlp(MlpSpec::new(3, vec![5, 4], 2));
        let p = NetworkParams::init(spec, &mut seeded(11)).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.1, -0.2, 0.3], vec![1.0, 0.5, -1.5]]).unwrap();
        let mut tape = Tape::new();
        let vars = tape.param_net(&p);
        let xv = tape.leaf(x.clone());
        let y = tape.forward(&vars, xv).unwrap();
        let direct = p.forward_batch(&x).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
