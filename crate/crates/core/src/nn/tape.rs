//! Reverse-mode automatic differentiation over fp64 matrices.
//!
//! Every trainable block in the crate builds its forward pass on a [`Tape`]
//! and reads gradients back after [`Tape::backward`]. A tape is cheap to
//! create, so value-only evaluation simply builds the graph and never calls
//! backward. Keeping a single forward path guarantees that rollout-time
//! values and training-time values agree bitwise.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Broadcast-add a 1xN row to every row of an MxN matrix.
    AddRow(Var, Var),
    /// Broadcast-multiply every row of an MxN matrix by a 1xN row.
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Log(Var),
    ClampMin(Var, f64),
    SoftmaxRows(Var),
    /// Row softmax where `false` mask entries are excluded (probability 0).
    MaskedSoftmaxRows(Var),
    /// Per-row normalization (x - mean) / sqrt(var + eps), no affine part.
    LayerNormRows(Var, f64),
    SumAll(Var),
    MeanAll(Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    Transpose(Var),
    /// out[i, 0] = input[i, indices[i]].
    PickPerRow(Var, Vec<usize>),
    /// Lower-triangular Toeplitz matrix from a 1xL vector of relative
    /// position offsets: out[i, j] = v[i - j] for j <= i, 0 above.
    RelBias(Var, usize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Arena of computation nodes for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[(0, 0)]
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    // ── graph construction ─────────────────────────────────────────────

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_row(&mut self, row: &[f64]) -> Var {
        let arr = Array2::from_shape_vec((1, row.len()), row.to_vec()).expect("row shape");
        self.leaf(arr)
    }

    pub fn leaf_scalar(&mut self, x: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ac != br {
            return Err(Error::Domain(format!(
                "matmul dimension mismatch: {ar}x{ac} . {br}x{bc}"
            )));
        }
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_compatible(a, row, "add_row")?;
        let value = &self.nodes[a.0].value + &self.nodes[row.0].value.row(0);
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_compatible(a, row, "mul_row")?;
        let value = &self.nodes[a.0].value * &self.nodes[row.0].value.row(0);
        Ok(self.push(value, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(floor));
        self.push(value, Op::ClampMin(a, floor))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(&self.nodes[a.0].value);
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn masked_softmax_rows(&mut self, a: Var, mask: Array2<bool>) -> Result<Var> {
        if mask.dim() != self.dims(a) {
            return Err(Error::Domain("softmax mask shape mismatch".into()));
        }
        let value = masked_softmax_rows(&self.nodes[a.0].value, &mask);
        Ok(self.push(value, Op::MaskedSoftmaxRows(a)))
    }

    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = &self.nodes[a.0].value;
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let denom = (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) / denom);
        }
        self.push(value, Op::LayerNormRows(a, eps))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(value, Op::MeanAll(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, _) = self.dims(a);
        let (br, _) = self.dims(b);
        if ar != br {
            return Err(Error::Domain("concat_cols row count mismatch".into()));
        }
        let value = ndarray::concatenate(
            Axis(1),
            &[self.nodes[a.0].value.view(), self.nodes[b.0].value.view()],
        )
        .map_err(|e| Error::Domain(format!("concat_cols: {e}")))?;
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, ac) = self.dims(a);
        let (_, bc) = self.dims(b);
        if ac != bc {
            return Err(Error::Domain("concat_rows column count mismatch".into()));
        }
        let value = ndarray::concatenate(
            Axis(0),
            &[self.nodes[a.0].value.view(), self.nodes[b.0].value.view()],
        )
        .map_err(|e| Error::Domain(format!("concat_rows: {e}")))?;
        Ok(self.push(value, Op::ConcatRows(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn pick_per_row(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let (rows, cols) = self.dims(a);
        if indices.len() != rows {
            return Err(Error::Domain("pick_per_row index count mismatch".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(Error::Domain(format!(
                "pick_per_row index {bad} out of range for {cols} columns"
            )));
        }
        let mut value = Array2::zeros((rows, 1));
        for (i, &j) in indices.iter().enumerate() {
            value[(i, 0)] = self.nodes[a.0].value[(i, j)];
        }
        Ok(self.push(value, Op::PickPerRow(a, indices)))
    }

    pub fn rel_bias(&mut self, offsets: Var, n: usize) -> Result<Var> {
        let (r, c) = self.dims(offsets);
        if r != 1 || c < n {
            return Err(Error::Domain(format!(
                "rel_bias needs a 1x(>= {n}) offset vector, got {r}x{c}"
            )));
        }
        let v = &self.nodes[offsets.0].value;
        let mut value = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                value[(i, j)] = v[(0, i - j)];
            }
        }
        Ok(self.push(value, Op::RelBias(offsets, n)))
    }

    // ── backward pass ──────────────────────────────────────────────────

    /// Compute gradients of the scalar node `loss` with respect to every
    /// node on the tape. Gradients are read back with [`Tape::grad`].
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Domain("backward target must be a 1x1 scalar".into()));
        }
        let mut grads: Vec<Array2<f64>> = self
            .nodes
            .iter()
            .map(|n| Array2::zeros(n.value.dim()))
            .collect();
        grads[loss.0][(0, 0)] = 1.0;

        for idx in (0..=loss.0).rev() {
            if grads[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[idx].clone();
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value.t());
                    let db = self.nodes[a.0].value.t().dot(&g);
                    grads[a.0] += &da;
                    grads[b.0] += &db;
                }
                Op::Add(a, b) => {
                    grads[a.0] += &g;
                    grads[b.0] += &g;
                }
                Op::Sub(a, b) => {
                    grads[a.0] += &g;
                    grads[b.0] -= &g;
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[b.0].value;
                    let db = &g * &self.nodes[a.0].value;
                    grads[a.0] += &da;
                    grads[b.0] += &db;
                }
                Op::AddRow(a, row) => {
                    grads[a.0] += &g;
                    let summed = g.sum_axis(Axis(0));
                    grads[row.0] += &summed.insert_axis(Axis(0));
                }
                Op::MulRow(a, row) => {
                    let da = &g * &self.nodes[row.0].value.row(0);
                    grads[a.0] += &da;
                    let drow = (&g * &self.nodes[a.0].value).sum_axis(Axis(0));
                    grads[row.0] += &drow.insert_axis(Axis(0));
                }
                Op::Scale(a, c) => {
                    grads[a.0].scaled_add(*c, &g);
                }
                Op::Sigmoid(a) => {
                    let da = &g * &node.value.mapv(|y| y * (1.0 - y));
                    grads[a.0] += &da;
                }
                Op::Tanh(a) => {
                    let da = &g * &node.value.mapv(|y| 1.0 - y * y);
                    grads[a.0] += &da;
                }
                Op::Relu(a) => {
                    let da = ndarray::Zip::from(&g)
                        .and(&self.nodes[a.0].value)
                        .map_collect(|&gi, &xi| if xi > 0.0 { gi } else { 0.0 });
                    grads[a.0] += &da;
                }
                Op::Softplus(a) => {
                    let da = &g * &self.nodes[a.0].value.mapv(sigmoid);
                    grads[a.0] += &da;
                }
                Op::Log(a) => {
                    let da = &g / &self.nodes[a.0].value;
                    grads[a.0] += &da;
                }
                Op::ClampMin(a, floor) => {
                    let da = ndarray::Zip::from(&g)
                        .and(&self.nodes[a.0].value)
                        .map_collect(|&gi, &xi| if xi > *floor { gi } else { 0.0 });
                    grads[a.0] += &da;
                }
                Op::SoftmaxRows(a) | Op::MaskedSoftmaxRows(a) => {
                    // dx_i = y_i * (g_i - sum_j g_j y_j); masked entries have
                    // y = 0 and therefore receive no gradient.
                    let y = &node.value;
                    let mut da = Array2::zeros(y.dim());
                    for (r, (yrow, grow)) in y.rows().into_iter().zip(g.rows()).enumerate() {
                        let dot: f64 = yrow.iter().zip(grow.iter()).map(|(y, g)| y * g).sum();
                        for (c, (&yv, &gv)) in yrow.iter().zip(grow.iter()).enumerate() {
                            da[(r, c)] = yv * (gv - dot);
                        }
                    }
                    grads[a.0] += &da;
                }
                Op::LayerNormRows(a, eps) => {
                    let x = &self.nodes[a.0].value;
                    let mut da = Array2::zeros(x.dim());
                    for (r, xrow) in x.rows().into_iter().enumerate() {
                        let n = xrow.len() as f64;
                        let mean = xrow.sum() / n;
                        let var =
                            xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let denom = (var + eps).sqrt();
                        let xhat: Vec<f64> = xrow.iter().map(|v| (v - mean) / denom).collect();
                        let grow = g.row(r);
                        let g_mean = grow.sum() / n;
                        let gx_mean: f64 =
                            grow.iter().zip(&xhat).map(|(g, x)| g * x).sum::<f64>() / n;
                        for c in 0..xrow.len() {
                            da[(r, c)] = (grow[c] - g_mean - xhat[c] * gx_mean) / denom;
                        }
                    }
                    grads[a.0] += &da;
                }
                Op::SumAll(a) => {
                    let gv = g[(0, 0)];
                    grads[a.0] += gv;
                }
                Op::MeanAll(a) => {
                    let gv = g[(0, 0)] / self.nodes[a.0].value.len() as f64;
                    grads[a.0] += gv;
                }
                Op::ConcatCols(a, b) => {
                    let (_, ac) = self.dims(*a);
                    grads[a.0] += &g.slice(ndarray::s![.., ..ac]);
                    grads[b.0] += &g.slice(ndarray::s![.., ac..]);
                }
                Op::ConcatRows(a, b) => {
                    let (ar, _) = self.dims(*a);
                    grads[a.0] += &g.slice(ndarray::s![..ar, ..]);
                    grads[b.0] += &g.slice(ndarray::s![ar.., ..]);
                }
                Op::Transpose(a) => {
                    grads[a.0] += &g.t();
                }
                Op::PickPerRow(a, indices) => {
                    for (i, &j) in indices.iter().enumerate() {
                        grads[a.0][(i, j)] += g[(i, 0)];
                    }
                }
                Op::RelBias(offsets, n) => {
                    for i in 0..*n {
                        for j in 0..=i {
                            grads[offsets.0][(0, i - j)] += g[(i, j)];
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl Tape {
    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::Domain(format!(
                "{op} shape mismatch: {:?} vs {:?}",
                self.dims(a),
                self.dims(b)
            )));
        }
        Ok(())
    }

    fn row_compatible(&self, a: Var, row: Var, op: &str) -> Result<()> {
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != self.dims(a).1 {
            return Err(Error::Domain(format!(
                "{op} expects a 1x{} row, got {rr}x{rc}",
                self.dims(a).1
            )));
        }
        Ok(())
    }
}

/// Gradients from one backward pass, indexed by the originating [`Var`].
pub struct Gradients {
    grads: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn grad(&self, v: Var) -> &Array2<f64> {
        &self.grads[v.0]
    }

    /// Flatten the gradients of `vars` in order into one vector (row-major
    /// within each var). The layout matches the blocks' flat parameter order.
    pub fn flat(&self, vars: &[Var]) -> Vec<f64> {
        let mut out = Vec::new();
        for &v in vars {
            out.extend(self.grads[v.0].iter().copied());
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn masked_softmax_rows(x: &Array2<f64>, mask: &Array2<bool>) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for r in 0..x.nrows() {
        let max = x
            .row(r)
            .iter()
            .zip(mask.row(r))
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..x.ncols() {
            if mask[(r, c)] {
                let e = (x[(r, c)] - max).exp();
                out[(r, c)] = e;
                sum += e;
            }
        }
        if sum > 0.0 {
            for c in 0..x.ncols() {
                out[(r, c)] /= sum;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn matmul_values_and_grads() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = t.leaf(array![[5.0], [6.0]]);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &array![[17.0], [39.0]]);
        let s = t.sum_all(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.grad(a), &array![[5.0, 6.0], [5.0, 6.0]]);
        assert_eq!(g.grad(b), &array![[4.0], [6.0]]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let a = t.leaf(array![[0.0, 0.0, 0.0, 0.0], [1.0, 2.0, 3.0, 4.0]]);
        let s = t.softmax_rows(a);
        for row in t.value(s).rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(t.value(s)[(0, 0)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn masked_softmax_zeroes_future_positions() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 9.0], [2.0, 3.0]]);
        let mask = array![[true, false], [true, true]];
        let s = t.masked_softmax_rows(a, mask).unwrap();
        assert_eq!(t.value(s)[(0, 0)], 1.0);
        assert_eq!(t.value(s)[(0, 1)], 0.0);
        assert_abs_diff_eq!(t.value(s).row(1).sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0]]);
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn pick_per_row_scatters_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let p = t.pick_per_row(a, vec![1, 0]).unwrap();
        assert_eq!(t.value(p), &array![[2.0], [3.0]]);
        let s = t.sum_all(p);
        let g = t.backward(s).unwrap();
        assert_eq!(g.grad(a), &array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn rel_bias_is_toeplitz() {
        let mut t = Tape::new();
        let v = t.leaf_row(&[10.0, 20.0, 30.0]);
        let m = t.rel_bias(v, 3).unwrap();
        assert_eq!(
            t.value(m),
            &array![[10.0, 0.0, 0.0], [20.0, 10.0, 0.0], [30.0, 20.0, 10.0]]
        );
        let s = t.sum_all(m);
        let g = t.backward(s).unwrap();
        assert_eq!(g.grad(v), &array![[3.0, 2.0, 1.0]]);
    }

    #[test]
    fn layer_norm_rows_zero_mean_unit_var() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0, 3.0, 4.0]]);
        let n = t.layer_norm_rows(a, 1e-8);
        let row = t.value(n).row(0).to_owned();
        assert_abs_diff_eq!(row.sum(), 0.0, epsilon = 1e-9);
        let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-6);
    }
}
