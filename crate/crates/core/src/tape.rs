//! Reverse-mode differentiation over a recorded expression graph.
//!
//! Every primitive evaluates eagerly and appends a node to the tape, so
//! node ids are already in topological order. The backward pass does not
//! compute gradient *values* directly: it builds the gradient expressions
//! out of the same primitive set and appends them to the tape. Because a
//! gradient is itself a recorded expression, running a second backward
//! pass through it yields exact second-order derivatives — this is what
//! the meta-update needs to differentiate through an inner gradient step.
//!
//! A tape is a single-threaded object; independent tapes may live on
//! independent threads. Node values are immutable once recorded.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Transpose { a: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    AddBias { x: NodeId, bias: NodeId },
    Scale { a: NodeId, c: f64 },
    AddScalar { a: NodeId },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    SoftmaxRows { a: NodeId },
    Log { a: NodeId },
    Clamp { a: NodeId, lo: f64, hi: f64 },
    SumAll { a: NodeId },
    /// `[r,c] -> [1,c]`, sums each column.
    ColSum { a: NodeId },
    /// `[r,c] -> [r,1]`, sums each row.
    RowSum { a: NodeId },
    BroadcastRows { a: NodeId },
    BroadcastCols { a: NodeId },
    ConcatCols { parts: Arc<Vec<NodeId>> },
    SliceCols { a: NodeId, start: usize, len: usize },
    PadCols { a: NodeId, left: usize },
    GatherRows { table: NodeId, ids: Arc<Vec<usize>> },
    ScatterAddRows { src: NodeId, ids: Arc<Vec<usize>> },
    /// Mean over row segments given by `offsets` (len = segments + 1).
    SegmentMean { src: NodeId, offsets: Arc<Vec<usize>> },
    /// Adjoint of `SegmentMean`: row t of the output is `src[seg(t)] / len(seg(t))`.
    SegmentSpread { src: NodeId, offsets: Arc<Vec<usize>> },
    Reshape { a: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of primitive evaluations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Records an input tensor. Leaves terminate gradient flow; they are
    /// both the trainable parameters and the constants of a graph.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Alias of [`Tape::leaf`] that reads better for non-parameter inputs.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = av.row_slice(i);
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &apv) in arow.iter().enumerate().take(k) {
                let brow = bv.row_slice(p);
                for j in 0..n {
                    orow[j] += apv * brow[j];
                }
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMul { a, b }, value))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.at(i, j);
            }
        }
        let value = Tensor::matrix(c, r, out).expect("transpose shape");
        self.push(Op::Transpose { a }, value)
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(
                op_name,
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.elementwise("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.elementwise("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.elementwise("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.elementwise("div", a, b, |x, y| x / y)?;
        Ok(self.push(Op::Div { a, b }, value))
    }

    /// `x + bias` with `bias` broadcast across the rows of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err(
                "add_bias",
                format!("x {:?}, bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let cols = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv.data()[i % cols])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(Op::AddBias { x, bias }, value))
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(op, value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, Op::Scale { a, c }, |x| c * x)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, Op::AddScalar { a }, |x| x + c)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Relu { a }, |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid { a }, |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Log { a }, |x| x.ln())
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map(a, Op::Clamp { a, lo, hi }, |x| x.clamp(lo, hi))
    }

    /// Row-wise softmax with the usual max-shift for stability.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = av.row_slice(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            data.extend(exps.into_iter().map(|e| e / sum));
        }
        let value = Tensor::matrix(r, c, data).expect("softmax shape");
        self.push(Op::SoftmaxRows { a }, value)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::SumAll { a }, Tensor::scalar(s))
    }

    /// Mean over all elements.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn col_sum(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (j, o) in out.iter_mut().enumerate() {
                *o += av.at(i, j);
            }
        }
        let value = Tensor::row(out);
        self.push(Op::ColSum { a }, value)
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let out: Vec<f64> = (0..av.rows())
            .map(|i| av.row_slice(i).iter().sum())
            .collect();
        let value = Tensor::column(out);
        self.push(Op::RowSum { a }, value)
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        let av = self.value(a);
        if av.rows() != 1 {
            return Err(shape_err(
                "broadcast_rows",
                format!("expected [1, c], got {:?}", av.shape()),
            ));
        }
        let mut data = Vec::with_capacity(rows * av.cols());
        for _ in 0..rows {
            data.extend_from_slice(av.data());
        }
        let value = Tensor::matrix(rows, av.cols(), data)?;
        Ok(self.push(Op::BroadcastRows { a }, value))
    }

    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> Result<NodeId> {
        let av = self.value(a);
        if av.cols() != 1 {
            return Err(shape_err(
                "broadcast_cols",
                format!("expected [r, 1], got {:?}", av.shape()),
            ));
        }
        let mut data = Vec::with_capacity(av.rows() * cols);
        for i in 0..av.rows() {
            data.extend(std::iter::repeat(av.at(i, 0)).take(cols));
        }
        let value = Tensor::matrix(av.rows(), cols, data)?;
        Ok(self.push(Op::BroadcastCols { a }, value))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no inputs".into()));
        }
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err(
                    "concat_cols",
                    format!(
                        "row counts differ: {} vs {}",
                        rows,
                        self.value(p).rows()
                    ),
                ));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        Ok(self.push(
            Op::ConcatCols {
                parts: Arc::new(parts.to_vec()),
            },
            value,
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(shape_err(
                "slice_cols",
                format!("[{start}, {start}+{len}) out of {:?}", av.shape()),
            ));
        }
        let mut data = Vec::with_capacity(av.rows() * len);
        for i in 0..av.rows() {
            data.extend_from_slice(&av.row_slice(i)[start..start + len]);
        }
        let value = Tensor::matrix(av.rows(), len, data)?;
        Ok(self.push(Op::SliceCols { a, start, len }, value))
    }

    pub fn pad_cols(&mut self, a: NodeId, left: usize, right: usize) -> NodeId {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let total = left + c + right;
        let mut data = vec![0.0; r * total];
        for i in 0..r {
            data[i * total + left..i * total + left + c].copy_from_slice(av.row_slice(i));
        }
        let value = Tensor::matrix(r, total, data).expect("pad shape");
        self.push(Op::PadCols { a, left }, value)
    }

    /// Rows of `table` selected by `ids`; duplicates allowed.
    pub fn gather_rows(&mut self, table: NodeId, ids: Arc<Vec<usize>>) -> Result<NodeId> {
        let tv = self.value(table);
        let cols = tv.cols();
        if let Some(&bad) = ids.iter().find(|&&i| i >= tv.rows()) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} out of {:?}", tv.shape()),
            ));
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids.iter() {
            data.extend_from_slice(tv.row_slice(i));
        }
        let value = Tensor::matrix(ids.len(), cols, data)?;
        Ok(self.push(Op::GatherRows { table, ids }, value))
    }

    /// Builds a `[rows, k]` tensor where row `ids[t]` accumulates row `t`
    /// of `src`. Adjoint of `gather_rows`.
    pub fn scatter_add_rows(
        &mut self,
        src: NodeId,
        ids: Arc<Vec<usize>>,
        rows: usize,
    ) -> Result<NodeId> {
        let sv = self.value(src);
        if sv.rows() != ids.len() {
            return Err(shape_err(
                "scatter_add_rows",
                format!("{} ids for {:?}", ids.len(), sv.shape()),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(shape_err(
                "scatter_add_rows",
                format!("target row {bad} out of {rows}"),
            ));
        }
        let cols = sv.cols();
        let mut data = vec![0.0; rows * cols];
        for (t, &i) in ids.iter().enumerate() {
            let srow = sv.row_slice(t);
            let drow = &mut data[i * cols..(i + 1) * cols];
            for (d, &s) in drow.iter_mut().zip(srow) {
                *d += s;
            }
        }
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ScatterAddRows { src, ids }, value))
    }

    fn check_offsets(op: &'static str, offsets: &[usize], total_rows: usize) -> Result<()> {
        let ok = offsets.len() >= 2
            && offsets[0] == 0
            && *offsets.last().unwrap() == total_rows
            && offsets.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(shape_err(
                op,
                format!("bad offsets {offsets:?} for {total_rows} rows"),
            ))
        }
    }

    /// Per-segment mean over rows of `src`. `offsets` has one entry per
    /// segment boundary, starting at 0 and ending at `src.rows()`; empty
    /// segments are rejected.
    pub fn segment_mean(&mut self, src: NodeId, offsets: Arc<Vec<usize>>) -> Result<NodeId> {
        let sv = self.value(src);
        Self::check_offsets("segment_mean", &offsets, sv.rows())?;
        let cols = sv.cols();
        let segs = offsets.len() - 1;
        let mut data = vec![0.0; segs * cols];
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            let inv = 1.0 / (hi - lo) as f64;
            let drow = &mut data[s * cols..(s + 1) * cols];
            for t in lo..hi {
                for (d, &v) in drow.iter_mut().zip(sv.row_slice(t)) {
                    *d += v * inv;
                }
            }
        }
        let value = Tensor::matrix(segs, cols, data)?;
        Ok(self.push(Op::SegmentMean { src, offsets }, value))
    }

    /// Adjoint of [`Tape::segment_mean`]: expands `[segments, k]` back to
    /// row space, dividing each row by its segment length.
    pub fn segment_spread(&mut self, src: NodeId, offsets: Arc<Vec<usize>>) -> Result<NodeId> {
        let sv = self.value(src);
        let total = *offsets.last().ok_or_else(|| {
            shape_err("segment_spread", "empty offsets".into())
        })?;
        Self::check_offsets("segment_spread", &offsets, total)?;
        if sv.rows() != offsets.len() - 1 {
            return Err(shape_err(
                "segment_spread",
                format!("{} segments for {:?}", offsets.len() - 1, sv.shape()),
            ));
        }
        let cols = sv.cols();
        let mut data = vec![0.0; total * cols];
        for s in 0..sv.rows() {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            let inv = 1.0 / (hi - lo) as f64;
            for t in lo..hi {
                let drow = &mut data[t * cols..(t + 1) * cols];
                for (d, &v) in drow.iter_mut().zip(sv.row_slice(s)) {
                    *d = v * inv;
                }
            }
        }
        let value = Tensor::matrix(total, cols, data)?;
        Ok(self.push(Op::SegmentSpread { src, offsets }, value))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let av = self.value(a);
        if rows * cols != av.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> [{rows}, {cols}]", av.shape()),
            ));
        }
        let value = Tensor::matrix(rows, cols, av.data().to_vec())?;
        Ok(self.push(Op::Reshape { a }, value))
    }

    /// Step mask of `a` (1 where strictly positive). Recorded as a leaf:
    /// the second derivative of relu is zero almost everywhere.
    fn relu_mask(&mut self, a: NodeId) -> NodeId {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.leaf(Tensor::new(shape, data).expect("mask shape"))
    }

    fn clamp_mask(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&v| if v > lo && v < hi { 1.0 } else { 0.0 })
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.leaf(Tensor::new(shape, data).expect("mask shape"))
    }

    /// Reverse pass from a scalar `root`. Returns, for each node in `wrt`,
    /// the id of a node holding its gradient (`None` when the root does
    /// not depend on it). The gradient expressions are appended to the
    /// tape, so they can themselves be differentiated.
    pub fn backward(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<Option<NodeId>>> {
        if !self.value(root).is_scalar() {
            return Err(shape_err(
                "backward",
                format!("root must be scalar, got {:?}", self.value(root).shape()),
            ));
        }
        let frontier = root.0 + 1;
        let mut adj: Vec<Option<NodeId>> = vec![None; frontier];
        adj[root.0] = Some(self.constant(Tensor::scalar(1.0)));

        // Ids are topological, so one reverse sweep visits each node once.
        for i in (0..frontier).rev() {
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let bt = self.transpose(b);
                    let da = self.matmul(g, bt)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                    let at = self.transpose(a);
                    let db = self.matmul(at, g)?;
                    Self::accumulate(self, &mut adj, b, db)?;
                }
                Op::Transpose { a } => {
                    let da = self.transpose(g);
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::Add { a, b } => {
                    Self::accumulate(self, &mut adj, a, g)?;
                    Self::accumulate(self, &mut adj, b, g)?;
                }
                Op::Sub { a, b } => {
                    Self::accumulate(self, &mut adj, a, g)?;
                    let db = self.neg(g);
                    Self::accumulate(self, &mut adj, b, db)?;
                }
                Op::Mul { a, b } => {
                    let da = self.mul(g, b)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                    let db = self.mul(g, a)?;
                    Self::accumulate(self, &mut adj, b, db)?;
                }
                Op::Div { a, b } => {
                    let da = self.div(g, b)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                    let bb = self.mul(b, b)?;
                    let q = self.div(a, bb)?;
                    let gq = self.mul(g, q)?;
                    let db = self.neg(gq);
                    Self::accumulate(self, &mut adj, b, db)?;
                }
                Op::AddBias { x, bias } => {
                    Self::accumulate(self, &mut adj, x, g)?;
                    let db = self.col_sum(g);
                    Self::accumulate(self, &mut adj, bias, db)?;
                }
                Op::Scale { a, c } => {
                    let da = self.scale(g, c);
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::AddScalar { a } => {
                    Self::accumulate(self, &mut adj, a, g)?;
                }
                Op::Relu { a } => {
                    let mask = self.relu_mask(a);
                    let da = self.mul(g, mask)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::Sigmoid { a } => {
                    // y' = y (1 - y), expressed through the output node so
                    // a second backward sees the full dependency.
                    let y = NodeId(i);
                    let neg_y = self.neg(y);
                    let one_minus = self.add_scalar(neg_y, 1.0);
                    let yy = self.mul(y, one_minus)?;
                    let da = self.mul(g, yy)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::SoftmaxRows { a } => {
                    let y = NodeId(i);
                    let gy = self.mul(g, y)?;
                    let dots = self.row_sum(gy);
                    let cols = self.value(y).cols();
                    let dotsb = self.broadcast_cols(dots, cols)?;
                    let ydots = self.mul(y, dotsb)?;
                    let da = self.sub(gy, ydots)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::Log { a } => {
                    let da = self.div(g, a)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::Clamp { a, lo, hi } => {
                    let mask = self.clamp_mask(a, lo, hi);
                    let da = self.mul(g, mask)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::SumAll { a } => {
                    let (r, c) = {
                        let av = self.value(a);
                        (av.rows(), av.cols())
                    };
                    let row = self.broadcast_cols(g, c)?;
                    let da = self.broadcast_rows(row, r)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::ColSum { a } => {
                    let r = self.value(a).rows();
                    let da = self.broadcast_rows(g, r)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::RowSum { a } => {
                    let c = self.value(a).cols();
                    let da = self.broadcast_cols(g, c)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::BroadcastRows { a } => {
                    let da = self.col_sum(g);
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::BroadcastCols { a } => {
                    let da = self.row_sum(g);
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::ConcatCols { parts } => {
                    let mut start = 0;
                    for &p in parts.iter() {
                        let len = self.value(p).cols();
                        let dp = self.slice_cols(g, start, len)?;
                        Self::accumulate(self, &mut adj, p, dp)?;
                        start += len;
                    }
                }
                Op::SliceCols { a, start, len } => {
                    let total = self.value(a).cols();
                    let da = self.pad_cols(g, start, total - start - len);
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::PadCols { a, left } => {
                    let len = self.value(a).cols();
                    let da = self.slice_cols(g, left, len)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                }
                Op::GatherRows { table, ids } => {
                    let rows = self.value(table).rows();
                    let dt = self.scatter_add_rows(g, ids, rows)?;
                    Self::accumulate(self, &mut adj, table, dt)?;
                }
                Op::ScatterAddRows { src, ids } => {
                    let ds = self.gather_rows(g, ids)?;
                    Self::accumulate(self, &mut adj, src, ds)?;
                }
                Op::SegmentMean { src, offsets } => {
                    let ds = self.segment_spread(g, offsets)?;
                    Self::accumulate(self, &mut adj, src, ds)?;
                }
                Op::SegmentSpread { src, offsets } => {
                    let ds = self.segment_mean(g, offsets)?;
                    Self::accumulate(self, &mut adj, src, ds)?;
                }
                Op::Reshape { a } => {
                    let (r, c) = {
                        let av = self.value(a);
                        (av.rows(), av.cols())
                    };
                    let da = self.reshape(g, r, c)?;
                    Self::accumulate(self, &mut adj, a, da)?;
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| if w.0 < frontier { adj[w.0] } else { None })
            .collect())
    }

    fn accumulate(
        tape: &mut Tape,
        adj: &mut [Option<NodeId>],
        target: NodeId,
        contribution: NodeId,
    ) -> Result<()> {
        adj[target.0] = Some(match adj[target.0] {
            None => contribution,
            Some(existing) => tape.add(existing, contribution)?,
        });
        Ok(())
    }
}
