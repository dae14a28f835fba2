//! Eager compute graph with reverse-mode gradient accumulation.
//!
//! Every operation evaluates immediately and records itself on a tape.
//! `backward` replays the tape in reverse, accumulating vector-Jacobian
//! products, and writes parameter gradients back into the
//! [`ParameterStore`]. A graph lives for one forward/backward pass and is
//! dropped afterwards.
//!
//! Shape mismatches are programmer errors and panic with both shapes in
//! the message; contract-level failures (non-scalar loss) return `Err`.

use crate::error::{Error, Result};
use crate::numerics::tensor::ParameterStore;

/// Handle to a node on the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Constant leaf; receives no gradient write-back.
    Input,
    /// Leaf bound to a parameter store entry.
    Param(usize),
    Matmul(Var, Var),
    Add(Var, Var),
    /// `a[r,c] + row[c]` broadcast over rows.
    AddRow { a: Var, row: Var },
    Mul(Var, Var),
    /// `mul * x + add` elementwise; only the slope matters in backward.
    Affine { x: Var, mul: f32 },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    /// `ln(max(x, floor))`; zero gradient where the clamp is active.
    LnClamped { x: Var, floor: f32 },
    /// Row lookup: `table[ids[r], :]` for each output row `r`.
    GatherRows { table: Var, ids: Vec<usize> },
    /// One entry per row: `x[r, cols[r]]`.
    Pick { x: Var, cols: Vec<usize> },
    SliceCols { x: Var, from: usize, to: usize },
    ConcatCols(Vec<Var>),
    /// Per-row inner product of two equal-shape matrices -> `[r, 1]`.
    RowDot(Var, Var),
    /// Each row of `x` scaled by the per-row scalar `s[r]`.
    ScaleRows { x: Var, s: Var },
    /// Consecutive blocks of `group` rows summed into one row each.
    SumRowGroups { x: Var, group: usize },
    /// m parts of shape [b, c] woven into [b*m, c]: output row
    /// `b*m + i` is row `b` of part `i`.
    InterleaveRows(Vec<Var>),
    /// Full reduction to a scalar.
    Sum(Var),
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f32>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    corrupt_backward: bool,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test hook: scales one matmul backward contribution so that analytic
    /// gradients no longer match finite differences. Used as a negative
    /// control for the gradient checker.
    #[doc(hidden)]
    pub fn corrupt_backward_for_tests(&mut self) {
        self.corrupt_backward = true;
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f32>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), values.len());
        self.nodes.push(Node { shape, values, op });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var, what: &str) -> (usize, usize) {
        let s = &self.nodes[v.0].shape;
        assert_eq!(s.len(), 2, "{what} expects a 2-D operand, got shape {s:?}");
        (s[0], s[1])
    }

    // ---- leaves ----

    pub fn input(&mut self, shape: &[usize], values: &[f32]) -> Var {
        assert_eq!(
            numel(shape),
            values.len(),
            "input shape {:?} implies {} elements, got {}",
            shape,
            numel(shape),
            values.len()
        );
        self.push(shape.to_vec(), values.to_vec(), Op::Input)
    }

    pub fn scalar(&mut self, value: f32) -> Var {
        self.push(vec![1], vec![value], Op::Input)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.push(shape.to_vec(), vec![0.0; numel(shape)], Op::Input)
    }

    /// Register a parameter as a leaf node, copying its current values.
    /// Gradients flow back to the store entry during [`Graph::backward`].
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Var {
        let idx = store
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        let t = store.tensor_at(idx);
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Param(idx))
    }

    // ---- arithmetic ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims2(a, "matmul");
        let (k2, n) = self.dims2(b, "matmul");
        assert_eq!(
            k, k2,
            "matmul inner dimensions disagree: left shape [{m}, {k}], right shape [{k2}, {n}]"
        );
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &ap) in arow.iter().enumerate() {
                let brow = &bv[p * n..(p + 1) * n];
                for j in 0..n {
                    orow[j] += ap * brow[j];
                }
            }
        }
        self.push(vec![m, n], out, Op::Matmul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert_eq!(sa, sb, "add expects equal shapes, got {sa:?} and {sb:?}");
        let out: Vec<f32> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        self.push(sa, out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.dims2(a, "add_row");
        let rs = self.shape(row).to_vec();
        assert_eq!(
            rs,
            vec![c],
            "add_row expects row shape [{c}] for operand shape [{r}, {c}], got {rs:?}"
        );
        let rowv = &self.nodes[row.0].values;
        let out: Vec<f32> = self.nodes[a.0]
            .values
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(rowv).map(|(x, y)| x + y))
            .collect();
        self.push(vec![r, c], out, Op::AddRow { a, row })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert_eq!(sa, sb, "mul expects equal shapes, got {sa:?} and {sb:?}");
        let out: Vec<f32> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        self.push(sa, out, Op::Mul(a, b))
    }

    /// Scalar broadcast: `mul * x + add` on every element.
    pub fn affine(&mut self, x: Var, mul: f32, add: f32) -> Var {
        let shape = self.shape(x).to_vec();
        let out: Vec<f32> = self.nodes[x.0].values.iter().map(|v| mul * v + add).collect();
        self.push(shape, out, Op::Affine { x, mul })
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        self.affine(x, factor, 0.0)
    }

    // ---- nonlinearities ----

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out: Vec<f32> = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.push(shape, out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out: Vec<f32> = self.nodes[x.0].values.iter().map(|v| v.tanh()).collect();
        self.push(shape, out, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out: Vec<f32> = self.nodes[x.0].values.iter().map(|v| v.max(0.0)).collect();
        self.push(shape, out, Op::Relu(x))
    }

    /// Row-wise softmax with max subtraction; each output row sums to 1.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims2(x, "softmax_rows");
        assert!(c > 0, "softmax_rows on zero-width shape [{r}, {c}]");
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].values[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let orow = &mut out[i * c..(i + 1) * c];
            let mut sum = 0.0f32;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            orow.iter_mut().for_each(|o| *o /= sum);
        }
        self.push(vec![r, c], out, Op::SoftmaxRows(x))
    }

    pub fn ln_clamped(&mut self, x: Var, floor: f32) -> Var {
        assert!(floor > 0.0, "ln_clamped floor must be positive, got {floor}");
        let shape = self.shape(x).to_vec();
        let out: Vec<f32> = self.nodes[x.0].values.iter().map(|&v| v.max(floor).ln()).collect();
        self.push(shape, out, Op::LnClamped { x, floor })
    }

    // ---- indexing and layout ----

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, e) = self.dims2(table, "gather_rows");
        for (r, &id) in ids.iter().enumerate() {
            assert!(id < v, "gather_rows id {id} at row {r} out of range for table shape [{v}, {e}]");
        }
        let tv = &self.nodes[table.0].values;
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            out.extend_from_slice(&tv[id * e..(id + 1) * e]);
        }
        self.push(vec![ids.len(), e], out, Op::GatherRows { table, ids: ids.to_vec() })
    }

    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Var {
        let (r, c) = self.dims2(x, "pick");
        assert_eq!(cols.len(), r, "pick expects {r} column indices for shape [{r}, {c}], got {}", cols.len());
        for (i, &col) in cols.iter().enumerate() {
            assert!(col < c, "pick column {col} at row {i} out of range for shape [{r}, {c}]");
        }
        let xv = &self.nodes[x.0].values;
        let out: Vec<f32> = cols.iter().enumerate().map(|(i, &col)| xv[i * c + col]).collect();
        self.push(vec![r, 1], out, Op::Pick { x, cols: cols.to_vec() })
    }

    pub fn slice_cols(&mut self, x: Var, from: usize, to: usize) -> Var {
        let (r, c) = self.dims2(x, "slice_cols");
        assert!(
            from < to && to <= c,
            "slice_cols range {from}..{to} invalid for shape [{r}, {c}]"
        );
        let w = to - from;
        let xv = &self.nodes[x.0].values;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + from..i * c + to]);
        }
        self.push(vec![r, w], out, Op::SliceCols { x, from, to })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols needs at least one operand");
        let r = self.dims2(parts[0], "concat_cols").0;
        let mut width = 0usize;
        for &p in parts {
            let (rp, cp) = self.dims2(p, "concat_cols");
            assert_eq!(rp, r, "concat_cols row counts disagree: {r} vs {rp}");
            width += cp;
        }
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            for &p in parts {
                let c = self.nodes[p.0].shape[1];
                out.extend_from_slice(&self.nodes[p.0].values[i * c..(i + 1) * c]);
            }
        }
        self.push(vec![r, width], out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.dims2(a, "row_dot");
        let (rb, cb) = self.dims2(b, "row_dot");
        assert_eq!(
            (r, c),
            (rb, cb),
            "row_dot expects equal shapes, got [{r}, {c}] and [{rb}, {cb}]"
        );
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let out: Vec<f32> = (0..r)
            .map(|i| {
                av[i * c..(i + 1) * c]
                    .iter()
                    .zip(&bv[i * c..(i + 1) * c])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        self.push(vec![r, 1], out, Op::RowDot(a, b))
    }

    pub fn scale_rows(&mut self, x: Var, s: Var) -> Var {
        let (r, c) = self.dims2(x, "scale_rows");
        let ss = self.shape(s).to_vec();
        assert_eq!(
            ss,
            vec![r, 1],
            "scale_rows expects scale shape [{r}, 1] for operand shape [{r}, {c}], got {ss:?}"
        );
        let sv = &self.nodes[s.0].values;
        let out: Vec<f32> = self.nodes[x.0]
            .values
            .chunks(c)
            .enumerate()
            .flat_map(|(i, chunk)| chunk.iter().map(move |v| v * sv[i]))
            .collect();
        self.push(vec![r, c], out, Op::ScaleRows { x, s })
    }

    /// Weave m equal-shape `[b, c]` parts into `[b*m, c]` so that the m
    /// step-outputs of sample `b` become consecutive rows.
    pub fn interleave_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "interleave_rows needs at least one part");
        let (b, c) = self.dims2(parts[0], "interleave_rows");
        for &p in parts {
            let (bp, cp) = self.dims2(p, "interleave_rows");
            assert_eq!(
                (bp, cp),
                (b, c),
                "interleave_rows parts disagree: [{b}, {c}] vs [{bp}, {cp}]"
            );
        }
        let m = parts.len();
        let mut out = Vec::with_capacity(b * m * c);
        for row in 0..b {
            for &p in parts {
                out.extend_from_slice(&self.nodes[p.0].values[row * c..(row + 1) * c]);
            }
        }
        self.push(vec![b * m, c], out, Op::InterleaveRows(parts.to_vec()))
    }

    /// `[g*n, c] -> [n, c]`: row `i` of the output is the sum of input
    /// rows `i*group .. (i+1)*group`.
    pub fn sum_row_groups(&mut self, x: Var, group: usize) -> Var {
        let (r, c) = self.dims2(x, "sum_row_groups");
        assert!(group > 0, "sum_row_groups needs a positive group size");
        assert_eq!(
            r % group,
            0,
            "sum_row_groups group size {group} does not divide row count {r}"
        );
        let n = r / group;
        let xv = &self.nodes[x.0].values;
        let mut out = vec![0.0f32; n * c];
        for i in 0..r {
            let orow = &mut out[(i / group) * c..(i / group + 1) * c];
            for (dst, src) in orow.iter_mut().zip(&xv[i * c..(i + 1) * c]) {
                *dst += src;
            }
        }
        self.push(vec![n, c], out, Op::SumRowGroups { x, group })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f32 = self.nodes[x.0].values.iter().sum();
        self.push(vec![1], vec![total], Op::Sum(x))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Parameter gradients are
    /// accumulated (added) into the store; call
    /// [`ParameterStore::zero_grads`] between batches. Parameters never
    /// touched by this graph end up with zero-filled gradient buffers.
    pub fn backward(&mut self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        // Unreachable parameters still get (zero) grad buffers.
        for i in 0..store.len() {
            store.tensor_at_mut(i).grad_mut();
        }

        let mut grads: Vec<Vec<f32>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0f32; n.values.len()])
            .collect();
        grads[loss.0][0] = 1.0;

        for idx in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[idx]);
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(store_idx) => {
                    let slot = store.tensor_at_mut(*store_idx).grad_mut();
                    for (dst, src) in slot.iter_mut().zip(&g) {
                        *dst += src;
                    }
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let n = self.nodes[b.0].shape[1];
                    // 1.5 is deliberately far outside gradcheck tolerance even
                    // for small-magnitude gradients.
                    let factor = if self.corrupt_backward { 1.5 } else { 1.0 };
                    {
                        // dA = G . B^T
                        let bv = &self.nodes[b.0].values;
                        let ga = &mut grads[a.0];
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0f32;
                                for j in 0..n {
                                    acc += g[i * n + j] * bv[p * n + j];
                                }
                                ga[i * k + p] += factor * acc;
                            }
                        }
                    }
                    {
                        // dB = A^T . G
                        let av = &self.nodes[a.0].values;
                        let gb = &mut grads[b.0];
                        for p in 0..k {
                            for j in 0..n {
                                let mut acc = 0.0f32;
                                for i in 0..m {
                                    acc += av[i * k + p] * g[i * n + j];
                                }
                                gb[p * n + j] += acc;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    for (dst, src) in grads[a.0].iter_mut().zip(&g) {
                        *dst += src;
                    }
                    for (dst, src) in grads[b.0].iter_mut().zip(&g) {
                        *dst += src;
                    }
                }
                Op::AddRow { a, row } => {
                    let (a, row) = (*a, *row);
                    let c = self.nodes[row.0].values.len();
                    for (dst, src) in grads[a.0].iter_mut().zip(&g) {
                        *dst += src;
                    }
                    let gr = &mut grads[row.0];
                    for chunk in g.chunks(c) {
                        for (dst, src) in gr.iter_mut().zip(chunk) {
                            *dst += src;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] * self.nodes[b.0].values[i];
                    }
                    for i in 0..g.len() {
                        grads[b.0][i] += g[i] * self.nodes[a.0].values[i];
                    }
                }
                Op::Affine { x, mul } => {
                    let (x, mul) = (*x, *mul);
                    for (dst, src) in grads[x.0].iter_mut().zip(&g) {
                        *dst += mul * src;
                    }
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    let y = &self.nodes[idx].values;
                    for i in 0..g.len() {
                        grads[x.0][i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Tanh(x) => {
                    let x = *x;
                    let y = &self.nodes[idx].values;
                    for i in 0..g.len() {
                        grads[x.0][i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Relu(x) => {
                    let x = *x;
                    // Subgradient 0 at the hinge point.
                    for i in 0..g.len() {
                        if self.nodes[x.0].values[i] > 0.0 {
                            grads[x.0][i] += g[i];
                        }
                    }
                }
                Op::SoftmaxRows(x) => {
                    let x = *x;
                    let c = self.nodes[idx].shape[1];
                    let y = &self.nodes[idx].values;
                    let gx = &mut grads[x.0];
                    for i in 0..self.nodes[idx].shape[0] {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::LnClamped { x, floor } => {
                    let (x, floor) = (*x, *floor);
                    for i in 0..g.len() {
                        let v = self.nodes[x.0].values[i];
                        if v >= floor {
                            grads[x.0][i] += g[i] / v;
                        }
                    }
                }
                Op::GatherRows { table, ids } => {
                    let table = *table;
                    let e = self.nodes[table.0].shape[1];
                    let ids = ids.clone();
                    let gt = &mut grads[table.0];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..e {
                            gt[id * e + j] += g[r * e + j];
                        }
                    }
                }
                Op::Pick { x, cols } => {
                    let x = *x;
                    let c = self.nodes[x.0].shape[1];
                    let cols = cols.clone();
                    for (i, &col) in cols.iter().enumerate() {
                        grads[x.0][i * c + col] += g[i];
                    }
                }
                Op::SliceCols { x, from, to } => {
                    let (x, from, to) = (*x, *from, *to);
                    let c = self.nodes[x.0].shape[1];
                    let w = to - from;
                    let gx = &mut grads[x.0];
                    for i in 0..self.nodes[idx].shape[0] {
                        for j in 0..w {
                            gx[i * c + from + j] += g[i * w + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let width = self.nodes[idx].shape[1];
                    let rows = self.nodes[idx].shape[0];
                    for i in 0..rows {
                        let mut offset = 0usize;
                        for &p in &parts {
                            let c = self.nodes[p.0].shape[1];
                            for j in 0..c {
                                grads[p.0][i * c + j] += g[i * width + offset + j];
                            }
                            offset += c;
                        }
                    }
                }
                Op::RowDot(a, b) => {
                    let (a, b) = (*a, *b);
                    let c = self.nodes[a.0].shape[1];
                    for i in 0..self.nodes[idx].shape[0] {
                        for j in 0..c {
                            grads[a.0][i * c + j] += g[i] * self.nodes[b.0].values[i * c + j];
                        }
                    }
                    for i in 0..self.nodes[idx].shape[0] {
                        for j in 0..c {
                            grads[b.0][i * c + j] += g[i] * self.nodes[a.0].values[i * c + j];
                        }
                    }
                }
                Op::ScaleRows { x, s } => {
                    let (x, s) = (*x, *s);
                    let c = self.nodes[x.0].shape[1];
                    for i in 0..self.nodes[idx].shape[0] {
                        let sv = self.nodes[s.0].values[i];
                        for j in 0..c {
                            grads[x.0][i * c + j] += g[i * c + j] * sv;
                        }
                    }
                    for i in 0..self.nodes[idx].shape[0] {
                        let mut acc = 0.0f32;
                        for j in 0..c {
                            acc += g[i * c + j] * self.nodes[x.0].values[i * c + j];
                        }
                        grads[s.0][i] += acc;
                    }
                }
                Op::InterleaveRows(parts) => {
                    let parts = parts.clone();
                    let c = self.nodes[idx].shape[1];
                    let m = parts.len();
                    let b = self.nodes[idx].shape[0] / m;
                    for row in 0..b {
                        for (i, &p) in parts.iter().enumerate() {
                            let src = &g[(row * m + i) * c..(row * m + i + 1) * c];
                            for (dst, s) in grads[p.0][row * c..(row + 1) * c].iter_mut().zip(src) {
                                *dst += s;
                            }
                        }
                    }
                }
                Op::SumRowGroups { x, group } => {
                    let (x, group) = (*x, *group);
                    let c = self.nodes[idx].shape[1];
                    let r = self.nodes[x.0].shape[0];
                    let gx = &mut grads[x.0];
                    for i in 0..r {
                        let grow = &g[(i / group) * c..(i / group + 1) * c];
                        for (dst, src) in gx[i * c..(i + 1) * c].iter_mut().zip(grow) {
                            *dst += src;
                        }
                    }
                }
                Op::Sum(x) => {
                    let x = *x;
                    let gv = g[0];
                    for dst in grads[x.0].iter_mut() {
                        *dst += gv;
                    }
                }
            }
        }
        Ok(())
    }
}
