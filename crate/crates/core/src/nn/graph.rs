//! Dynamic tape with reverse-mode differentiation.
//!
//! Matrices are row-major; ops that act on a trailing feature axis accept any
//! number of leading axes.

use std::collections::HashMap;

use super::params::{Grads, ParamId, ParamStore};
use crate::error::{arg, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Im2Col {
        x: Var,
        t: usize,
        c: usize,
        width: usize,
    },
    MeanPool {
        x: Var,
        t: usize,
    },
    ConcatTokens {
        mem: Var,
        x: Var,
    },
    RelAttn {
        q: Var,
        k: Var,
        v: Var,
        r: Var,
        u: Var,
        w: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    RowDot(Var, Var),
    SegmentSum {
        x: Var,
        seg: Vec<usize>,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn shape_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T> {
    Err(Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

/// `c = a·b + beta·c` on logical shapes `a: m×k`, `b: k×n`; `at`/`bt` mark
/// operands stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    at: bool,
    b: &[f64],
    bt: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the strided extents checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.store.get(id).data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return shape_err("input", shape, &[data.len()]);
        }
        Ok(self.push(shape.to_vec(), data, Op::Input))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let shape = self.store.get(id).shape.clone();
        self.nodes.push(Node {
            shape,
            value: Vec::new(),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| Error::Argument(format!("unknown parameter {name}")))?;
        Ok(self.param(id))
    }

    /// `a[.., k] · b[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return shape_err("matmul", &sa, &sb);
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(&sa) / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            false,
            self.value(b),
            false,
            &mut out,
            0.0,
        );
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(shape, out, Op::MatMul(a, b)))
    }

    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 1 || sa.last() != Some(&sb[0]) {
            return shape_err("add_bias", &sa, &sb);
        }
        let bv = self.value(b);
        let out: Vec<f64> = self
            .value(a)
            .chunks(sb[0])
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(sa, out, Op::AddBias(a, b)))
    }

    /// Dense layer `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(name, self.shape(a), self.shape(b));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "minimum", f64::min, Op::Minimum(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { x: a, lo, hi })
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let d = *self.shape(a).last().unwrap_or(&1);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(d.max(1)) {
            softmax_in_place(row);
        }
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().unwrap_or(&0);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] || d == 0 {
            return shape_err("layer_norm", &sx, self.shape(gamma));
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let xv = self.value(x);
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        Ok(self.push(
            sx,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// `[B, T, C]` to `[B·T, width·C]` windows with zero ("same") padding.
    pub fn im2col1d(&mut self, x: Var, width: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || width == 0 || width.is_multiple_of(2) {
            return shape_err("im2col1d", &sx, &[width]);
        }
        let (b, t, c) = (sx[0], sx[1], sx[2]);
        let half = width / 2;
        let xv = self.value(x);
        let mut out = vec![0.0; b * t * width * c];
        for bi in 0..b {
            for ti in 0..t {
                let row = (bi * t + ti) * width * c;
                for j in 0..width {
                    let src = ti as isize + j as isize - half as isize;
                    if src >= 0 && (src as usize) < t {
                        let s = (bi * t + src as usize) * c;
                        out[row + j * c..row + (j + 1) * c].copy_from_slice(&xv[s..s + c]);
                    }
                }
            }
        }
        Ok(self.push(vec![b * t, width * c], out, Op::Im2Col { x, t, c, width }))
    }

    /// 1D convolution over the time axis of `[B, T, C]`; `w` is `[width·C, F]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var, width: usize) -> Result<Var> {
        let (b, t) = match self.shape(x) {
            [b, t, _] => (*b, *t),
            s => return shape_err("conv1d", s, self.shape(w)),
        };
        let cols = self.im2col1d(x, width)?;
        let y = self.linear(cols, w, bias)?;
        let f = self.shape(y)[1];
        self.reshape(y, &[b, t, f])
    }

    /// Mean over the time axis of `[B, T, C]`.
    pub fn mean_pool_time(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || sx[1] == 0 {
            return shape_err("mean_pool_time", &sx, &[]);
        }
        let (b, t, c) = (sx[0], sx[1], sx[2]);
        let xv = self.value(x);
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            for ti in 0..t {
                for j in 0..c {
                    out[bi * c + j] += xv[(bi * t + ti) * c + j];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= t as f64);
        Ok(self.push(vec![b, c], out, Op::MeanPool { x, t }))
    }

    /// Appends token `x[B, D]` after `mem[B, M, D]`.
    pub fn append_token(&mut self, mem: Var, x: Var) -> Result<Var> {
        let (sm, sx) = (self.shape(mem).to_vec(), self.shape(x).to_vec());
        if sm.len() != 3 || sx.len() != 2 || sm[0] != sx[0] || sm[2] != sx[1] {
            return shape_err("append_token", &sm, &sx);
        }
        let (b, m, d) = (sm[0], sm[1], sm[2]);
        let (mv, xv) = (self.value(mem), self.value(x));
        let mut out = Vec::with_capacity(b * (m + 1) * d);
        for bi in 0..b {
            out.extend_from_slice(&mv[bi * m * d..(bi + 1) * m * d]);
            out.extend_from_slice(&xv[bi * d..(bi + 1) * d]);
        }
        Ok(self.push(vec![b, m + 1, d], out, Op::ConcatTokens { mem, x }))
    }

    /// Single-query multi-head attention with relative position terms.
    ///
    /// `q[B, D]` attends over `k, v[B, S, D]`; `r[S, D]` holds the projected
    /// relative encoding of each slot, `u, w[D]` the content and position
    /// biases. `mask[B, S]` is additive (0 or a large negative number).
    #[allow(clippy::too_many_arguments)]
    pub fn rel_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        r: Var,
        u: Var,
        w: Var,
        mask: &[f64],
        heads: usize,
    ) -> Result<Var> {
        let (sq, sk) = (self.shape(q).to_vec(), self.shape(k).to_vec());
        if sq.len() != 2
            || sk.len() != 3
            || sk[0] != sq[0]
            || sk[2] != sq[1]
            || self.shape(v) != sk.as_slice()
        {
            return shape_err("rel_attention", &sq, &sk);
        }
        let (b, s, d) = (sk[0], sk[1], sk[2]);
        if self.shape(r) != [s, d] || self.shape(u) != [d] || self.shape(w) != [d] {
            return shape_err("rel_attention", self.shape(r), &[s, d]);
        }
        if heads == 0 || d % heads != 0 || mask.len() != b * s {
            return arg(format!(
                "rel_attention: {heads} heads for width {d}, mask of {}",
                mask.len()
            ));
        }
        let hd = d / heads;
        let inv = 1.0 / (hd as f64).sqrt();
        let (qv, kv, vv, rv, uv, wv) = (
            self.value(q),
            self.value(k),
            self.value(v),
            self.value(r),
            self.value(u),
            self.value(w),
        );
        let mut probs = vec![0.0; b * heads * s];
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            for h in 0..heads {
                let o = h * hd;
                let p = &mut probs[(bi * heads + h) * s..(bi * heads + h + 1) * s];
                for si in 0..s {
                    let kr = &kv[(bi * s + si) * d + o..(bi * s + si) * d + o + hd];
                    let rr = &rv[si * d + o..si * d + o + hd];
                    let mut score = 0.0;
                    for j in 0..hd {
                        let qj = qv[bi * d + o + j];
                        score += (qj + uv[o + j]) * kr[j] + (qj + wv[o + j]) * rr[j];
                    }
                    p[si] = score * inv + mask[bi * s + si];
                }
                softmax_in_place(p);
                for si in 0..s {
                    let vr = &vv[(bi * s + si) * d + o..(bi * s + si) * d + o + hd];
                    for j in 0..hd {
                        out[bi * d + o + j] += p[si] * vr[j];
                    }
                }
            }
        }
        Ok(self.push(
            vec![b, d],
            out,
            Op::RelAttn {
                q,
                k,
                v,
                r,
                u,
                w,
                heads,
                probs,
            },
        ))
    }

    /// Rows `idx` of `table[N, D]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || idx.iter().any(|&i| i >= st[0]) {
            return arg(format!("gather_rows: index out of range for table {st:?}"));
        }
        let d = st[1];
        let tv = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            vec![idx.len(), d],
            out,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Row-wise dot products of two `[P, D]` matrices.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || self.shape(b) != sa.as_slice() {
            return shape_err("row_dot", &sa, self.shape(b));
        }
        let d = sa[1];
        let out = self
            .value(a)
            .chunks(d.max(1))
            .zip(self.value(b).chunks(d.max(1)))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .collect();
        Ok(self.push(vec![sa[0]], out, Op::RowDot(a, b)))
    }

    /// Sums `x[P]` into `n` segments.
    pub fn segment_sum(&mut self, x: Var, seg: &[usize], n: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 1 || sx[0] != seg.len() || seg.iter().any(|&s| s >= n) {
            return shape_err("segment_sum", &sx, &[seg.len(), n]);
        }
        let mut out = vec![0.0; n];
        for (&s, &v) in seg.iter().zip(self.value(x)) {
            out[s] += v;
        }
        Ok(self.push(
            vec![n],
            out,
            Op::SegmentSum {
                x,
                seg: seg.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(vec![1], vec![s], Op::Mean(x))
    }

    /// Columns `start..start + len` of `x[R, C]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || start + len > sx[1] {
            return shape_err("slice_cols", &sx, &[start, len]);
        }
        let c = sx[1];
        let out = self
            .value(x)
            .chunks(c.max(1))
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Ok(self.push(vec![sx[0], len], out, Op::SliceCols { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) {
            return shape_err("reshape", self.shape(x), shape);
        }
        let v = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), v, Op::Reshape(x)))
    }

    /// Gradients of a scalar node with respect to every parameter of the store.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if numel(self.shape(loss)) != 1 {
            return arg(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[loss.0] = vec![1.0];
        let mut out = self.store.zero_grads();
        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.backward_node(i, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn acc<'a>(&self, grads: &'a mut [Vec<f64>], v: Var) -> &'a mut [f64] {
        if grads[v.0].is_empty() {
            grads[v.0] = vec![0.0; numel(&self.nodes[v.0].shape)];
        }
        &mut grads[v.0]
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>], params: &mut Grads) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                for (a, b) in params.0[id.0].iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::MatMul(a, b) => {
                let sb = &self.nodes[b.0].shape;
                let (k, n) = (sb[0], sb[1]);
                let m = g.len() / n.max(1);
                let (av, bv) = (self.value(*a), self.value(*b));
                gemm(m, n, k, g, false, bv, true, self.acc(grads, *a), 1.0);
                gemm(k, m, n, av, true, g, false, self.acc(grads, *b), 1.0);
            }
            Op::AddBias(a, b) => {
                add_into(self.acc(grads, *a), g);
                let gb = self.acc(grads, *b);
                let n = gb.len();
                for row in g.chunks(n) {
                    add_into(gb, row);
                }
            }
            Op::Add(a, b) => {
                add_into(self.acc(grads, *a), g);
                add_into(self.acc(grads, *b), g);
            }
            Op::Sub(a, b) => {
                add_into(self.acc(grads, *a), g);
                let gb = self.acc(grads, *b);
                gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = self.acc(grads, *a);
                for j in 0..g.len() {
                    ga[j] += g[j] * bv[j];
                }
                let gb = self.acc(grads, *b);
                for j in 0..g.len() {
                    gb[j] += g[j] * av[j];
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = self.acc(grads, *a);
                for j in 0..g.len() {
                    if av[j] <= bv[j] {
                        ga[j] += g[j];
                    }
                }
                let gb = self.acc(grads, *b);
                for j in 0..g.len() {
                    if av[j] > bv[j] {
                        gb[j] += g[j];
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = self.acc(grads, *a);
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += c * d);
            }
            Op::AddScalar(a) | Op::Reshape(a) => add_into(self.acc(grads, *a), g),
            Op::Relu(a) => {
                let ga = self.acc(grads, *a);
                for j in 0..g.len() {
                    if y[j] > 0.0 {
                        ga[j] += g[j];
                    }
                }
            }
            Op::Sigmoid(a) => {
                let ga = self.acc(grads, *a);
                for j in 0..g.len() {
                    ga[j] += g[j] * y[j] * (1.0 - y[j]);
                }
            }
            Op::Tanh(a) => {
                let ga = self.acc(grads, *a);
                for j in 0..g.len() {
                    ga[j] += g[j] * (1.0 - y[j] * y[j]);
                }
            }
            Op::Exp(a) => {
                let ga = self.acc(grads, *a);
                for j in 0..g.len() {
                    ga[j] += g[j] * y[j];
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let ga = self.acc(grads, *x);
                for j in 0..g.len() {
                    if xv[j] > *lo && xv[j] < *hi {
                        ga[j] += g[j];
                    }
                }
            }
            Op::Softmax(a) => {
                let d = *node.shape.last().unwrap();
                let ga = self.acc(grads, *a);
                for ((gr, yr), out) in g.chunks(d).zip(y.chunks(d)).zip(ga.chunks_mut(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                    for j in 0..d {
                        out[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = *node.shape.last().unwrap();
                let gv = self.value(*gamma);
                let gg = self.acc(grads, *gamma);
                for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gg[j] += gr[j] * hr[j];
                    }
                }
                let gbeta = self.acc(grads, *beta);
                for gr in g.chunks(d) {
                    add_into(gbeta, gr);
                }
                let gx = self.acc(grads, *x);
                let mut dh = vec![0.0; d];
                for (r, (gr, hr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    for j in 0..d {
                        dh[j] = gr[j] * gv[j];
                    }
                    let m1 = dh.iter().sum::<f64>() / d as f64;
                    let m2 = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] += rstd[r] * (dh[j] - m1 - hr[j] * m2);
                    }
                }
            }
            Op::Im2Col { x, t, c, width } => {
                let (t, c, width) = (*t, *c, *width);
                let half = width / 2;
                let b = g.len() / (t * width * c).max(1);
                let gx = self.acc(grads, *x);
                for bi in 0..b {
                    for ti in 0..t {
                        let row = (bi * t + ti) * width * c;
                        for j in 0..width {
                            let src = ti as isize + j as isize - half as isize;
                            if src >= 0 && (src as usize) < t {
                                let s = (bi * t + src as usize) * c;
                                add_into(&mut gx[s..s + c], &g[row + j * c..row + (j + 1) * c]);
                            }
                        }
                    }
                }
            }
            Op::MeanPool { x, t } => {
                let t = *t;
                let (b, c) = (node.shape[0], node.shape[1]);
                let gx = self.acc(grads, *x);
                for bi in 0..b {
                    for ti in 0..t {
                        for j in 0..c {
                            gx[(bi * t + ti) * c + j] += g[bi * c + j] / t as f64;
                        }
                    }
                }
            }
            Op::ConcatTokens { mem, x } => {
                let (b, s, d) = (node.shape[0], node.shape[1], node.shape[2]);
                let m = s - 1;
                let gm = self.acc(grads, *mem);
                for bi in 0..b {
                    add_into(
                        &mut gm[bi * m * d..(bi + 1) * m * d],
                        &g[bi * s * d..bi * s * d + m * d],
                    );
                }
                let gx = self.acc(grads, *x);
                for bi in 0..b {
                    add_into(
                        &mut gx[bi * d..(bi + 1) * d],
                        &g[(bi * s + m) * d..(bi + 1) * s * d],
                    );
                }
            }
            Op::RelAttn {
                q,
                k,
                v,
                r,
                u,
                w,
                heads,
                probs,
            } => self.attn_backward(g, grads, [*q, *k, *v, *r, *u, *w], *heads, probs),
            Op::Gather { table, idx } => {
                let d = node.shape[1];
                let gt = self.acc(grads, *table);
                for (p, &row) in idx.iter().enumerate() {
                    add_into(&mut gt[row * d..(row + 1) * d], &g[p * d..(p + 1) * d]);
                }
            }
            Op::RowDot(a, b) => {
                let d = self.nodes[a.0].shape[1];
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = self.acc(grads, *a);
                for p in 0..g.len() {
                    for j in 0..d {
                        ga[p * d + j] += g[p] * bv[p * d + j];
                    }
                }
                let gb = self.acc(grads, *b);
                for p in 0..g.len() {
                    for j in 0..d {
                        gb[p * d + j] += g[p] * av[p * d + j];
                    }
                }
            }
            Op::SegmentSum { x, seg } => {
                let gx = self.acc(grads, *x);
                for (p, &s) in seg.iter().enumerate() {
                    gx[p] += g[s];
                }
            }
            Op::Sum(x) => {
                let gx = self.acc(grads, *x);
                gx.iter_mut().for_each(|v| *v += g[0]);
            }
            Op::Mean(x) => {
                let gx = self.acc(grads, *x);
                let n = gx.len() as f64;
                gx.iter_mut().for_each(|v| *v += g[0] / n);
            }
            Op::SliceCols { x, start } => {
                let c = self.nodes[x.0].shape[1];
                let len = node.shape[1];
                let gx = self.acc(grads, *x);
                for (ri, gr) in g.chunks(len.max(1)).enumerate() {
                    add_into(&mut gx[ri * c + start..ri * c + start + len], gr);
                }
            }
        }
    }

    fn attn_backward(
        &self,
        g: &[f64],
        grads: &mut [Vec<f64>],
        vars: [Var; 6],
        heads: usize,
        probs: &[f64],
    ) {
        let [q, k, v, r, u, w] = vars;
        let sk = &self.nodes[k.0].shape;
        let (b, s, d) = (sk[0], sk[1], sk[2]);
        let hd = d / heads;
        let inv = 1.0 / (hd as f64).sqrt();
        let (qv, kv, vv, rv, uv, wv) = (
            self.value(q),
            self.value(k),
            self.value(v),
            self.value(r),
            self.value(u),
            self.value(w),
        );
        let mut gq = vec![0.0; b * d];
        let mut gk = vec![0.0; b * s * d];
        let mut gv = vec![0.0; b * s * d];
        let mut gr = vec![0.0; s * d];
        let mut gu = vec![0.0; d];
        let mut gw = vec![0.0; d];
        let mut dscore = vec![0.0; s];
        for bi in 0..b {
            for h in 0..heads {
                let o = h * hd;
                let p = &probs[(bi * heads + h) * s..(bi * heads + h + 1) * s];
                let go = &g[bi * d + o..bi * d + o + hd];
                let mut dot = 0.0;
                for si in 0..s {
                    let base = (bi * s + si) * d + o;
                    let dp: f64 = (0..hd).map(|j| go[j] * vv[base + j]).sum();
                    for j in 0..hd {
                        gv[base + j] += p[si] * go[j];
                    }
                    dscore[si] = dp;
                    dot += p[si] * dp;
                }
                for si in 0..s {
                    let ds = p[si] * (dscore[si] - dot) * inv;
                    let base = (bi * s + si) * d + o;
                    for j in 0..hd {
                        let qj = qv[bi * d + o + j];
                        let (kj, rj) = (kv[base + j], rv[si * d + o + j]);
                        gq[bi * d + o + j] += ds * (kj + rj);
                        gu[o + j] += ds * kj;
                        gw[o + j] += ds * rj;
                        gk[base + j] += ds * (qj + uv[o + j]);
                        gr[si * d + o + j] += ds * (qj + wv[o + j]);
                    }
                }
            }
        }
        for (var, gg) in [(q, gq), (k, gk), (v, gv), (r, gr), (u, gu), (w, gw)] {
            add_into(self.acc(grads, var), &gg);
        }
    }
}

const LN_EPS: f64 = 1e-5;

fn add_into(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}
