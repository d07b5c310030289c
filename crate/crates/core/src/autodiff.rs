//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node to a [`Tape`] and returns a [`Var`] handle.
//! [`Tape::backward`] walks the nodes in reverse execution order, visiting each
//! op once, and returns the accumulated adjoints as [`Gradients`].
//!
//! ```
//! use mtl_wavenet::autodiff::Tape;
//! use mtl_wavenet::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(&Tensor::scalar(3.0));
//! let zero = tape.constant(Tensor::scalar(0.0));
//! let loss = tape.mse(w, zero, None).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[6.0]);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        cin: usize,
        cout: usize,
        k: usize,
        dilation: usize,
        t: usize,
    },
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    SoftmaxCe {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: usize,
        target: usize,
        mask: Option<Vec<bool>>,
        count: usize,
    },
    FoPool {
        hhat: usize,
        o: usize,
        f: usize,
        h0: Option<usize>,
        states: Vec<f64>,
    },
    ConcatRows(Vec<usize>),
    SliceRows {
        a: usize,
        start: usize,
    },
    SliceCols {
        a: usize,
        start: usize,
    },
    ReverseTime(usize),
    Repeat {
        a: usize,
        factor: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed ops. Confined to one thread; independent tapes
/// may live on different threads.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf whose gradient is wanted.
    pub fn param(&mut self, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Leaf, true)
    }

    /// Records a leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.node(v)?.value)
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.node(v)?.requires_grad)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "variable {} does not belong to tape {}",
                v.index, self.id
            )));
        }
        Ok(v.index)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        let i = self.check(v)?;
        Ok(&self.nodes[i])
    }

    fn rg(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Dilated causal convolution of `x: [C_in × T]` with `w: [C_out × C_in × K]`.
    /// The input is left-padded with `(K−1)·dilation` zeros so the output keeps
    /// length `T`.
    pub fn conv1d_causal(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let wi = self.check(w)?;
        let bi = b.map(|b| self.check(b)).transpose()?;
        if dilation == 0 {
            return Err(Error::Argument("dilation must be at least 1".into()));
        }
        let (cin, t) = self.nodes[xi].value.dims2()?;
        let (cout, wcin, k) = match self.nodes[wi].value.shape() {
            [o, i, k] => (*o, *i, *k),
            s => {
                return Err(Error::Dimension(format!(
                    "conv weights must be [C_out × C_in × K], got {s:?}"
                )))
            }
        };
        if k == 0 {
            return Err(Error::Argument("filter width must be at least 1".into()));
        }
        self.conv_common(xi, wi, bi, cin, t, cout, wcin, k, dilation)
    }

    /// Per-timestep affine map with `w: [C_out × C_in]`. Runs the same kernel as
    /// [`Tape::conv1d_causal`] at `K = 1`.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xi = self.check(x)?;
        let wi = self.check(w)?;
        let bi = b.map(|b| self.check(b)).transpose()?;
        let (cin, t) = self.nodes[xi].value.dims2()?;
        let (cout, wcin) = self.nodes[wi].value.dims2()?;
        self.conv_common(xi, wi, bi, cin, t, cout, wcin, 1, 1)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_common(
        &mut self,
        xi: usize,
        wi: usize,
        bi: Option<usize>,
        cin: usize,
        t: usize,
        cout: usize,
        wcin: usize,
        k: usize,
        dilation: usize,
    ) -> Result<Var> {
        if wcin != cin {
            return Err(Error::Dimension(format!(
                "input has {cin} channels but weights expect {wcin}"
            )));
        }
        if let Some(bi) = bi {
            if self.nodes[bi].value.numel() != cout {
                return Err(Error::Dimension(format!(
                    "bias has {} entries, expected {cout}",
                    self.nodes[bi].value.numel()
                )));
            }
        }
        let mut out = vec![0.0; cout * t];
        kernels::conv_forward(
            self.nodes[xi].value.data(),
            cin,
            t,
            self.nodes[wi].value.data(),
            cout,
            k,
            dilation,
            bi.map(|b| self.nodes[b].value.data()),
            &mut out,
        );
        let mut deps = vec![xi, wi];
        deps.extend(bi);
        let rg = self.rg(&deps);
        let value = Tensor::new(vec![cout, t], out)?;
        Ok(self.push(
            value,
            Op::Conv {
                x: xi,
                w: wi,
                b: bi,
                cin,
                cout,
                k,
                dilation,
                t,
            },
            rg,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Result<Var> {
        let ai = self.check(a)?;
        let value = self.nodes[ai].value.map(f);
        let rg = self.rg(&[ai]);
        Ok(self.push(value, op(ai), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, kernels::sigmoid, Op::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary(a, |x| x * factor, |i| Op::Scale(i, factor))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let ai = self.check(a)?;
        let bi = self.check(b)?;
        let (va, vb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if va.shape() != vb.shape() {
            return Err(Error::Dimension(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[ai, bi]);
        Ok(self.push(value, op(ai, bi), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let s = self.nodes[ai].value.data().iter().sum();
        let rg = self.rg(&[ai]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ai), rg))
    }

    /// Mean over columns of `−log softmax(logits[:, t])[target_t]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let li = self.check(logits)?;
        let (classes, t) = self.nodes[li].value.dims2()?;
        if targets.len() != t {
            return Err(Error::Dimension(format!(
                "{} targets for {t} logit columns",
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().find(|&&b| b >= classes) {
            return Err(Error::Index(format!("target bin {bad} outside [0, {})", classes)));
        }
        let data = self.nodes[li].value.data();
        let mut probs = vec![0.0; classes * t];
        let mut total = 0.0;
        for (col, &target) in targets.iter().enumerate() {
            let column = (0..classes).map(|r| data[r * t + col]);
            let lse = kernels::log_sum_exp(column);
            for r in 0..classes {
                probs[r * t + col] = (data[r * t + col] - lse).exp();
            }
            total += lse - data[target * t + col];
        }
        let loss = if t == 0 { 0.0 } else { total / t as f64 };
        let rg = self.rg(&[li]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits: li,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean squared error over the entries selected by `mask` (all entries
    /// when absent). An empty selection yields 0.
    pub fn mse(&mut self, pred: Var, target: Var, mask: Option<&[bool]>) -> Result<Var> {
        let pi = self.check(pred)?;
        let ti = self.check(target)?;
        let (p, t) = (&self.nodes[pi].value, &self.nodes[ti].value);
        if p.shape() != t.shape() {
            return Err(Error::Dimension(format!(
                "mse shapes differ: {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        if let Some(m) = mask {
            if m.len() != p.numel() {
                return Err(Error::Dimension(format!(
                    "mask has {} entries, tensors have {}",
                    m.len(),
                    p.numel()
                )));
            }
        }
        let mut sum = 0.0;
        let mut count = 0;
        for (i, (a, b)) in p.data().iter().zip(t.data()).enumerate() {
            if mask.is_none_or(|m| m[i]) {
                sum += (a - b) * (a - b);
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { sum / count as f64 };
        let rg = self.rg(&[pi, ti]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred: pi,
                target: ti,
                mask: mask.map(<[bool]>::to_vec),
                count,
            },
            rg,
        ))
    }

    /// fo-pooling: `h_t = f_t·h_{t−1} + (1−f_t)·ĥ_t`, `z_t = o_t·h_t`, with
    /// `h_{−1} = h0` (zeros when absent). Inputs are `[C × T]`, `h0` has `C`
    /// entries.
    pub fn fo_pool(&mut self, hhat: Var, o: Var, f: Var, h0: Option<Var>) -> Result<Var> {
        let hi = self.check(hhat)?;
        let oi = self.check(o)?;
        let fi = self.check(f)?;
        let h0i = h0.map(|v| self.check(v)).transpose()?;
        let (c, t) = self.nodes[hi].value.dims2()?;
        for &i in &[oi, fi] {
            if self.nodes[i].value.shape() != [c, t] {
                return Err(Error::Dimension(format!(
                    "fo_pool gate shape {:?} differs from {:?}",
                    self.nodes[i].value.shape(),
                    [c, t]
                )));
            }
        }
        if let Some(h0i) = h0i {
            if self.nodes[h0i].value.numel() != c {
                return Err(Error::Dimension(format!(
                    "initial state has {} entries, expected {c}",
                    self.nodes[h0i].value.numel()
                )));
            }
        }
        let hv = self.nodes[hi].value.data();
        let ov = self.nodes[oi].value.data();
        let fv = self.nodes[fi].value.data();
        let mut states = vec![0.0; c * t];
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            let mut h = h0i.map_or(0.0, |i| self.nodes[i].value.data()[ch]);
            for step in 0..t {
                let j = ch * t + step;
                h = fv[j] * h + (1.0 - fv[j]) * hv[j];
                states[j] = h;
                out[j] = ov[j] * h;
            }
        }
        let mut deps = vec![hi, oi, fi];
        deps.extend(h0i);
        let rg = self.rg(&deps);
        Ok(self.push(
            Tensor::new(vec![c, t], out)?,
            Op::FoPool {
                hhat: hi,
                o: oi,
                f: fi,
                h0: h0i,
                states,
            },
            rg,
        ))
    }

    /// Stacks rank-2 values along the channel axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let value = Tensor::concat_rows(&refs)?;
        let rg = self.rg(&idx);
        Ok(self.push(value, Op::ConcatRows(idx), rg))
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ai = self.check(a)?;
        let (r, c) = self.nodes[ai].value.dims2()?;
        if start > end || end > r {
            return Err(Error::Index(format!("row range {start}..{end} outside 0..{r}")));
        }
        let data = self.nodes[ai].value.data()[start * c..end * c].to_vec();
        let rg = self.rg(&[ai]);
        Ok(self.push(
            Tensor::new(vec![end - start, c], data)?,
            Op::SliceRows { a: ai, start },
            rg,
        ))
    }

    /// Columns (timesteps) `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ai = self.check(a)?;
        let value = self.nodes[ai].value.slice_cols(start, end)?;
        let rg = self.rg(&[ai]);
        Ok(self.push(value, Op::SliceCols { a: ai, start }, rg))
    }

    pub fn reverse_time(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let (r, c) = self.nodes[ai].value.dims2()?;
        let src = self.nodes[ai].value.data();
        let mut data = Vec::with_capacity(r * c);
        for row in 0..r {
            data.extend(src[row * c..(row + 1) * c].iter().rev());
        }
        let rg = self.rg(&[ai]);
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::ReverseTime(ai), rg))
    }

    /// Repeats each column `factor` times contiguously.
    pub fn upsample_repeat(&mut self, a: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Argument("upsampling factor must be at least 1".into()));
        }
        let ai = self.check(a)?;
        let (r, c) = self.nodes[ai].value.dims2()?;
        let src = self.nodes[ai].value.data();
        let mut data = Vec::with_capacity(r * c * factor);
        for row in 0..r {
            for &v in &src[row * c..(row + 1) * c] {
                data.extend(std::iter::repeat_n(v, factor));
            }
        }
        let rg = self.rg(&[ai]);
        Ok(self.push(
            Tensor::new(vec![r, c * factor], data)?,
            Op::Repeat { a: ai, factor },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.check(loss)?;
        if self.nodes[li].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[li] = Some(vec![1.0]);
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            requires: self.nodes.iter().map(|n| n.requires_grad).collect(),
            grads,
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Inputs always precede `i`; their slots are taken out, updated and put
        // back so repeated inputs (`x * x`) accumulate correctly.
        let take = |j: usize, grads: &mut [Option<Vec<f64>>]| -> Option<Vec<f64>> {
            if !nodes[j].requires_grad {
                return None;
            }
            Some(grads[j].take().unwrap_or_else(|| vec![0.0; nodes[j].value.numel()]))
        };
        let accumulate = |grads: &mut [Option<Vec<f64>>], j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if let Some(mut buf) = take(j, grads) {
                f(&mut buf);
                grads[j] = Some(buf);
            }
        };
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::Conv {
                x,
                w,
                b,
                cin,
                cout,
                k,
                dilation,
                t,
            } => {
                let mut dx = take(x, grads);
                let mut dw = take(w, grads);
                let mut db = b.and_then(|b| take(b, grads));
                kernels::conv_backward(
                    nodes[x].value.data(),
                    cin,
                    t,
                    nodes[w].value.data(),
                    cout,
                    k,
                    dilation,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                grads[x] = dx.or(grads[x].take());
                grads[w] = dw.or(grads[w].take());
                if let Some(b) = b {
                    grads[b] = db.or(grads[b].take());
                }
            }
            &Op::Tanh(a) => {
                accumulate(grads, a, &mut |da: &mut [f64]| {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(out.data()) {
                        *d += gv * (1.0 - y * y);
                    }
                });
            }
            &Op::Sigmoid(a) => {
                accumulate(grads, a, &mut |da: &mut [f64]| {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(out.data()) {
                        *d += gv * y * (1.0 - y);
                    }
                });
            }
            &Op::Relu(a) => {
                accumulate(grads, a, &mut |da: &mut [f64]| {
                    for ((d, &gv), &x) in da.iter_mut().zip(g).zip(nodes[a].value.data()) {
                        if x > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            &Op::Scale(a, factor) => {
                accumulate(grads, a, &mut |da: &mut [f64]| {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv * factor;
                    }
                });
            }
            &Op::Add(a, b) => {
                for j in [a, b] {
                    accumulate(grads, j, &mut |d: &mut [f64]| {
                        for (dv, &gv) in d.iter_mut().zip(g) {
                            *dv += gv;
                        }
                    });
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (nodes[a].value.data(), nodes[b].value.data());
                accumulate(grads, a, &mut |da: &mut [f64]| {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(vb) {
                        *d += gv * y;
                    }
                });
                accumulate(grads, b, &mut |db: &mut [f64]| {
                    for ((d, &gv), &x) in db.iter_mut().zip(g).zip(va) {
                        *d += gv * x;
                    }
                });
            }
            &Op::Sum(a) => {
                accumulate(grads, a, &mut |da: &mut [f64]| {
                    da.iter_mut().for_each(|d| *d += g[0]);
                });
            }
            Op::SoftmaxCe { logits, targets, probs } => {
                accumulate(grads, *logits, &mut |dl: &mut [f64]| {
                    let t = targets.len();
                    let scale = g[0] / t as f64;
                    for (d, p) in dl.iter_mut().zip(probs) {
                        *d += scale * p;
                    }
                    for (col, &target) in targets.iter().enumerate() {
                        dl[target * t + col] -= scale;
                    }
                });
            }
            Op::Mse {
                pred,
                target,
                mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let (p, t) = (nodes[*pred].value.data(), nodes[*target].value.data());
                let scale = 2.0 * g[0] / *count as f64;
                let keep = |idx: usize| mask.as_ref().is_none_or(|m| m[idx]);
                accumulate(grads, *pred, &mut |dp: &mut [f64]| {
                    for (idx, d) in dp.iter_mut().enumerate() {
                        if keep(idx) {
                            *d += scale * (p[idx] - t[idx]);
                        }
                    }
                });
                if target != pred {
                    accumulate(grads, *target, &mut |dt: &mut [f64]| {
                        for (idx, d) in dt.iter_mut().enumerate() {
                            if keep(idx) {
                                *d -= scale * (p[idx] - t[idx]);
                            }
                        }
                    });
                }
            }
            Op::FoPool { hhat, o, f, h0, states } => {
                let (hhat, o, f, h0) = (*hhat, *o, *f, *h0);
                let (c, t) = (out.rows(), out.cols());
                let hv = nodes[hhat].value.data();
                let ov = nodes[o].value.data();
                let fv = nodes[f].value.data();
                let mut dh_all = vec![0.0; c * t];
                let mut dh0 = vec![0.0; c];
                for ch in 0..c {
                    let mut carry = 0.0;
                    for step in (0..t).rev() {
                        let j = ch * t + step;
                        let dh = g[j] * ov[j] + carry;
                        dh_all[j] = dh;
                        carry = dh * fv[j];
                    }
                    dh0[ch] = carry;
                }
                accumulate(grads, o, &mut |dho: &mut [f64]| {
                    for j in 0..c * t {
                        dho[j] += g[j] * states[j];
                    }
                });
                accumulate(grads, hhat, &mut |dhh: &mut [f64]| {
                    for j in 0..c * t {
                        dhh[j] += dh_all[j] * (1.0 - fv[j]);
                    }
                });
                accumulate(grads, f, &mut |dfv: &mut [f64]| {
                    for ch in 0..c {
                        for step in 0..t {
                            let j = ch * t + step;
                            let prev = if step == 0 {
                                h0.map_or(0.0, |i| nodes[i].value.data()[ch])
                            } else {
                                states[j - 1]
                            };
                            dfv[j] += dh_all[j] * (prev - hv[j]);
                        }
                    }
                });
                if let Some(h0) = h0 {
                    accumulate(grads, h0, &mut |d: &mut [f64]| {
                        for (dv, v) in d.iter_mut().zip(&dh0) {
                            *dv += v;
                        }
                    });
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p].value.numel();
                    accumulate(grads, p, &mut |d: &mut [f64]| {
                        for (dv, &gv) in d.iter_mut().zip(&g[offset..offset + n]) {
                            *dv += gv;
                        }
                    });
                    offset += n;
                }
            }
            &Op::SliceRows { a, start } => {
                accumulate(grads, a, &mut |d: &mut [f64]| {
                    let c = out.cols();
                    for (dv, &gv) in d[start * c..start * c + g.len()].iter_mut().zip(g) {
                        *dv += gv;
                    }
                });
            }
            &Op::SliceCols { a, start } => {
                accumulate(grads, a, &mut |d: &mut [f64]| {
                    let src_cols = nodes[a].value.cols();
                    let w = out.cols();
                    for row in 0..out.rows() {
                        for col in 0..w {
                            d[row * src_cols + start + col] += g[row * w + col];
                        }
                    }
                });
            }
            &Op::ReverseTime(a) => {
                accumulate(grads, a, &mut |d: &mut [f64]| {
                    let c = out.cols();
                    for row in 0..out.rows() {
                        for col in 0..c {
                            d[row * c + col] += g[row * c + (c - 1 - col)];
                        }
                    }
                });
            }
            &Op::Repeat { a, factor } => {
                accumulate(grads, a, &mut |d: &mut [f64]| {
                    for (dv, chunk) in d.iter_mut().zip(g.chunks(factor)) {
                        *dv += chunk.iter().sum::<f64>();
                    }
                });
            }
        }
    }
}

/// Adjoints from one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when the loss does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.index >= self.grads.len() {
            return Err(Error::Usage(format!(
                "variable {} is not on the differentiated tape",
                v.index
            )));
        }
        if !self.requires[v.index] {
            return Err(Error::Usage(format!("variable {} was recorded as a constant", v.index)));
        }
        let shape = self.shapes[v.index].clone();
        match &self.grads[v.index] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Ok(Tensor::zeros(&shape)),
        }
    }

    /// True when the backward sweep reached `v`.
    pub fn reached(&self, v: Var) -> bool {
        v.tape == self.tape && self.grads.get(v.index).is_some_and(Option::is_some)
    }
}
