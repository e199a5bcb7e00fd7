//! Built-in operations: forward constructors on [`Var`] and their
//! vector-Jacobian products.

use crate::error::{AdError, Result};
use crate::linalg::{col2im3x3, gemm, im2col3x3};
use crate::tape::{CustomOp, Var};
use crate::tensor::{broadcast_index, broadcast_shapes, reduce_to_shape, Tensor};

pub(crate) enum Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Relu,
    Sigmoid,
    Abs,
    Powf(f64),
    Clamp { lo: f64, hi: f64 },
    Scale(f64),
    Offset,
    MatMul,
    BatchMatMul,
    TransposeLast2,
    Reshape,
    Broadcast,
    Sum,
    Mean,
    SumLast,
    ConcatLast { widths: Vec<usize> },
    SelectLast { indices: Vec<usize> },
    GatherRows { indices: Vec<usize> },
    ScatterRows { indices: Vec<usize> },
    NormLast,
    Conv3x3 { h: usize, w: usize, cin: usize, cout: usize },
    MaxPool { winners: Vec<u32>, inputs: usize },
    Filter2d(Box<FilterPlan>),
    Range { offset: usize },
    Custom(Box<dyn CustomOp>),
}

const NO_WINNER: u32 = u32::MAX;

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Abs => "abs",
            Op::Powf(_) => "pow",
            Op::Clamp { .. } => "clamp",
            Op::Scale(_) => "scale",
            Op::Offset => "offset",
            Op::MatMul => "matmul",
            Op::BatchMatMul => "batch_matmul",
            Op::TransposeLast2 => "transpose",
            Op::Reshape => "reshape",
            Op::Broadcast => "broadcast",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumLast => "sum_last",
            Op::ConcatLast { .. } => "concat",
            Op::SelectLast { .. } => "select",
            Op::GatherRows { .. } => "gather_rows",
            Op::ScatterRows { .. } => "scatter_rows",
            Op::NormLast => "norm",
            Op::Conv3x3 { .. } => "conv3x3",
            Op::MaxPool { .. } => "max_pool",
            Op::Filter2d(_) => "filter2d",
            Op::Range { .. } => "range",
            Op::Custom(op) => op.name(),
        }
    }

    pub(crate) fn backward(
        &self,
        inputs: &[&Tensor],
        out: &Tensor,
        g: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let shape_of = |i: usize| inputs[i].shape().to_vec();
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Add => vec![
                needs[0].then(|| reduce_to_shape(g, inputs[0].shape())),
                needs[1].then(|| reduce_to_shape(g, inputs[1].shape())),
            ],
            Op::Sub => vec![
                needs[0].then(|| reduce_to_shape(g, inputs[0].shape())),
                needs[1].then(|| reduce_to_shape(&g.map(|v| -v), inputs[1].shape())),
            ],
            Op::Mul | Op::Div => {
                let (a, b) = (inputs[0], inputs[1]);
                let ia = broadcast_index(a.shape(), g.shape());
                let ib = broadcast_index(b.shape(), g.shape());
                let div = matches!(self, Op::Div);
                let ga = needs[0].then(|| {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(o, gv)| {
                            let bv = b.data()[ib[o]];
                            if div {
                                gv / bv
                            } else {
                                gv * bv
                            }
                        })
                        .collect();
                    reduce_to_shape(&Tensor::from_parts(g.shape().to_vec(), data), a.shape())
                });
                let gb = needs[1].then(|| {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(o, gv)| {
                            let av = a.data()[ia[o]];
                            if div {
                                let bv = b.data()[ib[o]];
                                -gv * av / (bv * bv)
                            } else {
                                gv * av
                            }
                        })
                        .collect();
                    reduce_to_shape(&Tensor::from_parts(g.shape().to_vec(), data), b.shape())
                });
                vec![ga, gb]
            }
            Op::Neg => vec![Some(g.map(|v| -v))],
            Op::Exp => vec![Some(zip(g, out, |gv, o| gv * o))],
            Op::Log => vec![Some(zip(g, inputs[0], |gv, x| gv / x))],
            Op::Sqrt => vec![Some(zip(g, out, |gv, o| if o > 0.0 { gv * 0.5 / o } else { 0.0 }))],
            Op::Relu => vec![Some(zip(g, inputs[0], |gv, x| if x > 0.0 { gv } else { 0.0 }))],
            Op::Sigmoid => vec![Some(zip(g, out, |gv, o| gv * o * (1.0 - o)))],
            Op::Abs => vec![Some(zip(g, inputs[0], |gv, x| {
                if x > 0.0 {
                    gv
                } else if x < 0.0 {
                    -gv
                } else {
                    0.0
                }
            }))],
            Op::Powf(p) => {
                let p = *p;
                vec![Some(zip(g, inputs[0], |gv, x| gv * p * x.powf(p - 1.0)))]
            }
            Op::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                vec![Some(zip(g, inputs[0], |gv, x| if x > lo && x < hi { gv } else { 0.0 }))]
            }
            Op::Scale(c) => {
                let c = *c;
                vec![Some(g.map(|v| v * c))]
            }
            Op::Offset => vec![Some(g.clone())],
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let ga = needs[0].then(|| {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, b.data(), true, &mut d, 0.0);
                    Tensor::from_parts(shape_of(0), d)
                });
                let gb = needs[1].then(|| {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, g.data(), false, &mut d, 0.0);
                    Tensor::from_parts(shape_of(1), d)
                });
                vec![ga, gb]
            }
            Op::BatchMatMul => batch_matmul_backward(inputs[0], inputs[1], g, needs),
            Op::TransposeLast2 => vec![Some(transpose_last2(g))],
            Op::Reshape => vec![Some(Tensor::from_parts(shape_of(0), g.data().to_vec()))],
            Op::Broadcast => vec![Some(reduce_to_shape(g, inputs[0].shape()))],
            Op::Sum => vec![Some(Tensor::full(shape_of(0), g.item()))],
            Op::Mean => {
                let n = inputs[0].len().max(1) as f64;
                vec![Some(Tensor::full(shape_of(0), g.item() / n))]
            }
            Op::SumLast => {
                let c = inputs[0].last_dim();
                let data = (0..inputs[0].len()).map(|i| g.data()[i / c]).collect();
                vec![Some(Tensor::from_parts(shape_of(0), data))]
            }
            Op::ConcatLast { widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                widths
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let part = needs[i].then(|| {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                            }
                            Tensor::from_parts(shape_of(i), d)
                        });
                        offset += w;
                        part
                    })
                    .collect()
            }
            Op::SelectLast { indices } => {
                let c = inputs[0].last_dim();
                let k = indices.len();
                let mut d = vec![0.0; inputs[0].len()];
                for (o, gv) in g.data().iter().enumerate() {
                    let (r, j) = (o / k, o % k);
                    d[r * c + indices[j]] += gv;
                }
                vec![Some(Tensor::from_parts(shape_of(0), d))]
            }
            Op::GatherRows { indices } => {
                let row = inputs[0].len() / inputs[0].shape()[0].max(1);
                let mut d = vec![0.0; inputs[0].len()];
                for (r, &src) in indices.iter().enumerate() {
                    for c in 0..row {
                        d[src * row + c] += g.data()[r * row + c];
                    }
                }
                vec![Some(Tensor::from_parts(shape_of(0), d))]
            }
            Op::ScatterRows { indices } => {
                let row = if indices.is_empty() { 0 } else { inputs[0].len() / indices.len() };
                let mut d = vec![0.0; inputs[0].len()];
                for (r, &dst) in indices.iter().enumerate() {
                    d[r * row..(r + 1) * row].copy_from_slice(&g.data()[dst * row..(dst + 1) * row]);
                }
                vec![Some(Tensor::from_parts(shape_of(0), d))]
            }
            Op::NormLast => {
                let c = inputs[0].last_dim();
                let data = inputs[0]
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let n = out.data()[i / c];
                        if n > 0.0 {
                            g.data()[i / c] * x / n
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![Some(Tensor::from_parts(shape_of(0), data))]
            }
            Op::Conv3x3 { h, w, cin, cout } => conv_backward(inputs, g, needs, *h, *w, *cin, *cout),
            Op::MaxPool { winners, inputs: n } => {
                let mut grads: Vec<Option<Tensor>> =
                    (0..*n).map(|i| needs[i].then(|| Tensor::zeros(shape_of(i)))).collect();
                for (o, &win) in winners.iter().enumerate() {
                    if win == NO_WINNER {
                        continue;
                    }
                    if let Some(t) = grads[win as usize].as_mut() {
                        t.data_mut()[o] += g.data()[o];
                    }
                }
                grads
            }
            Op::Filter2d(plan) => vec![Some(Tensor::from_parts(shape_of(0), plan.adjoint(g.data())))],
            Op::Range { offset } => {
                let mut d = vec![0.0; inputs[0].len()];
                d[*offset..*offset + g.len()].copy_from_slice(g.data());
                vec![Some(Tensor::from_parts(shape_of(0), d))]
            }
            Op::Custom(op) => op.backward(inputs, out, g, needs),
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn transpose_last2(t: &Tensor) -> Tensor {
    let s = t.shape();
    let nd = s.len();
    let (r, c) = (s[nd - 2], s[nd - 1]);
    let batch = t.len() / (r * c).max(1);
    let mut d = vec![0.0; t.len()];
    for b in 0..batch {
        let base = b * r * c;
        for i in 0..r {
            for j in 0..c {
                d[base + j * r + i] = t.data()[base + i * c + j];
            }
        }
    }
    let mut shape = s.to_vec();
    shape.swap(nd - 2, nd - 1);
    Tensor::from_parts(shape, d)
}

fn batch_matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
    let (ba, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bb, n) = (b.shape()[0], b.shape()[2]);
    let batch = if ba == 1 { bb } else { ba };
    let mut ga = needs[0].then(|| vec![0.0; a.len()]);
    let mut gb = needs[1].then(|| vec![0.0; b.len()]);
    for bi in 0..batch {
        let ao = if ba == 1 { 0 } else { bi * m * k };
        let bo = if bb == 1 { 0 } else { bi * k * n };
        let go = bi * m * n;
        for i in 0..m {
            for j in 0..n {
                let gv = g.data()[go + i * n + j];
                if gv == 0.0 {
                    continue;
                }
                for l in 0..k {
                    if let Some(ga) = ga.as_mut() {
                        ga[ao + i * k + l] += gv * b.data()[bo + l * n + j];
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[bo + l * n + j] += gv * a.data()[ao + i * k + l];
                    }
                }
            }
        }
    }
    vec![
        ga.map(|d| Tensor::from_parts(a.shape().to_vec(), d)),
        gb.map(|d| Tensor::from_parts(b.shape().to_vec(), d)),
    ]
}

fn conv_backward(
    inputs: &[&Tensor],
    g: &Tensor,
    needs: &[bool],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
) -> Vec<Option<Tensor>> {
    let (x, weight) = (inputs[0], inputs[1]);
    let hw = h * w;
    let kk = 9 * cin;
    let gx = needs[0].then(|| {
        let mut gcols = vec![0.0; hw * kk];
        gemm(hw, cout, kk, g.data(), false, weight.data(), true, &mut gcols, 0.0);
        Tensor::from_parts(x.shape().to_vec(), col2im3x3(&gcols, h, w, cin))
    });
    let gw = needs[1].then(|| {
        let cols = im2col3x3(x.data(), h, w, cin);
        let mut d = vec![0.0; kk * cout];
        gemm(kk, hw, cout, &cols, true, g.data(), false, &mut d, 0.0);
        Tensor::from_parts(weight.shape().to_vec(), d)
    });
    let gb = needs[2].then(|| {
        let mut d = vec![0.0; cout];
        for p in 0..hw {
            for (c, acc) in d.iter_mut().enumerate() {
                *acc += g.data()[p * cout + c];
            }
        }
        Tensor::from_parts(vec![cout], d)
    });
    vec![gx, gw, gb]
}

/// Separable window filter over a channels-last `[h, w, c]` image whose
/// weights are renormalised over the taps that fall inside the image.
pub(crate) struct FilterPlan {
    h: usize,
    w: usize,
    c: usize,
    taps: Vec<f64>,
    norm_x: Vec<f64>,
    norm_y: Vec<f64>,
}

impl FilterPlan {
    fn new(h: usize, w: usize, c: usize, taps: Vec<f64>) -> Self {
        let r = (taps.len() / 2) as isize;
        let norm = |len: usize| -> Vec<f64> {
            (0..len as isize)
                .map(|i| {
                    (-r..=r)
                        .filter(|k| (0..len as isize).contains(&(i + k)))
                        .map(|k| taps[(k + r) as usize])
                        .sum()
                })
                .collect()
        };
        FilterPlan {
            h,
            w,
            c,
            norm_x: norm(w),
            norm_y: norm(h),
            taps,
        }
    }

    fn radius(&self) -> isize {
        (self.taps.len() / 2) as isize
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (h, w, c, r) = (self.h, self.w, self.c, self.radius());
        let mut tmp = vec![0.0; x.len()];
        for y in 0..h {
            for xx in 0..w {
                let o = (y * w + xx) * c;
                for k in -r..=r {
                    let sx = xx as isize + k;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let wt = self.taps[(k + r) as usize] / self.norm_x[xx];
                    let s = (y * w + sx as usize) * c;
                    for ch in 0..c {
                        tmp[o + ch] += wt * x[s + ch];
                    }
                }
            }
        }
        let mut out = vec![0.0; x.len()];
        for y in 0..h {
            for k in -r..=r {
                let sy = y as isize + k;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let wt = self.taps[(k + r) as usize] / self.norm_y[y];
                for xx in 0..w {
                    let o = (y * w + xx) * c;
                    let s = (sy as usize * w + xx) * c;
                    for ch in 0..c {
                        out[o + ch] += wt * tmp[s + ch];
                    }
                }
            }
        }
        out
    }

    fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        let (h, w, c, r) = (self.h, self.w, self.c, self.radius());
        let mut gtmp = vec![0.0; g.len()];
        for y in 0..h {
            for k in -r..=r {
                let sy = y as isize + k;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let wt = self.taps[(k + r) as usize] / self.norm_y[y];
                for xx in 0..w {
                    let o = (y * w + xx) * c;
                    let s = (sy as usize * w + xx) * c;
                    for ch in 0..c {
                        gtmp[s + ch] += wt * g[o + ch];
                    }
                }
            }
        }
        let mut gx = vec![0.0; g.len()];
        for y in 0..h {
            for xx in 0..w {
                let o = (y * w + xx) * c;
                for k in -r..=r {
                    let sx = xx as isize + k;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let wt = self.taps[(k + r) as usize] / self.norm_x[xx];
                    let s = (y * w + sx as usize) * c;
                    for ch in 0..c {
                        gx[s + ch] += wt * gtmp[o + ch];
                    }
                }
            }
        }
        gx
    }
}

impl<'t> Var<'t> {
    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let out = self.value().map(f);
        self.tape.push(op, vec![self.id], out, false)
    }

    fn binary(&self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shapes(a.shape(), b.shape())
            .ok_or_else(|| AdError::shapes(op.name(), &[a.shape(), b.shape()]))?;
        let data = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ia = broadcast_index(a.shape(), &shape);
            let ib = broadcast_index(b.shape(), &shape);
            ia.iter().zip(&ib).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect()
        };
        Ok(self.tape.push(op, vec![self.id, other.id], Tensor::from_parts(shape, data), false))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg, |x| -x)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(Op::Log, f64::ln)
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    /// Subgradient 0 at the kink.
    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid, |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn abs(&self) -> Var<'t> {
        self.unary(Op::Abs, f64::abs)
    }

    pub fn powf(&self, p: f64) -> Var<'t> {
        self.unary(Op::Powf(p), |x| x.powf(p))
    }

    pub fn square(&self) -> Var<'t> {
        self.powf(2.0)
    }

    /// Gradient passes only strictly inside `(lo, hi)`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp { lo, hi }, |x| x.clamp(lo, hi))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(c), |x| x * c)
    }

    pub fn offset(&self, c: f64) -> Var<'t> {
        self.unary(Op::Offset, |x| x + c)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(AdError::shapes("matmul", &[a.shape(), b.shape()]));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut d = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut d, 0.0);
        Ok(self
            .tape
            .push(Op::MatMul, vec![self.id, other.id], Tensor::from_parts(vec![m, n], d), false))
    }

    /// `[B, m, k] x [B, k, n] -> [B, m, n]`; either batch may be 1 and broadcast.
    pub fn batch_matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[2] != sb[1] || (sa[0] != sb[0] && sa[0] != 1 && sb[0] != 1) {
            return Err(AdError::shapes("batch_matmul", &[sa, sb]));
        }
        let (m, k, n) = (sa[1], sa[2], sb[2]);
        // A batch of 1 broadcasts, including against an empty batch.
        let batch = if sa[0] == 1 { sb[0] } else { sa[0] };
        let mut d = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let ao = if sa[0] == 1 { 0 } else { bi * m * k };
            let bo = if sb[0] == 1 { 0 } else { bi * k * n };
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for l in 0..k {
                        acc += a.data()[ao + i * k + l] * b.data()[bo + l * n + j];
                    }
                    d[bi * m * n + i * n + j] = acc;
                }
            }
        }
        Ok(self.tape.push(
            Op::BatchMatMul,
            vec![self.id, other.id],
            Tensor::from_parts(vec![batch, m, n], d),
            false,
        ))
    }

    pub fn transpose_last2(&self) -> Result<Var<'t>> {
        let v = self.value();
        if v.shape().len() < 2 {
            return Err(AdError::shapes("transpose", &[v.shape()]));
        }
        let out = transpose_last2(&v);
        Ok(self.tape.push(Op::TransposeLast2, vec![self.id], out, false))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        if shape.iter().product::<usize>() != v.len() {
            return Err(AdError::shapes("reshape", &[v.shape(), shape]));
        }
        let out = Tensor::from_parts(shape.to_vec(), v.data().to_vec());
        Ok(self.tape.push(Op::Reshape, vec![self.id], out, false))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        match broadcast_shapes(v.shape(), shape) {
            Some(s) if s == shape => {}
            _ => return Err(AdError::shapes("broadcast", &[v.shape(), shape])),
        }
        let idx = broadcast_index(v.shape(), shape);
        let out = Tensor::from_parts(shape.to_vec(), idx.iter().map(|&i| v.data()[i]).collect());
        Ok(self.tape.push(Op::Broadcast, vec![self.id], out, false))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.tape.push(Op::Sum, vec![self.id], Tensor::scalar(s), false)
    }

    /// Mean of all elements (0 for an empty tensor).
    pub fn mean(&self) -> Var<'t> {
        let v = self.value();
        let m = if v.is_empty() { 0.0 } else { v.data().iter().sum::<f64>() / v.len() as f64 };
        self.tape.push(Op::Mean, vec![self.id], Tensor::scalar(m), false)
    }

    /// Sum over the trailing axis, keeping it with size 1.
    pub fn sum_last(&self) -> Var<'t> {
        let v = self.value();
        let c = v.last_dim().max(1);
        let data: Vec<f64> = v.data().chunks(c).map(|r| r.iter().sum()).collect();
        let mut shape = v.shape().to_vec();
        match shape.last_mut() {
            Some(l) => *l = 1,
            None => shape.push(1),
        }
        self.tape.push(Op::SumLast, vec![self.id], Tensor::from_parts(shape, data), false)
    }

    /// Row-wise dot product over the trailing axis.
    pub fn dot_last(&self, other: Var<'t>) -> Result<Var<'t>> {
        Ok(self.mul(other)?.sum_last())
    }

    /// Euclidean norm over the trailing axis, keeping it with size 1.
    pub fn norm_last(&self) -> Var<'t> {
        let v = self.value();
        let c = v.last_dim().max(1);
        let data: Vec<f64> = v.data().chunks(c).map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let mut shape = v.shape().to_vec();
        match shape.last_mut() {
            Some(l) => *l = 1,
            None => shape.push(1),
        }
        self.tape.push(Op::NormLast, vec![self.id], Tensor::from_parts(shape, data), false)
    }

    /// Rows scaled to unit length over the trailing axis.
    pub fn normalize_last(&self) -> Result<Var<'t>> {
        self.div(self.norm_last())
    }

    pub fn concat_last(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| AdError::invalid("concat", "no inputs"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let lead = &values[0].shape()[..values[0].shape().len().saturating_sub(1)];
        for v in &values {
            if v.shape().is_empty() || &v.shape()[..v.shape().len() - 1] != lead {
                let shapes: Vec<&[usize]> = values.iter().map(|v| v.shape()).collect();
                return Err(AdError::shapes("concat", &shapes));
            }
        }
        let widths: Vec<usize> = values.iter().map(|v| v.last_dim()).collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut d = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                d.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(first
            .tape
            .push(Op::ConcatLast { widths }, ids, Tensor::from_parts(shape, d), false))
    }

    /// Picks entries of the trailing axis (slicing, permutation, repetition).
    pub fn select_last(&self, indices: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        let c = v.last_dim();
        if v.shape().is_empty() || indices.iter().any(|&i| i >= c) {
            return Err(AdError::invalid("select", format!("indices {:?} out of range for {:?}", indices, v.shape())));
        }
        let rows = v.len() / c.max(1);
        let mut d = Vec::with_capacity(rows * indices.len());
        for r in 0..rows {
            d.extend(indices.iter().map(|&i| v.data()[r * c + i]));
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = indices.len();
        Ok(self.tape.push(
            Op::SelectLast {
                indices: indices.to_vec(),
            },
            vec![self.id],
            Tensor::from_parts(shape, d),
            false,
        ))
    }

    /// `out[r] = self[indices[r]]` along axis 0.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        let n = *v
            .shape()
            .first()
            .ok_or_else(|| AdError::shapes("gather_rows", &[v.shape()]))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(AdError::invalid("gather_rows", format!("row {} out of range for {:?}", bad, v.shape())));
        }
        let row = if n == 0 { 0 } else { v.len() / n };
        let mut d = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            d.extend_from_slice(&v.data()[i * row..(i + 1) * row]);
        }
        let mut shape = v.shape().to_vec();
        shape[0] = indices.len();
        Ok(self.tape.push(
            Op::GatherRows {
                indices: indices.to_vec(),
            },
            vec![self.id],
            Tensor::from_parts(shape, d),
            false,
        ))
    }

    /// `out[indices[r]] += self[r]` into `rows` rows (segment sum).
    pub fn scatter_rows(&self, indices: &[usize], rows: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.shape().first() != Some(&indices.len()) {
            return Err(AdError::invalid(
                "scatter_rows",
                format!("{} indices for shape {:?}", indices.len(), v.shape()),
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(AdError::invalid("scatter_rows", format!("row {} out of range {}", bad, rows)));
        }
        let row = if indices.is_empty() {
            v.shape()[1..].iter().product()
        } else {
            v.len() / indices.len()
        };
        let mut d = vec![0.0; rows * row];
        for (r, &dst) in indices.iter().enumerate() {
            for c in 0..row {
                d[dst * row + c] += v.data()[r * row + c];
            }
        }
        let mut shape = v.shape().to_vec();
        shape[0] = rows;
        Ok(self.tape.push(
            Op::ScatterRows {
                indices: indices.to_vec(),
            },
            vec![self.id],
            Tensor::from_parts(shape, d),
            false,
        ))
    }

    /// Contiguous flat sub-range of the data, reshaped.
    pub fn range(&self, offset: usize, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        let n: usize = shape.iter().product();
        if offset + n > v.len() {
            return Err(AdError::invalid(
                "range",
                format!("{}..{} exceeds {} elements", offset, offset + n, v.len()),
            ));
        }
        let out = Tensor::from_parts(shape.to_vec(), v.data()[offset..offset + n].to_vec());
        Ok(self.tape.push(Op::Range { offset }, vec![self.id], out, false))
    }

    /// 3x3 convolution, stride 1, zero padding, channels-last.
    /// `self: [h, w, cin]`, `weight: [9*cin, cout]` (row = tap*cin + ci), `bias: [cout]`.
    pub fn conv3x3(&self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (x, wt, b) = (self.value(), weight.value(), bias.value());
        let (sx, sw, sb) = (x.shape(), wt.shape(), b.shape());
        if sx.len() != 3 || sw.len() != 2 || sw[0] != 9 * sx[2] || sb != [sw[1]] {
            return Err(AdError::shapes("conv3x3", &[sx, sw, sb]));
        }
        let (h, w, cin, cout) = (sx[0], sx[1], sx[2], sw[1]);
        let cols = im2col3x3(x.data(), h, w, cin);
        let mut d = vec![0.0; h * w * cout];
        for p in 0..h * w {
            d[p * cout..(p + 1) * cout].copy_from_slice(b.data());
        }
        gemm(h * w, 9 * cin, cout, &cols, false, wt.data(), false, &mut d, 1.0);
        Ok(self.tape.push(
            Op::Conv3x3 { h, w, cin, cout },
            vec![self.id, weight.id, bias.id],
            Tensor::from_parts(vec![h, w, cout], d),
            false,
        ))
    }

    /// Elementwise max over a set of same-shaped `[rows, c]` inputs, where
    /// `masks[m][row]` says whether input `m` takes part at that row. Rows
    /// with no participant are zero. Ties go to the lowest input index.
    pub fn masked_max(parts: &[Var<'t>], masks: &[Vec<bool>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| AdError::invalid("max_pool", "no inputs"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let shape = values[0].shape().to_vec();
        if shape.is_empty() || values.iter().any(|v| v.shape() != shape.as_slice()) {
            let shapes: Vec<&[usize]> = values.iter().map(|v| v.shape()).collect();
            return Err(AdError::shapes("max_pool", &shapes));
        }
        let rows = shape[0];
        if masks.len() != parts.len() || masks.iter().any(|m| m.len() != rows) {
            return Err(AdError::invalid("max_pool", "mask count or length does not match inputs"));
        }
        let c = values[0].len() / rows.max(1);
        let mut d = vec![0.0; values[0].len()];
        let mut winners = vec![NO_WINNER; d.len()];
        for r in 0..rows {
            for (m, v) in values.iter().enumerate() {
                if !masks[m][r] {
                    continue;
                }
                for j in 0..c {
                    let o = r * c + j;
                    let x = v.data()[o];
                    if winners[o] == NO_WINNER || x > d[o] {
                        d[o] = x;
                        winners[o] = m as u32;
                    }
                }
            }
        }
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(first.tape.push(
            Op::MaxPool {
                winners,
                inputs: parts.len(),
            },
            ids,
            Tensor::from_parts(shape, d),
            false,
        ))
    }

    /// Separable window filter on a channels-last `[h, w, c]` image with
    /// symmetric 1-D `taps` (odd length); each output is normalised by the
    /// weight of the taps that fall inside the image.
    pub fn window_filter(&self, taps: &[f64]) -> Result<Var<'t>> {
        let v = self.value();
        if v.shape().len() != 3 || taps.len() % 2 == 0 {
            return Err(AdError::invalid(
                "filter2d",
                format!("shape {:?} with {} taps", v.shape(), taps.len()),
            ));
        }
        let s = v.shape();
        let plan = FilterPlan::new(s[0], s[1], s[2], taps.to_vec());
        let out = Tensor::from_parts(s.to_vec(), plan.forward(v.data()));
        Ok(self.tape.push(Op::Filter2d(Box::new(plan)), vec![self.id], out, false))
    }
}
