use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{conv2d_backward, conv2d_forward};
use super::{CVar, CustomBackward, Op, RealTensor, Tape, Var};
use crate::error::{config_err, shape_err, Error, Result};
use crate::math;

/// Amplitudes below this are treated as the origin: magnitude and argument
/// gradients vanish there.
pub const AMPLITUDE_FLOOR: f64 = 1e-8;

/// Default instance-norm epsilon.
pub const NORM_EPS: f64 = 1e-5;

/// Probability clamp used by [`Tape::bce_loss`].
pub const BCE_CLAMP: f64 = 1e-7;

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

impl Tape {
    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn map2(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> RealTensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        RealTensor { shape: ta.shape().to_vec(), data }
    }

    fn map1(&self, a: Var, f: impl Fn(f64) -> f64) -> RealTensor {
        let ta = self.value(a);
        RealTensor { shape: ta.shape().to_vec(), data: ta.data().iter().map(|&x| f(x)).collect() }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.map2(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.map2(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.map2(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.map1(a, |x| x * s);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.map1(a, |x| x + s);
        let rg = self.rg(&[a]);
        self.push(v, Op::AddScalar(a), rg)
    }

    /// `1 − a`, used by the recurrent gates.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -1.0);
        self.add_scalar(n, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map1(a, math::sigmoid);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    /// Rectification `[x]_+`.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map1(a, |x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    /// Elementwise modulus of a complex value.
    pub fn magnitude(&mut self, z: CVar) -> Result<Var> {
        self.same_shape(z.re, z.im, "magnitude")?;
        let v = self.map2(z.re, z.im, math::hypot);
        let rg = self.rg(&[z.re, z.im]);
        Ok(self.push(v, Op::Magnitude(z.re, z.im), rg))
    }

    /// Elementwise argument in (−π, π]. The gradient is zero where the
    /// amplitude is below [`AMPLITUDE_FLOOR`].
    pub fn arg(&mut self, z: CVar) -> Result<Var> {
        self.same_shape(z.re, z.im, "arg")?;
        let v = self.map2(z.re, z.im, |r, i| {
            let p = math::atan2(i, r);
            if p <= -math::PI {
                math::PI
            } else {
                p
            }
        });
        let rg = self.rg(&[z.re, z.im]);
        Ok(self.push(v, Op::Arg(z.re, z.im), rg))
    }

    /// Same-size 2-D cross-correlation. `x` is `[cin, h, w]`, `w` is
    /// `[k, k, cin, cout]` with `k` odd, `bias` is `[cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 {
            return Err(shape_err!("conv2d input must be [C,H,W], got {:?}", xs));
        }
        if ws.len() != 4 || ws[0] != ws[1] {
            return Err(shape_err!("conv2d kernel must be [k,k,Cin,Cout], got {:?}", ws));
        }
        if ws[0] % 2 == 0 {
            return Err(config_err!("conv2d kernel extent {} is not odd", ws[0]));
        }
        if ws[2] != xs[0] {
            return Err(shape_err!("conv2d kernel expects {} input channels, got {}", ws[2], xs[0]));
        }
        let (k, cin, cout, h, w_) = (ws[0], ws[2], ws[3], xs[1], xs[2]);
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(shape_err!("conv2d bias must be [{cout}], got {:?}", self.shape(b)));
            }
        }
        let out = conv2d_forward(
            self.value(x).data(),
            cin,
            h,
            w_,
            self.value(w).data(),
            k,
            cout,
            bias.map(|b| self.value(b).data()),
        );
        let mut ins = vec![x, w];
        ins.extend(bias);
        let rg = self.rg(&ins);
        let value = RealTensor { shape: vec![cout, h, w_], data: out };
        Ok(self.push(value, Op::Conv2d { x, w, bias, k, cin, cout, h, w_ }, rg))
    }

    /// Pointwise channel mixing of a `[C_in, T, H, W]` volume: a 3-D
    /// convolution whose kernel extent is 1 in every dimension. `w` is
    /// `[1, 1, 1, C_in, C_out]`.
    pub fn conv3d_1x1(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 {
            return Err(shape_err!("conv3d input must be [C,T,H,W], got {:?}", xs));
        }
        if ws.len() != 5 {
            return Err(shape_err!("conv3d kernel must be [kt,kh,kw,Cin,Cout], got {:?}", ws));
        }
        if ws[..3] != [1, 1, 1] {
            return Err(config_err!("conv3d_1x1 needs a unit kernel, got extents {:?}", &ws[..3]));
        }
        let (cin, cout) = (ws[3], ws[4]);
        if cin != xs[0] {
            return Err(shape_err!("conv3d kernel expects {cin} input channels, got {}", xs[0]));
        }
        let flat = self.reshape(x, &[cin, 1, xs[1] * xs[2] * xs[3]])?;
        let wk = self.reshape(w, &[1, 1, cin, cout])?;
        let y = self.conv2d(flat, wk, bias)?;
        self.reshape(y, &[cout, xs[1], xs[2], xs[3]])
    }

    /// Per-sample, per-channel normalization over the spatial extent with no
    /// learned affine. `x` is `[C, ...]` with at least two spatial elements.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(shape_err!("instance_norm needs [C, spatial...], got {:?}", xs));
        }
        let channels = xs[0];
        let n: usize = xs[1..].iter().product();
        if n < 2 {
            return Err(config_err!("instance_norm over a degenerate {:?} spatial map", &xs[1..]));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        let mut inv_std = Vec::with_capacity(channels);
        for c in 0..channels {
            let s = &src[c * n..(c + 1) * n];
            let mean = s.iter().sum::<f64>() / n as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / math::sqrt(var + eps);
            for (o, &v) in out[c * n..(c + 1) * n].iter_mut().zip(s) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(RealTensor { shape: xs, data: out }, Op::InstanceNorm { x, channels, n, inv_std }, rg))
    }

    /// `y[c, ...] = s[c] * x[c, ...]`.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if self.shape(s) != [xs[0]] {
            return Err(shape_err!("channel_scale: {:?} against {:?}", self.shape(s), xs));
        }
        let n = self.value(x).numel() / xs[0];
        let sv = self.value(s).data();
        let data =
            self.value(x).data().chunks(n).zip(sv).flat_map(|(ch, &f)| ch.iter().map(move |v| v * f)).collect();
        let rg = self.rg(&[x, s]);
        Ok(self.push(RealTensor { shape: xs, data }, Op::ChannelScale { x, s }, rg))
    }

    /// `y[c, ...] = x[c, ...] + b[c]`.
    pub fn channel_shift(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if self.shape(b) != [xs[0]] {
            return Err(shape_err!("channel_shift: {:?} against {:?}", self.shape(b), xs));
        }
        let n = self.value(x).numel() / xs[0];
        let bv = self.value(b).data();
        let data =
            self.value(x).data().chunks(n).zip(bv).flat_map(|(ch, &f)| ch.iter().map(move |v| v + f)).collect();
        let rg = self.rg(&[x, b]);
        Ok(self.push(RealTensor { shape: xs, data }, Op::ChannelShift { x, b }, rg))
    }

    /// Global average pool: `[C, ...]` → `[C]`.
    pub fn avg_pool_global(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() {
            return Err(shape_err!("avg_pool_global on a rank-0 tensor"));
        }
        let channels = xs[0];
        let n = self.value(x).numel() / channels.max(1);
        let data = self.value(x).data().chunks(n).map(|c| c.iter().sum::<f64>() / n as f64).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(RealTensor { shape: vec![channels], data }, Op::MeanSpatial { x, channels, n }, rg))
    }

    /// Selects one element per channel: `[C, ...]` → `[C]`, `y[c] = x[c, idx[c]]`
    /// with `idx` a flat spatial index.
    pub fn gather_per_channel(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let channels = xs[0];
        let n = self.value(x).numel() / channels.max(1);
        if idx.len() != channels || idx.iter().any(|&i| i >= n) {
            return Err(shape_err!("gather indices {:?} do not fit {:?}", idx, xs));
        }
        let src = self.value(x).data();
        let data = idx.iter().enumerate().map(|(c, &i)| src[c * n + i]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(RealTensor { shape: vec![channels], data }, Op::Gather { x, n, idx }, rg))
    }

    /// Global max pool: `[C, ...]` → `[C]` (first maximum wins ties).
    pub fn max_pool_global(&mut self, x: Var) -> Result<Var> {
        let idx = argmax_per_channel(self.value(x));
        self.gather_per_channel(x, idx)
    }

    /// Dense layer: `x` `[in]`, `w` `[out, in]`, `b` `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let inp = self.value(x).numel();
        if ws.len() != 2 || ws[1] != inp {
            return Err(shape_err!("linear weight {:?} against input of {} values", ws, inp));
        }
        let out = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(shape_err!("linear bias must be [{out}], got {:?}", self.shape(b)));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut data: Vec<f64> =
            wv.chunks(inp).map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>()).collect();
        if let Some(b) = b {
            for (d, bb) in data.iter_mut().zip(self.value(b).data()) {
                *d += bb;
            }
        }
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.rg(&ins);
        Ok(self.push(RealTensor { shape: vec![out], data }, Op::Linear { x, w, b, out, inp }, rg))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(shape_err!("narrow axis {axis} [{start}, {}) of {:?}", start + len, xs));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let axis_len = xs[axis];
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(RealTensor { shape, data }, Op::Narrow { x, outer, axis_len, inner, start, len }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err!("concat of nothing"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(shape_err!("concat: {:?} vs trailing {:?}", s, tail));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = self.rg(parts);
        Ok(self.push(RealTensor { shape, data }, Op::Concat(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(RealTensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Binary cross-entropy on a logit, `BCE(σ(logit), label)` evaluated in
    /// the numerically stable softplus form.
    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Result<Var> {
        if self.value(logit).numel() != 1 {
            return Err(shape_err!("bce expects a single logit, got {:?}", self.shape(logit)));
        }
        let z = self.item(logit);
        if !z.is_finite() {
            return Err(Error::Numeric(alloc::format!("non-finite logit {z}")));
        }
        let loss = label * math::softplus(-z) + (1.0 - label) * math::softplus(z);
        let rg = self.rg(&[logit]);
        Ok(self.push(RealTensor::scalar(loss), Op::BceWithLogits { logit, label }, rg))
    }

    /// Binary cross-entropy on a probability. The input is clamped to
    /// `[BCE_CLAMP, 1 − BCE_CLAMP]`; anything outside `[0, 1]` (or NaN) is a
    /// numeric error.
    pub fn bce_loss(&mut self, p: Var, label: f64) -> Result<Var> {
        if self.value(p).numel() != 1 {
            return Err(shape_err!("bce expects a single probability, got {:?}", self.shape(p)));
        }
        let raw = self.item(p);
        if !(0.0..=1.0).contains(&raw) {
            return Err(Error::Numeric(alloc::format!("probability {raw} outside [0, 1]")));
        }
        let q = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let loss = -(label * math::ln(q) + (1.0 - label) * math::ln(1.0 - q));
        let rg = self.rg(&[p]);
        Ok(self.push(RealTensor::scalar(loss), Op::Bce { p, label }, rg))
    }

    /// Softmax cross-entropy of `logits` `[K]` against a class index.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits).data();
        if label >= lv.len() {
            return Err(shape_err!("label {label} out of {} classes", lv.len()));
        }
        let m = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + math::ln(lv.iter().map(|&v| math::exp(v - m)).sum::<f64>());
        let loss = lse - lv[label];
        let rg = self.rg(&[logits]);
        Ok(self.push(RealTensor::scalar(loss), Op::CrossEntropy { logits, label }, rg))
    }

    /// Records an op whose backward rule is supplied by the caller.
    pub fn custom(&mut self, value: RealTensor, op: Box<dyn CustomBackward>) -> Var {
        let rg = self.rg(op.inputs());
        self.push(value, Op::Custom(op), rg)
    }

    pub(crate) fn backward_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let numel = |v: Var| self.nodes[v.0].value.numel();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &(v, s) in &[(*a, 1.0), (*b, 1.0)] {
                    if needs(v) {
                        let ga = acc(grads, v, g.len());
                        ga.iter_mut().zip(g).for_each(|(o, &x)| *o += s * x);
                    }
                }
            }
            Op::Sub(a, b) => {
                for &(v, s) in &[(*a, 1.0), (*b, -1.0)] {
                    if needs(v) {
                        let ga = acc(grads, v, g.len());
                        ga.iter_mut().zip(g).for_each(|(o, &x)| *o += s * x);
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bv = val(*b);
                    let ga = acc(grads, *a, g.len());
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += x * y;
                    }
                }
                if needs(*b) {
                    let av = val(*a);
                    let gb = acc(grads, *b, g.len());
                    for ((o, &x), &y) in gb.iter_mut().zip(g).zip(av) {
                        *o += x * y;
                    }
                }
            }
            Op::Scale(a, s) => {
                if needs(*a) {
                    let ga = acc(grads, *a, g.len());
                    ga.iter_mut().zip(g).for_each(|(o, &x)| *o += s * x);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if needs(*a) {
                    let ga = acc(grads, *a, g.len());
                    ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x);
                }
            }
            Op::Sigmoid(a) => {
                if needs(*a) {
                    let y = node.value.data();
                    let ga = acc(grads, *a, g.len());
                    for ((o, &x), &s) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * s * (1.0 - s);
                    }
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    let xv = val(*a);
                    let ga = acc(grads, *a, g.len());
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *o += x;
                        }
                    }
                }
            }
            Op::Magnitude(re, im) => {
                let amp = node.value.data();
                for (part, v) in [(val(*re), *re), (val(*im), *im)] {
                    if needs(v) {
                        let gp = acc(grads, v, g.len());
                        for i in 0..g.len() {
                            if amp[i] > AMPLITUDE_FLOOR {
                                gp[i] += g[i] * part[i] / amp[i];
                            }
                        }
                    }
                }
            }
            Op::Arg(re, im) => {
                let (rv, iv) = (val(*re), val(*im));
                let r2: Vec<f64> = rv.iter().zip(iv).map(|(a, b)| a * a + b * b).collect();
                let floor2 = AMPLITUDE_FLOOR * AMPLITUDE_FLOOR;
                if needs(*re) {
                    let gr = acc(grads, *re, g.len());
                    for i in 0..g.len() {
                        if r2[i] > floor2 {
                            gr[i] += -g[i] * iv[i] / r2[i];
                        }
                    }
                }
                if needs(*im) {
                    let gi = acc(grads, *im, g.len());
                    for i in 0..g.len() {
                        if r2[i] > floor2 {
                            gi[i] += g[i] * rv[i] / r2[i];
                        }
                    }
                }
            }
            Op::Conv2d { x, w, bias, k, cin, cout, h, w_ } => {
                let mut gx = needs(*x).then(|| vec![0.0; numel(*x)]);
                let mut gw = needs(*w).then(|| vec![0.0; numel(*w)]);
                let mut gb = bias.filter(|b| needs(*b)).map(|b| vec![0.0; numel(b)]);
                conv2d_backward(
                    val(*x),
                    *cin,
                    *h,
                    *w_,
                    val(*w),
                    *k,
                    *cout,
                    g,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                for (v, buf) in [(Some(*x), gx), (Some(*w), gw), (*bias, gb)] {
                    if let (Some(v), Some(buf)) = (v, buf) {
                        let dst = acc(grads, v, buf.len());
                        dst.iter_mut().zip(&buf).for_each(|(o, b)| *o += b);
                    }
                }
            }
            Op::InstanceNorm { x, channels, n, inv_std } => {
                if needs(*x) {
                    let y = node.value.data();
                    let gx = acc(grads, *x, g.len());
                    let nf = *n as f64;
                    for c in 0..*channels {
                        let r = c * n..(c + 1) * n;
                        let gs = &g[r.clone()];
                        let ys = &y[r.clone()];
                        let sum_g: f64 = gs.iter().sum();
                        let sum_gy: f64 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
                        let is = inv_std[c];
                        for ((o, &gi), &yi) in gx[r].iter_mut().zip(gs).zip(ys) {
                            *o += is / nf * (nf * gi - sum_g - yi * sum_gy);
                        }
                    }
                }
            }
            Op::ChannelScale { x, s } => {
                let channels = numel(*s);
                let n = g.len() / channels;
                if needs(*x) {
                    let sv = val(*s);
                    let gx = acc(grads, *x, g.len());
                    for c in 0..channels {
                        for i in c * n..(c + 1) * n {
                            gx[i] += g[i] * sv[c];
                        }
                    }
                }
                if needs(*s) {
                    let xv = val(*x);
                    let gs = acc(grads, *s, channels);
                    for c in 0..channels {
                        let r = c * n..(c + 1) * n;
                        gs[c] += g[r.clone()].iter().zip(&xv[r]).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::ChannelShift { x, b } => {
                let channels = numel(*b);
                let n = g.len() / channels;
                if needs(*x) {
                    let gx = acc(grads, *x, g.len());
                    gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
                }
                if needs(*b) {
                    let gb = acc(grads, *b, channels);
                    for c in 0..channels {
                        gb[c] += g[c * n..(c + 1) * n].iter().sum::<f64>();
                    }
                }
            }
            Op::MeanSpatial { x, channels, n } => {
                if needs(*x) {
                    let gx = acc(grads, *x, channels * n);
                    for c in 0..*channels {
                        let s = g[c] / *n as f64;
                        gx[c * n..(c + 1) * n].iter_mut().for_each(|o| *o += s);
                    }
                }
            }
            Op::Gather { x, n, idx } => {
                if needs(*x) {
                    let gx = acc(grads, *x, idx.len() * n);
                    for (c, &i) in idx.iter().enumerate() {
                        gx[c * n + i] += g[c];
                    }
                }
            }
            Op::Linear { x, w, b, out, inp } => {
                if needs(*x) {
                    let wv = val(*w);
                    let gx = acc(grads, *x, *inp);
                    for o in 0..*out {
                        let row = &wv[o * inp..(o + 1) * inp];
                        gx.iter_mut().zip(row).for_each(|(d, &wr)| *d += g[o] * wr);
                    }
                }
                if needs(*w) {
                    let xv = val(*x);
                    let gw = acc(grads, *w, out * inp);
                    for o in 0..*out {
                        gw[o * inp..(o + 1) * inp].iter_mut().zip(xv).for_each(|(d, &xi)| *d += g[o] * xi);
                    }
                }
                if let Some(b) = b.filter(|b| needs(*b)) {
                    let gb = acc(grads, b, *out);
                    gb.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
            }
            Op::Narrow { x, outer, axis_len, inner, start, len } => {
                if needs(*x) {
                    let gx = acc(grads, *x, outer * axis_len * inner);
                    let chunk = len * inner;
                    for o in 0..*outer {
                        let base = (o * axis_len + start) * inner;
                        gx[base..base + chunk]
                            .iter_mut()
                            .zip(&g[o * chunk..(o + 1) * chunk])
                            .for_each(|(d, &v)| *d += v);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = numel(p);
                    if needs(p) {
                        let gp = acc(grads, p, n);
                        gp.iter_mut().zip(&g[off..off + n]).for_each(|(d, &v)| *d += v);
                    }
                    off += n;
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    let n = numel(*x);
                    let gx = acc(grads, *x, n);
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::BceWithLogits { logit, label } => {
                if needs(*logit) {
                    let z = val(*logit)[0];
                    let gl = acc(grads, *logit, 1);
                    gl[0] += g[0] * (math::sigmoid(z) - label);
                }
            }
            Op::Bce { p, label } => {
                if needs(*p) {
                    let raw = val(*p)[0];
                    let gp = acc(grads, *p, 1);
                    if raw > BCE_CLAMP && raw < 1.0 - BCE_CLAMP {
                        gp[0] += g[0] * (-(label / raw) + (1.0 - label) / (1.0 - raw));
                    }
                }
            }
            Op::CrossEntropy { logits, label } => {
                if needs(*logits) {
                    let lv = val(*logits);
                    let m = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = lv.iter().map(|&v| math::exp(v - m)).sum();
                    let gl = acc(grads, *logits, lv.len());
                    for (i, (d, &v)) in gl.iter_mut().zip(lv).enumerate() {
                        let p = math::exp(v - m) / z;
                        *d += g[0] * (p - if i == *label { 1.0 } else { 0.0 });
                    }
                }
            }
            Op::Custom(op) => {
                let inputs: Vec<&RealTensor> = op.inputs().iter().map(|v| &self.nodes[v.0].value).collect();
                let gs = op.backward(&inputs, &node.value, g);
                for (&v, buf) in op.inputs().iter().zip(gs) {
                    if needs(v) {
                        let dst = acc(grads, v, buf.len());
                        dst.iter_mut().zip(&buf).for_each(|(o, b)| *o += b);
                    }
                }
            }
        }
    }
}

/// Flat spatial argmax per channel of a `[C, ...]` tensor.
pub fn argmax_per_channel(t: &RealTensor) -> Vec<usize> {
    let channels = t.shape()[0];
    let n = t.numel() / channels.max(1);
    t.data()
        .chunks(n)
        .map(|ch| {
            let mut best = 0;
            for (i, &v) in ch.iter().enumerate() {
                if v > ch[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Like [`argmax_per_channel`], but values within `rel` of the channel
/// maximum count as ties, so rounding noise cannot pick the winner.
pub fn argmax_per_channel_within(t: &RealTensor, rel: f64) -> Vec<usize> {
    let channels = t.shape()[0];
    let n = t.numel() / channels.max(1);
    t.data()
        .chunks(n)
        .map(|ch| {
            let max = ch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let floor = max - rel * max.abs();
            ch.iter().position(|&v| v >= floor).unwrap_or(0)
        })
        .collect()
}
