//! Forward and backward kernels for every [`Primitive`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AutogradError, Primitive, Real, Tensor};

/// Probability floor inside the logarithm of the KL divergence.
pub const KL_EPSILON: f64 = 1e-12;

/// Tolerance on `sum(p) == 1` accepted by the KL divergence.
pub const KL_NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Intermediates kept by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub(crate) enum Saved<T> {
    None,
    /// im2col matrices of a convolution, one block per batch item.
    Columns(Vec<T>),
    /// Scaled keep-mask of a dropout.
    Mask(Vec<T>),
}

fn shape_err(op: &'static str, detail: String) -> AutogradError {
    AutogradError::Shape { op, detail }
}

struct ConvGeom {
    batch: usize,
    channels: usize,
    filters: usize,
    // spatial sizes; 1-D convolutions use height 1
    in_h: usize,
    in_w: usize,
    k_h: usize,
    k_w: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.channels * self.k_h * self.k_w
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output length of a valid, strided sliding window.
pub fn window_output_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if input < kernel || stride == 0 {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

fn conv_geometry<T: Real>(
    op: &'static str,
    two_d: bool,
    stride: usize,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<ConvGeom, AutogradError> {
    let rank = if two_d { 4 } else { 3 };
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != rank || ws.len() != rank {
        return Err(shape_err(
            op,
            format!("input {xs:?} and weight {ws:?} must both have rank {rank}"),
        ));
    }
    if xs[1] != ws[1] {
        return Err(shape_err(
            op,
            format!("input has {} channels, weight expects {}", xs[1], ws[1]),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [ws[0]] {
            return Err(shape_err(
                op,
                format!("bias {:?} does not match {} filters", b.shape(), ws[0]),
            ));
        }
    }
    let (in_h, in_w, k_h, k_w) = if two_d {
        (xs[2], xs[3], ws[2], ws[3])
    } else {
        (1, xs[2], 1, ws[2])
    };
    let out_h = if two_d {
        window_output_len(in_h, k_h, stride)
    } else {
        Some(1)
    };
    let out_w = window_output_len(in_w, k_w, stride);
    match (out_h, out_w) {
        (Some(out_h), Some(out_w)) => Ok(ConvGeom {
            batch: xs[0],
            channels: xs[1],
            filters: ws[0],
            in_h,
            in_w,
            k_h,
            k_w,
            out_h,
            out_w,
            stride,
        }),
        _ => Err(shape_err(
            op,
            format!("kernel {ws:?} larger than input {xs:?}"),
        )),
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (patch, out_len) = (g.patch(), g.out_len());
    let in_len = g.in_h * g.in_w;
    for bi in 0..g.batch {
        let xb = &x[bi * g.channels * in_len..(bi + 1) * g.channels * in_len];
        let cb = &mut cols[bi * patch * out_len..(bi + 1) * patch * out_len];
        for c in 0..g.channels {
            for i in 0..g.k_h {
                for j in 0..g.k_w {
                    let row = (c * g.k_h + i) * g.k_w + j;
                    let dst = &mut cb[row * out_len..(row + 1) * out_len];
                    for oh in 0..g.out_h {
                        let src_row = c * in_len + (oh * g.stride + i) * g.in_w + j;
                        for ow in 0..g.out_w {
                            dst[oh * g.out_w + ow] = xb[src_row + ow * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, dcols: &[T], dx_batch: &mut [T]) {
    let out_len = g.out_len();
    let in_len = g.in_h * g.in_w;
    for c in 0..g.channels {
        for i in 0..g.k_h {
            for j in 0..g.k_w {
                let row = (c * g.k_h + i) * g.k_w + j;
                let src = &dcols[row * out_len..(row + 1) * out_len];
                for oh in 0..g.out_h {
                    let dst_row = c * in_len + (oh * g.stride + i) * g.in_w + j;
                    for ow in 0..g.out_w {
                        dx_batch[dst_row + ow * g.stride] += src[oh * g.out_w + ow];
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(
    g: &ConvGeom,
    out_shape: Vec<usize>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> (Tensor<T>, Saved<T>) {
    let (patch, out_len) = (g.patch(), g.out_len());
    let mut cols = vec![T::zero(); g.batch * patch * out_len];
    im2col(g, x.data(), &mut cols);
    let mut y = vec![T::zero(); g.batch * g.filters * out_len];
    for bi in 0..g.batch {
        let yb = &mut y[bi * g.filters * out_len..(bi + 1) * g.filters * out_len];
        if let Some(b) = b {
            for (f, &bias) in b.data().iter().enumerate() {
                yb[f * out_len..(f + 1) * out_len].fill(bias);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        let cb = &cols[bi * patch * out_len..(bi + 1) * patch * out_len];
        T::gemm(g.filters, patch, out_len, w.data(), false, cb, false, beta, yb);
    }
    (Tensor::from_parts(out_shape, y), Saved::Columns(cols))
}

fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    cols: &[T],
    dy: &Tensor<T>,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let (patch, out_len) = (g.patch(), g.out_len());
    let dyd = dy.data();
    let mut dx = needs[0].then(|| Tensor::zeros(x.shape()));
    let mut dw = needs[1].then(|| Tensor::zeros(w.shape()));
    let mut db = (has_bias && needs[2]).then(|| Tensor::<T>::zeros(&[g.filters]));
    let mut dcols = vec![T::zero(); patch * out_len];
    let in_block = g.channels * g.in_h * g.in_w;
    for bi in 0..g.batch {
        let dyb = &dyd[bi * g.filters * out_len..(bi + 1) * g.filters * out_len];
        if let Some(dw) = dw.as_mut() {
            let cb = &cols[bi * patch * out_len..(bi + 1) * patch * out_len];
            T::gemm(g.filters, out_len, patch, dyb, false, cb, true, T::one(), dw.data_mut());
        }
        if let Some(db) = db.as_mut() {
            for (f, acc) in db.data_mut().iter_mut().enumerate() {
                *acc += dyb[f * out_len..(f + 1) * out_len].iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(patch, g.filters, out_len, w.data(), true, dyb, false, T::zero(), &mut dcols);
            col2im_add(g, &dcols, &mut dx.data_mut()[bi * in_block..(bi + 1) * in_block]);
        }
    }
    let mut out = vec![dx, dw];
    if has_bias {
        out.push(db);
    }
    out
}

fn pool_geometry<T: Real>(
    op: &'static str,
    two_d: bool,
    kernel: usize,
    stride: usize,
    x: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize), AutogradError> {
    // returns (planes, in_h, in_w, out_h, out_w)
    let xs = x.shape();
    let rank = if two_d { 4 } else { 3 };
    if xs.len() != rank {
        return Err(shape_err(op, format!("input {xs:?} must have rank {rank}")));
    }
    let planes = xs[0] * xs[1];
    let (in_h, in_w) = if two_d { (xs[2], xs[3]) } else { (1, xs[2]) };
    let out_h = if two_d {
        window_output_len(in_h, kernel, stride)
    } else {
        Some(1)
    };
    match (out_h, window_output_len(in_w, kernel, stride)) {
        (Some(oh), Some(ow)) => Ok((planes, in_h, in_w, oh, ow)),
        _ => Err(shape_err(op, format!("window {kernel} larger than input {xs:?}"))),
    }
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    let last = shape.last().copied().unwrap_or(1);
    let numel: usize = shape.iter().product();
    (numel / last, last)
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), AutogradError> {
    if a.shape() != b.shape() {
        Err(shape_err(
            op,
            format!("operands have shapes {:?} and {:?}", a.shape(), b.shape()),
        ))
    } else {
        Ok(())
    }
}

fn check_distribution<T: Real>(which: &str, t: &Tensor<T>) -> Result<(), AutogradError> {
    let mut total = 0.0;
    for &v in t.data() {
        let v = v.as_f64();
        if !(v >= 0.0) {
            return Err(AutogradError::NotNormalized(format!(
                "{which} has entry {v} outside [0, 1]"
            )));
        }
        total += v;
    }
    if (total - 1.0).abs() > KL_NORMALIZATION_TOLERANCE {
        return Err(AutogradError::NotNormalized(format!(
            "{which} sums to {total}, expected 1"
        )));
    }
    Ok(())
}

pub(crate) fn forward<T: Real>(
    prim: &Primitive,
    inputs: &[&Tensor<T>],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor<T>, Saved<T>), AutogradError> {
    let op = prim.name();
    let plain = |t: Tensor<T>| Ok((t, Saved::None));
    match prim {
        Primitive::Linear => {
            let (x, w) = (inputs[0], inputs[1]);
            let b = inputs.get(2).copied();
            let (xs, ws) = (x.shape(), w.shape());
            if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
                return Err(shape_err(
                    op,
                    format!("input {xs:?} is incompatible with weight {ws:?} (expected [B,in] and [out,in])"),
                ));
            }
            let (batch, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
            let mut y = vec![T::zero(); batch * fan_out];
            let mut beta = T::zero();
            if let Some(b) = b {
                if b.shape() != [fan_out] {
                    return Err(shape_err(
                        op,
                        format!("bias {:?} does not match {fan_out} outputs", b.shape()),
                    ));
                }
                for row in y.chunks_mut(fan_out) {
                    row.copy_from_slice(b.data());
                }
                beta = T::one();
            }
            T::gemm(batch, fan_in, fan_out, x.data(), false, w.data(), true, beta, &mut y);
            plain(Tensor::from_parts(vec![batch, fan_out], y))
        }
        Primitive::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (as_, bs) = (a.shape(), b.shape());
            if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
                return Err(shape_err(
                    op,
                    format!("cannot multiply {as_:?} by {bs:?}"),
                ));
            }
            let (m, k, n) = (as_[0], as_[1], bs[1]);
            let mut y = vec![T::zero(); m * n];
            T::gemm(m, k, n, a.data(), false, b.data(), false, T::zero(), &mut y);
            plain(Tensor::from_parts(vec![m, n], y))
        }
        Primitive::Conv1d { stride } | Primitive::Conv2d { stride } => {
            let two_d = matches!(prim, Primitive::Conv2d { .. });
            let (x, w, b) = (inputs[0], inputs[1], inputs.get(2).copied());
            let g = conv_geometry(op, two_d, *stride, x, w, b)?;
            let shape = if two_d {
                vec![g.batch, g.filters, g.out_h, g.out_w]
            } else {
                vec![g.batch, g.filters, g.out_w]
            };
            Ok(conv_forward(&g, shape, x, w, b))
        }
        Primitive::AvgPool1d { kernel, stride } | Primitive::AvgPool2d { kernel, stride } => {
            let two_d = matches!(prim, Primitive::AvgPool2d { .. });
            let x = inputs[0];
            let (planes, in_h, in_w, out_h, out_w) =
                pool_geometry(op, two_d, *kernel, *stride, x)?;
            let k_h = if two_d { *kernel } else { 1 };
            let scale = T::one() / T::of((k_h * kernel) as f64);
            let mut y = vec![T::zero(); planes * out_h * out_w];
            let xd = x.data();
            for p in 0..planes {
                let src = &xd[p * in_h * in_w..(p + 1) * in_h * in_w];
                for oh in 0..out_h {
                    for ow in 0..out_w {
                        let mut acc = T::zero();
                        for i in 0..k_h {
                            let r = (oh * stride + i) * in_w + ow * stride;
                            acc += src[r..r + kernel].iter().copied().sum::<T>();
                        }
                        y[(p * out_h + oh) * out_w + ow] = acc * scale;
                    }
                }
            }
            let xs = x.shape();
            let shape = if two_d {
                vec![xs[0], xs[1], out_h, out_w]
            } else {
                vec![xs[0], xs[1], out_w]
            };
            plain(Tensor::from_parts(shape, y))
        }
        Primitive::LeakyRelu { slope } => {
            let s = T::of(*slope);
            plain(inputs[0].map(|v| if v > T::zero() { v } else { s * v }))
        }
        Primitive::Tanh => plain(inputs[0].map(T::tanh)),
        Primitive::Softmax | Primitive::LogSoftmax => {
            let x = inputs[0];
            let (rows, n) = rows_of(x.shape());
            let mut y = x.data().to_vec();
            for r in 0..rows {
                let row = &mut y[r * n..(r + 1) * n];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                if matches!(prim, Primitive::Softmax) {
                    for v in row.iter_mut() {
                        *v /= total;
                    }
                } else {
                    let lse = max + total.ln();
                    for (v, &orig) in row.iter_mut().zip(&x.data()[r * n..(r + 1) * n]) {
                        *v = orig - lse;
                    }
                }
            }
            plain(Tensor::from_parts(x.shape().to_vec(), y))
        }
        Primitive::Dropout { rate, train } => {
            let x = inputs[0];
            if !*train || *rate == 0.0 {
                return plain(x.clone());
            }
            let rng = rng.ok_or(AutogradError::MissingDropoutRng)?;
            let keep = 1.0 - rate;
            let scale = T::of(1.0 / keep);
            let mask: Vec<T> = (0..x.numel())
                .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                .collect();
            let y = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            Ok((Tensor::from_parts(x.shape().to_vec(), y), Saved::Mask(mask)))
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            same_shape(op, a, b)?;
            let f = match prim {
                Primitive::Add => |x: T, y: T| x + y,
                Primitive::Sub => |x: T, y: T| x - y,
                _ => |x: T, y: T| x * y,
            };
            let y = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            plain(Tensor::from_parts(a.shape().to_vec(), y))
        }
        Primitive::Scale { factor } => {
            let c = T::of(*factor);
            plain(inputs[0].map(|v| v * c))
        }
        Primitive::Sum => plain(Tensor::scalar(inputs[0].data().iter().copied().sum())),
        Primitive::Mean => {
            let x = inputs[0];
            plain(Tensor::scalar(
                x.data().iter().copied().sum::<T>() / T::of(x.numel() as f64),
            ))
        }
        Primitive::L2Norm => plain(Tensor::scalar(inputs[0].l2_norm())),
        Primitive::Reshape { shape } => {
            let x = inputs[0];
            let numel: usize = shape.iter().product();
            if numel != x.numel() {
                return Err(shape_err(
                    op,
                    format!("cannot view {:?} as {shape:?}", x.shape()),
                ));
            }
            plain(Tensor::from_parts(shape.clone(), x.data().to_vec()))
        }
        Primitive::KlDivergence => {
            let (p, q) = (inputs[0], inputs[1]);
            same_shape(op, p, q)?;
            check_distribution("p", p)?;
            check_distribution("q", q)?;
            let eps = T::of(KL_EPSILON);
            let mut kl = T::zero();
            for (&pi, &qi) in p.data().iter().zip(q.data()) {
                if pi > T::zero() {
                    kl += pi * (pi.ln() - qi.max(eps).ln());
                }
            }
            plain(Tensor::scalar(kl))
        }
    }
}

/// Vector-Jacobian products. `needs[i]` tells whether operand `i` wants a
/// gradient; entries for operands that do not are `None`.
pub(crate) fn backward<T: Real>(
    prim: &Primitive,
    inputs: &[&Tensor<T>],
    output: &Tensor<T>,
    saved: &Saved<T>,
    dy: &Tensor<T>,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    match prim {
        Primitive::Linear => {
            let (x, w) = (inputs[0], inputs[1]);
            let (batch, fan_in, fan_out) = (x.shape()[0], x.shape()[1], w.shape()[0]);
            let dx = needs[0].then(|| {
                let mut d = vec![T::zero(); batch * fan_in];
                T::gemm(batch, fan_out, fan_in, dy.data(), false, w.data(), false, T::zero(), &mut d);
                Tensor::from_parts(x.shape().to_vec(), d)
            });
            let dw = needs[1].then(|| {
                let mut d = vec![T::zero(); fan_out * fan_in];
                T::gemm(fan_out, batch, fan_in, dy.data(), true, x.data(), false, T::zero(), &mut d);
                Tensor::from_parts(w.shape().to_vec(), d)
            });
            let mut out = vec![dx, dw];
            if inputs.len() == 3 {
                out.push(needs[2].then(|| {
                    let mut d = vec![T::zero(); fan_out];
                    for row in dy.data().chunks(fan_out) {
                        for (a, &g) in d.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                    Tensor::from_parts(vec![fan_out], d)
                }));
            }
            out
        }
        Primitive::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let da = needs[0].then(|| {
                let mut d = vec![T::zero(); m * k];
                T::gemm(m, n, k, dy.data(), false, b.data(), true, T::zero(), &mut d);
                Tensor::from_parts(a.shape().to_vec(), d)
            });
            let db = needs[1].then(|| {
                let mut d = vec![T::zero(); k * n];
                T::gemm(k, m, n, a.data(), true, dy.data(), false, T::zero(), &mut d);
                Tensor::from_parts(b.shape().to_vec(), d)
            });
            vec![da, db]
        }
        Primitive::Conv1d { stride } | Primitive::Conv2d { stride } => {
            let two_d = matches!(prim, Primitive::Conv2d { .. });
            let (x, w, b) = (inputs[0], inputs[1], inputs.get(2).copied());
            let g = conv_geometry(prim.name(), two_d, *stride, x, w, b)
                .expect("geometry validated in forward");
            let Saved::Columns(cols) = saved else {
                unreachable!("convolution saves its columns")
            };
            conv_backward(&g, x, w, b.is_some(), cols, dy, needs)
        }
        Primitive::AvgPool1d { kernel, stride } | Primitive::AvgPool2d { kernel, stride } => {
            let two_d = matches!(prim, Primitive::AvgPool2d { .. });
            let x = inputs[0];
            let (planes, in_h, in_w, out_h, out_w) =
                pool_geometry(prim.name(), two_d, *kernel, *stride, x)
                    .expect("geometry validated in forward");
            let k_h = if two_d { *kernel } else { 1 };
            let scale = T::one() / T::of((k_h * kernel) as f64);
            let mut dx = vec![T::zero(); x.numel()];
            let dyd = dy.data();
            for p in 0..planes {
                let dst = &mut dx[p * in_h * in_w..(p + 1) * in_h * in_w];
                for oh in 0..out_h {
                    for ow in 0..out_w {
                        let g = dyd[(p * out_h + oh) * out_w + ow] * scale;
                        for i in 0..k_h {
                            let r = (oh * stride + i) * in_w + ow * stride;
                            for v in &mut dst[r..r + kernel] {
                                *v += g;
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(x.shape().to_vec(), dx))]
        }
        Primitive::LeakyRelu { slope } => {
            let s = T::of(*slope);
            let d = inputs[0]
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&x, &g)| if x > T::zero() { g } else { s * g })
                .collect();
            vec![Some(Tensor::from_parts(dy.shape().to_vec(), d))]
        }
        Primitive::Tanh => {
            let d = output
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&y, &g)| g * (T::one() - y * y))
                .collect();
            vec![Some(Tensor::from_parts(dy.shape().to_vec(), d))]
        }
        Primitive::Softmax => {
            let (rows, n) = rows_of(output.shape());
            let mut d = vec![T::zero(); output.numel()];
            for r in 0..rows {
                let y = &output.data()[r * n..(r + 1) * n];
                let g = &dy.data()[r * n..(r + 1) * n];
                let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                for i in 0..n {
                    d[r * n + i] = y[i] * (g[i] - dot);
                }
            }
            vec![Some(Tensor::from_parts(output.shape().to_vec(), d))]
        }
        Primitive::LogSoftmax => {
            let (rows, n) = rows_of(output.shape());
            let mut d = vec![T::zero(); output.numel()];
            for r in 0..rows {
                let y = &output.data()[r * n..(r + 1) * n];
                let g = &dy.data()[r * n..(r + 1) * n];
                let total: T = g.iter().copied().sum();
                for i in 0..n {
                    d[r * n + i] = g[i] - y[i].exp() * total;
                }
            }
            vec![Some(Tensor::from_parts(output.shape().to_vec(), d))]
        }
        Primitive::Dropout { .. } => match saved {
            Saved::Mask(mask) => {
                let d = dy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                vec![Some(Tensor::from_parts(dy.shape().to_vec(), d))]
            }
            _ => vec![Some(dy.clone())],
        },
        Primitive::Add => vec![needs[0].then(|| dy.clone()), needs[1].then(|| dy.clone())],
        Primitive::Sub => vec![needs[0].then(|| dy.clone()), needs[1].then(|| dy.map(|g| -g))],
        Primitive::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let prod = |o: &Tensor<T>| {
                let d = dy.data().iter().zip(o.data()).map(|(&g, &v)| g * v).collect();
                Tensor::from_parts(dy.shape().to_vec(), d)
            };
            vec![needs[0].then(|| prod(b)), needs[1].then(|| prod(a))]
        }
        Primitive::Scale { factor } => {
            let c = T::of(*factor);
            vec![Some(dy.map(|g| g * c))]
        }
        Primitive::Sum => vec![Some(Tensor::full(inputs[0].shape(), dy.item()))],
        Primitive::Mean => {
            let x = inputs[0];
            vec![Some(Tensor::full(x.shape(), dy.item() / T::of(x.numel() as f64)))]
        }
        Primitive::L2Norm => {
            let x = inputs[0];
            let norm = output.item();
            if norm == T::zero() {
                vec![Some(Tensor::zeros(x.shape()))]
            } else {
                let g = dy.item() / norm;
                vec![Some(x.map(|v| v * g))]
            }
        }
        Primitive::Reshape { .. } => {
            vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), dy.data().to_vec()))]
        }
        Primitive::KlDivergence => {
            let (p, q) = (inputs[0], inputs[1]);
            let g = dy.item();
            let eps = T::of(KL_EPSILON);
            let dp = needs[0].then(|| {
                let d = p
                    .data()
                    .iter()
                    .zip(q.data())
                    .map(|(&pi, &qi)| {
                        if pi > T::zero() {
                            g * (pi.ln() - qi.max(eps).ln() + T::one())
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                Tensor::from_parts(p.shape().to_vec(), d)
            });
            let dq = needs[1].then(|| {
                let d = p
                    .data()
                    .iter()
                    .zip(q.data())
                    .map(|(&pi, &qi)| if qi >= eps { -g * pi / qi } else { T::zero() })
                    .collect();
                Tensor::from_parts(q.shape().to_vec(), d)
            });
            vec![dp, dq]
        }
    }
}
