use super::{conv_pad, ActivationKind, Conv2d, Dense, Layer, ParamGrad};
use crate::tensor::Tensor;

pub(super) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(super) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(super) fn forward(layer: &Layer, x: &Tensor) -> Tensor {
    match layer {
        Layer::Dense(d) => dense_forward(d, x),
        Layer::Conv2d(c) => conv_forward(c, x),
        Layer::Activation(ActivationKind::Relu) => x.map(|v| v.max(0.0)),
        Layer::Activation(ActivationKind::Softplus) => x.map(softplus),
        Layer::Flatten => x.clone().reshape(vec![x.len()]).expect("flatten"),
    }
}

/// Returns the gradient with respect to the layer input (zeros when
/// `need_input` is false) and, when requested, the parameter gradient.
pub(super) fn backward(
    layer: &Layer,
    x: &Tensor,
    g: &Tensor,
    with_params: bool,
    need_input: bool,
) -> (Tensor, Option<ParamGrad>) {
    match layer {
        Layer::Dense(d) => dense_backward(d, x, g, with_params, need_input),
        Layer::Conv2d(c) => conv_backward(c, x, g, with_params, need_input),
        Layer::Activation(ActivationKind::Relu) => (
            x.zip_map(g, |v, gv| if v > 0.0 { gv } else { 0.0 })
                .expect("relu grad shape"),
            None,
        ),
        Layer::Activation(ActivationKind::Softplus) => (
            x.zip_map(g, |v, gv| sigmoid(v) * gv).expect("softplus grad shape"),
            None,
        ),
        Layer::Flatten => (
            g.clone().reshape(x.shape().to_vec()).expect("unflatten"),
            None,
        ),
    }
}

fn dense_forward(d: &Dense, x: &Tensor) -> Tensor {
    let (out, inp) = (d.weights.shape()[0], d.weights.shape()[1]);
    let w = d.weights.data();
    let xs = x.data();
    let y = (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            d.bias.data()[o] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Tensor::vector(y)
}

fn dense_backward(
    d: &Dense,
    x: &Tensor,
    g: &Tensor,
    with_params: bool,
    need_input: bool,
) -> (Tensor, Option<ParamGrad>) {
    let (out, inp) = (d.weights.shape()[0], d.weights.shape()[1]);
    let w = d.weights.data();
    let gs = g.data();
    let xs = x.data();
    let mut gx = vec![0.0; inp];
    for o in 0..out {
        let go = gs[o];
        if go == 0.0 || !need_input {
            continue;
        }
        let row = &w[o * inp..(o + 1) * inp];
        for (acc, &wv) in gx.iter_mut().zip(row) {
            *acc += go * wv;
        }
    }
    let pg = with_params.then(|| {
        let mut gw = vec![0.0; out * inp];
        for o in 0..out {
            let go = gs[o];
            for (acc, &xv) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xs) {
                *acc = go * xv;
            }
        }
        ParamGrad {
            weights: Tensor::new(vec![out, inp], gw).expect("dense grad"),
            bias: Tensor::vector(gs.to_vec()),
        }
    });
    (Tensor::vector(gx), pg)
}

struct ConvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(c: &Conv2d, x: &Tensor) -> Self {
        let ks = c.kernels.shape();
        let (cout, cin, k) = (ks[0], ks[1], ks[2]);
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let pad = conv_pad(k, c.padding);
        let ho = (h + 2 * pad - k) / c.stride + 1;
        let wo = (w + 2 * pad - k) / c.stride + 1;
        Self {
            cin,
            cout,
            k,
            stride: c.stride,
            pad,
            h,
            w,
            ho,
            wo,
        }
    }

    /// Valid kernel taps along one axis for output position `o`: taps
    /// `t0..t1` read input positions starting at `i0`.
    fn span(&self, o: usize, len: usize) -> (usize, usize, usize) {
        let start = o * self.stride;
        let t0 = self.pad.saturating_sub(start);
        let t1 = self.k.min((len + self.pad).saturating_sub(start));
        (t0, t1.max(t0), start + t0 - self.pad)
    }
}

fn conv_forward(c: &Conv2d, x: &Tensor) -> Tensor {
    let g = ConvGeom::new(c, x);
    let kd = c.kernels.data();
    let xd = x.data();
    let mut out = vec![0.0; g.cout * g.ho * g.wo];
    let xs: Vec<_> = (0..g.wo).map(|ox| g.span(ox, g.w)).collect();
    for oc in 0..g.cout {
        let b = c.bias.data()[oc];
        for oy in 0..g.ho {
            let (ty0, ty1, iy0) = g.span(oy, g.h);
            for (ox, &(tx0, tx1, ix0)) in xs.iter().enumerate() {
                let n = tx1 - tx0;
                let mut s = b;
                for ic in 0..g.cin {
                    let kbase = (oc * g.cin + ic) * g.k * g.k;
                    let xbase = ic * g.h * g.w;
                    for t in 0..ty1 - ty0 {
                        let kr = &kd[kbase + (ty0 + t) * g.k + tx0..][..n];
                        let xr = &xd[xbase + (iy0 + t) * g.w + ix0..][..n];
                        s += kr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                out[(oc * g.ho + oy) * g.wo + ox] = s;
            }
        }
    }
    Tensor::new(vec![g.cout, g.ho, g.wo], out).expect("conv output")
}

fn conv_backward(
    c: &Conv2d,
    x: &Tensor,
    grad: &Tensor,
    with_params: bool,
    need_input: bool,
) -> (Tensor, Option<ParamGrad>) {
    let g = ConvGeom::new(c, x);
    let kd = c.kernels.data();
    let xd = x.data();
    let gd = grad.data();
    let mut gx = vec![0.0; xd.len()];
    let mut gk = if with_params { vec![0.0; kd.len()] } else { Vec::new() };
    let mut gb = if with_params { vec![0.0; g.cout] } else { Vec::new() };
    let xs: Vec<_> = (0..g.wo).map(|ox| g.span(ox, g.w)).collect();
    for oc in 0..g.cout {
        for oy in 0..g.ho {
            let (ty0, ty1, iy0) = g.span(oy, g.h);
            for (ox, &(tx0, tx1, ix0)) in xs.iter().enumerate() {
                let go = gd[(oc * g.ho + oy) * g.wo + ox];
                if go == 0.0 {
                    continue;
                }
                if with_params {
                    gb[oc] += go;
                }
                let n = tx1 - tx0;
                for ic in 0..g.cin {
                    let kbase = (oc * g.cin + ic) * g.k * g.k;
                    let xbase = ic * g.h * g.w;
                    for t in 0..ty1 - ty0 {
                        let ko = kbase + (ty0 + t) * g.k + tx0;
                        let xo = xbase + (iy0 + t) * g.w + ix0;
                        if need_input {
                            for (d, k) in gx[xo..xo + n].iter_mut().zip(&kd[ko..ko + n]) {
                                *d += go * k;
                            }
                        }
                        if with_params {
                            for (d, v) in gk[ko..ko + n].iter_mut().zip(&xd[xo..xo + n]) {
                                *d += go * v;
                            }
                        }
                    }
                }
            }
        }
    }
    let pg = with_params.then(|| ParamGrad {
        weights: Tensor::new(c.kernels.shape().to_vec(), gk).expect("kernel grad"),
        bias: Tensor::vector(gb),
    });
    (
        Tensor::new(x.shape().to_vec(), gx).expect("conv input grad"),
        pg,
    )
}
