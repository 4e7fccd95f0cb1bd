//! Independent f64 reference implementations used as test oracles. Nothing
//! here calls into the engine's layer code; the engine is only used to read
//! parameters and to generate seeded data.

#![allow(dead_code)]

use discdream::arch::{LayerName, TapSet};
use discdream::dream::NormMode;
use discdream::rng::SeededStream;
use discdream::{DiscriminatorGraph, Tensor};
use std::collections::HashMap;

/// Dense NCHW array in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Arr {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        assert_eq!(s.len(), 4, "expected NCHW");
        Self {
            n: s[0],
            c: s[1],
            h: s[2],
            w: s[3],
            data: t.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn with_data(&self, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), self.data.len());
        Self { data, ..*self }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            vec![self.n, self.c, self.h, self.w],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .unwrap()
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let (cc, h, w) = (self.c, self.h, self.w);
        &mut self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Uniform values in `[-scale, scale)`.
pub fn seeded_vec(seed: u64, len: usize, scale: f64) -> Vec<f64> {
    let mut rng = SeededStream::new(seed);
    (0..len)
        .map(|_| f64::from(rng.uniform_symmetric()) * scale)
        .collect()
}

/// Seeded f32 tensor, exactly representable so f32 and f64 paths see the
/// same inputs.
pub fn seeded_tensor(seed: u64, shape: &[usize], scale: f32) -> Tensor {
    let mut rng = SeededStream::new(seed);
    let len = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..len).map(|_| rng.uniform_symmetric() * scale).collect(),
    )
    .unwrap()
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Direct zero-padded cross-correlation. `w` is `[co, ci, k, k]` flattened.
pub fn conv_ref(
    x: &Arr,
    w: &[f64],
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    b: Option<&[f64]>,
) -> Arr {
    assert_eq!(w.len(), co * x.c * k * k);
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut out = Arr::zeros(x.n, co, oh, ow);
    for n in 0..x.n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for i in 0..x.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                acc += w[((o * x.c + i) * k + ky) * k + kx]
                                    * x.at(n, i, iy as usize, ix as usize);
                            }
                        }
                    }
                    *out.at_mut(n, o, oy, ox) = acc;
                }
            }
        }
    }
    out
}

pub fn lrelu_ref(v: f64) -> f64 {
    (if v >= 0.0 { v } else { 0.2 * v }) * std::f64::consts::SQRT_2
}

/// 4x4 outer-product kernel of `[1, 3, 3, 1] / 8`, zero padding 1, stride 2.
pub fn fir_down_ref(x: &Arr) -> Arr {
    let k = [1.0 / 8.0, 3.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0];
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Arr::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for (a, ka) in k.iter().enumerate() {
                        for (b, kb) in k.iter().enumerate() {
                            let iy = (2 * oy + a) as isize - 1;
                            let ix = (2 * ox + b) as isize - 1;
                            if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                acc += ka * kb * x.at(n, c, iy as usize, ix as usize);
                            }
                        }
                    }
                    *out.at_mut(n, c, oy, ox) = acc;
                }
            }
        }
    }
    out
}

/// Half-pixel-centre bilinear sample position along one axis.
fn bilinear_src(o: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let s = ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, s - i0 as f64)
}

pub fn bilinear_ref(x: &Arr, oh: usize, ow: usize) -> Arr {
    let mut out = Arr::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                let (y0, y1, fy) = bilinear_src(oy, x.h, oh);
                for ox in 0..ow {
                    let (x0, x1, fx) = bilinear_src(ox, x.w, ow);
                    let v = (1.0 - fy)
                        * ((1.0 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1))
                        + fy * ((1.0 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
                    *out.at_mut(n, c, oy, ox) = v;
                }
            }
        }
    }
    out
}

/// Appends the group-averaged standard deviation channel. Sample `n` shares
/// its statistic with every sample congruent to it modulo `N / G`.
pub fn mbstd_ref(x: &Arr, group: usize) -> Arr {
    let g = group.min(x.n);
    let m = x.n / g;
    let feat: Vec<f64> = (0..m)
        .map(|sub| {
            if g == 1 {
                return 0.0;
            }
            let members: Vec<usize> = (0..x.n).filter(|n| n % m == sub).collect();
            let f = x.c * x.h * x.w;
            let mut total = 0.0;
            for i in 0..f {
                let vals: Vec<f64> = members.iter().map(|&n| x.data[n * f + i]).collect();
                let mean = vals.iter().sum::<f64>() / g as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g as f64;
                total += (var + 1e-8).sqrt();
            }
            total / f as f64
        })
        .collect();
    let mut out = Arr::zeros(x.n, x.c + 1, x.h, x.w);
    for n in 0..x.n {
        for c in 0..=x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    *out.at_mut(n, c, y, xx) = if c < x.c {
                        x.at(n, c, y, xx)
                    } else {
                        feat[n % m]
                    };
                }
            }
        }
    }
    out
}

/// `x: [n, d]` row-major, `w: [o, d]`, result `[n, o]`.
pub fn linear_ref(x: &[f64], n: usize, w: &[f64], o: usize, b: &[f64]) -> Vec<f64> {
    let d = x.len() / n;
    let mut out = vec![0.0; n * o];
    for r in 0..n {
        for j in 0..o {
            out[r * o + j] = b[j] + (0..d).map(|i| x[r * d + i] * w[j * d + i]).sum::<f64>();
        }
    }
    out
}

fn norm_factor(norm: NormMode, elements: usize) -> f64 {
    match norm {
        NormMode::None => 1.0,
        NormMode::Count => 1.0 / elements as f64,
        NormMode::Sqrt => 1.0 / (elements as f64).sqrt(),
    }
}

struct Accum<'a> {
    taps: &'a TapSet,
    norm: NormMode,
    loss: f64,
    remaining: usize,
}

impl Accum<'_> {
    fn record(&mut self, layer: LayerName, a: &[f64]) {
        if let Some(w) = self.taps.weight(layer) {
            let sq: f64 = a.iter().map(|v| v * v).sum();
            self.loss += f64::from(w) * norm_factor(self.norm, a.len()) * sq;
            self.remaining -= 1;
        }
    }
}

/// Dreaming loss of `g` at `x` recomputed from scratch in f64 using the
/// graph's parameter values.
pub fn reference_loss(g: &DiscriminatorGraph, x: &Arr, taps: &TapSet, norm: NormMode) -> f64 {
    let cfg = *g.arch();
    let params: HashMap<String, Vec<f64>> = g
        .parameters()
        .into_iter()
        .map(|(name, t)| (name, to_f64(t)))
        .collect();
    let p = |layer: LayerName, what: &str| params[&format!("{layer}.{what}")].as_slice();
    let mut acc = Accum {
        taps,
        norm,
        loss: 0.0,
        remaining: taps.len(),
    };
    let top = cfg.img_resolution;
    let from = LayerName::FromRgb(top);
    let mut h = conv_ref(
        x,
        p(from, "weight"),
        cfg.channels(top),
        1,
        1,
        0,
        Some(p(from, "bias")),
    )
    .map(lrelu_ref);
    acc.record(from, &h.data);
    for r in cfg.block_resolutions() {
        if acc.remaining == 0 {
            return acc.loss;
        }
        let out = cfg.channels(r / 2);
        let skip = conv_ref(
            &fir_down_ref(&h),
            p(LayerName::Skip(r), "weight"),
            out,
            1,
            1,
            0,
            None,
        );
        acc.record(LayerName::Skip(r), &skip.data);
        let c0l = LayerName::Conv0(r);
        let c0 = conv_ref(
            &h,
            p(c0l, "weight"),
            cfg.channels(r),
            3,
            1,
            1,
            Some(p(c0l, "bias")),
        )
        .map(lrelu_ref);
        acc.record(c0l, &c0.data);
        let c1l = LayerName::Conv1(r);
        let mut c1 = fir_down_ref(&conv_ref(&c0, p(c1l, "weight"), out, 3, 1, 1, None));
        let bias = p(c1l, "bias");
        let plane = c1.h * c1.w;
        for (i, v) in c1.data.iter_mut().enumerate() {
            *v = lrelu_ref(*v + bias[(i / plane) % out]);
        }
        acc.record(c1l, &c1.data);
        let sum: Vec<f64> = skip
            .data
            .iter()
            .zip(&c1.data)
            .map(|(a, b)| (a + b) * std::f64::consts::FRAC_1_SQRT_2)
            .collect();
        h = c1.with_data(sum);
    }
    if acc.remaining == 0 {
        return acc.loss;
    }
    let mb = mbstd_ref(&h, cfg.mbstd_group);
    acc.record(LayerName::Mbstd, &mb.data);
    let c4 = cfg.channels(4);
    let hc = LayerName::HeadConv;
    let conv = conv_ref(&mb, p(hc, "weight"), c4, 3, 1, 1, Some(p(hc, "bias"))).map(lrelu_ref);
    acc.record(hc, &conv.data);
    let n = conv.n;
    let fc: Vec<f64> = linear_ref(
        &conv.data,
        n,
        p(LayerName::Fc, "weight"),
        cfg.latent_dim,
        p(LayerName::Fc, "bias"),
    )
    .into_iter()
    .map(lrelu_ref)
    .collect();
    acc.record(LayerName::Fc, &fc);
    let out = linear_ref(
        &fc,
        n,
        p(LayerName::Out, "weight"),
        1,
        p(LayerName::Out, "bias"),
    );
    acc.record(LayerName::Out, &out);
    acc.loss
}
