//! 2-D cross-correlation and its input gradient.
//!
//! Both directions go through an im2col buffer and a single-precision GEMM.
//! The buffer is built a band of output rows at a time so peak memory stays
//! bounded at high resolutions.

use serde::{Deserialize, Serialize};

use crate::ops::Activation;
use crate::tensor::{Result, Tensor, TensorError};

/// Upper bound on the im2col band, in elements.
const COLUMN_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub has_bias: bool,
    pub activation: Activation,
    /// Multiplier applied after the activation.
    pub gain: f32,
}

impl ConvSpec {
    /// Same-padded convolution (`padding = kernel / 2`).
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let spec = Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            has_bias: true,
            activation: Activation::Linear,
            gain: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn with_activation(mut self, activation: Activation, gain: f32) -> Self {
        self.activation = activation;
        self.gain = gain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(TensorError::Argument {
                op: "ConvSpec",
                msg,
            })
        };
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if !matches!(self.kernel, 1 | 3) {
            return bad(format!("kernel must be 1 or 3, got {}", self.kernel));
        }
        if !matches!(self.stride, 1 | 2) {
            return bad(format!("stride must be 1 or 2, got {}", self.stride));
        }
        if self.padding != self.kernel / 2 {
            return bad(format!(
                "padding must be kernel/2 = {}, got {}",
                self.kernel / 2,
                self.padding
            ));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Output spatial extent for an input extent along one axis.
    pub fn output_extent(&self, input: usize, axis: &'static str) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return Err(TensorError::Dimension {
                op: "conv2d",
                axis,
                expected: self.kernel.saturating_sub(2 * self.padding),
                got: input,
            });
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

fn check_weight(w: &Tensor, spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    let (co, ci, kh, kw) = w.dims4("conv2d weight")?;
    let expect = spec.weight_shape();
    for (axis, got, want) in [
        ("out_channels", co, expect[0]),
        ("in_channels", ci, expect[1]),
        ("kernel_h", kh, expect[2]),
        ("kernel_w", kw, expect[3]),
    ] {
        if got != want {
            return Err(TensorError::Dimension {
                op: "conv2d weight",
                axis,
                expected: want,
                got,
            });
        }
    }
    Ok(())
}

/// Geometry of one im2col band: output rows `[row0, row0 + rows)`.
struct Geometry {
    ci: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn rows_per_band(&self) -> usize {
        let per_row = self.ci * self.k * self.k * self.ow;
        (COLUMN_BUDGET / per_row.max(1)).clamp(1, self.oh)
    }

    /// Fills `cols` (`K x rows*ow`) from one input sample.
    fn im2col(&self, x: &[f32], row0: usize, rows: usize, cols: &mut [f32]) {
        let p = rows * self.ow;
        let k = self.k;
        for c in 0..self.ci {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                    for r in 0..rows {
                        let iy = ((row0 + r) * self.stride + ky) as isize - self.pad as isize;
                        let row = &mut dst[r * self.ow..(r + 1) * self.ow];
                        if iy < 0 || iy as usize >= self.h {
                            row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix as usize >= self.w {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into one input-gradient sample.
    fn col2im(&self, cols: &[f32], row0: usize, rows: usize, dx: &mut [f32]) {
        let p = rows * self.ow;
        let k = self.k;
        for c in 0..self.ci {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[((c * k + ky) * k + kx) * p..][..p];
                    for r in 0..rows {
                        let iy = ((row0 + r) * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &g) in src[r * self.ow..(r + 1) * self.ow].iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c[m x n] = a[m x k] * b[k x n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(m == 0 || n == 0 || c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserted extents keep every strided access inside the slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Zero-padded cross-correlation, plus bias when given. The activation named
/// in `spec` is not applied here.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    check_weight(w, spec)?;
    let (n, ci, h, wd) = x.dims4("conv2d_forward")?;
    if ci != spec.in_channels {
        return Err(TensorError::Dimension {
            op: "conv2d_forward",
            axis: "channels",
            expected: spec.in_channels,
            got: ci,
        });
    }
    if let Some(b) = b {
        if b.shape() != [spec.out_channels] {
            return Err(TensorError::Dimension {
                op: "conv2d_forward bias",
                axis: "out_channels",
                expected: spec.out_channels,
                got: b.len(),
            });
        }
    }
    let oh = spec.output_extent(h, "height")?;
    let ow = spec.output_extent(wd, "width")?;
    let geo = Geometry {
        ci,
        h,
        w: wd,
        oh,
        ow,
        k: spec.kernel,
        stride: spec.stride,
        pad: spec.padding,
    };
    let co = spec.out_channels;
    let kdim = spec.fan_in();
    let band = geo.rows_per_band();
    let mut out = vec![0.0f32; n * co * oh * ow];
    let mut cols = vec![0.0f32; kdim * band * ow];

    for s in 0..n {
        let xs = &x.data()[s * ci * h * wd..(s + 1) * ci * h * wd];
        let ys = &mut out[s * co * oh * ow..(s + 1) * co * oh * ow];
        let mut row0 = 0;
        while row0 < oh {
            let rows = band.min(oh - row0);
            let p = rows * ow;
            geo.im2col(xs, row0, rows, &mut cols[..kdim * p]);
            gemm(
                co,
                kdim,
                p,
                w.data(),
                (kdim, 1),
                &cols[..kdim * p],
                (p, 1),
                &mut ys[row0 * ow..],
                (oh * ow, 1),
            );
            row0 += rows;
        }
        if let Some(b) = b {
            for (c, plane) in ys.chunks_exact_mut(oh * ow).enumerate() {
                let bias = b.data()[c];
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }
    }
    Tensor::from_vec(vec![n, co, oh, ow], out)
}

/// Gradient of [`conv2d_forward`] with respect to its input, for an input of
/// spatial size `in_h x in_w`. Equivalent to a full correlation of `dy`
/// (zero-interleaved when strided) with the flipped, channel-transposed
/// kernel; computed here as `W^T dy` followed by col2im.
pub fn conv2d_input_grad(
    dy: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor> {
    check_weight(w, spec)?;
    let (n, co, oh, ow) = dy.dims4("conv2d_input_grad")?;
    let checks = [
        ("channels", spec.out_channels, co),
        ("height", spec.output_extent(in_h, "height")?, oh),
        ("width", spec.output_extent(in_w, "width")?, ow),
    ];
    for (axis, expected, got) in checks {
        if expected != got {
            return Err(TensorError::Dimension {
                op: "conv2d_input_grad",
                axis,
                expected,
                got,
            });
        }
    }
    let ci = spec.in_channels;
    let geo = Geometry {
        ci,
        h: in_h,
        w: in_w,
        oh,
        ow,
        k: spec.kernel,
        stride: spec.stride,
        pad: spec.padding,
    };
    let kdim = spec.fan_in();
    let band = geo.rows_per_band();
    let mut dx = vec![0.0f32; n * ci * in_h * in_w];
    let mut cols = vec![0.0f32; kdim * band * ow];

    for s in 0..n {
        let dys = &dy.data()[s * co * oh * ow..(s + 1) * co * oh * ow];
        let dxs = &mut dx[s * ci * in_h * in_w..(s + 1) * ci * in_h * in_w];
        let mut row0 = 0;
        while row0 < oh {
            let rows = band.min(oh - row0);
            let p = rows * ow;
            // cols[K x p] = W^T[K x Co] * dy[Co x p]
            gemm(
                kdim,
                co,
                p,
                w.data(),
                (1, kdim),
                &dys[row0 * ow..],
                (oh * ow, 1),
                &mut cols[..kdim * p],
                (p, 1),
            );
            geo.col2im(&cols[..kdim * p], row0, rows, dxs);
            row0 += rows;
        }
    }
    Tensor::from_vec(vec![n, ci, in_h, in_w], dx)
}
