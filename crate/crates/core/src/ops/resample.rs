//! Spatial resampling: the ×2 FIR downsampler used between discriminator
//! blocks and align-corners=false bilinear resizing, each with its exact
//! transpose.

use crate::tensor::{Result, Tensor, TensorError};

/// Separable low-pass taps, `[1, 3, 3, 1] / 8` per axis.
pub const FIR_TAPS: [f32; 4] = [0.125, 0.375, 0.375, 0.125];

/// Offset of tap 0 relative to `2 * out_index`.
const FIR_OFFSET: isize = -1;

fn fir_1d_down(src: &[f32], dst: &mut [f32], src_stride: usize, dst_stride: usize, len: usize) {
    for j in 0..len / 2 {
        let mut acc = 0.0f32;
        for (t, &tap) in FIR_TAPS.iter().enumerate() {
            let i = 2 * j as isize + t as isize + FIR_OFFSET;
            if i >= 0 && (i as usize) < len {
                acc += tap * src[i as usize * src_stride];
            }
        }
        dst[j * dst_stride] = acc;
    }
}

fn fir_1d_down_grad(dy: &[f32], dx: &mut [f32], dy_stride: usize, dx_stride: usize, len: usize) {
    for j in 0..len / 2 {
        let g = dy[j * dy_stride];
        for (t, &tap) in FIR_TAPS.iter().enumerate() {
            let i = 2 * j as isize + t as isize + FIR_OFFSET;
            if i >= 0 && (i as usize) < len {
                dx[i as usize * dx_stride] += tap * g;
            }
        }
    }
}

fn check_even(op: &'static str, h: usize, w: usize) -> Result<()> {
    for (axis, v) in [("height", h), ("width", w)] {
        if v < 2 || v % 2 != 0 {
            return Err(TensorError::Dimension {
                op,
                axis,
                expected: if v < 2 { 2 } else { v + 1 },
                got: v,
            });
        }
    }
    Ok(())
}

/// Low-pass filter with zero padding, then keep every second sample.
pub fn fir_downsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("fir_downsample2x")?;
    check_even("fir_downsample2x", h, w)?;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; n * c * oh * ow];
    let mut rows = vec![0.0f32; h * ow];
    for (src, dst) in x
        .data()
        .chunks_exact(h * w)
        .zip(out.chunks_exact_mut(oh * ow))
    {
        for y in 0..h {
            fir_1d_down(&src[y * w..], &mut rows[y * ow..], 1, 1, w);
        }
        for xo in 0..ow {
            fir_1d_down(&rows[xo..], &mut dst[xo..], ow, ow, h);
        }
    }
    Tensor::from_vec(vec![n, c, oh, ow], out)
}

/// Transpose of [`fir_downsample2x`] for an input of size `in_h x in_w`.
pub fn fir_downsample2x_grad(dy: &Tensor, in_h: usize, in_w: usize) -> Result<Tensor> {
    let (n, c, oh, ow) = dy.dims4("fir_downsample2x_grad")?;
    check_even("fir_downsample2x_grad", in_h, in_w)?;
    for (axis, expected, got) in [("height", in_h / 2, oh), ("width", in_w / 2, ow)] {
        if expected != got {
            return Err(TensorError::Dimension {
                op: "fir_downsample2x_grad",
                axis,
                expected,
                got,
            });
        }
    }
    let mut dx = vec![0.0f32; n * c * in_h * in_w];
    let mut rows = vec![0.0f32; in_h * ow];
    for (g, d) in dy
        .data()
        .chunks_exact(oh * ow)
        .zip(dx.chunks_exact_mut(in_h * in_w))
    {
        rows.fill(0.0);
        for xo in 0..ow {
            fir_1d_down_grad(&g[xo..], &mut rows[xo..], ow, ow, in_h);
        }
        for y in 0..in_h {
            fir_1d_down_grad(&rows[y * ow..], &mut d[y * in_w..], 1, 1, in_w);
        }
    }
    Tensor::from_vec(vec![n, c, in_h, in_w], dx)
}

/// Source taps for one output coordinate: `(i0, i1, weight of i1)`.
#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f32,
}

fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i0 == i1 {
                0.0
            } else {
                (src - i0 as f64) as f32
            };
            Tap { i0, i1, frac }
        })
        .collect()
}

fn check_target(op: &'static str, out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::Argument {
            op,
            msg: format!("target size must be positive, got {out_h}x{out_w}"),
        });
    }
    Ok(())
}

/// Bilinear resize with half-pixel centres (align-corners=false) and edge
/// clamping. Unchanged dimensions return the input untouched.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    check_target("bilinear_resize", out_h, out_w)?;
    let (n, c, h, w) = x.dims4("bilinear_resize")?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut out = vec![0.0f32; n * c * out_h * out_w];
    for (src, dst) in x
        .data()
        .chunks_exact(h * w)
        .zip(out.chunks_exact_mut(out_h * out_w))
    {
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.i0 * w..(a.i0 + 1) * w];
            let r1 = &src[a.i1 * w..(a.i1 + 1) * w];
            for (ox, b) in tx.iter().enumerate() {
                let top = r0[b.i0] + (r0[b.i1] - r0[b.i0]) * b.frac;
                let bot = r1[b.i0] + (r1[b.i1] - r1[b.i0]) * b.frac;
                dst[oy * out_w + ox] = top + (bot - top) * a.frac;
            }
        }
    }
    Tensor::from_vec(vec![n, c, out_h, out_w], out)
}

/// Transpose of [`bilinear_resize`]: scatters `dy` back onto an
/// `in_h x in_w` grid with the forward interpolation weights.
pub fn bilinear_resize_grad(dy: &Tensor, in_h: usize, in_w: usize) -> Result<Tensor> {
    check_target("bilinear_resize_grad", in_h, in_w)?;
    let (n, c, oh, ow) = dy.dims4("bilinear_resize_grad")?;
    if (oh, ow) == (in_h, in_w) {
        return Ok(dy.clone());
    }
    let ty = bilinear_taps(in_h, oh);
    let tx = bilinear_taps(in_w, ow);
    let mut dx = vec![0.0f32; n * c * in_h * in_w];
    for (g, d) in dy
        .data()
        .chunks_exact(oh * ow)
        .zip(dx.chunks_exact_mut(in_h * in_w))
    {
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = v * (1.0 - a.frac);
                let bot = v * a.frac;
                d[a.i0 * in_w + b.i0] += top * (1.0 - b.frac);
                d[a.i0 * in_w + b.i1] += top * b.frac;
                d[a.i1 * in_w + b.i0] += bot * (1.0 - b.frac);
                d[a.i1 * in_w + b.i1] += bot * b.frac;
            }
        }
    }
    Tensor::from_vec(vec![n, c, in_h, in_w], dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fir_preserves_constant_in_interior() {
        let x = Tensor::full(&[1, 2, 8, 8], 0.7);
        let y = fir_downsample2x(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 4]);
        for c in 0..2 {
            for i in 1..3 {
                for j in 1..3 {
                    let v = y.data()[c * 16 + i * 4 + j];
                    assert!((v - 0.7).abs() < 1e-6, "{v}");
                }
            }
        }
    }

    #[test]
    fn fir_two_by_two() {
        // Only the two centre taps (3/8 each) land inside a length-2 axis.
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = fir_downsample2x(&x).unwrap();
        let expected = (9.0 / 64.0) * (1.0 + 2.0 + 3.0 + 4.0);
        assert!((y.data()[0] - expected).abs() < 1e-6);
    }

    #[test]
    fn fir_rejects_odd() {
        let x = Tensor::zeros(&[1, 1, 4, 5]);
        let err = fir_downsample2x(&x).unwrap_err();
        assert!(matches!(err, TensorError::Dimension { axis: "width", .. }));
    }

    #[test]
    fn resize_same_dims_is_identity() {
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![0.1, -0.3, 0.5, 1e-7]).unwrap();
        assert_eq!(bilinear_resize(&x, 2, 2).unwrap(), x);
    }

    #[test]
    fn resize_constant() {
        let x = Tensor::full(&[1, 3, 5, 7], -0.25);
        for (h, w) in [(1, 1), (3, 9), (12, 4)] {
            let y = bilinear_resize(&x, h, w).unwrap();
            assert!(y.data().iter().all(|&v| (v + 0.25).abs() < 1e-7));
        }
    }

    #[test]
    fn resize_rejects_zero_target() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(
            bilinear_resize(&x, 0, 2),
            Err(TensorError::Argument { .. })
        ));
    }
}
