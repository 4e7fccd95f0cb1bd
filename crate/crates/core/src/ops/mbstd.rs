//! Minibatch standard deviation: appends one feature channel holding the
//! per-group average standard deviation.
//!
//! Samples are grouped the same way the reference discriminator reshapes
//! its batch: with `M = N / G`, sample `n` belongs to subgroup `n % M` and
//! the `G` members of a subgroup share one statistic.

use crate::tensor::{Result, Tensor, TensorError};

pub const MBSTD_EPS: f32 = 1e-8;

fn group_layout(op: &'static str, n: usize, group_size: usize) -> Result<(usize, usize)> {
    if group_size == 0 {
        return Err(TensorError::Argument {
            op,
            msg: "group size must be at least 1".into(),
        });
    }
    let g = group_size.min(n);
    if !n.is_multiple_of(g) {
        return Err(TensorError::Dimension {
            op,
            axis: "batch",
            expected: g * n.div_ceil(g),
            got: n,
        });
    }
    Ok((g, n / g))
}

/// Per-subgroup deviations and standard deviations, `[M, C*H*W]` each.
struct Stats {
    centered: Vec<f32>,
    sigma: Vec<f32>,
}

fn stats(x: &[f32], g: usize, m: usize, f: usize) -> Stats {
    let mut centered = vec![0.0f32; g * m * f];
    let mut sigma = vec![0.0f32; m * f];
    for sub in 0..m {
        for i in 0..f {
            let mean = (0..g).map(|k| x[(k * m + sub) * f + i]).sum::<f32>() / g as f32;
            let mut var = 0.0f32;
            for k in 0..g {
                let d = x[(k * m + sub) * f + i] - mean;
                centered[(k * m + sub) * f + i] = d;
                var += d * d;
            }
            sigma[sub * f + i] = (var / g as f32 + MBSTD_EPS).sqrt();
        }
    }
    Stats { centered, sigma }
}

/// `[N, C, H, W] -> [N, C + 1, H, W]`. A group of one sample carries no
/// spread, so the appended channel is exactly zero in that case.
pub fn minibatch_stddev(x: &Tensor, group_size: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("minibatch_stddev")?;
    let (g, m) = group_layout("minibatch_stddev", n, group_size)?;
    let f = c * h * w;
    let hw = h * w;
    let feature: Vec<f32> = if g == 1 {
        vec![0.0; m]
    } else {
        let s = stats(x.data(), g, m, f);
        s.sigma
            .chunks_exact(f)
            .map(|row| row.iter().sum::<f32>() / f as f32)
            .collect()
    };
    let mut out = Vec::with_capacity(n * (c + 1) * hw);
    for (idx, sample) in x.data().chunks_exact(f).enumerate() {
        out.extend_from_slice(sample);
        out.extend(std::iter::repeat_n(feature[idx % m], hw));
    }
    Tensor::from_vec(vec![n, c + 1, h, w], out)
}

pub fn minibatch_stddev_grad(dy: &Tensor, x_saved: &Tensor, group_size: usize) -> Result<Tensor> {
    let (n, c, h, w) = x_saved.dims4("minibatch_stddev_grad")?;
    let expect = [n, c + 1, h, w];
    if dy.shape() != expect {
        return Err(TensorError::Argument {
            op: "minibatch_stddev_grad",
            msg: format!("dy shape {:?}, expected {expect:?}", dy.shape()),
        });
    }
    let (g, m) = group_layout("minibatch_stddev_grad", n, group_size)?;
    let f = c * h * w;
    let hw = h * w;
    let mut dx = Vec::with_capacity(n * f);
    for sample in dy.data().chunks_exact((c + 1) * hw) {
        dx.extend_from_slice(&sample[..f]);
    }
    if g == 1 {
        return Tensor::from_vec(vec![n, c, h, w], dx);
    }

    // d feature[sub] summed over every broadcast position of every member.
    let mut dfeat = vec![0.0f32; m];
    for (idx, sample) in dy.data().chunks_exact((c + 1) * hw).enumerate() {
        dfeat[idx % m] += sample[f..].iter().sum::<f32>();
    }
    let s = stats(x_saved.data(), g, m, f);
    // feature = mean_i sigma_i ; d sigma_i / d x_k = centered_k / (G sigma_i)
    let scale = 1.0 / (g as f32 * f as f32);
    for k in 0..g {
        for (sub, &df) in dfeat.iter().enumerate() {
            let row = (k * m + sub) * f;
            for i in 0..f {
                dx[row + i] += df * scale * s.centered[row + i] / s.sigma[sub * f + i];
            }
        }
    }
    Tensor::from_vec(vec![n, c, h, w], dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_appends_zeros() {
        let x = Tensor::from_vec(vec![1, 2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let y = minibatch_stddev(&x, 4).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 2]);
        assert_eq!(&y.data()[..8], x.data());
        assert!(y.data()[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pass_through_when_stat_channel_unused() {
        let x = Tensor::from_vec(vec![2, 1, 1, 2], vec![0.1, 0.2, -0.4, 0.9]).unwrap();
        let mut dy = Tensor::zeros(&[2, 2, 1, 2]);
        dy.data_mut()[..2].copy_from_slice(&[1.0, 2.0]);
        dy.data_mut()[4..6].copy_from_slice(&[3.0, 4.0]);
        let dx = minibatch_stddev_grad(&dy, &x, 2).unwrap();
        assert_eq!(dx.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn known_pair() {
        // Two samples, one feature each: values 1 and 3 -> sigma = 1.
        let x = Tensor::from_vec(vec![2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let y = minibatch_stddev(&x, 2).unwrap();
        assert!((y.data()[1] - 1.0).abs() < 1e-6);
        assert!((y.data()[3] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn indivisible_batch_rejected() {
        let x = Tensor::zeros(&[6, 1, 1, 1]);
        assert!(minibatch_stddev(&x, 4).is_err());
        assert!(minibatch_stddev(&x, 0).is_err());
    }
}
