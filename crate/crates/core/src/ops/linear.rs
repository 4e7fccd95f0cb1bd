use crate::ops::Activation;
use crate::tensor::{Result, Tensor, TensorError};

fn check(op: &'static str, x_dim: usize, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize)> {
    let (o, d) = w.dims2(op)?;
    if x_dim != d {
        return Err(TensorError::Dimension {
            op,
            axis: "features",
            expected: d,
            got: x_dim,
        });
    }
    if let Some(b) = b {
        if b.shape() != [o] {
            return Err(TensorError::Dimension {
                op,
                axis: "bias",
                expected: o,
                got: b.len(),
            });
        }
    }
    Ok((o, d))
}

/// Pre-activation `x W^T + b` for `x: [N, D]`, `w: [O, D]`.
pub fn linear_preact(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, dx) = x.dims2("linear_forward")?;
    let (o, d) = check("linear_forward", dx, w, Some(b))?;
    let mut out = Vec::with_capacity(n * o);
    for row in x.data().chunks_exact(d) {
        for (wr, &bias) in w.data().chunks_exact(d).zip(b.data()) {
            let dot: f32 = row.iter().zip(wr).map(|(a, b)| a * b).sum();
            out.push(dot + bias);
        }
    }
    Tensor::from_vec(vec![n, o], out)
}

/// `act(x W^T + b) * gain`.
pub fn linear_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    activation: Activation,
    gain: f32,
) -> Result<Tensor> {
    Ok(activation.forward(&linear_preact(x, w, b)?, gain))
}

/// Input gradient of [`linear_forward`]; `pre` is the saved pre-activation.
pub fn linear_input_grad(
    dy: &Tensor,
    pre: &Tensor,
    w: &Tensor,
    activation: Activation,
    gain: f32,
) -> Result<Tensor> {
    let (n, o) = dy.dims2("linear_input_grad")?;
    let (wo, d) = w.dims2("linear_input_grad")?;
    if o != wo {
        return Err(TensorError::Dimension {
            op: "linear_input_grad",
            axis: "outputs",
            expected: wo,
            got: o,
        });
    }
    let dpre = activation.backward(dy, pre, gain)?;
    let mut dx = vec![0.0f32; n * d];
    for (g_row, dx_row) in dpre.data().chunks_exact(o).zip(dx.chunks_exact_mut(d)) {
        for (&g, wr) in g_row.iter().zip(w.data().chunks_exact(d)) {
            if g != 0.0 {
                dx_row
                    .iter_mut()
                    .zip(wr)
                    .for_each(|(acc, &wv)| *acc += g * wv);
            }
        }
    }
    Tensor::from_vec(vec![n, d], dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let x = Tensor::from_vec(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let w = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]);
        let y = linear_forward(&x, &w, &b, Activation::Linear, 1.0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn bias_only() {
        let x = Tensor::zeros(&[3, 4]);
        let w = Tensor::full(&[2, 4], 0.3);
        let b = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let y = linear_forward(&x, &w, &b, Activation::Linear, 1.0).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[1.0, 2.0]);
        }
    }

    #[test]
    fn feature_mismatch() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 4]);
        let b = Tensor::zeros(&[2]);
        let err = linear_preact(&x, &w, &b).unwrap_err();
        assert!(matches!(
            err,
            TensorError::Dimension {
                axis: "features",
                ..
            }
        ));
    }
}
