use super::Tensor;
use crate::error::{Error, Result};

/// Argmax positions from a 2×2 max-pool forward pass, as flat indices into
/// the pooled input.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRecord {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolRecord {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Non-overlapping 2×2 max pooling. Ties go to the lowest flat index.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, PoolRecord)> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 {
        return Err(Error::OddExtent { axis: 1, extent: h });
    }
    if w % 2 != 0 {
        return Err(Error::OddExtent { axis: 2, extent: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let top = base + 2 * y * w + 2 * xo;
                // row-major scan with strict `>` keeps the lowest index on ties
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![c, oh, ow], out)?,
        PoolRecord {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each `grad_out` element to its recorded argmax; zeros elsewhere.
pub fn maxpool2x2_backward(record: &PoolRecord, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != record.argmax.len() || grad_out.rank() != 3 {
        return Err(Error::Shape(format!(
            "grad_out shape {:?} does not match pooled output of {:?}",
            grad_out.shape(),
            record.input_shape
        )));
    }
    let mut grad_in = Tensor::zeros(record.input_shape.clone())?;
    let dst = grad_in.data_mut();
    for (&idx, &g) in record.argmax.iter().zip(grad_out.data()) {
        dst[idx] += g;
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, rec) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(rec.argmax(), &[3]);
    }

    #[test]
    fn ties_route_to_lowest_index() {
        let x = Tensor::full(vec![2, 4, 4], 7.0).unwrap();
        let (y, rec) = maxpool2x2_forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        let g = Tensor::full(vec![2, 2, 2], 1.0).unwrap();
        let gi = maxpool2x2_backward(&rec, &g).unwrap();
        for c in 0..2 {
            for yy in 0..4 {
                for xx in 0..4 {
                    let expect = if yy % 2 == 0 && xx % 2 == 0 { 1.0 } else { 0.0 };
                    assert_eq!(gi.at3(c, yy, xx), expect);
                }
            }
        }
    }

    #[test]
    fn odd_extent_rejected() {
        let x = Tensor::zeros(vec![1, 3, 4]).unwrap();
        assert!(matches!(
            maxpool2x2_forward(&x),
            Err(Error::OddExtent { axis: 1, extent: 3 })
        ));
        let x = Tensor::zeros(vec![1, 4, 5]).unwrap();
        assert!(matches!(
            maxpool2x2_forward(&x),
            Err(Error::OddExtent { axis: 2, extent: 5 })
        ));
    }
}
