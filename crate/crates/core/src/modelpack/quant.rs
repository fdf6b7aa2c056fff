//! Per-tensor affine uint8 quantization.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
    pub scale: f32,
    pub zero_point: i32,
}

/// Rounds half away from zero (`f64::round` semantics, named for the reader).
#[inline]
fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Scale and zero point for a value range. The range is widened to contain
/// zero so the zero point stays inside `[0, 255]`.
pub fn affine_params(min: f32, max: f32) -> (f32, i32) {
    let lo = (min as f64).min(0.0);
    let hi = (max as f64).max(0.0);
    if hi == lo {
        return (1.0, 0);
    }
    let span = hi - lo;
    let mut scale = (span / 255.0) as f32;
    // Never let the f32 scale shrink the representable span below the data.
    while span / scale as f64 > 255.0 {
        scale = f32::from_bits(scale.to_bits() + 1);
    }
    let zp = round_half_away(-lo / scale as f64).clamp(0.0, 255.0) as i32;
    (scale, zp)
}

#[inline]
pub fn quantize_value(x: f32, scale: f32, zero_point: i32) -> u8 {
    (round_half_away(x as f64 / scale as f64) + zero_point as f64).clamp(0.0, 255.0) as u8
}

#[inline]
pub fn dequantize_value(q: u8, scale: f32, zero_point: i32) -> f64 {
    scale as f64 * (q as i32 - zero_point) as f64
}

pub fn quantize_tensor(t: &Tensor) -> Result<QuantizedTensor> {
    quantize_slice(t.shape().to_vec(), t.data())
}

pub(crate) fn quantize_slice(shape: Vec<usize>, data: &[f32]) -> Result<QuantizedTensor> {
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Quantization { index, value: data[index] });
    }
    let min = data.iter().copied().fold(f32::INFINITY, f32::min);
    let max = data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let (scale, zero_point) = affine_params(min, max);
    let q = data.iter().map(|&x| quantize_value(x, scale, zero_point)).collect();
    Ok(QuantizedTensor { shape, data: q, scale, zero_point })
}

pub fn dequantize_tensor(q: &QuantizedTensor) -> Tensor {
    Tensor::from_parts(q.shape.clone(), dequantize_bytes(&q.data, q.scale, q.zero_point))
}

pub(crate) fn dequantize_bytes(data: &[u8], scale: f32, zero_point: i32) -> Vec<f32> {
    data.iter().map(|&v| dequantize_value(v, scale, zero_point) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_map_to_zero_point() {
        let q = quantize_tensor(&Tensor::zeros(vec![4])).unwrap();
        assert_eq!((q.scale, q.zero_point), (1.0, 0));
        assert!(q.data.iter().all(|&v| v as i32 == q.zero_point));
        assert!(dequantize_tensor(&q).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_worked_example() {
        let q = quantize_tensor(&Tensor::vector(vec![-1.0, 0.0, 3.0])).unwrap();
        assert!((q.scale as f64 - 4.0 / 255.0).abs() < 1e-8);
        assert_eq!(q.zero_point, 64);
        assert_eq!(q.data, vec![0, 64, 255]);
        let d = dequantize_tensor(&q);
        assert!((d.data()[0] + 1.0039).abs() < 1e-4);
        assert_eq!(d.data()[1], 0.0);
        assert!((d.data()[2] - 2.9961).abs() < 1e-4);
    }

    #[test]
    fn nan_is_rejected_with_index() {
        let r = quantize_tensor(&Tensor::vector(vec![0.0, 1.0, f32::NAN]));
        assert!(matches!(r, Err(Error::Quantization { index: 2, .. })));
    }

    #[test]
    fn half_rounds_away_from_zero() {
        assert_eq!(quantize_value(0.5, 1.0, 10), 11);
        assert_eq!(quantize_value(-0.5, 1.0, 10), 9);
    }

    fn check_bound(data: &[f32]) -> std::result::Result<(), TestCaseError> {
        let q = quantize_slice(vec![data.len()], data).unwrap();
        prop_assert!((0..=255).contains(&q.zero_point));
        let half = q.scale as f64 / 2.0;
        let deq = dequantize_bytes(&q.data, q.scale, q.zero_point);
        for (i, &x) in data.iter().enumerate() {
            let exact = dequantize_value(q.data[i], q.scale, q.zero_point);
            prop_assert!((exact - x as f64).abs() <= half + 1e-9, "x={x} exact={exact} scale={}", q.scale);
            // The f32 result adds at most one rounding of the dequantized value.
            let slack = (deq[i].abs() as f64) * f32::EPSILON as f64;
            prop_assert!((deq[i] as f64 - x as f64).abs() <= half + 1e-9 + slack);
        }
        Ok(())
    }

    proptest! {
        #[test]
        fn round_trip_within_half_scale(data in prop::collection::vec(-1e3f32..1e3, 1..300)) {
            check_bound(&data)?;
        }

        #[test]
        fn constant_and_single_element(v in -1e4f32..1e4, n in 1usize..20) {
            check_bound(&vec![v; n])?;
            check_bound(&[v])?;
        }

        #[test]
        fn positive_only(data in prop::collection::vec(0.5f32..7.0, 1..100)) {
            check_bound(&data)?;
        }
    }
}
