//! Fixed sinusoidal positional encoding.

use crate::autodiff::Tensor;

/// Encoding value at (possibly fractional) `position` and `column`:
/// `sin(p / 10000^(2i/d))` on even columns `2i`, `cos` of the same angle on
/// odd columns `2i+1`.
pub fn positional_value(position: f64, column: usize, d_model: usize) -> f64 {
    let i = column / 2;
    let angle = position / 10000f64.powf(2.0 * i as f64 / d_model as f64);
    if column.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// `[len, d_model]` table of encodings for positions `0..len`.
pub fn positional_encoding(len: usize, d_model: usize) -> Tensor {
    let data = (0..len)
        .flat_map(|p| (0..d_model).map(move |c| positional_value(p as f64, c, d_model)))
        .collect();
    Tensor::new(vec![len, d_model], data).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_is_sin0_cos0() {
        let pe = positional_encoding(3, 8);
        for c in 0..8 {
            assert_eq!(pe.at(0, c), if c % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn first_column_at_position_one_is_sin1() {
        let pe = positional_encoding(2, 16);
        assert!((pe.at(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.at(1, 0) - 0.841471).abs() < 1e-6);
    }

    #[test]
    fn column_zero_has_period_two_pi() {
        let period = 2.0 * std::f64::consts::PI;
        for p in [0.0, 1.0, 7.5, 100.0] {
            let a = positional_value(p, 0, 16);
            let b = positional_value(p + period, 0, 16);
            assert!((a - b).abs() < 1e-6);
        }
    }
}
