//! Walsh functions in natural binary order and exact algebra for dyadic
//! step functions on `[0, 1)`.
//!
//! `W_j(x) = (-1)^{sum_i k_i x_{i+1}}` where `k_i` is bit `i` of `j` and
//! `x_{i+1}` is the `(i+1)`-th binary digit of `x`. This is not the
//! Sylvester (Hadamard) ordering: on a level-`L` grid the two agree after
//! reversing the `L` bits of the cell index, which is how the fast
//! transform below is wired.
//!
//! The product rule `W_i W_j = W_{i ^ j}` holds pointwise.

use crate::error::{Error, Result};

/// First 64 binary digits of `x`, most significant digit first.
fn digits(x: f64) -> u64 {
    (x * 18446744073709551616.0) as u64
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!("x = {x} is not in [0, 1)")))
    }
}

/// `W_j(x)` as `+1` or `-1`.
pub fn walsh_eval(j: u64, x: f64) -> Result<i8> {
    check_unit(x)?;
    let odd = (j & digits(x).reverse_bits()).count_ones() & 1;
    Ok(if odd == 0 { 1 } else { -1 })
}

/// Index of the level-`level` dyadic cell containing `x`.
///
/// `x` must lie in `[0, 1)`; `level` must be at most 52.
#[inline]
pub fn cell(x: f64, level: u32) -> usize {
    debug_assert!((0.0..1.0).contains(&x));
    (x * (1u64 << level) as f64) as usize
}

/// Reverse the low `level` bits of `k`.
#[inline]
pub fn reverse_bits(k: usize, level: u32) -> usize {
    if level == 0 {
        0
    } else {
        k.reverse_bits() >> (usize::BITS - level)
    }
}

/// `W_j` on cell `k` of the level-`level` grid, for `j < 2^level`.
#[inline]
pub fn walsh_on_cell(j: usize, k: usize, level: u32) -> f64 {
    if (j & reverse_bits(k, level)).count_ones() & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Unnormalized in-place Walsh-Hadamard butterfly in Sylvester order.
/// Applying it twice multiplies by `data.len()`.
pub fn fwht(data: &mut [f64]) {
    let n = data.len();
    assert!(n.is_power_of_two(), "fwht length must be a power of two");
    let mut h = 1;
    while h < n {
        for block in data.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*a, *b);
                *a = u + v;
                *b = u - v;
            }
        }
        h *= 2;
    }
}

/// Piecewise-constant function with `2^level` equal cells.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadicFunction {
    level: u32,
    values: Vec<f64>,
}

impl DyadicFunction {
    pub fn new(level: u32, values: Vec<f64>) -> Result<Self> {
        if level > 30 || values.len() != 1usize << level {
            return Err(Error::InvalidParameter(format!(
                "level {level} needs {} values, got {}",
                1u64 << level.min(63),
                values.len()
            )));
        }
        Ok(Self { level, values })
    }

    pub fn constant(level: u32, c: f64) -> Self {
        Self { level, values: vec![c; 1 << level] }
    }

    pub fn from_fn(level: u32, f: impl FnMut(usize) -> f64) -> Self {
        Self { level, values: (0..1usize << level).map(f).collect() }
    }

    /// The Walsh function `W_j` on the smallest grid that resolves it,
    /// or on `level` if that is finer.
    pub fn walsh(j: usize, level: u32) -> Self {
        let level = level.max(bits_for(j + 1));
        Self::from_fn(level, |k| walsh_on_cell(j, k, level))
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value_at(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        Ok(self.values[cell(x, self.level)])
    }

    /// The same function on a finer grid.
    pub fn refine(&self, level: u32) -> Self {
        assert!(level >= self.level, "cannot refine to a coarser level");
        let shift = level - self.level;
        Self::from_fn(level, |k| self.values[k >> shift])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Pointwise `a * self + b * other` on the common grid.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        let level = self.level.max(other.level);
        let (f, g) = (self.refine(level), other.refine(level));
        Self::from_fn(level, |k| a * f.values[k] + b * g.values[k])
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { level: self.level, values: self.values.iter().map(|v| a * v).collect() }
    }
}

/// Smallest `L` with `2^L >= m` (zero for `m <= 1`).
pub fn bits_for(m: usize) -> u32 {
    if m <= 1 {
        0
    } else {
        usize::BITS - (m - 1).leading_zeros()
    }
}

/// Coefficients `<f, W_j>` under Lebesgue measure, `j < 2^level`.
#[derive(Clone, Debug, PartialEq)]
pub struct WalshCoefficients {
    level: u32,
    coeffs: Vec<f64>,
}

impl WalshCoefficients {
    pub fn new(level: u32, coeffs: Vec<f64>) -> Result<Self> {
        if level > 30 || coeffs.len() != 1usize << level {
            return Err(Error::InvalidParameter(format!(
                "level {level} needs {} coefficients, got {}",
                1u64 << level.min(63),
                coeffs.len()
            )));
        }
        Ok(Self { level, coeffs })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// Zero-pad to a finer level.
    pub fn extend(&self, level: u32) -> Self {
        assert!(level >= self.level, "cannot truncate coefficients");
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(1 << level, 0.0);
        Self { level, coeffs }
    }

    /// The step function `sum_j coeffs[j] W_j`.
    pub fn inverse(&self) -> DyadicFunction {
        let mut buf = self.coeffs.clone();
        fwht(&mut buf);
        let level = self.level;
        DyadicFunction::from_fn(level, |k| buf[reverse_bits(k, level)])
    }
}

pub fn walsh_transform(f: &DyadicFunction) -> WalshCoefficients {
    let level = f.level;
    let mut buf = vec![0.0; f.values.len()];
    for (k, v) in f.values.iter().enumerate() {
        buf[reverse_bits(k, level)] = *v;
    }
    fwht(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    for c in &mut buf {
        *c *= scale;
    }
    WalshCoefficients { level, coeffs: buf }
}

/// `integral of f g w` as an exact Riemann sum on the common grid.
pub fn l2_inner(f: &DyadicFunction, g: &DyadicFunction, density: &DyadicFunction) -> f64 {
    let level = f.level.max(g.level).max(density.level);
    let (f, g, w) = (f.refine(level), g.refine(level), density.refine(level));
    let s: f64 = f
        .values
        .iter()
        .zip(&g.values)
        .zip(&w.values)
        .map(|((a, b), c)| a * b * c)
        .sum();
    s / (1u64 << level) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        assert_eq!(walsh_eval(1, 0.25).unwrap(), 1);
        assert_eq!(walsh_eval(1, 0.75).unwrap(), -1);
        assert_eq!(walsh_eval(0, 0.7).unwrap(), 1);
        assert_eq!(walsh_eval(3, 0.25).unwrap(), -1);
        assert!(walsh_eval(2, 1.0).is_err());
        assert!(walsh_eval(2, -0.1).is_err());
    }

    /// Digit-by-digit evaluation straight from the definition.
    fn eval_by_digits(j: u64, x: f64) -> i8 {
        let mut y = x;
        let mut e = 0;
        for i in 0..64 {
            y *= 2.0;
            let d = if y >= 1.0 { 1 } else { 0 };
            y -= d as f64;
            e += ((j >> i) & 1) as u32 * d;
        }
        if e % 2 == 0 {
            1
        } else {
            -1
        }
    }

    #[test]
    fn eval_matches_digit_oracle() {
        for &x in &[0.0, 0.1, 0.3333, 0.5, 0.71, 0.999_999, 1e-12, 0.123_456_789] {
            for j in [0u64, 1, 2, 3, 5, 17, 255, 1023, 4097, u64::MAX >> 3] {
                assert_eq!(walsh_eval(j, x).unwrap(), eval_by_digits(j, x), "j={j} x={x}");
            }
        }
    }

    #[test]
    fn grid_sign_matches_eval() {
        let level = 5;
        for j in 0..32 {
            for k in 0..32 {
                let x = k as f64 / 32.0;
                assert_eq!(walsh_on_cell(j, k, level), walsh_eval(j as u64, x).unwrap() as f64);
            }
        }
    }

    #[test]
    fn transform_examples() {
        let one = DyadicFunction::constant(2, 1.0);
        assert_eq!(walsh_transform(&one).coeffs(), &[1.0, 0.0, 0.0, 0.0]);

        let w1 = DyadicFunction::new(1, vec![1.0, -1.0]).unwrap();
        assert_eq!(walsh_transform(&w1).coeffs(), &[0.0, 1.0]);

        let f = DyadicFunction::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let fast = walsh_transform(&f);
        for j in 0..4 {
            let direct: f64 =
                (0..4).map(|k| f.values()[k] * walsh_on_cell(j, k, 2)).sum::<f64>() / 4.0;
            assert_eq!(fast.coeffs()[j], direct);
        }
        assert_eq!(fast.inverse(), f);
    }

    #[test]
    fn inner_products() {
        let one = DyadicFunction::constant(0, 1.0);
        let w1 = DyadicFunction::walsh(1, 0);
        let w2 = DyadicFunction::walsh(2, 0);
        assert_eq!(l2_inner(&w1, &w1, &one), 1.0);
        assert_eq!(l2_inner(&w1, &w2, &one), 0.0);

        let (gamma, p) = (0.9, 0.25);
        let theta = w1.scale(1.0 / (1.0 - gamma + 2.0 * gamma * p));
        let v = l2_inner(&theta, &theta, &one);
        assert!((v - 1.0 / 0.55f64.powi(2)).abs() < 1e-12);
        assert!((v - 3.3058).abs() < 1e-4);
    }

    #[test]
    fn refine_keeps_values() {
        let f = DyadicFunction::new(1, vec![2.0, -3.0]).unwrap();
        let g = f.refine(4);
        for k in 0..16 {
            let x = (k as f64 + 0.5) / 16.0;
            assert_eq!(g.value_at(x).unwrap(), f.value_at(x).unwrap());
        }
    }

    #[test]
    fn bits_for_values() {
        assert_eq!(bits_for(0), 0);
        assert_eq!(bits_for(1), 0);
        assert_eq!(bits_for(2), 1);
        assert_eq!(bits_for(3), 2);
        assert_eq!(bits_for(4096), 12);
        assert_eq!(bits_for(4097), 13);
    }
}
