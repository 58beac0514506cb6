//! Real spherical harmonics up to degree 3, splatting convention:
//! `value = max(0, Σ basis·coeff + 0.5)`.

use crate::error::{Error, Result};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the SH dot product so zero coefficients give mid-gray.
pub const SH_OFFSET: f64 = 0.5;

pub fn check_coeff_count(h: usize) -> Result<()> {
    match h {
        1 | 4 | 9 | 16 => Ok(()),
        _ => Err(Error::InvalidArgument(format!(
            "SH coefficient count {h} not in {{1, 4, 9, 16}}"
        ))),
    }
}

/// Basis values for the first `h` real SH functions at `dir`.
#[derive(Debug, Clone, Copy)]
pub struct ShBasis {
    values: [f64; 16],
    len: usize,
}

impl ShBasis {
    pub fn new(h: usize, dir: [f64; 3]) -> Result<Self> {
        check_coeff_count(h)?;
        let [x, y, z] = dir;
        let mut v = [0.0; 16];
        v[0] = SH_C0;
        if h > 1 {
            v[1] = -SH_C1 * y;
            v[2] = SH_C1 * z;
            v[3] = -SH_C1 * x;
        }
        if h > 4 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            v[4] = SH_C2[0] * x * y;
            v[5] = SH_C2[1] * y * z;
            v[6] = SH_C2[2] * (2.0 * zz - xx - yy);
            v[7] = SH_C2[3] * x * z;
            v[8] = SH_C2[4] * (xx - yy);
            if h > 9 {
                v[9] = SH_C3[0] * y * (3.0 * xx - yy);
                v[10] = SH_C3[1] * x * y * z;
                v[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
                v[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
                v[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
                v[14] = SH_C3[5] * z * (xx - yy);
                v[15] = SH_C3[6] * x * (xx - 3.0 * yy);
            }
        }
        Ok(Self { values: v, len: h })
    }

    pub fn values(&self) -> &[f64] {
        &self.values[..self.len]
    }

    /// Offset dot product before the clamp.
    pub fn raw(&self, coeffs: &[f64]) -> f64 {
        debug_assert_eq!(coeffs.len(), self.len);
        self.values()
            .iter()
            .zip(coeffs)
            .map(|(b, c)| b * c)
            .sum::<f64>()
            + SH_OFFSET
    }

    pub fn eval(&self, coeffs: &[f64]) -> f64 {
        self.raw(coeffs).max(0.0)
    }
}

/// Evaluates `k` channels of SH coefficients (each of length `h`) at `view_dir`.
pub fn eval_sh(coeffs: &[Vec<f64>], view_dir: [f64; 3]) -> Result<Vec<f64>> {
    let h = coeffs.first().map_or(0, Vec::len);
    if coeffs.iter().any(|c| c.len() != h) {
        return Err(Error::InvalidArgument("ragged SH coefficients".into()));
    }
    let norm = view_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "view direction must be unit length, got norm {norm}"
        )));
    }
    let basis = ShBasis::new(h, view_dir)?;
    Ok(coeffs.iter().map(|c| basis.eval(c)).collect())
}

/// Coefficient that makes a degree-0 channel evaluate to `value`.
pub fn dc_for_value(value: f64) -> f64 {
    (value - SH_OFFSET) / SH_C0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: [f64; 3]) -> [f64; 3] {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    }

    #[test]
    fn degree_zero_value() {
        let y = eval_sh(&[vec![0.25]], [0.0, 0.0, 1.0]).unwrap();
        assert!((y[0] - 0.570_523_7).abs() < 1e-6);
    }

    #[test]
    fn degree_zero_is_isotropic() {
        let a = eval_sh(&[vec![-0.7]], unit([0.3, -0.2, 0.9])).unwrap();
        let b = eval_sh(&[vec![-0.7]], unit([-1.0, 0.5, 0.1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn y10_is_odd_in_z() {
        let c = vec![0.0, 0.0, 0.4, 0.0];
        let d = unit([0.2, 0.4, 0.7]);
        let up = eval_sh(&[c.clone()], d).unwrap()[0];
        let down = eval_sh(&[c], [d[0], d[1], -d[2]]).unwrap()[0];
        assert!(((up - 0.5) + (down - 0.5)).abs() < 1e-12);
        assert!((up - 0.5).abs() > 1e-3);
    }

    #[test]
    fn invalid_counts_rejected() {
        for h in [0, 2, 3, 5, 10, 17] {
            assert!(eval_sh(&[vec![0.0; h]], [0.0, 0.0, 1.0]).is_err());
        }
        assert!(eval_sh(&[vec![0.0]], [0.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn clamps_at_zero() {
        assert_eq!(eval_sh(&[vec![-10.0]], [1.0, 0.0, 0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn dc_inverse() {
        assert!((ShBasis::new(1, [0.0, 0.0, 1.0]).unwrap().eval(&[dc_for_value(0.3)]) - 0.3).abs() < 1e-12);
    }

    proptest! {
        // Linear up to the offset while the clamp is inactive.
        #[test]
        fn linear_before_clamp(
            f in proptest::collection::vec(-0.3..0.3f64, 16),
            g in proptest::collection::vec(-0.3..0.3f64, 16),
            a in -1.0..1.0f64, b in -1.0..1.0f64,
            dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in 0.1..1.0f64,
        ) {
            let d = unit([dx, dy, dz]);
            let basis = ShBasis::new(16, d).unwrap();
            let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let (rf, rg, rm) = (basis.raw(&f), basis.raw(&g), basis.raw(&mix));
            prop_assume!(rf >= 0.0 && rg >= 0.0 && rm >= 0.0);
            let expected = a * rf + b * rg - (a + b - 1.0) * 0.5;
            prop_assert!((basis.eval(&mix) - expected).abs() < 1e-9);
        }
    }
}
