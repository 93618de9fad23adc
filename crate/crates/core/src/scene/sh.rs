//! Real spherical harmonics up to degree 3.
//!
//! Standard orthonormal real basis with the Condon-Shortley phase, ordered
//! by degree then `m = -l..=l`. Same constants as common splatting renderers.

use super::SceneError;

pub const MAX_DEGREE: usize = 3;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions for degree `l`: `(l + 1)^2`.
pub fn basis_len(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// The constant degree-0 basis value.
pub fn eval_dc() -> f64 {
    C0
}

/// Fills `out` with the basis values; `out.len()` selects the degree.
pub(crate) fn eval_into(dir: [f64; 3], out: &mut [f64]) {
    let [x, y, z] = dir;
    out[0] = C0;
    if out.len() > 1 {
        out[1] = -C1 * y;
        out[2] = C1 * z;
        out[3] = -C1 * x;
    }
    if out.len() > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let (xy, yz, xz) = (x * y, y * z, x * z);
        out[4] = C2[0] * xy;
        out[5] = C2[1] * yz;
        out[6] = C2[2] * (2.0 * zz - xx - yy);
        out[7] = C2[3] * xz;
        out[8] = C2[4] * (xx - yy);
        if out.len() > 9 {
            out[9] = C3[0] * y * (3.0 * xx - yy);
            out[10] = C3[1] * xy * z;
            out[11] = C3[2] * y * (4.0 * zz - xx - yy);
            out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            out[13] = C3[4] * x * (4.0 * zz - xx - yy);
            out[14] = C3[5] * z * (xx - yy);
            out[15] = C3[6] * x * (xx - 3.0 * yy);
        }
    }
}

/// Basis values for a unit direction.
pub fn sh_eval(direction: [f64; 3], degree: usize) -> Result<Vec<f64>, SceneError> {
    if degree > MAX_DEGREE {
        return Err(SceneError::ShDegree(degree));
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm.is_nan() || (norm - 1.0).abs() > 1e-9 {
        return Err(SceneError::NonUnitDirection(norm));
    }
    let mut out = vec![0.0; basis_len(degree)];
    eval_into(direction, &mut out);
    Ok(out)
}
