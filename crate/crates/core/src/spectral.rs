//! Frequency-domain processing over the (view, row, col) axes.
//!
//! Transforms run per channel; the channel axis is never transformed. The
//! forward transform is unnormalized and the inverse carries `1/(N·H·W)`.
//! Frequency bins are stored in natural order (DC at index 0).

use std::sync::Arc;

use ndarray::{Array3, Array4, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::MultiViewLatent;

/// Largest admissible normalized cutoff radius.
pub const MAX_CUTOFF: f64 = std::f64::consts::FRAC_1_SQRT_2;
pub const DEFAULT_CUTOFF: f64 = 0.25;

const IMAG_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("cutoff d0 = {0} must lie in (0, {MAX_CUTOFF}]")]
    Cutoff(f64),
    #[error("mask dimensions must be positive, got {0:?}")]
    MaskDims([usize; 3]),
    #[error("mask shape {mask:?} does not match latent axes {latent:?}")]
    MaskShape {
        mask: [usize; 3],
        latent: [usize; 3],
    },
    #[error("gamma = {0} outside [0, 1]")]
    Gamma(f64),
    #[error("alpha {name} = {value} outside [0, 1]")]
    Alpha { name: &'static str, value: f64 },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape([usize; 4], [usize; 4]),
    #[error("shared noise differs between view 0 and view {0}")]
    NotViewConstant(usize),
}

pub type Result<T, E = SpectralError> = std::result::Result<T, E>;

/// Complex `[N, C, H, W]` spectrum, DC at index 0 on each transformed axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    data: Array4<Complex64>,
}

impl Spectrum {
    pub fn data(&self) -> &Array4<Complex64> {
        &self.data
    }

    pub fn shape(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Multiplies every channel by a real `[N, H, W]` weight.
    pub fn weighted(&self, weights: &Array3<f64>) -> Spectrum {
        let mut data = self.data.clone();
        for mut channel in data.axis_iter_mut(Axis(1)) {
            ndarray::Zip::from(&mut channel)
                .and(weights)
                .for_each(|z, &w| *z *= w);
        }
        Spectrum { data }
    }

    /// `a * self + b * other`; shapes must agree.
    fn lincomb(&self, a: f64, other: &Spectrum, b: f64) -> Spectrum {
        let mut data = self.data.clone();
        ndarray::Zip::from(&mut data)
            .and(&other.data)
            .for_each(|x, &y| *x = *x * a + y * b);
        Spectrum { data }
    }
}

struct AxisPlans {
    views: Arc<dyn Fft<f64>>,
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
}

impl AxisPlans {
    fn new(n: usize, h: usize, w: usize, inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        let plan = |p: &mut FftPlanner<f64>, len| {
            if inverse {
                p.plan_fft_inverse(len)
            } else {
                p.plan_fft_forward(len)
            }
        };
        Self {
            views: plan(&mut planner, n),
            rows: plan(&mut planner, h),
            cols: plan(&mut planner, w),
        }
    }

    /// In-place transform of one `[N, H, W]` channel volume.
    fn apply(&self, buf: &mut [Complex64], n: usize, h: usize, w: usize) {
        for row in buf.chunks_exact_mut(w) {
            self.cols.process(row);
        }
        let mut line = vec![Complex64::default(); h.max(n)];
        for v in 0..n {
            for x in 0..w {
                let base = v * h * w + x;
                for y in 0..h {
                    line[y] = buf[base + y * w];
                }
                self.rows.process(&mut line[..h]);
                for y in 0..h {
                    buf[base + y * w] = line[y];
                }
            }
        }
        let plane = h * w;
        for p in 0..plane {
            for v in 0..n {
                line[v] = buf[v * plane + p];
            }
            self.views.process(&mut line[..n]);
            for v in 0..n {
                buf[v * plane + p] = line[v];
            }
        }
    }
}

fn transform(data: &Array4<Complex64>, inverse: bool) -> Array4<Complex64> {
    let [n, c, h, w] = [
        data.shape()[0],
        data.shape()[1],
        data.shape()[2],
        data.shape()[3],
    ];
    let plans = AxisPlans::new(n, h, w, inverse);
    let channels: Vec<Vec<Complex64>> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut buf: Vec<Complex64> = data.index_axis(Axis(1), ch).iter().copied().collect();
            plans.apply(&mut buf, n, h, w);
            buf
        })
        .collect();
    let mut out = Array4::zeros((n, c, h, w));
    for (ch, buf) in channels.into_iter().enumerate() {
        let vol = Array3::from_shape_vec((n, h, w), buf).expect("volume length");
        out.index_axis_mut(Axis(1), ch).assign(&vol);
    }
    out
}

/// Unnormalized forward transform over (view, row, col).
pub fn fft3(x: &MultiViewLatent) -> Spectrum {
    let complex = x.data().mapv(|v| Complex64::new(v, 0.0));
    Spectrum {
        data: transform(&complex, false),
    }
}

/// Inverse transform including the complex data; scaled by `1/(N·H·W)`.
pub fn ifft3_complex(s: &Spectrum) -> Array4<Complex64> {
    let [n, _, h, w] = s.shape();
    let scale = 1.0 / (n * h * w) as f64;
    transform(&s.data, true).mapv(|z| z * scale)
}

/// Largest imaginary magnitude left after the inverse transform.
pub fn imag_residual(s: &Spectrum) -> f64 {
    ifft3_complex(s).iter().fold(0.0, |m, z| m.max(z.im.abs()))
}

/// Inverse transform, keeping the real part.
pub fn ifft3(s: &Spectrum) -> MultiViewLatent {
    let complex = ifft3_complex(s);
    debug_assert!({
        let scale = complex.iter().fold(1.0f64, |m, z| m.max(z.re.abs()));
        complex
            .iter()
            .all(|z| z.im.abs() <= IMAG_RESIDUAL_TOL * scale)
    });
    MultiViewLatent::from_array(complex.mapv(|z| z.re))
}

/// Signed normalized frequency of bin `k` on an axis of length `len`, in [-0.5, 0.5).
pub fn normalized_frequency(k: usize, len: usize) -> f64 {
    let k = k as f64;
    let len_f = len as f64;
    if k < len_f / 2.0 {
        k / len_f
    } else {
        (k - len_f) / len_f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    GaussianHighpass,
}

/// A real high-pass weight over the transformed axes.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask {
    values: Array3<f64>,
    cutoff: f64,
    kind: MaskKind,
}

impl FrequencyMask {
    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.values.shape();
        [s[0], s[1], s[2]]
    }

    /// The low-pass weight `1 - H`.
    pub fn complement(&self) -> Array3<f64> {
        self.values.mapv(|v| 1.0 - v)
    }

    fn check(&self, x: &MultiViewLatent) -> Result<()> {
        let [n, _, h, w] = x.shape();
        if self.shape() != [n, h, w] {
            return Err(SpectralError::MaskShape {
                mask: self.shape(),
                latent: [n, h, w],
            });
        }
        Ok(())
    }
}

/// Gaussian high-pass `1 - exp(-rho^2 / (2 d0^2))` over the isotropic
/// normalized radius of the three transformed axes.
pub fn make_highpass(n: usize, h: usize, w: usize, d0: f64) -> Result<FrequencyMask> {
    if !(d0 > 0.0 && d0 <= MAX_CUTOFF) {
        return Err(SpectralError::Cutoff(d0));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(SpectralError::MaskDims([n, h, w]));
    }
    let values = Array3::from_shape_fn((n, h, w), |(v, y, x)| {
        let fv = normalized_frequency(v, n);
        let fy = normalized_frequency(y, h);
        let fx = normalized_frequency(x, w);
        let rho2 = fv * fv + fy * fy + fx * fx;
        1.0 - (-rho2 / (2.0 * d0 * d0)).exp()
    });
    Ok(FrequencyMask {
        values,
        cutoff: d0,
        kind: MaskKind::GaussianHighpass,
    })
}

/// Low- and high-band components `F ⊙ (1 - H)` and `F ⊙ H`.
pub fn split_bands(x: &MultiViewLatent, mask: &FrequencyMask) -> Result<(Spectrum, Spectrum)> {
    mask.check(x)?;
    let spec = fft3(x);
    Ok((
        spec.weighted(&mask.complement()),
        spec.weighted(mask.values()),
    ))
}

fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(SpectralError::Alpha { name, value });
    }
    Ok(())
}

/// `IFFT(alpha_low · F_L + alpha_high · F_H)`.
pub fn band_scale(
    x: &MultiViewLatent,
    mask: &FrequencyMask,
    alpha_low: f64,
    alpha_high: f64,
) -> Result<MultiViewLatent> {
    check_unit("alpha_low", alpha_low)?;
    check_unit("alpha_high", alpha_high)?;
    let (low, high) = split_bands(x, mask)?;
    Ok(ifft3(&low.lincomb(alpha_low, &high, alpha_high)))
}

/// The two spatial-domain components of a frequency-consistency filter output.
#[derive(Debug, Clone)]
pub struct MvfcParts {
    /// `IFFT(γ F_L(z) + (1 - γ) F_L(ε'))`
    pub low: MultiViewLatent,
    /// `IFFT(F_H(z))`
    pub high: MultiViewLatent,
}

fn check_view_constant(eps: &MultiViewLatent) -> Result<()> {
    let first = eps.view(0);
    for v in 1..eps.n_views() {
        if eps.view(v) != first {
            return Err(SpectralError::NotViewConstant(v));
        }
    }
    Ok(())
}

fn mvfc_spectra(
    z_t: &MultiViewLatent,
    eps_shared: &MultiViewLatent,
    gamma: f64,
    mask: &FrequencyMask,
) -> Result<(Spectrum, Spectrum)> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(SpectralError::Gamma(gamma));
    }
    if z_t.shape() != eps_shared.shape() {
        return Err(SpectralError::Shape(z_t.shape(), eps_shared.shape()));
    }
    check_view_constant(eps_shared)?;
    let (z_low, z_high) = split_bands(z_t, mask)?;
    let eps_low = fft3(eps_shared).weighted(&mask.complement());
    Ok((z_low.lincomb(gamma, &eps_low, 1.0 - gamma), z_high))
}

/// Multi-view frequency consistency:
/// `IFFT(γ F_L(z) + (1 - γ) F_L(ε') + F_H(z))`.
///
/// `eps_shared` must be view-constant so that its low band is identical in
/// every view.
pub fn mvfc(
    z_t: &MultiViewLatent,
    eps_shared: &MultiViewLatent,
    gamma: f64,
    mask: &FrequencyMask,
) -> Result<MultiViewLatent> {
    let (low, high) = mvfc_spectra(z_t, eps_shared, gamma, mask)?;
    Ok(ifft3(&low.lincomb(1.0, &high, 1.0)))
}

/// Same filter as [`mvfc`], returned as separate low/high components.
pub fn mvfc_parts(
    z_t: &MultiViewLatent,
    eps_shared: &MultiViewLatent,
    gamma: f64,
    mask: &FrequencyMask,
) -> Result<MvfcParts> {
    let (low, high) = mvfc_spectra(z_t, eps_shared, gamma, mask)?;
    Ok(MvfcParts {
        low: ifft3(&low),
        high: ifft3(&high),
    })
}

/// Energies of the two spectral components of a stack, scaled by
/// `1 / (N H W)` so they are in the units of a spatial sum of squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandEnergy {
    pub low: f64,
    pub high: f64,
}

pub fn band_energy(x: &MultiViewLatent, mask: &FrequencyMask) -> Result<BandEnergy> {
    let (low, high) = split_bands(x, mask)?;
    let [n, _, h, w] = x.shape();
    let volume = (n * h * w) as f64;
    Ok(BandEnergy {
        low: low.energy() / volume,
        high: high.energy() / volume,
    })
}

/// Spatial-domain low band `IFFT(F ⊙ (1 - H))`.
pub fn low_band(x: &MultiViewLatent, mask: &FrequencyMask) -> Result<MultiViewLatent> {
    band_scale(x, mask, 1.0, 0.0)
}

pub fn high_band(x: &MultiViewLatent, mask: &FrequencyMask) -> Result<MultiViewLatent> {
    band_scale(x, mask, 0.0, 1.0)
}

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Per-element variance across views, averaged over channels and pixels.
pub fn cross_view_variance(x: &MultiViewLatent) -> f64 {
    let data = x.data();
    let [n, c, h, w] = x.shape();
    let mut total = 0.0;
    for ch in 0..c {
        for y in 0..h {
            for col in 0..w {
                total += population_variance((0..n).map(|v| data[[v, ch, y, col]]));
            }
        }
    }
    total / (c * h * w) as f64
}

/// Variance across views of each view's mean value (over channels and pixels).
pub fn view_mean_variance(x: &MultiViewLatent) -> f64 {
    let means: Vec<f64> = x
        .data()
        .outer_iter()
        .map(|v| v.mean().unwrap_or(0.0))
        .collect();
    population_variance(means.iter().copied())
}

/// Variance across views of each view's energy (sum of squares).
pub fn view_energy_variance(x: &MultiViewLatent) -> f64 {
    let energies: Vec<f64> = x
        .data()
        .outer_iter()
        .map(|v| v.iter().map(|a| a * a).sum())
        .collect();
    population_variance(energies.iter().copied())
}

/// Cross-view statistics of one stack's low and high bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossViewStats {
    /// Per-pixel variance across views of the low band.
    pub low_band_variance: f64,
    /// Variance across views of the per-view low-band mean.
    pub low_band_mean_variance: f64,
    pub low_band_energy_variance: f64,
    pub high_band_energy_variance: f64,
}

pub fn cross_view_stats(x: &MultiViewLatent, mask: &FrequencyMask) -> Result<CrossViewStats> {
    let low = low_band(x, mask)?;
    let high = high_band(x, mask)?;
    Ok(CrossViewStats {
        low_band_variance: cross_view_variance(&low),
        low_band_mean_variance: view_mean_variance(&low),
        low_band_energy_variance: view_energy_variance(&low),
        high_band_energy_variance: view_energy_variance(&high),
    })
}
