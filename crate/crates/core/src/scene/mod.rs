//! Fixed-geometry Gaussian scenes with optimizable spherical-harmonic color.
//!
//! Geometry (positions, opacities, isotropic radii, cameras) is frozen at
//! construction. Only the SH coefficient block can change, and the renderer
//! is exactly linear in it, so [`render_vjp`] is the true adjoint of
//! [`render`].

mod camera;
mod io;
pub mod sh;
mod splat;

use std::hash::{DefaultHasher, Hash, Hasher};

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use camera::{camera_ring, CameraFrame, CameraPose};
pub use io::{load_scene, save_scene, SceneHeader, SCENE_MAGIC};
pub use sh::{basis_len, sh_eval};
pub use splat::{bake_all, bake_weights, render, render_views, render_vjp, SplatWeights};

use crate::rng::{self, Stream};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("SH degree {0} unsupported (max 3)")]
    ShDegree(usize),
    #[error("direction has norm {0}, expected 1")]
    NonUnitDirection(f64),
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid gaussian {index}: {reason}")]
    Gaussian { index: usize, reason: String },
    #[error("cameras must share one image size")]
    MixedImageSize,
    #[error("scene has no cameras")]
    NoCameras,
    #[error("scene has no gaussians")]
    Empty,
    #[error("sh coefficient block has shape {found:?}, expected {expected:?}")]
    ShShape {
        expected: [usize; 3],
        found: Vec<usize>,
    },
    #[error("sh coefficients contain a non-finite value")]
    NonFiniteSh,
    #[error("weights were baked for different geometry (camera {0})")]
    StaleWeights(usize),
    #[error("camera index {0} out of range")]
    CameraIndex(usize),
    #[error("cotangent shape {found:?} does not match image shape {expected:?}")]
    CotangentShape {
        expected: [usize; 3],
        found: Vec<usize>,
    },
    #[error("invalid synthetic scene parameter `{0}`: must be at least 1")]
    Synthetic(&'static str),
    #[error("malformed scene file: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SceneError> = std::result::Result<T, E>;

pub const DEFAULT_BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    positions: Vec<[f64; 3]>,
    opacities: Vec<f64>,
    radii: Vec<f64>,
    sh_degree: usize,
    sh_coeffs: Array3<f64>,
    cameras: Vec<CameraPose>,
    background: [f64; 3],
}

impl GaussianScene {
    /// Validates and assembles a scene. `sh_coeffs` is `[M, (L+1)^2, 3]`.
    pub fn new(
        positions: Vec<[f64; 3]>,
        opacities: Vec<f64>,
        radii: Vec<f64>,
        sh_degree: usize,
        sh_coeffs: Array3<f64>,
        cameras: Vec<CameraPose>,
        background: [f64; 3],
    ) -> Result<Self> {
        if sh_degree > sh::MAX_DEGREE {
            return Err(SceneError::ShDegree(sh_degree));
        }
        let m = positions.len();
        if opacities.len() != m || radii.len() != m {
            return Err(SceneError::Gaussian {
                index: m.min(opacities.len()).min(radii.len()),
                reason: "positions, opacities and radii differ in length".into(),
            });
        }
        for j in 0..m {
            let bad = |reason: &str| SceneError::Gaussian {
                index: j,
                reason: reason.into(),
            };
            if positions[j].iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite position"));
            }
            if !(opacities[j] > 0.0 && opacities[j] <= 1.0) {
                return Err(bad("opacity outside (0, 1]"));
            }
            if !(radii[j] > 0.0 && radii[j].is_finite()) {
                return Err(bad("radius must be positive"));
            }
        }
        let expected = [m, basis_len(sh_degree), 3];
        if sh_coeffs.shape() != expected {
            return Err(SceneError::ShShape {
                expected,
                found: sh_coeffs.shape().to_vec(),
            });
        }
        if sh_coeffs.iter().any(|v| !v.is_finite()) {
            return Err(SceneError::NonFiniteSh);
        }
        if cameras.is_empty() {
            return Err(SceneError::NoCameras);
        }
        for cam in &cameras {
            cam.validate()?;
            if (cam.width, cam.height) != (cameras[0].width, cameras[0].height) {
                return Err(SceneError::MixedImageSize);
            }
        }
        if background.iter().any(|v| !v.is_finite()) {
            return Err(SceneError::Camera("non-finite background".into()));
        }
        Ok(Self {
            positions,
            opacities,
            radii,
            sh_degree,
            sh_coeffs,
            cameras,
            background,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn opacities(&self) -> &[f64] {
        &self.opacities
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn basis_len(&self) -> usize {
        basis_len(self.sh_degree)
    }

    pub fn sh_coeffs(&self) -> &Array3<f64> {
        &self.sh_coeffs
    }

    pub fn cameras(&self) -> &[CameraPose] {
        &self.cameras
    }

    pub fn background(&self) -> [f64; 3] {
        self.background
    }

    /// `(height, width)` shared by every camera.
    pub fn image_size(&self) -> (usize, usize) {
        (self.cameras[0].height, self.cameras[0].width)
    }

    /// Replaces the color block; the only mutation a scene admits.
    pub fn set_sh_coeffs(&mut self, coeffs: Array3<f64>) -> Result<()> {
        if coeffs.shape() != self.sh_coeffs.shape() {
            return Err(SceneError::ShShape {
                expected: [self.len(), self.basis_len(), 3],
                found: coeffs.shape().to_vec(),
            });
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(SceneError::NonFiniteSh);
        }
        self.sh_coeffs = coeffs;
        Ok(())
    }

    /// Little-endian bytes of every geometry field, in file order.
    pub fn geometry_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.positions {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in self.opacities.iter().chain(&self.radii) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for cam in &self.cameras {
            for v in cam.position.iter().chain(&cam.look_at).chain(&cam.up) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&cam.focal.to_le_bytes());
            out.extend_from_slice(&(cam.width as u64).to_le_bytes());
            out.extend_from_slice(&(cam.height as u64).to_le_bytes());
        }
        out
    }

    /// Identifies the geometry one camera's weights depend on.
    pub(crate) fn geometry_key(&self, camera: usize) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.positions {
            p.iter().for_each(|v| v.to_bits().hash(&mut h));
        }
        self.opacities.iter().for_each(|v| v.to_bits().hash(&mut h));
        self.radii.iter().for_each(|v| v.to_bits().hash(&mut h));
        self.sh_degree.hash(&mut h);
        let cam = &self.cameras[camera];
        cam.position
            .iter()
            .chain(&cam.look_at)
            .chain(&cam.up)
            .for_each(|v| v.to_bits().hash(&mut h));
        cam.focal.to_bits().hash(&mut h);
        (cam.width, cam.height, camera).hash(&mut h);
        h.finish()
    }
}

/// SH coefficients that render as a constant color (DC only).
pub fn dc_for_color(color: [f64; 3]) -> [f64; 3] {
    let y0 = sh::eval_dc();
    [color[0] / y0, color[1] / y0, color[2] / y0]
}

/// How synthetic Gaussians are colored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ColorInit {
    /// Random DC colors in [0.1, 0.9] plus small higher-order terms.
    Random,
    /// Every Gaussian gets the same DC color; higher orders are zero.
    Uniform { color: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticParams {
    pub seed: u64,
    pub gaussians: usize,
    pub cameras: usize,
    pub height: usize,
    pub width: usize,
    pub sh_degree: usize,
    pub background: [f64; 3],
    pub color_init: ColorInit,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            seed: 0,
            gaussians: 200,
            cameras: 8,
            height: 64,
            width: 64,
            sh_degree: 3,
            background: DEFAULT_BACKGROUND,
            color_init: ColorInit::Random,
        }
    }
}

/// Gaussians uniform in the unit box `[-0.5, 0.5]^3`, viewed by a ring of
/// cameras; returns the scene and its baked weights.
pub fn make_synthetic_scene(
    params: &SyntheticParams,
) -> Result<(GaussianScene, Vec<SplatWeights>)> {
    for (name, v) in [
        ("gaussians", params.gaussians),
        ("cameras", params.cameras),
        ("height", params.height),
        ("width", params.width),
    ] {
        if v == 0 {
            return Err(SceneError::Synthetic(name));
        }
    }
    if params.sh_degree > sh::MAX_DEGREE {
        return Err(SceneError::ShDegree(params.sh_degree));
    }
    let mut rng = rng::stream(params.seed, Stream::Scene);
    let m = params.gaussians;
    let b = basis_len(params.sh_degree);
    let mut positions = Vec::with_capacity(m);
    let mut opacities = Vec::with_capacity(m);
    let mut radii = Vec::with_capacity(m);
    let mut coeffs = Array3::zeros((m, b, 3));
    for j in 0..m {
        positions.push([
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        ]);
        opacities.push(rng.random_range(0.4..0.95));
        radii.push(rng.random_range(0.04..0.12));
        let color: [f64; 3] = [
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
        ];
        let higher: Vec<f64> = (0..(b - 1) * 3)
            .map(|_| rng.random_range(-0.05..0.05))
            .collect();
        match params.color_init {
            ColorInit::Random => {
                let dc = dc_for_color(color);
                for ch in 0..3 {
                    coeffs[[j, 0, ch]] = dc[ch];
                    for k in 1..b {
                        coeffs[[j, k, ch]] = higher[(k - 1) * 3 + ch];
                    }
                }
            }
            ColorInit::Uniform { color } => {
                let dc = dc_for_color(color);
                for ch in 0..3 {
                    coeffs[[j, 0, ch]] = dc[ch];
                }
            }
        }
    }
    let scene = GaussianScene::new(
        positions,
        opacities,
        radii,
        params.sh_degree,
        coeffs,
        camera_ring(params.cameras, params.height, params.width),
        params.background,
    )?;
    let weights = bake_all(&scene)?;
    Ok((scene, weights))
}
