use ndarray::{Array2, Array3, ArrayView3};
use rayon::prelude::*;

use super::camera::{norm, sub};
use super::{sh, GaussianScene, Result, SceneError};
use crate::tensor::MultiViewLatent;

/// Gaussians contributing less than this to every pixel are dropped.
const SIGMA_CUTOFF: f64 = 3.0;

/// Per-camera compositing weights, fixed by geometry alone.
///
/// For pixel `p` the rendered color is
/// `sum_j w_pj * c_j + t_p * background`, with `c_j` the SH color of
/// Gaussian `j` seen from this camera and `t_p` the residual transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatWeights {
    camera: usize,
    height: usize,
    width: usize,
    geometry_key: u64,
    /// CSR row offsets, one row per pixel in row-major order.
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
    residual: Vec<f64>,
    /// `[M, B]` SH basis along each Gaussian's viewing direction.
    basis: Array2<f64>,
}

impl SplatWeights {
    pub fn camera(&self) -> usize {
        self.camera
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// `(gaussian, weight)` pairs for pixel `(y, x)`, front to back.
    pub fn pixel(&self, y: usize, x: usize) -> &[(u32, f64)] {
        let p = y * self.width + x;
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn residual(&self, y: usize, x: usize) -> f64 {
        self.residual[y * self.width + x]
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    /// Total number of stored (pixel, gaussian) pairs.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    fn check(&self, scene: &GaussianScene) -> Result<()> {
        if self.camera >= scene.cameras().len()
            || self.geometry_key != scene.geometry_key(self.camera)
        {
            return Err(SceneError::StaleWeights(self.camera));
        }
        Ok(())
    }
}

/// Sorts, culls and composites every Gaussian for one camera.
pub fn bake_weights(scene: &GaussianScene, camera: usize) -> Result<SplatWeights> {
    let cam = scene
        .cameras()
        .get(camera)
        .ok_or(SceneError::CameraIndex(camera))?;
    let (h, w) = (cam.height, cam.width);
    let b = scene.basis_len();
    let mut basis = Array2::zeros((scene.len(), b));

    let mut visible: Vec<(usize, f64, f64, f64)> = Vec::new();
    for (j, &p) in scene.positions().iter().enumerate() {
        let Some((u, v, depth)) = cam.project(p) else {
            continue;
        };
        let rel = sub(p, cam.position);
        let n = norm(rel);
        let dir = [rel[0] / n, rel[1] / n, rel[2] / n];
        let mut row = vec![0.0; b];
        sh::eval_into(dir, &mut row);
        for (k, v) in row.into_iter().enumerate() {
            basis[[j, k]] = v;
        }
        visible.push((j, u, v, depth));
    }
    visible.sort_by(|a, b| a.3.total_cmp(&b.3).then(a.0.cmp(&b.0)));

    let mut lists: Vec<Vec<(u32, f64)>> = vec![Vec::new(); h * w];
    let mut trans = vec![1.0; h * w];
    for &(j, u, v, depth) in &visible {
        let sigma = cam.focal * scene.radii()[j] / depth;
        let reach = SIGMA_CUTOFF * sigma;
        let x0 = (u - reach).floor().max(0.0);
        let x1 = (u + reach).ceil().min(w as f64 - 1.0);
        let y0 = (v - reach).floor().max(0.0);
        let y1 = (v + reach).ceil().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let alpha = scene.opacities()[j];
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let dx = x as f64 + 0.5 - u;
                let dy = y as f64 + 0.5 - v;
                let d2 = dx * dx + dy * dy;
                if d2 > reach * reach {
                    continue;
                }
                let a = alpha * (-d2 / (2.0 * sigma * sigma)).exp();
                let p = y * w + x;
                lists[p].push((j as u32, a * trans[p]));
                trans[p] *= 1.0 - a;
            }
        }
    }

    let mut offsets = Vec::with_capacity(h * w + 1);
    offsets.push(0);
    let mut entries = Vec::new();
    for list in lists {
        entries.extend(list);
        offsets.push(entries.len());
    }
    Ok(SplatWeights {
        camera,
        height: h,
        width: w,
        geometry_key: scene.geometry_key(camera),
        offsets,
        entries,
        residual: trans,
        basis,
    })
}

/// Weights for every camera, baked in parallel.
pub fn bake_all(scene: &GaussianScene) -> Result<Vec<SplatWeights>> {
    (0..scene.cameras().len())
        .into_par_iter()
        .map(|c| bake_weights(scene, c))
        .collect()
}

fn gaussian_colors(coeffs: ArrayView3<f64>, basis: &Array2<f64>) -> Vec<[f64; 3]> {
    let (m, b, _) = coeffs.dim();
    (0..m)
        .map(|j| {
            let mut c = [0.0; 3];
            for k in 0..b {
                let y = basis[[j, k]];
                for (ch, cv) in c.iter_mut().enumerate() {
                    *cv += coeffs[[j, k, ch]] * y;
                }
            }
            c
        })
        .collect()
}

/// Renders one camera to a `[3, H, W]` image.
pub fn render(scene: &GaussianScene, weights: &SplatWeights) -> Result<Array3<f64>> {
    weights.check(scene)?;
    let colors = gaussian_colors(scene.sh_coeffs().view(), &weights.basis);
    let (h, w) = (weights.height, weights.width);
    let bg = scene.background();
    let mut img = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let t = weights.residual(y, x);
            let mut px = [t * bg[0], t * bg[1], t * bg[2]];
            for &(j, wt) in weights.pixel(y, x) {
                let c = colors[j as usize];
                for ch in 0..3 {
                    px[ch] += wt * c[ch];
                }
            }
            for ch in 0..3 {
                img[[ch, y, x]] = px[ch];
            }
        }
    }
    Ok(img)
}

/// Renders the listed cameras into a `[N, 3, H, W]` stack.
pub fn render_views(
    scene: &GaussianScene,
    weights: &[SplatWeights],
    cameras: &[usize],
) -> Result<MultiViewLatent> {
    let views = cameras
        .par_iter()
        .map(|&c| {
            let wt = weights.get(c).ok_or(SceneError::CameraIndex(c))?;
            render(scene, wt)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiViewLatent::stack_views(&views)?)
}

/// Gradient of `<cotangent, render(scene)>` with respect to the SH block,
/// returned as `[M, B, 3]`.
pub fn render_vjp(
    scene: &GaussianScene,
    weights: &SplatWeights,
    cotangent: &Array3<f64>,
) -> Result<Array3<f64>> {
    weights.check(scene)?;
    let (h, w) = (weights.height, weights.width);
    if cotangent.shape() != [3, h, w] {
        return Err(SceneError::CotangentShape {
            expected: [3, h, w],
            found: cotangent.shape().to_vec(),
        });
    }
    let mut acc = vec![[0.0; 3]; scene.len()];
    for y in 0..h {
        for x in 0..w {
            let g = [
                cotangent[[0, y, x]],
                cotangent[[1, y, x]],
                cotangent[[2, y, x]],
            ];
            for &(j, wt) in weights.pixel(y, x) {
                let a = &mut acc[j as usize];
                for ch in 0..3 {
                    a[ch] += wt * g[ch];
                }
            }
        }
    }
    let b = scene.basis_len();
    let mut grad = Array3::zeros((scene.len(), b, 3));
    for (j, a) in acc.iter().enumerate() {
        for k in 0..b {
            let y = weights.basis[[j, k]];
            for ch in 0..3 {
                grad[[j, k, ch]] = y * a[ch];
            }
        }
    }
    Ok(grad)
}
