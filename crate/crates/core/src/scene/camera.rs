use serde::{Deserialize, Serialize};

use super::SceneError;

/// Pinhole camera. Image x grows to the right, y grows downward, and the
/// principal point is the image center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    /// Focal length in pixels.
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Camera-space axes: right, down, forward.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub right: [f64; 3],
    pub down: [f64; 3],
    pub forward: [f64; 3],
}

impl CameraPose {
    pub fn validate(&self) -> Result<(), SceneError> {
        let finite = self
            .position
            .iter()
            .chain(&self.look_at)
            .chain(&self.up)
            .all(|v| v.is_finite());
        if !finite {
            return Err(SceneError::Camera("non-finite pose".into()));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(SceneError::Camera(format!(
                "focal {} must be > 0",
                self.focal
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::Camera("image size must be positive".into()));
        }
        let view = sub(self.look_at, self.position);
        if norm(view) < 1e-12 {
            return Err(SceneError::Camera("look_at coincides with position".into()));
        }
        if norm(self.up) < 1e-12 || norm(cross(normalize(view), normalize(self.up))) < 1e-9 {
            return Err(SceneError::Camera(
                "up is parallel to the view direction".into(),
            ));
        }
        Ok(())
    }

    pub fn frame(&self) -> CameraFrame {
        let forward = normalize(sub(self.look_at, self.position));
        let right = normalize(cross(forward, self.up));
        let down = cross(forward, right);
        CameraFrame {
            right,
            down,
            forward,
        }
    }

    /// Pixel coordinates and depth of a world point; `None` when the point
    /// is not in front of the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        let f = self.frame();
        let rel = sub(p, self.position);
        let depth = dot(rel, f.forward);
        if depth <= 1e-6 {
            return None;
        }
        let u = self.focal * dot(rel, f.right) / depth + self.width as f64 / 2.0;
        let v = self.focal * dot(rel, f.down) / depth + self.height as f64 / 2.0;
        Some((u, v, depth))
    }
}

/// `n` cameras evenly spaced on a horizontal circle, all looking at the origin.
pub fn camera_ring(n: usize, height: usize, width: usize) -> Vec<CameraPose> {
    const RADIUS: f64 = 2.5;
    const ELEVATION: f64 = 0.6;
    let focal = 1.2 * width.max(height) as f64;
    (0..n)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            CameraPose {
                position: [RADIUS * angle.cos(), ELEVATION, RADIUS * angle.sin()],
                look_at: [0.0, 0.0, 0.0],
                up: [0.0, 1.0, 0.0],
                focal,
                width,
                height,
            }
        })
        .collect()
}
