//! `.fsz` scene files: magic, JSON header, then four tensor blocks.
//!
//! Layout: `FSZ1`, u32 LE header length, UTF-8 JSON header, followed by
//! positions `[M, 3]`, opacities `[M]`, radii `[M]` and SH coefficients
//! `[M, B, 3]` in the tensor container format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{CameraPose, GaussianScene, Result, SceneError};
use crate::tensor::{read_tensor, write_tensor, Dtype};

pub const SCENE_MAGIC: &[u8; 4] = b"FSZ1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneHeader {
    pub version: u32,
    pub gaussians: usize,
    pub sh_degree: usize,
    pub background: [f64; 3],
    pub cameras: Vec<CameraPose>,
}

pub fn save_scene(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    if scene.is_empty() {
        return Err(SceneError::Empty);
    }
    let header = SceneHeader {
        version: VERSION,
        gaussians: scene.len(),
        sh_degree: scene.sh_degree(),
        background: scene.background(),
        cameras: scene.cameras().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SCENE_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let m = scene.len();
    let flat: Vec<f64> = scene.positions().iter().flatten().copied().collect();
    write_tensor(&mut w, &[m, 3], &flat, Dtype::F32)?;
    write_tensor(&mut w, &[m], scene.opacities(), Dtype::F32)?;
    write_tensor(&mut w, &[m], scene.radii(), Dtype::F32)?;
    let sh: Vec<f64> = scene.sh_coeffs().iter().copied().collect();
    write_tensor(&mut w, &[m, scene.basis_len(), 3], &sh, Dtype::F32)?;
    w.flush()?;
    Ok(())
}

fn expect_dims(name: &str, found: &[usize], expected: &[usize]) -> Result<()> {
    if found != expected {
        return Err(SceneError::Format(format!(
            "{name} has dims {found:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SCENE_MAGIC {
        return Err(SceneError::Format("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: SceneHeader = serde_json::from_slice(&json)?;
    if header.version != VERSION {
        return Err(SceneError::Format(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let m = header.gaussians;
    let b = super::basis_len(header.sh_degree);

    let (dims, pos) = read_tensor(&mut r)?;
    expect_dims("positions", &dims, &[m, 3])?;
    let (dims, opacities) = read_tensor(&mut r)?;
    expect_dims("opacities", &dims, &[m])?;
    let (dims, radii) = read_tensor(&mut r)?;
    expect_dims("radii", &dims, &[m])?;
    let (dims, sh) = read_tensor(&mut r)?;
    expect_dims("sh_coeffs", &dims, &[m, b, 3])?;

    let positions = pos.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let coeffs =
        Array3::from_shape_vec((m, b, 3), sh).map_err(|e| SceneError::Format(e.to_string()))?;
    GaussianScene::new(
        positions,
        opacities,
        radii,
        header.sh_degree,
        coeffs,
        header.cameras,
        header.background,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_synthetic_scene, SyntheticParams};

    #[test]
    fn round_trip_is_stable() {
        let (scene, _) = make_synthetic_scene(&SyntheticParams {
            gaussians: 12,
            cameras: 3,
            height: 8,
            width: 8,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.fsz");
        let b = dir.path().join("b.fsz");
        save_scene(&scene, &a).unwrap();
        let loaded = load_scene(&a).unwrap();
        assert_eq!(loaded.len(), 12);
        assert_eq!(loaded.cameras(), scene.cameras());
        for (x, y) in loaded.radii().iter().zip(scene.radii()) {
            assert!((x - y).abs() < 1e-7);
        }
        save_scene(&loaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.fsz");
        std::fs::write(&p, b"NOPE\0\0\0\0").unwrap();
        assert!(matches!(load_scene(&p), Err(SceneError::Format(_))));
    }
}
