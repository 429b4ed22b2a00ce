//! Scene description: world-space Gaussians, the viewing camera and render
//! configuration, plus the JSON scene file format.
//!
//! A scene file looks like
//!
//! ```json
//! {
//!   "camera": { "view": [16 numbers, row-major], "focal": [fx, fy], "dims": [w, h] },
//!   "config": { "patch": [16, 8], "background": [r, g, b], "seed": 0 },
//!   "gaussians": [
//!     { "mean": [x, y, z], "scale": [sx, sy, sz], "rot": [w, x, y, z],
//!       "opacity": 0.5, "color": [r, g, b] }
//!   ]
//! }
//! ```
//!
//! Numbers are written in shortest round-trip form, so `load_scene(save_scene(s)) == s`
//! bit for bit.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const QUAT_NORM_TOL: f64 = 1e-6;
const ORTHONORMAL_TOL: f64 = 1e-6;

/// A world-space splat. Covariance is kept factored as scale + rotation so it is
/// positive-definite by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D {
    pub mean: [f64; 3],
    pub scale: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    #[serde(rename = "rot")]
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    pub fn validate(&self, index: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidGaussian { index, reason });
        if self.mean.iter().any(|v| !v.is_finite()) {
            return fail(format!("non-finite mean {:?}", self.mean));
        }
        if self.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return fail(format!("scale must be strictly positive, got {:?}", self.scale));
        }
        let norm = self.rotation.iter().map(|q| q * q).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= QUAT_NORM_TOL) {
            return fail(format!("rotation quaternion norm {norm} is not 1"));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return fail(format!("opacity {} outside [0, 1]", self.opacity));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return fail(format!("color {:?} outside [0, 1]", self.color));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quaternion_to_matrix(self.rotation)
    }
}

/// Rotation matrix of a unit quaternion given as `(w, x, y, z)`.
pub fn quaternion_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Σ = R·S·Sᵀ·Rᵀ`.
pub fn covariance_of(g: &Gaussian3D) -> Matrix3<f64> {
    let r = g.rotation_matrix();
    let s = Matrix3::from_diagonal(&Vector3::from(g.scale));
    let m = r * s;
    m * m.transpose()
}

/// Pinhole camera. `view` is the world→camera transform (row-major 4×4); the
/// principal point sits at the image centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub view: [f64; 16],
    pub focal: [f64; 2],
    pub dims: [u32; 2],
}

impl Camera {
    /// Camera at the world origin looking down +z.
    pub fn identity(width: u32, height: u32, focal: f64) -> Self {
        #[rustfmt::skip]
        let view = [
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ];
        Camera {
            view,
            focal: [focal, focal],
            dims: [width, height],
        }
    }

    pub fn width(&self) -> u32 {
        self.dims[0]
    }

    pub fn height(&self) -> u32 {
        self.dims[1]
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let v = &self.view;
        Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.view[3], self.view[7], self.view[11])
    }

    pub fn to_camera_space(&self, p: &[f64; 3]) -> Vector3<f64> {
        self.rotation() * Vector3::from(*p) + self.translation()
    }

    pub fn validate(&self) -> Result<()> {
        if self.view.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite view transform".into()));
        }
        let r = self.rotation();
        let err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidCamera(format!(
                "view rotation block is not orthonormal (max error {err:e})"
            )));
        }
        let bottom = [self.view[12], self.view[13], self.view[14], self.view[15]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidCamera(format!(
                "view transform last row must be [0, 0, 0, 1], got {bottom:?}"
            )));
        }
        if self.focal.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got {:?}",
                self.focal
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidCamera(format!(
                "image dims must be positive, got {:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Binning patch in pixels, `[width, height]`.
    pub patch: [u32; 2],
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            patch: [16, 8],
            background: [0.0; 3],
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "patch dims must be positive, got {:?}",
                self.patch
            )));
        }
        if self.background.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("non-finite background".into()));
        }
        Ok(())
    }

    pub fn background_f32(&self) -> [f32; 3] {
        self.background.map(|c| c as f32)
    }
}

/// Number of tile columns and rows covering `dims` with `patch`-sized tiles.
pub fn tile_grid(dims: [u32; 2], patch: [u32; 2]) -> (u32, u32) {
    (dims[0].div_ceil(patch[0]), dims[1].div_ceil(patch[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub camera: Camera,
    #[serde(default)]
    pub config: SceneConfig,
    pub gaussians: Vec<Gaussian3D>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.config.validate()?;
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate(i)?;
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let scene: Scene = serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        de.end().map_err(|e| Error::Parse {
            path: ".".into(),
            message: e.to_string(),
        })?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization is infallible")
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scene::from_json_str(&text)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scene.to_json_string()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(scale: [f64; 3], rotation: [f64; 4]) -> Gaussian3D {
        Gaussian3D {
            mean: [0.0, 0.0, 5.0],
            scale,
            rotation,
            opacity: 0.5,
            color: [0.2, 0.4, 0.6],
        }
    }

    #[test]
    fn covariance_identity_and_diagonal() {
        let id = covariance_of(&unit([1.0; 3], [1.0, 0.0, 0.0, 0.0]));
        assert_eq!(id, Matrix3::identity());
        let d = covariance_of(&unit([2.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0]));
        assert_eq!(d, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)));
    }

    #[test]
    fn covariance_rotated_about_z() {
        // Oracle: explicit R·S·Sᵀ·Rᵀ with a hand-written 90° z rotation.
        let half = std::f64::consts::FRAC_PI_4;
        let g = unit([2.0, 1.0, 1.0], [half.cos(), 0.0, 0.0, half.sin()]);
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let s = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        let expected = r * s * s.transpose() * r.transpose();
        let got = covariance_of(&g);
        assert!((got - expected).abs().max() < 1e-12);
        assert!((got - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_bad_opacity_with_index() {
        let mut scene = Scene {
            camera: Camera::identity(32, 32, 30.0),
            config: SceneConfig::default(),
            gaussians: vec![unit([1.0; 3], [1.0, 0.0, 0.0, 0.0]); 3],
        };
        scene.gaussians[2].opacity = 1.5;
        let err = Scene::from_json_str(&scene.to_json_string()).unwrap_err();
        match err {
            Error::InvalidGaussian { index, .. } => assert_eq!(index, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_error_names_field_path() {
        let text = r#"{"camera":{"view":[1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1],"focal":[1,1],"dims":[4,4]},
            "gaussians":[{"mean":[0,0,1],"scale":[1,1,1],"rot":[1,0,0,0],"opacity":"x","color":[0,0,0]}]}"#;
        match Scene::from_json_str(text).unwrap_err() {
            Error::Parse { path, .. } => assert_eq!(path, "gaussians[0].opacity"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_scene_is_valid() {
        let text = r#"{"camera":{"view":[1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1],"focal":[10,10],"dims":[8,8]},
            "config":{"patch":[16,8],"background":[0,0,0],"seed":1},"gaussians":[]}"#;
        let scene = Scene::from_json_str(text).unwrap();
        assert!(scene.gaussians.is_empty());
        assert!(scene.to_json_string().contains("\"gaussians\": []"));
    }

    #[test]
    fn camera_rejects_skewed_rotation() {
        let mut cam = Camera::identity(8, 8, 10.0);
        cam.view[1] = 0.1;
        assert!(matches!(cam.validate(), Err(Error::InvalidCamera(_))));
    }

    #[test]
    fn tile_grid_uses_ceiling_division() {
        assert_eq!(tile_grid([960, 540], [16, 8]), (60, 68));
        assert_eq!(tile_grid([16, 8], [16, 8]), (1, 1));
        assert_eq!(tile_grid([17, 9], [16, 8]), (2, 2));
    }
}
