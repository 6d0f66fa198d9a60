use std::path::Path;

use nalgebra::{Isometry3, Quaternion, Translation3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::render::Camera;
use crate::{Error, Quat, Result, Vec3};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Extrinsic {
    /// World-to-camera rotation, `(w, x, y, z)`.
    rotation: [f64; 4],
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LookAt {
    eye: [f64; 3],
    target: [f64; 3],
    up: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    fx: f64,
    fy: f64,
    #[serde(default)]
    cx: Option<f64>,
    #[serde(default)]
    cy: Option<f64>,
    width: usize,
    height: usize,
    near: f64,
    far: f64,
    #[serde(default)]
    extrinsic: Option<Extrinsic>,
    #[serde(default)]
    look_at: Option<LookAt>,
}

/// Camera from JSON. Exactly one of `extrinsic` (world-to-camera rotation
/// quaternion and translation) or `look_at` (eye, target, up) must be given;
/// `cx`, `cy` default to the image centre.
pub fn camera_from_json(text: &str) -> Result<Camera> {
    let f: CameraFile = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("camera: {e}")))?;
    let cx = f.cx.unwrap_or(f.width as f64 / 2.0);
    let cy = f.cy.unwrap_or(f.height as f64 / 2.0);
    let pose = match (f.extrinsic, f.look_at) {
        (Some(e), None) => {
            let [w, x, y, z] = e.rotation;
            let q = Quaternion::new(w, x, y, z);
            if !(q.norm() > 1e-12) || !e.translation.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidConfig("camera: invalid extrinsic".into()));
            }
            Isometry3::from_parts(Translation3::from(Vec3::from(e.translation)), Quat::from_quaternion(q))
        }
        (None, Some(l)) => {
            Camera::look_at(
                Vec3::from(l.eye),
                Vec3::from(l.target),
                Vec3::from(l.up),
                f.fx,
                f.fy,
                f.width,
                f.height,
                f.near,
                f.far,
            )?
            .world_to_camera
        }
        _ => return Err(Error::InvalidConfig("camera: give exactly one of `extrinsic` or `look_at`".into())),
    };
    Camera::new(f.fx, f.fy, cx, cy, f.width, f.height, pose, f.near, f.far)
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    camera_from_json(&std::fs::read_to_string(path)?)
}

pub fn camera_to_json(cam: &Camera) -> Value {
    let q = cam.world_to_camera.rotation.quaternion();
    let t = cam.world_to_camera.translation.vector;
    serde_json::to_value(CameraFile {
        fx: cam.fx,
        fy: cam.fy,
        cx: Some(cam.cx),
        cy: Some(cam.cy),
        width: cam.width,
        height: cam.height,
        near: cam.near,
        far: cam.far,
        extrinsic: Some(Extrinsic { rotation: [q.w, q.i, q.j, q.k], translation: [t.x, t.y, t.z] }),
        look_at: None,
    })
    .expect("camera serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_and_extrinsic_agree() {
        let text = r#"{"fx":100,"fy":100,"width":64,"height":48,"near":0.1,"far":50,
            "look_at":{"eye":[0,0,1],"target":[10,0,1],"up":[0,0,1]}}"#;
        let cam = camera_from_json(text).unwrap();
        assert_eq!((cam.cx, cam.cy), (32.0, 24.0));
        let again = camera_from_json(&camera_to_json(&cam).to_string()).unwrap();
        let p = Vec3::new(7.0, 1.0, 2.0).into();
        assert!((cam.world_to_camera.transform_point(&p) - again.world_to_camera.transform_point(&p)).norm() < 1e-12);
    }

    #[test]
    fn invalid_cameras() {
        let base = |extra: &str| format!(r#"{{"fx":100,"fy":100,"width":64,"height":48,{extra}}}"#);
        assert!(camera_from_json(&base(r#""near":0.1,"far":50"#)).is_err());
        assert!(camera_from_json(&base(
            r#""near":0.0,"far":50,"extrinsic":{"rotation":[1,0,0,0],"translation":[0,0,0]}"#
        ))
        .is_err());
        assert!(camera_from_json(&base(
            r#""near":0.1,"far":50,"extrinsic":{"rotation":[0,0,0,0],"translation":[0,0,0]}"#
        ))
        .is_err());
        assert!(camera_from_json("not json").is_err());
    }
}
