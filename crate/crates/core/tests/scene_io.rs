use splatbalance::scene::{load_scene, save_scene, Scene};
use splatbalance::workload::gen_random_scene;
use splatbalance::Error;

#[test]
fn round_trip_is_bit_exact() {
    let scene = gen_random_scene(100, [64, 48], 11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    save_scene(&scene, &path).unwrap();
    let back = load_scene(&path).unwrap();
    assert_eq!(back, scene);
    for (a, b) in scene.gaussians.iter().zip(&back.gaussians) {
        for (x, y) in a.mean.iter().chain(&a.scale).zip(b.mean.iter().chain(&b.scale)) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

fn base_json() -> serde_json::Value {
    serde_json::from_str(&gen_random_scene(3, [32, 16], 1).to_json_string()).unwrap()
}

fn parse(v: &serde_json::Value) -> Result<Scene, Error> {
    Scene::from_json_str(&v.to_string())
}

#[test]
fn missing_field_reports_path() {
    let mut v = base_json();
    v["gaussians"][1].as_object_mut().unwrap().remove("opacity");
    match parse(&v) {
        Err(Error::Parse { path, message }) => {
            assert_eq!(path, "gaussians[1]");
            assert!(message.contains("opacity"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn wrong_type_reports_path() {
    let mut v = base_json();
    v["camera"]["focal"][0] = "wide".into();
    match parse(&v) {
        Err(Error::Parse { path, .. }) => assert_eq!(path, "camera.focal[0]"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn non_unit_quaternion_is_rejected() {
    let mut v = base_json();
    v["gaussians"][2]["rot"] = serde_json::json!([1.0, 0.5, 0.0, 0.0]);
    assert!(matches!(parse(&v), Err(Error::InvalidGaussian { index: 2, .. })));
}

#[test]
fn non_positive_scale_is_rejected() {
    let mut v = base_json();
    v["gaussians"][0]["scale"][1] = 0.0.into();
    assert!(matches!(parse(&v), Err(Error::InvalidGaussian { index: 0, .. })));
}

#[test]
fn opacity_out_of_range_is_rejected() {
    let mut v = base_json();
    v["gaussians"][0]["opacity"] = 1.5.into();
    assert!(matches!(parse(&v), Err(Error::InvalidGaussian { index: 0, .. })));
}

#[test]
fn skewed_view_rotation_is_rejected() {
    let mut v = base_json();
    v["camera"]["view"][0] = 1.1.into();
    assert!(matches!(parse(&v), Err(Error::InvalidCamera(_))));
}

#[test]
fn zero_dims_and_patch_are_rejected() {
    let mut v = base_json();
    v["camera"]["dims"] = serde_json::json!([0, 16]);
    assert!(matches!(parse(&v), Err(Error::InvalidCamera(_))));
    let mut v = base_json();
    v["config"]["patch"] = serde_json::json!([16, 0]);
    assert!(matches!(parse(&v), Err(Error::InvalidConfig(_))));
}

#[test]
fn trailing_garbage_is_rejected() {
    let text = format!("{} extra", base_json());
    assert!(matches!(Scene::from_json_str(&text), Err(Error::Parse { .. })));
}

#[test]
fn config_block_is_optional() {
    let mut v = base_json();
    v.as_object_mut().unwrap().remove("config");
    let scene = parse(&v).unwrap();
    assert_eq!(scene.config.patch, [16, 8]);
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_scene(dir.path().join("nope.json")), Err(Error::Io { .. })));
}
