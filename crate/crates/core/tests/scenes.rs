use std::path::{Path, PathBuf};

use neai::fields::Material;
use neai::image::Image;
use neai::math::Vec3;
use neai::renderer::{look_at, Camera};
use neai::scenes::io::{c2w_flat, depth_normal_consistency, Bounds, FrameEntry, Intrinsics, CONVENTION};
use neai::scenes::*;
use neai::Error;

fn entry(k: usize, c2w: [f64; 16], split: Split) -> FrameEntry {
    let p = |dir: &str, ext: &str| PathBuf::from(format!("{dir}/{k:03}.{ext}"));
    FrameEntry {
        image: p("rgb", "png"),
        mask: p("mask", "png"),
        depth: p("depth", "f32r"),
        normal: p("normal", "f32r"),
        c2w,
        split,
    }
}

fn intrinsics(w: u32, h: u32) -> Intrinsics {
    Intrinsics {
        fx: 10.0,
        fy: 12.0,
        cx: 4.0,
        cy: 3.0,
        width: w,
        height: h,
    }
}

/// Frame whose tensors survive 8-bit and f32 storage exactly.
fn storable_frame(k: usize, cam: Camera) -> Frame {
    let n = cam.pixel_count();
    let q = |v: u32| (v % 256) as f64 / 255.0;
    let image = Image {
        width: cam.width,
        height: cam.height,
        data: (0..n as u32)
            .map(|p| Vec3::new(q(p * 7 + k as u32), q(p * 13), q(p * 31 + 5)))
            .collect(),
    };
    let mask = (0..n).map(|p| !(p + k).is_multiple_of(3)).collect();
    let depth = (0..n).map(|p| 1.0 + p as f32 as f64 * 0.25).collect();
    let normal = (0..n)
        .map(|p| {
            let t = p as f32 * 0.1;
            Vec3::new(t.cos() as f64, t.sin() as f64, 0.0)
        })
        .collect();
    Frame {
        name: String::new(),
        camera: cam,
        image,
        mask,
        depth,
        normal,
        split: if k == 0 { Split::Test } else { Split::Train },
    }
}

fn manifest(entries: Vec<FrameEntry>, w: u32, h: u32) -> SceneManifest {
    SceneManifest {
        convention: CONVENTION.into(),
        intrinsics: intrinsics(w, h),
        bounds: Bounds {
            center: Vec3::ZERO,
            radius: 1.0,
        },
        frames: entries,
        source: None,
    }
}

fn write_one_frame(dir: &Path, c2w: [f64; 16]) -> SceneManifest {
    let i = intrinsics(8, 6);
    let mut m4 = [[0.0; 4]; 4];
    for r in 0..4 {
        m4[r].copy_from_slice(&c2w[4 * r..4 * r + 4]);
    }
    let identity = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let cam = Camera::new(i.fx, i.fy, i.cx, i.cy, i.width, i.height, identity).unwrap();
    let m = manifest(vec![entry(0, c2w, Split::Train)], i.width, i.height);
    save_scene(dir, &m, &[storable_frame(1, cam)]).unwrap();
    m
}

fn scene_error(result: neai::Result<Dataset>) -> (String, String) {
    match result {
        Err(Error::SceneLoad { frame, reason }) => (frame, reason),
        Err(e) => panic!("expected a scene load error, got {e}"),
        Ok(_) => panic!("expected a scene load error"),
    }
}

#[test]
fn synthetic_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (8, 6);
    let i = intrinsics(w, h);
    let eyes = [
        Vec3::new(0.0, 0.5, 3.0),
        Vec3::new(2.0, 1.0, -1.0),
        Vec3::new(-1.5, 2.0, 0.5),
    ];
    let mut frames = Vec::new();
    let mut entries = Vec::new();
    for (k, eye) in eyes.into_iter().enumerate() {
        let pose = look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0)).unwrap();
        let cam = Camera::new(i.fx, i.fy, i.cx, i.cy, w, h, pose).unwrap();
        let f = storable_frame(k, cam);
        entries.push(entry(k, c2w_flat(&pose), f.split));
        frames.push(f);
    }
    let m = manifest(entries, w, h);
    save_scene(dir.path(), &m, &frames).unwrap();
    let ds = load_scene(dir.path()).unwrap();
    assert_eq!(ds.manifest, m);
    assert_eq!(ds.frames.len(), frames.len());
    for (a, b) in ds.frames.iter().zip(&frames) {
        assert_eq!(a.camera, b.camera);
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.normal, b.normal);
        assert_eq!(a.split, b.split);
    }
    assert_eq!(ds.split(Split::Test).count(), 1);
}

#[test]
fn one_frame_scene_back_projects_principal_point() {
    let dir = tempfile::tempdir().unwrap();
    let pose = look_at(
        Vec3::new(1.0, 2.0, 3.0),
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
    )
    .unwrap();
    write_one_frame(dir.path(), c2w_flat(&pose));
    let ds = load_scene(&dir.path().join("scene.json")).unwrap();
    let cam = &ds.frames[0].camera;
    let axis = Vec3::new(-pose[0][2], -pose[1][2], -pose[2][2]);
    let (o, d) = cam.ray_at(cam.cx, cam.cy);
    let depth = 2.75;
    let p = o + d * depth;
    let expected = cam.center() + axis * depth;
    assert!((p - expected).norm() < 1e-12, "{p:?} vs {expected:?}");
    let (u, v) = cam.project(p).unwrap();
    assert!((u - cam.cx).abs() < 1e-9 && (v - cam.cy).abs() < 1e-9);
}

#[test]
fn corrupted_transform_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c2w = c2w_flat(&[
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);
    c2w[4..8].copy_from_slice(&[0.0; 4]);
    write_one_frame(dir.path(), c2w);
    let (frame, reason) = scene_error(load_scene(dir.path()));
    assert!(frame.starts_with("frame 0"), "{frame}");
    assert!(reason.contains("camera"), "{reason}");
}

#[test]
fn missing_and_mismatched_rasters_name_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let pose = look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0)).unwrap();
    write_one_frame(dir.path(), c2w_flat(&pose));
    Raster::new(2, 2, 1, vec![1.0; 4])
        .unwrap()
        .save(&dir.path().join("depth/000.f32r"))
        .unwrap();
    let (frame, reason) = scene_error(load_scene(dir.path()));
    assert!(frame.contains("rgb/000.png"), "{frame}");
    assert!(reason.contains("depth is 2x2"), "{reason}");

    std::fs::remove_file(dir.path().join("normal/000.f32r")).unwrap();
    Raster::new(8, 6, 1, vec![1.0; 48])
        .unwrap()
        .save(&dir.path().join("depth/000.f32r"))
        .unwrap();
    let (frame, _) = scene_error(load_scene(dir.path()));
    assert!(frame.starts_with("frame 0"));
}

#[test]
fn bad_manifests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pose = look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0)).unwrap();
    let m = write_one_frame(dir.path(), c2w_flat(&pose));
    let path = dir.path().join("scene.json");

    let mut v = serde_json::to_value(&m).unwrap();
    v["convention"] = "opencv".into();
    std::fs::write(&path, v.to_string()).unwrap();
    let (frame, reason) = scene_error(load_scene(dir.path()));
    assert_eq!(frame, "manifest");
    assert!(reason.contains("convention"));

    let mut v = serde_json::to_value(&m).unwrap();
    v["extra"] = 1.into();
    std::fs::write(&path, v.to_string()).unwrap();
    assert_eq!(scene_error(load_scene(dir.path())).0, "manifest");

    let mut v = serde_json::to_value(&m).unwrap();
    v["frames"] = serde_json::json!([]);
    std::fs::write(&path, v.to_string()).unwrap();
    assert_eq!(scene_error(load_scene(dir.path())).1, "no frames");
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        width: 24,
        height: 24,
        n_train: 2,
        n_test: 1,
        n_dense: 128,
        ..SynthConfig::default()
    }
}

#[test]
fn synthetic_depth_and_normals_agree() {
    let cfg = small_synth();
    for k in 0..3 {
        let f = cfg.frame(k).unwrap();
        let ok = depth_normal_consistency(&f, 15.0).unwrap();
        assert!(ok >= 0.95, "view {k}: {ok}");
    }
}

#[test]
fn generated_scene_loads_with_its_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synth();
    let m = generate_synth(&cfg, dir.path()).unwrap();
    let ds = load_scene(dir.path()).unwrap();
    assert_eq!(ds.manifest, m);
    assert_eq!(ds.split(Split::Train).count(), 2);
    assert_eq!(ds.split(Split::Test).count(), 1);
    let f = cfg.frame(2).unwrap();
    assert_eq!(ds.frames[2].mask, f.mask);
    assert_eq!(
        ds.frames[2].image,
        Image::from_rgb8(f.image.width, f.image.height, &f.image.to_rgb8()).unwrap()
    );
}

#[test]
fn lambertian_object_shows_its_diffuse_colour() {
    let mut cfg = small_synth();
    let diffuse = Vec3::new(0.2, 0.4, 0.6);
    cfg.object.material = AnalyticMaterial::Uniform {
        material: Material {
            rho: 0.3,
            diffuse,
            alpha: 0.0,
        },
    };
    cfg.object.gamma = 2.2;
    let f = cfg.frame(0).unwrap();
    let expected = Vec3::new(0.2f64.powf(1.0 / 2.2), 0.4f64.powf(1.0 / 2.2), 0.6f64.powf(1.0 / 2.2));
    let mut hits = 0;
    for (k, c) in f.image.data.iter().enumerate() {
        if f.mask[k] {
            hits += 1;
            assert!((*c - expected).norm() < 1e-12, "{c:?}");
        }
    }
    assert!(hits > 0);
}

#[test]
fn empty_environment_renders_black() {
    let cfg = small_synth();
    let cam = cfg.camera(0).unwrap();
    let empty = preset("empty").unwrap();
    let img = analytic_render(&empty, None, &cam, 64, &cfg.render, 1.0).unwrap();
    assert!(img.data.iter().all(|c| *c == Vec3::ZERO));
}

#[test]
fn analytic_render_is_deterministic() {
    let cfg = small_synth();
    let cam = cfg.camera(1).unwrap();
    let a = analytic_render(&cfg.environment, Some(&cfg.object), &cam, 64, &cfg.render, 1.0).unwrap();
    let b = analytic_render(&cfg.environment, Some(&cfg.object), &cam, 64, &cfg.render, 1.0).unwrap();
    assert_eq!(a, b);
}
