mod common;

use std::fs;

use common::{dense_framelet, dense_projector, max_abs_diff};
use ctlab::framelet::FrameletSystem;
use ctlab::grid::{psnr, ImageGrid, Sinogram};
use ctlab::phantom::{derive_seeds, generate_dataset, generate_samples, render_ellipses, Ellipse, Manifest, NoiseModel, PhantomSpec};
use ctlab::projector::{back_project, forward_project, ProjectionGeometry};
use ctlab::Error;
use nalgebra::{DMatrix, DVector};

#[test]
fn disk_projections_match_chord_lengths() {
    // A centred disk of radius r projects to 2 sqrt(r^2 - s^2) at every angle.
    let n = 64;
    let r = 20.0;
    let disk = ImageGrid::from_fn(n, |i, j| {
        let y = i as f64 + 0.5 - n as f64 / 2.0;
        let x = j as f64 + 0.5 - n as f64 / 2.0;
        if x * x + y * y <= r * r { 1.0 } else { 0.0 }
    })
    .unwrap();
    let geom = ProjectionGeometry::new(n, 36).unwrap();
    let sino = forward_project(&disk, &geom, &geom.all_angles()).unwrap();
    let mut worst: f64 = 0.0;
    for row in 0..sino.num_rows() {
        for (m, v) in sino.row(row).iter().enumerate() {
            let s = m as f64 + 0.5 - geom.detectors as f64 / 2.0;
            if s.abs() < r - 4.0 {
                let chord = 2.0 * (r * r - s * s).sqrt();
                worst = worst.max((v - chord).abs() / chord);
            }
        }
    }
    assert!(worst < 0.05, "worst relative chord error {worst}");
}

#[test]
fn back_projection_is_the_dense_transpose() {
    let geom = ProjectionGeometry::new(16, 20).unwrap();
    let angles = vec![0, 3, 7, 10, 19];
    let a = dense_projector(&geom, &angles);
    let data: Vec<f64> = (0..angles.len() * geom.detectors).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
    let f = Sinogram::noiseless(angles, geom.detectors, data.clone()).unwrap();
    let atf = back_project(&f, &geom).unwrap();
    let dense = a.transpose() * DVector::from_vec(data);
    assert!(max_abs_diff(atf.data(), dense.as_slice()) < 1e-12);
}

#[test]
fn dense_framelet_is_a_tight_frame_per_level() {
    let n = 8;
    for levels in 1..=3 {
        let w = dense_framelet(n, &FrameletSystem::new(levels).unwrap());
        let npix = n * n;
        let gram = w.transpose() * &w;
        assert!(max_abs_diff(gram.as_slice(), DMatrix::<f64>::identity(npix, npix).as_slice()) < 1e-12);
        let per_level = 9 * npix;
        for l in 0..levels {
            let wl = w.rows(l * per_level, per_level);
            let expected = DMatrix::<f64>::identity(npix, npix) / levels as f64;
            assert!(max_abs_diff((wl.transpose() * wl).as_slice(), expected.as_slice()) < 1e-12);
        }
    }
}

#[test]
fn psnr_of_a_constant_offset() {
    let a = ImageGrid::from_fn(16, |i, j| ((i + j) % 5) as f64 / 5.0).unwrap();
    let b = ImageGrid::from_fn(16, |i, j| a.get(i, j) + 0.1).unwrap();
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&a, &a).unwrap(), 99.0);
}

#[test]
fn noise_has_the_requested_moments() {
    let geom = ProjectionGeometry::new(64, 180).unwrap();
    let img = render_ellipses(
        64,
        &[Ellipse { intensity: 0.5, semi_x: 0.6, semi_y: 0.4, center_x: 0.1, center_y: 0.0, angle: 0.3 }],
    )
    .unwrap();
    let clean = forward_project(&img, &geom, &geom.all_angles()).unwrap();
    let noisy = NoiseModel { sigma: 0.2 }.apply(&clean, 11).unwrap();
    let diff: Vec<f64> = noisy.data().iter().zip(clean.data()).map(|(a, b)| a - b).collect();
    let n = diff.len() as f64;
    let mean = diff.iter().sum::<f64>() / n;
    let std = (diff.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((std - 0.2).abs() < 0.006, "std {std}");
    assert!(noisy.sigmas().iter().all(|&s| s == 0.2));
    assert_eq!(NoiseModel::NONE.apply(&clean, 11).unwrap().data(), clean.data());
}

#[test]
fn datasets_are_deterministic_and_reload_exactly() {
    let geom = ProjectionGeometry::new(32, 24).unwrap();
    let specs: Vec<PhantomSpec> =
        derive_seeds(3, 5).into_iter().map(|s| PhantomSpec::random_ellipses(32, (1, 4), s)).collect();
    let noise = NoiseModel { sigma: 0.1 };
    let angles = geom.all_angles();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_dataset(&specs, &geom, noise, &angles, a.path()).unwrap();
    generate_dataset(&specs, &geom, noise, &angles, b.path()).unwrap();
    for rel in ["manifest.csv", "images/0002.tgrd", "sinos/0004.tgrd", "sinos/0004.tgrd.angles"] {
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
    let loaded = Manifest::read(a.path()).unwrap().load_samples().unwrap();
    assert_eq!(loaded, generate_samples(&specs, &geom, noise, &angles).unwrap());

    let clean = generate_samples(&specs, &geom, NoiseModel::NONE, &angles).unwrap();
    for s in &clean {
        let direct = forward_project(s.image.as_ref().unwrap(), &geom, &angles).unwrap();
        assert_eq!(s.sino.data(), direct.data());
    }
}

#[test]
fn corrupt_grid_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.tgrd");
    ImageGrid::zeros(8).unwrap().save(&path).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(ImageGrid::load(&path), Err(Error::Format { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    fs::write(&path, bad).unwrap();
    assert!(matches!(ImageGrid::load(&path), Err(Error::Format { .. })));
    assert!(matches!(ImageGrid::load(dir.path().join("absent.tgrd")), Err(Error::Io { .. })));
}
