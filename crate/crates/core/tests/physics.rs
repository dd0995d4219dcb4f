mod common;

use asnet_core::beamform::{das_reconstruct, delay_index};
use asnet_core::metrics::ssim;
use asnet_core::simulate::{forward_project, gen_phantom, transducer_wavelet, PhantomConfig};
use asnet_core::{ImageGrid, RawSignalMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{main_zero_crossing, point_source_errors, ring_geometry};

fn random_sparse_image(n: usize, fov: f64, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = ImageGrid::zeros(n, fov);
    for _ in 0..6 {
        // column 0 is left empty so quarter rotations stay on the grid
        img.set(
            rng.gen_range(2..n - 2),
            rng.gen_range(2..n - 2),
            rng.gen_range(0.2..1.0),
        );
    }
    img
}

fn max_abs(v: &[f32]) -> f32 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn assert_close(got: &[f32], want: &[f32], rel: f32) {
    assert_eq!(got.len(), want.len());
    let scale = max_abs(want).max(f32::MIN_POSITIVE);
    for (i, (a, b)) in got.iter().zip(want).enumerate() {
        assert!(
            (a - b).abs() <= rel * scale,
            "index {i}: {a} vs {b} (scale {scale})"
        );
    }
}

fn combine(a: f32, x: &[f32], b: f32, y: &[f32]) -> Vec<f32> {
    x.iter().zip(y).map(|(u, v)| a * u + b * v).collect()
}

#[test]
fn center_source_crosses_zero_at_time_of_flight() {
    let geom = ring_geometry(32, 128);
    let mut img = ImageGrid::zeros(128, geom.fov_m);
    img.set(64, 64, 1.0);
    let sig = forward_project(&img, &geom, 1024).unwrap();
    let first = sig.channel(0);
    for j in 0..32 {
        let ch = sig.channel(j);
        assert!(
            (main_zero_crossing(&ch) - 480.0).abs() <= 0.5,
            "channel {j}"
        );
        assert_close(&ch, &first, 1e-4);
    }
}

#[test]
fn pulse_peaks_near_each_delay() {
    let geom = ring_geometry(16, 64);
    let half = transducer_wavelet(&geom).half_support() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let (row, col) = (rng.gen_range(0..64), rng.gen_range(0..64));
        let mut img = ImageGrid::zeros(64, geom.fov_m);
        img.set(row, col, 1.0);
        let sig = forward_project(&img, &geom, 900).unwrap();
        let xy = geom.pixel_position(row, col);
        for j in 0..16 {
            let ch = sig.channel(j);
            let peak = (0..ch.len())
                .max_by(|&a, &b| ch[a].abs().total_cmp(&ch[b].abs()))
                .unwrap();
            let delay = delay_index(xy, j, &geom);
            assert!(
                (peak as f64 - delay).abs() <= half + 1.0,
                "({row},{col}) element {j}: {peak} vs {delay}"
            );
        }
    }
}

#[test]
fn forward_projection_is_linear() {
    let geom = ring_geometry(16, 32);
    let x = random_sparse_image(32, geom.fov_m, 1);
    let y = random_sparse_image(32, geom.fov_m, 2);
    let (a, b) = (0.7f32, -1.3f32);
    let xy = ImageGrid::from_vec(32, geom.fov_m, combine(a, &x.data, b, &y.data)).unwrap();
    let fx = forward_project(&x, &geom, 900).unwrap();
    let fy = forward_project(&y, &geom, 900).unwrap();
    let fxy = forward_project(&xy, &geom, 900).unwrap();
    assert_close(&fxy.data, &combine(a, &fx.data, b, &fy.data), 1e-5);
}

/// Signal of a 4-element ring with channels shifted one element forward.
fn shift_channels(s: &RawSignalMatrix) -> RawSignalMatrix {
    let mut out = RawSignalMatrix::zeros(s.m, s.n, s.fs_hz);
    for t in 0..s.m {
        for k in 0..s.n {
            out.set(t, (k + 1) % s.n, s.get(t, k));
        }
    }
    out
}

#[test]
fn quarter_rotation_permutes_channels() {
    let geom = ring_geometry(4, 32);
    for seed in 0..3 {
        let img = random_sparse_image(32, geom.fov_m, seed);
        let s = forward_project(&img, &geom, 900).unwrap();
        let rotated = forward_project(&img.rotated_quarter(), &geom, 900).unwrap();
        assert_close(&rotated.data, &shift_channels(&s).data, 1e-4);
    }
}

#[test]
fn das_rotates_with_the_channels() {
    let geom = ring_geometry(4, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = (0..600 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s = RawSignalMatrix::from_vec(600, 4, geom.fs_hz, data).unwrap();
    let image = das_reconstruct(&s, &geom).unwrap().rotated_quarter();
    let shifted = das_reconstruct(&shift_channels(&s), &geom).unwrap();
    // row 0 of the rotated image has no source pixel
    assert_close(&shifted.data[32..], &image.data[32..], 1e-4);
}

#[test]
fn das_is_linear() {
    let geom = ring_geometry(8, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut signal = || {
        let data = (0..600 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        RawSignalMatrix::from_vec(600, 8, geom.fs_hz, data).unwrap()
    };
    let (x, y) = (signal(), signal());
    let (a, b) = (2.0f32, -0.5f32);
    let xy =
        RawSignalMatrix::from_vec(600, 8, geom.fs_hz, combine(a, &x.data, b, &y.data)).unwrap();
    let dx = das_reconstruct(&x, &geom).unwrap();
    let dy = das_reconstruct(&y, &geom).unwrap();
    let dxy = das_reconstruct(&xy, &geom).unwrap();
    assert_close(&dxy.data, &combine(a, &dx.data, b, &dy.data), 1e-5);
}

#[test]
fn das_localizes_point_sources() {
    let errors = point_source_errors(&ring_geometry(32, 64), 900, 10, 21);
    assert!(errors.iter().all(|&e| e <= 1), "{errors:?}");
}

#[test]
fn sparse_das_is_worse_than_dense() {
    let sparse = ring_geometry(32, 64);
    let dense = sparse.with_elements(128).unwrap();
    let cfg = PhantomConfig::for_grid(64, 17);
    let (mut s_sum, mut d_sum) = (0.0, 0.0);
    for i in 0..4 {
        let truth = gen_phantom(&cfg, 64, sparse.fov_m, i);
        let recon = |g| {
            das_reconstruct(&forward_project(&truth, g, 900).unwrap(), g)
                .unwrap()
                .normalized()
        };
        s_sum += ssim(&recon(&sparse), &truth).unwrap();
        d_sum += ssim(&recon(&dense), &truth).unwrap();
    }
    assert!(
        s_sum < d_sum,
        "sparse {} vs dense {}",
        s_sum / 4.0,
        d_sum / 4.0
    );
}
