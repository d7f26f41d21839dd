mod common;

use hdrfuse::metrics::{
    evaluate, iou, masked_psnr, psnr, psnr_capped, ssim, EvalRow, Tonemapper, CSV_COLUMNS, PSNR_CAP,
};
use hdrfuse::stack_io::{save_hdr, write_scene, DatasetManifest, MotionMask, Split};
use hdrfuse::{Error, Image, RadianceImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, 3, |_, _, _| rng.random_range(0.0..1.0))
}

/// SSIM from explicit 2-D Gaussian-weighted sums at every window position.
fn ssim_dense(a: &Image, b: &Image, peak: f64) -> f64 {
    const N: usize = 11;
    let sigma = 1.5f64;
    let mut w2 = [[0.0f64; N]; N];
    let mut total = 0.0;
    for (i, row) in w2.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let mut acc = 0.0;
    let mut count = 0;
    for c in 0..a.channels {
        for y0 in 0..=a.height - N {
            for x0 in 0..=a.width - N {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in w2.iter().enumerate() {
                    for (j, &wij) in row.iter().enumerate() {
                        let w = wij / total;
                        let x = a.get(x0 + j, y0 + i, c) as f64;
                        let y = b.get(x0 + j, y0 + i, c) as f64;
                        mx += w * x;
                        my += w * y;
                        sxx += w * x * x;
                        syy += w * y * y;
                        sxy += w * x * y;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    acc / count as f64
}

#[test]
fn ssim_matches_dense_reference() {
    for seed in 0..4 {
        let a = random_image(seed, 16, 16);
        let b = a.map(|v| (v * 0.8 + 0.1).min(1.0));
        let noisy = random_image(seed + 100, 16, 16);
        for other in [&b, &noisy, &a] {
            let fast = ssim(&a, other, 1.0).unwrap();
            let slow = ssim_dense(&a, other, 1.0);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }
    assert!((ssim(&random_image(9, 20, 13), &random_image(9, 20, 13), 1.0).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_needs_a_full_window() {
    let a = random_image(1, 10, 16);
    assert!(matches!(
        ssim(&a, &a, 1.0),
        Err(Error::ImageTooSmall { window: 11, .. })
    ));
}

#[test]
fn psnr_of_uniform_error() {
    let a = Image::filled(8, 8, 3, 0.0);
    for (err, expect) in [(0.1f32, 20.0), (0.01, 40.0)] {
        let b = a.map(|v| v + err);
        let mse = (b.get(0, 0, 0) as f64).powi(2);
        let oracle = 10.0 * (1.0 / mse).log10();
        let got = psnr(&a, &b, 1.0).unwrap();
        assert!((got - oracle).abs() < 1e-9);
        assert!((got - expect).abs() < 1e-6, "{got}");
    }
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    assert_eq!(psnr_capped(&a, &a, 1.0).unwrap(), PSNR_CAP);
    assert!(psnr(&a, &a, 0.0).is_err());
}

#[test]
fn masked_psnr_only_sees_masked_pixels() {
    let a = Image::filled(4, 4, 3, 0.5);
    let mut b = a.clone();
    for c in 0..3 {
        b.set(0, 0, c, 0.6);
        b.set(3, 3, c, 0.0);
    }
    let mut values = vec![0.0; 16];
    values[0] = 1.0;
    values[5] = 1.0;
    let m = MotionMask::new(4, 4, values, 0).unwrap();
    let oracle = 10.0 * (2.0 / (0.1f64 * 0.1)).log10();
    let got = masked_psnr(&a, &b, &m, 1.0).unwrap();
    assert!((got - oracle).abs() < 1e-4, "{got} vs {oracle}");
    assert!(masked_psnr(&a, &b, &MotionMask::zeros(4, 4, 0), 1.0).is_err());
}

#[test]
fn iou_binarizes_at_half() {
    let a = MotionMask::new(2, 2, vec![0.6, 0.4, 1.0, 0.0], 0).unwrap();
    let b = MotionMask::new(2, 2, vec![1.0, 1.0, 0.5, 0.0], 0).unwrap();
    assert!((iou(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(
        iou(&MotionMask::zeros(3, 3, 0), &MotionMask::zeros(3, 3, 0)).unwrap(),
        1.0
    );
    assert!(iou(&a, &MotionMask::zeros(3, 3, 0)).is_err());
}

#[test]
fn rows_normalize_by_ground_truth_peak() {
    let gt = RadianceImage::new(random_image(3, 16, 16).map(|v| v * 40.0)).unwrap();
    let pred = RadianceImage::new(gt.image().map(|v| v * 1.01)).unwrap();
    let row = EvalRow::compute("x", &pred, &gt, &[Tonemapper::MuLaw, Tonemapper::Reinhard]).unwrap();
    let peak = gt.image().max_value();
    let oracle = psnr(&pred.image().map(|v| v / peak), &gt.image().map(|v| v / peak), 1.0).unwrap();
    assert!((row.psnr_l - oracle).abs() < 1e-9);
    assert!(row.psnr_t_mu.is_some() && row.psnr_t_reinhard.is_some() && row.ssim_t_mu.is_some());
    assert!(row.hdr_vdp2.is_none());
    let same = EvalRow::compute("y", &gt, &gt, &[]).unwrap();
    assert_eq!(same.psnr_l, PSNR_CAP);
    assert!((same.ssim_l - 1.0).abs() < 1e-12);
}

#[test]
fn evaluate_reads_predictions_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut manifest = DatasetManifest::new(Split::Val, &data);
    for seed in 0..2 {
        let s = common::scene(seed, 16, &[-2, 0, 2]);
        manifest
            .entries
            .push(write_scene(&s, &data, &format!("scene{seed}")).unwrap());
    }
    manifest.save(&data.join("manifest.json")).unwrap();
    let manifest = DatasetManifest::load(&data.join("manifest.json")).unwrap();
    let preds = dir.path().join("pred");
    std::fs::create_dir_all(&preds).unwrap();
    let s0 = common::scene(0, 16, &[-2, 0, 2]);
    save_hdr(&s0.ground_truth, &preds.join("scene0.pfm")).unwrap();
    assert!(matches!(evaluate(&preds, &manifest, &[]), Err(Error::MissingPrediction(id)) if id == "scene1"));

    let s1 = common::scene(1, 16, &[-2, 0, 2]);
    let off = RadianceImage::new(s1.ground_truth.image().map(|v| v * 0.5)).unwrap();
    save_hdr(&off, &preds.join("scene1.pfm")).unwrap();
    let report = evaluate(&preds, &manifest, &[Tonemapper::MuLaw]).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0].psnr_l, PSNR_CAP);
    assert!(report.rows[1].psnr_l < 40.0);
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}
