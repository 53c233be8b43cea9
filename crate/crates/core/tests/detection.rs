use destripe_core::simulate::{degrade, generate_stripe_field, make_phantom, StripeModel};
use destripe_core::spectral::{
    bin_polar, build_annuli, corruption_mask, corruption_matrix, detect_stripe_direction,
    forward_spectrum, wedge_mask, DOMINANCE_THRESHOLD,
};
use destripe_core::{RunConfig, StripeAxis, Volume};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SHAPE: (usize, usize, usize) = (8, 64, 64);

fn striped(direction: f64, seed: u64) -> (Volume, Volume) {
    let x = make_phantom(SHAPE, seed).unwrap();
    let model = StripeModel {
        direction_deg: direction,
        ..StripeModel::default()
    };
    let s = generate_stripe_field(SHAPE, &model, seed + 1).unwrap();
    (x.clone(), degrade(&x, &s).unwrap())
}

fn detect(v: &Volume) -> destripe_core::spectral::DirectionEstimate {
    let cfg = RunConfig::default();
    let s = forward_spectrum(v);
    let a = build_annuli(SHAPE.1, SHAPE.2, cfg.annulus_width_px);
    detect_stripe_direction(&s, &a, cfg.dc_guard_radius_px)
}

#[test]
fn finds_vertical_and_horizontal_stripes() {
    for seed in [42u64, 7, 100] {
        let v = detect(&striped(90.0, seed).1);
        eprintln!("vertical seed {seed}: {v:?}");
        assert_eq!(v.stripe_degrees, 90.0);
        assert_eq!(v.spectral_degrees, 0.0);
        assert!(v.dominant);
        let h = detect(&striped(0.0, seed).1);
        eprintln!("horizontal seed {seed}: {h:?}");
        assert_eq!(h.stripe_degrees, 0.0);
        assert!(h.dominant);
    }
}

#[test]
fn finds_oblique_stripes() {
    let v = detect(&striped(60.0, 42).1);
    eprintln!("oblique: {v:?}");
    let err = (v.stripe_degrees - 60.0).abs();
    assert!(err <= 2.0, "{v:?}");
}

/// Rotates every slice by 90 degrees.
fn rotate(v: &Volume) -> Volume {
    let r = v.data.view().permuted_axes([0, 2, 1]);
    Volume::from_array(r.slice(ndarray::s![.., .., ..;-1]).to_owned()).unwrap()
}

#[test]
fn rotating_the_input_swaps_the_direction() {
    for direction in [90.0, 60.0] {
        let (_, y) = striped(direction, 42);
        let before = detect(&y).stripe_degrees;
        let after = detect(&rotate(&y)).stripe_degrees;
        let turned = (after - before).rem_euclid(180.0);
        assert!(
            (turned - 90.0).abs() <= 2.0,
            "{direction}: {before} -> {after}"
        );
    }
}

#[test]
fn isotropic_noise_has_no_dominant_direction() {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn(SHAPE, |_| StandardNormal.sample(&mut rng));
        let est = detect(&Volume::from_array(data).unwrap());
        worst = worst.max(est.confidence);
        assert!(!est.dominant, "seed {seed}: {est:?}");
    }
    eprintln!("largest null confidence {worst:.2} (threshold {DOMINANCE_THRESHOLD})");
}

#[test]
fn clean_phantom_masks_almost_nothing() {
    let cfg = RunConfig::default();
    for seed in [42u64, 1, 2, 3] {
        let x = make_phantom(SHAPE, seed).unwrap();
        let s = forward_spectrum(&x);
        let a = build_annuli(SHAPE.1, SHAPE.2, cfg.annulus_width_px);
        let field = corruption_mask(&corruption_matrix(&s, &a), &cfg, StripeAxis::Vertical);
        let frac = field.masked_count() as f64 / x.data.len() as f64;
        eprintln!("clean seed {seed}: masked fraction {frac:.5}");
        assert!(frac < 1e-3, "seed {seed}: {frac}");
    }
}

#[test]
fn striped_phantom_masks_inside_the_wedge() {
    let cfg = RunConfig::default();
    let (_, y) = striped(90.0, 42);
    let s = forward_spectrum(&y);
    let a = build_annuli(SHAPE.1, SHAPE.2, cfg.annulus_width_px);
    let field = corruption_mask(&corruption_matrix(&s, &a), &cfg, StripeAxis::Vertical);
    eprintln!("striped: {} masked", field.masked_count());
    assert!(field.masked_count() > 0);
    for ((_, i, j), &m) in field.mask.indexed_iter() {
        if m {
            assert!(field.wedge[[i, j]]);
            assert!(bin_polar(i, j, SHAPE.1, SHAPE.2).0 > cfg.dc_guard_radius_px as f64);
        }
    }
}

#[test]
fn stripe_energy_concentrates_in_the_wedge() {
    let cfg = RunConfig::default();
    for seed in [42u64, 5, 9] {
        let (x, y) = striped(90.0, seed);
        let diff = y.with_data(&y.data - &x.data);
        let s = forward_spectrum(&diff);
        let wedge = wedge_mask(
            SHAPE.1,
            SHAPE.2,
            StripeAxis::Vertical,
            cfg.wedge_half_angle_deg,
        );
        let mut inside = 0.0;
        let mut total = 0.0;
        for ((_, i, j), c) in s.coeffs.indexed_iter() {
            total += c.norm_sqr();
            if wedge[[i, j]] {
                inside += c.norm_sqr();
            }
        }
        eprintln!("seed {seed}: wedge energy fraction {:.3}", inside / total);
        assert!(inside / total >= 0.7);
    }
}
