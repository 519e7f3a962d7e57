mod common;

use adjprior_core::metrics::{dice_score, evaluate, hd95_mm, label_volume_cm3, volumetric_error};
use adjprior_core::volume::{GridDims, LabelMap, Spacing};
use adjprior_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut impl Rng, dims: GridDims, spacing: Spacing, density: f64) -> LabelMap {
    let v = (0..dims.len())
        .map(|_| rng.gen_bool(density) as u16)
        .collect();
    LabelMap::new(dims, spacing, 2, v).unwrap()
}

fn shifted(lab: &LabelMap, by: (usize, usize, usize), out: GridDims) -> LabelMap {
    let dims = lab.dims();
    let mut o = LabelMap::zeros(out, lab.spacing(), lab.num_classes()).unwrap();
    for z in 0..dims.d {
        for y in 0..dims.w {
            for x in 0..dims.h {
                o.set(x + by.0, y + by.1, z + by.2, lab.get(x, y, z));
            }
        }
    }
    o
}

#[test]
fn hd95_equals_all_pairs_oracle_on_12_cubes() {
    let dims = GridDims::cube(12).unwrap();
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spacing = if seed % 3 == 0 {
            Spacing::new(0.8, 1.0, 2.5).unwrap()
        } else {
            Spacing::unit()
        };
        let (a, b) = if seed % 2 == 0 {
            let density = rng.gen_range(0.02..0.5);
            (
                random_mask(&mut rng, dims, spacing, 0.3),
                random_mask(&mut rng, dims, spacing, density),
            )
        } else {
            (
                common::random_blocks(&mut rng, dims, spacing, 2, 3),
                common::random_blocks(&mut rng, dims, spacing, 2, 3),
            )
        };
        assert_eq!(
            hd95_mm(&a, &b, 1).unwrap(),
            common::brute_hd95(&a, &b, 1),
            "seed {seed}"
        );
    }
}

#[test]
fn volume_examples() {
    let dims = GridDims::cube(10).unwrap();
    let full = LabelMap::new(dims, Spacing::unit(), 2, vec![1; 1000]).unwrap();
    assert_eq!(label_volume_cm3(&full, 1).unwrap(), 1.0);
    assert_eq!(label_volume_cm3(&full, 0).unwrap(), 0.0);
    let one = LabelMap::new(
        GridDims::cube(1).unwrap(),
        Spacing::isotropic(10.0).unwrap(),
        2,
        vec![1],
    )
    .unwrap();
    assert_eq!(label_volume_cm3(&one, 1).unwrap(), 1.0);
    assert!(matches!(
        label_volume_cm3(&one, 2),
        Err(Error::LabelOutOfRange { .. })
    ));
}

#[test]
fn volumetric_error_examples() {
    let (e, p) = volumetric_error(100.0, 90.0);
    assert!((e - 10.0).abs() < 1e-12 && (p.unwrap() - 10.0).abs() < 1e-12);
    assert_eq!(volumetric_error(50.0, 50.0), (0.0, Some(0.0)));
    assert_eq!(volumetric_error(0.0, 5.0), (5.0, None));
}

#[test]
fn dice_examples() {
    let dims = GridDims::new(4, 1, 1).unwrap();
    let lab = |v: [u16; 4]| LabelMap::new(dims, Spacing::unit(), 2, v.to_vec()).unwrap();
    let a = lab([1, 1, 0, 0]);
    assert_eq!(dice_score(&a, &a, 1).unwrap(), Some(1.0));
    assert_eq!(dice_score(&a, &lab([0, 0, 1, 1]), 1).unwrap(), Some(0.0));
    assert_eq!(dice_score(&a, &lab([0, 1, 1, 0]), 1).unwrap(), Some(0.5));
    let empty = lab([0; 4]);
    assert_eq!(dice_score(&empty, &empty, 1).unwrap(), None);
}

#[test]
fn hd95_examples() {
    let dims = GridDims::new(8, 1, 1).unwrap();
    let mut a = LabelMap::zeros(dims, Spacing::unit(), 2).unwrap();
    let mut b = a.clone();
    a.set(1, 0, 0, 1);
    b.set(6, 0, 0, 1);
    assert_eq!(hd95_mm(&a, &a, 1).unwrap(), Some(0.0));
    assert_eq!(hd95_mm(&a, &b, 1).unwrap(), Some(5.0));
    let empty = LabelMap::zeros(dims, Spacing::unit(), 2).unwrap();
    assert_eq!(hd95_mm(&a, &empty, 1).unwrap(), None);
    let other = LabelMap::zeros(GridDims::new(7, 1, 1).unwrap(), Spacing::unit(), 2).unwrap();
    assert!(matches!(
        hd95_mm(&a, &other, 1),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn report_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dims = GridDims::cube(10).unwrap();
    let gt = common::random_blocks(&mut rng, dims, Spacing::unit(), 4, 6);
    let r = evaluate(&gt, &gt).unwrap();
    assert_eq!(r.labels.len(), 3);
    for m in &r.labels {
        if gt.count(m.label) > 0 {
            assert_eq!(
                (m.dsc, m.hd95_mm, m.err_cm3, m.err_pct),
                (Some(1.0), Some(0.0), 0.0, Some(0.0))
            );
        }
    }

    let mut gt = LabelMap::zeros(dims, Spacing::unit(), 3).unwrap();
    gt.set(2, 2, 2, 1);
    let pred = LabelMap::zeros(dims, Spacing::unit(), 3).unwrap();
    let r = evaluate(&gt, &pred).unwrap();
    let absent = &r.labels[0];
    assert_eq!(
        (absent.dsc, absent.hd95_mm, absent.err_pct),
        (Some(0.0), None, Some(100.0))
    );
    let neither = &r.labels[1];
    assert_eq!(
        (neither.dsc, neither.vol_gt_cm3, neither.vol_pred_cm3),
        (None, 0.0, 0.0)
    );
}

#[test]
fn digitized_sphere_volume() {
    let r = 10.0;
    let ball = common::ball(25, r, Spacing::unit());
    let measured = label_volume_cm3(&ball, 1).unwrap() * 1000.0;
    let analytic = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
    assert!(
        (measured - analytic).abs() / analytic < 0.05,
        "{measured} vs {analytic}"
    );
}

#[test]
fn concentric_spheres_distance() {
    // surfaces of concentric digitized balls sit about r1 - r2 apart
    let a = common::ball(31, 12.0, Spacing::unit());
    let b = common::ball(31, 8.0, Spacing::unit());
    let d = hd95_mm(&a, &b, 1).unwrap().unwrap();
    assert!((d - 4.0).abs() <= 1.0, "{d}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hd95_symmetric_and_below_hausdorff(seed in any::<u64>(), da in 0.05f64..0.6, db in 0.05f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = GridDims::new(rng.gen_range(2..9), rng.gen_range(2..9), rng.gen_range(2..9)).unwrap();
        let a = random_mask(&mut rng, dims, Spacing::unit(), da);
        let b = random_mask(&mut rng, dims, Spacing::unit(), db);
        let ab = hd95_mm(&a, &b, 1).unwrap();
        prop_assert_eq!(ab, hd95_mm(&b, &a, 1).unwrap());
        if let Some(v) = ab {
            let full = common::brute_directed_hausdorff(&a, &b, 1).max(common::brute_directed_hausdorff(&b, &a, 1));
            prop_assert!(v <= full);
            prop_assert!(v >= 0.0);
        }
    }

    #[test]
    fn hd95_translation_invariant(seed in any::<u64>(), sx in 0usize..4, sy in 0usize..4, sz in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = GridDims::cube(6).unwrap();
        let a = common::random_blocks(&mut rng, dims, Spacing::unit(), 2, 2);
        let b = common::random_blocks(&mut rng, dims, Spacing::unit(), 2, 2);
        // pad by one so the grid border does not add surface the original lacked
        let big = GridDims::cube(12).unwrap();
        let base = (shifted(&a, (1, 1, 1), big), shifted(&b, (1, 1, 1), big));
        let moved = (shifted(&a, (1 + sx, 1 + sy, 1 + sz), big), shifted(&b, (1 + sx, 1 + sy, 1 + sz), big));
        prop_assert_eq!(hd95_mm(&base.0, &base.1, 1).unwrap(), hd95_mm(&moved.0, &moved.1, 1).unwrap());
    }

    #[test]
    fn hd95_scales_with_spacing(seed in any::<u64>(), s in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = GridDims::cube(7).unwrap();
        let a = random_mask(&mut rng, dims, Spacing::unit(), 0.3);
        let b = random_mask(&mut rng, dims, Spacing::unit(), 0.3);
        let scaled = |l: &LabelMap| LabelMap::new(dims, Spacing::isotropic(s).unwrap(), 2, l.voxels().to_vec()).unwrap();
        if let (Some(u), Some(v)) = (hd95_mm(&a, &b, 1).unwrap(), hd95_mm(&scaled(&a), &scaled(&b), 1).unwrap()) {
            prop_assert!((v - s * u).abs() <= 1e-12 * v.max(1.0));
        }
    }

    #[test]
    fn dice_bounded_and_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = GridDims::cube(6).unwrap();
        let a = random_mask(&mut rng, dims, Spacing::unit(), 0.4);
        let b = random_mask(&mut rng, dims, Spacing::unit(), 0.4);
        let d = dice_score(&a, &b, 1).unwrap();
        prop_assert_eq!(d, dice_score(&b, &a, 1).unwrap());
        if let Some(v) = d {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
