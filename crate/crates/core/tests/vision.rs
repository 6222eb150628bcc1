mod common;

use std::collections::BTreeSet;

use common::{bfs_boxes, mask_bits, naive_detect, naive_morph, random_triple};
use edgeq_core::vision::{
    detect, dilate, encode_pnm, erode, extract_boxes, parse_pnm, BinaryMask, BoundingBox,
    DetectionConfig, Frame,
};
use proptest::prelude::*;

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1usize..24, 1usize..24)
        .prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(prop::bool::weighted(0.4), w * h)))
        .prop_map(|(w, h, bits)| BinaryMask::from_bools(w, h, &bits))
}

fn config_strategy() -> impl Strategy<Value = DetectionConfig> {
    (1u8..=254, 0usize..4, 0usize..4, 1u32..50, 1.0f64..6.0).prop_map(|(t, d, e, frac, hi)| {
        DetectionConfig {
            threshold: t,
            dilation_radius: d,
            erosion_radius: e,
            min_box_area_fraction: frac as f64 / 10_000.0,
            aspect_ratio_bounds: (1.0 / hi, hi),
            ..DetectionConfig::default()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn detect_matches_reference(seed in any::<u64>(), cfg in config_strategy(), rgb in any::<bool>(),
                                w in 8usize..48, h in 8usize..48) {
        let [a, b, c] = random_triple(seed, w, h, if rgb { 3 } else { 1 });
        let got: BTreeSet<_> = detect(&a, &b, &c, &cfg).unwrap().into_iter().collect();
        prop_assert_eq!(got, naive_detect(&a, &b, &c, &cfg));
    }

    #[test]
    fn morphology_matches_reference(m in mask_strategy(), r in 0usize..4) {
        let bits = mask_bits(&m);
        prop_assert_eq!(mask_bits(&dilate(&m, r)), naive_morph(&bits, m.width, m.height, r, true));
        prop_assert_eq!(mask_bits(&erode(&m, r)), naive_morph(&bits, m.width, m.height, r, false));
    }

    #[test]
    fn labelling_matches_flood_fill(m in mask_strategy()) {
        let got: BTreeSet<_> = extract_boxes(&m).into_iter().collect();
        prop_assert_eq!(got, bfs_boxes(&mask_bits(&m), m.width, m.height));
    }

    #[test]
    fn boxes_are_sorted_and_disjoint_components(m in mask_strategy()) {
        let boxes = extract_boxes(&m);
        prop_assert!(boxes.windows(2).all(|p| (p[0].y, p[0].x) <= (p[1].y, p[1].x)));
        // every set pixel lies in some box
        for y in 0..m.height {
            for x in 0..m.width {
                if m.is_set(x, y) {
                    prop_assert!(boxes.iter().any(|b| x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h));
                }
            }
        }
    }

    #[test]
    fn dilation_extensive_erosion_anti_extensive(m in mask_strategy(), r in 0usize..4) {
        let (d, e) = (dilate(&m, r), erode(&m, r));
        for y in 0..m.height {
            for x in 0..m.width {
                prop_assert!(!m.is_set(x, y) || d.is_set(x, y));
                prop_assert!(!e.is_set(x, y) || m.is_set(x, y));
            }
        }
    }

    #[test]
    fn opening_and_closing_idempotent(m in mask_strategy(), r in 0usize..4) {
        let open = |x: &BinaryMask| dilate(&erode(x, r), r);
        let close = |x: &BinaryMask| erode(&dilate(x, r), r);
        let o = open(&m);
        let c = close(&m);
        prop_assert_eq!(open(&o), o);
        prop_assert_eq!(close(&c), c);
    }

    #[test]
    fn pnm_round_trip(w in 1usize..20, h in 1usize..20, rgb in any::<bool>(), seed in any::<u64>()) {
        let ch = if rgb { 3 } else { 1 };
        let data: Vec<u8> = (0..w * h * ch).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let f = Frame::new(w, h, ch, data).unwrap();
        prop_assert_eq!(parse_pnm(&encode_pnm(&f)).unwrap(), f);
    }
}

#[test]
fn identical_frames_detect_nothing() {
    let [a, _, _] = random_triple(7, 32, 32, 3);
    assert!(detect(&a, &a, &a, &DetectionConfig::default()).unwrap().is_empty());
}

#[test]
fn square_moving_faster_than_its_width_is_found() {
    let mut frames = Vec::new();
    for k in 0..3 {
        let mut f = Frame::filled(64, 64, 1, 10);
        for y in 20..30 {
            for x in 10 + 15 * k..20 + 15 * k {
                f.data[y * 64 + x] = 200;
            }
        }
        frames.push(f);
    }
    let boxes = detect(&frames[0], &frames[1], &frames[2], &DetectionConfig::default()).unwrap();
    // the middle position, grown by dilation 2 and shrunk by erosion 1
    assert_eq!(boxes, vec![BoundingBox { x: 24, y: 19, w: 12, h: 12 }]);
}
