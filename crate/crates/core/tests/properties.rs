mod common;

use blazeface::anchors::{decode, decode_row, generate_anchors, sigmoid, Anchor, OFFSET_SCALE};
use blazeface::metrics::{
    average_precision, jitter_metric, regression_error, Face, GroundTruth, ImagePredictions, AP_MATCH_IOU,
};
use blazeface::net::REGRESSORS_PER_ANCHOR;
use blazeface::ops::{self, output_extent, ConvParams, Padding};
use blazeface::postprocess::{resolve, TieMode, TiePolicy};
use blazeface::{BBox, Detection, Shape, Tensor};
use common::*;
use proptest::prelude::*;

fn tensor_strategy(max_hw: usize, max_c: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_hw, 1..=max_hw, 1..=max_c).prop_flat_map(|(h, w, c)| {
        prop::collection::vec(-2.0f32..2.0, h * w * c)
            .prop_map(move |d| Tensor::new(Shape::new(1, h, w, c), d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_without_bias(seed in any::<u64>(), alpha in -3.0f32..3.0, k in 1usize..5, s in 1usize..3) {
        let mut r = rng(seed);
        let input = random_tensor(&mut r, Shape::new(1, 7, 6, 3));
        let p = ConvParams::full(k, s, 3, 4);
        let w = random_tensor(&mut r, p.weight_shape());
        let zero = [0.0f32; 4];
        let a = ops::conv2d(&input.map(|v| alpha * v), &w, &zero, &p).unwrap();
        let b = ops::conv2d(&input, &w, &zero, &p).unwrap().map(|v| alpha * v);
        prop_assert!(max_rel_error(&a, &b) <= 1e-5);
    }

    #[test]
    fn depthwise_never_mixes_channels(seed in any::<u64>(), j in 0usize..4, delta in 0.5f32..3.0) {
        let mut r = rng(seed);
        let input = random_tensor(&mut r, Shape::new(1, 6, 6, 4));
        let p = ConvParams::depthwise(3, 1, 4);
        let w = random_tensor(&mut r, p.weight_shape());
        let b = random_vec(&mut r, 4);
        let bumped = Tensor::from_fn(input.shape(), |n, y, x, c| {
            input.get(n, y, x, c) + if c == j && y == 2 && x == 3 { delta } else { 0.0 }
        }).unwrap();
        let before = ops::conv2d(&input, &w, &b, &p).unwrap();
        let after = ops::conv2d(&bumped, &w, &b, &p).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                for c in 0..4 {
                    if c != j {
                        prop_assert_eq!(before.get(0, y, x, c), after.get(0, y, x, c));
                    }
                }
            }
        }
    }

    #[test]
    fn same_padding_output_is_ceil(size in 1usize..40, stride in 1usize..4, k in 1usize..8) {
        let (out, _) = output_extent(size, k, stride, Padding::Same).unwrap();
        prop_assert_eq!(out, size.div_ceil(stride));
    }

    #[test]
    fn relu_is_idempotent(t in tensor_strategy(6, 4)) {
        let once = ops::relu(&t);
        prop_assert_eq!(ops::relu(&once), once.clone());
        prop_assert!(once.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn pad_channels_preserves_sum(t in tensor_strategy(5, 4), extra in 0usize..4) {
        let c = t.shape().channels;
        let padded = ops::pad_channels(&t, c + extra).unwrap();
        let a: f64 = t.data().iter().map(|&v| v as f64).sum();
        let b: f64 = padded.data().iter().map(|&v| v as f64).sum();
        prop_assert_eq!(a, b);
        if extra > 0 {
            prop_assert!(ops::pad_channels(&padded, c).is_err());
        }
    }

    #[test]
    fn add_commutes(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, Shape::new(1, 3, 4, 2));
        let b = random_tensor(&mut r, Shape::new(1, 3, 4, 2));
        prop_assert_eq!(ops::add(&a, &b).unwrap(), ops::add(&b, &a).unwrap());
        prop_assert_eq!(ops::add(&a, &Tensor::zeros(a.shape()).unwrap()).unwrap(), a);
    }

    #[test]
    fn conv_matches_loops_on_random_geometry(
        seed in any::<u64>(), h in 1usize..10, w in 1usize..10, k in 1usize..6, s in 1usize..3,
    ) {
        let mut r = rng(seed);
        let input = random_tensor(&mut r, Shape::new(1, h, w, 2));
        let p = ConvParams::depthwise(k, s, 2);
        let wt = random_tensor(&mut r, p.weight_shape());
        let b = random_vec(&mut r, 2);
        let out = ops::conv2d(&input, &wt, &b, &p).unwrap();
        prop_assert!(max_rel_error(&out, &naive_conv2d(&input, &wt, &b, &p)) <= 1e-5);
    }
}

fn anchor() -> impl Strategy<Value = Anchor> {
    (0.0f32..1.0, 0.0f32..1.0, 0.1f32..1.0).prop_map(|(cx, cy, s)| Anchor { cx, cy, w: s, h: s })
}

fn regressors() -> impl Strategy<Value = [f32; REGRESSORS_PER_ANCHOR]> {
    prop::array::uniform16(-64.0f32..64.0)
}

/// Inverse of the decoding formulas, written from the definitions.
fn encode(d: &Detection, a: &Anchor) -> [f32; REGRESSORS_PER_ANCHOR] {
    let (cx, cy) = d.bbox.center();
    let mut r = [0.0; REGRESSORS_PER_ANCHOR];
    r[0] = (cx - a.cx) / a.w * 128.0;
    r[1] = (cy - a.cy) / a.h * 128.0;
    r[2] = d.bbox.width() / a.w * 128.0;
    r[3] = d.bbox.height() / a.h * 128.0;
    for (i, kp) in d.keypoints.iter().enumerate() {
        r[4 + 2 * i] = (kp[0] - a.cx) / a.w * 128.0;
        r[5 + 2 * i] = (kp[1] - a.cy) / a.h * 128.0;
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decode_encode_round_trip(a in anchor(), cx in 0.2f32..0.8, cy in 0.2f32..0.8, w in 0.01f32..0.3,
                                kps in prop::array::uniform12(0.0f32..1.0)) {
        let mut keypoints = [[0.0; 2]; 6];
        for i in 0..6 {
            keypoints[i] = [kps[2 * i], kps[2 * i + 1]];
        }
        let truth = Detection { bbox: BBox::from_center(cx, cy, w, w), keypoints, score: 0.5, anchor: 0 };
        let back = decode_row(0.0, &encode(&truth, &a), &a, 0);
        for (x, y) in back.coords().iter().zip(truth.coords()) {
            prop_assert!((x - y).abs() <= 1e-6, "{} vs {}", x, y);
        }
    }

    #[test]
    fn score_is_monotone_in_logit(a in -200.0f32..200.0, b in -200.0f32..200.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(sigmoid(lo) <= sigmoid(hi));
        prop_assert!((0.0..=1.0).contains(&sigmoid(lo)));
    }

    #[test]
    fn shifting_dx_shifts_center_by_delta_over_128(a in anchor(), reg in regressors(), delta in -32.0f32..32.0) {
        let base = decode_row(0.0, &reg, &a, 0);
        let mut moved_reg = reg;
        moved_reg[0] += delta;
        let moved = decode_row(0.0, &moved_reg, &a, 0);
        let shift = moved.bbox.center().0 - base.bbox.center().0;
        prop_assert!((shift - delta / OFFSET_SCALE * a.w).abs() <= 1e-5);
    }

    #[test]
    fn decoded_outputs_lie_in_unit_square(seed in any::<u64>(), min_score in 0.0f32..1.0) {
        let anchors = generate_anchors();
        let mut r = rng(seed);
        let scores = random_vec(&mut r, anchors.len()).iter().map(|v| v * 6.0).collect::<Vec<_>>();
        let regs: Vec<[f32; 16]> = (0..anchors.len())
            .map(|_| {
                let v = random_vec(&mut r, 16);
                std::array::from_fn(|i| v[i] * 300.0)
            })
            .collect();
        for d in decode(&scores, &regs, &anchors, min_score).unwrap() {
            prop_assert!(d.score >= min_score);
            prop_assert!(d.coords().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(d.bbox.xmin <= d.bbox.xmax && d.bbox.ymin <= d.bbox.ymax);
        }
    }
}

fn detection_set() -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec(
        (0.0f32..0.8, 0.0f32..0.8, 0.05f32..0.2, 0.01f32..1.0, prop::array::uniform12(0.0f32..1.0)),
        1..20,
    )
    .prop_map(|items| {
        items
            .into_iter()
            .enumerate()
            .map(|(i, (x, y, s, score, kps))| Detection {
                bbox: BBox::new(x, y, x + s, y + s),
                keypoints: std::array::from_fn(|k| [kps[2 * k], kps[2 * k + 1]]),
                score,
                anchor: i,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn resolve_ignores_input_order(dets in detection_set(), shift in 0usize..20, thr in 0.05f32..1.0) {
        let mut rotated = dets.clone();
        rotated.rotate_left(shift % dets.len());
        rotated.reverse();
        for mode in [TieMode::Blending, TieMode::Suppression] {
            let p = TiePolicy::new(mode, thr).unwrap();
            prop_assert_eq!(resolve(&dets, &p), resolve(&rotated, &p));
        }
    }

    #[test]
    fn modes_agree_on_cluster_count_and_scores(dets in detection_set(), thr in 0.05f32..1.0) {
        let blend = resolve(&dets, &TiePolicy::new(TieMode::Blending, thr).unwrap());
        let supp = resolve(&dets, &TiePolicy::new(TieMode::Suppression, thr).unwrap());
        prop_assert_eq!(blend.len(), supp.len());
        for (b, s) in blend.iter().zip(&supp) {
            prop_assert_eq!(b.score, s.score);
        }
        prop_assert!(blend.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn blended_coordinates_stay_in_member_hull(dets in detection_set()) {
        // Pull every box close to the first so all of them overlap it.
        let p = TiePolicy::new(TieMode::Blending, 1e-6).unwrap();
        let anchor_box = dets[0].bbox;
        let cluster: Vec<Detection> = dets.iter().map(|d| Detection { bbox: BBox::new(
            anchor_box.xmin + (d.bbox.xmin - anchor_box.xmin) * 0.01,
            anchor_box.ymin + (d.bbox.ymin - anchor_box.ymin) * 0.01,
            anchor_box.xmax + (d.bbox.xmax - anchor_box.xmax) * 0.01,
            anchor_box.ymax + (d.bbox.ymax - anchor_box.ymax) * 0.01,
        ), ..*d }).collect();
        let out = resolve(&cluster, &p);
        prop_assert_eq!(out.len(), 1);
        let coords = out[0].coords();
        for (i, v) in coords.iter().enumerate() {
            let lo = cluster.iter().map(|d| d.coords()[i]).fold(f32::INFINITY, f32::min);
            let hi = cluster.iter().map(|d| d.coords()[i]).fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(*v >= lo - 1e-6 && *v <= hi + 1e-6);
        }
        let top = cluster.iter().map(|d| d.score).fold(0.0, f32::max);
        prop_assert_eq!(out[0].score, top);
    }

    #[test]
    fn singleton_clusters_make_modes_identical(dets in detection_set()) {
        // With threshold 1 only exact duplicates cluster; generated boxes are distinct.
        let b = resolve(&dets, &TiePolicy::new(TieMode::Blending, 1.0).unwrap());
        let s = resolve(&dets, &TiePolicy::new(TieMode::Suppression, 1.0).unwrap());
        prop_assert_eq!(b.len(), s.len());
        for (x, y) in b.iter().zip(&s) {
            prop_assert_eq!(x.coords(), y.coords());
        }
    }
}

fn face_at(x: f32, y: f32, s: f32) -> Face {
    let bbox = BBox::new(x, y, x + s, y + s);
    let mut keypoints = [[x + 0.5 * s, y + 0.6 * s]; 6];
    keypoints[0] = [x + 0.3 * s, y + 0.35 * s];
    keypoints[1] = [x + 0.7 * s, y + 0.35 * s];
    Face { bbox, keypoints }
}

/// Images with a few faces each and predictions that hit, miss or jitter them.
fn eval_fixture() -> impl Strategy<Value = (Vec<GroundTruth>, Vec<ImagePredictions>)> {
    prop::collection::vec(
        prop::collection::vec((-0.05f32..0.05, any::<bool>()), 0..4),
        1..5,
    )
    .prop_map(|images| {
        let mut next_score = 0u32;
        let mut truth = Vec::new();
        let mut preds = Vec::new();
        for (i, faces) in images.into_iter().enumerate() {
            let id = format!("img{i}");
            let gt: Vec<Face> = (0..faces.len()).map(|k| face_at(0.05 + 0.3 * k as f32, 0.1, 0.25)).collect();
            let mut dets = Vec::new();
            for (k, (jitter, hit)) in faces.iter().enumerate() {
                next_score += 1;
                let f = if *hit { face_at(0.05 + 0.3 * k as f32 + jitter, 0.1, 0.25) } else { face_at(0.05 + 0.3 * k as f32, 0.7, 0.2) };
                dets.push(Detection { bbox: f.bbox, keypoints: f.keypoints, score: 0.01 + 0.0097 * next_score as f32, anchor: k });
            }
            truth.push(GroundTruth { image_id: id.clone(), faces: gt });
            preds.push(ImagePredictions { image_id: id, detections: dets });
        }
        (truth, preds)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ap_ignores_monotone_score_transforms((truth, preds) in eval_fixture()) {
        let base = average_precision(&preds, &truth, AP_MATCH_IOU).value;
        let squashed: Vec<ImagePredictions> = preds.iter().map(|p| ImagePredictions {
            image_id: p.image_id.clone(),
            detections: p.detections.iter().map(|d| Detection { score: d.score * d.score * 0.5, ..*d }).collect(),
        }).collect();
        prop_assert_eq!(base, average_precision(&squashed, &truth, AP_MATCH_IOU).value);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn ap_ignores_reordering((truth, preds) in eval_fixture()) {
        let base = average_precision(&preds, &truth, AP_MATCH_IOU).value;
        let mut shuffled: Vec<ImagePredictions> = preds.iter().rev().map(|p| {
            let mut d = p.detections.clone();
            d.reverse();
            ImagePredictions { image_id: p.image_id.clone(), detections: d }
        }).collect();
        let n = shuffled.len();
        shuffled.rotate_left(1 % n);
        let mut truth_rev = truth.clone();
        truth_rev.reverse();
        prop_assert_eq!(base, average_precision(&shuffled, &truth_rev, AP_MATCH_IOU).value);
    }

    #[test]
    fn regression_error_is_scale_invariant((truth, preds) in eval_fixture(), s in 0.2f32..0.9) {
        let scale_face = |f: &Face| Face {
            bbox: BBox::new(f.bbox.xmin * s, f.bbox.ymin * s, f.bbox.xmax * s, f.bbox.ymax * s),
            keypoints: f.keypoints.map(|k| [k[0] * s, k[1] * s]),
        };
        let st: Vec<GroundTruth> = truth.iter().map(|g| GroundTruth {
            image_id: g.image_id.clone(), faces: g.faces.iter().map(scale_face).collect(),
        }).collect();
        let sp: Vec<ImagePredictions> = preds.iter().map(|p| ImagePredictions {
            image_id: p.image_id.clone(), detections: p.detections.iter().map(|d| d.scaled(s)).collect(),
        }).collect();
        match (regression_error(&preds, &truth), regression_error(&sp, &st)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-4 * a.max(1e-3), "{} vs {}", a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a.is_ok(), b.is_ok()),
        }
    }

    #[test]
    fn jitter_is_scale_invariant(eps in 0.001f32..0.05, s in 0.3f32..1.0) {
        let image = Tensor::zeros(Shape::new(1, 16, 16, 1)).unwrap();
        let f = face_at(0.2, 0.2, 0.5);
        let base = Detection { bbox: f.bbox, keypoints: f.keypoints, score: 0.9, anchor: 0 };
        let iod = 0.4 * 0.5;
        let run = |scale: f32| {
            let mut first = true;
            let det = base.scaled(scale);
            jitter_metric(move |img: &Tensor| {
                let _ = img;
                let out = if first { det } else { det.translated(eps * iod * scale, 0.0) };
                first = false;
                Ok::<_, std::io::Error>(vec![out])
            }, &image, &[(0, 0), (0, 0)]).unwrap().jitter_iod()
        };
        let a = run(1.0);
        let b = run(s);
        prop_assert!((a - b).abs() <= 1e-4, "{} vs {}", a, b);
    }
}
