mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use celldet::assignment::{build_cost, match_cell, solve_assignment, CostMatrix};
use celldet::decoder::{decoder_forward, DecoderConfig, DecoderParams};
use celldet::detection::{Detection, ObjectAnnotation};
use celldet::eval::{average_precision, column_rmse, match_detections, CountMatrix, MatchCriterion};
use celldet::grid::{cell_of, decode_predictions, encode_labels, DecodeOptions, SlotTarget};
use celldet::labels::{parse_labels, write_labels, LabelSet};
use celldet::loss::{softmax, total_loss, LossInputs};
use celldet::pipeline::{
    augment, extract_dots, read_manifest, slice_sequential, split_dataset, split_sizes, write_manifest, AugmentRanges,
    DotColorTable, DotParams, Mosaic, TileRecord,
};
use celldet::raster::ImageTensor;
use celldet::store::{read_predictions, write_predictions_file, PredictionRecord};
use celldet::tensor::{FeatureGrid, PredictionTensor};
use celldet::GridSpec;

use common::brute_force_assignment;

fn spec_strategy() -> impl Strategy<Value = GridSpec> {
    (
        16usize..400,
        16usize..400,
        1usize..8,
        1usize..4,
        prop::bool::ANY,
        1usize..5,
    )
        .prop_map(|(w, h, g, k, boxed, c)| GridSpec::new(w, h, g, k, if boxed { 4 } else { 2 }, c).unwrap())
}

fn annotations(spec: &GridSpec, seed: u64, max: usize) -> Vec<ObjectAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..=max);
    (0..n)
        .map(|_| {
            let c = rng.random_range(0..spec.num_classes);
            // Snap some positions onto cell edges.
            let snap = rng.random_bool(0.2);
            let mut x = rng.random_range(0.0..spec.image_w as f64);
            let mut y = rng.random_range(0.0..spec.image_h as f64);
            if snap {
                x = (x / spec.cell_w()).floor() * spec.cell_w();
                y = (y / spec.cell_h()).floor() * spec.cell_h();
            }
            if spec.coord_arity == 4 {
                ObjectAnnotation::boxed(c, x, y, rng.random_range(1.0..30.0), rng.random_range(1.0..30.0))
            } else {
                ObjectAnnotation::point(c, x, y)
            }
        })
        .collect()
}

fn cost_matrix() -> impl Strategy<Value = CostMatrix> {
    (1usize..=7, 1usize..=7).prop_flat_map(|(a, b)| {
        let (rows, cols) = (a.max(b), a.min(b));
        prop::collection::vec(0.0f64..1.0, rows * cols).prop_map(move |d| CostMatrix::new(rows, cols, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // Grid codec

    #[test]
    fn slot_conservation(spec in spec_strategy(), seed in any::<u64>()) {
        let anns = annotations(&spec, seed, 40);
        let (t, dropped) = encode_labels(&anns, &spec).unwrap();
        prop_assert_eq!(t.present_count() + dropped, anns.len());
    }

    #[test]
    fn coordinates_in_unit_cell_and_padding_zero(spec in spec_strategy(), seed in any::<u64>()) {
        let (t, _) = encode_labels(&annotations(&spec, seed, 40), &spec).unwrap();
        for s in &t.slots {
            if s.present {
                prop_assert!(s.coords[..2].iter().all(|v| (0.0..=1.0).contains(v)), "{:?}", s.coords);
            } else {
                prop_assert_eq!(s.coords, [0.0; 4]);
            }
        }
    }

    #[test]
    fn cell_of_partitions_pixels(spec in spec_strategy(), fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
        let x = (fx * spec.image_w as f64).floor();
        let y = (fy * spec.image_h as f64).floor();
        let (row, col) = cell_of(&ObjectAnnotation::point(0, x, y), &spec).unwrap();
        let g = spec.grid_size;
        // Exactly one cell satisfies c*W <= x*G < (c+1)*W.
        let owners: Vec<usize> = (0..g)
            .filter(|c| c * spec.image_w <= x as usize * g && (x as usize * g) < (c + 1) * spec.image_w)
            .collect();
        prop_assert_eq!(owners, vec![col]);
        let owners: Vec<usize> = (0..g)
            .filter(|r| r * spec.image_h <= y as usize * g && (y as usize * g) < (r + 1) * spec.image_h)
            .collect();
        prop_assert_eq!(owners, vec![row]);
    }

    // Assignment

    #[test]
    fn assignment_is_optimal(c in cost_matrix()) {
        let a = solve_assignment(&c).unwrap();
        prop_assert!((a.total_cost - brute_force_assignment(&c)).abs() <= 1e-9);
    }

    #[test]
    fn integer_costs_are_exact(rows in 1usize..=7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = rng.random_range(1..=rows);
        let data = (0..rows * cols).map(|_| rng.random_range(0..20) as f64).collect();
        let c = CostMatrix::new(rows, cols, data).unwrap();
        prop_assert_eq!(solve_assignment(&c).unwrap().total_cost, brute_force_assignment(&c));
    }

    #[test]
    fn assignment_is_injective_and_complete(c in cost_matrix()) {
        let a = solve_assignment(&c).unwrap();
        prop_assert_eq!(a.matches.len(), c.cols());
        let distinct: HashSet<usize> = a.matches.iter().copied().collect();
        prop_assert_eq!(distinct.len(), c.cols());
        prop_assert!(a.matches.iter().all(|r| *r < c.rows()));
    }

    #[test]
    fn assignment_scale_equivariance(c in cost_matrix(), factor in 0.01f64..100.0) {
        let scaled = c.scaled(factor).unwrap();
        let got = solve_assignment(&scaled).unwrap().total_cost;
        prop_assert!((got - brute_force_assignment(&scaled)).abs() <= 1e-9);
    }

    // Loss

    #[test]
    fn loss_masks_absent_rows(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inp = random_inputs(&mut rng, false);
        let base = total_loss(&inp);
        let mut poked = inp.clone();
        let (c, r) = (inp.num_classes, inp.coord_arity);
        for (i, present) in inp.gt_presence.iter().enumerate() {
            if !present {
                for v in &mut poked.pred_coords[i * r..(i + 1) * r] {
                    *v += rng.random_range(-5.0..5.0);
                }
                for v in &mut poked.class_logits[i * c..(i + 1) * c] {
                    *v += rng.random_range(-5.0..5.0);
                }
            }
        }
        let after = total_loss(&poked);
        prop_assert_eq!(base.l_r, after.l_r);
        prop_assert_eq!(base.l_c, after.l_c);
    }

    #[test]
    fn loss_is_finite_and_nonnegative(seed in any::<u64>(), magnitude in prop::sample::select(vec![1.0, 1e3, 1e6])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inp = random_inputs(&mut rng, false);
        for v in inp.objectness_logits.iter_mut().chain(&mut inp.class_logits).chain(&mut inp.pred_coords) {
            *v *= magnitude;
        }
        let lb = total_loss(&inp);
        for v in [lb.l_o, lb.l_r, lb.l_c, lb.total] {
            prop_assert!(v.is_finite() && v >= 0.0, "{:?}", lb);
        }
        prop_assert!(lb.grad_objectness.iter().chain(&lb.grad_class).chain(&lb.grad_coords).all(|g| g.is_finite()));
    }

    #[test]
    fn matching_minimises_pairing_cost(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, c, r) = (rng.random_range(1..=4usize), rng.random_range(1..=4usize), 2usize);
        let present = rng.random_range(0..=k);
        let targets: Vec<SlotTarget> = (0..k)
            .map(|i| {
                if i < present {
                    let mut coords = [0.0; 4];
                    coords[0] = rng.random();
                    coords[1] = rng.random();
                    SlotTarget { present: true, coords, class_id: rng.random_range(0..c) }
                } else {
                    SlotTarget::PADDING
                }
            })
            .collect();
        // Slot-independent logits, so only the coordinate pairing differs.
        let obj = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let cls: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut slots = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..k {
            let xy = [rng.random::<f64>(), rng.random::<f64>()];
            slots.extend_from_slice(&obj);
            slots.extend_from_slice(&cls);
            slots.extend_from_slice(&xy);
            preds.push(xy);
        }
        let identity = total_loss(&LossInputs::from_slots(&slots, &targets, c, r).unwrap());
        let m = match_cell(&preds, &targets).unwrap();
        let matched = total_loss(&LossInputs::from_slots(&slots, &m.targets, c, r).unwrap());
        // The matched pairing minimises the summed center distance.
        let gt: Vec<&[f64]> = targets.iter().filter(|t| t.present).map(|t| &t.coords[..2]).collect();
        if !gt.is_empty() {
            let cost = build_cost(&preds, &gt).unwrap();
            let id_cost: f64 = (0..gt.len()).map(|j| cost.get(j, j)).sum();
            prop_assert!(m.total_cost <= id_cost + 1e-12);
        }
        // With slot-independent logits the pairing leaves l_o and l_c alone.
        // It minimises summed distance, not the root-mean-square in l_r, so
        // l_r is only bounded by the distance sum of the identity pairing.
        prop_assert!((matched.l_o - identity.l_o).abs() <= 1e-12);
        prop_assert!((matched.l_c - identity.l_c).abs() <= 1e-12);
        if present > 0 {
            let bound = m.total_cost / ((present * r) as f64).sqrt();
            prop_assert!(matched.l_r <= bound + 1e-12);
        }
    }

    // Decoder

    #[test]
    fn softmax_rows_sum_to_one(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn stop_symbol_emits_a_prefix(seed in any::<u64>(), threshold in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec::new(96, 96, 3, rng.random_range(1..=4), 2, 2).unwrap();
        let mut t = PredictionTensor::zeros(1, 3, 3, spec.slots_per_cell, 2, 2);
        for v in t.data.iter_mut() {
            *v = rng.random_range(-3.0..3.0);
        }
        let full = decode_predictions(&t, 0, "i", &spec, DecodeOptions { threshold, stop_symbol: false }).unwrap();
        let stop = decode_predictions(&t, 0, "i", &spec, DecodeOptions { threshold, stop_symbol: true }).unwrap();
        prop_assert!(stop.len() <= full.len());
        for row in 0..3 {
            for col in 0..3 {
                let of = |d: &[Detection]| d.iter().filter(|x| x.cell == Some([row, col])).cloned().collect::<Vec<_>>();
                let (f, s) = (of(&full), of(&stop));
                prop_assert_eq!(&f[..s.len()], &s[..]);
            }
        }
    }

    #[test]
    fn decoder_accepts_any_grid_size(h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let cfg = DecoderConfig { feature_dim: 3, hidden_size: 4, num_layers: 2, num_classes: 2, coord_arity: 2 };
        let params = DecoderParams::init(&cfg, seed).unwrap();
        let feature = [0.3, -0.2, 0.9];
        let mut grid = FeatureGrid::zeros(1, h, w, 3);
        for r in 0..h {
            for c in 0..w {
                grid.cell_mut(0, r, c).copy_from_slice(&feature);
            }
        }
        let single = FeatureGrid::new(1, 1, 1, 3, feature.to_vec()).unwrap();
        let reference = decoder_forward(&single, &params, 2).unwrap();
        let out = decoder_forward(&grid, &params, 2).unwrap();
        prop_assert_eq!((out.rows, out.cols), (h, w));
        for r in 0..h {
            for c in 0..w {
                for s in 0..2 {
                    prop_assert_eq!(out.slot(0, r, c, s), reference.slot(0, 0, 0, s));
                }
            }
        }
    }

    // Evaluation

    #[test]
    fn ap_invariant_under_monotone_rescoring(flags in prop::collection::vec(any::<bool>(), 1..30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = flags.iter().map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
        let n_gt = flags.iter().filter(|f| **f).count() + rng.random_range(0..3);
        let moved: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        let a = average_precision(&flags, &scores, n_gt).unwrap().ap;
        let b = average_precision(&flags, &moved, n_gt).unwrap().ap;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn low_fp_never_helps_top_tp_never_hurts(
        flags in prop::collection::vec(any::<bool>(), 0..30),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = flags.iter().map(|_| rng.random_range(0.1..0.9)).collect();
        let n_gt = flags.iter().filter(|f| **f).count() + 1 + rng.random_range(0..3);
        let base = average_precision(&flags, &scores, n_gt).unwrap().ap;

        let (mut f, mut s) = (flags.clone(), scores.clone());
        f.push(false);
        s.push(0.0);
        prop_assert!(average_precision(&f, &s, n_gt).unwrap().ap <= base);

        let (mut f, mut s) = (flags.clone(), scores.clone());
        f.push(true);
        s.push(1.0);
        prop_assert!(average_precision(&f, &s, n_gt).unwrap().ap >= base);
    }

    #[test]
    fn rmse_symmetric_and_zero_iff_equal(
        truth in prop::collection::vec(0u64..50, 1..24),
        noise in prop::collection::vec(0u64..3, 24),
        classes in 1usize..4,
    ) {
        let n = truth.len() / classes * classes;
        prop_assume!(n > 0);
        let truth = truth[..n].to_vec();
        let pred: Vec<u64> = truth.iter().zip(&noise).map(|(t, d)| t + d).collect();
        let m = CountMatrix::new(n / classes, classes, truth.clone(), pred.clone()).unwrap();
        let swapped = CountMatrix::new(n / classes, classes, pred.clone(), truth.clone()).unwrap();
        let (per, mean) = column_rmse(&m).unwrap();
        prop_assert_eq!(column_rmse(&swapped).unwrap(), (per, mean));
        prop_assert_eq!(mean == 0.0, truth == pred);
    }

    #[test]
    fn true_positives_bounded(seed in any::<u64>(), boxes in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pt = |rng: &mut ChaCha8Rng| (rng.random_range(0.0..64.0), rng.random_range(0.0..64.0));
        let gts: Vec<ObjectAnnotation> = (0..rng.random_range(0..8))
            .map(|_| {
                let (x, y) = pt(&mut rng);
                if boxes { ObjectAnnotation::boxed(0, x, y, 10.0, 10.0) } else { ObjectAnnotation::point(0, x, y) }
            })
            .collect();
        let dets: Vec<Detection> = (0..rng.random_range(0..12))
            .map(|_| {
                let (x, y) = pt(&mut rng);
                Detection {
                    image_id: "i".into(), class_id: 0, score: rng.random(), x, y,
                    w: boxes.then_some(10.0), h: boxes.then_some(10.0), cell: None,
                }
            })
            .collect();
        let crit = if boxes { MatchCriterion::boxes(0.3) } else { MatchCriterion::point(12.0) };
        let flags = match_detections(&dets, &gts, &crit, None).unwrap();
        prop_assert!(flags.iter().filter(|f| **f).count() <= dets.len().min(gts.len()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Data pipeline

    #[test]
    fn sequential_tiles_count_and_disjoint(w in 8usize..600, h in 8usize..600, size in 8usize..128, seed in any::<u64>()) {
        prop_assume!(size <= w && size <= h);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anns: Vec<ObjectAnnotation> = (0..rng.random_range(0..60))
            .map(|_| ObjectAnnotation::point(0, rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)))
            .collect();
        let m = Mosaic { id: "m".into(), width: w, height: h, annotations: anns };
        let tiles = slice_sequential(&m, size, size, true).unwrap();
        prop_assert_eq!(tiles.len(), (w / size) * (h / size));
        let origins: HashSet<(usize, usize)> = tiles.iter().map(|t| (t.x0, t.y0)).collect();
        prop_assert_eq!(origins.len(), tiles.len());
        prop_assert!(tiles.iter().all(|t| t.x0 % size == 0 && t.y0 % size == 0));
        let attached: usize = tiles.iter().map(|t| t.annotations.len()).sum();
        let covered = m.annotations.iter()
            .filter(|a| a.x < ((w / size) * size) as f64 && a.y < ((h / size) * size) as f64)
            .count();
        prop_assert_eq!(attached, covered);
        for t in &tiles {
            for a in &t.annotations {
                prop_assert!(a.x >= 0.0 && a.x < size as f64 && a.y >= 0.0 && a.y < size as f64);
            }
        }
    }

    #[test]
    fn split_partitions(n in 3usize..300, seed in any::<u64>(), a in 0.1f64..0.8) {
        let ratios = [a, (1.0 - a) / 2.0, (1.0 - a) / 2.0];
        let items: Vec<usize> = (0..n).collect();
        let parts = split_dataset(&items, ratios, seed).unwrap();
        let sizes = split_sizes(n, ratios).unwrap();
        prop_assert_eq!([parts[0].len(), parts[1].len(), parts[2].len()], sizes);
        let mut all = parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, items.clone());
        prop_assert_eq!(split_dataset(&items, ratios, seed).unwrap(), parts);
    }

    #[test]
    fn augmentation_keeps_in_bounds_annotations(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = ImageTensor::filled(48, 48, 1, 7.0);
        let anns: Vec<ObjectAnnotation> = (0..rng.random_range(1..10))
            .map(|_| ObjectAnnotation::point(0, rng.random_range(0.0..48.0), rng.random_range(0.0..48.0)))
            .collect();
        let ranges = AugmentRanges { rotation_deg: 30.0, zoom: 0.2, shear: 0.2, shift_px: 5.0 };
        let out = augment(&img, &anns, &ranges, &mut rng).unwrap();
        let in_bounds = anns.iter().all(|a| {
            let (x, y) = out.transform.apply(a.x, a.y);
            (0.0..48.0).contains(&x) && (0.0..48.0).contains(&y)
        });
        if in_bounds {
            prop_assert_eq!(out.annotations.len(), anns.len());
        } else {
            prop_assert!(out.annotations.len() < anns.len());
        }
    }

    #[test]
    fn identical_images_have_no_dots(h in 1usize..40, w in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..h * w * 3).map(|_| rng.random_range(0..=255) as f64).collect();
        let img = ImageTensor::new(h, w, 3, v).unwrap();
        let found = extract_dots(&img, &img, &DotColorTable::sea_lion_defaults(), &DotParams::default()).unwrap();
        prop_assert!(found.annotations.is_empty());
        prop_assert_eq!(found.unclassified, 0);
    }

    // File round trips

    #[test]
    fn labels_round_trip(spec in spec_strategy(), seed in any::<u64>()) {
        let mut set = LabelSet::new();
        set.insert(format!("img_{seed}"), annotations(&spec, seed, 20));
        set.insert("other".into(), annotations(&spec, seed ^ 1, 5));
        set.retain(|_, v| !v.is_empty());
        let mut buf = Vec::new();
        write_labels(&mut buf, &set).unwrap();
        prop_assert_eq!(parse_labels(buf.as_slice(), std::path::Path::new("l.csv")).unwrap(), set);
    }

    #[test]
    fn predictions_and_manifest_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<PredictionRecord> = (0..rng.random_range(0..10))
            .map(|i| {
                let d = Detection {
                    image_id: format!("f#{i}"), class_id: rng.random_range(0..3), score: rng.random(),
                    x: rng.random_range(0.0..224.0), y: rng.random_range(0.0..224.0),
                    w: None, h: None, cell: Some([rng.random_range(0..7), rng.random_range(0..7)]),
                };
                PredictionRecord::new(&d, "tag", "0123456789abcdef")
            })
            .collect();
        let path = dir.path().join("p.jsonl");
        write_predictions_file(&path, &records).unwrap();
        prop_assert_eq!(read_predictions(&path).unwrap(), records);

        let m = Mosaic {
            id: "mos".into(), width: 300, height: 200,
            annotations: (0..rng.random_range(0..20))
                .map(|_| ObjectAnnotation::point(1, rng.random_range(0.0..300.0), rng.random_range(0.0..200.0)))
                .collect(),
        };
        let manifest: Vec<TileRecord> = slice_sequential(&m, 64, 48, false).unwrap()
            .iter().map(|t| TileRecord::new(t, Some("train"))).collect();
        let path = dir.path().join("m.jsonl");
        write_manifest(&path, &manifest).unwrap();
        prop_assert_eq!(read_manifest(&path).unwrap(), manifest);
    }
}

fn random_inputs(rng: &mut ChaCha8Rng, all_present: bool) -> LossInputs {
    let n = rng.random_range(1..=16usize);
    let c = rng.random_range(1..=5usize);
    let r = if rng.random_bool(0.5) { 2 } else { 4 };
    let presence: Vec<bool> = (0..n).map(|_| all_present || rng.random_bool(0.5)).collect();
    let mut gt_coords = vec![0.0; n * r];
    for (i, p) in presence.iter().enumerate() {
        if *p {
            for v in &mut gt_coords[i * r..(i + 1) * r] {
                *v = rng.random();
            }
        }
    }
    LossInputs {
        num_classes: c,
        coord_arity: r,
        objectness_logits: (0..2 * n).map(|_| rng.random_range(-4.0..4.0)).collect(),
        class_logits: (0..c * n).map(|_| rng.random_range(-4.0..4.0)).collect(),
        pred_coords: (0..r * n).map(|_| rng.random_range(-0.5..1.5)).collect(),
        gt_presence: presence,
        gt_coords,
        gt_class: (0..n).map(|_| rng.random_range(0..c)).collect(),
    }
}
