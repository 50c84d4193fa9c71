use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sds_core::classify::{train_logistic, TrainingConfig};
use sds_core::grid::discretize_to_grid;
use sds_core::refine::{predict_coarse, refine_detection, train_coarse_model, train_stage2, training_regions, RefineConfig};
use sds_core::{BinaryMask, Candidate, Detection, FeatureTable, GroundTruthInstance, PixelBox, SuperpixelMap};

const W: u32 = 48;

/// Random rectangles aligned to 4-pixel tiles; each image's candidate is its instance.
fn aligned_scene(seed: u64, images: usize) -> (Vec<Candidate>, Vec<GroundTruthInstance>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cands = Vec::new();
    let mut gts = Vec::new();
    for i in 0..images {
        let img = format!("im{i}");
        let (tx, ty) = (rng.gen_range(1..5u32), rng.gen_range(1..5u32));
        let (tw, th) = (rng.gen_range(2..6u32), rng.gen_range(2..6u32));
        let m = BinaryMask::from_box(W, W, PixelBox::new(tx * 4, ty * 4, (tx + tw) * 4 - 1, (ty + th) * 4 - 1)).unwrap();
        cands.push(Candidate { image_id: img.clone(), candidate_id: 0, mask: m.clone() });
        gts.push(GroundTruthInstance { image_id: img, instance_id: 0, category_id: 1, mask: m });
    }
    (cands, gts)
}

#[test]
fn coarse_models_pass_the_region_grid_through() {
    let (cands, gts) = aligned_scene(3, 30);
    let cfg = RefineConfig { padding: 4, ..Default::default() };
    let model = train_coarse_model(&cands, &gts, &FeatureTable::new(0), 1, &cfg).unwrap();
    let (mut agree, mut total) = (0, 0);
    for c in &cands {
        let b = c.mask.bbox().unwrap();
        let input = discretize_to_grid(&c.mask, b, cfg.padding).unwrap();
        let pred = predict_coarse(&model, &[], &input).unwrap();
        for (p, x) in pred.values().iter().zip(input.values()) {
            if (*x - 0.5).abs() > 0.25 {
                total += 1;
                agree += usize::from((*p > 0.5) == (*x >= 0.5));
            }
        }
        // corner cells are background for every padded box
        assert!(pred.get(0, 0) < 0.5);
    }
    assert!(agree as f64 >= 0.95 * total as f64, "{agree}/{total}");
}

#[test]
fn weak_candidates_are_not_training_regions() {
    let g = BinaryMask::from_box(W, W, PixelBox::new(0, 0, 9, 9)).unwrap();
    // 60 of 100 pixels: overlap 0.6
    let weak = BinaryMask::from_box(W, W, PixelBox::new(0, 0, 5, 9)).unwrap();
    let gts = vec![GroundTruthInstance { image_id: "a".into(), instance_id: 0, category_id: 1, mask: g.clone() }];
    let cands = vec![
        Candidate { image_id: "a".into(), candidate_id: 0, mask: weak },
        Candidate { image_id: "a".into(), candidate_id: 1, mask: g },
    ];
    let r = training_regions(&cands, &gts, 1).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].candidate, 1);
    assert!(train_coarse_model(&cands[..1], &gts, &FeatureTable::new(0), 1, &RefineConfig::default()).is_err());
}

#[test]
fn stage_two_learns_membership_when_regions_are_exact() {
    let (cands, gts) = aligned_scene(11, 20);
    let cfg = RefineConfig { padding: 4, ..Default::default() };
    let feats = FeatureTable::new(0);
    let coarse = train_coarse_model(&cands, &gts, &feats, 1, &cfg).unwrap();
    let sps: BTreeMap<String, SuperpixelMap> = cands.iter().map(|c| (c.image_id.clone(), SuperpixelMap::tiles(W, W, 4).unwrap())).collect();
    let stage2 = train_stage2(&cands, &gts, &[&coarse], &feats, &sps, &cfg).unwrap();
    for c in &cands {
        let det = Detection { image_id: c.image_id.clone(), category_id: 1, score: 1.0, mask: c.mask.clone(), source_candidate_id: Some(0) };
        let sp = &sps[&c.image_id];
        let out = refine_detection(&det, &coarse, &stage2, &[], sp, cfg.padding).unwrap();
        assert_eq!(out.mask, c.mask);
        // whole superpixels only
        assert!(sp.coverage(&out.mask).unwrap().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn stage_two_fits_on_either_feature() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen::<f64>(), f64::from(u8::from(rng.gen_bool(0.5)))]).collect();
    let cfg = TrainingConfig { lambda: 1e-4, max_epochs: 2000, ..Default::default() };
    let accuracy = |labels: &[bool], m: &sds_core::classify::LinearModel| {
        rows.iter().zip(labels).filter(|(r, &l)| (m.predict_prob(r).unwrap() > 0.5) == l).count() as f64 / rows.len() as f64
    };

    let by_bit: Vec<bool> = rows.iter().map(|r| r[1] == 1.0).collect();
    let m = train_logistic(&rows, &by_bit, &cfg).unwrap().model;
    assert_eq!(accuracy(&by_bit, &m), 1.0);

    // keep a margin around 0.5 so the problem is separable
    let sep: Vec<Vec<f64>> = rows.iter().filter(|r| (r[0] - 0.5).abs() > 0.05).cloned().collect();
    let by_value: Vec<bool> = sep.iter().map(|r| r[0] > 0.5).collect();
    let m = train_logistic(&sep, &by_value, &cfg).unwrap().model;
    let acc = sep.iter().zip(&by_value).filter(|(r, &l)| (m.predict_prob(r).unwrap() > 0.5) == l).count();
    assert_eq!(acc, sep.len());

    let random: Vec<bool> = (0..rows.len()).map(|_| rng.gen_bool(0.3)).collect();
    let m = train_logistic(&rows, &random, &cfg).unwrap().model;
    let majority = random.iter().filter(|&&l| !l).count() as f64 / rows.len() as f64;
    assert!((accuracy(&random, &m) - majority).abs() <= 0.1);
}
