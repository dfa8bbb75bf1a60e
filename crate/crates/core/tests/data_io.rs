mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use aisc_core::data::*;
use aisc_core::{Aisc, Error, LandmarkShape};
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn landmark_files_round_trip(seed in any::<u64>(), m in 3usize..80, scale in 1e-3f64..1e4) {
        let s = LandmarkShape::new(random_matrix(&mut rng(seed), m, 2).scale(scale));
        prop_assume!(s.is_ok());
        let s = s.unwrap();
        let dir = tempfile::tempdir().unwrap();

        let bin = dir.path().join("s.bin");
        save_landmarks_binary(&s, &bin).unwrap();
        prop_assert_eq!(load_landmarks(&bin).unwrap(), s.clone());

        let txt = dir.path().join("s.txt");
        save_landmarks(&s, &txt).unwrap();
        let back = load_landmarks(&txt).unwrap();
        let err = back.points().sub(s.points()).unwrap().max_abs();
        prop_assert!(err <= 1e-12 * scale.max(1.0));
    }
}

#[test]
fn text_landmark_format() {
    let dir = tempfile::tempdir().unwrap();
    let template = default_template();
    assert_eq!(template.landmark_count(), 68);
    let mut text = String::from("m=68\n");
    for i in 0..68 {
        text.push_str(&format!("{},{}\n", template.points()[(i, 0)], template.points()[(i, 1)]));
    }
    let p = dir.path().join("face.txt");
    fs::write(&p, &text).unwrap();
    assert_eq!(load_landmarks(&p).unwrap().landmark_count(), 68);

    let two = dir.path().join("two.txt");
    fs::write(&two, "m=2\n0,0\n1,1\n").unwrap();
    let e = load_landmarks(&two).unwrap_err();
    assert_eq!(e.exit_code(), 3);

    let bad_count = dir.path().join("short.txt");
    fs::write(&bad_count, "m=4\n0,0\n1,0\n0,1\n").unwrap();
    assert!(matches!(load_landmarks(&bad_count), Err(Error::Format { .. })));

    let junk = dir.path().join("junk.txt");
    fs::write(&junk, "m=3\n0,0\n1,zero\n0,1\n").unwrap();
    match load_landmarks(&junk) {
        Err(Error::Format { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a format error, got {other:?}"),
    }
    assert!(matches!(load_landmarks(dir.path().join("missing.txt")), Err(Error::Io { .. })));
}

#[test]
fn appearance_and_manifest_round_trip() {
    let samples = generate_synthetic(&SynthConfig {
        family_count: 6,
        appearance_dim: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut samples = samples;
    assign_folds(&mut samples, 3, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&samples, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), samples.len());
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.fold, b.fold);
        assert_eq!(a.family, b.family);
        assert_eq!(a.relation, b.relation);
        // text files use the shortest round-trip float form
        assert_eq!(a.shape_a, b.shape_a);
        assert_eq!(a.appearance, b.appearance);
    }

    // appearance optional: a manifest without it loads too
    let manifest = "shape_a,shape_b,appearance_a,appearance_b,label,relation,fold,family\n\
                    shapes/00000_a.txt,shapes/00000_b.txt,-,-,kin,F-S,-,-\n";
    fs::write(dir.path().join(MANIFEST_FILE), manifest).unwrap();
    let only = load_dataset(dir.path()).unwrap();
    assert!(only[0].appearance.is_none());
    assert_eq!(only[0].relation, Some(Relation::FatherSon));

    fs::write(dir.path().join(MANIFEST_FILE), "shape_a,shape_b\n").unwrap();
    assert!(load_dataset(dir.path()).is_err());
    fs::write(
        dir.path().join(MANIFEST_FILE),
        "shape_a,shape_b,appearance_a,appearance_b,label,relation,fold,family\n\
         shapes/00000_a.txt,shapes/00000_b.txt,-,-,maybe,-,-,-\n",
    )
    .unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
}

#[test]
fn degenerate_generator_gives_identical_kin_shapes() {
    let cfg = SynthConfig {
        family_count: 10,
        child_noise_scale: 0.0,
        rotation_max: 0.0,
        scale_min: 1.0,
        scale_max: 1.0,
        shear_max: 0.0,
        translation_max: 0.0,
        ..SynthConfig::default()
    };
    for s in generate_synthetic(&cfg).unwrap() {
        if s.label == Label::Kin {
            assert_eq!(s.shape_a, s.shape_b);
        } else {
            assert_ne!(s.shape_a, s.shape_b);
        }
    }
}

#[test]
fn generator_is_deterministic_and_balanced() {
    let cfg = SynthConfig { family_count: 20, ..SynthConfig::default() };
    let a = generate_synthetic(&cfg).unwrap();
    assert_eq!(a, generate_synthetic(&cfg).unwrap());
    assert_ne!(a, generate_synthetic(&SynthConfig { seed: 8, ..cfg.clone() }).unwrap());
    assert_eq!(a.len(), 40);
    assert_eq!(a.iter().filter(|s| s.label == Label::Kin).count(), 20);
    assert!(a.iter().all(|s| s.appearance.as_ref().unwrap().0.dim() == 32));

    let bad = SynthConfig { child_noise_scale: 0.06, ..cfg.clone() };
    assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))));
    let bad = SynthConfig { appearance_heritability: 1.5, ..cfg };
    assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))));
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn norms_by_label(samples: &[PairSample], f: impl Fn(&PairSample) -> f64) -> (Vec<f64>, Vec<f64>) {
    let mut kin = Vec::new();
    let mut non = Vec::new();
    for s in samples {
        if s.label == Label::Kin {
            kin.push(f(s));
        } else {
            non.push(f(s));
        }
    }
    (kin, non)
}

#[test]
fn default_dataset_separates_kin_from_non_kin() {
    let samples = generate_synthetic(&SynthConfig::default()).unwrap();
    let aisc = Aisc::default();
    let (kin, non) = norms_by_label(&samples, |s| aisc.forward(&s.shape_a, &s.shape_b).unwrap().frobenius_norm());
    assert!(mean(&kin) < mean(&non), "kin {} vs non-kin {}", mean(&kin), mean(&non));
}

/// Best single-threshold accuracy of "small value ⇒ kin".
fn threshold_accuracy(kin: &[f64], non: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = kin.iter().map(|&v| (v, true)).chain(non.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n = all.len() as f64;
    let mut best = non.len() as f64 / n;
    let mut correct = non.len() as f64;
    for (_, is_kin) in all {
        correct += if is_kin { 1.0 } else { -1.0 };
        best = best.max(correct / n);
    }
    best
}

#[test]
fn affine_nuisance_hurts_raw_coordinates_but_not_the_grassmann_feature() {
    let narrow = SynthConfig {
        family_count: 150,
        rotation_max: 1e-3,
        scale_min: 0.999,
        scale_max: 1.001,
        shear_max: 1e-3,
        translation_max: 1e-3,
        ..SynthConfig::default()
    };
    let wide = SynthConfig {
        rotation_max: std::f64::consts::PI,
        scale_min: 0.2,
        scale_max: 5.0,
        shear_max: 1.0,
        translation_max: 500.0,
        ..narrow.clone()
    };
    let aisc = Aisc::default();
    let feature = |s: &PairSample| aisc.forward(&s.shape_a, &s.shape_b).unwrap().frobenius_norm();
    let raw = |s: &PairSample| s.shape_a.points().sub(s.shape_b.points()).unwrap().frobenius_norm();

    let a = generate_synthetic(&narrow).unwrap();
    let b = generate_synthetic(&wide).unwrap();
    // same deformations, only the nuisance maps differ
    for (x, y) in a.iter().zip(&b) {
        assert!((feature(x) - feature(y)).abs() < 1e-8);
    }
    let (fk_a, fn_a) = norms_by_label(&a, feature);
    let (fk_b, fn_b) = norms_by_label(&b, feature);
    assert!((mean(&fk_a) - mean(&fk_b)).abs() < 1e-9);
    assert_eq!(threshold_accuracy(&fk_a, &fn_a), threshold_accuracy(&fk_b, &fn_b));

    let (rk_a, rn_a) = norms_by_label(&a, raw);
    let (rk_b, rn_b) = norms_by_label(&b, raw);
    let (before, after) = (threshold_accuracy(&rk_a, &rn_a), threshold_accuracy(&rk_b, &rn_b));
    assert!(before > 0.9, "raw baseline without nuisance: {before}");
    assert!(after < before - 0.2, "raw baseline {before} -> {after}");
}

#[test]
fn folds_partition_and_respect_families() {
    let mut samples = generate_synthetic(&SynthConfig { family_count: 53, ..SynthConfig::default() }).unwrap();
    assign_folds(&mut samples, 5, 3).unwrap();
    validate_folds(&samples, 5).unwrap();
    let mut fam_fold: BTreeMap<u64, usize> = BTreeMap::new();
    let mut sizes = [0usize; 5];
    let mut kin = [0usize; 5];
    for s in &samples {
        let f = s.fold.unwrap();
        sizes[f] += 1;
        kin[f] += (s.label == Label::Kin) as usize;
        let prev = fam_fold.insert(s.family.unwrap(), f);
        assert!(prev.is_none() || prev == Some(f), "family split across folds");
    }
    assert_eq!(sizes.iter().sum::<usize>(), samples.len());
    // each family is one kin + one non-kin pair, so balance holds to one family
    let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    assert!(hi - lo <= 2);
    for f in 0..5 {
        assert_eq!(kin[f] * 2, sizes[f]);
    }

    let mut again = generate_synthetic(&SynthConfig { family_count: 53, ..SynthConfig::default() }).unwrap();
    assign_folds(&mut again, 5, 3).unwrap();
    assert_eq!(samples, again);
}

#[test]
fn ungrouped_samples_are_dealt_evenly() {
    let mut samples = generate_synthetic(&SynthConfig { family_count: 5, ..SynthConfig::default() }).unwrap();
    for s in &mut samples {
        s.family = None;
    }
    assign_folds(&mut samples, 5, 0).unwrap();
    let mut sizes = [0usize; 5];
    for s in &samples {
        sizes[s.fold.unwrap()] += 1;
    }
    assert_eq!(sizes, [2; 5]);

    // leave-one-out
    assign_folds(&mut samples, 10, 0).unwrap();
    let folds: BTreeSet<usize> = samples.iter().map(|s| s.fold.unwrap()).collect();
    assert_eq!(folds.len(), 10);

    assert!(assign_folds(&mut samples, 11, 0).is_err());
    assert!(assign_folds(&mut samples, 1, 0).is_err());
}

#[test]
fn shuffled_labels_keep_class_counts() {
    let samples = generate_synthetic(&SynthConfig { family_count: 30, ..SynthConfig::default() }).unwrap();
    let shuffled = shuffle_labels(&samples, 4);
    let kin = |v: &[PairSample]| v.iter().filter(|s| s.label == Label::Kin).count();
    assert_eq!(kin(&samples), kin(&shuffled));
    assert!(samples.iter().zip(&shuffled).any(|(a, b)| a.label != b.label));
}
