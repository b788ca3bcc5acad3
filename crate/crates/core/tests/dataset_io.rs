use ctxprop_core::dataset::{
    format_label_file, generate_synthetic, load_dataset, parse_detection_file, parse_label_file,
    split_dataset, write_dataset, LabelRecord, SplitSpec, SynthSpec, CAR,
};
use proptest::prelude::*;

fn record() -> impl Strategy<Value = LabelRecord> {
    let class = prop::sample::select(vec!["Car", "Van", "Pedestrian", "DontCare"]);
    let real = || -1000.0..1000.0f64;
    (
        class,
        0.0..1.0f64,
        -1i32..4,
        -3.2..3.2f64,
        [real(), real(), real(), real()],
        [0.1..5.0f64, 0.1..5.0f64, 0.1..12.0f64],
        [real(), real(), real()],
        -3.2..3.2f64,
        prop::option::of(0.0..1.0f64),
    )
        .prop_map(
            |(class, truncated, occluded, alpha, bbox, dimensions, location, rotation_y, score)| {
                LabelRecord {
                    class: class.to_string(),
                    truncated,
                    occluded,
                    alpha,
                    bbox,
                    dimensions,
                    location,
                    rotation_y,
                    score,
                }
            },
        )
}

proptest! {
    #[test]
    fn labels_survive_write_back(recs in prop::collection::vec(record(), 0..12), scored in any::<bool>()) {
        let recs: Vec<LabelRecord> = recs
            .into_iter()
            .map(|mut r| {
                r.score = if scored { Some(r.score.unwrap_or(0.5)) } else { None };
                r
            })
            .collect();
        let text = format_label_file(&recs);
        let back = if scored { parse_detection_file(&text) } else { parse_label_file(&text) }.unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            prop_assert_eq!(&a.class, &b.class);
            prop_assert_eq!(a.occluded, b.occluded);
            let fa = [a.truncated, a.alpha, a.rotation_y, a.score.unwrap_or(0.0)];
            let fb = [b.truncated, b.alpha, b.rotation_y, b.score.unwrap_or(0.0)];
            let va = a.bbox.iter().chain(&a.dimensions).chain(&a.location).chain(&fa);
            let vb = b.bbox.iter().chain(&b.dimensions).chain(&b.location).chain(&fb);
            for (x, y) in va.zip(vb) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn synthetic_scenes_round_trip_through_files() {
    let spec = SynthSpec {
        num_scenes: 12,
        rng_seed: 4,
        ..SynthSpec::default()
    };
    let scenes = generate_synthetic(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &scenes).unwrap();
    let loaded = load_dataset(dir.path(), CAR).unwrap();
    assert_eq!(loaded, scenes);
}

#[test]
fn missing_calibration_names_the_file() {
    let scenes = generate_synthetic(&SynthSpec {
        num_scenes: 2,
        ..SynthSpec::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &scenes).unwrap();
    std::fs::remove_file(dir.path().join("calib/000001.txt")).unwrap();
    let err = load_dataset(dir.path(), CAR).unwrap_err().to_string();
    assert!(err.contains("000001.txt"), "{err}");
}

#[test]
fn split_is_disjoint_and_stable() {
    let scenes = generate_synthetic(&SynthSpec {
        num_scenes: 41,
        ..SynthSpec::default()
    })
    .unwrap();
    let spec = SplitSpec::default();
    let (train, test) = split_dataset(&scenes, &spec);
    for r in &train {
        assert!(test.iter().all(|t| t.image_id != r.image_id));
    }
    let eligible = scenes.iter().filter(|s| s.count_class(CAR) >= 2).count();
    assert_eq!(train.len() + test.len(), eligible);
    assert_eq!(train.len(), eligible.div_ceil(2));
    assert_eq!(split_dataset(&scenes, &spec), (train, test));
}
