mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::{normals, random_map, rng};
use mcncc::io::{
    featurize_pixels, global_stats_bundle, global_stats_from_bundle, model_bundle, model_from_bundle,
    parse_results, projection_bundle, projection_from_bundle, read_feature_map, read_results,
    read_tensor, write_feature_map, write_results, write_tensor, BestMatch, Bundle, FeaturizerMode,
    GrayImage, InputKind, Manifest, PixelFeaturizerConfig, QueryRecord, Role, RotationMode, RunMeta,
    Tensor, TensorData,
};
use mcncc::learn::{HingeForm, Regime};
use mcncc::{Error, FeatureMap, GlobalStats, Projection, SiameseModel};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn f32_map_round_trips_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.xct");
    let map = random_map(&mut rng(41), 3, 8, 8).cast::<f32>().unwrap();
    write_feature_map(&path, &map).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().len(), 6 + 12 + 3 * 64 * 4);
    let back: FeatureMap<f32> = read_feature_map(&path, false).unwrap();
    let bits = |m: &FeatureMap<f32>| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&map));
    assert_eq!((back.channels(), back.height(), back.width()), (3, 8, 8));
}

#[test]
fn golden_files_decode_and_re_encode() {
    let bytes = fs::read(data("golden_f32.xct")).unwrap();
    let t = read_tensor(data("golden_f32.xct")).unwrap();
    assert_eq!(t.dims(), &[2, 2, 3]);
    let expect: Vec<f32> = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
    assert_eq!(t.data(), &TensorData::F32(expect));
    assert_eq!(t.encode(), bytes);
    let m: FeatureMap<f32> = t.to_map(false).unwrap();
    assert_eq!(m.get(1, 0, 2), 1.0);

    let bytes = fs::read(data("golden_f64.xct")).unwrap();
    let t = read_tensor(data("golden_f64.xct")).unwrap();
    assert_eq!(t.dims(), &[2, 2]);
    assert_eq!(t.data(), &TensorData::F64(vec![1.0 / 3.0, -2.5, 1e-300, 6.02214076e23]));
    assert_eq!(t.encode(), bytes);
    // Rank 2 reads as a single channel.
    let m: FeatureMap<f64> = t.to_map(false).unwrap();
    assert_eq!((m.channels(), m.height(), m.width()), (1, 2, 2));
}

#[test]
fn malformed_files_report_offsets() {
    let good = Tensor::from_values(vec![2, 3], &[1.0f64; 6]).unwrap().encode();

    let cut = &good[..good.len() - 5];
    match Tensor::decode(cut, 0) {
        Err(Error::Format { offset, message }) => {
            assert_eq!(offset, cut.len() as u64);
            assert!(message.contains("expected 48") && message.contains("found 43"), "{message}");
        }
        other => panic!("{other:?}"),
    }

    let mut bad = good.clone();
    bad[0] = b'Y';
    assert!(matches!(Tensor::decode(&bad, 0), Err(Error::Format { offset: 0, .. })));

    let mut bad = good.clone();
    bad[4] = 9;
    assert!(matches!(Tensor::decode(&bad, 0), Err(Error::Format { offset: 4, .. })));

    let mut huge = b"XCT1".to_vec();
    huge.extend([1, 3]);
    for _ in 0..3 {
        huge.extend(u32::MAX.to_le_bytes());
    }
    match Tensor::decode(&huge, 0) {
        Err(Error::Format { message, .. }) => assert!(message.contains("overflow"), "{message}"),
        other => panic!("{other:?}"),
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.xct");
    let mut trailing = good.clone();
    trailing.push(0);
    fs::write(&path, trailing).unwrap();
    assert!(matches!(read_tensor(&path), Err(Error::Format { offset: 62, .. })));
}

#[test]
fn narrowing_needs_consent() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.xct");
    let map = random_map(&mut rng(42), 2, 3, 3);
    write_feature_map(&path, &map).unwrap();
    let exact: FeatureMap<f64> = read_feature_map(&path, false).unwrap();
    assert_eq!(exact, map);
    assert!(matches!(read_feature_map::<f32>(&path, false), Err(Error::Config(_))));
    let narrow: FeatureMap<f32> = read_feature_map(&path, true).unwrap();
    assert_eq!(narrow.get(1, 2, 2), map.get(1, 2, 2) as f32);

    // Widening is always allowed.
    write_feature_map(&path, &narrow).unwrap();
    let wide: FeatureMap<f64> = read_feature_map(&path, false).unwrap();
    assert_eq!(wide.get(1, 2, 2), f64::from(narrow.get(1, 2, 2)));
}

#[test]
fn bundles_round_trip() {
    let mut r = rng(43);
    let px = Projection::<f64>::new(2, 3, normals(&mut r, 6), normals(&mut r, 3), "a").unwrap();
    let py = Projection::<f64>::new(2, 4, normals(&mut r, 8), normals(&mut r, 4), "b").unwrap();
    let p = projection_from_bundle::<f64>(&Bundle::decode(&projection_bundle(&px).unwrap().encode().unwrap()).unwrap(), false).unwrap();
    assert_eq!(p, px);

    let mut model = SiameseModel::from_projections(px, py)
        .unwrap()
        .with_regularization(100.0, 0.5)
        .with_epsilon(1e-4)
        .with_hinge(HingeForm::Margin)
        .with_regime(Regime::Joint);
    model.weights.weights = vec![0.25, -1.0 / 3.0];
    model.weights.bias = 0.125;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.xcb");
    model_bundle(&model, 17).unwrap().write(&path).unwrap();
    let b = Bundle::read(&path).unwrap();
    assert_eq!(b.kind(), Some("model"));
    assert_eq!(model_from_bundle::<f64>(&b, false).unwrap(), model);
    assert!(model_from_bundle::<f32>(&b, false).is_err());
    assert!(projection_from_bundle::<f64>(&b, false).is_err());

    let g = GlobalStats {
        means: vec![0.5, -1.0],
        stddevs: vec![2.0, 0.1],
        sample_count: 9,
    };
    let b = Bundle::decode(&global_stats_bundle(&g, "b").unwrap().encode().unwrap()).unwrap();
    assert_eq!(global_stats_from_bundle::<f64>(&b, false).unwrap(), g);
}

#[test]
fn golden_manifest_parses() {
    let m = Manifest::load(data("golden_manifest.json")).unwrap();
    assert_eq!(m.entries.len(), 3);
    assert_eq!(m.entries[0].group_id, "7");
    assert_eq!(m.entries[0].role, Role::Query);
    assert_eq!(m.entries[0].area_ratio, Some(0.25));
    assert_eq!(m.group_index(), vec![0, 0, 1]);
    m.validate_closed_set().unwrap();
    assert_eq!(m.resolve(&m.entries[1]), data("d0.xct"));
    assert_eq!(m.resolve(&m.entries[2]), PathBuf::from("/abs/d1.png"));
    assert_eq!(m.entries[1].kind(), InputKind::Tensor);
    assert_eq!(m.entries[2].kind(), InputKind::Image);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    m.save(&path).unwrap();
    assert_eq!(Manifest::load(&path).unwrap().entries, m.entries);
}

#[test]
fn manifest_validation() {
    let entry = |id: &str, role: &str, group: &str, extra: &str| {
        format!(r#"{{"id":"{id}","role":"{role}","domain_tag":"a","path":"{id}.xct","group_id":"{group}"{extra}}}"#)
    };
    let doc = |entries: Vec<String>| format!(r#"{{"entries":[{}]}}"#, entries.join(","));
    let parse = |text: String| Manifest::parse(&text, "");

    let dup = doc(vec![entry("x", "query", "1", ""), entry("x", "database", "1", "")]);
    assert!(matches!(parse(dup), Err(Error::Manifest(m)) if m.contains("duplicate")));
    let ratio = doc(vec![entry("x", "query", "1", r#","area_ratio":1.5"#)]);
    assert!(matches!(parse(ratio), Err(Error::Manifest(_))));
    let role = doc(vec![entry("x", "probe", "1", "")]);
    assert!(matches!(parse(role), Err(Error::Manifest(_))));
    let unknown = doc(vec![entry("x", "query", "1", r#","colour":"red""#)]);
    assert!(matches!(parse(unknown), Err(Error::Manifest(_))));

    let open = parse(doc(vec![entry("q", "query", "1", ""), entry("d", "database", "2", "")])).unwrap();
    assert!(matches!(open.validate_closed_set(), Err(Error::Manifest(m)) if m.contains("'q'")));
    let no_queries = parse(doc(vec![entry("d", "database", "2", "")])).unwrap();
    assert!(no_queries.validate_closed_set().is_err());
}

#[test]
fn results_round_trip() {
    let meta = RunMeta {
        record: "meta".into(),
        scheme: "channel:channel".into(),
        stride: 2,
        rot_min: -20.0,
        rot_max: 20.0,
        rot_stride: 4.0,
        min_overlap: 0.5,
        epsilon: 1e-5,
        rotation_mode: RotationMode::Pixel,
        db_size: 3,
        queries: 2,
        model: None,
    };
    let records = vec![
        QueryRecord {
            query_id: "q0".into(),
            group_id: Some("g".into()),
            rank: 2,
            db_size: 3,
            ap: Some(0.1 + 0.2),
            best: Some(BestMatch {
                id: "d1".into(),
                score: 0.987654321,
                dy: -3,
                dx: 4,
                angle: -8.0,
            }),
            area_ratio: Some(0.4),
        },
        QueryRecord {
            query_id: "q1".into(),
            group_id: None,
            rank: 1,
            db_size: 3,
            ap: None,
            best: None,
            area_ratio: None,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.ndjson");
    write_results(&path, &meta, &records).unwrap();
    let (m, r) = read_results(&path).unwrap();
    assert_eq!(m, Some(meta));
    assert_eq!(r, records);

    let (m, r) = parse_results("{\"query_id\":\"a\",\"rank\":3,\"db_size\":5}\n\n").unwrap();
    assert!(m.is_none());
    assert_eq!(r[0].rank, 3);
    let bad = "{\"query_id\":\"a\",\"rank\":3,\"db_size\":5}\n{\"rank\":\n";
    assert!(matches!(parse_results(bad), Err(Error::Format { offset: 38, .. })));
}

#[test]
fn tensor_writer_and_reader_agree_on_f64_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.xct");
    let t = Tensor::vector(&[f64::MIN_POSITIVE, -0.0, 1.0 + f64::EPSILON]).unwrap();
    write_tensor(&path, &t).unwrap();
    let back = read_tensor(&path).unwrap();
    match back.data() {
        TensorData::F64(v) => {
            assert_eq!(v[1].to_bits(), (-0.0f64).to_bits());
            assert_eq!(v[2], 1.0 + f64::EPSILON);
        }
        other => panic!("{other:?}"),
    }
}

fn image(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> GrayImage {
    GrayImage::new(h, w, (0..h * w).map(|i| f(i / w, i % w)).collect()).unwrap()
}

#[test]
fn gray_featurizer_is_the_identity() {
    let img = image(4, 5, |r, c| (r * 5 + c) as f64 / 20.0);
    let cfg = PixelFeaturizerConfig {
        mode: FeaturizerMode::Gray,
        ..Default::default()
    };
    let m: FeatureMap<f64> = featurize_pixels(&img, &cfg, "x").unwrap();
    assert_eq!(m.channels(), 1);
    assert_eq!(m.as_slice(), img.data.as_slice());
    assert_eq!(m.domain(), "x");
}

#[test]
fn gradient_bank_responses() {
    let cfg = PixelFeaturizerConfig {
        mode: FeaturizerMode::GradientBank,
        orientations: 4,
        blur_sigma: 1.0,
    };
    let flat: FeatureMap<f64> = featurize_pixels(&image(12, 12, |_, _| 0.6), &cfg, "").unwrap();
    assert_eq!(flat.channels(), 4);
    assert!(flat.as_slice().iter().all(|v| v.abs() < 1e-12));

    // A vertical step edge: strong horizontal derivative, no vertical one.
    let step: FeatureMap<f64> = featurize_pixels(&image(16, 16, |_, c| f64::from(u8::from(c >= 8))), &cfg, "").unwrap();
    for row in 4..12 {
        assert!(step.get(0, row, 8) > 0.1 && step.get(0, row, 7) > 0.1);
        assert!(step.get(2, row, 8).abs() < 1e-12);
        assert!(step.get(0, row, 2).abs() < 1e-3);
        // Diagonal channels see the edge at cos(45 deg) of the full response.
        let ratio = step.get(1, row, 8) / step.get(0, row, 8);
        assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }
}
