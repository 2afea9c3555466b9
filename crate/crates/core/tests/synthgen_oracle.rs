use advsal_core::synthgen::{gen_dataset, load_dataset, split_and_save, attach_attention, FocusRegion, SynthConfig, SHAPES};

/// Best intersection-over-union of the distinguishing region with any
/// placement of class `c`'s template.
fn template_score(region: &[bool], size: usize, c: usize, cx: f64, cy: f64) -> f64 {
    let shape = SHAPES[c];
    let mut best = 0.0f64;
    for ri in 0..=15 {
        let r = 3.4 + 0.1 * ri as f64;
        for ox in -8..=8 {
            for oy in -8..=8 {
                let (sx, sy) = (cx + 0.25 * ox as f64, cy + 0.25 * oy as f64);
                let (mut inter, mut union) = (0usize, 0usize);
                for y in 0..size {
                    for x in 0..size {
                        let t = shape.contains(x as f64 + 0.5 - sx, y as f64 + 0.5 - sy, r);
                        let m = region[y * size + x];
                        inter += usize::from(t && m);
                        union += usize::from(t || m);
                    }
                }
                if union > 0 {
                    best = best.max(inter as f64 / union as f64);
                }
            }
        }
    }
    best
}

#[test]
fn template_match_oracle_recovers_labels() {
    let cfg = SynthConfig {
        train_count: 160,
        test_count: 0,
        ..SynthConfig::default()
    };
    let samples = gen_dataset(&cfg).unwrap();
    let size = cfg.image_size;
    let mut correct = 0;
    for s in &samples {
        let region: Vec<bool> = s.mask.labels().iter().map(|&l| l == 2).collect();
        let (mut cx, mut cy, mut n) = (0.0, 0.0, 0.0);
        for (i, _) in region.iter().enumerate().filter(|(_, &m)| m) {
            cx += (i % size) as f64 + 0.5;
            cy += (i / size) as f64 + 0.5;
            n += 1.0;
        }
        let (cx, cy) = (cx / n, cy / n);
        let scores: Vec<f64> = (0..cfg.class_count).map(|c| template_score(&region, size, c, cx, cy)).collect();
        let guess = (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        correct += usize::from(guess == s.label);
    }
    let acc = correct as f64 / samples.len() as f64;
    assert!(acc >= 0.95, "oracle accuracy {acc}");
}

#[test]
fn saved_dataset_loads_bit_exactly() {
    let cfg = SynthConfig {
        train_count: 6,
        test_count: 3,
        image_size: 16,
        channels: 3,
        shape_scale_range: (2.0, 2.2),
        ..SynthConfig::default()
    };
    let mut samples = gen_dataset(&cfg).unwrap();
    attach_attention(&mut samples, FocusRegion::Localization, 1.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = split_and_save(&samples, 6.0 / 9.0, dir.path(), Some(&cfg)).unwrap();
    let (back, loaded) = load_dataset(dir.path()).unwrap();
    assert_eq!(back, samples);
    assert_eq!(loaded, manifest);
    assert_eq!(manifest.train, (0..6).collect::<Vec<_>>());

    let all_train = tempfile::tempdir().unwrap();
    let m = split_and_save(&samples, 1.0, all_train.path(), None).unwrap();
    assert!(m.test.is_empty());
}

#[test]
fn generation_is_deterministic() {
    let cfg = SynthConfig {
        train_count: 8,
        test_count: 0,
        ..SynthConfig::default()
    };
    assert_eq!(gen_dataset(&cfg).unwrap(), gen_dataset(&cfg).unwrap());
}
