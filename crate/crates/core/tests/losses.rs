use nvsplat_core::losses::{
    cosine_distance, finetune_loss, l1_rgb_loss, nnfm_loss, ExtractorConfig, FeatureExtractor, FeatureMap, LossWeights,
};
use nvsplat_core::scene::ImageRGB;
use nvsplat_core::Error;
use nvsplat_testkit as tk;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn fmap(rows: &[Vec<f64>], w: usize) -> FeatureMap {
    let c = rows[0].len();
    FeatureMap::new(rows.len() / w, w, c, rows.concat(), 0).unwrap()
}

fn vectors(m: &FeatureMap) -> Vec<Vec<f64>> {
    (0..m.positions()).map(|i| m.vector(i).to_vec()).collect()
}

/// Gap between the best and second-best style distance over all render rows.
fn match_gap(render: &[Vec<f64>], style: &[Vec<f64>]) -> f64 {
    render
        .iter()
        .map(|r| {
            let mut d: Vec<f64> = style.iter().map(|s| cosine_distance(r, s)).collect();
            d.sort_by(f64::total_cmp);
            if d.len() > 1 { d[1] - d[0] } else { f64::INFINITY }
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn nnfm_matches_oracle() {
    let mut rng = tk::rng(21);
    for _ in 0..100 {
        let r = tk::random_vectors(&mut rng, 9, 4);
        let s = tk::random_vectors(&mut rng, 9, 4);
        let ours = nnfm_loss(&fmap(&r, 3), &fmap(&s, 3)).unwrap().loss;
        assert!((ours - tk::nnfm_oracle(&r, &s)).abs() < 1e-12);
    }
}

#[test]
fn nnfm_errors() {
    let a = fmap(&[vec![1.0, 0.0]], 1);
    let b = fmap(&[vec![1.0, 0.0, 0.0]], 1);
    assert!(matches!(nnfm_loss(&a, &b), Err(Error::ChannelMismatch { render: 2, style: 3 })));
}

#[test]
fn nnfm_zero_vectors_count_as_distance_one() {
    let r = fmap(&[vec![0.0, 0.0], vec![1.0, 0.0]], 2);
    let s = fmap(&[vec![0.0, 0.0], vec![1.0, 0.0]], 2);
    let out = nnfm_loss(&r, &s).unwrap();
    assert_eq!(out.loss, 0.5);
    assert_eq!(out.zero_vectors, 2);
    assert!(out.grad.iter().all(|v| v.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn nnfm_invariances(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = tk::rng(seed);
        let r = tk::random_vectors(&mut rng, 6, 5);
        let s = tk::random_vectors(&mut rng, 8, 5);
        let base = nnfm_loss(&fmap(&r, 2), &fmap(&s, 2)).unwrap().loss;
        prop_assert!((0.0..=2.0).contains(&base));

        let mut shuffled = s.clone();
        shuffled.shuffle(&mut rng);
        let perm = nnfm_loss(&fmap(&r, 2), &fmap(&shuffled, 4)).unwrap().loss;
        prop_assert!((base - perm).abs() <= 1e-12);

        let scaled: Vec<Vec<f64>> = r.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
        let sc = nnfm_loss(&fmap(&scaled, 2), &fmap(&s, 2)).unwrap().loss;
        prop_assert!((base - sc).abs() <= 1e-12);

        prop_assert_eq!(nnfm_loss(&fmap(&s, 2), &fmap(&s, 2)).unwrap().loss, 0.0);
    }
}

#[test]
fn nnfm_gradient_matches_finite_differences() {
    let mut rng = tk::rng(22);
    let mut checked = 0;
    while checked < 30 {
        let r = tk::random_vectors(&mut rng, 4, 6);
        let s = tk::random_vectors(&mut rng, 5, 6);
        if match_gap(&r, &s) < 1e-3 {
            continue;
        }
        let style = fmap(&s, 5);
        let out = nnfm_loss(&fmap(&r, 2), &style).unwrap();
        let numeric = tk::numeric_gradient(&r.concat(), 1e-6, |x| {
            nnfm_loss(&FeatureMap::new(2, 2, 6, x.to_vec(), 0).unwrap(), &style).unwrap().loss
        });
        for (a, n) in out.grad.iter().zip(&numeric) {
            assert!(tk::grad_close(*a, *n), "analytic {a} numeric {n}");
        }
        checked += 1;
    }
}

#[test]
fn extractor_backward_matches_finite_differences() {
    let ext = FeatureExtractor::new(&ExtractorConfig { seed: 3, channels: vec![4, 6] });
    let mut rng = tk::rng(23);
    let mut checked = 0;
    while checked < 10 {
        let img = tk::random_image(&mut rng, 8, 6);
        let (f, tape) = ext.forward(&img).unwrap();
        if FeatureExtractor::min_abs_preactivation(&tape) < 1e-4 {
            continue;
        }
        let up: Vec<f64> = (0..f.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = ext.backward(&tape, &up).unwrap();
        let numeric = tk::numeric_gradient(&img.data, 1e-6, |x| {
            let im = ImageRGB { data: x.to_vec(), ..img.clone() };
            ext.extract(&im).unwrap().data.iter().zip(&up).map(|(a, b)| a * b).sum()
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(tk::grad_close(*a, *n), "analytic {a} numeric {n}");
        }
        checked += 1;
    }
}

#[test]
fn extractor_rejects_small_images() {
    let ext = FeatureExtractor::new(&ExtractorConfig::default());
    assert_eq!(ext.min_size(), 8);
    assert!(matches!(ext.extract(&ImageRGB::new(7, 16)), Err(Error::TooSmallImage { min: 8, .. })));
}

#[test]
fn l1_matches_oracle() {
    let mut rng = tk::rng(24);
    for _ in 0..20 {
        let a = tk::random_image(&mut rng, 5, 4);
        let b = tk::random_image(&mut rng, 5, 4);
        let (loss, grad) = l1_rgb_loss(&a, &b).unwrap();
        let oracle: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / 60.0;
        assert!((loss - oracle).abs() < 1e-15);
        assert!(grad.iter().all(|g| g.abs() == 1.0 / 60.0));
    }
    let (loss, grad) = l1_rgb_loss(&ImageRGB::new(2, 2), &ImageRGB::new(2, 2)).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
    assert!(matches!(l1_rgb_loss(&ImageRGB::new(2, 2), &ImageRGB::new(3, 2)), Err(Error::ShapeMismatch(_))));
}

#[test]
fn finetune_loss_is_the_weighted_sum() {
    let ext = FeatureExtractor::new(&ExtractorConfig::default());
    let mut rng = tk::rng(25);
    let style = ext.extract(&tk::random_image(&mut rng, 16, 16)).unwrap();
    for _ in 0..10 {
        let r = tk::random_image(&mut rng, 16, 16);
        let t = tk::random_image(&mut rng, 16, 16);
        let w = LossWeights { rgb: rng.random_range(0.0..2.0), nnfm: rng.random_range(0.0..2.0) };
        let out = finetune_loss(&r, &t, &style, &ext, &w).unwrap();
        let l1 = l1_rgb_loss(&r, &t).unwrap().0;
        let nn = nnfm_loss(&ext.extract(&r).unwrap(), &style).unwrap().loss;
        assert_eq!(out.l1, l1);
        assert_eq!(out.nnfm, nn);
        assert!((out.total - (w.rgb * l1 + w.nnfm * nn)).abs() < 1e-12);
    }
    let r = tk::random_image(&mut rng, 16, 16);
    let t = tk::random_image(&mut rng, 16, 16);
    let only_l1 = finetune_loss(&r, &t, &style, &ext, &LossWeights { rgb: 1.0, nnfm: 0.0 }).unwrap();
    assert_eq!(only_l1.total, only_l1.l1);
    assert_eq!(only_l1.grad, l1_rgb_loss(&r, &t).unwrap().1);
}

#[test]
fn finetune_gradient_matches_finite_differences() {
    let ext = FeatureExtractor::new(&ExtractorConfig { seed: 1, channels: vec![8, 8, 8] });
    let mut rng = tk::rng(26);
    let style = ext.extract(&tk::random_image(&mut rng, 32, 32)).unwrap();
    let weights = LossWeights { rgb: 0.7, nnfm: 1.3 };
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 5 {
        attempts += 1;
        assert!(attempts < 500, "could not draw inputs away from kinks");
        let r = tk::random_image(&mut rng, 8, 8);
        let t = tk::random_image(&mut rng, 8, 8);
        let (f, tape) = ext.forward(&r).unwrap();
        let l1_gap = r.data.iter().zip(&t.data).map(|(a, b)| (a - b).abs()).fold(f64::INFINITY, f64::min);
        if l1_gap < 1e-4 || FeatureExtractor::min_abs_preactivation(&tape) < 1e-4 || match_gap(&vectors(&f), &vectors(&style)) < 1e-4 {
            continue;
        }
        let out = finetune_loss(&r, &t, &style, &ext, &weights).unwrap();
        let numeric = tk::numeric_gradient(&r.data, 1e-6, |x| {
            let im = ImageRGB { data: x.to_vec(), ..r.clone() };
            finetune_loss(&im, &t, &style, &ext, &weights).unwrap().total
        });
        for (a, n) in out.grad.iter().zip(&numeric) {
            assert!(tk::grad_close(*a, *n), "analytic {a} numeric {n}");
        }
        checked += 1;
    }
}
