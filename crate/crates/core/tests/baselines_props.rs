use ocular_core::baselines::*;
use ocular_core::metrics::{eer, roc_points, ScoreSet};
use ocular_core::Raster;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn vecs(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(0.0f64..1.0, n),
        prop::collection::vec(0.0f64..1.0, n),
        prop::collection::vec(0.0f64..1.0, n),
    )
}

proptest! {
    #[test]
    fn distance_axioms((a, b, c) in vecs(16)) {
        for m in [Metric::Euclidean, Metric::Chi2] {
            let ab = pair_distance(&a, &b, m).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, pair_distance(&b, &a, m).unwrap());
            prop_assert_eq!(pair_distance(&a, &a, m).unwrap(), 0.0);
            if a != b {
                prop_assert!(ab > 0.0);
            }
        }
        let d = |x: &[f64], y: &[f64]| pair_distance(x, y, Metric::Euclidean).unwrap();
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }
}

#[test]
fn descriptors_are_deterministic_and_sized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = Raster::gray_from_fn(256, 256, |_, _| rng.random());
    let cfg = DescriptorConfig::default();
    for kind in [SystemKind::Lbp, SystemKind::Hog] {
        let sys = BaselineSystem::new(kind, Metric::Euclidean);
        let (Features::Vector(a), Features::Vector(b)) = (sys.extract(&img, &cfg).unwrap(), sys.extract(&img, &cfg).unwrap()) else {
            panic!()
        };
        assert_eq!(a, b);
        let expect = match kind {
            SystemKind::Lbp => cfg.lbp.descriptor_len(),
            _ => cfg.hog.descriptor_len(256, 256),
        };
        assert_eq!(a.len(), expect);
    }
    assert!(BaselineSystem::new(SystemKind::Lbp, Metric::Chi2).extract(&Raster::zeros(8, 8, 3), &cfg).is_err());
}

#[test]
fn same_image_scores_highest() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = Raster::gray_from_fn(128, 128, |x, y| ((x as f64 / 9.0).sin() * 60.0 + (y as f64 / 5.0).cos() * 50.0 + 128.0) as u8);
    let b = Raster::gray_from_fn(128, 128, |_, _| rng.random());
    let cfg = DescriptorConfig::default();
    for sys in [
        BaselineSystem::new(SystemKind::Lbp, Metric::Chi2),
        BaselineSystem::new(SystemKind::Hog, Metric::Euclidean),
        BaselineSystem::new(SystemKind::Pixel, Metric::Euclidean),
        BaselineSystem::new(SystemKind::Sift, Metric::Euclidean),
    ] {
        let (fa, fb) = (sys.extract(&a, &cfg).unwrap(), sys.extract(&b, &cfg).unwrap());
        let same = sys.compare(&fa, &fa, &cfg).unwrap();
        let diff = sys.compare(&fa, &fb, &cfg).unwrap();
        assert!(same > diff, "{sys}: {same} vs {diff}");
    }
}

fn gauss_scores(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> (Vec<f64>, Vec<f64>) {
    let norm = Normal::new(0.0, 1.0).unwrap();
    let g = (0..n / 2).map(|_| norm.sample(rng) + shift).collect();
    let i = (0..n - n / 2).map(|_| norm.sample(rng)).collect();
    (g, i)
}

fn set(name: &str, g: &[f64], i: &[f64]) -> ScoreSet {
    ScoreSet::from_scores(name, g, i).unwrap()
}

#[test]
fn fusion_of_separating_system_stays_separating() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g: Vec<f64> = (0..500).map(|_| rng.random_range(2.0..3.0)).collect();
    let i: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (ng, ni) = gauss_scores(&mut rng, 1000, 0.5);
    let sets = [set("a", &g, &i), set("b", &ng, &ni)];
    let model = fit_llr_fusion(&sets).unwrap();
    let fused = model.fuse_sets(&sets, "fused").unwrap();
    assert!(eer(&fused).unwrap() <= eer(&sets[0]).unwrap());
    assert!(model.weights.iter().chain([&model.bias]).all(|w| w.is_finite()));
}

#[test]
fn duplicated_system_keeps_roc() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (g, i) = gauss_scores(&mut rng, 2000, 1.2);
    let a = set("a", &g, &i);
    let sets = [a.clone(), a.clone()];
    let fused = fit_llr_fusion(&sets).unwrap().fuse_sets(&sets, "fused").unwrap();
    let (ra, rf) = (roc_points(&a).unwrap(), roc_points(&fused).unwrap());
    assert_eq!(ra.points.len(), rf.points.len());
    for (p, q) in ra.points.iter().zip(&rf.points) {
        assert_eq!((p.far, p.gar), (q.far, q.gar));
    }
    assert!((eer(&a).unwrap() - eer(&fused).unwrap()).abs() < 1e-12);
}

#[test]
fn noise_system_does_not_hurt_much() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (g, i) = gauss_scores(&mut rng, 10_000, 1.5);
    let norm = Normal::new(0.0, 1.0).unwrap();
    let ng: Vec<f64> = (0..g.len()).map(|_| norm.sample(&mut rng)).collect();
    let ni: Vec<f64> = (0..i.len()).map(|_| norm.sample(&mut rng)).collect();
    let sets = [set("a", &g, &i), set("noise", &ng, &ni)];
    let fused = fit_llr_fusion(&sets).unwrap().fuse_sets(&sets, "fused").unwrap();
    let (best, f) = (eer(&sets[0]).unwrap(), eer(&fused).unwrap());
    assert!((f - best).abs() < 1.0, "fused {f} vs best {best}");
}

#[test]
fn complementary_systems_improve() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (g1, i1) = gauss_scores(&mut rng, 4000, 1.0);
    let (g2, i2) = gauss_scores(&mut rng, 4000, 1.0);
    let sets = [set("a", &g1, &i1), set("b", &g2, &i2)];
    let model = fit_llr_fusion(&sets).unwrap();
    let fused = model.fuse_sets(&sets, "fused").unwrap();
    assert!(eer(&fused).unwrap() < eer(&sets[0]).unwrap().min(eer(&sets[1]).unwrap()));
    assert!((model.weights[0] / model.weights[1] - 1.0).abs() < 0.25);
}
