use ocular_core::dataset::{DatasetIndex, DatasetKind, Eye, SampleKey, Spectrum, Split};
use ocular_core::metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Brute-force ROC vertices: for each candidate threshold, count accepts directly.
fn brute_vertices(gen: &[f64], imp: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut ts: Vec<f64> = gen.iter().chain(imp).copied().collect();
    ts.push(f64::INFINITY);
    ts.push(f64::NEG_INFINITY);
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ts.dedup();
    ts.iter()
        .map(|&t| {
            let far = imp.iter().filter(|&&s| s >= t).count() as f64 / imp.len() as f64;
            let gar = gen.iter().filter(|&&s| s >= t).count() as f64 / gen.len() as f64;
            (t, far, gar)
        })
        .collect()
}

/// EER as the first intersection of the piecewise-linear (FAR, FRR) path
/// with the diagonal, found by scanning every segment.
fn brute_eer(gen: &[f64], imp: &[f64]) -> f64 {
    let v = brute_vertices(gen, imp);
    for w in v.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, ra) = (a.1, 1.0 - a.2);
        let (fb, rb) = (b.1, 1.0 - b.2);
        if fa == ra {
            return 100.0 * fa;
        }
        if (fa - ra) < 0.0 && (fb - rb) >= 0.0 {
            if fb == rb {
                return 100.0 * fb;
            }
            let s = (ra - fa) / ((fb - fa) - (rb - ra));
            let far = fa + s * (fb - fa);
            let frr = ra + s * (rb - ra);
            return 100.0 * (far + frr) / 2.0;
        }
    }
    unreachable!()
}

fn brute_gar(gen: &[f64], imp: &[f64], target: f64) -> f64 {
    100.0
        * brute_vertices(gen, imp)
            .into_iter()
            .filter(|v| v.1 <= target)
            .map(|v| v.2)
            .fold(0.0, f64::max)
}

fn random_scores(seed: u64, n: usize, shift: f64, rounding: f64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = Normal::new(0.0, 1.0).unwrap();
    let ng = n / 4;
    let round = |x: f64| if rounding > 0.0 { (x / rounding).round() * rounding } else { x };
    let gen = (0..ng).map(|_| round(norm.sample(&mut rng) + shift)).collect();
    let imp = (0..n - ng).map(|_| round(norm.sample(&mut rng))).collect();
    (gen, imp)
}

#[test]
fn eer_and_gar_match_brute_force_on_1000_scores() {
    for (seed, shift, rounding) in [(1, 1.5, 0.0), (2, 0.5, 0.0), (3, 2.5, 0.1), (4, 1.0, 0.5), (5, 4.0, 0.0)] {
        let (g, i) = random_scores(seed, 1000, shift, rounding);
        let set = ScoreSet::from_scores("r", &g, &i).unwrap();
        let e = eer(&set).unwrap();
        assert!((e - brute_eer(&g, &i)).abs() < 1e-9, "seed {seed}: {e} vs {}", brute_eer(&g, &i));
        for t in [0.1, 0.01, 0.001] {
            assert_eq!(gar_at_far(&set, t).unwrap(), brute_gar(&g, &i, t), "seed {seed} far {t}");
        }
        let curve = roc_points(&set).unwrap();
        let brute = brute_vertices(&g, &i);
        assert_eq!(curve.points.len(), brute.len());
        for (p, b) in curve.points.iter().zip(&brute) {
            assert_eq!((p.far, p.gar), (b.1, b.2));
        }
    }
}

#[test]
fn eer_bounded_by_vertex_errors() {
    let (g, i) = random_scores(9, 1000, 1.0, 0.0);
    let set = ScoreSet::from_scores("r", &g, &i).unwrap();
    let e = eer(&set).unwrap();
    let best_vertex = brute_vertices(&g, &i)
        .iter()
        .map(|v| v.1.max(1.0 - v.2))
        .fold(f64::INFINITY, f64::min);
    assert!(e <= 100.0 * best_vertex + 1e-9);
    assert!(e > 0.0 && e < 50.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rank_invariance(seed in 0u64..10_000, a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let (g, i) = random_scores(seed, 200, 1.0, 0.0);
        let set = ScoreSet::from_scores("r", &g, &i).unwrap();
        for f in [&(|x: f64| a * x + b) as &dyn Fn(f64) -> f64, &|x: f64| (x / 4.0).exp(), &|x: f64| x.powi(3)] {
            let t = set.map_scores(f).unwrap();
            prop_assert!((eer(&set).unwrap() - eer(&t).unwrap()).abs() < 1e-9);
            for far in [0.1, 0.01] {
                prop_assert_eq!(gar_at_far(&set, far).unwrap(), gar_at_far(&t, far).unwrap());
            }
        }
    }

    #[test]
    fn roc_monotone_and_summary_bounds(seed in 0u64..10_000, shift in -1.0f64..4.0) {
        let (g, i) = random_scores(seed, 300, shift, 0.25);
        let set = ScoreSet::from_scores("r", &g, &i).unwrap();
        let c = roc_points(&set).unwrap();
        for w in c.points.windows(2) {
            prop_assert!(w[1].far >= w[0].far && w[1].gar >= w[0].gar);
            prop_assert!(w[1].threshold < w[0].threshold);
        }
        let s = summarize(&set).unwrap();
        prop_assert!((0.0..=100.0).contains(&s.eer));
        prop_assert!(s.gar_at_01 <= s.gar_at_1 && s.gar_at_1 <= s.gar_at_10);
    }

    #[test]
    fn improving_one_genuine_never_raises_eer(seed in 0u64..10_000, k in 0usize..50, bump in 0.0f64..3.0) {
        let (mut g, i) = random_scores(seed, 200, 1.0, 0.0);
        let before = eer(&ScoreSet::from_scores("r", &g, &i).unwrap()).unwrap();
        g[k] += bump;
        let after = eer(&ScoreSet::from_scores("r", &g, &i).unwrap()).unwrap();
        prop_assert!(after <= before + 1e-9);
    }
}

fn index(users: u32) -> DatasetIndex {
    let mut idx = DatasetIndex::new("/v", DatasetKind::Periocular);
    for s in 1..=users {
        for eye in Eye::BOTH {
            for sp in [Spectrum::Nir, Spectrum::Vis] {
                for i in 1..=15 {
                    let k = SampleKey::new(s, eye, sp, i).unwrap();
                    idx.insert(k, k.relative_path(), if i <= 10 { Split::Train } else { Split::Test }).unwrap();
                }
            }
        }
    }
    idx.split().1
}

fn counts(users: u32) -> [usize; 4] {
    let idx = index(users);
    let n = |k| build_protocol(k, &idx, Spectrum::Nir, Spectrum::Vis).unwrap();
    let left = |v: Vec<Comparison>| v.into_iter().filter(|c| c.eye() == Eye::Left).count();
    [
        n(ProtocolKind::BaselineGenuine).len(),
        n(ProtocolKind::BaselineImpostor).len(),
        left(n(ProtocolKind::CnnGenuine)),
        left(n(ProtocolKind::CnnImpostor)),
    ]
}

#[test]
fn protocol_counts_closed_form() {
    for u in [2usize, 10] {
        assert_eq!(counts(u as u32), [2 * u * 10, 2 * u * (2 * u - 1), u * 25, u * (u - 1) * 5]);
    }
}

#[test]
fn protocol_counts_full_population() {
    assert_eq!(counts(209), [4180, 174306, 5225, 217360]);
}

#[test]
fn quality_shift_and_symmetry() {
    use ocular_core::Raster;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = Raster::gray_from_fn(40, 30, |_, _| rng.random_range(20..200));
    let b = Raster::gray_from_fn(40, 30, |x, y| a.get(x, y, 0).saturating_add(((x + y) % 7) as u8));
    let shift = |r: &Raster, c: u8| Raster::gray_from_fn(40, 30, |x, y| r.get(x, y, 0) + c);
    assert_eq!(psnr(&a, &b, 255.0).unwrap(), psnr(&shift(&a, 30), &shift(&b, 30), 255.0).unwrap());
    let p = SsimParams::default();
    assert_eq!(ssim(&a, &b, &p).unwrap(), ssim(&b, &a, &p).unwrap());
    assert!(ssim(&a, &b, &p).unwrap() < 1.0);
}
