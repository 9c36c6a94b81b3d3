use ocular_core::dataset::DatasetKind;
use ocular_core::preprocess::*;
use ocular_core::Raster;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn pack_roundtrip_100_random_strips() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..100 {
        let ch = if i % 2 == 0 { 1 } else { 3 };
        let data: Vec<u8> = (0..IRIS_W * IRIS_H * ch).map(|_| rng.random()).collect();
        let img = Raster::from_vec(IRIS_W, IRIS_H, ch, data).unwrap();
        let canvas = to_canvas(&img, DatasetKind::Iris).unwrap();
        assert_eq!((canvas.width(), canvas.height()), (CANVAS, CANVAS));
        assert_eq!(from_canvas(&canvas, DatasetKind::Iris).unwrap(), img);
    }
}

#[test]
fn pack_moves_every_pixel_once() {
    // Mark each source pixel with a distinct id and look for it on the canvas.
    let img = Raster::gray_from_fn(IRIS_W, IRIS_H, |x, y| ((x + y * 3) % 251 + 1) as u8);
    let canvas = pack_iris_strips(&img).unwrap();
    let nonzero = canvas.data().iter().filter(|&&v| v != 0).count();
    assert_eq!(nonzero, IRIS_W * IRIS_H);
    for (x, y) in [(0, 0), (170, 63), (171, 0), (341, 10), (342, 5), (511, 63)] {
        let (cx, cy) = PACK_LAYOUT.canvas_coord(x, y);
        assert_eq!(canvas.get(cx, cy, 0), img.get(x, y, 0), "({x},{y})");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn squarify_keeps_range_and_pads_black(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo: u8 = rng.random_range(1..100);
        let hi: u8 = rng.random_range(150..=255);
        let img = Raster::gray_from_fn(PERIOCULAR_W, PERIOCULAR_H, |_, _| rng.random_range(lo..=hi));
        let sq = squarify_periocular(&img).unwrap();
        for y in 0..256 {
            for x in 0..256 {
                let v = sq.get(x, y, 0);
                if (32..224).contains(&y) {
                    prop_assert!(v >= lo && v <= hi);
                } else if y < 31 || y > 224 {
                    prop_assert_eq!(v, 0);
                }
            }
        }
    }

    #[test]
    fn gray_of_gray_rgb_is_identity(v in any::<u8>()) {
        let rgb = Raster::filled(3, 2, 3, v);
        prop_assert!(to_gray(&rgb).data().iter().all(|&g| g == v));
    }
}
