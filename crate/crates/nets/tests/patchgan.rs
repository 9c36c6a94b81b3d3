use ocular_nets::translator::{field_of, output_size, receptive_field, Discriminator, PATCH_LAYERS};
use tch::nn::{self, ModuleT};
use tch::{Device, Kind, Tensor};

fn covers(i: i64, pixel: i64) -> bool {
    let (lo, hi) = field_of(&PATCH_LAYERS, i);
    lo <= pixel && pixel <= hi
}

#[test]
fn analytic_field() {
    assert_eq!(receptive_field(&PATCH_LAYERS), 70);
    assert_eq!(output_size(&PATCH_LAYERS, 256), 30);
    for i in 0..30 {
        let (lo, hi) = field_of(&PATCH_LAYERS, i);
        assert_eq!(hi - lo + 1, 70);
    }
}

/// Perturbs one input pixel and checks that only output units whose field
/// covers it move.
#[test]
fn perturbation_probe() {
    tch::manual_seed(11);
    let vs = nn::VarStore::new(Device::Cpu);
    let d = Discriminator::new(&vs.root(), 2, 8);
    let x = Tensor::rand([1, 2, 256, 256], (Kind::Float, Device::Cpu)) * 2.0 - 1.0;
    let base = tch::no_grad(|| d.forward_t(&x, false));
    assert_eq!(base.size(), vec![1, 1, 30, 30]);
    for (py, px) in [(128i64, 128i64), (0, 0), (255, 101), (37, 222)] {
        let y = x.copy();
        let _ = y.get(0).get(1).get(py).get(px).fill_(50.0);
        let out = tch::no_grad(|| d.forward_t(&y, false));
        let diff = Vec::<f32>::try_from((out - &base).abs().view([-1])).unwrap();
        let (mut moved, mut covering) = (0, 0);
        for oy in 0..30 {
            for ox in 0..30 {
                let changed = diff[(oy * 30 + ox) as usize] > 1e-6;
                let inside = covers(oy, py) && covers(ox, px);
                assert!(!changed || inside, "unit ({oy},{ox}) moved for pixel ({py},{px})");
                moved += changed as usize;
                covering += inside as usize;
            }
        }
        assert!(moved > 0 && moved * 2 >= covering, "pixel ({py},{px}): {moved} of {covering}");
    }
}
