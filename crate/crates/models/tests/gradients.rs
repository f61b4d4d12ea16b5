//! Central finite differences against autograd, in f64.

use candle_core::{DType, Device, Tensor, Var};
use petrec_models::sdam::{sdam_loss, LossReduction, Sdam, SdamConfig};
use petrec_models::params::ParamStore;
use petrec_models::transgan::{charbonnier_loss, Generator, GeneratorConfig, perceptual_loss, EncoderConfig, PerceptualEncoders, DEFAULT_EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;


fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Vec<f64> {
    (0..shape.iter().product()).map(|_| rng.random_range(lo..hi)).collect()
}

fn tensor(v: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_slice(v, shape, &Device::Cpu).unwrap()
}

fn value(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-10)
}

/// Compare d loss / d x[i] for the listed coordinates.
fn check(x: &[f64], shape: &[usize], coords: &[usize], tol: f64, loss: impl Fn(&Tensor) -> Tensor) {
    check_with_step(x, shape, coords, tol, STEP, loss)
}

fn check_with_step(x: &[f64], shape: &[usize], coords: &[usize], tol: f64, step: f64, loss: impl Fn(&Tensor) -> Tensor) {
    let var = Var::from_tensor(&tensor(x, shape)).unwrap();
    let grads = loss(var.as_tensor()).backward().unwrap();
    let g = grads.get(&var).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    for &i in coords {
        let mut up = x.to_vec();
        up[i] += step;
        let mut down = x.to_vec();
        down[i] -= step;
        let fd = (value(&loss(&tensor(&up, shape))) - value(&loss(&tensor(&down, shape)))) / (2.0 * step);
        assert!(
            rel_err(fd, g[i]) <= tol || (fd - g[i]).abs() < 1e-9,
            "coordinate {i}: finite difference {fd} vs autograd {}",
            g[i]
        );
    }
}

#[test]
fn charbonnier_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = [8, 8];
    for _ in 0..20 {
        let a = random(&mut rng, &shape, 0.0, 1.0);
        // |a - b| >= 0.01 keeps every perturbation clear of the kink at a = b
        let b: Vec<f64> = a
            .iter()
            .map(|v| v + rng.random_range(0.01..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let b = tensor(&b, &shape);
        let all: Vec<usize> = (0..64).collect();
        check(&a, &shape, &all, 1e-4, |a| charbonnier_loss(a, &b, DEFAULT_EPS).unwrap());
    }
}

#[test]
fn perceptual_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let enc = PerceptualEncoders::new(&EncoderConfig::default(), DType::F64).unwrap();
    let shape = [1, 1, 32, 32];
    for _ in 0..20 {
        let g = random(&mut rng, &shape, 0.0, 1.0);
        let y = tensor(&random(&mut rng, &shape, 0.0, 1.0), &shape);
        let coords: Vec<usize> = (0..12).map(|_| rng.random_range(0..1024)).collect();
        check_with_step(&g, &shape, &coords, 1e-3, 1e-6, |g| perceptual_loss(&enc, &y, g, DEFAULT_EPS).unwrap());
    }
}

#[test]
fn sdam_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = [2, 1, 4, 4];
    for reduction in [LossReduction::Sum, LossReduction::Mean] {
        for _ in 0..20 {
            let r = random(&mut rng, &shape, 0.0, 1.0);
            let y = tensor(&random(&mut rng, &shape, 0.0, 1.0), &shape);
            let all: Vec<usize> = (0..32).collect();
            check(&r, &shape, &all, 1e-4, |r| sdam_loss(r, &y, reduction).unwrap());
        }
    }
}

#[test]
fn sdam_loss_gradient_through_module() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = SdamConfig {
        radius: 1,
        offset_depth: 2,
        recon_blocks: 1,
        ..SdamConfig::default()
    };
    let model = Sdam::new(&cfg, 9, DType::F64).unwrap();
    // replace the zero-initialised heads so gradients traverse offsets and residual
    let mut live = std::collections::HashMap::new();
    for (n, t) in model.store().tensors() {
        let t = if n.starts_with("sdam.offset.out") || n.starts_with("sdam.recon.out") {
            let v = random(&mut rng, t.dims(), -0.05, 0.05);
            tensor(&v, t.dims())
        } else {
            t.clone()
        };
        live.insert(n.to_string(), t);
    }
    model.store().load(&live, "").unwrap();
    let shape = [1, 3, 8, 8];
    for _ in 0..5 {
        let x = random(&mut rng, &shape, 0.0, 1.0);
        let y = tensor(&random(&mut rng, &[1, 1, 8, 8], 0.0, 1.0), &[1, 1, 8, 8]);
        let coords: Vec<usize> = (0..8).map(|_| rng.random_range(0..192)).collect();
        // input perturbations move sample positions; a small step stays between bilinear kinks
        check_with_step(&x, &shape, &coords, 1e-3, 1e-6, |x| {
            sdam_loss(&model.forward(x).unwrap().0, &y, LossReduction::Sum).unwrap()
        });
    }
}

#[test]
fn generator_input_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = GeneratorConfig {
        height: 16,
        width: 16,
        patch_size: 4,
        embed_dim: 16,
        n_resnet_blocks: 1,
        ..GeneratorConfig::default()
    };
    let gen = Generator::new(&cfg, &mut ParamStore::new(3, DType::F64)).unwrap();
    let shape = [1, 3, 16, 16];
    let probe = tensor(&random(&mut rng, &[1, 1, 16, 16], -1.0, 1.0), &[1, 1, 16, 16]);
    for _ in 0..3 {
        let x = random(&mut rng, &shape, 0.0, 1.0);
        let coords: Vec<usize> = (0..10).map(|_| rng.random_range(0..768)).collect();
        check_with_step(&x, &shape, &coords, 1e-3, 1e-6, |x| {
            (gen.forward(x).unwrap() * &probe).unwrap().sum_all().unwrap()
        });
    }
}
