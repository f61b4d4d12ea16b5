mod common;

use candle_core::{DType, Device, Tensor};
use petrec_core::deform::OffsetField;
use petrec_core::{extract_window, Modality, SliceWindow, Volume3D};
use petrec_models::checkpoint::{load_sdam, load_transgan, meta, save_sdam, save_transgan};
use petrec_models::data::Normalizer;
use petrec_models::params::ParamStore;
use petrec_models::sdam::{refine_volume, Sdam, SdamConfig};
use petrec_models::transgan::{
    Discriminator, DiscriminatorConfig, EncoderConfig, Generator, GeneratorConfig, PerceptualEncoders, TransGan,
    TransGanConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_window(t: usize, h: usize, w: usize, seed: u64) -> SliceWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..t * h * w).map(|_| rng.random_range(0.0f32..1.0)).collect();
    SliceWindow::from_raw(data, t, h, w, "w", 0).unwrap()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn generator_tokens_shape_and_range() {
    let cfg = GeneratorConfig::default();
    assert_eq!(cfg.n_tokens(), 64);
    let gen = Generator::new(&cfg, &mut ParamStore::new(1, DType::F32)).unwrap();
    let out = gen.generate_slice(&random_window(3, 64, 64, 2)).unwrap();
    assert_eq!(out.len(), 64 * 64);
    assert!(out.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(gen.generate_slice(&random_window(5, 64, 64, 2)).is_err());
    let bad = GeneratorConfig { patch_size: 7, ..cfg };
    assert!(Generator::new(&bad, &mut ParamStore::new(1, DType::F32)).is_err());
}

#[test]
fn generator_is_deterministic_and_global() {
    let cfg = GeneratorConfig::default();
    let build = || Generator::new(&cfg, &mut ParamStore::new(7, DType::F32)).unwrap();
    let win = random_window(3, 64, 64, 3);
    let a = build().generate_slice(&win).unwrap();
    assert_eq!(a, build().generate_slice(&win).unwrap());

    let mut data = win.data().to_vec();
    data[64 * 64 + 5] += 0.5;
    let moved = SliceWindow::from_raw(data, 3, 64, 64, "w", 0).unwrap();
    let b = build().generate_slice(&moved).unwrap();
    assert!(max_abs_diff(&a, &b) > 0.0);
    // far from the perturbed pixel only the attention path can carry the change
    let far = (60 * 64 + 60)..(60 * 64 + 64);
    assert!(max_abs_diff(&a[far.clone()], &b[far]) > 0.0);
}

#[test]
fn discriminator_score_map() {
    let d = Discriminator::new(&DiscriminatorConfig::default(), &mut ParamStore::new(3, DType::F32)).unwrap();
    let dev = Device::Cpu;
    let x = Tensor::rand(0f32, 1.0, (2, 1, 64, 64), &dev).unwrap();
    let y = Tensor::rand(0f32, 1.0, (2, 1, 64, 64), &dev).unwrap();
    let g = Tensor::rand(0f32, 1.0, (2, 1, 64, 64), &dev).unwrap();
    let sy = d.forward(&x, &y).unwrap();
    assert_eq!(sy.dims(), [2, 1, 6, 6]);
    let sy = sy.flatten_all().unwrap().to_vec1::<f32>().unwrap();
    let sg = d.forward(&x, &g).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
    assert!(sy.iter().all(|v| v.is_finite()));
    assert!(max_abs_diff(&sy, &sg) > 0.0);
    assert!(d.forward(&x, &y.narrow(2, 0, 32).unwrap()).is_err());
}

#[test]
fn encoders_are_frozen_and_symmetric() {
    let enc = PerceptualEncoders::new(&EncoderConfig::default(), DType::F32).unwrap();
    assert_eq!(enc.trainable_count(), 0);
    let dev = Device::Cpu;
    let y = Tensor::rand(0f32, 1.0, (1, 1, 32, 32), &dev).unwrap();
    let g = Tensor::rand(0f32, 1.0, (1, 1, 32, 32), &dev).unwrap();
    let l = |a: &Tensor, b: &Tensor| {
        petrec_models::transgan::perceptual_loss(&enc, a, b, 1e-8)
            .unwrap()
            .to_scalar::<f32>()
            .unwrap()
    };
    assert_eq!(l(&y, &g), l(&g, &y));
    assert_eq!(l(&y, &y), 1e-8f32 + 1e-8f32);
    assert!(petrec_models::transgan::perceptual_loss(&enc, &y.narrow(2, 0, 30).unwrap(), &g.narrow(2, 0, 30).unwrap(), 1e-8).is_err());
}

#[test]
fn encoder_weights_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vgg.safetensors");
    let reference = PerceptualEncoders::new(&EncoderConfig { seed: 99, ..EncoderConfig::default() }, DType::F32).unwrap();
    let mut tensors = std::collections::HashMap::new();
    for store in [reference.vgg16.store(), reference.vgg19.store()] {
        for (n, t) in store.tensors() {
            tensors.insert(n.to_string(), t.clone());
        }
    }
    candle_core::safetensors::save(&tensors, &path).unwrap();
    let loaded = PerceptualEncoders::new(
        &EncoderConfig {
            weights_path: Some(path),
            ..EncoderConfig::default()
        },
        DType::F32,
    )
    .unwrap();
    assert_eq!(loaded.digest().unwrap(), reference.digest().unwrap());
    let missing = EncoderConfig {
        weights_path: Some(dir.path().join("absent.safetensors")),
        ..EncoderConfig::default()
    };
    assert!(PerceptualEncoders::new(&missing, DType::F32).is_err());
}

#[test]
fn offset_field_shapes() {
    for (r, s) in [(0, 1), (1, 3), (2, 3)] {
        let cfg = SdamConfig {
            radius: r,
            kernel_side: s,
            ..SdamConfig::default()
        };
        let model = Sdam::new(&cfg, 1, DType::F32).unwrap();
        let field: OffsetField = model.predict_offsets(&random_window(2 * r + 1, 64, 64, 4)).unwrap();
        assert_eq!(field.shape, [2 * r + 1, 2 * s * s, 64, 64]);
        assert_eq!(field.data.len(), field.shape.iter().product::<usize>());
    }
    let model = Sdam::new(&SdamConfig::default(), 1, DType::F32).unwrap();
    assert!(model.predict_offsets(&random_window(3, 64, 64, 4)).is_err());
}

#[test]
fn refinement_identity_and_residual_algebra() {
    let model = Sdam::new(&SdamConfig::default(), 5, DType::F32).unwrap();
    let win = random_window(5, 16, 16, 5);
    let fresh = model.refine_slice(&win).unwrap();
    assert_eq!(fresh.data, win.center());
    assert!(fresh.residual.iter().all(|&v| v == 0.0));

    // give the residual head nonzero weights, then check data = residual + target bitwise;
    // the subtracted form can differ by the one rounding of that sum
    let trained = Sdam::new(&SdamConfig::default(), 5, DType::F32).unwrap();
    let mut tensors = std::collections::HashMap::new();
    for (n, t) in trained.store().tensors() {
        let t = if n.starts_with("sdam.recon.out") { (t.ones_like().unwrap() * 0.01).unwrap() } else { t.clone() };
        tensors.insert(n.to_string(), t);
    }
    trained.store().load(&tensors, "").unwrap();
    let out = trained.refine_slice(&win).unwrap();
    assert!(out.residual.iter().any(|&v| v != 0.0));
    for ((d, r), c) in out.data.iter().zip(&out.residual).zip(win.center()) {
        assert_eq!(d.to_bits(), (r + c).to_bits());
        assert!((d - r - c).abs() <= f32::EPSILON * d.abs());
    }
    trained.zero_residual().unwrap();
    assert_eq!(trained.refine_slice(&win).unwrap().data, win.center());
}

#[test]
fn refine_volume_contracts() {
    let model = Sdam::new(&SdamConfig::default(), 6, DType::F32).unwrap();
    let norm = Normalizer::new(2.0).unwrap();
    let (_, f) = common::phantom_pair([1, 16, 16], 8);
    let gen = f.with_data(f.data().to_vec(), Modality::Generated).unwrap();
    let out = refine_volume(&model, &gen, &norm, 4).unwrap();
    assert_eq!(out.dims(), gen.dims());
    assert_eq!(out.modality, Modality::Refined);
    assert_eq!(out.data(), gen.data());

    let (_, f) = common::phantom_pair([6, 16, 16], 9);
    let out = refine_volume(&model, &f, &norm, 4).unwrap();
    assert_eq!(out.dims(), [6, 16, 16]);
    assert_eq!(out.data(), f.data());
}

#[test]
fn window_is_edge_replicated_for_refinement() {
    let vol = Volume3D::new([1, 4, 4], vec![1.0; 16], "s", Modality::Generated).unwrap();
    let w = extract_window(&vol, 0, 2).unwrap();
    assert_eq!(w.source_indices, vec![0; 5]);
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TransGanConfig {
        generator: GeneratorConfig {
            height: 32,
            width: 32,
            ..GeneratorConfig::default()
        },
        ..TransGanConfig::default()
    };
    let model = TransGan::new(&cfg, 21, DType::F32).unwrap();
    let norm = Normalizer::new(3.5).unwrap();
    let m = meta("transgan", &cfg, &norm, 21, 40, 27.5).unwrap();
    let path = dir.path().join("g.safetensors");
    save_transgan(&path, &model, &m).unwrap();
    let (back, m2) = load_transgan(&path, DType::F32).unwrap();
    assert_eq!(m, m2);
    assert_eq!(m2.normalizer().unwrap(), norm);
    assert_eq!(back.generator_store().digest().unwrap(), model.generator_store().digest().unwrap());
    assert_eq!(back.discriminator_store().digest().unwrap(), model.discriminator_store().digest().unwrap());
    assert!(load_sdam(&path, DType::F32).is_err());

    let s = Sdam::new(&SdamConfig::default(), 22, DType::F32).unwrap();
    let m = meta("sdam", s.config(), &norm, 22, 0, f64::NEG_INFINITY).unwrap();
    let path = dir.path().join("s.safetensors");
    save_sdam(&path, &s, &m).unwrap();
    let (back, m2) = load_sdam(&path, DType::F32).unwrap();
    assert_eq!(m2.best_val_psnr, f64::NEG_INFINITY);
    assert_eq!(back.store().digest().unwrap(), s.store().digest().unwrap());
}

#[test]
fn parameter_counts() {
    let model = TransGan::new(&TransGanConfig::default(), 1, DType::F32).unwrap();
    let gen = model.generator_store().trainable_count();
    let disc = model.discriminator_store().trainable_count();
    assert_eq!(model.parameter_count(), gen + disc);
    assert!(gen > 0 && disc > 0);
}
