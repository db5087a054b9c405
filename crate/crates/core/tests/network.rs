use palvid::diffusion::{
    forward_noise, loss_and_grad, make_schedule, predict_eps, train, training_loss, Checkpoint,
    LatentWindow, NetworkConfig, ParamId, Params, TrainOptions, TrainingExample,
};
use palvid::vidio::{synth_generate, SynthConfig};
use palvid::{Frame, Palette};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> NetworkConfig {
    NetworkConfig {
        base_channels: 8,
        window_frames: 3,
        height: 5,
        width: 6,
        timesteps: 50,
        ..NetworkConfig::default()
    }
}

fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Frame<f64> {
    Frame::new(w, h, 3, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
}

fn random_palette(rng: &mut ChaCha8Rng) -> Palette {
    Palette::new([(); 5].map(|_| [rng.gen(), rng.gen(), rng.gen()])).unwrap()
}

fn example(cfg: &NetworkConfig, rng: &mut ChaCha8Rng, palette: Palette) -> TrainingExample<f64> {
    let (n, h, w) = (cfg.window_frames, cfg.height, cfg.width);
    let color = LatentWindow::new(n, 3, h, w, (0..n * 3 * h * w).map(|_| rng.gen()).collect()).unwrap();
    let gray = LatentWindow::new(n, 1, h, w, (0..n * h * w).map(|_| rng.gen()).collect()).unwrap();
    TrainingExample {
        color,
        gray,
        ref_frame: random_frame(rng, 4, 7),
        palette,
        t: rng.gen_range(1..=cfg.timesteps),
        eps: LatentWindow::randn(n, 3, h, w, rng),
    }
}

fn random_example(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> TrainingExample<f64> {
    let palette = random_palette(rng);
    example(cfg, rng, palette)
}

/// Parameters with nonzero biases so every path carries signal.
fn busy_params(cfg: &NetworkConfig, seed: u64) -> Params<f64> {
    let mut p = Params::init(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for (_, t) in p.iter_mut() {
        for v in &mut t.data {
            if *v == 0.0 {
                *v = rng.gen_range(-0.2..0.2);
            }
        }
    }
    p
}

#[test]
fn gradients_match_central_differences() {
    let cfg = tiny();
    let schedule = cfg.schedule().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<_> = (0..2).map(|_| random_example(&cfg, &mut rng)).collect();
    let params = busy_params(&cfg, 9);
    let (_, grad) = loss_and_grad(&batch, &cfg, &params, &schedule).unwrap();
    let h = 1e-4;
    let mut checked = 0;
    for id in ParamId::ALL {
        let len = params[id].data.len();
        for _ in 0..8 {
            let i = rng.gen_range(0..len);
            let mut plus = params.clone();
            plus[id].data[i] += h;
            let mut minus = params.clone();
            minus[id].data[i] -= h;
            let numeric = (training_loss(&batch, &cfg, &plus, &schedule).unwrap()
                - training_loss(&batch, &cfg, &minus, &schedule).unwrap())
                / (2.0 * h);
            let analytic = grad[id].data[i];
            let scale = analytic.abs().max(numeric.abs());
            assert!(
                (analytic - numeric).abs() <= 1e-3 * scale + 1e-10,
                "{}[{i}]: analytic {analytic} numeric {numeric}",
                id.name()
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 120);
}

#[test]
fn zero_checkpoint_predicts_zero() {
    let cfg = tiny();
    let params = Params::<f64>::zeros(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ex = random_example(&cfg, &mut rng);
    let z_in = palvid::diffusion::assemble_input(&ex.gray, &ex.eps).unwrap();
    let out = predict_eps(&z_in, 7, &ex.palette, &ex.ref_frame, &cfg, &params).unwrap();
    assert_eq!(out.shape(), [3, 3, 5, 6]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn palette_reaches_the_output_only_through_the_projection() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ex = random_example(&cfg, &mut rng);
    let z_in = palvid::diffusion::assemble_input(&ex.gray, &ex.eps).unwrap();
    let params = Params::<f64>::init(&cfg, 3);
    let with = predict_eps(&z_in, 4, &ex.palette, &ex.ref_frame, &cfg, &params).unwrap();
    let null = predict_eps(&z_in, 4, &Palette::null(), &ex.ref_frame, &cfg, &params).unwrap();
    assert_eq!(with.shape(), null.shape());
    assert!(with.data().iter().zip(null.data()).any(|(a, b)| a != b));
    let again = predict_eps(&z_in, 4, &ex.palette, &ex.ref_frame, &cfg, &params).unwrap();
    assert_eq!(with, again);

    let mut blind = params.clone();
    blind[ParamId::PaletteProj].data.iter_mut().for_each(|v| *v = 0.0);
    let a = predict_eps(&z_in, 4, &ex.palette, &ex.ref_frame, &cfg, &blind).unwrap();
    let b = predict_eps(&z_in, 4, &Palette::null(), &ex.ref_frame, &cfg, &blind).unwrap();
    assert_eq!(a, b);
}

#[test]
fn null_palette_gives_zero_projection_gradient() {
    let cfg = tiny();
    let schedule = cfg.schedule().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = vec![example(&cfg, &mut rng, Palette::null())];
    let (_, grad) = loss_and_grad(&batch, &cfg, &busy_params(&cfg, 1), &schedule).unwrap();
    assert!(grad[ParamId::PaletteProj].data.iter().all(|&g| g == 0.0));
    assert!(grad[ParamId::TimeEmbed].data.iter().any(|&g| g != 0.0));
}

#[test]
fn loss_examples() {
    let cfg = tiny();
    let schedule = cfg.schedule().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let zeros = Params::<f64>::zeros(&cfg);
    let mut ex = random_example(&cfg, &mut rng);

    // the zero network predicts 0, so eps = 0 is a perfect fit and eps = -1 a unit miss
    ex.eps = LatentWindow::zeros(3, 3, 5, 6);
    assert_eq!(training_loss(&[ex.clone()], &cfg, &zeros, &schedule).unwrap(), 0.0);
    ex.eps = LatentWindow::filled(3, 3, 5, 6, -1.0);
    assert_eq!(training_loss(&[ex.clone()], &cfg, &zeros, &schedule).unwrap(), 1.0);

    let params = busy_params(&cfg, 2);
    let a = random_example(&cfg, &mut rng);
    let b = random_example(&cfg, &mut rng);
    let ab = training_loss(&[a.clone(), b.clone()], &cfg, &params, &schedule).unwrap();
    let ba = training_loss(&[b, a], &cfg, &params, &schedule).unwrap();
    assert!((ab - ba).abs() < 1e-12);
    assert!(training_loss(&[], &cfg, &params, &schedule).is_err());
}

#[test]
fn noising_moments() {
    let schedule = make_schedule(200, 1e-4, 0.02).unwrap();
    let z0 = LatentWindow::<f64>::filled(1, 3, 4, 4, 0.7);
    let silent = LatentWindow::zeros(1, 3, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 2000;
    for t in [1, 100, 200] {
        let ab = schedule.alpha_bar(t);
        let (mean, var) = (ab.sqrt() * 0.7, 1.0 - ab);
        let clean = forward_noise(&z0, t, &silent, &schedule).unwrap();
        assert!(clean.data().iter().all(|&v| (v - mean).abs() < 1e-15));

        let (mut s, mut s2, mut count) = (0.0, 0.0, 0usize);
        for _ in 0..draws {
            let eps = LatentWindow::randn(1, 3, 4, 4, &mut rng);
            for &v in forward_noise(&z0, t, &eps, &schedule).unwrap().data() {
                s += v;
                s2 += v * v;
                count += 1;
            }
        }
        let m = s / count as f64;
        let v = s2 / count as f64 - m * m;
        let se_mean = (var / count as f64).sqrt();
        let se_var = var * (2.0 / (count - 1) as f64).sqrt();
        assert!((m - mean).abs() < 4.0 * se_mean, "t={t} mean {m} vs {mean}");
        assert!((v - var).abs() < 4.0 * se_var, "t={t} var {v} vs {var}");
    }
}

fn synth_set() -> Vec<(palvid::Video<f32>, palvid::Video<f32>)> {
    synth_generate(&SynthConfig {
        num_clips: 2,
        frames_per_clip: 4,
        width: 8,
        height: 8,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn synth_config() -> NetworkConfig {
    NetworkConfig {
        base_channels: 8,
        window_frames: 3,
        height: 8,
        width: 8,
        timesteps: 20,
        ..NetworkConfig::default()
    }
}

#[test]
fn training_is_seeded() {
    let data = synth_set();
    let cfg = synth_config();
    let opts = |seed| TrainOptions {
        steps: 5,
        seed,
        ..TrainOptions::default()
    };
    let a = train(&data, &cfg, &opts(1)).unwrap();
    let b = train(&data, &cfg, &opts(1)).unwrap();
    let c = train(&data, &cfg, &opts(2)).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_ne!(a.checkpoint.params, c.checkpoint.params);
    assert_eq!(a.losses.len(), 5);
    assert_eq!(a.checkpoint.meta.steps, 5);
    assert_eq!(a.checkpoint.meta.final_loss, a.losses.last().copied());
}

#[test]
fn zero_steps_is_initialization() {
    let data = synth_set();
    let cfg = synth_config();
    let report = train(
        &data,
        &cfg,
        &TrainOptions {
            steps: 0,
            seed: 8,
            ..TrainOptions::default()
        },
    )
    .unwrap();
    assert_eq!(report.checkpoint, Checkpoint::init(cfg, 8).unwrap());
    assert!(report.losses.is_empty());
}

#[test]
fn training_rejects_bad_datasets() {
    let data = synth_set();
    let mut cfg = synth_config();
    cfg.window_frames = 5;
    assert!(train(&data, &cfg, &TrainOptions::default()).is_err());
    let mut cfg = synth_config();
    cfg.width = 16;
    assert!(train(&data, &cfg, &TrainOptions::default()).is_err());
    assert!(train::<f32>(&[], &synth_config(), &TrainOptions::default()).is_err());
}

#[test]
fn diverging_training_aborts() {
    let data = synth_set();
    let cfg = synth_config();
    let err = train(
        &data,
        &cfg,
        &TrainOptions {
            steps: 200,
            lr: 1e30,
            warmup_steps: 0,
            ..TrainOptions::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, palvid::Error::Diverged { .. }), "{err:?}");
}

#[test]
fn full_palette_dropout_freezes_the_projection() {
    let data = synth_set();
    let cfg = synth_config();
    let opts = |p| TrainOptions {
        steps: 4,
        palette_dropout: p,
        ..TrainOptions::default()
    };
    let init = Params::<f32>::init(&cfg, 0);
    let dropped = train(&data, &cfg, &opts(1.0)).unwrap().checkpoint.params;
    assert_eq!(dropped[ParamId::PaletteProj], init[ParamId::PaletteProj]);
    assert_ne!(dropped[ParamId::InConvWeight], init[ParamId::InConvWeight]);

    let kept = train(&data, &cfg, &opts(0.0)).unwrap().checkpoint.params;
    assert_ne!(kept[ParamId::PaletteProj], init[ParamId::PaletteProj]);
    assert!(train(&data, &cfg, &opts(1.5)).is_err());
    assert!(train(&data, &cfg, &opts(-0.1)).is_err());
}
