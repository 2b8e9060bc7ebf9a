use sphconv::dataio::{synth_scenes, SceneSpec};
use sphconv::gradcheck::reduced_config;
use sphconv::network::{cross_entropy, evaluate_miou, Adam, Mode, Network, NetworkConfig, TrainState};
use sphconv::{KernelKind, PointCloud};

fn scenes(config: &NetworkConfig, count: usize, seed: u64) -> Vec<PointCloud> {
    let mut spec = SceneSpec::three_class();
    spec.points = config.n_points;
    synth_scenes(seed, count, &spec).unwrap().into_iter().map(|s| s.cloud).collect()
}

fn small(kind: KernelKind, density: bool) -> NetworkConfig {
    let mut c = reduced_config();
    c.kernel_kind = kind;
    c.use_density = density;
    c
}

#[test]
fn level_shapes_follow_the_config() {
    for kind in [KernelKind::SpherePacked, KernelKind::CubeGrid] {
        for density in [false, true] {
            let mut c = small(kind, density);
            c.encoder_channels = vec![4, 6, 8];
            c.encoder_points = vec![24, 10, 4];
            let mut net = Network::new(&c, 1).unwrap();
            let batch = scenes(&c, 2, 1);
            let fwd = net.forward(&batch, Mode::Train, 0).unwrap();
            for item in 0..2 {
                let counts: Vec<usize> = fwd.levels[item].iter().map(Vec::len).collect();
                assert_eq!(counts, vec![64, 24, 10, 4]);
                assert_eq!(fwd.logits[item].dim(), (64, c.n_classes));
            }
        }
    }
}

#[test]
fn eval_is_bit_stable() {
    let c = small(KernelKind::SpherePacked, true);
    let mut net = Network::new(&c, 3).unwrap();
    let s = scenes(&c, 1, 3);
    let a = net.logits(&s[0]).unwrap();
    let b = net.logits(&s[0]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn eval_ignores_dropout_seed() {
    let c = small(KernelKind::SpherePacked, false);
    let mut net = Network::new(&c, 3).unwrap();
    let s = scenes(&c, 1, 3);
    let a = net.forward(&s, Mode::Eval, 1).unwrap().logits;
    let b = net.forward(&s, Mode::Eval, 99).unwrap().logits;
    assert_eq!(a, b);
}

#[test]
fn uniform_logits_cost_ln_c() {
    let logits = vec![ndarray::Array2::zeros((7, 5))];
    let labels = [0u32, 1, 2, 3, 4, 0, 1];
    let (loss, _) = cross_entropy(&logits, &[&labels], None).unwrap();
    assert!((loss - 5f64.ln()).abs() < 1e-15);
}

#[test]
fn adam_matches_hand_steps() {
    // minimise (x - 3)^2 from x = 0
    let mut x = [0.0f64];
    let mut adam = Adam::new(0.1, 1);
    let (mut m, mut v, mut hx) = (0.0f64, 0.0f64, 0.0f64);
    for t in 1..=5 {
        let g = 2.0 * (x[0] - 3.0);
        adam.update([&mut x[..]], &[g]).unwrap();
        let hg = 2.0 * (hx - 3.0);
        m = 0.9 * m + 0.1 * hg;
        v = 0.999 * v + 0.001 * hg * hg;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        hx -= 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((x[0] - hx).abs() <= 1e-12, "step {t}: {} vs {hx}", x[0]);
    }
}

#[test]
fn overfitting_one_scene_lowers_the_loss() {
    let mut c = small(KernelKind::SpherePacked, true);
    c.dropout_p = 0.0;
    c.learning_rate = 2e-3;
    c.batch_size = 1;
    let mut state = TrainState::new(&c, 9).unwrap();
    let s = scenes(&c, 1, 9);
    let losses: Vec<f64> = (0..50).map(|_| state.train_step(&s).unwrap()).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn training_is_reproducible() {
    let c = small(KernelKind::SpherePacked, true);
    let s = scenes(&c, 4, 2);
    let run = || {
        let mut state = TrainState::new(&c, 2).unwrap();
        (0..3).map(|_| state.train_step(&s[..2]).unwrap()).collect::<Vec<f64>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn two_class_confusion_by_hand() {
    // TP0 = 3, FP0 = 1, FN0 = 2, TP1 = 4, FP1 = 2, FN1 = 1
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (p, t, n) in [(0u32, 0u32, 3), (1, 1, 4), (1, 0, 2), (0, 1, 1)] {
        pred.extend(std::iter::repeat_n(p, n));
        truth.extend(std::iter::repeat_n(t, n));
    }
    let (iou, miou) = evaluate_miou(&pred, &truth, 2, None).unwrap();
    assert!((iou[0].unwrap() - 0.5).abs() < 1e-15);
    assert!((iou[1].unwrap() - 4.0 / 7.0).abs() < 1e-15);
    assert!((miou - (0.5 + 4.0 / 7.0) / 2.0).abs() < 1e-15);
}

#[test]
fn perfect_predictions_score_one() {
    let labels = [0u32, 1, 2, 2, 1];
    let (iou, miou) = evaluate_miou(&labels, &labels, 4, None).unwrap();
    assert_eq!(iou[3], None);
    assert_eq!(miou, 1.0);
}

#[test]
fn toy_config_scales_level_counts_for_other_sizes() {
    let net = Network::new(&NetworkConfig::toy(), 0).unwrap();
    let counts = net.level_counts(1024);
    assert_eq!(counts[0], 1024);
    assert!(counts.windows(2).all(|w| w[1] <= w[0] && w[1] >= 1));
}
