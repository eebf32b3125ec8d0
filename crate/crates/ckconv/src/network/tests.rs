use super::*;
use crate::tensor::finite_difference_grad;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ball_cloud(m: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let positions: Vec<[f64; 3]> = (0..m)
        .map(|_| loop {
            let p = [
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            ];
            if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                return p;
            }
        })
        .collect();
    PointCloud::new(positions, None, None).unwrap()
}

fn tiny_config() -> ClassifierConfig {
    ClassifierConfig {
        stages: vec![
            StageConfig {
                centers: 8,
                radius: 0.5,
                neighbors: 4,
                c_in: 1,
                c_out: 6,
                v: 3,
            },
            StageConfig {
                centers: 4,
                radius: 0.9,
                neighbors: 4,
                c_in: 6,
                c_out: 8,
                v: 3,
            },
        ],
        head_hidden: 6,
        classes: 4,
        dropout: 0.5,
        kernel_hidden: 8,
        norm: NormKind::St,
        lsa: true,
        activation: Activation::Tanh,
    }
}

#[test]
fn initial_features_default_to_ones() {
    let cloud = ball_cloud(10, 1);
    let f = initial_features(&cloud);
    assert_eq!(f.shape(), &[10, 1]);
    assert!(f.data().iter().all(|&v| v == 1.0));
}

#[test]
fn initial_features_pass_through_channels() {
    let positions = ball_cloud(5, 2).positions().to_vec();
    let feats = Tensor::new(vec![5, 3], (0..15).map(|i| i as f64).collect()).unwrap();
    let cloud = PointCloud::new(positions, Some(feats.clone()), None).unwrap();
    assert_eq!(&initial_features(&cloud), &feats);
}

#[test]
fn ones_features_ignore_position_scaling() {
    let cloud = ball_cloud(12, 3);
    let scaled = PointCloud::new(
        cloud.positions().iter().map(|p| [p[0] * 3.0, p[1] * 3.0, p[2] * 3.0]).collect(),
        None,
        None,
    )
    .unwrap();
    assert_eq!(initial_features(&cloud), initial_features(&scaled));
}

#[test]
fn logits_have_class_count_shape() {
    let config = tiny_config();
    let params = ClassifierParams::init(&config, &mut rng(4)).unwrap();
    let cloud = ball_cloud(32, 5);
    let logits = classify(&params, &config, &cloud, &mut rng(6)).unwrap();
    assert_eq!(logits.len(), config.classes);
}

#[test]
fn eval_forward_is_deterministic_under_fixed_seeds() {
    let config = tiny_config();
    let params = ClassifierParams::init(&config, &mut rng(7)).unwrap();
    let cloud = ball_cloud(32, 8);
    let a = classify(&params, &config, &cloud, &mut rng(9)).unwrap();
    let b = classify(&params, &config, &cloud, &mut rng(9)).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn storage_order_permutation_with_fixed_sampling_changes_nothing() {
    // Fix the sampled index sets, permute only the cloud's storage order
    // (remapping the plan's indices), and require bit-identical logits.
    let config = tiny_config();
    let params = ClassifierParams::init(&config, &mut rng(10)).unwrap();
    let cloud = ball_cloud(32, 11);
    let plan = plan_sampling(&cloud, &config, &mut rng(12)).unwrap();

    let run = |cloud: &PointCloud, plan: &SamplingPlan| {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fi = g.constant(initial_features(cloud));
        let logits =
            classify_forward::<ChaCha8Rng>(&mut g, &bound, fi, plan, None).unwrap();
        g.data(logits).to_vec()
    };
    let base = run(&cloud, &plan);

    // new_index[old_index] under a reversal permutation.
    let m = cloud.len();
    let new_index: Vec<usize> = (0..m).map(|i| m - 1 - i).collect();
    let mut new_positions = vec![[0.0; 3]; m];
    for (old, &new) in new_index.iter().enumerate() {
        new_positions[new] = cloud.positions()[old];
    }
    let permuted_cloud = PointCloud::new(new_positions, None, None).unwrap();
    // Only stage 0 indexes cloud storage; later stages index plan rows.
    let mut permuted_plan = plan.clone();
    let stage0 = &mut permuted_plan.stages[0];
    for idx in &mut stage0.center_indices {
        *idx = new_index[*idx];
    }
    for set in &mut stage0.sets {
        for idx in &mut set.neighbor_indices {
            *idx = new_index[*idx];
        }
    }
    let got = run(&permuted_cloud, &permuted_plan);
    assert!(base.iter().zip(&got).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn cross_entropy_hand_values() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::new(vec![4], vec![0.0; 4]).unwrap());
    let loss = cross_entropy(&mut g, logits, 2).unwrap();
    assert!((g.data(loss)[0] - 4.0f64.ln()).abs() < 1e-12);

    let confident = g.constant(Tensor::new(vec![4], vec![100.0, 0.0, 0.0, 0.0]).unwrap());
    let loss = cross_entropy(&mut g, confident, 0).unwrap();
    assert!(g.data(loss)[0].abs() < 1e-12);

    let bad_label = g.constant(Tensor::new(vec![4], vec![0.0; 4]).unwrap());
    assert!(matches!(
        cross_entropy(&mut g, bad_label, 4),
        Err(Error::Domain(_))
    ));
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let x0 = vec![0.4, -1.2, 0.9, 0.05];
    let label = 1;
    let mut g = Graph::new();
    let logits = g.leaf(Tensor::new(vec![4], x0.clone()).unwrap(), true);
    let loss = cross_entropy(&mut g, logits, label).unwrap();
    g.backward(loss).unwrap();
    let ad = g.grad(logits).unwrap().to_vec();

    let sm = softmax(&x0);
    for (i, &a) in ad.iter().enumerate() {
        let want = sm[i] - if i == label { 1.0 } else { 0.0 };
        assert!((a - want).abs() < 1e-12);
    }

    let fd = finite_difference_grad(
        |x| {
            let mut g = Graph::new();
            let l = g.leaf(Tensor::new(vec![4], x.to_vec()).unwrap(), true);
            let loss = cross_entropy(&mut g, l, label)?;
            Ok(g.data(loss)[0])
        },
        &x0,
        1e-4,
    )
    .unwrap();
    for (&a, &f) in ad.iter().zip(&fd) {
        assert!((a - f).abs() < 1e-6);
    }
}

#[test]
fn softmax_sums_to_one() {
    let mut r = rng(13);
    for _ in 0..20 {
        let logits: Vec<f64> = (0..6).map(|_| r.random_range(-20.0..20.0)).collect();
        let s: f64 = softmax(&logits).iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn zero_init_lsa_matches_lsa_disabled_at_network_level() {
    let mut config = tiny_config();
    config.lsa = true;
    let with = ClassifierParams::init(&config, &mut rng(14)).unwrap();
    config.lsa = false;
    let without = ClassifierParams::init(&config, &mut rng(14)).unwrap();
    let cloud = ball_cloud(32, 15);
    let a = classify(&with, &tiny_config(), &cloud, &mut rng(16)).unwrap();
    let cfg_no = {
        let mut c = tiny_config();
        c.lsa = false;
        c
    };
    let b = classify(&without, &cfg_no, &cloud, &mut rng(16)).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn dropout_train_mode_uses_inverted_scaling() {
    let config = tiny_config();
    let params = ClassifierParams::init(&config, &mut rng(17)).unwrap();
    let cloud = ball_cloud(32, 18);
    let plan = plan_sampling(&cloud, &config, &mut rng(19)).unwrap();

    // Eval path never consumes dropout randomness.
    let eval = |seed: u64| {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fi = g.constant(initial_features(&cloud));
        let _ = seed;
        let logits = classify_forward::<ChaCha8Rng>(&mut g, &bound, fi, &plan, None).unwrap();
        g.data(logits).to_vec()
    };
    assert_eq!(eval(0), eval(1));

    // Train mode with p=0.5 differs from eval for some mask draw.
    let mut train_rng = rng(20);
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let fi = g.constant(initial_features(&cloud));
    let logits = classify_forward(
        &mut g,
        &bound,
        fi,
        &plan,
        Some(DropoutMode { p: 0.5, rng: &mut train_rng }),
    )
    .unwrap();
    assert_ne!(g.data(logits), eval(0).as_slice());
}

#[test]
fn config_validation_catches_channel_mismatch() {
    let mut config = tiny_config();
    config.stages[1].c_in = 5;
    assert!(matches!(config.validate(), Err(Error::Contract(_))));
    assert!(ClassifierParams::init(&config, &mut rng(21)).is_err());
}

#[test]
fn init_loss_is_near_log_classes_over_balanced_samples() {
    let config = tiny_config();
    let params = ClassifierParams::init(&config, &mut rng(22)).unwrap();
    let mut total = 0.0;
    let samples = 64;
    for i in 0..samples {
        let cloud = ball_cloud(32, 1000 + i);
        let logits = classify(&params, &config, &cloud, &mut rng(2000 + i)).unwrap();
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(vec![4], logits).unwrap());
        let loss = cross_entropy(&mut g, l, (i % 4) as usize).unwrap();
        total += g.data(loss)[0];
    }
    let mean = total / samples as f64;
    let want = 4.0f64.ln();
    assert!(
        (mean - want).abs() <= 0.2 * want,
        "mean init loss {mean} not within 20% of ln(4) = {want}"
    );
}
