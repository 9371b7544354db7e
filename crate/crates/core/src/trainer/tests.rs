use super::*;
use crate::camp::{init_params, CampConfig};
use crate::instance::DistKind;
use crate::oracle;
use crate::validator;

fn inst(kind: DistKind, seed: u64) -> Instance {
    generate(&GenConfig::new(6, 2, kind, seed)).unwrap()
}

#[test]
fn augment_identity_and_isometry() {
    let i = inst(DistKind::Cluster, 3);
    assert_eq!(symmetric_augment(&i, 0), i);
    for g in 0..8 {
        let a = symmetric_augment(&i, g);
        assert_eq!(a.demands, i.demands);
        assert_eq!(a.profiles, i.profiles);
        assert_eq!(a.speeds, i.speeds);
        for u in 0..=i.n {
            let [x, y] = a.coord(u);
            assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
            for v in 0..=i.n {
                assert!((a.dist(u, v) - i.dist(u, v)).abs() < 1e-12);
            }
        }
    }
    let images: Vec<[f64; 2]> = (0..8).map(|g| transform_point([0.1, 0.3], g)).collect();
    for a in 0..8 {
        for b in 0..a {
            assert_ne!(images[a], images[b], "symmetries {a} and {b} coincide");
        }
    }
}

#[test]
fn objective_is_augment_invariant() {
    for kind in DistKind::ALL {
        let i = inst(kind, 8);
        let sol = oracle::greedy_solve(&i).solution;
        let base = validator::objective(&i, &sol).unwrap();
        for g in 0..8 {
            let v = validator::objective(&symmetric_augment(&i, g), &sol).unwrap();
            assert!((v - base).abs() <= 1e-12 * base.abs().max(1.0));
        }
    }
}

#[test]
fn baseline_examples() {
    let (b, adv) = shared_baseline(&[-1.0, -3.0]);
    assert_eq!(b, -2.0);
    assert_eq!(adv, vec![1.0, -1.0]);
    let (_, adv) = shared_baseline(&[-2.5; 4]);
    assert!(adv.iter().all(|&a| a == 0.0));
}

#[test]
fn normalization_examples() {
    let mut s = SmoothingState::new(0.1);
    reward_normalize(&mut s, DistKind::Random, 10.0, &[]);
    assert_eq!(s.per_dist[DistKind::Random.index()].r_hat, 10.0);

    let mut s = SmoothingState::new(0.5);
    s.update(DistKind::Angle, 10.0);
    assert_eq!(s.update(DistKind::Angle, 20.0), 15.0);

    let mut s = SmoothingState::new(0.1);
    assert_eq!(reward_normalize(&mut s, DistKind::Cluster, -2.0, &[-4.0]), vec![-2.0]);

    let mut s = SmoothingState::new(0.1);
    assert_eq!(reward_normalize(&mut s, DistKind::Zone, 0.0, &[-4.0]), vec![-4.0]);
}

#[test]
fn lr_schedule() {
    let cfg = TrainConfig {
        epochs: 100,
        lr0: 1e-4,
        ..TrainConfig::default()
    };
    assert_eq!(lr_at(0, &cfg), 1e-4);
    assert!((lr_at(85, &cfg) - 1e-5).abs() < 1e-20);
    assert!((lr_at(97, &cfg) - 1e-6).abs() < 1e-20);
    for e in 1..100 {
        assert!(lr_at(e, &cfg) <= lr_at(e - 1, &cfg));
    }
}

#[test]
fn loss_examples() {
    assert_eq!(reinforce_loss(&[-1.0, -2.0], &[0.0, 0.0]), 0.0);
    assert_eq!(reinforce_loss(&[-1.5, -2.0], &[1.0, 0.0]), 0.75);
}

#[test]
fn single_sample_gradient_is_scaled_log_prob_gradient() {
    let p = init_params(&CampConfig { d_h: 8, heads: 2, ffn_width: 8, layers: 1, ..CampConfig::default() }, 1).unwrap();
    let i = inst(DistKind::Random, 2);
    let mut tape = Tape::new();
    let (_, lp) = camp::rollout_on_tape(&mut tape, &i, &p, DecodeMode::Sample, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let other = tape.constant(Tensor::scalar(-3.0));
    let loss = reinforce_loss_on_tape(&mut tape, &[lp, other], &[1.0, 0.0]).unwrap();
    let g_loss = tape.backward(loss, 1.0).unwrap();
    let g_lp = tape.backward(lp, 1.0).unwrap();
    for (id, g) in g_lp.iter() {
        for (a, b) in g_loss.get(id).unwrap().data().iter().zip(g.data()) {
            assert!((a + b / 2.0).abs() < 1e-15);
        }
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { batch_size: 30, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { beta: 1.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { dists: vec![DistKind::Zone], ..TrainConfig::default() }.validate().is_err());
}

fn tiny() -> (CampConfig, TrainConfig) {
    (
        CampConfig { d_h: 8, heads: 2, ffn_width: 16, layers: 1, ..CampConfig::default() },
        TrainConfig {
            epochs: 2,
            samples_per_epoch: 16,
            batch_size: 8,
            augmentations: 4,
            n_min: 4,
            n_max: 5,
            ..TrainConfig::default()
        },
    )
}

#[test]
fn training_is_reproducible() {
    let (cc, tc) = tiny();
    let (sa, a) = train(init_params(&cc, 0).unwrap(), &tc, false, &mut ()).unwrap();
    let (sb, b) = train(init_params(&cc, 0).unwrap(), &tc, false, &mut ()).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa.params.store, sb.params.store);
    assert_eq!(a.len(), 4 * 2);
    assert!(a.iter().all(|r| r.loss.is_finite() && r.wallclock_ms.is_none()));
    let kinds: Vec<DistKind> = a.iter().map(|r| r.dist_kind).collect();
    assert!(kinds.contains(&DistKind::Random) && kinds.contains(&DistKind::Angle) && kinds.contains(&DistKind::Cluster));
}

#[test]
fn advantages_cancel_in_real_groups() {
    let (cc, tc) = tiny();
    let p = init_params(&cc, 3).unwrap();
    let instances = sample_batch(&tc, 0, 0).unwrap();
    for i in &instances {
        let rewards: Vec<f64> = (0..8)
            .map(|g| {
                let mut rng = ChaCha8Rng::seed_from_u64(g as u64);
                camp::rollout(&symmetric_augment(i, g), &p, DecodeMode::Sample, &mut rng).unwrap().reward
            })
            .collect();
        let (_, adv) = shared_baseline(&rewards);
        assert!(adv.iter().sum::<f64>().abs() < 1e-12);
    }
}
