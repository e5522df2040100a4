use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::testutil::worst_fd_error;

fn shape(kind: BackboneKind) -> NetShape {
    NetShape { positions: 4, dim: 2, depth: 2, width: 8, head_hidden: 12, backbone: kind }
}

const KINDS: [BackboneKind; 2] = [BackboneKind::PrefixSum, BackboneKind::Attention];

fn random_seq(seed: u64, n: usize, c: usize) -> EmbedSeq {
    EmbedSeq::gaussian(&mut rng::seeded(seed), n, c)
}

#[test]
fn features_are_causal() {
    for kind in KINDS {
        let net = NetParams::init(shape(kind), &mut rng::seeded(1), false).unwrap();
        let x = random_seq(2, 4, 2);
        let base = net.backbone_features(&x).unwrap();
        for pos in 0..4 {
            let mut y = x.clone();
            y.position_mut(pos)[0] += 0.5;
            let f = net.backbone_features(&y).unwrap();
            for i in 0..4 {
                if i <= pos {
                    assert_eq!(f[i], base[i], "{kind:?}: f_{i} moved when input {pos} changed");
                } else {
                    assert_ne!(f[i], base[i], "{kind:?}: f_{i} ignores input {pos}");
                }
            }
        }
    }
}

#[test]
fn start_embedding_drives_first_feature() {
    for kind in KINDS {
        let mut net = NetParams::init(shape(kind), &mut rng::seeded(3), false).unwrap();
        let x = random_seq(4, 4, 2);
        let before = net.backbone_features(&x).unwrap();
        let start = net.layout().start.clone();
        net.values_mut()[start].iter_mut().for_each(|v| *v += 0.3);
        let after = net.backbone_features(&x).unwrap();
        assert_ne!(before[0], after[0]);
    }
}

#[test]
fn zero_head_predicts_zero_velocity() {
    let mut net = NetParams::init(shape(BackboneKind::PrefixSum), &mut rng::seeded(5), true).unwrap();
    assert_eq!(net.head_velocity(&[0.3, -2.0], 0.5, &[0.1; 8]), vec![0.0, 0.0]);
    let head = net.layout().head_range();
    net.values_mut()[head].fill(0.0);
    let noise = random_seq(6, 4, 2);
    assert_eq!(net.generator_forward(&noise).unwrap(), noise);
}

#[test]
fn head_is_deterministic_and_finite_at_endpoints() {
    let net = NetParams::init(shape(BackboneKind::PrefixSum), &mut rng::seeded(7), false).unwrap();
    for t in [1e-3, 1.0] {
        let a = net.head_velocity(&[0.2, 0.1], t, &[0.5; 8]);
        let b = net.head_velocity(&[0.2, 0.1], t, &[0.5; 8]);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn generator_last_noise_only_moves_last_output() {
    for kind in KINDS {
        let net = NetParams::init(shape(kind), &mut rng::seeded(8), false).unwrap();
        let noise = random_seq(9, 4, 2);
        let base = net.generator_forward(&noise).unwrap();
        let mut moved = noise.clone();
        moved.position_mut(3)[1] -= 0.7;
        let out = net.generator_forward(&moved).unwrap();
        for i in 0..3 {
            assert_eq!(out.position(i), base.position(i));
        }
        assert_ne!(out.position(3), base.position(3));
        assert_eq!(net.generator_forward(&noise).unwrap(), base);
    }
}

#[test]
fn length_mismatch_is_rejected() {
    let net = NetParams::init(shape(BackboneKind::PrefixSum), &mut rng::seeded(1), false).unwrap();
    assert!(net.generator_forward(&random_seq(1, 3, 2)).is_err());
    assert!(net.backbone_features(&random_seq(1, 5, 2)).is_err());
}

/// `sum_i ||v(x_i, t_i, f_i)||^2` with features from the backbone.
fn probe_loss(net: &NetParams, x: &EmbedSeq, times: &[f64]) -> f64 {
    let f = net.backbone_features(x).unwrap();
    (0..x.len())
        .map(|i| net.head_velocity(x.position(i), times[i], &f[i]).iter().map(|v| v * v).sum::<f64>())
        .sum()
}

fn probe_grad(net: &NetParams, x: &EmbedSeq, times: &[f64]) -> Vec<f64> {
    let w = net.shape().width;
    let trace = net.backbone_forward(x.as_slice());
    let mut grad = net.zeros_like();
    let mut d_feat = vec![0.0; x.len() * w];
    for i in 0..x.len() {
        let h = net.head_forward(x.position(i), times[i], &trace.features()[i * w..(i + 1) * w]);
        let dv: Vec<f64> = h.velocity().iter().map(|v| 2.0 * v).collect();
        net.head_backward(&h, &dv, Some(&mut grad), None, Some(&mut d_feat[i * w..(i + 1) * w]));
    }
    net.backbone_backward(&trace, &d_feat, &mut grad, None);
    grad
}

#[test]
fn probe_gradient_matches_finite_differences() {
    for kind in KINDS {
        let net = NetParams::init(shape(kind), &mut rng::seeded(11), false).unwrap();
        let x = random_seq(12, 4, 2);
        let times = [0.1, 0.4, 0.7, 1.0];
        let grad = probe_grad(&net, &x, &times);
        let err = worst_fd_error(&mut rng::seeded(13), net.values(), &grad, 100, 1e-4, |v| {
            probe_loss(&NetParams::from_values(*net.shape(), v.to_vec()).unwrap(), &x, &times)
        });
        assert!(err < 1e-4, "{kind:?}: worst relative error {err}");
    }
}

#[test]
fn constant_loss_has_zero_gradient() {
    let net = NetParams::init(shape(BackboneKind::PrefixSum), &mut rng::seeded(1), false).unwrap();
    let trace = net.generator_trace(&random_seq(2, 4, 2));
    let mut grad = net.zeros_like();
    net.generator_backward(&trace, &[0.0; 8], &mut grad);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn generator_gradient_matches_finite_differences() {
    for kind in KINDS {
        let net = NetParams::init(shape(kind), &mut rng::seeded(21), false).unwrap();
        let noise = random_seq(22, 4, 2);
        let target: Vec<f64> = (0..8).map(|k| (k as f64 * 0.37).sin()).collect();
        let loss = |p: &NetParams| -> f64 {
            let out = p.generator_forward(&noise).unwrap();
            out.as_slice().iter().zip(&target).map(|(o, y)| (o - y) * (o - y)).sum()
        };
        let trace = net.generator_trace(&noise);
        let d_out: Vec<f64> = trace.output.as_slice().iter().zip(&target).map(|(o, y)| 2.0 * (o - y)).collect();
        let mut grad = net.zeros_like();
        net.generator_backward(&trace, &d_out, &mut grad);
        let err = worst_fd_error(&mut rng::seeded(23), net.values(), &grad, 100, 1e-4, |v| {
            loss(&NetParams::from_values(*net.shape(), v.to_vec()).unwrap())
        });
        assert!(err < 1e-4, "{kind:?}: worst relative error {err}");
    }
}

#[test]
fn params_round_trip_through_values() {
    let net = NetParams::init(shape(BackboneKind::Attention), &mut rng::seeded(1), true).unwrap();
    let back = NetParams::from_values(*net.shape(), net.values().to_vec()).unwrap();
    assert_eq!(back, net);
    assert!(NetParams::from_values(*net.shape(), vec![0.0; 3]).is_err());
}
