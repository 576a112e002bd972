use msm_cnn::ops::softmax_cross_entropy;
use msm_cnn::{GlobalPool, Network, NetworkConfig, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reduced(pool: GlobalPool) -> NetworkConfig {
    NetworkConfig {
        input_channels: 3,
        msm_channels: vec![4, 8, 16],
        scales: 3,
        fc_hidden: vec![16, 8],
        classes: 2,
        global_pool: pool,
        dropout: 0.0,
    }
}

fn check(pool: GlobalPool, seed: u64) {
    let net = Network::new(reduced(pool), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let x = Tensor4::from_vec(2, 8, 8, 3, (0..2 * 8 * 8 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let labels = [0, 1];
    let (_, grads, _) = net.loss_and_grad(&x, &labels, None).unwrap();
    let mut worst = (0.0f64, 0usize);
    let mut probe = net.clone();
    let mut refined = 0;
    for i in 0..net.param_count() {
        // A stencil straddling a ReLU, maxout or pooling switch measures a
        // secant across the kink; shrink it until both ends share one piece.
        let mut h = 1e-4;
        let fd = loop {
            let mut eval = |v: f64| {
                probe.params[i] = v;
                let (logits, cache) = probe.forward(&x, None).unwrap();
                (softmax_cross_entropy(&logits, &labels, 2).0, cache.activation_pattern())
            };
            let (up, pu) = eval(net.params[i] + h);
            let (down, pd) = eval(net.params[i] - h);
            probe.params[i] = net.params[i];
            if pu == pd || h < 1e-9 {
                break (up - down) / (2.0 * h);
            }
            refined += 1;
            h /= 10.0;
        };
        let rel = (grads[i] - fd).abs() / grads[i].abs().max(fd.abs()).max(1e-6);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    let name = net.blocks().into_iter().find(|(_, r)| r.contains(&worst.1)).unwrap().0;
    assert!(worst.0 < 1e-3, "worst relative error {} at {name}", worst.0);
    // kinks are rare; a large count would point at a broken pattern
    assert!(refined * 10 < net.param_count(), "{refined} refined stencils");
}

#[test]
fn gradients_match_central_differences_max_pool() {
    check(GlobalPool::Max, 1);
}

#[test]
fn gradients_match_central_differences_mean_pool() {
    check(GlobalPool::Mean, 2);
}

#[test]
fn balanced_targets_at_uniform_output_give_no_signal() {
    // zero final weights make every output uniform
    let mut net = Network::new(reduced(GlobalPool::Max), 3).unwrap();
    let last = net.dense_layers().last().unwrap().clone();
    net.params[last.weight.clone()].iter_mut().for_each(|v| *v = 0.0);
    let x = Tensor4::from_vec(2, 8, 8, 3, vec![0.5; 2 * 8 * 8 * 3]).unwrap();
    let (loss, grads, logits) = net.loss_and_grad(&x, &[0, 1], None).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(logits.iter().all(|&v| v == 0.0));
    assert!(grads.iter().all(|g| g.abs() < 1e-12));
    let (l, _) = softmax_cross_entropy(&logits, &[0, 1], 2);
    assert_eq!(l, loss);
}
