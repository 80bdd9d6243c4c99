use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::linalg::Matrix;

fn random_net(rng: &mut ChaCha8Rng, widths: Vec<usize>, act: Activation) -> FeatureNet<f64> {
    let layers = widths.len() - 1;
    let acts = FeatureNet::<f64>::mlp_activations(layers - 1, act, Activation::Identity);
    FeatureNet::init_uniform(widths, acts, rng).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-8);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[test]
fn identity_layer_passes_input_through() {
    let net = FeatureNet::affine(&Matrix::identity(2), &[0.0, 0.0]).unwrap();
    assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
}

#[test]
fn zero_net_annihilates() {
    let net = FeatureNet::<f64>::zeros(vec![2, 5, 3], vec![Activation::Tanh, Activation::Identity]).unwrap();
    assert_eq!(net.forward(&[0.3, -7.0]).unwrap(), vec![0.0; 3]);
}

#[test]
fn dimension_mismatch_is_an_error() {
    let net = FeatureNet::<f64>::zeros(vec![2, 3], vec![Activation::Tanh]).unwrap();
    assert!(net.forward(&[1.0]).is_err());
    assert!(net.input_jacobian(&[1.0, 2.0, 3.0]).is_err());
    assert!(FeatureNet::<f64>::new(vec![2, 3], vec![Activation::Tanh], vec![0.0; 5]).is_err());
}

#[test]
fn hidden_tanh_layer_matches_straight_line_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = random_net(&mut rng, vec![2, 3, 2], Activation::Tanh);
    let s = [0.5, -0.5];
    // Straight-line arithmetic over the flat parameter layout.
    let p = net.params();
    let (w1, b1) = (&p[0..6], &p[6..9]);
    let (w2, b2) = (&p[9..15], &p[15..17]);
    let h: Vec<f64> = (0..3).map(|r| (w1[2 * r] * s[0] + w1[2 * r + 1] * s[1] + b1[r]).tanh()).collect();
    let expect: Vec<f64> = (0..2).map(|r| w2[3 * r] * h[0] + w2[3 * r + 1] * h[1] + w2[3 * r + 2] * h[2] + b2[r]).collect();
    let got = net.forward(&s).unwrap();
    assert!(rel_err(&got, &expect) < 1e-14, "{got:?} vs {expect:?}");
}

#[test]
fn forward_is_pure_and_record_replays() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = random_net(&mut rng, vec![3, 8, 8, 4], Activation::Tanh);
    let s = [0.1, -0.2, 0.7];
    let a = net.forward(&s).unwrap();
    let b = net.forward(&s).unwrap();
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    let rec = net.forward_record(&s).unwrap();
    assert_eq!(rec.replay(&net), a);
    assert_eq!(rec.output(), a.as_slice());
}

#[test]
fn jacobian_of_linear_net_is_weight_matrix() {
    let w = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![4.0, 0.0]]).unwrap();
    let net = FeatureNet::affine(&w, &[1.0, 1.0, 1.0]).unwrap();
    assert_eq!(net.input_jacobian(&[0.3, 0.9]).unwrap(), w);
}

#[test]
fn jacobian_of_scalar_tanh_at_zero_is_one() {
    let net = FeatureNet::new(vec![1, 1], vec![Activation::Tanh], vec![1.0, 0.0]).unwrap();
    assert_eq!(net.input_jacobian(&[0.0]).unwrap()[(0, 0)], 1.0);
}

fn fd_jacobian(net: &FeatureNet<f64>, s: &[f64], h: f64) -> Matrix<f64> {
    let (l, n) = (net.output_dim(), net.input_dim());
    let mut jac = Matrix::zeros(l, n);
    for j in 0..n {
        let mut sp = s.to_vec();
        let mut sm = s.to_vec();
        sp[j] += h;
        sm[j] -= h;
        let (fp, fm) = (net.forward(&sp).unwrap(), net.forward(&sm).unwrap());
        for r in 0..l {
            jac[(r, j)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

#[test]
fn jacobian_matches_finite_differences_on_random_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let act = Activation::ALL[1 + trial % 3];
        let n = 1 + trial % 4;
        let net = random_net(&mut rng, vec![n, 6, 5, 3], act);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let jac = net.input_jacobian(&s).unwrap();
        let fd = fd_jacobian(&net, &s, 1e-5);
        let e = rel_err(jac.as_slice(), fd.as_slice());
        assert!(e <= 1e-5, "trial {trial}: rel err {e}");
    }
}

#[test]
fn batch_forward_agrees_with_single_sample_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = random_net(&mut rng, vec![2, 7, 7, 4], Activation::Tanh);
    let states: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut ws = TangentWorkspace::new();
    net.forward_batch(&states, true, &mut ws);
    for b in 0..5 {
        let s = &states[2 * b..2 * b + 2];
        let v = net.forward(s).unwrap();
        let jac = net.input_jacobian(s).unwrap();
        for r in 0..4 {
            assert!((ws.value(r, b) - v[r]).abs() < 1e-12);
            for j in 0..2 {
                assert!((ws.tangent(r, j, b) - jac[(r, j)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn constant_loss_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = random_net(&mut rng, vec![2, 4, 3], Activation::Tanh);
    let (loss, grad) = loss_parameter_gradient(&net, &[0.1, 0.2, -0.3, 0.4], true, |_, _| 2.5);
    assert_eq!(loss, 5.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}

/// A loss mixing outputs and input tangents nonlinearly:
/// `Σ_b (Σ_r φ_r²)·(1 + Σ_{j,r} c_j ∂φ_r/∂s_j)²`.
fn mixed_loss(net: &FeatureNet<f64>, states: &[f64], coeff: &[f64]) -> (f64, Vec<f64>) {
    loss_parameter_gradient(net, states, true, |out, adj| {
        let a: f64 = out.value.iter().map(|v| v * v).sum();
        let t: f64 = 1.0 + out.tangents.iter().zip(coeff).map(|(row, c)| c * row.iter().sum::<f64>()).sum::<f64>();
        for (vb, v) in adj.value.iter_mut().zip(out.value) {
            *vb = 2.0 * v * t * t;
        }
        for (row, c) in adj.tangents.iter_mut().zip(coeff) {
            row.iter_mut().for_each(|x| *x = a * 2.0 * t * c);
        }
        a * t * t
    })
}

#[test]
fn mixed_second_order_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..100 {
        let act = Activation::ALL[1 + trial % 3];
        let n = 1 + trial % 3;
        let mut net = random_net(&mut rng, vec![n, 5, 4, 2], act);
        let states: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let coeff: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, grad) = mixed_loss(&net, &states, &coeff);
        let h = 1e-5;
        let mut fd = vec![0.0; net.num_params()];
        for p in 0..net.num_params() {
            let orig = net.params()[p];
            net.params_mut()[p] = orig + h;
            let lp = mixed_loss(&net, &states, &coeff).0;
            net.params_mut()[p] = orig - h;
            let lm = mixed_loss(&net, &states, &coeff).0;
            net.params_mut()[p] = orig;
            fd[p] = (lp - lm) / (2.0 * h);
        }
        let e = rel_err(&grad, &fd);
        assert!(e <= 1e-4, "trial {trial}: rel err {e}");
    }
}

#[test]
fn single_precision_forward_works() {
    let net = FeatureNet::<f32>::affine(&Matrix::identity(2), &[0.5, 0.0]).unwrap();
    assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.5, 2.0]);
}
