use proptest::prelude::*;
use safedpa::io::Checkpoint;
use safedpa::rng::seeded;
use safedpa::tensor::{
    adam_step, forward_conv1d, forward_mlp, grad, Activation, AdamConfig, Conv1dSpec, ConvLayer, DenseMatrix, MlpSpec,
    NetSpec, NetworkParams, OptimizerState,
};

/// Reads block `(out, inp)` at `off`: returns `(W as rows, b, next offset)`.
fn block(theta: &[f64], off: usize, out: usize, inp: usize) -> (Vec<Vec<f64>>, Vec<f64>, usize) {
    let w = (0..out).map(|o| theta[off + o * inp..off + (o + 1) * inp].to_vec()).collect();
    let b = theta[off + out * inp..off + out * inp + out].to_vec();
    (w, b, off + out * inp + out)
}

#[test]
fn mlp_matches_layer_by_layer_evaluation() {
    let spec = MlpSpec { input_dim: 2, hidden_dims: vec![3, 2], output_dim: 2, activation: Activation::Tanh };
    let p = NetworkParams::init(NetSpec::Mlp(spec), &mut seeded(42)).unwrap();
    let x = [0.5, -0.3];
    let (w1, b1, off) = block(&p.theta, 0, 3, 2);
    let (w2, b2, off) = block(&p.theta, off, 2, 3);
    let (w3, b3, off) = block(&p.theta, off, 2, 2);
    assert_eq!(off, p.theta.len());
    let h1: Vec<f64> = (0..3).map(|i| (w1[i][0] * x[0] + w1[i][1] * x[1] + b1[i]).tanh()).collect();
    let h2: Vec<f64> = (0..2).map(|i| (w2[i][0] * h1[0] + w2[i][1] * h1[1] + w2[i][2] * h1[2] + b2[i]).tanh()).collect();
    let y: Vec<f64> = (0..2).map(|i| w3[i][0] * h2[0] + w3[i][1] * h2[1] + b3[i]).collect();
    let out = forward_mlp(&p, &x).unwrap();
    for (a, b) in out.iter().zip(&y) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!(forward_mlp(&p, &[1.0]).is_err());
}

#[test]
fn relu_mlp_clamps_hidden_units() {
    let spec = MlpSpec { input_dim: 1, hidden_dims: vec![1], output_dim: 1, activation: Activation::Relu };
    // w1 = 1, b1 = 0, w2 = 2, b2 = 0.5
    let p = NetworkParams::new(NetSpec::Mlp(spec), vec![1.0, 0.0, 2.0, 0.5]).unwrap();
    assert_eq!(forward_mlp(&p, &[-3.0]).unwrap(), vec![0.5]);
    assert_eq!(forward_mlp(&p, &[1.5]).unwrap(), vec![3.5]);
}

#[test]
fn conv_matches_direct_convolution() {
    let spec = Conv1dSpec {
        channels_in: 2,
        window: 7,
        conv_layers: vec![ConvLayer { filters: 3, kernel: 3, stride: 2 }],
        head_dims: vec![],
        output_dim: 2,
        activation: Activation::Tanh,
    };
    let p = NetworkParams::init(NetSpec::Conv1d(spec), &mut seeded(7)).unwrap();
    let mut rng = seeded(8);
    let win: Vec<f64> = (0..14).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
    let x = DenseMatrix::from_vec(2, 7, win.clone()).unwrap();
    // conv weights: filter f, channel c, tap j at f*6 + c*3 + j
    let (wc, bc, off) = block(&p.theta, 0, 3, 6);
    let out_w = (7 - 3) / 2 + 1;
    let mut feat = Vec::new();
    for f in 0..3 {
        for t in 0..out_w {
            let mut s = bc[f];
            for c in 0..2 {
                for j in 0..3 {
                    s += wc[f][c * 3 + j] * win[c * 7 + t * 2 + j];
                }
            }
            feat.push(s.tanh());
        }
    }
    let (wh, bh, _) = block(&p.theta, off, 2, feat.len());
    let want: Vec<f64> = (0..2).map(|o| bh[o] + wh[o].iter().zip(&feat).map(|(a, b)| a * b).sum::<f64>()).collect();
    let got = forward_conv1d(&p, &x).unwrap();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!(forward_conv1d(&p, &DenseMatrix::zeros(2, 6)).is_err());
}

#[test]
fn adam_minimizes_shifted_quadratic() {
    // Reference recursion written out independently of the library.
    let (lr, b1, b2, e) = (0.05, 0.9, 0.999, 1e-8);
    let (mut th_ref, mut m, mut v) = (0.0f64, 0.0, 0.0);
    let mut th = vec![0.0];
    let mut st = OptimizerState::new(1);
    for t in 1..=1000 {
        let g = 2.0 * (th[0] - 3.0);
        adam_step(&mut th, &[g], &mut st, &AdamConfig::with_lr(lr)).unwrap();
        let gr = 2.0 * (th_ref - 3.0);
        m = b1 * m + (1.0 - b1) * gr;
        v = b2 * v + (1.0 - b2) * gr * gr;
        th_ref -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + e);
    }
    assert!((th[0] - 3.0).abs() < 0.05, "theta {}", th[0]);
    assert!((th[0] - th_ref).abs() < 1e-12);
    assert_eq!(st.t, 1000);
}

#[test]
fn zero_gradient_leaves_theta_unchanged() {
    let mut th = vec![0.3, -1.2];
    let mut st = OptimizerState { m: vec![0.5, -0.5], v: vec![1.0, 1.0], t: 3 };
    adam_step(&mut th, &[0.0, 0.0], &mut st, &AdamConfig::default()).unwrap();
    assert_eq!(st.m, vec![0.45, -0.45]);
    assert!(th[0] < 0.3 && th[1] > -1.2, "decayed moments still move theta");
    let mut th = vec![0.3, -1.2];
    let mut st = OptimizerState::new(2);
    adam_step(&mut th, &[0.0, 0.0], &mut st, &AdamConfig::default()).unwrap();
    assert_eq!(th, vec![0.3, -1.2]);
    assert!(adam_step(&mut th, &[0.0], &mut st, &AdamConfig::default()).is_err());
}

#[test]
fn seeded_training_is_bit_identical() {
    let run = || {
        let spec = NetSpec::Mlp(MlpSpec::new(3, vec![8], 2));
        let mut p = NetworkParams::init(spec, &mut seeded(9)).unwrap();
        let mut st = OptimizerState::new(p.theta.len());
        let x = DenseMatrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 0.0]]).unwrap();
        for _ in 0..50 {
            let (_, g) = grad(&p, |tape, v| {
                let xv = tape.leaf(x.clone());
                let o = tape.forward(v, xv)?;
                let s = tape.square(o);
                Ok(tape.sum(s))
            })
            .unwrap();
            adam_step(&mut p.theta, &g, &mut st, &AdamConfig::default()).unwrap();
        }
        p.theta
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_file_round_trip_reproduces_outputs() {
    let spec = NetSpec::Mlp(MlpSpec::new(4, vec![5, 5], 3));
    let p = NetworkParams::init(spec, &mut seeded(10)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    Checkpoint::new("test", 10).with_net("net", &p).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let q = back.net("net").unwrap();
    assert_eq!(q, &p);
    let x = [0.1, 0.2, -0.3, 0.4];
    assert_eq!(forward_mlp(q, &x).unwrap(), forward_mlp(&p, &x).unwrap());
}

proptest! {
    #[test]
    fn param_count_matches_theta(input in 1usize..6, hidden in prop::collection::vec(1usize..6, 0..3), out in 1usize..4, seed in any::<u64>()) {
        let spec = NetSpec::Mlp(MlpSpec::new(input, hidden, out));
        let p = NetworkParams::init(spec.clone(), &mut seeded(seed)).unwrap();
        prop_assert_eq!(p.theta.len(), spec.param_count());
        prop_assert!(NetworkParams::new(spec, vec![0.0; p.theta.len() + 1]).is_err());
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>(), x in prop::collection::vec(-5.0f64..5.0, 3)) {
        let spec = NetSpec::Mlp(MlpSpec::new(3, vec![4], 2));
        let p = NetworkParams::init(spec, &mut seeded(seed)).unwrap();
        let a = p.forward(&x).unwrap();
        let b = p.clone().forward(&x).unwrap();
        prop_assert_eq!(a.clone(), b);
        prop_assert!(a.iter().all(|v| v.is_finite()));
    }
}
