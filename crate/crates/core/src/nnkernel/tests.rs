use super::*;
use crate::arch::parse_arch;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gaussian_batch(m: usize, dim: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..m * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        })
        .collect();
    Mat::from_vec(m, dim, data)
}

fn small_fc(width: usize, bn: bool, gamma: f64, sigma_b_sq: f64) -> ArchSpec {
    parse_arch(&format!(
        r#"
[input]
dim = 16
[init]
sigma_w_sq = 2.0
sigma_b_sq = {sigma_b_sq}
[[layer]]
kind = "fc"
width = {width}
batch_norm = {bn}
gamma = {gamma}
[[layer]]
kind = "fc"
width = {width}
batch_norm = {bn}
gamma = {gamma}
[[layer]]
kind = "fc"
width = 4
activation = "linear"
"#
    ))
    .unwrap()
}

fn small_conv() -> ArchSpec {
    parse_arch(
        r#"
[input]
channels = 2
spatial_sites = 64
[init]
sigma_w_sq = 2.0
sigma_b_sq = 0.5
[[layer]]
kind = "conv"
width = 3
kernel_sites = 9
spatial_sites = 9
batch_norm = true
gamma = 1.0
[[layer]]
kind = "fc"
width = 4
activation = "linear"
"#,
    )
    .unwrap()
}

#[test]
fn sampling_is_deterministic_and_seed_sensitive() {
    let spec = small_fc(8, true, 1.0, 0.5);
    let a = sample_network(&spec, 11).unwrap();
    let b = sample_network(&spec, 11).unwrap();
    let c = sample_network(&spec, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.layers[0].weight, c.layers[0].weight);
}

#[test]
fn zero_bias_variance_gives_exact_zero_biases() {
    let spec = small_fc(8, false, 1.0, 0.0);
    let net = sample_network(&spec, 3).unwrap();
    assert!(net.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
}

#[test]
fn weight_variance_matches_ensemble() {
    let spec = parse_arch(
        r#"
[input]
dim = 1000
[init]
sigma_w_sq = 2.0
sigma_b_sq = 0.0
[[layer]]
kind = "fc"
width = 1000
[[layer]]
kind = "fc"
width = 10
activation = "linear"
"#,
    )
    .unwrap();
    let net = sample_network(&spec, 5).unwrap();
    let w = &net.layers[0].weight;
    let var = w.frobenius_sq() / (w.rows() * w.cols()) as f64;
    let expected = 2.0 / 1000.0;
    assert!(
        (var - expected).abs() / expected < 0.05,
        "weight variance {var} vs {expected}"
    );
}

#[test]
fn bn_units_are_standardized_over_the_batch() {
    let spec = small_fc(8, true, 1.5, 0.5);
    let net = sample_network(&spec, 7).unwrap();
    let batch = gaussian_batch(512, 16, 1);
    let tape = forward(&net, &batch, ForwardMode::BnPopulation).unwrap();
    let u = tape.layers[0].u.as_ref().unwrap();
    for j in 0..u.cols() {
        let mean: f64 = (0..u.rows()).map(|x| u.at(x, j)).sum::<f64>() / u.rows() as f64;
        let var: f64 =
            (0..u.rows()).map(|x| u.at(x, j).powi(2)).sum::<f64>() / u.rows() as f64 - mean * mean;
        assert!(mean.abs() < 1e-6, "unit {j} mean {mean}");
        assert!((var - 1.0).abs() < 1e-6, "unit {j} var {var}");
    }
}

#[test]
fn conv_bn_standardizes_per_channel_over_batch_and_sites() {
    let spec = small_conv();
    let net = sample_network(&spec, 9).unwrap();
    let batch = gaussian_batch(300, 128, 2);
    let tape = forward(&net, &batch, ForwardMode::BnPopulation).unwrap();
    let u = tape.layers[0].u.as_ref().unwrap();
    let sites = 9;
    for c in 0..3 {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for x in 0..u.rows() {
            for s in 0..sites {
                let v = u.at(x, c * sites + s);
                sum += v;
                sq += v * v;
            }
        }
        let n = (u.rows() * sites) as f64;
        let mean = sum / n;
        assert!(mean.abs() < 1e-6);
        assert!((sq / n - mean * mean - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zero_gamma_kills_hidden_activations() {
    let mut spec = parse_arch(
        r#"
[input]
dim = 16
[init]
sigma_w_sq = 2.0
sigma_b_sq = 0.5
[[layer]]
kind = "fc"
width = 8
batch_norm = true
gamma = 1.0
[[layer]]
kind = "fc"
width = 4
activation = "linear"
"#,
    )
    .unwrap();
    spec.layers[0].gamma = 0.0;
    let net = sample_network(&spec, 1).unwrap();
    let batch = gaussian_batch(256, 16, 3);
    let tape = forward(&net, &batch, ForwardMode::BnPopulation).unwrap();
    assert!(tape.layers[0].h.as_slice().iter().all(|&v| v == 0.0));
    // output = final bias only
    let out = tape.output();
    for x in 0..out.rows() {
        for j in 0..out.cols() {
            assert_eq!(out.at(x, j), net.layers[1].bias[j]);
        }
    }

    // with a second normalized layer downstream, the dead activations make
    // its batch statistics degenerate, which must surface as an error
    let mut deep = small_fc(8, true, 1.0, 0.5);
    for l in &mut deep.layers {
        if l.batch_norm {
            l.gamma = 0.0;
        }
    }
    let net = sample_network(&deep, 1).unwrap();
    match forward(&net, &batch, ForwardMode::BnPopulation) {
        Err(Error::DegenerateStatistics { layer: 2, .. }) => {}
        other => panic!("expected degenerate statistics at layer 2, got {other:?}"),
    }
}

#[test]
fn critical_vanilla_activations_stay_constant_across_depth() {
    let spec = parse_arch(
        r#"
[input]
dim = 1000
[init]
sigma_w_sq = 2.0
sigma_b_sq = 0.0
[[layer]]
kind = "fc"
width = 1000
[[layer]]
kind = "fc"
width = 1000
[[layer]]
kind = "fc"
width = 1000
[[layer]]
kind = "fc"
width = 10
activation = "linear"
"#,
    )
    .unwrap();
    let net = sample_network(&spec, 21).unwrap();
    let batch = gaussian_batch(256, 1000, 4);
    let tape = forward(&net, &batch, ForwardMode::Vanilla).unwrap();
    let mean_sq = |m: &Mat| m.frobenius_sq() / (m.rows() * m.cols()) as f64;
    let h0 = mean_sq(&tape.layers[0].h);
    for l in 1..3 {
        let hl = mean_sq(&tape.layers[l].h);
        assert!(
            (hl - h0).abs() / h0 < 0.10,
            "layer {l}: mean square {hl} drifted from {h0}"
        );
    }
}

#[test]
fn linear_stack_backward_is_weight_transpose() {
    let spec = parse_arch(
        r#"
[input]
dim = 6
[init]
sigma_w_sq = 1.0
sigma_b_sq = 0.1
[[layer]]
kind = "fc"
width = 5
activation = "linear"
[[layer]]
kind = "fc"
width = 3
activation = "linear"
"#,
    )
    .unwrap();
    let net = sample_network(&spec, 2).unwrap();
    let batch = gaussian_batch(4, 6, 5);
    let mut tape = forward(&net, &batch, ForwardMode::Vanilla).unwrap();
    let seed = unit_seed(4, 3, 1);
    backward(&net, &mut tape, &batch, &seed, BackwardMode::FrozenStats, false).unwrap();
    let delta1 = tape.layers[0].delta.as_ref().unwrap();
    let w2 = &net.layers[1].weight;
    for x in 0..4 {
        for j in 0..5 {
            assert!((delta1.at(x, j) - w2.at(1, j)).abs() < 1e-14);
        }
    }
}

#[test]
fn dense_gradient_rows_factorize_exactly() {
    let spec = small_fc(8, false, 1.0, 0.5);
    let net = sample_network(&spec, 4).unwrap();
    let batch = gaussian_batch(2, 16, 6);
    let mut tape = forward(&net, &batch, ForwardMode::Vanilla).unwrap();
    let seed = unit_seed(2, 4, 0);
    backward(&net, &mut tape, &batch, &seed, BackwardMode::FrozenStats, false).unwrap();
    for l in 1..=3 {
        let rows = weight_gradients(&net, &tape, &batch, l).unwrap();
        let layer = &net.layers[l - 1];
        let wlen = layer.weight.rows() * layer.weight.cols();
        let delta = tape.layers[l - 1].delta.as_ref().unwrap();
        let prev: &Mat = if l == 1 { &batch } else { &tape.layers[l - 2].h };
        let g01 = dot(&rows.row(0)[..wlen], &rows.row(1)[..wlen]);
        let hh = dot(prev.row(0), prev.row(1));
        let dd = dot(delta.row(0), delta.row(1));
        assert!(
            (g01 - hh * dd).abs() <= 1e-10 * (1.0 + g01.abs()),
            "layer {l}: {g01} vs {}",
            hh * dd
        );
    }
}

#[test]
fn zero_input_zeroes_weight_rows_but_not_bias() {
    let spec = small_fc(8, false, 1.0, 0.5);
    let net = sample_network(&spec, 4).unwrap();
    let batch = Mat::zeros(2, 16);
    let mut tape = forward(&net, &batch, ForwardMode::Vanilla).unwrap();
    let seed = unit_seed(2, 4, 0);
    backward(&net, &mut tape, &batch, &seed, BackwardMode::FrozenStats, false).unwrap();
    let rows = weight_gradients(&net, &tape, &batch, 1).unwrap();
    let wlen = 8 * 16;
    assert!(rows.row(0)[..wlen].iter().all(|&v| v == 0.0));
    assert!(rows.row(0)[wlen..].iter().any(|&v| v != 0.0));
}

#[test]
fn forward_mode_contract_is_enforced() {
    let spec = small_fc(8, true, 1.0, 0.5);
    let net = sample_network(&spec, 1).unwrap();
    let batch = gaussian_batch(300, 16, 1);
    assert!(forward(&net, &batch, ForwardMode::Vanilla).is_err());
    let short = gaussian_batch(64, 16, 1);
    assert!(forward(&net, &short, ForwardMode::BnPopulation).is_err());
    assert!(forward(&net, &batch, ForwardMode::BnPopulation).is_ok());
}

#[test]
fn constant_input_batch_trips_degenerate_statistics() {
    let mut spec = small_fc(8, true, 1.0, 0.5);
    spec.init.sigma_b_sq = 0.0;
    let net = sample_network(&spec, 1).unwrap();
    let batch = Mat::zeros(256, 16);
    match forward(&net, &batch, ForwardMode::BnPopulation) {
        Err(Error::DegenerateStatistics { layer: 1, .. }) => {}
        other => panic!("expected degenerate statistics, got {other:?}"),
    }
}

#[test]
fn bn_output_invariant_to_constant_preactivation_shift() {
    let spec = small_fc(8, true, 1.3, 0.5);
    let net = sample_network(&spec, 8).unwrap();
    let batch = gaussian_batch(300, 16, 9);
    let tape = forward(&net, &batch, ForwardMode::BnPopulation).unwrap();
    let mut shifted = net.clone();
    for b in &mut shifted.layers[0].bias {
        *b += 3.7;
    }
    let tape2 = forward(&shifted, &batch, ForwardMode::BnPopulation).unwrap();
    let (h1, h2) = (&tape.layers[0].h, &tape2.layers[0].h);
    for (a, b) in h1.as_slice().iter().zip(h2.as_slice()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn forward_backward_bit_identical_across_runs() {
    let spec = small_conv();
    let net = sample_network(&spec, 13).unwrap();
    let batch = gaussian_batch(256, 128, 14);
    let run = || {
        let mut tape = forward(&net, &batch, ForwardMode::BnPopulation).unwrap();
        let seed = unit_seed(256, 4, 2);
        backward(&net, &mut tape, &batch, &seed, BackwardMode::FrozenStats, false).unwrap();
        (
            tape.output().as_slice().to_vec(),
            tape.layers[0].delta.as_ref().unwrap().as_slice().to_vec(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn conv_geometry_infers_stride_two_chain() {
    let spec = small_conv();
    let net = sample_network(&spec, 1).unwrap();
    let g = net.layers[0].geom.as_ref().unwrap();
    assert_eq!((g.in_side, g.out_side, g.k_side, g.stride), (8, 3, 3, 2));
    // top-left output site reads the top-left 3x3 block
    assert_eq!(g.gather_site(0, 0), 0);
    assert_eq!(g.gather_site(0, 1), 1);
    assert_eq!(g.gather_site(0, 3), 8);
    // second output column starts at input column 2
    assert_eq!(g.gather_site(1, 0), 2);
}

#[test]
fn conv_forward_matches_hand_rolled_reference() {
    let spec = small_conv();
    let net = sample_network(&spec, 17).unwrap();
    let batch = gaussian_batch(300, 128, 18);
    let tape = forward(&net, &batch, ForwardMode::BnPopulation).unwrap();
    let g = net.layers[0].geom.as_ref().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let x = rng.gen_range(0..300);
        let co = rng.gen_range(0..3);
        let so = rng.gen_range(0..9);
        let (r, c) = (so / 3, so % 3);
        let mut want = net.layers[0].bias[co];
        for ci in 0..2 {
            for kr in 0..3 {
                for kc in 0..3 {
                    let site = (r * 2 + kr) * 8 + (c * 2 + kc);
                    want += net.layers[0].weight.at(co, ci * 9 + kr * 3 + kc)
                        * batch.at(x, ci * 64 + site);
                }
            }
        }
        let got = tape.layers[0].z.at(x, co * g.out_sites() + so);
        assert!((got - want).abs() < 1e-12, "z mismatch: {got} vs {want}");
    }
}
