use ibgs_autodiff::{Tape, Tensor, Var};
use ibgs_core::net::{compose_final, layout, ResidualNet, DECODER_IN, FEATURE_IN, HIDDEN};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Initialised network with a random (non-zero) final layer and biases.
fn dense_net(seed: u64) -> ResidualNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = ResidualNet::init(&mut rng);
    let names = layout();
    for ((name, _), t) in names.iter().zip(net.tensors.iter_mut()) {
        if name.ends_with("bias") || name.starts_with("decoder.8") {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    net
}

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn decode(net: &ResidualNet, input: &Tensor) -> Tensor {
    let tape = Tape::new();
    let vars = net.constants(&tape);
    (*vars.decode_from(tape.constant(input.clone()), 0).unwrap().value()).clone()
}

#[test]
fn pooling_examples() {
    let tape = Tape::new();
    let net = dense_net(1);
    let vars = net.constants(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&mut rng, vec![3, FEATURE_IN]);
    let b = random(&mut rng, vec![3, FEATURE_IN]);
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let masks = vec![vec![true, true, false], vec![true, false, false]];
    let pooled = vars.extract_and_pool(&tape, &[va, vb], &masks, 3).unwrap().value();
    let (fa, fb) = (vars.extract(va).unwrap().value(), vars.extract(vb).unwrap().value());
    for c in 0..HIDDEN {
        assert_eq!(pooled.data()[c], fa.data()[c].max(fb.data()[c]));
        assert_eq!(pooled.data()[HIDDEN + c], fa.data()[HIDDEN + c]);
        assert_eq!(pooled.data()[2 * HIDDEN + c], 0.0);
    }
    let none = vars.extract_and_pool(&tape, &[], &[], 3).unwrap().value();
    assert_eq!(none.shape(), &[3, HIDDEN]);
    assert!(none.data().iter().all(|&v| v == 0.0));
}

#[test]
fn pooling_ignores_view_order() {
    let tape = Tape::new();
    let net = dense_net(3);
    let vars = net.constants(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let feats: Vec<Var> = (0..4).map(|_| tape.constant(random(&mut rng, vec![20, FEATURE_IN]))).collect();
    let masks: Vec<Vec<bool>> = (0..4).map(|_| (0..20).map(|_| rng.gen_bool(0.6)).collect()).collect();
    let want = vars.extract_and_pool(&tape, &feats, &masks, 20).unwrap().value();
    for perm in [[3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]] {
        let f: Vec<Var> = perm.iter().map(|&i| feats[i]).collect();
        let m: Vec<Vec<bool>> = perm.iter().map(|&i| masks[i].clone()).collect();
        assert_eq!(vars.extract_and_pool(&tape, &f, &m, 20).unwrap().value(), want);
    }
}

#[test]
fn zero_network_gives_zero_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = random(&mut rng, vec![6, 7, DECODER_IN]);
    assert!(decode(&ResidualNet::zeros(), &input).data().iter().all(|&v| v == 0.0));
    // The default initialisation zeroes the last layer too.
    let fresh = ResidualNet::init(&mut rng);
    assert!(decode(&fresh, &input).data().iter().all(|&v| v == 0.0));
}

#[test]
fn decoder_is_translation_equivariant() {
    let net = dense_net(6);
    let (h, w) = (40, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let blob = random(&mut rng, vec![5, 5, DECODER_IN]);
    let place = |ox: usize, oy: usize| {
        let mut t = Tensor::zeros(vec![h, w, DECODER_IN]);
        for y in 0..5 {
            for x in 0..5 {
                for c in 0..DECODER_IN {
                    t.data_mut()[((oy + y) * w + ox + x) * DECODER_IN + c] = blob.data()[(y * 5 + x) * DECODER_IN + c];
                }
            }
        }
        t
    };
    let (dx, dy) = (3, 2);
    let a = decode(&net, &place(16, 16));
    let b = decode(&net, &place(16 + dx, 16 + dy));
    // Compare only where neither receptive field reaches the zero padding.
    for y in 9..h - 9 - dy {
        for x in 9..w - 9 - dx {
            for c in 0..3 {
                let va = a.data()[(y * w + x) * 3 + c];
                let vb = b.data()[((y + dy) * w + x + dx) * 3 + c];
                assert!((va - vb).abs() < 1e-12, "({x}, {y}) {va} vs {vb}");
            }
        }
    }
}

#[test]
fn receptive_field_is_nineteen_pixels() {
    let net = dense_net(8);
    let (h, w) = (31, 31);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let base = random(&mut rng, vec![h, w, DECODER_IN]);
    let mut poked = base.clone();
    for c in 0..DECODER_IN {
        poked.data_mut()[(15 * w + 15) * DECODER_IN + c] += 1.0;
    }
    let (a, b) = (decode(&net, &base), decode(&net, &poked));
    let mut reach = 0;
    for y in 0..h {
        for x in 0..w {
            let changed = (0..3).any(|c| a.data()[(y * w + x) * 3 + c] != b.data()[(y * w + x) * 3 + c]);
            let r = (x as i64 - 15).abs().max((y as i64 - 15).abs());
            if changed {
                assert!(r <= 9, "pixel ({x}, {y}) changed");
                reach = reach.max(r);
            }
        }
    }
    assert_eq!(reach, 9);
}

#[test]
fn final_colour_adds_the_residual() {
    let tape = Tape::new();
    let c = tape.constant(Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.9, 0.5, 0.0]).unwrap());
    let r = tape.constant(Tensor::new(vec![2, 3], vec![0.05, -0.2, 0.0, 0.2, 0.0, -0.1]).unwrap());
    let out = compose_final(c, r).unwrap().value();
    let want = [0.15, 0.0, 0.3, 1.1, 0.5, -0.1];
    for (got, want) in out.data().iter().zip(want) {
        assert!((got - want).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pooled_features_are_the_masked_view_maximum(seed in 0u64..1000) {
        let tape = Tape::new();
        let net = dense_net(seed);
        let vars = net.constants(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<Var> = (0..3).map(|_| tape.constant(random(&mut rng, vec![8, FEATURE_IN]))).collect();
        let masks: Vec<Vec<bool>> = (0..3).map(|_| (0..8).map(|_| rng.gen_bool(0.5)).collect()).collect();
        let pooled = vars.extract_and_pool(&tape, &feats, &masks, 8).unwrap().value();
        let each: Vec<_> = feats.iter().map(|f| vars.extract(*f).unwrap().value()).collect();
        for p in 0..8 {
            for c in 0..HIDDEN {
                let v = pooled.data()[p * HIDDEN + c];
                prop_assert!(v >= 0.0);
                let hi = (0..3).filter(|&k| masks[k][p]).map(|k| each[k].data()[p * HIDDEN + c]).fold(0.0, f64::max);
                prop_assert_eq!(v, hi);
            }
        }
    }
}
