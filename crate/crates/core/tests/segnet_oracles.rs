use fovlab::geometry::{BevImage, FovMask, GridSpec};
use fovlab::seed;
use fovlab::segnet::{
    bce, binarize, infer_mcd, param_count, train, Example, NetConfig, Network, ProbMap, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

type Map = Vec<Vec<Vec<f64>>>;

/// Reads `W[co][ci][ky][kx]` then the biases, starting at `*at`.
fn conv(x: &Map, p: &[f64], at: &mut usize, c_out: usize, k: usize) -> Map {
    let (c_in, h, w) = (x.len(), x[0].len(), x[0][0].len());
    let weights = &p[*at..*at + c_out * c_in * k * k];
    let bias = &p[*at + weights.len()..*at + weights.len() + c_out];
    *at += weights.len() + c_out;
    let r = (k / 2) as isize;
    let mut y = vec![vec![vec![0.0; w]; h]; c_out];
    for (o, plane) in y.iter_mut().enumerate() {
        for (i, row) in plane.iter_mut().enumerate() {
            for (j, out) in row.iter_mut().enumerate() {
                let mut s = bias[o];
                for (ci, xin) in x.iter().enumerate() {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (yy, xx) = (i as isize + dy, j as isize + dx);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let wi = ((o * c_in + ci) * k + (dy + r) as usize) * k + (dx + r) as usize;
                            s += weights[wi] * xin[yy as usize][xx as usize];
                        }
                    }
                }
                *out = s;
            }
        }
    }
    y
}

fn relu(mut x: Map) -> Map {
    x.iter_mut().flatten().flatten().for_each(|v| *v = v.max(0.0));
    x
}

fn pool(x: &Map) -> Map {
    x.iter()
        .map(|p| {
            (0..p.len() / 2)
                .map(|i| (0..p[0].len() / 2).map(|j| p[2 * i][2 * j].max(p[2 * i][2 * j + 1]).max(p[2 * i + 1][2 * j]).max(p[2 * i + 1][2 * j + 1])).collect())
                .collect()
        })
        .collect()
}

fn up(x: &Map) -> Map {
    x.iter()
        .map(|p| (0..2 * p.len()).map(|i| (0..2 * p[0].len()).map(|j| p[i / 2][j / 2]).collect()).collect())
        .collect()
}

/// Deterministic UNet forward written without the library's kernels.
fn naive_unet(cfg: &NetConfig, p: &[f64], input: &[f64]) -> Vec<f64> {
    let n = cfg.resolution;
    let mut x: Map = vec![(0..n).map(|i| input[i * n..(i + 1) * n].to_vec()).collect()];
    let mut at = 0;
    let mut skips = Vec::new();
    for l in 0..cfg.depth {
        let c = cfg.base_channels << l;
        let a = relu(conv(&x, p, &mut at, c, 3));
        let b = relu(conv(&a, p, &mut at, c, 3));
        x = pool(&b);
        skips.push(b);
    }
    let c = cfg.base_channels << cfg.depth;
    let a = relu(conv(&x, p, &mut at, c, 3));
    x = relu(conv(&a, p, &mut at, c, 3));
    for l in (0..cfg.depth).rev() {
        let c = cfg.base_channels << l;
        let mut cat = conv(&up(&x), p, &mut at, c, 3);
        cat.extend(skips[l].iter().cloned());
        let a = relu(conv(&cat, p, &mut at, c, 3));
        x = relu(conv(&a, p, &mut at, c, 3));
    }
    let z = conv(&x, p, &mut at, 1, 1);
    assert_eq!(at, p.len());
    z[0].iter().flatten().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
}

#[test]
fn forward_matches_naive_unet() {
    for (depth, base, res) in [(3, 2, 8), (3, 4, 16), (4, 2, 16)] {
        let cfg = NetConfig::new(depth, base, 0.2, res).unwrap();
        let net = Network::<f64>::new(cfg, 9).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let input: Vec<f64> = (0..res * res).map(|_| rng.random::<f64>()).collect();
        let got = net.forward_normalized(&input, None).unwrap();
        let want = naive_unet(&cfg, net.params(), &input);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "depth {depth}: {g} vs {w}");
        }
    }
}

#[test]
fn zero_network_predicts_one_half() {
    let cfg = NetConfig::new(3, 2, 0.0, 8).unwrap();
    let out = Network::<f64>::zeros(cfg).unwrap().forward_normalized(&[0.7; 64], None).unwrap();
    assert!(out.iter().all(|&v| v == 0.5));
}

#[test]
fn parameter_count_closed_form() {
    for depth in 3..=6 {
        for base in [1usize, 2, 4, 8, 16, 64] {
            let cfg = NetConfig { depth, base_channels: base, dropout_rate: 0.0, resolution: 64 };
            let c = |l: usize| base << l;
            let mut total = 0;
            let mut c_in = 1;
            for l in 0..=depth {
                total += 9 * c_in * c(l) + c(l) + 9 * c(l) * c(l) + c(l);
                c_in = c(l);
            }
            for l in 0..depth {
                total += 9 * c(l + 1) * c(l) + c(l) + 18 * c(l) * c(l) + c(l) + 9 * c(l) * c(l) + c(l);
            }
            total += base + 1;
            assert_eq!(param_count(&cfg), total, "depth {depth} base {base}");
        }
    }
    // depth 4, base 8: a hand-summed reference
    assert_eq!(param_count(&NetConfig { depth: 4, base_channels: 8, dropout_rate: 0.0, resolution: 64 }), 540_073);
}

#[test]
fn mcd_sigma_matches_two_pass() {
    let cfg = NetConfig::new(3, 4, 0.3, 16).unwrap();
    let net = Network::<f64>::new(cfg, 1).unwrap();
    let spec = GridSpec::new(16.0, 16).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let image = BevImage { spec, counts: (0..256).map(|_| rng.random_range(0..6)).collect() };
    let passes = 17;
    let (mean, conf) = infer_mcd(&net, &image, passes, 33).unwrap();
    let runs: Vec<Vec<f64>> =
        (0..passes).map(|i| net.forward(&image, Some(seed::derive(33, &[i as u64]))).unwrap().values).collect();
    for cell in 0..256 {
        let m = runs.iter().map(|r| r[cell]).sum::<f64>() / passes as f64;
        let v = runs.iter().map(|r| (r[cell] - m).powi(2)).sum::<f64>() / passes as f64;
        assert!((mean.values[cell] - m).abs() < 1e-12);
        assert!((conf.sigma[cell] - v.sqrt()).abs() < 1e-12);
    }
    assert!(conf.mean() > 0.0);
}

#[test]
fn overfits_a_small_set() {
    let spec = GridSpec::new(16.0, 16).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let set: Vec<Example<f64>> = (0..10)
        .map(|_| {
            let counts: Vec<u32> = (0..256).map(|_| if rng.random::<f64>() < 0.4 { rng.random_range(1..5) } else { 0 }).collect();
            let mask = FovMask { spec, cells: counts.iter().map(|&c| c > 0).collect() };
            Example::new(&BevImage { spec, counts }, &mask).unwrap()
        })
        .collect();
    let cfg = NetConfig::new(3, 4, 0.0, 16).unwrap();
    let net = Network::<f64>::new(cfg, 0).unwrap();
    let initial: f64 = set.iter().map(|e| bce(&net.forward_normalized(&e.input, None).unwrap(), &e.target).unwrap()).sum::<f64>() / 10.0;
    let tc = TrainConfig { learning_rate: 1e-2, max_epochs: 150, batch_size: 2, patience: 150, seed: 0 };
    let out = train(net, &set, &set, &tc).unwrap();
    let last = out.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert!(last < 0.1 * initial, "initial {initial}, best {last}");
}

proptest! {
    #[test]
    fn outputs_are_probabilities(input in prop::collection::vec(0.0..1.0f64, 64), seed in any::<u64>()) {
        let net = Network::<f64>::new(NetConfig::new(3, 2, 0.5, 8).unwrap(), seed).unwrap();
        for v in net.forward_normalized(&input, Some(seed)).unwrap() {
            prop_assert!(v > 0.0 && v < 1.0, "{v}");
        }
    }

    #[test]
    fn binarize_is_strict_threshold(values in prop::collection::vec(0.0..1.0f64, 64), t in 0.01..0.99f64) {
        let pm = ProbMap { spec: GridSpec::new(8.0, 8).unwrap(), values: values.clone() };
        let mask = binarize(&pm, t).unwrap();
        for (c, v) in mask.cells.iter().zip(&values) {
            prop_assert_eq!(*c, *v > t);
        }
        let half = binarize(&pm, 0.5).unwrap();
        for (c, v) in half.cells.iter().zip(&values) {
            if *v != 0.5 {
                prop_assert_eq!(*c, v.round() == 1.0);
            }
        }
    }

    #[test]
    fn bce_matches_scalar_loop(pairs in prop::collection::vec((0.0..=1.0f64, prop::bool::ANY), 1..100)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().map(|&(p, t)| (p, if t { 1.0 } else { 0.0 })).unzip();
        let mut want = 0.0;
        for (&p, &t) in p.iter().zip(&t) {
            let q = p.clamp(1e-7, 1.0 - 1e-7);
            want -= if t == 1.0 { q.ln() } else { (1.0 - q).ln() };
        }
        want /= p.len() as f64;
        prop_assert!((bce(&p, &t).unwrap() - want).abs() < 1e-12);
    }
}
