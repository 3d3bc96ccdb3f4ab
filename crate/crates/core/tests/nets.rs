use octforce::nets::checkpoint::{read_entries, write_entries, Checkpoint};
use octforce::nets::layers::{convgru_cell, gru_cell, resblock_1d, resblock_2d, GruParams, ResBlockParams};
use octforce::nets::{build, trunk_param_count, ArchId, LayerSpec, Model, ParamVars};
use octforce::streams::Normalizer;
use octforce_autodiff::check::check_gradients;
use octforce_autodiff::{sigmoid, Graph, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 10;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn project(g: &mut Graph, y: Var, seed: u64) -> octforce_autodiff::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let r = g.constant(random(&mut rng, g.shape(y)));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn gru_shapes(n_in: usize, hidden: usize, kernel: &[usize]) -> Vec<Vec<usize>> {
    let with = |a: usize, b: usize| {
        let mut s = vec![a, b];
        s.extend_from_slice(kernel);
        s
    };
    let mut out = Vec::new();
    for _ in 0..3 {
        out.push(with(hidden, n_in));
        out.push(with(hidden, hidden));
        out.push(vec![hidden]);
    }
    out
}

fn net_err(e: octforce::NetError) -> octforce_autodiff::AutodiffError {
    match e {
        octforce::NetError::Autodiff(a) => a,
        other => panic!("unexpected error {other}"),
    }
}

/// Scalar, loop-written GRU cell.
fn reference_gru(x: &[f64], h: &[f64], p: &[Tensor], n_in: usize, hidden: usize) -> Vec<f64> {
    let affine = |w: &Tensor, u: &Tensor, b: &Tensor, hv: &[f64], j: usize| {
        let mut acc = b.data()[j];
        for i in 0..n_in {
            acc += w.data()[j * n_in + i] * x[i];
        }
        for i in 0..hidden {
            acc += u.data()[j * hidden + i] * hv[i];
        }
        acc
    };
    let z: Vec<f64> = (0..hidden).map(|j| sigmoid(affine(&p[0], &p[1], &p[2], h, j))).collect();
    let r: Vec<f64> = (0..hidden).map(|j| sigmoid(affine(&p[3], &p[4], &p[5], h, j))).collect();
    let rh: Vec<f64> = (0..hidden).map(|j| r[j] * h[j]).collect();
    (0..hidden)
        .map(|j| {
            let cand = affine(&p[6], &p[7], &p[8], &rh, j).tanh();
            (1.0 - z[j]) * h[j] + z[j] * cand
        })
        .collect()
}

#[test]
fn gru_cell_matches_scalar_reference() {
    let (batch, n_in, hidden) = (2, 3, 4);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<Tensor> = gru_shapes(n_in, hidden, &[]).iter().map(|s| random(&mut rng, s)).collect();
        let x = random(&mut rng, &[batch, n_in]);
        let h = random(&mut rng, &[batch, hidden]);
        let mut g = Graph::no_grad();
        let pv: Vec<Var> = params.iter().map(|t| g.constant(t.clone())).collect();
        let (xv, hv) = (g.constant(x.clone()), g.constant(h.clone()));
        let out = gru_cell(&mut g, xv, hv, &GruParams::from_vars(&pv)).unwrap();
        for b in 0..batch {
            let want =
                reference_gru(&x.data()[b * n_in..][..n_in], &h.data()[b * hidden..][..hidden], &params, n_in, hidden);
            for (j, w) in want.iter().enumerate() {
                let got = g.value(out).data()[b * hidden + j];
                assert!((got - w).abs() <= 1e-12, "seed {seed}: {got} vs {w}");
            }
        }
    }
}

#[test]
fn zero_params_halve_the_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (n_in, hidden, kernel, xs, hs) in [
        (3, 4, vec![], vec![2, 3], vec![2, 4]),
        (2, 3, vec![3], vec![2, 2, 9], vec![2, 3, 9]),
    ] {
        let mut g = Graph::no_grad();
        let pv: Vec<Var> = gru_shapes(n_in, hidden, &kernel).into_iter().map(|s| g.constant(Tensor::zeros(s))).collect();
        let h = random(&mut rng, &hs);
        let x = g.constant(random(&mut rng, &xs));
        let hv = g.constant(h.clone());
        let p = GruParams::from_vars(&pv);
        let out = if kernel.is_empty() { gru_cell(&mut g, x, hv, &p) } else { convgru_cell(&mut g, x, hv, &p) }.unwrap();
        for (o, h) in g.value(out).data().iter().zip(h.data()) {
            assert!((o - 0.5 * h).abs() <= 1e-15);
        }
    }
}

#[test]
fn convgru_kernel_one_is_pixelwise_gru() {
    let (batch, c_in, hidden, len) = (2, 3, 4, 7);
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let conv_params: Vec<Tensor> = gru_shapes(c_in, hidden, &[1]).iter().map(|s| random(&mut rng, s)).collect();
        let x = random(&mut rng, &[batch, c_in, len]);
        let h = random(&mut rng, &[batch, hidden, len]);
        let mut g = Graph::no_grad();
        let pv: Vec<Var> = conv_params.iter().map(|t| g.constant(t.clone())).collect();
        let (xv, hv) = (g.constant(x.clone()), g.constant(h.clone()));
        let conv = convgru_cell(&mut g, xv, hv, &GruParams::from_vars(&pv)).unwrap();
        let conv = g.value(conv).data().to_vec();

        // dense weights are the kernel-1 weights with the trailing axis dropped
        let dense_params: Vec<Tensor> = conv_params
            .iter()
            .map(|t| Tensor::new(t.shape()[..t.rank().min(2)].to_vec(), t.data().to_vec()).unwrap())
            .collect();
        for b in 0..batch {
            for p in 0..len {
                let xp: Vec<f64> = (0..c_in).map(|c| x.data()[(b * c_in + c) * len + p]).collect();
                let hp: Vec<f64> = (0..hidden).map(|c| h.data()[(b * hidden + c) * len + p]).collect();
                let mut g = Graph::no_grad();
                let dv: Vec<Var> = dense_params.iter().map(|t| g.constant(t.clone())).collect();
                let xv = g.constant(Tensor::new(vec![1, c_in], xp).unwrap());
                let hv = g.constant(Tensor::new(vec![1, hidden], hp).unwrap());
                let y = gru_cell(&mut g, xv, hv, &GruParams::from_vars(&dv)).unwrap();
                for c in 0..hidden {
                    let want = g.value(y).data()[c];
                    let got = conv[(b * hidden + c) * len + p];
                    assert!((got - want).abs() <= 1e-12, "seed {seed} b {b} p {p} c {c}");
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn gru_state_stays_bounded(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::no_grad();
        let pv: Vec<Var> = gru_shapes(3, 5, &[])
            .iter()
            .map(|s| {
                let mut t = random(&mut rng, s);
                t.data_mut().iter_mut().for_each(|v| *v *= scale);
                g.constant(t)
            })
            .collect();
        let x = random(&mut rng, &[4, 3]);
        let x = g.constant(x);
        let h = g.constant(random(&mut rng, &[4, 5]));
        let y = gru_cell(&mut g, x, h, &GruParams::from_vars(&pv)).unwrap();
        prop_assert!(g.value(y).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn convgru_preserves_length(len in 1usize..40, kernel in prop::sample::select(vec![1usize, 3, 5])) {
        let mut rng = ChaCha8Rng::seed_from_u64(len as u64);
        let mut g = Graph::no_grad();
        let pv: Vec<Var> = gru_shapes(2, 3, &[kernel]).iter().map(|s| g.constant(random(&mut rng, s))).collect();
        let x = g.constant(random(&mut rng, &[1, 2, len]));
        let h = g.constant(Tensor::zeros(vec![1, 3, len]));
        let y = convgru_cell(&mut g, x, h, &GruParams::from_vars(&pv)).unwrap();
        prop_assert_eq!(g.shape(y), &[1, 3, len]);
    }
}

fn block_shapes(c_in: usize, c_out: usize, kernel: &[usize], proj: bool) -> Vec<Vec<usize>> {
    let with = |a: usize, b: usize, k: &[usize]| {
        let mut s = vec![a, b];
        s.extend_from_slice(k);
        s
    };
    let mut s = vec![with(c_out, c_in, kernel), vec![c_out], with(c_out, c_out, kernel), vec![c_out]];
    if proj {
        s.push(with(c_out, c_in, &vec![1; kernel.len()]));
        s.push(vec![c_out]);
    }
    s
}

fn block_params(v: &[Var]) -> ResBlockParams {
    ResBlockParams { w1: v[0], b1: v[1], w2: v[2], b2: v[3], proj: (v.len() > 4).then(|| (v[4], v[5])) }
}

#[test]
fn resblock_identity_shortcut_with_zero_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (kernel, xs) in [(vec![3], vec![2, 3, 10]), (vec![3, 3], vec![2, 3, 4, 5])] {
        let mut g = Graph::no_grad();
        let pv: Vec<Var> = block_shapes(3, 3, &kernel, false).into_iter().map(|s| g.constant(Tensor::zeros(s))).collect();
        let x = random(&mut rng, &xs);
        let xv = g.constant(x.clone());
        let p = block_params(&pv);
        let y = if kernel.len() == 1 { resblock_1d(&mut g, xv, &p, 1) } else { resblock_2d(&mut g, xv, &p, 1) }.unwrap();
        let want: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(g.value(y).data(), &want[..]);
    }
}

#[test]
fn resblock_stride_two_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for len in [69usize, 70] {
        let mut g = Graph::no_grad();
        let pv: Vec<Var> = block_shapes(2, 5, &[3], true).iter().map(|s| g.constant(random(&mut rng, s))).collect();
        let x = g.constant(random(&mut rng, &[2, 2, len]));
        let y = resblock_1d(&mut g, x, &block_params(&pv), 2).unwrap();
        assert_eq!(g.shape(y), &[2, 5, len.div_ceil(2)]);
    }
    let mut g = Graph::no_grad();
    let pv: Vec<Var> = block_shapes(1, 4, &[3, 3], true).iter().map(|s| g.constant(random(&mut rng, s))).collect();
    let x = g.constant(random(&mut rng, &[1, 1, 7, 10]));
    let y = resblock_2d(&mut g, x, &block_params(&pv), 2).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 4, 5]);
}

fn check_block(name: &str, shapes: &[Vec<usize>], f: impl Fn(&mut Graph, &[Var]) -> octforce_autodiff::Result<Var>) {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
        let report = check_gradients(&inputs, EPS, |g, v| {
            let y = f(g, v)?;
            project(g, y, seed)
        })
        .unwrap();
        assert!(report.max_rel_error() <= TOL, "{name} seed {seed}: {:?}", report.rel_errors);
    }
}

#[test]
fn cell_and_block_gradients() {
    let mut s = vec![vec![2, 3], vec![2, 4]];
    s.extend(gru_shapes(3, 4, &[]));
    check_block("gru_cell", &s, |g, v| gru_cell(g, v[0], v[1], &GruParams::from_vars(&v[2..])).map_err(net_err));

    let mut s = vec![vec![2, 2, 6], vec![2, 3, 6]];
    s.extend(gru_shapes(2, 3, &[3]));
    check_block("convgru_cell", &s, |g, v| convgru_cell(g, v[0], v[1], &GruParams::from_vars(&v[2..])).map_err(net_err));

    for (proj, stride, c_out) in [(false, 1, 2), (true, 2, 3)] {
        let mut s = vec![vec![2, 2, 7]];
        s.extend(block_shapes(2, c_out, &[3], proj));
        check_block("resblock_1d", &s, |g, v| resblock_1d(g, v[0], &block_params(&v[1..]), stride).map_err(net_err));

        let mut s = vec![vec![1, 2, 4, 5]];
        s.extend(block_shapes(2, c_out, &[3, 3], proj));
        check_block("resblock_2d", &s, |g, v| resblock_2d(g, v[0], &block_params(&v[1..]), stride).map_err(net_err));
    }
}

/// Runs `model` with every parameter and the input as leaves.
fn forward_with(model: &Model, g: &mut Graph, v: &[Var]) -> octforce_autodiff::Result<Var> {
    let pv: ParamVars = model.params.keys().cloned().zip(v[1..].iter().copied()).collect();
    model.forward(g, &pv, v[0]).map_err(net_err)
}

#[test]
fn architecture_gradients() {
    let (t_s, d_c) = (4, 8);
    for arch in ArchId::ALL {
        for seed in 0..SEEDS {
            let model = build(arch, &LayerSpec::tiny(), t_s, d_c, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut inputs = vec![random(&mut rng, &[2, t_s, d_c])];
            inputs.extend(model.params.values().map(|t| random(&mut rng, t.shape())));
            let report = check_gradients(&inputs, EPS, |g, v| {
                let y = forward_with(&model, g, v)?;
                project(g, y, seed)
            })
            .unwrap();
            assert!(report.max_rel_error() <= TOL, "{arch} seed {seed}: {:?}", report.rel_errors);
        }
    }
}

#[test]
fn every_arch_maps_windows_to_scalars() {
    let spec = LayerSpec::small();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, &[2, 50, 70]);
    for arch in ArchId::ALL {
        let model = build(arch, &spec, 50, 70, 1).unwrap();
        let y = model.predict(x.clone()).unwrap();
        assert_eq!(y.len(), 2, "{arch}");
        assert_eq!(y, model.predict(x.clone()).unwrap(), "{arch} is not a pure function");
        let mut g = Graph::no_grad();
        let pv = model.bind(&mut g);
        let bad = g.constant(Tensor::zeros(vec![2, 49, 70]));
        assert!(model.forward(&mut g, &pv, bad).is_err());
    }
}

fn permute_history(x: &Tensor, t_s: usize, d_c: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut order: Vec<usize> = (0..t_s - 1).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order.push(t_s - 1);
    let batch = x.shape()[0];
    let mut out = Vec::with_capacity(x.numel());
    for b in 0..batch {
        for &t in &order {
            out.extend_from_slice(&x.data()[(b * t_s + t) * d_c..][..d_c]);
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

#[test]
fn only_the_single_frame_model_ignores_history() {
    let (t_s, d_c) = (6, 12);
    let mut differs = 0;
    let trials = 20;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let x = random(&mut rng, &[3, t_s, d_c]);
        let xp = permute_history(&x, t_s, d_c, &mut rng);
        if xp == x {
            continue;
        }
        let cnn = build(ArchId::Cnn1d, &LayerSpec::tiny(), t_s, d_c, trial).unwrap();
        assert_eq!(cnn.predict(x.clone()).unwrap(), cnn.predict(xp.clone()).unwrap());

        let cg = build(ArchId::ConvGruCnn, &LayerSpec::tiny(), t_s, d_c, trial).unwrap();
        let (a, b) = (cg.predict(x).unwrap(), cg.predict(xp).unwrap());
        if a.iter().zip(&b).any(|(p, q)| (p - q).abs() > 1e-12) {
            differs += 1;
        }
    }
    assert_eq!(differs, trials, "convGRU-CNN ignored temporal order in some trials");
}

fn counted_trunk(model: &Model) -> usize {
    model.params.iter().filter(|(k, _)| k.starts_with("trunk.")).map(|(_, t)| t.numel()).sum()
}

#[test]
fn trunk_parameter_counts_follow_the_formula() {
    for spec in [LayerSpec::default(), LayerSpec::small(), LayerSpec::tiny()] {
        let k = spec.kernel;
        let one = build(ArchId::Cnn1d, &spec, 5, 16, 0).unwrap();
        let two = build(ArchId::Cnn2d, &spec, 5, 16, 0).unwrap();
        assert_eq!(counted_trunk(&one), trunk_param_count(&spec, 1, k));
        assert_eq!(counted_trunk(&two), trunk_param_count(&spec, 1, k * k));
        let conv = build(ArchId::ConvGruCnn, &spec, 5, 16, 0).unwrap();
        assert_eq!(counted_trunk(&conv), trunk_param_count(&spec, spec.convgru.maps, k));
    }
}

#[test]
fn invalid_specs_fail_at_build() {
    let mut s = LayerSpec::tiny();
    s.kernel = 2;
    let e = build(ArchId::Cnn2d, &s, 4, 8, 0).unwrap_err().to_string();
    assert!(e.contains("odd"), "{e}");
    let mut s = LayerSpec::tiny();
    s.convgru.maps = 0;
    assert!(build(ArchId::ConvGruCnn, &s, 4, 8, 0).is_err());
    assert!(build(ArchId::Gru, &LayerSpec::tiny(), 0, 8, 0).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for arch in ArchId::ALL {
        let model = build(arch, &LayerSpec::tiny(), 4, 8, 21).unwrap();
        let normalizer = Normalizer {
            pixel_mean: (0..8).map(|i| 0.1 * i as f64 + 1.0 / 3.0).collect(),
            pixel_std: (0..8).map(|i| 1.0 + (i as f64).sqrt()).collect(),
            label_scale: 379.123456789,
        };
        let ck = Checkpoint { model, normalizer };
        let path = dir.path().join(format!("{arch}.ckpt"));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for ((_, a), (_, b)) in back.to_entries().iter().zip(ck.to_entries().iter()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        let again = dir.path().join("again.ckpt");
        back.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn checkpoint_rejects_inconsistent_contents() {
    let dir = tempfile::tempdir().unwrap();
    let model = build(ArchId::Cnn1d, &LayerSpec::tiny(), 4, 8, 0).unwrap();
    let ck = Checkpoint { model, normalizer: Normalizer::identity(8) };
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();

    let mut entries = read_entries(&path).unwrap();
    let i = entries.iter().position(|(k, _)| k == "head.w").unwrap();
    entries[i].1 = Tensor::zeros(vec![1, 99]);
    write_entries(&path, &entries).unwrap();
    assert!(Checkpoint::load(&path).is_err());

    entries.remove(i);
    write_entries(&path, &entries).unwrap();
    assert!(Checkpoint::load(&path).unwrap_err().to_string().contains("head.w"));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(Checkpoint::load(&path).is_err());
    assert!(Checkpoint::load(&dir.path().join("missing.ckpt")).is_err());
}
