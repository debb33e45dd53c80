use proptest::prelude::*;
use ssmsel::constructions::{gaussian_lowrank_build, jl_build, kernel_select};
use ssmsel::model::{conv_layer_apply, fnn_apply, Affine};
use ssmsel::numerics::{complex_fft, conv_causal, conv_causal_fft, conv_causal_naive, Complex64, FftDirection};
use ssmsel::ssm::{build_rotation_ssm, window_states, StateSpaceParams};
use ssmsel::tasks::{
    eval_err_v, gen_assoc_recall, gen_copy, gen_induction_head, gen_selective_copy, importance_sort, validate_grammar,
    TaskKind, TaskSample, Vocab,
};
use ssmsel::{ConvLayer, FilterBank, FnnStack, Matrix, RngStream, SequenceTensor};

fn uniform_tensor(rng: &mut RngStream, d: usize, t: usize) -> SequenceTensor {
    SequenceTensor::from_fn(d, t, |_, _| rng.uniform(-1.0, 1.0))
}

fn uniform_filter(rng: &mut RngStream, d: usize, window: usize) -> FilterBank {
    FilterBank::new(Matrix::from_fn(d, window + 1, |_, _| rng.uniform(-1.0, 1.0))).unwrap()
}

fn random_layer(rng: &mut RngStream, d: usize, window: usize) -> ConvLayer {
    let mut v = |s: f64| (0..d).map(|_| rng.uniform(-s, s)).collect::<Vec<_>>();
    let (c1, c2, a1, a2) = (v(1.0), v(1.0), v(4.0), v(4.0));
    ConvLayer::new(Matrix::identity(d), c1, c2, a1, a2, window).unwrap()
}

fn random_stack(rng: &mut RngStream, dims: &[usize], b: f64) -> FnnStack {
    let layers = dims
        .windows(2)
        .map(|w| {
            let a = Matrix::from_fn(w[1], w[0], |_, _| rng.uniform(-b, b));
            Affine::new(a, (0..w[1]).map(|_| rng.uniform(-b, b)).collect()).unwrap()
        })
        .collect();
    FnnStack::new(layers).unwrap()
}

fn scaled(x: &SequenceTensor, a: f64, z: &SequenceTensor, b: f64) -> SequenceTensor {
    SequenceTensor::from_fn(x.d(), x.t(), |i, j| a * x[(i, j)] + b * z[(i, j)])
}

fn dense_power(a: &Matrix, mut n: usize) -> Matrix {
    let mut base = a.clone();
    let mut acc = Matrix::identity(a.rows());
    while n > 0 {
        if n & 1 == 1 {
            acc = acc.matmul(&base).unwrap();
        }
        base = base.matmul(&base).unwrap();
        n >>= 1;
    }
    acc
}

fn orthogonality_defect(a: &Matrix) -> f64 {
    a.transpose().matmul(a).unwrap().max_abs_diff(&Matrix::identity(a.rows()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_round_trip(log_n in 0u32..=12, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let x: Vec<Complex64> = (0..1usize << log_n).map(|_| Complex64::new(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0))).collect();
        let back = complex_fft(&complex_fft(&x, FftDirection::Forward).unwrap(), FftDirection::Inverse).unwrap();
        let scale = x.iter().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max);
        let err = x.iter().zip(&back).map(|(a, b)| (a.re - b.re).abs().max((a.im - b.im).abs())).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12 * scale);
    }

    #[test]
    fn convolution_is_linear(d in 1usize..6, t in 1usize..300, seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = RngStream::new(seed, 1);
        let window = rng.below(t + 4);
        let h = uniform_filter(&mut rng, d, window);
        let (x, z) = (uniform_tensor(&mut rng, d, t), uniform_tensor(&mut rng, d, t));
        let lhs = conv_causal(&h, &scaled(&x, a, &z, b)).unwrap();
        let (cx, cz) = (conv_causal(&h, &x).unwrap(), conv_causal(&h, &z).unwrap());
        let rhs = scaled(&cx, a, &cz, b);
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * rhs.matrix().max_abs().max(1.0));
    }

    #[test]
    fn fft_and_direct_paths_agree(d in 1usize..=32, t in 1usize..=2048, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 2);
        let u = ((t as f64) * frac) as usize;
        let h = uniform_filter(&mut rng, d.min(4), u.min(t));
        let x = uniform_tensor(&mut rng, d.min(4), t);
        prop_assert!(conv_causal_fft(&h, &x).unwrap().max_abs_diff(&conv_causal_naive(&h, &x).unwrap()) <= 1e-10);
    }

    #[test]
    fn outputs_ignore_later_inputs(d in 1usize..4, t in 2usize..200, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 3);
        let window = rng.below(t);
        let h = uniform_filter(&mut rng, d, window);
        let x = uniform_tensor(&mut rng, d, t);
        let pos = rng.below(t - 1);
        let mut x2 = x.clone();
        for k in 0..d {
            x2[(k, pos + 1)] += 1.0;
        }
        let (y, y2) = (conv_causal(&h, &x).unwrap(), conv_causal(&h, &x2).unwrap());
        let (n, n2) = (conv_causal_naive(&h, &x).unwrap(), conv_causal_naive(&h, &x2).unwrap());
        for j in 0..=pos {
            prop_assert_eq!(n.column(j), n2.column(j));
            // The FFT path mixes all positions, so it only agrees to round-off.
            prop_assert!((0..d).all(|k| (y[(k, j)] - y2[(k, j)]).abs() <= 1e-12));
        }
        // Positions beyond the window of the perturbation are also untouched.
        for j in (pos + 1 + window + 1)..t {
            prop_assert!((0..d).all(|k| (y[(k, j)] - y2[(k, j)]).abs() <= 1e-12));
        }
    }

    #[test]
    fn fnn_bounds_hold(seed in any::<u64>(), b in 1.0f64..3.0, w in 1usize..=8, l in 1usize..=4, r in 1.0f64..2.0) {
        let mut rng = RngStream::new(seed, 4);
        let dims: Vec<usize> = (0..=l).map(|_| 1 + rng.below(w)).collect();
        let f = random_stack(&mut rng, &dims, b);
        let x = SequenceTensor::from_fn(dims[0], 3, |_, _| rng.uniform(-r, r));
        let x2 = SequenceTensor::from_fn(dims[0], 3, |i, j| (x[(i, j)] + rng.uniform(-0.2, 0.2)).clamp(-r, r));
        let (fx, fx2) = (fnn_apply(&f, &x).unwrap(), fnn_apply(&f, &x2).unwrap());
        prop_assert!(fx.matrix().max_abs() <= (2.0 * b * w as f64).powi(l as i32) * r);
        prop_assert!(fx.max_abs_diff(&fx2) <= (b * w as f64).powi(l as i32) * x.max_abs_diff(&x2) * (1.0 + 1e-12));
    }

    #[test]
    fn fnn_is_tokenwise_and_deterministic(seed in any::<u64>(), t in 1usize..12) {
        let mut rng = RngStream::new(seed, 5);
        let f = random_stack(&mut rng, &[3, 6, 2], 1.0);
        let x = uniform_tensor(&mut rng, 3, t);
        let y = fnn_apply(&f, &x).unwrap();
        prop_assert_eq!(&y, &fnn_apply(&f, &x).unwrap());
        let pos = rng.below(t);
        let mut x2 = x.clone();
        x2[(0, pos)] += 0.5;
        let y2 = fnn_apply(&f, &x2).unwrap();
        for j in (0..t).filter(|j| *j != pos) {
            prop_assert_eq!(y.column(j), y2.column(j));
        }
    }

    #[test]
    fn conv_layer_output_bound(seed in any::<u64>(), d in 1usize..6, window in 0usize..16, b in 1.0f64..3.0, r in 0.5f64..2.0) {
        let mut rng = RngStream::new(seed, 6);
        let mut v = |n: usize| (0..n).map(|_| rng.uniform(-b, b)).collect::<Vec<_>>();
        let (w_mix, c1, c2, a1, a2) = (v(d * d), v(d), v(d), v(d), v(d));
        let layer = ConvLayer::new(Matrix::from_vec(d, d, w_mix).unwrap(), c1, c2, a1, a2, window).unwrap();
        let x = SequenceTensor::from_fn(d, 24, |_, _| rng.uniform(-r, r));
        let g = conv_layer_apply(&layer, &x).unwrap();
        let c = ssmsel::model::materialize_filter(&layer).max_row_l1();
        prop_assert!(g.matrix().max_abs() <= b * d as f64 * r * c * (1.0 + 1e-12));
        prop_assert_eq!(&g, &conv_layer_apply(&layer, &x).unwrap());
    }

    #[test]
    fn rotation_blocks_stay_orthogonal(seed in any::<u64>(), d in 1usize..4, window in 0usize..=1_000_000) {
        let mut rng = RngStream::new(seed, 7);
        let p: StateSpaceParams = build_rotation_ssm(&random_layer(&mut rng, d, window));
        prop_assert!(orthogonality_defect(&p.a_rec) <= 1e-12);
        prop_assert!(orthogonality_defect(&dense_power(&p.a_rec, window + 1)) <= 1e-9);
    }

    #[test]
    fn window_identity_on_states(seed in any::<u64>(), d in 1usize..3, window in 0usize..12, t in 1usize..40) {
        let mut rng = RngStream::new(seed, 8);
        let p = build_rotation_ssm(&random_layer(&mut rng, d, window));
        let u = uniform_tensor(&mut rng, d, t);
        let (xs, xds) = window_states(&p, &u, window).unwrap();
        let a_lag = dense_power(&p.a_rec, window + 1);
        for step in 0..t {
            let shifted = a_lag.matvec(&xds[step]).unwrap();
            let mut oracle = vec![0.0; p.state_dim];
            for s in step.saturating_sub(window)..=step {
                let bu = p.b_rec.matvec(&u.column(s)).unwrap();
                let term = dense_power(&p.a_rec, step - s).matvec(&bu).unwrap();
                oracle.iter_mut().zip(term).for_each(|(o, v)| *o += v);
            }
            for i in 0..p.state_dim {
                prop_assert!((xs[step][i] - shifted[i] - oracle[i]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn lowrank_is_separable(kappa in 0.5f64..200.0, t in -1.0f64..1.0, x in -1.0f64..1.0) {
        let g = gaussian_lowrank_build(kappa, 0.01).unwrap();
        let (left, right) = (g.eval_separated(t), g.factors(x));
        prop_assert_eq!(left.len(), g.rank());
        prop_assert_eq!(right.len(), g.rank());
        let dot: f64 = left.iter().zip(&right).map(|(a, b)| a * b).sum();
        let value = g.eval(t, x);
        prop_assert!((dot - value).abs() <= 1e-12 * value.abs().max(1.0));
        prop_assert!((value - g.exact(t, x)).abs() <= 0.03);
    }

    #[test]
    fn jl_distortion_is_rechecked(seed in any::<u64>(), n in 2usize..20) {
        let mut rng = RngStream::new(seed, 9);
        let points: Vec<Vec<f64>> = (0..n).map(|i| { let mut p = vec![0.0; n]; p[i] = 1.0; p }).collect();
        let jl = jl_build(&points, 1, 256, &mut rng, 64).unwrap();
        prop_assert!(jl.distortion <= 0.125);
        prop_assert_eq!(jl.recheck(&points), jl.distortion);
    }

    #[test]
    fn temperature_scaling_keeps_the_selected_index(seed in any::<u64>(), n in 2usize..40, lambda in 0.01f64..100.0) {
        let mut rng = RngStream::new(seed, 10);
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let values = Matrix::identity(n);
        let kappa = 50.0;
        let w = kernel_select(&scores, &values, kappa).unwrap();
        let s2: Vec<f64> = scores.iter().map(|s| s * lambda).collect();
        let w2 = kernel_select(&s2, &values, kappa / lambda).unwrap();
        let arg = |v: &[f64]| (0..v.len()).max_by(|a, b| v[*a].total_cmp(&v[*b])).unwrap();
        prop_assert_eq!(arg(&w), arg(&w2));
    }

    #[test]
    fn importance_sort_permutes_columns(seed in any::<u64>(), t in 1usize..30) {
        let mut rng = RngStream::new(seed, 11);
        let x = uniform_tensor(&mut rng, 2, t);
        let (perm, sorted) = importance_sort(&x, &|x, t| x[(1, t)]);
        let mut seen = perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..t).collect::<Vec<_>>());
        for (j, &src) in perm.iter().enumerate() {
            prop_assert_eq!(sorted.column(j), x.column(src));
        }
        prop_assert!((1..t).all(|j| sorted[(1, j - 1)] <= sorted[(1, j)]));
    }
}

fn generate(kind: TaskKind, v: usize, vocab: &Vocab, rng: &mut RngStream) -> TaskSample {
    match kind {
        TaskKind::Copy => gen_copy(v, vocab, rng),
        TaskKind::AssocRecall => gen_assoc_recall(v, vocab, rng),
        TaskKind::InductionHead => gen_induction_head(v, vocab, rng),
        TaskKind::SelectiveCopy => gen_selective_copy(v, vocab, 0.3, rng),
        TaskKind::MaxRegression => unreachable!(),
    }
    .unwrap()
}

fn task_vocab(kind: TaskKind) -> Vocab {
    match kind {
        TaskKind::Copy => Vocab::copy_task(6),
        TaskKind::AssocRecall => Vocab::recall_task(6, 6),
        TaskKind::InductionHead => Vocab::plain(6),
        TaskKind::SelectiveCopy => Vocab::selective_copy_task(6),
        TaskKind::MaxRegression => unreachable!(),
    }
}

const KINDS: [TaskKind; 4] = [TaskKind::Copy, TaskKind::AssocRecall, TaskKind::InductionHead, TaskKind::SelectiveCopy];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generators_are_deterministic_and_grammatical(seed in any::<u64>(), stream in any::<u64>(), v in 2usize..=6) {
        for kind in KINDS {
            let vocab = task_vocab(kind);
            let a = generate(kind, v, &vocab, &mut RngStream::new(seed, stream));
            let b = generate(kind, v, &vocab, &mut RngStream::new(seed, stream));
            prop_assert_eq!(&a, &b);
            prop_assert!(validate_grammar(kind, &a, &vocab));
        }
    }
}

#[test]
fn validators_reject_samples_of_other_kinds() {
    // A sample relabeled as another kind must fail that kind's grammar in
    // all but a vanishing fraction of draws. Copy sequences are exactly the
    // pad-free selective copy sequences, so that pair is checked separately.
    let copy_like = |k: TaskKind| matches!(k, TaskKind::Copy | TaskKind::SelectiveCopy);
    for kind in KINDS {
        let vocab = task_vocab(kind);
        for other in KINDS.into_iter().filter(|o| *o != kind && !(copy_like(kind) && copy_like(*o))) {
            let other_vocab = task_vocab(other);
            let mut accepted = 0;
            for i in 0..200 {
                let mut s = generate(kind, 6, &vocab, &mut RngStream::new(i, 0));
                s.kind = other;
                if s.input.iter().all(|&w| w < other_vocab.len()) && validate_grammar(other, &s, &other_vocab) {
                    accepted += 1;
                }
            }
            assert!(accepted <= 2, "{kind:?} samples accepted as {other:?}: {accepted}/200");
        }
    }
}

#[test]
fn err_estimate_tracks_a_planted_failure_rate() {
    // The predictor fails exactly when the first copied word is the first
    // regular word, which happens with probability 1/6.
    let vocab = Vocab::copy_task(6);
    let first = vocab.regular_ids()[0];
    let est = eval_err_v(
        6000,
        &RngStream::new(5, 0),
        |r| gen_copy(4, &vocab, r),
        |s| {
            let mut out = s.target_ids().to_vec();
            if out[0] == first {
                out[0] = vocab.regular_ids()[1];
            }
            out
        },
    )
    .unwrap();
    let p = 1.0 / 6.0;
    assert!(est.lower <= p && p <= est.upper, "{est:?}");
    assert!((est.estimate - p).abs() < 0.02);
}

#[test]
fn padded_selective_samples_are_not_copy_samples() {
    let vocab = task_vocab(TaskKind::SelectiveCopy);
    let pad = vocab.specials.pad.unwrap();
    let mut padded = 0;
    for i in 0..200 {
        let mut s = generate(TaskKind::SelectiveCopy, 6, &vocab, &mut RngStream::new(i, 1));
        let has_pad = s.input.contains(&pad);
        s.kind = TaskKind::Copy;
        assert_eq!(validate_grammar(TaskKind::Copy, &s, &vocab), !has_pad);
        padded += has_pad as usize;
    }
    assert!(padded > 100);
}
