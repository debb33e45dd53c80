//! Certification suites. Each check runs a seeded batch of trials and
//! returns a [`CertificationReport`] comparing what it measured against the
//! bound it must meet. The command line `verify` and the acceptance tests
//! both go through [`run_suite`].

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::constructions::{
    build_selective_copy_solver, build_task_solver, exclusion_select, exclusion_temperature, gaussian_lowrank_build,
    jl_build, kernel_select, positional_delta_filter, realize_as_conv_channels, softmax_hardmax_gap, surrogate_scores,
    weighted_softmax_gap, CertificationReport, KernelSelector, SolverKind, TaskSolver, SELECTIVE_COPY_C1,
};
use crate::constructions::{selective_copy_plan, term_count_for};
use crate::error::{Error, Result};
use crate::model::{fnn_apply, materialize_filter, Affine, ConvLayer, FnnStack};
use crate::numerics::{conv_causal_fft, conv_causal_naive, FilterBank, Matrix, RngStream, SequenceTensor};
use crate::ssm::{build_rotation_ssm, ssm_scan, windowed_scan};
use crate::tasks::{eval_err_v, gen_assoc_recall, gen_copy, gen_induction_head, gen_selective_copy, TaskSample, Vocab};
use crate::training::{grad_check, init_ssm, AttentionBaseline, Example, LossKind, LossTarget, SsmInit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Numerics,
    Ssm,
    Lemma33,
    Lowrank,
    Jl,
    Solvers,
    Exclusion,
    Gradcheck,
}

impl Suite {
    pub const EACH: [Suite; 8] = [
        Suite::Numerics,
        Suite::Ssm,
        Suite::Lemma33,
        Suite::Lowrank,
        Suite::Jl,
        Suite::Solvers,
        Suite::Exclusion,
        Suite::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::Numerics => "numerics",
            Suite::Ssm => "ssm",
            Suite::Lemma33 => "lemma33",
            Suite::Lowrank => "lowrank",
            Suite::Jl => "jl",
            Suite::Solvers => "solvers",
            Suite::Exclusion => "exclusion",
            Suite::Gradcheck => "gradcheck",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        std::iter::once(Suite::All)
            .chain(Suite::EACH)
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite {s:?}")))
    }
}

/// Overrides for the suites. Unset fields keep each check's own default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Context length of the kernel-selection check.
    pub v: usize,
    pub delta: f64,
    /// Tolerance the kernel-selection output is held to.
    pub eps: f64,
    /// Tolerance used to size the temperature; defaults to `eps`.
    pub kappa_eps: Option<f64>,
    /// Pad rate of the selective-copy check.
    pub alpha: f64,
    /// Regular words of the selective-copy check; defaults to the
    /// calibrated threshold.
    pub vocab_size: Option<usize>,
    /// Replaces the trial count of every check.
    pub trials: Option<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { seed: 0, v: 63, delta: 0.25, eps: 1e-3, kappa_eps: None, alpha: 0.3, vocab_size: None, trials: None }
    }
}

impl SuiteConfig {
    fn trials(&self, default: usize) -> usize {
        self.trials.unwrap_or(default).max(1)
    }

    fn rng(&self, name: &str) -> RngStream {
        RngStream::named(self.seed, name)
    }
}

pub fn run_suite(suite: Suite, cfg: &SuiteConfig) -> Result<Vec<CertificationReport>> {
    match suite {
        Suite::All => {
            let mut out = Vec::new();
            for s in Suite::EACH {
                out.extend(run_suite(s, cfg)?);
            }
            Ok(out)
        }
        Suite::Numerics => numerics_suite(cfg),
        Suite::Ssm => ssm_suite(cfg),
        Suite::Lemma33 => lemma33_suite(cfg),
        Suite::Lowrank => lowrank_suite(cfg),
        Suite::Jl => jl_suite(cfg),
        Suite::Solvers => solvers_suite(cfg),
        Suite::Exclusion => exclusion_suite(cfg),
        Suite::Gradcheck => gradcheck_suite(cfg),
    }
}

fn random_filter(rng: &mut RngStream, d: usize, window: usize) -> FilterBank {
    FilterBank::new(Matrix::from_fn(d, window + 1, |_, _| rng.uniform(-1.0, 1.0))).expect("finite taps")
}

fn random_tensor(rng: &mut RngStream, d: usize, t: usize) -> SequenceTensor {
    SequenceTensor::from_fn(d, t, |_, _| rng.uniform(-1.0, 1.0))
}

fn random_conv_layer(rng: &mut RngStream, d: usize, window: usize) -> ConvLayer {
    let mut v = |lo: f64, hi: f64| (0..d).map(|_| rng.uniform(lo, hi)).collect::<Vec<_>>();
    let (c1, c2, a1, a2) = (v(-1.0, 1.0), v(-1.0, 1.0), v(-4.0, 4.0), v(-4.0, 4.0));
    ConvLayer::new(Matrix::identity(d), c1, c2, a1, a2, window).expect("matching lengths")
}

/// FFT against direct convolution, plus the output and Lipschitz bounds of
/// budget-respecting token maps and convolution layers.
pub fn numerics_suite(cfg: &SuiteConfig) -> Result<Vec<CertificationReport>> {
    let mut out = Vec::new();
    let mut rng = cfg.rng("numerics/fft");
    let h = random_filter(&mut rng, 8, 64);
    let x = random_tensor(&mut rng, 8, 512);
    let start = Instant::now();
    let fast = conv_causal_fft(&h, &x)?;
    let secs = start.elapsed().as_secs_f64();
    let diff = fast.max_abs_diff(&conv_causal_naive(&h, &x)?);
    out.push(CertificationReport::at_most(
        "fft_vs_naive",
        json!({"D": 8, "T": 512, "U": 64, "fft_seconds": secs}),
        1e-10,
        diff,
        1,
        cfg.seed,
    ));
    let n = cfg.trials(50);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (d, t) = (1 + rng.below(6), 1 + rng.below(300));
        let u = rng.below(t + 20);
        let h = random_filter(&mut rng, d, u);
        let x = random_tensor(&mut rng, d, t);
        worst = worst.max(conv_causal_fft(&h, &x)?.max_abs_diff(&conv_causal_naive(&h, &x)?));
    }
    out.push(CertificationReport::at_most("fft_vs_naive_random_shapes", json!({}), 1e-10, worst, n, cfg.seed));
    out.extend(bound_checks(cfg)?);
    Ok(out)
}

/// Worst ratio of observed norm to its bound over random draws; the checks
/// pass when every ratio is at most one.
fn bound_checks(cfg: &SuiteConfig) -> Result<Vec<CertificationReport>> {
    let n = cfg.trials(500);
    let mut rng = cfg.rng("numerics/bounds");
    let (mut out_ratio, mut lip_ratio, mut conv_ratio) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let b = rng.uniform(1.0, 3.0);
        let w = 1 + rng.below(8);
        let l = 1 + rng.below(4);
        let r = rng.uniform(1.0, 2.0);
        let d_in = 1 + rng.below(w);
        let mut dims = vec![d_in];
        dims.extend((0..l).map(|_| 1 + rng.below(w)));
        let layers: Vec<Affine> = (0..l)
            .map(|i| {
                let a = Matrix::from_fn(dims[i + 1], dims[i], |_, _| rng.uniform(-b, b));
                let bias = (0..dims[i + 1]).map(|_| rng.uniform(-b, b)).collect();
                Affine::new(a, bias).expect("matching shapes")
            })
            .collect();
        let f = FnnStack::new(layers)?;
        let t = 1 + rng.below(6);
        let x = SequenceTensor::from_fn(d_in, t, |_, _| rng.uniform(-r, r));
        let x2 = SequenceTensor::from_fn(d_in, t, |i, j| (x[(i, j)] + rng.uniform(-0.1, 0.1)).clamp(-r, r));
        let fx = fnn_apply(&f, &x)?;
        let fx2 = fnn_apply(&f, &x2)?;
        let out_bound = (2.0 * b * w as f64).powi(l as i32) * r;
        out_ratio = out_ratio.max(fx.matrix().max_abs() / out_bound);
        let dx = x.max_abs_diff(&x2);
        if dx > 0.0 {
            lip_ratio = lip_ratio.max(fx.max_abs_diff(&fx2) / ((b * w as f64).powi(l as i32) * dx));
        }

        let d = 1 + rng.below(w);
        let window = rng.below(12);
        let layer = ConvLayer::new(
            Matrix::from_fn(d, d, |_, _| rng.uniform(-b, b)),
            (0..d).map(|_| rng.uniform(-b, b)).collect(),
            (0..d).map(|_| rng.uniform(-b, b)).collect(),
            (0..d).map(|_| rng.uniform(-b, b)).collect(),
            (0..d).map(|_| rng.uniform(-b, b)).collect(),
            window,
        )?;
        let xs = SequenceTensor::from_fn(d, 1 + rng.below(20), |_, _| rng.uniform(-r, r));
        let g = crate::model::conv_layer_apply(&layer, &xs)?;
        let c = materialize_filter(&layer).max_row_l1();
        let bound = b * d as f64 * r * c;
        if bound > 0.0 {
            conv_ratio = conv_ratio.max(g.matrix().max_abs() / bound);
        }
    }
    Ok(vec![
        CertificationReport::at_most("fnn_output_bound", json!({"bound": "(2BW)^L r"}), 1.0, out_ratio, n, cfg.seed),
        CertificationReport::at_most("fnn_lipschitz_bound", json!({"bound": "(BW)^L"}), 1.0, lip_ratio, n, cfg.seed),
        CertificationReport::at_most("conv_output_bound", json!({"bound": "B D r c"}), 1.0, conv_ratio, n, cfg.seed),
    ])
}

/// Rotation realization against full-window convolution, and the two-scan
/// window against window-limited convolution.
pub fn ssm_suite(cfg: &SuiteConfig) -> Result<Vec<CertificationReport>> {
    let n = cfg.trials(100);
    let mut rng = cfg.rng("ssm");
    let mut worst_full = 0.0f64;
    let mut worst_window = 0.0f64;
    for _ in 0..n {
        let layer = random_conv_layer(&mut rng, 4, 127);
        let u = random_tensor(&mut rng, 4, 128);
        let y = ssm_scan(&build_rotation_ssm(&layer), &u)?;
        let oracle = conv_causal_naive(&materialize_filter(&layer), &u)?;
        worst_full = worst_full.max(y.max_abs_diff(&oracle) / oracle.matrix().max_abs().max(1e-300));

        let layer = random_conv_layer(&mut rng, 4, 16);
        let u = random_tensor(&mut rng, 4, 256);
        let y = windowed_scan(&build_rotation_ssm(&layer), &u, 16)?;
        let oracle = conv_causal_naive(&materialize_filter(&layer), &u)?;
        worst_window = worst_window.max(y.max_abs_diff(&oracle) / oracle.matrix().max_abs().max(1e-300));
    }
    Ok(vec![
        CertificationReport::at_most("rotation_ssm_vs_conv", json!({"D": 4, "T": 128}), 1e-9, worst_full, n, cfg.seed),
        CertificationReport::at_most("windowed_scan_vs_conv", json!({"D": 4, "T": 256, "U": 16}), 1e-9, worst_window, n, cfg.seed),
    ])
}

/// A query, a matching key at a random position, and other keys whose
/// inner product with the query is at least `delta` lower. Half of them sit
/// exactly on that boundary so the instances are tight.
fn gap_instance(rng: &mut RngStream, dp: usize, v: usize, delta: f64) -> (Vec<f64>, Matrix, usize) {
    let unit = |rng: &mut RngStream| {
        let x: Vec<f64> = (0..dp).map(|_| rng.normal()).collect();
        let n = x.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        x.into_iter().map(|a| a / n).collect::<Vec<f64>>()
    };
    let q = unit(rng);
    let star = rng.below(v + 1);
    let mut keys = Matrix::zeros(dp, v + 1);
    for j in 0..=v {
        let k = if j == star {
            q.clone()
        } else if rng.unit() < 0.5 {
            // Unit key exactly on the gap boundary, q·k = 1 − δ.
            let mut u = unit(rng);
            let dot: f64 = u.iter().zip(&q).map(|(a, b)| a * b).sum();
            u.iter_mut().zip(&q).for_each(|(a, b)| *a -= dot * b);
            let n = u.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            let side = (1.0 - (1.0 - delta).powi(2)).max(0.0).sqrt();
            q.iter().zip(&u).map(|(a, b)| (1.0 - delta) * a + side * b / n).collect()
        } else {
            loop {
                let radius = rng.unit().powf(1.0 / dp as f64);
                let k: Vec<f64> = unit(rng).into_iter().map(|a| a * radius).collect();
                let dot: f64 = k.iter().zip(&q).map(|(a, b)| a * b).sum();
                if dot <= 1.0 - delta {
                    break k;
                }
            }
        };
        for (i, val) in k.into_iter().enumerate() {
            keys[(i, j)] = val;
        }
    }
    (q, keys, star)
}

/// Certified kernel selection, the surrogate-score error and both
/// softmax/hardmax bounds.
pub fn lemma33_suite(cfg: &SuiteConfig) -> Result<Vec<CertificationReport>> {
    let (dp, v, delta, eps) = (4, cfg.v, cfg.delta, cfg.eps);
    let kappa_eps = cfg.kappa_eps.unwrap_or(eps);
    let kappa = KernelSelector::default_kappa(delta, kappa_eps, v);
    let sel = KernelSelector::with_kappa(dp, delta, eps, v, kappa)?;
    let n = cfg.trials(200);
    let base = cfg.rng("lemma33/select");
    let start = Instant::now();
    let errs: Vec<Result<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.child(i);
            let (q, keys, star) = gap_instance(&mut rng, dp, v, delta);
            let values = Matrix::from_fn(3, v + 1, |_, _| rng.unit());
            let y = kernel_select(&surrogate_scores(&q, &keys, sel.a_scale)?, &values, sel.kappa)?;
            Ok(y.iter().zip(values.column(star)).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        })
        .collect();
    let worst = errs.into_iter().try_fold(0.0f64, |m, e| e.map(|e| m.max(e)))?;
    let secs = start.elapsed().as_secs_f64();
    let mut out = vec![CertificationReport::at_most(
        "kernel_select_certificate",
        json!({"V": v, "delta": delta, "eps": eps, "kappa": kappa, "required_kappa": KernelSelector::default_kappa(delta, eps, v)}),
        eps * (1.0 + 1e-9),
        sel.selection_bound(),
        1,
        cfg.seed,
    )];
    out.push(CertificationReport::at_most(
        "kernel_select",
        json!({"d_prime": dp, "V": v, "delta": delta, "eps": eps, "kappa_eps": kappa_eps, "kappa": kappa, "seconds": secs}),
        eps,
        worst,
        n,
        cfg.seed,
    ));

    let n = cfg.trials(10_000);
    let mut rng = cfg.rng("lemma33/surrogate");
    let mut worst = 0.0f64;
    for _ in 0..n {
        let q: Vec<f64> = (0..dp).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let k = Matrix::from_fn(dp, 1, |_, _| rng.uniform(-1.0, 1.0));
        let s = surrogate_scores(&q, &k, sel.a_scale)?[0];
        let exact: f64 = (0..dp).map(|i| q[i] * k[(i, 0)]).sum();
        worst = worst.max((s - exact).abs());
    }
    out.push(CertificationReport::at_most("surrogate_score", json!({"d_prime": dp, "delta": delta}), delta / 4.0, worst, n, cfg.seed));

    let mut rng = cfg.rng("lemma33/softmax");
    let (mut plain, mut weighted) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let d = 2 + rng.below(31);
        let spread = rng.uniform(0.1, 20.0);
        let theta: Vec<f64> = (0..d).map(|_| rng.uniform(-spread, spread)).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.unit()).collect();
        let g = softmax_hardmax_gap(&theta);
        if g.margin > 0.0 {
            plain = plain.max(g.gap / g.bound);
        }
        let w = weighted_softmax_gap(&theta, &x)?;
        if w.margin > 0.0 {
            weighted = weighted.max(w.gap / w.bound);
        }
    }
    out.push(CertificationReport::at_most("softmax_hardmax_gap", json!({"ratio": "gap / 2d e^-delta"}), 1.0, plain, n, cfg.seed));
    out.push(CertificationReport::at_most("weighted_softmax_gap", json!({"ratio": "gap / 2d^2 e^-delta"}), 1.0, weighted, n, cfg.seed));
    Ok(out)
}

/// Gaussian low-rank accuracy and term count, and the positional delta
/// filter with its convolution-channel realization.
pub fn lowrank_suite(cfg: &SuiteConfig) -> Result<Vec<CertificationReport>> {
    let mut out = Vec::new();
    let eps = 0.01;
    let n = cfg.trials(512);
    for kappa in [10.0, 100.0] {
        let glr = gaussian_lowrank_build(kappa, eps)?;
        let mut rng = cfg.rng(&format!("lowrank/{kappa}"));
        let mut worst = 0.0f64;
        for _ in 0..n {
            let (t, x) = (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            worst = worst.max((glr.eval(t, x) - glr.exact(t, x)).abs());
        }
        out.push(CertificationReport::at_most("gaussian_lowrank", json!({"kappa": kappa, "eps": eps}), 3.0 * eps, worst, n, cfg.seed));
    }
    let terms = term_count_for(eps);
    out.push(CertificationReport::holds("gaussian_lowrank_term_count", json!({"eps": eps, "N": terms, "expected": 32}), terms == 32, 1, cfg.seed));

    let (window, eps) = (256, 0.01);
    let mut target_ok = true;
    let mut off = 0.0f64;
    let mut realized = 0.0f64;
    let mut rng = cfg.rng("lowrank/delta");
    let targets: Vec<usize> = [0, window / 2, window].into_iter().chain((0..3).map(|_| rng.below(window + 1))).collect();
    for &j_star in &targets {
        let pd = positional_delta_filter(j_star, window, eps)?;
        target_ok &= pd.taps[j_star] == 1.0;
        for (j, v) in pd.taps.iter().enumerate() {
            if j != j_star {
                off = off.max(*v);
            }
        }
        let glr = gaussian_lowrank_build(pd.kappa, eps)?;
        let layer = realize_as_conv_channels(&glr, j_star, window)?.into_conv_layer();
        let h = materialize_filter(&layer);
        for (j, v) in pd.taps.iter().enumerate() {
            let sum: f64 = (0..h.d()).map(|k| h.tap(k, j)).sum();
            realized = realized.max((sum - v).abs());
        }
    }
    let params = json!({"U": window, "eps": eps, "targets": targets});
    out.push(CertificationReport::holds("positional_delta_target_tap", params.clone(), target_ok, targets.len(), cfg.seed));
    out.push(CertificationReport::at_most("positional_delta_off_target", params.clone(), eps, off, targets.len(), cfg.seed));
    out.push(CertificationReport::at_most("positional_delta_realization", params, 3.0 * eps, realized, targets.len(), cfg.seed));
    Ok(out)
}

pub fn jl_suite(cfg: &SuiteConfig) -> Result<Vec<CertificationReport>> {
    let points: Vec<Vec<f64>> = (0..32)
        .map(|i| {
            let mut p = vec![0.0; 32];
            p[i] = 1.0;
            p
        })
        .collect();
    let mut rng = cfg.rng("jl");
    let params = |extra: serde_json::Value| json!({"n": 32, "m": 1, "k": 256, "max_attempts": 64, "result": extra});
    Ok(match jl_build(&points, 1, 256, &mut rng, 64) {
        Ok(jl) => {
            let recheck = jl.recheck(&points);
            vec![
                CertificationReport::at_most("jl_distortion", params(json!({"attempts_used": jl.attempts_used})), 0.125, jl.distortion, jl.attempts_used, cfg.seed),
                CertificationReport::holds("jl_recheck", params(json!({"recheck": recheck})), recheck == jl.distortion, 1, cfg.seed),
            ]
        }
        Err(Error::CertificationFailed { best, attempts, .. }) => {
            vec![CertificationReport::at_most("jl_distortion", params(json!({"failed": true})), 0.125, best, attempts, cfg.seed)]
        }
        Err(e) => return Err(e),
    })
}

fn solver_err(solver: &TaskSolver, n: usize, rng: &RngStream, generate: impl Fn(&mut RngStream) -> Result<TaskSample> + Sync) -> Result<crate::tasks::ErrEstimate> {
    eval_err_v(n, rng, generate, |s| solver.solve(&s.input).unwrap_or_default())
}

/// Largest gap between the network realization and the exact evaluator,
/// over every prefix of the teacher-forced samples.
fn network_gap(solver: &mut TaskSolver, samples: &[TaskSample]) -> Result<f64> {
    if solver.network.is_none() {
        solver.realize_network()?;
    }
    let solver = &*solver;
    let net = solver.network.as_ref().expect("realized");
    let n_words = solver.vocab.len();
    let gaps: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| {
            let mut seq = s.input.clone();
            let mut worst = 0.0f64;
            for w in s.target_ids().iter().copied().chain(std::iter::once(usize::MAX)) {
                let exact = solver.output_vector(&seq)?;
                let got = net.forward_last(&SequenceTensor::one_hot(&seq, n_words)?)?;
                worst = exact.iter().zip(&got).fold(worst, |m, (a, b)| m.max((a - b).abs()));
                if w == usize::MAX || seq.len() >= solver.t_max {
                    break;
                }
                seq.push(w);
            }
            Ok(worst)
        })
        .collect();
    gaps.into_iter().try_fold(0.0f64, |m, g| g.map(|g| m.max(g)))
}

/// Monte-Carlo error of the four constructed solvers at acceptance scale,
/// and network/evaluator agreement on small instances.
pub fn solvers_suite(cfg: &SuiteConfig) -> Result<Vec<CertificationReport>> {
    let mut out = Vec::new();

    let (v, eps) = (16, 0.05);
    let vocab = Vocab::copy_task(18);
    let solver = build_task_solver(SolverKind::Copy, &vocab, v, eps, &mut cfg.rng("solvers/copy/build"))?;
    let n = cfg.trials(2000);
    let start = Instant::now();
    let est = solver_err(&solver, n, &cfg.rng("solvers/copy/eval"), |r| gen_copy(v, &vocab, r))?;
    let params = json!({"V": v, "vocab": vocab.len(), "eps": eps, "m": solver.ngram_m, "k": solver.jl.k, "seconds": start.elapsed().as_secs_f64(), "errors": est.errors});
    out.push(CertificationReport::at_most("copy_solver_err", params.clone(), eps, est.estimate, n, cfg.seed));
    out.push(CertificationReport::at_most("copy_solver_wilson_upper", params, 0.07, est.upper, n, cfg.seed));

    let v = 16;
    let vocab = Vocab::recall_task(v, v);
    let solver = build_task_solver(SolverKind::AssocRecall, &vocab, v, 0.05, &mut cfg.rng("solvers/recall/build"))?;
    let est = solver_err(&solver, n, &cfg.rng("solvers/recall/eval"), |r| gen_assoc_recall(v, &vocab, r))?;
    out.push(CertificationReport::at_most("assoc_recall_solver_errors", json!({"V": v, "vocab": vocab.len()}), 0.0, est.errors as f64, n, cfg.seed));

    let v = 16;
    let vocab = Vocab::plain(16);
    let solver = build_task_solver(SolverKind::InductionHead, &vocab, v, 0.05, &mut cfg.rng("solvers/induction/build"))?;
    let est = solver_err(&solver, n, &cfg.rng("solvers/induction/eval"), |r| gen_induction_head(v, &vocab, r))?;
    out.push(CertificationReport::at_most("induction_head_solver_errors", json!({"V": v, "vocab": vocab.len()}), 0.0, est.errors as f64, n, cfg.seed));

    let (v, eps, alpha) = (32, 0.1, cfg.alpha);
    let words = match cfg.vocab_size {
        Some(w) => w,
        None => selective_copy_plan(v, alpha, eps, 0, SELECTIVE_COPY_C1)?.vocab_threshold,
    };
    let vocab = Vocab::selective_copy_task(words);
    let solver = build_selective_copy_solver(&vocab, v, alpha, eps, SELECTIVE_COPY_C1, &mut cfg.rng("solvers/selective/build"))?;
    let n_sel = cfg.trials(1000);
    let est = solver_err(&solver, n_sel, &cfg.rng("solvers/selective/eval"), |r| gen_selective_copy(v, &vocab, alpha, r))?;
    let plan = solver.plan.clone().expect("selective copy plan");
    out.push(CertificationReport::at_least(
        "selective_copy_solver_success",
        json!({"V": v, "alpha": alpha, "eps": eps, "regular_words": words, "vocab_threshold": plan.vocab_threshold, "warnings": solver.warnings}),
        1.0 - eps,
        1.0 - est.estimate,
        n_sel,
        cfg.seed,
    ));

    // Network realizations at worked-example scale.
    let n_net = cfg.trials(20).min(50);
    let small: Vec<(SolverKind, Vocab, usize, f64)> = vec![
        (SolverKind::Copy, Vocab::copy_task(5), 4, 0.1),
        (SolverKind::AssocRecall, Vocab::recall_task(4, 4), 4, 0.05),
        (SolverKind::InductionHead, Vocab::plain(6), 6, 0.05),
        (SolverKind::SelectiveCopy, Vocab::selective_copy_task(4), 6, 0.1),
    ];
    for (kind, vocab, v, eps) in small {
        let name = kind.task().name();
        let mut solver = build_task_solver(kind, &vocab, v, eps, &mut cfg.rng(&format!("solvers/net/{name}")))?;
        let gen_rng = cfg.rng(&format!("solvers/net/{name}/samples"));
        let samples: Vec<TaskSample> = (0..n_net as u64)
            .map(|i| {
                let mut r = gen_rng.child(i);
                match kind {
                    SolverKind::Copy => gen_copy(v, &vocab, &mut r),
                    SolverKind::AssocRecall => gen_assoc_recall(v, &vocab, &mut r),
                    SolverKind::InductionHead => gen_induction_head(v, &vocab, &mut r),
                    SolverKind::SelectiveCopy => gen_selective_copy(v, &vocab, 0.3, &mut r),
                }
            })
            .collect::<Result<_>>()?;
        let gap = network_gap(&mut solver, &samples)?;
        out.push(CertificationReport::at_most(
            format!("network_agreement/{name}"),
            json!({"V": v, "vocab": vocab.len(), "eps": eps, "channels": solver.network_channels()}),
            eps / 4.0,
            gap,
            n_net,
            cfg.seed,
        ));
    }
    Ok(out)
}

/// Importances in [−1, 0] whose top `r_max + 1` sorted values are separated
/// by at least `c·i^{−β}`, shuffled over `v + 1` positions.
pub fn separated_importances(rng: &mut RngStream, v: usize, r_max: usize, c: f64, beta: f64) -> Vec<f64> {
    let mut mu = Vec::with_capacity(v + 1);
    let mut level = -rng.uniform(0.0, 0.1);
    for i in 1..=v + 1 {
        mu.push(level.max(-1.0));
        let gap = if i <= r_max { c * (i as f64).powf(-beta) * rng.uniform(1.0, 1.2) } else { rng.uniform(0.0, 0.01) };
        level -= gap;
    }
    rng.shuffle(&mut mu);
    mu
}

pub fn exclusion_suite(cfg: &SuiteConfig) -> Result<Vec<CertificationReport>> {
    let (v, r_max, c, beta) = (64, 4, 0.1, 1.0);
    let chi = exclusion_temperature(20, v, r_max, c, beta);
    let n = cfg.trials(1000);
    let base = cfg.rng("exclusion");
    let hits: Vec<Result<bool>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.child(i);
            let mu = separated_importances(&mut rng, v, r_max, c, beta);
            let x = SequenceTensor::from_fn(2, v + 1, |_, _| rng.unit());
            let res = exclusion_select(&x, &mu, r_max, chi, c, beta)?;
            let mut order: Vec<usize> = (0..=v).collect();
            order.sort_by(|a, b| mu[*b].total_cmp(&mu[*a]));
            Ok(res.indices == order[..r_max])
        })
        .collect();
    let agree = hits.into_iter().collect::<Result<Vec<bool>>>()?.into_iter().filter(|h| *h).count();
    Ok(vec![CertificationReport::at_least(
        "exclusion_select_agreement",
        json!({"V": v, "r_max": r_max, "c": c, "beta": beta, "chi": chi}),
        0.99,
        agree as f64 / n as f64,
        n,
        cfg.seed,
    )])
}

pub fn gradcheck_suite(cfg: &SuiteConfig) -> Result<Vec<CertificationReport>> {
    let (words, d, t, h) = (6, 8, 16, 1e-5);
    let coords = cfg.trials(300).max(200);
    let mut rng = cfg.rng("gradcheck");
    let batch: Vec<Example> = (0..2)
        .map(|_| {
            let ids: Vec<usize> = (0..t).map(|_| rng.below(words)).collect();
            Example {
                input: SequenceTensor::one_hot(&ids, words).expect("ids in range"),
                targets: (0..t).map(|p| (p, LossTarget::Class(rng.below(words)))).collect(),
            }
        })
        .collect();
    let mut net = init_ssm(&SsmInit { n_in: words, hidden: d, blocks: 2, fnn_width: 2 * d, window: t - 1, n_out: Some(words) }, &mut rng)?;
    net.clip_bound = Some(50.0);
    let ssm = grad_check(&net, &batch, LossKind::CrossEntropy, h, coords, &mut rng)?;
    let att_model = AttentionBaseline::init(words, d, 2, 2 * d, t, words, &mut rng)?;
    let att = grad_check(&att_model, &batch, LossKind::CrossEntropy, h, coords, &mut rng)?;
    let report = |name: &str, r: &crate::training::GradCheckReport| {
        CertificationReport::at_most(
            name,
            json!({"D": d, "T": t, "h": h, "checked": r.checked, "excluded": r.excluded, "worst": r.worst_param}),
            1e-4,
            r.max_rel_error,
            r.checked,
            cfg.seed,
        )
    };
    Ok(vec![report("gradcheck_ssm_m2", &ssm), report("gradcheck_attention", &att)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in std::iter::once(Suite::All).chain(Suite::EACH) {
            assert_eq!(Suite::parse(s.name()).unwrap(), s);
        }
        assert!(Suite::parse("everything").is_err());
    }

    #[test]
    fn undersized_temperature_fails_the_selection_check() {
        let cfg = SuiteConfig { eps: 1e-12, kappa_eps: Some(1e-3), trials: Some(20), ..SuiteConfig::default() };
        let reports = lemma33_suite(&cfg).unwrap();
        let cert = reports.iter().find(|r| r.construct == "kernel_select_certificate").unwrap();
        assert!(!cert.pass);
        let ok = lemma33_suite(&SuiteConfig { trials: Some(20), ..SuiteConfig::default() }).unwrap();
        assert!(ok.iter().all(|r| r.pass));
    }

    #[test]
    fn separated_importances_respect_gaps() {
        let mut rng = RngStream::new(3, 0);
        let mut mu = separated_importances(&mut rng, 20, 4, 0.1, 1.0);
        assert!(mu.iter().all(|m| (-1.0..=0.0).contains(m)));
        mu.sort_by(|a, b| b.total_cmp(a));
        for i in 1..=4 {
            assert!(mu[i - 1] - mu[i] >= 0.1 / i as f64);
        }
    }
}
