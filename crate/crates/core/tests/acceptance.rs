//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines are always shown; exits non-zero when a criterion
//! outside `KNOWN_FAILING` fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ssmsel::certify::{
    exclusion_suite, gradcheck_suite, jl_suite, lemma33_suite, lowrank_suite, numerics_suite, solvers_suite, ssm_suite,
    SuiteConfig,
};
use ssmsel::constructions::CertificationReport;
use ssmsel::tasks::{psi_basis_eval, TaskKind};
use ssmsel::training::{run_sweep, ModelKind, SweepGrid, TaskSpec, TrainConfig};

/// Trend replication on associative recall: the trained two-layer SSM stays
/// near chance at every width with the documented budget.
const KNOWN_FAILING: [usize; 1] = [16];

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn find<'a>(reports: &'a [CertificationReport], name: &str) -> &'a CertificationReport {
    reports.iter().find(|r| r.construct == name).unwrap_or_else(|| panic!("no check named {name}"))
}

fn all_pass(reports: &[&CertificationReport]) -> (bool, String) {
    let pass = reports.iter().all(|r| r.pass);
    let detail = reports.iter().map(|r| format!("{}={:.3e}/{:.3e}", r.construct, r.measured, r.bound)).collect::<Vec<_>>().join(" ");
    (pass, detail)
}

fn param_f64(r: &CertificationReport, key: &str) -> f64 {
    r.params[key].as_f64().unwrap_or(f64::NAN)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn trig_orthonormality() -> (bool, String) {
    let n = 4096;
    let mut worst = 0.0f64;
    for r in -4i64..=4 {
        for s in -4i64..=4 {
            let inner: f64 = (0..n).map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                psi_basis_eval(r, x) * psi_basis_eval(s, x)
            }).sum::<f64>() / n as f64;
            worst = worst.max((inner - if r == s { 1.0 } else { 0.0 }).abs());
        }
    }
    (worst <= 1e-6, format!("max |<psi_r,psi_s> - delta| = {worst:.3e} over |r|,|s| <= 4, {n}-point midpoint rule"))
}

fn recall_trend() -> (bool, String) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance_sweep.json");
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).expect("acceptance sweep config")).unwrap();
    let task: TaskSpec = serde_json::from_value(cfg["sweep"]["task"].clone()).unwrap();
    let train: TrainConfig = serde_json::from_value(cfg["sweep"]["train"].clone()).unwrap();
    let hidden = vec![2, 4, 8, 16];
    let grid = SweepGrid { models: vec![ModelKind::Ssm1, ModelKind::Ssm2], hidden: hidden.clone(), seeds: (0..5).collect() };
    let start = Instant::now();
    let res = run_sweep(&grid, &task, &train);
    let secs = start.elapsed().as_secs_f64();
    let mut by: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in &res.rows {
        by.entry((r.model.clone(), r.hidden)).or_default().push(r.final_metric);
    }
    let med = |m: &str, h: usize| median(by.get(&(m.to_string(), h)).cloned().unwrap_or_default());
    let ordered = hidden.iter().all(|&h| med("ssm2", h) >= med("ssm1", h));
    let top = med("ssm2", 16);
    let table = hidden.iter().map(|&h| format!("d{h}: {:.3}/{:.3}", med("ssm1", h), med("ssm2", h))).collect::<Vec<_>>().join(", ");
    let pass = ordered && top >= 0.95 && secs <= 600.0 && res.failures.is_empty();
    (pass, format!("median acc ssm1/ssm2 {table}; ssm2>=ssm1 everywhere: {ordered}; ssm2@16 = {top:.3} (need 0.95); {secs:.0} s"))
}

fn regression_rate() -> (bool, String) {
    let task = TaskSpec { kind: TaskKind::MaxRegression, v: 8, vocab_size: 16, alpha: None };
    let sizes = [256, 1024, 4096];
    let mut medians = Vec::new();
    for &n in &sizes {
        let train = TrainConfig { epochs: 10, n_train: n, n_eval: 500, ..TrainConfig::default() };
        let grid = SweepGrid { models: vec![ModelKind::Ssm2], hidden: vec![8], seeds: (0..3).collect() };
        let res = run_sweep(&grid, &task, &train);
        medians.push(median(res.rows.iter().map(|r| r.final_metric).collect()));
    }
    let pass = medians.windows(2).all(|w| w[1] <= w[0]) && medians.iter().all(|m| m.is_finite());
    let detail = sizes.iter().zip(&medians).map(|(n, m)| format!("n={n}: {m:.4e}")).collect::<Vec<_>>().join(", ");
    (pass, format!("median test MSE {detail}"))
}

fn main() {
    let cfg = SuiteConfig::default();
    let mut out: Vec<Outcome> = Vec::new();
    let mut push = |id, name, (pass, detail): (bool, String)| out.push(Outcome { id, name, pass, detail });

    let numerics = numerics_suite(&cfg).unwrap();
    let fft = find(&numerics, "fft_vs_naive");
    let secs = param_f64(fft, "fft_seconds");
    push(1, "FFT/naive convolution equivalence", (fft.pass && secs < 1.0, format!("max abs diff {:.3e}, {secs:.4} s", fft.measured)));

    let ssm = ssm_suite(&cfg).unwrap();
    push(2, "rotation SSM vs full-window convolution", all_pass(&[find(&ssm, "rotation_ssm_vs_conv")]));
    push(3, "windowed scan vs window-U convolution", all_pass(&[find(&ssm, "windowed_scan_vs_conv")]));

    let sel = lemma33_suite(&cfg).unwrap();
    let ks = find(&sel, "kernel_select");
    let secs = param_f64(ks, "seconds");
    let (pass, detail) = all_pass(&[find(&sel, "kernel_select_certificate"), ks]);
    push(4, "kernel selection certification", (pass && secs < 10.0, format!("{detail} in {secs:.3} s")));
    push(5, "surrogate score bound", all_pass(&[find(&sel, "surrogate_score")]));
    push(6, "softmax/hardmax bounds", all_pass(&[find(&sel, "softmax_hardmax_gap"), find(&sel, "weighted_softmax_gap")]));

    let low = lowrank_suite(&cfg).unwrap();
    let glr: Vec<&CertificationReport> = low.iter().filter(|r| r.construct.starts_with("gaussian_lowrank")).collect();
    push(7, "Gaussian low-rank approximation", all_pass(&glr));
    let delta: Vec<&CertificationReport> = low.iter().filter(|r| r.construct.starts_with("positional_delta")).collect();
    push(8, "positional delta filter", all_pass(&delta));

    let jl = jl_suite(&cfg).unwrap();
    push(9, "JL certification", all_pass(&jl.iter().collect::<Vec<_>>()));

    let solvers = solvers_suite(&cfg).unwrap();
    let copy = find(&solvers, "copy_solver_err");
    let secs = param_f64(copy, "seconds");
    let (pass, detail) = all_pass(&[copy, find(&solvers, "copy_solver_wilson_upper")]);
    push(10, "copy solver", (pass && secs < 120.0, format!("{detail}, eval {secs:.2} s")));
    push(11, "associative recall solver", all_pass(&[find(&solvers, "assoc_recall_solver_errors")]));
    push(12, "induction head solver", all_pass(&[find(&solvers, "induction_head_solver_errors")]));
    let net: Vec<&CertificationReport> = solvers.iter().filter(|r| r.construct.starts_with("network_agreement")).collect();
    let (net_pass, net_detail) = all_pass(&net);
    let (pass, detail) = all_pass(&[find(&solvers, "selective_copy_solver_success")]);
    push(13, "selective copy solver", (pass && net_pass, format!("{detail}; network agreement: {net_detail}")));

    push(14, "exclusion selector", all_pass(&exclusion_suite(&cfg).unwrap().iter().collect::<Vec<_>>()));

    let grad = gradcheck_suite(&cfg).unwrap();
    let excluded: Vec<String> = grad.iter().map(|r| format!("{} excluded {}", r.construct, r.params["excluded"])).collect();
    let (pass, detail) = all_pass(&grad.iter().collect::<Vec<_>>());
    push(15, "gradient check", (pass, format!("{detail}; {}", excluded.join(", "))));

    push(16, "associative recall trend replication", recall_trend());
    push(17, "trig basis orthonormality", trig_orthonormality());
    push(18, "max regression test MSE vs sample size", regression_rate());

    let bounds: Vec<&CertificationReport> =
        ["fnn_output_bound", "fnn_lipschitz_bound", "conv_output_bound"].iter().map(|n| find(&numerics, n)).collect();
    push(19, "FNN and convolution output/Lipschitz bounds", all_pass(&bounds));

    out.sort_by_key(|o| o.id);
    let mut unexpected = Vec::new();
    for o in &out {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_FAILING.contains(&o.id) { " (known)" } else { "" };
        println!("criterion {:>2} {tag}{note} {}: {}", o.id, o.name, o.detail);
        if !o.pass && !KNOWN_FAILING.contains(&o.id) {
            unexpected.push(o.id);
        }
    }
    let passed = out.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria pass", out.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
