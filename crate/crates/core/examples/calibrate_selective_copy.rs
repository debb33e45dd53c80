//! Brute-force calibration of the selective-copy constant `c1`.
//!
//! For each candidate `c1` the plan fixes the common-word count `K`, the
//! window length and the vocabulary threshold. Sequences are then drawn at
//! that vocabulary and we count how often two windows at distinct offsets share
//! at least `K` matching regular-word pairs, the event the Poisson model
//! bounds. A second table scans the vocabulary at the shipped constant and
//! sets the simulated rate beside the bound, which shows how much slack the
//! threshold carries.
//!
//! cargo run --release -p ssmsel --example calibrate_selective_copy -- [V] [alpha] [eps] [trials]

use ssmsel::constructions::{collision_bound, selective_copy_plan, SELECTIVE_COPY_C1};
use ssmsel::tasks::{gen_selective_copy, Vocab};
use ssmsel::RngStream;

/// Equal regular-word pairs between windows starting at `i` and `j`,
/// excluding a token matched with itself where the windows overlap.
fn shared_pairs(body: &[usize], i: usize, j: usize, window: usize, pad: usize) -> usize {
    let mut n = 0;
    for p in i..i + window {
        if body[p] == pad {
            continue;
        }
        n += (j..j + window).filter(|&q| q != p && body[q] == body[p]).count();
    }
    n
}

fn collides(body: &[usize], window: usize, common: usize, pad: usize) -> bool {
    let window = window.min(body.len());
    let starts = body.len() - window + 1;
    (0..starts).any(|i| (i + 1..starts).any(|j| shared_pairs(body, i, j, window, pad) >= common))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let v = arg(0, 32.0) as usize;
    let alpha = arg(1, 0.3);
    let eps = arg(2, 0.1);
    let trials = arg(3, 2000.0) as usize;

    println!("V={v} alpha={alpha} eps={eps} trials={trials} (shipped c1 = {SELECTIVE_COPY_C1})");
    println!("{:>6} {:>4} {:>7} {:>7} {:>10} {:>10}", "c1", "K", "window", "words", "simulated", "eps/2");
    let simulate = |words: usize, window: usize, common: usize| {
        let vocab = Vocab::selective_copy_task(words);
        let pad = vocab.specials.pad.expect("pad token");
        let root = RngStream::named(0, "calibrate");
        let hits = (0..trials as u64)
            .filter(|&i| {
                let s = gen_selective_copy(v, &vocab, alpha, &mut root.child(i)).expect("sample");
                collides(&s.input[1..s.input.len() - 1], window, common, pad)
            })
            .count();
        hits as f64 / trials as f64
    };
    let mut chosen = None;
    for step in 0..=16 {
        let c1 = 0.5 + 0.05 * step as f64;
        let plan = selective_copy_plan(v, alpha, eps, 0, c1).expect("valid plan");
        let rate = simulate(plan.vocab_threshold, plan.window, plan.common);
        let ok = rate <= eps / 2.0;
        if ok && chosen.is_none() {
            chosen = Some(c1);
        }
        println!("{c1:>6.2} {:>4} {:>7} {:>7} {rate:>10.4} {:>10.4}{}", plan.common, plan.window, plan.vocab_threshold, eps / 2.0, if ok { "" } else { "  x" });
    }
    match chosen {
        Some(c1) => println!("smallest passing c1 on the grid: {c1:.2}"),
        None => println!("no grid value passes"),
    }

    let plan = selective_copy_plan(v, alpha, eps, 0, SELECTIVE_COPY_C1).expect("valid plan");
    println!();
    println!("vocabulary scan at c1 = {SELECTIVE_COPY_C1} (K = {}, window = {})", plan.common, plan.window);
    println!("{:>7} {:>10} {:>12}", "words", "simulated", "poisson");
    let mut words = plan.vocab_threshold;
    while words >= 4 {
        let rate = simulate(words, plan.window, plan.common);
        let bound = collision_bound(v, plan.window, alpha, plan.common, words);
        println!("{words:>7} {rate:>10.4} {bound:>12.4e}");
        words /= 4;
    }
}
