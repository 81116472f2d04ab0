//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p advcover-cli --test acceptance`.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use advcover::attack::{AttackConfig, BallSpec};
use advcover::bounds::{
    b_tilde, bound_report, dudley_closed_form_inverse_square, dudley_value, linear_sandwich, main_bound, BoundInputs,
    NormProfile, SmoothEntropy,
};
use advcover::covers::{adversarial_cover_bound, maurey_cover_params, uniform_cover_verify, CoverProfile, CoverVerifyConfig, UniformCoverSpec};
use advcover::data::{Dataset, Sample};
use advcover::linalg::{norm2, Exponent};
use advcover::network::{ActivationKind, LossSpec, Network};
use advcover::rademacher::{mc_adversarial_rc, mc_standard_rc, HypothesisClass};
use advcover::rng::StreamKey;
use advcover::trainer::{adversarial_train, make_dataset, robust_risk_eval, DatasetKind, DatasetSpec, EvalAttack, TrainConfig, TrainObjective};
use advcover::verify::{cover_distance_pipeline, intermediate_example_suite, layer_recursion_suite, random_pair, CoverBuildConfig, LemmaSuiteConfig};
use anyhow::{ensure, Result};
use num_rational::BigRational;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Result<Verdict>) -> Result<Verdict> {
    let start = Instant::now();
    let mut v = f()?;
    let took = start.elapsed();
    v.detail = format!("{}; {:.1}s", v.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took > limit {
            v.pass = false;
            v.detail = format!("{} (limit {}s)", v.detail, limit.as_secs());
        }
    }
    Ok(v)
}

fn ac1() -> Result<Verdict> {
    timed(Some(Duration::from_secs(60)), || {
        let mut worst_rate: f64 = 1.0;
        let mut all_ok = true;
        let mut notes = Vec::new();
        for eps in [0.5, 0.25] {
            for d in 1..=3 {
                for m in 1..=3 {
                    let spec = UniformCoverSpec::new(1.0, 1.0, eps, d, m)?;
                    let seed = StreamKey::new(1).derive("ac1", (d * 10 + m) as u64).derive("eps", eps.to_bits()).seed();
                    let r = uniform_cover_verify(&spec, &CoverVerifyConfig::new(1000, 64, seed))?;
                    worst_rate = worst_rate.min(r.success_rate);
                    let ok = r.success_rate >= 0.99 && r.expectation_check_passed;
                    if !ok {
                        notes.push(format!("eps={eps} d={d} m={m}: rate {} expect {}", r.success_rate, r.expectation_check_passed));
                    }
                    all_ok &= ok;
                }
            }
        }
        verdict(all_ok, format!("18 specs x 1000 samples, worst success rate {worst_rate:.3}{}", if notes.is_empty() { String::new() } else { format!(" [{}]", notes.join(", ")) }))
    })
}

fn ac2() -> Result<Verdict> {
    timed(None, || {
        let mut s = StreamKey::new(2).derive("ac2", 0).stream();
        let mut mismatches = 0;
        for _ in 0..50 {
            let a = s.next_uniform_in(0.05, 5.0);
            let b = s.next_uniform_in(0.05, 5.0);
            let eps = s.next_uniform_in(0.05, 2.0);
            let d = 1 + s.next_below(8);
            let m = 1 + s.next_below(8);
            let p = maurey_cover_params(&UniformCoverSpec::new(a, b, eps, d, m)?)?;
            let q = |v: f64| BigRational::from_float(v).expect("finite");
            let ratio = q(a) * q(b) / q(eps);
            let want = (ratio.clone() * ratio).ceil();
            ensure!(p.k < 1 << 53, "k out of range");
            let exact_k = want == q(p.k as f64);
            let exact_ln = p.ln_cardinality_bound == p.k as f64 * (2.0 * d as f64 * m as f64).ln();
            if !(exact_k && exact_ln) {
                mismatches += 1;
            }
        }
        verdict(mismatches == 0, format!("50 random specs, {mismatches} mismatches against exact rational ceiling"))
    })
}

fn ac3() -> Result<Verdict> {
    timed(Some(Duration::from_secs(600)), || {
        let r = intermediate_example_suite(&LemmaSuiteConfig::new(500, 3))?;
        verdict(
            r.passed && r.samples == 500,
            format!("{} pairs, {} violations, max excess {:.3e}, max slack allowance {:.3e}", r.samples, r.violations, r.max_excess, r.slack_allowance),
        )
    })
}

fn ac4() -> Result<Verdict> {
    timed(None, || {
        let r = layer_recursion_suite(&LemmaSuiteConfig::new(500, 4))?;
        verdict(r.passed, format!("500 pairs x 20 points, {} inequalities, {} violations, max excess {:.3e}", r.samples, r.violations, r.max_excess))
    })
}

fn uniform_points(n: usize, d: usize, classes: usize, key: StreamKey) -> Result<Dataset> {
    let mut s = key.stream();
    let samples = (0..n)
        .map(|_| Sample {
            x: (0..d).map(|_| s.next_uniform_in(-1.0, 1.0)).collect(),
            y: s.next_below(classes),
        })
        .collect();
    Ok(Dataset::new(samples)?)
}

fn ac5() -> Result<Verdict> {
    timed(None, || {
        let suite = LemmaSuiteConfig::new(10, 5);
        let loss = LossSpec::ramp(1.0)?;
        let (mut ok, mut worst_ratio, mut nets) = (true, 0.0f64, 0);
        let mut notes = Vec::new();
        for t in 0..10 {
            let (net, _) = random_pair(&suite, t)?;
            let data = uniform_points(8, 2, 3, StreamKey::new(5).child("points", t))?;
            let cfg = CoverBuildConfig {
                eps: 0.5,
                restarts: 8,
                rounds: 4,
                resolution: 41,
                seed: StreamKey::new(5).derive("cover", t as u64).seed(),
            };
            let p = cover_distance_pipeline(&net, &data, suite.ball, &loss, &cfg)?;
            nets += 1;
            if !p.check.report.passed {
                ok = false;
                notes.push(format!("net {t}: failed layer {:?}", p.check.failed_layer));
            }
            worst_ratio = worst_ratio.max(p.check.lhs / (p.check.rhs + p.check.allowance));
        }
        verdict(
            ok,
            format!("{nets} nets x 8 points, max lhs/(rhs+slack) {worst_ratio:.3}{}", if notes.is_empty() { String::new() } else { format!(" [{}]", notes.join(", ")) }),
        )
    })
}

fn unit_ball_data(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    let mut s = StreamKey::new(seed).stream();
    let samples = (0..n)
        .map(|_| {
            let x = s.gaussian_vec(d);
            let norm = norm2(&x);
            Sample {
                x: x.iter().map(|v| v / norm.max(1.0)).collect(),
                y: s.next_below(2),
            }
        })
        .collect();
    Ok(Dataset::new(samples)?)
}

fn ac6() -> Result<Verdict> {
    timed(None, || {
        let (mut ok, mut cases) = (true, Vec::new());
        for d in [2, 5] {
            for p in [Exponent::TWO, Exponent::INF] {
                for eps in [0.1, 0.3] {
                    let data = unit_ball_data(64, d, 60 + d as u64)?;
                    let class = HypothesisClass::linear(Exponent::TWO, 1.0).with_attack(BallSpec::new(p, eps)?, AttackConfig::default_for(eps, 6));
                    let std = mc_standard_rc(&class, &data, 400, 6)?;
                    let adv = mc_adversarial_rc(&class, &data, 400, 6)?;
                    let s = linear_sandwich(1.0, eps, p, Exponent::TWO, d, 64, std.mean);
                    let inside = adv.mean >= s.lower - 3.0 * adv.stderr && adv.mean <= s.upper + 3.0 * adv.stderr;
                    if !inside {
                        cases.push(format!("d={d} p={p:?} eps={eps}: {} not in [{}, {}]", adv.mean, s.lower, s.upper));
                    }
                    ok &= inside;
                }
                let zero = HypothesisClass::linear(Exponent::TWO, 1.0).with_attack(BallSpec::new(p, 0.0)?, AttackConfig::default_for(0.0, 6));
                let data = unit_ball_data(64, d, 70 + d as u64)?;
                let a = mc_adversarial_rc(&zero, &data, 400, 7)?;
                let b = mc_standard_rc(&zero, &data, 400, 7)?;
                let bitwise = a.per_trial.iter().map(|v| v.to_bits()).eq(b.per_trial.iter().map(|v| v.to_bits()))
                    && a.mean.to_bits() == b.mean.to_bits()
                    && a.stderr.to_bits() == b.stderr.to_bits();
                if !bitwise {
                    cases.push(format!("d={d} p={p:?}: eps=0 not bitwise equal"));
                }
                ok &= bitwise;
            }
        }
        verdict(ok, format!("8 sandwich cases + 4 zero-radius cases{}", if cases.is_empty() { String::new() } else { format!(" [{}]", cases.join("; ")) }))
    })
}

fn ac7() -> Result<Verdict> {
    timed(None, || {
        let mut worst: f64 = 0.0;
        for r in [0.1, 1.0, 10.0] {
            for n in [64, 1024] {
                let numeric = dudley_value(&SmoothEntropy(|e: f64| r / (e * e)), n)?.value;
                let exact = dudley_closed_form_inverse_square(r, n);
                worst = worst.max((numeric - exact).abs() / exact);
            }
        }
        verdict(worst <= 1e-6, format!("6 cases, worst relative error {worst:.2e}"))
    })
}

fn ac8() -> Result<Verdict> {
    timed(None, || {
        let eps = 0.25;
        let dims = [1usize, 2, 3, 5, 8];
        let mut count = 0;
        let mut worst_excess = f64::NEG_INFINITY;
        let mut tightest: f64 = 0.0;
        for p in [Exponent::TWO, Exponent::INF] {
            for &d in &dims {
                let bt = b_tilde(1.0, eps, p, d);
                let mut s = StreamKey::new(8).derive("dim", d as u64).derive("inf", p.is_infinite() as u64).stream();
                for j in 0..2000 {
                    // j = 0: x along the all-ones diagonal, where the ℓ∞ corner is tight
                    let mut x = if j == 0 { vec![1.0; d] } else { s.gaussian_vec(d) };
                    let nx = norm2(&x);
                    x.iter_mut().for_each(|v| *v /= nx);
                    let delta: Vec<f64> = match (p.is_infinite(), j % 2 == 0) {
                        (true, true) => x.iter().map(|v| eps * if *v >= 0.0 { 1.0 } else { -1.0 }).collect(),
                        (true, false) => (0..d).map(|_| if s.next_below(2) == 0 { eps } else { -eps }).collect(),
                        (false, true) => x.iter().map(|v| eps * v).collect(),
                        (false, false) => {
                            let g = s.gaussian_vec(d);
                            let ng = norm2(&g);
                            g.iter().map(|v| eps * v / ng).collect()
                        }
                    };
                    let xp: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
                    let measured = norm2(&xp);
                    worst_excess = worst_excess.max(measured - bt);
                    tightest = tightest.max(measured / bt);
                    count += 1;
                }
            }
        }
        verdict(
            worst_excess <= 1e-12 && count == 20_000,
            format!("{count} perturbations (10^4 per p), max ||x'|| - b_tilde = {worst_excess:.2e}, max ratio {tightest:.12}"),
        )
    })
}

fn random_profile(s: &mut advcover::rng::Stream, equal_widths: bool) -> CoverProfile {
    let l = 1 + s.next_below(3);
    let m = 2 + s.next_below(5);
    let widths: Vec<usize> = (0..=l).map(|_| if equal_widths { m } else { 1 + s.next_below(8) }).collect();
    let spec: Vec<f64> = (0..l).map(|_| s.next_uniform_in(0.3, 3.0)).collect();
    CoverProfile {
        a: spec.iter().map(|v| v * s.next_uniform_in(1.0, 4.0)).collect(),
        s: spec,
        rho: (0..l).map(|_| if s.next_below(2) == 0 { 1.0 } else { s.next_uniform_in(0.5, 2.0) }).collect(),
        widths,
        loss_rho: s.next_uniform_in(0.5, 4.0),
    }
}

fn norm_profile(c: &CoverProfile) -> NormProfile {
    let net = Network::random(&c.widths, &vec![ActivationKind::Identity; c.s.len()], 1.0, StreamKey::new(9)).expect("valid widths");
    let mut p = NormProfile::from_network(&net, &LossSpec::ramp(2.0 / c.loss_rho).expect("positive")).expect("profile");
    p.spectral = c.s.clone();
    p.l1 = c.a.clone();
    p.rho = c.rho.clone();
    p
}

fn ac9() -> Result<Verdict> {
    timed(None, || {
        let mut s = StreamKey::new(9).derive("ac9", 0).stream();
        let mut problems = Vec::new();
        let mut printed_below = 0;
        let grid: Vec<f64> = (0..20).map(|i| 0.5 * 4f64.powf(i as f64 / 19.0)).collect();
        for t in 0..20 {
            let prof = random_profile(&mut s, true);
            let data_norm = s.next_uniform_in(0.5, 5.0);
            let eps = s.next_uniform_in(0.05, 1.0);
            let c = adversarial_cover_bound(&prof, data_norm, eps)?;
            let tol = 1e-9 * c.closed_form;
            if (c.unceiled - c.closed_form).abs() > tol || c.assembled < c.closed_form - tol || c.assembled > c.closed_form + c.ceiling_slack + tol {
                problems.push(format!("profile {t}: assembled {} vs closed form {} (slack {})", c.assembled, c.closed_form, c.ceiling_slack));
            }
            printed_below += c.printed_below_assembled as usize;
            let uneq = random_profile(&mut s, false);
            let cu = adversarial_cover_bound(&uneq, data_norm, eps)?;
            if cu.unceiled > cu.closed_form * (1.0 + 1e-12) {
                problems.push(format!("profile {t} (unequal widths): unceiled above closed form"));
            }

            // sweeps: each list is evaluated along the increasing grid
            let assembled = |p: &CoverProfile, b: f64, e: f64| adversarial_cover_bound(p, b, e).map(|c| c.assembled);
            let main = |p: &CoverProfile, bt: f64| main_bound(&norm_profile(p), bt, 256, 0.05).map(|m| m.value);
            let mut sweeps: Vec<(String, bool, Vec<f64>)> = Vec::new();
            sweeps.push(("eps".into(), false, grid.iter().map(|g| assembled(&prof, data_norm, eps * g)).collect::<Result<_, _>>()?));
            sweeps.push(("b_tilde".into(), true, grid.iter().map(|g| assembled(&prof, data_norm * g, eps)).collect::<Result<_, _>>()?));
            sweeps.push(("b_tilde (main)".into(), true, grid.iter().map(|g| main(&prof, 0.5 * g)).collect::<Result<_, _>>()?));
            for i in 0..prof.s.len() {
                let with = |f: &dyn Fn(&mut CoverProfile, f64), g: f64| {
                    let mut q = prof.clone();
                    f(&mut q, g);
                    q
                };
                let ss = |q: &mut CoverProfile, g: f64| q.s[i] *= g;
                let aa = |q: &mut CoverProfile, g: f64| q.a[i] *= g;
                sweeps.push((format!("s_{i}"), true, grid.iter().map(|&g| assembled(&with(&ss, g), data_norm, eps)).collect::<Result<_, _>>()?));
                sweeps.push((format!("a_{i}"), true, grid.iter().map(|&g| assembled(&with(&aa, g), data_norm, eps)).collect::<Result<_, _>>()?));
                sweeps.push((format!("s_{i} (main)"), true, grid.iter().map(|&g| main(&with(&ss, g), 0.5)).collect::<Result<_, _>>()?));
                sweeps.push((format!("a_{i} (main)"), true, grid.iter().map(|&g| main(&with(&aa, g), 0.5)).collect::<Result<_, _>>()?));
            }
            for (name, increasing, vals) in sweeps {
                for w in vals.windows(2) {
                    let ok = if increasing { w[1] >= w[0] * (1.0 - 1e-12) } else { w[1] <= w[0] * (1.0 + 1e-12) };
                    if !ok {
                        problems.push(format!("profile {t}: {name} sweep goes the wrong way ({} -> {})", w[0], w[1]));
                        break;
                    }
                }
            }
        }
        problems.truncate(5);
        verdict(
            problems.is_empty(),
            format!(
                "20 equal-width + 20 unequal-width profiles, sweeps over eps, b_tilde, s_i, a_i; printed closed form below assembled sum on {printed_below}/20{}",
                if problems.is_empty() { String::new() } else { format!(" [{}]", problems.join("; ")) }
            ),
        )
    })
}

fn ac10() -> Result<Verdict> {
    timed(Some(Duration::from_secs(300)), || {
        let spec = DatasetSpec {
            kind: DatasetKind::GaussianBlobs { classes: 3, spread: 0.3 },
            d: 2,
            n_train: 200,
            n_test: 2000,
            b: 1.0,
            seed: 10,
        };
        let (train, test) = make_dataset(&spec)?;
        let ball = BallSpec::new(Exponent::INF, 0.1)?;
        let loss = LossSpec::ramp(1.0)?;
        let init = Network::random_symmetric(&[2, 8, 3], &[ActivationKind::Relu, ActivationKind::Identity], 1.0, StreamKey::new(10))?;
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 20,
            learning_rate: 0.1,
            objective: TrainObjective::CrossEntropy,
            attack: Some((ball, AttackConfig { steps: 10, step_size: 0.025, restarts: 1, seed: 11 })),
            attack_gamma: 1.0,
            seed: 12,
        };
        let net = adversarial_train(&init, &train, &cfg)?.net;
        let eval = EvalAttack::Pgd(AttackConfig::default_for(ball.eps, 13));
        let tr = robust_risk_eval(&net, &train, ball, eval, &loss)?;
        let te = robust_risk_eval(&net, &test, ball, eval, &loss)?;
        let gap = te.robust_risk - tr.robust_risk;
        let report = bound_report(
            &net,
            &loss,
            BoundInputs {
                b: train.max_norm(),
                n: train.len(),
                ball,
                delta: 0.05,
                c1: 1.0,
                c2: 1.0,
            },
        )?;
        let bound = report.main.value;
        verdict(
            gap <= bound,
            format!(
                "robust risk train {:.4} / test {:.4}, gap {gap:.4e} <= main bound {bound:.4}, gap/bound {:.3e}",
                tr.robust_risk,
                te.robust_risk,
                gap / bound
            ),
        )
    })
}

fn ac11() -> Result<Verdict> {
    timed(None, || {
        let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corrupted_inequality.json");
        let dir = tempfile::tempdir()?;
        let out = dir.path().join("report.json");
        let status = Command::new(env!("CARGO_BIN_EXE_advcover"))
            .args(["lemma-check", "--recorded"])
            .arg(&fixture)
            .arg("--out")
            .arg(&out)
            .output()?
            .status;
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out)?)?;
        verdict(
            status.code() == Some(1) && report["passed"] == false,
            format!("exit code {:?}, report passed = {}", status.code(), report["passed"]),
        )
    })
}

type Criterion = (&'static str, fn() -> Result<Verdict>);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("uniform cover suite", ac1),
        ("cover-count formula", ac2),
        ("intermediate adversarial example", ac3),
        ("layer recursion", ac4),
        ("end-to-end cover distance", ac5),
        ("linear ARC sandwich", ac6),
        ("Dudley numeric vs closed form", ac7),
        ("b_tilde formula", ac8),
        ("bound plumbing", ac9),
        ("gap sanity", ac10),
        ("negative control", ac11),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (pass, detail) = match f() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += !pass as usize;
        println!("AC{:<2} {} {name}: {detail}", i + 1, if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
