//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion reports a PASS or FAIL line even when an earlier one fails.
//! Pass criterion names (`A4 A9`) as arguments to run a subset.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use batchsym::ids::GpuId;
use batchsym::metrics::analytic::{analytical_solution, Mode};
use batchsym::metrics::sweep::{sweep, Dimension, SweepRow};
use batchsym::metrics::{flat_top_check, goodput_search, scale_bench_table, GoodputConfig};
use batchsym::profile::LatencyProfile;
use batchsym::scheduler::PolicyKind;
use batchsym::sim::{bundled, run, run_with, Outcome, RunOptions, Scenario};
use batchsym::time::{Dur, Time};
use batchsym_partition::{exhaustive, exponential_instance, imbalance_factor, random_solver, solve, InstanceShape, SolveOptions};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn load(name: &str) -> Scenario {
    bundled::load(name).unwrap().unwrap()
}

fn goodput(s: &Scenario) -> f64 {
    goodput_search(s, &GoodputConfig::default()).unwrap().rate_rps
}

fn a1_analytic() -> Check {
    let cases = [
        ("ResNet50", 1.053, 5.072, 25.0, (7, 4501.0), (16, 5839.0)),
        ("InceptionResNetV2", 5.090, 18.368, 70.0, (3, 713.0), (8, 1083.0)),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, alpha, beta, slo, none, stag) in cases {
        let p = LatencyProfile::linear_ms(alpha, beta).unwrap();
        for (mode, (b, t)) in [(Mode::NoCoordination, none), (Mode::Staggered, stag)] {
            let s = analytical_solution(&p, Dur::from_ms(slo), 8, mode).unwrap();
            ok &= s.batch == b && (s.throughput_rps - t).abs() <= 1.0;
            detail.push(format!("{name} {}: b={} {:.1} r/s", mode.as_str(), s.batch, s.throughput_rps));
        }
    }
    ensure(ok, detail.join("; "))
}

fn a2_stagger() -> Check {
    let r = run(&load("fig6_stagger")).unwrap();
    let mut ok = r.drops.is_empty();
    for (k, o) in r.orders.iter().enumerate() {
        ok &= o.size() == 4 && o.start == Time::from_ms(2.25) + Dur::from_ms(3.0) * k as i64 && o.gpu == GpuId((k % 3) as u32);
    }
    ensure(ok, format!("{} batches, sizes {{4}}, starts 3 ms apart, {} drops", r.orders.len(), r.drops.len()))
}

fn a3_skip() -> Check {
    let deferred = run(&load("fig7_skip")).unwrap();
    let eager = run(&load("fig7_skip").with_policy_kind(PolicyKind::Eager)).unwrap();
    let skip_at = Time::from_ms(11.25);
    let post_skip: Vec<_> = eager.orders.iter().filter(|o| o.start >= skip_at).collect();
    let first_drop = eager.drops.first().map(|d| d.at);
    // Drops must start within the first ten batches after the skip and
    // keep recurring through the rest of the run.
    let early = match (first_drop, post_skip.get(9)) {
        (Some(d), Some(tenth)) => d <= tenth.start,
        _ => false,
    };
    let recurring = eager.drops.iter().filter(|d| d.at > Time::from_ms(60.0)).count() >= 10;
    let first: Vec<u64> = eager.drops.iter().flat_map(|d| d.requests.iter().map(|i| i.0)).take(3).collect();
    let soft = if first == [35, 37, 38] { "first drops R35 R37 R38" } else { "first drops differ from R35 R37 R38" };
    ensure(
        deferred.drops.is_empty() && early && recurring,
        format!("deferred drops {}; eager drops {} ({soft})", deferred.drops.len(), eager.drops.iter().map(|d| d.requests.len()).sum::<usize>()),
    )
}

fn pairs(rows: &[SweepRow]) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for d in rows.iter().filter(|r| r.policy == "deferred") {
        if let Some(e) = rows.iter().find(|r| r.policy == "eager" && r.value == d.value) {
            out.push((d.value, d.goodput_rps, e.goodput_rps));
        }
    }
    out
}

fn a4_beta_sweep() -> Check {
    let rows = sweep(&load("fig4a_beta_sweep"), Dimension::BetaRatio, &[1.0, 3.0, 7.0, 11.0, 15.0], None, &GoodputConfig::default()).unwrap();
    let ratios: Vec<(f64, f64)> = pairs(&rows).into_iter().map(|(v, d, e)| (v, d / e)).collect();
    let at = |v: f64| ratios.iter().find(|r| r.0 == v).unwrap().1;
    let ok = ratios.len() == 5 && ratios.iter().all(|r| r.1 >= 0.95) && (0.95..=1.05).contains(&at(1.0)) && at(15.0) >= 1.25 * at(1.0);
    ensure(ok, format!("deferred/eager {}", ratios.iter().map(|(v, r)| format!("{v}:{r:.3}")).collect::<Vec<_>>().join(" ")))
}

fn timeout_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn best_timeout(name: &str) -> (f64, String) {
    let rows = sweep(&load(name), Dimension::Timeout, &timeout_grid(), None, &GoodputConfig::default()).unwrap();
    let rel: Vec<(f64, f64)> = rows.iter().filter(|r| r.policy != "deferred").map(|r| (r.value, r.relative.unwrap_or(0.0))).collect();
    let best = rel.iter().map(|r| r.1).fold(0.0, f64::max);
    let deferred = rows.iter().find(|r| r.policy == "deferred").unwrap().goodput_rps;
    (best, format!("deferred {deferred:.0} r/s, timeout/deferred {}", rel.iter().map(|(v, r)| format!("{:.0}%:{r:.3}", v * 100.0)).collect::<Vec<_>>().join(" ")))
}

fn a5_timeout() -> Check {
    let (single, single_detail) = best_timeout("fig4b_timeout_sweep");
    let (mixed, mixed_detail) = best_timeout("fig4b_timeout_mixed");
    ensure(
        single >= 0.95 && mixed < 0.95,
        format!("single ResNet50: {single_detail} (best {single:.3}, need >= 0.95); 37-model zoo: {mixed_detail} (best {mixed:.3}, need < 0.95)"),
    )
}

fn a6_flattop() -> Check {
    let s = load("fig2_flattop");
    let p = goodput(&s);
    let mults = [0.25, 0.5, 0.75, 1.5, 2.0];
    let offered: Vec<f64> = mults.iter().map(|m| m * p).collect();
    let report = flat_top_check(&s, p, &offered, 0.10).unwrap();
    let mut ok = true;
    let mut detail = vec![format!("p = {p:.0} r/s")];
    for (m, pt) in mults.iter().zip(&report.points) {
        let good = pt.within && (*m < 1.0 || pt.goodput_rps >= 0.9 * p);
        ok &= good;
        detail.push(format!("{m}p: measured {:.3} expected {:.3} goodput {:.0}", pt.measured, pt.expected, pt.goodput_rps));
    }
    ensure(ok, detail.join("; "))
}

fn a7_table2() -> Check {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, reference) in [("table2_resnet50", 5264.0), ("table2_inceptionresnet", 926.0)] {
        let s = load(name);
        let g = goodput(&s);
        let m = &s.models[0];
        let none = analytical_solution(&m.profile, m.slo, s.gpus as u32, Mode::NoCoordination).unwrap().throughput_rps;
        let stag = analytical_solution(&m.profile, m.slo, s.gpus as u32, Mode::Staggered).unwrap().throughput_rps;
        ok &= g >= none && g <= 1.02 * stag && (g / reference - 1.0).abs() <= 0.07;
        detail.push(format!("{name}: {g:.1} r/s in [{none:.1}, {:.1}], {:+.1}% vs {reference}", 1.02 * stag, 100.0 * (g / reference - 1.0)));
    }
    ensure(ok, detail.join("; "))
}

fn a8_scale() -> Check {
    let d = Duration::from_secs(3);
    let workers = scale_bench_table(&[1, 8], &[64], 64, d);
    let speedup = workers[1].decisions_per_sec / workers[0].decisions_per_sec;
    let gpus = scale_bench_table(&[1], &[64, 4096], 64, d);
    let growth = gpus[1].ns_per_decision / gpus[0].ns_per_decision;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    ensure(
        speedup >= 4.0 && growth <= 2.0,
        format!(
            "{cores} core(s): 8 workers {:.0}/s vs 1 worker {:.0}/s ({speedup:.2}x, need >= 4); 4096 vs 64 GPUs {:.0} vs {:.0} ns/decision ({growth:.2}x, need <= 2)",
            workers[1].decisions_per_sec, workers[0].decisions_per_sec, gpus[1].ns_per_decision, gpus[0].ns_per_decision
        ),
    )
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn a9_partition() -> Check {
    let mut matched = 0;
    for seed in 0..50u64 {
        let shape = InstanceShape::new(2 + (seed % 9) as usize, 2 + (seed % 2) as usize);
        let p = exponential_instance(&shape, 1000 + seed);
        let opts = SolveOptions { budget: Duration::from_secs(1), seed, max_restarts: Some(200) };
        let exact = exhaustive(&p).unwrap().map(|s| s.evaluation.objective);
        let found = solve(&p, &opts).ok().map(|s| s.evaluation.objective);
        matched += match (found, exact) {
            (Some(f), Some(e)) => ((f - e).abs() <= 1e-9 * (1.0 + e)) as usize,
            (None, None) => 1,
            _ => 0,
        };
    }

    let (mut wins, mut rate_rand, mut mem_rand, mut rate_sol, mut mem_sol) = (0, vec![], vec![], vec![], vec![]);
    for seed in 0..20u64 {
        let p = exponential_instance(&InstanceShape::new(400, 4), seed);
        // The solver converges long before the budget; the cap keeps the
        // run short while random sampling gets the full 10 s.
        let solved = solve(&p, &SolveOptions { budget: Duration::from_secs(10), seed, max_restarts: Some(20) }).unwrap();
        let random = random_solver(&p, &SolveOptions::new(Duration::from_secs(10), seed)).unwrap();
        wins += (solved.evaluation.objective < random.evaluation.objective) as usize;
        let (r, m) = imbalance_factor(&p, &solved.assignment);
        rate_sol.push(r.unwrap());
        mem_sol.push(m.unwrap());
        let (r, m) = imbalance_factor(&p, &random.assignment);
        rate_rand.push(r.unwrap());
        mem_rand.push(m.unwrap());
    }
    let (rate_med, mem_med) = (median(&mut rate_rand), median(&mut mem_rand));
    let below = rate_sol.iter().all(|r| *r < rate_med) && mem_sol.iter().all(|m| *m < mem_med);
    let worst = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    ensure(
        matched == 50 && wins >= 19 && below,
        format!(
            "{matched}/50 small instances optimal; solver beats random on {wins}/20; worst solver imbalance rate {:.2e} mem {:.2e} vs random medians {rate_med:.2e} {mem_med:.2e}",
            worst(&rate_sol),
            worst(&mem_sol)
        ),
    )
}

fn property_case(i: u64) -> Scenario {
    let n = 1 + i % 4;
    let mut text = format!("gpus = {}\nduration_s = 0.3\nwarmup_s = 0.05\ncooldown_s = 0.05\nseed = {}\n", 1 + i % 6, 7919 * i + 1);
    for m in 0..n {
        let alpha = 0.2 + ((i * 7 + m * 3) % 28) as f64 / 10.0;
        let beta = 0.5 + ((i * 11 + m * 5) % 95) as f64 / 10.0;
        let slo = (alpha + beta) * (1.5 + ((i + m) % 9) as f64 / 2.0);
        text += &format!("[[models]]\nname = \"m{m}\"\nalpha_ms = {alpha}\nbeta_ms = {beta}\nslo_ms = {slo}\n");
    }
    text += "[policy]\nkind = \"deferred\"\n";
    if i % 2 == 1 {
        text += "drop_head_target = \"auto\"\n";
    }
    let rate = 50.0 + ((i * 613) % 2950) as f64;
    let arrival = ["{ kind = \"poisson\" }", "{ kind = \"gamma\", shape = 0.5 }"][i.is_multiple_of(3) as usize];
    text += &format!("[workload]\nrate_rps = {rate}\narrival = {arrival}\n");
    Scenario::from_toml(&text, "case", Path::new(".")).unwrap()
}

fn a10_properties() -> Check {
    let checked = RunOptions { check_invariants: true, abort_after_bad: None };
    let mut failures = Vec::new();
    let cases = 200;
    for i in 0..cases {
        let base = property_case(i);
        let a = run(&base).unwrap();
        if a.to_json() != run(&base).unwrap().to_json() {
            failures.push(format!("case {i}: nondeterministic"));
        }
        let zero = run(&base.with_policy_kind(PolicyKind::Timeout { k: Dur::ZERO })).unwrap();
        let eager = run(&base.with_policy_kind(PolicyKind::Eager)).unwrap();
        if (&eager.requests, &eager.orders, &eager.drops) != (&zero.requests, &zero.orders, &zero.drops) {
            failures.push(format!("case {i}: eager differs from timeout(0)"));
        }
        for kind in [PolicyKind::Deferred, PolicyKind::Eager, PolicyKind::TimeoutSloFraction { fraction: 0.3 }] {
            // Invariant checking covers conservation and the one-candidate
            // rule after every event.
            match run_with(&base.with_policy_kind(kind), None, &checked) {
                Ok(r) => {
                    if r.requests.iter().any(|q| q.outcome == Outcome::Late || q.finish.is_some_and(|f| f > q.deadline)) {
                        failures.push(format!("case {i} {kind:?}: request finished past its deadline"));
                    }
                }
                Err(e) => failures.push(format!("case {i} {kind:?}: {e}")),
            }
        }
    }
    ensure(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{cases} cases: determinism, conservation, eager = timeout(0), safety, one candidate per model")
        } else {
            failures.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("A1", a1_analytic),
        ("A2", a2_stagger),
        ("A3", a3_skip),
        ("A4", a4_beta_sweep),
        ("A5", a5_timeout),
        ("A6", a6_flattop),
        ("A7", a7_table2),
        ("A8", a8_scale),
        ("A9", a9_partition),
        ("A10", a10_properties),
    ];
    // libtest-style flags (e.g. from `cargo test -- --nocapture`) are ignored.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == name) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("{name} PASS ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("{name} FAIL ({secs:.1}s): {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
