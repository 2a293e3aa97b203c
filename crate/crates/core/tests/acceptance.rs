//! Acceptance checks, one verdict line per criterion.
//!
//! Run with `cargo test --test acceptance`. Criterion 6 needs the CIFAR-10
//! binary archive in `$RWE_NAS_DATA`; without it the line reads BLOCKED and
//! a synthetic-data timing run is reported separately.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rwe_nas::analysis::{extract_front, spearman};
use rwe_nas::complexity::count_flops;
use rwe_nas::data::{self, SplitSpec};
use rwe_nas::moea::{
    fast_nondominated_sort, polynomial_mutation, run_search, two_point_crossover, RweEvaluator, SearchConfig,
};
use rwe_nas::nn::{fan_in_bound, fan_in_uniform, init_weights};
use rwe_nas::rwe::{self, EvalConfig, TrainConfig};
use rwe_nas::search_space::{decode, random_genome, Genome, GENOME_LEN};
use rwe_nas::{rng, Exec, MacroConfig};

enum Verdict {
    Pass(String),
    Fail(String),
    Blocked(String),
}

use Verdict::*;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn c1_sort_oracle() -> Verdict {
    let start = Instant::now();
    let mut r = rng::rng(1);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = r.gen_range(1..=50);
        // coarse grid so ties and duplicates occur
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [f64::from(r.gen_range(0..15u8)) / 10.0, f64::from(r.gen_range(0..15u8))])
            .collect();
        let mut fronts = fast_nondominated_sort(&pts);
        fronts.iter_mut().for_each(|f| f.sort_unstable());
        mismatches += usize::from(fronts != common::brute_force_fronts(&pts));
    }
    let t = start.elapsed();
    check(
        mismatches == 0 && t < Duration::from_secs(5),
        format!(
            "200 populations (n <= 50), {mismatches} mismatches, {:.3}s (limit 5s)",
            t.as_secs_f64()
        ),
    )
}

fn c2_flops_oracle() -> Verdict {
    let start = Instant::now();
    let m = MacroConfig::default();
    let mut mismatches = 0;
    for seed in 0..50 {
        let g = random_genome(rng::derive(2, seed));
        let r = count_flops(&decode(&g, &m).unwrap());
        mismatches += usize::from((r.flops, r.params) != common::oracle_cost(&g, &m));
    }
    let t = start.elapsed();
    check(
        mismatches == 0 && t < Duration::from_secs(10),
        format!(
            "50 genomes (5 layers, 10 channels), {mismatches} mismatches, {:.3}s (limit 10s)",
            t.as_secs_f64()
        ),
    )
}

fn c3_encoding_closure() -> Verdict {
    let start = Instant::now();
    let mut r = rng::rng(3);
    let mut bad = 0;
    for _ in 0..10_000 {
        let g = Genome::random(&mut r);
        let genes: Vec<i64> = g.flatten().iter().map(|&v| i64::from(v)).collect();
        bad += usize::from(Genome::parse(&genes).ok() != Some(g));
    }
    let mut invalid = 0;
    for _ in 0..500 {
        let (a, b) = (Genome::random(&mut r), Genome::random(&mut r));
        let (c1, c2) = two_point_crossover(&a, &b, 0.9, &mut r);
        for c in [c1, c2] {
            let m = polynomial_mutation(&c, &mut r, 20.0, 1.0 / GENOME_LEN as f64);
            let genes: Vec<i64> = m.flatten().iter().map(|&v| i64::from(v)).collect();
            invalid += usize::from(Genome::parse(&genes).is_err());
        }
    }
    let t = start.elapsed();
    check(
        bad == 0 && invalid == 0 && t < Duration::from_secs(5),
        format!(
            "10^4 round-trips ({bad} failures), 10^3 offspring ({invalid} invalid), {:.3}s (limit 5s)",
            t.as_secs_f64()
        ),
    )
}

fn c4_synthetic_front() -> Verdict {
    let start = Instant::now();
    let mut passed = 0;
    let mut sizes = Vec::new();
    for seed in 0..20 {
        let cfg = SearchConfig {
            seed,
            ..SearchConfig::default()
        };
        let h = run_search(&cfg, &common::gene_sum, Exec::default(), None, |_, _| {}).unwrap();
        let last = h.generations.last().unwrap();
        let on_line = last
            .front
            .iter()
            .all(|&k| last.individuals[k].error + last.individuals[k].flops as f64 == 248.0);
        let distinct = extract_front(&h).len();
        sizes.push(distinct);
        passed += usize::from(on_line && distinct >= 10);
    }
    let t = start.elapsed();
    check(
        passed == 20 && t < Duration::from_secs(30),
        format!(
            "{passed}/20 seeds on f1+f2=248 with >= 10 points (min {}), {:.3}s (limit 30s)",
            sizes.iter().min().unwrap(),
            t.as_secs_f64()
        ),
    )
}

fn monotone(h: &rwe_nas::moea::SearchHistory) -> bool {
    h.generations
        .windows(2)
        .all(|w| w[1].min_error() <= w[0].min_error() && w[1].min_flops() <= w[0].min_flops())
}

fn c5_monotonicity() -> Verdict {
    let start = Instant::now();
    let mut synthetic_ok = 0;
    for seed in 0..20 {
        let cfg = SearchConfig {
            seed,
            ..SearchConfig::default()
        };
        let h = run_search(&cfg, &common::gene_sum, Exec::default(), None, |_, _| {}).unwrap();
        synthetic_ok += usize::from(monotone(&h));
    }

    // reduced RWE budget: 100/50 synthetic images, 3 cells of width 4
    let data = common::synthetic_search_data(100, 50, 5);
    let evaluator = RweEvaluator {
        data: &data,
        config: EvalConfig {
            train: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            macro_cfg: MacroConfig {
                num_layers: 3,
                init_channels: 4,
                reduction_positions: vec![2],
                ..MacroConfig::default()
            },
            ..EvalConfig::default()
        },
        exec: Exec::default(),
    };
    let mut rwe_ok = 0;
    for seed in 0..20 {
        let cfg = SearchConfig {
            pop_size: 6,
            generations: 4,
            seed,
            ..SearchConfig::default()
        };
        let h = run_search(&cfg, &evaluator, Exec::default(), None, |_, _| {}).unwrap();
        rwe_ok += usize::from(monotone(&h));
    }
    check(
        synthetic_ok == 20 && rwe_ok == 20,
        format!(
            "synthetic objective {synthetic_ok}/20 seeds (pop 20, 30 gens), reduced RWE {rwe_ok}/20 seeds \
             (pop 6, 4 gens, 100/50 synthetic images), {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn tiny_profile_eval(data: &data::SearchData) -> (usize, f64, Vec<f64>) {
    let cfg = EvalConfig::default();
    let mut ok = 0;
    let mut slowest: f64 = 0.0;
    let mut errors = Vec::new();
    for seed in 0..10 {
        let g = random_genome(rng::derive(6, seed));
        let r = rwe::evaluate(&g, data, &cfg, Exec::default()).unwrap();
        slowest = slowest.max(r.wall_time.as_secs_f64());
        errors.push(r.error);
        ok += usize::from(r.error <= 0.60);
    }
    (ok, slowest, errors)
}

fn fmt_errors(e: &[f64]) -> String {
    e.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ")
}

fn c6_tiny_profile() -> Vec<(String, Verdict)> {
    let spec = SplitSpec {
        subsample: Some((4000, 1000)),
        ..SplitSpec::default()
    };
    let mut out = Vec::new();
    match data::resolve_data_root(None).map(|p| data::load_cifar10(&p)) {
        Some(Ok(set)) => {
            let d = data::prepare(&set.train, &spec).unwrap();
            let (ok, slowest, errors) = tiny_profile_eval(&d);
            out.push((
                "6".to_string(),
                check(
                    ok >= 8 && slowest <= 120.0,
                    format!(
                        "CIFAR-10 tiny profile: {ok}/10 genomes with error <= 0.60 (need 8), slowest {slowest:.1}s \
                         (limit 120s); errors {}",
                        fmt_errors(&errors)
                    ),
                ),
            ));
        }
        other => {
            let why = match other {
                Some(Err(e)) => format!("cannot load ${}: {e}", data::DATA_ENV),
                _ => format!("CIFAR-10 archive not available (set ${})", data::DATA_ENV),
            };
            out.push(("6".to_string(), Blocked(why)));
            // same pipeline and budget on class-structured synthetic images;
            // this is a timing and plumbing check, not the criterion
            let bytes = data::synthetic_records(10_000, 6);
            let set = data::parse_records(&bytes, Path::new("synthetic")).unwrap();
            let d = data::prepare(&set, &spec).unwrap();
            let (ok, slowest, errors) = tiny_profile_eval(&d);
            out.push((
                "6*".to_string(),
                check(
                    slowest <= 120.0,
                    format!(
                        "synthetic stand-in, not CIFAR-10: {ok}/10 genomes with error <= 0.60, slowest {slowest:.1}s \
                         (limit 120s); errors {}",
                        fmt_errors(&errors)
                    ),
                ),
            ));
        }
    }
    out
}

fn c7_freeze() -> Verdict {
    let data = common::synthetic_search_data(200, 100, 7);
    let cfg = EvalConfig {
        train: TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
        ..EvalConfig::default()
    };
    let mut unchanged = 0;
    for seed in 0..10 {
        let g = random_genome(rng::derive(7, seed));
        let plan = decode(&g, &cfg.macro_cfg).unwrap();
        let bank = init_weights(&plan, seed);
        let before = bank.checksum();
        rwe::evaluate_plan(&plan, &bank, &data, &cfg, seed, Exec::default()).unwrap();
        unchanged += usize::from(bank.checksum() == before);
    }
    check(
        unchanged == 10,
        format!("{unchanged}/10 weight-bank checksums unchanged"),
    )
}

fn c8_init_variance() -> Verdict {
    // stem 3x3 conv from RGB, 5x5 depthwise, 1x1 pointwise 40 -> 40
    let shapes = [
        ("3x3 conv, 3 in", 27usize),
        ("5x5 depthwise", 25),
        ("1x1 conv, 40 in", 40),
    ];
    let mut r = rng::rng(8);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, fan_in) in shapes {
        let w = fan_in_uniform(&mut r, fan_in, 100_000);
        let n = w.len() as f64;
        let mean = w.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = w.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        let target = 1.0 / (3.0 * fan_in as f64);
        let rel = (var / target - 1.0).abs();
        let in_bound = w.iter().all(|v| v.abs() <= fan_in_bound(fan_in));
        worst = worst.max(if in_bound { rel } else { f64::INFINITY });
        parts.push(format!("{name}: {:.2}%", rel * 100.0));
    }
    check(
        worst <= 0.05,
        format!("relative variance error {} (limit 5%)", parts.join(", ")),
    )
}

fn c9_spearman() -> Verdict {
    let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
    let examples = [
        (spearman(&xs, &xs).unwrap(), 1.0),
        (spearman(&xs, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0),
        (spearman(&xs, &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap(), 0.8),
    ];
    let worked = examples.iter().all(|(got, want)| (got - want).abs() <= 1e-12);

    let mut r = rng::rng(9);
    let base: Vec<f64> = (0..100).map(|_| r.gen()).collect();
    let mut rhos = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let mut shuffled = base.clone();
        shuffled.shuffle(&mut r);
        rhos.push(spearman(&base, &shuffled).unwrap());
    }
    let mean = rhos.iter().sum::<f64>() / 1000.0;
    let mean_abs = rhos.iter().map(|v| v.abs()).sum::<f64>() / 1000.0;
    check(
        worked && mean.abs() < 0.05,
        format!(
            "worked examples {} (tol 1e-12); null over 1000 shuffles, n=100: |mean rho| = {:.4} (limit 0.05), \
             mean |rho| = {mean_abs:.4}",
            if worked { "exact" } else { "WRONG" },
            mean.abs()
        ),
    )
}

fn c10_determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let data_dir = root.path().join("data");
    data::write_synthetic_cifar10(&data_dir, 120, 10).unwrap();
    let run = |name: &str, threads: &str| -> Vec<u8> {
        let cwd = root.path().join(name);
        fs::create_dir_all(&cwd).unwrap();
        let o = Command::new(env!("CARGO_BIN_EXE_rwe-nas"))
            .current_dir(&cwd)
            .env("RUST_LOG", "warn")
            .args([
                "search",
                "--seed",
                "7",
                "--data",
                data_dir.to_str().unwrap(),
                "--out",
                "out",
            ])
            .args(["--threads", threads, "--pop", "6", "--generations", "3"])
            .args([
                "--subsample",
                "200,100",
                "--epochs",
                "3",
                "--layers",
                "3",
                "--channels",
                "6",
                "--reductions",
                "2",
            ])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(cwd.join("out/history.json")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "8");
    check(
        a == b && a == c,
        format!(
            "history.json ({} bytes): rerun {}, --threads 1 vs 8 {}",
            a.len(),
            if a == b { "identical" } else { "DIFFERS" },
            if a == c { "identical" } else { "DIFFERS" }
        ),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let filter: Option<&String> = args.iter().skip(1).find(|a| !a.starts_with('-'));

    type Check = fn() -> Vec<(String, Verdict)>;
    let checks: Vec<(&str, &str, Check)> = vec![
        ("1", "dominance sort vs brute force", || {
            vec![("1".into(), c1_sort_oracle())]
        }),
        ("2", "FLOPs/params vs oracle", || vec![("2".into(), c2_flops_oracle())]),
        ("3", "encoding closure", || vec![("3".into(), c3_encoding_closure())]),
        ("4", "synthetic front recovery", || {
            vec![("4".into(), c4_synthetic_front())]
        }),
        ("5", "elitist monotonicity", || vec![("5".into(), c5_monotonicity())]),
        ("6", "desk-scale RWE signal", c6_tiny_profile),
        ("7", "freeze invariant", || vec![("7".into(), c7_freeze())]),
        ("8", "initialization statistics", || {
            vec![("8".into(), c8_init_variance())]
        }),
        ("9", "Spearman correctness", || vec![("9".into(), c9_spearman())]),
        ("10", "search determinism", || vec![("10".into(), c10_determinism())]),
    ];

    let (mut pass, mut fail, mut blocked) = (0, 0, 0);
    for (id, title, f) in checks {
        if filter.is_some_and(|s| s != id) {
            continue;
        }
        let results = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                vec![(id.to_string(), Fail(format!("panicked: {msg}")))]
            }
        };
        for (rid, v) in results {
            let (tag, detail) = match &v {
                Pass(d) => ("PASS", d),
                Fail(d) => ("FAIL", d),
                Blocked(d) => ("BLOCKED", d),
            };
            // the starred line is informational and does not count
            if rid == id {
                match v {
                    Pass(_) => pass += 1,
                    Fail(_) => fail += 1,
                    Blocked(_) => blocked += 1,
                }
            } else if matches!(v, Fail(_)) {
                fail += 1;
            }
            println!("[{tag:>7}] criterion {rid:<3} {title}: {detail}");
        }
    }
    println!("acceptance: {pass} passed, {fail} failed, {blocked} blocked");
    if fail > 0 {
        std::process::exit(1);
    }
}
