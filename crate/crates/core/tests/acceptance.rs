//! Acceptance suite: prints one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance`; append `-- 3 9` to run only
//! criteria 3 and 9. Master seeds are fixed as `1000 + criterion`.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use berw::analysis::{estimate_alpha, lower_bound};
use berw::env::{particles_at, run_movement_list, CeaseOnFirst, EnvError, Environment, Instruction, Site, Stacks, UsedSet};
use berw::excursions::{count_descending_chains, srw_excursion_departures};
use berw::level::{
    boundary_distance_check, decomposition_check, detect_bad_interval, run_family, surplus_scan, EntryCounts,
    LevelEnvironment, DEFAULT_BUDGET,
};
use berw::rng::{derive_seed, keyed, seeded_rng, srw_path};
use berw::slow::{g, maximal_slow_dyadic_cover, solve_theta, uncovered_probability, DyadicInterval, PathExtrema};
use berw::stats::{chi_square, chi_square_2dof_p, log_log_slope, median, Estimate};
use berw::timing::{build_seeded, sigma_stats, RuleKind};
use berw::walk::{berw_run, Engine, WalkConfig};

/// Criteria whose literal statement is known to be false; see the analysis
/// printed with the verdict.
const EXPECTED_FAILURES: [usize; 1] = [3];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn master(criterion: u64) -> u64 {
    1000 + criterion
}

/// Starts clustered around a random point of the window `[-20, 20]²` so
/// that particles share sites.
fn random_starts(rng: &mut impl Rng, count: usize) -> Vec<Site> {
    let spread = rng.gen_range(0..=3);
    let (cx, cy) = (rng.gen_range(-17..=17), rng.gen_range(-17..=17));
    (0..count).map(|_| Site::new(cx + rng.gen_range(-spread..=spread), cy + rng.gen_range(-spread..=spread))).collect()
}

/// Environment stacks with every instruction ceasing independently with
/// probability 1/8.
struct RandomCease(Environment, u64);

impl Stacks for RandomCease {
    fn instruction(&self, site: Site, k: u64) -> Result<Instruction, EnvError> {
        let mut ins = self.0.instruction(site, k)?;
        ins.cease = keyed(self.1, &[site.x as u64, site.y as u64, k]).is_multiple_of(8);
        Ok(ins)
    }
}

fn cease_stacks(i: u64, seed: u64) -> Box<dyn Stacks> {
    if i.is_multiple_of(2) {
        Box::new(CeaseOnFirst(Environment::new(seed)))
    } else {
        Box::new(RandomCease(Environment::new(seed), seed ^ 0xCEA5E))
    }
}

/// Random movement list mentioning every particle at least once.
fn random_list(rng: &mut impl Rng, count: usize) -> Vec<usize> {
    let mut list: Vec<usize> = (0..count).collect();
    let extra = rng.gen_range(0..3 * count);
    list.extend((0..extra).map(|_| rng.gen_range(0..count)));
    list.shuffle(rng);
    list
}

fn c1_abelian() -> Verdict {
    let mut rng = seeded_rng(master(1));
    let (mut failures, mut unfinished, mut moves) = (0, 0, 0);
    for i in 0..1000 {
        let env = cease_stacks(i, derive_seed(master(1), i));
        let count = rng.gen_range(1..=5);
        let particles = particles_at(&random_starts(&mut rng, count));
        let mut used: Vec<UsedSet> = Vec::new();
        for _ in 0..3 {
            let list = random_list(&mut rng, count);
            let out = run_movement_list(env.as_ref(), &particles, &list, 1 << 24).unwrap();
            unfinished += usize::from(out.exhausted);
            moves += out.moves;
            used.push(out.used);
        }
        failures += usize::from(used[0] != used[1] || used[0] != used[2]);
    }
    verdict(failures == 0 && unfinished == 0, format!("1000 instances x 3 lists, {failures} mismatches, {unfinished} unfinished, {moves} moves"))
}

fn c2_monotonicity() -> Verdict {
    let mut rng = seeded_rng(master(2));
    let (mut failures, mut moves) = (0, 0);
    for i in 0..500 {
        let env = cease_stacks(i, derive_seed(master(2), i));
        let small = rng.gen_range(1..=4);
        let large = rng.gen_range(small + 1..=6);
        let starts = random_starts(&mut rng, large);
        let p = particles_at(&starts[..small]);
        let q = particles_at(&starts);
        let a = run_movement_list(env.as_ref(), &p, &random_list(&mut rng, small), 1 << 24).unwrap();
        let b = run_movement_list(env.as_ref(), &q, &random_list(&mut rng, large), 1 << 24).unwrap();
        assert!(!a.exhausted && !b.exhausted);
        failures += usize::from(!a.used.is_subset_of(&b.used));
        moves += b.moves;
    }
    verdict(failures == 0, format!("500 instances, {failures} inclusion failures, {moves} moves by the larger systems"))
}

fn c3_range_identity() -> Verdict {
    let mut checkpoints = 0;
    let mut literal_failures = 0;
    let mut corrected_failures = 0;
    let mut runs = Vec::new();
    for i in 0..10 {
        let seed = derive_seed(master(3), i);
        runs.push(WalkConfig::new(seed, 1_000_000).engine(Engine::Stream));
        runs.push(WalkConfig::new(seed, 100_000).engine(Engine::Stack));
    }
    for cfg in &runs {
        for c in &berw_run(cfg).unwrap().series.checkpoints {
            checkpoints += 1;
            literal_failures += usize::from(c.range != 1 + c.vertical_steps);
            corrected_failures += usize::from(!c.range_identity_holds());
        }
    }
    assert_eq!(corrected_failures, 0, "R_t = V_t + 1{{Z_t fresh}} must hold at every checkpoint");
    verdict(
        literal_failures == 0,
        format!(
            "R_t = 1 + V_t fails at {literal_failures}/{checkpoints} checkpoints (both engines). \
             Each vertical step leaves a site for the first time, so V_t = R_(t-1) and \
             R_t = V_t + 1{{Z_t fresh}}; the literal form is off by one whenever Z_t is a revisit, \
             e.g. (0,0) -> (0,1) -> (0,0) has R_2 = 2, V_2 = 2. \
             Corrected identity holds at all {checkpoints} checkpoints"
        ),
    )
}

fn c4_exponent() -> Verdict {
    let fit = estimate_alpha(master(4), 10, 10_000_000, RuleKind::Berw, None).unwrap();
    let m = fit.median_slope;
    verdict(
        (0.70..=0.85).contains(&m) && fit.excluded.is_empty(),
        format!("median slope {m:.4} over 10 seeds, IQR [{:.4}, {:.4}], band [0.70, 0.85]", fit.iqr.0, fit.iqr.1),
    )
}

fn c5_margin() -> Verdict {
    let n = 1_000_000;
    let bound = lower_bound(n);
    let hits = (0..100)
        .filter(|&i| berw_run(&WalkConfig::new(derive_seed(master(5), i), n)).unwrap().series.last().range as f64 >= bound)
        .count();
    verdict(hits >= 95, format!("R_n >= n^(4/7)/ln^2 n = {bound:.1} in {hits}/100 seeds"))
}

fn c6_vertical_scaling() -> Verdict {
    let ratio = |seed: u64, n: u64| {
        let c = *berw_run(&WalkConfig::new(seed, n)).unwrap().series.last();
        c.max_abs_y() as f64 / (n as f64).sqrt()
    };
    let seeds: Vec<u64> = (0..30).map(|i| derive_seed(master(6), i)).collect();
    let small = median(&seeds.iter().map(|&s| ratio(s, 100_000)).collect::<Vec<_>>());
    let large = median(&seeds.iter().map(|&s| ratio(s, 10_000_000)).collect::<Vec<_>>());
    verdict(large < small, format!("median max|y|/sqrt(n): {small:.4} at 1e5, {large:.4} at 1e7"))
}

fn c7_sigma() -> Verdict {
    let means: Vec<f64> = (0..30)
        .map(|i| {
            let built = build_seeded(RuleKind::Berw, derive_seed(master(7), i), 1_000_000, false).unwrap();
            sigma_stats(&built.timing).mean.unwrap()
        })
        .collect();
    let worst = means.iter().cloned().fold(f64::MIN, f64::max);
    verdict(worst <= 6.0, format!("largest per-run mean increment {worst:.4} over 30 runs of 1e6 steps"))
}

fn bisect_theta(a: f64) -> f64 {
    let f = |t: f64| t * a - t.cosh().ln();
    let (mut lo, mut hi) = (1.21, 1.22);
    assert!(f(lo) > 0.0 && f(hi) < 0.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn c8_theta() -> Verdict {
    let mut bad = Vec::new();
    for i in 1..=99 {
        let a = i as f64 / 100.0;
        let r = solve_theta(a).unwrap();
        let upper = 2.0 * a * (1.0 + 1.0 / (1.0 - a).powi(2));
        if !(g(r.theta, a).abs() < 1e-12 && 2.0 * a <= r.theta && r.theta <= upper) {
            bad.push(a);
        }
    }
    let half = solve_theta(0.5).unwrap().theta;
    let oracle = bisect_theta(0.5);
    verdict(
        bad.is_empty() && (half - oracle).abs() < 1e-3 && (half - 1.219).abs() < 1e-3,
        format!("grid failures {bad:?}; theta_0.5 = {half:.6}, bisection {oracle:.6}"),
    )
}

fn naive_range(path: &[i64], s: usize, len: usize) -> i64 {
    let w = &path[s..=s + len];
    w.iter().max().unwrap() - w.iter().min().unwrap() + 1
}

fn naive_slow(path: &[i64], s: usize, len: usize, eps: f64) -> bool {
    len == 0 || (naive_range(path, s, len) - 1) as f64 <= eps * (len as f64).sqrt()
}

fn brute_force_cover(path: &[i64], eps: f64, k: u32) -> BTreeSet<(u32, u64)> {
    let slow = |d: DyadicInterval| naive_slow(path, d.start() as usize, d.len() as usize, eps);
    let mut out = BTreeSet::new();
    for j in 0..=k {
        for o in 0..(1u64 << (k - j)) {
            let d = DyadicInterval { j, k: o };
            let ancestors_fast = (j + 1..=k).all(|jj| !slow(DyadicInterval { j: jj, k: o >> (jj - j) }));
            if slow(d) && ancestors_fast {
                out.insert((j, o));
            }
        }
    }
    out
}

fn c9_slow_cover() -> Verdict {
    let k = 14;
    let path = srw_path(master(9), 1 << k);
    let p = PathExtrema::new(path.clone());
    let mut rng = seeded_rng(master(9));
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let s = rng.gen_range(0..(1usize << k));
        let len = rng.gen_range(0..=(1usize << k) - s);
        mismatches += usize::from(p.is_slow(s as u64, len as u64, 1.0).unwrap() != naive_slow(&path, s, len, 1.0));
    }
    let cover: BTreeSet<(u32, u64)> =
        maximal_slow_dyadic_cover(&p, 1.0, k).unwrap().members.iter().map(|d| (d.j, d.k)).collect();
    let cover_ok = cover == brute_force_cover(&path, 1.0, k);

    let seeds: Vec<u64> = (0..10_000).map(|i| derive_seed(master(9), i)).collect();
    let mut rises = Vec::new();
    let mut table = Vec::new();
    for eps in [1.0, 0.9] {
        let est: Vec<Estimate> =
            (8..=16u32).map(|k| uncovered_probability(&seeds, eps, k, 1 << (k - 1)).unwrap()).collect();
        for (i, w) in est.windows(2).enumerate() {
            if w[1].mean > w[0].mean + 2.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt() {
                rises.push((eps, 8 + i + 1));
            }
        }
        table.push(format!("eps {eps}: {:.4} .. {:.4}", est[0].mean, est[8].mean));
    }
    verdict(
        mismatches == 0 && cover_ok && rises.is_empty(),
        format!(
            "is_slow mismatches {mismatches}/10000; cover equals brute force: {cover_ok} ({} members); \
             uncovered at s = 2^(k-1), k = 8..16, 1e4 paths, {}; rises beyond 2 SE {rises:?}",
            cover.len(),
            table.join(", ")
        ),
    )
}

fn c10_excursions() -> Verdict {
    let est: Vec<Estimate> = (1..=3).map(|i| srw_excursion_departures(i, 1_000_000, master(10)).unwrap()).collect();
    let ok = est.iter().all(|e| e.within(1.0, 3.0));
    let shown: Vec<String> = est.iter().map(|e| format!("{:.4} ± {:.4}", e.mean, e.se)).collect();
    verdict(ok, format!("mean departures from levels 1, 2, 3 over 1e6 excursions: {}", shown.join(", ")))
}

fn c11_chains() -> Verdict {
    let mut ok = true;
    let mut shown = Vec::new();
    for t in [0.25, 0.5] {
        for n in 1..=4usize {
            let e = count_descending_chains(t, n, n as i64, 20_000, derive_seed(master(11), n as u64)).unwrap();
            let bound = (4.0 * t).powi(n as i32) / (1..=n).product::<usize>() as f64;
            ok &= e.at_most(bound, 2.0);
            if n == 1 {
                ok &= e.within(4.0 * (1.0 - (-t).exp()), 3.0);
            }
            shown.push(format!("t={t} n={n}: {:.4} (bound {bound:.4})", e.mean));
        }
    }
    verdict(ok, shown.join("; "))
}

fn random_feasible<S: Stacks>(env: &LevelEnvironment<S>, rng: &mut impl Rng, n: u64) -> Vec<i64> {
    let sq = (n * n) as i64;
    let width = *[8i64, 32, 256, 2 * sq].choose(rng).unwrap();
    let centre = rng.gen_range(-sq..sq);
    let mut a: Vec<i64> = Vec::new();
    for _ in 0..rng.gen_range(1..=n) {
        let x = (centre + rng.gen_range(-width / 2..=width / 2)).clamp(-sq, sq - 1);
        if (a.iter().filter(|&&v| v == x).count() as u32) < env.u(x) {
            a.push(x);
        }
    }
    a.sort();
    a
}

fn c12_levels() -> Verdict {
    let mut rng = seeded_rng(master(12));
    let mut parts = Vec::new();
    let mut ok = true;

    let mut perm_failures = 0;
    for i in 0..1000 {
        let env = LevelEnvironment::new(rng.gen_range(-3..=3), Environment::new(derive_seed(master(12), i)));
        let mut a: Vec<i64> = (0..rng.gen_range(1..=16)).map(|_| rng.gen_range(-8..8)).collect();
        let total = run_family(&env, &a, DEFAULT_BUDGET).unwrap().total;
        for _ in 0..20 {
            a.shuffle(&mut rng);
            perm_failures += usize::from(run_family(&env, &a, DEFAULT_BUDGET).unwrap().total != total);
        }
    }
    ok &= perm_failures == 0;
    parts.push(format!("permutation mismatches {perm_failures}/20000"));

    let ns: Vec<f64> = (4..=8).map(|j| (1u64 << j) as f64).collect();
    let slopes: Vec<f64> = (0..5)
        .map(|s| {
            let env = LevelEnvironment::new(0, Environment::new(derive_seed(master(12), 10_000 + s)))
                .with_entries(EntryCounts::Constant(1 << 10));
            let totals: Vec<f64> =
                ns.iter().map(|&n| run_family(&env, &vec![0; n as usize], DEFAULT_BUDGET).unwrap().total as f64).collect();
            log_log_slope(&ns, &totals).unwrap()
        })
        .collect();
    let idla = median(&slopes);
    ok &= (2.6..=3.4).contains(&idla);
    parts.push(format!("IDLA exponent {idla:.3}"));

    let mut counts = [0u64; 3];
    for s in 0..100 {
        let env = LevelEnvironment::new(0, Environment::new(derive_seed(master(12), 20_000 + s)));
        for x in 1..=1000 {
            counts[env.u(x) as usize] += 1;
        }
    }
    let p = chi_square_2dof_p(chi_square(&counts, &[0.25, 0.5, 0.25]));
    ok &= p > 0.01;
    parts.push(format!("surplus law {counts:?}, p = {p:.3}"));

    let n = 64u64;
    let fails = (0..10_000)
        .filter(|&s| {
            let env = LevelEnvironment::new(0, Environment::new(derive_seed(master(12), 30_000 + s)));
            !surplus_scan(&env, n).unwrap().e_holds
        })
        .count();
    let e = Estimate::proportion(fails, 10_000);
    ok &= e.at_most(3.0 / (n as f64).powi(3), 3.0);
    parts.push(format!("P(E^c) at n=64: {fails}/10000"));

    let n = 32u64;
    let bad = (0..1000)
        .filter(|&s| {
            let env = LevelEnvironment::new(0, Environment::new(derive_seed(master(12), 40_000 + s)));
            detect_bad_interval(&env, n, false, DEFAULT_BUDGET).unwrap().d_holds
        })
        .count();
    let e = Estimate::proportion(bad, 1000);
    ok &= e.at_most(4.0 / (n as f64).powi(3), 3.0);
    parts.push(format!("P(D) at n=32: {bad}/1000"));

    let n = 64u64;
    let (mut boundary_fail, mut decomposition_fail) = (0, 0);
    for s in 0..1000 {
        let env = LevelEnvironment::new(rng.gen_range(-3..=3), Environment::new(derive_seed(master(12), 50_000 + s)));
        let a = random_feasible(&env, &mut rng, n);
        boundary_fail += usize::from(!boundary_distance_check(&env, &a, n).unwrap().holds());
        decomposition_fail += usize::from(!decomposition_check(&env, &a, DEFAULT_BUDGET).unwrap().holds());
    }
    ok &= boundary_fail == 0 && decomposition_fail == 0;
    parts.push(format!("boundary failures {boundary_fail}/1000, decomposition failures {decomposition_fail}/1000"));

    verdict(ok, parts.join("; "))
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_berw")).args(args).output().unwrap();
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn c13_reproducibility() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let jobs: [&[&str]; 4] = [
        &["simulate", "--seed", "13", "--n", "200000", "--stride", "100", "--format", "csv"],
        &["estimate-alpha", "--seed", "13", "--seeds", "3", "--n", "100000", "--format", "json"],
        &["excursions", "--seed", "13", "--seeds", "10", "--format", "json"],
        &["slow-cover", "--seed", "13", "--k", "10", "--format", "csv"],
    ];
    let mut compared = 0;
    let mut identical = true;
    for (j, args) in jobs.iter().enumerate() {
        let dirs: Vec<String> =
            (0..2).map(|r| tmp.path().join(format!("{j}-{r}")).to_string_lossy().into_owned()).collect();
        for d in &dirs {
            let mut a = args.to_vec();
            a.extend(["--out", d.as_str()]);
            run_cli(&a);
        }
        let (a, b) = (files(Path::new(&dirs[0])), files(Path::new(&dirs[1])));
        compared += a.len();
        identical &= !a.is_empty() && a == b;
    }
    verdict(identical, format!("{compared} output files compared byte for byte across two invocations"))
}

fn main() {
    let criteria: [(usize, &str, fn() -> Verdict); 13] = [
        (1, "Abelian property", c1_abelian),
        (2, "particle monotonicity", c2_monotonicity),
        (3, "range identity", c3_range_identity),
        (4, "exponent estimate", c4_exponent),
        (5, "lower growth margin", c5_margin),
        (6, "vertical scaling", c6_vertical_scaling),
        (7, "sigma increments", c7_sigma),
        (8, "theta solver", c8_theta),
        (9, "slow cover", c9_slow_cover),
        (10, "excursion local time", c10_excursions),
        (11, "descending chains", c11_chains),
        (12, "level families", c12_levels),
        (13, "reproducibility", c13_reproducibility),
    ];
    // numeric arguments select a subset of criteria
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {id:>2} {name} [{:.1}s]: {}", start.elapsed().as_secs_f64(), v.detail);
        if v.pass == EXPECTED_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected verdicts for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
