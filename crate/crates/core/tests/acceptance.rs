//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! The campaign criteria run the shipped configs in `configs/` (10 runs x 25
//! episodes each, several minutes on one core). Their output directories are
//! kept under the cargo target tmp dir for inspection.

use std::path::{Path, PathBuf};
use std::time::Instant;

use drq::agent::{run_episode, DrqAgent, DrqConfig, EpisodeConfig, ReplayStore, StateActionEncoder};
use drq::dro::{epsilon_radius, normalize, solve_sigma, worst_case_probability, TdSampleSet, WassersteinConfig};
use drq::env::{ecm_step, ActionGrid, BatteryEnv, EcmParams, EcmState, Environment, OcvTable, ScriptedMdp};
use drq::harness::{run_experiment, ExperimentConfig, SafetyStats};
use drq::nn::{LayerSpec, Mlp, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    dir
}

struct Campaign {
    dir: PathBuf,
    stats: SafetyStats,
}

fn campaign(config: &str, name: &str) -> Result<Campaign, String> {
    let cfg = ExperimentConfig::load(repo().join("configs").join(config)).map_err(|e| e.to_string())?;
    let dir = scratch(name);
    let report = run_experiment(&cfg, &dir).map_err(|e| e.to_string())?;
    Ok(Campaign {
        dir,
        stats: report.stats,
    })
}

fn safety(drq: &Campaign) -> Outcome {
    let e = &drq.stats.algorithm("drq").ok_or("no drq rows")?.exploration;
    check(
        e.episode_violation_fraction <= 0.05 && e.timestep_violation_fraction <= 0.005,
        format!(
            "exploratory episodes violating {}/{} = {:.4} (<= 0.05), timesteps {}/{} = {:.5} (<= 0.005)",
            e.violating_episodes,
            e.episodes,
            e.episode_violation_fraction,
            e.violating_steps,
            e.steps,
            e.timestep_violation_fraction
        ),
    )
}

fn contrast(drq: &Campaign, dqn: &Campaign) -> Outcome {
    let a = drq.stats.algorithm("drq").ok_or("no drq rows")?.exploration.episode_violation_fraction;
    let b = dqn.stats.algorithm("dqn").ok_or("no dqn rows")?.exploration.episode_violation_fraction;
    // With a violation-free DrQ any unsafe baseline satisfies the ratio.
    let ok = if a == 0.0 { b > 0.0 } else { b >= 5.0 * a };
    check(ok, format!("dqn {b:.4} vs drq {a:.4} (ratio {:.1}, need >= 5)", b / a))
}

fn zero_current_return() -> f64 {
    let p = EcmParams::default();
    let grid = ActionGrid::uniform(p.i_min, p.i_max, 24).unwrap();
    let mut env = BatteryEnv::new(p, OcvTable::standin(), grid, 140).unwrap();
    env.reset();
    let mut total = 0.0;
    loop {
        let out = env.step(0).unwrap();
        total += out.reward;
        if out.terminal {
            return total;
        }
    }
}

fn performance(drq: &Campaign, dqn: &Campaign) -> Outcome {
    let zero = zero_current_return();
    let a = drq.stats.algorithm("drq").ok_or("no drq rows")?.final_greedy_mean;
    let b = dqn.stats.algorithm("dqn").ok_or("no dqn rows")?.final_greedy_mean;
    check(
        // 0.2 and 0.7 are not representable, so "exactly" means to rounding.
        (zero + 35.0).abs() < 1e-9 && a > -35.0 && a > b,
        format!("zero-current return {zero}; final greedy mean drq {a:.3}, dqn {b:.3}"),
    )
}

/// Worst-case probability by brute force: a log-spaced λ grid, then ternary
/// search around the best grid point (h is convex in λ).
fn grid_probability(abs: &[f64], sigma: f64, eps: f64) -> f64 {
    let ell = abs.len() as f64;
    let h = |lambda: f64| {
        lambda * eps
            + abs
                .iter()
                .map(|&a| (1.0 - lambda * (sigma - a).max(0.0)).max(0.0))
                .sum::<f64>()
                / ell
    };
    let grid: Vec<f64> = (0..=800).map(|k| 10f64.powf(-4.0 + 8.0 * k as f64 / 800.0)).collect();
    let k = (0..grid.len()).min_by(|&a, &b| h(grid[a]).total_cmp(&h(grid[b]))).unwrap();
    let (mut lo, mut hi) = (if k == 0 { 0.0 } else { grid[k - 1] }, grid[(k + 1).min(grid.len() - 1)]);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if h(m1) <= h(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    h(0.0).min(h(grid[k])).min(h(0.5 * (lo + hi)))
}

fn dro_oracle() -> Outcome {
    let cfg = WassersteinConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let step = 0.002;
    let mut worst = 0.0f64;
    for set in 0..50 {
        let ell = [5, 20, 100][set % 3];
        let raw: Vec<f64> = (0..ell)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                if rng.gen_bool(0.2) { 4.0 * x } else { 0.1 * x }
            })
            .collect();
        let td = TdSampleSet::new(raw.clone()).unwrap();
        // Independent standardization with the population variance.
        let mu = raw.iter().sum::<f64>() / ell as f64;
        let sd = (raw.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / ell as f64).sqrt();
        let abs: Vec<f64> = raw.iter().map(|r| ((r - mu) / sd).abs()).collect();
        let norm = normalize(&td);

        for &s in abs.iter().chain(&[0.0, 0.5, 1.0, 2.5]) {
            let p = worst_case_probability(s, &norm, 0.0).unwrap();
            let frac = abs.iter().filter(|&&a| a >= s).count() as f64 / ell as f64;
            if p != frac {
                return Err(format!("set {set}: eps=0 probability {p} != empirical {frac} at sigma {s}"));
            }
        }

        let eps = epsilon_radius(ell, &cfg).unwrap();
        let sol = solve_sigma(&norm, eps, &cfg).unwrap();
        // The worst case does not increase with sigma, so a coarse scan brackets
        // the first feasible point of the fine grid.
        let coarse = 25;
        let feasible = |k: usize| grid_probability(&abs, k as f64 * step, eps) <= cfg.eta;
        let last = (cfg.sigma_max / step) as usize;
        let grid_sigma = (0..=last)
            .step_by(coarse)
            .chain(std::iter::once(last))
            .find(|&k| feasible(k))
            .map(|k| (k.saturating_sub(coarse - 1)..=k).find(|&j| feasible(j)).unwrap() as f64 * step);
        match grid_sigma {
            None => {
                if !sol.infeasible {
                    return Err(format!("set {set}: grid finds no feasible sigma, solver gives {}", sol.sigma));
                }
            }
            Some(g) => {
                let gap = (g - sol.sigma).abs();
                worst = worst.max(gap);
                if sol.infeasible || gap > step + cfg.tolerance + 1e-3 {
                    return Err(format!("set {set} (ell {ell}): solver sigma {} vs grid {g}", sol.sigma));
                }
            }
        }
    }
    Ok(format!("50 sets agree with the grid search (worst sigma gap {worst:.2e}); eps=0 matches empirical fractions exactly"))
}

fn radius() -> Outcome {
    let cfg = WassersteinConfig::default();
    // 50-digit decimal evaluation of 0.2 * sqrt((2/100) ln 50).
    let reference = 0.055_942_992_450_730_742_5;
    let e100 = epsilon_radius(100, &cfg).unwrap();
    let e1 = epsilon_radius(1, &cfg).unwrap();
    let e4 = epsilon_radius(4, &cfg).unwrap();
    check(
        (e100 - 0.05594).abs() <= 1e-5 && (e100 - reference).abs() <= 1e-15 && e1 == 2.0 * e4,
        format!("eps(100) = {e100:.10} (reference {reference:.10}); eps(1) = {e1} = 2 * {e4}"),
    )
}

fn gradients() -> Outcome {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let input = rng.gen_range(1..5);
        let hidden: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..8)).collect();
        let mut net = Mlp::new(LayerSpec::with_hidden(input, &hidden).unwrap(), 2.0, rng.gen());
        let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target = rng.gen_range(-2.0..2.0);
        let grad = net.gradient(&x, target).unwrap();
        for k in 0..grad.len() {
            let orig = net.params()[k];
            net.params_mut()[k] = orig + STEP;
            let up = (net.forward(&x).unwrap() - target).powi(2);
            net.params_mut()[k] = orig - STEP;
            let down = (net.forward(&x).unwrap() - target).powi(2);
            net.params_mut()[k] = orig;
            let fd = (up - down) / (2.0 * STEP);
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-7);
            worst = worst.max(rel);
            if rel > 1e-4 {
                return Err(format!("trial {trial} param {k}: relative error {rel:.2e}"));
            }
        }
    }
    Ok(format!("100 finite-difference checks, worst relative error {worst:.2e}"))
}

fn ecm() -> Outcome {
    let p = EcmParams::default();
    let ocv = OcvTable::standin();
    let s0 = EcmState::initial(&p);
    let inc = ecm_step(&p, &ocv, s0, 46.0).unwrap().next.soc - s0.soc;
    let exact = 46.0 * 2.5 / 8280.0;
    let soc_ok = (inc - exact).abs() <= 4.0 * f64::EPSILON;

    let v = 0.3;
    let decayed = ecm_step(&p, &ocv, EcmState { soc: 0.2, v_rc: v }, 0.0).unwrap().next.v_rc;
    let decay_ok = (decayed - 0.9 * v).abs() <= 4.0 * f64::EPSILON;

    let mut s = s0;
    for _ in 0..200 {
        s = ecm_step(&p, &ocv, s, 46.0).unwrap().next;
    }
    let fixed_ok = (s.v_rc - 0.46).abs() <= 1e-6;
    check(
        soc_ok && decay_ok && fixed_ok,
        format!(
            "SOC increment error {:.1e}; decay {:.16}; V_RC after 200 steps at 46 A {:.9}",
            inc - exact,
            decayed / v,
            s.v_rc
        ),
    )
}

fn contraction() -> Outcome {
    let mut env = ScriptedMdp::deep_safe(10);
    let enc = StateActionEncoder::for_env(&env).map_err(|e| e.to_string())?;
    let train = |epochs| TrainConfig {
        epochs,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let cfg = DrqConfig {
        explore_prob: 0.3,
        q_train: train(20),
        d_train: train(100),
        sweeps: 2,
        ..DrqConfig::default()
    };
    let mut agent = DrqAgent::new(enc, env.num_constraints(), cfg, 4).map_err(|e| e.to_string())?;
    let mut store = ReplayStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut qs = Vec::new();
    for _ in 0..20 {
        run_episode(&mut agent, &mut env, &mut store, &EpisodeConfig::default(), &mut rng)
            .map_err(|e| e.to_string())?;
        qs.push(agent.offset_details()[0].q);
    }
    let last = agent.offset_details()[0];
    let tail_monotone = qs[10..].windows(2).all(|w| w[1] <= w[0] + 1e-9);
    check(
        (last.q - last.mean).abs() < 1e-3 && tail_monotone,
        format!("q: 0.2 -> {:.3} -> {:.2e}, mean {:.2e}", qs[0], last.q, last.mean),
    )
}

fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    for n in &names {
        let x = std::fs::read(a.join(n)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(n)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{n} differs"));
        }
    }
    Ok(names.len())
}

fn determinism(drq: &Campaign) -> Outcome {
    let again = campaign("ecm_drq.toml", "drq_rerun")?;
    let files = same_files(&drq.dir, &again.dir)?;
    check(files == 30, format!("{files} CSVs byte-identical across reruns"))
}

const CAMPAIGN_CRITERIA: [&str; 4] =
    ["safety reproduction", "baseline contrast", "performance floor", "determinism"];

fn main() {
    // Free arguments filter criteria by substring, like libtest's name filter.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if !selected(name) {
            return;
        }
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &out {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {name} ({secs:.1} s): {detail}");
        results.push((name, out, secs));
    };

    run("dro oracle equivalence", &mut dro_oracle);
    run("radius formula", &mut radius);
    run("gradient correctness", &mut gradients);
    run("ecm exactness", &mut ecm);
    run("offset contraction", &mut contraction);

    if !CAMPAIGN_CRITERIA.iter().any(|n| selected(n)) {
        return report(&results);
    }
    let drq = campaign("ecm_drq.toml", "drq");
    let dqn = campaign("ecm_dqn.toml", "dqn");
    match (&drq, &dqn) {
        (Ok(drq), Ok(dqn)) => {
            run("safety reproduction", &mut || safety(drq));
            run("baseline contrast", &mut || contrast(drq, dqn));
            run("performance floor", &mut || performance(drq, dqn));
            run("determinism", &mut || determinism(drq));
        }
        _ => {
            let why = [&drq, &dqn]
                .iter()
                .filter_map(|c| c.as_ref().err().cloned())
                .collect::<Vec<_>>()
                .join("; ");
            for name in CAMPAIGN_CRITERIA {
                run(name, &mut || Err(format!("campaign failed: {why}")));
            }
        }
    }

    report(&results);
}

fn report(results: &[(&str, Outcome, f64)]) {
    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
