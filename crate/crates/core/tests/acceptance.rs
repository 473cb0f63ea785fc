//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` are reported but do not fail the
//! run; every other criterion must pass.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::{oracle_episode, relative_error, role_bits, role_sequences, toy, toy_policy, RawStep};
use guardsim::env::{
    AgentAction, EnvConfig, EpisodeOutcome, JointAction, Mode, NegotiationEnv, OutcomeKind,
};
use guardsim::harness::{self, Cell, EvalSettings, ExperimentPlan};
use guardsim::ledger::{EnergyModel, LedgerState};
use guardsim::metrics::{baselines, efficiency};
use guardsim::policies::{policy_gradient, LinearPolicy, PolicyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that cannot pass as stated, with the reason.
const KNOWN_UNATTAINABLE: &[(u32, &str)] = &[(
    1,
    "the stated P=-2.00 and S=-1.80 contradict both P=a+a, S=g+g and the stated ordering T>R>P>S",
)];

// Tolerances.
const PAYOFF_TOL: f64 = 1e-12;
const ORACLE_TOL: f64 = 1e-12;
const SCRIPTED_E_MIN: f64 = 0.96;
const SCRIPTED_J_MIN: f64 = 0.99;
const LEARNED_I_E_MIN: f64 = 0.9;
const LEARNED_I_J_MIN: f64 = 0.9;
const LEARNED_SEEDS_MIN: usize = 3;
const LEARNED_F_E_MAX: f64 = 0.2;
const LEARNED_F_IC_TOL: f64 = 0.15;
const SAFETY_TOL: f64 = 1e-9;
const IC_SERVED: f64 = 0.551;
const IC_TOL: f64 = 0.001;
const NOISE_LO: f64 = 0.90;
const NOISE_HI: f64 = 1.10;
const NOISE_MEAN_TOL: f64 = 0.01;
const GRAD_TOL: f64 = 1e-4;

const RUNS: usize = 5;
const TRAIN_BUDGET: u64 = 200_000;
const EVAL_EPISODES: usize = 100;

type Criterion = (u32, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1_payoffs() -> Verdict {
    let out = Command::new(env!("CARGO_BIN_EXE_guardsim"))
        .args(["payoffs", "--o", "-0.01", "--a", "-0.90", "--g", "-1.00"])
        .output()
        .expect("run payoffs");
    let text = String::from_utf8_lossy(&out.stdout);
    let printed: BTreeMap<String, f64> = text
        .lines()
        .next()
        .unwrap_or("")
        .split_whitespace()
        .filter_map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.parse().unwrap_or(f64::NAN)))
        })
        .collect();
    let pm = guardsim::payoff_matrix(-0.01f64, -0.90, -1.00);
    let expected = [
        ("T", pm.t, -0.02),
        ("R", pm.r, -1.01),
        ("P", pm.p, -2.00),
        ("S", pm.s, -1.80),
    ];
    let mut mismatches = Vec::new();
    for (name, value, target) in expected {
        let shown = printed.get(name).copied().unwrap_or(f64::NAN);
        if (value - target).abs() >= PAYOFF_TOL || (shown - target).abs() >= PAYOFF_TOL {
            mismatches.push(format!("{name}={value:.2} (expected {target:.2})"));
        }
    }
    let ordered = pm.t > pm.r && pm.r > pm.p && pm.p > pm.s && text.contains("T>R>P>S: true");
    let iterated = (2.0 * pm.r - (pm.t + pm.s)).abs() < PAYOFF_TOL && text.contains("2R=T+S: true");
    let detail = format!(
        "{}; T>R>P>S {}; 2R=T+S {}",
        if mismatches.is_empty() {
            "all four values exact".to_string()
        } else {
            format!("mismatch {}", mismatches.join(", "))
        },
        if ordered { "holds" } else { "violated" },
        if iterated { "holds" } else { "violated" },
    );
    verdict(mismatches.is_empty() && ordered && iterated, detail)
}

fn criterion_2_oracle() -> Verdict {
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for mode in Mode::ALL {
        for max_steps in 1..=3 {
            for seq in role_sequences(3, max_steps) {
                for designated in 0..3 {
                    let steps: Vec<RawStep> = seq
                        .iter()
                        .map(|roles| role_bits(roles, designated))
                        .collect();
                    checked += 1;
                    if let Err(e) = compare_with_oracle(mode, max_steps, &steps) {
                        failures.push(format!("{mode} T={max_steps} d={designated}: {e}"));
                    }
                }
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{checked} sequences agree on outcome, rewards and E")
    } else {
        format!(
            "{} of {checked} disagree, first: {}",
            failures.len(),
            failures[0]
        )
    };
    verdict(failures.is_empty(), detail)
}

fn compare_with_oracle(mode: Mode, max_steps: usize, steps: &[RawStep]) -> Result<(), String> {
    let config = EnvConfig::<f64>::new(3, mode).with_max_steps(max_steps);
    let mut env = NegotiationEnv::new(config.clone()).unwrap();
    env.reset();
    let relay_only = (mode == Mode::Imposed).then(|| env.recommended().unwrap());
    let expected = oracle_episode(steps, max_steps, relay_only);
    for (t, raw) in steps.iter().enumerate() {
        let joint = JointAction::all(
            (0..3)
                .map(|i| AgentAction {
                    offers: raw.offers[i].clone(),
                    demands: raw.demands[i].clone(),
                })
                .collect(),
        );
        let res = env.step(&joint).map_err(|e| e.to_string())?;
        if res.rewards != expected.rewards[t] {
            return Err(format!(
                "step {t} rewards {:?} vs {:?}",
                res.rewards, expected.rewards[t]
            ));
        }
        if let Some(outcome) = res.outcome {
            let e =
                efficiency(&outcome.returns, &baselines(3, &config.rewards, max_steps)).unwrap();
            let same = outcome.is_success() == expected.success
                && outcome.on_guard == expected.on_guard
                && outcome.steps_taken == expected.steps
                && (e - expected.efficiency).abs() < ORACLE_TOL;
            return if same {
                Ok(())
            } else {
                Err(format!("outcome {outcome:?}, E={e}"))
            };
        }
    }
    Err("episode did not terminate".into())
}

fn criterion_3_scripted_fairness() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for n in [3, 4] {
        let cfg = EnvConfig::<f64>::new(n, Mode::Imposed);
        let settings = EvalSettings {
            episodes: 100,
            replays: 1,
            seed: 0,
        };
        let frag =
            harness::run_evaluation(&cfg, &vec![PolicyKind::Cooperate; n], &settings, 0).unwrap();
        let min_e = frag
            .rows
            .iter()
            .map(|r| r.efficiency)
            .fold(f64::INFINITY, f64::min);
        let one_step = frag
            .outcomes
            .iter()
            .all(|o| o.is_success() && o.steps_taken == 1);
        let j_last = frag.rows.last().unwrap().jain;
        pass &= min_e >= SCRIPTED_E_MIN && j_last >= SCRIPTED_J_MIN && one_step;
        parts.push(format!(
            "N={n}: min E={min_e:.4}, J@100={j_last:.4}, all 1-step={one_step}"
        ));
    }
    verdict(pass, parts.join("; "))
}

struct LearnedRun {
    e: f64,
    j: f64,
    ic: f64,
}

fn learned_runs(mode: Mode) -> Vec<LearnedRun> {
    let cell = Cell::new(3, mode);
    let plan = ExperimentPlan {
        grid: vec![cell],
        runs_per_cell: RUNS,
        eval_episodes: EVAL_EPISODES,
        train_step_budget: TRAIN_BUDGET,
        ..Default::default()
    };
    let report = harness::run_grid(&plan, None).unwrap();
    (0..RUNS)
        .map(|run| {
            let rows: Vec<_> = report.rows.iter().filter(|r| r.run == run).collect();
            let mean = |f: fn(&guardsim::metrics::EpisodeMetrics<f64>) -> f64| {
                rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
            };
            LearnedRun {
                e: mean(|r| r.efficiency),
                j: mean(|r| r.jain),
                ic: mean(|r| r.ic_mean),
            }
        })
        .collect()
}

fn criterion_4_learned_imposed() -> Verdict {
    let runs = learned_runs(Mode::Imposed);
    let good = runs
        .iter()
        .filter(|r| r.e >= LEARNED_I_E_MIN && r.j >= LEARNED_I_J_MIN)
        .count();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("E={:.3}/J={:.3}", r.e, r.j))
        .collect();
    verdict(
        good >= LEARNED_SEEDS_MIN,
        format!(
            "{good}/{RUNS} seeds with E>={LEARNED_I_E_MIN} and J>={LEARNED_I_J_MIN} [{}]",
            per_seed.join(" ")
        ),
    )
}

fn criterion_5_learned_free() -> Verdict {
    let runs = learned_runs(Mode::Free);
    let e = runs.iter().map(|r| r.e).sum::<f64>() / runs.len() as f64;
    let ic = runs.iter().map(|r| r.ic).sum::<f64>() / runs.len() as f64;
    let good = runs
        .iter()
        .filter(|r| r.e <= LEARNED_F_E_MAX && r.ic.abs() <= LEARNED_F_IC_TOL)
        .count();
    verdict(
        e <= LEARNED_F_E_MAX && ic.abs() <= LEARNED_F_IC_TOL && good >= LEARNED_SEEDS_MIN,
        format!("mean E={e:.3}, mean IC={ic:+.3}, {good}/{RUNS} seeds within bounds"),
    )
}

fn criterion_6_safety() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in [3, 4] {
        for mode in Mode::ALL {
            let mut cfg = EnvConfig::<f64>::new(n, mode);
            cfg.blacklist.enabled = false;
            let trained = harness::run_training(&cfg, &Default::default(), 20_000).unwrap();
            let mut perturbed: Vec<PolicyKind<f64>> = (0..n)
                .map(|i| {
                    let mut p = LinearPolicy::for_agent(n, i);
                    let w = (0..p.weights().len())
                        .map(|_| rng.gen_range(-3.0..3.0))
                        .collect();
                    let b = (0..p.bias().len())
                        .map(|_| rng.gen_range(-3.0..3.0))
                        .collect();
                    p.set_parameters(w, b).unwrap();
                    PolicyKind::Learner(p)
                })
                .collect();
            perturbed[0] = PolicyKind::Cooperate;
            let checkpoints: Vec<Vec<PolicyKind<f64>>> = vec![
                vec![PolicyKind::Cooperate; n],
                vec![PolicyKind::Defect; n],
                vec![PolicyKind::Random; n],
                trained
                    .policies
                    .into_iter()
                    .map(PolicyKind::Learner)
                    .collect(),
                perturbed,
            ];
            for policies in checkpoints {
                let settings = EvalSettings {
                    episodes: 20,
                    replays: 5,
                    seed: cases,
                };
                let frag = harness::run_evaluation(&cfg, &policies, &settings, 0).unwrap();
                for row in &frag.rows {
                    for sf in row.safety.iter().flatten() {
                        worst = worst.max((sf - 1.0).abs());
                    }
                }
                cases += 1;
            }
        }
    }
    verdict(
        worst <= SAFETY_TOL,
        format!("{cases} checkpoints, max |Sf-1| = {worst:.2e}"),
    )
}

fn criterion_7_ic_served() -> Verdict {
    let cfg = EnvConfig::<f64>::new(3, Mode::Imposed);
    let settings = EvalSettings {
        episodes: 30,
        replays: 1,
        seed: 7,
    };
    let frag =
        harness::run_evaluation(&cfg, &vec![PolicyKind::Cooperate; 3], &settings, 0).unwrap();
    let mut values = Vec::new();
    for (row, outcome) in frag.rows.iter().zip(&frag.outcomes) {
        if outcome.is_success() && outcome.steps_taken == 1 {
            values.extend(outcome.served.iter().filter_map(|&j| row.ic[j]));
        }
    }
    let worst = values
        .iter()
        .map(|v| (v - IC_SERVED).abs())
        .fold(0.0, f64::max);
    verdict(
        !values.is_empty() && worst <= IC_TOL,
        format!(
            "{} served-agent values, max |IC-{IC_SERVED}| = {worst:.5}",
            values.len()
        ),
    )
}

fn criterion_8_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    fs::write(
        &plan,
        r#"{"grid":[{"n_agents":3,"mode":"F"},{"n_agents":3,"mode":"I"},{"n_agents":4,"mode":"R"}],
            "runs_per_cell":2,"eval_episodes":20,"train_step_budget":20000,"seed_base":42,
            "counterfactual_replays":10}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_guardsim"))
            .args([
                "grid",
                "--plan",
                plan.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .expect("run grid");
        if !status.status.success() {
            return verdict(
                false,
                format!("grid failed: {}", String::from_utf8_lossy(&status.stderr)),
            );
        }
        outputs.push((
            fs::read(out.join("episodes.csv")).unwrap(),
            fs::read(out.join("aggregate.csv")).unwrap(),
        ));
    }
    let same_episodes = outputs[0].0 == outputs[1].0;
    let same_aggregate = outputs[0].1 == outputs[1].1;
    verdict(
        same_episodes && same_aggregate,
        format!(
            "episodes.csv identical={same_episodes} ({} bytes), aggregate.csv identical={same_aggregate}",
            outputs[0].0.len()
        ),
    )
}

fn criterion_9_ledger_noise() -> Verdict {
    let model = EnergyModel::<f64>::default();
    let mut ledger = LedgerState::new(2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for e in 0..10_000u64 {
        let outcome = EpisodeOutcome {
            kind: OutcomeKind::Success,
            on_guard: Some(0),
            served: vec![1],
            steps_taken: 1,
            returns: vec![-1.0, -0.01],
            active: vec![0, 1],
            recommended: Some(0),
            episode: e,
        };
        ledger.report_consumption(&outcome, &model, &mut rng);
    }
    let values: Vec<f64> = ledger.entries().iter().map(|e| e.reported_kwh).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    verdict(
        values.len() == 10_000
            && lo >= NOISE_LO
            && hi <= NOISE_HI
            && (mean - 1.0).abs() <= NOISE_MEAN_TOL,
        format!(
            "{} reports in [{lo:.4}, {hi:.4}], mean {mean:.4}",
            values.len()
        ),
    )
}

fn criterion_10_gradient() -> Verdict {
    let toy = toy();
    let policy = toy_policy();
    let (grad, _) =
        policy_gradient(&policy, &toy.exact_batch(&policy), 1.0, toy.entropy_bonus).unwrap();
    let analytic: Vec<f64> = grad.weights.iter().chain(&grad.bias).copied().collect();
    let numeric = toy.finite_difference(&policy, 1e-5);
    let err = relative_error(&analytic, &numeric);
    verdict(
        err < GRAD_TOL,
        format!(
            "relative error {err:.2e} over {} parameters",
            analytic.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "payoff identities", criterion_1_payoffs),
        (2, "brute-force oracle equivalence", criterion_2_oracle),
        (
            3,
            "scripted cooperation fairness",
            criterion_3_scripted_fairness,
        ),
        (4, "learned imposed mode", criterion_4_learned_imposed),
        (5, "learned free mode", criterion_5_learned_free),
        (6, "safety closed form", criterion_6_safety),
        (7, "IC of a served agent", criterion_7_ic_served),
        (8, "grid determinism", criterion_8_determinism),
        (9, "ledger noise", criterion_9_ledger_noise),
        (10, "gradient check", criterion_10_gradient),
    ];
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let v = check();
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_UNATTAINABLE.iter().find(|(k, _)| *k == id);
        println!(
            "{} [{id:>2}] {name}: {} ({secs:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        match (v.pass, known) {
            (false, Some((_, why))) => println!("          known unattainable: {why}"),
            (false, None) => unexpected += 1,
            _ => {}
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
