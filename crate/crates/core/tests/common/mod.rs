//! Reference implementations used as test oracles. They are written from the
//! game rules directly and share no code with the library.

#![allow(dead_code)]

use guardsim::policies::{LinearPolicy, Trajectory, TrajectoryStep};

pub const ON_GUARD: f64 = -1.00;
pub const FOUND: f64 = -0.01;
pub const FAIL: f64 = -0.90;
pub const STEP: f64 = -0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEpisode {
    pub success: bool,
    pub on_guard: Option<usize>,
    pub steps: usize,
    /// Reward of every agent at every step played.
    pub rewards: Vec<Vec<f64>>,
    pub returns: Vec<f64>,
    pub efficiency: f64,
}

/// Raw offer/demand matrices: `offers[i][j]` means i offers to be on-guard for j.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStep {
    pub offers: Vec<Vec<bool>>,
    pub demands: Vec<Vec<bool>>,
}

/// Bits of the cooperate role (`true`) or the defect role (`false`) when
/// `designated` is the agreed on-guard agent.
pub fn role_bits(roles: &[bool], designated: usize) -> RawStep {
    let n = roles.len();
    let mut offers = vec![vec![false; n]; n];
    let mut demands = vec![vec![false; n]; n];
    for (i, &cooperates) in roles.iter().enumerate() {
        if !cooperates {
            continue;
        }
        if i == designated {
            offers[i] = (0..n).map(|j| j != i).collect();
        } else {
            demands[i][designated] = true;
        }
    }
    RawStep { offers, demands }
}

fn agreement(step: &RawStep) -> Option<usize> {
    let n = step.offers.len();
    (0..n).find(|&i| {
        (0..n)
            .filter(|&j| j != i)
            .all(|j| step.offers[i][j] && step.demands[j][i])
    })
}

/// Plays `steps` until agreement or `max_steps`, all agents active. When
/// `relay_only` is set, offers of every other agent are dropped.
pub fn oracle_episode(
    steps: &[RawStep],
    max_steps: usize,
    relay_only: Option<usize>,
) -> OracleEpisode {
    let n = steps[0].offers.len();
    let mut rewards = Vec::new();
    let mut returns = vec![0.0; n];
    for (t, raw) in steps.iter().take(max_steps).enumerate() {
        let mut relayed = raw.clone();
        if let Some(r) = relay_only {
            for i in (0..n).filter(|&i| i != r) {
                relayed.offers[i] = vec![false; n];
            }
        }
        let r = if let Some(g) = agreement(&relayed) {
            let r: Vec<f64> = (0..n)
                .map(|i| if i == g { ON_GUARD } else { FOUND })
                .collect();
            add(&mut returns, &r);
            rewards.push(r);
            return finish(true, Some(g), t + 1, rewards, returns, max_steps);
        } else if t + 1 == max_steps {
            vec![FAIL; n]
        } else {
            vec![STEP; n]
        };
        add(&mut returns, &r);
        rewards.push(r);
    }
    assert_eq!(
        rewards.len(),
        max_steps,
        "action sequence shorter than the episode"
    );
    finish(false, None, max_steps, rewards, returns, max_steps)
}

fn add(acc: &mut [f64], r: &[f64]) {
    for (a, b) in acc.iter_mut().zip(r) {
        *a += b;
    }
}

fn finish(
    success: bool,
    on_guard: Option<usize>,
    steps: usize,
    rewards: Vec<Vec<f64>>,
    returns: Vec<f64>,
    max_steps: usize,
) -> OracleEpisode {
    let n = returns.len() as f64;
    let g_d = STEP * (max_steps as f64 - 1.0) + FAIL;
    let sw_c = ON_GUARD + (n - 1.0) * FOUND;
    let sw_d = n * g_d;
    let sw: f64 = returns.iter().sum();
    OracleEpisode {
        success,
        on_guard,
        steps,
        rewards,
        returns,
        efficiency: (sw - sw_d) / (sw_c - sw_d),
    }
}

/// Every sequence of `len` joint role assignments for `n` agents.
pub fn role_sequences(n: usize, len: usize) -> Vec<Vec<Vec<bool>>> {
    let per_step = 1usize << n;
    let total = per_step.pow(len as u32);
    (0..total)
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let joint = code % per_step;
                    code /= per_step;
                    (0..n).map(|i| joint >> i & 1 == 1).collect()
                })
                .collect()
        })
        .collect()
}

/// One-agent, one-step toy problem: features `x`, per-action reward `reward`.
pub struct Toy {
    pub x: Vec<f64>,
    pub reward: fn(&[bool]) -> f64,
    pub entropy_bonus: f64,
}

impl Toy {
    fn actions(policy: &LinearPolicy<f64>) -> Vec<Vec<bool>> {
        let free: Vec<usize> = (0..policy.act_dim())
            .filter(|&k| policy.allowed()[k])
            .collect();
        (0..1usize << free.len())
            .map(|code| {
                let mut a = vec![false; policy.act_dim()];
                for (b, &k) in free.iter().enumerate() {
                    a[k] = code >> b & 1 == 1;
                }
                a
            })
            .collect()
    }

    fn prob(policy: &LinearPolicy<f64>, x: &[f64], a: &[bool]) -> f64 {
        let mut p = 1.0;
        for k in (0..policy.act_dim()).filter(|&k| policy.allowed()[k]) {
            let row = &policy.weights()[k * policy.obs_dim()..(k + 1) * policy.obs_dim()];
            let z = policy.bias()[k] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
            let s = 1.0 / (1.0 + (-z).exp());
            p *= if a[k] { s } else { 1.0 - s };
        }
        p
    }

    fn bit_entropy(policy: &LinearPolicy<f64>, x: &[f64]) -> f64 {
        (0..policy.act_dim())
            .filter(|&k| policy.allowed()[k])
            .map(|k| {
                let row = &policy.weights()[k * policy.obs_dim()..(k + 1) * policy.obs_dim()];
                let z = policy.bias()[k] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
                let p = 1.0 / (1.0 + (-z).exp());
                -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
            })
            .sum()
    }

    /// Expected reward plus the entropy bonus, summed exactly over actions.
    pub fn objective(&self, policy: &LinearPolicy<f64>) -> f64 {
        let expected: f64 = Self::actions(policy)
            .iter()
            .map(|a| Self::prob(policy, &self.x, a) * (self.reward)(a))
            .sum();
        expected + self.entropy_bonus * Self::bit_entropy(policy, &self.x)
    }

    /// Every action once, weighted by its probability: the batch whose
    /// surrogate gradient equals the exact objective gradient.
    pub fn exact_batch(&self, policy: &LinearPolicy<f64>) -> Vec<Trajectory<f64>> {
        Self::actions(policy)
            .into_iter()
            .map(|a| Trajectory {
                weight: Self::prob(policy, &self.x, &a),
                steps: vec![TrajectoryStep {
                    features: self.x.clone(),
                    reward: (self.reward)(&a),
                    action: Some(a),
                }],
            })
            .collect()
    }

    /// Central finite differences of `objective` for every parameter,
    /// weights first (row-major) then biases.
    pub fn finite_difference(&self, policy: &LinearPolicy<f64>, h: f64) -> Vec<f64> {
        let (w, b) = (policy.weights().to_vec(), policy.bias().to_vec());
        let mut out = Vec::new();
        for idx in 0..w.len() + b.len() {
            let eval = |delta: f64| {
                let (mut w2, mut b2) = (w.clone(), b.clone());
                if idx < w.len() {
                    w2[idx] += delta;
                } else {
                    b2[idx - w.len()] += delta;
                }
                let mut p = policy.clone();
                p.set_parameters(w2, b2).unwrap();
                self.objective(&p)
            };
            out.push((eval(h) - eval(-h)) / (2.0 * h));
        }
        out
    }
}

/// A toy policy with three features, three bits (the middle one masked) and
/// non-trivial parameters.
pub fn toy_policy() -> LinearPolicy<f64> {
    let mut policy = LinearPolicy::<f64>::new(3, 3, vec![true, false, true]);
    let weights = vec![0.3, -0.7, 0.2, 0.0, 0.0, 0.0, -0.4, 0.5, 0.9];
    policy
        .set_parameters(weights, vec![0.1, 0.0, -0.6])
        .unwrap();
    policy
}

pub fn toy() -> Toy {
    Toy {
        x: vec![1.0, 0.5, -1.0],
        reward: |a| match (a[0], a[2]) {
            (true, true) => -0.01,
            (true, false) => -1.00,
            (false, true) => -0.90,
            (false, false) => -0.99,
        },
        entropy_bonus: 0.05,
    }
}

/// Largest relative error between two gradient vectors, relative to the
/// larger of the vector norms.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = a
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|v| v * v).sum::<f64>().sqrt());
    let worst = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    worst / scale
}
