//! Single-agent MDPs induced by folding the opponent into the environment,
//! value iteration (plain and entropy-regularized), best responses and
//! tabular Q-learning.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{sample_index, Agent, Dims, GameSpec, JointState, Policy, Tables};
use crate::meanfield::MeanField;
use crate::policy_ops::{argmax_uniform, entropy, softmax};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    None,
    Entropy(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BRConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub regularizer: Regularizer,
}

impl Default for BRConfig {
    fn default() -> Self {
        BRConfig {
            tolerance: 1e-10,
            max_iterations: 100_000,
            regularizer: Regularizer::None,
        }
    }
}

impl BRConfig {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_entropy(mut self, rho: f64) -> Self {
        self.regularizer = Regularizer::Entropy(rho);
        self
    }
}

/// Finite MDP over effective (joint) states.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// `reward[s * n_actions + a]`
    pub reward: Vec<f64>,
    /// `kernel[(s * n_actions + a) * n_states + s']`
    pub kernel: Vec<f64>,
}

impl Mdp {
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.kernel[i..i + self.n_states]
    }

    /// Nonzero entries of each `(s, a)` row.
    pub fn sparse_rows(&self) -> Vec<Vec<(usize, f64)>> {
        self.kernel
            .chunks(self.n_states)
            .map(|r| r.iter().enumerate().filter(|(_, p)| **p != 0.0).map(|(i, p)| (i, *p)).collect())
            .collect()
    }
}

/// Effective-state MDP for `agent` with the opponent policy averaged out.
pub fn induced_mdp(spec: &GameSpec, agent: Agent, opponent: &Policy, mf: Option<&MeanField>) -> Result<Mdp> {
    let t = spec.tables_at(mf);
    induced_from_tables(&spec.dims, &t, spec.gamma(agent), agent, opponent)
}

pub fn induced_from_tables(d: &Dims, t: &Tables, gamma: f64, agent: Agent, opponent: &Policy) -> Result<Mdp> {
    let other = agent.other();
    let nj = d.joint_states();
    opponent.check_shape(nj, d.actions(other))?;
    let na = d.actions(agent);
    let nb = d.actions(other);
    let mut reward = vec![0.0; nj * na];
    let mut kernel = vec![0.0; nj * na * nj];
    for j in 0..nj {
        let js = d.split(j);
        let (own, oth) = match agent {
            Agent::Leader => (js.s_l, js.s_f),
            Agent::Follower => (js.s_f, js.s_l),
        };
        let pb = opponent.row(j);
        for a in 0..na {
            let base = (j * na + a) * nj;
            for (b, &w) in pb.iter().enumerate().take(nb) {
                if w == 0.0 {
                    continue;
                }
                reward[j * na + a] += w * t.reward(d, agent, own, oth, a, b);
                let p_own = t.transition(d, agent, own, a, b);
                let p_oth = t.transition(d, other, oth, b, a);
                for (s1, &p1) in p_own.iter().enumerate() {
                    if p1 == 0.0 {
                        continue;
                    }
                    for (s2, &p2) in p_oth.iter().enumerate() {
                        let next = match agent {
                            Agent::Leader => d.joint(JointState { s_l: s1, s_f: s2 }),
                            Agent::Follower => d.joint(JointState { s_l: s2, s_f: s1 }),
                        };
                        kernel[base + next] += w * p1 * p2;
                    }
                }
            }
        }
    }
    Ok(Mdp {
        n_states: nj,
        n_actions: na,
        gamma,
        reward,
        kernel,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm Bellman residual of `values`.
    pub residual: f64,
    /// Successive sup-norm differences, one per iteration.
    pub history: Vec<f64>,
}

impl QTable {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_actions)
    }

    pub fn greedy(&self) -> Policy {
        let probs = self.rows().flat_map(argmax_uniform).collect();
        Policy {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["state", "action", "value"])?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                wr.write_record([s.to_string(), a.to_string(), crate::fmt_f64(self.values[s * self.n_actions + a])])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn soft_value(row: &[f64], reg: Regularizer) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    match reg {
        Regularizer::None => max,
        Regularizer::Entropy(rho) => max + rho * row.iter().map(|q| ((q - max) / rho).exp()).sum::<f64>().ln(),
    }
}

/// One application of the (possibly regularized) Bellman operator.
pub fn bellman(mdp: &Mdp, q: &[f64], reg: Regularizer) -> Vec<f64> {
    bellman_sparse(mdp, &mdp.sparse_rows(), q, reg)
}

fn bellman_sparse(mdp: &Mdp, rows: &[Vec<(usize, f64)>], q: &[f64], reg: Regularizer) -> Vec<f64> {
    let v: Vec<f64> = q.chunks(mdp.n_actions).map(|r| soft_value(r, reg)).collect();
    rows.iter()
        .zip(&mdp.reward)
        .map(|(row, r)| r + mdp.gamma * row.iter().map(|&(s2, p)| p * v[s2]).sum::<f64>())
        .collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Iterates from zero until the Bellman residual of the current table is at most the tolerance.
pub fn value_iteration(mdp: &Mdp, cfg: &BRConfig) -> Result<QTable> {
    value_iteration_from(mdp, cfg, None)
}

pub fn value_iteration_from(mdp: &Mdp, cfg: &BRConfig, start: Option<&[f64]>) -> Result<QTable> {
    if !(cfg.tolerance > 0.0) {
        return Err(Error::Invalid("tolerance must be positive".into()));
    }
    if !(0.0..1.0).contains(&mdp.gamma) {
        return Err(Error::Invalid(format!("discount {} outside [0,1)", mdp.gamma)));
    }
    if let Regularizer::Entropy(rho) = cfg.regularizer {
        if !(rho > 0.0) {
            return Err(Error::Invalid("entropy weight must be positive".into()));
        }
    }
    let mut q = match start {
        Some(s) if s.len() == mdp.n_states * mdp.n_actions => s.to_vec(),
        _ => vec![0.0; mdp.n_states * mdp.n_actions],
    };
    let rows = mdp.sparse_rows();
    let mut history = Vec::new();
    for it in 0..cfg.max_iterations {
        let next = bellman_sparse(mdp, &rows, &q, cfg.regularizer);
        let diff = sup_diff(&next, &q);
        history.push(diff);
        if diff <= cfg.tolerance {
            return Ok(QTable {
                n_states: mdp.n_states,
                n_actions: mdp.n_actions,
                values: q,
                iterations: it,
                residual: diff,
                history,
            });
        }
        q = next;
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iterations,
        residual: *history.last().unwrap_or(&f64::INFINITY),
    })
}

pub fn best_response(spec: &GameSpec, agent: Agent, opponent: &Policy, mf: Option<&MeanField>, cfg: &BRConfig) -> Result<Policy> {
    let mdp = induced_mdp(spec, agent, opponent, mf)?;
    let cfg = BRConfig {
        regularizer: Regularizer::None,
        ..*cfg
    };
    Ok(value_iteration(&mdp, &cfg)?.greedy())
}

/// Softmax of the converged regularized action values at temperature `1/rho`.
pub fn regularized_best_response(
    spec: &GameSpec,
    agent: Agent,
    opponent: &Policy,
    mf: Option<&MeanField>,
    cfg: &BRConfig,
) -> Result<Policy> {
    let mdp = induced_mdp(spec, agent, opponent, mf)?;
    regularized_policy(&mdp, cfg)
}

pub fn regularized_policy(mdp: &Mdp, cfg: &BRConfig) -> Result<Policy> {
    let Regularizer::Entropy(rho) = cfg.regularizer else {
        return Err(Error::Invalid("regularized best response needs an entropy weight".into()));
    };
    let q = value_iteration(mdp, cfg)?;
    softmax_policy(&q, 1.0 / rho)
}

pub fn softmax_policy(q: &QTable, alpha: f64) -> Result<Policy> {
    let mut probs = Vec::with_capacity(q.values.len());
    for row in q.rows() {
        probs.extend(softmax(row, alpha)?);
    }
    Ok(Policy {
        n_states: q.n_states,
        n_actions: q.n_actions,
        probs,
    })
}

/// Exact (optionally entropy-augmented) value of a stationary policy by a linear solve.
pub fn evaluate_policy(mdp: &Mdp, policy: &Policy, reg: Regularizer) -> Result<Vec<f64>> {
    policy.check_shape(mdp.n_states, mdp.n_actions)?;
    let n = mdp.n_states;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        let pi = policy.row(s);
        let mut rs = 0.0;
        for (act, &w) in pi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            rs += w * mdp.reward[s * mdp.n_actions + act];
            for (s2, p) in mdp.row(s, act).iter().enumerate() {
                a[(s, s2)] -= mdp.gamma * w * p;
            }
        }
        if let Regularizer::Entropy(rho) = reg {
            rs += rho * entropy(pi);
        }
        r[s] = rs;
    }
    let v = a
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Invalid("singular policy-evaluation system".into()))?;
    Ok(v.iter().cloned().collect())
}

/// Value of a policy pair for `agent`, one entry per joint state.
pub fn pair_values(
    spec: &GameSpec,
    agent: Agent,
    own: &Policy,
    opponent: &Policy,
    mf: Option<&MeanField>,
    reg: Regularizer,
) -> Result<Vec<f64>> {
    let mdp = induced_mdp(spec, agent, opponent, mf)?;
    evaluate_policy(&mdp, own, reg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `1 / (1 + n(s,a))`
    Harmonic,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exploration {
    Constant(f64),
    /// `max(floor, start / (1 + episode / scale))`
    Decaying { start: f64, floor: f64, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLearningConfig {
    pub episodes: usize,
    pub episode_len: usize,
    pub step: StepSchedule,
    pub exploration: Exploration,
    pub seed: u64,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        QLearningConfig {
            episodes: 10_000,
            episode_len: 20,
            step: StepSchedule::Harmonic,
            exploration: Exploration::Constant(0.2),
            seed: 0,
        }
    }
}

/// Tabular Q-learning against the opponent policy on simulated transitions.
pub fn q_learning(spec: &GameSpec, agent: Agent, opponent: &Policy, mf: Option<&MeanField>, cfg: &QLearningConfig) -> Result<QTable> {
    let d = spec.dims;
    let t = spec.tables_at(mf);
    let other = agent.other();
    let nj = d.joint_states();
    let na = d.actions(agent);
    opponent.check_shape(nj, d.actions(other))?;
    let gamma = spec.gamma(agent);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q = vec![0.0; nj * na];
    let mut visits = vec![0u64; nj * na];
    for ep in 0..cfg.episodes {
        let eps = match cfg.exploration {
            Exploration::Constant(e) => e,
            Exploration::Decaying { start, floor, scale } => (start / (1.0 + ep as f64 / scale)).max(floor),
        };
        let mut j = rng.random_range(0..nj);
        for _ in 0..cfg.episode_len {
            let js = d.split(j);
            let row = &q[j * na..(j + 1) * na];
            let a = if rng.random::<f64>() < eps {
                rng.random_range(0..na)
            } else {
                let greedy = argmax_uniform(row);
                sample_index(&mut rng, &greedy)
            };
            let b = sample_index(&mut rng, opponent.row(j));
            let (own, oth) = match agent {
                Agent::Leader => (js.s_l, js.s_f),
                Agent::Follower => (js.s_f, js.s_l),
            };
            let r = t.reward(&d, agent, own, oth, a, b);
            let own2 = sample_index(&mut rng, t.transition(&d, agent, own, a, b));
            let oth2 = sample_index(&mut rng, t.transition(&d, other, oth, b, a));
            let j2 = match agent {
                Agent::Leader => d.joint(JointState { s_l: own2, s_f: oth2 }),
                Agent::Follower => d.joint(JointState { s_l: oth2, s_f: own2 }),
            };
            let target = r + gamma * q[j2 * na..(j2 + 1) * na].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let k = j * na + a;
            visits[k] += 1;
            let lr = match cfg.step {
                StepSchedule::Harmonic => 1.0 / (1.0 + visits[k] as f64),
                StepSchedule::Constant(c) => c,
            };
            q[k] += lr * (target - q[k]);
            j = j2;
        }
    }
    let residual = {
        let mdp = induced_from_tables(&d, &t, gamma, agent, opponent)?;
        sup_diff(&bellman(&mdp, &q, Regularizer::None), &q)
    };
    Ok(QTable {
        n_states: nj,
        n_actions: na,
        values: q,
        iterations: cfg.episodes,
        residual,
        history: Vec::new(),
    })
}

/// Measured Lipschitz constants of rewards and joint kernel and the implied
/// regularized best-response constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedLipschitz {
    pub d_r: f64,
    pub d_p: f64,
    pub rho: f64,
    pub gamma: f64,
    pub d_reg: f64,
    /// Whether `gamma * d_p / 2` lies in `[0, 1]`.
    pub kernel_condition: bool,
}

pub fn d_reg_formula(d_r: f64, d_p: f64, rho: f64, gamma: f64) -> f64 {
    let h = gamma * d_p / 2.0;
    (d_r / rho) * (1.0 + gamma / ((1.0 - gamma) * (1.0 - h)) + h / (1.0 - h))
}

/// Largest change of reward and of the joint next-state distribution when a
/// single coordinate among `(s_i, s_-i, a_i, a_-i)` changes, under the
/// discrete metric on each coordinate.
pub fn measure_table_lipschitz(d: &Dims, t: &Tables, agent: Agent) -> (f64, f64) {
    let other = agent.other();
    let (ns_i, ns_o, na_i, na_o) = (d.states(agent), d.states(other), d.actions(agent), d.actions(other));
    let joint_next = |si: usize, so: usize, a: usize, b: usize| -> Vec<f64> {
        let p1 = t.transition(d, agent, si, a, b);
        let p2 = t.transition(d, other, so, b, a);
        p1.iter().flat_map(|x| p2.iter().map(move |y| x * y)).collect()
    };
    let mut d_r = 0.0f64;
    let mut d_p = 0.0f64;
    let mut pts = Vec::new();
    for si in 0..ns_i {
        for so in 0..ns_o {
            for a in 0..na_i {
                for b in 0..na_o {
                    pts.push([si, so, a, b]);
                }
            }
        }
    }
    let mut cache = std::collections::HashMap::new();
    for p in &pts {
        cache.insert(*p, (t.reward(d, agent, p[0], p[1], p[2], p[3]), joint_next(p[0], p[1], p[2], p[3])));
    }
    let limits = [ns_i, ns_o, na_i, na_o];
    for p in &pts {
        let (r0, k0) = &cache[p];
        for c in 0..4 {
            for v in (p[c] + 1)..limits[c] {
                let mut q = *p;
                q[c] = v;
                let (r1, k1) = &cache[&q];
                d_r = d_r.max((r0 - r1).abs());
                d_p = d_p.max(crate::policy_ops::l1(k0, k1));
            }
        }
    }
    (d_r, d_p)
}

pub fn regularized_lipschitz(spec: &GameSpec, agent: Agent, rho: f64, mf: Option<&MeanField>) -> RegularizedLipschitz {
    let t = spec.tables_at(mf);
    let (d_r, d_p) = measure_table_lipschitz(&spec.dims, &t, agent);
    let gamma = spec.gamma(agent);
    let h = gamma * d_p / 2.0;
    RegularizedLipschitz {
        d_r,
        d_p,
        rho,
        gamma,
        d_reg: d_reg_formula(d_r, d_p, rho, gamma),
        kernel_condition: (0.0..=1.0).contains(&h),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{policy_l1_distance, random};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn single_state(rewards: &[f64], gamma: f64) -> Mdp {
        Mdp {
            n_states: 1,
            n_actions: rewards.len(),
            gamma,
            reward: rewards.to_vec(),
            kernel: vec![1.0; rewards.len()],
        }
    }

    fn chain() -> Mdp {
        // 3 states, 2 actions: action 0 stays, action 1 moves right (last state wraps).
        let n = 3;
        let mut kernel = vec![0.0; n * 2 * n];
        let mut reward = vec![0.0; n * 2];
        for s in 0..n {
            kernel[(s * 2) * n + s] = 1.0;
            kernel[(s * 2 + 1) * n + (s + 1) % n] = 0.7;
            kernel[(s * 2 + 1) * n + s] = 0.3;
            reward[s * 2] = s as f64 * 0.5;
            reward[s * 2 + 1] = 1.0 - s as f64 * 0.2;
        }
        Mdp {
            n_states: n,
            n_actions: 2,
            gamma: 0.8,
            reward,
            kernel,
        }
    }

    #[test]
    fn geometric_series_single_state() {
        let q = value_iteration(&single_state(&[2.0, 2.0], 0.9), &BRConfig::default()).unwrap();
        for v in &q.values {
            assert_abs_diff_eq!(*v, 20.0, epsilon = 1e-8);
        }
        assert!(q.residual <= 1e-10);
    }

    #[test]
    fn zero_rewards_give_zero_q() {
        let mdp = Mdp {
            reward: vec![0.0; 6],
            ..chain()
        };
        let q = value_iteration(&mdp, &BRConfig::default()).unwrap();
        assert!(q.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn chain_matches_linear_solve() {
        let mdp = chain();
        let q = value_iteration(&mdp, &BRConfig::default()).unwrap();
        let pi = q.greedy();
        // Independent policy evaluation for the greedy policy by Gaussian elimination.
        let n = 3;
        let mut a = [[0.0f64; 4]; 3];
        for s in 0..n {
            a[s][s] = 1.0;
            for act in 0..2 {
                let w = pi.row(s)[act];
                for s2 in 0..n {
                    a[s][s2] -= 0.8 * w * mdp.kernel[(s * 2 + act) * n + s2];
                }
                a[s][3] += w * mdp.reward[s * 2 + act];
            }
        }
        for c in 0..n {
            let p = (c..n).max_by(|i, j| a[*i][c].abs().partial_cmp(&a[*j][c].abs()).unwrap()).unwrap();
            a.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in 0..4 {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        for s in 0..n {
            let v = a[s][3] / a[s][s];
            let qmax = q.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_abs_diff_eq!(v, qmax, epsilon = 1e-8);
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let cfg = BRConfig::default().with_max_iterations(3);
        match value_iteration(&single_state(&[1.0], 0.99), &cfg) {
            Err(Error::NotConverged { iterations: 3, residual }) => assert!(residual > 0.0),
            other => panic!("{other:?}"),
        }
    }

    fn game_2x2(seed: u64) -> GameSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random::game(&mut rng, Dims::new(2, 2, 2, 2), 0.9, 1.0)
    }

    #[test]
    fn induced_deterministic_opponent_is_slice() {
        let g = game_2x2(3);
        let opp = Policy::deterministic(&[1, 0, 1, 1], 2);
        let mdp = induced_mdp(&g, Agent::Follower, &opp, None).unwrap();
        for j in 0..4 {
            let js = g.dims.split(j);
            for a in 0..2 {
                let b = [1, 0, 1, 1][j];
                assert_eq!(mdp.reward[j * 2 + a], g.tables.reward(&g.dims, Agent::Follower, js.s_f, js.s_l, a, b));
            }
        }
    }

    #[test]
    fn induced_uniform_opponent_is_midpoint() {
        let g = game_2x2(4);
        let mdp = induced_mdp(&g, Agent::Leader, &Policy::uniform(4, 2), None).unwrap();
        for j in 0..4 {
            let js = g.dims.split(j);
            for a in 0..2 {
                let r0 = g.tables.reward(&g.dims, Agent::Leader, js.s_l, js.s_f, a, 0);
                let r1 = g.tables.reward(&g.dims, Agent::Leader, js.s_l, js.s_f, a, 1);
                assert_abs_diff_eq!(mdp.reward[j * 2 + a], 0.5 * (r0 + r1), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn induced_random_opponent_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random::game(&mut rng, Dims::new(2, 3, 3, 2), 0.9, 1.0);
        let opp = random::policy(&mut rng, 6, 3);
        let mdp = induced_mdp(&g, Agent::Follower, &opp, None).unwrap();
        let d = g.dims;
        for j in 0..6 {
            let js = d.split(j);
            for a in 0..2 {
                let mut r = 0.0;
                let mut p = vec![0.0; 6];
                for b in 0..3 {
                    let w = opp.row(j)[b];
                    r += w * g.tables.reward_f[Tables::idx_rf(&d, js.s_f, js.s_l, a, b)];
                    for sl in 0..2 {
                        for sf in 0..3 {
                            p[sl * 3 + sf] += w
                                * g.tables.transition_f[Tables::idx_pf(&d, js.s_f, a, b) + sf]
                                * g.tables.transition_l[Tables::idx_pl(&d, js.s_l, b, a) + sl];
                        }
                    }
                }
                assert_abs_diff_eq!(mdp.reward[j * 2 + a], r, epsilon = 1e-14);
                for (x, y) in mdp.row(j, a).iter().zip(&p) {
                    assert_abs_diff_eq!(*x, *y, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn dominant_action_best_response() {
        let mut g = game_2x2(5);
        for (i, r) in g.tables.reward_f.iter_mut().enumerate() {
            let af = (i / 2) % 2;
            *r = if af == 0 { 1.0 } else { -1.0 };
        }
        let br = best_response(&g, Agent::Follower, &Policy::uniform(4, 2), None, &BRConfig::default()).unwrap();
        assert_eq!(br, Policy::deterministic(&[0, 0, 0, 0], 2));
    }

    #[test]
    fn identical_actions_give_uniform() {
        let mut g = game_2x2(6);
        let d = g.dims;
        for sf in 0..2 {
            for b in 0..2 {
                let i0 = Tables::idx_pf(&d, sf, 0, b);
                let i1 = Tables::idx_pf(&d, sf, 1, b);
                let row: Vec<f64> = g.tables.transition_f[i0..i0 + 2].to_vec();
                g.tables.transition_f[i1..i1 + 2].copy_from_slice(&row);
                for sl in 0..2 {
                    let r = g.tables.reward_f[Tables::idx_rf(&d, sf, sl, 0, b)];
                    g.tables.reward_f[Tables::idx_rf(&d, sf, sl, 1, b)] = r;
                }
            }
        }
        for sl in 0..2 {
            for al in 0..2 {
                let i0 = Tables::idx_pl(&d, sl, al, 0);
                let i1 = Tables::idx_pl(&d, sl, al, 1);
                let row: Vec<f64> = g.tables.transition_l[i0..i0 + 2].to_vec();
                g.tables.transition_l[i1..i1 + 2].copy_from_slice(&row);
            }
        }
        let br = best_response(&g, Agent::Follower, &Policy::uniform(4, 2), None, &BRConfig::default()).unwrap();
        assert_eq!(br, Policy::uniform(4, 2));
    }

    #[test]
    fn best_response_matches_brute_force() {
        for seed in 0..20 {
            let g = game_2x2(100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let opp = random::policy(&mut rng, 4, 2);
            let br = best_response(&g, Agent::Follower, &opp, None, &BRConfig::default()).unwrap();
            let mdp = induced_mdp(&g, Agent::Follower, &opp, None).unwrap();
            let vbr = evaluate_policy(&mdp, &br, Regularizer::None).unwrap();
            let mut best = vec![f64::NEG_INFINITY; 4];
            for code in 0..16usize {
                let acts: Vec<usize> = (0..4).map(|s| (code >> s) & 1).collect();
                let v = evaluate_policy(&mdp, &Policy::deterministic(&acts, 2), Regularizer::None).unwrap();
                for s in 0..4 {
                    best[s] = best[s].max(v[s]);
                }
            }
            for s in 0..4 {
                assert_abs_diff_eq!(vbr[s], best[s], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn regularized_equal_q_is_uniform() {
        let mdp = single_state(&[0.4, 0.4, 0.4], 0.5);
        let p = regularized_policy(&mdp, &BRConfig::default().with_entropy(0.3)).unwrap();
        for x in p.row(0) {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn regularized_approaches_uniform_as_rho_grows() {
        let g = game_2x2(7);
        let opp = Policy::uniform(4, 2);
        let mut last = f64::INFINITY;
        for rho in [1.0, 10.0, 100.0] {
            let p = regularized_best_response(&g, Agent::Follower, &opp, None, &BRConfig::default().with_entropy(rho)).unwrap();
            assert!(p.probs.iter().all(|x| *x > 0.0));
            let d = policy_l1_distance(&p, &Policy::uniform(4, 2)).unwrap();
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn regularized_matches_simplex_grid_search() {
        // Single state, two actions: maximize p r0 + (1-p) r1 + rho H(p) over a fine grid.
        let (r0, r1, rho, gamma) = (1.0f64, 0.3f64, 0.5f64, 0.6f64);
        let mdp = single_state(&[r0, r1], gamma);
        let p = regularized_policy(&mdp, &BRConfig::default().with_entropy(rho)).unwrap();
        let mut best = (0.0, f64::NEG_INFINITY);
        for k in 0..=200_000 {
            let x = k as f64 / 200_000.0;
            let h = if x > 0.0 && x < 1.0 { -x * x.ln() - (1.0 - x) * (1.0 - x).ln() } else { 0.0 };
            let v = (x * r0 + (1.0 - x) * r1 + rho * h) / (1.0 - gamma);
            if v > best.1 {
                best = (x, v);
            }
        }
        assert_abs_diff_eq!(p.row(0)[0], best.0, epsilon = 1e-4);
    }

    #[test]
    fn bandit_q_learning() {
        let mut g = GameSpec::new(
            Dims::new(1, 1, 1, 2),
            Tables {
                transition_l: vec![1.0; 2],
                transition_f: vec![1.0; 2],
                reward_l: vec![0.0; 2],
                reward_f: vec![0.2, 1.0],
            },
            0.0,
            0.0,
            1.0,
        );
        g.gamma_f = 0.0;
        let cfg = QLearningConfig {
            episodes: 10_000,
            episode_len: 1,
            ..Default::default()
        };
        let q = q_learning(&g, Agent::Follower, &Policy::uniform(1, 1), None, &cfg).unwrap();
        assert_eq!(q.greedy(), Policy::deterministic(&[1], 2));

        g.tables.reward_f = vec![0.0, 0.0];
        g.gamma_f = 0.9;
        let q = q_learning(&g, Agent::Follower, &Policy::uniform(1, 1), None, &cfg).unwrap();
        assert!(q.values.iter().all(|v| v.abs() <= 1e-6));
    }

    #[test]
    fn q_learning_greedy_matches_value_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut g = random::game(&mut rng, Dims::new(1, 2, 1, 2), 0.5, 1.0);
        // Separate the two actions clearly so the greedy policy is robust to sampling error.
        for (i, r) in g.tables.reward_f.iter_mut().enumerate() {
            let sf = i / 2;
            let af = i % 2;
            *r = if af == sf { 1.0 } else { 0.0 };
        }
        let opp = Policy::uniform(2, 1);
        let vi = best_response(&g, Agent::Follower, &opp, None, &BRConfig::default()).unwrap();
        let cfg = QLearningConfig {
            episodes: 5_000,
            episode_len: 20,
            seed: 3,
            ..Default::default()
        };
        let q = q_learning(&g, Agent::Follower, &opp, None, &cfg).unwrap();
        assert_eq!(q.greedy(), vi);
        let again = q_learning(&g, Agent::Follower, &opp, None, &cfg).unwrap();
        assert_eq!(q, again);
    }

    #[test]
    fn qtable_csv() {
        let q = value_iteration(&chain(), &BRConfig::default()).unwrap();
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("state,action,value"));
    }

    #[test]
    fn d_reg_arithmetic() {
        // d_r = 1, d_P = 0, rho = 1, gamma = 0.5 -> 1 + 0.5/0.5 + 0 = 2
        assert_abs_diff_eq!(d_reg_formula(1.0, 0.0, 1.0, 0.5), 2.0, epsilon = 1e-15);
        // h = 0.25: 1 + 0.5/(0.5*0.75) + 0.25/0.75
        assert_abs_diff_eq!(d_reg_formula(1.0, 1.0, 2.0, 0.5), 0.5 * (1.0 + 0.5 / 0.375 + 1.0 / 3.0), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn residual_and_contraction(seed in 0u64..300) {
            let g = game_2x2(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let opp = random::policy(&mut rng, 4, 2);
            let mdp = induced_mdp(&g, Agent::Leader, &opp, None).unwrap();
            for reg in [Regularizer::None, Regularizer::Entropy(0.3)] {
                let cfg = BRConfig { regularizer: reg, ..BRConfig::default().with_tolerance(1e-9) };
                let q = value_iteration(&mdp, &cfg).unwrap();
                let resid = sup_diff(&bellman(&mdp, &q.values, reg), &q.values);
                prop_assert!(resid <= 1e-9);
                for w in q.history.windows(2) {
                    prop_assert!(w[1] <= mdp.gamma * w[0] + 1e-13);
                }
                let bound = g.reward_bound / (1.0 - mdp.gamma);
                if reg == Regularizer::None {
                    prop_assert!(q.values.iter().all(|v| v.abs() <= bound + 1e-8));
                }
            }
        }

        #[test]
        fn argmax_invariant_under_positive_scaling(seed in 0u64..300, c in 0.01f64..100.0) {
            let g = game_2x2(seed);
            let mut scaled = g.clone();
            scaled.tables.reward_f.iter_mut().for_each(|r| *r *= c);
            scaled.reward_bound *= c;
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let opp = random::policy(&mut rng, 4, 2);
            let a = best_response(&g, Agent::Follower, &opp, None, &BRConfig::default()).unwrap();
            let b = best_response(&scaled, Agent::Follower, &opp, None, &BRConfig::default()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn regularized_br_lipschitz_within_d_reg(seed in 0u64..200) {
            let g = game_2x2(seed);
            let rho = 0.5;
            let lip = regularized_lipschitz(&g, Agent::Follower, rho, None);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let p = random::policy(&mut rng, 4, 2);
            let q = random::policy(&mut rng, 4, 2);
            let cfg = BRConfig::default().with_entropy(rho);
            let bp = regularized_best_response(&g, Agent::Follower, &p, None, &cfg).unwrap();
            let bq = regularized_best_response(&g, Agent::Follower, &q, None, &cfg).unwrap();
            let ratio = policy_l1_distance(&bp, &bq).unwrap() / policy_l1_distance(&p, &q).unwrap();
            prop_assert!(ratio <= lip.d_reg, "ratio {} d_reg {}", ratio, lip.d_reg);
        }
    }
}
