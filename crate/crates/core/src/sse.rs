//! Alternating best-response iteration for the two-agent game, in exact,
//! projected-Boltzmann and entropy-regularized form, plus contraction and
//! error-bound diagnostics.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{policy_l1_distance, random, Agent, GameSpec, Policy};
use crate::mdp::{induced_mdp, pair_values, value_iteration, BRConfig, Mdp, Regularizer};
use crate::meanfield::MeanField;
use crate::policy_ops::{build_epsilon_net, project, softmax, EpsilonNet, GapProfile, DEFAULT_DELTA_MIN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Exact,
    Boltzmann { epsilon: f64, alpha_l: f64, alpha_f: f64 },
    Regularized { rho: f64 },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Exact => "exact",
            Variant::Boltzmann { .. } => "boltzmann",
            Variant::Regularized { .. } => "regularized",
        }
    }

    /// Regularizer of the objective this variant optimizes.
    pub fn objective(&self) -> Regularizer {
        match self {
            Variant::Regularized { rho } => Regularizer::Entropy(*rho),
            _ => Regularizer::None,
        }
    }
}

/// Best-response operator of a variant with its nets built once.
#[derive(Debug, Clone)]
pub struct Responder {
    pub variant: Variant,
    pub br: BRConfig,
    net_l: Option<EpsilonNet>,
    net_f: Option<EpsilonNet>,
}

impl Responder {
    pub fn new(spec: &GameSpec, variant: Variant, br: BRConfig) -> Result<Self> {
        let (net_l, net_f) = match variant {
            Variant::Boltzmann { epsilon, alpha_l, alpha_f } => {
                if !(alpha_l > 0.0 && alpha_f > 0.0) {
                    return Err(Error::Invalid("Boltzmann temperatures must be positive".into()));
                }
                (
                    Some(build_epsilon_net(spec.dims.leader_actions, epsilon)?),
                    Some(build_epsilon_net(spec.dims.follower_actions, epsilon)?),
                )
            }
            Variant::Regularized { rho } if !(rho > 0.0) => {
                return Err(Error::Invalid("entropy weight must be positive".into()));
            }
            _ => (None, None),
        };
        Ok(Responder {
            variant,
            br,
            net_l,
            net_f,
        })
    }

    pub fn respond(&self, spec: &GameSpec, agent: Agent, opponent: &Policy, mf: Option<&MeanField>) -> Result<Policy> {
        let mdp = induced_mdp(spec, agent, opponent, mf)?;
        self.respond_mdp(&mdp, agent)
    }

    pub fn respond_mdp(&self, mdp: &Mdp, agent: Agent) -> Result<Policy> {
        match self.variant {
            Variant::Exact => {
                let cfg = BRConfig {
                    regularizer: Regularizer::None,
                    ..self.br
                };
                Ok(value_iteration(mdp, &cfg)?.greedy())
            }
            Variant::Regularized { rho } => {
                let cfg = BRConfig {
                    regularizer: Regularizer::Entropy(rho),
                    ..self.br
                };
                let q = value_iteration(mdp, &cfg)?;
                crate::mdp::softmax_policy(&q, 1.0 / rho)
            }
            Variant::Boltzmann { alpha_l, alpha_f, .. } => {
                let cfg = BRConfig {
                    regularizer: Regularizer::None,
                    ..self.br
                };
                let q = value_iteration(mdp, &cfg)?;
                let (alpha, net) = match agent {
                    Agent::Leader => (alpha_l, self.net_l.as_ref().unwrap()),
                    Agent::Follower => (alpha_f, self.net_f.as_ref().unwrap()),
                };
                let mut probs = Vec::with_capacity(q.values.len());
                for row in q.rows() {
                    probs.extend(project(&softmax(row, alpha)?, net));
                }
                Ok(Policy {
                    n_states: q.n_states,
                    n_actions: q.n_actions,
                    probs,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub l1_change: f64,
    pub leader_value: f64,
    pub follower_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SSEResult {
    pub leader_policy: Policy,
    pub follower_policy: Policy,
    pub iterations: usize,
    pub trajectory: Vec<IterationRecord>,
    pub converged: bool,
    pub variant: Variant,
}

impl SSEResult {
    pub fn changes(&self) -> Vec<f64> {
        self.trajectory.iter().map(|r| r.l1_change).collect()
    }

    pub fn write_trajectory_csv<W: Write>(&self, w: W) -> Result<()> {
        write_trajectory(w, &self.trajectory)
    }
}

pub fn write_trajectory<W: Write>(w: W, rows: &[IterationRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["iteration", "l1_change", "leader_value", "follower_value"])?;
    for r in rows {
        wr.write_record([
            r.iteration.to_string(),
            crate::fmt_f64(r.l1_change),
            crate::fmt_f64(r.leader_value),
            crate::fmt_f64(r.follower_value),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean over joint states of both agents' values under a policy pair.
pub fn pair_summary(spec: &GameSpec, pi_l: &Policy, pi_f: &Policy, mf: Option<&MeanField>, reg: Regularizer) -> Result<(f64, f64)> {
    let vl = pair_values(spec, Agent::Leader, pi_l, pi_f, mf, reg)?;
    let vf = pair_values(spec, Agent::Follower, pi_f, pi_l, mf, reg)?;
    Ok((mean(&vl), mean(&vf)))
}

pub fn solve_sse(spec: &GameSpec, initial_leader: Option<&Policy>, variant: Variant, tol: f64, max_outer: usize) -> Result<SSEResult> {
    solve_sse_with(spec, initial_leader, variant, tol, max_outer, &BRConfig::default())
}

pub fn solve_sse_with(
    spec: &GameSpec,
    initial_leader: Option<&Policy>,
    variant: Variant,
    tol: f64,
    max_outer: usize,
    br: &BRConfig,
) -> Result<SSEResult> {
    let d = spec.dims;
    let responder = Responder::new(spec, variant, *br)?;
    let mut pi_l = match initial_leader {
        Some(p) => {
            p.check_shape(d.joint_states(), d.leader_actions)?;
            p.clone()
        }
        None => Policy::uniform_for(&d, Agent::Leader),
    };
    let reg = variant.objective();
    let mut trajectory = Vec::new();
    let mut best: Option<(f64, Policy, Policy)> = None;
    for k in 0..max_outer {
        let pi_f = responder.respond(spec, Agent::Follower, &pi_l, None)?;
        let next_l = responder.respond(spec, Agent::Leader, &pi_f, None)?;
        let change = policy_l1_distance(&next_l, &pi_l)?;
        let (lv, fv) = pair_summary(spec, &pi_l, &pi_f, None, reg)?;
        trajectory.push(IterationRecord {
            iteration: k,
            l1_change: change,
            leader_value: lv,
            follower_value: fv,
        });
        if change <= tol {
            return Ok(SSEResult {
                leader_policy: pi_l,
                follower_policy: pi_f,
                iterations: k + 1,
                trajectory,
                converged: true,
                variant,
            });
        }
        if best.as_ref().map_or(true, |b| change < b.0) {
            best = Some((change, pi_l.clone(), pi_f.clone()));
        }
        pi_l = next_l;
    }
    let (_, leader_policy, follower_policy) = match best {
        Some(b) => b,
        None => {
            let f = responder.respond(spec, Agent::Follower, &pi_l, None)?;
            (f64::INFINITY, pi_l, f)
        }
    };
    Ok(SSEResult {
        leader_policy,
        follower_policy,
        iterations: trajectory.len(),
        trajectory,
        converged: false,
        variant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionReport {
    pub d_l: f64,
    pub d_f: f64,
    pub product: f64,
    pub contractive: bool,
    pub skipped: usize,
}

/// Random policy pairs, half independent draws and half small perturbations.
pub fn sample_policy_pairs<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, count: usize) -> Vec<(Policy, Policy)> {
    (0..count)
        .map(|i| {
            let p = random::policy(rng, n_states, n_actions);
            let q = if i % 2 == 0 {
                random::policy(rng, n_states, n_actions)
            } else {
                let t = rng.random_range(0.01..0.2);
                let r = random::policy(rng, n_states, n_actions);
                Policy {
                    probs: p.probs.iter().zip(&r.probs).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
                    ..p.clone()
                }
            };
            (p, q)
        })
        .collect()
}

fn lipschitz_estimate<F>(pairs: &[(Policy, Policy)], mut f: F) -> Result<(f64, usize)>
where
    F: FnMut(&Policy) -> Result<Policy>,
{
    let mut d = 0.0f64;
    let mut skipped = 0;
    for (p, q) in pairs {
        let den = policy_l1_distance(p, q)?;
        if den <= 1e-15 {
            skipped += 1;
            continue;
        }
        let num = policy_l1_distance(&f(p)?, &f(q)?)?;
        d = d.max(num / den);
    }
    Ok((d, skipped))
}

/// Empirical Lipschitz constants of both best-response maps of a variant.
///
/// `leader_pairs` probe the follower's response, `follower_pairs` the leader's.
pub fn verify_contraction(
    spec: &GameSpec,
    variant: Variant,
    leader_pairs: &[(Policy, Policy)],
    follower_pairs: &[(Policy, Policy)],
    br: &BRConfig,
) -> Result<ContractionReport> {
    let r = Responder::new(spec, variant, *br)?;
    let (d_f, s1) = lipschitz_estimate(leader_pairs, |p| r.respond(spec, Agent::Follower, p, None))?;
    let (d_l, s2) = lipschitz_estimate(follower_pairs, |p| r.respond(spec, Agent::Leader, p, None))?;
    let product = d_l * d_f;
    Ok(ContractionReport {
        d_l,
        d_f,
        product,
        contractive: product < 1.0,
        skipped: s1 + s2,
    })
}

pub fn theorem_bound_coefficient(d_l: f64, d_f: f64, n_al: usize, n_af: usize) -> f64 {
    (1.0 + d_l + 2.0 * n_al as f64 + 2.0 * d_l * n_af as f64) / (1.0 - d_l * d_f) + 1.0
}

/// Iteration count `ceil(log_{1/(d_L d_F)}(2/eps))`, at least one.
pub fn iterations_for(epsilon: f64, product: f64) -> usize {
    if product <= 0.0 {
        return 1;
    }
    ((2.0 / epsilon).ln() / (1.0 / product).ln()).ceil().max(1.0) as usize
}

/// Minimum action gap of `agent`'s optimal Q over opponent policies drawn from the net.
pub fn measure_gap_profile(
    spec: &GameSpec,
    agent: Agent,
    opponent_net: &EpsilonNet,
    delta_min: f64,
    cap: usize,
    seed: u64,
    br: &BRConfig,
) -> Result<GapProfile> {
    let d = spec.dims;
    let nj = d.joint_states();
    let nb = d.actions(agent.other());
    let total = (opponent_net.len() as f64).powi(nj as i32);
    let cfg = BRConfig {
        regularizer: Regularizer::None,
        ..*br
    };
    let mut profile = GapProfile::new(vec![f64::INFINITY; nj], delta_min);
    let mut visit = |choice: &[usize]| -> Result<()> {
        let probs = choice.iter().flat_map(|&c| opponent_net.points[c].iter().cloned()).collect();
        let opp = Policy {
            n_states: nj,
            n_actions: nb,
            probs,
        };
        let q = value_iteration(&induced_mdp(spec, agent, &opp, None)?, &cfg)?;
        profile.merge(&GapProfile::from_q_rows(q.rows(), delta_min));
        Ok(())
    };
    if total <= cap as f64 {
        let mut choice = vec![0usize; nj];
        loop {
            visit(&choice)?;
            let mut i = 0;
            loop {
                if i == nj {
                    return Ok(profile);
                }
                choice[i] += 1;
                if choice[i] < opponent_net.len() {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..cap {
            let choice: Vec<usize> = (0..nj).map(|_| rng.random_range(0..opponent_net.len())).collect();
            visit(&choice)?;
        }
        Ok(profile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBoundOptions {
    pub reference_rho: f64,
    pub delta_min: f64,
    pub gap_cap: usize,
    pub pairs: usize,
    pub seed: u64,
}

impl Default for ErrorBoundOptions {
    fn default() -> Self {
        ErrorBoundOptions {
            reference_rho: 1e-3,
            delta_min: DEFAULT_DELTA_MIN,
            gap_cap: 20_000,
            pairs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBoundRow {
    pub epsilon: f64,
    pub phi: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub error: f64,
    pub bound: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBoundReport {
    pub d_l: f64,
    pub d_f: f64,
    pub applicable: bool,
    pub reference: Policy,
    pub rows: Vec<ErrorBoundRow>,
}

/// Projected-Boltzmann error against a tightly solved reference for each epsilon.
pub fn error_bound_check(spec: &GameSpec, epsilons: &[f64], tol: f64, opts: &ErrorBoundOptions) -> Result<ErrorBoundReport> {
    let d = spec.dims;
    let br = BRConfig::default();
    let reference = solve_sse_with(spec, None, Variant::Regularized { rho: opts.reference_rho }, tol, 10_000, &br)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lp = sample_policy_pairs(&mut rng, d.joint_states(), d.leader_actions, opts.pairs);
    let fp = sample_policy_pairs(&mut rng, d.joint_states(), d.follower_actions, opts.pairs);
    let c = verify_contraction(spec, Variant::Exact, &lp, &fp, &br)?;
    let applicable = c.product < 1.0;
    let mut rows = Vec::new();
    for &eps in epsilons {
        let net_l = build_epsilon_net(d.leader_actions, eps)?;
        let net_f = build_epsilon_net(d.follower_actions, eps)?;
        let mut gap = measure_gap_profile(spec, Agent::Follower, &net_l, opts.delta_min, opts.gap_cap, opts.seed, &br)?;
        gap.merge(&measure_gap_profile(spec, Agent::Leader, &net_f, opts.delta_min, opts.gap_cap, opts.seed, &br)?);
        let phi = gap.phi;
        let alpha = crate::policy_ops::temperature_for(eps, phi)?;
        let bound = theorem_bound_coefficient(c.d_l, c.d_f, d.leader_actions, d.follower_actions) * eps;
        if !applicable {
            rows.push(ErrorBoundRow {
                epsilon: eps,
                phi,
                alpha,
                iterations: 0,
                error: f64::NAN,
                bound,
                within: false,
            });
            continue;
        }
        let k = iterations_for(eps, c.product);
        let r = Responder::new(
            spec,
            Variant::Boltzmann {
                epsilon: eps,
                alpha_l: alpha,
                alpha_f: alpha,
            },
            br,
        )?;
        let mut pi_l = Policy::uniform_for(&d, Agent::Leader);
        for _ in 0..k {
            let pi_f = r.respond(spec, Agent::Follower, &pi_l, None)?;
            pi_l = r.respond(spec, Agent::Leader, &pi_f, None)?;
        }
        let error = policy_l1_distance(&pi_l, &reference.leader_policy)?;
        rows.push(ErrorBoundRow {
            epsilon: eps,
            phi,
            alpha,
            iterations: k,
            error,
            bound,
            within: error <= bound,
        });
    }
    Ok(ErrorBoundReport {
        d_l: c.d_l,
        d_f: c.d_f,
        applicable,
        reference: reference.leader_policy,
        rows,
    })
}
