//! Follower mean field, its pushforward, the nested inner fixed point and
//! the outer leader loop for the mean-field game.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{policy_l1_distance, random, Agent, GameSpec, JointState, Policy};
use crate::mdp::{induced_mdp, value_iteration, BRConfig, RegularizedLipschitz, Regularizer};
use crate::policy_ops::l1;
use crate::sse::{pair_summary, Responder, Variant};

/// Distribution over follower `(state, action)` pairs, flattened `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    pub n_states: usize,
    pub n_actions: usize,
    pub mass: Vec<f64>,
}

impl MeanField {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let k = n_states * n_actions;
        MeanField {
            n_states,
            n_actions,
            mass: vec![1.0 / k as f64; k],
        }
    }

    pub fn new(n_states: usize, n_actions: usize, mass: Vec<f64>) -> Result<Self> {
        let m = MeanField {
            n_states,
            n_actions,
            mass,
        };
        m.check()?;
        Ok(m)
    }

    pub fn for_game(spec: &GameSpec) -> Self {
        Self::uniform(spec.dims.follower_states, spec.dims.follower_actions)
    }

    pub fn check(&self) -> Result<()> {
        if self.mass.len() != self.n_states * self.n_actions {
            return Err(Error::Dimension("mean-field size".into()));
        }
        let s: f64 = self.mass.iter().sum();
        if self.mass.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid("mean field is not a distribution".into()));
        }
        Ok(())
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.mass.chunks(self.n_actions).map(|r| r.iter().sum()).collect()
    }

    pub fn l1(&self, other: &MeanField) -> f64 {
        l1(&self.mass, &other.mass)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["state", "action", "mass"])?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                wr.write_record([s.to_string(), a.to_string(), crate::fmt_f64(self.mass[s * self.n_actions + a])])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn check_mf(spec: &GameSpec, mu: &MeanField) -> Result<()> {
    if mu.n_states != spec.dims.follower_states || mu.n_actions != spec.dims.follower_actions {
        return Err(Error::Dimension("mean field does not match follower spaces".into()));
    }
    Ok(())
}

/// Next mean field with the leader held at state `leader_state`.
pub fn mf_pushforward(mu: &MeanField, leader_policy: &Policy, follower_policy: &Policy, spec: &GameSpec, leader_state: usize) -> Result<MeanField> {
    let d = spec.dims;
    check_mf(spec, mu)?;
    leader_policy.check_shape(d.joint_states(), d.leader_actions)?;
    follower_policy.check_shape(d.joint_states(), d.follower_actions)?;
    if leader_state >= d.leader_states {
        return Err(Error::Dimension(format!("leader state {leader_state}")));
    }
    let t = spec.tables_at(Some(mu));
    let (ns, na) = (d.follower_states, d.follower_actions);
    let mut nu = vec![0.0; ns];
    for s in 0..ns {
        let j = d.joint(JointState { s_l: leader_state, s_f: s });
        let pl = leader_policy.row(j);
        for a in 0..na {
            let m = mu.mass[s * na + a];
            if m == 0.0 {
                continue;
            }
            for (al, &w) in pl.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (s2, p) in t.transition(&d, Agent::Follower, s, a, al).iter().enumerate() {
                    nu[s2] += m * w * p;
                }
            }
        }
    }
    let mut mass = vec![0.0; ns * na];
    for s2 in 0..ns {
        let j = d.joint(JointState { s_l: leader_state, s_f: s2 });
        for (a2, &p) in follower_policy.row(j).iter().enumerate() {
            mass[s2 * na + a2] = nu[s2] * p;
        }
    }
    let total: f64 = mass.iter().sum();
    if (total - 1.0).abs() >= 1e-10 {
        return Err(Error::MassDrift((total - 1.0).abs()));
    }
    mass.iter_mut().for_each(|x| *x /= total);
    Ok(MeanField {
        n_states: ns,
        n_actions: na,
        mass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfConfig {
    pub tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub leader_state: usize,
    /// Step size of the inner update `mu + damping * (Gamma(mu) - mu)`; 1 is the plain pushforward.
    pub damping: f64,
    pub br: BRConfig,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            tol: 1e-6,
            max_inner: 500,
            max_outer: 200,
            leader_state: 0,
            damping: 1.0,
            br: BRConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub follower_policy: Policy,
    pub mean_field: MeanField,
    pub iterations: usize,
    pub residual: f64,
    pub residuals: Vec<f64>,
    pub converged: bool,
}

pub fn solve_inner(spec: &GameSpec, leader_policy: &Policy, mu0: &MeanField, variant: Variant, tol: f64, max_inner: usize) -> Result<InnerResult> {
    let cfg = MfConfig {
        tol,
        max_inner,
        ..MfConfig::default()
    };
    let r = Responder::new(spec, variant, cfg.br)?;
    solve_inner_with(spec, leader_policy, mu0, &r, &cfg)
}

fn damp(mu: &MeanField, next: &MeanField, beta: f64) -> MeanField {
    let mass = mu.mass.iter().zip(&next.mass).map(|(a, b)| a + beta * (b - a)).collect();
    MeanField {
        n_states: mu.n_states,
        n_actions: mu.n_actions,
        mass,
    }
}

/// Alternates the follower response to a frozen mean field with one pushforward step.
pub fn solve_inner_with(spec: &GameSpec, leader_policy: &Policy, mu0: &MeanField, responder: &Responder, cfg: &MfConfig) -> Result<InnerResult> {
    check_mf(spec, mu0)?;
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(Error::Invalid(format!("damping {} outside (0, 1]", cfg.damping)));
    }
    let mut mu = mu0.clone();
    let mut residuals = Vec::new();
    let mut best: Option<(f64, Policy, MeanField)> = None;
    for tau in 0..cfg.max_inner.max(1) {
        let pf = responder.respond(spec, Agent::Follower, leader_policy, Some(&mu))?;
        let next = mf_pushforward(&mu, leader_policy, &pf, spec, cfg.leader_state)?;
        let r = next.l1(&mu);
        residuals.push(r);
        if r <= cfg.tol {
            return Ok(InnerResult {
                follower_policy: pf,
                mean_field: mu,
                iterations: tau + 1,
                residual: r,
                residuals,
                converged: true,
            });
        }
        if best.as_ref().map_or(true, |b| r < b.0) {
            best = Some((r, pf, mu.clone()));
        }
        mu = if cfg.damping == 1.0 { next } else { damp(&mu, &next, cfg.damping) };
    }
    let (residual, follower_policy, mean_field) = best.unwrap();
    Ok(InnerResult {
        follower_policy,
        mean_field,
        iterations: residuals.len(),
        residual,
        residuals,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterRecord {
    pub iteration: usize,
    pub l1_change: f64,
    pub inner_iterations: usize,
    pub inner_residual: f64,
    pub leader_value: f64,
    pub follower_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MFEResult {
    pub leader_policy: Policy,
    pub follower_policy: Policy,
    pub mean_field: MeanField,
    pub outer_iterations: usize,
    pub inner_iteration_counts: Vec<usize>,
    pub converged: bool,
    pub consistency_residual: f64,
    pub follower_optimality_residual: f64,
    pub leader_optimality_residual: f64,
    pub trajectory: Vec<OuterRecord>,
    pub variant: Variant,
}

impl MFEResult {
    pub fn write_diagnostics_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "l1_change", "inner_iterations", "inner_residual", "leader_value", "follower_value"])?;
        for r in &self.trajectory {
            wr.write_record([
                r.iteration.to_string(),
                crate::fmt_f64(r.l1_change),
                r.inner_iterations.to_string(),
                crate::fmt_f64(r.inner_residual),
                crate::fmt_f64(r.leader_value),
                crate::fmt_f64(r.follower_value),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Largest per-state shortfall of `own` against the optimal value of the induced problem.
pub fn optimality_residual(spec: &GameSpec, agent: Agent, own: &Policy, opponent: &Policy, mu: Option<&MeanField>, reg: Regularizer, br: &BRConfig) -> Result<f64> {
    let mdp = induced_mdp(spec, agent, opponent, mu)?;
    let cfg = BRConfig { regularizer: reg, ..*br };
    let q = value_iteration(&mdp, &cfg)?;
    let v = crate::mdp::evaluate_policy(&mdp, own, reg)?;
    let best: Vec<f64> = q
        .rows()
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            match reg {
                Regularizer::None => max,
                Regularizer::Entropy(rho) => max + rho * row.iter().map(|x| ((x - max) / rho).exp()).sum::<f64>().ln(),
            }
        })
        .collect();
    Ok(best.iter().zip(&v).map(|(b, x)| b - x).fold(f64::NEG_INFINITY, f64::max).max(0.0))
}

pub fn solve_smfe(
    spec: &GameSpec,
    initial_leader: Option<&Policy>,
    mu0: Option<&MeanField>,
    variant: Variant,
    cfg: &MfConfig,
) -> Result<MFEResult> {
    let d = spec.dims;
    let responder = Responder::new(spec, variant, cfg.br)?;
    let mut pi_l = match initial_leader {
        Some(p) => {
            p.check_shape(d.joint_states(), d.leader_actions)?;
            p.clone()
        }
        None => Policy::uniform_for(&d, Agent::Leader),
    };
    let mut mu = match mu0 {
        Some(m) => {
            check_mf(spec, m)?;
            m.clone()
        }
        None => MeanField::for_game(spec),
    };
    let reg = variant.objective();
    let mut counts = Vec::new();
    let mut trajectory = Vec::new();
    let mut best: Option<(f64, Policy, InnerResult)> = None;
    let finish = |pi_l: Policy, inner: InnerResult, outer_ok: bool, counts: Vec<usize>, trajectory: Vec<OuterRecord>| -> Result<MFEResult> {
        let next = mf_pushforward(&inner.mean_field, &pi_l, &inner.follower_policy, spec, cfg.leader_state)?;
        let consistency = next.l1(&inner.mean_field);
        let fo = optimality_residual(spec, Agent::Follower, &inner.follower_policy, &pi_l, Some(&inner.mean_field), reg, &cfg.br)?;
        let lo = optimality_residual(spec, Agent::Leader, &pi_l, &inner.follower_policy, Some(&inner.mean_field), reg, &cfg.br)?;
        Ok(MFEResult {
            leader_policy: pi_l,
            follower_policy: inner.follower_policy,
            mean_field: inner.mean_field,
            outer_iterations: counts.len(),
            inner_iteration_counts: counts,
            converged: outer_ok && inner.converged,
            consistency_residual: consistency,
            follower_optimality_residual: fo,
            leader_optimality_residual: lo,
            trajectory,
            variant,
        })
    };
    for k in 0..cfg.max_outer.max(1) {
        let inner = solve_inner_with(spec, &pi_l, &mu, &responder, cfg)?;
        counts.push(inner.iterations);
        let next_l = responder.respond(spec, Agent::Leader, &inner.follower_policy, Some(&inner.mean_field))?;
        let change = policy_l1_distance(&next_l, &pi_l)?;
        let (lv, fv) = pair_summary(spec, &pi_l, &inner.follower_policy, Some(&inner.mean_field), reg)?;
        trajectory.push(OuterRecord {
            iteration: k,
            l1_change: change,
            inner_iterations: inner.iterations,
            inner_residual: inner.residual,
            leader_value: lv,
            follower_value: fv,
        });
        if change <= cfg.tol {
            return finish(pi_l, inner, true, counts, trajectory);
        }
        mu = inner.mean_field.clone();
        if best.as_ref().map_or(true, |b| change < b.0) {
            best = Some((change, pi_l.clone(), inner));
        }
        pi_l = next_l;
    }
    let (_, pl, inner) = best.unwrap();
    finish(pl, inner, false, counts, trajectory)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfContractionReport {
    pub d_f_l: f64,
    pub d_f_mu: f64,
    pub d_mu_mu: f64,
    pub d_mu_l: f64,
    pub d_mu_f: f64,
    pub d_l_f: f64,
    pub d_l_mu: f64,
    /// `d_mu_mu + d_mu_f * d_f_mu`
    pub inner_product: f64,
    pub inner_condition: bool,
    pub outer_ratio: f64,
    pub outer_condition: bool,
    pub skipped: usize,
}

pub fn random_mean_field<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> MeanField {
    MeanField {
        n_states,
        n_actions,
        mass: random::simplex(rng, n_states * n_actions),
    }
}

fn perturbed_mf<R: Rng + ?Sized>(rng: &mut R, near: bool, base: &MeanField) -> MeanField {
    let other = random_mean_field(rng, base.n_states, base.n_actions);
    if !near {
        return other;
    }
    let t = rng.random_range(0.01..0.2);
    MeanField {
        mass: base.mass.iter().zip(&other.mass).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
        ..base.clone()
    }
}

fn perturbed_policy<R: Rng + ?Sized>(rng: &mut R, near: bool, base: &Policy) -> Policy {
    let other = random::policy(rng, base.n_states, base.n_actions);
    if !near {
        return other;
    }
    let t = rng.random_range(0.01..0.2);
    Policy {
        probs: base.probs.iter().zip(&other.probs).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
        ..base.clone()
    }
}

/// Empirical Lipschitz constants of the follower response, the pushforward
/// and the leader response in each argument.
pub fn verify_mf_contraction(spec: &GameSpec, variant: Variant, samples: usize, seed: u64, cfg: &MfConfig) -> Result<MfContractionReport> {
    let d = spec.dims;
    let nj = d.joint_states();
    let r = Responder::new(spec, variant, cfg.br)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = [0.0f64; 7];
    let mut skipped = 0;
    let ratio = |num: f64, den: f64, acc: &mut f64, skipped: &mut usize| {
        if den <= 1e-15 {
            *skipped += 1;
        } else {
            *acc = acc.max(num / den);
        }
    };
    let gamma = |mu: &MeanField, pl: &Policy, pf: &Policy| mf_pushforward(mu, pl, pf, spec, cfg.leader_state);
    for i in 0..samples {
        let near = i % 2 == 1;
        let pl = random::policy(&mut rng, nj, d.leader_actions);
        let pf = random::policy(&mut rng, nj, d.follower_actions);
        let mu = random_mean_field(&mut rng, d.follower_states, d.follower_actions);
        let pl2 = perturbed_policy(&mut rng, near, &pl);
        let pf2 = perturbed_policy(&mut rng, near, &pf);
        let mu2 = perturbed_mf(&mut rng, near, &mu);
        let dl = policy_l1_distance(&pl, &pl2)?;
        let df = policy_l1_distance(&pf, &pf2)?;
        let dm = mu.l1(&mu2);

        let bf = r.respond(spec, Agent::Follower, &pl, Some(&mu))?;
        let bf_l = r.respond(spec, Agent::Follower, &pl2, Some(&mu))?;
        let bf_m = r.respond(spec, Agent::Follower, &pl, Some(&mu2))?;
        ratio(policy_l1_distance(&bf, &bf_l)?, dl, &mut c[0], &mut skipped);
        ratio(policy_l1_distance(&bf, &bf_m)?, dm, &mut c[1], &mut skipped);

        let g = gamma(&mu, &pl, &pf)?;
        ratio(g.l1(&gamma(&mu2, &pl, &pf)?), dm, &mut c[2], &mut skipped);
        ratio(g.l1(&gamma(&mu, &pl2, &pf)?), dl, &mut c[3], &mut skipped);
        ratio(g.l1(&gamma(&mu, &pl, &pf2)?), df, &mut c[4], &mut skipped);

        let bl = r.respond(spec, Agent::Leader, &pf, Some(&mu))?;
        let bl_f = r.respond(spec, Agent::Leader, &pf2, Some(&mu))?;
        let bl_m = r.respond(spec, Agent::Leader, &pf, Some(&mu2))?;
        ratio(policy_l1_distance(&bl, &bl_f)?, df, &mut c[5], &mut skipped);
        ratio(policy_l1_distance(&bl, &bl_m)?, dm, &mut c[6], &mut skipped);
    }
    let [d_f_l, d_f_mu, d_mu_mu, d_mu_l, d_mu_f, d_l_f, d_l_mu] = c;
    let inner_product = d_mu_mu + d_mu_f * d_f_mu;
    let denom = 1.0 - (d_f_mu + d_mu_mu + d_mu_f);
    let outer_ratio = if denom > 0.0 { (d_f_l + d_mu_l) / denom } else { f64::INFINITY };
    Ok(MfContractionReport {
        d_f_l,
        d_f_mu,
        d_mu_mu,
        d_mu_l,
        d_mu_f,
        d_l_f,
        d_l_mu,
        inner_product,
        inner_condition: inner_product < 1.0,
        outer_ratio,
        outer_condition: outer_ratio < 1.0,
        skipped,
    })
}

/// Regularized-response constant with reward and kernel differences also
/// measured along sampled mean-field perturbations.
pub fn mf_regularized_lipschitz(spec: &GameSpec, agent: Agent, rho: f64, samples: usize, seed: u64) -> RegularizedLipschitz {
    let d = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = crate::mdp::regularized_lipschitz(spec, agent, rho, None);
    let (mut d_r, mut d_p) = (base.d_r, base.d_p);
    let other = agent.other();
    for i in 0..samples {
        let mu = random_mean_field(&mut rng, d.follower_states, d.follower_actions);
        let mu2 = perturbed_mf(&mut rng, i % 2 == 1, &mu);
        let dm = mu.l1(&mu2);
        let t1 = spec.tables_at(Some(&mu));
        let t2 = spec.tables_at(Some(&mu2));
        let (a, b) = crate::mdp::measure_table_lipschitz(&d, &t1, agent);
        d_r = d_r.max(a);
        d_p = d_p.max(b);
        if dm <= 1e-15 {
            continue;
        }
        for si in 0..d.states(agent) {
            for so in 0..d.states(other) {
                for ai in 0..d.actions(agent) {
                    for ao in 0..d.actions(other) {
                        let dr = (t1.reward(&d, agent, si, so, ai, ao) - t2.reward(&d, agent, si, so, ai, ao)).abs();
                        let joint = |t: &crate::game::Tables| -> Vec<f64> {
                            let p1 = t.transition(&d, agent, si, ai, ao);
                            let p2 = t.transition(&d, other, so, ao, ai);
                            p1.iter().flat_map(|x| p2.iter().map(move |y| x * y)).collect()
                        };
                        let dp = l1(&joint(&t1), &joint(&t2));
                        d_r = d_r.max(dr / dm);
                        d_p = d_p.max(dp / dm);
                    }
                }
            }
        }
    }
    let g = spec.gamma(agent);
    RegularizedLipschitz {
        d_r,
        d_p,
        rho,
        gamma: g,
        d_reg: crate::mdp::d_reg_formula(d_r, d_p, rho, g),
        kernel_condition: (0.0..=1.0).contains(&(g * d_p / 2.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Dims, LinearCoupling, Tables};
    use crate::mdp::best_response;
    use crate::sse::solve_sse;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn mf_game(seed: u64, coupling: f64) -> GameSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random::mf_game(&mut rng, Dims::new(1, 3, 2, 2), 0.8, 1.0, coupling)
    }

    #[test]
    fn identity_kernel_with_conditional_policy_is_stationary() {
        let d = Dims::new(1, 3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = random::game(&mut rng, d, 0.9, 1.0);
        for s in 0..3 {
            for a in 0..2 {
                for b in 0..2 {
                    let i = Tables::idx_pf(&d, s, a, b);
                    for s2 in 0..3 {
                        g.tables.transition_f[i + s2] = if s2 == s { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        let mu = random_mean_field(&mut rng, 3, 2);
        let marg = mu.state_marginal();
        let rows: Vec<Vec<f64>> = (0..3).map(|s| vec![mu.mass[2 * s] / marg[s], mu.mass[2 * s + 1] / marg[s]]).collect();
        let mut pf = Policy::uniform(3, 2);
        for (s, r) in rows.iter().enumerate() {
            pf.row_mut(s).copy_from_slice(r);
        }
        let pl = random::policy(&mut rng, 3, 2);
        let next = mf_pushforward(&mu, &pl, &pf, &g, 0).unwrap();
        for (x, y) in next.mass.iter().zip(&mu.mass) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-14);
        }
    }

    #[test]
    fn absorbing_state_collapses_support() {
        let d = Dims::new(1, 3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = random::game(&mut rng, d, 0.9, 1.0);
        for r in g.tables.transition_f.chunks_mut(3) {
            r.copy_from_slice(&[1.0, 0.0, 0.0]);
        }
        let pf = random::policy(&mut rng, 3, 2);
        let mu = random_mean_field(&mut rng, 3, 2);
        let next = mf_pushforward(&mu, &Policy::uniform(3, 2), &pf, &g, 0).unwrap();
        assert_abs_diff_eq!(next.mass[0], pf.row(0)[0], epsilon = 1e-15);
        assert_abs_diff_eq!(next.mass[1], pf.row(0)[1], epsilon = 1e-15);
        assert!(next.mass[2..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn pushforward_rejects_shape_mismatch() {
        let g = mf_game(3, 0.2);
        let mu = MeanField::uniform(2, 2);
        assert!(mf_pushforward(&mu, &Policy::uniform(3, 2), &Policy::uniform(3, 2), &g, 0).is_err());
    }

    #[test]
    fn decoupled_inner_loop_converges_in_two() {
        let d = Dims::new(1, 3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = random::game(&mut rng, d, 0.8, 1.0);
        // Next-state law independent of the current state and actions.
        for r in g.tables.transition_f.chunks_mut(3) {
            r.copy_from_slice(&[0.2, 0.5, 0.3]);
        }
        let c = LinearCoupling::zero(&d, &g.tables);
        g = g.with_coupling(Arc::new(c));
        let pl = random::policy(&mut rng, 3, 2);
        let inner = solve_inner(&g, &pl, &MeanField::uniform(3, 2), Variant::Exact, 1e-12, 50).unwrap();
        assert!(inner.converged);
        assert!(inner.iterations <= 2);
        let br = best_response(&g, Agent::Follower, &pl, None, &BRConfig::default()).unwrap();
        assert_eq!(inner.follower_policy, br);
    }

    #[test]
    fn fixed_point_start_takes_one_iteration() {
        let d = Dims::new(1, 2, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = random::game(&mut rng, d, 0.8, 1.0);
        for r in g.tables.transition_f.chunks_mut(2) {
            r.copy_from_slice(&[0.5, 0.5]);
        }
        // Follower strictly prefers action 1 everywhere.
        for (i, r) in g.tables.reward_f.iter_mut().enumerate() {
            *r = if i % 2 == 1 { 1.0 } else { 0.0 };
        }
        let c = LinearCoupling::zero(&d, &g.tables);
        let gg = g.with_coupling(Arc::new(c));
        let mu = MeanField::new(2, 2, vec![0.0, 0.5, 0.0, 0.5]).unwrap();
        let inner = solve_inner(&gg, &Policy::uniform(2, 1), &mu, Variant::Exact, 1e-12, 50).unwrap();
        assert_eq!(inner.iterations, 1);
        assert_eq!(inner.residual, 0.0);
    }

    #[test]
    fn multi_start_agreement() {
        let g = mf_game(6, 0.3);
        let pl = Policy::uniform(3, 2);
        let cfg = MfConfig {
            tol: 1e-9,
            ..MfConfig::default()
        };
        let r = Responder::new(&g, Variant::Regularized { rho: 0.7 }, cfg.br).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut sols = Vec::new();
        for _ in 0..5 {
            let mu0 = random_mean_field(&mut rng, 3, 2);
            let inner = solve_inner_with(&g, &pl, &mu0, &r, &cfg).unwrap();
            assert!(inner.converged);
            sols.push(inner.mean_field);
        }
        for a in &sols {
            for b in &sols {
                assert!(a.l1(b) <= 2.0 * cfg.tol * 10.0);
            }
        }
    }

    #[test]
    fn damping_keeps_the_fixed_point() {
        let g = mf_game(6, 0.3);
        let pl = Policy::uniform(3, 2);
        let plain = MfConfig {
            tol: 1e-10,
            ..MfConfig::default()
        };
        let damped = MfConfig { damping: 0.4, ..plain };
        let r = Responder::new(&g, Variant::Regularized { rho: 0.7 }, plain.br).unwrap();
        let mu0 = MeanField::for_game(&g);
        let a = solve_inner_with(&g, &pl, &mu0, &r, &plain).unwrap();
        let b = solve_inner_with(&g, &pl, &mu0, &r, &damped).unwrap();
        assert!(a.converged && b.converged);
        assert!(a.mean_field.l1(&b.mean_field) < 1e-8);
        let bad = MfConfig { damping: 0.0, ..plain };
        assert!(solve_inner_with(&g, &pl, &mu0, &r, &bad).is_err());
    }

    #[test]
    fn mf_independent_game_reduces_to_sse() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = Dims::new(2, 2, 2, 2);
        let base = random::game(&mut rng, d, 0.8, 1.0);
        let g = base.clone().with_coupling(Arc::new(LinearCoupling::zero(&d, &base.tables)));
        let variant = Variant::Regularized { rho: 0.5 };
        let cfg = MfConfig {
            tol: 1e-9,
            ..MfConfig::default()
        };
        let mfe = solve_smfe(&g, None, None, variant, &cfg).unwrap();
        let sse = solve_sse(&base, None, variant, 1e-9, 500).unwrap();
        assert!(mfe.converged && sse.converged);
        assert!(policy_l1_distance(&mfe.leader_policy, &sse.leader_policy).unwrap() <= 2e-9 * 10.0);
        assert!(policy_l1_distance(&mfe.follower_policy, &sse.follower_policy).unwrap() <= 2e-9 * 10.0);
    }

    #[test]
    fn csv_exports() {
        let g = mf_game(11, 0.2);
        let res = solve_smfe(&g, None, None, Variant::Regularized { rho: 0.5 }, &MfConfig::default()).unwrap();
        let mut buf = Vec::new();
        res.mean_field.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
        let mut buf = Vec::new();
        res.write_diagnostics_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), res.outer_iterations + 1);
    }

    #[test]
    fn identical_samples_are_skipped() {
        // With samples = 0 every constant stays zero and nothing divides.
        let g = mf_game(12, 0.2);
        let rep = verify_mf_contraction(&g, Variant::Regularized { rho: 0.5 }, 0, 0, &MfConfig::default()).unwrap();
        assert_eq!(rep.inner_product, 0.0);
        assert_eq!(rep.skipped, 0);
    }

    #[test]
    fn decoupled_kernel_has_zero_mf_sensitivity() {
        let d = Dims::new(1, 3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let base = random::game(&mut rng, d, 0.8, 1.0);
        let g = base.clone().with_coupling(Arc::new(LinearCoupling::zero(&d, &base.tables)));
        let rep = verify_mf_contraction(&g, Variant::Regularized { rho: 0.5 }, 20, 1, &MfConfig::default()).unwrap();
        assert_eq!(rep.d_f_mu, 0.0);
        assert!(rep.d_mu_mu > 0.0 && rep.d_mu_mu <= 1.0 + 1e-12);
    }

    #[test]
    fn regularized_follower_constants_within_d_reg() {
        let g = mf_game(14, 0.3);
        let rho = 0.5;
        let lip = mf_regularized_lipschitz(&g, Agent::Follower, rho, 50, 3);
        let rep = verify_mf_contraction(&g, Variant::Regularized { rho }, 50, 4, &MfConfig::default()).unwrap();
        assert!(rep.d_f_l <= lip.d_reg, "{} > {}", rep.d_f_l, lip.d_reg);
        assert!(rep.d_f_mu <= lip.d_reg, "{} > {}", rep.d_f_mu, lip.d_reg);
    }

    proptest! {
        #[test]
        fn pushforward_conserves_mass(seed in 0u64..500) {
            let g = mf_game(seed, 0.4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = random_mean_field(&mut rng, 3, 2);
            let pl = random::policy(&mut rng, 3, 2);
            let pf = random::policy(&mut rng, 3, 2);
            let next = mf_pushforward(&mu, &pl, &pf, &g, 0).unwrap();
            prop_assert!((next.mass.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(next.mass.iter().all(|x| *x >= 0.0));
        }
    }
}
