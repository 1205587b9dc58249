//! Game data model: dense index spaces, kernels, rewards and policies.
//!
//! Policies are indexed by the joint state `(s_L, s_F)` flattened as
//! `s_L * |S_F| + s_F`, which is the effective state each agent conditions
//! on. A policy that only looks at the agent's own state is the special
//! case with rows constant across the other coordinate.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::MeanField;

pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Agent {
    Leader,
    Follower,
}

impl Agent {
    pub fn other(self) -> Agent {
        match self {
            Agent::Leader => Agent::Follower,
            Agent::Follower => Agent::Leader,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub leader_states: usize,
    pub follower_states: usize,
    pub leader_actions: usize,
    pub follower_actions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JointState {
    pub s_l: usize,
    pub s_f: usize,
}

impl Dims {
    pub fn new(leader_states: usize, follower_states: usize, leader_actions: usize, follower_actions: usize) -> Self {
        Dims {
            leader_states,
            follower_states,
            leader_actions,
            follower_actions,
        }
    }

    pub fn joint_states(&self) -> usize {
        self.leader_states * self.follower_states
    }

    pub fn joint(&self, s: JointState) -> usize {
        s.s_l * self.follower_states + s.s_f
    }

    pub fn split(&self, j: usize) -> JointState {
        JointState {
            s_l: j / self.follower_states,
            s_f: j % self.follower_states,
        }
    }

    pub fn states(&self, agent: Agent) -> usize {
        match agent {
            Agent::Leader => self.leader_states,
            Agent::Follower => self.follower_states,
        }
    }

    pub fn actions(&self, agent: Agent) -> usize {
        match agent {
            Agent::Leader => self.leader_actions,
            Agent::Follower => self.follower_actions,
        }
    }

    /// Size of the follower mean-field support `S_F x A_F`.
    pub fn mf_size(&self) -> usize {
        self.follower_states * self.follower_actions
    }

    pub fn transition_l_len(&self) -> usize {
        self.leader_states * self.leader_actions * self.follower_actions * self.leader_states
    }

    pub fn transition_f_len(&self) -> usize {
        self.follower_states * self.follower_actions * self.leader_actions * self.follower_states
    }

    pub fn reward_len(&self) -> usize {
        self.joint_states() * self.leader_actions * self.follower_actions
    }
}

/// Kernel and reward tables, flattened row-major.
///
/// * `transition_l[s_L][a_L][a_F][s_L']`
/// * `transition_f[s_F][a_F][a_L][s_F']`
/// * `reward_l[s_L][s_F][a_L][a_F]`
/// * `reward_f[s_F][s_L][a_F][a_L]`
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub transition_l: Vec<f64>,
    pub transition_f: Vec<f64>,
    pub reward_l: Vec<f64>,
    pub reward_f: Vec<f64>,
}

impl Tables {
    pub fn zeros(d: &Dims) -> Self {
        Tables {
            transition_l: vec![0.0; d.transition_l_len()],
            transition_f: vec![0.0; d.transition_f_len()],
            reward_l: vec![0.0; d.reward_len()],
            reward_f: vec![0.0; d.reward_len()],
        }
    }

    pub fn idx_pl(d: &Dims, s: usize, a: usize, b: usize) -> usize {
        ((s * d.leader_actions + a) * d.follower_actions + b) * d.leader_states
    }

    pub fn idx_pf(d: &Dims, s: usize, a: usize, b: usize) -> usize {
        ((s * d.follower_actions + a) * d.leader_actions + b) * d.follower_states
    }

    pub fn idx_rl(d: &Dims, s_l: usize, s_f: usize, a_l: usize, a_f: usize) -> usize {
        ((s_l * d.follower_states + s_f) * d.leader_actions + a_l) * d.follower_actions + a_f
    }

    pub fn idx_rf(d: &Dims, s_f: usize, s_l: usize, a_f: usize, a_l: usize) -> usize {
        ((s_f * d.leader_states + s_l) * d.follower_actions + a_f) * d.leader_actions + a_l
    }

    /// Next-own-state distribution of `agent` from its state, action and the
    /// other agent's action.
    pub fn transition(&self, d: &Dims, agent: Agent, s: usize, a: usize, b: usize) -> &[f64] {
        match agent {
            Agent::Leader => {
                let i = Self::idx_pl(d, s, a, b);
                &self.transition_l[i..i + d.leader_states]
            }
            Agent::Follower => {
                let i = Self::idx_pf(d, s, a, b);
                &self.transition_f[i..i + d.follower_states]
            }
        }
    }

    pub fn reward(&self, d: &Dims, agent: Agent, own_s: usize, other_s: usize, a: usize, b: usize) -> f64 {
        match agent {
            Agent::Leader => self.reward_l[Self::idx_rl(d, own_s, other_s, a, b)],
            Agent::Follower => self.reward_f[Self::idx_rf(d, own_s, other_s, a, b)],
        }
    }
}

/// Mean-field dependence of the tables.
pub trait MfCoupling: Send + Sync + fmt::Debug {
    fn tables_at(&self, dims: &Dims, base: &Tables, mu: &MeanField) -> Tables;

    fn validate(&self, _dims: &Dims, _base: &Tables, _bound: f64) -> Vec<Violation> {
        Vec::new()
    }

    fn as_linear(&self) -> Option<&LinearCoupling> {
        None
    }
}

/// Coupling that is affine in the mean field.
///
/// The follower reward at `(s_F, a_F)` gains `sum_k reward_f[(s_F,a_F)][k] mu_k`,
/// the leader reward at `a_L` gains `sum_k reward_l[a_L][k] mu_k`, and the
/// follower kernel becomes `(1-w) P_F + w P_F_alt` with `w = <kernel_weight, mu>`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCoupling {
    pub reward_f: Vec<f64>,
    pub reward_l: Vec<f64>,
    pub kernel_weight: Vec<f64>,
    pub transition_f_alt: Vec<f64>,
}

impl LinearCoupling {
    pub fn zero(d: &Dims, base: &Tables) -> Self {
        let k = d.mf_size();
        LinearCoupling {
            reward_f: vec![0.0; k * k],
            reward_l: vec![0.0; d.leader_actions * k],
            kernel_weight: vec![0.0; k],
            transition_f_alt: base.transition_f.clone(),
        }
    }
}

impl MfCoupling for LinearCoupling {
    fn tables_at(&self, d: &Dims, base: &Tables, mu: &MeanField) -> Tables {
        let k = d.mf_size();
        let m = &mu.mass;
        let mut t = base.clone();
        for sf in 0..d.follower_states {
            for af in 0..d.follower_actions {
                let row = &self.reward_f[(sf * d.follower_actions + af) * k..][..k];
                let add: f64 = row.iter().zip(m).map(|(c, x)| c * x).sum();
                for sl in 0..d.leader_states {
                    for al in 0..d.leader_actions {
                        t.reward_f[Tables::idx_rf(d, sf, sl, af, al)] += add;
                    }
                }
            }
        }
        for al in 0..d.leader_actions {
            let row = &self.reward_l[al * k..][..k];
            let add: f64 = row.iter().zip(m).map(|(c, x)| c * x).sum();
            for sl in 0..d.leader_states {
                for sf in 0..d.follower_states {
                    for af in 0..d.follower_actions {
                        t.reward_l[Tables::idx_rl(d, sl, sf, al, af)] += add;
                    }
                }
            }
        }
        let w: f64 = self
            .kernel_weight
            .iter()
            .zip(m)
            .map(|(c, x)| c * x)
            .sum::<f64>()
            .clamp(0.0, 1.0);
        if w > 0.0 {
            for (p, q) in t.transition_f.iter_mut().zip(&self.transition_f_alt) {
                *p = (1.0 - w) * *p + w * q;
            }
        }
        t
    }

    fn validate(&self, d: &Dims, base: &Tables, bound: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        let k = d.mf_size();
        if self.reward_f.len() != k * k
            || self.reward_l.len() != d.leader_actions * k
            || self.kernel_weight.len() != k
            || self.transition_f_alt.len() != d.transition_f_len()
        {
            out.push(Violation::new(ViolationKind::Shape, "mean_field", "coupling table sizes"));
            return out;
        }
        check_kernel(&mut out, "mean_field.transition_f_alt", &self.transition_f_alt, d.follower_states, |r| {
            let (s, rest) = (r / (d.follower_actions * d.leader_actions), r % (d.follower_actions * d.leader_actions));
            format!("[{}][{}][{}]", s, rest / d.leader_actions, rest % d.leader_actions)
        });
        for (i, w) in self.kernel_weight.iter().enumerate() {
            if !(0.0..=1.0).contains(w) {
                out.push(Violation::new(
                    ViolationKind::Range,
                    &format!("mean_field.kernel_weight[{i}]"),
                    &format!("{w} outside [0,1]"),
                ));
            }
        }
        let range = |row: &[f64]| {
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
            (lo, hi)
        };
        for sf in 0..d.follower_states {
            for af in 0..d.follower_actions {
                let (lo, hi) = range(&self.reward_f[(sf * d.follower_actions + af) * k..][..k]);
                for sl in 0..d.leader_states {
                    for al in 0..d.leader_actions {
                        let r = base.reward_f[Tables::idx_rf(d, sf, sl, af, al)];
                        if (r + lo).abs() > bound || (r + hi).abs() > bound {
                            out.push(Violation::new(
                                ViolationKind::Bound,
                                &format!("reward_f[{sf}][{sl}][{af}][{al}]"),
                                &format!("reaches [{}, {}] under the mean-field coupling, bound {bound}", r + lo, r + hi),
                            ));
                        }
                    }
                }
            }
        }
        for al in 0..d.leader_actions {
            let (lo, hi) = range(&self.reward_l[al * k..][..k]);
            for sl in 0..d.leader_states {
                for sf in 0..d.follower_states {
                    for af in 0..d.follower_actions {
                        let r = base.reward_l[Tables::idx_rl(d, sl, sf, al, af)];
                        if (r + lo).abs() > bound || (r + hi).abs() > bound {
                            out.push(Violation::new(
                                ViolationKind::Bound,
                                &format!("reward_l[{sl}][{sf}][{al}][{af}]"),
                                &format!("reaches [{}, {}] under the mean-field coupling, bound {bound}", r + lo, r + hi),
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    fn as_linear(&self) -> Option<&LinearCoupling> {
        Some(self)
    }
}

#[derive(Debug, Clone)]
pub struct GameSpec {
    pub dims: Dims,
    pub tables: Tables,
    pub gamma_l: f64,
    pub gamma_f: f64,
    pub reward_bound: f64,
    pub coupling: Option<Arc<dyn MfCoupling>>,
    pub labels: BTreeMap<String, Vec<String>>,
}

impl GameSpec {
    pub fn new(dims: Dims, tables: Tables, gamma_l: f64, gamma_f: f64, reward_bound: f64) -> Self {
        GameSpec {
            dims,
            tables,
            gamma_l,
            gamma_f,
            reward_bound,
            coupling: None,
            labels: BTreeMap::new(),
        }
    }

    pub fn with_coupling(mut self, coupling: Arc<dyn MfCoupling>) -> Self {
        self.coupling = Some(coupling);
        self
    }

    pub fn mf_dependent(&self) -> bool {
        self.coupling.is_some()
    }

    pub fn gamma(&self, agent: Agent) -> f64 {
        match agent {
            Agent::Leader => self.gamma_l,
            Agent::Follower => self.gamma_f,
        }
    }

    /// Tables instantiated at a mean field; base tables when there is no
    /// coupling or no mean field.
    pub fn tables_at(&self, mu: Option<&MeanField>) -> Cow<'_, Tables> {
        match (&self.coupling, mu) {
            (Some(c), Some(m)) => Cow::Owned(c.tables_at(&self.dims, &self.tables, m)),
            _ => Cow::Borrowed(&self.tables),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: GameFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let spec = file.into_spec()?;
        let report = validate_game(&spec);
        if !report.is_empty() {
            let msg: Vec<String> = report.iter().map(|v| v.to_string()).collect();
            return Err(Error::Invalid(msg.join("; ")));
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        let file = GameFile::from_spec(self)?;
        toml::to_string(&file).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    RowSum,
    Negative,
    Bound,
    Range,
    NonFinite,
    Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub detail: String,
}

impl Violation {
    fn new(kind: ViolationKind, location: &str, detail: &str) -> Self {
        Violation {
            kind,
            location: location.to_string(),
            detail: detail.to_string(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.detail)
    }
}

fn check_kernel(out: &mut Vec<Violation>, name: &str, table: &[f64], width: usize, label: impl Fn(usize) -> String) {
    for (r, row) in table.chunks(width).enumerate() {
        let loc = format!("{name}{}", label(r));
        if row.iter().any(|p| !p.is_finite()) {
            out.push(Violation::new(ViolationKind::NonFinite, &loc, "non-finite probability"));
            continue;
        }
        if let Some(p) = row.iter().find(|p| **p < 0.0) {
            out.push(Violation::new(ViolationKind::Negative, &loc, &format!("negative entry {p}")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            out.push(Violation::new(ViolationKind::RowSum, &loc, &format!("row sums to {s:.6}")));
        }
    }
}

/// Every violated game invariant; empty when the game is well formed.
pub fn validate_game(spec: &GameSpec) -> Vec<Violation> {
    let d = &spec.dims;
    let t = &spec.tables;
    let mut out = Vec::new();
    if d.leader_states == 0 || d.follower_states == 0 || d.leader_actions == 0 || d.follower_actions == 0 {
        out.push(Violation::new(ViolationKind::Shape, "dims", "empty state or action space"));
        return out;
    }
    if t.transition_l.len() != d.transition_l_len()
        || t.transition_f.len() != d.transition_f_len()
        || t.reward_l.len() != d.reward_len()
        || t.reward_f.len() != d.reward_len()
    {
        out.push(Violation::new(ViolationKind::Shape, "tables", "table sizes do not match dimensions"));
        return out;
    }
    check_kernel(&mut out, "transition_l", &t.transition_l, d.leader_states, |r| {
        let (s, rest) = (r / (d.leader_actions * d.follower_actions), r % (d.leader_actions * d.follower_actions));
        format!("[{}][{}][{}]", s, rest / d.follower_actions, rest % d.follower_actions)
    });
    check_kernel(&mut out, "transition_f", &t.transition_f, d.follower_states, |r| {
        let (s, rest) = (r / (d.follower_actions * d.leader_actions), r % (d.follower_actions * d.leader_actions));
        format!("[{}][{}][{}]", s, rest / d.leader_actions, rest % d.leader_actions)
    });
    let bound = spec.reward_bound;
    if !(bound.is_finite() && bound >= 0.0) {
        out.push(Violation::new(ViolationKind::Range, "reward_bound", &format!("{bound} is not a finite bound")));
    }
    for (name, table, n1, n2, n3) in [
        ("reward_l", &t.reward_l, d.follower_states, d.leader_actions, d.follower_actions),
        ("reward_f", &t.reward_f, d.leader_states, d.follower_actions, d.leader_actions),
    ] {
        for (i, r) in table.iter().enumerate() {
            let loc = || {
                let (a, rest) = (i / (n1 * n2 * n3), i % (n1 * n2 * n3));
                let (b, rest) = (rest / (n2 * n3), rest % (n2 * n3));
                format!("{name}[{a}][{b}][{}][{}]", rest / n3, rest % n3)
            };
            if !r.is_finite() {
                out.push(Violation::new(ViolationKind::NonFinite, &loc(), "non-finite reward"));
            } else if r.abs() > bound {
                out.push(Violation::new(
                    ViolationKind::Bound,
                    &loc(),
                    &format!("|{r}| exceeds declared bound {bound}"),
                ));
            }
        }
    }
    for (name, g) in [("gamma_l", spec.gamma_l), ("gamma_f", spec.gamma_f)] {
        if !(0.0..1.0).contains(&g) {
            out.push(Violation::new(ViolationKind::Range, name, &format!("{g} outside [0,1)")));
        }
    }
    if let Some(c) = &spec.coupling {
        out.extend(c.validate(d, t, bound));
    }
    out
}

/// Row-stochastic table over joint states.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Policy {
            n_states: actions.len(),
            n_actions,
            probs,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::Dimension("ragged policy rows".into()));
        }
        let p = Policy {
            n_states: rows.len(),
            n_actions,
            probs: rows.concat(),
        };
        p.check()?;
        Ok(p)
    }

    /// Uniform policy over the joint states of a game for one agent.
    pub fn uniform_for(dims: &Dims, agent: Agent) -> Self {
        Policy::uniform(dims.joint_states(), dims.actions(agent))
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.n_actions)
    }

    pub fn check(&self) -> Result<()> {
        if self.probs.len() != self.n_states * self.n_actions {
            return Err(Error::Dimension("policy table size".into()));
        }
        for (s, row) in self.rows().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Invalid(format!("policy row {s} is not a probability vector")));
            }
        }
        Ok(())
    }

    pub fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, expected {}x{}",
                self.n_states, self.n_actions, n_states, n_actions
            )));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W, agent: &str, dims: Option<&Dims>) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["agent", "state", "s_l", "s_f", "action", "probability"])?;
        self.write_rows(&mut wr, agent, dims)?;
        wr.flush()?;
        Ok(())
    }

    pub fn write_rows<W: Write>(&self, wr: &mut csv::Writer<W>, agent: &str, dims: Option<&Dims>) -> Result<()> {
        for s in 0..self.n_states {
            let (sl, sf) = match dims {
                Some(d) => {
                    let j = d.split(s);
                    (j.s_l.to_string(), j.s_f.to_string())
                }
                None => (String::new(), String::new()),
            };
            for a in 0..self.n_actions {
                wr.write_record([
                    agent.to_string(),
                    s.to_string(),
                    sl.clone(),
                    sf.clone(),
                    a.to_string(),
                    crate::fmt_f64(self.probs[s * self.n_actions + a]),
                ])?;
            }
        }
        Ok(())
    }
}

/// Sup over states of the per-row l1 distance.
pub fn policy_l1_distance(p: &Policy, q: &Policy) -> Result<f64> {
    if p.n_states != q.n_states || p.n_actions != q.n_actions {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            p.n_states, p.n_actions, q.n_states, q.n_actions
        )));
    }
    Ok(p.rows()
        .zip(q.rows())
        .map(|(a, b)| crate::policy_ops::l1(a, b))
        .fold(0.0, f64::max))
}

/// Draw an index from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub state: JointState,
    pub a_l: usize,
    pub a_f: usize,
}

/// Roll out both policies for `len` steps with the tables at `mu`.
pub fn simulate<R: Rng + ?Sized>(
    spec: &GameSpec,
    pi_l: &Policy,
    pi_f: &Policy,
    mu: Option<&MeanField>,
    start: JointState,
    len: usize,
    rng: &mut R,
) -> Vec<Step> {
    let d = spec.dims;
    let t = spec.tables_at(mu);
    let mut s = start;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let j = d.joint(s);
        let a_l = sample_index(rng, pi_l.row(j));
        let a_f = sample_index(rng, pi_f.row(j));
        out.push(Step { state: s, a_l, a_f });
        let s_l = sample_index(rng, t.transition(&d, Agent::Leader, s.s_l, a_l, a_f));
        let s_f = sample_index(rng, t.transition(&d, Agent::Follower, s.s_f, a_f, a_l));
        s = JointState { s_l, s_f };
    }
    out
}

type Nested4 = Vec<Vec<Vec<Vec<f64>>>>;

#[derive(Debug, Serialize, Deserialize)]
struct MeanFieldSection {
    reward_f: Vec<Vec<f64>>,
    reward_l: Vec<Vec<f64>>,
    kernel_weight: Vec<f64>,
    transition_f_alt: Nested4,
}

#[derive(Debug, Serialize, Deserialize)]
struct GameFile {
    leader_states: usize,
    follower_states: usize,
    leader_actions: usize,
    follower_actions: usize,
    gamma_l: f64,
    gamma_f: f64,
    reward_bound: f64,
    transition_l: Nested4,
    transition_f: Nested4,
    reward_l: Nested4,
    reward_f: Nested4,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean_field: Option<MeanFieldSection>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    labels: BTreeMap<String, Vec<String>>,
}

fn flatten4(name: &str, t: &Nested4, shape: [usize; 4]) -> Result<Vec<f64>> {
    let bad = || Error::Parse(format!("{name} must have shape {shape:?}"));
    if t.len() != shape[0] {
        return Err(bad());
    }
    let mut out = Vec::with_capacity(shape.iter().product());
    for a in t {
        if a.len() != shape[1] {
            return Err(bad());
        }
        for b in a {
            if b.len() != shape[2] {
                return Err(bad());
            }
            for c in b {
                if c.len() != shape[3] {
                    return Err(bad());
                }
                out.extend_from_slice(c);
            }
        }
    }
    Ok(out)
}

fn nest4(v: &[f64], shape: [usize; 4]) -> Nested4 {
    v.chunks(shape[1] * shape[2] * shape[3])
        .map(|a| {
            a.chunks(shape[2] * shape[3])
                .map(|b| b.chunks(shape[3]).map(|c| c.to_vec()).collect())
                .collect()
        })
        .collect()
}

fn flatten2(name: &str, t: &[Vec<f64>], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if t.len() != rows || t.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse(format!("{name} must have shape [{rows}, {cols}]")));
    }
    Ok(t.concat())
}

impl GameFile {
    fn shapes(d: &Dims) -> [[usize; 4]; 4] {
        [
            [d.leader_states, d.leader_actions, d.follower_actions, d.leader_states],
            [d.follower_states, d.follower_actions, d.leader_actions, d.follower_states],
            [d.leader_states, d.follower_states, d.leader_actions, d.follower_actions],
            [d.follower_states, d.leader_states, d.follower_actions, d.leader_actions],
        ]
    }

    fn into_spec(self) -> Result<GameSpec> {
        let d = Dims::new(self.leader_states, self.follower_states, self.leader_actions, self.follower_actions);
        let sh = Self::shapes(&d);
        let tables = Tables {
            transition_l: flatten4("transition_l", &self.transition_l, sh[0])?,
            transition_f: flatten4("transition_f", &self.transition_f, sh[1])?,
            reward_l: flatten4("reward_l", &self.reward_l, sh[2])?,
            reward_f: flatten4("reward_f", &self.reward_f, sh[3])?,
        };
        let mut spec = GameSpec::new(d, tables, self.gamma_l, self.gamma_f, self.reward_bound);
        spec.labels = self.labels;
        if let Some(mf) = self.mean_field {
            let k = d.mf_size();
            let c = LinearCoupling {
                reward_f: flatten2("mean_field.reward_f", &mf.reward_f, k, k)?,
                reward_l: flatten2("mean_field.reward_l", &mf.reward_l, d.leader_actions, k)?,
                kernel_weight: mf.kernel_weight,
                transition_f_alt: flatten4("mean_field.transition_f_alt", &mf.transition_f_alt, sh[1])?,
            };
            spec.coupling = Some(Arc::new(c));
        }
        Ok(spec)
    }

    fn from_spec(spec: &GameSpec) -> Result<Self> {
        let d = spec.dims;
        let sh = Self::shapes(&d);
        let t = &spec.tables;
        let mean_field = match &spec.coupling {
            None => None,
            Some(c) => {
                let lin = c
                    .as_linear()
                    .ok_or_else(|| Error::Invalid("only affine mean-field couplings serialize".into()))?;
                let k = d.mf_size();
                Some(MeanFieldSection {
                    reward_f: lin.reward_f.chunks(k).map(|r| r.to_vec()).collect(),
                    reward_l: lin.reward_l.chunks(k).map(|r| r.to_vec()).collect(),
                    kernel_weight: lin.kernel_weight.clone(),
                    transition_f_alt: nest4(&lin.transition_f_alt, sh[1]),
                })
            }
        };
        Ok(GameFile {
            leader_states: d.leader_states,
            follower_states: d.follower_states,
            leader_actions: d.leader_actions,
            follower_actions: d.follower_actions,
            gamma_l: spec.gamma_l,
            gamma_f: spec.gamma_f,
            reward_bound: spec.reward_bound,
            transition_l: nest4(&t.transition_l, sh[0]),
            transition_f: nest4(&t.transition_f, sh[1]),
            reward_l: nest4(&t.reward_l, sh[2]),
            reward_f: nest4(&t.reward_f, sh[3]),
            mean_field,
            labels: spec.labels.clone(),
        })
    }
}

/// Random games for tests, benchmarks and property suites.
pub mod random {
    use super::*;

    pub fn simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
        let mut e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let s: f64 = e.iter().sum();
        e.iter_mut().for_each(|x| *x /= s);
        e
    }

    pub fn kernel<R: Rng + ?Sized>(rng: &mut R, rows: usize, width: usize) -> Vec<f64> {
        (0..rows).flat_map(|_| simplex(rng, width)).collect()
    }

    pub fn policy<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Policy {
        Policy {
            n_states,
            n_actions,
            probs: kernel(rng, n_states, n_actions),
        }
    }

    /// Game with uniform-random rewards in `[-scale, scale]` and Dirichlet(1) kernels.
    pub fn game<R: Rng + ?Sized>(rng: &mut R, dims: Dims, gamma: f64, scale: f64) -> GameSpec {
        let tables = Tables {
            transition_l: kernel(rng, dims.leader_states * dims.leader_actions * dims.follower_actions, dims.leader_states),
            transition_f: kernel(rng, dims.follower_states * dims.follower_actions * dims.leader_actions, dims.follower_states),
            reward_l: (0..dims.reward_len()).map(|_| rng.random_range(-scale..=scale)).collect(),
            reward_f: (0..dims.reward_len()).map(|_| rng.random_range(-scale..=scale)).collect(),
        };
        GameSpec::new(dims, tables, gamma, gamma, scale)
    }

    /// Random game with an affine mean-field coupling of strength `coupling`.
    pub fn mf_game<R: Rng + ?Sized>(rng: &mut R, dims: Dims, gamma: f64, scale: f64, coupling: f64) -> GameSpec {
        let mut spec = game(rng, dims, gamma, scale);
        let k = dims.mf_size();
        let c = LinearCoupling {
            reward_f: (0..k * k).map(|_| rng.random_range(-coupling..=coupling)).collect(),
            reward_l: (0..dims.leader_actions * k).map(|_| rng.random_range(-coupling..=coupling)).collect(),
            kernel_weight: (0..k).map(|_| rng.random_range(0.0..=1.0)).collect(),
            transition_f_alt: kernel(
                rng,
                dims.follower_states * dims.follower_actions * dims.leader_actions,
                dims.follower_states,
            ),
        };
        spec.reward_bound = scale + coupling;
        spec.coupling = Some(Arc::new(c));
        spec
    }
}
