//! Reference computations used by the integration and acceptance suites.
//!
//! Everything here works from the raw tables and plain loops so that it can
//! serve as an oracle for the library routines.

#![allow(dead_code)]

use sgame_core::energy::GridSpec;
use sgame_core::lp::{LinearProgram, Sense};
use sgame_core::{GameSpec, MeanField};

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-11 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

pub fn softmax(x: &[f64], alpha: f64) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (alpha * (v - m)).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn sup_l1(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    p.iter().zip(q).map(|(a, b)| l1(a, b)).fold(0.0, f64::max)
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Raw game tables, optionally already shifted by a mean field.
#[derive(Clone)]
pub struct RawGame {
    pub nl: usize,
    pub nf: usize,
    pub al: usize,
    pub af: usize,
    pub gamma_l: f64,
    pub gamma_f: f64,
    /// `[s_L][a_L][a_F][s_L']`
    pub pl: Vec<f64>,
    /// `[s_F][a_F][a_L][s_F']`
    pub pf: Vec<f64>,
    /// `[s_L][s_F][a_L][a_F]`
    pub rl: Vec<f64>,
    /// `[s_F][s_L][a_F][a_L]`
    pub rf: Vec<f64>,
}

impl RawGame {
    pub fn from_spec(spec: &GameSpec) -> Self {
        let d = spec.dims;
        RawGame {
            nl: d.leader_states,
            nf: d.follower_states,
            al: d.leader_actions,
            af: d.follower_actions,
            gamma_l: spec.gamma_l,
            gamma_f: spec.gamma_f,
            pl: spec.tables.transition_l.clone(),
            pf: spec.tables.transition_f.clone(),
            rl: spec.tables.reward_l.clone(),
            rf: spec.tables.reward_f.clone(),
        }
    }

    /// Tables under a frozen mean field for a game with an affine coupling.
    pub fn at_mean_field(spec: &GameSpec, mu: &[f64]) -> Self {
        let mut g = Self::from_spec(spec);
        let Some(c) = spec.coupling.as_ref().and_then(|c| c.as_linear()) else {
            return g;
        };
        let k = g.nf * g.af;
        let dot = |row: &[f64]| row.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>();
        for sf in 0..g.nf {
            for a in 0..g.af {
                let add = dot(&c.reward_f[(sf * g.af + a) * k..(sf * g.af + a + 1) * k]);
                for sl in 0..g.nl {
                    for b in 0..g.al {
                        g.rf[((sf * g.nl + sl) * g.af + a) * g.al + b] += add;
                    }
                }
            }
        }
        for b in 0..g.al {
            let add = dot(&c.reward_l[b * k..(b + 1) * k]);
            for sl in 0..g.nl {
                for sf in 0..g.nf {
                    for a in 0..g.af {
                        g.rl[((sl * g.nf + sf) * g.al + b) * g.af + a] += add;
                    }
                }
            }
        }
        let w = dot(&c.kernel_weight).clamp(0.0, 1.0);
        for (p, q) in g.pf.iter_mut().zip(&c.transition_f_alt) {
            *p = (1.0 - w) * *p + w * q;
        }
        g
    }

    pub fn joint_states(&self) -> usize {
        self.nl * self.nf
    }

    pub fn p_leader(&self, sl: usize, al: usize, af: usize, next: usize) -> f64 {
        self.pl[((sl * self.al + al) * self.af + af) * self.nl + next]
    }

    pub fn p_follower(&self, sf: usize, af: usize, al: usize, next: usize) -> f64 {
        self.pf[((sf * self.af + af) * self.al + al) * self.nf + next]
    }

    pub fn r_leader(&self, sl: usize, sf: usize, al: usize, af: usize) -> f64 {
        self.rl[((sl * self.nf + sf) * self.al + al) * self.af + af]
    }

    pub fn r_follower(&self, sf: usize, sl: usize, af: usize, al: usize) -> f64 {
        self.rf[((sf * self.nl + sl) * self.af + af) * self.al + al]
    }

    /// Single-agent problem faced by the leader (`leader = true`) or the
    /// follower against a fixed opponent policy over joint states.
    pub fn induced(&self, leader: bool, opponent: &[Vec<f64>]) -> Induced {
        let nj = self.joint_states();
        let (na, nb) = if leader { (self.al, self.af) } else { (self.af, self.al) };
        let mut r = vec![vec![0.0; na]; nj];
        let mut p = vec![vec![vec![0.0; nj]; na]; nj];
        for j in 0..nj {
            let (sl, sf) = (j / self.nf, j % self.nf);
            for a in 0..na {
                for b in 0..nb {
                    let w = opponent[j][b];
                    let (a_l, a_f) = if leader { (a, b) } else { (b, a) };
                    r[j][a] += w
                        * if leader {
                            self.r_leader(sl, sf, a_l, a_f)
                        } else {
                            self.r_follower(sf, sl, a_f, a_l)
                        };
                    for sl2 in 0..self.nl {
                        for sf2 in 0..self.nf {
                            p[j][a][sl2 * self.nf + sf2] +=
                                w * self.p_leader(sl, a_l, a_f, sl2) * self.p_follower(sf, a_f, a_l, sf2);
                        }
                    }
                }
            }
        }
        Induced {
            gamma: if leader { self.gamma_l } else { self.gamma_f },
            r,
            p,
        }
    }
}

pub struct Induced {
    pub gamma: f64,
    pub r: Vec<Vec<f64>>,
    pub p: Vec<Vec<Vec<f64>>>,
}

impl Induced {
    /// Action values by value iteration; `rho = 0` is the unregularized problem.
    pub fn q_values(&self, rho: f64, tol: f64) -> Vec<Vec<f64>> {
        let n = self.r.len();
        let mut q = vec![vec![0.0; self.r[0].len()]; n];
        loop {
            let v: Vec<f64> = q.iter().map(|row| soft_max(row, rho)).collect();
            let next: Vec<Vec<f64>> = (0..n)
                .map(|s| {
                    (0..self.r[s].len())
                        .map(|a| self.r[s][a] + self.gamma * self.p[s][a].iter().zip(&v).map(|(p, x)| p * x).sum::<f64>())
                        .collect()
                })
                .collect();
            let diff = next.iter().flatten().zip(q.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            q = next;
            if diff <= tol {
                return q;
            }
        }
    }

    /// Optimal state values; the soft value when `rho > 0`.
    pub fn optimal_values(&self, rho: f64, tol: f64) -> Vec<f64> {
        self.q_values(rho, tol).iter().map(|row| soft_max(row, rho)).collect()
    }

    pub fn soft_best_response(&self, rho: f64, tol: f64) -> Vec<Vec<f64>> {
        self.q_values(rho, tol).iter().map(|row| softmax(row, 1.0 / rho)).collect()
    }

    /// Value of a policy with reward `r + rho * H(pi(s))`, by a direct linear solve.
    pub fn evaluate(&self, pi: &[Vec<f64>], rho: f64) -> Vec<f64> {
        let n = self.r.len();
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for s in 0..n {
            a[s][s] += 1.0;
            for (act, &w) in pi[s].iter().enumerate() {
                b[s] += w * self.r[s][act];
                for s2 in 0..n {
                    a[s][s2] -= self.gamma * w * self.p[s][act][s2];
                }
            }
            b[s] += rho * entropy(&pi[s]);
        }
        solve_linear(a, b).expect("policy evaluation is nonsingular for gamma < 1")
    }
}

/// `max` when `rho = 0`, otherwise `rho * log sum exp(q / rho)`.
pub fn soft_max(row: &[f64], rho: f64) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if rho == 0.0 {
        m
    } else {
        m + rho * row.iter().map(|x| ((x - m) / rho).exp()).sum::<f64>().ln()
    }
}

/// Next follower distribution over `(s_F, a_F)` with the leader held at `leader_state`.
pub fn pushforward(spec: &GameSpec, mu: &[f64], pi_l: &[Vec<f64>], pi_f: &[Vec<f64>], leader_state: usize) -> Vec<f64> {
    let g = RawGame::at_mean_field(spec, mu);
    let mut nu = vec![0.0; g.nf];
    for s in 0..g.nf {
        let j = leader_state * g.nf + s;
        for a in 0..g.af {
            for b in 0..g.al {
                for s2 in 0..g.nf {
                    nu[s2] += mu[s * g.af + a] * pi_l[j][b] * g.p_follower(s, a, b, s2);
                }
            }
        }
    }
    let mut out = vec![0.0; g.nf * g.af];
    for s2 in 0..g.nf {
        for a2 in 0..g.af {
            out[s2 * g.af + a2] = nu[s2] * pi_f[leader_state * g.nf + s2][a2];
        }
    }
    out
}

pub fn rows(p: &sgame_core::Policy) -> Vec<Vec<f64>> {
    p.rows().map(|r| r.to_vec()).collect()
}

pub fn mass(mu: &MeanField) -> &[f64] {
    &mu.mass
}

fn for_each_subset(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

/// Minimum of an LP with finite bounds by enumerating every basic solution of
/// its inequality system; `None` when no vertex is feasible.
pub fn lp_vertex_minimum(lp: &LinearProgram) -> Option<f64> {
    let n = lp.objective.len();
    let mut eqs: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut ineqs: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in &lp.rows {
        match r.sense {
            Sense::Eq => eqs.push((r.coeffs.clone(), r.rhs)),
            Sense::Le => ineqs.push((r.coeffs.clone(), r.rhs)),
            Sense::Ge => ineqs.push((r.coeffs.iter().map(|a| -a).collect(), -r.rhs)),
        }
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        ineqs.push((e.clone(), lp.upper[j]));
        e[j] = -1.0;
        ineqs.push((e, -lp.lower[j]));
    }
    let feasible = |x: &[f64]| {
        let dot = |a: &[f64]| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
        eqs.iter().all(|(a, b)| (dot(a) - b).abs() <= 1e-7 * (1.0 + b.abs()))
            && ineqs.iter().all(|(a, b)| dot(a) <= b + 1e-7 * (1.0 + b.abs()))
    };
    let planes: Vec<&(Vec<f64>, f64)> = eqs.iter().chain(&ineqs).collect();
    let mut best: Option<f64> = None;
    for_each_subset(planes.len(), n, &mut |pick| {
        let a: Vec<Vec<f64>> = pick.iter().map(|&i| planes[i].0.clone()).collect();
        let b: Vec<f64> = pick.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = solve_linear(a, b) {
            if feasible(&x) {
                let v: f64 = lp.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
                best = Some(best.map_or(v, |m: f64| m.min(v)));
            }
        }
    });
    best
}

/// Dispatch computed in generator-output space with line flows from a PTDF
/// matrix, by enumerating vertices of the breakpoint arrangement.
pub struct OpfOracle {
    pub cost: f64,
    pub output: Vec<f64>,
    pub flows: Vec<f64>,
}

/// Convex piecewise-linear interpolation breakpoints of each generator's
/// quadratic cost: uniform over `[0, range]` plus the nameplate.
pub fn breakpoints(grid: &GridSpec, segments: usize, range_mw: Option<f64>) -> Vec<Vec<f64>> {
    grid.generators
        .iter()
        .map(|g| {
            let cap = g.max_mw;
            if g.cost[0] == 0.0 {
                return vec![0.0, cap];
            }
            let r = range_mw.map_or(cap, |r| r.min(cap));
            let mut b: Vec<f64> = (0..=segments).map(|k| r * k as f64 / segments as f64).collect();
            if r < cap {
                b.push(cap);
            }
            b
        })
        .collect()
}

fn quad(c: &[f64], p: f64) -> f64 {
    c[0] * p * p + c[1] * p + c[2]
}

fn interp_cost(c: &[f64], bps: &[f64], p: f64) -> f64 {
    for w in bps.windows(2) {
        if p <= w[1] + 1e-12 {
            let t = (p - w[0]) / (w[1] - w[0]);
            return quad(c, w[0]) + t * (quad(c, w[1]) - quad(c, w[0]));
        }
    }
    f64::INFINITY
}

/// Line flows per MW of net injection at each bus, with bus 0 as reference.
pub fn ptdf(grid: &GridSpec) -> Vec<Vec<f64>> {
    let nb = grid.buses.len();
    let idx = |name: &str| grid.buses.iter().position(|b| b.name == name).unwrap();
    let ends: Vec<(usize, usize, f64)> = grid.lines.iter().map(|l| (idx(&l.source), idx(&l.target), l.reactance_ohm)).collect();
    let mut bmat = vec![vec![0.0; nb]; nb];
    for &(s, t, x) in &ends {
        let y = 1.0 / x;
        bmat[s][s] += y;
        bmat[t][t] += y;
        bmat[s][t] -= y;
        bmat[t][s] -= y;
    }
    let red: Vec<Vec<f64>> = (1..nb).map(|i| (1..nb).map(|j| bmat[i][j]).collect()).collect();
    let mut out = vec![vec![0.0; nb]; ends.len()];
    for bus in 1..nb {
        let mut rhs = vec![0.0; nb - 1];
        rhs[bus - 1] = 1.0;
        let th = solve_linear(red.clone(), rhs).unwrap();
        let theta = |i: usize| if i == 0 { 0.0 } else { th[i - 1] };
        for (l, &(s, t, x)) in ends.iter().enumerate() {
            out[l][bus] = (theta(s) - theta(t)) / x;
        }
    }
    out
}

pub fn opf_oracle(grid: &GridSpec, demand: &[f64], segments: usize, range_mw: Option<f64>) -> Option<OpfOracle> {
    let ng = grid.generators.len();
    let nb = grid.buses.len();
    let gbus: Vec<usize> = grid.generators.iter().map(|g| grid.buses.iter().position(|b| b.name == g.bus).unwrap()).collect();
    let bps = breakpoints(grid, segments, range_mw);
    let h = ptdf(grid);
    let total: f64 = demand.iter().sum();
    // Hyperplanes a.p = b in generator space.
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for (l, line) in grid.lines.iter().enumerate() {
        let a: Vec<f64> = (0..ng).map(|g| h[l][gbus[g]]).collect();
        let base: f64 = (0..nb).map(|b| h[l][b] * demand[b]).sum();
        planes.push((a.clone(), line.flow_limit_mw + base));
        planes.push((a, -line.flow_limit_mw + base));
    }
    for (g, b) in bps.iter().enumerate() {
        for &v in b {
            let mut a = vec![0.0; ng];
            a[g] = 1.0;
            planes.push((a, v));
        }
    }
    let flows_of = |p: &[f64]| -> Vec<f64> {
        (0..grid.lines.len())
            .map(|l| (0..nb).map(|b| h[l][b] * (-demand[b])).sum::<f64>() + (0..ng).map(|g| h[l][gbus[g]] * p[g]).sum::<f64>())
            .collect()
    };
    let mut best: Option<OpfOracle> = None;
    for_each_subset(planes.len(), ng - 1, &mut |pick| {
        let mut a = vec![vec![1.0; ng]];
        let mut b = vec![total];
        for &i in pick {
            a.push(planes[i].0.clone());
            b.push(planes[i].1);
        }
        let Some(p) = solve_linear(a, b) else { return };
        if p.iter().zip(&grid.generators).any(|(x, g)| *x < -1e-9 || *x > g.max_mw + 1e-9) {
            return;
        }
        let f = flows_of(&p);
        if f.iter().zip(&grid.lines).any(|(x, l)| x.abs() > l.flow_limit_mw + 1e-9) {
            return;
        }
        let cost: f64 = (0..ng).map(|g| interp_cost(&grid.generators[g].cost, &bps[g], p[g].max(0.0))).sum();
        if best.as_ref().map_or(true, |o| cost < o.cost) {
            best = Some(OpfOracle { cost, output: p, flows: f });
        }
    });
    best
}

/// Central finite difference of the oracle cost in each bus demand.
pub fn opf_oracle_prices(grid: &GridSpec, demand: &[f64], segments: usize, range_mw: Option<f64>, h: f64) -> Vec<f64> {
    (0..demand.len())
        .map(|b| {
            let mut up = demand.to_vec();
            let mut dn = demand.to_vec();
            up[b] += h;
            dn[b] -= h;
            let cu = opf_oracle(grid, &up, segments, range_mw).unwrap().cost;
            let cd = opf_oracle(grid, &dn, segments, range_mw).unwrap().cost;
            (cu - cd) / (2.0 * h)
        })
        .collect()
}
