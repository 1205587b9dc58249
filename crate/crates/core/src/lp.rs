//! Dense primal simplex (two-phase, Bland's rule) with row duals.
//!
//! Duals follow the sensitivity convention `y_i = d(objective)/d(b_i)`, so
//! a binding `<=` row of a minimization has `y_i <= 0`, a binding `>=` row
//! has `y_i >= 0`, and equality rows are free.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
pub const DEFAULT_PIVOT_CAP: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    fn token(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Minimize `c^T x` subject to row constraints and variable bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    /// Farkas multipliers over rows when infeasible, a primal ray when unbounded.
    pub certificate: Option<Vec<f64>>,
    pub pivots: usize,
}

impl LinearProgram {
    /// Nonnegative variables, no upper bounds, no rows.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            rows: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Constraint { coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension("bound vectors".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.coeffs.len() != n {
                return Err(Error::Dimension(format!("row {i} has {} coefficients", r.coeffs.len())));
            }
            if r.coeffs.iter().any(|a| !a.is_finite()) || !r.rhs.is_finite() {
                return Err(Error::Invalid(format!("row {i} has non-finite entries")));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("non-finite objective".into()));
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(Error::Invalid(format!("bounds of variable {j}")));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(Error::Invalid(format!("bounds of variable {j}")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let tok = |x: f64| {
            if x == f64::INFINITY {
                "inf".to_string()
            } else if x == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                crate::fmt_f64(x)
            }
        };
        let line = |head: &str, v: &[f64]| {
            let mut s = head.to_string();
            for x in v {
                s.push(' ');
                s.push_str(&tok(*x));
            }
            s
        };
        let mut out = String::new();
        writeln!(out, "{}", line("minimize", &self.objective)).unwrap();
        writeln!(out, "{}", line("lower", &self.lower)).unwrap();
        writeln!(out, "{}", line("upper", &self.upper)).unwrap();
        for r in &self.rows {
            let mut v = r.coeffs.clone();
            v.push(r.rhs);
            writeln!(out, "{}", line(r.sense.token(), &v)).unwrap();
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let num = |t: &str| -> Result<f64> {
            match t {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => t.parse::<f64>().map_err(|e| Error::Parse(format!("{t}: {e}"))),
            }
        };
        let mut objective = None;
        let mut lower = None;
        let mut upper = None;
        let mut rows = Vec::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let head = toks.next().unwrap();
            let vals = toks.map(num).collect::<Result<Vec<f64>>>()?;
            match head {
                "minimize" => objective = Some(vals),
                "lower" => lower = Some(vals),
                "upper" => upper = Some(vals),
                "<=" | "=" | ">=" => {
                    let sense = match head {
                        "<=" => Sense::Le,
                        "=" => Sense::Eq,
                        _ => Sense::Ge,
                    };
                    let (rhs, coeffs) = vals
                        .split_last()
                        .ok_or_else(|| Error::Parse("empty constraint row".into()))?;
                    rows.push(Constraint {
                        coeffs: coeffs.to_vec(),
                        sense,
                        rhs: *rhs,
                    });
                }
                other => return Err(Error::Parse(format!("unknown line head {other}"))),
            }
        }
        let objective = objective.ok_or_else(|| Error::Parse("missing minimize line".into()))?;
        let n = objective.len();
        let lp = LinearProgram {
            objective,
            rows,
            lower: lower.unwrap_or_else(|| vec![0.0; n]),
            upper: upper.unwrap_or_else(|| vec![f64::INFINITY; n]),
        };
        lp.check()?;
        Ok(lp)
    }
}

/// Column-substitution record `x_j = offset + sum coef * x'_col`.
struct VarMap {
    offset: f64,
    terms: Vec<(usize, f64)>,
}

enum RowOrigin {
    Original { row: usize, sign: f64 },
    Bound,
}

struct Standard {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    origin: Vec<RowOrigin>,
    vars: Vec<VarMap>,
    obj_offset: f64,
}

fn standardize(lp: &LinearProgram) -> Standard {
    let n = lp.n_vars();
    let mut vars = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        if l.is_finite() {
            vars.push(VarMap {
                offset: l,
                terms: vec![(ncols, 1.0)],
            });
            if u.is_finite() {
                bound_rows.push((ncols, u - l));
            }
            ncols += 1;
        } else if u.is_finite() {
            vars.push(VarMap {
                offset: u,
                terms: vec![(ncols, -1.0)],
            });
            ncols += 1;
        } else {
            vars.push(VarMap {
                offset: 0.0,
                terms: vec![(ncols, 1.0), (ncols + 1, -1.0)],
            });
            ncols += 2;
        }
    }
    let mut c = vec![0.0; ncols];
    let mut obj_offset = 0.0;
    for (j, v) in vars.iter().enumerate() {
        obj_offset += lp.objective[j] * v.offset;
        for (col, coef) in &v.terms {
            c[*col] += lp.objective[j] * coef;
        }
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut origin = Vec::new();
    for (i, r) in lp.rows.iter().enumerate() {
        let mut row = vec![0.0; ncols];
        let mut rhs = r.rhs;
        for (j, v) in vars.iter().enumerate() {
            let aj = r.coeffs[j];
            if aj == 0.0 {
                continue;
            }
            rhs -= aj * v.offset;
            for (col, coef) in &v.terms {
                row[*col] += aj * coef;
            }
        }
        let signs: &[f64] = match r.sense {
            Sense::Le => &[1.0],
            Sense::Ge => &[-1.0],
            Sense::Eq => &[1.0, -1.0],
        };
        for &s in signs {
            a.push(row.iter().map(|x| s * x).collect());
            b.push(s * rhs);
            origin.push(RowOrigin::Original { row: i, sign: s });
        }
    }
    for (col, ub) in bound_rows {
        let mut row = vec![0.0; ncols];
        row[col] = 1.0;
        a.push(row);
        b.push(ub);
        origin.push(RowOrigin::Bound);
    }
    Standard {
        a,
        b,
        c,
        origin,
        vars,
        obj_offset,
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize, cost: &mut [f64], cost_rhs: &mut f64) {
        let p = self.rows[r][col];
        for x in self.rows[r].iter_mut() {
            *x /= p;
        }
        self.rhs[r] /= p;
        let prow = self.rows[r].clone();
        let prhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][col];
            if f != 0.0 {
                for (x, y) in self.rows[i].iter_mut().zip(&prow) {
                    *x -= f * y;
                }
                self.rhs[i] -= f * prhs;
                self.rows[i][col] = 0.0;
            }
        }
        let f = cost[col];
        if f != 0.0 {
            for (x, y) in cost.iter_mut().zip(&prow) {
                *x -= f * y;
            }
            *cost_rhs -= f * prhs;
            cost[col] = 0.0;
        }
        self.basis[r] = col;
    }

    /// Runs Bland pivots over columns `< allowed`; `Ok(Some(col))` reports an unbounded column.
    fn run(&mut self, cost: &mut [f64], cost_rhs: &mut f64, allowed: usize, pivots: &mut usize, cap: usize) -> Result<Option<usize>> {
        loop {
            let enter = (0..allowed).find(|&j| cost[j] < -COST_TOL && !self.basis.contains(&j));
            let Some(col) = enter else { return Ok(None) };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let aij = self.rows[i][col];
                if aij > PIVOT_TOL {
                    let t = self.rhs[i] / aij;
                    best = match best {
                        None => Some((i, t)),
                        Some((bi, bt)) => {
                            if t < bt - 1e-12 || ((t - bt).abs() <= 1e-12 && self.basis[i] < self.basis[bi]) {
                                Some((i, t))
                            } else {
                                Some((bi, bt))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else { return Ok(Some(col)) };
            self.pivot(r, col, cost, cost_rhs);
            *pivots += 1;
            if *pivots > cap {
                return Err(Error::PivotLimit(cap));
            }
        }
    }
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    solve_lp_with_cap(lp, DEFAULT_PIVOT_CAP)
}

pub fn solve_lp_with_cap(lp: &LinearProgram, cap: usize) -> Result<LpSolution> {
    lp.check()?;
    let st = standardize(lp);
    let m = st.a.len();
    let nx = st.c.len();
    let n_struct = nx + m;
    let mut art_rows = Vec::new();
    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let n_art = st.b.iter().filter(|b| **b < 0.0).count();
    let width = n_struct + n_art;
    for i in 0..m {
        let mut row = vec![0.0; width];
        row[..nx].copy_from_slice(&st.a[i]);
        row[nx + i] = 1.0;
        let mut bi = st.b[i];
        if bi < 0.0 {
            for x in row.iter_mut() {
                *x = -*x;
            }
            bi = -bi;
            let acol = n_struct + art_rows.len();
            row[acol] = 1.0;
            basis.push(acol);
            art_rows.push(i);
        } else {
            basis.push(nx + i);
        }
        rows.push(row);
        rhs.push(bi);
    }
    let mut tab = Tableau {
        rows,
        rhs,
        basis,
        width,
    };
    let mut pivots = 0usize;

    if n_art > 0 {
        let mut cost = vec![0.0; width];
        for c in cost.iter_mut().skip(n_struct) {
            *c = 1.0;
        }
        let mut cost_rhs = 0.0;
        for &i in &art_rows {
            for j in 0..width {
                cost[j] -= tab.rows[i][j];
            }
            cost_rhs -= tab.rhs[i];
        }
        tab.run(&mut cost, &mut cost_rhs, width, &mut pivots, cap)?;
        let infeas = -cost_rhs;
        let scale = 1.0 + st.b.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if infeas > 1e-9 * scale {
            let y = phase_one_duals(&st, &tab.basis);
            let mut cert = vec![0.0; lp.rows.len()];
            for (r, o) in st.origin.iter().enumerate() {
                if let RowOrigin::Original { row, sign } = o {
                    cert[*row] += sign * y[r];
                }
            }
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![f64::NAN; lp.n_vars()],
                objective: f64::NAN,
                duals: vec![f64::NAN; lp.rows.len()],
                reduced_costs: vec![f64::NAN; lp.n_vars()],
                certificate: Some(cert),
                pivots,
            });
        }
        for r in 0..m {
            if tab.basis[r] >= n_struct {
                if let Some(col) = (0..n_struct).find(|&j| tab.rows[r][j].abs() > PIVOT_TOL && !tab.basis.contains(&j)) {
                    let mut dummy = vec![0.0; width];
                    let mut dr = 0.0;
                    tab.pivot(r, col, &mut dummy, &mut dr);
                    pivots += 1;
                } else {
                    return Err(Error::Invalid("degenerate artificial row could not be removed".into()));
                }
            }
        }
    }

    let mut cost = vec![0.0; tab.width];
    cost[..nx].copy_from_slice(&st.c);
    let mut cost_rhs = 0.0;
    for r in 0..m {
        let bj = tab.basis[r];
        let f = cost[bj];
        if f != 0.0 {
            for j in 0..tab.width {
                cost[j] -= f * tab.rows[r][j];
            }
            cost_rhs -= f * tab.rhs[r];
        }
    }
    if let Some(col) = tab.run(&mut cost, &mut cost_rhs, n_struct, &mut pivots, cap)? {
        let mut dir = vec![0.0; n_struct];
        dir[col] = 1.0;
        for r in 0..m {
            dir[tab.basis[r]] -= tab.rows[r][col];
        }
        let ray = map_back(&st.vars, &dir[..nx], false);
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![f64::NAN; lp.n_vars()],
            objective: f64::NEG_INFINITY,
            duals: vec![f64::NAN; lp.rows.len()],
            reduced_costs: vec![f64::NAN; lp.n_vars()],
            certificate: Some(ray),
            pivots,
        });
    }

    // Recover primal and dual values from the final basis with a fresh factorization.
    let column = |j: usize| -> Vec<f64> {
        if j < nx {
            st.a.iter().map(|row| row[j]).collect()
        } else {
            let mut e = vec![0.0; m];
            e[j - nx] = 1.0;
            e
        }
    };
    let mut bmat = DMatrix::<f64>::zeros(m, m);
    for (k, &j) in tab.basis.iter().enumerate() {
        for (i, v) in column(j).into_iter().enumerate() {
            bmat[(i, k)] = v;
        }
    }
    let cb = DVector::from_iterator(m, tab.basis.iter().map(|&j| if j < nx { st.c[j] } else { 0.0 }));
    let bvec = DVector::from_vec(st.b.clone());
    let (xb, y) = if m == 0 {
        (DVector::zeros(0), DVector::zeros(0))
    } else {
        let lu = bmat.clone().lu();
        let xb = lu.solve(&bvec).unwrap_or_else(|| DVector::from_vec(tab.rhs.clone()));
        let lut = bmat.transpose().lu();
        let y = lut.solve(&cb).unwrap_or_else(|| DVector::zeros(m));
        (xb, y)
    };
    let mut xs = vec![0.0; n_struct];
    for (k, &j) in tab.basis.iter().enumerate() {
        xs[j] = xb[k].max(0.0);
    }
    let x = map_back(&st.vars, &xs[..nx], true);
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    let _ = st.obj_offset;
    let mut duals = vec![0.0; lp.rows.len()];
    for (r, o) in st.origin.iter().enumerate() {
        if let RowOrigin::Original { row, sign } = o {
            duals[*row] += sign * y[r];
        }
    }
    let reduced_costs = (0..lp.n_vars())
        .map(|j| lp.objective[j] - lp.rows.iter().zip(&duals).map(|(r, y)| r.coeffs[j] * y).sum::<f64>())
        .collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        duals,
        reduced_costs,
        certificate: None,
        pivots,
    })
}

fn phase_one_duals(st: &Standard, basis: &[usize]) -> Vec<f64> {
    // Multipliers of the phase-one objective: rows with artificials carry weight.
    let m = st.a.len();
    let nx = st.c.len();
    let n_struct = nx + m;
    let mut bmat = DMatrix::<f64>::zeros(m, m);
    let mut cb = DVector::<f64>::zeros(m);
    let mut art = 0usize;
    let art_of: Vec<Option<usize>> = st
        .b
        .iter()
        .map(|b| {
            if *b < 0.0 {
                art += 1;
                Some(art - 1)
            } else {
                None
            }
        })
        .collect();
    for (k, &j) in basis.iter().enumerate() {
        if j < nx {
            for i in 0..m {
                bmat[(i, k)] = st.a[i][j];
            }
        } else if j < n_struct {
            bmat[(j - nx, k)] = 1.0;
        } else {
            let a = j - n_struct;
            let i = art_of.iter().position(|x| *x == Some(a)).unwrap();
            bmat[(i, k)] = -1.0;
            cb[k] = 1.0;
        }
    }
    match bmat.transpose().lu().solve(&cb) {
        Some(y) => y.iter().map(|v| -v).collect(),
        None => vec![0.0; m],
    }
}

fn map_back(vars: &[VarMap], xs: &[f64], with_offset: bool) -> Vec<f64> {
    vars.iter()
        .map(|v| {
            let base = if with_offset { v.offset } else { 0.0 };
            base + v.terms.iter().map(|(c, k)| k * xs[*c]).sum::<f64>()
        })
        .collect()
}

/// Scaled optimality residuals of a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub gap: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity).max(self.gap)
    }
}

pub fn kkt_residuals(lp: &LinearProgram, sol: &LpSolution) -> KktReport {
    let n = lp.n_vars();
    let scale = 1.0
        + lp.objective.iter().chain(lp.rows.iter().map(|r| &r.rhs)).fold(0.0f64, |a, b| a.max(b.abs()))
        + sol.x.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    let mut dual = 0.0f64;
    for (r, y) in lp.rows.iter().zip(&sol.duals) {
        let ax: f64 = r.coeffs.iter().zip(&sol.x).map(|(a, x)| a * x).sum();
        let slack = ax - r.rhs;
        let viol = match r.sense {
            Sense::Le => slack.max(0.0),
            Sense::Ge => (-slack).max(0.0),
            Sense::Eq => slack.abs(),
        };
        primal = primal.max(viol);
        let sign_viol = match r.sense {
            Sense::Le => y.max(0.0),
            Sense::Ge => (-y).max(0.0),
            Sense::Eq => 0.0,
        };
        dual = dual.max(sign_viol);
        comp = comp.max((y * slack).abs());
    }
    let mut dual_obj: f64 = lp.rows.iter().zip(&sol.duals).map(|(r, y)| r.rhs * y).sum();
    for j in 0..n {
        let d = sol.reduced_costs[j];
        let (l, u, x) = (lp.lower[j], lp.upper[j], sol.x[j]);
        primal = primal.max((l - x).max(0.0)).max((x - u).max(0.0));
        if d > 0.0 {
            if l.is_finite() {
                dual_obj += d * l;
                comp = comp.max((d * (x - l)).abs());
            } else {
                dual = dual.max(d);
            }
        } else if d < 0.0 {
            if u.is_finite() {
                dual_obj += d * u;
                comp = comp.max((d * (u - x)).abs());
            } else {
                dual = dual.max(-d);
            }
        }
    }
    KktReport {
        primal: primal / scale,
        dual: dual / scale,
        complementarity: comp / scale,
        gap: (sol.objective - dual_obj).abs() / scale,
    }
}
