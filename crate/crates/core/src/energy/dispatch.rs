//! DC optimal power flow with piecewise-linearized generator costs.

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Sense};

use super::grid::{Generator, GridSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchResult {
    pub output_mw: Vec<f64>,
    pub flows_mw: Vec<f64>,
    /// Bus angles with the first bus as reference; flow on a line is the
    /// angle difference divided by its reactance in ohms.
    pub angles: Vec<f64>,
    /// $/MWh, the dual of each bus balance row.
    pub lmp: Vec<f64>,
    pub total_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispatchOptions<'a> {
    pub segments: usize,
    pub range_mw: Option<f64>,
    /// Available MW per generator; nameplate when absent.
    pub availability: Option<&'a [f64]>,
}

impl DispatchOptions<'_> {
    pub fn new(segments: usize) -> Self {
        DispatchOptions {
            segments,
            range_mw: None,
            availability: None,
        }
    }
}

/// `(width MW, price $/MWh)` pieces of a generator's cost curve restricted to `available` MW.
pub fn cost_segments(g: &Generator, available: f64, segments: usize, range_mw: Option<f64>) -> Vec<(f64, f64)> {
    let cap = g.max_mw;
    let available = available.clamp(0.0, cap);
    let mut breaks = vec![0.0];
    if g.cost[0] == 0.0 || segments == 1 {
        breaks.push(cap);
    } else {
        let r = range_mw.map_or(cap, |r| r.min(cap));
        for k in 1..=segments {
            breaks.push(r * k as f64 / segments as f64);
        }
        if r < cap {
            breaks.push(cap);
        }
    }
    let mut out = Vec::new();
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if lo >= available {
            break;
        }
        if hi <= lo {
            continue;
        }
        let price = (g.cost_at(hi) - g.cost_at(lo)) / (hi - lo);
        out.push((hi.min(available) - lo, price));
    }
    out
}

pub fn dispatch(grid: &GridSpec, demand_mw: &[f64], segments: usize) -> Result<DispatchResult> {
    dispatch_with(grid, demand_mw, &DispatchOptions::new(segments))
}

pub fn dispatch_with(grid: &GridSpec, demand_mw: &[f64], opts: &DispatchOptions) -> Result<DispatchResult> {
    let nb = grid.buses.len();
    let nl = grid.lines.len();
    if demand_mw.len() != nb {
        return Err(Error::Dimension(format!("{} demands for {nb} buses", demand_mw.len())));
    }
    if demand_mw.iter().any(|d| !d.is_finite()) {
        return Err(Error::NaN);
    }
    if opts.segments == 0 {
        return Err(Error::Invalid("segments must be at least 1".into()));
    }
    let avail: Vec<f64> = match opts.availability {
        Some(a) if a.len() == grid.generators.len() => a.to_vec(),
        Some(_) => return Err(Error::Dimension("availability length".into())),
        None => grid.generators.iter().map(|g| g.max_mw).collect(),
    };
    let gbus = grid.generator_buses()?;
    let ends = grid.line_ends()?;

    // (generator, width, price)
    let mut segs = Vec::new();
    for (gi, g) in grid.generators.iter().enumerate() {
        for (w, p) in cost_segments(g, avail[gi], opts.segments, opts.range_mw) {
            segs.push((gi, w, p));
        }
    }
    let ns = segs.len();
    let n = ns + nb + nl;
    let theta = |b: usize| ns + b;
    let flow = |l: usize| ns + nb + l;

    let mut objective = vec![0.0; n];
    for (k, s) in segs.iter().enumerate() {
        objective[k] = s.2;
    }
    let mut lp = LinearProgram::new(objective);
    for (k, s) in segs.iter().enumerate() {
        lp.upper[k] = s.1;
    }
    for b in 0..nb {
        lp.lower[theta(b)] = if b == 0 { 0.0 } else { f64::NEG_INFINITY };
        lp.upper[theta(b)] = if b == 0 { 0.0 } else { f64::INFINITY };
    }
    for (l, line) in grid.lines.iter().enumerate() {
        lp.lower[flow(l)] = -line.flow_limit_mw;
        lp.upper[flow(l)] = line.flow_limit_mw;
    }
    for b in 0..nb {
        let mut row = vec![0.0; n];
        for (k, s) in segs.iter().enumerate() {
            if gbus[s.0] == b {
                row[k] = 1.0;
            }
        }
        for (l, &(src, tgt)) in ends.iter().enumerate() {
            if src == b {
                row[flow(l)] -= 1.0;
            }
            if tgt == b {
                row[flow(l)] += 1.0;
            }
        }
        lp.add_row(row, Sense::Eq, demand_mw[b]);
    }
    for (l, &(src, tgt)) in ends.iter().enumerate() {
        let x = grid.lines[l].reactance_ohm;
        let mut row = vec![0.0; n];
        row[flow(l)] = 1.0;
        row[theta(src)] -= 1.0 / x;
        row[theta(tgt)] += 1.0 / x;
        lp.add_row(row, Sense::Eq, 0.0);
    }

    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::Infeasible {
                certificate: sol.certificate.unwrap_or_default(),
            })
        }
        LpStatus::Unbounded => return Err(Error::Unbounded),
    }
    let mut output = vec![0.0; grid.generators.len()];
    for (k, s) in segs.iter().enumerate() {
        output[s.0] += sol.x[k];
    }
    let fixed: f64 = grid.generators.iter().map(|g| g.cost[2]).sum();
    Ok(DispatchResult {
        output_mw: output,
        flows_mw: (0..nl).map(|l| sol.x[flow(l)]).collect(),
        angles: (0..nb).map(|b| sol.x[theta(b)]).collect(),
        lmp: sol.duals[..nb].to_vec(),
        total_cost: sol.objective + fixed,
    })
}

/// Symmetric secant `(C(d + h e_b) - C(d - h e_b)) / 2h` of the optimal
/// cost at each bus. Unlike the dual it is continuous in demand, and it
/// equals the dual wherever the dual is constant over the window. Falls back
/// to a one-sided secant, then to the dual, where a shifted demand is infeasible.
pub fn smoothed_lmp(grid: &GridSpec, demand_mw: &[f64], opts: &DispatchOptions, h: f64) -> Result<Vec<f64>> {
    let base = dispatch_with(grid, demand_mw, opts)?;
    if !(h > 0.0) {
        return Ok(base.lmp);
    }
    let mut out = Vec::with_capacity(demand_mw.len());
    let mut shifted = demand_mw.to_vec();
    for b in 0..demand_mw.len() {
        shifted[b] = demand_mw[b] + h;
        let up = dispatch_with(grid, &shifted, opts).ok().map(|r| r.total_cost);
        shifted[b] = demand_mw[b] - h;
        let down = dispatch_with(grid, &shifted, opts).ok().map(|r| r.total_cost);
        shifted[b] = demand_mw[b];
        out.push(match (up, down) {
            (Some(u), Some(d)) => (u - d) / (2.0 * h),
            (Some(u), None) => (u - base.total_cost) / h,
            (None, Some(d)) => (base.total_cost - d) / h,
            (None, None) => base.lmp[b],
        });
    }
    Ok(out)
}

impl DispatchResult {
    /// Balance, flow-limit and capacity checks at 1e-6 MW.
    pub fn check(&self, grid: &GridSpec, demand_mw: &[f64], availability: Option<&[f64]>) -> Result<()> {
        let gbus = grid.generator_buses()?;
        let ends = grid.line_ends()?;
        let mut net = vec![0.0; grid.buses.len()];
        for (g, &b) in gbus.iter().enumerate() {
            net[b] += self.output_mw[g];
            let cap = availability.map_or(grid.generators[g].max_mw, |a| a[g]);
            if self.output_mw[g] < -1e-6 || self.output_mw[g] > cap + 1e-6 {
                return Err(Error::Invalid(format!("generator {} output {} outside [0, {cap}]", g, self.output_mw[g])));
            }
        }
        for (l, &(s, t)) in ends.iter().enumerate() {
            net[s] -= self.flows_mw[l];
            net[t] += self.flows_mw[l];
            if self.flows_mw[l].abs() > grid.lines[l].flow_limit_mw + 1e-6 {
                return Err(Error::Invalid(format!("line {l} flow {} over limit", self.flows_mw[l])));
            }
            let implied = (self.angles[s] - self.angles[t]) / grid.lines[l].reactance_ohm;
            if (implied - self.flows_mw[l]).abs() > 1e-6 {
                return Err(Error::Invalid(format!("line {l} flow inconsistent with angles")));
            }
        }
        for (b, (x, d)) in net.iter().zip(demand_mw).enumerate() {
            if (x - d).abs() > 1e-6 {
                return Err(Error::Invalid(format!("bus {b} imbalance {}", x - d)));
            }
        }
        Ok(())
    }
}
