//! Softmax, uniform argmax, simplex lattices and related helpers on
//! probability vectors.

use std::io::Write;

use crate::error::{Error, Result};

/// Absolute precision used to decide which entries tie for the maximum.
pub const TIE_PRECISION: f64 = 1e-12;

/// Default cap on the number of points an epsilon-net may hold.
pub const DEFAULT_NET_CAP: usize = 2_000_000;

/// Default floor for the measured action-gap profile.
pub const DEFAULT_DELTA_MIN: f64 = 1e-3;

pub fn softmax(values: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) || alpha.is_nan() {
        return Err(Error::NaN);
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Invalid(format!("softmax temperature {alpha}")));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (alpha * (v - max)).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Indices whose value is within `precision` of the maximum.
pub fn maximizers(values: &[f64], precision: f64) -> Vec<usize> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| max - **v <= precision)
        .map(|(i, _)| i)
        .collect()
}

pub fn argmax_uniform(values: &[f64]) -> Vec<f64> {
    argmax_uniform_with(values, TIE_PRECISION)
}

pub fn argmax_uniform_with(values: &[f64], precision: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    let idx = maximizers(values, precision);
    let w = 1.0 / idx.len() as f64;
    for i in idx {
        out[i] = w;
    }
    out
}

/// Gap between the maximum and the best value outside the maximizer set.
pub fn action_gap(q_row: &[f64]) -> f64 {
    let idx = maximizers(q_row, TIE_PRECISION);
    if idx.len() == q_row.len() {
        return f64::INFINITY;
    }
    let max = q_row[idx[0]];
    let mut second = f64::NEG_INFINITY;
    for (i, v) in q_row.iter().enumerate() {
        if !idx.contains(&i) && *v > second {
            second = *v;
        }
    }
    max - second
}

pub fn temperature_for(epsilon: f64, phi: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Invalid(format!("epsilon {epsilon} outside (0,1)")));
    }
    if phi == 0.0 {
        return Err(Error::ZeroGap);
    }
    if !(phi > 0.0) {
        return Err(Error::Invalid(format!("gap floor {phi}")));
    }
    Ok((1.0 / epsilon).ln() / phi)
}

/// Shannon entropy in nats with the convention 0 log 0 = 0.
pub fn entropy(row: &[f64]) -> f64 {
    row.iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Uniform simplex lattice `{k/m : sum k = m}` over `n` actions.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonNet {
    pub epsilon: f64,
    pub resolution: usize,
    pub actions: usize,
    pub points: Vec<Vec<f64>>,
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

pub fn lattice_size(n: usize, m: usize) -> f64 {
    binomial(m + n - 1, n - 1)
}

pub fn resolution_for(n: usize, epsilon: f64) -> usize {
    if n <= 1 {
        return 1;
    }
    ((2.0 * (n - 1) as f64 / epsilon) - 1e-9).ceil().max(1.0) as usize
}

pub fn build_epsilon_net(n: usize, epsilon: f64) -> Result<EpsilonNet> {
    build_epsilon_net_capped(n, epsilon, DEFAULT_NET_CAP)
}

pub fn build_epsilon_net_capped(n: usize, epsilon: f64, cap: usize) -> Result<EpsilonNet> {
    if n == 0 {
        return Err(Error::Invalid("action count must be at least 1".into()));
    }
    if !(epsilon > 0.0 && epsilon <= 2.0) {
        return Err(Error::Invalid(format!("epsilon {epsilon} outside (0,2]")));
    }
    let m = resolution_for(n, epsilon);
    let size = lattice_size(n, m);
    if size > cap as f64 {
        return Err(Error::NetTooLarge {
            required_m: m,
            points: size,
            cap,
        });
    }
    let mut net = EpsilonNet::with_resolution(n, m);
    net.epsilon = epsilon;
    Ok(net)
}

impl EpsilonNet {
    /// Lattice of denominator `m`; points come out in lexicographic order.
    pub fn with_resolution(n: usize, m: usize) -> Self {
        let mut points = Vec::new();
        let mut counts = vec![0usize; n];
        fn rec(i: usize, left: usize, counts: &mut Vec<usize>, m: usize, out: &mut Vec<Vec<f64>>) {
            let n = counts.len();
            if i == n - 1 {
                counts[i] = left;
                out.push(counts.iter().map(|k| *k as f64 / m as f64).collect());
                return;
            }
            for k in 0..=left {
                counts[i] = k;
                rec(i + 1, left - k, counts, m, out);
            }
        }
        if n == 1 {
            points.push(vec![1.0]);
        } else {
            rec(0, m, &mut counts, m, &mut points);
        }
        let epsilon = if n == 1 { 0.0 } else { 2.0 * (n - 1) as f64 / m as f64 };
        EpsilonNet {
            epsilon,
            resolution: m,
            actions: n,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string()];
        header.extend((0..self.actions).map(|a| format!("p{a}")));
        wr.write_record(&header)?;
        for (i, p) in self.points.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(p.iter().map(|x| crate::fmt_f64(*x)));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Nearest net point in l1; near-ties go to the lexicographically smallest.
pub fn project(row: &[f64], net: &EpsilonNet) -> Vec<f64> {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, p) in net.points.iter().enumerate() {
        let d = l1(row, p);
        if d < best_d - TIE_PRECISION {
            best = i;
            best_d = d;
        }
    }
    net.points[best].clone()
}

/// Per-state action gaps with a floored global minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct GapProfile {
    pub gaps: Vec<f64>,
    pub phi: f64,
    pub delta_min: f64,
}

impl GapProfile {
    pub fn new(gaps: Vec<f64>, delta_min: f64) -> Self {
        let min = gaps
            .iter()
            .cloned()
            .filter(|g| g.is_finite())
            .fold(f64::INFINITY, f64::min);
        let phi = if min.is_finite() { min.max(delta_min) } else { delta_min };
        GapProfile {
            gaps,
            phi,
            delta_min,
        }
    }

    pub fn from_q_rows<'a, I: IntoIterator<Item = &'a [f64]>>(rows: I, delta_min: f64) -> Self {
        Self::new(rows.into_iter().map(action_gap).collect(), delta_min)
    }

    /// Elementwise minimum with another profile over the same states.
    pub fn merge(&mut self, other: &GapProfile) {
        for (g, o) in self.gaps.iter_mut().zip(&other.gaps) {
            *g = g.min(*o);
        }
        *self = GapProfile::new(std::mem::take(&mut self.gaps), self.delta_min);
    }
}
