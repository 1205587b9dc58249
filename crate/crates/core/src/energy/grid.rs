//! Grid description files: buses, lines, generators, profile paths and the
//! environment discretization.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub name: String,
    /// Background load at the bus in MW.
    pub p_load_mw: f64,
    /// Parsed and ignored by the DC model.
    #[serde(default)]
    pub q_load_mvar: f64,
    #[serde(default = "one_point_one")]
    pub max_voltage_pu: f64,
    #[serde(default = "zero_point_nine")]
    pub min_voltage_pu: f64,
    #[serde(default = "one")]
    pub voltage_magnitude_pu: f64,
    #[serde(default)]
    pub voltage_angle_deg: f64,
    #[serde(default)]
    pub base_kv: f64,
    pub prosumer_population: f64,
    pub storage_capacity_kwh: f64,
    pub storage_efficiency: f64,
    pub prosumer_income: f64,
    pub consumer_population: f64,
    pub consumer_income: f64,
}

fn one() -> f64 {
    1.0
}
fn one_point_one() -> f64 {
    1.1
}
fn zero_point_nine() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub name: String,
    pub source: String,
    pub target: String,
    pub reactance_ohm: f64,
    #[serde(default)]
    pub susceptance_s: f64,
    pub flow_limit_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub name: String,
    pub bus: String,
    #[serde(default)]
    pub fuel: String,
    /// `[a, b, c]` for `C(p) = a p^2 + b p + c`; all zero for free units.
    #[serde(default)]
    pub cost: [f64; 3],
    pub max_mw: f64,
}

impl Generator {
    /// Units whose availability follows the solar shape.
    pub fn is_solar(&self) -> bool {
        self.fuel.eq_ignore_ascii_case("solar")
    }

    pub fn cost_at(&self, p: f64) -> f64 {
        let [a, b, c] = self.cost;
        a * p * p + b * p + c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    /// Storage reference used to scale consumer demand shapes.
    pub consumer_storage_reference_kwh: f64,
}

impl GridSpec {
    pub fn bus_index(&self, name: &str) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::Invalid(format!("unknown bus {name}")))
    }

    /// `(source, target)` bus indices per line.
    pub fn line_ends(&self) -> Result<Vec<(usize, usize)>> {
        self.lines.iter().map(|l| Ok((self.bus_index(&l.source)?, self.bus_index(&l.target)?))).collect()
    }

    pub fn generator_buses(&self) -> Result<Vec<usize>> {
        self.generators.iter().map(|g| self.bus_index(&g.bus)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.buses.is_empty() {
            errs.push("grid has no buses".to_string());
        }
        let mut names = BTreeSet::new();
        for b in &self.buses {
            if !names.insert(b.name.as_str()) {
                errs.push(format!("duplicate bus {}", b.name));
            }
            let finite = [
                b.p_load_mw,
                b.prosumer_population,
                b.storage_capacity_kwh,
                b.storage_efficiency,
                b.prosumer_income,
                b.consumer_population,
                b.consumer_income,
            ]
            .iter()
            .all(|x| x.is_finite());
            if !finite {
                errs.push(format!("bus {}: non-finite field", b.name));
                continue;
            }
            if b.prosumer_population < 0.0 || b.consumer_population < 0.0 {
                errs.push(format!("bus {}: negative population", b.name));
            }
            if !(b.storage_efficiency > 0.0 && b.storage_efficiency <= 1.0) {
                errs.push(format!("bus {}: efficiency {} outside (0,1]", b.name, b.storage_efficiency));
            }
            if b.storage_capacity_kwh < 0.0 {
                errs.push(format!("bus {}: negative storage capacity", b.name));
            }
            if !(b.prosumer_income > 0.0 && b.consumer_income > 0.0) {
                errs.push(format!("bus {}: income must be positive", b.name));
            }
        }
        for l in &self.lines {
            for end in [&l.source, &l.target] {
                if !names.contains(end.as_str()) {
                    errs.push(format!("line {}: unknown bus {end}", l.name));
                }
            }
            if l.source == l.target {
                errs.push(format!("line {}: self loop", l.name));
            }
            if !(l.flow_limit_mw > 0.0) || !l.flow_limit_mw.is_finite() {
                errs.push(format!("line {}: flow limit must be positive", l.name));
            }
            if !(l.reactance_ohm > 0.0) || !l.reactance_ohm.is_finite() {
                errs.push(format!("line {}: reactance must be positive", l.name));
            }
        }
        for g in &self.generators {
            if !names.contains(g.bus.as_str()) {
                errs.push(format!("generator {}: unknown bus {}", g.name, g.bus));
            }
            if !(g.max_mw >= 0.0) || !g.max_mw.is_finite() {
                errs.push(format!("generator {}: capacity must be nonnegative", g.name));
            }
            if g.cost.iter().any(|c| !c.is_finite()) || g.cost[0] < 0.0 {
                errs.push(format!("generator {}: cost curve must be finite and convex", g.name));
            }
        }
        if !(self.consumer_storage_reference_kwh >= 0.0) {
            errs.push("consumer storage reference must be nonnegative".into());
        }
        if errs.is_empty() && !self.connected() {
            errs.push("grid graph is not connected".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(errs.join("; ")))
        }
    }

    fn connected(&self) -> bool {
        let n = self.buses.len();
        let Ok(ends) = self.line_ends() else { return false };
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(b) = stack.pop() {
            for &(s, t) in &ends {
                for (x, y) in [(s, t), (t, s)] {
                    if x == b && !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
        }
        seen.iter().all(|x| *x)
    }

    /// Population-weighted mean storage capacity over every household.
    pub fn mean_storage_kwh(&self) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for b in &self.buses {
            num += b.prosumer_population * b.storage_capacity_kwh + b.consumer_population * self.consumer_storage_reference_kwh;
            den += b.prosumer_population + b.consumer_population;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LeaderObjective {
    #[default]
    Spread,
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Piecewise-linear pieces per quadratic cost curve.
    pub segments: usize,
    /// Upper end of the linearized range; the remainder of the capacity is one extra piece.
    pub linearization_range_mw: Option<f64>,
    /// Half-width (MW) of the secant used for prices anticipated under a mean
    /// field; half the narrowest cost piece when absent, 0 for the raw dual.
    pub lmp_smoothing_mw: Option<f64>,
    pub storage_buckets: usize,
    /// Storage moves in buckets, one per follower action.
    pub storage_actions: Vec<i32>,
    /// Day-mean LMP thresholds ($/MWh) splitting the leader's price summary.
    pub lmp_edges: Vec<f64>,
    /// EEI gap thresholds (percentage points) splitting the leader's equity summary.
    pub gap_edges: Vec<f64>,
    /// Volumetric adder levels ($/kWh) in the tariff grid.
    pub adders: Vec<f64>,
    /// Fixed-charge progressivity levels in `[0, 1]`; 0 is flat.
    pub progressivity: Vec<f64>,
    /// Mean fixed charge per household per day ($).
    pub base_fixed_charge: f64,
    pub leader_objective: LeaderObjective,
    pub gamma_leader: f64,
    pub gamma_follower: f64,
    /// Entropy weight used when solving the environment game.
    pub rho: f64,
    /// Step size of the mean-field update when solving the environment game.
    pub mf_damping: f64,
    pub leader_period_days: usize,
    pub noise: bool,
    pub days_per_year: f64,
    /// Cap on joint states of the generated game.
    pub state_cap: usize,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            segments: 10,
            linearization_range_mw: None,
            lmp_smoothing_mw: None,
            storage_buckets: 5,
            storage_actions: vec![-1, 0, 1],
            lmp_edges: vec![60.0],
            gap_edges: vec![4.0],
            adders: vec![0.02],
            progressivity: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            base_fixed_charge: 0.5,
            leader_objective: LeaderObjective::Spread,
            gamma_leader: 0.9,
            gamma_follower: 0.99,
            rho: 0.01,
            mf_damping: 0.5,
            leader_period_days: 3,
            noise: true,
            days_per_year: 365.0,
            state_cap: 50_000,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.segments == 0 {
            errs.push("segments must be at least 1".to_string());
        }
        if self.storage_buckets == 0 {
            errs.push("storage_buckets must be at least 1".into());
        }
        if self.storage_actions.is_empty() {
            errs.push("storage_actions is empty".into());
        }
        if self.adders.is_empty() || self.adders.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            errs.push("adders must be nonempty, finite and nonnegative".into());
        }
        if self.progressivity.is_empty() || self.progressivity.iter().any(|p| !(0.0..=1.0).contains(p)) {
            errs.push("progressivity levels must be nonempty and in [0,1]".into());
        }
        if !(self.base_fixed_charge.is_finite() && self.base_fixed_charge >= 0.0) {
            errs.push("base_fixed_charge must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.gamma_leader) || !(0.0..1.0).contains(&self.gamma_follower) {
            errs.push("discounts must lie in [0,1)".into());
        }
        if !(self.rho > 0.0) {
            errs.push("rho must be positive".into());
        }
        if !(self.mf_damping > 0.0 && self.mf_damping <= 1.0) {
            errs.push("mf_damping must lie in (0,1]".into());
        }
        if self.leader_period_days == 0 {
            errs.push("leader_period_days must be at least 1".into());
        }
        if let Some(h) = self.lmp_smoothing_mw {
            if !(h >= 0.0 && h.is_finite()) {
                errs.push("lmp_smoothing_mw must be finite and nonnegative".into());
            }
        }
        if let Some(r) = self.linearization_range_mw {
            if !(r > 0.0) {
                errs.push("linearization range must be positive".into());
            }
        }
        for (name, e) in [("lmp_edges", &self.lmp_edges), ("gap_edges", &self.gap_edges)] {
            if e.windows(2).any(|w| !(w[0] < w[1])) || e.iter().any(|x| !x.is_finite()) {
                errs.push(format!("{name} must be finite and increasing"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFiles {
    pub consumer_demand: PathBuf,
    pub prosumer_demand: PathBuf,
    pub solar: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridFile {
    #[serde(default = "ten")]
    consumer_storage_reference_kwh: f64,
    bus: Vec<Bus>,
    line: Vec<Line>,
    generator: Vec<Generator>,
    profiles: Option<ShapeFiles>,
    #[serde(default)]
    environment: EnergyConfig,
    #[serde(default)]
    labels: BTreeMap<String, String>,
}

fn ten() -> f64 {
    10.0
}

/// A parsed grid file with shape paths resolved against the file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyFile {
    pub grid: GridSpec,
    pub profiles: Option<ShapeFiles>,
    pub environment: EnergyConfig,
}

impl EnergyFile {
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let f: GridFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let grid = GridSpec {
            buses: f.bus,
            lines: f.line,
            generators: f.generator,
            consumer_storage_reference_kwh: f.consumer_storage_reference_kwh,
        };
        grid.validate()?;
        f.environment.validate()?;
        let profiles = f.profiles.map(|p| match base_dir {
            Some(dir) => ShapeFiles {
                consumer_demand: dir.join(p.consumer_demand),
                prosumer_demand: dir.join(p.prosumer_demand),
                solar: dir.join(p.solar),
            },
            None => p,
        });
        Ok(EnergyFile {
            grid,
            profiles,
            environment: f.environment,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn data_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
    }

    pub(crate) fn shipped_grid_file() -> EnergyFile {
        EnergyFile::load(&data_dir().join("grid_3bus.toml")).unwrap()
    }

    #[test]
    fn shipped_grid_matches_tables() {
        let f = shipped_grid_file();
        let g = &f.grid;
        assert_eq!(g.buses.len(), 3);
        let loads: Vec<f64> = g.buses.iter().map(|b| b.p_load_mw).collect();
        assert_eq!(loads, vec![110.0, 110.0, 95.0]);
        let caps: Vec<f64> = g.buses.iter().map(|b| b.storage_capacity_kwh).collect();
        assert_eq!(caps, vec![30.0, 60.0, 100.0]);
        let pops: Vec<f64> = g.buses.iter().map(|b| b.prosumer_population).collect();
        assert_eq!(pops, vec![1000.0, 500.0, 300.0]);
        let inc: Vec<f64> = g.buses.iter().map(|b| b.prosumer_income).collect();
        assert_eq!(inc, vec![25_000.0, 45_000.0, 65_000.0]);
        assert!(g.buses.iter().all(|b| b.consumer_population == 3000.0 && b.consumer_income == 15_000.0));
        assert!(g.buses.iter().all(|b| b.storage_efficiency == 0.8));
        assert_eq!(g.line_ends().unwrap(), vec![(0, 2), (2, 1), (0, 1)]);
        let x: Vec<f64> = g.lines.iter().map(|l| l.reactance_ohm).collect();
        assert_eq!(x, vec![0.065, 0.025, 0.042]);
        assert!(g.lines.iter().all(|l| l.flow_limit_mw == 100.0));
        assert_eq!(g.generators[0].cost, [0.2, 5.0, 0.0]);
        assert_eq!(g.generators[1].cost, [0.2, 4.0, 0.0]);
        let caps: Vec<f64> = g.generators.iter().map(|g| g.max_mw).collect();
        assert_eq!(caps, vec![2000.0, 1500.0, 30.0, 30.0]);
        assert_eq!(g.generator_buses().unwrap(), vec![0, 1, 2, 0]);
        assert!(f.profiles.is_some());
    }

    #[test]
    fn mean_storage_reference() {
        let g = shipped_grid_file().grid;
        let expect = (1000.0 * 30.0 + 500.0 * 60.0 + 300.0 * 100.0 + 9000.0 * 10.0) / 10_800.0;
        assert!((g.mean_storage_kwh() - expect).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        let mut g = shipped_grid_file().grid;
        g.buses[0].storage_efficiency = 1.2;
        g.lines[1].flow_limit_mw = 0.0;
        let e = g.validate().unwrap_err().to_string();
        assert!(e.contains("efficiency") && e.contains("flow limit"), "{e}");
        let mut g = shipped_grid_file().grid;
        g.lines.truncate(1);
        assert!(g.validate().unwrap_err().to_string().contains("connected"));
        let mut g = shipped_grid_file().grid;
        g.buses[2].prosumer_population = -1.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn environment_defaults_and_unknown_keys() {
        let c = EnergyConfig::default();
        assert_eq!(c.segments, 10);
        assert!(c.validate().is_ok());
        let bad: std::result::Result<EnergyConfig, _> = toml::from_str("segmentz = 3");
        assert!(bad.is_err());
    }
}
