//! Storage dynamics, tariffs, bill settlement and the EEI / IMV metrics.

use crate::error::{Error, Result};

use super::grid::{GridSpec, LeaderObjective};
use super::profiles::STEPS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProsumerState {
    /// Fraction of capacity, always on the bucket lattice.
    pub level: f64,
    pub bucket: usize,
    pub step: usize,
}

impl ProsumerState {
    pub fn new(bucket: usize, buckets: usize, step: usize) -> Self {
        ProsumerState {
            level: bucket_level(bucket, buckets),
            bucket,
            step,
        }
    }
}

pub fn bucket_level(bucket: usize, buckets: usize) -> f64 {
    if buckets <= 1 {
        0.0
    } else {
        bucket as f64 / (buckets - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StorageAction {
    /// Grid-side kWh drawn into the battery.
    Charge(f64),
    Hold,
    /// Battery-side kWh released.
    Discharge(f64),
}

impl StorageAction {
    /// Action moving the level by `delta` buckets.
    pub fn from_buckets(delta: i32, capacity_kwh: f64, efficiency: f64, buckets: usize) -> Self {
        if delta == 0 || buckets <= 1 {
            return StorageAction::Hold;
        }
        let w = capacity_kwh / (buckets - 1) as f64;
        if delta > 0 {
            StorageAction::Charge(delta as f64 * w / efficiency)
        } else {
            StorageAction::Discharge(-delta as f64 * w)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageOutcome {
    pub next: ProsumerState,
    /// Positive when drawing from the grid, negative when delivering to the meter.
    pub grid_delta_kwh: f64,
    pub clamped: bool,
}

/// One step of a battery whose one-way efficiency applies on each conversion.
/// With a single bucket the battery cannot hold energy and every action holds.
pub fn storage_step(state: ProsumerState, action: StorageAction, capacity_kwh: f64, efficiency: f64, buckets: usize) -> StorageOutcome {
    let hold = |clamped| StorageOutcome {
        next: ProsumerState {
            step: (state.step + 1) % STEPS_PER_DAY,
            ..state
        },
        grid_delta_kwh: 0.0,
        clamped,
    };
    if buckets <= 1 || capacity_kwh <= 0.0 {
        return hold(!matches!(action, StorageAction::Hold));
    }
    let energy = state.level * capacity_kwh;
    let (stored_delta, grid, clamped) = match action {
        StorageAction::Hold => return hold(false),
        StorageAction::Charge(e) => {
            let e = e.max(0.0);
            let room = capacity_kwh - energy;
            let stored = (efficiency * e).min(room.max(0.0));
            (stored, stored / efficiency, stored < efficiency * e - 1e-9)
        }
        StorageAction::Discharge(e) => {
            let e = e.max(0.0);
            let out = e.min(energy.max(0.0));
            (-out, -efficiency * out, out < e - 1e-9)
        }
    };
    let level = ((energy + stored_delta) / capacity_kwh).clamp(0.0, 1.0);
    let bucket = (level * (buckets - 1) as f64).round() as usize;
    StorageOutcome {
        next: ProsumerState::new(bucket, buckets, (state.step + 1) % STEPS_PER_DAY),
        grid_delta_kwh: grid,
        clamped,
    }
}

pub const PROSUMER: usize = 0;
pub const CONSUMER: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassRates {
    /// $/kWh on imports.
    pub adder: f64,
    /// $ per household per day.
    pub fixed: f64,
}

/// Rates indexed `[bus][class]` with class `PROSUMER` or `CONSUMER`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tariff {
    pub adder: Vec<[f64; 2]>,
    pub fixed: Vec<[f64; 2]>,
}

impl Tariff {
    pub fn flat(n_buses: usize, adder: f64, fixed: f64) -> Self {
        Tariff {
            adder: vec![[adder; 2]; n_buses],
            fixed: vec![[fixed; 2]; n_buses],
        }
    }

    /// Fixed charges interpolate between flat and income-proportional while
    /// keeping the population-weighted total unchanged.
    pub fn progressive(grid: &GridSpec, adder: f64, mean_fixed: f64, progressivity: f64) -> Self {
        let (mut num, mut den) = (0.0, 0.0);
        for b in &grid.buses {
            num += b.prosumer_population * b.prosumer_income + b.consumer_population * b.consumer_income;
            den += b.prosumer_population + b.consumer_population;
        }
        let mean_income = if den > 0.0 { num / den } else { 1.0 };
        let f = |income: f64| mean_fixed * ((1.0 - progressivity) + progressivity * income / mean_income);
        Tariff {
            adder: vec![[adder; 2]; grid.buses.len()],
            fixed: grid.buses.iter().map(|b| [f(b.prosumer_income), f(b.consumer_income)]).collect(),
        }
    }

    pub fn rates(&self, bus: usize, class: usize) -> ClassRates {
        ClassRates {
            adder: self.adder[bus][class],
            fixed: self.fixed[bus][class],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.adder.len() != self.fixed.len() {
            return Err(Error::Dimension("tariff bus counts differ".into()));
        }
        let ok = self.adder.iter().chain(&self.fixed).flatten().all(|x| x.is_finite() && *x >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("tariff entries must be finite and nonnegative".into()))
        }
    }

    /// Population-weighted fixed-charge revenue per day.
    pub fn fixed_revenue(&self, grid: &GridSpec) -> f64 {
        grid.buses
            .iter()
            .zip(&self.fixed)
            .map(|(b, f)| b.prosumer_population * f[PROSUMER] + b.consumer_population * f[CONSUMER])
            .sum()
    }
}

/// Expenditure for one step of `net_kwh` at `lmp` $/MWh, without the fixed charge.
pub fn step_cost(rates: ClassRates, lmp: f64, net_kwh: f64) -> f64 {
    let price = lmp / 1000.0;
    if net_kwh >= 0.0 {
        net_kwh * (price + rates.adder)
    } else {
        net_kwh * price
    }
}

/// Imports pay LMP plus adder, exports are credited at LMP, plus the fixed charge.
pub fn settle(rates: ClassRates, lmp: &[f64], net_kwh: &[f64]) -> Result<f64> {
    if lmp.len() != net_kwh.len() {
        return Err(Error::Dimension("price and consumption lengths differ".into()));
    }
    Ok(lmp.iter().zip(net_kwh).map(|(p, n)| step_cost(rates, *p, *n)).sum::<f64>() + rates.fixed)
}

/// Percentage of income spent.
pub fn eei(expenditure: f64, income: f64) -> Result<f64> {
    if !(income > 0.0) {
        return Err(Error::Invalid(format!("income {income} must be positive")));
    }
    Ok(100.0 * expenditure / income)
}

/// Time-averaged absolute change of a price sequence.
pub fn imv(lmp: &[f64]) -> Result<f64> {
    if lmp.len() < 2 {
        return Err(Error::Invalid("IMV needs at least two prices".into()));
    }
    let t = (lmp.len() - 1) as f64;
    Ok(lmp.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / t)
}

/// Inequality across class EEI values.
pub fn eei_dispersion(values: &[f64], objective: LeaderObjective) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    match objective {
        LeaderObjective::Spread => {
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            max - min
        }
        LeaderObjective::Variance => {
            let m = values.iter().sum::<f64>() / values.len() as f64;
            values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / values.len() as f64
        }
    }
}
