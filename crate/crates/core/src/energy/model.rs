//! The tariff game: discretized prosumer storage followers, a tariff-setting
//! leader, and a mean-field coupling that re-runs dispatch for each mean field.

use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::game::{Dims, GameSpec, MfCoupling, Tables};
use crate::meanfield::MeanField;

use super::dispatch::{cost_segments, dispatch_with, smoothed_lmp, DispatchOptions, DispatchResult};
use super::grid::{EnergyConfig, EnergyFile, GridSpec};
use super::metrics::{eei, eei_dispersion, step_cost, storage_step, ProsumerState, StorageAction, StorageOutcome, Tariff, CONSUMER, PROSUMER};
use super::profiles::{DayProfile, Shapes, HOURS_PER_STEP, STEPS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TariffPoint {
    pub adder: f64,
    pub progressivity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    pub grid: GridSpec,
    pub shapes: Shapes,
    pub cfg: EnergyConfig,
    pub tariffs: Vec<TariffPoint>,
}

impl EnergyModel {
    pub fn new(grid: GridSpec, shapes: Shapes, cfg: EnergyConfig) -> Result<Self> {
        grid.validate()?;
        cfg.validate()?;
        let mut tariffs = Vec::new();
        for &adder in &cfg.adders {
            for &progressivity in &cfg.progressivity {
                tariffs.push(TariffPoint { adder, progressivity });
            }
        }
        let m = EnergyModel { grid, shapes, cfg, tariffs };
        let d = m.dims();
        if d.joint_states() > m.cfg.state_cap {
            return Err(Error::TooLarge(format!("{} joint states exceed the cap {}", d.joint_states(), m.cfg.state_cap)));
        }
        Ok(m)
    }

    pub fn from_file(file: &EnergyFile) -> Result<Self> {
        let files = file.profiles.as_ref().ok_or_else(|| Error::Invalid("grid file has no [profiles] section".into()))?;
        Self::new(file.grid.clone(), Shapes::load(files)?, file.environment.clone())
    }

    pub fn n_buses(&self) -> usize {
        self.grid.buses.len()
    }

    pub fn buckets(&self) -> usize {
        self.cfg.storage_buckets
    }

    pub fn gap_buckets(&self) -> usize {
        self.cfg.gap_edges.len() + 1
    }

    pub fn dims(&self) -> Dims {
        Dims::new(
            (self.cfg.lmp_edges.len() + 1) * self.gap_buckets(),
            self.n_buses() * self.buckets() * STEPS_PER_DAY,
            self.tariffs.len(),
            self.cfg.storage_actions.len(),
        )
    }

    pub fn follower_state(&self, bus: usize, bucket: usize, step: usize) -> usize {
        (bus * self.buckets() + bucket) * STEPS_PER_DAY + step
    }

    /// `(bus, bucket, step)`
    pub fn split_follower(&self, s: usize) -> (usize, usize, usize) {
        let step = s % STEPS_PER_DAY;
        let rest = s / STEPS_PER_DAY;
        (rest / self.buckets(), rest % self.buckets(), step)
    }

    pub fn leader_state(&self, lmp_bucket: usize, gap_bucket: usize) -> usize {
        lmp_bucket * self.gap_buckets() + gap_bucket
    }

    pub fn lmp_bucket(&self, mean_lmp: f64) -> usize {
        self.cfg.lmp_edges.iter().filter(|e| mean_lmp >= **e).count()
    }

    pub fn gap_bucket(&self, dispersion: f64) -> usize {
        self.cfg.gap_edges.iter().filter(|e| dispersion >= **e).count()
    }

    pub fn tariff(&self, a_l: usize) -> Tariff {
        let t = self.tariffs[a_l];
        Tariff::progressive(&self.grid, t.adder, self.cfg.base_fixed_charge, t.progressivity)
    }

    /// Flat fixed charges at the first adder level.
    pub fn flat_tariff(&self) -> Tariff {
        Tariff::progressive(&self.grid, self.cfg.adders[0], self.cfg.base_fixed_charge, 0.0)
    }

    pub fn flat_tariff_index(&self) -> Option<usize> {
        self.tariffs.iter().position(|t| t.adder == self.cfg.adders[0] && t.progressivity == 0.0)
    }

    pub fn storage_action(&self, bus: usize, action: usize) -> StorageAction {
        let b = &self.grid.buses[bus];
        StorageAction::from_buckets(self.cfg.storage_actions[action], b.storage_capacity_kwh, b.storage_efficiency, self.buckets())
    }

    pub fn storage_outcome(&self, bus: usize, bucket: usize, action: usize, step: usize) -> StorageOutcome {
        let b = &self.grid.buses[bus];
        storage_step(
            ProsumerState::new(bucket, self.buckets(), step),
            self.storage_action(bus, action),
            b.storage_capacity_kwh,
            b.storage_efficiency,
            self.buckets(),
        )
    }

    /// Per-prosumer net demand before storage, kWh per step.
    pub fn prosumer_base_kwh(&self, profile: &DayProfile, bus: usize, step: usize) -> f64 {
        self.grid.buses[bus].storage_capacity_kwh * profile.prosumer_demand[step]
    }

    /// Per-consumer demand, kWh per step.
    pub fn consumer_kwh(&self, profile: &DayProfile, step: usize) -> f64 {
        self.grid.consumer_storage_reference_kwh * profile.consumer_demand[step]
    }

    /// Background load plus households, with `storage_delta_kwh` the mean
    /// grid-side storage draw per prosumer.
    pub fn bus_demand_mw(&self, profile: &DayProfile, bus: usize, step: usize, storage_delta_kwh: f64) -> f64 {
        let b = &self.grid.buses[bus];
        let background = b.p_load_mw * self.shapes.background()[step];
        let households_kwh = b.consumer_population * self.consumer_kwh(profile, step)
            + b.prosumer_population * (self.prosumer_base_kwh(profile, bus, step) + storage_delta_kwh);
        background + households_kwh / 1000.0 / HOURS_PER_STEP
    }

    /// Solar units follow the solar series of their own bus.
    pub fn availability(&self, profiles: &[DayProfile], step: usize) -> Result<Vec<f64>> {
        let gbus = self.grid.generator_buses()?;
        Ok(self
            .grid
            .generators
            .iter()
            .zip(gbus)
            .map(|(g, b)| if g.is_solar() { g.max_mw * profiles[b].solar[step] } else { g.max_mw })
            .collect())
    }

    pub fn dispatch_step(&self, profiles: &[DayProfile], step: usize, storage_delta_kwh: &[f64]) -> Result<(Vec<f64>, Vec<f64>, DispatchResult)> {
        let demand: Vec<f64> = (0..self.n_buses()).map(|b| self.bus_demand_mw(&profiles[b], b, step, storage_delta_kwh[b])).collect();
        let avail = self.availability(profiles, step)?;
        let opts = DispatchOptions {
            segments: self.cfg.segments,
            range_mw: self.cfg.linearization_range_mw,
            availability: Some(&avail),
        };
        let r = dispatch_with(&self.grid, &demand, &opts)?;
        Ok((demand, avail, r))
    }

    /// Demand-space half-width of the anticipated-price secant.
    pub fn smoothing_mw(&self) -> f64 {
        if let Some(h) = self.cfg.lmp_smoothing_mw {
            return h;
        }
        let w = self
            .grid
            .generators
            .iter()
            .filter(|g| g.cost[0] != 0.0)
            .map(|g| self.cfg.linearization_range_mw.map_or(g.max_mw, |r| r.min(g.max_mw)) / self.cfg.segments as f64)
            .fold(f64::INFINITY, f64::min);
        if w.is_finite() {
            0.5 * w
        } else {
            0.0
        }
    }

    /// Smoothed prices a mean field anticipates at one step.
    pub fn anticipated_lmp(&self, profiles: &[DayProfile], step: usize, storage_delta_kwh: &[f64]) -> Result<Vec<f64>> {
        let demand: Vec<f64> = (0..self.n_buses()).map(|b| self.bus_demand_mw(&profiles[b], b, step, storage_delta_kwh[b])).collect();
        let avail = self.availability(profiles, step)?;
        let opts = DispatchOptions {
            segments: self.cfg.segments,
            range_mw: self.cfg.linearization_range_mw,
            availability: Some(&avail),
        };
        smoothed_lmp(&self.grid, &demand, &opts, self.smoothing_mw())
    }

    /// Highest price any generator piece can set.
    pub fn scarcity_price(&self) -> f64 {
        self.grid
            .generators
            .iter()
            .flat_map(|g| cost_segments(g, g.max_mw, self.cfg.segments, self.cfg.linearization_range_mw))
            .map(|s| s.1)
            .fold(0.0, f64::max)
    }

    /// Class EEI values: prosumers per bus, then consumers pooled across buses.
    pub fn class_eei(&self, prosumer_daily: &[f64], consumer_daily: &[f64]) -> Result<Vec<f64>> {
        let dpy = self.cfg.days_per_year;
        let mut out = Vec::with_capacity(self.n_buses() + 1);
        for (b, e) in self.grid.buses.iter().zip(prosumer_daily) {
            out.push(eei(*e, b.prosumer_income / dpy)?);
        }
        let (mut spend, mut income, mut pop) = (0.0, 0.0, 0.0);
        for (b, e) in self.grid.buses.iter().zip(consumer_daily) {
            spend += b.consumer_population * e;
            income += b.consumer_population * b.consumer_income;
            pop += b.consumer_population;
        }
        if pop > 0.0 {
            out.push(eei(spend / pop, income / pop / dpy)?);
        }
        Ok(out)
    }
}

/// Prices and population statistics implied by one mean field.
#[derive(Debug, Clone, PartialEq)]
pub struct MfSnapshot {
    /// `lmp[step][bus]`
    pub lmp: Vec<Vec<f64>>,
    pub mean_lmp: f64,
    /// Conditional `(bucket, action)` weights per `(bus, step)`, row-major over bucket then action.
    pub conditional: Vec<Vec<Vec<f64>>>,
    pub storage_delta: Vec<Vec<f64>>,
    pub dispatch_failures: usize,
}

impl EnergyModel {
    pub fn snapshot(&self, mu: &MeanField) -> MfSnapshot {
        let (nb, nk, na) = (self.n_buses(), self.buckets(), self.cfg.storage_actions.len());
        let mut conditional = vec![vec![vec![0.0; nk * na]; STEPS_PER_DAY]; nb];
        let mut storage_delta = vec![vec![0.0; STEPS_PER_DAY]; nb];
        for bus in 0..nb {
            for step in 0..STEPS_PER_DAY {
                let mut total = 0.0;
                for k in 0..nk {
                    let s = self.follower_state(bus, k, step);
                    for a in 0..na {
                        total += mu.mass[s * na + a];
                    }
                }
                if total <= 0.0 {
                    // No population mass here: treat the block as holding at bucket zero.
                    let hold = self.cfg.storage_actions.iter().position(|d| *d == 0).unwrap_or(0);
                    conditional[bus][step][hold] = 1.0;
                    continue;
                }
                let mut delta = 0.0;
                for k in 0..nk {
                    let s = self.follower_state(bus, k, step);
                    for a in 0..na {
                        let w = mu.mass[s * na + a] / total;
                        conditional[bus][step][k * na + a] = w;
                        if w != 0.0 {
                            delta += w * self.storage_outcome(bus, k, a, step).grid_delta_kwh;
                        }
                    }
                }
                storage_delta[bus][step] = delta;
            }
        }
        let base: Vec<DayProfile> = vec![self.shapes.base(); nb];
        let mut lmp = Vec::with_capacity(STEPS_PER_DAY);
        let mut failures = 0;
        for step in 0..STEPS_PER_DAY {
            let deltas: Vec<f64> = (0..nb).map(|b| storage_delta[b][step]).collect();
            match self.anticipated_lmp(&base, step, &deltas) {
                Ok(p) => lmp.push(p),
                Err(_) => {
                    failures += 1;
                    lmp.push(vec![self.scarcity_price(); nb]);
                }
            }
        }
        let mean_lmp = lmp.iter().flatten().sum::<f64>() / (nb * STEPS_PER_DAY) as f64;
        MfSnapshot {
            lmp,
            mean_lmp,
            conditional,
            storage_delta,
            dispatch_failures: failures,
        }
    }

    /// Per-prosumer expected cost at one step under `tariff`, excluding fixed charges.
    pub fn prosumer_step_cost(&self, tariff: &Tariff, lmp: f64, bus: usize, bucket: usize, action: usize, step: usize, profile: &DayProfile) -> f64 {
        let net = self.prosumer_base_kwh(profile, bus, step) + self.storage_outcome(bus, bucket, action, step).grid_delta_kwh;
        step_cost(tariff.rates(bus, PROSUMER), lmp, net)
    }

    /// Expected daily expenditures per prosumer and per consumer at each bus.
    pub fn daily_expenditures(&self, snap: &MfSnapshot, tariff: &Tariff) -> (Vec<f64>, Vec<f64>) {
        let (nb, nk, na) = (self.n_buses(), self.buckets(), self.cfg.storage_actions.len());
        let base = self.shapes.base();
        let mut pro = vec![0.0; nb];
        let mut con = vec![0.0; nb];
        for bus in 0..nb {
            for step in 0..STEPS_PER_DAY {
                let lmp = snap.lmp[step][bus];
                for k in 0..nk {
                    for a in 0..na {
                        let w = snap.conditional[bus][step][k * na + a];
                        if w != 0.0 {
                            pro[bus] += w * self.prosumer_step_cost(tariff, lmp, bus, k, a, step, &base);
                        }
                    }
                }
                con[bus] += step_cost(tariff.rates(bus, CONSUMER), lmp, self.consumer_kwh(&base, step));
            }
            pro[bus] += tariff.fixed[bus][PROSUMER];
            con[bus] += tariff.fixed[bus][CONSUMER];
        }
        (pro, con)
    }

    pub fn dispersion(&self, snap: &MfSnapshot, tariff: &Tariff) -> Result<f64> {
        let (p, c) = self.daily_expenditures(snap, tariff);
        Ok(eei_dispersion(&self.class_eei(&p, &c)?, self.cfg.leader_objective))
    }

    pub fn tables(&self, mu: &MeanField, base: &Tables) -> Tables {
        let snap = self.snapshot(mu);
        self.tables_from_snapshot(&snap, base)
    }

    pub fn tables_from_snapshot(&self, snap: &MfSnapshot, base: &Tables) -> Tables {
        let d = self.dims();
        let mut t = base.clone();
        let profile = self.shapes.base();
        let tariffs: Vec<Tariff> = (0..d.leader_actions).map(|a| self.tariff(a)).collect();
        let steps = STEPS_PER_DAY as f64;
        for s_f in 0..d.follower_states {
            let (bus, bucket, step) = self.split_follower(s_f);
            let lmp = snap.lmp[step][bus];
            for a_f in 0..d.follower_actions {
                for (a_l, tar) in tariffs.iter().enumerate() {
                    let r = -(self.prosumer_step_cost(tar, lmp, bus, bucket, a_f, step, &profile) + tar.fixed[bus][PROSUMER] / steps);
                    for s_l in 0..d.leader_states {
                        t.reward_f[Tables::idx_rf(&d, s_f, s_l, a_f, a_l)] = r;
                    }
                }
            }
        }
        let lb = self.lmp_bucket(snap.mean_lmp);
        for (a_l, tar) in tariffs.iter().enumerate() {
            let disp = self.dispersion(snap, tar).unwrap_or(f64::INFINITY);
            let next = self.leader_state(lb, self.gap_bucket(disp));
            for s_l in 0..d.leader_states {
                for a_f in 0..d.follower_actions {
                    let i = Tables::idx_pl(&d, s_l, a_l, a_f);
                    for s2 in 0..d.leader_states {
                        t.transition_l[i + s2] = if s2 == next { 1.0 } else { 0.0 };
                    }
                    for s_f in 0..d.follower_states {
                        t.reward_l[Tables::idx_rl(&d, s_l, s_f, a_l, a_f)] = -disp;
                    }
                }
            }
        }
        t
    }
}

/// Mean-field coupling that recomputes dispatch per mean field, remembering the last one.
#[derive(Debug)]
pub struct EnergyCoupling {
    pub model: Arc<EnergyModel>,
    cache: Mutex<Option<(Vec<f64>, Arc<Tables>)>>,
}

impl EnergyCoupling {
    pub fn new(model: Arc<EnergyModel>) -> Self {
        EnergyCoupling {
            model,
            cache: Mutex::new(None),
        }
    }
}

impl MfCoupling for EnergyCoupling {
    fn tables_at(&self, _dims: &Dims, base: &Tables, mu: &MeanField) -> Tables {
        if let Some((m, t)) = self.cache.lock().unwrap().as_ref() {
            if *m == mu.mass {
                return (**t).clone();
            }
        }
        let t = self.model.tables(mu, base);
        *self.cache.lock().unwrap() = Some((mu.mass.clone(), Arc::new(t.clone())));
        t
    }
}

/// Game over the environment. Base tables are the coupling evaluated at the
/// uniform mean field, and follower kernels are the deterministic storage moves.
pub fn build_stackelberg_game(model: EnergyModel) -> Result<GameSpec> {
    let d = model.dims();
    let mut base = Tables::zeros(&d);
    for s_f in 0..d.follower_states {
        let (bus, bucket, step) = model.split_follower(s_f);
        for a_f in 0..d.follower_actions {
            let o = model.storage_outcome(bus, bucket, a_f, step);
            let next = model.follower_state(bus, o.next.bucket, o.next.step);
            for a_l in 0..d.leader_actions {
                base.transition_f[Tables::idx_pf(&d, s_f, a_f, a_l) + next] = 1.0;
            }
        }
    }
    for i in (0..base.transition_l.len()).step_by(d.leader_states) {
        base.transition_l[i] = 1.0;
    }
    let model = Arc::new(model);
    let mu = MeanField::uniform(d.follower_states, d.follower_actions);
    let base = model.tables(&mu, &base);
    let scale = base.reward_f.iter().chain(&base.reward_l).fold(0.0f64, |m, r| m.max(r.abs()));
    let (gl, gf) = (model.cfg.gamma_leader, model.cfg.gamma_follower);
    let spec = GameSpec::new(d, base, gl, gf, 10.0 * scale + 100.0).with_coupling(Arc::new(EnergyCoupling::new(model)));
    Ok(spec)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::energy::grid::tests::shipped_grid_file;
    use crate::energy::profiles::tests::shipped_shapes;
    use crate::game::{validate_game, Agent};
    use crate::meanfield::{solve_smfe, MfConfig};
    use crate::sse::Variant;
    use approx::assert_abs_diff_eq;

    pub(crate) fn model_with(cfg: EnergyConfig) -> EnergyModel {
        EnergyModel::new(shipped_grid_file().grid, shipped_shapes(), cfg).unwrap()
    }

    #[test]
    fn dims_and_indexing() {
        let m = model_with(EnergyConfig::default());
        let d = m.dims();
        assert_eq!(d.follower_states, 3 * 5 * 8);
        assert_eq!(d.leader_states, 4);
        assert_eq!(d.leader_actions, 5);
        assert_eq!(d.follower_actions, 3);
        for s in 0..d.follower_states {
            let (b, k, t) = m.split_follower(s);
            assert_eq!(m.follower_state(b, k, t), s);
        }
        assert_eq!(m.flat_tariff_index(), Some(0));
    }

    #[test]
    fn state_cap_is_enforced() {
        let cfg = EnergyConfig {
            storage_buckets: 200,
            state_cap: 1000,
            ..EnergyConfig::default()
        };
        assert!(matches!(
            EnergyModel::new(shipped_grid_file().grid, shipped_shapes(), cfg),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn generated_game_validates() {
        let g = build_stackelberg_game(model_with(EnergyConfig::default())).unwrap();
        assert!(g.mf_dependent());
        let v = validate_game(&g);
        assert!(v.is_empty(), "{:?}", v.first());
    }

    #[test]
    fn single_bucket_game_picks_myopic_tariff() {
        let cfg = EnergyConfig {
            storage_buckets: 1,
            lmp_edges: vec![],
            gap_edges: vec![],
            ..EnergyConfig::default()
        };
        let m = model_with(cfg);
        let g = build_stackelberg_game(m.clone()).unwrap();
        assert_eq!(g.dims.leader_states, 1);
        let res = solve_smfe(&g, None, None, Variant::Exact, &MfConfig::default()).unwrap();
        assert!(res.converged);
        let snap = m.snapshot(&res.mean_field);
        let disp: Vec<f64> = (0..m.tariffs.len()).map(|a| m.dispersion(&snap, &m.tariff(a)).unwrap()).collect();
        let best = (0..disp.len()).min_by(|a, b| disp[*a].partial_cmp(&disp[*b]).unwrap()).unwrap();
        let chosen = res.leader_policy.row(0);
        assert_abs_diff_eq!(chosen[best], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_bucket_tables_match_hand_trace() {
        let cfg = EnergyConfig {
            storage_buckets: 2,
            storage_actions: vec![0, 1],
            ..EnergyConfig::default()
        };
        let m = model_with(cfg);
        let g = build_stackelberg_game(m.clone()).unwrap();
        let d = g.dims;
        let mu = MeanField::uniform(d.follower_states, d.follower_actions);
        let t = g.tables_at(Some(&mu)).into_owned();

        // Bus 0, empty battery, step 2, charge: fills the 30 kWh battery.
        let (bus, step) = (0, 2);
        let s = m.follower_state(bus, 0, step);
        let next = m.follower_state(bus, 1, step + 1);
        let row = t.transition(&d, Agent::Follower, s, 1, 0);
        assert_eq!(row[next], 1.0);
        assert_eq!(row.iter().sum::<f64>(), 1.0);

        // Half of each block charges, half of those from an already full battery.
        let charge_draw = 30.0 / 0.8;
        let mean_delta = [charge_draw / 4.0, 60.0 / 0.8 / 4.0, 100.0 / 0.8 / 4.0];
        let base = m.shapes.base();
        let bg = m.shapes.background();
        let caps = [30.0, 60.0, 100.0];
        let loads = [110.0, 110.0, 95.0];
        let demand: Vec<f64> = (0..3)
            .map(|b| {
                let kwh = 3000.0 * 10.0 * base.consumer_demand[step] + [1000.0, 500.0, 300.0][b] * (caps[b] * base.prosumer_demand[step] + mean_delta[b]);
                loads[b] * bg[step] + kwh / 1000.0 / 3.0
            })
            .collect();
        let avail: Vec<f64> = vec![2000.0, 1500.0, 30.0 * base.solar[step], 30.0 * base.solar[step]];
        let opts = DispatchOptions {
            segments: 10,
            range_mw: None,
            availability: Some(&avail),
        };
        let lmp = dispatch_with(&m.grid, &demand, &opts).unwrap().lmp[bus];
        let tariff = m.tariff(0);
        let net = caps[bus] * base.prosumer_demand[step] + charge_draw;
        let cost = net.max(0.0) * (lmp / 1000.0 + tariff.adder[bus][PROSUMER]) + net.min(0.0) * lmp / 1000.0;
        let expect = -(cost + tariff.fixed[bus][PROSUMER] / 8.0);
        let got = t.reward(&d, Agent::Follower, s, 0, 1, 0);
        assert_abs_diff_eq!(got, expect, epsilon = 1e-9);
    }

    #[test]
    fn leader_reward_is_negative_spread() {
        let m = model_with(EnergyConfig::default());
        let g = build_stackelberg_game(m.clone()).unwrap();
        let d = g.dims;
        let mu = MeanField::uniform(d.follower_states, d.follower_actions);
        let t = g.tables_at(Some(&mu));
        let snap = m.snapshot(&mu);
        for a_l in 0..d.leader_actions {
            let (p, c) = m.daily_expenditures(&snap, &m.tariff(a_l));
            let e = m.class_eei(&p, &c).unwrap();
            let spread = e.iter().cloned().fold(f64::MIN, f64::max) - e.iter().cloned().fold(f64::MAX, f64::min);
            assert_abs_diff_eq!(t.reward(&d, Agent::Leader, 0, 0, a_l, 0), -spread, epsilon = 1e-12);
        }
    }

    #[test]
    fn coupling_cache_returns_same_tables() {
        let cfg = EnergyConfig {
            segments: 60,
            linearization_range_mw: Some(600.0),
            ..EnergyConfig::default()
        };
        let g = build_stackelberg_game(model_with(cfg)).unwrap();
        let d = g.dims;
        let mut mu = MeanField::uniform(d.follower_states, d.follower_actions);
        let a = g.tables_at(Some(&mu)).into_owned();
        let b = g.tables_at(Some(&mu)).into_owned();
        assert_eq!(a, b);
        let n = mu.mass.len() as f64;
        mu.mass.iter_mut().enumerate().for_each(|(i, x)| *x = if i % 3 == 2 { 3.0 / n } else { 0.0 });
        let c = g.tables_at(Some(&mu)).into_owned();
        assert_ne!(a.reward_f, c.reward_f);
    }
}
