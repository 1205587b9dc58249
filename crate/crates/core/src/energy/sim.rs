//! Day-by-day episodes of the environment with an infinite prosumer
//! population per aggregator and noisy daily profiles.

use std::io::Write;

use crate::error::{Error, Result};
use crate::game::{JointState, Policy};
use crate::meanfield::{solve_smfe, MFEResult, MfConfig};
use crate::sse::Variant;

use super::metrics::{eei_dispersion, imv, step_cost, Tariff, CONSUMER, PROSUMER};
use super::model::{build_stackelberg_game, EnergyModel};
use super::profiles::{profiles, DayProfile, HOURS_PER_STEP, STEPS_PER_DAY};

#[derive(Debug, Clone, PartialEq)]
pub enum StorageMode {
    /// No batteries at all.
    None,
    Hold,
    Policy(Policy),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TariffMode {
    Flat,
    Fixed(usize),
    /// Greedy tariff of the leader policy at the current summary state.
    Policy(Policy),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub days: usize,
    pub seed: u64,
    pub storage: StorageMode,
    pub tariff: TariffMode,
    /// Starting bucket for every prosumer.
    pub initial_bucket: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub day: usize,
    pub step: usize,
    pub bus: usize,
    pub lmp: f64,
    pub demand_mw: f64,
    pub consumer_kwh: f64,
    pub prosumer_base_kwh: f64,
    pub storage_delta_kwh: f64,
    pub storage_level: f64,
    pub prosumer_cost: f64,
    pub consumer_cost: f64,
    pub flows_mw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    pub day: usize,
    pub leader_state: usize,
    pub tariff: Option<usize>,
    pub imv: f64,
    /// Prosumer classes per bus, then consumers.
    pub eei: Vec<f64>,
    pub dispersion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<StepRecord>,
    pub days: Vec<DayRecord>,
    pub imv_per_bus: Vec<f64>,
    pub imv: f64,
    pub mean_eei: Vec<f64>,
    pub mean_dispersion: f64,
}

fn greedy(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in row.iter().enumerate() {
        if *p > row[best] {
            best = i;
        }
    }
    best
}

/// Day seed derived from the episode seed.
pub fn day_seed(seed: u64, day: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (day as u64).wrapping_add(0xD1B5_4A32_D192_ED03)
}

pub fn run_episode(model: &EnergyModel, cfg: &EpisodeConfig) -> Result<Episode> {
    let d = model.dims();
    let (nb, nk) = (model.n_buses(), model.buckets());
    let na = model.cfg.storage_actions.len();
    if cfg.initial_bucket >= nk {
        return Err(Error::Invalid(format!("initial bucket {} of {nk}", cfg.initial_bucket)));
    }
    if let StorageMode::Policy(p) = &cfg.storage {
        p.check_shape(d.joint_states(), d.follower_actions)?;
    }
    if let TariffMode::Policy(p) = &cfg.tariff {
        p.check_shape(d.joint_states(), d.leader_actions)?;
    }
    if let TariffMode::Fixed(a) = cfg.tariff {
        if a >= d.leader_actions {
            return Err(Error::Invalid(format!("tariff index {a}")));
        }
    }
    let hold = model.cfg.storage_actions.iter().position(|x| *x == 0);
    if matches!(cfg.storage, StorageMode::Hold) && hold.is_none() {
        return Err(Error::Invalid("storage actions have no hold move".into()));
    }

    let mut population: Vec<Vec<f64>> = (0..nb)
        .map(|_| {
            let mut q = vec![0.0; nk];
            q[cfg.initial_bucket] = 1.0;
            q
        })
        .collect();
    let mut leader_state = 0usize;
    let choose = |s_l: usize| -> (Option<usize>, Tariff) {
        match &cfg.tariff {
            TariffMode::Flat => (model.flat_tariff_index(), model.flat_tariff()),
            TariffMode::Fixed(a) => (Some(*a), model.tariff(*a)),
            TariffMode::Policy(p) => {
                let a = greedy(p.row(d.joint(JointState { s_l, s_f: 0 })));
                (Some(a), model.tariff(a))
            }
        }
    };
    let (mut tariff_idx, mut tariff) = choose(leader_state);
    let mut steps = Vec::new();
    let mut days = Vec::new();
    let mut lmp_by_bus: Vec<Vec<f64>> = vec![Vec::new(); nb];
    let mut period_lmp = Vec::new();
    let mut period_disp = Vec::new();

    for day in 0..cfg.days {
        let ds = day_seed(cfg.seed, day);
        let prof: Vec<DayProfile> = (0..nb).map(|b| profiles(&model.shapes, ds, b, model.cfg.noise)).collect();
        let mut pro_day = vec![0.0; nb];
        let mut con_day = vec![0.0; nb];
        let mut day_lmp: Vec<Vec<f64>> = vec![Vec::new(); nb];
        for step in 0..STEPS_PER_DAY {
            // Action mix per (bus, bucket) for this step.
            let mut mix = vec![vec![vec![0.0; na]; nk]; nb];
            for bus in 0..nb {
                for k in 0..nk {
                    match &cfg.storage {
                        StorageMode::None | StorageMode::Hold => mix[bus][k][hold.unwrap_or(0)] = 1.0,
                        StorageMode::Policy(p) => {
                            let j = d.joint(JointState {
                                s_l: leader_state,
                                s_f: model.follower_state(bus, k, step),
                            });
                            mix[bus][k].copy_from_slice(p.row(j));
                        }
                    }
                }
            }
            let mut deltas = vec![0.0; nb];
            if !matches!(cfg.storage, StorageMode::None) {
                for bus in 0..nb {
                    let mut delta = 0.0;
                    for k in 0..nk {
                        for a in 0..na {
                            let w = population[bus][k] * mix[bus][k][a];
                            if w != 0.0 {
                                delta += w * model.storage_outcome(bus, k, a, step).grid_delta_kwh;
                            }
                        }
                    }
                    deltas[bus] = delta;
                }
            }
            let (demand, avail, r) = model.dispatch_step(&prof, step, &deltas).map_err(|e| match e {
                Error::Infeasible { certificate } => Error::Dispatch { day, step, certificate },
                other => other,
            })?;
            r.check(&model.grid, &demand, Some(&avail))?;
            for bus in 0..nb {
                let b = &model.grid.buses[bus];
                let base_kwh = model.prosumer_base_kwh(&prof[bus], bus, step);
                let con_kwh = model.consumer_kwh(&prof[bus], step);
                let injected_kwh = (demand[bus] - b.p_load_mw * model.shapes.background()[step]) * 1000.0 * HOURS_PER_STEP;
                let households = b.consumer_population * con_kwh + b.prosumer_population * (base_kwh + deltas[bus]);
                if (injected_kwh - households).abs() > 1e-9 * households.abs().max(1.0) {
                    return Err(Error::Invalid(format!("energy balance broken on day {day} step {step} bus {bus}")));
                }
                let lmp = r.lmp[bus];
                let mut pro_cost = 0.0;
                let mut level = 0.0;
                for k in 0..nk {
                    level += population[bus][k] * super::metrics::bucket_level(k, nk);
                    for a in 0..na {
                        let w = population[bus][k] * mix[bus][k][a];
                        if w == 0.0 {
                            continue;
                        }
                        let delta = if matches!(cfg.storage, StorageMode::None) {
                            0.0
                        } else {
                            model.storage_outcome(bus, k, a, step).grid_delta_kwh
                        };
                        pro_cost += w * step_cost(tariff.rates(bus, PROSUMER), lmp, base_kwh + delta);
                    }
                }
                let con_cost = step_cost(tariff.rates(bus, CONSUMER), lmp, con_kwh);
                pro_day[bus] += pro_cost;
                con_day[bus] += con_cost;
                day_lmp[bus].push(lmp);
                lmp_by_bus[bus].push(lmp);
                steps.push(StepRecord {
                    day,
                    step,
                    bus,
                    lmp,
                    demand_mw: demand[bus],
                    consumer_kwh: con_kwh,
                    prosumer_base_kwh: base_kwh,
                    storage_delta_kwh: deltas[bus],
                    storage_level: level,
                    prosumer_cost: pro_cost,
                    consumer_cost: con_cost,
                    flows_mw: r.flows_mw.clone(),
                });
            }
            if !matches!(cfg.storage, StorageMode::None) {
                for bus in 0..nb {
                    let mut next = vec![0.0; nk];
                    for k in 0..nk {
                        for a in 0..na {
                            let w = population[bus][k] * mix[bus][k][a];
                            if w != 0.0 {
                                next[model.storage_outcome(bus, k, a, step).next.bucket] += w;
                            }
                        }
                    }
                    population[bus] = next;
                }
            }
        }
        for bus in 0..nb {
            pro_day[bus] += tariff.fixed[bus][PROSUMER];
            con_day[bus] += tariff.fixed[bus][CONSUMER];
        }
        let eei = model.class_eei(&pro_day, &con_day)?;
        let dispersion = eei_dispersion(&eei, model.cfg.leader_objective);
        let day_imv = day_lmp.iter().map(|s| imv(s)).collect::<Result<Vec<_>>>()?.iter().sum::<f64>() / nb as f64;
        days.push(DayRecord {
            day,
            leader_state,
            tariff: tariff_idx,
            imv: day_imv,
            eei,
            dispersion,
        });
        period_lmp.extend(day_lmp.iter().flatten().cloned());
        period_disp.push(dispersion);
        if (day + 1) % model.cfg.leader_period_days == 0 {
            let mean_lmp = period_lmp.iter().sum::<f64>() / period_lmp.len() as f64;
            let mean_disp = period_disp.iter().sum::<f64>() / period_disp.len() as f64;
            leader_state = model.leader_state(model.lmp_bucket(mean_lmp), model.gap_bucket(mean_disp));
            (tariff_idx, tariff) = choose(leader_state);
            period_lmp.clear();
            period_disp.clear();
        }
    }
    summarize(steps, days, lmp_by_bus, nb)
}

fn summarize(steps: Vec<StepRecord>, days: Vec<DayRecord>, lmp_by_bus: Vec<Vec<f64>>, nb: usize) -> Result<Episode> {
    let imv_per_bus = if lmp_by_bus.iter().all(|s| s.len() >= 2) {
        lmp_by_bus.iter().map(|s| imv(s)).collect::<Result<Vec<_>>>()?
    } else {
        vec![0.0; nb]
    };
    let imv_mean = imv_per_bus.iter().sum::<f64>() / nb.max(1) as f64;
    let nc = days.first().map_or(0, |d| d.eei.len());
    let mut mean_eei = vec![0.0; nc];
    for d in &days {
        for (m, e) in mean_eei.iter_mut().zip(&d.eei) {
            *m += e;
        }
    }
    let n = days.len().max(1) as f64;
    mean_eei.iter_mut().for_each(|x| *x /= n);
    let mean_dispersion = days.iter().map(|d| d.dispersion).sum::<f64>() / n;
    Ok(Episode {
        steps,
        days,
        imv_per_bus,
        imv: imv_mean,
        mean_eei,
        mean_dispersion,
    })
}

impl Episode {
    pub fn write_steps_csv<W: Write>(&self, w: W, line_names: &[String]) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = [
            "day",
            "step",
            "bus",
            "lmp",
            "demand_mw",
            "consumer_kwh",
            "prosumer_base_kwh",
            "storage_delta_kwh",
            "storage_level",
            "prosumer_cost",
            "consumer_cost",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(line_names.iter().map(|n| format!("flow_{n}")));
        wr.write_record(&header)?;
        for s in &self.steps {
            let mut rec = vec![s.day.to_string(), s.step.to_string(), s.bus.to_string()];
            for x in [
                s.lmp,
                s.demand_mw,
                s.consumer_kwh,
                s.prosumer_base_kwh,
                s.storage_delta_kwh,
                s.storage_level,
                s.prosumer_cost,
                s.consumer_cost,
            ] {
                rec.push(crate::fmt_f64(x));
            }
            rec.extend(s.flows_mw.iter().map(|f| crate::fmt_f64(*f)));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_days_csv<W: Write>(&self, w: W, class_names: &[String]) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["day", "leader_state", "tariff", "imv"].iter().map(|s| s.to_string()).collect();
        header.extend(class_names.iter().map(|n| format!("eei_{n}")));
        header.push("dispersion".into());
        wr.write_record(&header)?;
        for d in &self.days {
            let mut rec = vec![
                d.day.to_string(),
                d.leader_state.to_string(),
                d.tariff.map_or("flat".to_string(), |t| t.to_string()),
                crate::fmt_f64(d.imv),
            ];
            rec.extend(d.eei.iter().map(|e| crate::fmt_f64(*e)));
            rec.push(crate::fmt_f64(d.dispersion));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Names of the EEI classes in the order of `DayRecord::eei`.
pub fn class_names(model: &EnergyModel) -> Vec<String> {
    let mut v: Vec<String> = model.grid.buses.iter().map(|b| format!("prosumer_{}", b.name)).collect();
    v.push("consumer".into());
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPolicies {
    pub leader: Policy,
    pub follower: Policy,
    pub result: MFEResult,
}

/// Solves the regularized mean-field game of the environment with the
/// environment's damping in place of `mf.damping`.
pub fn learn_policies(model: &EnergyModel, mf: &MfConfig) -> Result<LearnedPolicies> {
    let spec = build_stackelberg_game(model.clone())?;
    let cfg = MfConfig {
        damping: model.cfg.mf_damping,
        ..*mf
    };
    let result = solve_smfe(&spec, None, None, Variant::Regularized { rho: model.cfg.rho }, &cfg)?;
    Ok(LearnedPolicies {
        leader: result.leader_policy.clone(),
        follower: result.follower_policy.clone(),
        result,
    })
}

/// Greedy leader action at each summary state.
pub fn greedy_tariffs(model: &EnergyModel, leader: &Policy) -> Vec<usize> {
    let d = model.dims();
    (0..d.leader_states)
        .map(|s_l| greedy(leader.row(d.joint(JointState { s_l, s_f: 0 }))))
        .collect()
}
