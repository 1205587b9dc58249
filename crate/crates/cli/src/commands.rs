//! Subcommand implementations. Each returns whether the run converged or a
//! classified failure; `main` turns that into the exit code.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use sgame_core::energy::sim::{class_names, greedy_tariffs, learn_policies};
use sgame_core::energy::{run_episode, EnergyFile, EnergyModel, EpisodeConfig, StorageMode, TariffMode};
use sgame_core::game::Dims;
use sgame_core::meanfield::{solve_smfe, MfConfig};
use sgame_core::policy_ops::{build_epsilon_net, temperature_for, DEFAULT_DELTA_MIN};
use sgame_core::sse::{measure_gap_profile, solve_sse};
use sgame_core::{Agent, BRConfig, Error, GameSpec, Policy, Variant};

use crate::manifest::{derive_seed, digest_inputs, versions, RunManifest};

pub const GAP_SAMPLES: usize = 2000;

#[derive(Debug)]
pub enum Failure {
    Input(String),
    NotConverged,
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::NotConverged => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

fn input(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Errors raised by a solver call: bad parameters are input errors, the rest runtime.
fn classify(e: Error) -> Failure {
    match e {
        Error::Invalid(_)
        | Error::Dimension(_)
        | Error::NaN
        | Error::ZeroGap
        | Error::NetTooLarge { .. }
        | Error::TooLarge(_)
        | Error::Parse(_) => Failure::Input(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VariantName {
    Exact,
    Boltzmann,
    Regularized,
}

#[derive(Debug, Clone, clap::Args)]
pub struct SolveArgs {
    /// Game file (TOML).
    pub config: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantName::Exact)]
    pub variant: VariantName,
    /// Net resolution for the Boltzmann variant.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Boltzmann temperature; calibrated from the measured action gap when absent.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Entropy weight for the regularized variant.
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to $SGAME_OUT_DIR, then ./out.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, clap::Args)]
pub struct EnergyArgs {
    /// Grid file (TOML).
    pub grid: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub days: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub learn: Switch,
    #[arg(long, default_value_t = 50)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 500)]
    pub max_inner: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    match flag {
        Some(p) => p.clone(),
        None => std::env::var_os("SGAME_OUT_DIR").map_or_else(|| PathBuf::from("out"), PathBuf::from),
    }
}

struct Run {
    started: Instant,
    dir: PathBuf,
    outputs: Vec<String>,
}

impl Run {
    fn start(out: &Option<PathBuf>) -> Result<Self, Failure> {
        let dir = out_dir(out);
        std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Run {
            started: Instant::now(),
            dir,
            outputs: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        mut self,
        command: &str,
        inputs: &[&Path],
        seed: u64,
        seeds: BTreeMap<String, u64>,
        settings: serde_json::Value,
        converged: bool,
        diagnostics: serde_json::Value,
    ) -> Result<bool, Failure> {
        let (config_sha256, inputs) = digest_inputs(inputs).map_err(runtime)?;
        self.outputs.push("manifest.json".into());
        let m = RunManifest {
            command: command.to_string(),
            config_sha256,
            inputs,
            seed,
            seeds,
            settings,
            versions: versions(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs.clone(),
            converged,
            exit_code: if converged { 0 } else { 2 },
            diagnostics,
        };
        let text = serde_json::to_string_pretty(&m).map_err(runtime)?;
        std::fs::write(self.dir.join("manifest.json"), text + "\n").map_err(runtime)?;
        Ok(converged)
    }
}

fn write_policies(run: &mut Run, name: &str, leader: &Policy, follower: &Policy, dims: &Dims) -> Result<(), Failure> {
    let mut wr = csv::Writer::from_writer(run.create(name)?);
    wr.write_record(["agent", "state", "s_l", "s_f", "action", "probability"]).map_err(runtime)?;
    leader.write_rows(&mut wr, "leader", Some(dims)).map_err(runtime)?;
    follower.write_rows(&mut wr, "follower", Some(dims)).map_err(runtime)?;
    wr.flush().map_err(runtime)?;
    Ok(())
}

fn resolve_variant(spec: &GameSpec, args: &SolveArgs, seeds: &mut BTreeMap<String, u64>) -> Result<(Variant, serde_json::Value), Failure> {
    match args.variant {
        VariantName::Exact => Ok((Variant::Exact, json!({ "name": "exact" }))),
        VariantName::Regularized => {
            if !(args.rho > 0.0) {
                return Err(input("--rho must be positive"));
            }
            Ok((Variant::Regularized { rho: args.rho }, json!({ "name": "regularized", "rho": args.rho })))
        }
        VariantName::Boltzmann => {
            if !(args.epsilon > 0.0 && args.epsilon < 2.0) {
                return Err(input("--epsilon must lie in (0, 2)"));
            }
            let (alpha, phi) = match args.alpha {
                Some(a) if a > 0.0 => (a, None),
                Some(_) => return Err(input("--alpha must be positive")),
                None => {
                    let gap_seed = derive_seed(args.seed, "gap_profile");
                    seeds.insert("gap_profile".into(), gap_seed);
                    let d = spec.dims;
                    let br = BRConfig::default();
                    let net_l = build_epsilon_net(d.leader_actions, args.epsilon).map_err(classify)?;
                    let net_f = build_epsilon_net(d.follower_actions, args.epsilon).map_err(classify)?;
                    let mut gap = measure_gap_profile(spec, Agent::Follower, &net_l, DEFAULT_DELTA_MIN, GAP_SAMPLES, gap_seed, &br)
                        .map_err(classify)?;
                    gap.merge(
                        &measure_gap_profile(spec, Agent::Leader, &net_f, DEFAULT_DELTA_MIN, GAP_SAMPLES, gap_seed, &br)
                            .map_err(classify)?,
                    );
                    (temperature_for(args.epsilon, gap.phi).map_err(classify)?, Some(gap.phi))
                }
            };
            Ok((
                Variant::Boltzmann {
                    epsilon: args.epsilon,
                    alpha_l: alpha,
                    alpha_f: alpha,
                },
                json!({ "name": "boltzmann", "epsilon": args.epsilon, "alpha": alpha, "phi": phi }),
            ))
        }
    }
}

fn check_solve_args(args: &SolveArgs) -> Result<(), Failure> {
    if !(args.tol > 0.0) {
        return Err(input("--tol must be positive"));
    }
    if args.max_outer == 0 {
        return Err(input("--max-outer must be at least 1"));
    }
    Ok(())
}

pub fn solve_sse_cmd(args: &SolveArgs) -> Result<bool, Failure> {
    check_solve_args(args)?;
    let spec = GameSpec::load(&args.config).map_err(|e| input(format!("{}: {e}", args.config.display())))?;
    let mut seeds = BTreeMap::new();
    let (variant, vjson) = resolve_variant(&spec, args, &mut seeds)?;
    let mut run = Run::start(&args.out)?;
    let r = solve_sse(&spec, None, variant, args.tol, args.max_outer).map_err(classify)?;
    write_policies(&mut run, "policies.csv", &r.leader_policy, &r.follower_policy, &spec.dims)?;
    r.write_trajectory_csv(run.create("trajectory.csv")?).map_err(runtime)?;
    let last = r.trajectory.last();
    let diagnostics = json!({
        "outer_iterations": r.iterations,
        "final_l1_change": last.map(|x| x.l1_change),
        "leader_value": last.map(|x| x.leader_value),
        "follower_value": last.map(|x| x.follower_value),
    });
    let settings = json!({
        "variant": vjson,
        "tol": args.tol,
        "max_outer": args.max_outer,
    });
    run.finish("solve-sse", &[&args.config], args.seed, seeds, settings, r.converged, diagnostics)
}

pub fn solve_smfe_cmd(args: &SolveArgs, max_inner: usize) -> Result<bool, Failure> {
    check_solve_args(args)?;
    if max_inner == 0 {
        return Err(input("--max-inner must be at least 1"));
    }
    let spec = GameSpec::load(&args.config).map_err(|e| input(format!("{}: {e}", args.config.display())))?;
    let mut seeds = BTreeMap::new();
    let (variant, vjson) = resolve_variant(&spec, args, &mut seeds)?;
    let mut run = Run::start(&args.out)?;
    let cfg = MfConfig {
        tol: args.tol,
        max_inner,
        max_outer: args.max_outer,
        ..MfConfig::default()
    };
    let r = solve_smfe(&spec, None, None, variant, &cfg).map_err(classify)?;
    write_policies(&mut run, "policies.csv", &r.leader_policy, &r.follower_policy, &spec.dims)?;
    r.write_diagnostics_csv(run.create("trajectory.csv")?).map_err(runtime)?;
    r.mean_field.write_csv(run.create("mean_field.csv")?).map_err(runtime)?;
    let diagnostics = json!({
        "outer_iterations": r.outer_iterations,
        "inner_iteration_counts": r.inner_iteration_counts,
        "final_l1_change": r.trajectory.last().map(|x| x.l1_change),
        "consistency_residual": r.consistency_residual,
        "follower_optimality_residual": r.follower_optimality_residual,
        "leader_optimality_residual": r.leader_optimality_residual,
        "mean_field_dependent": spec.mf_dependent(),
    });
    let settings = json!({
        "variant": vjson,
        "tol": args.tol,
        "max_outer": args.max_outer,
        "max_inner": max_inner,
        "leader_state": cfg.leader_state,
    });
    run.finish("solve-smfe", &[&args.config], args.seed, seeds, settings, r.converged, diagnostics)
}

pub fn energy_cmd(args: &EnergyArgs) -> Result<bool, Failure> {
    if args.days == 0 {
        return Err(input("--days must be at least 1"));
    }
    let file = EnergyFile::load(&args.grid).map_err(|e| input(format!("{}: {e}", args.grid.display())))?;
    let model = EnergyModel::from_file(&file).map_err(|e| input(format!("{}: {e}", args.grid.display())))?;
    let mut inputs: Vec<&Path> = vec![&args.grid];
    if let Some(p) = &file.profiles {
        inputs.extend([p.consumer_demand.as_path(), p.prosumer_demand.as_path(), p.solar.as_path()]);
    }
    let episode_seed = derive_seed(args.seed, "episode");
    let seeds = BTreeMap::from([("episode".to_string(), episode_seed)]);
    let mut run = Run::start(&args.out)?;
    let dims = model.dims();

    let (storage, tariff, converged, learning) = match args.learn {
        Switch::Off => (StorageMode::Hold, TariffMode::Flat, true, serde_json::Value::Null),
        Switch::On => {
            let cfg = MfConfig {
                max_outer: args.max_outer,
                max_inner: args.max_inner,
                ..MfConfig::default()
            };
            let lp = learn_policies(&model, &cfg).map_err(classify)?;
            write_policies(&mut run, "policies.csv", &lp.leader, &lp.follower, &dims)?;
            let r = &lp.result;
            let learning = json!({
                "converged": r.converged,
                "outer_iterations": r.outer_iterations,
                "inner_iteration_counts": r.inner_iteration_counts,
                "consistency_residual": r.consistency_residual,
                "follower_optimality_residual": r.follower_optimality_residual,
                "leader_optimality_residual": r.leader_optimality_residual,
                "greedy_tariffs": greedy_tariffs(&model, &lp.leader),
            });
            (StorageMode::Policy(lp.follower), TariffMode::Policy(lp.leader), r.converged, learning)
        }
    };
    let ep = run_episode(
        &model,
        &EpisodeConfig {
            days: args.days,
            seed: episode_seed,
            storage,
            tariff,
            initial_bucket: model.buckets() / 2,
        },
    )
    .map_err(runtime)?;
    let lines: Vec<String> = model.grid.lines.iter().map(|l| l.name.clone()).collect();
    let classes = class_names(&model);
    ep.write_steps_csv(run.create("steps.csv")?, &lines).map_err(runtime)?;
    ep.write_days_csv(run.create("days.csv")?, &classes).map_err(runtime)?;

    let imv_per_bus: BTreeMap<String, f64> = model.grid.buses.iter().map(|b| b.name.clone()).zip(ep.imv_per_bus.iter().cloned()).collect();
    let mean_eei: BTreeMap<String, f64> = classes.iter().cloned().zip(ep.mean_eei.iter().cloned()).collect();
    let diagnostics = json!({
        "imv": ep.imv,
        "imv_per_bus": imv_per_bus,
        "mean_eei": mean_eei,
        "mean_dispersion": ep.mean_dispersion,
        "leader_objective": format!("{:?}", model.cfg.leader_objective).to_lowercase(),
        "learning": learning,
    });
    let settings = json!({
        "days": args.days,
        "learn": matches!(args.learn, Switch::On),
        "max_outer": args.max_outer,
        "max_inner": args.max_inner,
        "environment": model.cfg,
    });
    run.finish("energy", &inputs, args.seed, seeds, settings, converged, diagnostics)
}
