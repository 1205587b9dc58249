//! Three-bus tariff-design environment: DC dispatch with locational prices,
//! prosumer storage aggregators as mean-field followers, a tariff-setting
//! leader, and equity / volatility metrics.

pub mod dispatch;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod profiles;
pub mod sim;

pub use dispatch::{dispatch, dispatch_with, smoothed_lmp, DispatchOptions, DispatchResult};
pub use grid::{EnergyConfig, EnergyFile, GridSpec, LeaderObjective};
pub use metrics::{eei, imv, settle, storage_step, ProsumerState, StorageAction, Tariff};
pub use model::{build_stackelberg_game, EnergyModel};
pub use profiles::{profiles, Shapes};
pub use sim::{run_episode, Episode, EpisodeConfig, StorageMode, TariffMode};
