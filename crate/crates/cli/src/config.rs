//! JSON configuration schema.
//!
//! Top-level keys: `gains`, `topology`, `delay`, `disturbances`, `leader`,
//! `sim`, and optionally `synthesis`.

use serde::{Deserialize, Serialize};

use muxnet::protocol::{
    build_topology, DampedSinusoid, DisturbanceSpec, FormationTopology, GainSet,
};
use muxnet::simulator::{InitMode, LeaderPath, RecordMode, SimConfig, SimMode};
use muxnet::synthesis::{LinearGainConstraint, SynthesisProblem};
use muxnet::vec2::Vec2;

use crate::CommonArgs;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub gains: GainSet,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub delay: DelayConfig,
    #[serde(default)]
    pub disturbances: Vec<DisturbanceEntry>,
    #[serde(default = "default_leader")]
    pub leader: LeaderPath,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub synthesis: Option<SynthesisSettings>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub n_circles: usize,
    #[serde(default = "default_radius_step")]
    pub radius_step: f64,
    #[serde(default = "default_n_bar")]
    pub n_bar: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig { n_circles: 2, radius_step: 0.2, n_bar: 3 }
    }
}

fn default_radius_step() -> f64 {
    0.2
}

fn default_n_bar() -> usize {
    3
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    pub tau_max: f64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig { tau_max: 0.33 }
    }
}

/// One disturbed agent: 1-based agent id, polynomial coefficients (lowest
/// order first, one `[x, y]` pair per order) and residual sinusoids.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceEntry {
    pub agent: usize,
    #[serde(default)]
    pub poly: Vec<Vec2>,
    #[serde(default)]
    pub residual: Vec<DampedSinusoid>,
}

fn default_leader() -> LeaderPath {
    LeaderPath::Circle { center: Vec2::ZERO, radius: 0.5, omega: 0.15, phase: 0.0 }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default)]
    pub mode: SimMode,
    #[serde(default)]
    pub step_jitter: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            step: 0.01,
            duration: 60.0,
            init_mode: InitMode::OnFormation,
            mode: SimMode::HandPosition,
            step_jitter: 0.0,
        }
    }
}

fn default_step() -> f64 {
    0.01
}

fn default_duration() -> f64 {
    60.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSettings {
    #[serde(default)]
    pub alpha_grid: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub extra_constraints: Vec<LinearGainConstraint>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_restarts() -> usize {
    6
}

impl ConfigFile {
    pub fn build_topology(&self) -> FormationTopology {
        self.build_topology_with_circles(self.topology.n_circles)
    }

    pub fn build_topology_with_circles(&self, n_circles: usize) -> FormationTopology {
        build_topology(n_circles, self.topology.radius_step, self.topology.n_bar)
    }

    /// Disturbance table aligned with the agents of `topology`; entries
    /// beyond the agent count are ignored (smaller sweep formations).
    pub fn disturbance_table(&self, n_agents: usize) -> Result<Vec<DisturbanceSpec>, String> {
        let mut table = vec![DisturbanceSpec::zero(); n_agents];
        for e in &self.disturbances {
            if e.agent == 0 {
                return Err("disturbance agent ids are 1-based".into());
            }
            if e.agent <= n_agents {
                table[e.agent - 1] =
                    DisturbanceSpec { poly: e.poly.clone(), residual: e.residual.clone() };
            }
        }
        Ok(table)
    }

    pub fn disturbance_specs_iter(&self) -> impl Iterator<Item = DisturbanceSpec> + '_ {
        self.disturbances
            .iter()
            .map(|e| DisturbanceSpec { poly: e.poly.clone(), residual: e.residual.clone() })
    }

    pub fn sim_config(
        &self,
        topology: &FormationTopology,
        common: &CommonArgs,
        record: RecordMode,
    ) -> Result<SimConfig, String> {
        let disturbances = self.disturbance_table(topology.agent_count())?;
        Ok(SimConfig {
            step: common.step.unwrap_or(self.sim.step),
            duration: common.duration.unwrap_or(self.sim.duration),
            tau_max: self.delay.tau_max,
            leader: self.leader.clone(),
            init: self.sim.init_mode,
            mode: self.sim.mode,
            disturbances,
            step_jitter: self.sim.step_jitter,
            seed: common.seed,
            record,
        })
    }

    pub fn synthesis_problem(&self) -> SynthesisProblem {
        let mut problem = SynthesisProblem::new(self.topology.n_bar, self.delay.tau_max);
        problem.k_psi = self.gains.k_psi;
        if let Some(s) = &self.synthesis {
            if let Some(grid) = &s.alpha_grid {
                problem.alpha_grid = grid.clone();
            }
            problem.extra_constraints = s.extra_constraints.clone();
            problem.restarts = s.restarts;
        }
        problem
    }
}
