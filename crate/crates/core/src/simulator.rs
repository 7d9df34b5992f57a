//! Closed-loop simulation of the delayed formation: fixed-step RK4 by the
//! method of steps, with delayed arguments read from a linearly interpolated
//! history buffer. The default mode integrates the hand-position dynamics
//! directly; unicycle mode adds the heading state and the exact inverse of
//! the hand-position map.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::halanay::ScalabilityBoundCoeffs;
use crate::protocol::{
    protocol_derivatives, zeta_coordinates, DisturbanceSpec, FormationTopology, GainSet,
    MultiplexState, ProtocolError, ProtocolInputs, ROBOT_LAYERS,
};
use crate::vec2::Vec2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("history underrun: requested t = {requested}, earliest available {available}")]
    HistoryUnderrun { requested: f64, available: f64 },
    #[error("state blew up at t = {t:.4} (agent {agent})")]
    NonFinite { t: f64, agent: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Reference trajectory of the virtual leader; every descriptor returns the
/// position together with its exact time derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum LeaderPath {
    Stationary {
        position: Vec2,
    },
    Circle {
        center: Vec2,
        radius: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Axis-aligned rectangle with quarter-circle corners traversed at
    /// constant speed; the velocity direction turns continuously, so the
    /// path is C¹.
    RoundedRectangle {
        center: Vec2,
        /// Straight-edge lengths (excluding the corner arcs).
        width: f64,
        height: f64,
        corner_radius: f64,
        speed: f64,
    },
}

impl LeaderPath {
    pub fn eval(&self, t: f64) -> (Vec2, Vec2) {
        match *self {
            LeaderPath::Stationary { position } => (position, Vec2::ZERO),
            LeaderPath::Circle { center, radius, omega, phase } => {
                let a = omega * t + phase;
                (
                    center + Vec2::new(radius * a.cos(), radius * a.sin()),
                    Vec2::new(-radius * omega * a.sin(), radius * omega * a.cos()),
                )
            }
            LeaderPath::RoundedRectangle { center, width, height, corner_radius: r, speed } => {
                let (w, h) = (width.max(0.0), height.max(0.0));
                let perimeter = 2.0 * w + 2.0 * h + 2.0 * std::f64::consts::PI * r;
                let mut s = (speed * t) % perimeter;
                if s < 0.0 {
                    s += perimeter;
                }
                let quarter = 0.5 * std::f64::consts::PI * r;
                // segment boundaries, counter-clockwise from the bottom-left
                // end of the bottom edge
                let segs = [
                    w,
                    quarter,
                    h,
                    quarter,
                    w,
                    quarter,
                    h,
                    quarter,
                ];
                let mut idx = 0;
                for (i, len) in segs.iter().enumerate() {
                    if s <= *len || i == segs.len() - 1 {
                        idx = i;
                        break;
                    }
                    s -= len;
                }
                let (hw, hh) = (0.5 * w, 0.5 * h);
                let (pos, dir) = match idx {
                    // bottom edge, heading +x
                    0 => (Vec2::new(-hw + s, -hh - r), Vec2::new(1.0, 0.0)),
                    // bottom-right corner
                    1 => corner_arc(Vec2::new(hw, -hh), r, -0.5 * std::f64::consts::PI, s),
                    // right edge, heading +y
                    2 => (Vec2::new(hw + r, -hh + s), Vec2::new(0.0, 1.0)),
                    // top-right corner
                    3 => corner_arc(Vec2::new(hw, hh), r, 0.0, s),
                    // top edge, heading -x
                    4 => (Vec2::new(hw - s, hh + r), Vec2::new(-1.0, 0.0)),
                    // top-left corner
                    5 => corner_arc(Vec2::new(-hw, hh), r, 0.5 * std::f64::consts::PI, s),
                    // left edge, heading -y
                    6 => (Vec2::new(-hw - r, hh - s), Vec2::new(0.0, -1.0)),
                    // bottom-left corner
                    _ => corner_arc(Vec2::new(-hw, -hh), r, std::f64::consts::PI, s),
                };
                (center + pos, dir * speed)
            }
        }
    }
}

/// Point and unit tangent on a counter-clockwise quarter arc of radius `r`
/// around `pivot`, starting at angle `start` after arc length `s`.
fn corner_arc(pivot: Vec2, r: f64, start: f64, s: f64) -> (Vec2, Vec2) {
    let a = start + s / r;
    (
        pivot + Vec2::new(r * a.cos(), r * a.sin()),
        Vec2::new(-a.sin(), a.cos()),
    )
}

/// Initial-condition mode: start on the desired formation or displace every
/// agent by a seeded random offset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InitMode {
    OnFormation,
    PerturbedStart { max_offset: f64 },
}

impl Default for InitMode {
    fn default() -> Self {
        InitMode::OnFormation
    }
}

/// Integration mode: hand-position dynamics directly, or the full unicycle
/// with feedback linearization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SimMode {
    HandPosition,
    Unicycle { hand_offset: f64 },
}

impl Default for SimMode {
    fn default() -> Self {
        SimMode::HandPosition
    }
}

/// What the metrics collector keeps per step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    /// Per-agent deviation and ζ-norm series at every step.
    Full,
    /// Only the global series and per-circle aggregates.
    Summary,
}

/// Simulation configuration. The step must stay below the delay when delays
/// are active (method-of-steps validity).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub step: f64,
    pub duration: f64,
    pub tau_max: f64,
    pub leader: LeaderPath,
    #[serde(default)]
    pub init: InitMode,
    #[serde(default)]
    pub mode: SimMode,
    /// Per-agent disturbances, indexed like the topology agents.
    pub disturbances: Vec<DisturbanceSpec>,
    /// Multiplicative step jitter amplitude (hardware-style step variability);
    /// zero disables it.
    #[serde(default)]
    pub step_jitter: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_record_mode")]
    pub record: RecordMode,
}

fn default_record_mode() -> RecordMode {
    RecordMode::Full
}

impl SimConfig {
    pub fn new(step: f64, duration: f64, tau_max: f64, leader: LeaderPath, n_agents: usize) -> Self {
        SimConfig {
            step,
            duration,
            tau_max,
            leader,
            init: InitMode::OnFormation,
            mode: SimMode::HandPosition,
            disturbances: vec![DisturbanceSpec::zero(); n_agents],
            step_jitter: 0.0,
            seed: 0,
            record: RecordMode::Full,
        }
    }

    fn validate(&self, n_agents: usize) -> Result<(), SimError> {
        if !(self.step > 0.0) {
            return Err(SimError::InvalidConfig("step must be positive".into()));
        }
        if !(self.duration > 0.0) {
            return Err(SimError::InvalidConfig("duration must be positive".into()));
        }
        if self.tau_max < 0.0 {
            return Err(SimError::InvalidConfig("tau_max must be nonnegative".into()));
        }
        if self.tau_max > 0.0 && self.step * (1.0 + self.step_jitter) >= self.tau_max {
            return Err(SimError::InvalidConfig(format!(
                "step {} must stay below the delay {} (method of steps)",
                self.step, self.tau_max
            )));
        }
        if self.disturbances.len() != n_agents {
            return Err(SimError::InvalidConfig(format!(
                "{} disturbance entries for {} agents",
                self.disturbances.len(),
                n_agents
            )));
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return Err(SimError::InvalidConfig("step_jitter must be in [0, 1)".into()));
        }
        if let SimMode::Unicycle { hand_offset } = self.mode {
            if !(hand_offset > 0.0) {
                return Err(SimError::InvalidConfig("hand_offset must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Positions plus multiplex outputs for the whole network at one instant.
/// In unicycle mode the stored positions are the hand positions (what the
/// delayed couplings read).
#[derive(Clone, Debug)]
pub struct NetworkState {
    pub eta: Vec<Vec2>,
    pub mux: MultiplexState,
}

impl NetworkState {
    fn axpy(&mut self, c: f64, other: &NetworkState) {
        for (a, b) in self.eta.iter_mut().zip(&other.eta) {
            *a += c * *b;
        }
        for (ra, rb) in self.mux.layers.iter_mut().zip(&other.mux.layers) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += c * *b;
            }
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        for (i, e) in self.eta.iter().enumerate() {
            if !e.is_finite() || self.mux.layers[i].iter().any(|r| !r.is_finite()) {
                return Some(i);
            }
        }
        None
    }
}

/// Time-indexed past network states with linear interpolation, covering at
/// least the delay window behind the newest sample. Queries before the first
/// sample return the initial function (constant initial data).
pub struct HistoryBuffer {
    samples: VecDeque<(f64, NetworkState)>,
    span: f64,
}

impl HistoryBuffer {
    /// `span` is the window that must stay covered (τ_max plus slack).
    pub fn new(t0: f64, initial: NetworkState, span: f64) -> Self {
        let mut samples = VecDeque::new();
        samples.push_back((t0, initial));
        HistoryBuffer { samples, span }
    }

    pub fn push(&mut self, t: f64, state: NetworkState) {
        debug_assert!(t > self.samples.back().unwrap().0);
        self.samples.push_back((t, state));
        let keep_from = t - self.span;
        while self.samples.len() > 2 && self.samples[1].0 <= keep_from {
            self.samples.pop_front();
        }
    }

    pub fn newest_time(&self) -> f64 {
        self.samples.back().unwrap().0
    }

    /// Interpolated network state at `t`. Clamps to the initial function
    /// before the first sample; times beyond the newest completed sample are
    /// an underrun error.
    pub fn lookup(&self, t: f64) -> Result<NetworkState, SimError> {
        let (t_first, first) = self.samples.front().unwrap();
        if t <= *t_first {
            return Ok(first.clone());
        }
        let (t_last, last) = self.samples.back().unwrap();
        if t > *t_last + 1e-12 {
            return Err(SimError::HistoryUnderrun { requested: t, available: *t_last });
        }
        if t >= *t_last {
            return Ok(last.clone());
        }
        // binary search for the bracketing pair
        let idx = self.samples.partition_point(|(ts, _)| *ts <= t);
        let (ta, sa) = &self.samples[idx - 1];
        let (tb, sb) = &self.samples[idx];
        let w = (t - ta) / (tb - ta);
        let mut out = sa.clone();
        for (o, (a, b)) in out.eta.iter_mut().zip(sa.eta.iter().zip(&sb.eta)) {
            *o = *a * (1.0 - w) + *b * w;
        }
        for (i, row) in out.mux.layers.iter_mut().enumerate() {
            for (k, o) in row.iter_mut().enumerate() {
                *o = sa.mux.layers[i][k] * (1.0 - w) + sb.mux.layers[i][k] * w;
            }
        }
        Ok(out)
    }
}

/// Collected deviation and diagnostic series. Deviations are Euclidean
/// distances between actual and desired hand positions, in meters.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SimMetrics {
    pub times: Vec<f64>,
    pub global_max_dev: Vec<f64>,
    /// `[time][agent]` deviation, present in full recording mode.
    pub per_agent_dev: Option<Vec<Vec<f64>>>,
    /// `[time][agent]` Euclidean norms of ζ₁ and ζ₂.
    pub zeta1_norm: Option<Vec<Vec<f64>>>,
    pub zeta2_norm: Option<Vec<Vec<f64>>>,
    /// Largest deviation seen on each circle over the whole run; index `c`
    /// holds circle `c + 1`.
    pub per_circle_max: Vec<f64>,
    pub terminal_dev: Vec<f64>,
    /// Terminal ζ vectors per agent and layer.
    pub terminal_zeta: Vec<Vec<Vec2>>,
    pub warnings: Vec<String>,
}

impl SimMetrics {
    pub fn global_max(&self) -> f64 {
        self.global_max_dev.iter().copied().fold(0.0, f64::max)
    }
}

/// Desired agent positions at time `t`: the leader position minus each
/// leader offset.
pub fn desired_solution(topology: &FormationTopology, leader: &LeaderPath, t: f64) -> Vec<Vec2> {
    let (pos, _) = leader.eval(t);
    (0..topology.agent_count()).map(|i| pos - topology.leader_offset(i)).collect()
}

struct Recorder<'a> {
    topology: &'a FormationTopology,
    leader: &'a LeaderPath,
    disturbances: &'a [DisturbanceSpec],
    full: bool,
    metrics: SimMetrics,
}

impl<'a> Recorder<'a> {
    fn new(config: &'a SimConfig, topology: &'a FormationTopology) -> Self {
        Recorder {
            topology,
            leader: &config.leader,
            disturbances: &config.disturbances,
            full: config.record == RecordMode::Full,
            metrics: SimMetrics {
                per_agent_dev: (config.record == RecordMode::Full).then(Vec::new),
                zeta1_norm: (config.record == RecordMode::Full).then(Vec::new),
                zeta2_norm: (config.record == RecordMode::Full).then(Vec::new),
                per_circle_max: vec![0.0; topology.n_circles()],
                ..SimMetrics::default()
            },
        }
    }

    fn record(&mut self, t: f64, state: &NetworkState) {
        let desired = desired_solution(self.topology, self.leader, t);
        let n = self.topology.agent_count();
        let mut devs = Vec::with_capacity(n);
        let mut gmax = 0.0_f64;
        for i in 0..n {
            let d = (state.eta[i] - desired[i]).norm();
            gmax = gmax.max(d);
            let c = self.topology.circle_of(i) - 1;
            if d > self.metrics.per_circle_max[c] {
                self.metrics.per_circle_max[c] = d;
            }
            devs.push(d);
        }
        self.metrics.times.push(t);
        self.metrics.global_max_dev.push(gmax);
        if self.full {
            let mut z1 = Vec::with_capacity(n);
            let mut z2 = Vec::with_capacity(n);
            for i in 0..n {
                let z = zeta_coordinates(&state.mux.layers[i], &self.disturbances[i], t);
                z1.push(z[0].norm());
                z2.push(z[1].norm());
            }
            self.metrics.zeta1_norm.as_mut().unwrap().push(z1);
            self.metrics.zeta2_norm.as_mut().unwrap().push(z2);
            self.metrics.per_agent_dev.as_mut().unwrap().push(devs);
        }
    }

    fn finish(mut self, t: f64, state: &NetworkState) -> SimMetrics {
        let desired = desired_solution(self.topology, self.leader, t);
        self.metrics.terminal_dev = state
            .eta
            .iter()
            .zip(&desired)
            .map(|(e, d)| (*e - *d).norm())
            .collect();
        self.metrics.terminal_zeta = (0..self.topology.agent_count())
            .map(|i| zeta_coordinates(&state.mux.layers[i], &self.disturbances[i], t))
            .collect();
        self.metrics
    }
}

fn initial_positions(
    config: &SimConfig,
    topology: &FormationTopology,
) -> Vec<Vec2> {
    let desired = desired_solution(topology, &config.leader, 0.0);
    match config.init {
        InitMode::OnFormation => desired,
        InitMode::PerturbedStart { max_offset } => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            desired
                .into_iter()
                .map(|p| {
                    p + Vec2::new(
                        rng.gen_range(-max_offset..=max_offset),
                        rng.gen_range(-max_offset..=max_offset),
                    )
                })
                .collect()
        }
    }
}

/// One RK4 step of the hand-position closed loop. Delayed arguments at the
/// stage times are read from the completed history (valid since `h < τ`).
pub fn step(
    state: &NetworkState,
    history: &HistoryBuffer,
    config: &SimConfig,
    gains: &GainSet,
    topology: &FormationTopology,
    t: f64,
    h: f64,
) -> Result<NetworkState, SimError> {
    let deriv = |ts: f64, s: &NetworkState| -> Result<NetworkState, SimError> {
        // with no delay the "delayed" arguments are the stage state itself
        let delayed_eta;
        let delayed = if config.tau_max > 0.0 {
            delayed_eta = history.lookup(ts - config.tau_max)?.eta;
            &delayed_eta
        } else {
            &s.eta
        };
        let (leader_pos, leader_vel) = config.leader.eval(ts);
        let (delayed_leader_pos, _) = config.leader.eval(ts - config.tau_max);
        let out = protocol_derivatives(
            gains,
            topology,
            &ProtocolInputs {
                positions: &s.eta,
                delayed_positions: delayed,
                leader_pos,
                leader_vel,
                delayed_leader_pos,
                mux: &s.mux,
            },
        )?;
        let eta_dot = out
            .u
            .iter()
            .enumerate()
            .map(|(i, u)| *u + config.disturbances[i].eval(ts))
            .collect();
        Ok(NetworkState { eta: eta_dot, mux: MultiplexState { layers: out.r_dot } })
    };
    rk4(state, t, h, deriv)
}

fn rk4<S, F>(state: &S, t: f64, h: f64, deriv: F) -> Result<S, SimError>
where
    S: CloneAxpy,
    F: Fn(f64, &S) -> Result<S, SimError>,
{
    let k1 = deriv(t, state)?;
    let mut s2 = state.clone_state();
    s2.axpy_state(0.5 * h, &k1);
    let k2 = deriv(t + 0.5 * h, &s2)?;
    let mut s3 = state.clone_state();
    s3.axpy_state(0.5 * h, &k2);
    let k3 = deriv(t + 0.5 * h, &s3)?;
    let mut s4 = state.clone_state();
    s4.axpy_state(h, &k3);
    let k4 = deriv(t + h, &s4)?;
    let mut out = state.clone_state();
    out.axpy_state(h / 6.0, &k1);
    out.axpy_state(h / 3.0, &k2);
    out.axpy_state(h / 3.0, &k3);
    out.axpy_state(h / 6.0, &k4);
    Ok(out)
}

trait CloneAxpy {
    fn clone_state(&self) -> Self;
    fn axpy_state(&mut self, c: f64, other: &Self);
}

impl CloneAxpy for NetworkState {
    fn clone_state(&self) -> Self {
        self.clone()
    }
    fn axpy_state(&mut self, c: f64, other: &Self) {
        self.axpy(c, other);
    }
}

/// Run the configured simulation and collect metrics at every step.
pub fn run(
    config: &SimConfig,
    gains: &GainSet,
    topology: &FormationTopology,
) -> Result<SimMetrics, SimError> {
    let n = topology.agent_count();
    config.validate(n)?;
    gains.validate()?;

    let mut warnings = Vec::new();
    for (i, d) in config.disturbances.iter().enumerate() {
        if let Some(order) = d.poly_order() {
            if order + 1 > ROBOT_LAYERS {
                warnings.push(format!(
                    "agent {}: polynomial disturbance order {} exceeds the {} multiplex layers; it will not be rejected",
                    i + 1,
                    order,
                    ROBOT_LAYERS
                ));
            }
        }
    }

    match config.mode {
        SimMode::HandPosition => run_hand_position(config, gains, topology, warnings),
        SimMode::Unicycle { hand_offset } => {
            run_unicycle(config, gains, topology, hand_offset, warnings)
        }
    }
}

fn step_sizes(config: &SimConfig) -> Vec<f64> {
    let steps = (config.duration / config.step).round().max(1.0) as usize;
    if config.step_jitter == 0.0 {
        return vec![config.step; steps];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5DEE_CE66);
    (0..steps)
        .map(|_| config.step * (1.0 + rng.gen_range(-config.step_jitter..=config.step_jitter)))
        .collect()
}

fn run_hand_position(
    config: &SimConfig,
    gains: &GainSet,
    topology: &FormationTopology,
    warnings: Vec<String>,
) -> Result<SimMetrics, SimError> {
    let n = topology.agent_count();
    let eta0 = initial_positions(config, topology);
    let state0 = NetworkState { eta: eta0, mux: MultiplexState::zeros(n, ROBOT_LAYERS) };
    let mut history =
        HistoryBuffer::new(0.0, state0.clone(), config.tau_max + 4.0 * config.step);
    let mut recorder = Recorder::new(config, topology);
    recorder.metrics.warnings = warnings;

    let mut state = state0;
    let mut t = 0.0;
    recorder.record(t, &state);
    for h in step_sizes(config) {
        let next = step(&state, &history, config, gains, topology, t, h)?;
        t += h;
        if let Some(agent) = next.first_non_finite() {
            return Err(SimError::NonFinite { t, agent });
        }
        history.push(t, next.clone());
        state = next;
        recorder.record(t, &state);
    }
    Ok(recorder.finish(t, &state))
}

/// Unicycle state: wheel positions, headings, and the multiplex outputs.
#[derive(Clone, Debug)]
pub struct UnicycleState {
    pub p: Vec<Vec2>,
    pub theta: Vec<f64>,
    pub mux: MultiplexState,
}

impl UnicycleState {
    pub fn hand_positions(&self, hand_offset: f64) -> Vec<Vec2> {
        self.p
            .iter()
            .zip(&self.theta)
            .map(|(p, th)| *p + hand_offset * Vec2::new(th.cos(), th.sin()))
            .collect()
    }
}

impl CloneAxpy for UnicycleState {
    fn clone_state(&self) -> Self {
        self.clone()
    }
    fn axpy_state(&mut self, c: f64, other: &Self) {
        for (a, b) in self.p.iter_mut().zip(&other.p) {
            *a += c * *b;
        }
        for (a, b) in self.theta.iter_mut().zip(&other.theta) {
            *a += c * b;
        }
        for (ra, rb) in self.mux.layers.iter_mut().zip(&other.mux.layers) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += c * *b;
            }
        }
    }
}

/// One RK4 step of the unicycle closed loop: the protocol command for the
/// hand position is mapped through the inverse of the 2x2 hand map
/// (determinant `hand_offset` > 0, always invertible), disturbances enter
/// the wheel velocity directly.
pub fn unicycle_mode_step(
    state: &UnicycleState,
    history: &HistoryBuffer,
    config: &SimConfig,
    gains: &GainSet,
    topology: &FormationTopology,
    hand_offset: f64,
    t: f64,
    h: f64,
) -> Result<UnicycleState, SimError> {
    let deriv = |ts: f64, s: &UnicycleState| -> Result<UnicycleState, SimError> {
        let hands = s.hand_positions(hand_offset);
        let delayed_eta;
        let delayed = if config.tau_max > 0.0 {
            delayed_eta = history.lookup(ts - config.tau_max)?.eta;
            &delayed_eta
        } else {
            &hands
        };
        let (leader_pos, leader_vel) = config.leader.eval(ts);
        let (delayed_leader_pos, _) = config.leader.eval(ts - config.tau_max);
        let out = protocol_derivatives(
            gains,
            topology,
            &ProtocolInputs {
                positions: &hands,
                delayed_positions: delayed,
                leader_pos,
                leader_vel,
                delayed_leader_pos,
                mux: &s.mux,
            },
        )?;
        let n = topology.agent_count();
        let mut p_dot = Vec::with_capacity(n);
        let mut theta_dot = Vec::with_capacity(n);
        for i in 0..n {
            let nu = out.u[i];
            let (c, sn) = (s.theta[i].cos(), s.theta[i].sin());
            // [v, Omega] = M(theta)^{-1} nu
            let v = c * nu.x + sn * nu.y;
            let omega = (-sn * nu.x + c * nu.y) / hand_offset;
            let d = config.disturbances[i].eval(ts);
            p_dot.push(Vec2::new(v * c + d.x, v * sn + d.y));
            theta_dot.push(omega);
        }
        Ok(UnicycleState { p: p_dot, theta: theta_dot, mux: MultiplexState { layers: out.r_dot } })
    };
    rk4(state, t, h, deriv)
}

fn run_unicycle(
    config: &SimConfig,
    gains: &GainSet,
    topology: &FormationTopology,
    hand_offset: f64,
    warnings: Vec<String>,
) -> Result<SimMetrics, SimError> {
    let n = topology.agent_count();
    let hands0 = initial_positions(config, topology);
    // headings start at zero; wheel sits behind the hand along the heading
    let state0 = UnicycleState {
        p: hands0.iter().map(|hp| *hp - Vec2::new(hand_offset, 0.0)).collect(),
        theta: vec![0.0; n],
        mux: MultiplexState::zeros(n, ROBOT_LAYERS),
    };
    let net0 = NetworkState {
        eta: state0.hand_positions(hand_offset),
        mux: state0.mux.clone(),
    };
    let mut history = HistoryBuffer::new(0.0, net0.clone(), config.tau_max + 4.0 * config.step);
    let mut recorder = Recorder::new(config, topology);
    recorder.metrics.warnings = warnings;

    let mut state = state0;
    let mut t = 0.0;
    recorder.record(t, &net0);
    let mut net = net0;
    for h in step_sizes(config) {
        let next =
            unicycle_mode_step(&state, &history, config, gains, topology, hand_offset, t, h)?;
        t += h;
        for (i, (p, th)) in next.p.iter().zip(&next.theta).enumerate() {
            if !p.is_finite() || !th.is_finite() {
                return Err(SimError::NonFinite { t, agent: i });
            }
        }
        net = NetworkState { eta: next.hand_positions(hand_offset), mux: next.mux.clone() };
        history.push(t, net.clone());
        state = next;
        recorder.record(t, &net);
    }
    Ok(recorder.finish(t, &net))
}

/// Result of checking a deviation series against the certified bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub violations: usize,
    /// Largest observed deviation / bound ratio.
    pub max_ratio: f64,
}

/// Compare the recorded global deviation series against the certified
/// deviation bound with the given input magnitudes.
pub fn check_iss_bound(
    metrics: &SimMetrics,
    coeffs: &ScalabilityBoundCoeffs,
    w_sup: f64,
    x0_dev_sup: f64,
    zeta0_sup: f64,
) -> BoundCheck {
    let mut violations = 0;
    let mut max_ratio = 0.0_f64;
    for (t, dev) in metrics.times.iter().zip(&metrics.global_max_dev) {
        let bound = crate::halanay::iss_bound(coeffs, w_sup, x0_dev_sup, zeta0_sup, *t);
        if *dev > bound {
            violations += 1;
        }
        if bound > 0.0 {
            max_ratio = max_ratio.max(dev / bound);
        }
    }
    BoundCheck { violations, max_ratio }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::build_topology;

    fn leader_circle() -> LeaderPath {
        LeaderPath::Circle { center: Vec2::ZERO, radius: 0.5, omega: 0.15, phase: 0.0 }
    }

    fn base_config(n_agents: usize, duration: f64) -> SimConfig {
        SimConfig::new(0.01, duration, 0.33, leader_circle(), n_agents)
    }

    #[test]
    fn desired_solution_cases() {
        let topo = build_topology(1, 0.2, 3);
        let stationary = LeaderPath::Stationary { position: Vec2::new(1.0, -2.0) };
        let d0 = desired_solution(&topo, &stationary, 0.0);
        let d7 = desired_solution(&topo, &stationary, 7.0);
        assert_eq!(d0, d7);

        // zero offset tracks the leader exactly
        let circle = leader_circle();
        for t in [0.0, 1.3, 12.0] {
            let (pos, _) = circle.eval(t);
            let desired = desired_solution(&topo, &circle, t);
            for (i, d) in desired.iter().enumerate() {
                // rigid translation of the formation
                assert!(((*d - pos) + topo.leader_offset(i)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn leader_paths_are_consistent() {
        // circle: |v| = R omega exactly
        let circle = leader_circle();
        for t in [0.0, 2.0, 31.4] {
            let (_, v) = circle.eval(t);
            assert!((v.norm() - 0.5 * 0.15).abs() < 1e-14);
        }
        let stationary = LeaderPath::Stationary { position: Vec2::new(0.1, 0.2) };
        assert_eq!(stationary.eval(5.0).1, Vec2::ZERO);

        // rounded rectangle: analytic derivative matches finite differences
        // and the speed is constant (C1 path)
        let rect = LeaderPath::RoundedRectangle {
            center: Vec2::new(0.1, -0.1),
            width: 1.2,
            height: 0.6,
            corner_radius: 0.2,
            speed: 0.3,
        };
        let eps = 1e-6;
        let mut t = 0.0;
        while t < 20.0 {
            let (_, v) = rect.eval(t);
            assert!((v.norm() - 0.3).abs() < 1e-12, "speed must be constant");
            let (pp, _) = rect.eval(t + eps);
            let (pm, _) = rect.eval(t - eps);
            let fd = (pp - pm) * (0.5 / eps);
            assert!((fd - v).norm() < 1e-6, "finite difference {fd:?} vs analytic {v:?}");
            t += 0.37;
        }
    }

    #[test]
    fn history_buffer_interpolates_and_clamps() {
        let mk = |v: f64| NetworkState {
            eta: vec![Vec2::new(v, -v)],
            mux: MultiplexState { layers: vec![vec![Vec2::new(2.0 * v, 0.0); 2]] },
        };
        let mut hb = HistoryBuffer::new(0.0, mk(0.0), 1.0);
        hb.push(0.5, mk(1.0));
        hb.push(1.0, mk(2.0));
        // clamp before t0 (constant initial function)
        assert_eq!(hb.lookup(-3.0).unwrap().eta[0], Vec2::ZERO);
        // exact sample
        assert_eq!(hb.lookup(0.5).unwrap().eta[0], Vec2::new(1.0, -1.0));
        // midpoint interpolation of both positions and layer outputs
        let mid = hb.lookup(0.75).unwrap();
        assert!((mid.eta[0].x - 1.5).abs() < 1e-15);
        assert!((mid.mux.layers[0][0].x - 3.0).abs() < 1e-15);
        // underrun beyond the newest sample
        assert!(matches!(hb.lookup(1.5), Err(SimError::HistoryUnderrun { .. })));
        // pruning keeps the covered span
        for i in 1..200 {
            hb.push(1.0 + i as f64 * 0.1, mk(i as f64));
        }
        assert!(hb.lookup(hb.newest_time() - 1.0).is_ok());
    }

    #[test]
    fn zero_disturbance_stays_on_formation() {
        let topo = build_topology(2, 0.2, 3);
        let config = base_config(topo.agent_count(), 20.0);
        let gains = GainSet::reference_a();
        let metrics = run(&config, &gains, &topo).unwrap();
        assert!(metrics.global_max() < 1e-6, "max dev {}", metrics.global_max());
        assert!(metrics.warnings.is_empty());
    }

    #[test]
    fn constant_disturbance_rejected_single_agent() {
        // one circle; a constant velocity disturbance must be absorbed by
        // the first multiplex layer: eta error -> 0 and r1 -> -d0
        let topo = build_topology(1, 0.2, 3);
        let mut config = base_config(4, 40.0);
        config.disturbances[0] = DisturbanceSpec {
            poly: vec![Vec2::new(0.03, -0.02)],
            residual: vec![],
        };
        let gains = GainSet::reference_a();
        let metrics = run(&config, &gains, &topo).unwrap();
        assert!(metrics.terminal_dev[0] < 1e-6);
        // zeta_1 = r1 + d0 -> 0 certifies r1 -> -d0
        assert!(metrics.terminal_zeta[0][0].norm() < 1e-6);
    }

    #[test]
    fn ramp_disturbance_rejected_with_zeta_convergence() {
        let topo = build_topology(1, 0.2, 3);
        let mut config = base_config(4, 60.0);
        config.disturbances[2] = DisturbanceSpec {
            poly: vec![Vec2::new(0.01, 0.01), Vec2::new(-0.02, -0.02)],
            residual: vec![],
        };
        let gains = GainSet::reference_a();
        let metrics = run(&config, &gains, &topo).unwrap();
        assert!(metrics.terminal_dev[2] < 1e-6);
        // both layers converge: r1 -> -d0 - d1 t, r2 -> -d1
        assert!(metrics.terminal_zeta[2][0].norm() < 1e-6);
        assert!(metrics.terminal_zeta[2][1].norm() < 1e-6);
    }

    #[test]
    fn determinism_bitwise() {
        let topo = build_topology(2, 0.2, 3);
        let mut config = base_config(topo.agent_count(), 5.0);
        config.init = InitMode::PerturbedStart { max_offset: 0.05 };
        config.seed = 42;
        let gains = GainSet::reference_a();
        let a = run(&config, &gains, &topo).unwrap();
        let b = run(&config, &gains, &topo).unwrap();
        assert_eq!(a.global_max_dev, b.global_max_dev);
        assert_eq!(a.terminal_dev, b.terminal_dev);
    }

    #[test]
    fn blow_up_detected() {
        let topo = build_topology(1, 0.2, 3);
        let mut config = base_config(4, 10.0);
        config.init = InitMode::PerturbedStart { max_offset: 0.1 };
        // absurd gain destabilizes the explicit integrator immediately
        let mut gains = GainSet::reference_a();
        gains.k0 = 1e9;
        let err = run(&config, &gains, &topo).unwrap_err();
        assert!(matches!(err, SimError::NonFinite { .. }));
    }

    #[test]
    fn zero_delay_runs_without_history() {
        // delays inactive: the coupling reads the current state directly
        let topo = build_topology(1, 0.2, 3);
        let mut config = SimConfig::new(0.05, 20.0, 0.0, leader_circle(), 4);
        config.disturbances[0] =
            DisturbanceSpec { poly: vec![Vec2::new(0.02, -0.01)], residual: vec![] };
        let metrics = run(&config, &GainSet::reference_a(), &topo).unwrap();
        assert!(metrics.terminal_dev[0] < 1e-5, "constant disturbance still rejected");
    }

    #[test]
    fn config_validation() {
        let topo = build_topology(1, 0.2, 3);
        let gains = GainSet::reference_a();
        let mut c = base_config(4, 10.0);
        c.step = 0.5; // >= tau
        assert!(matches!(run(&c, &gains, &topo), Err(SimError::InvalidConfig(_))));
        let mut c = base_config(4, 10.0);
        c.disturbances.pop();
        assert!(matches!(run(&c, &gains, &topo), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn poly_order_warning() {
        let topo = build_topology(1, 0.2, 3);
        let mut config = base_config(4, 2.0);
        config.disturbances[1] = DisturbanceSpec {
            poly: vec![Vec2::ZERO, Vec2::ZERO, Vec2::new(0.001, 0.0)],
            residual: vec![],
        };
        let metrics = run(&config, &GainSet::reference_a(), &topo).unwrap();
        assert_eq!(metrics.warnings.len(), 1);
        assert!(metrics.warnings[0].contains("order 2"));
    }

    #[test]
    fn unicycle_kinematics() {
        // Omega = 0 keeps theta constant; v = 0 keeps p fixed and moves the
        // hand on a circle when Omega is constant
        let state = UnicycleState {
            p: vec![Vec2::ZERO],
            theta: vec![0.3],
            mux: MultiplexState::zeros(1, 2),
        };
        let hands = state.hand_positions(0.05);
        assert!((hands[0] - Vec2::new(0.05 * 0.3f64.cos(), 0.05 * 0.3f64.sin())).norm() < 1e-15);
    }

    #[test]
    fn unicycle_matches_hand_position_mode() {
        let topo = build_topology(1, 0.2, 3);
        let gains = GainSet::reference_a();
        let mut config = base_config(4, 8.0);
        config.disturbances[0] =
            DisturbanceSpec { poly: vec![Vec2::new(0.02, 0.01)], residual: vec![] };
        let direct = run(&config, &gains, &topo).unwrap();
        let mut uni_config = config.clone();
        uni_config.mode = SimMode::Unicycle { hand_offset: 0.05 };
        let uni = run(&uni_config, &gains, &topo).unwrap();
        // same hand-position trajectories up to discretization of the
        // heading kinematics
        for (a, b) in direct.global_max_dev.iter().zip(&uni.global_max_dev) {
            assert!((a - b).abs() < 5e-4, "hand mode {a} vs unicycle {b}");
        }
        let term: f64 = direct
            .terminal_dev
            .iter()
            .zip(&uni.terminal_dev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(term < 5e-4);
    }

    #[test]
    fn unicycle_rejects_bad_hand_offset() {
        let topo = build_topology(1, 0.2, 3);
        let mut config = base_config(4, 1.0);
        config.mode = SimMode::Unicycle { hand_offset: 0.0 };
        assert!(matches!(
            run(&config, &GainSet::reference_a(), &topo),
            Err(SimError::InvalidConfig(_))
        ));
    }

    #[test]
    fn jitter_runs_and_is_seeded() {
        let topo = build_topology(1, 0.2, 3);
        let mut config = base_config(4, 5.0);
        config.step_jitter = 0.2;
        config.seed = 7;
        config.disturbances[0] =
            DisturbanceSpec { poly: vec![Vec2::new(0.02, 0.0)], residual: vec![] };
        let gains = GainSet::reference_b();
        let a = run(&config, &gains, &topo).unwrap();
        let b = run(&config, &gains, &topo).unwrap();
        assert_eq!(a.global_max_dev, b.global_max_dev);
        assert_eq!(a.times, b.times);
        // jittered grids differ from the nominal one
        assert!(a.times[1] != 0.01);
    }
}
