//! Cross-module properties of the closed loop: ζ-coordinate kinematics along
//! simulated trajectories, deviation-bound soundness for a certified gain
//! set, and the relative size of perturbed vs unperturbed responses.

use muxnet::certifier::certify;
use muxnet::protocol::{
    build_topology, zeta_coordinates, DampedSinusoid, DisturbanceSpec, GainSet, MultiplexState,
    ROBOT_LAYERS,
};
use muxnet::simulator::{
    check_iss_bound, desired_solution, run, step, HistoryBuffer, LeaderPath, NetworkState,
    SimConfig,
};
use muxnet::vec2::Vec2;

fn leader() -> LeaderPath {
    LeaderPath::Circle { center: Vec2::ZERO, radius: 0.5, omega: 0.15, phase: 0.0 }
}

fn eq13_residual() -> DampedSinusoid {
    DampedSinusoid { amp: 0.4, omega: 0.5, decay: 0.1, phase: 0.0 }
}

fn two_circle_config(with_residual: bool, duration: f64) -> (SimConfig, usize) {
    let n = 12;
    let mut config = SimConfig::new(0.01, duration, 0.33, leader(), n);
    let residual = if with_residual { vec![eq13_residual()] } else { vec![] };
    config.disturbances[0] =
        DisturbanceSpec { poly: vec![Vec2::new(0.04, 0.04)], residual: residual.clone() };
    config.disturbances[2] = DisturbanceSpec {
        poly: vec![Vec2::ZERO, Vec2::new(-0.05, -0.05)],
        residual,
    };
    (config, n)
}

/// d/dt ζ₁ = ṙ₁ + d̄₁ and d/dt ζ₂ = ṙ₂, checked by finite differencing both
/// sides along a simulated trajectory.
#[test]
fn zeta_kinematics_along_trajectory() {
    let topo = build_topology(1, 0.2, 3);
    let gains = GainSet::reference_a();
    let spec = DisturbanceSpec {
        poly: vec![Vec2::new(0.02, -0.01), Vec2::new(-0.03, 0.01)],
        residual: vec![],
    };
    let mut config = SimConfig::new(0.01, 1.0, 0.33, leader(), 4);
    config.disturbances[0] = spec.clone();

    // drive the integrator by hand so the raw multiplex states are visible
    let eta0 = desired_solution(&topo, &config.leader, 0.0);
    let mut state = NetworkState { eta: eta0, mux: MultiplexState::zeros(4, ROBOT_LAYERS) };
    let mut history = HistoryBuffer::new(0.0, state.clone(), 0.33 + 0.04);
    let h = 0.01;
    let mut r1_series = Vec::new();
    let mut r2_series = Vec::new();
    let mut z_series = Vec::new();
    for k in 0..200 {
        let t = k as f64 * h;
        r1_series.push(state.mux.layers[0][0]);
        r2_series.push(state.mux.layers[0][1]);
        z_series.push(zeta_coordinates(&state.mux.layers[0], &spec, t));
        let next = step(&state, &history, &config, &gains, &topo, t, h).unwrap();
        history.push(t + h, next.clone());
        state = next;
    }
    let d1 = spec.poly_coeff(1);
    for k in 1..r1_series.len() - 1 {
        let fd = |s: &[Vec2]| (s[k + 1] - s[k - 1]) * (0.5 / h);
        let z1_dot = fd(&z_series.iter().map(|z| z[0]).collect::<Vec<_>>());
        let z2_dot = fd(&z_series.iter().map(|z| z[1]).collect::<Vec<_>>());
        let r1_dot = fd(&r1_series);
        let r2_dot = fd(&r2_series);
        assert!((z1_dot - (r1_dot + d1)).norm() < 1e-9, "zeta_1 kinematics at step {k}");
        assert!((z2_dot - r2_dot).norm() < 1e-9, "zeta_2 kinematics at step {k}");
    }
}

/// The certified deviation bound holds along the reference-A run of the
/// two-circle disturbance scenario.
#[test]
fn deviation_bound_sound_for_reference_a() {
    let gains = GainSet::reference_a();
    let cert = certify(&gains, 3, 0.33).unwrap();
    assert!(cert.feasible);
    let coeffs = cert.bound_coeffs(0.33).unwrap();

    let topo = build_topology(2, 0.2, 3);
    let (config, _) = two_circle_config(true, 60.0);
    let metrics = run(&config, &gains, &topo).unwrap();

    let w_sup = config
        .disturbances
        .iter()
        .map(|d| d.residual_sup_2norm())
        .fold(0.0_f64, f64::max);
    let zeta0_sup = config
        .disturbances
        .iter()
        .map(|d| d.initial_zeta_sup(ROBOT_LAYERS, 0.33))
        .fold(0.0_f64, f64::max);
    let check = check_iss_bound(&metrics, &coeffs, w_sup, 0.0, zeta0_sup);
    assert_eq!(check.violations, 0, "bound violated (max ratio {})", check.max_ratio);
    assert!(check.max_ratio > 0.0);
}

/// With polynomial-only disturbances the deviation decays within a constant
/// factor of exp(-rate * t): the log-envelope never crosses ten times the
/// certified transient term.
#[test]
fn polynomial_only_deviation_decays_at_certified_rate() {
    let gains = GainSet::reference_a();
    let cert = certify(&gains, 3, 0.33).unwrap();
    let coeffs = cert.bound_coeffs(0.33).unwrap();
    let topo = build_topology(2, 0.2, 3);
    let (config, _) = two_circle_config(false, 60.0);
    let metrics = run(&config, &gains, &topo).unwrap();
    let zeta0_sup = config
        .disturbances
        .iter()
        .map(|d| d.initial_zeta_sup(ROBOT_LAYERS, 0.33))
        .fold(0.0_f64, f64::max);
    for (t, dev) in metrics.times.iter().zip(&metrics.global_max_dev) {
        let envelope = 10.0 * coeffs.kappa * zeta0_sup * (-coeffs.rate * t).exp();
        assert!(*dev <= envelope, "deviation {dev} above rate envelope {envelope} at t={t}");
    }
}

/// Perturbed agents dominate the response; everyone else stays inside a
/// strictly smaller envelope.
#[test]
fn unperturbed_agents_stay_inside_perturbed_envelope() {
    let gains = GainSet::reference_b();
    let topo = build_topology(2, 0.2, 3);
    let (config, n) = two_circle_config(true, 60.0);
    let metrics = run(&config, &gains, &topo).unwrap();
    let per_agent = metrics.per_agent_dev.as_ref().unwrap();
    let agent_max = |i: usize| per_agent.iter().map(|row| row[i]).fold(0.0_f64, f64::max);
    let perturbed = agent_max(0).max(agent_max(2));
    let unperturbed = (0..n)
        .filter(|i| *i != 0 && *i != 2)
        .map(agent_max)
        .fold(0.0_f64, f64::max);
    assert!(
        unperturbed < 0.5 * perturbed,
        "unperturbed envelope {unperturbed} vs perturbed {perturbed}"
    );
}

/// Unicycle mode leaves headings alone when nothing commands rotation.
#[test]
fn unicycle_idle_keeps_heading() {
    let topo = build_topology(1, 0.2, 3);
    let mut config = SimConfig::new(
        0.01,
        2.0,
        0.33,
        LeaderPath::Stationary { position: Vec2::new(0.2, -0.1) },
        4,
    );
    config.mode = muxnet::simulator::SimMode::Unicycle { hand_offset: 0.05 };
    let metrics = run(&config, &GainSet::reference_a(), &topo).unwrap();
    // on the desired solution with a stationary leader nothing moves at all
    assert!(metrics.global_max() < 1e-12);
}
