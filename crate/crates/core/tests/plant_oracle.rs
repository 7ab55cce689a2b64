//! RK4 plant against an independent fine-step Euler integrator.

use openpneu_core::controller::{ActuationCommand, Duty, TICK_SECONDS};
use openpneu_core::plant::{net_flow, pump_contribution, step_plant, ChamberParams, ChannelPlantState, PlantParams};
use proptest::prelude::*;

const P_ATM: f64 = 101.325;

/// Straight transcription of the mass balance, shared by nothing in the crate.
fn euler_rate(p: f64, q_lpm: f64, v0: f64, c: f64) -> f64 {
    let q = q_lpm * 1000.0 / 60.0;
    (P_ATM + p) * q / (v0 + c * p + c * (P_ATM + p))
}

fn oracle_flow(p: f64, inflate: f64, deflate: f64, deflating: bool, leak: f64, dist: f64) -> f64 {
    let pump = if deflating {
        -deflate * 1.7 * (1.0 - p / -50.0).clamp(0.0, 1.0)
    } else {
        inflate * 1.7 * (1.0 - p / 80.0).clamp(0.0, 1.0)
    };
    pump - leak * p + dist
}

struct Segment {
    seconds: f64,
    cmd: ActuationCommand,
    leak: f64,
    dist: f64,
}

fn euler_segment(mut p: f64, seg: &Segment, chamber: &ChamberParams, h: f64) -> f64 {
    let deflating = seg.cmd.valve() == openpneu_core::Valve::DeflatePath;
    let steps = (seg.seconds / h).round() as usize;
    for _ in 0..steps {
        let q = oracle_flow(p, seg.cmd.inflate_duty(), seg.cmd.deflate_duty(), deflating, seg.leak, seg.dist);
        p += h * euler_rate(p, q, chamber.rest_volume, chamber.compliance);
    }
    p
}

fn rk4_segment(state: ChannelPlantState, seg: &Segment, params: &PlantParams) -> ChannelPlantState {
    let mut params = *params;
    params.chamber.leak_coefficient = seg.leak;
    let mut s = ChannelPlantState { disturbance_flow: seg.dist, ..state };
    for _ in 0..(seg.seconds / TICK_SECONDS).round() as usize {
        s = step_plant(&s, &seg.cmd, &params, TICK_SECONDS).unwrap();
    }
    s
}

#[test]
fn constant_inflow_single_step() {
    let params = PlantParams {
        chamber: ChamberParams { rest_volume: 50.0, compliance: 0.0, leak_coefficient: 0.0 },
        ..PlantParams::default()
    };
    let state = ChannelPlantState { disturbance_flow: 1.7, ..Default::default() };
    let next = step_plant(&state, &ActuationCommand::default(), &params, 0.02).unwrap();
    let euler = euler_segment(
        0.0,
        &Segment { seconds: 0.02, cmd: ActuationCommand::default(), leak: 0.0, dist: 1.7 },
        &params.chamber,
        1e-5,
    );
    // Closed form with zero compliance: P = Patm (exp(Q t / V0) - 1).
    const EXACT: f64 = 1.1548819696735197;
    assert!((next.pressure - euler).abs() < 1e-3, "rk4 {} euler {}", next.pressure, euler);
    assert!((next.pressure - EXACT).abs() < 1e-9, "rk4 {}", next.pressure);
    assert!((next.last_flow - 1.7).abs() < 1e-12);
}

#[test]
fn mixed_ten_second_scenario_matches_fine_euler() {
    let params = PlantParams::default();
    let half = Duty::from_fraction(0.5);
    let script = [
        Segment { seconds: 2.0, cmd: ActuationCommand::inflate(Duty::ONE), leak: 0.0, dist: 0.0 },
        Segment { seconds: 1.0, cmd: ActuationCommand::idle(openpneu_core::Valve::InflatePath), leak: 0.02, dist: 0.0 },
        Segment { seconds: 1.5, cmd: ActuationCommand::inflate(half), leak: 0.02, dist: 0.3 },
        Segment { seconds: 2.5, cmd: ActuationCommand::deflate(Duty::ONE), leak: 0.0, dist: 0.0 },
        Segment { seconds: 1.0, cmd: ActuationCommand::deflate(half), leak: 0.05, dist: -0.2 },
        Segment { seconds: 2.0, cmd: ActuationCommand::inflate(Duty::from_counts(3000)), leak: 0.01, dist: 0.0 },
    ];
    assert_eq!(script.iter().map(|s| s.seconds).sum::<f64>(), 10.0);
    let mut rk = ChannelPlantState::default();
    let mut eu = 0.0;
    let mut worst: f64 = 0.0;
    for seg in &script {
        rk = rk4_segment(rk, seg, &params);
        eu = euler_segment(eu, seg, &params.chamber, 1e-5);
        worst = worst.max((rk.pressure - eu).abs());
    }
    assert!(worst < 1e-3, "max deviation {worst}");
}

#[test]
fn leak_decay_is_monotone_and_matches_oracle() {
    let mut params = PlantParams::default();
    params.chamber.leak_coefficient = 0.05;
    let idle = ActuationCommand::default();
    let mut s = ChannelPlantState::at_pressure(30.0);
    let mut prev = s.pressure;
    for _ in 0..500 {
        s = step_plant(&s, &idle, &params, TICK_SECONDS).unwrap();
        assert!(s.pressure < prev && s.pressure > 0.0);
        prev = s.pressure;
    }
    let eu = euler_segment(30.0, &Segment { seconds: 10.0, cmd: idle, leak: 0.05, dist: 0.0 }, &params.chamber, 1e-5);
    assert!((s.pressure - eu).abs() < 1e-3);
    assert!(s.pressure < 1.0, "after 10 s: {}", s.pressure);
}

fn arb_command() -> impl Strategy<Value = ActuationCommand> {
    (0u16..4096, any::<bool>()).prop_map(|(c, deflate)| {
        if deflate {
            ActuationCommand::deflate(Duty::from_counts(c))
        } else {
            ActuationCommand::inflate(Duty::from_counts(c))
        }
    })
}

proptest! {
    #[test]
    fn equilibrium_without_flow(p in -50.0f64..80.0, v0 in 10.0f64..200.0, c in 0.0f64..1.0, valve in any::<bool>()) {
        let params = PlantParams { chamber: ChamberParams { rest_volume: v0, compliance: c, leak_coefficient: 0.0 }, ..PlantParams::default() };
        let valve = if valve { openpneu_core::Valve::DeflatePath } else { openpneu_core::Valve::InflatePath };
        let mut s = ChannelPlantState::at_pressure(p);
        for _ in 0..50 {
            s = step_plant(&s, &ActuationCommand::idle(valve), &params, TICK_SECONDS).unwrap();
        }
        prop_assert_eq!(s.pressure, p);
    }

    #[test]
    fn bounded_by_stall_pressures(cmds in prop::collection::vec(arb_command(), 1..400), leak in 0.0f64..0.05) {
        let mut params = PlantParams::default();
        params.chamber.leak_coefficient = leak;
        let mut s = ChannelPlantState::default();
        for cmd in &cmds {
            s = step_plant(&s, cmd, &params, TICK_SECONDS).unwrap();
            prop_assert!(s.pressure + P_ATM > 0.0);
            prop_assert!((-50.0..=80.0).contains(&s.pressure), "pressure {}", s.pressure);
        }
    }

    #[test]
    fn pump_flow_ceiling(cmd in arb_command(), p in -103.4f64..103.4) {
        let q = pump_contribution(p, &cmd, &PlantParams::default());
        prop_assert!(q.abs() <= 1.7);
        let s = ChannelPlantState::at_pressure(p);
        prop_assert_eq!(net_flow(&s, &cmd, &PlantParams::default()), q);
    }

    #[test]
    fn monotone_leak(p0 in -50.0f64..80.0, k in 0.001f64..0.1) {
        let mut params = PlantParams::default();
        params.chamber.leak_coefficient = k;
        let mut s = ChannelPlantState::at_pressure(p0);
        for _ in 0..200 {
            let next = step_plant(&s, &ActuationCommand::default(), &params, TICK_SECONDS).unwrap();
            prop_assert!(next.pressure.abs() <= s.pressure.abs());
            prop_assert!(next.pressure.signum() == s.pressure.signum() || next.pressure == 0.0);
            s = next;
        }
    }

    #[test]
    fn deterministic(cmds in prop::collection::vec(arb_command(), 1..100)) {
        let params = PlantParams::default();
        let run = || {
            let mut s = ChannelPlantState::default();
            cmds.iter().map(|c| { s = step_plant(&s, c, &params, TICK_SECONDS).unwrap(); s.pressure.to_bits() }).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}
