use nalgebra::Vector3;

use vrgcs_core::pilot::FlightMode;
use vrgcs_core::sim::{parse_script, ScriptRun, SimConfig, Simulation};
use vrgcs_core::telemetry::{evaluate_mission, MissionCriteria};
use vrgcs_core::WorldModel;

const MISSION: &str = include_str!("../../../scripts/wall_mission.txt");

const INTO_WALL: &str = "
0 takeoff
4 cmd_vel 1 0 0 0
12 land
";

fn run(script: &str) -> ScriptRun {
    let mut sim = Simulation::new(SimConfig::default(), WorldModel::wall());
    sim.run_script(&parse_script(script).unwrap(), 60.0).unwrap()
}

#[test]
fn wall_mission_passes_and_is_deterministic() {
    let first = run(MISSION);
    assert!(first.rejected.is_empty(), "{:?}", first.rejected);
    let report = evaluate_mission(
        &first.trajectory,
        &WorldModel::wall(),
        &MissionCriteria::default(),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    // It did approach the wall.
    assert!(report.min_wall_clearance < 2.5, "{report:?}");

    let second = run(MISSION);
    assert_eq!(first.trajectory, second.trajectory);
}

#[test]
fn flying_into_the_wall_fails() {
    let r = run(INTO_WALL);
    let report = evaluate_mission(&r.trajectory, &WorldModel::wall(), &MissionCriteria::default()).unwrap();
    assert!(report.min_wall_clearance < 0.5, "{report:?}");
    assert!(!report.passed);
}

#[test]
fn commands_before_flying_are_rejected() {
    let r = run("0 cmd_vel 1 0 0 0\n0 takeoff\n0.5 cmd_vel 1 0 0 0\n0.5 takeoff\n5 land\n");
    assert_eq!(r.rejected.len(), 3);
}

#[test]
fn setpoint_velocity_never_exceeds_limit() {
    let mut sim = Simulation::new(SimConfig::default(), WorldModel::wall());
    let script = parse_script("0 takeoff\n4 cmd_vel 5 5 3 4\n6 cmd_vel -9 0.1 -3 -4\n8 land").unwrap();
    let v_max = sim.config().limits.v_max;
    let mut next = 0;
    while sim.tick_count() < 15 * 500 {
        let now = sim.tick_count() as f64 / 500.0;
        while next < script.len() && script[next].time <= now + 1e-9 {
            let _ = sim.apply(script[next].command);
            next += 1;
        }
        sim.step().unwrap();
        if let Some(sp) = sim.last_setpoint() {
            assert!(
                sp.velocity_target.amax() <= v_max + 1e-12,
                "{:?}",
                sp.velocity_target
            );
        }
    }
    assert_eq!(sim.mode(), FlightMode::Landed);
    assert!(sim.state().position[2] == 0.0 && sim.state().velocity == Vector3::zeros());
}
