mod common;

use cavs::control::TargetMode;
use cavs::friction::FrictionParams;
use cavs::plant::{
    equilibria, equilibrium_solve, run_scenario, track_equilibrium, BranchMemory, Disturbance, Finger, ObjectModel,
    PlantState, Scenario, ScenarioStep, TickInput,
};
use cavs::sensing::red_area_ratio;
use cavs::{Config, World};

fn world() -> World {
    Config::default().world().unwrap()
}

fn soft_object() -> ObjectModel {
    ObjectModel { nominal_width: 20.0, stiffness: 0.2, ..Default::default() }
}

/// Gap sweep from overlap 9 to 13 mm and back in 0.01 mm steps.
fn sweep(obj: &ObjectModel) -> (Vec<f64>, Vec<PlantState>, usize) {
    let curve = FrictionParams::default().press_curve();
    let w = obj.nominal_width;
    let mut overlaps: Vec<f64> = (0..=400).map(|i| 9.0 + i as f64 * 0.01).collect();
    overlaps.extend((0..400).rev().map(|i| 9.0 + i as f64 * 0.01));
    let pos = |ov: f64| [0.5 * (w - ov); 2];
    let mut st = equilibrium_solve(&curve, obj, pos(overlaps[0]), &BranchMemory::default(), [0.0; 2]).unwrap();
    let mut states = vec![st];
    let mut snaps = 0;
    for &ov in &overlaps[1..] {
        let (next, ev) = track_equilibrium(&curve, obj, &st, pos(ov), [0.0; 2]).unwrap();
        snaps += ev.len();
        st = next;
        states.push(st);
    }
    (overlaps, states, snaps)
}

#[test]
fn snap_through_sweep_is_hysteretic_and_matches_root_scan() {
    let obj = soft_object();
    let curve = FrictionParams::default().press_curve();
    let (overlaps, states, snaps) = sweep(&obj);
    assert!(snaps >= 2, "expected a snap each way, got {snaps}");

    // loop area of object force against overlap: loading minus unloading work
    let mut area = 0.0;
    for i in 1..overlaps.len() {
        let dov = overlaps[i] - overlaps[i - 1];
        area += 0.5 * (states[i].object_force + states[i - 1].object_force) * dov;
    }
    assert!(area > 0.0, "loop area {area}");
    let differs = (0..=400).any(|i| {
        let j = overlaps.len() - 1 - i;
        (states[i].d[0] + states[i].d[1] - states[j].d[0] - states[j].d[1]).abs() > 0.1
    });
    assert!(differs, "loading and unloading deformations coincide");

    for (idx, &ov) in overlaps.iter().enumerate().step_by(5) {
        let oracle = common::scan_equilibria(ov, obj.stiffness);
        let lib = equilibria(&curve, &obj, ov, [0.0; 2]);
        assert_eq!(lib.len(), oracle.len(), "root count at overlap {ov}: {lib:?} vs {oracle:?}");
        for e in &lib {
            assert!(
                oracle.iter().any(|o| (o.0 - e.d[0]).abs() < 1e-4 && (o.1 - e.d[1]).abs() < 1e-4),
                "library root {:?} not in oracle at {ov}",
                e.d
            );
        }
        let s = &states[idx];
        assert!(oracle.iter().any(|o| (o.0 - s.d[0]).abs() < 1e-4 && (o.1 - s.d[1]).abs() < 1e-4));
    }
}

#[test]
fn rigid_object_splits_overlap_evenly() {
    let curve = FrictionParams::default().press_curve();
    let obj = ObjectModel { stiffness: 1e9, ..Default::default() };
    let st = equilibrium_solve(&curve, &obj, [3.6, 3.6], &BranchMemory::default(), [0.0; 2]).unwrap();
    assert!((st.d[0] - 0.4).abs() < 1e-6 && (st.d[1] - 0.4).abs() < 1e-6);
}

#[test]
fn every_tick_balances_forces() {
    let mut w = world();
    let scenario = Scenario::tube();
    for step in &scenario.steps[..2] {
        for _ in 0..300 {
            w.tick(step.target_mode, TickInput::default()).unwrap();
            let st = w.state();
            assert!(st.force_residual() < 1e-9, "{st:?}");
            assert!(st.closure_residual(w.object()) < 1e-9, "{st:?}");
        }
    }
}

#[test]
fn surface_to_line_switch_matches_hand_simulation() {
    let mut w = world();
    w.set_symmetric_deformation(3.5).unwrap();
    let cfg = w.controller().clone();
    let obj = w.object().clone();
    let (cam, lk) = (w.camera().clone(), w.linkage().clone());
    let band = w.widened_band();

    let mut gap = w.state().gap();
    let mut d = 3.5;
    let mut prev_pos = w.state().finger_pos;
    for tick in 1..=100 {
        let r = red_area_ratio(&cam, &lk, d).unwrap();
        let e = r - cfg.r_target_lc;
        let step = if e > cfg.epsilon {
            cfg.step_open
        } else if e < -cfg.epsilon {
            cfg.step_close
        } else {
            0.0
        };
        gap = (gap + 2.0 * step).max(0.0);
        d = common::symmetric_deformation(obj.nominal_width - gap, obj.stiffness);

        w.tick(TargetMode::Lc, TickInput::default()).unwrap();
        let st = w.state();
        assert!((st.d[0] - d).abs() < 1e-7 && (st.d[1] - d).abs() < 1e-7, "tick {tick}: {:?} vs {d}", st.d);
        let in_band = w.ratios().iter().all(|r| (r - cfg.r_target_lc).abs() <= band);
        if in_band {
            break;
        }
        assert!(st.finger_pos[0] > prev_pos[0] && st.finger_pos[1] > prev_pos[1], "not opening at {tick}");
        prev_pos = st.finger_pos;
        assert!(tick < 100, "never reached the band");
    }
}

#[test]
fn line_contact_from_open_start_stops_near_boundary() {
    let mut w = world();
    let d_boundary = w.friction().d_lc_end;
    let step = w.controller().step_close.abs();
    let mut max_d: f64 = 0.0;
    for _ in 0..600 {
        w.tick(TargetMode::Lc, TickInput::default()).unwrap();
        max_d = max_d.max(w.state().d[0]).max(w.state().d[1]);
    }
    assert!(max_d <= d_boundary + step, "max deformation {max_d}");
    let band = w.widened_band();
    assert!(w.ratios().iter().all(|r| (r - 0.4).abs() <= band));
}

#[test]
fn surface_contact_hold_stays_in_band() {
    let mut w = world();
    let scenario = Scenario {
        steps: vec![ScenarioStep {
            name: "hold".into(),
            target_mode: TargetMode::Sc,
            duration_s: 120.0,
            disturbance: None,
        }],
    };
    let run = run_scenario(&mut w, &scenario).unwrap();
    assert!(run.steps[0].band_occupancy >= 0.95, "{}", run.steps[0].band_occupancy);
    assert_eq!(run.steps[0].grasp_maintained, Some(true));
}

#[test]
fn bundled_scenario_succeeds() {
    let mut w = world();
    let run = run_scenario(&mut w, &Scenario::tube()).unwrap();
    assert!(run.succeeded(), "{}", run.summary_text());
    let sc_min = run
        .steps
        .iter()
        .filter(|s| s.target_mode == TargetMode::Sc)
        .map(|s| s.f_n_range.unwrap().0)
        .fold(f64::INFINITY, f64::min);
    let lc_max = run
        .steps
        .iter()
        .filter(|s| s.target_mode == TargetMode::Lc)
        .map(|s| s.f_n_range.unwrap().1)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(sc_min > lc_max, "SC min {sc_min} vs LC max {lc_max}");
}

#[test]
fn scenario_csv_is_deterministic() {
    let cfg = Config {
        camera: cavs::CameraModel { noise_std_pct: 0.3, ..Default::default() },
        seed: 7,
        ..Default::default()
    };
    let a = run_scenario(&mut cfg.world().unwrap(), &Scenario::tube()).unwrap().csv();
    let b = run_scenario(&mut cfg.world().unwrap(), &Scenario::tube()).unwrap().csv();
    assert_eq!(a, b);
    let other = Config { seed: 8, ..cfg };
    let c = run_scenario(&mut other.world().unwrap(), &Scenario::tube()).unwrap().csv();
    assert_ne!(a, c);
}

#[test]
fn disturbance_only_touches_one_finger() {
    let tube = Scenario::tube();
    let mut quiet = tube.clone();
    for s in &mut quiet.steps {
        s.disturbance = None;
    }
    let base = run_scenario(&mut world(), &quiet).unwrap();
    let hit = run_scenario(&mut world(), &tube).unwrap();
    let (step_idx, dist) =
        tube.steps.iter().enumerate().find_map(|(i, s)| s.disturbance.clone().map(|d| (i, d))).unwrap();
    let offset: u64 = tube.steps[..step_idx].iter().map(|s| s.ticks(0.1)).sum();
    let (_, end) = dist.tick_range(0.1);
    let other = match dist.finger() {
        Finger::Left => Finger::Right,
        Finger::Right => Finger::Left,
    };
    let cmds = |run: &cavs::plant::ScenarioRun, f: Finger| -> Vec<f64> {
        run.records.iter().filter(|r| r.finger == f).map(|r| r.delta_df_mm).collect()
    };
    let last = (offset + end) as usize;
    assert_eq!(cmds(&base, other)[..last], cmds(&hit, other)[..last]);
    assert!(hit.succeeded());
    let band = world().widened_band();
    let tail = hit.records.iter().filter(|r| r.time_s > (offset + end) as f64 * 0.1 + 5.0);
    for r in tail.filter(|r| r.desired_state == tube.steps[step_idx].target_mode) {
        assert!((r.r_img - r.r_target).abs() <= band, "{r:?}");
    }
    assert!(matches!(dist, Disturbance::Ratio { .. }));
}

#[test]
fn zero_duration_step_is_invalid() {
    let bad = r#"{"steps":[{"name":"x","target_mode":"SC","duration_s":0}]}"#;
    assert!(Scenario::from_json(bad).is_err() || Scenario::from_json(bad).unwrap().validate().is_err());
}

#[test]
fn slide_demand_separates_the_modes() {
    use cavs::friction::{ContactState, Direction};
    use cavs::plant::deformation_for_ratio;
    let w = world();
    let p = w.friction();
    let d_lc = deformation_for_ratio(w.camera(), w.linkage(), w.controller().r_target_lc).unwrap();
    let lc = p.max_resistible_force(ContactState::Lc, Direction::Longitudinal, p.pressing_force(d_lc));
    let sc = p.max_resistible_force(ContactState::Sc, Direction::Longitudinal, p.f_local_min);
    assert!(lc < w.slide_demand() && w.slide_demand() < sc, "{lc} < {} < {sc}", w.slide_demand());
}

#[test]
fn surface_contact_start_holds_still() {
    let mut w = world();
    w.set_symmetric_deformation(3.5).unwrap();
    for _ in 0..100 {
        let rows = w.tick(TargetMode::Sc, TickInput::default()).unwrap();
        assert!(rows.iter().all(|r| r.delta_df_mm == 0.0));
    }
}

#[test]
fn deformation_jumps_bounded_by_finger_motion() {
    let run = run_scenario(&mut world(), &Scenario::tube()).unwrap();
    assert!(run.snaps.is_empty());
    let side = |f: Finger| run.records.iter().filter(move |r| r.finger == f).collect::<Vec<_>>();
    let (left, right) = (side(Finger::Left), side(Finger::Right));
    for i in 1..left.len() {
        let gap_change =
            (left[i].finger_pos_mm + right[i].finger_pos_mm - left[i - 1].finger_pos_mm - right[i - 1].finger_pos_mm)
                .abs();
        for s in [&left, &right] {
            let jump = (s[i].deformation_mm - s[i - 1].deformation_mm).abs();
            assert!(jump <= gap_change + 1e-9, "tick {i}: jump {jump} with gap change {gap_change}");
        }
    }
}
