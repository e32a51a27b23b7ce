use approx::assert_relative_eq;
use nalgebra::DVector;

use sphereswim::dynamics::{integrate, BemShapeFields, FarFieldShapeFields, ShapeFields, ShapeTable, TabulatedShapeFields};
use sphereswim::optimizer::{branch_scan, solve, OptimizationProblem, OptimizationResult, SolveStatus};
use sphereswim::{State, SwimmerKind, SwimmerModel};

const A: f64 = 0.05;

#[test]
fn bem_mobility_approaches_the_far_field_model() {
    let model = SwimmerModel::new(SwimmerKind::ThreeSpherePlane, A);
    let bem = BemShapeFields::new(model.clone(), 89, 1.0);
    let far = FarFieldShapeFields::new(model, 1.0);
    let gaps: Vec<f64> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&z| {
            let shape = DVector::from_vec(vec![z, 1.1 * z, 0.9 * z]);
            let b = bem.sample(&shape).unwrap().mobility;
            let f = far.sample(&shape).unwrap().mobility;
            (&b - &f).amax() / b.amax()
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 0.05, "{gaps:?}");
}

#[test]
fn table_from_bem_tracks_direct_solves() {
    let model = SwimmerModel::bounded(SwimmerKind::ThreeSphereLine, A, 0.2, 0.6).unwrap();
    let bem = BemShapeFields::new(model.clone(), 34, 1.0);
    let path = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("pipeline_table_3s.json");
    let table = ShapeTable::load_or_build(&bem, 0.18, 0.66, 10, &path).unwrap();
    let again = ShapeTable::load_or_build(&bem, 0.18, 0.66, 10, &path).unwrap();
    assert_eq!(table.values, again.values);
    let tab = TabulatedShapeFields::new(model, table).unwrap();
    let shape = DVector::from_vec(vec![0.31, 0.47]);
    let direct = bem.sample(&shape).unwrap();
    let interpolated = tab.sample(&shape).unwrap();
    assert_relative_eq!(interpolated.mobility, direct.mobility, max_relative = 1e-3);
    assert_relative_eq!(interpolated.metric, direct.metric, max_relative = 1e-3);
}

#[test]
fn optimized_stroke_survives_a_json_round_trip_and_replays() {
    let model = SwimmerModel::bounded(SwimmerKind::ThreeSphereLine, A, 0.2, 0.7).unwrap();
    let far = FarFieldShapeFields::new(model.clone(), 1.0);
    let mut problem = OptimizationProblem::new(model.clone(), 1.0, vec![0.0], vec![Some(0.005)]);
    problem.knots = 8;
    let r = solve(&problem, &far, None).unwrap();
    assert_eq!(r.status, SolveStatus::Converged);

    let back: OptimizationResult = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(back.stroke.shape_knots(), r.stroke.shape_knots());
    let start = State::new(back.stroke.shape_at(0.0), model.origin());
    let traj = integrate(&far, &start, &back.stroke, 400).unwrap();
    assert_relative_eq!(traj.final_state().position.chart()[0], 0.005, max_relative = 1e-2);
    assert_relative_eq!(traj.total_energy(), r.energy, max_relative = 1e-2);
}

#[test]
fn branch_scan_finds_the_mirror_pair_in_the_far_field() {
    let model = SwimmerModel::bounded(SwimmerKind::ThreeSpherePlane, A, 0.1, 0.7).unwrap();
    let far = FarFieldShapeFields::new(model.clone(), 1.0);
    let template = OptimizationProblem::new(model, 1.0, vec![0.0; 3], vec![Some(0.01), Some(0.0), Some(0.0)])
        .with_initial_shape(Some(vec![0.4; 3]));
    let table = branch_scan(&template, &far, &[0.0, 0.2], 2).unwrap();
    assert_eq!(table.cells.len(), 4);
    let pair = table.mirror_pair.expect("mirror pair at the first angle");
    assert!(pair.relative_gap < 1e-6, "{pair:?}");
    assert!(pair.shape_distance < 1e-4, "{pair:?}");
    assert!(table.branches >= 1);
}
