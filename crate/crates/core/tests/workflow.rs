use proptest::prelude::*;
use tempfile::TempDir;

use polynode::dataproto::{
    feasibility_violations, generate_synthetic, load_csv, save_csv, split, stress_errors,
    LoadingProtocol, Protocol, SplitRule,
};
use polynode::kinematics::{invariants, DeformationGradient};
use polynode::material::{NodeMaterialModel, DEFAULT_QUADRATURE_ORDER};
use polynode::oracles::{OracleKind, OracleModel};
use polynode::response::BiaxialModel;
use polynode::trainer::{evaluate, train, TrainConfig};

#[test]
fn csv_and_documents_round_trip_through_files() {
    let dir = TempDir::new().unwrap();
    let oracle = OracleKind::Hgo.default_model();
    let data = generate_synthetic(&oracle, &LoadingProtocol::standard_set(1.15, 7), "hgo").unwrap();
    let csv = dir.path().join("data.csv");
    save_csv(&data, &csv).unwrap();
    let back = load_csv(&csv).unwrap();
    assert_eq!(back.records, data.records);

    let model = NodeMaterialModel::new_random(17);
    let doc = dir.path().join("model.json");
    model.save(&doc).unwrap();
    let loaded = NodeMaterialModel::load(&doc).unwrap();
    assert_eq!(loaded.to_params(), model.to_params());
    assert_eq!(std::fs::read_to_string(&doc).unwrap(), loaded.to_document());

    let odoc = dir.path().join("oracle.json");
    oracle.save(&odoc).unwrap();
    assert_eq!(OracleModel::load(&odoc).unwrap(), oracle);
}

#[test]
fn header_only_file_loads_but_cannot_train() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, "protocol,lambda_x,lambda_y,sigma_xx,sigma_yy\n").unwrap();
    let data = load_csv(&csv).unwrap();
    assert!(data.is_empty());
    let cfg = TrainConfig {
        max_iters: 2,
        ..Default::default()
    };
    assert!(train(&NodeMaterialModel::new_random(0), &data, &cfg).is_err());
}

#[test]
fn protocol_split_and_oracle_self_evaluation() {
    let oracle = OracleKind::Goh.default_model();
    let data =
        generate_synthetic(&oracle, &LoadingProtocol::standard_set(1.15, 10), "goh").unwrap();
    let rule = SplitRule::ByProtocol(vec![
        Protocol::Equibiaxial,
        Protocol::StripX,
        Protocol::StripY,
    ]);
    let s = split(&data, &rule).unwrap();
    assert_eq!(s.train.protocols().len(), 3);
    assert_eq!(
        s.validation.protocols(),
        vec![Protocol::OffX, Protocol::OffY]
    );
    let report = evaluate(&oracle, &s).unwrap();
    assert_eq!(report.validation.mae, 0.0);
    assert!(report
        .validation
        .per_protocol_mae
        .values()
        .all(|&v| v == 0.0));
}

#[test]
fn short_training_keeps_architectural_guarantees() {
    let oracle = OracleKind::Mr.default_model();
    let data = generate_synthetic(&oracle, &LoadingProtocol::standard_set(1.15, 8), "mr").unwrap();
    let start = NodeMaterialModel::new_random(2);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        max_iters: 40,
        ..Default::default()
    };
    let (model, report) = train(&start, &data, &cfg).unwrap();
    assert!(report.total_mse < stress_errors(&start, &data).unwrap().mse);
    let (sx, sy) = model.biaxial_stress(1.0, 1.0).unwrap();
    assert!(sx.abs() < 1e-12 && sy.abs() < 1e-12);
    assert!(polynode::convexity::check_node_model(&model, 11, 0.15)
        .unwrap()
        .passed());
}

fn stretch() -> impl Strategy<Value = f64> {
    0.8..1.3f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_models_have_non_negative_energy(seed in 0u64..10_000, lx in stretch(), ly in stretch()) {
        let m = NodeMaterialModel::new_random(seed);
        let f = DeformationGradient::plane_stress(lx, ly).unwrap();
        let inv = invariants(&f.right_cauchy_green().unwrap(), &m.fibers());
        let psi = m.strain_energy(&inv, DEFAULT_QUADRATURE_ORDER).unwrap().psi;
        prop_assert!(psi >= -1e-15, "psi = {psi}");
    }

    #[test]
    fn generated_points_lie_in_the_invariant_domain(lambda_max in 1.01..1.4f64, n in 2usize..12) {
        let oracle = OracleKind::Goh.default_model();
        let data = generate_synthetic(&oracle, &LoadingProtocol::standard_set(lambda_max, n), "goh").unwrap();
        prop_assert_eq!(data.len(), 5 * n);
        let dirs = oracle.fibers().unwrap();
        prop_assert!(feasibility_violations(&data, &dirs).unwrap().is_empty());
    }

    #[test]
    fn equibiaxial_stresses_are_equal_for_diagonal_fibers(seed in 0u64..10_000, l in 1.0..1.2f64) {
        let mut m = NodeMaterialModel::new_random(seed);
        m.fiber_angle_v = std::f64::consts::FRAC_PI_4;
        m.fiber_angle_w = -std::f64::consts::FRAC_PI_4;
        let (sx, sy) = m.biaxial_stress(l, l).unwrap();
        prop_assert!((sx - sy).abs() <= 1e-12 * sx.abs().max(1e-12));
    }
}
