mod common;

use common::*;
use fleetgame_core::network::{estimate_gamma, generate_synthetic, load_scenario, write_scenario};
use fleetgame_core::{Error, PiMatrix, Scenario, ZoneGraph};
use proptest::prelude::*;

fn fixture_path(name: &str) -> String {
    format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn pointer(e: Error) -> String {
    match e {
        Error::Validation { pointer, .. } => pointer,
        other => panic!("expected validation error, got {other}"),
    }
}

#[test]
fn minimal_fixture() {
    let s = load_scenario(fixture_path("one_zone.json")).unwrap();
    assert_eq!(s.n_zones(), 1);
    assert!(s.graph.edges().is_empty());
    assert_eq!(s.mu, vec![0.2]);
    assert_eq!(s.step_minutes, 1.0);
}

#[test]
fn city_fixture() {
    let s = load_scenario(fixture_path("city15.json")).unwrap();
    assert_eq!(s.n_zones(), 15);
    assert_eq!(s.n_taxis, 500);
    assert_eq!(s, generate_synthetic(15, 500, 7, 2.0).unwrap());
}

fn minimal_json() -> serde_json::Value {
    serde_json::json!({
        "zones": ["a", "b"],
        "edges": [["a", "b"], ["b", "a"]],
        "mu": [0.2, 0.3],
        "lambda": [[null, 0.1], [0.2, null]],
        "rho": [[0.1, 0.1], [0.1, 0.1]],
        "sigma": [0.0, 0.0],
        "sigma_prime": [0.1, 0.1],
        "gamma": [[0.5, 0.5], [0.5, 0.5]],
        "n_taxis": 3
    })
}

#[test]
fn rejects_bad_files() {
    assert!(Scenario::from_json(&minimal_json().to_string()).is_ok());

    let mut v = minimal_json();
    v["gamma"][1] = serde_json::json!([0.25, 0.25]);
    let e = Scenario::from_json(&v.to_string()).unwrap_err();
    assert!(e.to_string().contains("gamma row 1 sums to 0.5"), "{e}");
    assert_eq!(pointer(e), "/gamma/1");

    let mut v = minimal_json();
    v["sigma"][0] = serde_json::json!(0.1);
    v["sigma_prime"][0] = serde_json::json!(0.0);
    assert_eq!(pointer(Scenario::from_json(&v.to_string()).unwrap_err()), "/sigma_prime/0");

    let mut v = minimal_json();
    v["mu"][1] = serde_json::json!(-1.0);
    assert_eq!(pointer(Scenario::from_json(&v.to_string()).unwrap_err()), "/mu/1");

    let mut v = minimal_json();
    v["edges"] = serde_json::json!([["a", "a"]]);
    assert!(Scenario::from_json(&v.to_string()).is_err());

    let mut v = minimal_json();
    v["edges"] = serde_json::json!([["a", "c"]]);
    assert!(Scenario::from_json(&v.to_string()).is_err());

    let mut v = minimal_json();
    v["rate_unit"] = serde_json::json!("per_hour");
    assert!(Scenario::from_json(&v.to_string()).is_err());
    v["rate_unit"] = serde_json::json!("per_minute");
    assert!(Scenario::from_json(&v.to_string()).is_ok());

    let mut v = minimal_json();
    v["surprise"] = serde_json::json!(1);
    assert!(matches!(Scenario::from_json(&v.to_string()), Err(Error::Parse(_))));

    assert!(matches!(Scenario::from_json("{"), Err(Error::Parse(_))));
}

#[test]
fn graph_must_be_connected() {
    let zones = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    assert!(ZoneGraph::new(zones.clone(), vec![(0, 1)]).is_err());
    assert!(ZoneGraph::new(zones.clone(), vec![(0, 1), (2, 1)]).is_ok());
    assert!(ZoneGraph::new(zones, vec![(0, 0)]).is_err());
}

#[test]
fn synthetic_examples() {
    let a = generate_synthetic(15, 500, 7, 1.0).unwrap();
    let b = generate_synthetic(15, 500, 7, 1.0).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    a.validate().unwrap();

    let one = generate_synthetic(1, 1, 0, 1.0).unwrap();
    assert_eq!(one.n_zones(), 1);
    assert!(one.graph.edges().is_empty());

    let s = generate_synthetic(4, 20, 3, 1.0).unwrap();
    let mut mu = s.mu.clone();
    mu.sort_by(f64::total_cmp);
    let median = (mu[1] + mu[2]) / 2.0;
    assert!(mu[3] >= 3.0 * median, "{mu:?}");

    assert!(generate_synthetic(0, 5, 0, 1.0).is_err());
    assert!(generate_synthetic(3, 0, 0, 1.0).is_err());
}

#[test]
fn gamma_examples() {
    let pi = PiMatrix::new(vec![vec![2.0, 1.0, 1.0], vec![0.0, 3.0, 0.0], vec![1.0, 1.0, 1.0]]).unwrap();
    let g = estimate_gamma(&pi).unwrap();
    assert_eq!(g[0], vec![0.5, 0.25, 0.25]);
    assert_eq!(g[1], vec![0.0, 1.0, 0.0]);

    let pi = PiMatrix::new(vec![vec![1.0, 1.0, 1.0], vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]]).unwrap();
    assert!(matches!(estimate_gamma(&pi), Err(Error::ZeroRow { row: 1 })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn file_round_trip(seed in 0u64..100_000, n in 1usize..7, taxis in 0u32..1000) {
        let s = random_scenario(seed, n, taxis);
        prop_assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s.clone());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        write_scenario(&s, &path).unwrap();
        prop_assert_eq!(load_scenario(&path).unwrap(), s);
    }

    #[test]
    fn gamma_rows_normalised(rows in prop::collection::vec(prop::collection::vec(0.0f64..100.0, 4), 4)) {
        prop_assume!(rows.iter().all(|r| r.iter().sum::<f64>() > 0.0));
        let g = estimate_gamma(&PiMatrix::new(rows.clone()).unwrap()).unwrap();
        for (row, src) in g.iter().zip(&rows) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let t: f64 = src.iter().sum();
            for (x, y) in row.iter().zip(src) {
                prop_assert!((x - y / t).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn synthetic_is_pure(n in 1usize..20, taxis in 1u32..600, seed in 0u64..1000, intensity in 0.1f64..3.0) {
        let a = generate_synthetic(n, taxis, seed, intensity).unwrap();
        let b = generate_synthetic(n, taxis, seed, intensity).unwrap();
        a.validate().unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
        prop_assert_eq!(a, b);
    }
}
