use serde_json::Value;
use weakid_demo::{coarse_grain_ou_json, discover_ks_json, estimate_ode_json};

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn noiseless_ks_returns_the_three_terms() {
    let v = parse(discover_ks_json(0.0, 3).unwrap());
    assert_eq!(v["library_size"], 43);
    let terms = v["terms"].as_array().unwrap();
    let labels: Vec<&str> = terms.iter().map(|t| t[0].as_str().unwrap()).collect();
    assert_eq!(labels, ["d/dx(u^2)", "d^2/dx^2(u^1)", "d^4/dx^4(u^1)"]);
    let f = &v["field"];
    assert_eq!(f["values"].as_array().unwrap().len() as u64, f["nx"].as_u64().unwrap() * f["nt"].as_u64().unwrap());
    assert_eq!(v["loss_curve"].as_array().unwrap().len(), 40);
}

#[test]
fn lorenz_estimates_come_with_errors() {
    let v = parse(estimate_ode_json("lorenz", 0.05, 1).unwrap());
    let methods = v["methods"].as_array().unwrap();
    let names: Vec<&str> = methods.iter().map(|m| m["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["wendy", "weak-ols", "ee-ols"]);
    let err = |i: usize| methods[i]["rms_rel_error"].as_f64().unwrap();
    assert!(err(0) < 0.05, "{}", err(0));
    assert!(err(0) < err(2));
    assert_eq!(v["labels"].as_array().unwrap().len(), v["truth"].as_array().unwrap().len());
    assert_eq!(v["noisy"].as_array().unwrap().len(), 3);
}

#[test]
fn unknown_model_is_an_error() {
    let e = estimate_ode_json("van-der-pol", 0.1, 0).unwrap_err();
    assert!(e.contains("van-der-pol"));
}

#[test]
fn small_ou_ensemble_gives_overlay_snapshots() {
    let v = parse(coarse_grain_ou_json(20_000, 2).unwrap());
    let snaps = v["snapshots"].as_array().unwrap();
    assert_eq!(snaps.len(), 5);
    let nx = v["x"].as_array().unwrap().len();
    assert_eq!(snaps[0]["histogram"].as_array().unwrap().len(), nx);
    assert!(snaps.iter().all(|s| s["model"].as_array().is_some_and(|m| m.len() == nx)));
    assert_eq!(v["high_residual"], false);
}
