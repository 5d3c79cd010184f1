use serde_json::Value;

fn call(f: fn(&str) -> Result<String, String>, input: &str) -> Value {
    serde_json::from_str(&f(input).unwrap()).unwrap()
}

#[test]
fn default_sizing_matches_the_time_ratio() {
    let out = call(dhnsim_web::scale_json, "");
    assert!((out["lab_hours_for_48h"].as_f64().unwrap() - 19.70).abs() < 0.01);
    assert_eq!(out["feasible"], Value::Bool(true));
    assert!(!out["rows"].as_array().unwrap().is_empty());
}

#[test]
fn small_peltier_is_reported() {
    let out = call(dhnsim_web::scale_json, r#"{"peltier_max_power": 0.5}"#);
    assert_eq!(out["feasible"], Value::Bool(false));
    assert!(out["violations"][0].as_str().unwrap().contains("Peltier"));
}

#[test]
fn delay_tracks_the_residence_time() {
    let out = call(dhnsim_web::delay_json, "{}");
    let d = out["delay_seconds"].as_f64().unwrap();
    let r = out["residence_seconds"].as_f64().unwrap();
    assert!((d - r).abs() < 0.1 * r, "{d} vs {r}");
    // Half the flow roughly doubles the transit time.
    let slow = call(dhnsim_web::delay_json, r#"{"flow_fraction": 0.5}"#);
    let d2 = slow["delay_seconds"].as_f64().unwrap();
    assert!(d2 > 1.6 * d, "{d2} vs {d}");
}

#[test]
fn short_simulation_returns_thinned_series() {
    let out = call(dhnsim_web::simulate_json, r#"{"full_hours": 6}"#);
    let n = out["t_hours"].as_array().unwrap().len();
    assert!(n > 10 && n <= 600);
    for s in out["series"].as_array().unwrap() {
        assert_eq!(s["values"].as_array().unwrap().len(), n);
    }
}

#[test]
fn bad_input_is_an_error() {
    assert!(dhnsim_web::simulate_json(r#"{"full_hours": 0}"#).is_err());
    assert!(dhnsim_web::delay_json(r#"{"period": 10}"#).is_err());
    assert!(dhnsim_web::scale_json("not json").is_err());
}
