use adsim_web::Demo;
use serde_json::Value;

#[test]
fn demo_operations_round_trip() {
    let mut d = Demo::new(300, 42).unwrap();
    let schema: Value = serde_json::from_str(&d.schema()).unwrap();
    assert_eq!(schema["features"].as_array().unwrap().len(), 21);
    let no_med = schema["no_medication_index"].as_u64().unwrap() as usize;

    let a: Value = serde_json::from_str(&d.reset("impaired", 3).unwrap()).unwrap();
    let b: Value = serde_json::from_str(&d.reset("impaired", 3).unwrap()).unwrap();
    assert_eq!(a, b);

    let mut bits = vec![0u8; 17];
    bits[no_med] = 1;
    let r: Value = serde_json::from_str(&d.step(bits).unwrap()).unwrap();
    assert!(r["reward"].as_f64().unwrap().abs() <= 10.0);
    assert_eq!(d.memory_history().len(), 2);
    let r: Value = serde_json::from_str(&d.step(vec![0; 17]).unwrap()).unwrap();
    assert_eq!(r["reward"], -10.0);
    assert_eq!(r["terminated"], true);

    let s: Value = serde_json::from_str(&d.suggest("heuristic", 0, 16, 0).unwrap()).unwrap();
    let sum: f64 = s["attribution"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    let delta = s["score"].as_f64().unwrap() - s["baseline_score"].as_f64().unwrap();
    assert!((sum - delta).abs() < 1e-9);

    let c: Value = serde_json::from_str(&d.compare("all", 30, 7).unwrap()).unwrap();
    assert_eq!(c["policies"].as_array().unwrap().len(), 3);
    assert_eq!(c["pairwise"].as_array().unwrap().len(), 3);
}
