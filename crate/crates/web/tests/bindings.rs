use dmmgr_web::{element_weights, element_weights_js, lr_curve, spatial_graph};

#[test]
fn graph_from_boxes() {
    let v = spatial_graph("[[0,0,2,2],[4,0,6,2],[20,0,22,2]]", 1).unwrap();
    assert_eq!(v["neighbors"], serde_json::json!([[1], [0], [1]]));
    let r = &v["edges"][0]["r"];
    assert_eq!(r[0].as_f64(), Some(-2.0));
    assert_eq!(r[4].as_f64(), Some(1.0));
    assert!(spatial_graph("[[0,0,-1,2]]", 5).is_err());
    assert!(spatial_graph("not json", 5).is_err());
}

#[test]
fn schedule_curve() {
    let v = lr_curve("lr = 0.01\nepochs = 4\nwarmup_epochs = 2\ndecay_start = 3\n").unwrap();
    let lr: Vec<f64> = serde_json::from_value(v["lr"].clone()).unwrap();
    assert_eq!(lr.len(), 4);
    assert!((lr[0] - 0.001).abs() < 1e-15 && lr[2] == 0.01 && lr[3] == 0.005);
    assert!(lr_curve("bogus = 1").is_err());
}

#[test]
fn inverted_weights_in_range() {
    let v = element_weights("[[0,0,0],[10,0,0]]").unwrap();
    let w: Vec<[f64; 3]> = serde_json::from_value(v["weights"].clone()).unwrap();
    for row in &w {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&x| (0.0..=0.5).contains(&x)));
    }
    assert!(w[1][0] < 1e-4 && (w[1][1] - 0.5).abs() < 1e-4);
    assert!(element_weights_js("[1]").contains("error"));
}
