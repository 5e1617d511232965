use bayesmm::textual::MapForm;
use bayesmm_wasm_demo::{episode_summary, fusion_field, shrinkage_curve};

#[test]
fn field_has_one_triple_per_cell() {
    let field = fusion_field(&[-1.0, 0.0, 1.0, 0.0], &[-1.0, 0.5, 1.0, -0.5], 0.5, 0.8, 2.0, 9).unwrap();
    assert_eq!(field.len(), 9 * 9 * 3);
    // left edge of the middle row belongs to class 0, right edge to class 1
    let mid = 4 * 9 * 3;
    assert_eq!(field[mid], 0.0);
    assert_eq!(field[mid + 8 * 3], 1.0);
    for cell in field.chunks(3) {
        assert!((0.5..=1.0).contains(&cell[1]));
        assert!((0.0..=1.0).contains(&cell[2]));
    }
}

#[test]
fn field_rejects_ragged_means() {
    assert!(fusion_field(&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0], 1.0, 1.0, 1.0, 4).is_err());
    assert!(fusion_field(&[0.0, 0.0], &[0.0, 0.0, 1.0, 1.0], 1.0, 1.0, 1.0, 4).is_err());
}

#[test]
fn shrinkage_approaches_the_mean() {
    let c = shrinkage_curve(1.0, 0.5, 50, MapForm::Canonical).unwrap();
    assert_eq!(c.len(), 50);
    assert!(c.windows(2).all(|w| w[1] > w[0]));
    assert!((c[0] - 1.0 / 1.5).abs() < 1e-12);
    assert!(c[49] < 1.0 && c[49] > 0.99);
    let compact = shrinkage_curve(1.0, 0.5, 3, MapForm::PaperMain).unwrap();
    assert!((compact[2] - c[2] / 3.0).abs() < 1e-12);
}

#[test]
fn episode_summary_is_json() {
    let s = episode_summary(1, 0.4, 300, 100).unwrap();
    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    assert!(v["bayesmm"].as_f64().unwrap() > 0.5);
    assert_eq!(v["trajectory"].as_array().unwrap().len(), 4);
}
