use aipw_lab::dgp::*;
use aipw_lab::model::{h_value, transform_value};
use proptest::prelude::*;

#[test]
fn spot_values() {
    assert_eq!(true_outcome_mean(&[0.0, 0.0, 0.0], 0), -27.0);
    assert_eq!(noise_sd(-27.0), 2.7);
    // treatment adds 8 + 4/(1 + expit(0)) = 8 + 8/3, and 5·max(cos 0, 0)
    let lift = true_outcome_mean(&[0.0, 0.0, 0.0], 1) - true_outcome_mean(&[0.0, 0.0, 0.0], 0);
    assert!((lift - (8.0 + 8.0 / 3.0 + 5.0)).abs() < 1e-12);
    assert_eq!(noise_sd(0.0), 1.0);
}

#[test]
fn only_first_three_covariates_matter() {
    let d = generate_dataset(&DgpConfig::new(6), 50, 1).unwrap();
    for i in 0..d.n() {
        let row = d.row(i);
        let mut moved = row.to_vec();
        moved[3..].iter_mut().for_each(|v| *v = -*v);
        assert_eq!(true_outcome_mean(row, 1), true_outcome_mean(&moved, 1));
    }
}

#[test]
fn generation_is_deterministic_and_chunked() {
    let cfg = DgpConfig::new(3);
    let a = generate_dataset(&cfg, 5000, 42).unwrap();
    let b = generate_dataset(&cfg, 5000, 42).unwrap();
    assert_eq!(a.y(), b.y());
    // a prefix within the first chunk is shared with a shorter draw
    let c = generate_dataset(&cfg, 100, 42).unwrap();
    assert_eq!(&a.y()[..100], c.y());
    assert_ne!(generate_dataset(&cfg, 100, 43).unwrap().y(), c.y());
    assert!(a.x().iter().all(|v| (-1.0..1.0).contains(v)));
    let share = a.arm_count(1) as f64 / 5000.0;
    assert!((share - 0.5).abs() < 0.03);
}

#[test]
fn invalid_configs() {
    assert!(DgpConfig::new(2).validate().is_err());
    assert!(DgpConfig { p: 3, pi1: 1.0 }.validate().is_err());
    assert!(generate_dataset(&DgpConfig::new(3), 0, 1).is_err());
    assert!(serde_json::from_str::<DgpConfig>(r#"{"p":3,"q":1}"#).is_err());
    assert!(compute_truth(&DgpConfig::new(3), 100, 1).is_err());
}

#[test]
fn truth_is_consistent() {
    let t = compute_truth(&DgpConfig::new(3), 50_000, 3).unwrap();
    assert!((t.ate - (t.psi1 - t.psi0)).abs() < 1e-9);
    assert!(t.sigma_star_sq > 0.0 && t.ate_se > 0.0);
    let u = compute_truth(&DgpConfig::new(3), 50_000, 4).unwrap();
    assert!((t.ate - u.ate).abs() < 4.0 * (t.ate_se.powi(2) + u.ate_se.powi(2)).sqrt());
    assert_eq!(t.to_table("s").len(), 1);
}

#[test]
fn h_moments() {
    // P H = 0 and P H² = (1−π)/π ‖Q − Qref‖² for independent A
    let pi = 0.5;
    let d = generate_dataset(&DgpConfig::new(3), 200_000, 9).unwrap();
    let (mut s, mut s2, mut norm) = (0.0, 0.0, 0.0);
    for i in 0..d.n() {
        let x = d.row(i);
        let diff = x[0] * x[1] + x[2].sin();
        let h = h_value(diff, 0.0, 1, d.a()[i], pi);
        s += h;
        s2 += h * h;
        norm += diff * diff;
    }
    let n = d.n() as f64;
    let (m, m2, nrm) = (s / n, s2 / n, norm / n);
    let se = ((m2 - m * m) / n).sqrt();
    assert!(m.abs() < 4.0 * se);
    assert!((m2 / ((1.0 - pi) / pi * nrm) - 1.0).abs() < 0.02);
}

proptest! {
    #[test]
    fn noise_sd_floor(q in -100.0f64..100.0) {
        let s = noise_sd(q);
        prop_assert!(s >= 1.0 && s >= q.abs() / 10.0);
    }

    #[test]
    fn transform_reduces_to_prediction_off_arm(q in -10.0f64..10.0, y in -10.0f64..10.0, pi in 0.05f64..0.95) {
        prop_assert_eq!(transform_value(q, 1, 0, y, pi), q);
        prop_assert!((transform_value(q, 1, 1, y, pi) - ((y - q) / pi + q)).abs() < 1e-12);
    }
}
