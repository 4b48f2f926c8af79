use aipw_lab::bounds::*;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    inputs: BoundInputs,
    cv_total: f64,
    noncv_total: f64,
}

fn golden() -> Vec<Golden> {
    serde_json::from_str(include_str!("golden/bounds.json")).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn totals_match_independent_evaluator() {
    let cases = golden();
    assert_eq!(cases.len(), 21);
    assert_eq!(cases[0].inputs, BoundInputs::reference());
    for (i, g) in cases.iter().enumerate() {
        let cv = cv_bound_terms(&g.inputs).unwrap();
        let full = noncv_bound_terms(&g.inputs).unwrap();
        assert!(rel(cv.total, g.cv_total) <= 1e-10, "case {i}: cv {} vs {}", cv.total, g.cv_total);
        assert!(rel(full.total, g.noncv_total) <= 1e-10, "case {i}: noncv {} vs {}", full.total, g.noncv_total);
    }
}

#[test]
fn report_total_is_sum_of_terms() {
    for g in golden() {
        for rep in [cv_bound_terms(&g.inputs).unwrap(), noncv_bound_terms(&g.inputs).unwrap()] {
            let sum: f64 = rep.terms.iter().map(|t| t.value).sum();
            assert!((rep.total - sum).abs() <= 1e-12 * sum.abs().max(1.0));
            assert!(rep.terms.iter().all(|t| t.value >= 0.0), "{:?}", rep.terms);
        }
    }
}

fn s_inputs() -> BoundInputs {
    BoundInputs {
        n: 100,
        k: 2,
        fold_size: Some(50),
        tau_pi: 0.5,
        eqd2: 0.04,
        eqd1: 0.2,
        qdiff: 0.1,
        sigma_hash: 1.0,
        sigma_star: 1.0,
        ..BoundInputs::reference()
    }
}

#[test]
fn fold_variance_reference_values() {
    let inp = s_inputs();
    assert!((s_hat_k(&inp) - 0.0544).abs() <= 1e-12);
    assert!((s_hat_prime_k(&inp) - 0.0344).abs() <= 1e-12);
    let zero = BoundInputs { eqd2: 0.0, eqd1: 0.0, qdiff: 0.7, ..inp };
    assert_eq!(r_hat_k(&zero), 0.0);
    assert!((s_hat_prime_k(&zero) - 0.5 / 50.0).abs() <= 1e-15);
}

#[test]
fn plug_in_constants() {
    let inp = BoundInputs { m: 1.0, tau_pi: 0.5, ..BoundInputs::reference() };
    let rep = noncv_bound_terms(&inp).unwrap();
    assert_eq!(rep.term("f_h"), Some(2.0));
    // 8 M² (1 − τ)/τ² at M = 1, τ = 1/2
    assert_eq!(rep.term("f_t2"), Some(16.0));
}

#[test]
fn entropy_bounds() {
    assert!((entropy_integral_bound(0.5, 5, ClassKind::VcHull, 1.0).unwrap() - 0.5f64.powf(0.2)).abs() < 1e-4);
    let e = (-1.0f64).exp();
    assert!((entropy_integral_bound(e, 5, ClassKind::Vc, 1.0).unwrap() - 0.36788).abs() < 1e-4);
    assert!(entropy_integral_bound(0.5, 5, ClassKind::Vc, 1.0).is_err());
    assert!(entropy_integral_bound(0.0, 5, ClassKind::VcHull, 1.0).is_err());
}

#[test]
fn k_rate_grid() {
    assert_eq!(k_rate_factor(2, 1.0, false, None).unwrap(), 2.0);
    assert_eq!(k_rate_factor(2, 1.0, true, None).unwrap(), 2.0);
    let k20 = 20.0 * 19f64.powf(-1.0 / 3.0);
    assert!((k_rate_factor(20, 1.0, false, None).unwrap() - k20).abs() < 1e-12);
    assert!(k_rate_factor(1, 1.0, false, None).is_err());
    let with_n = k_rate_factor(4, 0.5, false, Some(1000)).unwrap();
    assert!((with_n - k_rate_factor(4, 0.5, false, None).unwrap() * 1000f64.powf(-0.5 / 3.0)).abs() < 1e-12);
    assert_eq!(krate_table().unwrap().len(), 140);
}

#[test]
fn corollary_reference_rates() {
    let inp = BoundInputs { eqd2: 1e-4, nu: 5, ..BoundInputs::reference() };
    let vc = corollary_rates(ClassKind::Vc, &inp, 10_000).unwrap();
    assert!((vc.term("delta_vc").unwrap() - 1e-4f64.cbrt()).abs() < 1e-4);
    let hull = corollary_rates(ClassKind::VcHull, &inp, 10_000).unwrap();
    assert!((hull.term("delta_vc_hull1").unwrap() - 1.0324).abs() < 1e-3);
}

#[test]
fn subgaussian_guard_errors() {
    let inp = BoundInputs { subgaussian: true, eqd2: 0.25, eqd1: 0.5, delta: 0.05, ..BoundInputs::reference() };
    assert!(matches!(noncv_bound_terms(&inp), Err(aipw_lab::Error::SubgaussianGuard)));
}

#[test]
fn toggles_change_only_their_terms() {
    let base = BoundInputs::reference();
    let a = cv_bound_terms(&base).unwrap();
    let b = cv_bound_terms(&BoundInputs { condition7: true, ..base.clone() }).unwrap();
    for (x, y) in a.terms.iter().zip(&b.terms) {
        if x.name.starts_with("C_s_hat") {
            assert!(y.value <= x.value);
        } else {
            assert_eq!(x.value, y.value, "{}", x.name);
        }
    }
    let c = noncv_bound_terms(&base).unwrap();
    let d = noncv_bound_terms(&BoundInputs { condition9: true, ..base }).unwrap();
    for (x, y) in c.terms.iter().zip(&d.terms) {
        if x.name == "C_var_cross" {
            assert_eq!(y.value, 0.0);
        } else {
            assert_eq!(x.value, y.value, "{}", x.name);
        }
    }
}

#[test]
fn bounds_config_json() {
    let cfg: BoundsConfig = serde_json::from_str(
        r#"{"bounds":"both","inputs":[{"n":500,"k":5,"tau_pi":0.5,"m":1,"alpha":0.05,"psi_star":0.5,
            "sigma_hash":1,"sigma_dagger":1,"sigma_star":1,"rho_hash":1,"varsigma_hash":1,"varrho_hash":1,
            "m_bar":1,"m_underbar":1,"sigma_bar_sq":1,"rho_bar":1,"q":1,"delta":0.3,"delta_prime":0.3,
            "eqd2":0.01,"eqd1":0.05,"qdiff":0.1,"nu":4}]}"#,
    )
    .unwrap();
    let reports = evaluate_config(&cfg).unwrap();
    assert_eq!(reports.len(), 2);
    let t = bounds_table(&reports);
    assert_eq!(t.len(), 2);
}

proptest! {
    #[test]
    fn totals_nondecreasing_in_eqd2(e in 0.0f64..0.5, bump in 0.0f64..0.5, frac in 0.0f64..1.0) {
        let lo = BoundInputs { eqd2: e, eqd1: e.sqrt() * frac, ..BoundInputs::reference() };
        let hi = BoundInputs { eqd2: e + bump, ..lo.clone() };
        prop_assert!(cv_bound_terms(&hi).unwrap().total >= cv_bound_terms(&lo).unwrap().total);
        prop_assert!(noncv_bound_terms(&hi).unwrap().total >= noncv_bound_terms(&lo).unwrap().total);
    }

    #[test]
    fn dropped_cross_term_orders_s(e in 0.0f64..1.0, frac in 0.0f64..1.0, qd in 0.0f64..3.0, tau in 0.05f64..0.5) {
        let inp = BoundInputs { eqd2: e, eqd1: e.sqrt() * frac, qdiff: qd, tau_pi: tau, ..BoundInputs::reference() };
        prop_assert!(s_hat_prime_k(&inp) <= s_hat_k(&inp));
    }

    #[test]
    fn k_rate_increases_in_k(ri in 0usize..7, sub in any::<bool>()) {
        let r = 0.4 + 0.1 * ri as f64;
        let vals: Vec<f64> = (1..=10).map(|h| k_rate_factor(2 * h, r, sub, None).unwrap()).collect();
        prop_assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn entropy_monotone(a in 0.001f64..0.36, b in 0.001f64..0.36, nu in 2u32..9) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        for kind in [ClassKind::Vc, ClassKind::VcHull] {
            prop_assert!(entropy_integral_bound(lo, nu, kind, 1.0).unwrap() <= entropy_integral_bound(hi, nu, kind, 1.0).unwrap());
        }
    }
}
