use critbatch_wasm::demo::{ladder, sfo_curve, simulate};

#[test]
fn sfo_curve_minimum_sits_at_critical_batch() {
    // C1 = 2 * 2 / (0.5 * 1.5) and C2 = 0.5 / 1.5 with L = 1, eta = 0.5.
    let out = sfo_curve(1.0, 1.0, 2.0, 0.5, 0.1, 4096).unwrap();
    let c2 = 0.5 / 1.5;
    let b_star = out[0];
    assert!((b_star - 2.0 * c2 / 0.01).abs() < 1e-9);
    let count = out[1] as usize;
    assert_eq!(out.len(), 2 + 2 * count);
    let pts: Vec<(f64, f64)> = out[2..].chunks(2).map(|p| (p[0], p[1])).collect();
    assert!(pts[0].0 > c2 / 0.01);
    let (b_min, _) = pts.iter().copied().fold((0.0, f64::INFINITY), |a, p| if p.1 < a.1 { p } else { a });
    assert!((b_min - b_star).abs() <= 0.05 * b_star, "{b_min} vs {b_star}");
    assert!(pts.windows(2).all(|w| w[1].0 > w[0].0));
}

#[test]
fn sfo_curve_rejects_bad_eps() {
    assert!(sfo_curve(1.0, 1.0, 2.0, 0.5, 0.0, 64).is_err());
    assert!(sfo_curve(1.0, 1.0, 2.0, 3.0, 0.1, 64).is_err());
}

#[test]
fn exponential_ladder_matches_closed_form() {
    let out = ladder(true, 16, 2.0, 0.1, 1.4, 1.0, 4, 1024).unwrap();
    assert_eq!(out.len(), 12);
    for m in 0..4 {
        let r = &out[3 * m..3 * m + 3];
        assert_eq!(r[0], 16.0 * 2f64.powi(m as i32));
        assert!((r[1] - 0.1 * 1.4f64.powi(m as i32)).abs() < 1e-12);
        assert!((r[2] - 1.0 / 2f64.powi(m as i32).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn linear_ladder_and_coupling_guard() {
    let out = ladder(false, 8, 8.0, 0.1, 0.0, 1.0, 3, 1024).unwrap();
    assert_eq!(out.iter().step_by(3).copied().collect::<Vec<_>>(), vec![8.0, 16.0, 24.0]);
    assert!(ladder(true, 16, 2.0, 0.1, 2f64.sqrt(), 1.0, 4, 1024).is_err());
}

#[test]
fn simulation_reaches_last_threshold() {
    let out = simulate(false, 256, 4, 0.5, 3, true, 8, 2.0, 0.05, 1.2, 2.0, 3, 5000).unwrap();
    let hit = out[0];
    assert!(hit > 0.0);
    let recs: Vec<&[f64]> = out[1..].chunks(4).collect();
    assert_eq!(recs[0][0], 0.0);
    let last = recs.last().unwrap();
    assert_eq!(last[0], hit);
    assert!(last[1] <= 2.0 / 2.0);
    assert!(recs.windows(2).all(|w| w[1][3] >= w[0][3] && w[1][2] >= w[0][2]));
    let again = simulate(false, 256, 4, 0.5, 3, true, 8, 2.0, 0.05, 1.2, 2.0, 3, 5000).unwrap();
    assert_eq!(out, again);
}

#[test]
fn page_defaults_are_valid() {
    sfo_curve(1.0, 1.0, 2.0, 0.5, 0.1, 1024).unwrap();
    ladder(true, 16, 2.0, 0.1, 1.4, 0.15, 5, 1024).unwrap();
    for logistic in [false, true] {
        let out = simulate(logistic, 512, 8, 1.0, 0, true, 16, 2.0, 0.1, 1.4, 0.15, 5, 5000).unwrap();
        assert!(out[0] > 0.0, "logistic={logistic}");
    }
}
