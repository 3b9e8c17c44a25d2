use finitekey::bounds::ProtocolParams;
use finitekey::rate::{
    asymptotic_rate, basis_probs, expected_rate, expected_signals, expected_signals_mc, ChannelModel,
};

fn params(n: u64, k: u64, q_tol: f64) -> ProtocolParams {
    ProtocolParams { n, k, q: 1.0, q_tol, eps_cor: 1e-12, eps_sec: 1e-10, leak_ec: 0.0 }
}

#[test]
fn relative_rate_in_unit_interval() {
    let mut positive = 0;
    for &n in &[10_000u64, 100_000, 1_000_000, 10_000_000] {
        for &k_frac in &[0.05, 0.2, 0.5, 1.0] {
            for &qber in &[0.005, 0.01, 0.025, 0.05, 0.08] {
                for &margin in &[0.0, 0.005, 0.01, 0.02] {
                    let k = ((n as f64) * k_frac) as u64;
                    let r =
                        expected_rate(&params(n, k, qber + margin), &ChannelModel::depolarizing(qber), 1.1)
                            .unwrap();
                    let rel = r.rate / asymptotic_rate(qber);
                    assert!((0.0..1.0).contains(&rel), "n={n} k={k} Q={qber}: {rel}");
                    positive += usize::from(rel > 0.0);
                }
            }
        }
    }
    assert!(positive > 100);
}

#[test]
fn rate_assembles_from_parts() {
    let r = expected_rate(&params(1_000_000, 40_000, 0.012), &ChannelModel::depolarizing(0.01), 1.1).unwrap();
    assert!(r.ell > 0);
    assert!((r.rate - (1.0 - r.eps_rob) * r.ell as f64 / r.m_expected).abs() < 1e-15);
    assert!((r.m_expected - (1000.0 + 200.0_f64).powi(2)).abs() < 1e-6);
    assert!((r.p_x + r.p_z - 1.0).abs() < 1e-15);
}

#[test]
fn basis_choice_balances_sifted_sizes() {
    for &(n, k) in &[(10_000u64, 1_000u64), (1_000_000, 20_000), (5, 5)] {
        let (p_x, p_z) = basis_probs(n, k);
        // expected sifted sizes proportional to n and k
        let ratio = (p_x * p_x / (p_z * p_z)) / (n as f64 / k as f64);
        assert!((ratio - 1.0).abs() < 1e-12);
    }
}

#[test]
fn monte_carlo_signals_not_below_closed_form() {
    for (i, &(n, k, det)) in
        [(10_000u64, 1_000u64, 1.0), (20_000, 5_000, 0.5), (3_000, 3_000, 0.2)].iter().enumerate()
    {
        let want = expected_signals(n, k, det);
        let est = expected_signals_mc(n, k, det, 500, 40 + i as u64).unwrap();
        assert!(est.mean >= want - 3.0 * est.std_err, "n={n} k={k}: {} vs {want}", est.mean);
        assert!((est.mean - want).abs() / want < 0.03);
    }
}

#[test]
fn monte_carlo_signals_reproducible() {
    let a = expected_signals_mc(5_000, 500, 1.0, 300, 3).unwrap();
    let b = expected_signals_mc(5_000, 500, 1.0, 300, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rejects_bad_channels() {
    let p = params(10_000, 1_000, 0.02);
    assert!(expected_rate(&p, &ChannelModel::depolarizing(0.6), 1.1).is_err());
    assert!(expected_rate(&p, &ChannelModel { qber: 0.01, detection_prob: 0.0 }, 1.1).is_err());
    assert!(expected_rate(&p, &ChannelModel::depolarizing(0.01), 0.9).is_err());
}
