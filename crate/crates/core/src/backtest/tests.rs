use proptest::prelude::*;

use super::*;
use crate::env::{Action, Direction};

fn trade(pnl: f64) -> TradeRecord {
    TradeRecord {
        direction: Direction::Long,
        open_t: 3,
        close_t: 7,
        contracts: 2,
        long_term_pnl: pnl,
        long_term_log_return: 0.0,
    }
}

/// Every (peak, trough) pair with the peak not after the trough, over the
/// level sequence including the starting base; a fall is capped at the
/// whole peak level.
fn mdd_all_pairs(curve: &[f64], base: f64) -> f64 {
    let levels: Vec<f64> = std::iter::once(base)
        .chain(curve.iter().map(|c| base + c))
        .collect();
    let mut worst = 0.0f64;
    for i in 0..levels.len() {
        if levels[i] <= 0.0 {
            continue;
        }
        for j in i..levels.len() {
            worst = worst.max(((levels[i] - levels[j]) / levels[i]).min(1.0));
        }
    }
    -100.0 * worst
}

#[test]
fn equity_of_worked_example() {
    assert!(equity_curve(&[]).is_empty());
    assert_eq!(equity_curve(&[50.0, 30.0, 5.0]), vec![50.0, 80.0, 85.0]);
}

#[test]
fn sharpe_fixtures() {
    let s = sharpe_annualized(&equity_curve(&[1.0, 2.0, 3.0, 4.0]), 252).unwrap();
    let expected = 2.5 / (5.0f64 / 3.0).sqrt() * 252f64.sqrt();
    assert!((s - expected).abs() < 1e-9);
    assert_eq!(format!("{s:.2}"), "30.74");

    let alternating = equity_curve(&[1.0, -1.0, 1.0, -1.0]);
    assert_eq!(sharpe_annualized(&alternating, 252).unwrap(), 0.0);
    assert!(matches!(
        sharpe_annualized(&equity_curve(&[2.0, 2.0, 2.0]), 252),
        Err(BacktestError::UndefinedSharpe(_))
    ));
    assert!(sharpe_annualized(&[1.0], 252).is_err());
}

#[test]
fn win_ratio_fixtures() {
    let t = |v: &[f64]| v.iter().map(|&p| trade(p)).collect::<Vec<_>>();
    assert_eq!(win_ratio(&t(&[80.0, -20.0, 5.0, 0.0])).unwrap(), 50.0);
    assert_eq!(win_ratio(&t(&[1.0, 2.0])).unwrap(), 100.0);
    assert_eq!(win_ratio(&t(&[-3.0])).unwrap(), 0.0);
    assert!(matches!(win_ratio(&[]), Err(BacktestError::NoTrades)));
}

#[test]
fn drawdown_fixtures() {
    assert_eq!(max_drawdown(&[0.0, -20.0, -10.0], 100.0).unwrap(), -20.0);
    assert_eq!(max_drawdown(&[1.0, 1.0, 4.0], 100.0).unwrap(), 0.0);
    // peak 50 on base 100, trough 20: fall of 30 from 150
    assert!((max_drawdown(&[50.0, 20.0, 60.0], 100.0).unwrap() + 20.0).abs() < 1e-12);
    assert!(max_drawdown(&[1.0], 0.0).is_err());
}

#[test]
fn report_and_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rewards = [50.0, 30.0, 5.0, -10.0];
    let trades = vec![trade(80.0), trade(-20.0)];
    let meta = ReportMeta {
        instrument: "CL".into(),
        period_start: "2018-11-01".into(),
        period_end: "2019-02-28".into(),
        seed: 7,
    };
    let report =
        BacktestReport::compute(meta, &rewards, &trades, &BacktestConfig::default()).unwrap();
    assert_eq!(report.total_pnl, 75.0);
    assert_eq!(report.win_ratio_pct, Some(50.0));
    let marks = [(1, 10.0), (2, 11.0), (3, 12.0), (4, 9.5)];
    let plot = plot_rows(&marks, &rewards);
    emit_report(dir.path(), &report, &trades, &plot).unwrap();

    assert_eq!(read_report(&dir.path().join(REPORT_FILE)).unwrap(), report);
    let back = read_trades(&dir.path().join(TRADES_FILE)).unwrap();
    assert_eq!(back.len(), report.n_trades);
    assert_eq!(back, trades);

    let text = std::fs::read_to_string(dir.path().join(PLOTDATA_FILE)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,price,equity"));
    let equity: Vec<f64> = lines
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(equity, equity_curve(&rewards));

    let head = std::fs::read_to_string(dir.path().join(TRADES_FILE)).unwrap();
    assert!(head.starts_with("direction,open_t,close_t,contracts,long_term_pnl\nlong,3,7,2,80.0\n"));
}

#[test]
fn empty_trade_file_keeps_header() {
    let dir = tempfile::tempdir().unwrap();
    let meta = ReportMeta {
        instrument: "X".into(),
        period_start: String::new(),
        period_end: String::new(),
        seed: 0,
    };
    let report =
        BacktestReport::compute(meta, &[1.0, 1.0], &[], &BacktestConfig::default()).unwrap();
    assert_eq!(report.sharpe, None);
    assert_eq!(report.win_ratio_pct, None);
    emit_report(dir.path(), &report, &[], &[]).unwrap();
    assert!(read_trades(&dir.path().join(TRADES_FILE))
        .unwrap()
        .is_empty());
    assert_eq!(read_report(&dir.path().join(REPORT_FILE)).unwrap(), report);
}

#[test]
fn step_log_round_trip() {
    let steps = vec![
        StepLogEntry {
            t: 26,
            action: Action::Buy,
            long: 1,
            short: 0,
            immediate_reward: 50.0,
            accumulated_episode_pnl: 50.0,
            closed_trade: None,
        },
        StepLogEntry {
            t: 27,
            action: Action::Sell,
            long: 0,
            short: 1,
            immediate_reward: 0.1 + 0.2,
            accumulated_episode_pnl: 0.3,
            closed_trade: Some(trade(80.0)),
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(STEPS_FILE);
    write_step_log(&steps, File::create(&path).unwrap()).unwrap();
    assert_eq!(read_step_log(&path).unwrap(), steps);
}

proptest! {
    #[test]
    fn prefix_sum_oracle(rewards in prop::collection::vec(-100.0f64..100.0, 0..1000)) {
        let curve = equity_curve(&rewards);
        prop_assert_eq!(curve.len(), rewards.len());
        let mut acc = 0.0;
        for (c, r) in curve.iter().zip(&rewards) {
            acc += r;
            prop_assert_eq!(*c, acc);
        }
    }

    #[test]
    fn streaming_drawdown_matches_all_pairs(
        rewards in prop::collection::vec(-50.0f64..50.0, 1..300),
        base in 50.0f64..5000.0,
    ) {
        let curve = equity_curve(&rewards);
        let fast = max_drawdown(&curve, base).unwrap();
        let slow = mdd_all_pairs(&curve, base);
        prop_assert!((fast - slow).abs() < 1e-9, "{} vs {}", fast, slow);
        prop_assert!(fast <= 0.0);
        let monotone = curve.windows(2).all(|w| w[1] >= w[0]) && curve[0] >= 0.0;
        prop_assert_eq!(fast == 0.0, monotone);
    }

    #[test]
    fn sharpe_is_scale_equivariant(
        rewards in prop::collection::vec(-10.0f64..10.0, 2..200),
        scale in 0.01f64..100.0,
    ) {
        let base = sharpe_annualized(&equity_curve(&rewards), 252);
        let scaled: Vec<f64> = rewards.iter().map(|r| r * scale).collect();
        if let (Ok(a), Ok(b)) = (base, sharpe_annualized(&equity_curve(&scaled), 252)) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn win_ratio_is_permutation_invariant(
        pnls in prop::collection::vec(-5i32..5, 1..50),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let trades: Vec<_> = pnls.iter().map(|&p| trade(f64::from(p))).collect();
        let mut shuffled = trades.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let w = win_ratio(&trades).unwrap();
        prop_assert_eq!(w, win_ratio(&shuffled).unwrap());
        prop_assert!((0.0..=100.0).contains(&w));
    }
}
