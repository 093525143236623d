use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use fmdp_core::agent::{online_learn, Agent, HyperParams};
use fmdp_core::env::{Action, EnvConfig, Environment};
use fmdp_core::market::{load_price_series, IndicatorConfig, MarketData};
use fmdp_core::qnet::{HeadActivation, NetDims};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn csv_walk(n: usize, seed: u64) -> String {
    let t0 = Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = 50.0;
    let mut s = String::from("timestamp,price\n");
    for i in 0..n {
        p = (p + rng.gen_range(-1.0..1.0f64)).max(1.0);
        s.push_str(&format!(
            "{},{p}\n",
            (t0 + Duration::days(i as i64)).to_rfc3339()
        ));
    }
    s
}

fn market(n: usize, seed: u64, window: usize) -> Arc<MarketData> {
    let series = load_price_series(csv_walk(n, seed).as_bytes()).unwrap();
    Arc::new(
        MarketData::from_series(
            &series,
            Duration::days(1),
            &IndicatorConfig::default(),
            window,
        )
        .unwrap(),
    )
}

fn feature_checksum(m: &MarketData) -> u64 {
    m.features()
        .rows()
        .iter()
        .flatten()
        .fold(0u64, |h, v| h.rotate_left(5) ^ v.to_bits())
}

#[test]
fn csv_to_first_decision() {
    let m = market(200, 1, 30);
    assert_eq!(m.len(), 200);
    assert_eq!(m.warmup(), 26);
    let mut env = Environment::new(m, EnvConfig::default()).unwrap();
    let s = env.reset();
    assert_eq!(s.t, 55);
    assert_eq!(s.market.rows().len(), 30);
    assert_eq!(env.remaining_steps(), 144);
}

#[test]
fn learning_leaves_market_data_untouched() {
    let m = market(150, 2, 5);
    let before = feature_checksum(&m);
    let closes = m.closes().to_vec();
    let dims = NetDims {
        lstm1: 6,
        lstm2: 4,
        ..NetDims::default()
    };
    let hyper = HyperParams {
        memory_capacity: 20,
        ..HyperParams::default()
    };
    let mut env = Environment::new(m.clone(), EnvConfig::default()).unwrap();
    let mut agent = Agent::new(dims, HeadActivation::Linear, hyper, 5, 3).unwrap();
    let run = online_learn(&mut env, &mut agent, None).unwrap();
    assert!(run.replay_cycles > 0);
    assert_eq!(feature_checksum(&m), before);
    assert_eq!(m.closes(), closes.as_slice());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The agent's trades never move prices: observed windows at each bar
    /// are identical whatever actions were taken.
    #[test]
    fn zero_market_impact(seed in any::<u64>(), codes in prop::collection::vec(0u8..3, 1..60)) {
        let m = market(120, seed % 1000, 4);
        let mut acting = Environment::new(m.clone(), EnvConfig::default()).unwrap();
        let mut holding = Environment::new(m, EnvConfig::default()).unwrap();
        for code in codes {
            let a = acting.step(Action::try_from(code).unwrap());
            let h = holding.step(Action::Hold);
            prop_assert_eq!(a.next_state.t, h.next_state.t);
            prop_assert_eq!(&a.next_state.market, &h.next_state.market);
            if a.done {
                break;
            }
        }
    }

    #[test]
    fn positions_stay_within_bounds(seed in any::<u64>(), max in 1u32..8, codes in prop::collection::vec(0u8..3, 1..90)) {
        let cfg = EnvConfig { max_contracts: max, ..EnvConfig::default() };
        let mut env = Environment::new(market(120, seed % 1000, 1), cfg).unwrap();
        let mut closed = 0.0;
        let mut total = 0.0;
        let mut flat = 0.0;
        for code in codes {
            let before = env.state().position;
            let r = env.step(Action::try_from(code).unwrap());
            let p = r.next_state.position;
            prop_assert!(p.long * p.short == 0 && p.long <= max && p.short <= max);
            total += r.immediate_reward;
            if p.long == 0 && p.short == 0 {
                flat += r.immediate_reward;
            }
            if let Some(t) = &r.closed_trade {
                prop_assert_eq!(t.contracts, before.contracts());
                closed += t.long_term_pnl;
            }
            if r.done {
                break;
            }
        }
        let open = env.open_trade().map_or(0.0, |t| t.long_term_pnl);
        prop_assert!((closed + open + flat - total).abs() < 1e-9);
    }
}
