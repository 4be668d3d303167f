use super::*;
use crate::market::{logit_demand, CournotParams, MarketParams};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

struct Period {
    prices: Vec<f64>,
    quantities: Vec<f64>,
    profits: Vec<f64>,
}

fn period(prices: &[f64]) -> Period {
    let n = prices.len();
    let params = MarketParams::new(0.0, vec![2.0; n], vec![1.0; n], 0.25).unwrap();
    let quantities = logit_demand(prices, &params).unwrap().shares;
    let profits = prices
        .iter()
        .zip(&quantities)
        .map(|(p, q)| (p - 1.0) * q)
        .collect();
    Period {
        prices: prices.to_vec(),
        quantities,
        profits,
    }
}

fn run(state: &mut MechanismState, script: &[Vec<f64>], first_period: usize) {
    for (k, prices) in script.iter().enumerate() {
        let p = period(prices);
        state
            .observe_period(&p.prices, &p.quantities, &p.profits, first_period + k)
            .unwrap();
    }
}

fn simplified(tau: usize) -> MechanismState {
    MechanismState::new(MechanismConfig::simplified_ai(tau, vec![1.0, 1.0]), 2).unwrap()
}

#[test]
fn constant_prices_never_trigger() {
    let mut state = simplified(1);
    run(&mut state, &vec![vec![1.7, 1.7]; 20], 1);
    assert_eq!(state.phase(), Phase::Baseline);
    assert_eq!(state.tau1(), None);
    assert!(state.ledger().is_empty());
}

#[test]
fn single_drop_stays_in_first_stage() {
    let mut state = simplified(1);
    let mut script = vec![vec![1.7, 1.7], vec![1.7, 1.7], vec![1.6, 1.7]];
    script.extend(vec![vec![1.6, 1.7]; 10]);
    run(&mut state, &script, 1);
    assert_eq!(state.phase(), Phase::FirstDropped);
    assert_eq!(state.tau1(), Some(3));
    assert_eq!(state.first_droppers(), vec![0]);
    assert!(state.ledger().is_empty());
}

#[test]
fn four_period_two_stage_trace() {
    // tau = 1, baseline at 2, seller 0 cuts at 3 (profit rises), seller 1 cuts at 4.
    let mut state = simplified(1);
    run(
        &mut state,
        &[
            vec![1.7, 1.7],
            vec![1.7, 1.7],
            vec![1.6, 1.7],
            vec![1.6, 1.5],
        ],
        1,
    );
    assert_eq!(state.phase(), Phase::SecondDropped);
    assert_eq!(state.tau1(), Some(3));
    assert_eq!(state.tau2(), Some(4));
    assert_eq!(state.first_droppers(), vec![0]);
    assert_eq!(state.punishers(), vec![1]);
    assert!(state.is_eligible(0));
    assert!(!state.is_eligible(1));

    // Hand computation of the period-4 top-up.
    let p3 = period(&[1.6, 1.7]);
    let p4 = period(&[1.6, 1.5]);
    let target = p3.quantities[0] * (1.6 - 1.0);
    let expected = target / p4.quantities[0] - (1.6 - 1.0);
    assert!(expected > 0.0);
    assert_abs_diff_eq!(state.last_topups()[0], expected, epsilon = 1e-15);
    assert_eq!(state.ledger().entries.len(), 1);
}

#[test]
fn unprofitable_cut_is_not_a_first_drop_under_the_simplified_rule() {
    // Cutting to marginal cost lowers profit relative to the activation period.
    let mut state = simplified(1);
    run(
        &mut state,
        &[vec![1.7, 1.7], vec![1.7, 1.7], vec![1.0, 1.7]],
        1,
    );
    assert_eq!(state.phase(), Phase::Baseline);

    let mut full = MechanismState::new(MechanismConfig::platform_full(1), 2).unwrap();
    run(
        &mut full,
        &[vec![1.7, 1.7], vec![1.7, 1.7], vec![1.0, 1.7]],
        1,
    );
    assert_eq!(full.phase(), Phase::FirstDropped);
}

#[test]
fn dropper_joining_the_punishment_loses_protection() {
    let mut state = MechanismState::new(MechanismConfig::platform_full(1), 2).unwrap();
    run(
        &mut state,
        &[
            vec![1.7, 1.7],
            vec![1.7, 1.7],
            vec![1.6, 1.6],
            vec![1.5, 1.5],
        ],
        1,
    );
    assert_eq!(state.phase(), Phase::SecondDropped);
    assert_eq!(state.first_droppers(), vec![0, 1]);
    assert!(!state.is_eligible(0) && !state.is_eligible(1));
    assert!(state.ledger().is_empty());
}

#[test]
fn simplified_rule_requires_holding_the_drop_price() {
    let mut state = simplified(1);
    run(
        &mut state,
        &[
            vec![1.7, 1.7],
            vec![1.7, 1.7],
            vec![1.6, 1.7],
            vec![1.6, 1.5],
            vec![1.6, 1.5],
        ],
        1,
    );
    assert!(state.is_eligible(0));
    assert!(state.eligibility_check(0, 1.6, 0.3, 6));
    assert!(!state.eligibility_check(0, 1.65, 0.3, 6));
    run(&mut state, &[vec![1.65, 1.5], vec![1.6, 1.5]], 6);
    assert!(!state.is_eligible(0), "eligibility never comes back");
}

#[test]
fn band_membership_with_two_punishers() {
    // Seller 0 cuts at 3, sellers 1 and 2 punish at 4 and sit at (1.40, 1.47).
    let mut state = MechanismState::new(MechanismConfig::platform_full(1), 3).unwrap();
    run(
        &mut state,
        &[
            vec![1.7, 1.7, 1.7],
            vec![1.7, 1.7, 1.7],
            vec![1.6, 1.7, 1.7],
            vec![1.6, 1.40, 1.47],
        ],
        1,
    );
    assert_eq!(state.phase(), Phase::SecondDropped);
    assert!(state.is_eligible(0));
    let cap = state.lock(0).unwrap().quantity;
    assert!(state.eligibility_check(0, 1.43, cap * 0.9, 5));
    assert!(!state.eligibility_check(0, 1.50, cap * 0.9, 5));
    assert!(!state.eligibility_check(0, 1.43, cap * 1.1, 5));
}

#[test]
fn quantity_cap_violation_is_permanent() {
    let mut state = MechanismState::new(MechanismConfig::platform_full(1), 2).unwrap();
    let cap_period = period(&[1.6, 1.7]);
    let cap = cap_period.quantities[0];
    let feed = |state: &mut MechanismState, prices: [f64; 2], q0: f64, t: usize| {
        let mut p = period(&prices);
        p.quantities[0] = q0;
        state
            .observe_period(&p.prices, &p.quantities, &p.profits, t)
            .unwrap();
    };
    feed(&mut state, [1.7, 1.7], 0.4, 1);
    feed(&mut state, [1.7, 1.7], 0.4, 2);
    feed(&mut state, [1.6, 1.7], cap, 3);
    feed(&mut state, [1.6, 1.5], cap * 0.8, 4);
    assert!(state.is_eligible(0));
    feed(&mut state, [1.5, 1.5], cap * 1.01, 5);
    assert!(!state.is_eligible(0));
    feed(&mut state, [1.5, 1.5], cap * 0.5, 6);
    assert!(!state.is_eligible(0));
}

#[test]
fn topup_arithmetic() {
    let lock = Lock {
        price: 1.55,
        quantity: 0.4,
    };
    let simplified = compute_topup(&lock, 1.47, 0.45, Variant::SimplifiedAi, Some(1.0)).unwrap();
    assert_abs_diff_eq!(simplified, 0.22 / 0.45 - 0.47, epsilon = 1e-12);
    assert_abs_diff_eq!(simplified, 0.018889, epsilon = 1e-6);
    let full = compute_topup(&lock, 1.47, 0.40, Variant::PlatformFull, None).unwrap();
    assert_abs_diff_eq!(full, 0.08, epsilon = 1e-12);
    // already above target
    assert_eq!(
        compute_topup(&lock, 1.6, 0.5, Variant::SimplifiedAi, Some(1.0)).unwrap(),
        0.0
    );
    assert!(matches!(
        compute_topup(&lock, 1.47, 0.0, Variant::PlatformFull, None),
        Err(Error::DegenerateInput(_))
    ));
}

#[test]
fn out_of_order_periods_are_rejected() {
    let mut state = simplified(1);
    let p = period(&[1.7, 1.7]);
    state
        .observe_period(&p.prices, &p.quantities, &p.profits, 1)
        .unwrap();
    assert!(matches!(
        state.observe_period(&p.prices, &p.quantities, &p.profits, 3),
        Err(Error::Protocol(_))
    ));
    let mut late = simplified(5);
    assert!(matches!(
        late.observe_period(&p.prices, &p.quantities, &p.profits, 6),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn config_validation() {
    assert!(MechanismConfig::platform_full(0).validate().is_err());
    let mut cfg = MechanismConfig::simplified_ai(3, vec![1.0, 1.0]);
    assert!(cfg.validate().is_ok());
    cfg.cost_estimate = None;
    assert!(cfg.validate().is_err());
    let mut full = MechanismConfig::platform_full(3);
    full.cost_estimate = Some(vec![1.0, 1.0]);
    assert!(full.validate().is_err());
    assert!(MechanismState::new(MechanismConfig::simplified_ai(3, vec![1.0]), 2).is_err());
    assert_eq!(
        "simplified-ai".parse::<Variant>().unwrap(),
        Variant::SimplifiedAi
    );
    assert!("bogus".parse::<Variant>().is_err());
}

#[test]
fn cheat_on_one_platform_punished_on_another() {
    let mut mech = MultiPlatformMechanism::new(1, 2, 2).unwrap();
    let q = vec![vec![0.2, 0.2], vec![0.2, 0.2]];
    let script = [
        vec![vec![1.7, 1.7], vec![1.7, 1.7]],
        vec![vec![1.7, 1.7], vec![1.7, 1.7]],
        // seller 0 cheats on platform A only
        vec![vec![1.6, 1.7], vec![1.7, 1.7]],
        // seller 1 punishes on platform B only
        vec![vec![1.6, 1.7], vec![1.7, 1.5]],
    ];
    for (k, prices) in script.iter().enumerate() {
        mech.observe_period_multiplatform(prices, &q, k + 1)
            .unwrap();
    }
    assert_eq!(mech.platform(0).phase(), Phase::SecondDropped);
    assert_eq!(mech.platform(0).punishers(), vec![1]);
    // on platform B the punishment itself is a first-stage cut
    assert_eq!(mech.platform(1).phase(), Phase::FirstDropped);
    assert_eq!(mech.platform(1).first_droppers(), vec![1]);
    // Band spans the punisher's prices on both platforms: [1.5, 1.7].
    let topups = mech
        .observe_period_multiplatform(&[vec![1.55, 1.7], vec![1.7, 1.5]], &q, 5)
        .unwrap();
    assert!(mech.platform(0).is_eligible(0));
    assert_abs_diff_eq!(topups[0][0], 1.6 * 0.2 / 0.2 - 1.55, epsilon = 1e-12);
}

#[test]
fn multiplatform_without_drops_pays_nothing() {
    let mut mech = MultiPlatformMechanism::new(2, 2, 3).unwrap();
    let q = vec![vec![0.1; 3]; 2];
    for t in 1..20 {
        let topups = mech
            .observe_period_multiplatform(&[vec![1.8; 3], vec![1.7; 3]], &q, t)
            .unwrap();
        assert!(topups.iter().flatten().all(|&x| x == 0.0));
    }
    assert!((0..3).all(|j| mech.platform(j).ledger().is_empty()));
    assert!(mech
        .observe_period_multiplatform(&[vec![1.8; 2], vec![1.7; 2]], &q, 20)
        .is_err());
}

#[test]
fn direct_market_examples() {
    let params = CournotParams::symmetric(10.0, 1.0, 2).unwrap();
    let mut constant = DirectMarketState::new(1, 2).unwrap();
    for t in 1..10 {
        constant
            .observe_quantities(&[2.0, 2.0], &params, t)
            .unwrap();
    }
    assert_eq!(constant.direct_market_guarantee(0, 9), None);

    // seller 0 raises at tau+1, seller 1 raises at tau+2
    let mut state = DirectMarketState::new(1, 2).unwrap();
    state.observe_quantities(&[2.0, 2.0], &params, 1).unwrap();
    state.observe_quantities(&[3.0, 2.0], &params, 2).unwrap();
    assert_eq!(state.direct_market_guarantee(0, 2), None);
    state.observe_quantities(&[3.0, 3.5], &params, 3).unwrap();
    let offer = state.direct_market_guarantee(0, 3).unwrap();
    assert_eq!(offer.quantity, 3.0);
    assert_eq!(offer.price, 5.0);
    assert_eq!(state.direct_market_guarantee(1, 3), None);
    assert_eq!(state.direct_market_guarantee(0, 10), Some(offer));

    // a first increaser who raises again joins the punishers
    let mut twice = DirectMarketState::new(1, 2).unwrap();
    twice.observe_quantities(&[2.0, 2.0], &params, 1).unwrap();
    twice.observe_quantities(&[3.0, 2.0], &params, 2).unwrap();
    twice.observe_quantities(&[3.5, 3.0], &params, 3).unwrap();
    assert_eq!(twice.direct_market_guarantee(0, 3), None);
}

fn price_path() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..6, 0usize..6), 4..30)
}

const LEVELS: [f64; 6] = [1.2, 1.35, 1.47, 1.6, 1.7, 1.85];

fn simulate(
    state: &mut MechanismState,
    path: &[(usize, usize)],
) -> Vec<(Phase, Vec<bool>, Vec<f64>)> {
    let mut trace = Vec::new();
    for (k, &(a, b)) in path.iter().enumerate() {
        let p = period(&[LEVELS[a], LEVELS[b]]);
        state
            .observe_period(&p.prices, &p.quantities, &p.profits, k + 1)
            .unwrap();
        let topups = state.last_topups().to_vec();
        for i in 0..2 {
            prop_assert_guarantee(state, i, &p, topups[i]);
        }
        trace.push((
            state.phase(),
            vec![state.is_eligible(0), state.is_eligible(1)],
            topups,
        ));
    }
    trace
}

fn prop_assert_guarantee(state: &MechanismState, i: usize, p: &Period, topup: f64) {
    assert!(topup >= 0.0);
    if !(state.phase() == Phase::SecondDropped && state.is_eligible(i)) {
        assert_eq!(topup, 0.0);
        return;
    }
    let lock = state.lock(i).unwrap();
    let (achieved, target) = match state.config().variant {
        Variant::SimplifiedAi => {
            let c = state.config().cost_estimate.as_ref().unwrap()[i];
            (
                (topup + p.prices[i] - c) * p.quantities[i],
                lock.quantity * (lock.price - c),
            )
        }
        _ => (
            (topup + p.prices[i]) * p.quantities[i],
            lock.price * lock.quantity,
        ),
    };
    if topup > 0.0 {
        assert!((achieved - target).abs() <= 1e-9, "{achieved} vs {target}");
    } else {
        assert!(achieved >= target - 1e-12);
    }
}

fn drop_events(path: &[(usize, usize)], tau: usize) -> usize {
    // periods after the baseline where some seller prices below its previous price
    (tau + 1..path.len())
        .filter(|&k| {
            let (prev, cur) = (path[k - 1], path[k]);
            cur.0 < prev.0 || cur.1 < prev.1
        })
        .count()
}

proptest! {
    #[test]
    fn ledger_invariants(path in price_path(), full in any::<bool>()) {
        let config = if full {
            MechanismConfig::platform_full(1)
        } else {
            MechanismConfig::simplified_ai(1, vec![1.0, 1.0])
        };
        let mut state = MechanismState::new(config.clone(), 2).unwrap();
        let trace = simulate(&mut state, &path);

        // non-negativity
        prop_assert!(state.ledger().entries.iter().all(|e| e.topup >= 0.0));
        // monotone ineligibility
        for i in 0..2 {
            let flags: Vec<bool> = trace.iter().map(|t| t.1[i]).collect();
            let lost = flags.windows(2).position(|w| w[0] && !w[1]);
            if let Some(k) = lost {
                prop_assert!(flags[k + 1..].iter().all(|&f| !f));
            }
        }
        // at most one cut after the baseline: nothing is ever paid
        // (path index k is period k + 1, so the baseline sits at index 1)
        if drop_events(&path, 1) <= 1 {
            prop_assert!(state.ledger().is_empty());
        }
        // determinism
        let mut again = MechanismState::new(config, 2).unwrap();
        let trace2 = simulate(&mut again, &path);
        prop_assert_eq!(&trace, &trace2);
        prop_assert_eq!(state.ledger(), again.ledger());
    }

    #[test]
    fn one_platform_reproduces_platform_full(path in price_path()) {
        let mut single = MechanismState::new(MechanismConfig::platform_full(1), 2).unwrap();
        let mut multi = MultiPlatformMechanism::new(1, 2, 1).unwrap();
        for (k, &(a, b)) in path.iter().enumerate() {
            let p = period(&[LEVELS[a], LEVELS[b]]);
            let t1 = single.observe_period(&p.prices, &p.quantities, &p.profits, k + 1).unwrap().to_vec();
            let prices = vec![vec![p.prices[0]], vec![p.prices[1]]];
            let quantities = vec![vec![p.quantities[0]], vec![p.quantities[1]]];
            let t2 = multi.observe_period_multiplatform(&prices, &quantities, k + 1).unwrap();
            prop_assert_eq!(&t1, &t2[0]);
            let m = multi.platform(0);
            prop_assert_eq!(single.phase(), m.phase());
            prop_assert_eq!(single.first_droppers(), m.first_droppers());
            prop_assert_eq!(single.punishers(), m.punishers());
            prop_assert_eq!(single.is_eligible(0), m.is_eligible(0));
            prop_assert_eq!(single.is_eligible(1), m.is_eligible(1));
        }
        prop_assert_eq!(&single.ledger().entries, &multi.platform(0).ledger().entries);
    }
}
