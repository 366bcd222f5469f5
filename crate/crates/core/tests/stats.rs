use std::f64::consts::PI;

use slfv::stats::{
    predicted_timescale, uniformization_check, BlockCount, Experiment, FirstMerger, Growth,
    HittingTime, LimitCase, LineageWalker, Model, PairTime, RegimeSpec, ShortWindow, Status,
};
use slfv::{ClassLaw, EventLaw, Execution, Point, SeedStream, SimError, SimRng, StatsError, Thinning, Torus};
use rand::SeedableRng;

fn unit_small() -> ClassLaw {
    ClassLaw::point(1.0, 1.0, 1.0).unwrap()
}

/// `(π/2) r⁴ u` for a single atom.
fn atom_variance(r: f64, u: f64) -> f64 {
    0.5 * PI * r.powi(4) * u
}

fn regime(psi: Growth, rho: Growth) -> RegimeSpec {
    RegimeSpec { psi, rho: Some(rho) }
}

#[test]
fn small_only_timescale() {
    let side = 100.0;
    let law = EventLaw::new(Some(unit_small()), None, 1.0, f64::INFINITY).unwrap();
    let phi = predicted_timescale(&RegimeSpec::small_only(), side, &law).unwrap();
    let want = side * side * side.ln() / (2.0 * PI * atom_variance(1.0, 1.0));
    assert!((phi / want - 1.0).abs() < 1e-9);
}

#[test]
fn alpha_one_with_rare_large_events_is_kingman_on_small_scale() {
    let side = 200.0;
    let r = regime(Growth::power(1.0, 1.0), Growth::new(1.0, 2.0, 2.0));
    let large = ClassLaw::point(0.25, 1.0, 0.5).unwrap();
    let law = EventLaw::new(Some(unit_small()), Some(large), r.psi_at(side), r.rho_at(side)).unwrap();
    assert_eq!(r.classify(PI / 2.0).unwrap(), LimitCase::KingmanSmall);
    let phi = predicted_timescale(&r, side, &law).unwrap();
    let want = side * side * side.ln() / (2.0 * PI * atom_variance(1.0, 1.0));
    assert!((phi / want - 1.0).abs() < 1e-9);
}

#[test]
fn frequent_large_events_set_the_timescale() {
    let side = 256.0;
    let r = regime(Growth::power(1.0, 0.5), Growth::power(1.0, 0.25));
    let large = ClassLaw::point(1.0, 1.0, 1.0).unwrap();
    let law = EventLaw::new(Some(unit_small()), Some(large), r.psi_at(side), r.rho_at(side)).unwrap();
    assert!(matches!(r.classify(PI / 2.0).unwrap(), LimitCase::KingmanLarge { alpha } if (alpha - 0.5).abs() < 1e-12));
    let (psi, rho) = (side.sqrt(), side.powf(0.25));
    let want = 0.5 * rho * side * side * side.ln() / (2.0 * PI * atom_variance(1.0, 1.0) * psi * psi);
    let phi = predicted_timescale(&r, side, &law).unwrap();
    assert!((phi / want - 1.0).abs() < 1e-9);
}

#[test]
fn balanced_large_events_add_their_variance() {
    let side = 256.0;
    let r = regime(Growth::power(1.0, 0.5), Growth::power(1.0, 1.0));
    let large = ClassLaw::point(0.5, 1.0, 0.4).unwrap();
    let law = EventLaw::new(Some(unit_small()), Some(large), r.psi_at(side), r.rho_at(side)).unwrap();
    let s2 = atom_variance(1.0, 1.0);
    let b2 = atom_variance(0.5, 0.4);
    let want = 0.5 * side * side * side.ln() / (2.0 * PI * (s2 + b2));
    let phi = predicted_timescale(&r, side, &law).unwrap();
    assert!((phi / want - 1.0).abs() < 1e-9);
}

#[test]
fn uncovered_regime_is_reported() {
    let side = 256.0;
    let r = regime(Growth::power(1.0, 0.5), Growth::new(1.0, 1.0, 1.0));
    let law = EventLaw::new(Some(unit_small()), Some(unit_small()), r.psi_at(side), r.rho_at(side)).unwrap();
    assert!(matches!(predicted_timescale(&r, side, &law), Err(StatsError::UncoveredRegime(_))));
    let r = regime(Growth::new(1.0, 1.0, -1.0), Growth::power(1.0, 1.0));
    assert!(matches!(r.classify(1.0), Err(StatsError::UncoveredRegime(_))));
}

#[derive(Debug, PartialEq, Clone, Copy)]
enum Trend {
    Zero,
    Finite,
    Infinite,
}

/// Direction of `f` judged from its values at `L = 10⁶` and `L = 10¹²`.
fn trend(f: impl Fn(f64) -> f64) -> Trend {
    let (a, b) = (f(1e6), f(1e12));
    if b > 1.3 * a {
        Trend::Infinite
    } else if b < a / 1.3 {
        Trend::Zero
    } else {
        Trend::Finite
    }
}

/// Case label found by evaluating the limit conditions numerically.
fn brute_force_case(psi: Growth, rho: Growth) -> Option<&'static str> {
    let p = |l: f64| psi.at(l);
    let q = |l: f64| rho.at(l);
    // log ψ / log L read off far out, where slowly varying factors are negligible
    let alpha = p(1e300).ln() / 1e300f64.ln();
    if alpha < 0.98 {
        let t1 = trend(|l| p(l).powi(2) / q(l));
        let t2 = trend(|l| p(l).powi(2) * l.ln() / q(l));
        let t3 = trend(|l| p(l).powi(4) / q(l));
        let t4 = trend(|l| l * l * l.ln() / q(l));
        let mut hits = Vec::new();
        if t1 == Trend::Infinite {
            hits.push("large");
        } else if t2 == Trend::Infinite {
            hits.push("mixed");
        }
        if t3 != Trend::Infinite || t4 == Trend::Zero {
            hits.push("small");
        }
        return (hits.len() == 1).then(|| hits[0]);
    }
    let r = trend(|l| q(l) / (l * l * l.ln()));
    if r == Trend::Infinite {
        return Some("small");
    }
    if trend(|l| p(l) / l) != Trend::Finite {
        return None;
    }
    match trend(|l| q(l) / (l * l)) {
        Trend::Infinite => Some("lambda"),
        _ => Some("spatial"),
    }
}

fn label(case: &LimitCase) -> &'static str {
    match case {
        LimitCase::KingmanLarge { .. } => "large",
        LimitCase::KingmanMixed { .. } => "mixed",
        LimitCase::KingmanSmall => "small",
        LimitCase::SpatialLimit { .. } => "spatial",
        LimitCase::LambdaCoalescent { .. } => "lambda",
    }
}

#[test]
fn classification_matches_brute_force_conditions() {
    let regimes = [
        (Growth::power(1.0, 0.5), Growth::power(1.0, 0.25)),
        (Growth::power(1.0, 0.5), Growth::power(1.0, 1.0)),
        (Growth::power(1.0, 0.5), Growth::new(1.0, 1.0, 0.5)),
        (Growth::power(1.0, 0.2), Growth::power(1.0, 3.0)),
        (Growth::power(1.0, 0.5), Growth::power(1.0, 1.5)),
        (Growth::power(1.0, 0.5), Growth::new(1.0, 1.0, 1.0)),
        (Growth::power(2.0, 0.7), Growth::power(1.0, 5.0)),
        (Growth::power(1.0, 1.0), Growth::power(1.0, 3.0)),
        (Growth::power(0.5, 1.0), Growth::power(0.5, 2.0)),
        (Growth::power(1.0, 1.0), Growth::new(1.0, 2.0, 1.0)),
        (Growth::power(1.0, 1.0), Growth::power(1.0, 1.0)),
        (Growth::new(1.0, 1.0, -1.0), Growth::power(1.0, 1.0)),
    ];
    for (psi, rho) in regimes {
        let got = regime(psi, rho).classify(1.0);
        let want = brute_force_case(psi, rho);
        match (got, want) {
            (Ok(case), Some(w)) => assert_eq!(label(&case), w, "{psi:?} {rho:?}"),
            (Err(StatsError::UncoveredRegime(_)), None) => {}
            (g, w) => panic!("{psi:?} {rho:?}: classified {g:?}, brute force {w:?}"),
        }
    }
}

#[test]
fn limit_parameters_follow_the_scalings() {
    let r = regime(Growth::power(0.5, 1.0), Growth::power(0.5, 2.0));
    assert_eq!(r.classify(1.0).unwrap(), LimitCase::SpatialLimit { b: 0.5, c: 0.5 });
    let r = regime(Growth::power(1.0, 1.0), Growth::new(3.0, 2.0, 1.0));
    match r.classify(0.2).unwrap() {
        LimitCase::LambdaCoalescent { beta, c } => {
            assert!((beta - 2.0 * PI * 0.2 * 3.0).abs() < 1e-12);
            assert_eq!(c, 1.0);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn non_coalescing_law_is_reported() {
    let model = Model::small_only(ClassLaw::point(1.0, 1.0, 0.0).unwrap());
    let err = PairTime::new(&model, &[32.0], 1000, Thinning::Coverage).unwrap_err();
    assert_eq!(err, StatsError::Sim(SimError::NonCoalescing));
}

#[test]
fn close_start_pair_is_rejected() {
    let model = Model::small_only(unit_small());
    let exp = PairTime::new(&model, &[64.0], 1000, Thinning::Coverage).unwrap();
    assert!(exp.clone().with_start([Point::new(0.0, 0.0), Point::new(1.0, 0.0)]).is_err());
    assert!(exp.with_start([Point::new(0.0, 0.0), Point::new(30.0, 0.0)]).is_ok());
}

#[test]
fn pair_block_counts_agree_with_pair_times() {
    let model = Model::small_only(unit_small());
    let side = 24.0;
    let reps = 150;
    let seeds = SeedStream::new(7);
    let pair = PairTime::new(&model, &[side], u64::MAX, Thinning::Coverage).unwrap();
    let (pair_rows, pair_sum) = pair.run(reps, &seeds, Execution::Parallel);
    let times = [0.0, 0.2, 0.5, 1.0, 1.5];
    let counts = BlockCount::new(&model, 2, &times, &[side], u64::MAX, Thinning::Coverage).unwrap();
    let (count_rows, count_sum) = counts.run(reps, &seeds, Execution::Parallel);
    let phi = model.timescale(side).unwrap();
    assert_eq!(pair_sum.sides[0].timescale, phi);
    for (p, c) in pair_rows.iter().zip(&count_rows) {
        assert_eq!(p.status, Status::Ok);
        let t = p.coalescence.unwrap();
        for (k, &s) in times.iter().enumerate() {
            assert_eq!(c.counts[k], if t > s * phi { 2 } else { 1 }, "replicate {}", p.replicate);
        }
    }
    let at_zero = count_sum.sides[0].point(0.0, 2).unwrap();
    assert_eq!(at_zero.empirical.estimate, 1.0);
}

#[test]
fn kingman_overlay_value() {
    let model = Model::small_only(unit_small());
    let exp = BlockCount::new(&model, 4, &[0.3], &[32.0], 10, Thinning::Coverage).unwrap();
    let (_, sum) = exp.run(0, &SeedStream::new(1), Execution::Sequential);
    let p = sum.sides[0].point(0.3, 4).unwrap();
    assert!((p.theory.unwrap() - (-1.8f64).exp()).abs() < 1e-12);
}

fn first_merger_model(large: ClassLaw) -> Model {
    Model {
        small: None,
        large: Some(large),
        regime: regime(Growth::power(1.0, 1.0), Growth::new(1.0, 2.0, 2.0)),
    }
}

#[test]
fn full_cover_first_mergers_take_everyone() {
    let model = first_merger_model(ClassLaw::point(std::f64::consts::FRAC_1_SQRT_2, 1.0, 1.0).unwrap());
    let exp = FirstMerger::new(&model, 4, &[16.0], 100_000, Thinning::Coverage).unwrap();
    assert_eq!(exp.expected().len(), 3);
    assert!((exp.expected()[2] - 1.0).abs() < 1e-9);
    let (rows, _) = exp.run(50, &SeedStream::new(3), Execution::Parallel);
    assert!(rows.iter().all(|r| r.size == Some(4)));
}

#[test]
fn pair_first_merger_is_a_pair() {
    let model = first_merger_model(ClassLaw::point(0.25, 1.0, 0.5).unwrap());
    let exp = FirstMerger::new(&model, 2, &[16.0], 1_000_000, Thinning::Coverage).unwrap();
    assert_eq!(exp.expected(), &[1.0]);
    let (rows, sum) = exp.run(120, &SeedStream::new(4), Execution::Parallel);
    assert!(rows.iter().all(|r| r.size == Some(2)));
    assert_eq!(sum[0].large_counts, vec![120]);
    assert!(!sum[0].inconclusive);
    let (_, few) = exp.run(20, &SeedStream::new(4), Execution::Parallel);
    assert!(few[0].inconclusive);
    assert_eq!(few[0].pass, None);
}

#[test]
fn walker_variance_matches_dispersal() {
    let law = EventLaw::new(Some(unit_small()), None, 1.0, f64::INFINITY).unwrap();
    let torus = Torus::new(1000.0).unwrap();
    let w = LineageWalker::new(&law, torus).unwrap();
    assert!((w.variance() - PI / 2.0).abs() < 1e-9);
    assert!((w.jump_rate() - PI).abs() < 1e-9);
    let mut rng = SimRng::seed_from_u64(5);
    let (t, n) = (10.0, 40_000);
    let (mut sx, mut sy) = (0.0, 0.0);
    for _ in 0..n {
        let p = w.position_at(Point::ORIGIN, t, &mut rng);
        sx += p.x * p.x;
        sy += p.y * p.y;
    }
    let want = w.variance() * t;
    assert!((sx / n as f64 / want - 1.0).abs() < 0.03, "{}", sx / n as f64);
    assert!((sy / n as f64 / want - 1.0).abs() < 0.03, "{}", sy / n as f64);
}

#[test]
fn hitting_time_setup() {
    let model = Model::small_only(unit_small());
    let side = 16.0;
    let inside = HittingTime::new(&model, &[side], Growth::power(1.0, 0.0), Some(Point::new(0.5, 0.0)), 1_000_000);
    assert!(inside.is_err());
    assert!(HittingTime::new(&model, &[side], Growth::power(1.0, 1.0), None, 10).is_err());
    let exp = HittingTime::new(&model, &[side], Growth::power(1.0, 0.0), None, 1_000_000).unwrap();
    let (rows, sum) = exp.run(40, &SeedStream::new(6), Execution::Parallel);
    assert!(rows.iter().all(|r| r.status == Status::Ok && r.time.unwrap() > 0.0));
    let want = side * side * side.ln() / (PI * PI / 2.0);
    assert!((sum.sides[0].timescale / want - 1.0).abs() < 1e-9);
    assert_eq!(sum.gamma, 0.0);
}

fn window_end() -> Growth {
    Growth {
        scale: 1.0,
        power: 2.0,
        log_power: 0.0,
        loglog_power: 1.0,
    }
}

#[test]
fn empty_window_or_target_is_never_entered() {
    let model = Model::small_only(unit_small());
    let sides = [16.0, 24.0];
    let seeds = SeedStream::new(8);
    let width = Growth::new(0.5, 2.0, -1.0);
    let no_width = ShortWindow::new(&model, &sides, 1.0, window_end(), Growth::power(0.0, 0.0), 10_000_000).unwrap();
    let (_, sum) = no_width.run(30, &seeds, Execution::Parallel);
    assert!(sum.sides.iter().all(|s| s.probability == 0.0));
    let no_target = ShortWindow::new(&model, &sides, 0.0, window_end(), width, 10_000_000).unwrap();
    let (rows, sum) = no_target.run(30, &seeds, Execution::Parallel);
    assert!(rows.iter().all(|r| r.time.is_none()));
    assert!(sum.sides.iter().all(|s| s.probability == 0.0));
    assert!(ShortWindow::new(&model, &sides, 1.0, Growth::power(1.0, 2.0), width, 100).is_err());
    assert!(ShortWindow::new(&model, &sides, 1.0, window_end(), Growth::power(1.0, 2.0), 100).is_err());
}

#[test]
fn lineage_spreads_uniformly() {
    let model = Model::small_only(unit_small());
    let rep = uniformization_check(&model, 6.0, 1.5, 10.0, 100_000, &SeedStream::new(9), Execution::Parallel).unwrap();
    assert!((rep.proportion.reference - PI * 2.25 / 36.0).abs() < 1e-12);
    assert!(rep.within_3_sigma, "{:?}", rep.proportion);
}

#[test]
fn reruns_are_bit_identical() {
    let model = Model::small_only(unit_small());
    let exp = PairTime::new(&model, &[16.0, 24.0], u64::MAX, Thinning::Coverage).unwrap();
    let seeds = SeedStream::new(11);
    let (a, sa) = exp.run(40, &seeds, Execution::Parallel);
    let (b, sb) = exp.run(40, &seeds, Execution::Sequential);
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert!(sa.sides.iter().all(|s| s.ks_coalescence.is_some()));
    let (c, _) = exp.run(40, &SeedStream::new(12), Execution::Parallel);
    assert_ne!(a, c);
}
