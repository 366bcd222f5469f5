use rand::SeedableRng;
use slfv::forward::{
    duality_check, run_forward, step_individual_model, step_type_field, DualitySetup, FieldStep,
    IndividualPopulation, ReproductionEvent, TypeField,
};
use slfv::{ClassLaw, EventLaw, Execution, ForwardError, Point, SeedStream, SimRng, Torus};

fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

fn event(x: f64, y: f64, radius: f64, u: f64) -> ReproductionEvent {
    ReproductionEvent {
        center: Point::new(x, y),
        radius,
        u,
    }
}

fn small(radius: f64, u: f64) -> EventLaw {
    EventLaw::small_only(ClassLaw::point(radius, 1.0, u).unwrap())
}

#[test]
fn empty_ball_leaves_population_alone() {
    let torus = Torus::new(20.0).unwrap();
    let mut pop = IndividualPopulation {
        positions: vec![Point::new(5.0, 5.0)],
        types: vec![1],
        intensity: 3.0,
    };
    let before = pop.clone();
    let step = step_individual_model(&mut pop, &torus, event(-5.0, -5.0, 1.0, 1.0), &mut rng(1)).unwrap();
    assert_eq!(step.parent_type, None);
    assert_eq!(pop, before);
}

#[test]
fn zero_impact_changes_nothing() {
    let torus = Torus::new(20.0).unwrap();
    let mut r = rng(2);
    let mut pop = IndividualPopulation::poisson(&torus, 2.0, |p| (p.x > 0.0) as u8, &mut r).unwrap();
    let before = pop.clone();
    for _ in 0..200 {
        let c = torus.uniform_point(&mut r);
        step_individual_model(&mut pop, &torus, ReproductionEvent { center: c, radius: 2.0, u: 0.0 }, &mut r)
            .unwrap();
    }
    assert_eq!(pop, before);
}

#[test]
fn full_impact_offspring_count_is_poisson_mean() {
    let torus = Torus::new(20.0).unwrap();
    let (m, radius) = (4.0, 1.5);
    let mut r = rng(3);
    let trials = 10_000;
    let mut total = 0usize;
    for _ in 0..trials {
        let mut pop = IndividualPopulation {
            positions: vec![Point::new(0.3, -0.2)],
            types: vec![7],
            intensity: m,
        };
        let step = step_individual_model(&mut pop, &torus, event(0.0, 0.0, radius, 1.0), &mut r).unwrap();
        assert_eq!(step.deaths, 1);
        assert!(pop.types.iter().all(|&t| t == 7));
        assert_eq!(pop.len(), step.births);
        total += step.births;
    }
    let mean = total as f64 / trials as f64;
    let expected = m * std::f64::consts::PI * radius * radius;
    assert!((mean / expected - 1.0).abs() < 0.02, "{mean} vs {expected}");
}

#[test]
fn field_update_rules() {
    let torus = Torus::new(8.0).unwrap();
    let mut r = rng(4);

    let mut f = TypeField::checkerboard(torus, 32, 4).unwrap();
    let before = f.clone();
    step_type_field(&mut f, event(0.0, 0.0, 2.0, 0.0), &mut r).unwrap();
    assert_eq!(f, before);

    let mut mono = TypeField::constant(torus, 32, 3, 1).unwrap();
    for _ in 0..100 {
        let c = torus.uniform_point(&mut r);
        step_type_field(&mut mono, ReproductionEvent { center: c, radius: 1.5, u: 0.7 }, &mut r).unwrap();
    }
    assert_eq!(mono, TypeField::constant(torus, 32, 3, 1).unwrap());

    // a radius below the cell diagonal is skipped
    let mut g = TypeField::checkerboard(torus, 32, 4).unwrap();
    assert_eq!(step_type_field(&mut g, event(0.0, 0.0, 0.1, 1.0), &mut r).unwrap(), FieldStep::Skipped);
}

#[test]
fn mixed_cell_picks_each_type_half_the_time() {
    let torus = Torus::new(8.0).unwrap();
    let half = TypeField::from_fn(torus, 16, 2, |_, _| vec![0.5, 0.5]).unwrap();
    let mut r = rng(5);
    let trials = 20_000;
    let mut zeros = 0;
    for _ in 0..trials {
        let mut f = half.clone();
        let FieldStep::Applied { parent_type, cells } =
            step_type_field(&mut f, event(0.0, 0.0, 2.0, 1.0), &mut r).unwrap()
        else {
            panic!("event skipped");
        };
        assert!(cells > 0);
        let centre = f.at(Point::new(0.1, 0.1));
        assert_eq!(centre[parent_type], 1.0);
        zeros += (parent_type == 0) as usize;
    }
    let p = zeros as f64 / trials as f64;
    let sd = (0.25 / trials as f64).sqrt();
    assert!((p - 0.5).abs() < 4.0 * sd, "{p}");
}

#[test]
fn probability_vectors_survive_many_events() {
    let torus = Torus::new(8.0).unwrap();
    let f0 = TypeField::from_fn(torus, 24, 3, |c, r| {
        let a = (c as f64 + 1.0) / 60.0;
        let b = (r as f64 + 1.0) / 40.0;
        vec![a, b, 1.0 - a - b]
    })
    .unwrap();
    let law = EventLaw::small_only(
        ClassLaw::new(
            slfv::RadiusMeasure::from_atoms(&[(0.8, 0.5), (1.6, 0.5)]).unwrap(),
            slfv::ImpactKernel::constant(slfv::ImpactDistribution::Beta { a: 2.0, b: 3.0 }),
        )
        .unwrap(),
    );
    let out = run_forward(&f0, &law, 40.0, 1_000_000, &mut rng(6)).unwrap();
    assert!(out.events > 1000);
    out.field.validate().unwrap();
    assert!(out.field.max_sum_drift() < 1e-12);
}

#[test]
fn forward_run_trivial_cases() {
    let torus = Torus::new(8.0).unwrap();
    let f0 = TypeField::checkerboard(torus, 32, 4).unwrap();
    let law = small(1.0, 0.5);
    let out = run_forward(&f0, &law, 0.0, 10, &mut rng(7)).unwrap();
    assert_eq!(out.field, f0);
    assert_eq!(out.events, 0);

    let frozen = small(1.0, 0.0);
    let out = run_forward(&f0, &frozen, 2.0, 1_000_000, &mut rng(8)).unwrap();
    assert_eq!(out.field, f0);

    let err = run_forward(&f0, &law, 10.0, 5, &mut rng(9)).unwrap_err();
    assert_eq!(err, ForwardError::EventCap(5));
}

#[test]
fn binary_and_csv_exports() {
    let torus = Torus::new(8.0).unwrap();
    let f0 = TypeField::checkerboard(torus, 8, 2).unwrap();
    let mut buf = Vec::new();
    f0.write_binary(&mut buf).unwrap();
    assert_eq!(&buf[..8], b"SLFVTF01");
    assert_eq!(f64::from_le_bytes(buf[8..16].try_into().unwrap()), 8.0);
    assert_eq!(buf.len(), 8 + 8 + 4 + 4 + 8 * 8 * 2 * 8);
    let back = TypeField::read_binary(&buf[..]).unwrap();
    assert_eq!(back, f0);
    assert!(TypeField::read_binary(&buf[..20]).is_err());

    let mut csv = Vec::new();
    f0.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "col,row,x,y,p0,p1");
    assert_eq!(text.lines().count(), 1 + 64);
}

#[test]
fn duality_trivial_cases() {
    let torus = Torus::new(8.0).unwrap();
    let field = TypeField::checkerboard(torus, 32, 4).unwrap();
    let law = small(1.0, 0.5);
    let points = [Point::new(0.125, 0.125), Point::new(1.125, 0.125)];
    let patterns = vec![vec![0, 0], vec![0, 1], vec![1, 1]];
    let setup = DualitySetup {
        field0: &field,
        points: &points,
        patterns: &patterns,
        time: 0.0,
        law: &law,
        replicates: 50,
        max_events: 1_000_000,
    };
    for rep in duality_check(&setup, SeedStream::new(1), Execution::Parallel).unwrap() {
        assert_eq!(rep.forward.mean, rep.exact_at_zero);
        assert_eq!(rep.dual.mean, rep.exact_at_zero);
    }

    let mono = TypeField::constant(torus, 32, 2, 1).unwrap();
    let setup = DualitySetup {
        field0: &mono,
        patterns: &[vec![1, 1]],
        time: 1.0,
        ..setup
    };
    let rep = &duality_check(&setup, SeedStream::new(2), Execution::Parallel).unwrap()[0];
    assert_eq!(rep.forward.mean, 1.0);
    assert_eq!(rep.dual.mean, 1.0);

    let setup = DualitySetup {
        patterns: &[vec![0, 2]],
        ..setup
    };
    assert!(matches!(
        duality_check(&setup, SeedStream::new(3), Execution::Parallel),
        Err(ForwardError::AlphabetMismatch { .. })
    ));
}

#[test]
fn duality_moments_agree_at_moderate_replication() {
    let torus = Torus::new(8.0).unwrap();
    let field = TypeField::checkerboard(torus, 32, 4).unwrap();
    let law = small(1.0, 0.5);
    let points = [Point::new(0.125, 0.125), Point::new(1.125, 0.125)];
    let patterns = vec![vec![0, 0], vec![0, 1], vec![1, 1]];
    let setup = DualitySetup {
        field0: &field,
        points: &points,
        patterns: &patterns,
        time: 1.0,
        law: &law,
        replicates: 10_000,
        max_events: 1_000_000,
    };
    let seq = duality_check(&setup, SeedStream::new(11), Execution::Sequential).unwrap();
    let par = duality_check(&setup, SeedStream::new(11), Execution::Parallel).unwrap();
    assert_eq!(seq, par);
    for rep in &seq {
        assert!(rep.agree, "{rep:?}");
    }
}
