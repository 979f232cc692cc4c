//! Property tests for the model, geometry and simulation layers.

use proptest::prelude::*;
use qdaa::geometry::{BoxBounds, FacetId, Rectangle, Side, TileGrid};
use qdaa::model::{
    compile_mass_action, parse_model, serialize_model, BiochemicalSystem, MultiAffineField,
    MultiAffineTerm, Partition, Reaction, ReactionNetwork,
};
use qdaa::sim::{integrate_until_exit, Direction, ExitEvent, SimSettings};

fn term(n: usize) -> impl Strategy<Value = MultiAffineTerm> {
    (-2.0..2.0f64, prop::collection::vec(any::<bool>(), n)).prop_map(|(c, mask)| {
        let vars = mask
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(|(i, _)| i)
            .collect();
        MultiAffineTerm::new(c, vars).unwrap()
    })
}

fn field(n: usize) -> impl Strategy<Value = MultiAffineField> {
    prop::collection::vec(prop::collection::vec(term(n), 0..5), n)
        .prop_map(|components| MultiAffineField::new(components).unwrap())
}

fn sized_field() -> impl Strategy<Value = MultiAffineField> {
    (1usize..=4).prop_flat_map(field)
}

fn thresholds() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(0u32..80, 2..6)
        .prop_map(|s| s.into_iter().map(|v| v as f64 * 0.25).collect())
}

fn system() -> impl Strategy<Value = BiochemicalSystem> {
    (1usize..=3)
        .prop_flat_map(|n| (field(n), prop::collection::vec(thresholds(), n)))
        .prop_map(|(f, t)| {
            let n = f.dimension();
            let p = Partition::new(t).unwrap();
            let first = Rectangle::new(vec![0; n]);
            let species = (0..n).map(|i| format!("x{i}")).collect();
            BiochemicalSystem::new(species, f, p, vec![first])
                .unwrap()
                .with_name("random")
        })
}

/// Unit-stoichiometry reactions that preserve the number of molecules.
fn conserving_network(n: usize) -> impl Strategy<Value = ReactionNetwork> {
    let reaction = (0.01..10.0f64, 0..n, 0..n, 0..n, 0..n, any::<bool>()).prop_map(
        move |(rate, a, b, c, d, bimolecular)| {
            if bimolecular && a != b && c != d {
                Reaction {
                    rate,
                    reactants: vec![a, b],
                    products: vec![c, d],
                }
            } else {
                Reaction {
                    rate,
                    reactants: vec![a],
                    products: vec![c],
                }
            }
        },
    );
    prop::collection::vec(reaction, 0..8).prop_map(move |reactions| {
        let species = (0..n).map(|i| format!("s{i}")).collect();
        ReactionNetwork::new(species, reactions).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn field_is_affine_in_each_variable(
        f in sized_field(),
        seed in prop::collection::vec(-3.0..3.0f64, 4),
        axis in 0usize..4,
        u in -3.0..3.0f64,
        v in -3.0..3.0f64,
        a in 0.0..1.0f64,
    ) {
        let n = f.dimension();
        let axis = axis % n;
        let mut x = seed[..n].to_vec();
        let mut at = |value: f64| {
            x[axis] = value;
            f.eval(&x).unwrap()
        };
        let fu = at(u);
        let fv = at(v);
        let fm = at(a * u + (1.0 - a) * v);
        for i in 0..n {
            let mix = a * fu[i] + (1.0 - a) * fv[i];
            prop_assert!((fm[i] - mix).abs() <= 1e-9 * (1.0 + mix.abs()), "{} vs {}", fm[i], mix);
        }
    }

    #[test]
    fn partial_matches_difference(
        f in sized_field(),
        seed in prop::collection::vec(-3.0..3.0f64, 4),
        i in 0usize..4,
        j in 0usize..4,
    ) {
        let n = f.dimension();
        let (i, j) = (i % n, j % n);
        let x = seed[..n].to_vec();
        let mut y = x.clone();
        y[j] += 1.0;
        // affine in x_j, so a unit difference is exact
        let diff = f.eval_component(i, &y) - f.eval_component(i, &x);
        prop_assert!((f.partial(i, j, &x) - diff).abs() <= 1e-9 * (1.0 + diff.abs()));
    }

    #[test]
    fn conserving_networks_preserve_total_mass(
        network in (1usize..=5).prop_flat_map(conserving_network),
        point in prop::collection::vec(0.0..4.0f64, 5),
    ) {
        let f = compile_mass_action(&network).unwrap();
        let n = f.dimension();
        let values = f.eval(&point[..n]).unwrap();
        let total: f64 = values.iter().sum();
        let scale: f64 = values.iter().map(|v| v.abs()).sum::<f64>() + 1.0;
        prop_assert!(total.abs() <= 1e-12 * scale, "sum {total}");
    }

    #[test]
    fn model_files_round_trip(sys in system()) {
        let text = serialize_model(&sys);
        let back = parse_model(&text).unwrap();
        prop_assert_eq!(back, sys);
    }

    #[test]
    fn tile_lookup_inverts_indexing(
        lo in prop::collection::vec(-5.0..5.0f64, 3),
        side in prop::collection::vec(0.01..4.0f64, 3),
        kappa in 1usize..7,
        facet in prop::option::of((0usize..3, any::<bool>())),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&side).map(|(l, s)| l + s).collect();
        let facet = facet.map(|(axis, upper)| {
            FacetId::new(axis, if upper { Side::Upper } else { Side::Lower })
        });
        let mut lo = lo;
        let mut hi = hi;
        if let Some(f) = facet {
            let c = if f.side == Side::Upper { hi[f.axis] } else { lo[f.axis] };
            lo[f.axis] = c;
            hi[f.axis] = c;
        }
        let grid = TileGrid::from_box(BoxBounds { lo, hi }, facet, kappa).unwrap();
        prop_assert_eq!(grid.tile_count(), kappa.pow(if facet.is_some() { 2 } else { 3 }));
        for k in 0..grid.tile_count() {
            prop_assert_eq!(grid.index_of(&grid.coords(k)), k);
            prop_assert_eq!(grid.tile_containing(&grid.tile(k).center()).unwrap(), k);
        }
    }

    #[test]
    fn longer_horizon_never_undoes_an_exit(
        x in 0.0..2.5f64,
        y in 0.0..2.5f64,
        short in 0.1..5.0f64,
        extra in 0.0..20.0f64,
    ) {
        let sys = qdaa::bundled::model("fig2").unwrap();
        let bounds = Rectangle::new(vec![0, 0]).bounds(sys.partition());
        let resolve = |t_max: f64| {
            SimSettings { t_max: Some(t_max), ..SimSettings::default() }
                .resolve(sys.field(), &bounds)
                .unwrap()
        };
        let run = |t_max: f64| {
            integrate_until_exit(sys.field(), &[x, y], &bounds, &resolve(t_max), Direction::Forward)
                .unwrap()
        };
        let a = run(short);
        let b = run(short + extra);
        match (&a, &b) {
            (ExitEvent::Exited { .. }, _) => prop_assert_eq!(&a, &b),
            (ExitEvent::StaysInside, ExitEvent::Exited { time, .. }) => prop_assert!(*time > short),
            (ExitEvent::StaysInside, ExitEvent::StaysInside) => {}
        }
    }

    #[test]
    fn reversed_flow_retraces_exit(a in 0.01..2.49f64) {
        // entering R = [0,2.5]x[2.5,5] through its top facet
        let sys = qdaa::bundled::model("fig2").unwrap();
        let bounds = Rectangle::new(vec![0, 1]).bounds(sys.partition());
        let params = SimSettings::default().resolve(sys.field(), &bounds).unwrap();
        let start = [a, 5.0];
        let ExitEvent::Exited { point, facet, .. } =
            integrate_until_exit(sys.field(), &start, &bounds, &params, Direction::Forward).unwrap()
        else {
            return Err(TestCaseError::fail("forward run stayed inside"));
        };
        prop_assert_eq!(facet, FacetId::new(0, Side::Upper));
        let back = integrate_until_exit(sys.field(), &point, &bounds, &params, Direction::Backward).unwrap();
        let ExitEvent::Exited { point: home, facet: entry, .. } = back else {
            return Err(TestCaseError::fail("backward run stayed inside"));
        };
        prop_assert_eq!(entry, FacetId::new(1, Side::Upper));
        let dist = ((home[0] - start[0]).powi(2) + (home[1] - start[1]).powi(2)).sqrt();
        prop_assert!(dist <= 10.0 * params.crossing_tol, "returned {dist} away");
    }
}
