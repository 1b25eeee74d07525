use gfc_core::estimate::{estimate_att, AnalysisConfig, Conditioning, Method};
use gfc_core::mapping::{Mapper, MapperKind};
use gfc_core::panel::{Grid, Panel};
use gfc_core::presets::named;
use gfc_core::tables::{fit_conditional_tables, fit_table, Transitions};
use gfc_core::window::{Var, WindowSpec};
use proptest::prelude::*;

const KINDS: [MapperKind; 5] =
    [MapperKind::OneDay, MapperKind::AnyDay, MapperKind::Initiation, MapperKind::Duration, MapperKind::Intermittent];

fn spec() -> impl Strategy<Value = WindowSpec> {
    (0usize..2, 0usize..4).prop_flat_map(|(b, k)| {
        (Just(b), Just(k), b..=b + k, 1usize..=k.max(1)).prop_map(|(b, k, l, q)| WindowSpec::new(b, k, l, q, l + 1))
    })
}

fn rebuild(panel: &Panel, y: Grid, order: &[usize]) -> Panel {
    let mut schema = panel.schema().clone();
    schema.y = y;
    let units = order.iter().map(|&i| panel.units()[i].clone()).collect();
    let rows = order.iter().map(|&i| panel.rows(i)).collect();
    Panel::from_rows(schema, units, rows).unwrap()
}

fn config(method: Method) -> AnalysisConfig {
    AnalysisConfig::new(WindowSpec::new(0, 0, 0, 0, 1), MapperKind::OneDay).with_method(method, Conditioning::RBar)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mapper_partitions_windows(spec in spec(), kind in 0usize..5) {
        let m = Mapper::new(KINDS[kind]);
        prop_assume!(m.validate(&spec).is_ok());
        let treated = m.treated_vectors(&spec).unwrap();
        let control = m.control_vectors(&spec).unwrap();
        prop_assert_eq!(treated.len() + control.len(), 1 << (spec.k + 1));
        prop_assert!(treated.iter().all(|w| !control.contains(w)));
        for d in 0..=1u8 {
            let c = m.canonical(&spec, d).unwrap();
            prop_assert_eq!(m.map(&c, &spec).unwrap(), d);
        }
        if KINDS[kind] == MapperKind::AnyDay {
            prop_assert_eq!(control, vec![vec![0; spec.k + 1]]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fitted_rows_are_distributions(seed in 0u64..1000, preset in 0usize..3) {
        let d = named(["null-effect", "tdc-on", "exposure"][preset]).unwrap();
        let p = d.simulate(8, 40, seed).unwrap();
        let spec = WindowSpec::new(0, 1, 0, 1, 2);
        let tr = fit_conditional_tables(&p, &spec, Var::Z, 1).unwrap();
        for table in [&tr.covariate, &tr.outcome] {
            for row in table.all_rows() {
                if let Some(probs) = row.probs {
                    prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(probs.iter().all(|&q| (0.0..=1.0).contains(&q)));
                }
            }
        }
        let t = fit_table(&p, Var::Y, &Transitions::outcome_parents(&spec, Var::Z), 3);
        prop_assert!(t.all_rows().iter().all(|r| r.probs.is_some() == (r.count >= 3)));
    }

    #[test]
    fn att_invariant_to_unit_order(seed in 0u64..1000, rot in 1usize..11, gformula in any::<bool>()) {
        let p = named("transport").unwrap().simulate(12, 40, seed).unwrap();
        let cfg = config(if gformula { Method::Gformula } else { Method::Adjustment });
        let order: Vec<usize> = (0..12).map(|i| (i + rot) % 12).rev().collect();
        let q = rebuild(&p, p.schema().y.clone(), &order);
        let a = estimate_att(&p, &cfg);
        prop_assume!(a.is_ok());
        let (a, b) = (a.unwrap(), estimate_att(&q, &cfg).unwrap());
        prop_assert!(a.se > 0.0);
        prop_assert!((a.value - b.value).abs() < 1e-12);
        prop_assert!((a.se - b.se).abs() < 1e-12);
    }

    #[test]
    fn att_equivariant_to_outcome_affine_map(seed in 0u64..1000, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let p = named("transport").unwrap().simulate(12, 40, seed).unwrap();
        let cfg = config(Method::Gformula);
        let order: Vec<usize> = (0..12).collect();
        let y = Grid::new(p.schema().y.values.iter().map(|v| scale * v + shift).collect());
        let q = rebuild(&p, y, &order);
        let a = estimate_att(&p, &cfg);
        prop_assume!(a.is_ok());
        let (a, b) = (a.unwrap(), estimate_att(&q, &cfg).unwrap());
        prop_assert!((scale * a.value - b.value).abs() < 1e-9 * scale.max(1.0));
        prop_assert!((scale * a.se - b.se).abs() < 1e-9 * scale.max(1.0));
    }
}
