//! Agreement between the ways of averaging out the fast subsystem.

use mpm_core::model::RateSource;
use mpm_core::qe::{make_partition, qe_reduce_mpm, reducible_form, Backend, Partition};
use mpm_core::{fixtures, Model, RateExpr};

fn gene_at(n: f64) -> Partition {
    let (m, _) = reducible_form(&fixtures::gene().with_system_size(n).unwrap()).unwrap();
    make_partition(&m).unwrap()
}

#[test]
fn exact_and_closed_form_agree_on_the_gene() {
    for n in [5.0, 20.0, 50.0] {
        let p = gene_at(n);
        let exact = qe_reduce_mpm(&p, Backend::exact()).unwrap();
        let closed = qe_reduce_mpm(
            &p,
            Backend::ClosedForm(vec![
                RateExpr::parse("k_p * N * k_u / (k_u + k_b * X3 / N)").unwrap(),
                RateExpr::parse("k_d * X3").unwrap(),
            ]),
        )
        .unwrap();
        for y in 0..=(3 * n as i64) {
            for j in 0..2 {
                let a = exact.rate(j, &[y]).unwrap();
                let b = closed.rate(j, &[y]).unwrap();
                assert!((a - b).abs() <= 1e-10, "N={n} Y={y} j={j}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn nested_estimates_within_three_standard_errors() {
    let p = gene_at(50.0);
    let nested = qe_reduce_mpm(
        &p,
        Backend::NestedSsa {
            burn_in: None,
            horizon: None,
            seed: 99,
        },
    )
    .unwrap();
    for y in [5.0, 25.0, 50.0, 120.0] {
        let law = nested.fast_law(&[y]).unwrap();
        let se = law.std_err.as_ref().unwrap()[0];
        let exact = 50.0 / (1.0 + y / 50.0);
        let got = law.mean()[0];
        assert!((got - exact).abs() <= 3.0 * se, "Y={y}: {got} vs {exact}, se {se}");
    }
    // absorbed fast chain: the gene stays active
    assert_eq!(nested.fast_mean(&[0.0]).unwrap(), vec![50.0]);
}

#[test]
fn toggle_averaged_production_ignores_the_slow_state() {
    let p = make_partition(&fixtures::toggle()).unwrap();
    let red = qe_reduce_mpm(&p, Backend::ExactCme { caps: vec![Some(80), Some(80)] }).unwrap();
    let first = red.rate(0, &[0]).unwrap();
    for y in [1, 5, 17, 60] {
        assert_eq!(red.rate(0, &[y]).unwrap(), first);
    }
    assert_eq!(red.memo_len(), 1);
}

mod split {
    use super::*;
    use mpm_core::stoich::{rank_codim, stoich_matrix};
    use mpm_core::{Error, Scale};
    use num_traits::Zero;
    use proptest::prelude::*;

    fn arb_model() -> impl Strategy<Value = Model> {
        (2usize..=4).prop_flat_map(|n| {
            let update = proptest::collection::vec(-1i64..=1, n).prop_filter("nonzero update", |u| u.iter().any(|&v| v != 0));
            (Just(n), proptest::collection::vec((update, any::<bool>()), 2..=5))
        })
        .prop_filter("both classes present", |(_, ts)| ts.iter().any(|t| t.1) && ts.iter().any(|t| !t.1))
        .prop_map(|(n, ts)| {
            let vars: Vec<String> = (1..=n).map(|i| format!("X{i}")).collect();
            let transitions: Vec<String> = ts
                .iter()
                .enumerate()
                .map(|(j, (u, slow))| {
                    format!(
                        r#"{{"label":"t{j}","update":{u:?},"rate":"1","scale":"{}"}}"#,
                        if *slow { "slow" } else { "fast" }
                    )
                })
                .collect();
            let doc = format!(
                r#"{{"name":"random","vars":{vars:?},"domain":{dom},"params":{{"N":1,"eps":0.1}},"init":{init:?},"transitions":[{t}]}}"#,
                dom = serde_json::to_string(&vec![(0, None::<i64>); n]).unwrap(),
                init = vec![0; n],
                t = transitions.join(",")
            );
            Model::from_json(&doc).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn slow_coordinates_are_frozen_by_fast_moves(m in arb_model()) {
            let fast = m.indices_with_scale(Scale::Fast);
            let (_, codim) = rank_codim(&stoich_matrix(&m, &fast));
            match make_partition(&m) {
                Ok(p) => {
                    prop_assert_eq!(p.m(), codim);
                    let c = &p.basis.c;
                    for (j, t) in m.transitions.iter().enumerate() {
                        let proj = c.tr_mul_int(&t.update);
                        if t.scale == Scale::Fast {
                            prop_assert!(proj.iter().all(|q| q.is_zero()));
                        } else {
                            let k = p.slow.iter().position(|&i| i == j).unwrap();
                            let mu: Vec<i64> = proj.iter().map(|q| q.to_integer().try_into().unwrap()).collect();
                            prop_assert_eq!(&p.mu[k], &mu);
                        }
                    }
                }
                Err(Error::NotReducible) => prop_assert_eq!(codim, 0),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
