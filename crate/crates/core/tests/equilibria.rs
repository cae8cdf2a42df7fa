//! Equilibrium search on generated fields.

use mpm_core::meanfield::{find_equilibria, jacobian, EquilibriumOptions, FnField, Stability, JACOBIAN_STEP};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Diagonal cubic fields x_i' = -(x_i - r_i)(x_i - s_i)(x_i - t_i) have
    /// exactly the product of the per-axis roots as equilibria.
    #[test]
    fn finds_every_root_of_separable_cubics(roots in proptest::collection::vec((-4.0f64..-1.0, -0.5f64..0.5, 1.0f64..4.0), 1..=2)) {
        let rs = roots.clone();
        let f = FnField::new(rs.len(), move |x: &[f64], out: &mut [f64]| {
            for (i, (r, s, t)) in rs.iter().enumerate() {
                out[i] = -(x[i] - r) * (x[i] - s) * (x[i] - t);
            }
            Ok(())
        });
        let bounds = vec![(-5.0, 5.0); roots.len()];
        let set = find_equilibria(&f, &bounds, &EquilibriumOptions::default()).unwrap();
        prop_assert_eq!(set.equilibria.len(), 3usize.pow(roots.len() as u32));
        // outer roots of each axis are stable, the middle one unstable
        let stable = set.count(Stability::Stable);
        prop_assert_eq!(stable, 2usize.pow(roots.len() as u32));
        for e in &set.equilibria {
            let j1 = jacobian(&f, &e.point, JACOBIAN_STEP).unwrap();
            let j2 = jacobian(&f, &e.point, JACOBIAN_STEP / 2.0).unwrap();
            let scale = j1.amax().max(1e-12);
            prop_assert!((j1 - j2).amax() / scale <= 1e-4);
        }
    }
}
