use proptest::prelude::*;
use riccilab::constraints::{evaluate_constraint, solve_conjugate_density, SecondForm};
use riccilab::field::{CovariantForm, Mat3, ScalarField};
use riccilab::flows::step_count;
use riccilab::geom::{divergence, l2_pairing, lichnerowicz_cov, lichnerowicz_endo};
use riccilab::jet::{Jet, JetSpace};
use riccilab::milnor::{milnor_curvature, MilnorForm, MilnorMetric};
use riccilab::report::format_float;
use riccilab::sum::pairwise_sum;
use riccilab::torus::{GridChart, Scheme};
use riccilab::Chart;

fn axes() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.3f64..3.0, 0.3f64..3.0, 0.3f64..3.0)
}

fn sym_entries() -> impl Strategy<Value = [f64; 6]> {
    prop::array::uniform6(-2.0f64..2.0)
}

fn sym(e: [f64; 6]) -> Mat3 {
    Mat3::new(e[0], e[1], e[2], e[1], e[3], e[4], e[2], e[4], e[5])
}

fn left_invariant(e: [f64; 6]) -> CovariantForm {
    CovariantForm::from_fn(&Chart::Milnor, |_| sym(e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_is_lichnerowicz_harmonic_on_every_milnor_metric((a, b, c) in axes()) {
        let m = MilnorMetric::new(a, b, c).unwrap();
        let pack = milnor_curvature(&m).unwrap();
        let g = m.field().as_form();
        prop_assert!(lichnerowicz_endo(&pack, &g).unwrap().max_abs() <= 1e-12 * g.max_abs());
        prop_assert!(lichnerowicz_cov(&pack, &g).unwrap().max_abs() <= 1e-12 * g.max_abs());
    }

    #[test]
    fn lichnerowicz_forms_agree((a, b, c) in axes(), e in sym_entries()) {
        let pack = milnor_curvature(&MilnorMetric::new(a, b, c).unwrap()).unwrap();
        let h = left_invariant(e);
        let x = lichnerowicz_endo(&pack, &h).unwrap();
        let y = lichnerowicz_cov(&pack, &h).unwrap();
        prop_assert!(x.sub(&y).max_abs() <= 1e-10 * (1.0 + x.max_abs()));
    }

    #[test]
    fn pairing_is_invariant_under_index_moves((a, b, c) in axes(), e in sym_entries(), f in sym_entries()) {
        let pack = milnor_curvature(&MilnorMetric::new(a, b, c).unwrap()).unwrap();
        let (h, k) = (left_invariant(e), left_invariant(f));
        let direct = l2_pairing(&pack, &pack.raise(&h), &k).unwrap();
        let swapped = l2_pairing(&pack, &pack.raise(&k), &h).unwrap();
        prop_assert!((direct - swapped).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn diagonal_forms_are_divergence_free((a, b, c) in axes(), (p, q, s) in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)) {
        let pack = milnor_curvature(&MilnorMetric::new(a, b, c).unwrap()).unwrap();
        let d = divergence(&pack, &MilnorForm::covariant(p, q, s).covariant_field()).unwrap();
        prop_assert!(d.max_abs() <= 1e-13);
    }

    #[test]
    fn ricci_closed_form_matches_curvature_pack((a, b, c) in axes()) {
        let m = MilnorMetric::new(a, b, c).unwrap();
        let pack = milnor_curvature(&m).unwrap();
        let closed = m.ricci_closed_form();
        for (i, c) in closed.iter().enumerate() {
            prop_assert!((pack.ricci.comp(i, i)[0] - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
        let r = m.scalar_closed_form();
        prop_assert!((pack.scalar.c[0][0] - r).abs() <= 1e-12 * (1.0 + r.abs()));
    }

    #[test]
    fn constraint_round_trip((a, b, c) in axes(), e in sym_entries(), coupling in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0]) {
        let pack = milnor_curvature(&MilnorMetric::new(a, b, c).unwrap()).unwrap();
        let s = SecondForm::Covariant(left_invariant(e));
        let sol = solve_conjugate_density(&pack, &s, coupling).unwrap();
        let f: ScalarField = sol.density.unwrap();
        let r = evaluate_constraint(&pack, &s, &f, coupling).unwrap();
        prop_assert!(r.max_abs() <= 1e-12 * (1.0 + coupling.abs() * f.max_abs()));
    }

    #[test]
    fn fd4_stencils_commute_with_translations(vals in prop::collection::vec(-1.0f64..1.0, 512), shift in (0usize..8, 0usize..8, 0usize..8), axis in 0usize..3) {
        let grid = GridChart::new(8, 2.0, Scheme::Fd4).unwrap();
        let moved = |f: &[f64]| -> Vec<f64> {
            (0..grid.npts())
                .map(|p| {
                    let [x, y, z] = grid.coords(p).map(|c| (c / grid.h()).round() as usize);
                    f[grid.index((x + shift.0) % 8, (y + shift.1) % 8, (z + shift.2) % 8)]
                })
                .collect()
        };
        for order in [1, 2] {
            let a = grid.derivative(&moved(&vals), axis, order);
            let b = moved(&grid.derivative(&vals, axis, order));
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn csv_floats_round_trip(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        prop_assume!(v.is_finite());
        let text = format_float(v);
        prop_assert_eq!(text.parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn step_count_covers_the_interval(beta in 1e-4f64..2.0, dt in 1e-5f64..0.5) {
        let (k, eff) = step_count(beta, dt).unwrap();
        prop_assert!(eff <= dt * (1.0 + 1e-15));
        prop_assert!((k as f64 * eff - beta).abs() <= 1e-12 * beta);
        prop_assert!(k == 1 || (k - 1) as f64 * dt < beta);
    }

    #[test]
    fn pairwise_sum_is_exact_on_dyadic_grids(k in prop::collection::vec(-(1i64 << 20)..(1i64 << 20), 1..400)) {
        // multiples of 2^-10 below 2^10: every partial sum is representable
        let v: Vec<f64> = k.iter().map(|&n| n as f64 / 1024.0).collect();
        let exact = k.iter().sum::<i64>() as f64 / 1024.0;
        prop_assert_eq!(pairwise_sum(&v), exact);
    }

    #[test]
    fn jet_products_evaluate_to_products_of_polynomials(ca in prop::collection::vec(-1.0f64..1.0, 4), cb in prop::collection::vec(-1.0f64..1.0, 4), s in prop::array::uniform3(-0.5f64..0.5)) {
        // affine jets; their product has degree 2 and fits any space of degree >= 2
        let sp = JetSpace::new(4);
        let affine = |c: &[f64]| {
            let mut j = Jet::constant(&sp, c[0]);
            for i in 0..3 {
                j.axpy(c[i + 1], &Jet::coord(&sp, i));
            }
            j
        };
        let (a, b) = (affine(&ca), affine(&cb));
        let prod = &a * &b;
        prop_assert!((prod.eval(s) - a.eval(s) * b.eval(s)).abs() <= 1e-14);
        let comm = &(&b * &a) - &prod;
        prop_assert!(comm.eval(s).abs() <= 1e-15);
        let d = prod.deriv(0);
        let expect = ca[1] * b.eval(s) + a.eval(s) * cb[1];
        prop_assert!((d.eval(s) - expect).abs() <= 1e-14);
    }
}
