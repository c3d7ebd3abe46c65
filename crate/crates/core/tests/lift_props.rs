mod common;

use common::{rel_err, tensor_rel_err};
use proptest::prelude::*;
use roughdyadic::lift::{dyadic_diff, dyadic_level1, dyadic_level2, lift_polygonal, lift_segment, DyadicLiftTable};
use roughdyadic::paths::{DyadicBrownianPath, PolygonalPath};
use roughdyadic::GroupTensor2;

#[test]
fn segment_lift_is_half_square() {
    let g = lift_segment(&[2.0, -1.0]);
    assert_eq!(g.level1(), &[2.0, -1.0]);
    assert_eq!(g.level2(), &[2.0, -1.0, -1.0, 0.5]);
}

#[test]
fn unit_square_area() {
    let square = PolygonalPath::from_vertices(
        2,
        2,
        vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0],
    )
    .unwrap();
    let g = lift_polygonal(&square, 0.0, 1.0).unwrap();
    assert!(g.level1().iter().all(|x| x.abs() < 1e-15));
    assert!((g.area()[1] - 1.0).abs() < 1e-14);
}

#[test]
fn rejects_bad_intervals() {
    let p = DyadicBrownianPath::generate(1, 3, 0).unwrap().polygonal(3).unwrap();
    assert!(lift_polygonal(&p, 0.5, 0.5).is_err());
    assert!(lift_polygonal(&p, -0.1, 0.5).is_err());
    assert!(lift_polygonal(&p, 0.2, 1.1).is_err());
    let w = DyadicBrownianPath::generate(1, 3, 0).unwrap();
    assert!(dyadic_level1(&w, 4, 1, 1).is_err());
    assert!(dyadic_diff(&w, 3, 1, 1, 1).is_err());
    assert!(dyadic_diff(&w, 1, 1, 1, 3).is_err());
}

fn closed_form(w: &DyadicBrownianPath, m: u32, n: u32, k: u64) -> GroupTensor2 {
    GroupTensor2::new(
        w.dim(),
        dyadic_level1(w, m, n, k).unwrap(),
        dyadic_level2(w, m, n, k).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn closed_forms_match_generic(seed in any::<u64>(), d in 1usize..4, m in 0u32..7, n in 0u32..9) {
        let w = DyadicBrownianPath::generate(d, 7, seed).unwrap();
        let poly = w.polygonal(m).unwrap();
        let table = DyadicLiftTable::new(&poly);
        let h = 1.0 / (1u64 << n) as f64;
        for k in [1u64, (1u64 << n).div_ceil(2), 1u64 << n] {
            let generic = lift_polygonal(&poly, (k - 1) as f64 * h, k as f64 * h).unwrap();
            prop_assert!(tensor_rel_err(&closed_form(&w, m, n, k), &generic) <= 1e-12);
            prop_assert!(tensor_rel_err(&table.increment(n, k).unwrap(), &generic) <= 1e-12);
        }
    }

    #[test]
    fn chen_identity(seed in any::<u64>(), d in 1usize..4, m in 0u32..6, cuts in prop::collection::vec(0u32..=64, 3)) {
        let poly = DyadicBrownianPath::generate(d, 6, seed).unwrap().polygonal(m).unwrap();
        let mut c = cuts;
        c.sort_unstable();
        prop_assume!(c[0] < c[1] && c[1] < c[2]);
        let [s, u, t] = [c[0], c[1], c[2]].map(|x| x as f64 / 64.0);
        let left = lift_polygonal(&poly, s, u).unwrap();
        let right = lift_polygonal(&poly, u, t).unwrap();
        let whole = lift_polygonal(&poly, s, t).unwrap();
        prop_assert!(tensor_rel_err(&left.chen_mul(&right).unwrap(), &whole) <= 1e-12);
    }

    #[test]
    fn lifts_are_geometric(seed in any::<u64>(), d in 1usize..4, m in 0u32..6, a in 0.0f64..0.5, b in 0.5f64..=1.0) {
        let poly = DyadicBrownianPath::generate(d, 6, seed).unwrap().polygonal(m).unwrap();
        let g = lift_polygonal(&poly, a, b).unwrap();
        let scale = 1.0 + g.level_norms().0.powi(2);
        prop_assert!(g.geometric_defect() <= 1e-12 * scale);
        let x0 = poly.eval(a).unwrap();
        let x1 = poly.eval(b).unwrap();
        let inc: Vec<f64> = x1.iter().zip(&x0).map(|(p, q)| p - q).collect();
        prop_assert!(rel_err(g.level1(), &inc) <= 1e-12);
    }

    #[test]
    fn dilation_scales_levels(seed in any::<u64>(), lambda in -3.0f64..3.0) {
        let w = DyadicBrownianPath::generate(2, 5, seed).unwrap();
        let poly = w.polygonal(5).unwrap();
        let scaled = PolygonalPath::from_vertices(2, 5, poly.vertices().iter().map(|x| lambda * x).collect()).unwrap();
        let a = lift_polygonal(&scaled, 0.25, 0.75).unwrap();
        let b = lift_polygonal(&poly, 0.25, 0.75).unwrap().dilate(lambda);
        prop_assert!(tensor_rel_err(&a, &b) <= 1e-12);
    }

    #[test]
    fn area_is_shoelace(seed in any::<u64>(), m in 1u32..7) {
        let poly = DyadicBrownianPath::generate(2, 7, seed).unwrap().polygonal(m).unwrap();
        let v0 = poly.vertex(0).to_vec();
        let mut shoelace = 0.0;
        for k in 0..poly.segments() {
            let (p, q) = (poly.vertex(k), poly.vertex(k + 1));
            shoelace += 0.5 * ((p[0] - v0[0]) * (q[1] - v0[1]) - (p[1] - v0[1]) * (q[0] - v0[0]));
        }
        let g = lift_polygonal(&poly, 0.0, 1.0).unwrap();
        prop_assert!((g.area()[1] - shoelace).abs() <= 1e-12 * (1.0 + shoelace.abs()));
    }

    #[test]
    fn differences_vanish_above_resolution(seed in any::<u64>(), m in 0u32..6, n in 0u32..8) {
        let w = DyadicBrownianPath::generate(2, 7, seed).unwrap();
        for k in [1u64, 1u64 << n] {
            let x1 = dyadic_diff(&w, m, n, k, 1).unwrap();
            if n <= m {
                prop_assert!(x1.iter().all(|x| *x == 0.0));
            }
            let a = dyadic_level2(&w, m + 1, n, k).unwrap();
            let b = dyadic_level2(&w, m, n, k).unwrap();
            let x2 = dyadic_diff(&w, m, n, k, 2).unwrap();
            let expect: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
            prop_assert!(rel_err(&x2, &expect) <= 1e-12);
        }
    }
}
