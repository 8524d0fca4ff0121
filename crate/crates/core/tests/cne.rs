use ndarray::{array, Array1, Array2};
use proptest::prelude::*;

use crossmax::cne::{channel_normalize, nearest_distance, open_set_probability, refine_logits, salient_mask, softmax};
use crossmax::{score_sample, Gallery, LogitsRecord};

fn unit_rows(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-5.0f64..5.0, rows * cols).prop_filter_map("zero row", move |v| {
        let m = Array2::from_shape_vec((rows, cols), v).ok()?;
        let mut out = m.clone();
        for (i, row) in m.rows().into_iter().enumerate() {
            let u = channel_normalize(row).ok()?;
            out.row_mut(i).assign(&u);
        }
        Some(out)
    })
}

fn record(lj: Vec<f64>, lb: Vec<f64>, lv: Vec<f64>, d: f64) -> LogitsRecord {
    LogitsRecord {
        id: "s".into(),
        label: None,
        joints: lj,
        bones: lb,
        velocities: lv,
        distances: [d; 3],
    }
}

#[test]
fn worked_distance_example() {
    let g = array![[1.0, 0.0], [0.0, 1.0]];
    let d = nearest_distance(array![0.6, 0.8].view(), g.view()).unwrap();
    assert!((d - 0.4f64.sqrt()).abs() < 1e-12);
    assert!((d - 0.6325).abs() < 1e-4);
}

#[test]
fn refinement_at_half_distance() {
    let r = refine_logits(&[2.0, 1.0, 0.0], 0, 0.5).unwrap();
    assert_eq!(r, vec![0.5, 0.25, 0.0]);
    let p = softmax(&r);
    let e: Vec<f64> = r.iter().map(|x| x.exp()).collect();
    let z: f64 = e.iter().sum();
    for (a, b) in p.iter().zip(&e) {
        assert!((a - b / z).abs() < 1e-15);
    }
    assert!((p[0] - 0.41923).abs() < 1e-5);
    assert!((p[1] - 0.32649).abs() < 1e-5);
    assert!((p[2] - 0.25428).abs() < 1e-5);
    let res = open_set_probability(&r).unwrap();
    assert_eq!(res.predicted_class, 0);
    assert_eq!(res.p_prob, p[0]);
}

#[test]
fn tie_break_and_equal_logits() {
    let (mean, mp) = salient_mask(&[3.0, 0.0], &[0.0, 3.0], &[0.0, 0.0]).unwrap();
    assert_eq!((mean, mp), (vec![1.0, 1.0], 0));
    for d in [0.1, 0.5, 0.9] {
        let r = refine_logits(&[1.0, 1.0, 1.0], 0, d).unwrap();
        assert_eq!(r[1], r[2]);
        assert_eq!(r[0] - r[1], (1.0 / d - 1.0f64).ln());
    }
}

#[test]
fn monotone_limits() {
    let probs: Vec<f64> = [1e-4, 1e-2, 0.99, 0.9999]
        .iter()
        .map(|&d| softmax(&refine_logits(&[2.0, 1.0, 0.0], 0, d).unwrap())[0])
        .collect();
    assert!(probs.windows(2).all(|w| w[1] < w[0]), "{probs:?}");
    assert!(probs[0] >= 0.99);
    assert!(probs[3] <= 0.01);
}

#[test]
fn log_term_strictly_decreasing() {
    let mut prev = f64::INFINITY;
    for i in 1..1000 {
        let d = i as f64 / 1000.0;
        let v = (1.0 / d - 1.0f64).ln();
        assert!(v < prev);
        prev = v;
    }
}

proptest! {
    #[test]
    fn distances_bounded_and_zero_on_members(g in unit_rows(6, 4), q in unit_rows(3, 4)) {
        for row in q.rows() {
            let d = nearest_distance(row, g.view()).unwrap();
            prop_assert!((0.0..=2.0).contains(&d));
        }
        for row in g.rows() {
            prop_assert!(nearest_distance(row, g.view()).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn gallery_self_distance_zero(j in unit_rows(5, 3), b in unit_rows(5, 3), v in unit_rows(5, 3)) {
        let scale = |m: &Array2<f64>| m * 3.5;
        let gallery = Gallery::build(&scale(&j), &scale(&b), &scale(&v)).unwrap();
        for (m, x) in crossmax::Modality::ALL.iter().zip([&j, &b, &v]) {
            for d in gallery.distances(*m, x).unwrap() {
                prop_assert!(d <= 1e-9);
            }
        }
    }

    #[test]
    fn salient_stays_argmax_up_to_half(
        l in proptest::collection::vec(-20.0f64..20.0, 2..10),
        d in 0.0f64..=0.5,
    ) {
        let (mean, mp) = salient_mask(&l, &l, &l).unwrap();
        let refined = refine_logits(&mean, mp, d).unwrap();
        prop_assert_eq!(crossmax::cne::argmax(&refined), mp);
    }

    #[test]
    fn disabled_refinement_is_vanilla(
        lj in proptest::collection::vec(-20.0f64..20.0, 3),
        lb in proptest::collection::vec(-20.0f64..20.0, 3),
        lv in proptest::collection::vec(-20.0f64..20.0, 3),
        d in 0.0f64..2.0,
    ) {
        let r = score_sample(&record(lj.clone(), lb.clone(), lv.clone(), d), false).unwrap();
        let mean: Vec<f64> = (0..3).map(|k| (lj[k] + lb[k] + lv[k]) / 3.0).collect();
        let p = softmax(&mean);
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(r.p_prob.to_bits(), max.to_bits());
    }

    #[test]
    fn normalized_rows_are_unit(v in proptest::collection::vec(-100.0f64..100.0, 1..16)) {
        let a = Array1::from(v);
        if a.dot(&a).sqrt() > 1e-6 {
            let u = channel_normalize(a.view()).unwrap();
            prop_assert!((u.dot(&u) - 1.0).abs() < 1e-12);
        }
    }
}
