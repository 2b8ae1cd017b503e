use lazynav_core::geometry::{Mat6, Transform, Vec3};
use lazynav_core::gnss_local::UtmPoint;
use lazynav_core::mapgraph::{TeachGraph, VertexId};
use lazynav_core::metrics::{
    checkpoint_errors, distance_since_localization_cdf, transition_jumps, LogRow, RepeatLog, Sensor,
};
use proptest::prelude::*;

/// A wiggly path with one fix per vertex, fixes shifted by `(de, dn)`.
fn graph(n: usize, de: f64, dn: f64) -> TeachGraph {
    let mut g = TeachGraph::new();
    for i in 0..n {
        let d = Transform::from_planar_pose(0.5, 0.01 * (i % 3) as f64, 0.02 * ((i % 5) as f64 - 2.0));
        let t = i as f64 * 0.5;
        let fix = UtmPoint::new(t, 1000.0 + de + t, 2000.0 + dn);
        g.add_vertex(d, Mat6::identity() * 1e-4, t, vec![fix], vec![Vec3::new(4.0, 1.0, 0.5)]).unwrap();
    }
    g
}

#[test]
fn twenty_one_half_metre_steps_make_ten_metres() {
    let mut g = TeachGraph::new();
    for i in 0..21 {
        g.add_vertex(
            Transform::from_translation(Vec3::new(0.5, 0.0, 0.0)),
            Mat6::identity() * 1e-4,
            i as f64,
            vec![],
            vec![],
        )
        .unwrap();
    }
    assert!((g.arc_length(20) - 10.0).abs() < 1e-12);
    assert_eq!(g.edges().len(), 20);
}

proptest! {
    #[test]
    fn gnss_offsets_do_not_touch_structure(de in -1e5..1e5f64, dn in -1e5..1e5f64, c in 0usize..40, hw in 0.1..3.0f64) {
        let (a, b) = (graph(40, 0.0, 0.0), graph(40, de, dn));
        prop_assert_eq!(a.arc_lengths(), b.arc_lengths());
        prop_assert_eq!(a.edges(), b.edges());
        let wa = a.recall_window(VertexId::teach(c), hw).unwrap();
        let wb = b.recall_window(VertexId::teach(c), hw).unwrap();
        prop_assert_eq!(wa.iter().map(|p| p.t).collect::<Vec<_>>(), wb.iter().map(|p| p.t).collect::<Vec<_>>());
        prop_assert!(wa.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn match_stays_within_five(last in 0usize..40, x in -10.0..10.0f64, y in -1.0..1.0f64) {
        let g = graph(40, 0.0, 0.0);
        let m = g.match_vertex(&Transform::from_translation(Vec3::new(x, y, 0.0)), VertexId::teach(last));
        prop_assert!(m.seq.abs_diff(last) <= 5);
    }

    #[test]
    fn recall_is_repeatable(c in 0usize..40) {
        let g = graph(40, 0.0, 0.0);
        prop_assert_eq!(g.recall_window(VertexId::teach(c), 0.5).unwrap(), g.recall_window(VertexId::teach(c), 0.5).unwrap());
    }
}

fn log_from(flags: &[(bool, bool)], lat: impl Fn(usize) -> f64) -> RepeatLog {
    RepeatLog::new(
        flags
            .iter()
            .enumerate()
            .map(|(i, &(gnss, vision))| LogRow {
                t: i as f64,
                s: 0.5 * i as f64,
                e_lat_true: lat(i),
                e_head_true: 0.1 * lat(i),
                e_lat_est: lat(i),
                e_head_est: 0.0,
                gnss,
                vision,
                cov_trace: 0.0,
                stopped: false,
            })
            .collect(),
    )
}

proptest! {
    #[test]
    fn cdf_is_monotone_and_either_dominates(flags in prop::collection::vec((any::<bool>(), any::<bool>()), 2..300), res in 0.1..3.0f64) {
        let log = log_from(&flags, |_| 0.0);
        let cdf = distance_since_localization_cdf(&log, res);
        for c in &cdf.curves {
            prop_assert!(c.points.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert!(c.points.iter().all(|p| (0.0..=1.0).contains(&p.1)));
        }
        let either = cdf.curve(Sensor::Either);
        for s in [Sensor::Gnss, Sensor::Vision] {
            for (e, p) in either.points.iter().zip(&cdf.curve(s).points) {
                prop_assert!(e.1 >= p.1);
            }
        }
    }

    #[test]
    fn checkpoints_survive_refinement(slopes in prop::collection::vec(-0.01..0.01f64, 4), cp in prop::collection::vec(0.0..99.0f64, 1..6)) {
        // Piecewise linear error with knots every 25 m, sampled at 5 m and 0.5 m.
        let f = |s: f64| {
            let k = ((s / 25.0) as usize).min(3);
            (0..k).map(|j| slopes[j] * 25.0).sum::<f64>() + slopes[k] * (s - 25.0 * k as f64)
        };
        let sample = |step: f64| {
            let n = (99.0 / step).round() as usize;
            RepeatLog::new(
                (0..=n)
                    .map(|i| {
                        let s = i as f64 * step;
                        LogRow { t: s, s, e_lat_true: f(s), e_head_true: 0.0, e_lat_est: 0.0, e_head_est: 0.0, gnss: true, vision: true, cov_trace: 0.0, stopped: false }
                    })
                    .collect(),
            )
        };
        let mut cp = cp;
        cp.sort_by(f64::total_cmp);
        let (coarse, fine) = (checkpoint_errors(&sample(5.0), &cp), checkpoint_errors(&sample(0.5), &cp));
        prop_assert_eq!(coarse.len(), fine.len());
        for (a, b) in coarse.iter().zip(&fine) {
            prop_assert!((a.lateral_error - b.lateral_error).abs() < 1e-12);
        }
    }
}

#[test]
fn jump_at_flag_flip_is_reported() {
    let flags: Vec<(bool, bool)> = (0..10).map(|i| (i >= 5, true)).collect();
    let log = log_from(&flags, |i| if i >= 5 { 0.05 } else { 0.0 });
    let jumps = transition_jumps(&log);
    assert_eq!(jumps.len(), 1);
    assert!((jumps[0].arc_length - 2.5).abs() < 1e-12);
    assert!((jumps[0].step_change - 0.05).abs() < 1e-12);
    assert!(transition_jumps(&log_from(&[(true, true); 6], |_| 0.3)).is_empty());
}

#[test]
fn twenty_metre_gap_in_hundred() {
    // Localized everywhere except a 20 m stretch.
    let flags: Vec<(bool, bool)> = (0..=200).map(|i| (false, !(100..140).contains(&i))).collect();
    let log = log_from(&flags, |_| 0.0);
    let cdf = distance_since_localization_cdf(&log, 0.5);
    let at1 = cdf.curve(Sensor::Either).at(1.0);
    assert!((at1 - 0.8).abs() <= 1.0 / 201.0 * 3.0, "{at1}");
}
