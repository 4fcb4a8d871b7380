use nuisance_core::splits::{gtb_split_with, GtbPlan, SplitPlan};
use nuisance_core::{gtb_split, gu_split, synth_generate, SynthSpec};

fn plan(p: &SplitPlan) -> &GtbPlan {
    match p {
        SplitPlan::Gtb(g) => g,
        SplitPlan::Gu(_) => panic!("expected a GTB plan"),
    }
}

#[test]
fn gtb_counts_are_exact() {
    let d = synth_generate(&SynthSpec { n_sources: 10, per_cell: 1000, seed: 1, ..Default::default() }).unwrap();
    let sr = gtb_split(&d, 0.7, 5).unwrap();
    let p = plan(&sr.plan);
    assert!(p.dropped_sources.is_empty());
    for s in 0..10 {
        let fav = p.favored[s].unwrap();
        assert_eq!(sr.train.count(fav, s), 560);
        assert_eq!(sr.train.count(1 - fav, s), 240);
    }
    let totals = sr.train.contingency().row_totals();
    assert_eq!(totals[0], totals[1]);
    for s in 0..10 {
        for y in 0..2 {
            assert_eq!(sr.test_shifted.count(y, s), 200);
        }
    }
}

#[test]
fn gtb_three_labels_and_odd_sources() {
    let d = synth_generate(&SynthSpec { n_sources: 7, n_labels: 3, per_cell: 50, seed: 2, ..Default::default() }).unwrap();
    let sr = gtb_split_with(&d, 0.6, 0.2, 3).unwrap();
    let p = plan(&sr.plan);
    assert_eq!(p.dropped_sources.len(), 1);
    assert_eq!(p.groups.len(), 2);
    for g in &p.groups {
        let mut fav: Vec<usize> = g.iter().map(|&s| p.favored[s].unwrap()).collect();
        fav.sort_unstable();
        assert_eq!(fav, vec![0, 1, 2]);
        for &s in g {
            let f = p.favored[s].unwrap();
            for y in 0..3 {
                let expect = if y == f { 24 } else { 8 };
                assert_eq!(sr.train.count(y, s), expect);
            }
        }
    }
    let dropped = p.dropped_sources[0];
    assert!((0..3).all(|y| sr.train.count(y, dropped) == 0));
    assert!((0..3).all(|y| sr.test_shifted.count(y, dropped) == 0));
    let totals = sr.train.contingency().row_totals();
    assert!(totals.iter().all(|&t| t == totals[0]));
}

#[test]
fn training_sets_are_nested_in_beta() {
    let d = synth_generate(&SynthSpec { n_sources: 4, per_cell: 100, seed: 3, ..Default::default() }).unwrap();
    let ids = |b: f64| -> Vec<u64> {
        let sr = gtb_split(&d, b, 9).unwrap();
        let mut v: Vec<u64> = sr.train.samples().iter().map(|s| s.id).collect();
        v.sort_unstable();
        v
    };
    let (lo, hi) = (ids(0.6), ids(0.9));
    let sr_lo = gtb_split(&d, 0.6, 9).unwrap();
    let sr_hi = gtb_split(&d, 0.9, 9).unwrap();
    assert_eq!(plan(&sr_lo.plan).favored, plan(&sr_hi.plan).favored);
    assert_eq!(sr_lo.test_shifted, sr_hi.test_shifted);
    // The favored share grows with beta, the other share shrinks.
    for s in sr_lo.train.samples() {
        let fav = plan(&sr_lo.plan).favored[s.nuisance].unwrap();
        if s.label == fav {
            assert!(hi.binary_search(&s.id).is_ok());
        }
    }
    for s in sr_hi.train.samples() {
        let fav = plan(&sr_hi.plan).favored[s.nuisance].unwrap();
        if s.label != fav {
            assert!(lo.binary_search(&s.id).is_ok());
        }
    }
}

#[test]
fn gu_partitions_sources() {
    let d = synth_generate(&SynthSpec { n_sources: 10, per_cell: 30, seed: 4, ..Default::default() }).unwrap();
    for seed in 0..5 {
        let sr = gu_split(&d, 4, seed).unwrap();
        let SplitPlan::Gu(p) = &sr.plan else { panic!() };
        assert_eq!(p.unknown.len(), 4);
        assert_eq!(p.known.len(), 6);
        assert!(sr.test_shifted.samples().iter().all(|s| p.unknown.contains(&s.nuisance)));
        assert!(sr.train.samples().iter().chain(sr.test_same.samples()).all(|s| p.known.contains(&s.nuisance)));
        assert_eq!(sr.test_shifted.len(), 4 * 2 * 30);
        assert_eq!(sr.train.len() + sr.test_same.len(), 6 * 2 * 30);
        assert_eq!(sr.test_same.len(), 6 * 2 * 6);
    }
}
