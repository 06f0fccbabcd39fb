//! Diff, placement and the rule-based suggester against brute-force oracles.

use inkloop_core::backends::sim::apply_ops;
use inkloop_core::boxmodel::{assign_occurrences, iou, BoundingBox, ObjectList, SceneObject};
use inkloop_core::elements::KeyElementSet;
use inkloop_core::suggest::{
    diff_objects, place_missing, placement_cells, rule_based_suggest, EditKind, SuggestConfig,
};
use proptest::prelude::*;

fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(x, y, w, h).unwrap()
}

type Key = (String, u32);

fn key(o: &SceneObject) -> Key {
    (o.name.clone(), o.occurrence)
}

/// Ops as comparable tuples: (kind, subject key, target key).
type OpTuple = (EditKind, Option<Key>, Option<Key>);

/// Straight transcription of the matching rules: same key and box within
/// 1e-3 retains, same key otherwise moves; leftovers are fused one pair at a
/// time by scanning every pair for the highest IoU of at least 0.9.
fn oracle_diff(current: &ObjectList, updated: &ObjectList) -> Vec<OpTuple> {
    let c = current.objects();
    let u = updated.objects();
    let mut retain = vec![];
    let mut moves = vec![];
    let mut c_left = vec![];
    for (i, co) in c.iter().enumerate() {
        match u.iter().find(|uo| key(uo) == key(co)) {
            Some(uo) => {
                let a = co.bbox.as_array();
                let b = uo.bbox.as_array();
                let close = (0..4).all(|k| (a[k] - b[k]).abs() < 1e-3);
                if close {
                    retain.push((EditKind::Retain, Some(key(co)), None));
                } else {
                    moves.push((EditKind::Move, Some(key(co)), Some(key(uo))));
                }
            }
            None => c_left.push(i),
        }
    }
    let mut u_left: Vec<usize> = (0..u.len())
        .filter(|&j| !c.iter().any(|co| key(co) == key(&u[j])))
        .collect();
    let mut fused = vec![];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for &i in &c_left {
            for &j in &u_left {
                let v = iou(&c[i].bbox, &u[j].bbox);
                if v >= 0.9
                    && best.is_none_or(|(bv, bi, bj)| v > bv || (v == bv && (i, j) < (bi, bj)))
                {
                    best = Some((v, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        fused.push((i, j));
        c_left.retain(|&x| x != i);
        u_left.retain(|&x| x != j);
    }
    fused.sort();
    let mut out = retain;
    out.extend(
        fused
            .iter()
            .map(|&(i, j)| (EditKind::Replace, Some(key(&c[i])), Some(key(&u[j])))),
    );
    out.extend(moves);
    out.extend(
        c_left
            .iter()
            .map(|&i| (EditKind::Remove, Some(key(&c[i])), None)),
    );
    out.extend(
        u_left
            .iter()
            .map(|&j| (EditKind::Add, None, Some(key(&u[j])))),
    );
    out
}

fn pool_box() -> impl Strategy<Value = BoundingBox> {
    // A handful of anchors and tiny shifts of them, so that exact retains,
    // near-identical replaces and clear moves all occur.
    let anchors: [[f64; 4]; 4] = [
        [0.1, 0.1, 0.3, 0.3],
        [0.5, 0.5, 0.4, 0.4],
        [0.6, 0.1, 0.2, 0.5],
        [0.0, 0.7, 1.0, 0.3],
    ];
    (
        0usize..4,
        prop::sample::select(vec![0.0, 0.0005, 0.004, 0.2]),
    )
        .prop_map(move |(a, d)| {
            let [x, y, w, h] = anchors[a];
            bx((x + d).min(1.0 - w), y, w, h)
        })
}

fn small_list() -> impl Strategy<Value = ObjectList> {
    let names = prop::sample::select(vec!["moon", "peak", "crane", "boat"]);
    prop::collection::vec((names, pool_box()), 0..6).prop_map(assign_occurrences)
}

fn tuples(plan: &inkloop_core::suggest::EditPlan) -> Vec<OpTuple> {
    plan.ops
        .iter()
        .map(|op| (op.kind(), op.subject().map(key), op.target().map(key)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn diff_matches_oracle(cur in small_list(), upd in small_list()) {
        let plan = diff_objects(&cur, &upd, 1);
        prop_assert_eq!(tuples(&plan), oracle_diff(&cur, &upd));
    }

    #[test]
    fn diff_accounts_for_every_object(cur in small_list(), upd in small_list()) {
        let plan = diff_objects(&cur, &upd, 1);
        let n = |k| plan.count(k);
        prop_assert_eq!(n(EditKind::Retain) + n(EditKind::Move) + n(EditKind::Replace) + n(EditKind::Remove), cur.len());
        prop_assert_eq!(n(EditKind::Retain) + n(EditKind::Move) + n(EditKind::Replace) + n(EditKind::Add), upd.len());
    }

    #[test]
    fn applying_the_plan_reconstructs_the_update(cur in small_list(), upd in small_list()) {
        let plan = diff_objects(&cur, &upd, 1);
        let scene = apply_ops(&cur, &plan.ops).unwrap();
        prop_assert_eq!(scene.len(), upd.len());
        for o in upd.iter() {
            let got = scene.iter().find(|s| s.name == o.name && s.bbox.max_abs_diff(&o.bbox) < 1e-3);
            prop_assert!(got.is_some(), "{} missing after apply", o.tag());
        }
        let again = diff_objects(&scene, &upd, 2);
        prop_assert!(again.ops.iter().all(|op| matches!(op.kind(), EditKind::Retain | EditKind::Move)));
    }

    #[test]
    fn self_diff_is_all_retain(l in small_list()) {
        prop_assert!(diff_objects(&l, &l, 0).is_all_retain());
    }
}

/// Cells enumerated by hand: offsets 1/6 - 0.125 etc. rounded to 3 places.
fn oracle_cells() -> Vec<[f64; 4]> {
    let offs = [0.042, 0.375, 0.708];
    let mut v = vec![];
    for y in offs {
        for x in offs {
            v.push([x, y, 0.25, 0.25]);
        }
    }
    v
}

#[test]
fn placement_grid_matches_enumeration() {
    let got: Vec<[f64; 4]> = placement_cells().iter().map(|b| b.as_array()).collect();
    assert_eq!(got, oracle_cells());
}

proptest! {
    #[test]
    fn placement_minimizes_worst_overlap(boxes in prop::collection::vec(pool_box(), 0..6)) {
        let chosen = place_missing(&boxes);
        let worst = |c: &BoundingBox| boxes.iter().map(|b| iou(c, b)).fold(0.0, f64::max);
        let cells = placement_cells();
        let best = cells.iter().map(worst).fold(f64::INFINITY, f64::min);
        let first = cells.iter().position(|c| worst(c) == best).unwrap();
        prop_assert_eq!(chosen, cells[first]);
    }
}

#[test]
fn empty_scene_places_top_left() {
    assert_eq!(place_missing(&[]).as_array(), [0.042, 0.042, 0.25, 0.25]);
}

fn key_set() -> impl Strategy<Value = KeyElementSet> {
    prop::sample::subsequence(vec!["moon", "peak", "crane", "boat", "river"], 1..=5)
        .prop_map(|names| KeyElementSet::from_labels(names, "r"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn rule_output_covers_key_exactly(cur in small_list(), key in key_set()) {
        let out = rule_based_suggest(&cur, &key, &SuggestConfig::default());
        let names = key.names();
        prop_assert!(out.iter().all(|o| names.contains(&o.name)));
        prop_assert!(names.iter().all(|n| out.contains_name(n)));
    }

    #[test]
    fn rule_is_idempotent(cur in small_list(), key in key_set()) {
        let cfg = SuggestConfig::default();
        let once = rule_based_suggest(&cur, &key, &cfg);
        let twice = rule_based_suggest(&once, &key, &cfg);
        prop_assert_eq!(&twice, &once);
    }
}

#[test]
fn rule_drops_non_key_objects() {
    let cur = assign_occurrences([
        ("incense burner", bx(0.3, 0.3, 0.2, 0.2)),
        ("peak", bx(0.0, 0.0, 0.9, 0.4)),
    ]);
    let key = KeyElementSet::from_labels(["peak"], "r");
    let out = rule_based_suggest(&cur, &key, &SuggestConfig::default());
    assert_eq!(out.len(), 1);
    assert_eq!(out.objects()[0].name, "peak");
}

#[test]
fn covered_top_row_pushes_placement_down() {
    let band = bx(0.0, 0.0, 1.0, 0.33);
    assert_eq!(
        place_missing(&[band]).as_array(),
        [0.042, 0.375, 0.25, 0.25]
    );
}

#[test]
fn empty_scene_fills_cells_in_row_major_order() {
    let key = KeyElementSet::from_labels(["moon", "river"], "r");
    let out = rule_based_suggest(&ObjectList::empty(), &key, &SuggestConfig::default());
    let mut boxes: Vec<[f64; 4]> = out.iter().map(|o| o.bbox.as_array()).collect();
    boxes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(
        boxes,
        [[0.042, 0.042, 0.25, 0.25], [0.375, 0.042, 0.25, 0.25]]
    );
}
