//! IoU, validation and the object-list text format.

use inkloop_core::boxmodel::{
    assign_occurrences, iou, parse_object_list, serialize_object_list, validate_box, BoundingBox,
    BoxField, ObjectList, SceneObject,
};
use proptest::prelude::*;

/// IoU by counting cells of a `n` x `n` grid whose centres fall inside both
/// or either box. Exact for boxes on grid lines.
fn raster_iou(a: [f64; 4], b: [f64; 4], n: usize) -> f64 {
    let inside = |r: [f64; 4], px: f64, py: f64| {
        px > r[0] && px < r[0] + r[2] && py > r[1] && py < r[1] + r[3]
    };
    let (mut both, mut either) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            let (px, py) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
            let (ia, ib) = (inside(a, px, py), inside(b, px, py));
            both += (ia && ib) as usize;
            either += (ia || ib) as usize;
        }
    }
    both as f64 / either as f64
}

fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(x, y, w, h).unwrap()
}

#[test]
fn quarter_offset_squares_give_one_seventh() {
    let (a, b) = ([0.0, 0.0, 0.5, 0.5], [0.25, 0.25, 0.5, 0.5]);
    let oracle = raster_iou(a, b, 100);
    assert!((oracle - 1.0 / 7.0).abs() < 1e-12);
    let got = iou(&bx(0.0, 0.0, 0.5, 0.5), &bx(0.25, 0.25, 0.5, 0.5));
    assert!((got - oracle).abs() < 1e-12, "{got}");
}

#[test]
fn identity_and_disjoint() {
    let a = bx(0.1, 0.2, 0.3, 0.4);
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(iou(&a, &bx(0.6, 0.7, 0.1, 0.1)), 0.0);
    // Touching edges share no area.
    assert_eq!(iou(&bx(0.0, 0.0, 0.5, 0.5), &bx(0.5, 0.0, 0.5, 0.5)), 0.0);
}

fn grid_box() -> impl Strategy<Value = [f64; 4]> {
    (0u32..20, 0u32..20)
        .prop_flat_map(|(x, y)| (Just(x), Just(y), 1..=(20 - x), 1..=(20 - y)))
        .prop_map(|(x, y, w, h)| {
            [
                x as f64 / 20.0,
                y as f64 / 20.0,
                w as f64 / 20.0,
                h as f64 / 20.0,
            ]
        })
}

fn any_box() -> impl Strategy<Value = BoundingBox> {
    (0u32..1000, 0u32..1000, 1u32..=1000, 1u32..=1000).prop_map(|(x, y, w, h)| {
        bx(
            x as f64 / 1000.0,
            y as f64 / 1000.0,
            w as f64 / 1000.0,
            h as f64 / 1000.0,
        )
    })
}

proptest! {
    #[test]
    fn iou_matches_raster_oracle(a in grid_box(), b in grid_box()) {
        let got = iou(&bx(a[0], a[1], a[2], a[3]), &bx(b[0], b[1], b[2], b[3]));
        prop_assert!((got - raster_iou(a, b, 20)).abs() < 1e-9);
    }

    #[test]
    fn iou_symmetric_bounded_reflexive(a in any_box(), b in any_box()) {
        let ab = iou(&a, &b);
        prop_assert_eq!(ab, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn worked_example_peak_box_passes_coordinates_and_warns_on_vertical_extent() {
    let report = validate_box(0.021, 0.983, 0.949, 0.389);
    assert!(!report.has_errors());
    let warned: Vec<BoxField> = report.warnings().map(|w| w.field).collect();
    // x + w = 0.970 stays inside; y + h = 1.372 does not.
    assert_eq!(warned, vec![BoxField::ExtentY]);
}

#[test]
fn validation_examples() {
    assert!(validate_box(0.1, 0.1, 0.2, 0.2).is_clean());
    let r = validate_box(-0.1, 0.0, 0.5, 0.5);
    assert_eq!(
        r.errors().map(|e| e.field).collect::<Vec<_>>(),
        vec![BoxField::X]
    );
    assert!(validate_box(0.1, 0.1, 0.0, 0.2).has_errors());
    assert!(BoundingBox::new(0.5, 0.5, 0.0, 0.1).is_err());
}

fn any_list() -> impl Strategy<Value = ObjectList> {
    let names = prop::sample::select(vec![
        "moon",
        "peak",
        "white crane",
        "plum blossom",
        "o'brien's boat",
        "river",
    ]);
    prop::collection::vec((names, any_box()), 0..8).prop_map(assign_occurrences)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn parse_serialize_round_trip(list in any_list()) {
        let text = serialize_object_list(&list);
        let back = parse_object_list(&text).unwrap();
        prop_assert_eq!(&back, &list);
        prop_assert_eq!(serialize_object_list(&back), text);
    }
}

#[test]
fn serialize_examples() {
    assert_eq!(serialize_object_list(&ObjectList::empty()), "[]");
    let one = ObjectList::new(vec![SceneObject::new("moon", 1, bx(0.5, 0.5, 0.25, 0.25))]).unwrap();
    assert_eq!(
        serialize_object_list(&one),
        "[('moon #1', [0.500, 0.500, 0.250, 0.250])]"
    );
}

#[test]
fn occurrence_numbering() {
    let b = bx(0.1, 0.1, 0.1, 0.1);
    let l = assign_occurrences([("bird", b), ("bird", b), ("tree", b)]);
    let tags: Vec<String> = l.iter().map(|o| o.tag()).collect();
    assert_eq!(tags, ["bird #1", "bird #2", "tree #1"]);
    let l = assign_occurrences([("Bird ", b), ("bird", b)]);
    let tags: Vec<String> = l.iter().map(|o| o.tag()).collect();
    assert_eq!(tags, ["bird #1", "bird #2"]);
    assert!(assign_occurrences(Vec::<(&str, BoundingBox)>::new()).is_empty());
}

#[test]
fn tolerant_inputs() {
    let l =
        parse_object_list(r#"[("moon", [0.5, 0.5, 0.25, 0.25]), ('moon #2',[0.1,0.1,0.1,0.1]),]"#)
            .unwrap();
    assert_eq!(l.len(), 2);
    assert_eq!(l.objects()[0].occurrence, 1);
    assert!(parse_object_list("[('moon #1', [0.5, x, 0.2, 0.2])]").is_err());
    assert!(parse_object_list(
        "[('moon #1', [0.5, 0.5, 0.2, 0.2]), ('moon #1', [0.1, 0.1, 0.1, 0.1])]"
    )
    .is_err());
    assert!(parse_object_list("[('moon #1', [0.5, 0.5, 0.2").is_err());
}
