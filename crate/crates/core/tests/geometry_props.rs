use proptest::prelude::*;
use repgap_core::corpus::{mask_bbox, polygon_bbox, rasterize_polygon, BBox};

/// Even-odd ray cast from the pixel centre towards +x.
fn pnpoly(points: &[[f64; 2]], px: f64, py: f64) -> bool {
    let n = points.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = points[i];
        let [xj, yj] = points[j];
        if (yi > py) != (yj > py) && px < xi + (py - yi) * (xj - xi) / (yj - yi) {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn brute_bbox(points: &[[f64; 2]], side: u32) -> Option<BBox> {
    let mut rows: Option<(u32, u32)> = None;
    let mut cols: Option<(u32, u32)> = None;
    for r in 0..side {
        for c in 0..side {
            if pnpoly(points, c as f64 + 0.5, r as f64 + 0.5) {
                rows = Some(rows.map_or((r, r), |(a, b)| (a.min(r), b.max(r))));
                cols = Some(cols.map_or((c, c), |(a, b)| (a.min(c), b.max(c))));
            }
        }
    }
    Some(BBox::from_inclusive(rows?, cols?))
}

const SIDE: u32 = 48;

fn polygon() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0f64..40.0, 0.0f64..40.0).prop_map(|(x, y)| [x, y]), 3..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn bbox_matches_point_in_polygon(points in polygon()) {
        let oracle = brute_bbox(&points, SIDE);
        match polygon_bbox(&points) {
            Ok(b) => prop_assert_eq!(Some(b), oracle),
            Err(_) => prop_assert!(oracle.is_none() || points.len() < 3),
        }
    }

    #[test]
    fn raster_matches_point_in_polygon(points in polygon()) {
        let mask = rasterize_polygon(&points, SIDE, SIDE);
        for r in 0..SIDE {
            for c in 0..SIDE {
                let want = pnpoly(&points, c as f64 + 0.5, r as f64 + 0.5);
                prop_assert_eq!(mask[(r * SIDE + c) as usize] == 1, want, "pixel ({}, {})", r, c);
            }
        }
        if let Ok(b) = mask_bbox(&mask, SIDE, SIDE) {
            prop_assert_eq!(Some(b), brute_bbox(&points, SIDE));
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        a in (0u32..50, 0u32..50, 1u32..30, 1u32..30),
        b in (0u32..50, 0u32..50, 1u32..30, 1u32..30),
    ) {
        let a = BBox::new(a.0, a.1, a.2, a.3);
        let b = BBox::new(b.0, b.1, b.2, b.3);
        prop_assert_eq!(a.iou(&b), b.iou(&a));
        prop_assert!((0.0..=1.0).contains(&a.iou(&b)));
        prop_assert_eq!(a.iou(&a), 1.0);
    }
}
