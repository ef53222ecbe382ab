use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in integer pixel coordinates.
///
/// `x`/`y` are the column/row of the top-left pixel; the box covers columns
/// `x..x + width` and rows `y..y + height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    /// Box spanning the inclusive row and column ranges.
    pub fn from_inclusive(rows: (u32, u32), cols: (u32, u32)) -> Self {
        Self::new(cols.0, rows.0, cols.1 - cols.0 + 1, rows.1 - rows.0 + 1)
    }

    pub fn right(&self) -> u32 {
        self.x + self.width
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.height
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn is_degenerate(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    /// Inclusive `(first, last)` row range.
    pub fn rows(&self) -> (u32, u32) {
        (self.y, self.bottom() - 1)
    }

    /// Inclusive `(first, last)` column range.
    pub fn cols(&self) -> (u32, u32) {
        (self.x, self.right() - 1)
    }

    pub fn contains_pixel(&self, row: u32, col: u32) -> bool {
        row >= self.y && row < self.bottom() && col >= self.x && col < self.right()
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let w = self
            .right()
            .min(other.right())
            .saturating_sub(self.x.max(other.x));
        let h = self
            .bottom()
            .min(other.bottom())
            .saturating_sub(self.y.max(other.y));
        w as u64 * h as u64
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }

    /// Intersection with a `width`×`height` image, `None` when empty.
    pub fn clip_to(&self, width: u32, height: u32) -> Option<BBox> {
        let right = self.right().min(width);
        let bottom = self.bottom().min(height);
        if self.x >= right || self.y >= bottom {
            return None;
        }
        Some(BBox::new(self.x, self.y, right - self.x, bottom - self.y))
    }
}

/// Tightest box around every non-zero pixel of a row-major mask.
pub fn mask_bbox(mask: &[u8], width: u32, height: u32) -> Result<BBox> {
    debug_assert_eq!(mask.len(), width as usize * height as usize);
    let mut rows: Option<(u32, u32)> = None;
    let mut cols: Option<(u32, u32)> = None;
    for (r, line) in mask.chunks_exact(width.max(1) as usize).enumerate() {
        let first = line.iter().position(|&v| v != 0);
        let Some(first) = first else { continue };
        let last = line.iter().rposition(|&v| v != 0).unwrap_or(first);
        let r = r as u32;
        rows = Some(rows.map_or((r, r), |(a, _)| (a, r)));
        cols = Some(cols.map_or((first as u32, last as u32), |(a, b)| {
            (a.min(first as u32), b.max(last as u32))
        }));
    }
    match (rows, cols) {
        (Some(rows), Some(cols)) => Ok(BBox::from_inclusive(rows, cols)),
        _ => Err(Error::Validation("empty annotation".into())),
    }
}

/// Validates a polygon: at least three finite vertices and non-zero area.
pub fn validate_polygon(points: &[[f64; 2]]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Validation(format!(
            "polygon needs at least 3 vertices, got {}",
            points.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("polygon has non-finite vertex".into()));
    }
    if shoelace_area(points).abs() < 1e-12 {
        return Err(Error::Validation("degenerate polygon (zero area)".into()));
    }
    Ok(())
}

fn shoelace_area(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let [x0, y0] = points[i];
            let [x1, y1] = points[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        * 0.5
}

/// Sorted x coordinates where the polygon boundary crosses the horizontal
/// line at `y`. A pixel centre `px` on that line is inside iff an odd number
/// of crossings lie strictly to its right.
fn scanline_crossings(points: &[[f64; 2]], y: f64) -> Vec<f64> {
    let n = points.len();
    let mut xs = Vec::new();
    for i in 0..n {
        let [xi, yi] = points[i];
        let [xj, yj] = points[(i + n - 1) % n];
        if (yi > y) != (yj > y) {
            xs.push(xi + (y - yi) * (xj - xi) / (yj - yi));
        }
    }
    xs.sort_by(f64::total_cmp);
    xs
}

/// Calls `visit(row, first_col, last_col)` for each horizontal run of pixels
/// whose centre lies inside the polygon (even-odd rule), restricted to
/// non-negative coordinates.
pub(crate) fn polygon_spans(points: &[[f64; 2]], mut visit: impl FnMut(u32, u32, u32)) {
    let min_y = points.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = points
        .iter()
        .map(|p| p[1])
        .fold(f64::NEG_INFINITY, f64::max);
    let r0 = (min_y - 0.5).ceil().max(0.0) as i64;
    let r1 = (max_y - 0.5).floor() as i64;
    for r in r0..=r1 {
        let xs = scanline_crossings(points, r as f64 + 0.5);
        for span in xs.chunks_exact(2) {
            // columns c with span[0] <= c + 0.5 < span[1]
            let c0 = (span[0] - 0.5).ceil().max(0.0) as i64;
            let c1 = (span[1] - 0.5).ceil() as i64 - 1;
            if c1 >= c0 {
                visit(r as u32, c0 as u32, c1 as u32);
            }
        }
    }
}

/// Tightest box around the rasterized polygon.
pub fn polygon_bbox(points: &[[f64; 2]]) -> Result<BBox> {
    validate_polygon(points)?;
    let mut rows: Option<(u32, u32)> = None;
    let mut cols: Option<(u32, u32)> = None;
    polygon_spans(points, |r, c0, c1| {
        rows = Some(rows.map_or((r, r), |(a, _)| (a, r)));
        cols = Some(cols.map_or((c0, c1), |(a, b)| (a.min(c0), b.max(c1))));
    });
    match (rows, cols) {
        (Some(rows), Some(cols)) => Ok(BBox::from_inclusive(rows, cols)),
        _ => Err(Error::Validation("empty annotation".into())),
    }
}

/// Rasterizes a polygon into a row-major `width`×`height` mask.
pub fn rasterize_polygon(points: &[[f64; 2]], width: u32, height: u32) -> Vec<u8> {
    let mut mask = vec![0u8; width as usize * height as usize];
    polygon_spans(points, |r, c0, c1| {
        if r >= height || c0 >= width {
            return;
        }
        let c1 = c1.min(width - 1);
        let row = r as usize * width as usize;
        mask[row + c0 as usize..=row + c1 as usize].fill(1);
    });
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_two_pixels() {
        let (w, h) = (10, 8);
        let mut mask = vec![0u8; w * h];
        mask[2 * w + 3] = 255;
        mask[5 * w + 7] = 255;
        let b = mask_bbox(&mask, w as u32, h as u32).unwrap();
        assert_eq!(b.rows(), (2, 5));
        assert_eq!(b.cols(), (3, 7));
    }

    #[test]
    fn empty_mask_is_error() {
        let err = mask_bbox(&[0; 16], 4, 4).unwrap_err();
        assert!(err.to_string().contains("empty annotation"));
    }

    #[test]
    fn iou_and_clip() {
        let a = BBox::new(0, 0, 10, 10);
        let b = BBox::new(5, 5, 10, 10);
        assert_eq!(a.intersection_area(&b), 25);
        assert!((a.iou(&b) - 25.0 / 175.0).abs() < 1e-12);
        assert_eq!(a.iou(&BBox::new(10, 0, 3, 3)), 0.0);
        assert_eq!(b.clip_to(12, 8), Some(BBox::new(5, 5, 7, 3)));
        assert_eq!(b.clip_to(5, 5), None);
    }

    #[test]
    fn square_polygon() {
        // pixel centres 1.5..=4.5 lie inside [1, 5)
        let sq = [[1.0, 1.0], [5.0, 1.0], [5.0, 5.0], [1.0, 5.0]];
        assert_eq!(polygon_bbox(&sq).unwrap(), BBox::new(1, 1, 4, 4));
    }

    #[test]
    fn bad_polygons() {
        assert!(validate_polygon(&[[0.0, 0.0], [1.0, 1.0]]).is_err());
        assert!(validate_polygon(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_err());
    }

    #[test]
    fn sliver_without_pixel_centres_is_empty() {
        let sliver = [[0.1, 0.1], [0.4, 0.1], [0.4, 0.4]];
        assert!(polygon_bbox(&sliver).is_err());
    }
}
