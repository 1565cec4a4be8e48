//! Normalized box/mask primitives, IoU computation, centroids, and the
//! aggregate IoU statistics (mIoU, cIoU) used by segmentation scoring.
//!
//! All coordinates are fractions of image width/height in `[0, 1]`. Masks are
//! run-length encoded binary rasters in row-major order; the run list starts
//! with the count of background pixels, so a mask whose first pixel is
//! foreground carries a leading zero run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{x0}, {y0}, {x1}, {y1}]: corners must satisfy 0 <= x0 <= x1 <= 1 and 0 <= y0 <= y1 <= 1")]
    InvalidBox { x0: f64, y0: f64, x1: f64, y1: f64 },
    #[error("image dimensions must be positive, got {width}x{height}")]
    BadImageDims { width: i64, height: i64 },
    #[error("mask dimensions must be positive, got {width}x{height}")]
    BadMaskDims { width: u32, height: u32 },
    #[error("run lengths sum to {got}, expected {expected} ({width}x{height})")]
    RunSumMismatch {
        got: u64,
        expected: u64,
        width: u32,
        height: u32,
    },
    #[error("zero-length run at position {index}; only a leading zero run is allowed")]
    ZeroRun { index: usize },
    #[error("mask dimension mismatch: {a_width}x{a_height} vs {b_width}x{b_height}")]
    DimensionMismatch {
        a_width: u32,
        a_height: u32,
        b_width: u32,
        b_height: u32,
    },
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("IoU statistics undefined for an empty pair list")]
    NoPairs,
    #[error("invalid intersection/union pair ({intersection}, {union}): need union >= intersection >= 0")]
    InvalidPair { intersection: f64, union: f64 },
}

/// Axis-aligned box in normalized corner form `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        let ok = (0.0..=1.0).contains(&x0)
            && (0.0..=1.0).contains(&y0)
            && (0.0..=1.0).contains(&x1)
            && (0.0..=1.0).contains(&y1)
            && x0 <= x1
            && y0 <= y1;
        if !ok {
            return Err(GeometryError::InvalidBox { x0, y0, x1, y1 });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// Converts a pixel-space `[x, y, w, h]` box (COCO convention) to
    /// normalized corners, clamping to the image bounds.
    pub fn from_pixel_xywh(
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        img_w: u32,
        img_h: u32,
    ) -> Result<Self, GeometryError> {
        if img_w == 0 || img_h == 0 {
            return Err(GeometryError::BadImageDims {
                width: img_w as i64,
                height: img_h as i64,
            });
        }
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        let x0 = clamp(x / img_w as f64);
        let y0 = clamp(y / img_h as f64);
        let x1 = clamp((x + w.max(0.0)) / img_w as f64);
        let y1 = clamp((y + h.max(0.0)) / img_h as f64);
        Self::new(x0, y0, x1.max(x0), y1.max(y0))
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn y0(&self) -> f64 {
        self.y0
    }
    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

// Boxes serialize as the 4-element array [x0, y0, x1, y1].
impl Serialize for BoundingBox {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.corners().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x0, y0, x1, y1] = <[f64; 4]>::deserialize(deserializer)?;
        BoundingBox::new(x0, y0, x1, y1).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union of two boxes. Returns 0 when the union area is 0.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let intersection = ix * iy;
    let union = a.area() + b.area() - intersection;
    if union <= 0.0 {
        return 0.0;
    }
    intersection / union
}

/// Binary raster stored as row-major run lengths, alternating background /
/// foreground and starting with the background count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl SegmentMask {
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::BadMaskDims { width, height });
        }
        let expected = width as u64 * height as u64;
        let got: u64 = runs.iter().map(|&r| r as u64).sum();
        if got != expected {
            return Err(GeometryError::RunSumMismatch {
                got,
                expected,
                width,
                height,
            });
        }
        for (i, &r) in runs.iter().enumerate() {
            if r == 0 && i != 0 {
                return Err(GeometryError::ZeroRun { index: i });
            }
        }
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    /// Builds a mask from a row-major pixel raster.
    pub fn from_pixels(width: u32, height: u32, pixels: &[bool]) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::BadMaskDims { width, height });
        }
        assert_eq!(pixels.len() as u64, width as u64 * height as u64);
        let mut runs = Vec::new();
        let mut value = false; // runs start with the background count
        let mut len: u32 = 0;
        for &p in pixels {
            if p == value {
                len += 1;
            } else {
                runs.push(len);
                value = p;
                len = 1;
            }
        }
        runs.push(len);
        Self::from_runs(width, height, runs)
    }

    /// Decodes to a row-major pixel raster.
    pub fn to_pixels(&self) -> Vec<bool> {
        let mut pixels = Vec::with_capacity((self.width * self.height) as usize);
        let mut value = false;
        for &run in &self.runs {
            pixels.extend(std::iter::repeat(value).take(run as usize));
            value = !value;
        }
        pixels
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.runs
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&r| r as u64)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Foreground intersection and union pixel counts against `other`.
    pub fn intersection_union(&self, other: &Self) -> Result<(u64, u64), GeometryError> {
        if self.width != other.width || self.height != other.height {
            return Err(GeometryError::DimensionMismatch {
                a_width: self.width,
                a_height: self.height,
                b_width: other.width,
                b_height: other.height,
            });
        }
        // Walk both run lists in lockstep over aligned intervals.
        let mut inter: u64 = 0;
        let mut a_iter = RunCursor::new(&self.runs);
        let mut b_iter = RunCursor::new(&other.runs);
        loop {
            match (a_iter.current(), b_iter.current()) {
                (Some((a_len, a_val)), Some((b_len, b_val))) => {
                    let step = a_len.min(b_len);
                    if a_val && b_val {
                        inter += step;
                    }
                    a_iter.advance(step);
                    b_iter.advance(step);
                }
                _ => break,
            }
        }
        let union = self.area() + other.area() - inter;
        Ok((inter, union))
    }
}

struct RunCursor<'a> {
    runs: &'a [u32],
    index: usize,
    remaining: u64,
}

impl<'a> RunCursor<'a> {
    fn new(runs: &'a [u32]) -> Self {
        let mut c = Self {
            runs,
            index: 0,
            remaining: 0,
        };
        c.remaining = c.runs.first().map(|&r| r as u64).unwrap_or(0);
        c.skip_empty();
        c
    }

    fn skip_empty(&mut self) {
        while self.remaining == 0 && self.index + 1 < self.runs.len() {
            self.index += 1;
            self.remaining = self.runs[self.index] as u64;
        }
    }

    fn current(&self) -> Option<(u64, bool)> {
        if self.remaining == 0 {
            None
        } else {
            Some((self.remaining, self.index % 2 == 1))
        }
    }

    fn advance(&mut self, by: u64) {
        self.remaining -= by;
        self.skip_empty();
    }
}

/// Pixel IoU of two masks of identical dimensions. Returns 0 when both masks
/// are empty.
pub fn mask_iou(a: &SegmentMask, b: &SegmentMask) -> Result<f64, GeometryError> {
    let (inter, union) = a.intersection_union(b)?;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Mean position of the foreground pixels as normalized fractions. Pixel
/// centers sit at `(col + 0.5, row + 0.5)` so symmetric masks centroid to 0.5.
pub fn mask_centroid(mask: &SegmentMask) -> Result<(f64, f64), GeometryError> {
    let mut count: u64 = 0;
    let mut sum_x = 0.0;
    let mut sum_y = 0.0;
    let mut offset: u64 = 0;
    for (i, &run) in mask.runs().iter().enumerate() {
        if i % 2 == 1 {
            for p in offset..offset + run as u64 {
                let row = p / mask.width as u64;
                let col = p % mask.width as u64;
                sum_x += col as f64 + 0.5;
                sum_y += row as f64 + 0.5;
            }
            count += run as u64;
        }
        offset += run as u64;
    }
    if count == 0 {
        return Err(GeometryError::EmptyMask);
    }
    Ok((
        sum_x / count as f64 / mask.width as f64,
        sum_y / count as f64 / mask.height as f64,
    ))
}

/// Per-pair IoUs plus accumulated intersection/union areas, feeding the
/// mean-IoU and cumulative-IoU statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IoUStats {
    pub pair_ious: Vec<f64>,
    pub total_intersection: f64,
    pub total_union: f64,
}

impl IoUStats {
    pub fn push(&mut self, intersection: f64, union: f64) -> Result<(), GeometryError> {
        if !(0.0..).contains(&intersection) || union < intersection {
            return Err(GeometryError::InvalidPair {
                intersection,
                union,
            });
        }
        // An empty prediction against an empty target is perfect agreement.
        let iou = if union == 0.0 {
            1.0
        } else {
            intersection / union
        };
        self.pair_ious.push(iou);
        self.total_intersection += intersection;
        self.total_union += union;
        Ok(())
    }

    pub fn miou(&self) -> Result<f64, GeometryError> {
        if self.pair_ious.is_empty() {
            return Err(GeometryError::NoPairs);
        }
        Ok(self.pair_ious.iter().sum::<f64>() / self.pair_ious.len() as f64)
    }

    pub fn ciou(&self) -> Result<f64, GeometryError> {
        if self.pair_ious.is_empty() {
            return Err(GeometryError::NoPairs);
        }
        if self.total_union == 0.0 {
            return Ok(1.0);
        }
        Ok(self.total_intersection / self.total_union)
    }
}

/// Computes `(mIoU, cIoU)` from `(intersection, union)` area pairs.
pub fn aggregate_iou(pairs: &[(f64, f64)]) -> Result<(f64, f64), GeometryError> {
    if pairs.is_empty() {
        return Err(GeometryError::NoPairs);
    }
    let mut stats = IoUStats::default();
    for &(i, u) in pairs {
        stats.push(i, u)?;
    }
    Ok((stats.miou()?, stats.ciou()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn box_iou_identity() {
        let a = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(box_iou(&a, &a), 1.0);
    }

    #[test]
    fn box_iou_disjoint() {
        let a = bx(0.0, 0.0, 0.5, 0.5);
        let b = bx(0.5, 0.5, 1.0, 1.0);
        assert_eq!(box_iou(&a, &b), 0.0);
    }

    #[test]
    fn box_iou_partial_overlap() {
        // intersection 0.1 x 0.1 = 0.01, union 0.04 + 0.04 - 0.01 = 0.07
        let a = bx(0.0, 0.0, 0.2, 0.2);
        let b = bx(0.1, 0.1, 0.3, 0.3);
        assert!((box_iou(&a, &b) - 0.01 / 0.07).abs() < 1e-12);
    }

    #[test]
    fn box_iou_zero_union() {
        let a = bx(0.5, 0.5, 0.5, 0.5);
        assert_eq!(box_iou(&a, &a), 0.0);
    }

    #[test]
    fn box_rejects_inverted_corners() {
        assert!(BoundingBox::new(0.5, 0.0, 0.2, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.5, 1.0).is_err());
    }

    #[test]
    fn pixel_xywh_conversion() {
        let b = BoundingBox::from_pixel_xywh(10.0, 20.0, 30.0, 40.0, 100, 200).unwrap();
        assert_eq!(b.corners(), [0.10, 0.10, 0.40, 0.30]);
    }

    #[test]
    fn pixel_xywh_full_image() {
        let b = BoundingBox::from_pixel_xywh(0.0, 0.0, 100.0, 200.0, 100, 200).unwrap();
        assert_eq!(b.corners(), [0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn pixel_xywh_clamps() {
        let b = BoundingBox::from_pixel_xywh(90.0, 190.0, 30.0, 40.0, 100, 200).unwrap();
        assert_eq!(b.corners(), [0.9, 0.95, 1.0, 1.0]);
    }

    #[test]
    fn pixel_xywh_rejects_bad_image() {
        assert!(BoundingBox::from_pixel_xywh(0.0, 0.0, 1.0, 1.0, 0, 10).is_err());
    }

    fn full(w: u32, h: u32) -> SegmentMask {
        SegmentMask::from_runs(w, h, vec![0, w * h]).unwrap()
    }

    fn empty(w: u32, h: u32) -> SegmentMask {
        SegmentMask::from_runs(w, h, vec![w * h]).unwrap()
    }

    #[test]
    fn mask_iou_full_full() {
        assert_eq!(mask_iou(&full(2, 2), &full(2, 2)).unwrap(), 1.0);
    }

    #[test]
    fn mask_iou_full_empty() {
        assert_eq!(mask_iou(&full(2, 2), &empty(2, 2)).unwrap(), 0.0);
    }

    #[test]
    fn mask_iou_both_empty() {
        assert_eq!(mask_iou(&empty(2, 2), &empty(2, 2)).unwrap(), 0.0);
    }

    #[test]
    fn mask_iou_halves() {
        // left half: pixels (0,0) and (0,1); top half: pixels (0,0) and (1,0)
        let left = SegmentMask::from_pixels(2, 2, &[true, false, true, false]).unwrap();
        let top = SegmentMask::from_pixels(2, 2, &[true, true, false, false]).unwrap();
        assert!((mask_iou(&left, &top).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mask_iou_dimension_mismatch() {
        assert!(matches!(
            mask_iou(&full(2, 2), &full(2, 3)),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mask_rejects_bad_runs() {
        assert!(matches!(
            SegmentMask::from_runs(2, 2, vec![1, 2]),
            Err(GeometryError::RunSumMismatch { .. })
        ));
        assert!(matches!(
            SegmentMask::from_runs(2, 2, vec![1, 0, 3]),
            Err(GeometryError::ZeroRun { index: 1 })
        ));
        // leading zero is the COCO convention for foreground-first masks
        assert!(SegmentMask::from_runs(2, 2, vec![0, 4]).is_ok());
    }

    #[test]
    fn centroid_full_mask() {
        assert_eq!(mask_centroid(&full(2, 2)).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn centroid_single_pixel() {
        let m = SegmentMask::from_pixels(2, 2, &[true, false, false, false]).unwrap();
        assert_eq!(mask_centroid(&m).unwrap(), (0.25, 0.25));
    }

    #[test]
    fn centroid_diagonal_pair() {
        let m = SegmentMask::from_pixels(2, 2, &[true, false, false, true]).unwrap();
        assert_eq!(mask_centroid(&m).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn centroid_empty_mask_errors() {
        assert_eq!(mask_centroid(&empty(2, 2)), Err(GeometryError::EmptyMask));
    }

    #[test]
    fn aggregate_mixed_pairs() {
        let (miou, ciou) = aggregate_iou(&[(1.0, 2.0), (1.0, 4.0)]).unwrap();
        assert!((miou - 0.375).abs() < 1e-12);
        assert!((ciou - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_single_perfect_pair() {
        assert_eq!(aggregate_iou(&[(1.0, 1.0)]).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn aggregate_all_misses() {
        assert_eq!(aggregate_iou(&[(0.0, 1.0), (0.0, 1.0)]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn aggregate_empty_vs_empty_counts_as_agreement() {
        assert_eq!(aggregate_iou(&[(0.0, 0.0)]).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn aggregate_rejects_empty_list() {
        assert_eq!(aggregate_iou(&[]), Err(GeometryError::NoPairs));
    }

    #[test]
    fn aggregate_rejects_invalid_pair() {
        assert!(matches!(
            aggregate_iou(&[(2.0, 1.0)]),
            Err(GeometryError::InvalidPair { .. })
        ));
    }

    #[test]
    fn ciou_of_identical_pairs_equals_single_pair() {
        let single = aggregate_iou(&[(1.0, 4.0)]).unwrap().1;
        let repeated = aggregate_iou(&[(1.0, 4.0); 5]).unwrap().1;
        assert!((single - repeated).abs() < 1e-12);
        assert!((single - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pixel_round_trip() {
        let pixels = [
            true, true, false, false, true, false, true, true, false, false, false, true,
        ];
        let m = SegmentMask::from_pixels(3, 4, &pixels).unwrap();
        assert_eq!(m.to_pixels(), pixels);
        assert_eq!(m.area(), 6);
    }
}
