//! COCO instances JSON ingestion: pixel boxes to normalized corners, polygon
//! or uncompressed-RLE segmentation to internal masks, category ids to names.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::Deserialize;

use super::{io_err, DatasetError, ImageRecord, InstanceAnnotation};
use crate::geometry::{BoundingBox, SegmentMask};

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: i64,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    id: i64,
    image_id: i64,
    category_id: i64,
    bbox: [f64; 4],
    #[serde(default)]
    segmentation: Option<CocoSegmentation>,
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: i64,
    name: String,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CocoSegmentation {
    Polygons(Vec<Vec<f64>>),
    Rle {
        counts: CocoCounts,
        /// [height, width]
        size: [u32; 2],
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CocoCounts {
    Uncompressed(Vec<u32>),
    Compressed(#[allow(dead_code)] String),
}

/// Loads a COCO instances file. Instances are renumbered 1..N per image in
/// annotation-id order; category names are lower-cased; crowd annotations are
/// ingested but flagged.
pub fn load_coco_instances(path: &Path) -> Result<Vec<ImageRecord>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let coco: CocoFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            source,
        })?;

    let categories: BTreeMap<i64, String> = coco
        .categories
        .iter()
        .map(|c| (c.id, c.name.to_lowercase()))
        .collect();
    let image_dims: BTreeMap<i64, (u32, u32)> = coco
        .images
        .iter()
        .map(|i| (i.id, (i.width, i.height)))
        .collect();

    let mut per_image: BTreeMap<i64, Vec<&CocoAnnotation>> = BTreeMap::new();
    for ann in &coco.annotations {
        if !image_dims.contains_key(&ann.image_id) {
            return Err(DatasetError::MissingImage {
                annotation_id: ann.id,
                image_id: ann.image_id,
            });
        }
        if !categories.contains_key(&ann.category_id) {
            return Err(DatasetError::MissingCategory {
                annotation_id: ann.id,
                category_id: ann.category_id,
            });
        }
        per_image.entry(ann.image_id).or_default().push(ann);
    }

    let mut records = Vec::with_capacity(coco.images.len());
    for image in &coco.images {
        let (width, height) = (image.width, image.height);
        if width == 0 || height == 0 {
            return Err(DatasetError::BadImage {
                image_id: image.id.to_string(),
                reason: format!("non-positive dimensions {width}x{height}"),
            });
        }
        let mut anns = per_image.remove(&image.id).unwrap_or_default();
        anns.sort_by_key(|a| a.id);
        let mut instances = Vec::with_capacity(anns.len());
        for (idx, ann) in anns.iter().enumerate() {
            let [x, y, w, h] = ann.bbox;
            let bbox = BoundingBox::from_pixel_xywh(x, y, w, h, width, height).map_err(|e| {
                DatasetError::BadAnnotation {
                    annotation_id: ann.id,
                    reason: e.to_string(),
                }
            })?;
            let mask = match &ann.segmentation {
                Some(seg) => Some(convert_segmentation(seg, width, height).map_err(|reason| {
                    DatasetError::BadAnnotation {
                        annotation_id: ann.id,
                        reason,
                    }
                })?),
                None => None,
            };
            instances.push(InstanceAnnotation {
                instance_id: (idx + 1) as u32,
                category: categories[&ann.category_id].clone(),
                bbox,
                mask,
                is_crowd: ann.iscrowd != 0,
            });
        }
        records.push(ImageRecord {
            image_id: image.id.to_string(),
            width,
            height,
            instances,
        });
    }
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(records)
}

fn convert_segmentation(
    seg: &CocoSegmentation,
    width: u32,
    height: u32,
) -> Result<SegmentMask, String> {
    match seg {
        CocoSegmentation::Polygons(polys) => rasterize_polygons(polys, width, height),
        CocoSegmentation::Rle { counts, size } => {
            let [h, w] = *size;
            if w != width || h != height {
                return Err(format!(
                    "RLE size [{h}, {w}] does not match image {width}x{height}"
                ));
            }
            match counts {
                CocoCounts::Uncompressed(runs) => decode_column_major_rle(runs, width, height),
                CocoCounts::Compressed(_) => {
                    Err("compressed RLE counts are not supported; use uncompressed counts".into())
                }
            }
        }
    }
}

/// COCO uncompressed RLE runs down columns; the internal representation is
/// row-major, so decode and re-encode.
fn decode_column_major_rle(runs: &[u32], width: u32, height: u32) -> Result<SegmentMask, String> {
    let total = width as u64 * height as u64;
    let sum: u64 = runs.iter().map(|&r| r as u64).sum();
    if sum != total {
        return Err(format!("RLE counts sum to {sum}, expected {total}"));
    }
    let mut pixels = vec![false; total as usize];
    let mut pos: u64 = 0;
    let mut value = false;
    for &run in runs {
        if value {
            for p in pos..pos + run as u64 {
                let col = p / height as u64;
                let row = p % height as u64;
                pixels[(row * width as u64 + col) as usize] = true;
            }
        }
        pos += run as u64;
        value = !value;
    }
    SegmentMask::from_pixels(width, height, &pixels).map_err(|e| e.to_string())
}

/// Rasterizes polygons (flat [x0, y0, x1, y1, ...] pixel coordinates) with
/// the even-odd fill rule, sampling at pixel centers.
fn rasterize_polygons(polys: &[Vec<f64>], width: u32, height: u32) -> Result<SegmentMask, String> {
    for poly in polys {
        if poly.len() < 6 || poly.len() % 2 != 0 {
            return Err(format!(
                "polygon must hold at least 3 (x, y) pairs, got {} values",
                poly.len()
            ));
        }
    }
    let mut pixels = vec![false; (width as u64 * height as u64) as usize];
    for row in 0..height {
        let yc = row as f64 + 0.5;
        let mut crossings: Vec<f64> = Vec::new();
        for poly in polys {
            let n = poly.len() / 2;
            for i in 0..n {
                let (x1, y1) = (poly[2 * i], poly[2 * i + 1]);
                let j = (i + 1) % n;
                let (x2, y2) = (poly[2 * j], poly[2 * j + 1]);
                // Half-open test so shared vertices count once.
                if (y1 <= yc && yc < y2) || (y2 <= yc && yc < y1) {
                    crossings.push(x1 + (yc - y1) / (y2 - y1) * (x2 - x1));
                }
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in crossings.chunks(2) {
            let [a, b] = pair else { continue };
            let col_min = ((a - 0.5).ceil().max(0.0)) as i64;
            let col_max = ((b - 0.5).ceil().min(width as f64)) as i64;
            for col in col_min..col_max {
                pixels[row as usize * width as usize + col as usize] = true;
            }
        }
    }
    SegmentMask::from_pixels(width, height, &pixels).map_err(|e| e.to_string())
}
