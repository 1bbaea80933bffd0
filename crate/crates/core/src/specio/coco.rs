use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SpecioError;

/// One polygon ring of a stenosis annotation, in pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PolygonAnn {
    pub image_id: u64,
    pub annotation_id: u64,
    pub vertices: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotationSet {
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<PolygonAnn>,
}

impl AnnotationSet {
    pub fn image(&self, id: u64) -> Option<&ImageEntry> {
        self.images.iter().find(|img| img.id == id)
    }

    pub fn polygons_for(&self, image_id: u64) -> impl Iterator<Item = &PolygonAnn> + '_ {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }

    /// Serialises the set as a minimal COCO document (one annotation per ring).
    pub fn to_coco_json(&self) -> String {
        let annotations: Vec<Value> = self
            .annotations
            .iter()
            .map(|a| {
                let flat: Vec<f64> = a.vertices.iter().flat_map(|&(x, y)| [x, y]).collect();
                serde_json::json!({
                    "id": a.annotation_id,
                    "image_id": a.image_id,
                    "category_id": 1,
                    "segmentation": [flat],
                })
            })
            .collect();
        let doc = serde_json::json!({
            "images": self.images,
            "annotations": annotations,
            "categories": [{"id": 1, "name": "stenosis"}],
        });
        serde_json::to_string_pretty(&doc).expect("annotation document serialises")
    }
}

#[derive(Deserialize)]
struct RawAnnotation {
    #[serde(default)]
    id: u64,
    image_id: u64,
    segmentation: Value,
}

pub fn load_coco(path: impl AsRef<Path>) -> Result<AnnotationSet, SpecioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SpecioError::io(path, e))?;
    parse_coco(&text).map_err(|e| match e {
        SpecioError::Annotation(reason) => SpecioError::format(path, reason),
        other => other,
    })
}

/// Parses the subset of COCO used here: `images[]` and polygon `annotations[]`.
pub fn parse_coco(text: &str) -> Result<AnnotationSet, SpecioError> {
    let bad = |msg: String| SpecioError::Annotation(msg);
    let doc: Value = serde_json::from_str(text).map_err(|e| bad(format!("malformed JSON: {e}")))?;
    let images_val = doc.get("images").ok_or_else(|| bad("missing \"images\" key".into()))?;
    let anns_val = doc
        .get("annotations")
        .ok_or_else(|| bad("missing \"annotations\" key".into()))?;
    let images: Vec<ImageEntry> = serde_json::from_value(images_val.clone())
        .map_err(|e| bad(format!("invalid \"images\" entry: {e}")))?;
    let raw: Vec<RawAnnotation> = serde_json::from_value(anns_val.clone())
        .map_err(|e| bad(format!("invalid \"annotations\" entry: {e}")))?;

    let dims: HashMap<u64, (usize, usize)> =
        images.iter().map(|i| (i.id, (i.height, i.width))).collect();
    let mut annotations = Vec::new();
    for ann in raw {
        let &(height, width) = dims.get(&ann.image_id).ok_or_else(|| {
            bad(format!(
                "annotation {} references unknown image {}",
                ann.id, ann.image_id
            ))
        })?;
        let rings = ann.segmentation.as_array().ok_or_else(|| {
            bad(format!(
                "annotation {}: only polygon segmentations are supported",
                ann.id
            ))
        })?;
        for ring in rings {
            let coords: Vec<f64> = ring
                .as_array()
                .and_then(|r| r.iter().map(Value::as_f64).collect())
                .ok_or_else(|| bad(format!("annotation {}: polygon must be a list of numbers", ann.id)))?;
            if coords.len() % 2 == 1 {
                return Err(bad(format!("annotation {}: odd coordinate count", ann.id)));
            }
            if coords.len() < 6 {
                return Err(bad(format!(
                    "annotation {}: polygon needs at least 6 coordinates, got {}",
                    ann.id,
                    coords.len()
                )));
            }
            let vertices = coords
                .chunks_exact(2)
                .map(|xy| (xy[0].clamp(0.0, width as f64), xy[1].clamp(0.0, height as f64)))
                .collect();
            annotations.push(PolygonAnn {
                image_id: ann.image_id,
                annotation_id: ann.id,
                vertices,
            });
        }
    }
    Ok(AnnotationSet {
        images,
        annotations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_IMAGE: &str = r#"{"images": [{"id": 7, "file_name": "a.png", "height": 8, "width": 8}], "annotations": []}"#;

    #[test]
    fn empty_annotations() {
        let set = parse_coco(ONE_IMAGE).unwrap();
        assert_eq!(set.images.len(), 1);
        assert!(set.annotations.is_empty());
    }

    #[test]
    fn triangle() {
        let doc = r#"{"images": [{"id": 1, "file_name": "a.png", "height": 8, "width": 8}],
            "annotations": [{"id": 3, "image_id": 1, "segmentation": [[0,0, 4,0, 4,3]]}]}"#;
        let set = parse_coco(doc).unwrap();
        assert_eq!(set.annotations.len(), 1);
        assert_eq!(set.annotations[0].vertices, vec![(0.0, 0.0), (4.0, 0.0), (4.0, 3.0)]);
    }

    #[test]
    fn multiple_rings_become_multiple_polygons() {
        let doc = r#"{"images": [{"id": 1, "file_name": "a.png", "height": 8, "width": 8}],
            "annotations": [{"id": 3, "image_id": 1, "segmentation": [[0,0, 4,0, 4,3], [5,5, 7,5, 7,7, 5,7]]}]}"#;
        assert_eq!(parse_coco(doc).unwrap().annotations.len(), 2);
    }

    #[test]
    fn malformed_polygons() {
        let odd = r#"{"images": [{"id": 1, "file_name": "a.png", "height": 8, "width": 8}],
            "annotations": [{"id": 3, "image_id": 1, "segmentation": [[0,0, 4,0, 4]]}]}"#;
        assert!(parse_coco(odd).unwrap_err().to_string().contains("odd coordinate count"));
        let short = r#"{"images": [{"id": 1, "file_name": "a.png", "height": 8, "width": 8}],
            "annotations": [{"id": 3, "image_id": 1, "segmentation": [[0,0, 4,0]]}]}"#;
        assert!(parse_coco(short).unwrap_err().to_string().contains("at least 6"));
    }

    #[test]
    fn missing_keys_and_unknown_images() {
        assert!(parse_coco(r#"{"annotations": []}"#)
            .unwrap_err()
            .to_string()
            .contains("\"images\""));
        assert!(parse_coco(r#"{"images": []}"#)
            .unwrap_err()
            .to_string()
            .contains("\"annotations\""));
        let orphan = r#"{"images": [], "annotations": [{"id": 1, "image_id": 9, "segmentation": [[0,0,1,0,1,1]]}]}"#;
        assert!(parse_coco(orphan).unwrap_err().to_string().contains("unknown image 9"));
    }

    #[test]
    fn vertices_are_clamped_to_frame() {
        let doc = r#"{"images": [{"id": 1, "file_name": "a.png", "height": 4, "width": 6}],
            "annotations": [{"id": 3, "image_id": 1, "segmentation": [[-2,0, 9,0, 9,7]]}]}"#;
        let set = parse_coco(doc).unwrap();
        assert_eq!(set.annotations[0].vertices, vec![(0.0, 0.0), (6.0, 0.0), (6.0, 4.0)]);
    }

    #[test]
    fn json_round_trip() {
        let doc = r#"{"images": [{"id": 1, "file_name": "a.png", "height": 8, "width": 8}],
            "annotations": [{"id": 3, "image_id": 1, "segmentation": [[0.5,0, 4,0, 4,3.25]]}]}"#;
        let set = parse_coco(doc).unwrap();
        assert_eq!(parse_coco(&set.to_coco_json()).unwrap(), set);
    }
}
