//! COCO-style keypoint annotation files.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::pose::{BBox, Keypoint, PoseInstance, ANIMAL_POSE_JOINTS};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub instances: Vec<PoseInstance>,
}

impl Dataset {
    pub fn new(instances: Vec<PoseInstance>) -> Self {
        Dataset { instances }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Instances per class, keeping file order within each class.
    pub fn by_class(&self) -> BTreeMap<String, Vec<PoseInstance>> {
        let mut out: BTreeMap<String, Vec<PoseInstance>> = BTreeMap::new();
        for p in &self.instances {
            out.entry(p.class_label.clone())
                .or_default()
                .push(p.clone());
        }
        out
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for p in &self.instances {
            *out.entry(p.class_label.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn lookup(&self) -> BTreeMap<String, PoseInstance> {
        self.instances
            .iter()
            .map(|p| (p.id.clone(), p.clone()))
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct RawImage {
    id: Value,
    file_name: String,
}

#[derive(Debug, Deserialize)]
struct RawCategory {
    id: Value,
    name: String,
}

#[derive(Debug, Deserialize)]
struct RawAnnotation {
    id: Value,
    image_id: Value,
    category_id: Value,
    keypoints: Vec<f64>,
    bbox: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct RawFile {
    #[serde(default)]
    images: Vec<RawImage>,
    categories: Vec<RawCategory>,
    annotations: Vec<Value>,
}

fn key(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses annotation JSON text. Every annotation must carry
/// `3 * joints` keypoint values; COCO visibility 1 and 2 both map to 1.
pub fn parse_annotations(text: &str, joints: usize) -> Result<Dataset> {
    let raw: RawFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("annotation file: {e}")))?;
    let images: HashMap<String, String> = raw
        .images
        .into_iter()
        .map(|im| (key(&im.id), im.file_name))
        .collect();
    let categories: HashMap<String, String> = raw
        .categories
        .into_iter()
        .map(|c| (key(&c.id), c.name))
        .collect();

    let mut instances = Vec::with_capacity(raw.annotations.len());
    for (pos, value) in raw.annotations.into_iter().enumerate() {
        let label = value
            .get("id")
            .map(|v| format!("annotation #{pos} (id {})", key(v)))
            .unwrap_or_else(|| format!("annotation #{pos}"));
        let ann: RawAnnotation =
            serde_json::from_value(value).map_err(|e| Error::Parse(format!("{label}: {e}")))?;
        if ann.keypoints.len() != 3 * joints {
            return Err(Error::Schema(format!(
                "{label}: expected {} keypoint values ({joints} keypoints), found {}",
                3 * joints,
                ann.keypoints.len()
            )));
        }
        if ann.bbox.len() != 4 {
            return Err(Error::Parse(format!("{label}: bbox must have 4 values")));
        }
        if ann
            .keypoints
            .iter()
            .chain(&ann.bbox)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Parse(format!("{label}: non-finite coordinate")));
        }
        let class = categories.get(&key(&ann.category_id)).ok_or_else(|| {
            Error::Parse(format!("{label}: unknown category {}", ann.category_id))
        })?;
        let image_ref = images
            .get(&key(&ann.image_id))
            .cloned()
            .unwrap_or_else(|| key(&ann.image_id));
        let keypoints = ann
            .keypoints
            .chunks_exact(3)
            .map(|t| Keypoint::new(t[0], t[1], u8::from(t[2] > 0.0)))
            .collect();
        let bbox = BBox::new(ann.bbox[0], ann.bbox[1], ann.bbox[2], ann.bbox[3]);
        if !bbox.is_valid() {
            return Err(Error::Parse(format!(
                "{label}: bbox must have positive width and height"
            )));
        }
        instances.push(
            PoseInstance::new(key(&ann.id), class.clone(), keypoints, bbox)
                .with_image_ref(image_ref),
        );
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = instances.iter().find(|p| !seen.insert(p.id.clone())) {
        return Err(Error::Parse(format!("duplicate annotation id {}", dup.id)));
    }
    Ok(Dataset { instances })
}

/// Loads an Animal-Pose style file (17 keypoints per annotation).
pub fn load_annotations(path: &Path) -> Result<Dataset> {
    load_annotations_with(path, ANIMAL_POSE_JOINTS)
}

pub fn load_annotations_with(path: &Path, joints: usize) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_annotations(&text, joints)
}

#[derive(Debug, Serialize)]
struct OutFile {
    images: Vec<Value>,
    categories: Vec<Value>,
    annotations: Vec<Value>,
}

/// Serialises instances in the same COCO-style layout the loader reads.
/// Annotation ids are written as strings.
pub fn annotations_to_json(instances: &[PoseInstance]) -> Result<String> {
    let mut categories: BTreeMap<&str, usize> = BTreeMap::new();
    for p in instances {
        let next = categories.len() + 1;
        categories.entry(p.class_label.as_str()).or_insert(next);
    }
    let mut images: BTreeMap<&str, usize> = BTreeMap::new();
    for p in instances {
        let next = images.len() + 1;
        images.entry(p.image_ref.as_str()).or_insert(next);
    }
    let file = OutFile {
        images: images
            .iter()
            .map(|(name, id)| json!({"id": id, "file_name": name}))
            .collect(),
        categories: categories
            .iter()
            .map(|(name, id)| json!({"id": id, "name": name}))
            .collect(),
        annotations: instances
            .iter()
            .map(|p| {
                let kps: Vec<f64> = p
                    .keypoints
                    .iter()
                    .flat_map(|k| [k.x, k.y, if k.visible() { 2.0 } else { 0.0 }])
                    .collect();
                json!({
                    "id": p.id,
                    "image_id": images[p.image_ref.as_str()],
                    "category_id": categories[p.class_label.as_str()],
                    "keypoints": kps,
                    "num_keypoints": p.visible_count(),
                    "bbox": [p.bbox.x, p.bbox.y, p.bbox.width, p.bbox.height],
                })
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn write_annotations(path: &Path, instances: &[PoseInstance]) -> Result<()> {
    fs::write(path, annotations_to_json(instances)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn annotation(id: u32, cat: u32, n: usize) -> Value {
        let kps: Vec<f64> = (0..n)
            .flat_map(|i| [i as f64, 2.0 * i as f64, 2.0])
            .collect();
        json!({"id": id, "image_id": 1, "category_id": cat, "keypoints": kps, "bbox": [0, 0, 40, 30]})
    }

    fn file(anns: Vec<Value>) -> String {
        json!({
            "images": [{"id": 1, "file_name": "a.jpg"}],
            "categories": [{"id": 1, "name": "cat"}, {"id": 2, "name": "dog"}],
            "annotations": anns,
        })
        .to_string()
    }

    #[test]
    fn parses_fixture() {
        let text = file(vec![
            annotation(1, 1, 17),
            annotation(2, 2, 17),
            annotation(3, 1, 17),
        ]);
        let ds = parse_annotations(&text, 17).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.class_counts().len(), 2);
        assert_eq!(ds.class_counts()["cat"], 2);
        assert_eq!(ds.instances[0].image_ref, "a.jpg");
        assert_eq!(ds.instances[0].keypoints[3], Keypoint::new(3.0, 6.0, 1));
    }

    #[test]
    fn wrong_keypoint_count_is_schema_error() {
        let text = file(vec![annotation(1, 1, 17), annotation(7, 1, 16)]);
        match parse_annotations(&text, 17) {
            Err(Error::Schema(msg)) => assert!(msg.contains("id 7"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_record_names_offender() {
        let mut bad = annotation(9, 1, 17);
        bad.as_object_mut().unwrap().remove("bbox");
        let text = file(vec![annotation(1, 1, 17), bad]);
        match parse_annotations(&text, 17) {
            Err(Error::Parse(msg)) => assert!(msg.contains("#1") && msg.contains("id 9"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn written_annotations_reload() {
        let text = file(vec![annotation(1, 1, 17), annotation(2, 2, 17)]);
        let ds = parse_annotations(&text, 17).unwrap();
        let back = parse_annotations(&annotations_to_json(&ds.instances).unwrap(), 17).unwrap();
        assert_eq!(back, ds);
    }
}
