use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::features::Keypoint;

use super::{BinaryDescriptor, DescriptorError, DescriptorKind, DescriptorSet, Descriptors, FloatDescriptor};

const NORM_TOLERANCE: f64 = 1e-3;

/// Contents of one external feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalFeatures {
    pub subject_id: Option<String>,
    pub method: String,
    pub slice_index: i64,
    pub set: DescriptorSet,
}

/// Reads an external feature file and returns its descriptor set.
pub fn load_external(path: impl AsRef<Path>) -> Result<DescriptorSet, DescriptorError> {
    read_external(path).map(|f| f.set)
}

/// Reads and validates an external feature file:
///
/// ```json
/// {"kind": "float128" | "binary256", "method": "hardnet", "slice_index": 42,
///  "subject_id": "sub-01", "keypoints": [{"x": 1.0, "y": 2.0, ...}],
///  "descriptors": [[128 numbers], ...] | ["64 hex chars", ...]}
/// ```
///
/// `subject_id` is optional. Float vectors off unit norm by more than 1e-3
/// are renormalized with a warning; zero vectors are rejected.
pub fn read_external(path: impl AsRef<Path>) -> Result<ExternalFeatures, DescriptorError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DescriptorError::Io { path: path.to_path_buf(), source })?;
    let schema = |field: &str, reason: String| DescriptorError::SchemaError {
        path: path.to_path_buf(),
        field: field.to_string(),
        reason,
    };
    let root: Value = serde_json::from_str(&text).map_err(|e| schema("<root>", e.to_string()))?;
    let obj = root.as_object().ok_or_else(|| schema("<root>", "expected an object".into()))?;
    let field = |name: &str| obj.get(name).ok_or_else(|| schema(name, "missing".into()));

    let kind: DescriptorKind = serde_json::from_value(field("kind")?.clone())
        .map_err(|_| schema("kind", "expected \"float128\" or \"binary256\"".into()))?;
    let method = field("method")?.as_str().ok_or_else(|| schema("method", "expected a string".into()))?.to_string();
    if method.is_empty() {
        return Err(schema("method", "must not be empty".into()));
    }
    let slice_index =
        field("slice_index")?.as_i64().ok_or_else(|| schema("slice_index", "expected an integer".into()))?;
    let subject_id = match obj.get("subject_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(schema("subject_id", "expected a string".into())),
    };
    let keypoints: Vec<Keypoint> =
        serde_json::from_value(field("keypoints")?.clone()).map_err(|e| schema("keypoints", e.to_string()))?;
    let raw = field("descriptors")?.as_array().ok_or_else(|| schema("descriptors", "expected an array".into()))?;
    if raw.len() != keypoints.len() {
        return Err(schema("descriptors", format!("{} descriptors for {} keypoints", raw.len(), keypoints.len())));
    }

    let descriptors = match kind {
        DescriptorKind::Binary256 => {
            let mut out = Vec::with_capacity(raw.len());
            for (i, v) in raw.iter().enumerate() {
                let at = format!("descriptors[{i}]");
                let s = v.as_str().ok_or_else(|| schema(&at, "expected a hex string".into()))?;
                let mut d: BinaryDescriptor = [0; 32];
                hex::decode_to_slice(s, &mut d)
                    .map_err(|_| schema(&at, format!("expected 64 hex digits (256 bits), got {} chars", s.len())))?;
                out.push(d);
            }
            Descriptors::Binary(out)
        }
        DescriptorKind::Float128 => {
            let mut out = Vec::with_capacity(raw.len());
            for (i, v) in raw.iter().enumerate() {
                let at = format!("descriptors[{i}]");
                let arr = v.as_array().ok_or_else(|| schema(&at, "expected an array of 128 numbers".into()))?;
                if arr.len() != 128 {
                    return Err(schema(&at, format!("expected 128 numbers, got {}", arr.len())));
                }
                let mut d: FloatDescriptor = [0.0; 128];
                for (c, x) in d.iter_mut().zip(arr) {
                    *c = x
                        .as_f64()
                        .filter(|f| f.is_finite())
                        .ok_or_else(|| schema(&at, "expected finite numbers".into()))? as f32;
                }
                let norm = d.iter().map(|&c| c as f64 * c as f64).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(DescriptorError::NormViolation { path: path.to_path_buf(), index: i });
                }
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    log::warn!("{}: descriptor {i} has norm {norm:.6}, renormalizing", path.display());
                    for c in d.iter_mut() {
                        *c = (*c as f64 / norm) as f32;
                    }
                }
                out.push(d);
            }
            Descriptors::Float(out)
        }
    };
    let set = DescriptorSet::new(keypoints, descriptors)?;
    Ok(ExternalFeatures { subject_id, method, slice_index, set })
}

/// Serializes a feature file in the format read by [`read_external`].
pub fn write_external(features: &ExternalFeatures, path: impl AsRef<Path>) -> Result<(), DescriptorError> {
    let path = path.as_ref();
    let descriptors: Vec<Value> = match features.set.descriptors() {
        Descriptors::Float(v) => v.iter().map(|d| json!(d.to_vec())).collect(),
        Descriptors::Binary(v) => v.iter().map(|d| Value::String(hex::encode(d))).collect(),
    };
    let mut obj = Map::new();
    obj.insert("kind".into(), json!(features.set.kind()));
    obj.insert("method".into(), json!(features.method));
    obj.insert("slice_index".into(), json!(features.slice_index));
    if let Some(s) = &features.subject_id {
        obj.insert("subject_id".into(), json!(s));
    }
    obj.insert("keypoints".into(), json!(features.set.keypoints()));
    obj.insert("descriptors".into(), Value::Array(descriptors));
    let text = serde_json::to_string(&Value::Object(obj)).expect("feature file serializes");
    fs::write(path, text).map_err(|source| DescriptorError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureKey {
    pub subject: String,
    pub slice_index: i64,
    pub method: String,
}

/// Externally computed descriptor sets keyed by (subject, slice, method).
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    entries: BTreeMap<FeatureKey, DescriptorSet>,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every `*.json` file below `dir`. A file without `subject_id`
    /// belongs to the subject named by its parent directory.
    pub fn ingest(dir: impl AsRef<Path>) -> Result<Self, DescriptorError> {
        let mut files = Vec::new();
        collect_json(dir.as_ref(), &mut files)?;
        files.sort();
        let mut store = Self::new();
        for file in files {
            let f = read_external(&file)?;
            let subject = match f.subject_id {
                Some(s) => s,
                None => file
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            };
            store.insert(FeatureKey { subject, slice_index: f.slice_index, method: f.method }, f.set, &file)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, key: FeatureKey, set: DescriptorSet, source: &Path) -> Result<(), DescriptorError> {
        if self.entries.contains_key(&key) {
            return Err(DescriptorError::DuplicateEntry {
                subject: key.subject,
                slice_index: key.slice_index,
                method: key.method,
                path: source.to_path_buf(),
            });
        }
        self.entries.insert(key, set);
        Ok(())
    }

    pub fn get(&self, subject: &str, slice_index: i64, method: &str) -> Result<&DescriptorSet, DescriptorError> {
        let key = FeatureKey { subject: subject.to_string(), slice_index, method: method.to_string() };
        self.entries.get(&key).ok_or(DescriptorError::MissingFeature {
            subject: key.subject,
            slice_index,
            method: key.method,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &FeatureKey> {
        self.entries.keys()
    }
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), DescriptorError> {
    let io = |source| DescriptorError::Io { path: dir.to_path_buf(), source };
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp_json(n: usize) -> String {
        let kps: Vec<String> = (0..n).map(|i| format!(r#"{{"x":{i},"y":1.5}}"#)).collect();
        format!("[{}]", kps.join(","))
    }

    fn unit(i: usize) -> String {
        let v: Vec<String> = (0..128).map(|j| if j == i { "1.0".into() } else { "0".into() }).collect();
        format!("[{}]", v.join(","))
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn ten_float_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let descs: Vec<String> = (0..10).map(unit).collect();
        let body = format!(
            r#"{{"kind":"float128","method":"hardnet","slice_index":3,"keypoints":{},"descriptors":[{}]}}"#,
            kp_json(10),
            descs.join(",")
        );
        let set = load_external(write(dir.path(), "a.json", &body)).unwrap();
        assert_eq!(set.len(), 10);
        assert_eq!(set.kind(), DescriptorKind::Float128);
        assert_eq!(set.keypoints()[0].diameter, 7.0);
    }

    #[test]
    fn short_binary_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let short = "f".repeat(63);
        let body = format!(
            r#"{{"kind":"binary256","method":"brisk","slice_index":0,"keypoints":{},"descriptors":["{short}"]}}"#,
            kp_json(1)
        );
        let err = load_external(write(dir.path(), "b.json", &body)).unwrap_err();
        assert!(matches!(err, DescriptorError::SchemaError { ref field, .. } if field == "descriptors[0]"), "{err}");
    }

    #[test]
    fn zero_float_is_norm_violation() {
        let dir = tempfile::tempdir().unwrap();
        let zero = format!("[{}]", vec!["0"; 128].join(","));
        let body = format!(
            r#"{{"kind":"float128","method":"hardnet","slice_index":0,"keypoints":{},"descriptors":[{zero}]}}"#,
            kp_json(1)
        );
        assert!(matches!(
            load_external(write(dir.path(), "c.json", &body)),
            Err(DescriptorError::NormViolation { index: 0, .. })
        ));
    }

    #[test]
    fn off_norm_is_renormalized() {
        let dir = tempfile::tempdir().unwrap();
        let v = format!("[2.0{}]", ",0".repeat(127));
        let body = format!(
            r#"{{"kind":"float128","method":"m","slice_index":0,"keypoints":{},"descriptors":[{v}]}}"#,
            kp_json(1)
        );
        let set = load_external(write(dir.path(), "d.json", &body)).unwrap();
        match set.descriptors() {
            Descriptors::Float(v) => assert_eq!(v[0][0], 1.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn missing_field_named() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"kind":"binary256","slice_index":0,"keypoints":[],"descriptors":[]}"#;
        let err = load_external(write(dir.path(), "e.json", body)).unwrap_err();
        assert!(matches!(err, DescriptorError::SchemaError { ref field, .. } if field == "method"));
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let kp = Keypoint { x: 4.0, y: 5.0, response: 2.0, octave: 1, angle: Some(33.0), diameter: 37.2 };
        let mut d = [0u8; 32];
        d[0] = 0xA5;
        d[31] = 0x01;
        let f = ExternalFeatures {
            subject_id: Some("s1".into()),
            method: "orb".into(),
            slice_index: 7,
            set: DescriptorSet::new(vec![kp], Descriptors::Binary(vec![d])).unwrap(),
        };
        let p = dir.path().join("f.json");
        write_external(&f, &p).unwrap();
        assert_eq!(read_external(&p).unwrap(), f);
    }

    #[test]
    fn store_keys_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("subj-a");
        fs::create_dir(&sub).unwrap();
        for i in 0..3 {
            let body =
                format!(r#"{{"kind":"binary256","method":"brisk","slice_index":{i},"keypoints":[],"descriptors":[]}}"#);
            write(&sub, &format!("{i}.json"), &body);
        }
        let store = FeatureStore::ingest(dir.path()).unwrap();
        assert_eq!(store.len(), 3);
        assert!(store.get("subj-a", 2, "brisk").is_ok());
        assert!(matches!(
            store.get("subj-a", 42, "brisk"),
            Err(DescriptorError::MissingFeature { slice_index: 42, .. })
        ));

        let body = r#"{"kind":"binary256","method":"brisk","slice_index":1,"subject_id":"subj-a","keypoints":[],"descriptors":[]}"#;
        write(dir.path(), "dup.json", body);
        assert!(matches!(
            FeatureStore::ingest(dir.path()),
            Err(DescriptorError::DuplicateEntry { slice_index: 1, .. })
        ));
    }
}
