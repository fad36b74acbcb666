use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{load_png, save_png, GrayImage, ImageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Axial,
    Sagittal,
    Coronal,
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Plane::Axial => "axial",
            Plane::Sagittal => "sagittal",
            Plane::Coronal => "coronal",
        })
    }
}

impl FromStr for Plane {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "axial" => Ok(Plane::Axial),
            "sagittal" => Ok(Plane::Sagittal),
            "coronal" => Ok(Plane::Coronal),
            other => Err(format!("unknown plane `{other}`")),
        }
    }
}

/// On-disk description of a slice series. File paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subject_id: String,
    pub plane: Plane,
    pub slice_thickness_mm: f64,
    pub slices: Vec<ManifestSlice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSlice {
    pub index: i64,
    pub file: PathBuf,
}

/// Ordered, equally sized slices of one subject along one anatomical axis.
///
/// Positions are 0-based offsets into `slices`; slice indices are the
/// identifiers from the manifest and are contiguous from `first_index()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    subject_id: String,
    plane: Plane,
    slice_thickness_mm: f64,
    first_index: i64,
    slices: Vec<GrayImage>,
}

impl SliceStack {
    /// Builds a stack whose slice indices run `first_index..first_index + slices.len()`.
    pub fn new(
        subject_id: impl Into<String>,
        plane: Plane,
        slice_thickness_mm: f64,
        first_index: i64,
        slices: Vec<GrayImage>,
    ) -> Result<Self, ImageError> {
        if let Some(first) = slices.first() {
            let (w, h) = first.dimensions();
            if let Some((i, odd)) = slices.iter().enumerate().find(|(_, s)| s.dimensions() != (w, h)) {
                return Err(ImageError::DimensionMismatch {
                    file: PathBuf::from(format!("<slice position {i}>")),
                    width: w,
                    height: h,
                    found_width: odd.width(),
                    found_height: odd.height(),
                });
            }
        }
        Ok(Self { subject_id: subject_id.into(), plane, slice_thickness_mm, first_index, slices })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    pub fn slice_thickness_mm(&self) -> f64 {
        self.slice_thickness_mm
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn first_index(&self) -> i64 {
        self.first_index
    }

    pub fn slices(&self) -> &[GrayImage] {
        &self.slices
    }

    pub fn slice(&self, position: usize) -> &GrayImage {
        &self.slices[position]
    }

    /// Manifest index of the slice at `position`.
    pub fn index_of(&self, position: usize) -> i64 {
        self.first_index + position as i64
    }

    /// Position of the slice with manifest index `index`, if present.
    pub fn position_of(&self, index: i64) -> Option<usize> {
        let offset = index.checked_sub(self.first_index)?;
        usize::try_from(offset).ok().filter(|&p| p < self.slices.len())
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.slices.len()).map(|p| self.index_of(p))
    }

    /// Copy of the stack with `f` applied to every slice.
    pub fn map_slices(&self, f: impl Fn(&GrayImage) -> GrayImage) -> SliceStack {
        SliceStack { slices: self.slices.iter().map(f).collect(), ..self.clone() }
    }

    pub fn with_subject_id(mut self, subject_id: impl Into<String>) -> SliceStack {
        self.subject_id = subject_id.into();
        self
    }
}

/// Loads every slice listed in a manifest, in manifest order.
pub fn load_stack(manifest_path: impl AsRef<Path>) -> Result<SliceStack, ImageError> {
    let manifest_path = manifest_path.as_ref();
    let parse_err = |reason: String| ImageError::ManifestParse { path: manifest_path.to_path_buf(), reason };
    let text = fs::read_to_string(manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ImageError::MissingFile(manifest_path.to_path_buf()),
        _ => ImageError::IoFailure { path: manifest_path.to_path_buf(), source: e },
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    let Some(first) = manifest.slices.first() else {
        return Err(parse_err("manifest lists no slices".into()));
    };
    let first_index = first.index;
    for (pos, entry) in manifest.slices.iter().enumerate() {
        let expected = first_index + pos as i64;
        if entry.index != expected {
            return Err(parse_err(format!(
                "slice indices must be strictly increasing and contiguous: found {} where {} was expected",
                entry.index, expected
            )));
        }
    }

    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut slices: Vec<GrayImage> = Vec::with_capacity(manifest.slices.len());
    for entry in &manifest.slices {
        let file = base.join(&entry.file);
        let img = load_png(&file)?;
        if let Some(first) = slices.first() {
            if first.dimensions() != img.dimensions() {
                return Err(ImageError::DimensionMismatch {
                    file,
                    width: first.width(),
                    height: first.height(),
                    found_width: img.width(),
                    found_height: img.height(),
                });
            }
        }
        slices.push(img);
    }
    SliceStack::new(manifest.subject_id, manifest.plane, manifest.slice_thickness_mm, first_index, slices)
}

impl SliceStack {
    /// Writes each slice as `slice_<index>.png` plus a `manifest.json` into
    /// `dir`, returning the manifest path.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf, ImageError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| ImageError::IoFailure { path: dir.to_path_buf(), source })?;
        let mut entries = Vec::with_capacity(self.len());
        for (pos, img) in self.slices.iter().enumerate() {
            let index = self.index_of(pos);
            let file = PathBuf::from(format!("slice_{index:04}.png"));
            save_png(img, dir.join(&file))?;
            entries.push(ManifestSlice { index, file });
        }
        let manifest = Manifest {
            subject_id: self.subject_id.clone(),
            plane: self.plane,
            slice_thickness_mm: self.slice_thickness_mm,
            slices: entries,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|source| ImageError::IoFailure { path: path.clone(), source })?;
        Ok(path)
    }
}
