//! Labeled patch manifests, the 13-pixel circular mask and training-row rules.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;


use crate::container;
use crate::error::{Result, StvError};

/// Patch side length in pixels.
pub const PATCH_SIZE: usize = 50;
/// Mask center on a patch, 0-indexed.
pub const PATCH_CENTER: (usize, usize) = (25, 25);
/// Maximum patches per vertebra.
pub const MAX_PATCHES_PER_VERTEBRA: usize = 6;

pub const MANIFEST_HEADER: [&str; 5] = ["patient_id", "vertebra_id", "patch_id", "label", "path"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label3 {
    Normal,
    PathLu,
    PathHu,
}

impl Label3 {
    pub const ALL: [Label3; 3] = [Label3::Normal, Label3::PathLu, Label3::PathHu];

    pub fn as_str(self) -> &'static str {
        match self {
            Label3::Normal => "NORMAL",
            Label3::PathLu => "PATH_LU",
            Label3::PathHu => "PATH_HU",
        }
    }

    /// Dense class index 0, 1, 2 in the order NORMAL, PATH_LU, PATH_HU.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label3> {
        Label3::ALL.get(i).copied()
    }
}

impl fmt::Display for Label3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label3 {
    type Err = StvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NORMAL" => Ok(Label3::Normal),
            "PATH_LU" => Ok(Label3::PathLu),
            "PATH_HU" => Ok(Label3::PathHu),
            other => Err(StvError::InvalidConfig(format!("unknown label {other:?}"))),
        }
    }
}

/// Binary tag used for scoring: only high-uptake patches count as positive.
pub fn remap_lu(label: Label3) -> u8 {
    match label {
        Label3::PathHu => 1,
        Label3::PathLu | Label3::Normal => 0,
    }
}

/// Integer pixel offsets relative to a patch center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskOffsets {
    offsets: Vec<(i32, i32)>,
}

impl MaskOffsets {
    /// Discrete disk `dx^2 + dy^2 <= radius_sq`, ordered row-major by `(dy, dx)`.
    pub fn disk(radius_sq: i32) -> Self {
        let r = (radius_sq.max(0) as f64).sqrt().floor() as i32;
        let mut offsets = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= radius_sq {
                    offsets.push((dx, dy));
                }
            }
        }
        Self { offsets }
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

impl Default for MaskOffsets {
    /// The 13-pixel disk of radius 2.
    fn default() -> Self {
        Self::disk(4)
    }
}

/// Absolute `(x, y)` coordinates of the mask placed at `center` on a
/// `width x height` patch, in mask order.
pub fn masked_pixels(
    center: (usize, usize),
    mask: &MaskOffsets,
    width: usize,
    height: usize,
) -> Result<Vec<(usize, usize)>> {
    mask.offsets
        .iter()
        .map(|&(dx, dy)| {
            let x = center.0 as i64 + dx as i64;
            let y = center.1 as i64 + dy as i64;
            if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                Err(StvError::MaskBounds(format!(
                    "offset ({dx}, {dy}) from center ({}, {}) leaves the {width}x{height} patch",
                    center.0, center.1
                )))
            } else {
                Ok((x as usize, y as usize))
            }
        })
        .collect()
}

/// The default mask at the default center of a 50x50 patch.
pub fn default_mask_pixels() -> Vec<(usize, usize)> {
    masked_pixels(PATCH_CENTER, &MaskOffsets::default(), PATCH_SIZE, PATCH_SIZE)
        .expect("default mask fits the default patch")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchRecord {
    pub patient_id: String,
    pub vertebra_id: String,
    pub patch_id: String,
    pub label: Label3,
    /// Raster path; relative paths are resolved against the manifest directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PatientStatus {
    Normal,
    Pathological,
}

impl PatientStatus {
    pub fn is_pathological(self) -> bool {
        self == PatientStatus::Pathological
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub records: Vec<PatchRecord>,
    /// Directory that relative record paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    /// Builds a manifest after checking key uniqueness, vertebra sizes and
    /// patient label consistency.
    pub fn new(records: Vec<PatchRecord>, base_dir: PathBuf) -> Result<Self> {
        let m = Manifest { records, base_dir };
        m.validate().map_err(|message| StvError::Manifest {
            path: m.base_dir.clone(),
            message,
        })?;
        Ok(m)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let mut keys = HashSet::new();
        let mut per_vertebra: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for r in &self.records {
            if !keys.insert((&r.patient_id, &r.vertebra_id, &r.patch_id)) {
                return Err(format!(
                    "duplicate patch key ({}, {}, {})",
                    r.patient_id, r.vertebra_id, r.patch_id
                ));
            }
            let count = per_vertebra.entry((&r.patient_id, &r.vertebra_id)).or_default();
            *count += 1;
            if *count > MAX_PATCHES_PER_VERTEBRA {
                return Err(format!(
                    "vertebra ({}, {}) has more than {MAX_PATCHES_PER_VERTEBRA} patches",
                    r.patient_id, r.vertebra_id
                ));
            }
        }
        for (patient, status) in self.patients() {
            let has_lu = self
                .records
                .iter()
                .any(|r| r.patient_id == patient && r.label == Label3::PathLu);
            if has_lu && status == PatientStatus::Normal {
                return Err(format!("patient {patient} has PATH_LU patches but no PATH_HU patch"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Patients in order of first appearance with their derived status
    /// (pathological iff any PATH_HU patch).
    pub fn patients(&self) -> Vec<(String, PatientStatus)> {
        let mut order: Vec<String> = Vec::new();
        let mut status: BTreeMap<&str, PatientStatus> = BTreeMap::new();
        for r in &self.records {
            let entry = status.entry(&r.patient_id).or_insert_with(|| {
                order.push(r.patient_id.clone());
                PatientStatus::Normal
            });
            if r.label == Label3::PathHu {
                *entry = PatientStatus::Pathological;
            }
        }
        order
            .into_iter()
            .map(|p| {
                let s = status[p.as_str()];
                (p, s)
            })
            .collect()
    }

    pub fn resolve(&self, record: &PatchRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.base_dir.join(&record.path)
        }
    }

    /// Record indices per class.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for r in &self.records {
            counts[r.label.index()] += 1;
        }
        counts
    }
}

/// Reads and validates a manifest CSV, including every referenced raster
/// (existence, container integrity, 50x50 shape).
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    load_manifest_with(path, true)
}

/// As [`load_manifest`]; `check_rasters = false` skips opening the patch files.
pub fn load_manifest_with(path: &Path, check_rasters: bool) -> Result<Manifest> {
    let file = std::fs::File::open(path).map_err(|e| StvError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let manifest_err = |message: String| StvError::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| manifest_err(format!("unreadable header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(manifest_err(format!(
            "header must be {:?}, found {:?}",
            MANIFEST_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // line 1 is the header
        let line = i + 2;
        let row_err = |message: String| StvError::ManifestRow {
            path: path.to_path_buf(),
            row: line,
            message,
        };
        let row = row.map_err(|e| row_err(e.to_string()))?;
        if row.len() != 5 {
            return Err(row_err(format!("expected 5 fields, found {}", row.len())));
        }
        let label: Label3 = row[3].parse().map_err(|e: StvError| row_err(e.to_string()))?;
        for (name, value) in MANIFEST_HEADER.iter().zip(row.iter()) {
            if value.is_empty() {
                return Err(row_err(format!("empty {name}")));
            }
        }
        let record = PatchRecord {
            patient_id: row[0].to_string(),
            vertebra_id: row[1].to_string(),
            patch_id: row[2].to_string(),
            label,
            path: PathBuf::from(&row[4]),
        };
        if check_rasters {
            let full = if record.path.is_absolute() {
                record.path.clone()
            } else {
                base_dir.join(&record.path)
            };
            let img = container::read_raster(&full).map_err(|e| row_err(e.to_string()))?;
            if img.width() != PATCH_SIZE || img.height() != PATCH_SIZE {
                return Err(row_err(format!(
                    "patch is {}x{}, expected {PATCH_SIZE}x{PATCH_SIZE}",
                    img.width(),
                    img.height()
                )));
            }
        }
        records.push(record);
    }
    let m = Manifest { records, base_dir };
    m.validate().map_err(manifest_err)?;
    Ok(m)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| StvError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let to_err = |e: csv::Error| StvError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    writer.write_record(MANIFEST_HEADER).map_err(to_err)?;
    for r in &manifest.records {
        let p = r.path.to_string_lossy();
        writer
            .write_record([&r.patient_id, &r.vertebra_id, &r.patch_id, r.label.as_str(), p.as_ref()])
            .map_err(to_err)?;
    }
    writer.flush().map_err(|e| StvError::io(path, e))
}

/// Training rows as `(record index, label)`, with optional LU duplication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingRows {
    pub rows: Vec<(usize, Label3)>,
    /// Rows before duplication.
    pub unique: usize,
    /// Rows added by duplicating PATH_LU patches.
    pub duplicated: usize,
}

/// Rows for the records at `indices`; when `duplicate_lu` is set each
/// PATH_LU patch appears twice (consecutively).
pub fn training_rows_for(manifest: &Manifest, indices: &[usize], duplicate_lu: bool) -> TrainingRows {
    let mut rows = Vec::with_capacity(indices.len());
    let mut duplicated = 0;
    for &i in indices {
        let label = manifest.records[i].label;
        rows.push((i, label));
        if duplicate_lu && label == Label3::PathLu {
            rows.push((i, label));
            duplicated += 1;
        }
    }
    TrainingRows {
        rows,
        unique: indices.len(),
        duplicated,
    }
}

pub fn training_rows(manifest: &Manifest, duplicate_lu: bool) -> TrainingRows {
    let all: Vec<usize> = (0..manifest.records.len()).collect();
    training_rows_for(manifest, &all, duplicate_lu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(patient: &str, vertebra: &str, patch: &str, label: Label3) -> PatchRecord {
        PatchRecord {
            patient_id: patient.into(),
            vertebra_id: vertebra.into(),
            patch_id: patch.into(),
            label,
            path: PathBuf::from(format!("{patient}_{vertebra}_{patch}.stv")),
        }
    }

    #[test]
    fn remap_rule() {
        assert_eq!(remap_lu(Label3::PathHu), 1);
        assert_eq!(remap_lu(Label3::PathLu), 0);
        assert_eq!(remap_lu(Label3::Normal), 0);
    }

    #[test]
    fn labels_round_trip_through_strings() {
        for l in Label3::ALL {
            assert_eq!(l.as_str().parse::<Label3>().unwrap(), l);
            assert_eq!(Label3::from_index(l.index()), Some(l));
        }
        assert!("PATH_XX".parse::<Label3>().is_err());
    }

    #[test]
    fn default_mask_is_the_radius_two_disk() {
        let mask = MaskOffsets::default();
        assert_eq!(mask.len(), 13);
        let expected = [
            (0, -2),
            (-1, -1),
            (0, -1),
            (1, -1),
            (-2, 0),
            (-1, 0),
            (0, 0),
            (1, 0),
            (2, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
            (0, 2),
        ];
        assert_eq!(mask.offsets(), expected);
        let set: HashSet<(i32, i32)> = mask.offsets().iter().copied().collect();
        let syms: [fn((i32, i32)) -> (i32, i32); 8] = [
            |(x, y)| (x, y),
            |(x, y)| (-x, y),
            |(x, y)| (x, -y),
            |(x, y)| (-x, -y),
            |(x, y)| (y, x),
            |(x, y)| (-y, x),
            |(x, y)| (y, -x),
            |(x, y)| (-y, -x),
        ];
        for s in syms {
            let moved: HashSet<(i32, i32)> = set.iter().map(|&o| s(o)).collect();
            assert_eq!(moved, set);
        }
    }

    #[test]
    fn mask_placement_and_bounds() {
        let px = default_mask_pixels();
        assert_eq!(px.len(), 13);
        assert!(px.iter().all(|&(x, y)| (23..=27).contains(&x) && (23..=27).contains(&y)));
        let err = masked_pixels((1, 1), &MaskOffsets::default(), 50, 50).unwrap_err();
        assert!(matches!(err, StvError::MaskBounds(_)));
    }

    #[test]
    fn lu_duplication_counts() {
        let mut records = Vec::new();
        for i in 0..613 {
            records.push(rec("hu", &format!("v{}", i / 6), &format!("{}", i % 6), Label3::PathHu));
        }
        for i in 0..298 {
            records.push(rec("hu", &format!("w{}", i / 6), &format!("{}", i % 6), Label3::PathLu));
        }
        for i in 0..613 {
            records.push(rec("n", &format!("v{}", i / 6), &format!("{}", i % 6), Label3::Normal));
        }
        let m = Manifest::new(records, PathBuf::new()).unwrap();
        let dup = training_rows(&m, true);
        assert_eq!(dup.rows.len(), 1822);
        assert_eq!(dup.unique, 1524);
        assert_eq!(training_rows(&m, false).rows.len(), 1524);
        let mut seen: Vec<usize> = dup.rows.iter().map(|r| r.0).collect();
        seen.dedup();
        assert_eq!(seen, (0..1524).collect::<Vec<_>>());
    }

    #[test]
    fn duplication_without_lu_is_a_no_op() {
        let m = Manifest::new(
            vec![rec("a", "1", "1", Label3::Normal), rec("b", "1", "1", Label3::PathHu)],
            PathBuf::new(),
        )
        .unwrap();
        assert_eq!(training_rows(&m, true), training_rows(&m, false));
    }

    #[test]
    fn manifest_validation() {
        let dup = vec![rec("a", "1", "1", Label3::Normal), rec("a", "1", "1", Label3::Normal)];
        assert!(Manifest::new(dup, PathBuf::new()).is_err());
        let lu_only = vec![rec("a", "1", "1", Label3::PathLu)];
        assert!(Manifest::new(lu_only, PathBuf::new()).is_err());
        let crowded: Vec<_> = (0..7).map(|i| rec("a", "1", &i.to_string(), Label3::Normal)).collect();
        assert!(Manifest::new(crowded, PathBuf::new()).is_err());
        let m = Manifest::new(
            vec![
                rec("b", "1", "1", Label3::Normal),
                rec("a", "1", "1", Label3::PathLu),
                rec("a", "2", "1", Label3::PathHu),
            ],
            PathBuf::new(),
        )
        .unwrap();
        assert_eq!(
            m.patients(),
            vec![
                ("b".to_string(), PatientStatus::Normal),
                ("a".to_string(), PatientStatus::Pathological)
            ]
        );
        assert_eq!(m.class_counts(), [1, 1, 1]);
    }
}
