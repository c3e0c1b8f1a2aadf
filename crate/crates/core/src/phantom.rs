//! Deterministic phantoms: disks, 1D step signals, class-dependent textures
//! and a labeled synthetic cohort.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded through
//! [`mix_seed`], a SplitMix64 chain over `(cohort seed, patient, vertebra,
//! patch)`, so every patch is a pure function of its coordinates.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container;
use crate::dataset::{Label3, Manifest, PatchRecord, PATCH_CENTER, PATCH_SIZE};
use crate::error::{Result, StvError};
use crate::image::GrayImage;

/// Minimum disk radius in pixels.
pub const MIN_RADIUS: f64 = 2.0;
/// Minimum clearance between a disk and the image border in pixels.
pub const BORDER_CLEARANCE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub contrast: f64,
}

impl Disk {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 - self.cx, y as f64 - self.cy);
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Scale `contrast * radius / 2` at which the disk shows up in the spectrum.
    pub fn critical_scale(&self) -> f64 {
        self.contrast * self.radius / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhantomKind {
    Disk(Disk),
    TwoDisks(Disk, Disk),
    Step1d { breakpoints: Vec<usize>, levels: Vec<f64> },
    NoiseTexture { label: Label3, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub kind: PhantomKind,
}

impl PhantomSpec {
    pub fn disk(size: usize, radius: f64, contrast: f64) -> Self {
        let c = (size / 2) as f64;
        PhantomSpec {
            width: size,
            height: size,
            kind: PhantomKind::Disk(Disk {
                cx: c,
                cy: c,
                radius,
                contrast,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(StvError::Geometry("empty grid".into()));
        }
        match &self.kind {
            PhantomKind::Disk(d) => self.check_disk(d),
            PhantomKind::TwoDisks(a, b) => {
                self.check_disk(a)?;
                self.check_disk(b)?;
                let dist = ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt();
                if dist <= a.radius + b.radius {
                    return Err(StvError::Geometry(format!(
                        "disks overlap: centers {dist:.2} px apart, radii {} + {}",
                        a.radius, b.radius
                    )));
                }
                Ok(())
            }
            PhantomKind::Step1d { breakpoints, levels } => {
                if self.height != 1 {
                    return Err(StvError::Geometry("1D step signals have height 1".into()));
                }
                check_steps(breakpoints, levels, self.width)
            }
            PhantomKind::NoiseTexture { .. } => {
                if self.width != PATCH_SIZE || self.height != PATCH_SIZE {
                    return Err(StvError::Geometry(format!(
                        "textures are {PATCH_SIZE}x{PATCH_SIZE}"
                    )));
                }
                Ok(())
            }
        }
    }

    fn check_disk(&self, d: &Disk) -> Result<()> {
        if !(d.radius >= MIN_RADIUS) {
            return Err(StvError::Geometry(format!(
                "radius {} below {MIN_RADIUS} px",
                d.radius
            )));
        }
        if !d.contrast.is_finite() || !d.cx.is_finite() || !d.cy.is_finite() {
            return Err(StvError::Geometry("non-finite disk parameter".into()));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let clear = BORDER_CLEARANCE;
        if d.cx - d.radius < clear
            || d.cy - d.radius < clear
            || d.cx + d.radius > w - 1.0 - clear
            || d.cy + d.radius > h - 1.0 - clear
        {
            return Err(StvError::Geometry(format!(
                "disk at ({}, {}) radius {} is closer than {clear} px to the border of {}x{}",
                d.cx, d.cy, d.radius, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn render(&self) -> Result<GrayImage> {
        self.validate()?;
        match &self.kind {
            PhantomKind::Disk(_) | PhantomKind::TwoDisks(..) => disk_image(self),
            PhantomKind::Step1d { breakpoints, levels } => step_signal_1d(breakpoints, levels, self.width),
            PhantomKind::NoiseTexture { label, seed } => Ok(texture_patch(*label, *seed)),
        }
    }
}

/// Indicator image(s) of the disk kinds.
pub fn disk_image(spec: &PhantomSpec) -> Result<GrayImage> {
    spec.validate()?;
    let disks: Vec<Disk> = match &spec.kind {
        PhantomKind::Disk(d) => vec![*d],
        PhantomKind::TwoDisks(a, b) => vec![*a, *b],
        _ => return Err(StvError::Geometry("disk_image needs a disk kind".into())),
    };
    GrayImage::from_fn(spec.width, spec.height, |x, y| {
        disks.iter().filter(|d| d.contains(x, y)).map(|d| d.contrast).sum()
    })
}

fn check_steps(breakpoints: &[usize], levels: &[f64], length: usize) -> Result<()> {
    if length == 0 {
        return Err(StvError::Geometry("empty signal".into()));
    }
    if levels.len() != breakpoints.len() + 1 {
        return Err(StvError::Geometry(format!(
            "{} breakpoints need {} levels, got {}",
            breakpoints.len(),
            breakpoints.len() + 1,
            levels.len()
        )));
    }
    if breakpoints.windows(2).any(|w| w[0] >= w[1]) || breakpoints.iter().any(|&b| b == 0 || b >= length) {
        return Err(StvError::Geometry(
            "breakpoints must be strictly increasing within (0, length)".into(),
        ));
    }
    Ok(())
}

/// Piecewise-constant single-row signal; `levels[i]` holds from
/// `breakpoints[i-1]` (or 0) up to `breakpoints[i]` (exclusive).
pub fn step_signal_1d(breakpoints: &[usize], levels: &[f64], length: usize) -> Result<GrayImage> {
    check_steps(breakpoints, levels, length)?;
    let mut values = Vec::with_capacity(length);
    let mut segment = 0;
    for i in 0..length {
        while segment < breakpoints.len() && i >= breakpoints[segment] {
            segment += 1;
        }
        values.push(levels[segment]);
    }
    GrayImage::from_signal(&values)
}

/// Random piecewise-constant signal with `segments` pieces and integer-ish
/// levels in [-2, 2], used by the orthogonality checks.
pub fn random_step_signal(length: usize, segments: usize, seed: u64) -> Result<GrayImage> {
    if segments == 0 || segments > length {
        return Err(StvError::Geometry(format!(
            "{segments} segments do not fit length {length}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut breaks: Vec<usize> = Vec::new();
    while breaks.len() < segments - 1 {
        let b = rng.gen_range(1..length);
        if !breaks.contains(&b) {
            breaks.push(b);
        }
    }
    breaks.sort_unstable();
    let mut levels: Vec<f64> = Vec::with_capacity(segments);
    while levels.len() < segments {
        let v = rng.gen_range(-4i32..=4) as f64 * 0.5;
        if levels.last() != Some(&v) {
            levels.push(v);
        }
    }
    step_signal_1d(&breaks, &levels, length)
}

/// SplitMix64 finaliser.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a per-item seed: `h = splitmix(seed)`, then `h = splitmix(h ^ part)`
/// for each coordinate in turn.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |h, &p| splitmix(h ^ p))
}

/// Parameters of the synthetic texture model.
///
/// A patch is a constant level plus a smooth periodic background (a few
/// low-frequency cosines), a cone-shaped halo under the mask center, bright
/// disk-shaped spots and a little noise. Spot amplitudes and halo height
/// depend on the class; spots wrap around the patch.
///
/// Defaults put the class signal at fine scales: HU spots are 2 to 16 times
/// brighter than NORMAL ones, and the weak halo only adds coarse energy at the
/// center.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureModel {
    pub base_level: (f64, f64),
    pub background_terms: usize,
    pub background_amplitude: (f64, f64),
    /// Class gain on the background amplitude, indexed like [`Label3::index`].
    pub background_gain: [f64; 3],
    pub spot_count: (usize, usize),
    pub spot_radius: (usize, usize),
    pub normal_amplitude: (f64, f64),
    pub lu_amplitude: (f64, f64),
    pub hu_amplitude: (f64, f64),
    /// Radius range of the central cone-shaped halo.
    pub halo_radius: (f64, f64),
    /// Peak halo contrast per class, indexed like [`Label3::index`].
    pub halo_amplitude: [(f64, f64); 3],
    pub noise_sigma: f64,
}

impl Default for TextureModel {
    fn default() -> Self {
        TextureModel {
            base_level: (0.0, 0.0),
            background_terms: 3,
            background_amplitude: (2.0, 8.0),
            background_gain: [1.0, 1.0, 1.0],
            spot_count: (40, 70),
            spot_radius: (1, 3),
            normal_amplitude: (1.0, 3.0),
            lu_amplitude: (3.0, 6.0),
            hu_amplitude: (6.0, 16.0),
            halo_radius: (8.0, 14.0),
            halo_amplitude: [(0.0, 0.0), (0.5, 1.5), (1.0, 3.0)],
            noise_sigma: 0.5,
        }
    }
}

impl TextureModel {
    pub fn amplitude_range(&self, label: Label3) -> (f64, f64) {
        match label {
            Label3::Normal => self.normal_amplitude,
            Label3::PathLu => self.lu_amplitude,
            Label3::PathHu => self.hu_amplitude,
        }
    }

    /// The spot field alone, without background, halo or noise.
    pub fn spot_field(&self, label: Label3, seed: u64) -> GrayImage {
        self.generate(label, seed).1
    }

    pub fn patch(&self, label: Label3, seed: u64) -> GrayImage {
        self.generate(label, seed).0
    }

    fn generate(&self, label: Label3, seed: u64) -> (GrayImage, GrayImage) {
        let n = PATCH_SIZE;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = rng.gen_range(self.base_level.0..=self.base_level.1);
        let mut background = vec![base; n * n];
        for _ in 0..self.background_terms {
            let (kx, ky) = loop {
                let k = (rng.gen_range(0..=2i32), rng.gen_range(0..=2i32));
                if k != (0, 0) {
                    break k;
                }
            };
            let amp = rng.gen_range(self.background_amplitude.0..=self.background_amplitude.1)
                * self.background_gain[label.index()];
            let phase = rng.gen_range(0.0..2.0 * PI);
            for y in 0..n {
                for x in 0..n {
                    let arg = 2.0 * PI * (kx as f64 * x as f64 + ky as f64 * y as f64) / n as f64;
                    background[y * n + x] += amp * (arg + phase).cos();
                }
            }
        }
        let (lo, hi) = self.amplitude_range(label);
        let mut spots = vec![0.0; n * n];
        let count = rng.gen_range(self.spot_count.0..=self.spot_count.1);
        for _ in 0..count {
            let cx = rng.gen_range(0..n) as i64;
            let cy = rng.gen_range(0..n) as i64;
            let r = rng.gen_range(self.spot_radius.0..=self.spot_radius.1) as i64;
            let amp = rng.gen_range(lo..=hi);
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy <= r * r {
                        let x = (cx + dx).rem_euclid(n as i64) as usize;
                        let y = (cy + dy).rem_euclid(n as i64) as usize;
                        spots[y * n + x] = f64::max(spots[y * n + x], amp);
                    }
                }
            }
        }
        let halo_r = rng.gen_range(self.halo_radius.0..=self.halo_radius.1);
        let (h_lo, h_hi) = self.halo_amplitude[label.index()];
        let halo = if h_hi > 0.0 { rng.gen_range(h_lo..=h_hi) } else { 0.0 };
        let (cx, cy) = (PATCH_CENTER.0 as f64, PATCH_CENTER.1 as f64);
        for y in 0..n {
            for x in 0..n {
                let d = (x as f64 - cx).hypot(y as f64 - cy);
                background[y * n + x] += halo * (1.0 - d / halo_r).max(0.0);
            }
        }
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n * n {
            let noise = if self.noise_sigma > 0.0 {
                // Irwin-Hall approximation of a unit normal
                let s: f64 = (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0;
                self.noise_sigma * s
            } else {
                0.0
            };
            values.push(background[i] + spots[i] + noise);
        }
        (
            GrayImage::from_raw(n, n, values),
            GrayImage::from_raw(n, n, spots),
        )
    }
}

/// A 50x50 textured patch of the given class under the default model.
pub fn texture_patch(label: Label3, seed: u64) -> GrayImage {
    TextureModel::default().patch(label, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortPatch {
    pub patient_id: String,
    pub vertebra_id: String,
    pub patch_id: String,
    pub label: Label3,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortPatient {
    pub patient_id: String,
    pub pathological: bool,
    pub patches: Vec<CohortPatch>,
}

/// Cohort layout limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortShape {
    pub vertebrae: (usize, usize),
    pub patches_per_vertebra: (usize, usize),
    /// Probability that a patch of a pathological patient is high uptake.
    pub hu_fraction: f64,
}

impl Default for CohortShape {
    fn default() -> Self {
        CohortShape {
            vertebrae: (1, 3),
            patches_per_vertebra: (1, 3),
            hu_fraction: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub seed: u64,
    pub patients: Vec<CohortPatient>,
    pub model: TextureModel,
}

impl SyntheticCohort {
    pub fn patches(&self) -> impl Iterator<Item = &CohortPatch> {
        self.patients.iter().flat_map(|p| p.patches.iter())
    }

    pub fn patch_image(&self, patch: &CohortPatch) -> GrayImage {
        self.model.patch(patch.label, patch.seed)
    }

    /// Manifest records pointing at `patches/<patient>_<vertebra>_<patch>.stv`.
    pub fn manifest(&self, base_dir: &Path) -> Result<Manifest> {
        let records = self
            .patches()
            .map(|p| PatchRecord {
                patient_id: p.patient_id.clone(),
                vertebra_id: p.vertebra_id.clone(),
                patch_id: p.patch_id.clone(),
                label: p.label,
                path: Path::new("patches").join(format!("{}_{}_{}.stv", p.patient_id, p.vertebra_id, p.patch_id)),
            })
            .collect();
        Manifest::new(records, base_dir.to_path_buf())
    }

    /// Writes every patch raster and `manifest.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        let patch_dir = dir.join("patches");
        std::fs::create_dir_all(&patch_dir).map_err(|e| StvError::io(&patch_dir, e))?;
        let manifest = self.manifest(dir)?;
        for (patch, record) in self.patches().zip(&manifest.records) {
            container::write_raster(&manifest.resolve(record), &self.patch_image(patch))?;
        }
        crate::dataset::write_manifest(&manifest, &dir.join("manifest.csv"))?;
        Ok(manifest)
    }
}

pub fn synth_cohort(n_normal: usize, n_pathological: usize, seed: u64) -> Result<SyntheticCohort> {
    synth_cohort_with(n_normal, n_pathological, seed, CohortShape::default(), TextureModel::default())
}

pub fn synth_cohort_with(
    n_normal: usize,
    n_pathological: usize,
    seed: u64,
    shape: CohortShape,
    model: TextureModel,
) -> Result<SyntheticCohort> {
    if n_normal == 0 || n_pathological == 0 {
        return Err(StvError::InvalidConfig("cohort needs at least one patient per status".into()));
    }
    let (v_lo, v_hi) = shape.vertebrae;
    let (p_lo, p_hi) = shape.patches_per_vertebra;
    if v_lo == 0 || v_lo > v_hi || v_hi > 6 || p_lo == 0 || p_lo > p_hi || p_hi > 6 {
        return Err(StvError::InvalidConfig("cohort shape must use 1..=6 vertebrae and patches".into()));
    }
    let total = n_normal + n_pathological;
    let width = total.to_string().len().max(3);
    let mut patients = Vec::with_capacity(total);
    for p in 0..total {
        let pathological = p >= n_normal;
        let patient_id = format!("P{p:0width$}");
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[p as u64]));
        let n_vert = rng.gen_range(v_lo..=v_hi);
        let mut patches = Vec::new();
        for v in 0..n_vert {
            let n_patch = rng.gen_range(p_lo..=p_hi);
            for q in 0..n_patch {
                let label = if !pathological {
                    Label3::Normal
                } else if rng.gen_bool(shape.hu_fraction) {
                    Label3::PathHu
                } else {
                    Label3::PathLu
                };
                patches.push(CohortPatch {
                    patient_id: patient_id.clone(),
                    vertebra_id: format!("V{v}"),
                    patch_id: format!("{q}"),
                    label,
                    seed: mix_seed(seed, &[p as u64, v as u64, q as u64]),
                });
            }
        }
        if pathological && !patches.iter().any(|c| c.label == Label3::PathHu) {
            patches[0].label = Label3::PathHu;
        }
        patients.push(CohortPatient {
            patient_id,
            pathological,
            patches,
        });
    }
    Ok(SyntheticCohort { seed, patients, model })
}
