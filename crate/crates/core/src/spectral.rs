//! Spectral TV transform, spectrum, filtering and per-pixel scale signatures.

use crate::error::{Result, StvError};
use crate::image::GrayImage;
use crate::tvflow::{tv_flow, FlowConfig, ScaleSpace};

/// Spectral components `phi_1..phi_n` of an image plus the finite-horizon residual.
///
/// `sum_k phi_k + residual` reproduces the source image up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralStack {
    components: Vec<GrayImage>,
    residual: GrayImage,
    dt: f64,
    source_mean: f64,
}

impl SpectralStack {
    pub fn new(components: Vec<GrayImage>, residual: GrayImage, dt: f64, source_mean: f64) -> Result<Self> {
        if let Some(bad) = components.iter().find(|c| !c.same_shape(&residual)) {
            return Err(StvError::dims(
                format!("{}x{}", residual.width(), residual.height()),
                format!("{}x{}", bad.width(), bad.height()),
            ));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(StvError::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            components,
            residual,
            dt,
            source_mean,
        })
    }

    pub fn components(&self) -> &[GrayImage] {
        &self.components
    }

    /// Component `k` in 1-based scale indexing.
    pub fn component(&self, k: usize) -> &GrayImage {
        &self.components[k - 1]
    }

    pub fn residual(&self) -> &GrayImage {
        &self.residual
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn source_mean(&self) -> f64 {
        self.source_mean
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn width(&self) -> usize {
        self.residual.width()
    }

    pub fn height(&self) -> usize {
        self.residual.height()
    }

    /// Scale `t_k = k * dt` of component `k`.
    pub fn scale(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Keeps only the first `count` components; the residual is unchanged,
    /// so the truncated stack no longer reconstructs the source.
    pub fn truncated(&self, count: usize) -> Result<SpectralStack> {
        if count > self.components.len() {
            return Err(StvError::InvalidConfig(format!(
                "cannot keep {count} of {} components",
                self.components.len()
            )));
        }
        Ok(SpectralStack {
            components: self.components[..count].to_vec(),
            residual: self.residual.clone(),
            dt: self.dt,
            source_mean: self.source_mean,
        })
    }
}

/// `S_k = <f, phi_k>` together with the residual term `<f, f_r>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub residual_term: f64,
}

impl Spectrum {
    /// `sum_k S_k + <f, f_r>`, which equals `|f|^2`.
    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() + self.residual_term
    }
}

/// Per-component gains `H_k` applied by [`stv_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    pub gains: Vec<f64>,
    pub residual_gain: f64,
}

impl TransferFunction {
    pub fn new(gains: Vec<f64>, residual_gain: f64) -> Result<Self> {
        if gains.iter().any(|g| !g.is_finite()) || !residual_gain.is_finite() {
            return Err(StvError::InvalidConfig("transfer gains must be finite".into()));
        }
        Ok(Self { gains, residual_gain })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            gains: vec![1.0; n],
            residual_gain: 1.0,
        }
    }

    /// Ideal filter from a predicate on the scale `t_k = k * dt`.
    pub fn from_scales(n: usize, dt: f64, keep: impl Fn(f64) -> bool) -> Self {
        Self {
            gains: (1..=n).map(|k| if keep(k as f64 * dt) { 1.0 } else { 0.0 }).collect(),
            residual_gain: 1.0,
        }
    }
}

/// Spectral components from a flow trajectory.
///
/// `phi_k = k * (u_{k+1} - 2 u_k + u_{k-1})` for `k = 1..n` (the time
/// measure is folded in) and `f_r = (n + 1) u_n - n u_{n+1}`; components and
/// residual telescope back to `u_0`.
pub fn stv_transform(space: &ScaleSpace) -> Result<SpectralStack> {
    let n = space.config.n_components;
    if space.frames.len() != n + 2 {
        return Err(StvError::Contract(format!(
            "scale space has {} frames, {n} components need {}",
            space.frames.len(),
            n + 2
        )));
    }
    let u = &space.frames;
    let (w, h) = (u[0].width(), u[0].height());
    let mut components = Vec::with_capacity(n);
    for k in 1..=n {
        let kf = k as f64;
        let values = u[k + 1]
            .values()
            .iter()
            .zip(u[k].values())
            .zip(u[k - 1].values())
            .map(|((next, cur), prev)| kf * ((next - cur) - (cur - prev)))
            .collect();
        components.push(GrayImage::new(w, h, values)?);
    }
    let (nf, n1) = (n as f64, (n + 1) as f64);
    let residual: Vec<f64> = u[n]
        .values()
        .iter()
        .zip(u[n + 1].values())
        .map(|(a, b)| n1 * a - nf * b)
        .collect();
    let residual = GrayImage::new(w, h, residual)?;
    SpectralStack::new(components, residual, space.config.dt, u[0].mean())
}

/// Runs the flow and the transform in one go.
pub fn decompose(f: &GrayImage, config: &FlowConfig) -> Result<(SpectralStack, ScaleSpace)> {
    let space = tv_flow(f, config)?;
    let stack = stv_transform(&space)?;
    Ok((stack, space))
}

/// `sum_k phi_k + f_r`.
pub fn reconstruct(stack: &SpectralStack) -> GrayImage {
    filter_unchecked(stack, |_| 1.0, 1.0)
}

fn filter_unchecked(stack: &SpectralStack, gain: impl Fn(usize) -> f64, residual_gain: f64) -> GrayImage {
    let mut acc = vec![0.0; stack.residual.len()];
    for (k, phi) in stack.components.iter().enumerate() {
        let g = gain(k);
        for (a, v) in acc.iter_mut().zip(phi.values()) {
            *a += g * v;
        }
    }
    for (a, v) in acc.iter_mut().zip(stack.residual.values()) {
        *a += residual_gain * v;
    }
    GrayImage::from_raw(stack.width(), stack.height(), acc)
}

pub fn spectrum(f: &GrayImage, stack: &SpectralStack) -> Result<Spectrum> {
    f.check_shape(&stack.residual)?;
    Ok(Spectrum {
        values: stack.components.iter().map(|phi| f.dot(phi)).collect(),
        residual_term: f.dot(&stack.residual),
    })
}

/// Spectrum restricted to a set of pixels: `S_k = sum_{x in pixels} f(x) phi_k(x)`.
pub fn masked_spectrum(f: &GrayImage, stack: &SpectralStack, pixels: &[(usize, usize)]) -> Result<Spectrum> {
    f.check_shape(&stack.residual)?;
    if let Some(&(x, y)) = pixels.iter().find(|&&(x, y)| x >= f.width() || y >= f.height()) {
        return Err(StvError::MaskBounds(format!(
            "pixel ({x}, {y}) outside {}x{}",
            f.width(),
            f.height()
        )));
    }
    let inner = |img: &GrayImage| pixels.iter().map(|&(x, y)| f.get(x, y) * img.get(x, y)).sum();
    Ok(Spectrum {
        values: stack.components.iter().map(inner).collect(),
        residual_term: inner(&stack.residual),
    })
}

/// `sum_k H_k phi_k + H_r f_r`.
pub fn stv_filter(stack: &SpectralStack, transfer: &TransferFunction) -> Result<GrayImage> {
    if transfer.gains.len() != stack.n_components() {
        return Err(StvError::dims(
            format!("{} gains", stack.n_components()),
            format!("{} gains", transfer.gains.len()),
        ));
    }
    Ok(filter_unchecked(stack, |k| transfer.gains[k], transfer.residual_gain))
}

/// Normalised inner product `<phi_i, phi_j> / (|phi_i| |phi_j|)`, or `None`
/// when either norm is zero.
pub fn component_correlation(stack: &SpectralStack, i: usize, j: usize) -> Option<f64> {
    let (a, b) = (stack.component(i), stack.component(j));
    let denom = a.norm() * b.norm();
    (denom > 0.0).then(|| a.dot(b) / denom)
}

/// Per-pixel scale signatures, stored pixel-major (row-major pixels, each
/// holding `n` consecutive scale values).
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureField {
    width: usize,
    height: usize,
    n: usize,
    data: Vec<f64>,
    p_enh: f64,
    enhanced: bool,
}

impl SignatureField {
    pub fn new(width: usize, height: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || n == 0 {
            return Err(StvError::InvalidConfig(format!(
                "signature field {width}x{height}x{n} is empty"
            )));
        }
        if data.len() != width * height * n {
            return Err(StvError::dims(width * height * n, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(StvError::InvalidImage("non-finite signature value".into()));
        }
        Ok(Self {
            width,
            height,
            n,
            data,
            p_enh: 1.0,
            enhanced: false,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Signature length (number of scales).
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_enhanced(&self) -> bool {
        self.enhanced
    }

    /// Exponent used by the enhancement, meaningful once enhanced.
    pub fn p_enh(&self) -> f64 {
        self.p_enh
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn signature(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.n;
        &self.data[start..start + self.n]
    }

    /// Rebuilds a field previously enhanced with exponent `p_enh`.
    pub fn into_enhanced(mut self, p_enh: f64) -> Self {
        self.enhanced = true;
        self.p_enh = p_enh;
        self
    }

    /// Scale-`k` slice (1-based) as an image.
    pub fn plane(&self, k: usize) -> GrayImage {
        let values = self.data.chunks_exact(self.n).map(|s| s[k - 1]).collect();
        GrayImage::from_raw(self.width, self.height, values)
    }
}

/// `psi(x)_k = phi_k(x)` for every pixel.
pub fn extract_signatures(stack: &SpectralStack) -> SignatureField {
    let (w, h, n) = (stack.width(), stack.height(), stack.n_components());
    let mut data = vec![0.0; w * h * n];
    for (k, phi) in stack.components.iter().enumerate() {
        for (p, v) in phi.values().iter().enumerate() {
            data[p * n + k] = *v;
        }
    }
    SignatureField {
        width: w,
        height: h,
        n,
        data,
        p_enh: 1.0,
        enhanced: false,
    }
}

/// Signatures at the listed pixels only, in the order given.
pub fn signatures_at(stack: &SpectralStack, pixels: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
    let (w, h) = (stack.width(), stack.height());
    pixels
        .iter()
        .map(|&(x, y)| {
            if x >= w || y >= h {
                return Err(StvError::MaskBounds(format!("pixel ({x}, {y}) outside {w}x{h}")));
            }
            Ok(stack.components.iter().map(|phi| phi.get(x, y)).collect())
        })
        .collect()
}

/// Multiplies one signature by its L1 norm raised to `p_enh`.
pub fn enhance_vector(signature: &[f64], p_enh: f64) -> Vec<f64> {
    let l1: f64 = signature.iter().map(|v| v.abs()).sum();
    let gain = l1.powf(p_enh);
    signature.iter().map(|v| v * gain).collect()
}

pub fn enhance_signatures(field: &SignatureField, p_enh: f64) -> Result<SignatureField> {
    if field.enhanced {
        return Err(StvError::Contract("signature field is already enhanced".into()));
    }
    if !(p_enh >= 0.0 && p_enh.is_finite()) {
        return Err(StvError::InvalidConfig(format!(
            "enhancement exponent must be >= 0, got {p_enh}"
        )));
    }
    if field.n == 0 {
        return Ok(field.clone().into_enhanced(p_enh));
    }
    let data = field
        .data
        .chunks_exact(field.n)
        .flat_map(|s| enhance_vector(s, p_enh))
        .collect();
    Ok(SignatureField {
        data,
        p_enh,
        enhanced: true,
        ..field.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_stack() -> SpectralStack {
        let f = GrayImage::from_fn(7, 5, |x, y| ((x * 3 + y * 5) % 4) as f64).unwrap();
        let cfg = FlowConfig {
            n_components: 6,
            ..FlowConfig::default()
        };
        decompose(&f, &cfg).unwrap().0
    }

    #[test]
    fn constant_source_gives_zero_components() {
        let f = GrayImage::constant(8, 8, 2.5).unwrap();
        let cfg = FlowConfig {
            n_components: 5,
            ..FlowConfig::default()
        };
        let (stack, _) = decompose(&f, &cfg).unwrap();
        assert!(stack.components().iter().all(|c| c.values().iter().all(|&v| v == 0.0)));
        assert_eq!(*stack.residual(), f);
        let s = spectrum(&f, &stack).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert_eq!(s.residual_term, f.norm_sq());
        assert!(extract_signatures(&stack).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_is_checked() {
        let f = GrayImage::constant(3, 3, 1.0).unwrap();
        let mut space = tv_flow(&f, &FlowConfig { n_components: 4, ..FlowConfig::default() }).unwrap();
        space.frames.pop();
        assert!(matches!(stv_transform(&space), Err(StvError::Contract(_))));
    }

    #[test]
    fn reconstruction_and_parseval_are_exact() {
        let stack = ramp_stack();
        let f = GrayImage::from_fn(7, 5, |x, y| ((x * 3 + y * 5) % 4) as f64).unwrap();
        assert!(reconstruct(&stack).max_abs_diff(&f) <= 1e-9);
        let s = spectrum(&f, &stack).unwrap();
        assert!((s.total() - f.norm_sq()).abs() <= 1e-7 * f.norm_sq());
    }

    #[test]
    fn residual_only_stack_reconstructs_constant() {
        let c = GrayImage::constant(4, 3, -0.5).unwrap();
        let stack = SpectralStack::new(Vec::new(), c.clone(), 0.25, -0.5).unwrap();
        assert_eq!(reconstruct(&stack), c);
    }

    #[test]
    fn filters_with_trivial_gains() {
        let stack = ramp_stack();
        let n = stack.n_components();
        let all = stv_filter(&stack, &TransferFunction::identity(n)).unwrap();
        assert_eq!(all, reconstruct(&stack));
        let none = stv_filter(&stack, &TransferFunction::new(vec![0.0; n], 1.0).unwrap()).unwrap();
        assert_eq!(none, *stack.residual());
        assert!(stv_filter(&stack, &TransferFunction::identity(n + 1)).is_err());
        assert!(TransferFunction::new(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn enhancement_arithmetic() {
        assert_eq!(enhance_vector(&[1.0, -1.0, 2.0], 1.0), vec![4.0, -4.0, 8.0]);
        assert_eq!(enhance_vector(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
        let raw = [0.3, -0.2, 0.05];
        let c = 3.0;
        let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
        for p in [0.0, 1.0, 2.0] {
            let a = enhance_vector(&raw, p);
            let b = enhance_vector(&scaled, p);
            for (x, y) in a.iter().zip(&b) {
                assert!((x * c.powf(1.0 + p) - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn double_enhancement_is_rejected() {
        let field = extract_signatures(&ramp_stack());
        let once = enhance_signatures(&field, 1.0).unwrap();
        assert!(once.is_enhanced());
        assert!(matches!(enhance_signatures(&once, 1.0), Err(StvError::Contract(_))));
        assert!(enhance_signatures(&field, -1.0).is_err());
        let (x, y) = (3, 2);
        assert_eq!(once.signature(x, y), enhance_vector(field.signature(x, y), 1.0).as_slice());
    }

    #[test]
    fn signature_layout_matches_components() {
        let stack = ramp_stack();
        let field = extract_signatures(&stack);
        assert_eq!(field.len(), stack.n_components());
        for k in 1..=stack.n_components() {
            assert_eq!(field.plane(k), *stack.component(k));
        }
        let picked = signatures_at(&stack, &[(1, 2), (6, 4)]).unwrap();
        assert_eq!(picked[0], field.signature(1, 2));
        assert_eq!(picked[1], field.signature(6, 4));
        assert!(signatures_at(&stack, &[(7, 0)]).is_err());
    }

    #[test]
    fn masked_spectrum_over_all_pixels_is_the_spectrum() {
        let stack = ramp_stack();
        let f = GrayImage::from_fn(7, 5, |x, y| ((x * 3 + y * 5) % 4) as f64).unwrap();
        let all: Vec<(usize, usize)> = (0..5).flat_map(|y| (0..7).map(move |x| (x, y))).collect();
        let a = masked_spectrum(&f, &stack, &all).unwrap();
        let b = spectrum(&f, &stack).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_keeps_leading_components() {
        let stack = ramp_stack();
        let t = stack.truncated(3).unwrap();
        assert_eq!(t.n_components(), 3);
        assert_eq!(t.component(3), stack.component(3));
        assert!(stack.truncated(7).is_err());
    }
}
