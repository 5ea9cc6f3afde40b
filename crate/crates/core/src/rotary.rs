//! Multi-level rotary time embedding.
//!
//! Each temporal level (year, month, day) owns a geometric inverse-frequency
//! spectrum `base^(-2i/d)`. A query or key vector is rotated pairwise over the
//! interleaved dimension pairs `(2i, 2i+1)` by `value * inv_freq[i]`, once per
//! level, and the rotated copies are combined with scalar fusion weights.
//! Values are never modified.

use crate::autodiff::Tensor;
use crate::calendar::TemporalTriplet;
use crate::error::{Error, Result};

pub const DEFAULT_BASE_YEAR: f64 = 1e6;
pub const DEFAULT_BASE_MONTH: f64 = 1e4;
pub const DEFAULT_BASE_DAY: f64 = 1e2;
pub const DEFAULT_ALPHA_YEAR: f64 = 1.5;
pub const DEFAULT_ALPHA_MONTH: f64 = 1.0;
pub const DEFAULT_ALPHA_DAY: f64 = 0.5;

/// Per-level bases and fusion weights, shared by every head and layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoteConfig {
    pub base_year: f64,
    pub base_month: f64,
    pub base_day: f64,
    pub alpha_year: f64,
    pub alpha_month: f64,
    pub alpha_day: f64,
    pub head_dim: usize,
}

impl RoteConfig {
    pub fn with_head_dim(head_dim: usize) -> Self {
        RoteConfig {
            base_year: DEFAULT_BASE_YEAR,
            base_month: DEFAULT_BASE_MONTH,
            base_day: DEFAULT_BASE_DAY,
            alpha_year: DEFAULT_ALPHA_YEAR,
            alpha_month: DEFAULT_ALPHA_MONTH,
            alpha_day: DEFAULT_ALPHA_DAY,
            head_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_head_dim(self.head_dim)?;
        for (name, base) in [
            ("base_year", self.base_year),
            ("base_month", self.base_month),
            ("base_day", self.base_day),
        ] {
            check_base(name, base)?;
        }
        for (name, alpha) in [
            ("alpha_year", self.alpha_year),
            ("alpha_month", self.alpha_month),
            ("alpha_day", self.alpha_day),
        ] {
            if !alpha.is_finite() {
                return Err(Error::config(format!("{name} must be finite, got {alpha}")));
            }
        }
        Ok(())
    }

    pub fn alpha_sum(&self) -> f64 {
        self.alpha_year + self.alpha_month + self.alpha_day
    }
}

fn check_head_dim(head_dim: usize) -> Result<()> {
    if head_dim < 2 || head_dim % 2 != 0 {
        return Err(Error::config(format!(
            "head_dim must be even and >= 2, got {head_dim}"
        )));
    }
    Ok(())
}

fn check_base(name: &str, base: f64) -> Result<()> {
    if !(base.is_finite() && base > 1.0) {
        return Err(Error::config(format!("{name} must be > 1, got {base}")));
    }
    Ok(())
}

/// Inverse frequencies `base^(-2i/d)` for `i in 0..d/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySpectrum(Vec<f64>);

impl FrequencySpectrum {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn inverse_frequencies(base: f64, head_dim: usize) -> Result<FrequencySpectrum> {
    check_head_dim(head_dim)?;
    check_base("base", base)?;
    let d = head_dim as f64;
    let inv = (0..head_dim / 2)
        .map(|i| base.powf(-2.0 * i as f64 / d))
        .collect();
    Ok(FrequencySpectrum(inv))
}

/// `value * inv_freq`, elementwise. Computed in f64; day ordinals reach ~2e4
/// and raw seconds ~2e9, where f32 angles lose the relative-shift property.
pub fn rotation_angles(value: u64, spectrum: &FrequencySpectrum) -> Vec<f64> {
    let v = value as f64;
    spectrum.0.iter().map(|w| v * w).collect()
}

/// Angles for each temporal level of one position.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSet {
    pub year: Vec<f64>,
    pub month: Vec<f64>,
    pub day: Vec<f64>,
}

/// `(-x1, x0, -x3, x2, ...)`.
pub fn rotate_half(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() % 2 != 0 {
        return Err(Error::dim(format!(
            "rotate_half needs an even length, got {}",
            x.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    for (o, p) in out.chunks_exact_mut(2).zip(x.chunks_exact(2)) {
        o[0] = -p[1];
        o[1] = p[0];
    }
    Ok(out)
}

fn check_pairs(x: &[f64], angles: &[f64]) -> Result<()> {
    if x.len() != 2 * angles.len() {
        return Err(Error::dim(format!(
            "vector of length {} needs {} angles, got {}",
            x.len(),
            x.len() / 2,
            angles.len()
        )));
    }
    Ok(())
}

/// Rotate each pair `(x[2i], x[2i+1])` by `angles[i]`.
pub fn apply_rotary(x: &[f64], angles: &[f64]) -> Result<Vec<f64>> {
    check_pairs(x, angles)?;
    let mut out = vec![0.0; x.len()];
    for ((o, p), &theta) in out.chunks_exact_mut(2).zip(x.chunks_exact(2)).zip(angles) {
        let (s, c) = theta.sin_cos();
        o[0] = c * p[0] - s * p[1];
        o[1] = s * p[0] + c * p[1];
    }
    Ok(out)
}

/// Same map as [`apply_rotary`], written as `x*cos + rotate_half(x)*sin` with
/// each angle repeated across its pair.
pub fn apply_rotary_vectorized(x: &[f64], angles: &[f64]) -> Result<Vec<f64>> {
    check_pairs(x, angles)?;
    let rotated = rotate_half(x)?;
    Ok(x
        .iter()
        .zip(&rotated)
        .enumerate()
        .map(|(j, (xi, ri))| {
            let theta = angles[j / 2];
            xi * theta.cos() + ri * theta.sin()
        })
        .collect())
}

/// One active level: a fusion weight and its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct RotaryLevel {
    pub weight: f64,
    pub spectrum: FrequencySpectrum,
}

/// A weighted set of independently rotated copies, `sum_l w_l * R(v_l * w)`.
///
/// Because every per-level rotation acts on the same pair subspaces, the sum
/// collapses to one scaled rotation per pair: the complex coefficient
/// `sum_l w_l * exp(i * theta_l)`. [`FusedRotary::coefficients`] tabulates
/// that coefficient; [`FusedRotary::apply`] evaluates the literal sum.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRotary {
    levels: Vec<RotaryLevel>,
    head_dim: usize,
}

impl FusedRotary {
    pub fn new(levels: Vec<RotaryLevel>, head_dim: usize) -> Result<Self> {
        check_head_dim(head_dim)?;
        if levels.is_empty() {
            return Err(Error::config("at least one rotary level is required"));
        }
        for l in &levels {
            if l.spectrum.len() != head_dim / 2 {
                return Err(Error::dim(format!(
                    "spectrum of length {} does not match head_dim {head_dim}",
                    l.spectrum.len()
                )));
            }
        }
        Ok(FusedRotary { levels, head_dim })
    }

    /// Year, month and day levels from a config.
    pub fn from_config(cfg: &RoteConfig) -> Result<Self> {
        cfg.validate()?;
        let level = |weight, base| -> Result<RotaryLevel> {
            Ok(RotaryLevel {
                weight,
                spectrum: inverse_frequencies(base, cfg.head_dim)?,
            })
        };
        FusedRotary::new(
            vec![
                level(cfg.alpha_year, cfg.base_year)?,
                level(cfg.alpha_month, cfg.base_month)?,
                level(cfg.alpha_day, cfg.base_day)?,
            ],
            cfg.head_dim,
        )
    }

    pub fn levels(&self) -> &[RotaryLevel] {
        &self.levels
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    fn check_values(&self, values: &[u64]) -> Result<()> {
        if values.len() != self.levels.len() {
            return Err(Error::dim(format!(
                "{} level values for {} levels",
                values.len(),
                self.levels.len()
            )));
        }
        Ok(())
    }

    /// Weighted sum of the per-level rotations of `x`.
    pub fn apply(&self, x: &[f64], values: &[u64]) -> Result<Vec<f64>> {
        self.check_values(values)?;
        if x.len() != self.head_dim {
            return Err(Error::dim(format!(
                "expected length {}, got {}",
                self.head_dim,
                x.len()
            )));
        }
        let mut out = vec![0.0; x.len()];
        for (level, &v) in self.levels.iter().zip(values) {
            let rotated = apply_rotary(x, &rotation_angles(v, &level.spectrum))?;
            for (o, r) in out.iter_mut().zip(rotated) {
                *o += level.weight * r;
            }
        }
        Ok(out)
    }

    /// Per-pair `(re, im)` of `sum_l w_l * exp(i * theta_l)`; length `head_dim/2`.
    pub fn coefficients(&self, values: &[u64]) -> Result<Vec<[f64; 2]>> {
        self.check_values(values)?;
        let mut coeffs = vec![[0.0; 2]; self.head_dim / 2];
        for (level, &v) in self.levels.iter().zip(values) {
            let angles = rotation_angles(v, &level.spectrum);
            for (c, theta) in coeffs.iter_mut().zip(angles) {
                let (s, co) = theta.sin_cos();
                c[0] += level.weight * co;
                c[1] += level.weight * s;
            }
        }
        Ok(coeffs)
    }
}

/// Apply a per-pair complex coefficient table to `x` in place of the sum.
pub fn apply_coefficients(x: &[f64], coeffs: &[[f64; 2]]) -> Vec<f64> {
    debug_assert_eq!(x.len(), 2 * coeffs.len());
    let mut out = vec![0.0; x.len()];
    for ((o, p), c) in out.chunks_exact_mut(2).zip(x.chunks_exact(2)).zip(coeffs) {
        o[0] = c[0] * p[0] - c[1] * p[1];
        o[1] = c[1] * p[0] + c[0] * p[1];
    }
    out
}

pub fn angle_set(triplet: TemporalTriplet, cfg: &RoteConfig) -> Result<AngleSet> {
    Ok(AngleSet {
        year: rotation_angles(triplet.year, &inverse_frequencies(cfg.base_year, cfg.head_dim)?),
        month: rotation_angles(
            triplet.month,
            &inverse_frequencies(cfg.base_month, cfg.head_dim)?,
        ),
        day: rotation_angles(triplet.day, &inverse_frequencies(cfg.base_day, cfg.head_dim)?),
    })
}

/// `alpha_y R(theta_y) x + alpha_m R(theta_m) x + alpha_d R(theta_d) x`.
pub fn fuse_levels(x: &[f64], triplet: TemporalTriplet, cfg: &RoteConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x.len() != cfg.head_dim {
        return Err(Error::dim(format!(
            "expected length {}, got {}",
            cfg.head_dim,
            x.len()
        )));
    }
    let angles = angle_set(triplet, cfg)?;
    let mut out = vec![0.0; x.len()];
    for (alpha, theta) in [
        (cfg.alpha_year, &angles.year),
        (cfg.alpha_month, &angles.month),
        (cfg.alpha_day, &angles.day),
    ] {
        for (o, r) in out.iter_mut().zip(apply_rotary(x, theta)?) {
            *o += alpha * r;
        }
    }
    Ok(out)
}

/// Row-wise [`fuse_levels`] over query and key matrices (`positions x head_dim`).
pub fn rote_transform_qk(
    q: &Tensor,
    k: &Tensor,
    triplets: &[TemporalTriplet],
    cfg: &RoteConfig,
) -> Result<(Tensor, Tensor)> {
    let transform = |m: &Tensor| -> Result<Tensor> {
        if m.rank() != 2 || m.rows() != triplets.len() || m.cols() != cfg.head_dim {
            return Err(Error::dim(format!(
                "expected [{}, {}], got {:?}",
                triplets.len(),
                cfg.head_dim,
                m.shape()
            )));
        }
        let mut data = Vec::with_capacity(m.numel());
        for (row, &t) in m.data().chunks_exact(cfg.head_dim).zip(triplets) {
            data.extend(fuse_levels(row, t, cfg)?);
        }
        Tensor::new(m.shape().to_vec(), data)
    };
    Ok((transform(q)?, transform(k)?))
}
