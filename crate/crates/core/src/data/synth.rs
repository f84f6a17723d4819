//! Procedural gesture frames for pipeline tests without recorded data.
//!
//! Each gesture class is an elliptical palm plus a distinct subset of five
//! finger bars, rendered as a high-resolution silhouette, rotated, box-
//! downsampled to 8×8 occupancy fractions, scaled to a photon budget, and
//! realized as per-pixel Poisson counts over a uniform background.

use rand::RngExt;
use rand_distr::{Distribution, Poisson};

use super::{tally_counts, DatasetManifest, CLASS_NAMES, NO_GESTURE};
use crate::error::Error;
use crate::imaging::{Frame, FRAME_DIM};
use crate::rng::{stream, tag};

/// Silhouette geometry is defined on a 64×64 design canvas and scaled to
/// `render_size` at evaluation time.
const DESIGN: f64 = 64.0;
const PALM_CENTER: (f64, f64) = (32.0, 40.0);
const PALM_RX: f64 = 13.0;
const PALM_RY: f64 = 11.0;
const PIVOT: (f64, f64) = (32.0, 32.0);
const FINGER_ANGLES_DEG: [f64; 5] = [-50.0, -25.0, 0.0, 25.0, 50.0];
const FINGER_LENGTHS: [f64; 5] = [16.0, 20.0, 22.0, 20.0, 15.0];
const FINGER_START: f64 = 8.0;
const FINGER_HALF_WIDTH: f64 = 2.6;

/// Finger-slot subsets for the ten gesture classes, in class order.
const CLASS_FINGERS: [&[usize]; 10] = [
    &[],
    &[0],
    &[1],
    &[1, 2],
    &[1, 2, 3],
    &[1, 2, 3, 4],
    &[0, 1, 2, 3, 4],
    &[1, 4],
    &[0, 4],
    &[0, 1],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGestureConfig {
    /// Max rotation magnitude in degrees; draws are uniform in ±this.
    pub rotation_deg: f64,
    /// Expected signal photons per frame, spread over the silhouette.
    pub photon_budget: f64,
    /// Expected stray photons per output pixel.
    pub background_rate: f64,
    /// Silhouette raster resolution before 8×8 downsampling.
    pub render_size: usize,
    pub seed: u64,
}

impl Default for SyntheticGestureConfig {
    fn default() -> Self {
        SyntheticGestureConfig {
            rotation_deg: 20.0,
            photon_budget: 2000.0,
            background_rate: 2.0,
            render_size: 64,
            seed: 0,
        }
    }
}

impl SyntheticGestureConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.photon_budget.is_finite() && self.photon_budget > 0.0) {
            return Err(Error::Domain(format!(
                "photon budget {} must be positive",
                self.photon_budget
            )));
        }
        if !(0.0..=180.0).contains(&self.rotation_deg) {
            return Err(Error::Domain(format!(
                "rotation range {} must lie in [0, 180] degrees",
                self.rotation_deg
            )));
        }
        if !(self.background_rate.is_finite() && self.background_rate >= 0.0) {
            return Err(Error::Domain(format!(
                "background rate {} must be non-negative",
                self.background_rate
            )));
        }
        if self.render_size < FRAME_DIM || !self.render_size.is_multiple_of(FRAME_DIM) {
            return Err(Error::Domain(format!(
                "render size {} must be a multiple of {FRAME_DIM}",
                self.render_size
            )));
        }
        Ok(())
    }
}

/// True when design-space point (x, y) lies inside the class silhouette.
fn in_silhouette(class: usize, x: f64, y: f64) -> bool {
    let (px, py) = PALM_CENTER;
    let ex = (x - px) / PALM_RX;
    let ey = (y - py) / PALM_RY;
    if ex * ex + ey * ey <= 1.0 {
        return true;
    }
    for &slot in CLASS_FINGERS[class] {
        let phi = FINGER_ANGLES_DEG[slot].to_radians();
        let (dx, dy) = (phi.sin(), -phi.cos());
        let (rx, ry) = (x - px, y - py);
        let along = rx * dx + ry * dy;
        let across = rx * dy - ry * dx;
        if along >= FINGER_START
            && along <= FINGER_START + FINGER_LENGTHS[slot]
            && across.abs() <= FINGER_HALF_WIDTH
        {
            return true;
        }
    }
    false
}

/// 8×8 occupancy fractions of the class silhouette rotated by `theta_deg`
/// about the canvas center.
fn occupancy(class: usize, theta_deg: f64, render_size: usize) -> [f64; FRAME_DIM * FRAME_DIM] {
    let mut frac = [0.0; FRAME_DIM * FRAME_DIM];
    if class == NO_GESTURE {
        return frac;
    }
    let cell = render_size / FRAME_DIM;
    let to_design = DESIGN / render_size as f64;
    let theta = theta_deg.to_radians();
    let (sin_t, cos_t) = (theta.sin(), theta.cos());
    for py in 0..render_size {
        for px in 0..render_size {
            let u = (px as f64 + 0.5) * to_design;
            let v = (py as f64 + 0.5) * to_design;
            // Inverse rotation: test the unrotated silhouette at the
            // pre-image of (u, v).
            let (ru, rv) = (u - PIVOT.0, v - PIVOT.1);
            let x = PIVOT.0 + ru * cos_t + rv * sin_t;
            let y = PIVOT.1 - ru * sin_t + rv * cos_t;
            if in_silhouette(class, x, y) {
                frac[(py / cell) * FRAME_DIM + px / cell] += 1.0;
            }
        }
    }
    let per_cell = (cell * cell) as f64;
    for f in &mut frac {
        *f /= per_cell;
    }
    frac
}

fn draw_poisson(lambda: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Result<u32, Error> {
    if lambda <= 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(lambda)
        .map_err(|e| Error::Domain(format!("photon rate {lambda}: {e}")))?;
    let draw: f64 = dist.sample(rng);
    Ok(if draw >= u32::MAX as f64 {
        u32::MAX
    } else {
        draw as u32
    })
}

/// Generates `n_per_class` frames for each of the 11 classes, class-major,
/// with one derived RNG stream per frame.
pub fn synth_generate(
    cfg: &SyntheticGestureConfig,
    n_per_class: usize,
) -> Result<(Vec<Frame>, DatasetManifest), Error> {
    cfg.validate()?;
    if n_per_class == 0 {
        return Err(Error::Domain("n per class must be >= 1".into()));
    }

    let mut frames = Vec::with_capacity(CLASS_NAMES.len() * n_per_class);
    for class in 0..CLASS_NAMES.len() {
        for j in 0..n_per_class {
            let mut rng = stream(cfg.seed, &[tag("synth"), class as u64, j as u64]);
            let theta = if cfg.rotation_deg > 0.0 {
                rng.random_range(-cfg.rotation_deg..cfg.rotation_deg)
            } else {
                0.0
            };
            let frac = occupancy(class, theta, cfg.render_size);
            let total: f64 = frac.iter().sum();
            let mut counts = Vec::with_capacity(FRAME_DIM * FRAME_DIM);
            for &f in &frac {
                let signal = if total > 0.0 {
                    cfg.photon_budget * f / total
                } else {
                    0.0
                };
                counts.push(draw_poisson(signal + cfg.background_rate, &mut rng)?);
            }
            frames.push(Frame::new(counts, Some(class))?);
        }
    }

    let manifest = DatasetManifest {
        version: 1,
        source: "synthetic".into(),
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        frame_counts: tally_counts(&frames, CLASS_NAMES.len())?,
        seed: Some(cfg.seed),
    };
    Ok((frames, manifest))
}
