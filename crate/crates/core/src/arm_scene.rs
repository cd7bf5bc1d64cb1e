//! 2D articulated-arm renderer with exact ground-truth body masks.
//!
//! The arm is a chain of capsules (segments with a width) posed by forward
//! kinematics and rasterized without anti-aliasing, so the coverage mask is
//! crisp. Backgrounds are two horizontal stripes plus random shapes, giving
//! every pixel seed-dependent variance while the arm's appearance stays a
//! pure function of the joint configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::SensoryState;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("geometry invalid: {0}")]
    Geometry(String),
    #[error("joint vector has {joints} angles but geometry has {links} links")]
    JointCountMismatch { joints: usize, links: usize },
    #[error("dimension mismatch: arm layer is {arm:?}, background is {background:?}")]
    DimMismatch {
        arm: (usize, usize),
        background: (usize, usize),
    },
    #[error("background style invalid: {0}")]
    Style(String),
}

/// Fixed physical description of the arm, in canvas pixels.
#[derive(Clone, Debug)]
pub struct ArmGeometry {
    pub link_lengths: Vec<f64>,
    pub link_widths: Vec<f64>,
    /// RGB in [0,1], one colour per link.
    pub link_colors: Vec<[f64; 3]>,
    /// Shoulder position in pixel coordinates (x right, y down).
    pub base_anchor: (f64, f64),
    /// Direction of the first link when all joint angles are zero.
    pub base_orientation: f64,
}

impl ArmGeometry {
    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.link_lengths.len();
        if n == 0 {
            return Err(SceneError::Geometry("arm needs at least one link".into()));
        }
        if self.link_widths.len() != n || self.link_colors.len() != n {
            return Err(SceneError::Geometry(format!(
                "lengths/widths/colors counts differ: {}/{}/{}",
                n,
                self.link_widths.len(),
                self.link_colors.len()
            )));
        }
        if self.link_lengths.iter().any(|&l| l <= 0.0) {
            return Err(SceneError::Geometry("link lengths must be positive".into()));
        }
        if self.link_widths.iter().any(|&w| w <= 0.0) {
            return Err(SceneError::Geometry("link widths must be positive".into()));
        }
        if self
            .link_colors
            .iter()
            .flatten()
            .any(|&c| !(0.0..=1.0).contains(&c))
        {
            return Err(SceneError::Geometry("link colors must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.link_lengths.len()
    }
}

/// Raw joint angles in radians, before normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct JointVector {
    pub angles: Vec<f64>,
}

/// One posed line segment of the arm, base to tip order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: (f64, f64),
    pub end: (f64, f64),
}

/// Chains the links: segment k starts at segment k-1's end and points along
/// base_orientation plus the sum of the first k joint angles.
pub fn forward_kinematics(
    joints: &JointVector,
    geometry: &ArmGeometry,
) -> Result<Vec<Segment>, SceneError> {
    if joints.angles.len() != geometry.joint_count() {
        return Err(SceneError::JointCountMismatch {
            joints: joints.angles.len(),
            links: geometry.joint_count(),
        });
    }
    let mut segments = Vec::with_capacity(geometry.joint_count());
    let mut pos = geometry.base_anchor;
    let mut heading = geometry.base_orientation;
    for (&angle, &len) in joints.angles.iter().zip(&geometry.link_lengths) {
        heading += angle;
        let end = (pos.0 + len * heading.cos(), pos.1 + len * heading.sin());
        segments.push(Segment { start: pos, end });
        pos = end;
    }
    Ok(segments)
}

/// Arm colour layer plus its crisp coverage mask (H*W*3 components, the
/// three channels of a pixel always agree at this stage).
#[derive(Clone, Debug)]
pub struct ArmLayer {
    pub h: usize,
    pub w: usize,
    pub color: Vec<f64>,
    pub coverage: Vec<bool>,
}

fn point_segment_dist_sq(p: (f64, f64), s: &Segment) -> f64 {
    let (dx, dy) = (s.end.0 - s.start.0, s.end.1 - s.start.1);
    let len_sq = dx * dx + dy * dy;
    let (px, py) = (p.0 - s.start.0, p.1 - s.start.1);
    let t = if len_sq > 0.0 {
        ((px * dx + py * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (px - t * dx, py - t * dy);
    cx * cx + cy * cy
}

/// A pixel is covered iff its centre lies within width/2 of some link's
/// segment (capsule test); the nearest covering link's colour wins.
pub fn rasterize_arm(
    segments: &[Segment],
    geometry: &ArmGeometry,
    canvas: (usize, usize),
) -> ArmLayer {
    let (h, w) = canvas;
    let mut color = vec![0.0; h * w * 3];
    let mut coverage = vec![false; h * w * 3];

    // Per-link bounding boxes keep the capsule test off most pixels.
    let boxes: Vec<(usize, usize, usize, usize)> = segments
        .iter()
        .zip(&geometry.link_widths)
        .map(|(s, &lw)| {
            let r = lw / 2.0;
            let x0 = (s.start.0.min(s.end.0) - r).floor().max(0.0) as usize;
            let y0 = (s.start.1.min(s.end.1) - r).floor().max(0.0) as usize;
            let x1 = ((s.start.0.max(s.end.0) + r).ceil().max(0.0) as usize).min(w);
            let y1 = ((s.start.1.max(s.end.1) + r).ceil().max(0.0) as usize).min(h);
            (x0, y0, x1, y1)
        })
        .collect();

    for y in 0..h {
        for x in 0..w {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best: Option<(f64, usize)> = None;
            for (k, s) in segments.iter().enumerate() {
                let (x0, y0, x1, y1) = boxes[k];
                if x < x0 || x >= x1 || y < y0 || y >= y1 {
                    continue;
                }
                let d2 = point_segment_dist_sq(p, s);
                let r = geometry.link_widths[k] / 2.0;
                if d2 <= r * r && best.map_or(true, |(bd, _)| d2 < bd) {
                    best = Some((d2, k));
                }
            }
            if let Some((_, k)) = best {
                let base = (y * w + x) * 3;
                color[base..base + 3].copy_from_slice(&geometry.link_colors[k]);
                coverage[base..base + 3].fill(true);
            }
        }
    }
    ArmLayer {
        h,
        w,
        color,
        coverage,
    }
}

/// Knobs of the procedural background generator.
#[derive(Clone, Debug)]
pub struct BackgroundStyle {
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Per-channel intensity range of the upper stripe.
    pub upper_intensity: (f64, f64),
    /// Per-channel intensity range of the lower stripe.
    pub lower_intensity: (f64, f64),
    /// Range of the stripe split row, as a fraction of the height.
    pub split_fraction: (f64, f64),
    /// Shape half-extent range, as a fraction of min(H, W).
    pub shape_extent: (f64, f64),
}

impl Default for BackgroundStyle {
    fn default() -> Self {
        Self {
            min_shapes: 3,
            max_shapes: 10,
            upper_intensity: (0.55, 0.95),
            lower_intensity: (0.05, 0.45),
            split_fraction: (0.3, 0.7),
            shape_extent: (0.06, 0.28),
        }
    }
}

impl BackgroundStyle {
    pub fn validate(&self) -> Result<(), SceneError> {
        let ranges = [
            ("upper_intensity", self.upper_intensity, 0.0, 1.0),
            ("lower_intensity", self.lower_intensity, 0.0, 1.0),
            ("split_fraction", self.split_fraction, 0.0, 1.0),
            ("shape_extent", self.shape_extent, 0.0, 1.0),
        ];
        for (name, (lo, hi), min, max) in ranges {
            if !(lo <= hi && lo >= min && hi <= max) {
                return Err(SceneError::Style(format!(
                    "{name} range ({lo}, {hi}) must be ordered within [{min}, {max}]"
                )));
            }
        }
        if self.min_shapes > self.max_shapes {
            return Err(SceneError::Style(format!(
                "min_shapes {} exceeds max_shapes {}",
                self.min_shapes, self.max_shapes
            )));
        }
        Ok(())
    }
}

enum Shape {
    Rect,
    Ellipse,
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Two-stripe base (brighter upper, darker lower) with random rectangles and
/// ellipses on top. Deterministic for a given seed; every pixel's colour
/// depends on the seed, so the environment stays unpredictable across seeds.
pub fn render_background(
    seed: u64,
    canvas: (usize, usize),
    style: &BackgroundStyle,
) -> SensoryState {
    let (h, w) = canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let split = (sample_range(&mut rng, style.split_fraction) * h as f64).round() as usize;
    let upper: Vec<f64> = (0..3)
        .map(|_| sample_range(&mut rng, style.upper_intensity))
        .collect();
    let lower: Vec<f64> = (0..3)
        .map(|_| sample_range(&mut rng, style.lower_intensity))
        .collect();

    let mut data = vec![0.0; h * w * 3];
    for y in 0..h {
        let stripe = if y < split { &upper } else { &lower };
        for x in 0..w {
            data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(stripe);
        }
    }

    let n_shapes = if style.max_shapes > style.min_shapes {
        rng.gen_range(style.min_shapes..=style.max_shapes)
    } else {
        style.min_shapes
    };
    let ext_scale = h.min(w) as f64;
    for _ in 0..n_shapes {
        let kind = if rng.gen_bool(0.5) {
            Shape::Rect
        } else {
            Shape::Ellipse
        };
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let ex = sample_range(&mut rng, style.shape_extent) * ext_scale;
        let ey = sample_range(&mut rng, style.shape_extent) * ext_scale;
        let col = [
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ];
        let x0 = ((cx - ex).floor().max(0.0)) as usize;
        let x1 = (((cx + ex).ceil()).max(0.0) as usize).min(w);
        let y0 = ((cy - ey).floor().max(0.0)) as usize;
        let y1 = (((cy + ey).ceil()).max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = match kind {
                    Shape::Rect => (px - cx).abs() <= ex && (py - cy).abs() <= ey,
                    Shape::Ellipse => {
                        let (nx, ny) = ((px - cx) / ex, (py - cy) / ey);
                        nx * nx + ny * ny <= 1.0
                    }
                };
                if inside {
                    data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&col);
                }
            }
        }
    }
    SensoryState::new(h, w, data).expect("background stays in [0,1]")
}

/// A composed observation: image, exact body mask, and the pose behind it.
#[derive(Clone, Debug)]
pub struct RenderedScene {
    pub image: SensoryState,
    pub body_mask: Vec<bool>,
    pub joint_vector: JointVector,
}

/// Arm layer where covered, background elsewhere; the mask is the coverage.
pub fn compose_scene(
    arm: &ArmLayer,
    background: &SensoryState,
    joints: JointVector,
) -> Result<RenderedScene, SceneError> {
    if (arm.h, arm.w) != (background.h, background.w) {
        return Err(SceneError::DimMismatch {
            arm: (arm.h, arm.w),
            background: (background.h, background.w),
        });
    }
    let mut data = background.values.clone();
    for (i, &covered) in arm.coverage.iter().enumerate() {
        if covered {
            data[i] = arm.color[i];
        }
    }
    Ok(RenderedScene {
        image: SensoryState::new(arm.h, arm.w, data).expect("composed image stays in [0,1]"),
        body_mask: arm.coverage.clone(),
        joint_vector: joints,
    })
}

/// Everything needed to render one observation.
#[derive(Clone, Debug)]
pub struct SceneConfig {
    pub geometry: ArmGeometry,
    /// Per-joint [lo, hi] angle ranges in radians.
    pub joint_ranges: Vec<(f64, f64)>,
    /// Render canvas (H, W), before any downsampling.
    pub canvas: (usize, usize),
    pub background: BackgroundStyle,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.geometry.validate()?;
        self.background.validate()?;
        if self.joint_ranges.len() != self.geometry.joint_count() {
            return Err(SceneError::Geometry(format!(
                "{} joint ranges for {} links",
                self.joint_ranges.len(),
                self.geometry.joint_count()
            )));
        }
        if self.joint_ranges.iter().any(|&(lo, hi)| lo > hi) {
            return Err(SceneError::Geometry("joint range with lo > hi".into()));
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return Err(SceneError::Geometry("canvas dims must be positive".into()));
        }
        Ok(())
    }

    /// Renders the arm at `joints` over the background drawn from `bg_seed`.
    pub fn render(&self, joints: JointVector, bg_seed: u64) -> Result<RenderedScene, SceneError> {
        let segments = forward_kinematics(&joints, &self.geometry)?;
        let arm = rasterize_arm(&segments, &self.geometry, self.canvas);
        let background = render_background(bg_seed, self.canvas, &self.background);
        compose_scene(&arm, &background, joints)
    }
}
