//! Procedural synthetic faces with parsing and depth maps.
//!
//! A face is a skin-toned ellipse on a flat background with two eye
//! ellipses, a nose triangle and a mouth ellipse. Every component stays
//! inside its fixed bounding box for all seeds, and components never
//! overlap, so the parsing map is a clean partition.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng};
use crate::scalar::Scalar;
use crate::tensor::kernels::resize_labels;
use crate::tensor::Tensor;

pub const NUM_COMPONENTS: usize = 5;

/// Parsing labels. `Face` doubles as background and whole-face class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Component {
    Face = 0,
    LeftEye = 1,
    RightEye = 2,
    Nose = 3,
    Mouth = 4,
}

impl Component {
    pub const ALL: [Component; NUM_COMPONENTS] = [Component::Face, Component::LeftEye, Component::RightEye, Component::Nose, Component::Mouth];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Face => "face",
            Component::LeftEye => "left_eye",
            Component::RightEye => "right_eye",
            Component::Nose => "nose",
            Component::Mouth => "mouth",
        }
    }
}

/// Fractional bounding box `(x0, y0, x1, y1)` of one component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentBox {
    pub component: Component,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl ComponentBox {
    /// Pixel window `(row0, col0, rows, cols)` on an `h × w` grid, rounded
    /// outward and never smaller than 1×1.
    pub fn pixel_window(&self, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let span = |lo: f64, hi: f64, n: usize| {
            let a = ((lo * n as f64).floor().max(0.0) as usize).min(n - 1);
            let b = ((hi * n as f64).ceil() as usize).clamp(a + 1, n);
            (a, b - a)
        };
        let (r0, rows) = span(self.y0, self.y1, h);
        let (c0, cols) = span(self.x0, self.x1, w);
        (r0, c0, rows, cols)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x0 && u <= self.x1 && v >= self.y0 && v <= self.y1
    }
}

pub fn component_boxes() -> [ComponentBox; NUM_COMPONENTS] {
    let b = |component, x0, y0, x1, y1| ComponentBox { component, x0, y0, x1, y1 };
    [
        b(Component::Face, 0.0, 0.0, 1.0, 1.0),
        b(Component::LeftEye, 0.20, 0.30, 0.45, 0.50),
        b(Component::RightEye, 0.55, 0.30, 0.80, 0.50),
        b(Component::Nose, 0.38, 0.45, 0.62, 0.70),
        b(Component::Mouth, 0.30, 0.68, 0.70, 0.88),
    ]
}

/// Integer label image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsingMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl ParsingMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape("ParsingMap", format!("{} labels", height * width), labels.len().to_string()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_COMPONENTS) {
            return Err(Error::invalid(format!("parsing label {bad} outside 0..{NUM_COMPONENTS}")));
        }
        Ok(Self { height, width, labels })
    }

    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: resize_labels(&self.labels, self.height, self.width, height, width),
        }
    }

    /// `[1,H,W]` indicator of `label`.
    pub fn mask<T: Scalar>(&self, label: u8) -> Tensor<T> {
        Tensor::from_fn(&[1, self.height, self.width], |i| if self.labels[i] == label { T::one() } else { T::zero() })
    }

    pub fn crop(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        let labels = (r0..r0 + rows).flat_map(|r| self.labels[r * self.width + c0..r * self.width + c0 + cols].iter().copied()).collect();
        Self { height: rows, width: cols, labels }
    }

    pub fn present_labels(&self) -> Vec<u8> {
        let mut seen = [false; NUM_COMPONENTS];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..NUM_COMPONENTS as u8).filter(|&l| seen[l as usize]).collect()
    }
}

/// HQ image, parsing map and depth map drawn from one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceSample<T: Scalar = f64> {
    pub image: Tensor<T>,
    pub parsing: ParsingMap,
    pub depth: Tensor<T>,
    pub seed: u64,
}

#[derive(Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    fn rho2(&self, u: f64, v: f64) -> f64 {
        ((u - self.cx) / self.rx).powi(2) + ((v - self.cy) / self.ry).powi(2)
    }
}

struct Triangle {
    apex: (f64, f64),
    base_y: f64,
    half_width: f64,
}

impl Triangle {
    fn contains(&self, u: f64, v: f64) -> bool {
        if v < self.apex.1 || v > self.base_y {
            return false;
        }
        let t = (v - self.apex.1) / (self.base_y - self.apex.1);
        (u - self.apex.0).abs() <= t * self.half_width
    }
}

fn jitter(rng: &mut StreamRng, center: f64, half: f64) -> f64 {
    center + rng.random_range(-half..=half)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Draws one face at `resolution × resolution`.
pub fn generate_face<T: Scalar>(seed: u64, resolution: usize) -> Result<FaceSample<T>> {
    if resolution < 32 || resolution % 4 != 0 {
        return Err(Error::invalid(format!("face resolution must be a multiple of 4 and at least 32, got {resolution}")));
    }
    let r = resolution;
    let mut geo = substream(seed, "facegen/geometry");
    let face = Ellipse {
        cx: jitter(&mut geo, 0.5, 0.02),
        cy: jitter(&mut geo, 0.52, 0.02),
        rx: jitter(&mut geo, 0.36, 0.03),
        ry: jitter(&mut geo, 0.45, 0.03),
    };
    let eye_y = jitter(&mut geo, 0.40, 0.02);
    let eye_rx = geo.random_range(0.07..=0.09);
    let eye_ry = geo.random_range(0.035..=0.05);
    let left_eye = Ellipse { cx: jitter(&mut geo, 0.325, 0.02), cy: eye_y, rx: eye_rx, ry: eye_ry };
    let right_eye = Ellipse { cx: jitter(&mut geo, 0.675, 0.02), cy: eye_y, rx: eye_rx, ry: eye_ry };
    let nose = Triangle {
        apex: (jitter(&mut geo, 0.5, 0.01), jitter(&mut geo, 0.50, 0.01)),
        base_y: geo.random_range(0.62..=0.65),
        half_width: geo.random_range(0.06..=0.09),
    };
    let mouth = Ellipse {
        cx: jitter(&mut geo, 0.5, 0.02),
        cy: jitter(&mut geo, 0.78, 0.015),
        rx: geo.random_range(0.12..=0.16),
        ry: geo.random_range(0.03..=0.05),
    };

    let mut pal = substream(seed, "facegen/color");
    let background: [f64; 3] = std::array::from_fn(|_| pal.random_range(0.1..=0.9));
    let skin_r = pal.random_range(0.55..=0.95);
    let skin_g = skin_r * pal.random_range(0.65..=0.85);
    let skin = [skin_r, skin_g, skin_g * pal.random_range(0.7..=0.9)];
    let eye: [f64; 3] = std::array::from_fn(|_| pal.random_range(0.05..=0.35));
    let nose_shade = pal.random_range(0.75..=0.9);
    let nose_color = skin.map(|c| c * nose_shade);
    let mouth_color = [pal.random_range(0.6..=0.9), pal.random_range(0.1..=0.3), pal.random_range(0.15..=0.35)];

    let mut tex = substream(seed, "facegen/texture");
    let mut dep = substream(seed, "facegen/depth");
    let depth_offset = dep.random_range(0.0..=0.5);
    let near = dep.random_range(0.5..=0.7) + depth_offset;
    let far = 4.0 + depth_offset;

    let plane = r * r;
    let mut image = vec![T::zero(); 3 * plane];
    let mut labels = vec![0u8; plane];
    let mut depth = vec![T::zero(); plane];
    let nose_center = (nose.apex.0, (nose.apex.1 + nose.base_y) / 2.0);
    for y in 0..r {
        let v = (y as f64 + 0.5) / r as f64;
        for x in 0..r {
            let u = (x as f64 + 0.5) / r as f64;
            let idx = y * r + x;
            let face_rho2 = face.rho2(u, v);
            let (label, color) = if left_eye.rho2(u, v) <= 1.0 {
                (Component::LeftEye, eye)
            } else if right_eye.rho2(u, v) <= 1.0 {
                (Component::RightEye, eye)
            } else if nose.contains(u, v) {
                (Component::Nose, nose_color)
            } else if mouth.rho2(u, v) <= 1.0 {
                (Component::Mouth, mouth_color)
            } else if face_rho2 <= 1.0 {
                (Component::Face, skin)
            } else {
                (Component::Face, background)
            };
            labels[idx] = label.label();
            for (ch, &c) in color.iter().enumerate() {
                let noise = tex.random_range(-0.04..=0.04);
                image[ch * plane + idx] = T::lit((c + noise).clamp(0.0, 1.0));
            }

            let rho = face_rho2.sqrt();
            let surface = near + 1.2 * rho.min(1.0).powi(2);
            let t = smoothstep(1.0, 1.15, rho);
            let bump = 0.15 * (-((u - nose_center.0).powi(2) + (v - nose_center.1).powi(2)) / (2.0 * 0.05f64.powi(2))).exp();
            depth[idx] = T::lit(((1.0 - t) * (surface - bump) + t * far).max(0.0));
        }
    }

    Ok(FaceSample {
        image: Tensor::new(&[3, r, r], image)?,
        parsing: ParsingMap::new(r, r, labels)?,
        depth: Tensor::new(&[1, r, r], depth)?,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxes_are_fixed() {
        let boxes = component_boxes();
        assert_eq!(boxes.len(), 5);
        assert_eq!((boxes[0].x0, boxes[0].y0, boxes[0].x1, boxes[0].y1), (0.0, 0.0, 1.0, 1.0));
        for b in &boxes {
            assert!(b.x0 < b.x1 && b.y0 < b.y1);
        }
    }

    #[test]
    fn left_eye_window_at_64() {
        let b = component_boxes()[1];
        assert_eq!(b.pixel_window(64, 64), (19, 12, 13, 17));
    }

    #[test]
    fn degenerate_window_is_one_pixel() {
        let b = ComponentBox { component: Component::Nose, x0: 0.5, y0: 0.5, x1: 0.5, y1: 0.5 };
        let (_, _, rows, cols) = b.pixel_window(4, 4);
        assert_eq!((rows, cols), (1, 1));
        let edge = ComponentBox { component: Component::Nose, x0: 1.0, y0: 1.0, x1: 1.0, y1: 1.0 };
        assert_eq!(edge.pixel_window(4, 4), (3, 3, 1, 1));
    }

    #[test]
    fn same_seed_same_face() {
        let a: FaceSample = generate_face(11, 32).unwrap();
        let b: FaceSample = generate_face(11, 32).unwrap();
        assert_eq!(a, b);
        let c: FaceSample = generate_face(12, 32).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn invalid_resolution() {
        assert!(generate_face::<f64>(0, 30).is_err());
        assert!(generate_face::<f64>(0, 34).is_err());
        assert!(generate_face::<f64>(0, 28).is_err());
    }

    #[test]
    fn all_labels_present_and_values_in_range() {
        for seed in 0..20 {
            let f: FaceSample = generate_face(seed, 64).unwrap();
            assert_eq!(f.parsing.present_labels(), vec![0, 1, 2, 3, 4]);
            assert!(f.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(f.depth.data().iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn parsing_mask_is_indicator() {
        let p = ParsingMap::new(2, 2, vec![0, 1, 1, 3]).unwrap();
        assert_eq!(p.mask::<f64>(1).data(), &[0.0, 1.0, 1.0, 0.0]);
        assert!(ParsingMap::new(1, 1, vec![5]).is_err());
    }
}
