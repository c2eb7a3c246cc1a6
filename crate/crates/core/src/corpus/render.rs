//! Geometric prototypes rendered as orthographic projections.
//!
//! Each class owns a point-cloud family plus a fixed aspect ratio and tilt.
//! A record instantiates its class prototype with a size and a part count,
//! then each view drops one axis and splats the points as Gaussian blobs.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ViewKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ShapeFamily {
    Wheel,
    Grille,
    Container,
    Tower,
    Star,
    Lattice,
    Tool,
    Dome,
    Frame,
    Helix,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 10] = [
        ShapeFamily::Wheel,
        ShapeFamily::Grille,
        ShapeFamily::Container,
        ShapeFamily::Tower,
        ShapeFamily::Star,
        ShapeFamily::Lattice,
        ShapeFamily::Tool,
        ShapeFamily::Dome,
        ShapeFamily::Frame,
        ShapeFamily::Helix,
    ];

    /// (shape phrase, part noun) used in captions.
    pub fn phrases(self) -> (&'static str, &'static str) {
        match self {
            ShapeFamily::Wheel => ("wheel-like disc", "spokes"),
            ShapeFamily::Grille => ("grille-like panel", "bars"),
            ShapeFamily::Container => ("container-like box", "bands"),
            ShapeFamily::Tower => ("tower-like stack", "tiers"),
            ShapeFamily::Star => ("star-like hub", "arms"),
            ShapeFamily::Lattice => ("lattice-like grid", "rows"),
            ShapeFamily::Tool => ("tool-like shaft", "crossbars"),
            ShapeFamily::Dome => ("dome-like shell", "ribs"),
            ShapeFamily::Frame => ("frame-like cross", "segments"),
            ShapeFamily::Helix => ("coil-like spiral", "turns"),
        }
    }
}

/// Class-level geometry shared by every record of the class.
#[derive(Clone, Debug)]
pub(crate) struct ClassStyle {
    pub family: ShapeFamily,
    pub aspect: [f64; 3],
    pub tilt: f64,
}

impl ClassStyle {
    pub fn for_class<R: Rng>(class_id: usize, rng: &mut R) -> Self {
        let family = ShapeFamily::ALL[class_id % ShapeFamily::ALL.len()];
        let aspect = [
            rng.random_range(0.55..1.0),
            rng.random_range(0.55..1.0),
            rng.random_range(0.55..1.0),
        ];
        let tilt = rng.random_range(-0.6..0.6);
        Self {
            family,
            aspect,
            tilt,
        }
    }
}

/// Per-record instantiation parameters.
#[derive(Clone, Debug)]
pub(crate) struct Instance {
    pub size: f64,
    pub count: usize,
    pub yaw: f64,
    pub offset: [f64; 3],
}

fn line(a: [f64; 3], b: [f64; 3], n: usize, out: &mut Vec<[f64; 3]>) {
    for i in 0..n {
        let t = i as f64 / (n - 1).max(1) as f64;
        out.push([
            a[0] + t * (b[0] - a[0]),
            a[1] + t * (b[1] - a[1]),
            a[2] + t * (b[2] - a[2]),
        ]);
    }
}

fn ring_xy(r: f64, z: f64, n: usize, out: &mut Vec<[f64; 3]>) {
    for i in 0..n {
        let a = TAU * i as f64 / n as f64;
        out.push([r * a.cos(), r * a.sin(), z]);
    }
}

fn ring_xz(r: f64, y: f64, n: usize, out: &mut Vec<[f64; 3]>) {
    for i in 0..n {
        let a = TAU * i as f64 / n as f64;
        out.push([r * a.cos(), y, r * a.sin()]);
    }
}

/// Points of the canonical prototype in roughly `[-1, 1]^3`.
fn prototype(family: ShapeFamily, count: usize) -> Vec<[f64; 3]> {
    let mut p = Vec::new();
    let k = count as f64;
    match family {
        ShapeFamily::Wheel => {
            ring_xy(0.85, 0.0, 20, &mut p);
            for i in 0..count {
                let a = TAU * i as f64 / k;
                line([0.0, 0.0, 0.0], [0.8 * a.cos(), 0.8 * a.sin(), 0.0], 5, &mut p);
            }
            line([0.0, 0.0, -0.4], [0.0, 0.0, 0.4], 4, &mut p);
        }
        ShapeFamily::Grille => {
            for i in 0..count {
                let x = -0.8 + 1.6 * i as f64 / (k - 1.0);
                line([x, -0.8, 0.0], [x, 0.8, 0.0], 7, &mut p);
            }
            line([-0.9, -0.9, 0.0], [0.9, -0.9, 0.0], 7, &mut p);
            line([-0.9, 0.9, 0.0], [0.9, 0.9, 0.0], 7, &mut p);
        }
        ShapeFamily::Container => {
            let c = [
                [-0.7, -0.8, -0.5],
                [0.7, -0.8, -0.5],
                [0.7, -0.8, 0.5],
                [-0.7, -0.8, 0.5],
            ];
            for i in 0..4 {
                let (a, b) = (c[i], c[(i + 1) % 4]);
                line(a, b, 5, &mut p);
                line([a[0], 0.8, a[2]], [b[0], 0.8, b[2]], 5, &mut p);
                line(a, [a[0], 0.8, a[2]], 6, &mut p);
            }
            for i in 0..count {
                let y = -0.6 + 1.2 * (i as f64 + 0.5) / k;
                line([-0.7, y, 0.5], [0.7, y, 0.5], 5, &mut p);
            }
        }
        ShapeFamily::Tower => {
            for i in 0..count {
                let y = -0.8 + 1.6 * i as f64 / (k - 1.0);
                let r = 0.75 - 0.4 * i as f64 / k;
                ring_xz(r, y, 10, &mut p);
            }
            line([0.0, -0.9, 0.0], [0.0, 0.9, 0.0], 6, &mut p);
        }
        ShapeFamily::Star => {
            for i in 0..count {
                let a = TAU * i as f64 / k + 0.3;
                line([0.0, 0.0, 0.0], [0.9 * a.cos(), 0.9 * a.sin(), 0.3], 7, &mut p);
            }
            ring_xy(0.2, 0.0, 6, &mut p);
        }
        ShapeFamily::Lattice => {
            for i in 0..count {
                for j in 0..count {
                    let x = -0.75 + 1.5 * i as f64 / (k - 1.0);
                    let y = -0.75 + 1.5 * j as f64 / (k - 1.0);
                    p.push([x, y, 0.2 * ((i + j) % 2) as f64]);
                }
            }
        }
        ShapeFamily::Tool => {
            line([0.0, -0.95, 0.0], [0.0, 0.95, 0.0], 12, &mut p);
            for i in 0..count {
                let y = 0.2 + 0.7 * i as f64 / k;
                let w = 0.25 + 0.1 * i as f64;
                line([-w, y, 0.0], [w, y, 0.0], 5, &mut p);
            }
        }
        ShapeFamily::Dome => {
            for i in 0..count {
                let a = TAU * i as f64 / k;
                for j in 0..6 {
                    let phi = (j as f64 / 5.0) * std::f64::consts::FRAC_PI_2;
                    let r = 0.85 * phi.cos();
                    p.push([r * a.cos(), -0.5 + 0.85 * phi.sin(), r * a.sin()]);
                }
            }
            ring_xz(0.85, -0.5, 16, &mut p);
        }
        ShapeFamily::Frame => {
            line([-0.9, 0.0, 0.0], [0.9, 0.0, 0.0], 9, &mut p);
            line([0.0, -0.9, 0.0], [0.0, 0.9, 0.0], 9, &mut p);
            line([0.0, 0.0, -0.9], [0.0, 0.0, 0.9], 9, &mut p);
            for i in 0..count {
                let t = -0.7 + 1.4 * i as f64 / (k - 1.0);
                line([t, -0.3, 0.0], [t, 0.3, 0.0], 3, &mut p);
            }
        }
        ShapeFamily::Helix => {
            let n = 8 * count;
            for i in 0..n {
                let t = i as f64 / n as f64;
                let a = TAU * k * t;
                p.push([0.6 * a.cos(), -0.9 + 1.8 * t, 0.6 * a.sin()]);
            }
        }
    }
    p
}

/// Instantiated prototype after class styling and record jitter.
pub(crate) fn instantiate(style: &ClassStyle, inst: &Instance) -> Vec<[f64; 3]> {
    let (st, ct) = style.tilt.sin_cos();
    let (sy, cy) = inst.yaw.sin_cos();
    prototype(style.family, inst.count)
        .into_iter()
        .map(|[x, y, z]| {
            let (x, y, z) = (
                x * style.aspect[0] * inst.size,
                y * style.aspect[1] * inst.size,
                z * style.aspect[2] * inst.size,
            );
            // In-plane tilt about z, then yaw about y.
            let (x, y) = (ct * x - st * y, st * x + ct * y);
            let (x, z) = (cy * x + sy * z, -sy * x + cy * z);
            [x + inst.offset[0], y + inst.offset[1], z + inst.offset[2]]
        })
        .collect()
}

const BLOB_SIGMA: f64 = 0.13;

/// Orthographic projection onto a `side × side` grid with additive noise.
/// Pixel values are clamped to `[0, 1]` and rounded to three decimals so the
/// text serialization is exact and compact.
pub(crate) fn render_view<R: Rng>(
    points: &[[f64; 3]],
    view: ViewKind,
    side: usize,
    noise_std: f64,
    rng: &mut R,
) -> Vec<f64> {
    let projected: Vec<(f64, f64)> = points
        .iter()
        .map(|&[x, y, z]| match view {
            ViewKind::Front => (x, y),
            ViewKind::Side => (z, y),
            ViewKind::Top => (x, z),
        })
        .collect();
    let inv = 1.0 / (2.0 * BLOB_SIGMA * BLOB_SIGMA);
    let cutoff = 9.0 * BLOB_SIGMA * BLOB_SIGMA;
    let noise = Normal::new(0.0, noise_std).expect("noise std is nonnegative");
    let mut px = Vec::with_capacity(side * side);
    for row in 0..side {
        let v = 1.0 - 2.0 * (row as f64 + 0.5) / side as f64;
        for col in 0..side {
            let u = 2.0 * (col as f64 + 0.5) / side as f64 - 1.0;
            let mut best = 0.0f64;
            for &(a, b) in &projected {
                let d2 = (u - a).powi(2) + (v - b).powi(2);
                if d2 < cutoff {
                    best = best.max((-d2 * inv).exp());
                }
            }
            let value = (best + noise.sample(rng)).clamp(0.0, 1.0);
            px.push((value * 1000.0).round() / 1000.0);
        }
    }
    px
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_family_renders_in_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (c, fam) in ShapeFamily::ALL.iter().enumerate() {
            let style = ClassStyle::for_class(c, &mut rng);
            assert_eq!(style.family, *fam);
            for count in 3..=6 {
                let inst = Instance {
                    size: 1.0,
                    count,
                    yaw: 0.1,
                    offset: [0.0; 3],
                };
                let pts = instantiate(&style, &inst);
                assert!(!pts.is_empty());
                for view in ViewKind::ALL {
                    let px = render_view(&pts, view, 16, 0.0, &mut rng);
                    assert_eq!(px.len(), 256);
                    assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));
                    assert!(px.iter().any(|&v| v > 0.5), "{fam:?} {view:?} is blank");
                }
            }
        }
    }

    #[test]
    fn views_differ_for_asymmetric_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let style = ClassStyle {
            family: ShapeFamily::Grille,
            aspect: [1.0; 3],
            tilt: 0.0,
        };
        let inst = Instance {
            size: 1.0,
            count: 5,
            yaw: 0.0,
            offset: [0.0; 3],
        };
        let pts = instantiate(&style, &inst);
        let front = render_view(&pts, ViewKind::Front, 16, 0.0, &mut rng);
        let top = render_view(&pts, ViewKind::Top, 16, 0.0, &mut rng);
        assert_ne!(front, top);
    }
}
