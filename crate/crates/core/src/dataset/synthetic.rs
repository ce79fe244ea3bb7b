//! Procedural drone/bird silhouettes.
//!
//! Each image is a pure function of `(seed, class, index)`: a PCG32 stream is
//! derived from those three values and every draw (placement, shape jitter,
//! polarity, noise) comes from it in a fixed order.
//!
//! Drones are a central body disc with four arms near 45 degrees ending in
//! rotor discs. Birds are a chevron of two curved, tapering wings meeting at a
//! small body. Both are placed at a random offset (up to 15% of the frame),
//! scale (35-70% of the frame), rotation and polarity, supersampled for
//! anti-aliasing, then covered by additive Gaussian noise.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetError, Label, LabeledImage};
use crate::imagecore::{encode_image, normalize, Image, PnmEncoding};
use crate::rng::{stream_rng, STREAM_SYNTH};

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub id: String,
    pub label: Label,
    pub index: usize,
    pub image: Image,
}

impl SyntheticSample {
    pub fn file_name(label: Label, index: usize) -> String {
        format!("{}_{index:05}.pgm", label.dir_name())
    }

    pub fn to_labeled_image(&self) -> LabeledImage {
        LabeledImage {
            id: self.id.clone(),
            label: self.label,
            tensor: normalize(&self.image).expect("synthetic images are grayscale"),
        }
    }
}

#[derive(Clone, Copy)]
struct Segment {
    a: (f64, f64),
    b: (f64, f64),
    /// half-widths at `a` and `b`
    ra: f64,
    rb: f64,
}

impl Segment {
    fn contains(&self, p: (f64, f64)) -> bool {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (qx, qy) = (self.a.0 + t * dx - p.0, self.a.1 + t * dy - p.1);
        let r = self.ra + (self.rb - self.ra) * t;
        qx * qx + qy * qy <= r * r
    }
}

#[derive(Clone, Copy)]
struct Disc {
    c: (f64, f64),
    r: f64,
}

impl Disc {
    fn contains(&self, p: (f64, f64)) -> bool {
        let (dx, dy) = (p.0 - self.c.0, p.1 - self.c.1);
        dx * dx + dy * dy <= self.r * self.r
    }
}

/// Shape in unit coordinates: the silhouette fits in a disc of radius 0.5.
struct Shape {
    discs: Vec<Disc>,
    segments: Vec<Segment>,
}

impl Shape {
    fn contains(&self, p: (f64, f64)) -> bool {
        self.discs.iter().any(|d| d.contains(p)) || self.segments.iter().any(|s| s.contains(p))
    }

    fn drone(rng: &mut impl Rng) -> Shape {
        let body = rng.random_range(0.10..0.15);
        let rotor = rng.random_range(0.14..0.18);
        let arm_half = rng.random_range(0.025..0.045);
        let reach = 0.5 - rotor;
        let mut discs = vec![Disc {
            c: (0.0, 0.0),
            r: body,
        }];
        let mut segments = Vec::with_capacity(4);
        for k in 0..4 {
            let jitter = rng.random_range(-10.0f64..10.0).to_radians();
            let ang = PI / 4.0 + k as f64 * PI / 2.0 + jitter;
            let tip = (reach * ang.cos(), reach * ang.sin());
            segments.push(Segment {
                a: (0.0, 0.0),
                b: tip,
                ra: arm_half,
                rb: arm_half,
            });
            discs.push(Disc { c: tip, r: rotor });
        }
        Shape { discs, segments }
    }

    fn bird(rng: &mut impl Rng) -> Shape {
        // Body at the origin; wings sweep up and out from it.
        let wing_angle = rng.random_range(20.0f64..60.0).to_radians();
        let bend = rng.random_range(0.05..0.15);
        let root_half = rng.random_range(0.03..0.045);
        let tip_half = rng.random_range(0.008..0.015);
        let body = rng.random_range(0.05..0.075);
        let len = 0.5;
        let mut segments = Vec::new();
        for side in [-1.0, 1.0] {
            let tip = (side * len * wing_angle.cos(), -len * wing_angle.sin());
            // quadratic Bezier with the control point pushed away from the chord
            let mid = (tip.0 / 2.0, tip.1 / 2.0);
            let normal = (-tip.1 / len * side, tip.0 / len * side);
            let ctrl = (mid.0 - normal.0 * bend, mid.1 - normal.1 * bend);
            let steps = 8;
            let point = |t: f64| {
                let u = 1.0 - t;
                (
                    2.0 * u * t * ctrl.0 + t * t * tip.0,
                    2.0 * u * t * ctrl.1 + t * t * tip.1,
                )
            };
            for s in 0..steps {
                let (t0, t1) = (s as f64 / steps as f64, (s + 1) as f64 / steps as f64);
                segments.push(Segment {
                    a: point(t0),
                    b: point(t1),
                    ra: root_half + (tip_half - root_half) * t0,
                    rb: root_half + (tip_half - root_half) * t1,
                });
            }
        }
        Shape {
            discs: vec![Disc {
                c: (0.0, 0.02),
                r: body,
            }],
            segments,
        }
    }
}

fn sample_stream(label: Label, index: usize) -> u64 {
    STREAM_SYNTH | ((label.index() as u64) << 32) | index as u64
}

/// Renders sample `index` of class `label`.
pub fn render_sample(label: Label, index: usize, size: usize, seed: u64) -> Image {
    let mut rng = stream_rng(seed, sample_stream(label, index));
    let s = size as f64;
    let cx = s / 2.0 + rng.random_range(-0.15..0.15) * s;
    let cy = s / 2.0 + rng.random_range(-0.15..0.15) * s;
    let span = rng.random_range(0.35..0.70) * s;
    let theta = rng.random_range(0.0..2.0 * PI);
    let background = rng.random_range(0.25..0.75);
    let contrast = rng.random_range(0.25..0.45);
    let foreground = if rng.random_bool(0.5) {
        background + contrast
    } else {
        background - contrast
    };
    let sigma = rng.random_range(0.02..0.08);
    let shape = match label {
        Label::Drone => Shape::drone(&mut rng),
        Label::Bird => Shape::bird(&mut rng),
    };
    let noise = Normal::new(0.0, sigma).expect("finite sigma");

    let (sin, cos) = theta.sin_cos();
    let sub = SUPERSAMPLE as f64;
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0usize;
            let near = {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                (dx * dx + dy * dy).sqrt() <= span * 0.5 + 1.5
            };
            if near {
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) / sub - cx;
                        let py = y as f64 + (sy as f64 + 0.5) / sub - cy;
                        let local = ((cos * px + sin * py) / span, (-sin * px + cos * py) / span);
                        if shape.contains(local) {
                            hits += 1;
                        }
                    }
                }
            }
            let coverage = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let v = background + coverage * (foreground - background) + noise.sample(&mut rng);
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Image::new(size, size, 1, pixels).expect("dimensions are consistent")
}

pub fn generate_synthetic(
    count_per_class: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>, DatasetError> {
    if count_per_class == 0 {
        return Err(DatasetError::Invalid("count_per_class must be >= 1".into()));
    }
    if size < 32 {
        return Err(DatasetError::Invalid(format!(
            "synthetic image size {size} < 32"
        )));
    }
    Ok(Label::ALL
        .iter()
        .flat_map(|&label| {
            (0..count_per_class).map(move |index| SyntheticSample {
                id: format!(
                    "{}/{}",
                    label.dir_name(),
                    SyntheticSample::file_name(label, index)
                ),
                label,
                index,
                image: render_sample(label, index, size, seed),
            })
        })
        .collect())
}

/// Writes `<dir>/drone/*.pgm`, `<dir>/bird/*.pgm` and `manifest.csv`.
pub fn write_corpus(
    samples: &[SyntheticSample],
    dir: &Path,
    seed: u64,
) -> Result<(), DatasetError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    for label in Label::ALL {
        let sub = dir.join(label.dir_name());
        fs::create_dir_all(&sub).map_err(io(&sub))?;
    }
    let manifest_path = dir.join("manifest.csv");
    let mut manifest = fs::File::create(&manifest_path).map_err(io(&manifest_path))?;
    writeln!(manifest, "id,class,seed,index").map_err(io(&manifest_path))?;
    for s in samples {
        let path = dir.join(&s.id);
        fs::write(&path, encode_image(&s.image, PnmEncoding::Binary)).map_err(io(&path))?;
        writeln!(manifest, "{},{},{seed},{}", s.id, s.label, s.index)
            .map_err(io(&manifest_path))?;
    }
    Ok(())
}
