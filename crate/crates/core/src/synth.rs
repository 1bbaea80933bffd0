//! Synthetic fixtures: vessel-like training images and the glare/blob suite
//! used by the ablation harness.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::specio::{rasterize, save_image_png16, AnnotationSet, BinaryMask, ImageEntry, ImageGray, PolygonAnn, SpecioError};
use crate::stenunet::{ArchConfig, Model, Sample};

/// One generated image with its polygon annotations (vertices as `(x, y)`).
#[derive(Clone, Debug)]
pub struct SynthCase {
    pub id: u64,
    pub image: ImageGray,
    pub polygons: Vec<Vec<(f64, f64)>>,
}

impl SynthCase {
    pub fn file_name(&self) -> String {
        format!("img-{:03}.png", self.id)
    }

    pub fn mask(&self) -> BinaryMask {
        let anns = self.annotations();
        rasterize(&anns, self.image.height(), self.image.width()).expect("valid dims")
    }

    fn annotations(&self) -> Vec<PolygonAnn> {
        self.polygons
            .iter()
            .enumerate()
            .map(|(k, v)| PolygonAnn {
                image_id: self.id,
                annotation_id: self.id * 1000 + k as u64,
                vertices: v.clone(),
            })
            .collect()
    }
}

/// A wavy horizontal band of half-thickness 2.5 to 4 px.
fn vessel_polygon(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let (hf, wf) = (h as f64, w as f64);
    let cy = hf * rng.random_range(0.35..0.65);
    let amp = hf * rng.random_range(0.08..0.18);
    let freq = rng.random_range(0.6..1.6);
    let phase = rng.random_range(0.0..2.0 * PI);
    let r = rng.random_range(2.5..4.0) * hf / 64.0;
    let n = 32;
    let centre: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let x = wf * i as f64 / n as f64;
            (x, cy + amp * (2.0 * PI * freq * x / wf + phase).sin())
        })
        .collect();
    let mut poly: Vec<(f64, f64)> = centre.iter().map(|&(x, y)| (x, y - r)).collect();
    poly.extend(centre.iter().rev().map(|&(x, y)| (x, y + r)));
    poly
}

fn blur3(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = [0.25, 0.5, 0.25];
    let at = |r: isize, c: isize| v[r.clamp(0, h as isize - 1) as usize * w + c.clamp(0, w as isize - 1) as usize];
    let mut out = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut s = 0.0;
            for (i, ki) in k.iter().enumerate() {
                for (j, kj) in k.iter().enumerate() {
                    s += ki * kj * at(r + i as isize - 1, c + j as isize - 1);
                }
            }
            out[r as usize * w + c as usize] = s;
        }
    }
    out
}

/// A bright vessel on a darker, gently shaded background with mild noise.
pub fn vessel_case(id: u64, h: usize, w: usize, seed: u64) -> SynthCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let poly = vessel_polygon(h, w, &mut rng);
    let mask = rasterize(
        &[PolygonAnn {
            image_id: id,
            annotation_id: 0,
            vertices: poly.clone(),
        }],
        h,
        w,
    )
    .expect("valid dims");
    let tilt = rng.random_range(-0.1..0.1);
    let noise = Normal::new(0.0, 0.02).expect("valid std");
    let base: Vec<f64> = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            0.25 + tilt * (r - c) + if mask.data()[i] == 1 { 0.45 } else { 0.0 }
        })
        .collect();
    let data: Vec<f64> = blur3(&base, h, w).into_iter().map(|v| v + noise.sample(&mut rng)).collect();
    SynthCase {
        id,
        image: ImageGray::from_clamped(h, w, data).expect("valid dims"),
        polygons: vec![poly],
    }
}

pub fn vessel_image(h: usize, w: usize, seed: u64) -> (ImageGray, BinaryMask) {
    let case = vessel_case(0, h, w, seed);
    let mask = case.mask();
    (case.image, mask)
}

/// `n` square vessel samples of side `size`.
pub fn vessel_dataset(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    (0..n as u64)
        .map(|id| {
            let case = vessel_case(id, size, size, seed);
            Sample {
                mask: case.mask(),
                image: case.image,
            }
        })
        .collect()
}

fn disc(cx: f64, cy: f64, r: f64) -> Vec<(f64, f64)> {
    (0..16)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / 16.0;
            (cx + r * t.cos(), cy + r * t.sin())
        })
        .collect()
}

/// Reflectance of background, true and decoy structures.
pub const SUITE_BACKGROUND: f64 = 0.3;
pub const SUITE_BLOB: f64 = 0.7;
/// Extra illumination at the glare centre, relative to the unlit level.
pub const GLARE_PEAK: f64 = 1.6;

/// Glare/blob fixture for the ablation harness.
///
/// Each image is `reflectance x illumination`. Reflectance is
/// [`SUITE_BACKGROUND`] except on a few annotated discs and on several
/// unannotated 2x2 decoys, both at [`SUITE_BLOB`]. Illumination is a
/// raised-cosine glare, one period across the image in each axis, so the raw
/// background under its peak is brighter than an unlit disc. Being periodic
/// and low-frequency, the glare is removed by a high-pass homomorphic filter
/// without wrap-around artifacts, leaving the decoys as the only false
/// positives, and those are far below the size floor.
pub fn ablation_suite(n: usize, size: usize, seed: u64) -> Vec<SynthCase> {
    (0..n as u64)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (id + 1).wrapping_mul(0xd1b5_4a32_d192_ed03));
            let s = size as f64;
            let mut occupied: Vec<(f64, f64, f64)> = Vec::new();
            let mut place = |rng: &mut ChaCha8Rng, r: f64| -> (f64, f64) {
                loop {
                    let c = (rng.random_range(r + 3.0..s - r - 3.0), rng.random_range(r + 3.0..s - r - 3.0));
                    if occupied.iter().all(|&(x, y, rr)| ((x - c.0).powi(2) + (y - c.1).powi(2)).sqrt() > r + rr + 6.0) {
                        occupied.push((c.0, c.1, r));
                        return c;
                    }
                }
            };
            let n_true = rng.random_range(2..=4);
            let polygons: Vec<Vec<(f64, f64)>> = (0..n_true)
                .map(|_| {
                    let r = s * rng.random_range(0.045..0.07);
                    let (cx, cy) = place(&mut rng, r);
                    disc(cx, cy, r)
                })
                .collect();
            let n_decoy = rng.random_range(3..=6);
            let decoys: Vec<(usize, usize)> = (0..n_decoy)
                .map(|_| {
                    let (cx, cy) = place(&mut rng, 1.5);
                    (cy as usize, cx as usize)
                })
                .collect();
            let gx = rng.random_range(0.0..1.0) * s;
            let gy = rng.random_range(0.0..1.0) * s;

            let anns: Vec<PolygonAnn> = polygons
                .iter()
                .map(|v| PolygonAnn {
                    image_id: id,
                    annotation_id: 0,
                    vertices: v.clone(),
                })
                .collect();
            let truth = rasterize(&anns, size, size).expect("valid dims");
            let mut refl: Vec<f64> = truth
                .data()
                .iter()
                .map(|&m| if m == 1 { SUITE_BLOB } else { SUITE_BACKGROUND })
                .collect();
            for (r, c) in decoys {
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    refl[(r + dr) * size + c + dc] = SUITE_BLOB;
                }
            }
            let data: Vec<f64> = refl
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let (y, x) = ((i / size) as f64, (i % size) as f64);
                    let bump = |t: f64, c: f64| 0.5 * (1.0 + (2.0 * PI * (t - c) / s).cos());
                    v * (1.0 + GLARE_PEAK * bump(x, gx) * bump(y, gy))
                })
                .collect();
            SynthCase {
                id,
                image: ImageGray::from_clamped(size, size, data).expect("valid dims"),
                polygons,
            }
        })
        .collect()
}

/// Writes `images/<file>.png` (16-bit) and `annotations.json` under `dir`,
/// returning both paths.
pub fn write_dataset(dir: &Path, cases: &[SynthCase]) -> Result<(PathBuf, PathBuf), SpecioError> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| SpecioError::io(&images, e))?;
    let mut set = AnnotationSet::default();
    for case in cases {
        save_image_png16(&case.image, images.join(case.file_name()))?;
        set.images.push(ImageEntry {
            id: case.id,
            file_name: case.file_name(),
            height: case.image.height(),
            width: case.image.width(),
        });
        set.annotations.extend(case.annotations());
    }
    let ann = dir.join("annotations.json");
    fs::write(&ann, set.to_coco_json()).map_err(|e| SpecioError::io(&ann, e))?;
    Ok((images, ann))
}

/// Architecture of [`threshold_model`].
pub fn threshold_arch() -> ArchConfig {
    ArchConfig {
        stages: 2,
        channels: vec![1, 1],
        convs_per_stage: 1,
        in_channels: 1,
        out_channels: 1,
        leaky_slope: 0.01,
        use_instance_norm: false,
    }
}

/// Hand-wired network computing `sigmoid(gain * (x - threshold))` per pixel
/// for inputs in `[0, 1]`.
///
/// Encoder stage 0 passes the input through a centred delta kernel, stage 1
/// and the upsampling weights are zero, and the decoder convolution selects
/// the skip channel of `[upsampled, skip]`.
pub fn threshold_model(threshold: f64, gain: f64) -> Model<f32> {
    let arch = threshold_arch();
    let mut m = Model::<f32>::build(&arch, 0).expect("fixed arch is valid");
    let mut delta = vec![0.0f32; 9];
    delta[4] = 1.0;
    let mut pick_skip = vec![0.0f32; 18];
    pick_skip[9 + 4] = 1.0;
    let values = vec![
        delta,               // enc 0 w
        vec![0.0],           // enc 0 b
        vec![0.0; 9],        // enc 1 w
        vec![0.0],           // enc 1 b
        vec![0.0; 4],        // up w
        pick_skip,           // dec w
        vec![0.0],           // dec b
        vec![gain as f32],   // head w
        vec![(-gain * threshold) as f32],
    ];
    m.set_params(values).expect("layout matches threshold_arch");
    m
}
