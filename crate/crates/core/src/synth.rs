//! Synthetic "bright-corner" corpus: grayscale images carrying up to four
//! co-occurring bright shapes, one per quadrant and pushed toward the image
//! corners, with one class much rarer than the rest. Each present class is
//! dealt a random quadrant, so a detector must recognise the shape rather
//! than its position; the quadrant is kept with the sample for localisation
//! checks. Empty quadrants may optionally hold a distractor shape that is
//! no class.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::Tensor;
use crate::data::{
    image_to_tensor, write_label_csv, DataError, Dataset, LabelRow, LabelTable, Vocabulary,
};

pub const SYNTH_LABELS: [&str; 4] = ["Cross", "Disk", "Bar", "Ring"];

/// Quadrant index 0..4 as `(row_half, col_half)`: 0 = top/left, 1 = bottom/right.
pub fn quadrant_halves(quadrant: usize) -> (usize, usize) {
    (quadrant / 2, quadrant % 2)
}

/// Quadrant index containing pixel `(row, col)` of a `size × size` image.
pub fn quadrant_at(row: usize, col: usize, size: usize) -> usize {
    2 * usize::from(row >= size / 2) + usize::from(col >= size / 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_images: usize,
    pub size: u32,
    /// Prevalence of every class except `minority_class`.
    pub majority_rate: f64,
    pub minority_class: usize,
    pub minority_rate: f64,
    /// Chance that an empty quadrant receives a distractor shape.
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 2000,
            size: 64,
            majority_rate: 0.5,
            minority_class: 3,
            minority_rate: 0.1,
            distractor_rate: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: GrayImage,
    /// Class indices present, ascending; never empty.
    pub labels: Vec<usize>,
    /// `quadrants[i]` holds the shape of `labels[i]`.
    pub quadrants: Vec<usize>,
}

impl SynthSample {
    pub fn one_hot(&self) -> Vec<u8> {
        let mut v = vec![0u8; SYNTH_LABELS.len()];
        for &l in &self.labels {
            v[l] = 1;
        }
        v
    }

    /// Quadrant of `class`, if present.
    pub fn quadrant_of(&self, class: usize) -> Option<usize> {
        self.labels.iter().position(|&l| l == class).map(|i| self.quadrants[i])
    }
}

pub fn vocabulary() -> Vocabulary {
    Vocabulary::new(SYNTH_LABELS.iter().map(|s| s.to_string()).collect()).expect("distinct labels")
}

fn draw_labels(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let labels: Vec<usize> = (0..SYNTH_LABELS.len())
            .filter(|&c| {
                let p = if c == config.minority_class { config.minority_rate } else { config.majority_rate };
                rng.random::<f64>() < p
            })
            .collect();
        if !labels.is_empty() {
            return labels;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Cross,
    Disk,
    Bar,
    Ring,
    Diamond,
    Plus,
    Frame,
}

const CLASS_SHAPES: [Shape; 4] = [Shape::Cross, Shape::Disk, Shape::Bar, Shape::Ring];
const DISTRACTORS: [Shape; 3] = [Shape::Diamond, Shape::Plus, Shape::Frame];

/// Does pixel (dy, dx), relative to the shape centre, belong to `shape` of
/// radius `r`?
fn inside(shape: Shape, dy: f64, dx: f64, r: f64) -> bool {
    let d = (dy * dy + dx * dx).sqrt();
    match shape {
        Shape::Cross => d <= r && ((dy - dx).abs() <= r * 0.4 || (dy + dx).abs() <= r * 0.4),
        Shape::Disk => d <= r,
        Shape::Bar => dy.abs() <= r * 0.35 && dx.abs() <= r,
        Shape::Ring => d <= r && d >= r * 0.55,
        Shape::Diamond => dy.abs() + dx.abs() <= r,
        Shape::Plus => (dy.abs() <= r * 0.3 || dx.abs() <= r * 0.3) && dy.abs() <= r && dx.abs() <= r,
        Shape::Frame => {
            let m = dy.abs().max(dx.abs());
            m <= r * 0.85 && m >= r * 0.45
        }
    }
}

/// Paint `objects` (shape, quadrant) on a noisy dark background.
fn render(objects: &[(Shape, usize)], size: u32, rng: &mut ChaCha8Rng) -> GrayImage {
    let s = size as usize;
    let half = s / 2;
    let background = rng.random_range(40.0..80.0);
    let noise = Normal::new(0.0, 10.0).expect("finite");
    let mut px: Vec<f64> = (0..s * s).map(|_| background + noise.sample(rng)).collect();
    for &(shape, quadrant) in objects {
        let (qr, qc) = quadrant_halves(quadrant);
        let r = rng.random_range(0.18..0.3) * half as f64;
        // centred in the outer half of the quadrant, toward the image corner
        let margin = r + 1.0;
        let mut offset = |q: usize| {
            let d = rng.random_range(margin..(half as f64 / 2.0).max(margin + 1.0));
            if q == 0 { d } else { s as f64 - 1.0 - d }
        };
        let (cy, cx) = (offset(qr), offset(qc));
        let brightness = rng.random_range(170.0..240.0);
        for y in qr * half..(qr + 1) * half {
            for x in qc * half..(qc + 1) * half {
                if inside(shape, y as f64 - cy, x as f64 - cx, r) {
                    px[y * s + x] = brightness + noise.sample(rng) * 0.5;
                }
            }
        }
    }
    GrayImage::from_fn(size, size, |x, y| Luma([px[y as usize * s + x as usize].round().clamp(0.0, 255.0) as u8]))
}

/// Sample `index` of the corpus; independent of every other index.
pub fn sample(config: &SynthConfig, index: usize) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (index as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
    let labels = draw_labels(config, &mut rng);
    let mut order = [0, 1, 2, 3];
    order.shuffle(&mut rng);
    let quadrants = order[..labels.len()].to_vec();
    let mut objects: Vec<(Shape, usize)> = labels.iter().zip(&quadrants).map(|(&c, &q)| (CLASS_SHAPES[c], q)).collect();
    for &q in &order[labels.len()..] {
        if rng.random::<f64>() < config.distractor_rate {
            objects.push((DISTRACTORS[rng.random_range(0..DISTRACTORS.len())], q));
        }
    }
    let image = render(&objects, config.size, &mut rng);
    SynthSample { image, labels, quadrants }
}

pub fn generate(config: &SynthConfig) -> Vec<SynthSample> {
    (0..config.n_images).map(|i| sample(config, i)).collect()
}

/// In-memory dataset at `size` (images go through the same scaling and
/// resize as files on disk).
pub fn to_dataset(samples: &[SynthSample], size: usize) -> Dataset {
    let images: Vec<Tensor> = samples
        .iter()
        .map(|s| image_to_tensor(&image::DynamicImage::ImageLuma8(s.image.clone()), size))
        .collect();
    Dataset {
        vocab: vocabulary(),
        images,
        targets: samples.iter().map(SynthSample::one_hot).collect(),
        paths: (0..samples.len()).map(file_name).collect(),
    }
}

pub fn file_name(index: usize) -> String {
    format!("synth_{index:05}.png")
}

#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub images_dir: PathBuf,
    pub metadata_csv: PathBuf,
    pub labels_csv: PathBuf,
    pub count: usize,
}

/// Write `images/*.png`, a `metadata.csv` in the source metadata layout and
/// a `labels.csv` label table under `dir`.
pub fn write_corpus(config: &SynthConfig, dir: &Path) -> Result<SynthFiles, DataError> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)?;
    let mut meta = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(dir.join("metadata.csv"))?;
    meta.write_record(["Image Index", "Finding Labels", "Patient ID", "Patient Age", "Patient Gender", "View Position"])?;
    let vocab = vocabulary();
    let mut rows = Vec::with_capacity(config.n_images);
    for i in 0..config.n_images {
        let s = sample(config, i);
        let name = file_name(i);
        s.image
            .save(images_dir.join(&name))
            .map_err(|e| DataError::Image { path: name.clone(), msg: e.to_string() })?;
        let findings: Vec<String> = s.labels.iter().map(|&l| SYNTH_LABELS[l].to_string()).collect();
        meta.write_record([name.as_str(), &findings.join("|"), &i.to_string(), "0", "O", "PA"])?;
        rows.push(LabelRow { path: format!("images/{name}"), findings, one_hot: s.one_hot() });
    }
    meta.flush()?;
    let table = LabelTable { vocab, rows };
    let labels_csv = dir.join("labels.csv");
    write_label_csv(&table, std::fs::File::create(&labels_csv)?)?;
    Ok(SynthFiles { images_dir, metadata_csv: dir.join("metadata.csv"), labels_csv, count: config.n_images })
}
