//! Datasets: seeded synthetic "bright patch" tasks whose labels depend only
//! on where the bright patch sits, and loaders for small idx/csv sets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::grid::PatchGrid;
use crate::relpos::circle_classes;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `[H, W, C]`, values in `[0, 1]`.
    pub pixels: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<LabeledImage>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.examples.iter().map(|e| e.label)
    }

    /// Stacks the selected examples into a `[B, H, W, C]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let first = indices.first().ok_or(Error::EmptyDataset)?;
        let shape = self.examples[*first].pixels.shape().to_vec();
        let mut data = Vec::with_capacity(indices.len() * self.examples[*first].pixels.numel());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let ex = &self.examples[i];
            if ex.pixels.shape() != shape {
                return Err(Error::shape(format!(
                    "example {i} is {:?}, expected {shape:?}",
                    ex.pixels.shape()
                )));
            }
            data.extend_from_slice(ex.pixels.data());
            labels.push(ex.label);
        }
        Ok((Tensor::new([vec![indices.len()], shape].concat(), data)?, labels))
    }

    /// Seeded shuffle, then the first `eval_fraction` of examples become the
    /// evaluation split.
    pub fn split(self, eval_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::InvalidConfig(format!(
                "eval fraction {eval_fraction} not in [0, 1)"
            )));
        }
        let mut examples = self.examples;
        examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_eval = (examples.len() as f64 * eval_fraction).round() as usize;
        let train = examples.split_off(n_eval);
        Ok((
            Dataset {
                examples: train,
                classes: self.classes,
            },
            Dataset {
                examples,
                classes: self.classes,
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Label is the quadrant holding the bright patch (TL=0, TR=1, BL=2, BR=3).
    Quadrant,
    /// Label is the concentric ring holding the bright patch.
    Radial,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Quadrant => "quadrant",
            Task::Radial => "radial",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadrant" => Ok(Task::Quadrant),
            "radial" => Ok(Task::Radial),
            other => Err(Error::InvalidConfig(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub task: Task,
    pub image_side: usize,
    pub patch_size: usize,
    pub noise_sigma: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            task: Task::Quadrant,
            image_side: 8,
            patch_size: 2,
            noise_sigma: 0.1,
            count: 256,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn grid(&self) -> Result<PatchGrid> {
        if self.patch_size == 0 || !self.image_side.is_multiple_of(self.patch_size) {
            return Err(Error::InvalidGeometry(format!(
                "image side {} is not a multiple of patch size {}",
                self.image_side, self.patch_size
            )));
        }
        PatchGrid::from_side(self.image_side / self.patch_size).map_err(|e| Error::InvalidGeometry(e.to_string()))
    }

    pub fn classes(&self) -> Result<usize> {
        Ok(match self.task {
            Task::Quadrant => 4,
            Task::Radial => circle_classes(&self.grid()?).class_count,
        })
    }
}

/// Quadrant of a grid position: top/bottom half picks the row, left/right
/// half the column.
pub fn quadrant_of(grid: &PatchGrid, index: usize) -> usize {
    let half = grid.side() / 2;
    let (row, col) = (index / grid.side(), index % grid.side());
    2 * usize::from(row >= half) + usize::from(col >= half)
}

/// Renders one image with a bright patch at grid `index`. Noise comes from
/// its own stream so placement never depends on `noise_sigma`.
fn render(spec: &SyntheticSpec, grid: &PatchGrid, index: usize, noise: &mut ChaCha8Rng) -> Tensor {
    let side = spec.image_side;
    let mut img = Tensor::zeros(&[side, side, 1]);
    let (pr, pc) = (index / grid.side(), index % grid.side());
    for r in 0..spec.patch_size {
        let row = pr * spec.patch_size + r;
        let start = row * side + pc * spec.patch_size;
        img.data_mut()[start..start + spec.patch_size].fill(1.0);
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("finite noise sigma");
        for v in img.data_mut() {
            *v = (*v + normal.sample(noise)).clamp(0.0, 1.0);
        }
    }
    img
}

/// Class-balanced generation: example `k` gets label `k % classes`, and its
/// bright patch is drawn uniformly from the positions carrying that label.
fn generate_balanced(
    spec: &SyntheticSpec,
    grid: &PatchGrid,
    label_of: impl Fn(usize) -> usize,
    classes: usize,
) -> Dataset {
    let members: Vec<Vec<usize>> = (0..classes)
        .map(|c| (0..grid.n()).filter(|&i| label_of(i) == c).collect())
        .collect();
    let mut placement = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise = ChaCha8Rng::seed_from_u64(spec.seed);
    noise.set_stream(1);
    let examples = (0..spec.count)
        .map(|k| {
            let label = k % classes;
            let index = members[label][placement.random_range(0..members[label].len())];
            LabeledImage {
                pixels: render(spec, grid, index, &mut noise),
                label,
            }
        })
        .collect();
    Dataset { examples, classes }
}

pub fn gen_quadrant(spec: &SyntheticSpec) -> Result<Dataset> {
    let grid = spec.grid()?;
    if grid.side() % 2 != 0 {
        return Err(Error::InvalidGeometry(format!(
            "quadrants need an even number of patches per side, got {}",
            grid.side()
        )));
    }
    Ok(generate_balanced(spec, &grid, |i| quadrant_of(&grid, i), 4))
}

pub fn gen_radial(spec: &SyntheticSpec) -> Result<Dataset> {
    let grid = spec.grid()?;
    let rings = circle_classes(&grid);
    Ok(generate_balanced(spec, &grid, |i| rings.ranks[i], rings.class_count))
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    match spec.task {
        Task::Quadrant => gen_quadrant(spec),
        Task::Radial => gen_radial(spec),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImageFormat {
    Idx,
    Csv,
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idx" => Ok(ImageFormat::Idx),
            "csv" => Ok(ImageFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown data format `{other}`"))),
        }
    }
}

/// Header and payload of an unsigned-byte idx file.
fn parse_idx(bytes: &[u8]) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::parse(bytes.len(), "truncated idx magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::parse(0, "idx magic must start with two zero bytes"));
    }
    if bytes[2] != 0x08 {
        return Err(Error::parse(
            2,
            format!("unsupported idx element type 0x{:02x}", bytes[2]),
        ));
    }
    let ndim = bytes[3] as usize;
    let header_len = 4 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(Error::parse(bytes.len(), "truncated idx dimensions"));
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let payload_len: usize = dims.iter().product();
    let available = bytes.len() - header_len;
    if available < payload_len {
        return Err(Error::parse(
            bytes.len(),
            format!("idx payload holds {available} bytes, header promises {payload_len}"),
        ));
    }
    Ok((dims, &bytes[header_len..header_len + payload_len]))
}

fn labels_in_range(labels: &[usize], classes: Option<usize>) -> Result<usize> {
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(classes)
}

/// Decodes an idx image file (`[count, rows, cols]` or
/// `[count, rows, cols, channels]`) and its idx label file. `classes`
/// defaults to one more than the largest label.
pub fn decode_idx(images: &[u8], labels: &[u8], classes: Option<usize>) -> Result<Dataset> {
    let (dims, pixels) = parse_idx(images)?;
    let shape = match dims[..] {
        [_, rows, cols] => vec![rows, cols, 1],
        [_, rows, cols, ch] => vec![rows, cols, ch],
        _ => {
            return Err(Error::parse(
                3,
                format!("image idx must have 3 or 4 dimensions, got {}", dims.len()),
            ))
        }
    };
    let (label_dims, label_bytes) = parse_idx(labels)?;
    if label_dims.len() != 1 || label_dims[0] != dims[0] {
        return Err(Error::parse(
            3,
            format!("label idx dims {label_dims:?} do not match {} images", dims[0]),
        ));
    }
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let classes = labels_in_range(&labels, classes)?;
    let per_image: usize = shape.iter().product();
    let examples = pixels
        .chunks(per_image.max(1))
        .zip(labels)
        .map(|(px, label)| {
            let data = px.iter().map(|&b| f64::from(b) / 255.0).collect();
            Ok(LabeledImage {
                pixels: Tensor::new(shape.clone(), data)?,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { examples, classes })
}

/// Decodes csv rows `label,p0,p1,...` with `side * side * channels` pixel
/// bytes per row.
pub fn decode_csv(text: &str, side: usize, channels: usize, classes: Option<usize>) -> Result<Dataset> {
    let per_image = side * side * channels;
    let mut labels = Vec::new();
    let mut images = Vec::new();
    for (offset, line) in crate::relpos::text::line_offsets(text) {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let parse_byte =
            |s: &str| -> Result<u8> { s.parse::<u8>().map_err(|e| Error::parse(offset, format!("`{s}`: {e}"))) };
        let label = fields
            .next()
            .ok_or_else(|| Error::parse(offset, "missing label"))?
            .parse::<usize>()
            .map_err(|e| Error::parse(offset, format!("label: {e}")))?;
        let pixels = fields
            .map(|s| parse_byte(s).map(|b| f64::from(b) / 255.0))
            .collect::<Result<Vec<_>>>()?;
        if pixels.len() != per_image {
            return Err(Error::parse(
                offset,
                format!("{} pixels, expected {per_image}", pixels.len()),
            ));
        }
        labels.push(label);
        images.push(Tensor::new(vec![side, side, channels], pixels)?);
    }
    let classes = labels_in_range(&labels, classes)?;
    let examples = images
        .into_iter()
        .zip(labels)
        .map(|(pixels, label)| LabeledImage { pixels, label })
        .collect();
    Ok(Dataset { examples, classes })
}

pub fn load_idx(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset> {
    decode_idx(&std::fs::read(images)?, &std::fs::read(labels)?, classes)
}

pub fn load_csv(path: &Path, side: usize, channels: usize, classes: Option<usize>) -> Result<Dataset> {
    decode_csv(&std::fs::read_to_string(path)?, side, channels, classes)
}

/// Encodes images as an idx file of unsigned bytes (pixels scaled by 255).
pub fn encode_idx_images(dataset: &Dataset) -> Vec<u8> {
    let shape = dataset
        .examples
        .first()
        .map(|e| e.pixels.shape().to_vec())
        .unwrap_or_default();
    let mut dims = vec![dataset.len()];
    dims.extend(&shape);
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for d in dims {
        out.extend((d as u32).to_be_bytes());
    }
    for ex in &dataset.examples {
        out.extend(
            ex.pixels
                .data()
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    out
}

pub fn encode_idx_labels(dataset: &Dataset) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, 1];
    out.extend((dataset.len() as u32).to_be_bytes());
    out.extend(dataset.labels().map(|l| l as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(task: Task, noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            task,
            noise_sigma: noise,
            count: 64,
            seed: 3,
            ..SyntheticSpec::default()
        }
    }

    fn bright_patch(ex: &LabeledImage, spec: &SyntheticSpec) -> usize {
        let patches = crate::vit::patchify(&ex.pixels, spec.patch_size).unwrap();
        let sums: Vec<f64> = patches.rows().map(|r| r.iter().sum()).collect();
        crate::vit::argmax(&sums)
    }

    #[test]
    fn quadrant_labels_follow_placement() {
        let s = spec(Task::Quadrant, 0.0);
        let grid = PatchGrid::from_patch_count(16).unwrap();
        assert_eq!(quadrant_of(&grid, 0), 0);
        assert_eq!(quadrant_of(&grid, 3), 1);
        assert_eq!(quadrant_of(&grid, 12), 2);
        assert_eq!(quadrant_of(&grid, 10), 3);
        let ds = gen_quadrant(&s).unwrap();
        for ex in &ds.examples {
            assert_eq!(quadrant_of(&grid, bright_patch(ex, &s)), ex.label);
        }
    }

    #[test]
    fn quadrant_is_balanced_and_deterministic() {
        let s = spec(Task::Quadrant, 0.0);
        let ds = gen_quadrant(&s).unwrap();
        assert_eq!(ds, gen_quadrant(&s).unwrap());
        for c in 0..4 {
            assert_eq!(ds.labels().filter(|&l| l == c).count(), 16);
        }
    }

    #[test]
    fn noise_changes_pixels_not_labels() {
        let clean = gen_quadrant(&spec(Task::Quadrant, 0.0)).unwrap();
        let noisy = gen_quadrant(&spec(Task::Quadrant, 0.3)).unwrap();
        assert!(clean.labels().eq(noisy.labels()));
        assert_ne!(clean, noisy);
        for ex in &noisy.examples {
            assert!(ex.pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn quadrant_rejects_odd_grids() {
        let s = SyntheticSpec {
            image_side: 6,
            ..spec(Task::Quadrant, 0.0)
        };
        assert!(matches!(gen_quadrant(&s), Err(Error::InvalidGeometry(_))));
        let tiny = SyntheticSpec {
            image_side: 4,
            ..spec(Task::Radial, 0.0)
        };
        assert!(matches!(gen_radial(&tiny), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn radial_labels_are_rings() {
        let s = spec(Task::Radial, 0.0);
        let ds = gen_radial(&s).unwrap();
        assert_eq!(ds.classes, 3);
        assert_eq!(s.classes().unwrap(), 3);
        let rings = circle_classes(&PatchGrid::from_patch_count(16).unwrap());
        for ex in &ds.examples {
            let idx = bright_patch(ex, &s);
            assert_eq!(rings.ranks[idx], ex.label);
            if [5, 6, 9, 10].contains(&idx) {
                assert_eq!(ex.label, 0);
            }
            if [0, 3, 12, 15].contains(&idx) {
                assert_eq!(ex.label, 2);
            }
        }
        let mut seen: Vec<usize> = ds.labels().collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn idx_round_trip() {
        let ds = gen_quadrant(&SyntheticSpec {
            count: 4,
            ..spec(Task::Quadrant, 0.0)
        })
        .unwrap();
        let decoded = decode_idx(&encode_idx_images(&ds), &encode_idx_labels(&ds), Some(4)).unwrap();
        assert_eq!(decoded, ds);
    }

    #[test]
    fn idx_errors() {
        let ds = gen_quadrant(&SyntheticSpec {
            count: 4,
            ..spec(Task::Quadrant, 0.0)
        })
        .unwrap();
        let images = encode_idx_images(&ds);
        let labels = encode_idx_labels(&ds);
        let truncated = &images[..images.len() - 10];
        assert!(matches!(decode_idx(truncated, &labels, None), Err(Error::Parse { .. })));
        assert!(matches!(
            decode_idx(&images[..6], &labels, None),
            Err(Error::Parse { offset: 6, .. })
        ));
        assert!(matches!(
            decode_idx(&images, &labels, Some(2)),
            Err(Error::LabelOutOfRange { classes: 2, .. })
        ));
    }

    #[test]
    fn csv_scaling_and_errors() {
        let ds = decode_csv("1,255,0,0,0,0,0,0,0,0\n0,0,0,0,0,128,0,0,0,0\n", 3, 1, None).unwrap();
        assert_eq!(ds.classes, 2);
        assert_eq!(ds.examples[0].pixels.data()[0], 1.0);
        assert_eq!(ds.examples[0].label, 1);
        assert!(matches!(
            decode_csv("0,1,2\n", 3, 1, None),
            Err(Error::Parse { offset: 0, .. })
        ));
        assert!(matches!(
            decode_csv("0,0,0,0,0,0,0,0,0,0\n0,0,0,0,0,0,0,0,0,256\n", 3, 1, None),
            Err(Error::Parse { offset: 20, .. })
        ));
        assert!(matches!(
            decode_csv("5,0,0,0,0,0,0,0,0,0\n", 3, 1, Some(4)),
            Err(Error::LabelOutOfRange { label: 5, classes: 4 })
        ));
    }

    #[test]
    fn split_is_seeded() {
        let ds = gen_quadrant(&spec(Task::Quadrant, 0.1)).unwrap();
        let (train, eval) = ds.clone().split(0.25, 9).unwrap();
        assert_eq!((train.len(), eval.len()), (48, 16));
        let (train2, _) = ds.split(0.25, 9).unwrap();
        assert_eq!(train, train2);
    }
}
