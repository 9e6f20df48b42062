//! Dataset ingestion, synthetic generation, resizing and splitting.
//!
//! Images are `[C, H, W]` tensors with values in [0, 1]. The synthetic
//! generator produces grayscale images whose class is decided by a small
//! oriented stripe hidden at a random location: class 0 carries a main-diagonal
//! stripe, class 1 an anti-diagonal one. The rest of each image is uniform
//! background noise, so the label depends only on a local detail.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Full,
    Train,
    Eval,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitTag::Full => write!(f, "full"),
            SplitTag::Train => write!(f, "train"),
            SplitTag::Eval => write!(f, "eval"),
        }
    }
}

/// A labelled image collection. Labels are class indices in `[0, num_classes)`
/// with exactly-one-class semantics; `one_hot` materializes the vector form.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub num_classes: usize,
    pub split: SplitTag,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn one_hot(&self, index: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes];
        v[self.labels[index]] = 1.0;
        v
    }

    /// Check every dataset invariant; tests run this on all module outputs.
    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() || self.images.len() != self.ids.len() {
            return Err(Error::invalid(format!(
                "dataset columns disagree: {} images, {} labels, {} ids",
                self.images.len(),
                self.labels.len(),
                self.ids.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("dataset needs at least 2 classes"));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &self.ids {
            if !seen.insert(id) {
                return Err(Error::invalid(format!("duplicate image id {id}")));
            }
        }
        for (i, label) in self.labels.iter().enumerate() {
            if *label >= self.num_classes {
                return Err(Error::invalid(format!(
                    "label {label} at index {i} out of range for {} classes",
                    self.num_classes
                )));
            }
        }
        for (i, img) in self.images.iter().enumerate() {
            if img.shape().len() != 3 {
                return Err(Error::invalid(format!(
                    "image {i} is not [C, H, W]: {:?}",
                    img.shape()
                )));
            }
            if img.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(format!("image {i} has pixels outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn select(&self, indices: &[usize], split: SplitTag) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            num_classes: self.num_classes,
            split,
        }
    }
}

// ---------------------------------------------------------------------------
// synthetic generation
// ---------------------------------------------------------------------------

/// Stripe intensity inside the detail patch.
const PATCH_HI: f64 = 1.0;
/// Off-stripe intensity inside the detail patch.
const PATCH_LO: f64 = 0.0;

/// Generate `n` grayscale images of `image_size` x `image_size`. Each is
/// uniform noise around mid-gray plus a `detail_size` x `detail_size` patch at
/// a random location: a main-diagonal stripe for class 0, anti-diagonal for
/// class 1. Classes alternate so any prefix is balanced. Deterministic per
/// seed.
pub fn gen_synthetic(
    n: usize,
    image_size: usize,
    detail_size: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "synthetic set needs an even n >= 2 for balanced classes, got {n}"
        )));
    }
    if detail_size < 2 || detail_size * 4 >= image_size {
        return Err(Error::invalid(format!(
            "detail size {detail_size} must be >= 2 and < image_size/4 = {}",
            image_size as f64 / 4.0
        )));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::invalid(format!("noise level {noise} outside [0, 1]")));
    }

    let mut rng = StdRng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let max_offset = image_size - detail_size;
    for i in 0..n {
        let class = i % 2;
        let ox = rng.gen_range(0..=max_offset);
        let oy = rng.gen_range(0..=max_offset);
        let mut px = vec![0.0; image_size * image_size];
        for v in px.iter_mut() {
            // Mid-gray plus bounded uniform noise; stays inside [0, 1].
            *v = 0.5 + noise * (rng.gen::<f64>() - 0.5);
        }
        for dy in 0..detail_size {
            for dx in 0..detail_size {
                let on_stripe = if class == 0 {
                    dx == dy
                } else {
                    dx + dy == detail_size - 1
                };
                px[(oy + dy) * image_size + ox + dx] =
                    if on_stripe { PATCH_HI } else { PATCH_LO };
            }
        }
        images.push(Tensor::new(&[1, image_size, image_size], px)?);
        labels.push(class);
        ids.push(format!("img_{i:05}"));
    }
    Ok(Dataset {
        images,
        labels,
        ids,
        num_classes: 2,
        split: SplitTag::Full,
    })
}

// ---------------------------------------------------------------------------
// directory loading / saving
// ---------------------------------------------------------------------------

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn image_id_from_path(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

fn decode_image(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if ext == "pgm" {
        let (w, h, px) = pgm::decode_pgm(&bytes, path)?;
        let data: Vec<f64> = px.iter().map(|&b| b as f64 / 255.0).collect();
        return Tensor::new(&[1, h, w], data);
    }
    // PNG, 8-bit grayscale or RGB.
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data: Vec<f64> = g.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
            Tensor::new(&[1, h, w], data)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.into_raw();
            // Interleaved RGB to [3, H, W].
            let mut data = vec![0.0; 3 * h * w];
            for i in 0..h * w {
                for c in 0..3 {
                    data[c * h * w + i] = raw[i * 3 + c] as f64 / 255.0;
                }
            }
            Tensor::new(&[3, h, w], data)
        }
    }
}

/// Load a dataset described by a `path,label` manifest CSV. Relative paths
/// resolve against `root`; rows keep manifest order.
pub fn load_image_dir(root: &Path, manifest: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.trim() == "path,label" => {}
        other => {
            return Err(Error::invalid(format!(
                "manifest {} must start with `path,label`, got {:?}",
                manifest.display(),
                other.unwrap_or("")
            )))
        }
    }
    let mut entries = Vec::new();
    let mut max_label = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        // Label is the last column, so paths may contain commas.
        let (path, label) = line.rsplit_once(',').ok_or_else(|| {
            Error::invalid(format!(
                "manifest line {}: expected `path,label`, got {line:?}",
                lineno + 2
            ))
        })?;
        let label: usize = label.trim().parse().map_err(|_| {
            Error::invalid(format!(
                "manifest line {}: label {label:?} is not a class index",
                lineno + 2
            ))
        })?;
        max_label = max_label.max(label);
        entries.push((path.trim().to_string(), label));
    }

    let mut images = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    let mut ids = Vec::with_capacity(entries.len());
    for (rel, label) in &entries {
        let full = root.join(rel);
        images.push(decode_image(&full)?);
        labels.push(*label);
        ids.push(image_id_from_path(rel));
    }
    Ok(Dataset {
        images,
        labels,
        ids,
        num_classes: (max_label + 1).max(2),
        split: SplitTag::Full,
    })
}

/// Write a dataset as `images/{id}.pgm` files plus `manifest.csv` under `out`.
/// Only single-channel images are supported (the synthetic sets are
/// grayscale); pixel values are quantized to 8 bits.
pub fn save_dataset_dir(dataset: &Dataset, out: &Path) -> Result<()> {
    let img_dir = out.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut manifest = String::from("path,label\n");
    for i in 0..dataset.len() {
        let img = &dataset.images[i];
        if img.shape()[0] != 1 {
            return Err(Error::invalid(format!(
                "save_dataset_dir: image {i} has {} channels, only grayscale is written",
                img.shape()[0]
            )));
        }
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let px: Vec<u8> = img
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let rel = format!("images/{}.pgm", dataset.ids[i]);
        let path = out.join(&rel);
        fs::write(&path, pgm::encode_pgm(w, h, &px)).map_err(|e| Error::io(&path, e))?;
        manifest.push_str(&format!("{rel},{}\n", dataset.labels[i]));
    }
    let mpath = out.join("manifest.csv");
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
}

// ---------------------------------------------------------------------------
// resize
// ---------------------------------------------------------------------------

/// Bilinear resample of a `[C, H, W]` image to `target` x `target`, using
/// half-pixel centers: output pixel i samples source position
/// `(i + 0.5) * src/dst - 0.5`, clamped at the borders. Identity when the
/// extents already match.
pub fn resize(image: &Tensor, target: usize) -> Result<Tensor> {
    if image.shape().len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "resize",
            expected: "[C, H, W] image".into(),
            got: format!("{:?}", image.shape()),
        });
    }
    if target == 0 {
        return Err(Error::invalid("resize: target extent must be >= 1"));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if h == target && w == target {
        return Ok(image.clone());
    }
    let src = image.data();
    let mut out = vec![0.0; c * target * target];
    let map = |i: usize, dst: usize, extent: usize| -> (usize, usize, f64) {
        let pos = (i as f64 + 0.5) * extent as f64 / dst as f64 - 0.5;
        let pos = pos.clamp(0.0, (extent - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(extent - 1);
        (lo, hi, pos - lo as f64)
    };
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for oy in 0..target {
            let (y0, y1, fy) = map(oy, target, h);
            for ox in 0..target {
                let (x0, x1, fx) = map(ox, target, w);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[(ci * target + oy) * target + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(&[c, target, target], out)
}

// ---------------------------------------------------------------------------
// splitting
// ---------------------------------------------------------------------------

/// Stratified train/eval split: per class, a seeded shuffle sends
/// `round(eval_fraction * count)` samples (at least 1, at most count-1) to the
/// eval side. Splits are disjoint by id and jointly exhaustive.
pub fn split(dataset: &Dataset, eval_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "eval fraction must be in (0, 1), got {eval_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &label) in dataset.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut eval_idx = Vec::new();
    for (class, indices) in by_class.iter_mut().enumerate() {
        if indices.len() < 2 {
            return Err(Error::invalid(format!(
                "class {class} has {} samples; need at least 2 to split",
                indices.len()
            )));
        }
        // Fisher-Yates driven by the seeded generator.
        for i in (1..indices.len()).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        let n_eval = ((eval_fraction * indices.len() as f64).round() as usize)
            .clamp(1, indices.len() - 1);
        eval_idx.extend_from_slice(&indices[..n_eval]);
        train_idx.extend_from_slice(&indices[n_eval..]);
    }
    // Restore dataset order inside each split so output order is independent
    // of the shuffle.
    train_idx.sort_unstable();
    eval_idx.sort_unstable();
    Ok((
        dataset.select(&train_idx, SplitTag::Train),
        dataset.select(&eval_idx, SplitTag::Eval),
    ))
}

/// Resize every image of a dataset (identity when extents match).
pub fn resize_dataset(dataset: &Dataset, target: usize) -> Result<Dataset> {
    let images = dataset
        .images
        .iter()
        .map(|img| resize(img, target))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        images,
        labels: dataset.labels.clone(),
        ids: dataset.ids.clone(),
        num_classes: dataset.num_classes,
        split: dataset.split,
    })
}

pub fn manifest_path(data_dir: &Path) -> PathBuf {
    data_dir.join("manifest.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_balanced_and_valid() {
        let ds = gen_synthetic(100, 32, 5, 0.25, 7).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 0).count(), 50);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 1).count(), 50);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = gen_synthetic(20, 32, 5, 0.3, 42).unwrap();
        let b = gen_synthetic(20, 32, 5, 0.3, 42).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert!(x
                .data()
                .iter()
                .zip(y.data())
                .all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.ids, b.ids);
    }

    /// At noise 0 the patch is exactly the non-background pixels; returns its
    /// top-left corner and the detail x detail block read row-major.
    fn locate_patch(img: &Tensor, detail: usize) -> ((usize, usize), Vec<f64>) {
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let mut min = (usize::MAX, usize::MAX);
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                if img.data()[y * w + x] != 0.5 {
                    min = (min.0.min(x), min.1.min(y));
                    count += 1;
                }
            }
        }
        assert_eq!(count, detail * detail, "patch pixel count");
        let mut block = Vec::with_capacity(detail * detail);
        for dy in 0..detail {
            for dx in 0..detail {
                block.push(img.data()[(min.1 + dy) * w + min.0 + dx]);
            }
        }
        (min, block)
    }

    #[test]
    fn zero_noise_images_differ_only_in_patch_location() {
        let detail = 4;
        let ds = gen_synthetic(8, 24, detail, 0.0, 3).unwrap();
        // Same-class pairs carry an identical patch block at (usually)
        // different offsets, over an otherwise constant 0.5 background.
        for pair in [(0usize, 2usize), (1, 3), (4, 6), (5, 7)] {
            let (loc_a, block_a) = locate_patch(&ds.images[pair.0], detail);
            let (loc_b, block_b) = locate_patch(&ds.images[pair.1], detail);
            assert_eq!(block_a, block_b, "pair {pair:?}");
            if loc_a == loc_b {
                assert_eq!(ds.images[pair.0].data(), ds.images[pair.1].data());
            }
        }
        // Different classes at noise 0 differ in the block itself.
        let (_, block_0) = locate_patch(&ds.images[0], detail);
        let (_, block_1) = locate_patch(&ds.images[1], detail);
        assert_ne!(block_0, block_1);
    }

    #[test]
    fn synthetic_rejects_bad_extents() {
        assert!(gen_synthetic(9, 32, 5, 0.2, 0).is_err()); // odd n
        assert!(gen_synthetic(10, 32, 8, 0.2, 0).is_err()); // detail too large
        assert!(gen_synthetic(8, 32, 1, 0.2, 0).is_err()); // detail too small
    }

    /// Template-matching oracle: slide both stripe templates over the image
    /// and pick the class of the best (lowest squared error) placement.
    fn template_match_class(img: &Tensor, detail: usize) -> usize {
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let mut best = (f64::INFINITY, 0usize);
        for class in 0..2 {
            for oy in 0..=(h - detail) {
                for ox in 0..=(w - detail) {
                    let mut err = 0.0;
                    for dy in 0..detail {
                        for dx in 0..detail {
                            let on = if class == 0 {
                                dx == dy
                            } else {
                                dx + dy == detail - 1
                            };
                            let want = if on { PATCH_HI } else { PATCH_LO };
                            let got = img.data()[(oy + dy) * w + ox + dx];
                            err += (got - want) * (got - want);
                        }
                    }
                    if err < best.0 {
                        best = (err, class);
                    }
                }
            }
        }
        best.1
    }

    #[test]
    fn noiseless_set_is_perfectly_classifiable_by_template_matching() {
        let ds = gen_synthetic(40, 24, 4, 0.0, 11).unwrap();
        for i in 0..ds.len() {
            assert_eq!(
                template_match_class(&ds.images[i], 4),
                ds.labels[i],
                "image {i}"
            );
        }
    }

    #[test]
    fn split_is_stratified_disjoint_exhaustive() {
        let ds = gen_synthetic(100, 32, 5, 0.2, 5).unwrap();
        let (train, eval) = split(&ds, 0.5, 9).unwrap();
        train.validate().unwrap();
        eval.validate().unwrap();
        assert_eq!(train.split, SplitTag::Train);
        assert_eq!(eval.split, SplitTag::Eval);
        for part in [&train, &eval] {
            assert_eq!(part.labels.iter().filter(|&&l| l == 0).count(), 25);
            assert_eq!(part.labels.iter().filter(|&&l| l == 1).count(), 25);
        }
        let mut all: Vec<&String> = train.ids.iter().chain(eval.ids.iter()).collect();
        all.sort();
        let mut orig: Vec<&String> = ds.ids.iter().collect();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_is_deterministic() {
        let ds = gen_synthetic(60, 32, 5, 0.2, 5).unwrap();
        let (t1, e1) = split(&ds, 0.25, 77).unwrap();
        let (t2, e2) = split(&ds, 0.25, 77).unwrap();
        assert_eq!(t1.ids, t2.ids);
        assert_eq!(e1.ids, e2.ids);
        let (t3, _) = split(&ds, 0.25, 78).unwrap();
        assert_ne!(t1.ids, t3.ids);
    }

    #[test]
    fn split_rejects_tiny_classes() {
        let mut ds = gen_synthetic(4, 32, 5, 0.2, 5).unwrap();
        ds.images.truncate(3);
        ds.labels.truncate(3);
        ds.ids.truncate(3);
        // Class 1 now has a single sample.
        assert!(split(&ds, 0.5, 0).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Tensor::filled(&[1, 5, 5], 0.4);
        let same = resize(&img, 5).unwrap();
        assert_eq!(same.data(), img.data());
        let up = resize(&img, 11).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn checkerboard_down_to_single_pixel_averages_corners() {
        let img = Tensor::new(&[1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let down = resize(&img, 1).unwrap();
        assert!((down.data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn resize_round_trip_bound_for_blockwise_constant_images() {
        // Half-black, half-white 8x8 (constant on 2x2 blocks): down to 4x4 and
        // back changes no pixel by more than 0.25.
        let img = Tensor::from_fn(&[1, 8, 8], |i| if i % 8 < 4 { 0.0 } else { 1.0 });
        let down = resize(&img, 4).unwrap();
        let back = resize(&down, 8).unwrap();
        let max_err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 0.25 + 1e-12, "max error {max_err}");
    }

    #[test]
    fn dataset_dir_roundtrip() {
        let ds = gen_synthetic(10, 16, 3, 0.5, 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset_dir(&ds, dir.path()).unwrap();
        let back = load_image_dir(dir.path(), &manifest_path(dir.path())).unwrap();
        back.validate().unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.ids, ds.ids);
        // 8-bit quantization: within half a level.
        for (a, b) in ds.images.iter().zip(&back.images) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn loader_reports_missing_files_by_path() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(&manifest, "path,label\nimages/nope.pgm,0\n").unwrap();
        let err = load_image_dir(dir.path(), &manifest).unwrap_err();
        assert!(err.to_string().contains("nope.pgm"), "{err}");
    }

    #[test]
    fn empty_manifest_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(&manifest, "path,label\n").unwrap();
        let ds = load_image_dir(dir.path(), &manifest).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn pgm_scaling_endpoints_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        std::fs::write(&path, pgm::encode_pgm(2, 1, &[0, 255])).unwrap();
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(&manifest, "path,label\ng.pgm,0\n").unwrap();
        let ds = load_image_dir(dir.path(), &manifest).unwrap();
        assert_eq!(ds.images[0].data(), &[0.0, 1.0]);
    }

    #[test]
    fn png_decoding_works() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        let img = image::GrayImage::from_fn(3, 2, |x, y| image::Luma([(x * 100 + y * 50) as u8]));
        img.save(&path).unwrap();
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(&manifest, "path,label\np.png,1\n").unwrap();
        let ds = load_image_dir(dir.path(), &manifest).unwrap();
        assert_eq!(ds.images[0].shape(), &[1, 2, 3]);
        assert!((ds.images[0].at(&[0, 0, 1]) - 100.0 / 255.0).abs() < 1e-12);
    }
}
