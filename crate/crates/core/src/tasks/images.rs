use std::path::Path;

use rand::seq::index;
use rand::Rng as _;

use super::{build_schedule, pgm, Degradation, TaskConfig};
use crate::error::{Error, Result};
use crate::plastic::EpisodeSpec;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Square grayscale images, normalised to `[-1, 1]`, with a train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageStore {
    pub side: usize,
    pub images: Vec<Vec<f64>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ImageStore {
    /// Wraps already normalised images. The last `round(test_fraction * n)`
    /// images form the test split.
    pub fn new(side: usize, images: Vec<Vec<f64>>, test_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::Config(format!("test fraction {test_fraction} outside [0, 1]")));
        }
        if let Some(bad) = images.iter().position(|im| im.len() != side * side) {
            return Err(Error::contract(
                "ImageStore",
                format!("image {bad} is not {side}x{side}"),
            ));
        }
        let n = images.len();
        let n_test = (test_fraction * n as f64).round() as usize;
        Ok(ImageStore {
            side,
            images,
            train: (0..n - n_test).collect(),
            test: (n - n_test..n).collect(),
        })
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Subtracts the mean pixel value, then divides by the largest absolute
/// deviation. A constant image becomes all zeros.
pub fn normalize_image(pixels: &mut [f64]) {
    if pixels.is_empty() {
        return;
    }
    if pixels.iter().all(|&p| p == pixels[0]) {
        pixels.fill(0.0);
        return;
    }
    let mean = pixels.iter().sum::<f64>() / pixels.len() as f64;
    let mut max_abs = 0.0f64;
    for p in pixels.iter_mut() {
        *p -= mean;
        max_abs = max_abs.max(p.abs());
    }
    if max_abs > 0.0 {
        for p in pixels.iter_mut() {
            *p /= max_abs;
        }
    }
}

fn from_bytes(bytes: &[u8]) -> Vec<f64> {
    let mut v: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    normalize_image(&mut v);
    v
}

/// Loads `side x side` 8-bit images. `path` is either a directory of `.pgm`
/// files (taken in file-name order) or a raw file of `side * side`-byte
/// records.
pub fn load_images(path: &Path, side: usize, test_fraction: f64) -> Result<ImageStore> {
    let rec = side * side;
    let mut images = Vec::new();
    if path.is_dir() {
        let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
                files.push(p);
            }
        }
        files.sort();
        for f in files {
            let (w, h, px) = pgm::read_pgm(&f)?;
            if (w, h) != (side, side) {
                return Err(Error::Data {
                    path: f,
                    msg: format!("image is {w}x{h}, expected {side}x{side}"),
                });
            }
            images.push(from_bytes(&px));
        }
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % rec != 0 {
            return Err(Error::Data {
                path: path.to_path_buf(),
                msg: format!("size {} is not a multiple of {rec}", bytes.len()),
            });
        }
        images.extend(bytes.chunks(rec).map(from_bytes));
    }
    if images.is_empty() {
        return Err(Error::Data {
            path: path.to_path_buf(),
            msg: "no images found".into(),
        });
    }
    ImageStore::new(side, images, test_fraction)
}

const BLUR_SIGMA: f64 = 1.5;
const BLUR_RADIUS: isize = 4;

/// Smooth random fields: white noise blurred with a separable Gaussian
/// kernel (edges clamped), then normalised like loaded images. A tenth of
/// the images are held out as the test split.
pub fn gen_synthetic_images(n: usize, side: usize, rng: &mut Rng) -> Result<ImageStore> {
    if n < 3 {
        return Err(Error::Config("need at least 3 synthetic images".into()));
    }
    let kernel: Vec<f64> = (-BLUR_RADIUS..=BLUR_RADIUS)
        .map(|d| (-(d * d) as f64 / (2.0 * BLUR_SIGMA * BLUR_SIGMA)).exp())
        .collect();
    let s = side as isize;
    let at = |v: isize| v.clamp(0, s - 1) as usize;
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let noise: Vec<f64> = (0..side * side).map(|_| rng::gaussian(rng)).collect();
        let mut tmp = vec![0.0; side * side];
        for r in 0..s {
            for c in 0..s {
                tmp[(r * s + c) as usize] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * noise[r as usize * side + at(c + k as isize - BLUR_RADIUS)])
                    .sum();
            }
        }
        let mut img = vec![0.0; side * side];
        for r in 0..s {
            for c in 0..s {
                img[(r * s + c) as usize] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * tmp[at(r + k as isize - BLUR_RADIUS) * side + c as usize])
                    .sum();
            }
        }
        normalize_image(&mut img);
        images.push(img);
    }
    ImageStore::new(side, images, 0.1)
}

/// Pearson correlation between horizontally and vertically adjacent pixels,
/// pooled over all images.
pub fn neighbour_correlation(store: &ImageStore) -> f64 {
    let side = store.side;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for img in &store.images {
        for r in 0..side {
            for c in 0..side {
                if c + 1 < side {
                    xs.push(img[r * side + c]);
                    ys.push(img[r * side + c + 1]);
                }
                if r + 1 < side {
                    xs.push(img[r * side + c]);
                    ys.push(img[(r + 1) * side + c]);
                }
            }
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Three distinct images from `split`, shown in shuffled blocks; the probe is
/// one of them with its top or bottom half zeroed (fair coin).
pub fn gen_image_episode(store: &ImageStore, split: Split, cfg: &TaskConfig, rng: &mut Rng) -> Result<EpisodeSpec> {
    cfg.validate()?;
    if cfg.degradation != Degradation::HalfFieldTopOrBottom {
        return Err(Error::Config("image episodes use half-field degradation".into()));
    }
    if cfg.image_side() != Some(store.side) {
        return Err(Error::Config(format!(
            "task.n_elements = {} does not match {0}x{0} images",
            store.side
        )));
    }
    let pool = store.split(split);
    if pool.len() < cfg.n_patterns {
        return Err(Error::Config(format!(
            "split has {} images, episode needs {}",
            pool.len(),
            cfg.n_patterns
        )));
    }
    let patterns: Vec<Vec<f64>> = index::sample(rng, pool.len(), cfg.n_patterns)
        .into_iter()
        .map(|k| store.images[pool[k]].clone())
        .collect();
    let pick = rng.random_range(0..cfg.n_patterns);
    let top = rng.random_bool(0.5);
    let half = store.side / 2 * store.side;
    let n = cfg.n_elements;
    let mask: Vec<bool> = (0..n).map(|k| if top { k >= half } else { k < half }).collect();
    let probe: Vec<f64> = patterns[pick]
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    let target = patterns[pick].clone();
    Ok(build_schedule(cfg, &patterns, &probe, &mask, &target, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{episode_rng, init_rng};

    #[test]
    fn normalisation_cases() {
        let mut c = vec![0.4; 8];
        normalize_image(&mut c);
        assert!(c.iter().all(|&v| v == 0.0));
        let mut h = vec![0.0, 0.0, 1.0, 1.0];
        normalize_image(&mut h);
        assert_eq!(h, vec![-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn synthetic_images_are_bounded_smooth_and_seeded() {
        let a = gen_synthetic_images(20, 32, &mut init_rng(1)).unwrap();
        let b = gen_synthetic_images(20, 32, &mut init_rng(1)).unwrap();
        let c = gen_synthetic_images(20, 32, &mut init_rng(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.images, c.images);
        assert!(a.images.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        assert!(neighbour_correlation(&a) > 0.5);
        assert_eq!((a.train.len(), a.test.len()), (18, 2));
    }

    #[test]
    fn image_episode_layout() {
        let store = gen_synthetic_images(10, 32, &mut init_rng(0)).unwrap();
        let cfg = TaskConfig::images(32);
        let mut tops = 0;
        for ep_idx in 0..40 {
            let ep = gen_image_episode(&store, Split::Train, &cfg, &mut episode_rng(5, ep_idx)).unwrap();
            assert_eq!(ep.steps.len(), 210);
            let probe = ep.steps.last().unwrap();
            let top_zeroed = !probe.clamp_mask[0];
            tops += top_zeroed as usize;
            for k in 0..1024 {
                let in_top = k < 16 * 32;
                assert_eq!(probe.clamp_mask[k], in_top != top_zeroed);
            }
            for s in &ep.steps {
                assert!(s.clamp_values.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
        assert!(tops > 5 && tops < 35);
    }

    #[test]
    fn too_few_images_in_split() {
        let store = gen_synthetic_images(10, 4, &mut init_rng(0)).unwrap();
        let cfg = TaskConfig::images(4);
        assert!(gen_image_episode(&store, Split::Test, &cfg, &mut init_rng(0)).is_err());
        assert!(gen_image_episode(&store, Split::Train, &cfg, &mut init_rng(0)).is_ok());
    }

    #[test]
    fn loads_pgm_directory_and_raw_file() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in ["c.pgm", "a.pgm", "b.pgm", "d.pgm"].iter().enumerate() {
            let px: Vec<u8> = (0..16).map(|k| if k < 8 { 0 } else { 255 - i as u8 }).collect();
            pgm::write_pgm(&dir.path().join(name), 4, 4, &px).unwrap();
        }
        let s1 = load_images(dir.path(), 4, 0.25).unwrap();
        let s2 = load_images(dir.path(), 4, 0.25).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.test, vec![3]);
        assert_eq!(s1.images[0][0], -1.0);
        assert!(load_images(dir.path(), 8, 0.25).is_err());

        let raw = dir.path().join("raw.bin");
        std::fs::write(&raw, [7u8; 48]).unwrap();
        let s = load_images(&raw, 4, 0.0).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.images[0].iter().all(|&v| v == 0.0));
        std::fs::write(&raw, [7u8; 47]).unwrap();
        assert!(load_images(&raw, 4, 0.0).is_err());
    }
}
