use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::idx::{self, IdxImages};
use super::DatasetError;
use crate::nn::Shape3;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MNIST_CLASSES: usize = 10;

/// Images with integer class labels.
///
/// Images loaded from IDX files have shape `(N, H, W)` with pixels scaled to
/// `[0, 1]`; synthetic feature vectors use `(N, 1, D)` and are unscaled.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T> {
    images: Tensor<T>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, classes: usize) -> Result<Self, DatasetError> {
        if images.shape().len() < 2 {
            return Err(DatasetError::Invalid("images need a leading sample dimension".into()));
        }
        if images.outer_len() != labels.len() {
            return Err(DatasetError::Invalid(format!(
                "{} images but {} labels",
                images.outer_len(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(DatasetError::Invalid("need at least two classes".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DatasetError::Invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self { images, labels, classes })
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Network input shape of one sample.
    pub fn sample_shape(&self) -> Shape3 {
        match self.images.shape() {
            [_, d] => Shape3::flat(*d),
            [_, h, w] => Shape3::new(1, *h, *w),
            [_, c, h, w] => Shape3::new(*c, *h, *w),
            other => Shape3::flat(other[1..].iter().product()),
        }
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, DatasetError> {
        if indices.is_empty() {
            return Err(DatasetError::Invalid("selection is empty".into()));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(DatasetError::Invalid(format!("index {bad} out of range for {} samples", self.len())));
        }
        Ok(Self {
            images: self.images.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        })
    }

    /// Number of samples of each class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Re-encodes `(N, H, W)` image data as IDX image and label byte streams,
    /// mapping `[0, 1]` back to `0..=255`.
    pub fn to_idx_bytes(&self) -> Result<(Vec<u8>, Vec<u8>), DatasetError> {
        let [n, rows, cols] = *self.images.shape() else {
            return Err(DatasetError::Invalid("IDX export needs (N, H, W) images".into()));
        };
        let pixels = self
            .images
            .values()
            .iter()
            .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let labels: Vec<u8> = self
            .labels
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| DatasetError::Invalid(format!("label {l} does not fit a byte"))))
            .collect::<Result<_, _>>()?;
        Ok((idx::encode_images(&IdxImages { count: n, rows, cols, pixels }), idx::encode_labels(&labels)))
    }
}

/// Builds a dataset from raw IDX byte streams.
pub fn dataset_from_idx_bytes<T: Scalar>(
    image_bytes: &[u8],
    label_bytes: &[u8],
    classes: usize,
) -> Result<LabeledDataset<T>, DatasetError> {
    let images = idx::parse_images(image_bytes)?;
    let labels = idx::parse_labels(label_bytes)?;
    if images.count != labels.len() {
        return Err(DatasetError::Format {
            field: "count",
            message: format!("{} images but {} labels", images.count, labels.len()),
        });
    }
    if images.count == 0 || images.rows == 0 || images.cols == 0 {
        return Err(DatasetError::Format { field: "count", message: "file holds no image data".into() });
    }
    let scale = T::of(255.0);
    let pixels = images.pixels.iter().map(|&b| T::of(b as f64) / scale).collect();
    let tensor = Tensor::new(vec![images.count, images.rows, images.cols], pixels)?;
    LabeledDataset::new(tensor, labels.into_iter().map(usize::from).collect(), classes)
}

fn read(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

/// Loads an IDX image/label file pair with the given class count.
pub fn load_idx<T: Scalar>(
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
    classes: usize,
) -> Result<LabeledDataset<T>, DatasetError> {
    dataset_from_idx_bytes(&read(image_path.as_ref())?, &read(label_path.as_ref())?, classes)
}

/// Loads an MNIST-style IDX pair (ten digit classes).
pub fn load_mnist_idx<T: Scalar>(
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<LabeledDataset<T>, DatasetError> {
    load_idx(image_path, label_path, MNIST_CLASSES)
}

/// Standard MNIST file names inside a directory.
#[derive(Clone, Debug)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(root: impl AsRef<Path>) -> Self {
        let root = root.as_ref();
        Self {
            train_images: root.join("train-images-idx3-ubyte"),
            train_labels: root.join("train-labels-idx1-ubyte"),
            test_images: root.join("t10k-images-idx3-ubyte"),
            test_labels: root.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn exist(&self) -> bool {
        [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels]
            .iter()
            .all(|p| p.is_file())
    }

    pub fn load_train<T: Scalar>(&self) -> Result<LabeledDataset<T>, DatasetError> {
        load_mnist_idx(&self.train_images, &self.train_labels)
    }

    pub fn load_test<T: Scalar>(&self) -> Result<LabeledDataset<T>, DatasetError> {
        load_mnist_idx(&self.test_images, &self.test_labels)
    }
}

/// Draws `n` samples without replacement, deterministically in `seed`.
///
/// With `stratified`, each class receives `n / C` samples and the remainder
/// goes to a seeded random choice of classes, so per-class counts differ by at
/// most one. A class with too few samples contributes all it has and its
/// shortfall is spread over the others (the one-apart guarantee then only holds
/// among classes that were not exhausted). The result is shuffled.
pub fn subsample<T: Scalar>(
    data: &LabeledDataset<T>,
    n: usize,
    seed: u64,
    stratified: bool,
) -> Result<LabeledDataset<T>, DatasetError> {
    if n == 0 || n > data.len() {
        return Err(DatasetError::Size { requested: n, available: data.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes()];
        for (i, &l) in data.labels().iter().enumerate() {
            by_class[l].push(i);
        }
        let quotas = stratified_quotas(&by_class.iter().map(Vec::len).collect::<Vec<_>>(), n, &mut rng);
        let mut chosen = Vec::with_capacity(n);
        for (members, quota) in by_class.iter_mut().zip(quotas) {
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..quota]);
        }
        chosen
    } else {
        let mut all: Vec<usize> = (0..data.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(n);
        all
    };
    chosen.shuffle(&mut rng);
    data.select(&chosen)
}

fn stratified_quotas(available: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut quotas = vec![0; available.len()];
    let mut remaining = n;
    // Water-filling: hand out equal shares to classes that still have samples.
    while remaining > 0 {
        let mut open: Vec<usize> = (0..available.len()).filter(|&c| quotas[c] < available[c]).collect();
        let share = remaining / open.len();
        if share == 0 {
            open.shuffle(rng);
            for &c in open.iter().take(remaining) {
                quotas[c] += 1;
            }
            break;
        }
        for &c in &open {
            let take = share.min(available[c] - quotas[c]);
            quotas[c] += take;
            remaining -= take;
        }
    }
    quotas
}

/// `per_class` points per class from unit-variance isotropic Gaussians.
///
/// Class `c` is centred at `separation * u_c`, where `u_c` is the `c`-th
/// standard basis vector when `classes <= dim`, and otherwise the unit vector
/// at angle `2πc / classes` in the first two coordinates (`±1` when `dim == 1`).
pub fn synthetic_blobs<T: Scalar>(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset<T>, DatasetError> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(DatasetError::Invalid("blobs need classes >= 2, per_class >= 1 and dim >= 1".into()));
    }
    if dim == 1 && classes > 2 {
        return Err(DatasetError::Invalid("more than two classes need dim >= 2".into()));
    }
    if !separation.is_finite() {
        return Err(DatasetError::Invalid("separation must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let mut center = vec![0.0; dim];
        if classes <= dim {
            center[c] = separation;
        } else if dim == 1 {
            center[0] = if c == 0 { separation } else { -separation };
        } else {
            let angle = std::f64::consts::TAU * c as f64 / classes as f64;
            center[0] = separation * angle.cos();
            center[1] = separation * angle.sin();
        }
        for _ in 0..per_class {
            for &m in &center {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(T::of(m + z));
            }
            labels.push(c);
        }
    }
    let images = Tensor::new(vec![classes * per_class, 1, dim], values)?;
    LabeledDataset::new(images, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture_bytes() -> (Vec<u8>, Vec<u8>) {
        let images = IdxImages { count: 2, rows: 2, cols: 2, pixels: vec![0, 255, 255, 0, 255, 0, 0, 255] };
        (idx::encode_images(&images), idx::encode_labels(&[7, 2]))
    }

    #[test]
    fn pixel_endpoints_scale_to_unit_interval() {
        let (img, lab) = fixture_bytes();
        let data = dataset_from_idx_bytes::<f32>(&img, &lab, MNIST_CLASSES).unwrap();
        assert_eq!(data.images().shape(), &[2, 2, 2]);
        assert_eq!(data.images().values(), &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(data.labels(), &[7, 2]);
        assert_eq!(data.sample_shape(), Shape3::new(1, 2, 2));
    }

    #[test]
    fn loading_from_disk_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture_bytes();
        std::fs::write(dir.path().join("img"), &img).unwrap();
        std::fs::write(dir.path().join("lab"), &lab).unwrap();
        let data: LabeledDataset<f64> = load_mnist_idx(dir.path().join("img"), dir.path().join("lab")).unwrap();
        assert_eq!(data.len(), 2);
        std::fs::write(dir.path().join("lab3"), idx::encode_labels(&[1, 2, 3])).unwrap();
        let err = load_mnist_idx::<f64>(dir.path().join("img"), dir.path().join("lab3")).unwrap_err();
        assert!(matches!(err, DatasetError::Format { field: "count", .. }));
        let missing = load_mnist_idx::<f64>(dir.path().join("nope"), dir.path().join("lab")).unwrap_err();
        assert!(matches!(missing, DatasetError::Io { .. }));
        std::fs::write(dir.path().join("lab_big"), idx::encode_labels(&[11, 2])).unwrap();
        assert!(load_mnist_idx::<f64>(dir.path().join("img"), dir.path().join("lab_big")).is_err());
    }

    fn toy(n: usize, classes: usize) -> LabeledDataset<f64> {
        let images = Tensor::new(vec![n, 1, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        LabeledDataset::new(images, (0..n).map(|i| (i * 7 + i / 3) % classes).collect(), classes).unwrap()
    }

    #[test]
    fn full_subsample_is_a_permutation() {
        let data = toy(37, 4);
        for stratified in [false, true] {
            let s = subsample(&data, 37, 3, stratified).unwrap();
            let mut ids: Vec<usize> = s.images().values().iter().map(|v| *v as usize).collect();
            ids.sort_unstable();
            assert_eq!(ids, (0..37).collect::<Vec<_>>());
        }
    }

    #[test]
    fn subsample_is_seeded() {
        let data = toy(100, 5);
        assert_eq!(subsample(&data, 20, 9, true).unwrap(), subsample(&data, 20, 9, true).unwrap());
        assert_ne!(subsample(&data, 20, 9, false).unwrap(), subsample(&data, 20, 10, false).unwrap());
    }

    #[test]
    fn oversized_request_is_rejected() {
        assert!(matches!(subsample(&toy(5, 2), 6, 0, false), Err(DatasetError::Size { requested: 6, available: 5 })));
        assert!(subsample(&toy(5, 2), 0, 0, false).is_err());
    }

    #[test]
    fn exhausted_class_shortfall_is_redistributed() {
        // class 0 has 2 samples, class 1 has 20
        let labels: Vec<usize> = (0..22).map(|i| usize::from(i >= 2)).collect();
        let images = Tensor::new(vec![22, 1], vec![0.0; 22]).unwrap();
        let data = LabeledDataset::new(images, labels, 2).unwrap();
        assert_eq!(subsample(&data, 10, 1, true).unwrap().class_counts(), vec![2, 8]);
    }

    #[test]
    fn blobs_counts_and_balance() {
        let d = synthetic_blobs::<f64>(3, 10, 2, 5.0, 1).unwrap();
        assert_eq!(d.len(), 30);
        assert_eq!(d.class_counts(), vec![10, 10, 10]);
        assert_eq!(d.sample_shape(), Shape3::flat(2));
        assert_eq!(d, synthetic_blobs::<f64>(3, 10, 2, 5.0, 1).unwrap());
        assert!(synthetic_blobs::<f64>(1, 10, 2, 5.0, 1).is_err());
        assert!(synthetic_blobs::<f64>(2, 0, 2, 5.0, 1).is_err());
    }

    #[test]
    fn blobs_are_centred_where_documented() {
        let d = synthetic_blobs::<f64>(2, 2000, 3, 10.0, 4).unwrap();
        for c in 0..2 {
            let mut mean = [0.0; 3];
            for i in (0..d.len()).filter(|&i| d.labels()[i] == c) {
                for (m, v) in mean.iter_mut().zip(d.images().row(i)) {
                    *m += v / 2000.0;
                }
            }
            for (j, m) in mean.iter().enumerate() {
                let want = if j == c { 10.0 } else { 0.0 };
                assert!((m - want).abs() < 0.1, "class {c} coord {j}: {m}");
            }
        }
    }

    proptest! {
        #[test]
        fn stratified_counts_differ_by_at_most_one(n_per in prop::collection::vec(20usize..40, 2..8), n in 1usize..40, seed in any::<u64>()) {
            let classes = n_per.len();
            let labels: Vec<usize> = n_per.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
            let images = Tensor::new(vec![labels.len(), 1], vec![0.0f64; labels.len()]).unwrap();
            let data = LabeledDataset::new(images, labels, classes).unwrap();
            let counts = subsample(&data, n, seed, true).unwrap().class_counts();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
        }

        #[test]
        fn idx_export_reproduces_bytes(pixels in prop::collection::vec(any::<u8>(), 12), labels in prop::collection::vec(0u8..10, 3)) {
            let img = idx::encode_images(&IdxImages { count: 3, rows: 2, cols: 2, pixels });
            let lab = idx::encode_labels(&labels);
            let data = dataset_from_idx_bytes::<f32>(&img, &lab, MNIST_CLASSES).unwrap();
            let (img2, lab2) = data.to_idx_bytes().unwrap();
            prop_assert_eq!(img2, img);
            prop_assert_eq!(lab2, lab);
        }
    }
}
