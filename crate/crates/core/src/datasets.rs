//! Synthetic and tabular classification datasets.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Features, labels in `[0, classes)` and stable sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    /// Identity of each row in the dataset it was generated or loaded as;
    /// preserved by [`split`].
    pub sample_ids: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// One past the largest sample id.
    pub fn id_space(&self) -> usize {
        self.sample_ids.iter().max().map_or(0, |m| m + 1)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows `rows` of this dataset, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            sample_ids: rows.iter().map(|&r| self.sample_ids[r]).collect(),
            classes: self.classes,
        }
    }
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobsConfig {
    pub classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    /// Distance between class means (adjacent means when placed on a circle).
    pub separation: f64,
    /// Fraction of samples whose label is replaced by a different class.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl BlobsConfig {
    /// Four noisy, overlapping classes in the plane.
    pub fn standard() -> Self {
        Self {
            classes: 4,
            dim: 2,
            n_per_class: 500,
            separation: 3.0,
            label_noise: 0.15,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::bad_config("dataset.classes", "must be >= 2"));
        }
        if self.dim < 2 {
            return Err(Error::bad_config("dataset.dim", "must be >= 2"));
        }
        if self.n_per_class == 0 {
            return Err(Error::bad_config("dataset.n_per_class", "must be >= 1"));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::bad_config("dataset.separation", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::bad_config("dataset.label_noise", "must be in [0, 1)"));
        }
        Ok(())
    }

    /// Content hash of the parameters, used for cache file names.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("plain struct serialises");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn class_means(&self, rng: &mut rng::DetRng) -> Array2<f64> {
        let (c, d) = (self.classes, self.dim);
        let mut means = Array2::zeros((c, d));
        if d == 2 || c > d {
            // circle in the first two coordinates, adjacent means `separation` apart
            let radius = self.separation / (2.0 * (std::f64::consts::PI / c as f64).sin());
            for k in 0..c {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
                means[[k, 0]] = radius * angle.cos();
                means[[k, 1]] = radius * angle.sin();
            }
        } else {
            // random orthonormal directions; every pair ends up `separation` apart
            let scale = self.separation / std::f64::consts::SQRT_2;
            let mut basis: Vec<Vec<f64>> = Vec::with_capacity(c);
            while basis.len() < c {
                let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                for b in &basis {
                    let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    basis.push(v.into_iter().map(|x| x / norm).collect());
                }
            }
            for (k, b) in basis.iter().enumerate() {
                for j in 0..d {
                    means[[k, j]] = scale * b[j];
                }
            }
        }
        means
    }
}

/// Isotropic unit-variance Gaussian blobs with symmetric label noise: exactly
/// `floor(label_noise * n)` samples get a label drawn uniformly from the other
/// classes.
pub fn gen_gaussian_blobs(cfg: &BlobsConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (c, d, m) = (cfg.classes, cfg.dim, cfg.n_per_class);
    let n = c * m;
    let mut gen = rng::stream(cfg.seed, Stream::Blobs, 0);
    let means = cfg.class_means(&mut gen);
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for k in 0..c {
        for i in 0..m {
            let row = k * m + i;
            for j in 0..d {
                let z: f64 = gen.sample(StandardNormal);
                features[[row, j]] = means[[k, j]] + z;
            }
            labels.push(k);
        }
    }
    let n_noisy = (cfg.label_noise * n as f64).floor() as usize;
    let mut noise = rng::stream(cfg.seed, Stream::Noise, 0);
    let mut order: Vec<usize> = (0..n).collect();
    let (chosen, _) = order.partial_shuffle(&mut noise, n_noisy);
    for &i in chosen.iter() {
        let shift = noise.random_range(1..c);
        labels[i] = (labels[i] + shift) % c;
    }
    let ds = Dataset {
        features,
        labels,
        sample_ids: (0..n).collect(),
        classes: c,
    };
    if ds.class_counts().contains(&0) {
        return Err(Error::bad_config("dataset.label_noise", "noise emptied a class"));
    }
    Ok(ds)
}

/// Writes `f0..f{d-1},label` with full round-trip precision.
pub fn write_csv_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(ds, std::io::BufWriter::new(file))
}

/// Loads a headed CSV whose last column is an integer label. Labels are
/// densified to `[0, c)` in ascending order of their original values.
pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let width = reader.headers()?.len();
    if width == 0 {
        return Err(Error::Parse {
            line: 1,
            col: None,
            message: "empty file".into(),
        });
    }
    if width < 2 {
        return Err(Error::Parse {
            line: 1,
            col: None,
            message: "need at least one feature column and a label column".into(),
        });
    }
    let mut flat = Vec::new();
    let mut raw_labels = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                col: None,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (j, field) in rec.iter().take(width - 1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                col: Some(j + 1),
                message: format!("`{field}` is not a number"),
            })?;
            flat.push(v);
        }
        let label = rec[width - 1].trim();
        let y: i64 = label.parse().map_err(|_| Error::Label {
            line,
            message: format!("`{label}` is not an integer label"),
        })?;
        raw_labels.push(y);
    }
    if raw_labels.is_empty() {
        return Err(Error::Parse {
            line: 2,
            col: None,
            message: "no data rows".into(),
        });
    }
    let dense: BTreeMap<i64, usize> = {
        let mut keys: Vec<i64> = raw_labels.clone();
        keys.sort_unstable();
        keys.dedup();
        keys.into_iter().enumerate().map(|(i, k)| (k, i)).collect()
    };
    let n = raw_labels.len();
    Ok(Dataset {
        features: Array2::from_shape_vec((n, width - 1), flat).expect("row lengths checked"),
        labels: raw_labels.iter().map(|y| dense[y]).collect(),
        sample_ids: (0..n).collect(),
        classes: dense.len(),
    })
}

/// Blobs dataset cached under `dir/blobs-<fingerprint>.csv`.
pub fn cached_blobs(cfg: &BlobsConfig, dir: &Path) -> Result<Dataset> {
    let path = cache_path(cfg, dir);
    if path.exists() {
        let ds = load_csv_dataset(&path)?;
        if ds.classes == cfg.classes && ds.len() == cfg.classes * cfg.n_per_class {
            return Ok(ds);
        }
    }
    let ds = gen_gaussian_blobs(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = path.with_extension("csv.tmp");
    write_csv_dataset(&ds, &tmp)?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(ds)
}

pub fn cache_path(cfg: &BlobsConfig, dir: &Path) -> PathBuf {
    dir.join(format!("blobs-{}.csv", cfg.fingerprint()))
}

/// Train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self::new(0.6, 0.2, 0.2)
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        Self { train, val, test }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.as_array();
        if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::bad_config("dataset.split", "fractions must be >= 0"));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::bad_config("dataset.split", format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Stratified, seeded three-way split. Per class the split sizes are within
/// one sample of their quotas; the leftover samples of each class go to the
/// splits furthest behind their running quota.
pub fn split(ds: &Dataset, fractions: SplitFractions, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    fractions.validate()?;
    let f = fractions.as_array();
    let active = f.iter().filter(|&&v| v > 0.0).count();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (row, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(row);
    }
    for (class, rows) in by_class.iter().enumerate() {
        if rows.len() < active {
            return Err(Error::TooFewPerClass {
                class,
                count: rows.len(),
                splits: active,
            });
        }
    }
    let mut seen = 0usize;
    let mut assigned = [0usize; 3];
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (class, rows) in by_class.iter().enumerate() {
        let mut rows = rows.clone();
        rows.shuffle(&mut rng::stream(seed, Stream::Split, class as u64));
        let n = rows.len();
        seen += n;
        let mut counts = f.map(|v| (v * n as f64).floor() as usize);
        let mut left = n - counts.iter().sum::<usize>();
        let mut taken = [false; 3];
        while left > 0 {
            let j = (0..3)
                .filter(|&j| f[j] > 0.0 && !taken[j])
                .max_by(|&a, &b| {
                    let deficit = |j: usize| f[j] * seen as f64 - (assigned[j] + counts[j]) as f64;
                    deficit(a).total_cmp(&deficit(b)).then(b.cmp(&a))
                })
                .unwrap_or_else(|| (0..3).find(|&j| f[j] > 0.0).expect("fractions sum to 1"));
            counts[j] += 1;
            taken[j] = true;
            left -= 1;
        }
        let mut start = 0;
        for j in 0..3 {
            parts[j].extend_from_slice(&rows[start..start + counts[j]]);
            assigned[j] += counts[j];
            start += counts[j];
        }
    }
    let [train, val, test] = parts.map(|mut rows| {
        rows.sort_by_key(|&r| ds.sample_ids[r]);
        ds.subset(&rows)
    });
    Ok((train, val, test))
}

/// Writes a dataset to any writer in the CSV layout of [`write_csv_dataset`].
pub fn write_csv_to<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, &y) in ds.features.rows().into_iter().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small(noise: f64) -> BlobsConfig {
        BlobsConfig {
            classes: 3,
            dim: 2,
            n_per_class: 40,
            separation: 4.0,
            label_noise: noise,
            seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(gen_gaussian_blobs(&small(0.1)).unwrap(), gen_gaussian_blobs(&small(0.1)).unwrap());
        let mut other = small(0.1);
        other.seed = 12;
        assert_ne!(gen_gaussian_blobs(&small(0.1)).unwrap(), gen_gaussian_blobs(&other).unwrap());
    }

    #[test]
    fn noise_changes_exact_count() {
        let clean = gen_gaussian_blobs(&small(0.0)).unwrap();
        for noise in [0.0, 0.05, 0.15, 0.5] {
            let noisy = gen_gaussian_blobs(&small(noise)).unwrap();
            assert_eq!(clean.features, noisy.features);
            let changed = clean.labels.iter().zip(&noisy.labels).filter(|(a, b)| a != b).count();
            assert_eq!(changed, (noise * 120.0).floor() as usize);
        }
    }

    #[test]
    fn means_are_separated() {
        let cfg = BlobsConfig { classes: 5, dim: 2, n_per_class: 1, separation: 3.0, label_noise: 0.0, seed: 0 };
        let means = cfg.class_means(&mut rng::seeded(0));
        for k in 0..5 {
            let j = (k + 1) % 5;
            let d = ((means[[k, 0]] - means[[j, 0]]).powi(2) + (means[[k, 1]] - means[[j, 1]]).powi(2)).sqrt();
            assert!((d - 3.0).abs() < 1e-12);
        }
        let cfg = BlobsConfig { classes: 3, dim: 6, n_per_class: 1, separation: 2.5, label_noise: 0.0, seed: 0 };
        let means = cfg.class_means(&mut rng::seeded(4));
        for a in 0..3 {
            for b in (a + 1)..3 {
                let d = (&means.row(a) - &means.row(b)).mapv(|v| v * v).sum().sqrt();
                assert!((d - 2.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_config() {
        for cfg in [
            BlobsConfig { classes: 1, ..small(0.0) },
            BlobsConfig { dim: 1, ..small(0.0) },
            BlobsConfig { label_noise: 1.0, ..small(0.0) },
            BlobsConfig { separation: f64::NAN, ..small(0.0) },
        ] {
            assert!(matches!(gen_gaussian_blobs(&cfg), Err(Error::BadConfig { .. })));
        }
    }

    #[test]
    fn csv_densifies_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "a,b,y\n1.0,2.0,5\n3.0,4.0,7\n5.0,6.0,5\n").unwrap();
        let ds = load_csv_dataset(&path).unwrap();
        assert_eq!(ds.classes, 2);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.sample_ids, vec![0, 1, 2]);
        assert_eq!(ds.features[[2, 1]], 6.0);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "").unwrap();
        assert!(matches!(load_csv_dataset(&path), Err(Error::Parse { .. })));
        fs::write(&path, "a,y\n").unwrap();
        assert!(matches!(load_csv_dataset(&path), Err(Error::Parse { .. })));
        fs::write(&path, "a,b,y\n1,2,0\n1,0\n").unwrap();
        assert!(matches!(load_csv_dataset(&path), Err(Error::Parse { line: 3, col: None, .. })));
        fs::write(&path, "a,b,y\n1,x,0\n").unwrap();
        assert!(matches!(load_csv_dataset(&path), Err(Error::Parse { line: 2, col: Some(2), .. })));
        fs::write(&path, "a,b,y\n1,2,cat\n").unwrap();
        assert!(matches!(load_csv_dataset(&path), Err(Error::Label { line: 2, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blobs.csv");
        let ds = gen_gaussian_blobs(&small(0.2)).unwrap();
        write_csv_dataset(&ds, &path).unwrap();
        let back = load_csv_dataset(&path).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert!(back.features.iter().zip(ds.features.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn cache_is_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let a = cached_blobs(&small(0.1), dir.path()).unwrap();
        assert!(cache_path(&small(0.1), dir.path()).exists());
        let b = cached_blobs(&small(0.1), dir.path()).unwrap();
        assert_eq!(a, b);
        assert_ne!(small(0.1).fingerprint(), small(0.2).fingerprint());
    }

    #[test]
    fn balanced_split_sizes() {
        let cfg = BlobsConfig { classes: 4, dim: 2, n_per_class: 25, separation: 3.0, label_noise: 0.0, seed: 1 };
        let ds = gen_gaussian_blobs(&cfg).unwrap();
        let (tr, va, te) = split(&ds, SplitFractions::new(0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        for (part, frac) in [(&tr, 0.8), (&va, 0.1), (&te, 0.1)] {
            for count in part.class_counts() {
                assert!((count as f64 - frac * 25.0).abs() <= 1.0);
            }
        }
        assert_eq!(split(&ds, SplitFractions::new(0.8, 0.1, 0.1), 9).unwrap(), (tr, va, te));
    }

    #[test]
    fn split_partitions_sample_ids() {
        let ds = gen_gaussian_blobs(&small(0.3)).unwrap();
        let (tr, va, te) = split(&ds, SplitFractions::new(0.6, 0.2, 0.2), 3).unwrap();
        let mut all: Vec<usize> = tr.sample_ids.iter().chain(&va.sample_ids).chain(&te.sample_ids).copied().collect();
        let unique: BTreeSet<usize> = all.iter().copied().collect();
        assert_eq!(unique.len(), all.len());
        all.sort_unstable();
        assert_eq!(all, ds.sample_ids);
        for part in [&tr, &va, &te] {
            for (i, &id) in part.sample_ids.iter().enumerate() {
                assert_eq!(part.labels[i], ds.labels[id]);
                assert_eq!(part.features.row(i), ds.features.row(id));
            }
        }
    }

    #[test]
    fn split_errors() {
        let ds = gen_gaussian_blobs(&BlobsConfig { n_per_class: 2, ..small(0.0) }).unwrap();
        assert!(matches!(split(&ds, SplitFractions::new(0.6, 0.2, 0.2), 0), Err(Error::TooFewPerClass { count: 2, splits: 3, .. })));
        assert!(split(&ds, SplitFractions::new(0.5, 0.2, 0.2), 0).is_err());
        assert!(split(&ds, SplitFractions::new(0.5, 0.5, 0.0), 0).is_ok());
    }
}
