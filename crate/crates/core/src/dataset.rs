//! Covariate/treatment datasets: loading, validation, synthesis and resampling.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{Purpose, Rng, SeedStream};

/// A dense covariate matrix with binary treatment labels.
///
/// Features are stored row-major. Construction validates shape, label domain,
/// column names, and finiteness, so every `Dataset` in circulation satisfies
/// those invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    treatment: Vec<u8>,
    feature_names: Vec<String>,
    group_counts: (usize, usize),
}

impl Dataset {
    /// Builds a dataset from row-major feature values.
    pub fn new(features: Vec<f64>, treatment: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        let n_features = feature_names.len();
        if treatment.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if features.len() != treatment.len() * n_features {
            return Err(Error::Shape(format!(
                "{} values cannot fill {} rows of {} features",
                features.len(),
                treatment.len(),
                n_features
            )));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if name.is_empty() || !seen.insert(name.as_str()) {
                return Err(Error::BadColumnName(name.clone()));
            }
        }
        let mut group_counts = (0, 0);
        for (row, &a) in treatment.iter().enumerate() {
            match a {
                0 => group_counts.0 += 1,
                1 => group_counts.1 += 1,
                other => {
                    return Err(Error::NonBinaryTreatment {
                        row: row + 1,
                        value: other.to_string(),
                    })
                }
            }
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue {
                row: pos / n_features.max(1) + 1,
                col: feature_names[pos % n_features.max(1)].clone(),
            });
        }
        Ok(Self {
            features,
            n_features,
            treatment,
            feature_names,
            group_counts,
        })
    }

    /// Builds a dataset from a slice of rows.
    pub fn from_rows(rows: &[Vec<f64>], treatment: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        let width = feature_names.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::Shape(format!(
                "row of length {} with {} feature names",
                bad.len(),
                width
            )));
        }
        Self::new(rows.concat(), treatment, feature_names)
    }

    pub fn n_samples(&self) -> usize {
        self.treatment.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.n_features + feature]
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// `(N0, N1)`: number of samples in each treatment group.
    pub fn group_counts(&self) -> (usize, usize) {
        self.group_counts
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Writes the dataset as CSV with the treatment as the last column.
    /// Values are printed in shortest round-trip form, so reloading yields
    /// bit-identical features.
    pub fn write_csv<W: Write>(&self, out: W, treatment_column: &str) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let to_err = |e: csv::Error| Error::Csv {
            path: "<output>".into(),
            source: e,
        };
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(treatment_column);
        writer.write_record(&header).map_err(to_err)?;
        let mut record = Vec::with_capacity(self.n_features + 1);
        for i in 0..self.n_samples() {
            record.clear();
            record.extend(self.row(i).iter().map(|v| v.to_string()));
            record.push(self.treatment[i].to_string());
            writer.write_record(&record).map_err(to_err)?;
        }
        writer
            .flush()
            .map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, treatment_column: &str) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), treatment_column)
            .map_err(|e| with_path(e, path))
    }
}

fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Csv { source, .. } => Error::Csv {
            path: path.into(),
            source,
        },
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Loads a CSV file with a header row.
///
/// Columns listed in `categorical_columns` are one-hot encoded in place into
/// `<col>=<level>` indicator columns, levels in lexicographic order. Every
/// other non-treatment column must parse as a finite real number.
pub fn load_csv(
    path: impl AsRef<Path>,
    treatment_column: &str,
    categorical_columns: &[String],
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), treatment_column, categorical_columns)
        .map_err(|e| with_path(e, path))
}

/// Same as [`load_csv`] over any reader.
pub fn read_csv<R: Read>(
    reader: R,
    treatment_column: &str,
    categorical_columns: &[String],
) -> Result<Dataset> {
    let to_err = |e: csv::Error| Error::Csv {
        path: "<input>".into(),
        source: e,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = reader
        .headers()
        .map_err(to_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let treatment_idx = header
        .iter()
        .position(|h| h == treatment_column)
        .ok_or_else(|| Error::UnknownColumn(treatment_column.to_string()))?;
    let mut categorical = HashSet::new();
    for col in categorical_columns {
        if !header.contains(col) || col == treatment_column {
            return Err(Error::UnknownColumn(col.clone()));
        }
        categorical.insert(col.as_str());
    }

    let mut raw: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(to_err)?;
        raw.push(record.iter().map(|s| s.trim().to_string()).collect());
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut treatment = Vec::with_capacity(raw.len());
    for (i, row) in raw.iter().enumerate() {
        let cell = &row[treatment_idx];
        let value = match cell.parse::<f64>() {
            Ok(0.0) => 0,
            Ok(1.0) => 1,
            _ if cell.is_empty() => {
                return Err(Error::MissingValue {
                    row: i + 1,
                    col: treatment_column.to_string(),
                })
            }
            _ => {
                return Err(Error::NonBinaryTreatment {
                    row: i + 1,
                    value: cell.clone(),
                })
            }
        };
        treatment.push(value);
    }

    // Column plan: each source column becomes one numeric column or a block
    // of indicators.
    enum Plan {
        Numeric(usize),
        OneHot(usize, Vec<String>),
    }
    let mut plans = Vec::new();
    let mut names = Vec::new();
    for (j, name) in header.iter().enumerate() {
        if j == treatment_idx {
            continue;
        }
        if categorical.contains(name.as_str()) {
            let mut levels = BTreeSet::new();
            for (i, row) in raw.iter().enumerate() {
                if row[j].is_empty() {
                    return Err(Error::MissingValue {
                        row: i + 1,
                        col: name.clone(),
                    });
                }
                levels.insert(row[j].clone());
            }
            let levels: Vec<String> = levels.into_iter().collect();
            names.extend(levels.iter().map(|l| format!("{name}={l}")));
            plans.push(Plan::OneHot(j, levels));
        } else {
            names.push(name.clone());
            plans.push(Plan::Numeric(j));
        }
    }

    let width = names.len();
    let mut features = Vec::with_capacity(raw.len() * width);
    for (i, row) in raw.iter().enumerate() {
        for plan in &plans {
            match plan {
                Plan::Numeric(j) => {
                    let v = row[*j]
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::MissingValue {
                            row: i + 1,
                            col: header[*j].clone(),
                        })?;
                    features.push(v);
                }
                Plan::OneHot(j, levels) => {
                    let lookup: HashMap<&str, usize> =
                        levels.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect();
                    let hit = lookup[row[*j].as_str()];
                    features.extend((0..levels.len()).map(|k| if k == hit { 1.0 } else { 0.0 }));
                }
            }
        }
    }
    Dataset::new(features, treatment, names)
}

fn numbered_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

/// Uniform samples on the diamond `|x1| + |x2| <= sqrt(2)` with treatment
/// drawn Bernoulli(1/2), except that every sample in the open first quadrant
/// is assigned to group 1.
pub fn synth_rotated_square(n_samples: usize, seed: u64) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = SeedStream::new(seed).substream(Purpose::Synthesis, 0);
    let mut features = Vec::with_capacity(2 * n_samples);
    let mut treatment = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        // The square [-1, 1]^2 rotated by 45 degrees is exactly the diamond.
        let u: f64 = rng.random_range(-1.0..1.0);
        let v: f64 = rng.random_range(-1.0..1.0);
        let x1 = (u - v) / std::f64::consts::SQRT_2;
        let x2 = (u + v) / std::f64::consts::SQRT_2;
        let mut a = u8::from(rng.random_bool(0.5));
        if x1 > 0.0 && x2 > 0.0 {
            a = 1;
        }
        features.extend([x1, x2]);
        treatment.push(a);
    }
    Dataset::new(features, treatment, numbered_names(2))
}

/// Standard-normal features shared by both groups, with treatment drawn
/// Bernoulli(1/2) independently of the covariates.
pub fn synth_null_overlap(n_samples: usize, n_features: usize, seed: u64) -> Result<Dataset> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "null-overlap synthesis needs at least 2 samples, got {n_samples}"
        )));
    }
    if n_features == 0 {
        return Err(Error::InvalidArgument(
            "null-overlap synthesis needs at least 1 feature".into(),
        ));
    }
    let mut rng = SeedStream::new(seed).substream(Purpose::Synthesis, 1);
    let mut features = Vec::with_capacity(n_samples * n_features);
    let mut treatment = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        for _ in 0..n_features {
            features.push(rng.sample::<f64, _>(StandardNormal));
        }
        treatment.push(u8::from(rng.random_bool(0.5)));
    }
    Dataset::new(features, treatment, numbered_names(n_features))
}

/// Per-sample fold labels for k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_index: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_index(&self) -> &[usize] {
        &self.fold_index
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_index {
            sizes[f] += 1;
        }
        sizes
    }

    /// `(training rows, validation rows)` for holding out `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_index.len()).partition(|&i| self.fold_index[i] != fold)
    }
}

/// Stratified k-fold assignment.
///
/// Each group's samples are shuffled, then the two groups are dealt
/// round-robin as one continuous sequence, so fold sizes differ by at most one
/// and each fold's count of either group differs from any other fold's by at
/// most one.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = dataset.n_samples();
    if k < 2 || k > n {
        return Err(Error::InvalidFoldCount { k, n });
    }
    let mut rng = SeedStream::new(seed).substream(Purpose::Folds, 0);
    let mut fold_index = vec![0; n];
    let mut position = 0;
    for group in [0u8, 1] {
        let mut members: Vec<usize> = (0..n).filter(|&i| dataset.treatment()[i] == group).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_index[i] = position % k;
            position += 1;
        }
    }
    Ok(FoldAssignment { fold_index, k })
}

/// `n` indices drawn uniformly with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}
