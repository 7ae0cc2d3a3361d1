//! Datasets: synthetic guided-clustering benchmarks, CSV ingestion with
//! Min-Max normalization, and seeded splitting.
//!
//! Normalization statistics are computed over the whole table before any
//! split, so the train, validation and test partitions share one scale.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_standard_normal, streams, Matrix, Rng};

/// Observed range of one raw column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        ColumnRange { min, max }
    }

    pub fn is_constant(&self) -> bool {
        self.max <= self.min
    }

    /// Maps `[min, max]` onto `[0, 1]`; a constant column maps to 0.5.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.is_constant() {
            0.5
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        if self.is_constant() {
            self.min
        } else {
            self.min + v * (self.max - self.min)
        }
    }

    /// Scale factor from normalized to raw units.
    pub fn width(&self) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            self.max - self.min
        }
    }
}

/// Normalized features `x`, guides `y`, optional ground-truth labels, and the
/// per-column ranges needed to get back to raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub labels: Option<Vec<usize>>,
    pub feature_names: Vec<String>,
    pub guide_names: Vec<String>,
    pub x_ranges: Vec<ColumnRange>,
    pub y_ranges: Vec<ColumnRange>,
}

fn normalize_columns(raw: &Matrix) -> (Matrix, Vec<ColumnRange>) {
    let ranges: Vec<ColumnRange> = (0..raw.cols())
        .map(|j| ColumnRange::of(raw.column(j)))
        .collect();
    let mut out = raw.clone();
    for i in 0..raw.rows() {
        for (v, r) in out.row_mut(i).iter_mut().zip(&ranges) {
            *v = r.normalize(*v);
        }
    }
    (out, ranges)
}

fn apply_ranges(m: &Matrix, ranges: &[ColumnRange], f: impl Fn(&ColumnRange, f64) -> f64) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        for (v, r) in out.row_mut(i).iter_mut().zip(ranges) {
            *v = f(r, *v);
        }
    }
    out
}

/// Normalize raw columns with previously recorded ranges.
pub fn normalize_with_ranges(raw: &Matrix, ranges: &[ColumnRange]) -> Result<Matrix> {
    if raw.cols() != ranges.len() {
        return Err(Error::DimensionMismatch {
            context: "columns vs normalization ranges",
            expected: ranges.len(),
            found: raw.cols(),
        });
    }
    Ok(apply_ranges(raw, ranges, ColumnRange::normalize))
}

impl Dataset {
    /// Build from raw columns, Min-Max normalizing each.
    pub fn from_raw(
        x_raw: &Matrix,
        y_raw: &Matrix,
        labels: Option<Vec<usize>>,
        feature_names: Vec<String>,
        guide_names: Vec<String>,
    ) -> Result<Self> {
        if x_raw.rows() != y_raw.rows() {
            return Err(Error::DimensionMismatch {
                context: "feature and guide row counts",
                expected: x_raw.rows(),
                found: y_raw.rows(),
            });
        }
        if feature_names.len() != x_raw.cols() || guide_names.len() != y_raw.cols() {
            return Err(Error::InvalidArgument("column names do not match column counts".into()));
        }
        if let Some(l) = &labels {
            if l.len() != x_raw.rows() {
                return Err(Error::DimensionMismatch {
                    context: "label count",
                    expected: x_raw.rows(),
                    found: l.len(),
                });
            }
        }
        let (x, x_ranges) = normalize_columns(x_raw);
        let (y, y_ranges) = normalize_columns(y_raw);
        Ok(Dataset {
            x,
            y,
            labels,
            feature_names,
            guide_names,
            x_ranges,
            y_ranges,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of distinct ground-truth classes, if labels are present.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn x_raw(&self) -> Matrix {
        apply_ranges(&self.x, &self.x_ranges, ColumnRange::denormalize)
    }

    pub fn y_raw(&self) -> Matrix {
        apply_ranges(&self.y, &self.y_ranges, ColumnRange::denormalize)
    }

    /// Normalize raw feature rows with this dataset's stored ranges.
    pub fn normalize_features(&self, x_raw: &Matrix) -> Matrix {
        apply_ranges(x_raw, &self.x_ranges, ColumnRange::normalize)
    }

    /// Rows `indices`, keeping the full-table normalization.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            feature_names: self.feature_names.clone(),
            guide_names: self.guide_names.clone(),
            x_ranges: self.x_ranges.clone(),
            y_ranges: self.y_ranges.clone(),
        }
    }

    /// Write raw (denormalized) values in the CSV dialect `load_csv` reads,
    /// with features first, then guides, then `label` if present.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.extend(self.guide_names.iter().map(String::as_str));
        if self.labels.is_some() {
            header.push("label");
        }
        let io_err = |e| Error::io(path, e);
        writeln!(w, "{}", header.join(",")).map_err(io_err)?;
        let (x, y) = (self.x_raw(), self.y_raw());
        for i in 0..self.len() {
            let mut cells: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
            cells.extend(y.row(i).iter().map(|v| v.to_string()));
            if let Some(l) = &self.labels {
                cells.push(l[i].to_string());
            }
            writeln!(w, "{}", cells.join(",")).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }
}

/// A parsed numeric table with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub values: Matrix,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Columns `names`, in that order.
    pub fn select(&self, names: &[String]) -> Result<Matrix> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(self.values.rows() * idx.len());
        for row in self.values.row_iter() {
            data.extend(idx.iter().map(|&j| row[j]));
        }
        Matrix::new(self.values.rows(), idx.len(), data)
    }
}

/// Read a headed, comma-separated, all-numeric CSV file.
pub fn read_table(path: &Path) -> Result<Table> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let columns: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                Error::NonNumericCell {
                    // 1-based data row, header excluded.
                    row: r + 1,
                    col: c,
                    column: columns[c].clone(),
                    value: cell.to_string(),
                }
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let values = Matrix::new(rows, columns.len(), data)?;
    Ok(Table { columns, values })
}

/// Minimum number of data rows accepted by [`load_csv`].
pub const MIN_ROWS: usize = 10;

/// Load a CSV: guide columns become `y`, the optional label column becomes
/// `labels` (distinct values mapped to `0..K` in ascending order), everything
/// else becomes `x`.
pub fn load_csv(path: &Path, guide_columns: &[String], label_column: Option<&str>) -> Result<Dataset> {
    let table = read_table(path)?;
    for g in guide_columns {
        table.column_index(g)?;
    }
    if let Some(l) = label_column {
        table.column_index(l)?;
    }
    if table.values.rows() < MIN_ROWS {
        return Err(Error::NotEnoughData(format!(
            "{} has {} data rows, at least {MIN_ROWS} required",
            path.display(),
            table.values.rows()
        )));
    }
    let feature_names: Vec<String> = table
        .columns
        .iter()
        .filter(|c| !guide_columns.contains(c) && Some(c.as_str()) != label_column)
        .cloned()
        .collect();
    if feature_names.is_empty() {
        return Err(Error::InvalidArgument("no feature columns left after removing guides".into()));
    }
    let x_raw = table.select(&feature_names)?;
    let y_raw = table.select(guide_columns)?;
    let labels = match label_column {
        Some(name) => Some(encode_labels(&table.values.column(table.column_index(name)?))),
        None => None,
    };
    Dataset::from_raw(&x_raw, &y_raw, labels, feature_names, guide_columns.to_vec())
}

/// Map arbitrary numeric labels to dense ids in ascending value order.
pub fn encode_labels(values: &[f64]) -> Vec<usize> {
    let mut distinct: BTreeMap<u64, usize> = BTreeMap::new();
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    for (id, v) in sorted.iter().enumerate() {
        distinct.insert(v.to_bits(), id);
    }
    values.iter().map(|v| distinct[&v.to_bits()]).collect()
}

/// Parameters of the synthetic guided-clustering benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub k_true: usize,
    pub n: usize,
    pub d_latent_true: usize,
    pub d_x: usize,
    pub d_y: usize,
    /// Pairwise distance between the latent cluster centers.
    pub cluster_separation: f64,
    pub distractor_dims: usize,
    /// Raw scale of the distractor features.
    pub distractor_scale: f64,
    pub y_noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            k_true: 3,
            n: 5000,
            d_latent_true: 2,
            d_x: 8,
            d_y: 3,
            cluster_separation: 5.0,
            distractor_dims: 4,
            distractor_scale: 10.0,
            y_noise_sd: 0.3,
            seed: 0,
        }
    }
}

/// Noise on the informative features.
const INFORMATIVE_NOISE_SD: f64 = 0.1;
/// Spread of distractor values around their nuisance-group center, relative
/// to `distractor_scale`.
const DISTRACTOR_WITHIN_SD: f64 = 0.25;
/// Amplitude of nuisance-group centers, relative to `distractor_scale`.
const DISTRACTOR_AMPLITUDE: f64 = 1.5;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.k_true < 2 {
            return fail(format!("k_true must be >= 2, got {}", self.k_true));
        }
        if self.d_latent_true + 1 < self.k_true {
            return fail(format!(
                "d_latent_true = {} cannot hold {} equidistant centers (need >= k_true - 1)",
                self.d_latent_true, self.k_true
            ));
        }
        if self.d_x < self.d_latent_true + self.distractor_dims {
            return fail(format!(
                "d_x = {} must be >= d_latent_true + distractor_dims = {}",
                self.d_x,
                self.d_latent_true + self.distractor_dims
            ));
        }
        if self.d_y == 0 || (self.d_y < self.k_true && (1usize << self.d_y.min(63)) < self.k_true) {
            return fail(format!(
                "d_y = {} is too small to give {} distinct guide signatures",
                self.d_y, self.k_true
            ));
        }
        if self.n < self.k_true {
            return fail(format!("n = {} is smaller than k_true", self.n));
        }
        if !(self.cluster_separation > 0.0) || self.distractor_scale < 0.0 || self.y_noise_sd < 0.0 {
            return fail("separation must be positive, scales non-negative".into());
        }
        Ok(())
    }

    pub fn informative_dims(&self) -> usize {
        self.d_x - self.distractor_dims
    }

    /// Noise-free guide value for each class, `k_true × d_y`, in raw units.
    /// Scaled one-hot codes when `d_y >= k_true`, scaled binary codes
    /// otherwise; distinct signatures are at least 2 apart.
    pub fn guide_signatures(&self) -> Matrix {
        let mut w = Matrix::zeros(self.k_true, self.d_y);
        for c in 0..self.k_true {
            if self.d_y >= self.k_true {
                w[(c, c)] = 2.0;
            } else {
                for b in 0..self.d_y {
                    if (c >> b) & 1 == 1 {
                        w[(c, b)] = 2.0;
                    }
                }
            }
        }
        w
    }
}

/// Vertices of a regular simplex with `k` vertices and the given pairwise
/// distance, expressed in `dim >= k - 1` coordinates.
fn regular_simplex(k: usize, dim: usize, distance: f64) -> Matrix {
    // Gram-Schmidt basis of the centered span of the standard basis of R^k.
    let centered: Vec<Vec<f64>> = (0..k)
        .map(|c| (0..k).map(|i| if i == c { 1.0 } else { 0.0 } - 1.0 / k as f64).collect())
        .collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in centered.iter().take(k - 1) {
        let mut u = v.clone();
        for b in &basis {
            let dot: f64 = u.iter().zip(b).map(|(a, c)| a * c).sum();
            u.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
        }
        let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        basis.push(u.iter().map(|a| a / norm).collect());
    }
    let scale = distance / std::f64::consts::SQRT_2;
    let mut out = Matrix::zeros(k, dim);
    for (c, v) in centered.iter().enumerate() {
        for (d, b) in basis.iter().enumerate() {
            out[(c, d)] = scale * v.iter().zip(b).map(|(a, e)| a * e).sum::<f64>();
        }
    }
    out
}

/// Synthetic dataset plus the generator's ground truth.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// Raw-unit guide signature of each class, `k_true × d_y`.
    pub guide_signatures: Matrix,
    /// Nuisance group of each row; independent of the labels.
    pub nuisance: Vec<usize>,
}

/// Draw a guided-clustering benchmark.
///
/// Each row has a class `c` and an independent nuisance group. The
/// informative features are a fixed random affine image of a latent point
/// drawn around the class center. The distractor features are large-scale
/// and carry only the nuisance grouping, so unsupervised methods that chase
/// raw variance find the nuisance groups. The guide `y` is the class
/// signature plus Gaussian noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed).derive(streams::DATA);
    let k = spec.k_true;
    let d_inf = spec.informative_dims();

    let centers = regular_simplex(k, spec.d_latent_true, spec.cluster_separation);
    let mut mixing = sample_standard_normal(&mut rng, d_inf, spec.d_latent_true);
    for i in 0..d_inf {
        let row = mixing.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    let offset = sample_standard_normal(&mut rng, 1, d_inf).into_vec();
    let phases: Vec<f64> = (0..spec.distractor_dims)
        .map(|_| std::f64::consts::TAU * rng.uniform())
        .collect();
    let signatures = spec.guide_signatures();

    let labels: Vec<usize> = (0..spec.n).map(|_| rng.below(k)).collect();
    let nuisance: Vec<usize> = (0..spec.n).map(|_| rng.below(k)).collect();
    let latent_noise = sample_standard_normal(&mut rng, spec.n, spec.d_latent_true);
    let feature_noise = sample_standard_normal(&mut rng, spec.n, d_inf);
    let distractor_noise = sample_standard_normal(&mut rng, spec.n, spec.distractor_dims);
    let guide_noise = sample_standard_normal(&mut rng, spec.n, spec.d_y);

    let mut x_raw = Matrix::zeros(spec.n, spec.d_x);
    let mut y_raw = Matrix::zeros(spec.n, spec.d_y);
    for i in 0..spec.n {
        let c = labels[i];
        let u: Vec<f64> = (0..spec.d_latent_true)
            .map(|d| centers[(c, d)] + latent_noise[(i, d)])
            .collect();
        for f in 0..d_inf {
            let proj: f64 = mixing.row(f).iter().zip(&u).map(|(a, b)| a * b).sum();
            x_raw[(i, f)] = proj + offset[f] + INFORMATIVE_NOISE_SD * feature_noise[(i, f)];
        }
        let angle = std::f64::consts::TAU * nuisance[i] as f64 / k as f64;
        for (f, phase) in phases.iter().enumerate() {
            let center = DISTRACTOR_AMPLITUDE * (angle + phase).cos();
            x_raw[(i, d_inf + f)] =
                spec.distractor_scale * (center + DISTRACTOR_WITHIN_SD * distractor_noise[(i, f)]);
        }
        for g in 0..spec.d_y {
            y_raw[(i, g)] = signatures[(c, g)] + spec.y_noise_sd * guide_noise[(i, g)];
        }
    }

    let mut feature_names: Vec<String> = (0..d_inf).map(|f| format!("x{f}")).collect();
    feature_names.extend((0..spec.distractor_dims).map(|f| format!("distractor{f}")));
    let guide_names = (0..spec.d_y).map(|g| format!("y{g}")).collect();
    let dataset = Dataset::from_raw(&x_raw, &y_raw, Some(labels), feature_names, guide_names)?;
    Ok(Synthetic {
        dataset,
        guide_signatures: signatures,
        nuisance,
    })
}

/// Row indices of a three-way split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Minimum labelled size at which the shuffle is stratified.
pub const STRATIFY_MIN_ROWS: usize = 500;

/// Seeded shuffle then contiguous cut into train/val/test. Validation and
/// test sizes are `floor(n·f)`, train takes the remainder. With labels and
/// at least [`STRATIFY_MIN_ROWS`] rows the shuffle interleaves classes so
/// every contiguous block keeps the class proportions.
pub fn split_indices(
    n: usize,
    labels: Option<&[usize]>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitIndices> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let n_val = (n as f64 * fv + 1e-9).floor() as usize;
    let n_test = (n as f64 * fs + 1e-9).floor() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::NotEnoughData(format!(
            "split of {n} rows leaves an empty part ({n_train}/{n_val}/{n_test})"
        )));
    }
    let mut rng = Rng::new(seed).derive(streams::SPLIT);
    let order: Vec<usize> = match labels {
        Some(labels) if n >= STRATIFY_MIN_ROWS => {
            let k = labels.iter().copied().max().unwrap_or(0) + 1;
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, &l) in labels.iter().enumerate() {
                by_class[l].push(i);
            }
            let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(n);
            for members in &mut by_class {
                rng.shuffle(members);
                let size = members.len() as f64;
                for (pos, &i) in members.iter().enumerate() {
                    keyed.push(((pos as f64 + rng.uniform()) / size, i));
                }
            }
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
            keyed.into_iter().map(|(_, i)| i).collect()
        }
        _ => {
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            order
        }
    };
    Ok(SplitIndices {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

/// [`split_indices`] applied to a dataset.
pub fn split(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset, SplitIndices)> {
    let idx = split_indices(dataset.len(), dataset.labels.as_deref(), fractions, seed)?;
    Ok((
        dataset.subset(&idx.train),
        dataset.subset(&idx.val),
        dataset.subset(&idx.test),
        idx,
    ))
}
