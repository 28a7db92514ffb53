//! Dataset ingestion, standardization, ground-truth neighborhoods, neighbor
//! sampling, and the RBF kernel feature preprocessing.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;

/// Magic prefix of the raw-binary dataset format.
pub const DATASET_MAGIC: &[u8; 4] = b"SHDS";

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    dims: usize,
    values: Vec<f64>,
    /// Stats that were applied to produce this matrix, if any.
    pub standardization: Option<Standardizer>,
}

/// Per-dimension (mean, scale) pairs; `apply` maps x to (x - mean) / scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, dims: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || dims == 0 {
            return Err(Error::data("matrix must have at least one row and one dimension"));
        }
        if values.len() != rows * dims {
            return Err(Error::data(format!(
                "expected {} values for a {rows}x{dims} matrix, got {}",
                rows * dims,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::data("matrix contains non-finite values"));
        }
        Ok(DataMatrix { rows, dims, values, standardization: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map(|r| r.len()).unwrap_or(0);
        Self::new(rows.len(), dims, rows.iter().flatten().copied().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Euclidean distance between two rows.
    pub fn row_distance(&self, i: usize, j: usize) -> f64 {
        dist(self.row(i), self.row(j))
    }

    /// Selects a subset of rows (in the given order) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::data(format!("row index {i} out of range ({} rows)", self.rows)));
            }
            values.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(indices.len(), self.dims, values)?;
        out.standardization = self.standardization.clone();
        Ok(out)
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Relevant / irrelevant neighbor sets of one query, as sorted index vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryNeighborhood {
    pub query: usize,
    relevant: Vec<u32>,
    irrelevant: Vec<u32>,
}

impl QueryNeighborhood {
    pub fn new(query: usize, mut relevant: Vec<u32>, mut irrelevant: Vec<u32>) -> Self {
        relevant.sort_unstable();
        irrelevant.sort_unstable();
        debug_assert!(!relevant.contains(&(query as u32)));
        debug_assert!(!irrelevant.contains(&(query as u32)));
        debug_assert!(relevant.iter().all(|r| irrelevant.binary_search(r).is_err()));
        QueryNeighborhood { query, relevant, irrelevant }
    }

    pub fn relevant(&self) -> &[u32] {
        &self.relevant
    }

    pub fn irrelevant(&self) -> &[u32] {
        &self.irrelevant
    }

    pub fn is_relevant(&self, idx: u32) -> bool {
        self.relevant.binary_search(&idx).is_ok()
    }

    pub fn candidate_count(&self) -> usize {
        self.relevant.len() + self.irrelevant.len()
    }

    /// Both sides non-empty; required for training and for every measure.
    pub fn has_both_sides(&self) -> bool {
        !self.relevant.is_empty() && !self.irrelevant.is_empty()
    }
}

/// Loads a CSV of numeric fields. With `labels_last_column` the final field
/// of each row is parsed as an integer class label.
pub fn load_csv(path: &Path, labels_last_column: bool) -> Result<(DataMatrix, Option<Vec<i64>>)> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut dims: Option<usize> = None;
    let mut rows = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let want = *dims.get_or_insert(fields.len());
        if fields.len() != want {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {want} fields, got {}", fields.len()),
            });
        }
        let feature_fields = if labels_last_column { &fields[..fields.len() - 1] } else { &fields[..] };
        for f in feature_fields {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-numeric field {f:?}"),
            })?;
            values.push(v);
        }
        if labels_last_column {
            let f = fields[fields.len() - 1];
            let l: i64 = f.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-integer label {f:?}"),
            })?;
            labels.push(l);
        }
        rows += 1;
    }

    if rows == 0 {
        return Err(Error::Parse { line: 0, msg: "empty file".into() });
    }
    let dims = dims.unwrap() - usize::from(labels_last_column);
    if dims == 0 {
        return Err(Error::Parse { line: 1, msg: "no feature columns".into() });
    }
    let matrix = DataMatrix::new(rows, dims, values)?;
    Ok((matrix, if labels_last_column { Some(labels) } else { None }))
}

/// Loads the raw-binary dataset format: magic "SHDS", little-endian u32 rows,
/// u32 dims, then rows*dims little-endian f32 values, row-major.
pub fn load_raw(path: &Path) -> Result<DataMatrix> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|_| Error::Parse { line: 0, msg: "truncated header".into() })?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Parse { line: 0, msg: format!("bad magic {magic:?}, expected {DATASET_MAGIC:?}") });
    }
    let mut buf4 = [0u8; 4];
    reader.read_exact(&mut buf4).map_err(|_| Error::Parse { line: 0, msg: "truncated row count".into() })?;
    let rows = u32::from_le_bytes(buf4) as usize;
    reader.read_exact(&mut buf4).map_err(|_| Error::Parse { line: 0, msg: "truncated dim count".into() })?;
    let dims = u32::from_le_bytes(buf4) as usize;
    let mut values = Vec::with_capacity(rows * dims);
    for i in 0..rows * dims {
        reader.read_exact(&mut buf4).map_err(|_| Error::Parse {
            line: 0,
            msg: format!("truncated at value {i} of {}", rows * dims),
        })?;
        values.push(f32::from_le_bytes(buf4) as f64);
    }
    DataMatrix::new(rows, dims, values)
}

/// Writes the raw-binary dataset format. Values are stored as f32.
pub fn save_raw(data: &DataMatrix, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(data.rows() as u32).to_le_bytes())?;
    w.write_all(&(data.dims() as u32).to_le_bytes())?;
    for v in data.values() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a labels file: one integer per line.
pub fn load_labels(path: &Path) -> Result<Vec<i64>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: i64 = line.trim().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("non-integer label {line:?}"),
        })?;
        labels.push(l);
    }
    Ok(labels)
}

/// Fits per-dimension standardization on `data` (population denominator n,
/// constant dimensions clamped to scale 1) and returns the transformed matrix
/// together with the stats for applying to held-out data.
pub fn standardize(data: &DataMatrix) -> Result<(DataMatrix, Standardizer)> {
    if data.rows() < 2 {
        return Err(Error::data("standardization needs at least 2 rows"));
    }
    let n = data.rows() as f64;
    let d = data.dims();
    let mut mean = vec![0.0; d];
    for i in 0..data.rows() {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for i in 0..data.rows() {
        for (j, v) in data.row(i).iter().enumerate() {
            let c = v - mean[j];
            var[j] += c * c;
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|&v| {
            let s = (v / n).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let stats = Standardizer { mean, scale };
    let out = stats.apply(data)?;
    Ok((out, stats))
}

impl Standardizer {
    pub fn apply(&self, data: &DataMatrix) -> Result<DataMatrix> {
        if data.dims() != self.mean.len() {
            return Err(Error::DimMismatch(format!(
                "standardizer has {} dims, data has {}",
                self.mean.len(),
                data.dims()
            )));
        }
        let d = data.dims();
        let values: Vec<f64> = data
            .values()
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k % d]) / self.scale[k % d])
            .collect();
        let mut out = DataMatrix::new(data.rows(), d, values)?;
        out.standardization = Some(self.clone());
        Ok(out)
    }
}

/// Ground truth by label agreement: relevant are same-label rows, the query
/// itself excluded. A singleton class yields an empty relevant set; callers
/// check `has_both_sides`.
pub fn ground_truth_by_label(labels: &[i64], i: usize) -> QueryNeighborhood {
    let li = labels[i];
    let mut relevant = Vec::new();
    let mut irrelevant = Vec::new();
    for (j, &l) in labels.iter().enumerate() {
        if j == i {
            continue;
        }
        if l == li {
            relevant.push(j as u32);
        } else {
            irrelevant.push(j as u32);
        }
    }
    QueryNeighborhood::new(i, relevant, irrelevant)
}

/// Ground truth by distance percentile: the ceil(pct/100 * (rows-1)) nearest
/// rows to `i` are relevant, distance ties broken by ascending index.
pub fn ground_truth_by_percentile(data: &DataMatrix, i: usize, pct: f64) -> Result<QueryNeighborhood> {
    if data.rows() < 2 {
        return Err(Error::data("percentile ground truth needs at least 2 rows"));
    }
    if !(0.0 < pct && pct < 100.0) {
        return Err(Error::config(format!("percentile must be in (0, 100), got {pct}")));
    }
    let others = data.rows() - 1;
    let count = ((pct / 100.0) * others as f64).ceil() as usize;
    let count = count.clamp(1, others);
    let mut by_dist: Vec<(f64, u32)> = (0..data.rows())
        .filter(|&j| j != i)
        .map(|j| (data.row_distance(i, j), j as u32))
        .collect();
    by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let relevant: Vec<u32> = by_dist[..count].iter().map(|&(_, j)| j).collect();
    let irrelevant: Vec<u32> = by_dist[count..].iter().map(|&(_, j)| j).collect();
    Ok(QueryNeighborhood::new(i, relevant, irrelevant))
}

/// Ground truth of an external query against all rows of `db` (no
/// self-exclusion): used when queries are held out from the database.
pub fn ground_truth_by_percentile_external(
    db: &DataMatrix,
    query_row: &[f64],
    pct: f64,
) -> Result<QueryNeighborhood> {
    if !(0.0 < pct && pct < 100.0) {
        return Err(Error::config(format!("percentile must be in (0, 100), got {pct}")));
    }
    if query_row.len() != db.dims() {
        return Err(Error::DimMismatch(format!(
            "query has {} dims, database has {}",
            query_row.len(),
            db.dims()
        )));
    }
    let count = ((pct / 100.0) * db.rows() as f64).ceil() as usize;
    let count = count.clamp(1, db.rows());
    let mut by_dist: Vec<(f64, u32)> = (0..db.rows())
        .map(|j| (dist(query_row, db.row(j)), j as u32))
        .collect();
    by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let relevant: Vec<u32> = by_dist[..count].iter().map(|&(_, j)| j).collect();
    let irrelevant: Vec<u32> = by_dist[count..].iter().map(|&(_, j)| j).collect();
    // The query is not a database row here, so `query` is a sentinel.
    Ok(QueryNeighborhood::new(usize::MAX, relevant, irrelevant))
}

/// Uniform sample without replacement of up to `r` relevant and `ir`
/// irrelevant neighbors; a deterministic function of (full, r, ir, seed).
pub fn sample_neighborhood(
    full: &QueryNeighborhood,
    r: usize,
    ir: usize,
    seed: u64,
) -> Result<QueryNeighborhood> {
    if !full.has_both_sides() {
        return Err(Error::data(format!(
            "query {} has an empty neighbor side (relevant={}, irrelevant={})",
            full.query,
            full.relevant.len(),
            full.irrelevant.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |side: &[u32], count: usize, rng: &mut ChaCha8Rng| -> Vec<u32> {
        if side.len() <= count {
            return side.to_vec();
        }
        rand::seq::index::sample(rng, side.len(), count)
            .into_iter()
            .map(|k| side[k])
            .collect()
    };
    let relevant = pick(&full.relevant, r, &mut rng);
    let irrelevant = pick(&full.irrelevant, ir, &mut rng);
    Ok(QueryNeighborhood::new(full.query, relevant, irrelevant))
}

/// RBF kernel feature preprocessing: anchors are training rows, the output
/// feature a of row i is exp(-||x_i - s_a||^2 / (2 sigma^2)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMap {
    pub bandwidth: f64,
    /// Anchor vectors, in the same space as the data the map is applied to.
    pub anchors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct KernelMapConfig {
    pub anchor_count: usize,
    /// None selects the default rule: mean pairwise distance on a seeded
    /// sample of up to 1000 rows.
    pub bandwidth: Option<f64>,
    pub seed: u64,
}

impl Default for KernelMapConfig {
    fn default() -> Self {
        KernelMapConfig { anchor_count: 300, bandwidth: None, seed: 0 }
    }
}

/// Mean pairwise Euclidean distance over a seeded sample of up to 1000 rows.
pub fn default_bandwidth(data: &DataMatrix, seed: u64) -> f64 {
    let n = data.rows().min(1000);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = if data.rows() <= n {
        (0..data.rows()).collect()
    } else {
        rand::seq::index::sample(&mut rng, data.rows(), n).into_vec()
    };
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            total += data.row_distance(idx[a], idx[b]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        1.0
    } else {
        total / pairs as f64
    }
}

/// Fits a kernel map on training data: picks `anchor_count` anchor rows by
/// seed and resolves the bandwidth.
pub fn fit_kernel_map(data: &DataMatrix, cfg: &KernelMapConfig) -> Result<KernelMap> {
    if cfg.anchor_count == 0 || cfg.anchor_count > data.rows() {
        return Err(Error::config(format!(
            "anchor count {} out of range for {} rows",
            cfg.anchor_count,
            data.rows()
        )));
    }
    let bandwidth = match cfg.bandwidth {
        Some(b) if b > 0.0 => b,
        Some(b) => return Err(Error::config(format!("bandwidth must be positive, got {b}"))),
        None => default_bandwidth(data, cfg.seed),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(cfg.seed, 0x616e_6368));
    let mut indices: Vec<usize> = if cfg.anchor_count == data.rows() {
        (0..data.rows()).collect()
    } else {
        rand::seq::index::sample(&mut rng, data.rows(), cfg.anchor_count).into_vec()
    };
    indices.sort_unstable();
    let anchors = indices.iter().map(|&i| data.row(i).to_vec()).collect();
    Ok(KernelMap { bandwidth, anchors })
}

impl KernelMap {
    /// Applies the map: output dims = anchor count, entries in (0, 1].
    pub fn apply(&self, data: &DataMatrix) -> Result<DataMatrix> {
        let d = data.dims();
        if self.anchors.iter().any(|a| a.len() != d) {
            return Err(Error::DimMismatch(format!(
                "anchors have {} dims, data has {d}",
                self.anchors.first().map(|a| a.len()).unwrap_or(0)
            )));
        }
        if self.bandwidth <= 0.0 {
            return Err(Error::config(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        let denom = 2.0 * self.bandwidth * self.bandwidth;
        let rows = exec::map_indices(data.rows(), |i| {
            let x = data.row(i);
            self.anchors
                .iter()
                .map(|a| {
                    let d2: f64 = x.iter().zip(a).map(|(u, v)| (u - v) * (u - v)).sum();
                    (-d2 / denom).exp()
                })
                .collect::<Vec<f64>>()
        });
        DataMatrix::new(data.rows(), self.anchors.len(), rows.into_iter().flatten().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_parses_small_matrix() {
        let f = write_tmp("1.0,2.0\n3.0,4.0\n");
        let (m, labels) = load_csv(f.path(), false).unwrap();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.dims(), 2);
        assert_eq!(m.values(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(labels.is_none());
    }

    #[test]
    fn csv_rejects_ragged_row_with_line_number() {
        let f = write_tmp("1.0,2.0\n3.0,4.0,5.0\n");
        match load_csv(f.path(), false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_non_numeric_token() {
        let f = write_tmp("1.0,x\n");
        assert!(matches!(load_csv(f.path(), false), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_rejects_empty_file() {
        let f = write_tmp("");
        assert!(matches!(load_csv(f.path(), false), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_label_column() {
        let f = write_tmp("1.0,2.0,0\n3.0,4.0,1\n");
        let (m, labels) = load_csv(f.path(), true).unwrap();
        assert_eq!(m.dims(), 2);
        assert_eq!(labels.unwrap(), vec![0, 1]);
    }

    #[test]
    fn raw_roundtrip_is_exact_for_f32_values() {
        let m = DataMatrix::new(2, 3, vec![1.0, -2.5, 3.25, 0.0, 7.5, -0.125]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_raw(&m, f.path()).unwrap();
        let back = load_raw(f.path()).unwrap();
        assert_eq!(m.values(), back.values());
        assert_eq!((back.rows(), back.dims()), (2, 3));
    }

    #[test]
    fn standardize_hand_case() {
        let m = DataMatrix::new(2, 1, vec![0.0, 2.0]).unwrap();
        let (s, stats) = standardize(&m).unwrap();
        assert_eq!(s.values(), &[-1.0, 1.0]);
        assert_eq!(stats.mean, vec![1.0]);
        assert_eq!(stats.scale, vec![1.0]);
    }

    #[test]
    fn standardize_clamps_constant_column() {
        let m = DataMatrix::new(3, 1, vec![2.0, 2.0, 2.0]).unwrap();
        let (s, stats) = standardize(&m).unwrap();
        assert_eq!(s.values(), &[0.0, 0.0, 0.0]);
        assert_eq!(stats.scale, vec![1.0]);
    }

    #[test]
    fn standardize_stats_reproduce_output() {
        let m = DataMatrix::new(3, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 35.0]).unwrap();
        let (s, stats) = standardize(&m).unwrap();
        let again = stats.apply(&m).unwrap();
        assert_eq!(s.values(), again.values());
    }

    #[test]
    fn label_ground_truth_cases() {
        let gt = ground_truth_by_label(&[0, 0, 1], 0);
        assert_eq!(gt.relevant(), &[1]);
        assert_eq!(gt.irrelevant(), &[2]);

        let gt = ground_truth_by_label(&[0, 1, 2], 0);
        assert!(gt.relevant().is_empty());
        assert_eq!(gt.irrelevant(), &[1, 2]);
        assert!(!gt.has_both_sides());

        let gt = ground_truth_by_label(&[5, 5, 5, 5], 0);
        assert_eq!(gt.relevant(), &[1, 2, 3]);
        assert!(gt.irrelevant().is_empty());
        assert!(!gt.has_both_sides());
    }

    #[test]
    fn percentile_ground_truth_top_two_of_hundred() {
        // 101 rows: query at origin plus 100 others on a line.
        let mut rows = vec![vec![0.0]];
        for j in 1..=100 {
            rows.push(vec![j as f64]);
        }
        let m = DataMatrix::from_rows(&rows).unwrap();
        let gt = ground_truth_by_percentile(&m, 0, 2.0).unwrap();
        assert_eq!(gt.relevant(), &[1, 2]);
        assert_eq!(gt.irrelevant().len(), 98);
    }

    #[test]
    fn percentile_tie_picks_lower_index() {
        // rows 1 and 2 are equidistant from row 0; cutoff of 1.
        let m = DataMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![5.0, 0.0],
        ])
        .unwrap();
        let gt = ground_truth_by_percentile(&m, 0, 30.0).unwrap();
        assert_eq!(gt.relevant(), &[1]);
    }

    #[test]
    fn percentile_all_qualify_flags_empty_irrelevant() {
        let m = DataMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let gt = ground_truth_by_percentile(&m, 0, 99.9).unwrap();
        assert!(gt.irrelevant().is_empty());
        assert!(!gt.has_both_sides());
    }

    #[test]
    fn sampling_takes_all_of_undersized_side() {
        let full = QueryNeighborhood::new(0, (1..=30).collect(), (31..=200).collect());
        let s = sample_neighborhood(&full, 50, 50, 7).unwrap();
        assert_eq!(s.relevant().len(), 30);
        assert_eq!(s.irrelevant().len(), 50);
    }

    #[test]
    fn sampling_is_deterministic_and_contained() {
        let full = QueryNeighborhood::new(0, (1..=200).collect(), (201..=400).collect());
        let a = sample_neighborhood(&full, 50, 50, 7).unwrap();
        let b = sample_neighborhood(&full, 50, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.relevant().len(), 50);
        let mut distinct = a.relevant().to_vec();
        distinct.dedup();
        assert_eq!(distinct.len(), 50);
        assert!(a.relevant().iter().all(|r| full.relevant().contains(r)));
    }

    #[test]
    fn sampling_requires_both_sides() {
        let full = QueryNeighborhood::new(0, vec![], vec![1, 2]);
        assert!(sample_neighborhood(&full, 5, 5, 0).is_err());
    }

    #[test]
    fn kernel_map_self_anchor_and_dims() {
        let m = DataMatrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0], vec![6.0, 8.0]]).unwrap();
        let km = KernelMap { bandwidth: 2.0, anchors: vec![vec![0.0, 0.0], vec![3.0, 4.0]] };
        let out = km.apply(&m).unwrap();
        assert_eq!(out.dims(), 2);
        assert_eq!(out.row(0)[0], 1.0);
        assert_eq!(out.row(1)[1], 1.0);
        // Monotone decrease with distance to anchor 0: rows at distance 0, 5, 10.
        assert!(out.row(0)[0] > out.row(1)[0]);
        assert!(out.row(1)[0] > out.row(2)[0]);
    }

    #[test]
    fn kernel_map_with_300_anchors_gives_300_dims() {
        let rows: Vec<Vec<f64>> = (0..320).map(|i| vec![i as f64, (i * i % 17) as f64]).collect();
        let m = DataMatrix::from_rows(&rows).unwrap();
        let km = fit_kernel_map(&m, &KernelMapConfig::default()).unwrap();
        assert_eq!(km.anchors.len(), 300);
        let out = km.apply(&m).unwrap();
        assert_eq!(out.dims(), 300);
    }

    #[test]
    fn kernel_map_rejects_bad_bandwidth() {
        let m = DataMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let cfg = KernelMapConfig { anchor_count: 2, bandwidth: Some(0.0), seed: 0 };
        assert!(fit_kernel_map(&m, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn ground_truth_sets_are_disjoint_and_exclude_query(
            labels in proptest::collection::vec(0i64..4, 3..40),
            qfrac in 0.0f64..1.0,
        ) {
            let i = ((labels.len() - 1) as f64 * qfrac) as usize;
            let gt = ground_truth_by_label(&labels, i);
            prop_assert!(!gt.relevant().contains(&(i as u32)));
            prop_assert!(!gt.irrelevant().contains(&(i as u32)));
            for r in gt.relevant() {
                prop_assert!(gt.irrelevant().binary_search(r).is_err());
            }
            prop_assert_eq!(gt.relevant().len() + gt.irrelevant().len(), labels.len() - 1);
        }

        #[test]
        fn standardized_columns_have_zero_mean_unit_sd(
            rows in proptest::collection::vec(
                proptest::collection::vec(-100.0f64..100.0, 3), 2..30),
        ) {
            let m = DataMatrix::from_rows(&rows).unwrap();
            let (s, _) = standardize(&m).unwrap();
            let n = s.rows() as f64;
            for j in 0..s.dims() {
                let col: Vec<f64> = (0..s.rows()).map(|i| s.row(i)[j]).collect();
                let mean = col.iter().sum::<f64>() / n;
                let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() < 1e-9);
                // Constant columns are clamped to scale 1 and stay constant.
                prop_assert!(sd < 1e-9 || (sd - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn kernel_responses_in_unit_interval(
            rows in proptest::collection::vec(
                proptest::collection::vec(-5.0f64..5.0, 2), 2..20),
            bw in 0.1f64..10.0,
        ) {
            let m = DataMatrix::from_rows(&rows).unwrap();
            let km = KernelMap { bandwidth: bw, anchors: vec![rows[0].clone(), rows[1].clone()] };
            let out = km.apply(&m).unwrap();
            for (k, v) in out.values().iter().enumerate() {
                prop_assert!(*v >= 0.0 && *v <= 1.0);
                // Strictly positive unless exp underflows.
                let (i, a) = (k / out.dims(), k % out.dims());
                let d = dist(m.row(i), &km.anchors[a]);
                if d * d / (2.0 * bw * bw) < 700.0 {
                    prop_assert!(*v > 0.0);
                }
            }
            prop_assert_eq!(out.row(0)[0], 1.0);
        }
    }
}
