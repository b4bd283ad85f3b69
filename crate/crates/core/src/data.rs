//! Episode data model, embedding datasets and the synthetic Gaussian source.
//!
//! A [`Task`] is everything the classifier is allowed to see. Ground-truth
//! query labels and the mapping back to dataset classes live one level up in
//! an [`Episode`], so the classifier path cannot read them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{spd_factorize, Matrix, Vector, DEFAULT_JITTER};

const BINARY_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledEmbedding {
    pub z: Vector,
    pub y: usize,
}

impl LabeledEmbedding {
    pub fn new(z: impl Into<Vector>, y: usize) -> Self {
        LabeledEmbedding { z: z.into(), y }
    }
}

/// Labelled support set plus unlabelled query set, with task-local class ids
/// `0..way`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Task {
    support: Vec<LabeledEmbedding>,
    query: Vec<Vector>,
    dim: usize,
    way: usize,
}

impl Task {
    /// Validates that every class `0..way` has at least one support example
    /// and that all embeddings share one finite dimension. An empty query set
    /// is allowed.
    pub fn new(support: Vec<LabeledEmbedding>, query: Vec<Vector>, way: usize) -> Result<Self> {
        if way == 0 {
            return Err(Error::InvalidTask("way must be at least 1".into()));
        }
        let dim = match support.first() {
            Some(first) => first.z.dim(),
            None => return Err(Error::InvalidTask("support set is empty".into())),
        };
        if dim == 0 {
            return Err(Error::InvalidTask("embeddings have zero dimension".into()));
        }
        let mut seen = vec![false; way];
        for s in &support {
            if s.y >= way {
                return Err(Error::InvalidTask(format!(
                    "support label {} out of range for way {way}",
                    s.y
                )));
            }
            seen[s.y] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidTask(format!(
                "class {missing} has no support examples"
            )));
        }
        for z in support.iter().map(|s| &s.z).chain(&query) {
            if z.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: z.dim(),
                });
            }
            if !z.is_finite() {
                return Err(Error::NonFiniteInput);
            }
        }
        Ok(Task {
            support,
            query,
            dim,
            way,
        })
    }

    pub fn support(&self) -> &[LabeledEmbedding] {
        &self.support
    }

    pub fn query(&self) -> &[Vector] {
        &self.query
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn way(&self) -> usize {
        self.way
    }

    pub fn n_support(&self) -> usize {
        self.support.len()
    }

    pub fn n_query(&self) -> usize {
        self.query.len()
    }

    /// Support examples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.way];
        for s in &self.support {
            counts[s.y] += 1;
        }
        counts
    }

    /// Same support, query set replaced.
    pub fn with_query(&self, query: Vec<Vector>) -> Result<Task> {
        Task::new(self.support.clone(), query, self.way)
    }

    /// Applies `f` to every support and query embedding.
    pub fn map_embeddings(&self, mut f: impl FnMut(&Vector) -> Vector) -> Result<Task> {
        let support = self
            .support
            .iter()
            .map(|s| LabeledEmbedding { z: f(&s.z), y: s.y })
            .collect();
        let query = self.query.iter().map(&mut f).collect();
        Task::new(support, query, self.way)
    }
}

/// Identifies one embedding instance of a dataset: `(class index, row)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EmbeddingRef {
    pub class: usize,
    pub row: usize,
}

/// A sampled task together with its scoring metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Episode {
    pub index: u64,
    pub task: Task,
    /// Ground-truth task-local labels aligned with `task.query()`.
    pub truth: Vec<usize>,
    /// Dataset class name of every task-local class id.
    pub class_names: Vec<String>,
    pub support_refs: Vec<EmbeddingRef>,
    pub query_refs: Vec<EmbeddingRef>,
}

impl Episode {
    pub fn new(
        index: u64,
        task: Task,
        truth: Vec<usize>,
        class_names: Vec<String>,
        support_refs: Vec<EmbeddingRef>,
        query_refs: Vec<EmbeddingRef>,
    ) -> Result<Self> {
        if truth.len() != task.n_query() {
            return Err(Error::InvalidTask(format!(
                "{} truth labels for {} query examples",
                truth.len(),
                task.n_query()
            )));
        }
        if truth.iter().any(|&y| y >= task.way()) {
            return Err(Error::InvalidTask("truth label out of range".into()));
        }
        if class_names.len() != task.way() {
            return Err(Error::InvalidTask("class name count differs from way".into()));
        }
        if support_refs.len() != task.n_support() || query_refs.len() != task.n_query() {
            return Err(Error::InvalidTask("embedding refs misaligned".into()));
        }
        Ok(Episode {
            index,
            task,
            truth,
            class_names,
            support_refs,
            query_refs,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    Csv,
    PackedBinary,
}

impl DatasetFormat {
    /// `.csv` is CSV; `.bin` and `.emb` are packed binary.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Ok(DatasetFormat::Csv),
            Some(e) if e.eq_ignore_ascii_case("bin") || e.eq_ignore_ascii_case("emb") => {
                Ok(DatasetFormat::PackedBinary)
            }
            _ => Err(Error::InvalidConfig(format!(
                "cannot infer dataset format from {}",
                path.display()
            ))),
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DatasetFormat::Csv),
            "bin" | "packed-binary" => Ok(DatasetFormat::PackedBinary),
            other => Err(Error::InvalidConfig(format!("unknown dataset format `{other}`"))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetFormat::Csv => f.write_str("csv"),
            DatasetFormat::PackedBinary => f.write_str("packed-binary"),
        }
    }
}

/// Embeddings grouped by class, classes ordered by name.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    names: Vec<String>,
    rows: Vec<Vec<Vector>>,
    dim: usize,
}

impl EmbeddingDataset {
    pub fn new(classes: BTreeMap<String, Vec<Vector>>) -> Result<Self> {
        let mut dim = None;
        let mut names = Vec::with_capacity(classes.len());
        let mut rows = Vec::with_capacity(classes.len());
        for (name, embeddings) in classes {
            if embeddings.is_empty() {
                return Err(Error::EmptyClass(name));
            }
            for z in &embeddings {
                let d = *dim.get_or_insert(z.dim());
                if z.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: z.dim(),
                    });
                }
                if !z.is_finite() {
                    return Err(Error::NonFiniteInput);
                }
            }
            names.push(name);
            rows.push(embeddings);
        }
        match dim {
            Some(d) if d > 0 => Ok(EmbeddingDataset { names, rows, dim: d }),
            _ => Err(Error::EmptyInput),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.names.len()
    }

    pub fn class_name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn class_rows(&self, class: usize) -> &[Vector] {
        &self.rows[class]
    }

    pub fn classes(&self) -> impl Iterator<Item = (&str, &[Vector])> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.rows.iter().map(Vec::as_slice))
    }

    pub fn get(&self, name: &str) -> Option<&[Vector]> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
            .map(|i| self.rows[i].as_slice())
    }

    pub fn n_embeddings(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<EmbeddingDataset> {
    match format {
        DatasetFormat::Csv => {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            parse_csv(BufReader::new(file)).map_err(|e| match e {
                Error::Io { source, .. } => Error::io(path, source),
                other => other,
            })
        }
        DatasetFormat::PackedBinary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_binary(&bytes)
        }
    }
}

pub fn write_dataset(ds: &EmbeddingDataset, path: &Path, format: DatasetFormat) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        DatasetFormat::Csv => write_csv(ds, &mut w),
        DatasetFormat::PackedBinary => write_binary(ds, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn parse_csv(reader: impl BufRead) -> Result<EmbeddingDataset> {
    let mut classes: BTreeMap<String, Vec<Vector>> = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<csv>", e))?;
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            location: format!("line {line_no}"),
            message,
        };
        let mut fields = line.split(',');
        let name = fields.next().unwrap_or_default().trim();
        if name.is_empty() {
            return Err(parse_err("empty class name".into()));
        }
        let values = fields
            .enumerate()
            .map(|(col, f)| {
                let f = f.trim();
                match f.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(parse_err(format!("bad value `{f}` in column {}", col + 2))),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(parse_err("row has no features".into()));
        }
        let d = *dim.get_or_insert(values.len());
        if values.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: values.len(),
            });
        }
        classes.entry(name.to_string()).or_default().push(values.into());
    }
    EmbeddingDataset::new(classes)
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.error(format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8, "feature value")?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn error(&self, message: String) -> Error {
        Error::Parse {
            location: format!("offset {}", self.pos),
            message,
        }
    }
}

fn parse_binary(bytes: &[u8]) -> Result<EmbeddingDataset> {
    let mut cur = ByteCursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != BINARY_MAGIC {
        return Err(Error::Parse {
            location: "offset 0".into(),
            message: "bad magic, expected EMB1".into(),
        });
    }
    let dim = cur.u32("dimension")? as usize;
    let n_classes = cur.u32("class count")?;
    let mut classes = BTreeMap::new();
    for _ in 0..n_classes {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "class name")?)
            .map_err(|_| cur.error("class name is not UTF-8".into()))?
            .to_string();
        let n_rows = cur.u32("row count")? as usize;
        if n_rows == 0 {
            return Err(Error::EmptyClass(name));
        }
        let mut rows = Vec::with_capacity(n_rows.min(1 << 16));
        for _ in 0..n_rows {
            let row = (0..dim).map(|_| cur.f64()).collect::<Result<Vec<f64>>>()?;
            rows.push(Vector::from(row));
        }
        if classes.insert(name.clone(), rows).is_some() {
            return Err(cur.error(format!("duplicate class `{name}`")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(cur.error("trailing bytes after last class".into()));
    }
    EmbeddingDataset::new(classes)
}

fn write_csv(ds: &EmbeddingDataset, w: &mut impl Write) -> std::io::Result<()> {
    for (name, rows) in ds.classes() {
        for z in rows {
            w.write_all(name.as_bytes())?;
            for v in z.iter() {
                write!(w, ",{v:.16e}")?;
            }
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn write_binary(ds: &EmbeddingDataset, w: &mut impl Write) -> std::io::Result<()> {
    let u32_of = |n: usize| {
        u32::try_from(n).map_err(|_| std::io::Error::other("count does not fit in u32"))
    };
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&u32_of(ds.dim())?.to_le_bytes())?;
    w.write_all(&u32_of(ds.n_classes())?.to_le_bytes())?;
    for (name, rows) in ds.classes() {
        w.write_all(&u32_of(name.len())?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&u32_of(rows.len())?.to_le_bytes())?;
        for z in rows {
            for v in z.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Parameters of the synthetic Gaussian class-mixture embedding source.
///
/// Class `c` draws from `N(μ_c, Σ_c)` with `μ_c ~ mean_scale · N(0, I)` and
/// `Σ_c = shared_scale · Σ₀ + perturbation · D_c`, where `Σ₀` is a random SPD
/// matrix common to all classes and `D_c` a random diagonal with entries in
/// `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub mean_scale: f64,
    pub shared_scale: f64,
    pub perturbation: f64,
    pub per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.dim == 0 || self.per_class == 0 {
            return Err(Error::InvalidSpec("counts must be at least 1".into()));
        }
        for (name, v) in [
            ("mean_scale", self.mean_scale),
            ("shared_scale", self.shared_scale),
            ("perturbation", self.perturbation),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidSpec(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// A synthetic dataset with the parameters it was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticDraw {
    pub dataset: EmbeddingDataset,
    pub means: Vec<Vector>,
    pub covariances: Vec<Matrix>,
}

/// Class names are zero-padded so name order equals generation order.
pub fn synthetic_class_name(c: usize) -> String {
    format!("class{c:05}")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<EmbeddingDataset> {
    draw_synthetic(spec).map(|d| d.dataset)
}

pub fn draw_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDraw> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Σ₀ = A Aᵀ / d + 0.1 I
    let a = Matrix::from_row_major(d, (0..d * d).map(|_| StandardNormal.sample(&mut rng)).collect())?;
    let mut shared = a.matmul(&a.transpose());
    shared.scale(1.0 / d as f64);
    shared.add_diagonal(0.1);
    let shared_factor = spd_factorize(&shared, &DEFAULT_JITTER)?;
    let shared_sd = spec.shared_scale.sqrt();
    let pert_sd = spec.perturbation.sqrt();

    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let mut classes = BTreeMap::new();
    let mut means = Vec::with_capacity(spec.n_classes);
    let mut covariances = Vec::with_capacity(spec.n_classes);
    for c in 0..spec.n_classes {
        let mean: Vector = (0..d)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                spec.mean_scale * v
            })
            .collect::<Vec<f64>>()
            .into();
        let diag: Vec<f64> = (0..d).map(|_| unit.sample(&mut rng)).collect();
        let diag_sd: Vec<f64> = diag.iter().map(|v| pert_sd * v.sqrt()).collect();

        let mut rows = Vec::with_capacity(spec.per_class);
        for _ in 0..spec.per_class {
            let e1: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let e2: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let corr = shared_factor.lower().mul_vec(&e1);
            let mut z = mean.clone();
            z.axpy(shared_sd, &corr);
            for ((zi, sd), e) in z.as_mut_slice().iter_mut().zip(&diag_sd).zip(&e2) {
                *zi += sd * e;
            }
            rows.push(z);
        }

        let mut cov = shared.clone();
        cov.scale(spec.shared_scale);
        cov.add_scaled(spec.perturbation, &Matrix::from_diagonal(&diag));
        classes.insert(synthetic_class_name(c), rows);
        means.push(mean);
        covariances.push(cov);
    }
    Ok(SyntheticDraw {
        dataset: EmbeddingDataset::new(classes)?,
        means,
        covariances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn le(y: usize, z: &[f64]) -> LabeledEmbedding {
        LabeledEmbedding::new(z.to_vec(), y)
    }

    #[test]
    fn task_validation() {
        let ok = Task::new(vec![le(0, &[0.0]), le(1, &[1.0])], vec![vec![0.5].into()], 2);
        assert!(ok.is_ok());
        let missing = Task::new(vec![le(0, &[0.0])], vec![], 2);
        assert!(matches!(missing, Err(Error::InvalidTask(_))));
        let out_of_range = Task::new(vec![le(0, &[0.0]), le(2, &[1.0])], vec![], 2);
        assert!(matches!(out_of_range, Err(Error::InvalidTask(_))));
        let bad_dim = Task::new(vec![le(0, &[0.0])], vec![vec![0.0, 1.0].into()], 1);
        assert!(matches!(bad_dim, Err(Error::DimensionMismatch { .. })));
        let nan = Task::new(vec![le(0, &[f64::NAN])], vec![], 1);
        assert!(matches!(nan, Err(Error::NonFiniteInput)));
    }

    #[test]
    fn csv_minimal() {
        let ds = parse_csv("classA,0.1,0.2\nclassA,0.3,0.4\n".as_bytes()).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.n_classes(), 1);
        assert_eq!(ds.get("classA").unwrap().len(), 2);
        assert_eq!(ds.get("classA").unwrap()[1].as_slice(), &[0.3, 0.4]);
    }

    #[test]
    fn csv_ragged_rows() {
        let err = parse_csv("a,1,2\nb,1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn csv_reports_line() {
        let err = parse_csv("a,1,2\n\na,1,x\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "line 3"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_csv("".as_bytes()), Err(Error::EmptyInput)));
        assert!(matches!(parse_csv("a\n".as_bytes()), Err(Error::Parse { .. })));
        assert!(matches!(parse_csv("a,inf\n".as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn binary_rejects_empty_class_and_bad_magic() {
        let mut bytes = b"EMB1".to_vec();
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(b"x");
        bytes.extend(0u32.to_le_bytes());
        assert!(matches!(parse_binary(&bytes), Err(Error::EmptyClass(n)) if n == "x"));
        assert!(matches!(parse_binary(b"EMB2"), Err(Error::Parse { .. })));
        assert!(matches!(parse_binary(b"EMB1\x02\x00"), Err(Error::Parse { .. })));
    }

    #[test]
    fn format_inference() {
        assert_eq!(
            DatasetFormat::from_path(Path::new("a/b.csv")).unwrap(),
            DatasetFormat::Csv
        );
        assert_eq!(
            DatasetFormat::from_path(Path::new("b.emb")).unwrap(),
            DatasetFormat::PackedBinary
        );
        assert!(DatasetFormat::from_path(Path::new("b.txt")).is_err());
    }

    #[test]
    fn synthetic_degenerate_covariance() {
        let spec = SyntheticSpec {
            n_classes: 3,
            dim: 4,
            mean_scale: 2.0,
            shared_scale: 0.0,
            perturbation: 0.0,
            per_class: 5,
            seed: 11,
        };
        let draw = draw_synthetic(&spec).unwrap();
        for (c, (_, rows)) in draw.dataset.classes().enumerate() {
            for z in rows {
                assert_eq!(z, &draw.means[c]);
            }
        }
    }

    #[test]
    fn synthetic_deterministic() {
        let spec = SyntheticSpec {
            n_classes: 4,
            dim: 3,
            mean_scale: 1.0,
            shared_scale: 1.0,
            perturbation: 0.3,
            per_class: 7,
            seed: 5,
        };
        assert_eq!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&spec).unwrap()
        );
        let other = SyntheticSpec { seed: 6, ..spec.clone() };
        assert_ne!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn synthetic_invalid() {
        let spec = SyntheticSpec {
            n_classes: 0,
            dim: 3,
            mean_scale: 1.0,
            shared_scale: 1.0,
            perturbation: 0.0,
            per_class: 7,
            seed: 5,
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
        let spec = SyntheticSpec {
            n_classes: 1,
            mean_scale: -1.0,
            ..spec
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
    }
}
