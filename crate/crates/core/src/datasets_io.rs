//! Dataset ingestion, quantization to the encodable integer range, synthetic
//! blob generation and point-file persistence.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::granular_ball::{Label, LabeledPoint};

/// A column addressed by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl From<&str> for Column {
    fn from(s: &str) -> Self {
        match s.parse() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_string()),
        }
    }
}

impl std::fmt::Display for Column {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Column::Index(i) => write!(f, "#{i}"),
            Column::Name(n) => f.write_str(n),
        }
    }
}

/// Where the label and features live in a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub label_column: Column,
    /// `None` selects every column except the label.
    pub feature_columns: Option<Vec<Column>>,
    pub has_header: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            label_column: Column::Name("label".into()),
            feature_columns: None,
            has_header: true,
        }
    }
}

/// Unquantized record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub features: Vec<f64>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawDataset {
    pub feature_names: Vec<String>,
    pub records: Vec<RawRecord>,
    /// Original label strings by id; empty when labels were integers.
    pub label_names: Vec<String>,
}

impl RawDataset {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn resolve(column: &Column, headers: Option<&[String]>, width: usize) -> Option<usize> {
    match column {
        Column::Index(i) => (*i < width).then_some(*i),
        Column::Name(n) => headers?.iter().position(|h| h == n),
    }
}

/// Reads a comma-separated file with decimal features.
///
/// Labels are taken as integers when every label parses as one; otherwise
/// the distinct label strings are numbered in sorted order.
pub fn load_csv(path: impl AsRef<Path>, spec: &DatasetSpec) -> Result<RawDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_csv(file, spec, &path.display().to_string())
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    spec: &DatasetSpec,
    source: &str,
) -> Result<RawDataset> {
    let data_err = |line: u64, column: String, message: String| Error::Data {
        path: source.to_string(),
        line,
        column,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(spec.has_header)
        .flexible(true)
        .from_reader(reader);
    let headers: Option<Vec<String>> = if spec.has_header {
        Some(
            rdr.headers()?
                .iter()
                .map(|h| h.trim().to_string())
                .collect(),
        )
    } else {
        None
    };

    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            data_err(line, String::new(), e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        rows.push((line, row));
    }

    let width = headers
        .as_ref()
        .map(Vec::len)
        .or_else(|| rows.first().map(|(_, r)| r.len()))
        .unwrap_or(0);
    let label_at = resolve(&spec.label_column, headers.as_deref(), width)
        .ok_or_else(|| data_err(1, spec.label_column.to_string(), "unknown column".into()))?;
    let feature_at: Vec<usize> = match &spec.feature_columns {
        Some(cols) => cols
            .iter()
            .map(|c| {
                resolve(c, headers.as_deref(), width)
                    .ok_or_else(|| data_err(1, c.to_string(), "unknown column".into()))
            })
            .collect::<Result<_>>()?,
        None => (0..width).filter(|&i| i != label_at).collect(),
    };
    if feature_at.is_empty() {
        return Err(data_err(1, String::new(), "no feature columns".into()));
    }
    if feature_at.contains(&label_at) {
        return Err(data_err(
            1,
            spec.label_column.to_string(),
            "label column is also a feature column".into(),
        ));
    }
    let name_of = |i: usize| {
        headers
            .as_ref()
            .and_then(|h| h.get(i).cloned())
            .unwrap_or_else(|| format!("#{i}"))
    };

    let mut features = Vec::with_capacity(rows.len());
    let mut raw_labels = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        if row.len() != width {
            return Err(data_err(
                *line,
                String::new(),
                format!("expected {width} fields, found {}", row.len()),
            ));
        }
        let values = feature_at
            .iter()
            .map(|&i| {
                let field = row[i].trim();
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(data_err(
                        *line,
                        name_of(i),
                        format!("non-numeric feature value {field:?}"),
                    )),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        features.push(values);
        raw_labels.push(row[label_at].trim().to_string());
    }

    let numeric: Option<Vec<Label>> = raw_labels.iter().map(|l| l.parse().ok()).collect();
    let (labels, label_names) = match numeric {
        Some(labels) => (labels, Vec::new()),
        None => {
            let names: Vec<String> = raw_labels
                .iter()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let labels = raw_labels
                .iter()
                .map(|l| names.binary_search(l).unwrap() as Label)
                .collect();
            (labels, names)
        }
    };

    Ok(RawDataset {
        feature_names: feature_at.iter().map(|&i| name_of(i)).collect(),
        records: features
            .into_iter()
            .zip(labels)
            .map(|(features, label)| RawRecord { features, label })
            .collect(),
        label_names,
    })
}

/// Writes a raw dataset as CSV with a `label` column last.
pub fn write_csv<W: Write>(writer: W, data: &RawDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = data.feature_names.clone();
    header.push("label".into());
    w.write_record(&header)?;
    for r in &data.records {
        let mut fields: Vec<String> = r.features.iter().map(|v| v.to_string()).collect();
        fields.push(match data.label_names.get(r.label as usize) {
            Some(name) => name.clone(),
            None => r.label.to_string(),
        });
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// Value range of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub min: f64,
    pub max: f64,
}

/// Maps real features onto `[0, 2^bits - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    pub bits: u32,
    pub bounds: Vec<FeatureBounds>,
}

/// Bounds source for [`quantize_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum Bounds {
    /// Per-feature min and max of the data being quantized.
    Auto,
    Explicit(Vec<FeatureBounds>),
}

impl Quantizer {
    pub fn explicit(bits: u32, bounds: Vec<FeatureBounds>) -> Result<Self> {
        crate::quantum_sim::EncodingParams::new(bits, bounds.len())?;
        for (feature, b) in bounds.iter().enumerate() {
            if b.min.partial_cmp(&b.max) != Some(std::cmp::Ordering::Less) {
                return Err(Error::InvalidBounds {
                    feature,
                    min: b.min,
                    max: b.max,
                });
            }
        }
        Ok(Self { bits, bounds })
    }

    /// Bounds taken from the data; constant features keep `min == max`.
    pub fn fit(records: &[RawRecord], bits: u32) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyDataset)?;
        crate::quantum_sim::EncodingParams::new(bits, first.features.len())?;
        let mut bounds: Vec<FeatureBounds> = first
            .features
            .iter()
            .map(|&v| FeatureBounds { min: v, max: v })
            .collect();
        for r in records {
            if r.features.len() != bounds.len() {
                return Err(Error::DimensionMismatch {
                    expected: bounds.len(),
                    got: r.features.len(),
                });
            }
            for (b, &v) in bounds.iter_mut().zip(&r.features) {
                b.min = b.min.min(v);
                b.max = b.max.max(v);
            }
        }
        Ok(Self { bits, bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn max_level(&self) -> u32 {
        ((1u64 << self.bits) - 1) as u32
    }

    /// Quantized level of `value` for `feature` and whether it was clamped.
    pub fn quantize_value(&self, feature: usize, value: f64) -> (u32, bool) {
        let b = self.bounds[feature];
        if b.max <= b.min {
            return (0, false);
        }
        let top = f64::from(self.max_level());
        let level = ((value - b.min) / (b.max - b.min) * top).round();
        if level < 0.0 {
            (0, true)
        } else if level > top {
            (self.max_level(), true)
        } else {
            (level as u32, value < b.min || value > b.max)
        }
    }

    /// Quantizes a feature vector, returning the levels and the clamp count.
    pub fn quantize(&self, features: &[f64]) -> Result<(Vec<u32>, usize)> {
        if features.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: features.len(),
            });
        }
        let mut clamped = 0;
        let levels = features
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (q, c) = self.quantize_value(i, v);
                clamped += usize::from(c);
                q
            })
            .collect();
        Ok((levels, clamped))
    }
}

/// Output of [`quantize_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub points: Vec<LabeledPoint>,
    pub quantizer: Quantizer,
    /// Feature values that fell outside the bounds and were clamped.
    pub clamped: usize,
}

pub fn quantize_dataset(records: &[RawRecord], bits: u32, bounds: Bounds) -> Result<Quantized> {
    let quantizer = match bounds {
        Bounds::Auto => Quantizer::fit(records, bits)?,
        Bounds::Explicit(b) => Quantizer::explicit(bits, b)?,
    };
    let mut clamped = 0;
    let points = records
        .iter()
        .map(|r| {
            let (features, c) = quantizer.quantize(&r.features)?;
            clamped += c;
            Ok(LabeledPoint::new(features, r.label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Quantized {
        points,
        quantizer,
        clamped,
    })
}

/// Gaussian class clusters for tests and benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n_per_class: usize,
    pub classes: usize,
    pub dim: usize,
    /// Distance between consecutive class centers.
    pub separation: f64,
    /// Per-axis standard deviation.
    pub spread: f64,
    pub seed: u64,
}

/// Class `c` is centered at `c * separation / sqrt(dim)` on every axis, so
/// consecutive centers are `separation` apart. Records are shuffled so any
/// prefix mixes classes.
pub fn make_blobs(spec: &BlobSpec) -> Result<RawDataset> {
    if spec.n_per_class == 0 || spec.classes == 0 || spec.dim == 0 {
        return Err(Error::InvalidParameter(
            "blob counts and dimension must be positive".into(),
        ));
    }
    if !(spec.separation.is_finite() && spec.separation >= 0.0)
        || !(spec.spread.is_finite() && spec.spread >= 0.0)
    {
        return Err(Error::InvalidParameter(
            "separation and spread must be finite and non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.spread).expect("spread validated");
    let axis_step = spec.separation / (spec.dim as f64).sqrt();
    let mut records = Vec::with_capacity(spec.n_per_class * spec.classes);
    for class in 0..spec.classes {
        let center = class as f64 * axis_step;
        for _ in 0..spec.n_per_class {
            records.push(RawRecord {
                features: (0..spec.dim)
                    .map(|_| center + noise.sample(&mut rng))
                    .collect(),
                label: class as Label,
            });
        }
    }
    records.shuffle(&mut rng);
    Ok(RawDataset {
        feature_names: (0..spec.dim).map(|i| format!("f{i}")).collect(),
        records,
        label_names: Vec::new(),
    })
}

/// Shuffled split; the second part holds `round(test_fraction * n)` items.
pub fn train_test_split<T: Clone>(items: &[T], test_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((items.len() as f64) * test_fraction.clamp(0.0, 1.0)).round() as usize;
    let (test, train) = order.split_at(n_test);
    (
        train.iter().map(|&i| items[i].clone()).collect(),
        test.iter().map(|&i| items[i].clone()).collect(),
    )
}

pub const POINTS_FORMAT: &str = "gbqknn-points";

/// JSON header line of a point file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointsHeader {
    pub format: String,
    pub version: u32,
    /// Feature column names followed by `label`.
    pub columns: Vec<String>,
    pub bits: u32,
    pub bounds: Vec<FeatureBounds>,
    #[serde(default)]
    pub label_names: Vec<String>,
}

impl PointsHeader {
    pub fn new(feature_names: &[String], quantizer: &Quantizer, label_names: &[String]) -> Self {
        let mut columns = feature_names.to_vec();
        columns.push("label".into());
        Self {
            format: POINTS_FORMAT.into(),
            version: 1,
            columns,
            bits: quantizer.bits,
            bounds: quantizer.bounds.clone(),
            label_names: label_names.to_vec(),
        }
    }
}

/// Writes a JSON header line, then one `f0,f1,...,label` line per point.
pub fn write_points<W: Write>(
    mut w: W,
    header: &PointsHeader,
    points: &[LabeledPoint],
) -> Result<()> {
    serde_json::to_writer(&mut w, header)?;
    writeln!(w)?;
    for p in points {
        let mut line = String::new();
        for v in &p.features {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&p.label.to_string());
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_points<R: BufRead>(
    reader: R,
    source: &str,
) -> Result<(PointsHeader, Vec<LabeledPoint>)> {
    let err = |line: u64, message: String| Error::Data {
        path: source.into(),
        line,
        column: String::new(),
        message,
    };
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| err(1, "missing header".into()))??;
    let header: PointsHeader =
        serde_json::from_str(&first).map_err(|e| err(1, format!("bad header: {e}")))?;
    if header.format != POINTS_FORMAT {
        return Err(err(1, format!("unexpected format {:?}", header.format)));
    }
    let dim = header.columns.len().saturating_sub(1);
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i as u64 + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(err(
                n,
                format!("expected {} fields, found {}", dim + 1, fields.len()),
            ));
        }
        let values = fields
            .iter()
            .map(|f| f.trim().parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(n, format!("bad integer: {e}")))?;
        let (label, features) = values.split_last().expect("at least one field");
        let point = LabeledPoint::new(features.to_vec(), *label);
        point
            .validate(dim, header.bits)
            .map_err(|e| err(n, e.to_string()))?;
        points.push(point);
    }
    Ok((header, points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(features: &[f64], label: Label) -> RawRecord {
        RawRecord {
            features: features.to_vec(),
            label,
        }
    }

    #[test]
    fn csv_header_only() {
        let d = read_csv("a,b,label\n".as_bytes(), &DatasetSpec::default(), "t").unwrap();
        assert!(d.is_empty());
        assert_eq!(d.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn csv_three_rows() {
        let text = "x,label,y\n1.5,0,2\n-3,1,4e1\n0,0,0\n";
        let d = read_csv(text.as_bytes(), &DatasetSpec::default(), "t").unwrap();
        assert_eq!(
            d.records,
            vec![
                rec(&[1.5, 2.0], 0),
                rec(&[-3.0, 40.0], 1),
                rec(&[0.0, 0.0], 0)
            ]
        );
        assert_eq!(d.feature_names, vec!["x", "y"]);
    }

    #[test]
    fn csv_text_feature_names_row_and_column() {
        let text = "x,y,label\n1,2,0\n3,oops,1\n";
        match read_csv(text.as_bytes(), &DatasetSpec::default(), "data.csv") {
            Err(Error::Data { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "y");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_unknown_column() {
        let spec = DatasetSpec {
            label_column: "class".into(),
            ..DatasetSpec::default()
        };
        assert!(matches!(
            read_csv("x,label\n1,0\n".as_bytes(), &spec, "t"),
            Err(Error::Data { .. })
        ));
    }

    #[test]
    fn csv_string_labels_and_positional_columns() {
        let spec = DatasetSpec {
            label_column: Column::Index(0),
            feature_columns: Some(vec![Column::Index(2)]),
            has_header: false,
        };
        let d = read_csv(
            "setosa,9,1\nvirginica,9,2\nsetosa,9,3\n".as_bytes(),
            &spec,
            "t",
        )
        .unwrap();
        assert_eq!(d.label_names, vec!["setosa", "virginica"]);
        assert_eq!(
            d.records.iter().map(|r| r.label).collect::<Vec<_>>(),
            vec![0, 1, 0]
        );
        assert_eq!(d.records[2].features, vec![3.0]);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_csv("/nonexistent/file.csv", &DatasetSpec::default()),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn quantize_examples() {
        let q = Quantizer::explicit(2, vec![FeatureBounds { min: 0.0, max: 3.0 }]).unwrap();
        assert_eq!(q.quantize_value(0, 0.0), (0, false));
        assert_eq!(q.quantize_value(0, 3.0), (3, false));
        assert_eq!(q.quantize_value(0, 2.0), (2, false));
        assert_eq!(q.quantize_value(0, 7.0), (3, true));
        assert_eq!(q.quantize_value(0, -1.0), (0, true));

        let out = quantize_dataset(
            &[rec(&[5.0], 0), rec(&[-2.0], 1)],
            2,
            Bounds::Explicit(vec![FeatureBounds { min: 0.0, max: 3.0 }]),
        )
        .unwrap();
        assert_eq!(out.clamped, 2);
        assert!(matches!(
            Quantizer::explicit(2, vec![FeatureBounds { min: 1.0, max: 1.0 }]),
            Err(Error::InvalidBounds { .. })
        ));
    }

    #[test]
    fn auto_bounds_and_constant_features() {
        let out = quantize_dataset(
            &[
                rec(&[1.0, 7.0], 0),
                rec(&[3.0, 7.0], 1),
                rec(&[2.0, 7.0], 0),
            ],
            4,
            Bounds::Auto,
        )
        .unwrap();
        let levels: Vec<_> = out.points.iter().map(|p| p.features.clone()).collect();
        assert_eq!(levels, vec![vec![0, 0], vec![15, 0], vec![8, 0]]);
        assert_eq!(out.clamped, 0);
    }

    #[test]
    fn blobs_basic() {
        let spec = BlobSpec {
            n_per_class: 10,
            classes: 1,
            dim: 3,
            separation: 5.0,
            spread: 1.0,
            seed: 9,
        };
        let d = make_blobs(&spec).unwrap();
        assert_eq!(d.len(), 10);
        assert!(d
            .records
            .iter()
            .all(|r| r.label == 0 && r.features.len() == 3));
        assert_eq!(make_blobs(&spec).unwrap(), d);
        assert!(make_blobs(&BlobSpec { classes: 0, ..spec }).is_err());
        assert!(make_blobs(&BlobSpec {
            spread: -1.0,
            ..spec
        })
        .is_err());
        let overlap = make_blobs(&BlobSpec {
            classes: 3,
            separation: 0.0,
            ..spec
        })
        .unwrap();
        assert_eq!(overlap.len(), 30);
    }

    #[test]
    fn points_file_round_trip() {
        let q = Quantizer::explicit(3, vec![FeatureBounds { min: 0.0, max: 1.0 }; 2]).unwrap();
        let header = PointsHeader::new(&["a".into(), "b".into()], &q, &[]);
        let points = vec![
            LabeledPoint::new(vec![1, 7], 0),
            LabeledPoint::new(vec![0, 3], 2),
        ];
        let mut buf = Vec::new();
        write_points(&mut buf, &header, &points).unwrap();
        let (h, p) = read_points(buf.as_slice(), "t").unwrap();
        assert_eq!((h, p), (header, points));

        let bad = b"{\"format\":\"gbqknn-points\",\"version\":1,\"columns\":[\"a\",\"label\"],\"bits\":2,\"bounds\":[]}\n9,0\n";
        assert!(matches!(
            read_points(&bad[..], "t"),
            Err(Error::Data { line: 2, .. })
        ));
    }

    #[test]
    fn split_sizes() {
        let items: Vec<u32> = (0..100).collect();
        let (train, test) = train_test_split(&items, 0.25, 1);
        assert_eq!((train.len(), test.len()), (75, 25));
        let mut all: Vec<_> = train.iter().chain(&test).copied().collect();
        all.sort();
        assert_eq!(all, items);
    }
}
