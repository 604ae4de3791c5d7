//! Labelled input vectors stored as headerless CSV: integer label first, then
//! the input values. Lines starting with `#` are comments.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array1;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub label: usize,
    pub input: Array1<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(samples: Vec<Sample<T>>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let n = first.input.len();
            for (i, s) in samples.iter().enumerate() {
                if s.input.len() != n {
                    return Err(Error::dim(format!("sample {i}"), n, s.input.len()));
                }
            }
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.input.len())
    }

    /// Whether every value lies in `[0, 1]`.
    pub fn is_unit_scaled(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.input.iter().all(|&v| v >= T::zero() && v <= T::one()))
    }

    pub fn from_reader<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let malformed = |line: u64, message: String| Error::Malformed {
            path: origin.to_path_buf(),
            message: format!("line {line}: {message}"),
        };
        let mut samples = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| Error::Malformed {
                path: origin.to_path_buf(),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let mut fields = record.iter();
            let label: usize = fields
                .next()
                .filter(|f| !f.is_empty())
                .ok_or_else(|| malformed(line, "empty row".into()))?
                .parse()
                .map_err(|e| malformed(line, format!("bad label: {e}")))?;
            let input = fields
                .map(|f| {
                    let v: f64 = f.parse().map_err(|e| malformed(line, format!("bad value {f:?}: {e}")))?;
                    if !v.is_finite() {
                        return Err(malformed(line, format!("non-finite value {f:?}")));
                    }
                    Ok(T::of(v))
                })
                .collect::<Result<Array1<T>>>()?;
            if input.is_empty() {
                return Err(malformed(line, "no input values".into()));
            }
            samples.push(Sample { label, input });
        }
        Self::new(samples).map_err(|e| Error::Malformed {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(file), path)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for s in &self.samples {
            let mut row = vec![s.label.to_string()];
            row.extend(s.input.iter().map(|v| format!("{}", v.to_f64_lossy())));
            w.write_record(&row).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(std::io::BufWriter::new(file))
    }

    /// Checks that every sample fits the network.
    pub fn check(&self, net: &Network<T>) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.input.len() != net.input_dim() {
                return Err(Error::dim(format!("sample {i} input"), net.input_dim(), s.input.len()));
            }
            if s.label >= net.output_dim() {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has label {} but the network has {} outputs",
                    s.label,
                    net.output_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Uniform `[0, 1]` inputs labelled by the network's own prediction.
pub fn uniform_labelled<T: Scalar, R: Rng + ?Sized>(net: &Network<T>, n: usize, rng: &mut R) -> Result<Dataset<T>> {
    let samples = (0..n)
        .map(|_| {
            let input = Array1::from_shape_fn(net.input_dim(), |_| T::of(rng.random_range(0.0..1.0)));
            let label = net.predict(input.view())?;
            Ok(Sample { label, input })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

/// Isotropic Gaussian blobs, one per class, with centers drawn in `[0.2, 0.8]`
/// and values clipped to `[0, 1]`.
pub fn gaussian_blobs<T: Scalar, R: Rng + ?Sized>(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    rng: &mut R,
) -> Result<Dataset<T>> {
    if classes == 0 || dim == 0 {
        return Err(Error::InvalidArgument("need at least one class and one input".into()));
    }
    let noise = Normal::new(0.0, spread).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let centers: Vec<Vec<f64>> =
        (0..classes).map(|_| (0..dim).map(|_| rng.random_range(0.2..0.8)).collect()).collect();
    let mut samples = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (label, c) in centers.iter().enumerate() {
            let input = c.iter().map(|&m| T::of((m + noise.sample(rng)).clamp(0.0, 1.0))).collect();
            samples.push(Sample { label, input });
        }
    }
    Dataset::new(samples)
}
