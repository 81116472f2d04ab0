//! File formats: network JSON, dataset CSV, and JSON reports with fixed
//! 17-significant-digit floats. Outputs are written atomically.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use advcover::data::{Dataset, Sample};
use advcover::linalg::Matrix;
use advcover::network::{Activation, ActivationKind, Layer, Network};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

/// `d.dddddddddddddddde±x`: 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty JSON (two-space indent) whose floats go through [`fmt_f64`].
/// Non-finite floats become `null`.
struct FixedDigits<'a>(PrettyFormatter<'a>);

impl Formatter for FixedDigits<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt_f64(v).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serialized bytes, newline-terminated.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedDigits(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

/// Write via a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| anyhow!("cannot write {}: {}", path.display(), e.error))?;
    Ok(())
}

/// To `path` atomically, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn read_text(path: &Path, what: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {what} file {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    activation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
    #[serde(default)]
    lipschitz: Option<f64>,
}

fn activation_kind(name: &str, slope: Option<f64>) -> Result<ActivationKind> {
    let kind = match name {
        "relu" => ActivationKind::Relu,
        "tanh" => ActivationKind::Tanh,
        "identity" => ActivationKind::Identity,
        "leaky_relu" => ActivationKind::LeakyRelu {
            slope: slope.ok_or_else(|| anyhow!("leaky_relu needs a \"slope\""))?,
        },
        other => bail!("unknown activation {other:?} (expected relu, leaky_relu, tanh or identity)"),
    };
    if slope.is_some() && !matches!(kind, ActivationKind::LeakyRelu { .. }) {
        bail!("\"slope\" is only valid for leaky_relu");
    }
    Ok(kind)
}

pub fn parse_network(text: &str) -> Result<Network> {
    let file: NetworkFile = serde_json::from_str(text)?;
    let layers = file
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| -> Result<Layer> {
            let ctx = || format!("layer {}", i + 1);
            let weights = Matrix::from_rows(&l.weights).with_context(ctx)?;
            if weights.rows() == 0 || weights.cols() == 0 {
                return Err(anyhow!("weight matrix is empty")).with_context(ctx);
            }
            let kind = activation_kind(&l.activation, l.slope).with_context(ctx)?;
            let activation = match l.lipschitz {
                Some(rho) => Activation::with_lipschitz(kind, rho).with_context(ctx)?,
                None => Activation::new(kind),
            };
            Ok(Layer { weights, activation })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Network::new(layers)?)
}

pub fn load_network(path: &Path) -> Result<Network> {
    parse_network(&read_text(path, "network")?).with_context(|| format!("invalid network file {}", path.display()))
}

pub fn network_json(net: &Network) -> Result<Vec<u8>> {
    let file = NetworkFile {
        layers: net
            .layers()
            .iter()
            .map(|l| LayerFile {
                weights: l.weights.to_rows(),
                activation: l.activation.kind.name().to_string(),
                slope: match l.activation.kind {
                    ActivationKind::LeakyRelu { slope } => Some(slope),
                    _ => None,
                },
                lipschitz: Some(l.activation.lipschitz),
            })
            .collect(),
    };
    to_json(&file)
}

/// Comma-separated rows `x_1,…,x_d,label`. The first row is a header iff
/// any of its fields is not a number. Fields are trimmed; blank lines are
/// skipped.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut samples = Vec::new();
    let mut width = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if idx == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if record.len() < 2 {
            bail!("line {line}: need at least one feature and a label, got {} field(s)", record.len());
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => bail!("line {line}: expected {w} fields, got {}", record.len()),
            _ => {}
        }
        let last = record.len() - 1;
        let x = record
            .iter()
            .take(last)
            .enumerate()
            .map(|(c, f)| {
                let v: f64 = f
                    .parse()
                    .map_err(|_| anyhow!("line {line}, column {}: {f:?} is not a number", c + 1))?;
                if !v.is_finite() {
                    bail!("line {line}, column {}: value is not finite", c + 1);
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = &record[last];
        let y: usize = label
            .parse()
            .map_err(|_| anyhow!("line {line}, column {}: label {label:?} is not a nonnegative integer", last + 1))?;
        samples.push(Sample { x, y });
    }
    if samples.is_empty() {
        bail!("dataset has no rows");
    }
    Ok(Dataset::new(samples)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_text(path, "dataset")?).with_context(|| format!("invalid dataset file {}", path.display()))
}

/// Header `x1,…,xd,label`, then one row per sample, `\n` line endings.
pub fn dataset_csv(data: &Dataset) -> Vec<u8> {
    let mut out = String::new();
    let header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).chain(["label".to_string()]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for s in data.samples() {
        for v in &s.x {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        out.push_str(&s.y.to_string());
        out.push('\n');
    }
    out.into_bytes()
}
