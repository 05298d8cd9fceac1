//! File formats: dataset CSV, parameter JSON, and atomic output.
//!
//! Every real written by this module uses 17 significant digits (`{:.16e}`), which
//! round-trips any `f64` exactly.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::LabeledDataset;
use crate::model::{ActivationKind, Architecture, NetworkParams};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

/// A real that serializes as a JSON number, or `null` when not finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_none()
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Real(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN)))
    }
}

impl From<f64> for Real {
    fn from(v: f64) -> Self {
        Real(v)
    }
}

pub fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Pretty JSON formatter that writes floats with 17 significant digits.
struct Fixed17<'a>(serde_json::ser::PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl serde_json::ser::Formatter for Fixed17<'_> {
    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }

    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }
}

/// Pretty-printed JSON with 17-significant-digit reals and a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Writes `contents` to a sibling temporary file, syncs it, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("output path {} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(contents)?;
        file.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetMode {
    Regression,
    Classification,
}

fn parse_header(line: &str) -> Result<(usize, usize, DatasetMode)> {
    let loc = "line 1";
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(loc, "expected header \"# d=<d> m=<m> mode=<regression|classification>\""))?;
    let (mut d, mut m, mut mode) = (None, None, None);
    for field in body.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::parse(loc, format!("header field \"{field}\" is not key=value")))?;
        let count = |v: &str| {
            v.parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| Error::parse(loc, format!("header field {key} must be a positive integer, got \"{v}\"")))
        };
        match key {
            "d" => d = Some(count(value)?),
            "m" => m = Some(count(value)?),
            "mode" => {
                mode = Some(match value {
                    "regression" => DatasetMode::Regression,
                    "classification" => DatasetMode::Classification,
                    other => return Err(Error::parse(loc, format!("unknown mode \"{other}\""))),
                })
            }
            other => return Err(Error::parse(loc, format!("unknown header field \"{other}\""))),
        }
    }
    let missing = |k: &str| Error::parse(loc, format!("header is missing {k}"));
    Ok((d.ok_or_else(|| missing("d"))?, m.ok_or_else(|| missing("m"))?, mode.ok_or_else(|| missing("mode"))?))
}

/// Parses the dataset CSV. Class indices in the file are 1-based.
pub fn parse_dataset(text: &str) -> Result<LabeledDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse("line 1", "empty dataset"))?;
    let (d, m, mode) = parse_header(header)?;
    let width = match mode {
        DatasetMode::Regression => d + m,
        DatasetMode::Classification => d + 1,
    };
    let mut x = Vec::new();
    let mut targets = Vec::new();
    let mut classes = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(Error::parse(
                format!("line {lineno}"),
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let number = |col: usize| -> Result<f64> {
            let v: f64 = fields[col].parse().map_err(|_| {
                Error::parse(
                    format!("line {lineno}, field {}", col + 1),
                    format!("\"{}\" is not a number", fields[col]),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(format!("line {lineno}, field {}", col + 1), "value is not finite"));
            }
            Ok(v)
        };
        for col in 0..d {
            x.push(number(col)?);
        }
        match mode {
            DatasetMode::Regression => {
                for col in d..width {
                    targets.push(number(col)?);
                }
            }
            DatasetMode::Classification => {
                let c = fields[d]
                    .parse::<usize>()
                    .ok()
                    .filter(|c| (1..=m).contains(c))
                    .ok_or_else(|| {
                        Error::parse(
                            format!("line {lineno}, field {}", d + 1),
                            format!("class \"{}\" is not an integer in [1, {m}]", fields[d]),
                        )
                    })?;
                classes.push(c - 1);
            }
        }
    }
    let n = x.len() / d;
    if n == 0 {
        return Err(Error::parse("end of file", "dataset has no samples"));
    }
    let x = Matrix::from_row_major(n, d, x)?;
    match mode {
        DatasetMode::Regression => LabeledDataset::regression(x, Matrix::from_row_major(n, m, targets)?),
        DatasetMode::Classification => LabeledDataset::classification(x, classes, m),
    }
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn format_dataset(data: &LabeledDataset) -> String {
    let (d, m) = (data.input_dim(), data.output_dim());
    let mode = if data.classes().is_some() { "classification" } else { "regression" };
    let mut out = format!("# d={d} m={m} mode={mode}\n");
    for i in 0..data.len() {
        let mut fields: Vec<String> = data.x().row(i).iter().map(|v| format_real(*v)).collect();
        match data.classes() {
            Some(c) => fields.push((c[i] + 1).to_string()),
            None => fields.extend(data.y().row(i).iter().map(|v| format_real(*v))),
        }
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDocument {
    widths: Vec<usize>,
    activation: ActivationKind,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

pub fn params_to_json(params: &NetworkParams) -> Result<String> {
    to_json(&ParamsDocument {
        widths: params.arch.widths.clone(),
        activation: params.arch.activation,
        weights: params.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
        biases: params.biases.clone(),
    })
}

pub fn params_from_json(text: &str) -> Result<NetworkParams> {
    let doc: ParamsDocument = serde_json::from_str(text)?;
    let arch = Architecture::new(doc.widths, doc.activation)?;
    if doc.weights.len() != arch.depth() {
        return Err(Error::parse(
            "weights",
            format!("expected {} layers, found {}", arch.depth(), doc.weights.len()),
        ));
    }
    let weights = doc
        .weights
        .into_iter()
        .enumerate()
        .map(|(l, w)| {
            let (r, c) = (arch.widths[l], arch.widths[l + 1]);
            if w.len() != r * c {
                return Err(Error::parse(
                    format!("weights[{l}]"),
                    format!("expected {r}x{c} = {} entries, found {}", r * c, w.len()),
                ));
            }
            Matrix::from_row_major(r, c, w)
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkParams::new(arch, weights, doc.biases)
}

pub fn read_params(path: &Path) -> Result<NetworkParams> {
    params_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_use_seventeen_significant_digits() {
        assert_eq!(format_real(0.1), "1.0000000000000001e-1");
        let json = to_json(&vec![Real(0.5), Real(f64::NAN), Real(-3.0)]).unwrap();
        assert!(json.contains("5.0000000000000000e-1"));
        assert!(json.contains("null"));
        assert!(json.contains("-3.0000000000000000e0"));
        let back: Vec<Real> = serde_json::from_str(&json).unwrap();
        assert_eq!(back[0], Real(0.5));
        assert!(back[1].0.is_nan());
    }

    #[test]
    fn float_round_trip_is_exact() {
        let values = [std::f64::consts::PI, 1e-300, -2.2250738585072014e-308, 123456789.123456789, f64::MAX];
        let json = to_json(&values.to_vec()).unwrap();
        let back: Vec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, values);
    }

    #[test]
    fn regression_dataset_round_trip() {
        let text = "# d=2 m=1 mode=regression\n0.0, 1.0, 0.5\n1.0,0.0,0.25\n\n";
        let data = parse_dataset(text).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.y().get(1, 0), 0.25);
        let again = parse_dataset(&format_dataset(&data)).unwrap();
        assert_eq!(again, data);
    }

    #[test]
    fn classification_dataset_uses_one_based_labels() {
        let text = "# mode=classification d=1 m=2\n0.0,1\n1.0,2\n";
        let data = parse_dataset(text).unwrap();
        assert_eq!(data.classes().unwrap(), &[0, 1]);
        assert_eq!(data.y().row(0), &[1.0, -1.0]);
        assert_eq!(parse_dataset(&format_dataset(&data)).unwrap(), data);
    }

    #[test]
    fn parse_errors_name_the_line_and_field() {
        let err = parse_dataset("# d=1 m=1 mode=regression\n0.0,1.0\n2.0,oops\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("field 2"), "{msg}");
        let err = parse_dataset("# d=1 m=2 mode=classification\n0.0,3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let err = parse_dataset("# d=1 m=1 mode=regression\n0.0\n").unwrap_err();
        assert!(err.to_string().contains("expected 2 fields"));
        assert!(parse_dataset("d=1 m=1 mode=regression\n").is_err());
        assert!(parse_dataset("# d=1 m=1 mode=ranking\n").is_err());
        assert!(parse_dataset("# d=1 m=1\n").is_err());
    }

    #[test]
    fn params_round_trip() {
        use rand::SeedableRng;
        let arch = Architecture::new(vec![2, 3, 1], ActivationKind::softplus(2.0).unwrap()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut p = NetworkParams::random_init(&arch, 1.0, &mut rng);
        p.biases[0] = vec![0.1, -0.2, 0.3];
        let json = params_to_json(&p).unwrap();
        assert!(json.contains("\"widths\""));
        assert_eq!(params_from_json(&json).unwrap(), p);
        let bad = json.replace("\"widths\"", "\"width\"");
        assert!(params_from_json(&bad).is_err());
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
