//! Target points and their on-disk format.
//!
//! Point files (`*.ftp.json`) are JSON documents:
//!
//! ```json
//! {
//!   "version": 1,
//!   "arch": {"layers": [2, 4, 3, 1], "activation": "sigmoid", "output_activation": "linear", "loss": "mse"},
//!   "points": [{
//!     "id": "tp1", "name": "init", "weights": ["0x1.8p-1", "-0x1.2p+2", ...],
//!     "losses": {"train": 1.42, "test": 1.51}, "l2_norm": 3.1,
//!     "provenance": {"kind": "random_init", "seed": 7, "range": 1.0},
//!     "created_at": 1700000000000
//!   }]
//! }
//! ```
//!
//! Weights are hexadecimal floating-point strings so a save/load cycle is
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::network::{Dataset, NetworkArch, WeightVector};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const FILE_SUFFIX: &str = ".ftp.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    RandomInit { seed: u64, range: f64 },
    Training { run_id: String, epoch: usize },
    ZeroVector,
    Loaded { original: Option<Box<Provenance>> },
}

/// A named weight vector under investigation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetPoint {
    pub id: String,
    pub name: String,
    pub weights: WeightVector,
    pub arch_fingerprint: String,
    pub train_loss: f64,
    pub test_loss: f64,
    pub l2_norm: f64,
    pub provenance: Provenance,
    /// Unix time in milliseconds.
    pub created_at: u64,
}

impl TargetPoint {
    /// Builds a point, evaluating its losses on the given datasets.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        arch: &NetworkArch,
        weights: WeightVector,
        train: &Dataset,
        test: &Dataset,
        provenance: Provenance,
        created_at: u64,
    ) -> Result<Self> {
        let train_loss = arch.loss(&weights, train)?;
        let test_loss = arch.loss(&weights, test)?;
        Ok(Self {
            id: id.into(),
            name: name.into(),
            l2_norm: weights.l2_norm(),
            weights,
            arch_fingerprint: arch.fingerprint(),
            train_loss,
            test_loss,
            provenance,
            created_at,
        })
    }

    /// Fails unless the point was made for `arch`.
    pub fn check_arch(&self, arch: &NetworkArch) -> Result<()> {
        if self.arch_fingerprint != arch.fingerprint() {
            return Err(Error::IncompatibleArch {
                expected: arch.to_string(),
                found: format!("fingerprint {}", self.arch_fingerprint),
            });
        }
        self.weights.matches(arch)
    }
}

#[derive(Serialize, Deserialize)]
struct Document {
    version: u32,
    arch: NetworkArch,
    points: Vec<StoredPoint>,
}

#[derive(Serialize, Deserialize)]
struct Losses {
    train: f64,
    test: f64,
}

#[derive(Serialize, Deserialize)]
struct StoredPoint {
    id: String,
    name: String,
    weights: Vec<HexF64>,
    losses: Losses,
    l2_norm: f64,
    provenance: Provenance,
    #[serde(default)]
    created_at: u64,
}

/// Serializes the points as a version-1 document. All points must belong to `arch`.
pub fn to_document(points: &[TargetPoint], arch: &NetworkArch) -> Result<String> {
    for p in points {
        p.check_arch(arch)?;
    }
    let doc = Document {
        version: FORMAT_VERSION,
        arch: arch.clone(),
        points: points
            .iter()
            .map(|p| StoredPoint {
                id: p.id.clone(),
                name: p.name.clone(),
                weights: p.weights.as_slice().iter().map(|&v| HexF64(v)).collect(),
                losses: Losses {
                    train: p.train_loss,
                    test: p.test_loss,
                },
                l2_norm: p.l2_norm,
                provenance: p.provenance.clone(),
                created_at: p.created_at,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc).expect("document serialization cannot fail"))
}

/// Parses a document and checks it against `arch`. Loaded points get
/// [`Provenance::Loaded`] wrapping their stored provenance.
pub fn from_document(text: &str, arch: &NetworkArch) -> Result<Vec<TargetPoint>> {
    let doc: Document = serde_json::from_str(text).map_err(|e| Error::Format {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if doc.version != FORMAT_VERSION {
        return Err(Error::Capability(format!(
            "point file version {} is not supported (expected {FORMAT_VERSION})",
            doc.version
        )));
    }
    if doc.arch != *arch {
        return Err(Error::IncompatibleArch {
            expected: arch.to_string(),
            found: doc.arch.to_string(),
        });
    }
    doc.points
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let weights = WeightVector::new(p.weights.into_iter().map(|h| h.0).collect())?;
            weights.matches(arch)?;
            let l2_norm = weights.l2_norm();
            if (l2_norm - p.l2_norm).abs() > 1e-9 * l2_norm.max(1.0) {
                return Err(Error::invalid(
                    "l2_norm",
                    format!(
                        "point {i} stores l2_norm {} but its weights have norm {l2_norm}",
                        p.l2_norm
                    ),
                ));
            }
            Ok(TargetPoint {
                id: p.id,
                name: p.name,
                weights,
                arch_fingerprint: arch.fingerprint(),
                train_loss: p.losses.train,
                test_loss: p.losses.test,
                l2_norm,
                provenance: Provenance::Loaded {
                    original: Some(Box::new(p.provenance)),
                },
                created_at: p.created_at,
            })
        })
        .collect()
}

pub fn save(points: &[TargetPoint], arch: &NetworkArch, path: impl AsRef<Path>) -> Result<()> {
    let text = to_document(points, arch)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>, arch: &NetworkArch) -> Result<Vec<TargetPoint>> {
    let text = fs::read_to_string(path)?;
    from_document(&text, arch)
}

/// `f64` carried as a C99-style hexadecimal float string (`%a`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HexF64(pub f64);

impl Serialize for HexF64 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_hex(self.0))
    }
}

impl<'de> Deserialize<'de> for HexF64 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_hex(&s)
            .map(HexF64)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid hex float `{s}`")))
    }
}

const MANTISSA_BITS: u32 = 52;
const MANTISSA_MASK: u64 = (1 << MANTISSA_BITS) - 1;

/// Formats a finite `f64` as `[-]0x1.<hex>p<exp>` (subnormals as `0x0.<hex>p-1022`).
pub fn format_hex(v: f64) -> String {
    assert!(v.is_finite(), "hex float of non-finite value");
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> MANTISSA_BITS) & 0x7ff) as i32;
    let mantissa = bits & MANTISSA_MASK;
    if biased == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if biased == 0 {
        (0, -1022)
    } else {
        (1, biased - 1023)
    };
    let digits = format!("{mantissa:013x}");
    let digits = digits.trim_end_matches('0');
    let frac = if digits.is_empty() {
        String::new()
    } else {
        format!(".{digits}")
    };
    format!("{sign}0x{lead}{frac}p{exp:+}")
}

/// Inverse of [`format_hex`]. Returns `None` for anything it would not emit.
pub fn parse_hex(s: &str) -> Option<f64> {
    let (negative, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let rest = rest.strip_prefix("0x")?;
    let (mant, exp) = rest.split_once('p')?;
    let exp: i32 = exp.parse().ok()?;
    let (lead, frac) = match mant.split_once('.') {
        Some((l, f)) if !f.is_empty() => (l, f),
        Some(_) => return None,
        None => (mant, ""),
    };
    if frac.len() > 13 || !frac.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    let mantissa = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()))
    };
    let magnitude = match lead {
        "1" if (-1022..=1023).contains(&exp) => ((exp + 1023) as u64) << MANTISSA_BITS | mantissa,
        "0" if mantissa == 0 && exp == 0 => 0,
        "0" if mantissa != 0 && exp == -1022 => mantissa,
        _ => return None,
    };
    let sign = if negative { 1u64 << 63 } else { 0 };
    Some(f64::from_bits(sign | magnitude))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, LossKind};
    use proptest::prelude::*;

    #[test]
    fn hex_examples() {
        assert_eq!(format_hex(1.0), "0x1p+0");
        assert_eq!(format_hex(3.0), "0x1.8p+1");
        assert_eq!(format_hex(-0.75), "-0x1.8p-1");
        assert_eq!(format_hex(0.0), "0x0p+0");
        assert_eq!(format_hex(-0.0), "-0x0p+0");
        assert_eq!(format_hex(f64::MIN_POSITIVE / 2.0), "0x0.8p-1022");
        assert_eq!(format_hex(f64::MAX), "0x1.fffffffffffffp+1023");
        assert_eq!(parse_hex("0x1.8p+1"), Some(3.0));
        assert_eq!(parse_hex("0x1.8p1"), Some(3.0));
        for bad in [
            "",
            "1.0",
            "0x",
            "0x1.p+0",
            "0x2p+0",
            "0x1.gp+0",
            "0x1p+1024",
            "0x0.1p+0",
        ] {
            assert_eq!(parse_hex(bad), None, "{bad}");
        }
    }

    proptest! {
        #[test]
        fn hex_round_trip(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = parse_hex(&format_hex(v)).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    fn arch() -> NetworkArch {
        NetworkArch::new(vec![2, 2, 1], Activation::Sigmoid, LossKind::Mse).unwrap()
    }

    fn point(weights: Vec<f64>) -> TargetPoint {
        let a = arch();
        let d = Dataset::new(vec![[0.5, 1.0]], vec![1.0]).unwrap();
        TargetPoint::new(
            "tp1",
            "p",
            &a,
            WeightVector::new(weights).unwrap(),
            &d,
            &d,
            Provenance::ZeroVector,
            5,
        )
        .unwrap()
    }

    #[test]
    fn document_round_trip() {
        let p = point(vec![
            0.1,
            -1e-300,
            3.0,
            1.0 / 3.0,
            0.0,
            -0.0,
            7.5,
            2.0,
            1e10,
        ]);
        let text = to_document(std::slice::from_ref(&p), &arch()).unwrap();
        assert!(text.contains("\"version\": 1"));
        let back = from_document(&text, &arch()).unwrap();
        assert_eq!(back.len(), 1);
        let bits = |w: &WeightVector| w.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back[0].weights), bits(&p.weights));
        assert_eq!(
            back[0].provenance,
            Provenance::Loaded {
                original: Some(Box::new(Provenance::ZeroVector))
            }
        );
    }

    #[test]
    fn rejects_other_architecture() {
        let p = point(vec![0.0; 9]);
        let text = to_document(&[p], &arch()).unwrap();
        let other = NetworkArch::new(vec![2, 3, 1], Activation::Sigmoid, LossKind::Mse).unwrap();
        match from_document(&text, &other).unwrap_err() {
            Error::IncompatibleArch { expected, found } => {
                assert!(expected.contains("[2,3,1]"));
                assert!(found.contains("[2,2,1]"));
            }
            e => panic!("unexpected {e:?}"),
        }
        let tanh = NetworkArch::new(vec![2, 2, 1], Activation::Tanh, LossKind::Mse).unwrap();
        assert!(matches!(
            from_document(&text, &tanh),
            Err(Error::IncompatibleArch { .. })
        ));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = from_document("{\n  \"version\": 1,\n  \"arch\": [\n", &arch()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 4, .. }), "{err:?}");
        let err = from_document("{\n  \"version\": 1,\n  \"arch\": x\n}", &arch()).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Format {
                    line: 3,
                    column: 11,
                    ..
                }
            ),
            "{err:?}"
        );
        let p = point(vec![0.0; 9]);
        let text = to_document(&[p], &arch())
            .unwrap()
            .replacen("0x0p+0", "0xzz", 1);
        assert!(matches!(
            from_document(&text, &arch()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn tampered_norm_rejected() {
        let p = point(vec![1.0; 9]);
        let text = to_document(&[p], &arch())
            .unwrap()
            .replace("\"l2_norm\": 3.0", "\"l2_norm\": 3.5");
        assert!(from_document(&text, &arch()).is_err());
    }

    #[test]
    fn version_checked() {
        let p = point(vec![1.0; 9]);
        let text = to_document(&[p], &arch())
            .unwrap()
            .replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(
            from_document(&text, &arch()),
            Err(Error::Capability(_))
        ));
    }
}
