//! Problem manifests: a JSON description plus raw little-endian f64 blobs.
//!
//! Vectors and matrices are either written inline or stored in a blob file
//! next to the manifest. Matrices are row-major. Blobs carry an optional
//! sha256 that is checked on load.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};
use superq_core::{BoxConstraint, ConstraintBlock, Objective, Problem, RowMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub objective: ObjectiveSpec,
    pub blocks: Vec<BlockSpec>,
    pub bounds: BoundsSpec,
    /// A feasible point, when the generator knows one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Data>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Linear { c: Data },
    DiagQuadratic { cdiag: Data, c: Data },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub m: usize,
    pub k: usize,
    /// `m x n`, row-major.
    pub a: Data,
    pub b: Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub lower: Bounds,
    pub upper: Bounds,
}

/// Inline numbers or a reference to a blob file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Data {
    Inline(Vec<f64>),
    Blob(BlobRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobRef {
    /// Relative paths resolve against the manifest's directory.
    pub file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

/// One bound for every coordinate, or one per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bounds {
    All(Bound),
    Each(Vec<Bound>),
}

/// A finite number or `"inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound(pub f64);

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            v if v == f64::INFINITY => s.serialize_str("inf"),
            v if v == f64::NEG_INFINITY => s.serialize_str("-inf"),
            v => s.serialize_f64(v),
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Visit;
        impl de::Visitor<'_> for Visit {
            type Value = Bound;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number, \"inf\" or \"-inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Bound, E> {
                Ok(Bound(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Bound, E> {
                Ok(Bound(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Bound, E> {
                Ok(Bound(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Bound, E> {
                match v {
                    "inf" | "+inf" => Ok(Bound(f64::INFINITY)),
                    "-inf" => Ok(Bound(f64::NEG_INFINITY)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(Visit)
    }
}

impl Bounds {
    fn expand(&self, n: usize, field: &str) -> Result<Vec<f64>> {
        match self {
            Bounds::All(b) => Ok(vec![b.0; n]),
            Bounds::Each(v) if v.len() == n => Ok(v.iter().map(|b| b.0).collect()),
            Bounds::Each(v) => bail!("{field}: expected {n} entries, got {}", v.len()),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        bail!("{} bytes is not a whole number of f64 values", bytes.len());
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Writes `values` to `dir/name` and returns a reference carrying its hash.
pub fn write_blob(dir: &Path, name: &str, values: &[f64]) -> Result<BlobRef> {
    let bytes = encode_f64(values);
    let path = dir.join(name);
    fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(BlobRef {
        file: PathBuf::from(name),
        sha256: Some(sha256_hex(&bytes)),
    })
}

impl Data {
    /// Loads the values and checks the count.
    pub fn load(&self, base: &Path, expected: usize, field: &str) -> Result<Vec<f64>> {
        let values = match self {
            Data::Inline(v) => v.clone(),
            Data::Blob(blob) => {
                let path = base.join(&blob.file);
                let bytes = fs::read(&path).with_context(|| format!("{field}: reading {}", path.display()))?;
                if let Some(want) = &blob.sha256 {
                    let got = sha256_hex(&bytes);
                    if !got.eq_ignore_ascii_case(want) {
                        bail!("{field}: sha256 of {} is {got}, manifest says {want}", path.display());
                    }
                }
                decode_f64(&bytes).with_context(|| format!("{field}: {}", path.display()))?
            }
        };
        if values.len() != expected {
            bail!("{field}: expected {expected} entries, found {}", values.len());
        }
        Ok(values)
    }
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub base: PathBuf,
}

impl LoadedManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, base })
    }

    pub fn problem(&self) -> Result<Problem> {
        let mf = &self.manifest;
        let n = mf.n;
        if mf.blocks.len() != mf.l {
            bail!("L: manifest says {} blocks, lists {}", mf.l, mf.blocks.len());
        }
        let objective = match &mf.objective {
            ObjectiveSpec::Linear { c } => Objective::linear(c.load(&self.base, n, "objective.c")?),
            ObjectiveSpec::DiagQuadratic { cdiag, c } => Objective::diag_quadratic(
                cdiag.load(&self.base, n, "objective.cdiag")?,
                c.load(&self.base, n, "objective.c")?,
            )
            .context("objective")?,
        };
        let mut blocks = Vec::with_capacity(mf.l);
        for (i, blk) in mf.blocks.iter().enumerate() {
            let field = format!("blocks[{i}]");
            let a = blk.a.load(&self.base, blk.m * n, &format!("{field}.a"))?;
            let b = blk.b.load(&self.base, blk.m, &format!("{field}.b"))?;
            let a = RowMatrix::new(blk.m, n, a).with_context(|| format!("{field}.a"))?;
            blocks.push(ConstraintBlock::new(a, b, blk.k).with_context(|| format!("{field}.k"))?);
        }
        let bounds = BoxConstraint::new(
            mf.bounds.lower.expand(n, "bounds.lower")?,
            mf.bounds.upper.expand(n, "bounds.upper")?,
        )
        .context("bounds")?;
        Ok(Problem::new(objective, blocks, bounds)?)
    }

    pub fn witness(&self) -> Result<Option<Vec<f64>>> {
        self.manifest
            .witness
            .as_ref()
            .map(|w| w.load(&self.base, self.manifest.n, "witness"))
            .transpose()
    }
}

/// Writes `prob` (and an optional witness) as blobs plus `manifest.json`
/// into `dir`, returning the manifest path.
pub fn write_problem(dir: &Path, prob: &Problem, witness: Option<&[f64]>) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let objective = match &prob.objective {
        Objective::Linear { c } => ObjectiveSpec::Linear {
            c: Data::Blob(write_blob(dir, "c.bin", c)?),
        },
        Objective::DiagQuadratic { cdiag, c } => ObjectiveSpec::DiagQuadratic {
            cdiag: Data::Blob(write_blob(dir, "cdiag.bin", cdiag)?),
            c: Data::Blob(write_blob(dir, "c.bin", c)?),
        },
    };
    let mut blocks = Vec::with_capacity(prob.blocks.len());
    for (i, blk) in prob.blocks.iter().enumerate() {
        blocks.push(BlockSpec {
            m: blk.m(),
            k: blk.k,
            a: Data::Blob(write_blob(dir, &format!("a{i}.bin"), blk.a.data())?),
            b: Data::Blob(write_blob(dir, &format!("b{i}.bin"), &blk.b)?),
        });
    }
    let compact = |v: &[f64]| match v.first() {
        Some(&first) if v.iter().all(|x| x.to_bits() == first.to_bits()) => Bounds::All(Bound(first)),
        _ => Bounds::Each(v.iter().map(|&x| Bound(x)).collect()),
    };
    let manifest = Manifest {
        n: prob.n(),
        l: prob.blocks.len(),
        objective,
        blocks,
        bounds: BoundsSpec {
            lower: compact(&prob.bounds.lower),
            upper: compact(&prob.bounds.upper),
        },
        witness: witness.map(|w| write_blob(dir, "witness.bin", w).map(Data::Blob)).transpose()?,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
