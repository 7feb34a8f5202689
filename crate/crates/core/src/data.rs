//! Dataset generation, ingestion of precomputed-embedding files, splits and
//! folds, and CSV persistence.
//!
//! The on-disk format is a plain CSV with header
//! `x1_0..x1_{d-1},x2_0..x2_{d-1},y,t_total`, floats written with 17
//! significant digits so a round trip is value-exact. A sidecar JSON next to
//! the CSV carries provenance (generator spec or source digest, seed,
//! diffusion parameters) and, for ingested files, the per-pair oracle
//! scores.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ez::{sample_trial, EZParams, EZSampleConfig};
use crate::losses::Observation;
use crate::reward::{QueryPair, RewardModel};
use crate::rng::{self, Stream};

const STREAM_SPLIT: u64 = 0xD5;
const STREAM_FOLDS: u64 = 0xF0;
const STREAM_GENERATE: u64 = 0x6E;

/// Feature distribution for synthetic query items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureDist {
    /// i.i.d. standard normal rescaled to unit Euclidean norm.
    Sphere,
    /// i.i.d. standard normal coordinates.
    Gaussian,
    /// Independent +/-1 coordinates.
    Rademacher,
}

impl FeatureDist {
    pub fn sample(&self, dim: usize, rng: &mut Stream) -> Vec<f64> {
        match self {
            FeatureDist::Gaussian => {
                (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            }
            FeatureDist::Sphere => loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    return v.into_iter().map(|x| x / norm).collect();
                }
            },
            FeatureDist::Rademacher => (0..dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect(),
        }
    }
}

/// Ground-truth specification for synthetic datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub truth: RewardModel,
    pub features: FeatureDist,
    pub ez: EZParams,
    pub n: usize,
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneratorInfo {
    /// Synthetic: full spec plus its digest.
    Spec { spec: OracleSpec, digest: String },
    /// Ingested: digest of the source file.
    External { digest: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ez: Option<EZParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<EZSampleConfig>,
    /// Unix seconds at creation; lives only in the sidecar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<u64>,
    /// Per-pair oracle scores `(s1, s2)` for ingested datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_scores: Option<Vec<(f64, f64)>>,
}

/// A set of observations with shared feature dimension and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub observations: Vec<Observation>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.observations.len()
    }

    /// Non-decision time of the generating process, 0 when unknown.
    pub fn t_nd(&self) -> f64 {
        self.provenance.ez.map_or(0.0, |ez| ez.t_nd)
    }

    /// Barrier of the generating process, if recorded.
    pub fn recorded_a(&self) -> Option<f64> {
        self.provenance.ez.map(|ez| ez.barrier_a)
    }

    /// True reward difference per pair, from the recorded truth model or
    /// the retained oracle scores.
    pub fn oracle_diffs(&self) -> Result<Vec<f64>> {
        if let Some(GeneratorInfo::Spec { spec, .. }) = &self.provenance.generator {
            return self
                .observations
                .iter()
                .map(|o| spec.truth.reward_diff(&o.pair))
                .collect();
        }
        if let Some(scores) = &self.provenance.oracle_scores {
            if scores.len() != self.n() {
                return Err(Error::data(format!(
                    "oracle scores cover {} pairs but dataset has {}",
                    scores.len(),
                    self.n()
                )));
            }
            return Ok(scores.iter().map(|(s1, s2)| s1 - s2).collect());
        }
        Err(Error::config(
            "dataset carries no oracle information (no truth model and no oracle scores)",
        ))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

fn now_unix() -> Option<u64> {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

/// Draws `spec.n` trials: pairs i.i.d. from the feature distribution,
/// choices and times from the diffusion sampler at the truth reward.
pub fn generate(spec: &OracleSpec, cfg: &EZSampleConfig, seed: u64) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::config("oracle spec requests n = 0 observations"));
    }
    let dim = spec.truth.dim_in();
    let mut stream = rng::substream(seed, STREAM_GENERATE);
    let mut observations = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x1 = spec.features.sample(dim, &mut stream);
        let x2 = spec.features.sample(dim, &mut stream);
        let pair = QueryPair::new(x1, x2)?;
        let rdiff = spec.truth.reward_diff(&pair)?;
        let (y, t_total) = sample_trial(rdiff, &spec.ez, cfg, &mut stream)?;
        observations.push(Observation::new(pair, y, t_total)?);
    }
    let spec_digest = sha256_hex(serde_json::to_string(spec).unwrap().as_bytes());
    Ok(Dataset {
        dim,
        observations,
        provenance: Provenance {
            generator: Some(GeneratorInfo::Spec { spec: spec.clone(), digest: spec_digest }),
            seed,
            ez: Some(spec.ez),
            sampler: Some(*cfg),
            created: now_unix(),
            oracle_scores: None,
        },
    })
}

// ---------------------------------------------------------------------------
// Embedding ingestion
// ---------------------------------------------------------------------------

/// One item in an embeddings file: an id, a feature vector, and named
/// oracle scores.
#[derive(Debug, Deserialize)]
struct EmbeddingItem {
    id: String,
    features: Vec<f64>,
    #[serde(default)]
    scores: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingFile {
    dim: usize,
    items: Vec<EmbeddingItem>,
    pairs: Vec<(String, String)>,
}

/// Builds a dataset from precomputed item features and per-item oracle
/// scores: the reward difference of a pair is the score difference, and the
/// choice/response-time observation is simulated from it. The scores are
/// retained in the provenance for later evaluation.
pub fn ingest_embeddings(
    path: &Path,
    score_column: &str,
    ez: &EZParams,
    cfg: &EZSampleConfig,
    seed: u64,
) -> Result<Dataset> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let file: EmbeddingFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    if file.dim == 0 {
        return Err(Error::data("embeddings file declares dim = 0"));
    }

    let mut by_id = std::collections::HashMap::new();
    for (i, item) in file.items.iter().enumerate() {
        if item.features.len() != file.dim {
            return Err(Error::data(format!(
                "item '{}' (index {i}): expected {} features, got {}",
                item.id,
                file.dim,
                item.features.len()
            )));
        }
        if item.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("item '{}' (index {i}): non-finite feature", item.id)));
        }
        let score = item
            .scores
            .get(score_column)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| {
                Error::data(format!(
                    "item '{}' (index {i}): missing numeric score column '{score_column}'",
                    item.id
                ))
            })?;
        if by_id.insert(item.id.as_str(), (item, score)).is_some() {
            return Err(Error::data(format!("duplicate item id '{}'", item.id)));
        }
    }

    let mut stream = rng::substream(seed, STREAM_GENERATE);
    let mut observations = Vec::with_capacity(file.pairs.len());
    let mut scores = Vec::with_capacity(file.pairs.len());
    for (row, (id1, id2)) in file.pairs.iter().enumerate() {
        let lookup = |id: &str| {
            by_id
                .get(id)
                .ok_or_else(|| Error::data(format!("pair {row}: unknown item id '{id}'")))
        };
        let (item1, s1) = lookup(id1)?;
        let (item2, s2) = lookup(id2)?;
        let pair = QueryPair::new(item1.features.clone(), item2.features.clone())?;
        let (y, t_total) = sample_trial(s1 - s2, ez, cfg, &mut stream)?;
        observations.push(Observation::new(pair, y, t_total)?);
        scores.push((*s1, *s2));
    }
    if observations.is_empty() {
        return Err(Error::data("embeddings file declares no pairs"));
    }

    Ok(Dataset {
        dim: file.dim,
        observations,
        provenance: Provenance {
            generator: Some(GeneratorInfo::External { digest: sha256_hex(&bytes) }),
            seed,
            ez: Some(*ez),
            sampler: Some(*cfg),
            created: now_unix(),
            oracle_scores: Some(scores),
        },
    })
}

// ---------------------------------------------------------------------------
// Splits and folds
// ---------------------------------------------------------------------------

/// Seeded-shuffle split into (`ceil(frac * n)`, remainder).
pub fn split(dataset: &Dataset, frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0 < frac && frac < 1.0) {
        return Err(Error::config(format!("split fraction must lie in (0,1), got {frac}")));
    }
    let n = dataset.n();
    if n < 2 {
        return Err(Error::config("cannot split a dataset with fewer than 2 observations"));
    }
    let perm = rng::shuffled_indices(n, &mut rng::substream(seed, STREAM_SPLIT));
    let n1 = ((frac * n as f64).ceil() as usize).clamp(1, n - 1);
    let take = |idxs: &[usize]| -> Dataset {
        let mut prov = dataset.provenance.clone();
        // a shuffled subset is no longer regenerable from the spec
        prov.generator = None;
        prov.oracle_scores = prov
            .oracle_scores
            .map(|s| idxs.iter().map(|&i| s[i]).collect());
        Dataset {
            dim: dataset.dim,
            observations: idxs.iter().map(|&i| dataset.observations[i].clone()).collect(),
            provenance: prov,
        }
    };
    Ok((take(&perm[..n1]), take(&perm[n1..])))
}

/// Per-observation fold labels; sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<u32>,
}

impl FoldAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0usize; self.k];
        for &f in &self.fold_of {
            s[f as usize] += 1;
        }
        s
    }

    pub fn in_fold(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] as usize == fold).collect()
    }

    pub fn out_of_fold(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] as usize != fold).collect()
    }
}

/// Pure function of `(seed, n, k)`: a seeded shuffle dealt round-robin.
pub fn fold_assign(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::config(format!("fold count must satisfy 2 <= k <= n, got k = {k}, n = {n}")));
    }
    let perm = rng::shuffled_indices(n, &mut rng::substream(seed, STREAM_FOLDS));
    let mut fold_of = vec![0u32; n];
    for (pos, &obs) in perm.iter().enumerate() {
        fold_of[obs] = (pos % k) as u32;
    }
    Ok(FoldAssignment { k, fold_of })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Sidecar path for a dataset file: `<path>.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn fmt_float(x: f64) -> String {
    // 17 significant digits round-trip any f64 exactly
    format!("{x:.16e}")
}

/// Serializes the dataset to CSV (deterministic bytes for a given dataset).
pub fn to_csv_string(dataset: &Dataset) -> String {
    let d = dataset.dim;
    let mut out = String::new();
    let mut header = Vec::with_capacity(2 * d + 2);
    for i in 0..d {
        header.push(format!("x1_{i}"));
    }
    for i in 0..d {
        header.push(format!("x2_{i}"));
    }
    header.push("y".to_string());
    header.push("t_total".to_string());
    out.push_str(&header.join(","));
    out.push('\n');
    for o in &dataset.observations {
        let mut fields = Vec::with_capacity(2 * d + 2);
        fields.extend(o.pair.x1.iter().map(|v| fmt_float(*v)));
        fields.extend(o.pair.x2.iter().map(|v| fmt_float(*v)));
        fields.push(format!("{}", o.y));
        fields.push(fmt_float(o.t_total));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes the CSV and its provenance sidecar; returns the CSV digest.
pub fn save(dataset: &Dataset, path: &Path) -> Result<String> {
    let csv = to_csv_string(dataset);
    std::fs::write(path, csv.as_bytes())
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))?;
    let sidecar = serde_json::to_string_pretty(&dataset.provenance).unwrap();
    std::fs::write(sidecar_path(path), sidecar.as_bytes())
        .map_err(|e| Error::data(format!("cannot write sidecar for {}: {e}", path.display())))?;
    Ok(sha256_hex(csv.as_bytes()))
}

/// Parses a dataset CSV (and its sidecar when present).
pub fn load(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut dataset = from_csv_str(&text)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let bytes = std::fs::read(&sidecar)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", sidecar.display())))?;
        dataset.provenance = serde_json::from_slice(&bytes)
            .map_err(|e| Error::data(format!("{}: {e}", sidecar.display())))?;
    }
    // re-check ingestion invariant now that t_nd may be known
    let t_nd = dataset.t_nd();
    if t_nd > 0.0 {
        for (i, o) in dataset.observations.iter().enumerate() {
            if o.t_total <= t_nd {
                return Err(Error::data(format!(
                    "line {}: t_total = {} does not exceed the recorded non-decision time {}",
                    i + 2,
                    o.t_total,
                    t_nd
                )));
            }
        }
    }
    Ok(dataset)
}

/// Parses the CSV body; line numbers in errors count from 1 (header line).
pub fn from_csv_str(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::data("empty dataset file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || (cols.len() - 2) % 2 != 0 {
        return Err(Error::data(format!(
            "line 1: header must have 2d + 2 columns, got {}",
            cols.len()
        )));
    }
    let d = (cols.len() - 2) / 2;
    for i in 0..d {
        if cols[i] != format!("x1_{i}") || cols[d + i] != format!("x2_{i}") {
            return Err(Error::data(format!(
                "line 1: unexpected column name '{}' (want x1_0..x1_{}, x2_0..x2_{})",
                cols[i.min(d + i)],
                d - 1,
                d - 1
            )));
        }
    }
    if cols[2 * d] != "y" || cols[2 * d + 1] != "t_total" {
        return Err(Error::data("line 1: final columns must be y,t_total"));
    }

    let mut observations = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 * d + 2 {
            return Err(Error::data(format!(
                "line {lineno}: expected {} fields, got {}",
                2 * d + 2,
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::data(format!("line {lineno}: cannot parse {what} value '{s}'")))
        };
        let x1: Vec<f64> = (0..d)
            .map(|i| parse(fields[i], "feature"))
            .collect::<Result<_>>()?;
        let x2: Vec<f64> = (0..d)
            .map(|i| parse(fields[d + i], "feature"))
            .collect::<Result<_>>()?;
        let y: i64 = fields[2 * d]
            .parse()
            .map_err(|_| Error::data(format!("line {lineno}: cannot parse y value '{}'", fields[2 * d])))?;
        if y != 1 && y != -1 {
            return Err(Error::data(format!("line {lineno}: y must be -1 or 1, got {y}")));
        }
        let t_total = parse(fields[2 * d + 1], "t_total")?;
        let pair = QueryPair::new(x1, x2)
            .map_err(|e| Error::data(format!("line {lineno}: {e}")))?;
        let obs = Observation::new(pair, y as i8, t_total)
            .map_err(|e| Error::data(format!("line {lineno}: {e}")))?;
        observations.push(obs);
    }
    if observations.is_empty() {
        return Err(Error::data("dataset has a header but no rows"));
    }
    Ok(Dataset { dim: d, observations, provenance: Provenance::default() })
}
