//! Run manifest: every artifact with its SHA-256, per-stage timings, and an
//! input-hash chain used to skip stages whose inputs did not change.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Canonical stage order; the manifest lists stages in this order.
pub const STAGES: [&str; 8] = [
    "ingest",
    "networks",
    "measures",
    "embed",
    "sigtest",
    "classify",
    "surrogate",
    "report",
];

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        write!(s, "{b:02x}").expect("write to string");
    }
    s
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub input_hash: String,
    pub depends_on: Vec<String>,
    /// Files read from outside the output directory.
    pub external_inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub wall_ms: f64,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDerivation {
    pub task: String,
    pub rule: String,
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub seed_derivations: Vec<SeedDerivation>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(seed: u64, config_sha256: String, seed_derivations: Vec<SeedDerivation>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_sha256,
            seed_derivations,
            stages: Vec::new(),
        }
    }

    pub fn load(out: &Path) -> Result<Option<Self>, CliError> {
        let p = out.join(MANIFEST_FILE);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p)?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    pub fn save(&self, out: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(out)?;
        let tmp = out.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(&tmp, out.join(MANIFEST_FILE))?;
        Ok(())
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn upsert(&mut self, record: StageRecord) {
        self.stages.retain(|s| s.name != record.name);
        self.stages.push(record);
        let order = |n: &str| STAGES.iter().position(|s| *s == n).unwrap_or(STAGES.len());
        self.stages.sort_by_key(|s| order(&s.name));
    }

    /// Every artifact path with its hash.
    pub fn artifacts(&self) -> BTreeMap<String, String> {
        self.stages
            .iter()
            .flat_map(|s| s.outputs.iter().map(|a| (a.path.clone(), a.sha256.clone())))
            .collect()
    }

    /// Input hash of a stage given the current records of its dependencies.
    pub fn chain_hash(&self, name: &str, depends_on: &[String], external: &[Artifact]) -> Result<String, CliError> {
        let mut h = format!("stage {name}\nconfig {}\n", self.config_sha256);
        for d in depends_on {
            let rec = self
                .stage(d)
                .ok_or_else(|| CliError::Dependency(format!("stage `{d}` has not been run; run `commnet {d}` first")))?;
            writeln!(h, "dep {d}").expect("write to string");
            for a in &rec.outputs {
                writeln!(h, "  {} {}", a.path, a.sha256).expect("write to string");
            }
        }
        for a in external {
            writeln!(h, "ext {}", a.sha256).expect("write to string");
        }
        Ok(sha256_hex(h.as_bytes()))
    }

    /// Checks every recorded hash against the files and every stage's input
    /// hash against its dependencies. Returns the list of problems.
    pub fn verify(&self, out: &Path) -> Vec<String> {
        let mut problems = Vec::new();
        for s in &self.stages {
            for a in &s.outputs {
                match hash_file(&out.join(&a.path)) {
                    Ok(h) if h == a.sha256 => {}
                    Ok(_) => problems.push(format!("{}: hash mismatch", a.path)),
                    Err(_) => problems.push(format!("{}: missing", a.path)),
                }
            }
            match self.chain_hash(&s.name, &s.depends_on, &s.external_inputs) {
                Ok(h) if h == s.input_hash => {}
                Ok(_) => problems.push(format!("stage {}: inputs changed since it ran", s.name)),
                Err(e) => problems.push(format!("stage {}: {e}", s.name)),
            }
        }
        problems
    }

    fn outputs_intact(&self, out: &Path, rec: &StageRecord) -> bool {
        !rec.outputs.is_empty()
            && rec
                .outputs
                .iter()
                .all(|a| hash_file(&out.join(&a.path)).map(|h| h == a.sha256).unwrap_or(false))
    }
}

/// Collects the files a stage writes, hashing the bytes as they go out.
pub struct Outputs {
    root: PathBuf,
    files: BTreeMap<String, Artifact>,
}

impl Outputs {
    fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.insert(
            rel.to_string(),
            Artifact {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Buffers whatever `f` writes, then stores it under `rel`.
    pub fn write_with<E>(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<(), E>) -> Result<(), CliError>
    where
        CliError: From<E>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }
}

/// What a stage needs from the runner.
pub struct StageSpec<'a> {
    pub name: &'a str,
    pub depends_on: Vec<String>,
    pub external_inputs: Vec<PathBuf>,
    /// Directories wiped before the stage runs, relative to the output root.
    pub owned_dirs: Vec<String>,
}

/// Outcome of one stage invocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRun {
    pub cached: bool,
    pub wall_ms: f64,
}

/// Runs `body` unless the manifest already holds intact outputs for the same
/// input hash, then records the stage.
pub fn run_stage(
    out: &Path,
    manifest: &mut RunManifest,
    spec: StageSpec<'_>,
    body: impl FnOnce(&mut Outputs) -> Result<(), CliError>,
) -> Result<StageRun, CliError> {
    let start = Instant::now();
    let external = spec
        .external_inputs
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
            Ok(Artifact {
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let input_hash = manifest.chain_hash(spec.name, &spec.depends_on, &external)?;
    if let Some(prev) = manifest.stage(spec.name) {
        if prev.input_hash == input_hash && manifest.outputs_intact(out, prev) {
            let mut rec = prev.clone();
            rec.cached = true;
            rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let run = StageRun {
                cached: true,
                wall_ms: rec.wall_ms,
            };
            manifest.upsert(rec);
            manifest.save(out)?;
            return Ok(run);
        }
    }
    for d in &spec.owned_dirs {
        let p = out.join(d);
        if p.exists() {
            std::fs::remove_dir_all(&p)?;
        }
    }
    let mut outputs = Outputs::new(out);
    body(&mut outputs)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    manifest.upsert(StageRecord {
        name: spec.name.to_string(),
        input_hash,
        depends_on: spec.depends_on,
        external_inputs: external,
        outputs: outputs.files.into_values().collect(),
        wall_ms,
        cached: false,
    });
    manifest.save(out)?;
    Ok(StageRun { cached: false, wall_ms })
}
