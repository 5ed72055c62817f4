//! Record files and the extracted-feature cache.
//!
//! Records ship as `records.jsonl`; extraction turns them into a cache of
//! per-record feature bundles plus histogram-function banks for the
//! context features, with a manifest line declaring every dimension. The
//! cache decouples slow extraction from training.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::{
    assemble, context_profile, FeatureConfig, FeatureKind, RadiiSet, Resources,
};
use crate::geodata::{CorpusEntry, GeoPoint, GeoRecord};
use crate::histfn::HistFnBank;
use crate::net::{NetworkConfig, PartData, PartKind, Sample};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    lon: f64,
    lat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    embedding: Vec<f64>,
    tags: Vec<usize>,
}

/// Read `records.jsonl`: one record object per line with fields id, lon,
/// lat, optional label, embedding, tags.
pub fn read_records(path: &Path) -> Result<Vec<GeoRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine =
            serde_json::from_str(&line).map_err(|e| Error::format(path, idx + 1, e.to_string()))?;
        out.push(GeoRecord {
            id: parsed.id,
            point: GeoPoint::new(parsed.lon, parsed.lat)
                .map_err(|e| Error::format(path, idx + 1, e.to_string()))?,
            label: parsed.label,
            embedding: parsed.embedding,
            tags: parsed.tags,
        });
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[GeoRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = RecordLine {
            id: r.id.clone(),
            lon: r.point.lon,
            lat: r.point.lat,
            label: r.label,
            embedding: r.embedding.clone(),
            tags: r.tags.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::format(path, 0, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One geotagged image of the concept corpus: its per-concept
/// probabilities, expanded into (point, concept, probability) triples for
/// indexing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEntry {
    #[serde(flatten)]
    pub point: GeoPoint,
    pub probs: Vec<f64>,
}

/// Read `concepts.jsonl`: `{"lon":f,"lat":f,"probs":[...]}` per line.
pub fn read_concepts(path: &Path) -> Result<Vec<ConceptEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ConceptEntry =
            serde_json::from_str(&line).map_err(|e| Error::format(path, idx + 1, e.to_string()))?;
        for (i, p) in parsed.probs.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::format(
                    path,
                    idx + 1,
                    format!("concept {i} probability {p} not in [0, 1]"),
                ));
            }
        }
        out.push(parsed);
    }
    Ok(out)
}

pub fn write_concepts(path: &Path, entries: &[ConceptEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(|err| Error::format(path, 0, err.to_string()))?;
        w.write_all(b"\n").map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Expand concept entries to weighted corpus triples.
pub fn concept_triples(entries: &[ConceptEntry]) -> Vec<CorpusEntry> {
    let mut out = Vec::new();
    for e in entries {
        for (concept, &p) in e.probs.iter().enumerate() {
            if p > 0.0 {
                out.push(CorpusEntry {
                    point: e.point,
                    key: concept,
                    weight: p,
                });
            }
        }
    }
    out
}

/// Cache header: declared dimensions and the shared bank knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub format: String,
    pub version: u32,
    pub class_count: usize,
    pub radii: Vec<f64>,
    pub parts: Vec<CachePart>,
    pub record_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachePart {
    pub name: String,
    pub dim: usize,
    /// Context parts also carry a histogram-function bank of this many
    /// functions (dim / |radii|).
    pub bank_fns: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedRecord {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    /// Feature vectors in manifest part order.
    pub parts: Vec<Vec<f64>>,
    /// Bank value rows per part (None for non-context parts), knots in the
    /// manifest.
    pub banks: Vec<Option<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub manifest: CacheManifest,
    pub records: Vec<CachedRecord>,
}

const CACHE_FORMAT: &str = "geoclass-cache";
const CACHE_VERSION: u32 = 1;

/// Extract every record into a cache. Deterministic: re-extraction of the
/// same inputs produces an identical cache.
pub fn extract(
    records: &[GeoRecord],
    config: &FeatureConfig,
    resources: &Resources,
    class_count: usize,
) -> Result<FeatureCache> {
    let kinds = config.enabled_kinds();
    if kinds.is_empty() {
        return Err(Error::Config("no features enabled".to_string()));
    }
    let mut cached = Vec::with_capacity(records.len());
    let mut dims: Option<Vec<usize>> = None;
    for record in records {
        let (parts, banks) = extract_record(record, config, resources)
            .map_err(|e| Error::Config(format!("record '{}': {e}", record.id)))?;
        let these: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        match &dims {
            None => dims = Some(these),
            Some(d) => {
                if *d != these {
                    return Err(Error::Config(format!(
                        "record '{}' produced inconsistent dimensions",
                        record.id
                    )));
                }
            }
        }
        cached.push(CachedRecord {
            id: record.id.clone(),
            label: record.label,
            parts,
            banks,
        });
    }
    let dims = dims.unwrap_or_default();
    let radii = config.radii.as_slice().to_vec();
    let parts = kinds
        .iter()
        .zip(&dims)
        .map(|(kind, &dim)| CachePart {
            name: kind.name().to_string(),
            dim,
            bank_fns: kind.is_context().then(|| dim / radii.len()),
        })
        .collect();
    Ok(FeatureCache {
        manifest: CacheManifest {
            format: CACHE_FORMAT.to_string(),
            version: CACHE_VERSION,
            class_count,
            radii,
            parts,
            record_count: cached.len(),
        },
        records: cached,
    })
}

/// Feature vectors plus bank rows for one record, in enabled-kind order.
fn extract_record(
    record: &GeoRecord,
    config: &FeatureConfig,
    resources: &Resources,
) -> Result<(Vec<Vec<f64>>, Vec<Option<Vec<Vec<f64>>>>)> {
    let bundle = assemble(record, config, resources)?;
    let mut parts = Vec::new();
    let mut banks = Vec::new();
    for (kind, values) in bundle.parts() {
        let bank = if kind.is_context() {
            let index = match kind {
                FeatureKind::HashtagContext => resources.hashtag_index.as_ref(),
                FeatureKind::VisualContext => resources.visual_index.as_ref(),
                _ => unreachable!(),
            }
            .expect("assemble validated the index");
            let profile = context_profile(record.point, index, &config.radii)?;
            Some(profile.fn_values())
        } else {
            None
        };
        parts.push(values.clone());
        banks.push(bank);
    }
    Ok((parts, banks))
}

/// Write the cache: a manifest line, then one JSON record per line.
pub fn write_cache(path: &Path, cache: &FeatureCache) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &cache.manifest).map_err(|e| Error::format(path, 0, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for record in &cache.records {
        serde_json::to_writer(&mut w, record).map_err(|e| Error::format(path, 0, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<FeatureCache> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let manifest_line = lines
        .next()
        .ok_or_else(|| Error::format(path, 1, "empty cache file"))?
        .map_err(|e| Error::io(path, e))?;
    let manifest: CacheManifest = serde_json::from_str(&manifest_line)
        .map_err(|e| Error::format(path, 1, e.to_string()))?;
    if manifest.format != CACHE_FORMAT {
        return Err(Error::format(path, 1, format!("unknown cache format '{}'", manifest.format)));
    }
    if manifest.version != CACHE_VERSION {
        return Err(Error::format(path, 1, format!("unsupported cache version {}", manifest.version)));
    }
    let mut records = Vec::with_capacity(manifest.record_count);
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CachedRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(path, idx + 2, e.to_string()))?;
        if record.parts.len() != manifest.parts.len() {
            return Err(Error::format(path, idx + 2, "part count does not match manifest"));
        }
        for (part, decl) in record.parts.iter().zip(&manifest.parts) {
            if part.len() != decl.dim {
                return Err(Error::format(
                    path,
                    idx + 2,
                    format!("part '{}' has dim {}, manifest says {}", decl.name, part.len(), decl.dim),
                ));
            }
        }
        records.push(record);
    }
    if records.len() != manifest.record_count {
        return Err(Error::format(
            path,
            0,
            format!("manifest declares {} records, found {}", manifest.record_count, records.len()),
        ));
    }
    Ok(FeatureCache { manifest, records })
}

impl FeatureCache {
    pub fn part_index(&self, name: &str) -> Option<usize> {
        self.manifest.parts.iter().position(|p| p.name == name)
    }

    /// Network input structure for the enabled feature set: context parts
    /// become radius-learning inputs when `rl_replicas > 0`, everything
    /// else stays a plain vector.
    pub fn network_parts(&self, rl_replicas: usize) -> Vec<crate::net::PartSpec> {
        self.manifest
            .parts
            .iter()
            .map(|p| {
                let kind = match (p.bank_fns, rl_replicas) {
                    (Some(fn_count), replicas) if replicas > 0 => PartKind::Radius {
                        fn_count,
                        replicas,
                    },
                    _ => PartKind::Vector { dim: p.dim },
                };
                crate::net::PartSpec {
                    name: p.name.clone(),
                    kind,
                }
            })
            .collect()
    }

    /// Materialize network samples for `config`. Every record must carry a
    /// label; parts are matched to the config by name.
    pub fn to_samples(&self, config: &NetworkConfig) -> Result<Vec<Sample>> {
        let radii = RadiiSet::new(self.manifest.radii.clone())?;
        let indices: Vec<usize> = config
            .parts
            .iter()
            .map(|spec| {
                self.part_index(&spec.name).ok_or_else(|| {
                    Error::Config(format!("cache has no part named '{}'", spec.name))
                })
            })
            .collect::<Result<_>>()?;
        let mut samples = Vec::with_capacity(self.records.len());
        for record in &self.records {
            let label = record.label.ok_or_else(|| {
                Error::Config(format!("record '{}' has no label", record.id))
            })?;
            let mut parts = Vec::with_capacity(indices.len());
            for (&cache_idx, spec) in indices.iter().zip(&config.parts) {
                let data = match spec.kind {
                    PartKind::Vector { .. } => PartData::Vector(record.parts[cache_idx].clone()),
                    PartKind::Radius { .. } => {
                        let rows = record.banks[cache_idx].as_ref().ok_or_else(|| {
                            Error::Config(format!("part '{}' has no bank in the cache", spec.name))
                        })?;
                        PartData::Bank(HistFnBank::from_values(rows, &radii)?)
                    }
                };
                parts.push(data);
            }
            samples.push(Sample { parts, label });
        }
        Ok(samples)
    }

    /// Record coordinates are not cached; pair ids back to records when a
    /// command needs both (priors need raw coordinates).
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }
}
