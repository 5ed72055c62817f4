//! Synthetic benchmark generator.
//!
//! Produces a labeled record set plus hashtag and concept corpora with a
//! controllable location signal: location-sensitive classes draw their
//! points from per-class Gaussian mixtures, location-insensitive classes
//! are uniform over the bounding box. Image embeddings are class
//! prototypes buried in unit noise at a configurable signal-to-noise
//! ratio, so the image-only problem is solvable but imperfect and context
//! features have headroom to help.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::ConceptEntry;
use crate::geodata::{BoundingBox, CorpusEntry, GeoPoint, GeoRecord};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub train_records: usize,
    pub test_records: usize,
    pub bbox: BoundingBox,
    /// Gaussian mixture components per location-sensitive class.
    pub centers_per_class: usize,
    /// Per-class spatial spread is drawn uniformly from this range (degrees).
    pub sigma_deg_min: f64,
    pub sigma_deg_max: f64,
    pub embedding_dim: usize,
    /// Scale of the class prototype inside unit-variance embedding noise.
    pub snr: f64,
    /// Fraction of classes made location-insensitive (uniform points); the
    /// highest class ids are chosen.
    pub insensitive_frac: f64,
    /// Hashtag corpus points per class.
    pub corpus_per_class: usize,
    /// Fraction of each class's corpus scattered uniformly over the box
    /// regardless of the class's spatial model: background clutter that
    /// makes wide-radius histograms noisy.
    pub corpus_noise_frac: f64,
    /// Concept vocabulary size for the concept corpus.
    pub concepts: usize,
    /// Concept corpus points per class.
    pub concept_points_per_class: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 20,
            train_records: 5000,
            test_records: 1000,
            bbox: BoundingBox::contiguous_us(),
            centers_per_class: 3,
            sigma_deg_min: 0.02,
            sigma_deg_max: 0.3,
            embedding_dim: 32,
            snr: 2.0,
            insensitive_frac: 0.25,
            corpus_per_class: 2000,
            corpus_noise_frac: 0.3,
            concepts: 20,
            concept_points_per_class: 300,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.train_records == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("classes, train records, embedding dim must be >= 1".to_string()));
        }
        if self.centers_per_class == 0 {
            return Err(Error::Config("centers_per_class must be >= 1".to_string()));
        }
        if !(self.snr >= 0.0) {
            return Err(Error::Config(format!("snr {} must be >= 0", self.snr)));
        }
        if !(0.0..=1.0).contains(&self.insensitive_frac) {
            return Err(Error::Config(format!(
                "insensitive_frac {} not in [0, 1]",
                self.insensitive_frac
            )));
        }
        if !(0.0..=1.0).contains(&self.corpus_noise_frac) {
            return Err(Error::Config(format!(
                "corpus_noise_frac {} not in [0, 1]",
                self.corpus_noise_frac
            )));
        }
        if !(self.sigma_deg_min > 0.0) || !(self.sigma_deg_min <= self.sigma_deg_max) {
            return Err(Error::Config("sigma range invalid".to_string()));
        }
        Ok(())
    }

    /// Class ids below this bound are location-sensitive.
    pub fn sensitive_classes(&self) -> usize {
        self.classes - (self.classes as f64 * self.insensitive_frac).round() as usize
    }
}

/// Everything one benchmark run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub train: Vec<GeoRecord>,
    pub test: Vec<GeoRecord>,
    pub corpus: Vec<CorpusEntry>,
    pub concepts: Vec<ConceptEntry>,
    /// Per-class spatial model, for inspection in tests.
    pub class_models: Vec<ClassSpatialModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpatialModel {
    pub class: usize,
    pub sensitive: bool,
    pub sigma_deg: f64,
    pub centers: Vec<GeoPoint>,
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    models: Vec<ClassSpatialModel>,
    prototypes: Vec<Vec<f64>>,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a SynthSpec) -> Generator<'a> {
        let mut rng = stream_rng(spec.seed, Stream::Synth);
        let sensitive = spec.sensitive_classes();
        let b = spec.bbox;
        // Keep mixture centers away from the edges so the mass stays inside.
        let margin_lon = 0.05 * b.lon_span();
        let margin_lat = 0.05 * b.lat_span();
        let models = (0..spec.classes)
            .map(|class| {
                let sigma_deg = rng.random_range(spec.sigma_deg_min..=spec.sigma_deg_max);
                let centers = (0..spec.centers_per_class)
                    .map(|_| GeoPoint {
                        lon: rng.random_range(b.lon_min + margin_lon..b.lon_max - margin_lon),
                        lat: rng.random_range(b.lat_min + margin_lat..b.lat_max - margin_lat),
                    })
                    .collect();
                ClassSpatialModel {
                    class,
                    sensitive: class < sensitive,
                    sigma_deg,
                    centers,
                }
            })
            .collect();
        let prototypes = (0..spec.classes)
            .map(|_| {
                let raw: Vec<f64> = (0..spec.embedding_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                raw.iter().map(|x| x / norm).collect()
            })
            .collect();
        Generator {
            spec,
            rng,
            models,
            prototypes,
        }
    }

    fn point_for_class(&mut self, class: usize) -> GeoPoint {
        let b = self.spec.bbox;
        let model = &self.models[class];
        if model.sensitive {
            let center = model.centers[self.rng.random_range(0..model.centers.len())];
            let dx: f64 = StandardNormal.sample(&mut self.rng);
            let dy: f64 = StandardNormal.sample(&mut self.rng);
            GeoPoint {
                lon: (center.lon + dx * model.sigma_deg).clamp(b.lon_min, b.lon_max),
                lat: (center.lat + dy * model.sigma_deg).clamp(b.lat_min, b.lat_max),
            }
        } else {
            GeoPoint {
                lon: self.rng.random_range(b.lon_min..b.lon_max),
                lat: self.rng.random_range(b.lat_min..b.lat_max),
            }
        }
    }

    fn embedding_for_class(&mut self, class: usize) -> Vec<f64> {
        let snr = self.spec.snr;
        (0..self.spec.embedding_dim)
            .map(|d| {
                let noise: f64 = StandardNormal.sample(&mut self.rng);
                snr * self.prototypes[class][d] + noise
            })
            .collect()
    }

    fn records(&mut self, count: usize, prefix: &str) -> Vec<GeoRecord> {
        (0..count)
            .map(|i| {
                let label = i % self.spec.classes;
                GeoRecord {
                    id: format!("{prefix}-{i:06}"),
                    point: self.point_for_class(label),
                    label: Some(label),
                    embedding: self.embedding_for_class(label),
                    tags: vec![label],
                }
            })
            .collect()
    }

    fn uniform_point(&mut self) -> GeoPoint {
        let b = self.spec.bbox;
        GeoPoint {
            lon: self.rng.random_range(b.lon_min..b.lon_max),
            lat: self.rng.random_range(b.lat_min..b.lat_max),
        }
    }

    fn corpus(&mut self) -> Vec<CorpusEntry> {
        let mut out = Vec::with_capacity(self.spec.classes * self.spec.corpus_per_class);
        for class in 0..self.spec.classes {
            for _ in 0..self.spec.corpus_per_class {
                let point = if self.rng.random::<f64>() < self.spec.corpus_noise_frac {
                    self.uniform_point()
                } else {
                    self.point_for_class(class)
                };
                out.push(CorpusEntry {
                    point,
                    key: class,
                    weight: 1.0,
                });
            }
        }
        out
    }

    fn concept_corpus(&mut self) -> Vec<ConceptEntry> {
        let mut out = Vec::with_capacity(self.spec.classes * self.spec.concept_points_per_class);
        for class in 0..self.spec.classes {
            let concept = class % self.spec.concepts;
            for _ in 0..self.spec.concept_points_per_class {
                let point = self.point_for_class(class);
                let mut probs: Vec<f64> = (0..self.spec.concepts)
                    .map(|_| self.rng.random_range(0.0..0.1))
                    .collect();
                probs[concept] = self.rng.random_range(0.6..1.0);
                out.push(ConceptEntry {
                    point,
                    probs,
                });
            }
        }
        out
    }
}

/// Generate the full benchmark, deterministically for a given spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut generator = Generator::new(spec);
    let train = generator.records(spec.train_records, "train");
    let test = generator.records(spec.test_records, "test");
    let corpus = generator.corpus();
    let concepts = generator.concept_corpus();
    Ok(SynthOutput {
        train,
        test,
        corpus,
        concepts,
        class_models: generator.models,
    })
}
