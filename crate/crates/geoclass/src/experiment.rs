//! Experiment orchestration: the composite commands behind the CLI.
//!
//! Each command resolves an [`ExperimentConfig`], runs the underlying
//! modules, writes its artifacts (caches, checkpoints, CSVs), and drops a
//! manifest echoing the fully resolved configuration and seed next to
//! them. All commands are deterministic for fixed inputs and seed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{bayes_combine, knn_prior, radius_prior, ClassDistribution};
use crate::dataset::{
    concept_triples, extract, read_cache, read_concepts, read_records, write_cache, FeatureCache,
};
use crate::eval::{compute_metrics, write_metrics_csv, MetricsReport, PredictionSet};
use crate::features::{FeatureConfig, FeatureKind, RadiiSet, RasterMap, Resources, ZipTable};
use crate::geodata::{build_index, read_corpus, BoundingBox, GeoRecord, GridSpec};
use crate::net::{
    load_checkpoint, save_checkpoint, train, write_loss_curve, NetworkConfig, PartKind, PartSpec,
    TrainConfig, TrainedModel,
};
use crate::selection::{estimate_distribution, select_classes, write_selection_csv};
use crate::{Error, Result};

/// Input file locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub train_records: PathBuf,
    pub test_records: PathBuf,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub concepts: Option<PathBuf>,
    #[serde(default)]
    pub maps_dir: Option<PathBuf>,
    #[serde(default)]
    pub zip_csv: Option<PathBuf>,
}

fn default_grid_dims() -> (usize, usize) {
    (100, 200)
}

fn default_pooling_dims() -> (usize, usize) {
    (25_000, 50_000)
}

fn default_dropout() -> f64 {
    0.5
}

/// One fully resolved experiment: which features, which architecture,
/// which data. The single `seed` drives initialization, shuffling,
/// dropout, and any synthetic generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub features: Vec<FeatureKind>,
    pub classes: usize,
    #[serde(default)]
    pub seed: u64,
    /// GPS-encoding grid (rows, cols); 1:2 keeps cells roughly square.
    #[serde(default = "default_grid_dims")]
    pub gps_grid: (usize, usize),
    /// Quantization grid for the context-pooling indices.
    #[serde(default = "default_pooling_dims")]
    pub pooling_grid: (usize, usize),
    #[serde(default = "BoundingBox::contiguous_us")]
    pub bbox: BoundingBox,
    #[serde(default = "RadiiSet::paper_default")]
    pub radii: RadiiSet,
    /// Per-feature fully connected width before concatenation; 0 = none.
    #[serde(default)]
    pub pre_cat: usize,
    /// Fully connected width after concatenation; 0 = none.
    #[serde(default)]
    pub post_cat: usize,
    /// Radius-learning replicas for context features; 0 = fixed histograms.
    #[serde(default)]
    pub rl_replicas: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataPaths,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Config("no features enabled".to_string()));
        }
        let mut sorted = self.features.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.features.len() {
            return Err(Error::Config("duplicate feature in config".to_string()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need >= 2 classes, got {}", self.classes)));
        }
        RadiiSet::new(self.radii.as_slice().to_vec())?;
        GridSpec::new(self.gps_grid.0, self.gps_grid.1, self.bbox)?;
        GridSpec::new(self.pooling_grid.0, self.pooling_grid.1, self.bbox)?;
        self.train.validate()?;
        Ok(())
    }

    fn has(&self, kind: FeatureKind) -> bool {
        self.features.contains(&kind)
    }

    /// Training recipe with the experiment seed applied.
    pub fn resolved_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn feature_config(&self) -> Result<FeatureConfig> {
        Ok(FeatureConfig {
            embedding: self.has(FeatureKind::Embedding),
            gps_grid: self
                .has(FeatureKind::GpsEncoding)
                .then(|| GridSpec::new(self.gps_grid.0, self.gps_grid.1, self.bbox))
                .transpose()?,
            map: self.has(FeatureKind::MapPatch),
            acs: self.has(FeatureKind::Acs),
            hashtag: self.has(FeatureKind::HashtagContext),
            visual: self.has(FeatureKind::VisualContext),
            radii: self.radii.clone(),
        })
    }

    /// Load raster maps, zip table, and context indices for the enabled
    /// features.
    pub fn load_resources(&self) -> Result<Resources> {
        let mut resources = Resources::default();
        if self.has(FeatureKind::MapPatch) {
            let dir = self
                .data
                .maps_dir
                .as_ref()
                .ok_or_else(|| Error::Config("map feature enabled but data.maps_dir not set".to_string()))?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().map(|e| e == "geor").unwrap_or(false))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::Config(format!("no .geor rasters in {}", dir.display())));
            }
            resources.maps = paths
                .iter()
                .map(|p| RasterMap::read(p))
                .collect::<Result<Vec<_>>>()?;
        }
        if self.has(FeatureKind::Acs) {
            let path = self
                .data
                .zip_csv
                .as_ref()
                .ok_or_else(|| Error::Config("acs feature enabled but data.zip_csv not set".to_string()))?;
            resources.zip_table = Some(ZipTable::read_csv(path)?);
        }
        let pooling = GridSpec::new(self.pooling_grid.0, self.pooling_grid.1, self.bbox)?;
        if self.has(FeatureKind::HashtagContext) {
            let path = self
                .data
                .corpus
                .as_ref()
                .ok_or_else(|| Error::Config("hashtag feature enabled but data.corpus not set".to_string()))?;
            let corpus = read_corpus(path)?;
            resources.hashtag_index = Some(build_index(corpus, pooling, self.classes)?);
        }
        if self.has(FeatureKind::VisualContext) {
            let path = self
                .data
                .concepts
                .as_ref()
                .ok_or_else(|| Error::Config("visual feature enabled but data.concepts not set".to_string()))?;
            let entries = read_concepts(path)?;
            let concept_count = entries
                .first()
                .map(|e| e.probs.len())
                .ok_or_else(|| Error::Config(format!("{}: empty concept corpus", path.display())))?;
            resources.visual_index = Some(build_index(concept_triples(&entries), pooling, concept_count)?);
        }
        Ok(resources)
    }

    /// Network architecture over a cache's parts, restricted to this
    /// experiment's feature set.
    pub fn network_config(&self, cache: &FeatureCache) -> Result<NetworkConfig> {
        let mut parts = Vec::new();
        for kind in FeatureKind::ALL {
            if !self.has(kind) {
                continue;
            }
            let idx = cache
                .part_index(kind.name())
                .ok_or_else(|| Error::Config(format!("cache has no part '{}'", kind.name())))?;
            let decl = &cache.manifest.parts[idx];
            let part_kind = match (decl.bank_fns, self.rl_replicas) {
                (Some(fn_count), replicas) if replicas > 0 => PartKind::Radius {
                    fn_count,
                    replicas,
                },
                _ => PartKind::Vector { dim: decl.dim },
            };
            parts.push(PartSpec {
                name: decl.name.clone(),
                kind: part_kind,
            });
        }
        let config = NetworkConfig {
            parts,
            pre_cat: self.pre_cat,
            post_cat: self.post_cat,
            classes: self.classes,
            dropout: self.dropout,
            radius_min: self.radii.min(),
            radius_max: self.radii.max(),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Write the resolved config next to a command's outputs.
pub fn write_manifest(path: &Path, command: &str, config: &impl Serialize) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a, T: Serialize> {
        command: &'a str,
        config: &'a T,
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(
        &mut w,
        &Manifest {
            command,
            config,
        },
    )
    .map_err(|e| Error::format(path, 0, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub const TRAIN_CACHE: &str = "cache-train.jsonl";
pub const TEST_CACHE: &str = "cache-test.jsonl";

/// Extract features for the train and test record files into
/// `cache-train.jsonl` / `cache-test.jsonl` under `out_dir`.
pub fn run_extract(config: &ExperimentConfig, out_dir: &Path) -> Result<(FeatureCache, FeatureCache)> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let feature_config = config.feature_config()?;
    let resources = config.load_resources()?;
    let train_records = read_records(&config.data.train_records)?;
    let test_records = read_records(&config.data.test_records)?;
    let train_cache = extract(&train_records, &feature_config, &resources, config.classes)?;
    let test_cache = extract(&test_records, &feature_config, &resources, config.classes)?;
    write_cache(&out_dir.join(TRAIN_CACHE), &train_cache)?;
    write_cache(&out_dir.join(TEST_CACHE), &test_cache)?;
    write_manifest(&out_dir.join("extract-manifest.json"), "extract", config)?;
    Ok((train_cache, test_cache))
}

/// Train on a cache; writes `checkpoint.json`, `loss.csv`, the manifest,
/// and — when radius learning is on — `radii.csv`.
pub fn run_train(config: &ExperimentConfig, cache_path: &Path, out_dir: &Path) -> Result<TrainedModel> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cache = read_cache(cache_path)?;
    let net_config = config.network_config(&cache)?;
    let samples = cache.to_samples(&net_config)?;
    let model = train(&samples, net_config, &config.resolved_train())?;
    save_checkpoint(&out_dir.join("checkpoint.json"), &model)?;
    write_loss_curve(&out_dir.join("loss.csv"), &model.curve)?;
    if config.rl_replicas > 0 {
        write_radius_report(&out_dir.join("radii.csv"), &model)?;
    }
    write_manifest(&out_dir.join("train-manifest.json"), "train", config)?;
    Ok(model)
}

/// Score a cache with a trained model.
pub fn predictions(model: &TrainedModel, cache: &FeatureCache) -> Result<PredictionSet> {
    let samples = cache.to_samples(&model.network.config)?;
    let mut preds = PredictionSet::new(model.network.config.classes);
    for sample in &samples {
        let probs = model.network.predict(sample)?;
        preds.push(probs, sample.label)?;
    }
    Ok(preds)
}

/// Evaluate a checkpoint against a cache; writes `metrics.csv`.
pub fn run_eval(checkpoint: &Path, cache_path: &Path, out_csv: &Path) -> Result<MetricsReport> {
    let model = load_checkpoint(checkpoint)?;
    let cache = read_cache(cache_path)?;
    let preds = predictions(&model, &cache)?;
    let report = compute_metrics(&preds);
    write_metrics_csv(out_csv, &report)?;
    Ok(report)
}

/// Write per-record class probabilities as CSV.
pub fn run_predict(checkpoint: &Path, cache_path: &Path, out_csv: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let cache = read_cache(cache_path)?;
    // Prediction does not need labels; substitute 0 where missing.
    let mut relabeled = cache.clone();
    for r in &mut relabeled.records {
        r.label = Some(r.label.unwrap_or(0));
    }
    let samples = relabeled.to_samples(&model.network.config)?;
    let file = File::create(out_csv).map_err(|e| Error::io(out_csv, e))?;
    let mut w = BufWriter::new(file);
    let classes = model.network.config.classes;
    write!(w, "id,predicted").map_err(|e| Error::io(out_csv, e))?;
    for c in 0..classes {
        write!(w, ",p{c}").map_err(|e| Error::io(out_csv, e))?;
    }
    writeln!(w).map_err(|e| Error::io(out_csv, e))?;
    for (record, sample) in cache.records.iter().zip(&samples) {
        let probs = model.network.predict(sample)?;
        let predicted = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        write!(w, "{},{predicted}", record.id).map_err(|e| Error::io(out_csv, e))?;
        for p in &probs {
            write!(w, ",{p}").map_err(|e| Error::io(out_csv, e))?;
        }
        writeln!(w).map_err(|e| Error::io(out_csv, e))?;
    }
    w.flush().map_err(|e| Error::io(out_csv, e))
}

/// Learned radii, one row per (feature, normalization, class, replica),
/// replicas sorted ascending per class.
pub fn write_radius_report(path: &Path, model: &TrainedModel) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "feature,normalization,class,replica,rho_m").map_err(|e| Error::io(path, e))?;
    let config = &model.network.config;
    for (spec, path_params) in config.parts.iter().zip(&model.network.params.paths) {
        let (rho, fn_count) = match (&path_params.rho, spec.kind) {
            (Some(rho), PartKind::Radius { fn_count, .. }) => (rho, fn_count),
            _ => continue,
        };
        let keys = fn_count / 2;
        for h in 0..fn_count {
            let norm = if h < keys { "across" } else { "within" };
            let class = h % keys;
            let mut radii: Vec<f64> = (0..rho.cols()).map(|k| rho.get(h, k)).collect();
            radii.sort_by(f64::total_cmp);
            for (replica, r) in radii.iter().enumerate() {
                writeln!(w, "{},{norm},{class},{replica},{r}", spec.name).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Which location prior the baseline command applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Knn,
    Radius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOptions {
    /// Priors to run; both by default.
    pub priors: Vec<PriorKind>,
    pub k: usize,
    pub radius_m: f64,
    pub epsilon: f64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            priors: vec![PriorKind::Knn, PriorKind::Radius],
            k: 100,
            radius_m: 4000.0,
            epsilon: 1e-6,
        }
    }
}

/// Image-only model combined with Bayesian location priors. Trains the
/// image-only classifier (no pre/post-cat), then rescores each test record
/// with each prior; writes `baseline.csv` with one row per method plus the
/// per-method metrics CSVs.
pub fn run_baseline(
    config: &ExperimentConfig,
    options: &BaselineOptions,
    out_dir: &Path,
) -> Result<Vec<(String, MetricsReport)>> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // Image-only classifier, mirroring the no-pre/post-cat baseline rows.
    let image_config = ExperimentConfig {
        name: format!("{}-image-only", config.name),
        features: vec![FeatureKind::Embedding],
        pre_cat: 0,
        post_cat: 0,
        rl_replicas: 0,
        ..config.clone()
    };
    let feature_config = image_config.feature_config()?;
    let resources = Resources::default();
    let train_records = read_records(&config.data.train_records)?;
    let test_records = read_records(&config.data.test_records)?;
    let train_cache = extract(&train_records, &feature_config, &resources, config.classes)?;
    let test_cache = extract(&test_records, &feature_config, &resources, config.classes)?;
    let net_config = image_config.network_config(&train_cache)?;
    let model = train(&train_cache.to_samples(&net_config)?, net_config, &config.resolved_train())?;

    let image_preds = predictions(&model, &test_cache)?;
    let mut results = vec![("image-only".to_string(), compute_metrics(&image_preds))];

    let train_points: Vec<_> = train_records
        .iter()
        .map(|r| {
            r.label
                .map(|l| (r.point, l))
                .ok_or_else(|| Error::Config(format!("train record '{}' has no label", r.id)))
        })
        .collect::<Result<_>>()?;
    let p_class = ClassDistribution::uniform(config.classes)?;

    for prior_kind in &options.priors {
        let index = match prior_kind {
            PriorKind::Radius => {
                let path = config.data.corpus.as_ref().ok_or_else(|| {
                    Error::Config("radius prior needs data.corpus".to_string())
                })?;
                let grid = GridSpec::new(config.pooling_grid.0, config.pooling_grid.1, config.bbox)?;
                Some(build_index(read_corpus(path)?, grid, config.classes)?)
            }
            PriorKind::Knn => None,
        };
        let mut preds = PredictionSet::new(config.classes);
        for (record, image_probs) in test_records.iter().zip(image_preds.scores()) {
            let prior = match prior_kind {
                PriorKind::Knn => {
                    knn_prior(&train_points, record.point, options.k, config.classes, options.epsilon)?
                }
                PriorKind::Radius => radius_prior(
                    record.point,
                    index.as_ref().unwrap(),
                    options.radius_m,
                    options.epsilon,
                )?,
            };
            let p_image = ClassDistribution::new(image_probs.clone())?;
            let combined = bayes_combine(&p_image, &prior, &p_class)?;
            preds.push(combined.probs().to_vec(), record.label.unwrap_or(0))?;
        }
        let name = match prior_kind {
            PriorKind::Knn => format!("bayes-knn-{}", options.k),
            PriorKind::Radius => format!("bayes-radius-{}m", options.radius_m),
        };
        results.push((name, compute_metrics(&preds)));
    }

    let summary_path = out_dir.join("baseline.csv");
    let file = File::create(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "method,mean_ap,acc1,acc5").map_err(|e| Error::io(&summary_path, e))?;
    for (name, report) in &results {
        writeln!(
            w,
            "{name},{},{},{}",
            report.mean_ap.unwrap_or(f64::NAN),
            report.acc1.unwrap_or(f64::NAN),
            report.acc5.unwrap_or(f64::NAN)
        )
        .map_err(|e| Error::io(&summary_path, e))?;
        write_metrics_csv(&out_dir.join(format!("metrics-{name}.csv")), report)?;
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;

    #[derive(Serialize)]
    struct BaselineManifest<'a> {
        config: &'a ExperimentConfig,
        options: &'a BaselineOptions,
    }
    write_manifest(
        &out_dir.join("baseline-manifest.json"),
        "baseline",
        &BaselineManifest {
            config,
            options,
        },
    )?;
    Ok(results)
}

/// KL class selection over a hashtag corpus: P from all points, Q_c per
/// class, smoothed with `alpha`; writes `class,kl_nats,rank`.
pub fn run_select(
    corpus_path: &Path,
    grid: GridSpec,
    alpha: f64,
    top_n: usize,
    out_csv: &Path,
) -> Result<Vec<(usize, f64)>> {
    let corpus = read_corpus(corpus_path)?;
    if corpus.is_empty() {
        return Err(Error::Config(format!("{}: empty corpus", corpus_path.display())));
    }
    let all: Vec<_> = corpus.iter().map(|c| c.point).collect();
    let p = estimate_distribution(&all, &grid, 0.0)?;
    let mut by_class: BTreeMap<usize, Vec<_>> = BTreeMap::new();
    for entry in &corpus {
        by_class.entry(entry.key).or_default().push(entry.point);
    }
    let q_by_class = by_class
        .into_iter()
        .map(|(class, points)| Ok((class, estimate_distribution(&points, &grid, alpha)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let ranked = select_classes(&p, &q_by_class, top_n)?;
    write_selection_csv(out_csv, &ranked)?;
    Ok(ranked)
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub features: String,
    pub pre_cat: usize,
    pub post_cat: usize,
    pub rl_replicas: usize,
    pub mean_ap: f64,
    pub acc1: f64,
    pub acc5: f64,
}

/// The ablation grid to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariants {
    pub feature_sets: Vec<Vec<FeatureKind>>,
    pub pre_cat_widths: Vec<usize>,
    pub rl_replicas: Vec<usize>,
}

impl AblationVariants {
    /// Feature ablation rows plus radius-learning variants for the context
    /// features, mirroring the feature / architecture / radius tables.
    pub fn standard(features: &[FeatureKind]) -> Self {
        let mut feature_sets = vec![vec![FeatureKind::Embedding]];
        for &kind in features {
            if kind != FeatureKind::Embedding {
                feature_sets.push(vec![FeatureKind::Embedding, kind]);
            }
        }
        if features.len() > 2 {
            feature_sets.push(features.to_vec());
        }
        AblationVariants {
            feature_sets,
            pre_cat_widths: vec![0, 256],
            rl_replicas: vec![0, 5, 10],
        }
    }
}

/// Run the ablation grid. Extraction happens once with the union feature
/// set; each cell trains and evaluates on its slice of the cache. Rows
/// land in `ablation.csv` in grid order.
pub fn run_ablate(
    config: &ExperimentConfig,
    variants: &AblationVariants,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut union = config.features.clone();
    for set in &variants.feature_sets {
        for kind in set {
            if !union.contains(kind) {
                union.push(*kind);
            }
        }
    }
    union.sort();
    let union_config = ExperimentConfig {
        features: union,
        ..config.clone()
    };
    let (train_cache, test_cache) = run_extract(&union_config, out_dir)?;

    let mut rows = Vec::new();
    for feature_set in &variants.feature_sets {
        let has_context = feature_set.iter().any(|k| k.is_context());
        for &pre_cat in &variants.pre_cat_widths {
            for &rl in &variants.rl_replicas {
                if rl > 0 && !has_context {
                    continue;
                }
                let cell = ExperimentConfig {
                    name: format!("{}-cell", config.name),
                    features: feature_set.clone(),
                    pre_cat,
                    rl_replicas: rl,
                    ..config.clone()
                };
                let net_config = cell.network_config(&train_cache)?;
                let model = train(
                    &train_cache.to_samples(&net_config)?,
                    net_config,
                    &cell.resolved_train(),
                )?;
                let report = compute_metrics(&predictions(&model, &test_cache)?);
                rows.push(AblationRow {
                    features: feature_set
                        .iter()
                        .map(|k| k.name())
                        .collect::<Vec<_>>()
                        .join("+"),
                    pre_cat,
                    post_cat: cell.post_cat,
                    rl_replicas: rl,
                    mean_ap: report.mean_ap.unwrap_or(f64::NAN),
                    acc1: report.acc1.unwrap_or(f64::NAN),
                    acc5: report.acc5.unwrap_or(f64::NAN),
                });
            }
        }
    }

    let path = out_dir.join("ablation.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "features,pre_cat,post_cat,rl_replicas,mean_ap,acc1,acc5").map_err(|e| Error::io(&path, e))?;
    for row in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            row.features, row.pre_cat, row.post_cat, row.rl_replicas, row.mean_ap, row.acc1, row.acc5
        )
        .map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    #[derive(Serialize)]
    struct AblateManifest<'a> {
        config: &'a ExperimentConfig,
        variants: &'a AblationVariants,
    }
    write_manifest(
        &out_dir.join("ablate-manifest.json"),
        "ablate",
        &AblateManifest {
            config,
            variants,
        },
    )?;
    Ok(rows)
}

/// Generate and write the synthetic benchmark files into `out_dir`:
/// `records-train.jsonl`, `records-test.jsonl`, `corpus.jsonl`,
/// `concepts.jsonl`, plus the manifest.
pub fn run_synth(spec: &crate::synth::SynthSpec, out_dir: &Path) -> Result<crate::synth::SynthOutput> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out = crate::synth::generate(spec)?;
    crate::dataset::write_records(&out_dir.join("records-train.jsonl"), &out.train)?;
    crate::dataset::write_records(&out_dir.join("records-test.jsonl"), &out.test)?;
    crate::geodata::write_corpus(&out_dir.join("corpus.jsonl"), &out.corpus)?;
    crate::dataset::write_concepts(&out_dir.join("concepts.jsonl"), &out.concepts)?;
    write_manifest(&out_dir.join("synth-manifest.json"), "synth", spec)?;
    Ok(out)
}

/// Data paths as laid out by [`run_synth`].
pub fn synth_data_paths(dir: &Path) -> DataPaths {
    DataPaths {
        train_records: dir.join("records-train.jsonl"),
        test_records: dir.join("records-test.jsonl"),
        corpus: Some(dir.join("corpus.jsonl")),
        concepts: Some(dir.join("concepts.jsonl")),
        maps_dir: None,
        zip_csv: None,
    }
}

#[allow(unused)]
fn records_by_id(records: &[GeoRecord]) -> BTreeMap<&str, &GeoRecord> {
    records.iter().map(|r| (r.id.as_str(), r)).collect()
}
