//! Scratch harness for tuning the synthetic benchmark. Run with
//! `cargo test --test calibrate_scratch -- --nocapture --ignored`.

use geoclass::dataset::extract;
use geoclass::eval::compute_metrics;
use geoclass::experiment::predictions;
use geoclass::features::{FeatureConfig, FeatureKind, RadiiSet, Resources};
use geoclass::geodata::{build_index, GridSpec};
use geoclass::net::{train, NetworkConfig, PartKind, PartSpec, TrainConfig};
use geoclass::synth::{generate, SynthSpec};

fn net_config(cache: &geoclass::dataset::FeatureCache, kinds: &[&str], rl: usize, classes: usize) -> NetworkConfig {
    let parts = kinds
        .iter()
        .map(|name| {
            let idx = cache.part_index(name).unwrap();
            let decl = &cache.manifest.parts[idx];
            let kind = match (decl.bank_fns, rl) {
                (Some(fn_count), replicas) if replicas > 0 => PartKind::Radius { fn_count, replicas },
                _ => PartKind::Vector { dim: decl.dim },
            };
            PartSpec {
                name: decl.name.clone(),
                kind,
            }
        })
        .collect();
    NetworkConfig {
        parts,
        pre_cat: 0,
        post_cat: 0,
        classes,
        dropout: 0.0,
        radius_min: 1000.0,
        radius_max: 10_000.0,
    }
}

#[test]
#[ignore]
fn calibrate() {
    let t0 = std::time::Instant::now();
    for snr in [1.6, 2.0, 2.4] {
        let spec = SynthSpec {
            snr,
            seed: 20250809,
            ..SynthSpec::default()
        };
        let out = generate(&spec).unwrap();
        println!("[{:>6.1?}] generated snr={snr}", t0.elapsed());

        let pooling = GridSpec::new(25_000, 50_000, spec.bbox).unwrap();
        let index = build_index(out.corpus.clone(), pooling, spec.classes).unwrap();
        let resources = Resources {
            hashtag_index: Some(index),
            ..Resources::default()
        };
        let fc = FeatureConfig {
            embedding: true,
            gps_grid: None,
            map: false,
            acs: false,
            hashtag: true,
            visual: false,
            radii: RadiiSet::paper_default(),
        };
        let train_cache = extract(&out.train, &fc, &resources, spec.classes).unwrap();
        let test_cache = extract(&out.test, &fc, &resources, spec.classes).unwrap();
        println!("[{:>6.1?}] extracted", t0.elapsed());

        let tc = TrainConfig {
            seed: 20250809,
            ..TrainConfig::default()
        };
        for (name, kinds, rl) in [
            ("image-only", vec!["embedding"], 0),
            ("image+hashtag", vec!["embedding", "hashtag"], 0),
            ("image+hashtag RL5", vec!["embedding", "hashtag"], 5),
            ("image+hashtag RL10", vec!["embedding", "hashtag"], 10),
        ] {
            let cfg = net_config(&train_cache, &kinds, rl, spec.classes);
            let model = train(&train_cache.to_samples(&cfg).unwrap(), cfg, &tc).unwrap();
            let report = compute_metrics(&predictions(&model, &test_cache).unwrap());
            println!(
                "[{:>6.1?}] snr={snr} {name}: mAP {:.4} acc1 {:.4} acc5 {:.4}",
                t0.elapsed(),
                report.mean_ap.unwrap(),
                report.acc1.unwrap(),
                report.acc5.unwrap()
            );
        }
    }
}
