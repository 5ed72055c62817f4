//! Bayesian location priors.
//!
//! The location prior P(c | long, lat) comes either from the labels of the
//! k nearest training records or from the radius-pooled hashtag histogram.
//! Under a uniform class prior, combining with the image posterior gives
//! scores proportional to P(c|I) / P(c) * P(c|long,lat).

use crate::geodata::{haversine_m, GeoPoint, SpatialIndex};
use crate::{Error, Result};

/// Probability vector over the class set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("class distribution", "empty".to_string()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("class distribution", "negative or non-finite entry".to_string()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "class distribution",
                format!("sums to {sum}, not 1"),
            ));
        }
        Ok(ClassDistribution { probs })
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("class distribution", "zero classes".to_string()));
        }
        Ok(ClassDistribution {
            probs: vec![1.0 / classes as f64; classes],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Label distribution of the k nearest training records in GPS space
/// (haversine; distance ties break by ascending record index), smoothed:
/// (count_c + eps) / (k + eps * classes). If `k` exceeds the training set,
/// every record is used.
pub fn knn_prior(
    train: &[(GeoPoint, usize)],
    query: GeoPoint,
    k: usize,
    classes: usize,
    epsilon: f64,
) -> Result<ClassDistribution> {
    if train.is_empty() {
        return Err(Error::invalid("knn prior", "empty training set".to_string()));
    }
    if k == 0 {
        return Err(Error::invalid("knn prior", "k must be >= 1".to_string()));
    }
    if epsilon < 0.0 {
        return Err(Error::invalid("epsilon", format!("{epsilon} negative")));
    }
    let k_eff = k.min(train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&a, &b| {
        haversine_m(query, train[a].0)
            .total_cmp(&haversine_m(query, train[b].0))
            .then(a.cmp(&b))
    });
    let mut counts = vec![0usize; classes];
    for &idx in &order[..k_eff] {
        let label = train[idx].1;
        if label >= classes {
            return Err(Error::invalid(
                "label",
                format!("{label} out of range for {classes} classes"),
            ));
        }
        counts[label] += 1;
    }
    let denom = k_eff as f64 + epsilon * classes as f64;
    ClassDistribution::new(counts.iter().map(|&c| (c as f64 + epsilon) / denom).collect())
}

/// Across-class normalized histogram at radius `r`, smoothed to a valid
/// distribution; an empty neighborhood yields the uniform distribution.
/// The index must be keyed by class ids.
pub fn radius_prior(
    point: GeoPoint,
    index: &SpatialIndex,
    r: f64,
    epsilon: f64,
) -> Result<ClassDistribution> {
    if epsilon < 0.0 {
        return Err(Error::invalid("epsilon", format!("{epsilon} negative")));
    }
    let classes = index.key_space();
    let counts = index.radius_aggregate(point, r)?;
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return ClassDistribution::uniform(classes);
    }
    let denom = 1.0 + epsilon * classes as f64;
    ClassDistribution::new(counts.iter().map(|&c| (c / total + epsilon) / denom).collect())
}

/// Posterior scores proportional to p_image(c) * prior(c) / p_class(c),
/// renormalized. Every p_class entry must be positive.
pub fn bayes_combine(
    p_image: &ClassDistribution,
    prior: &ClassDistribution,
    p_class: &ClassDistribution,
) -> Result<ClassDistribution> {
    if p_image.len() != prior.len() || p_image.len() != p_class.len() {
        return Err(Error::DimMismatch {
            context: "bayes combine".to_string(),
            expected: p_image.len(),
            actual: prior.len().min(p_class.len()),
        });
    }
    if p_class.probs().iter().any(|&p| p <= 0.0) {
        return Err(Error::invalid(
            "class prior",
            "zero entry; P(c) must be positive for Bayes combination".to_string(),
        ));
    }
    let scores: Vec<f64> = p_image
        .probs()
        .iter()
        .zip(prior.probs())
        .zip(p_class.probs())
        .map(|((&pi, &pr), &pc)| pi * pr / pc)
        .collect();
    let sum: f64 = scores.iter().sum();
    if sum <= 0.0 {
        return Err(Error::invalid(
            "bayes combine",
            "image posterior and location prior have disjoint support".to_string(),
        ));
    }
    ClassDistribution::new(scores.iter().map(|s| s / sum).collect())
}
