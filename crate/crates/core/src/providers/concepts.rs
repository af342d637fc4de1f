//! Synthetic embedding space: unit vectors realizing a configured cosine
//! matrix among concept labels.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, Error, Result};
use crate::semantic::FeatureVector;

/// Serialized form of a concept model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptConfig {
    pub dim: usize,
    pub labels: Vec<String>,
    /// Row-major pairwise cosines, `labels.len()` square.
    pub cosine: Vec<Vec<f64>>,
}

const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ConceptWorldModel {
    dim: usize,
    labels: Vec<String>,
    index: FxHashMap<String, usize>,
    vectors: Vec<FeatureVector>,
    cosine: Vec<Vec<f64>>,
}

impl ConceptWorldModel {
    /// Factorizes the cosine matrix into unit vectors of length `dim`.
    ///
    /// Negative eigenvalues are clipped to zero with a warning. If the
    /// matrix rank exceeds `dim`, only the leading `dim` components are
    /// kept. Rows are renormalized after either adjustment.
    pub fn from_config(cfg: ConceptConfig) -> Result<Self> {
        let n = cfg.labels.len();
        if n == 0 || cfg.dim == 0 {
            return Err(invalid_config("concept model needs at least one label and dim > 0"));
        }
        if cfg.cosine.len() != n || cfg.cosine.iter().any(|r| r.len() != n) {
            return Err(invalid_config("cosine matrix must be square over the labels"));
        }
        let mut index = FxHashMap::default();
        for (i, l) in cfg.labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(invalid_config(format!("duplicate concept label `{l}`")));
            }
        }
        for i in 0..n {
            if (cfg.cosine[i][i] - 1.0).abs() > SYMMETRY_TOL {
                return Err(invalid_config(format!("cosine diagonal at `{}` is not 1", cfg.labels[i])));
            }
            for j in 0..i {
                let (a, b) = (cfg.cosine[i][j], cfg.cosine[j][i]);
                if !a.is_finite() || (a - b).abs() > SYMMETRY_TOL || a.abs() > 1.0 + SYMMETRY_TOL {
                    return Err(invalid_config(format!(
                        "cosine entry ({}, {}) is not symmetric within [-1, 1]",
                        cfg.labels[i], cfg.labels[j]
                    )));
                }
            }
        }

        let gram = DMatrix::from_fn(n, n, |i, j| cfg.cosine[i][j]);
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

        let min_eig = eig.eigenvalues.min();
        if min_eig < -1e-9 {
            warn!("concept cosine matrix is not PSD (min eigenvalue {min_eig:.3e}); clipping");
        }
        let rank = order.iter().filter(|&&k| eig.eigenvalues[k] > 1e-12).count();
        if rank > cfg.dim {
            warn!("concept cosine matrix has rank {rank} > dim {}; truncating", cfg.dim);
        }

        let kept = &order[..n.min(cfg.dim)];
        let mut vectors = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = vec![0.0; cfg.dim];
            for (c, &k) in kept.iter().enumerate() {
                let lambda = eig.eigenvalues[k].max(0.0);
                v[c] = eig.eigenvectors[(i, k)] * lambda.sqrt();
            }
            let fv = FeatureVector::normalized(v).map_err(|_| {
                invalid_config(format!("concept `{}` has a degenerate embedding", cfg.labels[i]))
            })?;
            vectors.push(fv);
        }

        Ok(Self {
            dim: cfg.dim,
            labels: cfg.labels,
            index,
            vectors,
            cosine: cfg.cosine,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ConceptConfig = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_config(cfg)
    }

    pub fn to_config(&self) -> ConceptConfig {
        ConceptConfig {
            dim: self.dim,
            labels: self.labels.clone(),
            cosine: self.cosine.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    /// Configured cosine between two concepts.
    pub fn configured_cosine(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.cosine[self.index_of(a)?][self.index_of(b)?])
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_owned()))
    }

    pub fn embed(&self, label: &str) -> Result<FeatureVector> {
        Ok(self.vectors[self.index_of(label)?].clone())
    }

    pub fn vector(&self, index: usize) -> &FeatureVector {
        &self.vectors[index]
    }

    /// Household concept set used by the scene generator and the bundled
    /// landmark table.
    pub fn builtin() -> Self {
        Self::from_config(builtin_config()).expect("builtin concept model is valid")
    }
}

/// Rooms with their furniture. Each object is listed with the objects it
/// usually sits next to.
pub const HOUSEHOLD: &[(&str, &[(&str, &[&str])])] = &[
    (
        "living room",
        &[
            ("couch", &["coffee table", "tv"]),
            ("tv", &["couch"]),
            ("coffee table", &["couch"]),
            ("plant", &["couch"]),
        ],
    ),
    (
        "bedroom",
        &[
            ("bed", &["nightstand"]),
            ("nightstand", &["bed"]),
            ("wardrobe", &["bed"]),
        ],
    ),
    (
        "kitchen",
        &[
            ("fridge", &["counter"]),
            ("stove", &["counter"]),
            ("counter", &["stove"]),
        ],
    ),
    (
        "bathroom",
        &[
            ("toilet", &["sink"]),
            ("sink", &["toilet"]),
            ("bathtub", &["toilet"]),
        ],
    ),
    (
        "dining room",
        &[
            ("dining table", &["chair"]),
            ("chair", &["dining table"]),
            ("cabinet", &["dining table"]),
        ],
    ),
    (
        "office",
        &[("desk", &["bookshelf"]), ("bookshelf", &["desk"])],
    ),
];

/// Named areas inside rooms: (label, room, anchor object).
pub const REGIONS: &[(&str, &str, &str)] = &[
    ("living room seating area", "living room", "couch"),
    ("living room tv wall", "living room", "tv"),
    ("living room window corner", "living room", "plant"),
    ("bedroom sleeping area", "bedroom", "bed"),
    ("bedroom closet side", "bedroom", "wardrobe"),
    ("kitchen cooking area", "kitchen", "stove"),
    ("kitchen storage wall", "kitchen", "fridge"),
    ("bathroom toilet corner", "bathroom", "toilet"),
    ("bathroom vanity area", "bathroom", "sink"),
    ("dining room table area", "dining room", "dining table"),
    ("dining room sideboard wall", "dining room", "cabinet"),
    ("office work area", "office", "desk"),
    ("office reading corner", "office", "bookshelf"),
];

pub const BUILTIN_DIM: usize = 64;

const ROOM_WEIGHT: f64 = 1.5;
const NEIGHBOR_WEIGHT: f64 = 0.6;
const REGION_ROOM_WEIGHT: f64 = 1.5;
const REGION_ANCHOR_WEIGHT: f64 = 0.8;

/// Builds the household cosine matrix from sparse latent factors: one
/// factor per room, object and region, combined with fixed weights.
pub fn builtin_config() -> ConceptConfig {
    let mut factors: FxHashMap<&str, usize> = FxHashMap::default();
    let names = HOUSEHOLD
        .iter()
        .flat_map(|(room, objects)| std::iter::once(*room).chain(objects.iter().map(|(o, _)| *o)))
        .chain(REGIONS.iter().map(|(r, _, _)| *r));
    for name in names {
        let k = factors.len();
        factors.entry(name).or_insert(k);
    }

    let mut labels: Vec<String> = Vec::new();
    let mut latent: Vec<Vec<(usize, f64)>> = Vec::new();
    for (room, objects) in HOUSEHOLD {
        labels.push((*room).into());
        latent.push(vec![(factors[room], 1.0)]);
        for (obj, near) in *objects {
            let mut v = vec![(factors[obj], 1.0), (factors[room], ROOM_WEIGHT)];
            v.extend(near.iter().map(|n| (factors[n], NEIGHBOR_WEIGHT)));
            labels.push((*obj).into());
            latent.push(v);
        }
    }
    for (region, room, anchor) in REGIONS {
        labels.push((*region).into());
        latent.push(vec![
            (factors[region], 1.0),
            (factors[room], REGION_ROOM_WEIGHT),
            (factors[anchor], REGION_ANCHOR_WEIGHT),
        ]);
    }

    let dense: Vec<Vec<f64>> = latent
        .iter()
        .map(|sparse| {
            let mut v = vec![0.0; factors.len()];
            for &(k, w) in sparse {
                v[k] += w;
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let cosine = dense
        .iter()
        .enumerate()
        .map(|(i, a)| {
            dense
                .iter()
                .enumerate()
                .map(|(j, b)| {
                    if i == j {
                        1.0
                    } else {
                        a.iter().zip(b).map(|(x, y)| x * y).sum()
                    }
                })
                .collect()
        })
        .collect();

    ConceptConfig {
        dim: BUILTIN_DIM,
        labels,
        cosine,
    }
}
