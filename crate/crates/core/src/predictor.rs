//! Random-forest regressors that forecast time-varying coefficients from
//! exogenous covariates.
//!
//! Trees are CART regressors grown on bootstrap resamples with the
//! squared-error criterion, considering every feature at every split.
//! Each tree owns a seed drawn up front, so trees train in parallel and
//! the forest is identical for any thread count.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discovery::CoefficientTrack;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Resample the training rows with replacement for every tree.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 5000,
            max_depth: 5,
            min_samples_split: 10,
            min_samples_leaf: 5,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config(
                "forest needs trees >= 1, max_depth >= 1, min_samples_leaf >= 1".into(),
            ));
        }
        if self.min_samples_split < 2 * self.min_samples_leaf {
            return Err(Error::Config(format!(
                "min_samples_split ({}) must be >= 2 * min_samples_leaf ({})",
                self.min_samples_split, self.min_samples_leaf
            )));
        }
        Ok(())
    }
}

/// Tree node in flat storage. Leaves have no children; internal nodes send
/// `x[feature] <= threshold` to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
    pub leaf: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.leaf {
                return n.value;
            }
            i = if x[n.feature] <= n.threshold {
                n.left
            } else {
                n.right
            };
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.leaf {
                0
            } else {
                1 + go(t, n.left).max(go(t, n.right))
            }
        }
        go(self, 0)
    }
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    config: &'a ForestConfig,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    position: usize,
}

impl Grower<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let value = running_mean(rows.iter().map(|&r| self.y[r]));
        self.nodes.push(Node {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
            leaf: true,
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        if depth >= self.config.max_depth || rows.len() < self.config.min_samples_split {
            return self.leaf(rows);
        }
        let Some(split) = self.best_split(rows) else {
            return self.leaf(rows);
        };
        let f = split.feature;
        rows.sort_by(|&a, &b| self.x[(a, f)].total_cmp(&self.x[(b, f)]).then(a.cmp(&b)));
        let value = running_mean(rows.iter().map(|&r| self.y[r]));
        let id = self.nodes.len();
        self.nodes.push(Node {
            feature: f,
            threshold: split.threshold,
            left: 0,
            right: 0,
            value,
            leaf: false,
        });
        let (l, r) = rows.split_at_mut(split.position);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        id
    }

    /// Split maximizing the squared-error reduction; `None` if no split
    /// satisfies the leaf constraint or reduces the error.
    fn best_split(&self, rows: &[usize]) -> Option<Split> {
        let n = rows.len();
        let leaf = self.config.min_samples_leaf;
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let parent = total * total / n as f64;
        let sse: f64 = rows.iter().map(|&r| self.y[r] * self.y[r]).sum::<f64>() - parent;
        let mut best: Option<(f64, Split)> = None;
        let mut order = rows.to_vec();
        for f in 0..self.x.ncols() {
            order.sort_by(|&a, &b| self.x[(a, f)].total_cmp(&self.x[(b, f)]).then(a.cmp(&b)));
            let mut left = 0.0;
            for pos in 1..n {
                left += self.y[order[pos - 1]];
                if pos < leaf || n - pos < leaf {
                    continue;
                }
                let (lo, hi) = (self.x[(order[pos - 1], f)], self.x[(order[pos], f)]);
                if lo >= hi {
                    continue;
                }
                let right = total - left;
                let score = left * left / pos as f64 + right * right / (n - pos) as f64;
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((
                        score,
                        Split {
                            feature: f,
                            threshold,
                            position: pos,
                        },
                    ));
                }
            }
        }
        let (score, split) = best?;
        let gain = score - parent;
        (gain > 1e-12 * sse.abs().max(f64::MIN_POSITIVE) && gain > 0.0).then_some(split)
    }
}

/// Incremental mean; exact when every value is equal.
fn running_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    for (k, v) in values.enumerate() {
        mean += (v - mean) / (k + 1) as f64;
    }
    mean
}

fn grow_tree(x: &DMatrix<f64>, y: &[f64], rows: &mut [usize], config: &ForestConfig) -> Tree {
    let mut g = Grower {
        x,
        y,
        config,
        nodes: Vec::new(),
    };
    g.grow(rows, 0);
    Tree { nodes: g.nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        running_mean(self.trees.iter().map(|t| t.predict(x)))
    }
}

/// Train a forest on `features` (rows = samples) against `targets`.
pub fn train_forest(
    features: &DMatrix<f64>,
    targets: &[f64],
    config: &ForestConfig,
) -> Result<Forest> {
    config.validate()?;
    let n = features.nrows();
    if targets.len() != n {
        return Err(Error::mismatch(format!(
            "{n} feature rows but {} targets",
            targets.len()
        )));
    }
    if n < config.min_samples_split {
        return Err(Error::invalid(format!(
            "{n} samples, fewer than min_samples_split = {}",
            config.min_samples_split
        )));
    }
    if features.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training data"));
    }
    let mut seeder = rng::stream(config.seed, &[0xF0]);
    let seeds: Vec<u64> = (0..config.trees).map(|_| seeder.random()).collect();
    let trees = seeds
        .into_par_iter()
        .map(|seed| {
            let mut rows: Vec<usize> = if config.bootstrap {
                let mut r = rng::stream(seed, &[]);
                (0..n).map(|_| r.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(features, targets, &mut rows, config)
        })
        .collect();
    Ok(Forest { trees })
}

/// Per-coefficient training data: the shared feature matrix and one target
/// series per (state, varying term position).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: DMatrix<f64>,
    pub targets: Vec<Vec<Vec<f64>>>,
}

/// Label every training step with the value of the window that contains it.
pub fn build_training_set(
    track: &CoefficientTrack,
    covariates: &DMatrix<f64>,
) -> Result<TrainingSet> {
    if covariates.nrows() < track.rows {
        return Err(Error::mismatch(format!(
            "covariates cover {} rows, track needs {}",
            covariates.nrows(),
            track.rows
        )));
    }
    if covariates.ncols() == 0 {
        return Err(Error::invalid(
            "coefficient predictor needs at least one covariate",
        ));
    }
    let features = covariates.rows(0, track.rows).into_owned();
    if let Some(i) = (0..track.rows).find(|&i| features.row(i).iter().any(|v| !v.is_finite())) {
        return Err(Error::TrackGap(i));
    }
    let targets = track
        .states
        .iter()
        .enumerate()
        .map(|(k, st)| (0..st.terms.len()).map(|p| track.series(k, p)).collect())
        .collect();
    Ok(TrainingSet { features, targets })
}

/// One forest per time-varying coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPredictor {
    pub feature_names: Vec<String>,
    /// Varying term indices per state, aligned with `forests`.
    pub terms: Vec<Vec<usize>>,
    pub forests: Vec<Vec<Forest>>,
}

impl ParameterPredictor {
    pub fn train(
        track: &CoefficientTrack,
        covariates: &DMatrix<f64>,
        feature_names: &[String],
        config: &ForestConfig,
    ) -> Result<Self> {
        if feature_names.len() != covariates.ncols() {
            return Err(Error::mismatch(
                "feature names do not match covariate columns",
            ));
        }
        let set = build_training_set(track, covariates)?;
        let jobs: Vec<(usize, usize)> = set
            .targets
            .iter()
            .enumerate()
            .flat_map(|(k, t)| (0..t.len()).map(move |p| (k, p)))
            .collect();
        let trained: Vec<Forest> = jobs
            .par_iter()
            .map(|&(k, p)| {
                let cfg = ForestConfig {
                    seed: rng::derive(config.seed, &[k as u64, p as u64]),
                    ..*config
                };
                train_forest(&set.features, &set.targets[k][p], &cfg)
            })
            .collect::<Result<_>>()?;
        let mut it = trained.into_iter();
        let forests = set
            .targets
            .iter()
            .map(|t| it.by_ref().take(t.len()).collect())
            .collect();
        Ok(Self {
            feature_names: feature_names.to_vec(),
            terms: track.states.iter().map(|s| s.terms.clone()).collect(),
            forests,
        })
    }

    /// Per-sample coefficient forecasts: `[state][sample][position]`.
    pub fn predict_rows(&self, covariates: &DMatrix<f64>) -> Result<Vec<Vec<Vec<f64>>>> {
        if covariates.ncols() != self.feature_names.len() {
            return Err(Error::UnknownColumn(format!(
                "predictor expects covariates {:?}, got {} columns",
                self.feature_names,
                covariates.ncols()
            )));
        }
        let rows: Vec<Vec<f64>> = (0..covariates.nrows())
            .map(|i| covariates.row(i).iter().copied().collect())
            .collect();
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite covariates"));
        }
        Ok(self
            .forests
            .iter()
            .map(|fs| {
                rows.par_iter()
                    .map(|x| fs.iter().map(|f| f.predict(x)).collect())
                    .collect()
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
