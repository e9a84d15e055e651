use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{EgcError, Result};
use crate::graph::{generate_graph, planted_partition, CsrGraph, GraphSpec};
use crate::matrix::Matrix;

/// Intra- and inter-community edge probabilities of the classification task.
pub const COMMUNITY_P_IN: f64 = 0.1;
pub const COMMUNITY_P_OUT: f64 = 0.01;
/// Mean shift of every community feature, `±` by community.
pub const COMMUNITY_SHIFT: f64 = 0.5;
pub const COMMUNITY_FEATURES: usize = 8;
/// Expected degree of the regression task's random graph.
pub const HOMOPHILY_DEGREE: f64 = 5.0;
pub const HOMOPHILY_FEATURES: usize = 4;
/// Share of nodes in the training split.
pub const TRAIN_FRACTION: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    HomophilyRegression,
    CommunityClassification,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::HomophilyRegression => "homophily",
            TaskKind::CommunityClassification => "community",
        })
    }
}

impl FromStr for TaskKind {
    type Err = EgcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "homophily" | "homophily_regression" | "regression" => Ok(TaskKind::HomophilyRegression),
            "community" | "community_classification" | "classification" => Ok(TaskKind::CommunityClassification),
            other => Err(EgcError::config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Regression(Vec<f64>),
    Classes { labels: Vec<usize>, num_classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(v) => v.len(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Model output width needed for these targets.
    pub fn output_dim(&self) -> usize {
        match self {
            Targets::Regression(_) => 1,
            Targets::Classes { num_classes, .. } => *num_classes,
        }
    }
}

/// A node-level task on one graph. `graph` carries no self-loops or
/// coefficients; models normalize it themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyTask {
    pub kind: TaskKind,
    pub graph: CsrGraph,
    pub features: Matrix<f32>,
    pub targets: Targets,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
}

impl ToyTask {
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        for (what, len) in [
            ("feature rows", self.features.rows()),
            ("target count", self.targets.len()),
            ("train mask", self.train_mask.len()),
            ("validation mask", self.val_mask.len()),
        ] {
            if len != n {
                return Err(EgcError::shape(what, n, len));
            }
        }
        if self.train_mask.iter().zip(&self.val_mask).any(|(a, b)| *a && *b) {
            return Err(EgcError::config("train and validation masks overlap"));
        }
        if !self.train_mask.contains(&true) {
            return Err(EgcError::config("empty training split"));
        }
        if let Targets::Classes { labels, num_classes } = &self.targets {
            if let Some(&l) = labels.iter().find(|&&l| l >= *num_classes) {
                return Err(EgcError::config(format!("label {l} not below {num_classes}")));
            }
        }
        self.features.ensure_finite("task features")
    }

    pub fn num_train(&self) -> usize {
        self.train_mask.iter().filter(|&&m| m).count()
    }
}

pub fn make_toy_task(kind: TaskKind, n: usize, seed: u64) -> Result<ToyTask> {
    if n < 10 {
        return Err(EgcError::config(format!("toy tasks need at least 10 nodes, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    match kind {
        TaskKind::CommunityClassification => {
            let (graph, labels) = planted_partition(&[n / 2, n - n / 2], COMMUNITY_P_IN, COMMUNITY_P_OUT, rng.random())?;
            let mut data = Vec::with_capacity(n * COMMUNITY_FEATURES);
            for &l in &labels {
                let shift = if l == 0 { -COMMUNITY_SHIFT } else { COMMUNITY_SHIFT };
                data.extend((0..COMMUNITY_FEATURES).map(|_| (shift + normal.sample(&mut rng)) as f32));
            }
            let (train_mask, val_mask) = split(n, &mut rng);
            Ok(ToyTask {
                kind,
                graph,
                features: Matrix::from_vec(n, COMMUNITY_FEATURES, data)?,
                targets: Targets::Classes { labels, num_classes: 2 },
                train_mask,
                val_mask,
            })
        }
        TaskKind::HomophilyRegression => {
            let p = (HOMOPHILY_DEGREE / (n - 1) as f64).min(1.0);
            let graph = generate_graph(&GraphSpec::ErdosRenyi { n, p }, rng.random())?;
            let hidden: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            homophily_task_from_hidden(graph, &hidden, rng.random())
        }
    }
}

/// Regression task whose target at `i` is the mean of `hidden` over `i`'s
/// self-inclusive neighborhood. The first feature is `hidden` itself, the
/// rest are noise.
pub fn homophily_task_from_hidden(graph: CsrGraph, hidden: &[f64], seed: u64) -> Result<ToyTask> {
    let n = graph.num_nodes();
    if hidden.len() != n {
        return Err(EgcError::shape("hidden feature length", n, hidden.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let looped = graph.add_self_loops();
    let targets = (0..n)
        .map(|i| {
            let nb = looped.neighbors(i);
            nb.iter().map(|&j| hidden[j as usize]).sum::<f64>() / nb.len() as f64
        })
        .collect();
    let mut data = Vec::with_capacity(n * HOMOPHILY_FEATURES);
    for &h in hidden {
        data.push(h as f32);
        data.extend((1..HOMOPHILY_FEATURES).map(|_| normal.sample(&mut rng) as f32));
    }
    let (train_mask, val_mask) = split(n, &mut rng);
    Ok(ToyTask {
        kind: TaskKind::HomophilyRegression,
        graph,
        features: Matrix::from_vec(n, HOMOPHILY_FEATURES, data)?,
        targets: Targets::Regression(targets),
        train_mask,
        val_mask,
    })
}

fn split<R: Rng>(n: usize, rng: &mut R) -> (Vec<bool>, Vec<bool>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let cut = ((n as f64) * TRAIN_FRACTION).round() as usize;
    let mut train = vec![false; n];
    for &i in &order[..cut] {
        train[i] = true;
    }
    let val = train.iter().map(|t| !t).collect();
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tasks_are_deterministic_and_well_formed() {
        for kind in [TaskKind::CommunityClassification, TaskKind::HomophilyRegression] {
            let a = make_toy_task(kind, 40, 3).unwrap();
            assert_eq!(a, make_toy_task(kind, 40, 3).unwrap());
            assert_ne!(a, make_toy_task(kind, 40, 4).unwrap());
            a.validate().unwrap();
            assert_eq!(a.num_train(), 28);
            assert!(!a.graph.has_self_loops());
        }
        assert!(make_toy_task(TaskKind::HomophilyRegression, 9, 0).is_err());
    }

    #[test]
    fn communities_are_denser_inside() {
        let t = make_toy_task(TaskKind::CommunityClassification, 100, 1).unwrap();
        let Targets::Classes { labels, .. } = &t.targets else { panic!() };
        let (mut inside, mut across) = (0, 0);
        for (u, v) in t.graph.edges() {
            if labels[u] == labels[v] {
                inside += 1;
            } else {
                across += 1;
            }
        }
        assert!(inside > 4 * across, "{inside} vs {across}");
    }

    #[test]
    fn constant_hidden_feature_gives_constant_targets() {
        let g = generate_graph(&GraphSpec::ErdosRenyi { n: 30, p: 0.2 }, 0).unwrap();
        let t = homophily_task_from_hidden(g, &[1.25; 30], 0).unwrap();
        let Targets::Regression(y) = &t.targets else { panic!() };
        assert!(y.iter().all(|&v| v == 1.25));
    }

    #[test]
    fn regression_target_is_neighborhood_mean() {
        let g = CsrGraph::from_undirected_edges(&[(0, 1), (1, 2)], 3).unwrap();
        let t = homophily_task_from_hidden(g, &[3.0, 6.0, 0.0], 0).unwrap();
        assert_eq!(t.targets, Targets::Regression(vec![4.5, 3.0, 3.0]));
    }

    #[test]
    fn task_names_parse() {
        assert_eq!("community".parse::<TaskKind>().unwrap(), TaskKind::CommunityClassification);
        assert_eq!(TaskKind::HomophilyRegression.to_string().parse::<TaskKind>().unwrap(), TaskKind::HomophilyRegression);
        assert!("mnist".parse::<TaskKind>().is_err());
    }
}
