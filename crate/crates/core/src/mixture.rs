//! Mixtures of per-step Gaussian models and skill chaining.
//!
//! One [`GpMixture`] holds a model per modal part of a skill's demo set with
//! priors proportional to part sizes. Consecutive skills chain through
//! transition matrices learned from demo co-membership (which demos flowed
//! from part k of skill j into part l of skill j+1), or, when demo identity
//! is lost between skills, through endpoint compatibility scored by KL
//! divergence.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gp::{fit, DiscreteGp, FitOptions, Trajectory};
use crate::manifold::{log_map, ManifoldPoint};
use crate::partition::{Partition, PartitionMethod};

#[derive(Clone, Debug)]
pub struct Mode {
    pub prior: f64,
    pub model: DiscreteGp,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PartitionProvenance {
    pub method: PartitionMethod,
    pub subsample_len: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// One skill as a weighted set of per-step Gaussian models over a common
/// manifold and step count. Priors are nonnegative and sum to 1.
#[derive(Clone, Debug)]
pub struct GpMixture {
    pub(crate) modes: Vec<Mode>,
    pub provenance: Option<PartitionProvenance>,
}

impl GpMixture {
    pub fn from_modes(modes: Vec<Mode>, provenance: Option<PartitionProvenance>) -> Result<Self> {
        let first = modes.first().ok_or(Error::Empty { what: "mixture modes" })?;
        let (spec, len) = (first.model.spec().clone(), first.model.len());
        for m in &modes {
            if m.model.spec() != &spec || m.model.len() != len {
                return Err(Error::InvalidValue {
                    what: "mixture modes",
                    detail: "modes must share manifold and step count".into(),
                });
            }
            if !(m.prior.is_finite() && m.prior >= 0.0) {
                return Err(Error::InvalidValue {
                    what: "mixture prior",
                    detail: format!("{}", m.prior),
                });
            }
        }
        let total: f64 = modes.iter().map(|m| m.prior).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidValue {
                what: "mixture priors",
                detail: format!("sum {total}, expected 1"),
            });
        }
        Ok(Self { modes, provenance })
    }

    /// Wrap a single model as a trivial one-mode mixture.
    pub fn single(model: DiscreteGp) -> Self {
        Self { modes: vec![Mode { prior: 1.0, model }], provenance: None }
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, m: usize) -> &Mode {
        &self.modes[m]
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn priors(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.prior).collect()
    }

    pub fn len(&self) -> usize {
        self.modes[0].model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn spec(&self) -> &crate::manifold::ManifoldSpec {
        self.modes[0].model.spec()
    }

    /// Draw a mode index from the prior. Exact: a zero-prior mode occupies a
    /// zero-length interval of the unit range and can never be drawn.
    pub fn sample_mode(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, m) in self.modes.iter().enumerate() {
            acc += m.prior;
            if u < acc {
                return i;
            }
        }
        // u landed in rounding slack at the top; return the last nonzero mode
        self.modes
            .iter()
            .rposition(|m| m.prior > 0.0)
            .expect("priors sum to 1, so some prior is positive")
    }

    /// Mean trajectory of every mode with its prior.
    pub fn predict_all(&self) -> Vec<(f64, Trajectory)> {
        self.modes.iter().map(|m| (m.prior, m.model.predict())).collect()
    }

    /// Mean trajectory of the highest-prior mode.
    pub fn predict_best(&self) -> Trajectory {
        let best = self
            .modes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.prior.partial_cmp(&b.1.prior).expect("finite priors"))
            .map(|(i, _)| i)
            .expect("non-empty");
        self.modes[best].model.predict()
    }
}

/// Fit one model per partition part. Every part needs at least two demos.
/// All modes are fitted to a common step count: the maximum over parts of
/// the part's rounded mean demo length, so that mode trajectories stay
/// step-aligned within the skill.
pub fn fit_mixture(
    demos: &[Trajectory],
    partition: &Partition,
    opts: &FitOptions,
) -> Result<GpMixture> {
    if partition.labels().len() != demos.len() {
        return Err(Error::DimensionMismatch {
            context: "partition labels",
            expected: demos.len(),
            got: partition.labels().len(),
        });
    }
    let parts = partition.parts();
    for (idx, part) in parts.iter().enumerate() {
        if part.len() < 2 {
            return Err(Error::PartTooSmall { part: idx, got: part.len(), need: 2 });
        }
    }
    let part_demos: Vec<Vec<Trajectory>> = parts
        .iter()
        .map(|part| part.iter().map(|i| demos[*i].clone()).collect())
        .collect();
    let common_len = part_demos
        .iter()
        .map(|d| crate::gp::mean_length(d))
        .max()
        .expect("at least one part");
    let mut fit_opts = opts.clone();
    fit_opts.target_len = Some(common_len);

    let n = demos.len() as f64;
    let mut modes = Vec::with_capacity(parts.len());
    for (part, demos) in parts.iter().zip(&part_demos) {
        modes.push(Mode {
            prior: part.len() as f64 / n,
            model: fit(demos, &fit_opts)?,
        });
    }
    GpMixture::from_modes(
        modes,
        Some(PartitionProvenance {
            method: partition.method,
            subsample_len: partition.subsample_len,
            seed: None,
        }),
    )
}

/// A modal path through a chain of skills: one mode index per skill.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalPath {
    pub modes: Vec<usize>,
    pub probability: f64,
}

/// A sequence of skills executed back to back, with transition matrices
/// between consecutive skills. Row `T_j[k][l]` is the probability of
/// continuing into mode l of skill j+1 after executing mode k of skill j;
/// rows are sub-distributions (evidence can zero entries out).
#[derive(Clone, Debug)]
pub struct SkillChain {
    pub(crate) skills: Vec<GpMixture>,
    pub(crate) transitions: Vec<DMatrix<f64>>,
}

impl SkillChain {
    pub fn new(skills: Vec<GpMixture>, transitions: Vec<DMatrix<f64>>) -> Result<Self> {
        if skills.is_empty() {
            return Err(Error::Empty { what: "skill chain" });
        }
        if transitions.len() + 1 != skills.len() {
            return Err(Error::DimensionMismatch {
                context: "transition matrices",
                expected: skills.len() - 1,
                got: transitions.len(),
            });
        }
        for (j, t) in transitions.iter().enumerate() {
            if t.nrows() != skills[j].n_modes() || t.ncols() != skills[j + 1].n_modes() {
                return Err(Error::InvalidValue {
                    what: "transition matrix",
                    detail: format!(
                        "junction {j}: {}x{} for {} -> {} modes",
                        t.nrows(),
                        t.ncols(),
                        skills[j].n_modes(),
                        skills[j + 1].n_modes()
                    ),
                });
            }
            for v in t.iter() {
                if !(v.is_finite() && (0.0..=1.0 + 1e-9).contains(v)) {
                    return Err(Error::InvalidValue {
                        what: "transition entry",
                        detail: format!("{v}"),
                    });
                }
            }
            for k in 0..t.nrows() {
                let s: f64 = t.row(k).iter().sum();
                if s > 1.0 + 1e-9 {
                    return Err(Error::InvalidValue {
                        what: "transition row",
                        detail: format!("junction {j} row {k} sums to {s}"),
                    });
                }
            }
        }
        Ok(Self { skills, transitions })
    }

    pub fn n_skills(&self) -> usize {
        self.skills.len()
    }

    pub fn skill(&self, j: usize) -> &GpMixture {
        &self.skills[j]
    }

    pub fn skills(&self) -> &[GpMixture] {
        &self.skills
    }

    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transitions
    }

    /// Mode distribution at the first skill.
    pub fn initial_distribution(&self) -> Vec<f64> {
        self.skills[0].priors()
    }

    /// Probability of a full modal path: initial prior times the product of
    /// junction transitions.
    pub fn modal_path_probability(&self, path: &[usize]) -> Result<f64> {
        if path.len() != self.skills.len() {
            return Err(Error::DimensionMismatch {
                context: "modal path",
                expected: self.skills.len(),
                got: path.len(),
            });
        }
        for (j, m) in path.iter().enumerate() {
            if *m >= self.skills[j].n_modes() {
                return Err(Error::InvalidValue {
                    what: "modal path",
                    detail: format!("mode {m} out of range for skill {j}"),
                });
            }
        }
        let mut p = self.skills[0].modes[path[0]].prior;
        for (j, t) in self.transitions.iter().enumerate() {
            p *= t[(path[j], path[j + 1])];
        }
        Ok(p)
    }

    /// All modal paths with nonzero probability. The path count is the
    /// product of mode counts; callers keep chains small.
    pub fn enumerate_paths(&self) -> Vec<ModalPath> {
        let mut paths = Vec::new();
        let mut current = Vec::with_capacity(self.skills.len());
        self.enumerate_rec(0, 1.0, &mut current, &mut paths);
        paths
    }

    fn enumerate_rec(
        &self,
        skill: usize,
        prob: f64,
        current: &mut Vec<usize>,
        out: &mut Vec<ModalPath>,
    ) {
        if skill == self.skills.len() {
            out.push(ModalPath { modes: current.clone(), probability: prob });
            return;
        }
        for m in 0..self.skills[skill].n_modes() {
            let p = if skill == 0 {
                self.skills[0].modes[m].prior
            } else {
                self.transitions[skill - 1][(current[skill - 1], m)]
            };
            if p <= 0.0 {
                continue;
            }
            current.push(m);
            self.enumerate_rec(skill + 1, prob * p, current, out);
            current.pop();
        }
    }

    /// Ancestral sampling of a modal path. Junction rows are renormalized
    /// for the draw; a row without mass is a dead end and errors.
    pub fn sample_modal_path(&self, rng: &mut impl Rng) -> Result<ModalPath> {
        let mut modes = Vec::with_capacity(self.skills.len());
        let first = self.skills[0].sample_mode(rng);
        modes.push(first);
        for (j, t) in self.transitions.iter().enumerate() {
            let prev = modes[j];
            let row = t.row(prev);
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(Error::DeadEnd { junction: j, mode: prev });
            }
            let u: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (l, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = Some(l);
                    break;
                }
            }
            let pick = pick.unwrap_or_else(|| {
                row.iter().rposition(|p| *p > 0.0).expect("total > 0")
            });
            modes.push(pick);
        }
        let probability = self.modal_path_probability(&modes)?;
        Ok(ModalPath { modes, probability })
    }

    /// Concatenate the mean trajectories of the modes along a path.
    pub fn regress(&self, path: &[usize]) -> Result<Trajectory> {
        // validates path shape and range
        let _ = self.modal_path_probability(path)?;
        let spec = self.skills[0].spec().clone();
        let mut points = Vec::new();
        for (j, m) in path.iter().enumerate() {
            let model = &self.skills[j].modes[*m].model;
            if model.spec() != &spec {
                return Err(Error::SpecMismatch {
                    expected: spec.to_string(),
                    got: model.spec().to_string(),
                });
            }
            points.extend(model.predict().points().iter().cloned());
        }
        Trajectory::new("chain", points)
    }
}

/// Transition matrices from consecutive partitions of the same demo set:
/// `T_j[k][l] = |P_k ∩ Q_l| / |P_k|` where P partitions skill j's demos and
/// Q skill j+1's.
pub fn learn_transitions(partitions: &[&Partition]) -> Result<Vec<DMatrix<f64>>> {
    if partitions.len() < 2 {
        return Err(Error::InsufficientDemos { got: partitions.len(), need: 2 });
    }
    let n = partitions[0].labels().len();
    for p in partitions {
        if p.labels().len() != n {
            return Err(Error::DimensionMismatch {
                context: "partition demo count",
                expected: n,
                got: p.labels().len(),
            });
        }
    }
    let mut out = Vec::with_capacity(partitions.len() - 1);
    for w in partitions.windows(2) {
        let (p, q) = (w[0], w[1]);
        let mut t = DMatrix::zeros(p.n_parts(), q.n_parts());
        let mut sizes = vec![0.0f64; p.n_parts()];
        for (a, b) in p.labels().iter().zip(q.labels()) {
            t[(*a, *b)] += 1.0;
            sizes[*a] += 1.0;
        }
        for k in 0..p.n_parts() {
            for l in 0..q.n_parts() {
                t[(k, l)] /= sizes[k];
            }
        }
        out.push(t);
    }
    Ok(out)
}

/// KL divergence between diagonal Gaussians, charted in the tangent space
/// at the first mean.
fn diag_gaussian_kl(
    mu1: &ManifoldPoint,
    var1: &nalgebra::DVector<f64>,
    mu2: &ManifoldPoint,
    var2: &nalgebra::DVector<f64>,
) -> Result<f64> {
    let m = log_map(mu1, mu2)?;
    let mut kl = 0.0;
    for i in 0..var1.len() {
        kl += 0.5 * (var1[i] / var2[i] + m.coords[i] * m.coords[i] / var2[i] - 1.0
            + (var2[i] / var1[i]).ln());
    }
    Ok(kl)
}

/// Transition matrix between two skills without shared demo identity:
/// row k is `softmax_l( -KL( end of a.mode k || start of b.mode l ) )`.
/// A successor starting exactly where a predecessor ends (same variance)
/// has KL 0 and dominates accordingly.
pub fn kl_chain(a: &GpMixture, b: &GpMixture) -> Result<DMatrix<f64>> {
    if a.spec() != b.spec() {
        return Err(Error::SpecMismatch {
            expected: a.spec().to_string(),
            got: b.spec().to_string(),
        });
    }
    let last = a.len() - 1;
    let mut t = DMatrix::zeros(a.n_modes(), b.n_modes());
    for k in 0..a.n_modes() {
        let end = &a.modes[k].model;
        let mut kls = Vec::with_capacity(b.n_modes());
        for l in 0..b.n_modes() {
            let start = &b.modes[l].model;
            kls.push(diag_gaussian_kl(
                end.mean(last),
                end.var(last),
                start.mean(0),
                start.var(0),
            )?);
        }
        // exp(-KL) normalized, computed stably around the smallest KL
        let min = kls.iter().cloned().fold(f64::INFINITY, f64::min);
        let unnorm: Vec<f64> = kls.iter().map(|kl| (-(kl - min)).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        for (l, u) in unnorm.iter().enumerate() {
            t[(k, l)] = u / total;
        }
    }
    Ok(t)
}
