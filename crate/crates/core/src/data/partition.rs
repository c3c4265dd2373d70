//! Labeled/unlabeled client partitioning under the three heterogeneity
//! settings.
//!
//! Per class, the example indices are shuffled once and consumed in order:
//! test hold-out first, then labeled shares, then unlabeled shares. Dirichlet
//! proportions `p ~ Dir(γ·1_K)` are turned into integer counts by the
//! largest-remainder rule (ties to the lowest client id).

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{ClientData, Dataset};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, SimRng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Labeled: fixed count per class per client. Unlabeled: even split.
    IidIid,
    /// Labeled as `IidIid`; unlabeled by a Dirichlet draw per class.
    IidDir,
    /// Labeled and unlabeled by two independent Dirichlet draws per class.
    DirDir,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::IidIid => "iid_iid",
            Setting::IidDir => "iid_dir",
            Setting::DirDir => "dir_dir",
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid_iid" => Ok(Setting::IidIid),
            "iid_dir" => Ok(Setting::IidDir),
            "dir_dir" => Ok(Setting::DirDir),
            other => Err(Error::InvalidArgument(format!("unknown setting `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub setting: Setting,
    pub client_count: usize,
    /// Labeled examples per class *per client* for the IID-labeled settings,
    /// per class *in total* (spread across clients) for `DirDir`.
    pub labeled: usize,
    pub dirichlet_gamma: f64,
    pub seed: u64,
    /// Fraction of each class held out as the test split.
    #[serde(default)]
    pub test_fraction: f64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.client_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "partition needs at least 2 clients, got {}",
                self.client_count
            )));
        }
        if !(self.dirichlet_gamma > 0.0 && self.dirichlet_gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Dirichlet concentration must be positive, got {}",
                self.dirichlet_gamma
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidArgument(format!(
                "test fraction must lie in [0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.labeled == 0 {
            return Err(Error::InvalidArgument(
                "labeled quota must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Source indices assigned to one client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientAssignment {
    pub id: usize,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// JSON-exportable record of where every source example went.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub setting: Setting,
    pub client_count: usize,
    pub dirichlet_gamma: f64,
    pub seed: u64,
    pub source_len: usize,
    pub clients: Vec<ClientAssignment>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Partition {
    pub clients: Vec<ClientData>,
    /// `None` when `test_fraction` is zero.
    pub test: Option<Dataset>,
    pub manifest: PartitionManifest,
}

/// Draws `p ~ Dirichlet(γ·1_k)` by normalising independent Gamma(γ, 1) samples.
pub fn dirichlet(gamma: f64, k: usize, rng: &mut SimRng) -> Vec<f64> {
    let dist = Gamma::new(gamma, 1.0).expect("gamma validated positive");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| dist.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|g| g / sum).collect();
        }
        // every sample underflowed; redraw
    }
}

/// Integer counts summing to `total`, proportional to `proportions`.
pub fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    // guard against float drift pushing the floor sum over the total
    let mut excess = counts.iter().sum::<usize>().saturating_sub(total);
    for c in counts.iter_mut().rev() {
        while excess > 0 && *c > 0 {
            *c -= 1;
            excess -= 1;
        }
    }
    counts
}

/// `total` items split as evenly as possible; the extra items go to clients
/// `offset, offset+1, …` (mod k).
fn even_split(total: usize, k: usize, offset: usize) -> Vec<usize> {
    let mut counts = vec![total / k; k];
    for j in 0..total % k {
        counts[(offset + j) % k] += 1;
    }
    counts
}

pub fn dirichlet_partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    spec.validate()?;
    let k = spec.client_count;
    let classes = dataset.class_count();
    let mut rng = stream_rng(spec.seed, Stream::Partition, &[]);

    let mut labeled: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    let mut unlabeled: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut test = Vec::new();

    for (class, mut pool) in dataset.class_indices().into_iter().enumerate() {
        pool.shuffle(&mut rng);
        let available = pool.len();
        let held = (spec.test_fraction * available as f64).round() as usize;
        let mut cursor = 0;
        test.extend_from_slice(&pool[..held]);
        cursor += held;

        let label_counts = match spec.setting {
            Setting::IidIid | Setting::IidDir => vec![spec.labeled; k],
            Setting::DirDir => {
                let p = dirichlet(spec.dirichlet_gamma, k, &mut rng);
                largest_remainder(&p, spec.labeled)
            }
        };
        let needed: usize = label_counts.iter().sum();
        let remaining = available - held;
        if needed > remaining {
            return Err(Error::Partition(format!(
                "class {class} needs {needed} labeled examples but only {remaining} remain after the test hold-out (shortfall {})",
                needed - remaining
            )));
        }
        for (client, &n) in label_counts.iter().enumerate() {
            labeled[client].extend(pool[cursor..cursor + n].iter().map(|&i| (class, i)));
            cursor += n;
        }

        let rest = available - cursor;
        let unl_counts = match spec.setting {
            Setting::IidIid => even_split(rest, k, class),
            Setting::IidDir | Setting::DirDir => {
                let p = dirichlet(spec.dirichlet_gamma, k, &mut rng);
                largest_remainder(&p, rest)
            }
        };
        for (client, &n) in unl_counts.iter().enumerate() {
            unlabeled[client].extend_from_slice(&pool[cursor..cursor + n]);
            cursor += n;
        }
        debug_assert_eq!(cursor, available);
    }

    ensure_min_labeled(&mut labeled, classes)?;

    let mut clients = Vec::with_capacity(k);
    let mut assignments = Vec::with_capacity(k);
    for (id, (lab, unl)) in labeled.iter().zip(&unlabeled).enumerate() {
        let lab_idx: Vec<usize> = lab.iter().map(|&(_, i)| i).collect();
        let (unl_features, hidden) = if unl.is_empty() {
            (None, Vec::new())
        } else {
            (
                Some(dataset.features().select_rows(unl)),
                unl.iter().map(|&i| dataset.labels()[i]).collect(),
            )
        };
        clients.push(ClientData::from_parts(
            dataset.features().select_rows(&lab_idx),
            lab.iter().map(|&(c, _)| c).collect(),
            unl_features,
            hidden,
            classes,
        ));
        assignments.push(ClientAssignment {
            id,
            labeled: lab_idx,
            unlabeled: unl.clone(),
        });
    }
    let test_set = if test.is_empty() {
        None
    } else {
        Some(dataset.subset(&test)?)
    };
    Ok(Partition {
        clients,
        test: test_set,
        manifest: PartitionManifest {
            setting: spec.setting,
            client_count: k,
            dirichlet_gamma: spec.dirichlet_gamma,
            seed: spec.seed,
            source_len: dataset.len(),
            clients: assignments,
            test,
        },
    })
}

/// Moves one labeled example to every client left without any, taking it
/// from the client holding the most labeled examples (lowest id on ties),
/// choosing that donor's lowest class first.
fn ensure_min_labeled(labeled: &mut [Vec<(usize, usize)>], classes: usize) -> Result<()> {
    let total: usize = labeled.iter().map(Vec::len).sum();
    if total < labeled.len() {
        return Err(Error::Partition(format!(
            "{} clients need at least one labeled example each but only {total} were allocated (shortfall {})",
            labeled.len(),
            labeled.len() - total
        )));
    }
    while let Some(empty) = labeled.iter().position(Vec::is_empty) {
        let donor = (0..labeled.len())
            .max_by(|&a, &b| labeled[a].len().cmp(&labeled[b].len()).then(b.cmp(&a)))
            .unwrap();
        let class = (0..classes)
            .find(|&c| labeled[donor].iter().any(|&(lc, _)| lc == c))
            .unwrap();
        let pos = labeled[donor].iter().position(|&(lc, _)| lc == class).unwrap();
        let moved = labeled[donor].remove(pos);
        labeled[empty].push(moved);
    }
    Ok(())
}

impl Partition {
    pub fn labeled_counts(&self) -> Vec<usize> {
        self.clients.iter().map(ClientData::labeled_len).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_sums_and_ties() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[0.1, 0.6, 0.3], 10), vec![1, 6, 3]);
        assert_eq!(largest_remainder(&[0.25; 4], 2), vec![1, 1, 0, 0]);
        let p = [0.123, 0.456, 0.421];
        assert_eq!(largest_remainder(&p, 997).iter().sum::<usize>(), 997);
    }

    #[test]
    fn even_split_rotates_extras() {
        assert_eq!(even_split(7, 3, 0), vec![3, 2, 2]);
        assert_eq!(even_split(7, 3, 2), vec![3, 2, 2].into_iter().cycle().skip(1).take(3).collect::<Vec<_>>());
    }

    #[test]
    fn dirichlet_is_a_distribution() {
        let mut rng = stream_rng(5, Stream::Partition, &[]);
        for gamma in [0.05, 0.5, 1000.0] {
            let p = dirichlet(gamma, 10, &mut rng);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn min_labeled_guard_moves_lowest_class_from_richest() {
        let mut lab = vec![vec![(2, 10), (1, 11)], vec![], vec![(0, 12)]];
        ensure_min_labeled(&mut lab, 3).unwrap();
        assert_eq!(lab[1], vec![(1, 11)]);
        assert_eq!(lab[0], vec![(2, 10)]);
        let mut short = vec![vec![(0, 1)], vec![], vec![]];
        assert!(matches!(ensure_min_labeled(&mut short, 1), Err(Error::Partition(_))));
    }

    #[test]
    fn validation() {
        let mut spec = PartitionSpec {
            setting: Setting::DirDir,
            client_count: 1,
            labeled: 5,
            dirichlet_gamma: 0.5,
            seed: 0,
            test_fraction: 0.0,
        };
        assert!(spec.validate().is_err());
        spec.client_count = 3;
        spec.dirichlet_gamma = 0.0;
        assert!(spec.validate().is_err());
        spec.dirichlet_gamma = 0.5;
        assert!(spec.validate().is_ok());
    }
}
