use serde::{Deserialize, Serialize};

use super::ClientData;

/// Normalised class histogram; `None` for an empty set.
pub fn class_histogram(labels: &[usize], classes: usize) -> Option<Vec<f64>> {
    if labels.is_empty() {
        return None;
    }
    let mut h = vec![0.0; classes];
    for &l in labels {
        h[l] += 1.0;
    }
    let n = labels.len() as f64;
    Some(h.into_iter().map(|c| c / n).collect())
}

/// Total-variation distance `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientImbalance {
    pub id: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub labeled_histogram: Vec<f64>,
    /// Empty when the client has no unlabeled data.
    pub unlabeled_histogram: Vec<f64>,
    /// TV(labeled, unlabeled); `None` without unlabeled data.
    pub internal_tv: Option<f64>,
    /// Histogram of all the client's examples.
    pub overall_histogram: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub clients: Vec<ClientImbalance>,
    /// Mean internal TV over clients that have unlabeled data.
    pub mean_internal_tv: f64,
    /// Mean pairwise TV between client overall histograms.
    pub external_tv: f64,
}

pub fn imbalance_report(clients: &[ClientData]) -> ImbalanceReport {
    let mut rows = Vec::with_capacity(clients.len());
    for (id, c) in clients.iter().enumerate() {
        let classes = c.class_count();
        let hidden = c.hidden_unlabeled_labels().get();
        let labeled_h = class_histogram(c.labeled_labels(), classes).unwrap_or_else(|| vec![0.0; classes]);
        let unlabeled_h = class_histogram(hidden, classes);
        let all: Vec<usize> = c.labeled_labels().iter().chain(hidden).copied().collect();
        let overall = class_histogram(&all, classes).unwrap_or_else(|| vec![0.0; classes]);
        rows.push(ClientImbalance {
            id,
            labeled: c.labeled_len(),
            unlabeled: hidden.len(),
            internal_tv: match (&unlabeled_h, c.labeled_len()) {
                (Some(u), n) if n > 0 => Some(total_variation(&labeled_h, u)),
                _ => None,
            },
            labeled_histogram: labeled_h,
            unlabeled_histogram: unlabeled_h.unwrap_or_default(),
            overall_histogram: overall,
        });
    }
    let internal: Vec<f64> = rows.iter().filter_map(|r| r.internal_tv).collect();
    let mean_internal_tv = if internal.is_empty() {
        0.0
    } else {
        internal.iter().sum::<f64>() / internal.len() as f64
    };
    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            pair_sum += total_variation(&rows[i].overall_histogram, &rows[j].overall_histogram);
            pairs += 1;
        }
    }
    ImbalanceReport {
        clients: rows,
        mean_internal_tv,
        external_tv: if pairs == 0 { 0.0 } else { pair_sum / pairs as f64 },
    }
}
