//! Peer groups from usage shape: Ward agglomeration on stacked proportion
//! vectors, silhouette choice of the cluster count, singleton merging.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::{AccountMeta, ServiceGroup};
use crate::proportions::FiscalYearVector;

pub const DEFAULT_K_MAX: usize = 10;
pub const CLUSTERS_HEADER: [&str; 6] =
    ["account_id", "service_group", "group_id", "cluster_id", "is_merged_singleton", "silhouette_width"];
pub const DIAGNOSTICS_HEADER: [&str; 3] = ["service_group", "k", "mean_silhouette"];

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("profile lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 profiles, found {0}")]
    TooFewProfiles(usize),
    #[error("duplicate account {0}")]
    DuplicateAccount(String),
    #[error("k_max must lie in 2..={max}, found {k_max}")]
    InvalidKMax { k_max: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionProfile {
    pub account_id: String,
    /// Proportion vectors of consecutive fiscal years, concatenated.
    pub vec: Vec<f64>,
}

pub fn proportion_distance(a: &ProportionProfile, b: &ProportionProfile) -> Result<f64, ClusterError> {
    if a.vec.len() != b.vec.len() {
        return Err(ClusterError::LengthMismatch(a.vec.len(), b.vec.len()));
    }
    Ok(squared_distance(&a.vec, &b.vec).sqrt())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-major `n x n` matrix of Euclidean distances.
pub fn distance_matrix(profiles: &[ProportionProfile]) -> Result<Vec<Vec<f64>>, ClusterError> {
    if let Some(p) = profiles.iter().find(|p| p.vec.len() != profiles[0].vec.len()) {
        return Err(ClusterError::LengthMismatch(profiles[0].vec.len(), p.vec.len()));
    }
    Ok(profiles
        .par_iter()
        .map(|a| profiles.iter().map(|b| squared_distance(&a.vec, &b.vec).sqrt()).collect())
        .collect())
}

/// One agglomeration step. Leaves are `0..n`; the cluster formed by merge
/// `j` gets id `n + j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Increase in within-cluster error sum of squares.
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Labels `1..=k` per leaf after undoing the last `k - 1` merges.
    /// Clusters are numbered by their smallest leaf index.
    pub fn cut(&self, k: usize) -> Vec<usize> {
        assert!(k >= 1 && k <= self.n);
        let mut parent: Vec<usize> = (0..self.n + self.merges.len()).collect();
        for (j, m) in self.merges.iter().take(self.n - k).enumerate() {
            parent[m.a] = self.n + j;
            parent[m.b] = self.n + j;
        }
        let root = |mut x: usize| {
            while parent[x] != x {
                x = parent[x];
            }
            x
        };
        let mut ids = BTreeMap::new();
        (0..self.n)
            .map(|i| {
                let next = ids.len() + 1;
                *ids.entry(root(i)).or_insert(next)
            })
            .collect()
    }
}

/// Ward agglomeration via the Lance-Williams recurrence on squared
/// Euclidean distances. Ties go to the lowest `(id, id)` pair.
pub fn ward_cluster(profiles: &[ProportionProfile]) -> Result<Dendrogram, ClusterError> {
    let n = profiles.len();
    if n < 2 {
        return Err(ClusterError::TooFewProfiles(n));
    }
    let mut seen = BTreeSet::new();
    if let Some(p) = profiles.iter().find(|p| !seen.insert(p.account_id.as_str())) {
        return Err(ClusterError::DuplicateAccount(p.account_id.clone()));
    }
    let d0 = distance_matrix(profiles)?;
    // d[i][j] holds twice the ESS increase of merging active clusters i, j
    let total = 2 * n - 1;
    let mut d = vec![vec![0.0; total]; total];
    for i in 0..n {
        for j in 0..n {
            d[i][j] = d0[i][j] * d0[i][j];
        }
    }
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for (x, &i) in active.iter().enumerate() {
            for &j in &active[x + 1..] {
                let v = d[i][j];
                if v < best.0 || (v == best.0 && (i, j) < (best.1, best.2)) {
                    best = (v, i, j);
                }
            }
        }
        let (v, a, b) = best;
        let new = n + step;
        size[new] = size[a] + size[b];
        active.retain(|&c| c != a && c != b);
        for &k in &active {
            let (nk, na, nb) = (size[k] as f64, size[a] as f64, size[b] as f64);
            let dk = ((nk + na) * d[k][a] + (nk + nb) * d[k][b] - nk * v) / (nk + na + nb);
            d[k][new] = dk;
            d[new][k] = dk;
        }
        active.push(new);
        merges.push(Merge {
            a,
            b,
            height: v / 2.0,
            size: size[new],
        });
    }
    Ok(Dendrogram { n, merges })
}

/// Per-point silhouette widths for a labelling; singletons get 0.
pub fn silhouette_widths(dist: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
    let k = labels.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; k + 1];
    for &l in labels {
        counts[l] += 1;
    }
    (0..labels.len())
        .map(|i| {
            let own = labels[i];
            if counts[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k + 1];
            for (j, &l) in labels.iter().enumerate() {
                if j != i {
                    sums[l] += dist[i][j];
                }
            }
            let a = sums[own] / (counts[own] - 1) as f64;
            let b = (1..=k)
                .filter(|&c| c != own && counts[c] > 0)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 && b.is_finite() { (b - a) / m } else { 0.0 }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub account_id: String,
    pub cluster_id: usize,
    pub is_merged_singleton: bool,
    pub silhouette_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub k: usize,
    /// `(k, mean silhouette width)` for every candidate.
    pub mean_widths: Vec<(usize, f64)>,
    pub assignments: Vec<ClusterAssignment>,
}

pub fn default_k_max(n: usize) -> usize {
    DEFAULT_K_MAX.min(n.saturating_sub(1))
}

/// Cuts the dendrogram at every `k` in `2..=k_max` and keeps the cut with
/// the largest mean silhouette width (ties to the smaller `k`).
pub fn silhouette_select(
    dendrogram: &Dendrogram,
    profiles: &[ProportionProfile],
    k_max: usize,
) -> Result<Selection, ClusterError> {
    let n = profiles.len();
    if k_max < 2 || k_max > n.saturating_sub(1) {
        return Err(ClusterError::InvalidKMax { k_max, max: n.saturating_sub(1) });
    }
    let dist = distance_matrix(profiles)?;
    let mut mean_widths = Vec::new();
    let mut best: Option<(usize, f64, Vec<usize>, Vec<f64>)> = None;
    for k in 2..=k_max {
        let labels = dendrogram.cut(k);
        let widths = silhouette_widths(&dist, &labels);
        let mean = widths.iter().sum::<f64>() / n as f64;
        mean_widths.push((k, mean));
        if best.as_ref().is_none_or(|b| mean > b.1) {
            best = Some((k, mean, labels, widths));
        }
    }
    let (k, mean, labels, widths) = best.expect("k_max >= 2");
    if mean == 0.0 && mean_widths.iter().all(|(_, m)| *m == 0.0) {
        log::warn!("all silhouette widths are zero; profiles are indistinguishable, using k = 2");
    }
    let assignments = profiles
        .iter()
        .zip(labels)
        .zip(widths)
        .map(|((p, cluster_id), silhouette_width)| ClusterAssignment {
            account_id: p.account_id.clone(),
            cluster_id,
            is_merged_singleton: false,
            silhouette_width,
        })
        .collect();
    Ok(Selection {
        k,
        mean_widths,
        assignments,
    })
}

/// Pools every size-one cluster into a single cluster with the next free
/// id. Other clusters are renumbered `1..` in their original order.
pub fn merge_singletons(assignments: &[ClusterAssignment]) -> Vec<ClusterAssignment> {
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for a in assignments {
        *sizes.entry(a.cluster_id).or_default() += 1;
    }
    if !sizes.values().any(|&s| s == 1) {
        return assignments.to_vec();
    }
    let kept: BTreeMap<usize, usize> = sizes
        .iter()
        .filter(|(_, &s)| s > 1)
        .enumerate()
        .map(|(i, (&id, _))| (id, i + 1))
        .collect();
    let merged_id = kept.len() + 1;
    assignments
        .iter()
        .map(|a| match kept.get(&a.cluster_id) {
            Some(&id) => ClusterAssignment { cluster_id: id, ..a.clone() },
            None => ClusterAssignment {
                cluster_id: merged_id,
                is_merged_singleton: true,
                ..a.clone()
            },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    MissingMonths,
    NegativeValue,
    AllZero,
    NoMetadata,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::MissingMonths => "missing-months",
            ExclusionReason::NegativeValue => "negative-value",
            ExclusionReason::AllZero => "all-zero",
            ExclusionReason::NoMetadata => "no-metadata",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub account_id: String,
    pub service_group: ServiceGroup,
    pub group_id: String,
    pub cluster_id: usize,
    pub is_merged_singleton: bool,
    pub silhouette_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumDiagnostics {
    pub service_group: ServiceGroup,
    pub n: usize,
    pub k: usize,
    pub mean_widths: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupResult {
    pub assignments: Vec<GroupAssignment>,
    pub excluded: Vec<(String, ExclusionReason)>,
    pub diagnostics: Vec<StratumDiagnostics>,
}

impl GroupResult {
    pub fn group_ids(&self) -> BTreeSet<&str> {
        self.assignments.iter().map(|a| a.group_id.as_str()).collect()
    }
}

/// Builds a profile from the proportion vectors of `years`, or the reason
/// the account cannot be profiled.
pub fn build_profile(
    account_id: &str,
    vectors: &[FiscalYearVector],
    years: &[i32],
) -> Result<ProportionProfile, ExclusionReason> {
    let mut vec = Vec::with_capacity(12 * years.len());
    for fy in years {
        let v = vectors
            .iter()
            .find(|v| v.account_id == account_id && v.fiscal_year == *fy)
            .ok_or(ExclusionReason::MissingMonths)?;
        if !v.complete {
            return Err(ExclusionReason::MissingMonths);
        }
        if v.x.iter().flatten().any(|&x| x < 0.0) {
            return Err(ExclusionReason::NegativeValue);
        }
        let shape = v.shape.as_ref().ok_or(ExclusionReason::AllZero)?;
        vec.extend_from_slice(&shape.p);
    }
    Ok(ProportionProfile {
        account_id: account_id.to_string(),
        vec,
    })
}

/// Clusters each service-group stratum separately and concatenates the
/// partitions. Strata with fewer than three accounts form one cluster.
pub fn group_pipeline(
    accounts: &[AccountMeta],
    vectors: &[FiscalYearVector],
    years: &[i32],
    k_max: Option<usize>,
) -> Result<GroupResult, ClusterError> {
    let meta: BTreeMap<&str, &AccountMeta> = accounts.iter().map(|a| (a.account_id.as_str(), a)).collect();
    let ids: BTreeSet<&str> = vectors.iter().map(|v| v.account_id.as_str()).chain(meta.keys().copied()).collect();
    let mut strata: BTreeMap<ServiceGroup, Vec<ProportionProfile>> = BTreeMap::new();
    let mut result = GroupResult::default();
    for id in ids {
        let Some(m) = meta.get(id) else {
            result.excluded.push((id.to_string(), ExclusionReason::NoMetadata));
            continue;
        };
        match build_profile(id, vectors, years) {
            Ok(p) => strata.entry(m.service_type.service_group()).or_default().push(p),
            Err(reason) => result.excluded.push((id.to_string(), reason)),
        }
    }
    for (group, profiles) in strata {
        let n = profiles.len();
        let (k, mean_widths, assignments) = if n < 3 {
            let a = profiles
                .iter()
                .map(|p| ClusterAssignment {
                    account_id: p.account_id.clone(),
                    cluster_id: 1,
                    is_merged_singleton: false,
                    silhouette_width: 0.0,
                })
                .collect();
            (1, Vec::new(), a)
        } else {
            let dendrogram = ward_cluster(&profiles)?;
            let k_max = k_max.unwrap_or_else(|| default_k_max(n)).clamp(2, n - 1);
            let s = silhouette_select(&dendrogram, &profiles, k_max)?;
            (s.k, s.mean_widths, merge_singletons(&s.assignments))
        };
        result.diagnostics.push(StratumDiagnostics {
            service_group: group,
            n,
            k,
            mean_widths,
        });
        for a in assignments {
            result.assignments.push(GroupAssignment {
                group_id: format!("{}-{}", group.as_str(), a.cluster_id),
                account_id: a.account_id,
                service_group: group,
                cluster_id: a.cluster_id,
                is_merged_singleton: a.is_merged_singleton,
                silhouette_width: a.silhouette_width,
            });
        }
    }
    Ok(result)
}

pub fn write_clusters(sink: impl Write, assignments: &[GroupAssignment]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CLUSTERS_HEADER)?;
    for a in assignments {
        w.write_record([
            a.account_id.as_str(),
            a.service_group.as_str(),
            a.group_id.as_str(),
            &a.cluster_id.to_string(),
            &a.is_merged_singleton.to_string(),
            &a.silhouette_width.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics(sink: impl Write, diagnostics: &[StratumDiagnostics]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(DIAGNOSTICS_HEADER)?;
    for d in diagnostics {
        for (k, mean) in &d.mean_widths {
            w.write_record([d.service_group.as_str(), &k.to_string(), &mean.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `account_id -> group_id` from a clusters CSV.
pub fn read_cluster_groups(source: impl std::io::Read) -> csv::Result<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_reader(source);
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        out.insert(rec[0].to_string(), rec[2].to_string());
    }
    Ok(out)
}
