//! Grounding text-query embeddings to per-Gaussian binary channels.
//!
//! Each Gaussian gets a relevancy score against the query; the top
//! percentile is clustered in 3D with DBSCAN and only the largest cluster
//! is flagged.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::{fmt_f64, write_atomic};
use crate::scene::{GaussianCloud, EMBEDDING_RENORM_TOL};

/// Query and canonical-phrase embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub labels: Vec<String>,
    pub queries: Vec<Vec<f64>>,
    pub canonical: Vec<Vec<f64>>,
}

impl QuerySet {
    pub fn new(labels: Vec<String>, queries: Vec<Vec<f64>>, canonical: Vec<Vec<f64>>) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Invalid("query set needs at least one query".into()));
        }
        if canonical.is_empty() {
            return Err(Error::Invalid("query set needs at least one canonical embedding".into()));
        }
        if labels.len() != queries.len() {
            return Err(Error::Invalid("one label per query required".into()));
        }
        let dim = queries[0].len();
        let normalize = |v: Vec<f64>, what: &str| -> Result<Vec<f64>> {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(format!("{what} has {} entries, expected {dim}", v.len())));
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > EMBEDDING_RENORM_TOL {
                return Err(Error::Invalid(format!("{what} is not unit norm ({n})")));
            }
            Ok(v.into_iter().map(|x| x / n).collect())
        };
        let queries = queries
            .into_iter()
            .zip(&labels)
            .map(|(q, l)| normalize(q, &format!("query {l:?}")))
            .collect::<Result<_>>()?;
        let canonical = canonical
            .into_iter()
            .enumerate()
            .map(|(i, c)| normalize(c, &format!("canonical embedding {i}")))
            .collect::<Result<_>>()?;
        Ok(QuerySet { labels, queries, canonical })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.queries[0].len()
    }

    /// Index of the query labelled `label`.
    pub fn position(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Keeps only the named queries, in the given order.
    pub fn reordered(&self, order: &[String]) -> Result<Self> {
        let idx = order
            .iter()
            .map(|l| self.position(l).ok_or_else(|| Error::Invalid(format!("unknown prompt {l:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(QuerySet {
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            queries: idx.iter().map(|&i| self.queries[i].clone()).collect(),
            canonical: self.canonical.clone(),
        })
    }

    /// `SPLATQUERY v1 dim=<D> queries=<n> canon=<k>` followed by `n` lines of
    /// `label v1 .. vD` and `k` canonical lines (label optional).
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse_line(1, "empty query file"))?;
        let mut tok = header.split_whitespace();
        if tok.next() != Some("SPLATQUERY") || tok.next() != Some("v1") {
            return Err(Error::parse_line(1, "missing SPLATQUERY v1 header"));
        }
        let (mut dim, mut nq, mut nc) = (None, None, None);
        for t in tok {
            let (k, v) = t.split_once('=').ok_or_else(|| Error::parse_line(1, format!("bad field {t:?}")))?;
            let v: usize = v.parse().map_err(|_| Error::parse_line(1, format!("bad integer in {t:?}")))?;
            match k {
                "dim" => dim = Some(v),
                "queries" => nq = Some(v),
                "canon" => nc = Some(v),
                _ => return Err(Error::parse_line(1, format!("unknown field {k:?}"))),
            }
        }
        let (dim, nq, nc) = match (dim, nq, nc) {
            (Some(d), Some(q), Some(c)) => (d, q, c),
            _ => return Err(Error::parse_line(1, "header needs dim=, queries= and canon=")),
        };
        let mut labels = Vec::new();
        let mut queries = Vec::new();
        let mut canonical = Vec::new();
        for (i, (lineno, line)) in lines.enumerate() {
            let lineno = lineno + 1;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let (label, nums) = if tokens.len() == dim + 1 {
                (Some(tokens[0]), &tokens[1..])
            } else if tokens.len() == dim && i >= nq {
                (None, &tokens[..])
            } else {
                return Err(Error::parse_line(lineno, format!("expected a label and {dim} values")));
            };
            let v = nums
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::parse_line(lineno, format!("bad number {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if i < nq {
                labels.push(label.unwrap_or_default().to_string());
                queries.push(v);
            } else if i < nq + nc {
                canonical.push(v);
            } else {
                return Err(Error::parse_line(lineno, "more vectors than the header declares"));
            }
        }
        if queries.len() != nq || canonical.len() != nc {
            return Err(Error::parse_line(text.lines().count(), "fewer vectors than the header declares"));
        }
        QuerySet::new(labels, queries, canonical)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "SPLATQUERY v1 dim={} queries={} canon={}\n",
            self.dim(),
            self.len(),
            self.canonical.len()
        );
        let row = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ");
        for (l, q) in self.labels.iter().zip(&self.queries) {
            s.push_str(&format!("{l} {}\n", row(q)));
        }
        for (i, c) in self.canonical.iter().enumerate() {
            s.push_str(&format!("canon{i} {}\n", row(c)));
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }
}

/// Percentile and DBSCAN parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Fraction of Gaussians kept by the relevancy percentile, in (0, 1).
    pub percentile: f64,
    /// `None` picks twice the median nearest-neighbour distance among the
    /// percentile-selected means.
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { percentile: 0.05, dbscan_eps: None, dbscan_min_pts: 4 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// min over canonical phrases of exp(g·q) / (exp(g·q) + exp(g·c)).
pub fn relevancy_score(embedding: &[f64], query: &[f64], canonical: &[Vec<f64>]) -> Result<f64> {
    if canonical.is_empty() {
        return Err(Error::Invalid("relevancy needs at least one canonical embedding".into()));
    }
    let q = dot(embedding, query);
    Ok(canonical
        .iter()
        .map(|c| 1.0 / (1.0 + (dot(embedding, c) - q).exp()))
        .fold(f64::INFINITY, f64::min))
}

/// Indices of the ⌈τ·N⌉ highest scores, ascending. Equal scores prefer the
/// lower index.
pub fn percentile_filter(scores: &[f64], percentile: f64) -> Vec<usize> {
    let n = scores.len();
    let keep = ((percentile * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

/// DBSCAN cluster label per point; `None` is noise. A point is core when at
/// least `min_pts` points (itself included) lie within `eps`. Seeds are
/// visited in index order, so cluster ids follow first appearance.
pub fn dbscan(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| {
                let d2: f64 = (0..3).map(|k| (points[i][k] - points[j][k]).powi(2)).sum();
                d2 <= eps2
            })
            .collect()
    };
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next_id = 0;
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let nb = neighbors(seed);
        if nb.len() < min_pts {
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[seed] = Some(id);
        let mut queue: std::collections::VecDeque<usize> = nb.into_iter().collect();
        while let Some(p) = queue.pop_front() {
            if labels[p].is_none() {
                labels[p] = Some(id);
            }
            if visited[p] {
                continue;
            }
            visited[p] = true;
            let nb = neighbors(p);
            if nb.len() >= min_pts {
                queue.extend(nb.into_iter().filter(|&q| !visited[q] || labels[q].is_none()));
            }
        }
    }
    labels
}

fn median_nn_distance(points: &[[f64; 3]]) -> f64 {
    let mut nn: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .filter(|d| d.is_finite())
        .collect();
    if nn.is_empty() {
        return 0.0;
    }
    nn.sort_by(f64::total_cmp);
    let m = nn.len();
    if m % 2 == 1 { nn[m / 2] } else { 0.5 * (nn[m / 2 - 1] + nn[m / 2]) }
}

/// Relevancy scores of every Gaussian against query `query_index`.
pub fn score_cloud(cloud: &GaussianCloud, query_index: usize, queries: &QuerySet) -> Result<Vec<f64>> {
    if query_index >= queries.len() {
        return Err(Error::Invalid(format!("query {query_index} out of range")));
    }
    if queries.dim() != cloud.embedding_dim() {
        return Err(Error::DimensionMismatch(format!(
            "queries have dimension {}, scene embeddings {}",
            queries.dim(),
            cloud.embedding_dim()
        )));
    }
    cloud
        .gaussians()
        .iter()
        .map(|g| relevancy_score(&g.embedding_f64(), &queries.queries[query_index], &queries.canonical))
        .collect()
}

/// Flags of the Gaussians grounded to one query, before they are attached
/// to a cloud.
pub fn ground_query(
    cloud: &GaussianCloud,
    query_index: usize,
    queries: &QuerySet,
    config: &FilterConfig,
) -> Result<Vec<bool>> {
    if !(config.percentile > 0.0 && config.percentile < 1.0) {
        return Err(Error::Invalid(format!("percentile {} outside (0, 1)", config.percentile)));
    }
    if config.dbscan_min_pts == 0 {
        return Err(Error::Invalid("dbscan_min_pts must be at least 1".into()));
    }
    let scores = score_cloud(cloud, query_index, queries)?;
    let selected = percentile_filter(&scores, config.percentile);
    let points: Vec<[f64; 3]> = selected
        .iter()
        .map(|&i| cloud.gaussians()[i].mean.map(|v| v as f64))
        .collect();
    let eps = match config.dbscan_eps {
        Some(e) if e > 0.0 => e,
        Some(e) => return Err(Error::Invalid(format!("dbscan eps {e} must be positive"))),
        None => (2.0 * median_nn_distance(&points)).max(1e-9),
    };
    let labels = dbscan(&points, eps, config.dbscan_min_pts);
    let clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; clusters];
    for l in labels.iter().flatten() {
        sizes[*l] += 1;
    }
    // Largest cluster; ties go to the lowest id.
    let best = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(id, _)| id)
        .ok_or(Error::GroundedToNothing(query_index))?;
    let mut flags = vec![false; cloud.len()];
    for (&i, l) in selected.iter().zip(&labels) {
        if *l == Some(best) {
            flags[i] = true;
        }
    }
    Ok(flags)
}

/// Returns a new cloud whose channel `query_index` flags the grounded set.
pub fn build_binary_channel(
    cloud: &GaussianCloud,
    query_index: usize,
    queries: &QuerySet,
    config: &FilterConfig,
) -> Result<GaussianCloud> {
    let flags = ground_query(cloud, query_index, queries, config)?;
    cloud.with_channel(query_index, &flags, cloud.prompt_count().max(queries.len()))
}

/// Grounds every query in order.
pub fn ground_all(cloud: &GaussianCloud, queries: &QuerySet, config: &FilterConfig) -> Result<GaussianCloud> {
    let mut out = cloud.with_channel(0, &vec![false; cloud.len()], queries.len())?;
    for i in 0..queries.len() {
        let flags = ground_query(cloud, i, queries, config)?;
        out = out.with_channel(i, &flags, queries.len())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn relevancy_symmetric_case_is_half() {
        let g = [1.0, 0.0];
        let s = relevancy_score(&g, &[0.6, 0.8], &[vec![0.6, -0.8], vec![0.6, 0.8]]).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn relevancy_direct_evaluation() {
        let s = relevancy_score(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let e = std::f64::consts::E;
        assert!((s - e / (e + 1.0)).abs() < 1e-15);
        assert!((s - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn relevancy_takes_min_over_canonical() {
        // g·q = 0.2, g·c = {0, 0.5}
        let g = [1.0, 0.0, 0.0];
        let q = [0.2, (1.0f64 - 0.04).sqrt(), 0.0];
        let c1 = vec![0.0, 0.0, 1.0];
        let c2 = vec![0.5, 0.0, (0.75f64).sqrt()];
        let b1 = 0.2f64.exp() / (0.2f64.exp() + 0.0f64.exp());
        let b2 = 0.2f64.exp() / (0.2f64.exp() + 0.5f64.exp());
        let s = relevancy_score(&g, &q, &[c1, c2]).unwrap();
        assert!((s - b1.min(b2)).abs() < 1e-14);
        assert!(relevancy_score(&g, &q, &[]).is_err());
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile_filter(&[0.1, 0.9, 0.5], 1.0 / 3.0), vec![1]);
        assert_eq!(percentile_filter(&[0.4, 0.4, 0.4], 1.0 / 3.0), vec![0]);
    }

    #[test]
    fn dbscan_examples() {
        let eps = 1.0;
        let line = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(dbscan(&line, eps, 2), vec![Some(0); 3]);
        let with_outlier = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0], [100.0, 0.0, 0.0]];
        assert_eq!(dbscan(&with_outlier, eps, 2)[3], None);
    }

    #[test]
    fn query_file_round_trip() {
        let q = QuerySet::new(
            vec!["mug".into(), "plant".into()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![(0.5f64).sqrt(), (0.5f64).sqrt()]],
        )
        .unwrap();
        assert_eq!(QuerySet::parse(&q.to_text()).unwrap(), q);
        assert!(QuerySet::parse("SPLATQUERY v1 dim=2 queries=1 canon=1\nmug 1 0\n").is_err());
    }

    // brute-force density-connectivity oracle
    fn dbscan_oracle(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Vec<Vec<usize>> {
        let n = points.len();
        let near = |i: usize, j: usize| (0..3).map(|k| (points[i][k] - points[j][k]).powi(2)).sum::<f64>() <= eps * eps;
        let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
        // transitive closure over core-core adjacency
        let mut comp: Vec<usize> = (0..n).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n {
                for j in 0..n {
                    if core[i] && core[j] && near(i, j) && comp[i] != comp[j] {
                        let m = comp[i].min(comp[j]);
                        comp[i] = m;
                        comp[j] = m;
                        changed = true;
                    }
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in (0..n).filter(|&i| core[i]) {
            groups.entry(comp[i]).or_default().push(i);
        }
        groups.into_values().collect()
    }

    proptest! {
        #[test]
        fn percentile_matches_sort_oracle(scores in prop::collection::vec(0.0f64..1.0, 1..60), tau in 0.01f64..0.99) {
            let got = percentile_filter(&scores, tau);
            let k = (tau * scores.len() as f64 - 1e-9).ceil() as usize;
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            let mut want = idx[..k].to_vec();
            want.sort();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn relevancy_monotone_in_query_dot(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
            // embeddings chosen so that only g·q changes between the two calls
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let g = [1.0, 0.0, 0.0];
            let q = |d: f64| [d, (1.0 - d * d).sqrt(), 0.0];
            let canon = vec![vec![c, 0.0, (1.0 - c * c).sqrt()]];
            let s_lo = relevancy_score(&g, &q(lo), &canon).unwrap();
            let s_hi = relevancy_score(&g, &q(hi), &canon).unwrap();
            prop_assert!(s_lo <= s_hi);
            prop_assert!(s_lo > 0.0 && s_hi < 1.0);
        }

        #[test]
        fn dbscan_matches_reachability_oracle(
            pts in prop::collection::vec(prop::array::uniform3(0.0f64..4.0), 50),
            min_pts in 2usize..5,
            shift in prop::array::uniform3(-50.0f64..50.0),
        ) {
            let eps = 0.7;
            let labels = dbscan(&pts, eps, min_pts);
            let groups = dbscan_oracle(&pts, eps, min_pts);
            // core points: same cluster exactly when the oracle groups them
            for g in &groups {
                let l = labels[g[0]];
                prop_assert!(l.is_some());
                for &i in g {
                    prop_assert_eq!(labels[i], l);
                }
            }
            prop_assert_eq!(labels.iter().flatten().max().map_or(0, |m| m + 1), groups.len());
            // non-core points: labelled iff within eps of some core point
            let near = |i: usize, j: usize| (0..3).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum::<f64>() <= eps * eps;
            let core: Vec<usize> = groups.iter().flatten().copied().collect();
            for i in 0..pts.len() {
                if !core.contains(&i) {
                    let reach = core.iter().any(|&c| near(i, c));
                    prop_assert_eq!(labels[i].is_some(), reach);
                }
            }
            // translation invariance
            let moved: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
            let moved_labels = dbscan(&moved, eps, min_pts);
            prop_assert_eq!(moved_labels, labels);
        }
    }
}
