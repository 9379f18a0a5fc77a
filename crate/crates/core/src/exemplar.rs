//! Cluster sampling of few-shot exemplars: K-means over encoded rows, then one
//! uniformly random row per cluster for every generation round.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Encoder, Row, Table};
use crate::error::{Error, Result};
use crate::seed;

const MAX_ITERATIONS: usize = 100;
const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.k()];
        for (row, &c) in self.assignment.iter().enumerate() {
            members[c].push(row);
        }
        members
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding. Stops when no centroid moves by
/// `1e-6` or more, or after 100 iterations. Empty clusters are reseeded with
/// the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::InvalidArgument("cluster count must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} clusters from {} rows",
            points.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignment = vec![0; points.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        assign(points, &mut centroids, &mut assignment);
        let updated = means(points, &assignment, &centroids);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < TOLERANCE {
            break;
        }
    }
    assign(points, &mut centroids, &mut assignment);
    Ok(Clustering {
        assignment,
        centroids,
        iterations,
    })
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut distances: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = distances.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in distances.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive distance")
        } else {
            // All remaining points coincide with a centroid.
            let free: Vec<usize> = (0..points.len()).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (d, p) in distances.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn assign(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignment: &mut [usize]) {
    let mut counts = vec![0usize; centroids.len()];
    for (slot, point) in assignment.iter_mut().zip(points) {
        *slot = nearest(point, centroids).0;
        counts[*slot] += 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let farthest = (0..points.len())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| {
                let da = squared_distance(&points[a], &centroids[assignment[a]]);
                let db = squared_distance(&points[b], &centroids[assignment[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= n leaves a cluster with more than one member");
        counts[assignment[farthest]] -= 1;
        assignment[farthest] = empty;
        counts[empty] = 1;
        centroids[empty] = points[farthest].clone();
    }
}

fn means(points: &[Vec<f64>], assignment: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; previous.len()];
    let mut counts = vec![0usize; previous.len()];
    for (point, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(point) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((sum, count), prev)| {
            if count == 0 {
                prev.clone()
            } else {
                sum.into_iter().map(|s| s / count as f64).collect()
            }
        })
        .collect()
}

/// Clusters table rows (features and label) into `a` groups.
pub fn cluster(table: &Table, a: usize, seed: u64) -> Result<Clustering> {
    if a > table.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot form {a} clusters from {} rows",
            table.len()
        )));
    }
    let encoder = Encoder::fit(table, true)?;
    let points = encoder.encode_table(table)?;
    kmeans(&points, a, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    /// Source row index in the clustered table, per exemplar.
    pub row_indices: Vec<usize>,
    pub cluster_ids: Vec<usize>,
    pub seed: u64,
}

impl ExemplarSet {
    pub fn len(&self) -> usize {
        self.row_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_indices.is_empty()
    }

    pub fn rows<'t>(&self, table: &'t Table) -> Vec<&'t Row> {
        self.row_indices.iter().map(|&i| &table.rows[i]).collect()
    }
}

/// One uniformly random member per cluster. The stream depends on
/// `(seed, round)`, so each round draws fresh, reproducible exemplars.
pub fn draw_exemplars(clustering: &Clustering, seed: u64, round: u64) -> ExemplarSet {
    let round_seed = seed::derive_indexed(seed, round);
    let mut rng = seed::rng(round_seed);
    let members = clustering.members();
    let row_indices = members
        .iter()
        .map(|m| m[rng.random_range(0..m.len())])
        .collect();
    ExemplarSet {
        row_indices,
        cluster_ids: (0..members.len()).collect(),
        seed: round_seed,
    }
}

/// `a` distinct rows drawn uniformly, ignoring any clustering. Slot ids stand
/// in for cluster ids.
pub fn random_exemplars(rows: usize, a: usize, seed: u64, round: u64) -> Result<ExemplarSet> {
    if a == 0 || a > rows {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {a} exemplars from {rows} rows"
        )));
    }
    let round_seed = seed::derive_indexed(seed, round);
    let mut rng = seed::rng(round_seed);
    let row_indices = rand::seq::index::sample(&mut rng, rows, a).into_vec();
    Ok(ExemplarSet {
        row_indices,
        cluster_ids: (0..a).collect(),
        seed: round_seed,
    })
}
