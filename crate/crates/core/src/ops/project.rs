//! Unsupervised projections: principal components and k-means cluster
//! features over a numeric column block.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{Column, Dict, Table, MISSING_CODE};
use crate::util::OrdF64;

use super::{numeric_col, FitCtx, KmeansParams, PcaParams};

/// Scope rows as dense vectors; errors list the columns that still contain
/// missing values (impute first).
fn dense_scope_rows(ctx: &FitCtx, cols: &[String]) -> Result<Vec<Vec<f64>>> {
    let tables = ctx.scope_tables()?;
    let mut bad = Vec::new();
    for name in cols {
        for t in &tables {
            let (_, missing) = numeric_col(t, name)?.numeric_data()?;
            if missing.contains(&true) {
                bad.push(name.clone());
                break;
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::MissingValues(bad));
    }
    let mut rows = Vec::new();
    for t in &tables {
        let columns: Vec<&[f64]> = cols
            .iter()
            .map(|n| Ok(numeric_col(t, n)?.numeric_data()?.0))
            .collect::<Result<_>>()?;
        for r in 0..t.n_rows() {
            rows.push(columns.iter().map(|c| c[r]).collect());
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaState {
    pub cols: Vec<String>,
    pub mean: Vec<f64>,
    /// Orthonormal rows, one per kept component, eigenvalue-descending.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub outputs: Vec<String>,
}

pub(super) fn fit_pca(ctx: &FitCtx, p: &PcaParams) -> Result<PcaState> {
    let rows = dense_scope_rows(ctx, &p.cols)?;
    let n = rows.len();
    let d = p.cols.len();
    let limit = n.saturating_sub(1).min(d);
    if p.n_components > limit {
        return Err(Error::TooManyComponents {
            requested: p.n_components,
            limit,
        });
    }
    let mut mean = vec![0.0; d];
    for row in &rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in &rows {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += ci * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n as f64 - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(OrdF64::new(eig.eigenvalues[i])));
    let mut components = Vec::with_capacity(p.n_components);
    let mut explained = Vec::with_capacity(p.n_components);
    for &i in order.iter().take(p.n_components) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        // Eigenvector signs are arbitrary; pin the largest-magnitude entry
        // positive so fits are reproducible across runs.
        let pivot = (0..d)
            .max_by_key(|&j| (OrdF64::new(v[j].abs()), std::cmp::Reverse(j)))
            .unwrap_or(0);
        if v[pivot] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        components.push(v);
        explained.push(eig.eigenvalues[i].max(0.0));
    }
    Ok(PcaState {
        cols: p.cols.clone(),
        mean,
        components,
        explained_variance: explained,
        outputs: (0..p.n_components)
            .map(|i| ctx.name(&format!("pca.{i}")))
            .collect(),
    })
}

pub(super) fn transform_pca(s: &PcaState, t: &Table) -> Result<Table> {
    let cols: Vec<&Column> = s
        .cols
        .iter()
        .map(|n| numeric_col(t, n))
        .collect::<Result<_>>()?;
    let mut projections: Vec<Vec<f64>> = vec![Vec::with_capacity(t.n_rows()); s.outputs.len()];
    for row in 0..t.n_rows() {
        let point: Option<Vec<f64>> = cols.iter().map(|c| c.num(row)).collect();
        match point {
            // A row with any missing input has no projection.
            None => {
                for p in &mut projections {
                    p.push(f64::NAN);
                }
            }
            Some(x) => {
                for (p, comp) in projections.iter_mut().zip(&s.components) {
                    let dot = x
                        .iter()
                        .zip(&s.mean)
                        .zip(comp)
                        .map(|((v, m), c)| (v - m) * c)
                        .sum();
                    p.push(dot);
                }
            }
        }
    }
    let new_cols = s
        .outputs
        .iter()
        .zip(projections)
        .map(|(name, values)| Column::numeric(name.clone(), values))
        .collect();
    t.append_columns(new_cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansState {
    pub cols: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    pub emit_cluster_id: bool,
    pub emit_distances: bool,
    pub cluster_output: String,
    pub distance_outputs: Vec<String>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest index winning ties.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// The point farthest from its nearest centroid (lowest index on ties),
/// skipping points already claimed as centroids this round.
fn farthest_point(rows: &[Vec<f64>], centroids: &[Vec<f64>], claimed: &[usize]) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, p) in rows.iter().enumerate() {
        if claimed.contains(&i) {
            continue;
        }
        let d = nearest(p, centroids).1;
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

pub(super) fn fit_kmeans(ctx: &FitCtx, p: &KmeansParams) -> Result<KmeansState> {
    let rows = dense_scope_rows(ctx, &p.cols)?;
    let distinct = rows
        .iter()
        .map(|r| r.iter().copied().map(OrdF64::new).collect::<Vec<_>>())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if p.k > distinct {
        return Err(Error::KTooLarge {
            k: p.k,
            distinct,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut claimed = vec![rng.random_range(0..rows.len())];
    let mut centroids = vec![rows[claimed[0]].clone()];
    while centroids.len() < p.k {
        let i = farthest_point(&rows, &centroids, &claimed);
        claimed.push(i);
        centroids.push(rows[i].clone());
    }
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..300 {
        let mut assignment = Vec::with_capacity(rows.len());
        let mut inertia = 0.0;
        for r in &rows {
            let (c, d) = nearest(r, &centroids);
            assignment.push(c);
            inertia += d;
        }
        let mut sums = vec![vec![0.0; p.cols.len()]; p.k];
        let mut counts = vec![0usize; p.k];
        for (r, &c) in rows.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut claimed = Vec::new();
        for c in 0..p.k {
            if counts[c] == 0 {
                // Dead centroid: restart it on the worst-served point.
                let i = farthest_point(&rows, &centroids, &claimed);
                claimed.push(i);
                centroids[c] = rows[i].clone();
            } else {
                for (s, v) in centroids[c].iter_mut().zip(&sums[c]) {
                    *s = v / counts[c] as f64;
                }
            }
        }
        if prev_inertia.is_finite() && prev_inertia - inertia <= 1e-6 * prev_inertia.abs() {
            break;
        }
        prev_inertia = inertia;
    }
    Ok(KmeansState {
        cols: p.cols.clone(),
        centroids,
        emit_cluster_id: p.emit.iter().any(|e| e == "cluster_id"),
        emit_distances: p.emit.iter().any(|e| e == "distances"),
        cluster_output: ctx.name("km.cluster"),
        distance_outputs: (0..p.k)
            .map(|j| ctx.name(&format!("km.dist.{j}")))
            .collect(),
    })
}

pub(super) fn transform_kmeans(s: &KmeansState, t: &Table) -> Result<Table> {
    let cols: Vec<&Column> = s
        .cols
        .iter()
        .map(|n| numeric_col(t, n))
        .collect::<Result<_>>()?;
    let k = s.centroids.len();
    let mut ids = Vec::with_capacity(t.n_rows());
    let mut dists: Vec<Vec<f64>> = vec![Vec::with_capacity(t.n_rows()); k];
    for row in 0..t.n_rows() {
        let point: Option<Vec<f64>> = cols.iter().map(|c| c.num(row)).collect();
        match point {
            None => {
                ids.push(MISSING_CODE);
                for d in &mut dists {
                    d.push(f64::NAN);
                }
            }
            Some(x) => {
                ids.push(nearest(&x, &s.centroids).0 as u32);
                for (d, c) in dists.iter_mut().zip(&s.centroids) {
                    d.push(dist2(&x, c).sqrt());
                }
            }
        }
    }
    let mut new_cols = Vec::new();
    if s.emit_cluster_id {
        let dict = Arc::new(Dict::from_entries((0..k).map(|i| i.to_string()))?);
        new_cols.push(Column::categorical(s.cluster_output.clone(), dict, ids)?);
    }
    if s.emit_distances {
        for (name, values) in s.distance_outputs.iter().zip(dists) {
            new_cols.push(Column::numeric(name.clone(), values));
        }
    }
    t.append_columns(new_cols)
}
