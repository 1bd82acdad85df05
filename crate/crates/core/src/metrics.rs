//! Point-cloud extraction and evaluation.
//!
//! Extraction turns an SDDR (or a range profile) into points: plain
//! occupancy thresholding or an ordered-statistic CFAR. Evaluation compares a
//! predicted cloud `P` with a reference cloud `Q`:
//!
//! * Chamfer distance and earth mover's distance (optimal assignment).
//! * Clutter set: predictions farther than `tau1` from every reference point.
//! * Shot set: reference points within `tau2` of some prediction.
//! * VPR = 1 - |clutter|/|P|, SRL = |shot|/|Q|, EGD = |P - clutter|/|shot|.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::Sddr;
use crate::diffusion::Volume;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doppler: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn from_positions(positions: impl IntoIterator<Item = [f64; 3]>) -> Result<Self> {
        let mut cloud = Self::default();
        for p in positions {
            cloud.try_push(Point { position: p, intensity: None, doppler: None })?;
        }
        Ok(cloud)
    }

    pub fn from_points(points: Vec<Point>) -> Result<Self> {
        let mut cloud = Self { points: Vec::with_capacity(points.len()) };
        for p in points {
            cloud.try_push(p)?;
        }
        Ok(cloud)
    }

    /// Appends a point, rejecting non-finite coordinates or attributes.
    pub fn try_push(&mut self, p: Point) -> Result<()> {
        let finite = p.position.iter().all(|c| c.is_finite())
            && p.intensity.is_none_or(f64::is_finite)
            && p.doppler.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::InvalidParameter(format!("non-finite point {:?}", p.position)));
        }
        self.points.push(p);
        Ok(())
    }

    /// Appends a point known to be finite.
    pub fn push_with(&mut self, position: [f64; 3], intensity: Option<f64>, doppler: Option<f64>) {
        self.try_push(Point { position, intensity, doppler }).expect("finite point");
    }

    pub fn push(&mut self, position: [f64; 3]) {
        self.push_with(position, None, None);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn has_attributes(&self) -> bool {
        self.points.iter().any(|p| p.intensity.is_some() || p.doppler.is_some())
    }

    /// The points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud { points: indices.iter().map(|i| self.points[*i]).collect() }
    }

    pub fn translated(&self, offset: [f64; 3]) -> PointCloud {
        let mut out = self.clone();
        for p in &mut out.points {
            for (c, o) in p.position.iter_mut().zip(offset) {
                *c += o;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    /// Clutter distance (m).
    pub tau1: f64,
    /// Shot distance (m).
    pub tau2: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self { tau1: 0.3, tau2: 0.3 }
    }
}

impl MetricParams {
    /// Both thresholds must be positive; infinity is allowed.
    pub fn new(tau1: f64, tau2: f64) -> Result<Self> {
        if !(tau1 > 0.0) || !(tau2 > 0.0) {
            return Err(Error::InvalidParameter(format!("tau1={tau1}, tau2={tau2} must both be > 0")));
        }
        Ok(Self { tau1, tau2 })
    }
}

/// Cells with `u >= threshold` as points at their cell centres, strongest
/// first, at most `max_points`. Ties keep grid order. Cells outside the
/// visible region are skipped.
pub fn sddr_to_points(sddr: &Sddr, threshold: f64, max_points: usize) -> Result<PointCloud> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("occupancy threshold {threshold} must lie in (0, 1)")));
    }
    let [r, a, e] = sddr.occupancy.dims();
    let mut cells: Vec<(usize, f64)> = sddr
        .occupancy
        .values()
        .iter()
        .enumerate()
        .filter(|(_, u)| **u >= threshold)
        .filter(|(idx, _)| sddr.grid.direction((idx / e) % a, idx % e).is_some())
        .map(|(idx, u)| (idx, *u))
        .collect();
    cells.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    cells.truncate(max_points);
    let mut cloud = PointCloud::default();
    for (idx, u) in cells {
        let (k, i, j) = (idx / (a * e), (idx / e) % a, idx % e);
        debug_assert!(k < r);
        let centre = sddr.grid.cell_center(k, i, j).expect("visible cell");
        cloud.push_with(centre, Some(u), sddr.doppler.get(k, i, j));
    }
    Ok(cloud)
}

/// Largest `n` occupancy cells regardless of threshold, as points.
pub fn top_cells(sddr: &Sddr, n: usize) -> PointCloud {
    sddr_to_points(sddr, f64::MIN_POSITIVE, n).expect("threshold in range")
}

/// Ordered-statistic CFAR configuration.
///
/// Each cell under test is compared with the `k`-th smallest of its training
/// cells: up to `train` cells on each side beyond `guard` guard cells. Near
/// the edges the window is cut off (never wrapped) and `k` shrinks in
/// proportion to the surviving training cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OsCfar {
    pub guard: usize,
    pub train: usize,
    pub k: usize,
    pub threshold: CfarThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfarThreshold {
    /// Fixed multiplier on the order statistic.
    Scale(f64),
    /// Target false-alarm probability under exponentially distributed
    /// (square-law) noise; the multiplier is solved per window size.
    Pfa(f64),
}

/// False-alarm probability of OS-CFAR with `n` training cells, order `k`
/// and multiplier `alpha` for exponential noise: prod_{i<k} (n-i)/(n-i+alpha).
pub fn os_cfar_pfa(n: usize, k: usize, alpha: f64) -> f64 {
    (0..k).map(|i| (n - i) as f64 / ((n - i) as f64 + alpha)).product()
}

/// Multiplier achieving `pfa` for `n` training cells and order `k`.
pub fn os_cfar_scale(n: usize, k: usize, pfa: f64) -> Result<f64> {
    if !(pfa > 0.0 && pfa < 1.0) || k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("cannot solve OS-CFAR scale for n={n}, k={k}, pfa={pfa}")));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while os_cfar_pfa(n, k, hi) > pfa {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::InvalidParameter(format!("pfa {pfa} unreachable with n={n}, k={k}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if os_cfar_pfa(n, k, mid) > pfa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl OsCfar {
    pub fn new(guard: usize, train: usize, k: usize, threshold: CfarThreshold) -> Result<Self> {
        if train == 0 || k == 0 || k > 2 * train {
            return Err(Error::InvalidParameter(format!(
                "need train >= 1 and 1 <= k <= 2*train (train={train}, k={k})"
            )));
        }
        match threshold {
            CfarThreshold::Scale(s) if !(s > 0.0 && s.is_finite()) => {
                return Err(Error::InvalidParameter(format!("CFAR scale {s} must be positive")))
            }
            CfarThreshold::Pfa(p) if !(p > 0.0 && p < 1.0) => {
                return Err(Error::InvalidParameter(format!("CFAR pfa {p} must lie in (0, 1)")))
            }
            _ => {}
        }
        Ok(Self { guard, train, k, threshold })
    }

    pub fn window_len(&self) -> usize {
        2 * (self.guard + self.train) + 1
    }

    fn order_for(&self, n: usize) -> usize {
        let full = 2 * self.train;
        ((self.k * n) as f64 / full as f64).round().clamp(1.0, n as f64) as usize
    }

    fn scale_for(&self, n: usize, k: usize, cache: &mut HashMap<usize, f64>) -> Result<f64> {
        match self.threshold {
            CfarThreshold::Scale(s) => Ok(s),
            CfarThreshold::Pfa(p) => {
                if let Some(s) = cache.get(&n) {
                    return Ok(*s);
                }
                let s = os_cfar_scale(n, k, p)?;
                cache.insert(n, s);
                Ok(s)
            }
        }
    }

    /// Detection flags along one axis.
    pub fn detect(&self, x: &[f64]) -> Result<Vec<bool>> {
        if self.window_len() > x.len() {
            return Err(Error::InvalidParameter(format!(
                "CFAR window of {} cells exceeds axis length {}",
                self.window_len(),
                x.len()
            )));
        }
        let mut cache = HashMap::new();
        let mut flags = vec![false; x.len()];
        let mut training = Vec::with_capacity(2 * self.train);
        for (c, flag) in flags.iter_mut().enumerate() {
            training.clear();
            let inner = self.guard + 1;
            let outer = self.guard + self.train;
            for off in inner..=outer {
                if let Some(l) = c.checked_sub(off) {
                    training.push(x[l]);
                }
                if c + off < x.len() {
                    training.push(x[c + off]);
                }
            }
            let n = training.len();
            let k = self.order_for(n);
            training.sort_by(f64::total_cmp);
            let scale = self.scale_for(n, k, &mut cache)?;
            *flag = x[c] > scale * training[k - 1];
        }
        Ok(flags)
    }

    /// Runs the detector along the range axis of every bearing.
    pub fn detect_volume(&self, v: &Volume) -> Result<Vec<bool>> {
        let [r, a, e] = v.dims();
        let mut flags = vec![false; v.len()];
        let mut line = vec![0.0; r];
        for i in 0..a {
            for j in 0..e {
                for (k, x) in line.iter_mut().enumerate() {
                    *x = v.get(k, i, j);
                }
                for (k, f) in self.detect(&line)?.into_iter().enumerate() {
                    flags[v.index(k, i, j)] = f;
                }
            }
        }
        Ok(flags)
    }
}

/// CFAR detections of an SDDR's occupancy as points.
pub fn cfar_points(sddr: &Sddr, cfar: &OsCfar) -> Result<PointCloud> {
    let flags = cfar.detect_volume(&sddr.occupancy)?;
    let [_, a, e] = sddr.occupancy.dims();
    let mut cloud = PointCloud::default();
    for (idx, _) in flags.iter().enumerate().filter(|(_, f)| **f) {
        let (k, i, j) = (idx / (a * e), (idx / e) % a, idx % e);
        if let Some(c) = sddr.grid.cell_center(k, i, j) {
            cloud.push_with(c, Some(sddr.occupancy.get(k, i, j)), sddr.doppler.get(k, i, j));
        }
    }
    Ok(cloud)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Exact nearest-neighbour search over a uniform bucket grid.
pub struct NearestIndex {
    points: Vec<[f64; 3]>,
    origin: [f64; 3],
    cell: f64,
    extent: [i64; 3],
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl NearestIndex {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let span = (0..3).map(|d| hi[d] - lo[d]).fold(0.0, f64::max);
        let cell = if span > 0.0 { span / (points.len() as f64).cbrt().max(1.0) } else { 1.0 };
        let mut index = Self { points, origin: lo, cell, extent: [0; 3], buckets: HashMap::new() };
        for d in 0..3 {
            index.extent[d] = ((hi[d] - lo[d]) / cell).floor() as i64;
        }
        for (i, p) in index.points.iter().enumerate() {
            let key = index.key(*p);
            index.buckets.entry(key).or_default().push(i);
        }
        index
    }

    fn key(&self, p: [f64; 3]) -> [i64; 3] {
        let mut k = [0; 3];
        for d in 0..3 {
            k[d] = ((p[d] - self.origin[d]) / self.cell).floor() as i64;
        }
        k
    }

    /// Index and distance of the nearest stored point, ties to the lowest
    /// index.
    pub fn nearest(&self, q: [f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = self.key(q);
        let max_ring = (0..3)
            .map(|d| (c[d]).abs().max((self.extent[d] - c[d]).abs()))
            .max()
            .unwrap_or(0);
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=max_ring {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let Some(bucket) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                            continue;
                        };
                        for &i in bucket {
                            let d = dist(q, self.points[i]);
                            let better = match best {
                                None => true,
                                Some((bi, bd)) => d < bd || (d == bd && i < bi),
                            };
                            if better {
                                best = Some((i, d));
                            }
                        }
                    }
                }
            }
            // anything in a later ring is at least `ring * cell` away
            if let Some((_, bd)) = best {
                if bd < ring as f64 * self.cell {
                    break;
                }
            }
        }
        best
    }
}

/// Distance from each point of `from` to its nearest neighbour in `to`.
pub fn nearest_distances(from: &PointCloud, to: &PointCloud) -> Vec<f64> {
    let index = NearestIndex::new(to.positions());
    from.points
        .iter()
        .map(|p| index.nearest(p.position).map_or(f64::INFINITY, |(_, d)| d))
        .collect()
}

fn require_non_empty(p: &PointCloud, q: &PointCloud, what: &str) -> Result<()> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "{what} needs two non-empty clouds (got {} and {} points)",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Symmetric Chamfer distance: the average of the two mean
/// nearest-neighbour distances.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    require_non_empty(p, q, "Chamfer distance")?;
    Ok(0.5 * (mean(&nearest_distances(p, q)) + mean(&nearest_distances(q, p))))
}

/// Modified Hausdorff distance: the larger of the two mean nearest-neighbour
/// distances.
pub fn modified_hausdorff(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    require_non_empty(p, q, "modified Hausdorff distance")?;
    Ok(mean(&nearest_distances(p, q)).max(mean(&nearest_distances(q, p))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmdMode {
    #[default]
    Exact,
    Approximate,
}

impl std::str::FromStr for EmdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EmdMode::Exact),
            "approximate" | "approx" => Ok(EmdMode::Approximate),
            other => Err(Error::InvalidParameter(format!("unknown EMD mode '{other}'"))),
        }
    }
}

pub const EMD_EXACT_CAP: usize = 4096;
/// Seed of the resampling used when the clouds differ in size.
pub const EMD_RESAMPLE_SEED: u64 = 0x5DD2;
/// Entropic regularization of the approximate mode, relative to the largest
/// pairwise distance.
pub const SINKHORN_RELATIVE_EPSILON: f64 = 1e-3;

/// Earth mover's distance: mean matched distance of the optimal one-to-one
/// assignment.
///
/// Clouds of different sizes are equalized by resampling the smaller one
/// uniformly with replacement (seeded by [`EMD_RESAMPLE_SEED`]).
/// Approximate mode runs log-domain Sinkhorn and rounds the result to a
/// feasible transport plan, so it never undershoots the exact value.
pub fn emd(p: &PointCloud, q: &PointCloud, mode: EmdMode) -> Result<f64> {
    emd_seeded(p, q, mode, EMD_RESAMPLE_SEED)
}

pub fn emd_seeded(p: &PointCloud, q: &PointCloud, mode: EmdMode, seed: u64) -> Result<f64> {
    require_non_empty(p, q, "EMD")?;
    let (mut a, mut b) = (p.positions(), q.positions());
    if a.len() != b.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (small, n) = if a.len() < b.len() { (&mut a, b.len()) } else { (&mut b, a.len()) };
        let base = small.len();
        while small.len() < n {
            let pick = small[rng.random_range(0..base)];
            small.push(pick);
        }
    }
    let n = a.len();
    match mode {
        EmdMode::Exact => {
            if n > EMD_EXACT_CAP {
                return Err(Error::SizeCap { size: n, cap: EMD_EXACT_CAP });
            }
            let cost: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| dist(*x, *y))).collect();
            let assignment = hungarian(&cost, n);
            Ok(assignment.iter().enumerate().map(|(i, j)| cost[i * n + j]).sum::<f64>() / n as f64)
        }
        EmdMode::Approximate => Ok(sinkhorn_rounded(&a, &b)),
    }
}

/// Minimum-cost perfect matching on a dense `n x n` cost matrix (row-major).
/// Returns the column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // shortest augmenting paths with potentials, 1-based with a sentinel 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[matched[j] - 1] = j - 1;
    }
    out
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Sinkhorn with uniform marginals, rounded onto the transportation
/// polytope; returns `<plan, cost>`, which for uniform `1/n` marginals is
/// the mean matched distance.
fn sinkhorn_rounded(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let n = a.len();
    let max_cost = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| dist(*x, *y)))
        .fold(0.0, f64::max);
    if max_cost == 0.0 {
        return 0.0;
    }
    let eps = SINKHORN_RELATIVE_EPSILON * max_cost;
    let log_w = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let c = |i: usize, j: usize| dist(a[i], b[j]);
    for _ in 0..2000 {
        for i in 0..n {
            f[i] = eps * log_w - eps * log_sum_exp((0..n).map(|j| (g[j] - c(i, j)) / eps));
        }
        for j in 0..n {
            g[j] = eps * log_w - eps * log_sum_exp((0..n).map(|i| (f[i] - c(i, j)) / eps));
        }
        // columns are exact after the g update; check rows
        let row_err: f64 = (0..n)
            .map(|i| {
                let s: f64 = (0..n).map(|j| ((f[i] + g[j] - c(i, j)) / eps).exp()).sum();
                (s - 1.0 / n as f64).abs()
            })
            .sum();
        if row_err < 1e-9 {
            break;
        }
    }
    // Altschuler-Weed-Rigollet rounding
    let w = 1.0 / n as f64;
    let mut plan: Vec<f64> = (0..n * n).map(|ij| ((f[ij / n] + g[ij % n] - c(ij / n, ij % n)) / eps).exp()).collect();
    for i in 0..n {
        let s: f64 = plan[i * n..(i + 1) * n].iter().sum();
        if s > w {
            plan[i * n..(i + 1) * n].iter_mut().for_each(|x| *x *= w / s);
        }
    }
    for j in 0..n {
        let s: f64 = (0..n).map(|i| plan[i * n + j]).sum();
        if s > w {
            (0..n).for_each(|i| plan[i * n + j] *= w / s);
        }
    }
    let er: Vec<f64> = (0..n).map(|i| w - plan[i * n..(i + 1) * n].iter().sum::<f64>()).collect();
    let ec: Vec<f64> = (0..n).map(|j| w - (0..n).map(|i| plan[i * n + j]).sum::<f64>()).collect();
    let deficit: f64 = er.iter().sum();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut pij = plan[i * n + j];
            if deficit > 0.0 {
                pij += er[i] * ec[j] / deficit;
            }
            total += pij * c(i, j);
        }
    }
    total
}

/// Indices of predictions farther than `tau1` from every reference point.
/// With an empty reference every prediction is clutter.
pub fn clutter_indices(p: &PointCloud, q: &PointCloud, params: &MetricParams) -> Vec<usize> {
    nearest_distances(p, q)
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > params.tau1)
        .map(|(i, _)| i)
        .collect()
}

/// Indices of reference points strictly within `tau2` of some prediction.
pub fn shot_indices(p: &PointCloud, q: &PointCloud, params: &MetricParams) -> Vec<usize> {
    nearest_distances(q, p)
        .iter()
        .enumerate()
        .filter(|(_, d)| **d < params.tau2)
        .map(|(i, _)| i)
        .collect()
}

pub fn clutter_set(p: &PointCloud, q: &PointCloud, params: &MetricParams) -> PointCloud {
    p.select(&clutter_indices(p, q, params))
}

pub fn shot_set(p: &PointCloud, q: &PointCloud, params: &MetricParams) -> PointCloud {
    q.select(&shot_indices(p, q, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub vpr: f64,
    pub srl: f64,
    /// `None` when no reference point is shot.
    pub egd: Option<f64>,
    pub predicted: usize,
    pub reference: usize,
    pub clutter: usize,
    pub shot: usize,
}

pub fn quality(p: &PointCloud, q: &PointCloud, params: &MetricParams) -> Result<Quality> {
    require_non_empty(p, q, "quality")?;
    let clutter = clutter_indices(p, q, params).len();
    let shot = shot_indices(p, q, params).len();
    Ok(Quality {
        vpr: 1.0 - clutter as f64 / p.len() as f64,
        srl: shot as f64 / q.len() as f64,
        egd: (shot > 0).then(|| (p.len() - clutter) as f64 / shot as f64),
        predicted: p.len(),
        reference: q.len(),
        clutter,
        shot,
    })
}

/// Every metric of one prediction against one reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer: f64,
    pub emd: f64,
    pub emd_mode: EmdMode,
    pub modified_hausdorff: f64,
    pub tau1: f64,
    pub tau2: f64,
    #[serde(flatten)]
    pub quality: Quality,
}

/// Exact EMD up to the size cap, approximate beyond it.
pub fn evaluate(p: &PointCloud, q: &PointCloud, params: &MetricParams) -> Result<MetricReport> {
    let quality = quality(p, q, params)?;
    let emd_mode = if p.len().max(q.len()) <= EMD_EXACT_CAP { EmdMode::Exact } else { EmdMode::Approximate };
    Ok(MetricReport {
        chamfer: chamfer(p, q)?,
        emd: emd(p, q, emd_mode)?,
        emd_mode,
        modified_hausdorff: modified_hausdorff(p, q)?,
        tau1: params.tau1,
        tau2: params.tau2,
        quality,
    })
}
