//! Finite covering datasets over compact boxes and training batches drawn from them.
//!
//! [`cover_box`] places a regular grid whose Euclidean `eps`-balls cover the box:
//! per-dimension spacing is `2 eps / sqrt(n)`, so every grid cell is a cube of
//! half-diagonal at most `eps`. [`covering_audit`] checks the covering claim by
//! sampling, independently of how the points were produced.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::{sha256_hex, substream_rng};
use crate::systems::AxisBox;

/// Default cap on the number of grid points.
pub const DEFAULT_MAX_POINTS: u128 = 20_000_000;

pub const GRID_RULE: &str = "euclidean-grid: spacing 2*eps/sqrt(n), centers lo+spacing/2+j*spacing clipped to hi-spacing/2";

/// A finite sample set whose `eps`-balls cover `bounds`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverDataset {
    dim: usize,
    data: Vec<f64>,
    pub eps: f64,
    pub bounds: AxisBox,
    pub rule: String,
}

impl CoverDataset {
    /// Wraps explicit points. Every point must lie in `bounds`.
    pub fn from_points(points: &[Vec<f64>], eps: f64, bounds: AxisBox) -> Result<Self> {
        let dim = bounds.dim();
        if points.is_empty() {
            return Err(Error::invalid("a dataset needs at least one point"));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {eps}")));
        }
        let mut data = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if !bounds.contains(p) {
                return Err(Error::invalid(format!("point {i} = {p:?} lies outside the box")));
            }
            data.extend_from_slice(p);
        }
        Ok(CoverDataset {
            dim,
            data,
            eps,
            bounds,
            rule: "explicit".into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// CSV text: header `prefix0,prefix1,...`, one row per point.
    pub fn to_csv(&self, prefix: &str) -> String {
        let mut s = (0..self.dim)
            .map(|i| format!("{prefix}{i}"))
            .collect::<Vec<_>>()
            .join(",");
        s.push('\n');
        for p in self.points() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn content_hash(&self, prefix: &str) -> String {
        sha256_hex(self.to_csv(prefix).as_bytes())
    }

    pub fn metadata(&self, prefix: &str) -> DatasetMeta {
        DatasetMeta {
            eps: self.eps,
            bounds: self.bounds.to_pairs(),
            count: self.count(),
            dim: self.dim,
            rule: self.rule.clone(),
            column_prefix: prefix.to_string(),
            content_hash: self.content_hash(prefix),
        }
    }

    /// Writes `<stem>.csv` and the `<stem>.meta.json` sidecar into `dir`.
    pub fn save(&self, dir: &Path, stem: &str, prefix: &str) -> Result<DatasetMeta> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let meta_path = dir.join(format!("{stem}.meta.json"));
        std::fs::write(&csv_path, self.to_csv(prefix)).map_err(|e| Error::io(&csv_path, e))?;
        let meta = self.metadata(prefix);
        let mut f = std::fs::File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::to_writer_pretty(&mut f, &meta)?;
        f.write_all(b"\n").map_err(|e| Error::io(&meta_path, e))?;
        Ok(meta)
    }

    /// Loads a dataset and checks it against its sidecar hash.
    pub fn load(dir: &Path, stem: &str) -> Result<(Self, DatasetMeta)> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let meta_path = dir.join(format!("{stem}.meta.json"));
        let meta_text = std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::Provenance(format!("missing dataset metadata {}: {e}", meta_path.display())))?;
        let meta: DatasetMeta = serde_json::from_str(&meta_text)?;
        let csv = std::fs::read_to_string(&csv_path)
            .map_err(|e| Error::Provenance(format!("missing dataset {}: {e}", csv_path.display())))?;
        let actual = sha256_hex(csv.as_bytes());
        if actual != meta.content_hash {
            return Err(Error::Provenance(format!(
                "{} hashes to {actual}, metadata records {}",
                csv_path.display(),
                meta.content_hash
            )));
        }
        let ds = Self::from_csv(&csv, meta.eps, AxisBox::from_pairs(&meta.bounds)?, &meta.rule)?;
        Ok((ds, meta))
    }

    pub fn from_csv(text: &str, eps: f64, bounds: AxisBox, rule: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty dataset CSV"))?;
        let dim = header.split(',').count();
        if dim != bounds.dim() {
            return Err(Error::invalid(format!(
                "CSV has {dim} columns, box has dimension {}",
                bounds.dim()
            )));
        }
        let mut points = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::invalid(format!("CSV row {}: {e}", ln + 2)))?;
            if row.len() != dim {
                return Err(Error::invalid(format!("CSV row {} has {} fields", ln + 2, row.len())));
            }
            points.push(row);
        }
        let mut ds = Self::from_points(&points, eps, bounds)?;
        ds.rule = rule.to_string();
        Ok(ds)
    }
}

/// Sidecar record written next to every dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub eps: f64,
    pub bounds: Vec<[f64; 2]>,
    pub count: usize,
    pub dim: usize,
    pub rule: String,
    pub column_prefix: String,
    pub content_hash: String,
}

fn axis_centers(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    let width = hi - lo;
    if width <= spacing {
        return vec![0.5 * (lo + hi)];
    }
    let k = (width / spacing).ceil() as usize;
    let last = hi - 0.5 * spacing;
    (0..k)
        .map(|j| (lo + 0.5 * spacing + j as f64 * spacing).min(last))
        .collect()
}

/// Number of points [`cover_box`] would produce, without allocating them.
pub fn grid_count(bounds: &AxisBox, eps: f64) -> u128 {
    let spacing = 2.0 * eps / (bounds.dim() as f64).sqrt();
    bounds
        .lo
        .iter()
        .zip(&bounds.hi)
        .map(|(&l, &h)| {
            let w = h - l;
            if w <= spacing {
                1u128
            } else {
                (w / spacing).ceil() as u128
            }
        })
        .product()
}

/// Deterministic grid covering `bounds` with Euclidean `eps`-balls.
pub fn cover_box(bounds: &AxisBox, eps: f64, max_points: u128) -> Result<CoverDataset> {
    bounds.validate()?;
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let required = grid_count(bounds, eps);
    if required > max_points {
        return Err(Error::Capacity {
            what: format!("covering grid at eps={eps}"),
            required,
            cap: max_points,
        });
    }
    let n = bounds.dim();
    let spacing = 2.0 * eps / (n as f64).sqrt();
    let axes: Vec<Vec<f64>> = bounds
        .lo
        .iter()
        .zip(&bounds.hi)
        .map(|(&l, &h)| axis_centers(l, h, spacing))
        .collect();
    let count: usize = axes.iter().map(Vec::len).product();
    let mut data = Vec::with_capacity(count * n);
    let mut idx = vec![0usize; n];
    for _ in 0..count {
        for d in 0..n {
            data.push(axes[d][idx[d]]);
        }
        // last dimension varies fastest
        for d in (0..n).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(CoverDataset {
        dim: n,
        data,
        eps,
        bounds: bounds.clone(),
        rule: GRID_RULE.into(),
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Uniform bucket grid over a dataset for radius-limited nearest-point queries.
pub struct NeighborIndex<'a> {
    ds: &'a CoverDataset,
    cell: f64,
    lo: Vec<f64>,
    shape: Vec<usize>,
    starts: Vec<usize>,
    members: Vec<usize>,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(ds: &'a CoverDataset, cell: f64) -> Self {
        let n = ds.dim();
        let lo = ds.bounds.lo.clone();
        let mut shape: Vec<usize> = ds
            .bounds
            .lo
            .iter()
            .zip(&ds.bounds.hi)
            .map(|(l, h)| (((h - l) / cell).floor() as usize + 1).max(1))
            .collect();
        // keep the dense table bounded for tiny cells
        let mut cell = cell;
        while shape.iter().map(|&s| s as u128).product::<u128>() > 4 * ds.count() as u128 + 64 {
            cell *= 2.0;
            shape = ds
                .bounds
                .lo
                .iter()
                .zip(&ds.bounds.hi)
                .map(|(l, h)| (((h - l) / cell).floor() as usize + 1).max(1))
                .collect();
        }
        let total: usize = shape.iter().product();
        let mut counts = vec![0usize; total + 1];
        let cells: Vec<usize> = ds
            .points()
            .map(|p| Self::cell_of(&lo, &shape, cell, p, n))
            .collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut members = vec![0usize; ds.count()];
        for (i, &c) in cells.iter().enumerate() {
            members[fill[c]] = i;
            fill[c] += 1;
        }
        NeighborIndex {
            ds,
            cell,
            lo,
            shape,
            starts,
            members,
        }
    }

    fn coord(lo: f64, cell: f64, len: usize, v: f64) -> usize {
        let c = ((v - lo) / cell).floor();
        if c < 0.0 {
            0
        } else {
            (c as usize).min(len - 1)
        }
    }

    fn cell_of(lo: &[f64], shape: &[usize], cell: f64, p: &[f64], n: usize) -> usize {
        let mut flat = 0;
        for d in 0..n {
            flat = flat * shape[d] + Self::coord(lo[d], cell, shape[d], p[d]);
        }
        flat
    }

    /// Nearest dataset point to `q` among those within `radius`, as `(index, distance)`.
    /// Points farther than `radius` may or may not be found.
    pub fn nearest_within(&self, q: &[f64], radius: f64, skip: Option<usize>) -> Option<(usize, f64)> {
        let n = self.ds.dim();
        let reach = (radius / self.cell).ceil() as isize;
        let center: Vec<isize> = (0..n)
            .map(|d| Self::coord(self.lo[d], self.cell, self.shape[d], q[d]) as isize)
            .collect();
        let mut best: Option<(usize, f64)> = None;
        let mut offset = vec![-reach; n];
        loop {
            let mut flat = 0usize;
            let mut inside = true;
            for d in 0..n {
                let c = center[d] + offset[d];
                if c < 0 || c >= self.shape[d] as isize {
                    inside = false;
                    break;
                }
                flat = flat * self.shape[d] + c as usize;
            }
            if inside {
                for &i in &self.members[self.starts[flat]..self.starts[flat + 1]] {
                    if Some(i) == skip {
                        continue;
                    }
                    let d2 = dist2(q, self.ds.point(i));
                    if best.map_or(true, |(_, b)| d2 < b) {
                        best = Some((i, d2));
                    }
                }
            }
            let mut d = n;
            loop {
                if d == 0 {
                    return best.map(|(i, d2)| (i, d2.sqrt()));
                }
                d -= 1;
                offset[d] += 1;
                if offset[d] <= reach {
                    break;
                }
                offset[d] = -reach;
            }
        }
    }

    /// Exact nearest point by exhaustive scan.
    pub fn nearest_brute(&self, q: &[f64], skip: Option<usize>) -> Option<(usize, f64)> {
        self.ds
            .points()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(i, p)| (i, dist2(q, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, d2)| (i, d2.sqrt()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub passed: bool,
    pub trials: usize,
    /// Largest nearest-sample distance seen over all trial points.
    pub worst_distance: f64,
    pub failures: usize,
}

/// Draws `trials` uniform points in the dataset's box and checks that each lies
/// within `eps` of some sample.
pub fn covering_audit(ds: &CoverDataset, trials: usize, seed: u64) -> AuditReport {
    let mut rng = substream_rng(seed, "audit");
    let index = NeighborIndex::new(ds, ds.eps);
    let mut worst = 0.0_f64;
    let mut failures = 0;
    for _ in 0..trials.max(1) {
        let q = ds.bounds.sample(&mut rng);
        let d = match index.nearest_within(&q, ds.eps, None) {
            Some((_, d)) if d <= ds.eps => d,
            _ => index.nearest_brute(&q, None).map(|(_, d)| d).unwrap_or(f64::INFINITY),
        };
        if d > ds.eps {
            failures += 1;
        }
        worst = worst.max(d);
    }
    AuditReport {
        passed: failures == 0,
        trials: trials.max(1),
        worst_distance: worst,
        failures,
    }
}

/// Index tuple into the state and external-input datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BatchTuple {
    pub q: usize,
    pub r: usize,
    pub wq: usize,
    pub wr: usize,
}

impl BatchTuple {
    pub fn is_diagonal(&self) -> bool {
        self.q == self.r
    }
}

/// Batch composition knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub size: usize,
    pub diagonal_fraction: f64,
    pub nn_fraction: f64,
}

/// Pre-computed nearest neighbour of every state sample.
#[derive(Debug, Clone)]
pub struct BatchSource<'a> {
    pub xs: &'a CoverDataset,
    pub ws: &'a CoverDataset,
    neighbors: Vec<usize>,
}

impl<'a> BatchSource<'a> {
    pub fn new(xs: &'a CoverDataset, ws: &'a CoverDataset) -> Self {
        let neighbors = if xs.count() < 2 {
            vec![0; xs.count()]
        } else {
            let radius = 2.0 * xs.eps * 1.000_001;
            let index = NeighborIndex::new(xs, radius);
            (0..xs.count())
                .map(|i| {
                    index
                        .nearest_within(xs.point(i), radius, Some(i))
                        .or_else(|| index.nearest_brute(xs.point(i), Some(i)))
                        .map(|(j, _)| j)
                        .unwrap_or(i)
                })
                .collect()
        };
        BatchSource { xs, ws, neighbors }
    }

    pub fn neighbor(&self, i: usize) -> usize {
        self.neighbors[i]
    }

    /// Draws `plan.size` tuples: `floor(size * diagonal_fraction)` with `q == r`,
    /// `floor(size * nn_fraction)` nearest-neighbour pairs, the rest uniform with `q != r`.
    pub fn draw(&self, plan: &BatchPlan, rng: &mut ChaCha8Rng) -> Result<Vec<BatchTuple>> {
        if plan.size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(0.0..=1.0).contains(&plan.diagonal_fraction)
            || !(0.0..=1.0).contains(&plan.nn_fraction)
            || plan.diagonal_fraction + plan.nn_fraction > 1.0
        {
            return Err(Error::invalid("batch fractions must lie in [0, 1] and sum to at most 1"));
        }
        let n = self.xs.count();
        let m = self.ws.count();
        let n_diag = (plan.size as f64 * plan.diagonal_fraction + 1e-9).floor() as usize;
        let n_nn = (plan.size as f64 * plan.nn_fraction + 1e-9).floor() as usize;
        let mut out = Vec::with_capacity(plan.size);
        for k in 0..plan.size {
            let q = rng.gen_range(0..n);
            let r = if k < n_diag || n < 2 {
                q
            } else if k < n_diag + n_nn {
                self.neighbors[q]
            } else {
                let mut r = rng.gen_range(0..n - 1);
                if r >= q {
                    r += 1;
                }
                r
            };
            let wq = rng.gen_range(0..m);
            let wr = rng.gen_range(0..m);
            out.push(BatchTuple { q, r, wq, wr });
        }
        Ok(out)
    }
}

/// Convenience wrapper drawing one batch from a fresh seeded stream.
pub fn draw_batch(
    xs: &CoverDataset,
    ws: &CoverDataset,
    plan: &BatchPlan,
    seed: u64,
) -> Result<Vec<BatchTuple>> {
    let mut rng = substream_rng(seed, "batching");
    BatchSource::new(xs, ws).draw(plan, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize, lo: f64, hi: f64) -> AxisBox {
        AxisBox::cube(n, lo, hi).unwrap()
    }

    /// Exhaustive fine-grid check of the covering radius.
    fn fine_grid_worst(ds: &CoverDataset, steps: usize) -> f64 {
        let n = ds.dim();
        let mut idx = vec![0usize; n];
        let mut worst = 0.0_f64;
        loop {
            let q: Vec<f64> = (0..n)
                .map(|d| {
                    let (l, h) = (ds.bounds.lo[d], ds.bounds.hi[d]);
                    l + (h - l) * idx[d] as f64 / steps as f64
                })
                .collect();
            let best = ds
                .points()
                .map(|p| dist2(&q, p))
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            worst = worst.max(best);
            let mut d = n;
            loop {
                if d == 0 {
                    return worst;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] <= steps {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    #[test]
    fn interval_half_eps_gives_two_points() {
        let ds = cover_box(&unit(1, -1.0, 1.0), 0.5, DEFAULT_MAX_POINTS).unwrap();
        assert_eq!(ds.points().map(|p| p[0]).collect::<Vec<_>>(), vec![-0.5, 0.5]);
        assert!(fine_grid_worst(&ds, 2000) <= 0.5 + 1e-12);
    }

    #[test]
    fn interval_unit_eps_gives_center() {
        let ds = cover_box(&unit(1, -1.0, 1.0), 1.0, DEFAULT_MAX_POINTS).unwrap();
        assert_eq!(ds.count(), 1);
        assert_eq!(ds.point(0), &[0.0]);
    }

    #[test]
    fn unit_square_grid() {
        let ds = cover_box(&unit(2, 0.0, 1.0), 0.1, DEFAULT_MAX_POINTS).unwrap();
        assert!(ds.count() <= 64);
        assert_eq!(ds.count(), 64);
        assert!(ds.points().all(|p| ds.bounds.contains(p)));
        assert!(fine_grid_worst(&ds, 1000) <= 0.1 + 1e-12);
        assert!(covering_audit(&ds, 100_000, 1).passed);
    }

    #[test]
    fn reference_grid_sizes() {
        let x = unit(1, -std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
        assert_eq!(grid_count(&x, 0.00039), 4028);
        assert_eq!(cover_box(&x, 0.008, DEFAULT_MAX_POINTS).unwrap().count(), 197);
        assert_eq!(cover_box(&unit(1, -1.0, 1.0), 0.01, DEFAULT_MAX_POINTS).unwrap().count(), 100);
    }

    #[test]
    fn capacity_error_names_required_count() {
        let err = cover_box(&unit(3, -0.25, 0.25), 1e-9, DEFAULT_MAX_POINTS).unwrap_err();
        match err {
            Error::Capacity { required, .. } => assert!(required > DEFAULT_MAX_POINTS),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn audit_passes_on_grid_and_fails_on_undercover() {
        let ds = cover_box(&unit(1, -1.0, 1.0), 0.5, DEFAULT_MAX_POINTS).unwrap();
        let rep = covering_audit(&ds, 100_000, 4);
        assert!(rep.passed);
        assert!(rep.worst_distance <= 0.5);

        let thin = CoverDataset::from_points(&[vec![-0.5]], 0.5, unit(1, -1.0, 1.0)).unwrap();
        let rep = covering_audit(&thin, 100_000, 4);
        assert!(!rep.passed);
        assert!(rep.worst_distance > 1.49 && rep.worst_distance <= 1.5);
    }

    #[test]
    fn doubling_eps_never_grows_count() {
        for eps in [0.01, 0.037, 0.1, 0.3] {
            for n in 1..=3 {
                let b = unit(n, -1.0, 1.0);
                assert!(grid_count(&b, 2.0 * eps) <= grid_count(&b, eps));
            }
        }
    }

    #[test]
    fn permuting_dimensions_permutes_points() {
        let a = AxisBox::new(vec![0.0, -1.0], vec![1.0, 3.0]).unwrap();
        let b = AxisBox::new(vec![-1.0, 0.0], vec![3.0, 1.0]).unwrap();
        let da = cover_box(&a, 0.2, DEFAULT_MAX_POINTS).unwrap();
        let db = cover_box(&b, 0.2, DEFAULT_MAX_POINTS).unwrap();
        let mut pa: Vec<(u64, u64)> = da.points().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
        let mut pb: Vec<(u64, u64)> = db.points().map(|p| (p[1].to_bits(), p[0].to_bits())).collect();
        pa.sort_unstable();
        pb.sort_unstable();
        assert_eq!(pa, pb);
    }

    #[test]
    fn batches_are_deterministic_and_composed() {
        let xs = cover_box(&unit(1, -1.0, 1.0), 0.05, DEFAULT_MAX_POINTS).unwrap();
        let ws = cover_box(&unit(1, -1.0, 1.0), 0.2, DEFAULT_MAX_POINTS).unwrap();
        let plan = BatchPlan {
            size: 4,
            diagonal_fraction: 0.25,
            nn_fraction: 0.1,
        };
        assert_eq!(draw_batch(&xs, &ws, &plan, 7).unwrap(), draw_batch(&xs, &ws, &plan, 7).unwrap());

        let plan = BatchPlan {
            size: 100,
            diagonal_fraction: 0.25,
            nn_fraction: 0.1,
        };
        let b = draw_batch(&xs, &ws, &plan, 3).unwrap();
        assert_eq!(b.iter().filter(|t| t.is_diagonal()).count(), 25);
        let src = BatchSource::new(&xs, &ws);
        for t in &b[25..35] {
            assert_eq!(t.r, src.neighbor(t.q));
            let d = (xs.point(t.q)[0] - xs.point(t.r)[0]).abs();
            assert!(d <= 2.0 * xs.eps / 1.0 + 1e-12);
        }
        let zero = BatchPlan { size: 0, ..plan };
        assert!(matches!(draw_batch(&xs, &ws, &zero, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn batch_members_come_from_their_datasets() {
        let xs = cover_box(&unit(2, -1.0, 1.0), 0.3, DEFAULT_MAX_POINTS).unwrap();
        let ws = cover_box(&unit(1, -0.5, 0.5), 0.1, DEFAULT_MAX_POINTS).unwrap();
        let plan = BatchPlan {
            size: 10_000,
            diagonal_fraction: 0.1,
            nn_fraction: 0.1,
        };
        let b = draw_batch(&xs, &ws, &plan, 11).unwrap();
        let member = |ds: &CoverDataset, p: &[f64]| ds.points().any(|s| s == p);
        for t in &b {
            assert!(member(&xs, xs.point(t.q)));
            assert!(member(&xs, xs.point(t.r)));
            assert!(member(&ws, ws.point(t.wq)));
            assert!(member(&ws, ws.point(t.wr)));
        }
    }

    #[test]
    fn csv_round_trip_preserves_bits() {
        let ds = cover_box(&unit(2, -0.3, 0.7), 0.07, DEFAULT_MAX_POINTS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let meta = ds.save(dir.path(), "xs", "x").unwrap();
        let (back, meta2) = CoverDataset::load(dir.path(), "xs").unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(back.as_flat(), ds.as_flat());
        std::fs::write(dir.path().join("xs.csv"), "x0,x1\n0.1,0.2\n").unwrap();
        assert!(matches!(CoverDataset::load(dir.path(), "xs"), Err(Error::Provenance(_))));
    }
}
