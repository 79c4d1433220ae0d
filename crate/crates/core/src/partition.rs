//! Spatial decomposition of a dataset into Voronoi cells.
//!
//! Centers are data points picked by farthest-first traversal. Every sample
//! belongs to the cell of its nearest center (Euclidean), ties going to the
//! lowest center index, so `route` of a training point always returns the
//! cell it was assigned to.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{subsample_indices, Dataset, Label};
use crate::error::{Error, Result};
use crate::scalar::{squared_distance, Real};
use crate::seed::{self, Stream};

/// Above this many points the initial traversal runs on a uniform subsample.
pub const DEFAULT_SUBSAMPLE_THRESHOLD: usize = 50_000;

const PARTITION_MAGIC: &str = "VPSVM-PARTITION";
const PARTITION_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Voronoi,
    RandomChunks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Real")]
pub enum Target<T> {
    MaxCellSize(usize),
    MaxRadius(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Partition<T> {
    pub kind: PartitionKind,
    pub target: Target<T>,
    pub dim: usize,
    /// Row-major center coordinates; empty for random chunks.
    pub centers: Vec<T>,
    /// `cells[j]` holds the sample indices of cell `j`, ascending.
    pub cells: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CellStats<T> {
    pub size: usize,
    pub radius: T,
    pub negatives: usize,
    pub positives: usize,
}

/// Per-cell statistics plus the `r ≤ 16 m^(-1/d)` diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PartitionStats<T> {
    pub cells: Vec<CellStats<T>>,
    pub max_radius: T,
    /// `16 m^(-1/d)` for the current cell count `m`.
    pub radius_bound: T,
    pub radius_bound_holds: bool,
}

// ---------------------------------------------------------------------------
// farthest-first traversal

/// Incremental farthest-first traversal over a pool of dataset rows.
struct Traversal<'a, T> {
    data: &'a Dataset<T>,
    pool: Vec<usize>,
    min_d2: Vec<T>,
    taken: Vec<bool>,
    /// Pool positions of the chosen centers, in order.
    chosen: Vec<usize>,
}

impl<'a, T: Real> Traversal<'a, T> {
    fn new(data: &'a Dataset<T>, pool: Vec<usize>) -> Self {
        let n = pool.len();
        Traversal {
            data,
            pool,
            min_d2: vec![T::infinity(); n],
            taken: vec![false; n],
            chosen: Vec::new(),
        }
    }

    fn add(&mut self, pos: usize) {
        self.taken[pos] = true;
        self.chosen.push(pos);
        let c = self.data.x(self.pool[pos]);
        let data = self.data;
        let pool = &self.pool;
        self.min_d2
            .par_iter_mut()
            .with_min_len(1024)
            .enumerate()
            .for_each(|(q, m)| {
                let d = squared_distance(data.x(pool[q]), c);
                if d < *m {
                    *m = d;
                }
            });
    }

    /// Untaken position with the largest distance to the chosen centers,
    /// lowest position on ties.
    fn farthest(&self) -> Option<(usize, T)> {
        let mut best: Option<(usize, T)> = None;
        for (q, &d) in self.min_d2.iter().enumerate() {
            if self.taken[q] {
                continue;
            }
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((q, d));
            }
        }
        best
    }

    fn max_min_d2(&self) -> T {
        self.min_d2.iter().fold(T::zero(), |m, &d| m.max(d))
    }

    fn center_rows(&self) -> Vec<usize> {
        self.chosen.iter().map(|&p| self.pool[p]).collect()
    }
}

fn check_points<T: Real>(points: &Dataset<T>, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Size("need at least one center".into()));
    }
    if m > points.len() {
        return Err(Error::Size(format!(
            "cannot pick {m} centers from {} points",
            points.len()
        )));
    }
    Ok(())
}

/// Farthest-first traversal starting at row `start`. Returns `m` row indices.
pub fn farthest_first_from<T: Real>(points: &Dataset<T>, start: usize, m: usize) -> Result<Vec<usize>> {
    check_points(points, m)?;
    if start >= points.len() {
        return Err(Error::Size(format!("start index {start} out of range")));
    }
    let mut t = Traversal::new(points, (0..points.len()).collect());
    t.add(start);
    while t.chosen.len() < m {
        let (q, _) = t.farthest().expect("m <= n leaves an untaken point");
        t.add(q);
    }
    Ok(t.center_rows())
}

/// Farthest-first traversal with a seed-chosen first center.
pub fn farthest_first<T: Real>(points: &Dataset<T>, m: usize, seed: u64) -> Result<Vec<usize>> {
    check_points(points, m)?;
    let start = seed::rng(seed, Stream::Partition, &[]).random_range(0..points.len());
    farthest_first_from(points, start, m)
}

// ---------------------------------------------------------------------------
// assignment

/// Nearest center among `centers` (row-major), lowest index on ties.
pub(crate) fn nearest_center<T: Real>(centers: &[T], dim: usize, x: &[T]) -> (usize, T) {
    let mut best = (0usize, T::infinity());
    for (j, c) in centers.chunks_exact(dim).enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn gather_rows<T: Real>(data: &Dataset<T>, rows: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(rows.len() * data.dim());
    for &r in rows {
        out.extend_from_slice(data.x(r));
    }
    out
}

fn cells_from_assignment(assign: &[usize], m: usize) -> Vec<Vec<usize>> {
    let mut cells = vec![Vec::new(); m];
    for (i, &c) in assign.iter().enumerate() {
        cells[c].push(i);
    }
    cells
}

/// Drops empty cells together with their centers.
fn compact<T: Real>(centers: Vec<T>, dim: usize, cells: Vec<Vec<usize>>) -> (Vec<T>, Vec<Vec<usize>>) {
    let mut kept_centers = Vec::with_capacity(centers.len());
    let mut kept_cells = Vec::with_capacity(cells.len());
    for (c, cell) in centers.chunks_exact(dim).zip(cells) {
        if !cell.is_empty() {
            kept_centers.extend_from_slice(c);
            kept_cells.push(cell);
        }
    }
    (kept_centers, kept_cells)
}

// ---------------------------------------------------------------------------
// partition constructors

/// Voronoi partition whose cells hold at most `max_cell_size` samples.
///
/// The traversal first places `ceil(n / max_cell_size)` centers (on a uniform
/// subsample of `subsample_threshold` points when the data is larger), then
/// every oversized cell is split by continuing the traversal inside it from
/// its own center, and all points are reassigned. This repeats until no cell
/// is too large. A cell made of more than `max_cell_size` identical points
/// cannot be split and is kept as is.
pub fn partition_voronoi_by_size<T: Real>(
    data: &Dataset<T>,
    max_cell_size: usize,
    seed: u64,
    subsample_threshold: usize,
) -> Result<Partition<T>> {
    if max_cell_size < 2 {
        return Err(Error::Parameter(format!("max cell size must be >= 2, got {max_cell_size}")));
    }
    if data.is_empty() {
        return Err(Error::Size("cannot partition an empty dataset".into()));
    }
    let n = data.len();
    let dim = data.dim();
    let threshold = subsample_threshold.max(2);

    let pool = if n > threshold {
        subsample_indices(n, threshold, seed::derive_seed(seed, Stream::Partition, &[u64::MAX]))?
    } else {
        (0..n).collect()
    };
    let m0 = n.div_ceil(max_cell_size).min(pool.len());
    let mut t = Traversal::new(data, pool);
    let start = seed::rng(seed, Stream::Partition, &[]).random_range(0..t.pool.len());
    t.add(start);
    while t.chosen.len() < m0 {
        match t.farthest() {
            Some((q, d)) if d > T::zero() => t.add(q),
            _ => break,
        }
    }
    let mut center_rows = t.center_rows();
    let mut centers = gather_rows(data, &center_rows);

    let mut assign: Vec<(usize, T)> = (0..n)
        .into_par_iter()
        .map(|i| nearest_center(&centers, dim, data.x(i)))
        .collect();

    let mut round: u64 = 0;
    loop {
        let mut sizes = vec![0usize; center_rows.len()];
        for &(c, _) in &assign {
            sizes[c] += 1;
        }
        let oversized: Vec<usize> = (0..sizes.len()).filter(|&c| sizes[c] > max_cell_size).collect();
        if oversized.is_empty() {
            break;
        }
        let first_new = center_rows.len();
        for &c in &oversized {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i].0 == c).collect();
            let mut pool = if members.len() > threshold {
                let pick = subsample_indices(
                    members.len(),
                    threshold,
                    seed::derive_seed(seed, Stream::Partition, &[round, c as u64]),
                )?;
                pick.into_iter().map(|p| members[p]).collect()
            } else {
                members.clone()
            };
            let own = center_rows[c];
            pool.retain(|&r| r != own);
            pool.insert(0, own);
            let m_c = members.len().div_ceil(max_cell_size).min(pool.len());
            let mut t = Traversal::new(data, pool);
            t.add(0);
            while t.chosen.len() < m_c {
                match t.farthest() {
                    Some((q, d)) if d > T::zero() => t.add(q),
                    _ => break,
                }
            }
            for row in t.center_rows().into_iter().skip(1) {
                center_rows.push(row);
                centers.extend_from_slice(data.x(row));
            }
        }
        if center_rows.len() == first_new {
            warn!(
                "{} cell(s) exceed the size target but consist of identical points",
                oversized.len()
            );
            break;
        }
        let new_centers = &centers[first_new * dim..];
        assign.par_iter_mut().enumerate().for_each(|(i, a)| {
            let (j, d) = nearest_center(new_centers, dim, data.x(i));
            if d < a.1 {
                *a = (first_new + j, d);
            }
        });
        round += 1;
    }

    let assign: Vec<usize> = assign.into_iter().map(|(c, _)| c).collect();
    let cells = cells_from_assignment(&assign, center_rows.len());
    let (centers, cells) = compact(centers, dim, cells);
    Ok(Partition {
        kind: PartitionKind::Voronoi,
        target: Target::MaxCellSize(max_cell_size),
        dim,
        centers,
        cells,
    })
}

/// Voronoi partition whose cells all have radius strictly below `max_radius`.
/// The traversal continues until the covering radius drops below the target.
pub fn partition_voronoi_by_radius<T: Real>(
    data: &Dataset<T>,
    max_radius: T,
    seed: u64,
) -> Result<Partition<T>> {
    if !(max_radius > T::zero() && max_radius.is_finite()) {
        return Err(Error::Parameter(format!("max radius must be positive, got {max_radius}")));
    }
    if data.is_empty() {
        return Err(Error::Size("cannot partition an empty dataset".into()));
    }
    let n = data.len();
    let dim = data.dim();
    let mut t = Traversal::new(data, (0..n).collect());
    let start = seed::rng(seed, Stream::Partition, &[]).random_range(0..n);
    t.add(start);
    while t.max_min_d2().sqrt() >= max_radius {
        let (q, _) = t.farthest().expect("positive covering radius leaves an untaken point");
        t.add(q);
    }
    let centers = gather_rows(data, &t.center_rows());
    let assign: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| nearest_center(&centers, dim, data.x(i)).0)
        .collect();
    let cells = cells_from_assignment(&assign, centers.len() / dim);
    let (centers, cells) = compact(centers, dim, cells);
    Ok(Partition {
        kind: PartitionKind::Voronoi,
        target: Target::MaxRadius(max_radius),
        dim,
        centers,
        cells,
    })
}

/// Random permutation cut into consecutive blocks of `chunk_size`.
pub fn partition_random_chunks<T: Real>(
    data: &Dataset<T>,
    chunk_size: usize,
    seed: u64,
) -> Result<Partition<T>> {
    if chunk_size < 2 {
        return Err(Error::Parameter(format!("chunk size must be >= 2, got {chunk_size}")));
    }
    let n = data.len();
    let mut rng = seed::rng(seed, Stream::Chunks, &[]);
    let perm = index::sample(&mut rng, n, n).into_vec();
    let cells = perm
        .chunks(chunk_size)
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect();
    Ok(Partition {
        kind: PartitionKind::RandomChunks,
        target: Target::MaxCellSize(chunk_size),
        dim: data.dim(),
        centers: Vec::new(),
        cells,
    })
}

impl<T: Real> Partition<T> {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn center(&self, j: usize) -> &[T] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    pub fn sample_count(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    /// Cell index of each sample.
    pub fn assignment(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.sample_count()];
        for (j, cell) in self.cells.iter().enumerate() {
            for &i in cell {
                out[i] = j;
            }
        }
        out
    }

    /// Cell of the nearest center, lowest index on ties.
    pub fn route(&self, x: &[T]) -> Result<usize> {
        if self.kind != PartitionKind::Voronoi {
            return Err(Error::Usage(
                "random-chunk partitions have no spatial routing; average over all chunks".into(),
            ));
        }
        if x.len() != self.dim {
            return Err(Error::Input(format!(
                "point has dimension {}, partition has {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("cannot route a non-finite point".into()));
        }
        Ok(nearest_center(&self.centers, self.dim, x).0)
    }

    /// Largest distance from the cell's center to one of its members.
    pub fn cell_radius(&self, j: usize, data: &Dataset<T>) -> Result<T> {
        let cell = self
            .cells
            .get(j)
            .ok_or_else(|| Error::Size(format!("cell {j} does not exist")))?;
        if cell.is_empty() {
            return Err(Error::Size(format!("cell {j} is empty")));
        }
        if self.kind != PartitionKind::Voronoi {
            return Err(Error::Usage("random chunks have no centers".into()));
        }
        let c = self.center(j);
        Ok(cell
            .iter()
            .map(|&i| squared_distance(c, data.x(i)))
            .fold(T::zero(), |m, d| m.max(d))
            .sqrt())
    }

    pub fn stats(&self, data: &Dataset<T>) -> Result<PartitionStats<T>> {
        let mut cells = Vec::with_capacity(self.len());
        for (j, cell) in self.cells.iter().enumerate() {
            let positives = cell.iter().filter(|&&i| data.y(i) == Label::Pos).count();
            let radius = if self.kind == PartitionKind::Voronoi {
                self.cell_radius(j, data)?
            } else {
                T::nan()
            };
            cells.push(CellStats {
                size: cell.len(),
                radius,
                negatives: cell.len() - positives,
                positives,
            });
        }
        let max_radius = cells.iter().fold(T::zero(), |m, c| m.max(c.radius));
        let radius_bound = T::lit(16.0) * T::lit(self.len() as f64).powf(-T::one() / T::lit(self.dim as f64));
        Ok(PartitionStats {
            radius_bound_holds: max_radius <= radius_bound,
            cells,
            max_radius,
            radius_bound,
        })
    }

    /// Checks that the cells cover `0..n` exactly once.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for cell in &self.cells {
            for &i in cell {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Format(format!("sample {i} out of range or repeated")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("partition does not cover every sample".into()));
        }
        if self.kind == PartitionKind::Voronoi && self.centers.len() != self.dim * self.cells.len() {
            return Err(Error::Format("center count does not match cell count".into()));
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{PARTITION_MAGIC} {PARTITION_VERSION}")?;
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let body = read_versioned(r, PARTITION_MAGIC, PARTITION_VERSION)?;
        Ok(serde_json::from_str(&body)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }
}

/// Checks a `MAGIC VERSION` first line and returns the rest of the stream.
pub(crate) fn read_versioned(mut r: impl BufRead, magic: &str, version: u32) -> Result<String> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(magic) {
        return Err(Error::Format(format!("missing {magic} header")));
    }
    let v: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format("missing version".into()))?;
    if v != version {
        return Err(Error::Format(format!("unsupported {magic} version {v}, expected {version}")));
    }
    let mut body = String::new();
    r.read_to_string(&mut body)?;
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn line(xs: &[f64]) -> Dataset<f64> {
        Dataset::from_parts(1, xs.to_vec(), vec![Label::Pos; xs.len()]).unwrap()
    }

    fn uniform(n: usize, d: usize, seed: u64) -> Dataset<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f = (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect();
        let l = (0..n)
            .map(|_| if rng.random_bool(0.5) { Label::Pos } else { Label::Neg })
            .collect();
        Dataset::from_parts(d, f, l).unwrap()
    }

    #[test]
    fn traversal_on_a_line() {
        let d = line(&[0.0, 1.0, 9.0, 10.0]);
        assert_eq!(farthest_first_from(&d, 0, 3).unwrap(), vec![0, 3, 1]);
        let single = farthest_first(&d, 1, 42).unwrap();
        let start = seed::rng(42, Stream::Partition, &[]).random_range(0..4);
        assert_eq!(single, vec![start]);
        assert!(matches!(farthest_first(&d, 5, 0), Err(Error::Size(_))));
    }

    #[test]
    fn duplicates_lose_while_distinct_points_remain() {
        let d = line(&[0.0, 0.0, 0.0, 5.0, 5.0]);
        let c = farthest_first_from(&d, 0, 2).unwrap();
        assert_eq!(c, vec![0, 3]);
        let c = farthest_first_from(&d, 0, 5).unwrap();
        assert_eq!(c, vec![0, 3, 1, 2, 4]);
    }

    #[test]
    fn radius_on_a_line() {
        let d = line(&[0.0, 1.0, 9.0, 10.0]);
        for seed in 0..8 {
            let p = partition_voronoi_by_radius(&d, 1.5, seed).unwrap();
            let mut cells = p.cells.clone();
            cells.sort();
            assert_eq!(cells, vec![vec![0, 1], vec![2, 3]]);
            let big = partition_voronoi_by_radius(&d, 100.0, seed).unwrap();
            assert_eq!(big.len(), 1);
        }
    }

    #[test]
    fn small_data_is_one_cell() {
        let d = uniform(30, 2, 1);
        let p = partition_voronoi_by_size(&d, 30, 5, DEFAULT_SUBSAMPLE_THRESHOLD).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.cells[0], (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn hundred_points_size_ten() {
        let d = uniform(100, 2, 2);
        let p = partition_voronoi_by_size(&d, 10, 3, DEFAULT_SUBSAMPLE_THRESHOLD).unwrap();
        assert!(p.len() >= 10);
        assert!(p.cells.iter().all(|c| !c.is_empty() && c.len() <= 10));
        p.validate(100).unwrap();
    }

    #[test]
    fn subsampled_path_still_meets_target() {
        let d = uniform(3000, 2, 4);
        let p = partition_voronoi_by_size(&d, 100, 1, 500).unwrap();
        p.validate(3000).unwrap();
        assert!(p.cells.iter().all(|c| c.len() <= 100));
        for (j, cell) in p.cells.iter().enumerate() {
            for &i in cell {
                assert_eq!(p.route(d.x(i)).unwrap(), j);
            }
        }
    }

    #[test]
    fn identical_points_cannot_be_split() {
        let d = line(&[1.0; 12]);
        let p = partition_voronoi_by_size(&d, 4, 0, DEFAULT_SUBSAMPLE_THRESHOLD).unwrap();
        assert_eq!(p.len(), 1);
        p.validate(12).unwrap();
    }

    #[test]
    fn route_ties_and_centers() {
        let p = Partition {
            kind: PartitionKind::Voronoi,
            target: Target::MaxCellSize(10),
            dim: 1,
            centers: vec![0.0, 10.0, -1.0, 20.0, 30.0, 1.0],
            cells: vec![vec![0]; 6],
        };
        assert_eq!(p.route(&[20.0]).unwrap(), 3);
        assert_eq!(p.route(&[0.0]).unwrap(), 0);
        let p2 = Partition {
            centers: vec![5.0, 6.0, -1.0, 20.0, 30.0, 1.0],
            ..p.clone()
        };
        // equidistant between centers 2 (-1) and 5 (1)
        assert_eq!(p2.route(&[0.0]).unwrap(), 2);
        assert!(p2.route(&[f64::NAN]).is_err());
    }

    #[test]
    fn chunks_cannot_route_and_have_expected_sizes() {
        let d = uniform(10, 2, 0);
        let p = partition_random_chunks(&d, 3, 9).unwrap();
        let sizes: Vec<usize> = p.cells.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        assert!(matches!(p.route(d.x(0)), Err(Error::Usage(_))));
        let whole = partition_random_chunks(&d, 50, 9).unwrap();
        assert_eq!(whole.cells, vec![(0..10).collect::<Vec<_>>()]);
        assert!(partition_random_chunks(&d, 1, 9).is_err());
    }

    #[test]
    fn cell_radius_cases() {
        let d = line(&[0.0, 1.0, 9.0]);
        let p = Partition {
            kind: PartitionKind::Voronoi,
            target: Target::MaxRadius(5.0),
            dim: 1,
            centers: vec![0.0, 9.0],
            cells: vec![vec![0, 1], vec![2]],
        };
        assert_eq!(p.cell_radius(0, &d).unwrap(), 1.0);
        assert_eq!(p.cell_radius(1, &d).unwrap(), 0.0);
        let mut empty = p.clone();
        empty.cells[1].clear();
        assert!(empty.cell_radius(1, &d).is_err());
        let s = p.stats(&d).unwrap();
        assert_eq!(s.cells.iter().map(|c| c.size).sum::<usize>(), 3);
        assert_eq!(s.max_radius, 1.0);
        assert!((s.radius_bound - 8.0).abs() < 1e-12);
        assert!(s.radius_bound_holds);
    }

    #[test]
    fn nearest_center_consistency_on_uniform_square() {
        let d = uniform(10_000, 2, 6);
        let p = partition_voronoi_by_size(&d, 500, 7, DEFAULT_SUBSAMPLE_THRESHOLD).unwrap();
        let assign = p.assignment();
        for i in 0..d.len() {
            // exhaustive scan
            let mut best = (0, f64::INFINITY);
            for j in 0..p.len() {
                let dd = squared_distance(p.center(j), d.x(i));
                if dd < best.1 {
                    best = (j, dd);
                }
            }
            assert_eq!(assign[i], best.0);
        }
        assert!(p.cells.iter().all(|c| c.len() <= 500));
    }

    #[test]
    fn file_round_trip_and_header_check() {
        let d = uniform(50, 3, 3);
        let p = partition_voronoi_by_size(&d, 8, 1, DEFAULT_SUBSAMPLE_THRESHOLD).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"VPSVM-PARTITION 1\n"));
        let back = Partition::<f64>::read_from(&buf[..]).unwrap();
        assert_eq!(back, p);
        assert!(Partition::<f64>::read_from(&b"VPSVM-PARTITION 2\n{}"[..]).is_err());
        assert!(Partition::<f64>::read_from(&b"garbage"[..]).is_err());
    }
}
