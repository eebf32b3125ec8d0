//! Point clouds, neighborhood sampling, farthest-point subsampling, and
//! train-time augmentation.
//!
//! Neighborhood queries are brute-force linear scans; at desk scale
//! (M <= 4096) this is faster to verify than any spatial index.

use std::path::Path;

use rand::RngExt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A set of 3-D points with optional per-point feature channels.
#[derive(Debug, Clone)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    features: Option<Tensor>,
    label: Option<usize>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<[f64; 3]>,
        features: Option<Tensor>,
        label: Option<usize>,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Domain("point cloud must be non-empty".into()));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("point cloud contains NaN/Inf".into()));
        }
        if let Some(f) = &features {
            if f.shape().len() != 2 || f.shape()[0] != positions.len() {
                return Err(Error::Dimension(format!(
                    "features shape {:?} does not match {} points",
                    f.shape(),
                    positions.len()
                )));
            }
        }
        Ok(PointCloud {
            positions,
            features,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn features(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }
}

/// A center point, its sampled neighbors, and their relative coordinates.
///
/// `relative[i] = positions[neighbor_indices[i]] - center`, exactly. Rows
/// have norm < r except under the empty-neighborhood fallback, which
/// substitutes the nearest point regardless of radius.
#[derive(Debug, Clone)]
pub struct LocalPointSet {
    pub center: [f64; 3],
    pub neighbor_indices: Vec<usize>,
    pub relative: Vec<[f64; 3]>,
}

impl LocalPointSet {
    pub fn len(&self) -> usize {
        self.neighbor_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_indices.is_empty()
    }

    /// Reorder neighbors by the given permutation (test helper for
    /// permutation-invariance checks).
    pub fn permuted(&self, perm: &[usize]) -> LocalPointSet {
        LocalPointSet {
            center: self.center,
            neighbor_indices: perm.iter().map(|&i| self.neighbor_indices[i]).collect(),
            relative: perm.iter().map(|&i| self.relative[i]).collect(),
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm_sq(v: [f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm_sq(sub(a, b)).sqrt()
}

/// Sample `n` neighbors of `center` from the points strictly inside
/// radius `r`, uniformly without replacement. Shortfalls keep every
/// candidate once and fill the rest with replacement; an empty
/// candidate set falls back to `n` copies of the nearest point.
pub fn radius_neighbors(
    positions: &[[f64; 3]],
    center: [f64; 3],
    r: f64,
    n: usize,
    rng: &mut impl RngExt,
) -> Result<LocalPointSet> {
    if positions.is_empty() {
        return Err(Error::Domain("radius query on an empty cloud".into()));
    }
    if r <= 0.0 || n == 0 {
        return Err(Error::Domain(format!(
            "radius_neighbors requires r > 0 and n >= 1, got r={r}, n={n}"
        )));
    }
    let r_sq = r * r;
    let mut candidates: Vec<usize> = (0..positions.len())
        .filter(|&i| norm_sq(sub(positions[i], center)) < r_sq)
        .collect();

    let indices: Vec<usize> = if candidates.is_empty() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &p) in positions.iter().enumerate() {
            let d = norm_sq(sub(p, center));
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        vec![best; n]
    } else if candidates.len() >= n {
        // Partial Fisher-Yates: the first n slots become a uniform draw
        // without replacement.
        for i in 0..n {
            let j = rng.random_range(i..candidates.len());
            candidates.swap(i, j);
        }
        candidates.truncate(n);
        candidates
    } else {
        let k = candidates.len();
        let mut out = candidates.clone();
        for _ in k..n {
            out.push(candidates[rng.random_range(0..k)]);
        }
        out
    };

    let relative = indices.iter().map(|&i| sub(positions[i], center)).collect();
    Ok(LocalPointSet {
        center,
        neighbor_indices: indices,
        relative,
    })
}

/// Greedy max-min subsampling. The first pick is uniform from `rng`;
/// each following pick maximizes distance to the selected set, ties
/// broken by lowest index.
pub fn farthest_point_sampling(
    positions: &[[f64; 3]],
    m_out: usize,
    rng: &mut impl RngExt,
) -> Result<Vec<usize>> {
    let m = positions.len();
    if m_out == 0 || m_out > m {
        return Err(Error::Domain(format!(
            "farthest_point_sampling requires 1 <= m_out <= {m}, got {m_out}"
        )));
    }
    let mut selected = Vec::with_capacity(m_out);
    let first = rng.random_range(0..m);
    selected.push(first);
    // dist_sq[i] = squared distance from point i to the selected set.
    let mut dist_sq: Vec<f64> = positions
        .iter()
        .map(|&p| norm_sq(sub(p, positions[first])))
        .collect();
    while selected.len() < m_out {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in dist_sq.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        for (i, d) in dist_sq.iter_mut().enumerate() {
            let nd = norm_sq(sub(positions[i], positions[best]));
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

/// Scale all positions by one uniform scalar in `[scale_lo, scale_hi]`,
/// then shift by one uniform vector in `[-shift, shift]^3`. Features and
/// label pass through untouched.
pub fn augment(
    cloud: &PointCloud,
    scale_lo: f64,
    scale_hi: f64,
    shift: f64,
    rng: &mut impl RngExt,
) -> Result<PointCloud> {
    if !(0.0 < scale_lo && scale_lo <= scale_hi) {
        return Err(Error::Domain(format!(
            "augment requires 0 < lo <= hi, got [{scale_lo}, {scale_hi}]"
        )));
    }
    let s = if scale_lo == scale_hi {
        scale_lo
    } else {
        rng.random_range(scale_lo..scale_hi)
    };
    let t: [f64; 3] = if shift == 0.0 {
        [0.0; 3]
    } else {
        [
            rng.random_range(-shift..shift),
            rng.random_range(-shift..shift),
            rng.random_range(-shift..shift),
        ]
    };
    let positions = cloud
        .positions
        .iter()
        .map(|p| [p[0] * s + t[0], p[1] * s + t[1], p[2] * s + t[2]])
        .collect();
    PointCloud::new(positions, cloud.features.clone(), cloud.label)
}

// ---------------------------------------------------------------------------
// Text format: header `M C label`, then one `x y z [f1 .. fC]` line per point.
// Label -1 means unlabeled. Floats print in Rust's shortest round-trip form.
// ---------------------------------------------------------------------------

pub fn format_cloud(cloud: &PointCloud) -> String {
    let m = cloud.len();
    let c = cloud.features().map_or(0, |f| f.shape()[1]);
    let label = cloud.label().map_or(-1, |l| l as i64);
    let mut out = String::new();
    out.push_str(&format!("{m} {c} {label}\n"));
    for (i, p) in cloud.positions.iter().enumerate() {
        out.push_str(&format!("{} {} {}", p[0], p[1], p[2]));
        if let Some(f) = cloud.features() {
            for j in 0..c {
                out.push_str(&format!(" {}", f.data()[i * c + j]));
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_cloud(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Domain("empty cloud file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::Domain(format!(
            "cloud header must be `M C label`, got {header:?}"
        )));
    }
    let m: usize = fields[0]
        .parse()
        .map_err(|_| Error::Domain(format!("bad point count {:?}", fields[0])))?;
    let c: usize = fields[1]
        .parse()
        .map_err(|_| Error::Domain(format!("bad channel count {:?}", fields[1])))?;
    let label: i64 = fields[2]
        .parse()
        .map_err(|_| Error::Domain(format!("bad label {:?}", fields[2])))?;

    let mut positions = Vec::with_capacity(m);
    let mut feats = Vec::with_capacity(m * c);
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Domain(format!("bad number {t:?} on line {}", lineno + 2)))
            })
            .collect::<Result<_>>()?;
        if vals.len() != 3 + c {
            return Err(Error::Domain(format!(
                "expected {} fields on line {}, got {}",
                3 + c,
                lineno + 2,
                vals.len()
            )));
        }
        positions.push([vals[0], vals[1], vals[2]]);
        feats.extend_from_slice(&vals[3..]);
    }
    if positions.len() != m {
        return Err(Error::Domain(format!(
            "header promised {m} points, file has {}",
            positions.len()
        )));
    }
    let features = if c > 0 {
        Some(Tensor::new(vec![m, c], feats)?)
    } else {
        None
    };
    PointCloud::new(positions, features, (label >= 0).then(|| label as usize))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, format_cloud(cloud))?;
    Ok(())
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    parse_cloud(&text).map_err(|e| match e {
        Error::Domain(msg) => Error::Domain(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn ball_cloud(m: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut r = rng(seed);
        (0..m)
            .map(|_| loop {
                let p = [
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                ];
                if norm_sq(p) <= 1.0 {
                    return p;
                }
            })
            .collect()
    }

    #[test]
    fn radius_neighbors_covers_small_candidate_sets() {
        let positions = vec![[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [0.0, 0.05, 0.0]];
        let mut r = rng(1);
        let set = radius_neighbors(&positions, [0.0, 0.0, 0.0], 0.1, 3, &mut r).unwrap();
        assert_eq!(set.len(), 3);
        let mut seen = set.neighbor_indices.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, vec![0, 1, 2]);
        for rel in &set.relative {
            assert!(norm_sq(*rel).sqrt() < 0.1);
        }
    }

    #[test]
    fn radius_neighbors_falls_back_to_nearest_point() {
        let positions = vec![[5.0, 0.0, 0.0], [2.0, 0.0, 0.0], [9.0, 0.0, 0.0]];
        let mut r = rng(2);
        let set = radius_neighbors(&positions, [0.0, 0.0, 0.0], 0.5, 4, &mut r).unwrap();
        assert_eq!(set.neighbor_indices, vec![1, 1, 1, 1]);
    }

    #[test]
    fn radius_neighbors_agrees_with_linear_scan_oracle() {
        let positions = ball_cloud(1000, 3);
        let mut r = rng(4);
        let center = positions[17];
        let set = radius_neighbors(&positions, center, 0.3, 32, &mut r).unwrap();
        assert_eq!(set.len(), 32);
        // Oracle: brute-force candidate set.
        let oracle: Vec<usize> = (0..positions.len())
            .filter(|&i| dist(positions[i], center) < 0.3)
            .collect();
        for (&idx, rel) in set.neighbor_indices.iter().zip(&set.relative) {
            assert!(oracle.contains(&idx));
            assert!(norm_sq(*rel).sqrt() < 0.3);
            let want = sub(positions[idx], center);
            assert_eq!(*rel, want);
        }
    }

    #[test]
    fn radius_neighbors_is_deterministic_under_seed() {
        let positions = ball_cloud(200, 5);
        let a = radius_neighbors(&positions, [0.1; 3], 0.4, 16, &mut rng(9)).unwrap();
        let b = radius_neighbors(&positions, [0.1; 3], 0.4, 16, &mut rng(9)).unwrap();
        assert_eq!(a.neighbor_indices, b.neighbor_indices);
    }

    #[test]
    fn radius_neighbors_rejects_empty_cloud() {
        let mut r = rng(0);
        assert!(matches!(
            radius_neighbors(&[], [0.0; 3], 1.0, 4, &mut r),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn fps_full_output_is_a_permutation() {
        let positions = ball_cloud(64, 6);
        let idx = farthest_point_sampling(&positions, 64, &mut rng(7)).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn fps_picks_the_farthest_collinear_point() {
        let positions = vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [1.0, 0.0, 0.0]];
        // Find a seed whose first uniform draw lands on index 0.
        let seed = (0..100)
            .find(|&s| {
                let mut r = rng(s);
                r.random_range(0..3usize) == 0
            })
            .unwrap();
        let idx = farthest_point_sampling(&positions, 2, &mut rng(seed)).unwrap();
        assert_eq!(idx, vec![0, 2]);
    }

    #[test]
    fn fps_spreads_better_than_random_picks() {
        // Statistical: min pairwise distance of FPS picks beats uniform
        // random picks, per trial, over 20 trials.
        let positions = ball_cloud(256, 8);
        let min_pairwise = |idx: &[usize]| {
            let mut best = f64::INFINITY;
            for i in 0..idx.len() {
                for j in 0..i {
                    best = best.min(dist(positions[idx[i]], positions[idx[j]]));
                }
            }
            best
        };
        let mut fps_wins = 0;
        for trial in 0..20u64 {
            let fps_idx = farthest_point_sampling(&positions, 64, &mut rng(100 + trial)).unwrap();
            let mut r = rng(200 + trial);
            let mut pool: Vec<usize> = (0..256).collect();
            for i in 0..64 {
                let j = r.random_range(i..pool.len());
                pool.swap(i, j);
            }
            let rand_idx = &pool[..64];
            if min_pairwise(&fps_idx) >= min_pairwise(rand_idx) {
                fps_wins += 1;
            }
        }
        assert_eq!(fps_wins, 20, "FPS min-distance beaten by random picks");
    }

    #[test]
    fn fps_rejects_oversized_request() {
        let positions = ball_cloud(8, 10);
        assert!(matches!(
            farthest_point_sampling(&positions, 9, &mut rng(0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn augment_identity_and_hand_case() {
        let cloud = PointCloud::new(vec![[1.0, 1.0, 1.0]], None, None).unwrap();
        let same = augment(&cloud, 1.0, 1.0, 0.0, &mut rng(1)).unwrap();
        assert_eq!(same.positions(), cloud.positions());

        // Forced scale 2 and shift (1,0,0) applied by hand.
        let p = cloud.positions()[0];
        let want = [p[0] * 2.0 + 1.0, p[1] * 2.0, p[2] * 2.0];
        assert_eq!(want, [3.0, 2.0, 2.0]);
    }

    #[test]
    fn augment_preserves_pairwise_distance_ratios() {
        let positions = ball_cloud(32, 11);
        let cloud = PointCloud::new(positions, None, None).unwrap();
        let aug = augment(&cloud, 0.5, 2.0, 0.3, &mut rng(12)).unwrap();
        let d0 = dist(cloud.positions()[0], cloud.positions()[1]);
        let s = dist(aug.positions()[0], aug.positions()[1]) / d0;
        for i in 0..32 {
            for j in 0..i {
                let a = dist(cloud.positions()[i], cloud.positions()[j]);
                let b = dist(aug.positions()[i], aug.positions()[j]);
                assert!((b - s * a).abs() <= 1e-12 * (1.0 + a));
            }
        }
    }

    #[test]
    fn cloud_text_format_roundtrips() {
        let positions = ball_cloud(5, 13);
        let feats = Tensor::new(vec![5, 2], (0..10).map(|i| 0.31 * i as f64).collect()).unwrap();
        let cloud = PointCloud::new(positions, Some(feats), Some(3)).unwrap();
        let text = format_cloud(&cloud);
        let back = parse_cloud(&text).unwrap();
        assert_eq!(back.positions(), cloud.positions());
        assert_eq!(back.features().unwrap(), cloud.features().unwrap());
        assert_eq!(back.label(), Some(3));
    }

    #[test]
    fn cloud_parse_rejects_malformed_input() {
        assert!(parse_cloud("").is_err());
        assert!(parse_cloud("2 0 -1\n0 0 0\n").is_err()); // missing point
        assert!(parse_cloud("1 1 0\n0 0 0\n").is_err()); // missing feature
        assert!(parse_cloud("1 0 0\n0 nanx 0\n").is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn relative_rows_are_exact_differences(seed in 0u64..1000) {
                let positions = ball_cloud(64, seed);
                let mut r = rng(seed ^ 0xabcd);
                let center = positions[(seed % 64) as usize];
                let set = radius_neighbors(&positions, center, 0.5, 8, &mut r).unwrap();
                for (&i, rel) in set.neighbor_indices.iter().zip(&set.relative) {
                    prop_assert_eq!(*rel, sub(positions[i], center));
                }
            }

            #[test]
            fn fps_is_deterministic_and_duplicate_free(seed in 0u64..1000) {
                let positions = ball_cloud(64, seed);
                let a = farthest_point_sampling(&positions, 16, &mut rng(seed)).unwrap();
                let b = farthest_point_sampling(&positions, 16, &mut rng(seed)).unwrap();
                prop_assert_eq!(&a, &b);
                let mut s = a.clone();
                s.sort_unstable();
                s.dedup();
                prop_assert_eq!(s.len(), 16);
            }
        }
    }
}
