//! Procedural labeled point-cloud shapes: sphere, cube, cylinder, torus.
//!
//! Points are sampled with exactly uniform surface measure, jittered with
//! isotropic Gaussian noise, and rescaled to unit bounding-sphere radius.
//! Local curvature is what separates the classes, which is the signal a
//! cubic-kernel layer is supposed to pick up.

use std::f64::consts::TAU;
use std::path::Path;

use rand::RngExt;

use crate::error::{Error, Result};
use crate::pointcloud::{format_cloud, PointCloud};
use crate::seeds;
use crate::tensor::Tensor;

pub const CYLINDER_RADIUS: f64 = 0.5;
pub const CYLINDER_HALF_HEIGHT: f64 = 1.0;
pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Torus,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Torus,
    ];

    pub fn id(self) -> usize {
        match self {
            ShapeClass::Sphere => 0,
            ShapeClass::Cube => 1,
            ShapeClass::Cylinder => 2,
            ShapeClass::Torus => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Torus => "torus",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShapeSpec {
    pub class: ShapeClass,
    pub points: usize,
    pub noise: f64,
    pub seed: u64,
    /// Emit analytic surface normals as 3 feature channels.
    pub normals: bool,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points < 32 {
            return Err(Error::Domain(format!(
                "shape needs at least 32 points, got {}",
                self.points
            )));
        }
        if self.noise < 0.0 {
            return Err(Error::Domain(format!("negative noise {}", self.noise)));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut impl RngExt) -> f64 {
    // Box-Muller; the lower bound keeps ln() finite.
    let u1: f64 = rng.random_range(1e-300..1.0);
    let u2: f64 = rng.random_range(0.0..TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// One uniformly distributed surface point of the unit-scale primitive,
/// with its outward normal.
pub fn sample_surface(class: ShapeClass, rng: &mut impl RngExt) -> ([f64; 3], [f64; 3]) {
    match class {
        ShapeClass::Sphere => {
            // Normalized Gaussian triple is exactly uniform on the sphere.
            loop {
                let p = [gaussian(rng), gaussian(rng), gaussian(rng)];
                let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if n > 1e-12 {
                    let unit = [p[0] / n, p[1] / n, p[2] / n];
                    return (unit, unit);
                }
            }
        }
        ShapeClass::Cube => {
            // Six faces of equal area; half-extent 1.
            let face = rng.random_range(0..6u32);
            let a = rng.random_range(-1.0..1.0);
            let b = rng.random_range(-1.0..1.0);
            let (axis, sign) = ((face / 2) as usize, if face % 2 == 0 { 1.0 } else { -1.0 });
            let mut p = [0.0; 3];
            p[axis] = sign;
            p[(axis + 1) % 3] = a;
            p[(axis + 2) % 3] = b;
            let mut n = [0.0; 3];
            n[axis] = sign;
            (p, n)
        }
        ShapeClass::Cylinder => {
            let (r, h) = (CYLINDER_RADIUS, CYLINDER_HALF_HEIGHT);
            let lateral_area = TAU * r * 2.0 * h;
            let cap_area = TAU * r * r; // both caps together
            let pick = rng.random_range(0.0..lateral_area + cap_area);
            let theta = rng.random_range(0.0..TAU);
            if pick < lateral_area {
                let z = rng.random_range(-h..h);
                (
                    [r * theta.cos(), r * theta.sin(), z],
                    [theta.cos(), theta.sin(), 0.0],
                )
            } else {
                let sign = if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { -1.0 };
                let rho = r * rng.random_range(0.0f64..1.0).sqrt();
                (
                    [rho * theta.cos(), rho * theta.sin(), sign * h],
                    [0.0, 0.0, sign],
                )
            }
        }
        ShapeClass::Torus => {
            let (big_r, r) = (TORUS_MAJOR, TORUS_MINOR);
            let phi = rng.random_range(0.0..TAU);
            // Rejection on the minor angle gives uniform surface measure:
            // area density is proportional to R + r*cos(theta).
            let theta = loop {
                let t = rng.random_range(0.0..TAU);
                let accept = (big_r + r * t.cos()) / (big_r + r);
                if rng.random_range(0.0..1.0) < accept {
                    break t;
                }
            };
            let ring = big_r + r * theta.cos();
            (
                [ring * phi.cos(), ring * phi.sin(), r * theta.sin()],
                [
                    theta.cos() * phi.cos(),
                    theta.cos() * phi.sin(),
                    theta.sin(),
                ],
            )
        }
    }
}

/// Generate one labeled cloud: uniform surface samples, Gaussian noise,
/// then rescaled so the farthest point sits exactly on the unit sphere.
/// The primitives are constructed centered on the origin, so no further
/// recentering is applied.
pub fn generate_cloud(spec: &ShapeSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let mut positions = Vec::with_capacity(spec.points);
    let mut normals = Vec::with_capacity(spec.points * 3);
    for _ in 0..spec.points {
        let (mut p, n) = sample_surface(spec.class, &mut rng);
        if spec.noise > 0.0 {
            for c in &mut p {
                *c += spec.noise * gaussian(&mut rng);
            }
        }
        positions.push(p);
        normals.extend_from_slice(&n);
    }
    let max_norm = positions
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0f64, f64::max);
    for p in &mut positions {
        for c in p.iter_mut() {
            *c /= max_norm;
        }
    }
    let features = spec
        .normals
        .then(|| Tensor::new(vec![spec.points, 3], normals))
        .transpose()?;
    PointCloud::new(positions, features, Some(spec.class.id()))
}

/// A labeled train/test split of generated clouds.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
    pub classes: usize,
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub noise: f64,
    pub seed: u64,
    pub normals: bool,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > ShapeClass::ALL.len() {
            return Err(Error::Domain(format!(
                "classes must be 2..=4, got {}",
                self.classes
            )));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Domain("per-class counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Deterministically generate a balanced dataset. Train and test splits
/// use disjoint derived seed streams.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let make = |split_tag: u64, count: usize| -> Result<Vec<PointCloud>> {
        let mut clouds = Vec::with_capacity(count * spec.classes);
        for (ci, &class) in ShapeClass::ALL[..spec.classes].iter().enumerate() {
            for k in 0..count {
                let cloud_seed =
                    seeds::derive2(spec.seed, split_tag, (ci * count + k) as u64);
                clouds.push(generate_cloud(&ShapeSpec {
                    class,
                    points: spec.points,
                    noise: spec.noise,
                    seed: cloud_seed,
                    normals: spec.normals,
                })?);
            }
        }
        Ok(clouds)
    };
    Ok(Dataset {
        train: make(1, spec.train_per_class)?,
        test: make(2, spec.test_per_class)?,
        classes: spec.classes,
    })
}

/// Write a dataset as cloud text files plus a manifest listing split
/// membership: one `split filename class_id class_name` line per cloud.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let mut manifest = String::new();
    for (split, clouds) in [("train", &dataset.train), ("test", &dataset.test)] {
        let sub = dir.join(split);
        std::fs::create_dir_all(&sub)?;
        for (i, cloud) in clouds.iter().enumerate() {
            let name = format!("cloud_{i:04}.txt");
            std::fs::write(sub.join(&name), format_cloud(cloud))?;
            let class = cloud.label().expect("generated clouds are labeled");
            let class_name = ShapeClass::ALL[class].name();
            manifest.push_str(&format!("{split} {split}/{name} {class} {class_name}\n"));
        }
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Load a dataset previously written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut max_class = 0;
    for line in manifest.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Domain(format!("bad manifest line {line:?}")));
        }
        let cloud = crate::pointcloud::read_cloud(&dir.join(fields[1]))?;
        let class: usize = fields[2]
            .parse()
            .map_err(|_| Error::Domain(format!("bad class id {:?}", fields[2])))?;
        max_class = max_class.max(class);
        let cloud = cloud.with_label(class);
        match fields[0] {
            "train" => train.push(cloud),
            "test" => test.push(cloud),
            other => return Err(Error::Domain(format!("unknown split {other:?}"))),
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Domain("manifest lists an empty split".into()));
    }
    Ok(Dataset {
        train,
        test,
        classes: max_class + 1,
    })
}

use rand::SeedableRng;
