//! Synthetic source/target pairs with label information split between the
//! pooled mean and the patch-level structure.
//!
//! A grid has `K` patches, `J` of which are object patches carrying the
//! class; the others are background patches shared by all classes. Every
//! class `c` has a mean `m_c` and a direction `u_c`, and an object patch is
//!
//! ```text
//! x_k = (1 - l) s m_c + l s xi_k u_c + sigma_s n_k,    xi_k = +-1,  n_k ~ N(0, I)
//! ```
//!
//! with `l` the local signal strength and `s` the scale. At `l = 1` every
//! class has a zero expected patch mean and the label lives only in how the
//! patches spread along `u_c`. A background patch is one of two shared
//! prototypes `+-b` plus the same noise.
//!
//! A target patch adds the class translation `global_shift[c]` (to every
//! patch or only to the background, see [`ShiftScope`]) and extra noise, then
//! the patch order is permuted.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Domain, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::PatchGrid;

/// Which target patches receive `global_shift`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftScope {
    #[default]
    All,
    Background,
}

/// Shift between the source and target generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    /// Raw patch dimension.
    pub patch_dim: usize,
    /// Per-class translation of target patches (`class_count` rows), or
    /// empty for no translation.
    #[serde(default)]
    pub global_shift: Vec<Vec<f64>>,
    /// Applied to the patch order of every target grid; its length is `K`.
    pub patch_permutation: Vec<usize>,
    /// Extra per-patch noise on the target side.
    #[serde(default)]
    pub patch_noise: f64,
    /// Share of the class signal carried by patch structure, in `[0, 1]`.
    pub local_signal_strength: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_source_noise")]
    pub source_noise: f64,
    /// Seed of the class means and directions (kept apart from the sample seed
    /// so that shifts can be expressed relative to the class structure).
    #[serde(default)]
    pub structure_seed: u64,
    /// Number of object patches `J`; `None` makes every patch an object patch.
    #[serde(default)]
    pub object_patches: Option<usize>,
    #[serde(default)]
    pub shift_scope: ShiftScope,
}

fn default_scale() -> f64 {
    2.0
}

fn default_source_noise() -> f64 {
    0.3
}

impl ShiftSpec {
    /// No shift at all: target and source share one distribution.
    pub fn identity(patch_count: usize, patch_dim: usize, local_signal_strength: f64) -> Self {
        Self {
            patch_dim,
            global_shift: Vec::new(),
            patch_permutation: (0..patch_count).collect(),
            patch_noise: 0.0,
            local_signal_strength,
            scale: default_scale(),
            source_noise: default_source_noise(),
            structure_seed: 0,
            object_patches: None,
            shift_scope: ShiftScope::All,
        }
    }

    /// `object_patches` object patches per grid with class-dependent
    /// background translations chosen so that the expected pooled mean of
    /// target class `c` moves a fraction `strength` of the way to that of
    /// source class `c + 1` (cyclically). The object patches themselves are
    /// left in place. Patch order is reversed and `noise` is added.
    pub fn background_swap(
        patch_count: usize,
        patch_dim: usize,
        class_count: usize,
        object_patches: usize,
        local_signal_strength: f64,
        strength: f64,
        noise: f64,
    ) -> Result<Self> {
        if object_patches == 0 || object_patches >= patch_count {
            return Err(Error::Data(format!(
                "background swap needs 0 < object_patches < {patch_count}, got {object_patches}"
            )));
        }
        let mut spec = Self::identity(patch_count, patch_dim, local_signal_strength);
        spec.patch_permutation.reverse();
        spec.patch_noise = noise;
        spec.object_patches = Some(object_patches);
        spec.shift_scope = ShiftScope::Background;
        let proto = ClassPrototypes::new(&spec, class_count)?;
        let ratio = object_patches as f64 / (patch_count - object_patches) as f64;
        spec.global_shift = (0..class_count)
            .map(|c| {
                let next = (c + 1) % class_count;
                (0..patch_dim)
                    .map(|d| strength * ratio * (proto.centers[[next, d]] - proto.centers[[c, d]]))
                    .collect()
            })
            .collect();
        Ok(spec)
    }

    pub fn object_patch_count(&self) -> usize {
        self.object_patches.unwrap_or(self.patch_count())
    }

    /// Moves each target class `c` a fraction `strength` of the way from its
    /// own mean towards the mean of class `c + 1` (cyclically), reverses the
    /// patch order and adds `noise`.
    pub fn mean_swap(
        patch_count: usize,
        patch_dim: usize,
        class_count: usize,
        local_signal_strength: f64,
        strength: f64,
        noise: f64,
    ) -> Result<Self> {
        let mut spec = Self::identity(patch_count, patch_dim, local_signal_strength);
        spec.patch_permutation.reverse();
        spec.patch_noise = noise;
        let proto = ClassPrototypes::new(&spec, class_count)?;
        spec.global_shift = (0..class_count)
            .map(|c| {
                let next = (c + 1) % class_count;
                (0..patch_dim)
                    .map(|d| strength * (proto.centers[[next, d]] - proto.centers[[c, d]]))
                    .collect()
            })
            .collect();
        Ok(spec)
    }

    pub fn patch_count(&self) -> usize {
        self.patch_permutation.len()
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        if class_count < 2 {
            return Err(Error::Data(format!("need at least 2 classes, got {class_count}")));
        }
        if self.patch_dim == 0 || self.patch_permutation.is_empty() {
            return Err(Error::Data("patch_dim and patch count must be positive".into()));
        }
        let k = self.patch_permutation.len();
        let mut seen = vec![false; k];
        for &p in &self.patch_permutation {
            if p >= k || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Data(format!(
                    "patch_permutation {:?} is not a bijection on 0..{k}",
                    self.patch_permutation
                )));
            }
        }
        if self.object_patches.is_some_and(|j| j == 0 || j > k) {
            return Err(Error::Data(format!("object_patches must lie in 1..={k}")));
        }
        if !(self.patch_noise >= 0.0) || !(self.source_noise >= 0.0) || !(self.scale > 0.0) {
            return Err(Error::Data("noise scales must be >= 0 and scale > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.local_signal_strength) {
            return Err(Error::Data(format!(
                "local_signal_strength must lie in [0, 1], got {}",
                self.local_signal_strength
            )));
        }
        if !self.global_shift.is_empty()
            && (self.global_shift.len() != class_count || self.global_shift.iter().any(|r| r.len() != self.patch_dim))
        {
            return Err(Error::Data(format!(
                "global_shift must be {class_count} rows of length {}",
                self.patch_dim
            )));
        }
        if self.global_shift.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("global_shift must be finite".into()));
        }
        Ok(())
    }
}

/// Class centers, local directions and the background prototype, drawn
/// from the structure seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    /// Scaled class means, `class_count x patch_dim`.
    pub centers: Array2<f64>,
    /// Unit spread directions, `class_count x patch_dim`.
    pub directions: Array2<f64>,
    /// Background patches sit at `+-background`.
    pub background: Array1<f64>,
}

fn unit_rows<R: Rng>(rng: &mut R, rows: usize, dim: usize) -> Array2<f64> {
    let mut a = Array2::from_shape_simple_fn((rows, dim), || rng.sample::<f64, _>(StandardNormal));
    for mut r in a.rows_mut() {
        let n = r.dot(&r).sqrt().max(1e-12);
        r /= n;
    }
    a
}

impl ClassPrototypes {
    pub fn new(spec: &ShiftSpec, class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Data(format!("need at least 2 classes, got {class_count}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.structure_seed);
        let l = spec.local_signal_strength;
        let centers = unit_rows(&mut rng, class_count, spec.patch_dim) * ((1.0 - l) * spec.scale);
        let directions = unit_rows(&mut rng, class_count, spec.patch_dim);
        let background = unit_rows(&mut rng, 1, spec.patch_dim).row(0).to_owned() * spec.scale;
        Ok(Self {
            centers,
            directions,
            background,
        })
    }
}

fn sample_grid<R: Rng>(
    rng: &mut R,
    spec: &ShiftSpec,
    proto: &ClassPrototypes,
    class: usize,
    target: bool,
) -> Result<PatchGrid> {
    let (k, d) = (spec.patch_count(), spec.patch_dim);
    let j = spec.object_patch_count();
    let amp = spec.local_signal_strength * spec.scale;
    let shift = (target && !spec.global_shift.is_empty()).then(|| Array1::from(spec.global_shift[class].clone()));
    // Object patches occupy a random subset of the positions.
    let objects = rand::seq::index::sample(rng, k, j).into_vec();
    let mut is_object = vec![false; k];
    for o in objects {
        is_object[o] = true;
    }
    let mut patches = Array2::zeros((k, d));
    for (row_idx, mut row) in patches.rows_mut().into_iter().enumerate() {
        let xi = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let object = is_object[row_idx];
        for c in 0..d {
            let base = if object {
                proto.centers[[class, c]] + amp * xi * proto.directions[[class, c]]
            } else {
                xi * proto.background[c]
            };
            let mut v = base + spec.source_noise * rng.sample::<f64, _>(StandardNormal);
            if target {
                v += spec.patch_noise * rng.sample::<f64, _>(StandardNormal);
            }
            row[c] = v;
        }
        if let Some(s) = &shift {
            if object && spec.shift_scope == ShiftScope::Background {
                continue;
            }
            row += s;
        }
    }
    let grid = PatchGrid::new(patches)?;
    if target {
        grid.permuted(&spec.patch_permutation)
    } else {
        Ok(grid)
    }
}

fn balanced_labels<R: Rng>(rng: &mut R, n: usize, class_count: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % class_count).collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    labels
}

/// Draws a labeled source set and a target set whose labels are meant for
/// evaluation only (use [`LabeledDataset::unlabeled`] for training).
///
/// Labels are balanced: class `c` gets `n / class_count` samples, rounded.
pub fn gen_synthetic_pair(
    spec: &ShiftSpec,
    class_count: usize,
    n_source: usize,
    n_target: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate(class_count)?;
    if n_source == 0 || n_target == 0 {
        return Err(Error::Data("dataset sizes must be positive".into()));
    }
    let proto = ClassPrototypes::new(spec, class_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, target: bool| -> Result<LabeledDataset> {
        let labels = balanced_labels(&mut rng, n, class_count);
        let samples = labels
            .iter()
            .map(|&c| sample_grid(&mut rng, spec, &proto, c, target))
            .collect::<Result<Vec<_>>>()?;
        let domain = if target { Domain::Target } else { Domain::Source };
        LabeledDataset::new(samples, labels, domain, class_count)
    };
    let source = draw(n_source, false)?;
    let target = draw(n_target, true)?;
    Ok((source, target))
}
