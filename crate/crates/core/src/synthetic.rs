//! Seeded generators: random sparse triplet streams for stress tests, and a
//! retrieval task whose labels come from a planted low-rank similarity.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Example, LabeledCorpus};
use crate::diagonal::Triplet;
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseVector};

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// A vector of dimension `dim` whose entries are kept with probability
/// `density` and drawn from N(0, scale²). At least one entry is nonzero.
pub fn random_sparse(rng: &mut ChaCha8Rng, dim: usize, density: f64, scale: f64) -> SparseVector {
    let mut entries = Vec::new();
    for j in 0..dim {
        if rng.random_bool(density.clamp(0.0, 1.0)) {
            entries.push((j, scale * gaussian(rng)));
        }
    }
    if entries.is_empty() {
        entries.push((rng.random_range(0..dim), scale * gaussian(rng)));
    }
    SparseVector::new(dim, entries).expect("indices are increasing and in range")
}

/// `len` triplets with random sparse query (dim `m`) and objects (dim `n`).
pub fn random_triplets(m: usize, n: usize, len: usize, density: f64, seed: u64) -> Vec<Triplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let q = random_sparse(&mut rng, m, density, 1.0);
            let pp = random_sparse(&mut rng, n, density, 1.0);
            let pm = random_sparse(&mut rng, n, density, 1.0);
            Triplet::new(q, pp, pm)
        })
        .collect()
}

/// Dense `rows × cols` matrix with N(0, scale²) entries.
pub fn random_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| scale * gaussian(&mut rng)).collect();
    DenseMatrix::from_row_major(rows, cols, data).expect("length matches")
}

/// Knobs of the planted-similarity retrieval task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub dim: usize,
    /// Rank of the planted similarity.
    pub rank: usize,
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    /// Spread of class prototypes inside the informative subspace.
    pub prototype_scale: f64,
    /// Within-class spread inside the informative subspace.
    pub within_scale: f64,
    /// Spread in the orthogonal complement, invisible to the planted similarity.
    pub nuisance_scale: f64,
    /// Scale every example to unit ℓ2 norm, as tf-idf weighting does.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 20,
            rank: 4,
            classes: 5,
            train: 400,
            test: 200,
            prototype_scale: 1.0,
            within_scale: 0.3,
            nuisance_scale: 1.5,
            normalize: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    /// Planted similarity `U Uᵀ` with orthonormal `U`.
    pub v_star: DenseMatrix,
    pub train: LabeledCorpus,
    pub test: LabeledCorpus,
}

impl SyntheticTask {
    /// Draws examples around class prototypes in a random `rank`-dimensional
    /// subspace plus isotropic noise in its complement. Each example is
    /// labeled by its nearest prototype under the planted similarity
    /// (before any normalization).
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        if cfg.rank == 0 || cfg.rank > cfg.dim || cfg.classes < 2 {
            return Err(Error::InvalidArgument("synthetic task needs 0 < rank ≤ dim and at least two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let raw = DMatrix::from_fn(cfg.dim, cfg.dim, |_, _| gaussian(&mut rng));
        let basis = raw.qr().q();
        let u = basis.columns(0, cfg.rank).into_owned();
        let complement = basis.columns(cfg.rank, cfg.dim - cfg.rank).into_owned();
        let v_star = DenseMatrix::from_nalgebra(&(&u * u.transpose()));

        let prototypes: Vec<Vec<f64>> = (0..cfg.classes)
            .map(|_| (0..cfg.rank).map(|_| cfg.prototype_scale * gaussian(&mut rng)).collect())
            .collect();

        let mut draw = |count: usize, prefix: &str| -> Result<LabeledCorpus> {
            let mut examples = Vec::with_capacity(count);
            for i in 0..count {
                let c = rng.random_range(0..cfg.classes);
                let z: Vec<f64> = prototypes[c].iter().map(|mu| mu + cfg.within_scale * gaussian(&mut rng)).collect();
                let g: Vec<f64> = (0..cfg.dim - cfg.rank).map(|_| cfg.nuisance_scale * gaussian(&mut rng)).collect();
                let mut x = &u * nalgebra::DVector::from_vec(z.clone()) + &complement * nalgebra::DVector::from_vec(g);
                if cfg.normalize {
                    x /= x.norm();
                }
                // Uᵀx = z, so the V*-distance to a prototype is ‖z − μ‖².
                let label = (0..cfg.classes)
                    .min_by(|&a, &b| sq_dist(&z, &prototypes[a]).total_cmp(&sq_dist(&z, &prototypes[b])))
                    .expect("at least two classes");
                examples.push(Example {
                    id: format!("{prefix}{i}"),
                    label: format!("c{label}"),
                    features: SparseVector::from_dense(x.as_slice())?,
                });
            }
            LabeledCorpus::new(cfg.dim, examples)
        };
        let train = draw(cfg.train, "train")?;
        let test = draw(cfg.test, "test")?;
        Ok(SyntheticTask { v_star, train, test })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
