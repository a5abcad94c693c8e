//! Benchmark objective functions, noisy wrappers, and the high-dimensional
//! low-rank problem constructor.
//!
//! Function formulas follow the Surjanovic–Bingham / Ernesto catalog
//! conventions; the constant tables (Hartmann `A`, `P`; Shekel `beta`, `C`)
//! are inlined next to each formula. Out-of-domain inputs are clipped to the
//! box rather than rejected, which matches how decoded latent points are fed
//! back to the objective.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::domain::{BoxDomain, DomainError};

#[derive(Debug, Error)]
pub enum TestbedError {
    #[error("dimension mismatch: objective expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{name} requires dimension {required}, got {got}")]
    FixedDimension {
        name: &'static str,
        required: usize,
        got: usize,
    },
    #[error("{name} requires dimension >= {min}, got {got}")]
    MinDimension {
        name: &'static str,
        min: usize,
        got: usize,
    },
    #[error("unknown objective function `{0}`")]
    UnknownFunction(String),
    #[error("ambient dimension {ambient} is below the effective dimension {effective}")]
    AmbientTooSmall { ambient: usize, effective: usize },
    #[error("low-rank base domain must be [-1,1]^d_e; coordinate {0} is not")]
    BaseNotUnitCube(usize),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Catalog functions addressable by string name in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogFn {
    Ackley,
    Rosenbrock,
    StyblinskiTang,
    Rastrigin,
    Levy,
    Beale,
    Hartmann3,
    Hartmann6,
    Shekel5,
    Shekel7,
}

impl CatalogFn {
    pub fn name(&self) -> &'static str {
        match self {
            CatalogFn::Ackley => "ackley",
            CatalogFn::Rosenbrock => "rosenbrock",
            CatalogFn::StyblinskiTang => "styblinski_tang",
            CatalogFn::Rastrigin => "rastrigin",
            CatalogFn::Levy => "levy",
            CatalogFn::Beale => "beale",
            CatalogFn::Hartmann3 => "hartmann3",
            CatalogFn::Hartmann6 => "hartmann6",
            CatalogFn::Shekel5 => "shekel5",
            CatalogFn::Shekel7 => "shekel7",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, TestbedError> {
        Ok(match name {
            "ackley" => CatalogFn::Ackley,
            "rosenbrock" => CatalogFn::Rosenbrock,
            "styblinski_tang" => CatalogFn::StyblinskiTang,
            "rastrigin" => CatalogFn::Rastrigin,
            "levy" => CatalogFn::Levy,
            "beale" => CatalogFn::Beale,
            "hartmann3" => CatalogFn::Hartmann3,
            "hartmann6" => CatalogFn::Hartmann6,
            "shekel5" => CatalogFn::Shekel5,
            "shekel7" => CatalogFn::Shekel7,
            other => return Err(TestbedError::UnknownFunction(other.to_string())),
        })
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            CatalogFn::Ackley => ackley(x),
            CatalogFn::Rosenbrock => rosenbrock(x),
            CatalogFn::StyblinskiTang => styblinski_tang(x),
            CatalogFn::Rastrigin => rastrigin(x),
            CatalogFn::Levy => levy(x),
            CatalogFn::Beale => beale(x),
            CatalogFn::Hartmann3 => hartmann(x, &HARTMANN3_A, &HARTMANN3_P),
            CatalogFn::Hartmann6 => hartmann(x, &HARTMANN6_A, &HARTMANN6_P),
            CatalogFn::Shekel5 => shekel(x, 5),
            CatalogFn::Shekel7 => shekel(x, 7),
        }
    }
}

enum Kind {
    Catalog(CatalogFn),
    /// Affine change of variables: `base_x_i = offset_i + scale_i * x_i`.
    Scaled {
        base: Box<ObjectiveSpec>,
        scale: Vec<f64>,
        offset: Vec<f64>,
    },
    /// `f(x) = base((Q x)[..d_e])` over `[-1,1]^D`.
    LowRank {
        base: Box<ObjectiveSpec>,
        q: DMatrix<f64>,
    },
}

/// A benchmark objective: dimension, box domain, evaluator, known optimum.
pub struct ObjectiveSpec {
    name: String,
    dim: usize,
    domain: BoxDomain,
    f_star: f64,
    x_star: Option<Vec<f64>>,
    kind: Kind,
}

impl Clone for ObjectiveSpec {
    fn clone(&self) -> Self {
        let kind = match &self.kind {
            Kind::Catalog(f) => Kind::Catalog(*f),
            Kind::Scaled { base, scale, offset } => Kind::Scaled {
                base: base.clone(),
                scale: scale.clone(),
                offset: offset.clone(),
            },
            Kind::LowRank { base, q } => Kind::LowRank {
                base: base.clone(),
                q: q.clone(),
            },
        };
        Self {
            name: self.name.clone(),
            dim: self.dim,
            domain: self.domain.clone(),
            f_star: self.f_star,
            x_star: self.x_star.clone(),
            kind,
        }
    }
}

impl std::fmt::Debug for ObjectiveSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectiveSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("f_star", &self.f_star)
            .finish()
    }
}

impl ObjectiveSpec {
    /// A catalog function at its default domain, by enum.
    pub fn catalog(func: CatalogFn, dim: usize) -> Result<Self, TestbedError> {
        let d = dim;
        let (domain, f_star, x_star): (BoxDomain, f64, Option<Vec<f64>>) = match func {
            CatalogFn::Ackley => (
                BoxDomain::cube(d, -30.0, 30.0)?,
                0.0,
                Some(vec![0.0; d]),
            ),
            CatalogFn::Rosenbrock => {
                if d < 2 {
                    return Err(TestbedError::MinDimension {
                        name: "rosenbrock",
                        min: 2,
                        got: d,
                    });
                }
                (BoxDomain::cube(d, -5.0, 10.0)?, 0.0, Some(vec![1.0; d]))
            }
            CatalogFn::StyblinskiTang => (
                BoxDomain::cube(d, -5.0, 5.0)?,
                ST_MIN_PER_DIM * d as f64,
                Some(vec![ST_XSTAR; d]),
            ),
            CatalogFn::Rastrigin => (
                BoxDomain::cube(d, -5.12, 5.12)?,
                0.0,
                Some(vec![0.0; d]),
            ),
            CatalogFn::Levy => (BoxDomain::cube(d, -10.0, 10.0)?, 0.0, Some(vec![1.0; d])),
            CatalogFn::Beale => {
                require_dim("beale", 2, d)?;
                (BoxDomain::cube(2, -4.5, 4.5)?, 0.0, Some(vec![3.0, 0.5]))
            }
            CatalogFn::Hartmann3 => {
                require_dim("hartmann3", 3, d)?;
                (
                    BoxDomain::cube(3, 0.0, 1.0)?,
                    HARTMANN3_FSTAR,
                    Some(HARTMANN3_XSTAR.to_vec()),
                )
            }
            CatalogFn::Hartmann6 => {
                require_dim("hartmann6", 6, d)?;
                (
                    BoxDomain::cube(6, 0.0, 1.0)?,
                    HARTMANN6_FSTAR,
                    Some(HARTMANN6_XSTAR.to_vec()),
                )
            }
            CatalogFn::Shekel5 => {
                require_dim("shekel5", 4, d)?;
                (
                    BoxDomain::cube(4, 0.0, 10.0)?,
                    SHEKEL5_FSTAR,
                    Some(SHEKEL5_XSTAR.to_vec()),
                )
            }
            CatalogFn::Shekel7 => {
                require_dim("shekel7", 4, d)?;
                (
                    BoxDomain::cube(4, 0.0, 10.0)?,
                    SHEKEL7_FSTAR,
                    Some(SHEKEL7_XSTAR.to_vec()),
                )
            }
        };
        Ok(Self {
            name: func.name().to_string(),
            dim: domain.dim(),
            domain,
            f_star,
            x_star,
            kind: Kind::Catalog(func),
        })
    }

    /// A catalog function by config-file name.
    pub fn by_name(name: &str, dim: usize) -> Result<Self, TestbedError> {
        Self::catalog(CatalogFn::from_name(name)?, dim)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    /// Known global minimum value.
    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    /// A known minimizer, when one is representable inside the domain.
    pub fn x_star(&self) -> Option<&[f64]> {
        self.x_star.as_deref()
    }

    /// Evaluates the objective at `x`, clipping to the domain first.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, TestbedError> {
        if x.len() != self.dim {
            return Err(TestbedError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let x = self.domain.clip(x);
        Ok(self.eval_clipped(&x))
    }

    fn eval_clipped(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Catalog(f) => f.eval(x),
            Kind::Scaled { base, scale, offset } => {
                let mapped: Vec<f64> = x
                    .iter()
                    .zip(scale.iter().zip(offset))
                    .map(|(&v, (&s, &o))| o + s * v)
                    .collect();
                base.evaluate(&mapped).expect("scaled dimensions match")
            }
            Kind::LowRank { base, q } => {
                let xv = nalgebra::DVector::from_column_slice(x);
                let rotated = q * xv;
                let head: Vec<f64> = rotated.iter().take(base.dim).copied().collect();
                base.evaluate(&head).expect("low-rank dimensions match")
            }
        }
    }
}

/// Affine change of variables onto `target`; the minimum value is unchanged
/// and the minimizer is mapped through the inverse map.
pub fn scale_domain(spec: &ObjectiveSpec, target: &BoxDomain) -> Result<ObjectiveSpec, TestbedError> {
    if target.dim() != spec.dim {
        return Err(TestbedError::DimensionMismatch {
            expected: spec.dim,
            got: target.dim(),
        });
    }
    let mut scale = Vec::with_capacity(spec.dim);
    let mut offset = Vec::with_capacity(spec.dim);
    for i in 0..spec.dim {
        let (a, b) = (spec.domain.lo()[i], spec.domain.hi()[i]);
        let (c, d) = (target.lo()[i], target.hi()[i]);
        let s = (b - a) / (d - c);
        scale.push(s);
        offset.push(a - s * c);
    }
    let x_star = spec.x_star.as_ref().map(|xs| {
        xs.iter()
            .enumerate()
            .map(|(i, &v)| (v - offset[i]) / scale[i])
            .collect()
    });
    Ok(ObjectiveSpec {
        name: spec.name.clone(),
        dim: spec.dim,
        domain: target.clone(),
        f_star: spec.f_star,
        x_star,
        kind: Kind::Scaled {
            base: Box::new(spec.clone()),
            scale,
            offset,
        },
    })
}

/// Additive-Gaussian-noise wrapper around an objective.
///
/// `sigma = 0` reproduces the base exactly; the same seed reproduces the
/// same evaluation stream.
#[derive(Debug, Clone)]
pub struct NoisyObjective {
    base: ObjectiveSpec,
    sigma: f64,
    rng: ChaCha8Rng,
}

impl NoisyObjective {
    pub fn new(base: ObjectiveSpec, sigma: f64, seed: u64) -> Self {
        assert!(sigma >= 0.0, "noise standard deviation must be non-negative");
        Self {
            base,
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn base(&self) -> &ObjectiveSpec {
        &self.base
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `base(x) + sigma * eps` with a fresh standard-normal `eps` from the
    /// seeded stream.
    pub fn evaluate_noisy(&mut self, x: &[f64]) -> Result<f64, TestbedError> {
        let f = self.base.evaluate(x)?;
        let eps: f64 = StandardNormal.sample(&mut self.rng);
        Ok(f + self.sigma * eps)
    }
}

/// A low-rank problem: `f(x) = base((Q x)[..d_e])` on `[-1,1]^D`, constant
/// along the span of the last `D - d_e` rows of `Q`.
#[derive(Debug, Clone)]
pub struct LowRankProblem {
    spec: ObjectiveSpec,
    effective_dim: usize,
}

impl LowRankProblem {
    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn into_spec(self) -> ObjectiveSpec {
        self.spec
    }

    pub fn effective_dim(&self) -> usize {
        self.effective_dim
    }

    pub fn ambient_dim(&self) -> usize {
        self.spec.dim
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        match &self.spec.kind {
            Kind::LowRank { q, .. } => q,
            _ => unreachable!("low-rank problems always carry a rotation"),
        }
    }
}

/// Haar-distributed random orthogonal matrix: QR of a seeded Gaussian matrix
/// with the R-diagonal sign correction.
pub fn random_orthogonal(dim: usize, seed: u64) -> DMatrix<f64> {
    assert!(dim >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss: DMatrix<f64> = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Builds a `D`-dimensional low-rank problem from a base objective whose
/// domain is already scaled to `[-1,1]^{d_e}`.
pub fn make_low_rank(
    base: &ObjectiveSpec,
    ambient_dim: usize,
    seed: u64,
) -> Result<LowRankProblem, TestbedError> {
    let q = random_orthogonal(ambient_dim, seed);
    make_low_rank_with(base, ambient_dim, q)
}

/// Identity-rotation variant, for tests where `Q = I` is required.
pub fn make_low_rank_identity(
    base: &ObjectiveSpec,
    ambient_dim: usize,
) -> Result<LowRankProblem, TestbedError> {
    make_low_rank_with(base, ambient_dim, DMatrix::identity(ambient_dim, ambient_dim))
}

fn make_low_rank_with(
    base: &ObjectiveSpec,
    ambient_dim: usize,
    q: DMatrix<f64>,
) -> Result<LowRankProblem, TestbedError> {
    let d_e = base.dim;
    if ambient_dim < d_e {
        return Err(TestbedError::AmbientTooSmall {
            ambient: ambient_dim,
            effective: d_e,
        });
    }
    for i in 0..d_e {
        if (base.domain.lo()[i] + 1.0).abs() > 1e-12 || (base.domain.hi()[i] - 1.0).abs() > 1e-12 {
            return Err(TestbedError::BaseNotUnitCube(i));
        }
    }
    // x* = Q^T [xbar*; 0], kept only when it lies inside the ambient box.
    let x_star = base.x_star.as_ref().and_then(|xs| {
        let mut padded = nalgebra::DVector::zeros(ambient_dim);
        for (i, &v) in xs.iter().enumerate() {
            padded[i] = v;
        }
        let cand = q.transpose() * padded;
        let cand: Vec<f64> = cand.iter().copied().collect();
        if cand.iter().all(|&v| (-1.0..=1.0).contains(&v)) {
            Some(cand)
        } else {
            None
        }
    });
    let spec = ObjectiveSpec {
        name: format!("lowrank_{}", base.name),
        dim: ambient_dim,
        domain: BoxDomain::cube(ambient_dim, -1.0, 1.0)?,
        f_star: base.f_star,
        x_star,
        kind: Kind::LowRank {
            base: Box::new(base.clone()),
            q,
        },
    };
    Ok(LowRankProblem {
        spec,
        effective_dim: d_e,
    })
}

fn require_dim(name: &'static str, required: usize, got: usize) -> Result<(), TestbedError> {
    if got != required {
        return Err(TestbedError::FixedDimension { name, required, got });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Formulas and constant tables
// ---------------------------------------------------------------------------

/// Per-coordinate minimizer of Styblinski–Tang (root of `4x^3 - 32x + 5`).
const ST_XSTAR: f64 = -2.903_534_027_771_177;
const ST_MIN_PER_DIM: f64 = -39.166_165_703_771_415;

fn ackley(x: &[f64]) -> f64 {
    const A: f64 = 20.0;
    const B: f64 = 0.2;
    const C: f64 = 2.0 * std::f64::consts::PI;
    let d = x.len() as f64;
    let sq = x.iter().map(|&v| v * v).sum::<f64>() / d;
    let cs = x.iter().map(|&v| (C * v).cos()).sum::<f64>() / d;
    -A * (-B * sq.sqrt()).exp() - cs.exp() + A + std::f64::consts::E
}

/// Chained Rosenbrock: `sum_{i<D-1} [100 (x_{i+1} - x_i^2)^2 + (x_i - 1)^2]`.
fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            100.0 * (b - a * a).powi(2) + (a - 1.0).powi(2)
        })
        .sum()
}

fn styblinski_tang(x: &[f64]) -> f64 {
    0.5 * x
        .iter()
        .map(|&v| v.powi(4) - 16.0 * v * v + 5.0 * v)
        .sum::<f64>()
}

fn rastrigin(x: &[f64]) -> f64 {
    const A: f64 = 10.0;
    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
    A * x.len() as f64
        + x.iter()
            .map(|&v| v * v - A * (TWO_PI * v).cos())
            .sum::<f64>()
}

fn levy(x: &[f64]) -> f64 {
    let pi = std::f64::consts::PI;
    let w: Vec<f64> = x.iter().map(|&v| 1.0 + (v - 1.0) / 4.0).collect();
    let d = w.len();
    let mut total = (pi * w[0]).sin().powi(2);
    for i in 0..d - 1 {
        total += (w[i] - 1.0).powi(2) * (1.0 + 10.0 * (pi * w[i] + 1.0).sin().powi(2));
    }
    total + (w[d - 1] - 1.0).powi(2) * (1.0 + (2.0 * pi * w[d - 1]).sin().powi(2))
}

fn beale(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    (1.5 - a + a * b).powi(2)
        + (2.25 - a + a * b * b).powi(2)
        + (2.625 - a + a * b * b * b).powi(2)
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

const HARTMANN3_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];
const HARTMANN3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];
const HARTMANN3_XSTAR: [f64; 3] = [0.114_588_881_225_412_87, 0.555_648_895_473_937_1, 0.852_546_984_217_274_6];
const HARTMANN3_FSTAR: f64 = -3.862_779_787_332_663;

const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];
const HARTMANN6_XSTAR: [f64; 6] = [
    0.201_689_509_093_657_46,
    0.150_010_693_541_113_74,
    0.476_873_972_925_099_8,
    0.275_332_427_522_078_2,
    0.311_651_617_239_568_6,
    0.657_300_534_553_670_2,
];
const HARTMANN6_FSTAR: f64 = -3.322_368_011_415_514_7;

fn hartmann<const N: usize>(x: &[f64], a: &[[f64; N]; 4], p: &[[f64; N]; 4]) -> f64 {
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..N).map(|j| a[i][j] * (x[j] - p[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-inner).exp()
        })
        .sum::<f64>()
}

const SHEKEL_BETA: [f64; 10] = [0.1, 0.2, 0.2, 0.4, 0.4, 0.6, 0.3, 0.7, 0.5, 0.5];
const SHEKEL_C: [[f64; 10]; 4] = [
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
];
const SHEKEL5_XSTAR: [f64; 4] = [
    4.000_037_152_376_549,
    4.000_133_278_657_566,
    4.000_037_151_057_555,
    4.000_133_277_090_425,
];
const SHEKEL5_FSTAR: f64 = -10.153_199_679_058_229;
const SHEKEL7_XSTAR: [f64; 4] = [
    4.000_572_818_167_059,
    3.999_606_207_067_230_5,
    4.000_572_821_117_356,
    3.999_606_210_400_273,
];
const SHEKEL7_FSTAR: f64 = -10.402_915_336_777_745;

fn shekel(x: &[f64], m: usize) -> f64 {
    -(0..m)
        .map(|i| {
            let dist: f64 = (0..4).map(|j| (x[j] - SHEKEL_C[j][i]).powi(2)).sum();
            1.0 / (dist + SHEKEL_BETA[i])
        })
        .sum::<f64>()
}

/// All catalog functions, for sweep-style tests and listings.
pub const CATALOG: [CatalogFn; 10] = [
    CatalogFn::Ackley,
    CatalogFn::Rosenbrock,
    CatalogFn::StyblinskiTang,
    CatalogFn::Rastrigin,
    CatalogFn::Levy,
    CatalogFn::Beale,
    CatalogFn::Hartmann3,
    CatalogFn::Hartmann6,
    CatalogFn::Shekel5,
    CatalogFn::Shekel7,
];
