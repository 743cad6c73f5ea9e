use nalgebra::DVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Infeasibility report produced when path optimization cannot find any
/// iterate satisfying the deviation bounds and joint limits.
#[derive(Debug, Clone)]
pub struct InfeasibleReport {
    pub max_violation: f64,
    pub worst_step: usize,
    pub outer_iterations: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("manifold spec mismatch: expected {expected}, got {got}")]
    SpecMismatch { expected: String, got: String },

    #[error("{context}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("quaternion block has non-unit norm {norm}")]
    NonUnitQuaternion { norm: f64 },

    #[error("log map undefined: quaternion blocks are antipodal (180-degree rotation, ambiguous axis)")]
    AntipodalQuaternion,

    #[error("Frechet mean did not converge after {iterations} iterations (residual {residual:.3e})")]
    FrechetNonConvergence {
        iterations: usize,
        residual: f64,
        last: Box<crate::manifold::ManifoldPoint>,
    },

    #[error("fusion fixed point did not converge after {iterations} iterations (residual {residual:.3e})")]
    FusionNonConvergence { iterations: usize, residual: f64 },

    #[error("{what} must not be empty")]
    Empty { what: &'static str },

    #[error("need at least {need} demonstrations, got {got}")]
    InsufficientDemos { got: usize, need: usize },

    #[error("trajectory too short: {got} steps, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error("partition part {part} has {got} demonstrations, need at least {need} to fit")]
    PartTooSmall { part: usize, got: usize, need: usize },

    #[error("DBSCAN found no core points: every demonstration is noise at eps={eps}")]
    AllNoise { eps: f64 },

    #[error("EM degenerate on every restart: {detail}")]
    EmDegenerate { detail: String },

    #[error("invalid {what}: {detail}")]
    InvalidValue { what: &'static str, detail: String },

    #[error("obstacle points {i} and {j} are {dist:.4} apart, closer than d_safe + d_uni = {required:.4}")]
    ObstacleMargin {
        i: usize,
        j: usize,
        dist: f64,
        required: f64,
    },

    #[error("evidence is infeasible: {detail}")]
    InfeasibleEvidence { detail: String },

    #[error("chain has no feasible modal path left after update")]
    InfeasibleChain,

    #[error("modal path junction {junction} has no feasible continuation from mode {mode}")]
    DeadEnd { junction: usize, mode: usize },

    #[error("IK did not converge: cost {cost:.3e} after {iterations} iterations")]
    IkNonConvergence {
        cost: f64,
        iterations: usize,
        iterate: DVector<f64>,
    },

    #[error(
        "path optimization infeasible: max deviation-bound violation {:.3e} at step {}",
        report.max_violation,
        report.worst_step
    )]
    TrajOptInfeasible { report: InfeasibleReport },

    #[error("joint {joint} value {value:.4} outside limits [{lo:.4}, {hi:.4}]")]
    JointLimit {
        joint: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("unsupported schema in {path}: {detail}")]
    Schema { path: String, detail: String },
}

impl Error {
    /// Stable process exit code per failure class, used by the CLI.
    ///
    /// 2 is reserved for argument parsing (clap), 1 for I/O and internal
    /// errors, 3 for invalid inputs, 4 for numerical non-convergence,
    /// 5 for infeasible evidence/kinematics.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Io { .. } | Parse { .. } | Schema { .. } => 1,
            SpecMismatch { .. }
            | DimensionMismatch { .. }
            | NonUnitQuaternion { .. }
            | Empty { .. }
            | InsufficientDemos { .. }
            | TooShort { .. }
            | PartTooSmall { .. }
            | InvalidValue { .. }
            | ObstacleMargin { .. }
            | JointLimit { .. } => 3,
            AntipodalQuaternion
            | FrechetNonConvergence { .. }
            | FusionNonConvergence { .. }
            | EmDegenerate { .. }
            | AllNoise { .. }
            | IkNonConvergence { .. } => 4,
            InfeasibleEvidence { .. } | InfeasibleChain | DeadEnd { .. } | TrajOptInfeasible { .. } => 5,
        }
    }
}
