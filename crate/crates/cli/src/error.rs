use beaconlabel_core::calib::CalibError;
use beaconlabel_core::eval::EvalError;
use beaconlabel_core::geom::GeomError;
use beaconlabel_core::io::IoError;
use beaconlabel_core::labelgen::LabelError;
use beaconlabel_core::pipeline::PipelineError;
use beaconlabel_core::refine::RefineError;
use beaconlabel_core::sim::SimError;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Io(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<GeomError> for CliError {
    fn from(e: GeomError) -> Self {
        match e {
            GeomError::DegenerateBeaconPair { .. } | GeomError::NotARotation { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        match e {
            CalibError::NoConvergence | CalibError::TooFewInliers { .. } | CalibError::DegenerateConfiguration => {
                CliError::Numerical(e.to_string())
            }
            CalibError::Geom(g) => g.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<LabelError> for CliError {
    fn from(e: LabelError) -> Self {
        match e {
            LabelError::Geom(g) => g.into(),
            LabelError::Calib(c) => c.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::InvalidConfig(_) | RefineError::NoModelKinds => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Geom(g) => g.into(),
            PipelineError::Refine(r) => r.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(i) => i.into(),
            EvalError::Refine(r) => r.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(i) => i.into(),
            SimError::InvalidConfig(_) | SimError::PlacementFailed(_) => CliError::Config(e.to_string()),
            SimError::Geom(g) => g.into(),
        }
    }
}
