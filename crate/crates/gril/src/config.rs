//! Verifier configuration: mode, heuristic budgets, solver selection.

/// Verification mode.
///
/// `Ts` proves type safety only: ownership predicates carry no prophecy
/// machinery and hybrid pre/postconditions are replaced by the safety
/// expansion. `Fc` proves functional correctness: hybrid specifications are
/// elaborated into ownership plus observations over prophecy variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ts,
    Fc,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ts => "ts",
            Mode::Fc => "fc",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ts" => Ok(Mode::Ts),
            "fc" => Ok(Mode::Fc),
            other => Err(format!("unknown mode `{other}` (expected `ts` or `fc`)")),
        }
    }
}

/// External solver selection. The builtin theory core is the default; an
/// SMT-LIB v2 subprocess can be configured by command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolverChoice {
    Builtin,
    /// Command line for an SMT-LIB v2 solver reading a script on stdin.
    SmtLib(String),
}

/// Engine options. Defaults match the documented budgets: at most 2
/// automatic unfolds and 1 automatic guarded-unfold per atom retry, a path
/// cap of 10^4 per function, and sequence axioms unrolled to depth 4.
#[derive(Debug, Clone)]
pub struct Options {
    pub mode: Mode,
    pub unfold_budget: u32,
    pub gunfold_budget: u32,
    pub path_cap: u64,
    pub seq_depth: u32,
    pub solver: SolverChoice,
    pub seed: u64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            mode: Mode::Fc,
            unfold_budget: 2,
            gunfold_budget: 1,
            path_cap: 10_000,
            seq_depth: 4,
            solver: SolverChoice::Builtin,
            seed: 0,
        }
    }
}

impl Options {
    pub fn with_mode(mode: Mode) -> Self {
        Options {
            mode,
            ..Options::default()
        }
    }
}
