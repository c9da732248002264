use serde::{Deserialize, Serialize};
use std::fmt;

use super::MissionError;

/// Why a mission stopped early.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortReason {
    EmptyFrame,
    NoTarget,
    DegenerateOrbit,
    OrbitTimeout,
    NoFrameAvailable,
    InsufficientViews,
    EmptyReconstruction,
    Failure(String),
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Failure(msg) => write!(f, "Failure: {msg}"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissionState {
    Idle,
    Mapping,
    Detecting,
    /// Flying towards waypoint `waypoint` of `count`.
    Orbiting {
        waypoint: usize,
        count: usize,
    },
    Reconstructing,
    Done,
    Aborted(AbortReason),
}

impl MissionState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Done | Self::Aborted(_))
    }

    /// State name without payload.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Idle => "Idle",
            Self::Mapping => "Mapping",
            Self::Detecting => "Detecting",
            Self::Orbiting { .. } => "Orbiting",
            Self::Reconstructing => "Reconstructing",
            Self::Done => "Done",
            Self::Aborted(_) => "Aborted",
        }
    }
}

impl fmt::Display for MissionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Orbiting { waypoint, count } => write!(f, "Orbiting({waypoint}/{count})"),
            Self::Aborted(r) => write!(f, "Aborted({r})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissionEvent {
    Start,
    MapReady,
    TargetFound { waypoints: usize },
    WaypointReached,
    ReconstructionComplete,
    Abort(AbortReason),
}

/// The mission state machine. Anything not listed is rejected.
pub fn transition(
    state: &MissionState,
    event: &MissionEvent,
) -> Result<MissionState, MissionError> {
    use MissionEvent as E;
    use MissionState as S;
    let next = match (state, event) {
        (s, E::Abort(reason)) if !s.is_terminal() => S::Aborted(reason.clone()),
        (S::Idle, E::Start) => S::Mapping,
        (S::Mapping, E::MapReady) => S::Detecting,
        (S::Detecting, E::TargetFound { waypoints }) if *waypoints > 0 => S::Orbiting {
            waypoint: 0,
            count: *waypoints,
        },
        (S::Orbiting { waypoint, count }, E::WaypointReached) => {
            if waypoint + 1 < *count {
                S::Orbiting {
                    waypoint: waypoint + 1,
                    count: *count,
                }
            } else {
                S::Reconstructing
            }
        }
        (S::Reconstructing, E::ReconstructionComplete) => S::Done,
        _ => {
            return Err(MissionError::IllegalTransition {
                state: state.to_string(),
                event: format!("{event:?}"),
            })
        }
    };
    Ok(next)
}
