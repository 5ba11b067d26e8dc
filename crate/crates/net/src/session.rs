//! CHSH session state machine:
//! Idle → Configuring(k) → Counting(k) → … → Computing → Done, or Failed
//! from any live state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STEPS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Idle,
    Configuring { step: u32 },
    Counting { step: u32 },
    Computing,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementNode {
    Closet,
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal transition from {from:?}: {what}")]
pub struct TransitionError {
    pub from: SessionState,
    pub what: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionMachine {
    state: SessionState,
    confirmed: [bool; 2],
}

impl Default for SessionMachine {
    fn default() -> Self {
        Self::new()
    }
}

impl SessionMachine {
    pub fn new() -> Self {
        SessionMachine { state: SessionState::Idle, confirmed: [false; 2] }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    fn refuse<T>(&self, what: &'static str) -> Result<T, TransitionError> {
        Err(TransitionError { from: self.state, what })
    }

    /// Begins step `step` (1-based); steps must follow one another.
    pub fn configure(&mut self, step: u32) -> Result<(), TransitionError> {
        let ok = match self.state {
            SessionState::Idle => step == 1,
            SessionState::Counting { step: prev } => step == prev + 1 && step <= STEPS,
            _ => false,
        };
        if !ok {
            return self.refuse("configure out of sequence");
        }
        self.state = SessionState::Configuring { step };
        self.confirmed = [false; 2];
        Ok(())
    }

    pub fn confirm(&mut self, node: MeasurementNode) -> Result<(), TransitionError> {
        if !matches!(self.state, SessionState::Configuring { .. }) {
            return self.refuse("angle confirmation outside configuring");
        }
        let slot = &mut self.confirmed[node as usize];
        if *slot {
            return self.refuse("node confirmed twice");
        }
        *slot = true;
        Ok(())
    }

    pub fn count(&mut self) -> Result<(), TransitionError> {
        match self.state {
            SessionState::Configuring { step } if self.confirmed == [true; 2] => {
                self.state = SessionState::Counting { step };
                Ok(())
            }
            _ => self.refuse("counting before both nodes confirmed"),
        }
    }

    pub fn compute(&mut self) -> Result<(), TransitionError> {
        if self.state != (SessionState::Counting { step: STEPS }) {
            return self.refuse("computing before the last step");
        }
        self.state = SessionState::Computing;
        Ok(())
    }

    pub fn finish(&mut self) -> Result<(), TransitionError> {
        if self.state != SessionState::Computing {
            return self.refuse("finish before computing");
        }
        self.state = SessionState::Done;
        Ok(())
    }

    pub fn fail(&mut self) {
        if self.state != SessionState::Done {
            self.state = SessionState::Failed;
        }
    }
}
