//! Floor-holding time windows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::Side;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowState {
    pub holder: Side,
    /// Sampled window length in seconds.
    pub window_s: f64,
    /// Remaining seconds in the window.
    pub remaining_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowAction {
    Response,
    Wait,
}

impl WindowState {
    pub fn open(holder: Side, window_s: f64) -> Self {
        Self {
            holder,
            window_s,
            remaining_s: window_s,
        }
    }

    /// True once the remaining time is used up and the floor must move.
    pub fn transfer_due(&self) -> bool {
        self.remaining_s <= 0.0
    }
}

/// Uniform window length in `[w_min, w_max]`.
pub fn sample_window<R: Rng + ?Sized>(rng: &mut R, w_min: f64, w_max: f64) -> f64 {
    assert!(0.0 < w_min && w_min <= w_max, "invalid window bounds ({w_min}, {w_max})");
    if w_min == w_max {
        return w_min;
    }
    rng.random_range(w_min..=w_max)
}

/// A response spends its display delay (clamped at zero); a wait gives up
/// the whole remainder.
pub fn step_window(ws: WindowState, action: WindowAction, delay_s: f64) -> WindowState {
    debug_assert!(delay_s >= 0.0);
    let remaining_s = match action {
        WindowAction::Response => (ws.remaining_s - delay_s).max(0.0),
        WindowAction::Wait => 0.0,
    };
    WindowState { remaining_s, ..ws }
}
