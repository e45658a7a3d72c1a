use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::PruneMask;

pub const EBT_EPSILON: f64 = 0.01;
pub const EBT_WINDOW: usize = 5;

/// Normalized Hamming distance between the concatenated keep bits.
pub fn mask_distance(a: &PruneMask, b: &PruneMask) -> Result<f64> {
    let same_layout =
        a.layers.len() == b.layers.len() && a.layers.iter().zip(&b.layers).all(|(x, y)| x.keep.len() == y.keep.len());
    if !same_layout {
        return Err(Error::Shape("masks cover different channel layouts".into()));
    }
    let total = a.total();
    if total == 0 {
        return Ok(0.0);
    }
    let diff = a.bits().zip(b.bits()).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / total as f64)
}

/// Masks probed during training at a fixed ratio.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskHistory {
    pub snapshots: Vec<(usize, PruneMask)>,
}

impl MaskHistory {
    pub fn push(&mut self, iteration: usize, mask: PruneMask) -> Result<()> {
        if let Some((last, _)) = self.snapshots.last() {
            if iteration <= *last {
                return Err(Error::Contract(format!(
                    "mask snapshot at iteration {iteration} after {last}"
                )));
            }
        }
        self.snapshots.push((iteration, mask));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EbtFound {
    /// Index into the history.
    pub snapshot: usize,
    pub iteration: usize,
}

/// Earliest snapshot `i` such that every pair among the `window` snapshots
/// ending at `i` is closer than `epsilon`.
pub fn ebt_detect(history: &MaskHistory, epsilon: f64, window: usize) -> Result<Option<EbtFound>> {
    if window == 0 {
        return Err(Error::Config("EBT window must be at least 1".into()));
    }
    let snaps = &history.snapshots;
    for end in window.saturating_sub(1)..snaps.len() {
        let group = &snaps[end + 1 - window..=end];
        let mut worst: f64 = 0.0;
        for (i, (_, a)) in group.iter().enumerate() {
            for (_, b) in &group[i + 1..] {
                worst = worst.max(mask_distance(a, b)?);
            }
        }
        if worst < epsilon {
            return Ok(Some(EbtFound {
                snapshot: end,
                iteration: snaps[end].0,
            }));
        }
    }
    Ok(None)
}
