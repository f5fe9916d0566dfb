//! Stateful batch geometry over one long concatenated stream.

use std::ops::Range;

use crate::error::{Error, Result};

/// `lanes` contiguous pieces of the stream, each cut into non-overlapping
/// windows of `window` units. Window `k` of a lane continues window `k − 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub lanes: usize,
    pub window: usize,
    pub lane_len: usize,
    pub batches: usize,
}

pub fn make_batch_plan(stream_len: usize, lanes: usize, window: usize) -> Result<BatchPlan> {
    if lanes == 0 || window == 0 {
        return Err(Error::Config("batch lanes and window must be positive".into()));
    }
    if stream_len < lanes * window {
        return Err(Error::Invalid(format!(
            "stream of {stream_len} units cannot fill one {lanes}×{window} batch"
        )));
    }
    let lane_len = stream_len / lanes;
    Ok(BatchPlan {
        lanes,
        window,
        lane_len,
        batches: lane_len / window,
    })
}

impl BatchPlan {
    /// Stream indices of window `batch` in `lane`.
    pub fn window_range(&self, batch: usize, lane: usize) -> Range<usize> {
        let start = lane * self.lane_len + batch * self.window;
        start..start + self.window
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_geometry() {
        let p = make_batch_plan(7680, 32, 120).unwrap();
        assert_eq!((p.lane_len, p.batches), (240, 2));
        assert_eq!(make_batch_plan(32 * 120, 32, 120).unwrap().batches, 1);
        assert!(make_batch_plan(32 * 120 - 1, 32, 120).is_err());
    }

    #[test]
    fn windows_continue_and_partition() {
        let p = make_batch_plan(1003, 4, 7).unwrap();
        let mut seen = vec![0u8; 1003];
        for lane in 0..4 {
            for b in 0..p.batches {
                let r = p.window_range(b, lane);
                if b + 1 < p.batches {
                    assert_eq!(r.end, p.window_range(b + 1, lane).start);
                }
                for i in r {
                    seen[i] += 1;
                }
            }
        }
        assert!(seen.iter().all(|&c| c <= 1));
        for lane in 0..4 {
            let used = p.batches * p.window;
            let base = lane * p.lane_len;
            assert!(seen[base..base + used].iter().all(|&c| c == 1));
        }
    }
}
