/// Random-walk step size tuned during burn-in by multiplicative adjustment.
///
/// Every `batch` iterations the batch acceptance rate is compared with the
/// target; the step grows by `factor` when above it and shrinks otherwise.
/// After burn-in the step is frozen so the kernel is a fixed M-H kernel.
#[derive(Clone, Debug)]
pub struct AdaptiveStep {
    pub scale: f64,
    target: f64,
    factor: f64,
    batch: usize,
    batch_accepted: usize,
    batch_seen: usize,
}

impl AdaptiveStep {
    pub const DEFAULT_FACTOR: f64 = 1.1;
    pub const DEFAULT_BATCH: usize = 50;

    pub fn new(scale: f64, target: f64) -> Self {
        Self {
            scale,
            target,
            factor: Self::DEFAULT_FACTOR,
            batch: Self::DEFAULT_BATCH,
            batch_accepted: 0,
            batch_seen: 0,
        }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch.max(1);
        self
    }

    /// Records one proposal outcome; adapts only while `tuning` is true.
    pub fn record(&mut self, accepted: bool, tuning: bool) {
        if !tuning {
            return;
        }
        self.batch_seen += 1;
        self.batch_accepted += usize::from(accepted);
        if self.batch_seen == self.batch {
            let rate = self.batch_accepted as f64 / self.batch as f64;
            if rate > self.target {
                self.scale *= self.factor;
            } else {
                self.scale /= self.factor;
            }
            self.batch_seen = 0;
            self.batch_accepted = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grows_when_accepting_and_freezes_after_burn_in() {
        let mut s = AdaptiveStep::new(1.0, 0.3).with_batch(10);
        for _ in 0..10 {
            s.record(true, true);
        }
        assert!((s.scale - 1.1).abs() < 1e-15);
        for _ in 0..10 {
            s.record(false, true);
        }
        assert!((s.scale - 1.0).abs() < 1e-12);
        for _ in 0..100 {
            s.record(true, false);
        }
        assert!((s.scale - 1.0).abs() < 1e-12);
    }
}
