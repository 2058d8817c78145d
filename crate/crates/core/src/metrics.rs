//! Error accumulators split by weather condition.

use crate::datamodel::SampleWindow;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorStats {
    pub abs_sum: f64,
    pub sq_sum: f64,
    pub entries: usize,
    pub samples: usize,
}

impl ErrorStats {
    pub fn add_sample(&mut self, pred: &[f64], truth: &[f64]) {
        debug_assert_eq!(pred.len(), truth.len());
        for (p, t) in pred.iter().zip(truth) {
            let e = p - t;
            self.abs_sum += libm::fabs(e);
            self.sq_sum += e * e;
        }
        self.entries += pred.len();
        self.samples += 1;
    }

    pub fn merge(&mut self, other: &ErrorStats) {
        self.abs_sum += other.abs_sum;
        self.sq_sum += other.sq_sum;
        self.entries += other.entries;
        self.samples += other.samples;
    }

    /// `NaN` when empty.
    pub fn mae(&self) -> f64 {
        self.abs_sum / self.entries as f64
    }

    pub fn rmse(&self) -> f64 {
        libm::sqrt(self.sq_sum / self.entries as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConditionStats {
    pub normal: ErrorStats,
    pub extreme: ErrorStats,
}

impl ConditionStats {
    pub fn add(&mut self, window: &SampleWindow, pred: &[f64]) {
        let bucket = if window.is_extreme() { &mut self.extreme } else { &mut self.normal };
        bucket.add_sample(pred, &window.flow_future);
    }

    pub fn overall(&self) -> ErrorStats {
        let mut all = self.normal;
        all.merge(&self.extreme);
        all
    }
}

/// Repeats the last observed step across the horizon.
pub fn persistence_forecast(window: &SampleWindow) -> alloc::vec::Vec<f64> {
    let row = window.n_parcels * window.d_flow;
    let last = &window.flow_hist[window.flow_hist.len() - row..];
    last.iter().copied().cycle().take(window.flow_future.len()).collect()
}

pub fn persistence_stats(windows: &[SampleWindow]) -> ConditionStats {
    let mut stats = ConditionStats::default();
    for w in windows {
        stats.add(w, &persistence_forecast(w));
    }
    stats
}
