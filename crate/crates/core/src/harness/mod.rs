//! Validation scenarios and metrics: external leader profile, platoon
//! string stability, driver characteristics, cross-comparison with a
//! calibrated IDM and time-to-collision.

mod export;
mod metrics;
mod scenarios;
mod trajectory;

pub use export::{write_histogram_csv, write_trace_csv, write_variance_csv};
pub use metrics::{
    compute_ttc, jerk_exceedances, mean, population_variance, ttc, EmergencyWindow, Histogram,
    MetricsReport, SteadyFollowing, TtcReport, TtcSample, COMFORT_JERK,
};
pub use scenarios::*;
pub use trajectory::{reconstruct_speed, resample, resampled_len, Trajectory, GRID_DT};

/// Maps `f` over `items` on up to `jobs` scoped threads, preserving order.
pub fn par_map<T, U, F>(items: &[T], jobs: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Vec<U>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
