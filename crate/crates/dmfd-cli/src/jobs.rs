//! A tiny fixed-size worker pool for seed and sweep-cell jobs.
//!
//! Worker count defaults to the machine's parallelism and is capped by the
//! `DMFD_THREADS` environment variable. Every job writes only inside its
//! own output directory, so jobs are freely schedulable; results come back
//! in submission order regardless of completion order.

use std::collections::VecDeque;
use std::sync::Mutex;

use crate::errors::CliError;

/// Maximum number of concurrently running jobs.
pub fn max_workers() -> usize {
    if let Ok(value) = std::env::var("DMFD_THREADS") {
        match value.trim().parse::<usize>() {
            Ok(n) if n > 0 => return n,
            _ => eprintln!("warning: ignoring invalid DMFD_THREADS value {value:?}"),
        }
    }
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs every job on up to [`max_workers`] threads and returns their
/// results in submission order.
pub fn run_all<T, F>(jobs: Vec<F>) -> Vec<Result<T, CliError>>
where
    T: Send,
    F: FnOnce() -> Result<T, CliError> + Send,
{
    let n = jobs.len();
    let workers = max_workers().min(n);
    if workers <= 1 {
        return jobs.into_iter().map(|job| job()).collect();
    }
    let queue: Mutex<VecDeque<(usize, F)>> = Mutex::new(jobs.into_iter().enumerate().collect());
    let results: Vec<Mutex<Option<Result<T, CliError>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some((index, job)) = queue.lock().unwrap().pop_front() else {
                    return;
                };
                let outcome = job();
                *results[index].lock().unwrap() = Some(outcome);
            });
        }
    });
    results
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_come_back_in_submission_order() {
        let jobs: Vec<_> = (0..16)
            .map(|i| move || -> Result<usize, CliError> { Ok(i * i) })
            .collect();
        let results = run_all(jobs);
        for (i, r) in results.into_iter().enumerate() {
            assert_eq!(r.unwrap(), i * i);
        }
    }

    #[test]
    fn failures_are_reported_per_job() {
        let jobs: Vec<Box<dyn FnOnce() -> Result<u32, CliError> + Send>> = vec![
            Box::new(|| Ok(1)),
            Box::new(|| Err(CliError::Runtime("boom".into()))),
            Box::new(|| Ok(3)),
        ];
        let results = run_all(jobs);
        assert_eq!(*results[0].as_ref().unwrap(), 1);
        assert!(results[1].is_err());
        assert_eq!(*results[2].as_ref().unwrap(), 3);
    }
}
