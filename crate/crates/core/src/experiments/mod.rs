//! Depth-scaling benchmark, inference-quality table and inverse problems.

mod bench;
mod inverse;
mod quality;

pub use bench::{bench_depth, spread_layers, BenchConfig, BenchRow, BENCH_CSV_HEADER};
pub use inverse::{
    deblur, denoise, inverse_study, DeblurOutcome, DenoiseOutcome, InverseSummary, InverseTask,
};
pub use quality::{quality_table, QualityRow, QUALITY_CSV_HEADER};

use std::time::Instant;

/// Worker count from `IAHVAE_THREADS`, else `default`.
pub fn thread_count(default: usize) -> usize {
    std::env::var("IAHVAE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(default)
        .max(1)
}

/// All available cores.
pub fn available_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Maps `f` over `items` on up to `threads` scoped workers, keeping order.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(usize, &T) -> R + Sync,
) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                scope.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, x)| f(c * chunk + j, x))
                        .collect::<Vec<R>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

fn seconds<E>(run: &mut impl FnMut() -> Result<(), E>) -> Result<f64, E> {
    let start = Instant::now();
    run()?;
    Ok(start.elapsed().as_secs_f64())
}

/// Median wall-clock seconds of `reps` runs after `warmup` discarded runs.
pub fn median_time<E>(
    warmup: usize,
    reps: usize,
    mut run: impl FnMut() -> Result<(), E>,
) -> Result<f64, E> {
    for _ in 0..warmup {
        run()?;
    }
    let times = (0..reps.max(1))
        .map(|_| seconds(&mut run))
        .collect::<Result<Vec<_>, E>>()?;
    Ok(median(times))
}

/// Times `a` then `b` back to back in each repetition. Returns the median
/// time of each and the median of the per-repetition ratios `b / a`.
pub fn paired_median_time<E>(
    warmup: usize,
    reps: usize,
    mut a: impl FnMut() -> Result<(), E>,
    mut b: impl FnMut() -> Result<(), E>,
) -> Result<(f64, f64, f64), E> {
    for _ in 0..warmup {
        a()?;
        b()?;
    }
    let mut pairs = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        pairs.push((seconds(&mut a)?, seconds(&mut b)?));
    }
    Ok((
        median(pairs.iter().map(|p| p.0).collect()),
        median(pairs.iter().map(|p| p.1).collect()),
        median(pairs.iter().map(|p| p.1 / p.0).collect()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<usize> = (0..23).collect();
        for threads in [1, 2, 5, 40] {
            assert_eq!(
                parallel_map(&items, threads, |i, &x| i * 100 + x),
                (0..23).map(|x| x * 101).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn paired_timing_runs_both_workloads_each_repetition() {
        let (mut a, mut b) = (0, 0);
        let (ta, tb, ratio) = paired_median_time::<()>(
            1,
            5,
            || {
                a += 1;
                Ok(())
            },
            || {
                b += 1;
                std::thread::sleep(std::time::Duration::from_millis(2));
                Ok(())
            },
        )
        .unwrap();
        assert_eq!((a, b), (6, 6));
        assert!(tb > ta && ratio > 1.0);
    }

    #[test]
    fn median_time_counts_warmups() {
        let mut calls = 0;
        median_time::<()>(2, 5, || {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 7);
    }
}
