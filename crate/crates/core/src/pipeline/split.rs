use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const SPLIT_NAMES: [&str; 3] = ["train", "dev", "test"];

/// Partition sizes by largest-remainder rounding; ties favour the earlier partition.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::config("split ratios must be finite and >= 0"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios must sum to 1, got {sum}")));
    }
    let nonzero = ratios.iter().filter(|r| **r > 0.0).count();
    if n < nonzero {
        return Err(Error::input(format!("{n} tiles cannot fill {nonzero} partitions")));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    // Guard against 0.6 * 10 landing just under 6.
    let mut sizes = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect::<Vec<_>>();
    let mut order: Vec<usize> = (0..3).filter(|&i| ratios[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok([sizes[0], sizes[1], sizes[2]])
}

/// Seeded shuffle followed by a contiguous train/dev/test partition.
pub fn split_dataset<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<[Vec<T>; 3]> {
    let sizes = split_sizes(items.len(), ratios)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts: [Vec<T>; 3] = Default::default();
    let mut it = order.into_iter();
    for (part, size) in parts.iter_mut().zip(sizes) {
        part.extend(it.by_ref().take(size).map(|i| items[i].clone()));
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_twenty_twenty() {
        assert_eq!(split_sizes(10, [0.6, 0.2, 0.2]).unwrap(), [6, 2, 2]);
        assert_eq!(split_sizes(11, [0.6, 0.2, 0.2]).unwrap(), [7, 2, 2]);
        assert_eq!(split_sizes(5, [0.8, 0.2, 0.0]).unwrap(), [4, 1, 0]);
        assert_eq!(split_sizes(3, [1.0 / 3.0; 3]).unwrap(), [1, 1, 1]);
    }

    #[test]
    fn bad_ratios_and_too_few_items() {
        assert!(split_sizes(10, [0.5, 0.2, 0.2]).is_err());
        assert!(split_sizes(10, [1.2, -0.2, 0.0]).is_err());
        assert!(split_sizes(2, [0.6, 0.2, 0.2]).is_err());
        assert!(split_sizes(1, [1.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn seeded_and_exhaustive() {
        let items: Vec<u32> = (0..50).collect();
        let a = split_dataset(&items, [0.6, 0.2, 0.2], 3).unwrap();
        assert_eq!(a, split_dataset(&items, [0.6, 0.2, 0.2], 3).unwrap());
        let b = split_dataset(&items, [0.6, 0.2, 0.2], 4).unwrap();
        assert_ne!(a, b);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![30, 10, 10]);
        let mut all: Vec<u32> = a.concat();
        all.sort_unstable();
        assert_eq!(all, items);
    }
}
