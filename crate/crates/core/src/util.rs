//! Small numeric helpers shared across modules.

/// Smallest `s` with `s * s >= m` (the ceiling of the square root).
pub(crate) fn ceil_sqrt(m: u64) -> u64 {
    if m == 0 {
        return 0;
    }
    let mut s = (m as f64).sqrt() as u64;
    while s * s < m {
        s += 1;
    }
    while s > 1 && (s - 1) * (s - 1) >= m {
        s -= 1;
    }
    s
}

/// Binomial coefficient in u128 (panics on overflow, which desk-scale
/// parameters never reach).
pub(crate) fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128).expect("binomial overflow") / (i as u128 + 1);
    }
    acc
}
