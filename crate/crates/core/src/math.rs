/// Harmonic number `H_k = 1 + 1/2 + ... + 1/k`.
///
/// `H_s / mu` is the expected maximum of `s` independent exponential
/// service times with rate `mu`.
pub fn harmonic(k: usize) -> f64 {
    (1..=k).map(|i| 1.0 / i as f64).sum()
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub(crate) fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}
