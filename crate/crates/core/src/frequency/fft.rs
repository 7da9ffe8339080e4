//! Unnormalized 2D DFT kernels over row-major planes.
//!
//! One-dimensional transforms come from `rustfft`, which plans mixed-radix
//! factorizations and falls back to Bluestein/Rader for awkward lengths.
//! Plans are cached per thread.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub(crate) enum Direction {
    Forward,
    Inverse,
}

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, Direction), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, dir: Direction) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((len, dir))
            .or_insert_with(|| match dir {
                Direction::Forward => planner.plan_fft_forward(len),
                Direction::Inverse => planner.plan_fft_inverse(len),
            })
            .clone()
    })
}

/// In-place unnormalized 2D transform of an `h × w` row-major plane.
pub(crate) fn fft2_inplace(h: usize, w: usize, buf: &mut [Complex64], dir: Direction) {
    debug_assert_eq!(buf.len(), h * w);
    if w > 1 {
        let row_fft = plan(w, dir);
        let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
    }
    if h > 1 {
        let col_fft = plan(h, dir);
        let mut scratch = vec![Complex64::default(); col_fft.get_inplace_scratch_len()];
        let mut column = vec![Complex64::default(); h];
        for v in 0..w {
            for u in 0..h {
                column[u] = buf[u * w + v];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for u in 0..h {
                buf[u * w + v] = column[u];
            }
        }
    }
}

/// Full unnormalized forward transform of a real plane.
pub(crate) fn fft2_real(h: usize, w: usize, plane: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = plane.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft2_inplace(h, w, &mut buf, Direction::Forward);
    buf
}

/// Unnormalized inverse transform (`Σ X e^{+iθ}`), returning the full complex plane.
pub(crate) fn ifft2_unnormalized(h: usize, w: usize, spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    fft2_inplace(h, w, &mut buf, Direction::Inverse);
    buf
}

/// Number of rows kept by the half (conjugate-reduced) layout.
pub fn half_rows(h: usize) -> usize {
    h / 2 + 1
}

/// Whether half-layout row `u` has a distinct conjugate mirror row `h - u`.
pub(crate) fn has_mirror_row(h: usize, u: usize) -> bool {
    u >= 1 && u < h && h - u >= half_rows(h)
}

/// Rebuilds the full `h × w` spectrum from its first `⌊h/2⌋+1` rows using
/// `X(u,v) = conj(X(h-u, -v mod w))`.
pub(crate) fn expand_half(h: usize, w: usize, half: &[Complex64]) -> Vec<Complex64> {
    let hh = half_rows(h);
    debug_assert_eq!(half.len(), hh * w);
    let mut full = vec![Complex64::default(); h * w];
    full[..hh.min(h) * w].copy_from_slice(&half[..hh.min(h) * w]);
    for u in hh..h {
        let src_u = h - u;
        for v in 0..w {
            let src_v = (w - v) % w;
            full[u * w + v] = half[src_u * w + src_v].conj();
        }
    }
    full
}
