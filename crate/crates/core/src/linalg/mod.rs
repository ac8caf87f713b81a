//! Minimal dense linear algebra: column-major matrices, Gram and Hadamard
//! products, and a Jacobi eigensolver for symmetric matrices.

mod eig;
mod mat;
pub mod memtrack;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, Range, SubAssign};

use num_traits::Float;
use rayon::prelude::*;

pub use eig::sym_eigvals;
pub use mat::Mat;

use crate::{Error, Result};

/// Floating-point element type: `f64` everywhere, `f32` for benchmarks.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Row block height for the Gram kernels; one block of every column fits in cache.
const ROW_BLOCK: usize = 256;

#[inline]
pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [T::zero(); 4];
    let xs = x.chunks_exact(4);
    let ys = y.chunks_exact(4);
    let (xr, yr) = (xs.remainder(), ys.remainder());
    for (a, b) in xs.zip(ys) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut tail = T::zero();
    for (&a, &b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Register tile of the packed kernel: `MR` output rows by `NR` columns.
const MR: usize = 8;
const NR: usize = 4;

/// Copies rows `rows` of `a` into a row-major panel `rows.len() × a.cols()`.
fn pack<T: Real>(a: &Mat<T>, rows: Range<usize>, panel: &mut Vec<T>) {
    let m = a.cols();
    panel.clear();
    panel.resize(rows.len() * m, T::zero());
    for i in 0..m {
        for (k, &v) in a.col(i)[rows.clone()].iter().enumerate() {
            panel[k * m + i] = v;
        }
    }
}

/// `acc[jj][ii] = Σ_k pa[k, i0+ii] · pb[k, j0+jj]` over a full `MR × NR` tile.
#[inline(always)]
fn tile<T: Real, const FUSED: bool>(pa: &[T], m: usize, i0: usize, pb: &[T], n: usize, j0: usize, kc: usize) -> [[T; MR]; NR] {
    let mut acc = [[T::zero(); MR]; NR];
    for k in 0..kc {
        let a: &[T; MR] = pa[k * m + i0..k * m + i0 + MR].try_into().unwrap();
        let b: &[T; NR] = pb[k * n + j0..k * n + j0 + NR].try_into().unwrap();
        for jj in 0..NR {
            for ii in 0..MR {
                acc[jj][ii] = if FUSED {
                    a[ii].mul_add(b[jj], acc[jj][ii])
                } else {
                    acc[jj][ii] + a[ii] * b[jj]
                };
            }
        }
    }
    acc
}

/// Accumulates one `NR`-column strip of the output from packed panels.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn strip<T: Real, const FUSED: bool>(cols: &mut [T], pa: &[T], m: usize, pb: &[T], n: usize, j0: usize, kc: usize, last: usize) {
    let nr = cols.len() / m;
    let mut i0 = 0;
    if nr == NR {
        while i0 + MR <= last {
            let acc = tile::<T, FUSED>(pa, m, i0, pb, n, j0, kc);
            for (jj, col) in cols.chunks_exact_mut(m).enumerate() {
                for ii in 0..MR {
                    col[i0 + ii] += acc[jj][ii];
                }
            }
            i0 += MR;
        }
    }
    for (jj, col) in cols.chunks_exact_mut(m).enumerate() {
        for (i, out_ij) in col.iter_mut().enumerate().take(last).skip(i0) {
            let mut s = T::zero();
            for k in 0..kc {
                s += pa[k * m + i] * pb[k * n + j0 + jj];
            }
            *out_ij += s;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn strip_avx2<T: Real>(cols: &mut [T], pa: &[T], m: usize, pb: &[T], n: usize, j0: usize, kc: usize, last: usize) {
    strip::<T, true>(cols, pa, m, pb, n, j0, kc, last)
}

fn has_avx2_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        static DETECTED: std::sync::OnceLock<bool> = std::sync::OnceLock::new();
        *DETECTED.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
    }
    #[cfg(not(target_arch = "x86_64"))]
    false
}

/// `out[i, j] += Σ_{k ∈ rows} a[k, i] · b[k, j]` for every output column.
///
/// Rows are processed in blocks that are packed row-major and multiplied in
/// register tiles, with fused multiply-adds where the CPU has them. With
/// `upper_only`, tiles wholly below the diagonal are
/// skipped (entries below it may still be written). Each entry is summed in a
/// fixed order independent of the thread count.
fn accumulate_at_b<T: Real>(out: &mut Mat<T>, a: &Mat<T>, b: Option<&Mat<T>>, rows: Range<usize>, upper_only: bool) {
    let m = a.cols();
    let n = b.map_or(m, Mat::cols);
    let (mut pa, mut pb) = (Vec::new(), Vec::new());
    let fused = has_avx2_fma();
    let mut start = rows.start;
    while start < rows.end {
        let end = (start + ROW_BLOCK).min(rows.end);
        let kc = end - start;
        pack(a, start..end, &mut pa);
        let pb: &[T] = match b {
            Some(b) => {
                pack(b, start..end, &mut pb);
                &pb
            }
            None => &pa,
        };
        let pa: &[T] = &pa;
        out.data_mut().par_chunks_mut(m * NR).enumerate().for_each(|(t, cols)| {
            let j0 = t * NR;
            let last = if upper_only { (j0 + cols.len() / m).min(m) } else { m };
            if fused {
                #[cfg(target_arch = "x86_64")]
                // SAFETY: `fused` is only set when the CPU reports AVX2 and FMA.
                unsafe {
                    strip_avx2(cols, pa, m, pb, n, j0, kc, last)
                }
            } else {
                strip::<T, false>(cols, pa, m, pb, n, j0, kc, last)
            }
        });
        start = end;
    }
}

fn mirror_upper<T: Real>(g: &mut Mat<T>) {
    let n = g.cols();
    for j in 0..n {
        for i in 0..j {
            let v = g.get(i, j);
            g.set(j, i, v);
        }
    }
}

/// `aᵀa`, exactly symmetric as stored.
pub fn gram<T: Real>(a: &Mat<T>) -> Mat<T> {
    gram_rows(a, 0..a.rows())
}

/// Gram matrix of the row block `rows` of `a`: `a[rows, :]ᵀ a[rows, :]`.
pub fn gram_rows<T: Real>(a: &Mat<T>, rows: Range<usize>) -> Mat<T> {
    assert!(rows.start < rows.end && rows.end <= a.rows(), "row range out of bounds");
    let n = a.cols();
    let mut g = Mat::zeros(n, n);
    accumulate_at_b(&mut g, a, None, rows, true);
    mirror_upper(&mut g);
    g
}

/// `aᵀb` for `a: p×m`, `b: p×n`.
pub fn mul_at_b<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>> {
    if a.rows() != b.rows() {
        return Err(Error::shape(format!(
            "aᵀb with a {}x{} and b {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = Mat::zeros(a.cols(), b.cols());
    accumulate_at_b(&mut out, a, Some(b), 0..a.rows(), false);
    Ok(out)
}

/// `a·b` for `a: m×k`, `b: k×n`.
pub fn mul<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>> {
    if a.cols() != b.rows() {
        return Err(Error::shape(format!(
            "ab with a {}x{} and b {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let m = a.rows();
    let mut out = Mat::zeros(m, b.cols());
    out.data_mut().par_chunks_mut(m).enumerate().for_each(|(j, out_col)| {
        for (k, &bkj) in b.col(j).iter().enumerate() {
            if bkj != T::zero() {
                for (o, &aik) in out_col.iter_mut().zip(a.col(k)) {
                    *o += aik * bkj;
                }
            }
        }
    });
    Ok(out)
}

/// `a·bᵀ` for `a: m×k`, `b: n×k`.
pub fn mul_a_bt<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>> {
    if a.cols() != b.cols() {
        return Err(Error::shape(format!(
            "abᵀ with a {}x{} and b {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let m = a.rows();
    let mut out = Mat::zeros(m, b.rows());
    out.data_mut().par_chunks_mut(m).enumerate().for_each(|(j, out_col)| {
        for k in 0..a.cols() {
            let bjk = b.get(j, k);
            if bjk != T::zero() {
                for (o, &aik) in out_col.iter_mut().zip(a.col(k)) {
                    *o += aik * bjk;
                }
            }
        }
    });
    Ok(out)
}

/// Elementwise product.
pub fn hadamard<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "hadamard of {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Mat::from_col_major(a.rows(), a.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = SeededRng::new(seed);
        Mat::from_fn(rows, cols, |_, _| rng.normal())
    }

    fn naive_gram(a: &Mat) -> Mat {
        Mat::from_fn(a.cols(), a.cols(), |i, j| {
            let mut s = 0.0;
            for k in 0..a.rows() {
                s += a.get(k, i) * a.get(k, j);
            }
            s
        })
    }

    #[test]
    fn gram_of_identity() {
        assert_eq!(gram(&Mat::<f64>::identity(2)), Mat::identity(2));
    }

    #[test]
    fn gram_of_column() {
        let a = Mat::from_rows(&[[1.0], [2.0]]).unwrap();
        assert_eq!(gram(&a).data(), &[5.0]);
    }

    #[test]
    fn gram_matches_triple_loop() {
        let a = random(7, 4, 11);
        let g = gram(&a);
        let r = naive_gram(&a);
        for (x, y) in g.data().iter().zip(r.data()) {
            assert!((x - y).abs() <= 1e-14, "{x} vs {y}");
        }
        assert!(g.is_exactly_symmetric());
    }

    #[test]
    fn gram_spanning_several_row_blocks() {
        let a = random(3 * ROW_BLOCK + 17, 9, 5);
        let g = gram(&a);
        let r = naive_gram(&a);
        assert!(g.rel_diff(&r).unwrap() < 1e-13);
        assert!(g.is_exactly_symmetric());
    }

    proptest::proptest! {
        #[test]
        fn tiled_products_match_triple_loop(p in 1usize..300, m in 1usize..14, n in 1usize..14, seed in 0u64..1000) {
            let a = random(p, m, seed);
            let b = random(p, n, seed + 1);
            let g = gram(&a);
            proptest::prop_assert!(g.rel_diff(&naive_gram(&a)).unwrap() < 1e-13);
            proptest::prop_assert!(g.is_exactly_symmetric());
            let c = mul_at_b(&a, &b).unwrap();
            let r = Mat::from_fn(m, n, |i, j| (0..p).map(|k| a.get(k, i) * b.get(k, j)).sum());
            proptest::prop_assert!(c.rel_diff(&r).unwrap() < 1e-13);
        }
    }

    #[test]
    fn gram_rows_is_block_gram() {
        let a = random(10, 5, 2);
        let block = a.slice(3..8, 0..5);
        assert!(gram_rows(&a, 3..8).rel_diff(&naive_gram(&block)).unwrap() < 1e-15);
    }

    #[test]
    fn products_agree_with_transposes() {
        let a = random(6, 3, 1);
        let b = random(6, 4, 2);
        let atb = mul_at_b(&a, &b).unwrap();
        let via_mul = mul(&a.transpose(), &b).unwrap();
        assert!(atb.rel_diff(&via_mul).unwrap() < 1e-15);
        let abt = mul_a_bt(&a.transpose(), &b.transpose()).unwrap();
        assert!(abt.rel_diff(&atb).unwrap() < 1e-15);
        assert!(mul(&a, &b).is_err());
    }

    #[test]
    fn hadamard_cases() {
        let a = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Mat::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap();
        let expect = Mat::from_rows(&[[2.0, 0.0], [0.0, 8.0]]).unwrap();
        assert_eq!(hadamard(&a, &b).unwrap(), expect);
        assert_eq!(hadamard(&a, &Mat::ones(2, 2)).unwrap(), a);
        assert_eq!(hadamard(&a, &Mat::zeros(2, 2)).unwrap(), Mat::zeros(2, 2));
        assert!(matches!(
            hadamard(&a, &Mat::ones(2, 3)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn hadamard_commutes_and_associates() {
        let a = random(4, 3, 7);
        let b = random(4, 3, 8);
        let c = random(4, 3, 9);
        assert_eq!(hadamard(&a, &b).unwrap(), hadamard(&b, &a).unwrap());
        let left = hadamard(&hadamard(&a, &b).unwrap(), &c).unwrap();
        let right = hadamard(&a, &hadamard(&b, &c).unwrap()).unwrap();
        assert!(left.rel_diff(&right).unwrap() < 1e-15);
    }

    #[test]
    fn transposed_gram_duality() {
        let j = random(5, 3, 21);
        let mut small = sym_eigvals(&gram(&j), 1e-12).unwrap();
        let outer = mul_a_bt(&j, &j).unwrap();
        let big = sym_eigvals(&outer, 1e-12).unwrap();
        small.truncate(3);
        for (s, b) in small.iter().zip(&big) {
            assert!((s - b).abs() <= 1e-9 * s.abs(), "{s} vs {b}");
        }
        for b in &big[3..] {
            assert!(b.abs() < 1e-12 * big[0]);
        }
    }

    #[test]
    fn memory_is_tracked_per_matrix() {
        // Other tests allocate concurrently, so only check the peak moves.
        let scope = memtrack::PeakScope::start();
        let m = Mat::<f64>::zeros(1000, 100);
        assert!(scope.peak_delta() >= 800_000);
        drop(m);
    }
}
