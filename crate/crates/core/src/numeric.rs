//! Order-independent floating point summation.
//!
//! Message passing and sum pooling go through [`exact_sum`], which returns the
//! correctly rounded sum of its inputs. The result does not depend on the order
//! of the terms, so node permutations leave embeddings bit-identical, and a
//! multiset summed twice over is exactly double the single sum.

/// Correctly rounded sum of `values` (Shewchuk's algorithm with a final
/// half-way correction, as in CPython's `math.fsum`).
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    // Round-half-even correction when the remaining partials share a sign with lo.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_cancellation() {
        assert_eq!(exact_sum([1e16, 1.0, -1e16]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
    }

    proptest! {
        #[test]
        fn order_independent(mut v in prop::collection::vec(-1e6f64..1e6, 0..40), seed in 0u64..1000) {
            let a = exact_sum(v.iter().copied());
            // deterministic shuffle
            let n = v.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                v.swap(i, j);
            }
            let b = exact_sum(v.iter().copied());
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn doubling_is_exact(v in prop::collection::vec(-1e3f64..1e3, 1..30)) {
            let single = exact_sum(v.iter().copied());
            let double = exact_sum(v.iter().chain(v.iter()).copied());
            prop_assert_eq!((2.0 * single).to_bits(), double.to_bits());
        }
    }
}
