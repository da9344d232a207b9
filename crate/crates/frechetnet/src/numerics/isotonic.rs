//! Pool-adjacent-violators: the L2 projection onto nondecreasing vectors.

use ndarray::{Array1, ArrayView1};

use crate::{Error, Result};

/// Projects `values` onto the cone of nondecreasing vectors in the least
/// squares sense (unit weights). The output is nondecreasing and the
/// projection is idempotent.
pub fn pava_isotonic(values: &ArrayView1<f64>) -> Result<Array1<f64>> {
    if values.is_empty() {
        return Err(Error::Parameter("pava_isotonic: empty input".into()));
    }
    let mut out = values.to_owned();
    pava_in_place(out.as_slice_mut().expect("contiguous"));
    Ok(out)
}

/// In-place variant used by the hot projection path.
pub(crate) fn pava_in_place(values: &mut [f64]) {
    let n = values.len();
    if n <= 1 {
        return;
    }
    // Blocks of pooled entries as (sum, count); means compared by
    // cross-multiplication to avoid division noise.
    let mut sums: Vec<f64> = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    for &v in values.iter() {
        sums.push(v);
        counts.push(1);
        while sums.len() >= 2 {
            let last = sums.len() - 1;
            let (s_prev, c_prev) = (sums[last - 1], counts[last - 1]);
            let (s_cur, c_cur) = (sums[last], counts[last]);
            if s_prev * c_cur as f64 > s_cur * c_prev as f64 {
                sums[last - 1] = s_prev + s_cur;
                counts[last - 1] = c_prev + c_cur;
                sums.pop();
                counts.pop();
            } else {
                break;
            }
        }
    }
    let mut pos = 0;
    for (s, c) in sums.iter().zip(counts.iter()) {
        let mean = s / *c as f64;
        for slot in values[pos..pos + c].iter_mut() {
            *slot = mean;
        }
        pos += c;
    }
    // Division rounding can leave an ulp-level inversion between blocks;
    // sweep once so the output is nondecreasing exactly.
    for i in 1..n {
        if values[i] < values[i - 1] {
            values[i] = values[i - 1];
        }
    }
}
