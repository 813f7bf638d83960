// Raw slice kernels shared by the graph forward and backward passes.

/// `out[p×r] += a[p×q] · b[q×r]`
pub(crate) fn mm_nn(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let row = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `out[p×r] += a[p×q] · b[r×q]ᵀ`
pub(crate) fn mm_nt(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        for j in 0..r {
            let brow = &b[j * q..(j + 1) * q];
            out[i * r + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[p×r] += a[q×p]ᵀ · b[q×r]`
pub(crate) fn mm_tn(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for k in 0..q {
        let brow = &b[k * r..(k + 1) * r];
        for i in 0..p {
            let aki = a[k * p + i];
            if aki == 0.0 {
                continue;
            }
            let row = &mut out[i * r..(i + 1) * r];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aki * bv;
            }
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `-log softmax(row)[label]`, keeping precision when the label dominates.
pub(crate) fn nll_row(row: &[f64], label: usize) -> f64 {
    let (argmax, max) = row
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != argmax)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    (max - row[label]) + rest.ln_1p()
}
