//! Straight-line reference implementations on plain row-major matrices,
//! one sample at a time. They read weights from a `ModelParams` by path but
//! share no code with the graph engine.
#![allow(clippy::needless_range_loop)]

use ken_core::params::ModelParams;
use ken_core::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn row_vec(v: &[f64]) -> Self {
        Self::new(1, v.len(), v.to_vec())
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Sample `b` of a `[B, rows, cols]` or `[B, cols]` tensor.
    pub fn sample(t: &Tensor, b: usize) -> Self {
        let s = t.shape();
        let (rows, cols) = if s.len() == 3 { (s[1], s[2]) } else { (1, s[1]) };
        let n = rows * cols;
        Self::new(rows, cols, t.data()[b * n..(b + 1) * n].to_vec())
    }

    pub fn from_param(t: &Tensor) -> Self {
        match t.shape() {
            [r, c] => Self::new(*r, *c, t.data().to_vec()),
            [c] => Self::new(1, *c, t.data().to_vec()),
            s => panic!("unexpected parameter shape {s:?}"),
        }
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.at(i, k) * other.at(k, j);
                }
                out[i * other.cols + j] = acc;
            }
        }
        Mat::new(self.rows, other.cols, out)
    }

    pub fn transpose(&self) -> Mat {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.at(i, j);
            }
        }
        Mat::new(self.cols, self.rows, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat::new(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat::new(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn add_row(&self, bias: &[f64]) -> Mat {
        assert_eq!(bias.len(), self.cols);
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] += bias[j];
            }
        }
        out
    }

    pub fn cols_range(&self, start: usize, len: usize) -> Mat {
        let mut out = Vec::with_capacity(self.rows * len);
        for i in 0..self.rows {
            out.extend_from_slice(&self.row(i)[start..start + len]);
        }
        Mat::new(self.rows, len, out)
    }

    pub fn hcat(parts: &[&Mat]) -> Mat {
        let rows = parts[0].rows;
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                assert_eq!(p.rows, rows);
                out.extend_from_slice(p.row(i));
            }
        }
        Mat::new(rows, cols, out)
    }

    pub fn mean_rows(&self) -> Mat {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self.at(i, j);
            }
        }
        Mat::new(1, self.cols, out.into_iter().map(|v| v / self.rows as f64).collect())
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax_rows(m: &Mat) -> Mat {
    let mut out = Vec::with_capacity(m.data.len());
    for i in 0..m.rows {
        let r = m.row(i);
        let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = r.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    Mat::new(m.rows, m.cols, out)
}

fn p<'a>(params: &'a ModelParams, path: &str) -> &'a Tensor {
    params.get(path).unwrap_or_else(|_| panic!("missing {path}"))
}

pub fn linear(params: &ModelParams, prefix: &str, x: &Mat) -> Mat {
    let w = Mat::from_param(p(params, &format!("{prefix}.w")));
    let y = x.matmul(&w);
    match params.get(&format!("{prefix}.b")) {
        Ok(b) => y.add_row(b.data()),
        Err(_) => y,
    }
}

pub fn ffn(params: &ModelParams, prefix: &str, x: &Mat) -> Mat {
    let h = linear(params, &format!("{prefix}.fc1"), x).map(gelu);
    linear(params, &format!("{prefix}.fc2"), &h)
}

pub fn layer_norm(params: &ModelParams, prefix: &str, x: &Mat) -> Mat {
    let g = p(params, &format!("{prefix}.gain")).data();
    let b = p(params, &format!("{prefix}.bias")).data();
    let mut out = Vec::with_capacity(x.data.len());
    for i in 0..x.rows {
        let r = x.row(i);
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        out.extend(r.iter().enumerate().map(|(j, v)| (v - mean) * inv * g[j] + b[j]));
    }
    Mat::new(x.rows, x.cols, out)
}

/// Returns the output and the per-head attention matrices.
pub fn attention(params: &ModelParams, prefix: &str, q: &Mat, kv: &Mat, heads: usize) -> (Mat, Vec<Mat>) {
    let qp = linear(params, &format!("{prefix}.w_q"), q);
    let kp = linear(params, &format!("{prefix}.w_k"), kv);
    let vp = linear(params, &format!("{prefix}.w_v"), kv);
    let dh = qp.cols / heads;
    let mut outs = Vec::new();
    let mut probs = Vec::new();
    for h in 0..heads {
        let (qh, kh, vh) = (qp.cols_range(h * dh, dh), kp.cols_range(h * dh, dh), vp.cols_range(h * dh, dh));
        let scores = qh.matmul(&kh.transpose()).scale(1.0 / (dh as f64).sqrt());
        let a = softmax_rows(&scores);
        outs.push(a.matmul(&vh));
        probs.push(a);
    }
    let refs: Vec<&Mat> = outs.iter().collect();
    (linear(params, &format!("{prefix}.w_o"), &Mat::hcat(&refs)), probs)
}

pub fn encoder(params: &ModelParams, prefix: &str, q: &Mat, kv: &Mat, heads: usize) -> Mat {
    let (att, _) = attention(params, &format!("{prefix}.attn"), q, kv, heads);
    let h1 = layer_norm(params, &format!("{prefix}.norm1"), &q.zip(&att, |a, b| a + b));
    let ff = ffn(params, &format!("{prefix}.ffn"), &h1);
    layer_norm(params, &format!("{prefix}.norm2"), &h1.zip(&ff, |a, b| a + b))
}

pub fn block(params: &ModelParams, prefix: &str, a: &Mat, b: &Mat, heads: usize, depth: usize) -> (Mat, Mat) {
    let (mut a, mut b) = (a.clone(), b.clone());
    for l in 0..depth {
        let na = encoder(params, &format!("{prefix}.a{l}"), &a, &b, heads);
        let nb = encoder(params, &format!("{prefix}.b{l}"), &b, &a, heads);
        a = na;
        b = nb;
    }
    (a, b)
}

pub fn perspective(params: &ModelParams, sigma: &str, a: &Mat, b: &Mat) -> Mat {
    ffn(params, sigma, &Mat::hcat(&[&a.mean_rows(), &b.mean_rows()]))
}

pub fn cosine_gate(t: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = t.iter().zip(v).map(|(a, b)| a * b).sum();
    let nt: f64 = t.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (dot / (nt * nv)).clamp(0.0, 1.0)
}

pub fn fuse(params: &ModelParams, s1: &Mat, s2: &Mat, s3: &Mat, theta: f64) -> Mat {
    ffn(params, "ka.fuse", &Mat::hcat(&[s1, s2, s3])).scale(theta)
}

/// Hidden state at every position, in position order.
pub fn lstm(params: &ModelParams, prefix: &str, x: &Mat, reverse: bool) -> Mat {
    let wx = Mat::from_param(p(params, &format!("{prefix}.w_x.w")));
    let bx = p(params, &format!("{prefix}.w_x.b")).data();
    let wh = Mat::from_param(p(params, &format!("{prefix}.w_h.w")));
    let hd = wh.rows;
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut states = vec![vec![0.0; hd]; x.rows];
    let order: Vec<usize> = if reverse { (0..x.rows).rev().collect() } else { (0..x.rows).collect() };
    for t in order {
        let mut z = vec![0.0; 4 * hd];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut acc = bx[j];
            for k in 0..x.cols {
                acc += x.at(t, k) * wx.at(k, j);
            }
            for k in 0..hd {
                acc += h[k] * wh.at(k, j);
            }
            *zj = acc;
        }
        for k in 0..hd {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[hd + k]);
            let g = z[2 * hd + k].tanh();
            let o = sigmoid(z[3 * hd + k]);
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        states[t] = h.clone();
    }
    Mat::new(x.rows, hd, states.concat())
}

pub fn expert(params: &ModelParams, prefix: &str, seq: &Mat, heads: usize) -> Mat {
    let f = lstm(params, &format!("{prefix}.lstm_fwd"), seq, false);
    let b = lstm(params, &format!("{prefix}.lstm_bwd"), seq, true);
    let hb = Mat::hcat(&[&f, &b]);
    let (att, _) = attention(params, &format!("{prefix}.attn"), &hb, &hb, heads);
    ffn(params, &format!("{prefix}.ffn"), &att.mean_rows())
}

pub fn mean_of(vs: &[Mat]) -> Mat {
    let mut acc = vs[0].clone();
    for v in &vs[1..] {
        acc = acc.zip(v, |a, b| a + b);
    }
    acc.scale(1.0 / vs.len() as f64)
}

pub fn combine(params: &ModelParams, e_t: &Mat, e_v: &Mat, gamma: f64) -> Mat {
    ffn(params, "emo.combine", &Mat::hcat(&[&e_t.scale(gamma), &e_v.scale(1.0 - gamma)]))
}

pub fn processors(params: &ModelParams, m: &Mat, x: usize) -> Vec<Mat> {
    (0..x).map(|j| ffn(params, &format!("bl.proc.{j}"), m)).collect()
}

pub fn gate(params: &ModelParams, m_e: &Mat) -> Mat {
    softmax_rows(&linear(params, "bl.gate", m_e))
}

pub fn aggregate(a: &Mat, ms: &[Mat]) -> Mat {
    let mut acc = ms[0].scale(a.at(0, 0));
    for (j, m) in ms.iter().enumerate().skip(1) {
        acc = acc.zip(&m.scale(a.at(0, j)), |x, y| x + y);
    }
    acc
}

pub fn max_diff(a: &Mat, b: &[f64]) -> f64 {
    assert_eq!(a.data.len(), b.len());
    a.data.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
