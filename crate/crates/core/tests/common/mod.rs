//! Dense reference implementations and random fixtures shared by the
//! integration tests. Nothing here uses the tape.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsam::data::{ConversationSample, Utterance};
use tsam::tensor::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn from_mat(m: &Mat) -> Tensor<f64> {
    Tensor::from_rows(m).unwrap()
}

pub fn random_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| r.random_range(-scale..scale)).collect())
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k) = (a.len(), b.len());
    let n = if k == 0 { 0 } else { b[0].len() };
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// Row-wise softmax where `None` entries are masked out; a fully masked row
/// becomes all zeros.
pub fn masked_softmax(scores: &[Vec<Option<f64>>]) -> Mat {
    scores
        .iter()
        .map(|row| {
            let live: Vec<f64> = row.iter().flatten().copied().collect();
            if live.is_empty() {
                return vec![0.0; row.len()];
            }
            let max = live.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = live.iter().map(|x| (x - max).exp()).sum();
            row.iter().map(|x| x.map_or(0.0, |x| (x - max).exp() / z)).collect()
        })
        .collect()
}

pub fn softmax(scores: &Mat) -> Mat {
    let wrapped: Vec<Vec<Option<f64>>> = scores.iter().map(|r| r.iter().map(|&x| Some(x)).collect()).collect();
    masked_softmax(&wrapped)
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// One attention head over the emotion table, scaled by `1/sqrt(d_h)`.
pub fn ean_head(q: &Mat, table: &Mat, wq: &Mat, wk: &Mat, wv: &Mat, d_h: usize) -> (Mat, Mat) {
    let qp = matmul(q, wq);
    let kp = matmul(table, wk);
    let vp = matmul(table, wv);
    let scale = 1.0 / (d_h as f64).sqrt();
    let scores: Mat = qp
        .iter()
        .map(|qi| {
            kp.iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect()
        })
        .collect();
    let alpha = softmax(&scores);
    (matmul(&alpha, &vp), alpha)
}

/// Relational graph attention materialized densely with masking.
///
/// `relations` holds, per relation, the `d × d` weight, the `2d` scoring
/// vector and the edge predicate over `(i, j)`.
pub fn san_dense(h: &Mat, relations: &[(Mat, Vec<f64>, Box<dyn Fn(usize, usize) -> bool>)], slope: f64) -> Mat {
    let t = h.len();
    let d = h[0].len();
    let mut out = vec![vec![0.0; d]; t];
    for (w, a, edge) in relations {
        // z_j = W h_j
        let z: Mat = h
            .iter()
            .map(|hj| (0..d).map(|r| (0..d).map(|c| w[r][c] * hj[c]).sum()).collect())
            .collect();
        let scores: Vec<Vec<Option<f64>>> = (0..t)
            .map(|i| {
                (0..t)
                    .map(|j| {
                        if !edge(i, j) {
                            return None;
                        }
                        let mut s = 0.0;
                        for k in 0..d {
                            s += a[k] * z[i][k] + a[d + k] * z[j][k];
                        }
                        Some(if s >= 0.0 { s } else { slope * s })
                    })
                    .collect()
            })
            .collect();
        let alpha = masked_softmax(&scores);
        let msg = matmul(&alpha, &z);
        for i in 0..t {
            for k in 0..d {
                out[i][k] += msg[i][k];
            }
        }
    }
    out
}

/// `(He', Hs', A1, A2)` evaluated directly.
pub fn biaffine_dense(he: &Mat, hs: &Mat, w1: &Mat, w2: &Mat) -> (Mat, Mat, Mat, Mat) {
    let a1 = softmax(&matmul(&matmul(he, w1), &transpose(hs)));
    let a2 = softmax(&matmul(&matmul(hs, w2), &transpose(he)));
    (matmul(&a1, hs), matmul(&a2, he), a1, a2)
}

/// `sigmoid(W2 ReLU(W1 [e; s] + b1) + b2)` for every row.
pub fn head_dense(e: &Mat, s: &Mat, w1: &Mat, b1: &[f64], w2: &[f64], b2: f64) -> Vec<f64> {
    e.iter()
        .zip(s)
        .map(|(ei, si)| {
            let x: Vec<f64> = ei.iter().chain(si).copied().collect();
            let l: Vec<f64> = w1
                .iter()
                .zip(b1)
                .map(|(row, b)| (row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + b).max(0.0))
                .collect();
            let z: f64 = w2.iter().zip(&l).map(|(w, v)| w * v).sum::<f64>() + b2;
            1.0 / (1.0 + (-z).exp())
        })
        .collect()
}

pub fn utterance(index: usize, speaker: &str, emotion: &str, tokens: Vec<u32>) -> Utterance {
    Utterance {
        index,
        speaker: speaker.into(),
        emotion: emotion.into(),
        tokens,
        text: None,
    }
}

/// A structurally valid random sample over speakers `A`/`B`.
pub fn random_sample(r: &mut ChaCha8Rng, t: usize, vocab: usize, labels: &[&str]) -> ConversationSample {
    let non_neutral: Vec<&str> = labels.iter().copied().filter(|l| *l != "neutral").collect();
    let utterances = (0..t)
        .map(|i| {
            let speaker = if r.random_bool(0.5) { "A" } else { "B" };
            let emotion = if i + 1 == t {
                non_neutral[r.random_range(0..non_neutral.len())]
            } else {
                labels[r.random_range(0..labels.len())]
            };
            let n = r.random_range(1..=3);
            let tokens = (0..n).map(|_| r.random_range(0..vocab as u32)).collect();
            utterance(i + 1, speaker, emotion, tokens)
        })
        .collect();
    let mut cause_mask: Vec<bool> = (0..t).map(|_| r.random_bool(0.4)).collect();
    if !cause_mask.iter().any(|&c| c) {
        cause_mask[t - 1] = true;
    }
    ConversationSample {
        conversation_id: format!("rand-{t}"),
        utterances,
        cause_mask,
        cause_types: None,
    }
}
