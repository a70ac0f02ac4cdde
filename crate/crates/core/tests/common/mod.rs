//! Loop-based oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use fusion_policy::corpus::{Dialogue, DialogueAct, Speaker, Split, Turn};
use fusion_policy::model::MhaParams;
use fusion_policy::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_mha(dim: usize, rng: &mut ChaCha8Rng) -> MhaParams<f64> {
    let s = 1.0 / (dim as f64).sqrt();
    let mut m = || Tensor::new(vec![dim, dim], uniform(dim * dim, s, rng)).unwrap();
    let (w_q, w_k, w_v, w_o) = (m(), m(), m(), m());
    let mut b = || Tensor::vector(uniform(dim, 0.5, rng)).unwrap();
    MhaParams {
        w_q,
        b_q: b(),
        w_k,
        b_k: b(),
        w_v,
        b_v: b(),
        w_o,
        b_o: b(),
    }
}

/// Random mask with at least one valid position.
pub fn random_mask(t: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut m: Vec<bool> = (0..t).map(|_| rng.random_bool(0.7)).collect();
    let keep = rng.random_range(0..t);
    m[keep] = true;
    m
}

/// Multi-head self-attention written as explicit loops: per-head scaled dot
/// products over valid keys, heads concatenated, then the output projection.
pub fn naive_mha(x: &[f64], t: usize, d: usize, mask: &[bool], p: &MhaParams<f64>, heads: usize) -> Vec<f64> {
    let hd = d / heads;
    let proj = |w: &Tensor<f64>, b: &Tensor<f64>, input: &[f64]| {
        let mut out = vec![0.0; t * d];
        for i in 0..t {
            for j in 0..d {
                let mut s = b.data()[j];
                for k in 0..d {
                    s += input[i * d + k] * w.data()[k * d + j];
                }
                out[i * d + j] = s;
            }
        }
        out
    };
    let (q, k, v) = (
        proj(&p.w_q, &p.b_q, x),
        proj(&p.w_k, &p.b_k, x),
        proj(&p.w_v, &p.b_v, x),
    );
    let mut concat = vec![0.0; t * d];
    for h in 0..heads {
        for i in 0..t {
            let mut scores = vec![0.0; t];
            let mut max = f64::NEG_INFINITY;
            for j in 0..t {
                if !mask[j] {
                    continue;
                }
                let mut s = 0.0;
                for c in h * hd..(h + 1) * hd {
                    s += q[i * d + c] * k[j * d + c];
                }
                scores[j] = s / (hd as f64).sqrt();
                max = max.max(scores[j]);
            }
            let mut z = 0.0;
            for j in 0..t {
                scores[j] = if mask[j] { (scores[j] - max).exp() } else { 0.0 };
                z += scores[j];
            }
            for c in h * hd..(h + 1) * hd {
                concat[i * d + c] = (0..t).map(|j| scores[j] / z * v[j * d + c]).sum();
            }
        }
    }
    proj(&p.w_o, &p.b_o, &concat)
}

/// `softmax(x·q / √D)` over valid rows, then the weighted sum of rows.
pub fn naive_pool(x: &[f64], t: usize, d: usize, mask: &[bool], q: &[f64]) -> Vec<f64> {
    let scores: Vec<f64> = (0..t)
        .map(|i| (0..d).map(|c| x[i * d + c] * q[c]).sum::<f64>() / (d as f64).sqrt())
        .collect();
    let max = (0..t)
        .filter(|&i| mask[i])
        .map(|i| scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = (0..t)
        .map(|i| if mask[i] { (scores[i] - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = w.iter().sum();
    (0..d).map(|c| (0..t).map(|i| w[i] / z * x[i * d + c]).sum()).collect()
}

fn turn(index: usize, speaker: Speaker, text: &str, acts: &[&str]) -> Turn {
    let acts = acts
        .iter()
        .map(|s| match s.split_once('(') {
            Some((t, slot)) => DialogueAct::new(t, Some(slot.trim_end_matches(')'))),
            None => DialogueAct::new(*s, None),
        })
        .collect();
    Turn {
        index,
        speaker,
        transcript: text.into(),
        asr_transcript: None,
        acts,
        system_markers: vec![],
        speech_ref: None,
    }
}

/// Five dialogues holding three user requests, and predictions answering two.
pub fn urs_fixture() -> (Vec<Dialogue>, HashMap<(String, usize), String>) {
    use Speaker::{System, User};
    let d = |id: &str, turns| Dialogue {
        id: id.into(),
        split: Split::Test,
        turns,
    };
    let dialogues = vec![
        d(
            "d1",
            vec![
                turn(0, System, "hello", &["welcomemsg"]),
                turn(1, User, "phone please", &["request(phone)"]),
                turn(2, System, "it is 123", &["inform(phone)"]),
            ],
        ),
        d(
            "d2",
            vec![
                turn(0, System, "hello", &["welcomemsg"]),
                turn(1, User, "cheap thai", &["inform(food)", "inform(pricerange)"]),
                turn(2, System, "which area", &["request(area)"]),
            ],
        ),
        d(
            "d3",
            vec![
                turn(0, System, "hello", &["welcomemsg"]),
                turn(1, User, "address and postcode", &["request(addr)", "request(postcode)"]),
                turn(2, System, "at 1 main st", &["inform(addr)", "offer(name)"]),
            ],
        ),
        d(
            "d4",
            vec![
                turn(0, System, "hello", &["welcomemsg"]),
                turn(1, User, "bye", &["bye"]),
                turn(2, System, "bye", &["bye"]),
            ],
        ),
        d("d5", vec![turn(0, System, "hello", &["welcomemsg"])]),
    ];
    let predictions = [
        ("d1", 2, "inform(phone)"),
        ("d2", 2, "request(area)"),
        ("d3", 2, "inform(addr)+offer(name)"),
        ("d4", 2, "bye"),
    ]
    .into_iter()
    .map(|(d, t, l)| ((d.to_string(), t), l.to_string()))
    .collect();
    (dialogues, predictions)
}

/// Counts requests and answers by scanning raw acts and splitting labels.
pub fn urs_brute_force(dialogues: &[Dialogue], predictions: &HashMap<(String, usize), String>) -> (usize, usize) {
    let (mut total, mut answered) = (0, 0);
    for d in dialogues {
        for w in d.turns.windows(2) {
            let Some(pred) = predictions.get(&(d.id.clone(), w[1].index)) else {
                continue;
            };
            for a in w[0].acts.iter().filter(|a| a.act_type == "request") {
                let slot = a.slot.as_deref().unwrap();
                total += 1;
                let parts: Vec<&str> = pred.split('+').collect();
                if parts.contains(&format!("inform({slot})").as_str())
                    || parts.contains(&format!("offer({slot})").as_str())
                {
                    answered += 1;
                }
            }
        }
    }
    (total, answered)
}
