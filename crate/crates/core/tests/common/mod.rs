//! Shared test support: independent oracles (symmetric Jacobi eigen solver,
//! extended-precision summation, Gram-Schmidt), seeded random inputs, and
//! synthetic scenario builders. Everything here is deliberately written
//! against the math, not against the crate's implementation paths.

#![allow(dead_code)]
// Oracles below are deliberately written as index loops over the math.
#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ulx_core::backends::SyntheticScenario;
use ulx_core::numerics::{Mat, Vector};
use ulx_core::rng::{Purpose, Stream};

pub const SCENARIO_SCHEMA: &str = "ulx-scenario/1";

/// 18 language codes matching a PolyMath-style suite.
pub const LANGS_18: [&str; 18] = [
    "ar", "bn", "de", "en", "es", "fr", "id", "it", "ja", "ko", "ms", "pt", "ru", "sw", "te",
    "th", "vi", "zh",
];

// ---------------------------------------------------------------------------
// Independent numeric oracles
// ---------------------------------------------------------------------------

/// Compensated (Kahan) summation for extended-precision re-summation oracles.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Brute-force symmetric eigendecomposition via classic two-sided Jacobi
/// rotations. Returns (eigenvalues descending, eigenvector columns), with
/// each eigenvector's largest-magnitude component made positive.
pub fn jacobi_symmetric_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "symmetric oracle needs a square matrix");
    let mut b: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _sweep in 0..200 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(b[p][q].abs());
            }
        }
        if off < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if b[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (b[q][q] - b[p][p]) / (2.0 * b[p][q]);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let bkp = b[k][p];
                    let bkq = b[k][q];
                    b[k][p] = c * bkp - s * bkq;
                    b[k][q] = s * bkp + c * bkq;
                }
                for k in 0..n {
                    let bpk = b[p][k];
                    let bqk = b[q][k];
                    b[p][k] = c * bpk - s * bqk;
                    b[q][k] = s * bpk + c * bqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| b[j][j].partial_cmp(&b[i][i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&j| b[j][j]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut arg = 0;
        let mut best = 0.0_f64;
        for i in 0..n {
            if v[i][src].abs() > best {
                best = v[i][src].abs();
                arg = i;
            }
        }
        let flip = if v[arg][src] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors.set(i, dst, flip * v[i][src]);
        }
    }
    (eigenvalues, vectors)
}

/// a * a^T as a dense matrix.
pub fn gram_aat(a: &Mat) -> Mat {
    let m = a.rows();
    let mut g = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let mut x = 0.0;
            for k in 0..a.cols() {
                x += a.get(i, k) * a.get(j, k);
            }
            g.set(i, j, x);
        }
    }
    g
}

/// Seeded random matrix with entries in [-1, 1].
pub fn random_matrix(rows: usize, cols: usize, stream: &mut Stream) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m.set(i, j, stream.next_f64() * 2.0 - 1.0);
        }
    }
    m
}

pub fn random_vector(len: usize, stream: &mut Stream) -> Vector {
    Vector::new((0..len).map(|_| stream.next_f64() * 2.0 - 1.0).collect()).unwrap()
}

pub fn test_stream(tag: u64) -> Stream {
    Stream::derive(0xACCE97, Purpose::Test, &[tag])
}

/// Independent Gram-Schmidt orthonormal basis (d x r) for projection tests.
pub fn gs_basis(dim: usize, rank: usize, stream: &mut Stream) -> Mat {
    let mut basis = Mat::zeros(dim, rank);
    let mut col = 0;
    while col < rank {
        let mut v: Vec<f64> = (0..dim).map(|_| stream.next_f64() * 2.0 - 1.0).collect();
        for _ in 0..2 {
            for p in 0..col {
                let pc: Vec<f64> = (0..dim).map(|i| basis.get(i, p)).collect();
                let proj: f64 = pc.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, p) in v.iter_mut().zip(&pc) {
                    *x -= proj * p;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        for (i, x) in v.iter().enumerate() {
            basis.set(i, col, x / norm);
        }
        col += 1;
    }
    basis
}

/// Max |entry| of (B^T B - I), an orthonormality defect measure.
pub fn orthonormality_defect(b: &Mat) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..b.cols() {
        for j in 0..b.cols() {
            let dot: f64 = b.col(i).iter().zip(b.col(j)).map(|(x, y)| x * y).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - want).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Scenario builders and fixtures
// ---------------------------------------------------------------------------

pub fn base_scenario(
    query_id: &str,
    languages: &[&str],
    drifting: &[&str],
    sigma_w: f64,
    max_len: usize,
    seed: u64,
) -> SyntheticScenario {
    SyntheticScenario {
        schema: SCENARIO_SCHEMA.to_string(),
        query_id: query_id.to_string(),
        dim: 32,
        layers: 24,
        languages: languages.iter().map(|s| s.to_string()).collect(),
        source_language: Some(languages[0].to_string()),
        drifting: drifting.iter().map(|s| s.to_string()).collect(),
        offset_rank: 4,
        offset_scale: 1.0,
        sigma_eps: 0.01,
        sigma_w,
        misaligned: BTreeMap::new(),
        true_answer: "42".to_string(),
        answers: BTreeMap::new(),
        max_len,
        val_samples: 24,
        seed,
    }
}

pub fn write_scenario(dir: &Path, scenario: &SyntheticScenario) -> PathBuf {
    let path = dir.join(format!("{}.json", scenario.query_id));
    std::fs::write(&path, serde_json::to_string_pretty(scenario).unwrap()).unwrap();
    path
}

#[derive(serde::Deserialize)]
pub struct SigmaWFixture {
    pub sigma_w: f64,
    pub seeds: u64,
    pub detection_rate: f64,
    pub pruning_recall: f64,
    pub sweep: Vec<SigmaWCell>,
}

#[derive(serde::Deserialize)]
pub struct SigmaWCell {
    pub sigma_w: f64,
    pub detection_rate: f64,
    pub pruning_recall: f64,
}

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/sigma_w_calibration.json")
}

/// The drift scale fixed by the documented pre-test calibration sweep.
pub fn calibrated_sigma_w() -> f64 {
    let text = std::fs::read_to_string(fixture_path()).expect(
        "fixtures/sigma_w_calibration.json missing; run the ignored calibration test to regenerate",
    );
    let fixture: SigmaWFixture = serde_json::from_str(&text).unwrap();
    fixture.sigma_w
}
