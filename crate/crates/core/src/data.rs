//! Libsvm text format and the synthetic ill-conditioned family.

use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{norm, orthonormalize_rows, Mat};
use crate::sparse_vec::SparseVec;

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: SparseVec,
    /// `+1` or `-1`.
    pub label: f64,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_label(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| parse_err(line, format!("bad label {tok:?}")))?;
    if v == 1.0 {
        Ok(1.0)
    } else if v == 0.0 || v == -1.0 {
        Ok(-1.0)
    } else {
        Err(parse_err(line, format!("label {tok:?} is not binary")))
    }
}

/// Parses `label idx:val ...` with 1-based indices. Blank lines and lines
/// holding only a comment give `None`. With `dim = None` the dimension is
/// one past the largest index on the line.
pub fn parse_libsvm_line(text: &str, line: usize, dim: Option<usize>) -> Result<Option<Example>> {
    let body = text.split('#').next().unwrap_or("");
    let mut toks = body.split_whitespace();
    let Some(first) = toks.next() else {
        return Ok(None);
    };
    let label = parse_label(first, line)?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for tok in toks {
        let (i, v) = tok.split_once(':').ok_or_else(|| parse_err(line, format!("expected idx:val, got {tok:?}")))?;
        let i: usize = i.parse().map_err(|_| parse_err(line, format!("bad index {i:?}")))?;
        if i == 0 {
            return Err(parse_err(line, "indices are 1-based"));
        }
        let v: f64 = v.parse().map_err(|_| parse_err(line, format!("bad value {v:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(line, format!("non-finite value {v}")));
        }
        if indices.last().is_some_and(|&last| last >= i - 1) {
            return Err(parse_err(line, format!("index {i} is not increasing")));
        }
        indices.push(i - 1);
        values.push(v);
    }
    let need = indices.last().map_or(0, |&i| i + 1);
    let dim = match dim {
        Some(d) if d < need => return Err(parse_err(line, format!("index {need} exceeds dimension {d}"))),
        Some(d) => d,
        None => need,
    };
    let features = SparseVec::new(dim, indices, values).map_err(|e| parse_err(line, e.to_string()))?;
    Ok(Some(Example { features, label }))
}

/// Canonical libsvm line for an example.
pub fn serialize(ex: &Example) -> String {
    let mut s = String::from(if ex.label > 0.0 { "+1" } else { "-1" });
    for (i, v) in ex.features.iter() {
        s.push_str(&format!(" {}:{}", i + 1, v));
    }
    s
}

/// Reads a whole libsvm stream. Every example gets the dimension `dim`,
/// or the largest index seen when `dim` is `None`.
pub fn read_libsvm<R: BufRead>(reader: R, dim: Option<usize>) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io { context: format!("reading line {}", n + 1), source })?;
        if let Some(ex) = parse_libsvm_line(&line, n + 1, dim)? {
            out.push(ex);
        }
    }
    if dim.is_none() {
        let d = out.iter().map(|e| e.features.dim()).max().unwrap_or(0);
        for ex in &mut out {
            let f = &ex.features;
            ex.features = SparseVec::new(d, f.indices().to_vec(), f.values().to_vec())?;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub t: usize,
    pub d: usize,
    pub kappa: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d <= 10 {
            return Err(Error::config(format!("synthetic dimension must exceed 10, got {}", self.d)));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(Error::config(format!("condition parameter must be at least 1, got {}", self.kappa)));
        }
        Ok(())
    }

    /// One for the first `d - 10` coordinates, then `1 + i (kappa - 1) / 10`.
    pub fn spectrum(&self) -> Vec<f64> {
        (0..self.d)
            .map(|j| {
                let i = (j + 10).saturating_sub(self.d);
                if j + 10 < self.d {
                    1.0
                } else {
                    1.0 + (i + 1) as f64 * (self.kappa - 1.0) / 10.0
                }
            })
            .collect()
    }
}

/// `X = Z diag(lambda)^{1/2} V^T` with Gaussian `Z`, random orthonormal
/// `V`, and labels `sign(theta^T x)` taken from the `kappa = 1` instance so
/// that they agree across the family for a fixed seed.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<Example>> {
    spec.validate()?;
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gauss = move || -> f64 { StandardNormal.sample(&mut rng) };

    let (_, v) = orthonormalize_rows(&Mat::from_fn(d, d, |_, _| gauss()));
    if v.rows() != d {
        return Err(Error::degenerate("random basis lost rank"));
    }
    let mut theta: Vec<f64> = (0..d).map(|_| gauss()).collect();
    let n = norm(&theta);
    theta.iter_mut().for_each(|t| *t /= n);
    // theta^T x for kappa = 1 is z^T (V^T theta).
    let vt_theta = v.mul_vec(&theta);
    let root: Vec<f64> = spec.spectrum().iter().map(|l| l.sqrt()).collect();

    let mut out = Vec::with_capacity(spec.t);
    let mut x = vec![0.0; d];
    for _ in 0..spec.t {
        let z: Vec<f64> = (0..d).map(|_| gauss()).collect();
        let score: f64 = z.iter().zip(&vt_theta).map(|(a, b)| a * b).sum();
        x.iter_mut().for_each(|v| *v = 0.0);
        for (j, zj) in z.iter().enumerate() {
            crate::linalg::axpy(zj * root[j], v.row(j), &mut x);
        }
        let label = if score >= 0.0 { 1.0 } else { -1.0 };
        out.push(Example { features: SparseVec::from_dense(&x), label });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eig_sym, SymMatrix};
    use proptest::prelude::*;

    #[test]
    fn parses_basic_line() {
        let ex = parse_libsvm_line("+1 1:0.5 3:2", 1, None).unwrap().unwrap();
        assert_eq!(ex.label, 1.0);
        assert_eq!(ex.features.indices(), &[0, 2]);
        assert_eq!(ex.features.values(), &[0.5, 2.0]);
    }

    #[test]
    fn zero_label_maps_to_negative() {
        let ex = parse_libsvm_line("0 2:1", 1, None).unwrap().unwrap();
        assert_eq!(ex.label, -1.0);
        assert_eq!(ex.features.indices(), &[1]);
    }

    #[test]
    fn rejects_nonincreasing() {
        match parse_libsvm_line("1 3:1 2:1", 7, None) {
            Err(Error::Parse { line: 7, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_tokens() {
        for bad in ["1 3", "1 x:1", "1 0:1", "1 2:abc", "5 1:1", "q"] {
            assert!(parse_libsvm_line(bad, 1, None).is_err(), "{bad}");
        }
        assert!(parse_libsvm_line("1 4:1", 1, Some(3)).is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        assert!(parse_libsvm_line("   ", 1, None).unwrap().is_none());
        assert!(parse_libsvm_line("# header", 1, None).unwrap().is_none());
        let ex = parse_libsvm_line("-1 1:1 # trailing", 1, None).unwrap().unwrap();
        assert_eq!(ex.features.nnz(), 1);
    }

    #[test]
    fn reader_unifies_dimension() {
        let text = "1 1:1\n\n0 5:2\n";
        let exs = read_libsvm(text.as_bytes(), None).unwrap();
        assert_eq!(exs.len(), 2);
        assert!(exs.iter().all(|e| e.features.dim() == 5));
        match read_libsvm("1 1:1\n1 2:x\n".as_bytes(), None) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn serialize_round_trips(
            label in prop::bool::ANY,
            entries in prop::collection::btree_map(0usize..50, -1e6f64..1e6, 0..10),
        ) {
            let (idx, vals): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
            let ex = Example {
                features: SparseVec::new(50, idx, vals).unwrap(),
                label: if label { 1.0 } else { -1.0 },
            };
            let line = serialize(&ex);
            let back = parse_libsvm_line(&line, 1, Some(50)).unwrap().unwrap();
            prop_assert_eq!(&back, &ex);
            prop_assert_eq!(serialize(&back), line);
        }
    }

    #[test]
    fn spectrum_shape() {
        let s = SyntheticSpec { t: 1, d: 12, kappa: 21.0, seed: 0 }.spectrum();
        assert_eq!(&s[..2], &[1.0, 1.0]);
        assert!((s[2] - 3.0).abs() < 1e-12);
        assert!((s[11] - 21.0).abs() < 1e-12);
        let flat = SyntheticSpec { t: 1, d: 12, kappa: 1.0, seed: 0 }.spectrum();
        assert!(flat.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(gen_synthetic(&SyntheticSpec { t: 5, d: 10, kappa: 2.0, seed: 0 }).is_err());
        assert!(gen_synthetic(&SyntheticSpec { t: 5, d: 20, kappa: 0.5, seed: 0 }).is_err());
    }

    #[test]
    fn deterministic_and_labels_shared_across_kappa() {
        let a = gen_synthetic(&SyntheticSpec { t: 300, d: 20, kappa: 5.0, seed: 9 }).unwrap();
        let b = gen_synthetic(&SyntheticSpec { t: 300, d: 20, kappa: 5.0, seed: 9 }).unwrap();
        let c = gen_synthetic(&SyntheticSpec { t: 300, d: 20, kappa: 50.0, seed: 9 }).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().zip(&c).all(|(x, y)| x.label == y.label));
        let pos = a.iter().filter(|e| e.label > 0.0).count() as f64 / 300.0;
        assert!((0.3..=0.7).contains(&pos), "{pos}");
    }

    #[test]
    fn empirical_condition_number_large_sample() {
        let spec = SyntheticSpec { t: 100_000, d: 100, kappa: 100.0, seed: 3 };
        let xs = gen_synthetic(&spec).unwrap();
        let mut cov = SymMatrix::zeros(spec.d);
        for ex in &xs {
            cov.rank_one_update(1.0 / spec.t as f64, &ex.features.to_dense());
        }
        let eig = eig_sym(&cov).unwrap();
        let ratio = eig.values[0] / eig.values[spec.d - 1];
        assert!((ratio / spec.kappa - 1.0).abs() <= 0.2, "{ratio}");
    }
}
