//! LIBSVM reading and writing, seeded train/test splits, and synthetic data
//! drawn from a planted factorization machine.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fm::{self, FmModel, SparseExample, Task};

/// An immutable, nonempty collection of examples sharing a dimension count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<SparseExample>,
    dim: usize,
    task: Task,
}

impl Dataset {
    /// Validates that the set is nonempty, every index is within `1..=dim`
    /// and classification labels are +1 or -1.
    pub fn new(examples: Vec<SparseExample>, dim: usize, task: Task) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if dim < 1 {
            return Err(Error::invalid("dataset dimension must be >= 1"));
        }
        for x in &examples {
            if x.max_index() as usize > dim {
                return Err(Error::IndexOutOfRange {
                    index: x.max_index(),
                    dim,
                });
            }
            if task == Task::Classification && x.label() != 1.0 && x.label() != -1.0 {
                return Err(Error::InvalidLabel(x.label()));
            }
        }
        Ok(Dataset {
            examples,
            dim,
            task,
        })
    }

    pub fn examples(&self) -> &[SparseExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn labels(&self) -> impl Iterator<Item = f64> + '_ {
        self.examples.iter().map(|x| x.label())
    }

    pub fn nnz(&self) -> usize {
        self.examples.iter().map(|x| x.nnz()).sum()
    }

    /// Widens the dimension count, e.g. so a test set matches its training set.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        let max = self.max_observed_index();
        if dim < max {
            return Err(Error::invalid(format!(
                "requested D={dim} is below the largest index {max}"
            )));
        }
        self.dim = dim;
        Ok(self)
    }

    fn max_observed_index(&self) -> usize {
        self.examples
            .iter()
            .map(|x| x.max_index() as usize)
            .max()
            .unwrap_or(0)
    }

    fn subset(&self, idx: &[usize]) -> Option<Dataset> {
        if idx.is_empty() {
            return None;
        }
        Some(Dataset {
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
            dim: self.dim,
            task: self.task,
        })
    }
}

fn parse_label(tok: &str, task: Task, line: usize) -> Result<f64> {
    let y: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad label {tok:?}"),
    })?;
    if !y.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite label {tok:?}"),
        });
    }
    match task {
        Task::Regression => Ok(y),
        Task::Classification => {
            if y == 1.0 {
                Ok(1.0)
            } else if y == 0.0 || y == -1.0 {
                Ok(-1.0)
            } else {
                Err(Error::Parse {
                    line,
                    msg: format!("classification label {tok:?} is not 0, 1 or -1"),
                })
            }
        }
    }
}

fn parse_feature(tok: &str, line: usize) -> Result<(u32, f64)> {
    let bad = || Error::Parse {
        line,
        msg: format!("malformed feature {tok:?}, expected idx:val"),
    };
    let (i, v) = tok.split_once(':').ok_or_else(bad)?;
    let idx: i64 = i.parse().map_err(|_| bad())?;
    let val: f64 = v.parse().map_err(|_| bad())?;
    if idx < 1 || idx > u32::MAX as i64 {
        return Err(Error::Parse {
            line,
            msg: format!("feature index {idx} must be >= 1"),
        });
    }
    if !val.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite value in {tok:?}"),
        });
    }
    Ok((idx as u32, val))
}

/// Reads `label idx:val ...` lines. `#` starts a comment. Classification
/// labels 0/1 map to -1/+1. Explicit zero values are dropped.
///
/// The dimension is the largest index seen unless `dim` forces a larger one.
pub fn parse_libsvm<R: BufRead>(reader: R, task: Task, dim: Option<usize>) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut max_idx = 0usize;
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let label = parse_label(toks.next().unwrap_or_default(), task, lineno)?;
        let mut feats = toks
            .map(|t| parse_feature(t, lineno))
            .collect::<Result<Vec<_>>>()?;
        feats.sort_unstable_by_key(|&(i, _)| i);
        if let Some(w) = feats.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("duplicate feature index {}", w[0].0),
            });
        }
        feats.retain(|&(_, v)| v != 0.0);
        if let Some(&(i, _)) = feats.last() {
            max_idx = max_idx.max(i as usize);
        }
        let x = SparseExample::new(feats, label).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        examples.push(x);
    }
    if examples.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no examples in input".into(),
        });
    }
    let d = match dim {
        Some(d) if d < max_idx => {
            return Err(Error::invalid(format!(
                "requested D={d} is below the largest index {max_idx}"
            )))
        }
        Some(d) => d,
        None => max_idx.max(1),
    };
    Dataset::new(examples, d, task)
}

/// Writes the dataset in LIBSVM format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    for x in ds.examples() {
        write!(out, "{}", x.label())?;
        for &(i, v) in x.features() {
            write!(out, " {i}:{v}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Seeded shuffle, then the first `N - floor(N * test_fraction)` examples go
/// to training. For a fraction in (0, 1) the test part holds at least one
/// example; it is `None` only when the fraction is zero.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let n = ds.len();
    let mut n_test = (n as f64 * test_fraction + 1e-9).floor() as usize;
    if test_fraction > 0.0 {
        n_test = n_test.max(1);
    }
    if n_test >= n {
        return Err(Error::invalid(format!(
            "splitting {n} examples at fraction {test_fraction} leaves no training data"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, test_idx) = order.split_at(n - n_test);
    let train = ds.subset(train_idx).expect("nonempty train");
    Ok((train, ds.subset(test_idx)))
}

/// Parameters for [`synth_fm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub dim: usize,
    pub k: usize,
    /// Probability that a given feature is present in an example.
    pub density: f64,
    pub noise_sd: f64,
    pub task: Task,
    pub seed: u64,
}

/// Draws a planted model (`w0, w ~ N(0, 1)`, `V ~ N(0, 0.1^2)`) and `n`
/// examples whose features are present independently with probability
/// `density` and take `N(0, 1)` values. Labels are `f(x) + noise` for
/// regression and `sign(f(x) + noise)` for classification.
pub fn synth_fm(spec: &SynthSpec) -> Result<(Dataset, FmModel)> {
    let SynthSpec {
        n,
        dim,
        k,
        density,
        noise_sd,
        task,
        seed,
    } = *spec;
    if n < 1 || dim < 1 || k < 1 {
        return Err(Error::invalid(format!(
            "synthetic data needs N, D, K >= 1, got N={n}, D={dim}, K={k}"
        )));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::invalid(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::invalid(format!(
            "noise_sd must be >= 0, got {noise_sd}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let latent = Normal::new(0.0, 0.1).expect("valid normal");

    let w0 = std_normal.sample(&mut rng);
    let w: Vec<f64> = (0..dim).map(|_| std_normal.sample(&mut rng)).collect();
    let v: Vec<f64> = (0..dim * k).map(|_| latent.sample(&mut rng)).collect();
    let planted = FmModel::from_parts(w0, w, v, k)?;

    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut feats = Vec::with_capacity((density * dim as f64).ceil() as usize);
        for j in 1..=dim as u32 {
            if density >= 1.0 || rng.random::<f64>() < density {
                let mut val = 0.0;
                while val == 0.0 {
                    val = std_normal.sample(&mut rng);
                }
                feats.push((j, val));
            }
        }
        let x = SparseExample::new(feats, 0.0)?;
        let f = fm::score(&planted, &x)?;
        let noisy = if noise_sd > 0.0 {
            f + noise_sd * std_normal.sample(&mut rng)
        } else {
            f
        };
        let y = fm::hard_prediction(noisy, task);
        examples.push(SparseExample::new(x.features().to_vec(), y)?);
    }
    Ok((Dataset::new(examples, dim, task)?, planted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str, task: Task) -> Result<Dataset> {
        parse_libsvm(s.as_bytes(), task, None)
    }

    #[test]
    fn parse_examples() {
        let ds = parse("1 1:0.5 3:-2\n", Task::Classification).unwrap();
        assert_eq!((ds.len(), ds.dim()), (1, 3));
        assert_eq!(ds.examples()[0].label(), 1.0);
        assert_eq!(ds.examples()[0].features(), &[(1, 0.5), (3, -2.0)]);

        let ds = parse("0 2:1\n", Task::Classification).unwrap();
        assert_eq!(ds.examples()[0].label(), -1.0);

        let ds = parse("3.5 1:1\n", Task::Regression).unwrap();
        assert_eq!((ds.examples()[0].label(), ds.dim()), (3.5, 1));
    }

    #[test]
    fn parse_handles_comments_crlf_and_unsorted() {
        let text = "# header\r\n+1 4:1 2:3 # trailing\r\n\r\n-1 1:2\r\n";
        let ds = parse(text, Task::Classification).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.examples()[0].features(), &[(2, 3.0), (4, 1.0)]);
        assert_eq!(ds.dim(), 4);
    }

    #[test]
    fn parse_drops_explicit_zeros() {
        let ds = parse("1 1:0 2:1\n", Task::Regression).unwrap();
        assert_eq!(ds.examples()[0].features(), &[(2, 1.0)]);
    }

    #[test]
    fn parse_dim_override() {
        let ds = parse_libsvm("1 2:1\n".as_bytes(), Task::Regression, Some(10)).unwrap();
        assert_eq!(ds.dim(), 10);
        assert!(parse_libsvm("1 12:1\n".as_bytes(), Task::Regression, Some(10)).is_err());
    }

    fn err_line(s: &str, task: Task) -> usize {
        match parse(s, task) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert_eq!(err_line("1 1:1\n1 x:1\n", Task::Regression), 2);
        assert_eq!(err_line("1 1:1\n\n1 0:1\n", Task::Regression), 3);
        assert_eq!(err_line("1 2:1 2:3\n", Task::Regression), 1);
        assert_eq!(err_line("1 1:1\n2 1:1\n", Task::Classification), 2);
        assert_eq!(err_line("abc 1:1\n", Task::Regression), 1);
        assert_eq!(err_line("1 1:1:2\n", Task::Regression), 1);
        assert_eq!(err_line("1 1\n", Task::Regression), 1);
        assert!(matches!(
            parse("", Task::Regression),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse("# only\n\n", Task::Regression),
            Err(Error::Parse { .. })
        ));
    }

    fn ten() -> Dataset {
        let ex = (0..10)
            .map(|i| SparseExample::new(vec![(1, i as f64 + 1.0)], i as f64).unwrap())
            .collect();
        Dataset::new(ex, 1, Task::Regression).unwrap()
    }

    #[test]
    fn split_examples() {
        let ds = ten();
        let (tr, te) = split(&ds, 0.3, 7).unwrap();
        let te = te.unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
        let mut all: Vec<f64> = tr.labels().chain(te.labels()).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(f64::from).collect::<Vec<_>>());

        let (tr0, te0) = split(&ds, 0.0, 7).unwrap();
        assert!(te0.is_none());
        assert_eq!(tr0.len(), 10);

        assert_eq!(split(&ds, 0.3, 7).unwrap(), split(&ds, 0.3, 7).unwrap());
        assert!(split(&ds, 1.0, 7).is_err());
        assert!(split(&ds, -0.1, 7).is_err());
    }

    #[test]
    fn split_small_fraction_keeps_test_nonempty() {
        let (tr, te) = split(&ten(), 0.01, 1).unwrap();
        assert_eq!((tr.len(), te.unwrap().len()), (9, 1));
        let one = Dataset::new(
            vec![SparseExample::new(vec![], 1.0).unwrap()],
            1,
            Task::Regression,
        )
        .unwrap();
        assert!(split(&one, 0.5, 0).is_err());
    }

    fn spec(task: Task) -> SynthSpec {
        SynthSpec {
            n: 50,
            dim: 8,
            k: 3,
            density: 0.4,
            noise_sd: 0.0,
            task,
            seed: 11,
        }
    }

    #[test]
    fn synth_noiseless_labels_equal_planted_score() {
        let (ds, planted) = synth_fm(&spec(Task::Regression)).unwrap();
        for x in ds.examples() {
            assert_eq!(x.label(), fm::score(&planted, x).unwrap());
        }
    }

    #[test]
    fn synth_full_density_and_determinism() {
        let mut s = spec(Task::Classification);
        s.density = 1.0;
        let (ds, _) = synth_fm(&s).unwrap();
        assert!(ds.examples().iter().all(|x| x.nnz() == 8));
        assert!(ds.labels().all(|y| y == 1.0 || y == -1.0));
        assert_eq!(synth_fm(&s).unwrap(), synth_fm(&s).unwrap());
    }

    #[test]
    fn synth_rejects_bad_arguments() {
        for f in [
            |s: &mut SynthSpec| s.density = 0.0,
            |s: &mut SynthSpec| s.density = 1.5,
            |s: &mut SynthSpec| s.n = 0,
            |s: &mut SynthSpec| s.dim = 0,
            |s: &mut SynthSpec| s.k = 0,
        ] {
            let mut s = spec(Task::Regression);
            f(&mut s);
            assert!(synth_fm(&s).is_err());
        }
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..=50, frac in 0.0..0.99f64, seed: u64) {
            let ex = (0..n)
                .map(|i| SparseExample::new(vec![], i as f64).unwrap())
                .collect();
            let ds = Dataset::new(ex, 1, Task::Regression).unwrap();
            match split(&ds, frac, seed) {
                Ok((tr, te)) => {
                    let mut all: Vec<f64> = tr.labels().collect();
                    if let Some(te) = &te {
                        all.extend(te.labels());
                    }
                    all.sort_by(f64::total_cmp);
                    prop_assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());
                }
                Err(_) => prop_assert!(n == 1 && frac > 0.0),
            }
        }
    }
}
