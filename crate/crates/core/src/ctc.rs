//! CTC loss via the forward-backward dynamic program, greedy decoding,
//! the collapse map, and a brute-force enumeration oracle.
//!
//! Convention: label index 0 is the blank; real labels live in 1..=V.
//! All recursions run in log space; -inf is the zero-probability sentinel.

use crate::error::{Error, Result};
use crate::tensor::{log_add, log_sum_exp, Tensor};

pub const BLANK: usize = 0;

/// Ordered phone-index sequence for one utterance. Never contains blank.
pub type LabelSequence = Vec<usize>;

#[derive(Clone, Debug)]
pub struct CtcResult {
    /// -ln p(l|x), always >= 0 up to float noise.
    pub neg_log_likelihood: f64,
    /// Exact gradient of the loss with respect to the log-probability
    /// lattice, shape T×(V+1).
    pub grad_log_probs: Tensor,
}

/// Merge consecutive duplicates, then delete blanks (the map B).
pub fn collapse(path: &[usize]) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev {
            if p != BLANK {
                out.push(p);
            }
            prev = Some(p);
        }
    }
    out
}

/// Interleave blanks: [∅, l1, ∅, l2, ∅, ..., lL, ∅], length 2L+1.
pub fn augment_labels(labels: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * labels.len() + 1);
    out.push(BLANK);
    for &l in labels {
        out.push(l);
        out.push(BLANK);
    }
    out
}

/// Minimum frame count that admits any alignment for `labels`:
/// |l| plus one extra frame per adjacent equal pair.
pub fn min_frames(labels: &[usize]) -> usize {
    let dups = labels.windows(2).filter(|w| w[0] == w[1]).count();
    labels.len() + dups
}

fn check_lattice(log_probs: &Tensor, labels: &[usize]) -> Result<()> {
    let frames = log_probs.rows();
    let classes = log_probs.cols();
    if classes < 1 {
        return Err(Error::InvalidInput("lattice has zero classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} outside 1..{}",
            classes - 1
        )));
    }
    let required = min_frames(labels);
    if frames < required {
        return Err(Error::CtcInfeasible { frames, required });
    }
    for t in 0..frames {
        let z = log_sum_exp(log_probs.row(t));
        if z.abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "lattice row {t} is not a log-distribution (log-sum {z:.3e})"
            )));
        }
    }
    Ok(())
}

/// CTC loss and its exact gradient over the log-probability lattice.
pub fn ctc_forward_backward(log_probs: &Tensor, labels: &[usize]) -> Result<CtcResult> {
    check_lattice(log_probs, labels)?;
    let frames = log_probs.rows();
    let aug = augment_labels(labels);
    let states = aug.len();
    let ninf = f64::NEG_INFINITY;

    // alpha[t][s] and beta[t][s] both include the emission at t, so the
    // posterior over a state divides the emission out once.
    let mut alpha = vec![vec![ninf; states]; frames];
    alpha[0][0] = log_probs.at(0, aug[0]);
    if states > 1 {
        alpha[0][1] = log_probs.at(0, aug[1]);
    }
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            if s >= 2 && aug[s] != BLANK && aug[s] != aug[s - 2] {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = acc + log_probs.at(t, aug[s]);
        }
    }

    let mut beta = vec![vec![ninf; states]; frames];
    beta[frames - 1][states - 1] = log_probs.at(frames - 1, aug[states - 1]);
    if states > 1 {
        beta[frames - 1][states - 2] = log_probs.at(frames - 1, aug[states - 2]);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut acc = beta[t + 1][s];
            if s + 1 < states {
                acc = log_add(acc, beta[t + 1][s + 1]);
            }
            if s + 2 < states && aug[s + 2] != BLANK && aug[s + 2] != aug[s] {
                acc = log_add(acc, beta[t + 1][s + 2]);
            }
            beta[t][s] = acc + log_probs.at(t, aug[s]);
        }
    }

    let mut log_p = alpha[frames - 1][states - 1];
    if states > 1 {
        log_p = log_add(log_p, alpha[frames - 1][states - 2]);
    }
    if log_p == ninf {
        // Feasible by length but no mass on any path (hard zeros in the lattice).
        return Err(Error::CtcInfeasible {
            frames,
            required: min_frames(labels),
        });
    }

    // grad[t][k] = -exp(lse_{s: aug[s]=k}(alpha + beta - emission) - log_p)
    let mut grad = Tensor::zeros(frames, log_probs.cols());
    for t in 0..frames {
        let mut per_class = vec![ninf; log_probs.cols()];
        for s in 0..states {
            let g = alpha[t][s] + beta[t][s] - log_probs.at(t, aug[s]);
            per_class[aug[s]] = log_add(per_class[aug[s]], g);
        }
        for k in 0..log_probs.cols() {
            if per_class[k] != ninf {
                *grad.at_mut(t, k) = -((per_class[k] - log_p).exp());
            }
        }
    }

    Ok(CtcResult {
        neg_log_likelihood: -log_p,
        grad_log_probs: grad,
    })
}

/// Literal enumeration of every alignment; sums the probability of those
/// collapsing to `labels`. Oracle for `ctc_forward_backward`.
pub fn brute_force_ctc(log_probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check_lattice(log_probs, labels)?;
    let frames = log_probs.rows();
    let classes = log_probs.cols();
    let total = (classes as f64).powi(frames as i32);
    if total > 1e7 {
        return Err(Error::EnumerationGuard { paths: total });
    }

    let mut path = vec![0usize; frames];
    let mut log_p = f64::NEG_INFINITY;
    loop {
        if collapse(&path) == labels {
            let lp: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &k)| log_probs.at(t, k))
                .sum();
            log_p = log_add(log_p, lp);
        }
        // Odometer increment over the path space.
        let mut t = 0;
        loop {
            if t == frames {
                if log_p == f64::NEG_INFINITY {
                    return Err(Error::CtcInfeasible {
                        frames,
                        required: min_frames(labels),
                    });
                }
                return Ok(-log_p);
            }
            path[t] += 1;
            if path[t] < classes {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}

/// Per-frame argmax then collapse. Ties break toward the lowest index
/// (blank is lowest), keeping decoding deterministic.
pub fn greedy_decode(log_probs: &Tensor) -> LabelSequence {
    let mut path = Vec::with_capacity(log_probs.rows());
    for t in 0..log_probs.rows() {
        let row = log_probs.row(t);
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        path.push(best);
    }
    collapse(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_lattice(frames: usize, classes: usize) -> Tensor {
        let v = -(classes as f64).ln();
        Tensor::from_vec(frames, classes, vec![v; frames * classes]).unwrap()
    }

    /// Log-softmax over arbitrary rows, used to make valid lattices.
    fn normalize(rows: usize, cols: usize, raw: Vec<f64>) -> Tensor {
        let mut t = Tensor::from_vec(rows, cols, raw).unwrap();
        for r in 0..rows {
            let z = log_sum_exp(t.row(r));
            for v in t.row_mut(r) {
                *v -= z;
            }
        }
        t
    }

    #[test]
    fn collapse_hand_cases() {
        let a = 1;
        let b = 2;
        assert_eq!(collapse(&[a, a, BLANK, a, b]), vec![a, a, b]);
        assert_eq!(collapse(&[BLANK, BLANK, BLANK]), Vec::<usize>::new());
        assert_eq!(collapse(&[b, b, b]), vec![b]);
    }

    #[test]
    fn augment_hand_cases() {
        assert_eq!(augment_labels(&[1]), vec![0, 1, 0]);
        assert_eq!(augment_labels(&[]), vec![0]);
        assert_eq!(augment_labels(&[1, 1]), vec![0, 1, 0, 1, 0]);
    }

    #[test]
    fn single_frame_uniform() {
        // T=1, l=[a], uniform over {∅, a}: only path is [a], p = 0.5.
        let lat = uniform_lattice(1, 2);
        let res = ctc_forward_backward(&lat, &[1]).unwrap();
        assert!((res.neg_log_likelihood - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unit_probability_path_gives_zero_loss() {
        // frame 1 all mass on ∅, frame 2 all mass on a (log-space hard spike).
        let big = 50.0;
        let lat = normalize(2, 2, vec![big, 0.0, 0.0, big]);
        let res = ctc_forward_backward(&lat, &[1]).unwrap();
        assert!(res.neg_log_likelihood.abs() < 1e-12, "{}", res.neg_log_likelihood);
    }

    #[test]
    fn matches_brute_force_on_fixed_instance() {
        // T=4, V=2, l=[a,b], fixed pseudo-random rows.
        let raw: Vec<f64> = (0..12).map(|i| ((i * 37 % 11) as f64) * 0.3 - 1.0).collect();
        let lat = normalize(4, 3, raw);
        let labels = vec![1, 2];
        let fb = ctc_forward_backward(&lat, &labels).unwrap();
        let bf = brute_force_ctc(&lat, &labels).unwrap();
        assert!((fb.neg_log_likelihood - bf).abs() < 1e-10);
    }

    #[test]
    fn brute_force_single_path() {
        let lat = uniform_lattice(1, 3);
        let loss = brute_force_ctc(&lat, &[]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_reports_lengths() {
        let lat = uniform_lattice(2, 2);
        let err = ctc_forward_backward(&lat, &[1, 1, 1]).unwrap_err();
        match err {
            Error::CtcInfeasible { frames, required } => {
                assert_eq!(frames, 2);
                assert_eq!(required, 5);
            }
            other => panic!("unexpected error {other}"),
        }
        assert!(matches!(
            brute_force_ctc(&lat, &[1, 1, 1]).unwrap_err(),
            Error::CtcInfeasible { .. }
        ));
    }

    #[test]
    fn unnormalized_rows_rejected() {
        let lat = Tensor::from_vec(1, 2, vec![-0.1, -0.1]).unwrap();
        assert!(matches!(
            ctc_forward_backward(&lat, &[1]).unwrap_err(),
            Error::Contract(_)
        ));
    }

    #[test]
    fn enumeration_guard() {
        let lat = uniform_lattice(30, 4);
        assert!(matches!(
            brute_force_ctc(&lat, &[1]).unwrap_err(),
            Error::EnumerationGuard { .. }
        ));
    }

    #[test]
    fn greedy_decode_cases() {
        // argmaxes [a, a, ∅, b] → [a, b]
        let lat = normalize(
            4,
            3,
            vec![0., 2., 0., 0., 2., 0., 2., 0., 0., 0., 0., 2.],
        );
        assert_eq!(greedy_decode(&lat), vec![1, 2]);
        let blanks = normalize(2, 3, vec![2., 0., 0., 2., 0., 0.]);
        assert_eq!(greedy_decode(&blanks), Vec::<usize>::new());
        // exact tie in every row → blank (index 0) wins → empty output
        let tie = uniform_lattice(3, 3);
        assert_eq!(greedy_decode(&tie), Vec::<usize>::new());
    }

    #[test]
    fn loss_nonnegative_and_grad_rows_structure() {
        let raw: Vec<f64> = (0..15).map(|i| ((i * 13 % 7) as f64) * 0.4 - 1.2).collect();
        let lat = normalize(5, 3, raw);
        let res = ctc_forward_backward(&lat, &[2, 1]).unwrap();
        assert!(res.neg_log_likelihood >= -1e-12);
        assert_eq!(res.grad_log_probs.shape(), [5, 3]);
        // d(-ln p)/d logp[t,k] sums over k to -1 per frame: the state
        // posterior at each frame is a distribution.
        for t in 0..5 {
            let s: f64 = res.grad_log_probs.row(t).iter().sum();
            assert!((s + 1.0).abs() < 1e-10, "frame {t}: {s}");
        }
    }

    #[test]
    fn randomized_oracle_equivalence() {
        // Small deterministic LCG; feasible instances only.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as f64 / (1u64 << 31) as f64
        };
        let mut tested = 0;
        while tested < 200 {
            let frames = 1 + (next() * 6.0) as usize % 6;
            let vocab = 1 + (next() * 3.0) as usize % 3;
            let len = (next() * 4.0) as usize % 4;
            let labels: Vec<usize> =
                (0..len).map(|_| 1 + (next() * vocab as f64) as usize % vocab).collect();
            if min_frames(&labels) > frames {
                continue;
            }
            let raw: Vec<f64> = (0..frames * (vocab + 1)).map(|_| next() * 4.0 - 2.0).collect();
            let lat = normalize(frames, vocab + 1, raw);
            let fb = ctc_forward_backward(&lat, &labels).unwrap().neg_log_likelihood;
            let bf = brute_force_ctc(&lat, &labels).unwrap();
            assert!((fb - bf).abs() < 1e-9, "T={frames} V={vocab} l={labels:?}: {fb} vs {bf}");
            tested += 1;
        }
    }

    #[test]
    fn collapse_of_augmented_returns_original() {
        for labels in [vec![], vec![1], vec![1, 1], vec![1, 2, 2, 3]] {
            assert_eq!(collapse(&augment_labels(&labels)), labels);
        }
    }
}
