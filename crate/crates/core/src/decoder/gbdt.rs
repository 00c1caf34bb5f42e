use serde::{Deserialize, Serialize};

use super::{softmax, CalibrationSet, DecoderError};
use crate::movement::Movement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub iterations: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_leaf_reg: f64,
    /// Quantile bins per feature for split search.
    pub bins: usize,
    pub min_child_hessian: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            iterations: 300,
            max_depth: 10,
            learning_rate: 0.04,
            l2_leaf_reg: 0.014,
            bins: 32,
            min_child_hessian: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + go(t, left as usize).max(go(t, right as usize))
                }
            }
        }
        go(self, 0)
    }

    fn scale(&mut self, k: f64) {
        for n in &mut self.nodes {
            if let TreeNode::Leaf { value } = n {
                *value *= k;
            }
        }
    }
}

/// Softmax ensemble of one-vs-all regression trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub classes: Vec<Movement>,
    pub params: GbdtParams,
    pub n_features: usize,
    /// Log prior per class.
    pub base_score: Vec<f64>,
    /// `trees[iteration][class]`.
    pub trees: Vec<Vec<Tree>>,
    /// Mean training cross-entropy before the first and after every iteration.
    pub train_loss: Vec<f64>,
}

impl GbdtModel {
    pub fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut f = self.base_score.clone();
        for round in &self.trees {
            for (fk, t) in f.iter_mut().zip(round) {
                *fk += t.eval(x);
            }
        }
        f
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.raw_scores(x))
    }

    pub fn tree_count(&self) -> usize {
        self.trees.iter().map(Vec::len).sum()
    }
}

/// Per-feature quantile borders and the binned training matrix.
struct Binned {
    borders: Vec<Vec<f64>>,
    /// Column-major bin indices.
    cols: Vec<Vec<u8>>,
}

impl Binned {
    fn new(cal: &CalibrationSet, bins: usize) -> Self {
        let d = cal.samples[0].features.len();
        let n = cal.len();
        let mut borders = Vec::with_capacity(d);
        let mut cols = Vec::with_capacity(d);
        for j in 0..d {
            let mut v: Vec<f64> = cal.samples.iter().map(|s| s.features[j]).collect();
            v.sort_by(f64::total_cmp);
            let mut b: Vec<f64> = (1..bins).map(|q| v[(q * n / bins).min(n - 1)]).collect();
            b.dedup();
            // a border at the maximum would leave the right side empty
            b.retain(|&x| x < v[n - 1]);
            let col = cal
                .samples
                .iter()
                .map(|s| b.partition_point(|&t| t < s.features[j]) as u8)
                .collect();
            borders.push(b);
            cols.push(col);
        }
        Binned { borders, cols }
    }
}

struct Builder<'a> {
    data: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<TreeNode>,
}

/// Gradient and hessian sums per (feature, bin).
type Hist = Vec<Vec<(f64, f64)>>;

impl Builder<'_> {
    fn histogram(&self, idx: &[usize]) -> Hist {
        let mut h: Hist = self
            .data
            .borders
            .iter()
            .map(|b| vec![(0.0, 0.0); b.len() + 1])
            .collect();
        for (j, col) in self.data.cols.iter().enumerate() {
            let hj = &mut h[j];
            for &i in idx {
                let e = &mut hj[col[i] as usize];
                e.0 += self.grad[i];
                e.1 += self.hess[i];
            }
        }
        h
    }

    fn leaf(&mut self, g: f64, h: f64) -> u32 {
        let value = -self.params.learning_rate * g / (h + self.params.l2_leaf_reg);
        self.nodes.push(TreeNode::Leaf { value });
        (self.nodes.len() - 1) as u32
    }

    fn build(&mut self, idx: Vec<usize>, hist: Hist, depth: usize) -> u32 {
        let (g, h) = hist[0]
            .iter()
            .fold((0.0, 0.0), |a, e| (a.0 + e.0, a.1 + e.1));
        if depth >= self.params.max_depth || idx.len() < 2 {
            return self.leaf(g, h);
        }
        let lambda = self.params.l2_leaf_reg;
        let parent = g * g / (h + lambda);
        let mut best: Option<(f64, usize, usize)> = None;
        for (j, hj) in hist.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for (b, e) in hj.iter().enumerate().take(hj.len() - 1) {
                gl += e.0;
                hl += e.1;
                let (gr, hr) = (g - gl, h - hl);
                if hl < self.params.min_child_hessian || hr < self.params.min_child_hessian {
                    continue;
                }
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, j, b));
                }
            }
        }
        let Some((_, feature, bin)) = best else {
            return self.leaf(g, h);
        };
        let col = &self.data.cols[feature];
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| col[i] as usize <= bin);
        if left.is_empty() || right.is_empty() {
            return self.leaf(g, h);
        }
        // histogram of the smaller child, the other by subtraction
        let (small_is_left, small) = if left.len() <= right.len() {
            (true, &left)
        } else {
            (false, &right)
        };
        let hs = self.histogram(small);
        let hl_: Hist = hist
            .iter()
            .zip(&hs)
            .map(|(p, s)| {
                p.iter()
                    .zip(s)
                    .map(|(a, b)| (a.0 - b.0, a.1 - b.1))
                    .collect()
            })
            .collect();
        let (hist_left, hist_right) = if small_is_left { (hs, hl_) } else { (hl_, hs) };

        let at = self.nodes.len();
        let threshold = self.data.borders[feature][bin];
        self.nodes.push(TreeNode::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let l = self.build(left, hist_left, depth + 1);
        let r = self.build(right, hist_right, depth + 1);
        self.nodes[at] = TreeNode::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        at as u32
    }
}

fn fit_tree(data: &Binned, grad: &[f64], hess: &[f64], params: &GbdtParams) -> Tree {
    let mut b = Builder {
        data,
        grad,
        hess,
        params,
        nodes: Vec::new(),
    };
    let idx: Vec<usize> = (0..grad.len()).collect();
    let hist = b.histogram(&idx);
    b.build(idx, hist, 0);
    Tree { nodes: b.nodes }
}

fn cross_entropy(f: &[Vec<f64>], y: &[usize]) -> f64 {
    f.iter()
        .zip(y)
        .map(|(fi, &c)| {
            let m = fi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + fi.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - fi[c]
        })
        .sum::<f64>()
        / y.len() as f64
}

/// Newton-boosted softmax trees. If a round would raise the training loss,
/// its leaf values are halved until it does not.
pub fn train_gbdt(cal: &CalibrationSet, params: &GbdtParams) -> Result<GbdtModel, DecoderError> {
    cal.validate(1)?;
    if params.bins < 2 || params.bins > 256 {
        return Err(DecoderError::Format(format!(
            "bins must be 2-256, got {}",
            params.bins
        )));
    }
    let y = cal.targets()?;
    let k = cal.classes.len();
    let n = cal.len();
    let data = Binned::new(cal, params.bins);
    let base_score: Vec<f64> = cal
        .class_counts()
        .iter()
        .map(|&c| (c as f64 / n as f64).ln())
        .collect();
    let xs: Vec<&[f64]> = cal.samples.iter().map(|s| s.features.as_slice()).collect();

    let mut f: Vec<Vec<f64>> = vec![base_score.clone(); n];
    let mut loss = cross_entropy(&f, &y);
    let mut train_loss = vec![loss];
    let mut trees = Vec::with_capacity(params.iterations);

    for _ in 0..params.iterations {
        let p: Vec<Vec<f64>> = f.iter().map(|fi| softmax(fi)).collect();
        let mut round: Vec<Tree> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..k)
                .map(|c| {
                    let (p, y, data) = (&p, &y, &data);
                    s.spawn(move || {
                        let grad: Vec<f64> = p
                            .iter()
                            .zip(y)
                            .map(|(pi, &yi)| pi[c] - if yi == c { 1.0 } else { 0.0 })
                            .collect();
                        let hess: Vec<f64> = p
                            .iter()
                            .map(|pi| (pi[c] * (1.0 - pi[c])).max(1e-16))
                            .collect();
                        fit_tree(data, &grad, &hess, params)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("tree worker"))
                .collect()
        });

        let deltas: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| round.iter().map(|t| t.eval(x)).collect())
            .collect();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<Vec<f64>> = f
                .iter()
                .zip(&deltas)
                .map(|(fi, di)| fi.iter().zip(di).map(|(a, b)| a + step * b).collect())
                .collect();
            let l = cross_entropy(&trial, &y);
            if l <= loss {
                f = trial;
                loss = l;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            step = 0.0;
        }
        if step != 1.0 {
            for t in &mut round {
                t.scale(step);
            }
        }
        train_loss.push(loss);
        trees.push(round);
    }

    Ok(GbdtModel {
        classes: cal.classes.clone(),
        params: params.clone(),
        n_features: cal.samples[0].features.len(),
        base_score,
        trees,
        train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{argmax, Model};
    use crate::emg::CHANNELS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quick() -> GbdtParams {
        GbdtParams {
            iterations: 40,
            ..GbdtParams::default()
        }
    }

    fn separable(n: usize, seed: u64) -> CalibrationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cal = CalibrationSet::new(vec![Movement::Rest, Movement::Dorsiflexion]);
        for i in 0..n {
            let c = i % 2;
            let mut f: Vec<f64> = (0..CHANNELS).map(|_| rng.random_range(0.0..1.0)).collect();
            f[5] = if c == 0 {
                rng.random_range(0.0..0.45)
            } else {
                rng.random_range(0.55..1.0)
            };
            cal.push(f, [Movement::Rest, Movement::Dorsiflexion][c], i as u64);
        }
        cal
    }

    #[test]
    fn separable_set_is_learned() {
        let cal = separable(50, 1);
        let model = train_gbdt(&cal, &GbdtParams::default()).unwrap();
        assert_eq!(Model::Gbdt(model.clone()).accuracy(&cal).unwrap(), 1.0);
        assert_eq!(model.tree_count(), 300 * 2);
        assert!(model.trees.iter().flatten().all(|t| t.depth() <= 10));
    }

    #[test]
    fn loss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let classes = vec![Movement::Rest, Movement::Dorsiflexion, Movement::Inversion];
        let mut cal = CalibrationSet::new(classes.clone());
        for i in 0..300 {
            let f = (0..CHANNELS).map(|_| rng.random_range(0.0..1.0)).collect();
            cal.push(f, classes[rng.random_range(0..3)], i);
        }
        let model = train_gbdt(&cal, &quick()).unwrap();
        assert_eq!(model.train_loss.len(), 41);
        assert!(model.train_loss.windows(2).all(|w| w[1] <= w[0]));
        assert!(model.train_loss[40] < model.train_loss[0]);
    }

    #[test]
    fn constant_features_predict_prior() {
        let mut cal = CalibrationSet::new(vec![
            Movement::Rest,
            Movement::Dorsiflexion,
            Movement::Plantarflexion,
        ]);
        for (i, c) in [0, 1, 1, 1, 2, 2].iter().enumerate() {
            cal.push(vec![0.5; CHANNELS], cal.classes[*c], i as u64);
        }
        let model = train_gbdt(&cal, &quick()).unwrap();
        let s = model.scores(&[0.5; CHANNELS]);
        for (got, want) in s.iter().zip([1.0 / 6.0, 0.5, 1.0 / 3.0]) {
            assert!((got - want).abs() < 1e-9);
        }
        assert_eq!(argmax(&s), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let cal = separable(80, 3);
        let a = train_gbdt(&cal, &quick()).unwrap();
        let b = train_gbdt(&cal, &quick()).unwrap();
        assert_eq!(Model::Gbdt(a).hash(), Model::Gbdt(b).hash());
    }
}
