//! Metric heads mapping support and query embeddings to query logits.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::layers::{Forward, ParamStore};
use crate::tensor::Tensor;

/// Query class probabilities of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLogits {
    /// `[N·M, N]`, rows sum to one.
    pub probs: Tensor,
    pub query_labels: Vec<usize>,
}

impl EpisodeLogits {
    pub fn from_logits(logits: &Tensor, query_labels: Vec<usize>) -> Result<Self> {
        let (rows, n) = match *logits.shape() {
            [r, n] if n > 0 => (r, n),
            ref s => return Err(shape_err!("logits must be [rows, N], got {:?}", s)),
        };
        if rows != query_labels.len() {
            return Err(shape_err!("{rows} logit rows for {} labels", query_labels.len()));
        }
        let probs = crate::autodiff::softmax_rows(logits.data(), n);
        Ok(EpisodeLogits {
            probs: Tensor::new(vec![rows, n], probs)?,
            query_labels,
        })
    }

    pub fn n_way(&self) -> usize {
        self.probs.shape()[1]
    }

    /// Highest-probability class per query; ties go to the lowest index.
    pub fn predictions(&self) -> Vec<usize> {
        self.probs
            .data()
            .chunks_exact(self.n_way())
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                    .0
            })
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        let preds = self.predictions();
        let hits = preds.iter().zip(&self.query_labels).filter(|(p, y)| p == y).count();
        hits as f64 / preds.len().max(1) as f64
    }
}

/// `[N, NS]` matrix averaging the support rows of each class.
fn class_mean_matrix(labels: &[usize], n_way: usize) -> Result<Tensor> {
    let mut counts = vec![0usize; n_way];
    for &l in labels {
        if l >= n_way {
            return Err(Error::InvalidArgument(format!("support label {l} out of range for {n_way} classes")));
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(Error::InvalidArgument(format!("class {c} has no support samples")));
    }
    let ns = labels.len();
    let mut data = vec![0.0; n_way * ns];
    for (i, &l) in labels.iter().enumerate() {
        data[l * ns + i] = 1.0 / counts[l] as f64;
    }
    Tensor::new(vec![n_way, ns], data)
}

/// Logits `−‖q − p_c‖²` against class-mean prototypes `p_c`.
pub fn proto_head(tape: &mut Tape, support: Var, support_labels: &[usize], query: Var, n_way: usize) -> Result<Var> {
    if tape.shape(support).len() != 2 || tape.shape(support)[0] != support_labels.len() {
        return Err(shape_err!(
            "support embeddings {:?} for {} labels",
            tape.shape(support),
            support_labels.len()
        ));
    }
    let avg = tape.constant(class_mean_matrix(support_labels, n_way)?);
    let protos = tape.matmul(avg, support)?;
    let d = tape.pairwise_sq_dist(query, protos)?;
    Ok(tape.scale(d, -1.0))
}

/// Two message-passing layers over support and query nodes.
///
/// Node features start as the embedding joined with a label encoding
/// (one-hot for support nodes, `1/N` everywhere for queries). Each layer
/// scores edges with a two-layer network on `|x_i − x_j|`, normalizes rows to
/// an adjacency `A`, and updates nodes with `leaky_relu(W[A·X ‖ X] + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnHead {
    pub dim: usize,
    pub n_way: usize,
    pub hidden: usize,
}

pub const GNN_LAYERS: usize = 2;
const SLOPE: f64 = 0.01;

impl GnnHead {
    pub fn new(dim: usize, n_way: usize) -> Self {
        GnnHead {
            dim,
            n_way,
            hidden: (dim / 2).max(1),
        }
    }

    pub fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.dim + self.n_way
        } else {
            self.hidden
        }
    }

    pub fn edge_hidden(&self, l: usize) -> usize {
        self.layer_in(l).div_ceil(2)
    }

    /// `(name, fan_in, fan_out)` of every linear map.
    fn linears(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for l in 0..GNN_LAYERS {
            let d = self.layer_in(l);
            out.push((format!("gnn.{l}.edge1"), d, self.edge_hidden(l)));
            out.push((format!("gnn.{l}.edge2"), self.edge_hidden(l), 1));
            out.push((format!("gnn.{l}.node"), 2 * d, self.hidden));
        }
        out.push(("gnn.out".to_string(), self.hidden, self.n_way));
        out
    }

    /// He-normal weights `[in, out]` and zero biases, except the output map,
    /// which starts at zero so untrained predictions are uniform.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for (name, fan_in, fan_out) in self.linears() {
            let weight = if name == "gnn.out" {
                Tensor::zeros(&[fan_in, fan_out])
            } else {
                Tensor::randn(&[fan_in, fan_out], (2.0 / fan_in as f64).sqrt(), rng)
            };
            store.params.insert(format!("{name}.weight"), weight);
            store.params.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        }
    }

    fn linear(f: &mut Forward, name: &str, x: Var) -> Result<Var> {
        let w = f.param(&format!("{name}.weight"))?;
        let b = f.param(&format!("{name}.bias"))?;
        let y = f.tape.matmul(x, w)?;
        f.tape.add_row_bias(y, b)
    }

    /// Query logits `[N·M, N]`.
    pub fn forward(&self, f: &mut Forward, support: Var, support_labels: &[usize], query: Var) -> Result<Var> {
        let (ns, nq) = (f.tape.shape(support)[0], f.tape.shape(query)[0]);
        if support_labels.len() != ns || f.tape.shape(support)[1] != self.dim || f.tape.shape(query)[1] != self.dim {
            return Err(shape_err!(
                "graph head of width {} got support {:?} with {} labels and query {:?}",
                self.dim,
                f.tape.shape(support),
                support_labels.len(),
                f.tape.shape(query)
            ));
        }
        let n = ns + nq;
        let place = |offset: usize, rows: usize| {
            let mut p = vec![0.0; n * rows];
            for i in 0..rows {
                p[(offset + i) * rows + i] = 1.0;
            }
            Tensor::from_parts(vec![n, rows], p)
        };
        let ps = f.input(place(0, ns));
        let pq = f.input(place(ns, nq));
        let a = f.tape.matmul(ps, support)?;
        let b = f.tape.matmul(pq, query)?;
        let emb = f.tape.add(a, b)?;
        let mut labels = vec![1.0 / self.n_way as f64; n * self.n_way];
        for (i, &l) in support_labels.iter().enumerate() {
            if l >= self.n_way {
                return Err(Error::InvalidArgument(format!("support label {l} out of range")));
            }
            labels[i * self.n_way..(i + 1) * self.n_way].fill(0.0);
            labels[i * self.n_way + l] = 1.0;
        }
        let enc = f.input(Tensor::from_parts(vec![n, self.n_way], labels));
        let mut x = f.tape.concat_cols(emb, enc)?;
        for l in 0..GNN_LAYERS {
            let diff = f.tape.pairwise_abs_diff(x)?;
            let e = Self::linear(f, &format!("gnn.{l}.edge1"), diff)?;
            let e = f.tape.leaky_relu(e, SLOPE);
            let e = Self::linear(f, &format!("gnn.{l}.edge2"), e)?;
            let e = f.tape.sigmoid(e);
            let e = f.tape.reshape(e, &[n, n])?;
            let adj = f.tape.row_normalize(e)?;
            let agg = f.tape.matmul(adj, x)?;
            let h = f.tape.concat_cols(agg, x)?;
            let h = Self::linear(f, &format!("gnn.{l}.node"), h)?;
            x = f.tape.leaky_relu(h, SLOPE);
        }
        let q_rows: Vec<usize> = (ns..n).collect();
        let xq = f.tape.select_rows(x, &q_rows)?;
        Self::linear(f, "gnn.out", xq)
    }
}

/// Graph-head logits from a parameter store; see [`GnnHead`].
pub fn gnn_head(f: &mut Forward, support: Var, support_labels: &[usize], query: Var, n_way: usize) -> Result<Var> {
    let dim = f.tape.shape(support)[1];
    GnnHead::new(dim, n_way).forward(f, support, support_labels, query)
}
