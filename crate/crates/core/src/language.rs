//! Query encoder: a child-sum Tree-LSTM over the constituency tree, then
//! three attention heads over all tree nodes that softly pick out the main
//! event, the context event and the temporal signal.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::autodiff::{Bindings, Graph, ParameterStore, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::treebank::{LabelVocabulary, ParseTree, Vocabulary, UNK};

pub const W_IOU: &str = "tree_lstm.w_iou";
pub const U_IOU: &str = "tree_lstm.u_iou";
pub const B_IOU: &str = "tree_lstm.b_iou";
pub const U_F: &str = "tree_lstm.u_f";
pub const B_F: &str = "tree_lstm.b_f";
pub const LABEL_EMBEDDING: &str = "tree_attn.label_emb";
pub const ATTN_W: &str = "tree_attn.w";
pub const ATTN_B: &str = "tree_attn.b";

pub const DEFAULT_LABEL_DIM: usize = 16;

/// Attention heads, in row order of [`PhraseEmbeddings::attention`].
pub const COMPONENTS: [&str; 3] = ["main", "context", "signal"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LanguageDims {
    pub word_dim: usize,
    pub hidden: usize,
    pub label_count: usize,
    pub label_dim: usize,
}

/// Adds the encoder parameters to `store`.
///
/// Internal nodes have no word input and leaves have no children, so the
/// forget gate never sees a word vector and has no input weight.
pub fn init_language_params<T: Real>(store: &mut ParameterStore<T>, dims: &LanguageDims, rng: &mut impl Rng) {
    let h = dims.hidden;
    store.insert_uniform(W_IOU, dims.word_dim, 3 * h, dims.word_dim, rng);
    store.insert_uniform(U_IOU, h, 3 * h, h, rng);
    store.insert_uniform(B_IOU, 1, 3 * h, h, rng);
    store.insert_uniform(U_F, h, h, h, rng);
    store.insert(B_F, Tensor::filled(1, h, T::one()));
    // One-hot input: fan-in 1.
    store.insert_uniform(LABEL_EMBEDDING, dims.label_count, dims.label_dim, 1, rng);
    store.insert_uniform(ATTN_W, h + dims.label_dim, 3, h + dims.label_dim, rng);
    store.insert_uniform(ATTN_B, 1, 3, h + dims.label_dim, rng);
}

/// Frozen word vectors. Row 0 is the all-zero unknown-word vector.
#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddings {
    vocab: Vocabulary,
    table: Tensor<f32>,
}

impl WordEmbeddings {
    /// `words[k]` gets `vectors` row `k`; unknown words map to zeros.
    pub fn new(words: &[String], vectors: &Tensor<f32>) -> Result<Self> {
        if words.len() != vectors.rows() {
            return Err(Error::Shape(format!(
                "{} words but {} vectors",
                words.len(),
                vectors.rows()
            )));
        }
        let vocab = Vocabulary::new(&[UNK], words.iter().map(String::as_str));
        if vocab.len() != words.len() + 1 {
            return Err(Error::Config("duplicate words in embedding table".into()));
        }
        let dim = vectors.cols();
        let mut table = Tensor::zeros(vocab.len(), dim);
        for (k, w) in words.iter().enumerate() {
            table.row_mut(vocab.id(w)).copy_from_slice(vectors.row(k));
        }
        Ok(WordEmbeddings { vocab, table })
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vector(&self, word: &str) -> &[f32] {
        self.table.row(self.vocab.id(word))
    }

    /// GloVe text format: `word f1 f2 ... fd` per line.
    pub fn read_glove(reader: impl BufRead, source: &str) -> Result<Self> {
        let mut words = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let values = fields
                .map(|f| f.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::data(source, Some(i + 1), format!("bad number: {e}")))?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::data(
                        source,
                        Some(i + 1),
                        format!("expected {d} values, found {}", values.len()),
                    ))
                }
                _ => {}
            }
            words.push(word.to_string());
            data.extend(values);
        }
        let dim = dim.ok_or_else(|| Error::data(source, None, "no embeddings"))?;
        if dim == 0 {
            return Err(Error::data(source, Some(1), "embedding has no values"));
        }
        let table = Tensor::from_vec(words.len(), dim, data);
        Self::new(&words, &table).map_err(|e| Error::data(source, None, e.to_string()))
    }

    /// Writes every known word (not the unknown-word row) in GloVe format.
    pub fn write_glove(&self, mut out: impl Write) -> std::io::Result<()> {
        for (id, word) in self.vocab.tokens().iter().enumerate().skip(1) {
            write!(out, "{word}")?;
            for x in self.table.row(id) {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Hidden and cell states for every node, indexed by node id.
#[derive(Clone, Debug)]
pub struct NodeStates {
    pub hidden: Vec<Var>,
    pub cells: Vec<Var>,
    pub root: Var,
}

/// Lexicographic order on the concatenated values of `vars`.
fn compare_values<T: Real>(g: &Graph<T>, a: &[Var], b: &[Var]) -> Ordering {
    let va = a.iter().flat_map(|&v| g.value(v).data().iter());
    let vb = b.iter().flat_map(|&v| g.value(v).data().iter());
    for (x, y) in va.zip(vb) {
        match x.to_f64_lossy().total_cmp(&y.to_f64_lossy()) {
            Ordering::Equal => {}
            other => return other,
        }
    }
    Ordering::Equal
}

/// Child-sum Tree-LSTM, bottom-up over the post-order node ids.
///
/// Leaves take their word vector as input and have no children; internal
/// nodes take a zero input. Children are summed in a canonical order
/// (sorted by state value), which makes every state bit-identical under any
/// permutation of siblings.
pub fn tree_lstm_encode<T: Real>(
    g: &mut Graph<T>,
    tree: &ParseTree,
    embeddings: &WordEmbeddings,
    params: &Bindings,
) -> Result<NodeStates> {
    if tree.is_empty() {
        return Err(Error::Config("cannot encode an empty tree".into()));
    }
    let hidden_dim = g.shape(params.get(U_F)).0;
    if embeddings.dim() != g.shape(params.get(W_IOU)).0 {
        return Err(Error::Shape(format!(
            "word vectors have {} dims, encoder expects {}",
            embeddings.dim(),
            g.shape(params.get(W_IOU)).0
        )));
    }
    let (w_iou, u_iou, b_iou) = (params.get(W_IOU), params.get(U_IOU), params.get(B_IOU));
    let (u_f, b_f) = (params.get(U_F), params.get(B_F));

    let mut hidden: Vec<Option<Var>> = vec![None; tree.len()];
    let mut cells: Vec<Option<Var>> = vec![None; tree.len()];
    for (id, node) in tree.nodes().iter().enumerate() {
        let (pre, child_cells) = if let Some(token) = &node.token {
            let x: Vec<T> = embeddings
                .vector(token)
                .iter()
                .map(|&v| T::from_f64_lossy(v as f64))
                .collect();
            let x = g.constant(Tensor::row_vector(x));
            let xw = g.matmul(x, w_iou);
            (g.add_bias(xw, b_iou), None)
        } else {
            let mut kids: Vec<(Var, Var)> = node
                .children
                .iter()
                .map(|&c| (hidden[c].expect("post-order"), cells[c].expect("post-order")))
                .collect();
            kids.sort_by(|a, b| compare_values(g, &[a.0, a.1], &[b.0, b.1]));
            let hs: Vec<Var> = kids.iter().map(|k| k.0).collect();
            let cs: Vec<Var> = kids.iter().map(|k| k.1).collect();
            let ones = g.constant(Tensor::filled(1, kids.len(), T::one()));
            let h_stack = g.concat_rows(&hs);
            let c_stack = g.concat_rows(&cs);
            let h_sum = g.matmul(ones, h_stack);
            let hu = g.matmul(h_sum, u_iou);
            let pre = g.add_bias(hu, b_iou);
            let fu = g.matmul(h_stack, u_f);
            let f_pre = g.add_bias(fu, b_f);
            let forget = g.sigmoid(f_pre);
            let kept = g.mul(forget, c_stack);
            let kept_sum = g.matmul(ones, kept);
            (pre, Some(kept_sum))
        };
        let i_pre = g.slice_cols(pre, 0, hidden_dim);
        let o_pre = g.slice_cols(pre, hidden_dim, hidden_dim);
        let u_pre = g.slice_cols(pre, 2 * hidden_dim, hidden_dim);
        let input_gate = g.sigmoid(i_pre);
        let output_gate = g.sigmoid(o_pre);
        let update = g.tanh(u_pre);
        let mut cell = g.mul(input_gate, update);
        if let Some(kept) = child_cells {
            cell = g.add(cell, kept);
        }
        let squashed = g.tanh(cell);
        let h = g.mul(output_gate, squashed);
        hidden[id] = Some(h);
        cells[id] = Some(cell);
    }
    let hidden: Vec<Var> = hidden.into_iter().map(|h| h.expect("all nodes visited")).collect();
    let cells: Vec<Var> = cells.into_iter().map(|c| c.expect("all nodes visited")).collect();
    Ok(NodeStates {
        root: hidden[tree.root()],
        hidden,
        cells,
    })
}

/// Output of [`tree_attention`].
#[derive(Clone, Debug)]
pub struct PhraseEmbeddings {
    pub main: Var,
    pub context: Var,
    pub signal: Var,
    /// The Tree-LSTM root state, unchanged.
    pub root: Var,
    /// `3 × N` node attentions with columns in `order`.
    pub attention: Var,
    /// Node id of each attention column.
    pub order: Vec<usize>,
}

impl PhraseEmbeddings {
    /// Node attentions `[main, context, signal]` indexed by node id.
    pub fn node_attention<T: Real>(&self, g: &Graph<T>) -> [Vec<f64>; 3] {
        let att = g.value(self.attention);
        let n = self.order.len();
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (row, dist) in out.iter_mut().enumerate() {
            for (col, &node) in self.order.iter().enumerate() {
                dist[node] = att.get(row, col).to_f64_lossy();
            }
        }
        out
    }
}

/// Three softmax attentions over all tree nodes from `[h_j, e_j]`, where
/// `e_j` is the learned embedding of node `j`'s label, and the attended
/// phrase vectors `d = Σ_j α_j h_j`.
///
/// Nodes are processed in a canonical order (sorted by `[h_j, e_j]`) so the
/// result is independent of sibling order.
pub fn tree_attention<T: Real>(
    g: &mut Graph<T>,
    states: &NodeStates,
    tree: &ParseTree,
    labels: &LabelVocabulary,
    params: &Bindings,
) -> Result<PhraseEmbeddings> {
    if states.hidden.len() != tree.len() {
        return Err(Error::Shape(format!(
            "{} node states for a tree of {} nodes",
            states.hidden.len(),
            tree.len()
        )));
    }
    let table = params.get(LABEL_EMBEDDING);
    let label_ids: Vec<usize> = tree.nodes().iter().map(|n| labels.id(&n.label)).collect();
    if let Some(&bad) = label_ids.iter().find(|&&id| id >= g.shape(table).0) {
        return Err(Error::Shape(format!("label id {bad} outside the embedding table")));
    }

    let per_node = g.gather_rows(table, &label_ids);
    let label_rows: Vec<Var> = (0..tree.len()).map(|j| g.gather_rows(per_node, &[j])).collect();
    let mut order: Vec<usize> = (0..tree.len()).collect();
    order.sort_by(|&a, &b| {
        compare_values(
            g,
            &[states.hidden[a], label_rows[a]],
            &[states.hidden[b], label_rows[b]],
        )
    });

    let h_sorted: Vec<Var> = order.iter().map(|&j| states.hidden[j]).collect();
    let h_stack = g.concat_rows(&h_sorted);
    let sorted_ids: Vec<usize> = order.iter().map(|&j| label_ids[j]).collect();
    let e_stack = g.gather_rows(table, &sorted_ids);
    let features = g.concat_cols(&[h_stack, e_stack]);
    let scores = g.matmul(features, params.get(ATTN_W));
    let logits = g.add_bias(scores, params.get(ATTN_B));
    let by_component = g.transpose(logits);
    let attention = g.softmax(by_component);
    let phrases = g.matmul(attention, h_stack);
    Ok(PhraseEmbeddings {
        main: g.gather_rows(phrases, &[0]),
        context: g.gather_rows(phrases, &[1]),
        signal: g.gather_rows(phrases, &[2]),
        root: states.root,
        attention,
        order,
    })
}
