//! One full stream model: query encoder plus localization and relationship
//! modules, bound to a (main, context) modality pair.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, Graph, ParameterStore, Var};
use crate::error::Result;
use crate::language::{
    init_language_params, tree_attention, tree_lstm_encode, LanguageDims, PhraseEmbeddings, WordEmbeddings,
};
use crate::matching::{
    combined_scores, init_fusion_block, localization_scores, relationship_scores, Localization, ScoreMatrix, F_CONTEXT,
    F_LOC, F_MAIN, F_REL,
};
use crate::tensor::Real;
use crate::treebank::{LabelVocabulary, ParseTree};
use crate::video::{Modality, SegmentFeatureTable, SegmentSet};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub main_modality: Modality,
    pub context_modality: Modality,
    pub word_dim: usize,
    pub hidden: usize,
    pub label_dim: usize,
    pub main_dim: usize,
    pub context_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcmnModel {
    pub config: ModelConfig,
    pub labels: LabelVocabulary,
}

/// Everything the scoring path produced for one query.
#[derive(Clone, Debug)]
pub struct Forward {
    pub phrases: PhraseEmbeddings,
    pub localization: Localization,
    pub relationship: Var,
    /// `P × P` combined scores.
    pub scores: Var,
}

/// Borrowed inputs for one query against one video.
#[derive(Clone, Copy, Debug)]
pub struct QueryInput<'a> {
    pub tree: &'a ParseTree,
    pub main: &'a SegmentFeatureTable,
    pub context: &'a SegmentFeatureTable,
    pub segments: &'a SegmentSet,
}

/// Detached scores of one query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryScores {
    pub localization: ScoreMatrix,
    pub relationship: ScoreMatrix,
    pub combined: ScoreMatrix,
    pub node_attention: [Vec<f64>; 3],
    pub main_segment_attention: Vec<f64>,
    pub context_segment_attention: Vec<f64>,
}

impl TcmnModel {
    pub fn language_dims(&self) -> LanguageDims {
        LanguageDims {
            word_dim: self.config.word_dim,
            hidden: self.config.hidden,
            label_count: self.labels.len(),
            label_dim: self.config.label_dim,
        }
    }

    pub fn init_params<T: Real>(&self, rng: &mut impl Rng) -> ParameterStore<T> {
        let c = &self.config;
        let mut store = ParameterStore::new();
        init_language_params(&mut store, &self.language_dims(), rng);
        let h = c.hidden;
        init_fusion_block(&mut store, F_MAIN, h, c.main_dim, h, rng);
        init_fusion_block(&mut store, F_CONTEXT, h, c.context_dim, h, rng);
        init_fusion_block(&mut store, F_LOC, h, c.main_dim + c.context_dim + 4, h, rng);
        init_fusion_block(&mut store, F_REL, h, 4, h, rng);
        store
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &Bindings,
        embeddings: &WordEmbeddings,
        input: QueryInput<'_>,
    ) -> Result<Forward> {
        let states = tree_lstm_encode(g, input.tree, embeddings, params)?;
        let phrases = tree_attention(g, &states, input.tree, &self.labels, params)?;
        let localization = localization_scores(
            g,
            phrases.main,
            phrases.context,
            phrases.root,
            input.main,
            input.context,
            input.segments,
            params,
        )?;
        let relationship = relationship_scores(g, phrases.signal, input.segments, params)?;
        let scores = combined_scores(g, localization.scores, relationship)?;
        Ok(Forward {
            phrases,
            localization,
            relationship,
            scores,
        })
    }

    /// Forward pass without keeping the graph.
    pub fn score<T: Real>(
        &self,
        params: &ParameterStore<T>,
        embeddings: &WordEmbeddings,
        input: QueryInput<'_>,
    ) -> Result<QueryScores> {
        let mut g = Graph::new();
        let bindings = params.bind(&mut g);
        let fwd = self.forward(&mut g, &bindings, embeddings, input)?;
        let column = |v: Var| g.value(v).data().iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
        Ok(QueryScores {
            localization: ScoreMatrix::from_tensor(g.value(fwd.localization.scores))?,
            relationship: ScoreMatrix::from_tensor(g.value(fwd.relationship))?,
            combined: ScoreMatrix::from_tensor(g.value(fwd.scores))?,
            node_attention: fwd.phrases.node_attention(&g),
            main_segment_attention: column(fwd.localization.main_attention),
            context_segment_attention: column(fwd.localization.context_attention),
        })
    }
}
