//! The encoder/decoder network.
//!
//! Per decoding step `t`:
//!
//! ```text
//! s_t   = attention(H_E, h_{t-1}, tup_prev)
//! h_t   = LSTM([s_t ; tup_prev], h_{t-1})
//! p1    = BiLSTM([h_i^E ; h_t])            -> start/end softmax, span vector
//! p2    = BiLSTM([h_i^E ; h_i^p1 ; h_t])   -> start/end softmax, span vector
//! tup_t = aspect_vec ; opinion_vec
//! senti = softmax(W [tup_t ; h_t] + b)     over {POS, NEG, NEU, NONE}
//! ```
//!
//! The first pointer network scores the aspect under aspect-first generation
//! and the opinion under opinion-first generation.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedSentence, Vocabulary};
use crate::error::{PasteError, Result};
use crate::tape::{lit, Graph, NodeId, ParamId, ParamStore, Real};
use crate::triplet::{GenerationDirection, SentimentLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_w: usize,
    pub d_pos: usize,
    pub d_dep: usize,
    /// Decoder hidden size; each encoder direction gets half.
    pub d_h: usize,
    /// Pointer Bi-LSTM output size; each direction gets half.
    pub d_p: usize,
    pub dropout: f64,
    pub direction: GenerationDirection,
    pub max_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_w: 300,
            d_pos: 50,
            d_dep: 50,
            d_h: 300,
            d_p: 300,
            dropout: 0.5,
            direction: GenerationDirection::AspectFirst,
            max_steps: 10,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for tests and gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            d_w: 4,
            d_pos: 4,
            d_dep: 4,
            d_h: 8,
            d_p: 8,
            dropout: 0.0,
            direction: GenerationDirection::AspectFirst,
            max_steps: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PasteError::Config(m));
        if self.d_h == 0 || !self.d_h.is_multiple_of(2) {
            return fail(format!("d_h must be positive and even, got {}", self.d_h));
        }
        if self.d_p == 0 || !self.d_p.is_multiple_of(2) {
            return fail(format!("d_p must be positive and even, got {}", self.d_p));
        }
        if self.d_w == 0 {
            return fail("d_w must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.max_steps == 0 {
            return fail("max_steps must be at least 1".into());
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.d_w + self.d_pos + self.d_dep
    }

    pub fn tuple_dim(&self) -> usize {
        4 * self.d_p
    }

    /// Input widths of the (first, second) pointer Bi-LSTMs.
    pub fn pointer_inputs(&self) -> (usize, usize) {
        (2 * self.d_h, 2 * self.d_h + self.d_p)
    }

    /// Which entity the first pointer network detects.
    pub fn first_entity(&self) -> Entity {
        match self.direction {
            GenerationDirection::AspectFirst => Entity::Aspect,
            GenerationDirection::OpinionFirst => Entity::Opinion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entity {
    Aspect,
    Opinion,
}

impl Entity {
    pub fn name(self) -> &'static str {
        match self {
            Entity::Aspect => "aspect",
            Entity::Opinion => "opinion",
        }
    }

    pub fn other(self) -> Entity {
        match self {
            Entity::Aspect => Entity::Opinion,
            Entity::Opinion => Entity::Aspect,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct BiLstmIds {
    fwd: LstmIds,
    bwd: LstmIds,
}

#[derive(Debug, Clone, Copy)]
struct PointerIds {
    lstm: BiLstmIds,
    w_s: ParamId,
    b_s: ParamId,
    w_e: ParamId,
    b_e: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct ParamIds {
    word: ParamId,
    pos: ParamId,
    dep: ParamId,
    encoder: BiLstmIds,
    decoder: LstmIds,
    w_tup: ParamId,
    b_tup: ParamId,
    w_u: ParamId,
    w_qt: ParamId,
    b_qt: ParamId,
    w_q: ParamId,
    b_q: ParamId,
    v_at: ParamId,
    v_a: ParamId,
    aspect: PointerIds,
    opinion: PointerIds,
    senti_w: ParamId,
    senti_b: ParamId,
}

/// Expected parameter shapes, in store order.
pub fn parameter_shapes(config: &ModelConfig, vocab: &Vocabulary) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: (usize, usize)| out.push((name, shape));
    push("embed.word".into(), (vocab.word_count(), config.d_w));
    push("embed.pos".into(), (vocab.pos_count(), config.d_pos));
    push("embed.dep".into(), (vocab.dep_count(), config.d_dep));
    let lstm = |push: &mut dyn FnMut(String, (usize, usize)), prefix: &str, input: usize, hidden: usize| {
        push(format!("{prefix}.w_ih"), (4 * hidden, input));
        push(format!("{prefix}.w_hh"), (4 * hidden, hidden));
        push(format!("{prefix}.b"), (1, 4 * hidden));
    };
    let (dh, dp) = (config.d_h, config.d_p);
    lstm(&mut push, "encoder.fwd", config.input_dim(), dh / 2);
    lstm(&mut push, "encoder.bwd", config.input_dim(), dh / 2);
    lstm(&mut push, "decoder", dh + config.tuple_dim(), dh);
    push("attention.w_tup".into(), (dh, config.tuple_dim()));
    push("attention.b_tup".into(), (1, dh));
    push("attention.w_u".into(), (dh, dh));
    push("attention.w_qt".into(), (dh, dh));
    push("attention.b_qt".into(), (1, dh));
    push("attention.w_q".into(), (dh, dh));
    push("attention.b_q".into(), (1, dh));
    push("attention.v_at".into(), (1, dh));
    push("attention.v_a".into(), (1, dh));
    let (first_in, second_in) = config.pointer_inputs();
    let first = config.first_entity();
    for entity in [Entity::Aspect, Entity::Opinion] {
        let input = if entity == first { first_in } else { second_in };
        let prefix = format!("pointer.{}", entity.name());
        lstm(&mut push, &format!("{prefix}.fwd"), input, dp / 2);
        lstm(&mut push, &format!("{prefix}.bwd"), input, dp / 2);
        push(format!("{prefix}.w_s"), (1, dp));
        push(format!("{prefix}.b_s"), (1, 1));
        push(format!("{prefix}.w_e"), (1, dp));
        push(format!("{prefix}.b_e"), (1, 1));
    }
    push("sentiment.w".into(), (SentimentLabel::COUNT, config.tuple_dim() + dh));
    push("sentiment.b".into(), (1, SentimentLabel::COUNT));
    out
}

impl ParamIds {
    fn resolve<F: Real>(params: &ParamStore<F>) -> Result<Self> {
        let id = |name: &str| {
            params
                .id(name)
                .ok_or_else(|| PasteError::Checkpoint(format!("missing parameter '{name}'")))
        };
        let lstm = |prefix: &str| -> Result<LstmIds> {
            Ok(LstmIds {
                w_ih: id(&format!("{prefix}.w_ih"))?,
                w_hh: id(&format!("{prefix}.w_hh"))?,
                b: id(&format!("{prefix}.b"))?,
            })
        };
        let bilstm = |prefix: &str| -> Result<BiLstmIds> {
            Ok(BiLstmIds {
                fwd: lstm(&format!("{prefix}.fwd"))?,
                bwd: lstm(&format!("{prefix}.bwd"))?,
            })
        };
        let pointer = |entity: &str| -> Result<PointerIds> {
            let p = format!("pointer.{entity}");
            Ok(PointerIds {
                lstm: bilstm(&p)?,
                w_s: id(&format!("{p}.w_s"))?,
                b_s: id(&format!("{p}.b_s"))?,
                w_e: id(&format!("{p}.w_e"))?,
                b_e: id(&format!("{p}.b_e"))?,
            })
        };
        Ok(ParamIds {
            word: id("embed.word")?,
            pos: id("embed.pos")?,
            dep: id("embed.dep")?,
            encoder: bilstm("encoder")?,
            decoder: lstm("decoder")?,
            w_tup: id("attention.w_tup")?,
            b_tup: id("attention.b_tup")?,
            w_u: id("attention.w_u")?,
            w_qt: id("attention.w_qt")?,
            b_qt: id("attention.b_qt")?,
            w_q: id("attention.w_q")?,
            b_q: id("attention.b_q")?,
            v_at: id("attention.v_at")?,
            v_a: id("attention.v_a")?,
            aspect: pointer("aspect")?,
            opinion: pointer("opinion")?,
            senti_w: id("sentiment.w")?,
            senti_b: id("sentiment.b")?,
        })
    }
}

/// A configured network plus its parameters.
#[derive(Debug, Clone)]
pub struct PasteModel<F: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    ids: ParamIds,
}

impl<F: Real> PasteModel<F> {
    /// Wraps an existing parameter store after checking names and shapes.
    pub fn from_params(config: ModelConfig, vocab: &Vocabulary, params: ParamStore<F>) -> Result<Self> {
        config.validate()?;
        for (name, shape) in parameter_shapes(&config, vocab) {
            let t = params
                .by_name(&name)
                .ok_or_else(|| PasteError::Checkpoint(format!("missing parameter '{name}'")))?;
            if t.dim() != shape {
                return Err(PasteError::Shape(format!(
                    "parameter '{name}' has shape {:?}, configuration requires {shape:?}",
                    t.dim()
                )));
            }
        }
        let ids = ParamIds::resolve(&params)?;
        Ok(PasteModel { config, params, ids })
    }

    /// Fresh parameters: uniform in ±1/sqrt(fan) for recurrent and dense
    /// layers, ±0.1 for POS/DEP embeddings, `word_init` for words.
    pub fn initialize<R: Rng>(
        config: ModelConfig,
        vocab: &Vocabulary,
        word_init: Array2<f32>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, (rows, cols)) in parameter_shapes(&config, vocab) {
            let tensor = if name == "embed.word" {
                if word_init.dim() != (rows, cols) {
                    return Err(PasteError::Shape(format!(
                        "word embedding init is {:?}, expected {:?}",
                        word_init.dim(),
                        (rows, cols)
                    )));
                }
                word_init.mapv(|x| lit::<F>(x as f64))
            } else {
                let bound = if name.starts_with("embed.") {
                    0.1
                } else if is_lstm_weight(&name) {
                    let hidden = lstm_hidden(&name, &config);
                    1.0 / (hidden as f64).sqrt()
                } else {
                    let fan_in = fan_in(&name, cols, &config);
                    1.0 / (fan_in.max(1) as f64).sqrt()
                };
                Array2::from_shape_fn((rows, cols), |_| lit::<F>(rng.gen_range(-bound..=bound)))
            };
            params.insert(name, tensor);
        }
        Self::from_params(config, vocab, params)
    }

    pub fn cast<G: Real>(&self) -> PasteModel<G> {
        PasteModel {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids,
        }
    }

    /// Mirror image under the other generation direction.
    ///
    /// The two pointer networks trade places and every weight block that
    /// reads the tuple vector has its aspect and opinion halves swapped, so
    /// the mirrored model emits the same first/second-entity distributions
    /// and the same sentiment distributions on every input.
    pub fn mirror_direction(&self) -> PasteModel<F> {
        let mut config = self.config.clone();
        config.direction = match config.direction {
            GenerationDirection::AspectFirst => GenerationDirection::OpinionFirst,
            GenerationDirection::OpinionFirst => GenerationDirection::AspectFirst,
        };
        let half = 2 * self.config.d_p;
        let swap_halves = |t: &Array2<F>, offset: usize| {
            let mut out = t.clone();
            out.slice_mut(s![.., offset..offset + half])
                .assign(&t.slice(s![.., offset + half..offset + 2 * half]));
            out.slice_mut(s![.., offset + half..offset + 2 * half])
                .assign(&t.slice(s![.., offset..offset + half]));
            out
        };
        let mut params = ParamStore::new();
        for (name, t) in self.params.iter() {
            let renamed = if let Some(rest) = name.strip_prefix("pointer.aspect.") {
                format!("pointer.opinion.{rest}")
            } else if let Some(rest) = name.strip_prefix("pointer.opinion.") {
                format!("pointer.aspect.{rest}")
            } else {
                name.to_string()
            };
            let tensor = match name {
                "attention.w_tup" | "sentiment.w" => swap_halves(t, 0),
                "decoder.w_ih" => swap_halves(t, self.config.d_h),
                _ => t.clone(),
            };
            params.insert(renamed, tensor);
        }
        let ids = ParamIds::resolve(&params).expect("mirrored store has every parameter");
        PasteModel { config, params, ids }
    }

    pub fn network(&self) -> Network<'_> {
        Network {
            config: &self.config,
            ids: self.ids,
        }
    }

    /// Runs `steps` decoding steps and returns plain values.
    pub fn forward_values(&self, sentence: &EncodedSentence, steps: usize) -> Result<Vec<DecoderStepOutput<F>>> {
        if steps == 0 {
            return Err(PasteError::Config("forward needs at least one step".into()));
        }
        let mut g = Graph::new(&self.params);
        let net = self.network();
        let nodes = net.forward(&mut g, sentence, steps, None::<&mut rand::rngs::ThreadRng>)?;
        Ok(nodes.iter().map(|n| n.values(&g)).collect())
    }
}

fn is_lstm_weight(name: &str) -> bool {
    let recurrent = ["encoder.", "decoder.", "pointer."].iter().any(|p| name.starts_with(p));
    recurrent && [".w_ih", ".w_hh", ".b"].iter().any(|s| name.ends_with(s))
}

fn lstm_hidden(name: &str, config: &ModelConfig) -> usize {
    if name.starts_with("encoder.") {
        config.d_h / 2
    } else if name.starts_with("decoder.") {
        config.d_h
    } else {
        config.d_p / 2
    }
}

fn fan_in(name: &str, cols: usize, config: &ModelConfig) -> usize {
    match name {
        "attention.b_tup" => config.tuple_dim(),
        "attention.b_qt" | "attention.b_q" => config.d_h,
        "sentiment.b" => config.tuple_dim() + config.d_h,
        n if n.ends_with(".b_s") || n.ends_with(".b_e") => config.d_p,
        _ => cols,
    }
}

/// Graph nodes for one entity's pointer output.
#[derive(Debug, Clone, Copy)]
pub struct EntityNodes {
    /// n x 1 start distribution.
    pub start: NodeId,
    /// n x 1 end distribution.
    pub end: NodeId,
    /// 1 x 2·d_p span vector.
    pub vector: NodeId,
    /// n x d_p pointer Bi-LSTM states.
    pub states: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct PointerNodes {
    pub aspect: EntityNodes,
    pub opinion: EntityNodes,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionNodes {
    /// 1 x d_h context vector.
    pub context: NodeId,
    /// n x 1 averaged attention weights.
    pub weights: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct StepNodes {
    pub pointers: PointerNodes,
    pub tuple: NodeId,
    pub tuple_prev: NodeId,
    pub sentiment: NodeId,
    pub hidden: NodeId,
    pub attention: AttentionNodes,
}

/// Recurrent decoder state carried between steps.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub encoded: NodeId,
    pub hidden: NodeId,
    pub cell: NodeId,
    pub tuple_prev: NodeId,
}

/// Plain values of one decoding step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecoderStepOutput<F> {
    pub aspect_start: Vec<F>,
    pub aspect_end: Vec<F>,
    pub opinion_start: Vec<F>,
    pub opinion_end: Vec<F>,
    pub aspect_vector: Vec<F>,
    pub opinion_vector: Vec<F>,
    pub tuple: Vec<F>,
    pub tuple_prev: Vec<F>,
    pub sentiment: Vec<F>,
    pub hidden: Vec<F>,
}

impl<F: Real> DecoderStepOutput<F> {
    pub fn predicted_sentiment(&self) -> SentimentLabel {
        let best = self
            .sentiment
            .iter()
            .enumerate()
            .fold((0, F::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        SentimentLabel::from_index(best.0).expect("four sentiment classes")
    }

    /// (start, end) distributions of the (first, second) generated entity.
    pub fn by_generation_order(&self, direction: GenerationDirection) -> [(&[F], &[F]); 2] {
        let aspect = (self.aspect_start.as_slice(), self.aspect_end.as_slice());
        let opinion = (self.opinion_start.as_slice(), self.opinion_end.as_slice());
        match direction {
            GenerationDirection::AspectFirst => [aspect, opinion],
            GenerationDirection::OpinionFirst => [opinion, aspect],
        }
    }
}

fn row_vec<F: Real>(g: &Graph<'_, F>, id: NodeId) -> Vec<F> {
    g.value(id).iter().copied().collect()
}

impl StepNodes {
    pub fn values<F: Real>(&self, g: &Graph<'_, F>) -> DecoderStepOutput<F> {
        DecoderStepOutput {
            aspect_start: row_vec(g, self.pointers.aspect.start),
            aspect_end: row_vec(g, self.pointers.aspect.end),
            opinion_start: row_vec(g, self.pointers.opinion.start),
            opinion_end: row_vec(g, self.pointers.opinion.end),
            aspect_vector: row_vec(g, self.pointers.aspect.vector),
            opinion_vector: row_vec(g, self.pointers.opinion.vector),
            tuple: row_vec(g, self.tuple),
            tuple_prev: row_vec(g, self.tuple_prev),
            sentiment: row_vec(g, self.sentiment),
            hidden: row_vec(g, self.hidden),
        }
    }
}

/// Builds the network's operations on a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct Network<'m> {
    config: &'m ModelConfig,
    ids: ParamIds,
}

impl<'m> Network<'m> {
    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    fn bilstm<F: Real>(&self, g: &mut Graph<'_, F>, x: NodeId, ids: BiLstmIds) -> NodeId {
        let run = |g: &mut Graph<'_, F>, l: LstmIds, reverse: bool| {
            let (wi, wh, b) = (g.param(l.w_ih), g.param(l.w_hh), g.param(l.b));
            g.lstm_seq(x, wi, wh, b, reverse)
        };
        let fwd = run(g, ids.fwd, false);
        let bwd = run(g, ids.bwd, true);
        g.concat_cols(fwd, bwd)
    }

    /// Contextual token states `H_E` (n x d_h).
    ///
    /// Dropout on the input embeddings is applied only when `dropout_rng` is
    /// given.
    pub fn encode_sentence<F: Real, R: Rng>(
        &self,
        g: &mut Graph<'_, F>,
        sentence: &EncodedSentence,
        dropout_rng: Option<&mut R>,
    ) -> Result<NodeId> {
        let n = sentence.len();
        if n == 0 {
            return Err(PasteError::Empty("cannot encode an empty sentence".into()));
        }
        if sentence.pos.len() != n || sentence.dep.len() != n {
            return Err(PasteError::Unannotated);
        }
        let words = g.embed(self.ids.word, &sentence.words);
        let pos = g.embed(self.ids.pos, &sentence.pos);
        let dep = g.embed(self.ids.dep, &sentence.dep);
        let x = g.concat_cols(words, pos);
        let mut x = g.concat_cols(x, dep);
        if let Some(rng) = dropout_rng {
            let p = self.config.dropout;
            if p > 0.0 {
                let keep = lit::<F>(1.0 / (1.0 - p));
                let mask = Array2::from_shape_fn(g.shape(x), |_| if rng.gen::<f64>() < p { F::zero() } else { keep });
                x = g.mul_const(x, mask);
            }
        }
        Ok(self.bilstm(g, x, self.ids.encoder))
    }

    pub fn attention_step<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        encoded: NodeId,
        hidden_prev: NodeId,
        tuple_prev: NodeId,
    ) -> Result<AttentionNodes> {
        let n = g.shape(encoded).0;
        if n == 0 {
            return Err(PasteError::Empty("attention over zero tokens".into()));
        }
        let id = self.ids;
        let w_u = g.param(id.w_u);
        let u = g.linear(encoded, w_u, None);
        let (w_tup, b_tup) = (g.param(id.w_tup), g.param(id.b_tup));
        let tup = g.linear(tuple_prev, w_tup, Some(b_tup));
        let (w_qt, b_qt) = (g.param(id.w_qt), g.param(id.b_qt));
        let q_tuple = g.linear(tup, w_qt, Some(b_qt));
        let (w_q, b_q) = (g.param(id.w_q), g.param(id.b_q));
        let q_hidden = g.linear(hidden_prev, w_q, Some(b_q));
        let mut distributions = [NodeId::clone(&u); 2];
        for (slot, (q, v)) in distributions.iter_mut().zip([(q_tuple, id.v_at), (q_hidden, id.v_a)]) {
            let pre = g.add_row(u, q);
            let act = g.tanh(pre);
            let v = g.param(v);
            let scores = g.linear(act, v, None);
            *slot = g.softmax(scores);
        }
        let sum = g.add(distributions[0], distributions[1]);
        let weights = g.scale(sum, lit(0.5));
        let row = g.reshape(weights, 1, n);
        let context = g.matmul(row, encoded);
        Ok(AttentionNodes { context, weights })
    }

    /// One decoder LSTM update on `[context ; tuple_prev]`; returns (h, c).
    pub fn decoder_step<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        context: NodeId,
        tuple_prev: NodeId,
        hidden_prev: NodeId,
        cell_prev: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let dh = self.config.d_h;
        let expect = [(context, dh), (tuple_prev, self.config.tuple_dim()), (hidden_prev, dh), (cell_prev, dh)];
        for (node, width) in expect {
            if g.shape(node) != (1, width) {
                return Err(PasteError::Shape(format!(
                    "decoder input has shape {:?}, expected (1, {width})",
                    g.shape(node)
                )));
            }
        }
        let input = g.concat_cols(context, tuple_prev);
        let l = self.ids.decoder;
        let (wi, wh, b) = (g.param(l.w_ih), g.param(l.w_hh), g.param(l.b));
        let hc = g.lstm_cell(input, hidden_prev, cell_prev, wi, wh, b);
        Ok((g.slice_cols(hc, 0, dh), g.slice_cols(hc, dh, dh)))
    }

    fn pointer_head<F: Real>(&self, g: &mut Graph<'_, F>, input: NodeId, ids: PointerIds) -> EntityNodes {
        let n = g.shape(input).0;
        let states = self.bilstm(g, input, ids.lstm);
        let mut dist = |w, b| {
            let (w, b) = (g.param(w), g.param(b));
            let scores = g.linear(states, w, Some(b));
            g.softmax(scores)
        };
        let start = dist(ids.w_s, ids.b_s);
        let end = dist(ids.w_e, ids.b_e);
        let start_row = g.reshape(start, 1, n);
        let end_row = g.reshape(end, 1, n);
        let start_vec = g.matmul(start_row, states);
        let end_vec = g.matmul(end_row, states);
        let vector = g.concat_cols(start_vec, end_vec);
        EntityNodes {
            start,
            end,
            vector,
            states,
        }
    }

    pub fn pointer_pass<F: Real>(&self, g: &mut Graph<'_, F>, encoded: NodeId, hidden: NodeId) -> PointerNodes {
        let n = g.shape(encoded).0;
        let (first_ids, second_ids) = match self.config.first_entity() {
            Entity::Aspect => (self.ids.aspect, self.ids.opinion),
            Entity::Opinion => (self.ids.opinion, self.ids.aspect),
        };
        let hidden_rows = g.repeat_rows(hidden, n);
        let first_in = g.concat_cols(encoded, hidden_rows);
        let first = self.pointer_head(g, first_in, first_ids);
        let second_in = g.concat_cols(encoded, first.states);
        let second_in = g.concat_cols(second_in, hidden_rows);
        let second = self.pointer_head(g, second_in, second_ids);
        match self.config.first_entity() {
            Entity::Aspect => PointerNodes {
                aspect: first,
                opinion: second,
            },
            Entity::Opinion => PointerNodes {
                aspect: second,
                opinion: first,
            },
        }
    }

    /// Softmax over `{POS, NEG, NEU, NONE}` from `[tup_t ; h_t]`.
    pub fn classify_sentiment<F: Real>(&self, g: &mut Graph<'_, F>, tuple: NodeId, hidden: NodeId) -> NodeId {
        let input = g.concat_cols(tuple, hidden);
        let (w, b) = (g.param(self.ids.senti_w), g.param(self.ids.senti_b));
        let scores = g.linear(input, w, Some(b));
        g.softmax(scores)
    }

    pub fn initial_state<F: Real>(&self, g: &mut Graph<'_, F>, encoded: NodeId) -> DecoderState {
        let dh = self.config.d_h;
        DecoderState {
            encoded,
            hidden: g.constant(Array2::zeros((1, dh))),
            cell: g.constant(Array2::zeros((1, dh))),
            tuple_prev: g.constant(Array2::zeros((1, self.config.tuple_dim()))),
        }
    }

    /// One full decoding step; advances `state`.
    pub fn step<F: Real>(&self, g: &mut Graph<'_, F>, state: &mut DecoderState) -> Result<StepNodes> {
        let attention = self.attention_step(g, state.encoded, state.hidden, state.tuple_prev)?;
        let (hidden, cell) = self.decoder_step(g, attention.context, state.tuple_prev, state.hidden, state.cell)?;
        let pointers = self.pointer_pass(g, state.encoded, hidden);
        let tuple = g.concat_cols(pointers.aspect.vector, pointers.opinion.vector);
        let sentiment = self.classify_sentiment(g, tuple, hidden);
        let out = StepNodes {
            pointers,
            tuple,
            tuple_prev: state.tuple_prev,
            sentiment,
            hidden,
            attention,
        };
        state.hidden = hidden;
        state.cell = cell;
        state.tuple_prev = g.add(state.tuple_prev, tuple);
        Ok(out)
    }

    pub fn forward<F: Real, R: Rng>(
        &self,
        g: &mut Graph<'_, F>,
        sentence: &EncodedSentence,
        steps: usize,
        dropout_rng: Option<&mut R>,
    ) -> Result<Vec<StepNodes>> {
        if steps == 0 {
            return Err(PasteError::Config("forward needs at least one step".into()));
        }
        let encoded = self.encode_sentence(g, sentence, dropout_rng)?;
        let mut state = self.initial_state(g, encoded);
        (0..steps).map(|_| self.step(g, &mut state)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, AnnotatedSentence};
    use crate::triplet::OpinionTriplet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (Vocabulary, EncodedSentence) {
        let words = ["the", "food", "was", "tasty", "."];
        let s = AnnotatedSentence::new(
            words.iter().map(|w| w.to_string()).collect(),
            Some(["DET", "NOUN", "AUX", "ADJ", "PUNCT"].iter().map(|w| w.to_string()).collect()),
            Some(["det", "nsubj", "cop", "root", "punct"].iter().map(|w| w.to_string()).collect()),
            vec![OpinionTriplet::new(1, 1, 3, 3, SentimentLabel::Pos)],
        )
        .unwrap();
        let vocab = build_vocab(std::slice::from_ref(&s)).unwrap();
        let enc = vocab.encode(&s).unwrap();
        (vocab, enc)
    }

    fn model(config: ModelConfig, seed: u64) -> (PasteModel<f64>, EncodedSentence) {
        let (vocab, enc) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = vocab.word_embedding_init(None, config.d_w, &mut rng).unwrap();
        (PasteModel::initialize(config, &vocab, words, &mut rng).unwrap(), enc)
    }

    #[test]
    fn default_shapes() {
        let (m, enc) = model(ModelConfig { dropout: 0.0, ..ModelConfig::default() }, 1);
        let mut g = Graph::new(&m.params);
        let h = m.network().encode_sentence(&mut g, &enc, None::<&mut ChaCha8Rng>).unwrap();
        assert_eq!(g.shape(h), (5, 300));
        let out = m.forward_values(&enc, 1).unwrap();
        assert_eq!(out[0].aspect_vector.len(), 600);
        assert_eq!(out[0].opinion_vector.len(), 600);
        assert_eq!(out[0].tuple.len(), 1200);
        assert_eq!(out[0].hidden.len(), 300);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { d_h: 7, ..ModelConfig::tiny() }.validate().is_err());
        assert!(ModelConfig { d_p: 0, ..ModelConfig::tiny() }.validate().is_err());
        assert!(ModelConfig { dropout: 1.0, ..ModelConfig::tiny() }.validate().is_err());
        assert!(ModelConfig { max_steps: 0, ..ModelConfig::tiny() }.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (m, enc) = model(ModelConfig::tiny(), 2);
        assert_eq!(m.forward_values(&enc, 2).unwrap(), m.forward_values(&enc, 2).unwrap());
    }

    #[test]
    fn dropout_changes_training_encoding_only() {
        let (m, enc) = model(ModelConfig { dropout: 0.5, ..ModelConfig::tiny() }, 3);
        let net = m.network();
        let encode = |rng: Option<&mut ChaCha8Rng>| {
            let mut g = Graph::new(&m.params);
            let h = net.encode_sentence(&mut g, &enc, rng).unwrap();
            g.value(h).clone()
        };
        let eval = encode(None);
        assert_eq!(eval, encode(None));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_ne!(eval, encode(Some(&mut rng)));
    }

    #[test]
    fn unannotated_encoding_rejected() {
        let (m, mut enc) = model(ModelConfig::tiny(), 4);
        enc.pos.clear();
        assert!(matches!(m.forward_values(&enc, 1), Err(PasteError::Unannotated)));
    }

    #[test]
    fn single_token_attention_returns_that_token() {
        let (m, _) = model(ModelConfig::tiny(), 5);
        let enc = EncodedSentence {
            words: vec![2],
            pos: vec![2],
            dep: vec![2],
        };
        let net = m.network();
        let mut g = Graph::new(&m.params);
        let h = net.encode_sentence(&mut g, &enc, None::<&mut ChaCha8Rng>).unwrap();
        let st = net.initial_state(&mut g, h);
        let att = net.attention_step(&mut g, h, st.hidden, st.tuple_prev).unwrap();
        assert_eq!(g.value(att.weights)[[0, 0]], 1.0);
        assert_eq!(g.value(att.context), g.value(h));
    }

    #[test]
    fn decoder_rejects_wrong_widths() {
        let (m, _) = model(ModelConfig::tiny(), 6);
        let net = m.network();
        let mut g = Graph::new(&m.params);
        let a = g.constant(Array2::zeros((1, 8)));
        let wrong = g.constant(Array2::zeros((1, 5)));
        assert!(net.decoder_step(&mut g, a, wrong, a, a).is_err());
        let tup = g.constant(Array2::zeros((1, 32)));
        let (h, c) = net.decoder_step(&mut g, a, tup, a, a).unwrap();
        assert_eq!((g.shape(h), g.shape(c)), ((1, 8), (1, 8)));
    }

    #[test]
    fn zero_width_feature_embeddings() {
        let config = ModelConfig {
            d_pos: 0,
            d_dep: 0,
            ..ModelConfig::tiny()
        };
        let (m, enc) = model(config, 7);
        let out = m.forward_values(&enc, 2).unwrap();
        let total: f64 = out[1].aspect_start.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mirror_is_an_involution() {
        let (m, _) = model(ModelConfig::tiny(), 8);
        let back = m.mirror_direction().mirror_direction();
        assert_eq!(back.config, m.config);
        for (name, t) in m.params.iter() {
            assert_eq!(back.params.by_name(name).unwrap(), t, "{name}");
        }
    }
}
