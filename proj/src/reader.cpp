#include "corefgru/reader.hpp"

#include <set>

namespace corefgru {

namespace {

std::string layer_prefix(Index k, const char* dir) { return "layer" + std::to_string(k) + "." + dir; }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void validate_document(const TokenizedDocument& doc, const char* what) {
  if (doc.tokens.empty()) throw InvalidShape(std::string(what) + " is empty");
  for (const auto& t : doc.tokens) {
    if (t.find('\n') != std::string::npos) throw ParseError(std::string(what) + " token contains a newline");
  }
}

}  // namespace

void ReaderConfig::validate() const {
  if (layers < 1) throw RangeError("reader needs at least one layer");
  if (hidden < 1 || embedding < 1) throw RangeError("hidden and embedding sizes must be positive");
  if (recurrence == CellKind::CorefGru && hidden % 2 != 0) throw InvalidShape("C-GRU hidden size must be even");
  if (cluster_cap < 1) throw RangeError("cluster cap must be at least 1");
  if (dropout < 0.0 || dropout >= 1.0) throw RangeError("dropout must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() { add(kUnknown); }

Index Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const auto id = static_cast<Index>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

Index Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? 0 : it->second;
}

Vocabulary Vocabulary::build(const std::vector<RCInstance>& train) {
  Vocabulary v;
  for (const auto& x : train) {
    for (const auto& t : x.passage.tokens) v.add(t);
    for (const auto& t : x.question.tokens) v.add(t);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.empty() || tokens.front() != kUnknown) throw IncompatibleCheckpoint("vocabulary must start with <unk>");
  Vocabulary v;
  for (std::size_t i = 1; i < tokens.size(); ++i) v.add(tokens[i]);
  if (v.size() != static_cast<Index>(tokens.size())) throw IncompatibleCheckpoint("vocabulary has duplicate tokens");
  return v;
}

// ---------------------------------------------------------------------------
// Model

Index ReaderModel::input_width() const {
  return config_.embedding + (config_.use_query_feature ? 1 : 0) + (config_.use_onehot_coref ? config_.cluster_cap : 0);
}

ReaderModel::ReaderModel(ReaderConfig config, Vocabulary vocab, std::vector<std::string> classes, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), classes_(std::move(classes)) {
  config_.validate();
  if (config_.answer_head == AnswerHead::Classify && classes_.empty()) {
    throw LabelError("classification head needs a class vocabulary");
  }
  std::mt19937_64 rng(seed);
  const Index d = config_.hidden;
  const Index e = config_.embedding;
  params_.add("embed", glorot_uniform(e, vocab_.size(), vocab_.size(), e, rng));
  add_cell_params(params_, "query.fwd", CellKind::Gru, d, e, rng);
  add_cell_params(params_, "query.bwd", CellKind::Gru, d, e, rng);
  for (Index k = 0; k < config_.layers; ++k) {
    const Index in = k == 0 ? input_width() : 2 * d;
    add_cell_params(params_, layer_prefix(k, "fwd"), config_.recurrence, d, in, rng);
    add_cell_params(params_, layer_prefix(k, "bwd"), config_.recurrence, d, in, rng);
  }
  if (config_.answer_head == AnswerHead::AttentionSum) {
    params_.add("head.query", glorot_uniform(2 * d, 2 * d, 2 * d, 2 * d, rng));
  } else {
    const auto c = static_cast<Index>(classes_.size());
    params_.add("head.W", glorot_uniform(c, 4 * d, 4 * d, c, rng));
    params_.add("head.b", Tensor::Zero(c, 1));
  }
}

ReaderModel ReaderModel::from_parts(ReaderConfig config, Vocabulary vocab, std::vector<std::string> classes,
                                    ParameterSet params) {
  ReaderModel reference(config, vocab, classes, 0);
  const ParameterSet& want = reference.parameters();
  if (want.size() != params.size()) throw IncompatibleCheckpoint("parameter count does not match configuration");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (!params.contains(want.name(i))) throw IncompatibleCheckpoint("missing tensor '" + want.name(i) + "'");
    const Tensor& got = params.at(want.name(i));
    if (got.rows() != want[i].rows() || got.cols() != want[i].cols()) {
      throw IncompatibleCheckpoint("tensor '" + want.name(i) + "' has the wrong shape");
    }
  }
  ReaderModel model;
  model.config_ = config;
  model.vocab_ = std::move(vocab);
  model.classes_ = std::move(classes);
  for (std::size_t i = 0; i < want.size(); ++i) model.params_.add(want.name(i), params.at(want.name(i)));
  return model;
}

EncodedInstance ReaderModel::prepare(const RCInstance& x, const CorruptionSpec& corruption) const {
  validate_document(x.passage, "passage");
  validate_document(x.question, "question");
  EncodedInstance out;
  out.id = x.id;
  std::set<std::string> question_tokens(x.question.tokens.begin(), x.question.tokens.end());
  for (const auto& t : x.passage.tokens) {
    out.passage_ids.push_back(vocab_.id(t));
    out.query_feature.push_back(question_tokens.count(t) != 0 ? 1.0 : 0.0);
  }
  for (const auto& t : x.question.tokens) out.question_ids.push_back(vocab_.id(t));

  const CorefClusters clusters =
      cap_clusters(normalize_clusters(x.clusters, x.passage.size()), static_cast<std::size_t>(config_.cluster_cap));
  out.links = build_antecedents(x.passage, clusters);
  if (corruption.mode) {
    out.links = corrupt_annotations(out.links, *corruption.mode, corruption.fraction, corruption.seed ^ fnv1a(x.id));
  }

  if (config_.answer_head == AnswerHead::AttentionSum) {
    for (const auto& c : x.candidates) {
      if (c.positions.empty()) throw MissingMention("candidate '" + c.text + "' has no passage position");
      std::vector<Index> starts;
      for (const auto& p : c.positions) {
        if (p.start < 0 || p.start >= x.passage.size()) throw RangeError("candidate position out of range");
        starts.push_back(p.start);
      }
      out.candidate_starts.push_back(std::move(starts));
    }
    const auto idx = x.answer_index();
    if (!idx) throw LabelError("answer '" + x.answer + "' is not among the candidates of " + x.id);
    out.target = static_cast<Index>(*idx);
  } else {
    out.candidate_starts.assign(classes_.size(), {});
    Index target = -1;
    for (std::size_t i = 0; i < classes_.size(); ++i) {
      if (classes_[i] == x.answer) target = static_cast<Index>(i);
    }
    if (target < 0) throw LabelError("answer '" + x.answer + "' is outside the class vocabulary");
    out.target = target;
  }
  return out;
}

std::vector<EncodedInstance> ReaderModel::prepare_all(const std::vector<RCInstance>& instances,
                                                      const CorruptionSpec& corruption) const {
  std::vector<EncodedInstance> out;
  out.reserve(instances.size());
  for (const auto& x : instances) out.push_back(prepare(x, corruption));
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass

template <typename S>
std::pair<BasicVar<S>, BasicVar<S>> embed(BasicTape<S>& tape, const ReaderModel& model, const EncodedInstance& x) {
  using Var = BasicVar<S>;
  using M = MatrixT<S>;
  const ReaderConfig& cfg = model.config();
  const Var table = tape.param("embed");
  Var passage = gather_cols(table, x.passage_ids);
  const Var question = gather_cols(table, x.question_ids);
  std::vector<Var> parts{passage};
  const Index T = x.length();
  if (cfg.use_query_feature) {
    M f(1, T);
    for (Index t = 0; t < T; ++t) f(0, t) = static_cast<S>(x.query_feature[static_cast<std::size_t>(t)]);
    parts.push_back(tape.constant(std::move(f)));
  }
  if (cfg.use_onehot_coref) {
    M onehot = M::Zero(cfg.cluster_cap, T);
    for (Index t = 0; t < T; ++t) {
      const auto& c = x.links.cluster_of[static_cast<std::size_t>(t)];
      if (c && *c < cfg.cluster_cap) onehot(*c, t) = S(1);
    }
    parts.push_back(tape.constant(std::move(onehot)));
  }
  if (parts.size() > 1) passage = concat(parts, 0);
  return {passage, question};
}

template <typename S>
BasicVar<S> gated_attention(BasicVar<S> passage, BasicVar<S> question) {
  using Var = BasicVar<S>;
  if (passage.rows() != question.rows()) throw InvalidShape("gated attention: passage and question widths differ");
  const Var scores = matmul(question, passage, true);  // Q x T
  const Var weights = softmax(scores);                  // over question positions
  const Var attended = matmul(question, weights);       // h x T
  return hadamard(passage, attended);
}

template <typename S>
BasicReaderOutput<S> encode(BasicTape<S>& tape, const ReaderModel& model, const EncodedInstance& x,
                            std::mt19937_64* rng) {
  using Var = BasicVar<S>;
  const ReaderConfig& cfg = model.config();
  const Index d = cfg.hidden;
  auto [passage, question] = embed(tape, model, x);

  BasicReaderOutput<S> out;
  out.question_states = record_bidirectional<S>(tape, "query.fwd", "query.bwd", CellKind::Gru, question, nullptr);
  const Index Q = question.cols();
  out.question_summary = concat({slice(out.question_states, 0, d, Q - 1, 1), slice(out.question_states, d, d, 0, 1)}, 0);

  const AntecedentMap* links = cfg.recurrence == CellKind::CorefGru ? &x.links : nullptr;
  Var h = passage;
  for (Index k = 0; k < cfg.layers; ++k) {
    h = record_bidirectional(tape, layer_prefix(k, "fwd"), layer_prefix(k, "bwd"), cfg.recurrence, h, links, cfg.cell);
    if (k + 1 < cfg.layers) {
      if (rng != nullptr) h = dropout(h, cfg.dropout, *rng);
      h = gated_attention(h, out.question_states);
    }
  }
  out.passage_states = h;
  return out;
}

template <typename S>
BasicVar<S> attention_sum_answer(BasicVar<S> passage_states, BasicVar<S> query,
                                 const std::vector<std::vector<Index>>& candidate_starts) {
  using Var = BasicVar<S>;
  using M = MatrixT<S>;
  if (candidate_starts.empty()) throw MissingMention("no candidates");
  const Index T = passage_states.cols();
  std::size_t total = 0;
  for (const auto& c : candidate_starts) {
    if (c.empty()) throw MissingMention("candidate without passage positions");
    total += c.size();
  }
  // Selection of candidate start positions, then aggregation per candidate.
  M select = M::Zero(static_cast<Index>(total), T);
  M group = M::Zero(static_cast<Index>(candidate_starts.size()), static_cast<Index>(total));
  Index row = 0;
  for (std::size_t c = 0; c < candidate_starts.size(); ++c) {
    for (Index t : candidate_starts[c]) {
      if (t < 0 || t >= T) throw RangeError("candidate position out of range");
      select(row, t) = S(1);
      group(static_cast<Index>(c), row) = S(1);
      ++row;
    }
  }
  BasicTape<S>& tape = passage_states.tape();
  const Var scores = matmul(passage_states, query, true);  // T x 1
  const Var picked = matmul(tape.constant(std::move(select)), scores);
  return matmul(tape.constant(std::move(group)), softmax(picked));
}

template <typename S>
BasicVar<S> classify_answer(BasicTape<S>& tape, BasicVar<S> question_summary, BasicVar<S> passage_states) {
  using Var = BasicVar<S>;
  const Var features = concat({question_summary, mean_cols(passage_states)}, 0);
  return softmax(matmul(tape.param("head.W"), features) + tape.param("head.b"));
}

template <typename S>
BasicReaderOutput<S> forward(BasicTape<S>& tape, const ReaderModel& model, const EncodedInstance& x,
                             std::mt19937_64* rng) {
  using Var = BasicVar<S>;
  BasicReaderOutput<S> out = encode(tape, model, x, rng);
  if (model.config().answer_head == AnswerHead::AttentionSum) {
    const Var query = matmul(tape.param("head.query"), out.question_summary);
    out.probabilities = attention_sum_answer(out.passage_states, query, x.candidate_starts);
  } else {
    out.probabilities = classify_answer(tape, out.question_summary, out.passage_states);
  }
  out.loss = cross_entropy(out.probabilities, x.target);
  return out;
}

#define COREFGRU_INSTANTIATE(S)                                                                                   \
  template std::pair<BasicVar<S>, BasicVar<S>> embed(BasicTape<S>&, const ReaderModel&, const EncodedInstance&);   \
  template BasicVar<S> gated_attention(BasicVar<S>, BasicVar<S>);                                                 \
  template BasicReaderOutput<S> encode(BasicTape<S>&, const ReaderModel&, const EncodedInstance&, std::mt19937_64*); \
  template BasicVar<S> attention_sum_answer(BasicVar<S>, BasicVar<S>, const std::vector<std::vector<Index>>&);    \
  template BasicVar<S> classify_answer(BasicTape<S>&, BasicVar<S>, BasicVar<S>);                                  \
  template BasicReaderOutput<S> forward(BasicTape<S>&, const ReaderModel&, const EncodedInstance&, std::mt19937_64*);

COREFGRU_INSTANTIATE(double)
COREFGRU_INSTANTIATE(long double)

Index predict(const Tensor& probabilities) {
  Index best = 0;
  for (Index i = 1; i < probabilities.rows(); ++i) {
    if (probabilities(i, 0) > probabilities(best, 0)) best = i;
  }
  return best;
}

}  // namespace corefgru
