#pragma once

// Gated-attention reader over bidirectional GRU or C-GRU layers.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "corefgru/autodiff.hpp"
#include "corefgru/cgru.hpp"
#include "corefgru/coref.hpp"
#include "corefgru/dataset.hpp"

namespace corefgru {

enum class AnswerHead { AttentionSum, Classify };

struct ReaderConfig {
  Index layers = 2;
  Index hidden = 32;
  Index embedding = 32;
  CellKind recurrence = CellKind::CorefGru;
  AnswerHead answer_head = AnswerHead::AttentionSum;
  bool use_query_feature = true;
  bool use_onehot_coref = false;
  // Maximum clusters per instance; also the one-hot width.
  Index cluster_cap = 13;
  double dropout = 0.1;
  CellOptions cell;

  void validate() const;
};

// Token vocabulary; id 0 is the shared unknown token.
class Vocabulary {
 public:
  static constexpr const char* kUnknown = "<unk>";

  Vocabulary();
  static Vocabulary build(const std::vector<RCInstance>& train);

  Index add(const std::string& token);
  Index id(const std::string& token) const;  // 0 when unknown
  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Index> index_;
};

// Corruption applied to antecedent maps when preparing instances.
struct CorruptionSpec {
  std::optional<CorruptionMode> mode;
  double fraction = 0.0;
  std::uint64_t seed = 0;
};

// Instance converted to ids, features and antecedents.
struct EncodedInstance {
  std::string id;
  std::vector<Index> passage_ids;
  std::vector<Index> question_ids;
  std::vector<double> query_feature;  // 1 iff the passage token occurs in the question
  AntecedentMap links;
  std::vector<std::vector<Index>> candidate_starts;
  Index target = 0;  // candidate index (attention sum) or class index

  Index length() const { return static_cast<Index>(passage_ids.size()); }
  Index choices() const { return static_cast<Index>(candidate_starts.size()); }
};

class ReaderModel {
 public:
  ReaderModel() = default;
  ReaderModel(ReaderConfig config, Vocabulary vocab, std::vector<std::string> classes, std::uint64_t seed);

  const ReaderConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<std::string>& classes() const { return classes_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  // Width of a passage input vector.
  Index input_width() const;

  // Rebuilds a model around existing tensors (checkpoint loading).
  static ReaderModel from_parts(ReaderConfig config, Vocabulary vocab, std::vector<std::string> classes,
                                ParameterSet params);

  EncodedInstance prepare(const RCInstance& instance, const CorruptionSpec& corruption = {}) const;
  std::vector<EncodedInstance> prepare_all(const std::vector<RCInstance>& instances,
                                           const CorruptionSpec& corruption = {}) const;

 private:
  ReaderConfig config_;
  Vocabulary vocab_;
  std::vector<std::string> classes_;
  ParameterSet params_;
};

template <typename Scalar>
struct BasicReaderOutput {
  BasicVar<Scalar> passage_states;    // 2d x T after the last layer
  BasicVar<Scalar> question_states;   // 2d x Q
  BasicVar<Scalar> question_summary;  // 2d x 1
  BasicVar<Scalar> probabilities;     // choices x 1
  BasicVar<Scalar> loss;              // 1 x 1
};
using ReaderOutput = BasicReaderOutput<double>;

// The functions below read parameters through the tape, so they run against
// any parameter set with the model's names and shapes (for instance a
// long double copy used as a finite-difference reference).

// Passage (e' x T) and question (e x Q) input vectors.
template <typename S>
std::pair<BasicVar<S>, BasicVar<S>> embed(BasicTape<S>& tape, const ReaderModel& model, const EncodedInstance& x);

// Per passage position: softmax over <p_i, q_j>, then p_i .* sum_j a_j q_j.
template <typename S>
BasicVar<S> gated_attention(BasicVar<S> passage, BasicVar<S> question);

// Stacked bidirectional layers with gated attention between consecutive
// layers. Dropout is applied to inter-layer outputs when `rng` is non-null.
template <typename S>
BasicReaderOutput<S> encode(BasicTape<S>& tape, const ReaderModel& model, const EncodedInstance& x,
                            std::mt19937_64* rng);

// Softmax over candidate start positions, summed per candidate.
template <typename S>
BasicVar<S> attention_sum_answer(BasicVar<S> passage_states, BasicVar<S> query,
                                 const std::vector<std::vector<Index>>& candidate_starts);

// Softmax over classes from concat(question summary, mean passage state).
template <typename S>
BasicVar<S> classify_answer(BasicTape<S>& tape, BasicVar<S> question_summary, BasicVar<S> passage_states);

// Full forward pass including the answer head and cross-entropy loss.
template <typename S>
BasicReaderOutput<S> forward(BasicTape<S>& tape, const ReaderModel& model, const EncodedInstance& x,
                             std::mt19937_64* rng = nullptr);

// argmax with ties broken by the lowest index.
Index predict(const Tensor& probabilities);

}  // namespace corefgru
