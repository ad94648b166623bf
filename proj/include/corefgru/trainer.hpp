#pragma once

// Training loop, evaluation, ablation sweeps and checkpoints.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "corefgru/reader.hpp"
#include "corefgru/taskgen.hpp"

namespace corefgru {

enum class OptimizerKind { SgdMomentum, Adam };

struct TrainConfig {
  double learning_rate = 0.01;
  long halving_interval = 120;
  long batch_size = 32;
  long epochs = 30;
  double dropout = 0.1;
  long cluster_cap = 13;
  long hidden_size = 32;
  long embedding_size = 32;
  long layers = 2;
  CellKind recurrence = CellKind::CorefGru;
  AnswerHead answer_head = AnswerHead::AttentionSum;
  bool use_query_feature = true;
  bool use_onehot_coref = false;
  AlphaMode alpha_mode = AlphaMode::TwoKey;
  bool force_alpha_one = false;
  OptimizerKind optimizer = OptimizerKind::SgdMomentum;
  double momentum = 0.9;
  double clip_norm = 10.0;
  std::uint64_t seed_init = 1;
  std::uint64_t seed_shuffle = 2;
  std::uint64_t seed_dropout = 3;
  long patience = 0;  // epochs without dev improvement before stopping; 0 disables
  // Antecedent corruption applied to every split.
  std::optional<CorruptionMode> corruption;
  double corruption_fraction = 0.0;
  std::uint64_t corruption_seed = 7;

  void validate() const;
  ReaderConfig reader() const;
  CorruptionSpec corruption_spec() const;

  std::map<std::string, std::string> to_map() const;
  static TrainConfig from_map(const std::map<std::string, std::string>& kv);
};

// Flat "key=value" text, '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> read_key_value_file(const std::string& path);
TrainConfig read_train_config(const std::string& path);

// Generator spec with keys task, num_persons, num_objects, num_locations,
// num_statements, pronoun_rate, seed.
GenSpec gen_spec_from_map(const std::map<std::string, std::string>& kv);
GenSpec read_gen_spec(const std::string& path);

// lr0 * 0.5^floor(update / interval)
double learning_rate_at(double lr0, long halving_interval, long update);

struct Metrics {
  std::string setting;
  long update = 0;
  std::string split;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  double exp_neg_loss = 0.0;
  double wall_time_s = 0.0;
  std::size_t count = 0;

  // Every field except wall time.
  bool same_outcome(const Metrics& other) const;
};

inline constexpr const char* kMetricsHeader = "setting,update,split,accuracy,mean_loss,exp_neg_loss,wall_time_s";
std::string metrics_csv_row(const Metrics& m);

struct TrainResult {
  ReaderModel model;  // best-dev parameters
  TrainConfig config;
  std::vector<Metrics> history;
  Metrics best_dev;
  long updates = 0;
};

struct TrainOptions {
  std::string setting = "train";
  bool verbose = false;
};

TrainResult train(const TrainConfig& config, const std::vector<RCInstance>& train_set,
                  const std::vector<RCInstance>& dev_set, const TrainOptions& options = {});

Metrics evaluate(const ReaderModel& model, const std::vector<EncodedInstance>& data, const std::string& split = "eval");
Metrics evaluate(const ReaderModel& model, const std::vector<RCInstance>& data, const CorruptionSpec& corruption = {},
                 const std::string& split = "eval");

enum class SweepKind { RemoveMentions, Randomize, OneHot, GruBaseline };

SweepKind parse_sweep(const std::string& name);

struct AblationRow {
  std::string setting;
  Metrics dev;
  Metrics test;
};

struct AblationData {
  std::vector<RCInstance> train, dev, test;
};

std::vector<AblationRow> ablate(const TrainConfig& config, const AblationData& data, SweepKind sweep,
                                const std::vector<double>& fractions = {0.0, 0.25, 0.5, 0.75, 1.0},
                                const TrainOptions& options = {});

inline constexpr const char* kAblationHeader = "setting,dev_accuracy,test_accuracy";
std::string ablation_csv(const std::vector<AblationRow>& rows);

// Checkpoint: "CGRU", version byte, one-line JSON header, then little-endian
// float64 tensor payloads (row-major) in directory order.
inline constexpr std::uint8_t kCheckpointVersion = 1;

void save_checkpoint(const ReaderModel& model, const TrainConfig& config, const std::string& path);

struct LoadedCheckpoint {
  ReaderModel model;
  TrainConfig config;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace corefgru
