#include "corefgru/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "corefgru/errors.hpp"

namespace corefgru {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ParseError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ParseError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ParseError("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty key");
    if (out.count(key)) throw ParseError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

TrainConfig read_train_config(const std::string& path) { return TrainConfig::from_map(read_key_value_file(path)); }

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw RangeError("learning_rate must be > 0");
  if (halving_interval < 1) throw RangeError("halving_interval must be >= 1");
  if (batch_size < 1) throw RangeError("batch_size must be >= 1");
  if (epochs < 1) throw RangeError("epochs must be >= 1");
  if (patience < 0) throw RangeError("patience must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw RangeError("momentum must lie in [0, 1)");
  if (!(clip_norm > 0.0)) throw RangeError("clip_norm must be > 0");
  if (!(corruption_fraction >= 0.0 && corruption_fraction <= 1.0)) throw RangeError("corruption_fraction outside [0, 1]");
  reader().validate();
}

ReaderConfig TrainConfig::reader() const {
  ReaderConfig r;
  r.layers = layers;
  r.hidden = hidden_size;
  r.embedding = embedding_size;
  r.recurrence = recurrence;
  r.answer_head = answer_head;
  r.use_query_feature = use_query_feature;
  r.use_onehot_coref = use_onehot_coref;
  r.cluster_cap = cluster_cap;
  r.dropout = dropout;
  r.cell.alpha_mode = alpha_mode;
  r.cell.force_alpha_one = force_alpha_one;
  return r;
}

CorruptionSpec TrainConfig::corruption_spec() const { return {corruption, corruption_fraction, corruption_seed}; }

std::map<std::string, std::string> TrainConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["learning_rate"] = fmt_double(learning_rate);
  m["halving_interval"] = std::to_string(halving_interval);
  m["batch_size"] = std::to_string(batch_size);
  m["epochs"] = std::to_string(epochs);
  m["dropout"] = fmt_double(dropout);
  m["cluster_cap"] = std::to_string(cluster_cap);
  m["hidden_size"] = std::to_string(hidden_size);
  m["embedding_size"] = std::to_string(embedding_size);
  m["layers"] = std::to_string(layers);
  m["recurrence"] = recurrence == CellKind::CorefGru ? "cgru" : "gru";
  m["answer_head"] = answer_head == AnswerHead::AttentionSum ? "attention_sum" : "classify";
  m["use_query_feature"] = fmt_bool(use_query_feature);
  m["use_onehot_coref"] = fmt_bool(use_onehot_coref);
  m["alpha_mode"] = alpha_mode == AlphaMode::TwoKey ? "two_key" : "single_key";
  m["force_alpha_one"] = fmt_bool(force_alpha_one);
  m["optimizer"] = optimizer == OptimizerKind::SgdMomentum ? "sgd_momentum" : "adam";
  m["momentum"] = fmt_double(momentum);
  m["clip_norm"] = fmt_double(clip_norm);
  m["seed_init"] = std::to_string(seed_init);
  m["seed_shuffle"] = std::to_string(seed_shuffle);
  m["seed_dropout"] = std::to_string(seed_dropout);
  m["patience"] = std::to_string(patience);
  m["corruption"] = !corruption ? "none" : (*corruption == CorruptionMode::RemoveFraction ? "remove" : "randomize");
  m["corruption_fraction"] = fmt_double(corruption_fraction);
  m["corruption_seed"] = std::to_string(corruption_seed);
  return m;
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "learning_rate") c.learning_rate = to_double(k, v);
    else if (k == "halving_interval") c.halving_interval = to_long(k, v);
    else if (k == "batch_size") c.batch_size = to_long(k, v);
    else if (k == "epochs") c.epochs = to_long(k, v);
    else if (k == "dropout") c.dropout = to_double(k, v);
    else if (k == "cluster_cap") c.cluster_cap = to_long(k, v);
    else if (k == "hidden_size") c.hidden_size = to_long(k, v);
    else if (k == "embedding_size") c.embedding_size = to_long(k, v);
    else if (k == "layers") c.layers = to_long(k, v);
    else if (k == "recurrence") {
      if (v == "cgru") c.recurrence = CellKind::CorefGru;
      else if (v == "gru") c.recurrence = CellKind::Gru;
      else throw ParseError("recurrence must be cgru or gru");
    } else if (k == "answer_head") {
      if (v == "attention_sum") c.answer_head = AnswerHead::AttentionSum;
      else if (v == "classify") c.answer_head = AnswerHead::Classify;
      else throw ParseError("answer_head must be attention_sum or classify");
    } else if (k == "use_query_feature") c.use_query_feature = to_bool(k, v);
    else if (k == "use_onehot_coref") c.use_onehot_coref = to_bool(k, v);
    else if (k == "alpha_mode") {
      if (v == "two_key") c.alpha_mode = AlphaMode::TwoKey;
      else if (v == "single_key") c.alpha_mode = AlphaMode::SingleKey;
      else throw ParseError("alpha_mode must be two_key or single_key");
    } else if (k == "force_alpha_one") c.force_alpha_one = to_bool(k, v);
    else if (k == "optimizer") {
      if (v == "sgd_momentum") c.optimizer = OptimizerKind::SgdMomentum;
      else if (v == "adam") c.optimizer = OptimizerKind::Adam;
      else throw ParseError("optimizer must be sgd_momentum or adam");
    } else if (k == "momentum") c.momentum = to_double(k, v);
    else if (k == "clip_norm") c.clip_norm = to_double(k, v);
    else if (k == "seed_init") c.seed_init = to_u64(k, v);
    else if (k == "seed_shuffle") c.seed_shuffle = to_u64(k, v);
    else if (k == "seed_dropout") c.seed_dropout = to_u64(k, v);
    else if (k == "patience") c.patience = to_long(k, v);
    else if (k == "corruption") {
      if (v == "none") c.corruption.reset();
      else if (v == "remove") c.corruption = CorruptionMode::RemoveFraction;
      else if (v == "randomize") c.corruption = CorruptionMode::Randomize;
      else throw ParseError("corruption must be none, remove or randomize");
    } else if (k == "corruption_fraction") c.corruption_fraction = to_double(k, v);
    else if (k == "corruption_seed") c.corruption_seed = to_u64(k, v);
    else throw ParseError("unknown config key '" + k + "'");
  }
  c.validate();
  return c;
}

GenSpec gen_spec_from_map(const std::map<std::string, std::string>& kv) {
  GenSpec g;
  for (const auto& [k, v] : kv) {
    if (k == "task") g.task = parse_task(v);
    else if (k == "num_persons") g.num_persons = static_cast<int>(to_long(k, v));
    else if (k == "num_objects") g.num_objects = static_cast<int>(to_long(k, v));
    else if (k == "num_locations") g.num_locations = static_cast<int>(to_long(k, v));
    else if (k == "num_statements") g.num_statements = static_cast<int>(to_long(k, v));
    else if (k == "pronoun_rate") g.pronoun_rate = to_double(k, v);
    else if (k == "seed") g.seed = to_u64(k, v);
    else throw ParseError("unknown generator key '" + k + "'");
  }
  g.validate();
  return g;
}

GenSpec read_gen_spec(const std::string& path) { return gen_spec_from_map(read_key_value_file(path)); }

double learning_rate_at(double lr0, long halving_interval, long update) {
  if (halving_interval < 1) throw RangeError("halving_interval must be >= 1");
  return lr0 * std::pow(0.5, static_cast<double>(update / halving_interval));
}

// ---------------------------------------------------------------------------
// Metrics

bool Metrics::same_outcome(const Metrics& o) const {
  return setting == o.setting && update == o.update && split == o.split && accuracy == o.accuracy &&
         mean_loss == o.mean_loss && exp_neg_loss == o.exp_neg_loss && count == o.count;
}

std::string metrics_csv_row(const Metrics& m) {
  std::ostringstream os;
  os << m.setting << ',' << m.update << ',' << m.split << ',' << fmt_double(m.accuracy) << ','
     << fmt_double(m.mean_loss) << ',' << fmt_double(m.exp_neg_loss) << ',' << std::fixed << std::setprecision(3)
     << m.wall_time_s;
  return os.str();
}

Metrics evaluate(const ReaderModel& model, const std::vector<EncodedInstance>& data, const std::string& split) {
  if (data.empty()) throw RangeError("cannot evaluate an empty dataset");
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& x : data) {
    Tape tape(model.parameters());
    const ReaderOutput out = forward(tape, model, x);
    loss += out.loss.value()(0, 0);
    if (predict(out.probabilities.value()) == x.target) ++correct;
  }
  Metrics m;
  m.split = split;
  m.count = data.size();
  m.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  m.mean_loss = loss / static_cast<double>(data.size());
  m.exp_neg_loss = std::exp(-m.mean_loss);
  return m;
}

Metrics evaluate(const ReaderModel& model, const std::vector<RCInstance>& data, const CorruptionSpec& corruption,
                 const std::string& split) {
  if (data.empty()) throw RangeError("cannot evaluate an empty dataset");
  if (model.config().answer_head == AnswerHead::Classify) {
    const std::set<std::string> known(model.classes().begin(), model.classes().end());
    for (const auto& x : data) {
      if (!known.count(x.answer)) {
        throw IncompatibleCheckpoint("answer '" + x.answer + "' of " + x.id + " is not in the model's class vocabulary");
      }
    }
  }
  return evaluate(model, model.prepare_all(data, corruption), split);
}

// ---------------------------------------------------------------------------
// Training

namespace {

class Optimizer {
 public:
  Optimizer(const TrainConfig& c, const ParameterSet& params) : cfg_(c), first_(params), second_(params) {}

  void step(ParameterSet& params, const Gradients& g, double lr) {
    ++t_;
    if (cfg_.optimizer == OptimizerKind::SgdMomentum) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        first_[i] = cfg_.momentum * first_[i] + g[i];
        params[i] -= lr * first_[i];
      }
      return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_[i] = b1 * first_[i] + (1.0 - b1) * g[i];
      second_[i] = b2 * second_[i] + (1.0 - b2) * g[i].cwiseProduct(g[i]);
      params[i].array() -= lr * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps);
    }
  }

 private:
  const TrainConfig& cfg_;
  Gradients first_, second_;
  long t_ = 0;
};

std::vector<std::string> class_vocabulary(const std::vector<RCInstance>& train) {
  std::set<std::string> s;
  for (const auto& x : train) s.insert(x.answer);
  return {s.begin(), s.end()};
}

bool better(const Metrics& a, const Metrics& b) {
  return a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.mean_loss < b.mean_loss);
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<RCInstance>& train_set,
                  const std::vector<RCInstance>& dev_set, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw RangeError("training set is empty");
  if (dev_set.empty()) throw RangeError("dev set is empty");
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  const ReaderConfig rc = config.reader();
  std::vector<std::string> classes;
  if (rc.answer_head == AnswerHead::Classify) classes = class_vocabulary(train_set);
  ReaderModel model(rc, Vocabulary::build(train_set), classes, config.seed_init);

  const CorruptionSpec corruption = config.corruption_spec();
  const auto train_data = model.prepare_all(train_set, corruption);
  const auto dev_data = model.prepare_all(dev_set, corruption);

  TrainResult result;
  result.config = config;
  std::mt19937_64 shuffle_rng(config.seed_shuffle);
  std::mt19937_64 dropout_rng(config.seed_dropout);
  Optimizer opt(config, model.parameters());
  Gradients grads(model.parameters());

  auto record_dev = [&](long update) {
    Metrics m = evaluate(model, dev_data, "dev");
    m.setting = options.setting;
    m.update = update;
    m.wall_time_s = elapsed();
    result.history.push_back(m);
    if (options.verbose) std::cerr << metrics_csv_row(m) << '\n';
    return m;
  };

  result.best_dev = record_dev(0);
  result.model = model;
  long update = 0;
  long stale = 0;
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto B = static_cast<std::size_t>(config.batch_size);

  for (long epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t epoch_correct = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += B) {
      const std::size_t b1 = std::min(order.size(), b0 + B);
      grads.zero();
      for (std::size_t i = b0; i < b1; ++i) {
        const EncodedInstance& x = train_data[order[i]];
        Tape tape(model.parameters());
        const ReaderOutput out = forward(tape, model, x, rc.dropout > 0.0 ? &dropout_rng : nullptr);
        const double l = out.loss.value()(0, 0);
        if (!std::isfinite(l)) throw DivergenceError("non-finite loss at update " + std::to_string(update));
        epoch_loss += l;
        if (predict(out.probabilities.value()) == x.target) ++epoch_correct;
        tape.backward_into(out.loss, grads);
      }
      grads.scale(1.0 / static_cast<double>(b1 - b0));
      const double norm = std::sqrt(grads.squared_norm());
      if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient at update " + std::to_string(update));
      if (norm > config.clip_norm) grads.scale(config.clip_norm / norm);
      opt.step(model.parameters(), grads, learning_rate_at(config.learning_rate, config.halving_interval, update));
      ++update;
    }

    Metrics tm;
    tm.setting = options.setting;
    tm.update = update;
    tm.split = "train";
    tm.count = train_data.size();
    tm.accuracy = static_cast<double>(epoch_correct) / static_cast<double>(train_data.size());
    tm.mean_loss = epoch_loss / static_cast<double>(train_data.size());
    tm.exp_neg_loss = std::exp(-tm.mean_loss);
    tm.wall_time_s = elapsed();
    result.history.push_back(tm);
    if (options.verbose) std::cerr << metrics_csv_row(tm) << '\n';

    const Metrics dm = record_dev(update);
    if (better(dm, result.best_dev)) {
      result.best_dev = dm;
      result.model = model;
      stale = 0;
    } else if (config.patience > 0 && ++stale >= config.patience) {
      break;
    }
  }
  result.updates = update;
  return result;
}

// ---------------------------------------------------------------------------
// Ablation

SweepKind parse_sweep(const std::string& name) {
  if (name == "remove") return SweepKind::RemoveMentions;
  if (name == "randomize") return SweepKind::Randomize;
  if (name == "onehot") return SweepKind::OneHot;
  if (name == "gru") return SweepKind::GruBaseline;
  throw ParseError("unknown sweep '" + name + "'");
}

std::vector<AblationRow> ablate(const TrainConfig& config, const AblationData& data, SweepKind sweep,
                                const std::vector<double>& fractions, const TrainOptions& options) {
  if (data.test.empty()) throw RangeError("test set is empty");
  std::vector<std::pair<std::string, TrainConfig>> points;
  TrainConfig base = config;
  base.recurrence = CellKind::CorefGru;
  base.use_onehot_coref = false;
  base.corruption.reset();
  base.corruption_fraction = 0.0;

  switch (sweep) {
    case SweepKind::RemoveMentions:
      for (double f : fractions) {
        TrainConfig c = base;
        c.corruption = CorruptionMode::RemoveFraction;
        c.corruption_fraction = f;
        std::ostringstream name;
        name << "remove_" << f;
        points.emplace_back(name.str(), c);
      }
      break;
    case SweepKind::Randomize: {
      points.emplace_back("clean", base);
      TrainConfig c = base;
      c.corruption = CorruptionMode::Randomize;
      points.emplace_back("randomize", c);
      break;
    }
    case SweepKind::OneHot: {
      TrainConfig g = base;
      g.recurrence = CellKind::Gru;
      points.emplace_back("gru", g);
      g.use_onehot_coref = true;
      points.emplace_back("gru_onehot", g);
      break;
    }
    case SweepKind::GruBaseline: {
      points.emplace_back("cgru", base);
      TrainConfig g = base;
      g.recurrence = CellKind::Gru;
      points.emplace_back("gru", g);
      break;
    }
  }

  std::vector<AblationRow> rows;
  for (const auto& [name, c] : points) {
    TrainOptions o = options;
    o.setting = name;
    const TrainResult r = train(c, data.train, data.dev, o);
    AblationRow row;
    row.setting = name;
    row.dev = r.best_dev;
    row.test = evaluate(r.model, data.test, c.corruption_spec(), "test");
    row.test.setting = name;
    row.test.update = r.best_dev.update;
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << kAblationHeader << '\n';
  for (const auto& r : rows) os << r.setting << ',' << fmt_double(r.dev.accuracy) << ',' << fmt_double(r.test.accuracy) << '\n';
  return os.str();
}

}  // namespace corefgru
