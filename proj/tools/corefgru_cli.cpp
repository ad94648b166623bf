// Command-line front end: gen, annotate, train, eval, ablate, gradcheck.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "corefgru/errors.hpp"
#include "corefgru/gradcheck.hpp"
#include "corefgru/taskgen.hpp"
#include "corefgru/trainer.hpp"

using namespace corefgru;
namespace fs = std::filesystem;

namespace {

std::set<std::string> read_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open lexicon " + path);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.insert(to_lower(line));
  }
  return out;
}

std::set<std::string> default_lexicon() {
  std::set<std::string> out;
  for (const auto& p : person_lexicon()) out.insert(p.name);
  for (const auto& o : object_lexicon()) out.insert(o);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << text;
}

int cmd_gen(const std::string& spec_path, std::size_t n, const std::string& out, bool as_split) {
  const GenSpec spec = read_gen_spec(spec_path);
  const auto data = generate(spec, n);
  if (!as_split) {
    write_dataset_file(out, data);
    return 0;
  }
  fs::create_directories(out);
  const DataSplit s = split(data, {0.8, 0.1, 0.1}, spec.seed);
  write_dataset_file((fs::path(out) / "train.jsonl").string(), s.train);
  write_dataset_file((fs::path(out) / "dev.jsonl").string(), s.dev);
  write_dataset_file((fs::path(out) / "test.jsonl").string(), s.test);
  return 0;
}

int cmd_annotate(const std::string& in, const std::string& out, const std::string& lexicon_path, std::size_t cap,
                 bool filter) {
  const std::set<std::string> lexicon = lexicon_path.empty() ? default_lexicon() : read_lexicon(lexicon_path);
  auto data = read_dataset_file(in);
  for (auto& x : data) {
    CorefClusters c = exact_match_annotator(x.passage, lexicon);
    if (filter) {
      std::set<std::string> cands;
      for (const auto& cand : x.candidates) cands.insert(to_lower(cand.text));
      c = filter_clusters(c, x.passage, cands, x.head_entity.value_or(""));
    }
    if (cap > 0) c = cap_clusters(c, cap);
    x.clusters = std::move(c);
  }
  write_dataset_file(out, data);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& train_path, const std::string& dev_path,
              const std::string& out, const std::string& metrics_path, bool verbose) {
  const TrainConfig config = read_train_config(config_path);
  TrainOptions opt;
  opt.verbose = verbose;
  const TrainResult r = train(config, read_dataset_file(train_path), read_dataset_file(dev_path), opt);
  save_checkpoint(r.model, config, out);
  std::ostringstream csv;
  csv << kMetricsHeader << '\n';
  for (const auto& m : r.history) csv << metrics_csv_row(m) << '\n';
  if (metrics_path.empty()) std::cout << csv.str();
  else write_text(metrics_path, csv.str());
  std::cerr << "best dev accuracy " << r.best_dev.accuracy << " at update " << r.best_dev.update << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path) {
  const LoadedCheckpoint c = load_checkpoint(ckpt);
  Metrics m = evaluate(c.model, read_dataset_file(data_path), c.config.corruption_spec(), "eval");
  m.setting = fs::path(ckpt).stem().string();
  std::cout << kMetricsHeader << '\n' << metrics_csv_row(m) << '\n';
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& mode, const std::string& dir,
               const std::string& out, bool verbose) {
  const TrainConfig config = read_train_config(config_path);
  AblationData data;
  data.train = read_dataset_file((fs::path(dir) / "train.jsonl").string());
  data.dev = read_dataset_file((fs::path(dir) / "dev.jsonl").string());
  data.test = read_dataset_file((fs::path(dir) / "test.jsonl").string());
  TrainOptions opt;
  opt.verbose = verbose;
  const auto rows = ablate(config, data, parse_sweep(mode), {0.0, 0.25, 0.5, 0.75, 1.0}, opt);
  if (out.empty()) std::cout << ablation_csv(rows);
  else write_text(out, ablation_csv(rows));
  return 0;
}

int cmd_gradcheck(const std::string& config_path, const std::string& spec_path) {
  TrainConfig config = config_path.empty() ? TrainConfig{} : read_train_config(config_path);
  GenSpec spec;
  spec.num_statements = 5;
  if (!spec_path.empty()) spec = read_gen_spec(spec_path);
  const auto data = generate(spec, 1);
  ReaderConfig rc = config.reader();
  rc.dropout = 0.0;
  std::vector<std::string> classes;
  if (rc.answer_head == AnswerHead::Classify) classes = {data[0].answer};
  ReaderModel model(rc, Vocabulary::build(data), classes, config.seed_init);
  const EncodedInstance x = model.prepare(data[0], config.corruption_spec());
  GradCheckOptions opt;
  opt.max_coordinates = 200;
  const auto report = grad_check(
      model.parameters(), [&](auto& t) { return forward(t, model, x).loss; }, 1e-5, 1e-4, opt);
  for (const auto& p : report.parameters) {
    std::cout << (p.passed ? "ok   " : "FAIL ") << p.name << " checked=" << p.coordinates_checked
              << " max_rel_err=" << p.max_relative_error << " analytic=" << p.analytic_at_worst
              << " numeric=" << p.numeric_at_worst << '\n';
  }
  std::cout << "max relative error " << report.max_relative_error << (report.passed ? " (pass)" : " (fail)") << '\n';
  return report.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coreference-biased GRU reader toolkit"};
  app.require_subcommand(1);

  std::string spec, out, in, lexicon, config, train_path, dev_path, ckpt, data, mode, dir, metrics;
  std::size_t n = 1000, cap = 0;
  bool filter = false, as_split = false, verbose = false;

  auto* gen = app.add_subcommand("gen", "Generate synthetic stories");
  gen->add_option("--spec", spec, "Generator spec (key=value)")->required();
  gen->add_option("--n", n, "Number of instances")->required();
  gen->add_option("--out", out, "Output JSONL, or a directory with --split")->required();
  gen->add_flag("--split", as_split, "Write train/dev/test.jsonl (80/10/10)");

  auto* ann = app.add_subcommand("annotate", "Replace clusters with exact-match annotations");
  ann->add_option("--in", in, "Input JSONL")->required();
  ann->add_option("--out", out, "Output JSONL")->required();
  ann->add_option("--lexicon", lexicon, "One entity per line");
  ann->add_option("--cap", cap, "Keep at most this many clusters");
  ann->add_flag("--filter-candidates", filter, "Keep clusters tied to candidates or the head entity");

  auto* tr = app.add_subcommand("train", "Train a reader");
  tr->add_option("--config", config, "TrainConfig (key=value)")->required();
  tr->add_option("--train", train_path, "Training JSONL")->required();
  tr->add_option("--dev", dev_path, "Dev JSONL")->required();
  tr->add_option("--out", ckpt, "Checkpoint path")->required();
  tr->add_option("--metrics", metrics, "Metrics CSV (default stdout)");
  tr->add_flag("-v,--verbose", verbose, "Log metrics while training");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  ev->add_option("--data", data, "JSONL dataset")->required();

  auto* ab = app.add_subcommand("ablate", "Run an ablation sweep");
  ab->add_option("--config", config, "TrainConfig (key=value)")->required();
  ab->add_option("--mode", mode, "Sweep")->required()->check(CLI::IsMember({"remove", "randomize", "onehot", "gru"}));
  ab->add_option("--data-dir", dir, "Directory with train/dev/test.jsonl")->required();
  ab->add_option("--out", out, "CSV path (default stdout)");
  ab->add_flag("-v,--verbose", verbose, "Log metrics while training");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the reader's gradients");
  gc->add_option("--config", config, "TrainConfig (key=value)");
  gc->add_option("--spec", spec, "Generator spec for the probe instance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen(spec, n, out, as_split);
    if (*ann) return cmd_annotate(in, out, lexicon, cap, filter);
    if (*tr) return cmd_train(config, train_path, dev_path, ckpt, metrics, verbose);
    if (*ev) return cmd_eval(ckpt, data);
    if (*ab) return cmd_ablate(config, mode, dir, out, verbose);
    if (*gc) return cmd_gradcheck(config, spec);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
