#include "corefgru/dataset.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace corefgru {

using nlohmann::json;

namespace {

json spans_to_json(const std::vector<MentionSpan>& spans) {
  json out = json::array();
  for (const auto& s : spans) out.push_back({s.start, s.end});
  return out;
}

std::vector<MentionSpan> spans_from_json(const json& j) {
  std::vector<MentionSpan> out;
  for (const auto& s : j) {
    if (!s.is_array() || s.size() != 2) throw ParseError("span must be a [start, end] pair");
    out.push_back(MentionSpan{s[0].get<Index>(), s[1].get<Index>()});
  }
  return out;
}

json clusters_json(const CorefClusters& c) {
  json out = json::array();
  for (const auto& cluster : c.clusters) out.push_back(spans_to_json(cluster));
  return out;
}

CorefClusters clusters_from(const json& j) {
  CorefClusters out;
  for (const auto& cluster : j) out.clusters.push_back(spans_from_json(cluster));
  return out;
}

json parse_line(const std::string& line) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON line: ") + e.what());
  }
}

}  // namespace

std::optional<std::size_t> RCInstance::answer_index() const {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].text == answer) return i;
  }
  return std::nullopt;
}

std::string instance_to_json(const RCInstance& x) {
  json j;
  j["id"] = x.id;
  j["passage_tokens"] = x.passage.tokens;
  j["question_tokens"] = x.question.tokens;
  j["answer"] = x.answer;
  json cands = json::array();
  for (const auto& c : x.candidates) cands.push_back({{"text", c.text}, {"positions", spans_to_json(c.positions)}});
  j["candidates"] = cands;
  j["clusters"] = clusters_json(x.clusters);
  j["head_entity"] = x.head_entity ? json(*x.head_entity) : json(nullptr);
  j["relation"] = x.relation ? json(*x.relation) : json(nullptr);
  return j.dump();
}

RCInstance instance_from_json(const std::string& line) {
  const json j = parse_line(line);
  try {
    RCInstance x;
    x.id = j.at("id").get<std::string>();
    x.passage.tokens = j.at("passage_tokens").get<std::vector<std::string>>();
    x.passage.doc_id = x.id;
    x.question.tokens = j.at("question_tokens").get<std::vector<std::string>>();
    x.question.doc_id = x.id + ":q";
    x.answer = j.at("answer").get<std::string>();
    for (const auto& c : j.at("candidates")) {
      x.candidates.push_back(Candidate{c.at("text").get<std::string>(), spans_from_json(c.at("positions"))});
    }
    x.clusters = clusters_from(j.at("clusters"));
    if (j.contains("head_entity") && !j["head_entity"].is_null()) x.head_entity = j["head_entity"].get<std::string>();
    if (j.contains("relation") && !j["relation"].is_null()) x.relation = j["relation"].get<std::string>();
    return x;
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid instance: ") + e.what());
  }
}

std::vector<RCInstance> read_dataset(std::istream& in) {
  std::vector<RCInstance> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(instance_from_json(line));
  }
  return out;
}

std::vector<RCInstance> read_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

void write_dataset(std::ostream& out, const std::vector<RCInstance>& instances) {
  for (const auto& x : instances) out << instance_to_json(x) << '\n';
}

void write_dataset_file(const std::string& path, const std::vector<RCInstance>& instances) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write dataset '" + path + "'");
  write_dataset(out, instances);
}

std::string clusters_to_json(const ClusterRecord& record) {
  json j;
  j["doc_id"] = record.doc_id;
  j["clusters"] = clusters_json(record.clusters);
  return j.dump();
}

ClusterRecord clusters_from_json(const std::string& line) {
  const json j = parse_line(line);
  try {
    return ClusterRecord{j.at("doc_id").get<std::string>(), clusters_from(j.at("clusters"))};
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid cluster record: ") + e.what());
  }
}

std::vector<ClusterRecord> read_cluster_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open cluster file '" + path + "'");
  std::vector<ClusterRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(clusters_from_json(line));
  }
  return out;
}

}  // namespace corefgru
