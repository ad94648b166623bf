#pragma once

// Reading-comprehension instances and their on-disk formats.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "corefgru/coref.hpp"

namespace corefgru {

struct Candidate {
  std::string text;
  std::vector<MentionSpan> positions;  // occurrences in the passage
};

struct RCInstance {
  std::string id;
  TokenizedDocument passage;
  TokenizedDocument question;
  std::string answer;
  std::vector<Candidate> candidates;
  CorefClusters clusters;
  std::optional<std::string> head_entity;
  std::optional<std::string> relation;

  // Index of the answer among the candidates, if present.
  std::optional<std::size_t> answer_index() const;
};

// Dataset JSONL: one instance object per line.
std::string instance_to_json(const RCInstance& instance);
RCInstance instance_from_json(const std::string& line);

std::vector<RCInstance> read_dataset(std::istream& in);
std::vector<RCInstance> read_dataset_file(const std::string& path);
void write_dataset(std::ostream& out, const std::vector<RCInstance>& instances);
void write_dataset_file(const std::string& path, const std::vector<RCInstance>& instances);

// Standalone cluster files: {"doc_id": ..., "clusters": [[[s,e],...],...]}.
struct ClusterRecord {
  std::string doc_id;
  CorefClusters clusters;
};

std::string clusters_to_json(const ClusterRecord& record);
ClusterRecord clusters_from_json(const std::string& line);
std::vector<ClusterRecord> read_cluster_file(const std::string& path);

}  // namespace corefgru
