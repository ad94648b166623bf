#pragma once

// Coreference annotations: clusters of mention spans and the per-token
// antecedent arrays consumed by the coreference-biased recurrence.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "corefgru/autodiff.hpp"

namespace corefgru {

struct TokenizedDocument {
  std::vector<std::string> tokens;
  std::string doc_id;

  Index size() const { return static_cast<Index>(tokens.size()); }
};

// Half-open token range [start, end).
struct MentionSpan {
  Index start = 0;
  Index end = 0;

  Index width() const { return end - start; }
  friend bool operator==(const MentionSpan&, const MentionSpan&) = default;
};

using Cluster = std::vector<MentionSpan>;

struct CorefClusters {
  std::vector<Cluster> clusters;

  std::size_t size() const { return clusters.size(); }
  bool empty() const { return clusters.empty(); }
};

// Absent value means "no antecedent"; index 0 is a real token position.
using TokenRef = std::optional<Index>;

struct AntecedentMap {
  std::vector<TokenRef> forward;     // forward[t] < t
  std::vector<TokenRef> backward;    // backward[t] > t
  std::vector<TokenRef> cluster_of;  // cluster id

  Index size() const { return static_cast<Index>(forward.size()); }
  std::size_t linked_count() const;  // number of non-null forward entries
};

// Validates spans against the document length and resolves overlaps between
// clusters: the mention starting latest claims a shared token. Empty
// clusters are dropped.
CorefClusters normalize_clusters(const CorefClusters& clusters, Index length);

// Per-token cluster ids; throws OverlapError when two clusters claim a token.
std::vector<TokenRef> cluster_membership(const CorefClusters& clusters, Index length);

// Antecedents induced by a cluster-id array: nearest earlier / later token of
// the same cluster.
AntecedentMap antecedents_from_membership(const std::vector<TokenRef>& cluster_of);

AntecedentMap build_antecedents(const TokenizedDocument& doc, const CorefClusters& clusters);

// One width-1 cluster per lexicon entry occurring at least twice
// (case-insensitive), ordered by first occurrence.
CorefClusters exact_match_annotator(const TokenizedDocument& doc, const std::set<std::string>& lexicon);

// Keeps clusters with a mention equal to a candidate, or with a mention in the
// same "."-delimited sentence as an occurrence of the head entity.
CorefClusters filter_clusters(const CorefClusters& clusters, const TokenizedDocument& doc,
                              const std::set<std::string>& candidates, const std::string& head_entity);

// Keeps the `cap` clusters with most mentions; ties go to the earlier first
// mention. Survivors keep their relative order.
CorefClusters cap_clusters(const CorefClusters& clusters, std::size_t cap);

enum class CorruptionMode { RemoveFraction, Randomize };

AntecedentMap corrupt_annotations(const AntecedentMap& map, CorruptionMode mode, double fraction,
                                  std::uint64_t seed);

inline constexpr const char* kDocSeparator = "<docsep>";

struct ConcatenatedPassage {
  TokenizedDocument document;
  CorefClusters clusters;
  std::vector<std::size_t> order;  // order[i] = input index placed i-th
};

// Concatenates documents in a seeded random order separated by kDocSeparator.
// Per-document clusters (optional, same length as docs) are re-indexed.
ConcatenatedPassage concat_passages(const std::vector<TokenizedDocument>& docs, std::uint64_t seed,
                                    const std::vector<CorefClusters>& clusters = {});

std::string to_lower(std::string s);

}  // namespace corefgru
