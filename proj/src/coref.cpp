#include "corefgru/coref.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace corefgru {

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::size_t AntecedentMap::linked_count() const {
  return static_cast<std::size_t>(std::count_if(forward.begin(), forward.end(), [](const TokenRef& r) { return r.has_value(); }));
}

namespace {

void validate_span(const MentionSpan& m, Index length) {
  if (m.start < 0 || m.start >= m.end || m.end > length) {
    throw RangeError("mention span [" + std::to_string(m.start) + "," + std::to_string(m.end) +
                     ") invalid for document of length " + std::to_string(length));
  }
}

Index first_mention(const Cluster& c) {
  Index first = c.front().start;
  for (const auto& m : c) first = std::min(first, m.start);
  return first;
}

std::string span_text(const TokenizedDocument& doc, const MentionSpan& m) {
  std::string out;
  for (Index t = m.start; t < m.end; ++t) {
    if (t > m.start) out += ' ';
    out += to_lower(doc.tokens[static_cast<std::size_t>(t)]);
  }
  return out;
}

}  // namespace

CorefClusters normalize_clusters(const CorefClusters& clusters, Index length) {
  // owner[t] = (cluster, start of the claiming mention)
  struct Claim {
    std::size_t cluster = 0;
    Index start = -1;
  };
  std::vector<std::optional<Claim>> owner(static_cast<std::size_t>(length));
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (const auto& m : clusters.clusters[c]) {
      validate_span(m, length);
      for (Index t = m.start; t < m.end; ++t) {
        auto& slot = owner[static_cast<std::size_t>(t)];
        if (!slot || m.start > slot->start || (m.start == slot->start && c > slot->cluster)) {
          slot = Claim{c, m.start};
        }
      }
    }
  }

  CorefClusters out;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    Cluster kept;
    for (const auto& m : clusters.clusters[c]) {
      Index run_start = -1;
      for (Index t = m.start; t <= m.end; ++t) {
        const bool mine = t < m.end && owner[static_cast<std::size_t>(t)]->cluster == c;
        if (mine && run_start < 0) run_start = t;
        if (!mine && run_start >= 0) {
          MentionSpan piece{run_start, t};
          if (std::find(kept.begin(), kept.end(), piece) == kept.end()) kept.push_back(piece);
          run_start = -1;
        }
      }
    }
    if (!kept.empty()) out.clusters.push_back(std::move(kept));
  }
  return out;
}

std::vector<TokenRef> cluster_membership(const CorefClusters& clusters, Index length) {
  std::vector<TokenRef> cluster_of(static_cast<std::size_t>(length));
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (const auto& m : clusters.clusters[c]) {
      validate_span(m, length);
      for (Index t = m.start; t < m.end; ++t) {
        auto& slot = cluster_of[static_cast<std::size_t>(t)];
        if (slot && *slot != static_cast<Index>(c)) {
          throw OverlapError("token " + std::to_string(t) + " belongs to clusters " + std::to_string(*slot) +
                             " and " + std::to_string(c));
        }
        slot = static_cast<Index>(c);
      }
    }
  }
  return cluster_of;
}

AntecedentMap antecedents_from_membership(const std::vector<TokenRef>& cluster_of) {
  const auto T = cluster_of.size();
  AntecedentMap map;
  map.cluster_of = cluster_of;
  map.forward.assign(T, std::nullopt);
  map.backward.assign(T, std::nullopt);
  std::map<Index, Index> last_seen;
  for (std::size_t t = 0; t < T; ++t) {
    if (!cluster_of[t]) continue;
    auto it = last_seen.find(*cluster_of[t]);
    if (it != last_seen.end()) {
      map.forward[t] = it->second;
      map.backward[static_cast<std::size_t>(it->second)] = static_cast<Index>(t);
      it->second = static_cast<Index>(t);
    } else {
      last_seen.emplace(*cluster_of[t], static_cast<Index>(t));
    }
  }
  return map;
}

AntecedentMap build_antecedents(const TokenizedDocument& doc, const CorefClusters& clusters) {
  return antecedents_from_membership(cluster_membership(clusters, doc.size()));
}

CorefClusters exact_match_annotator(const TokenizedDocument& doc, const std::set<std::string>& lexicon) {
  std::map<std::string, Cluster> hits;
  std::vector<std::string> first_seen;
  for (Index t = 0; t < doc.size(); ++t) {
    std::string tok = to_lower(doc.tokens[static_cast<std::size_t>(t)]);
    if (lexicon.count(tok) == 0) continue;
    auto& c = hits[tok];
    if (c.empty()) first_seen.push_back(tok);
    c.push_back(MentionSpan{t, t + 1});
  }
  CorefClusters out;
  for (const auto& word : first_seen) {
    if (hits[word].size() >= 2) out.clusters.push_back(hits[word]);
  }
  return out;
}

CorefClusters filter_clusters(const CorefClusters& clusters, const TokenizedDocument& doc,
                              const std::set<std::string>& candidates, const std::string& head_entity) {
  // Sentence index per token; a "." belongs to the sentence it closes.
  std::vector<Index> sentence(static_cast<std::size_t>(doc.size()));
  Index s = 0;
  for (std::size_t t = 0; t < doc.tokens.size(); ++t) {
    sentence[t] = s;
    if (doc.tokens[t] == ".") ++s;
  }

  std::set<Index> head_sentences;
  if (!head_entity.empty()) {
    std::vector<std::string> head;
    std::string word;
    for (char ch : head_entity + " ") {
      if (ch == ' ') {
        if (!word.empty()) head.push_back(word);
        word.clear();
      } else {
        word += ch;
      }
    }
    const auto n = head.size();
    for (std::size_t t = 0; n > 0 && t + n <= doc.tokens.size(); ++t) {
      bool match = true;
      for (std::size_t k = 0; k < n && match; ++k) match = to_lower(doc.tokens[t + k]) == head[k];
      if (match) head_sentences.insert(sentence[t]);
    }
  }

  CorefClusters out;
  for (const auto& cluster : clusters.clusters) {
    bool keep = false;
    for (const auto& m : cluster) {
      validate_span(m, doc.size());
      if (candidates.count(span_text(doc, m)) != 0 ||
          head_sentences.count(sentence[static_cast<std::size_t>(m.start)]) != 0) {
        keep = true;
        break;
      }
    }
    if (keep) out.clusters.push_back(cluster);
  }
  return out;
}

CorefClusters cap_clusters(const CorefClusters& clusters, std::size_t cap) {
  if (cap == 0) throw RangeError("cluster cap must be at least 1");
  if (clusters.size() <= cap) return clusters;
  std::vector<std::size_t> rank(clusters.size());
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
    const auto& ca = clusters.clusters[a];
    const auto& cb = clusters.clusters[b];
    if (ca.size() != cb.size()) return ca.size() > cb.size();
    return first_mention(ca) < first_mention(cb);
  });
  rank.resize(cap);
  std::sort(rank.begin(), rank.end());
  CorefClusters out;
  for (std::size_t i : rank) out.clusters.push_back(clusters.clusters[i]);
  return out;
}

AntecedentMap corrupt_annotations(const AntecedentMap& map, CorruptionMode mode, double fraction,
                                  std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw RangeError("corruption fraction must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  const auto T = static_cast<std::size_t>(map.size());

  if (mode == CorruptionMode::RemoveFraction) {
    std::vector<std::size_t> linked;
    for (std::size_t t = 0; t < T; ++t) {
      if (map.forward[t]) linked.push_back(t);
    }
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(linked.size())));
    if (k == 0) return map;
    std::shuffle(linked.begin(), linked.end(), rng);
    std::vector<TokenRef> cluster_of = map.cluster_of;
    for (std::size_t i = 0; i < k; ++i) cluster_of[linked[i]].reset();
    return antecedents_from_membership(cluster_of);
  }

  AntecedentMap out = map;
  for (std::size_t t = 0; t < T; ++t) {
    if (out.forward[t]) {
      std::uniform_int_distribution<Index> pick(0, static_cast<Index>(t) - 1);
      out.forward[t] = pick(rng);
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    if (out.backward[t]) {
      std::uniform_int_distribution<Index> pick(static_cast<Index>(t) + 1, static_cast<Index>(T) - 1);
      out.backward[t] = pick(rng);
    }
  }
  return out;
}

ConcatenatedPassage concat_passages(const std::vector<TokenizedDocument>& docs, std::uint64_t seed,
                                    const std::vector<CorefClusters>& clusters) {
  if (docs.empty()) throw InvalidShape("concat_passages needs at least one document");
  if (!clusters.empty() && clusters.size() != docs.size()) {
    throw InvalidShape("per-document clusters must match the number of documents");
  }
  ConcatenatedPassage out;
  out.order.resize(docs.size());
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(out.order.begin(), out.order.end(), rng);

  for (std::size_t i = 0; i < out.order.size(); ++i) {
    const std::size_t d = out.order[i];
    if (i > 0) {
      out.document.tokens.emplace_back(kDocSeparator);
      out.document.doc_id += "+";
    }
    const Index offset = out.document.size();
    out.document.doc_id += docs[d].doc_id;
    out.document.tokens.insert(out.document.tokens.end(), docs[d].tokens.begin(), docs[d].tokens.end());
    if (!clusters.empty()) {
      for (const auto& c : clusters[d].clusters) {
        Cluster shifted;
        for (const auto& m : c) {
          validate_span(m, docs[d].size());
          shifted.push_back(MentionSpan{m.start + offset, m.end + offset});
        }
        out.clusters.clusters.push_back(std::move(shifted));
      }
    }
  }
  return out;
}

}  // namespace corefgru
