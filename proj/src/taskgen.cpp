#include "corefgru/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <random>
#include <set>

namespace corefgru {

const std::vector<Person>& person_lexicon() {
  static const std::vector<Person> people = {
      {"mary", Gender::Female},  {"john", Gender::Male},  {"sandra", Gender::Female}, {"daniel", Gender::Male},
      {"julie", Gender::Female}, {"fred", Gender::Male},  {"emily", Gender::Female},  {"bill", Gender::Male},
      {"kate", Gender::Female},  {"jeff", Gender::Male},
  };
  return people;
}

const std::vector<std::string>& object_lexicon() {
  static const std::vector<std::string> objects = {"football", "apple", "milk", "book", "ball", "box", "pencil", "cup"};
  return objects;
}

const std::vector<std::string>& location_lexicon() {
  static const std::vector<std::string> locations = {"bedroom", "hallway", "kitchen", "garden",
                                                     "office",  "bathroom", "cellar", "park"};
  return locations;
}

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::OneFact: return "one-fact";
    case TaskKind::TwoFacts: return "two-facts";
    case TaskKind::ThreeFacts: return "three-facts";
  }
  return "?";
}

TaskKind parse_task(const std::string& name) {
  if (name == "one-fact") return TaskKind::OneFact;
  if (name == "two-facts") return TaskKind::TwoFacts;
  if (name == "three-facts") return TaskKind::ThreeFacts;
  throw SpecError("unknown task '" + name + "'");
}

void GenSpec::validate() const {
  if (num_persons < 1 || num_objects < 1 || num_locations < 1 || num_statements < 1) {
    throw SpecError("generator counts must be at least 1");
  }
  if (num_persons > static_cast<int>(person_lexicon().size()) ||
      num_objects > static_cast<int>(object_lexicon().size()) ||
      num_locations > static_cast<int>(location_lexicon().size())) {
    throw SpecError("generator counts exceed the lexicon sizes");
  }
  if (!(pronoun_rate >= 0.0 && pronoun_rate <= 1.0)) throw SpecError("pronoun_rate must lie in [0, 1]");
  const int needed = task == TaskKind::OneFact ? 1 : task == TaskKind::TwoFacts ? 2 : 3;
  if (num_statements < needed) {
    throw SpecError(task_name(task) + " needs at least " + std::to_string(needed) + " statements");
  }
  if (task == TaskKind::ThreeFacts && num_locations < 2) throw SpecError("three-facts needs two locations");
}

// ---------------------------------------------------------------------------
// World simulation

std::optional<std::string> WorldState::where_is(const std::string& object) const {
  auto h = object_holder.find(object);
  if (h != object_holder.end()) {
    auto l = person_location.find(h->second);
    if (l == person_location.end()) return std::nullopt;
    return l->second;
  }
  auto l = object_location.find(object);
  if (l == object_location.end()) return std::nullopt;
  return l->second;
}

void WorldState::apply(const Event& e) {
  auto extend = [this](const std::string& object, const std::string& loc) {
    auto& path = object_trajectory[object];
    if (path.empty() || path.back() != loc) path.push_back(loc);
  };
  switch (e.kind) {
    case EventKind::Move:
      person_location[e.person] = e.location;
      for (const auto& [object, holder] : object_holder) {
        if (holder == e.person) extend(object, e.location);
      }
      break;
    case EventKind::Get: {
      object_holder[e.object] = e.person;
      object_location.erase(e.object);
      auto l = person_location.find(e.person);
      if (l != person_location.end()) extend(e.object, l->second);
      break;
    }
    case EventKind::Drop:
      object_holder.erase(e.object);
      object_location[e.object] = person_location.at(e.person);
      break;
  }
  log.push_back(e);
}

namespace {

template <typename T>
const T& pick(const std::vector<T>& items, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> u(0, items.size() - 1);
  return items[u(rng)];
}

Gender gender_of(const std::string& name) {
  for (const auto& p : person_lexicon()) {
    if (name == p.name) return p.gender;
  }
  throw SpecError("unknown person '" + name + "'");
}

struct Cast {
  std::vector<std::string> persons, objects, locations;
};

Cast choose_cast(const GenSpec& spec, std::mt19937_64& rng) {
  Cast cast;
  std::vector<std::string> people;
  for (const auto& p : person_lexicon()) people.emplace_back(p.name);
  std::vector<std::string> objects = object_lexicon();
  std::vector<std::string> locations = location_lexicon();
  std::shuffle(people.begin(), people.end(), rng);
  std::shuffle(objects.begin(), objects.end(), rng);
  std::shuffle(locations.begin(), locations.end(), rng);
  cast.persons.assign(people.begin(), people.begin() + spec.num_persons);
  cast.objects.assign(objects.begin(), objects.begin() + spec.num_objects);
  cast.locations.assign(locations.begin(), locations.begin() + spec.num_locations);
  return cast;
}

// Feasible events for the current world, drawn with fixed preferences.
std::optional<Event> draw_event(const WorldState& w, const Cast& cast, std::mt19937_64& rng) {
  std::vector<Event> moves, gets, drops;
  for (const auto& p : cast.persons) {
    auto here = w.person_location.find(p);
    for (const auto& l : cast.locations) {
      if (here == w.person_location.end() || here->second != l) moves.push_back(Event{EventKind::Move, p, "", l});
    }
    for (const auto& o : cast.objects) {
      auto holder = w.object_holder.find(o);
      if (holder != w.object_holder.end()) {
        if (holder->second == p && here != w.person_location.end()) drops.push_back(Event{EventKind::Drop, p, o, ""});
        continue;
      }
      auto at = w.object_location.find(o);
      if (at == w.object_location.end() || (here != w.person_location.end() && here->second == at->second)) {
        gets.push_back(Event{EventKind::Get, p, o, ""});
      }
    }
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double roll = u(rng);
  if (roll < 0.25 && !gets.empty()) return pick(gets, rng);
  if (roll < 0.35 && !drops.empty()) return pick(drops, rng);
  if (!moves.empty()) return pick(moves, rng);
  if (!gets.empty()) return pick(gets, rng);
  return std::nullopt;
}

struct Question {
  std::vector<std::string> tokens;
  std::string answer;
  std::string subject;
};

std::optional<Question> ask(const GenSpec& spec, const WorldState& w, const Cast& cast, std::mt19937_64& rng) {
  std::vector<Question> options;
  if (spec.task == TaskKind::OneFact) {
    for (const auto& p : cast.persons) {
      auto l = w.person_location.find(p);
      if (l != w.person_location.end()) options.push_back(Question{{"where", "is", p, "?"}, l->second, p});
    }
  } else if (spec.task == TaskKind::TwoFacts) {
    for (const auto& o : cast.objects) {
      if (w.object_trajectory.count(o) == 0) continue;  // never reached a known location
      if (auto l = w.where_is(o)) options.push_back(Question{{"where", "is", "the", o, "?"}, *l, o});
    }
  } else {
    for (const auto& o : cast.objects) {
      auto path = w.object_trajectory.find(o);
      if (path == w.object_trajectory.end() || path->second.size() < 2) continue;
      const auto& p = path->second;
      // "before the L" must name one location even if L was visited twice.
      bool unique = true;
      for (std::size_t i = 1; i + 1 < p.size(); ++i) {
        if (p[i] == p.back() && p[i - 1] != p[p.size() - 2]) unique = false;
      }
      if (!unique) continue;
      options.push_back(
          Question{{"where", "was", "the", o, "before", "the", p.back(), "?"}, p[p.size() - 2], o});
    }
  }
  if (options.empty()) return std::nullopt;
  return pick(options, rng);
}

}  // namespace

GeneratedStory generate_story(const GenSpec& spec, std::uint64_t index) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(spec.task)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  constexpr int kAttempts = 500;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const Cast cast = choose_cast(spec, rng);
    WorldState world;
    TokenizedDocument passage;
    std::vector<std::pair<Index, std::string>> pronouns;  // position, referent
    bool stuck = false;
    for (int s = 0; s < spec.num_statements; ++s) {
      auto e = draw_event(world, cast, rng);
      if (!e) {
        stuck = true;
        break;
      }
      const bool repeated = !world.log.empty() && world.log.back().person == e->person;
      e->pronoun = repeated && u(rng) < spec.pronoun_rate;
      e->subject_token = passage.size();
      if (e->pronoun) {
        passage.tokens.emplace_back(gender_of(e->person) == Gender::Female ? "she" : "he");
        pronouns.emplace_back(e->subject_token, e->person);
      } else {
        passage.tokens.push_back(e->person);
      }
      switch (e->kind) {
        case EventKind::Move:
          passage.tokens.emplace_back(u(rng) < 0.5 ? "went" : "travelled");
          passage.tokens.emplace_back("to");
          passage.tokens.emplace_back("the");
          passage.tokens.push_back(e->location);
          break;
        case EventKind::Get:
          passage.tokens.emplace_back("got");
          passage.tokens.emplace_back("the");
          passage.tokens.push_back(e->object);
          break;
        case EventKind::Drop:
          passage.tokens.emplace_back("dropped");
          passage.tokens.emplace_back("the");
          passage.tokens.push_back(e->object);
          break;
      }
      passage.tokens.emplace_back(".");
      world.apply(*e);
    }
    if (stuck) continue;
    auto q = ask(spec, world, cast, rng);
    if (!q) continue;

    GeneratedStory story;
    RCInstance& x = story.instance;
    x.id = task_name(spec.task) + "-" + std::to_string(spec.seed) + "-" + std::to_string(index);
    x.passage = std::move(passage);
    x.passage.doc_id = x.id;
    x.question.tokens = q->tokens;
    x.question.doc_id = x.id + ":q";
    x.answer = q->answer;
    x.head_entity = q->subject;
    x.relation = spec.task == TaskKind::ThreeFacts ? "location_before" : "location";

    for (const auto& loc : cast.locations) {
      Candidate c{loc, {}};
      for (Index t = 0; t < x.passage.size(); ++t) {
        if (x.passage.tokens[static_cast<std::size_t>(t)] == loc) c.positions.push_back(MentionSpan{t, t + 1});
      }
      if (!c.positions.empty()) x.candidates.push_back(std::move(c));
    }

    // Name clusters by exact matching; pronouns join their referent's cluster.
    std::set<std::string> lexicon(cast.persons.begin(), cast.persons.end());
    lexicon.insert(cast.objects.begin(), cast.objects.end());
    x.clusters = exact_match_annotator(x.passage, lexicon);
    for (const auto& [pos, referent] : pronouns) {
      auto it = std::find_if(x.clusters.clusters.begin(), x.clusters.clusters.end(), [&](const Cluster& c) {
        return x.passage.tokens[static_cast<std::size_t>(c.front().start)] == referent;
      });
      if (it == x.clusters.clusters.end()) {
        Cluster fresh;
        for (Index t = 0; t < x.passage.size(); ++t) {
          if (x.passage.tokens[static_cast<std::size_t>(t)] == referent) fresh.push_back(MentionSpan{t, t + 1});
        }
        x.clusters.clusters.push_back(std::move(fresh));
        it = std::prev(x.clusters.clusters.end());
      }
      it->push_back(MentionSpan{pos, pos + 1});
    }
    for (auto& c : x.clusters.clusters) {
      std::sort(c.begin(), c.end(), [](const MentionSpan& a, const MentionSpan& b) { return a.start < b.start; });
    }

    story.world = std::move(world);
    story.subject = q->subject;
    return story;
  }
  throw SpecError("could not generate a " + task_name(spec.task) + " story in " + std::to_string(kAttempts) +
                  " attempts; the specification is unsatisfiable");
}

std::vector<RCInstance> generate(const GenSpec& spec, std::size_t n) {
  if (n == 0) throw SpecError("generate needs n >= 1");
  std::vector<RCInstance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_story(spec, i).instance);
  return out;
}

DataSplit split(const std::vector<RCInstance>& instances, const std::array<double, 3>& fractions, std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f > 0.0)) throw RangeError("split fractions must be positive");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw RangeError("split fractions must sum to 1");
  }
  const std::size_t n = instances.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_dev = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(fractions[2] * static_cast<double>(n)));
  if (n_dev + n_test > n) throw RangeError("split sizes exceed the number of instances");
  DataSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = instances[order[i]];
    if (i < n_dev) {
      out.dev.push_back(x);
    } else if (i < n_dev + n_test) {
      out.test.push_back(x);
    } else {
      out.train.push_back(x);
    }
  }
  return out;
}

}  // namespace corefgru
