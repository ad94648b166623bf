#pragma once

// Seeded generator of bAbi-style stories about people moving between
// locations and carrying objects.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "corefgru/dataset.hpp"

namespace corefgru {

enum class TaskKind { OneFact, TwoFacts, ThreeFacts };

struct GenSpec {
  TaskKind task = TaskKind::TwoFacts;
  int num_persons = 4;
  int num_objects = 3;
  int num_locations = 6;
  int num_statements = 12;
  double pronoun_rate = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

enum class Gender { Female, Male };

struct Person {
  const char* name;
  Gender gender;
};

const std::vector<Person>& person_lexicon();
const std::vector<std::string>& object_lexicon();
const std::vector<std::string>& location_lexicon();

enum class EventKind { Move, Get, Drop };

struct Event {
  EventKind kind = EventKind::Move;
  std::string person;
  std::string object;    // Get / Drop
  std::string location;  // Move
  bool pronoun = false;
  Index subject_token = 0;  // passage position of the subject mention
};

// Simulated world. An object is held by one person, lies at one location,
// or has not been placed yet.
struct WorldState {
  std::map<std::string, std::string> person_location;
  std::map<std::string, std::string> object_holder;
  std::map<std::string, std::string> object_location;
  std::map<std::string, std::vector<std::string>> object_trajectory;
  std::vector<Event> log;

  // Location of an object: its holder's location when held.
  std::optional<std::string> where_is(const std::string& object) const;
  void apply(const Event& e);
};

// Instance plus the generator's own record of how it was produced.
struct GeneratedStory {
  RCInstance instance;
  WorldState world;
  std::string subject;  // person (one-fact) or object asked about
};

std::string task_name(TaskKind kind);
TaskKind parse_task(const std::string& name);

GeneratedStory generate_story(const GenSpec& spec, std::uint64_t index);
std::vector<RCInstance> generate(const GenSpec& spec, std::size_t n);

struct DataSplit {
  std::vector<RCInstance> train, dev, test;
};

// Seeded disjoint partition; dev and test sizes are rounded, the remainder
// goes to train.
DataSplit split(const std::vector<RCInstance>& instances, const std::array<double, 3>& fractions, std::uint64_t seed);

}  // namespace corefgru
