#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mindhouse/gridhouse/house.hpp"

namespace mindhouse::eqagen {

/// The four question templates. `Preposition` is restricted to next-to:
/// on/above/below would need vertical geometry the grid does not have.
enum class QuestionKind : uint8_t {
  Location = 0,     // what room is the <OBJ> located in
  Color = 1,        // what color is the <OBJ>
  ColorRoom = 2,    // what color is the <OBJ> in the <ROOM>
  Preposition = 3,  // what is next to the <OBJ>
};
constexpr int kNumQuestionKinds = 4;

const char* question_kind_name(QuestionKind k);
QuestionKind question_kind_from_name(const std::string& s);

/// Dense id maps for question tokens and the answer space. The answer space
/// is capped at 172 candidates.
struct Vocabulary {
  std::vector<std::string> words;    // token id -> word, lexicographic
  std::vector<std::string> answers;  // answer id -> name, lexicographic

  int word_id(const std::string& w) const;    // throws on unknown word
  int answer_id(const std::string& a) const;  // throws on unknown answer
};

constexpr int kMaxAnswers = 172;

/// One question episode: what to ask, where the evidence is, and how an
/// expert would get there.
struct Episode {
  int house_id = 0;
  QuestionKind kind = QuestionKind::Location;
  std::vector<int> question;  // token ids into Vocabulary::words
  int answer = 0;             // answer id into Vocabulary::answers
  gridhouse::Coord target_cell;
  gridhouse::Heading target_heading = gridhouse::Heading::N;  // faces the object
  gridhouse::AgentPose spawn;
  int spawn_k = 0;
  bool spawn_fallback = false;
  std::vector<gridhouse::Action> expert_actions;  // ends with Stop

  bool operator==(const Episode& o) const;
};

/// House-ids for the three environment-disjoint splits.
struct SplitSpec {
  std::vector<int> train, val, test;
};

/// Scans every unambiguous (template, object) candidate across the
/// population. Words and answers get lexicographic dense ids; answers are
/// the union of colors, room kinds, and next-to object kinds attested as a
/// correct answer somewhere. Throws when the answer space would exceed 172.
Vocabulary build_vocabulary(const std::vector<gridhouse::HouseMap>& houses);

/// Picks one unambiguous (template, object) candidate uniformly, computes
/// the ground-truth answer, chooses the target cell (a free floor neighbour
/// of the object, facing it), spawns at geodesic distance spawn_k, and plans
/// the expert demonstration. Deterministic in seed. Throws when the house
/// offers no unambiguous candidate.
Episode generate_episode(const gridhouse::HouseMap& house,
                         const Vocabulary& vocab, uint64_t seed, int spawn_k);

/// Shuffled house-level partition: per-split sizes are floor(ratio*n) with
/// the remainder distributed train, val, test. All three must end non-empty.
SplitSpec make_splits(const std::vector<int>& house_ids,
                      const std::array<double, 3>& ratios, uint64_t seed);

/// JSON-lines dataset (one episode per line; actions and headings as symbol
/// strings). read_dataset reports malformed input with its 1-based line.
void write_dataset(const std::vector<Episode>& episodes,
                   const std::string& path);
std::vector<Episode> read_dataset(const std::string& path);

std::string vocab_to_json(const Vocabulary& v);
Vocabulary vocab_from_json(const std::string& text);
std::string splits_to_json(const SplitSpec& s);
SplitSpec splits_from_json(const std::string& text);

/// Detokenized question, space-joined ("what color is the refrigerator").
std::string question_text(const Vocabulary& v, const std::vector<int>& tokens);

/// True when no single answer exceeds `cap` of the episodes (vacuously true
/// for fewer than two episodes).
bool answer_balance_ok(const std::vector<Episode>& episodes, double cap = 0.6);

}  // namespace mindhouse::eqagen
