#include "mindhouse/eqagen/eqagen.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mindhouse/util/rng.hpp"

namespace mindhouse::eqagen {

using gridhouse::Coord;
using gridhouse::Heading;
using gridhouse::HouseMap;
using nlohmann::json;

const char* question_kind_name(QuestionKind k) {
  switch (k) {
    case QuestionKind::Location: return "location";
    case QuestionKind::Color: return "color";
    case QuestionKind::ColorRoom: return "color_room";
    case QuestionKind::Preposition: return "preposition";
  }
  check(false, "bad question kind");
  return "";
}

QuestionKind question_kind_from_name(const std::string& s) {
  for (int i = 0; i < kNumQuestionKinds; ++i) {
    const auto k = static_cast<QuestionKind>(i);
    if (s == question_kind_name(k)) return k;
  }
  check(false, "unknown question kind '" + s + "'");
  return QuestionKind::Location;
}

int Vocabulary::word_id(const std::string& w) const {
  const auto it = std::lower_bound(words.begin(), words.end(), w);
  check(it != words.end() && *it == w, "unknown question word '" + w + "'");
  return static_cast<int>(it - words.begin());
}

int Vocabulary::answer_id(const std::string& a) const {
  const auto it = std::lower_bound(answers.begin(), answers.end(), a);
  check(it != answers.end() && *it == a, "unknown answer '" + a + "'");
  return static_cast<int>(it - answers.begin());
}

bool Episode::operator==(const Episode& o) const {
  return house_id == o.house_id && kind == o.kind && question == o.question &&
         answer == o.answer && target_cell == o.target_cell &&
         target_heading == o.target_heading && spawn == o.spawn &&
         spawn_k == o.spawn_k && spawn_fallback == o.spawn_fallback &&
         expert_actions == o.expert_actions;
}

namespace {

// One unambiguous (template, object[, room]) instantiation.
struct Candidate {
  QuestionKind kind;
  int object_id;
  int room = -1;                // ColorRoom only
  std::string answer;           // ground-truth name
  std::vector<std::string> tokens;
};

std::vector<std::string> fill_tokens(QuestionKind kind, const std::string& obj,
                                     const std::string& room) {
  switch (kind) {
    case QuestionKind::Location:
      return {"what", "room", "is", "the", obj, "located", "in"};
    case QuestionKind::Color:
      return {"what", "color", "is", "the", obj};
    case QuestionKind::ColorRoom:
      return {"what", "color", "is", "the", obj, "in", "the", room};
    case QuestionKind::Preposition:
      return {"what", "is", "next", "to", "the", obj};
  }
  check(false, "bad question kind");
  return {};
}

// Every question a house supports without an ambiguous referent:
//  - location/color/preposition name an object kind occurring exactly once;
//  - preposition further needs neighbours that all share one kind;
//  - color_room names a (kind, room) pair unique in that room, where the
//    room kind itself names exactly one room.
std::vector<Candidate> enumerate_candidates(const HouseMap& h) {
  const auto& okn = gridhouse::object_kind_names();
  const auto& rkn = gridhouse::room_kind_names();
  const auto& cn = gridhouse::color_names();

  std::map<int, int> kind_count;
  for (const auto& o : h.objects) ++kind_count[o.kind];
  std::map<int, int> room_kind_count;
  for (int k : h.room_kinds) ++room_kind_count[k];

  std::vector<Candidate> out;
  for (const auto& o : h.objects) {
    const std::string obj = okn[static_cast<size_t>(o.kind)];
    const int room = h.room_of(o.cell);
    const std::string room_name =
        rkn[static_cast<size_t>(h.room_kinds[static_cast<size_t>(room)])];
    const bool unique_kind = kind_count[o.kind] == 1;

    if (unique_kind) {
      out.push_back({QuestionKind::Location, o.id, -1, room_name,
                     fill_tokens(QuestionKind::Location, obj, "")});
      out.push_back({QuestionKind::Color, o.id, -1,
                     cn[static_cast<size_t>(o.color)],
                     fill_tokens(QuestionKind::Color, obj, "")});
      if (!o.next_to.empty()) {
        const int nk = h.objects[static_cast<size_t>(o.next_to[0])].kind;
        bool same = true;
        for (int nb : o.next_to)
          same &= h.objects[static_cast<size_t>(nb)].kind == nk;
        if (same)
          out.push_back({QuestionKind::Preposition, o.id, -1,
                         okn[static_cast<size_t>(nk)],
                         fill_tokens(QuestionKind::Preposition, obj, "")});
      }
    }

    if (room_kind_count[h.room_kinds[static_cast<size_t>(room)]] == 1) {
      int in_room = 0;
      for (const auto& other : h.objects)
        if (other.kind == o.kind && h.room_of(other.cell) == room) ++in_room;
      if (in_room == 1)
        out.push_back({QuestionKind::ColorRoom, o.id, room,
                       cn[static_cast<size_t>(o.color)],
                       fill_tokens(QuestionKind::ColorRoom, obj, room_name)});
    }
  }
  return out;
}

json pose_to_json(const gridhouse::AgentPose& p) {
  return json{{"cell", {p.cell.r, p.cell.c}},
              {"heading", gridhouse::heading_name(p.heading)}};
}

gridhouse::AgentPose pose_from_json(const json& j) {
  gridhouse::AgentPose p;
  p.cell = {j.at("cell").at(0).get<int>(), j.at("cell").at(1).get<int>()};
  p.heading = gridhouse::heading_from_name(j.at("heading").get<std::string>());
  return p;
}

json episode_to_json(const Episode& e) {
  json actions = json::array();
  for (auto a : e.expert_actions) actions.push_back(gridhouse::action_name(a));
  return json{{"house_id", e.house_id},
              {"kind", question_kind_name(e.kind)},
              {"question", e.question},
              {"answer", e.answer},
              {"target_cell", {e.target_cell.r, e.target_cell.c}},
              {"target_heading", gridhouse::heading_name(e.target_heading)},
              {"spawn", pose_to_json(e.spawn)},
              {"spawn_k", e.spawn_k},
              {"spawn_fallback", e.spawn_fallback},
              {"actions", actions}};
}

Episode episode_from_json(const json& j) {
  Episode e;
  e.house_id = j.at("house_id").get<int>();
  e.kind = question_kind_from_name(j.at("kind").get<std::string>());
  e.question = j.at("question").get<std::vector<int>>();
  e.answer = j.at("answer").get<int>();
  e.target_cell = {j.at("target_cell").at(0).get<int>(),
                   j.at("target_cell").at(1).get<int>()};
  e.target_heading =
      gridhouse::heading_from_name(j.at("target_heading").get<std::string>());
  e.spawn = pose_from_json(j.at("spawn"));
  e.spawn_k = j.at("spawn_k").get<int>();
  e.spawn_fallback = j.at("spawn_fallback").get<bool>();
  for (const auto& a : j.at("actions"))
    e.expert_actions.push_back(
        gridhouse::action_from_name(a.get<std::string>()));
  return e;
}

}  // namespace

Vocabulary build_vocabulary(const std::vector<HouseMap>& houses) {
  check(!houses.empty(), "build_vocabulary: empty house population");
  std::set<std::string> words;
  std::set<std::string> answers;
  for (const auto& h : houses)
    for (const auto& c : enumerate_candidates(h)) {
      answers.insert(c.answer);
      words.insert(c.tokens.begin(), c.tokens.end());
    }
  check(static_cast<int>(answers.size()) <= kMaxAnswers,
        "answer space exceeds " + std::to_string(kMaxAnswers) +
            " candidates (got " + std::to_string(answers.size()) + ")");
  Vocabulary v;
  v.words.assign(words.begin(), words.end());
  v.answers.assign(answers.begin(), answers.end());
  return v;
}

Episode generate_episode(const HouseMap& house, const Vocabulary& vocab,
                         uint64_t seed, int spawn_k) {
  auto candidates = enumerate_candidates(house);
  check(!candidates.empty(),
        "generate_episode: house " + std::to_string(house.id) +
            " has no unambiguous (template, object) pair");
  Rng rng(seed);
  const auto& cand = candidates[rng.uniform_index(candidates.size())];
  const auto& obj = house.objects[static_cast<size_t>(cand.object_id)];

  // Target: the first orthogonal floor neighbour, preferring cells without
  // another object on them, facing back toward the object.
  Coord target{-1, -1};
  Heading facing = Heading::N;
  for (int pass = 0; pass < 2 && target.r < 0; ++pass)
    for (int hd = 0; hd < 4; ++hd) {
      const auto head = static_cast<Heading>(hd);
      const Coord d = gridhouse::heading_delta(head);
      const Coord n{obj.cell.r + d.r, obj.cell.c + d.c};
      if (!house.in_bounds(n.r, n.c)) continue;
      if (house.cell(n.r, n.c) != gridhouse::Cell::Floor) continue;
      if (pass == 0 && house.object_at(n) != nullptr) continue;
      target = n;
      // The object sits one step opposite to the neighbour direction.
      facing = gridhouse::turn_right(gridhouse::turn_right(head));
      break;
    }
  check(target.r >= 0, "generate_episode: object at (" +
                           std::to_string(obj.cell.r) + "," +
                           std::to_string(obj.cell.c) +
                           ") has no adjacent floor cell");

  Episode e;
  e.house_id = house.id;
  e.kind = cand.kind;
  for (const auto& w : cand.tokens) e.question.push_back(vocab.word_id(w));
  e.answer = vocab.answer_id(cand.answer);
  e.target_cell = target;
  e.target_heading = facing;
  auto spawn = gridhouse::spawn_at_distance(house, target, spawn_k,
                                            rng.derive(1).next_u64());
  e.spawn = spawn.pose;
  e.spawn_k = spawn_k;
  e.spawn_fallback = spawn.fallback;
  e.expert_actions = gridhouse::shortest_path(house, spawn.pose, target, facing);
  return e;
}

SplitSpec make_splits(const std::vector<int>& house_ids,
                      const std::array<double, 3>& ratios, uint64_t seed) {
  check(house_ids.size() >= 3, "make_splits: need at least 3 houses");
  check(std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) < 1e-9,
        "make_splits: ratios must sum to 1");
  std::vector<int> ids = house_ids;
  Rng rng(seed);
  rng.shuffle(ids);

  const auto n = static_cast<int>(ids.size());
  std::array<int, 3> sizes{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    sizes[static_cast<size_t>(i)] =
        static_cast<int>(ratios[static_cast<size_t>(i)] * n);
    assigned += sizes[static_cast<size_t>(i)];
  }
  for (int i = 0; assigned < n; i = (i + 1) % 3) {  // leftover: train,val,test
    ++sizes[static_cast<size_t>(i)];
    ++assigned;
  }
  check(sizes[0] >= 1 && sizes[1] >= 1 && sizes[2] >= 1,
        "make_splits: a split would be empty; adjust ratios or add houses");

  SplitSpec s;
  auto it = ids.begin();
  s.train.assign(it, it + sizes[0]);
  it += sizes[0];
  s.val.assign(it, it + sizes[1]);
  it += sizes[1];
  s.test.assign(it, it + sizes[2]);
  return s;
}

void write_dataset(const std::vector<Episode>& episodes,
                   const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "write_dataset: cannot open '" + path + "'");
  for (const auto& e : episodes) out << episode_to_json(e).dump() << '\n';
  check(out.good(), "write_dataset: write failed for '" + path + "'");
}

std::vector<Episode> read_dataset(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "read_dataset: cannot open '" + path + "'");
  std::vector<Episode> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(json::parse(line)));
    } catch (const json::exception& ex) {
      check(false, "read_dataset: line " + std::to_string(line_no) + " of '" +
                       path + "': " + ex.what());
    }
  }
  return out;
}

std::string vocab_to_json(const Vocabulary& v) {
  return json{{"words", v.words}, {"answers", v.answers}}.dump(2);
}

Vocabulary vocab_from_json(const std::string& text) {
  const json j = json::parse(text);
  Vocabulary v;
  v.words = j.at("words").get<std::vector<std::string>>();
  v.answers = j.at("answers").get<std::vector<std::string>>();
  check(std::is_sorted(v.words.begin(), v.words.end()),
        "vocabulary words must be sorted");
  check(std::is_sorted(v.answers.begin(), v.answers.end()),
        "vocabulary answers must be sorted");
  check(static_cast<int>(v.answers.size()) <= kMaxAnswers,
        "vocabulary answer space exceeds the classifier width");
  return v;
}

std::string splits_to_json(const SplitSpec& s) {
  return json{{"train", s.train}, {"val", s.val}, {"test", s.test}}.dump(2);
}

SplitSpec splits_from_json(const std::string& text) {
  const json j = json::parse(text);
  SplitSpec s;
  s.train = j.at("train").get<std::vector<int>>();
  s.val = j.at("val").get<std::vector<int>>();
  s.test = j.at("test").get<std::vector<int>>();
  return s;
}

std::string question_text(const Vocabulary& v, const std::vector<int>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    check(tokens[i] >= 0 && tokens[i] < static_cast<int>(v.words.size()),
          "question token id out of range");
    if (i) out += ' ';
    out += v.words[static_cast<size_t>(tokens[i])];
  }
  return out;
}

bool answer_balance_ok(const std::vector<Episode>& episodes, double cap) {
  if (episodes.size() < 2) return true;
  std::map<int, int> counts;
  for (const auto& e : episodes) ++counts[e.answer];
  for (const auto& [answer, n] : counts)
    if (n > cap * static_cast<double>(episodes.size())) return false;
  return true;
}

}  // namespace mindhouse::eqagen
