#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "mindhouse/eqagen/eqagen.hpp"
#include "mindhouse/gridhouse/house.hpp"

using namespace mindhouse;
using namespace mindhouse::eqagen;
using gridhouse::Coord;
using gridhouse::Heading;
using gridhouse::HouseMap;

namespace {

// Three rooms (kitchen/bedroom/bathroom by the label-mod-kind rule), eight
// hand-placed objects wired so the attested answer space is exactly
// 4 colors + 3 rooms + 5 next-to kinds.
HouseMap answer_count_fixture() {
  HouseMap h = gridhouse::from_ascii(
      "#############\n"
      "#....#..#...#\n"
      "#....+..+...#\n"
      "#....#..#...#\n"
      "#############\n");
  auto add = [&](int id, int kind, int color, Coord cell,
                 std::vector<int> next_to) {
    h.objects.push_back({id, kind, color, cell, std::move(next_to)});
  };
  add(0, 10, 0, {1, 1}, {1});      // pair A
  add(1, 11, 1, {1, 2}, {0});
  add(2, 12, 2, {1, 6}, {3});      // pair B
  add(3, 13, 3, {1, 7}, {2});
  add(4, 14, 0, {1, 9}, {});       // loner
  add(5, 15, 0, {3, 1}, {6});      // chain ends share the middle kind
  add(6, 16, 1, {3, 2}, {5, 7});
  add(7, 17, 2, {3, 3}, {6});
  return h;
}

HouseMap single_object_fixture(int kind, int color) {
  HouseMap h = gridhouse::from_ascii(
      "#######\n"
      "#.....#\n"
      "#..#..#\n"
      "#..+..#\n"
      "#..#..#\n"
      "#.....#\n"
      "#######\n");
  h.objects.push_back({0, kind, color, {1, 1}, {}});
  return h;
}

}  // namespace

TEST_CASE("vocabulary: attested answers are counted per category") {
  std::vector<HouseMap> pop{answer_count_fixture()};
  Vocabulary v = build_vocabulary(pop);
  // 4 colors + 3 room kinds + 5 next-to object kinds.
  CHECK(v.answers.size() == 12);
  CHECK(std::count(v.answers.begin(), v.answers.end(), "kitchen") == 1);
  CHECK(std::count(v.answers.begin(), v.answers.end(), "red") == 1);

  Vocabulary again = build_vocabulary(pop);
  CHECK(again.words == v.words);
  CHECK(again.answers == v.answers);

  CHECK(v.word_id("what") >= 0);
  CHECK_THROWS_AS(v.word_id("zebra"), ContractError);
  CHECK_THROWS_AS(v.answer_id("zebra"), ContractError);
  CHECK_THROWS_AS(build_vocabulary({}), ContractError);
}

TEST_CASE("the single red refrigerator") {
  HouseMap h = single_object_fixture(0, 0);  // refrigerator, red
  Vocabulary v = build_vocabulary({h});
  bool saw_color = false;
  for (uint64_t seed = 0; seed < 32 && !saw_color; ++seed) {
    Episode e = generate_episode(h, v, seed, 3);
    if (e.kind != QuestionKind::Color) continue;
    saw_color = true;
    CHECK(question_text(v, e.question) == "what color is the refrigerator");
    CHECK(v.answers[static_cast<size_t>(e.answer)] == "red");
  }
  CHECK(saw_color);
}

TEST_CASE("location questions answer the object's room kind") {
  HouseMap h = answer_count_fixture();
  Vocabulary v = build_vocabulary({h});
  bool saw = false;
  for (uint64_t seed = 0; seed < 64; ++seed) {
    Episode e = generate_episode(h, v, seed, 2);
    if (e.kind != QuestionKind::Location) continue;
    saw = true;
    const auto text = question_text(v, e.question);
    CHECK(text.rfind("what room is the ", 0) == 0);
    CHECK(text.find(" located in") != std::string::npos);
    // The answer names the room kind of the cell next to the target.
    const auto* obj = h.object_at(
        {e.target_cell.r + gridhouse::heading_delta(e.target_heading).r,
         e.target_cell.c + gridhouse::heading_delta(e.target_heading).c});
    REQUIRE(obj != nullptr);
    const int room = h.room_of(obj->cell);
    CHECK(v.answers[static_cast<size_t>(e.answer)] ==
          gridhouse::room_kind_names()[static_cast<size_t>(
              h.room_kinds[static_cast<size_t>(room)])]);
  }
  CHECK(saw);
}

TEST_CASE("preposition questions answer the neighbour's kind") {
  HouseMap h = answer_count_fixture();
  Vocabulary v = build_vocabulary({h});
  bool saw = false;
  for (uint64_t seed = 0; seed < 64; ++seed) {
    Episode e = generate_episode(h, v, seed, 2);
    if (e.kind != QuestionKind::Preposition) continue;
    saw = true;
    const auto text = question_text(v, e.question);
    CHECK(text.rfind("what is next to the ", 0) == 0);
    const auto& names = gridhouse::object_kind_names();
    CHECK(std::find(names.begin(), names.end(),
                    v.answers[static_cast<size_t>(e.answer)]) != names.end());
  }
  CHECK(saw);
}

TEST_CASE("episodes: target faces the object, expert replay reaches it") {
  // The replay oracle over generated houses: every trajectory must execute
  // cleanly from the spawn pose and finish on the target facing as recorded.
  int checked = 0;
  for (uint64_t hs = 1; hs <= 10; ++hs) {
    HouseMap h = gridhouse::generate_house(hs, 4, 15);
    h.id = static_cast<int>(hs);
    Vocabulary v = build_vocabulary({h});
    for (uint64_t es = 0; es < 10; ++es) {
      Episode e = generate_episode(h, v, es * 977 + hs, 3 + int(es % 5));
      ++checked;
      CHECK(e.house_id == h.id);

      // Target is a floor cell adjacent to an object, facing it.
      const Coord d = gridhouse::heading_delta(e.target_heading);
      const auto* obj =
          h.object_at({e.target_cell.r + d.r, e.target_cell.c + d.c});
      CHECK(h.cell(e.target_cell.r, e.target_cell.c) ==
            gridhouse::Cell::Floor);
      CHECK(obj != nullptr);

      // Spawn distance honours the request unless flagged.
      const int gd = gridhouse::geodesic_dist(h, e.spawn, e.target_cell);
      if (!e.spawn_fallback) CHECK(gd == e.spawn_k);
      CHECK(gd <= e.spawn_k);

      // Replay.
      REQUIRE(!e.expert_actions.empty());
      CHECK(e.expert_actions.back() == gridhouse::Action::Stop);
      gridhouse::AgentPose cur = e.spawn;
      for (size_t i = 0; i + 1 < e.expert_actions.size(); ++i)
        cur = gridhouse::step(h, cur, e.expert_actions[i]);
      CHECK(cur.cell == e.target_cell);
      CHECK(cur.heading == e.target_heading);

      CHECK(e.answer >= 0);
      CHECK(e.answer < static_cast<int>(v.answers.size()));
    }
  }
  CHECK(checked == 100);
}

TEST_CASE("generate_episode: deterministic in seed") {
  HouseMap h = answer_count_fixture();
  Vocabulary v = build_vocabulary({h});
  CHECK(generate_episode(h, v, 7, 4) == generate_episode(h, v, 7, 4));
}

TEST_CASE("ambiguous houses are rejected") {
  HouseMap h = gridhouse::from_ascii(
      "#####\n"
      "#...#\n"
      "#...#\n"
      "#####\n");
  // Two chairs in one room: every template would have an ambiguous referent.
  h.objects.push_back({0, 4, 0, {1, 1}, {}});
  h.objects.push_back({1, 4, 2, {2, 2}, {}});
  Vocabulary v;
  v.words = {"a"};
  v.answers = {"red"};
  CHECK_THROWS_AS(generate_episode(h, v, 1, 2), ContractError);
}

TEST_CASE("make_splits: sizes, disjointness, determinism") {
  std::vector<int> ids;
  for (int i = 0; i < 10; ++i) ids.push_back(i * 7);
  SplitSpec s = make_splits(ids, {0.8, 0.1, 0.1}, 11);
  CHECK(s.train.size() == 8);
  CHECK(s.val.size() == 1);
  CHECK(s.test.size() == 1);

  std::set<int> all;
  for (int i : s.train) all.insert(i);
  for (int i : s.val) CHECK(all.insert(i).second);
  for (int i : s.test) CHECK(all.insert(i).second);
  CHECK(all == std::set<int>(ids.begin(), ids.end()));

  SplitSpec again = make_splits(ids, {0.8, 0.1, 0.1}, 11);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  SplitSpec other = make_splits(ids, {0.8, 0.1, 0.1}, 12);
  CHECK(other.train != s.train);

  CHECK_THROWS_AS(make_splits({1, 2}, {0.8, 0.1, 0.1}, 1), ContractError);
  CHECK_THROWS_AS(make_splits(ids, {0.5, 0.2, 0.2}, 1), ContractError);
  // Floor-then-distribute can still leave an empty split: 3 houses at 98%.
  CHECK_THROWS_AS(make_splits({1, 2, 3}, {0.98, 0.01, 0.01}, 1),
                  ContractError);
}

TEST_CASE("dataset files: round trip, empties, and malformed lines") {
  HouseMap h = answer_count_fixture();
  Vocabulary v = build_vocabulary({h});
  std::vector<Episode> eps;
  for (uint64_t s = 0; s < 50; ++s)
    eps.push_back(generate_episode(h, v, s, 2 + int(s % 4)));

  const std::string path = "eqagen_test_dataset.jsonl";
  write_dataset(eps, path);
  auto back = read_dataset(path);
  REQUIRE(back.size() == eps.size());
  for (size_t i = 0; i < eps.size(); ++i) CHECK(back[i] == eps[i]);

  write_dataset({}, path);
  CHECK(read_dataset(path).empty());

  {
    std::ofstream out(path);
    out << "{\"house_id\": 1}\n";     // missing fields
  }
  try {
    read_dataset(path);
    CHECK(false);
  } catch (const ContractError& ex) {
    CHECK(std::string(ex.what()).find("line 1") != std::string::npos);
  }
  {
    write_dataset({eps[0]}, path);
    std::ofstream out(path, std::ios::app);
    out << "{\"truncated\": ";
  }
  try {
    read_dataset(path);
    CHECK(false);
  } catch (const ContractError& ex) {
    CHECK(std::string(ex.what()).find("line 2") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("vocabulary and split JSON round trips") {
  HouseMap h = answer_count_fixture();
  Vocabulary v = build_vocabulary({h});
  Vocabulary v2 = vocab_from_json(vocab_to_json(v));
  CHECK(v2.words == v.words);
  CHECK(v2.answers == v.answers);

  SplitSpec s = make_splits({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, {0.8, 0.1, 0.1}, 3);
  SplitSpec s2 = splits_from_json(splits_to_json(s));
  CHECK(s2.train == s.train);
  CHECK(s2.val == s.val);
  CHECK(s2.test == s.test);
}

TEST_CASE("every generated answer is in the vocabulary, and priors balance") {
  std::vector<HouseMap> pop;
  for (uint64_t hs = 1; hs <= 6; ++hs) {
    HouseMap h = gridhouse::generate_house(hs * 31, 4, 15);
    h.id = static_cast<int>(hs);
    pop.push_back(h);
  }
  Vocabulary v = build_vocabulary(pop);
  std::vector<Episode> eps;
  for (const auto& h : pop)
    for (uint64_t s = 0; s < 12; ++s)
      eps.push_back(generate_episode(h, v, s * 131 + uint64_t(h.id), 4));
  for (const auto& e : eps) {
    CHECK(e.answer >= 0);
    CHECK(e.answer < static_cast<int>(v.answers.size()));
    for (int tok : e.question) {
      CHECK(tok >= 0);
      CHECK(tok < static_cast<int>(v.words.size()));
    }
  }
  CHECK(answer_balance_ok(eps));

  std::vector<Episode> skewed(10);
  for (auto& e : skewed) e.answer = 0;
  skewed[0].answer = 1;
  CHECK(!answer_balance_ok(skewed));
}
