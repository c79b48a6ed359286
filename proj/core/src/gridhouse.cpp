#include "mindhouse/gridhouse/house.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <sstream>

#include "mindhouse/gridhouse/render.hpp"
#include "mindhouse/util/rng.hpp"

#include <json.hpp>

namespace mindhouse::gridhouse {

const char* heading_name(Heading h) {
  static constexpr const char* names[4] = {"N", "E", "S", "W"};
  return names[static_cast<size_t>(h)];
}

Heading heading_from_name(const std::string& s) {
  for (int i = 0; i < 4; ++i)
    if (s == heading_name(static_cast<Heading>(i)))
      return static_cast<Heading>(i);
  check(false, "unknown heading '" + s + "'");
  return Heading::N;
}

const char* action_name(Action a) {
  static constexpr const char* names[4] = {"Forward", "TurnLeft", "TurnRight",
                                           "Stop"};
  return names[static_cast<size_t>(a)];
}

Action action_from_name(const std::string& s) {
  for (int i = 0; i < kNumActions; ++i)
    if (s == action_name(static_cast<Action>(i))) return static_cast<Action>(i);
  check(false, "unknown action '" + s + "'");
  return Action::Stop;
}

const std::vector<std::string>& room_kind_names() {
  static const std::vector<std::string> names = {
      "kitchen", "bedroom",  "bathroom", "living_room", "dining_room",
      "office",  "hallway",  "garage",   "closet",      "balcony"};
  return names;
}

const std::vector<std::string>& object_kind_names() {
  static const std::vector<std::string> names = {
      "refrigerator", "sofa",        "bed",          "table",
      "chair",        "lamp",        "television",   "plant",
      "sink",         "toilet",      "bathtub",      "mirror",
      "desk",         "bookshelf",   "wardrobe",     "dresser",
      "nightstand",   "stove",       "oven",         "microwave",
      "toaster",      "kettle",      "cabinet",      "counter",
      "shelf",        "rug",         "clock",        "painting",
      "vase",         "fan",         "heater",       "radiator",
      "fireplace",    "piano",       "guitar",       "speaker",
      "computer",     "printer",     "telephone",    "bench",
      "stool",        "ottoman",     "recliner",     "hammock",
      "crib",         "bunk_bed",    "coat_rack",    "umbrella_stand",
      "shoe_rack",    "trash_can"};
  return names;
}

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> names = {
      "red", "green", "blue", "yellow", "purple", "orange", "brown", "gray"};
  return names;
}

// ---- generation -------------------------------------------------------------

namespace {

struct Region {  // interior floor rectangle, inclusive bounds
  int r0, c0, r1, c1;
  int height() const { return r1 - r0 + 1; }
  int width() const { return c1 - c0 + 1; }
};

constexpr int kMinRoomSide = 2;

// A region can host a splitting wall along an axis only if both children
// keep at least kMinRoomSide cells.
bool splittable(const Region& reg) {
  return reg.height() >= 2 * kMinRoomSide + 1 ||
         reg.width() >= 2 * kMinRoomSide + 1;
}

struct SplitTree {
  std::vector<Region> rooms;
  // door candidates: (wall cell, room index a, room index b)
  struct Wall {
    int a, b;                 // room indices
    std::vector<Coord> cells;  // wall cells with a on one side, b on other
  };
};

bool try_generate(uint64_t seed, int room_count, int grid_size, HouseMap& out) {
  Rng rng(seed);
  const int n = grid_size;
  out = HouseMap{};
  out.rows = out.cols = n;
  out.grid.assign(static_cast<size_t>(n) * n, Cell::Wall);
  out.room_label.assign(static_cast<size_t>(n) * n, -1);

  std::vector<Region> regions{{1, 1, n - 2, n - 2}};
  while (static_cast<int>(regions.size()) < room_count) {
    // Split the largest splittable region.
    int best = -1;
    int64_t best_area = -1;
    for (size_t i = 0; i < regions.size(); ++i) {
      if (!splittable(regions[i])) continue;
      const int64_t area =
          int64_t(regions[i].height()) * regions[i].width();
      if (area > best_area) {
        best_area = area;
        best = static_cast<int>(i);
      }
    }
    if (best < 0) return false;
    Region reg = regions[static_cast<size_t>(best)];
    const bool horiz = reg.height() >= reg.width()
                           ? reg.height() >= 2 * kMinRoomSide + 1
                           : !(reg.width() >= 2 * kMinRoomSide + 1);
    if (horiz) {
      const int lo = reg.r0 + kMinRoomSide, hi = reg.r1 - kMinRoomSide;
      const int cut = rng.uniform_int(lo, hi);
      regions[static_cast<size_t>(best)] = {reg.r0, reg.c0, cut - 1, reg.c1};
      regions.push_back({cut + 1, reg.c0, reg.r1, reg.c1});
    } else {
      const int lo = reg.c0 + kMinRoomSide, hi = reg.c1 - kMinRoomSide;
      const int cut = rng.uniform_int(lo, hi);
      regions[static_cast<size_t>(best)] = {reg.r0, reg.c0, reg.r1, cut - 1};
      regions.push_back({reg.r0, cut + 1, reg.r1, reg.c1});
    }
  }

  // Carve floors and label rooms.
  for (size_t i = 0; i < regions.size(); ++i)
    for (int r = regions[i].r0; r <= regions[i].r1; ++r)
      for (int c = regions[i].c0; c <= regions[i].c1; ++c) {
        out.grid[static_cast<size_t>(out.index(r, c))] = Cell::Floor;
        out.room_label[static_cast<size_t>(out.index(r, c))] =
            static_cast<int>(i);
      }

  // Door candidates: wall cells with two distinct rooms on opposite sides.
  struct Candidate {
    Coord cell;
    int a, b;
  };
  std::vector<Candidate> cands;
  for (int r = 1; r < n - 1; ++r)
    for (int c = 1; c < n - 1; ++c) {
      if (out.cell(r, c) != Cell::Wall) continue;
      const int up = out.room_label[static_cast<size_t>(out.index(r - 1, c))];
      const int dn = out.room_label[static_cast<size_t>(out.index(r + 1, c))];
      const int lf = out.room_label[static_cast<size_t>(out.index(r, c - 1))];
      const int rt = out.room_label[static_cast<size_t>(out.index(r, c + 1))];
      if (up >= 0 && dn >= 0 && up != dn &&
          out.cell(r - 1, c) == Cell::Floor && out.cell(r + 1, c) == Cell::Floor)
        cands.push_back({{r, c}, up, dn});
      else if (lf >= 0 && rt >= 0 && lf != rt &&
               out.cell(r, c - 1) == Cell::Floor &&
               out.cell(r, c + 1) == Cell::Floor)
        cands.push_back({{r, c}, lf, rt});
    }
  rng.shuffle(cands);

  // Spanning tree over rooms (union-find), each accepted door joins two
  // previously separate components.
  std::vector<int> parent(regions.size());
  for (size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
  std::function<int(int)> find = [&](int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] =
          parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  };
  int components = static_cast<int>(regions.size());
  for (const auto& cand : cands) {
    const int ra = find(cand.a), rb = find(cand.b);
    if (ra == rb) continue;
    parent[static_cast<size_t>(ra)] = rb;
    out.grid[static_cast<size_t>(out.index(cand.cell.r, cand.cell.c))] =
        Cell::Door;
    --components;
    if (components == 1) break;
  }
  if (components != 1) return false;

  // Room kinds: a seeded shuffle of the 10 kinds, cycled.
  std::vector<int> kinds(room_kind_names().size());
  for (size_t i = 0; i < kinds.size(); ++i) kinds[i] = static_cast<int>(i);
  rng.shuffle(kinds);
  out.room_kinds.resize(regions.size());
  for (size_t i = 0; i < regions.size(); ++i)
    out.room_kinds[i] = kinds[i % kinds.size()];

  // Objects: 2..4 per room on distinct floor cells, each keeping at least
  // one object-free orthogonal floor neighbor (the question target cell).
  const int n_kinds = static_cast<int>(object_kind_names().size());
  const int n_colors = static_cast<int>(color_names().size());
  std::vector<int> kind_bag(static_cast<size_t>(n_kinds));
  for (int i = 0; i < n_kinds; ++i) kind_bag[static_cast<size_t>(i)] = i;
  rng.shuffle(kind_bag);
  size_t next_kind = 0;
  int next_id = 0;
  for (size_t i = 0; i < regions.size(); ++i) {
    std::vector<Coord> cells;
    for (int r = regions[i].r0; r <= regions[i].r1; ++r)
      for (int c = regions[i].c0; c <= regions[i].c1; ++c)
        cells.push_back({r, c});
    rng.shuffle(cells);
    const int want = rng.uniform_int(2, 4);
    int placed = 0;
    for (const Coord& cell : cells) {
      if (placed >= want) break;
      if (out.object_at(cell)) continue;
      bool has_free_neighbor = false;
      for (int h = 0; h < 4; ++h) {
        const Coord d = heading_delta(static_cast<Heading>(h));
        const Coord q{cell.r + d.r, cell.c + d.c};
        if (out.in_bounds(q.r, q.c) && out.cell(q.r, q.c) == Cell::Floor &&
            !out.object_at(q)) {
          has_free_neighbor = true;
          break;
        }
      }
      if (!has_free_neighbor) continue;
      ObjectInstance obj;
      obj.id = next_id++;
      // Draw kinds from a shuffled bag so most kinds are unique per house
      // (unique kinds are what the question templates need).
      obj.kind = kind_bag[next_kind % kind_bag.size()];
      ++next_kind;
      obj.color = rng.uniform_int(0, n_colors - 1);
      obj.cell = cell;
      out.objects.push_back(obj);
      ++placed;
    }
    if (placed < 2) return false;
  }

  // Adjacency relations.
  for (auto& a : out.objects)
    for (const auto& b : out.objects) {
      if (a.id == b.id) continue;
      if (std::abs(a.cell.r - b.cell.r) + std::abs(a.cell.c - b.cell.c) == 1)
        a.next_to.push_back(b.id);
    }
  return true;
}

}  // namespace

HouseMap generate_house(uint64_t seed, int room_count, int grid_size) {
  check(room_count >= 2, "generate_house: room_count must be >= 2");
  check(grid_size >= 7, "generate_house: grid_size must be >= 7");
  Rng master(seed);
  for (int attempt = 0; attempt < 64; ++attempt) {
    HouseMap h;
    if (try_generate(master.next_u64(), room_count, grid_size, h)) {
      h.id = static_cast<int>(seed & 0x7fffffff);
      return h;
    }
  }
  check(false, "generate_house: infeasible size/room-count combination (" +
                   std::to_string(grid_size) + ", " +
                   std::to_string(room_count) + ")");
  return {};
}

// ---- dynamics ---------------------------------------------------------------

AgentPose step(const HouseMap& house, AgentPose pose, Action a) {
  check(house.passable(pose.cell), "step: pose on a wall cell");
  switch (a) {
    case Action::Forward: {
      const Coord d = heading_delta(pose.heading);
      const Coord t{pose.cell.r + d.r, pose.cell.c + d.c};
      if (house.passable(t)) pose.cell = t;
      return pose;
    }
    case Action::TurnLeft:
      pose.heading = turn_left(pose.heading);
      return pose;
    case Action::TurnRight:
      pose.heading = turn_right(pose.heading);
      return pose;
    case Action::Stop:
      return pose;
  }
  return pose;
}

// ---- pose-graph BFS ---------------------------------------------------------

namespace {

inline int pose_index(const HouseMap& h, int r, int c, int heading) {
  return h.index(r, c) * 4 + heading;
}
inline int pose_index(const HouseMap& h, AgentPose p) {
  return pose_index(h, p.cell.r, p.cell.c, static_cast<int>(p.heading));
}

}  // namespace

DistanceField compute_distance_field(const HouseMap& house, Coord target) {
  check(house.passable(target), "distance field: target is not a floor cell");
  DistanceField field;
  field.target = target;
  field.dist.assign(static_cast<size_t>(house.rows) * house.cols * 4, -1);
  std::deque<int> queue;
  for (int h = 0; h < 4; ++h) {
    const int pi = pose_index(house, target.r, target.c, h);
    field.dist[static_cast<size_t>(pi)] = 0;
    queue.push_back(pi);
  }
  while (!queue.empty()) {
    const int pi = queue.front();
    queue.pop_front();
    const int d = field.dist[static_cast<size_t>(pi)];
    const int h = pi % 4;
    const int cell = pi / 4;
    const int r = cell / house.cols, c = cell % house.cols;
    // Predecessors: reverse of TurnLeft/TurnRight, and the Forward source.
    const int preds[2] = {pose_index(house, r, c, (h + 1) % 4),
                          pose_index(house, r, c, (h + 3) % 4)};
    for (int p : preds)
      if (field.dist[static_cast<size_t>(p)] < 0) {
        field.dist[static_cast<size_t>(p)] = d + 1;
        queue.push_back(p);
      }
    const Coord delta = heading_delta(static_cast<Heading>(h));
    const int sr = r - delta.r, sc = c - delta.c;
    if (house.passable(sr, sc)) {
      const int p = pose_index(house, sr, sc, h);
      if (field.dist[static_cast<size_t>(p)] < 0) {
        field.dist[static_cast<size_t>(p)] = d + 1;
        queue.push_back(p);
      }
    }
  }
  return field;
}

namespace {

std::vector<Action> bfs_path(const HouseMap& house, AgentPose start, Coord goal,
                             int goal_heading /* -1 = any */) {
  check(house.passable(start.cell), "shortest_path: start is on a wall");
  check(house.passable(goal), "shortest_path: goal is not a floor cell");
  const size_t n = static_cast<size_t>(house.rows) * house.cols * 4;
  std::vector<int32_t> parent(n, -2);  // -2 unvisited, -1 root
  std::vector<int8_t> via(n, -1);
  std::deque<int> queue;
  const int s = pose_index(house, start);
  parent[static_cast<size_t>(s)] = -1;
  queue.push_back(s);
  int found = -1;
  auto is_goal = [&](int pi) {
    const int cell = pi / 4;
    if (cell != house.index(goal.r, goal.c)) return false;
    return goal_heading < 0 || pi % 4 == goal_heading;
  };
  if (is_goal(s)) found = s;
  while (found < 0 && !queue.empty()) {
    const int pi = queue.front();
    queue.pop_front();
    const AgentPose pose{{pi / 4 / house.cols, pi / 4 % house.cols},
                         static_cast<Heading>(pi % 4)};
    // Expansion order fixes the tie-break: Forward < TurnLeft < TurnRight.
    for (int a = 0; a < 3 && found < 0; ++a) {
      const AgentPose next = step(house, pose, static_cast<Action>(a));
      const int ni = pose_index(house, next);
      if (ni == pi) continue;  // blocked Forward
      if (parent[static_cast<size_t>(ni)] != -2) continue;
      parent[static_cast<size_t>(ni)] = pi;
      via[static_cast<size_t>(ni)] = static_cast<int8_t>(a);
      if (is_goal(ni)) found = ni;
      queue.push_back(ni);
    }
  }
  check(found >= 0, "shortest_path: goal unreachable (corrupt map)");
  std::vector<Action> actions;
  for (int pi = found; parent[static_cast<size_t>(pi)] >= 0;
       pi = parent[static_cast<size_t>(pi)])
    actions.push_back(static_cast<Action>(via[static_cast<size_t>(pi)]));
  std::reverse(actions.begin(), actions.end());
  actions.push_back(Action::Stop);
  return actions;
}

}  // namespace

std::vector<Action> shortest_path(const HouseMap& house, AgentPose start,
                                  Coord goal) {
  return bfs_path(house, start, goal, -1);
}

std::vector<Action> shortest_path(const HouseMap& house, AgentPose start,
                                  Coord goal, Heading goal_heading) {
  return bfs_path(house, start, goal, static_cast<int>(goal_heading));
}

int geodesic_dist(const HouseMap& house, AgentPose pose, Coord target) {
  check(house.passable(pose.cell), "geodesic_dist: pose on a wall");
  check(house.passable(target), "geodesic_dist: target is not a floor cell");
  const DistanceField f = compute_distance_field(house, target);
  const int d = f.at(house, pose);
  check(d >= 0, "geodesic_dist: target unreachable (corrupt map)");
  return d;
}

SpawnResult spawn_at_distance(const HouseMap& house, Coord target, int k,
                              uint64_t seed) {
  check(k >= 1, "spawn_at_distance: k must be >= 1");
  const DistanceField f = compute_distance_field(house, target);
  int best = -1;
  for (int want = k; want >= 1 && best < 0; --want) {
    for (int d : f.dist)
      if (d == want) {
        best = want;
        break;
      }
  }
  check(best >= 1, "spawn_at_distance: no pose at distance >= 1 (degenerate house)");
  std::vector<int> candidates;
  for (size_t i = 0; i < f.dist.size(); ++i)
    if (f.dist[i] == best) candidates.push_back(static_cast<int>(i));
  Rng rng(seed);
  const int pick = candidates[rng.uniform_index(candidates.size())];
  SpawnResult res;
  res.pose = AgentPose{{pick / 4 / house.cols, pick / 4 % house.cols},
                       static_cast<Heading>(pick % 4)};
  res.distance = best;
  res.fallback = best != k;
  return res;
}

// ---- ascii & JSON -----------------------------------------------------------

HouseMap from_ascii(const std::string& art) {
  std::vector<std::string> lines;
  std::istringstream in(art);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  check(!lines.empty(), "from_ascii: empty art");
  HouseMap h;
  h.rows = static_cast<int>(lines.size());
  h.cols = static_cast<int>(lines[0].size());
  h.grid.assign(static_cast<size_t>(h.rows) * h.cols, Cell::Wall);
  h.room_label.assign(static_cast<size_t>(h.rows) * h.cols, -1);
  for (int r = 0; r < h.rows; ++r) {
    check(static_cast<int>(lines[static_cast<size_t>(r)].size()) == h.cols,
          "from_ascii: ragged rows");
    for (int c = 0; c < h.cols; ++c) {
      const char ch = lines[static_cast<size_t>(r)][static_cast<size_t>(c)];
      Cell cell = Cell::Wall;
      if (ch == '.') cell = Cell::Floor;
      else if (ch == '+') cell = Cell::Door;
      else check(ch == '#', std::string("from_ascii: unknown char '") + ch + "'");
      h.grid[static_cast<size_t>(h.index(r, c))] = cell;
    }
  }
  // Flood-fill room labels over floor (doors separate rooms).
  int next_room = 0;
  for (int r = 0; r < h.rows; ++r)
    for (int c = 0; c < h.cols; ++c) {
      if (h.cell(r, c) != Cell::Floor ||
          h.room_label[static_cast<size_t>(h.index(r, c))] >= 0)
        continue;
      std::deque<Coord> q{{r, c}};
      h.room_label[static_cast<size_t>(h.index(r, c))] = next_room;
      while (!q.empty()) {
        const Coord p = q.front();
        q.pop_front();
        for (int d = 0; d < 4; ++d) {
          const Coord dd = heading_delta(static_cast<Heading>(d));
          const Coord t{p.r + dd.r, p.c + dd.c};
          if (!h.in_bounds(t.r, t.c) || h.cell(t.r, t.c) != Cell::Floor)
            continue;
          auto& lbl = h.room_label[static_cast<size_t>(h.index(t.r, t.c))];
          if (lbl >= 0) continue;
          lbl = next_room;
          q.push_back(t);
        }
      }
      ++next_room;
    }
  h.room_kinds.resize(static_cast<size_t>(next_room));
  for (int i = 0; i < next_room; ++i)
    h.room_kinds[static_cast<size_t>(i)] =
        i % static_cast<int>(room_kind_names().size());
  return h;
}

std::string to_ascii(const HouseMap& house) {
  std::string out;
  for (int r = 0; r < house.rows; ++r) {
    for (int c = 0; c < house.cols; ++c) {
      const Cell cell = house.cell(r, c);
      out += cell == Cell::Wall ? '#' : cell == Cell::Door ? '+' : '.';
    }
    out += '\n';
  }
  return out;
}

namespace {

nlohmann::json house_json(const HouseMap& h) {
  nlohmann::json j;
  j["id"] = h.id;
  std::vector<std::string> rows;
  std::istringstream in(to_ascii(h));
  std::string line;
  while (std::getline(in, line)) rows.push_back(line);
  j["grid"] = rows;
  j["room_labels"] = h.room_label;
  j["room_kinds"] = h.room_kinds;
  auto objs = nlohmann::json::array();
  for (const auto& o : h.objects) {
    nlohmann::json jo;
    jo["id"] = o.id;
    jo["kind"] = object_kind_names()[static_cast<size_t>(o.kind)];
    jo["color"] = color_names()[static_cast<size_t>(o.color)];
    jo["cell"] = {o.cell.r, o.cell.c};
    jo["next_to"] = o.next_to;
    objs.push_back(jo);
  }
  j["objects"] = objs;
  return j;
}

int name_index(const std::vector<std::string>& names, const std::string& s,
               const char* what) {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<int>(i);
  check(false, std::string("unknown ") + what + " '" + s + "'");
  return 0;
}

HouseMap house_from(const nlohmann::json& j) {
  std::string art;
  for (const auto& row : j.at("grid"))
    art += row.get<std::string>() + "\n";
  HouseMap h = from_ascii(art);
  h.id = j.at("id").get<int>();
  h.room_label = j.at("room_labels").get<std::vector<int>>();
  h.room_kinds = j.at("room_kinds").get<std::vector<int>>();
  check(h.room_label.size() == h.grid.size(),
        "house json: room_labels size mismatch");
  for (const auto& jo : j.at("objects")) {
    ObjectInstance o;
    o.id = jo.at("id").get<int>();
    o.kind = name_index(object_kind_names(), jo.at("kind").get<std::string>(),
                        "object kind");
    o.color =
        name_index(color_names(), jo.at("color").get<std::string>(), "color");
    o.cell = {jo.at("cell")[0].get<int>(), jo.at("cell")[1].get<int>()};
    o.next_to = jo.at("next_to").get<std::vector<int>>();
    check(h.passable(o.cell) && h.cell(o.cell.r, o.cell.c) == Cell::Floor,
          "house json: object not on a floor cell");
    h.objects.push_back(o);
  }
  return h;
}

}  // namespace

std::string house_to_json(const HouseMap& house) {
  return house_json(house).dump(2);
}

HouseMap house_from_json(const std::string& text) {
  return house_from(nlohmann::json::parse(text));
}

std::string houses_to_json(const std::vector<HouseMap>& houses) {
  auto arr = nlohmann::json::array();
  for (const auto& h : houses) arr.push_back(house_json(h));
  nlohmann::json j;
  j["houses"] = arr;
  return j.dump(2);
}

std::vector<HouseMap> houses_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  std::vector<HouseMap> out;
  for (const auto& jh : j.at("houses")) out.push_back(house_from(jh));
  return out;
}

// ---- rendering --------------------------------------------------------------

int palette_index(int kind, int color) { return (kind * 13 + color * 5) & 63; }

std::array<float, 3> palette_color(int index) {
  check(index >= 0 && index < 64, "palette index out of range");
  // Golden-ratio hue walk at full saturation/value: 64 distinct, deterministic
  // entries whose channels stay near the ends of the unit interval.
  const double h = std::fmod(index * 0.61803398875, 1.0) * 6.0;
  const double s = 1.0;
  const double v = 1.0;
  const int i = static_cast<int>(h);
  const double f = h - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (i % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

std::array<float, 3> room_tint(int room_kind) {
  // Saturated floor colors: channel values sit at the ends of the unit
  // interval so floor bands carry room identity without washing out.
  static constexpr std::array<std::array<float, 3>, 10> tints{{
      {1.00f, 1.00f, 0.00f},  // kitchen
      {0.00f, 0.00f, 1.00f},  // bedroom
      {0.00f, 1.00f, 1.00f},  // bathroom
      {1.00f, 0.00f, 0.00f},  // living_room
      {0.00f, 1.00f, 0.00f},  // dining_room
      {1.00f, 0.00f, 1.00f},  // office
      {1.00f, 1.00f, 1.00f},  // hallway
      {0.00f, 0.00f, 0.50f},  // garage
      {1.00f, 0.50f, 0.00f},  // closet
      {0.00f, 1.00f, 0.50f},  // balcony
  }};
  check(room_kind >= 0 && room_kind < 10, "room kind out of range");
  return tints[static_cast<size_t>(room_kind)];
}

namespace {

constexpr int kMaxRayDepth = 10;

struct Hit {
  int d = kMaxRayDepth;  // integer cell distance along the ray
  std::array<float, 3> base{1.f, 1.f, 1.f};
  bool shaded = true;  // walls shade by 1/(1+d); doors/objects keep their color
};

// Integer DDA from the center of the agent's cell along dir = f + cam*p.
// The per-axis math is identical under 90° scene rotations (axes swap roles,
// values match), so rotating a symmetric scene yields bit-identical frames.
Hit cast_ray(const HouseMap& house, AgentPose pose, double cam) {
  const Coord f = heading_delta(pose.heading);
  const Coord p = heading_delta(turn_right(pose.heading));
  const double dir_r = f.r + cam * p.r;
  const double dir_c = f.c + cam * p.c;
  const double delta_r =
      dir_r == 0.0 ? std::numeric_limits<double>::infinity() : std::abs(1.0 / dir_r);
  const double delta_c =
      dir_c == 0.0 ? std::numeric_limits<double>::infinity() : std::abs(1.0 / dir_c);
  const int step_r = dir_r < 0 ? -1 : 1;
  const int step_c = dir_c < 0 ? -1 : 1;
  // Starting at the cell center, the first gridline on each axis is half a
  // cell away.
  double side_r = 0.5 * delta_r;
  double side_c = 0.5 * delta_c;
  int r = pose.cell.r, c = pose.cell.c;
  const bool fwd_is_r = f.r != 0;
  Hit hit;
  for (int d = 1; d <= kMaxRayDepth; ++d) {
    // Advance to the next cell boundary; ties resolve along the forward axis
    // so the tie-break itself rotates with the scene.
    const bool advance_r =
        side_r < side_c || (side_r == side_c && fwd_is_r);
    if (advance_r) {
      side_r += delta_r;
      r += step_r;
    } else {
      side_c += delta_c;
      c += step_c;
    }
    if (!house.in_bounds(r, c)) {
      hit.d = d;
      return hit;
    }
    const Cell cell = house.cell(r, c);
    if (cell == Cell::Wall) {
      hit.d = d;
      return hit;
    }
    if (cell == Cell::Door) {
      hit.d = d;
      hit.base = {1.f, 0.5f, 0.f};
      hit.shaded = false;
      return hit;
    }
    if (const ObjectInstance* obj = house.object_at({r, c})) {
      hit.d = d;
      hit.base = palette_color(palette_index(obj->kind, obj->color));
      hit.shaded = false;
      return hit;
    }
  }
  hit.d = kMaxRayDepth;
  return hit;
}

}  // namespace

Observation render(const HouseMap& house, AgentPose pose, int size) {
  check(house.passable(pose.cell), "render: pose on a wall cell");
  check(size >= 4, "render: size too small");
  Observation obs;
  obs.height = obs.width = size;
  obs.pose = pose;
  obs.rgb.assign(static_cast<size_t>(size) * size * 3, 0.f);

  const int room = house.room_of(pose.cell);
  const std::array<float, 3> floor_c =
      room >= 0 ? room_tint(house.room_kinds[static_cast<size_t>(room)])
                : std::array<float, 3>{1.f, 1.f, 1.f};
  const std::array<float, 3> ceil_c{0.f, 0.f, 0.f};

  for (int x = 0; x < size; ++x) {
    const double cam = (2.0 * x + 1.0) / size - 1.0;
    const Hit hit = cast_ray(house, pose, cam);
    const float shade =
        hit.shaded ? 1.0f / (1.0f + static_cast<float>(hit.d)) : 1.0f;
    const int line_h = std::max(1, size / hit.d);
    const int top = (size - line_h) / 2;
    const int bottom = top + line_h;
    for (int y = 0; y < size; ++y) {
      std::array<float, 3> px;
      if (y < top) {
        px = ceil_c;
      } else if (y >= bottom) {
        px = floor_c;
      } else {
        px = {hit.base[0] * shade, hit.base[1] * shade, hit.base[2] * shade};
      }
      const size_t at = (static_cast<size_t>(y) * size + x) * 3;
      obs.rgb[at] = px[0];
      obs.rgb[at + 1] = px[1];
      obs.rgb[at + 2] = px[2];
    }
  }
  return obs;
}

}  // namespace mindhouse::gridhouse
