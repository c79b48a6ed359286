#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mindhouse/util/check.hpp"

namespace mindhouse::gridhouse {

enum class Cell : uint8_t { Wall = 0, Floor = 1, Door = 2 };

enum class Heading : uint8_t { N = 0, E = 1, S = 2, W = 3 };

enum class Action : uint8_t { Forward = 0, TurnLeft = 1, TurnRight = 2, Stop = 3 };

constexpr int kNumActions = 4;
constexpr int kNumHeadings = 4;

const char* heading_name(Heading h);
Heading heading_from_name(const std::string& s);
const char* action_name(Action a);
Action action_from_name(const std::string& s);

struct Coord {
  int r = 0, c = 0;
  bool operator==(const Coord& o) const { return r == o.r && c == o.c; }
  bool operator!=(const Coord& o) const { return !(*this == o); }
};

/// Row/col displacement of one Forward step per heading.
inline Coord heading_delta(Heading h) {
  static constexpr std::array<Coord, 4> d{{{-1, 0}, {0, 1}, {1, 0}, {0, -1}}};
  return d[static_cast<size_t>(h)];
}

inline Heading turn_left(Heading h) {
  return static_cast<Heading>((static_cast<int>(h) + 3) % 4);
}
inline Heading turn_right(Heading h) {
  return static_cast<Heading>((static_cast<int>(h) + 1) % 4);
}

struct AgentPose {
  Coord cell;
  Heading heading = Heading::N;
  bool operator==(const AgentPose& o) const {
    return cell == o.cell && heading == o.heading;
  }
};

struct ObjectInstance {
  int id = 0;
  int kind = 0;   // index into object_kind_names()
  int color = 0;  // index into color_names()
  Coord cell;
  std::vector<int> next_to;  // ids of orthogonally adjacent objects
};

/// Rectangular multi-room grid house. Walls enclose everything; doors are
/// single passage cells joining exactly two rooms; objects sit on floor
/// cells (they do not block movement — the agent can stand at furniture).
struct HouseMap {
  int id = 0;
  int rows = 0, cols = 0;
  std::vector<Cell> grid;        // rows*cols, row-major
  std::vector<int> room_label;   // room index per cell; -1 for walls/doors
  std::vector<int> room_kinds;   // per room index -> kind in [0, 10)
  std::vector<ObjectInstance> objects;

  int index(int r, int c) const { return r * cols + c; }
  bool in_bounds(int r, int c) const {
    return r >= 0 && r < rows && c >= 0 && c < cols;
  }
  Cell cell(int r, int c) const {
    check(in_bounds(r, c), "cell out of bounds");
    return grid[static_cast<size_t>(index(r, c))];
  }
  bool passable(int r, int c) const {
    return in_bounds(r, c) && cell(r, c) != Cell::Wall;
  }
  bool passable(Coord p) const { return passable(p.r, p.c); }

  const ObjectInstance* object_at(Coord p) const {
    for (const auto& o : objects)
      if (o.cell == p) return &o;
    return nullptr;
  }
  int room_of(Coord p) const {
    check(in_bounds(p.r, p.c), "room_of: out of bounds");
    return room_label[static_cast<size_t>(index(p.r, p.c))];
  }
};

// Fixed vocabularies (sizes 10 / 50 / 8).
const std::vector<std::string>& room_kind_names();
const std::vector<std::string>& object_kind_names();
const std::vector<std::string>& color_names();

/// Procedural generation: recursive wall splits into `room_count` rooms, a
/// spanning tree of doors, random objects (2..4 per room, each keeping one
/// free orthogonal floor neighbor). Deterministic in seed. Throws after
/// bounded retries when the size cannot fit the requested rooms.
HouseMap generate_house(uint64_t seed, int room_count, int grid_size);

/// One action of pose dynamics. Forward into a wall leaves the pose unchanged.
AgentPose step(const HouseMap& house, AgentPose pose, Action a);

/// Minimal primitive-action distances from every pose to `target`, via BFS
/// over reversed pose-graph edges. dist index = (r*cols + c)*4 + heading.
struct DistanceField {
  Coord target;
  std::vector<int> dist;  // -1 where unreachable (walls)
  int at(const HouseMap& h, AgentPose p) const {
    return dist[static_cast<size_t>(h.index(p.cell.r, p.cell.c)) * 4 +
                static_cast<size_t>(p.heading)];
  }
};
DistanceField compute_distance_field(const HouseMap& house, Coord target);

/// Minimal action sequence from `start` to any pose at `goal`, ending with
/// Stop. BFS over the (cell, heading) pose graph; ties broken by the fixed
/// action order Forward < TurnLeft < TurnRight.
std::vector<Action> shortest_path(const HouseMap& house, AgentPose start,
                                  Coord goal);

/// Same, but the final pose must face `goal_heading` (used for expert
/// demonstrations that end looking at the question's object).
std::vector<Action> shortest_path(const HouseMap& house, AgentPose start,
                                  Coord goal, Heading goal_heading);

/// Minimal number of pre-Stop primitive actions from pose to target-cell.
int geodesic_dist(const HouseMap& house, AgentPose pose, Coord target);

struct SpawnResult {
  AgentPose pose;
  int distance = 0;  // achieved geodesic distance
  bool fallback = false;  // true when no pose at exactly k existed
};

/// Uniformly random pose at geodesic distance exactly k from target; when no
/// such pose exists, the nearest available distance ≤ k is used and flagged.
SpawnResult spawn_at_distance(const HouseMap& house, Coord target, int k,
                              uint64_t seed);

/// Test-construction helper: '#' wall, '.' floor, '+' door. Room labels are
/// assigned by flood fill (doors separate rooms); room kinds default to the
/// room index modulo the kind count. Objects are added by the caller.
HouseMap from_ascii(const std::string& art);
std::string to_ascii(const HouseMap& house);

// JSON round trip (grid as row strings, object table).
std::string house_to_json(const HouseMap& house);
HouseMap house_from_json(const std::string& text);
std::string houses_to_json(const std::vector<HouseMap>& houses);
std::vector<HouseMap> houses_from_json(const std::string& text);

}  // namespace mindhouse::gridhouse
