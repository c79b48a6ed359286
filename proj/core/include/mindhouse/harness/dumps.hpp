#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mindhouse/agent/agent.hpp"
#include "mindhouse/gridhouse/house.hpp"
#include "mindhouse/mind/mind.hpp"
#include "mindhouse/ndnet/tensor.hpp"

namespace mindhouse::harness {

/// Binary P6 PPM; bit-exact and dependency-free, so dumps can be diffed.
void write_ppm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb);

/// [3,H,W] float frame in [0,1] -> H*W*3 bytes (rounded).
std::vector<uint8_t> frame_to_rgb(const ndnet::Tensor& frame);

/// Top-down map raster at `cell_scale` pixels per cell: walls black, floor
/// white, doors light gray, object cells shown in their palette color.
/// Each trajectory (a pose sequence) paints its visited cells in a distinct
/// cycling color, with a dark inset marking the start cell and a black
/// inset marking the final cell. Deterministic; throws when a pose leaves
/// the grid.
std::vector<uint8_t> render_topdown(
    const gridhouse::HouseMap& house,
    const std::vector<std::vector<gridhouse::AgentPose>>& trajectories,
    int cell_scale = 8);

void dump_topdown(
    const gridhouse::HouseMap& house,
    const std::vector<std::vector<gridhouse::AgentPose>>& trajectories,
    const std::string& path, int cell_scale = 8);

/// At planner step `step_index` of a recorded trajectory: collects the
/// planner's upcoming action run (up to the next Stop), rolls the imagery
/// model forward from that step's representation, and writes
///   real_00.ppm            the frame observed at the step,
///   real_01.. / mental_01..  the frame actually reached after each action
///                            next to its decoded mental image.
/// Returns the written paths. An action run of length zero (the step is a
/// Stop) writes only real_00.ppm. Throws when `step_index` is out of range.
std::vector<std::string> dump_mental_rollout(
    const ndnet::ParamSet& ps, const mind::MindHandles& mh,
    const gridhouse::HouseMap& house, const agent::TrajectoryRecord& traj,
    int step_index, const std::string& out_dir, uint64_t seed = 0,
    double temperature = 1.0);

}  // namespace mindhouse::harness
