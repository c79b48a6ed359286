#pragma once

#include <array>
#include <vector>

#include "mindhouse/gridhouse/house.hpp"
#include "mindhouse/ndnet/tensor.hpp"

namespace mindhouse::gridhouse {

/// Egocentric RGB frame plus the pose it was rendered from.
struct Observation {
  int height = 0, width = 0;
  std::vector<float> rgb;  // height*width*3, row-major, values in [0,1]
  AgentPose pose;

  ndnet::Tensor tensor() const {  // [3,H,W] layout for the conv stack
    auto t = ndnet::Tensor::zeros(ndnet::Shape{3, height, width});
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int ch = 0; ch < 3; ++ch)
          t.at((int64_t(ch) * height + y) * width + x) =
              rgb[(size_t(y) * width + x) * 3 + ch];
    return t;
  }
};

/// 64-entry color table; objects draw palette_color(palette_index(kind, color)).
int palette_index(int kind, int color);
std::array<float, 3> palette_color(int index);

/// Saturated floor color per room kind, used for the floor band.
std::array<float, 3> room_tint(int room_kind);

/// Column raycaster: per image column one ray in a 90° frustum, integer DDA
/// cell distance d (adjacent wall: d=1). Wall slices are white shaded by
/// 1/(1+d); door/object slices keep their kind color unshaded (depth shows in
/// the slice height size/d). Black ceiling above, agent-room floor color
/// below. Pure function of (house, pose); exact under 90° scene rotations.
Observation render(const HouseMap& house, AgentPose pose, int size = 32);

}  // namespace mindhouse::gridhouse
