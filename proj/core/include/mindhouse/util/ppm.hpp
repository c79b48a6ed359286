#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mindhouse/util/check.hpp"

namespace mindhouse::util {

/// Binary PPM (P6, 8-bit). `rgb` holds width*height*3 unit-interval values.
inline void write_ppm(const std::string& path, int width, int height,
                      const std::vector<float>& rgb) {
  check(static_cast<size_t>(width) * height * 3 == rgb.size(),
        "write_ppm: buffer size does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "write_ppm: cannot open " + path);
  out << "P6\n" << width << " " << height << "\n255\n";
  std::vector<uint8_t> bytes(rgb.size());
  for (size_t i = 0; i < rgb.size(); ++i) {
    float v = rgb[i];
    if (v < 0.f) v = 0.f;
    if (v > 1.f) v = 1.f;
    bytes[i] = static_cast<uint8_t>(v * 255.f + 0.5f);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  check(out.good(), "write_ppm: write failed for " + path);
}

}  // namespace mindhouse::util
