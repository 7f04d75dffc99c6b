#pragma once

// Binary PGM (P5) / PPM (P6) images with maxval 255.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rtn/tensor.hpp"

namespace rtn {

struct PpmImage {
  int width = 0;
  int height = 0;
  int channels = 3;                  // 1 for P5, 3 for P6
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

PpmImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const PpmImage& img);

/// (C, H, W) tensor with values in [0, 1].
Tensor<float> ppm_to_tensor(const PpmImage& img);
/// Values are clamped to [0, 1]; with `stretch` the tensor's own min/max map to 0/255.
PpmImage tensor_to_ppm(const Tensor<float>& t, bool stretch = false);

}  // namespace rtn
