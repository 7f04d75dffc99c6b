// Writes a small synthetic MNIST-layout dataset (IDX files) for the CLI smoke
// test, plus a PPM image for the warp command.
//
//   make_fixture <data_dir>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <vector>

#include "rtn/data.hpp"
#include "rtn/ppm.hpp"

namespace fs = std::filesystem;

namespace {

void write_split(const fs::path& dir, const char* prefix, std::size_t n, unsigned offset) {
  const std::size_t side = 28;
  std::vector<std::uint8_t> pixels(n * side * side), labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned label = unsigned(i + offset) % 10;
    labels[i] = std::uint8_t(label);
    const double a = 2.0 * std::numbers::pi * label / 10.0;
    const double cx = 13.5 + 8.0 * std::cos(a), cy = 13.5 + 8.0 * std::sin(a);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        pixels[(i * side + y) * side + x] = std::uint8_t(255.0 * std::exp(-d2 / 8.0));
      }
  }
  rtn::write_idx(dir / (std::string(prefix) + "-images-idx3-ubyte"), dir / (std::string(prefix) + "-labels-idx1-ubyte"),
                 side, side, pixels, labels);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: make_fixture <data_dir>\n");
    return 2;
  }
  const fs::path root = argv[1];
  fs::create_directories(root / "mnist");
  write_split(root / "mnist", "train", 64, 0);
  write_split(root / "mnist", "t10k", 20, 3);

  rtn::PpmImage img{40, 30, 3, {}};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      img.pixels.push_back(std::uint8_t(6 * x));
      img.pixels.push_back(std::uint8_t(8 * y));
      img.pixels.push_back(std::uint8_t((x * y) % 256));
    }
  rtn::write_ppm(root / "input.ppm", img);
  return 0;
}
