#include "rtn/ppm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rtn {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int header_int(std::istream& in, const std::filesystem::path& path) {
  const std::string t = header_token(in);
  try {
    return std::stoi(t);
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed PPM header");
  }
}

}  // namespace

PpmImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string magic = header_token(in);
  PpmImage img;
  if (magic == "P6")
    img.channels = 3;
  else if (magic == "P5")
    img.channels = 1;
  else
    throw std::runtime_error(path.string() + ": only binary P5/P6 images are supported");
  img.width = header_int(in, path);
  img.height = header_int(in, path);
  const int maxval = header_int(in, path);
  if (img.width <= 0 || img.height <= 0 || maxval != 255)
    throw std::runtime_error(path.string() + ": unsupported dimensions or maxval");
  img.pixels.resize(std::size_t(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw std::runtime_error(path.string() + ": pixel data truncated");
  return img;
}

void write_ppm(const std::filesystem::path& path, const PpmImage& img) {
  RTN_REQUIRE(img.channels == 1 || img.channels == 3, "write_ppm: channels must be 1 or 3");
  RTN_REQUIRE(img.pixels.size() == std::size_t(img.width) * img.height * img.channels,
              "write_ppm: pixel buffer size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

Tensor<float> ppm_to_tensor(const PpmImage& img) {
  const std::size_t c = img.channels, h = img.height, w = img.width;
  Tensor<float> t({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) t(ch, y, x) = img.pixels[(y * w + x) * c + ch] / 255.0f;
  return t;
}

PpmImage tensor_to_ppm(const Tensor<float>& t, bool stretch) {
  RTN_REQUIRE(t.rank() == 3 && (t.dim(0) == 1 || t.dim(0) == 3), "tensor_to_ppm: expected (1|3,H,W)");
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  float lo = 0.f, hi = 1.f;
  if (stretch) {
    const auto [mn, mx] = std::minmax_element(t.begin(), t.end());
    lo = *mn;
    hi = *mx > *mn ? *mx : *mn + 1.f;
  }
  PpmImage img{int(w), int(h), int(c), std::vector<std::uint8_t>(c * h * w)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v = std::clamp((t(ch, y, x) - lo) / (hi - lo), 0.f, 1.f);
        img.pixels[(y * w + x) * c + ch] = static_cast<std::uint8_t>(std::lround(v * 255.f));
      }
  return img;
}

}  // namespace rtn
