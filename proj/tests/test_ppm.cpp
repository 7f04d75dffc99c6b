#include <doctest.h>

#include <fstream>
#include <stdexcept>

#include "rtn/ppm.hpp"
#include "support/tmpdir.hpp"

using namespace rtn;
using rtn::test::TempDir;

TEST_CASE("P6 and P5 round trips") {
  TempDir dir("ppm");
  PpmImage rgb{3, 2, 3, {}};
  for (int k = 0; k < 18; ++k) rgb.pixels.push_back(std::uint8_t(k * 14));
  write_ppm(dir / "a.ppm", rgb);
  const PpmImage back = read_ppm(dir / "a.ppm");
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.channels == 3);
  CHECK(back.pixels == rgb.pixels);

  PpmImage gray{2, 2, 1, {0, 64, 128, 255}};
  write_ppm(dir / "g.pgm", gray);
  const PpmImage g = read_ppm(dir / "g.pgm");
  CHECK(g.channels == 1);
  CHECK(g.pixels == gray.pixels);
}

TEST_CASE("headers with comments") {
  TempDir dir("ppm_hdr");
  {
    std::ofstream f(dir / "c.ppm", std::ios::binary);
    f << "P6\n# made by hand\n2 1\n# max\n255\n";
    f.write("\x01\x02\x03\x04\x05\x06", 6);
  }
  const PpmImage img = read_ppm(dir / "c.ppm");
  CHECK(img.width == 2);
  CHECK(img.pixels == std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("malformed files") {
  TempDir dir("ppm_bad");
  auto write = [&](const char* name, const std::string& s) {
    std::ofstream(dir / name, std::ios::binary) << s;
    return dir / name;
  };
  CHECK_THROWS_AS(read_ppm(write("ascii.ppm", "P3\n1 1\n255\n0 0 0\n")), std::runtime_error);
  CHECK_THROWS_AS(read_ppm(write("short.ppm", "P6\n2 2\n255\nabc")), std::runtime_error);
  CHECK_THROWS_AS(read_ppm(write("deep.ppm", "P6\n1 1\n65535\nabcdef")), std::runtime_error);
  CHECK_THROWS_AS(read_ppm(write("junk.ppm", "P6\nx y\n255\n")), std::runtime_error);
  CHECK_THROWS_AS(read_ppm(dir / "absent.ppm"), std::runtime_error);
}

TEST_CASE("tensor conversion") {
  const PpmImage rgb{2, 1, 3, {255, 0, 51, 0, 255, 102}};
  const Tensor<float> t = ppm_to_tensor(rgb);
  CHECK(t.shape() == Shape{3, 1, 2});
  CHECK(t(0, 0, 0) == 1.0f);
  CHECK(t(2, 0, 0) == 0.2f);
  CHECK(t(1, 0, 1) == 1.0f);
  CHECK(tensor_to_ppm(t).pixels == rgb.pixels);

  const Tensor<float> wide({1, 1, 3}, {-1.0f, 0.5f, 2.0f});
  CHECK(tensor_to_ppm(wide).pixels == std::vector<std::uint8_t>{0, 128, 255});
  CHECK(tensor_to_ppm(wide).channels == 1);
  const auto s = tensor_to_ppm(wide, true);
  CHECK(s.pixels.front() == 0);
  CHECK(s.pixels.back() == 255);
  CHECK(s.pixels[1] == 128);
}
