#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <cstdlib>
#include <cmath>

#include "rtn/data.hpp"
#include "rtn/errors.hpp"
#include "support/tmpdir.hpp"

using namespace rtn;
using rtn::test::TempDir;

namespace {

void put_be32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(char((v >> shift) & 0xff));
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
}

// Hand-assembled IDX pair: n images of rows x cols, pixel k of image i is (i*7 + k) % 256.
struct IdxFixture {
  std::string images, labels;
  IdxFixture(std::uint32_t n, std::uint32_t rows, std::uint32_t cols) {
    put_be32(images, 0x803);
    put_be32(images, n);
    put_be32(images, rows);
    put_be32(images, cols);
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t k = 0; k < rows * cols; ++k) images.push_back(char((i * 7 + k) % 256));
    put_be32(labels, 0x801);
    put_be32(labels, n);
    for (std::uint32_t i = 0; i < n; ++i) labels.push_back(char(i % 10));
  }
  Dataset load(const TempDir& dir) const {
    write_bytes(dir / "img", images);
    write_bytes(dir / "lbl", labels);
    return load_idx(dir / "img", dir / "lbl");
  }
};

DataError::Kind error_kind(const IdxFixture& fx, const TempDir& dir) {
  try {
    fx.load(dir);
  } catch (const DataError& e) {
    return e.kind();
  }
  FAIL("no DataError thrown");
  return DataError::Kind::io;
}

}  // namespace

TEST_CASE("IDX parsing") {
  TempDir dir("idx");
  const Dataset ds = IdxFixture(3, 4, 5).load(dir);
  CHECK(ds.size() == 3);
  CHECK(ds.images.shape() == Shape{3, 1, 4, 5});
  CHECK(ds.labels == std::vector<std::uint8_t>{0, 1, 2});
  CHECK(ds.images[0] == 0.0f);
  CHECK(ds.images[20 + 6] == float(13) / 255.0f);
  const auto img = ds.image<double>(2);
  CHECK(img.shape() == Shape{1, 4, 5});
  CHECK(img[19] == doctest::Approx(33.0 / 255.0));
  CHECK(ds.head(2).size() == 2);
  CHECK(ds.head(99).size() == 3);
}

TEST_CASE("IDX errors have distinct kinds") {
  TempDir dir("idx_err");
  IdxFixture magic(2, 3, 3);
  magic.images[3] = 0x02;
  CHECK(error_kind(magic, dir) == DataError::Kind::bad_magic);
  IdxFixture lmagic(2, 3, 3);
  lmagic.labels[2] = 0x09;
  CHECK(error_kind(lmagic, dir) == DataError::Kind::bad_magic);
  IdxFixture cut(2, 3, 3);
  cut.images.resize(cut.images.size() - 1);
  CHECK(error_kind(cut, dir) == DataError::Kind::truncated);
  IdxFixture header(2, 3, 3);
  header.images.resize(10);
  CHECK(error_kind(header, dir) == DataError::Kind::truncated);
  IdxFixture count(2, 3, 3);
  count.labels[7] = 3;
  count.labels.push_back(0);
  CHECK(error_kind(count, dir) == DataError::Kind::count_mismatch);
  IdxFixture label(2, 3, 3);
  label.labels[9] = 10;
  CHECK(error_kind(label, dir) == DataError::Kind::bad_label);
  try {
    load_idx(dir / "missing", dir / "missing2");
    FAIL("expected an io error");
  } catch (const DataError& e) {
    CHECK(e.kind() == DataError::Kind::io);
  }
}

TEST_CASE("IDX writer round trip") {
  TempDir dir("idx_rt");
  std::vector<std::uint8_t> pixels(4 * 6 * 5), labels{9, 0, 4, 7};
  for (std::size_t k = 0; k < pixels.size(); ++k) pixels[k] = std::uint8_t(k * 13 % 256);
  write_idx(dir / "i", dir / "l", 6, 5, pixels, labels);
  const Dataset ds = load_idx(dir / "i", dir / "l");
  CHECK(ds.labels == labels);
  CHECK(ds.images.shape() == Shape{4, 1, 6, 5});
  for (std::size_t k = 0; k < pixels.size(); ++k) REQUIRE(ds.images[k] == float(pixels[k]) / 255.0f);
}

TEST_CASE("CIFAR batches") {
  TempDir dir("cifar");
  const auto cdir = dir.path() / "cifar10";
  std::filesystem::create_directories(cdir);
  // Hand-assembled record: label then R, G, B planes.
  std::string rec(kCifarRecordBytes, '\0');
  rec[0] = 6;
  for (std::size_t k = 0; k < 3072; ++k) rec[1 + k] = char(k / 1024 * 100 + k % 7);
  write_bytes(cdir / "test_batch.bin", rec + rec);
  const Dataset test = load_dataset("cifar10", dir.path(), "test");
  CHECK(test.size() == 2);
  CHECK(test.images.shape() == Shape{2, 3, 32, 32});
  CHECK(test.labels[1] == 6);
  CHECK(test.images[1024] == 102.0f / 255.0f);      // first green pixel, 1024 % 7 == 2
  CHECK(test.images[2048 + 3] == 200.0f / 255.0f);  // blue plane, 2051 % 7 == 0

  std::vector<std::uint8_t> labels, pixels;
  for (int b = 1; b <= 5; ++b) {
    labels = {std::uint8_t(b), std::uint8_t(b + 1)};
    pixels.assign(2 * 3072, std::uint8_t(b * 10));
    write_cifar_batch(cdir / ("data_batch_" + std::to_string(b) + ".bin"), labels, pixels);
  }
  const Dataset train = load_cifar10(cdir, "train");
  CHECK(train.size() == 10);
  CHECK(train.labels[9] == 6);
  CHECK(train.images[9 * 3072] == 50.0f / 255.0f);

  write_bytes(cdir / "test_batch.bin", rec.substr(0, 1000));
  try {
    load_cifar10(cdir, "test");
    FAIL("expected a size error");
  } catch (const DataError& e) {
    CHECK(e.kind() == DataError::Kind::bad_size);
    CHECK(std::string(e.what()).find("1000") != std::string::npos);
    CHECK(std::string(e.what()).find("30730000") != std::string::npos);
  }
  CHECK_THROWS_AS(load_cifar10(cdir, "val"), ContractError);
  CHECK_THROWS_AS(load_dataset("svhn", dir.path(), "test"), ContractError);
}

TEST_CASE("channel statistics") {
  Dataset flat;
  flat.images = Tensor<float>({4, 1, 3, 3}, 0.25f);
  flat.labels.assign(4, 0);
  const auto s = normalize_stats(flat);
  CHECK(s.mean[0] == doctest::Approx(0.25));
  CHECK(s.std[0] == 1e-6);

  Dataset two;
  two.images = Tensor<float>({2, 3, 1, 2}, {0, 1, 0.5f, 0.5f, 1, 1, 0, 0, 0.5f, 0.5f, 1, 1});
  two.labels = {0, 1};
  const auto t = normalize_stats(two);
  CHECK(t.mean[0] == doctest::Approx(0.25));
  CHECK(t.std[0] == doctest::Approx(std::sqrt(0.1875)));
  CHECK(t.mean[1] == doctest::Approx(0.5));
  CHECK(t.std[1] == doctest::Approx(1e-6));
  CHECK(t.mean[2] == doctest::Approx(1.0));
}

TEST_CASE("data directory resolution") {
  CHECK(resolve_data_dir("/x/y") == std::filesystem::path("/x/y"));
  ::setenv("RETINOTOPIC_DATA_DIR", "/from/env", 1);
  CHECK(resolve_data_dir("") == std::filesystem::path("/from/env"));
  ::unsetenv("RETINOTOPIC_DATA_DIR");
  CHECK(resolve_data_dir("") == std::filesystem::path("data"));
}

TEST_CASE("real MNIST files" * doctest::skip(!std::filesystem::exists(std::filesystem::path(RTN_DATA_DIR) / "mnist"))) {
  const Dataset train = load_dataset("mnist", RTN_DATA_DIR, "train");
  const Dataset test = load_dataset("mnist", RTN_DATA_DIR, "test");
  CHECK(train.size() == 60000);
  CHECK(test.size() == 10000);
  CHECK(train.channels() == 1);
  CHECK(train.height() == 28);
  CHECK(train.width() == 28);
  const auto s = normalize_stats(train);
  CHECK(std::abs(s.mean[0] - 0.1307) < 5e-4);
  CHECK(std::abs(s.std[0] - 0.3081) < 5e-4);
}
