#include "rtn/data.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace rtn {

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError(DataError::Kind::io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::uint32_t be32(const std::string& b, std::size_t off) {
  return (std::uint32_t(static_cast<unsigned char>(b[off])) << 24) |
         (std::uint32_t(static_cast<unsigned char>(b[off + 1])) << 16) |
         (std::uint32_t(static_cast<unsigned char>(b[off + 2])) << 8) |
         std::uint32_t(static_cast<unsigned char>(b[off + 3]));
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  os.write(b, 4);
}

void check_labels(const std::vector<std::uint8_t>& labels, const std::string& where) {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] > 9)
      throw DataError(DataError::Kind::bad_label,
                      where + ": label " + std::to_string(labels[i]) + " at index " +
                          std::to_string(i) + " is outside 0..9");
}

}  // namespace

template <class T>
Tensor<T> Dataset::image(std::size_t i) const {
  RTN_REQUIRE(i < size(), "Dataset::image: index out of range");
  const std::size_t n = channels() * height() * width();
  std::vector<T> d(n);
  const float* src = images.data() + i * n;
  for (std::size_t k = 0; k < n; ++k) d[k] = static_cast<T>(src[k]);
  return Tensor<T>({channels(), height(), width()}, std::move(d));
}

template Tensor<float> Dataset::image<float>(std::size_t) const;
template Tensor<double> Dataset::image<double>(std::size_t) const;

Dataset Dataset::head(std::size_t n) const {
  if (n >= size()) return *this;
  const std::size_t per = channels() * height() * width();
  Dataset d{name, split, Tensor<float>({n, channels(), height(), width()}), {labels.begin(), labels.begin() + n}};
  std::copy_n(images.data(), n * per, d.images.data());
  return d;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const std::string ib = read_file(images_path);
  const std::string lb = read_file(labels_path);
  if (ib.size() < 16) throw DataError(DataError::Kind::truncated, images_path.string() + ": header truncated");
  if (lb.size() < 8) throw DataError(DataError::Kind::truncated, labels_path.string() + ": header truncated");
  if (be32(ib, 0) != kIdxImageMagic)
    throw DataError(DataError::Kind::bad_magic, images_path.string() + ": bad IDX image magic");
  if (be32(lb, 0) != kIdxLabelMagic)
    throw DataError(DataError::Kind::bad_magic, labels_path.string() + ": bad IDX label magic");
  const std::size_t n = be32(ib, 4), rows = be32(ib, 8), cols = be32(ib, 12);
  const std::size_t nl = be32(lb, 4);
  if (n != nl)
    throw DataError(DataError::Kind::count_mismatch,
                    "IDX image count " + std::to_string(n) + " differs from label count " + std::to_string(nl));
  if (n == 0 || rows == 0 || cols == 0)
    throw DataError(DataError::Kind::bad_size, images_path.string() + ": empty dimensions");
  if (ib.size() < 16 + n * rows * cols)
    throw DataError(DataError::Kind::truncated, images_path.string() + ": pixel data truncated");
  if (lb.size() < 8 + n) throw DataError(DataError::Kind::truncated, labels_path.string() + ": label data truncated");

  Dataset ds;
  ds.images = Tensor<float>({n, 1, rows, cols});
  for (std::size_t k = 0; k < n * rows * cols; ++k)
    ds.images[k] = static_cast<float>(static_cast<unsigned char>(ib[16 + k])) / 255.0f;
  ds.labels.assign(lb.begin() + 8, lb.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  check_labels(ds.labels, labels_path.string());
  return ds;
}

Dataset load_cifar10(const std::filesystem::path& dir, const std::string& split) {
  std::vector<std::string> files;
  if (split == "train")
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  else if (split == "test")
    files.push_back("test_batch.bin");
  else
    throw ContractError("load_cifar10: split must be train or test");

  std::vector<std::string> blobs;
  std::size_t total = 0;
  for (const auto& f : files) {
    const auto path = dir / f;
    blobs.push_back(read_file(path));
    const std::size_t expected = 10000 * kCifarRecordBytes;
    if (blobs.back().size() == 0 || blobs.back().size() % kCifarRecordBytes != 0)
      throw DataError(DataError::Kind::bad_size, path.string() + ": expected " +
                                                     std::to_string(expected) + " bytes, got " +
                                                     std::to_string(blobs.back().size()));
    total += blobs.back().size() / kCifarRecordBytes;
  }
  Dataset ds;
  ds.name = "cifar10";
  ds.split = split;
  ds.images = Tensor<float>({total, 3, 32, 32});
  ds.labels.resize(total);
  std::size_t idx = 0;
  for (const auto& b : blobs)
    for (std::size_t r = 0; r < b.size() / kCifarRecordBytes; ++r, ++idx) {
      const char* rec = b.data() + r * kCifarRecordBytes;
      ds.labels[idx] = static_cast<std::uint8_t>(rec[0]);
      float* dst = ds.images.data() + idx * 3072;
      for (std::size_t k = 0; k < 3072; ++k)
        dst[k] = static_cast<float>(static_cast<unsigned char>(rec[1 + k])) / 255.0f;
    }
  check_labels(ds.labels, dir.string());
  return ds;
}

Dataset load_dataset(const std::string& name, const std::filesystem::path& data_dir,
                     const std::string& split) {
  RTN_REQUIRE(split == "train" || split == "test", "split must be train or test");
  Dataset ds;
  if (name == "mnist" || name == "fashion_mnist") {
    const std::string prefix = split == "train" ? "train" : "t10k";
    const auto dir = data_dir / name;
    ds = load_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"));
  } else if (name == "cifar10") {
    ds = load_cifar10(data_dir / "cifar10", split);
  } else {
    throw ContractError("unknown dataset '" + name + "' (expected mnist, fashion_mnist or cifar10)");
  }
  ds.name = name;
  ds.split = split;
  return ds;
}

std::filesystem::path resolve_data_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("RETINOTOPIC_DATA_DIR"); env && *env) return env;
  return "data";
}

ChannelStats normalize_stats(const Dataset& ds) {
  const std::size_t c = ds.channels(), plane = ds.height() * ds.width();
  ChannelStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  const double count = double(ds.size() * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const float* p = ds.images.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum += p[k];
        sq += double(p[k]) * p[k];
      }
    }
    s.mean[ch] = sum / count;
    s.std[ch] = std::max(std::sqrt(std::max(sq / count - s.mean[ch] * s.mean[ch], 0.0)), 1e-6);
  }
  return s;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::size_t rows, std::size_t cols, const std::vector<std::uint8_t>& pixels,
               const std::vector<std::uint8_t>& labels) {
  RTN_REQUIRE(pixels.size() == labels.size() * rows * cols, "write_idx: pixel count mismatch");
  std::ofstream fi(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream fl(labels_path, std::ios::binary | std::ios::trunc);
  if (!fi || !fl) throw DataError(DataError::Kind::io, "write_idx: cannot open output files");
  put_be32(fi, kIdxImageMagic);
  put_be32(fi, static_cast<std::uint32_t>(labels.size()));
  put_be32(fi, static_cast<std::uint32_t>(rows));
  put_be32(fi, static_cast<std::uint32_t>(cols));
  fi.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  put_be32(fl, kIdxLabelMagic);
  put_be32(fl, static_cast<std::uint32_t>(labels.size()));
  fl.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

void write_cifar_batch(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels,
                       const std::vector<std::uint8_t>& pixels) {
  RTN_REQUIRE(pixels.size() == labels.size() * 3072, "write_cifar_batch: pixel count mismatch");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError(DataError::Kind::io, "cannot open " + path.string());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    f.put(static_cast<char>(labels[i]));
    f.write(reinterpret_cast<const char*>(pixels.data() + i * 3072), 3072);
  }
}

}  // namespace rtn
