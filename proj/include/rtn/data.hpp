#pragma once

// Dataset ingestion for IDX (MNIST, Fashion-MNIST) and CIFAR-10 binary batches.
// Pixels are scaled to [0, 1]; images are stored as an (N, C, H, W) tensor.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtn/tensor.hpp"

namespace rtn {

class DataError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, count_mismatch, bad_size, bad_label };
  DataError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;

struct Dataset {
  std::string name;   // mnist | fashion_mnist | cifar10 | synthetic
  std::string split;  // train | test
  Tensor<float> images;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  /// Copy of one (C, H, W) image.
  template <class T = float>
  Tensor<T> image(std::size_t i) const;
  /// First n samples (all if n >= size()).
  Dataset head(std::size_t n) const;
};

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// split "train" reads data_batch_1..5.bin, "test" reads test_batch.bin.
Dataset load_cifar10(const std::filesystem::path& dir, const std::string& split);

/// Resolves the standard file layout under data_dir/<name>/.
Dataset load_dataset(const std::string& name, const std::filesystem::path& data_dir,
                     const std::string& split);

/// Data directory from an explicit flag, else RETINOTOPIC_DATA_DIR, else "data".
std::filesystem::path resolve_data_dir(const std::string& flag_value);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;  // floored at 1e-6
};

ChannelStats normalize_stats(const Dataset& ds);

// Writers for test fixtures and conversion tools.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::size_t rows, std::size_t cols, const std::vector<std::uint8_t>& pixels,
               const std::vector<std::uint8_t>& labels);
/// records: label byte followed by 3072 channel-planar RGB bytes each.
void write_cifar_batch(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels,
                       const std::vector<std::uint8_t>& pixels);

}  // namespace rtn
