#pragma once

// "RTNT" checkpoint container, version 1. All integers are u32 little-endian:
//
//   magic "RTNT" | version | record count
//   per record: name length | UTF-8 name | rank | dims... | float32 LE data
//
// Model parameters, optimizer state and training progress are all stored as
// named float records.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rtn/model.hpp"
#include "rtn/tensor.hpp"

namespace rtn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointRecord {
  std::string name;
  Tensor<float> value;
};

class Checkpoint {
 public:
  void put(std::string name, Tensor<float> value);
  template <class T>
  void put_tensor(std::string name, const Tensor<T>& t) {
    put(std::move(name), Tensor<float>::cast_from(t));
  }
  void put_scalar(std::string name, float v) { put(std::move(name), Tensor<float>({1}, v)); }

  const Tensor<float>* find(std::string_view name) const;
  /// Throws CheckpointError when absent.
  const Tensor<float>& get(std::string_view name) const;
  float get_scalar(std::string_view name) const;

  const std::vector<CheckpointRecord>& records() const { return records_; }

  std::string encode() const;
  static Checkpoint decode(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<CheckpointRecord> records_;
};

/// Stores every parameter tensor as "<prefix><name>".
template <class T>
void store_params(Checkpoint& ck, const ModelParams<T>& params, const std::string& prefix = "");
/// Copies records into params; shapes must match exactly.
template <class T>
void restore_params(const Checkpoint& ck, ModelParams<T>& params, const std::string& prefix = "");

void store_model_config(Checkpoint& ck, const ModelConfig& cfg);
ModelConfig restore_model_config(const Checkpoint& ck);

}  // namespace rtn
