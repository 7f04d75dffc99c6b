#include "rtn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace rtn {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'N', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : bytes_(b) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(std::string name, Tensor<float> value) {
  for (auto& r : records_)
    if (r.name == name) {
      r.value = std::move(value);
      return;
    }
  records_.push_back({std::move(name), std::move(value)});
}

const Tensor<float>* Checkpoint::find(std::string_view name) const {
  for (const auto& r : records_)
    if (r.name == name) return &r.value;
  return nullptr;
}

const Tensor<float>& Checkpoint::get(std::string_view name) const {
  const auto* t = find(name);
  if (!t) throw CheckpointError("checkpoint has no record '" + std::string(name) + "'");
  return *t;
}

float Checkpoint::get_scalar(std::string_view name) const {
  const auto& t = get(name);
  if (t.size() != 1) throw CheckpointError("record '" + std::string(name) + "' is not a scalar");
  return t[0];
}

std::string Checkpoint::encode() const {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(records_.size()));
  for (const auto& r : records_) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put_u32(out, static_cast<std::uint32_t>(r.value.rank()));
    for (auto d : r.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : r.value) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint Checkpoint::decode(std::string_view bytes) {
  Reader rd(bytes);
  if (rd.take(4, "magic") != std::string_view(kMagic, 4))
    throw CheckpointError("not an RTNT checkpoint (bad magic)");
  const std::uint32_t version = rd.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = rd.u32("record count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = rd.u32("name length");
    std::string name(rd.take(name_len, "name"));
    const std::uint32_t rank = rd.u32("rank");
    if (rank == 0 || rank > 8) throw CheckpointError("record '" + name + "' has invalid rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = rd.u32("dimension");
      if (d == 0) throw CheckpointError("record '" + name + "' has a zero dimension");
      numel *= d;
      if (numel > bytes.size()) throw CheckpointError("checkpoint truncated in record '" + name + "'");
    }
    std::vector<float> data(numel);
    for (auto& v : data) v = std::bit_cast<float>(rd.u32("tensor data"));
    ck.records_.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
  }
  if (!rd.done()) throw CheckpointError("trailing bytes after the last checkpoint record");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const std::string bytes = encode();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + tmp + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode(ss.str());
}

template <class T>
void store_params(Checkpoint& ck, const ModelParams<T>& params, const std::string& prefix) {
  for_each_tensor(params, [&](const std::string& name, const Tensor<T>& t) {
    ck.put_tensor(prefix + name, t);
  });
}

template <class T>
void restore_params(const Checkpoint& ck, ModelParams<T>& params, const std::string& prefix) {
  for_each_tensor(params, [&](const std::string& name, Tensor<T>& t) {
    const Tensor<float>& src = ck.get(prefix + name);
    if (src.shape() != t.shape())
      throw CheckpointError("record '" + prefix + name + "' has shape " +
                            shape_to_string(src.shape()) + ", model expects " +
                            shape_to_string(t.shape()));
    t = Tensor<T>::cast_from(src);
  });
}

void store_model_config(Checkpoint& ck, const ModelConfig& cfg) {
  std::vector<float> v = {float(cfg.in_channels),      float(cfg.conv_channels[0]),
                          float(cfg.conv_channels[1]), float(cfg.conv_channels[2]),
                          float(cfg.fc1),              float(cfg.fc2),
                          float(cfg.loc_hidden),       float(cfg.classes),
                          float(cfg.patch),            cfg.phi_readout == PhiReadout::linear ? 1.f : 0.f};
  const std::size_t n = v.size();
  ck.put("meta.model_config", Tensor<float>({n}, std::move(v)));
}

ModelConfig restore_model_config(const Checkpoint& ck) {
  const auto& t = ck.get("meta.model_config");
  if (t.size() != 10) throw CheckpointError("meta.model_config has unexpected length");
  ModelConfig c;
  c.in_channels = std::size_t(t[0]);
  c.conv_channels = {std::size_t(t[1]), std::size_t(t[2]), std::size_t(t[3])};
  c.fc1 = std::size_t(t[4]);
  c.fc2 = std::size_t(t[5]);
  c.loc_hidden = std::size_t(t[6]);
  c.classes = std::size_t(t[7]);
  c.patch = int(t[8]);
  c.phi_readout = t[9] != 0.f ? PhiReadout::linear : PhiReadout::circular;
  c.validate();
  return c;
}

template void store_params<float>(Checkpoint&, const ModelParams<float>&, const std::string&);
template void store_params<double>(Checkpoint&, const ModelParams<double>&, const std::string&);
template void restore_params<float>(const Checkpoint&, ModelParams<float>&, const std::string&);
template void restore_params<double>(const Checkpoint&, ModelParams<double>&, const std::string&);

}  // namespace rtn
