// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "nbsep/audio.hpp"

namespace nbsep {

namespace {

constexpr char kMagic[8] = {'N', 'B', 'S', 'E', 'P', 'C', 'K', 'P'};

void put_uint(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_string(std::string& out, const std::string& s) {
  put_uint(out, s.size(), 4);
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  std::uint64_t uint(int n) {
    need(std::size_t(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += std::size_t(n);
    return v;
  }

  std::string str() {
    const std::size_t n = uint(4);
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  const char* take(std::size_t n) {
    need(n);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& why) const {
    throw DataError("checkpoint " + origin_ + ": " + why);
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

template <typename T>
std::vector<double> widen(std::span<const T> v) {
  return std::vector<double>(v.begin(), v.end());
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const CheckpointTensor& Checkpoint::require(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw DataError("checkpoint: missing tensor " + name);
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw DataError("checkpoint: missing metadata " + key);
  return it->second;
}

void Checkpoint::put(CheckpointTensor tensor) {
  for (auto& t : tensors) {
    if (t.name == tensor.name) {
      t = std::move(tensor);
      return;
    }
  }
  tensors.push_back(std::move(tensor));
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put_uint(out, kCheckpointVersion, 4);
  put_uint(out, ckpt.metadata.size(), 4);
  for (const auto& [k, v] : ckpt.metadata) {
    put_string(out, k);
    put_string(out, v);
  }
  put_uint(out, ckpt.tensors.size(), 4);
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw ShapeError("checkpoint: tensor " + t.name + " has " +
                       std::to_string(t.values.size()) + " values for shape " +
                       shape_str(t.shape));
    }
    put_string(out, t.name);
    out.push_back(char(t.dtype));
    put_uint(out, t.shape.size(), 4);
    for (std::size_t d : t.shape) put_uint(out, d, 8);
    for (double v : t.values) {
      if (t.dtype == DType::F32) {
        const float f = float(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_uint(out, bits, 4);
      } else {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_uint(out, bits, 8);
      }
    }
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (std::memcmp(r.take(8), kMagic, 8) != 0) r.fail("not an nbsep checkpoint");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::size_t n_meta = r.uint(4);
  for (std::size_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ckpt.metadata[k] = r.str();
  }
  const std::size_t n_tensors = r.uint(4);
  for (std::size_t i = 0; i < n_tensors; ++i) {
    CheckpointTensor t;
    t.name = r.str();
    const auto tag = r.uint(1);
    if (tag > 1) r.fail("tensor " + t.name + " has unknown dtype " + std::to_string(tag));
    t.dtype = DType(tag);
    const std::size_t rank = r.uint(4);
    for (std::size_t d = 0; d < rank; ++d) t.shape.push_back(r.uint(8));
    const std::size_t n = shape_numel(t.shape);
    t.values.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (t.dtype == DType::F32) {
        const std::uint32_t bits = std::uint32_t(r.uint(4));
        float f;
        std::memcpy(&f, &bits, 4);
        t.values[j] = f;
      } else {
        const std::uint64_t bits = r.uint(8);
        std::memcpy(&t.values[j], &bits, 8);
      }
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) r.fail("trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  // Write then rename so an interrupted save never leaves a torn file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open " + tmp + " for writing");
    os.write(bytes.data(), std::streamsize(bytes.size()));
    if (!os) throw DataError("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("checkpoint: cannot rename " + tmp + " to " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path);
}

template <typename T>
void store_model(Checkpoint& ckpt, const Model<T>& model) {
  for (const auto& [k, v] : model.config().to_map()) ckpt.metadata[k] = v;
  ckpt.metadata["precision"] = sizeof(T) == 4 ? "float32" : "float64";
  for (const auto& p : model.parameters()) {
    ckpt.put({p.name, dtype_of<T>(), p.tensor.shape(), widen<T>(p.tensor.values())});
  }
  for (const auto& [name, norm] : model.norm_layers()) {
    if (!norm->has_running_stats) continue;
    const Shape shape{norm->running_mean.size()};
    ckpt.put({name + ".running_mean", DType::F64, shape, norm->running_mean});
    ckpt.put({name + ".running_var", DType::F64, shape, norm->running_var});
  }
}

template <typename T>
Model<T> restore_model(const Checkpoint& ckpt) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.rfind("model.", 0) == 0) kv[k] = v;
  }
  if (kv.empty()) throw DataError("checkpoint: no model configuration");
  Model<T> model(ModelConfig::from_map(kv), 0);
  for (auto& p : model.parameters()) {
    const CheckpointTensor& t = ckpt.require(p.name);
    if (t.shape != p.tensor.shape()) {
      throw DataError("checkpoint: tensor " + p.name + " has shape " + shape_str(t.shape) +
                      ", model expects " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = T(t.values[i]);
  }
  for (auto& [name, norm] : model.norm_layers()) {
    const auto* mean = ckpt.find(name + ".running_mean");
    const auto* var = ckpt.find(name + ".running_var");
    if (!mean || !var) continue;
    if (mean->values.size() != norm->hidden() || var->values.size() != norm->hidden()) {
      throw DataError("checkpoint: running statistics of " + name + " have the wrong size");
    }
    norm->running_mean = mean->values;
    norm->running_var = var->values;
    norm->has_running_stats = true;
  }
  return model;
}

template void store_model(Checkpoint&, const Model<float>&);
template void store_model(Checkpoint&, const Model<double>&);
template Model<float> restore_model(const Checkpoint&);
template Model<double> restore_model(const Checkpoint&);

}  // namespace nbsep
