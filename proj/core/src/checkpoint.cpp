#include "mst/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace mst {
namespace {

constexpr const char* kFormat = "mst-checkpoint";
constexpr int kVersion = 1;

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

template <typename T>
void append_le(std::vector<unsigned char>& blob, std::span<const T> values) {
  const std::size_t start = blob.size();
  blob.resize(start + values.size() * sizeof(T));
  std::memcpy(blob.data() + start, values.data(), values.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = start; i < blob.size(); i += sizeof(T)) std::reverse(blob.begin() + i, blob.begin() + i + sizeof(T));
  }
}

template <typename T>
std::vector<double> read_le(const std::vector<unsigned char>& blob, std::size_t offset, std::size_t nbytes) {
  if (offset + nbytes > blob.size() || nbytes % sizeof(T) != 0) throw FormatError("checkpoint: tensor outside blob");
  std::vector<double> out(nbytes / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, blob.data() + offset + i * sizeof(T), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    out[i] = static_cast<double>(v);
  }
  return out;
}

std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const MstModel<T>& model, const AdamW<T>* optimizer,
                     const nlohmann::json& metadata) {
  std::filesystem::create_directories(dir);
  std::vector<unsigned char> blob;
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["dtype"] = dtype_name<T>();
  manifest["config"] = model.config();
  manifest["metadata"] = metadata;
  auto& tensors = manifest["tensors"] = nlohmann::json::array();
  for (const auto& e : model.params().entries()) {
    const std::size_t offset = blob.size();
    append_le<T>(blob, e.tensor.values());
    tensors.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", offset}, {"nbytes", blob.size() - offset}});
  }
  if (optimizer != nullptr) {
    nlohmann::json opt;
    opt["step"] = optimizer->step_count();
    opt["lr"] = optimizer->options().lr;
    auto& moments = opt["moments"] = nlohmann::json::array();
    for (std::size_t i = 0; i < optimizer->params().size(); ++i) {
      const std::size_t m_off = blob.size();
      append_le<T>(blob, std::span<const T>(optimizer->first_moment(i)));
      const std::size_t v_off = blob.size();
      append_le<T>(blob, std::span<const T>(optimizer->second_moment(i)));
      moments.push_back({{"name", optimizer->params()[i].name},
                         {"first_offset", m_off},
                         {"second_offset", v_off},
                         {"nbytes", v_off - m_off}});
    }
    manifest["optimizer"] = opt;
  }
  {
    std::ofstream out(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(blob.data()), std::streamsize(blob.size()));
    if (!out) throw FormatError("checkpoint: failed writing weights.bin");
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw FormatError("checkpoint: failed writing manifest.json");
}

Checkpoint read_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("checkpoint: missing manifest.json in " + dir.string());
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  try {
    if (manifest.at("format") != kFormat) throw FormatError("checkpoint: unknown format");
    if (manifest.at("version").get<int>() != kVersion) throw FormatError("checkpoint: unsupported version");
    Checkpoint ck;
    ck.dtype = manifest.at("dtype").get<std::string>();
    if (ck.dtype != "float32" && ck.dtype != "float64") throw FormatError("checkpoint: unknown dtype " + ck.dtype);
    ck.config = manifest.at("config").get<ModelConfig>();
    if (manifest.contains("metadata")) ck.metadata = manifest["metadata"];
    const auto blob = read_file(dir / "weights.bin");
    auto read = [&](std::size_t off, std::size_t n) {
      return ck.dtype == "float32" ? read_le<float>(blob, off, n) : read_le<double>(blob, off, n);
    };
    for (const auto& t : manifest.at("tensors")) {
      CheckpointTensor ct;
      ct.name = t.at("name").get<std::string>();
      ct.shape = t.at("shape").get<std::vector<std::size_t>>();
      ct.values = read(t.at("offset").get<std::size_t>(), t.at("nbytes").get<std::size_t>());
      if (ct.values.size() != shape_numel(ct.shape)) throw FormatError("checkpoint: size mismatch for " + ct.name);
      ck.tensors.push_back(std::move(ct));
    }
    if (manifest.contains("optimizer")) {
      const auto& o = manifest["optimizer"];
      OptimizerSnapshot snap;
      snap.step = o.at("step").get<std::int64_t>();
      snap.lr = o.at("lr").get<double>();
      for (const auto& m : o.at("moments")) {
        const auto n = m.at("nbytes").get<std::size_t>();
        snap.first.push_back(read(m.at("first_offset").get<std::size_t>(), n));
        snap.second.push_back(read(m.at("second_offset").get<std::size_t>(), n));
      }
      ck.optimizer = std::move(snap);
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  }
}

template <typename T>
void load_weights(const Checkpoint& ckpt, MstModel<T>& model) {
  auto& store = model.params();
  if (ckpt.tensors.size() != store.size()) {
    throw FormatError("checkpoint: holds " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                      std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const auto& src = ckpt.tensors[i];
    const auto& dst = store.entries()[i];
    if (src.name != dst.name || src.shape != dst.tensor.shape()) {
      throw FormatError("checkpoint: tensor " + src.name + " does not match model parameter " + dst.name);
    }
    Tensor<T> handle = dst.tensor;
    auto out = handle.mutable_values();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<T>(src.values[k]);
  }
}

template <typename T>
void load_optimizer(const Checkpoint& ckpt, AdamW<T>& optimizer) {
  if (!ckpt.optimizer) throw FormatError("checkpoint: no optimizer state");
  const auto& snap = *ckpt.optimizer;
  if (snap.first.size() != optimizer.params().size()) throw FormatError("checkpoint: optimizer size mismatch");
  for (std::size_t i = 0; i < snap.first.size(); ++i) {
    auto& m = optimizer.first_moment(i);
    auto& v = optimizer.second_moment(i);
    if (snap.first[i].size() != m.size()) throw FormatError("checkpoint: moment size mismatch");
    for (std::size_t k = 0; k < m.size(); ++k) {
      m[k] = static_cast<T>(snap.first[i][k]);
      v[k] = static_cast<T>(snap.second[i][k]);
    }
  }
  optimizer.restore_step_count(snap.step);
  optimizer.set_lr(snap.lr);
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw FormatError("sha256: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string checkpoint_hash(const std::filesystem::path& dir) {
  const auto blob = read_file(dir / "weights.bin");
  return sha256_hex(blob);
}

template void save_checkpoint(const std::filesystem::path&, const MstModel<float>&, const AdamW<float>*,
                              const nlohmann::json&);
template void save_checkpoint(const std::filesystem::path&, const MstModel<double>&, const AdamW<double>*,
                              const nlohmann::json&);
template void load_weights(const Checkpoint&, MstModel<float>&);
template void load_weights(const Checkpoint&, MstModel<double>&);
template void load_optimizer(const Checkpoint&, AdamW<float>&);
template void load_optimizer(const Checkpoint&, AdamW<double>&);

}  // namespace mst
