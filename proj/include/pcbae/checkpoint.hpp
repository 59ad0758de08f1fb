#pragma once

// Checkpoint file layout (all integers little-endian):
//   6 bytes   magic "PCBAE\x01"
//   u32       header length in bytes
//   header    UTF-8 JSON: format_version, model_config, metadata and a
//             tensor directory (name, shape, byte offset and length within
//             the payload section)
//   payload   concatenated little-endian float32 tensor data

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcbae/model.hpp"

namespace pcbae {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::array<char, 6> kCheckpointMagic{'P', 'C', 'B', 'A', 'E', '\x01'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string phase;  // "A", "B" or empty
  std::size_t epoch = 0;
  double loss = 0.0;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  ModelConfig config;
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor>> tensors;  // model order

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline Checkpoint make_checkpoint(const Autoencoder& model, CheckpointMeta meta = {}) {
  Checkpoint c{model.config(), std::move(meta), {}};
  for (const auto& nt : model.named_tensors()) c.tensors.emplace_back(nt.name, *nt.tensor);
  return c;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"input_height", c.input_height},
          {"input_width", c.input_width},
          {"channels", c.channels},
          {"kernel", c.kernel},
          {"seed", c.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input_height = j.at("input_height").get<std::size_t>();
  c.input_width = j.at("input_width").get<std::size_t>();
  c.channels = j.at("channels").get<std::vector<std::size_t>>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    if (!all_finite(t)) throw CheckpointError("refusing to save non-finite tensor '" + name + "'");
    const std::uint64_t len = t.size() * 4;
    dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"length", len}});
    offset += len;
  }
  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"model_config", config_to_json(c.config)},
                           {"metadata", {{"phase", c.meta.phase}, {"epoch", c.meta.epoch}, {"loss", c.meta.loss}}},
                           {"tensors", std::move(dir)}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : c.tensors) {
    for (float v : t.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

/// Parse a checkpoint image. Throws CheckpointError on a bad magic,
/// unsupported version, malformed header or truncated payload; nothing is
/// returned unless every tensor is complete.
inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kCheckpointMagic.size() + 4 ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw CheckpointError(origin + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t header_len = detail::get_u32(p + kCheckpointMagic.size());
  const std::size_t header_at = kCheckpointMagic.size() + 4;
  if (header_len > bytes.size() - header_at) {
    throw CheckpointError(origin + ": truncated header (" + std::to_string(header_len) + " bytes declared)");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<long>(header_at),
                                   bytes.begin() + static_cast<long>(header_at + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(origin + ": malformed header: " + e.what());
  }
  Checkpoint c;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError(origin + ": unsupported format version " + std::to_string(version));
    }
    c.config = config_from_json(header.at("model_config"));
    const auto& meta = header.at("metadata");
    c.meta = {meta.at("phase").get<std::string>(), meta.at("epoch").get<std::size_t>(),
              meta.at("loss").get<double>()};
    const std::size_t payload_at = header_at + header_len;
    const std::size_t payload_len = bytes.size() - payload_at;
    for (const auto& e : header.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      const Shape shape = e.at("shape").get<Shape>();
      const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
      const std::uint64_t length = e.at("length").get<std::uint64_t>();
      if (shape.empty() || length != shape_numel(shape) * 4) {
        throw CheckpointError(origin + ": tensor '" + name + "' length does not match its shape");
      }
      if (offset > payload_len || length > payload_len - offset) {
        throw CheckpointError(origin + ": truncated file, payload of tensor '" + name + "' is missing");
      }
      std::vector<float> data(shape_numel(shape));
      for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = std::bit_cast<float>(detail::get_u32(p + payload_at + offset + 4 * i));
      }
      c.tensors.emplace_back(name, Tensor(shape, std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(origin + ": malformed header: " + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(origin + ": " + e.what());
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("error writing checkpoint '" + path.string() + "'");
}

inline void save_checkpoint(const std::filesystem::path& path, const Autoencoder& model,
                            CheckpointMeta meta = {}) {
  save_checkpoint(path, make_checkpoint(model, std::move(meta)));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path.string());
}

/// Copy checkpoint tensors into a model of the same architecture. Every
/// model tensor must be present exactly once with the right shape; all
/// offending names are reported together. The model is untouched on error.
inline void apply_checkpoint(Autoencoder& model, const Checkpoint& c) {
  std::map<std::string, const Tensor*> by_name;
  std::vector<std::string> duplicated;
  for (const auto& [name, t] : c.tensors) {
    if (!by_name.emplace(name, &t).second) duplicated.push_back(name);
  }
  std::vector<std::string> missing, mismatched;
  auto targets = model.named_tensors();
  for (const auto& nt : targets) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) missing.push_back(nt.name);
    else if (it->second->shape() != nt.tensor->shape())
      mismatched.push_back(nt.name + " " + shape_str(it->second->shape()) + " vs " + shape_str(nt.tensor->shape()));
  }
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  if (!mismatched.empty()) throw CheckpointError("checkpoint shape mismatch for tensors: " + join(mismatched));
  if (!missing.empty()) throw CheckpointError("checkpoint is missing tensors: " + join(missing));
  if (!duplicated.empty()) throw CheckpointError("checkpoint repeats tensors: " + join(duplicated));
  if (by_name.size() != targets.size()) throw CheckpointError("checkpoint holds tensors the model does not have");
  for (auto& nt : targets) *nt.tensor = *by_name.at(nt.name);
}

inline Autoencoder model_from_checkpoint(const Checkpoint& c) {
  Autoencoder model(c.config);
  apply_checkpoint(model, c);
  return model;
}

inline Autoencoder load_checkpoint(const std::filesystem::path& path) {
  return model_from_checkpoint(read_checkpoint(path));
}

/// Initialize `model` with pretrained weights. The architectures must match.
inline void transfer_init(Autoencoder& model, const Checkpoint& pretrained) {
  if (!model.config().same_architecture(pretrained.config)) {
    auto ch = [](const std::vector<std::size_t>& v) {
      std::string s;
      for (auto c : v) s += (s.empty() ? "" : ",") + std::to_string(c);
      return "[" + s + "]";
    };
    throw CheckpointError("transfer_init: pretrained config (" + std::to_string(pretrained.config.input_height) +
                          "x" + std::to_string(pretrained.config.input_width) + ", channels " +
                          ch(pretrained.config.channels) + ") does not match model (" +
                          std::to_string(model.config().input_height) + "x" +
                          std::to_string(model.config().input_width) + ", channels " +
                          ch(model.config().channels) + ")");
  }
  apply_checkpoint(model, pretrained);
}

}  // namespace pcbae
