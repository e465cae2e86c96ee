#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtabnet/config.hpp"
#include "mtabnet/digest.hpp"
#include "mtabnet/trainer.hpp"

namespace mtabnet {

// Layout, all integers little-endian:
//   "MTBN" | u32 version | u64 header length | header JSON |
//   u32 tensor count | per tensor: u32 name length, name, u32 rank, u64 dims..., f64 values... |
//   "END." | 32-byte SHA-256 of everything before it

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'M', 'T', 'B', 'N'};
inline constexpr char kCheckpointEnd[4] = {'E', 'N', 'D', '.'};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) { bytes_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw CorruptionError("checkpoint: truncated at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(8));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(take(n), n);
  }
  std::size_t position() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::string raw_digest(const std::string& bytes) {
  const std::string hex = sha256_hex(bytes);
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2) out.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16)));
  return out;
}

}  // namespace detail

/// What a checkpoint restores: the pipeline plus free-form metadata.
struct Checkpoint {
  TrainedPipeline pipeline;
  nlohmann::json metadata = nlohmann::json::object();
};

inline std::string serialize_checkpoint(const TrainedPipeline& p, const nlohmann::json& metadata = nlohmann::json::object()) {
  if (!p.model) throw ContractError("checkpoint: pipeline has no model");
  Model& model = *p.model;
  nlohmann::json header{
      {"experiment", to_json(p.config)},
      {"model", to_json(model.config())},
      {"preprocess", p.preprocess.to_json()},
      {"target_scale", {model.target_scale().min, model.target_scale().max}},
      {"schema_fingerprint", p.preprocess.schema.fingerprint()},
      {"epochs_run", p.history.epochs_run},
      {"smogn_rows", p.smogn_rows},
      {"metadata", metadata},
  };
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string h = header.dump();
  w.u64(h.size());
  w.raw(h.data(), h.size());

  std::vector<std::pair<std::string, const Tensor*>> tensors;
  model.visit([&](const std::string& name, Parameter& q) { tensors.emplace_back(name, &q.value); },
              [&](const std::string& name, Tensor& t) { tensors.emplace_back(name, &t); });
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t->rank()));
    for (std::size_t dim : t->shape()) w.u64(dim);
    for (double v : t->values()) w.f64(v);
  }
  w.raw(kCheckpointEnd, 4);
  const std::string digest = detail::raw_digest(w.bytes());
  w.raw(digest.data(), digest.size());
  return std::move(w.bytes());
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  constexpr std::size_t kDigest = 32;
  if (bytes.size() < 8) throw CorruptionError("checkpoint: file too short");
  if (bytes.compare(0, 4, kCheckpointMagic, 4) != 0) throw CorruptionError("checkpoint: bad magic bytes");
  {
    detail::ByteReader head(bytes, 8);
    head.take(4);
    const std::uint32_t version = head.u32();
    if (version != kCheckpointVersion) {
      throw VersionError("checkpoint: format version " + std::to_string(version) + ", this build reads " +
                         std::to_string(kCheckpointVersion));
    }
  }
  if (bytes.size() < 8 + 4 + kDigest) throw CorruptionError("checkpoint: truncated");
  const std::size_t body = bytes.size() - kDigest;
  if (detail::raw_digest(bytes.substr(0, body)) != bytes.substr(body)) {
    throw CorruptionError("checkpoint: digest mismatch (truncated or modified file)");
  }

  detail::ByteReader r(bytes, body);
  r.take(8);
  nlohmann::json header;
  try {
    const std::uint64_t n = r.u64();
    header = nlohmann::json::parse(std::string(r.take(n), n));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint: bad header: ") + e.what());
  }

  Checkpoint out;
  TrainedPipeline& p = out.pipeline;
  try {
    p.config = experiment_from_json(header.at("experiment"));
    p.preprocess = FittedPreprocess::from_json(header.at("preprocess"));
    p.history.epochs_run = header.at("epochs_run").get<std::size_t>();
    p.smogn_rows = header.at("smogn_rows").get<std::size_t>();
    out.metadata = header.at("metadata");
    p.model = std::make_shared<Model>(model_from_json(header.at("model")), 0);
    const auto ts = header.at("target_scale").get<std::vector<double>>();
    p.model->set_target_scale(TargetScale{ts.at(0), ts.at(1)});
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.at("schema_fingerprint").get<std::string>() != p.preprocess.schema.fingerprint()) {
    throw CorruptionError("checkpoint: schema fingerprint does not match the stored schema");
  }

  std::map<std::string, Tensor> stored;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape;
    std::size_t size = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(static_cast<std::size_t>(r.u64()));
      size *= shape.back();
    }
    Tensor t(shape);
    if (t.size() != size) throw CorruptionError("checkpoint: tensor '" + name + "' has an inconsistent shape");
    for (std::size_t k = 0; k < size; ++k) t[k] = r.f64();
    if (!stored.emplace(name, std::move(t)).second) throw CorruptionError("checkpoint: duplicate tensor '" + name + "'");
  }
  if (std::string(r.take(4), 4) != std::string(kCheckpointEnd, 4)) throw CorruptionError("checkpoint: missing end marker");
  if (r.position() != body) throw CorruptionError("checkpoint: trailing bytes");

  std::size_t used = 0;
  auto assign = [&](const std::string& name, Tensor& dst) {
    const auto it = stored.find(name);
    if (it == stored.end()) throw CorruptionError("checkpoint: missing tensor '" + name + "'");
    if (!it->second.same_shape(dst)) throw CorruptionError("checkpoint: tensor '" + name + "' has the wrong shape");
    dst = it->second;
    ++used;
  };
  p.model->visit([&](const std::string& name, Parameter& q) { assign(name, q.value); },
                 [&](const std::string& name, Tensor& t) { assign(name, t); });
  if (used != stored.size()) throw CorruptionError("checkpoint: unexpected extra tensors");
  return out;
}

inline void save_checkpoint(const std::string& path, const TrainedPipeline& p,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  write_text(path, serialize_checkpoint(p, metadata));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace mtabnet
