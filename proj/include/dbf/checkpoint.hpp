#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dbf/config.hpp"
#include "dbf/network.hpp"
#include "dbf/optim.hpp"

namespace dbf {

// File layout:
//   DBFNET-CHECKPOINT\n
//   <header byte length>\n
//   <JSON header>\n
//   <payload: little-endian float32 arrays, offsets from payload start>
inline constexpr const char* kCheckpointMagic = "DBFNET-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;               // completed epochs
  std::int64_t step = 0;       // completed optimizer steps
  std::uint64_t seed = 0;
  double best_val_dsc = -1.0;  // < 0 when never validated
  json train_config;           // optional, null when absent
};

struct CheckpointTensor {
  std::string role;  // parameter, buffer, adam_m, adam_v
  Shape shape;
  std::vector<float> data;
};

struct CheckpointData {
  json header;
  ModelConfig model;
  CheckpointMeta meta;
  std::int64_t optimizer_steps = 0;
  std::map<std::string, CheckpointTensor> tensors;  // keyed by "role:name"
};

namespace detail {

inline json shape_json(const Shape& s) { return json{s.n, s.c, s.h, s.w}; }

inline void write_floats(std::ofstream& out, const Tensor<float>& t) {
  static_assert(sizeof(float) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 4));
  } else {
    for (float v : t.values()) {
      auto u = std::bit_cast<std::uint32_t>(v);
      u = ((u & 0xffu) << 24) | ((u & 0xff00u) << 8) | ((u >> 8) & 0xff00u) | (u >> 24);
      out.write(reinterpret_cast<const char*>(&u), 4);
    }
  }
}

inline float read_float_le(const char* p) {
  std::uint32_t u = 0;
  for (int b = 3; b >= 0; --b) u = (u << 8) | static_cast<unsigned char>(p[b]);
  return std::bit_cast<float>(u);
}

// First differing top-level field of two model configs, or empty.
inline std::string model_mismatch(const ModelConfig& a, const ModelConfig& b) {
  const json ja = to_json(a), jb = to_json(b);
  for (const auto& [k, v] : ja.items()) {
    if (!jb.contains(k) || jb[k] != v) {
      if (v.is_object())
        for (const auto& [k2, v2] : v.items())
          if (!jb[k].contains(k2) || jb[k][k2] != v2) return "model." + k + "." + k2;
      return "model." + k;
    }
  }
  return {};
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, DbfNet<float>& net, const Adam<float>* opt,
                            const CheckpointMeta& meta) {
  struct Item {
    std::string role, name;
    const Tensor<float>* t;
  };
  std::vector<Item> items;
  for (auto* p : net.parameters()) items.push_back({"parameter", p->name, &p->value});
  for (auto* b : net.buffers()) items.push_back({"buffer", b->name, &b->value});
  if (opt) {
    const auto& ps = opt->parameters();
    const auto& m = opt->first_moments();
    const auto& v = opt->second_moments();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      items.push_back({"adam_m", ps[i]->name, &m[i]});
      items.push_back({"adam_v", ps[i]->name, &v[i]});
    }
  }
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& it : items) {
    tensors.push_back({{"role", it.role},
                       {"name", it.name},
                       {"shape", detail::shape_json(it.t->shape())},
                       {"offset", offset},
                       {"count", it.t->size()}});
    offset += it.t->size() * 4;
  }
  json header{{"format", "dbfnet-checkpoint"},
              {"version", kCheckpointVersion},
              {"dtype", "float32"},
              {"byte_order", "little"},
              {"model", to_json(net.config())},
              {"epoch", meta.epoch},
              {"step", meta.step},
              {"seed", meta.seed},
              {"best_val_dsc", meta.best_val_dsc},
              {"lambda", net.lambda_values()},
              {"optimizer", opt ? json{{"type", "adam"}, {"steps", opt->steps()}} : json(nullptr)},
              {"train_config", meta.train_config},
              {"payload_bytes", offset},
              {"tensors", tensors}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError(tmp.string(), "cannot write checkpoint");
    out << kCheckpointMagic << "\n" << text.size() << "\n" << text << "\n";
    for (const auto& it : items) detail::write_floats(out, *it.t);
    if (!out) throw IoError(tmp.string(), "write failed");
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open checkpoint");
  std::string magic, length;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) throw CheckpointError("magic", "not a checkpoint file: " + path.string());
  std::getline(in, length);
  std::size_t n = 0;
  try {
    n = std::stoull(length);
  } catch (const std::exception&) {
    throw CheckpointError("header_length", "malformed header length");
  }
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  if (in.get() != '\n') throw CheckpointError("header", "truncated header");

  CheckpointData d;
  try {
    d.header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointError("header", e.what());
  }
  const json& h = d.header;
  if (h.value("version", 0) != kCheckpointVersion)
    throw CheckpointError("version", "unsupported version " + h.value("version", json()).dump());
  if (h.value("dtype", "") != "float32") throw CheckpointError("dtype", "expected float32");
  try {
    apply_json(h.at("model"), d.model);
  } catch (const Error& e) {
    throw CheckpointError("model", e.what());
  }
  d.meta.epoch = h.value("epoch", 0);
  d.meta.step = h.value("step", std::int64_t{0});
  d.meta.seed = h.value("seed", std::uint64_t{0});
  d.meta.best_val_dsc = h.value("best_val_dsc", -1.0);
  d.meta.train_config = h.value("train_config", json());
  if (h.contains("optimizer") && h["optimizer"].is_object()) d.optimizer_steps = h["optimizer"].value("steps", 0LL);

  const std::uint64_t payload = h.value("payload_bytes", std::uint64_t{0});
  std::vector<char> bytes(payload);
  in.read(bytes.data(), static_cast<std::streamsize>(payload));
  if (static_cast<std::uint64_t>(in.gcount()) != payload) throw CheckpointError("payload", "truncated payload");
  for (const auto& t : h.at("tensors")) {
    CheckpointTensor ct;
    ct.role = t.at("role").get<std::string>();
    const auto s = t.at("shape").get<std::array<int, 4>>();
    ct.shape = Shape{s[0], s[1], s[2], s[3]};
    const auto off = t.at("offset").get<std::uint64_t>();
    const auto count = t.at("count").get<std::uint64_t>();
    if (count != ct.shape.size() || off + count * 4 > payload)
      throw CheckpointError(t.at("name").get<std::string>(), "inconsistent tensor table entry");
    ct.data.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) ct.data[i] = detail::read_float_le(bytes.data() + off + i * 4);
    d.tensors.emplace(ct.role + ":" + t.at("name").get<std::string>(), std::move(ct));
  }
  return d;
}

// Throws CheckpointError naming the first model field that differs.
inline void require_compatible(const CheckpointData& d, const ModelConfig& expected) {
  const std::string field = detail::model_mismatch(expected, d.model);
  if (field.empty()) return;
  std::string pointer = field.substr(std::string("model").size());
  for (auto& ch : pointer)
    if (ch == '.') ch = '/';
  const json::json_pointer ptr(pointer);
  const json have = to_json(d.model), want = to_json(expected);
  throw CheckpointError(field, "checkpoint has " + (have.contains(ptr) ? have.at(ptr).dump() : "nothing") +
                                   ", configuration expects " + (want.contains(ptr) ? want.at(ptr).dump() : "nothing"));
}

// Copies weights, BN statistics and (when opt is given) Adam moments.
inline void load_into(const CheckpointData& d, DbfNet<float>& net, Adam<float>* opt = nullptr) {
  require_compatible(d, net.config());
  auto fetch = [&](const std::string& role, const std::string& name, Tensor<float>& dst) {
    const auto it = d.tensors.find(role + ":" + name);
    if (it == d.tensors.end()) throw CheckpointError(name, "missing " + role + " tensor");
    if (it->second.shape != dst.shape())
      throw CheckpointError(name, "shape " + it->second.shape.str() + " does not match " + dst.shape().str());
    std::copy(it->second.data.begin(), it->second.data.end(), dst.data());
  };
  for (auto* p : net.parameters()) fetch("parameter", p->name, p->value);
  for (auto* b : net.buffers()) fetch("buffer", b->name, b->value);
  if (opt) {
    const auto& ps = opt->parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      fetch("adam_m", ps[i]->name, opt->first_moments()[i]);
      fetch("adam_v", ps[i]->name, opt->second_moments()[i]);
    }
    opt->set_steps(d.optimizer_steps);
  }
}

// Network rebuilt from the checkpoint's own model config.
inline DbfNet<float> model_from_checkpoint(const CheckpointData& d) {
  DbfNet<float> net(d.model, 0);
  load_into(d, net);
  return net;
}

}  // namespace dbf
