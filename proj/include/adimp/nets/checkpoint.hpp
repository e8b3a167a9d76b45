// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "adimp/nets/arch.hpp"
#include "adimp/nets/bundle.hpp"

namespace adimp::nets {

// Checkpoint layout: magic line, little-endian u64 header length, JSON
// header, then raw tensor blobs in header order. The header embeds the full
// architecture spec, so a checkpoint loads without the original config.
inline constexpr char kCkptMagic[] = "ADIMPCKPT1\n";

namespace detail {

inline nlohmann::json arch_to_json(const ArchSpec& a) {
  return {{"family", a.family},
          {"in_channels", a.in_channels},
          {"image_side", a.image_side},
          {"d1", a.d1},
          {"d2", a.d2},
          {"num_classes", a.num_classes},
          {"classifier_on_pair", a.classifier_on_pair},
          {"strong_domain_disc", a.strong_domain_disc},
          {"deep_imputer", a.deep_imputer},
          {"dropout", a.dropout},
          {"mlp_hidden", a.mlp_hidden}};
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec a;
  a.family = j.at("family").get<std::string>();
  a.in_channels = j.at("in_channels").get<int64_t>();
  a.image_side = j.at("image_side").get<int64_t>();
  a.d1 = j.at("d1").get<int64_t>();
  a.d2 = j.at("d2").get<int64_t>();
  a.num_classes = j.at("num_classes").get<int>();
  a.classifier_on_pair = j.at("classifier_on_pair").get<bool>();
  a.strong_domain_disc = j.at("strong_domain_disc").get<bool>();
  a.deep_imputer = j.at("deep_imputer").get<bool>();
  a.dropout = j.at("dropout").get<double>();
  a.mlp_hidden = j.at("mlp_hidden").get<int64_t>();
  return a;
}

template <typename T>
const char* dtype_tag();
template <>
inline const char* dtype_tag<float>() {
  return "f32";
}
template <>
inline const char* dtype_tag<double>() {
  return "f64";
}

}  // namespace detail

template <typename T>
void save_bundle(const std::string& path, Bundle<T>& b,
                 const nlohmann::json& extra = nlohmann::json::object()) {
  auto tensors = b.named_tensors();

  nlohmann::json dir = nlohmann::json::array();
  uint64_t offset = 0;
  for (auto& [name, t] : tensors) {
    dir.push_back({{"name", name}, {"shape", t->shape}, {"offset", offset}});
    offset += static_cast<uint64_t>(t->numel()) * sizeof(T);
  }
  nlohmann::json header = {{"arch", detail::arch_to_json(b.arch)},
                           {"dtype", detail::dtype_tag<T>()},
                           {"init_seed", b.init_seed},
                           {"tensors", dir},
                           {"extra", extra}};
  std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_bundle: cannot open " + path);
  f.write(kCkptMagic, sizeof(kCkptMagic) - 1);
  uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t->ptr()),
            static_cast<std::streamsize>(t->numel() * static_cast<int64_t>(sizeof(T))));
  if (!f) throw std::runtime_error("save_bundle: write failed for " + path);
}

template <typename T>
Bundle<T> load_bundle(const std::string& path, nlohmann::json* extra_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_bundle: cannot open " + path);
  char magic[sizeof(kCkptMagic) - 1];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw std::runtime_error("load_bundle: " + path + " is not a checkpoint");
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("load_bundle: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(hs);
  if (header.at("dtype").get<std::string>() != detail::dtype_tag<T>())
    throw std::runtime_error("load_bundle: dtype mismatch in " + path);

  Bundle<T> b(detail::arch_from_json(header.at("arch")),
              header.at("init_seed").get<uint64_t>());
  auto tensors = b.named_tensors();
  const auto& dir = header.at("tensors");
  if (dir.size() != tensors.size())
    throw std::runtime_error("load_bundle: tensor count mismatch in " + path);
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = dir[i];
    auto& [name, t] = tensors[i];
    if (entry.at("name").get<std::string>() != name)
      throw std::runtime_error("load_bundle: tensor order mismatch at '" + name + "'");
    std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
    if (shape != t->shape)
      throw std::runtime_error("load_bundle: shape mismatch for '" + name + "'");
    f.read(reinterpret_cast<char*>(t->ptr()),
           static_cast<std::streamsize>(t->numel() * static_cast<int64_t>(sizeof(T))));
  }
  if (!f) throw std::runtime_error("load_bundle: truncated tensor data in " + path);
  if (extra_out) *extra_out = header.at("extra");
  return b;
}

}  // namespace adimp::nets
