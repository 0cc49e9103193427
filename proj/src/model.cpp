#include "vgs/model.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace vgs {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'V', 'G', 'S', 'C', 'K', 'P', 'T', '1'};

json tower_config_json(const TowerConfig& cfg) {
  return json{{"input_dim", cfg.input_dim}, {"width", cfg.width},
              {"embed_dim", cfg.embed_dim}, {"heads", cfg.heads},
              {"mlp_dim", cfg.mlp_dim},     {"cls_self_attention", cfg.cls_self_attention}};
}

TowerConfig tower_config_from_json(const json& j) {
  TowerConfig cfg;
  cfg.input_dim = j.at("input_dim").get<std::size_t>();
  cfg.width = j.at("width").get<std::size_t>();
  cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.mlp_dim = j.at("mlp_dim").get<std::size_t>();
  cfg.cls_self_attention = j.at("cls_self_attention").get<bool>();
  cfg.validate();
  return cfg;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  auto params = const_cast<Model&>(model).named_parameters();
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (auto& [name, tensor] : params) {
    manifest.push_back({{"name", name}, {"shape", tensor->shape()}, {"offset", offset}});
    offset += tensor->numel() * sizeof(float);
  }
  json header{{"format_version", 1},
              {"audio_config", tower_config_json(model.audio.config)},
              {"image_config", tower_config_json(model.image.config)},
              {"scale", model.scale.s.item()},
              {"manifest", manifest}};
  const std::string header_str = header.dump();

  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t header_len = std::uint32_t(header_str.size());
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), std::streamsize(header_str.size()));
  for (auto& [name, tensor] : params)
    out.write(reinterpret_cast<const char*>(tensor->values().data()),
              std::streamsize(tensor->numel() * sizeof(float)));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a model checkpoint");
  std::uint32_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), header_len);
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: malformed header in " + path + ": " + e.what());
  }
  if (header.at("format_version").get<int>() != 1)
    throw std::runtime_error("checkpoint: unknown format version in " + path);

  ModelConfig cfg;
  cfg.audio = tower_config_from_json(header.at("audio_config"));
  cfg.image = tower_config_from_json(header.at("image_config"));
  Model model = init_model<float>(cfg, 0);
  model.scale.s.values()[0] = header.at("scale").get<float>();

  auto params = model.named_parameters();
  const auto& manifest = header.at("manifest");
  if (manifest.size() != params.size())
    throw std::runtime_error("checkpoint: manifest lists " + std::to_string(manifest.size()) +
                             " buffers, model has " + std::to_string(params.size()));
  const std::streamoff blob_start = in.tellg();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = manifest[i];
    auto& [name, tensor] = params[i];
    if (entry.at("name").get<std::string>() != name)
      throw std::runtime_error("checkpoint: expected buffer " + name + ", found " +
                               entry.at("name").get<std::string>());
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != tensor->shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    in.seekg(blob_start + std::streamoff(entry.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(tensor->values().data()),
            std::streamsize(tensor->numel() * sizeof(float)));
    if (!in) throw std::runtime_error("checkpoint: truncated blob reading " + name + " in " + path);
  }
  return model;
}

}  // namespace vgs
