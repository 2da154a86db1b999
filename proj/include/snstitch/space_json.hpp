#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "snstitch/snv2_io.hpp"
#include "snstitch/stitching.hpp"

namespace snstitch {

// JSON document describing an enumerated space: the config list plus the
// shared-layer table, with tensor names referencing the SNV2 container that
// cmd_train writes alongside.
inline nlohmann::json space_to_json(const StitchSpace& space) {
  nlohmann::json j;
  auto spec_json = [](const AnchorSpec& s) {
    return nlohmann::json{{"depth", s.depth},         {"width", s.width},
                          {"heads", s.heads},         {"mlp_ratio", s.mlp_ratio},
                          {"patch_dim", s.patch_dim}, {"num_classes", s.num_classes},
                          {"seq_len", s.seq_len}};
  };
  j["small"] = spec_json(space.small);
  j["large"] = spec_json(space.large);
  j["mode"] = space.mode == SpaceMode::TwoWay ? "tws" : "v1-fs";
  j["lora_rank"] = space.lora_rank;
  j["anchor_small_id"] = space.anchor_small_id;
  j["anchor_large_id"] = space.anchor_large_id;

  nlohmann::json configs = nlohmann::json::array();
  for (std::size_t id = 0; id < space.size(); ++id) {
    const StitchConfig& cfg = space.configs[id];
    nlohmann::json segs = nlohmann::json::array();
    for (const Segment& s : cfg.segments)
      segs.push_back({{"anchor", s.anchor == AnchorId::Small ? "small" : "large"},
                      {"from", s.from},
                      {"to", s.to}});
    nlohmann::json crossings = nlohmann::json::array();
    for (const CrossingId& c : cfg.crossings) crossings.push_back(c.str());
    configs.push_back({{"id", id},
                       {"kind", kind_name(cfg.kind)},
                       {"segments", segs},
                       {"crossings", crossings},
                       {"head_anchor",
                        cfg.head_anchor == AnchorId::Small ? "small" : "large"}});
  }
  j["configs"] = std::move(configs);

  nlohmann::json layers = nlohmann::json::array();
  for (const auto& [cid, layer] : space.layers) {
    layers.push_back({{"crossing", cid.str()},
                      {"d_in", layer.d_in()},
                      {"d_out", layer.d_out()},
                      {"rank", layer.rank},
                      {"tensors",
                       {{"m", "layer/" + cid.str() + "/m"},
                        {"b", "layer/" + cid.str() + "/b"},
                        {"a", "layer/" + cid.str() + "/a"}}}});
  }
  j["layers"] = std::move(layers);
  return j;
}

inline void write_space_json(const StitchSpace& space, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("space json: cannot open for writing: " + path);
  f << space_to_json(space).dump(2) << '\n';
  if (!f) throw FormatError("space json: write failed: " + path);
}

// Full trainer checkpoint: both anchors plus the layer table in one SNV2
// container, names prefixed small/, large/ and layer/<crossing>/.
inline void save_space_checkpoint(const StitchSpace& space, const AnchorModel& small,
                                  const AnchorModel& large, const std::string& path) {
  std::vector<NamedTensor> tensors;
  for_each_param(small, [&](const std::string& n, const Matrix& m) {
    tensors.push_back(to_tensor("small/" + n, m));
  });
  for_each_param(large, [&](const std::string& n, const Matrix& m) {
    tensors.push_back(to_tensor("large/" + n, m));
  });
  for (const auto& [cid, layer] : space.layers) {
    const std::string prefix = "layer/" + cid.str() + "/";
    tensors.push_back(to_tensor(prefix + "m", layer.m));
    tensors.push_back(to_tensor(prefix + "b", layer.b));
    tensors.push_back(to_tensor(prefix + "a", layer.a));
  }
  write_snv2_file(path, tensors);
}

inline void load_space_checkpoint(StitchSpace& space, AnchorModel& small,
                                  AnchorModel& large, const std::string& path) {
  std::vector<NamedTensor> tensors = read_snv2_file(path);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;

  auto take = [&](const std::string& name, Matrix& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("snv2: missing tensor " + name);
    Matrix loaded = to_matrix(*it->second);
    if (!loaded.same_shape(dst))
      throw FormatError("snv2: shape mismatch for " + name + ": got " +
                        shape_str(loaded) + ", want " + shape_str(dst));
    dst = std::move(loaded);
  };

  for_each_param(small, [&](const std::string& n, Matrix& m) { take("small/" + n, m); });
  for_each_param(large, [&](const std::string& n, Matrix& m) { take("large/" + n, m); });
  for (auto& [cid, layer] : space.layers) {
    const std::string prefix = "layer/" + cid.str() + "/";
    take(prefix + "m", layer.m);
    take(prefix + "b", layer.b);
    take(prefix + "a", layer.a);
  }
}

}  // namespace snstitch
