// SPDX-License-Identifier: Apache-2.0
#include "gap/checkpoint.hpp"

#include "gap/errors.hpp"
#include "gap/io.hpp"
#include "json.hpp"

namespace gap {

using nlohmann::json;

void save_checkpoint(const EncoderModel<float>& model, const std::filesystem::path& dir) {
  io::ensure_directory(dir);
  const auto& cfg = model.config();
  json j;
  j["format"] = "gap-checkpoint";
  j["version"] = 1;
  j["architecture"] = {{"in_channels", cfg.in_channels}, {"channels", cfg.channels},     {"strides", cfg.strides},
                       {"num_classes", cfg.num_classes}, {"text_dim", cfg.text_dim},     {"part_cls_heads", cfg.part_cls_heads}};
  const auto& g = model.graph();
  json edges = json::array();
  for (auto [a, b] : g.edges()) edges.push_back({a, b});
  j["skeleton"] = {{"name", g.name()}, {"num_joints", g.num_joints()}, {"edges", edges}, {"parent", g.parent()}};
  const auto& p = model.partition();
  j["partition"] = {{"name", p.name}, {"parts", p.part_names}, {"groups", p.groups}, {"include_global", p.include_global}};

  std::vector<float> weights;
  json manifest = json::array();
  model.for_each_parameter([&](const std::string& name, const Tensor<float>& v, const Tensor<float>&, bool trainable) {
    manifest.push_back({{"name", name}, {"shape", v.shape()}, {"offset", weights.size()}, {"trainable", trainable}});
    weights.insert(weights.end(), v.values().begin(), v.values().end());
  });
  j["manifest"] = manifest;
  j["num_values"] = weights.size();
  j["weights_file"] = "weights.f32";
  io::write_text(dir / "model.json", j.dump(2) + "\n");
  io::write_f32(dir / "weights.f32", weights);
}

EncoderModel<float> load_checkpoint(const std::filesystem::path& dir) {
  const auto meta_path = dir / "model.json";
  json j;
  try {
    j = json::parse(io::read_text(meta_path));
  } catch (const json::exception& e) {
    throw FormatError("malformed " + meta_path.string() + ": " + e.what());
  }
  try {
    if (j.at("format") != "gap-checkpoint") throw FormatError(meta_path.string() + " is not a gap checkpoint");
    const auto& a = j.at("architecture");
    EncoderConfig cfg;
    cfg.in_channels = a.at("in_channels");
    cfg.channels = a.at("channels").get<std::vector<std::size_t>>();
    cfg.strides = a.at("strides").get<std::vector<std::size_t>>();
    cfg.num_classes = a.at("num_classes");
    cfg.text_dim = a.at("text_dim");
    cfg.part_cls_heads = a.at("part_cls_heads");

    const auto& s = j.at("skeleton");
    std::vector<Edge> edges;
    for (const auto& e : s.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    SkeletonGraph graph(s.at("name"), s.at("num_joints"), edges, s.at("parent").get<std::vector<int>>());

    const auto& pj = j.at("partition");
    PartPartition partition{pj.at("name"), pj.at("parts").get<std::vector<std::string>>(),
                            pj.at("groups").get<std::vector<std::vector<int>>>(), pj.at("include_global")};

    EncoderModel<float> model(cfg, graph, partition);
    const std::vector<float> weights = io::read_f32(dir / j.value("weights_file", std::string("weights.f32")));
    const std::size_t expected = j.at("num_values");
    if (weights.size() != expected) {
      throw FormatError("weights.f32 holds " + std::to_string(weights.size()) + " values, model.json declares " +
                        std::to_string(expected));
    }
    const auto& manifest = j.at("manifest");
    std::size_t index = 0;
    std::size_t offset = 0;
    model.for_each_parameter([&](const std::string& name, Tensor<float>& v, Tensor<float>&, bool) {
      if (index >= manifest.size()) throw FormatError("manifest is missing entry for " + name);
      const auto& entry = manifest[index++];
      if (entry.at("name") != name || entry.at("shape").get<Shape>() != v.shape() ||
          entry.at("offset").get<std::size_t>() != offset) {
        throw FormatError("manifest entry " + entry.dump() + " does not match architecture parameter " + name + " " +
                          shape_to_string(v.shape()) + " at offset " + std::to_string(offset));
      }
      if (offset + v.size() > weights.size()) throw FormatError("weights.f32 too short for parameter " + name);
      std::copy_n(weights.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.data());
      offset += v.size();
    });
    if (index != manifest.size() || offset != weights.size()) {
      throw FormatError("manifest lists parameters beyond the architecture");
    }
    return model;
  } catch (const json::exception& e) {
    throw FormatError("malformed " + meta_path.string() + ": " + e.what());
  }
}

}  // namespace gap
