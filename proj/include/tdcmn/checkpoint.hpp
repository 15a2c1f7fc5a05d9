#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "tdcmn/data.hpp"
#include "tdcmn/error.hpp"
#include "tdcmn/models.hpp"

namespace tdcmn {

inline constexpr const char* kCheckpointFormat = "tdcmn-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json types = nlohmann::json::array();
  for (const auto& t : c.concept_types) types.push_back({{"name", t.name}, {"channels", t.channels}});
  nlohmann::json j = {{"concept_types", types},
                      {"clips", c.clips},
                      {"variant", to_string(c.variant)},
                      {"kernel_widths", c.kernel_widths},
                      {"num_classes", c.num_classes},
                      {"hidden_n", c.hidden_n},
                      {"hidden_l", c.hidden_l},
                      {"co_multi_type", c.co_multi_type}};
  if (c.classifier_hidden) j["classifier_hidden"] = *c.classifier_hidden;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& t : j.at("concept_types")) {
    c.concept_types.push_back({t.at("name").get<std::string>(), t.at("channels").get<std::size_t>()});
  }
  c.clips = j.at("clips").get<std::size_t>();
  c.variant = variant_from_string(j.at("variant").get<std::string>());
  c.kernel_widths = j.at("kernel_widths").get<std::vector<std::size_t>>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.hidden_n = j.value("hidden_n", std::size_t{0});
  c.hidden_l = j.value("hidden_l", std::size_t{0});
  c.co_multi_type = j.value("co_multi_type", false);
  if (j.contains("classifier_hidden")) {
    c.classifier_hidden = j.at("classifier_hidden").get<std::vector<std::size_t>>();
  }
  return c;
}

/// Serializes config and every parameter. nlohmann::json writes doubles in
/// shortest round-trip form, so save/load is bit-exact.
inline std::string encode_checkpoint(const Model& model,
                                     const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& e : model.parameters()) {
    params.push_back({{"name", e.name}, {"shape", e.value.shape}, {"values", e.value.data}});
  }
  nlohmann::json j = {{"format", kCheckpointFormat},
                      {"version", kCheckpointVersion},
                      {"config", to_json(model.config())},
                      {"parameters", params},
                      {"extra", extra}};
  return j.dump() + "\n";
}

struct LoadedCheckpoint {
  Model model;
  nlohmann::json extra;
};

inline LoadedCheckpoint decode_checkpoint(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(origin + ": not a readable checkpoint (offset " +
                          std::to_string(e.byte) + ")");
  }
  try {
    if (j.value("format", std::string{}) != kCheckpointFormat) {
      throw CheckpointError(origin + ": missing checkpoint format tag");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw CheckpointError(origin + ": unsupported checkpoint version " +
                            std::to_string(j.at("version").get<int>()));
    }
    ModelConfig cfg = model_config_from_json(j.at("config"));
    Model model = Model::create(cfg, 0);
    ParameterStore values;
    for (const auto& p : j.at("parameters")) {
      values.add(p.at("name").get<std::string>(),
                 Tensor(p.at("shape").get<Shape>(), p.at("values").get<std::vector<double>>()));
    }
    model.load_parameters(values);
    return {std::move(model), j.value("extra", nlohmann::json::object())};
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(origin + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(origin + ": " + e.what());
  }
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  detail::write_file(path, encode_checkpoint(model, extra));
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  return decode_checkpoint(text, path.string());
}

}  // namespace tdcmn
