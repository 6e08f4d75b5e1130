#pragma once

#include "velobss/core.hpp"
#include "velobss/septest.hpp"
#include "velobss/synthmix.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace velobss {

/// Run configuration shared by the CLI subcommands.
struct PipelineConfig {
  int bins_per_dim = 16;
  int min_samples_per_bin = 50;
  double step_factor = 0.5;
  int max_order = 4;
  double eps_sep = 0.05;
  int lattice_resolution = 64;
  std::uint64_t seed = 7;
  std::size_t samples = 200000;
  double sample_rate = 16000.0;
  std::string source_kind = "ar2";
  bool write_wav = false;
  std::filesystem::path out_dir = "out";
  std::vector<std::filesystem::path> wav_sources;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0)) throw DomainError(std::string("config: ") + name + " must be positive");
    };
    positive(bins_per_dim, "bins_per_dim");
    positive(min_samples_per_bin, "min_samples_per_bin");
    positive(step_factor, "step_factor");
    positive(max_order, "max_order");
    positive(eps_sep, "eps_sep");
    positive(lattice_resolution, "lattice_resolution");
    positive(static_cast<double>(seed), "seed");
    positive(static_cast<double>(samples), "samples");
    positive(sample_rate, "sample_rate");
    parse_source_kind(source_kind);
  }

  SeparationConfig separation() const {
    SeparationConfig c;
    c.bins_per_dim = bins_per_dim;
    c.frames.min_samples_per_bin = static_cast<std::size_t>(min_samples_per_bin);
    c.coordinates.step_factor = step_factor;
    c.lattice_resolution = lattice_resolution;
    c.max_order = max_order;
    c.eps_sep = eps_sep;
    return c;
  }

  SourceOptions sources() const {
    SourceOptions o;
    o.kind = parse_source_kind(source_kind);
    o.samples = samples;
    o.seed = seed;
    o.sample_rate = sample_rate;
    o.wav_paths = wav_sources;
    return o;
  }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["bins_per_dim"] = c.bins_per_dim;
  j["min_samples_per_bin"] = c.min_samples_per_bin;
  j["step_factor"] = c.step_factor;
  j["max_order"] = c.max_order;
  j["eps_sep"] = c.eps_sep;
  j["lattice_resolution"] = c.lattice_resolution;
  j["seed"] = c.seed;
  j["samples"] = c.samples;
  j["sample_rate"] = c.sample_rate;
  j["source_kind"] = c.source_kind;
  j["write_wav"] = c.write_wav;
  j["out_dir"] = c.out_dir.generic_string();
  auto& w = j["wav_sources"] = nlohmann::json::array();
  for (const auto& p : c.wav_sources) w.push_back(p.generic_string());
  return j;
}

/// Overlays keys of `j` onto `base`. Unknown keys and wrong types are errors.
inline PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {}) {
  if (!j.is_object()) throw FormatError("config: expected a JSON object");
  static const std::set<std::string> known{"bins_per_dim", "min_samples_per_bin", "step_factor", "max_order",
                                           "eps_sep",      "lattice_resolution",  "seed",        "samples",
                                           "sample_rate",  "source_kind",         "write_wav",   "out_dir",
                                           "wav_sources"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw FormatError("config: unknown key '" + key + "'");
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("bins_per_dim", base.bins_per_dim);
    get("min_samples_per_bin", base.min_samples_per_bin);
    get("step_factor", base.step_factor);
    get("max_order", base.max_order);
    get("eps_sep", base.eps_sep);
    get("lattice_resolution", base.lattice_resolution);
    if (j.contains("seed")) {
      if (!j.at("seed").is_number_unsigned()) throw FormatError("config: seed must be a positive integer");
      base.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("samples")) {
      if (!j.at("samples").is_number_unsigned()) throw FormatError("config: samples must be a positive integer");
      base.samples = j.at("samples").get<std::size_t>();
    }
    get("sample_rate", base.sample_rate);
    get("source_kind", base.source_kind);
    get("write_wav", base.write_wav);
    if (j.contains("out_dir")) base.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("wav_sources")) {
      base.wav_sources.clear();
      for (const auto& p : j.at("wav_sources")) base.wav_sources.emplace_back(p.get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  base.validate();
  return base;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace velobss
