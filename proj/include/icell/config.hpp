#pragma once

// Merged run configuration for the CLI: model architecture, training
// hyperparameters, corpus spec, and split settings, with a content hash that
// is stable under key reordering (nlohmann::json orders keys canonically).

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <json.hpp>

#include "icell/arch.hpp"
#include "icell/common.hpp"
#include "icell/datagen.hpp"
#include "icell/train.hpp"

namespace icell {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct RunConfig {
  ArchParams arch;
  TrainingConfig train;
  SyntheticCellSpec corpus;
  double train_fraction = 0.95;
  std::uint64_t split_seed = 5;

  void validate() const {
    train.validate();
    corpus.validate();
    check_value(train_fraction > 0.0 && train_fraction <= 1.0,
                "config: train_fraction must be in (0,1]");
    check_value(arch.side == corpus.side,
                "config: architecture side must match corpus side");
    check_value(arch.n_classes == corpus.n_classes,
                "config: architecture n_classes must match corpus n_classes");
  }

  nlohmann::json to_json() const {
    return {{"arch", arch.to_json()},
            {"train", train.to_json()},
            {"corpus", corpus.to_json()},
            {"train_fraction", train_fraction},
            {"split_seed", split_seed}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    if (j.contains("arch")) c.arch = ArchParams::from_json(j.at("arch"));
    if (j.contains("train"))
      c.train = TrainingConfig::from_json(j.at("train"));
    if (j.contains("corpus"))
      c.corpus = SyntheticCellSpec::from_json(j.at("corpus"));
    c.train_fraction = j.value("train_fraction", 0.95);
    c.split_seed = j.value("split_seed", std::uint64_t{5});
    return c;
  }

  // 16-hex-digit content hash over the canonical (sorted-key) serialization.
  std::string hash() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0')
       << fnv1a64(to_json().dump());
    return os.str();
  }
};

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open config: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("invalid config " + path + ": " + e.what());
  }
  RunConfig c = RunConfig::from_json(j);
  c.validate();
  return c;
}

inline void save_run_config(const RunConfig& c, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open for writing: " + path);
  os << c.to_json().dump(2) << "\n";
  if (!os) throw io_error("write failed: " + path);
}

}  // namespace icell
