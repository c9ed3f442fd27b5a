#pragma once

// Per-step loss series keyed by name, with CSV export and a JSON form for
// embedding into checkpoints.

#include <cstdint>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icell/common.hpp"

namespace icell {

struct TrainingCurves {
  struct Record {
    std::int64_t step = 0;
    std::string name;
    double value = 0;
  };

  std::vector<Record> records;

  void add(std::int64_t step, const std::string& name, double value) {
    records.push_back({step, name, value});
  }

  std::vector<double> series(const std::string& name) const {
    std::vector<double> out;
    for (const auto& r : records)
      if (r.name == name) out.push_back(r.value);
    return out;
  }

  double first(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return r.value;
    throw value_error("no curve series named " + name);
  }

  double last(const std::string& name) const {
    for (auto it = records.rbegin(); it != records.rend(); ++it)
      if (it->name == name) return it->value;
    throw value_error("no curve series named " + name);
  }

  void to_csv(std::ostream& os) const {
    os << "step,loss_name,value\n";
    for (const auto& r : records) {
      nlohmann::json v = r.value;  // shortest round-trip float formatting
      os << r.step << "," << r.name << "," << v.dump() << "\n";
    }
  }

  void save_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open for writing: " + path);
    to_csv(os);
    if (!os) throw io_error("write failed: " + path);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : records)
      j.push_back({{"step", r.step}, {"name", r.name}, {"value", r.value}});
    return j;
  }

  static TrainingCurves from_json(const nlohmann::json& j) {
    TrainingCurves c;
    for (const auto& r : j)
      c.records.push_back({r.at("step").get<std::int64_t>(),
                           r.at("name").get<std::string>(),
                           r.at("value").get<double>()});
    return c;
  }
};

}  // namespace icell
