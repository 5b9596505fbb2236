#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kpg/eval.hpp"

namespace kpg::testing {

// Hand-computed metric cases. A document either lists already stemmed and
// split phrases (pred_present, gold_absent, ...) or raw phrases with the
// document text they are split against.
struct MetricCase {
  std::string name;
  std::vector<DocumentKeyphrases> predictions;
  std::vector<DocumentKeyphrases> gold;
  nlohmann::json expect;
};

inline double parse_fraction(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) return std::stod(s);
  return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
}

inline std::vector<MetricCase> load_metric_cases(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const auto j = nlohmann::json::parse(in);
  auto list = [](const nlohmann::json& d, const char* key) {
    return d.contains(key) ? d.at(key).get<std::vector<std::string>>() : std::vector<std::string>{};
  };
  std::vector<MetricCase> cases;
  for (const auto& c : j.at("cases")) {
    MetricCase mc;
    mc.name = c.at("name").get<std::string>();
    mc.expect = c.at("expect");
    for (const auto& d : c.at("documents")) {
      const auto id = d.at("id").get<std::string>();
      if (d.contains("text")) {
        const auto doc = stem_words(d.at("text").get<std::string>());
        mc.predictions.push_back(prepare_keyphrases(id, list(d, "pred"), doc));
        mc.gold.push_back(prepare_keyphrases(id, list(d, "gold"), doc));
      } else {
        mc.predictions.push_back({id, list(d, "pred_present"), list(d, "pred_absent")});
        mc.gold.push_back({id, list(d, "gold_present"), list(d, "gold_absent")});
      }
    }
    cases.push_back(std::move(mc));
  }
  return cases;
}

// Empty when the report matches every expected value to 1e-12.
inline std::string check_metric_case(const MetricCase& mc) {
  const auto report = compute_f1_report(mc.predictions, mc.gold);
  std::string failures;
  for (const char* category : {"present", "absent"}) {
    if (!mc.expect.contains(category)) continue;
    const auto& e = mc.expect.at(category);
    const CategoryScores& s = std::string(category) == "present" ? report.present : report.absent;
    auto compare = [&](const char* key, double got) {
      const double want = parse_fraction(e.at(key).get<std::string>());
      if (std::abs(got - want) > 1e-12)
        failures += std::string(category) + "." + key + " = " + std::to_string(got) + ", expected " +
                    std::to_string(want) + "; ";
    };
    compare("f1@M", s.f1_at_m);
    compare("f1@5", s.f1_at_5);
    if (s.documents != e.at("documents").get<std::size_t>()) failures += std::string(category) + ".documents; ";
    if (s.skipped != e.at("skipped").get<std::size_t>()) failures += std::string(category) + ".skipped; ";
  }
  return failures;
}

}  // namespace kpg::testing
