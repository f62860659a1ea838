#include "miracle/metrics.hpp"

#include <cmath>
#include <sstream>

#include "miracle/data/csv_io.hpp"

namespace miracle::metrics {

std::string format_cap(double cap) { return data::format_double(cap); }

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json caps = nlohmann::json::object();
  for (const auto& [cap, tpr] : report.tpr_at_fpr) caps[format_cap(cap)] = tpr;
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& p : report.roc.points) {
    nlohmann::json threshold = std::isfinite(p.threshold) ? nlohmann::json(p.threshold) : nlohmann::json(nullptr);
    roc.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"threshold", threshold}});
  }
  return {{"auc", report.auc},
          {"tpr_at_fpr", caps},
          {"roc", roc},
          {"counts", {{"n_pos", report.n_pos}, {"n_neg", report.n_neg}}}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.auc = j.at("auc").get<double>();
    for (const auto& [key, value] : j.at("tpr_at_fpr").items())
      r.tpr_at_fpr[data::parse_double(key, "tpr_at_fpr key")] = value.get<double>();
    for (const auto& p : j.at("roc")) {
      const auto& t = p.at("threshold");
      r.roc.points.push_back({p.at("fpr").get<double>(), p.at("tpr").get<double>(),
                              t.is_null() ? std::numeric_limits<double>::infinity() : t.get<double>()});
    }
    r.n_pos = j.at("counts").at("n_pos").get<long>();
    r.n_neg = j.at("counts").at("n_neg").get<long>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed evaluation report: ") + e.what());
  }
}

std::string roc_to_csv(const RocCurve& roc) {
  std::ostringstream out;
  out << "threshold,fpr,tpr\n";
  for (const auto& p : roc.points)
    out << (std::isfinite(p.threshold) ? data::format_double(p.threshold) : std::string("inf")) << ','
        << data::format_double(p.fpr) << ',' << data::format_double(p.tpr) << '\n';
  return out.str();
}

}  // namespace miracle::metrics
