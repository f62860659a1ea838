#include "miracle/model/ablation.hpp"

#include <algorithm>
#include <cmath>

#include "miracle/data/csv_io.hpp"

namespace miracle::model {

std::vector<AblationRow> ablate(const data::DatasetSplit& split, const RemarkMap& remarks, const MiracleConfig& config,
                                std::span<const Ablation> modes, const TrainOptions& options) {
  if (modes.empty()) throw ConfigError("ablate: no modes requested");
  std::vector<AblationRow> rows;
  for (Ablation mode : modes) {
    MiracleConfig c = config;
    c.ablation = mode;
    auto model = train(split, remarks, c, options);
    rows.push_back({mode, evaluate_model(model, split.test, remarks), model.history});
  }
  return rows;
}

nlohmann::json ablation_to_json(std::span<const AblationRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    auto j = metrics::to_json(row.report);
    j.erase("roc");
    j["mode"] = to_string(row.mode);
    j["best_epoch"] = row.history.best_epoch;
    j["best_val_auc"] = row.history.best_val_auc;
    out.push_back(std::move(j));
  }
  return {{"rows", out}};
}

std::string ablation_to_csv(std::span<const AblationRow> rows) {
  std::string out = "mode,auc,tpr_at_fpr_0.2,tpr_at_fpr_0.3\n";
  for (const auto& row : rows) {
    auto tpr = [&](double cap) {
      auto it = row.report.tpr_at_fpr.find(cap);
      return it == row.report.tpr_at_fpr.end() ? std::string() : data::format_double(it->second);
    };
    out += to_string(row.mode) + "," + data::format_double(row.report.auc) + "," + tpr(0.2) + "," + tpr(0.3) + "\n";
  }
  return out;
}

std::vector<FusionCandidate> fusion_grid_search(const MiracleModel& model, std::span<const data::PatientRecord> val,
                                                const RemarkMap& remarks, double step) {
  if (!(step > 0.0 && step <= 1.0)) throw ConfigError("grid step must lie in (0,1]");
  const int k = static_cast<int>(std::lround(1.0 / step));
  if (std::abs(k * step - 1.0) > 1e-9) throw ConfigError("grid step must divide 1");
  const Ablation mode = model.config.ablation;
  const MatrixXr e_m = embed_remarks(model, remarks_for(val, remarks));
  std::vector<int> y;
  for (const auto& r : val) y.push_back(r.label);

  std::vector<FusionCandidate> out;
  MiracleModel probe = model;
  for (int i = 1; i <= k; ++i) {  // w_c > 0 keeps the clinical channel on, as in every ablation
    for (int j = 0; i + j <= k; ++j) {
      const int m = k - i - j;
      if ((!uses_radiomic(mode) && j > 0) || (!uses_remark(mode) && m > 0)) continue;
      probe.config.fusion = {i * step, j * step, m * step};
      const auto probs = score_batch(probe, val, e_m, model.validation_seed);
      out.push_back({probe.config.effective_fusion(),
                     metrics::auc(std::span<const double>(probs), std::span<const int>(y))});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const FusionCandidate& a, const FusionCandidate& b) { return a.val_auc > b.val_auc; });
  return out;
}

}  // namespace miracle::model
