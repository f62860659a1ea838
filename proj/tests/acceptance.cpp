// Acceptance runner: one PASS/FAIL line per primary criterion.

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <unistd.h>

#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "miracle/data/csv_io.hpp"
#include "miracle/data/synthetic.hpp"
#include "miracle/metrics.hpp"
#include "miracle/model/checkpoint.hpp"
#include "miracle/model/train.hpp"
#include "miracle/service/service.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using namespace miracle;
using nlohmann::json;
using Seconds = std::chrono::duration<double>;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

bool same_bits(const MatrixXr& a, const MatrixXr& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

// ---------------------------------------------------------------- gradients

Verdict gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240611);
  boost::random::uniform_real_distribution<double> logit(-8, 8), a(0.05, 0.95), g(0.0, 5.0), u(0, 1);
  const double h = 1e-5;
  double focal_worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const double z = logit(rng);
    const int y = u(rng) < 0.5 ? 1 : 0;
    const objectives::FocalParams p{a(rng), g(rng)};
    const double numeric =
        (objectives::focal_loss_from_logit(z + h, y, p) - objectives::focal_loss_from_logit(z - h, y, p)) / (2 * h);
    focal_worst = std::max(focal_worst, oracle::relative_error(objectives::focal_loss_grad(z, y, p), numeric, 1e-12));
  }
  const int configs = 200;
  double mlp_worst = 0;
  for (int t = 0; t < configs; ++t) {
    const auto c = oracle::random_grad_case(rng);
    mlp_worst = std::max(mlp_worst, oracle::max_gradient_error(c, oracle::analytic_gradient(c)));
  }
  const double secs = Seconds(std::chrono::steady_clock::now() - t0).count();
  const bool pass = focal_worst <= 1e-4 && mlp_worst <= 1e-4 && secs < 60;
  return {pass, "focal max rel err " + sci(focal_worst) + " (1000 logits), MLP max rel err " + sci(mlp_worst) +
                    " over " + std::to_string(configs) + " random configs, " + fmt(secs, 1) + " s"};
}

// ----------------------------------------------------------------------- KL

Verdict kl_oracle() {
  Rng rng(31337);
  boost::random::uniform_int_distribution<int> dim(1, 4);
  boost::random::uniform_real_distribution<double> mu(-1, 1), sigma(0.2, 1.5);
  double worst = 0;
  for (int l = 0; l < 20; ++l) {
    auto layer = vb::VariationalLinear<double>::constant(dim(rng), dim(rng), 0, 0);
    for (Index i = 0; i < layer.mu_w.size(); ++i) {
      layer.mu_w.data()[i] = mu(rng);
      layer.rho_w.data()[i] = vb::inverse_softplus(sigma(rng));
    }
    for (Index i = 0; i < layer.mu_b.size(); ++i) {
      layer.mu_b(i) = mu(rng);
      layer.rho_b(i) = vb::inverse_softplus(sigma(rng));
    }
    const double closed = vb::kl_to_standard_normal(layer);
    const double mc = oracle::monte_carlo_kl(layer, 1'000'000, rng);
    worst = std::max(worst, std::abs(mc - closed) / closed);
  }
  return {worst <= 0.01, "worst relative gap " + sci(worst) + " over 20 layers, 1e6 draws each"};
}

// ------------------------------------------------------------------ metrics

struct Scored {
  std::vector<double> scores;
  std::vector<int> labels;
};

Scored random_scored(Rng& rng, int min_n, int max_n, bool ties) {
  boost::random::uniform_int_distribution<int> size(min_n, max_n), grid(0, 5);
  boost::random::uniform_real_distribution<double> u(0, 1);
  for (;;) {
    Scored d;
    const int n = size(rng);
    for (int i = 0; i < n; ++i) {
      d.scores.push_back(ties ? grid(rng) / 5.0 : u(rng));
      d.labels.push_back(u(rng) < 0.5);
    }
    const auto c = metrics::count_classes(d.labels);
    if (c.n_pos > 0 && c.n_neg > 0) return d;
  }
}

Verdict metric_oracles() {
  Rng rng(99);
  boost::random::uniform_real_distribution<double> cap(0.01, 0.99);
  int auc_mismatch = 0, tpr_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto d = random_scored(rng, 2, 12, t % 2 == 1);
    const std::span<const double> s(d.scores);
    const std::span<const int> y(d.labels);
    auc_mismatch += metrics::auc(s, y) != oracle::pairwise_auc(s, y);
    for (double c : {0.2, 0.3, cap(rng)})
      tpr_mismatch += metrics::tpr_at_fpr(s, y, c) != oracle::enumerated_tpr_at_fpr(s, y, c);
  }
  double trap_worst = 0;
  for (int t = 0; t < 200; ++t) {
    const auto d = random_scored(rng, 2, 400, t % 2 == 1);
    const std::span<const double> s(d.scores);
    const std::span<const int> y(d.labels);
    trap_worst =
        std::max(trap_worst, std::abs(metrics::trapezoid_auc(metrics::roc_curve(s, y)) - oracle::pairwise_auc(s, y)));
  }
  const bool pass = auc_mismatch == 0 && tpr_mismatch == 0 && trap_worst <= 1e-12;
  return {pass, std::to_string(auc_mismatch) + "/1000 AUC mismatches, " + std::to_string(tpr_mismatch) +
                    "/3000 TPR@FPR mismatches, trapezoid-vs-pairwise max gap " + sci(trap_worst) + " on 200 sets"};
}

// ---------------------------------------------------------------- constants

Verdict worked_constants() {
  const double focal = objectives::focal_loss(0.5, 1, objectives::FocalParams{0.8, 4.0});
  VectorXr e1 = VectorXr::Zero(768), e2 = e1, e3 = e1;
  e1(0) = 1;
  e2(1) = 1;
  e3(2) = 1;
  const model::FusionWeights w{0.5, 0.25, 0.25};
  VectorXr expected = VectorXr::Zero(768);
  expected(0) = 0.5;
  expected(1) = 0.25;
  expected(2) = 0.25;
  const bool basis = model::fuse(e1, e2, e3, w) == expected;
  const bool same = model::fuse(e1, e1, e1, w) == e1;
  const bool pass = std::abs(focal - 0.0346574) <= 1e-6 && basis && same;
  return {pass, "focal_loss(0.5,1,0.8,4) = " + fmt(focal, 7) + ", basis fusion " + (basis ? "exact" : "inexact") +
                    ", repeated unit vector " + (same ? "exact" : "inexact")};
}

// ----------------------------------------------------------------- pipeline

/// synth -> files -> load -> train -> checkpoint -> test predictions.
struct PipelineRun {
  fs::path dir;
  data::DatasetSplit split;
  model::MiracleModel model;
  std::string checkpoint_bytes;
  std::vector<double> test_probabilities;
  double test_auc = 0;
  double seconds = 0;
};

PipelineRun run_pipeline(const fs::path& dir, const model::MiracleConfig& config, bool verbose) {
  const auto t0 = std::chrono::steady_clock::now();
  PipelineRun run;
  run.dir = dir;
  data::write_dataset(dir / "data", data::generate_synthetic(data::SyntheticConfig{}), data::ClinicalSchema::stand_in());
  run.split = data::load_dataset(dir / "data");
  model::TrainOptions options;
  options.schema = data::load_dataset_schema(dir / "data");
  if (verbose)
    options.on_epoch = [t0](const model::EpochRecord& e) {
      std::cerr << "  epoch " << e.epoch << " loss " << fmt(e.train_loss) << " val_auc " << fmt(e.val_auc) << " ("
                << fmt(Seconds(std::chrono::steady_clock::now() - t0).count(), 0) << " s)" << std::endl;
    };
  run.model = model::train(run.split, {}, config, options);
  model::save_checkpoint(dir / "model.ckpt", run.model);
  run.checkpoint_bytes = testing::slurp(dir / "model.ckpt");
  const auto& test = run.split.test;
  run.test_probabilities =
      model::score_each(run.model, test, model::embed_remarks(run.model, model::remarks_for(test, {})));
  std::vector<int> y;
  for (const auto& r : test) y.push_back(r.label);
  run.test_auc = metrics::auc(std::span<const double>(run.test_probabilities), std::span<const int>(y));
  run.seconds = Seconds(std::chrono::steady_clock::now() - t0).count();
  return run;
}

struct Context {
  fs::path workdir;
  bool verbose = false;
  std::optional<PipelineRun> first;

  const PipelineRun& reference() {
    if (!first) {
      if (verbose) std::cerr << "pipeline run A (default configuration)" << std::endl;
      first = run_pipeline(workdir / "run_a", model::MiracleConfig{}, verbose);
    }
    return *first;
  }
};

double ablation_auc(const data::DatasetSplit& split, model::Ablation mode, std::uint64_t seed, bool verbose) {
  model::MiracleConfig config;
  config.ablation = mode;
  config.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = model::train(split, {}, config);
  const double auc = model::evaluate_model(m, split.test, {}).auc;
  if (verbose)
    std::cerr << "  " << model::to_string(mode) << " seed " << seed << ": test AUC " << fmt(auc) << ", "
              << m.history.epochs.size() << " epochs, " << fmt(Seconds(std::chrono::steady_clock::now() - t0).count(), 0)
              << " s" << std::endl;
  return auc;
}

Verdict end_to_end(Context& ctx) {
  const auto& a = ctx.reference();
  const auto& h = a.model.history;
  const bool e2e = a.test_auc >= 0.90 && h.epochs.size() <= 100 && a.seconds < 1800;

  if (ctx.verbose) std::cerr << "ablation: clinical_only vs clinical_radiomic, seeds 7, 8, 9" << std::endl;
  std::vector<double> gaps, only, radiomic;
  for (std::uint64_t seed : {7, 8, 9}) {
    only.push_back(ablation_auc(a.split, model::Ablation::clinical_only, seed, ctx.verbose));
    radiomic.push_back(ablation_auc(a.split, model::Ablation::clinical_radiomic, seed, ctx.verbose));
    gaps.push_back(radiomic.back() - only.back());
  }
  const double gap = median(gaps);
  const bool pass = e2e && gap >= 0.02;
  return {pass, "full model test AUC " + fmt(a.test_auc) + " after " + std::to_string(h.epochs.size()) +
                    " epochs (best " + std::to_string(h.best_epoch) + ") in " + fmt(a.seconds / 60, 1) +
                    " min; clinical_radiomic - clinical_only median gap " + fmt(gap) + " (per seed " + fmt(gaps[0]) +
                    ", " + fmt(gaps[1]) + ", " + fmt(gaps[2]) + "; medians " + fmt(median(radiomic)) + " vs " +
                    fmt(median(only)) + ")"};
}

// ------------------------------------------------------------- intervention

Verdict intervention_contract(Context& ctx) {
  const auto& a = ctx.reference();
  const auto& m = a.model;
  const std::string checksum = model::parameter_checksum(m);
  const std::vector<std::string> edits{"Very high risk: severely impaired DLCO and heavy smoking history.",
                                       "Low risk. Excellent pulmonary reserve.", "no comment"};
  int identical_nonzero = 0, embedding_moved = 0;
  const std::size_t n = std::min<std::size_t>(50, a.split.test.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = a.split.test[i];
    const auto prior = model::predict(m, r, remarks::stub_remark(r.clinical));
    const auto same = model::intervene(m, prior, prior.remark.text);
    identical_nonzero += (same.probability - prior.probability) != 0.0;
    for (const auto& e : edits) {
      const auto after = model::intervene(m, prior, e);
      embedding_moved += !same_bits(after.E_c, prior.E_c) || !same_bits(after.E_r, prior.E_r);
    }
  }

  auto muted = m;
  muted.config.fusion = {0.5, 0.25, 0.0};
  muted.prepare();
  int muted_changed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = a.split.test[i];
    const auto prior = model::predict(muted, r, remarks::stub_remark(r.clinical));
    for (const auto& e : edits) muted_changed += model::intervene(muted, prior, e).probability != prior.probability;
  }

  // 1,000 mixed requests against the live service.
  auto shared = std::make_shared<const model::MiracleModel>(m);
  remarks::CompletionConfig stub;
  stub.stub = true;
  service::ServiceConfig sc;
  sc.port = 0;
  service::InferenceService svc(sc, remarks::RemarkGenerator(stub));
  svc.load_model(shared, "acceptance");
  svc.load_patients(a.split.test);
  const int port = svc.bind();
  std::thread server([&] { svc.listen(); });
  svc.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(60);
  int failed = 0, service_identical_nonzero = 0;
  std::string token, text;
  for (int i = 0; i < 1000; ++i) {
    const auto& r = a.split.test[static_cast<std::size_t>(i / 5) % a.split.test.size()];
    httplib::Result res;
    switch (i % 5) {
      case 0: {
        res = client.Post("/predict", json{{"patient_id", r.patient_id}}.dump(), "application/json");
        if (res && res->status == 200) {
          const auto body = json::parse(res->body);
          token = body["session_token"];
          text = body["remark_text"];
        }
        break;
      }
      case 1:
        res = client.Post("/intervene", json{{"session_token", token}, {"edited_remark", text}}.dump(),
                          "application/json");
        if (res && res->status == 200)
          service_identical_nonzero += json::parse(res->body)["delta_vs_previous"].get<double>() != 0.0;
        break;
      case 2:
        res = client.Post("/intervene", json{{"session_token", token}, {"edited_remark", edits[i % 3]}}.dump(),
                          "application/json");
        break;
      case 3:
        res = client.Get("/patients/" + r.patient_id);
        break;
      default:
        res = client.Get(i % 2 ? "/model/info" : "/patients?page=2");
    }
    failed += !res || res->status != 200;
  }
  svc.stop();
  server.join();
  const bool checksum_same = model::parameter_checksum(*shared) == checksum && model::parameter_checksum(m) == checksum;

  const bool pass = identical_nonzero == 0 && embedding_moved == 0 && muted_changed == 0 && failed == 0 &&
                    service_identical_nonzero == 0 && checksum_same;
  return {pass, std::to_string(identical_nonzero) + "/" + std::to_string(n) + " identical edits moved, " +
                    std::to_string(muted_changed) + " w_m=0 edits moved, " + std::to_string(embedding_moved) +
                    " E_c/E_r changes, " + std::to_string(failed) + "/1000 failed requests, checksum " +
                    (checksum_same ? "unchanged" : "CHANGED")};
}

// -------------------------------------------------------------- determinism

Verdict determinism(Context& ctx) {
  const auto& a = ctx.reference();
  if (ctx.verbose) std::cerr << "pipeline run B (identical configuration)" << std::endl;
  const auto b = run_pipeline(ctx.workdir / "run_b", model::MiracleConfig{}, ctx.verbose);
  int data_diff = 0;
  for (const char* f : {"clinical.csv", "radiomics.csv", "labels.csv", "schema.json"})
    data_diff += testing::slurp(a.dir / "data" / f) != testing::slurp(b.dir / "data" / f);
  const bool ckpt_same = a.checkpoint_bytes == b.checkpoint_bytes;
  const bool preds_same = same_bits(a.test_probabilities, b.test_probabilities);
  int predict_diff = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& r = a.split.test[i];
    const auto pa = model::predict(a.model, r, remarks::stub_remark(r.clinical)).to_json(true).dump();
    const auto pb = model::predict(b.model, r, remarks::stub_remark(r.clinical)).to_json(true).dump();
    predict_diff += pa != pb;
  }
  const bool pass = data_diff == 0 && ckpt_same && preds_same && predict_diff == 0;
  return {pass, std::to_string(data_diff) + " differing data files, checkpoints " +
                    (ckpt_same ? "byte-identical" : "DIFFER") + " (" + std::to_string(a.checkpoint_bytes.size()) +
                    " bytes), " + std::to_string(a.test_probabilities.size()) + " test probabilities " +
                    (preds_same ? "bit-identical" : "DIFFER") + ", " + std::to_string(predict_diff) +
                    "/20 predict documents differ"};
}

// --------------------------------------------------------------- checkpoint

Verdict checkpoint_round_trip(Context& ctx) {
  const auto& a = ctx.reference();
  const auto loaded = model::load_checkpoint(a.dir / "model.ckpt");
  double worst = 0;
  const std::size_t n = std::min<std::size_t>(50, a.split.test.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = a.split.test[i];
    const auto remark = remarks::stub_remark(r.clinical);
    worst = std::max(worst, std::abs(model::predict(a.model, r, remark).probability -
                                     model::predict(loaded, r, remark).probability));
  }
  model::save_checkpoint(ctx.workdir / "resaved.ckpt", loaded);
  const bool resave_same = testing::slurp(ctx.workdir / "resaved.ckpt") == a.checkpoint_bytes;
  return {worst <= 1e-12 && resave_same, "max |delta p| " + sci(worst) + " over " + std::to_string(n) +
                                             " patients, re-save " + (resave_same ? "byte-identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"Acceptance criteria"};
  std::vector<std::string> only;
  std::string workdir, report;
  bool keep = false, quiet = false;
  app.add_option("--only", only, "Subset of criteria to run")->delimiter(',');
  app.add_option("--workdir", workdir, "Scratch directory (default: fresh temp dir)");
  app.add_option("--report", report, "Also write results as JSON");
  app.add_flag("--keep", keep, "Keep the scratch directory");
  app.add_flag("--quiet", quiet, "No progress on stderr");
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.verbose = !quiet;
  ctx.workdir = workdir.empty() ? fs::temp_directory_path() / ("miracle_acceptance_" + std::to_string(getpid()))
                                : fs::path(workdir);
  fs::create_directories(ctx.workdir);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient-suite", gradient_suite},
      {"kl-oracle", kl_oracle},
      {"metric-oracles", metric_oracles},
      {"worked-constants", worked_constants},
      {"end-to-end-planted-signal", [&] { return end_to_end(ctx); }},
      {"intervention-contract", [&] { return intervention_contract(ctx); }},
      {"determinism", [&] { return determinism(ctx); }},
      {"checkpoint-round-trip", [&] { return checkpoint_round_trip(ctx); }},
  };
  for (const auto& name : only)
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
      std::cerr << "unknown criterion " << name << "\n";
      return 2;
    }

  json results = json::array();
  bool all = true;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = Seconds(std::chrono::steady_clock::now() - t0).count();
    all = all && v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
    results.push_back({{"criterion", name}, {"pass", v.pass}, {"detail", v.detail}, {"seconds", secs}});
  }
  if (!report.empty()) testing::spit(report, results.dump(2) + "\n");
  if (!keep && workdir.empty()) fs::remove_all(ctx.workdir);
  return all ? 0 : 1;
}
