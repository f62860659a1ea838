#include <atomic>
#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "miracle/data/csv_io.hpp"
#include "miracle/data/synthetic.hpp"
#include "miracle/model/ablation.hpp"
#include "miracle/model/checkpoint.hpp"
#include "miracle/model/train.hpp"
#include "miracle/service/service.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace miracle;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kTrainingFailure = 3;
constexpr int kCompatFailure = 4;

/// Exit code for errors that are not usage or divergence: train and ablate
/// report them as training failures, the rest as evaluation failures.
int failure_code(const std::string& command) {
  return command == "train" || command == "ablate" ? kTrainingFailure : kCompatFailure;
}

/// Malformed datasets are bad input for training, an incompatibility for a
/// trained checkpoint.
int schema_code(const std::string& command) {
  return command == "train" || command == "ablate" || command == "synth" ? kUsage : kCompatFailure;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
  fs::path out = path;
  out.replace_extension(suffix);
  return out;
}

struct Manifest {
  json doc;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  Manifest(const std::string& command, int argc, char** argv) {
    doc["command"] = command;
    doc["argv"] = std::vector<std::string>(argv, argv + argc);
    doc["version"] = MIRACLE_VERSION_STAMP;
    doc["started_at"] = utc_now();
    doc["outputs"] = json::object();
  }

  void finish() {
    doc["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

  void write(const fs::path& path) {
    finish();
    doc["outputs"]["manifest"] = path.string();
    write_text(path, doc.dump(2) + "\n");
  }

  void emit(const std::optional<fs::path>& path) {
    if (path) {
      write(*path);
    } else {
      finish();
      std::cerr << doc.dump() << std::endl;
    }
  }
};

remarks::RemarkGenerator make_generator(bool stub) {
  auto config = remarks::CompletionConfig::from_env();
  if (stub) config.stub = true;
  return remarks::RemarkGenerator(config);
}

json generator_info(const remarks::RemarkGenerator& generator) {
  if (generator.stub()) return {{"mode", "stub"}, {"model", remarks::kStubModelName}};
  return {{"mode", "llm"}, {"model", generator.config().model}, {"url", generator.config().url}};
}

/// Remarks for every record. Stub mode returns an empty map, which the
/// trainer fills with stub remarks itself.
model::RemarkMap generate_remarks(const remarks::RemarkGenerator& generator,
                                  const std::vector<const std::vector<data::PatientRecord>*>& sets) {
  model::RemarkMap out;
  if (generator.stub()) return out;
  std::vector<const data::PatientRecord*> all;
  for (const auto* set : sets)
    for (const auto& r : *set) all.push_back(&r);
  std::vector<remarks::Remark> results(all.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  const int threads = std::max(1, generator.config().max_in_flight);
  for (int t = 0; t < threads; ++t)
    workers.emplace_back([&] {
      for (std::size_t i; (i = next++) < all.size();) {
        try {
          results[i] = generator.generate(all[i]->clinical);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = all.size();
        }
      }
    });
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
  for (std::size_t i = 0; i < all.size(); ++i) out.emplace(all[i]->patient_id, results[i]);
  return out;
}

/// Config file first, flags on top; the merged document is validated once.
struct ConfigFlags {
  std::string file;
  std::string ablation;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> mc_samples;
  std::optional<int> batch_size;

  void add_to(CLI::App* app, bool with_ablation) {
    app->add_option("--config", file, "MiracleConfig as JSON or key = value lines")->check(CLI::ExistingFile);
    if (with_ablation)
      app->add_option("--ablation", ablation, "full, clinical_radiomic or clinical_only")
          ->check(CLI::IsMember({"full", "clinical_radiomic", "clinical_only"}));
    app->add_option("--seed", seed, "Run seed");
    app->add_option("--epochs", epochs, "Maximum epochs")->check(CLI::PositiveNumber);
    app->add_option("--mc-samples", mc_samples, "Monte Carlo samples S")->check(CLI::PositiveNumber);
    app->add_option("--batch-size", batch_size, "Minibatch size")->check(CLI::PositiveNumber);
  }

  model::MiracleConfig resolve() const {
    json j = file.empty() ? json::object() : model::read_config_document(file);
    if (!j.is_object()) throw ConfigError("config document must be an object");
    if (!ablation.empty()) j["ablation"] = ablation;
    if (seed) j["seed"] = *seed;
    if (epochs) j["max_epochs"] = *epochs;
    if (mc_samples) j["mc_samples"] = *mc_samples;
    if (batch_size) j["batch_size"] = *batch_size;
    return model::MiracleConfig::from_json(j);
  }
};

void check_schema(const data::ClinicalSchema& data_schema, const model::MiracleModel& model) {
  if (data_schema.to_json() != model.codec.schema.to_json())
    throw SchemaError("dataset schema does not match the checkpoint's clinical schema");
}

data::PatientRecord read_patient(const fs::path& path, const data::ClinicalSchema& schema) {
  const json j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw InputError(path.string() + " is not a JSON object");
  return data::patient_from_json(j, schema);
}

std::string trim_trailing(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"Surgical complication risk with Bayesian multimodal fusion"};
  app.set_version_flag("--version", std::string(MIRACLE_VERSION_STAMP));
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  std::string synth_out;
  std::uint64_t synth_seed = data::SyntheticConfig{}.seed;
  std::vector<std::size_t> sizes;
  std::vector<double> prevalences;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--sizes", sizes, "train,val,test sizes")->delimiter(',')->expected(3);
  synth->add_option("--prevalences", prevalences, "Positive rate per split")->delimiter(',')->expected(3);

  // train
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  std::string train_data, train_out;
  bool train_stub = false, quiet = false;
  ConfigFlags train_flags;
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_flag("--stub-llm", train_stub, "Use stub remarks instead of the LLM endpoint");
  train->add_flag("--quiet", quiet, "No per-epoch progress");
  train_flags.add_to(train, true);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out, eval_roc;
  bool eval_stub = false;
  std::optional<std::uint64_t> eval_seed;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--split", eval_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", eval_out, "report.json path")->required();
  eval->add_option("--roc", eval_roc, "roc.csv path (default: next to the report)");
  eval->add_flag("--stub-llm", eval_stub, "Use stub remarks instead of the LLM endpoint");
  eval->add_option("--seed", eval_seed, "Salt for the per-patient seeds");

  // predict
  auto* pred = app.add_subcommand("predict", "Predict one patient and print the result as JSON");
  std::string pred_ckpt, pred_patient, pred_remark, pred_manifest;
  bool pred_stub = false, pred_embeddings = false;
  std::optional<std::uint64_t> pred_seed;
  pred->add_option("--ckpt", pred_ckpt, "Checkpoint")->required();
  pred->add_option("--patient", pred_patient, "Patient JSON file")->required();
  pred->add_option("--remark", pred_remark, "Remark text file, used instead of generating one");
  pred->add_flag("--stub-llm", pred_stub, "Use the stub remark generator");
  pred->add_flag("--embeddings", pred_embeddings, "Include mean channel embeddings");
  pred->add_option("--seed", pred_seed, "Explicit request seed");
  pred->add_option("--manifest", pred_manifest, "Write the run manifest here instead of stderr");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the inference service");
  std::string serve_ckpt, serve_host = "127.0.0.1", serve_demo, serve_audit, serve_manifest;
  int serve_port = 8080;
  long serve_ttl = 1800;
  bool serve_stub = false, serve_fallback = false;
  std::optional<std::uint64_t> serve_seed;
  serve->add_option("--ckpt,--checkpoint", serve_ckpt, "Checkpoint")->required();
  serve->add_option("--port", serve_port, "Port, 0 for any free port")->check(CLI::Range(0, 65535));
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--demo-data", serve_demo, "Dataset directory whose test split is browsable");
  serve->add_option("--audit-log", serve_audit, "Intervention audit log (JSON lines)");
  serve->add_option("--session-ttl", serve_ttl, "Session lifetime in seconds")->check(CLI::PositiveNumber);
  serve->add_flag("--stub-llm", serve_stub, "Use the stub remark generator");
  serve->add_flag("--stub-fallback", serve_fallback, "Fall back to stub remarks when the LLM fails");
  serve->add_option("--seed", serve_seed, "Salt for the per-patient seeds");
  serve->add_option("--manifest", serve_manifest, "Write the run manifest here instead of stderr");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train and evaluate each ablation mode");
  std::string abl_data, abl_out;
  std::vector<std::string> abl_modes{"full", "clinical_radiomic", "clinical_only"};
  bool abl_stub = false;
  ConfigFlags abl_flags;
  abl->add_option("--data", abl_data, "Dataset directory")->required();
  abl->add_option("--out", abl_out, "Output directory")->required();
  abl->add_option("--modes", abl_modes, "Modes to run")
      ->delimiter(',')
      ->check(CLI::IsMember({"full", "clinical_radiomic", "clinical_only"}));
  abl->add_flag("--stub-llm", abl_stub, "Use stub remarks instead of the LLM endpoint");
  abl_flags.add_to(abl, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Manifest manifest(command, argc, argv);

    if (command == "synth") {
      data::SyntheticConfig sc;
      sc.seed = synth_seed;
      if (!sizes.empty()) std::copy(sizes.begin(), sizes.end(), sc.sizes.begin());
      if (!prevalences.empty()) std::copy(prevalences.begin(), prevalences.end(), sc.prevalences.begin());
      sc.validate();
      const auto split = data::generate_synthetic(sc);
      data::write_dataset(synth_out, split, data::ClinicalSchema::stand_in());
      manifest.doc["seed"] = sc.seed;
      manifest.doc["config"] = {{"sizes", sc.sizes}, {"prevalences", sc.prevalences}, {"seed", sc.seed}};
      manifest.doc["outputs"]["dataset"] = synth_out;
      manifest.write(fs::path(synth_out) / "manifest.json");
      std::cout << "wrote " << split.train.size() + split.val.size() + split.test.size() << " patients to "
                << synth_out << "\n";
      return kOk;
    }

    if (command == "train") {
      const auto config = train_flags.resolve();
      const auto split = data::load_dataset(train_data);
      const auto generator = make_generator(train_stub);
      const auto remark_map = generate_remarks(generator, {&split.train, &split.val});
      model::TrainOptions options;
      options.schema = data::load_dataset_schema(train_data);
      if (!quiet)
        options.on_epoch = [](const model::EpochRecord& e) {
          std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " val_auc " << e.val_auc << std::endl;
        };
      const auto model = model::train(split, remark_map, config, options);
      const fs::path ckpt = train_out;
      if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
      model::save_checkpoint(ckpt, model);
      const fs::path history = sibling(ckpt, ".history.csv");
      write_text(history, model.history.to_csv());
      manifest.doc["seed"] = config.seed;
      manifest.doc["config"] = config.to_json();
      manifest.doc["remarks"] = generator_info(generator);
      manifest.doc["inputs"] = {{"data", train_data}, {"config", train_flags.file}};
      manifest.doc["outputs"]["checkpoint"] = ckpt.string();
      manifest.doc["outputs"]["history"] = history.string();
      manifest.doc["result"] = {{"best_epoch", model.history.best_epoch},
                                {"best_val_auc", model.history.best_val_auc},
                                {"epochs_trained", model.history.epochs.size()},
                                {"stopped_early", model.history.stopped_early},
                                {"parameter_checksum", model::parameter_checksum(model)}};
      manifest.write(sibling(ckpt, ".manifest.json"));
      return kOk;
    }

    if (command == "eval") {
      const auto model = model::load_checkpoint(eval_ckpt);
      check_schema(data::load_dataset_schema(eval_data), model);
      const auto split = data::load_dataset(eval_data);
      const auto& records = split.by_name(eval_split);
      const auto generator = make_generator(eval_stub);
      const auto remark_map = generate_remarks(generator, {&records});
      const auto remark_list = model::remarks_for(records, remark_map);
      std::vector<double> probs;
      std::vector<int> labels;
      for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        probs.push_back(model::predict(model, r, remark_list[i], model::request_seed(r.patient_id, eval_seed))
                            .probability);
        labels.push_back(r.label);
      }
      const auto report = metrics::evaluate(std::span<const double>(probs), std::span<const int>(labels));
      const fs::path out = eval_out;
      const fs::path roc = eval_roc.empty() ? out.parent_path() / "roc.csv" : fs::path(eval_roc);
      write_text(out, metrics::to_json(report).dump(2) + "\n");
      write_text(roc, metrics::roc_to_csv(report.roc));
      if (eval_seed) manifest.doc["seed"] = *eval_seed;
      manifest.doc["config"] = model.config.to_json();
      manifest.doc["remarks"] = generator_info(generator);
      manifest.doc["inputs"] = {{"checkpoint", eval_ckpt}, {"data", eval_data}, {"split", eval_split}};
      manifest.doc["outputs"]["report"] = out.string();
      manifest.doc["outputs"]["roc"] = roc.string();
      manifest.doc["result"] = {{"auc", report.auc}, {"n_pos", report.n_pos}, {"n_neg", report.n_neg}};
      manifest.write(sibling(out, ".manifest.json"));
      std::cout << "auc " << report.auc << "\n";
      return kOk;
    }

    if (command == "predict") {
      const auto model = model::load_checkpoint(pred_ckpt);
      const auto record = read_patient(pred_patient, model.codec.schema);
      remarks::Remark remark;
      if (!pred_remark.empty()) {
        remark = {trim_trailing(read_text(pred_remark)), remarks::RemarkOrigin::clinician_edited, "clinician"};
        if (remark.text.empty()) throw InputError(pred_remark + " holds no remark text");
      } else {
        remark = make_generator(pred_stub).generate(record.clinical);
      }
      const auto seed = pred_seed ? *pred_seed : model::default_seed(record.patient_id);
      const auto result = model::predict(model, record, remark, seed);
      std::cout << result.to_json(pred_embeddings).dump(2) << std::endl;
      manifest.doc["seed"] = seed;
      manifest.doc["config"] = model.config.to_json();
      manifest.doc["inputs"] = {{"checkpoint", pred_ckpt}, {"patient", pred_patient}, {"remark", pred_remark}};
      manifest.doc["outputs"]["prediction"] = "stdout";
      manifest.emit(pred_manifest.empty() ? std::nullopt : std::optional<fs::path>(pred_manifest));
      return kOk;
    }

    if (command == "serve") {
      // Signals are taken by sigwait below, never by a server thread.
      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);

      auto model = std::make_shared<const model::MiracleModel>(model::load_checkpoint(serve_ckpt));
      service::ServiceConfig sc;
      sc.host = serve_host;
      sc.port = serve_port;
      sc.session_ttl = std::chrono::seconds(serve_ttl);
      sc.audit_log = serve_audit;
      sc.stub_fallback = serve_fallback;
      sc.seed = serve_seed;
      service::InferenceService svc(sc, make_generator(serve_stub));
      if (!serve_demo.empty()) {
        check_schema(data::load_dataset_schema(serve_demo), *model);
        svc.load_patients(data::load_dataset(serve_demo).test);
      }
      svc.load_model(model, serve_ckpt);
      const int port = svc.bind();
      std::thread server([&] { svc.listen(); });
      svc.wait_until_ready();
      std::cout << "listening on http://" << serve_host << ":" << port << std::endl;
      if (serve_seed) manifest.doc["seed"] = *serve_seed;
      manifest.doc["config"] = model->config.to_json();
      manifest.doc["inputs"] = {{"checkpoint", serve_ckpt}, {"demo_data", serve_demo}};
      manifest.doc["outputs"]["audit_log"] = serve_audit;
      manifest.doc["port"] = port;
      manifest.emit(serve_manifest.empty() ? std::nullopt : std::optional<fs::path>(serve_manifest));
      int sig = 0;
      sigwait(&signals, &sig);
      svc.stop();
      server.join();
      return kOk;
    }

    if (command == "ablate") {
      const auto config = abl_flags.resolve();
      std::vector<model::Ablation> modes;
      for (const auto& m : abl_modes) modes.push_back(model::ablation_from_string(m));
      const auto split = data::load_dataset(abl_data);
      const auto generator = make_generator(abl_stub);
      const auto remark_map = generate_remarks(generator, {&split.train, &split.val, &split.test});
      model::TrainOptions options;
      options.schema = data::load_dataset_schema(abl_data);
      const auto rows = model::ablate(split, remark_map, config, modes, options);
      const fs::path out = abl_out;
      write_text(out / "ablation.json", model::ablation_to_json(rows).dump(2) + "\n");
      write_text(out / "ablation.csv", model::ablation_to_csv(rows));
      manifest.doc["seed"] = config.seed;
      manifest.doc["config"] = config.to_json();
      manifest.doc["remarks"] = generator_info(generator);
      manifest.doc["inputs"] = {{"data", abl_data}, {"config", abl_flags.file}};
      manifest.doc["outputs"]["json"] = (out / "ablation.json").string();
      manifest.doc["outputs"]["csv"] = (out / "ablation.csv").string();
      manifest.write(out / "manifest.json");
      std::cout << model::ablation_to_csv(rows);
      return kOk;
    }
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTrainingFailure;
  } catch (const IntegrityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCompatFailure;
  } catch (const VersionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCompatFailure;
  } catch (const EvaluationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCompatFailure;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return schema_code(command);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IngestionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return failure_code(command);
  }
  return kUsage;
}
