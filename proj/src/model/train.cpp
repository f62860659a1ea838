#include "miracle/model/train.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include <boost/random/uniform_int_distribution.hpp>

#include "miracle/adam.hpp"
#include "miracle/focal_loss.hpp"

namespace miracle::model {

std::vector<remarks::Remark> remarks_for(std::span<const data::PatientRecord> records, const RemarkMap& remarks) {
  std::vector<remarks::Remark> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = remarks.find(r.patient_id);
    out.push_back(it != remarks.end() ? it->second : remarks::stub_remark(r.clinical));
  }
  return out;
}

namespace {

std::vector<int> labels_of(std::span<const data::PatientRecord> records) {
  std::vector<int> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(r.label);
  return y;
}

MatrixXr gather(const MatrixXr& m, std::span<const std::size_t> cols) {
  MatrixXr out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = m.col(static_cast<Index>(cols[j]));
  return out;
}

// Fisher-Yates with boost's distribution so the order does not depend on the
// standard library's shuffle.
void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    boost::random::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

struct Network {
  vb::MlpSpec spec;
  vb::MlpLayers<Real>* layers;
  vb::Adam<Real> adam;
  vb::MlpScales<Real> scales;
  vb::MlpGrad<Real> grads;
};

}  // namespace

MiracleModel train(const data::DatasetSplit& split, const RemarkMap& remarks, const MiracleConfig& config,
                   const TrainOptions& options) {
  config.validate();
  if (split.train.empty() || split.val.empty()) throw InputError("training needs nonempty train and val splits");
  const auto val_counts = metrics::count_classes(labels_of(split.val));
  if (val_counts.n_pos == 0 || val_counts.n_neg == 0)
    throw TrainingError("validation split needs both classes for model selection");

  MiracleModel model = build_model(config, data::fit_codec(split.train, options.schema), options.remark_encoder);
  model.validation_seed = mix_seed(config.seed, 30);
  const bool use_r = uses_radiomic(config.ablation);
  const bool use_m = uses_remark(config.ablation);
  const FusionWeights w = config.effective_fusion();

  const auto x = data::encode_batch(split.train, model.codec);
  const std::vector<int> y = labels_of(split.train);
  MatrixXr e_m_train, e_m_val;
  if (use_m) {
    e_m_train = embed_remarks(model, remarks_for(split.train, remarks));
    e_m_val = embed_remarks(model, remarks_for(split.val, remarks));
  }
  const std::vector<int> y_val = labels_of(split.val);

  std::vector<Network> nets;
  nets.push_back({config.clinical_spec(), &model.clinical, vb::Adam<Real>(model.clinical, config.optimizer), {}, {}});
  if (use_r)
    nets.push_back({config.radiomic_spec(), &model.radiomic, vb::Adam<Real>(model.radiomic, config.optimizer), {}, {}});
  nets.push_back(
      {config.classifier_spec(), &model.classifier, vb::Adam<Real>(model.classifier, config.optimizer), {}, {}});
  Network& net_c = nets.front();
  Network* net_r = use_r ? &nets[1] : nullptr;
  Network& net_k = nets.back();

  Rng shuffle_rng(mix_seed(config.seed, 20));
  Rng noise_rng(mix_seed(config.seed, 21));
  const int S = config.mc_samples;
  const Real lambda = config.kl_weight;
  const std::size_t n = split.train.size();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto best_clinical = model.clinical;
  auto best_radiomic = model.radiomic;
  auto best_classifier = model.classifier;
  double best_auc = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  static const MatrixXr kNone;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(batch, n - start));
      const Index B = static_cast<Index>(idx.size());
      const MatrixXr xc = gather(x.clinical, idx);
      const MatrixXr xr = use_r ? gather(x.radiomic, idx) : MatrixXr();
      const MatrixXr em = use_m ? gather(e_m_train, idx) : MatrixXr();
      for (auto& net : nets) {
        net.scales = vb::posterior_scales(*net.layers);
        net.grads = vb::zero_grad(*net.layers);
      }
      const Real scale = Real(1) / static_cast<Real>(B * S);
      Real focal_sum = 0;
      for (int s = 0; s < S; ++s) {
        auto fc = vb::mlp_forward(net_c.spec, *net_c.layers, net_c.scales, xc, noise_rng, true);
        vb::MlpOutput<Real> fr;
        if (net_r) fr = vb::mlp_forward(net_r->spec, *net_r->layers, net_r->scales, xr, noise_rng, true);
        const MatrixXr z = detail::fuse_sample(config, fc.y, net_r ? fr.y : kNone, em);
        auto fk = vb::mlp_forward(net_k.spec, *net_k.layers, net_k.scales, z, noise_rng, true);

        MatrixXr upstream(1, B);
        for (Index i = 0; i < B; ++i) {
          const int label = y[idx[static_cast<std::size_t>(i)]];
          focal_sum += objectives::focal_loss_from_logit(fk.y(0, i), label, config.focal);
          upstream(0, i) = objectives::focal_loss_grad(fk.y(0, i), label, config.focal) * scale;
        }
        const MatrixXr dz =
            vb::mlp_backward_accumulate(net_k.spec, *net_k.layers, net_k.scales, fk.trace, upstream, net_k.grads);

        MatrixXr dc = w.w_c * dz;
        if (config.normalize_embeddings) dc = detail::unit_columns_backward(fc.y, dc);
        vb::mlp_backward_accumulate(net_c.spec, *net_c.layers, net_c.scales, fc.trace, dc, net_c.grads, false);
        if (net_r) {
          MatrixXr dr = w.w_r * dz;
          if (config.normalize_embeddings) dr = detail::unit_columns_backward(fr.y, dr);
          vb::mlp_backward_accumulate(net_r->spec, *net_r->layers, net_r->scales, fr.trace, dr, net_r->grads, false);
        }
      }
      Real kl = 0;
      for (const auto& net : nets) kl += vb::mlp_kl(*net.layers, net.scales);
      const Real objective = focal_sum * scale + lambda * kl;
      if (!std::isfinite(objective))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batches + 1));
      for (auto& net : nets) {
        vb::add_kl_gradient(*net.layers, net.scales, lambda, net.grads);
        net.adam.step(*net.layers, net.grads);
      }
      loss_sum += objective;
      ++batches;
    }

    model.prepare();
    const auto probs = score_batch(model, split.val, e_m_val, model.validation_seed);
    const double val_auc = metrics::auc(std::span<const double>(probs), std::span<const int>(y_val));
    const EpochRecord record{epoch, loss_sum / batches, val_auc};
    model.history.epochs.push_back(record);
    if (options.on_epoch) options.on_epoch(record);

    if (val_auc > best_auc) {
      best_auc = val_auc;
      model.history.best_epoch = epoch;
      best_clinical = model.clinical;
      best_radiomic = model.radiomic;
      best_classifier = model.classifier;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      model.history.stopped_early = epoch < config.max_epochs;
      break;
    }
  }

  model.clinical = std::move(best_clinical);
  model.radiomic = std::move(best_radiomic);
  model.classifier = std::move(best_classifier);
  model.history.best_val_auc = best_auc;
  model.prepare();
  return model;
}

metrics::EvalReport evaluate_model(const MiracleModel& model, std::span<const data::PatientRecord> records,
                                   const RemarkMap& remarks) {
  const MatrixXr e_m = embed_remarks(model, remarks_for(records, remarks));
  const auto probs = score_each(model, records, e_m);
  const auto y = labels_of(records);
  return metrics::evaluate(std::span<const double>(probs), std::span<const int>(y));
}

}  // namespace miracle::model
