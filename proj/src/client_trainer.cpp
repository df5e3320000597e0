#include "fedarks/client_trainer.hpp"

#include <algorithm>
#include <cmath>

#include "fedarks/errors.hpp"

namespace fedarks {

void TrainConfig::validate() const {
  if (local_epochs < 1) {
    throw ConfigError("local_epochs must be at least 1");
  }
  if (batch_p < 2 || batch_s < 2) {
    throw ConfigError(
        "batch_p and batch_s must each be at least 2 so every anchor "
        "has a positive and a negative");
  }
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (!(fusion_alpha >= 0.0 && fusion_alpha <= 1.0)) {
    throw ConfigError("fusion_alpha must lie in [0, 1]");
  }
  if (!std::isfinite(triplet_margin) || triplet_margin <= 0.0) {
    throw ConfigError("triplet_margin must be finite and positive");
  }
}

std::vector<std::vector<std::size_t>> make_pk_batches(
    const std::vector<int>& labels, int batch_p, int batch_s, Rng& rng) {
  if (batch_p < 2 || batch_s < 2) {
    throw BatchError("batch_p and batch_s must each be at least 2");
  }
  if (labels.empty()) {
    throw BatchError("no samples to batch");
  }
  const int num_classes =
      *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> queues(
      static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) {
      throw BatchError("negative label");
    }
    queues[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (auto& q : queues) {
    rng.shuffle(q);
  }

  std::vector<std::vector<std::size_t>> batches;
  std::vector<int> eligible;
  for (;;) {
    eligible.clear();
    for (int c = 0; c < num_classes; ++c) {
      if (static_cast<int>(queues[static_cast<std::size_t>(c)].size()) >=
          batch_s) {
        eligible.push_back(c);
      }
    }
    if (static_cast<int>(eligible.size()) < batch_p) {
      break;
    }
    rng.shuffle(eligible);
    std::vector<std::size_t> batch;
    batch.reserve(static_cast<std::size_t>(batch_p) * batch_s);
    for (int p = 0; p < batch_p; ++p) {
      auto& q = queues[static_cast<std::size_t>(eligible[p])];
      for (int s = 0; s < batch_s; ++s) {
        batch.push_back(q.back());
        q.pop_back();
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

namespace {

std::vector<int> shard_classes(const ClientShard& shard) {
  std::vector<int> ids;
  if (!shard.samples) {
    return ids;
  }
  ids.reserve(shard.samples->size());
  for (const Sample& s : *shard.samples) {
    ids.push_back(s.identity);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

}  // namespace

ClientTrainer::ClientTrainer(const ModelConfig& model_cfg,
                             const TrainConfig& train_cfg,
                             const ClientShard& shard,
                             std::uint64_t init_seed)
    : train_cfg_(train_cfg),
      client_id_(shard.client_id),
      domain_id_(shard.domain_id),
      samples_(shard.samples),
      classes_(shard_classes(shard)),
      model_(model_cfg, std::max<int>(1, static_cast<int>(classes_.size()))) {
  train_cfg_.validate();
  if (classes_.empty()) {
    return;  // idle client, see class comment
  }
  local_ = init_local(model_cfg, static_cast<int>(classes_.size()),
                      init_seed);
  labels_.reserve(samples_->size());
  for (const Sample& s : *samples_) {
    const auto it =
        std::lower_bound(classes_.begin(), classes_.end(), s.identity);
    labels_.push_back(static_cast<int>(it - classes_.begin()));
  }

  // Batching must be feasible up front, otherwise every round yields
  // zero batches and the client silently uploads the broadcast
  // unchanged forever.
  std::vector<int> counts(classes_.size(), 0);
  for (int l : labels_) {
    ++counts[static_cast<std::size_t>(l)];
  }
  int rich = 0;
  for (int c : counts) {
    if (c >= train_cfg_.batch_s) {
      ++rich;
    }
  }
  if (rich < train_cfg_.batch_p) {
    throw ConfigError(
        "shard cannot form a single batch: fewer than batch_p identities "
        "have batch_s samples");
  }
}

ClientUpdate ClientTrainer::run_round(const ParamVector& broadcast,
                                      std::uint64_t stream_seed) {
  if (!(broadcast.layout() ==
        global_layout(model_.config()))) {
    throw ProtocolError("broadcast layout does not match the model");
  }
  ClientUpdate update;
  update.client_id = client_id_;
  if (idle()) {
    update.global_params = broadcast;
    update.update_norm = 0.0;
    return update;
  }

  Rng rng(stream_seed);
  ParamVector params = broadcast;  // working copy; broadcast stays intact

  double loss_sum = 0.0;
  int batch_count = 0;
  const double lr = train_cfg_.learning_rate;

  for (int epoch = 0; epoch < train_cfg_.local_epochs; ++epoch) {
    double epoch_loss = 0.0;
    int epoch_batches = 0;
    const auto batches =
        make_pk_batches(labels_, train_cfg_.batch_p, train_cfg_.batch_s, rng);
    for (const auto& batch_idx : batches) {
      std::vector<const Sample*> batch;
      std::vector<int> batch_labels;
      batch.reserve(batch_idx.size());
      batch_labels.reserve(batch_idx.size());
      for (std::size_t idx : batch_idx) {
        batch.push_back(&(*samples_)[idx]);
        batch_labels.push_back(labels_[idx]);
      }
      BatchGradients grads;
      const BatchLoss loss = batch_loss_and_gradients(
          model_, params, local_, batch, batch_labels,
          train_cfg_.fusion_alpha, train_cfg_.triplet_margin, &grads);
      loss_sum += loss.total();
      epoch_loss += loss.total();
      ++batch_count;
      ++epoch_batches;

      for (std::size_t i = 0; i < params.size(); ++i) {
        params.values()[i] -= lr * grads.global.values[i];
      }
      for (std::size_t i = 0; i < local_.size(); ++i) {
        local_.values()[i] -= lr * grads.local.values[i];
      }
    }
    update.epoch_losses.push_back(
        epoch_batches > 0 ? epoch_loss / epoch_batches : 0.0);
  }

  update.update_norm = l2_norm(subtract(params, broadcast));
  update.global_params = std::move(params);
  update.mean_loss = batch_count > 0 ? loss_sum / batch_count : 0.0;
  update.num_batches = batch_count;
  return update;
}

}  // namespace fedarks
