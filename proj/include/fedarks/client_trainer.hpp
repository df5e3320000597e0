#pragma once

#include <cstdint>
#include <vector>

#include "fedarks/param_vector.hpp"
#include "fedarks/rk_model.hpp"
#include "fedarks/rng.hpp"
#include "fedarks/synthdata.hpp"

namespace fedarks {

struct TrainConfig {
  int local_epochs = 2;      // SGD passes per round
  int batch_p = 4;           // identities per batch
  int batch_s = 2;           // samples per identity
  double learning_rate = 0.15;
  double fusion_alpha = 0.5;
  double triplet_margin = 0.5;

  int batch_size() const { return batch_p * batch_s; }
  void validate() const;
};

// Identity-balanced batches: each batch holds batch_p distinct classes
// with batch_s samples apiece, every index used at most once per call.
// Classes drop out once they cannot fill another full group; batching
// stops when fewer than batch_p classes remain eligible.
std::vector<std::vector<std::size_t>> make_pk_batches(
    const std::vector<int>& labels, int batch_p, int batch_s, Rng& rng);

struct ClientUpdate {
  int client_id = 0;
  ParamVector global_params;  // broadcast advanced by this round's SGD
  double update_norm = 0.0;   // ||global_params - broadcast||
  double mean_loss = 0.0;     // mean total batch loss this round
  std::vector<double> epoch_losses;  // per-epoch mean total loss
  int num_batches = 0;
};

// One federation participant. Owns the private half of the model (part
// extractors + classification head); only the global branch ever leaves
// this object, as the returned update. A shard with no samples yields a
// permanently idle client that echoes the broadcast with a zero update
// norm, leaving it to the aggregation gate.
class ClientTrainer {
 public:
  ClientTrainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                const ClientShard& shard, std::uint64_t init_seed);

  int client_id() const { return client_id_; }
  int domain_id() const { return domain_id_; }
  int num_classes() const { return static_cast<int>(classes_.size()); }
  bool idle() const { return labels_.empty(); }
  const ParamVector& local_params() const { return local_; }

  // E local epochs of plain SGD from the broadcast point. Pure in
  // (state, broadcast, stream_seed); the broadcast is not modified.
  ClientUpdate run_round(const ParamVector& broadcast,
                         std::uint64_t stream_seed);

 private:
  TrainConfig train_cfg_;
  int client_id_;
  int domain_id_;
  const std::vector<Sample>* samples_;
  std::vector<int> classes_;  // sorted global identities on this shard
  std::vector<int> labels_;   // per-sample local class index
  RkModel model_;
  ParamVector local_;
};

}  // namespace fedarks
