#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedarks/client_trainer.hpp"
#include "fedarks/param_vector.hpp"

namespace fedarks {

struct KsConfig {
  double beta = 5.0;      // sharpness of the consistency weighting
  double gamma = 0.7;     // smoothing factor, 1 = no memory
  double epsilon = 1e-8;  // update-norm gate

  void validate() const;
};

// ||g_t - g_{t-1}|| / ||client update||. The caller gates zero-norm
// updates before calling; update_norm must be positive.
double consistency_ratio(double global_delta_norm, double update_norm);

// gamma*raw + (1-gamma)*prev.
double smoothed_ratio(double raw, double prev, double gamma);

// Softmax of -beta*|1 - r| over the smoothed ratios. Sums to 1.
std::vector<double> consistency_weights(const std::vector<double>& smoothed,
                                        double beta);

// Same law with gated clients pinned to exactly 0 and the remaining
// mass renormalized. All clients gated yields uniform weights; the
// caller records that fallback.
std::vector<double> gated_weights(const std::vector<double>& smoothed,
                                  const std::vector<char>& gated,
                                  double beta);

// Sum_k weights[k] * update k, ascending client order. weights must be
// non-negative and sum to 1 within 1e-12.
ParamVector aggregate_updates(const std::vector<ClientUpdate>& updates,
                              const std::vector<double>& weights);

// Unweighted mean of the uploaded parameters.
ParamVector fedavg_aggregate(const std::vector<ClientUpdate>& updates);

struct AggregationRecord {
  int round = 0;                     // 1-based
  double global_delta_norm = 0.0;    // 0 on round 1
  std::vector<double> update_norms;  // per client, ascending id
  std::vector<char> gated;
  std::vector<double> raw_ratios;  // 0 where no ratio was computed
  std::vector<double> smoothed;    // ratio state after this round
  std::vector<double> weights;     // final mixing weights, sum 1
  bool round_one_uniform = false;
  bool all_gated_fallback = false;
};

enum class AggregatorKind { kFedAvg, kKs };

// Server-side combiner. kFedAvg always mixes uniformly; kKs weights
// clients by how closely their update magnitude tracks the global
// trajectory, with an exponential moving average per client and a gate
// that zeroes out vanishing updates. Clients keep their smoothed state
// across gated rounds.
class Aggregator {
 public:
  Aggregator(AggregatorKind kind, const KsConfig& cfg, int num_clients);

  // One aggregation step. broadcast is the global the clients trained
  // from this round; updates arrive in ascending client id order.
  ParamVector aggregate(const ParamVector& broadcast,
                        const std::vector<ClientUpdate>& updates);

  AggregatorKind kind() const { return kind_; }
  const KsConfig& config() const { return cfg_; }
  const std::vector<AggregationRecord>& history() const { return history_; }

 private:
  AggregatorKind kind_;
  KsConfig cfg_;
  int num_clients_;
  std::optional<ParamVector> prev_broadcast_;
  std::vector<double> smoothed_;  // per-client ratio state, starts at 1
  std::vector<AggregationRecord> history_;
};

// round, client_id, update_norm, R, R_smoothed, alpha, gated. One row
// per client per round. Floats printed with %.17g so reruns are
// byte-identical.
std::string weight_history_csv(const std::vector<AggregationRecord>& history);

}  // namespace fedarks
