#include "fedarks/ks_aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "fedarks/errors.hpp"

namespace fedarks {

void KsConfig::validate() const {
  if (!std::isfinite(beta) || beta < 0.0) {
    throw ConfigError("beta must be finite and non-negative");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw ConfigError("gamma must lie in [0, 1]");
  }
  if (!std::isfinite(epsilon) || epsilon <= 0.0) {
    throw ConfigError("epsilon must be finite and positive");
  }
}

double consistency_ratio(double global_delta_norm, double update_norm) {
  if (!std::isfinite(global_delta_norm) || global_delta_norm < 0.0) {
    throw InvalidInputError("global delta norm must be finite, >= 0");
  }
  if (!std::isfinite(update_norm) || update_norm <= 0.0) {
    throw InvalidInputError(
        "update norm must be finite and positive; gate zero updates "
        "before computing ratios");
  }
  return global_delta_norm / update_norm;
}

double smoothed_ratio(double raw, double prev, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw InvalidInputError("gamma must lie in [0, 1]");
  }
  if (!std::isfinite(raw) || !std::isfinite(prev)) {
    throw InvalidInputError("ratios must be finite");
  }
  return gamma * raw + (1.0 - gamma) * prev;
}

std::vector<double> consistency_weights(const std::vector<double>& smoothed,
                                        double beta) {
  return gated_weights(smoothed, std::vector<char>(smoothed.size(), 0),
                       beta);
}

std::vector<double> gated_weights(const std::vector<double>& smoothed,
                                  const std::vector<char>& gated,
                                  double beta) {
  const std::size_t n = smoothed.size();
  if (n == 0 || gated.size() != n) {
    throw StructuralError("weight inputs empty or mismatched");
  }
  if (!std::isfinite(beta) || beta < 0.0) {
    throw InvalidInputError("beta must be finite and non-negative");
  }

  std::size_t survivors = 0;
  for (char c : gated) {
    if (!c) {
      ++survivors;
    }
  }
  if (survivors == 0) {
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
  }

  // Max-shifted exponentials: the best survivor contributes exactly 1,
  // so the denominator cannot underflow. With beta == 0 every exponent
  // is zero and this reduces to exactly 1/survivors per survivor.
  std::vector<double> ex(n, 0.0);
  double xmax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (gated[i]) {
      continue;
    }
    if (!std::isfinite(smoothed[i])) {
      throw InvalidInputError("non-finite smoothed ratio");
    }
    ex[i] = -beta * std::abs(1.0 - smoothed[i]);
    xmax = std::max(xmax, ex[i]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gated[i]) {
      ex[i] = 0.0;
      continue;
    }
    ex[i] = std::exp(ex[i] - xmax);
    sum += ex[i];
  }
  std::vector<double> weights(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!gated[i]) {
      weights[i] = ex[i] / sum;
    }
  }
  return weights;
}

ParamVector aggregate_updates(const std::vector<ClientUpdate>& updates,
                              const std::vector<double>& weights) {
  if (updates.empty()) {
    throw StructuralError("no updates to aggregate");
  }
  if (weights.size() != updates.size()) {
    throw ProtocolError("weight count does not match update count");
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw ProtocolError("negative or non-finite mixing weight");
    }
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-12) {
    throw ProtocolError("mixing weights do not sum to 1");
  }
  std::vector<const ParamVector*> operands;
  operands.reserve(updates.size());
  for (const ClientUpdate& u : updates) {
    operands.push_back(&u.global_params);
  }
  return weighted_sum(operands, weights);
}

ParamVector fedavg_aggregate(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) {
    throw StructuralError("no updates to aggregate");
  }
  const std::vector<double> uniform(
      updates.size(), 1.0 / static_cast<double>(updates.size()));
  return aggregate_updates(updates, uniform);
}

Aggregator::Aggregator(AggregatorKind kind, const KsConfig& cfg,
                       int num_clients)
    : kind_(kind), cfg_(cfg), num_clients_(num_clients) {
  cfg_.validate();
  if (num_clients < 1) {
    throw ConfigError("need at least one client");
  }
  smoothed_.assign(static_cast<std::size_t>(num_clients), 1.0);
}

ParamVector Aggregator::aggregate(const ParamVector& broadcast,
                                  const std::vector<ClientUpdate>& updates) {
  const std::size_t k = static_cast<std::size_t>(num_clients_);
  if (updates.size() != k) {
    throw ProtocolError("update count does not match client count");
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (updates[i].client_id != static_cast<int>(i)) {
      throw ProtocolError("updates must arrive in ascending client id");
    }
    if (!(updates[i].global_params.layout() == broadcast.layout())) {
      throw ProtocolError("update layout does not match the broadcast");
    }
    if (!std::isfinite(updates[i].update_norm) ||
        updates[i].update_norm < 0.0) {
      throw ProtocolError("update norm must be finite and non-negative");
    }
  }

  AggregationRecord rec;
  rec.round = static_cast<int>(history_.size()) + 1;
  rec.update_norms.resize(k);
  rec.gated.assign(k, 0);
  rec.raw_ratios.assign(k, 0.0);
  rec.smoothed.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    rec.update_norms[i] = updates[i].update_norm;
  }

  if (kind_ == AggregatorKind::kFedAvg) {
    rec.weights.assign(k, 1.0 / static_cast<double>(k));
  } else if (!prev_broadcast_) {
    // No trajectory yet, nothing to measure against.
    rec.weights.assign(k, 1.0 / static_cast<double>(k));
    rec.round_one_uniform = true;
  } else {
    rec.global_delta_norm = l2_norm(subtract(broadcast, *prev_broadcast_));

    // Gate first: a vanishing update both carries no signal and would
    // blow up the ratio division. Gated clients keep their smoothed
    // state (which starts at 1 for every client).
    bool any_survivor = false;
    for (std::size_t i = 0; i < k; ++i) {
      if (updates[i].update_norm < cfg_.epsilon) {
        rec.gated[i] = 1;
        continue;
      }
      any_survivor = true;
      const double raw =
          consistency_ratio(rec.global_delta_norm, updates[i].update_norm);
      rec.raw_ratios[i] = raw;
      smoothed_[i] = smoothed_ratio(raw, smoothed_[i], cfg_.gamma);
    }
    rec.weights = gated_weights(smoothed_, rec.gated, cfg_.beta);
    rec.all_gated_fallback = !any_survivor;
  }

  rec.smoothed = smoothed_;

  ParamVector next = aggregate_updates(updates, rec.weights);

  prev_broadcast_ = broadcast;
  history_.push_back(std::move(rec));
  return next;
}

std::string weight_history_csv(
    const std::vector<AggregationRecord>& history) {
  std::string out = "round,client_id,update_norm,R,R_smoothed,alpha,gated\n";
  char buf[256];
  for (const AggregationRecord& rec : history) {
    for (std::size_t i = 0; i < rec.weights.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%d,%zu,%.17g,%.17g,%.17g,%.17g,%d\n",
                    rec.round, i, rec.update_norms[i], rec.raw_ratios[i],
                    rec.smoothed[i], rec.weights[i],
                    rec.gated[i] ? 1 : 0);
      out += buf;
    }
  }
  return out;
}

}  // namespace fedarks
