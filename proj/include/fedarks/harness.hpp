#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedarks/client_trainer.hpp"
#include "fedarks/ks_aggregator.hpp"
#include "fedarks/param_vector.hpp"
#include "fedarks/reid_metrics.hpp"
#include "fedarks/rk_model.hpp"
#include "fedarks/synthdata.hpp"

namespace fedarks {

struct ExperimentConfig {
  FederationConfig federation;
  TrainConfig train;
  ModelConfig model;  // input dims always follow the data grid
  KsConfig ks;
  int rounds = 40;
  int eval_interval = 5;
  AggregatorKind aggregator = AggregatorKind::kKs;
  bool rk_enabled = true;  // off forces fusion alpha to 1, parts inert
  int held_out_domain = 0;
  bool parallel_clients = true;
  std::filesystem::path out_dir;  // empty keeps everything in memory
  std::uint64_t seed = 7;

  void validate() const;
  ModelConfig effective_model() const;
  TrainConfig effective_train() const;
};

// Flat key=value config text. Unknown keys and unparsable values raise
// ConfigError naming the offending key.
void apply_config_kv(ExperimentConfig& cfg, const std::string& key,
                     const std::string& value);
void apply_config_text(ExperimentConfig& cfg, const std::string& text);
ExperimentConfig load_config_file(const std::filesystem::path& path);

// Canonical echo of every key, stable order, %.17g floats; feeding it
// back through apply_config_text reproduces the config exactly.
std::string config_to_text(const ExperimentConfig& cfg);

struct LossRecord {
  int round = 0;  // 1-based
  int client_id = 0;
  double mean_loss = 0.0;
};

struct EvalRecord {
  int round = 0;
  int task = 0;  // held-out domain id
  double mean_ap = 0.0;
  double rank1 = 0.0;
  double rank5 = 0.0;
  int dropped_queries = 0;
};

struct RunReport {
  std::string run_id;
  int held_out_domain = 0;
  bool degenerate_single_client = false;
  std::vector<LossRecord> losses;          // per round per client
  std::vector<double> round_mean_loss;     // index t-1, mean over clients
  std::vector<EvalRecord> evals;           // every eval_interval + final
  std::vector<AggregationRecord> weight_history;
  ParamVector final_global;
  RankingResult final_eval;
  double wall_seconds = 0.0;
  std::string metrics_csv;  // exact bytes of the emitted CSVs
  std::string weights_csv;
};

// Executes the protocol loop for cfg.rounds: broadcast, local training
// on every source-domain client, aggregation; evaluates the global
// branch on the held-out domain every eval_interval rounds and at the
// end. Writes metrics/weights CSVs, a final checkpoint and a run
// manifest under out_dir when it is set. Deterministic up to
// wall_seconds for a fixed config.
RunReport run_experiment(const ExperimentConfig& cfg);

struct SweepReport {
  std::vector<RunReport> tasks;  // one per held-out domain, ascending
  SavgSummary summary;
  std::string summary_csv;
};

// Leave-one-domain-out over every domain.
SweepReport run_sweep(const ExperimentConfig& cfg);

struct AblationCell {
  std::string name;  // base, rk, ks, rk_ks
  bool rk = false;
  bool ks = false;
  std::uint64_t cell_seed = 0;
  SweepReport sweep;
};

struct AblationReport {
  std::vector<AblationCell> cells;  // fixed order: base, rk, ks, rk_ks
  std::string table_csv;
  bool ordering_ok = false;   // combined >= singles >= base - 2 points
  std::string ordering_note;  // human-readable verdict
};

// 2x2 mechanism grid over one shared federation; per-cell seeds are
// derived from cfg.seed and the cell name. Each cell is a full sweep.
AblationReport run_ablation(const ExperimentConfig& cfg);

// 16-hex digest used for run ids and cell seed derivation.
std::uint64_t hash_text(const std::string& text);

}  // namespace fedarks
