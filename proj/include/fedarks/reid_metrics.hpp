#pragma once

#include <vector>

namespace fedarks {

// Pairwise squared Euclidean distances between two feature sets, both
// L2-normalized first. rows index a, columns index b.
std::vector<std::vector<double>> distance_matrix(
    const std::vector<std::vector<double>>& a,
    const std::vector<std::vector<double>>& b);

struct RankingResult {
  double mean_ap = 0.0;             // mean of per_query_ap
  std::vector<double> per_query_ap; // evaluated queries, in query order
  std::vector<double> cmc;          // cmc[k-1] = matched within rank k
  int evaluated_queries = 0;
  int dropped_queries = 0;  // queries with no valid same-id gallery entry

  double rank1() const { return cmc.empty() ? 0.0 : cmc[0]; }
  double rank_at(int k) const;
};

// Retrieval evaluation under the usual probe/gallery protocol: gallery
// entries sharing both identity and camera with the probe are excluded
// from its ranking, remaining entries are ranked by ascending distance
// with ties broken by ascending gallery index. AP per query is the
// interpolation-free mean of m / rank(m) over its true matches; queries
// without any valid match are dropped and counted.
RankingResult evaluate_ranking(
    const std::vector<std::vector<double>>& query_feats,
    const std::vector<int>& query_ids, const std::vector<int>& query_cams,
    const std::vector<std::vector<double>>& gallery_feats,
    const std::vector<int>& gallery_ids,
    const std::vector<int>& gallery_cams, int max_rank = 20);

struct SavgSummary {
  double mean_ap = 0.0;
  double rank1 = 0.0;
};

// Arithmetic means across transfer tasks.
SavgSummary savg(const std::vector<RankingResult>& reports);

}  // namespace fedarks
