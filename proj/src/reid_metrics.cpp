#include "fedarks/reid_metrics.hpp"

#include <algorithm>
#include <cmath>

#include "fedarks/errors.hpp"

namespace fedarks {

namespace {

std::vector<std::vector<double>> normalize_all(
    const std::vector<std::vector<double>>& feats) {
  std::vector<std::vector<double>> out(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    double sq = 0.0;
    for (double v : feats[i]) {
      if (!std::isfinite(v)) {
        throw InvalidInputError("non-finite feature entry");
      }
      sq += v * v;
    }
    const double n = std::max(std::sqrt(sq), 1e-12);
    out[i].resize(feats[i].size());
    for (std::size_t k = 0; k < feats[i].size(); ++k) {
      out[i][k] = feats[i][k] / n;
    }
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>> distance_matrix(
    const std::vector<std::vector<double>>& a,
    const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) {
    throw StructuralError("empty feature set");
  }
  const std::size_t dim = a[0].size();
  for (const auto& f : a) {
    if (f.size() != dim) {
      throw StructuralError("inconsistent feature dims");
    }
  }
  for (const auto& f : b) {
    if (f.size() != dim) {
      throw StructuralError("inconsistent feature dims");
    }
  }
  const auto an = normalize_all(a);
  const auto bn = normalize_all(b);
  std::vector<std::vector<double>> dist(an.size(),
                                        std::vector<double>(bn.size(), 0.0));
  for (std::size_t i = 0; i < an.size(); ++i) {
    for (std::size_t j = 0; j < bn.size(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = an[i][k] - bn[j][k];
        d += diff * diff;
      }
      dist[i][j] = d;
    }
  }
  return dist;
}

double RankingResult::rank_at(int k) const {
  if (k < 1 || k > static_cast<int>(cmc.size())) {
    throw InvalidInputError("rank out of range");
  }
  return cmc[k - 1];
}

RankingResult evaluate_ranking(
    const std::vector<std::vector<double>>& query_feats,
    const std::vector<int>& query_ids, const std::vector<int>& query_cams,
    const std::vector<std::vector<double>>& gallery_feats,
    const std::vector<int>& gallery_ids,
    const std::vector<int>& gallery_cams, int max_rank) {
  const std::size_t nq = query_feats.size();
  const std::size_t ng = gallery_feats.size();
  if (nq == 0 || ng == 0) {
    throw StructuralError("empty query or gallery set");
  }
  if (query_ids.size() != nq || query_cams.size() != nq ||
      gallery_ids.size() != ng || gallery_cams.size() != ng) {
    throw StructuralError("feature/label size mismatch");
  }
  if (max_rank < 1) {
    throw InvalidInputError("max_rank must be positive");
  }

  const auto dist = distance_matrix(query_feats, gallery_feats);

  RankingResult res;
  res.cmc.assign(static_cast<std::size_t>(max_rank), 0.0);
  std::vector<int> cmc_hits(static_cast<std::size_t>(max_rank), 0);

  struct Entry {
    double dist;
    std::size_t idx;
  };
  std::vector<Entry> order;
  order.reserve(ng);

  for (std::size_t qi = 0; qi < nq; ++qi) {
    order.clear();
    for (std::size_t gi = 0; gi < ng; ++gi) {
      if (gallery_ids[gi] == query_ids[qi] &&
          gallery_cams[gi] == query_cams[qi]) {
        continue;  // same identity seen by the same camera
      }
      order.push_back({dist[qi][gi], gi});
    }
    std::sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
      if (a.dist != b.dist) {
        return a.dist < b.dist;
      }
      return a.idx < b.idx;
    });

    int matches = 0;
    double ap = 0.0;
    int first_match_rank = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (gallery_ids[order[r].idx] == query_ids[qi]) {
        ++matches;
        ap += static_cast<double>(matches) / static_cast<double>(r + 1);
        if (first_match_rank == 0) {
          first_match_rank = static_cast<int>(r + 1);
        }
      }
    }
    if (matches == 0) {
      ++res.dropped_queries;
      continue;
    }
    ++res.evaluated_queries;
    res.per_query_ap.push_back(ap / matches);
    if (first_match_rank <= max_rank) {
      ++cmc_hits[first_match_rank - 1];
    }
  }

  if (res.evaluated_queries == 0) {
    throw StructuralError("no query has a valid gallery match");
  }
  double ap_sum = 0.0;
  for (double ap : res.per_query_ap) {
    ap_sum += ap;
  }
  res.mean_ap = ap_sum / res.evaluated_queries;
  int cum = 0;
  for (int k = 0; k < max_rank; ++k) {
    cum += cmc_hits[k];
    res.cmc[k] = static_cast<double>(cum) / res.evaluated_queries;
  }
  return res;
}

SavgSummary savg(const std::vector<RankingResult>& reports) {
  if (reports.empty()) {
    throw StructuralError("no reports to average");
  }
  SavgSummary s;
  for (const RankingResult& r : reports) {
    s.mean_ap += r.mean_ap;
    s.rank1 += r.rank1();
  }
  s.mean_ap /= static_cast<double>(reports.size());
  s.rank1 /= static_cast<double>(reports.size());
  return s;
}

}  // namespace fedarks
