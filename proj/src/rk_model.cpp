#include "fedarks/rk_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedarks/errors.hpp"
#include "fedarks/rng.hpp"

namespace fedarks {

namespace {

constexpr double kNormFloor = 1e-12;

struct ExtractorView {
  std::span<const double> w1, b1, w2, b2;
  int in = 0;
  int hidden = 0;
  int feat = 0;
};

ExtractorView extractor_view(const ParamVector& pv, const std::string& prefix) {
  ExtractorView v;
  const TensorSpec& w1 = pv.layout().spec_of(prefix + ".w1");
  const TensorSpec& w2 = pv.layout().spec_of(prefix + ".w2");
  v.hidden = static_cast<int>(w1.shape[0]);
  v.in = static_cast<int>(w1.shape[1]);
  v.feat = static_cast<int>(w2.shape[0]);
  v.w1 = pv.tensor(prefix + ".w1");
  v.b1 = pv.tensor(prefix + ".b1");
  v.w2 = pv.tensor(prefix + ".w2");
  v.b2 = pv.tensor(prefix + ".b2");
  return v;
}

// linear -> tanh -> linear. a1 receives the hidden activation for the
// backward pass; pass nullptr when only the feature is needed.
std::vector<double> extractor_forward(const ExtractorView& v,
                                      std::span<const double> x,
                                      std::vector<double>* a1_out) {
  if (static_cast<int>(x.size()) != v.in) {
    throw StructuralError("extractor input size mismatch");
  }
  std::vector<double> a1(v.hidden);
  for (int i = 0; i < v.hidden; ++i) {
    double z = v.b1[i];
    for (int j = 0; j < v.in; ++j) {
      z += v.w1[static_cast<std::size_t>(i) * v.in + j] * x[j];
    }
    a1[i] = std::tanh(z);
  }
  std::vector<double> f(v.feat);
  for (int i = 0; i < v.feat; ++i) {
    double z = v.b2[i];
    for (int j = 0; j < v.hidden; ++j) {
      z += v.w2[static_cast<std::size_t>(i) * v.hidden + j] * a1[j];
    }
    f[i] = z;
  }
  if (a1_out) {
    *a1_out = std::move(a1);
  }
  return f;
}

struct ExtractorGrads {
  std::span<double> w1, b1, w2, b2;
};

ExtractorGrads extractor_grads(ParamVector& g, const std::string& prefix) {
  return {g.tensor(prefix + ".w1"), g.tensor(prefix + ".b1"),
          g.tensor(prefix + ".w2"), g.tensor(prefix + ".b2")};
}

// Accumulates parameter gradients for one extractor given df = dL/df.
void extractor_backward(const ExtractorView& v, std::span<const double> x,
                        const std::vector<double>& a1,
                        const std::vector<double>& df, ExtractorGrads g) {
  std::vector<double> da1(v.hidden, 0.0);
  for (int i = 0; i < v.feat; ++i) {
    g.b2[i] += df[i];
    for (int j = 0; j < v.hidden; ++j) {
      g.w2[static_cast<std::size_t>(i) * v.hidden + j] += df[i] * a1[j];
      da1[j] += v.w2[static_cast<std::size_t>(i) * v.hidden + j] * df[i];
    }
  }
  for (int i = 0; i < v.hidden; ++i) {
    const double dz = da1[i] * (1.0 - a1[i] * a1[i]);
    g.b1[i] += dz;
    for (int j = 0; j < v.in; ++j) {
      g.w1[static_cast<std::size_t>(i) * v.in + j] += dz * x[j];
    }
  }
}

void check_finite_batch(const std::vector<const Sample*>& batch,
                        const std::vector<int>& labels, int num_classes) {
  if (batch.empty()) {
    throw BatchError("empty batch");
  }
  if (batch.size() != labels.size()) {
    throw BatchError("batch/label size mismatch");
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i]) {
      throw BatchError("null sample in batch");
    }
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw BatchError("label out of range");
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (input_height < 3 || input_height % 3 != 0 || input_width < 1) {
    throw ConfigError("input_height must be a positive multiple of 3");
  }
  if (hidden_dim < 1 || feature_dim < 1) {
    throw ConfigError("hidden_dim and feature_dim must be positive");
  }
}

ParamLayout extractor_layout(const std::string& prefix, int input_size,
                             int hidden_dim, int feature_dim) {
  const auto h = static_cast<std::size_t>(hidden_dim);
  const auto n = static_cast<std::size_t>(input_size);
  const auto d = static_cast<std::size_t>(feature_dim);
  return ParamLayout({{prefix + ".w1", {h, n}},
                      {prefix + ".b1", {h}},
                      {prefix + ".w2", {d, h}},
                      {prefix + ".b2", {d}}});
}

ParamLayout global_layout(const ModelConfig& cfg) {
  cfg.validate();
  return extractor_layout("global", cfg.input_height * cfg.input_width,
                          cfg.hidden_dim, cfg.feature_dim);
}

ParamLayout local_layout(const ModelConfig& cfg, int num_classes) {
  cfg.validate();
  if (num_classes < 1) {
    throw ConfigError("num_classes must be positive");
  }
  const int strip_size = (cfg.input_height / 3) * cfg.input_width;
  std::vector<TensorSpec> tensors;
  for (int p = 0; p < 3; ++p) {
    const ParamLayout part = extractor_layout(
        "part" + std::to_string(p), strip_size, cfg.hidden_dim,
        cfg.feature_dim);
    for (const TensorSpec& t : part.tensors()) {
      tensors.push_back(t);
    }
  }
  tensors.push_back({"head.w",
                     {static_cast<std::size_t>(num_classes),
                      static_cast<std::size_t>(cfg.feature_dim)}});
  tensors.push_back({"head.b", {static_cast<std::size_t>(num_classes)}});
  return ParamLayout(std::move(tensors));
}

namespace {

// Weights ~ N(0, 1/fan_in), biases zero. One stream in layout order so
// the whole vector is a pure function of (layout, seed).
ParamVector init_params(ParamLayout layout, std::uint64_t seed) {
  ParamVector pv = ParamVector::zeros(layout);
  Rng rng(seed);
  for (const TensorSpec& t : pv.layout().tensors()) {
    if (t.shape.size() != 2) {
      continue;  // bias, stays zero
    }
    const double sigma = 1.0 / std::sqrt(static_cast<double>(t.shape[1]));
    for (double& v : pv.tensor(t.name)) {
      v = rng.normal() * sigma;
    }
  }
  return pv;
}

}  // namespace

ParamVector init_global(const ModelConfig& cfg, std::uint64_t seed) {
  return init_params(global_layout(cfg), seed);
}

ParamVector init_local(const ModelConfig& cfg, int num_classes,
                       std::uint64_t seed) {
  ParamVector pv = init_params(local_layout(cfg, num_classes), seed);
  // Part branch fades in from zero output: at initialization the fused
  // embedding and its gradients coincide exactly with the global-only
  // path (the convex weight cancels in the normalization), so the parts
  // only start steering training once they have learned actual signal.
  for (int p = 0; p < 3; ++p) {
    for (double& v : pv.tensor("part" + std::to_string(p) + ".w2")) {
      v = 0.0;
    }
  }
  return pv;
}

RkModel::RkModel(const ModelConfig& cfg, int num_classes)
    : cfg_(cfg), num_classes_(num_classes) {
  cfg_.validate();
  if (num_classes < 1) {
    throw ConfigError("num_classes must be positive");
  }
}

std::vector<double> RkModel::forward_global(const ParamVector& global,
                                            const Sample& s) const {
  if (s.height != cfg_.input_height || s.width != cfg_.input_width) {
    throw StructuralError("sample dims do not match model config");
  }
  return extractor_forward(extractor_view(global, "global"), s.pixels,
                           nullptr);
}

std::vector<double> RkModel::forward_parts(const ParamVector& local,
                                           const Sample& s) const {
  if (s.height != cfg_.input_height || s.width != cfg_.input_width) {
    throw StructuralError("sample dims do not match model config");
  }
  const PartViews views = partition_parts(s);
  std::vector<double> mean(cfg_.feature_dim, 0.0);
  for (int p = 0; p < 3; ++p) {
    const std::vector<double> f = extractor_forward(
        extractor_view(local, "part" + std::to_string(p)), views.strips[p],
        nullptr);
    for (int i = 0; i < cfg_.feature_dim; ++i) {
      mean[i] += f[i];
    }
  }
  for (double& v : mean) {
    v /= 3.0;
  }
  return mean;
}

std::vector<double> RkModel::fuse(const std::vector<double>& global_feat,
                                  const std::vector<double>& part_feat,
                                  double alpha) {
  if (global_feat.size() != part_feat.size()) {
    throw StructuralError("fuse: feature size mismatch");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InvalidInputError("fusion alpha must lie in [0, 1]");
  }
  std::vector<double> out(global_feat.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = alpha * global_feat[i] + (1.0 - alpha) * part_feat[i];
  }
  return out;
}

std::vector<double> RkModel::forward_head(
    const ParamVector& local, const std::vector<double>& fused) const {
  std::span<const double> w = local.tensor("head.w");
  std::span<const double> b = local.tensor("head.b");
  if (fused.size() != static_cast<std::size_t>(cfg_.feature_dim)) {
    throw StructuralError("head input size mismatch");
  }
  std::vector<double> logits(num_classes_);
  for (int c = 0; c < num_classes_; ++c) {
    double z = b[c];
    for (int j = 0; j < cfg_.feature_dim; ++j) {
      z += w[static_cast<std::size_t>(c) * cfg_.feature_dim + j] * fused[j];
    }
    logits[c] = z;
  }
  return logits;
}

std::vector<double> l2_normalize(const std::vector<double>& x) {
  double sq = 0.0;
  for (double v : x) {
    sq += v * v;
  }
  const double n = std::max(std::sqrt(sq), kNormFloor);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] / n;
  }
  return out;
}

std::vector<double> batch_hard_hinges(
    const std::vector<std::vector<double>>& feats,
    const std::vector<int>& labels, double margin) {
  const std::size_t n = feats.size();
  if (n == 0 || labels.size() != n) {
    throw BatchError("hinge inputs empty or mismatched");
  }
  auto dist2 = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t k = 0; k < feats[a].size(); ++k) {
      const double d = feats[a][k] - feats[b][k];
      s += d * d;
    }
    return s;
  };
  std::vector<double> hinges(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double dap = -1.0;
    double dan = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        continue;
      }
      const double d = dist2(i, j);
      if (labels[j] == labels[i]) {
        if (d > dap) {
          dap = d;
        }
      } else if (dan < 0.0 || d < dan) {
        dan = d;
      }
    }
    if (dap < 0.0 || dan < 0.0) {
      throw BatchError("anchor lacks a positive or a negative");
    }
    hinges[i] = std::max(0.0, dap - dan + margin);
  }
  return hinges;
}

BatchLoss batch_loss_and_gradients(const RkModel& model,
                                   const ParamVector& global,
                                   const ParamVector& local,
                                   const std::vector<const Sample*>& batch,
                                   const std::vector<int>& labels,
                                   double fusion_alpha, double margin,
                                   BatchGradients* grads) {
  check_finite_batch(batch, labels, model.num_classes());
  if (!(fusion_alpha >= 0.0 && fusion_alpha <= 1.0)) {
    throw InvalidInputError("fusion alpha must lie in [0, 1]");
  }
  if (!(margin >= 0.0)) {
    throw InvalidInputError("triplet margin must be non-negative");
  }

  const ModelConfig& cfg = model.config();
  const int D = cfg.feature_dim;
  const std::size_t B = batch.size();

  const ExtractorView gview = extractor_view(global, "global");
  const ExtractorView pview[3] = {extractor_view(local, "part0"),
                                  extractor_view(local, "part1"),
                                  extractor_view(local, "part2")};
  std::span<const double> head_w = local.tensor("head.w");

  // Forward, keeping every activation needed for the backward pass.
  struct SampleCache {
    PartViews parts;
    std::vector<double> ga1;             // global hidden
    std::array<std::vector<double>, 3> pa1;  // part hidden
    std::vector<double> fused;           // pre-normalization
    std::vector<double> e;               // normalized embedding
    double norm = 0.0;
    std::vector<double> prob;            // softmax over logits
  };
  std::vector<SampleCache> cache(B);
  double ce_sum = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const Sample& s = *batch[i];
    if (s.height != cfg.input_height || s.width != cfg.input_width) {
      throw StructuralError("sample dims do not match model config");
    }
    SampleCache& c = cache[i];
    c.parts = partition_parts(s);
    const std::vector<double> g =
        extractor_forward(gview, s.pixels, &c.ga1);
    std::vector<double> pmean(D, 0.0);
    for (int p = 0; p < 3; ++p) {
      const std::vector<double> f =
          extractor_forward(pview[p], c.parts.strips[p], &c.pa1[p]);
      for (int k = 0; k < D; ++k) {
        pmean[k] += f[k];
      }
    }
    for (double& v : pmean) {
      v /= 3.0;
    }
    c.fused = RkModel::fuse(g, pmean, fusion_alpha);
    double sq = 0.0;
    for (double v : c.fused) {
      sq += v * v;
    }
    c.norm = std::max(std::sqrt(sq), kNormFloor);
    c.e.resize(D);
    for (int k = 0; k < D; ++k) {
      c.e[k] = c.fused[k] / c.norm;
    }

    // Stabilized softmax cross entropy on the normalized embedding.
    const std::vector<double> logits = model.forward_head(local, c.e);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double expsum = 0.0;
    c.prob.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
      c.prob[k] = std::exp(logits[k] - mx);
      expsum += c.prob[k];
    }
    for (double& p : c.prob) {
      p /= expsum;
    }
    ce_sum += (mx + std::log(expsum)) - logits[labels[i]];
  }

  // Batch-hard mining over normalized embeddings.
  std::vector<std::vector<double>> embs(B);
  for (std::size_t i = 0; i < B; ++i) {
    embs[i] = cache[i].e;
  }
  auto dist2 = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (int k = 0; k < D; ++k) {
      const double d = embs[a][k] - embs[b][k];
      s += d * d;
    }
    return s;
  };
  double tri_sum = 0.0;
  struct MinedPair {
    std::size_t pos = 0;
    std::size_t neg = 0;
    bool active = false;
  };
  std::vector<MinedPair> mined(B);
  for (std::size_t i = 0; i < B; ++i) {
    double dap = -1.0;
    double dan = -1.0;
    for (std::size_t j = 0; j < B; ++j) {
      if (j == i) {
        continue;
      }
      const double d = dist2(i, j);
      if (labels[j] == labels[i]) {
        if (d > dap) {
          dap = d;
          mined[i].pos = j;
        }
      } else if (dan < 0.0 || d < dan) {
        dan = d;
        mined[i].neg = j;
      }
    }
    if (dap < 0.0 || dan < 0.0) {
      throw BatchError("anchor lacks a positive or a negative");
    }
    const double hinge = dap - dan + margin;
    if (hinge > 0.0) {
      tri_sum += hinge;
      mined[i].active = true;
    }
  }

  BatchLoss loss;
  loss.triplet = tri_sum / static_cast<double>(B);
  loss.cross_entropy = ce_sum / static_cast<double>(B);
  if (!std::isfinite(loss.triplet) || !std::isfinite(loss.cross_entropy)) {
    throw NumericalError("non-finite batch loss");
  }
  if (!grads) {
    return loss;
  }

  ParamVector gglobal = ParamVector::zeros(global.layout());
  ParamVector glocal = ParamVector::zeros(local.layout());
  ExtractorGrads ggrads = extractor_grads(gglobal, "global");
  ExtractorGrads pgrads[3] = {extractor_grads(glocal, "part0"),
                              extractor_grads(glocal, "part1"),
                              extractor_grads(glocal, "part2")};
  std::span<double> ghead_w = glocal.tensor("head.w");
  std::span<double> ghead_b = glocal.tensor("head.b");

  const double inv_b = 1.0 / static_cast<double>(B);

  // dL/de per sample: triplet pulls across mined pairs, cross entropy
  // flows back through the head.
  std::vector<std::vector<double>> de(B, std::vector<double>(D, 0.0));
  for (std::size_t i = 0; i < B; ++i) {
    if (!mined[i].active) {
      continue;
    }
    const std::size_t jp = mined[i].pos;
    const std::size_t jn = mined[i].neg;
    for (int k = 0; k < D; ++k) {
      const double ap = embs[i][k] - embs[jp][k];
      const double an = embs[i][k] - embs[jn][k];
      de[i][k] += inv_b * 2.0 * (ap - an);  // d(dap - dan)/de_i
      de[jp][k] += inv_b * -2.0 * ap;
      de[jn][k] += inv_b * 2.0 * an;
    }
  }
  for (std::size_t i = 0; i < B; ++i) {
    const SampleCache& c = cache[i];
    for (int cl = 0; cl < model.num_classes(); ++cl) {
      const double dz =
          inv_b * (c.prob[cl] - (cl == labels[i] ? 1.0 : 0.0));
      ghead_b[cl] += dz;
      for (int k = 0; k < D; ++k) {
        ghead_w[static_cast<std::size_t>(cl) * D + k] += dz * c.e[k];
        de[i][k] += head_w[static_cast<std::size_t>(cl) * D + k] * dz;
      }
    }
  }

  for (std::size_t i = 0; i < B; ++i) {
    const SampleCache& c = cache[i];

    // Through e = u/n: du = (de - (de.e) e)/n. A floored norm means n is
    // constant, so the projection term drops.
    std::vector<double> du(D);
    if (c.norm > kNormFloor) {
      double dot = 0.0;
      for (int k = 0; k < D; ++k) {
        dot += de[i][k] * c.e[k];
      }
      for (int k = 0; k < D; ++k) {
        du[k] = (de[i][k] - dot * c.e[k]) / c.norm;
      }
    } else {
      for (int k = 0; k < D; ++k) {
        du[k] = de[i][k] / c.norm;
      }
    }

    std::vector<double> dg(D), dp(D);
    for (int k = 0; k < D; ++k) {
      dg[k] = fusion_alpha * du[k];
      dp[k] = (1.0 - fusion_alpha) * du[k] / 3.0;  // mean of 3 parts
    }
    extractor_backward(gview, batch[i]->pixels, c.ga1, dg, ggrads);
    for (int p = 0; p < 3; ++p) {
      extractor_backward(pview[p], c.parts.strips[p], c.pa1[p], dp,
                         pgrads[p]);
    }
  }

  grads->global = ParamDelta{gglobal.layout(), std::move(gglobal.values())};
  grads->local = ParamDelta{glocal.layout(), std::move(glocal.values())};
  return loss;
}

}  // namespace fedarks
