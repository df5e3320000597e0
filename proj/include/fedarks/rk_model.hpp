#pragma once

#include <cstdint>
#include <vector>

#include "fedarks/param_vector.hpp"
#include "fedarks/synthdata.hpp"

namespace fedarks {

struct ModelConfig {
  int input_height = 24;  // full image; parts see input_height/3 rows
  int input_width = 12;
  int hidden_dim = 32;
  int feature_dim = 8;

  void validate() const;
};

// Two-layer feature extractor: linear -> tanh -> linear. One instance
// embeds the full image (global branch), three more embed the part
// strips. Tensor names: <prefix>.w1 [hidden x in], <prefix>.b1 [hidden],
// <prefix>.w2 [feature x hidden], <prefix>.b2 [feature].
ParamLayout extractor_layout(const std::string& prefix, int input_size,
                             int hidden_dim, int feature_dim);

// Layout of everything the server aggregates: exactly the global branch.
ParamLayout global_layout(const ModelConfig& cfg);

// Part extractors (head/torso/lower) plus the classification head stay
// on the client. Head dims depend on the client's class count.
ParamLayout local_layout(const ModelConfig& cfg, int num_classes);

ParamVector init_global(const ModelConfig& cfg, std::uint64_t seed);
ParamVector init_local(const ModelConfig& cfg, int num_classes,
                       std::uint64_t seed);

struct ForwardCache;  // opaque to callers; defined in the .cpp

class RkModel {
 public:
  RkModel(const ModelConfig& cfg, int num_classes);

  const ModelConfig& config() const { return cfg_; }
  int num_classes() const { return num_classes_; }

  // Global-branch feature of a full image. Pure in (params, pixels).
  std::vector<double> forward_global(const ParamVector& global,
                                     const Sample& s) const;

  // Mean of the three per-strip part features.
  std::vector<double> forward_parts(const ParamVector& local,
                                    const Sample& s) const;

  // Convex fusion: alpha*global_feat + (1-alpha)*part_feat, elementwise.
  static std::vector<double> fuse(const std::vector<double>& global_feat,
                                  const std::vector<double>& part_feat,
                                  double alpha);

  // Head logits from a fused feature.
  std::vector<double> forward_head(const ParamVector& local,
                                   const std::vector<double>& fused) const;

 private:
  ModelConfig cfg_;
  int num_classes_;
};

struct BatchLoss {
  double triplet = 0.0;
  double cross_entropy = 0.0;
  double total() const { return triplet + cross_entropy; }
};

struct BatchGradients {
  ParamDelta global;  // layout == global_layout
  ParamDelta local;   // layout == local_layout
};

// Joint loss and analytic gradients over one batch. Labels are local
// class indices in [0, num_classes). Triplet operates on L2-normalized
// fused features with batch-hard mining; cross entropy on head logits.
// fusion_alpha and margin are forwarded from the training config.
BatchLoss batch_loss_and_gradients(const RkModel& model,
                                   const ParamVector& global,
                                   const ParamVector& local,
                                   const std::vector<const Sample*>& batch,
                                   const std::vector<int>& labels,
                                   double fusion_alpha, double margin,
                                   BatchGradients* grads);

// Hinge terms max(0, d_ap - d_an + margin) per anchor, on already
// normalized features (squared Euclidean). Exposed for direct testing.
std::vector<double> batch_hard_hinges(
    const std::vector<std::vector<double>>& feats,
    const std::vector<int>& labels, double margin);

// x / max(||x||, floor). floor trap keeps the gradient finite.
std::vector<double> l2_normalize(const std::vector<double>& x);

}  // namespace fedarks
