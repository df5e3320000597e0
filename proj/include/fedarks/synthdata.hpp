#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace fedarks {

struct FederationConfig {
  int num_domains = 4;
  int identities_per_domain = 12;
  int samples_per_identity = 6;
  int cameras_per_domain = 2;
  int image_height = 24;  // must be divisible by 3
  int image_width = 12;
  double feature_noise_sigma = 2.0;
  double domain_shift_strength = 1.0;
  double part_occlusion_prob = 0.5;
  std::uint64_t seed = 7;

  void validate() const;  // ConfigError on violation
};

// Synthetic "pedestrian image": a real grid with identity/domain/camera
// labels. Row-major pixels, three equal-height part strips stacked
// top to bottom.
struct Sample {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
  int identity = 0;
  int domain = 0;
  int camera = 0;
};

// Equal-height horizontal strips: head, torso, lower. Concatenating the
// strips row-wise reconstructs the original pixels exactly.
struct PartViews {
  int strip_height = 0;
  int width = 0;
  std::array<std::vector<double>, 3> strips;
};

struct DomainData {
  int domain_id = 0;
  std::vector<Sample> train;    // all samples of the domain
  std::vector<Sample> query;    // 1 sample per (identity, camera)
  std::vector<Sample> gallery;  // the remaining samples
};

struct Federation {
  FederationConfig config;
  std::vector<DomainData> domains;
};

// Deterministic in cfg (seed included). Identity labels are disjoint
// across domains; the underlying identity render is shared per local
// index, then corrupted by per-domain style, noise and part occlusion.
Federation generate_federation(const FederationConfig& cfg);

PartViews partition_parts(const Sample& s);

struct ClientShard {
  int client_id = 0;
  int domain_id = 0;
  const std::vector<Sample>* samples = nullptr;
};

struct FederationSplit {
  int held_out_domain = 0;
  std::vector<ClientShard> clients;  // one per source domain, ascending
  const DomainData* target = nullptr;
};

// Leave-one-domain-out: every domain except held_out becomes a client;
// the held-out domain's query/gallery are reserved for evaluation.
FederationSplit federation_split(const Federation& fed, int held_out);

// Writes one flat binary file per sample plus a JSON manifest.
void export_federation(const Federation& fed,
                       const std::filesystem::path& out_dir);

}  // namespace fedarks
