#include "fedarks/synthdata.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <string>

#include "json.hpp"

#include "fedarks/errors.hpp"
#include "fedarks/rng.hpp"

namespace fedarks {

namespace {

// Seed stream tags. Distinct constants keep the latent, style and
// per-sample streams independent for one root seed.
constexpr std::uint64_t kTagLatent = 0x6c6174656e740001ull;
constexpr std::uint64_t kTagStyle = 0x7374796c65000002ull;
constexpr std::uint64_t kTagSample = 0x73616d706c650003ull;

struct StyleTransform {
  double scale = 1.0;   // multiplicative, per (domain, part)
  double offset = 0.0;  // additive, per (domain, part)
};

}  // namespace

void FederationConfig::validate() const {
  if (num_domains < 2) {
    throw ConfigError("need at least 2 domains (1 source + 1 held out)");
  }
  if (identities_per_domain < 2) {
    throw ConfigError("need at least 2 identities per domain");
  }
  if (cameras_per_domain < 2) {
    throw ConfigError("need at least 2 cameras per domain");
  }
  if (samples_per_identity < 2 * cameras_per_domain) {
    throw ConfigError(
        "samples_per_identity must be >= 2*cameras_per_domain so every "
        "(identity, camera) pair has a query and a gallery sample");
  }
  if (image_height < 3 || image_height % 3 != 0) {
    throw ConfigError("image_height must be a positive multiple of 3");
  }
  if (image_width < 1) {
    throw ConfigError("image_width must be positive");
  }
  if (feature_noise_sigma < 0.0 || domain_shift_strength < 0.0) {
    throw ConfigError("noise and shift strengths must be non-negative");
  }
  if (part_occlusion_prob < 0.0 || part_occlusion_prob > 1.0) {
    throw ConfigError("part_occlusion_prob must lie in [0, 1]");
  }
}

Federation generate_federation(const FederationConfig& cfg) {
  cfg.validate();

  const int h = cfg.image_height;
  const int w = cfg.image_width;
  const int strip = h / 3;
  const int pixels = h * w;

  // Shared identity renders, keyed by local identity index. Domains with
  // the same local index draw the same base image, so at zero shift and
  // zero noise the domains are pixel-identical.
  std::vector<std::vector<double>> base(cfg.identities_per_domain);
  for (int i = 0; i < cfg.identities_per_domain; ++i) {
    base[i].resize(pixels);
    for (int part = 0; part < 3; ++part) {
      Rng rng(derive_seed(cfg.seed, kTagLatent, static_cast<std::uint64_t>(i),
                          static_cast<std::uint64_t>(part)));
      for (int r = part * strip; r < (part + 1) * strip; ++r) {
        for (int c = 0; c < w; ++c) {
          base[i][r * w + c] = rng.normal();
        }
      }
    }
  }

  // Per (domain, part) style transforms, scaled by the shift strength.
  // At strength 0 this collapses to the identity map.
  std::vector<std::array<StyleTransform, 3>> style(cfg.num_domains);
  for (int d = 0; d < cfg.num_domains; ++d) {
    Rng rng(derive_seed(cfg.seed, kTagStyle, static_cast<std::uint64_t>(d)));
    for (int part = 0; part < 3; ++part) {
      const double s = rng.uniform(-0.5, 0.5);
      const double o = rng.uniform(-1.0, 1.0);
      style[d][part].scale = 1.0 + cfg.domain_shift_strength * s;
      style[d][part].offset = cfg.domain_shift_strength * o;
    }
  }

  Federation fed;
  fed.config = cfg;
  fed.domains.resize(cfg.num_domains);

  for (int d = 0; d < cfg.num_domains; ++d) {
    DomainData& dom = fed.domains[d];
    dom.domain_id = d;

    // Each domain occludes one characteristic part strip.
    const int occluded_part = d % 3;

    Rng rng(derive_seed(cfg.seed, kTagSample, static_cast<std::uint64_t>(d)));
    for (int i = 0; i < cfg.identities_per_domain; ++i) {
      for (int s = 0; s < cfg.samples_per_identity; ++s) {
        Sample sample;
        sample.height = h;
        sample.width = w;
        sample.identity = d * cfg.identities_per_domain + i;
        sample.domain = d;
        sample.camera = s % cfg.cameras_per_domain;
        sample.pixels.resize(pixels);
        for (int r = 0; r < h; ++r) {
          const StyleTransform& st = style[d][r / strip];
          for (int c = 0; c < w; ++c) {
            const int p = r * w + c;
            sample.pixels[p] = st.scale * base[i][p] + st.offset +
                               cfg.feature_noise_sigma * rng.normal();
          }
        }
        if (rng.bernoulli(cfg.part_occlusion_prob)) {
          const int lo = occluded_part * strip * w;
          const int hi = lo + strip * w;
          for (int p = lo; p < hi; ++p) {
            sample.pixels[p] = 0.0;
          }
        }
        dom.train.push_back(std::move(sample));
      }
    }

    // First sample per (identity, camera) is the probe; the rest form
    // the gallery. Samples arrive camera-round-robin, so "first" is the
    // occurrence with the lowest sample index.
    std::vector<char> seen(
        static_cast<std::size_t>(cfg.identities_per_domain) *
            static_cast<std::size_t>(cfg.cameras_per_domain),
        0);
    for (int i = 0; i < cfg.identities_per_domain; ++i) {
      for (int s = 0; s < cfg.samples_per_identity; ++s) {
        const Sample& sample =
            dom.train[static_cast<std::size_t>(i) * cfg.samples_per_identity +
                      s];
        const std::size_t key =
            static_cast<std::size_t>(i) * cfg.cameras_per_domain +
            sample.camera;
        if (!seen[key]) {
          seen[key] = 1;
          dom.query.push_back(sample);
        } else {
          dom.gallery.push_back(sample);
        }
      }
    }
  }

  return fed;
}

PartViews partition_parts(const Sample& s) {
  if (s.height < 3 || s.height % 3 != 0 || s.width < 1) {
    throw StructuralError("sample height must be a positive multiple of 3");
  }
  if (s.pixels.size() !=
      static_cast<std::size_t>(s.height) * static_cast<std::size_t>(s.width)) {
    throw StructuralError("pixel buffer does not match height*width");
  }
  PartViews views;
  views.strip_height = s.height / 3;
  views.width = s.width;
  const std::size_t strip_pixels =
      static_cast<std::size_t>(views.strip_height) * s.width;
  for (int part = 0; part < 3; ++part) {
    views.strips[part].assign(s.pixels.begin() + part * strip_pixels,
                              s.pixels.begin() + (part + 1) * strip_pixels);
  }
  return views;
}

FederationSplit federation_split(const Federation& fed, int held_out) {
  if (fed.domains.empty()) {
    throw StructuralError("federation has no domains");
  }
  if (held_out < 0 || held_out >= static_cast<int>(fed.domains.size())) {
    throw InvalidInputError("held_out domain index out of range");
  }
  FederationSplit split;
  split.held_out_domain = held_out;
  split.target = &fed.domains[held_out];
  int client_id = 0;
  for (const DomainData& dom : fed.domains) {
    if (dom.domain_id == held_out) {
      continue;
    }
    ClientShard shard;
    shard.client_id = client_id++;
    shard.domain_id = dom.domain_id;
    shard.samples = &dom.train;
    split.clients.push_back(shard);
  }
  return split;
}

namespace {

void append_f64_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw Error("cannot open for writing: " + path.string());
  }
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) {
    throw Error("write failed: " + path.string());
  }
}

}  // namespace

void export_federation(const Federation& fed,
                       const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["num_domains"] = fed.config.num_domains;
  manifest["identities_per_domain"] = fed.config.identities_per_domain;
  manifest["samples_per_identity"] = fed.config.samples_per_identity;
  manifest["cameras_per_domain"] = fed.config.cameras_per_domain;
  manifest["image_height"] = fed.config.image_height;
  manifest["image_width"] = fed.config.image_width;
  manifest["seed"] = fed.config.seed;
  nlohmann::json domains = nlohmann::json::array();

  for (const DomainData& dom : fed.domains) {
    nlohmann::json dj;
    dj["domain_id"] = dom.domain_id;
    nlohmann::json samples = nlohmann::json::array();
    for (std::size_t k = 0; k < dom.train.size(); ++k) {
      const Sample& s = dom.train[k];
      char name[64];
      std::snprintf(name, sizeof(name), "d%02d_s%04zu.bin", dom.domain_id, k);
      std::string blob;
      blob.reserve(s.pixels.size() * 8);
      for (double v : s.pixels) {
        append_f64_le(blob, v);
      }
      write_file(out_dir / name, blob);

      nlohmann::json sj;
      sj["file"] = name;
      sj["identity"] = s.identity;
      sj["camera"] = s.camera;
      samples.push_back(sj);
    }
    dj["samples"] = samples;
    domains.push_back(dj);
  }
  manifest["domains"] = domains;

  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace fedarks
