// Synthetic two-culture corpus standing in for encoder embeddings of real
// face datasets.
//
// Universal expression directions u_e ~ N(0, I) are shared by all groups.
// Per group g: 7 expression centers
//   c_e = s_class * (sqrt(shared) * u_e + sqrt(1 - shared) * N(0, I)),
// per-identity offsets o_i ~ N(0, s_id^2 I), and clean samples
//   e0 = f + c_e + o_i + N(0, s_noise^2 I)
// where f ~ N(0, s_template^2 I) is one face template common to all groups.
// Degraded sample at level s, with keep = (1 - collapse_rate)^s:
//   e(s) = keep * e0 + (1 - keep) * mu_g + N(0, (noise_rate * s)^2 I)
// where mu_g is the mean of all clean samples of the group.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fersim/corpus.hpp"
#include "fersim/errors.hpp"
#include "fersim/rng.hpp"

namespace fersim {

struct SyntheticGroupSpec {
  std::string name;
  double class_spread = 0.7;
  double identity_scale = 1.0;
  double noise = 0.5;
  double collapse_rate = 0.25;
  double noise_rate = 0.10;
};

struct SyntheticCorpusSpec {
  std::size_t dim = 64;
  int identities_per_group = 10;
  int instances = 8;
  /// Fraction of center variance shared across groups; 0 gives independent
  /// per-group centers.
  double shared_fraction = 0.8;
  /// Scale of one face template vector added to every sample of every group.
  double template_scale = 2.0;
  std::vector<int> sigma_levels{0, 1, 2, 3, 4};
  std::vector<SyntheticGroupSpec> groups{
      {"western", 0.7, 1.0, 0.5, 0.25, 0.10},
      {"asian", 0.5, 1.0, 0.5, 0.35, 0.12},
  };
  std::uint64_t seed = 0;

  void validate() const {
    if (dim == 0) throw ConfigError("synthetic dim must be positive");
    if (identities_per_group < 1 || identities_per_group > 65536) {
      throw ConfigError("synthetic identities_per_group must be in [1, 65536]");
    }
    if (instances < 1 || instances > 256) throw ConfigError("synthetic instances must be in [1, 256]");
    if (!(shared_fraction >= 0 && shared_fraction <= 1)) throw ConfigError("shared_fraction must lie in [0, 1]");
    if (!(template_scale >= 0)) throw ConfigError("template_scale must be non-negative");
    if (groups.empty() || groups.size() > 255) throw ConfigError("synthetic corpus needs 1..255 groups");
    if (sigma_levels.empty()) throw ConfigError("synthetic sigma_levels must be non-empty");
    for (std::size_t i = 0; i < sigma_levels.size(); ++i) {
      if (sigma_levels[i] < 0 || sigma_levels[i] > 255 || (i > 0 && sigma_levels[i] <= sigma_levels[i - 1])) {
        throw ConfigError("synthetic sigma_levels must be strictly increasing within [0, 255]");
      }
    }
    for (const auto& g : groups) {
      if (g.class_spread < 0 || g.identity_scale < 0 || g.noise < 0 || g.noise_rate < 0) {
        throw ConfigError("synthetic scales must be non-negative (group '" + g.name + "')");
      }
      if (!(g.collapse_rate >= 0 && g.collapse_rate <= 1)) {
        throw ConfigError("collapse_rate must lie in [0, 1] (group '" + g.name + "')");
      }
    }
  }
};

inline void to_json(nlohmann::json& j, const SyntheticGroupSpec& g) {
  j = {{"name", g.name},
       {"class_spread", g.class_spread},
       {"identity_scale", g.identity_scale},
       {"noise", g.noise},
       {"collapse_rate", g.collapse_rate},
       {"noise_rate", g.noise_rate}};
}

inline void to_json(nlohmann::json& j, const SyntheticCorpusSpec& s) {
  j = {{"dim", s.dim},
       {"identities_per_group", s.identities_per_group},
       {"instances", s.instances},
       {"shared_fraction", s.shared_fraction},
       {"template_scale", s.template_scale},
       {"sigma_levels", s.sigma_levels},
       {"groups", s.groups},
       {"seed", s.seed}};
}

/// Reads a spec object; missing keys keep their defaults, unknown keys are
/// rejected. Returns whether "seed" was present.
inline bool read_synthetic_spec(const nlohmann::json& j, SyntheticCorpusSpec& spec) {
  if (!j.is_object()) throw ConfigError("synthetic spec must be an object");
  bool has_seed = false;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "dim") {
        spec.dim = value.get<std::size_t>();
      } else if (key == "identities_per_group") {
        spec.identities_per_group = value.get<int>();
      } else if (key == "instances") {
        spec.instances = value.get<int>();
      } else if (key == "shared_fraction") {
        spec.shared_fraction = value.get<double>();
      } else if (key == "template_scale") {
        spec.template_scale = value.get<double>();
      } else if (key == "sigma_levels") {
        spec.sigma_levels = value.get<std::vector<int>>();
      } else if (key == "seed") {
        spec.seed = value.get<std::uint64_t>();
        has_seed = true;
      } else if (key == "groups") {
        spec.groups.clear();
        for (const auto& gj : value) {
          SyntheticGroupSpec g;
          for (const auto& [gk, gv] : gj.items()) {
            if (gk == "name") g.name = gv.get<std::string>();
            else if (gk == "class_spread") g.class_spread = gv.get<double>();
            else if (gk == "identity_scale") g.identity_scale = gv.get<double>();
            else if (gk == "noise") g.noise = gv.get<double>();
            else if (gk == "collapse_rate") g.collapse_rate = gv.get<double>();
            else if (gk == "noise_rate") g.noise_rate = gv.get<double>();
            else throw ConfigError("unknown synthetic group key '" + gk + "'");
          }
          spec.groups.push_back(std::move(g));
        }
      } else {
        throw ConfigError("unknown synthetic spec key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad synthetic spec value: ") + e.what());
  }
  spec.validate();
  return has_seed;
}

inline EmbeddingStore generate_synthetic(const SyntheticCorpusSpec& spec) {
  spec.validate();
  const std::size_t dim = spec.dim;
  const auto n_ids = static_cast<std::size_t>(spec.identities_per_group);
  const auto n_inst = static_cast<std::size_t>(spec.instances);

  std::vector<std::string> names;
  for (const auto& g : spec.groups) names.push_back(g.name);
  EmbeddingStore store(dim, spec.sigma_levels, names,
                       std::vector<int>(spec.groups.size(), spec.identities_per_group));

  Engine rng(mix_seed({spec.seed, static_cast<std::uint64_t>(Stream::kCorpus)}));
  auto draw = [&](std::vector<double>& v, double scale) {
    for (double& x : v) x = scale * standard_normal(rng);
  };

  std::vector<std::vector<double>> universal(kExpressionCount, std::vector<double>(dim));
  for (auto& u : universal) draw(u, 1.0);
  std::vector<double> face(dim);
  draw(face, spec.template_scale);
  const double shared = std::sqrt(spec.shared_fraction);
  const double own = std::sqrt(1.0 - spec.shared_fraction);

  std::vector<float> out(dim);
  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    const auto& gs = spec.groups[g];

    std::vector<std::vector<double>> centers(kExpressionCount, std::vector<double>(dim));
    for (std::size_t e = 0; e < kExpressionCount; ++e) {
      for (std::size_t d = 0; d < dim; ++d) {
        centers[e][d] = gs.class_spread * (shared * universal[e][d] + own * standard_normal(rng));
      }
    }
    std::vector<std::vector<double>> offsets(n_ids, std::vector<double>(dim));
    for (auto& o : offsets) draw(o, gs.identity_scale);

    // clean[(i * 7 + e) * n_inst + k] is one D-vector.
    std::vector<std::vector<double>> clean(n_ids * kExpressionCount * n_inst, std::vector<double>(dim));
    std::vector<double> mean(dim, 0.0);
    for (std::size_t i = 0; i < n_ids; ++i) {
      for (std::size_t e = 0; e < kExpressionCount; ++e) {
        for (std::size_t k = 0; k < n_inst; ++k) {
          auto& v = clean[(i * kExpressionCount + e) * n_inst + k];
          for (std::size_t d = 0; d < dim; ++d) {
            v[d] = face[d] + centers[e][d] + offsets[i][d] + gs.noise * standard_normal(rng);
            mean[d] += v[d];
          }
        }
      }
    }
    for (double& m : mean) m /= static_cast<double>(clean.size());

    // Canonical order: identity, expression, sigma, instance.
    for (std::size_t i = 0; i < n_ids; ++i) {
      for (std::size_t e = 0; e < kExpressionCount; ++e) {
        for (int sigma : spec.sigma_levels) {
          const double keep = std::pow(1.0 - gs.collapse_rate, sigma);
          const double noise_scale = gs.noise_rate * sigma;
          for (std::size_t k = 0; k < n_inst; ++k) {
            const auto& v = clean[(i * kExpressionCount + e) * n_inst + k];
            for (std::size_t d = 0; d < dim; ++d) {
              const double eta = noise_scale * standard_normal(rng);
              out[d] = static_cast<float>(keep * v[d] + (1.0 - keep) * mean[d] + eta);
            }
            store.add(SampleKey{{static_cast<std::uint8_t>(g), static_cast<std::uint16_t>(i),
                                 static_cast<Expression>(e), static_cast<std::uint8_t>(sigma)},
                                static_cast<std::uint8_t>(k)},
                      out);
          }
        }
      }
    }
  }
  store.validate();
  return store;
}

}  // namespace fersim
