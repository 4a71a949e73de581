#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace fersim;

namespace {

SyntheticCorpusSpec tiny_spec(std::uint64_t seed) {
  SyntheticCorpusSpec s;
  s.dim = 6;
  s.identities_per_group = 3;
  s.instances = 2;
  s.seed = seed;
  return s;
}

std::vector<double> as_double(std::span<const float> v) { return {v.begin(), v.end()}; }

/// Multinomial logistic regression, trained by full-batch gradient descent
/// on standardized features. Deliberately independent of the adapter code.
class LinearProbe {
 public:
  LinearProbe(const std::vector<std::vector<double>>& xs, const std::vector<int>& ys, int iters, double lr)
      : dim_(xs.front().size()), w_(7 * (dim_ + 1), 0.0) {
    mean_.assign(dim_, 0.0);
    scale_.assign(dim_, 0.0);
    for (const auto& x : xs) {
      for (std::size_t d = 0; d < dim_; ++d) mean_[d] += x[d] / static_cast<double>(xs.size());
    }
    for (const auto& x : xs) {
      for (std::size_t d = 0; d < dim_; ++d) scale_[d] += (x[d] - mean_[d]) * (x[d] - mean_[d]) / static_cast<double>(xs.size());
    }
    for (double& s : scale_) s = 1.0 / std::sqrt(s + 1e-12);

    std::vector<std::vector<double>> zs;
    for (const auto& x : xs) zs.push_back(standardize(x));
    std::vector<double> grad(w_.size());
    for (int it = 0; it < iters; ++it) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t n = 0; n < zs.size(); ++n) {
        const auto p = probs(zs[n]);
        for (int c = 0; c < 7; ++c) {
          const double g = p[c] - (c == ys[n] ? 1.0 : 0.0);
          double* row = grad.data() + c * (dim_ + 1);
          for (std::size_t d = 0; d < dim_; ++d) row[d] += g * zs[n][d];
          row[dim_] += g;
        }
      }
      for (std::size_t i = 0; i < w_.size(); ++i) w_[i] -= lr * grad[i] / static_cast<double>(zs.size());
    }
  }

  double probability_of(const std::vector<double>& x, int y) const { return probs(standardize(x))[y]; }

  int classify(const std::vector<double>& x) const {
    const auto p = probs(standardize(x));
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }

 private:
  std::vector<double> standardize(const std::vector<double>& x) const {
    std::vector<double> z(dim_);
    for (std::size_t d = 0; d < dim_; ++d) z[d] = (x[d] - mean_[d]) * scale_[d];
    return z;
  }

  std::array<double, 7> probs(const std::vector<double>& z) const {
    std::array<double, 7> logit{};
    for (int c = 0; c < 7; ++c) {
      const double* row = w_.data() + c * (dim_ + 1);
      double s = row[dim_];
      for (std::size_t d = 0; d < dim_; ++d) s += row[d] * z[d];
      logit[c] = s;
    }
    const double mx = *std::max_element(logit.begin(), logit.end());
    double total = 0;
    for (double& l : logit) total += (l = std::exp(l - mx));
    for (double& l : logit) l /= total;
    return logit;
  }

  std::size_t dim_;
  std::vector<double> w_, mean_, scale_;
};

}  // namespace

TEST(Synthetic, SameSpecGivesIdenticalStores) {
  const auto a = generate_synthetic(tiny_spec(5));
  const auto b = generate_synthetic(tiny_spec(5));
  EXPECT_EQ(a, b);
  EXPECT_EQ(serialize_store(a), serialize_store(b));
  EXPECT_NE(serialize_store(a), serialize_store(generate_synthetic(tiny_spec(6))));
}

TEST(Synthetic, OutputIsCompleteAndLoadable) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto s = generate_synthetic(tiny_spec(seed));
    EXPECT_NO_THROW(s.validate());
    EXPECT_EQ(s.record_count(), 2u * 3 * 7 * 5 * 2);
    const std::string bytes = serialize_store(s);
    const std::vector<unsigned char> raw(bytes.begin(), bytes.end());
    EXPECT_EQ(parse_store(raw), s);
  }
}

TEST(Synthetic, NoCollapseAndNoNoiseLeavesSamplesUnchanged) {
  auto spec = tiny_spec(9);
  for (auto& g : spec.groups) g.collapse_rate = g.noise_rate = 0.0;
  const auto s = generate_synthetic(spec);
  for (const auto& [key, data] : s.cells()) {
    if (key.sigma == 0) continue;
    auto clean = key;
    clean.sigma = 0;
    EXPECT_EQ(data, s.cells().at(clean));
  }
}

TEST(Synthetic, FullCollapseWithoutNoiseIsTheGroupMean) {
  auto spec = tiny_spec(10);
  for (auto& g : spec.groups) {
    g.collapse_rate = 1.0;
    g.noise_rate = 0.0;
  }
  const auto s = generate_synthetic(spec);
  for (std::size_t g = 0; g < 2; ++g) {
    // Oracle: the mean of the group's clean samples, in double.
    std::vector<double> mean(spec.dim, 0.0);
    std::size_t n = 0;
    for (const auto& [key, data] : s.cells()) {
      if (key.group != g || key.sigma != 0) continue;
      for (std::size_t i = 0; i < data.size(); ++i) mean[i % spec.dim] += data[i];
      n += data.size() / spec.dim;
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (const auto& [key, data] : s.cells()) {
      if (key.group != g || key.sigma == 0) continue;
      for (std::size_t i = 0; i < data.size(); ++i) EXPECT_NEAR(data[i], mean[i % spec.dim], 1e-5);
    }
  }
}

TEST(Synthetic, FullCollapseNoiseHasExpectedScale) {
  auto spec = tiny_spec(12);
  spec.identities_per_group = 10;
  spec.instances = 8;
  spec.dim = 32;
  for (auto& g : spec.groups) g.collapse_rate = 1.0;
  const auto s = generate_synthetic(spec);
  for (std::size_t g = 0; g < 2; ++g) {
    // e(sigma) - e(sigma') has variance ((b s)^2 + (b s')^2) per component.
    const double b = spec.groups[g].noise_rate;
    double sq = 0;
    std::size_t n = 0;
    for (const auto& [key, data] : s.cells()) {
      if (key.group != g || key.sigma != 4) continue;
      auto k1 = key;
      k1.sigma = 1;
      const auto& other = s.cells().at(k1);
      for (std::size_t i = 0; i < data.size(); ++i, ++n) sq += std::pow(data[i] - other[i], 2);
    }
    const double expected = b * b * (16 + 1);
    EXPECT_NEAR(sq / static_cast<double>(n), expected, 0.1 * expected);
  }
}

TEST(Synthetic, SpecValidation) {
  auto bad = tiny_spec(1);
  bad.groups[0].collapse_rate = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny_spec(1);
  bad.instances = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny_spec(1);
  bad.groups[1].noise = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny_spec(1);
  bad.shared_fraction = 1.1;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(generate_synthetic(bad), ConfigError);
}

TEST(Synthetic, SpecJsonRoundTripAndUnknownKeys) {
  SyntheticCorpusSpec spec;
  spec.seed = 44;
  spec.groups[1].collapse_rate = 0.5;
  const nlohmann::json j = spec;
  SyntheticCorpusSpec back;
  EXPECT_TRUE(read_synthetic_spec(j, back));
  EXPECT_EQ(nlohmann::json(back), j);

  SyntheticCorpusSpec other;
  EXPECT_FALSE(read_synthetic_spec(nlohmann::json{{"dim", 8}}, other));
  EXPECT_EQ(other.dim, 8u);
  EXPECT_THROW(read_synthetic_spec(nlohmann::json{{"dims", 8}}, other), ConfigError);
  EXPECT_THROW(read_synthetic_spec(nlohmann::json{{"groups", {{{"name", "x"}, {"spread", 1}}}}}, other), ConfigError);
}

// A linear probe fit on clean samples loses ground at every blur step.
// Accuracy saturates at 1.0 for the mildest blur, so the strict check runs
// on the held-out probability of the true class; accuracy itself must be
// non-increasing and strictly decreasing once off the ceiling.
TEST(Synthetic, LinearProbeDegradesStrictlyWithSigma) {
  const SyntheticCorpusSpec defaults;
  const std::size_t levels = defaults.sigma_levels.size();
  std::vector<double> accuracy(levels, 0.0), true_prob(levels, 0.0);
  const int seeds = 10;
  for (int seed = 1; seed <= seeds; ++seed) {
    SyntheticCorpusSpec spec;
    spec.seed = static_cast<std::uint64_t>(seed);
    const auto s = generate_synthetic(spec);
    for (std::size_t g = 0; g < spec.groups.size(); ++g) {
      // Train on even instances at sigma 0; test on odd instances.
      std::vector<std::vector<double>> xs;
      std::vector<int> ys;
      for (const auto& [key, data] : s.cells()) {
        if (key.group != g || key.sigma != 0) continue;
        for (std::size_t k = 0; k < s.instance_count(key); k += 2) {
          xs.push_back(as_double(s.instance(key, k)));
          ys.push_back(static_cast<int>(index_of(key.expression)));
        }
      }
      const LinearProbe probe(xs, ys, 200, 0.5);
      for (std::size_t si = 0; si < levels; ++si) {
        std::size_t hit = 0, total = 0;
        double prob = 0;
        for (const auto& [key, data] : s.cells()) {
          if (key.group != g || key.sigma != spec.sigma_levels[si]) continue;
          const int y = static_cast<int>(index_of(key.expression));
          for (std::size_t k = 1; k < s.instance_count(key); k += 2, ++total) {
            const auto x = as_double(s.instance(key, k));
            hit += probe.classify(x) == y;
            prob += probe.probability_of(x, y);
          }
        }
        const double weight = static_cast<double>(total) * seeds * static_cast<double>(spec.groups.size());
        accuracy[si] += static_cast<double>(hit) / weight;
        true_prob[si] += prob / weight;
      }
    }
  }
  for (std::size_t i = 0; i < levels; ++i) {
    const auto tag = std::to_string(defaults.sigma_levels[i]);
    RecordProperty("probe_accuracy_sigma" + tag, std::to_string(accuracy[i]));
    RecordProperty("probe_true_prob_sigma" + tag, std::to_string(true_prob[i]));
  }
  for (std::size_t i = 1; i < levels; ++i) {
    EXPECT_LT(true_prob[i], true_prob[i - 1]) << "sigma index " << i;
    EXPECT_LE(accuracy[i], accuracy[i - 1]) << "sigma index " << i;
    if (accuracy[i - 1] < 1.0) EXPECT_LT(accuracy[i], accuracy[i - 1]) << "sigma index " << i;
  }
  EXPECT_LT(accuracy.back(), accuracy.front());
}

// Mean distance to the class centroid over mean distance between class
// centroids: non-decreasing in sigma for every group.
TEST(Synthetic, WithinBetweenDistanceRatioIsNonDecreasing) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SyntheticCorpusSpec spec;
    spec.seed = seed;
    const auto s = generate_synthetic(spec);
    for (std::size_t g = 0; g < spec.groups.size(); ++g) {
      double previous = 0;
      for (int sigma : spec.sigma_levels) {
        std::vector<std::vector<double>> centroid(7, std::vector<double>(spec.dim, 0.0));
        std::vector<std::vector<std::vector<double>>> members(7);
        for (const auto& [key, data] : s.cells()) {
          if (key.group != g || key.sigma != sigma) continue;
          for (std::size_t k = 0; k < s.instance_count(key); ++k) {
            members[index_of(key.expression)].push_back(as_double(s.instance(key, k)));
          }
        }
        auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
          double d = 0;
          for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
          return std::sqrt(d);
        };
        for (int c = 0; c < 7; ++c) {
          for (const auto& x : members[c]) {
            for (std::size_t d = 0; d < spec.dim; ++d) centroid[c][d] += x[d] / static_cast<double>(members[c].size());
          }
        }
        double within = 0, between = 0;
        std::size_t nw = 0, nb = 0;
        for (int c = 0; c < 7; ++c) {
          for (const auto& x : members[c]) within += dist(x, centroid[c]), ++nw;
          for (int c2 = c + 1; c2 < 7; ++c2) between += dist(centroid[c], centroid[c2]), ++nb;
        }
        const double ratio = (within / static_cast<double>(nw)) / (between / static_cast<double>(nb));
        EXPECT_GE(ratio, previous) << "seed " << seed << " group " << g << " sigma " << sigma;
        previous = ratio;
      }
    }
  }
}

TEST(Synthetic, DefaultGroupBIsHarderAndCollapsesFaster) {
  const SyntheticCorpusSpec spec;
  ASSERT_EQ(spec.groups.size(), 2u);
  EXPECT_LT(spec.groups[1].class_spread, spec.groups[0].class_spread);
  EXPECT_GT(spec.groups[1].collapse_rate, spec.groups[0].collapse_rate);
  EXPECT_EQ(spec.sigma_levels, (std::vector<int>{0, 1, 2, 3, 4}));
}
