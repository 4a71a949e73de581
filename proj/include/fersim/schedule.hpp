// Piecewise-constant blur schedule: a learning phase at sigma 0 followed by
// fixed-length evaluation blocks of strictly increasing sigma.
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "fersim/errors.hpp"

namespace fersim {

struct Phase {
  bool learning = true;
  int block = 0;  // evaluation blocks count from 1; 0 is the learning phase
  int sigma = 0;
  int start = 0;  // first tick, inclusive
  int end = 0;    // last tick, exclusive
};

/// A metric reporting window. Learning windows are T_block long (the last
/// one may be shorter); evaluation windows coincide with evaluation blocks.
struct Window {
  int index = 0;
  bool learning = true;
  int sigma = 0;
  int start = 0;
  int end = 0;
};

class BlurSchedule {
 public:
  BlurSchedule(int t_learn, int t_block, std::vector<int> sigmas)
      : t_learn_(t_learn), t_block_(t_block), sigmas_(std::move(sigmas)) {
    if (t_learn < 0) throw ConfigError("t_learn must be >= 0");
    if (t_block < 1) throw ConfigError("t_block must be >= 1");
    for (std::size_t i = 1; i < sigmas_.size(); ++i) {
      if (sigmas_[i] <= sigmas_[i - 1]) throw ConfigError("sigma_levels must be strictly increasing");
    }
  }

  int t_learn() const noexcept { return t_learn_; }
  int t_block() const noexcept { return t_block_; }
  const std::vector<int>& sigmas() const noexcept { return sigmas_; }
  int run_length() const noexcept { return t_learn_ + static_cast<int>(sigmas_.size()) * t_block_; }

  int sigma_at(int t) const { return block_of(t).sigma; }

  Phase block_of(int t) const {
    if (t < 0 || t >= run_length()) {
      throw RangeError("tick " + std::to_string(t) + " outside run of length " + std::to_string(run_length()));
    }
    if (t < t_learn_) return {true, 0, 0, 0, t_learn_};
    const int b = (t - t_learn_) / t_block_;
    const int start = t_learn_ + b * t_block_;
    return {false, b + 1, sigmas_[static_cast<std::size_t>(b)], start, start + t_block_};
  }

  int learning_window_count() const noexcept { return (t_learn_ + t_block_ - 1) / t_block_; }
  int window_count() const noexcept { return learning_window_count() + static_cast<int>(sigmas_.size()); }

  std::vector<Window> windows() const {
    std::vector<Window> out;
    for (int w = 0; w < learning_window_count(); ++w) {
      out.push_back({w, true, 0, w * t_block_, std::min((w + 1) * t_block_, t_learn_)});
    }
    for (std::size_t b = 0; b < sigmas_.size(); ++b) {
      const int start = t_learn_ + static_cast<int>(b) * t_block_;
      out.push_back({static_cast<int>(out.size()), false, sigmas_[b], start, start + t_block_});
    }
    return out;
  }

  int window_of(int t) const {
    const Phase p = block_of(t);
    return p.learning ? t / t_block_ : learning_window_count() + p.block - 1;
  }

 private:
  int t_learn_;
  int t_block_;
  std::vector<int> sigmas_;
};

}  // namespace fersim
