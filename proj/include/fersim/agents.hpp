// Agent state and the per-tick behaviors: display, perceive, learn, decide
// where to move, and the visualization-only trust trace.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fersim/adapter.hpp"
#include "fersim/corpus.hpp"
#include "fersim/errors.hpp"
#include "fersim/expression.hpp"
#include "fersim/lattice.hpp"
#include "fersim/rng.hpp"

namespace fersim {

/// Scalar type of the simulation's classifiers (matches the store).
using SimReal = float;

enum class ValenceBasis { kPredicted, kTrue };

struct BehaviorConfig {
  double peer_threshold = 0.90;
  double move_prob = 0.7;
  int valence_threshold = 2;
  ValenceBasis valence_basis = ValenceBasis::kPredicted;
  double trust_lambda = 0.1;
  double initial_trust = 0.5;

  void validate() const {
    if (!(peer_threshold >= 0 && peer_threshold <= 1)) throw ConfigError("peer_threshold must be in [0, 1]");
    if (!(move_prob >= 0 && move_prob <= 1)) throw ConfigError("move_prob must be in [0, 1]");
    if (!(trust_lambda >= 0 && trust_lambda <= 1)) throw ConfigError("trust_lambda must be in [0, 1]");
    if (!(initial_trust >= 0 && initial_trust <= 1)) throw ConfigError("initial trust must be in [0, 1]");
  }
};

struct Agent {
  AgentId id = 0;
  std::size_t group = 0;
  std::size_t identity = 0;
  std::vector<Expression> expressions;
  Position position;
  AdapterParams<SimReal> params;
  OptimizerState<SimReal> opt;
  bool frozen = false;
  double trust = 0.5;

  // Scratch buffers, not part of the agent's logical state.
  ForwardCache<SimReal> cache;
  AdapterParams<SimReal> grads;

  std::uint64_t parameter_hash() const { return fersim::parameter_hash(params, opt); }
};

struct Display {
  Expression label = Expression::kNeutral;
  std::span<const SimReal> x;
};

/// A neighbor's display as seen by a perceiver.
struct NeighborDisplay {
  AgentId target = 0;
  std::size_t target_group = 0;
  Display display;
};

struct PerceptionEvent {
  int tick = 0;
  AgentId perceiver = 0;
  std::size_t perceiver_group = 0;
  AgentId target = 0;
  std::size_t target_group = 0;
  int sigma = 0;
  Expression truth = Expression::kNeutral;
  Expression predicted = Expression::kNeutral;
  double confidence = 0;

  bool correct() const noexcept { return truth == predicted; }
};

enum class MoveKind { kStay, kAvoid, kRandom };

struct MoveIntent {
  MoveKind kind = MoveKind::kStay;
  std::optional<Position> destination;  // set when a free cell was chosen
};

/// Uniform expression from the agent's set, then a uniform instance at sigma.
template <class G>
Display display(const Agent& agent, int sigma, const EmbeddingStore& store, G& rng) {
  if (agent.expressions.empty()) throw ContractError("agent has no expressions");
  const Expression label = agent.expressions[uniform_index(rng, agent.expressions.size())];
  return {label, sample_display(store, agent.group, agent.identity, label, sigma, rng)};
}

/// Classifies every neighbor display in eval mode, one event per neighbor.
inline std::vector<PerceptionEvent> perceive_neighbors(Agent& agent, int tick, int sigma,
                                                       std::span<const NeighborDisplay> neighbors,
                                                       double ln_eps = 1e-5) {
  std::vector<PerceptionEvent> events;
  events.reserve(neighbors.size());
  for (const auto& n : neighbors) {
    const auto pred = predict<SimReal>(agent.params, n.display.x, agent.cache, ln_eps);
    events.push_back({tick, agent.id, agent.group, n.target, n.target_group, sigma, n.display.label, pred.label,
                      static_cast<double>(pred.confidence)});
  }
  return events;
}

/// One dropout-masked loss_and_grad + adamw_step on (x, label).
template <class G>
SimReal train_step(Agent& agent, std::span<const SimReal> x, Expression label, const TrainingConfig& cfg, G& rng) {
  const auto mask = draw_dropout_mask<SimReal>(agent.params.hidden(), cfg.dropout, rng);
  const SimReal loss =
      loss_and_grad<SimReal>(agent.params, x, label, cfg.label_smoothing, mask, agent.cache, agent.grads, cfg.ln_eps);
  adamw_step(agent.params, agent.opt, agent.grads, cfg);
  return loss;
}

/// Trains on the agent's own display. Only valid during the learning phase.
template <class G>
SimReal self_train(Agent& agent, Expression label, std::span<const SimReal> x, const TrainingConfig& cfg, G& rng) {
  if (agent.frozen) throw ContractError("self_train called on a frozen agent");
  return train_step(agent, x, label, cfg, rng);
}

/// Uses a neighbor's sample with its ground-truth label when the agent
/// classified it with confidence >= threshold. Never trains a frozen agent.
template <class G>
bool peer_learn(Agent& agent, const PerceptionEvent& event, std::span<const SimReal> x, const TrainingConfig& cfg,
                double peer_threshold, G& rng) {
  if (agent.frozen || event.confidence < peer_threshold) return false;
  train_step(agent, x, event.truth, cfg, rng);
  return true;
}

/// #NEG - #POS over this tick's perceptions, by predicted or true label.
inline int valence_balance(std::span<const PerceptionEvent> events, ValenceBasis basis) {
  int balance = 0;
  for (const auto& e : events) {
    const Expression label = basis == ValenceBasis::kPredicted ? e.predicted : e.truth;
    balance += valence_of(label) == Valence::kNegative ? 1 : -1;
  }
  return balance;
}

/// Avoid when #NEG - #POS >= threshold, otherwise a random step with
/// probability move_prob. Both pick uniformly among free adjacent cells.
template <class G>
MoveIntent valence_decision(const Agent& agent, std::span<const PerceptionEvent> events, const Occupancy& occupancy,
                            const BehaviorConfig& cfg, G& rng) {
  MoveIntent intent;
  if (valence_balance(events, cfg.valence_basis) >= cfg.valence_threshold) {
    intent.kind = MoveKind::kAvoid;
  } else if (uniform01(rng) < cfg.move_prob) {
    intent.kind = MoveKind::kRandom;
  } else {
    return intent;
  }
  const auto free = free_adjacent(occupancy.torus(), occupancy, agent.position);
  if (!free.empty()) intent.destination = free[uniform_index(rng, free.size())];
  return intent;
}

/// trust <- (1 - lambda) trust + lambda * (fraction correct this tick).
inline void trust_update(Agent& agent, std::span<const PerceptionEvent> events, double lambda) {
  if (events.empty()) return;
  std::size_t correct = 0;
  for (const auto& e : events) correct += e.correct() ? 1 : 0;
  const double fraction = static_cast<double>(correct) / static_cast<double>(events.size());
  agent.trust = std::clamp((1.0 - lambda) * agent.trust + lambda * fraction, 0.0, 1.0);
}

}  // namespace fersim
