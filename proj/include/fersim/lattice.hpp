// Toroidal lattice geometry and single-occupancy bookkeeping.
#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fersim/errors.hpp"

namespace fersim {

using AgentId = int;

struct Position {
  int x = 0;
  int y = 0;

  auto operator<=>(const Position&) const = default;
};

class Torus {
 public:
  Torus(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw ConfigError("torus dimensions must be >= 1");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t cell_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }

  bool contains(Position p) const noexcept { return p.x >= 0 && p.x < width_ && p.y >= 0 && p.y < height_; }

  Position wrap(int x, int y) const noexcept {
    return {((x % width_) + width_) % width_, ((y % height_) + height_) % height_};
  }

  std::size_t index(Position p) const noexcept { return static_cast<std::size_t>(p.y) * width_ + p.x; }
  Position at_index(std::size_t i) const noexcept {
    return {static_cast<int>(i % width_), static_cast<int>(i / width_)};
  }

 private:
  int width_;
  int height_;
};

/// The up-to-8 wrap-around neighbors of pos, in offset order
/// (dy = -1, 0, 1; dx = -1, 0, 1 within each row), deduplicated, never pos.
inline std::vector<Position> moore_neighbors(const Torus& torus, Position pos) {
  std::vector<Position> out;
  out.reserve(8);
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (dx == 0 && dy == 0) continue;
      const Position q = torus.wrap(pos.x + dx, pos.y + dy);
      if (q == pos || std::find(out.begin(), out.end(), q) != out.end()) continue;
      out.push_back(q);
    }
  }
  return out;
}

inline bool is_adjacent(const Torus& torus, Position a, Position b) {
  const auto n = moore_neighbors(torus, a);
  return std::find(n.begin(), n.end(), b) != n.end();
}

/// Hard-exclusion occupancy: cell -> agent and agent -> cell, kept in sync.
class Occupancy {
 public:
  explicit Occupancy(Torus torus) : torus_(torus), cells_(torus.cell_count()) {}

  const Torus& torus() const noexcept { return torus_; }
  std::size_t agent_count() const noexcept { return positions_.size(); }

  void place(AgentId id, Position pos) {
    if (!torus_.contains(pos)) throw ContractError("placement outside the lattice");
    if (positions_.contains(id)) throw ContractError("agent " + std::to_string(id) + " already placed");
    auto& cell = cells_[torus_.index(pos)];
    if (cell) throw ContractError("cell already occupied");
    cell = id;
    positions_[id] = pos;
  }

  std::optional<AgentId> at(Position pos) const { return cells_[torus_.index(pos)]; }
  bool occupied(Position pos) const { return at(pos).has_value(); }

  Position position_of(AgentId id) const {
    auto it = positions_.find(id);
    if (it == positions_.end()) throw KeyError("unknown agent " + std::to_string(id));
    return it->second;
  }

  /// Moves id to dest if dest is free right now. dest must be adjacent.
  bool try_move(AgentId id, Position dest) {
    const Position from = position_of(id);
    if (!torus_.contains(dest) || !is_adjacent(torus_, from, dest)) {
      throw ContractError("move destination is not adjacent");
    }
    auto& target = cells_[torus_.index(dest)];
    if (target) return false;
    cells_[torus_.index(from)].reset();
    target = id;
    positions_[id] = dest;
    return true;
  }

  const std::map<AgentId, Position>& positions() const noexcept { return positions_; }

  /// True when both maps describe the same bijection.
  bool consistent() const {
    std::size_t filled = 0;
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      if (!cells_[i]) continue;
      ++filled;
      auto it = positions_.find(*cells_[i]);
      if (it == positions_.end() || torus_.index(it->second) != i) return false;
    }
    return filled == positions_.size();
  }

 private:
  Torus torus_;
  std::vector<std::optional<AgentId>> cells_;
  std::map<AgentId, Position> positions_;
};

/// Unoccupied Moore neighbors of pos, in moore_neighbors order.
inline std::vector<Position> free_adjacent(const Torus& torus, const Occupancy& occupancy, Position pos) {
  std::vector<Position> out;
  for (Position q : moore_neighbors(torus, pos)) {
    if (!occupancy.occupied(q)) out.push_back(q);
  }
  return out;
}

}  // namespace fersim
