// The seven expression categories and their valence partition.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace fersim {

/// Canonical order is part of the file format; never reorder.
enum class Expression : std::uint8_t {
  kNeutral = 0,
  kHappy = 1,
  kSad = 2,
  kAnger = 3,
  kDisgust = 4,
  kFear = 5,
  kSurprise = 6,
};

inline constexpr std::size_t kExpressionCount = 7;

inline constexpr std::array<std::string_view, kExpressionCount> kExpressionNames = {
    "neutral", "happy", "sad", "anger", "disgust", "fear", "surprise"};

inline constexpr std::array<Expression, kExpressionCount> kAllExpressions = {
    Expression::kNeutral, Expression::kHappy,   Expression::kSad,     Expression::kAnger,
    Expression::kDisgust, Expression::kFear,    Expression::kSurprise};

constexpr std::size_t index_of(Expression e) noexcept { return static_cast<std::size_t>(e); }

constexpr std::string_view name_of(Expression e) noexcept { return kExpressionNames[index_of(e)]; }

constexpr std::optional<Expression> expression_from_index(std::size_t i) noexcept {
  if (i >= kExpressionCount) return std::nullopt;
  return static_cast<Expression>(i);
}

constexpr std::optional<Expression> expression_from_name(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kExpressionCount; ++i) {
    if (kExpressionNames[i] == name) return static_cast<Expression>(i);
  }
  return std::nullopt;
}

enum class Valence { kNegative, kPositive };

/// NEG = {anger, disgust, fear, sad}; everything else is POS.
constexpr Valence valence_of(Expression e) noexcept {
  switch (e) {
    case Expression::kAnger:
    case Expression::kDisgust:
    case Expression::kFear:
    case Expression::kSad:
      return Valence::kNegative;
    default:
      return Valence::kPositive;
  }
}

}  // namespace fersim
