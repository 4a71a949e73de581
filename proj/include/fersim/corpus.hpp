// Embedding store: the frozen vectors agents display and perceive, plus the
// canonical ".embs" binary container.
//
// File layout
//   line 1   compact JSON header terminated by '\n':
//            {"dim","expressions","groups","identities_per_group",
//             "record_count","sigma_levels","version"}
//   records  u8 group | u16le identity | u8 expression | u8 sigma |
//            u8 instance | 2 zero bytes | dim x f32le
// Records are sorted by (group, identity, expression, sigma, instance).
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fersim/errors.hpp"
#include "fersim/expression.hpp"
#include "fersim/rng.hpp"

namespace fersim {

inline constexpr int kStoreFormatVersion = 1;
inline constexpr std::size_t kRecordPrefixBytes = 8;

/// (group, identity, expression, sigma): one cell holding one or more instances.
struct CellKey {
  std::uint8_t group = 0;
  std::uint16_t identity = 0;
  Expression expression = Expression::kNeutral;
  std::uint8_t sigma = 0;

  auto operator<=>(const CellKey&) const = default;
};

struct SampleKey {
  CellKey cell;
  std::uint8_t instance = 0;

  auto operator<=>(const SampleKey&) const = default;
};

class EmbeddingStore {
 public:
  EmbeddingStore() = default;

  EmbeddingStore(std::size_t dim, std::vector<int> sigma_levels, std::vector<std::string> groups,
                 std::vector<int> identities_per_group)
      : dim_(dim),
        sigma_levels_(std::move(sigma_levels)),
        groups_(std::move(groups)),
        identities_per_group_(std::move(identities_per_group)) {
    check_layout();
  }

  std::size_t dim() const noexcept { return dim_; }
  const std::vector<int>& sigma_levels() const noexcept { return sigma_levels_; }
  const std::vector<std::string>& groups() const noexcept { return groups_; }
  const std::vector<int>& identities_per_group() const noexcept { return identities_per_group_; }

  bool has_sigma(int sigma) const {
    return std::find(sigma_levels_.begin(), sigma_levels_.end(), sigma) != sigma_levels_.end();
  }

  std::optional<std::size_t> group_index(std::string_view name) const {
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      if (groups_[g] == name) return g;
    }
    return std::nullopt;
  }

  /// Appends the next instance of a cell. Instances of one cell must arrive
  /// as 0, 1, 2, ...
  void add(const SampleKey& key, std::span<const float> values) {
    const CellKey& c = key.cell;
    if (c.group >= groups_.size()) throw FormatError("record group index out of range");
    if (c.identity >= identities_per_group_[c.group]) {
      throw FormatError("record identity index out of range");
    }
    if (index_of(c.expression) >= kExpressionCount) throw FormatError("record expression out of range");
    if (!has_sigma(c.sigma)) throw FormatError("record sigma not in sigma_levels");
    if (values.size() != dim_) throw FormatError("record has wrong dimension");
    for (float v : values) {
      if (!std::isfinite(v)) throw DataError("non-finite embedding component");
    }
    auto& cell = cells_[c];
    if (cell.size() != static_cast<std::size_t>(key.instance) * dim_) {
      throw FormatError("instances of a cell must be contiguous from 0");
    }
    cell.insert(cell.end(), values.begin(), values.end());
    ++record_count_;
  }

  std::size_t record_count() const noexcept { return record_count_; }

  std::size_t instance_count(const CellKey& key) const {
    auto it = cells_.find(key);
    return it == cells_.end() ? 0 : it->second.size() / dim_;
  }

  std::span<const float> instance(const CellKey& key, std::size_t i) const {
    auto it = cells_.find(key);
    if (it == cells_.end() || (i + 1) * dim_ > it->second.size()) {
      throw KeyError("no embedding for requested key");
    }
    return std::span<const float>(it->second).subspan(i * dim_, dim_);
  }

  const std::map<CellKey, std::vector<float>>& cells() const noexcept { return cells_; }

  /// Expressions available to an identity (taken from its records).
  std::vector<Expression> expressions_of(std::size_t group, std::size_t identity) const {
    std::set<Expression> found;
    const CellKey lo{static_cast<std::uint8_t>(group), static_cast<std::uint16_t>(identity),
                     Expression::kNeutral, 0};
    for (auto it = cells_.lower_bound(lo);
         it != cells_.end() && it->first.group == group && it->first.identity == identity; ++it) {
      found.insert(it->first.expression);
    }
    return {found.begin(), found.end()};
  }

  /// Throws IncompleteStoreError unless every (group, identity, expression)
  /// cell exists at every sigma level and every identity has expressions.
  void validate() const {
    check_layout();
    std::map<std::tuple<int, int, int>, std::set<int>> seen;
    for (const auto& [key, data] : cells_) {
      seen[{key.group, key.identity, static_cast<int>(key.expression)}].insert(key.sigma);
    }
    for (const auto& [triple, sigmas] : seen) {
      if (sigmas.size() != sigma_levels_.size()) {
        const auto& [g, i, e] = triple;
        throw IncompleteStoreError("group " + std::to_string(g) + " identity " + std::to_string(i) +
                                   " expression " + std::string(kExpressionNames[e]) +
                                   " is missing at one or more sigma levels");
      }
    }
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      for (int i = 0; i < identities_per_group_[g]; ++i) {
        if (expressions_of(g, static_cast<std::size_t>(i)).empty()) {
          throw IncompleteStoreError("group " + groups_[g] + " identity " + std::to_string(i) +
                                     " has no expressions");
        }
      }
    }
  }

  bool operator==(const EmbeddingStore&) const = default;

 private:
  void check_layout() const {
    if (dim_ == 0) throw FormatError("dim must be positive");
    if (groups_.empty() || groups_.size() > 255) throw FormatError("store needs 1..255 groups");
    if (std::set<std::string>(groups_.begin(), groups_.end()).size() != groups_.size()) {
      throw FormatError("group names must be unique");
    }
    if (identities_per_group_.size() != groups_.size()) {
      throw FormatError("identities_per_group length differs from groups");
    }
    for (int n : identities_per_group_) {
      if (n < 0 || n > 65536) throw FormatError("identities_per_group out of range");
    }
    if (sigma_levels_.empty()) throw FormatError("sigma_levels must be non-empty");
    for (std::size_t i = 0; i < sigma_levels_.size(); ++i) {
      if (sigma_levels_[i] < 0 || sigma_levels_[i] > 255) throw FormatError("sigma level out of range");
      if (i > 0 && sigma_levels_[i] <= sigma_levels_[i - 1]) {
        throw FormatError("sigma_levels must be strictly increasing");
      }
    }
  }

  std::size_t dim_ = 0;
  std::vector<int> sigma_levels_;
  std::vector<std::string> groups_;
  std::vector<int> identities_per_group_;
  std::map<CellKey, std::vector<float>> cells_;
  std::size_t record_count_ = 0;
};

namespace detail {

inline void put_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_f32le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((bits >> s) & 0xFF));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::string store_header(const EmbeddingStore& store) {
  nlohmann::json h;
  h["version"] = kStoreFormatVersion;
  h["dim"] = store.dim();
  h["sigma_levels"] = store.sigma_levels();
  h["groups"] = store.groups();
  h["identities_per_group"] = store.identities_per_group();
  h["expressions"] = kExpressionNames;
  h["record_count"] = store.record_count();
  // nlohmann::json keeps object keys sorted, so dump() is canonical.
  return h.dump();
}

template <class T>
T header_field(const nlohmann::json& h, const char* name) {
  if (!h.contains(name)) throw FormatError(std::string("header is missing field '") + name + "'");
  try {
    return h.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("header field '") + name + "' has the wrong type");
  }
}

}  // namespace detail

/// Serializes a store to its canonical byte stream.
inline std::string serialize_store(const EmbeddingStore& store) {
  std::string out = detail::store_header(store);
  out.push_back('\n');
  out.reserve(out.size() + store.record_count() * (kRecordPrefixBytes + 4 * store.dim()));
  const std::size_t dim = store.dim();
  for (const auto& [key, data] : store.cells()) {
    const std::size_t instances = data.size() / dim;
    for (std::size_t i = 0; i < instances; ++i) {
      out.push_back(static_cast<char>(key.group));
      detail::put_u16le(out, key.identity);
      out.push_back(static_cast<char>(index_of(key.expression)));
      out.push_back(static_cast<char>(key.sigma));
      out.push_back(static_cast<char>(i));
      out.push_back('\0');
      out.push_back('\0');
      for (std::size_t d = 0; d < dim; ++d) detail::put_f32le(out, data[i * dim + d]);
    }
  }
  return out;
}

/// Parses and validates a byte stream produced by serialize_store.
inline EmbeddingStore parse_store(std::span<const unsigned char> bytes) {
  const auto newline = std::find(bytes.begin(), bytes.end(), static_cast<unsigned char>('\n'));
  if (newline == bytes.end()) throw FormatError("missing header line");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin(), newline);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }
  if (!h.is_object()) throw FormatError("header must be a JSON object");
  if (detail::header_field<int>(h, "version") != kStoreFormatVersion) {
    throw FormatError("unsupported store version");
  }
  const auto dim = detail::header_field<std::int64_t>(h, "dim");
  const auto record_count = detail::header_field<std::int64_t>(h, "record_count");
  const auto names = detail::header_field<std::vector<std::string>>(h, "expressions");
  if (!std::equal(names.begin(), names.end(), kExpressionNames.begin(), kExpressionNames.end())) {
    throw FormatError("expressions must list the 7 canonical names in index order");
  }
  if (dim <= 0 || record_count < 0) throw FormatError("dim and record_count must be non-negative");

  EmbeddingStore store(static_cast<std::size_t>(dim), detail::header_field<std::vector<int>>(h, "sigma_levels"),
                       detail::header_field<std::vector<std::string>>(h, "groups"),
                       detail::header_field<std::vector<int>>(h, "identities_per_group"));

  const std::size_t record_bytes = kRecordPrefixBytes + 4 * static_cast<std::size_t>(dim);
  const auto body = bytes.subspan(static_cast<std::size_t>(newline - bytes.begin()) + 1);
  if (body.size() % record_bytes != 0 || body.size() / record_bytes != static_cast<std::uint64_t>(record_count)) {
    throw FormatError("record section size " + std::to_string(body.size()) + " does not match record_count " +
                      std::to_string(record_count));
  }

  std::vector<float> values(static_cast<std::size_t>(dim));
  std::optional<SampleKey> previous;
  for (std::int64_t r = 0; r < record_count; ++r) {
    const unsigned char* p = body.data() + static_cast<std::size_t>(r) * record_bytes;
    if (p[3] >= kExpressionCount) throw FormatError("expression index out of range");
    if (p[6] != 0 || p[7] != 0) throw FormatError("record padding must be zero");
    SampleKey key{{p[0], static_cast<std::uint16_t>(p[1] | (p[2] << 8)), static_cast<Expression>(p[3]), p[4]},
                  p[5]};
    if (previous && !(*previous < key)) throw FormatError("records are not in canonical order");
    previous = key;
    for (std::size_t d = 0; d < values.size(); ++d) {
      values[d] = std::bit_cast<float>(detail::get_u32le(p + kRecordPrefixBytes + 4 * d));
    }
    store.add(key, values);
  }
  store.validate();
  return store;
}

inline void write_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  const std::string bytes = serialize_store(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline EmbeddingStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open store '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_store(bytes);
}

/// Picks one instance of (group, identity, expression, sigma) uniformly.
/// Always consumes exactly one uniform_index draw.
template <class G>
std::span<const float> sample_display(const EmbeddingStore& store, std::size_t group, std::size_t identity,
                                      Expression expression, int sigma, G& rng) {
  if (group > 255 || identity > 65535 || sigma < 0 || sigma > 255) throw KeyError("key out of range");
  const CellKey key{static_cast<std::uint8_t>(group), static_cast<std::uint16_t>(identity), expression,
                    static_cast<std::uint8_t>(sigma)};
  const std::size_t n = store.instance_count(key);
  if (n == 0) {
    throw KeyError("no embedding for group " + std::to_string(group) + " identity " + std::to_string(identity) +
                   " expression " + std::string(name_of(expression)) + " sigma " + std::to_string(sigma));
  }
  return store.instance(key, uniform_index(rng, n));
}

}  // namespace fersim
