#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "strod/error.hpp"

namespace strod {

/// Root-based topic address: "o", "o/1", "o/1/2". Child indices are 1-based.
class NodePath {
 public:
  NodePath() = default;

  static NodePath root() { return {}; }

  static NodePath parse(std::string_view text, char sep = '/') {
    if (text.empty() || text.front() != 'o')
      throw LookupError("invalid node path '" + std::string(text) + "'");
    NodePath path;
    std::size_t pos = 1;
    while (pos < text.size()) {
      if (text[pos] != sep)
        throw LookupError("invalid node path '" + std::string(text) + "'");
      ++pos;
      std::size_t end = pos;
      while (end < text.size() && text[end] >= '0' && text[end] <= '9') ++end;
      if (end == pos || end - pos > 6)
        throw LookupError("invalid node path '" + std::string(text) + "'");
      int step = std::stoi(std::string(text.substr(pos, end - pos)));
      if (step < 1)
        throw LookupError("invalid node path '" + std::string(text) + "'");
      path.steps_.push_back(step);
      pos = end;
    }
    return path;
  }

  std::string str(char sep = '/') const {
    std::string out = "o";
    for (int s : steps_) {
      out.push_back(sep);
      out += std::to_string(s);
    }
    return out;
  }

  NodePath child(int index) const {
    NodePath p = *this;
    p.steps_.push_back(index);
    return p;
  }

  NodePath parent() const {
    if (is_root()) throw ContractViolation("root has no parent");
    NodePath p = *this;
    p.steps_.pop_back();
    return p;
  }

  bool is_root() const noexcept { return steps_.empty(); }
  std::size_t level() const noexcept { return steps_.size(); }
  const std::vector<int>& steps() const noexcept { return steps_; }
  int last() const { return steps_.back(); }

  /// True when `other` equals this path or lies below it.
  bool contains(const NodePath& other) const {
    if (other.steps_.size() < steps_.size()) return false;
    for (std::size_t i = 0; i < steps_.size(); ++i)
      if (steps_[i] != other.steps_[i]) return false;
    return true;
  }

  friend bool operator==(const NodePath&, const NodePath&) = default;
  friend auto operator<=>(const NodePath&, const NodePath&) = default;

 private:
  std::vector<int> steps_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Stable per-node seed: identical for a given (global seed, path) on every
/// platform, independent of the order in which nodes are expanded.
inline std::uint64_t node_seed(std::uint64_t global_seed, const NodePath& path) {
  return splitmix64(fnv1a(path.str(), splitmix64(global_seed)));
}

}  // namespace strod
