#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "transzero/errors.hpp"

namespace tz {

// allow(i, j) == true means token i may attend to token j.
//
// A well-formed mask is the reflexive-transitive ancestor relation of a forest
// rooted at token 0: every token sees itself, the root, and exactly the
// ancestors of its parent token, and never a later token.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(Eigen::Index n) : n_(n), allow_(static_cast<std::size_t>(n * n), 0) {}

  // Lower-triangular mask: token i sees tokens 0..i.
  static AttentionMask causal(Eigen::Index n) {
    if (n < 1) throw DimensionError("causal mask needs at least one token");
    AttentionMask m(n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) m.set(i, j, true);
    return m;
  }

  // parent[i] is the token index of i's parent (parent[0] is ignored and must
  // be negative). Parents must precede their children.
  static AttentionMask from_parents(std::span<const int> parent) {
    const auto n = static_cast<Eigen::Index>(parent.size());
    if (n < 1) throw DimensionError("tree mask needs at least one token");
    if (parent[0] >= 0) throw StructuralError("token 0 is the root and cannot have a parent");
    AttentionMask m(n);
    m.set(0, 0, true);
    for (Eigen::Index i = 1; i < n; ++i) {
      const int p = parent[static_cast<std::size_t>(i)];
      if (p < 0 || p >= i) {
        throw StructuralError("token " + std::to_string(i) + " has parent " + std::to_string(p) +
                              " which does not precede it");
      }
      for (Eigen::Index j = 0; j < i; ++j) m.set(i, j, m.allowed(p, j));
      m.set(i, i, true);
    }
    return m;
  }

  Eigen::Index size() const { return n_; }
  bool allowed(Eigen::Index i, Eigen::Index j) const { return allow_[static_cast<std::size_t>(i * n_ + j)] != 0; }
  void set(Eigen::Index i, Eigen::Index j, bool v) { allow_[static_cast<std::size_t>(i * n_ + j)] = v ? 1 : 0; }

  bool operator==(const AttentionMask&) const = default;

  // Throws StructuralError naming the first violated invariant.
  void validate() const {
    if (n_ < 1) throw StructuralError("empty attention mask");
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (!allowed(i, i)) throw StructuralError("mask row " + std::to_string(i) + " does not attend to itself");
      if (!allowed(i, 0)) throw StructuralError("mask row " + std::to_string(i) + " does not attend to the root");
      for (Eigen::Index j = i + 1; j < n_; ++j) {
        if (allowed(i, j)) {
          throw StructuralError("mask row " + std::to_string(i) + " attends to later token " + std::to_string(j));
        }
      }
      if (i == 0) continue;
      // The parent is the deepest visible earlier token; the row must equal
      // the parent's row plus the diagonal.
      Eigen::Index parent = -1;
      for (Eigen::Index j = i - 1; j >= 0; --j) {
        if (allowed(i, j)) {
          parent = j;
          break;
        }
      }
      for (Eigen::Index j = 0; j < i; ++j) {
        if (allowed(i, j) != allowed(parent, j)) {
          throw StructuralError("mask row " + std::to_string(i) + " is not an ancestor set (differs from row " +
                                std::to_string(parent) + " at column " + std::to_string(j) + ")");
        }
      }
    }
  }

 private:
  Eigen::Index n_ = 0;
  std::vector<std::uint8_t> allow_;
};

}  // namespace tz
