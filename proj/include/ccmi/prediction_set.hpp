#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace ccmi {

enum class WarningKind {
  EmptyClass,       // n_y = 0
  UndersizedClass,  // n_y too small for a finite threshold at this level
};

struct ClassWarning {
  std::size_t label;
  WarningKind kind;

  friend bool operator==(const ClassWarning&, const ClassWarning&) = default;
};

const char* to_string(WarningKind kind) noexcept;

/// Label subset produced for one (multi-)input. `diagnostics[y]` carries the
/// per-class statistic the rule compared (vote count, score value, p-value).
struct PredictionSet {
  std::vector<std::size_t> members;  // ascending, each < num_classes
  std::vector<double> diagnostics;   // one entry per class
  std::vector<ClassWarning> warnings;

  std::size_t size() const noexcept { return members.size(); }
  std::size_t num_classes() const noexcept { return diagnostics.size(); }
  bool contains(std::size_t y) const noexcept {
    return std::binary_search(members.begin(), members.end(), y);
  }
  bool is_subset_of(const PredictionSet& other) const {
    return std::includes(other.members.begin(), other.members.end(), members.begin(), members.end());
  }
};

}  // namespace ccmi
