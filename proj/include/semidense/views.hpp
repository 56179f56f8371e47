#pragma once

#include <unordered_map>
#include <vector>

#include "semidense/error.hpp"
#include "semidense/geometry.hpp"

namespace semidense {

struct View {
  int id = 0;
  SE3d pose;
  Camerad camera;
};

// Id-addressed collection of calibrated views.
class ViewSet {
 public:
  ViewSet() = default;
  explicit ViewSet(std::vector<View> views) : views_(std::move(views)) {
    for (std::size_t i = 0; i < views_.size(); ++i) {
      if (!index_.emplace(views_[i].id, i).second) {
        throw Error(ErrorCode::kArgument, "duplicate view id " + std::to_string(views_[i].id));
      }
    }
  }

  const View& at(int id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw Error(ErrorCode::kArgument, "unknown view id " + std::to_string(id));
    return views_[it->second];
  }

  bool contains(int id) const { return index_.count(id) != 0; }
  std::size_t size() const { return views_.size(); }
  const std::vector<View>& views() const { return views_; }
  auto begin() const { return views_.begin(); }
  auto end() const { return views_.end(); }

 private:
  std::vector<View> views_;
  std::unordered_map<int, std::size_t> index_;
};

}  // namespace semidense
