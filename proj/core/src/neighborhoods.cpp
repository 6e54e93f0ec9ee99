#include "healthpoint/neighborhoods.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hp {

LevelSpec level_spec(int level) {
  switch (level) {
    case 1: return {1, DimSet{Dim::content, Dim::time}, true};
    case 2: return {2, DimSet{Dim::content, Dim::time}, true};
    case 3: return {3, DimSet{Dim::content, Dim::time, Dim::modality}, false};
    case 4: return {4, DimSet{Dim::content, Dim::time, Dim::modality, Dim::case_}, false};
    case 5: return {5, DimSet{Dim::content, Dim::time, Dim::modality}, false};
    default: throw std::invalid_argument("no hierarchy level " + std::to_string(level));
  }
}

Csr build_neighborhoods(const PointCloud& cloud, int level, const NeighborhoodOptions& options) {
  if (level < 1 || level > 5) throw std::invalid_argument("no hierarchy level " + std::to_string(level));
  const std::size_t n = cloud.size();
  Csr csr;
  csr.offsets.reserve(n + 1);
  std::vector<std::uint32_t> members;
  std::vector<std::pair<double, std::uint32_t>> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t c = cloud.case_index[i];
    const std::uint32_t m = cloud.modality[i];
    const auto self = static_cast<std::uint32_t>(i);
    members.clear();
    switch (level) {
      case 1: {
        candidates.clear();
        const auto [b, e] = cloud.block(c, m);
        for (std::size_t j = b; j < e; ++j) {
          if (j == i) continue;
          const double gap = std::abs(cloud.time[i] - cloud.time[j]);
          if (gap <= options.delta) candidates.emplace_back(gap, static_cast<std::uint32_t>(j));
        }
        std::sort(candidates.begin(), candidates.end());
        const std::size_t keep = std::min(candidates.size(), options.k_max > 0 ? options.k_max - 1 : 0);
        members.push_back(self);
        for (std::size_t k = 0; k < keep; ++k) members.push_back(candidates[k].second);
        std::sort(members.begin(), members.end());
        break;
      }
      case 2: {
        const auto [b, e] = cloud.block(c, m);
        for (std::size_t j = b; j < e; ++j) members.push_back(static_cast<std::uint32_t>(j));
        break;
      }
      case 3:
      case 5: {
        for (std::size_t mm = 0; mm < cloud.modalities; ++mm) {
          if (level == 3 && mm == m) {
            members.push_back(self);
            continue;
          }
          const auto [b, e] = cloud.block(c, mm);
          for (std::size_t j = b; j < e; ++j) members.push_back(static_cast<std::uint32_t>(j));
        }
        std::sort(members.begin(), members.end());
        break;
      }
      case 4: {
        for (std::size_t j = 0; j < n; ++j) {
          if (cloud.case_index[j] != c || j == i) members.push_back(static_cast<std::uint32_t>(j));
        }
        break;
      }
    }
    csr.push_row(members);
  }
  return csr;
}

}  // namespace hp
