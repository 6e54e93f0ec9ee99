// Per-level attention neighbourhoods.
//
//   level 1  same case, same modality, |t_i - t_j| <= delta, at most k_max members
//   level 2  same case, same modality
//   level 3  same case, different modality
//   level 4  different case
//   level 5  same case
// Every token is a member of its own neighbourhood. At level 1 the k_max budget
// includes the token itself; the remaining k_max - 1 places go to the temporally
// nearest candidates, ties broken by token index. Member lists are sorted by index.

#ifndef HEALTHPOINT_NEIGHBORHOODS_HPP
#define HEALTHPOINT_NEIGHBORHOODS_HPP

#include "healthpoint/coupling.hpp"
#include "healthpoint/ops.hpp"
#include "healthpoint/pointcloud.hpp"

namespace hp {

struct LevelSpec {
  int level = 1;
  DimSet dims;
  bool per_modality = false;  ///< Levels 1-2 own one parameter set per modality.
};

/// The five levels with their active dimensions: {h,t}, {h,t}, {h,t,m}, {h,t,m,c}, {h,t,m}.
LevelSpec level_spec(int level);

struct NeighborhoodOptions {
  double delta = 2.0;
  std::size_t k_max = 6;
};

Csr build_neighborhoods(const PointCloud& cloud, int level, const NeighborhoodOptions& options = {});

}  // namespace hp

#endif  // HEALTHPOINT_NEIGHBORHOODS_HPP
