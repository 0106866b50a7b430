#pragma once

#include <algorithm>
#include <vector>

#include "birdflux/tessellation.hpp"

namespace testing {

/// Relabels cells: old cell i becomes perm[i]. Faces keep their order but are
/// re-oriented so that i < j still holds.
inline birdflux::Tessellation permute_tessellation(const birdflux::Tessellation& t, const std::vector<int>& perm) {
  using namespace birdflux;
  const int n = t.num_cells();
  Tessellation p = t;
  for (int i = 0; i < n; ++i) {
    p.cells[perm[i]] = t.cells[i];
    p.centers[perm[i]] = t.centers[i];
    p.areas[perm[i]] = t.areas[i];
    p.is_boundary[perm[i]] = t.is_boundary[i];
    p.adjacency[perm[i]].clear();
    for (int j : t.adjacency[i]) p.adjacency[perm[i]].push_back(perm[j]);
    p.cell_faces[perm[i]] = t.cell_faces[i];
  }
  for (std::size_t k = 0; k < p.faces.size(); ++k) {
    Face& f = p.faces[k];
    int a = perm[f.i], b = perm[f.j];
    if (a > b) {
      std::swap(a, b);
      f.normal = -f.normal;
      p.face_shift[k] = -p.face_shift[k];
    }
    f.i = a;
    f.j = b;
  }
  if (!t.seeds.empty()) {
    for (int i = 0; i < n; ++i) p.seeds[perm[i]] = t.seeds[i];
  }
  return p;
}

}  // namespace testing
