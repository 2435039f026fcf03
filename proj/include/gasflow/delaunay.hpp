#pragma once

#include "gasflow/core.hpp"

#include <array>
#include <vector>

namespace gasflow {

using Triangle = std::array<Index, 3>;

/// Bowyer-Watson triangulation of a planar point set (N×2). Triangles are counter-clockwise and
/// cover the convex hull; throws if the points are fewer than three, collinear, or duplicated.
std::vector<Triangle> delaunay_2d(const Points& points);

/// Area of the convex hull (Andrew's monotone chain).
double convex_hull_area(const Points& points);

}  // namespace gasflow
