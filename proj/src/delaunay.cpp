#include "gasflow/delaunay.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace gasflow {

namespace {

struct P2 {
  double x, y;
};

double orient(const P2& a, const P2& b, const P2& c) { return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x); }

// Positive when d lies strictly inside the circumcircle of the counter-clockwise triangle abc.
double in_circle(const P2& a, const P2& b, const P2& c, const P2& d) {
  const double adx = a.x - d.x, ady = a.y - d.y;
  const double bdx = b.x - d.x, bdy = b.y - d.y;
  const double cdx = c.x - d.x, cdy = c.y - d.y;
  const double ad = adx * adx + ady * ady;
  const double bd = bdx * bdx + bdy * bdy;
  const double cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

}  // namespace

double convex_hull_area(const Points& points) {
  std::vector<P2> p;
  for (Index i = 0; i < points.rows(); ++i) p.push_back({points(i, 0), points(i, 1)});
  std::sort(p.begin(), p.end(), [](const P2& a, const P2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (p.size() < 3) return 0.0;
  std::vector<P2> hull(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && orient(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && orient(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  hull.resize(k - 1);
  double area = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const P2& a = hull[i];
    const P2& b = hull[(i + 1) % hull.size()];
    area += a.x * b.y - b.x * a.y;
  }
  return 0.5 * area;
}

std::vector<Triangle> delaunay_2d(const Points& points) {
  if (points.cols() != 2) throw std::invalid_argument("delaunay_2d expects planar points");
  const Index n = points.rows();
  if (n < 3) throw std::invalid_argument("delaunay_2d needs at least three points");
  Index distinct = 0;
  coincidence_labels(points, 0.0, &distinct);
  if (distinct != n) throw std::invalid_argument("delaunay_2d: duplicated points");

  std::vector<P2> p;
  p.reserve(static_cast<std::size_t>(n + 3));
  for (Index i = 0; i < n; ++i) p.push_back({points(i, 0), points(i, 1)});

  const double lo_x = points.col(0).minCoeff(), hi_x = points.col(0).maxCoeff();
  const double lo_y = points.col(1).minCoeff(), hi_y = points.col(1).maxCoeff();
  const double span = std::max(hi_x - lo_x, hi_y - lo_y);
  if (span == 0.0) throw std::invalid_argument("delaunay_2d: degenerate point set");
  const double cx = 0.5 * (lo_x + hi_x), cy = 0.5 * (lo_y + hi_y);
  const double big = 1e4 * span;
  p.push_back({cx - big, cy - big});
  p.push_back({cx + big, cy - big});
  p.push_back({cx, cy + big});

  std::vector<Triangle> tris{{n, n + 1, n + 2}};
  for (Index v = 0; v < n; ++v) {
    std::vector<Triangle> keep;
    std::map<std::pair<Index, Index>, int> edge_count;
    for (const Triangle& t : tris) {
      if (in_circle(p[t[0]], p[t[1]], p[t[2]], p[v]) > 0.0) {
        for (int e = 0; e < 3; ++e) {
          Index a = t[e], b = t[(e + 1) % 3];
          if (a > b) std::swap(a, b);
          ++edge_count[{a, b}];
        }
      } else {
        keep.push_back(t);
      }
    }
    for (const auto& [edge, count] : edge_count) {
      if (count != 1) continue;
      Triangle t{edge.first, edge.second, v};
      if (orient(p[t[0]], p[t[1]], p[t[2]]) < 0) std::swap(t[0], t[1]);
      keep.push_back(t);
    }
    tris = std::move(keep);
  }

  std::vector<Triangle> out;
  double area = 0.0;
  for (const Triangle& t : tris) {
    if (t[0] >= n || t[1] >= n || t[2] >= n) continue;
    const double a = 0.5 * orient(p[t[0]], p[t[1]], p[t[2]]);
    if (a <= 0.0) continue;
    area += a;
    out.push_back(t);
  }
  const double hull = convex_hull_area(points);
  if (hull <= 0.0) throw std::invalid_argument("delaunay_2d: collinear points");
  if (std::abs(area - hull) > 1e-9 * hull)
    throw std::runtime_error("delaunay_2d: triangulation does not cover the convex hull");
  return out;
}

}  // namespace gasflow
