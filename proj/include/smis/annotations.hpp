#pragma once

// Sparse layouts as point / polyline lists, rasterised onto a label grid.
//
//   {"width": 32, "height": 32, "class_count": 3,
//    "points":  [{"class": 1, "x": 4, "y": 7}],
//    "strokes": [{"class": 2, "points": [[0, 0], [10, 3]], "width": 1}]}
//
// Points and strokes are drawn in file order; later marks overwrite earlier
// ones.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "smis/archive.hpp"
#include "smis/mask.hpp"

namespace smis {

struct AnnotationPoint {
  int class_id = 0;
  int x = 0, y = 0;
};

struct AnnotationStroke {
  int class_id = 0;
  std::vector<std::pair<int, int>> points;
  int width = 1;
};

struct SparseAnnotation {
  int width = 0, height = 0, class_count = 0;
  std::vector<AnnotationPoint> points;
  std::vector<AnnotationStroke> strokes;
};

inline SparseAnnotation parse_annotation(const json& j) {
  SparseAnnotation a;
  try {
    a.width = j.at("width").get<int>();
    a.height = j.at("height").get<int>();
    a.class_count = j.value("class_count", 0);
    for (const auto& p : j.value("points", json::array()))
      a.points.push_back({p.at("class").get<int>(), p.at("x").get<int>(), p.at("y").get<int>()});
    for (const auto& s : j.value("strokes", json::array())) {
      AnnotationStroke st;
      st.class_id = s.at("class").get<int>();
      st.width = s.value("width", 1);
      for (const auto& xy : s.at("points")) st.points.emplace_back(xy.at(0).get<int>(), xy.at(1).get<int>());
      a.strokes.push_back(std::move(st));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed annotation: ") + e.what());
  }
  return a;
}

inline json annotation_to_json(const SparseAnnotation& a) {
  json pts = json::array(), strokes = json::array();
  for (const auto& p : a.points) pts.push_back({{"class", p.class_id}, {"x", p.x}, {"y", p.y}});
  for (const auto& s : a.strokes) {
    json xy = json::array();
    for (auto [x, y] : s.points) xy.push_back({x, y});
    strokes.push_back({{"class", s.class_id}, {"points", xy}, {"width", s.width}});
  }
  return json{{"width", a.width}, {"height", a.height}, {"class_count", a.class_count}, {"points", pts}, {"strokes", strokes}};
}

namespace detail {

inline void stamp(SemanticMask& m, int cx, int cy, int width, ClassId c) {
  const int r = (width - 1) / 2;
  for (int y = cy - r; y <= cy - r + width - 1; ++y)
    for (int x = cx - r; x <= cx - r + width - 1; ++x)
      if (x >= 0 && y >= 0 && x < m.width && y < m.height) m.at(x, y) = c;
}

// Integer Bresenham line, both endpoints included.
inline std::vector<std::pair<int, int>> line_cells(int x0, int y0, int x1, int y1) {
  std::vector<std::pair<int, int>> out;
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    out.emplace_back(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
  return out;
}

}  // namespace detail

// Rasterises onto a width x height sparse mask. Annotation coordinates are in
// the annotation's own canvas and are scaled to the target grid.
inline SemanticMask rasterize(const SparseAnnotation& a, int class_count, int width = 0, int height = 0) {
  if (a.width <= 0 || a.height <= 0) throw InputError("annotation canvas size must be positive");
  if (a.class_count != 0 && a.class_count != class_count)
    throw InputError("annotation declares " + std::to_string(a.class_count) + " classes, model has " +
                     std::to_string(class_count));
  if (width == 0) width = a.width;
  if (height == 0) height = a.height;
  auto check_class = [&](int c) {
    if (c < 0 || c >= class_count) throw InputError("annotation class id " + std::to_string(c) + " is out of range");
  };
  auto check_xy = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= a.width || y >= a.height)
      throw InputError("annotation coordinate (" + std::to_string(x) + ", " + std::to_string(y) + ") is off the canvas");
  };
  auto to_grid = [&](int x, int y) {
    return std::pair<int, int>{static_cast<int>(static_cast<long>(x) * width / a.width),
                               static_cast<int>(static_cast<long>(y) * height / a.height)};
  };
  auto m = SemanticMask::sparse(width, height, class_count);
  for (const auto& p : a.points) {
    check_class(p.class_id);
    check_xy(p.x, p.y);
    const auto [gx, gy] = to_grid(p.x, p.y);
    m.at(gx, gy) = static_cast<ClassId>(p.class_id);
  }
  for (const auto& s : a.strokes) {
    check_class(s.class_id);
    if (s.points.empty()) throw InputError("annotation stroke has no points");
    if (s.width < 1) throw InputError("annotation stroke width must be >= 1");
    for (auto [x, y] : s.points) check_xy(x, y);
    std::vector<std::pair<int, int>> grid;
    for (auto [x, y] : s.points) grid.push_back(to_grid(x, y));
    if (grid.size() == 1) detail::stamp(m, grid[0].first, grid[0].second, s.width, static_cast<ClassId>(s.class_id));
    for (std::size_t i = 1; i < grid.size(); ++i)
      for (auto [x, y] : detail::line_cells(grid[i - 1].first, grid[i - 1].second, grid[i].first, grid[i].second))
        detail::stamp(m, x, y, s.width, static_cast<ClassId>(s.class_id));
  }
  return m;
}

inline SparseAnnotation load_annotation(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return parse_annotation(j);
}

}  // namespace smis
