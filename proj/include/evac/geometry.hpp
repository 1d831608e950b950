#pragma once

#include <cmath>

namespace evac {

/// Plain 2D vector in environment units.
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2() = default;
  constexpr Vec2(double x_, double y_) : x(x_), y(y_) {}

  constexpr Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
  constexpr Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr Vec2& operator-=(const Vec2& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  constexpr bool operator==(const Vec2&) const = default;
};

constexpr Vec2 operator*(double s, const Vec2& v) { return v * s; }

constexpr double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }

/// 2D cross product (z component of a x b).
constexpr double det(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }

constexpr double abs_sq(const Vec2& v) { return dot(v, v); }

inline double norm(const Vec2& v) { return std::sqrt(abs_sq(v)); }

inline Vec2 normalize(const Vec2& v) {
  const double n = norm(v);
  return n > 0.0 ? v / n : Vec2{};
}

/// Counter-clockwise perpendicular.
constexpr Vec2 perp(const Vec2& v) { return {-v.y, v.x}; }

inline double distance(const Vec2& a, const Vec2& b) { return norm(a - b); }

/// Squared distance from p to the segment [a, b].
inline double dist_sq_point_segment(const Vec2& a, const Vec2& b, const Vec2& p) {
  const Vec2 ab = b - a;
  const double len_sq = abs_sq(ab);
  if (len_sq <= 0.0) return abs_sq(p - a);
  double t = dot(p - a, ab) / len_sq;
  t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  return abs_sq(p - (a + t * ab));
}

/// Axis-aligned rectangle [lo.x, hi.x] x [lo.y, hi.y].
struct Rect {
  Vec2 lo;
  Vec2 hi;

  constexpr bool contains(const Vec2& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
  constexpr bool empty() const { return hi.x <= lo.x || hi.y <= lo.y; }
};

/// Signed penetration depth of a disc into a rectangle; positive means overlap.
inline double disc_rect_penetration(const Vec2& center, double radius, const Rect& r) {
  const double cx = std::fmax(r.lo.x, std::fmin(center.x, r.hi.x));
  const double cy = std::fmax(r.lo.y, std::fmin(center.y, r.hi.y));
  const Vec2 closest{cx, cy};
  if (r.contains(center)) {
    const double inside = std::fmin(std::fmin(center.x - r.lo.x, r.hi.x - center.x),
                                    std::fmin(center.y - r.lo.y, r.hi.y - center.y));
    return radius + inside;
  }
  return radius - distance(center, closest);
}

}  // namespace evac
