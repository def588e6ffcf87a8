#pragma once

// 2D primitives shared by the simulator, renderer and scorer: vectors,
// angle wrapping, polyline corridors, ray casting against discs/stadiums,
// and closest-approach of linear motions.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace microdrive {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm2() const { return x * x + y * y; }
  double norm() const { return std::sqrt(norm2()); }
  Vec2 perp() const { return {-y, x}; }  // left normal
  bool operator==(const Vec2&) const = default;
};

inline Vec2 rotate(const Vec2& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

// World point -> ego frame (ego at `pos` with `heading`).
inline Vec2 to_ego_frame(const Vec2& p, const Vec2& pos, double heading) {
  return rotate(p - pos, -heading);
}

inline Vec2 to_world_frame(const Vec2& p, const Vec2& pos, double heading) {
  return pos + rotate(p, heading);
}

// ---------------------------------------------------------------------------
// Polyline with arclength parametrization.

class Polyline {
 public:
  Polyline() = default;

  explicit Polyline(std::vector<Vec2> pts) : pts_(std::move(pts)) {
    if (pts_.size() < 2) throw std::invalid_argument("Polyline needs >= 2 points");
    cum_.resize(pts_.size(), 0.0);
    for (size_t i = 1; i < pts_.size(); ++i) {
      cum_[i] = cum_[i - 1] + (pts_[i] - pts_[i - 1]).norm();
    }
  }

  double length() const { return cum_.back(); }
  const std::vector<Vec2>& points() const { return pts_; }

  // Segment index whose [cum_i, cum_{i+1}] contains s (clamped).
  size_t segment_of(double s) const {
    if (s <= 0.0) return 0;
    if (s >= cum_.back()) return pts_.size() - 2;
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
    return static_cast<size_t>(it - cum_.begin()) - 1;
  }

  Vec2 point_at(double s) const {
    s = std::clamp(s, 0.0, length());
    const size_t i = segment_of(s);
    const double seg = cum_[i + 1] - cum_[i];
    const double t = seg > 0.0 ? (s - cum_[i]) / seg : 0.0;
    return pts_[i] + (pts_[i + 1] - pts_[i]) * t;
  }

  double heading_at(double s) const {
    const size_t i = segment_of(std::clamp(s, 0.0, length()));
    const Vec2 d = pts_[i + 1] - pts_[i];
    return std::atan2(d.y, d.x);
  }

  Vec2 left_normal_at(double s) const {
    const double h = heading_at(s);
    return {-std::sin(h), std::cos(h)};
  }

  struct Projection {
    double s = 0.0;     // arclength of the closest point
    double dist = 0.0;  // distance to the closest point
  };

  Projection project(const Vec2& p) const {
    Projection best{0.0, kInf};
    for (size_t i = 0; i + 1 < pts_.size(); ++i) {
      const Vec2 a = pts_[i], b = pts_[i + 1];
      const Vec2 ab = b - a;
      const double len2 = ab.norm2();
      double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      const Vec2 q = a + ab * t;
      const double d = (p - q).norm();
      if (d < best.dist) {
        best.dist = d;
        best.s = cum_[i] + t * std::sqrt(len2);
      }
    }
    return best;
  }

  double distance(const Vec2& p) const { return project(p).dist; }

 private:
  std::vector<Vec2> pts_;
  std::vector<double> cum_;
};

// ---------------------------------------------------------------------------
// Ray casting. Directions are unit vectors; results are parameters t >= 0.

struct Interval {
  double lo = 0.0;
  double hi = -1.0;
  bool empty() const { return hi < lo; }
};

// {t : |o + t d - c| <= r}
inline Interval ray_circle_interval(const Vec2& o, const Vec2& d, const Vec2& c, double r) {
  const Vec2 oc = o - c;
  const double b = oc.dot(d);
  const double q = oc.norm2() - r * r;
  const double disc = b * b - q;
  if (disc < 0.0) return {};
  const double sq = std::sqrt(disc);
  return {-b - sq, -b + sq};
}

// Smallest t >= 0 at which the ray touches the disc; nullopt if it never does.
inline std::optional<double> ray_circle_first_hit(const Vec2& o, const Vec2& d, const Vec2& c,
                                                  double r) {
  const Interval iv = ray_circle_interval(o, d, c, r);
  if (iv.empty() || iv.hi < 0.0) return std::nullopt;
  return std::max(iv.lo, 0.0);
}

// {t : o + t d inside the oriented rectangle around segment AB, half width w}
inline Interval ray_rect_interval(const Vec2& o, const Vec2& d, const Vec2& a, const Vec2& b,
                                  double w) {
  const Vec2 ab = b - a;
  const double len = ab.norm();
  if (len <= 0.0) return {};
  const Vec2 u = ab / len;
  const Vec2 v = u.perp();
  // ray in (u, v) coordinates relative to a
  const Vec2 ro{(o - a).dot(u), (o - a).dot(v)};
  const Vec2 rd{d.dot(u), d.dot(v)};
  double lo = -kInf, hi = kInf;
  const double eps = 1e-15;
  // slab along u: 0 <= ro.x + t rd.x <= len
  if (std::abs(rd.x) < eps) {
    if (ro.x < 0.0 || ro.x > len) return {};
  } else {
    double t0 = (0.0 - ro.x) / rd.x, t1 = (len - ro.x) / rd.x;
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  }
  // slab along v: |ro.y + t rd.y| <= w
  if (std::abs(rd.y) < eps) {
    if (std::abs(ro.y) > w) return {};
  } else {
    double t0 = (-w - ro.y) / rd.y, t1 = (w - ro.y) / rd.y;
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  }
  if (hi < lo) return {};
  return {lo, hi};
}

// {t : dist(o + t d, segment AB) <= w}. A stadium is convex, so the set is a
// single interval: the hull of the rectangle and the two end discs.
inline Interval ray_stadium_interval(const Vec2& o, const Vec2& d, const Vec2& a, const Vec2& b,
                                     double w) {
  Interval out{kInf, -kInf};
  auto merge = [&out](const Interval& iv) {
    if (iv.empty()) return;
    out.lo = std::min(out.lo, iv.lo);
    out.hi = std::max(out.hi, iv.hi);
  };
  merge(ray_circle_interval(o, d, a, w));
  merge(ray_circle_interval(o, d, b, w));
  merge(ray_rect_interval(o, d, a, b, w));
  if (out.hi < out.lo) return {};
  return out;
}

// Distance along the ray from a point inside the corridor (within half_width
// of the polyline) to where it first leaves the corridor, capped at tmax.
inline double corridor_exit_distance(const Polyline& poly, double half_width, const Vec2& o,
                                     const Vec2& d, double tmax) {
  const auto& pts = poly.points();
  std::vector<Interval> ivs;
  ivs.reserve(pts.size());
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    Interval iv = ray_stadium_interval(o, d, pts[i], pts[i + 1], half_width);
    if (iv.empty() || iv.hi < 0.0 || iv.lo > tmax) continue;
    ivs.push_back(iv);
  }
  if (ivs.empty()) return 0.0;
  std::sort(ivs.begin(), ivs.end(), [](const Interval& x, const Interval& y) { return x.lo < y.lo; });
  // walk the union component containing t = 0
  double reach = -kInf;
  bool started = false;
  for (const Interval& iv : ivs) {
    if (!started) {
      if (iv.lo <= 0.0 && iv.hi >= 0.0) {
        started = true;
        reach = iv.hi;
      }
      continue;
    }
    if (iv.lo <= reach + 1e-12) {
      reach = std::max(reach, iv.hi);
    } else {
      break;
    }
    if (reach >= tmax) break;
  }
  if (!started) return 0.0;
  return std::min(reach, tmax);
}

// ---------------------------------------------------------------------------
// Linear relative motion p(t) = p0 + t v.

struct Approach {
  double t = 0.0;
  double dist = 0.0;
};

// Minimum of |p0 + t v| over t in [0, T].
inline Approach closest_approach(const Vec2& p0, const Vec2& v, double T) {
  const double vv = v.norm2();
  double t = 0.0;
  if (vv > 0.0) t = std::clamp(-p0.dot(v) / vv, 0.0, T);
  return {t, (p0 + v * t).norm()};
}

// Smallest t >= 0 with |p0 + t v| <= R; +inf if contact never happens.
inline double first_contact_time(const Vec2& p0, const Vec2& v, double R) {
  if (p0.norm() <= R) return 0.0;
  const double a = v.norm2();
  if (a <= 0.0) return kInf;
  const double b = p0.dot(v);
  const double c = p0.norm2() - R * R;
  const double disc = b * b - a * c;
  if (disc < 0.0) return kInf;
  const double t = (-b - std::sqrt(disc)) / a;
  return t >= 0.0 ? t : kInf;
}

}  // namespace microdrive
