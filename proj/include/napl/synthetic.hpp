#pragma once

// Deterministic desk-scale urban scenes. Each class owns one or more shape
// templates; a class with two templates of disjoint height ranges is
// "bimodal" and cannot be summarized by a single geometric pattern.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "napl/common.hpp"
#include "napl/point_cloud.hpp"
#include "napl/random.hpp"

namespace napl {

enum class ShapeFamily { Plane, Wall, Cylinder, Box, Column, Blob };

struct Range {
  double lo = 0;
  double hi = 0;
  bool overlaps(const Range& o) const { return lo <= o.hi && o.lo <= hi; }
};

/// Dimensions per family: `height` vertical extent, `width` radius for
/// Cylinder/Column/Blob and depth for Box, `length` horizontal extent for
/// Wall/Box. `points` is the per-instance point count before range falloff.
struct TemplateSpec {
  ShapeFamily family = ShapeFamily::Blob;
  Range height;
  Range width;
  Range length;
  Range points;
};

struct ClassSpec {
  std::string name;
  std::vector<TemplateSpec> templates;
  Range instances{1, 1};
  double intensity_mean = 0.5;
};

struct SyntheticSceneConfig {
  std::vector<ClassSpec> classes;
  double extent = 8.0;           // scene half-width in meters
  double intensity_noise = 0.15;
  double falloff_reference = 0;  // meters; 0 disables range-dependent sparsity
  double falloff_floor = 0.3;
  std::uint64_t seed = 0;

  int num_classes() const { return static_cast<int>(classes.size()); }

  std::vector<int> bimodal_classes() const {
    std::vector<int> out;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (classes[c].templates.size() == 2) out.push_back(static_cast<int>(c) + 1);
    }
    return out;
  }

  void validate() const {
    require(!classes.empty(), "synthetic config needs at least one class");
    for (const auto& cls : classes) {
      require(!cls.templates.empty(), "class '" + cls.name + "' has no template");
      require(cls.templates.size() <= 2, "class '" + cls.name + "' has more than two templates");
      if (cls.templates.size() == 2) {
        require(!cls.templates[0].height.overlaps(cls.templates[1].height),
                "bimodal class '" + cls.name + "' needs disjoint height ranges");
      }
      for (const auto& t : cls.templates) {
        require(t.points.lo >= 1 && t.points.hi >= t.points.lo, "class '" + cls.name + "' has invalid point range");
      }
      require(cls.instances.lo >= 0 && cls.instances.hi >= cls.instances.lo, "invalid instance range");
    }
    require(extent > 1.0, "scene extent too small");
  }

  /// Six classes: ground, building, pole, car, person (tall and short
  /// templates), vegetation.
  static SyntheticSceneConfig default_urban() {
    SyntheticSceneConfig cfg;
    cfg.extent = 8.0;
    cfg.falloff_reference = 4.0;
    cfg.falloff_floor = 0.35;
    cfg.classes = {
        {"ground", {{ShapeFamily::Plane, {0, 0}, {0, 0}, {0, 0}, {450, 600}}}, {1, 1}, 0.35},
        {"building", {{ShapeFamily::Wall, {2.5, 4.0}, {0, 0}, {4.0, 7.0}, {200, 280}}}, {1, 2}, 0.55},
        {"pole", {{ShapeFamily::Cylinder, {2.8, 4.5}, {0.06, 0.10}, {0, 0}, {50, 80}}}, {2, 4}, 0.45},
        {"car", {{ShapeFamily::Box, {1.3, 1.6}, {1.6, 1.9}, {3.8, 4.6}, {160, 240}}}, {1, 2}, 0.6},
        {"person",
         {{ShapeFamily::Column, {1.6, 1.9}, {0.20, 0.26}, {0, 0}, {70, 100}},
          {ShapeFamily::Column, {0.9, 1.2}, {0.17, 0.22}, {0, 0}, {50, 80}}},
         {2, 4},
         0.4},
        {"vegetation", {{ShapeFamily::Blob, {0, 0}, {0.35, 0.6}, {0, 0}, {60, 110}}}, {2, 4}, 0.3},
    };
    return cfg;
  }
};

namespace detail {

struct Placement {
  double x = 0, y = 0, yaw = 0;
};

inline void emit(PointCloud& pc, int label, double intensity_mean, double noise, Rng& rng, double x, double y,
                 double z) {
  pc.coords.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)});
  pc.intensity.push_back(static_cast<float>(std::clamp(normal(rng, intensity_mean, noise), 0.0, 1.0)));
  pc.labels.push_back(label);
}

inline double draw(Rng& rng, const Range& r) { return r.hi > r.lo ? uniform(rng, r.lo, r.hi) : r.lo; }

inline std::size_t draw_count(Rng& rng, const Range& r) {
  return static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(r.lo), static_cast<std::int64_t>(r.hi)));
}

inline double footprint(const TemplateSpec& t) {
  switch (t.family) {
    case ShapeFamily::Box: return 0.5 * std::hypot(t.length.hi, t.width.hi);
    case ShapeFamily::Blob:
    case ShapeFamily::Column:
    case ShapeFamily::Cylinder: return t.width.hi;
    default: return 0.0;
  }
}

inline void sample_template(PointCloud& pc, const TemplateSpec& t, const Placement& at, std::size_t count, int label,
                            const ClassSpec& cls, const SyntheticSceneConfig& cfg, Rng& rng) {
  const double noise = cfg.intensity_noise;
  const double cy = std::cos(at.yaw), sy = std::sin(at.yaw);
  auto put = [&](double lx, double ly, double z) {
    emit(pc, label, cls.intensity_mean, noise, rng, at.x + cy * lx - sy * ly, at.y + sy * lx + cy * ly, z);
  };
  switch (t.family) {
    case ShapeFamily::Plane: {
      // Radial density ~ 1/r, like rings of a rotating sensor.
      for (std::size_t i = 0; i < count; ++i) {
        const double r = uniform(rng, 0.8, cfg.extent);
        const double th = uniform(rng, 0, 2 * std::numbers::pi);
        emit(pc, label, cls.intensity_mean, noise, rng, r * std::cos(th), r * std::sin(th), normal(rng, 0, 0.02));
      }
      break;
    }
    case ShapeFamily::Wall: {
      const double len = draw(rng, t.length), h = draw(rng, t.height);
      for (std::size_t i = 0; i < count; ++i) {
        put(normal(rng, 0, 0.03), uniform(rng, -len / 2, len / 2), uniform(rng, 0.05, h));
      }
      break;
    }
    case ShapeFamily::Cylinder: {
      const double r = draw(rng, t.width), h = draw(rng, t.height);
      for (std::size_t i = 0; i < count; ++i) {
        const double th = uniform(rng, 0, 2 * std::numbers::pi);
        put(r * std::cos(th) + normal(rng, 0, 0.01), r * std::sin(th) + normal(rng, 0, 0.01), uniform(rng, 0.05, h));
      }
      break;
    }
    case ShapeFamily::Box: {
      const double len = draw(rng, t.length), wid = draw(rng, t.width), h = draw(rng, t.height);
      const double z0 = 0.25;
      const double a_top = len * wid, a_long = len * (h - z0), a_short = wid * (h - z0);
      const double total = a_top + 2 * a_long + 2 * a_short;
      for (std::size_t i = 0; i < count; ++i) {
        const double pick_face = uniform(rng, 0, total);
        double lx, ly, z;
        if (pick_face < a_top) {
          lx = uniform(rng, -len / 2, len / 2), ly = uniform(rng, -wid / 2, wid / 2), z = h;
        } else if (pick_face < a_top + 2 * a_long) {
          lx = uniform(rng, -len / 2, len / 2);
          ly = (pick_face < a_top + a_long ? -wid / 2 : wid / 2);
          z = uniform(rng, z0, h);
        } else {
          lx = (pick_face < a_top + 2 * a_long + a_short ? -len / 2 : len / 2);
          ly = uniform(rng, -wid / 2, wid / 2);
          z = uniform(rng, z0, h);
        }
        put(lx + normal(rng, 0, 0.01), ly + normal(rng, 0, 0.01), z + normal(rng, 0, 0.01));
      }
      break;
    }
    case ShapeFamily::Column: {
      const double r = draw(rng, t.width), h = draw(rng, t.height);
      for (std::size_t i = 0; i < count; ++i) {
        const double z = uniform(rng, 0.02, h);
        const double frac = z / h;
        const double rz = frac < 0.45 ? 0.7 * r : (frac < 0.85 ? r : 0.55 * r);
        const double th = uniform(rng, 0, 2 * std::numbers::pi);
        put(rz * std::cos(th) + normal(rng, 0, 0.01), rz * std::sin(th) + normal(rng, 0, 0.01), z);
      }
      break;
    }
    case ShapeFamily::Blob: {
      const double r = draw(rng, t.width);
      const double cz = 0.7 * r;
      std::size_t emitted = 0;
      while (emitted < count) {
        double dx = normal(rng), dy = normal(rng), dz = normal(rng);
        const double norm = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (norm < 1e-9) continue;
        const double rr = r * (1.0 + normal(rng, 0, 0.08));
        const double z = cz + rr * dz / norm;
        if (z < 0.02) continue;
        put(rr * dx / norm, rr * dy / norm, z);
        ++emitted;
      }
      break;
    }
  }
}

}  // namespace detail

/// Pure function of (cfg, seed). Points of every instance carry the label of
/// the class that owns the template.
inline PointCloud generate_synthetic_scene(const SyntheticSceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, seed));
  PointCloud pc;
  std::vector<std::array<double, 3>> occupied;  // x, y, radius

  auto place_free = [&](double radius) {
    detail::Placement p;
    for (int attempt = 0; attempt < 60; ++attempt) {
      const double r = uniform(rng, 1.5, cfg.extent - 1.2);
      const double th = uniform(rng, 0, 2 * std::numbers::pi);
      p = {r * std::cos(th), r * std::sin(th), uniform(rng, 0, 2 * std::numbers::pi)};
      bool clear = true;
      for (const auto& o : occupied) {
        if (std::hypot(p.x - o[0], p.y - o[1]) < radius + o[2] + 0.3) {
          clear = false;
          break;
        }
      }
      if (clear) break;
    }
    occupied.push_back({p.x, p.y, radius});
    return p;
  };

  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    const auto& cls = cfg.classes[c];
    const int label = static_cast<int>(c) + 1;
    const auto instances = static_cast<std::size_t>(
        uniform_int(rng, static_cast<std::int64_t>(cls.instances.lo), static_cast<std::int64_t>(cls.instances.hi)));
    for (std::size_t k = 0; k < instances; ++k) {
      // The first instances cycle through the templates so that a bimodal
      // class shows both modes whenever it has two or more instances.
      const std::size_t ti = k < cls.templates.size()
                                 ? k
                                 : static_cast<std::size_t>(uniform_int(rng, 0, cls.templates.size() - 1));
      const auto& tmpl = cls.templates[ti];
      std::size_t count = detail::draw_count(rng, tmpl.points);
      detail::Placement at;
      if (tmpl.family == ShapeFamily::Wall) {
        const double phi = uniform(rng, 0, 2 * std::numbers::pi);
        const double d = cfg.extent - 0.6;
        at = {d * std::cos(phi), d * std::sin(phi), phi};
      } else if (tmpl.family != ShapeFamily::Plane) {
        at = place_free(detail::footprint(tmpl));
      }
      if (cfg.falloff_reference > 0 && tmpl.family != ShapeFamily::Plane) {
        const double dist = std::max(1e-6, std::hypot(at.x, at.y));
        const double factor = std::clamp(cfg.falloff_reference / dist, cfg.falloff_floor, 1.0);
        count = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(count) * factor)));
      }
      detail::sample_template(pc, tmpl, at, count, label, cls, cfg, rng);
    }
  }
  return pc;
}

/// Random yaw about the vertical axis and a global scale in [1 − s, 1 + s].
inline PointCloud augment_scene(const PointCloud& pc, std::uint64_t seed, double scale_jitter = 0.05) {
  Rng rng(derive_seed(seed, 0xA06));
  const double yaw = uniform(rng, 0, 2 * std::numbers::pi);
  const double s = uniform(rng, 1.0 - scale_jitter, 1.0 + scale_jitter);
  const double c = std::cos(yaw), sn = std::sin(yaw);
  PointCloud out = pc;
  for (auto& p : out.coords) {
    const double x = p[0], y = p[1];
    p = {static_cast<float>(s * (c * x - sn * y)), static_cast<float>(s * (sn * x + c * y)),
         static_cast<float>(s * p[2])};
  }
  return out;
}

}  // namespace napl
