#pragma once

// Closed-form intensity shapes (bumps, rings, bands on a constant floor)
// and the Setting-A style scenario presets built from them.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpmppp/errors.hpp"
#include "dpmppp/pointprocess.hpp"

namespace dpmppp {

struct ShapeComponent {
  enum class Kind { bump, ring, band };
  Kind kind = Kind::bump;
  double weight = 1.0;
  std::vector<double> center;  // bump, ring
  std::vector<double> sd;      // bump, one per axis
  double radius = 0.0;         // ring
  double width = 0.1;          // ring, band
  int axis = 0;                // band
  double position = 0.5;       // band

  /// Peak value is `weight`.
  [[nodiscard]] double operator()(std::span<const double> y) const {
    switch (kind) {
      case Kind::bump: {
        double q = 0.0;
        for (std::size_t h = 0; h < center.size(); ++h) {
          const double u = (y[h] - center[h]) / sd[h];
          q += u * u;
        }
        return weight * std::exp(-0.5 * q);
      }
      case Kind::ring: {
        double r2 = 0.0;
        for (std::size_t h = 0; h < center.size(); ++h) r2 += (y[h] - center[h]) * (y[h] - center[h]);
        const double u = (std::sqrt(r2) - radius) / width;
        return weight * std::exp(-0.5 * u * u);
      }
      case Kind::band: {
        const double u = (y[static_cast<std::size_t>(axis)] - position) / width;
        return weight * std::exp(-0.5 * u * u);
      }
    }
    return 0.0;
  }

  void validate(int dims) const {
    if (!(weight >= 0.0)) throw ConfigError("shape: component weight must be >= 0");
    switch (kind) {
      case Kind::bump:
        if (static_cast<int>(center.size()) != dims || static_cast<int>(sd.size()) != dims)
          throw ConfigError("shape: bump needs center and sd of the domain dimension");
        for (const double s : sd)
          if (!(s > 0.0)) throw ConfigError("shape: bump sd must be > 0");
        break;
      case Kind::ring:
        if (static_cast<int>(center.size()) != dims) throw ConfigError("shape: ring center dimension");
        if (!(width > 0.0) || !(radius >= 0.0)) throw ConfigError("shape: ring needs width > 0, radius >= 0");
        break;
      case Kind::band:
        if (axis < 0 || axis >= dims) throw ConfigError("shape: band axis out of range");
        if (!(width > 0.0)) throw ConfigError("shape: band width must be > 0");
        break;
    }
  }
};

/// lambda(y) = c * (base + sum_c f_c(y)) with c chosen so that the integral
/// over the domain equals `mass`.
struct ShapeIntensity {
  double base = 0.0;
  std::vector<ShapeComponent> components;
  double mass = 0.0;
};

inline IntensitySpec make_shape_intensity(const ShapeIntensity& shape, const Domain& domain) {
  check_domain(domain);
  if (!(shape.base >= 0.0)) throw ConfigError("shape: base must be >= 0");
  if (!(shape.mass >= 0.0)) throw ConfigError("shape: mass must be >= 0");
  const int H = static_cast<int>(domain.size());
  double peak = shape.base;
  for (const auto& c : shape.components) {
    c.validate(H);
    peak += c.weight;
  }
  if (shape.mass == 0.0 || peak == 0.0) return IntensitySpec::constant(0.0, domain);
  auto raw = [shape](std::span<const double> y) {
    double v = shape.base;
    for (const auto& c : shape.components) v += c(y);
    return v;
  };
  const double integral = integrated_intensity(
      IntensitySpec::closed_form(raw, 1.02 * peak, domain, 64));
  if (!(integral > 0.0)) throw ConfigError("shape: intensity integrates to zero");
  const double scale = shape.mass / integral;
  auto f = [raw, scale](std::span<const double> y) { return scale * raw(y); };
  return IntensitySpec::closed_form(f, 1.02 * scale * peak, domain);
}

struct ScenarioConfig {
  std::string name = "custom";
  Domain domain{{0.0, 1.0}, {0.0, 1.0}};
  std::vector<std::array<ShapeIntensity, 2>> clusters;
  std::vector<int> sizes;
  std::pair<double, double> offset_range{1.0, 1.0};
  std::uint64_t seed = 0;

  void validate() const {
    check_domain(domain);
    if (clusters.empty()) throw ConfigError("scenario: no clusters");
    if (sizes.size() != clusters.size()) throw ConfigError("scenario: sizes must align with clusters");
    if (!(offset_range.first > 0.0) || !(offset_range.second >= offset_range.first))
      throw ConfigError("scenario: offset range needs 0 < lo <= hi");
  }
};

inline std::vector<ClusterSpec> build_cluster_specs(const ScenarioConfig& sc) {
  sc.validate();
  std::vector<ClusterSpec> out;
  for (const auto& c : sc.clusters)
    out.push_back({make_shape_intensity(c[0], sc.domain), make_shape_intensity(c[1], sc.domain)});
  return out;
}

inline Dataset simulate(const ScenarioConfig& sc, int jobs = 1) {
  return generate_dataset(build_cluster_specs(sc), sc.sizes, sc.offset_range, sc.seed, jobs);
}

namespace shapes {

inline ShapeComponent bump(double cx, double cy, double sd, double w = 1.0) {
  ShapeComponent c;
  c.kind = ShapeComponent::Kind::bump;
  c.weight = w;
  c.center = {cx, cy};
  c.sd = {sd, sd};
  return c;
}

inline ShapeComponent ring(double cx, double cy, double radius, double width, double w = 1.0) {
  ShapeComponent c;
  c.kind = ShapeComponent::Kind::ring;
  c.weight = w;
  c.center = {cx, cy};
  c.radius = radius;
  c.width = width;
  return c;
}

inline ShapeComponent band(int axis, double position, double width, double w = 1.0) {
  ShapeComponent c;
  c.kind = ShapeComponent::Kind::band;
  c.weight = w;
  c.axis = axis;
  c.position = position;
  c.width = width;
  return c;
}

}  // namespace shapes

enum class SettingScale { full, desk, reduced };

/// Four clusters on the unit square with unit total mass per cluster, so a
/// subject expects about T_i events. Clusters 0 and 2 swap their mark
/// surfaces; cluster 1 pairs a band with a ring; cluster 3 is multimodal.
inline std::vector<std::array<ShapeIntensity, 2>> setting_a_clusters() {
  using namespace shapes;
  const double floor = 0.1;
  std::vector<std::array<ShapeIntensity, 2>> c(4);
  c[0] = {ShapeIntensity{floor, {bump(0.3, 0.3, 0.13)}, 0.5},
          ShapeIntensity{floor, {bump(0.7, 0.7, 0.13)}, 0.5}};
  c[1] = {ShapeIntensity{floor, {band(1, 0.5, 0.09)}, 0.55},
          ShapeIntensity{floor, {ring(0.5, 0.5, 0.32, 0.07)}, 0.45}};
  c[2] = {c[0][1], c[0][0]};
  c[3] = {ShapeIntensity{floor, {bump(0.2, 0.8, 0.11), bump(0.8, 0.2, 0.11), bump(0.5, 0.5, 0.11, 0.7)}, 0.5},
          ShapeIntensity{floor, {bump(0.25, 0.25, 0.11), bump(0.75, 0.75, 0.11)}, 0.5}};
  return c;
}

inline ScenarioConfig setting_a(SettingScale scale, std::uint64_t seed) {
  ScenarioConfig sc;
  sc.seed = seed;
  sc.clusters = setting_a_clusters();
  switch (scale) {
    case SettingScale::full:
      sc.name = "setting_a_full";
      sc.sizes = {32, 59, 40, 43};
      sc.offset_range = {125.0, 1200.0};
      break;
    case SettingScale::desk:
      sc.name = "setting_a_desk";
      sc.sizes = {7, 14, 9, 10};
      sc.offset_range = {20.0, 380.0};
      break;
    case SettingScale::reduced:
      sc.name = "setting_a_reduced";
      sc.sizes = {7, 14, 9, 10};
      sc.offset_range = {20.0 / 3.0, 380.0 / 3.0};
      break;
  }
  return sc;
}

}  // namespace dpmppp
