#include "scanner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <unordered_map>

#include "error.hpp"
#include "io.hpp"

namespace itnet {

namespace {

constexpr double kPi = std::numbers::pi;

// Surface primitives used to assemble the shape families. All are axis-aligned
// in the canonical frame (z up).
struct Box {
  Vec3 center;
  Vec3 half;
};

struct Tube {
  Vec3 center;       // middle of the axis segment
  int axis = 2;      // 0 = x, 1 = y, 2 = z
  double r_low = 0;  // radius at the low end of the axis
  double r_high = 0;
  double half_length = 0;
  bool cap_low = true;
  bool cap_high = true;
};

class ShapeBuilder {
 public:
  void box(Vec3 center, Vec3 half) { boxes_.push_back({center, half}); }
  void tube(const Tube& t) { tubes_.push_back(t); }

  std::vector<Vec3> sample(std::size_t n, Rng& rng) const {
    std::vector<double> areas;
    for (const auto& b : boxes_) areas.push_back(box_area(b));
    for (const auto& t : tubes_) areas.push_back(tube_area(t));
    std::vector<double> cumulative(areas.size());
    double total = 0.0;
    for (std::size_t i = 0; i < areas.size(); ++i) cumulative[i] = (total += areas[i]);

    std::vector<Vec3> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double u = rng.uniform() * total;
      const std::size_t i = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                                      cumulative.begin());
      const std::size_t idx = std::min(i, areas.size() - 1);
      if (idx < boxes_.size()) {
        out.push_back(sample_box(boxes_[idx], rng));
      } else {
        out.push_back(sample_tube(tubes_[idx - boxes_.size()], rng));
      }
    }
    return out;
  }

 private:
  static double box_area(const Box& b) {
    const auto& h = b.half;
    return 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]);
  }

  static Vec3 sample_box(const Box& b, Rng& rng) {
    const auto& h = b.half;
    const double a[3] = {h[1] * h[2], h[0] * h[2], h[0] * h[1]};  // face pair normal to x, y, z
    const double u = rng.uniform() * (a[0] + a[1] + a[2]);
    const int axis = u < a[0] ? 0 : (u < a[0] + a[1] ? 1 : 2);
    Vec3 p;
    for (int k = 0; k < 3; ++k) p[static_cast<std::size_t>(k)] = rng.uniform(-1.0, 1.0) * h[static_cast<std::size_t>(k)];
    p[static_cast<std::size_t>(axis)] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * h[static_cast<std::size_t>(axis)];
    return b.center + p;
  }

  static double side_area(const Tube& t) {
    const double slant = std::hypot(2.0 * t.half_length, t.r_high - t.r_low);
    return kPi * (t.r_low + t.r_high) * slant;
  }

  static double tube_area(const Tube& t) {
    double a = side_area(t);
    if (t.cap_low) a += kPi * t.r_low * t.r_low;
    if (t.cap_high) a += kPi * t.r_high * t.r_high;
    return a;
  }

  static Vec3 place(const Tube& t, double along, double radial_a, double radial_b) {
    Vec3 local{};
    const int a1 = (t.axis + 1) % 3;
    const int a2 = (t.axis + 2) % 3;
    local[static_cast<std::size_t>(t.axis)] = along;
    local[static_cast<std::size_t>(a1)] = radial_a;
    local[static_cast<std::size_t>(a2)] = radial_b;
    return t.center + local;
  }

  static Vec3 sample_tube(const Tube& t, Rng& rng) {
    const double side = side_area(t);
    const double low = t.cap_low ? kPi * t.r_low * t.r_low : 0.0;
    const double high = t.cap_high ? kPi * t.r_high * t.r_high : 0.0;
    const double u = rng.uniform() * (side + low + high);
    const double phi = 2.0 * kPi * rng.uniform();
    if (u < side) {
      // Radius varies linearly; weight by radius so density is uniform on the cone.
      double s;
      if (std::abs(t.r_high - t.r_low) < 1e-12) {
        s = rng.uniform();
      } else {
        const double r0 = t.r_low, r1 = t.r_high;
        const double v = rng.uniform();
        s = (std::sqrt(r0 * r0 + v * (r1 * r1 - r0 * r0)) - r0) / (r1 - r0);
      }
      const double r = t.r_low + s * (t.r_high - t.r_low);
      return place(t, -t.half_length + 2.0 * s * t.half_length, r * std::cos(phi), r * std::sin(phi));
    }
    const bool on_low = u < side + low;
    const double radius = (on_low ? t.r_low : t.r_high) * std::sqrt(rng.uniform());
    return place(t, on_low ? -t.half_length : t.half_length, radius * std::cos(phi), radius * std::sin(phi));
  }

  std::vector<Box> boxes_;
  std::vector<Tube> tubes_;
};

void build_family(ShapeFamily family, Rng& rng, ShapeBuilder& s) {
  auto U = [&](double lo, double hi) { return rng.uniform(lo, hi); };
  switch (family) {
    case ShapeFamily::Box: {
      s.box({0, 0, 0}, {U(0.30, 0.50), U(0.15, 0.30), U(0.08, 0.18)});
      break;
    }
    case ShapeFamily::Cylinder: {
      const double r = U(0.2, 0.35);
      s.tube({{0, 0, 0}, 2, r, r, U(0.4, 0.7), true, true});
      break;
    }
    case ShapeFamily::LBracket: {
      const double length = U(0.8, 1.2), width = U(0.3, 0.5), thick = U(0.05, 0.10), rise = U(0.5, 0.9);
      s.box({0, 0, thick / 2}, {length / 2, width / 2, thick / 2});
      s.box({-length / 2 + thick / 2, 0, thick + rise / 2}, {thick / 2, width / 2, rise / 2});
      break;
    }
    case ShapeFamily::Table: {
      const double w = U(1.0, 1.4), d = U(0.6, 0.9), h = U(0.5, 0.8), leg = U(0.03, 0.06), top = 0.04;
      s.box({0, 0, h + top / 2}, {w / 2, d / 2, top / 2});
      for (int sx = -1; sx <= 1; sx += 2)
        for (int sy = -1; sy <= 1; sy += 2)
          s.box({sx * (w / 2 - 2 * leg), sy * (d / 2 - 2 * leg), h / 2}, {leg, leg, h / 2});
      break;
    }
    case ShapeFamily::Chair: {
      const double w = U(0.5, 0.7), d = U(0.5, 0.65), h = U(0.4, 0.55), back = U(0.5, 0.8), leg = 0.03, seat = 0.05;
      s.box({0, 0, h + seat / 2}, {w / 2, d / 2, seat / 2});
      for (int sx = -1; sx <= 1; sx += 2)
        for (int sy = -1; sy <= 1; sy += 2) s.box({sx * (w / 2 - leg), sy * (d / 2 - leg), h / 2}, {leg, leg, h / 2});
      s.box({0, -d / 2 + seat / 2, h + seat + back / 2}, {w / 2, seat / 2, back / 2});
      break;
    }
    case ShapeFamily::Winged: {
      const double length = U(1.4, 1.8), radius = U(0.07, 0.11), span = U(1.2, 1.6), chord = U(0.2, 0.3);
      const double fin = U(0.2, 0.35);
      s.tube({{0, 0, 0}, 0, radius, radius * 0.6, length / 2, true, true});
      s.box({length * 0.08, 0, 0}, {chord / 2, span / 2, 0.015});
      s.box({-length / 2 + chord * 0.4, 0, radius + fin / 2}, {chord * 0.35, 0.012, fin / 2});
      s.box({-length / 2 + chord * 0.35, 0, radius * 0.5}, {chord * 0.3, span * 0.18, 0.012});
      break;
    }
    case ShapeFamily::Mug: {
      const double r = U(0.25, 0.35), h = U(0.5, 0.8), grip = U(0.12, 0.2), bar = 0.03;
      s.tube({{0, 0, h / 2}, 2, r, r, h / 2, true, false});
      const double hz = h * 0.5;
      s.box({r + grip, 0, hz}, {bar, bar, h * 0.3});
      s.box({r + grip / 2, 0, hz + h * 0.3}, {grip / 2 + bar, bar, bar});
      s.box({r + grip / 2, 0, hz - h * 0.3}, {grip / 2 + bar, bar, bar});
      break;
    }
    case ShapeFamily::Lamp: {
      const double base = U(0.2, 0.3), pole = U(0.8, 1.2), shade_low = U(0.3, 0.4), shade_high = U(0.12, 0.2);
      const double shade_h = U(0.25, 0.35);
      s.tube({{0, 0, 0.025}, 2, base, base, 0.025, true, true});
      s.tube({{0, 0, 0.05 + pole / 2}, 2, 0.025, 0.025, pole / 2, false, false});
      s.tube({{0, 0, 0.05 + pole - shade_h * 0.3 + shade_h / 2}, 2, shade_low, shade_high, shade_h / 2, false, false});
      break;
    }
  }
}

}  // namespace

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::Box: return "box";
    case ShapeFamily::Cylinder: return "cylinder";
    case ShapeFamily::LBracket: return "l_bracket";
    case ShapeFamily::Table: return "table";
    case ShapeFamily::Chair: return "chair";
    case ShapeFamily::Winged: return "winged";
    case ShapeFamily::Mug: return "mug";
    case ShapeFamily::Lamp: return "lamp";
  }
  return "?";
}

std::vector<ShapeFamily> all_families() {
  return {ShapeFamily::Box,   ShapeFamily::Cylinder, ShapeFamily::LBracket, ShapeFamily::Table,
          ShapeFamily::Chair, ShapeFamily::Winged,   ShapeFamily::Mug,      ShapeFamily::Lamp};
}

ShapeFamily parse_family(const std::string& name) {
  for (auto f : all_families())
    if (name == family_name(f)) return f;
  throw Error(ErrorCode::UnknownFamily, "unknown shape family '" + name + "'");
}

PointCloud generate_shape(ShapeFamily family, std::uint64_t seed, std::size_t num_points) {
  if (num_points == 0) throw Error(ErrorCode::Config, "shape needs at least one point");
  Rng rng(derive_seed(seed, 0x5a4e + static_cast<std::uint64_t>(family)));
  ShapeBuilder builder;
  build_family(family, rng, builder);
  PointCloud cloud;
  cloud.frame = "canonical";
  cloud.points = builder.sample(num_points, rng);

  Vec3 c{0, 0, 0};
  for (const auto& p : cloud.points) c = c + p;
  c = (1.0 / static_cast<double>(num_points)) * c;
  double max_norm = 0.0;
  for (auto& p : cloud.points) {
    p = p - c;
    max_norm = std::max(max_norm, norm(p));
  }
  if (max_norm > 0.0)
    for (auto& p : cloud.points) p = (1.0 / max_norm) * p;
  return cloud;
}

RigidTransform sample_random_pose(Rng& rng, double translation_range) {
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const UnitQuaternion q = quat_normalize(b * std::cos(2 * kPi * u3), a * std::sin(2 * kPi * u2),
                                          a * std::cos(2 * kPi * u2), b * std::sin(2 * kPi * u3));
  const Vec3 t{rng.uniform(-translation_range, translation_range), rng.uniform(-translation_range, translation_range),
               rng.uniform(-translation_range, translation_range)};
  return RigidTransform(q, t);
}

RigidTransform sample_random_pose(std::uint64_t seed, double translation_range) {
  Rng rng(seed);
  return sample_random_pose(rng, translation_range);
}

RigidTransform sample_random_pose(Rng& rng, double translation_range, double max_rotation_deg) {
  if (max_rotation_deg >= 180.0) return sample_random_pose(rng, translation_range);
  Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
  const double angle = rng.uniform(0.0, max_rotation_deg) * kPi / 180.0;
  const Vec3 t{rng.uniform(-translation_range, translation_range), rng.uniform(-translation_range, translation_range),
               rng.uniform(-translation_range, translation_range)};
  return RigidTransform(quat_from_axis_angle(axis, angle), t);
}

void ScanConfig::validate() const {
  if (!(pixel_size > 0.0)) throw Error(ErrorCode::Config, "pixel_size must be > 0");
  if (image_size < 8) throw Error(ErrorCode::Config, "image_size must be >= 8");
  if (!(focal_length > 0.0)) throw Error(ErrorCode::Config, "focal_length must be > 0");
  if (!(camera_distance_min > 0.0) || camera_distance_max < camera_distance_min)
    throw Error(ErrorCode::Config, "camera distance range must be a positive interval");
}

namespace {

ScanResult collect(const PointCloud& source, const std::vector<std::size_t>& indices, const std::string& frame) {
  if (indices.empty()) throw Error(ErrorCode::EmptyScan, "no point survived the scan");
  ScanResult out;
  out.indices = indices;
  std::sort(out.indices.begin(), out.indices.end());
  out.cloud.frame = frame;
  out.cloud.points.reserve(out.indices.size());
  for (auto i : out.indices) out.cloud.points.push_back(source.points[i]);
  return out;
}

}  // namespace

ScanResult orthographic_scan(const PointCloud& cloud, double pixel_size) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyScan, "cannot scan an empty cloud");
  if (!(pixel_size > 0.0)) throw Error(ErrorCode::Config, "pixel_size must be > 0");
  std::map<std::pair<long long, long long>, std::size_t> zbuffer;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const std::pair<long long, long long> key{static_cast<long long>(std::floor(p[0] / pixel_size)),
                                              static_cast<long long>(std::floor(p[1] / pixel_size))};
    auto [it, inserted] = zbuffer.try_emplace(key, i);
    if (!inserted && p[2] < cloud.points[it->second][2]) it->second = i;
  }
  std::vector<std::size_t> kept;
  kept.reserve(zbuffer.size());
  for (const auto& [key, idx] : zbuffer) kept.push_back(idx);
  return collect(cloud, kept, cloud.frame);
}

ScanResult perspective_scan(const PointCloud& cloud, const ScanConfig& cfg, const RigidTransform& camera_from_world) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyScan, "cannot scan an empty cloud");
  cfg.validate();
  const double half = 0.5 * cfg.image_size;
  std::vector<std::size_t> zbuffer(static_cast<std::size_t>(cfg.image_size) * static_cast<std::size_t>(cfg.image_size),
                                   SIZE_MAX);
  PointCloud camera = transform_points(camera_from_world, cloud);
  camera.frame = "camera";
  for (std::size_t i = 0; i < camera.size(); ++i) {
    const auto& p = camera.points[i];
    if (!(p[2] > 1e-9)) continue;
    const double u = cfg.focal_length * p[0] / p[2] + half;
    const double v = cfg.focal_length * p[1] / p[2] + half;
    if (u < 0.0 || v < 0.0 || u >= cfg.image_size || v >= cfg.image_size) continue;
    const std::size_t pixel = static_cast<std::size_t>(v) * static_cast<std::size_t>(cfg.image_size) + static_cast<std::size_t>(u);
    std::size_t& slot = zbuffer[pixel];
    if (slot == SIZE_MAX || p[2] < camera.points[slot][2]) slot = i;
  }
  std::vector<std::size_t> kept;
  for (auto idx : zbuffer)
    if (idx != SIZE_MAX) kept.push_back(idx);
  return collect(camera, kept, "camera");
}

PointCloud fuse_views(const std::vector<ViewScan>& scans) {
  if (scans.empty() || scans.size() > 4) throw Error(ErrorCode::Config, "fusion takes 1 to 4 scans");
  PointCloud out;
  out.frame = scans.front().cloud.frame;
  for (const auto& s : scans) {
    const PointCloud moved = transform_points(s.to_first, s.cloud);
    out.points.insert(out.points.end(), moved.points.begin(), moved.points.end());
  }
  return out;
}

std::vector<std::size_t> resample_indices(std::size_t available, std::size_t target, Rng& rng) {
  if (available == 0) throw Error(ErrorCode::EmptyScan, "nothing to resample");
  std::vector<std::size_t> idx(available);
  for (std::size_t i = 0; i < available; ++i) idx[i] = i;
  if (available >= target) {
    // partial Fisher-Yates, then restore scan order
    for (std::size_t i = 0; i < target; ++i) std::swap(idx[i], idx[i + rng.below(available - i)]);
    idx.resize(target);
    std::sort(idx.begin(), idx.end());
    return idx;
  }
  while (idx.size() < target) idx.push_back(rng.below(available));
  return idx;
}

namespace {

struct SplitLayout {
  std::size_t n_train = 0, n_val = 0, n_test = 0;
};

SplitLayout layout(const DatasetSpec& spec) {
  SplitLayout s;
  s.n_test = static_cast<std::size_t>(std::llround(static_cast<double>(spec.n_instances) * spec.test_fraction));
  s.n_val = static_cast<std::size_t>(std::llround(static_cast<double>(spec.n_instances) * spec.val_fraction));
  if (s.n_test + s.n_val > spec.n_instances) throw Error(ErrorCode::Config, "split fractions exceed dataset size");
  s.n_train = spec.n_instances - s.n_test - s.n_val;
  return s;
}

std::string index_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return buf;
}

}  // namespace

GeneratedInstance generate_instance(const DatasetSpec& spec, std::size_t index) {
  if (spec.families.empty()) throw Error(ErrorCode::Config, "no shape families selected");
  if (spec.scans_per_shape == 0) throw Error(ErrorCode::Config, "scans_per_shape must be >= 1");
  spec.scan.validate();
  const SplitLayout split = layout(spec);
  std::string split_name;
  std::size_t local = index;
  std::uint64_t split_tag = 0;
  if (index < split.n_train) {
    split_name = "train";
  } else if (index < split.n_train + split.n_val) {
    split_name = "val";
    local = index - split.n_train;
    split_tag = 1;
  } else {
    split_name = "test";
    local = index - split.n_train - split.n_val;
    split_tag = 2;
  }
  const std::size_t shape_index = local / spec.scans_per_shape;
  const int label = static_cast<int>(shape_index % spec.families.size());
  const ShapeFamily family = spec.families[static_cast<std::size_t>(label)];
  const std::uint64_t shape_seed = derive_seed(spec.seed, (split_tag << 40) ^ (shape_index + 1));
  const PointCloud shape = generate_shape(family, shape_seed, spec.shape_points);

  Rng rng(derive_seed(spec.seed ^ 0x1f2e3d4c5b6a7988ULL, index));
  PointCloud sensor;
  RigidTransform sensor_to_canonical;
  int views = 1;
  if (spec.scan.mode == ScanMode::Orthographic) {
    const RigidTransform pose = sample_random_pose(rng, spec.translation_range, spec.max_rotation_deg);
    sensor = orthographic_scan(transform_points(pose, shape), spec.scan.pixel_size).cloud;
    sensor.frame = "sensor";
    sensor_to_canonical = rigid_inverse(pose);
  } else {
    views = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::clamp(spec.max_views, 1, 4))));
    const double distance = rng.uniform(spec.scan.camera_distance_min, spec.scan.camera_distance_max);
    const RigidTransform first(sample_random_pose(rng, 0.0, spec.max_rotation_deg).q(), {0.0, 0.0, distance});
    std::vector<ViewScan> scans;
    for (int v = 0; v < views; ++v) {
      RigidTransform camera = first;
      if (v > 0) {
        Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
        const double angle = rng.uniform(0.0, 30.0) * kPi / 180.0;
        const RigidTransform orbit(quat_from_axis_angle(axis, angle), {0, 0, 0});
        camera = rigid_compose(first, rigid_inverse(orbit));
      }
      ScanResult scan = perspective_scan(shape, spec.scan, camera);
      scans.push_back({std::move(scan.cloud), rigid_compose(first, rigid_inverse(camera))});
    }
    sensor = fuse_views(scans);
    sensor.frame = "sensor";
    sensor_to_canonical = rigid_inverse(first);
  }

  const auto idx = resample_indices(sensor.size(), spec.points_per_cloud, rng);
  PointCloud stored;
  stored.frame = "sensor";
  stored.points.reserve(idx.size());
  for (auto i : idx) stored.points.push_back(sensor.points[i]);

  if (spec.recenter) {
    Vec3 c{0, 0, 0};
    for (const auto& p : stored.points) c = c + p;
    c = (1.0 / static_cast<double>(stored.size())) * c;
    for (auto& p : stored.points) p = p - c;
    sensor_to_canonical = rigid_compose(sensor_to_canonical, RigidTransform::translation(c));
  }

  GeneratedInstance out;
  out.record.path = "clouds/" + split_name + "/" + index_name(index) + ".xyz";
  out.record.label = label;
  out.record.pose = sensor_to_canonical;
  out.record.shape_seed = shape_seed;
  out.record.n_views = views;
  out.record.split = split_name;
  out.cloud = std::move(stored);
  return out;
}

std::string manifest_header(const DatasetSpec& spec) {
  std::string labels;
  for (std::size_t i = 0; i < spec.families.size(); ++i) {
    if (i) labels += ",";
    labels += family_name(spec.families[i]);
  }
  std::string h = "# itnet-manifest v1";
  h += "\tlabels=" + labels;
  h += std::string("\tmode=") + (spec.scan.mode == ScanMode::Orthographic ? "orthographic" : "perspective");
  h += "\tpixel_size=" + format_number(spec.scan.pixel_size);
  h += "\timage_size=" + std::to_string(spec.scan.image_size);
  h += "\tfocal_length=" + format_number(spec.scan.focal_length);
  h += "\tcamera_distance=" + format_number(spec.scan.camera_distance_min) + ":" +
       format_number(spec.scan.camera_distance_max);
  h += "\tpoints=" + std::to_string(spec.points_per_cloud);
  h += "\tseed=" + std::to_string(spec.seed);
  if (spec.max_rotation_deg < 180.0) h += "\tmax_rotation_deg=" + format_number(spec.max_rotation_deg);
  h += spec.scan.mode == ScanMode::Orthographic ? "\tz=orthographic keeps min z (camera on -z side)"
                                                : "\tz=perspective +z forward";
  return h;
}

std::vector<DatasetRecord> build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir, int threads) {
  if (spec.n_instances < 1) throw Error(ErrorCode::Config, "dataset needs at least one instance");
  spec.scan.validate();
  (void)layout(spec);
  std::error_code ec;
  for (const char* split : {"train", "val", "test"}) {
    std::filesystem::create_directories(out_dir / "clouds" / split, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + (out_dir / "clouds" / split).string() + ": " + ec.message());
  }
  std::vector<DatasetRecord> records(spec.n_instances);
  parallel_for(spec.n_instances, threads, [&](std::size_t i) {
    GeneratedInstance inst = generate_instance(spec, i);
    write_cloud(out_dir / inst.record.path, inst.cloud);
    records[i] = std::move(inst.record);
  });

  const std::string header = manifest_header(spec);
  write_manifest(out_dir / "manifest.tsv", header, records);
  for (const char* split : {"train", "val", "test"}) {
    std::vector<DatasetRecord> subset;
    for (const auto& r : records)
      if (r.split == split) subset.push_back(r);
    write_manifest(out_dir / (std::string(split) + ".tsv"), header, subset);
  }
  return records;
}

}  // namespace itnet
