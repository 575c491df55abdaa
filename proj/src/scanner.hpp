#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "random.hpp"

namespace itnet {

enum class ShapeFamily { Box, Cylinder, LBracket, Table, Chair, Winged, Mug, Lamp };

inline constexpr int kFamilyCount = 8;
const char* family_name(ShapeFamily f);
/// Throws UnknownFamily.
ShapeFamily parse_family(const std::string& name);
std::vector<ShapeFamily> all_families();

/// Surface samples of a randomized member of `family`, centroid at the origin
/// and max point norm exactly 1.
PointCloud generate_shape(ShapeFamily family, std::uint64_t seed, std::size_t num_points = 2048);

/// Uniform rotation (via a uniform unit quaternion) and translation uniform in
/// [-translation_range, translation_range]^3.
RigidTransform sample_random_pose(Rng& rng, double translation_range = 0.5);
RigidTransform sample_random_pose(std::uint64_t seed, double translation_range = 0.5);
/// max_rotation_deg >= 180 is the uniform case above; smaller caps draw a
/// uniform axis and an angle uniform in [0, max_rotation_deg].
RigidTransform sample_random_pose(Rng& rng, double translation_range, double max_rotation_deg);

enum class ScanMode { Orthographic, Perspective };

struct ScanConfig {
  ScanMode mode = ScanMode::Orthographic;
  double pixel_size = 0.02;
  int image_size = 64;
  double focal_length = 64.0;
  double camera_distance_min = 2.0;
  double camera_distance_max = 4.0;

  void validate() const;
};

struct ScanResult {
  PointCloud cloud;
  /// Indices into the scanned cloud, ascending.
  std::vector<std::size_t> indices;
};

/// Projects onto the xy-plane with square pixels; per pixel keeps the point of
/// smallest z (camera on the -z side). Ties go to the lowest index.
ScanResult orthographic_scan(const PointCloud& cloud, double pixel_size);

/// Pinhole z-buffer scan. `camera_from_world` maps cloud coordinates into the
/// camera frame (+z forward); output points are in the camera frame.
ScanResult perspective_scan(const PointCloud& cloud, const ScanConfig& cfg, const RigidTransform& camera_from_world);

struct ViewScan {
  PointCloud cloud;
  /// Maps this scan's frame into the first camera's frame.
  RigidTransform to_first;
};

/// Expresses every scan in the first camera frame and concatenates them.
PointCloud fuse_views(const std::vector<ViewScan>& scans);

/// Subsample without replacement, or pad by sampling with replacement.
std::vector<std::size_t> resample_indices(std::size_t available, std::size_t target, Rng& rng);

struct DatasetSpec {
  std::size_t n_instances = 100;
  std::vector<ShapeFamily> families = all_families();
  ScanConfig scan;
  std::uint64_t seed = 0;
  std::size_t points_per_cloud = 1024;
  std::size_t shape_points = 2048;
  std::size_t scans_per_shape = 4;
  int max_views = 1;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  double translation_range = 0.5;
  /// Rotation cap for sampled poses (first camera in perspective mode).
  double max_rotation_deg = 180.0;
  /// Move the stored cloud's centroid to the origin (folded into the pose).
  bool recenter = false;
};

struct DatasetRecord {
  std::string path;  // relative to the manifest directory
  int label = 0;
  RigidTransform pose;  // stored sensor-frame cloud -> canonical shape frame
  std::uint64_t shape_seed = 0;
  int n_views = 1;
  std::string split;
};

struct GeneratedInstance {
  DatasetRecord record;
  PointCloud cloud;
};

/// Deterministic single instance; `index` addresses the instance within the
/// dataset described by `spec`.
GeneratedInstance generate_instance(const DatasetSpec& spec, std::size_t index);

/// Writes clouds and manifests under `out_dir`: manifest.tsv (all records),
/// train.tsv, val.tsv, test.tsv. Returns the records in manifest order.
std::vector<DatasetRecord> build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir,
                                         int threads = 0);

std::string manifest_header(const DatasetSpec& spec);

}  // namespace itnet
