#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "geometry.hpp"
#include "scanner.hpp"

namespace itnet {

/// "%.10g"
std::string format_number(double v);

/// Writes via a sibling temporary file and rename().
void atomic_write(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// One "x y z" line per point, 17 significant digits, '#' comment header.
std::string cloud_to_text(const PointCloud& cloud);
PointCloud cloud_from_text(std::string_view text, const std::string& origin = "<memory>");
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_cloud(const std::filesystem::path& path);

/// path \t label \t "qw qx qy qz tx ty tz" \t shape_seed \t n_views
std::string manifest_line(const DatasetRecord& r);

struct Manifest {
  std::filesystem::path dir;
  std::string header;
  std::vector<std::string> labels;
  std::vector<DatasetRecord> records;

  std::filesystem::path cloud_path(const DatasetRecord& r) const { return dir / r.path; }
};

/// With parse_poses false the pose field is left unread (identity).
Manifest read_manifest(const std::filesystem::path& path, bool parse_poses = true);
void write_manifest(const std::filesystem::path& path, const std::string& header,
                    const std::vector<DatasetRecord>& records);

/// Worker count from ITNET_THREADS; 0 or unset selects the single-threaded
/// reference mode (returns 1).
int worker_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// processed exactly once; exceptions are rethrown (lowest index first).
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace itnet
