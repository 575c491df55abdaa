#include "io.hpp"

#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "error.hpp"

namespace itnet {

namespace fs = std::filesystem;

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void atomic_write(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = path.string() + ".tmp" + std::to_string(::getpid()) + "_" +
                       std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) % 100000);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorCode::Io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::Io, "cannot move file into place: " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string cloud_to_text(const PointCloud& cloud) {
  std::string out = "# itnet cloud v1 frame=" + cloud.frame + " points=" + std::to_string(cloud.size()) + "\n";
  char buf[96];
  for (const auto& p : cloud.points) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
    out += buf;
  }
  return out;
}

PointCloud cloud_from_text(std::string_view text, const std::string& origin) {
  PointCloud cloud;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string_view::npos) continue;
    if (line[first] == '#') {
      const auto pos = line.find("frame=");
      if (pos != std::string_view::npos) {
        const auto end = line.find(' ', pos);
        cloud.frame = std::string(line.substr(pos + 6, end == std::string_view::npos ? end : end - pos - 6));
      }
      continue;
    }
    Vec3 p;
    const char* ptr = line.data() + first;
    const char* end = line.data() + line.size();
    for (int k = 0; k < 3; ++k) {
      while (ptr < end && (*ptr == ' ' || *ptr == '\t')) ++ptr;
      auto [next, ec] = std::from_chars(ptr, end, p[static_cast<std::size_t>(k)]);
      if (ec != std::errc{}) throw Error(ErrorCode::Format, origin + ":" + std::to_string(line_no) + ": expected 'x y z'");
      ptr = next;
    }
    while (ptr < end && (*ptr == ' ' || *ptr == '\t')) ++ptr;
    if (ptr != end) throw Error(ErrorCode::Format, origin + ":" + std::to_string(line_no) + ": trailing data");
    cloud.points.push_back(p);
  }
  if (cloud.empty()) throw Error(ErrorCode::Format, origin + ": cloud has no points");
  return cloud;
}

void write_cloud(const fs::path& path, const PointCloud& cloud) { atomic_write(path, cloud_to_text(cloud)); }

PointCloud read_cloud(const fs::path& path) { return cloud_from_text(read_file(path), path.string()); }

std::string manifest_line(const DatasetRecord& r) {
  return r.path + "\t" + std::to_string(r.label) + "\t" + format_pose(r.pose) + "\t" + std::to_string(r.shape_seed) +
         "\t" + std::to_string(r.n_views);
}

void write_manifest(const fs::path& path, const std::string& header, const std::vector<DatasetRecord>& records) {
  std::string out = header + "\n";
  for (const auto& r : records) out += manifest_line(r) + "\n";
  atomic_write(path, out);
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

template <class T>
T parse_int(std::string_view s, const std::string& where) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw Error(ErrorCode::Format, where + ": bad integer '" + std::string(s) + "'");
  return v;
}

}  // namespace

Manifest read_manifest(const fs::path& path, bool parse_poses) {
  if (!fs::exists(path)) throw Error(ErrorCode::Io, "manifest not found: " + path.string());
  const std::string text = read_file(path);
  Manifest m;
  m.dir = path.parent_path();
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (line[0] == '#') {
      if (m.header.empty()) {
        m.header = line;
        const auto pos = line.find("labels=");
        if (pos != std::string::npos) {
          const auto end = line.find('\t', pos);
          std::string labels = line.substr(pos + 7, end == std::string::npos ? end : end - pos - 7);
          std::size_t s = 0;
          while (s <= labels.size()) {
            const auto comma = labels.find(',', s);
            m.labels.push_back(labels.substr(s, comma == std::string::npos ? std::string::npos : comma - s));
            if (comma == std::string::npos) break;
            s = comma + 1;
          }
        }
      }
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 5) throw Error(ErrorCode::Format, where + ": expected 5 tab-separated fields");
    DatasetRecord r;
    r.path = std::string(fields[0]);
    r.label = parse_int<int>(fields[1], where);
    if (parse_poses) r.pose = parse_pose(fields[2]);
    r.shape_seed = parse_int<std::uint64_t>(fields[3], where);
    r.n_views = parse_int<int>(fields[4], where);
    const auto slash = r.path.find('/');
    const auto slash2 = r.path.find('/', slash + 1);
    if (slash != std::string::npos && slash2 != std::string::npos) r.split = r.path.substr(slash + 1, slash2 - slash - 1);
    m.records.push_back(std::move(r));
  }
  return m;
}

int worker_count() {
  const char* env = std::getenv("ITNET_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  const int n = std::atoi(env);
  if (n <= 0) return 1;
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::min(n, hw * 4);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace itnet
