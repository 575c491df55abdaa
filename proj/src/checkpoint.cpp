#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "error.hpp"
#include "io.hpp"

namespace itnet {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[] = "ITNETCK1";

struct RawEntry {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

class Writer {
 public:
  template <class T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    out_.append(p, sizeof(T));
  }
  void entry(const std::string& name, const std::vector<std::uint64_t>& dims, std::span<const double> values) {
    pod(static_cast<std::uint32_t>(name.size()));
    out_ += name;
    pod(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) pod(d);
    out_.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
    ++count_;
  }
  std::string finish() const {
    std::string head(kMagic, 8);
    const std::uint64_t n = count_;
    head.append(reinterpret_cast<const char*>(&n), sizeof n);
    return head + out_;
  }

 private:
  std::string out_;
  std::uint64_t count_ = 0;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : b_(bytes), origin_(std::move(origin)) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(std::vector<double>& out, std::size_t n) {
    if (n > (b_.size() - pos_) / sizeof(double)) fail("truncated values");
    out.resize(n);
    std::memcpy(out.data(), b_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  bool done() const { return pos_ == b_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::Format, origin_ + ": " + what + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) fail("unexpected end of checkpoint");
  }
  const std::string& b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

void put_tensor(Writer& w, const std::string& name, const ag::Tensor& t) {
  w.entry(name, {t.rows(), t.cols()}, t.span());
}

void put_values(Writer& w, const std::string& name, std::vector<double> v) {
  w.entry(name, {v.size()}, v);
}

std::vector<double> widths(const std::vector<std::size_t>& w) { return {w.begin(), w.end()}; }

void put_arch(Writer& w, const std::string& p, const PointNetArch& a) {
  put_values(w, p + "/per_point_widths", widths(a.per_point_widths));
  put_values(w, p + "/global_widths", widths(a.global_widths));
  put_values(w, p + "/output_dim", {static_cast<double>(a.output_dim)});
  put_values(w, p + "/use_batch_norm", {a.use_batch_norm ? 1.0 : 0.0});
  put_values(w, p + "/width_multiplier", {a.width_multiplier});
}

class MetaTable {
 public:
  explicit MetaTable(std::map<std::string, RawEntry> m, const std::string& origin) : m_(std::move(m)), origin_(origin) {}
  const std::vector<double>& values(const std::string& name) const {
    auto it = m_.find("meta/" + name);
    if (it == m_.end()) throw Error(ErrorCode::Format, origin_ + ": missing entry meta/" + name);
    return it->second.values;
  }
  double scalar(const std::string& name) const {
    const auto& v = values(name);
    if (v.size() != 1) throw Error(ErrorCode::Format, origin_ + ": meta/" + name + " is not a scalar");
    return v[0];
  }
  std::vector<std::size_t> sizes(const std::string& name) const {
    std::vector<std::size_t> out;
    for (double d : values(name)) out.push_back(static_cast<std::size_t>(d));
    return out;
  }
  PointNetArch arch(const std::string& p) const {
    PointNetArch a;
    a.per_point_widths = sizes(p + "/per_point_widths");
    a.global_widths = sizes(p + "/global_widths");
    a.output_dim = static_cast<std::size_t>(scalar(p + "/output_dim"));
    a.use_batch_norm = scalar(p + "/use_batch_norm") != 0.0;
    a.width_multiplier = scalar(p + "/width_multiplier");
    return a;
  }

 private:
  std::map<std::string, RawEntry> m_;
  std::string origin_;
};

ag::Tensor to_tensor(const RawEntry& e, const std::string& name, const std::string& origin) {
  if (e.dims.size() != 2) throw Error(ErrorCode::Format, origin + ": entry " + name + " is not rank 2");
  return ag::Tensor(e.dims[0], e.dims[1], e.values);
}

}  // namespace

std::string checkpoint_bytes(const Checkpoint& ck) {
  Writer w;
  const ModelSpec& s = ck.spec;
  put_values(w, "meta/task", {static_cast<double>(s.task == Task::Pose ? 0 : 1)});
  put_values(w, "meta/has_transformer", {s.has_transformer ? 1.0 : 0.0});
  put_values(w, "meta/variant", {static_cast<double>(static_cast<int>(s.unfold.variant))});
  put_values(w, "meta/train_iterations", {static_cast<double>(s.unfold.train_iterations)});
  put_values(w, "meta/eval_iterations", {static_cast<double>(s.unfold.eval_iterations)});
  put_values(w, "meta/stop_input_gradient", {s.unfold.stop_input_gradient ? 1.0 : 0.0});
  put_values(w, "meta/identity_init", {s.unfold.identity_init ? 1.0 : 0.0});
  put_values(w, "meta/per_iteration_bn_stats", {s.unfold.per_iteration_bn_stats ? 1.0 : 0.0});
  put_values(w, "meta/num_classes", {static_cast<double>(s.num_classes)});
  put_arch(w, "meta/tnet", s.transformer_arch);
  put_arch(w, "meta/cls", s.classifier_arch);
  put_values(w, "meta/step", {static_cast<double>(ck.step)});
  std::vector<double> rng;
  for (auto word : ck.rng_state) rng.push_back(std::bit_cast<double>(word));
  put_values(w, "meta/rng_state", rng);
  for (const auto& [name, e] : ck.params.entries()) put_tensor(w, (e.trainable ? "param/" : "state/") + name, e.value);
  for (const auto& [name, t] : ck.adam_m) put_tensor(w, "adam_m/" + name, t);
  for (const auto& [name, t] : ck.adam_v) put_tensor(w, "adam_v/" + name, t);
  return w.finish();
}

Checkpoint checkpoint_from_bytes(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.str(8) != std::string(kMagic, 8)) r.fail("bad magic (expected ITNETCK1)");
  const auto count = r.pod<std::uint64_t>();
  std::map<std::string, RawEntry> meta;
  Checkpoint ck;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<std::uint32_t>();
    const std::string name = r.str(name_len);
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) r.fail("implausible rank for " + name);
    RawEntry e;
    std::uint64_t total = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      e.dims.push_back(r.pod<std::uint64_t>());
      total *= e.dims.back();
    }
    r.doubles(e.values, total);
    const auto slash = name.find('/');
    const std::string kind = name.substr(0, slash);
    const std::string rest = slash == std::string::npos ? "" : name.substr(slash + 1);
    if (kind == "meta") meta.emplace(name, std::move(e));
    else if (kind == "param") ck.params.set(rest, to_tensor(e, name, origin), true);
    else if (kind == "state") ck.params.set(rest, to_tensor(e, name, origin), false);
    else if (kind == "adam_m") ck.adam_m[rest] = to_tensor(e, name, origin);
    else if (kind == "adam_v") ck.adam_v[rest] = to_tensor(e, name, origin);
    else r.fail("unknown entry kind in " + name);
  }
  if (!r.done()) r.fail("trailing bytes");
  const MetaTable m(std::move(meta), origin);
  ModelSpec& s = ck.spec;
  s.task = m.scalar("task") == 0.0 ? Task::Pose : Task::Classify;
  s.has_transformer = m.scalar("has_transformer") != 0.0;
  const int variant = static_cast<int>(m.scalar("variant"));
  if (variant < 0 || variant > 2) throw Error(ErrorCode::Format, origin + ": bad variant code");
  s.unfold.variant = static_cast<Variant>(variant);
  s.unfold.train_iterations = static_cast<int>(m.scalar("train_iterations"));
  s.unfold.eval_iterations = static_cast<int>(m.scalar("eval_iterations"));
  s.unfold.stop_input_gradient = m.scalar("stop_input_gradient") != 0.0;
  s.unfold.identity_init = m.scalar("identity_init") != 0.0;
  s.unfold.per_iteration_bn_stats = m.scalar("per_iteration_bn_stats") != 0.0;
  s.num_classes = static_cast<int>(m.scalar("num_classes"));
  s.transformer_arch = m.arch("tnet");
  s.classifier_arch = m.arch("cls");
  ck.step = static_cast<std::uint64_t>(m.scalar("step"));
  const auto& rng = m.values("rng_state");
  if (rng.size() != 4) throw Error(ErrorCode::Format, origin + ": rng_state must hold 4 words");
  for (std::size_t i = 0; i < 4; ++i) ck.rng_state[i] = std::bit_cast<std::uint64_t>(rng[i]);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  atomic_write(path, checkpoint_bytes(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::Io, "checkpoint not found: " + path.string());
  return checkpoint_from_bytes(read_file(path), path.string());
}

}  // namespace itnet
