#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "error.hpp"
#include "io.hpp"

namespace itnet {

namespace {
using C = Command;
const std::vector<Command> kAll{C::Generate, C::Train, C::Eval, C::Align};
}  // namespace

const char* command_name(Command c) {
  switch (c) {
    case C::Generate: return "generate";
    case C::Train: return "train";
    case C::Eval: return "eval";
    case C::Align: return "align";
  }
  return "?";
}

const std::vector<KeyInfo>& key_table() {
  static const std::vector<KeyInfo> table{
      {"seed", "0", "random seed", kAll},
      {"out", "", "output directory (generate, eval, align) or checkpoint path (train)", kAll},
      // generate
      {"families", "4", "shape families: a count (first k) or a comma list of names", {C::Generate}},
      {"n", "100", "number of instances", {C::Generate}},
      {"scan_mode", "orthographic", "orthographic | perspective", {C::Generate}},
      {"pixel_size", "0.02", "orthographic pixel size", {C::Generate}},
      {"image_size", "64", "perspective image side in pixels", {C::Generate}},
      {"focal_length", "64", "perspective focal length in pixels", {C::Generate}},
      {"camera_distance_min", "2", "perspective camera distance lower bound", {C::Generate}},
      {"camera_distance_max", "4", "perspective camera distance upper bound", {C::Generate}},
      {"points", "1024", "points per stored cloud", {C::Generate}},
      {"shape_points", "2048", "surface samples per shape before scanning", {C::Generate}},
      {"scans_per_shape", "4", "scans generated per shape instance", {C::Generate}},
      {"max_views", "1", "views fused per perspective scan (1-4)", {C::Generate}},
      {"val_fraction", "0.1", "fraction of instances in the validation split", {C::Generate}},
      {"test_fraction", "0.1", "fraction of instances in the test split", {C::Generate}},
      {"translation_range", "0.5", "orthographic pose translation range", {C::Generate}},
      {"max_rotation_deg", "180", "cap on sampled rotation angles (180: uniform on SO(3))", {C::Generate}},
      {"recenter", "false", "move each cloud's centroid to the origin", {C::Generate}},
      // train
      {"manifest", "", "dataset manifest (.tsv)", {C::Train, C::Eval, C::Align}},
      {"task", "pose", "pose | classify", {C::Train}},
      {"preset", "desk", "desk | paper; supplies defaults for unset training keys", {C::Train}},
      {"steps", "", "training steps (preset)", {C::Train}},
      {"batch_size", "", "batch size (preset)", {C::Train}},
      {"lr", "0.001", "initial learning rate", {C::Train}},
      {"lr_decay_factor", "0.7", "learning-rate decay factor", {C::Train}},
      {"lr_decay_every", "", "steps between learning-rate decays (preset)", {C::Train}},
      {"grad_clip_norm", "30", "global gradient-norm clip", {C::Train}},
      {"clip_pose_gradients", "false", "also clip gradients for the pose task", {C::Train}},
      {"bn_decay_start", "0.5", "batch-norm running-average decay at step 0", {C::Train}},
      {"bn_decay_end", "0.99", "batch-norm running-average decay at the last step", {C::Train}},
      {"iters", "1", "unfolded transformer iterations during training", {C::Train}},
      {"eval_iters", "", "default evaluation iterations (defaults to iters)", {C::Train}},
      {"variant", "rigid", "rigid | affine | affine_regularized", {C::Train}},
      {"reg_weight", "0.001", "weight of ||A A^T - I||_F for affine_regularized", {C::Train}},
      {"transformer", "true", "classification only: false trains the plain classifier", {C::Train}},
      {"identity_init", "true", "initialize the transformer output to identity", {C::Train}},
      {"stop_gradient", "true", "stop gradients through the inputs of later iterations", {C::Train}},
      {"per_iteration_bn", "false", "separate batch-norm running statistics per iteration", {C::Train}},
      {"batch_norm", "true", "batch normalization in hidden layers", {C::Train}},
      {"width_multiplier", "", "hidden width scale (preset)", {C::Train}},
      {"per_point_widths", "64,128,1024", "per-point layer widths", {C::Train}},
      {"global_widths", "512,256", "global layer widths", {C::Train}},
      {"log", "", "training log CSV (default: checkpoint path + .log.csv)", {C::Train}},
      // eval / align
      {"checkpoint", "", "trained model", {C::Eval, C::Align}},
      {"anytime", "0", "iterations to run at inference (0: model default)", {C::Eval, C::Align}},
      {"clusters", "-1", "export axis-angle pose clusters at this iteration (-1: off)", {C::Eval}},
      {"rot_thresh", "10", "rotation threshold in degrees", {C::Eval, C::Align}},
      {"trans_thresh", "0.1", "translation threshold", {C::Eval}},
      {"pairs", "", "pair list 'index_a index_b' (default: same-shape pairs)", {C::Align}},
      {"max_pairs", "200", "maximum number of same-shape pairs", {C::Align}},
      {"icp_max_iterations", "100", "ICP iteration cap", {C::Align}},
      {"icp_tol", "1e-7", "ICP convergence tolerance", {C::Align}},
      {"icp_trim", "0.1", "fraction of worst correspondences dropped by ICP", {C::Align}},
  };
  return table;
}

const KeyInfo* find_key(const std::string& name) {
  for (const auto& k : key_table())
    if (name == k.name) return &k;
  return nullptr;
}

bool key_applies(const KeyInfo& k, Command c) {
  return std::find(k.commands.begin(), k.commands.end(), c) != k.commands.end();
}

void RunConfig::set(const std::string& key_in, const std::string& value) {
  std::string key = key_in;
  std::replace(key.begin(), key.end(), '-', '_');
  if (find_key(key) == nullptr) throw Error(ErrorCode::Config, "unknown key '" + key_in + "'");
  values_[key] = value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::Io, "config file not found: " + path.string());
  parse_text(read_file(path), path.string());
}

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace

void RunConfig::parse_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw Error(ErrorCode::Config, where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    try {
      set(key, trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(ErrorCode::Config, where + ": unknown key '" + key + "'");
    }
  }
}

std::string RunConfig::get(const std::string& key) const {
  const KeyInfo* k = find_key(key);
  if (k == nullptr) throw Error(ErrorCode::Config, "unknown key '" + key + "'");
  auto it = values_.find(key);
  return it != values_.end() ? it->second : k->default_value;
}

namespace {
[[noreturn]] void bad_value(const std::string& key, const std::string& v, const char* what) {
  throw Error(ErrorCode::Config, "--" + key + ": '" + v + "' is not " + what);
}

template <class T>
T parse_number(const std::string& key, const std::string& v, const char* what) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, what);
  return out;
}
}  // namespace

long long RunConfig::get_int(const std::string& key) const { return parse_number<long long>(key, get(key), "an integer"); }

std::size_t RunConfig::get_size(const std::string& key) const {
  const long long v = get_int(key);
  if (v < 0) bad_value(key, get(key), "a non-negative integer");
  return static_cast<std::size_t>(v);
}

double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key), "a number"); }

bool RunConfig::get_bool(const std::string& key) const {
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::size_t> RunConfig::get_sizes(const std::string& key) const {
  const std::string v = get(key);
  std::vector<std::size_t> out;
  std::size_t s = 0;
  while (s <= v.size()) {
    const auto comma = v.find(',', s);
    const std::string item = trim(v.substr(s, comma == std::string::npos ? std::string::npos : comma - s));
    out.push_back(parse_number<std::size_t>(key, item, "a comma list of integers"));
    if (comma == std::string::npos) break;
    s = comma + 1;
  }
  return out;
}

void RunConfig::check_applicable(Command c) const {
  for (const auto& [key, value] : values_)
    if (!key_applies(*find_key(key), c))
      throw Error(ErrorCode::Config, "key '" + key + "' does not apply to " + command_name(c));
}

std::vector<ShapeFamily> parse_families(const std::string& spec) {
  const auto all = all_families();
  if (!spec.empty() && std::all_of(spec.begin(), spec.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
    const auto k = parse_number<std::size_t>("families", spec, "a family count");
    if (k < 1 || k > all.size())
      throw Error(ErrorCode::Config, "--families: count must lie in [1, " + std::to_string(all.size()) + "]");
    return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k)};
  }
  std::vector<ShapeFamily> out;
  std::size_t s = 0;
  while (s <= spec.size()) {
    const auto comma = spec.find(',', s);
    const std::string name = trim(spec.substr(s, comma == std::string::npos ? std::string::npos : comma - s));
    try {
      out.push_back(parse_family(name));
    } catch (const Error& e) {
      throw Error(ErrorCode::UnknownFamily, "--families: unknown family '" + name + "'");
    }
    if (comma == std::string::npos) break;
    s = comma + 1;
  }
  return out;
}

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec d;
  d.n_instances = get_size("n");
  d.families = parse_families(get("families"));
  const std::string mode = get("scan_mode");
  if (mode == "orthographic") d.scan.mode = ScanMode::Orthographic;
  else if (mode == "perspective") d.scan.mode = ScanMode::Perspective;
  else throw Error(ErrorCode::Config, "--scan-mode: expected orthographic | perspective, got '" + mode + "'");
  d.scan.pixel_size = get_double("pixel_size");
  d.scan.image_size = static_cast<int>(get_int("image_size"));
  d.scan.focal_length = get_double("focal_length");
  d.scan.camera_distance_min = get_double("camera_distance_min");
  d.scan.camera_distance_max = get_double("camera_distance_max");
  d.seed = static_cast<std::uint64_t>(get_size("seed"));
  d.points_per_cloud = get_size("points");
  d.shape_points = get_size("shape_points");
  d.scans_per_shape = get_size("scans_per_shape");
  d.max_views = static_cast<int>(get_int("max_views"));
  d.val_fraction = get_double("val_fraction");
  d.test_fraction = get_double("test_fraction");
  d.translation_range = get_double("translation_range");
  d.max_rotation_deg = get_double("max_rotation_deg");
  if (!(d.max_rotation_deg > 0.0)) throw Error(ErrorCode::Config, "--max-rotation-deg must be positive");
  d.recenter = get_bool("recenter");
  d.scan.validate();
  return d;
}

TrainConfig RunConfig::train_config(std::size_t train_size) const {
  const Task task = parse_task(get("task"));
  TrainConfig c = preset_config(get("preset"), task, train_size);
  if (explicitly_set("steps")) c.steps = get_size("steps");
  if (explicitly_set("batch_size")) c.batch_size = get_size("batch_size");
  if (explicitly_set("lr_decay_every")) c.lr_decay_every = get_size("lr_decay_every");
  c.lr_initial = get_double("lr");
  c.lr_decay_factor = get_double("lr_decay_factor");
  c.grad_clip_norm = get_double("grad_clip_norm");
  c.clip_pose_gradients = get_bool("clip_pose_gradients");
  c.bn_decay_start = get_double("bn_decay_start");
  c.bn_decay_end = get_double("bn_decay_end");
  c.reg_weight = get_double("reg_weight");
  c.seed = static_cast<std::uint64_t>(get_size("seed"));

  ModelSpec& m = c.model;
  m.has_transformer = get_bool("transformer");
  m.unfold.train_iterations = static_cast<int>(get_int("iters"));
  m.unfold.eval_iterations = explicitly_set("eval_iters") ? static_cast<int>(get_int("eval_iters")) : m.unfold.train_iterations;
  m.unfold.variant = parse_variant(get("variant"));
  m.unfold.identity_init = get_bool("identity_init");
  m.unfold.stop_input_gradient = get_bool("stop_gradient");
  m.unfold.per_iteration_bn_stats = get_bool("per_iteration_bn");
  for (PointNetArch* a : {&m.transformer_arch, &m.classifier_arch}) {
    a->use_batch_norm = get_bool("batch_norm");
    a->per_point_widths = get_sizes("per_point_widths");
    a->global_widths = get_sizes("global_widths");
    if (explicitly_set("width_multiplier")) a->width_multiplier = get_double("width_multiplier");
    if (!(a->width_multiplier > 0.0)) throw Error(ErrorCode::Config, "--width-multiplier must be > 0");
  }
  return c;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig e;
  e.iterations = static_cast<int>(get_int("anytime"));
  if (e.iterations < 0) throw Error(ErrorCode::Config, "--anytime must be >= 0");
  e.clusters_k = static_cast<int>(get_int("clusters"));
  e.rot_thresh_deg = get_double("rot_thresh");
  e.trans_thresh = get_double("trans_thresh");
  return e;
}

AlignConfig RunConfig::align_config() const {
  AlignConfig a;
  a.iterations = static_cast<int>(get_int("anytime"));
  if (a.iterations < 0) throw Error(ErrorCode::Config, "--anytime must be >= 0");
  a.icp.max_iterations = static_cast<int>(get_int("icp_max_iterations"));
  a.icp.convergence_tol = get_double("icp_tol");
  a.icp.trim_fraction = get_double("icp_trim");
  a.rot_thresh_deg = get_double("rot_thresh");
  a.icp.validate();
  return a;
}

}  // namespace itnet
