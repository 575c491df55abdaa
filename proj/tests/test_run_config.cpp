#include <doctest.h>

#include <functional>
#include <optional>
#include <string>

#include "error.hpp"
#include "helpers.hpp"
#include "io.hpp"
#include "run_config.hpp"

using namespace itnet;

namespace {

std::optional<ErrorCode> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("keys: defaults, dashes and unknown names") {
  RunConfig c;
  CHECK(c.get("n") == "100");
  CHECK(c.get_size("points") == 1024);
  c.set("max-rotation-deg", "45");
  CHECK(c.get_double("max_rotation_deg") == 45.0);
  CHECK(c.explicitly_set("max_rotation_deg"));
  CHECK(code_of([&] { c.set("no-such-key", "1"); }) == ErrorCode::Config);
  CHECK(message_of([&] { c.set("no-such-key", "1"); }).find("no-such-key") != std::string::npos);
  CHECK(code_of([&] { c.get("bogus"); }) == ErrorCode::Config);
  for (const auto& k : key_table()) {
    CHECK(find_key(k.name) == &k);
    CHECK_FALSE(k.commands.empty());
    CHECK(std::string(k.help).size() > 0);
  }
}

TEST_CASE("typed getters reject malformed values and name the flag") {
  RunConfig c;
  c.set("n", "12x");
  CHECK(message_of([&] { c.get_size("n"); }).find("--n") != std::string::npos);
  c.set("n", "-3");
  CHECK(code_of([&] { c.get_size("n"); }) == ErrorCode::Config);
  c.set("recenter", "maybe");
  CHECK(code_of([&] { c.get_bool("recenter"); }) == ErrorCode::Config);
  c.set("recenter", "yes");
  CHECK(c.get_bool("recenter"));
  c.set("per_point_widths", "8, 16,32");
  CHECK(c.get_sizes("per_point_widths") == std::vector<std::size_t>{8, 16, 32});
  c.set("per_point_widths", "8,,32");
  CHECK(code_of([&] { c.get_sizes("per_point_widths"); }) == ErrorCode::Config);
}

TEST_CASE("config files") {
  RunConfig c;
  c.parse_text("# comment\n  n = 7   # trailing\n\nseed=3\n", "cfg");
  CHECK(c.get_size("n") == 7);
  CHECK(c.get_size("seed") == 3);
  CHECK(message_of([&] { c.parse_text("n 7\n", "cfg"); }).find("cfg:1") != std::string::npos);
  CHECK(message_of([&] { c.parse_text("\nfoo = 1\n", "cfg"); }).find("cfg:2") != std::string::npos);
  CHECK(code_of([&] { c.load_file("/nonexistent/itnet.cfg"); }) == ErrorCode::Io);

  const auto dir = test::scratch_dir("cfg");
  atomic_write(dir / "a.cfg", "points = 64\n");
  c.load_file(dir / "a.cfg");
  CHECK(c.get_size("points") == 64);
  // Flags applied later win.
  c.set("points", "32");
  CHECK(c.get_size("points") == 32);
  std::filesystem::remove_all(dir);
}

TEST_CASE("check_applicable") {
  RunConfig c;
  c.set("seed", "1");
  c.set("n", "5");
  CHECK_NOTHROW(c.check_applicable(Command::Generate));
  CHECK(message_of([&] { c.check_applicable(Command::Train); }).find("'n'") != std::string::npos);
  RunConfig t;
  t.set("iters", "3");
  CHECK_NOTHROW(t.check_applicable(Command::Train));
  CHECK(code_of([&] { t.check_applicable(Command::Eval); }) == ErrorCode::Config);
}

TEST_CASE("parse_families") {
  CHECK(parse_families("4").size() == 4);
  CHECK(parse_families("8").size() == 8);
  CHECK(parse_families("1")[0] == all_families()[0]);
  CHECK(parse_families("chair, lamp") == std::vector<ShapeFamily>{ShapeFamily::Chair, ShapeFamily::Lamp});
  CHECK(message_of([] { parse_families("0"); }).find("--families") != std::string::npos);
  CHECK(message_of([] { parse_families("9"); }).find("--families") != std::string::npos);
  const std::string msg = message_of([] { parse_families("chair,sofa"); });
  CHECK(msg.find("--families") != std::string::npos);
  CHECK(msg.find("sofa") != std::string::npos);
  CHECK(code_of([] { parse_families("sofa"); }) == ErrorCode::UnknownFamily);
}

TEST_CASE("dataset_spec") {
  RunConfig c;
  c.set("families", "chair");
  c.set("scan-mode", "perspective");
  c.set("max-views", "3");
  const auto d = c.dataset_spec();
  CHECK(d.families == std::vector<ShapeFamily>{ShapeFamily::Chair});
  CHECK(d.scan.mode == ScanMode::Perspective);
  CHECK(d.max_views == 3);
  CHECK(d.max_rotation_deg == 180.0);
  c.set("max-rotation-deg", "0");
  CHECK(message_of([&] { c.dataset_spec(); }).find("--max-rotation-deg") != std::string::npos);
  c.set("max-rotation-deg", "90");
  c.set("scan-mode", "lidar");
  CHECK(code_of([&] { c.dataset_spec(); }) == ErrorCode::Config);
}

TEST_CASE("train_config layers flags over the preset") {
  RunConfig c;
  auto cfg = c.train_config(100);
  const auto desk = preset_config("desk", Task::Pose, 100);
  CHECK(cfg.steps == desk.steps);
  CHECK(cfg.model.transformer_arch.width_multiplier == 0.25);
  CHECK(cfg.model.unfold.eval_iterations == 1);

  c.set("preset", "paper");
  c.set("steps", "12");
  c.set("iters", "5");
  c.set("stop-gradient", "false");
  c.set("identity-init", "false");
  c.set("variant", "affine_regularized");
  cfg = c.train_config(100);
  CHECK(cfg.steps == 12);
  CHECK(cfg.batch_size == 100);
  CHECK(cfg.model.transformer_arch.width_multiplier == 1.0);
  CHECK(cfg.model.unfold.train_iterations == 5);
  CHECK(cfg.model.unfold.eval_iterations == 5);
  CHECK_FALSE(cfg.model.unfold.stop_input_gradient);
  CHECK_FALSE(cfg.model.unfold.identity_init);
  CHECK(cfg.model.unfold.variant == Variant::AffineRegularized);

  c.set("width-multiplier", "0");
  CHECK(message_of([&] { c.train_config(100); }).find("--width-multiplier") != std::string::npos);
  c.set("width-multiplier", "0.5");
  c.set("preset", "giant");
  CHECK(code_of([&] { c.train_config(100); }) == ErrorCode::Config);
}

TEST_CASE("eval and align configs") {
  RunConfig c;
  c.set("anytime", "4");
  c.set("rot-thresh", "5");
  CHECK(c.eval_config().iterations == 4);
  CHECK(c.eval_config().rot_thresh_deg == 5.0);
  CHECK(c.align_config().iterations == 4);
  c.set("anytime", "-1");
  CHECK(code_of([&] { c.eval_config(); }) == ErrorCode::Config);
  c.set("anytime", "0");
  c.set("icp-trim", "0.9");
  CHECK_THROWS_AS(c.align_config(), Error);
}
