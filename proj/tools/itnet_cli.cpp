// itnet command-line front end. Links only the C API.

#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "itnet/itnet.h"

namespace {

struct Sub {
  itnet_command command;
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> values;  // key -> flag value
  std::map<std::string, CLI::Option*> options;
};

std::string dashed(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return key;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative rigid-transform prediction for partial point clouds"};
  app.require_subcommand(1);
  app.set_version_flag("--version", itnet_version());

  const std::vector<std::pair<itnet_command, const char*>> commands{
      {ITNET_CMD_GENERATE, "generate synthetic partial scans and manifests"},
      {ITNET_CMD_TRAIN, "train a pose or classification model"},
      {ITNET_CMD_EVAL, "evaluate a checkpoint on a manifest"},
      {ITNET_CMD_ALIGN, "relative-pose benchmark against trimmed ICP"}};
  const char* names[] = {"generate", "train", "eval", "align"};

  std::vector<std::unique_ptr<Sub>> subs;
  for (const auto& [cmd, desc] : commands) {
    auto sub = std::make_unique<Sub>();
    sub->command = cmd;
    sub->app = app.add_subcommand(names[cmd], desc);
    sub->app->add_option("--config", sub->config_file, "file of 'key = value' lines; flags override it");
    for (size_t i = 0; i < itnet_key_count(); ++i) {
      if (!itnet_key_applies(i, cmd)) continue;
      const std::string key = itnet_key_name(i);
      std::string help = itnet_key_help(i);
      const std::string def = itnet_key_default(i);
      help += def.empty() ? "" : " [default: " + def + "]";
      sub->options[key] = sub->app->add_option("--" + dashed(key), sub->values[key], help);
    }
    subs.push_back(std::move(sub));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  for (const auto& sub : subs) {
    if (!sub->app->parsed()) continue;
    itnet_config* cfg = itnet_config_create();
    int rc = ITNET_OK;
    if (!sub->config_file.empty()) rc = itnet_config_load_file(cfg, sub->config_file.c_str());
    for (const auto& [key, opt] : sub->options) {
      if (rc != ITNET_OK) break;
      if (opt->count() > 0) rc = itnet_config_set(cfg, key.c_str(), sub->values[key].c_str());
    }
    if (rc == ITNET_OK) rc = itnet_run(sub->command, cfg);
    itnet_config_free(cfg);
    if (rc != ITNET_OK) {
      std::fprintf(stderr, "itnet %s: %s\n", names[sub->command], itnet_last_error());
      return rc;
    }
    std::printf("%s\n", itnet_last_message());
    return 0;
  }
  return 2;
}
