#pragma once

// Run configuration shared by every command: a fixed table of keys, filled
// from "key = value" files and then from flags (which win). Unknown keys are
// errors. Flags spell keys with dashes instead of underscores.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evaluation.hpp"
#include "scanner.hpp"
#include "training.hpp"

namespace itnet {

enum class Command { Generate, Train, Eval, Align };
const char* command_name(Command c);

struct KeyInfo {
  const char* name;
  const char* default_value;
  const char* help;
  std::vector<Command> commands;
};

const std::vector<KeyInfo>& key_table();
const KeyInfo* find_key(const std::string& name);
bool key_applies(const KeyInfo& k, Command c);

class RunConfig {
 public:
  /// Throws Config for unknown keys.
  void set(const std::string& key, const std::string& value);
  /// Throws Io when unreadable, Config for malformed lines or unknown keys.
  void load_file(const std::filesystem::path& path);
  void parse_text(const std::string& text, const std::string& origin);

  bool explicitly_set(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;

  /// Rejects keys that do not belong to `c`.
  void check_applicable(Command c) const;

  DatasetSpec dataset_spec() const;
  TrainConfig train_config(std::size_t train_size) const;
  EvalConfig eval_config() const;
  AlignConfig align_config() const;

 private:
  std::map<std::string, std::string> values_;
};

/// "4" selects the first four families; otherwise a comma list of names.
std::vector<ShapeFamily> parse_families(const std::string& spec);

}  // namespace itnet
