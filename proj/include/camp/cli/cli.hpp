#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "camp/camphead/model.hpp"
#include "camp/moldata/moldata.hpp"
#include "camp/trainer/trainer.hpp"

namespace camp::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericalError = 3 };

// Everything a run can be configured with. Each field has a dotted key.
struct Settings {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  data::SyntheticConfig synth;
  std::array<double, 3> split{10.0 / 14.0, 2.0 / 14.0, 2.0 / 14.0};
  std::uint64_t split_seed = 0;
  head::ModelConfig model;
  train::TrainConfig train;
  std::vector<std::size_t> eval_support_sizes{4, 8, 16};
  std::size_t eval_seeds = 5;
  bool eval_baselines = true;
  std::vector<std::size_t> latency_support_sizes{4, 8, 16, 32};
  std::size_t latency_repeats = 10;
  std::size_t analyze_support_size = 8;
  std::size_t analyze_episodes = 3;
  std::size_t analyze_flip_row = 1;
  std::size_t ablate_permutations = 50;

  static Settings defaults(const std::string& profile);
};

struct Binding {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::vector<Binding> bindings(Settings& s);

// Flat "key = value" text; '#' starts a comment.
std::map<std::string, std::string> parse_config(std::istream& in, const std::string& source = "<config>");
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);
// Throws InvalidArgument on unknown keys or malformed values.
void apply_config(Settings& s, const std::map<std::string, std::string>& values);
std::map<std::string, std::string> resolved(const Settings& s);
void write_config(const Settings& s, std::ostream& out);

std::string sha256_file(const std::filesystem::path& path);

// Entry point: argv[0] is the program name. Output and diagnostics go to the
// given streams.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace camp::cli
