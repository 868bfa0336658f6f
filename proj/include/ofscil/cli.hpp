#pragma once

// Command-line surface: a flat key=value RunConfig and the experiment commands.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofscil/backbone.hpp"
#include "ofscil/data_io.hpp"
#include "ofscil/explicit_memory.hpp"
#include "ofscil/harness.hpp"
#include "ofscil/offline_training.hpp"
#include "ofscil/online_learner.hpp"
#include "ofscil/synthetic.hpp"

namespace ofscil::cli {

enum ExitCode : int {
  kOk = 0,
  kViolations = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericFailure = 4,
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ValueType { Int, Real, Bool, String, IntList, StringList };

struct KeySpec {
  std::string name;
  ValueType type;
  std::string default_value;
  std::string help;
};

// Every tunable of the pipeline. Unknown keys and ill-typed values are rejected.
class RunConfig {
 public:
  RunConfig();

  static const std::vector<KeySpec>& keys();

  void set(const std::string& key, const std::string& value);
  // key=value lines; '#' starts a comment.
  void load_file(const std::filesystem::path& path);
  // Applies OFSCIL_SEED when present.
  void apply_environment();

  const std::string& raw(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  std::vector<long long> get_int_list(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  // key=value per line in table order.
  std::string dump() const;

  std::uint64_t seed() const { return static_cast<std::uint64_t>(get_int("seed")); }
  ModelShape model_shape(std::size_t input_dim) const;
  PretrainOptions pretrain_options() const;
  MetaConfig meta_config() const;
  QuantSpec quant_spec() const;
  FinetuneConfig finetune_config() const;
  SplitConfig split_config() const;
  SyntheticConfig synthetic_config() const;

 private:
  std::map<std::string, std::string> values_;
};

// Runs one command; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ofscil::cli
