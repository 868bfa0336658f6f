#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ofscil/cli.hpp"

namespace ofscil::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool parse_int(const std::string& s, long long& v) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_real(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

bool parse_bool(const std::string& s, bool& v) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return v = true, true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return v = false, true;
  return false;
}

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : RunConfig::keys())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

const std::vector<KeySpec>& RunConfig::keys() {
  using T = ValueType;
  static const std::vector<KeySpec> table = {
      {"seed", T::Int, "0", "seed for every stochastic choice (OFSCIL_SEED overrides)"},
      {"threads", T::Int, "1", "worker cap for evaluation"},
      // data
      {"dataset", T::String, "synthetic", "dataset path, or 'synthetic'"},
      {"dataset_format", T::String, "auto", "auto | raw | csv | cifar"},
      {"synthetic_classes", T::Int, "18", "classes in the synthetic dataset"},
      {"synthetic_per_class", T::Int, "70", "samples per synthetic class"},
      {"grid_channels", T::Int, "1", "input channels"},
      {"grid_height", T::Int, "16", "input grid height"},
      {"grid_width", T::Int, "16", "input grid width"},
      {"base_classes", T::Int, "10", "classes in the base session"},
      {"sessions", T::Int, "4", "incremental sessions"},
      {"ways", T::Int, "2", "new classes per session"},
      {"shots", T::Int, "5", "samples per new class"},
      {"per_class_cap", T::Int, "50", "cap on base-session training samples per class"},
      {"test_per_class", T::Int, "20", "test samples per class"},
      {"manifest", T::String, "", "stream manifest (overrides dataset splitting)"},
      // model
      {"hidden", T::IntList, "128", "hidden layer widths before d_a"},
      {"d_a", T::Int, "128", "backbone feature width"},
      {"d_p", T::Int, "64", "prototype feature width"},
      {"fcr_activation", T::String, "identity", "identity | relu"},
      // pretraining
      {"pretrain_epochs", T::Int, "100", "pretraining epochs"},
      {"pretrain_lr", T::Real, "0.05", "pretraining SGD step"},
      {"batch_size", T::Int, "16", "pretraining minibatch"},
      {"lambda_ortho", T::Real, "0.1", "orthogonality regularization weight"},
      {"mix_probability", T::Real, "0.4", "probability of a mixup/cutmix batch"},
      {"mix_alpha", T::Real, "1", "Beta(alpha, alpha) for mixing"},
      {"mixup_share", T::Real, "0.5", "mixup share among mixed batches"},
      {"quantized_training", T::Bool, "false", "train through 8-bit quantize/dequantize"},
      // metalearning
      {"margin", T::Real, "0.1", "multi-margin m"},
      {"meta_samples", T::Int, "5", "meta-samples per class"},
      {"meta_iterations", T::Int, "500", "metalearning iterations"},
      {"meta_lr", T::Real, "0.3", "metalearning SGD step"},
      {"meta_query_batch", T::Int, "64", "queries per iteration"},
      {"meta_objective", T::String, "mm", "mm | ce"},
      {"meta_ce_scale", T::Real, "10", "logit scale for the ce objective"},
      {"meta_grad_through_prototypes", T::Bool, "false", "backpropagate through prototype means"},
      // explicit memory
      {"feature_bits", T::Int, "8", "feature quantization width"},
      {"accum_bits", T::Int, "32", "prototype accumulator width"},
      {"prototype_bits", T::Int, "8", "stored prototype width"},
      {"right_shift", T::String, "auto", "fixed shift, or auto (per prototype)"},
      {"max_shots", T::Int, "64", "largest shot count per class"},
      // online finetuning
      {"finetune", T::Bool, "false", "FCR finetuning after each session"},
      {"finetune_epochs", T::Int, "100", "finetuning iterations B"},
      {"finetune_subbatch", T::Int, "10", "sub-batch size N"},
      {"finetune_lr", T::Real, "0.01", "finetuning SGD step"},
      {"finetune_shuffle", T::Bool, "false", "seeded shuffle of sub-batches"},
      // experiments
      {"sweep_bits", T::IntList, "32,8,7,6,5,4,3,2,1", "prototype widths for the sweep"},
      {"ablation_rows", T::StringList, "none,AG,AG+OR,AG+OR+MM,AG+OR+CE,AG+OR+MM+FT",
       "ablation configurations"},
      {"class_id", T::Int, "-1", "learn-class label (-1: from samples)"},
      // paths
      {"params_in", T::String, "params.ofsc", "input parameter file"},
      {"params_out", T::String, "params.ofsc", "output parameter file"},
      {"history_csv", T::String, "pretrain_history.csv", "pretraining history"},
      {"meta_history_csv", T::String, "meta_history.csv", "metalearning history"},
      {"report_csv", T::String, "report.csv", "session report"},
      {"sweep_csv", T::String, "sweep.csv", "precision sweep"},
      {"ablate_csv", T::String, "ablation.csv", "ablation table"},
      {"samples", T::String, "", "dataset file for learn-class / classify"},
      {"em_in", T::String, "", "explicit memory snapshot to extend or query"},
      {"em_out", T::String, "memory.ofem", "explicit memory snapshot output"},
      {"act_in", T::String, "", "activation memory snapshot to extend"},
      {"act_out", T::String, "", "activation memory snapshot output"},
      {"predictions_csv", T::String, "predictions.csv", "classify output"},
  };
  return table;
}

RunConfig::RunConfig() {
  for (const auto& k : keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& raw_value) {
  const KeySpec* spec = find_key(key);
  if (spec == nullptr) throw ConfigError("unknown config key '" + key + "'");
  const std::string value = trim(raw_value);
  auto bad = [&](const char* what) {
    return ConfigError("config key '" + key + "' expects " + what + ", got '" + value + "'");
  };
  long long i = 0;
  double r = 0.0;
  bool b = false;
  switch (spec->type) {
    case ValueType::Int:
      if (!parse_int(value, i)) throw bad("an integer");
      break;
    case ValueType::Real:
      if (!parse_real(value, r)) throw bad("a number");
      break;
    case ValueType::Bool:
      if (!parse_bool(value, b)) throw bad("a boolean");
      break;
    case ValueType::IntList:
      for (const auto& item : split_list(value))
        if (!parse_int(item, i)) throw bad("a comma-separated integer list");
      break;
    case ValueType::String:
    case ValueType::StringList:
      break;
  }
  values_[key] = value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void RunConfig::apply_environment() {
  if (const char* env = std::getenv("OFSCIL_SEED"); env != nullptr && *env != '\0') set("seed", env);
}

const std::string& RunConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
  long long v = 0;
  parse_int(raw(key), v);
  return v;
}

double RunConfig::get_real(const std::string& key) const {
  double v = 0.0;
  parse_real(raw(key), v);
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  bool v = false;
  parse_bool(raw(key), v);
  return v;
}

const std::string& RunConfig::get_string(const std::string& key) const { return raw(key); }

std::vector<long long> RunConfig::get_int_list(const std::string& key) const {
  std::vector<long long> out;
  for (const auto& item : split_list(raw(key))) {
    long long v = 0;
    parse_int(item, v);
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> RunConfig::get_string_list(const std::string& key) const {
  return split_list(raw(key));
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& k : keys()) out += k.name + "=" + values_.at(k.name) + "\n";
  return out;
}

namespace {

std::size_t positive(const RunConfig& cfg, const std::string& key) {
  const long long v = cfg.get_int(key);
  if (v <= 0) throw ConfigError("config key '" + key + "' must be positive");
  return static_cast<std::size_t>(v);
}

std::size_t nonnegative(const RunConfig& cfg, const std::string& key) {
  const long long v = cfg.get_int(key);
  if (v < 0) throw ConfigError("config key '" + key + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

}  // namespace

ModelShape RunConfig::model_shape(std::size_t input_dim) const {
  ModelShape s;
  s.input_dim = input_dim;
  s.hidden.clear();
  for (long long h : get_int_list("hidden")) {
    if (h <= 0) throw ConfigError("hidden widths must be positive");
    s.hidden.push_back(static_cast<std::size_t>(h));
  }
  s.d_a = positive(*this, "d_a");
  s.d_p = positive(*this, "d_p");
  if (s.d_p >= s.d_a) throw ConfigError("d_p must be smaller than d_a");
  const auto& act = get_string("fcr_activation");
  if (act == "identity") s.fcr_activation = Activation::Identity;
  else if (act == "relu") s.fcr_activation = Activation::Relu;
  else throw ConfigError("fcr_activation must be identity or relu");
  return s;
}

PretrainOptions RunConfig::pretrain_options() const {
  PretrainOptions o;
  o.epochs = static_cast<int>(nonnegative(*this, "pretrain_epochs"));
  o.lr = get_real("pretrain_lr");
  o.batch_size = positive(*this, "batch_size");
  o.seed = seed();
  o.grid = {positive(*this, "grid_channels"), positive(*this, "grid_height"), positive(*this, "grid_width")};
  o.loss.lambda_ortho = get_real("lambda_ortho");
  o.loss.mix_probability = get_real("mix_probability");
  o.loss.mix_alpha = get_real("mix_alpha");
  o.loss.mixup_share = get_real("mixup_share");
  o.loss.margin = get_real("margin");
  o.quantized_features = get_bool("quantized_training");
  try {
    o.loss.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return o;
}

MetaConfig RunConfig::meta_config() const {
  MetaConfig m;
  m.meta_samples = positive(*this, "meta_samples");
  m.iterations = static_cast<int>(nonnegative(*this, "meta_iterations"));
  m.lr = get_real("meta_lr");
  m.margin = get_real("margin");
  m.query_batch = positive(*this, "meta_query_batch");
  const auto& obj = get_string("meta_objective");
  if (obj == "mm") m.objective = MetaObjective::MultiMargin;
  else if (obj == "ce") m.objective = MetaObjective::CrossEntropy;
  else throw ConfigError("meta_objective must be mm or ce");
  m.ce_scale = get_real("meta_ce_scale");
  m.grad_through_prototypes = get_bool("meta_grad_through_prototypes");
  m.quantized_features = get_bool("quantized_training");
  try {
    m.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return m;
}

QuantSpec RunConfig::quant_spec() const {
  QuantSpec q;
  q.feature_bits = static_cast<int>(get_int("feature_bits"));
  q.accum_bits = static_cast<int>(get_int("accum_bits"));
  q.prototype_bits = static_cast<int>(get_int("prototype_bits"));
  q.max_shots = static_cast<int>(get_int("max_shots"));
  const auto& shift = get_string("right_shift");
  if (shift != "auto") {
    long long v = 0;
    if (!parse_int(shift, v)) throw ConfigError("right_shift must be an integer or 'auto'");
    q.right_shift = static_cast<int>(v);
  }
  try {
    q.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return q;
}

FinetuneConfig RunConfig::finetune_config() const {
  FinetuneConfig f;
  f.epochs = static_cast<int>(positive(*this, "finetune_epochs"));
  f.sub_batch = positive(*this, "finetune_subbatch");
  f.lr = get_real("finetune_lr");
  f.shuffle = get_bool("finetune_shuffle");
  f.seed = seed();
  return f;
}

SplitConfig RunConfig::split_config() const {
  SplitConfig s;
  s.base_classes = positive(*this, "base_classes");
  s.num_sessions = nonnegative(*this, "sessions");
  s.ways = positive(*this, "ways");
  s.shots = positive(*this, "shots");
  s.per_class_cap = positive(*this, "per_class_cap");
  s.test_per_class = positive(*this, "test_per_class");
  s.seed = seed();
  return s;
}

SyntheticConfig RunConfig::synthetic_config() const {
  SyntheticConfig s;
  s.num_classes = positive(*this, "synthetic_classes");
  s.samples_per_class = positive(*this, "synthetic_per_class");
  s.grid = {positive(*this, "grid_channels"), positive(*this, "grid_height"), positive(*this, "grid_width")};
  s.seed = seed();
  return s;
}

}  // namespace ofscil::cli
