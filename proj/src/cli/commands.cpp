#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "ofscil/cli.hpp"
#include "ofscil/error.hpp"

namespace ofscil::cli {

namespace {

namespace fs = std::filesystem;

std::ofstream open_output(const std::string& path) {
  if (path.empty()) throw ConfigError("output path is empty");
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  return out;
}

DatasetFormat dataset_format(const std::string& name) {
  if (name == "auto") return DatasetFormat::Auto;
  if (name == "raw") return DatasetFormat::RawBinary;
  if (name == "csv") return DatasetFormat::Csv;
  throw ConfigError("dataset_format must be auto, raw, csv or cifar");
}

LabeledDataset load_samples(const RunConfig& cfg, const std::string& path) {
  if (path.empty()) throw ConfigError("no samples file configured");
  const auto& fmt = cfg.get_string("dataset_format");
  if (fmt == "cifar") return load_cifar_batch(path);
  return load_dataset(path, dataset_format(fmt));
}

SessionStream load_stream(const RunConfig& cfg) {
  const auto& manifest = cfg.get_string("manifest");
  if (!manifest.empty()) return load_stream_manifest(manifest);
  const auto& dataset = cfg.get_string("dataset");
  LabeledDataset ds = dataset == "synthetic" ? make_synthetic_dataset(cfg.synthetic_config())
                                              : load_samples(cfg, dataset);
  return split_fscil(ds, cfg.split_config());
}

std::size_t threads(const RunConfig& cfg) {
  const long long t = cfg.get_int("threads");
  if (t <= 0) throw ConfigError("threads must be positive");
  return static_cast<std::size_t>(t);
}

int cmd_pretrain(const RunConfig& cfg, std::ostream& out) {
  const SessionStream stream = load_stream(cfg);
  ModelParams params = init_params(cfg.model_shape(stream.base.input_dim), cfg.seed());
  FccHead fcc = FccHead::init(ClassIndex(stream.base.classes()), params.d_p(), cfg.seed());
  const auto history = pretrain(params, fcc, stream.base, cfg.pretrain_options());
  save_params(params, cfg.get_string("params_out"));
  auto csv = open_output(cfg.get_string("history_csv"));
  write_pretrain_history(csv, history);
  if (!history.empty()) {
    out << "pretrain: " << history.size() << " epochs, final accuracy " << history.back().accuracy << '\n';
  }
  return kOk;
}

int cmd_metalearn(const RunConfig& cfg, std::ostream& out) {
  const SessionStream stream = load_stream(cfg);
  ModelParams params = load_params(cfg.get_string("params_in"));
  const auto history = metalearn(params, stream.base, cfg.meta_config(), cfg.seed() + 1);
  save_params(params, cfg.get_string("params_out"));
  auto csv = open_output(cfg.get_string("meta_history_csv"));
  write_meta_history(csv, history);
  out << "metalearn: " << history.size() << " iterations\n";
  return kOk;
}

int cmd_protocol(const RunConfig& cfg, std::ostream& out) {
  const SessionStream stream = load_stream(cfg);
  const ModelParams params = load_params(cfg.get_string("params_in"));
  ProtocolOptions opts;
  opts.finetune = cfg.get_bool("finetune");
  opts.finetune_cfg = cfg.finetune_config();
  opts.threads = threads(cfg);
  const SessionReport report = run_protocol(params, stream, cfg.quant_spec(), opts);
  auto csv = open_output(cfg.get_string("report_csv"));
  write_report_csv(csv, report, "ofscil");
  for (const auto& s : report.sessions) {
    out << "session " << s.session << ": " << s.classes.size() << " classes, accuracy " << s.accuracy << '\n';
  }
  out << "average " << report.average << '\n';
  return kOk;
}

int cmd_sweep(const RunConfig& cfg, std::ostream& out) {
  const SessionStream stream = load_stream(cfg);
  const ModelParams params = load_params(cfg.get_string("params_in"));
  QuantSpec quant = cfg.quant_spec();
  quant.prototype_bits = quant.accum_bits;
  BaseMemories mem = build_base_em(params, stream.base, quant);
  for (const auto& session : stream.sessions) {
    for (int c : session.classes()) {
      const auto samples = session.inputs_of(c);
      learn_class(mem.em, mem.act_mem, params, samples, c);
    }
  }
  std::vector<int> bits;
  for (long long b : cfg.get_int_list("sweep_bits")) bits.push_back(static_cast<int>(b));
  const auto rows = precision_sweep(mem.em, extract_features(params, stream.test), bits);
  auto csv = open_output(cfg.get_string("sweep_csv"));
  write_sweep_csv(csv, rows);
  for (const auto& r : rows) out << r.bits << " bits: accuracy " << r.accuracy << '\n';
  return kOk;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  const SessionStream stream = load_stream(cfg);
  AblationSetup setup;
  setup.shape = cfg.model_shape(stream.base.input_dim);
  setup.pretrain = cfg.pretrain_options();
  setup.meta = cfg.meta_config();
  setup.quant = cfg.quant_spec();
  setup.finetune = cfg.finetune_config();
  setup.seed = cfg.seed();
  setup.threads = threads(cfg);
  std::vector<AblationFlags> rows;
  for (const auto& text : cfg.get_string_list("ablation_rows")) {
    try {
      rows.push_back(AblationFlags::parse(text));
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  const auto results = ablation_matrix(stream, setup, rows);
  auto csv = open_output(cfg.get_string("ablate_csv"));
  write_ablation_csv(csv, results);
  for (const auto& r : results) out << r.flags.label() << ": average " << r.report.average << '\n';
  return kOk;
}

int cmd_validate(const RunConfig& cfg, std::ostream& out) {
  if (cfg.get_string("manifest").empty()) throw ConfigError("validate needs a manifest");
  const SessionStream stream = load_stream_manifest(cfg.get_string("manifest"));
  const auto violations = validate_stream(stream);
  for (const auto& v : violations) out << "violation: " << v.message << '\n';
  if (!violations.empty()) return kViolations;
  out << "stream valid: " << stream.base.classes().size() << " base classes, " << stream.sessions.size()
      << " sessions\n";
  return kOk;
}

int cmd_learn_class(const RunConfig& cfg, std::ostream& out) {
  const ModelParams params = load_params(cfg.get_string("params_in"));
  const LabeledDataset samples = load_samples(cfg, cfg.get_string("samples"));
  if (samples.empty()) throw Error(ErrorCode::EmptySampleSet, "samples file holds no samples");
  int class_id = static_cast<int>(cfg.get_int("class_id"));
  if (class_id < 0) {
    const auto labels = samples.classes();
    if (labels.size() != 1) throw ConfigError("samples hold several labels; set class_id");
    class_id = *labels.begin();
  }
  const QuantSpec quant = cfg.quant_spec();
  const auto& em_in = cfg.get_string("em_in");
  ExplicitMemory em = em_in.empty() ? ExplicitMemory(params.d_p(), quant) : load_memory(em_in, quant);
  const auto& act_in = cfg.get_string("act_in");
  ActivationMemory act = act_in.empty() ? ActivationMemory(params.d_a()) : load_activation_memory(act_in);
  std::vector<Vector> inputs;
  for (const auto& s : samples.samples) inputs.push_back(s.input);
  learn_class(em, act, params, inputs, class_id);
  save_memory(em, cfg.get_string("em_out"));
  if (!cfg.get_string("act_out").empty()) save_activation_memory(act, cfg.get_string("act_out"));
  out << "learned class " << class_id << " from " << inputs.size() << " samples; memory holds " << em.size()
      << " classes\n";
  return kOk;
}

int cmd_classify(const RunConfig& cfg, std::ostream& out) {
  const ModelParams params = load_params(cfg.get_string("params_in"));
  if (cfg.get_string("em_in").empty()) throw ConfigError("classify needs em_in");
  const ExplicitMemory em = load_memory(cfg.get_string("em_in"), cfg.quant_spec());
  const LabeledDataset samples = load_samples(cfg, cfg.get_string("samples"));
  auto csv = open_output(cfg.get_string("predictions_csv"));
  csv << "index,label,predicted,score\n";
  std::size_t correct = 0;
  char buf[64];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples.samples[i];
    const auto c = classify(em, forward_features(params, s.input));
    double best = 0.0;
    for (std::size_t k = 0; k < c.class_ids.size(); ++k)
      if (c.class_ids[k] == c.class_id) best = c.scores[k];
    std::snprintf(buf, sizeof buf, "%.10g", best);
    csv << i << ',' << s.label << ',' << c.class_id << ',' << buf << '\n';
    if (c.class_id == s.label) ++correct;
  }
  out << "classified " << samples.size() << " samples, " << correct << " match their label\n";
  return kOk;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NumericFailure:
      return kNumericFailure;
    case ErrorCode::InvalidArgument:
    case ErrorCode::ConflictingFlags:
      return kConfigError;
    default:
      return kDataError;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Online few-shot class-incremental learning experiments", "ofscil"};
  app.require_subcommand(1);
  bool dump_config = false;
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flag_values;

  using Handler = int (*)(const RunConfig&, std::ostream&);
  const std::vector<std::pair<std::string, Handler>> commands = {
      {"pretrain", cmd_pretrain},       {"metalearn", cmd_metalearn}, {"protocol", cmd_protocol},
      {"sweep", cmd_sweep},             {"ablate", cmd_ablate},       {"validate", cmd_validate},
      {"learn-class", cmd_learn_class}, {"classify", cmd_classify},
  };
  const std::map<std::string, std::string> descriptions = {
      {"pretrain", "pretrain backbone and FCR on the base session"},
      {"metalearn", "metalearn a pretrained model on the base session"},
      {"protocol", "run the session protocol and write the report"},
      {"sweep", "prototype precision sweep"},
      {"ablate", "train and evaluate every ablation row"},
      {"validate", "check a stream manifest"},
      {"learn-class", "add one class to an explicit memory snapshot"},
      {"classify", "classify samples against an explicit memory snapshot"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, handler] : commands) {
    auto* sub = app.add_subcommand(name, descriptions.at(name));
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--set", sets, "key=value override (repeatable)");
    sub->add_flag("--dump-config", dump_config, "print the effective config and exit");
    for (const auto& key : RunConfig::keys()) {
      sub->add_option_function<std::string>(
          "--" + key.name, [&flag_values, name = key.name](const std::string& v) { flag_values[name] = v; },
          key.help);
    }
    subs.push_back(sub);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    for (auto* sub : subs) {
      if (sub->parsed()) {
        out << sub->help();
        return kOk;
      }
    }
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg.load_file(config_path);
    cfg.apply_environment();
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [k, v] : flag_values) cfg.set(k, v);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  if (dump_config) {
    out << cfg.dump();
    return kOk;
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      return commands[i].second(cfg, out);
    } catch (const ConfigError& e) {
      err << "config error: " << e.what() << '\n';
      return kConfigError;
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return exit_code_for(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
      err << "error: " << e.what() << '\n';
      return kDataError;
    }
  }
  return kConfigError;
}

}  // namespace ofscil::cli
