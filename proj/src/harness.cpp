#include "ofscil/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

namespace ofscil {

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// written by exactly one worker, so results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", 100.0 * v);
  return buf;
}

}  // namespace

std::vector<StreamViolation> validate_stream(const SessionStream& stream) {
  using Kind = StreamViolation::Kind;
  std::vector<StreamViolation> out;
  if (stream.base.empty()) out.push_back({Kind::EmptyBase, -1, 0, "base session is empty"});

  std::map<int, std::size_t> owner;
  auto claim = [&](const std::set<int>& classes, std::size_t session) {
    for (int c : classes) {
      auto [it, inserted] = owner.emplace(c, session);
      if (!inserted) {
        out.push_back({Kind::ClassOverlap, c, session,
                       "class " + std::to_string(c) + " appears in session " + std::to_string(it->second) +
                           " and session " + std::to_string(session)});
      }
    }
  };
  claim(stream.base.classes(), 0);
  for (std::size_t t = 0; t < stream.sessions.size(); ++t) {
    const auto& s = stream.sessions[t];
    const auto classes = s.classes();
    claim(classes, t + 1);
    if (classes.size() != stream.ways) {
      out.push_back({Kind::WrongWayCount, -1, t + 1,
                     "session " + std::to_string(t + 1) + " has " + std::to_string(classes.size()) +
                         " classes, expected " + std::to_string(stream.ways)});
    }
    std::map<int, std::size_t> counts;
    for (const auto& smp : s.samples) ++counts[smp.label];
    for (const auto& [c, n] : counts) {
      if (n != stream.shots) {
        out.push_back({Kind::WrongShotCount, c, t + 1,
                       "class " + std::to_string(c) + " in session " + std::to_string(t + 1) + " has " +
                           std::to_string(n) + " samples, expected " + std::to_string(stream.shots)});
      }
    }
  }
  const auto test_classes = stream.test.classes();
  for (const auto& [c, session] : owner) {
    if (!test_classes.count(c)) {
      out.push_back({Kind::MissingTestClass, c, session,
                     "class " + std::to_string(c) + " has no test samples"});
    }
  }
  for (int c : test_classes) {
    if (!owner.count(c)) {
      out.push_back({Kind::UnknownTestClass, c, 0,
                     "test class " + std::to_string(c) + " is not taught in any session"});
    }
  }
  return out;
}

SessionReport run_protocol(const ModelParams& params, const SessionStream& stream,
                           const QuantSpec& quant, const ProtocolOptions& options) {
  ModelParams model = params;
  auto [em, act_mem] = build_base_em(model, stream.base, quant);
  const std::set<int> base_classes = stream.base.classes();

  const auto& test = stream.test.samples;
  std::vector<Vector> theta_a(test.size());
  std::vector<Vector> theta_p(test.size());
  parallel_for(test.size(), options.threads, [&](std::size_t i) {
    theta_a[i] = forward_backbone(model, test[i].input);
  });
  auto project_test = [&] {
    parallel_for(test.size(), options.threads, [&](std::size_t i) { theta_p[i] = forward_fcr(model, theta_a[i]); });
  };
  project_test();

  std::vector<std::size_t> probe;
  for (std::size_t i = 0; i < test.size() && probe.size() < options.score_probe; ++i)
    if (base_classes.count(test[i].label)) probe.push_back(i);

  SessionReport report;
  report.finetune = options.finetune;
  report.config = options.config_echo;
  report.config["finetune"] = options.finetune ? "1" : "0";

  std::set<int> seen = base_classes;
  auto evaluate = [&](std::size_t session) {
    SessionResult r;
    r.session = session;
    r.classes = seen;
    for (std::size_t i = 0; i < test.size(); ++i)
      if (seen.count(test[i].label)) r.evaluated.push_back(i);
    std::vector<int> predicted(r.evaluated.size());
    parallel_for(r.evaluated.size(), options.threads, [&](std::size_t k) {
      predicted[k] = classify(em, theta_p[r.evaluated[k]]).class_id;
    });
    std::size_t hits = 0, base_n = 0, base_hits = 0, novel_n = 0, novel_hits = 0;
    for (std::size_t k = 0; k < r.evaluated.size(); ++k) {
      const int label = test[r.evaluated[k]].label;
      const bool ok = predicted[k] == label;
      hits += ok;
      if (base_classes.count(label)) {
        ++base_n;
        base_hits += ok;
      } else {
        ++novel_n;
        novel_hits += ok;
      }
    }
    auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
    r.accuracy = ratio(hits, r.evaluated.size());
    r.base_accuracy = ratio(base_hits, base_n);
    r.novel_accuracy = ratio(novel_hits, novel_n);

    r.probe_scores = Matrix(probe.size(), base_classes.size());
    for (std::size_t q = 0; q < probe.size(); ++q) {
      const auto cls = classify(em, theta_p[probe[q]]);
      std::size_t col = 0;
      for (std::size_t k = 0; k < cls.class_ids.size(); ++k)
        if (base_classes.count(cls.class_ids[k])) r.probe_scores(q, col++) = cls.scores[k];
    }
    report.sessions.push_back(std::move(r));
  };

  evaluate(0);
  for (std::size_t t = 0; t < stream.sessions.size(); ++t) {
    const auto& session = stream.sessions[t];
    const auto classes = session.classes();
    if (options.learn_new_classes) {
      for (int c : classes) learn_class(em, act_mem, model, session.inputs_of(c), c);
      seen.insert(classes.begin(), classes.end());
      if (options.finetune) {
        FinetuneConfig cfg = options.finetune_cfg;
        cfg.seed = options.finetune_cfg.seed + t;
        finetune_fcr(model, act_mem, em, cfg);
        project_test();
      }
    } else {
      seen.insert(classes.begin(), classes.end());
    }
    evaluate(t + 1);
  }

  double sum = 0.0;
  for (const auto& s : report.sessions) sum += s.accuracy;
  report.average = sum / static_cast<double>(report.sessions.size());
  return report;
}

std::vector<ForgettingEntry> forgetting_metrics(const SessionReport& report) {
  std::vector<ForgettingEntry> out;
  if (report.sessions.empty()) return out;
  const double first = report.sessions.front().base_accuracy;
  for (const auto& s : report.sessions) out.push_back({s.session, s.base_accuracy, first - s.base_accuracy});
  return out;
}

AblationFlags AblationFlags::parse(const std::string& text) {
  AblationFlags f;
  if (text.empty() || text == "none") return f;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, '+')) {
    if (tok == "AG") f.ag = true;
    else if (tok == "OR") f.orth = true;
    else if (tok == "MM") f.mm = true;
    else if (tok == "CE") f.ce = true;
    else if (tok == "FT") f.ft = true;
    else throw Error(ErrorCode::InvalidArgument, "unknown ablation flag '" + tok + "'");
  }
  return f;
}

std::string AblationFlags::label() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += name;
  };
  add(ag, "AG");
  add(orth, "OR");
  add(mm, "MM");
  add(ce, "CE");
  add(ft, "FT");
  return s.empty() ? "none" : s;
}

ModelParams train_model(const LabeledDataset& base, const AblationSetup& setup, const AblationFlags& flags) {
  if (flags.mm && flags.ce) {
    throw Error(ErrorCode::ConflictingFlags, "MM and CE are alternative metalearning objectives");
  }
  ModelShape shape = setup.shape;
  shape.input_dim = base.input_dim;
  ModelParams params = init_params(shape, setup.seed);
  FccHead fcc = FccHead::init(ClassIndex(base.classes()), params.d_p(), setup.seed);
  PretrainOptions opts = setup.pretrain;
  opts.seed = setup.seed;
  if (!flags.ag) opts.loss.mix_probability = 0.0;
  if (!flags.orth) opts.loss.lambda_ortho = 0.0;
  pretrain(params, fcc, base, opts);
  if (flags.mm || flags.ce) {
    MetaConfig meta = setup.meta;
    meta.objective = flags.mm ? MetaObjective::MultiMargin : MetaObjective::CrossEntropy;
    metalearn(params, base, meta, setup.seed + 1);
  }
  return params;
}

std::vector<AblationRow> ablation_matrix(const SessionStream& stream, const AblationSetup& setup,
                                         const std::vector<AblationFlags>& rows) {
  for (const auto& f : rows) {
    if (f.mm && f.ce) throw Error(ErrorCode::ConflictingFlags, "row " + f.label() + " sets both MM and CE");
  }
  std::vector<AblationRow> out;
  for (const auto& flags : rows) {
    const ModelParams params = train_model(stream.base, setup, flags);
    ProtocolOptions opts;
    opts.finetune = flags.ft;
    opts.finetune_cfg = setup.finetune;
    opts.threads = setup.threads;
    opts.config_echo = {
        {"AG", flags.ag ? "1" : "0"},
        {"OR", flags.orth ? "1" : "0"},
        {"MM", flags.mm ? "1" : "0"},
        {"CE", flags.ce ? "1" : "0"},
        {"FT", flags.ft ? "1" : "0"},
        {"mix_probability", flags.ag ? std::to_string(setup.pretrain.loss.mix_probability) : "0"},
        {"lambda_ortho", flags.orth ? std::to_string(setup.pretrain.loss.lambda_ortho) : "0"},
        {"meta_objective", flags.mm ? "mm" : flags.ce ? "ce" : "none"},
    };
    out.push_back({flags, run_protocol(params, stream, setup.quant, opts)});
  }
  return out;
}

void write_report_csv(std::ostream& out, const SessionReport& report, const std::string& method) {
  out << "method,ft";
  for (const auto& s : report.sessions) out << ',' << s.session;
  out << ",avg\n";
  out << method << ',' << (report.finetune ? "FT" : "-");
  for (const auto& s : report.sessions) out << ',' << pct(s.accuracy);
  out << ',' << pct(report.average) << '\n';
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "flags,AG,OR,MM,CE,FT";
  if (!rows.empty())
    for (const auto& s : rows.front().report.sessions) out << ',' << s.session;
  out << ",avg\n";
  for (const auto& row : rows) {
    const auto& f = row.flags;
    out << f.label() << ',' << f.ag << ',' << f.orth << ',' << f.mm << ',' << f.ce << ',' << f.ft;
    for (const auto& s : row.report.sessions) out << ',' << pct(s.accuracy);
    out << ',' << pct(row.report.average) << '\n';
  }
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "bits,kB,accuracy\n";
  for (const auto& r : rows) {
    char kb[32];
    std::snprintf(kb, sizeof(kb), "%.3f", static_cast<double>(r.memory_bytes) / 1000.0);
    out << r.bits << ',' << kb << ',' << pct(r.accuracy) << '\n';
  }
}

}  // namespace ofscil
