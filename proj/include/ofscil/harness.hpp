#pragma once

// FSCIL session protocol: base session, then incremental sessions learned
// online, each evaluated on the test samples of every class seen so far.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ofscil/backbone.hpp"
#include "ofscil/data_io.hpp"
#include "ofscil/explicit_memory.hpp"
#include "ofscil/offline_training.hpp"
#include "ofscil/online_learner.hpp"

namespace ofscil {

struct StreamViolation {
  enum class Kind { ClassOverlap, WrongWayCount, WrongShotCount, MissingTestClass, UnknownTestClass,
                    EmptyBase };
  Kind kind;
  int class_id = -1;
  std::size_t session = 0;  // 0 = base
  std::string message;
};

std::vector<StreamViolation> validate_stream(const SessionStream& stream);

struct ProtocolOptions {
  bool finetune = false;
  FinetuneConfig finetune_cfg;
  // Control switch: when false, incremental sessions add no prototypes.
  bool learn_new_classes = true;
  // Number of leading base-class test samples whose base-class scores are recorded per session.
  std::size_t score_probe = 0;
  std::size_t threads = 1;
  std::map<std::string, std::string> config_echo;
};

struct SessionResult {
  std::size_t session = 0;
  std::set<int> classes;
  double accuracy = 0.0;
  double base_accuracy = 0.0;   // restricted to base-class test samples
  double novel_accuracy = 0.0;  // restricted to incremental-class test samples (0 in session 0)
  std::vector<std::size_t> evaluated;  // test-set indices that were evaluated
  Matrix probe_scores;                 // score_probe x |C0|
};

struct SessionReport {
  std::vector<SessionResult> sessions;
  double average = 0.0;
  bool finetune = false;
  std::map<std::string, std::string> config;
};

SessionReport run_protocol(const ModelParams& params, const SessionStream& stream,
                           const QuantSpec& quant, const ProtocolOptions& options = {});

// Per session: base-class accuracy and its drop from session 0.
struct ForgettingEntry {
  std::size_t session = 0;
  double base_accuracy = 0.0;
  double drop = 0.0;
};
std::vector<ForgettingEntry> forgetting_metrics(const SessionReport& report);

struct AblationFlags {
  bool ag = false, orth = false, mm = false, ce = false, ft = false;

  // "none" or '+'-joined subset of AG, OR, MM, CE, FT.
  static AblationFlags parse(const std::string& text);
  std::string label() const;
};

struct AblationSetup {
  ModelShape shape;
  PretrainOptions pretrain;  // loss.mix_probability / lambda_ortho are the "on" values
  MetaConfig meta;
  QuantSpec quant;
  FinetuneConfig finetune;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct AblationRow {
  AblationFlags flags;
  SessionReport report;
};

// Trains and evaluates one configuration per flag set, all from the same seed.
// Throws ConflictingFlags when MM and CE are both set.
std::vector<AblationRow> ablation_matrix(const SessionStream& stream, const AblationSetup& setup,
                                         const std::vector<AblationFlags>& rows);

// Pretrain + optional metalearning for one flag set.
ModelParams train_model(const LabeledDataset& base, const AblationSetup& setup, const AblationFlags& flags);

// Table-style CSV: method, ft, per-session accuracy [%], avg.
void write_report_csv(std::ostream& out, const SessionReport& report, const std::string& method);
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace ofscil
