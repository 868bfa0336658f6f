#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "ofscil/harness.hpp"
#include "ofscil/synthetic.hpp"
#include "support.hpp"

using namespace ofscil;
using ofscil::testing::random_vector;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::NumericFailure;
}

// Hand-built stream: base {0,1,2}, sessions {3,4} and {5,6}, 2 test samples per class.
SessionStream toy_stream(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SessionStream s;
  s.ways = 2;
  s.shots = 5;
  auto fill = [&](LabeledDataset& ds, int c, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) ds.add(random_vector(dim, rng, 0.0, 1.0), c);
  };
  for (int c = 0; c < 3; ++c) fill(s.base, c, 6);
  s.sessions.resize(2);
  for (int c = 3; c < 7; ++c) fill(s.sessions[(c - 3) / 2], c, 5);
  for (int c = 0; c < 7; ++c) fill(s.test, c, 2);
  return s;
}

bool has(const std::vector<StreamViolation>& v, StreamViolation::Kind kind, int class_id) {
  return std::any_of(v.begin(), v.end(), [&](const auto& x) { return x.kind == kind && x.class_id == class_id; });
}

ModelParams small_model(std::size_t input_dim, std::uint64_t seed) {
  ModelShape s;
  s.input_dim = input_dim;
  s.hidden = {16};
  s.d_a = 12;
  s.d_p = 8;
  return init_params(s, seed);
}

struct Desk {
  SessionStream stream;
  ModelParams params;
};

// Desk-scale stream with a briefly pretrained model, shared across tests.
const Desk& desk() {
  static const Desk d = [] {
    Desk out;
    out.stream = split_fscil(make_synthetic_dataset(SyntheticConfig{}), SplitConfig{});
    ModelShape shape;
    shape.input_dim = out.stream.base.input_dim;
    shape.hidden = {64};
    shape.d_a = 64;
    shape.d_p = 32;
    out.params = init_params(shape, 0);
    FccHead fcc = FccHead::init(ClassIndex(out.stream.base.classes()), shape.d_p, 0);
    PretrainOptions opts;
    opts.epochs = 15;
    pretrain(out.params, fcc, out.stream.base, opts);
    return out;
  }();
  return d;
}

AblationSetup tiny_setup() {
  AblationSetup s;
  s.shape.hidden = {16};
  s.shape.d_a = 16;
  s.shape.d_p = 8;
  s.pretrain.epochs = 2;
  s.meta.iterations = 5;
  s.meta.query_batch = 8;
  s.finetune.epochs = 2;
  return s;
}

}  // namespace

TEST(ValidateStream, WellFormedIsClean) {
  EXPECT_TRUE(validate_stream(toy_stream(4, 1)).empty());
  EXPECT_TRUE(validate_stream(desk().stream).empty());
}

TEST(ValidateStream, OverlapNamesClass) {
  SessionStream s = toy_stream(4, 2);
  s.sessions[1].samples.clear();
  for (int k = 0; k < 5; ++k) s.sessions[1].add(Vector(4, 0.5), 3);
  for (int k = 0; k < 5; ++k) s.sessions[1].add(Vector(4, 0.5), 6);
  const auto v = validate_stream(s);
  ASSERT_TRUE(has(v, StreamViolation::Kind::ClassOverlap, 3));
  const auto it = std::find_if(v.begin(), v.end(), [](const auto& x) { return x.kind == StreamViolation::Kind::ClassOverlap; });
  EXPECT_EQ(it->session, 2u);
  EXPECT_NE(it->message.find("class 3"), std::string::npos);
}

TEST(ValidateStream, ShortSession) {
  SessionStream s = toy_stream(4, 3);
  s.sessions[0].samples.pop_back();
  const auto v = validate_stream(s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, StreamViolation::Kind::WrongShotCount);
  EXPECT_EQ(v[0].class_id, 4);
  EXPECT_EQ(v[0].session, 1u);
}

TEST(ValidateStream, WrongWays) {
  SessionStream s = toy_stream(4, 4);
  for (int k = 0; k < 5; ++k) s.sessions[0].add(Vector(4, 0.1), 9);
  s.test.add(Vector(4, 0.1), 9);
  const auto v = validate_stream(s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, StreamViolation::Kind::WrongWayCount);
}

TEST(ValidateStream, TestCoverage) {
  SessionStream s = toy_stream(4, 5);
  s.test = s.test.filter({0, 1, 2, 3, 4, 5});
  s.test.add(Vector(4, 0.0), 42);
  const auto v = validate_stream(s);
  EXPECT_TRUE(has(v, StreamViolation::Kind::MissingTestClass, 6));
  EXPECT_TRUE(has(v, StreamViolation::Kind::UnknownTestClass, 42));
  EXPECT_EQ(v.size(), 2u);
}

TEST(ValidateStream, EmptyBase) {
  SessionStream s = toy_stream(4, 6);
  s.base.samples.clear();
  s.test = s.test.filter({3, 4, 5, 6});
  const auto v = validate_stream(s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, StreamViolation::Kind::EmptyBase);
}

TEST(Protocol, ZeroSessionsReportsBaseOnly) {
  SessionStream s = toy_stream(6, 7);
  s.sessions.clear();
  s.test = s.test.filter({0, 1, 2});
  const SessionReport r = run_protocol(small_model(6, 1), s, QuantSpec{});
  ASSERT_EQ(r.sessions.size(), 1u);
  EXPECT_EQ(r.sessions[0].session, 0u);
  EXPECT_EQ(r.average, r.sessions[0].accuracy);
  EXPECT_EQ(r.sessions[0].novel_accuracy, 0.0);
}

TEST(Protocol, EvaluatedIndicesAreSeenClassTestSamples) {
  const SessionStream s = toy_stream(6, 8);
  const SessionReport r = run_protocol(small_model(6, 2), s, QuantSpec{});
  ASSERT_EQ(r.sessions.size(), 3u);
  for (const auto& res : r.sessions) {
    const auto seen = s.classes_up_to(res.session);
    EXPECT_EQ(res.classes, seen);
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < s.test.size(); ++i)
      if (seen.count(s.test.samples[i].label)) expected.push_back(i);
    EXPECT_EQ(res.evaluated, expected);
  }
  EXPECT_EQ(r.sessions[0].evaluated.size(), 6u);
  EXPECT_EQ(r.sessions[2].evaluated.size(), 14u);
}

TEST(Protocol, AverageIsMeanOfSessions) {
  const SessionReport r = run_protocol(small_model(6, 3), toy_stream(6, 9), QuantSpec{});
  double sum = 0.0;
  for (const auto& s : r.sessions) sum += s.accuracy;
  EXPECT_NEAR(r.average, sum / r.sessions.size(), 1e-12);
}

TEST(Protocol, DeskFinalSessionAboveChance) {
  const SessionReport r = run_protocol(desk().params, desk().stream, QuantSpec{});
  ASSERT_EQ(r.sessions.size(), 5u);
  EXPECT_EQ(r.sessions.back().classes.size(), 18u);
  EXPECT_GT(r.sessions.back().accuracy, 1.0 / 18.0);
  EXPECT_GT(r.sessions[0].accuracy, r.sessions.back().accuracy - 1e-12);
}

TEST(Protocol, ControlWithoutLearning) {
  ProtocolOptions off;
  off.learn_new_classes = false;
  const SessionReport learned = run_protocol(desk().params, desk().stream, QuantSpec{});
  const SessionReport r = run_protocol(desk().params, desk().stream, QuantSpec{}, off);
  for (std::size_t t = 1; t < r.sessions.size(); ++t) {
    EXPECT_EQ(r.sessions[t].novel_accuracy, 0.0);
    EXPECT_EQ(r.sessions[t].base_accuracy, r.sessions[0].base_accuracy);
  }
  EXPECT_GT(learned.sessions.back().novel_accuracy, 0.0);
}

TEST(Protocol, ProbeScoresUnchangedWithoutFinetune) {
  ProtocolOptions opts;
  opts.score_probe = 10;
  const SessionReport r = run_protocol(desk().params, desk().stream, QuantSpec{}, opts);
  const Matrix& first = r.sessions[0].probe_scores;
  ASSERT_EQ(first.rows(), 10u);
  ASSERT_EQ(first.cols(), 10u);
  for (const auto& s : r.sessions) EXPECT_EQ(s.probe_scores.data(), first.data());
}

TEST(Protocol, ReproducibleAcrossThreadCounts) {
  ProtocolOptions one, four;
  four.threads = 4;
  one.finetune = four.finetune = true;
  one.finetune_cfg.epochs = four.finetune_cfg.epochs = 3;
  const SessionReport a = run_protocol(desk().params, desk().stream, QuantSpec{}, one);
  const SessionReport b = run_protocol(desk().params, desk().stream, QuantSpec{}, one);
  const SessionReport c = run_protocol(desk().params, desk().stream, QuantSpec{}, four);
  for (std::size_t t = 0; t < a.sessions.size(); ++t) {
    EXPECT_EQ(a.sessions[t].accuracy, b.sessions[t].accuracy);
    EXPECT_EQ(a.sessions[t].accuracy, c.sessions[t].accuracy);
  }
  EXPECT_EQ(a.average, c.average);
  EXPECT_TRUE(a.finetune);
  EXPECT_EQ(a.config.at("finetune"), "1");
}

TEST(Forgetting, NoSessionsNoDrop) {
  SessionStream s = toy_stream(6, 10);
  s.sessions.clear();
  s.test = s.test.filter({0, 1, 2});
  const auto f = forgetting_metrics(run_protocol(small_model(6, 4), s, QuantSpec{}));
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].drop, 0.0);
  EXPECT_TRUE(forgetting_metrics(SessionReport{}).empty());
}

TEST(Forgetting, DuplicatePrototypeStealsBaseClass) {
  // Novel class 7 is taught with the samples of base class 20; its smaller id wins every tie.
  SessionStream s = toy_stream(6, 11);
  s.base = s.base.filter({0, 1});
  s.test = s.test.filter({0, 1});
  std::vector<Vector> shots;
  std::mt19937_64 rng(12);
  for (int k = 0; k < 5; ++k) shots.push_back(random_vector(6, rng, 0.0, 1.0));
  for (const auto& x : shots) s.base.add(x, 20);
  s.sessions.resize(1);
  s.sessions[0].samples.clear();
  for (const auto& x : shots) s.sessions[0].add(x, 7);
  for (int k = 0; k < 5; ++k) s.sessions[0].add(random_vector(6, rng, 0.0, 1.0), 8);
  for (const auto& x : shots) s.test.add(x, 20);
  s.test.add(random_vector(6, rng, 0.0, 1.0), 7);
  s.test.add(random_vector(6, rng, 0.0, 1.0), 8);
  ASSERT_TRUE(validate_stream(s).empty());

  QuantSpec full;
  full.prototype_bits = full.accum_bits;
  const ModelParams p = small_model(6, 5);
  const auto f = forgetting_metrics(run_protocol(p, s, full));
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].drop, 0.0);
  EXPECT_GT(f[1].drop, 0.0);
}

TEST(Ablation, ParseAndLabel) {
  EXPECT_EQ(AblationFlags::parse("none").label(), "none");
  EXPECT_EQ(AblationFlags::parse("").label(), "none");
  const auto f = AblationFlags::parse("FT+OR+AG+MM");
  EXPECT_TRUE(f.ag && f.orth && f.mm && f.ft && !f.ce);
  EXPECT_EQ(f.label(), "AG+OR+MM+FT");
  EXPECT_EQ(AblationFlags::parse("AG+OR+CE").label(), "AG+OR+CE");
  EXPECT_EQ(code_of([] { AblationFlags::parse("AG+XY"); }), ErrorCode::InvalidArgument);
}

TEST(Ablation, ConflictingFlags) {
  const SessionStream s = toy_stream(256, 12);
  EXPECT_EQ(code_of([&] { ablation_matrix(s, tiny_setup(), {AblationFlags::parse("AG+MM+CE")}); }),
            ErrorCode::ConflictingFlags);
  EXPECT_EQ(code_of([&] { train_model(s.base, tiny_setup(), AblationFlags::parse("MM+CE")); }),
            ErrorCode::ConflictingFlags);
}

TEST(Ablation, NoneAndAgDifferOnlyInAugmentationEcho) {
  const SessionStream s = toy_stream(256, 13);
  const auto rows = ablation_matrix(s, tiny_setup(), {AblationFlags::parse("none"), AblationFlags::parse("AG")});
  ASSERT_EQ(rows.size(), 2u);
  auto a = rows[0].report.config, b = rows[1].report.config;
  EXPECT_EQ(a.at("AG"), "0");
  EXPECT_EQ(b.at("AG"), "1");
  EXPECT_EQ(a.at("mix_probability"), "0");
  EXPECT_NE(b.at("mix_probability"), "0");
  a.erase("AG");
  a.erase("mix_probability");
  b.erase("AG");
  b.erase("mix_probability");
  EXPECT_EQ(a, b);
}

TEST(Ablation, CeRowProducesValidReport) {
  const SessionStream s = toy_stream(256, 14);
  const auto rows = ablation_matrix(s, tiny_setup(), {AblationFlags::parse("AG+OR+CE")});
  ASSERT_EQ(rows.size(), 1u);
  const auto& r = rows[0].report;
  EXPECT_EQ(r.sessions.size(), 3u);
  EXPECT_EQ(r.config.at("meta_objective"), "ce");
  for (const auto& res : r.sessions) {
    EXPECT_GE(res.accuracy, 0.0);
    EXPECT_LE(res.accuracy, 1.0);
  }
}

TEST(Csv, ReportLayout) {
  SessionReport r;
  r.sessions.resize(2);
  r.sessions[0].accuracy = 0.5;
  r.sessions[1].session = 1;
  r.sessions[1].accuracy = 0.25;
  r.average = 0.375;
  r.finetune = true;
  std::ostringstream out;
  write_report_csv(out, r, "ofscil");
  EXPECT_EQ(out.str(), "method,ft,0,1,avg\nofscil,FT,50.0000,25.0000,37.5000\n");
}

TEST(Csv, AblationAndSweepLayout) {
  AblationRow row;
  row.flags = AblationFlags::parse("AG+OR");
  row.report.sessions.resize(1);
  row.report.sessions[0].accuracy = 1.0;
  row.report.average = 1.0;
  std::ostringstream a;
  write_ablation_csv(a, {row});
  EXPECT_EQ(a.str(), "flags,AG,OR,MM,CE,FT,0,avg\nAG+OR,1,1,0,0,0,100.0000,100.0000\n");
  std::ostringstream s;
  write_sweep_csv(s, {{8, 9600, 0.875}, {1, 1200, 0.5}});
  EXPECT_EQ(s.str(), "bits,kB,accuracy\n8,9.600,87.5000\n1,1.200,50.0000\n");
}
