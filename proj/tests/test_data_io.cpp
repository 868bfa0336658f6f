#include <gtest/gtest.h>

#include <fstream>
#include <functional>
#include <set>

#include "ofscil/data_io.hpp"
#include "ofscil/synthetic.hpp"
#include "support.hpp"

using namespace ofscil;
using ofscil::testing::random_vector;
using ofscil::testing::TempDir;

namespace {

LabeledDataset toy(std::size_t classes, std::size_t per_class, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LabeledDataset ds;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t k = 0; k < per_class; ++k) ds.add(random_vector(dim, rng), static_cast<int>(c));
  return ds;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::NumericFailure;
}

}  // namespace

TEST(Dataset, RawRoundTripF64Bitwise) {
  TempDir dir("ds");
  const LabeledDataset ds = toy(3, 1, 5, 1);
  save_dataset(ds, dir / "a.ofds");
  const LabeledDataset back = load_dataset(dir / "a.ofds");
  EXPECT_EQ(back.samples, ds.samples);
  EXPECT_EQ(back.input_dim, 5u);
}

TEST(Dataset, RawRoundTripF32) {
  TempDir dir("ds");
  const LabeledDataset ds = toy(3, 1, 5, 2);
  save_dataset(ds, dir / "a.ofds", DatasetFormat::RawBinary, SampleDtype::F32);
  const LabeledDataset back = load_dataset(dir / "a.ofds", DatasetFormat::RawBinary);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(back.samples[i].input[j], ds.samples[i].input[j], 1e-7);
  }
}

TEST(Dataset, CsvRoundTrip) {
  TempDir dir("ds");
  const LabeledDataset ds = toy(2, 3, 4, 3);
  save_dataset(ds, dir / "a.csv", DatasetFormat::Csv);
  EXPECT_EQ(ofscil::testing::read_file(dir / "a.csv").substr(0, 18), "label,f0,f1,f2,f3\n");
  EXPECT_EQ(load_dataset(dir / "a.csv").samples, ds.samples);
  EXPECT_EQ(load_dataset(dir / "a.csv", DatasetFormat::Csv).samples, ds.samples);
}

TEST(Dataset, TruncatedPayload) {
  TempDir dir("ds");
  save_dataset(toy(3, 1, 5, 4), dir / "a.ofds");
  const std::string bytes = ofscil::testing::read_file(dir / "a.ofds");
  std::ofstream(dir / "cut.ofds", std::ios::binary).write(bytes.data(), 17 + 8 * 7);
  EXPECT_EQ(code_of([&] { load_dataset(dir / "cut.ofds"); }), ErrorCode::TruncatedPayload);
}

TEST(Dataset, CorruptHeader) {
  TempDir dir("ds");
  std::ofstream(dir / "bad.ofds", std::ios::binary) << "OFDS\x01";
  EXPECT_EQ(code_of([&] { load_dataset(dir / "bad.ofds", DatasetFormat::RawBinary); }), ErrorCode::CorruptHeader);
  std::ofstream(dir / "bad.csv") << "x,f0\n1,2\n";
  EXPECT_EQ(code_of([&] { load_dataset(dir / "bad.csv"); }), ErrorCode::CorruptHeader);
  EXPECT_EQ(code_of([&] { load_dataset(dir / "missing.ofds"); }), ErrorCode::IoError);
}

TEST(Cifar, HandBuiltRecords) {
  TempDir dir("cifar");
  std::string bytes;
  for (int r = 0; r < 2; ++r) {
    bytes.push_back(static_cast<char>(7 + r));   // coarse
    bytes.push_back(static_cast<char>(42 + r));  // fine
    for (std::size_t i = 0; i < 3072; ++i) bytes.push_back(static_cast<char>((i * 7 + r) % 256));
  }
  std::ofstream(dir / "b.bin", std::ios::binary).write(bytes.data(), bytes.size());
  const LabeledDataset ds = load_cifar_batch(dir / "b.bin");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.input_dim, 3072u);
  for (int r = 0; r < 2; ++r) {
    EXPECT_EQ(ds.samples[r].label, 42 + r);
    for (std::size_t i = 0; i < 3072; ++i)
      ASSERT_EQ(ds.samples[r].input[i], static_cast<double>((i * 7 + r) % 256) / 255.0);
  }
}

TEST(Cifar, EmptyAndBadSize) {
  TempDir dir("cifar");
  std::ofstream(dir / "empty.bin", std::ios::binary).flush();
  EXPECT_TRUE(load_cifar_batch(dir / "empty.bin").empty());
  const std::string odd(3073, '\0');
  std::ofstream(dir / "odd.bin", std::ios::binary).write(odd.data(), odd.size());
  EXPECT_EQ(code_of([&] { load_cifar_batch(dir / "odd.bin"); }), ErrorCode::SizeNotMultipleOfRecord);
}

TEST(Split, HundredClassArithmetic) {
  const LabeledDataset ds = toy(100, 8, 2, 5);
  SplitConfig cfg;
  cfg.base_classes = 60;
  cfg.num_sessions = 8;
  cfg.ways = 5;
  cfg.shots = 5;
  cfg.per_class_cap = 5;
  cfg.test_per_class = 2;
  const SessionStream s = split_fscil(ds, cfg);
  EXPECT_EQ(s.base.classes().size(), 60u);
  ASSERT_EQ(s.sessions.size(), 8u);
  for (const auto& sess : s.sessions) {
    EXPECT_EQ(sess.classes().size(), 5u);
    EXPECT_EQ(sess.size(), 25u);
  }
  EXPECT_EQ(s.classes_up_to(8).size(), 100u);
  EXPECT_EQ(s.test.classes().size(), 100u);
}

TEST(Split, NineSessionsTooMany) {
  const LabeledDataset ds = toy(100, 8, 2, 6);
  SplitConfig cfg;
  cfg.base_classes = 60;
  cfg.num_sessions = 9;
  cfg.ways = 5;
  cfg.test_per_class = 2;
  EXPECT_EQ(code_of([&] { split_fscil(ds, cfg); }), ErrorCode::InsufficientClasses);
}

TEST(Split, DeskDefaultIsDisjointAndExact) {
  const LabeledDataset ds = make_synthetic_dataset(SyntheticConfig{});
  const SplitConfig cfg;
  const SessionStream s = split_fscil(ds, cfg);
  EXPECT_EQ(s.base.classes(), (std::set<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  for (int c : s.base.classes()) EXPECT_EQ(s.base.inputs_of(c).size(), cfg.per_class_cap);
  std::set<int> seen = s.base.classes();
  for (std::size_t t = 0; t < s.sessions.size(); ++t) {
    const auto cls = s.sessions[t].classes();
    EXPECT_EQ(cls.size(), cfg.ways);
    for (int c : cls) {
      EXPECT_TRUE(seen.insert(c).second);
      EXPECT_EQ(s.sessions[t].inputs_of(c).size(), cfg.shots);
    }
  }
  for (int c : s.test.classes()) EXPECT_EQ(s.test.inputs_of(c).size(), cfg.test_per_class);
  std::set<std::size_t> used;
  auto take = [&](const std::vector<std::size_t>& idx) {
    for (auto i : idx) EXPECT_TRUE(used.insert(i).second) << "sample " << i << " reused";
  };
  take(s.base_indices);
  for (const auto& idx : s.session_indices) take(idx);
  take(s.test_indices);
}

TEST(Split, SameSeedSameSplit) {
  const LabeledDataset ds = make_synthetic_dataset(SyntheticConfig{});
  SplitConfig cfg;
  const SessionStream a = split_fscil(ds, cfg);
  const SessionStream b = split_fscil(ds, cfg);
  EXPECT_EQ(a.base_indices, b.base_indices);
  EXPECT_EQ(a.session_indices, b.session_indices);
  EXPECT_EQ(a.test_indices, b.test_indices);
  cfg.seed = 1;
  EXPECT_NE(split_fscil(ds, cfg).base_indices, a.base_indices);
}

TEST(Split, InsufficientSamples) {
  const LabeledDataset ds = toy(18, 6, 2, 7);
  SplitConfig cfg;
  EXPECT_EQ(code_of([&] { split_fscil(ds, cfg); }), ErrorCode::InsufficientSamples);
}

TEST(Manifest, SaveAndLoad) {
  TempDir dir("manifest");
  const SessionStream s = split_fscil(make_synthetic_dataset(SyntheticConfig{}), SplitConfig{});
  save_stream(s, dir / "stream.txt");
  const SessionStream back = load_stream_manifest(dir / "stream.txt");
  EXPECT_EQ(back.base.samples, s.base.samples);
  ASSERT_EQ(back.sessions.size(), s.sessions.size());
  for (std::size_t t = 0; t < s.sessions.size(); ++t) EXPECT_EQ(back.sessions[t].samples, s.sessions[t].samples);
  EXPECT_EQ(back.test.samples, s.test.samples);
  EXPECT_EQ(back.ways, 2u);
  EXPECT_EQ(back.shots, 5u);
}

TEST(Manifest, Malformed) {
  TempDir dir("manifest");
  std::ofstream(dir / "m.txt") << "base=a.ofds\nthis line is wrong\n";
  EXPECT_EQ(code_of([&] { load_stream_manifest(dir / "m.txt"); }), ErrorCode::InvalidArgument);
  std::ofstream(dir / "k.txt") << "base=a.ofds\ncolour=red\n";
  EXPECT_EQ(code_of([&] { load_stream_manifest(dir / "k.txt"); }), ErrorCode::InvalidArgument);
  std::ofstream(dir / "w.txt") << "base=a.ofds\ntest=b.ofds\nways=two\nshots=5\n";
  EXPECT_EQ(code_of([&] { load_stream_manifest(dir / "w.txt"); }), ErrorCode::InvalidArgument);
}

TEST(Synthetic, DeterministicAndShaped) {
  SyntheticConfig cfg;
  const LabeledDataset a = make_synthetic_dataset(cfg);
  EXPECT_EQ(a.size(), cfg.num_classes * cfg.samples_per_class);
  EXPECT_EQ(a.input_dim, cfg.grid.size());
  EXPECT_EQ(a.classes().size(), cfg.num_classes);
  EXPECT_EQ(make_synthetic_dataset(cfg).samples, a.samples);
  cfg.seed = 3;
  EXPECT_NE(make_synthetic_dataset(cfg).samples, a.samples);
}
