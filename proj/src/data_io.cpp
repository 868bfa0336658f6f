#include "ofscil/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "binary_io.hpp"

namespace ofscil {

namespace {

constexpr std::string_view kDatasetMagic = "OFDS";
constexpr std::uint32_t kDatasetVersion = 1;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  return out;
}

LabeledDataset load_raw(std::ifstream& in, const std::string& name) {
  auto corrupt = [&](const std::string& why) {
    return Error(ErrorCode::CorruptHeader, name + ": " + why);
  };
  if (!detail::read_magic(in, kDatasetMagic)) throw corrupt("bad magic");
  std::uint32_t version = 0, count = 0, dim = 0;
  std::uint8_t dtype = 0;
  if (!detail::read_le(in, version) || !detail::read_le(in, count) || !detail::read_le(in, dim) ||
      !detail::read_le(in, dtype)) {
    throw corrupt("truncated header");
  }
  if (version != kDatasetVersion) throw corrupt("unsupported version " + std::to_string(version));
  if (dtype > 2) throw corrupt("unknown dtype " + std::to_string(dtype));
  if (count > 0 && dim == 0) throw corrupt("zero input dimension");

  LabeledDataset ds;
  ds.input_dim = dim;
  ds.samples.resize(count);
  auto truncated = [&] { return Error(ErrorCode::TruncatedPayload, name + ": payload shorter than count x dim"); };
  for (auto& s : ds.samples) {
    s.input.resize(dim);
    for (auto& v : s.input) {
      switch (static_cast<SampleDtype>(dtype)) {
        case SampleDtype::F32: {
          float f = 0.0f;
          if (!detail::read_f32(in, f)) throw truncated();
          v = f;
          break;
        }
        case SampleDtype::F64:
          if (!detail::read_f64(in, v)) throw truncated();
          break;
        case SampleDtype::U8Image: {
          std::uint8_t b = 0;
          if (!detail::read_le(in, b)) throw truncated();
          v = static_cast<double>(b) / 255.0;
          break;
        }
      }
    }
  }
  for (auto& s : ds.samples) {
    std::uint32_t label = 0;
    if (!detail::read_le(in, label)) throw truncated();
    s.label = static_cast<int>(label);
  }
  return ds;
}

LabeledDataset load_csv(std::ifstream& in, const std::string& name) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::CorruptHeader, name + ": empty csv");
  const auto header = split_commas(line);
  if (header.empty() || header.front() != "label") {
    throw Error(ErrorCode::CorruptHeader, name + ": csv header must start with 'label'");
  }
  LabeledDataset ds;
  ds.input_dim = header.size() - 1;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::TruncatedPayload, name + ": row " + std::to_string(row) + " has " +
                                                   std::to_string(cells.size()) + " cells");
    }
    Sample s;
    try {
      s.label = std::stoi(cells[0]);
      s.input.reserve(ds.input_dim);
      for (std::size_t i = 1; i < cells.size(); ++i) s.input.push_back(std::stod(cells[i]));
    } catch (const std::exception&) {
      throw Error(ErrorCode::CorruptHeader, name + ": unparsable value in row " + std::to_string(row));
    }
    if (s.label < 0) throw Error(ErrorCode::CorruptHeader, name + ": negative label");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::set<int> LabeledDataset::classes() const {
  std::set<int> c;
  for (const auto& s : samples) c.insert(s.label);
  return c;
}

std::vector<Vector> LabeledDataset::inputs_of(int label) const {
  std::vector<Vector> out;
  for (const auto& s : samples)
    if (s.label == label) out.push_back(s.input);
  return out;
}

LabeledDataset LabeledDataset::filter(const std::set<int>& labels) const {
  LabeledDataset out;
  out.input_dim = input_dim;
  for (const auto& s : samples)
    if (labels.count(s.label)) out.samples.push_back(s);
  return out;
}

void LabeledDataset::add(Vector input, int label) {
  if (samples.empty() && input_dim == 0) input_dim = input.size();
  if (input.size() != input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "sample dimension " + std::to_string(input.size()) +
                                              " != " + std::to_string(input_dim));
  }
  if (label < 0) throw Error(ErrorCode::InvalidArgument, "negative label");
  samples.push_back({std::move(input), label});
}

LabeledDataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open dataset " + path.string());
  if (format == DatasetFormat::Auto) {
    char head[4] = {};
    in.read(head, 4);
    format = (in.gcount() == 4 && std::string_view(head, 4) == kDatasetMagic) ? DatasetFormat::RawBinary
                                                                               : DatasetFormat::Csv;
    in.clear();
    in.seekg(0);
  }
  return format == DatasetFormat::RawBinary ? load_raw(in, path.string()) : load_csv(in, path.string());
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path, DatasetFormat format,
                  SampleDtype dtype) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write dataset " + path.string());
  if (format == DatasetFormat::Csv) {
    out << "label";
    for (std::size_t i = 0; i < ds.input_dim; ++i) out << ",f" << i;
    out << '\n';
    for (const auto& s : ds.samples) {
      out << s.label;
      for (double v : s.input) out << ',' << format_double(v);
      out << '\n';
    }
  } else {
    detail::write_magic(out, kDatasetMagic);
    detail::write_le<std::uint32_t>(out, kDatasetVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.input_dim));
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    for (const auto& s : ds.samples) {
      for (double v : s.input) {
        switch (dtype) {
          case SampleDtype::F32: detail::write_f32(out, static_cast<float>(v)); break;
          case SampleDtype::F64: detail::write_f64(out, v); break;
          case SampleDtype::U8Image:
            detail::write_le<std::uint8_t>(
                out, static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)));
            break;
        }
      }
    }
    for (const auto& s : ds.samples) detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.label));
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

LabeledDataset load_cifar_batch(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open CIFAR batch " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw Error(ErrorCode::SizeNotMultipleOfRecord,
                path.string() + ": " + std::to_string(bytes.size()) + " bytes is not a multiple of " +
                    std::to_string(kCifarRecordBytes));
  }
  LabeledDataset ds;
  ds.input_dim = kCifarRecordBytes - 2;
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  ds.samples.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    auto& s = ds.samples[r];
    s.label = rec[1];
    s.input.resize(ds.input_dim);
    for (std::size_t i = 0; i < ds.input_dim; ++i) s.input[i] = static_cast<double>(rec[2 + i]) / 255.0;
  }
  return ds;
}

std::set<int> SessionStream::classes_up_to(std::size_t session) const {
  std::set<int> c = base.classes();
  for (std::size_t t = 0; t < session && t < sessions.size(); ++t) {
    const auto s = sessions[t].classes();
    c.insert(s.begin(), s.end());
  }
  return c;
}

SessionStream split_fscil(const LabeledDataset& ds, const SplitConfig& cfg) {
  if (cfg.ways == 0 || cfg.shots == 0 || cfg.base_classes == 0) {
    throw Error(ErrorCode::InvalidArgument, "split needs positive base_classes, ways and shots");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) by_class[ds.samples[i].label].push_back(i);

  const std::size_t needed = cfg.base_classes + cfg.num_sessions * cfg.ways;
  if (by_class.size() < needed) {
    throw Error(ErrorCode::InsufficientClasses,
                "split needs " + std::to_string(needed) + " classes, dataset has " +
                    std::to_string(by_class.size()));
  }

  SessionStream stream;
  stream.ways = cfg.ways;
  stream.shots = cfg.shots;
  stream.base.input_dim = stream.test.input_dim = ds.input_dim;
  stream.sessions.resize(cfg.num_sessions);
  stream.session_indices.resize(cfg.num_sessions);
  for (auto& s : stream.sessions) s.input_dim = ds.input_dim;

  std::mt19937_64 rng(cfg.seed);
  std::size_t rank = 0;
  for (auto& [label, indices] : by_class) {
    if (rank >= needed) break;
    const bool is_base = rank < cfg.base_classes;
    const std::size_t minimum = (is_base ? 1 : cfg.shots) + cfg.test_per_class;
    if (indices.size() < minimum) {
      throw Error(ErrorCode::InsufficientSamples,
                  "class " + std::to_string(label) + " has " + std::to_string(indices.size()) +
                      " samples, split needs " + std::to_string(minimum));
    }
    const std::size_t train =
        is_base ? std::min(cfg.per_class_cap, indices.size() - cfg.test_per_class) : cfg.shots;
    std::shuffle(indices.begin(), indices.end(), rng);
    for (std::size_t k = 0; k < cfg.test_per_class; ++k) {
      stream.test.samples.push_back(ds.samples[indices[k]]);
      stream.test_indices.push_back(indices[k]);
    }
    LabeledDataset& dest =
        is_base ? stream.base : stream.sessions[(rank - cfg.base_classes) / cfg.ways];
    auto& dest_idx =
        is_base ? stream.base_indices : stream.session_indices[(rank - cfg.base_classes) / cfg.ways];
    for (std::size_t k = cfg.test_per_class; k < cfg.test_per_class + train; ++k) {
      dest.samples.push_back(ds.samples[indices[k]]);
      dest_idx.push_back(indices[k]);
    }
    ++rank;
  }
  return stream;
}

SessionStream load_stream_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());
  const auto dir = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : dir / fp;
  };
  auto malformed = [&](std::size_t line_no, const std::string& why) {
    return Error(ErrorCode::InvalidArgument,
                 path.string() + ":" + std::to_string(line_no) + ": " + why);
  };

  std::string base, test;
  std::vector<std::string> sessions;
  std::size_t ways = 0, shots = 0;
  DatasetFormat format = DatasetFormat::Auto;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw malformed(line_no, "expected key=value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    auto parse_count = [&](std::size_t& dst) {
      std::size_t v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size() || v == 0) {
        throw malformed(line_no, key + " must be a positive integer");
      }
      dst = v;
    };
    if (key == "base") {
      base = value;
    } else if (key == "session") {
      sessions.push_back(value);
    } else if (key == "test") {
      test = value;
    } else if (key == "ways") {
      parse_count(ways);
    } else if (key == "shots") {
      parse_count(shots);
    } else if (key == "format") {
      if (value == "raw") format = DatasetFormat::RawBinary;
      else if (value == "csv") format = DatasetFormat::Csv;
      else if (value == "auto") format = DatasetFormat::Auto;
      else throw malformed(line_no, "unknown format '" + value + "'");
    } else {
      throw malformed(line_no, "unknown key '" + key + "'");
    }
  }
  if (base.empty() || test.empty() || ways == 0 || shots == 0) {
    throw malformed(line_no, "manifest needs base, test, ways and shots");
  }
  SessionStream stream;
  stream.ways = ways;
  stream.shots = shots;
  stream.base = load_dataset(resolve(base), format);
  for (const auto& s : sessions) stream.sessions.push_back(load_dataset(resolve(s), format));
  stream.test = load_dataset(resolve(test), format);
  return stream;
}

void save_stream(const SessionStream& stream, const std::filesystem::path& manifest_path) {
  const auto dir = manifest_path.parent_path();
  const std::string stem = manifest_path.stem().string();
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write manifest " + manifest_path.string());
  auto emit = [&](const LabeledDataset& ds, const std::string& name) {
    save_dataset(ds, dir / name);
    return name;
  };
  out << "base=" << emit(stream.base, stem + "_base.ofds") << '\n';
  for (std::size_t t = 0; t < stream.sessions.size(); ++t) {
    out << "session=" << emit(stream.sessions[t], stem + "_session" + std::to_string(t + 1) + ".ofds")
        << '\n';
  }
  out << "test=" << emit(stream.test, stem + "_test.ofds") << '\n';
  out << "ways=" << stream.ways << '\n';
  out << "shots=" << stream.shots << '\n';
}

}  // namespace ofscil
