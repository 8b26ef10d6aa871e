#include "see/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string_view>

#include "see/errors.hpp"
#include "see/staged.hpp"

namespace see {

int Dataset::channels() const { return segments.empty() ? 0 : segments.front().data.channels(); }
int Dataset::length() const { return segments.empty() ? 0 : segments.front().data.length(); }

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(class_names.size(), 0);
  for (const auto& s : segments) counts.at(static_cast<std::size_t>(s.label)) += 1;
  return counts;
}

namespace {

[[noreturn]] void parse_fail(std::size_t line, const std::string& message) {
  throw ParseError("line " + std::to_string(line) + ": " + message);
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
  T value{};
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    parse_fail(line, std::string("invalid ") + what + " '" + std::string(field) + "'");
  }
  return value;
}

std::vector<std::string_view> split_fields(std::string_view row) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = row.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(row.substr(start));
      return fields;
    }
    fields.push_back(row.substr(start, comma - start));
    start = comma + 1;
  }
}

void append_double(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  out.append(buf, ptr);
}

struct PendingSegment {
  int id = -1;
  int label = -1;
  std::vector<std::vector<double>> channels;
  std::size_t last_line = 0;
};

}  // namespace

Dataset parse_csv(const std::string& text) {
  if (text.find('\r') != std::string::npos) {
    const auto line = static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(text.find('\r')), '\n')) + 1;
    parse_fail(line, "carriage return found; files must use LF line endings");
  }
  std::vector<std::string_view> lines;
  {
    std::string_view rest(text);
    while (!rest.empty()) {
      const std::size_t nl = rest.find('\n');
      if (nl == std::string_view::npos) {
        lines.push_back(rest);
        break;
      }
      lines.push_back(rest.substr(0, nl));
      rest.remove_prefix(nl + 1);
    }
  }
  if (lines.empty()) parse_fail(1, "empty file");

  const auto header = split_fields(lines[0]);
  if (header.size() < 4 || header[0] != "segment_id" || header[1] != "t" ||
      header.back() != "label") {
    parse_fail(1, "header must be segment_id,t,ch_0,...,ch_{C-1},label");
  }
  const int channels = static_cast<int>(header.size()) - 3;
  Dataset ds;
  for (int c = 0; c < channels; ++c) {
    const std::string expected = "ch_" + std::to_string(c);
    if (header[static_cast<std::size_t>(c) + 2] != expected) {
      parse_fail(1, "column " + std::to_string(c + 3) + " must be named " + expected);
    }
    ds.channel_names.push_back(expected);
  }

  int length = -1;
  int max_label = -1;
  PendingSegment cur;
  auto flush = [&]() {
    if (cur.id < 0) return;
    const int n = static_cast<int>(cur.channels[0].size());
    if (length < 0) length = n;
    if (n != length) {
      parse_fail(cur.last_line, "segment " + std::to_string(cur.id) + " has " + std::to_string(n) +
                                    " samples, expected " + std::to_string(length));
    }
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(channels) * static_cast<std::size_t>(n));
    for (const auto& ch : cur.channels) values.insert(values.end(), ch.begin(), ch.end());
    ds.segments.push_back({cur.id, Tensor2(channels, n, std::move(values)), cur.label});
  };

  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line = i + 1;
    if (lines[i].empty()) parse_fail(line, "empty line");
    const auto fields = split_fields(lines[i]);
    if (static_cast<int>(fields.size()) != channels + 3) {
      parse_fail(line, "expected " + std::to_string(channels + 3) + " columns, found " +
                           std::to_string(fields.size()));
    }
    const int id = parse_number<int>(fields[0], line, "segment_id");
    const int t = parse_number<int>(fields[1], line, "sample index t");
    const int label = parse_number<int>(fields.back(), line, "label");
    if (label < 0) parse_fail(line, "unknown label " + std::to_string(label));
    if (id != cur.id) {
      if (id < cur.id) parse_fail(line, "segment_id " + std::to_string(id) + " out of order");
      flush();
      cur = PendingSegment{id, label, std::vector<std::vector<double>>(static_cast<std::size_t>(channels)), line};
      if (t != 0) parse_fail(line, "segment " + std::to_string(id) + " must start at t=0");
    } else {
      const int expected = static_cast<int>(cur.channels[0].size());
      if (t != expected) {
        parse_fail(line, "expected t=" + std::to_string(expected) + ", found t=" + std::to_string(t));
      }
      if (label != cur.label) {
        parse_fail(line, "label changes inside segment " + std::to_string(id));
      }
    }
    for (int c = 0; c < channels; ++c) {
      const double v = parse_number<double>(fields[static_cast<std::size_t>(c) + 2], line, "sample value");
      if (!std::isfinite(v)) parse_fail(line, "non-finite sample value");
      cur.channels[static_cast<std::size_t>(c)].push_back(v);
    }
    cur.last_line = line;
    max_label = std::max(max_label, label);
  }
  flush();
  if (ds.segments.empty()) parse_fail(lines.size(), "no data rows");
  for (int k = 0; k <= max_label; ++k) ds.class_names.push_back("class_" + std::to_string(k));
  return ds;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_csv(buffer.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string to_csv(const Dataset& dataset) {
  if (dataset.empty()) throw UsageError("cannot write an empty dataset");
  const int channels = dataset.channels();
  std::string out = "segment_id,t";
  for (int c = 0; c < channels; ++c) out += ",ch_" + std::to_string(c);
  out += ",label\n";
  for (const auto& s : dataset.segments) {
    const std::string id = std::to_string(s.segment_id);
    const std::string label = std::to_string(s.label);
    for (int t = 0; t < s.data.length(); ++t) {
      out += id;
      out += ',';
      out += std::to_string(t);
      for (int c = 0; c < channels; ++c) {
        out += ',';
        append_double(out, s.data(c, t));
      }
      out += ',';
      out += label;
      out += '\n';
    }
  }
  return out;
}

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
  const std::string text = to_csv(dataset);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path.string());
  out << text;
  if (!out) throw IoError("failed writing dataset " + path.string());
}

SplitResult split(const Dataset& dataset, double train_fraction, std::uint64_t seed) {
  if (dataset.empty()) throw UsageError("cannot split an empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(dataset.num_classes()));
  for (std::size_t i = 0; i < dataset.segments.size(); ++i) {
    by_class.at(static_cast<std::size_t>(dataset.segments[i].label)).push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<bool> in_train(dataset.segments.size(), false);
  SplitResult result;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<int>(idx.size());
    int n_train = static_cast<int>(std::lround(train_fraction * n));
    if (n == 1) {
      result.warnings.push_back("class " + dataset.class_names[k] +
                                " has a single segment; assigned to the training split");
      n_train = 1;
    } else if (n >= 2) {
      n_train = std::clamp(n_train, 1, n - 1);
    }
    for (int i = 0; i < n_train; ++i) in_train[idx[static_cast<std::size_t>(i)]] = true;
  }
  for (auto* part : {&result.train, &result.test}) {
    part->class_names = dataset.class_names;
    part->channel_names = dataset.channel_names;
    part->sample_rate = dataset.sample_rate;
  }
  for (std::size_t i = 0; i < dataset.segments.size(); ++i) {
    (in_train[i] ? result.train : result.test).segments.push_back(dataset.segments[i]);
  }
  return result;
}

Segment impute_hold_last(const Segment& segment, double observed_fraction) {
  if (!(observed_fraction > 0.0 && observed_fraction <= 1.0)) {
    throw UsageError("observed fraction must lie in (0, 1]");
  }
  const int length = segment.data.length();
  const int kept = fraction_to_samples(observed_fraction, length);
  if (kept < 1) {
    throw UsageError("observed fraction " + std::to_string(observed_fraction) + " keeps no samples of a " +
                     std::to_string(length) + "-sample window");
  }
  Segment out = segment;
  for (int c = 0; c < out.data.channels(); ++c) {
    const double last = out.data(c, kept - 1);
    for (int t = kept; t < length; ++t) out.data(c, t) = last;
  }
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.length < 8) throw ConfigError("synthetic windows need at least 8 samples");
  if (spec.num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (spec.easy_class_count < 0 || spec.easy_class_count > spec.num_classes) {
    throw ConfigError("easy_class_count must lie in [0, num_classes]");
  }
  if (spec.channels < 1 || spec.per_class < 1) {
    throw ConfigError("channels and per_class must be >= 1");
  }
  if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma)) {
    throw ConfigError("noise_sigma must be finite and >= 0");
  }

  Dataset ds;
  for (int k = 0; k < spec.num_classes; ++k) {
    ds.class_names.push_back("class_" + std::to_string(k));
  }
  for (int c = 0; c < spec.channels; ++c) ds.channel_names.push_back("ch_" + std::to_string(c));

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const int onset = spec.length / 2;
  const int C = spec.channels;

  for (int i = 0; i < spec.per_class; ++i) {
    for (int k = 0; k < spec.num_classes; ++k) {
      Tensor2 x(C, spec.length);
      for (double& v : x.values()) v = spec.noise_sigma * noise(rng);
      if (k < spec.easy_class_count) {
        const int channel = k % C;
        const double sign = (k / C) % 2 == 0 ? 1.0 : -1.0;
        const double amplitude = 2.0 * (1.0 + static_cast<double>(k / (2 * C))) * jitter(rng);
        for (int t = 0; t < spec.length; ++t) x(channel, t) += sign * amplitude;
      } else {
        // Sine, rising ramp, falling ramp; later hard classes repeat the
        // shapes scaled up (larger, slower sine; steeper ramp).
        const int h = k - spec.easy_class_count;
        const int channel = spec.easy_class_count % C;
        const double scale = 1.0 + static_cast<double>(h / 3);
        const double amplitude = 2.0 * jitter(rng);
        const double phi = phase(rng);
        const double span = static_cast<double>(spec.length - onset);
        for (int t = onset; t < spec.length; ++t) {
          const double u = static_cast<double>(t - onset);
          double v = 0.0;
          switch (h % 3) {
            case 0: v = scale * std::sin(2.0 * std::numbers::pi * u / (8.0 * scale) + phi); break;
            case 1: v = scale * u / span; break;
            default: v = -scale * u / span; break;
          }
          x(channel, t) += amplitude * v;
        }
      }
      ds.segments.push_back({i * spec.num_classes + k, std::move(x), k});
    }
  }
  return ds;
}

ChannelNormalizer fit_normalizer(const Dataset& train) {
  if (train.empty()) throw UsageError("cannot fit a normalizer on an empty dataset");
  const int C = train.channels();
  ChannelNormalizer n;
  n.mean.assign(static_cast<std::size_t>(C), 0.0);
  n.scale.assign(static_cast<std::size_t>(C), 1.0);
  for (int c = 0; c < C; ++c) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& s : train.segments) {
      for (double v : s.data.row(c)) sum += v;
      count += static_cast<std::size_t>(s.data.length());
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (const auto& s : train.segments) {
      for (double v : s.data.row(c)) sq += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(sq / static_cast<double>(count));
    n.mean[static_cast<std::size_t>(c)] = mean;
    n.scale[static_cast<std::size_t>(c)] = sd > 1e-12 ? sd : 1.0;
  }
  return n;
}

Dataset normalized(const Dataset& dataset, const ChannelNormalizer& normalizer) {
  Dataset out = dataset;
  for (auto& s : out.segments) normalizer.apply(s.data);
  return out;
}

}  // namespace see
