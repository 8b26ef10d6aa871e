#include <doctest.h>

#include <filesystem>
#include <set>

#include "see/dataset.hpp"
#include "see/errors.hpp"
#include "see/forest.hpp"

using namespace see;

namespace {

const char* kTwoSegments =
    "segment_id,t,ch_0,label\n"
    "0,0,1.5,0\n"
    "0,1,2,0\n"
    "0,2,-3.25,0\n"
    "0,3,4,0\n"
    "1,0,0.1,1\n"
    "1,1,0.2,1\n"
    "1,2,0.3,1\n"
    "1,3,0.4,1\n";

Dataset balanced(int classes, int per_class) {
  Dataset ds;
  for (int k = 0; k < classes; ++k) ds.class_names.push_back("class_" + std::to_string(k));
  ds.channel_names = {"ch_0"};
  for (int i = 0; i < classes * per_class; ++i) {
    ds.segments.push_back({i, Tensor2(1, 4, static_cast<double>(i)), i % classes});
  }
  return ds;
}

}  // namespace

TEST_CASE("load: two 1-channel segments of 4 samples") {
  Dataset ds = parse_csv(kTwoSegments);
  CHECK(ds.channels() == 1);
  CHECK(ds.length() == 4);
  CHECK(ds.size() == 2);
  CHECK(ds.num_classes() == 2);
  CHECK(ds.segments[0].data == Tensor2::from_rows({{1.5, 2, -3.25, 4}}));
  CHECK(ds.segments[1].label == 1);
}

TEST_CASE("load: ragged segment is rejected with its line number") {
  const std::string text =
      "segment_id,t,ch_0,label\n"
      "0,0,1,0\n0,1,1,0\n0,2,1,0\n"
      "1,0,1,0\n1,1,1,0\n";
  try {
    parse_csv(text);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 6") != std::string::npos);
  }
}

TEST_CASE("load: every malformed fixture in the corpus is rejected") {
  const std::string header = "segment_id,t,ch_0,ch_1,label\n";
  const std::string good_rows = "0,0,1,2,0\n0,1,3,4,0\n1,0,5,6,1\n1,1,7,8,1\n";
  REQUIRE_NOTHROW(parse_csv(header + good_rows));
  const std::vector<std::string> corpus = {
      "",
      header,
      "segment_id,t,ch_0,ch_2,label\n" + good_rows,
      "segment,t,ch_0,ch_1,label\n" + good_rows,
      "segment_id,t,ch_0,ch_1\n0,0,1,2\n",
      header + "0,0,1,0\n",
      header + "0,0,1,2,3,0\n",
      header + "0,0,abc,2,0\n",
      header + "0,0,1,2,x\n",
      header + "0,0,1,2,-1\n",
      header + "0,0,nan,2,0\n",
      header + "0,0,inf,2,0\n",
      header + "0,1,1,2,0\n",
      header + "0,0,1,2,0\n0,2,1,2,0\n",
      header + "0,0,1,2,0\n0,1,1,2,1\n",
      header + "1,0,1,2,0\n1,1,1,2,0\n0,0,1,2,0\n0,1,1,2,0\n",
      header + "0,0,1,2,0\n0,1,3,4,0\n1,0,5,6,1\n",
      header + "0,0,1,2,0\n\n0,1,3,4,0\n",
      "segment_id,t,ch_0,ch_1,label\r\n0,0,1,2,0\r\n",
      header + "0,0,1,2,0\n0,0,1,2,0\n",
      header + "0,0,1 ,2,0\n",
      header + "0,0,,2,0\n",
  };
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CAPTURE(i);
    CHECK_THROWS_AS(parse_csv(corpus[i]), ParseError);
  }
}

TEST_CASE("csv round-trip is exact") {
  SyntheticSpec spec;
  spec.per_class = 3;
  spec.length = 16;
  Dataset ds = generate_synthetic(spec);
  const auto path = std::filesystem::temp_directory_path() / "see_dataset_roundtrip.csv";
  save_csv(ds, path);
  Dataset back = load_csv(path);
  CHECK(back == ds);
  CHECK(to_csv(back) == to_csv(ds));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_csv("/nonexistent/data.csv"), IoError);
}

TEST_CASE("split: 60/40 stratified, deterministic, a partition") {
  Dataset ds = balanced(4, 25);
  auto a = split(ds, 0.6, 5);
  auto b = split(ds, 0.6, 5);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train.size() == 60);
  CHECK(a.test.size() == 40);
  for (int k = 0; k < 4; ++k) CHECK(std::abs(a.train.class_counts()[k] - 15) <= 1);
  std::set<int> ids;
  for (const auto& s : a.train.segments) ids.insert(s.segment_id);
  for (const auto& s : a.test.segments) CHECK(ids.insert(s.segment_id).second);
  CHECK(ids.size() == ds.size());
  auto c = split(ds, 0.6, 6);
  CHECK_FALSE(c.train == a.train);
}

TEST_CASE("split: singleton class goes to train with a warning") {
  Dataset ds = balanced(2, 5);
  ds.class_names.push_back("class_2");
  ds.segments.push_back({100, Tensor2(1, 4), 2});
  auto r = split(ds, 0.6, 1);
  CHECK(r.warnings.size() == 1);
  CHECK(r.train.class_counts()[2] == 1);
  CHECK(r.test.class_counts()[2] == 0);
  CHECK_THROWS_AS(split(Dataset{}, 0.6, 1), UsageError);
}

TEST_CASE("impute_hold_last") {
  Segment s{0, Tensor2::from_rows({{5, 7, 9, 11}}), 0};
  CHECK(impute_hold_last(s, 0.5).data == Tensor2::from_rows({{5, 7, 7, 7}}));
  CHECK(impute_hold_last(s, 1.0).data == s.data);
  Segment multi{0, Tensor2::from_rows({{1, 2, 3, 4, 5}, {-1, -2, -3, -4, -5}}), 0};
  CHECK(impute_hold_last(multi, 0.4).data ==
        Tensor2::from_rows({{1, 2, 2, 2, 2}, {-1, -2, -2, -2, -2}}));
  CHECK_THROWS_AS(impute_hold_last(s, 0.1), UsageError);
  CHECK_THROWS_AS(impute_hold_last(s, 0.0), UsageError);
}

TEST_CASE("impute_hold_last composes: a smaller fraction wins") {
  Dataset ds = generate_synthetic({4, 2, 3, 40, 2, 0.5, 3});
  for (const auto& s : ds.segments) {
    for (double big : {0.5, 0.8, 1.0}) {
      for (double small : {0.1, 0.3, 0.5}) {
        if (small > big) continue;
        CHECK(impute_hold_last(impute_hold_last(s, big), small) == impute_hold_last(s, small));
      }
    }
  }
}

TEST_CASE("generate_synthetic") {
  SyntheticSpec spec;
  spec.per_class = 5;
  Dataset a = generate_synthetic(spec);
  CHECK(a == generate_synthetic(spec));
  CHECK(a.size() == 30);
  CHECK(a.channels() == 4);
  CHECK(a.length() == 128);
  for (int c : a.class_counts()) CHECK(c == 5);
  spec.seed = 2;
  CHECK_FALSE(a == generate_synthetic(spec));
  spec.length = 7;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec.length = 128;
  spec.easy_class_count = 7;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

TEST_CASE("normalizer uses train statistics") {
  Dataset ds = generate_synthetic({3, 1, 2, 32, 10, 0.5, 4});
  auto norm = fit_normalizer(ds);
  Dataset z = normalized(ds, norm);
  auto again = fit_normalizer(z);
  for (int c = 0; c < 2; ++c) {
    CHECK(again.mean[c] == doctest::Approx(0.0).scale(1.0));
    CHECK(again.scale[c] == doctest::Approx(1.0));
  }
}

namespace {

// Forest accuracy on held-out segments using only the first `fraction` of
// each window.
double prefix_forest_accuracy(const Dataset& ds, double fraction, std::uint64_t seed) {
  auto parts = split(ds, 0.6, seed);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (const auto& s : parts.train.segments) {
    x.push_back(featurize_prefix(s.data, fraction, FeatureMode::summary));
    y.push_back(s.label);
  }
  const auto forest = train_forest(x, y, ds.num_classes(), ForestConfig{20, 8}, seed);
  std::size_t correct = 0;
  for (const auto& s : parts.test.segments) {
    correct += forest.predict(featurize_prefix(s.data, fraction, FeatureMode::summary)) == s.label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(parts.test.size());
}

}  // namespace

TEST_CASE("generate_synthetic: easy classes separate on 30% prefixes, hard ones do not, over 10 seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    const auto easy = generate_synthetic({3, 3, 4, 128, 60, 0.3, seed});
    CHECK(prefix_forest_accuracy(easy, 0.3, seed) >= 0.95);
    const auto hard = generate_synthetic({4, 0, 4, 128, 60, 0.3, seed});
    CHECK(prefix_forest_accuracy(hard, 0.3, seed) <= 0.6);
    // The late half tells the hard classes apart.
    CHECK(prefix_forest_accuracy(hard, 1.0, seed) >= 0.9);
  }
}
