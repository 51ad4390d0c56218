#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "test_util.hpp"

using namespace sublap;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const std::string& name, const std::string& content) {
  const auto path = fs::temp_directory_path() / name;
  std::ofstream(path) << content;
  return path.string();
}

}  // namespace

TEST(LoadCsv, ThreeRowSmoke) {
  const auto path = temp_file("sublap_smoke.csv", "a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
  const Dataset ds = load_csv(path, {2}, Task::regression(1.0), CsvOptions{true});
  EXPECT_EQ(ds.size(), 3);
  EXPECT_EQ(ds.input_dim(), 2);
  EXPECT_EQ(ds.output_dim(), 1);
  EXPECT_EQ(ds.X(2, 1), 8.0);
  EXPECT_EQ(ds.Y(1, 0), 6.0);
}

TEST(LoadCsv, NanCellIsNamedInError) {
  const auto path = temp_file("sublap_nan.csv", "1,2,3\n4,NaN,6\n");
  try {
    load_csv(path, {2}, Task::regression(1.0));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(":2:"), std::string::npos) << msg;
    EXPECT_NE(msg.find("NaN"), std::string::npos) << msg;
  }
}

TEST(LoadCsv, RaggedRowsAndMissingFile) {
  const auto path = temp_file("sublap_ragged.csv", "1,2,3\n4,5\n");
  EXPECT_THROW(load_csv(path, {2}, Task::regression(1.0)), ParseError);
  EXPECT_THROW(load_csv("/nonexistent/file.csv", {0}, Task::regression(1.0)), ParseError);
}

TEST(LoadCsv, ClassificationLabels) {
  const auto path = temp_file("sublap_cls.csv", "0.5,1\n-0.5,0\n2.0,2\n");
  const Dataset ds = load_csv(path, {1}, Task::classification(3));
  EXPECT_EQ(ds.labels, (std::vector<Index>{1, 0, 2}));
  const auto bad = temp_file("sublap_cls_bad.csv", "0.5,3\n");
  EXPECT_THROW(load_csv(bad, {1}, Task::classification(3)), ParseError);
}

TEST(LoadCsv, WriteReadRoundTrip) {
  Dataset ds = testutil::regression_data(17, 3, 2, 4);
  const auto path = (fs::temp_directory_path() / "sublap_roundtrip.csv").string();
  write_csv(path, ds, CsvOptions{true});
  const Dataset back = load_csv(path, {3, 4}, Task::regression(1.0), CsvOptions{true});
  EXPECT_LT((back.X - ds.X).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((back.Y - ds.Y).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SynthSincos, NoiselessValues) {
  EXPECT_EQ(sincos_target(0.0), 0.0);
  EXPECT_NEAR(sincos_target(2.0 * std::numbers::pi), -1.0, 1e-15);
  const Dataset ds = synth_sincos(50, 0.0, -10, 10, 3);
  for (Index i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(ds.Y(i, 0), sincos_target(ds.X(i, 0)));
    EXPECT_GE(ds.X(i, 0), -10.0);
    EXPECT_LE(ds.X(i, 0), 10.0);
  }
}

TEST(SynthSincos, NoiseHasZeroMean) {
  const Index n = 100000;
  const double sigma = 0.1;
  const Dataset ds = synth_sincos(n, sigma, -10, 10, 11);
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) sum += ds.Y(i, 0) - sincos_target(ds.X(i, 0));
  EXPECT_LT(std::abs(sum / n), 4.0 * sigma / std::sqrt(static_cast<double>(n)));
}

TEST(SynthBlobs, LabelsAreBalanced) {
  const Dataset ds = synth_blobs(301, 3, 2, 3.0, 1);
  std::map<Index, Index> hist;
  for (Index c : ds.labels) ++hist[c];
  ASSERT_EQ(hist.size(), 3u);
  for (const auto& [c, count] : hist) EXPECT_LE(std::abs(count - 301 / 3), 1);
}

TEST(SynthBlobs, WideSeparationIsLinearlySeparable) {
  const Dataset ds = synth_blobs(600, 3, 4, 12.0, 2);
  NetworkSpec spec{{4, 3}};
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.lr = 0.5;
  cfg.prior_precision = 1e-3;
  const Network net = train_map(init_network(spec, 1), ds, cfg).net;
  const Matrix out = forward_matrix(net, ds.X);
  Index correct = 0;
  for (Index i = 0; i < ds.size(); ++i) {
    Index arg;
    out.row(i).maxCoeff(&arg);
    correct += arg == ds.labels[static_cast<std::size_t>(i)];
  }
  EXPECT_GT(static_cast<double>(correct) / ds.size(), 0.99);
}

TEST(SynthBlobs, ZeroSeparationIsChanceLevel) {
  const Dataset ds = synth_blobs(900, 3, 2, 0.0, 5);
  const Dataset test = synth_blobs(900, 3, 2, 0.0, 6);
  NetworkSpec spec{{2, 8, 3}};
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.lr = 0.1;
  const Network net = train_map(init_network(spec, 1), ds, cfg).net;
  const Matrix out = forward_matrix(net, test.X);
  Index correct = 0;
  for (Index i = 0; i < test.size(); ++i) {
    Index arg;
    out.row(i).maxCoeff(&arg);
    correct += arg == test.labels[static_cast<std::size_t>(i)];
  }
  EXPECT_NEAR(static_cast<double>(correct) / test.size(), 1.0 / 3.0, 0.08);
}

TEST(Normalize, ConstantColumnBecomesZero) {
  Dataset ds = testutil::regression_data(10, 2, 1, 3);
  ds.X.col(1).setConstant(4.2);
  const auto [out, stats] = normalize(ds);
  EXPECT_TRUE(out.X.col(1).isZero(0.0));
  EXPECT_EQ(stats.x_std(1), 1e-12);
}

TEST(Normalize, RandomDataIsStandardizedAndIdempotent) {
  Dataset ds = testutil::regression_data(40, 3, 2, 8);
  ds.X = (ds.X * 3.0).array() + 7.0;
  const auto [out, stats] = normalize(ds);
  for (Index j = 0; j < 3; ++j) {
    const double m = out.X.col(j).mean();
    const double sd = std::sqrt((out.X.col(j).array() - m).square().mean());
    EXPECT_LT(std::abs(m), 1e-10);
    EXPECT_NEAR(sd, 1.0, 1e-10);
  }
  const auto [again, stats2] = normalize(out);
  EXPECT_LT((again.X - out.X).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((again.Y - out.Y).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(normalize(ds.subset({0})), ArgumentError);
}

TEST(Split, SizesContainmentAndDeterminism) {
  const Dataset ds = testutil::regression_data(100, 2, 1, 1);
  SplitConfig cfg;
  cfg.seed = 9;
  cfg.construction_subset_size = 30;
  cfg.eval_subset_size = 10;
  const Split a = split_and_subset(ds, cfg);
  const Split b = split_and_subset(ds, cfg);
  EXPECT_EQ(a.train.size(), 80);
  EXPECT_EQ(a.test.size(), 20);
  EXPECT_EQ(a.train_index, b.train_index);
  EXPECT_EQ(a.eval_index, b.eval_index);
  std::set<Index> train(a.train_index.begin(), a.train_index.end());
  for (Index i : a.test_index) EXPECT_FALSE(train.count(i));
  for (Index i : a.construction_index) EXPECT_LT(i, 80);
  for (Index i : a.eval_index) EXPECT_LT(i, 20);
  for (std::size_t k = 0; k < a.eval_index.size(); ++k) {
    EXPECT_EQ(a.eval.X.row(k), ds.X.row(a.test_index[a.eval_index[k]]));
  }
}

TEST(Split, DefaultsAndErrors) {
  const Dataset reg = testutil::regression_data(100, 2, 1, 1);
  const Split s = split_and_subset(reg, SplitConfig{});
  EXPECT_EQ(s.construction.size(), 80);
  EXPECT_EQ(s.eval.size(), 20);
  const Dataset cls = testutil::classification_data(2000, 2, 4, 3);
  EXPECT_EQ(split_and_subset(cls, SplitConfig{}).construction.size(), 250);
  SplitConfig bad;
  bad.construction_subset_size = 81;
  EXPECT_THROW(split_and_subset(reg, bad), ArgumentError);
  bad = SplitConfig{};
  bad.eval_subset_size = 21;
  EXPECT_THROW(split_and_subset(reg, bad), ArgumentError);
}

TEST(Split, NormalizationUsesTrainStatistics) {
  Dataset ds = testutil::regression_data(50, 2, 1, 12);
  ds.X.array() += 5.0;
  Split s = split_and_subset(ds, SplitConfig{});
  const Matrix raw_test = s.test.X;
  const NormalizationStats stats = normalize_split(s);
  EXPECT_LT(s.train.X.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(s.test.X(0, 0), (raw_test(0, 0) - stats.x_mean(0)) / stats.x_std(0), 1e-12);
}
