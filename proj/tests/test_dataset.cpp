#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <set>
#include <sstream>

#include "qdetect/attacks.hpp"
#include "qdetect/domain_model.hpp"

using namespace qdetect;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("qdetect_dataset_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  fs::create_directories(dir);
  return dir / name;
}

PoisonedDataset small(std::uint64_t seed = 4) {
  SynthSpec s;
  s.n = 50;
  s.d = 6;
  s.classes = 4;
  s.spread = 0.2;
  s.seed = seed;
  return synth(s);
}

PoisonedDataset csv_from(const std::string& text) {
  std::istringstream is(text);
  return read_csv(is);
}

std::string qds1_bytes(const PoisonedDataset& d) {
  std::ostringstream os(std::ios::binary);
  write_qds1(d, os);
  return os.str();
}

PoisonedDataset qds1_from(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_qds1(is);
}

template <class F>
std::string data_error(F&& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Csv, ThreeRowExample) {
  const auto d = csv_from("f0,f1,label\n0.1,0.2,0\n0.3,0.4,1\n1,0,0\n");
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.dims(), 2u);
  EXPECT_EQ(d.classes, 2u);
  EXPECT_EQ(d.poison_count(), 0u);
  EXPECT_FLOAT_EQ(d.features(1, 1), 0.4f);
  EXPECT_EQ(d.labels, (std::vector<Label>{0, 1, 0}));
}

TEST(Csv, SevenDistinctLabelsDenselyReindexed) {
  const std::vector<long long> raw{42, -3, 7, 7, 100, 0, 5, 42, 9};
  std::string text = "x,label\n";
  for (auto y : raw) text += "0.5," + std::to_string(y) + "\n";
  const auto d = csv_from(text);
  // Recount: sorted distinct raw values map to 0..k-1.
  const std::set<long long> distinct(raw.begin(), raw.end());
  EXPECT_EQ(d.classes, distinct.size());
  EXPECT_EQ(d.classes, 7u);
  for (std::size_t i = 0; i < raw.size(); ++i)
    EXPECT_EQ(d.labels[i], static_cast<Label>(std::distance(distinct.begin(), distinct.find(raw[i]))));
}

TEST(Csv, PoisonFlagColumn) {
  const auto d = csv_from("a,label,poison_flag\n0.5,1,1\n0.25,0,0\n");
  EXPECT_EQ(d.flags, (std::vector<std::uint8_t>{1, 0}));
}

TEST(Csv, RoundTrip) {
  auto d = flip_labels_targeted(small(), 0, 1, 0.3, 2);
  std::ostringstream os;
  write_csv(d, os);
  const auto back = csv_from(os.str());
  EXPECT_TRUE(same_content(d, back));
}

TEST(Csv, LineAndColumnErrors) {
  EXPECT_NE(data_error([] { csv_from(""); }).find("line 1"), std::string::npos);
  EXPECT_NE(data_error([] { csv_from("a,b\n0,1\n"); }).find("label"), std::string::npos);
  EXPECT_NE(data_error([] { csv_from("a,label\n0.5,0\n0.5\n"); }).find("line 3"), std::string::npos);
  const auto bad_num = data_error([] { csv_from("a,b,label\n0.5,abc,0\n"); });
  EXPECT_NE(bad_num.find("line 2, column 2"), std::string::npos) << bad_num;
  EXPECT_NE(data_error([] { csv_from("a,label\n1.5,0\n"); }).find("outside [0, 1]"), std::string::npos);
  EXPECT_NE(data_error([] { csv_from("a,label,poison_flag\n0.5,0,2\n"); }).find("poison_flag"), std::string::npos);
}

TEST(Qds1, RoundTripBitIdentical) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto d = badnets(small(s), TriggerSpec{{0}, {1.0}, 1.0}, 2, 0.2, s);
    const auto path = scratch("round" + std::to_string(s) + ".qds1");
    export_dataset(d, path.string(), DatasetFormat::qds1);
    const auto back = ingest(path.string(), DatasetFormat::qds1);
    EXPECT_TRUE(same_content(d, back));
    EXPECT_EQ(std::memcmp(d.features.data.data(), back.features.data.data(), d.features.data.size() * sizeof(float)), 0);
    EXPECT_EQ(qds1_bytes(back), qds1_bytes(d));
    fs::remove(path);
  }
}

TEST(Qds1, HeaderLayout) {
  const auto d = small();
  const auto bytes = qds1_bytes(d);
  ASSERT_EQ(bytes.size(), 4u + 12u + 1u + d.size() * d.dims() * 4u + d.size() * 2u + d.size());
  EXPECT_EQ(bytes.substr(0, 4), "QDS1");
  auto u32 = [&](std::size_t off) {
    return std::uint32_t(std::uint8_t(bytes[off])) | std::uint32_t(std::uint8_t(bytes[off + 1])) << 8 |
           std::uint32_t(std::uint8_t(bytes[off + 2])) << 16 | std::uint32_t(std::uint8_t(bytes[off + 3])) << 24;
  };
  EXPECT_EQ(u32(4), 50u);
  EXPECT_EQ(u32(8), 6u);
  EXPECT_EQ(u32(12), 4u);
  EXPECT_EQ(bytes[16], 1);
  float first;
  std::memcpy(&first, bytes.data() + 17, 4);
  EXPECT_EQ(first, d.features(0, 0));
}

TEST(Qds1, MalformedInputs) {
  const auto good = qds1_bytes(small());
  EXPECT_EQ(data_error([&] { qds1_from("QDS2" + good.substr(4)); }), "QDS1: bad magic at byte offset 0");
  EXPECT_NE(data_error([&] { qds1_from(good.substr(0, good.size() - 3)); }).find("truncated"), std::string::npos);
  EXPECT_NE(data_error([&] { qds1_from(good.substr(0, 10)); }).find("truncated"), std::string::npos);
  EXPECT_NE(data_error([&] { qds1_from(good + "x"); }).find("trailing"), std::string::npos);
  auto bad_flag = good;
  bad_flag[16] = 3;
  EXPECT_NE(data_error([&] { qds1_from(bad_flag); }).find("has_flags"), std::string::npos);
}

TEST(Ingest, MissingFileIsDataError) {
  EXPECT_THROW(ingest("/nonexistent/nowhere.qds1", DatasetFormat::qds1), DataError);
  EXPECT_THROW(parse_format("parquet"), ConfigError);
  EXPECT_EQ(parse_format("csv"), DatasetFormat::csv);
}

TEST(Synth, ShapesAndBalance) {
  SynthSpec s;
  const auto d = synth(s);
  EXPECT_EQ(d.size(), 600u);
  EXPECT_EQ(d.dims(), 16u);
  EXPECT_EQ(d.classes, 3u);
  EXPECT_EQ(d.poison_count(), 0u);
  for (Label c = 0; c < 3; ++c) EXPECT_EQ(std::count(d.labels.begin(), d.labels.end(), c), 200);
  EXPECT_NO_THROW(d.validate());
}

TEST(Synth, DeterministicAndStreamsDiffer) {
  SynthSpec s;
  s.seed = 77;
  EXPECT_TRUE(same_content(synth(s), synth(s)));
  EXPECT_FALSE(same_content(synth(s, 0), synth(s, 1)));
  SynthSpec t = s;
  t.seed = 78;
  EXPECT_FALSE(same_content(synth(s), synth(t)));
}

TEST(Synth, TightSpreadIsSeparable) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SynthSpec s;
    s.spread = 0.05;
    s.seed = seed;
    const auto train = synth(s, 0).all();
    const auto held = synth(s, 1).all();
    const auto p = fit(ClassifierParams::softmax(3, 16), train, FitConfig{});
    EXPECT_GE(accuracy(p, held), 0.95) << "seed " << seed;
  }
}

TEST(Synth, InvalidSpec) {
  SynthSpec s;
  s.n = 0;
  EXPECT_THROW(synth(s), ConfigError);
  s.n = 5;
  s.spread = -1;
  EXPECT_THROW(synth(s), ConfigError);
}

TEST(Dataset, SubsetCarriesColumns) {
  const auto d = flip_labels_targeted(small(), 1, 2, 0.5, 1);
  const std::vector<std::size_t> idx{3, 0, 7};
  const auto s = d.subset(idx);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    EXPECT_EQ(s.labels[r], d.labels[idx[r]]);
    EXPECT_EQ(s.flags[r], d.flags[idx[r]]);
    EXPECT_EQ(s.features(r, 2), d.features(idx[r], 2));
  }
}
