#include <algorithm>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "memesearch/corpus.hpp"
#include "memesearch/error.hpp"
#include "memesearch/synthetic.hpp"
#include "test_support.hpp"

namespace memesearch {
namespace {

template <typename F>
ErrorCode code_of(F&& f, std::string* message = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kInvalidArgument;
}

std::vector<ManifestEntry> manifest_from(const std::string& text) {
  std::istringstream in(text);
  return parse_manifest(in);
}

FeatureTable features_from(const std::string& text) {
  std::istringstream in(text);
  return parse_feature_file(in);
}

LabeledDataset dataset_with_counts(std::size_t meme, std::size_t sticker, std::size_t no_meme) {
  return synthetic::make_blobs({meme, sticker, no_meme}, 2, 3.0, 1.0, 11);
}

// --- manifests --------------------------------------------------------------

TEST(Manifest, EmptyFileGivesEmptyList) {
  EXPECT_TRUE(manifest_from("").empty());
}

TEST(Manifest, OrderPreserved) {
  auto entries = manifest_from(
      R"({"id":"c","label":"meme","caption":"hola","split":"train"})"
      "\n"
      R"({"id":"a","image_path":"img/a.png"})"
      "\n\n"
      R"({"id":"b","label":"no_meme","split":"test"})"
      "\n");
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_EQ(entries[0].id, "c");
  EXPECT_EQ(entries[1].id, "a");
  EXPECT_EQ(entries[2].id, "b");
  EXPECT_EQ(entries[0].label, ClassLabel::kMeme);
  EXPECT_EQ(entries[0].caption, "hola");
  EXPECT_EQ(entries[0].split, Split::kTrain);
  EXPECT_EQ(entries[1].image_path, "img/a.png");
  EXPECT_FALSE(entries[1].label.has_value());
  EXPECT_EQ(entries[1].split, Split::kUnsplit);
  EXPECT_EQ(entries[2].split, Split::kTest);
}

TEST(Manifest, DuplicateIdNamed) {
  std::string msg;
  auto code = code_of([] { manifest_from("{\"id\":\"a1\"}\n{\"id\":\"a1\"}\n"); }, &msg);
  EXPECT_EQ(code, ErrorCode::kDuplicateId);
  EXPECT_NE(msg.find("a1"), std::string::npos);
}

TEST(Manifest, ParseErrorCarriesLineNumber) {
  std::string msg;
  auto code = code_of([] { manifest_from("{\"id\":\"a\"}\n{not json\n"); }, &msg);
  EXPECT_EQ(code, ErrorCode::kParse);
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(Manifest, MissingIdAndBadLabel) {
  EXPECT_EQ(code_of([] { manifest_from("{\"label\":\"meme\"}\n"); }), ErrorCode::kMissingField);
  EXPECT_EQ(code_of([] { manifest_from("{\"id\":\"x\",\"label\":\"cat\"}\n"); }),
            ErrorCode::kParse);
  EXPECT_EQ(code_of([] { manifest_from("{\"id\":\"x\",\"split\":\"dev\"}\n"); }),
            ErrorCode::kParse);
}

TEST(Manifest, RoundTripIsByteIdentical) {
  const std::string text =
      R"({"id":"m1","image_path":"a/b.png","label":"sticker","caption":"¡Qué día!","split":"train"})"
      "\n"
      R"({"id":"m2","split":"unsplit"})"
      "\n";
  auto entries = manifest_from(text);
  std::ostringstream out;
  write_manifest(out, entries);
  EXPECT_EQ(out.str(), text);
  EXPECT_EQ(manifest_from(out.str()), entries);
}

// --- feature files ----------------------------------------------------------

TEST(FeatureFile, HeaderAndRows) {
  auto t = features_from("2 3\na 1 2 3\nb 4 5 6\n");
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.dimension(), 3u);
  ASSERT_NE(t.find("b"), nullptr);
  EXPECT_EQ((*t.find("b"))[2], 6.0);
  EXPECT_EQ(t.find("c"), nullptr);
}

TEST(FeatureFile, ShortRowIsDimensionMismatchAtThatRow) {
  std::string msg;
  auto code = code_of([] { features_from("2 3\na 1 2 3\nb 4 5\n"); }, &msg);
  EXPECT_EQ(code, ErrorCode::kDimensionMismatch);
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
}

TEST(FeatureFile, NanRejected) {
  EXPECT_EQ(code_of([] { features_from("1 2\na NaN 1\n"); }), ErrorCode::kNonFinite);
  EXPECT_EQ(code_of([] { features_from("1 2\na 1 inf\n"); }), ErrorCode::kNonFinite);
}

TEST(FeatureFile, OtherMalformations) {
  EXPECT_EQ(code_of([] { features_from(""); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { features_from("2 0\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { features_from("1 1\na x\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { features_from("3 1\na 1\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { features_from("2 1\na 1\na 2\n"); }), ErrorCode::kDuplicateId);
}

TEST(FeatureFile, RoundTripIsBitIdentical) {
  std::vector<FeatureVector> rows{{"x", {0.1, -2.5e-300, 1.0 / 3.0}},
                                  {"y", {123456789.125, 0.0, -0.0}}};
  FeatureTable t(rows);
  std::ostringstream out;
  write_feature_file(out, t);
  auto back = features_from(out.str());
  ASSERT_EQ(back.rows().size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.rows()[i].id, rows[i].id);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back.rows()[i].values[j]),
                std::bit_cast<std::uint64_t>(rows[i].values[j]));
    }
  }
  std::ostringstream again;
  write_feature_file(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(FeatureFile, LoadReportsPath) {
  testing::TempDir dir;
  std::string msg;
  EXPECT_EQ(code_of([&] { load_feature_file(dir / "missing.txt"); }, &msg), ErrorCode::kIo);
  EXPECT_NE(msg.find("missing.txt"), std::string::npos);
}

// --- labeled datasets ---------------------------------------------------------

TEST(LabeledData, JoinsLabeledEntries) {
  auto entries = manifest_from(
      "{\"id\":\"a\",\"label\":\"meme\"}\n{\"id\":\"b\"}\n{\"id\":\"c\",\"label\":\"no_meme\"}\n");
  auto features = features_from("3 1\na 1\nb 2\nc 3\n");
  auto data = labeled_dataset(entries, features);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data.samples()[1].features.id, "c");
  EXPECT_EQ(data.count(ClassLabel::kMeme), 1u);
  EXPECT_EQ(data.count(ClassLabel::kSticker), 0u);
}

TEST(LabeledData, MissingLabelColumnNamesTheField) {
  auto entries = manifest_from("{\"id\":\"a\"}\n{\"id\":\"b\"}\n");
  auto features = features_from("2 1\na 1\nb 2\n");
  std::string msg;
  EXPECT_EQ(code_of([&] { labeled_dataset(entries, features); }, &msg), ErrorCode::kMissingField);
  EXPECT_NE(msg.find("label"), std::string::npos);
}

TEST(LabeledData, MissingFeatureRowNamesTheId) {
  auto entries = manifest_from("{\"id\":\"a\",\"label\":\"meme\"}\n{\"id\":\"zz\",\"label\":\"meme\"}\n");
  auto features = features_from("1 1\na 1\n");
  std::string msg;
  EXPECT_EQ(code_of([&] { labeled_dataset(entries, features); }, &msg), ErrorCode::kMissingField);
  EXPECT_NE(msg.find("zz"), std::string::npos);
}

// --- undersampling ------------------------------------------------------------

std::set<std::string> ids_of(const LabeledDataset& d) {
  std::set<std::string> ids;
  for (const auto& s : d.samples()) ids.insert(s.features.id);
  return ids;
}

TEST(Undersample, ReducesToMinorityCount) {
  auto data = dataset_with_counts(100, 60, 5000);
  auto out = undersample(data, 3);
  EXPECT_EQ(out.count(ClassLabel::kMeme), 60u);
  EXPECT_EQ(out.count(ClassLabel::kSticker), 60u);
  EXPECT_EQ(out.count(ClassLabel::kNoMeme), 60u);
  EXPECT_EQ(out.size(), 180u);
  auto all = ids_of(data);
  for (const auto& id : ids_of(out)) EXPECT_TRUE(all.count(id)) << id;
}

TEST(Undersample, BalancedInputKeepsCounts) {
  auto data = dataset_with_counts(10, 10, 10);
  auto out = undersample(data, 99);
  EXPECT_EQ(out.class_counts(), data.class_counts());
  EXPECT_EQ(ids_of(out), ids_of(data));
}

TEST(Undersample, SameSeedSameSubset) {
  auto data = dataset_with_counts(50, 20, 300);
  EXPECT_EQ(ids_of(undersample(data, 5)), ids_of(undersample(data, 5)));
  EXPECT_NE(ids_of(undersample(data, 5)), ids_of(undersample(data, 6)));
}

TEST(Undersample, KeepsLabelsAttachedAndOrder) {
  auto data = dataset_with_counts(7, 4, 30);
  auto out = undersample(data, 1);
  std::map<std::string, ClassLabel> truth;
  for (const auto& s : data.samples()) truth[s.features.id] = s.label;
  std::string prev;
  for (const auto& s : out.samples()) {
    EXPECT_EQ(truth.at(s.features.id), s.label);
    EXPECT_LT(prev, s.features.id);  // blob ids increase in input order
    prev = s.features.id;
  }
}

TEST(Undersample, EmptyClassRejected) {
  auto data = dataset_with_counts(5, 0, 5);
  EXPECT_EQ(code_of([&] { undersample(data, 1); }), ErrorCode::kEmptyClass);
}

TEST(Undersample, PropertyOverSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto data = dataset_with_counts(3 + seed, 2 + seed % 5, 40);
    auto out = undersample(data, seed);
    const auto m = *std::min_element(data.class_counts().begin(), data.class_counts().end());
    EXPECT_EQ(out.size(), 3 * m);
  }
}

// --- stratified folds ---------------------------------------------------------

std::array<std::size_t, kNumClasses> class_counts_at(const LabeledDataset& d,
                                                     const std::vector<std::size_t>& idx) {
  std::array<std::size_t, kNumClasses> c{};
  for (auto i : idx) ++c[label_index(d.samples()[i].label)];
  return c;
}

TEST(StratifiedFolds, ExactStratificationWhenDivisible) {
  auto data = dataset_with_counts(50, 30, 20);
  auto folds = stratified_folds(data, 10, 4);
  ASSERT_EQ(folds.size(), 10u);
  for (const auto& f : folds) {
    auto c = class_counts_at(data, f.validation);
    EXPECT_EQ(c[0], 5u);
    EXPECT_EQ(c[1], 3u);
    EXPECT_EQ(c[2], 2u);
  }
}

TEST(StratifiedFolds, TwoFoldsSmallCase) {
  // 4 samples of one class and 2 of another.
  auto data = dataset_with_counts(4, 2, 0);
  auto folds = stratified_folds(data, 2, 8);
  for (const auto& f : folds) {
    auto c = class_counts_at(data, f.validation);
    EXPECT_EQ(c[0], 2u);
    EXPECT_EQ(c[1], 1u);
  }
}

TEST(StratifiedFolds, PartitionProperty) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto data = dataset_with_counts(17 + seed, 13, 11 + 2 * seed);
    const std::size_t k = 2 + seed % 9;
    auto folds = stratified_folds(data, k, seed);
    std::vector<int> seen(data.size(), 0);
    std::size_t total = 0;
    std::size_t lo = data.size(), hi = 0;
    std::array<std::size_t, kNumClasses> clo{}, chi{};
    clo.fill(data.size());
    for (const auto& f : folds) {
      total += f.validation.size();
      lo = std::min(lo, f.validation.size());
      hi = std::max(hi, f.validation.size());
      EXPECT_EQ(f.train.size() + f.validation.size(), data.size());
      std::set<std::size_t> train(f.train.begin(), f.train.end());
      for (auto i : f.validation) {
        ++seen[i];
        EXPECT_FALSE(train.count(i));
      }
      auto c = class_counts_at(data, f.validation);
      for (std::size_t j = 0; j < kNumClasses; ++j) {
        clo[j] = std::min(clo[j], c[j]);
        chi[j] = std::max(chi[j], c[j]);
      }
    }
    EXPECT_EQ(total, data.size());
    EXPECT_LE(hi - lo, 1u);
    for (std::size_t j = 0; j < kNumClasses; ++j) EXPECT_LE(chi[j] - clo[j], 1u);
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(StratifiedFolds, Deterministic) {
  auto data = dataset_with_counts(30, 30, 30);
  auto a = stratified_folds(data, 5, 21);
  auto b = stratified_folds(data, 5, 21);
  for (std::size_t f = 0; f < 5; ++f) {
    EXPECT_EQ(a[f].validation, b[f].validation);
    EXPECT_EQ(a[f].train, b[f].train);
  }
}

TEST(StratifiedFolds, Errors) {
  auto data = dataset_with_counts(30, 3, 30);
  EXPECT_EQ(code_of([&] { stratified_folds(data, 10, 1); }), ErrorCode::kClassTooSmall);
  EXPECT_EQ(code_of([&] { stratified_folds(data, 1, 1); }), ErrorCode::kInvalidArgument);
}

// --- pair splits --------------------------------------------------------------

struct PairFixture {
  std::vector<ManifestEntry> entries;
  FeatureTable visual;
};

PairFixture pairs(std::size_t n, Split tag = Split::kUnsplit) {
  PairFixture f;
  std::vector<FeatureVector> rows;
  for (std::size_t i = 0; i < n; ++i) {
    ManifestEntry e;
    e.id = "p" + std::to_string(i);
    e.caption = "caption " + std::to_string(i);
    e.split = tag;
    f.entries.push_back(e);
    rows.push_back({e.id, {static_cast<double>(i)}});
  }
  f.visual = FeatureTable(rows);
  return f;
}

TEST(SplitPairs, TrainTestSizesDisjoint) {
  auto f = pairs(10);
  auto split = split_pairs(f.entries, f.visual, 8, 3);
  EXPECT_EQ(split.train.size(), 8u);
  EXPECT_EQ(split.test.size(), 2u);
  std::set<std::string> ids;
  for (const auto& p : split.train) ids.insert(p.id);
  for (const auto& p : split.test) EXPECT_FALSE(ids.count(p.id));
}

TEST(SplitPairs, TagsHonored) {
  auto f = pairs(6);
  for (std::size_t i = 0; i < 6; ++i) f.entries[i].split = i < 4 ? Split::kTrain : Split::kTest;
  auto split = split_pairs(f.entries, f.visual, 2, 3);
  ASSERT_EQ(split.train.size(), 4u);
  ASSERT_EQ(split.test.size(), 2u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(split.train[i].id, f.entries[i].id);
  EXPECT_EQ(split.test[0].id, "p4");
  EXPECT_EQ(split.test[1].id, "p5");
}

TEST(SplitPairs, InsufficientPairs) {
  auto f = pairs(10);
  EXPECT_EQ(code_of([&] { split_pairs(f.entries, f.visual, 10, 1); }),
            ErrorCode::kInsufficientPairs);
}

TEST(SplitPairs, SkipsEntriesWithoutCaptionOrFeatures) {
  auto f = pairs(5);
  f.entries[0].caption.reset();
  f.entries.push_back({"nofeat", std::nullopt, std::nullopt, "x", Split::kUnsplit});
  auto split = split_pairs(f.entries, f.visual, 2, 0);
  EXPECT_EQ(split.train.size() + split.test.size(), 4u);
}

}  // namespace
}  // namespace memesearch
