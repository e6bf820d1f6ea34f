#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "metaaug/datastore.hpp"
#include "metaaug/episodic.hpp"
#include "test_support.hpp"

using namespace metaaug;
using metaaug::testing::TempDir;

namespace {

DatasetErrc load_errc(const std::filesystem::path& root) {
  try {
    load_dataset(root);
  } catch (const DatasetError& e) {
    return e.errc();
  }
  ADD_FAILURE() << "load_dataset did not throw";
  return DatasetErrc::invalid_spec;
}

nlohmann::json read_manifest(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  return nlohmann::json::parse(in);
}

void write_manifest(const std::filesystem::path& root, const nlohmann::json& j) {
  std::ofstream(root / "manifest.json") << j.dump(2);
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(LoadDataset, ReadsBackWrittenFixture) {
  TempDir dir;
  const auto ds = metaaug::testing::random_dataset(2, 0, 1, 10, {3, 8, 8});
  write_dataset(ds, dir.path());
  const auto loaded = load_dataset(dir.path());
  EXPECT_EQ(loaded.size(), 3);
  EXPECT_EQ(loaded.geometry(), (Geometry{3, 8, 8}));
  EXPECT_EQ(loaded.class_indices(Split::train).size(), 2u);
  EXPECT_EQ(loaded.class_indices(Split::test).size(), 1u);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(loaded.cls(c).id, ds.cls(c).id);
    EXPECT_EQ(loaded.cls(c).images, ds.cls(c).images);
  }
  EXPECT_EQ(loaded.stats(), ds.stats());
}

TEST(LoadDataset, RoundTripIsByteIdenticalOnPayloads) {
  TempDir a, b;
  const auto ds = generate_synthetic({3, 2, 2, 6, 3, 16, 16, 5});
  write_dataset(ds, a.path());
  write_dataset(load_dataset(a.path()), b.path());
  for (const auto& c : ds.classes()) EXPECT_EQ(read_bytes(a / (c.id + ".bin")), read_bytes(b / (c.id + ".bin")));
}

TEST(LoadDataset, ClassInTwoSplitsIsSplitOverlap) {
  TempDir dir;
  write_dataset(metaaug::testing::random_dataset(2, 0, 1, 4, {1, 4, 4}), dir.path());
  auto m = read_manifest(dir.path());
  auto dup = m["classes"][0];
  dup["split"] = "test";
  m["classes"].push_back(dup);
  write_manifest(dir.path(), m);
  EXPECT_EQ(load_errc(dir.path()), DatasetErrc::split_overlap);
}

TEST(LoadDataset, PayloadLengthMismatchIsCorruptBlob) {
  TempDir dir;
  const auto ds = metaaug::testing::random_dataset(1, 0, 0, 4, {1, 4, 4});
  write_dataset(ds, dir.path());
  const auto file = dir / (ds.cls(0).id + ".bin");
  auto bytes = read_bytes(file);
  bytes.pop_back();
  write_bytes(file, bytes);
  EXPECT_EQ(load_errc(dir.path()), DatasetErrc::corrupt_blob);
}

TEST(LoadDataset, HeaderProblemsAreDistinguished) {
  TempDir dir;
  const auto ds = metaaug::testing::random_dataset(1, 0, 0, 4, {1, 4, 4});
  write_dataset(ds, dir.path());
  const auto file = dir / (ds.cls(0).id + ".bin");
  const auto good = read_bytes(file);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  write_bytes(file, bad_magic);
  EXPECT_EQ(load_errc(dir.path()), DatasetErrc::blob_header_mismatch);

  auto bad_chw = good;
  bad_chw[12] = 17;
  write_bytes(file, bad_chw);
  EXPECT_EQ(load_errc(dir.path()), DatasetErrc::blob_header_mismatch);

  std::filesystem::remove(file);
  EXPECT_EQ(load_errc(dir.path()), DatasetErrc::missing_blob);
}

TEST(LoadDataset, ManifestProblems) {
  TempDir dir;
  EXPECT_EQ(load_errc(dir.path()), DatasetErrc::missing_manifest);
  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_EQ(load_errc(dir.path()), DatasetErrc::corrupt_manifest);
  write_manifest(dir.path(), {{"version", 2}, {"channels", 1}, {"height", 4}, {"width", 4}, {"classes", nlohmann::json::array()}});
  EXPECT_EQ(load_errc(dir.path()), DatasetErrc::corrupt_manifest);
}

TEST(LoadDataset, ErrorsCarryCategories) {
  TempDir dir;
  try {
    load_dataset(dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::io);
  }
}

TEST(FewShotDataset, RejectsMixedGeometry) {
  std::vector<ClassData> classes(1);
  classes[0].id = "a";
  classes[0].images = {RawImage(Geometry{1, 4, 4}), RawImage(Geometry{1, 4, 5})};
  try {
    FewShotDataset(Geometry{1, 4, 4}, std::move(classes));
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.errc(), DatasetErrc::inconsistent_geometry);
  }
}

TEST(FewShotDataset, StatisticsUseTrainSplitOnly) {
  std::vector<ClassData> classes(2);
  classes[0] = {"a", Split::train, {RawImage(Geometry{1, 2, 2}, 0), RawImage(Geometry{1, 2, 2}, 255)}};
  classes[1] = {"b", Split::test, {RawImage(Geometry{1, 2, 2}, 255), RawImage(Geometry{1, 2, 2}, 255)}};
  const FewShotDataset ds(Geometry{1, 2, 2}, std::move(classes));
  EXPECT_DOUBLE_EQ(ds.stats().mean[0], 0.5);
  EXPECT_DOUBLE_EQ(ds.stats().stddev[0], 0.5);
}

TEST(GenerateSynthetic, DeterministicAndSeedSensitive) {
  const SyntheticSpec spec{16, 4, 4, 40, 3, 32, 32, 7};
  TempDir a, b;
  write_dataset(generate_synthetic(spec), a.path());
  write_dataset(generate_synthetic(spec), b.path());
  for (const auto& entry : std::filesystem::directory_iterator(a.path()))
    EXPECT_EQ(read_bytes(entry.path()), read_bytes(b / entry.path().filename().string())) << entry.path();

  SyntheticSpec other = spec;
  other.seed = 8;
  const auto x = generate_synthetic(spec), y = generate_synthetic(other);
  bool differs = false;
  for (int c = 0; c < x.size() && !differs; ++c) differs = x.cls(c).images != y.cls(c).images;
  EXPECT_TRUE(differs);
}

TEST(GenerateSynthetic, RejectsBadSpecs) {
  const auto errc = [](SyntheticSpec s) {
    try {
      generate_synthetic(s);
    } catch (const DatasetError& e) {
      return e.errc();
    } catch (const GeometryError&) {
      return DatasetErrc::inconsistent_geometry;
    }
    return DatasetErrc::missing_manifest;
  };
  SyntheticSpec s{2, 1, 1, 0, 3, 8, 8, 1};
  EXPECT_EQ(errc(s), DatasetErrc::invalid_spec);
  s.images_per_class = 4;
  s.train_classes = 0;
  EXPECT_EQ(errc(s), DatasetErrc::invalid_spec);
  s.train_classes = 2;
  s.channels = 2;
  EXPECT_EQ(errc(s), DatasetErrc::invalid_spec);
}

TEST(GenerateSynthetic, SplitsAreDisjointAndSized) {
  const auto ds = generate_synthetic({16, 5, 5, 12, 1, 16, 16, 3});
  EXPECT_EQ(ds.class_indices(Split::train).size(), 16u);
  EXPECT_EQ(ds.class_indices(Split::val).size(), 5u);
  EXPECT_EQ(ds.class_indices(Split::test).size(), 5u);
  std::set<std::string> ids;
  for (const auto& c : ds.classes()) {
    EXPECT_TRUE(ids.insert(c.id).second);
    EXPECT_EQ(c.images.size(), 12u);
  }
}

// Nearest-neighbour on raw pixels must beat chance but stay below 100% at
// 5-way 1-shot: the classes are learnable but not trivially separable.
TEST(GenerateSynthetic, RawPixelNearestMeanIsImperfect) {
  const auto ds = generate_synthetic({16, 4, 4, 40, 3, 32, 32, 7});
  const ClassPool pool = build_class_pool(ds, Split::train, std::nullopt, RngStream(7, 0, 0, Purpose::test));
  int correct = 0, total = 0;
  for (int e = 0; e < 200; ++e) {
    const Episode ep = sample_episode(ds, pool, {5, 1, 15, Split::train, true}, RngStream(7, 0, e, Purpose::test));
    for (const auto& q : ep.query) {
      int best = -1;
      double best_d = 0;
      for (const auto& s : ep.support) {
        double d = 0;
        for (std::size_t i = 0; i < q.image.data().size(); ++i) {
          const double diff = q.image.data()[i] - s.image.data()[i];
          d += diff * diff;
        }
        if (best < 0 || d < best_d) {
          best_d = d;
          best = s.label.argmax();
        }
      }
      correct += best == q.label.argmax();
      ++total;
    }
  }
  const double acc = static_cast<double>(correct) / total;
  EXPECT_LT(acc, 1.0);
  EXPECT_GT(acc, 0.25);
}

TEST(Normalize, Arithmetic) {
  const ChannelStats stats{{0.5}, {0.5}};
  EXPECT_DOUBLE_EQ(normalize(RawImage(Geometry{1, 1, 1}, 255), stats).data()[0], 1.0);
  const ChannelStats s2{{0.2}, {0.1}};
  EXPECT_NEAR(normalize(Image(Geometry{1, 1, 1}, 51.0f), s2).data()[0], 0.0, 1e-6);
  const RawImage img(Geometry{2, 3, 3}, 7);
  EXPECT_EQ(normalize(img, {{0.1, 0.2}, {0.3, 0.4}}).geometry(), img.geometry());
}

TEST(Normalize, ConstantChannelIsDegenerate) {
  std::vector<ClassData> classes(1);
  classes[0] = {"a", Split::train, {RawImage(Geometry{2, 2, 2}, 9), RawImage(Geometry{2, 2, 2}, 9)}};
  classes[0].images[1](0, 0, 0) = 10;  // channel 0 varies, channel 1 is constant
  const FewShotDataset ds(Geometry{2, 2, 2}, std::move(classes));
  try {
    normalize(ds.cls(0).images[0], ds.stats());
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.errc(), DatasetErrc::degenerate_statistics);
    EXPECT_EQ(e.category(), ErrorCategory::data);
  }
}
