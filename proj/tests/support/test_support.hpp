#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "metaaug/datastore.hpp"
#include "metaaug/episodic.hpp"
#include "metaaug/rng.hpp"

namespace metaaug::testing {

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "metaaug") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

 private:
  std::filesystem::path path_;
};

inline RawImage random_raw(Geometry g, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> d(0, 255);
  RawImage img(g);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(d(gen));
  return img;
}

inline Image random_image(Geometry g, std::mt19937_64& gen) {
  std::uniform_real_distribution<float> d(0.0f, 255.0f);
  Image img(g);
  for (auto& v : img.data()) v = d(gen);
  return img;
}

// Small dataset of uniformly random images, class ids "c00", "c01", ...
inline FewShotDataset random_dataset(int train, int val, int test, int per_class, Geometry g,
                                     std::uint64_t seed = 1) {
  std::mt19937_64 gen(seed);
  std::vector<ClassData> classes;
  const auto add = [&](int n, Split split) {
    for (int i = 0; i < n; ++i) {
      ClassData c;
      c.id = "c" + std::to_string(classes.size() / 10) + std::to_string(classes.size() % 10);
      c.split = split;
      for (int k = 0; k < per_class; ++k) c.images.push_back(random_raw(g, gen));
      classes.push_back(std::move(c));
    }
  };
  add(train, Split::train);
  add(val, Split::val);
  add(test, Split::test);
  return FewShotDataset(g, std::move(classes));
}

inline bool all_labels_simplex(const Episode& ep, double tol = 1e-9) {
  for (const auto* set : {&ep.support, &ep.query})
    for (const auto& s : *set)
      if (s.label.size() != ep.ways || !s.label.is_simplex(tol)) return false;
  return true;
}

}  // namespace metaaug::testing
