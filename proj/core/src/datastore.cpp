#include "metaaug/datastore.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

namespace metaaug {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<char, 4> kBlobMagic{'F', 'S', 'D', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32le(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(DatasetErrc::missing_blob, "cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::vector<RawImage> parse_blob(const std::vector<unsigned char>& bytes, const Geometry& g,
                                 std::uint32_t declared_count, const std::string& name) {
  if (bytes.size() < 16)
    throw DatasetError(DatasetErrc::blob_header_mismatch, name + ": truncated header");
  if (std::memcmp(bytes.data(), kBlobMagic.data(), 4) != 0)
    throw DatasetError(DatasetErrc::blob_header_mismatch, name + ": bad magic");
  if (read_u32le(bytes.data() + 4) != kFormatVersion)
    throw DatasetError(DatasetErrc::blob_header_mismatch, name + ": unsupported version");
  const std::uint32_t count = read_u32le(bytes.data() + 8);
  const std::uint32_t chw = read_u32le(bytes.data() + 12);
  if (chw != g.size())
    throw DatasetError(DatasetErrc::blob_header_mismatch,
                       name + ": C*H*W word " + std::to_string(chw) + " != manifest " +
                           std::to_string(g.size()));
  if (count != declared_count)
    throw DatasetError(DatasetErrc::blob_header_mismatch,
                       name + ": count " + std::to_string(count) + " != manifest " +
                           std::to_string(declared_count));
  const std::size_t payload = bytes.size() - 16;
  if (payload != static_cast<std::size_t>(count) * chw)
    throw DatasetError(DatasetErrc::corrupt_blob,
                       name + ": payload " + std::to_string(payload) + " bytes, expected " +
                           std::to_string(static_cast<std::size_t>(count) * chw));
  std::vector<RawImage> images;
  images.reserve(count);
  const unsigned char* p = bytes.data() + 16;
  for (std::uint32_t i = 0; i < count; ++i, p += chw)
    images.emplace_back(g, std::vector<std::uint8_t>(p, p + chw));
  return images;
}

}  // namespace

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(text) + "'");
}

FewShotDataset::FewShotDataset(Geometry geometry, std::vector<ClassData> classes)
    : geometry_(geometry), classes_(std::move(classes)) {
  if (geometry_.channels < 1 || geometry_.height < 1 || geometry_.width < 1)
    throw DatasetError(DatasetErrc::inconsistent_geometry, "invalid geometry " + geometry_.str());
  std::map<std::string, Split> seen;
  for (const auto& c : classes_) {
    auto [it, inserted] = seen.emplace(c.id, c.split);
    if (!inserted) {
      if (it->second != c.split)
        throw DatasetError(DatasetErrc::split_overlap,
                           "class '" + c.id + "' assigned to both " +
                               std::string(to_string(it->second)) + " and " +
                               std::string(to_string(c.split)));
      throw DatasetError(DatasetErrc::corrupt_manifest, "duplicate class id '" + c.id + "'");
    }
    if (c.images.empty())
      throw DatasetError(DatasetErrc::corrupt_manifest, "class '" + c.id + "' has no images");
    for (const auto& img : c.images)
      if (img.geometry() != geometry_)
        throw DatasetError(DatasetErrc::inconsistent_geometry,
                           "class '" + c.id + "' has image of geometry " + img.geometry().str() +
                               ", dataset is " + geometry_.str());
  }
  std::vector<const RawImage*> train_images;
  for (const auto& c : classes_)
    if (c.split == Split::train)
      for (const auto& img : c.images) train_images.push_back(&img);
  if (!train_images.empty()) stats_ = compute_stats(train_images);
}

std::vector<int> FewShotDataset::class_indices(Split split) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (classes_[static_cast<std::size_t>(i)].split == split) out.push_back(i);
  return out;
}

ChannelStats compute_stats(const std::vector<const RawImage*>& images) {
  ChannelStats stats;
  if (images.empty()) return stats;
  const int channels = images.front()->channels();
  stats.mean.assign(static_cast<std::size_t>(channels), 0.0);
  stats.stddev.assign(static_cast<std::size_t>(channels), 0.0);
  for (int c = 0; c < channels; ++c) {
    // Integer accumulation keeps the result independent of summation order.
    std::uint64_t sum = 0, sum_sq = 0, n = 0;
    for (const RawImage* img : images) {
      for (std::uint8_t v : img->channel(c)) {
        sum += v;
        sum_sq += static_cast<std::uint64_t>(v) * v;
      }
      n += img->plane();
    }
    const double mean = static_cast<double>(sum) / static_cast<double>(n);
    const double var =
        static_cast<double>(sum_sq) / static_cast<double>(n) - mean * mean;
    stats.mean[static_cast<std::size_t>(c)] = mean / kDomainMax;
    stats.stddev[static_cast<std::size_t>(c)] = std::sqrt(std::max(var, 0.0)) / kDomainMax;
  }
  return stats;
}

void check_stats(const ChannelStats& stats, int channels) {
  if (static_cast<int>(stats.mean.size()) != channels ||
      static_cast<int>(stats.stddev.size()) != channels)
    throw DatasetError(DatasetErrc::degenerate_statistics,
                       "statistics cover " + std::to_string(stats.mean.size()) +
                           " channels, image has " + std::to_string(channels));
  for (int c = 0; c < channels; ++c) {
    const double s = stats.stddev[static_cast<std::size_t>(c)];
    if (!(s > 0.0) || !std::isfinite(s) || !std::isfinite(stats.mean[static_cast<std::size_t>(c)]))
      throw DatasetError(DatasetErrc::degenerate_statistics,
                         "channel " + std::to_string(c) + " has zero or non-finite std");
  }
}

namespace {

template <class T>
Image normalize_impl(const ImageTensor<T>& image, const ChannelStats& stats) {
  check_stats(stats, image.channels());
  Image out(image.geometry());
  for (int c = 0; c < image.channels(); ++c) {
    const double m = stats.mean[static_cast<std::size_t>(c)];
    const double s = stats.stddev[static_cast<std::size_t>(c)];
    auto src = image.channel(c);
    auto dst = out.channel(c);
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i] = static_cast<float>(normalize_value(static_cast<double>(src[i]), m, s));
  }
  return out;
}

}  // namespace

Image normalize(const RawImage& image, const ChannelStats& stats) {
  return normalize_impl(image, stats);
}

Image normalize(const Image& raw_scale, const ChannelStats& stats) {
  return normalize_impl(raw_scale, stats);
}

FewShotDataset load_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in)
    throw DatasetError(DatasetErrc::missing_manifest, "no manifest at " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError(DatasetErrc::corrupt_manifest, e.what());
  }

  Geometry g;
  std::vector<ClassData> classes;
  std::vector<std::pair<std::string, std::uint32_t>> files;
  try {
    if (manifest.at("version").get<int>() != 1)
      throw DatasetError(DatasetErrc::corrupt_manifest, "unsupported manifest version");
    g.channels = manifest.at("channels").get<int>();
    g.height = manifest.at("height").get<int>();
    g.width = manifest.at("width").get<int>();
    if (g.channels < 1 || g.height < 1 || g.width < 1)
      throw DatasetError(DatasetErrc::corrupt_manifest, "non-positive geometry " + g.str());
    for (const auto& entry : manifest.at("classes")) {
      ClassData c;
      c.id = entry.at("id").get<std::string>();
      try {
        c.split = parse_split(entry.at("split").get<std::string>());
      } catch (const ConfigError& e) {
        throw DatasetError(DatasetErrc::corrupt_manifest, e.what());
      }
      const auto count = entry.at("count").get<std::int64_t>();
      if (count < 0 || count > 0xffffffffLL)
        throw DatasetError(DatasetErrc::corrupt_manifest, "bad count for '" + c.id + "'");
      files.emplace_back(entry.at("file").get<std::string>(), static_cast<std::uint32_t>(count));
      classes.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw DatasetError(DatasetErrc::corrupt_manifest, e.what());
  }

  // Validate the split assignment before touching any blob.
  std::map<std::string, Split> seen;
  for (const auto& c : classes) {
    auto [it, inserted] = seen.emplace(c.id, c.split);
    if (!inserted && it->second != c.split)
      throw DatasetError(DatasetErrc::split_overlap, "class '" + c.id + "' in two splits");
  }

  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& [file, count] = files[i];
    classes[i].images = parse_blob(read_file(root / file), g, count, file);
  }
  return FewShotDataset(g, std::move(classes));
}

void write_dataset(const FewShotDataset& dataset, const fs::path& root) {
  fs::create_directories(root);
  const Geometry& g = dataset.geometry();
  json manifest;
  manifest["version"] = 1;
  manifest["channels"] = g.channels;
  manifest["height"] = g.height;
  manifest["width"] = g.width;
  manifest["classes"] = json::array();
  for (const auto& c : dataset.classes()) {
    const std::string file = c.id + ".bin";
    manifest["classes"].push_back({{"id", c.id},
                                   {"split", std::string(to_string(c.split))},
                                   {"file", file},
                                   {"count", c.images.size()}});
    std::ofstream out(root / file, std::ios::binary);
    if (!out) throw Error(ErrorCategory::io, "cannot write " + (root / file).string());
    out.write(kBlobMagic.data(), 4);
    write_u32le(out, kFormatVersion);
    write_u32le(out, static_cast<std::uint32_t>(c.images.size()));
    write_u32le(out, static_cast<std::uint32_t>(g.size()));
    for (const auto& img : c.images)
      out.write(reinterpret_cast<const char*>(img.data().data()),
                static_cast<std::streamsize>(img.data().size()));
    if (!out) throw Error(ErrorCategory::io, "write failed for " + (root / file).string());
  }
  std::ofstream out(root / "manifest.json");
  if (!out) throw Error(ErrorCategory::io, "cannot write manifest in " + root.string());
  out << manifest.dump(2) << '\n';
}

}  // namespace metaaug
