#include "metaaug/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace metaaug {

void to_json(nlohmann::json& j, const CurvePoint& p) {
  j = {{"epoch", p.epoch}, {"train_acc", p.train_acc}, {"val_acc", p.val_acc},
       {"loss", p.loss}, {"lr", p.lr}};
}

void from_json(const nlohmann::json& j, CurvePoint& p) {
  p.epoch = j.at("epoch").get<int>();
  p.train_acc = j.at("train_acc").get<double>();
  p.val_acc = j.at("val_acc").get<double>();
  p.loss = j.at("loss").get<double>();
  p.lr = j.at("lr").get<double>();
}

namespace {

constexpr char kMagic[4] = {'F', 'S', 'C', 'K'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCategory::format, "checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

nlohmann::json header_json(const Checkpoint& c) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : c.params.blocks()) blocks.push_back({{"name", b.name}, {"count", b.count}});
  if (c.velocity)
    for (const auto& b : c.params.blocks()) blocks.push_back({{"name", "velocity/" + b.name}, {"count", b.count}});
  return {
      {"architecture",
       {{"channels", c.arch().input.channels},
        {"height", c.arch().input.height},
        {"width", c.arch().input.width},
        {"widths", c.arch().widths}}},
      {"head", {{"kind", to_string(c.head.kind)}, {"ridge_lambda", c.head.ridge_lambda}}},
      {"stats", {{"mean", c.stats.mean}, {"std", c.stats.stddev}}},
      {"precision", to_string(c.precision)},
      {"seed", c.seed},
      {"epoch", c.epoch},
      {"blocks", blocks},
      {"curve", c.curve},
      {"extra", c.extra},
  };
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  const std::string header = header_json(c).dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  const auto& values = c.params.values();
  for (const auto& b : c.params.blocks()) {
    put_u32(out, static_cast<std::uint32_t>(b.count));
    for (std::size_t i = 0; i < b.count; ++i) put_f32(out, values[static_cast<Eigen::Index>(b.offset + i)]);
  }
  if (c.velocity) {
    if (c.velocity->size() != values.size()) throw Error(ErrorCategory::format, "velocity size mismatch");
    for (const auto& b : c.params.blocks()) {
      put_u32(out, static_cast<std::uint32_t>(b.count));
      for (std::size_t i = 0; i < b.count; ++i)
        put_f32(out, (*c.velocity)[static_cast<Eigen::Index>(b.offset + i)]);
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.text(4) != std::string(kMagic, 4)) throw Error(ErrorCategory::format, "not a checkpoint (bad magic)");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorCategory::format, "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t length = in.u32();
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(in.text(length));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::format, std::string("corrupt checkpoint header: ") + e.what());
  }

  try {
    ArchConfig arch;
    const auto& a = h.at("architecture");
    arch.input = {a.at("channels").get<int>(), a.at("height").get<int>(), a.at("width").get<int>()};
    arch.widths = a.at("widths").get<std::vector<int>>();
    Checkpoint c;
    c.params = ModelParams<float>(arch);
    c.head.kind = parse_head(h.at("head").at("kind").get<std::string>());
    c.head.ridge_lambda = h.at("head").at("ridge_lambda").get<double>();
    c.stats.mean = h.at("stats").at("mean").get<std::vector<double>>();
    c.stats.stddev = h.at("stats").at("std").get<std::vector<double>>();
    c.precision = parse_precision(h.at("precision").get<std::string>());
    c.seed = h.at("seed").get<std::uint64_t>();
    c.epoch = h.at("epoch").get<int>();
    c.curve = h.at("curve").get<std::vector<CurvePoint>>();
    c.extra = h.value("extra", nlohmann::json::object());

    const auto& listed = h.at("blocks");
    const auto& blocks = c.params.blocks();
    const bool has_velocity = listed.size() == 2 * blocks.size();
    if (listed.size() != blocks.size() && !has_velocity)
      throw Error(ErrorCategory::format, "checkpoint block list does not match architecture");

    auto read_blocks = [&](auto& target, std::size_t first) {
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const auto declared = listed[first + i].at("count").get<std::size_t>();
        const std::uint32_t count = in.u32();
        if (count != b.count || declared != b.count)
          throw Error(ErrorCategory::format, "checkpoint block '" + b.name + "' has wrong length");
        for (std::size_t k = 0; k < b.count; ++k) target[static_cast<Eigen::Index>(b.offset + k)] = in.f32();
      }
    };
    read_blocks(c.params.values(), 0);
    if (has_velocity) {
      c.velocity = Eigen::VectorXf::Zero(c.params.values().size());
      read_blocks(*c.velocity, blocks.size());
    }
    if (!in.done()) throw Error(ErrorCategory::format, "trailing bytes after checkpoint blocks");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::format, std::string("corrupt checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(checkpoint);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCategory::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCategory::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCategory::io, "cannot rename checkpoint to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::io, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::string params_fingerprint(const ModelParams<float>& params) {
  // FNV-1a over the little-endian f32 payload.
  std::uint64_t h = 1469598103934665603ULL;
  for (Eigen::Index i = 0; i < params.values().size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(params.values()[i]);
    for (int k = 0; k < 4; ++k) {
      h ^= (bits >> (8 * k)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

}  // namespace metaaug
