#include "a3rnn/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "a3rnn/errors.hpp"
#include "a3rnn/hash.hpp"

namespace a3rnn::data {
namespace {

constexpr char kMagic[4] = {'A', '3', 'E', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFrameU8 = 1;
constexpr std::uint8_t kJointF32 = 2;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    bytes.insert(bytes.end(), raw, raw + sizeof(T));
  }
  std::vector<unsigned char> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> b) : bytes_(b) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw CorruptDatasetError("episode file truncated");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptDatasetError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t parse_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

}  // namespace

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : episodes)
    eps.push_back({{"file", e.file}, {"slot", e.slot}, {"seed", e.seed}, {"content_hash", hex(e.content_hash)}});
  const env::JointLimits limits;
  return {{"format_version", format_version},
          {"seed", seed},
          {"env", env.to_json()},
          {"config_hash", hex(config_hash)},
          {"joint_limits", {{"lower", limits.lower}, {"upper", limits.upper}, {"gripper", {0.0, 1.0}}}},
          {"slot_counts", slot_counts},
          {"episodes", eps}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version");
    m.seed = j.at("seed");
    m.env = env::EnvConfig::from_json(j.at("env"));
    m.config_hash = parse_hex(j.at("config_hash"));
    m.slot_counts = j.at("slot_counts");
    for (const auto& e : j.at("episodes"))
      m.episodes.push_back({e.at("file"), e.at("slot"), e.at("seed"), parse_hex(e.at("content_hash"))});
  } catch (const nlohmann::json::exception& ex) {
    throw CorruptDatasetError(std::string("malformed manifest: ") + ex.what());
  }
  return m;
}

Dataset generate_dataset(int slots, int per_slot, std::uint64_t seed, const env::EnvConfig& config) {
  if (slots < 1 || slots > 3) throw ConfigError("slots must be between 1 and 3");
  if (per_slot < 1) throw ConfigError("per_slot must be positive");
  config.validate();
  Dataset ds;
  ds.manifest.seed = seed;
  ds.manifest.env = config;
  ds.manifest.config_hash = config.hash();
  for (int s = 0; s < slots; ++s)
    for (int i = 0; i < per_slot; ++i) {
      const std::uint64_t ep_seed = seed * 1000003ULL + static_cast<std::uint64_t>(s * per_slot + i);
      ds.episodes.push_back(env::generate_episode(s, ep_seed, config));
      ds.manifest.slot_counts[static_cast<std::size_t>(s)] += 1;
      std::ostringstream name;
      name << "episode_" << std::setw(3) << std::setfill('0') << ds.manifest.episodes.size() << ".bin";
      ds.manifest.episodes.push_back({name.str(), s, ep_seed, 0});
    }
  return ds;
}

std::vector<unsigned char> encode_episode(const env::Episode& ep) {
  const int steps = ep.frames.dim(0), ch = ep.frames.dim(1), h = ep.frames.dim(2), w = ep.frames.dim(3);
  require(ep.joints.rank() == 2 && ep.joints.dim(0) == steps, "episode joints and frames disagree on length");
  Writer out;
  for (char c : kMagic) out.put(c);
  out.put(kVersion);
  for (int v : {steps, ch, h, w, ep.joints.dim(1)}) out.put(static_cast<std::uint32_t>(v));
  out.put(kFrameU8);
  out.put(kJointF32);
  out.put(std::uint16_t{0});
  out.put(static_cast<std::uint32_t>(ep.slot));
  out.put(ep.box_center_px[0]);
  out.put(ep.box_center_px[1]);
  out.put(ep.seed);
  for (double v : ep.frames.values()) out.put(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  for (double v : ep.joints.values()) out.put(static_cast<float>(v));
  return std::move(out.bytes);
}

env::Episode decode_episode(std::span<const unsigned char> bytes) {
  Reader in(bytes);
  for (char c : kMagic)
    if (in.get<char>() != c) throw CorruptDatasetError("bad episode magic");
  if (in.get<std::uint32_t>() != kVersion) throw CorruptDatasetError("unsupported episode version");
  const int steps = static_cast<int>(in.get<std::uint32_t>()), ch = static_cast<int>(in.get<std::uint32_t>());
  const int h = static_cast<int>(in.get<std::uint32_t>()), w = static_cast<int>(in.get<std::uint32_t>());
  const int dof = static_cast<int>(in.get<std::uint32_t>());
  if (in.get<std::uint8_t>() != kFrameU8 || in.get<std::uint8_t>() != kJointF32)
    throw CorruptDatasetError("unexpected dtype tags");
  in.get<std::uint16_t>();
  env::Episode ep;
  ep.slot = static_cast<int>(in.get<std::uint32_t>());
  ep.box_center_px[0] = in.get<double>();
  ep.box_center_px[1] = in.get<double>();
  ep.seed = in.get<std::uint64_t>();
  const std::size_t frame_count = static_cast<std::size_t>(steps) * ch * h * w;
  if (in.remaining() != frame_count + static_cast<std::size_t>(steps) * dof * sizeof(float))
    throw CorruptDatasetError("episode payload size does not match header");
  ep.frames = Tensor({steps, ch, h, w});
  for (std::size_t i = 0; i < frame_count; ++i) ep.frames[i] = in.get<std::uint8_t>() / 255.0;
  ep.joints = Tensor({steps, dof});
  for (std::size_t i = 0; i < ep.joints.size(); ++i) ep.joints[i] = static_cast<double>(in.get<float>());
  return ep;
}

void save_dataset(const std::filesystem::path& dir, Dataset& ds) {
  require(ds.episodes.size() == ds.manifest.episodes.size(), "dataset manifest and episodes disagree");
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < ds.episodes.size(); ++i) {
    const auto bytes = encode_episode(ds.episodes[i]);
    ds.manifest.episodes[i].content_hash = fnv1a(bytes);
    std::ofstream out(dir / ds.manifest.episodes[i].file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed to write " + (dir / ds.manifest.episodes[i].file).string());
  }
  std::ofstream manifest(dir / "manifest.json");
  manifest << ds.manifest.to_json().dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CorruptDatasetError("missing manifest in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw CorruptDatasetError(std::string("unparseable manifest: ") + ex.what());
  }
  Dataset ds;
  ds.manifest = DatasetManifest::from_json(j);
  if (ds.manifest.env.hash() != ds.manifest.config_hash) throw CorruptDatasetError("environment config hash mismatch");
  for (const auto& ref : ds.manifest.episodes) {
    const auto bytes = read_file(dir / ref.file);
    if (fnv1a(bytes) != ref.content_hash) throw CorruptDatasetError("content hash mismatch for " + ref.file);
    ds.episodes.push_back(decode_episode(bytes));
  }
  return ds;
}

}  // namespace a3rnn::data
