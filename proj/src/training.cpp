#include "a3rnn/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "a3rnn/errors.hpp"

namespace a3rnn::training {
namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError("unknown " + where + " key '" + key + "'");
}

void append_line(const std::filesystem::path& file, const nlohmann::json& record) {
  std::ofstream out(file, std::ios::app);
  out << record.dump() << '\n';
  if (!out) throw std::runtime_error("cannot append to " + file.string());
}

nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.storage()}}; }

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CorruptDatasetError("checkpoint truncated");
  return v;
}

constexpr char kCheckpointMagic[4] = {'A', '3', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (batch_episodes < 0) throw ConfigError("batch_episodes must be non-negative");
  if (probe_episode < 0) throw ConfigError("probe_episode must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"learning_rate", learning_rate},
          {"clip_norm", clip_norm},
          {"batch_episodes", batch_episodes},
          {"checkpoint_epochs", checkpoint_epochs},
          {"probe_episode", probe_episode}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"epochs", "learning_rate", "clip_norm", "batch_episodes", "checkpoint_epochs", "probe_episode"},
                 "train");
  TrainConfig c;
  try {
    read_field(j, "epochs", c.epochs);
    read_field(j, "learning_rate", c.learning_rate);
    read_field(j, "clip_norm", c.clip_norm);
    read_field(j, "batch_episodes", c.batch_episodes);
    read_field(j, "checkpoint_epochs", c.checkpoint_epochs);
    read_field(j, "probe_episode", c.probe_episode);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("train config: ") + ex.what());
  }
  c.validate();
  return c;
}

Adam::Adam(nn::ParameterStore& store, double learning_rate, double clip_norm)
    : store_(store), lr_(learning_rate), clip_(clip_norm) {
  for (const auto& p : store_.entries()) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

double Adam::step(double grad_scale) {
  const auto& entries = store_.entries();
  require(entries.size() == m_.size(), "Adam: parameter set changed after construction");
  std::vector<Tensor> grads;
  grads.reserve(entries.size());
  double sq = 0.0;
  for (const auto& p : entries) {
    Tensor g = p.var.grad();
    for (double& x : g.values()) {
      x *= grad_scale;
      sq += x * x;
    }
    grads.push_back(std::move(g));
  }
  const double norm = std::sqrt(sq);
  const double factor = norm > clip_ ? clip_ / norm : 1.0;
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ad::Var param = entries[i].var;
    Tensor& w = param.mutable_value();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = grads[i][k] * factor;
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g;
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g * g;
      w[k] -= lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
    }
  }
  store_.zero_grad();
  return norm;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<double> head_similarity(const Tensor& q_a, const Tensor& q_bu) {
  require(q_a.rank() == 3 && q_bu.rank() == 3 && q_a.dim(0) == q_bu.dim(0) && q_a.dim(2) == q_bu.dim(2),
          "head_similarity expects q_a [T, N_TD, D] and q_bu [T, N_BU, D]");
  const int steps = q_a.dim(0), heads = q_a.dim(1), keys = q_bu.dim(1), d = q_a.dim(2);
  require(steps > 0 && keys > 0, "head_similarity: empty sequence");
  std::vector<double> out(static_cast<std::size_t>(heads), 0.0);
  for (int t = 0; t < steps; ++t)
    for (int k = 0; k < heads; ++k) {
      const std::span<const double> row(q_a.data() + (static_cast<std::size_t>(t) * heads + k) * d, d);
      double best = -1.0;
      for (int j = 0; j < keys; ++j)
        best = std::max(best, cosine_similarity(row, {q_bu.data() + (static_cast<std::size_t>(t) * keys + j) * d,
                                                      static_cast<std::size_t>(d)}));
      out[static_cast<std::size_t>(k)] += best / steps;
    }
  return out;
}

std::vector<double> query_similarity(const Model& model, const env::Episode& episode) {
  ad::NoGradGuard no_grad;
  const EpisodeOutputs o = model.forward_episode(episode.frames, episode.joints);
  return head_similarity(o.q_a.value(), o.q_bu.value());
}

nlohmann::json TrainRecord::to_json() const {
  return {{"epoch", epoch},           {"loss", losses::to_json(loss)}, {"similarity", similarity},
          {"clamped_points", clamped_points}, {"grad_norm", grad_norm},   {"checkpoint", checkpoint}};
}

TrainRecord TrainRecord::from_json(const nlohmann::json& j) {
  TrainRecord r;
  r.epoch = j.at("epoch");
  r.loss = losses::loss_from_json(j.at("loss"));
  r.similarity = j.at("similarity").get<std::vector<double>>();
  r.clamped_points = j.value("clamped_points", 0);
  r.grad_norm = j.value("grad_norm", 0.0);
  r.checkpoint = j.value("checkpoint", std::string());
  return r;
}

std::vector<TrainRecord> train(Model& model, const std::vector<env::Episode>& episodes, const TrainConfig& config,
                               const TrainOptions& options) {
  config.validate();
  if (episodes.empty()) throw ConfigError("training needs at least one episode");
  if (static_cast<std::size_t>(config.probe_episode) >= episodes.size())
    throw ConfigError("probe_episode is outside the dataset");
  const bool persist = !options.out_dir.empty();
  const auto metrics_file = options.out_dir / "metrics.jsonl";
  const auto timing_file = options.out_dir / "timing.jsonl";
  if (persist) {
    std::filesystem::create_directories(options.out_dir);
    std::filesystem::remove(metrics_file);
    std::filesystem::remove(timing_file);
  }

  Adam optimizer(model.parameters(), config.learning_rate, config.clip_norm);
  model.parameters().zero_grad();
  const int count = static_cast<int>(episodes.size());
  const int batch = config.batch_episodes == 0 ? count : std::min(config.batch_episodes, count);
  Rng order_rng(model.config().seed ^ 0x5851F42D4C957F2DULL);
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);

  std::vector<TrainRecord> records;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    for (int i = count - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)], order[order_rng.next() % static_cast<std::uint64_t>(i + 1)]);

    TrainRecord record;
    record.epoch = epoch;
    int updates = 0;
    for (int first = 0; first < count; first += batch) {
      const int last = std::min(first + batch, count);
      for (int i = first; i < last; ++i) {
        const env::Episode& ep = episodes[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        const EpisodeOutputs outputs = model.forward_episode(ep.frames, ep.joints);
        EpisodeLoss loss = model.episode_loss(outputs, ep.frames, ep.joints);
        if (!std::isfinite(loss.breakdown.total)) {
          if (persist)
            append_line(metrics_file, {{"epoch", epoch},
                                       {"diverged", true},
                                       {"episode", order[static_cast<std::size_t>(i)]},
                                       {"loss", losses::to_json(loss.breakdown)}});
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", episode " +
                                std::to_string(order[static_cast<std::size_t>(i)]));
        }
        ad::backward(loss.total);
        const auto& b = loss.breakdown;
        auto& r = record.loss;
        r.body += b.body / count;
        r.rec_per += b.rec_per / count;
        r.rec_fov_enc += b.rec_fov_enc / count;
        r.rec_fov_dec += b.rec_fov_dec / count;
        r.reg_bu_consist += b.reg_bu_consist / count;
        r.reg_fov_consist += b.reg_fov_consist / count;
        r.reg_displacement += b.reg_displacement / count;
        r.reg_bounds_enc += b.reg_bounds_enc / count;
        r.reg_bounds_dec += b.reg_bounds_dec / count;
        r.reg_bounds += b.reg_bounds / count;
        r.total += b.total / count;
        record.clamped_points += loss.clamped_points;
      }
      record.grad_norm += optimizer.step(1.0 / (last - first));
      ++updates;
    }
    record.grad_norm /= updates;
    record.similarity = query_similarity(model, episodes[static_cast<std::size_t>(config.probe_episode)]);
    const bool checkpoint_now = std::find(config.checkpoint_epochs.begin(), config.checkpoint_epochs.end(), epoch) !=
                                    config.checkpoint_epochs.end() ||
                                epoch == config.epochs;
    if (persist && checkpoint_now) {
      record.checkpoint = "checkpoint_" + std::to_string(epoch) + ".a3ck";
      save_checkpoint(options.out_dir / record.checkpoint, model, epoch);
    }
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (persist) {
      append_line(metrics_file, record.to_json());
      append_line(timing_file, {{"epoch", epoch}, {"wall_seconds", record.wall_seconds}});
    }
    if (options.verbose) {
      std::cerr << "epoch " << epoch << " total " << record.loss.total << " body " << record.loss.body << " sim";
      for (double s : record.similarity) std::cerr << ' ' << s;
      std::cerr << " (" << record.wall_seconds << " s)\n";
    }
    records.push_back(std::move(record));
  }
  return records;
}

std::vector<TrainRecord> read_metrics(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open metrics file " + file.string());
  std::vector<TrainRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.value("diverged", false)) continue;
    records.push_back(TrainRecord::from_json(j));
  }
  return records;
}

void save_checkpoint(const std::filesystem::path& file, const Model& model, int epoch) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + file.string());
  const std::string config = model.config().to_json().dump();
  out.write(kCheckpointMagic, 4);
  put(out, kCheckpointVersion);
  put(out, model.config().hash());
  put(out, static_cast<std::uint32_t>(epoch));
  put(out, static_cast<std::uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  const auto& entries = model.parameters().entries();
  put(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& p : entries) {
    put(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Tensor& v = p.var.value();
    put(out, static_cast<std::uint32_t>(v.rank()));
    for (int d : v.shape()) put(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + file.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + file.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CorruptDatasetError("not a checkpoint file");
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw CorruptDatasetError("unsupported checkpoint version");
  const auto hash = get<std::uint64_t>(in);
  LoadedCheckpoint loaded;
  loaded.epoch = static_cast<int>(get<std::uint32_t>(in));
  std::string config(get<std::uint32_t>(in), '\0');
  in.read(config.data(), static_cast<std::streamsize>(config.size()));
  const ModelConfig model_config = ModelConfig::from_json(nlohmann::json::parse(config));
  if (model_config.hash() != hash) throw CorruptDatasetError("checkpoint config hash mismatch");
  loaded.model = std::make_unique<Model>(model_config);
  const auto& entries = loaded.model->parameters().entries();
  if (get<std::uint32_t>(in) != entries.size()) throw CorruptDatasetError("checkpoint parameter count mismatch");
  for (const auto& p : entries) {
    std::string name(get<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    if (name != p.name) throw CorruptDatasetError("checkpoint parameter '" + name + "' where '" + p.name + "' expected");
    Shape shape(get<std::uint32_t>(in));
    for (int& d : shape) d = static_cast<int>(get<std::uint32_t>(in));
    ad::Var var = p.var;
    Tensor& value = var.mutable_value();
    if (shape != value.shape()) throw CorruptDatasetError("checkpoint shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.size() * sizeof(double)));
    if (!in) throw CorruptDatasetError("checkpoint truncated");
  }
  return loaded;
}

std::string to_string(RolloutMode mode) { return mode == RolloutMode::open_loop ? "open_loop" : "closed_loop"; }

RolloutMode rollout_mode_from_string(const std::string& name) {
  if (name == "open_loop") return RolloutMode::open_loop;
  if (name == "closed_loop") return RolloutMode::closed_loop;
  throw ConfigError("rollout mode must be open_loop or closed_loop, got '" + name + "'");
}

nlohmann::json RolloutTrace::to_json() const {
  return {{"slot", slot},
          {"mode", to_string(mode)},
          {"finite", finite},
          {"steps", steps},
          {"joints", tensor_json(joints)},
          {"joint_hat", tensor_json(joint_hat)},
          {"pt_td", tensor_json(pt_td)},
          {"pt_bu", tensor_json(pt_bu)},
          {"m_bu", tensor_json(m_bu)},
          {"frames", tensor_json(frames)},
          {"attention_success", success.attention_success},
          {"pick_success", success.pick_success}};
}

RolloutTrace RolloutTrace::from_json(const nlohmann::json& j) {
  RolloutTrace r;
  r.slot = j.at("slot");
  r.mode = rollout_mode_from_string(j.at("mode"));
  r.finite = j.at("finite");
  r.steps = j.at("steps");
  r.joints = tensor_from_json(j.at("joints"));
  r.joint_hat = tensor_from_json(j.at("joint_hat"));
  r.pt_td = tensor_from_json(j.at("pt_td"));
  r.pt_bu = tensor_from_json(j.at("pt_bu"));
  r.m_bu = tensor_from_json(j.at("m_bu"));
  r.frames = tensor_from_json(j.at("frames"));
  r.success = {j.at("attention_success"), j.at("pick_success")};
  return r;
}

RolloutTrace rollout(const Model& model, const env::EnvConfig& env_config, int slot, RolloutMode mode,
                     std::uint64_t start_seed) {
  const ModelConfig& mc = model.config();
  if (mc.image_size != env_config.image_size) throw ConfigError("model and environment image sizes differ");
  const int steps = env_config.steps, size = env_config.image_size, dof = env::kJointDim;
  const env::Episode teacher = env::generate_episode(slot, start_seed, env_config);

  RolloutTrace trace;
  trace.slot = slot;
  trace.mode = mode;
  trace.frames = Tensor({steps, 3, size, size});
  trace.joints = Tensor({steps, dof});
  trace.joint_hat = Tensor({steps, dof});
  trace.pt_td = Tensor({steps, mc.n_td, 2});
  trace.pt_bu = Tensor({steps, mc.n_bu, 2});
  trace.m_bu = Tensor({steps, mc.n_bu, mc.grid, mc.grid});

  env::SceneState scene;
  scene.box = env_config.slot_center(slot);
  Tensor command = teacher.joints.slice0(0);
  HlstmState state = model.initial_state();
  const auto copy_row = [](const Tensor& src, Tensor& dst, int t) {
    std::copy(src.data(), src.data() + src.size(), dst.data() + static_cast<std::size_t>(t) * src.size());
  };
  for (int t = 0; t < steps; ++t) {
    Tensor frame, joint;
    if (mode == RolloutMode::closed_loop) {
      env::apply_joints(scene, command.values(), env_config);
      frame = env::render_frame(scene, env_config);
      joint = command;
    } else {
      frame = teacher.frames.slice0(t);
      joint = teacher.joints.slice0(t);
    }
    const StepOutputs out = model.step(frame, joint, state);
    copy_row(frame, trace.frames, t);
    copy_row(joint, trace.joints, t);
    copy_row(out.joint_hat, trace.joint_hat, t);
    copy_row(out.pt_td, trace.pt_td, t);
    copy_row(out.pt_bu, trace.pt_bu, t);
    copy_row(out.m_bu, trace.m_bu, t);
    trace.steps = t + 1;
    if (!out.joint_hat.all_finite() || !out.pt_td.all_finite()) {
      trace.finite = false;
      return trace;
    }
    // The next command is what the robot would receive: clipped to the joint range, float precision.
    command = out.joint_hat;
    for (double& v : command.values()) v = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  // Open loop executes the predicted commands against the recorded scene; closed loop executed its own.
  Tensor executed = trace.joints;
  if (mode == RolloutMode::open_loop) {
    copy_row(teacher.joints.slice0(0), executed, 0);
    for (int t = 1; t < steps; ++t)
      for (int d = 0; d < dof; ++d)
        executed.at(t, d) = static_cast<float>(std::clamp(trace.joint_hat.at(t - 1, d), 0.0, 1.0));
  }
  trace.success = env::success_metric(env::trace_joints(executed, slot, env_config), env_config.slot_center(slot),
                                      trace.pt_td, env_config);
  return trace;
}

nlohmann::json SuiteConfig::to_json() const {
  std::vector<std::string> names;
  for (Variant v : variants) names.push_back(variant_name(v));
  return {{"dataset", dataset.string()}, {"out_dir", out_dir.string()}, {"model", base.to_json()},
          {"train", train.to_json()},    {"variants", names},             {"seeds", seeds},
          {"eval_seed", eval_seed},      {"jobs", jobs}};
}

SuiteConfig SuiteConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j, {"dataset", "out_dir", "model", "train", "variants", "seeds", "trials", "eval_seed", "jobs"},
                 "suite");
  SuiteConfig s;
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  try {
    s.dataset = resolve(j.at("dataset").get<std::string>());
    s.out_dir = resolve(j.at("out_dir").get<std::string>());
    if (j.contains("model")) s.base = ModelConfig::from_json(j.at("model"));
    if (j.contains("train")) s.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("variants")) {
      s.variants.clear();
      for (const auto& name : j.at("variants")) s.variants.push_back(variant_from_string(name.get<std::string>()));
    }
    if (j.contains("seeds") && j.contains("trials")) throw ConfigError("give either seeds or trials, not both");
    read_field(j, "seeds", s.seeds);
    if (j.contains("trials")) {
      const int trials = j.at("trials");
      if (trials < 1) throw ConfigError("trials must be at least 1");
      s.seeds.resize(static_cast<std::size_t>(trials));
      std::iota(s.seeds.begin(), s.seeds.end(), std::uint64_t{0});
    }
    read_field(j, "eval_seed", s.eval_seed);
    read_field(j, "jobs", s.jobs);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("suite config: ") + ex.what());
  }
  if (s.seeds.empty()) throw ConfigError("suite needs at least one seed");
  if (s.jobs < 1) throw ConfigError("jobs must be at least 1");
  return s;
}

nlohmann::json CellResult::to_json() const {
  nlohmann::json slot_json = nlohmann::json::array();
  for (const auto& s : slots)
    slot_json.push_back({{"attention_success", s.attention_success}, {"pick_success", s.pick_success}});
  return {{"variant", variant_name(variant)}, {"seed", seed},         {"completed", completed},
          {"error", error},                   {"slots", slot_json},   {"final_similarity", final_similarity}};
}

CellResult CellResult::from_json(const nlohmann::json& j) {
  CellResult c;
  c.variant = variant_from_string(j.at("variant"));
  c.seed = j.at("seed");
  c.completed = j.at("completed");
  c.error = j.value("error", std::string());
  for (const auto& s : j.at("slots")) c.slots.push_back({s.at("attention_success"), s.at("pick_success")});
  c.final_similarity = j.value("final_similarity", std::vector<double>{});
  return c;
}

const CellResult* AblationResults::find(Variant v, std::uint64_t seed) const {
  for (const auto& c : cells)
    if (c.variant == v && c.seed == seed) return &c;
  return nullptr;
}

nlohmann::json AblationResults::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : cells) out.push_back(c.to_json());
  std::vector<std::string> names;
  for (Variant v : variants) names.push_back(variant_name(v));
  return {{"variants", names}, {"seeds", seeds}, {"cells", out}};
}

AblationResults AblationResults::from_json(const nlohmann::json& j) {
  AblationResults r;
  for (const auto& name : j.at("variants")) r.variants.push_back(variant_from_string(name.get<std::string>()));
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& c : j.at("cells")) r.cells.push_back(CellResult::from_json(c));
  return r;
}

void write_run_file(const std::filesystem::path& dir, const ModelConfig& model, const TrainConfig& train,
                    const std::filesystem::path& dataset) {
  std::filesystem::create_directories(dir);
  const nlohmann::json j{{"model", model.to_json()},
                         {"train", train.to_json()},
                         {"dataset", std::filesystem::absolute(dataset).lexically_normal().string()}};
  std::ofstream(dir / "run.json") << j.dump(2) << '\n';
}

AblationResults run_ablation(const SuiteConfig& suite, bool verbose) {
  const data::Dataset dataset = data::load_dataset(suite.dataset);
  const env::EnvConfig& env_config = dataset.manifest.env;
  std::vector<std::pair<Variant, std::uint64_t>> jobs;
  for (Variant v : suite.variants)
    for (std::uint64_t seed : suite.seeds) jobs.emplace_back(v, seed);

  std::filesystem::create_directories(suite.out_dir);
  std::vector<std::optional<CellResult>> finished(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex mutex;
  const auto snapshot = [&] {
    AblationResults r;
    r.variants = suite.variants;
    r.seeds = suite.seeds;
    for (const auto& c : finished)
      if (c) r.cells.push_back(*c);
    return r;
  };
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto [variant, seed] = jobs[i];
      CellResult cell;
      cell.variant = variant;
      cell.seed = seed;
      const auto cell_dir = suite.out_dir / (variant_name(variant) + "_seed" + std::to_string(seed));
      try {
        ModelConfig config = variant_config(variant, suite.base);
        config.seed = seed;
        Model model(config);
        write_run_file(cell_dir, config, suite.train, suite.dataset);
        const auto records = train(model, dataset.episodes, suite.train, {cell_dir, false});
        cell.final_similarity = records.back().similarity;
        for (int slot = 0; slot < 3; ++slot) {
          if (dataset.manifest.slot_counts[static_cast<std::size_t>(slot)] == 0) continue;
          const RolloutTrace trace = rollout(model, env_config, slot, RolloutMode::closed_loop, suite.eval_seed);
          std::ofstream(cell_dir / ("rollout_slot" + std::to_string(slot) + ".json")) << trace.to_json().dump();
          cell.slots.push_back(trace.success);
        }
        cell.completed = true;
      } catch (const std::exception& ex) {
        cell.error = ex.what();
      }
      std::lock_guard lock(mutex);
      finished[i] = cell;
      std::ofstream(suite.out_dir / "results.json") << snapshot().to_json().dump(2) << '\n';
      if (verbose)
        std::cerr << variant_name(variant) << " seed " << seed << (cell.completed ? " done" : " FAILED: " + cell.error)
                  << '\n';
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int j = 1; j < std::min<int>(suite.jobs, static_cast<int>(jobs.size())); ++j) pool.emplace_back(worker);
    worker();
  }
  const AblationResults results = snapshot();
  std::ofstream(suite.out_dir / "results.json") << results.to_json().dump(2) << '\n';
  return results;
}

}  // namespace a3rnn::training
