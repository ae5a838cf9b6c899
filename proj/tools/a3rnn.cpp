// Command-line front end: dataset generation, training, ablation suites,
// rollouts and report artifacts.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <regex>

#include "a3rnn/dataset.hpp"
#include "a3rnn/errors.hpp"
#include "a3rnn/report.hpp"
#include "a3rnn/training.hpp"

namespace fs = std::filesystem;
using namespace a3rnn;

namespace {

/// Exit code of `report table` when the suite is only partially complete.
constexpr int kIncomplete = 3;

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& ex) {
    throw ConfigError(file.string() + ": " + ex.what());
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() ? p : base / p; }

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
}

struct RunFile {
  ModelConfig model;
  training::TrainConfig train;
  fs::path dataset;
  fs::path out;
};

// {"model": {...}, "train": {...}, "dataset": DIR, "out": DIR}
RunFile read_run_config(const fs::path& file) {
  const auto j = read_json(file);
  if (!j.is_object()) throw ConfigError(file.string() + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (key != "model" && key != "train" && key != "dataset" && key != "out")
      throw ConfigError(file.string() + ": unknown key \"" + key + "\"");
  if (!j.contains("dataset")) throw ConfigError(file.string() + ": missing \"dataset\"");
  const fs::path base = file.parent_path();
  RunFile run;
  run.model = ModelConfig::from_json(j.value("model", nlohmann::json::object()));
  run.train = training::TrainConfig::from_json(j.value("train", nlohmann::json::object()));
  run.dataset = resolve(j.at("dataset").get<std::string>(), base);
  if (j.contains("out")) run.out = resolve(j.at("out").get<std::string>(), base);
  return run;
}

/// Dataset named by DIR/run.json, unless given explicitly.
fs::path dataset_for(const fs::path& run_dir, const fs::path& explicit_dataset) {
  if (!explicit_dataset.empty()) return explicit_dataset;
  const fs::path run = run_dir / "run.json";
  if (!fs::exists(run)) throw ConfigError("no --dataset given and " + run.string() + " does not exist");
  return read_json(run).at("dataset").get<std::string>();
}

int cmd_gen_data(int slots, int per_slot, std::uint64_t seed, const fs::path& out, int image_size, int steps) {
  env::EnvConfig config;
  config.image_size = image_size;
  config.steps = steps;
  data::Dataset dataset = data::generate_dataset(slots, per_slot, seed, config);
  data::save_dataset(out, dataset);
  std::cout << "wrote " << dataset.episodes.size() << " episodes to " << out.string() << '\n';
  return 0;
}

int cmd_train(const fs::path& config_file, const fs::path& out_override, bool verbose) {
  RunFile run = read_run_config(config_file);
  if (!out_override.empty()) run.out = out_override;
  if (run.out.empty()) throw ConfigError("no output directory: set \"out\" or pass --out");
  const data::Dataset dataset = data::load_dataset(run.dataset);
  training::write_run_file(run.out, run.model, run.train, run.dataset);
  Model model(run.model);
  const auto records = training::train(model, dataset.episodes, run.train, {run.out, verbose});
  const auto& last = records.back();
  std::cout << "epoch " << last.epoch << " loss " << last.loss.total << " checkpoints in " << run.out.string()
            << '\n';
  return 0;
}

int cmd_ablate(const fs::path& suite_file, int jobs, bool verbose) {
  auto suite = training::SuiteConfig::from_json(read_json(suite_file), suite_file.parent_path());
  if (jobs > 0) suite.jobs = jobs;
  const auto results = training::run_ablation(suite, verbose);
  const auto table = report::emit_results_table(results);
  std::cout << table.text;
  return table.complete ? 0 : kIncomplete;
}

int cmd_rollout(const fs::path& ckpt, int slot, const std::string& mode, const fs::path& dataset_dir,
                std::uint64_t start_seed, const fs::path& out) {
  const auto loaded = training::load_checkpoint(ckpt);
  env::EnvConfig env_config;
  fs::path dataset = dataset_dir;
  if (dataset.empty() && fs::exists(ckpt.parent_path() / "run.json")) dataset = dataset_for(ckpt.parent_path(), {});
  if (!dataset.empty())
    env_config = data::DatasetManifest::from_json(read_json(dataset / "manifest.json")).env;
  else
    env_config.image_size = loaded.model->config().image_size;
  const auto trace =
      training::rollout(*loaded.model, env_config, slot, training::rollout_mode_from_string(mode), start_seed);
  if (!out.empty()) write_text(out, trace.to_json().dump() + "\n");
  std::cout << "slot " << slot << " " << mode << " steps " << trace.steps << " finite " << trace.finite
            << " attention " << trace.success.attention_success << " pick " << trace.success.pick_success << '\n';
  return 0;
}

std::vector<fs::path> grid_checkpoints(const fs::path& dir, const std::vector<int>& epochs) {
  std::vector<fs::path> out;
  if (!epochs.empty()) {
    for (int e : epochs) out.push_back(dir / ("checkpoint_" + std::to_string(e) + ".a3ck"));
    return out;
  }
  const std::regex pattern(R"(checkpoint_(\d+)\.a3ck)");
  std::vector<std::pair<int, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoi(m[1]), entry.path());
  }
  std::sort(found.begin(), found.end());
  for (auto& [_, p] : found) out.push_back(p);
  if (out.empty()) throw ConfigError("no checkpoints in " + dir.string());
  return out;
}

int cmd_report_grid(const fs::path& in, const fs::path& out, const fs::path& dataset_dir, int episode,
                    const std::vector<int>& epochs, std::vector<int> timesteps) {
  const data::Dataset dataset = data::load_dataset(dataset_for(in, dataset_dir));
  if (episode < 0 || episode >= static_cast<int>(dataset.episodes.size()))
    throw ConfigError("episode index outside the dataset");
  if (timesteps.empty()) timesteps = report::kDefaultGridTimesteps;
  const auto grid =
      report::render_attention_grid(grid_checkpoints(in, epochs), dataset.episodes[static_cast<std::size_t>(episode)],
                                    timesteps);
  fs::create_directories(out);
  report::write_png(out / "attention_grid.png", grid.image);
  std::string notes;
  for (const auto& n : grid.notes) notes += n + '\n';
  write_text(out / "attention_grid.txt", notes);
  std::cerr << notes;
  std::cout << "wrote " << (out / "attention_grid.png").string() << " (" << grid.layout.rows << " x "
            << grid.layout.cols << ")\n";
  return 0;
}

int cmd_report_similarity(const fs::path& in, const fs::path& out) {
  const auto records = training::read_metrics(in / "metrics.jsonl");
  fs::create_directories(out);
  write_text(out / "similarity.csv", report::similarity_csv(records));
  report::write_png(out / "similarity.png", report::plot_similarity(records));
  std::cout << "wrote similarity.csv and similarity.png to " << out.string() << '\n';
  return 0;
}

int cmd_report_table(const fs::path& in, const fs::path& out) {
  const auto results = training::AblationResults::from_json(read_json(in / "results.json"));
  const auto table = report::emit_results_table(results);
  fs::create_directories(out);
  write_text(out / "results.txt", table.text);
  write_text(out / "results.csv", table.csv);
  std::cout << table.text;
  return table.complete ? 0 : kIncomplete;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"A3RNN attention model: data, training, evaluation and reports"};
  app.require_subcommand(1);
  int code = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate scripted pick demonstrations");
  int slots = 3, per_slot = 5, image_size = 64, steps = 120;
  std::uint64_t data_seed = 0;
  fs::path data_out;
  gen->add_option("--slots", slots)->check(CLI::Range(1, 3));
  gen->add_option("--per-slot", per_slot)->check(CLI::PositiveNumber);
  gen->add_option("--seed", data_seed);
  gen->add_option("--out", data_out)->required();
  gen->add_option("--image-size", image_size);
  gen->add_option("--steps", steps);
  gen->callback([&] { code = cmd_gen_data(slots, per_slot, data_seed, data_out, image_size, steps); });

  auto* train = app.add_subcommand("train", "Train one model from a run config");
  fs::path train_config, train_out;
  bool verbose = false;
  train->add_option("--config", train_config)->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Overrides \"out\" of the config");
  train->add_flag("-v,--verbose", verbose);
  train->callback([&] { code = cmd_train(train_config, train_out, verbose); });

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every (variant, seed) cell of a suite");
  fs::path suite_file;
  int jobs = 0;
  ablate->add_option("--suite", suite_file)->required()->check(CLI::ExistingFile);
  ablate->add_option("--jobs", jobs, "Parallel cells; overrides the suite file");
  ablate->add_flag("-v,--verbose", verbose);
  ablate->callback([&] { code = cmd_ablate(suite_file, jobs, verbose); });

  auto* roll = app.add_subcommand("rollout", "Run a checkpoint in the environment");
  fs::path ckpt, roll_dataset, roll_out;
  int slot = 0;
  std::string mode = "closed_loop";
  std::uint64_t start_seed = 7777;
  roll->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  roll->add_option("--slot", slot)->required()->check(CLI::Range(0, 2));
  roll->add_option("--mode", mode)->check(CLI::IsMember({"open_loop", "closed_loop"}));
  roll->add_option("--dataset", roll_dataset, "Dataset whose environment to use");
  roll->add_option("--start-seed", start_seed);
  roll->add_option("--out", roll_out, "Trace JSON file");
  roll->callback([&] { code = cmd_rollout(ckpt, slot, mode, roll_dataset, start_seed, roll_out); });

  auto* rep = app.add_subcommand("report", "Static report artifacts");
  rep->require_subcommand(1);
  fs::path rep_in, rep_out, rep_dataset;
  int episode = 0;
  std::vector<int> epochs, timesteps;
  const auto io = [&](CLI::App* sub) {
    sub->add_option("--in", rep_in)->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", rep_out)->required();
  };
  auto* grid = rep->add_subcommand("grid", "Attention development: rows are timesteps, columns checkpoints");
  io(grid);
  grid->add_option("--dataset", rep_dataset);
  grid->add_option("--episode", episode);
  grid->add_option("--epochs", epochs, "Checkpoint epochs; missing ones are annotated");
  grid->add_option("--timesteps", timesteps);
  grid->callback([&] { code = cmd_report_grid(rep_in, rep_out, rep_dataset, episode, epochs, timesteps); });
  auto* sim = rep->add_subcommand("similarity", "Per-head query similarity curves and CSV");
  io(sim);
  sim->callback([&] { code = cmd_report_similarity(rep_in, rep_out); });
  auto* table = rep->add_subcommand("table", "Ablation results table");
  io(table);
  table->callback([&] { code = cmd_report_table(rep_in, rep_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return code;
}
