#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "a3rnn/errors.hpp"
#include "a3rnn/report.hpp"
#include "support.hpp"

using namespace a3rnn;
using namespace a3rnn::report;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

training::CellResult cell(Variant v, std::uint64_t seed, std::vector<env::SuccessResult> slots) {
  training::CellResult c;
  c.variant = v;
  c.seed = seed;
  c.completed = true;
  c.slots = std::move(slots);
  return c;
}

training::TrainRecord record(int epoch, std::vector<double> similarity) {
  training::TrainRecord r;
  r.epoch = epoch;
  r.similarity = std::move(similarity);
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("png files round-trip") {
  TempDir dir("a3rnn_test_png");
  Image image(13, 7);
  Rng rng(81);
  for (auto& p : image.pixels) p = static_cast<std::uint8_t>(rng.next() % 256);
  write_png(dir.path / "x.png", image);
  const Image back = read_png(dir.path / "x.png");
  CHECK(back.width == 13);
  CHECK(back.height == 7);
  CHECK(back.pixels == image.pixels);

  std::ofstream(dir.path / "bad.png") << "definitely not a png";
  CHECK_THROWS(read_png(dir.path / "bad.png"));
  CHECK_THROWS(write_png(dir.path / "empty.png", Image()));
}

TEST_CASE("frame and heatmap panels") {
  Tensor frame({3, 2, 2});
  frame.at(0, 0, 1) = 1.0;
  frame.at(2, 1, 0) = 0.5;
  const Image big = frame_image(frame, 3);
  CHECK(big.width == 6);
  CHECK(big.at(4, 1) == Rgb{255, 0, 0});
  CHECK(big.at(0, 5) == Rgb{0, 0, 128});

  Tensor map({2, 2}, {0.0, 1.0, 2.0, 4.0});
  const Image heat = heatmap_image(map, 4);
  CHECK(heat.width == 4);
  CHECK(heat.at(3, 3) == Rgb{255, 255, 255});
  CHECK(heat.at(0, 0) == Rgb{0, 0, 0});
  CHECK(heat.at(0, 3)[0] < heat.at(3, 3)[0]);
}

TEST_CASE("td circles are centered on pt times the image size") {
  const Tensor pt({2, 2}, {0.25, 0.5, 1.0, 0.0});
  const auto centers = td_circle_centers(pt, 64);
  CHECK(centers[0] == std::array<double, 2>{16.0, 32.0});
  CHECK(centers[1] == std::array<double, 2>{64.0, 0.0});
  CHECK(head_color(0) != head_color(1));
  CHECK(head_color(0) == head_color(6));
}

TEST_CASE("attention grid layout, circles and missing cells") {
  GridCell present;
  present.present = true;
  present.frame = Tensor({3, 16, 16});
  present.pt_td = Tensor({1, 2}, {0.25, 0.5});
  present.bu_sum = Tensor({4, 4}, 1.0);
  const GridCell missing;
  const std::vector<std::vector<GridCell>> cells{{present, missing, present}, {present, present, present}};
  const AttentionGrid grid = compose_attention_grid(cells, 4);
  const GridLayout& g = grid.layout;
  CHECK(g.rows == 2);
  CHECK(g.cols == 3);
  CHECK(g.panel == 64);
  CHECK(grid.image.width == g.margin + 3 * (g.cell_width + g.margin));
  CHECK(grid.image.height == g.margin + 2 * (g.cell_height + g.margin));
  REQUIRE(grid.notes.size() == 1u);
  CHECK(grid.notes[0] == "row 0 column 1: missing");

  const auto [x0, y0] = g.frame_origin(1, 2);
  CHECK(grid.image.at(x0 + 16 + 10, y0 + 32) == head_color(0));
  CHECK(grid.image.at(x0 + 16, y0 + 32) == Rgb{0, 0, 0});
  const auto [mx, my] = g.frame_origin(0, 1);
  CHECK(grid.image.at(mx + g.cell_width / 2, my + 1) != Rgb{0, 0, 0});
}

TEST_CASE("attention grid annotates unreadable checkpoints") {
  TempDir dir("a3rnn_test_grid");
  env::EnvConfig e;
  e.image_size = 16;
  const env::Episode ep = env::generate_episode(0, 1, e);
  const Model model(testing::tiny_model_config());
  training::save_checkpoint(dir.path / "checkpoint_10.a3ck", model, 10);
  const AttentionGrid grid =
      render_attention_grid({dir.path / "checkpoint_10.a3ck", dir.path / "checkpoint_100.a3ck"}, ep, {0, 30, 60, 90});
  CHECK(grid.layout.rows == 4);
  CHECK(grid.layout.cols == 2);
  CHECK(grid.layout.scale == 8);
  bool flagged = false;
  for (const auto& n : grid.notes) flagged |= n.find("checkpoint_100.a3ck") != std::string::npos;
  CHECK(flagged);
  CHECK_THROWS_AS(render_attention_grid({dir.path / "checkpoint_10.a3ck"}, ep, {120}), ContractError);
}

TEST_CASE("similarity csv rows are exact") {
  const std::vector<training::TrainRecord> records{record(1, {0.1, -0.25}), record(2, {1.0 / 3.0, 0.0}),
                                                   record(3, {-1.0, 0.5})};
  const auto rows = lines(similarity_csv(records));
  REQUIRE(rows.size() == 4u);
  CHECK(rows[0] == "epoch,head_1,head_2");
  CHECK(rows[1] == "1,0.1,-0.25");
  CHECK(rows[2] == "2,0.3333333333333333,0");
  CHECK(std::stod(rows[2].substr(2)) == 1.0 / 3.0);
  const Image plot = plot_similarity(records);
  CHECK(plot.width > 0);
  CHECK_THROWS_AS(similarity_csv({}), ContractError);
  CHECK_THROWS_AS(similarity_csv({record(1, {0.1}), record(2, {0.1, 0.2})}), ContractError);
}

TEST_CASE("format_double is the shortest round-trip form") {
  Rng rng(82);
  for (int trial = 0; trial < 200; ++trial) {
    const double v = rng.uniform(-1e3, 1e3);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("results table percentages and seed coverage") {
  training::AblationResults r;
  r.variants = {Variant::proposed, Variant::a2rnn, Variant::variant1};
  r.seeds = {0, 1};
  r.cells.push_back(cell(Variant::proposed, 0, {{true, true}, {true, false}, {false, false}}));
  r.cells.push_back(cell(Variant::proposed, 1, {{true, false}, {true, false}, {true, false}}));
  r.cells.push_back(cell(Variant::a2rnn, 0, {{false, true}, {false, true}, {false, false}}));
  r.cells.push_back(cell(Variant::a2rnn, 1, {{false, false}, {false, false}, {false, false}}));
  r.cells.push_back(cell(Variant::variant1, 0, {{true, true}, {true, true}, {true, true}}));
  training::CellResult failed;
  failed.variant = Variant::variant1;
  failed.seed = 1;
  failed.error = "diverged";
  r.cells.push_back(failed);

  const ResultsTable table = emit_results_table(r);
  CHECK_FALSE(table.complete);
  const auto csv = lines(table.csv);
  REQUIRE(csv.size() >= 4u);
  CHECK(csv[0] == "metric,Proposed,A2RNN,(1)");
  CHECK(csv[1] == "Attention,83.3,0.0,100.0");
  CHECK(csv[2] == "Pick,16.7,33.3,100.0");
  CHECK(csv[3] == "seeds,2/2,2/2,1/2");
  CHECK(table.text.find("incomplete") != std::string::npos);

  r.cells.pop_back();
  r.variants.pop_back();
  const ResultsTable whole = emit_results_table(r);
  CHECK(whole.complete);
  CHECK(whole.text.find("incomplete") == std::string::npos);

  r.variants.push_back(Variant::variant2);
  CHECK(lines(emit_results_table(r).csv)[1] == "Attention,83.3,0.0,-");
}

TEST_CASE("results table survives the JSON round trip") {
  training::AblationResults r;
  r.variants = {Variant::variant4};
  r.seeds = {3};
  r.cells.push_back(cell(Variant::variant4, 3, {{true, false}}));
  const auto back = training::AblationResults::from_json(nlohmann::json::parse(r.to_json().dump()));
  CHECK(emit_results_table(back).csv == emit_results_table(r).csv);
}
