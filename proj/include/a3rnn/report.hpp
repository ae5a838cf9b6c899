#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "a3rnn/training.hpp"

// Static report artifacts: attention-development grids, query-similarity
// curves and the ablation results table. Every output is a pure function of
// its input files.

namespace a3rnn::report {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB raster, row-major, origin top-left.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, Rgb fill = {255, 255, 255});
  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb color);  ///< ignores out-of-range coordinates
  void fill_rect(int x, int y, int w, int h, Rgb color);
  void blit(const Image& src, int x, int y);
};

void write_png(const std::filesystem::path& file, const Image& image);
Image read_png(const std::filesystem::path& file);

/// [3, H, W] frame in [0, 1], enlarged by an integer factor.
Image frame_image(const Tensor& frame, int scale);
/// Single-channel panel of a non-negative map [H, W], normalized by its maximum, resized to size x size.
Image heatmap_image(const Tensor& map, int size);
void draw_circle(Image& image, double cx, double cy, double radius, Rgb color, int thickness = 1);
void draw_line(Image& image, double x0, double y0, double x1, double y1, Rgb color, int thickness = 1);

/// TD point centers in frame pixels: pt * image_size, for pt [K, 2].
std::vector<std::array<double, 2>> td_circle_centers(const Tensor& pt_td, int image_size);

/// Colors of the TD heads, cycled when there are more heads than colors.
Rgb head_color(int head);

/// Contents of one grid cell; an absent cell is drawn crossed out.
struct GridCell {
  bool present = false;
  Tensor frame;   ///< [3, S, S]
  Tensor pt_td;   ///< [N_TD, 2]
  Tensor bu_sum;  ///< [H, W], sum of the BU maps
};

struct GridLayout {
  int rows = 0;
  int cols = 0;
  int scale = 1;         ///< frame enlargement
  int panel = 0;         ///< panel side in pixels
  int cell_width = 0;    ///< frame panel + gap + heatmap panel
  int cell_height = 0;
  int margin = 0;

  /// Top-left pixel of the frame panel of cell (row, col).
  std::array<int, 2> frame_origin(int row, int col) const;
};

struct AttentionGrid {
  Image image;
  GridLayout layout;
  std::vector<std::string> notes;  ///< one line per annotated (missing) cell
};

/// rows: timesteps, columns: training snapshots.
AttentionGrid compose_attention_grid(const std::vector<std::vector<GridCell>>& cells, int scale);

/// Default rows of the attention grid.
inline const std::vector<int> kDefaultGridTimesteps{0, 30, 60, 90};

/// Runs every loadable checkpoint over `episode` with teacher frames; a
/// checkpoint that cannot be loaded becomes an annotated empty column.
AttentionGrid render_attention_grid(const std::vector<std::filesystem::path>& checkpoints, const env::Episode& episode,
                                    const std::vector<int>& timesteps);

/// CSV with header "epoch,head_1,...,head_K" and one row per record; values in
/// shortest round-trip form.
std::string similarity_csv(const std::vector<training::TrainRecord>& records);
/// One curve per TD head over epochs, y axis fixed to [-1, 1].
Image plot_similarity(const std::vector<training::TrainRecord>& records);

struct ResultsTable {
  std::string text;
  std::string csv;
  bool complete = true;
};

/// Columns in ablation order, rows for attention and pick success in percent
/// (successes / trials, one decimal); unfinished cells are marked and make the
/// table incomplete.
ResultsTable emit_results_table(const training::AblationResults& results);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

}  // namespace a3rnn::report
