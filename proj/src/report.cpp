#include "a3rnn/report.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <memory>
#include <sstream>

#include "a3rnn/errors.hpp"

namespace a3rnn::report {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

constexpr Rgb kMissing{200, 200, 200};
constexpr Rgb kCross{160, 0, 0};

}  // namespace

Image::Image(int w, int h, Rgb fill) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3) {
  require(w >= 0 && h >= 0, "image dimensions must be non-negative");
  for (std::size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + i);
}

Rgb Image::at(int x, int y) const {
  require(x >= 0 && y >= 0 && x < width && y < height, "pixel outside image");
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void Image::set(int x, int y, Rgb color) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  std::copy(color.begin(), color.end(), pixels.begin() + i);
}

void Image::fill_rect(int x, int y, int w, int h, Rgb color) {
  for (int r = y; r < y + h; ++r)
    for (int c = x; c < x + w; ++c) set(c, r, color);
}

void Image::blit(const Image& src, int x, int y) {
  for (int r = 0; r < src.height; ++r)
    for (int c = 0; c < src.width; ++c) set(x + c, y + r, src.at(c, r));
}

void write_png(const std::filesystem::path& file, const Image& image) {
  require(image.width > 0 && image.height > 0, "cannot write an empty image");
  File fp(std::fopen(file.string().c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open " + file.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + file.string());
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 9);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    png_write_row(png, image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& file) {
  File fp(std::fopen(file.string().c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open " + file.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  Image image;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng failed reading " + file.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  image = Image(static_cast<int>(png_get_image_width(png, info)), static_cast<int>(png_get_image_height(png, info)));
  for (int y = 0; y < image.height; ++y)
    png_read_row(png, image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

Image frame_image(const Tensor& frame, int scale) {
  require(frame.rank() == 3 && frame.dim(0) == 3, "frame_image expects [3, H, W]");
  require(scale >= 1, "frame_image: scale must be positive");
  const int h = frame.dim(1), w = frame.dim(2);
  Image out(w * scale, h * scale);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.set(x, y,
              {to_byte(frame.at(0, y / scale, x / scale)), to_byte(frame.at(1, y / scale, x / scale)),
               to_byte(frame.at(2, y / scale, x / scale))});
  return out;
}

Image heatmap_image(const Tensor& map, int size) {
  require(map.rank() == 2, "heatmap_image expects [H, W]");
  const int h = map.dim(0), w = map.dim(1);
  const double peak = *std::max_element(map.storage().begin(), map.storage().end());
  Image out(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double v = peak > 0.0 ? map.at(y * h / size, x * w / size) / peak : 0.0;
      const std::uint8_t g = to_byte(v);
      out.set(x, y, {g, g, g});
    }
  return out;
}

void draw_circle(Image& image, double cx, double cy, double radius, Rgb color, int thickness) {
  const int steps = std::max(32, static_cast<int>(8 * radius));
  for (int t = 0; t < thickness; ++t)
    for (int i = 0; i < steps; ++i) {
      const double a = 2.0 * M_PI * i / steps;
      const double r = radius - t;
      image.set(static_cast<int>(std::floor(cx + r * std::cos(a))), static_cast<int>(std::floor(cy + r * std::sin(a))),
                color);
    }
}

void draw_line(Image& image, double x0, double y0, double x1, double y1, Rgb color, int thickness) {
  const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))));
  for (int i = 0; i <= steps; ++i) {
    const double x = x0 + (x1 - x0) * i / steps, y = y0 + (y1 - y0) * i / steps;
    for (int dy = 0; dy < thickness; ++dy)
      for (int dx = 0; dx < thickness; ++dx)
        image.set(static_cast<int>(std::floor(x)) + dx - thickness / 2, static_cast<int>(std::floor(y)) + dy - thickness / 2,
                  color);
  }
}

std::vector<std::array<double, 2>> td_circle_centers(const Tensor& pt_td, int image_size) {
  require(pt_td.rank() == 2 && pt_td.dim(1) == 2, "td_circle_centers expects [K, 2]");
  std::vector<std::array<double, 2>> out;
  for (int k = 0; k < pt_td.dim(0); ++k) out.push_back({pt_td.at(k, 0) * image_size, pt_td.at(k, 1) * image_size});
  return out;
}

Rgb head_color(int head) {
  static constexpr std::array<Rgb, 6> colors{
      {{230, 25, 75}, {60, 180, 75}, {0, 130, 200}, {245, 130, 48}, {145, 30, 180}, {70, 240, 240}}};
  return colors[static_cast<std::size_t>(head) % colors.size()];
}

std::array<int, 2> GridLayout::frame_origin(int row, int col) const {
  return {margin + col * (cell_width + margin), margin + row * (cell_height + margin)};
}

AttentionGrid compose_attention_grid(const std::vector<std::vector<GridCell>>& cells, int scale) {
  require(!cells.empty() && !cells.front().empty(), "attention grid needs at least one cell");
  AttentionGrid grid;
  GridLayout& g = grid.layout;
  g.rows = static_cast<int>(cells.size());
  g.cols = static_cast<int>(cells.front().size());
  g.scale = scale;
  g.margin = 4;
  int frame_size = 0;
  for (const auto& row : cells) {
    require(static_cast<int>(row.size()) == g.cols, "attention grid rows differ in length");
    for (const auto& cell : row)
      if (cell.present) frame_size = cell.frame.dim(2);
  }
  if (frame_size == 0) frame_size = 32;
  g.panel = frame_size * scale;
  g.cell_width = 2 * g.panel + 2;
  g.cell_height = g.panel;
  grid.image = Image(g.margin + g.cols * (g.cell_width + g.margin), g.margin + g.rows * (g.cell_height + g.margin));

  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) {
      const GridCell& cell = cells[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      const auto [x0, y0] = g.frame_origin(r, c);
      if (!cell.present) {
        grid.image.fill_rect(x0, y0, g.cell_width, g.cell_height, kMissing);
        draw_line(grid.image, x0, y0, x0 + g.cell_width - 1, y0 + g.cell_height - 1, kCross, 2);
        draw_line(grid.image, x0, y0 + g.cell_height - 1, x0 + g.cell_width - 1, y0, kCross, 2);
        grid.notes.push_back("row " + std::to_string(r) + " column " + std::to_string(c) + ": missing");
        continue;
      }
      Image panel = frame_image(cell.frame, scale);
      const auto centers = td_circle_centers(cell.pt_td, cell.frame.dim(2));
      for (std::size_t k = 0; k < centers.size(); ++k)
        draw_circle(panel, centers[k][0] * scale, centers[k][1] * scale, 2.5 * scale, head_color(static_cast<int>(k)),
                    2);
      grid.image.blit(panel, x0, y0);
      grid.image.blit(heatmap_image(cell.bu_sum, g.panel), x0 + g.panel + 2, y0);
    }
  return grid;
}

AttentionGrid render_attention_grid(const std::vector<std::filesystem::path>& checkpoints, const env::Episode& episode,
                                    const std::vector<int>& timesteps) {
  require(!checkpoints.empty(), "attention grid needs at least one checkpoint");
  require(!timesteps.empty(), "attention grid needs at least one timestep");
  const int steps = episode.frames.dim(0);
  for (int t : timesteps)
    if (t < 0 || t >= steps) throw ContractError("timestep " + std::to_string(t) + " outside [0, T)");

  std::vector<std::vector<GridCell>> cells(timesteps.size(), std::vector<GridCell>(checkpoints.size()));
  std::vector<std::string> failures;
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    training::LoadedCheckpoint loaded;
    try {
      loaded = training::load_checkpoint(checkpoints[c]);
    } catch (const std::exception& ex) {
      failures.push_back(checkpoints[c].filename().string() + ": " + ex.what());
      continue;
    }
    ad::NoGradGuard no_grad;
    const EpisodeOutputs o = loaded.model->forward_episode(episode.frames, episode.joints);
    for (std::size_t r = 0; r < timesteps.size(); ++r) {
      const int t = timesteps[r];
      GridCell& cell = cells[r][c];
      cell.present = true;
      cell.frame = episode.frames.slice0(t);
      cell.pt_td = o.pt_td.value().slice0(t);
      const Tensor maps = o.m_bu.value().slice0(t);
      const int n = maps.dim(0), plane = maps.dim(1) * maps.dim(2);
      cell.bu_sum = Tensor({maps.dim(1), maps.dim(2)});
      for (int k = 0; k < n; ++k)
        for (int i = 0; i < plane; ++i) cell.bu_sum[static_cast<std::size_t>(i)] += maps[static_cast<std::size_t>(k) * plane + i];
    }
  }
  const int scale = std::max(1, 128 / episode.frames.dim(3));
  AttentionGrid grid = compose_attention_grid(cells, scale);
  grid.notes.insert(grid.notes.begin(), failures.begin(), failures.end());
  return grid;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string similarity_csv(const std::vector<training::TrainRecord>& records) {
  if (records.empty()) throw ContractError("no similarity records");
  const std::size_t heads = records.front().similarity.size();
  std::ostringstream out;
  out << "epoch";
  for (std::size_t k = 0; k < heads; ++k) out << ",head_" << k + 1;
  out << '\n';
  for (const auto& r : records) {
    require(r.similarity.size() == heads, "similarity records disagree on the number of heads");
    out << r.epoch;
    for (double s : r.similarity) out << ',' << format_double(s);
    out << '\n';
  }
  return out.str();
}

Image plot_similarity(const std::vector<training::TrainRecord>& records) {
  if (records.empty()) throw ContractError("no similarity records");
  const int width = 640, height = 400, left = 50, right = 20, top = 20, bottom = 40;
  const int plot_w = width - left - right, plot_h = height - top - bottom;
  Image img(width, height);
  const double e0 = records.front().epoch, e1 = std::max<double>(records.back().epoch, e0 + 1);
  const auto px = [&](double epoch) { return left + (epoch - e0) / (e1 - e0) * (plot_w - 1); };
  const auto py = [&](double s) { return top + (1.0 - (std::clamp(s, -1.0, 1.0) + 1.0) / 2.0) * (plot_h - 1); };
  for (double s : {-1.0, -0.5, 0.0, 0.5, 1.0}) draw_line(img, left, py(s), left + plot_w - 1, py(s), {220, 220, 220});
  draw_line(img, left, top, left, top + plot_h - 1, {0, 0, 0});
  draw_line(img, left, top + plot_h - 1, left + plot_w - 1, top + plot_h - 1, {0, 0, 0});
  const std::size_t heads = records.front().similarity.size();
  for (std::size_t k = 0; k < heads; ++k)
    for (std::size_t i = 1; i < records.size(); ++i)
      draw_line(img, px(records[i - 1].epoch), py(records[i - 1].similarity[k]), px(records[i].epoch),
                py(records[i].similarity[k]), head_color(static_cast<int>(k)), 2);
  if (records.size() == 1)
    for (std::size_t k = 0; k < heads; ++k)
      draw_circle(img, px(records[0].epoch), py(records[0].similarity[k]), 3, head_color(static_cast<int>(k)));
  return img;
}

ResultsTable emit_results_table(const training::AblationResults& results) {
  ResultsTable table;
  const std::size_t planned_seeds = results.seeds.size();
  struct Column {
    std::string label;
    int attention = 0, pick = 0, trials = 0, seeds = 0;
  };
  std::vector<Column> columns;
  for (Variant v : results.variants) {
    Column col{variant_label(v)};
    for (std::uint64_t seed : results.seeds) {
      const training::CellResult* cell = results.find(v, seed);
      if (!cell || !cell->completed) {
        table.complete = false;
        continue;
      }
      ++col.seeds;
      for (const auto& s : cell->slots) {
        ++col.trials;
        col.attention += s.attention_success;
        col.pick += s.pick_success;
      }
    }
    columns.push_back(col);
  }
  const auto percent = [](int hits, int trials) -> std::string {
    if (trials == 0) return "-";
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << 100.0 * hits / trials;
    return s.str();
  };

  std::ostringstream text, csv;
  const int label_w = 20, col_w = 10;
  text << std::left << std::setw(label_w) << "Success rate [%]";
  csv << "metric";
  for (const auto& c : columns) {
    text << std::right << std::setw(col_w) << c.label;
    csv << ',' << c.label;
  }
  text << '\n';
  csv << '\n';
  const auto row = [&](const std::string& name, auto hits) {
    text << std::left << std::setw(label_w) << name;
    csv << name;
    for (const auto& c : columns) {
      const std::string v = percent(hits(c), c.trials);
      text << std::right << std::setw(col_w) << v;
      csv << ',' << v;
    }
    text << '\n';
    csv << '\n';
  };
  row("Attention", [](const Column& c) { return c.attention; });
  row("Pick", [](const Column& c) { return c.pick; });
  text << std::left << std::setw(label_w) << "Seeds";
  csv << "seeds";
  for (const auto& c : columns) {
    const std::string v = std::to_string(c.seeds) + "/" + std::to_string(planned_seeds);
    text << std::right << std::setw(col_w) << v;
    csv << ',' << v;
  }
  text << "\n\nTrials per column = completed seeds x evaluated slots; '-' marks a column without finished runs.\n";
  csv << '\n';
  if (!table.complete) text << "Suite incomplete: some (variant, seed) runs are missing or failed.\n";
  table.text = text.str();
  table.csv = csv.str();
  return table;
}

}  // namespace a3rnn::report
