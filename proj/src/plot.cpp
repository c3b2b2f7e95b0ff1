#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "lego/checkpoint.hpp"
#include "lego/errors.hpp"
#include "lego/experiment.hpp"

namespace fs = std::filesystem;

namespace lego {

namespace {

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Table {
  fs::path path;
  std::string digest;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw AnalysisError(path.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  double number(std::size_t row, const std::string& name) const {
    const auto& cell = rows[row][col(name)];
    try {
      std::size_t used = 0;
      const double v = std::stod(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      return v;
    } catch (const std::exception&) {
      throw AnalysisError(path.string() + ": column '" + name + "' row " + std::to_string(row + 2) +
                          " is not a number ('" + cell + "')");
    }
  }
  bool has(const std::string& name) const { return std::find(header.begin(), header.end(), name) != header.end(); }
  std::string text(std::size_t row, const std::string& name) const { return rows[row][col(name)]; }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Table read_table(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AnalysisError("cannot read table " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  Table t;
  t.path = path;
  t.digest = sha256_hex(text);
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line) || line.empty()) throw AnalysisError(path.string() + ": empty table (no header)");
  t.header = split(line);
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw AnalysisError(path.string() + ": row has " + std::to_string(cells.size()) + " cells, header has " +
                          std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.rows.empty()) throw AnalysisError(path.string() + ": empty table, nothing to plot");
  return t;
}

class Svg {
 public:
  Svg(double w, double h, const std::vector<const Table*>& sources) : w_(w), h_(h) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h)
         << "\" viewBox=\"0 0 " << num(w) << ' ' << num(h) << "\" font-family=\"sans-serif\">\n";
    for (const auto* t : sources) {
      out_ << "<!-- source: " << escape(t->path.generic_string()) << " sha256=" << t->digest << " -->\n";
    }
    out_ << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& color, double width = 1,
            const std::string& dash = "") {
    out_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
         << "\" stroke=\"" << color << "\" stroke-width=\"" << num(width) << '"';
    if (!dash.empty()) out_ << " stroke-dasharray=\"" << dash << '"';
    out_ << "/>\n";
  }
  void text(double x, double y, const std::string& s, double size = 11, const std::string& anchor = "middle") {
    out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << num(size) << "\" text-anchor=\""
         << anchor << "\">" << escape(s) << "</text>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
    out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
         << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color, double width = 1.5,
                const std::string& dash = "") {
    out_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << num(width) << '"';
    if (!dash.empty()) out_ << " stroke-dasharray=\"" << dash << '"';
    out_ << " points=\"";
    for (const auto& [x, y] : pts) out_ << num(x) << ',' << num(y) << ' ';
    out_ << "\"/>\n";
  }
  void save(const fs::path& path) {
    out_ << "</svg>\n";
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw AnalysisError("cannot write " + path.string());
    f << out_.str();
  }

 private:
  double w_, h_;
  std::ostringstream out_;
};

// Plot area with linear axes.
struct Panel {
  double x, y, w, h;
  double x0, x1, y0, y1;
  double px(double v) const { return x + (x1 == x0 ? 0.5 : (v - x0) / (x1 - x0)) * w; }
  double py(double v) const { return y + h - (y1 == y0 ? 0.5 : (v - y0) / (y1 - y0)) * h; }

  void axes(Svg& svg, const std::string& title, const std::string& xlabel, const std::string& ylabel) const {
    svg.rect(x, y, w, h, "none", "#333");
    svg.text(x + w / 2, y - 8, title, 12);
    svg.text(x + w / 2, y + h + 32, xlabel, 10);
    svg.text(x - 38, y + h / 2, ylabel, 10);
    for (int t = 0; t <= 4; ++t) {
      const double v = y0 + (y1 - y0) * t / 4.0;
      svg.line(x - 4, py(v), x, py(v), "#333");
      svg.text(x - 6, py(v) + 4, num(v), 9, "end");
    }
    for (int t = 0; t <= 4; ++t) {
      const double v = x0 + (x1 - x0) * t / 4.0;
      svg.line(px(v), y + h, px(v), y + h + 4, "#333");
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", std::round(v * 10) / 10);
      svg.text(px(v), y + h + 16, buf, 9);
    }
  }
};

void legend(Svg& svg, double x, double y, const std::vector<std::string>& labels, const std::vector<std::string>& dashes = {}) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double yy = y + 14.0 * static_cast<double>(i);
    svg.line(x, yy, x + 18, yy, kPalette[i % 10], 2, i < dashes.size() ? dashes[i] : "");
    svg.text(x + 22, yy + 4, labels[i], 10, "start");
  }
}

std::string label_of(const fs::path& table) {
  const auto parent = table.parent_path();
  std::string s = parent.filename().string();
  if (parent.has_parent_path() && !parent.parent_path().filename().empty()) {
    s = parent.parent_path().filename().string() + "/" + s;
  }
  return s.empty() ? table.stem().string() : s;
}

std::string file_stem(const fs::path& table) {
  std::string s = label_of(table) + "_" + table.stem().string();
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

bool is_epoch_table(const Table& t) {
  return t.header == std::vector<std::string>{"global_epoch", "experience_trained", "eval_experience", "position",
                                              "accuracy", "loss", "lr"};
}

// Accuracy vs epoch: one panel per evaluated experience, one line per
// position, dashed markers at experience boundaries.
fs::path plot_epoch_table(const Table& t, const fs::path& out_dir) {
  std::map<int, std::map<int, std::vector<std::pair<double, double>>>> series;  // exp -> pos -> (k, acc)
  std::map<int, int> trained_at;
  int max_k = 1;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int k = static_cast<int>(t.number(r, "global_epoch"));
    const int i = static_cast<int>(t.number(r, "eval_experience"));
    const int j = static_cast<int>(t.number(r, "position"));
    series[i][j].emplace_back(k, t.number(r, "accuracy"));
    trained_at[k] = static_cast<int>(t.number(r, "experience_trained"));
    max_k = std::max(max_k, k);
  }
  std::vector<double> boundaries;
  int prev = -1;
  for (const auto& [k, e] : trained_at) {
    if (prev != -1 && e != prev) boundaries.push_back(k - 0.5);
    prev = e;
  }
  const double pw = 260, ph = 200, left = 60, top = 40, gap = 50;
  const auto n = static_cast<double>(series.size());
  Svg svg(left + n * (pw + gap) + 60, top + ph + 110, {&t});
  int p = 0;
  std::vector<std::string> labels;
  for (const auto& [i, by_pos] : series) {
    Panel panel{left + p * (pw + gap), top, pw, ph, 1, static_cast<double>(max_k), 0, 1};
    panel.axes(svg, "experience " + std::to_string(i), "epoch", "accuracy");
    for (double b : boundaries) svg.line(panel.px(b), panel.y, panel.px(b), panel.y + ph, "#999", 1, "4,3");
    svg.line(panel.x, panel.py(0.5), panel.x + pw, panel.py(0.5), "#ccc", 1, "2,2");
    int s = 0;
    for (const auto& [j, pts] : by_pos) {
      std::vector<std::pair<double, double>> xy;
      for (const auto& [k, a] : pts) xy.emplace_back(panel.px(k), panel.py(a));
      svg.polyline(xy, kPalette[s % 10], 1.5, j > 4 ? "5,3" : "");
      if (p == 0) labels.push_back("a" + std::to_string(j));
      ++s;
    }
    ++p;
  }
  std::vector<std::string> dashes;
  for (std::size_t j = 0; j < labels.size(); ++j) dashes.push_back(j >= 4 ? "5,3" : "");
  legend(svg, left, top + ph + 50, labels, dashes);
  const auto path = out_dir / (file_stem(t.path) + ".svg");
  svg.save(path);
  return path;
}

// a_4 on experience 1 for several runs, e.g. one per replay fraction.
fs::path plot_comparison(const std::vector<const Table*>& tables, const fs::path& out_dir) {
  const double pw = 420, ph = 240, left = 60, top = 40;
  Svg svg(left + pw + 220, top + ph + 70, tables);
  int max_k = 1;
  std::vector<std::vector<std::pair<double, double>>> curves;
  std::vector<double> boundaries;
  for (const auto* t : tables) {
    std::vector<std::pair<double, double>> pts;
    int prev = -1;
    for (std::size_t r = 0; r < t->rows.size(); ++r) {
      if (static_cast<int>(t->number(r, "eval_experience")) != 1 || static_cast<int>(t->number(r, "position")) != 4) continue;
      const int k = static_cast<int>(t->number(r, "global_epoch"));
      const int e = static_cast<int>(t->number(r, "experience_trained"));
      if (t == tables.front() && prev != -1 && e != prev) boundaries.push_back(k - 0.5);
      prev = e;
      pts.emplace_back(k, t->number(r, "accuracy"));
      max_k = std::max(max_k, k);
    }
    curves.push_back(std::move(pts));
  }
  Panel panel{left, top, pw, ph, 1, static_cast<double>(max_k), 0, 1};
  panel.axes(svg, "a4 accuracy on experience 1", "epoch", "accuracy");
  for (double b : boundaries) svg.line(panel.px(b), top, panel.px(b), top + ph, "#999", 1, "4,3");
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < curves.size(); ++c) {
    std::vector<std::pair<double, double>> xy;
    for (const auto& [k, a] : curves[c]) xy.emplace_back(panel.px(k), panel.py(a));
    svg.polyline(xy, kPalette[c % 10]);
    labels.push_back(label_of(tables[c]->path));
  }
  legend(svg, left + pw + 20, top + 10, labels);
  const auto path = out_dir / "comparison_a4_experience1.svg";
  svg.save(path);
  return path;
}

std::string heat_color(double v, double lo, double hi) {
  const double t = hi > lo ? std::clamp((v - lo) / (hi - lo), 0.0, 1.0) : 0.5;
  const int r = static_cast<int>(255 * (1 - t) + 30 * t);
  const int g = static_cast<int>(255 * (1 - t) + 90 * t);
  const int b = static_cast<int>(255 * (1 - t) + 170 * t);
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

// Heat tables of the four metrics over (layers, heads), one row per family.
fs::path plot_sweep_table(const Table& t, const fs::path& out_dir) {
  const std::vector<std::pair<std::string, std::pair<double, double>>> metrics = {
      {"TA", {0.5, 1}}, {"GA", {0.5, 1}}, {"FT_log10", {-1, 1}}, {"PM_corrected", {-1, 0}}};
  std::set<std::string> families;
  std::set<int> layers, heads;
  std::map<std::tuple<std::string, int, int, std::string>, std::pair<double, int>> cells;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto fam = t.text(r, "family");
    const int L = static_cast<int>(t.number(r, "layers"));
    const int H = static_cast<int>(t.number(r, "heads"));
    families.insert(fam);
    layers.insert(L);
    heads.insert(H);
    if (t.has("status") && t.text(r, "status").rfind("error", 0) == 0) continue;
    for (const auto& [m, _] : metrics) {
      if (t.text(r, m).empty()) continue;
      auto& c = cells[{fam, L, H, m}];
      c.first += t.number(r, m);
      c.second += 1;
    }
  }
  const double cell = 34, left = 70, top = 50, gap = 60;
  const double pw = cell * static_cast<double>(heads.size()), ph = cell * static_cast<double>(layers.size());
  Svg svg(left + 4 * (pw + gap), top + static_cast<double>(families.size()) * (ph + gap) + 20, {&t});
  int row = 0;
  for (const auto& fam : families) {
    int colm = 0;
    for (const auto& [m, range] : metrics) {
      const double x0 = left + colm * (pw + gap), y0 = top + row * (ph + gap);
      svg.text(x0 + pw / 2, y0 - 20, fam + ": " + m, 12);
      int hi = 0;
      for (int H : heads) svg.text(x0 + (hi++ + 0.5) * cell, y0 - 5, "H" + std::to_string(H), 9);
      int li = 0;
      for (int L : layers) {
        svg.text(x0 - 5, y0 + (li + 0.5) * cell + 4, "L" + std::to_string(L), 9, "end");
        int hj = 0;
        for (int H : heads) {
          const double cx = x0 + hj * cell, cy = y0 + li * cell;
          auto it = cells.find({fam, L, H, m});
          if (it == cells.end()) {
            svg.rect(cx, cy, cell, cell, "#eeeeee", "#ffffff");
          } else {
            const double v = it->second.first / it->second.second;
            svg.rect(cx, cy, cell, cell, heat_color(v, range.first, range.second), "#ffffff");
            svg.text(cx + cell / 2, cy + cell / 2 + 4, num(v), 8);
          }
          ++hj;
        }
        ++li;
      }
      ++colm;
    }
    ++row;
  }
  const auto path = out_dir / (file_stem(t.path) + ".svg");
  svg.save(path);
  return path;
}

// Grouped bars of TA, GA and PM_corrected per run row.
fs::path plot_summary_table(const Table& t, const fs::path& out_dir) {
  const std::vector<std::string> metrics = {"TA", "GA", "PM_corrected"};
  const double group_w = 70, left = 60, top = 40, ph = 220;
  Svg svg(left + group_w * static_cast<double>(t.rows.size()) + 160, top + ph + 90, {&t});
  Panel panel{left, top, group_w * static_cast<double>(t.rows.size()), ph, 0, 1, -1, 1};
  svg.rect(panel.x, panel.y, panel.w, panel.h, "none", "#333");
  svg.text(panel.x + panel.w / 2, top - 10, "continual-learning metrics per run", 12);
  for (int tk = 0; tk <= 4; ++tk) {
    const double v = -1 + 0.5 * tk;
    svg.text(left - 6, panel.py(v) + 4, num(v), 9, "end");
  }
  svg.line(left, panel.py(0), left + panel.w, panel.py(0), "#333");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double gx = left + group_w * static_cast<double>(r);
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      if (!t.has(metrics[m]) || t.text(r, metrics[m]).empty()) continue;
      const double v = t.number(r, metrics[m]);
      const double y_top = panel.py(std::max(v, 0.0)), y_bot = panel.py(std::min(v, 0.0));
      svg.rect(gx + 8 + 18 * static_cast<double>(m), y_top, 16, y_bot - y_top, kPalette[m]);
    }
    std::string label;
    for (const auto* key : {"schedule", "replay", "seed"}) {
      if (t.has(key)) label += (label.empty() ? "" : "/") + t.text(r, key);
    }
    svg.text(gx + group_w / 2, top + ph + 16, label, 9);
  }
  legend(svg, left + panel.w + 20, top + 10, metrics);
  const auto path = out_dir / (file_stem(t.path) + ".svg");
  svg.save(path);
  return path;
}

// Per-layer analysis curves (preceding-clause scores, cosine similarity).
fs::path plot_layer_table(const Table& t, const std::string& group_col, const std::string& value_col,
                          const std::string& title, const fs::path& out_dir) {
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double max_layer = 1;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::string key = t.text(r, group_col);
    if (group_col == "before_epoch") key += "->" + t.text(r, "after_epoch");
    const double l = t.number(r, "layer");
    series[key].emplace_back(l, t.number(r, value_col));
    max_layer = std::max(max_layer, l);
  }
  const double left = 60, top = 40, pw = 320, ph = 220;
  Svg svg(left + pw + 200, top + ph + 70, {&t});
  Panel panel{left, top, pw, ph, 1, max_layer, 0, 1};
  panel.axes(svg, title, "layer", value_col);
  std::vector<std::string> labels;
  int s = 0;
  for (const auto& [key, pts] : series) {
    std::vector<std::pair<double, double>> xy;
    for (const auto& [l, v] : pts) xy.emplace_back(panel.px(l), panel.py(v));
    svg.polyline(xy, kPalette[s++ % 10]);
    labels.push_back(group_col == "checkpoint_epoch" ? "epoch " + key : key);
  }
  legend(svg, left + pw + 20, top + 10, labels);
  const auto path = out_dir / (file_stem(t.path) + ".svg");
  svg.save(path);
  return path;
}

}  // namespace

std::vector<fs::path> cmd_plot(const std::vector<fs::path>& tables, const fs::path& out_dir) {
  if (tables.empty()) throw AnalysisError("no tables given to plot");
  std::vector<Table> loaded;
  for (const auto& p : tables) loaded.push_back(read_table(p));
  std::vector<fs::path> written;
  std::vector<const Table*> epoch_tables;
  for (const auto& t : loaded) {
    const auto& h = t.header;
    if (is_epoch_table(t)) {
      written.push_back(plot_epoch_table(t, out_dir));
      epoch_tables.push_back(&t);
    } else if (h.size() > 5 && h[0] == "family" && h[4] == "seed") {
      written.push_back(plot_sweep_table(t, out_dir));
    } else if (t.has("schedule") && t.has("TA")) {
      written.push_back(plot_summary_table(t, out_dir));
    } else if (h == std::vector<std::string>{"checkpoint_epoch", "layer", "score"}) {
      written.push_back(plot_layer_table(t, "checkpoint_epoch", "score", "attention on the preceding clause", out_dir));
    } else if (h == std::vector<std::string>{"before_epoch", "after_epoch", "layer", "cosine"}) {
      written.push_back(plot_layer_table(t, "before_epoch", "cosine", "attention cosine similarity", out_dir));
    } else {
      std::string cols;
      for (const auto& c : h) cols += (cols.empty() ? "" : ",") + c;
      throw AnalysisError(t.path.string() + ": unrecognized table schema (" + cols + ")");
    }
  }
  if (epoch_tables.size() > 1) written.push_back(plot_comparison(epoch_tables, out_dir));
  return written;
}

}  // namespace lego
