#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"

#include "efoent/errors.hpp"
#include "efoent/train.hpp"

namespace efoent {

namespace {

nlohmann::json cell_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

std::optional<double> cell_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string pct(const std::optional<double>& v) {
  if (!v) return "—";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", *v * 100.0);
  return buf;
}

// Column width in display characters; the em dash is 3 bytes but 1 column.
size_t display_len(const std::string& s) {
  size_t bytes = s.size();
  size_t pos = 0;
  while ((pos = s.find("—", pos)) != std::string::npos) {
    bytes -= 2;
    pos += 3;
  }
  return bytes;
}

std::string pad(const std::string& s, size_t width, bool left) {
  const size_t len = display_len(s);
  const std::string fill(width > len ? width - len : 0, ' ');
  return left ? s + fill : fill + s;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["model_name"] = model_name;
  j["cells"]["id_id"] = cell_json(id_id);
  j["cells"]["id_ood"] = cell_json(id_ood);
  j["cells"]["ood_id"] = cell_json(ood_id);
  j["cells"]["ood_ood"] = cell_json(ood_ood);
  j["cells"]["all_id"] = cell_json(all_id);
  j["cells"]["all_ood"] = cell_json(all_ood);
  nlohmann::json types = nlohmann::json::array();
  for (const TypeMrr& t : per_type) {
    nlohmann::json tj;
    tj["type"] = t.type_name;
    tj["seen"] = t.seen;
    tj["id_count"] = t.id_count;
    tj["id_mrr"] = t.id_mrr;
    tj["ood_count"] = t.ood_count;
    tj["ood_mrr"] = t.ood_mrr;
    types.push_back(std::move(tj));
  }
  j["per_type"] = std::move(types);
  j["meta"] = meta;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad evaluation report: ") + e.what());
  }
  EvalReport r;
  try {
    r.model_name = j.at("model_name").get<std::string>();
    const auto& c = j.at("cells");
    r.id_id = cell_from(c.at("id_id"));
    r.id_ood = cell_from(c.at("id_ood"));
    r.ood_id = cell_from(c.at("ood_id"));
    r.ood_ood = cell_from(c.at("ood_ood"));
    r.all_id = cell_from(c.at("all_id"));
    r.all_ood = cell_from(c.at("all_ood"));
    for (const auto& tj : j.at("per_type")) {
      TypeMrr t;
      t.type_name = tj.at("type").get<std::string>();
      t.seen = tj.at("seen").get<bool>();
      t.id_count = tj.at("id_count").get<int>();
      t.id_mrr = tj.at("id_mrr").get<double>();
      t.ood_count = tj.at("ood_count").get<int>();
      t.ood_mrr = tj.at("ood_mrr").get<double>();
      r.per_type.push_back(std::move(t));
    }
    if (j.contains("meta")) {
      for (auto& [k, v] : j.at("meta").items()) r.meta[k] = v.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad evaluation report: ") + e.what());
  }
  return r;
}

std::string report_table(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw UsageError("no evaluation reports to tabulate");
  const std::vector<std::string> headers = {"Model",        "ID(Q)/ID(K)",  "ID(Q)/OOD(K)",
                                            "OOD(Q)/ID(K)", "OOD(Q)/OOD(K)", "All/ID(K)",
                                            "All/OOD(K)"};
  std::vector<std::vector<std::string>> rows;
  for (const EvalReport& r : reports) {
    rows.push_back({r.model_name.empty() ? "(unnamed)" : r.model_name, pct(r.id_id),
                    pct(r.id_ood), pct(r.ood_id), pct(r.ood_ood), pct(r.all_id),
                    pct(r.all_ood)});
  }
  std::vector<size_t> width(headers.size());
  for (size_t c = 0; c < headers.size(); ++c) {
    width[c] = display_len(headers[c]);
    for (const auto& row : rows) width[c] = std::max(width[c], display_len(row[c]));
  }
  std::string out;
  auto emit_row = [&](const std::vector<std::string>& cells) {
    for (size_t c = 0; c < cells.size(); ++c) {
      if (c) out += "  ";
      out += pad(cells[c], width[c], c == 0);
    }
    out += "\n";
  };
  emit_row(headers);
  std::string rule;
  for (size_t c = 0; c < headers.size(); ++c) {
    if (c) rule += "  ";
    rule += std::string(width[c], '-');
  }
  out += rule + "\n";
  for (const auto& row : rows) emit_row(row);
  return out;
}

std::string report_per_type(const EvalReport& report) {
  const std::vector<std::string> headers = {"Type", "Shape", "ID(K)", "#q", "OOD(K)", "#q"};
  std::vector<std::vector<std::string>> rows;
  for (const TypeMrr& t : report.per_type) {
    rows.push_back({t.type_name, t.seen ? "seen" : "unseen",
                    t.id_count ? pct(t.id_mrr) : "—", std::to_string(t.id_count),
                    t.ood_count ? pct(t.ood_mrr) : "—", std::to_string(t.ood_count)});
  }
  std::vector<size_t> width(headers.size());
  for (size_t c = 0; c < headers.size(); ++c) {
    width[c] = display_len(headers[c]);
    for (const auto& row : rows) width[c] = std::max(width[c], display_len(row[c]));
  }
  std::string out;
  auto emit_row = [&](const std::vector<std::string>& cells) {
    for (size_t c = 0; c < cells.size(); ++c) {
      if (c) out += "  ";
      out += pad(cells[c], width[c], c < 2);
    }
    out += "\n";
  };
  emit_row(headers);
  std::string rule;
  for (size_t c = 0; c < headers.size(); ++c) {
    if (c) rule += "  ";
    rule += std::string(width[c], '-');
  }
  out += rule + "\n";
  for (const auto& row : rows) emit_row(row);
  return out;
}

std::string report_svg(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw UsageError("no evaluation reports to plot");
  const std::vector<std::string> labels = {"ID(Q)/ID(K)",  "ID(Q)/OOD(K)", "OOD(Q)/ID(K)",
                                           "OOD(Q)/OOD(K)", "All/ID(K)",    "All/OOD(K)"};
  const std::vector<std::string> palette = {"#4c78a8", "#f58518", "#54a24b", "#e45756",
                                            "#72b7b2", "#b279a2", "#9d755d", "#bab0ac"};
  const int bar_w = 16;
  const int group_gap = 28;
  const int margin_left = 56;
  const int margin_top = 40;
  const int plot_h = 220;
  const int group_w = int(reports.size()) * bar_w + group_gap;
  const int width = margin_left + 6 * group_w + 24;
  const int legend_h = 18 * int(reports.size());
  const int height = margin_top + plot_h + 60 + legend_h;

  std::string svg;
  char buf[512];
  auto emitf = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof(buf), fmt, args...);
    svg += buf;
  };
  emitf("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\">\n", width,
        height);
  svg += "<style>text{font-family:sans-serif;font-size:11px;}</style>\n";
  emitf("<text x=\"%d\" y=\"20\" font-size=\"14\">MRR%% by generalization cell</text>\n",
        margin_left);
  // y axis: 0..100 with gridlines every 25
  for (int tick = 0; tick <= 100; tick += 25) {
    const int y = margin_top + plot_h - tick * plot_h / 100;
    emitf("<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"#ddd\"/>\n", margin_left, y,
          width - 12, y);
    emitf("<text x=\"%d\" y=\"%d\" text-anchor=\"end\">%d</text>\n", margin_left - 6, y + 4,
          tick);
  }
  for (size_t cell = 0; cell < labels.size(); ++cell) {
    const int gx = margin_left + int(cell) * group_w;
    for (size_t m = 0; m < reports.size(); ++m) {
      const EvalReport& r = reports[m];
      const std::optional<double> vals[6] = {r.id_id, r.id_ood,  r.ood_id,
                                             r.ood_ood, r.all_id, r.all_ood};
      if (!vals[cell]) continue;
      const double v = *vals[cell] * 100.0;
      const int h = int(v * plot_h / 100.0 + 0.5);
      const int x = gx + int(m) * bar_w;
      const int y = margin_top + plot_h - h;
      emitf("<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"%s\"/>\n", x, y,
            bar_w - 2, h, palette[m % palette.size()].c_str());
    }
    emitf("<text x=\"%d\" y=\"%d\" transform=\"rotate(30 %d %d)\">%s</text>\n", gx,
          margin_top + plot_h + 16, gx, margin_top + plot_h + 16, labels[cell].c_str());
  }
  for (size_t m = 0; m < reports.size(); ++m) {
    const int y = margin_top + plot_h + 48 + 18 * int(m);
    emitf("<rect x=\"%d\" y=\"%d\" width=\"12\" height=\"12\" fill=\"%s\"/>\n", margin_left,
          y - 10, palette[m % palette.size()].c_str());
    emitf("<text x=\"%d\" y=\"%d\">%s</text>\n", margin_left + 18, y,
          reports[m].model_name.empty() ? "(unnamed)" : reports[m].model_name.c_str());
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace efoent
