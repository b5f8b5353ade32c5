#include "onevl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace onevl {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int prec) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const char* kMetricsHeader =
    "variant,mode,n_samples,n_decode_failures,ade,fde,ade_excluding_failures,fde_excluding_failures,"
    "l2_1s,l2_2s,l2_3s,l2_4s,l2_avg_horizons,median_latency_s,mean_decoded_tokens,meta_action_accuracy";

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

BenchmarkReport run_benchmark(const std::vector<BenchmarkEntry>& entries, const BenchmarkOptions& opt) {
  BenchmarkReport report;
  report.config_hash = opt.config_hash;
  for (const auto& e : entries) {
    if (e.bundle == nullptr || e.vocab == nullptr || e.test == nullptr || e.test->empty()) {
      throw std::invalid_argument("run_benchmark: entry '" + e.variant + "' has no bundle, vocabulary or samples");
    }
    const InferenceEngine engine(*e.bundle, *e.vocab);
    const std::size_t n = opt.test_limit == 0 ? e.test->size() : std::min(opt.test_limit, e.test->size());

    std::optional<double> meta;
    if (e.meta_action) {
      std::vector<std::optional<MetaAction>> got;
      std::vector<MetaAction> want;
      for (std::size_t i = 0; i < n; ++i) {
        got.push_back(extract_meta_action(engine.explain_language((*e.test)[i]).cot_text));
        want.push_back((*e.test)[i].meta_action);
      }
      meta = meta_action_accuracy(got, want);
    }

    std::map<DecodeMode, double> lat;
    if (e.latency) {
      const std::size_t m = std::min(opt.latency_samples, e.test->size());
      const std::vector<TokenizedSample> subset(e.test->begin(), e.test->begin() + static_cast<std::ptrdiff_t>(m));
      auto summary = measure_latency(engine, subset, e.modes, opt.latency_runs, opt.latency_warmup);
      for (const auto& [mode, t] : summary.median_total) lat[mode] = t;
      report.latency.insert(report.latency.end(), summary.records.begin(), summary.records.end());
    }

    for (DecodeMode mode : e.modes) {
      std::vector<std::optional<Trajectory>> preds;
      std::vector<Trajectory> gts;
      double decoded = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto p = engine.predict((*e.test)[i], mode);
        preds.push_back(p.ok ? std::optional<Trajectory>(p.trajectory) : std::nullopt);
        gts.push_back((*e.test)[i].trajectory);
        decoded += static_cast<double>(p.latency.decoded_tokens);
      }
      BenchmarkRow row;
      row.variant = e.variant;
      row.mode = std::string(to_string(mode));
      row.metrics = aggregate_metrics(preds, gts);
      row.median_latency_s = lat.count(mode) ? lat[mode] : 0.0;
      row.mean_decoded_tokens = decoded / static_cast<double>(n);
      row.meta_action_accuracy = meta;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<BenchmarkRow>& rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    os << r.variant << ',' << r.mode << ',' << m.n_samples << ',' << m.n_decode_failures << ',' << num(m.ade) << ','
       << num(m.fde) << ',' << num(m.ade_excluding_failures) << ',' << num(m.fde_excluding_failures);
    for (int h = 1; h <= 4; ++h) os << ',' << num(m.l2_at.count(h) ? m.l2_at.at(h) : 0.0);
    os << ',' << num(m.l2_avg_horizons) << ',' << num(r.median_latency_s) << ',' << num(r.mean_decoded_tokens)
       << ',' << (r.meta_action_accuracy ? num(*r.meta_action_accuracy) : std::string()) << '\n';
  }
}

std::vector<BenchmarkRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) {
    throw std::runtime_error(path.string() + ": unexpected metrics header");
  }
  std::vector<BenchmarkRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 16) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    BenchmarkRow r;
    r.variant = c[0];
    r.mode = c[1];
    auto& m = r.metrics;
    m.n_samples = std::stoull(c[2]);
    m.n_decode_failures = std::stoull(c[3]);
    m.ade = std::strtod(c[4].c_str(), nullptr);
    m.fde = std::strtod(c[5].c_str(), nullptr);
    m.ade_excluding_failures = std::strtod(c[6].c_str(), nullptr);
    m.fde_excluding_failures = std::strtod(c[7].c_str(), nullptr);
    for (int h = 1; h <= 4; ++h) m.l2_at[h] = std::strtod(c[7 + h].c_str(), nullptr);
    m.l2_avg_horizons = std::strtod(c[12].c_str(), nullptr);
    r.median_latency_s = std::strtod(c[13].c_str(), nullptr);
    r.mean_decoded_tokens = std::strtod(c[14].c_str(), nullptr);
    if (!c[15].empty()) r.meta_action_accuracy = std::strtod(c[15].c_str(), nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string summary_text(const BenchmarkReport& report) {
  std::ostringstream os;
  os << "config_hash " << report.config_hash << "\n\n";
  os << "Trajectory error (metres). ADE charges " << kDecodeFailureError
     << " m per decode failure; ADE* excludes failures.\n";
  os << "L2@ks is the error at waypoint 2k; L2avg(h) averages the four horizons,\n"
     << "ADE averages all eight waypoints.\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %-17s %6s %5s %8s %8s %8s %8s %8s %8s %8s %8s %9s %8s %6s\n", "variant",
                "mode", "n", "fail", "ADE", "FDE", "ADE*", "L2@1s", "L2@2s", "L2@3s", "L2@4s", "L2avg(h)",
                "lat_ms", "tokens", "meta");
  os << line;
  for (const auto& r : report.rows) {
    const auto& m = r.metrics;
    auto at = [&](int h) { return m.l2_at.count(h) ? m.l2_at.at(h) : 0.0; };
    std::snprintf(line, sizeof line,
                  "%-12s %-17s %6zu %5zu %8.3f %8.3f %8.3f %8.3f %8.3f %8.3f %8.3f %8.3f %9s %8.1f %6s\n",
                  r.variant.c_str(), r.mode.c_str(), m.n_samples, m.n_decode_failures, m.ade, m.fde,
                  m.ade_excluding_failures, at(1), at(2), at(3), at(4), m.l2_avg_horizons,
                  r.median_latency_s > 0 ? fixed(r.median_latency_s * 1e3, 2).c_str() : "-",
                  r.mean_decoded_tokens, r.meta_action_accuracy ? fixed(*r.meta_action_accuracy, 3).c_str() : "-");
    os << line;
  }
  if (!report.latency.empty()) {
    std::map<std::string, std::vector<double>> per_mode;
    for (const auto& rec : report.latency) per_mode[std::string(to_string(rec.mode))].push_back(rec.total);
    os << "\nMedian latency over " << report.latency.size() / std::max<std::size_t>(1, per_mode.size())
       << " samples (forced reference tokens, warmup excluded)\n";
    std::map<std::string, double> med;
    for (const auto& [mode, v] : per_mode) {
      med[mode] = median(v);
      os << "  " << mode << ": " << fixed(med[mode] * 1e3, 3) << " ms\n";
    }
    auto ratio = [&](const char* a, const char* b, const char* label) {
      if (med.count(a) && med.count(b) && med[b] > 0) os << "  " << label << ": " << fixed(med[a] / med[b], 3) << '\n';
    };
    ratio("explicit_cot", "latent_prefill", "explicit_cot / latent_prefill");
    ratio("latent_prefill", "answer_only", "latent_prefill / answer_only");
    ratio("mlp_head", "answer_only", "mlp_head / answer_only");
  }
  os << "\nReference values from the original large-scale setting (not comparable in absolute terms):\n"
     << "  latency explicit CoT 6.58 s, latent 4.46 s, answer only 4.49 s, MLP head 0.24 s\n"
     << "  PDM-score OneVL 88.84, answer only 87.47, without staged training 67.13\n";
  return os.str();
}

namespace {

struct Frame {
  double x0 = 70, y0 = 30, w = 520, h = 330;
  double xmin, xmax, ymin, ymax;
  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

void axes(std::ostringstream& os, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  os << "<rect x=\"" << f.x0 << "\" y=\"" << f.y0 << "\" width=\"" << f.w << "\" height=\"" << f.h
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.xmin + (f.xmax - f.xmin) * i / 4.0;
    const double yv = f.ymin + (f.ymax - f.ymin) * i / 4.0;
    os << "<text x=\"" << fixed(f.px(xv), 1) << "\" y=\"" << f.y0 + f.h + 16
       << "\" font-size=\"11\" text-anchor=\"middle\">" << fixed(xv, 2) << "</text>\n";
    os << "<text x=\"" << f.x0 - 6 << "\" y=\"" << fixed(f.py(yv) + 4, 1)
       << "\" font-size=\"11\" text-anchor=\"end\">" << fixed(yv, 2) << "</text>\n";
  }
  os << "<text x=\"" << f.x0 + f.w / 2 << "\" y=\"" << f.y0 + f.h + 34 << "\" font-size=\"12\" text-anchor=\"middle\">"
     << xlabel << "</text>\n";
  os << "<text x=\"16\" y=\"" << f.y0 + f.h / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << f.y0 + f.h / 2 << ")\">" << ylabel << "</text>\n";
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::string accuracy_latency_svg(const std::vector<BenchmarkRow>& rows) {
  std::vector<const BenchmarkRow*> pts;
  for (const auto& r : rows) {
    if (r.median_latency_s > 0) pts.push_back(&r);
  }
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\">\n";
  if (pts.empty()) {
    os << "<text x=\"20\" y=\"40\">no latency measurements</text>\n</svg>\n";
    return os.str();
  }
  Frame f;
  f.xmin = 0.0;
  f.ymin = 0.0;
  f.xmax = f.ymax = 0.0;
  for (const auto* r : pts) {
    f.xmax = std::max(f.xmax, r->median_latency_s * 1e3);
    f.ymax = std::max(f.ymax, r->metrics.ade);
  }
  f.xmax = f.xmax > 0 ? f.xmax * 1.15 : 1.0;
  f.ymax = f.ymax > 0 ? f.ymax * 1.15 : 1.0;
  axes(os, f, "median latency (ms)", "ADE (m)");
  std::size_t i = 0;
  for (const auto* r : pts) {
    const double x = f.px(r->median_latency_s * 1e3);
    const double y = f.py(r->metrics.ade);
    os << "<circle cx=\"" << fixed(x, 1) << "\" cy=\"" << fixed(y, 1) << "\" r=\"5\" fill=\"" << kColors[i++ % 8]
       << "\"/>\n";
    os << "<text x=\"" << fixed(x + 7, 1) << "\" y=\"" << fixed(y - 6, 1) << "\" font-size=\"11\">"
       << xml_escape(r->variant + "/" + r->mode) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string loss_curves_svg(const std::vector<std::pair<std::string, std::vector<double>>>& curves) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\">\n";
  std::size_t total = 0;
  double ymax = 0.0;
  for (const auto& [name, v] : curves) {
    total += v.size();
    for (double x : v) {
      if (std::isfinite(x)) ymax = std::max(ymax, x);
    }
  }
  if (total == 0) {
    os << "<text x=\"20\" y=\"40\">no loss records</text>\n</svg>\n";
    return os.str();
  }
  Frame f;
  f.xmin = 0.0;
  f.xmax = static_cast<double>(std::max<std::size_t>(total, 2) - 1);
  f.ymin = 0.0;
  f.ymax = ymax > 0 ? ymax * 1.05 : 1.0;
  axes(os, f, "step", "total loss");
  std::size_t offset = 0;
  std::size_t c = 0;
  for (const auto& [name, v] : curves) {
    if (v.empty()) continue;
    const char* color = kColors[c++ % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < v.size(); ++i) {
      os << fixed(f.px(static_cast<double>(offset + i)), 1) << ',' << fixed(f.py(v[i]), 1) << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"" << fixed(f.px(static_cast<double>(offset)) + 3, 1) << "\" y=\"" << f.y0 + 14
       << "\" font-size=\"11\" fill=\"" << color << "\">" << xml_escape(name) << "</text>\n";
    offset += v.size();
  }
  os << "</svg>\n";
  return os.str();
}

void write_report(const std::filesystem::path& dir, const BenchmarkReport& report) {
  std::filesystem::create_directories(dir / "plots");
  {
    std::ofstream os(dir / "summary.txt", std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + (dir / "summary.txt").string());
    os << summary_text(report);
  }
  write_metrics_csv(dir / "metrics.csv", report.rows);
  write_latency_csv(dir / "latency.csv", report.latency);
  std::ofstream(dir / "plots" / "accuracy_vs_latency.svg", std::ios::binary | std::ios::trunc)
      << accuracy_latency_svg(report.rows);
  std::ofstream(dir / "plots" / "loss_curves.svg", std::ios::binary | std::ios::trunc)
      << loss_curves_svg(report.loss_curves);
}

}  // namespace onevl
