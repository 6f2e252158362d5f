#include "vimo/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "vimo/pipeline.hpp"

namespace vimo::experiments {

namespace fs = std::filesystem;

namespace {

const std::vector<std::pair<std::string, Axis>> kAxes{
    {"locators", Axis::locators},     {"temporal", Axis::temporal},
    {"integrator", Axis::integrator}, {"strategy", Axis::strategy},
    {"lambda", Axis::lambda},         {"action_space", Axis::action_space},
    {"initial_frame", Axis::initial_frame}};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

metrics::CostReport train_or_reuse(const RunConfig& cfg, const fs::path& dir) {
  if (fs::exists(dir / "report.txt") && fs::exists(dir / "config.txt") &&
      read_file(dir / "config.txt") == config_to_text(cfg))
    return metrics::parse_cost_report(read_file(dir / "report.txt"));
  return pipeline::train_run(cfg, dir).report;
}

}  // namespace

Axis parse_axis(const std::string& name) {
  for (const auto& [n, a] : kAxes)
    if (n == name) return a;
  throw ConfigError("unknown ablation axis '" + name + "'");
}

std::string to_string(Axis axis) {
  for (const auto& [n, a] : kAxes)
    if (a == axis) return n;
  return "?";
}

std::vector<Cell> ablation_cells(const RunConfig& base, Axis axis) {
  std::vector<Cell> cells;
  auto add = [&](std::string label, auto&& tweak) {
    RunConfig c = base;
    tweak(c);
    cells.push_back({std::move(label), c});
  };
  switch (axis) {
    case Axis::locators:
      for (std::size_t n : {1, 3, 5, 8}) add("locators_" + std::to_string(n), [&](RunConfig& c) { c.locators = n; });
      break;
    case Axis::temporal:
      for (auto k : {TemporalKind::mean_pool, TemporalKind::max_pool, TemporalKind::sum_pool,
                     TemporalKind::lstm})
        add("temporal_" + to_string(k), [&](RunConfig& c) { c.temporal = k; });
      break;
    case Axis::integrator:
      for (auto k : {IntegratorKind::mean_pool, IntegratorKind::max_pool, IntegratorKind::forward,
                     IntegratorKind::transformer})
        add("integrator_" + to_string(k), [&](RunConfig& c) { c.integrator = k; });
      break;
    case Axis::strategy:
      add("strategy_model", [](RunConfig&) {});
      break;
    case Axis::lambda:
      for (double l : {0.05, 0.1, 0.15, 0.2}) add("lambda_" + fmt(l), [&](RunConfig& c) { c.lambda = l; });
      break;
    case Axis::action_space:
      for (std::size_t d : {1, 2, 3, 4, 5}) add("delta_" + std::to_string(d), [&](RunConfig& c) { c.delta = d; });
      break;
    case Axis::initial_frame:
      add("initial_frame_with", [](RunConfig& c) { c.fuse_initial_frame = true; });
      add("initial_frame_without", [](RunConfig& c) { c.fuse_initial_frame = false; });
      break;
  }
  return cells;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, Axis axis, const fs::path& out_dir,
                                      std::size_t jobs,
                                      const std::function<void(const std::string&)>& progress) {
  const auto cells = ablation_cells(base, axis);
  fs::create_directories(out_dir);
  std::mutex mu;
  auto say = [&](const std::string& msg) {
    if (!progress) return;
    std::lock_guard lock(mu);
    progress(msg);
  };
  std::vector<metrics::CostReport> reports(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      say("cell " + cells[i].label);
      try {
        reports[i] = train_or_reuse(cells[i].config, out_dir / cells[i].label);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < std::min(jobs, cells.size()); ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<AblationRow> rows;
  if (axis != Axis::strategy) {
    for (std::size_t i = 0; i < cells.size(); ++i) rows.push_back({cells[i].label, reports[i]});
    return rows;
  }
  // One trained model, observed under every strategy.
  auto [cfg, model] = pipeline::load_run(out_dir / cells[0].label);
  const auto split = pipeline::load_data(cfg);
  struct Strategy {
    const char* label;
    SamplingMode mode;
    double fraction;
  };
  const Strategy strategies[] = {{"all", SamplingMode::uniform, 1.0},
                                 {"uniform_25", SamplingMode::uniform, 0.25},
                                 {"uniform_50", SamplingMode::uniform, 0.5},
                                 {"random_25", SamplingMode::random, 0.25},
                                 {"random_50", SamplingMode::random, 0.5}};
  for (const auto& s : strategies) {
    pipeline::EvalOptions eo;
    eo.mode = s.mode;
    eo.fraction = s.fraction;
    eo.seed = data::derive_seed(cfg.seed, 0xe7a1);
    rows.push_back({s.label, pipeline::evaluate(model, cfg, split.test, eo)});
  }
  rows.push_back({"adaptive", reports[0]});
  return rows;
}

std::string ablation_csv(Axis axis, const std::vector<AblationRow>& rows) {
  std::string out = "axis,cell,top1,mAP,frame_rate,frames_mean,gflops\n";
  for (const auto& r : rows)
    out += to_string(axis) + "," + r.label + "," + fmt(r.report.top1) + "," + fmt(r.report.mAP) +
           "," + fmt(r.report.frame_rate) + "," + fmt(r.report.frames_mean) + "," +
           fmt(r.report.flops_total / 1e9) + "\n";
  return out;
}

Plot plot_runs(std::vector<fs::path> run_dirs) {
  if (run_dirs.empty()) throw std::runtime_error("no runs to plot");
  std::sort(run_dirs.begin(), run_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  struct Point {
    std::string name;
    metrics::CostReport r;
  };
  std::vector<Point> pts;
  for (const auto& d : run_dirs) {
    if (!fs::exists(d / "report.txt")) throw std::runtime_error("missing report in '" + d.string() + "'");
    pts.push_back({d.filename().string(), metrics::parse_cost_report(read_file(d / "report.txt"))});
  }
  Plot plot;
  plot.csv = "run,accuracy,mAP,frame_rate,gflops\n";
  for (const auto& p : pts)
    plot.csv += p.name + "," + fmt(p.r.top1) + "," + fmt(p.r.mAP) + "," + fmt(p.r.frame_rate) +
                "," + fmt(p.r.flops_total / 1e9) + "\n";

  double gmax = 0;
  for (const auto& p : pts) gmax = std::max(gmax, p.r.flops_total / 1e9);
  gmax = gmax > 0 ? gmax * 1.1 : 1.0;
  const double W = 640, H = 480, L = 70, R = 20, T = 30, B = 60;
  auto px = [&](double g) { return L + (W - L - R) * g / gmax; };
  auto py = [&](double a) { return H - B - (H - T - B) * a; };
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << (W + L) / 2 << "\" y=\"" << H - 15
    << "\" text-anchor=\"middle\" font-size=\"14\">GFLOPs per video (modeled)</text>\n"
    << "<text x=\"18\" y=\"" << (H - B + T) / 2 << "\" transform=\"rotate(-90 18 " << (H - B + T) / 2
    << ")\" text-anchor=\"middle\" font-size=\"14\">top-1 accuracy</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double a = k / 4.0, g = gmax * k / 4.0;
    s << "<text x=\"" << L - 8 << "\" y=\"" << py(a) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
      << fmt(a) << "</text>\n"
      << "<text x=\"" << px(g) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << fmt(g) << "</text>\n";
  }
  for (const auto& p : pts) {
    const double x = px(p.r.flops_total / 1e9), y = py(p.r.top1);
    s << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"5\" fill=\"steelblue\"/>\n"
      << "<text x=\"" << x + 7 << "\" y=\"" << y - 7 << "\" font-size=\"11\">" << p.name << "</text>\n";
  }
  s << "</svg>\n";
  plot.svg = s.str();
  return plot;
}

}  // namespace vimo::experiments
