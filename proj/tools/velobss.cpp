// velobss: synthesize mixtures, separate them, score the recovery.

#include <velobss/velobss.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace velobss;

namespace {

constexpr int kExitSeparable = 0;
constexpr int kExitError = 1;
constexpr int kExitInseparable = 2;

struct Overrides {
  std::string config;
  std::optional<int> bins;
  std::optional<double> eps_sep;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

PipelineConfig resolve(const Overrides& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_config(o.config);
  if (o.bins) c.bins_per_dim = *o.bins;
  if (o.eps_sep) c.eps_sep = *o.eps_sep;
  if (o.seed) c.seed = *o.seed;
  if (o.out_dir) c.out_dir = *o.out_dir;
  c.validate();
  return c;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

class Manifest {
 public:
  Manifest(std::string command, const PipelineConfig& cfg) {
    doc_["tool"] = "velobss";
    doc_["version"] = VELOBSS_VERSION;
    doc_["command"] = std::move(command);
    doc_["config"] = to_json(cfg);
    doc_["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION);
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::object();
  }
  void input(const fs::path& p) { doc_["inputs"][p.generic_string()] = file_digest(p); }
  void output(const fs::path& p) { doc_["outputs"][p.filename().generic_string()] = file_digest(p); }
  void set(const std::string& key, json v) { doc_[key] = std::move(v); }
  void write(const fs::path& dir) const { write_json(dir / "manifest.json", doc_); }

 private:
  json doc_;
};

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::string> numbered(const std::string& stem, Eigen::Index n) {
  std::vector<std::string> h;
  for (Eigen::Index i = 0; i < n; ++i) h.push_back(stem + std::to_string(i + 1));
  return h;
}

// Centers a channel and scales it to the WAV peak; the remaining
// out-of-range samples, if any, are clipped and counted.
void export_wav(const fs::path& path, const Matrix& data, Eigen::Index col, double rate, bool rescale) {
  Matrix one = data.col(col);
  if (rescale) {
    one.array() -= one.mean();
    const double peak = one.cwiseAbs().maxCoeff();
    if (peak > 0.0) one *= 0.9 * 32768.0 / peak;
  }
  WavChannel ch;
  ch.sample_rate = static_cast<std::uint32_t>(std::lround(rate));
  const std::size_t clipped = quantize_channel(one, 0, ch);
  if (clipped) std::cerr << "warning: " << path.string() << ": " << clipped << " samples clipped\n";
  write_wav(path, ch);
}

int cmd_synth(const PipelineConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  Manifest man("synth", cfg);
  const SourceOptions so = cfg.sources();
  for (const auto& p : so.wav_paths) man.input(p);
  const Matrix s = gen_sources(so);
  try {
    MixingSpec{}.validate(std::max(s.cwiseAbs().maxCoeff(), 1.0));
  } catch (const DomainError& e) {
    std::cerr << "warning: sources reach the fold of the mixing map; it is not invertible there (" << e.what()
              << ")\n";
  }
  const Matrix mu = mix(s);
  const SignalSeries series(cfg.sample_rate, mu);
  const WhitenResult w = pca_whiten(series);
  const Eigen::Index n = s.rows();

  const fs::path sp = cfg.out_dir / "sources.csv", mp = cfg.out_dir / "mixtures.csv", xp = cfg.out_dir / "x.csv";
  write_csv(sp, numbered("s", s.cols()), s);
  write_csv(mp, numbered("mu", mu.cols()), mu);
  {
    std::vector<std::string> header{"t"};
    for (auto& h : numbered("x", mu.cols())) header.push_back(h);
    CsvWriter out(xp, header);
    const Matrix& x = w.states.data();
    for (Eigen::Index i = 0; i < n; ++i) {
      out << static_cast<double>(i) / cfg.sample_rate;
      for (Eigen::Index c = 0; c < x.cols(); ++c) out << x(i, c);
      out.end_row();
    }
    out.close();
  }
  for (const auto& p : {sp, mp, xp}) man.output(p);
  if (cfg.write_wav) {
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      const fs::path p = cfg.out_dir / ("source" + std::to_string(c + 1) + ".wav");
      export_wav(p, s, c, cfg.sample_rate, false);
      man.output(p);
    }
    for (Eigen::Index c = 0; c < mu.cols(); ++c) {
      const fs::path p = cfg.out_dir / ("mixture" + std::to_string(c + 1) + ".wav");
      export_wav(p, mu, c, cfg.sample_rate, true);
      man.output(p);
    }
  }
  json wt;
  wt["mean"] = std::vector<double>(w.transform.mean.data(), w.transform.mean.data() + w.transform.mean.size());
  wt["basis"] = matrix_json(w.transform.basis);
  wt["eigenvalues"] =
      std::vector<double>(w.transform.eigenvalues.data(), w.transform.eigenvalues.data() + w.transform.eigenvalues.size());
  man.set("whitening", wt);
  man.write(cfg.out_dir);

  std::cout << "whitening: x = B (mu - m)\n";
  std::cout << "  m = [" << format_double(w.transform.mean(0)) << ", " << format_double(w.transform.mean(1)) << "]\n";
  for (Eigen::Index r = 0; r < w.transform.basis.rows(); ++r) {
    std::cout << (r == 0 ? "  B = [" : "       ");
    for (Eigen::Index c = 0; c < w.transform.basis.cols(); ++c)
      std::cout << (c ? ", " : "") << format_double(w.transform.basis(r, c));
    std::cout << (r + 1 == w.transform.basis.rows() ? "]\n" : "\n");
  }
  std::cout << "wrote " << n << " samples to " << cfg.out_dir.string() << '\n';
  return 0;
}

json report_json(const SeparabilityReport& r) {
  json j;
  j["partition"] = r.partition.label();
  j["samples"] = r.samples;
  j["threshold"] = r.threshold;
  j["max_deviation"] = r.max_deviation;
  j["worst_moment"] = r.table.empty() ? "" : r.table[r.worst_row].label;
  j["verdict"] = to_string(r.verdict);
  json rows = json::array();
  for (const auto& m : r.table)
    rows.push_back({{"moment", m.label}, {"joint", m.joint}, {"product", m.product}, {"deviation", m.deviation}});
  j["table"] = rows;
  return j;
}

int cmd_separate(const PipelineConfig& cfg, const fs::path& input) {
  fs::create_directories(cfg.out_dir);
  Manifest man("separate", cfg);
  man.input(input);
  const SignalSeries series = read_series_csv(input, cfg.sample_rate);
  const Trajectory traj = estimate_velocity(series);
  const SeparationResult res = separate(traj, cfg.separation());

  const fs::path fp = cfg.out_dir / "frames.csv";
  write_frames_csv(fp, res.field);
  man.output(fp);
  std::vector<CoordinateMap> maps;
  json parts = json::array();
  for (const auto& o : res.outcomes) {
    json pj{{"partition", o.partition.label()}};
    if (o.map) {
      const fs::path p = cfg.out_dir / ("map_" + o.partition.file_label() + ".csv");
      write_map_csv(p, *o.map);
      man.output(p);
      maps.push_back(*o.map);
      pj["coverage"] = o.map->coverage();
      pj["ordering_discrepancy"] = o.map->ordering_discrepancy;
    }
    if (o.report) {
      const fs::path jp = cfg.out_dir / ("report_" + o.partition.file_label() + ".json");
      const fs::path cp = cfg.out_dir / ("report_" + o.partition.file_label() + ".csv");
      write_json(jp, report_json(*o.report));
      write_report_csv(cp, *o.report);
      man.output(jp);
      man.output(cp);
      pj["max_deviation"] = o.report->max_deviation;
      pj["verdict"] = to_string(o.report->verdict);
    }
    if (!o.failure.empty()) pj["failure"] = o.failure;
    parts.push_back(pj);
  }
  if (!maps.empty()) {
    const fs::path ip = cfg.out_dir / "isoclines.csv";
    write_isolines_csv(ip, maps, 16);
    man.output(ip);
  }
  if (res.best && res.outcomes[*res.best].series) {
    const auto& o = res.outcomes[*res.best];
    const USeries& us = *o.series;
    std::vector<std::string> header{"index"};
    for (auto& h : numbered("u", us.u.cols())) header.push_back(h);
    for (auto& h : numbered("du", us.u.cols())) header.push_back(h);
    const fs::path up = cfg.out_dir / "u.csv";
    CsvWriter out(up, header);
    for (Eigen::Index i = 0; i < us.size(); ++i) {
      // Trajectory row r is sample r + 1 of the input series.
      out << us.indices[static_cast<std::size_t>(i)] + 1;
      for (Eigen::Index c = 0; c < us.u.cols(); ++c) out << us.u(i, c);
      for (Eigen::Index c = 0; c < us.udot.cols(); ++c) out << us.udot(i, c);
      out.end_row();
    }
    out.close();
    man.output(up);
  }

  json v;
  v["verdict"] = to_string(res.verdict);
  v["incomplete"] = res.incomplete;
  v["threshold"] = cfg.eps_sep;
  v["reference_bin"] = res.field.reference_bin;
  v["components"] = res.field.components;
  v["disconnected"] = res.field.disconnected;
  if (res.best) {
    v["best_partition"] = res.outcomes[*res.best].partition.label();
    v["max_deviation"] = res.outcomes[*res.best].report->max_deviation;
  }
  v["partitions"] = parts;
  const fs::path vp = cfg.out_dir / "verdict.json";
  write_json(vp, v);
  man.output(vp);
  man.write(cfg.out_dir);

  std::cout << "verdict: " << to_string(res.verdict);
  if (res.best)
    std::cout << " (partition " << res.outcomes[*res.best].partition.label()
              << ", max deviation " << format_double(res.outcomes[*res.best].report->max_deviation) << ")";
  std::cout << '\n';
  for (const auto& o : res.outcomes)
    if (!o.failure.empty()) std::cerr << "partition " << o.partition.label() << ": " << o.failure << '\n';
  return res.verdict == Verdict::separable ? kExitSeparable : kExitInseparable;
}

// Columns named stem1..stemN, in order.
Matrix columns_named(const CsvTable& t, const std::string& stem, const std::string& file) {
  std::vector<Vector> cols;
  for (int k = 1;; ++k) {
    const std::string name = stem + std::to_string(k);
    if (std::find(t.header.begin(), t.header.end(), name) == t.header.end()) break;
    cols.push_back(t.values.col(t.column(name)));
  }
  if (cols.empty()) {
    // Fallback: every column except index / t.
    for (const auto& h : t.header)
      if (h != "index" && h != "t") cols.push_back(t.values.col(t.column(h)));
  }
  if (cols.empty()) throw ShapeError(file + ": no data columns");
  Matrix m(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) m.col(static_cast<Eigen::Index>(c)) = cols[c];
  return m;
}

int cmd_eval(const PipelineConfig& cfg, const fs::path& upath, const fs::path& spath) {
  fs::create_directories(cfg.out_dir);
  Manifest man("eval", cfg);
  man.input(upath);
  man.input(spath);
  const CsvTable ut = read_csv(upath);
  const CsvTable st = read_csv(spath);
  const Matrix u = columns_named(ut, "u", upath.string());
  Matrix s = columns_named(st, "s", spath.string());
  if (std::find(ut.header.begin(), ut.header.end(), "index") != ut.header.end()) {
    const Vector idx = ut.values.col(ut.column("index"));
    Matrix picked(idx.size(), s.cols());
    for (Eigen::Index i = 0; i < idx.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(idx(i));
      if (r < 0 || r >= s.rows()) throw ShapeError("eval: index " + std::to_string(r) + " outside " + spath.string());
      picked.row(i) = s.row(r);
    }
    s = std::move(picked);
  }
  if (u.rows() != s.rows() || u.cols() != s.cols())
    throw ShapeError("eval: u is " + std::to_string(u.rows()) + "x" + std::to_string(u.cols()) + ", s is " +
                     std::to_string(s.rows()) + "x" + std::to_string(s.cols()));
  const RecoveryScore sc = evaluate_recovery(u, s);
  json j;
  j["rho"] = matrix_json(sc.rho);
  j["pairing"] = sc.pairing;
  j["matched"] = std::vector<double>(sc.matched.data(), sc.matched.data() + sc.matched.size());
  j["cross_max"] = sc.cross_max;
  j["samples"] = u.rows();
  const fs::path p = cfg.out_dir / "score.json";
  write_json(p, j);
  man.output(p);
  man.write(cfg.out_dir);
  std::cout << "matched |rho|:";
  for (Eigen::Index i = 0; i < sc.matched.size(); ++i) std::cout << ' ' << format_double(sc.matched(i));
  std::cout << "  cross max: " << format_double(sc.cross_max) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"velobss: nonlinear blind source separation from local velocity statistics"};
  app.set_version_flag("--version", std::string(VELOBSS_VERSION));
  app.require_subcommand(1);
  app.fallthrough();

  Overrides ov;
  int bins = 0;
  double eps = 0.0;
  std::uint64_t seed = 0;
  std::string out_dir;
  app.add_option("--config", ov.config, "JSON configuration file")->check(CLI::ExistingFile);
  auto* o_bins = app.add_option("--bins", bins, "bins per dimension");
  auto* o_eps = app.add_option("--eps-sep", eps, "factorization threshold");
  auto* o_seed = app.add_option("--seed", seed, "source seed");
  auto* o_out = app.add_option("--out-dir", out_dir, "output directory");

  auto* synth = app.add_subcommand("synth", "generate sources, mix and whiten");
  std::string input;
  auto* sep = app.add_subcommand("separate", "separate a whitened series");
  sep->add_option("input", input, "T x N CSV (optional t column)")->required();
  std::string upath, spath;
  auto* ev = app.add_subcommand("eval", "score recovered components against sources");
  ev->add_option("u", upath, "recovered components CSV")->required();
  ev->add_option("s", spath, "true sources CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitError;
  }

  try {
    if (*o_bins) ov.bins = bins;
    if (*o_eps) ov.eps_sep = eps;
    if (*o_seed) ov.seed = seed;
    if (*o_out) ov.out_dir = out_dir;
    const PipelineConfig cfg = resolve(ov);
    if (*synth) return cmd_synth(cfg);
    if (*sep) return cmd_separate(cfg, input);
    if (*ev) return cmd_eval(cfg, upath, spath);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
