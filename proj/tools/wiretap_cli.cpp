// wiretap_cli: sweeps, single attacks, gradient checks, IQA calibration and
// a small demo. Exit codes: 0 ok, 1 runtime failure, 2 usage or config.

#include "wiretap/gradcheck.hpp"
#include "wiretap/harness.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace wiretap;
namespace fs = std::filesystem;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
}

int cmd_sweep(const std::string& config, const std::string& out, const std::string& agg, bool fresh, int workers) {
  ExperimentConfig cfg = load_config(config);
  if (workers > 0) cfg.workers = workers;
  SweepOptions opt;
  opt.rows_path = out;
  opt.aggregate_path = agg;
  opt.resume = !fresh;
  const auto s = sweep(cfg, opt);
  std::cerr << "sweep: " << s.executed << " trials run, " << s.skipped << " skipped (already in " << out << ")\n";
  for (const auto& c : s.cells)
    std::cout << c.method << " snr=" << format_double(c.snr_db) << " success=" << c.successes << "/" << c.count
              << " cosine=" << format_double(c.mean_cosine) << "\n";
  return 0;
}

int cmd_attack(const std::string& config, const std::string& image, const std::string& method, double snr, int trial,
               const std::string& out, const std::string& audit) {
  const ExperimentConfig cfg = load_config(config);
  const MethodId m = method_from_string(method);
  const Image src = read_image(image);
  auto enc = std::make_shared<const Encoder>(cfg.encoder_config());
  const TrialSetup t = make_trial(cfg, *enc, snr, trial, &src);
  const MethodRun run = run_method(m, cfg, enc, t, EvalConfig{});
  if (!run.estimate.empty()) write_image(run.estimate, out);
  json log = run.attack ? audit_log_json(*run.attack) : json::object();
  log["report"] = {{"header", csv_header()}, {"row", to_csv_row(run.report)}};
  write_text(audit, log.dump(2) + "\n");
  std::cout << csv_header() << "\n" << to_csv_row(run.report) << "\n";
  if (run.report.status != "ok") {
    std::cerr << "attack failed: " << run.report.reason << "\n";
    return 1;
  }
  return 0;
}

int cmd_gradcheck(const std::string& config, int seeds, double tol) {
  // The config is validated so a broken file still fails here; the check
  // itself runs on tiny instances of both encoder kinds.
  if (!config.empty()) (void)load_config(config);
  int bad = 0;
  for (EncoderKind kind : {EncoderKind::Linear, EncoderKind::Mlp}) {
    double worst = 0.0;
    for (int k = 0; k < seeds; ++k) {
      const auto r = gradcheck(make_gradcheck_instance(kind, 1000 + static_cast<std::uint64_t>(k)));
      worst = std::max({worst, r.rel_err_x, r.rel_err_g});
      if (!(r.rel_err_x < tol && r.rel_err_g < tol)) ++bad;
    }
    std::cout << to_string(kind) << ": worst relative error " << worst << " over " << seeds << " instances\n";
  }
  std::cout << (bad == 0 ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return bad == 0 ? 0 : 1;
}

int cmd_calibrate(const std::string& config, std::uint64_t seed, int count) {
  int h = 16, w = 16;
  if (!config.empty()) {
    const auto cfg = load_config(config);
    h = cfg.height;
    w = cfg.width;
  }
  const IqaCalibration c = calibrate_iqa(seed, count, h, w);
  json out{{"sharp_log_lo", c.sharp_log_lo}, {"sharp_log_hi", c.sharp_log_hi}, {"tv_band_lo", c.tv_band_lo}, {"tv_band_hi", c.tv_band_hi}};
  std::cout << json{{"perception", {{"iqa_calibration", out}}}}.dump(2) << "\n";
  return 0;
}

int cmd_demo(const std::string& dir) {
  const ExperimentConfig cfg = demo_config();
  fs::create_directories(dir);
  SweepOptions opt;
  opt.rows_path = (fs::path(dir) / "rows.csv").string();
  opt.aggregate_path = (fs::path(dir) / "aggregate.csv").string();
  opt.resume = false;
  sweep(cfg, opt);
  // One agentic attack with its reconstruction and audit log.
  auto enc = std::make_shared<const Encoder>(cfg.encoder_config());
  const TrialSetup t = make_trial(cfg, *enc, cfg.snr_db.back(), 0);
  const MethodRun run = run_method(MethodId::Agentic, cfg, enc, t, EvalConfig{});
  write_image(t.source, (fs::path(dir) / "source.ppm").string());
  if (!run.estimate.empty()) write_image(run.estimate, (fs::path(dir) / "reconstruction.ppm").string());
  write_text((fs::path(dir) / "audit.json").string(), audit_log_json(*run.attack).dump(2) + "\n");
  std::cout << "demo outputs in " << dir << ": rows.csv aggregate.csv source.ppm reconstruction.ppm audit.json\n";
  std::cout << "agentic @ " << format_double(t.snr_db) << " dB: cosine " << format_double(run.report.cosine) << ", psnr "
            << format_double(run.report.psnr) << "\n";
  return run.report.status == "ok" ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agentic eavesdropping simulator for JSCC over MIMO wiretap channels"};
  app.require_subcommand(1);

  std::string config, out, agg, image, method = "agentic", audit = "audit.json", demo_dir = "wiretap_demo";
  bool fresh = false;
  int workers = 0, trial = 0, seeds = 20, count = 200;
  double snr = 20.0, tol = 1e-5;
  std::uint64_t cal_seed = 0xca11b8;

  auto* sw = app.add_subcommand("sweep", "Run the full factorial experiment");
  sw->add_option("config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sw->add_option("-o,--out", out, "Row CSV path")->required();
  sw->add_option("--aggregate", agg, "Aggregate CSV path (default: <out>.agg.csv)");
  sw->add_flag("--fresh", fresh, "Ignore and overwrite an existing row file");
  sw->add_option("-j,--workers", workers, "Worker threads (overrides config)")->check(CLI::Range(1, 256));

  auto* at = app.add_subcommand("attack", "Attack a single image");
  at->add_option("config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  at->add_option("--image", image, "Source image (binary PPM)")->required()->check(CLI::ExistingFile);
  at->add_option("--method", method, "Method id");
  at->add_option("--snr", snr, "SNR in dB");
  at->add_option("--trial", trial, "Trial index (seeds the channel)")->check(CLI::NonNegativeNumber);
  at->add_option("-o,--out", out, "Reconstruction PPM path")->required();
  at->add_option("--audit", audit, "Audit log path (JSON)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  gc->add_option("config", config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  gc->add_option("--seeds", seeds, "Instances per encoder kind")->check(CLI::Range(1, 10000));
  gc->add_option("--tol", tol, "Relative error tolerance");

  auto* ca = app.add_subcommand("calibrate", "Regenerate IQA calibration bounds");
  ca->add_option("config", config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  ca->add_option("--seed", cal_seed, "Calibration seed");
  ca->add_option("--count", count, "Images per class")->check(CLI::Range(20, 100000));

  auto* de = app.add_subcommand("demo", "Tiny built-in experiment with sample outputs");
  de->add_option("-o,--out", demo_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*sw) return cmd_sweep(config, out, agg, fresh, workers);
    if (*at) return cmd_attack(config, image, method, snr, trial, out, audit);
    if (*gc) return cmd_gradcheck(config, seeds, tol);
    if (*ca) return cmd_calibrate(config, cal_seed, count);
    if (*de) return cmd_demo(demo_dir);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
