// crl: config-driven experiments over causal softmax attention statistics.
//
// Subcommands:
//   crl run <config.toml> [--out DIR] [--workers N] [--seed S]
//   crl fit-slope <csv> --x <col> --y <col>
//   crl plot <csv> --x <col> --y <col> [--loglog | --logx --logy] [--out FILE]
//
// Exit codes: 0 success, 2 config error, 3 acceptance-threshold failure,
// 4 I/O error.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crl/experiments.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir, int workers,
            long long seed, bool seed_set) {
  crl::RunOptions options;
  if (!out_dir.empty()) options.out_dir = out_dir;
  if (seed_set) options.seed = static_cast<std::uint64_t>(seed);
  options.workers = workers;
  crl::RunResult result = crl::run_experiment_file(config_path, options);
  std::printf("wrote %s/{results.csv,summary.json,plot.svg}\n", result.out_dir.c_str());
  for (const auto& claim : result.summary["claims"]) {
    std::printf("%s %s (value %.6g, threshold %s)\n",
                claim["pass"].get<bool>() ? "PASS" : "FAIL",
                claim["name"].get<std::string>().c_str(), claim["value"].get<double>(),
                claim["threshold"].get<std::string>().c_str());
  }
  return result.exit_code;
}

int cmd_fit_slope(const std::string& csv_path, const std::string& x_col,
                  const std::string& y_col) {
  crl::CsvTable table = crl::read_csv(csv_path);
  std::size_t xi = table.column(x_col);
  std::size_t yi = table.column(y_col);
  std::vector<std::pair<double, double>> points;
  points.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    points.emplace_back(table.number(r, xi), table.number(r, yi));
  crl::SlopeFit fit = crl::fit_slope(points);
  std::printf("slope=%s intercept=%s r2=%s points=%zu\n", crl::format_g17(fit.slope).c_str(),
              crl::format_g17(fit.intercept).c_str(), crl::format_g17(fit.r2).c_str(),
              fit.points);
  return 0;
}

int cmd_plot(const std::string& csv_path, const std::string& x_col, const std::string& y_col,
             bool loglog, bool logx, bool logy, std::string out_path) {
  if (out_path.empty())
    out_path = std::filesystem::path(csv_path).replace_extension(".svg").string();
  crl::emit_svg(csv_path, x_col, y_col, loglog || logx, loglog || logy, out_path);
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"covariance-readout laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  int workers = 0;
  long long seed = 0;
  auto* run = app.add_subcommand("run", "run an experiment from a config file");
  run->add_option("config", config_path, "TOML config file")->required();
  run->add_option("--out", out_dir, "output directory (overrides the config)");
  run->add_option("--workers", workers, "worker threads (default: available parallelism)");
  auto* seed_opt = run->add_option("--seed", seed, "master seed override");

  std::string fs_csv, fs_x, fs_y;
  auto* fit = app.add_subcommand("fit-slope", "least-squares slope in log-log coordinates");
  fit->add_option("csv", fs_csv, "input CSV")->required();
  fit->add_option("--x", fs_x, "abscissa column")->required();
  fit->add_option("--y", fs_y, "ordinate column")->required();

  std::string pl_csv, pl_x, pl_y, pl_out;
  bool loglog = false, logx = false, logy = false;
  auto* plot = app.add_subcommand("plot", "render two CSV columns as an SVG polyline");
  plot->add_option("csv", pl_csv, "input CSV")->required();
  plot->add_option("--x", pl_x, "abscissa column")->required();
  plot->add_option("--y", pl_y, "ordinate column")->required();
  plot->add_flag("--loglog", loglog, "log scale on both axes");
  plot->add_flag("--logx", logx, "log scale on x");
  plot->add_flag("--logy", logy, "log scale on y");
  plot->add_option("--out", pl_out, "output SVG path (default: csv path with .svg)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(config_path, out_dir, workers, seed, seed_opt->count() > 0);
    if (fit->parsed()) return cmd_fit_slope(fs_csv, fs_x, fs_y);
    if (plot->parsed()) return cmd_plot(pl_csv, pl_x, pl_y, loglog, logx, logy, pl_out);
  } catch (const crl::ConfigParse& e) {
    std::fprintf(stderr, "config parse error: %s\n", e.what());
    return 2;
  } catch (const crl::ConfigInvalid& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const crl::IoFailure& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
